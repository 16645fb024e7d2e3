import numpy as np
import pytest

from volnorm import (
    FieldSpec,
    SphericalRegion,
    SyntheticSpec,
    build_grid,
    fit_grid,
    generate_cohort,
)


def small_bump():
    # Sits on the 4 mm grid lattice (offset 2) of the 24^3 volume.
    return SphericalRegion(center_mm=(10.0, 10.0, 10.0), radius_mm=3.0)


@pytest.fixture(scope="session")
def small_cohort():
    """Desk-scale cohort shared by pipeline-level tests: 24^3, 60 subjects."""
    spec = SyntheticSpec(
        dims=(24, 24, 24),
        mask_center_mm=(12.0, 12.0, 12.0),
        mask_radius_mm=9.0,
        bump=small_bump(),
        n_subjects=60,
        seed=123,
    )
    return generate_cohort(spec)


@pytest.fixture(scope="session")
def small_grid(small_cohort):
    return build_grid(small_cohort.mask, 4.0)


@pytest.fixture(scope="session")
def small_model(small_cohort, small_grid):
    return fit_grid(small_cohort.images, small_cohort.covariates, small_grid, seed=123)


def eight_center_spec(n=500, seed=7, n_diseased=0):
    """16^3 cohort whose 4 mm grid has ~8 centers; cheap at n=500."""
    return SyntheticSpec(
        dims=(16, 16, 16),
        mask_center_mm=(8.0, 8.0, 8.0),
        mask_radius_mm=6.0,
        bump=SphericalRegion(center_mm=(6.0, 6.0, 6.0), radius_mm=2.5),
        beta0=FieldSpec(100.0, 12.0),
        sigma=FieldSpec(5.0, 5.0),
        n_subjects=n,
        n_diseased=n_diseased,
        seed=seed,
    )


@pytest.fixture(scope="session")
def recovery_cohort():
    return generate_cohort(eight_center_spec())


@pytest.fixture(scope="session")
def recovery_grid(recovery_cohort):
    return build_grid(recovery_cohort.mask, 4.0)


@pytest.fixture(scope="session")
def recovery_model(recovery_cohort, recovery_grid):
    return fit_grid(recovery_cohort.images, recovery_cohort.covariates, recovery_grid)
