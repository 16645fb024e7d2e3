import numpy as np
import pytest

from volnorm import (
    FieldSpec,
    SphericalRegion,
    SyntheticSpec,
    ValidationError,
    generate_cohort,
)
from volnorm.synthesis import parse_spec_file


def flat_spec(**overrides):
    base = dict(
        dims=(10, 10, 10),
        mask_center_mm=(5.0, 5.0, 5.0),
        mask_radius_mm=4.0,
        bump=SphericalRegion((5.0, 5.0, 5.0), 0.0),
        beta0=FieldSpec(3.0),
        beta_age=FieldSpec(0.0),
        beta_sex=FieldSpec(0.0),
        beta_age_sex=FieldSpec(0.0),
        sigma=FieldSpec(1.0),
        gamma=FieldSpec(0.0),
        n_subjects=1,
        seed=4,
    )
    base.update(overrides)
    return SyntheticSpec(**base)


class TestGenerateCohort:
    def test_white_noise_around_constant(self):
        cohort = generate_cohort(flat_spec())
        values = cohort.images[0].data
        assert values.mean() == pytest.approx(3.0, abs=0.15)
        assert values.std() == pytest.approx(1.0, abs=0.1)

    def test_deterministic_per_seed(self):
        spec = flat_spec(n_subjects=3)
        a = generate_cohort(spec)
        b = generate_cohort(spec)
        for ia, ib in zip(a.images, b.images):
            np.testing.assert_array_equal(ia.data, ib.data)
        assert a.covariates == b.covariates
        c = generate_cohort(flat_spec(n_subjects=3, seed=5))
        assert not np.array_equal(a.images[0].data, c.images[0].data)

    def test_moments_match_fields_at_one_voxel(self):
        spec = flat_spec(
            beta0=FieldSpec(10.0),
            sigma=FieldSpec(2.0),
            gamma=FieldSpec(0.4),
            n_subjects=2000,
            seed=9,
        )
        cohort = generate_cohort(spec)
        voxel = 5 + 10 * (5 + 10 * 5)
        samples = np.array([img.data[voxel] for img in cohort.images])
        z = (samples - samples.mean()) / samples.std()
        assert samples.mean() == pytest.approx(10.0, abs=3 * 2.0 / np.sqrt(2000))
        assert samples.std() == pytest.approx(2.0, abs=0.15)
        assert np.mean(z**3) == pytest.approx(0.4, abs=0.15)

    def test_truth_fields_emitted(self):
        spec = SyntheticSpec(n_subjects=1, seed=1)
        cohort = generate_cohort(spec)
        assert set(cohort.truth) == {
            "beta0",
            "beta_age",
            "beta_sex",
            "beta_age_sex",
            "sigma",
            "gamma",
        }
        inside = 20 + 48 * (20 + 48 * 20)  # bump center voxel
        outside = 36 + 48 * (36 + 48 * 36)
        assert cohort.truth["sigma"].data[inside] == 40.0
        assert cohort.truth["sigma"].data[outside] == 20.0
        assert cohort.truth["gamma"].data[inside] == pytest.approx(0.5)

    def test_diseased_differ_only_inside_region(self):
        healthy = generate_cohort(SyntheticSpec(n_subjects=4, n_diseased=0, seed=2))
        mixed = generate_cohort(SyntheticSpec(n_subjects=4, n_diseased=2, seed=2))
        from volnorm.geometry import coords_mm

        pts = coords_mm(np.arange(48**3), (48, 48, 48), (1, 1, 1))
        region = SyntheticSpec().bump.contains(pts)
        for i in range(4):
            diff = mixed.images[i].data - healthy.images[i].data
            assert np.all(diff[~region] == 0.0)
            if i >= 2:  # diseased block comes last
                expected = 2.0 * healthy.truth["sigma"].data[region]
                np.testing.assert_allclose(diff[region], expected, rtol=0, atol=1e-12)
                assert mixed.covariates[i].group == "AD"
            else:
                assert np.all(diff[region] == 0.0)
                assert mixed.covariates[i].group == "CN"

    def test_covariates_layout(self):
        cohort = generate_cohort(SyntheticSpec(n_subjects=6, seed=3))
        ages = [c.age for c in cohort.covariates]
        assert all(55.0 <= a <= 90.0 for a in ages)
        assert [c.sex for c in cohort.covariates] == [0, 1, 0, 1, 0, 1]
        assert len({c.subject_id for c in cohort.covariates}) == 6

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValidationError):
            flat_spec(gamma=FieldSpec(0.99))
        with pytest.raises(ValidationError):
            flat_spec(sigma=FieldSpec(-1.0))
        with pytest.raises(ValidationError):
            flat_spec(n_subjects=0)
        with pytest.raises(ValidationError):
            SyntheticSpec(n_subjects=5, n_diseased=6)


class TestSpecFile:
    def test_round_trip_keys(self, tmp_path):
        path = tmp_path / "cohort.spec"
        path.write_text(
            "# synthetic cohort\n"
            "n_subjects = 40\n"
            "n_diseased = 10\n"
            "seed = 99\n"
            "dims = 20,20,20\n"
            "mask_center_mm = 10,10,10\n"
            "mask_radius_mm = 8\n"
            "bump_center_mm = 8,8,8\n"
            "bump_radius_mm = 2.5\n"
            "sigma.baseline = 4.0\n"
            "beta_age.bump_amplitude = 1.5\n"
            "disease_shift_sd = 3.0\n"
        )
        spec = parse_spec_file(path)
        assert spec.n_subjects == 40
        assert spec.n_diseased == 10
        assert spec.seed == 99
        assert spec.dims == (20, 20, 20)
        assert spec.bump == SphericalRegion((8.0, 8.0, 8.0), 2.5)
        assert spec.sigma.baseline == 4.0
        assert spec.beta_age.bump_amplitude == 1.5
        assert spec.disease_shift_sd == 3.0
        # untouched defaults survive
        assert spec.beta_sex == SyntheticSpec().beta_sex

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.spec"
        path.write_text("volume = 48\n")
        with pytest.raises(ValidationError):
            parse_spec_file(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "bad.spec"
        path.write_text("seed = soon\n")
        with pytest.raises(ValidationError):
            parse_spec_file(path)
