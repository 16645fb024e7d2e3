import numpy as np
import pytest
from scipy import stats

from volnorm import (
    CovariateRecord,
    DesignInfo,
    DomainError,
    GeometryError,
    GridModel,
    SkewNormalCP,
    SkewNormalDP,
    VolumetricImage,
    VoxelFit,
    ZMap,
    age_effect_map,
    center_z_values,
    cp_to_dp,
    deviation_index,
    parameter_maps,
    predict_mean,
    score_cohort,
    sn_quantile,
    std_normal_cdf,
    subject_zmap,
    summarize_scores,
    voxel_u,
)
from conftest import small_bump


def uniform_model(grid, beta, sigma, gamma, rbf_bandwidth=8.0 / 3.0):
    design = DesignInfo(age_center=70.0, age_min=55.0, age_max=90.0)
    fit = VoxelFit(
        beta=np.asarray(beta, dtype=float),
        sigma=sigma,
        gamma=gamma,
        loglik=0.0,
        converged=True,
        clamped=False,
    )
    return GridModel(
        grid=grid,
        design=design,
        fits=tuple(fit for _ in range(grid.count)),
        n_subjects=60,
        rbf_bandwidth=rbf_bandwidth,
    )


def zmap_of(values, subject_id="s", group="UNKNOWN"):
    values = np.asarray(values, dtype=float)
    n = values.size
    return ZMap(
        subject_id=subject_id,
        dims=(n, 1, 1),
        voxel_size=(1.0, 1.0, 1.0),
        mask_indices=np.arange(n),
        values=values,
        provenance={"covariates": {"group": group}},
    )


class TestVoxelU:
    def test_symmetric_median(self):
        fit = VoxelFit(
            beta=np.array([5.0, 0.1, 1.0, 0.0]),
            sigma=2.0,
            gamma=0.0,
            loglik=0.0,
            converged=True,
            clamped=False,
        )
        design = DesignInfo(age_center=70.0, age_min=55.0, age_max=90.0)
        rec = CovariateRecord("a", 75.0, 1)
        mean = float(design.row(rec) @ fit.beta)
        assert voxel_u(mean, fit, rec, design) == pytest.approx(0.5, abs=1e-12)

    def test_quantile_inverse(self):
        fit = VoxelFit(
            beta=np.array([10.0, 0.0, 0.0, 0.0]),
            sigma=1.5,
            gamma=0.3,
            loglik=0.0,
            converged=True,
            clamped=False,
        )
        design = DesignInfo(age_center=70.0, age_min=55.0, age_max=90.0)
        rec = CovariateRecord("a", 70.0, 0)
        dp = cp_to_dp(SkewNormalCP(10.0, 1.5, 0.3))
        y90 = sn_quantile(0.9, dp)
        assert voxel_u(y90, fit, rec, design) == pytest.approx(0.9, abs=1e-9)

    def test_training_pit_is_uniform(self, recovery_cohort, recovery_grid, recovery_model):
        center = recovery_grid.centers[0]
        fit = recovery_model.fits[0]
        u = np.array(
            [
                voxel_u(img.data[center], fit, rec, recovery_model.design)
                for img, rec in zip(recovery_cohort.images, recovery_cohort.covariates)
            ]
        )
        assert stats.kstest(u, "uniform").statistic < 0.08


class TestSubjectZmap:
    def test_mean_image_gives_zero_z(self, small_grid, small_cohort):
        model = uniform_model(small_grid, [4.0, 0.2, 1.0, 0.0], 2.0, 0.0)
        rec = CovariateRecord("mean-subject", 75.0, 1)
        mean_value = float(model.design.row(rec) @ model.fits[0].beta)
        img = VolumetricImage(
            small_grid.dims, small_grid.voxel_size,
            np.full(np.prod(small_grid.dims), mean_value),
        )
        z = center_z_values(img, rec, model)
        np.testing.assert_allclose(z, 0.0, atol=1e-12)
        zmap = subject_zmap(img, rec, model, small_cohort.mask)
        np.testing.assert_allclose(zmap.values, 0.0, atol=1e-10)

    def test_monotone_in_subject_value(self, small_cohort, small_model):
        img = small_cohort.images[0]
        rec = small_cohort.covariates[0]
        z_before = center_z_values(img, rec, small_model)
        j = 3
        data = img.data.copy()
        data[small_model.grid.centers[j]] += 0.5 * small_model.fits[j].sigma
        z_after = center_z_values(img.with_data(data), rec, small_model)
        assert z_after[j] > z_before[j]
        mask = np.ones(len(z_before), dtype=bool)
        mask[j] = False
        np.testing.assert_array_equal(z_after[mask], z_before[mask])

    def test_transform_consistency(self, small_cohort, small_model):
        img = small_cohort.images[5]
        rec = small_cohort.covariates[5]
        z = center_z_values(img, rec, small_model)
        for j in (0, 7, len(z) - 1):
            u = voxel_u(
                img.data[small_model.grid.centers[j]],
                small_model.fits[j],
                rec,
                small_model.design,
            )
            assert std_normal_cdf(z[j]) == pytest.approx(u, abs=1e-9)

    def test_calibration_on_training_cohort(self, recovery_cohort, recovery_model):
        z_all = np.stack(
            [
                center_z_values(img, rec, recovery_model)
                for img, rec in zip(
                    recovery_cohort.images[:200], recovery_cohort.covariates[:200]
                )
            ]
        )
        pooled = z_all.ravel()
        assert abs(pooled.mean()) < 0.15
        assert 0.85 < pooled.std() < 1.15
        frac = np.mean(np.abs(pooled) > 1.96)
        assert 0.02 <= frac <= 0.08

    def test_added_signal_raises_z_at_covered_centers(self, small_cohort, small_model):
        from volnorm.geometry import coords_mm

        img = small_cohort.images[2]
        rec = small_cohort.covariates[2]
        region = small_bump()
        pts = coords_mm(
            np.arange(img.voxel_count), img.dims, img.voxel_size
        )
        inside = region.contains(pts)
        data = img.data.copy()
        data[inside] += 3.0
        z_before = center_z_values(img, rec, small_model)
        z_after = center_z_values(img.with_data(data), rec, small_model)
        covered = inside[small_model.grid.centers]
        assert covered.any()
        assert np.all(z_after[covered] > z_before[covered])
        np.testing.assert_array_equal(z_after[~covered], z_before[~covered])

    def test_geometry_mismatch(self, small_model, small_cohort):
        bad = VolumetricImage((8, 8, 8), (1, 1, 1), np.zeros(512))
        with pytest.raises(GeometryError):
            subject_zmap(
                bad, CovariateRecord("x", 70.0, 0), small_model, small_cohort.mask
            )

    def test_param_fields_mode_agrees_at_centers(self, small_cohort, small_model):
        img = small_cohort.images[8]
        rec = small_cohort.covariates[8]
        grid_z = subject_zmap(img, rec, small_model, small_cohort.mask, method="grid-z")
        param_z = subject_zmap(
            img, rec, small_model, small_cohort.mask, method="param-fields"
        )
        # parameter fields are exact at the centers, so the two modes agree
        # there; between centers they legitimately differ
        lookup = {int(v): i for i, v in enumerate(grid_z.mask_indices)}
        for j, center in enumerate(small_model.grid.centers):
            k = lookup[int(center)]
            assert param_z.values[k] == pytest.approx(grid_z.values[k], abs=1e-6)

    def test_zmap_volume_round_trip(self, small_cohort, small_model):
        img = small_cohort.images[1]
        rec = small_cohort.covariates[1]
        zmap = subject_zmap(img, rec, small_model, small_cohort.mask)
        vol = zmap.to_volume()
        np.testing.assert_array_equal(vol.data[zmap.mask_indices], zmap.values)
        outside = np.setdiff1d(np.arange(vol.voxel_count), zmap.mask_indices)
        assert np.all(vol.data[outside] == 0.0)


class TestDeviationIndex:
    def test_constant_magnitudes(self):
        for q in (0.0, 0.3, 0.99):
            assert deviation_index(zmap_of([2.0, -2.0, 2.0, -2.0]), q).value == 2.0

    def test_q_zero_is_mean_abs(self):
        z = zmap_of([0.0, -1.0, 2.0, -3.0, 4.0])
        assert deviation_index(z, 0.0).value == pytest.approx(2.0)
        assert deviation_index(z, 0.0).n_tail == 5

    def test_enumerated_tail(self):
        z = zmap_of([0.0, -1.0, 2.0, -3.0, 4.0])
        score = deviation_index(z, 0.6)
        assert score.value == pytest.approx(3.5)
        assert score.n_tail == 2

    def test_nondecreasing_in_q(self):
        rng = np.random.default_rng(3)
        z = zmap_of(rng.normal(size=400))
        qs = np.linspace(0.0, 0.99, 34)
        values = [deviation_index(z, q).value for q in qs]
        assert np.all(np.diff(values) >= 0.0)

    def test_domain(self):
        z = zmap_of([1.0, 2.0])
        with pytest.raises(DomainError):
            deviation_index(z, 1.0)
        with pytest.raises(DomainError):
            deviation_index(z, -0.1)


class TestParameterMaps:
    def test_uniform_model_constant_maps(self, small_grid, small_cohort):
        model = uniform_model(small_grid, [7.0, 0.1, -0.5, 0.02], 3.0, 0.2)
        maps = parameter_maps(model, small_cohort.mask)
        inside = small_cohort.mask.voxel_indices()
        np.testing.assert_allclose(maps["beta0"].data[inside], 7.0, atol=1e-9)
        np.testing.assert_allclose(maps["sigma"].data[inside], 3.0, atol=1e-9)
        np.testing.assert_allclose(maps["gamma"].data[inside], 0.2, atol=1e-9)

    def test_maps_exact_at_centers(self, small_model, small_cohort):
        maps = parameter_maps(small_model, small_cohort.mask)
        centers = small_model.grid.centers
        np.testing.assert_allclose(
            maps["sigma"].data[centers], small_model.sigma_values(), rtol=1e-8
        )
        np.testing.assert_allclose(
            maps["beta0"].data[centers],
            small_model.beta_matrix()[:, 0],
            rtol=1e-8,
        )

    def test_sigma_peak_inside_bump(self, small_model, small_cohort):
        maps = parameter_maps(small_model, small_cohort.mask)
        inside = small_cohort.mask.voxel_indices()
        peak = inside[np.argmax(maps["sigma"].data[inside])]
        from volnorm.geometry import coords_mm

        peak_mm = coords_mm(np.array([peak]), small_model.grid.dims, small_model.grid.voxel_size)[0]
        assert small_bump().contains(peak_mm[None, :])[0]


class TestPredictMean:
    def test_training_mean_age_female_is_beta0_map(self, small_model, small_cohort):
        predicted = predict_mean(
            small_model, small_model.design.age_center, 0, small_cohort.mask
        )
        beta0_map = parameter_maps(small_model, small_cohort.mask)["beta0"]
        np.testing.assert_array_equal(predicted.data, beta0_map.data)

    def test_linearity_in_age(self, small_model, small_cohort):
        for sex in (0, 1):
            p80 = predict_mean(small_model, 80.0, sex, small_cohort.mask)
            p70 = predict_mean(small_model, 70.0, sex, small_cohort.mask)
            effect = age_effect_map(small_model, sex, small_cohort.mask)
            np.testing.assert_allclose(
                p80.data - p70.data, 10.0 * effect.data, rtol=0, atol=1e-10
            )

    def test_recovers_truth_at_centers(self, recovery_cohort, recovery_model):
        mask = recovery_cohort.mask
        age, sex = 72.0, 1
        predicted = predict_mean(recovery_model, age, sex, mask)
        centers = recovery_model.grid.centers
        truth = (
            recovery_cohort.truth["beta0"].data[centers]
            + recovery_cohort.truth["beta_age"].data[centers] * age
            + recovery_cohort.truth["beta_sex"].data[centers] * sex
            + recovery_cohort.truth["beta_age_sex"].data[centers] * age * sex
        )
        sigma = recovery_cohort.truth["sigma"].data[centers]
        assert np.all(np.abs(predicted.data[centers] - truth) < 0.25 * sigma)

    def test_warns_outside_training_support(self, small_model, small_cohort):
        with pytest.warns(UserWarning):
            predict_mean(small_model, 120.0, 0, small_cohort.mask)


class TestAgeEffect:
    def test_zero_interaction_same_effect_both_sexes(self, small_grid, small_cohort):
        model = uniform_model(small_grid, [5.0, 0.3, 1.0, 0.0], 2.0, 0.1)
        female = age_effect_map(model, 0, small_cohort.mask)
        male = age_effect_map(model, 1, small_cohort.mask)
        np.testing.assert_array_equal(female.data, male.data)

    def test_recovers_injected_slope(self, recovery_cohort, recovery_model):
        mask = recovery_cohort.mask
        effect = age_effect_map(recovery_model, 0, mask)
        centers = recovery_model.grid.centers
        truth = recovery_cohort.truth["beta_age"].data[centers]
        assert np.all(np.abs(effect.data[centers] - truth) < 0.3)


class TestScoring:
    def test_single_subject_reduces_to_deviation_index(self):
        z = zmap_of([1.0, -2.0, 0.5], subject_id="k", group="MCI")
        assert score_cohort([z], 0.0) == [deviation_index(z, 0.0)]

    def test_order_invariant(self):
        rng = np.random.default_rng(5)
        zmaps = [zmap_of(rng.normal(size=50), subject_id=f"s{i}") for i in range(6)]
        forward = {s.subject_id: s for s in score_cohort(zmaps, 0.5)}
        backward = {s.subject_id: s for s in score_cohort(zmaps[::-1], 0.5)}
        assert forward == backward

    def test_group_summary(self):
        zs = [
            zmap_of([1.0, 1.0], subject_id="a", group="CN"),
            zmap_of([3.0, 3.0], subject_id="b", group="AD"),
            zmap_of([5.0, 5.0], subject_id="c", group="AD"),
        ]
        summary = summarize_scores(score_cohort(zs, 0.0))
        assert summary["CN"]["n"] == 1
        assert summary["AD"]["n"] == 2
        assert summary["AD"]["mean"] == pytest.approx(4.0)
