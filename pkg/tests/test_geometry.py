import math

import numpy as np
import pytest

import oracles
from volnorm import (
    BrainMask,
    GridSpec,
    ValidationError,
    VolumetricImage,
    build_grid,
    build_mask,
    gaussian_smooth,
)


def cube_image(n, value=0.0, voxel=1.0):
    return VolumetricImage(
        (n, n, n), (voxel, voxel, voxel), np.full(n * n * n, float(value))
    )


def sphere_template(n, radius, center=None):
    img = cube_image(n)
    center = center or ((n - 1) / 2.0,) * 3
    idx = np.indices((n, n, n)).reshape(3, -1).T
    d2 = ((idx - np.asarray(center)) ** 2).sum(axis=1)
    data = (d2 <= radius**2).astype(float)
    return VolumetricImage(img.dims, img.voxel_size, data)


class TestVolumetricImage:
    def test_invariants(self):
        with pytest.raises(ValidationError):
            VolumetricImage((2, 2, 2), (1, 1, 1), np.zeros(7))
        with pytest.raises(ValidationError):
            VolumetricImage((0, 2, 2), (1, 1, 1), np.zeros(0))
        with pytest.raises(ValidationError):
            VolumetricImage((2, 2, 2), (1, -1, 1), np.zeros(8))

    def test_x_fastest_layout(self):
        data = np.arange(24, dtype=float)
        img = VolumetricImage((2, 3, 4), (1, 1, 1), data)
        vol = img.as3d()
        # linear index = ix + nx*(iy + ny*iz)
        assert vol[1, 2, 3] == 1 + 2 * (2 + 3 * 3)
        assert vol[0, 0, 0] == 0.0

    def test_data_read_only(self):
        img = cube_image(3, 1.0)
        with pytest.raises(ValueError):
            img.data[0] = 7.0


class TestGaussianSmooth:
    def test_constant_preserved(self):
        img = cube_image(12, 3.25)
        out = gaussian_smooth(img, 2.0)
        np.testing.assert_allclose(out.data, 3.25, rtol=0, atol=1e-12)

    def test_impulse_center_value(self):
        n = 21
        data = np.zeros(n**3)
        center = 10 + n * (10 + n * 10)
        data[center] = 1.0
        img = VolumetricImage((n, n, n), (1, 1, 1), data)
        out = gaussian_smooth(img, 2.0)
        # center value equals the product of the three axis weights at 0
        offsets = np.arange(-8, 9)
        w = np.exp(-0.5 * (offsets / 2.0) ** 2)
        w /= w.sum()
        assert out.data[center] == pytest.approx(w[8] ** 3, rel=1e-12)

    def test_axis_permutation_symmetry(self):
        rng = np.random.default_rng(5)
        base = rng.normal(size=(9, 9, 9))
        sym = base + base.transpose(1, 0, 2)  # symmetric in x<->y
        img = VolumetricImage((9, 9, 9), (1, 1, 1), sym.ravel(order="F"))
        out = gaussian_smooth(img, 1.3).as3d()
        np.testing.assert_allclose(out, out.transpose(1, 0, 2), rtol=0, atol=1e-13)

    def test_matches_fft_oracle(self):
        rng = np.random.default_rng(11)
        vol = rng.normal(size=(10, 11, 12))
        img = VolumetricImage((10, 11, 12), (1, 1, 1), vol.ravel(order="F"))
        out = gaussian_smooth(img, 1.5).as3d()
        expected = oracles.smooth_fft(vol, 1.5)
        np.testing.assert_allclose(out, expected, rtol=0, atol=1e-10)

    def test_bad_sd(self):
        with pytest.raises(ValidationError):
            gaussian_smooth(cube_image(4), 0.0)


class TestBuildMask:
    def test_all_ones_full_mask(self):
        mask = build_mask(cube_image(10, 1.0))
        assert mask.count == 1000

    def test_all_zeros_empty(self):
        with pytest.raises(ValidationError):
            build_mask(cube_image(10, 0.0))

    def test_non_binary_rejected(self):
        with pytest.raises(ValidationError):
            build_mask(cube_image(4, 0.5))

    def test_sphere_count_bracketed(self):
        template = sphere_template(41, 10.0)
        mask = build_mask(template, sd_voxels=2.0, threshold=0.5)
        # smoothing at sd=2 moves the 0.5 level set by well under one voxel,
        # so the count must land between the radius-9 and radius-11 volumes
        lo = 4.0 / 3.0 * math.pi * 9**3
        hi = 4.0 / 3.0 * math.pi * 11**3
        assert lo < mask.count < hi

    def test_sphere_matches_fft_oracle(self):
        template = sphere_template(25, 7.0)
        mask = build_mask(template, sd_voxels=2.0, threshold=0.5)
        smoothed = oracles.smooth_fft(template.as3d(), 2.0)
        expected = (smoothed > 0.5).ravel(order="F")
        np.testing.assert_array_equal(mask.flags, expected)


class TestBuildGrid:
    def test_degenerate_spacing_selects_all(self):
        mask = build_mask(cube_image(6, 1.0))
        grid = build_grid(mask, 1.0, offset_voxels=0.0)
        assert grid.count == mask.count
        np.testing.assert_array_equal(grid.centers, mask.voxel_indices())

    def test_cube_lattice_count(self):
        mask = build_mask(cube_image(16, 1.0))
        grid = build_grid(mask, 8.0, offset_voxels=0.0)
        assert grid.count == 8
        coords = grid.center_coords_mm()
        assert set(map(tuple, coords)) == {
            (x, y, z) for x in (0.0, 8.0) for y in (0.0, 8.0) for z in (0.0, 8.0)
        }

    def test_default_offset_is_half_spacing(self):
        mask = build_mask(cube_image(16, 1.0))
        grid = build_grid(mask, 8.0)
        assert grid.offset_voxels == (4.0, 4.0, 4.0)
        xs = {tuple(c) for c in grid.center_coords_mm()}
        assert xs == {(x, y, z) for x in (4.0, 12.0) for y in (4.0, 12.0) for z in (4.0, 12.0)}

    def test_sphere_count_matches_enumeration_oracle(self):
        template = sphere_template(41, 10.0)
        mask = build_mask(template, sd_voxels=2.0, threshold=0.5)
        grid = build_grid(mask, 4.0, offset_voxels=2.0)
        expected = oracles.lattice_in_mask(
            mask.flags.reshape(mask.dims, order="F"), 4.0, 2.0
        )
        assert grid.count == expected

    def test_every_center_in_mask_no_duplicates(self):
        template = sphere_template(21, 8.0)
        mask = build_mask(template)
        grid = build_grid(mask, 3.0)
        assert np.all(mask.flags[grid.centers])
        assert len(np.unique(grid.centers)) == grid.count

    def test_deterministic(self):
        template = sphere_template(21, 8.0)
        mask = build_mask(template)
        a = build_grid(mask, 3.0)
        b = build_grid(mask, 3.0)
        np.testing.assert_array_equal(a.centers, b.centers)

    def test_subvoxel_spacing_rejected(self):
        mask = build_mask(cube_image(8, 1.0))
        with pytest.raises(ValidationError):
            build_grid(mask, 0.5)

    def test_no_center_in_mask(self):
        # single-voxel mask that the lattice misses
        data = np.zeros(6 * 6 * 6)
        data[0] = 1.0
        mask = BrainMask((6, 6, 6), (1, 1, 1), data > 0)
        with pytest.raises(ValidationError):
            build_grid(mask, 4.0, offset_voxels=3.0)

    def test_rounding_ties_toward_lower_index(self):
        mask = build_mask(cube_image(8, 1.0))
        # positions 2.5, 5.5 must round to 2 and 5
        grid = build_grid(mask, 3.0, offset_voxels=2.5)
        xs = sorted({int(c[0]) for c in grid.center_coords_mm()})
        assert xs == [2, 5]


class TestGridSpec:
    def test_ordering_enforced(self):
        with pytest.raises(ValidationError):
            GridSpec(
                dims=(4, 4, 4),
                voxel_size=(1, 1, 1),
                spacing_mm=(2, 2, 2),
                offset_voxels=(0, 0, 0),
                centers=np.array([5, 3]),
            )
