"""Volumetric geometry: image/mask containers, smoothing, and grid selection.

Volumes are stored as flat float64 arrays in x-fastest order: the voxel at
integer index (ix, iy, iz) lives at linear index ix + nx*(iy + ny*iz).
Physical coordinates place voxel (ix, iy, iz) at (ix*sx, iy*sy, iz*sz) mm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import GeometryError, ValidationError

__all__ = [
    "VolumetricImage",
    "BrainMask",
    "GridSpec",
    "gaussian_smooth",
    "build_mask",
    "build_grid",
]


def _check_geometry(dims, voxel_size):
    if len(dims) != 3 or len(voxel_size) != 3:
        raise ValidationError("dims and voxel_size must have three components")
    if any(int(d) < 1 for d in dims):
        raise ValidationError(f"all dims must be >= 1, got {tuple(dims)}")
    if any(not (s > 0.0 and math.isfinite(s)) for s in voxel_size):
        raise ValidationError(f"voxel sizes must be positive, got {tuple(voxel_size)}")


def _locked(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True, eq=False)
class VolumetricImage:
    """A 3D scalar field with geometry metadata.

    `data` is one float per voxel, x-fastest. The array is exposed through a
    read-only view; construct a new image rather than mutating in place.
    """

    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    data: np.ndarray

    def __post_init__(self):
        _check_geometry(self.dims, self.voxel_size)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "voxel_size", tuple(float(s) for s in self.voxel_size))
        arr = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        n = self.dims[0] * self.dims[1] * self.dims[2]
        if arr.size != n:
            raise ValidationError(
                f"data has {arr.size} values but dims {self.dims} imply {n}"
            )
        object.__setattr__(self, "data", _locked(arr))

    @property
    def voxel_count(self) -> int:
        return self.data.size

    def as3d(self) -> np.ndarray:
        """View shaped (nx, ny, nz), indexable as [ix, iy, iz]."""
        return self.data.reshape(self.dims, order="F")

    def with_data(self, data: np.ndarray) -> "VolumetricImage":
        """New image sharing this geometry."""
        return VolumetricImage(self.dims, self.voxel_size, data)

    def same_geometry(self, other) -> bool:
        return self.dims == other.dims and np.allclose(
            self.voxel_size, other.voxel_size, rtol=0.0, atol=1e-12
        )


@dataclass(frozen=True, eq=False)
class BrainMask:
    """Boolean voxel selection sharing the geometry conventions of images."""

    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    flags: np.ndarray

    def __post_init__(self):
        _check_geometry(self.dims, self.voxel_size)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "voxel_size", tuple(float(s) for s in self.voxel_size))
        arr = np.ascontiguousarray(self.flags, dtype=bool).reshape(-1)
        n = self.dims[0] * self.dims[1] * self.dims[2]
        if arr.size != n:
            raise ValidationError(
                f"flags has {arr.size} values but dims {self.dims} imply {n}"
            )
        if not arr.any():
            raise ValidationError("mask selects no voxels")
        object.__setattr__(self, "flags", _locked(arr))

    @property
    def count(self) -> int:
        return int(self.flags.sum())

    def voxel_indices(self) -> np.ndarray:
        """Linear indices of selected voxels, ascending."""
        return np.flatnonzero(self.flags)

    def same_geometry(self, other) -> bool:
        return self.dims == other.dims and np.allclose(
            self.voxel_size, other.voxel_size, rtol=0.0, atol=1e-12
        )


def unravel_indices(linear: np.ndarray, dims) -> np.ndarray:
    """(M, 3) integer voxel coordinates for x-fastest linear indices."""
    nx, ny, _ = dims
    linear = np.asarray(linear)
    ix = linear % nx
    iy = (linear // nx) % ny
    iz = linear // (nx * ny)
    return np.stack([ix, iy, iz], axis=-1)


def coords_mm(linear: np.ndarray, dims, voxel_size) -> np.ndarray:
    """(M, 3) physical coordinates for x-fastest linear indices."""
    return unravel_indices(linear, dims).astype(float) * np.asarray(voxel_size, dtype=float)


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Regular lattice of voxel centers inside a mask.

    Centers are linear voxel indices in strictly increasing order.
    """

    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    spacing_mm: tuple[float, float, float]
    offset_voxels: tuple[float, float, float]
    centers: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_geometry(self.dims, self.voxel_size)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "voxel_size", tuple(float(s) for s in self.voxel_size))
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        object.__setattr__(
            self, "offset_voxels", tuple(float(s) for s in self.offset_voxels)
        )
        arr = np.ascontiguousarray(self.centers, dtype=np.int64).reshape(-1)
        if arr.size == 0:
            raise ValidationError("grid has no centers")
        if np.any(np.diff(arr) <= 0):
            raise ValidationError("grid centers must be strictly increasing")
        total = self.dims[0] * self.dims[1] * self.dims[2]
        if arr[0] < 0 or arr[-1] >= total:
            raise ValidationError("grid center index outside the volume")
        object.__setattr__(self, "centers", _locked(arr))

    @property
    def count(self) -> int:
        return self.centers.size

    def center_coords_mm(self) -> np.ndarray:
        return coords_mm(self.centers, self.dims, self.voxel_size)


def _gaussian_kernel(sd: float) -> np.ndarray:
    radius = int(math.ceil(4.0 * sd))
    offsets = np.arange(-radius, radius + 1, dtype=float)
    weights = np.exp(-0.5 * (offsets / sd) ** 2)
    return weights / weights.sum()


def gaussian_smooth(img: VolumetricImage, sd_voxels: float) -> VolumetricImage:
    """Separable Gaussian smoothing with per-position boundary renormalization.

    The 1D kernel is truncated at ceil(4*sd) voxels and normalized to unit
    sum; near the boundary, weights falling outside the volume are dropped and
    the remainder rescaled, so constant images are reproduced exactly.
    """
    if not sd_voxels > 0.0:
        raise ValidationError(f"smoothing sd must be positive, got {sd_voxels}")
    return img.with_data(_smooth_array(img.as3d(), img.dims, sd_voxels).ravel(order="F"))


def _smooth_array(vol3d: np.ndarray, dims, sd_voxels: float) -> np.ndarray:
    kernel = _gaussian_kernel(float(sd_voxels))
    out = np.asarray(vol3d, dtype=np.float64)
    for axis, n in enumerate(dims):
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="constant", cval=0.0)
        coverage = ndimage.correlate1d(
            np.ones(n, dtype=np.float64), kernel, mode="constant", cval=0.0
        )
        shape = [1, 1, 1]
        shape[axis] = n
        out /= coverage.reshape(shape)
    return out


def build_mask(
    template: VolumetricImage, sd_voxels: float = 2.0, threshold: float = 0.5
) -> BrainMask:
    """Smooth a binary template and keep voxels strictly above the threshold."""
    values = template.data
    if not np.all((values == 0.0) | (values == 1.0)):
        raise ValidationError("mask template must be binary (0/1 values only)")
    smoothed = _smooth_array(template.as3d(), template.dims, sd_voxels).ravel(order="F")
    flags = smoothed > threshold
    if not flags.any():
        raise ValidationError(
            f"mask is empty: no smoothed value exceeds threshold {threshold}"
        )
    return BrainMask(template.dims, template.voxel_size, flags)


def _axis_positions(n: int, step: float, offset: float) -> np.ndarray:
    count = int(math.floor((n - 1 - offset) / step)) + 1 if offset <= n - 1 else 0
    positions = offset + step * np.arange(max(count, 0), dtype=float)
    # Round to voxel indices with ties toward the lower index.
    idx = np.ceil(positions - 0.5).astype(np.int64)
    idx = idx[(idx >= 0) & (idx < n)]
    return np.unique(idx)


def build_grid(
    mask: BrainMask,
    spacing_mm,
    offset_voxels=None,
) -> GridSpec:
    """Select a regular lattice of mask voxels.

    `spacing_mm` may be a scalar or per-axis triple and must be at least one
    voxel on every axis. When `offset_voxels` is omitted, the lattice starts
    half a spacing into the volume so centers sit interior to it.
    """
    spacing = np.broadcast_to(np.asarray(spacing_mm, dtype=float), (3,)).copy()
    step_vox = spacing / np.asarray(mask.voxel_size, dtype=float)
    if np.any(step_vox < 1.0 - 1e-9):
        raise ValidationError(
            f"grid spacing {tuple(spacing)} mm is below one voxel on some axis"
        )
    if offset_voxels is None:
        offset = step_vox / 2.0
    else:
        offset = np.broadcast_to(np.asarray(offset_voxels, dtype=float), (3,)).copy()
    nx, ny, nz = mask.dims
    ax = [_axis_positions(n, s, o) for n, s, o in zip(mask.dims, step_vox, offset)]
    if any(a.size == 0 for a in ax):
        raise ValidationError("grid lattice is empty for this spacing/offset")
    gx, gy, gz = np.meshgrid(ax[0], ax[1], ax[2], indexing="ij")
    linear = (gx + nx * (gy + ny * gz)).ravel()
    linear = np.sort(linear[mask.flags[linear]])
    if linear.size == 0:
        raise ValidationError("no grid center falls inside the mask")
    return GridSpec(
        dims=mask.dims,
        voxel_size=mask.voxel_size,
        spacing_mm=tuple(spacing),
        offset_voxels=tuple(offset),
        centers=linear,
    )
