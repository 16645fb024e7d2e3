"""Gaussian radial basis function interpolation of grid-sampled fields.

A field sampled at scattered centers is extended to arbitrary points as

    s(v) = b0 + sum_l b_l * h(d(v, center_l)),   h(d) = exp(-d^2 / (2 eps^2)),

where the weights solve the augmented symmetric system that pins the
interpolation values at the centers and constrains the weight sum. The
homogeneous constraint (sum-to-zero) is the default: it makes constant
fields reproduce exactly and gives a sensible far-field limit b0. The
inhomogeneous sum-to-one variant is selectable for compatibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import ConditioningError, GeometryError, ValidationError
from .geometry import BrainMask, GridSpec, VolumetricImage, coords_mm

__all__ = [
    "MODE_SUM_TO_ZERO",
    "MODE_SUM_TO_ONE",
    "RbfInterpolator",
    "rbf_kernel",
    "rbf_fit",
    "rbf_predict",
    "interpolate_field",
]

MODE_SUM_TO_ZERO = "sum-to-zero"
MODE_SUM_TO_ONE = "sum-to-one"
_MODES = {MODE_SUM_TO_ZERO: 0.0, MODE_SUM_TO_ONE: 1.0}

# Relative reciprocal-condition floor below which the augmented system is
# treated as numerically singular.
_RCOND_FLOOR = 1e-14

_PREDICT_CHUNK = 131072


def rbf_kernel(d, bandwidth: float):
    """Gaussian kernel exp(-d^2 / (2 bandwidth^2)); equals 1 at distance 0."""
    if not bandwidth > 0.0:
        raise ValidationError(f"bandwidth must be positive, got {bandwidth}")
    d = np.asarray(d, dtype=float)
    out = np.exp(-(d * d) / (2.0 * bandwidth * bandwidth))
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class RbfInterpolator:
    """Fitted interpolant: centers (mm), weights, constant term, bandwidth."""

    centers: np.ndarray
    weights: np.ndarray
    constant: float
    bandwidth: float
    mode: str

    def __post_init__(self):
        centers = np.ascontiguousarray(self.centers, dtype=float)
        weights = np.ascontiguousarray(self.weights, dtype=float)
        if centers.ndim != 2 or centers.shape[1] != 3:
            raise ValidationError("centers must have shape (n, 3)")
        if weights.shape != (centers.shape[0],):
            raise ValidationError("one weight per center required")
        if self.mode not in _MODES:
            raise ValidationError(f"unknown constraint mode {self.mode!r}")
        if not self.bandwidth > 0.0:
            raise ValidationError(f"bandwidth must be positive, got {self.bandwidth}")
        target = _MODES[self.mode]
        slack = abs(float(weights.sum()) - target)
        if slack > 1e-10 * max(1.0, float(np.abs(weights).sum())):
            raise ValidationError(
                f"weights violate the {self.mode} constraint by {slack:.3g}"
            )
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (
        (a * a).sum(axis=1)[:, None]
        + (b * b).sum(axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def rbf_fit(centers, values, bandwidth: float, mode: str = MODE_SUM_TO_ZERO) -> RbfInterpolator:
    """Solve for the interpolant through (centers, values).

    The augmented symmetric indefinite system is factorized directly; a
    reciprocal-condition estimate guards against duplicate centers or a
    pathologically large bandwidth, raising ConditioningError with the
    estimated condition number.
    """
    centers = np.ascontiguousarray(centers, dtype=float)
    values = np.ascontiguousarray(values, dtype=float)
    if centers.ndim != 2 or centers.shape[1] != 3:
        raise ValidationError("centers must have shape (n, 3)")
    n = centers.shape[0]
    if n < 2:
        raise ValidationError(f"at least 2 centers required, got {n}")
    if values.shape != (n,):
        raise ValidationError("one value per center required")
    if mode not in _MODES:
        raise ValidationError(f"unknown constraint mode {mode!r}")
    if not bandwidth > 0.0:
        raise ValidationError(f"bandwidth must be positive, got {bandwidth}")

    kernel = rbf_kernel(np.sqrt(_pairwise_sq_dists(centers, centers)), bandwidth)
    system = np.zeros((n + 1, n + 1), dtype=float)
    system[:n, :n] = kernel
    system[:n, n] = 1.0
    system[n, :n] = 1.0
    rhs = np.concatenate([values, [_MODES[mode]]])

    anorm = np.linalg.norm(system, 1)
    ldu, ipiv, info = lapack.dsytrf(system, lower=0)
    if info > 0:
        raise ConditioningError(
            "augmented interpolation system is singular "
            "(duplicate centers or degenerate bandwidth)",
            cond_estimate=float("inf"),
        )
    if info < 0:
        raise ValueError(f"dsytrf failed on argument {-info}")
    rcond, _ = lapack.dsycon(ldu, ipiv, anorm, lower=0)
    if not np.isfinite(rcond) or rcond < _RCOND_FLOOR:
        cond = float("inf") if rcond <= 0.0 else 1.0 / float(rcond)
        raise ConditioningError(
            f"augmented interpolation system is too ill-conditioned "
            f"(estimated condition number {cond:.3g})",
            cond_estimate=cond,
        )
    solution, info = lapack.dsytrs(ldu, ipiv, rhs, lower=0)
    if info != 0:
        raise ValueError(f"dsytrs failed on argument {-info}")

    weights, constant = solution[:n], float(solution[n])
    fitted = kernel @ weights + constant
    scale = max(1.0, float(np.max(np.abs(values))))
    worst = float(np.max(np.abs(fitted - values)))
    if worst > 1e-8 * scale:
        raise ConditioningError(
            f"interpolation constraints violated by {worst:.3g} "
            f"(estimated condition number {1.0 / float(rcond):.3g})",
            cond_estimate=1.0 / float(rcond),
        )
    return RbfInterpolator(
        centers=centers,
        weights=weights,
        constant=constant,
        bandwidth=float(bandwidth),
        mode=mode,
    )


def rbf_predict(interp: RbfInterpolator, points) -> np.ndarray:
    """Evaluate the interpolant at (m, 3) physical coordinates."""
    points = np.ascontiguousarray(points, dtype=float)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    if points.shape[1] != 3:
        raise ValidationError("points must have shape (m, 3)")
    out = np.empty(points.shape[0], dtype=float)
    inv = 1.0 / (2.0 * interp.bandwidth * interp.bandwidth)
    for start in range(0, points.shape[0], _PREDICT_CHUNK):
        block = points[start : start + _PREDICT_CHUNK]
        d2 = _pairwise_sq_dists(block, interp.centers)
        out[start : start + _PREDICT_CHUNK] = (
            np.exp(-d2 * inv) @ interp.weights + interp.constant
        )
    return out[0] if single else out


def interpolate_field(
    grid: GridSpec,
    values,
    mask: BrainMask,
    bandwidth: float,
    mode: str = MODE_SUM_TO_ZERO,
) -> VolumetricImage:
    """Extend per-center values to every mask voxel; zero outside the mask."""
    values = np.ascontiguousarray(values, dtype=float)
    if values.shape != (grid.count,):
        raise ValidationError(
            f"expected {grid.count} values (one per grid center), got {values.shape}"
        )
    if grid.dims != mask.dims:
        raise GeometryError(f"grid dims {grid.dims} do not match mask dims {mask.dims}")
    interp = rbf_fit(grid.center_coords_mm(), values, bandwidth, mode)
    inside = mask.voxel_indices()
    field = np.zeros(mask.flags.size, dtype=float)
    field[inside] = rbf_predict(interp, coords_mm(inside, mask.dims, mask.voxel_size))
    return VolumetricImage(mask.dims, mask.voxel_size, field)
