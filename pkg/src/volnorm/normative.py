"""Subject-level normative transforms: z-maps, parameter maps, deviation scores.

A subject's image is referenced to the fitted model through the latent
uniform process U = F(y; fitted voxel law) and its normal quantile
z = Phi^-1(U). z-values are computed at the grid centers first and then
carried to the rest of the mask by RBF interpolation; a diagnostic mode that
interpolates the parameter fields instead and transforms every mask voxel
directly is also available (the two differ because the transform is
nonlinear).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GeometryError, ValidationError
from .estimation import CovariateRecord, GridModel, VoxelFit
from .geometry import BrainMask, VolumetricImage, coords_mm
from .interpolation import interpolate_field
from .skewnormal import (
    GAMMA_GUARD,
    cp_to_dp,
    cp_to_dp_arrays,
    owen_t,
    sn_cdf,
    std_normal_cdf,
    std_normal_quantile,
    SkewNormalCP,
)

__all__ = [
    "U_CLIP",
    "ZMap",
    "DeviationScore",
    "voxel_u",
    "center_z_values",
    "subject_zmap",
    "deviation_index",
    "parameter_maps",
    "predict_mean",
    "age_effect_map",
    "score_cohort",
    "summarize_scores",
]

# Latent uniform values are kept strictly inside (0, 1) so extreme subjects
# map to large but finite z-values.
U_CLIP = 1e-15

PARAMETER_FIELDS = ("beta0", "beta_age", "beta_sex", "beta_age_sex", "sigma", "gamma")


@dataclass(frozen=True, eq=False)
class ZMap:
    """Standard-normal deviation field over the mask voxels of one subject."""

    subject_id: str
    dims: tuple[int, int, int]
    voxel_size: tuple[float, float, float]
    mask_indices: np.ndarray
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        idx = np.ascontiguousarray(self.mask_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=float)
        if idx.ndim != 1 or vals.shape != idx.shape:
            raise ValidationError("mask_indices and values must be aligned vectors")
        if idx.size == 0:
            raise ValidationError("z-map covers no voxels")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("z-map values must be finite on the mask")
        object.__setattr__(self, "mask_indices", idx)
        object.__setattr__(self, "values", vals)

    def to_volume(self) -> VolumetricImage:
        """Full volume with zeros outside the mask."""
        out = np.zeros(self.dims[0] * self.dims[1] * self.dims[2])
        out[self.mask_indices] = self.values
        return VolumetricImage(self.dims, self.voxel_size, out)


@dataclass(frozen=True)
class DeviationScore:
    """Scalar tail summary of a z-map: mean |z| at or above its q-quantile."""

    subject_id: str
    q: float
    value: float
    n_tail: int
    group: str = "UNKNOWN"


def voxel_u(y: float, fit: VoxelFit, covariates: CovariateRecord, design) -> float:
    """Latent uniform value of one observation under a fitted voxel law."""
    x = design.row(covariates)
    mu = float(x @ fit.beta)
    u = sn_cdf(float(y), cp_to_dp(SkewNormalCP(mu, fit.sigma, fit.gamma)))
    return float(np.clip(u, U_CLIP, 1.0 - U_CLIP))


def _check_model_geometry(img, model: GridModel):
    if img.dims != model.grid.dims or not np.allclose(
        img.voxel_size, model.grid.voxel_size, rtol=0.0, atol=1e-12
    ):
        raise GeometryError(
            f"image geometry {img.dims}/{img.voxel_size} does not match the "
            f"model grid {model.grid.dims}/{model.grid.voxel_size}"
        )


def center_z_values(
    img: VolumetricImage, covariates: CovariateRecord, model: GridModel
) -> np.ndarray:
    """z-values of a subject at every grid center."""
    _check_model_geometry(img, model)
    x = model.design.row(covariates)
    mus = model.beta_matrix() @ x
    xi, omega, alpha = cp_to_dp_arrays(mus, model.sigma_values(), model.gamma_values())
    z_std = (img.data[model.grid.centers] - xi) / omega
    u = np.clip(
        std_normal_cdf(z_std) - 2.0 * owen_t(z_std, alpha),
        U_CLIP,
        1.0 - U_CLIP,
    )
    return std_normal_quantile(u)


def _interpolate_model_fields(model, mask, bandwidth, mode):
    stacked = np.column_stack(
        [model.beta_matrix(), model.sigma_values(), model.gamma_values()]
    )
    return {
        name: interpolate_field(model.grid, stacked[:, i], mask, bandwidth, mode)
        for i, name in enumerate(PARAMETER_FIELDS)
    }


def subject_zmap(
    img: VolumetricImage,
    covariates: CovariateRecord,
    model: GridModel,
    mask: BrainMask,
    bandwidth: float | None = None,
    mode: str | None = None,
    method: str = "grid-z",
) -> ZMap:
    """Transform a subject image into a z-map over the mask.

    `method="grid-z"` (default) computes z at the grid centers and
    interpolates those; `method="param-fields"` interpolates the parameter
    fields and transforms every mask voxel directly (slower, diagnostic).
    """
    _check_model_geometry(img, model)
    if img.dims != mask.dims:
        raise GeometryError(f"image dims {img.dims} do not match mask {mask.dims}")
    bandwidth = model.rbf_bandwidth if bandwidth is None else bandwidth
    mode = model.rbf_mode if mode is None else mode
    inside = mask.voxel_indices()

    if method == "grid-z":
        z_grid = center_z_values(img, covariates, model)
        fld = interpolate_field(model.grid, z_grid, mask, bandwidth, mode)
        values = fld.data[inside]
    elif method == "param-fields":
        fields = _interpolate_model_fields(model, mask, bandwidth, mode)
        x = model.design.row(covariates)
        mu = (
            fields["beta0"].data[inside] * x[0]
            + fields["beta_age"].data[inside] * x[1]
            + fields["beta_sex"].data[inside] * x[2]
            + fields["beta_age_sex"].data[inside] * x[3]
        )
        # Interpolation can overshoot between centers; pull the fields back
        # into the admissible parameter space before transforming.
        sigma = fields["sigma"].data[inside]
        sigma_floor = 1e-6 * float(np.median(model.sigma_values()))
        sigma = np.maximum(sigma, sigma_floor)
        gamma = np.clip(fields["gamma"].data[inside], -GAMMA_GUARD, GAMMA_GUARD)
        xi, omega, alpha = cp_to_dp_arrays(mu, sigma, gamma)
        z_std = (img.data[inside] - xi) / omega
        u = np.clip(
            std_normal_cdf(z_std) - 2.0 * owen_t(z_std, alpha),
            U_CLIP,
            1.0 - U_CLIP,
        )
        values = std_normal_quantile(u)
    else:
        raise ValidationError(f"unknown z-map method {method!r}")

    return ZMap(
        subject_id=covariates.subject_id,
        dims=mask.dims,
        voxel_size=mask.voxel_size,
        mask_indices=inside,
        values=values,
        provenance={
            "method": method,
            "bandwidth_mm": float(bandwidth),
            "mode": mode,
            "model": {
                "n_subjects": model.n_subjects,
                "centers": int(model.grid.count),
                "age_center": model.design.age_center,
            },
            "covariates": {
                "age": covariates.age,
                "sex": covariates.sex,
                "group": covariates.group,
            },
        },
    )


def deviation_index(zmap: ZMap, q: float) -> DeviationScore:
    """Mean of the absolute z-values at or above their empirical q-quantile.

    The threshold is the smallest order statistic with rank strictly above
    q*n, so q = 0 averages all |z| and the index is nondecreasing in q.
    """
    q = float(q)
    if not 0.0 <= q < 1.0:
        raise DomainError(f"quantile must lie in [0, 1), got {q}")
    magnitudes = np.abs(zmap.values)
    n = magnitudes.size
    rank = min(int(math.floor(q * n)), n - 1)
    threshold = np.partition(magnitudes, rank)[rank]
    tail = magnitudes[magnitudes >= threshold]
    return DeviationScore(
        subject_id=zmap.subject_id,
        q=q,
        value=float(tail.mean()),
        n_tail=int(tail.size),
        group=str(zmap.provenance.get("covariates", {}).get("group", "UNKNOWN")),
    )


def parameter_maps(
    model: GridModel,
    mask: BrainMask,
    bandwidth: float | None = None,
    mode: str | None = None,
) -> dict[str, VolumetricImage]:
    """Interpolate each fitted parameter to the whole mask."""
    bandwidth = model.rbf_bandwidth if bandwidth is None else bandwidth
    mode = model.rbf_mode if mode is None else mode
    return _interpolate_model_fields(model, mask, bandwidth, mode)


def predict_mean(
    model: GridModel,
    age: float,
    sex: int,
    mask: BrainMask,
    bandwidth: float | None = None,
    mode: str | None = None,
) -> VolumetricImage:
    """Expected image for given covariates under the fitted mean model."""
    design = model.design
    if not design.age_min <= age <= design.age_max:
        import warnings

        warnings.warn(
            f"age {age} is outside the training range "
            f"[{design.age_min}, {design.age_max}]; extrapolating",
            stacklevel=2,
        )
    bandwidth = model.rbf_bandwidth if bandwidth is None else bandwidth
    mode = model.rbf_mode if mode is None else mode
    values = model.beta_matrix() @ design.row_for(age, sex)
    return interpolate_field(model.grid, values, mask, bandwidth, mode)


def age_effect_map(
    model: GridModel,
    sex: int,
    mask: BrainMask,
    bandwidth: float | None = None,
    mode: str | None = None,
) -> VolumetricImage:
    """Per-year change of the mean for the given sex (data units per year)."""
    if sex not in (0, 1):
        raise ValidationError(f"sex must be 0 or 1, got {sex}")
    bandwidth = model.rbf_bandwidth if bandwidth is None else bandwidth
    mode = model.rbf_mode if mode is None else mode
    betas = model.beta_matrix()
    values = betas[:, 1] + float(sex) * betas[:, 3]
    return interpolate_field(model.grid, values, mask, bandwidth, mode)


def score_cohort(zmaps, q: float) -> list[DeviationScore]:
    """One deviation score per z-map, in input order."""
    return [deviation_index(zmap, q) for zmap in zmaps]


def summarize_scores(scores) -> dict[str, dict[str, float]]:
    """Per-group count/mean/median/sd of the deviation scores."""
    by_group: dict[str, list[float]] = {}
    for score in scores:
        by_group.setdefault(score.group, []).append(score.value)
    out = {}
    for group in sorted(by_group):
        values = np.array(by_group[group])
        out[group] = {
            "n": int(values.size),
            "mean": float(values.mean()),
            "median": float(np.median(values)),
            "sd": float(values.std(ddof=1)) if values.size > 1 else 0.0,
        }
    return out
