"""Voxelwise skew-normal normative modelling of 3D volumetric images.

Fits skew-normal voxelwise laws with covariate-dependent means on a grid of
reference-cohort voxels, interpolates the fitted parameter fields across the
volume with Gaussian radial basis functions, and turns any subject image into
a standard-normal z-map plus scalar deviation scores.
"""

from .errors import (
    ConditioningError,
    DegenerateDataError,
    DesignError,
    DomainError,
    FormatError,
    GeometryError,
    SkewnessRangeError,
    ValidationError,
    VolnormError,
)
from .skewnormal import (
    C_GAMMA,
    GAMMA_GUARD,
    SkewNormalCP,
    SkewNormalDP,
    cp_to_dp,
    dp_to_cp,
    owen_t,
    sn_cdf,
    sn_pdf,
    sn_quantile,
    sn_sample,
    std_normal_cdf,
    std_normal_quantile,
)
from .geometry import (
    BrainMask,
    GridSpec,
    VolumetricImage,
    build_grid,
    build_mask,
    gaussian_smooth,
)
from .interpolation import (
    MODE_SUM_TO_ONE,
    MODE_SUM_TO_ZERO,
    RbfInterpolator,
    interpolate_field,
    rbf_fit,
    rbf_kernel,
    rbf_predict,
)
from .estimation import (
    CovariateRecord,
    DesignInfo,
    GridModel,
    VoxelFit,
    fit_grid,
    fit_voxel,
    sn_loglik,
)
from .normative import (
    DeviationScore,
    ZMap,
    age_effect_map,
    center_z_values,
    deviation_index,
    parameter_maps,
    predict_mean,
    score_cohort,
    subject_zmap,
    summarize_scores,
    voxel_u,
)
from .synthesis import (
    FieldSpec,
    SphericalRegion,
    SyntheticCohort,
    SyntheticSpec,
    generate_cohort,
)

__version__ = "0.1.0"
