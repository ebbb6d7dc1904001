"""curvereg: key-curve annotation, scoring and PET-CT registration."""

from ._kernels import BACKEND
from .errors import CurveRegError, DataError, NumericalError
from .features import FeatureConfig, FeatureMap, SimilarityMatrix, extract_features, lcka, similarity_matrix
from .keycurve import (
    CurveSet,
    KeyCurve,
    KeyPoint,
    curve_distance,
    eval_curve,
    fit_curve,
    fit_curve_set,
    prediction_band,
    rmse,
    score_curve_sets,
    transform_points,
)
from .register import (
    RegistrationConfig,
    RegistrationResult,
    evaluate,
    objective,
    register,
    register_affine,
    register_tps,
)
from .synth import PhantomSpec, make_pair, make_phantom
from .transforms import (
    Affine3,
    CompositeTransform,
    DeformationConfig,
    Tps3,
    affine_apply,
    affine_compose,
    affine_invert,
    random_transform,
    tps_apply,
    tps_fit,
    warp_volume,
)
from .volume import (
    Geometry,
    SliceImage,
    VoxelGrid,
    extract_slice,
    load_volume,
    preprocess_pet,
    residual_image,
    save_volume,
    trilinear_sample,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
