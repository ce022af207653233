"""Differentiable spectral geometry toolkit for triangle meshes.

Pipeline: mesh loading -> cotangent/anisotropic operator assembly ->
generalized eigensolve -> spectral descriptors, with exact derivatives of
the whole chain with respect to per-edge metric scales, per-face
anisotropy, and per-vertex mass weights.
"""

__version__ = "0.1.0"

from .adjoint import (
    EigenDerivatives,
    GradientBundle,
    NelsonWorkspace,
    clip_gradients,
    forward_gradient,
    hks_pullback,
    nelson_forward,
    reverse_gradient,
)
from .assembly import (
    AssembledOperator,
    MetricProjectionError,
    OperatorPair,
    OperatorParams,
    assemble_mass,
    assemble_stiffness,
    assemble_anisotropic_stiffness,
    backprop_fix_metric,
    fix_metric,
    modified_operator,
    with_params,
)
from .curvature import FaceFrames, curvature_frames, vertex_normals
from .descriptors import Descriptor, gps, hks, log_time_samples
from .eigen import EigenSolveError, EigenSystem, solve_gep
from .features import FeatureField, intrinsic_features
from .geometry import GeometryCache, build_flaps, geometry, surface_area
from .gradcheck import run_gradcheck
from .learning import (
    HeadConfig,
    MlpParams,
    TrainConfig,
    average_pool,
    evaluate,
    head_forward,
    init_head,
    train,
)
from .meshio import Mesh, MeshError, load_mesh, save_off
from .synthetic import (
    bumpy_sphere,
    icosphere,
    plane_grid,
    sphere_cylinder_compound,
    stretched_icosphere,
    tetrahedron,
)

__all__ = [
    "__version__",
    "Mesh", "MeshError", "load_mesh", "save_off",
    "GeometryCache", "geometry", "build_flaps", "surface_area",
    "OperatorParams", "OperatorPair", "AssembledOperator",
    "MetricProjectionError", "fix_metric", "backprop_fix_metric",
    "assemble_stiffness", "assemble_mass", "assemble_anisotropic_stiffness",
    "modified_operator", "with_params",
    "EigenSystem", "EigenSolveError", "solve_gep",
    "Descriptor", "hks", "gps", "log_time_samples",
    "FaceFrames", "curvature_frames", "vertex_normals",
    "FeatureField", "intrinsic_features",
    "EigenDerivatives", "NelsonWorkspace", "GradientBundle",
    "nelson_forward", "reverse_gradient", "forward_gradient",
    "hks_pullback", "clip_gradients",
    "run_gradcheck",
    "HeadConfig", "MlpParams", "TrainConfig",
    "init_head", "head_forward", "train", "evaluate", "average_pool",
    "tetrahedron", "icosphere", "stretched_icosphere", "bumpy_sphere",
    "plane_grid", "sphere_cylinder_compound",
]
