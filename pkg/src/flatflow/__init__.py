"""Grid simulator for volume-preserving mean curvature flow by constrained minimizing movements."""
from ._kernels import BACKEND
from .disttrans import SignedDistanceField, signed_distance
from .energy import PerimeterKind, curvature_estimate, isoperimetric_ratio, mean_curvature, perimeter
from .flow import FlowConfig, FlowTrajectory, StepRecord, run
from .geometry import BinarySet, BoundaryCondition, GridDomain, GridError, ScalarField, sym_diff_volume, volume
from .mmsolver import StepConfig, StepMode, StepOutcome, lambda_search, mm_step
from .oracle import OracleResult, brute_force_min

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BinarySet", "BoundaryCondition", "FlowConfig", "FlowTrajectory", "GridDomain", "GridError",
    "OracleResult", "PerimeterKind", "ScalarField", "SignedDistanceField", "StepConfig", "StepMode",
    "StepOutcome", "StepRecord", "brute_force_min", "curvature_estimate", "isoperimetric_ratio",
    "lambda_search", "mean_curvature", "mm_step", "perimeter", "run", "signed_distance", "sym_diff_volume",
    "volume",
]
