"""Dense motion fields, cycle-consistency occlusion masks and error-scaling experiments."""

from .consistency import (
    BgcParams,
    CycleEnergyGrid,
    cycle_energy,
    forward_only_mask,
    geometric_loss,
    mask_iou,
    masked_region_partition,
    occlusion_mask,
)
from .estimator import DyadBatch, EstimatorParams, build_dyads, estimate_batched, estimate_flow
from .grid import (
    FrameGrid,
    MotionField,
    ValidityMask,
    compose_flows,
    invert_flow,
    sample_bilinear,
    sample_field,
    warp_backward,
)
from .harness import (
    DriftReport,
    ErrorSeries,
    drift_experiment,
    measured_kurtosis,
    sensitivity_sweep,
    verify_theorem1,
    verify_theorem2,
    warping_error,
)
from .io import FormatError, RunConfig, flow_to_color, read_flo, read_pnm, write_flo, write_pnm
from .motion import (
    Hint,
    MotionSequence,
    TrajectorySet,
    autoregressive_chain,
    densify_hints,
    eulerian_to_lagrangian,
)
from .noise import NoiseModel
from .synth import GroundTruthBundle, SceneSpec, Sprite, render, valid_area_curve

__all__ = [name for name in dir() if not name.startswith("_")]
