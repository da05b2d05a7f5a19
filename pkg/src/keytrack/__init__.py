"""Keypoint map codec, skeleton assembly and multi-animal tracking."""

from .assembly import PartialSkeleton, assemble, association_penalty, predict_complement
from .assignment import greedy_assign, hungarian
from .io import (
    StreamHeader,
    default_skeleton,
    load_detections,
    load_scenario,
    load_skeleton,
    load_tracks,
    save_detections,
    save_scenario,
    save_skeleton,
    save_tracks,
)
from .kalman import (
    FilterModel,
    FilterState,
    adaptive_alpha,
    initial_state,
    innovation,
    joseph_update,
    mitigation_gamma,
    predict,
    simplified_update,
    update_adaptive,
    update_standard,
)
from .keysort import (
    KeySortTracker,
    TrackerConfig,
    TrackerModel,
    Tracklet,
    TrackletFrameRecord,
    TrackOutput,
    build_model,
    psi,
    running_freq,
)
from .maps import (
    CandidateKeypoint,
    EncoderParams,
    LossBreakdown,
    MapStack,
    decode_candidates,
    encode,
    encode_assoc_maps,
    encode_prob_maps,
    kernel_sigma,
    load_maps,
    map_loss,
    pose_sigmas,
    quadratic_sample,
    read_offset,
    save_maps,
)
from .metrics import (
    EvalReport,
    EvalSeries,
    PairingResult,
    PRReport,
    evaluate_poses,
    evaluate_tracks,
    frame_difference,
    pair_skeletons,
    precision_recall,
    quantiles,
    recovery_rate,
    relative_error,
)
from .simulate import (
    GroundTruthFrame,
    GroundTruthSequence,
    KfDemoResult,
    ParallelScene,
    RegimeSegment,
    ScenarioConfig,
    corrupt,
    generate,
    parallel_rows_scene,
    regime_switch_demo,
    two_point_skeleton,
)
from .skeleton import (
    Pose,
    SkeletonSpec,
    connection_name,
    connection_vector,
    estimate_betas,
    is_valid_pose,
    parse_connection_name,
    require_valid_spec,
    skeleton_scale,
    validate_spec,
)

__version__ = "1.0.0"

__all__ = [
    "CandidateKeypoint",
    "EncoderParams",
    "EvalReport",
    "EvalSeries",
    "FilterModel",
    "FilterState",
    "GroundTruthFrame",
    "GroundTruthSequence",
    "KeySortTracker",
    "KfDemoResult",
    "LossBreakdown",
    "MapStack",
    "PairingResult",
    "ParallelScene",
    "PartialSkeleton",
    "Pose",
    "PRReport",
    "RegimeSegment",
    "ScenarioConfig",
    "SkeletonSpec",
    "StreamHeader",
    "TrackerConfig",
    "TrackerModel",
    "Tracklet",
    "TrackletFrameRecord",
    "TrackOutput",
    "adaptive_alpha",
    "assemble",
    "association_penalty",
    "build_model",
    "connection_name",
    "connection_vector",
    "corrupt",
    "decode_candidates",
    "default_skeleton",
    "encode",
    "encode_assoc_maps",
    "encode_prob_maps",
    "estimate_betas",
    "evaluate_poses",
    "evaluate_tracks",
    "frame_difference",
    "generate",
    "greedy_assign",
    "hungarian",
    "initial_state",
    "innovation",
    "is_valid_pose",
    "joseph_update",
    "kernel_sigma",
    "load_detections",
    "load_maps",
    "load_scenario",
    "load_skeleton",
    "load_tracks",
    "map_loss",
    "mitigation_gamma",
    "pair_skeletons",
    "parallel_rows_scene",
    "parse_connection_name",
    "pose_sigmas",
    "precision_recall",
    "predict",
    "predict_complement",
    "psi",
    "quadratic_sample",
    "quantiles",
    "read_offset",
    "recovery_rate",
    "regime_switch_demo",
    "relative_error",
    "require_valid_spec",
    "running_freq",
    "save_detections",
    "save_maps",
    "save_scenario",
    "save_skeleton",
    "save_tracks",
    "simplified_update",
    "skeleton_scale",
    "two_point_skeleton",
    "update_adaptive",
    "update_standard",
    "validate_spec",
]
