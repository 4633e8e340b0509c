//! Station-stratified lymph node detection: multi-head gated scoring,
//! lesion-centric 2D-to-3D box merging and FROC evaluation with IoBB hits.

pub mod error;
pub mod evaluation;
pub mod gating;
pub mod geometry;
pub mod merging;
pub mod synthstudy;

pub use error::{Error, Result};
pub use evaluation::{
    froc, match_detections, size_banded_report, EvalConfig, FrocCurve, FrocPoint,
    GroundTruthLesion, MatchOutcome, ScoredVerdict, Verdict,
};
pub use gating::{GateInput, GateMode, Proposal, Station, StationGrouping};
pub use geometry::{iobb3d, iou2d, iou3d, Box2D, Box3D};
pub use merging::{
    lesion_centric_groups, merge, merge_lesion_centric, merge_slice_wise, slice_wise_groups,
    MergeConfig, MergeMode,
};
pub use synthstudy::{generate, run_study, train_heads, StudyReport, SynthConfig};
