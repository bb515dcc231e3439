//! Cycle-level simulator and scheduler for pipeline-parallel DNN training
//! on weight-stationary systolic arrays.
//!
//! The crate models training as a dataflow graph with conceptual iteration
//! delays, derives pipelined variants of it by cutset pipelining and
//! retiming, profiles per-layer costs analytically, partitions the work
//! across processors either by contiguous stages or by balanced borrowing
//! of delta computations, and simulates the resulting schedules.

pub mod cost;
pub mod error;
pub mod graph;
pub mod partition;
pub mod schedule;
pub mod sweep;
pub mod zoo;

pub use cost::{
    classify_movable, profile_layer, profile_network, ws_gemm_cycles, ArrayConfig, LayerSpec,
    MovableSplit, Profile, ProfileEntry, RunConfig, Thresholds,
};
pub use error::{Error, Result};
pub use graph::{
    build_training_dfg, critical_loops, derive_pipelined_dfg, feedforward_cutsets,
    insert_pipeline_delays, CriticalLoops, Cutset, Dfg, EdgeRef, NodeId, OpKind, OpNode, Retiming,
    StashReport,
};
pub use partition::{
    layerpipe_partition, op_split, pipedream_partition, Algorithm, Allocation, PartitionConfig,
    ProcessorAssignment, WorkItem, WorkKind,
};
pub use schedule::{build_schedule, gantt_csv, speedup, Event, Schedule, ScheduleOp, SpeedupReport};
pub use sweep::{run_sweep, run_sweep_sequential, sweep_csv, SweepRow, SweepSpec};
pub use zoo::{parse_network, resnet50_conv, sample4, serialize_network, vgg16_conv, NetworkSpec};
