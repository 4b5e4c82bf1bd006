//! Velocity-level redundancy resolution for robots whose subtasks outnumber
//! their redundant degrees of freedom.
//!
//! Every multi-dimensional subtask is split into one-dimensional elementary
//! subtasks. A merging matrix distributes the `n - m` redundancies left by the
//! primary task over all elementary subtasks, and a winner-take-all rule
//! driven by task status and soft priority moves that allocation at runtime.
//!
//! Module map:
//! - [`kinematics`]: planar chains, Jacobians, pseudoinverses, projectors
//! - [`subtasks`]: elementary subtask laws, stacking, task status
//! - [`merging`]: merging matrix, soft priority, winner-take-all update
//! - [`control`]: single-task, two-priority and merged control laws
//! - [`scenario`]: declarative experiment description and validation
//! - [`sim`]: closed-loop rollout and time-series logging

pub mod control;
pub mod kinematics;
pub mod merging;
pub mod scenario;
pub mod sim;
pub mod subtasks;

pub use control::{resolve_merged, resolve_single, resolve_two, ControlFrame, ControlOutput, InnerInverse};
pub use kinematics::{
    forward_kinematics, jacobian, manipulability, null_projector, pseudoinverse, Axis, JointKind, JointState,
    KinematicChain, Pinv, PointOfInterest, Pose, SlideAxis, END_EFFECTOR,
};
pub use merging::{
    init_merging, merged_jacobian, secondary_task, soft_priority, step_merging, wta_rate, MergingState,
    PriorityMatrix, StatusMatrix, UpdateRate,
};
pub use scenario::{Diagnostic, Mode, ScenarioConfig, Severity};
pub use sim::{run, run_to_writer, LogLayout, LogSeries, RunError, Simulation};
pub use subtasks::{evaluate, stack, task_status, unitize, ElementarySubtask, Scene, SubtaskKind, SubtaskSpec, SubtaskStack};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected dimension {expected}, got {actual}")]
    DimensionMismatch { what: &'static str, expected: usize, actual: usize },
    #[error("unknown point '{0}'")]
    UnknownPoint(String),
    #[error("unknown obstacle '{0}'")]
    UnknownObstacle(String),
    #[error("empty task coordinate selector")]
    EmptySelector,
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("invalid subtask: {0}")]
    InvalidSubtask(String),
    #[error("no subtasks given")]
    EmptySubtasks,
    #[error("duplicate subtask id {0}")]
    DuplicateId(usize),
    #[error("subtask ids must be contiguous from 0; missing id {0}")]
    MissingId(usize),
    #[error("invalid merging parameters: {0}")]
    InvalidMerging(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
