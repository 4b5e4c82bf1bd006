//! Elementary subtasks: one-dimensional velocity laws with their row
//! Jacobians, the unitization of multi-dimensional subtasks, and the
//! normalized task status that drives the merging update.

use nalgebra::{DMatrix, DVector, RowDVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::kinematics::{self, Axis, KinematicChain, END_EFFECTOR};
use crate::{Error, Result};

pub const DEFAULT_STATUS_SLOPE: f64 = 100.0;
pub const DEFAULT_STATUS_RANGE: f64 = 0.05;
pub const DEFAULT_GAIN: f64 = 1.0;
pub const DEFAULT_MARGIN: f64 = 0.2;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Step for the central-difference manipulability gradient.
pub const GRADIENT_STEP: f64 = 1e-6;

fn default_gain() -> f64 {
    DEFAULT_GAIN
}
fn default_margin() -> f64 {
    DEFAULT_MARGIN
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn all_axes() -> Vec<Axis> {
    vec![Axis::X, Axis::Y, Axis::Yaw]
}
fn default_point() -> String {
    END_EFFECTOR.to_string()
}

/// Response slope `k` and sensitivity range `d` of the status function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatusParams {
    pub slope: f64,
    pub range: f64,
}

impl Default for StatusParams {
    fn default() -> Self {
        Self { slope: DEFAULT_STATUS_SLOPE, range: DEFAULT_STATUS_RANGE }
    }
}

/// A possibly multi-dimensional subtask as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubtaskSpec {
    /// Push a point away from a point obstacle along each listed axis.
    ObstacleAvoidance {
        point: String,
        obstacle: String,
        #[serde(default = "all_axes")]
        axes: Vec<Axis>,
        #[serde(default = "default_gain")]
        gain: f64,
        #[serde(default = "default_threshold")]
        threshold: f64,
        #[serde(default)]
        status_slope: Option<f64>,
        #[serde(default)]
        status_range: Option<f64>,
    },
    /// Repel each listed joint from its limits once inside `margin`.
    JointLimits {
        joints: Vec<usize>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default = "default_gain")]
        gain: f64,
        #[serde(default)]
        status_slope: Option<f64>,
        #[serde(default)]
        status_range: Option<f64>,
    },
    /// Drive each listed joint to a target angle.
    JointSetpoint {
        joints: Vec<usize>,
        targets: Vec<f64>,
        #[serde(default = "default_gain")]
        gain: f64,
        #[serde(default)]
        status_slope: Option<f64>,
        #[serde(default)]
        status_range: Option<f64>,
    },
    /// Climb the manipulability gradient along each listed joint.
    SingularityAvoidance {
        joints: Vec<usize>,
        #[serde(default = "default_point")]
        point: String,
        #[serde(default = "all_axes")]
        axes: Vec<Axis>,
        #[serde(default = "default_gain")]
        gain: f64,
        #[serde(default)]
        status_slope: Option<f64>,
        #[serde(default)]
        status_range: Option<f64>,
    },
}

impl SubtaskSpec {
    /// Number of elementary subtasks this spec unitizes into.
    pub fn dims(&self) -> usize {
        match self {
            SubtaskSpec::ObstacleAvoidance { axes, .. } => axes.len(),
            SubtaskSpec::JointLimits { joints, .. }
            | SubtaskSpec::JointSetpoint { joints, .. }
            | SubtaskSpec::SingularityAvoidance { joints, .. } => joints.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SubtaskSpec::ObstacleAvoidance { .. } => "obstacle_avoidance",
            SubtaskSpec::JointLimits { .. } => "joint_limits",
            SubtaskSpec::JointSetpoint { .. } => "joint_setpoint",
            SubtaskSpec::SingularityAvoidance { .. } => "singularity_avoidance",
        }
    }

    fn status(&self, defaults: StatusParams) -> StatusParams {
        let (slope, range) = match self {
            SubtaskSpec::ObstacleAvoidance { status_slope, status_range, .. }
            | SubtaskSpec::JointLimits { status_slope, status_range, .. }
            | SubtaskSpec::JointSetpoint { status_slope, status_range, .. }
            | SubtaskSpec::SingularityAvoidance { status_slope, status_range, .. } => (status_slope, status_range),
        };
        StatusParams { slope: slope.unwrap_or(defaults.slope), range: range.unwrap_or(defaults.range) }
    }
}

/// The velocity law of one elementary subtask.
#[derive(Debug, Clone, PartialEq)]
pub enum SubtaskKind {
    /// `gain * (target - q_j)`.
    JointSetpoint { joint: usize, target: f64, gain: f64 },
    /// `gain * max(0, margin - dist) * sign(away from the nearer limit)`.
    JointLimitRepulsion { joint: usize, lower: f64, upper: f64, margin: f64, gain: f64 },
    /// `gain * max(0, threshold - clearance) * (axis component of the escape direction)`.
    ObstacleClearanceAxis { point: String, obstacle: String, axis: Axis, threshold: f64, gain: f64 },
    /// `gain * dw/dq_j` with `w` the manipulability of `point` over `axes`.
    SingularityAvoidanceAxis { joint: usize, point: String, axes: Vec<Axis>, gain: f64 },
}

impl SubtaskKind {
    pub fn label(&self) -> String {
        match self {
            SubtaskKind::JointSetpoint { joint, .. } => format!("setpoint_q{joint}"),
            SubtaskKind::JointLimitRepulsion { joint, .. } => format!("limit_q{joint}"),
            SubtaskKind::ObstacleClearanceAxis { point, obstacle, axis, .. } => {
                format!("obstacle_{point}_{obstacle}_{}", axis.name())
            }
            SubtaskKind::SingularityAvoidanceAxis { joint, .. } => format!("singularity_q{joint}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementarySubtask {
    /// Priority index: smaller ids outrank larger ones.
    pub id: usize,
    /// Index of the multi-dimensional spec this component came from.
    pub parent: usize,
    pub kind: SubtaskKind,
    pub status: StatusParams,
}

/// Current state of a point obstacle.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleState {
    pub name: String,
    pub position: Vector2<f64>,
    pub radius: f64,
}

/// External world state the subtask laws read.
#[derive(Debug, Clone, Copy, Default)]
pub struct Scene<'a> {
    pub obstacles: &'a [ObstacleState],
}

impl<'a> Scene<'a> {
    pub fn obstacle(&self, name: &str) -> Result<&'a ObstacleState> {
        self.obstacles
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| Error::UnknownObstacle(name.to_string()))
    }
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidSubtask(format!("{what} must be positive, got {v}")))
    }
}

/// Splits multi-dimensional specs into elementary subtasks. Components of one
/// spec stay consecutive and ids follow listing order.
pub fn unitize(specs: &[SubtaskSpec], defaults: StatusParams) -> Result<Vec<ElementarySubtask>> {
    if specs.is_empty() {
        return Err(Error::EmptySubtasks);
    }
    let mut out = Vec::new();
    for (parent, spec) in specs.iter().enumerate() {
        let status = spec.status(defaults);
        check_positive("status_slope", status.slope)?;
        check_positive("status_range", status.range)?;
        if spec.dims() == 0 {
            return Err(Error::InvalidSubtask(format!("{} #{parent} has no components", spec.kind_name())));
        }
        let kinds: Vec<SubtaskKind> = match spec {
            SubtaskSpec::ObstacleAvoidance { point, obstacle, axes, gain, threshold, .. } => {
                check_positive("gain", *gain)?;
                check_positive("threshold", *threshold)?;
                axes.iter()
                    .map(|&axis| SubtaskKind::ObstacleClearanceAxis {
                        point: point.clone(),
                        obstacle: obstacle.clone(),
                        axis,
                        threshold: *threshold,
                        gain: *gain,
                    })
                    .collect()
            }
            SubtaskSpec::JointLimits { joints, lower, upper, margin, gain, .. } => {
                check_positive("gain", *gain)?;
                check_positive("margin", *margin)?;
                if lower.len() != joints.len() || upper.len() != joints.len() {
                    return Err(Error::InvalidSubtask(format!(
                        "joint_limits #{parent}: {} joints but {} lower and {} upper limits",
                        joints.len(),
                        lower.len(),
                        upper.len()
                    )));
                }
                let mut kinds = Vec::new();
                for ((&joint, &lo), &hi) in joints.iter().zip(lower).zip(upper) {
                    if !(lo < hi) {
                        return Err(Error::InvalidSubtask(format!(
                            "joint_limits #{parent}: lower limit {lo} of joint {joint} is not below upper {hi}"
                        )));
                    }
                    kinds.push(SubtaskKind::JointLimitRepulsion { joint, lower: lo, upper: hi, margin: *margin, gain: *gain });
                }
                kinds
            }
            SubtaskSpec::JointSetpoint { joints, targets, gain, .. } => {
                check_positive("gain", *gain)?;
                if targets.len() != joints.len() {
                    return Err(Error::InvalidSubtask(format!(
                        "joint_setpoint #{parent}: {} joints but {} targets",
                        joints.len(),
                        targets.len()
                    )));
                }
                joints
                    .iter()
                    .zip(targets)
                    .map(|(&joint, &target)| SubtaskKind::JointSetpoint { joint, target, gain: *gain })
                    .collect()
            }
            SubtaskSpec::SingularityAvoidance { joints, point, axes, gain, .. } => {
                check_positive("gain", *gain)?;
                if axes.is_empty() {
                    return Err(Error::EmptySelector);
                }
                joints
                    .iter()
                    .map(|&joint| SubtaskKind::SingularityAvoidanceAxis {
                        joint,
                        point: point.clone(),
                        axes: axes.clone(),
                        gain: *gain,
                    })
                    .collect()
            }
        };
        for kind in kinds {
            out.push(ElementarySubtask { id: out.len(), parent, kind, status });
        }
    }
    Ok(out)
}

/// Desired scalar velocity and row Jacobian of one elementary subtask.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub velocity: f64,
    pub row: RowDVector<f64>,
}

fn unit_row(n: usize, joint: usize) -> Result<RowDVector<f64>> {
    if joint >= n {
        return Err(Error::InvalidSubtask(format!("joint index {joint} out of range for {n} joints")));
    }
    let mut row = RowDVector::zeros(n);
    row[joint] = 1.0;
    Ok(row)
}

/// Distance to the nearer joint limit and the direction pointing away from it.
pub fn limit_distance(q: f64, lower: f64, upper: f64) -> (f64, f64) {
    let to_lower = q - lower;
    let to_upper = upper - q;
    if to_lower <= to_upper {
        (to_lower, 1.0)
    } else {
        (to_upper, -1.0)
    }
}

/// Clearance between a point and an obstacle surface, with the unit vector
/// from the obstacle center to the point (zero when they coincide).
pub fn clearance(point: Vector2<f64>, obstacle: &ObstacleState) -> (f64, Vector2<f64>) {
    let diff = point - obstacle.position;
    let dist = diff.norm();
    let dir = if dist > 0.0 { diff / dist } else { Vector2::zeros() };
    (dist - obstacle.radius, dir)
}

fn manipulability_gradient(chain: &KinematicChain, q: &[f64], joint: usize, point: &str, axes: &[Axis]) -> Result<f64> {
    let mut plus = q.to_vec();
    let mut minus = q.to_vec();
    plus[joint] += GRADIENT_STEP;
    minus[joint] -= GRADIENT_STEP;
    let wp = kinematics::manipulability(chain, &plus, point, axes)?;
    let wm = kinematics::manipulability(chain, &minus, point, axes)?;
    Ok((wp - wm) / (2.0 * GRADIENT_STEP))
}

pub fn evaluate(subtask: &ElementarySubtask, chain: &KinematicChain, q: &[f64], scene: &Scene) -> Result<Evaluation> {
    let n = chain.dof();
    if q.len() != n {
        return Err(Error::DimensionMismatch { what: "joint vector", expected: n, actual: q.len() });
    }
    match &subtask.kind {
        SubtaskKind::JointSetpoint { joint, target, gain } => {
            let row = unit_row(n, *joint)?;
            Ok(Evaluation { velocity: gain * (target - q[*joint]), row })
        }
        SubtaskKind::JointLimitRepulsion { joint, lower, upper, margin, gain } => {
            let row = unit_row(n, *joint)?;
            let (dist, away) = limit_distance(q[*joint], *lower, *upper);
            Ok(Evaluation { velocity: gain * (margin - dist).max(0.0) * away, row })
        }
        SubtaskKind::ObstacleClearanceAxis { point, obstacle, axis, threshold, gain } => {
            let obs = scene.obstacle(obstacle)?;
            let pose = kinematics::forward_kinematics(chain, q, point)?;
            let j = kinematics::jacobian(chain, q, point, &[*axis])?;
            let row = j.row(0).into_owned();
            let (clear, dir) = clearance(pose.position(), obs);
            let push = (threshold - clear).max(0.0);
            if push == 0.0 {
                return Ok(Evaluation { velocity: 0.0, row });
            }
            let component = match axis {
                Axis::X => dir.x,
                Axis::Y => dir.y,
                Axis::Yaw => match chain.rotation_pivot(q, point)? {
                    Some(pivot) => {
                        let lever = pose.position() - pivot;
                        let len = lever.norm();
                        if len > 0.0 {
                            (-lever.y * dir.x + lever.x * dir.y) / len
                        } else {
                            0.0
                        }
                    }
                    None => 0.0,
                },
            };
            Ok(Evaluation { velocity: gain * push * component, row })
        }
        SubtaskKind::SingularityAvoidanceAxis { joint, point, axes, gain } => {
            let row = unit_row(n, *joint)?;
            let grad = manipulability_gradient(chain, q, *joint, point, axes)?;
            Ok(Evaluation { velocity: gain * grad, row })
        }
    }
}

/// Named auxiliary metric reported for a subtask (clearance, joint margin,
/// setpoint error or manipulability).
pub fn metric(subtask: &ElementarySubtask, chain: &KinematicChain, q: &[f64], scene: &Scene) -> Result<(String, f64)> {
    match &subtask.kind {
        SubtaskKind::JointSetpoint { joint, target, .. } => {
            unit_row(chain.dof(), *joint)?;
            Ok((format!("setpoint_err_q{joint}"), target - q[*joint]))
        }
        SubtaskKind::JointLimitRepulsion { joint, lower, upper, .. } => {
            unit_row(chain.dof(), *joint)?;
            Ok((format!("margin_q{joint}"), limit_distance(q[*joint], *lower, *upper).0))
        }
        SubtaskKind::ObstacleClearanceAxis { point, obstacle, .. } => {
            let pose = kinematics::forward_kinematics(chain, q, point)?;
            let (clear, _) = clearance(pose.position(), scene.obstacle(obstacle)?);
            Ok((format!("clearance_{point}_{obstacle}"), clear))
        }
        SubtaskKind::SingularityAvoidanceAxis { point, axes, .. } => {
            Ok((format!("manip_{point}"), kinematics::manipulability(chain, q, point, axes)?))
        }
    }
}

/// Stacked subtask velocities and Jacobian rows, in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskStack {
    pub velocities: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

impl SubtaskStack {
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }
}

/// Orders subtasks by id, requiring ids `0..l` exactly once each.
pub fn ordered(subtasks: &[ElementarySubtask]) -> Result<Vec<&ElementarySubtask>> {
    if subtasks.is_empty() {
        return Err(Error::EmptySubtasks);
    }
    let mut sorted: Vec<&ElementarySubtask> = subtasks.iter().collect();
    sorted.sort_by_key(|s| s.id);
    for (expected, s) in sorted.iter().enumerate() {
        if s.id < expected {
            return Err(Error::DuplicateId(s.id));
        }
        if s.id > expected {
            return Err(Error::MissingId(expected));
        }
    }
    Ok(sorted)
}

pub fn stack(subtasks: &[ElementarySubtask], chain: &KinematicChain, q: &[f64], scene: &Scene) -> Result<SubtaskStack> {
    let sorted = ordered(subtasks)?;
    let l = sorted.len();
    let n = chain.dof();
    let mut velocities = DVector::zeros(l);
    let mut jacobian = DMatrix::zeros(l, n);
    for (i, s) in sorted.into_iter().enumerate() {
        let e = evaluate(s, chain, q, scene)?;
        velocities[i] = e.velocity;
        jacobian.set_row(i, &e.row);
    }
    Ok(SubtaskStack { velocities, jacobian })
}

/// Normalized activity `1/(1+e^{k(d+x)}) + 1/(1+e^{k(d-x)})`: near
/// `2/(1+e^{kd})` when the subtask is idle, approaching 1 when active.
pub fn task_status(velocity: f64, slope: f64, range: f64) -> f64 {
    // exp overflows to +inf for large arguments, which makes the term exactly 0
    let a = 1.0 / (1.0 + (slope * (range + velocity)).exp());
    let b = 1.0 / (1.0 + (slope * (range - velocity)).exp());
    a + b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{JointKind, PointOfInterest};

    fn arm() -> KinematicChain {
        KinematicChain::new(
            vec![
                JointKind::Revolute { length: 1.0 },
                JointKind::Revolute { length: 1.0 },
                JointKind::Revolute { length: 0.5 },
            ],
            vec![PointOfInterest { name: "elbow".into(), frame: Some(0), offset: Vector2::zeros() }],
        )
        .unwrap()
    }

    fn obstacle_spec() -> SubtaskSpec {
        SubtaskSpec::ObstacleAvoidance {
            point: "elbow".into(),
            obstacle: "human".into(),
            axes: all_axes(),
            gain: 1.0,
            threshold: 0.5,
            status_slope: None,
            status_range: None,
        }
    }

    fn limits_spec(joints: Vec<usize>) -> SubtaskSpec {
        let k = joints.len();
        SubtaskSpec::JointLimits {
            joints,
            lower: vec![-2.0; k],
            upper: vec![2.0; k],
            margin: 0.2,
            gain: 1.0,
            status_slope: None,
            status_range: Some(0.01),
        }
    }

    #[test]
    fn obstacle_avoidance_unitizes_into_three_axes() {
        let subs = unitize(&[obstacle_spec()], StatusParams::default()).unwrap();
        let axes: Vec<Axis> = subs
            .iter()
            .map(|s| match &s.kind {
                SubtaskKind::ObstacleClearanceAxis { axis, .. } => *axis,
                other => panic!("unexpected {other:?}"),
            })
            .collect();
        assert_eq!(axes, vec![Axis::X, Axis::Y, Axis::Yaw]);
    }

    #[test]
    fn one_dimensional_spec_maps_to_one_subtask() {
        let spec = SubtaskSpec::JointSetpoint {
            joints: vec![2],
            targets: vec![0.4],
            gain: 2.0,
            status_slope: None,
            status_range: None,
        };
        let subs = unitize(&[spec], StatusParams::default()).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].kind, SubtaskKind::JointSetpoint { joint: 2, target: 0.4, gain: 2.0 });
    }

    #[test]
    fn drink_serving_layout_has_six_components() {
        let subs = unitize(&[obstacle_spec(), limits_spec(vec![0, 1, 2])], StatusParams::default()).unwrap();
        assert_eq!(subs.len(), 6);
        assert_eq!(subs.iter().map(|s| s.id).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
        assert!(subs[..3].iter().all(|s| s.parent == 0 && matches!(s.kind, SubtaskKind::ObstacleClearanceAxis { .. })));
        assert!(subs[3..].iter().all(|s| s.parent == 1));
        assert_eq!(subs[4].status.range, 0.01);
        assert_eq!(subs[0].status, StatusParams::default());
    }

    #[test]
    fn unitize_rejects_empty_and_malformed() {
        assert!(matches!(unitize(&[], StatusParams::default()), Err(Error::EmptySubtasks)));
        let bad = SubtaskSpec::JointSetpoint {
            joints: vec![0, 1],
            targets: vec![0.0],
            gain: 1.0,
            status_slope: None,
            status_range: None,
        };
        assert!(unitize(&[bad], StatusParams::default()).is_err());
        let bad_status = SubtaskSpec::JointSetpoint {
            joints: vec![0],
            targets: vec![0.0],
            gain: 1.0,
            status_slope: Some(0.0),
            status_range: None,
        };
        assert!(unitize(&[bad_status], StatusParams::default()).is_err());
    }

    #[test]
    fn stack_rejects_duplicate_ids() {
        let mut subs = unitize(&[limits_spec(vec![0, 1])], StatusParams::default()).unwrap();
        subs[1].id = 0;
        let err = stack(&subs, &arm(), &[0.0; 3], &Scene::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(0)));
        subs[1].id = 5;
        let err = stack(&subs, &arm(), &[0.0; 3], &Scene::default()).unwrap_err();
        assert!(matches!(err, Error::MissingId(1)));
    }

    #[test]
    fn setpoint_at_goal_is_idle() {
        let s = ElementarySubtask {
            id: 0,
            parent: 0,
            kind: SubtaskKind::JointSetpoint { joint: 1, target: 0.7, gain: 3.0 },
            status: StatusParams::default(),
        };
        let e = evaluate(&s, &arm(), &[0.1, 0.7, -0.2], &Scene::default()).unwrap();
        assert_eq!(e.velocity, 0.0);
        assert_eq!(e.row, RowDVector::from_row_slice(&[0.0, 1.0, 0.0]));
    }

    #[test]
    fn obstacle_outside_threshold_is_idle() {
        let subs = unitize(&[obstacle_spec()], StatusParams::default()).unwrap();
        let obstacles = [ObstacleState { name: "human".into(), position: Vector2::new(1.0, 0.7), radius: 0.1 }];
        let scene = Scene { obstacles: &obstacles };
        // elbow at (1, 0): clearance 0.6 > 0.5
        for s in &subs {
            assert_eq!(evaluate(s, &arm(), &[0.0; 3], &scene).unwrap().velocity, 0.0);
        }
        let near = [ObstacleState { name: "human".into(), position: Vector2::new(1.0, 0.4), radius: 0.1 }];
        let scene = Scene { obstacles: &near };
        let vy = evaluate(&subs[1], &arm(), &[0.0; 3], &scene).unwrap().velocity;
        // pushed in -y, away from the obstacle
        assert!((vy + 0.2).abs() < 1e-12);
        let vyaw = evaluate(&subs[2], &arm(), &[0.0; 3], &scene).unwrap().velocity;
        assert!(vyaw < 0.0);
        let missing = stack(&subs, &arm(), &[0.0; 3], &Scene::default());
        assert!(matches!(missing, Err(Error::UnknownObstacle(_))));
    }

    #[test]
    fn joint_limit_repulsion_is_monotone_inside_margin() {
        let s = ElementarySubtask {
            id: 0,
            parent: 0,
            kind: SubtaskKind::JointLimitRepulsion { joint: 0, lower: -1.0, upper: 1.0, margin: 0.2, gain: 1.0 },
            status: StatusParams::default(),
        };
        let at = |q0: f64| evaluate(&s, &arm(), &[q0, 0.0, 0.0], &Scene::default()).unwrap().velocity;
        assert_eq!(at(-0.79), 0.0);
        assert_eq!(at(0.79), 0.0);
        let mut prev = 0.0;
        for k in 1..=200 {
            let q0 = -0.8 - 0.2 * k as f64 / 200.0;
            let v = at(q0);
            assert!(v > 0.0 && v > prev, "not increasing at q0={q0}");
            prev = v;
        }
        // mirrored at the upper limit
        assert!(at(0.9) < 0.0);
    }

    #[test]
    fn stack_matches_individual_evaluations() {
        let subs = unitize(&[limits_spec(vec![2, 0]), obstacle_spec()], StatusParams::default()).unwrap();
        let obstacles = [ObstacleState { name: "human".into(), position: Vector2::new(0.9, 0.3), radius: 0.05 }];
        let scene = Scene { obstacles: &obstacles };
        let q = [0.3, -1.9, 1.85];
        let st = stack(&subs, &arm(), &q, &scene).unwrap();
        for s in &subs {
            let e = evaluate(s, &arm(), &q, &scene).unwrap();
            assert_eq!(st.velocities[s.id].to_bits(), e.velocity.to_bits());
            assert_eq!(st.jacobian.row(s.id).into_owned(), e.row);
        }
        let mut permuted = subs.clone();
        permuted.reverse();
        assert_eq!(stack(&permuted, &arm(), &q, &scene).unwrap(), st);
    }

    #[test]
    fn single_subtask_stack_equals_evaluation() {
        let subs = unitize(&[limits_spec(vec![1])], StatusParams::default()).unwrap();
        let q = [0.0, 1.9, 0.0];
        let st = stack(&subs, &arm(), &q, &Scene::default()).unwrap();
        let e = evaluate(&subs[0], &arm(), &q, &Scene::default()).unwrap();
        assert_eq!(st.len(), 1);
        assert_eq!(st.velocities[0], e.velocity);
        assert_eq!(st.jacobian.row(0).into_owned(), e.row);
    }

    #[test]
    fn status_reference_values() {
        let expected = 2.0 / (1.0 + 5f64.exp());
        assert!((task_status(0.0, 100.0, 0.05) - expected).abs() < 1e-15);
        assert!((task_status(0.0, 100.0, 0.05) - 0.0133857).abs() < 5e-7);
        assert_eq!(task_status(1e6, 100.0, 0.05), 1.0);
        assert_eq!(task_status(-1e6, 100.0, 0.05), 1.0);
        assert_eq!(task_status(f64::MAX, 100.0, 0.05), 1.0);
    }

    #[test]
    fn singularity_gradient_zero_for_base_rotation() {
        // rotating the whole planar arm leaves manipulability unchanged
        let s = ElementarySubtask {
            id: 0,
            parent: 0,
            kind: SubtaskKind::SingularityAvoidanceAxis {
                joint: 0,
                point: END_EFFECTOR.into(),
                axes: vec![Axis::X, Axis::Y],
                gain: 1.0,
            },
            status: StatusParams::default(),
        };
        let v = evaluate(&s, &arm(), &[0.4, 0.8, -0.3], &Scene::default()).unwrap().velocity;
        assert!(v.abs() < 1e-8);
    }
}
