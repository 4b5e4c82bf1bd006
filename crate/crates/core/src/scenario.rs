//! Declarative scenario description (chain, primary task, subtasks, merging
//! parameters, scripted obstacles, integration settings) and its validation.

use std::f64::consts::PI;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::DEFAULT_DAMPING;
use crate::kinematics::{self, Axis, JointKind, KinematicChain, PointOfInterest, SlideAxis};
use crate::subtasks::{self, StatusParams, SubtaskSpec, DEFAULT_STATUS_RANGE, DEFAULT_STATUS_SLOPE};

pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_PRIMARY_GAIN: f64 = 5.0;
pub const DEFAULT_STEP: f64 = 0.01;

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}
fn default_damping() -> f64 {
    DEFAULT_DAMPING
}
fn default_slope() -> f64 {
    DEFAULT_STATUS_SLOPE
}
fn default_range() -> f64 {
    DEFAULT_STATUS_RANGE
}
fn default_primary_gain() -> f64 {
    DEFAULT_PRIMARY_GAIN
}
fn default_step() -> f64 {
    DEFAULT_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub chain: ChainConfig,
    pub primary: PrimaryConfig,
    pub subtasks: Vec<SubtaskSpec>,
    #[serde(default)]
    pub merging: MergingConfig,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub obstacles: Vec<ObstacleScript>,
    pub sim: SimConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub points: Vec<PointSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum JointSpec {
    Revolute { length: f64 },
    Prismatic { axis: SlideAxis },
    /// Expands to x slide, y slide and yaw carrying the arm mount.
    PlanarBase { mount: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub name: String,
    /// Joint index whose outgoing frame carries the point; absent for the world origin.
    #[serde(default)]
    pub frame: Option<usize>,
    #[serde(default)]
    pub offset: [f64; 2],
}

impl ChainConfig {
    pub fn build(&self) -> crate::Result<KinematicChain> {
        let mut joints = Vec::new();
        for j in &self.joints {
            match *j {
                JointSpec::Revolute { length } => joints.push(JointKind::Revolute { length }),
                JointSpec::Prismatic { axis } => joints.push(JointKind::Prismatic { axis }),
                JointSpec::PlanarBase { mount } => joints.extend(KinematicChain::planar_base(mount)),
            }
        }
        let points = self
            .points
            .iter()
            .map(|p| PointOfInterest { name: p.name.clone(), frame: p.frame, offset: Vector2::new(p.offset[0], p.offset[1]) })
            .collect();
        KinematicChain::new(joints, points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimaryConfig {
    pub tasks: Vec<PrimaryTask>,
    /// Feedback gain `K_p` (1/s) on the task-space tracking error.
    #[serde(default = "default_primary_gain")]
    pub gain: f64,
}

impl PrimaryConfig {
    /// Number of primary rows `m`.
    pub fn rows(&self) -> usize {
        self.tasks.iter().map(|t| t.axes.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimaryTask {
    pub point: String,
    pub axes: Vec<Axis>,
    pub reference: Reference,
}

/// Reference motion of a primary task block, relative to the pose the
/// block's point has at the initial configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    Hold,
    /// Constant velocity per axis.
    Line { velocity: Vec<f64> },
    /// Circle through the start position in the x-y plane; other axes hold.
    Circle {
        radius: f64,
        period: f64,
        /// Angle (rad) of the start position as seen from the circle center.
        #[serde(default)]
        phase: f64,
    },
    /// Rows `[t, offset_1, ..., offset_k]`; smoothstep blend between
    /// consecutive waypoints, an implicit zero offset at `t = 0`, hold after the last.
    Waypoints { points: Vec<Vec<f64>> },
}

impl Reference {
    /// Reference value and velocity of each axis at time `t` given the start values.
    pub fn sample(&self, axes: &[Axis], start: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let k = axes.len();
        match self {
            Reference::Hold => (start.to_vec(), vec![0.0; k]),
            Reference::Line { velocity } => {
                (start.iter().zip(velocity).map(|(s, v)| s + v * t).collect(), velocity.clone())
            }
            Reference::Circle { radius, period, phase } => {
                let w = 2.0 * PI / period;
                let (ix, iy) = (axes.iter().position(|&a| a == Axis::X), axes.iter().position(|&a| a == Axis::Y));
                let mut value = start.to_vec();
                let mut vel = vec![0.0; k];
                if let (Some(ix), Some(iy)) = (ix, iy) {
                    let cx = start[ix] - radius * phase.cos();
                    let cy = start[iy] - radius * phase.sin();
                    let ang = phase + w * t;
                    value[ix] = cx + radius * ang.cos();
                    value[iy] = cy + radius * ang.sin();
                    vel[ix] = -radius * w * ang.sin();
                    vel[iy] = radius * w * ang.cos();
                }
                (value, vel)
            }
            Reference::Waypoints { points } => {
                let mut prev_t = 0.0;
                let mut prev: Vec<f64> = vec![0.0; k];
                for p in points {
                    let (tk, off) = (p[0], &p[1..]);
                    if t < tk {
                        let span = tk - prev_t;
                        let tau = ((t - prev_t) / span).clamp(0.0, 1.0);
                        let s = tau * tau * (3.0 - 2.0 * tau);
                        let ds = 6.0 * tau * (1.0 - tau) / span;
                        let value = (0..k).map(|i| start[i] + prev[i] + s * (off[i] - prev[i])).collect();
                        let vel = (0..k).map(|i| ds * (off[i] - prev[i])).collect();
                        return (value, vel);
                    }
                    prev_t = tk;
                    prev = off.to_vec();
                }
                ((0..k).map(|i| start[i] + prev[i]).collect(), vec![0.0; k])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergingConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Update interval of the merging matrix; defaults to the integration step.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Tikhonov damping of the inner inverse in the control law.
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_slope")]
    pub status_slope: f64,
    #[serde(default = "default_range")]
    pub status_range: f64,
}

impl Default for MergingConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            dt: None,
            damping: DEFAULT_DAMPING,
            status_slope: DEFAULT_STATUS_SLOPE,
            status_range: DEFAULT_STATUS_RANGE,
        }
    }
}

impl MergingConfig {
    pub fn status_defaults(&self) -> StatusParams {
        StatusParams { slope: self.status_slope, range: self.status_range }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Dynamic allocation through the winner-take-all update.
    #[default]
    Merged,
    /// Static allocation of the redundancies to the first `n - m` subtasks.
    Traditional,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Merged => "merged",
            Mode::Traditional => "traditional",
        }
    }
}

/// Point obstacle moving along a piecewise-linear script `[t, x, y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleScript {
    pub name: String,
    #[serde(default)]
    pub radius: f64,
    pub path: Vec<[f64; 3]>,
}

impl ObstacleScript {
    pub fn position(&self, t: f64) -> Vector2<f64> {
        let first = self.path[0];
        if t <= first[0] {
            return Vector2::new(first[1], first[2]);
        }
        for w in self.path.windows(2) {
            let (a, b) = (w[0], w[1]);
            if t <= b[0] {
                let s = if b[0] > a[0] { (t - a[0]) / (b[0] - a[0]) } else { 1.0 };
                return Vector2::new(a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2]));
            }
        }
        let last = self.path[self.path.len() - 1];
        Vector2::new(last[1], last[2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub duration: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    /// Initial joint positions.
    pub q0: Vec<f64>,
}

impl SimConfig {
    /// Number of integration steps; the log holds one more record.
    pub fn steps(&self) -> usize {
        (self.duration / self.step).round() as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub csv: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, message: message.into() }
    }
    fn warning(message: impl Into<String>) -> Self {
        Self { severity: Severity::Warning, message: message.into() }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Merging update interval, falling back to the integration step.
    pub fn merging_dt(&self) -> f64 {
        self.merging.dt.unwrap_or(self.sim.step)
    }

    /// Checks that the scenario can run. Returns warnings for configurations
    /// that run but do not exercise redundancy insufficiency.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let chain = match self.chain.build() {
            Ok(c) => c,
            Err(e) => {
                out.push(Diagnostic::error(e.to_string()));
                return out;
            }
        };
        let n = chain.dof();

        if !(self.sim.duration > 0.0 && self.sim.duration.is_finite()) {
            out.push(Diagnostic::error(format!("sim.duration must be positive, got {}", self.sim.duration)));
        }
        if !(self.sim.step > 0.0 && self.sim.step.is_finite()) {
            out.push(Diagnostic::error(format!("sim.step must be positive, got {}", self.sim.step)));
        }
        let q0_ok = self.sim.q0.len() == n && self.sim.q0.iter().all(|v| v.is_finite());
        if self.sim.q0.len() != n {
            out.push(Diagnostic::error(format!("sim.q0 has {} entries but the chain has {n} joints", self.sim.q0.len())));
        } else if !q0_ok {
            out.push(Diagnostic::error("sim.q0 contains non-finite values"));
        }
        if !(0.5..=1.0).contains(&self.merging.gamma) {
            out.push(Diagnostic::error(format!("merging.gamma must lie in [0.5, 1], got {}", self.merging.gamma)));
        }
        let mdt = self.merging_dt();
        if !(mdt > 0.0 && mdt.is_finite()) {
            out.push(Diagnostic::error(format!("merging.dt must be positive, got {mdt}")));
        }
        if !(self.merging.damping >= 0.0 && self.merging.damping.is_finite()) {
            out.push(Diagnostic::error(format!("merging.damping must be non-negative, got {}", self.merging.damping)));
        }
        if !(self.primary.gain >= 0.0 && self.primary.gain.is_finite()) {
            out.push(Diagnostic::error(format!("primary.gain must be non-negative, got {}", self.primary.gain)));
        }

        for (k, o) in self.obstacles.iter().enumerate() {
            if o.path.is_empty() {
                out.push(Diagnostic::error(format!("obstacle '{}' has an empty path", o.name)));
            }
            if o.path.windows(2).any(|w| w[1][0] < w[0][0]) {
                out.push(Diagnostic::error(format!("obstacle '{}' path times must be non-decreasing", o.name)));
            }
            if !(o.radius >= 0.0) {
                out.push(Diagnostic::error(format!("obstacle '{}' radius must be non-negative", o.name)));
            }
            if self.obstacles[..k].iter().any(|p| p.name == o.name) {
                out.push(Diagnostic::error(format!("duplicate obstacle name '{}'", o.name)));
            }
        }

        let m = self.primary.rows();
        if self.primary.tasks.is_empty() || m == 0 {
            out.push(Diagnostic::error("primary task needs at least one row"));
        }
        for (b, task) in self.primary.tasks.iter().enumerate() {
            if chain.point(&task.point).is_err() {
                out.push(Diagnostic::error(format!("primary task {b}: unknown point '{}'", task.point)));
            }
            if task.axes.is_empty() {
                out.push(Diagnostic::error(format!("primary task {b}: empty axis list")));
            }
            match &task.reference {
                Reference::Line { velocity } if velocity.len() != task.axes.len() => {
                    out.push(Diagnostic::error(format!(
                        "primary task {b}: line velocity has {} entries for {} axes",
                        velocity.len(),
                        task.axes.len()
                    )));
                }
                Reference::Circle { radius, period, .. } => {
                    if !(task.axes.contains(&Axis::X) && task.axes.contains(&Axis::Y)) {
                        out.push(Diagnostic::error(format!("primary task {b}: circle reference needs x and y axes")));
                    }
                    if !(*radius > 0.0 && *period > 0.0) {
                        out.push(Diagnostic::error(format!("primary task {b}: circle radius and period must be positive")));
                    }
                }
                Reference::Waypoints { points } => {
                    let mut last_t = 0.0;
                    for (w, p) in points.iter().enumerate() {
                        if p.len() != task.axes.len() + 1 {
                            out.push(Diagnostic::error(format!(
                                "primary task {b}: waypoint {w} needs {} numbers [t, offsets...]",
                                task.axes.len() + 1
                            )));
                        } else if !(p[0] > last_t) {
                            out.push(Diagnostic::error(format!("primary task {b}: waypoint {w} time must increase")));
                        } else {
                            last_t = p[0];
                        }
                    }
                    if points.is_empty() {
                        out.push(Diagnostic::error(format!("primary task {b}: no waypoints")));
                    }
                }
                _ => {}
            }
        }
        if m >= n && m > 0 {
            out.push(Diagnostic::error(format!("primary task uses {m} rows of a {n}-joint chain, leaving no redundancy")));
        }

        let subtasks = match subtasks::unitize(&self.subtasks, self.merging.status_defaults()) {
            Ok(s) => s,
            Err(e) => {
                out.push(Diagnostic::error(format!("subtasks: {e}")));
                return out;
            }
        };
        for s in &subtasks {
            let problem = match &s.kind {
                subtasks::SubtaskKind::JointSetpoint { joint, .. }
                | subtasks::SubtaskKind::JointLimitRepulsion { joint, .. } => {
                    (*joint >= n).then(|| format!("joint {joint} out of range"))
                }
                subtasks::SubtaskKind::ObstacleClearanceAxis { point, obstacle, .. } => {
                    if chain.point(point).is_err() {
                        Some(format!("unknown point '{point}'"))
                    } else if !self.obstacles.iter().any(|o| &o.name == obstacle) {
                        Some(format!("unknown obstacle '{obstacle}'"))
                    } else {
                        None
                    }
                }
                subtasks::SubtaskKind::SingularityAvoidanceAxis { joint, point, .. } => {
                    if *joint >= n {
                        Some(format!("joint {joint} out of range"))
                    } else {
                        chain.point(point).err().map(|_| format!("unknown point '{point}'"))
                    }
                }
            };
            if let Some(p) = problem {
                out.push(Diagnostic::error(format!("subtask {} ({}): {p}", s.id, s.kind.label())));
            }
        }

        if has_errors(&out) {
            return out;
        }

        let r = n - m;
        let l = subtasks.len();
        if l <= r {
            out.push(Diagnostic::warning(format!(
                "insufficiency regime not exercised: {l} elementary subtasks for {r} redundancies"
            )));
        }
        if let Some(d) = self.primary_rank_check(&chain) {
            out.push(d);
        }
        out.extend(self.reachability(&chain));
        out
    }

    fn primary_rank_check(&self, chain: &KinematicChain) -> Option<Diagnostic> {
        let mut rows = Vec::new();
        for task in &self.primary.tasks {
            let j = kinematics::jacobian(chain, &self.sim.q0, &task.point, &task.axes).ok()?;
            rows.extend(j.row_iter().map(|r| r.into_owned()));
        }
        let j1 = nalgebra::DMatrix::from_rows(&rows);
        let rank = kinematics::pseudoinverse(&j1, 0.0).rank;
        (rank < rows.len())
            .then(|| Diagnostic::error(format!("primary Jacobian has rank {rank} < {} at the initial configuration", rows.len())))
    }

    /// Sweeps the reference of every planar-position block and checks it
    /// stays within the link lengths separating it from a fixed anchor (the
    /// world origin, or another block's point with no slide in between).
    fn reachability(&self, chain: &KinematicChain) -> Vec<Diagnostic> {
        let q0 = &self.sim.q0;
        struct Block<'a> {
            name: &'a str,
            frame: Option<usize>,
            offset: f64,
            ix: usize,
            iy: usize,
            task: &'a PrimaryTask,
            start: Vec<f64>,
        }
        let mut blocks = Vec::new();
        for task in &self.primary.tasks {
            let (Some(ix), Some(iy)) =
                (task.axes.iter().position(|&a| a == Axis::X), task.axes.iter().position(|&a| a == Axis::Y))
            else {
                continue;
            };
            let Ok(poi) = chain.point(&task.point) else { continue };
            let Ok(pose) = kinematics::forward_kinematics(chain, q0, &task.point) else { continue };
            blocks.push(Block {
                name: &task.point,
                frame: poi.frame,
                offset: poi.offset.norm(),
                ix,
                iy,
                task,
                start: task.axes.iter().map(|&a| pose.coord(a)).collect(),
            });
        }
        let no_slide = |from: usize, to: usize| {
            chain.joints()[from..=to].iter().all(|j| matches!(j, JointKind::Revolute { .. }))
        };
        let mut times: Vec<(f64, String)> = Vec::new();
        let steps = self.sim.steps();
        for k in 0..=steps {
            times.push((k as f64 * self.sim.step, format!("sample {k}")));
        }
        let mut out = Vec::new();
        for a in &blocks {
            let Some(fa) = a.frame else { continue };
            // candidate anchors: world origin, or a proximal block
            let mut anchors: Vec<(&str, Option<&Block>, f64)> = Vec::new();
            if no_slide(0, fa) {
                anchors.push(("world origin", None, chain.link_length_between(0, fa) + a.offset));
            }
            for b in &blocks {
                if let Some(fb) = b.frame {
                    if fb < fa && no_slide(fb + 1, fa) {
                        anchors.push((b.name, Some(b), chain.link_length_between(fb + 1, fa) + a.offset + b.offset));
                    }
                }
            }
            if anchors.is_empty() {
                continue;
            }
            let mut check_times = Vec::new();
            if let Reference::Waypoints { points } = &a.task.reference {
                for (w, p) in points.iter().enumerate() {
                    check_times.push((p[0], format!("waypoint {w}")));
                }
            }
            check_times.extend(times.iter().cloned());
            'outer: for (t, label) in &check_times {
                let (va, _) = a.task.reference.sample(&a.task.axes, &a.start, *t);
                let pa = Vector2::new(va[a.ix], va[a.iy]);
                for (anchor_name, anchor, reach) in &anchors {
                    let pb = match anchor {
                        None => Vector2::zeros(),
                        Some(b) => {
                            let (vb, _) = b.task.reference.sample(&b.task.axes, &b.start, *t);
                            Vector2::new(vb[b.ix], vb[b.iy])
                        }
                    };
                    let dist = (pa - pb).norm();
                    if dist > reach + 1e-9 {
                        out.push(Diagnostic::error(format!(
                            "unreachable reference for point '{}' at {label} (t = {t:.3} s): {dist:.4} m from {anchor_name}, reach {reach:.4} m",
                            a.name
                        )));
                        break 'outer;
                    }
                }
            }
        }
        out
    }
}

/// Random small arm scenario for property tests: a planar revolute arm, a
/// primary end-effector task, and more joint-space subtasks than
/// redundancies.
pub fn random_scenario(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=7usize);
    let lengths: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.6)).collect();
    let q0: Vec<f64> = (0..n).map(|k| if k == 0 { rng.random_range(-1.0..1.0) } else { rng.random_range(0.3..0.9) }).collect();
    let axes = if rng.random_bool(0.5) { vec![Axis::X, Axis::Y] } else { vec![Axis::X, Axis::Y, Axis::Yaw] };
    let m = axes.len();
    let r = n - m;
    let reference = if rng.random_bool(0.5) {
        Reference::Circle { radius: rng.random_range(0.02..0.08), period: rng.random_range(2.0..6.0), phase: 0.0 }
    } else {
        let mut v = vec![rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03)];
        if m == 3 {
            v.push(0.0);
        }
        Reference::Line { velocity: v }
    };
    // joint-space subtasks, at least r + 1 of them
    let l = rng.random_range(r + 1..=r + 3);
    let mut specs = Vec::new();
    let mut remaining = l;
    while remaining > 0 {
        let k = rng.random_range(1..=remaining.min(3));
        let joints: Vec<usize> = (0..k).map(|_| rng.random_range(1..n)).collect();
        if rng.random_bool(0.5) {
            specs.push(SubtaskSpec::JointSetpoint {
                targets: joints.iter().map(|&j| q0[j] + rng.random_range(-0.3..0.3)).collect(),
                joints,
                gain: rng.random_range(0.5..2.0),
                status_slope: None,
                status_range: None,
            });
        } else {
            specs.push(SubtaskSpec::JointLimits {
                lower: joints.iter().map(|&j| q0[j] - rng.random_range(0.1..0.4)).collect(),
                upper: joints.iter().map(|&j| q0[j] + rng.random_range(0.5..1.5)).collect(),
                joints,
                margin: 0.2,
                gain: 1.0,
                status_slope: None,
                status_range: None,
            });
        }
        remaining -= k;
    }
    ScenarioConfig {
        chain: ChainConfig { joints: lengths.iter().map(|&length| JointSpec::Revolute { length }).collect(), points: vec![] },
        primary: PrimaryConfig {
            tasks: vec![PrimaryTask { point: kinematics::END_EFFECTOR.into(), axes, reference }],
            gain: DEFAULT_PRIMARY_GAIN,
        },
        subtasks: specs,
        merging: MergingConfig::default(),
        mode: if rng.random_bool(0.5) { Mode::Merged } else { Mode::Traditional },
        obstacles: vec![],
        sim: SimConfig { duration: 1.0, step: DEFAULT_STEP, q0 },
        output: OutputConfig::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_link_circle(radius: f64) -> ScenarioConfig {
        ScenarioConfig {
            chain: ChainConfig {
                joints: vec![
                    JointSpec::Revolute { length: 1.0 },
                    JointSpec::Revolute { length: 1.0 },
                    JointSpec::Revolute { length: 0.5 },
                ],
                points: vec![],
            },
            primary: PrimaryConfig {
                tasks: vec![PrimaryTask {
                    point: "ee".into(),
                    axes: vec![Axis::X, Axis::Y],
                    reference: Reference::Circle { radius, period: 4.0, phase: 0.0 },
                }],
                gain: 5.0,
            },
            subtasks: vec![SubtaskSpec::JointSetpoint {
                joints: vec![1, 2],
                targets: vec![0.5, 0.5],
                gain: 1.0,
                status_slope: None,
                status_range: None,
            }],
            merging: MergingConfig::default(),
            mode: Mode::Merged,
            obstacles: vec![],
            sim: SimConfig { duration: 4.0, step: 0.01, q0: vec![0.0, 0.6, 0.6] },
            output: OutputConfig::default(),
        }
    }

    #[test]
    fn circle_within_reach_validates() {
        let d = two_link_circle(0.2).validate();
        assert!(d.is_empty(), "{d:?}");
    }

    #[test]
    fn circle_beyond_reach_names_first_failing_sample() {
        let cfg = two_link_circle(1.5);
        let d = cfg.validate();
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].severity, Severity::Error);
        // independent FK sweep: first sample whose reference leaves the 2.5 m disc
        let start = kinematics::forward_kinematics(&cfg.chain.build().unwrap(), &cfg.sim.q0, "ee").unwrap();
        let first = (0..=cfg.sim.steps())
            .find(|&k| {
                let t = k as f64 * cfg.sim.step;
                let a = 2.0 * PI * t / 4.0;
                let p = Vector2::new(start.x - 1.5 + 1.5 * a.cos(), start.y + 1.5 * a.sin());
                p.norm() > 2.5 + 1e-9
            })
            .unwrap();
        assert!(d[0].message.contains(&format!("sample {first} ")), "{}", d[0].message);
    }

    #[test]
    fn too_few_subtasks_is_a_warning() {
        let mut cfg = two_link_circle(0.2);
        cfg.subtasks = vec![SubtaskSpec::JointSetpoint {
            joints: vec![1],
            targets: vec![0.5],
            gain: 1.0,
            status_slope: None,
            status_range: None,
        }];
        let d = cfg.validate();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].severity, Severity::Warning);
        assert!(d[0].message.contains("insufficiency regime not exercised"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let cfg = two_link_circle(0.2);
        let mut v = serde_json::to_value(&cfg).unwrap();
        v.as_object_mut().unwrap().insert("subtaskss".into(), serde_json::json!([]));
        let err = serde_json::from_value::<ScenarioConfig>(v).unwrap_err();
        assert!(err.to_string().contains("subtaskss"), "{err}");
    }

    #[test]
    fn waypoint_reference_blends_and_holds() {
        let r = Reference::Waypoints { points: vec![vec![1.0, 2.0], vec![3.0, 0.0]] };
        let axes = [Axis::X];
        assert_eq!(r.sample(&axes, &[1.0], 0.0).0, vec![1.0]);
        assert_eq!(r.sample(&axes, &[1.0], 0.5).0, vec![2.0]);
        assert_eq!(r.sample(&axes, &[1.0], 1.0).0, vec![3.0]);
        assert_eq!(r.sample(&axes, &[1.0], 2.0).0, vec![2.0]);
        let (v, d) = r.sample(&axes, &[1.0], 5.0);
        assert_eq!((v, d), (vec![1.0], vec![0.0]));
        // velocity consistent with a central difference
        let h = 1e-6;
        let fd = (r.sample(&axes, &[1.0], 0.3 + h).0[0] - r.sample(&axes, &[1.0], 0.3 - h).0[0]) / (2.0 * h);
        assert!((fd - r.sample(&axes, &[1.0], 0.3).1[0]).abs() < 1e-6);
    }

    #[test]
    fn obstacle_script_interpolates() {
        let o = ObstacleScript { name: "h".into(), radius: 0.1, path: vec![[1.0, 0.0, 0.0], [3.0, 2.0, -2.0]] };
        assert_eq!(o.position(0.0), Vector2::new(0.0, 0.0));
        assert_eq!(o.position(2.0), Vector2::new(1.0, -1.0));
        assert_eq!(o.position(9.0), Vector2::new(2.0, -2.0));
    }

    #[test]
    fn random_scenarios_validate() {
        for seed in 0..50 {
            let cfg = random_scenario(seed);
            let d = cfg.validate();
            assert!(!has_errors(&d), "seed {seed}: {d:?}");
        }
    }
}
