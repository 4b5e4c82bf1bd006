//! Closed-loop kinematic rollout with explicit Euler integration and a
//! fixed-layout time-series log.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::control::{resolve_merged, resolve_two, ControlFrame, InnerInverse};
use crate::kinematics::{self, Axis, KinematicChain};
use crate::merging::{self, init_merging, MergingState, StatusMatrix, SATURATION_TOLERANCE};
use crate::scenario::{has_errors, Diagnostic, Mode, ScenarioConfig};
use crate::subtasks::{self, ElementarySubtask, ObstacleState, Scene};
use crate::Error;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid scenario ({} problem(s))", .0.iter().filter(|d| d.severity == crate::Severity::Error).count())]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Model(#[from] Error),
    #[error("run aborted at t = {t}: {reason}")]
    Aborted { t: f64, reason: String, partial: Box<LogSeries> },
    #[error("writing log: {0}")]
    Io(#[from] std::io::Error),
}

/// Column layout of a log: `t`, `q_*`, `err_*`, `xs_*`, `fbar_*`, `A_ij`
/// (row-major), `aux_*`, `qd_*`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLayout {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub r: usize,
    pub gamma: f64,
    /// `<point>_<axis>` for each primary row.
    pub primary_labels: Vec<String>,
    pub subtask_labels: Vec<String>,
    pub subtask_parents: Vec<usize>,
    /// Auxiliary column names without the `aux_` prefix.
    pub aux_names: Vec<String>,
}

impl LogLayout {
    pub fn q_col(&self, j: usize) -> usize {
        1 + j
    }
    pub fn err_col(&self, i: usize) -> usize {
        1 + self.n + i
    }
    pub fn xs_col(&self, j: usize) -> usize {
        1 + self.n + self.m + j
    }
    pub fn fbar_col(&self, j: usize) -> usize {
        1 + self.n + self.m + self.l + j
    }
    pub fn a_col(&self, i: usize, j: usize) -> usize {
        1 + self.n + self.m + 2 * self.l + i * self.l + j
    }
    fn aux_start(&self) -> usize {
        1 + self.n + self.m + 2 * self.l + self.r * self.l
    }
    pub fn aux_col(&self, name: &str) -> Option<usize> {
        self.aux_names.iter().position(|a| a == name).map(|k| self.aux_start() + k)
    }
    pub fn qd_col(&self, j: usize) -> usize {
        self.aux_start() + self.aux_names.len() + j
    }
    pub fn width(&self) -> usize {
        self.qd_col(self.n)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((0..self.n).map(|j| format!("q_{j}")));
        h.extend((0..self.m).map(|i| format!("err_{i}")));
        h.extend((0..self.l).map(|j| format!("xs_{j}")));
        h.extend((0..self.l).map(|j| format!("fbar_{j}")));
        for i in 0..self.r {
            h.extend((0..self.l).map(|j| format!("A_{i}{j}")));
        }
        h.extend(self.aux_names.iter().map(|a| format!("aux_{a}")));
        h.extend((0..self.n).map(|j| format!("qd_{j}")));
        h
    }
}

/// Recorded run: one row per control step, laid out by [`LogLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogSeries {
    pub layout: LogLayout,
    pub mode: Mode,
    pub records: Vec<Vec<f64>>,
}

impl LogSeries {
    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(move |r| r[col])
    }

    pub fn aux(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.layout.aux_col(name)?;
        Some(self.column(c).collect())
    }

    /// Auxiliary columns whose name starts with `prefix`.
    pub fn aux_matching(&self, prefix: &str) -> Vec<(String, Vec<f64>)> {
        self.layout
            .aux_names
            .iter()
            .filter(|n| n.starts_with(prefix))
            .map(|n| (n.clone(), self.aux(n).unwrap()))
            .collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.column(0).collect()
    }

    /// Largest absolute primary tracking error over the run.
    pub fn max_primary_error(&self) -> f64 {
        let lay = &self.layout;
        self.records
            .iter()
            .flat_map(|r| (0..lay.m).map(move |i| r[lay.err_col(i)].abs()))
            .fold(0.0, f64::max)
    }

    /// Minimum over time of every auxiliary column starting with `prefix`.
    pub fn min_aux(&self, prefix: &str) -> Option<f64> {
        let cols = self.aux_matching(prefix);
        if cols.is_empty() {
            return None;
        }
        Some(cols.iter().flat_map(|(_, v)| v.iter().cloned()).fold(f64::INFINITY, f64::min))
    }

    pub fn weights_at(&self, k: usize) -> DMatrix<f64> {
        let lay = &self.layout;
        DMatrix::from_fn(lay.r, lay.l, |i, j| self.records[k][lay.a_col(i, j)])
    }

    /// Number of times an entry of `A` reaches `γ` from below.
    pub fn saturation_events(&self) -> usize {
        let lay = &self.layout;
        let level = lay.gamma - SATURATION_TOLERANCE;
        let mut count = 0;
        for w in self.records.windows(2) {
            for i in 0..lay.r {
                for j in 0..lay.l {
                    let c = lay.a_col(i, j);
                    if w[0][c] < level && w[1][c] >= level {
                        count += 1;
                    }
                }
            }
        }
        count
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn write_header<W: Write>(w: &mut W, layout: &LogLayout) -> std::io::Result<()> {
    writeln!(w, "{}", layout.header().join(","))
}

pub fn write_record<W: Write>(w: &mut W, record: &[f64]) -> std::io::Result<()> {
    let line: Vec<String> = record.iter().map(|&v| fmt_value(v)).collect();
    writeln!(w, "{}", line.join(","))
}

/// Stepwise simulation state. Each [`Simulation::step`] computes `q̇` from
/// the current `A_k`, logs the record, advances `A` and integrates `q`.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: ScenarioConfig,
    chain: KinematicChain,
    subtasks: Vec<ElementarySubtask>,
    starts: Vec<Vec<f64>>,
    allocation: MergingState,
    /// `l <= r`: every subtask gets its own redundancy through the two-priority law.
    sufficient: bool,
    layout: LogLayout,
    q: Vec<f64>,
    k: usize,
    steps: usize,
    inner: InnerInverse,
}

impl Simulation {
    pub fn new(config: &ScenarioConfig) -> Result<Self, RunError> {
        let diags = config.validate();
        if has_errors(&diags) {
            return Err(RunError::Invalid(diags));
        }
        let chain = config.chain.build()?;
        let subtasks = subtasks::unitize(&config.subtasks, config.merging.status_defaults())?;
        let n = chain.dof();
        let m = config.primary.rows();
        let l = subtasks.len();
        let r = n - m;
        let gamma = config.merging.gamma;
        let sufficient = l <= r;
        let allocation = if sufficient {
            // identity allocation, logged for reference only
            let mut w = DMatrix::zeros(r, l);
            for j in 0..l {
                w[(j, j)] = gamma;
            }
            MergingState::static_allocation(w, gamma, config.merging_dt())
        } else {
            init_merging(r, l, gamma, config.merging_dt())?
        };

        let q0 = config.sim.q0.clone();
        let mut starts = Vec::new();
        let mut primary_labels = Vec::new();
        for task in &config.primary.tasks {
            let pose = kinematics::forward_kinematics(&chain, &q0, &task.point)?;
            starts.push(task.axes.iter().map(|&a| pose.coord(a)).collect());
            primary_labels.extend(task.axes.iter().map(|a| format!("{}_{}", task.point, a.name())));
        }

        let obstacles = obstacle_states(config, 0.0);
        let scene = Scene { obstacles: &obstacles };
        let mut aux_names: Vec<String> = Vec::new();
        for s in &subtasks {
            let (name, _) = subtasks::metric(s, &chain, &q0, &scene)?;
            if !aux_names.contains(&name) {
                aux_names.push(name);
            }
        }
        aux_names.extend(["residual", "gram_cond", "damped"].map(String::from));
        for label in &primary_labels {
            aux_names.push(format!("x1_{label}"));
            aux_names.push(format!("ref_{label}"));
            aux_names.push(format!("xd1_{label}"));
        }
        for o in &config.obstacles {
            aux_names.push(format!("obs_{}_x", o.name));
            aux_names.push(format!("obs_{}_y", o.name));
        }

        let mut sorted = subtasks.clone();
        sorted.sort_by_key(|s| s.id);
        let layout = LogLayout {
            n,
            m,
            l,
            r,
            gamma,
            primary_labels,
            subtask_labels: sorted.iter().map(|s| s.kind.label()).collect(),
            subtask_parents: sorted.iter().map(|s| s.parent).collect(),
            aux_names,
        };
        Ok(Self {
            config: config.clone(),
            chain,
            subtasks,
            starts,
            allocation,
            sufficient,
            layout,
            q: q0,
            k: 0,
            steps: config.sim.steps(),
            inner: InnerInverse::Adaptive,
        })
    }

    /// Overrides how the inner Gram matrix is inverted (adaptive by default).
    pub fn with_inner_inverse(mut self, inner: InnerInverse) -> Self {
        self.inner = inner;
        self
    }

    pub fn layout(&self) -> &LogLayout {
        &self.layout
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn weights(&self) -> &MergingState {
        &self.allocation
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.config.sim.step
    }

    pub fn is_done(&self) -> bool {
        self.k > self.steps
    }

    /// Runs one control tick and returns its log record. On a non-finite
    /// joint velocity the record is still returned, with NaN velocities, in
    /// the error.
    pub fn step(&mut self) -> Result<Vec<f64>, (Vec<f64>, String)> {
        let t = self.time();
        let lay = &self.layout;
        let mut record = vec![f64::NAN; lay.width()];
        record[0] = t;
        for j in 0..lay.n {
            record[lay.q_col(j)] = self.q[j];
        }
        match self.tick(t, &mut record) {
            Ok(qd) => {
                let dt = self.config.sim.step;
                for (q, v) in self.q.iter_mut().zip(qd.iter()) {
                    *q += v * dt;
                }
                self.k += 1;
                Ok(record)
            }
            Err(reason) => {
                self.k = self.steps + 1;
                Err((record, reason))
            }
        }
    }

    fn tick(&mut self, t: f64, record: &mut [f64]) -> Result<DVector<f64>, String> {
        let lay = self.layout.clone();
        let obstacles = obstacle_states(&self.config, t);
        let scene = Scene { obstacles: &obstacles };
        let q = &self.q;
        let st = subtasks::stack(&self.subtasks, &self.chain, q, &scene).map_err(|e| e.to_string())?;
        let status = StatusMatrix::from_velocities(&self.subtasks, &st.velocities).map_err(|e| e.to_string())?;

        // primary task
        let mut j_rows = Vec::new();
        let mut xd1 = Vec::new();
        let mut row = 0;
        for (task, start) in self.config.primary.tasks.iter().zip(&self.starts) {
            let pose = kinematics::forward_kinematics(&self.chain, q, &task.point).map_err(|e| e.to_string())?;
            let j = kinematics::jacobian(&self.chain, q, &task.point, &task.axes).map_err(|e| e.to_string())?;
            j_rows.extend(j.row_iter().map(|r| r.into_owned()));
            let (reference, ref_vel) = task.reference.sample(&task.axes, start, t);
            for (a, axis) in task.axes.iter().enumerate() {
                let actual = pose.coord(*axis);
                let err = match axis {
                    Axis::Yaw => wrap_angle(reference[a] - actual),
                    _ => reference[a] - actual,
                };
                let v = ref_vel[a] + self.config.primary.gain * err;
                let label = &lay.primary_labels[row];
                record[lay.err_col(row)] = err;
                record[lay.aux_col(&format!("x1_{label}")).unwrap()] = actual;
                record[lay.aux_col(&format!("ref_{label}")).unwrap()] = reference[a];
                record[lay.aux_col(&format!("xd1_{label}")).unwrap()] = v;
                xd1.push(v);
                row += 1;
            }
        }
        let j1 = DMatrix::from_rows(&j_rows);
        let xd1 = DVector::from_vec(xd1);

        for j in 0..lay.l {
            record[lay.xs_col(j)] = st.velocities[j];
            record[lay.fbar_col(j)] = status.0[j];
        }
        let a = self.allocation.weights();
        for i in 0..lay.r {
            for j in 0..lay.l {
                record[lay.a_col(i, j)] = a[(i, j)];
            }
        }
        for s in &self.subtasks {
            let (name, value) = subtasks::metric(s, &self.chain, q, &scene).map_err(|e| e.to_string())?;
            record[lay.aux_col(&name).unwrap()] = value;
        }
        for o in &obstacles {
            record[lay.aux_col(&format!("obs_{}_x", o.name)).unwrap()] = o.position.x;
            record[lay.aux_col(&format!("obs_{}_y", o.name)).unwrap()] = o.position.y;
        }

        let damping = self.config.merging.damping;
        let (qd, residual, cond, damped) = if self.sufficient {
            let qd = resolve_two(&j1, &xd1, &st.jacobian, &st.velocities, damping).map_err(|e| e.to_string())?;
            let res = (&j1 * &qd - &xd1).amax();
            (qd, res, f64::NAN, 0.0)
        } else {
            let out = resolve_merged(&ControlFrame {
                primary_jacobian: &j1,
                primary_velocity: &xd1,
                subtasks: &st,
                weights: a,
                damping,
                inner: self.inner,
            });
            match out {
                Ok(o) => (o.qd, o.primary_residual, o.gram_condition, if o.damped { 1.0 } else { 0.0 }),
                Err(Error::NonFinite(what)) => return Err(format!("non-finite {what}")),
                Err(e) => return Err(e.to_string()),
            }
        };
        if qd.iter().any(|v| !v.is_finite()) {
            return Err("non-finite joint velocity".into());
        }
        record[lay.aux_col("residual").unwrap()] = residual;
        record[lay.aux_col("gram_cond").unwrap()] = cond;
        record[lay.aux_col("damped").unwrap()] = damped;
        for j in 0..lay.n {
            record[lay.qd_col(j)] = qd[j];
        }

        if self.config.mode == Mode::Merged && !self.sufficient {
            let p = merging::soft_priority(&self.allocation);
            let rate = merging::wta_rate(&p, &status, &self.allocation).map_err(|e| e.to_string())?;
            self.allocation = merging::step_merging(&self.allocation, &rate).map_err(|e| e.to_string())?;
        }
        Ok(qd)
    }
}

fn obstacle_states(config: &ScenarioConfig, t: f64) -> Vec<ObstacleState> {
    config
        .obstacles
        .iter()
        .map(|o| ObstacleState { name: o.name.clone(), position: o.position(t), radius: o.radius })
        .collect()
}

/// Runs a scenario to completion in memory.
pub fn run(config: &ScenarioConfig) -> Result<LogSeries, RunError> {
    run_to_writer(config, &mut std::io::sink())
}

/// Runs a scenario while streaming the CSV log to `out`. A partial log is
/// flushed before an abort is reported.
pub fn run_to_writer<W: Write>(config: &ScenarioConfig, out: &mut W) -> Result<LogSeries, RunError> {
    let mut sim = Simulation::new(config)?;
    let layout = sim.layout().clone();
    write_header(out, &layout)?;
    let mut series = LogSeries { layout, mode: config.mode, records: Vec::with_capacity(sim.steps + 1) };
    while !sim.is_done() {
        let t = sim.time();
        match sim.step() {
            Ok(record) => {
                write_record(out, &record)?;
                series.records.push(record);
            }
            Err((record, reason)) => {
                write_record(out, &record)?;
                out.flush()?;
                series.records.push(record);
                return Err(RunError::Aborted { t, reason, partial: Box::new(series) });
            }
        }
    }
    out.flush()?;
    Ok(series)
}
