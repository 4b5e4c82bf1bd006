#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskmux::{JointKind, KinematicChain, MergingState, PointOfInterest, ScenarioConfig, SlideAxis, StatusMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn shipped(name: &str) -> ScenarioConfig {
    let text = std::fs::read_to_string(scenario_path(name)).expect("shipped scenario readable");
    ScenarioConfig::from_json(&text).expect("shipped scenario parses")
}

pub fn shipped_names() -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();
    names
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn uniform_vector(rng: &mut impl Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0))
}

/// Random valid merging weights: rows on the simplex scaled by `gamma`, with
/// some rows saturated on one column and some entries exactly zero.
pub fn random_weights(rng: &mut impl Rng, r: usize, l: usize, gamma: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(r, l);
    for i in 0..r {
        if rng.random_bool(0.3) {
            a[(i, rng.random_range(0..l))] = gamma;
            continue;
        }
        let raw: Vec<f64> =
            (0..l).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            a[(i, 0)] = gamma;
            continue;
        }
        for j in 0..l {
            a[(i, j)] = gamma * raw[j] / total;
        }
        // push the rounding residue onto the largest entry so the row sums to gamma
        let sum: f64 = a.row(i).iter().sum();
        let big = (0..l).max_by(|&x, &y| a[(i, x)].total_cmp(&a[(i, y)])).unwrap();
        a[(i, big)] = (a[(i, big)] + gamma - sum).clamp(0.0, gamma);
    }
    a
}

pub fn random_status(rng: &mut impl Rng, l: usize) -> StatusMatrix {
    StatusMatrix(DVector::from_fn(l, |_, _| rng.random_range(0.0134..1.0)))
}

/// A merging instance with `r <= 4` and `l <= 8`.
pub struct MergingInstance {
    pub state: MergingState,
    pub status: StatusMatrix,
}

pub fn merging_instance(rng: &mut impl Rng) -> MergingInstance {
    let r = rng.random_range(1..=4);
    let l = rng.random_range(r + 1..=8);
    let gamma = rng.random_range(0.5..=1.0);
    let dt = rng.random_range(0.01..0.5);
    let weights = random_weights(rng, r, l, gamma);
    MergingInstance {
        state: MergingState::from_weights(weights, gamma, dt).expect("generated weights are valid"),
        status: random_status(rng, l),
    }
}

pub fn random_chain(rng: &mut impl Rng) -> (KinematicChain, Vec<f64>, Vec<String>) {
    let n = rng.random_range(2..=9);
    let joints: Vec<JointKind> = (0..n)
        .map(|_| {
            if rng.random_bool(0.2) {
                JointKind::Prismatic { axis: if rng.random_bool(0.5) { SlideAxis::X } else { SlideAxis::Y } }
            } else {
                JointKind::Revolute { length: rng.random_range(0.1..1.0) }
            }
        })
        .collect();
    let points = (0..rng.random_range(0..3))
        .map(|k| PointOfInterest {
            name: format!("p{k}"),
            frame: if rng.random_bool(0.1) { None } else { Some(rng.random_range(0..n)) },
            offset: Vector2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
        })
        .collect::<Vec<_>>();
    let mut names: Vec<String> = points.iter().map(|p| p.name.clone()).collect();
    names.push("ee".into());
    let q = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    (KinematicChain::new(joints, points).unwrap(), q, names)
}

/// Orthonormal basis of the null space of a full-row-rank `j`, built from the
/// eigenvectors of `I - Jᵀ(JJᵀ)⁻¹J` without any pseudoinverse.
pub fn null_basis(j: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.ncols();
    let gram = (j * j.transpose()).lu().try_inverse().expect("full row rank");
    let proj = DMatrix::identity(n, n) - j.transpose() * gram * j;
    let proj = (&proj + proj.transpose()) * 0.5;
    let eig = SymmetricEigen::new(proj);
    let cols: Vec<DVector<f64>> =
        (0..n).filter(|&k| eig.eigenvalues[k] > 0.5).map(|k| eig.eigenvectors.column(k).into_owned()).collect();
    DMatrix::from_columns(&cols)
}

/// Minimum-norm solution of `b x = c` for a full-row-rank `b`.
pub fn min_norm_solve(b: &DMatrix<f64>, c: &DVector<f64>) -> DVector<f64> {
    let gram = (b * b.transpose()).lu();
    b.transpose() * gram.solve(c).expect("full row rank")
}

/// Smallest singular value over largest.
pub fn inverse_condition(m: &DMatrix<f64>) -> f64 {
    let s = m.singular_values();
    let max = s.max();
    if max == 0.0 {
        0.0
    } else {
        s.min() / max
    }
}

/// Full-row-rank primary Jacobian and a subtask stack whose first `r` rows
/// complete it to a well-conditioned square system.
pub struct ControlInstance {
    pub j1: DMatrix<f64>,
    pub xd1: DVector<f64>,
    pub jsub: DMatrix<f64>,
    pub xs: DVector<f64>,
    pub gamma: f64,
}

pub fn control_instance(rng: &mut impl Rng) -> ControlInstance {
    loop {
        let n = rng.random_range(3..=9);
        let m = rng.random_range(1..n);
        let r = n - m;
        let l = rng.random_range(r + 1..=r + 4);
        let j1 = uniform_matrix(rng, m, n);
        let jsub = uniform_matrix(rng, l, n);
        if inverse_condition(&j1) < 0.05 {
            continue;
        }
        // the square stack [J₁; J₂] bounds both the null-space fit and q̇
        let stacked = DMatrix::from_fn(n, n, |i, k| if i < m { j1[(i, k)] } else { jsub[(i - m, k)] });
        if inverse_condition(&stacked) < 0.05 {
            continue;
        }
        return ControlInstance {
            xd1: uniform_vector(rng, m),
            xs: uniform_vector(rng, l),
            j1,
            jsub,
            gamma: rng.random_range(0.5..=1.0),
        };
    }
}

impl ControlInstance {
    pub fn r(&self) -> usize {
        self.j1.ncols() - self.j1.nrows()
    }

    pub fn initial_weights(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.r(), self.jsub.nrows());
        for i in 0..self.r() {
            a[(i, i)] = self.gamma;
        }
        a
    }
}

/// Winner-take-all shape: one positive rate at most per row, zero rows when
/// the argmax already holds `γ`, and rates over the winner plus every rising
/// or weighted entry summing to zero.
pub fn check_wta_shape(inst: &MergingInstance) -> Result<(), String> {
    let p = taskmux::soft_priority(&inst.state);
    let rate = taskmux::wta_rate(&p, &inst.status, &inst.state).map_err(|e| e.to_string())?;
    let a = inst.state.weights();
    let gamma = inst.state.gamma();
    let (r, l) = a.shape();
    for i in 0..r {
        let raw: Vec<f64> = (0..l).map(|j| p.0[(i, j)] * inst.status.0[j]).collect();
        let top = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let argmax = raw.iter().position(|&v| v == top).unwrap();
        let row: Vec<f64> = (0..l).map(|j| rate.rates[(i, j)]).collect();
        let positives = row.iter().filter(|&&v| v > 0.0).count();
        if positives > 1 {
            return Err(format!("row {i}: {positives} positive rates {row:?}"));
        }
        if a[(i, argmax)] >= gamma - taskmux::merging::SATURATION_TOLERANCE {
            if row.iter().any(|&v| v != 0.0) {
                return Err(format!("row {i}: saturated argmax {argmax} but rates {row:?}"));
            }
            continue;
        }
        let sum: f64 = (0..l).filter(|&j| j == argmax || row[j] > 0.0 || a[(i, j)] > 0.0).map(|j| row[j]).sum();
        if sum.abs() > 1e-12 {
            return Err(format!("row {i}: effective rate sum {sum:e}"));
        }
    }
    Ok(())
}

/// Keeper property: a column holding `γ` in some row gets no positive rate
/// in any other row.
pub fn check_keeper(inst: &MergingInstance) -> Result<(), String> {
    let p = taskmux::soft_priority(&inst.state);
    let rate = taskmux::wta_rate(&p, &inst.status, &inst.state).map_err(|e| e.to_string())?;
    let a = inst.state.weights();
    let (r, l) = a.shape();
    for u in 0..r {
        for col in 0..l {
            if a[(u, col)] != inst.state.gamma() {
                continue;
            }
            for i in (0..r).filter(|&i| i != u) {
                if rate.rates[(i, col)] > 0.0 {
                    return Err(format!("column {col} held by row {u} rises in row {i}: {}", rate.rates[(i, col)]));
                }
            }
        }
    }
    Ok(())
}

/// Makes one row of the instance hold `γ` on a random column.
pub fn saturate_one(rng: &mut impl Rng, inst: MergingInstance) -> MergingInstance {
    let mut a = inst.state.weights().clone();
    let gamma = inst.state.gamma();
    let (r, l) = a.shape();
    let u = rng.random_range(0..r);
    let col = rng.random_range(0..l);
    a.row_mut(u).fill(0.0);
    a[(u, col)] = gamma;
    MergingInstance {
        state: MergingState::from_weights(a, gamma, inst.state.dt()).unwrap(),
        status: inst.status,
    }
}

/// Steps `A` under a frozen status until `‖Ȧ‖∞ < 1e-12`; returns the number
/// of updates taken or `None` after `max_steps`.
pub fn steps_to_converge(inst: &MergingInstance, max_steps: usize) -> Result<Option<usize>, String> {
    let mut state = inst.state.clone();
    for k in 0..=max_steps {
        let p = taskmux::soft_priority(&state);
        let rate = taskmux::wta_rate(&p, &inst.status, &state).map_err(|e| e.to_string())?;
        if rate.max_abs() < 1e-12 {
            return Ok(Some(k));
        }
        state = taskmux::step_merging(&state, &rate).map_err(|e| e.to_string())?;
        state.check_invariants(1e-9)?;
    }
    Ok(None)
}
