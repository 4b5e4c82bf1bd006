//! Merging matrix and its winner-take-all update.
//!
//! `A` is an `r × l` matrix (`r = n - m` redundancies, `l` elementary
//! subtasks). Row `i` spreads redundancy `i` over the subtasks; each row sums
//! to `γ` and every entry stays in `[0, γ]`. The update rate combines the task
//! status `S` (how active each subtask is) with a soft priority `P` derived
//! from the current weight distribution, and a per-row winner-take-all step
//! lets exactly one subtask gain weight per redundancy.

use nalgebra::{DMatrix, DVector};

use crate::subtasks::{task_status, ElementarySubtask};
use crate::{Error, Result};

/// Tolerance used when deciding that a winner already holds the full weight `γ`.
pub const SATURATION_TOLERANCE: f64 = 1e-12;
/// Tolerance on row sums accepted by [`MergingState::from_weights`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MergingState {
    weights: DMatrix<f64>,
    gamma: f64,
    dt: f64,
}

fn check_gamma_dt(gamma: f64, dt: f64) -> Result<()> {
    if !(0.5..=1.0).contains(&gamma) {
        return Err(Error::InvalidMerging(format!("gamma must lie in [0.5, 1], got {gamma}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidMerging(format!("update interval must be positive, got {dt}")));
    }
    Ok(())
}

impl MergingState {
    /// Wraps an arbitrary weight matrix after checking bounds and row sums.
    pub fn from_weights(weights: DMatrix<f64>, gamma: f64, dt: f64) -> Result<Self> {
        check_gamma_dt(gamma, dt)?;
        let (r, l) = weights.shape();
        if r == 0 || l <= r {
            return Err(Error::InvalidMerging(format!(
                "need 1 <= r < l (insufficient redundancy), got r={r}, l={l}"
            )));
        }
        let state = Self { weights, gamma, dt };
        state.check_invariants(ROW_SUM_TOLERANCE).map_err(Error::InvalidMerging)?;
        Ok(state)
    }

    /// Unchecked allocation for the `l <= r` case, where `A` is never updated.
    pub(crate) fn static_allocation(weights: DMatrix<f64>, gamma: f64, dt: f64) -> Self {
        Self { weights, gamma, dt }
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of redundancies `r`.
    pub fn redundancy(&self) -> usize {
        self.weights.nrows()
    }

    /// Number of elementary subtasks `l`.
    pub fn subtasks(&self) -> usize {
        self.weights.ncols()
    }

    /// Weights flattened row-major, the order used in log files.
    pub fn flatten(&self) -> Vec<f64> {
        let (r, l) = self.weights.shape();
        (0..r).flat_map(|i| (0..l).map(move |j| (i, j))).map(|(i, j)| self.weights[(i, j)]).collect()
    }

    /// Column currently holding the full weight of row `i`, if any.
    pub fn holder(&self, i: usize) -> Option<usize> {
        (0..self.subtasks()).find(|&j| self.weights[(i, j)] >= self.gamma - SATURATION_TOLERANCE)
    }

    /// Checks entry bounds and row sums against `tol`.
    pub fn check_invariants(&self, tol: f64) -> std::result::Result<(), String> {
        for (i, row) in self.weights.row_iter().enumerate() {
            if let Some((j, a)) = row.iter().enumerate().find(|(_, &a)| !(0.0..=self.gamma).contains(&a)) {
                return Err(format!("weight ({i}, {j}) = {a} outside [0, {}]", self.gamma));
            }
            let sum: f64 = row.iter().sum();
            if (sum - self.gamma).abs() > tol {
                return Err(format!("row {i} sums to {sum}, expected {}", self.gamma));
            }
        }
        Ok(())
    }
}

/// `A₀ = [γI | 0]`: redundancy `i` starts on subtask `i`.
pub fn init_merging(r: usize, l: usize, gamma: f64, dt: f64) -> Result<MergingState> {
    check_gamma_dt(gamma, dt)?;
    if r == 0 || r >= l {
        return Err(Error::InvalidMerging(format!(
            "need 1 <= r < l (insufficient redundancy), got r={r}, l={l}"
        )));
    }
    let mut weights = DMatrix::zeros(r, l);
    for i in 0..r {
        weights[(i, i)] = gamma;
    }
    Ok(MergingState { weights, gamma, dt })
}

/// Diagonal of the task status matrix `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatusMatrix(pub DVector<f64>);

impl StatusMatrix {
    /// Status of each subtask from its current desired velocity.
    pub fn from_velocities(subtasks: &[ElementarySubtask], velocities: &DVector<f64>) -> Result<Self> {
        if subtasks.len() != velocities.len() {
            return Err(Error::DimensionMismatch {
                what: "subtask velocities",
                expected: subtasks.len(),
                actual: velocities.len(),
            });
        }
        let mut f = DVector::zeros(subtasks.len());
        for s in subtasks {
            f[s.id] = task_status(velocities[s.id], s.status.slope, s.status.range);
        }
        Ok(Self(f))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorityMatrix(pub DMatrix<f64>);

/// Winner-take-all update rate `Ȧ` plus the winning column of each row
/// (`None` when the row was frozen because its winner is saturated).
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRate {
    pub rates: DMatrix<f64>,
    pub winners: Vec<Option<usize>>,
}

impl UpdateRate {
    pub fn max_abs(&self) -> f64 {
        self.rates.amax()
    }
}

/// Soft priority for a raw weight matrix:
/// `p_ij = Π_{u<i}(1-α_uj) · Π_{v<j}(1-α_iv) · Π_{u≠i}(γ-α_uj)`,
/// with empty products equal to 1.
pub fn soft_priority_weights(weights: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let (r, l) = weights.shape();
    DMatrix::from_fn(r, l, |i, j| {
        let earlier_redundancies: f64 = (0..i).map(|u| 1.0 - weights[(u, j)]).product();
        let earlier_subtasks: f64 = (0..j).map(|v| 1.0 - weights[(i, v)]).product();
        let keeper: f64 = (0..r).filter(|&u| u != i).map(|u| gamma - weights[(u, j)]).product();
        earlier_redundancies * earlier_subtasks * keeper
    })
}

pub fn soft_priority(state: &MergingState) -> PriorityMatrix {
    PriorityMatrix(soft_priority_weights(&state.weights, state.gamma))
}

fn argmax_excluding(row: &[f64], skip: Option<usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &v) in row.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        // strict comparison keeps the lowest index on ties
        if best.is_none_or(|b| v > row[b]) {
            best = Some(j);
        }
    }
    best
}

/// Winner-take-all rate: raw rates `P·S`, then per row either freeze (the
/// argmax already holds `γ`) or subtract the mean of the two largest rates and
/// give the winner `-T`, where `T` sums the rates of every other entry that
/// is rising or still carries weight. Rates over the winner and that
/// effective set sum to zero.
pub fn wta_rate(priority: &PriorityMatrix, status: &StatusMatrix, state: &MergingState) -> Result<UpdateRate> {
    let (r, l) = state.weights.shape();
    if priority.0.shape() != (r, l) {
        return Err(Error::DimensionMismatch { what: "priority matrix columns", expected: l, actual: priority.0.ncols() });
    }
    if status.len() != l {
        return Err(Error::DimensionMismatch { what: "status entries", expected: l, actual: status.len() });
    }
    let mut rates = DMatrix::zeros(r, l);
    let mut winners = Vec::with_capacity(r);
    for i in 0..r {
        let mut row: Vec<f64> = (0..l).map(|j| priority.0[(i, j)] * status.0[j]).collect();
        let winner = argmax_excluding(&row, None).expect("l >= 2");
        if state.weights[(i, winner)] >= state.gamma - SATURATION_TOLERANCE {
            winners.push(None);
            continue;
        }
        let runner_up = argmax_excluding(&row, Some(winner)).expect("l >= 2");
        let baseline = 0.5 * (row[winner] + row[runner_up]);
        for v in row.iter_mut() {
            *v -= baseline;
        }
        let total: f64 = (0..l)
            .filter(|&j| j != winner && (row[j] > 0.0 || state.weights[(i, j)] > 0.0))
            .map(|j| row[j])
            .sum();
        row[winner] = -total;
        for (j, v) in row.into_iter().enumerate() {
            rates[(i, j)] = v;
        }
        winners.push(Some(winner));
    }
    Ok(UpdateRate { rates, winners })
}

/// Integrates `A + Ȧ·Δt` with the clamp to `[0, γ]`.
///
/// Falling rates are first limited so no entry crosses zero within the step,
/// and the winner's rate is recomputed from the limited rates, so each row
/// sum is conserved exactly rather than broken by the lower clamp.
pub fn step_merging(state: &MergingState, rate: &UpdateRate) -> Result<MergingState> {
    let (r, l) = state.weights.shape();
    if rate.rates.shape() != (r, l) || rate.winners.len() != r {
        return Err(Error::DimensionMismatch { what: "update rate rows", expected: r, actual: rate.rates.nrows() });
    }
    let dt = state.dt;
    let gamma = state.gamma;
    let mut next = state.weights.clone();
    for i in 0..r {
        let Some(winner) = rate.winners[i] else {
            for j in 0..l {
                next[(i, j)] = (state.weights[(i, j)] + rate.rates[(i, j)] * dt).clamp(0.0, gamma);
            }
            continue;
        };
        let mut transferred = 0.0;
        for j in (0..l).filter(|&j| j != winner) {
            let a = state.weights[(i, j)];
            let v = rate.rates[(i, j)];
            if !(v > 0.0 || a > 0.0) {
                // idle entry at zero: the clamp keeps it there
                continue;
            }
            if v * dt <= -a {
                transferred += a;
                next[(i, j)] = 0.0;
            } else {
                let updated = (a + v * dt).min(gamma);
                transferred += a - updated;
                next[(i, j)] = updated;
            }
        }
        next[(i, winner)] = (state.weights[(i, winner)] + transferred).clamp(0.0, gamma);
    }
    Ok(MergingState { weights: next, gamma, dt })
}

/// Virtual secondary task `ẋ₂ = (1/γ) A ẋ_s`.
pub fn secondary_task(state: &MergingState, velocities: &DVector<f64>) -> Result<DVector<f64>> {
    if velocities.len() != state.subtasks() {
        return Err(Error::DimensionMismatch {
            what: "subtask velocity vector",
            expected: state.subtasks(),
            actual: velocities.len(),
        });
    }
    Ok(&state.weights * velocities / state.gamma)
}

/// Merged Jacobian `J₂ = (1/γ) A J_sub`.
pub fn merged_jacobian(state: &MergingState, subtask_jacobian: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if subtask_jacobian.nrows() != state.subtasks() {
        return Err(Error::DimensionMismatch {
            what: "subtask Jacobian rows",
            expected: state.subtasks(),
            actual: subtask_jacobian.nrows(),
        });
    }
    Ok(&state.weights * subtask_jacobian / state.gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn status(values: &[f64]) -> StatusMatrix {
        StatusMatrix(DVector::from_row_slice(values))
    }

    #[test]
    fn initial_matrix_allocates_prefix() {
        let s = init_merging(3, 6, 0.9, 0.01).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            6,
            &[0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.9, 0.0, 0.0, 0.0],
        );
        assert_eq!(s.weights(), &expected);
        let s = init_merging(1, 2, 0.5, 0.01).unwrap();
        assert_eq!(s.weights(), &DMatrix::from_row_slice(1, 2, &[0.5, 0.0]));
        assert!(s.check_invariants(0.0).is_ok());
    }

    #[test]
    fn init_rejects_sufficient_redundancy_and_bad_gamma() {
        assert!(init_merging(3, 3, 0.9, 0.01).is_err());
        assert!(init_merging(0, 3, 0.9, 0.01).is_err());
        assert!(init_merging(1, 3, 0.4, 0.01).is_err());
        assert!(init_merging(1, 3, 1.1, 0.01).is_err());
        assert!(init_merging(1, 3, 0.9, 0.0).is_err());
    }

    #[test]
    fn priority_at_initial_matrix() {
        let s = init_merging(3, 6, 0.9, 0.01).unwrap();
        let p = soft_priority(&s).0;
        assert!((p[(0, 0)] - 0.81).abs() < 1e-15);
        // columns held by another row are locked out by the keeper factor
        assert_eq!(p[(0, 1)], 0.0);
        assert_eq!(p[(2, 0)], 0.0);
        // free columns pay (1 - γ) for the held column to their left
        assert!((p[(1, 4)] - 0.81 * 0.1).abs() < 1e-15);
    }

    #[test]
    fn priority_single_entry_is_one() {
        let w = DMatrix::from_row_slice(1, 1, &[0.7]);
        assert_eq!(soft_priority_weights(&w, 0.9)[(0, 0)], 1.0);
    }

    #[test]
    fn zero_status_gives_zero_rate() {
        let s = MergingState::from_weights(
            DMatrix::from_row_slice(2, 3, &[0.3, 0.6, 0.0, 0.1, 0.1, 0.7]),
            0.9,
            0.01,
        )
        .unwrap();
        let rate = wta_rate(&soft_priority(&s), &status(&[0.0, 0.0, 0.0]), &s).unwrap();
        assert_eq!(rate.max_abs(), 0.0);
        assert_eq!(step_merging(&s, &rate).unwrap(), s);
    }

    #[test]
    fn saturated_winner_freezes_row() {
        let s = init_merging(2, 3, 0.9, 0.01).unwrap();
        let rate = wta_rate(&soft_priority(&s), &status(&[1.0, 1.0, 0.5]), &s).unwrap();
        assert_eq!(rate.winners, vec![None, None]);
        assert_eq!(rate.max_abs(), 0.0);
    }

    #[test]
    fn one_by_two_trace() {
        // raw rates [0, 0.1]; baseline 0.05; subtask 0 still carries weight
        let s = init_merging(1, 2, 0.9, 0.01).unwrap();
        let rate = wta_rate(&soft_priority(&s), &status(&[0.0, 1.0]), &s).unwrap();
        assert_eq!(rate.winners, vec![Some(1)]);
        assert!((rate.rates[(0, 0)] + 0.05).abs() < 1e-15);
        assert!((rate.rates[(0, 1)] - 0.05).abs() < 1e-15);
        assert_eq!(rate.rates.row(0).sum(), 0.0);
    }

    #[test]
    fn one_by_two_converges_onto_active_subtask() {
        let mut s = init_merging(1, 2, 0.9, 0.01).unwrap();
        let f = status(&[0.0, 1.0]);
        let mut steps = 0;
        loop {
            let rate = wta_rate(&soft_priority(&s), &f, &s).unwrap();
            if rate.max_abs() < 1e-12 {
                break;
            }
            s = step_merging(&s, &rate).unwrap();
            s.check_invariants(1e-12).unwrap();
            steps += 1;
            assert!(steps < 100_000);
        }
        assert_eq!(s.weights()[(0, 0)], 0.0);
        assert!((s.weights()[(0, 1)] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn step_keeps_saturated_entry_at_gamma() {
        let s = init_merging(1, 3, 0.9, 0.01).unwrap();
        let rate = UpdateRate { rates: DMatrix::from_row_slice(1, 3, &[5.0, 0.0, 0.0]), winners: vec![None] };
        let next = step_merging(&s, &rate).unwrap();
        assert_eq!(next.weights()[(0, 0)], 0.9);
        let zero = UpdateRate { rates: DMatrix::zeros(1, 3), winners: vec![Some(1)] };
        assert_eq!(step_merging(&s, &zero).unwrap(), s);
    }

    #[test]
    fn step_limits_falling_rates_and_conserves() {
        let s = MergingState::from_weights(DMatrix::from_row_slice(1, 3, &[0.001, 0.899, 0.0]), 0.9, 0.01).unwrap();
        let rate = UpdateRate { rates: DMatrix::from_row_slice(1, 3, &[-1.0, -0.2, 1.2]), winners: vec![Some(2)] };
        let next = step_merging(&s, &rate).unwrap();
        assert_eq!(next.weights()[(0, 0)], 0.0);
        assert!((next.weights()[(0, 1)] - 0.897).abs() < 1e-15);
        assert!((next.weights().row(0).sum() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn secondary_task_with_initial_matrix_picks_prefix() {
        let s = init_merging(2, 4, 0.8, 0.01).unwrap();
        let xs = DVector::from_row_slice(&[1.0, -2.0, 3.0, 4.0]);
        let x2 = secondary_task(&s, &xs).unwrap();
        assert!((x2 - DVector::from_row_slice(&[1.0, -2.0])).amax() < 1e-15);
        assert_eq!(secondary_task(&s, &DVector::zeros(4)).unwrap(), DVector::zeros(2));
        assert!(secondary_task(&s, &DVector::zeros(3)).is_err());

        let jsub = DMatrix::from_fn(4, 5, |i, j| (i * 5 + j) as f64);
        let j2 = merged_jacobian(&s, &jsub).unwrap();
        assert!((j2 - jsub.rows(0, 2)).amax() < 1e-12);
        assert!(merged_jacobian(&s, &DMatrix::zeros(3, 5)).is_err());
    }

    #[test]
    fn from_weights_rejects_broken_rows() {
        assert!(MergingState::from_weights(DMatrix::from_row_slice(1, 2, &[0.5, 0.3]), 0.9, 0.01).is_err());
        assert!(MergingState::from_weights(DMatrix::from_row_slice(1, 2, &[1.0, -0.1]), 0.9, 0.01).is_err());
        assert!(MergingState::from_weights(DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.9]), 0.9, 0.01).is_err());
    }
}
