//! Velocity-level inverse kinematics: the single-task solution, the classic
//! two-priority law, and the merged law where the secondary task is the
//! weighted combination `A ẋ_s` of all elementary subtasks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::kinematics::{pseudoinverse, pseudoinverse_with_floor, Pinv, RANK_TOLERANCE};
use crate::subtasks::SubtaskStack;
use crate::{Error, Result};

/// Inner Gram matrices with a larger condition (see [`ControlOutput::gram_condition`])
/// are inverted with damping under [`InnerInverse::Adaptive`].
pub const ILL_CONDITIONED: f64 = 1e6;
pub const DEFAULT_DAMPING: f64 = 1e-4;

/// How the inner Gram matrix `A J_sub N₁ J_subᵀ Aᵀ` is inverted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum InnerInverse {
    /// Plain inverse (pseudoinverse if singular).
    Exact,
    /// Always `(G + λ²I)⁻¹`.
    Damped,
    /// Exact while the condition number stays below [`ILL_CONDITIONED`], damped otherwise.
    #[default]
    Adaptive,
}

/// Inputs of one control tick.
#[derive(Debug, Clone, Copy)]
pub struct ControlFrame<'a> {
    pub primary_jacobian: &'a DMatrix<f64>,
    pub primary_velocity: &'a DVector<f64>,
    pub subtasks: &'a SubtaskStack,
    /// Merging weights `A` (`r × l`); any positive scaling gives the same `q̇`.
    pub weights: &'a DMatrix<f64>,
    pub damping: f64,
    pub inner: InnerInverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub qd: DVector<f64>,
    /// `‖J₁ q̇ - ẋ₁‖∞`.
    pub primary_residual: f64,
    pub primary_rank: usize,
    /// `‖A J_sub‖²_F` over the smallest eigenvalue of the inner Gram matrix
    /// (infinite when singular).
    pub gram_condition: f64,
    pub damped: bool,
}

fn check_primary(j1: &DMatrix<f64>, xd1: &DVector<f64>) -> Result<()> {
    if j1.nrows() != xd1.len() {
        return Err(Error::DimensionMismatch { what: "primary task velocity", expected: j1.nrows(), actual: xd1.len() });
    }
    Ok(())
}

fn residual(j1: &DMatrix<f64>, qd: &DVector<f64>, xd1: &DVector<f64>) -> f64 {
    (j1 * qd - xd1).amax()
}

/// `q̇ = J₁⁺ ẋ₁`, the minimum-norm solution when `damping == 0`.
pub fn resolve_single(j1: &DMatrix<f64>, xd1: &DVector<f64>, damping: f64) -> Result<DVector<f64>> {
    check_primary(j1, xd1)?;
    Ok(pseudoinverse(j1, damping).matrix * xd1)
}

/// Two-priority law
/// `q̇ = J₁⁺ẋ₁ + N₁ (J₂N₁)⁺ (ẋ₂ - J₂J₁⁺ẋ₁)` with `N₁ = I - J₁⁺J₁`.
///
/// `damping` applies to the inner pseudoinverse only; `J₁⁺` is always the
/// Moore-Penrose inverse.
pub fn resolve_two(
    j1: &DMatrix<f64>,
    xd1: &DVector<f64>,
    j2: &DMatrix<f64>,
    xd2: &DVector<f64>,
    damping: f64,
) -> Result<DVector<f64>> {
    check_primary(j1, xd1)?;
    if j2.nrows() != xd2.len() {
        return Err(Error::DimensionMismatch { what: "secondary task velocity", expected: j2.nrows(), actual: xd2.len() });
    }
    if j2.ncols() != j1.ncols() {
        return Err(Error::DimensionMismatch { what: "secondary Jacobian columns", expected: j1.ncols(), actual: j2.ncols() });
    }
    let n = j1.ncols();
    let j1_pinv = pseudoinverse(j1, 0.0).matrix;
    let n1 = DMatrix::identity(n, n) - &j1_pinv * j1;
    let base = &j1_pinv * xd1;
    let floor = RANK_TOLERANCE * j2.norm();
    let inner = pseudoinverse_with_floor(&(j2 * &n1), damping, floor).matrix;
    Ok(&base + &n1 * inner * (xd2 - j2 * &base))
}

/// Inverse of a symmetric positive semi-definite matrix through its
/// eigen-decomposition, adding `shift` to every eigenvalue. Eigenvalues at or
/// below `cutoff` are round-off and are treated as zero either way.
fn spd_inverse(eig: &SymmetricEigen<f64, nalgebra::Dyn>, shift: f64, cutoff: f64) -> DMatrix<f64> {
    let inv = eig.eigenvalues.map(|e| if e > cutoff && e > 0.0 { 1.0 / (e + shift) } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Merged law
/// `q̇ = J₁⁺ẋ₁ + N₁J_subᵀAᵀ (A J_sub N₁ J_subᵀAᵀ)⁻¹ (A ẋ_s - A J_sub J₁⁺ẋ₁)`.
///
/// The second term lies in the null space of `J₁`, so the primary task is
/// met whatever the weights.
pub fn resolve_merged(frame: &ControlFrame) -> Result<ControlOutput> {
    let j1 = frame.primary_jacobian;
    let xd1 = frame.primary_velocity;
    check_primary(j1, xd1)?;
    let n = j1.ncols();
    let jsub = &frame.subtasks.jacobian;
    let a = frame.weights;
    if jsub.ncols() != n {
        return Err(Error::DimensionMismatch { what: "subtask Jacobian columns", expected: n, actual: jsub.ncols() });
    }
    if a.ncols() != jsub.nrows() {
        return Err(Error::DimensionMismatch { what: "merging matrix columns", expected: jsub.nrows(), actual: a.ncols() });
    }
    let Pinv { matrix: j1_pinv, rank } = pseudoinverse(j1, 0.0);
    let n1 = DMatrix::identity(n, n) - &j1_pinv * j1;
    let base = &j1_pinv * xd1;

    let merged = a * jsub;
    let projected = &merged * &n1;
    let gram = &projected * merged.transpose();
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = SymmetricEigen::new(gram);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    // measured against the unprojected rows, so allocated subtasks that barely
    // leave the row space of J₁ count as ill-conditioned even when r = 1
    let scale = max.max(merged.norm_squared());
    let cutoff = RANK_TOLERANCE * scale;
    let gram_condition = if min > cutoff { scale / min } else { f64::INFINITY };
    let damped = frame.damping > 0.0
        && match frame.inner {
            InnerInverse::Exact => false,
            InnerInverse::Damped => true,
            InnerInverse::Adaptive => !(gram_condition <= ILL_CONDITIONED),
        };
    let shift = if damped { frame.damping * frame.damping } else { 0.0 };
    let gram_inv = spd_inverse(&eig, shift, cutoff);

    let target = a * &frame.subtasks.velocities - &merged * &base;
    let qd = &base + &n1 * merged.transpose() * gram_inv * target;
    if qd.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("joint velocity".into()));
    }
    Ok(ControlOutput { primary_residual: residual(j1, &qd, xd1), qd, primary_rank: rank, gram_condition, damped })
}
