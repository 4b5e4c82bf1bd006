//! Planar serial-chain geometry: forward kinematics, analytic Jacobians,
//! pseudoinverses and null-space projectors.
//!
//! Chains live in the plane. A mobile platform is modelled as two prismatic
//! joints followed by a yaw joint, which is enough to give a 9-DOF mobile
//! manipulator its redundancy structure without full spatial kinematics.

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Reserved point name resolving to the tip of the last link.
pub const END_EFFECTOR: &str = "ee";

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// A task-space coordinate of a point on the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Yaw,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Yaw => "yaw",
        }
    }

    fn row(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Yaw => 2,
        }
    }
}

/// Translation direction of a prismatic joint, expressed in the frame the
/// joint is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlideAxis {
    X,
    Y,
}

impl SlideAxis {
    fn unit(self) -> Vector2<f64> {
        match self {
            SlideAxis::X => Vector2::new(1.0, 0.0),
            SlideAxis::Y => Vector2::new(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JointKind {
    /// Rotation about the joint origin followed by a rigid link of `length` meters.
    Revolute { length: f64 },
    /// Translation along a local axis.
    Prismatic { axis: SlideAxis },
}

/// Named point rigidly attached to a frame of the chain.
///
/// `frame` is the index of the joint whose outgoing frame carries the point;
/// `None` pins the point to the world origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PointOfInterest {
    pub name: String,
    pub frame: Option<usize>,
    pub offset: Vector2<f64>,
}

/// Position and heading of a point in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn coord(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Yaw => self.yaw,
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Joint positions plus optional velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: Vec<f64>,
    pub qd: Option<Vec<f64>>,
}

impl JointState {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if let Some(i) = q.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("joint position q_{i}")));
        }
        Ok(Self { q, qd: None })
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    origin: Vector2<f64>,
    heading: f64,
}

/// Geometric description of a planar serial robot.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    joints: Vec<JointKind>,
    points: Vec<PointOfInterest>,
}

impl KinematicChain {
    /// Builds a chain, checking link lengths and point names. The end-effector
    /// point [`END_EFFECTOR`] is added automatically.
    pub fn new(joints: Vec<JointKind>, points: Vec<PointOfInterest>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidChain("chain needs at least one joint".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            if let JointKind::Revolute { length } = j {
                if !(*length > 0.0 && length.is_finite()) {
                    return Err(Error::InvalidChain(format!(
                        "joint {i}: link length must be positive, got {length}"
                    )));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for p in &points {
            if p.name == END_EFFECTOR {
                return Err(Error::InvalidChain(format!(
                    "point name '{END_EFFECTOR}' is reserved for the end-effector"
                )));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(Error::InvalidChain(format!("duplicate point name '{}'", p.name)));
            }
            if let Some(f) = p.frame {
                if f >= joints.len() {
                    return Err(Error::InvalidChain(format!(
                        "point '{}' refers to frame {f} but the chain has {} joints",
                        p.name,
                        joints.len()
                    )));
                }
            }
            if !(p.offset.x.is_finite() && p.offset.y.is_finite()) {
                return Err(Error::InvalidChain(format!("point '{}' has a non-finite offset", p.name)));
            }
        }
        let mut points = points;
        points.push(PointOfInterest {
            name: END_EFFECTOR.to_string(),
            frame: Some(joints.len() - 1),
            offset: Vector2::zeros(),
        });
        Ok(Self { joints, points })
    }

    /// The three joints of an omnidirectional platform: x and y slides, then
    /// yaw carrying the arm mount `mount` meters ahead of the platform center.
    pub fn planar_base(mount: f64) -> [JointKind; 3] {
        [
            JointKind::Prismatic { axis: SlideAxis::X },
            JointKind::Prismatic { axis: SlideAxis::Y },
            JointKind::Revolute { length: mount },
        ]
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[JointKind] {
        &self.joints
    }

    pub fn points(&self) -> &[PointOfInterest] {
        &self.points
    }

    pub fn point(&self, name: &str) -> Result<&PointOfInterest> {
        self.points
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::UnknownPoint(name.to_string()))
    }

    /// Sum of revolute link lengths in joints `from..=to` (inclusive).
    pub fn link_length_between(&self, from: usize, to: usize) -> f64 {
        self.joints[from..=to]
            .iter()
            .map(|j| match j {
                JointKind::Revolute { length } => *length,
                JointKind::Prismatic { .. } => 0.0,
            })
            .sum()
    }

    fn check_q(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.joints.len() {
            return Err(Error::DimensionMismatch {
                what: "joint vector",
                expected: self.joints.len(),
                actual: q.len(),
            });
        }
        if let Some(i) = q.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("joint position q_{i}")));
        }
        Ok(())
    }

    /// Frames before (index 0 = world) and after each joint; `frames[k + 1]`
    /// is the frame after joint `k`.
    fn frames(&self, q: &[f64]) -> Vec<Frame> {
        let mut out = Vec::with_capacity(q.len() + 1);
        let mut f = Frame { origin: Vector2::zeros(), heading: 0.0 };
        out.push(f);
        for (joint, &qk) in self.joints.iter().zip(q) {
            match joint {
                JointKind::Revolute { length } => {
                    f.heading += qk;
                    f.origin += *length * Vector2::new(f.heading.cos(), f.heading.sin());
                }
                JointKind::Prismatic { axis } => {
                    f.origin += qk * rotate(axis.unit(), f.heading);
                }
            }
            out.push(f);
        }
        out
    }

    fn point_pose(frames: &[Frame], point: &PointOfInterest) -> Pose {
        let f = match point.frame {
            Some(k) => frames[k + 1],
            None => frames[0],
        };
        let p = f.origin + rotate(point.offset, f.heading);
        Pose { x: p.x, y: p.y, yaw: f.heading }
    }

    /// Pivot of the nearest revolute joint driving `point`, if any.
    pub fn rotation_pivot(&self, q: &[f64], point: &str) -> Result<Option<Vector2<f64>>> {
        self.check_q(q)?;
        let poi = self.point(point)?;
        let Some(last) = poi.frame else { return Ok(None) };
        let frames = self.frames(q);
        Ok((0..=last)
            .rev()
            .find(|&k| matches!(self.joints[k], JointKind::Revolute { .. }))
            .map(|k| frames[k].origin))
    }
}

fn rotate(v: Vector2<f64>, angle: f64) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Pose of a named point.
pub fn forward_kinematics(chain: &KinematicChain, q: &[f64], point: &str) -> Result<Pose> {
    chain.check_q(q)?;
    let poi = chain.point(point)?;
    Ok(KinematicChain::point_pose(&chain.frames(q), poi))
}

/// Analytic Jacobian of the selected coordinates of `point` with respect to q.
/// Row order follows `axes`.
pub fn jacobian(chain: &KinematicChain, q: &[f64], point: &str, axes: &[Axis]) -> Result<DMatrix<f64>> {
    if axes.is_empty() {
        return Err(Error::EmptySelector);
    }
    chain.check_q(q)?;
    let poi = chain.point(point)?;
    let frames = chain.frames(q);
    let p = KinematicChain::point_pose(&frames, poi).position();
    let n = chain.dof();
    let mut full = DMatrix::zeros(3, n);
    if let Some(last) = poi.frame {
        for k in 0..=last {
            let before = frames[k];
            match chain.joints[k] {
                JointKind::Revolute { .. } => {
                    let r = p - before.origin;
                    full[(0, k)] = -r.y;
                    full[(1, k)] = r.x;
                    full[(2, k)] = 1.0;
                }
                JointKind::Prismatic { axis } => {
                    let d = rotate(axis.unit(), before.heading);
                    full[(0, k)] = d.x;
                    full[(1, k)] = d.y;
                }
            }
        }
    }
    Ok(DMatrix::from_fn(axes.len(), n, |i, k| full[(axes[i].row(), k)]))
}

/// Manipulability `sqrt(det(J Jᵀ))` of the selected task coordinates.
pub fn manipulability(chain: &KinematicChain, q: &[f64], point: &str, axes: &[Axis]) -> Result<f64> {
    let j = jacobian(chain, q, point, axes)?;
    let det = (&j * j.transpose()).determinant();
    Ok(det.max(0.0).sqrt())
}

/// A pseudoinverse together with the effective rank of the source matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pinv {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

/// Moore-Penrose pseudoinverse (`damping == 0`) or damped least-squares
/// inverse `Jᵀ(JJᵀ + λ²I)⁻¹` (`damping > 0`), both computed from an SVD.
pub fn pseudoinverse(j: &DMatrix<f64>, damping: f64) -> Pinv {
    pseudoinverse_with_floor(j, damping, 0.0)
}

/// As [`pseudoinverse`], but singular values at or below `floor` also count
/// as zero. Used for projected Jacobians whose own largest singular value
/// may be pure round-off.
pub fn pseudoinverse_with_floor(j: &DMatrix<f64>, damping: f64, floor: f64) -> Pinv {
    let (m, n) = j.shape();
    if m == 0 || n == 0 {
        return Pinv { matrix: DMatrix::zeros(n, m), rank: 0 };
    }
    // faer rather than nalgebra here: nalgebra's SVD occasionally returns wrong
    // factors for exactly rank-deficient input
    let svd = faer::Mat::<f64>::from_fn(m, n, |i, k| j[(i, k)]).thin_svd().expect("svd converges");
    let (u, v) = (svd.U(), svd.V());
    let s = svd.S().column_vector();
    let p = s.nrows();
    let s_max = (0..p).map(|t| s[t]).fold(0.0, f64::max);
    let cutoff = (RANK_TOLERANCE * s_max).max(floor);
    let rank = (0..p).filter(|&t| s[t] > cutoff && s[t] > 0.0).count();
    let lambda2 = damping * damping;
    let inv: Vec<f64> = (0..p)
        .map(|t| {
            let x = s[t];
            if damping > 0.0 {
                x / (x * x + lambda2)
            } else if x > cutoff && x > 0.0 {
                1.0 / x
            } else {
                0.0
            }
        })
        .collect();
    let matrix = DMatrix::from_fn(n, m, |k, i| (0..p).map(|t| v[(k, t)] * inv[t] * u[(i, t)]).sum());
    Pinv { matrix, rank }
}

/// Null-space projector `I - J⁺J`.
pub fn null_projector(j: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.ncols();
    let pinv = pseudoinverse(j, 0.0);
    DMatrix::identity(n, n) - pinv.matrix * j
}
