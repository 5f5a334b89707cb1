//! Planar open-chain kinematics.
//!
//! A [`RobotModel`] is an ordered set of revolute chains sharing one
//! configuration vector. Each chain contributes a contiguous block of joints to
//! `q` and one planar end-effector position to the task vector `x`, so the
//! Jacobian is block-diagonal by construction.
//!
//! The configuration metric `M` splits every tangent space into the vertical
//! subspace `ker J` and its `M`-orthogonal complement, the horizontal subspace.
//! [`generalized_inverse`] maps task velocities to their unique horizontal
//! preimage, `J⁺ = M⁻¹Jᵀ(J M⁻¹ Jᵀ)⁻¹`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{ConditionVector, Demonstration};
use crate::error::{Error, Result};

pub type JointVector = DVector<f64>;
pub type TaskVector = DVector<f64>;
pub type JacobianMatrix = DMatrix<f64>;

/// Smallest admissible eigenvalue of `J M⁻¹ Jᵀ` for the symmetry operations.
pub const SINGULARITY_TOL: f64 = 1e-8;
/// Path tracking switches to damped least squares below this `σ_min`.
pub const DAMPING_SIGMA: f64 = 1e-4;
/// Damping added to `J M⁻¹ Jᵀ` while tracking near a singularity.
pub const TRACKING_DAMPING: f64 = 1e-6;
/// Tracking is aborted once the task error exceeds this (meters).
pub const DIVERGENCE_ERROR: f64 = 0.05;

const METRIC_EIG_TOL: f64 = 1e-12;

/// One planar chain of revolute joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub base: [f64; 2],
    /// Orientation of the zero configuration (radians, measured from +x).
    #[serde(default)]
    pub base_angle: f64,
    pub links: Vec<f64>,
}

impl ChainSpec {
    pub fn new(base: [f64; 2], links: Vec<f64>) -> Self {
        Self {
            base,
            base_angle: 0.0,
            links,
        }
    }

    pub fn with_base_angle(mut self, angle: f64) -> Self {
        self.base_angle = angle;
        self
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    /// Maximum distance of the end effector from the base.
    pub fn reach(&self) -> f64 {
        self.links.iter().sum()
    }
}

/// Configuration-space metric. Only constant metrics are supported for now.
#[derive(Clone, Debug, PartialEq)]
pub enum Metric {
    Identity,
    Constant(DMatrix<f64>),
}

#[derive(Clone, Debug)]
pub struct RobotModel {
    chains: Vec<ChainSpec>,
    offsets: Vec<usize>,
    dim_q: usize,
    metric: DMatrix<f64>,
    metric_inv: DMatrix<f64>,
    /// Per-chain blocks of `M⁻¹` when `M` does not couple chains; `None`
    /// inside marks an identity block.
    inv_blocks: Option<Vec<Option<DMatrix<f64>>>>,
}

impl RobotModel {
    pub fn new(chains: Vec<ChainSpec>, metric: Metric) -> Result<Self> {
        if chains.is_empty() {
            return Err(Error::InvalidModel("no chains".into()));
        }
        let mut offsets = Vec::with_capacity(chains.len());
        let mut dim_q = 0;
        for (i, c) in chains.iter().enumerate() {
            if c.links.is_empty() {
                return Err(Error::InvalidModel(format!("chain {i} has no joints")));
            }
            if c.links.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                return Err(Error::InvalidModel(format!(
                    "chain {i} has a non-positive link length"
                )));
            }
            if !(c.base.iter().all(|b| b.is_finite()) && c.base_angle.is_finite()) {
                return Err(Error::InvalidModel(format!("chain {i} has a non-finite base")));
            }
            offsets.push(dim_q);
            dim_q += c.dof();
        }

        let (metric, metric_inv, inv_blocks) = match metric {
            Metric::Identity => (
                DMatrix::identity(dim_q, dim_q),
                DMatrix::identity(dim_q, dim_q),
                Some(vec![None; chains.len()]),
            ),
            Metric::Constant(m) => {
                if m.nrows() != dim_q || m.ncols() != dim_q {
                    return Err(Error::InvalidModel(format!(
                        "metric is {}x{}, expected {dim_q}x{dim_q}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                    return Err(Error::InvalidModel("metric is not symmetric".into()));
                }
                let eig = m.clone().symmetric_eigenvalues();
                if eig.min() <= METRIC_EIG_TOL {
                    return Err(Error::InvalidModel(format!(
                        "metric is not positive definite (min eigenvalue {:.3e})",
                        eig.min()
                    )));
                }
                let inv = m
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::InvalidModel("metric is not positive definite".into()))?
                    .inverse();
                let blocks = block_diagonal_parts(&inv, &chains, &offsets);
                (m, inv, blocks)
            }
        };

        Ok(Self {
            chains,
            offsets,
            dim_q,
            metric,
            metric_inv,
            inv_blocks,
        })
    }

    pub fn chains(&self) -> &[ChainSpec] {
        &self.chains
    }

    pub fn dim_q(&self) -> usize {
        self.dim_q
    }

    pub fn dim_x(&self) -> usize {
        2 * self.chains.len()
    }

    pub fn is_redundant(&self) -> bool {
        self.dim_q > self.dim_x()
    }

    /// Joint index range owned by chain `c`.
    pub fn joint_range(&self, c: usize) -> std::ops::Range<usize> {
        self.offsets[c]..self.offsets[c] + self.chains[c].dof()
    }

    /// The metric `M(q)`; constant in this version.
    pub fn metric(&self, _q: &JointVector) -> &DMatrix<f64> {
        &self.metric
    }

    pub fn metric_inverse(&self) -> &DMatrix<f64> {
        &self.metric_inv
    }

    fn check_q(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim_q {
            return Err(Error::dim(self.dim_q, q.len()));
        }
        Ok(())
    }

    /// Joint positions of chain `c`, from the base (index 0) to the end
    /// effector (index `dof`).
    fn chain_points(&self, c: usize, q: &[f64], points: &mut Vec<[f64; 2]>) {
        let chain = &self.chains[c];
        let q_c = &q[self.joint_range(c)];
        points.clear();
        let mut p = chain.base;
        let mut angle = chain.base_angle;
        points.push(p);
        for (l, qi) in chain.links.iter().zip(q_c) {
            angle += qi;
            let (s, co) = angle.sin_cos();
            p = [p[0] + l * co, p[1] + l * s];
            points.push(p);
        }
    }

    /// End-effector position of chain `c`.
    pub fn chain_end_effector(&self, c: usize, q: &JointVector) -> Result<[f64; 2]> {
        self.check_q(q.as_slice())?;
        let mut pts = Vec::with_capacity(self.chains[c].dof() + 1);
        self.chain_points(c, q.as_slice(), &mut pts);
        Ok(*pts.last().unwrap())
    }

    /// Stacked end-effector positions of all chains.
    pub fn forward_kinematics(&self, q: &JointVector) -> Result<TaskVector> {
        self.check_q(q.as_slice())?;
        let mut x = DVector::zeros(self.dim_x());
        self.fk_into(q.as_slice(), x.as_mut_slice());
        Ok(x)
    }

    pub(crate) fn fk_into(&self, q: &[f64], x: &mut [f64]) {
        let mut pts = Vec::with_capacity(8);
        for c in 0..self.chains.len() {
            self.chain_points(c, q, &mut pts);
            let e = pts.last().unwrap();
            x[2 * c] = e[0];
            x[2 * c + 1] = e[1];
        }
    }

    /// Analytic Jacobian `∂x/∂q`; cross-chain blocks are exactly zero.
    pub fn jacobian(&self, q: &JointVector) -> Result<JacobianMatrix> {
        self.check_q(q.as_slice())?;
        let mut j = DMatrix::zeros(self.dim_x(), self.dim_q);
        let mut pts = Vec::with_capacity(8);
        for c in 0..self.chains.len() {
            self.chain_points(c, q.as_slice(), &mut pts);
            let e = *pts.last().unwrap();
            for (k, col) in self.joint_range(c).enumerate() {
                let p = pts[k];
                j[(2 * c, col)] = -(e[1] - p[1]);
                j[(2 * c + 1, col)] = e[0] - p[0];
            }
        }
        Ok(j)
    }

    /// `J⁺(q)` for this model's metric.
    pub fn generalized_inverse_at(&self, q: &JointVector) -> Result<DMatrix<f64>> {
        let j = self.jacobian(q)?;
        weighted_right_inverse(&j, &self.metric_inv)
    }

    /// Smallest eigenvalue of `J M⁻¹ Jᵀ` at `q`; zero exactly at singularities.
    pub fn singularity_measure(&self, q: &JointVector) -> Result<f64> {
        self.check_q(q.as_slice())?;
        let mut out = vec![0.0; self.dim_q];
        let zero = vec![0.0; self.dim_x()];
        Ok(self.lift_core(q.as_slice(), &zero, &mut out, 0.0))
    }

    /// Horizontal lift `J⁺(q)·ẋ` of a task velocity.
    pub fn horizontal_lift(&self, q: &JointVector, xdot: &TaskVector) -> Result<JointVector> {
        self.check_q(q.as_slice())?;
        if xdot.len() != self.dim_x() {
            return Err(Error::dim(self.dim_x(), xdot.len()));
        }
        let mut out = DVector::zeros(self.dim_q);
        let measure = self.lift_core(q.as_slice(), xdot.as_slice(), out.as_mut_slice(), 0.0);
        if measure < SINGULARITY_TOL {
            return Err(Error::Singular { measure });
        }
        Ok(out)
    }

    /// Computes `M⁻¹Jᵀ(J M⁻¹ Jᵀ + damping·I)⁻¹ ẋ` into `out` and returns the
    /// smallest eigenvalue of the undamped `J M⁻¹ Jᵀ`.
    ///
    /// The block-diagonal path never forms the full Jacobian; it is the hot
    /// loop of every lifted flow.
    pub(crate) fn lift_core(&self, q: &[f64], xdot: &[f64], out: &mut [f64], damping: f64) -> f64 {
        match &self.inv_blocks {
            Some(blocks) => {
                let mut pts = Vec::with_capacity(8);
                let mut cols: Vec<[f64; 2]> = Vec::with_capacity(8);
                let mut wcols: Vec<[f64; 2]> = Vec::with_capacity(8);
                let mut min_eig = f64::INFINITY;
                for c in 0..self.chains.len() {
                    self.chain_points(c, q, &mut pts);
                    let e = *pts.last().unwrap();
                    let n = self.chains[c].dof();
                    cols.clear();
                    for p in &pts[..n] {
                        cols.push([-(e[1] - p[1]), e[0] - p[0]]);
                    }
                    // B = W_c J_cᵀ, stored as n rows of length 2.
                    wcols.clear();
                    match &blocks[c] {
                        None => wcols.extend_from_slice(&cols),
                        Some(w) => {
                            for i in 0..n {
                                let mut r = [0.0; 2];
                                for (k, col) in cols.iter().enumerate() {
                                    r[0] += w[(i, k)] * col[0];
                                    r[1] += w[(i, k)] * col[1];
                                }
                                wcols.push(r);
                            }
                        }
                    }
                    let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
                    for (jc, bc) in cols.iter().zip(&wcols) {
                        a += jc[0] * bc[0];
                        b += jc[0] * bc[1];
                        d += jc[1] * bc[1];
                    }
                    let half_tr = 0.5 * (a + d);
                    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                    min_eig = min_eig.min(half_tr - disc);
                    let a = a + damping;
                    let d = d + damping;
                    let det = a * d - b * b;
                    let (vx, vy) = (xdot[2 * c], xdot[2 * c + 1]);
                    let y0 = (d * vx - b * vy) / det;
                    let y1 = (a * vy - b * vx) / det;
                    let off = self.offsets[c];
                    for (i, bc) in wcols.iter().enumerate() {
                        out[off + i] = bc[0] * y0 + bc[1] * y1;
                    }
                }
                min_eig
            }
            None => {
                let qv = DVector::from_column_slice(q);
                let j = self.jacobian(&qv).expect("dimension checked by caller");
                let wjt = &self.metric_inv * j.transpose();
                let a = &j * &wjt;
                let min_eig = a.clone().symmetric_eigenvalues().min();
                let damped = a + DMatrix::identity(self.dim_x(), self.dim_x()) * damping;
                let y = match damped.cholesky() {
                    Some(ch) => ch.solve(&DVector::from_column_slice(xdot)),
                    None => DVector::from_element(self.dim_x(), f64::NAN),
                };
                let v = wjt * y;
                out.copy_from_slice(v.as_slice());
                min_eig
            }
        }
    }

    /// Splits `qdot` into its vertical (`ker J`) and horizontal parts.
    pub fn tangent_decompose(
        &self,
        q: &JointVector,
        qdot: &JointVector,
    ) -> Result<(JointVector, JointVector)> {
        if qdot.len() != self.dim_q {
            return Err(Error::dim(self.dim_q, qdot.len()));
        }
        let j = self.jacobian(q)?;
        let xdot = &j * qdot;
        let horizontal = self.horizontal_lift(q, &xdot)?;
        let vertical = qdot - &horizontal;
        Ok((vertical, horizontal))
    }

    /// Damped Newton inverse kinematics from `guess`, converging to the
    /// minimum-norm correction at each step.
    pub fn inverse_kinematics(&self, target: &TaskVector, guess: &JointVector) -> Result<JointVector> {
        self.check_q(guess.as_slice())?;
        if target.len() != self.dim_x() {
            return Err(Error::dim(self.dim_x(), target.len()));
        }
        let mut q = guess.clone();
        let mut x = DVector::zeros(self.dim_x());
        let mut dq = DVector::zeros(self.dim_q);
        let mut residual = f64::INFINITY;
        for _ in 0..500 {
            self.fk_into(q.as_slice(), x.as_mut_slice());
            let err = target - &x;
            residual = err.amax();
            if residual < 1e-12 {
                return Ok(q);
            }
            // Limit the task step so Newton stays in its basin.
            let scale = (0.1 / err.norm()).min(1.0);
            let step = err * scale;
            self.lift_core(q.as_slice(), step.as_slice(), dq.as_mut_slice(), 1e-6);
            if !dq.iter().all(|v| v.is_finite()) {
                break;
            }
            q += &dq;
        }
        Err(Error::IkFailed { residual })
    }

    /// Resolved-rate tracking of a timed task path starting from `q0`.
    ///
    /// The stored velocities are `J⁺(q)·(ẋ + K·e)`, so every row is horizontal.
    /// Near singularities (`σ_min < 1e-4`) the inverse is damped.
    pub fn track_task_path(&self, path: &TaskPath, q0: &JointVector) -> Result<Demonstration> {
        const GAIN: f64 = 20.0;
        const SUBSTEPS: usize = 10;

        path.validate(self.dim_x())?;
        self.check_q(q0.as_slice())?;
        let measure = self.singularity_measure(q0)?;
        if measure < SINGULARITY_TOL {
            return Err(Error::Singular { measure });
        }
        let x0 = self.forward_kinematics(q0)?;
        let start_err = (&x0 - &path.points[0]).amax();
        if start_err > 1e-3 {
            return Err(Error::InvalidParameter(format!(
                "f(q0) is {start_err:.3e} m from the path start"
            )));
        }

        let n = path.len();
        let dt = path.dt();
        let xdot = path.velocities();
        let damping = |m: f64| {
            if m.max(0.0).sqrt() < DAMPING_SIGMA {
                TRACKING_DAMPING
            } else {
                0.0
            }
        };

        let mut qs = Vec::with_capacity(n);
        let mut qdots = Vec::with_capacity(n);
        let mut q = q0.clone();
        let mut x = DVector::zeros(self.dim_x());
        let mut v = DVector::zeros(self.dim_q);
        for k in 0..n {
            self.fk_into(q.as_slice(), x.as_mut_slice());
            let err = &path.points[k] - &x;
            let e = chain_error(&err);
            if !e.is_finite() || e > DIVERGENCE_ERROR {
                return Err(Error::TrackingDivergence { index: k, error: e });
            }
            let cmd = &xdot[k] + &err * GAIN;
            let m = self.lift_core(q.as_slice(), cmd.as_slice(), v.as_mut_slice(), 0.0);
            if damping(m) > 0.0 {
                self.lift_core(q.as_slice(), cmd.as_slice(), v.as_mut_slice(), damping(m));
            }
            qs.push(q.clone());
            qdots.push(v.clone());
            if k + 1 == n {
                break;
            }
            // Integrate to the next sample against the linearly interpolated reference.
            let seg = (&path.points[k + 1] - &path.points[k]) / dt;
            let h = dt / SUBSTEPS as f64;
            for s in 0..SUBSTEPS {
                let tau = s as f64 / SUBSTEPS as f64;
                let xref = &path.points[k] + (&path.points[k + 1] - &path.points[k]) * tau;
                self.fk_into(q.as_slice(), x.as_mut_slice());
                let cmd = &seg + (xref - &x) * GAIN;
                let m = self.lift_core(q.as_slice(), cmd.as_slice(), v.as_mut_slice(), 0.0);
                if damping(m) > 0.0 {
                    self.lift_core(q.as_slice(), cmd.as_slice(), v.as_mut_slice(), damping(m));
                }
                q.axpy(h, &v, 1.0);
            }
            if !q.iter().all(|v| v.is_finite()) {
                return Err(Error::TrackingDivergence {
                    index: k + 1,
                    error: f64::INFINITY,
                });
            }
        }

        Demonstration::new(path.times.clone(), qs, qdots, ConditionVector::identity())
    }
}

/// Largest per-chain Euclidean error of a stacked task-space difference.
pub fn chain_error(diff: &TaskVector) -> f64 {
    diff.as_slice()
        .chunks(2)
        .map(|c| (c[0] * c[0] + c[1] * c[1]).sqrt())
        .fold(0.0, f64::max)
}

fn block_diagonal_parts(
    inv: &DMatrix<f64>,
    chains: &[ChainSpec],
    offsets: &[usize],
) -> Option<Vec<Option<DMatrix<f64>>>> {
    let n = inv.nrows();
    let owner: Vec<usize> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, ch)| std::iter::repeat_n(c, ch.dof()))
        .collect();
    for i in 0..n {
        for j in 0..n {
            if owner[i] != owner[j] && inv[(i, j)] != 0.0 {
                return None;
            }
        }
    }
    Some(
        chains
            .iter()
            .zip(offsets)
            .map(|(ch, &o)| {
                let b = inv.view((o, o), (ch.dof(), ch.dof())).into_owned();
                if b == DMatrix::identity(ch.dof(), ch.dof()) {
                    None
                } else {
                    Some(b)
                }
            })
            .collect(),
    )
}

/// Timed task-space path, uniformly sampled.
#[derive(Clone, Debug)]
pub struct TaskPath {
    pub times: Vec<f64>,
    pub points: Vec<TaskVector>,
}

impl TaskPath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    fn validate(&self, dim_x: usize) -> Result<()> {
        if self.times.len() != self.points.len() || self.points.len() < 2 {
            return Err(Error::InvalidParameter(
                "task path needs at least two timed samples".into(),
            ));
        }
        if let Some(p) = self.points.iter().find(|p| p.len() != dim_x) {
            return Err(Error::dim(dim_x, p.len()));
        }
        let dt = self.dt();
        for w in self.times.windows(2) {
            if !(w[1] > w[0]) || ((w[1] - w[0]) - dt).abs() > 1e-9 {
                return Err(Error::InvalidParameter(
                    "task path timestamps must be uniform and increasing".into(),
                ));
            }
        }
        Ok(())
    }

    /// Central-difference velocities (one-sided at the ends).
    pub fn velocities(&self) -> Vec<TaskVector> {
        let n = self.len();
        let dt = self.dt();
        (0..n)
            .map(|k| {
                if k == 0 {
                    (&self.points[1] - &self.points[0]) / dt
                } else if k + 1 == n {
                    (&self.points[n - 1] - &self.points[n - 2]) / dt
                } else {
                    (&self.points[k + 1] - &self.points[k - 1]) / (2.0 * dt)
                }
            })
            .collect()
    }
}

/// Right weighted pseudoinverse `W Jᵀ (J W Jᵀ)⁻¹` with `W = M⁻¹` given.
fn weighted_right_inverse(j: &JacobianMatrix, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let wjt = w * j.transpose();
    let a = j * &wjt;
    let measure = a.clone().symmetric_eigenvalues().min();
    if !(measure >= SINGULARITY_TOL) {
        return Err(Error::Singular { measure });
    }
    let ch = a.cholesky().ok_or(Error::Singular { measure })?;
    // (W Jᵀ A⁻¹) = (A⁻¹ J W)ᵀ since A and W are symmetric.
    Ok(ch.solve(&wjt.transpose()).transpose())
}

/// Metric-weighted generalized inverse `J⁺ = M⁻¹Jᵀ(J M⁻¹ Jᵀ)⁻¹`.
///
/// `J·J⁺ = I` on task space and the columns of `J⁺` are `M`-orthogonal to
/// `ker J`. Fails with [`Error::Singular`] when `J M⁻¹ Jᵀ` has an eigenvalue
/// below [`SINGULARITY_TOL`].
pub fn generalized_inverse(j: &JacobianMatrix, metric: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = j.ncols();
    if metric.nrows() != n || metric.ncols() != n {
        return Err(Error::dim(n, metric.nrows()));
    }
    let w = metric
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidModel("metric is not positive definite".into()))?
        .inverse();
    weighted_right_inverse(j, &w)
}

/// Smallest of the `min(rows, cols)` singular values of `j`.
pub fn min_singular_value(j: &DMatrix<f64>) -> f64 {
    if j.is_empty() {
        return 0.0;
    }
    j.clone().singular_values().min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn two_link() -> RobotModel {
        RobotModel::new(vec![ChainSpec::new([0.0, 0.0], vec![1.0, 1.0])], Metric::Identity).unwrap()
    }

    fn four_link() -> RobotModel {
        RobotModel::new(
            vec![ChainSpec::new([0.1, -0.2], vec![0.5, 0.5, 0.4, 0.3])],
            Metric::Identity,
        )
        .unwrap()
    }

    /// Central finite differences of forward kinematics, step 1e-6.
    fn fd_jacobian(model: &RobotModel, q: &JointVector) -> DMatrix<f64> {
        let h = 1e-6;
        let mut j = DMatrix::zeros(model.dim_x(), model.dim_q());
        for i in 0..model.dim_q() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let d = (model.forward_kinematics(&qp).unwrap() - model.forward_kinematics(&qm).unwrap())
                / (2.0 * h);
            j.set_column(i, &d);
        }
        j
    }

    #[test]
    fn fk_straight_and_folded() {
        let m = two_link();
        let x = m.forward_kinematics(&DVector::from_vec(vec![0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(x, DVector::from_vec(vec![2.0, 0.0]), epsilon = 1e-15);
        let x = m.forward_kinematics(&DVector::from_vec(vec![FRAC_PI_2, 0.0])).unwrap();
        assert_abs_diff_eq!(x, DVector::from_vec(vec![0.0, 2.0]), epsilon = 1e-15);
        let x = m
            .forward_kinematics(&DVector::from_vec(vec![FRAC_PI_2, FRAC_PI_2]))
            .unwrap();
        assert_abs_diff_eq!(x, DVector::from_vec(vec![-1.0, 1.0]), epsilon = 1e-15);
    }

    #[test]
    fn fk_dimension_mismatch() {
        let m = two_link();
        assert!(matches!(
            m.forward_kinematics(&DVector::zeros(3)),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
        assert!(m.jacobian(&DVector::zeros(1)).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = two_link();
        let q = DVector::from_vec(vec![0.0, 0.0]);
        let fd = fd_jacobian(&m, &q);
        // Frozen from the finite-difference oracle.
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 1.0]);
        assert_abs_diff_eq!(fd, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(m.jacobian(&q).unwrap(), expected, epsilon = 1e-15);

        let q = DVector::from_vec(vec![FRAC_PI_2, FRAC_PI_2]);
        let fd = fd_jacobian(&m, &q);
        let expected = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -1.0, -1.0]);
        assert_abs_diff_eq!(fd, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(m.jacobian(&q).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_cross_chain_blocks_are_zero() {
        let m = RobotModel::new(
            vec![
                ChainSpec::new([-0.4, 0.0], vec![0.5, 0.5, 0.4]),
                ChainSpec::new([0.4, 0.0], vec![0.5, 0.5, 0.4]).with_base_angle(PI),
            ],
            Metric::Identity,
        )
        .unwrap();
        let q = DVector::from_vec(vec![0.3, -0.2, 0.9, 1.1, 0.4, -0.7]);
        let j = m.jacobian(&q).unwrap();
        for c in 0..2 {
            for col in 0..6 {
                if !m.joint_range(c).contains(&col) {
                    assert_eq!(j[(2 * c, col)], 0.0);
                    assert_eq!(j[(2 * c + 1, col)], 0.0);
                }
            }
        }
        assert_abs_diff_eq!(j, fd_jacobian(&m, &q), epsilon = 1e-8);
    }

    #[test]
    fn generalized_inverse_examples() {
        let j = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let p = generalized_inverse(&j, &DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(p, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]), epsilon = 1e-15);

        // Moore-Penrose oracle via SVD for M = I.
        let j = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let svd_pinv = j.clone().pseudo_inverse(1e-12).unwrap();
        let p = generalized_inverse(&j, &DMatrix::identity(2, 2)).unwrap();
        assert_abs_diff_eq!(p, svd_pinv, epsilon = 1e-15);
        assert_abs_diff_eq!(p, DMatrix::from_column_slice(2, 1, &[0.5, 0.5]), epsilon = 1e-15);

        // M = diag(1, 4): W Jᵀ = (1, 0.25)ᵀ, J W Jᵀ = 1.25.
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let p = generalized_inverse(&j, &m).unwrap();
        assert_abs_diff_eq!(p, DMatrix::from_column_slice(2, 1, &[0.8, 0.2]), epsilon = 1e-15);
    }

    #[test]
    fn generalized_inverse_rejects_rank_deficiency() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 1.0]);
        assert!(matches!(
            generalized_inverse(&j, &DMatrix::identity(2, 2)),
            Err(Error::Singular { .. })
        ));
        // Straight two-link arm is singular.
        let m = two_link();
        assert!(matches!(
            m.horizontal_lift(&DVector::zeros(2), &DVector::from_vec(vec![1.0, 0.0])),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn min_singular_value_examples() {
        let j = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(min_singular_value(&j), 1.0, epsilon = 1e-15);
        let j = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 1.0]);
        assert_abs_diff_eq!(min_singular_value(&j), 0.0, epsilon = 1e-15);
        // σ_min² is the smallest eigenvalue of J Jᵀ.
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -0.5, 0.3, -1.0, 2.0]);
        let eig = (&j * j.transpose()).symmetric_eigenvalues().min();
        assert_abs_diff_eq!(min_singular_value(&j), eig.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn fast_lift_matches_dense_formula() {
        let m = four_link();
        let q = DVector::from_vec(vec![0.3, 0.7, -0.4, 0.9]);
        let xdot = DVector::from_vec(vec![0.2, -0.1]);
        let fast = m.horizontal_lift(&q, &xdot).unwrap();
        let dense = generalized_inverse(&m.jacobian(&q).unwrap(), &DMatrix::identity(4, 4)).unwrap() * &xdot;
        assert_abs_diff_eq!(fast, dense, epsilon = 1e-13);

        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.5, 3.0]));
        let weighted = RobotModel::new(m.chains().to_vec(), Metric::Constant(w.clone())).unwrap();
        let fast = weighted.horizontal_lift(&q, &xdot).unwrap();
        let dense = generalized_inverse(&m.jacobian(&q).unwrap(), &w).unwrap() * &xdot;
        assert_abs_diff_eq!(fast, dense, epsilon = 1e-13);
    }

    #[test]
    fn coupled_metric_uses_dense_path() {
        let chains = vec![
            ChainSpec::new([-0.4, 0.0], vec![0.5, 0.5, 0.4]),
            ChainSpec::new([0.4, 0.0], vec![0.5, 0.5, 0.4]),
        ];
        let mut w = DMatrix::identity(6, 6) * 2.0;
        w[(0, 3)] = 0.3;
        w[(3, 0)] = 0.3;
        let model = RobotModel::new(chains, Metric::Constant(w.clone())).unwrap();
        assert!(model.inv_blocks.is_none());
        let q = DVector::from_vec(vec![0.3, 0.7, -0.4, 0.9, 0.1, 1.0]);
        let xdot = DVector::from_vec(vec![0.2, -0.1, 0.05, 0.3]);
        let lift = model.horizontal_lift(&q, &xdot).unwrap();
        let dense = generalized_inverse(&model.jacobian(&q).unwrap(), &w).unwrap() * &xdot;
        assert_abs_diff_eq!(lift, dense, epsilon = 1e-12);
    }

    #[test]
    fn tangent_decompose_special_cases() {
        let m = four_link();
        let q = DVector::from_vec(vec![0.3, 0.7, -0.4, 0.9]);
        let xdot = DVector::from_vec(vec![0.2, -0.1]);
        let horizontal = m.horizontal_lift(&q, &xdot).unwrap();
        let (v, h) = m.tangent_decompose(&q, &horizontal).unwrap();
        assert!(v.amax() < 1e-12);
        assert_abs_diff_eq!(h, horizontal, epsilon = 1e-12);

        // A kernel vector: project a random vector onto ker J.
        let j = m.jacobian(&q).unwrap();
        let r = DVector::from_vec(vec![0.4, -1.0, 0.3, 0.8]);
        let null = &r - m.generalized_inverse_at(&q).unwrap() * (&j * &r);
        let (v, h) = m.tangent_decompose(&q, &null).unwrap();
        assert!(h.amax() < 1e-12);
        assert_abs_diff_eq!(v, null, epsilon = 1e-12);
    }

    #[test]
    fn model_validation() {
        assert!(RobotModel::new(vec![], Metric::Identity).is_err());
        assert!(RobotModel::new(vec![ChainSpec::new([0.0, 0.0], vec![])], Metric::Identity).is_err());
        assert!(RobotModel::new(vec![ChainSpec::new([0.0, 0.0], vec![1.0, -1.0])], Metric::Identity).is_err());
        let not_spd = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(RobotModel::new(
            vec![ChainSpec::new([0.0, 0.0], vec![1.0, 1.0])],
            Metric::Constant(not_spd)
        )
        .is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(RobotModel::new(
            vec![ChainSpec::new([0.0, 0.0], vec![1.0, 1.0])],
            Metric::Constant(asym)
        )
        .is_err());
    }

    #[test]
    fn ik_reaches_target() {
        let m = four_link();
        let guess = DVector::from_vec(vec![0.2, 0.4, 0.4, 0.4]);
        let target = DVector::from_vec(vec![0.3, 1.0]);
        let q = m.inverse_kinematics(&target, &guess).unwrap();
        assert!((m.forward_kinematics(&q).unwrap() - target).amax() < 1e-12);
        let unreachable = DVector::from_vec(vec![5.0, 0.0]);
        assert!(matches!(
            m.inverse_kinematics(&unreachable, &guess),
            Err(Error::IkFailed { .. })
        ));
    }

    fn arc_path(center: [f64; 2], radius: f64, from: f64, to: f64, n: usize) -> TaskPath {
        let dt = 0.025;
        let times = (0..n).map(|k| k as f64 * dt).collect();
        let points = (0..n)
            .map(|k| {
                let a = from + (to - from) * k as f64 / (n - 1) as f64;
                DVector::from_vec(vec![center[0] + radius * a.cos(), center[1] + radius * a.sin()])
            })
            .collect();
        TaskPath { times, points }
    }

    #[test]
    fn tracking_constant_path_stays_put() {
        let m = four_link();
        let q0 = DVector::from_vec(vec![0.3, 0.7, -0.4, 0.9]);
        let x0 = m.forward_kinematics(&q0).unwrap();
        let path = TaskPath {
            times: (0..20).map(|k| k as f64 * 0.05).collect(),
            points: vec![x0; 20],
        };
        let demo = m.track_task_path(&path, &q0).unwrap();
        for (q, qd) in demo.q.iter().zip(&demo.qdot) {
            assert!((q - &q0).amax() < 1e-12);
            assert!(qd.amax() < 1e-12);
        }
    }

    #[test]
    fn tracking_follows_arc_horizontally() {
        let m = four_link();
        let guess = DVector::from_vec(vec![0.5, 0.6, 0.6, 0.4]);
        let path = arc_path([0.3, 0.6], 0.2, 0.0, 1.5 * PI, 200);
        let q0 = m.inverse_kinematics(&path.points[0], &guess).unwrap();
        let demo = m.track_task_path(&path, &q0).unwrap();
        let mut max_err: f64 = 0.0;
        for (k, q) in demo.q.iter().enumerate() {
            let x = m.forward_kinematics(q).unwrap();
            max_err = max_err.max(chain_error(&(x - &path.points[k])));
            let (v, _) = m.tangent_decompose(q, &demo.qdot[k]).unwrap();
            assert!(v.amax() < 1e-10);
        }
        assert!(max_err <= 1e-3, "max tracking error {max_err}");
    }

    #[test]
    fn tracking_unreachable_path_diverges() {
        let m = four_link();
        let q0 = DVector::from_vec(vec![FRAC_PI_4, 0.5, 0.5, 0.5]);
        let x0 = m.forward_kinematics(&q0).unwrap();
        let n = 100;
        let target = DVector::from_vec(vec![3.0, 0.0]);
        let path = TaskPath {
            times: (0..n).map(|k| k as f64 * 0.02).collect(),
            points: (0..n)
                .map(|k| &x0 + (&target - &x0) * (k as f64 / (n - 1) as f64))
                .collect(),
        };
        assert!(matches!(
            m.track_task_path(&path, &q0),
            Err(Error::TrackingDivergence { .. })
        ));
    }
}
