//! Moving symmetries between configuration and task space.
//!
//! A configuration-space action *descends* when forward kinematics is
//! equivariant, `f(Φ_Q(g, q)) = Φ_X(g, f(q))`. A one-parameter task-space
//! action *lifts* through the horizontal lift of its generator,
//! `X_Q(q) = J⁺(q)·X_X(f(q))`, whose flow is integrated with fixed-step RK4.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kinematics::{JointVector, RobotModel, SINGULARITY_TOL};
use crate::symmetry::{GeneratorField, Group, GroupAction, GroupElement, LinearAction, Space, VectorField};

/// Default RK4 step.
pub const DEFAULT_STEP: f64 = 1e-3;
/// Flows abort when `λ_min(J M⁻¹ Jᵀ)` drops below this.
pub const FLOW_SINGULARITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DescendReport {
    pub passed: bool,
    pub max_violation: f64,
    pub worst_q: Option<Vec<f64>>,
    pub samples_tested: usize,
    pub tolerance: f64,
}

/// Checks that `action_x` is the task-space action induced by `action_q`.
///
/// Draws `n_samples` nonsingular configurations uniformly from `[-π, π]ⁿ`
/// (seeded) and tests every element of a finite group, or the parameter grid
/// of a Lie group. The violation is the ∞-norm of
/// `f(Φ_Q(g, q)) − Φ_X(g, f(q))`.
pub fn descend(
    model: &RobotModel,
    action_q: &LinearAction,
    action_x: &LinearAction,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> DescendReport {
    let fail = |samples_tested| DescendReport {
        passed: false,
        max_violation: f64::INFINITY,
        worst_q: None,
        samples_tested,
        tolerance: tol,
    };
    if action_q.space() != Space::Q
        || action_x.space() != Space::X
        || action_q.dim() != model.dim_q()
        || action_x.dim() != model.dim_x()
        || action_q.group() != action_x.group()
    {
        return fail(0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let elements = action_q.group().test_elements(&mut rng, 0);
    let mut max_violation = 0.0f64;
    let mut worst_q = None;
    for _ in 0..n_samples {
        let q = random_nonsingular(model, &mut rng);
        let x = model.forward_kinematics(&q).expect("dimension matches model");
        for g in &elements {
            let (Ok(gq), Ok(gx)) = (action_q.act(g, &q), action_x.act(g, &x)) else {
                return fail(n_samples);
            };
            let v = (model.forward_kinematics(&gq).expect("dimension matches model") - gx).amax();
            if !(v <= max_violation) {
                max_violation = v;
                worst_q = Some(q.as_slice().to_vec());
            }
        }
    }
    DescendReport {
        passed: max_violation <= tol,
        max_violation,
        worst_q,
        samples_tested: n_samples,
        tolerance: tol,
    }
}

fn random_nonsingular<R: Rng>(model: &RobotModel, rng: &mut R) -> JointVector {
    use std::f64::consts::PI;
    loop {
        let q = DVector::from_fn(model.dim_q(), |_, _| rng.random_range(-PI..=PI));
        if model.singularity_measure(&q).map_or(false, |m| m >= SINGULARITY_TOL) {
            return q;
        }
    }
}

/// Horizontally lifted generator `J⁺(q)·X(f(q))`.
pub fn lift_generator(model: &RobotModel, field: &dyn VectorField, q: &JointVector) -> Result<JointVector> {
    if field.dim() != model.dim_x() {
        return Err(Error::dim(model.dim_x(), field.dim()));
    }
    let x = model.forward_kinematics(q)?;
    model.horizontal_lift(q, &field.eval(&x))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelatednessReport {
    pub passed: bool,
    /// Largest `‖J·X_Q − X_X∘f‖∞`.
    pub max_relatedness: f64,
    /// Largest `‖vertical part of X_Q‖∞`.
    pub max_vertical: f64,
    pub samples_tested: usize,
    pub tolerance: f64,
}

/// Checks that the lifted generator is f-related to `field` and horizontal at
/// `n_samples` seeded nonsingular configurations.
pub fn verify_f_relatedness(
    model: &RobotModel,
    field: &dyn VectorField,
    n_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<RelatednessReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut max_relatedness, mut max_vertical) = (0.0f64, 0.0f64);
    for _ in 0..n_samples {
        let q = random_nonsingular(model, &mut rng);
        let lifted = lift_generator(model, field, &q)?;
        let x = model.forward_kinematics(&q)?;
        max_relatedness = max_relatedness.max((model.jacobian(&q)? * &lifted - field.eval(&x)).amax());
        let (vertical, _) = model.tangent_decompose(&q, &lifted)?;
        max_vertical = max_vertical.max(vertical.amax());
    }
    Ok(RelatednessReport {
        passed: max_relatedness <= tol && max_vertical <= tol,
        max_relatedness,
        max_vertical,
        samples_tested: n_samples,
        tolerance: tol,
    })
}

/// Right-hand side of the lifted flow with preallocated scratch space.
struct LiftedRhs<'a> {
    model: &'a RobotModel,
    field: &'a GeneratorField,
    x: Vec<f64>,
    gx: Vec<f64>,
}

impl<'a> LiftedRhs<'a> {
    fn new(model: &'a RobotModel, field: &'a GeneratorField) -> Self {
        Self {
            model,
            field,
            x: vec![0.0; model.dim_x()],
            gx: vec![0.0; model.dim_x()],
        }
    }

    fn eval(&mut self, q: &[f64], out: &mut [f64]) -> Result<()> {
        self.model.fk_into(q, &mut self.x);
        self.field.eval_into(&self.x, &mut self.gx);
        let measure = self.model.lift_core(q, &self.gx, out, 0.0);
        if !(measure >= FLOW_SINGULARITY_TOL) {
            return Err(Error::Singular { measure });
        }
        Ok(())
    }
}

struct Rk4<'a> {
    rhs: LiftedRhs<'a>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a> Rk4<'a> {
    fn new(model: &'a RobotModel, field: &'a GeneratorField) -> Self {
        let n = model.dim_q();
        Self {
            rhs: LiftedRhs::new(model, field),
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    /// One step of size `h` from `q` into `out`.
    fn step(&mut self, q: &[f64], h: f64, out: &mut [f64]) -> Result<()> {
        let [k1, k2, k3, k4] = &mut self.k;
        self.rhs.eval(q, k1)?;
        axpy_into(q, 0.5 * h, k1, &mut self.tmp);
        self.rhs.eval(&self.tmp, k2)?;
        axpy_into(q, 0.5 * h, k2, &mut self.tmp);
        self.rhs.eval(&self.tmp, k3)?;
        axpy_into(q, h, k3, &mut self.tmp);
        self.rhs.eval(&self.tmp, k4)?;
        for i in 0..q.len() {
            out[i] = q[i] + h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lifted flow state".into()));
        }
        Ok(())
    }
}

fn axpy_into(x: &[f64], a: f64, y: &[f64], out: &mut [f64]) {
    for i in 0..x.len() {
        out[i] = x[i] + a * y[i];
    }
}

/// Flow of the lifted generator at time `t`, by RK4 with step `h`.
pub fn lift_flow(model: &RobotModel, field: &GeneratorField, q0: &JointVector, t: f64, h: f64) -> Result<JointVector> {
    Ok(lift_flow_many(model, field, q0, &[t], h)?.remove(0))
}

/// Flow of the lifted generator at each of `times`, in one integration pass
/// per sign of `t`.
///
/// The integrator marches with full steps `h` from `0`; each target is reached
/// by one partial step from the last full step before it, without disturbing
/// the march. The result for a given `t` therefore does not depend on which
/// other targets are requested.
pub fn lift_flow_many(
    model: &RobotModel,
    field: &GeneratorField,
    q0: &JointVector,
    times: &[f64],
    h: f64,
) -> Result<Vec<JointVector>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    if q0.len() != model.dim_q() {
        return Err(Error::dim(model.dim_q(), q0.len()));
    }
    if field.dim() != model.dim_x() {
        return Err(Error::dim(model.dim_x(), field.dim()));
    }
    if let Some(t) = times.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter(format!("flow time {t}")));
    }
    let measure = model.singularity_measure(q0)?;
    if !(measure >= FLOW_SINGULARITY_TOL) {
        return Err(Error::Singular { measure });
    }

    let mut out = vec![None; times.len()];
    let mut rk = Rk4::new(model, field);
    for sign in [1.0, -1.0] {
        // (full steps before the target, remainder, index), sorted by time.
        let mut targets: Vec<(u64, f64, usize)> = times
            .iter()
            .enumerate()
            .filter(|(_, t)| if sign > 0.0 { **t >= 0.0 } else { **t < 0.0 })
            .map(|(i, t)| {
                let n = (t.abs() / h).floor();
                (n as u64, t.abs() - n * h, i)
            })
            .collect();
        targets.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

        let mut q = q0.as_slice().to_vec();
        let mut next = vec![0.0; q.len()];
        let mut done = 0u64;
        for (n, rem, i) in targets {
            while done < n {
                rk.step(&q, sign * h, &mut next)?;
                std::mem::swap(&mut q, &mut next);
                done += 1;
            }
            let v = if rem > 0.0 {
                rk.step(&q, sign * rem, &mut next)?;
                DVector::from_column_slice(&next)
            } else {
                DVector::from_column_slice(&q)
            };
            out[i] = Some(v);
        }
    }
    Ok(out.into_iter().map(|v| v.expect("every target visited")).collect())
}

/// The configuration-space action obtained by lifting a one-parameter
/// task-space action. `apply(exp(tξ), q)` is the lifted flow at time `t`.
#[derive(Clone, Debug)]
pub struct LiftedAction {
    model: Arc<RobotModel>,
    field: GeneratorField,
    step: f64,
}

impl LiftedAction {
    pub fn new(model: Arc<RobotModel>, field: GeneratorField, step: f64) -> Result<Self> {
        if field.dim() != model.dim_x() {
            return Err(Error::dim(model.dim_x(), field.dim()));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
        }
        Ok(Self { model, field, step })
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn field(&self) -> &GeneratorField {
        &self.field
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Flow for time `t`.
    pub fn flow(&self, t: f64, q: &JointVector) -> Result<JointVector> {
        lift_flow(&self.model, &self.field, q, t, self.step)
    }

    pub fn flow_many(&self, q: &JointVector, times: &[f64]) -> Result<Vec<JointVector>> {
        lift_flow_many(&self.model, &self.field, q, times, self.step)
    }
}

impl GroupAction for LiftedAction {
    fn space(&self) -> Space {
        Space::Q
    }

    fn dim(&self) -> usize {
        self.model.dim_q()
    }

    fn group(&self) -> Group {
        Group::Lie(self.field.group)
    }

    fn apply(&self, g: &GroupElement, q: &JointVector) -> Result<JointVector> {
        match g {
            GroupElement::Lie(p) if self.field.group.contains(*p) => self.flow(self.field.group.log(*p), q),
            other => Err(Error::InvalidParameter(format!(
                "{other:?} is not an element of {}",
                self.field.group
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NaturalityReport {
    pub passed: bool,
    pub max_deviation: f64,
    pub worst_t: f64,
    pub deviations: Vec<f64>,
    pub tolerance: f64,
}

/// Compares `f(γ_Q(t, q0))` against the closed-form task flow
/// `γ_X(t, f(q0))` on `t_grid`; deviations are Euclidean norms.
pub fn verify_flow_naturality(
    model: &RobotModel,
    field: &GeneratorField,
    q0: &JointVector,
    t_grid: &[f64],
    h: f64,
    tol: f64,
) -> Result<NaturalityReport> {
    let flows = lift_flow_many(model, field, q0, t_grid, h)?;
    let x0 = model.forward_kinematics(q0)?;
    let mut deviations = Vec::with_capacity(t_grid.len());
    let (mut max_deviation, mut worst_t) = (0.0f64, 0.0);
    for (q, &t) in flows.iter().zip(t_grid) {
        let d = (model.forward_kinematics(q)? - field.flow(t, &x0)?).norm();
        if d > max_deviation {
            max_deviation = d;
            worst_t = t;
        }
        deviations.push(d);
    }
    Ok(NaturalityReport {
        passed: max_deviation <= tol,
        max_deviation,
        worst_t,
        deviations,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{ChainSpec, Metric};
    use crate::symmetry::{build_morphological_action, LieGroupSpec};
    use nalgebra::DMatrix;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn two_link() -> RobotModel {
        RobotModel::new(vec![ChainSpec::new([0.0, 0.0], vec![1.0, 1.0])], Metric::Identity).unwrap()
    }

    fn dual_arm() -> RobotModel {
        RobotModel::new(
            vec![
                ChainSpec::new([-0.4, 0.0], vec![0.5, 0.5, 0.4, 0.3]).with_base_angle(FRAC_PI_2),
                ChainSpec::new([0.4, 0.0], vec![0.5, 0.5, 0.4, 0.3]).with_base_angle(FRAC_PI_2),
            ],
            Metric::Identity,
        )
        .unwrap()
    }

    /// Mirrored configuration placing the end effectors at (∓0.6, 0.95).
    fn bent() -> JointVector {
        let guess = DVector::from_vec(vec![0.4, 0.5, 0.6, 0.5, -0.4, -0.5, -0.6, -0.5]);
        let target = DVector::from_vec(vec![-0.6, 0.95, 0.6, 0.95]);
        dual_arm().inverse_kinematics(&target, &guess).unwrap()
    }

    fn so2_about_ee(model: &RobotModel, q: &JointVector, offset: f64) -> GeneratorField {
        let x = model.forward_kinematics(q).unwrap();
        GeneratorField {
            space: Space::X,
            group: LieGroupSpec::So2,
            centers: (0..model.chains().len())
                .map(|c| [x[2 * c] - offset, x[2 * c + 1]])
                .collect(),
        }
    }

    #[test]
    fn descend_identity_group() {
        let m = dual_arm();
        let r = descend(
            &m,
            &LinearAction::trivial(Space::Q, 8),
            &LinearAction::trivial(Space::X, 4),
            20,
            0.0,
            1,
        );
        assert!(r.passed);
        assert_eq!(r.max_violation, 0.0);
    }

    #[test]
    fn descend_mirrored_swap_and_corrupted_reflection() {
        let m = dual_arm();
        let (q_act, x_act) = build_morphological_action(&m, &[-1.0; 4], [-1.0, 1.0]).unwrap();
        let r = descend(&m, &q_act, &x_act, 100, 1e-10, 7);
        assert!(r.passed, "{r:?}");
        assert_eq!(r.samples_tested, 100);

        let (_, bad_x) = build_morphological_action(&m, &[-1.0; 4], [1.0, 1.0]).unwrap();
        let r = descend(&m, &q_act, &bad_x, 100, 1e-10, 7);
        assert!(!r.passed);
        assert!(r.max_violation > 0.1, "{r:?}");
        assert!(r.worst_q.is_some());
    }

    #[test]
    fn lift_generator_is_f_related_and_horizontal() {
        let m = two_link();
        let q = DVector::from_vec(vec![FRAC_PI_4, FRAC_PI_2]);
        let field = GeneratorField::origin(Space::X, LieGroupSpec::So2, 1);
        let v = lift_generator(&m, &field, &q).unwrap();
        let x = m.forward_kinematics(&q).unwrap();
        let jv = m.jacobian(&q).unwrap() * &v;
        assert!((jv - DVector::from_vec(vec![-x[1], x[0]])).amax() <= 1e-10);

        let m = dual_arm();
        let q = bent();
        for group in [LieGroupSpec::So2, LieGroupSpec::Scaling] {
            let field = GeneratorField {
                space: Space::X,
                group,
                centers: vec![[-0.6, 0.95], [0.6, 0.95]],
            };
            let v = lift_generator(&m, &field, &q).unwrap();
            let jv = m.jacobian(&q).unwrap() * &v;
            assert!((jv - field.eval(&m.forward_kinematics(&q).unwrap())).amax() <= 1e-10);
            let (vertical, _) = m.tangent_decompose(&q, &v).unwrap();
            assert!(vertical.amax() <= 1e-10);
        }
    }

    #[test]
    fn lift_of_vanishing_field_is_zero() {
        let m = dual_arm();
        let q = bent();
        let x = m.forward_kinematics(&q).unwrap();
        let field = GeneratorField {
            space: Space::X,
            group: LieGroupSpec::Scaling,
            centers: vec![[x[0], x[1]], [x[2], x[3]]],
        };
        assert_eq!(lift_generator(&m, &field, &q).unwrap().amax(), 0.0);
    }

    #[test]
    fn scaling_lift_is_blockwise() {
        let m = dual_arm();
        let q = bent();
        let field = GeneratorField {
            space: Space::X,
            group: LieGroupSpec::Scaling,
            centers: vec![[-0.6, 0.95], [0.6, 0.95]],
        };
        let v = lift_generator(&m, &field, &q).unwrap();
        let j = m.jacobian(&q).unwrap();
        let x = m.forward_kinematics(&q).unwrap();
        for c in 0..2 {
            let r = m.joint_range(c);
            let jc: DMatrix<f64> = j.view((2 * c, r.start), (2, r.len())).into_owned();
            let pinv = jc.clone().pseudo_inverse(1e-14).unwrap();
            let gx = DVector::from_vec(vec![x[2 * c] - field.centers[c][0], x[2 * c + 1] - field.centers[c][1]]);
            assert!((pinv * gx - v.rows(r.start, r.len())).amax() <= 1e-12);
        }
    }

    #[test]
    fn flow_at_zero_is_exact() {
        let m = dual_arm();
        let q = bent();
        let field = so2_about_ee(&m, &q, 0.2);
        assert_eq!(lift_flow(&m, &field, &q, 0.0, 1e-3).unwrap(), q);
    }

    #[test]
    fn flow_quarter_turn_and_full_circle() {
        let m = dual_arm();
        let q = bent();
        let field = so2_about_ee(&m, &q, 0.2);
        let x0 = m.forward_kinematics(&q).unwrap();
        let qs = lift_flow_many(&m, &field, &q, &[FRAC_PI_2, 2.0 * PI], 1e-3).unwrap();
        let x = m.forward_kinematics(&qs[0]).unwrap();
        assert!((x - field.flow(FRAC_PI_2, &x0).unwrap()).norm() <= 1e-6);
        let x = m.forward_kinematics(&qs[1]).unwrap();
        assert!((x - &x0).norm() <= 1e-5);
    }

    #[test]
    fn multi_target_pass_matches_single_targets() {
        let m = dual_arm();
        let q = bent();
        let field = so2_about_ee(&m, &q, 0.15);
        let ts = [0.3, -0.7, 0.0, 1.2345, -0.0005, 0.3];
        let many = lift_flow_many(&m, &field, &q, &ts, 1e-3).unwrap();
        for (t, v) in ts.iter().zip(&many) {
            assert_eq!(&lift_flow(&m, &field, &q, *t, 1e-3).unwrap(), v);
        }
    }

    #[test]
    fn scaling_flow_doubles_task_point() {
        let m = dual_arm();
        let q = bent();
        let x0 = m.forward_kinematics(&q).unwrap();
        let centers = vec![[x0[0] - 0.1, x0[1] + 0.05], [x0[2] + 0.1, x0[3] + 0.05]];
        let field = GeneratorField {
            space: Space::X,
            group: LieGroupSpec::Scaling,
            centers: centers.clone(),
        };
        let r = verify_flow_naturality(&m, &field, &q, &[0.0, 2f64.ln()], 1e-3, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.deviations[0], 0.0);
        let q2 = lift_flow(&m, &field, &q, 2f64.ln(), 1e-3).unwrap();
        let x2 = m.forward_kinematics(&q2).unwrap();
        for c in 0..2 {
            for k in 0..2 {
                let expected = centers[c][k] + 2.0 * (x0[2 * c + k] - centers[c][k]);
                assert!((x2[2 * c + k] - expected).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn flow_semigroup() {
        let m = dual_arm();
        let q = bent();
        let field = so2_about_ee(&m, &q, 0.25);
        let (t1, t2) = (0.8, 1.1);
        let direct = lift_flow(&m, &field, &q, t1 + t2, 1e-3).unwrap();
        let stepped = lift_flow(&m, &field, &lift_flow(&m, &field, &q, t1, 1e-3).unwrap(), t2, 1e-3).unwrap();
        assert!((direct - stepped).amax() <= 2e-6);
    }

    #[test]
    fn flow_into_singularity_errors() {
        // Rotating the tip of a two-link arm about a point 1.5 away from it
        // drives the tip to full extension.
        let m = two_link();
        let q = DVector::from_vec(vec![0.0, 2.0]);
        let x = m.forward_kinematics(&q).unwrap();
        let field = GeneratorField {
            space: Space::X,
            group: LieGroupSpec::So2,
            centers: vec![[x[0] + 1.5, x[1]]],
        };
        assert!(matches!(
            lift_flow(&m, &field, &q, PI, 1e-3),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn lifted_action_maps_parameters_to_times() {
        let m = Arc::new(dual_arm());
        let q = bent();
        let field = so2_about_ee(&m, &q, 0.2);
        let lifted = LiftedAction::new(m.clone(), field.clone(), 1e-3).unwrap();
        assert_eq!(lifted.apply(&GroupElement::Lie(0.0), &q).unwrap(), q);
        assert_eq!(
            lifted.apply(&GroupElement::Lie(0.5), &q).unwrap(),
            lift_flow(&m, &field, &q, 0.5, 1e-3).unwrap()
        );
        assert!(lifted.apply(&GroupElement::Finite(1), &q).is_err());
    }
}
