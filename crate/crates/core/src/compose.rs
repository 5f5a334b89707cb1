//! Compatibility of symmetries and their composition into product groups.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::symmetry::{
    Automorphism, Group, GroupAction, GroupElement, LieGroupSpec, LinearAction, Space, Twist, VectorField,
    FD_STEP,
};

/// Random draws added to each Lie factor's 8-point grid by [`commute_test`].
pub const COMMUTE_RANDOM: usize = 20;
/// Tolerance for recovering a conjugated parameter.
pub const TWIST_RECOVERY_TOL: f64 = 1e-10;

/// Jacobian of a vector field at `p` by central differences.
fn field_jacobian(field: &dyn VectorField, p: &DVector<f64>) -> DMatrix<f64> {
    let n = p.len();
    let mut jac = DMatrix::zeros(field.dim(), n);
    let mut pp = p.clone();
    for k in 0..n {
        pp[k] = p[k] + FD_STEP;
        let plus = field.eval(&pp);
        pp[k] = p[k] - FD_STEP;
        let minus = field.eval(&pp);
        pp[k] = p[k];
        jac.set_column(k, &((plus - minus) / (2.0 * FD_STEP)));
    }
    jac
}

/// Lie bracket `[A, B](p) = dA|ₚ·B(p) − dB|ₚ·A(p)`.
pub fn lie_bracket(a: &dyn VectorField, b: &dyn VectorField, p: &DVector<f64>) -> Result<DVector<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::dim(a.dim(), b.dim()));
    }
    if p.len() != a.dim() {
        return Err(Error::dim(a.dim(), p.len()));
    }
    Ok(field_jacobian(a, p) * b.eval(p) - field_jacobian(b, p) * a.eval(p))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommuteReport {
    pub passed: bool,
    pub max_violation: f64,
    pub pairs_tested: usize,
    pub points_tested: usize,
    pub tolerance: f64,
}

/// Checks `Φ_A(a, Φ_B(b, p)) = Φ_B(b, Φ_A(a, p))` on `samples` for every
/// pair of test elements: all elements of finite groups, and for Lie groups an
/// 8-point grid plus [`COMMUTE_RANDOM`] draws from `seed`.
pub fn commute_test(
    a: &dyn GroupAction,
    b: &dyn GroupAction,
    samples: &[DVector<f64>],
    tol: f64,
    seed: u64,
) -> CommuteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ea = a.group().test_elements(&mut rng, COMMUTE_RANDOM);
    let eb = b.group().test_elements(&mut rng, COMMUTE_RANDOM);
    commute_test_on(a, b, &ea, &eb, samples, tol)
}

/// [`commute_test`] on caller-chosen elements; used for lifted actions, whose
/// every application integrates a flow.
pub fn commute_test_on(
    a: &dyn GroupAction,
    b: &dyn GroupAction,
    elements_a: &[GroupElement],
    elements_b: &[GroupElement],
    samples: &[DVector<f64>],
    tol: f64,
) -> CommuteReport {
    let mut report = CommuteReport {
        passed: false,
        max_violation: f64::INFINITY,
        pairs_tested: elements_a.len() * elements_b.len(),
        points_tested: samples.len(),
        tolerance: tol,
    };
    if a.space() != b.space() || a.dim() != b.dim() {
        return report;
    }
    let pairs: Vec<(&GroupElement, &GroupElement)> = elements_a
        .iter()
        .flat_map(|x| elements_b.iter().map(move |y| (x, y)))
        .collect();
    let violations = crate::par::map(&pairs, |(ga, gb)| -> f64 {
        let mut worst = 0.0f64;
        for p in samples {
            let ab = b.apply(gb, p).and_then(|q| a.apply(ga, &q));
            let ba = a.apply(ga, p).and_then(|q| b.apply(gb, &q));
            match (ab, ba) {
                (Ok(x), Ok(y)) => worst = worst.max((x - y).amax()),
                _ => return f64::INFINITY,
            }
        }
        worst
    });
    let max_violation = violations.into_iter().fold(0.0, f64::max);
    report.max_violation = max_violation;
    report.passed = max_violation <= tol;
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProductKind {
    Direct,
    Semidirect,
}

/// The action of `G₁ × G₂` or `G₁ ⋉ G₂` given by
/// `Φ((g₁, g₂), p) = Φ₁(g₁, Φ₂(g₂, p))`. For the semi-direct product the twist
/// enters through the group law, see [`Group::compose`].
#[derive(Clone)]
pub struct ComposedAction {
    kind: ProductKind,
    first: Arc<dyn GroupAction>,
    second: Arc<dyn GroupAction>,
    group: Group,
}

impl std::fmt::Debug for ComposedAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ComposedAction")
            .field("kind", &self.kind)
            .field("group", &self.group)
            .finish()
    }
}

impl ComposedAction {
    pub fn kind(&self) -> ProductKind {
        self.kind
    }

    pub fn factors(&self) -> (&Arc<dyn GroupAction>, &Arc<dyn GroupAction>) {
        (&self.first, &self.second)
    }

    pub fn twist(&self) -> Option<&Twist> {
        match &self.group {
            Group::Product(p) => p.twist.as_ref(),
            _ => None,
        }
    }
}

impl GroupAction for ComposedAction {
    fn space(&self) -> Space {
        self.first.space()
    }

    fn dim(&self) -> usize {
        self.first.dim()
    }

    fn group(&self) -> Group {
        self.group.clone()
    }

    fn apply(&self, g: &GroupElement, p: &DVector<f64>) -> Result<DVector<f64>> {
        let GroupElement::Pair(g1, g2) = g else {
            return Err(Error::InvalidParameter(format!("expected a pair, got {g:?}")));
        };
        self.first.apply(g1, &self.second.apply(g2, p)?)
    }
}

/// Direct product of two commuting actions. Fails with
/// [`Error::NonCommuting`] if [`commute_test`] does not pass at `tol`.
pub fn direct_product(
    a: Arc<dyn GroupAction>,
    b: Arc<dyn GroupAction>,
    samples: &[DVector<f64>],
    tol: f64,
    seed: u64,
) -> Result<ComposedAction> {
    check_same_space(a.as_ref(), b.as_ref())?;
    let report = commute_test(a.as_ref(), b.as_ref(), samples, tol, seed);
    if !report.passed {
        return Err(Error::NonCommuting {
            violation: report.max_violation,
        });
    }
    Ok(ComposedAction {
        kind: ProductKind::Direct,
        group: Group::product(a.group(), b.group(), None),
        first: a,
        second: b,
    })
}

fn check_same_space(a: &dyn GroupAction, b: &dyn GroupAction) -> Result<()> {
    if a.space() != b.space() {
        return Err(Error::InvalidParameter(format!(
            "actions live on {:?} and {:?}",
            a.space(),
            b.space()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::dim(a.dim(), b.dim()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemidirectReport {
    /// Largest deviation of `Φ(g)∘Φ(g′)` from `Φ(g·g′)`.
    pub max_law_violation: f64,
    pub pairs_tested: usize,
}

/// Semi-direct product `G₁ ⋉ G₂` with `G₁` finite.
///
/// Verifies that every `twist` image is an automorphism of `G₂` and that the
/// twist is a homomorphism, on test elements of `G₂`, then checks the group
/// law `Φ(g)∘Φ(g′) = Φ(g·g′)` on `n_pairs` random pairs applied to `samples`.
pub fn semidirect_product(
    a: Arc<dyn GroupAction>,
    b: Arc<dyn GroupAction>,
    twist: Twist,
    samples: &[DVector<f64>],
    n_pairs: usize,
    tol: f64,
    seed: u64,
) -> Result<(ComposedAction, SemidirectReport)> {
    check_same_space(a.as_ref(), b.as_ref())?;
    let (g1, g2) = (a.group(), b.group());
    let Group::Finite(fg) = &g1 else {
        return Err(Error::InvalidTwist("the acting factor must be a finite group".into()));
    };
    if twist.images.len() != fg.order() {
        return Err(Error::InvalidTwist(format!(
            "{} images for a group of order {}",
            twist.images.len(),
            fg.order()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test2 = g2.test_elements(&mut rng, COMMUTE_RANDOM);
    if !matches!(twist.images[0], Automorphism::Identity) {
        for x in &test2 {
            if !elements_close(&g2, &twist.images[0].apply(&g2, x)?, x) {
                return Err(Error::InvalidTwist("identity does not map to the identity automorphism".into()));
            }
        }
    }
    for (i, phi) in twist.images.iter().enumerate() {
        for x in &test2 {
            for y in test2.iter().take(8) {
                let lhs = phi.apply(&g2, &g2.compose(x, y)?)?;
                let rhs = g2.compose(&phi.apply(&g2, x)?, &phi.apply(&g2, y)?)?;
                if !elements_close(&g2, &lhs, &rhs) {
                    return Err(Error::InvalidTwist(format!("image of element {i} is not a homomorphism")));
                }
            }
        }
        for j in 0..fg.order() {
            let composed = &twist.images[fg.compose(i, j)];
            for x in &test2 {
                let lhs = composed.apply(&g2, x)?;
                let rhs = phi.apply(&g2, &twist.images[j].apply(&g2, x)?)?;
                if !elements_close(&g2, &lhs, &rhs) {
                    return Err(Error::InvalidTwist(format!("ρ({i}·{j}) ≠ ρ({i})∘ρ({j})")));
                }
            }
        }
    }

    let group = Group::product(g1, g2, Some(twist));
    let action = ComposedAction {
        kind: ProductKind::Semidirect,
        first: a,
        second: b,
        group: group.clone(),
    };
    let pairs: Vec<_> = (0..n_pairs)
        .map(|_| (group.random(&mut rng), group.random(&mut rng)))
        .collect();
    let violations = crate::par::try_map(&pairs, |(g, h)| -> Result<f64> {
        let gh = group.compose(g, h)?;
        let mut worst = 0.0f64;
        for p in samples {
            let lhs = action.apply(g, &action.apply(h, p)?)?;
            let rhs = action.apply(&gh, p)?;
            worst = worst.max((lhs - rhs).amax());
        }
        Ok(worst)
    })?;
    let max_law_violation = violations.into_iter().fold(0.0, f64::max);
    if !(max_law_violation <= tol) {
        return Err(Error::InvalidTwist(format!(
            "group law violated by {max_law_violation:.3e}"
        )));
    }
    Ok((
        action,
        SemidirectReport {
            max_law_violation,
            pairs_tested: n_pairs,
        },
    ))
}

fn elements_close(group: &Group, x: &GroupElement, y: &GroupElement) -> bool {
    match (group, x, y) {
        (Group::Finite(_), GroupElement::Finite(a), GroupElement::Finite(b)) => a == b,
        (Group::Lie(LieGroupSpec::So2), GroupElement::Lie(a), GroupElement::Lie(b)) => {
            crate::symmetry::wrap_angle(a - b).abs() <= 1e-10
        }
        (Group::Lie(LieGroupSpec::Scaling), GroupElement::Lie(a), GroupElement::Lie(b)) => {
            (a - b).abs() <= 1e-10 * a.abs().max(1.0)
        }
        (Group::Product(p), GroupElement::Pair(a1, a2), GroupElement::Pair(b1, b2)) => {
            elements_close(&p.left, a1, b1) && elements_close(&p.right, a2, b2)
        }
        _ => false,
    }
}

/// Affine form `p ↦ L·p + o` of an element of a linear action.
fn affine(action: &LinearAction, g: &GroupElement) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let lin = action.rep(g)?;
    let zero = DVector::zeros(action.dim());
    let offset = action.act(g, &zero)?;
    Ok((lin, offset))
}

/// Twist of `B`'s group by conjugation with `A`'s finite representation:
/// `ρ(g₁)(g₂)` is the element whose action equals `Φ_A(g₁)∘Φ_B(g₂)∘Φ_A(g₁)⁻¹`.
///
/// The conjugated parameter is recovered from the first block (atan2 for
/// rotations) and the full affine map is compared at 1e-10. Each image must
/// be the identity or inversion on the test grid.
pub fn conjugation_twist(rep_a: &LinearAction, b: &LinearAction) -> Result<Twist> {
    let Group::Finite(fa) = rep_a.group() else {
        return Err(Error::InvalidTwist("conjugating action must be finite".into()));
    };
    if rep_a.dim() != b.dim() {
        return Err(Error::dim(rep_a.dim(), b.dim()));
    }
    let gb = b.group();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let test = gb.test_elements(&mut rng, COMMUTE_RANDOM);
    let mut images = Vec::with_capacity(fa.order());
    for i in 0..fa.order() {
        let (m, m_off) = affine(rep_a, &GroupElement::Finite(i))?;
        let m_inv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidTwist(format!("element {i} is not invertible")))?;
        let (mut identity, mut inverse) = (true, true);
        for g2 in &test {
            let (l, o) = affine(b, g2)?;
            // A∘B∘A⁻¹ with A(p) = M p + m, A⁻¹(p) = M⁻¹(p − m).
            let cl = &m * &l * &m_inv;
            let co = &m * (o - &l * &m_inv * &m_off) + &m_off;
            let recovered = recover_parameter(&gb, &cl)?;
            let (rl, ro) = affine(b, &recovered)?;
            let err = (&rl - &cl).amax().max((&ro - &co).amax());
            if err > TWIST_RECOVERY_TOL {
                return Err(Error::InvalidTwist(format!(
                    "conjugate of {g2:?} by element {i} leaves the group (error {err:.3e})"
                )));
            }
            identity &= elements_close(&gb, &recovered, g2);
            inverse &= elements_close(&gb, &recovered, &gb.inverse(g2)?);
        }
        images.push(if identity {
            Automorphism::Identity
        } else if inverse {
            Automorphism::Inverse
        } else {
            return Err(Error::InvalidTwist(format!(
                "conjugation by element {i} is neither identity nor inversion"
            )));
        });
    }
    Ok(Twist { images })
}

fn recover_parameter(group: &Group, lin: &DMatrix<f64>) -> Result<GroupElement> {
    match group {
        Group::Lie(LieGroupSpec::So2) => Ok(GroupElement::Lie(lin[(1, 0)].atan2(lin[(0, 0)]))),
        Group::Lie(LieGroupSpec::Scaling) => {
            let s = lin[(0, 0)];
            if s > 0.0 {
                Ok(GroupElement::Lie(s))
            } else {
                Err(Error::InvalidTwist(format!("conjugated scale {s} is not positive")))
            }
        }
        other => Err(Error::InvalidTwist(format!(
            "parameter recovery is only defined for one-parameter groups, not {other:?}"
        ))),
    }
}
