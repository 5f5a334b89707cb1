//! Groups, their actions on configuration and task space, and infinitesimal
//! generators.
//!
//! Groups are finite (given by a Cayley table), one-parameter Lie groups
//! ([`LieGroupSpec`]), or products of two groups. A product is direct when it
//! carries no [`Twist`] and semi-direct otherwise; the twist only changes the
//! multiplication law, see [`Group::compose`].

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::RobotModel;

/// Algebraic identities are checked at this tolerance.
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Central finite-difference step used by every derivative check.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    /// Configuration space.
    Q,
    /// Task space.
    X,
}

/// A finite group given by its Cayley table. Element 0 is the identity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteGroup {
    cayley: Vec<Vec<usize>>,
    inverse: Vec<usize>,
}

impl FiniteGroup {
    /// Validates `cayley` exhaustively: identity row and column, Latin-square
    /// rows (so inverses exist) and associativity.
    pub fn new(cayley: Vec<Vec<usize>>) -> Result<Self> {
        let n = cayley.len();
        if n == 0 {
            return Err(Error::InvalidGroup("empty table".into()));
        }
        if cayley.iter().any(|r| r.len() != n || r.iter().any(|&e| e >= n)) {
            return Err(Error::InvalidGroup("table is not closed".into()));
        }
        for i in 0..n {
            if cayley[0][i] != i || cayley[i][0] != i {
                return Err(Error::InvalidGroup("element 0 is not the identity".into()));
            }
        }
        for row in &cayley {
            let mut seen = vec![false; n];
            for &e in row {
                if std::mem::replace(&mut seen[e], true) {
                    return Err(Error::InvalidGroup("a row repeats an element".into()));
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if cayley[cayley[a][b]][c] != cayley[a][cayley[b][c]] {
                        return Err(Error::InvalidGroup(format!(
                            "not associative at ({a}, {b}, {c})"
                        )));
                    }
                }
            }
        }
        let inverse = (0..n)
            .map(|a| (0..n).find(|&b| cayley[a][b] == 0).expect("latin row"))
            .collect::<Vec<_>>();
        for (a, &b) in inverse.iter().enumerate() {
            if cayley[b][a] != 0 {
                return Err(Error::InvalidGroup("left and right inverses differ".into()));
            }
        }
        Ok(Self { cayley, inverse })
    }

    /// Cyclic group of order `n`.
    pub fn cyclic(n: usize) -> Self {
        let cayley = (0..n).map(|a| (0..n).map(|b| (a + b) % n).collect()).collect();
        Self::new(cayley).expect("cyclic table is a group")
    }

    pub fn order(&self) -> usize {
        self.cayley.len()
    }

    pub fn compose(&self, a: usize, b: usize) -> usize {
        self.cayley[a][b]
    }

    pub fn inverse(&self, a: usize) -> usize {
        self.inverse[a]
    }
}

/// One-parameter Lie groups. `exp(tξ)` is identified with its parameter:
/// the angle `t` for SO(2), the factor `eᵗ` for scaling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LieGroupSpec {
    So2,
    Scaling,
}

impl LieGroupSpec {
    pub fn identity(self) -> f64 {
        match self {
            LieGroupSpec::So2 => 0.0,
            LieGroupSpec::Scaling => 1.0,
        }
    }

    pub fn contains(self, param: f64) -> bool {
        match self {
            LieGroupSpec::So2 => param.is_finite(),
            LieGroupSpec::Scaling => param.is_finite() && param > 0.0,
        }
    }

    pub fn compose(self, a: f64, b: f64) -> f64 {
        match self {
            LieGroupSpec::So2 => wrap_angle(a + b),
            LieGroupSpec::Scaling => a * b,
        }
    }

    pub fn inverse(self, a: f64) -> f64 {
        match self {
            LieGroupSpec::So2 => wrap_angle(-a),
            LieGroupSpec::Scaling => 1.0 / a,
        }
    }

    /// Parameter of `exp(t·ξ)`.
    pub fn exp(self, t: f64) -> f64 {
        match self {
            LieGroupSpec::So2 => t,
            LieGroupSpec::Scaling => t.exp(),
        }
    }

    /// Flow time reaching `param` from the identity.
    pub fn log(self, param: f64) -> f64 {
        match self {
            LieGroupSpec::So2 => param,
            LieGroupSpec::Scaling => param.ln(),
        }
    }

    /// The 2×2 Lie algebra element acting on one planar block.
    pub fn algebra(self) -> Matrix2<f64> {
        match self {
            LieGroupSpec::So2 => Matrix2::new(0.0, -1.0, 1.0, 0.0),
            LieGroupSpec::Scaling => Matrix2::identity(),
        }
    }

    /// The 2×2 block `exp(log(param)·ξ)`.
    pub fn block(self, param: f64) -> Matrix2<f64> {
        match self {
            LieGroupSpec::So2 => {
                let (s, c) = param.sin_cos();
                Matrix2::new(c, -s, s, c)
            }
            LieGroupSpec::Scaling => Matrix2::identity() * param,
        }
    }

    fn grid(self) -> Vec<f64> {
        match self {
            LieGroupSpec::So2 => (0..8).map(|k| -PI + k as f64 * PI / 4.0).collect(),
            LieGroupSpec::Scaling => (0..8).map(|k| (-1.0 + k as f64 * 2.0 / 7.0).exp()).collect(),
        }
    }

    fn random<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            LieGroupSpec::So2 => rng.random_range(-PI..PI),
            LieGroupSpec::Scaling => rng.random_range(-1.0f64..1.0).exp(),
        }
    }
}

impl fmt::Display for LieGroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LieGroupSpec::So2 => write!(f, "SO(2)"),
            LieGroupSpec::Scaling => write!(f, "S(2)"),
        }
    }
}

/// Wraps an angle to `[-π, π)`... except that `π` itself is kept, so the
/// closed interval `[-π, π]` is preserved.
pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..=PI).contains(&a) {
        return a;
    }
    let w = a - 2.0 * PI * (a / (2.0 * PI)).round();
    if w < -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroupElement {
    Finite(usize),
    Lie(f64),
    Pair(Box<GroupElement>, Box<GroupElement>),
}

impl GroupElement {
    pub fn pair(a: GroupElement, b: GroupElement) -> Self {
        GroupElement::Pair(Box::new(a), Box::new(b))
    }

    fn as_pair(&self) -> Result<(&GroupElement, &GroupElement)> {
        match self {
            GroupElement::Pair(a, b) => Ok((a, b)),
            other => Err(Error::InvalidParameter(format!("expected a pair, got {other:?}"))),
        }
    }
}

/// Automorphisms of the abelian one-parameter groups used here and of their
/// products.
#[derive(Clone, Debug, PartialEq)]
pub enum Automorphism {
    Identity,
    /// `g ↦ g⁻¹`, an automorphism of any abelian group.
    Inverse,
    Product(Box<Automorphism>, Box<Automorphism>),
}

impl Automorphism {
    pub fn apply(&self, group: &Group, g: &GroupElement) -> Result<GroupElement> {
        match self {
            Automorphism::Identity => Ok(g.clone()),
            Automorphism::Inverse => group.inverse(g),
            Automorphism::Product(a, b) => {
                let Group::Product(p) = group else {
                    return Err(Error::InvalidTwist("product automorphism on a non-product group".into()));
                };
                let (g1, g2) = g.as_pair()?;
                Ok(GroupElement::pair(a.apply(&p.left, g1)?, b.apply(&p.right, g2)?))
            }
        }
    }

    pub fn then(&self, other: &Automorphism) -> Automorphism {
        match (self, other) {
            (Automorphism::Identity, o) | (o, Automorphism::Identity) => o.clone(),
            (Automorphism::Inverse, Automorphism::Inverse) => Automorphism::Identity,
            (Automorphism::Product(a, b), Automorphism::Product(c, d)) => {
                Automorphism::Product(Box::new(a.then(c)), Box::new(b.then(d)))
            }
            (Automorphism::Inverse, Automorphism::Product(c, d))
            | (Automorphism::Product(c, d), Automorphism::Inverse) => Automorphism::Product(
                Box::new(c.then(&Automorphism::Inverse)),
                Box::new(d.then(&Automorphism::Inverse)),
            ),
        }
    }
}

/// A homomorphism `ρ: G₁ → Aut(G₂)` for finite `G₁`, tabulated per element.
#[derive(Clone, Debug, PartialEq)]
pub struct Twist {
    pub images: Vec<Automorphism>,
}

impl Twist {
    pub fn apply(&self, g1: &GroupElement, right: &Group, g2: &GroupElement) -> Result<GroupElement> {
        let GroupElement::Finite(i) = g1 else {
            return Err(Error::InvalidTwist("twist is indexed by a finite group".into()));
        };
        self.images
            .get(*i)
            .ok_or_else(|| Error::InvalidTwist(format!("no image for element {i}")))?
            .apply(right, g2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProductGroup {
    pub left: Group,
    pub right: Group,
    pub twist: Option<Twist>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Group {
    Finite(FiniteGroup),
    Lie(LieGroupSpec),
    Product(Box<ProductGroup>),
}

impl Group {
    pub fn product(left: Group, right: Group, twist: Option<Twist>) -> Self {
        Group::Product(Box::new(ProductGroup { left, right, twist }))
    }

    pub fn identity(&self) -> GroupElement {
        match self {
            Group::Finite(_) => GroupElement::Finite(0),
            Group::Lie(l) => GroupElement::Lie(l.identity()),
            Group::Product(p) => GroupElement::pair(p.left.identity(), p.right.identity()),
        }
    }

    pub fn contains(&self, g: &GroupElement) -> bool {
        match (self, g) {
            (Group::Finite(f), GroupElement::Finite(i)) => *i < f.order(),
            (Group::Lie(l), GroupElement::Lie(p)) => l.contains(*p),
            (Group::Product(p), GroupElement::Pair(a, b)) => p.left.contains(a) && p.right.contains(b),
            _ => false,
        }
    }

    fn check(&self, g: &GroupElement) -> Result<()> {
        if self.contains(g) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{g:?} is not an element of {self:?}")))
        }
    }

    /// Group multiplication `a·b`. For a semi-direct product with twist `ρ`,
    /// `(a₁, a₂)·(b₁, b₂) = (a₁b₁, ρ(b₁⁻¹)(a₂)·b₂)`, which makes
    /// `(g₁, g₂) ↦ Φ₁(g₁)∘Φ₂(g₂)` a left action.
    pub fn compose(&self, a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
        self.check(a)?;
        self.check(b)?;
        Ok(match (self, a, b) {
            (Group::Finite(f), GroupElement::Finite(x), GroupElement::Finite(y)) => {
                GroupElement::Finite(f.compose(*x, *y))
            }
            (Group::Lie(l), GroupElement::Lie(x), GroupElement::Lie(y)) => GroupElement::Lie(l.compose(*x, *y)),
            (Group::Product(p), GroupElement::Pair(a1, a2), GroupElement::Pair(b1, b2)) => {
                let g1 = p.left.compose(a1, b1)?;
                let a2 = match &p.twist {
                    None => (**a2).clone(),
                    Some(t) => t.apply(&p.left.inverse(b1)?, &p.right, a2)?,
                };
                GroupElement::pair(g1, p.right.compose(&a2, b2)?)
            }
            _ => unreachable!("membership checked above"),
        })
    }

    pub fn inverse(&self, g: &GroupElement) -> Result<GroupElement> {
        self.check(g)?;
        Ok(match (self, g) {
            (Group::Finite(f), GroupElement::Finite(x)) => GroupElement::Finite(f.inverse(*x)),
            (Group::Lie(l), GroupElement::Lie(x)) => GroupElement::Lie(l.inverse(*x)),
            (Group::Product(p), GroupElement::Pair(a1, a2)) => {
                let i1 = p.left.inverse(a1)?;
                let i2 = p.right.inverse(a2)?;
                // Solve (a1, a2)·(i1, y) = e: y = ρ(a1)(a2)⁻¹ for the semi-direct law.
                let y = match &p.twist {
                    None => i2,
                    Some(t) => p.right.inverse(&t.apply(a1, &p.right, a2)?)?,
                };
                GroupElement::pair(i1, y)
            }
            _ => unreachable!("membership checked above"),
        })
    }

    /// Elements used by the sampling-based checks: every element of a finite
    /// group; for a Lie group an 8-point grid plus `n_random` seeded draws;
    /// for products, all pairs of the factors' test elements.
    pub fn test_elements<R: Rng + ?Sized>(&self, rng: &mut R, n_random: usize) -> Vec<GroupElement> {
        match self {
            Group::Finite(f) => (0..f.order()).map(GroupElement::Finite).collect(),
            Group::Lie(l) => {
                let mut v: Vec<_> = l.grid().into_iter().map(GroupElement::Lie).collect();
                v.extend((0..n_random).map(|_| GroupElement::Lie(l.random(rng))));
                v
            }
            Group::Product(p) => {
                let left = p.left.test_elements(rng, n_random);
                let right = p.right.test_elements(rng, n_random);
                left.iter()
                    .flat_map(|a| right.iter().map(move |b| GroupElement::pair(a.clone(), b.clone())))
                    .collect()
            }
        }
    }

    /// A random element (finite groups uniformly).
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> GroupElement {
        match self {
            Group::Finite(f) => GroupElement::Finite(rng.random_range(0..f.order())),
            Group::Lie(l) => GroupElement::Lie(l.random(rng)),
            Group::Product(p) => GroupElement::pair(p.left.random(rng), p.right.random(rng)),
        }
    }
}

/// A left action of a group on configuration or task space.
pub trait GroupAction: Send + Sync {
    fn space(&self) -> Space;
    fn dim(&self) -> usize;
    fn group(&self) -> Group;
    fn apply(&self, g: &GroupElement, p: &DVector<f64>) -> Result<DVector<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
enum Rep {
    Finite {
        group: FiniteGroup,
        matrices: Vec<DMatrix<f64>>,
    },
    Lie {
        group: LieGroupSpec,
        centers: Vec<[f64; 2]>,
    },
}

/// A matrix representation acting on a space. One-parameter actions act
/// blockwise on planar blocks about per-block centers:
/// `x_b ↦ c_b + B(g)(x_b − c_b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearAction {
    space: Space,
    dim: usize,
    rep: Rep,
}

impl LinearAction {
    /// Finite group acting through `matrices[g]`. Checks the identity and the
    /// homomorphism law on every pair of elements.
    pub fn finite(space: Space, group: FiniteGroup, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if matrices.len() != group.order() {
            return Err(Error::InvalidGroup(format!(
                "{} matrices for a group of order {}",
                matrices.len(),
                group.order()
            )));
        }
        let dim = matrices[0].nrows();
        if matrices.iter().any(|m| m.nrows() != dim || m.ncols() != dim) {
            return Err(Error::InvalidGroup("representation matrices must be square and equal-sized".into()));
        }
        if (&matrices[0] - DMatrix::identity(dim, dim)).amax() > ALGEBRAIC_TOL {
            return Err(Error::InvalidGroup("identity is not represented by I".into()));
        }
        for a in 0..group.order() {
            for b in 0..group.order() {
                let lhs = &matrices[group.compose(a, b)];
                let rhs = &matrices[a] * &matrices[b];
                if (lhs - rhs).amax() > ALGEBRAIC_TOL {
                    return Err(Error::InvalidGroup(format!(
                        "representation is not a homomorphism at ({a}, {b})"
                    )));
                }
            }
        }
        Ok(Self {
            space,
            dim,
            rep: Rep::Finite { group, matrices },
        })
    }

    /// The trivial group acting as the identity.
    pub fn trivial(space: Space, dim: usize) -> Self {
        Self {
            space,
            dim,
            rep: Rep::Finite {
                group: FiniteGroup::cyclic(1),
                matrices: vec![DMatrix::identity(dim, dim)],
            },
        }
    }

    /// One-parameter group acting on `centers.len()` planar blocks.
    pub fn lie(space: Space, group: LieGroupSpec, centers: Vec<[f64; 2]>) -> Self {
        Self {
            space,
            dim: 2 * centers.len(),
            rep: Rep::Lie { group, centers },
        }
    }

    pub fn so2(space: Space, blocks: usize) -> Self {
        Self::lie(space, LieGroupSpec::So2, vec![[0.0, 0.0]; blocks])
    }

    pub fn scaling(space: Space, blocks: usize) -> Self {
        Self::lie(space, LieGroupSpec::Scaling, vec![[0.0, 0.0]; blocks])
    }

    pub fn lie_group(&self) -> Option<LieGroupSpec> {
        match &self.rep {
            Rep::Lie { group, .. } => Some(*group),
            Rep::Finite { .. } => None,
        }
    }

    pub fn centers(&self) -> Option<&[[f64; 2]]> {
        match &self.rep {
            Rep::Lie { centers, .. } => Some(centers),
            Rep::Finite { .. } => None,
        }
    }

    /// The representation matrix (linear part) of `g`.
    pub fn rep(&self, g: &GroupElement) -> Result<DMatrix<f64>> {
        match (&self.rep, g) {
            (Rep::Finite { matrices, .. }, GroupElement::Finite(i)) => matrices
                .get(*i)
                .cloned()
                .ok_or_else(|| Error::InvalidParameter(format!("element {i} out of range"))),
            (Rep::Lie { group, centers }, GroupElement::Lie(p)) => {
                if !group.contains(*p) {
                    return Err(Error::InvalidParameter(format!("{p} is outside the domain of {group}")));
                }
                let b = group.block(*p);
                let mut m = DMatrix::zeros(self.dim, self.dim);
                for k in 0..centers.len() {
                    m.fixed_view_mut::<2, 2>(2 * k, 2 * k).copy_from(&b);
                }
                Ok(m)
            }
            _ => Err(Error::InvalidParameter(format!("{g:?} does not belong to this action's group"))),
        }
    }

    /// `Φ(g, p)`.
    pub fn act(&self, g: &GroupElement, p: &DVector<f64>) -> Result<DVector<f64>> {
        if p.len() != self.dim {
            return Err(Error::dim(self.dim, p.len()));
        }
        match (&self.rep, g) {
            (Rep::Lie { group, centers }, GroupElement::Lie(param)) => {
                if !group.contains(*param) {
                    return Err(Error::InvalidParameter(format!(
                        "{param} is outside the domain of {group}"
                    )));
                }
                let b = group.block(*param);
                let mut out = DVector::zeros(self.dim);
                for (k, c) in centers.iter().enumerate() {
                    let v = nalgebra::Vector2::new(p[2 * k] - c[0], p[2 * k + 1] - c[1]);
                    let w = b * v;
                    out[2 * k] = c[0] + w[0];
                    out[2 * k + 1] = c[1] + w[1];
                }
                Ok(out)
            }
            _ => Ok(self.rep(g)? * p),
        }
    }

    /// Differential `dΦ_g` applied to a tangent vector; the representation
    /// matrix itself, independent of the base point.
    pub fn act_tangent(&self, g: &GroupElement, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim {
            return Err(Error::dim(self.dim, v.len()));
        }
        Ok(self.rep(g)? * v)
    }

    /// Infinitesimal generator of a one-parameter action.
    pub fn generator(&self) -> Option<GeneratorField> {
        match &self.rep {
            Rep::Lie { group, centers } => Some(GeneratorField {
                space: self.space,
                group: *group,
                centers: centers.clone(),
            }),
            Rep::Finite { .. } => None,
        }
    }
}

impl GroupAction for LinearAction {
    fn space(&self) -> Space {
        self.space
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn group(&self) -> Group {
        match &self.rep {
            Rep::Finite { group, .. } => Group::Finite(group.clone()),
            Rep::Lie { group, .. } => Group::Lie(*group),
        }
    }

    fn apply(&self, g: &GroupElement, p: &DVector<f64>) -> Result<DVector<f64>> {
        self.act(g, p)
    }
}

/// A smooth vector field on `ℝⁿ`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, p: &DVector<f64>) -> DVector<f64>;
}

/// Infinitesimal generator `X_ξ(p) = ξ·(p − c)` of a one-parameter action,
/// applied blockwise. For SO(2) `ξ = Ω = [[0, −1], [1, 0]]`; for scaling `ξ = I`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorField {
    pub space: Space,
    pub group: LieGroupSpec,
    pub centers: Vec<[f64; 2]>,
}

impl GeneratorField {
    pub fn origin(space: Space, group: LieGroupSpec, blocks: usize) -> Self {
        Self {
            space,
            group,
            centers: vec![[0.0, 0.0]; blocks],
        }
    }

    /// Closed-form flow `γ(t, p) = Φ(exp(tξ), p)`.
    pub fn flow(&self, t: f64, p: &DVector<f64>) -> Result<DVector<f64>> {
        LinearAction::lie(self.space, self.group, self.centers.clone())
            .act(&GroupElement::Lie(self.group.exp(t)), p)
    }

    pub(crate) fn eval_into(&self, p: &[f64], out: &mut [f64]) {
        for (k, c) in self.centers.iter().enumerate() {
            let (x, y) = (p[2 * k] - c[0], p[2 * k + 1] - c[1]);
            let (u, v) = match self.group {
                LieGroupSpec::So2 => (-y, x),
                LieGroupSpec::Scaling => (x, y),
            };
            out[2 * k] = u;
            out[2 * k + 1] = v;
        }
    }
}

impl VectorField for GeneratorField {
    fn dim(&self) -> usize {
        2 * self.centers.len()
    }

    fn eval(&self, p: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(p.as_slice(), out.as_mut_slice());
        out
    }
}

/// Arbitrary vector field from a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, p: &DVector<f64>) -> DVector<f64> {
        (self.f)(p)
    }
}

/// Origin-centered generator of `group`, evaluated blockwise on `p`.
pub fn generator(group: LieGroupSpec, p: &DVector<f64>) -> Result<DVector<f64>> {
    if p.len() % 2 != 0 || p.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "generator needs planar blocks, got dimension {}",
            p.len()
        )));
    }
    Ok(GeneratorField::origin(Space::X, group, p.len() / 2).eval(p))
}

/// Morphological C₂ symmetry of a two-chain robot.
///
/// The non-trivial element swaps the chains' joints through
/// `[[0, P], [P, 0]]` with `P = diag(joint_signs)` and swaps the end effectors
/// through `[[0, P_X], [P_X, 0]]` with `P_X = diag(task_reflection)`.
pub fn build_morphological_action(
    model: &RobotModel,
    joint_signs: &[f64],
    task_reflection: [f64; 2],
) -> Result<(LinearAction, LinearAction)> {
    let chains = model.chains();
    if chains.len() != 2 {
        return Err(Error::ChainMismatch(format!(
            "morphological swap needs exactly 2 chains, model has {}",
            chains.len()
        )));
    }
    let n = chains[0].dof();
    if chains[1].dof() != n {
        return Err(Error::ChainMismatch(format!(
            "chains have {} and {} joints",
            n,
            chains[1].dof()
        )));
    }
    if chains[0]
        .links
        .iter()
        .zip(&chains[1].links)
        .any(|(a, b)| (a - b).abs() > ALGEBRAIC_TOL)
    {
        return Err(Error::ChainMismatch("link lengths differ between chains".into()));
    }
    if joint_signs.len() != n {
        return Err(Error::ChainMismatch(format!(
            "{} joint signs for {} joints per chain",
            joint_signs.len(),
            n
        )));
    }
    if joint_signs
        .iter()
        .chain(task_reflection.iter())
        .any(|s| *s != 1.0 && *s != -1.0)
    {
        return Err(Error::InvalidParameter("signs must be +1 or -1".into()));
    }

    let swap = |signs: &[f64]| {
        let k = signs.len();
        let mut m = DMatrix::zeros(2 * k, 2 * k);
        for (i, s) in signs.iter().enumerate() {
            m[(i, k + i)] = *s;
            m[(k + i, i)] = *s;
        }
        m
    };
    let c2 = FiniteGroup::cyclic(2);
    let q = LinearAction::finite(
        Space::Q,
        c2.clone(),
        vec![DMatrix::identity(2 * n, 2 * n), swap(joint_signs)],
    )?;
    let x = LinearAction::finite(Space::X, c2, vec![DMatrix::identity(4, 4), swap(&task_reflection)])?;
    Ok((q, x))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub passed: bool,
    pub max_abs_derivative: f64,
    pub worst_sample: Option<usize>,
    pub tolerance: f64,
}

/// Checks that `cost` is constant along `field`: the directional derivative
/// `dc|ₓ(X(x))`, by central differences, must stay within `tol` on every
/// sample.
pub fn cost_invariance_check<C>(
    cost: C,
    field: &dyn VectorField,
    samples: &[DVector<f64>],
    tol: f64,
) -> InvarianceReport
where
    C: Fn(&DVector<f64>) -> f64,
{
    let mut worst = 0.0;
    let mut worst_sample = None;
    for (i, x) in samples.iter().enumerate() {
        let v = field.eval(x);
        let d = (cost(&(x + &v * FD_STEP)) - cost(&(x - &v * FD_STEP))) / (2.0 * FD_STEP);
        let d = d.abs();
        if worst_sample.is_none() || d > worst || d.is_nan() {
            worst = d;
            worst_sample = Some(i);
        }
    }
    InvarianceReport {
        passed: worst <= tol,
        max_abs_derivative: worst,
        worst_sample,
        tolerance: tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{ChainSpec, Metric};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn finite_group_validation() {
        assert!(FiniteGroup::new(vec![vec![0, 1], vec![1, 0]]).is_ok());
        // Identity column broken.
        assert!(FiniteGroup::new(vec![vec![0, 1], vec![0, 1]]).is_err());
        // Latin square that is not associative (order-5 loop).
        let loop5 = vec![
            vec![0, 1, 2, 3, 4],
            vec![1, 0, 3, 4, 2],
            vec![2, 4, 0, 1, 3],
            vec![3, 2, 4, 0, 1],
            vec![4, 3, 1, 2, 0],
        ];
        assert!(matches!(FiniteGroup::new(loop5), Err(Error::InvalidGroup(_))));
        let c4 = FiniteGroup::cyclic(4);
        assert_eq!(c4.inverse(1), 3);
        assert_eq!(c4.compose(3, 2), 1);
    }

    #[test]
    fn act_examples() {
        let rot = LinearAction::so2(Space::X, 1);
        let p = v(&[0.3, -2.0]);
        assert_eq!(rot.act(&GroupElement::Lie(0.0), &p).unwrap(), p);
        let y = rot.act(&GroupElement::Lie(FRAC_PI_2), &v(&[1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(y, v(&[0.0, 1.0]), epsilon = 1e-15);
        assert!(rot.act(&GroupElement::Lie(0.1), &v(&[1.0, 0.0, 2.0])).is_err());

        let scale = LinearAction::scaling(Space::X, 1);
        assert!(matches!(
            scale.act(&GroupElement::Lie(-1.0), &p),
            Err(Error::InvalidParameter(_))
        ));
        assert!(scale.act(&GroupElement::Finite(0), &p).is_err());
    }

    #[test]
    fn act_tangent_examples() {
        let rot = LinearAction::so2(Space::X, 1);
        let w = v(&[0.4, 0.7]);
        assert_eq!(rot.act_tangent(&GroupElement::Lie(0.0), &w).unwrap(), w);
        let th = 0.83;
        let r = nalgebra::Rotation2::new(th);
        let expected = r.matrix() * nalgebra::Vector2::new(0.4, 0.7);
        assert_abs_diff_eq!(
            rot.act_tangent(&GroupElement::Lie(th), &w).unwrap(),
            v(&[expected[0], expected[1]]),
            epsilon = 1e-15
        );
        let scale = LinearAction::scaling(Space::X, 1);
        assert_eq!(scale.act_tangent(&GroupElement::Lie(2.0), &w).unwrap(), w * 2.0);
    }

    #[test]
    fn centered_action_tangent_ignores_center() {
        let rot = LinearAction::lie(Space::X, LieGroupSpec::So2, vec![[1.0, 2.0]]);
        let c = v(&[1.0, 2.0]);
        assert_abs_diff_eq!(rot.act(&GroupElement::Lie(1.3), &c).unwrap(), c, epsilon = 1e-15);
        let w = v(&[1.0, 0.0]);
        assert_abs_diff_eq!(
            rot.act_tangent(&GroupElement::Lie(FRAC_PI_2), &w).unwrap(),
            v(&[0.0, 1.0]),
            epsilon = 1e-15
        );
    }

    #[test]
    fn generator_examples() {
        assert_abs_diff_eq!(
            generator(LieGroupSpec::So2, &v(&[1.0, 0.0])).unwrap(),
            v(&[0.0, 1.0])
        );
        assert_abs_diff_eq!(
            generator(LieGroupSpec::Scaling, &v(&[3.0, -2.0])).unwrap(),
            v(&[3.0, -2.0])
        );
        for g in [LieGroupSpec::So2, LieGroupSpec::Scaling] {
            assert_eq!(generator(g, &DVector::zeros(4)).unwrap(), DVector::zeros(4));
        }
        assert!(generator(LieGroupSpec::So2, &v(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn generator_matches_derivative_of_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for group in [LieGroupSpec::So2, LieGroupSpec::Scaling] {
            let action = LinearAction::lie(Space::X, group, vec![[0.2, -0.1], [-1.0, 0.5]]);
            let field = action.generator().unwrap();
            for _ in 0..20 {
                let p = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
                let plus = action.act(&GroupElement::Lie(group.exp(FD_STEP)), &p).unwrap();
                let minus = action.act(&GroupElement::Lie(group.exp(-FD_STEP)), &p).unwrap();
                let fd = (plus - minus) / (2.0 * FD_STEP);
                assert_abs_diff_eq!(fd, field.eval(&p), epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn lie_reps_are_homomorphisms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for group in [LieGroupSpec::So2, LieGroupSpec::Scaling] {
            let action = LinearAction::lie(Space::X, group, vec![[0.0, 0.0]; 2]);
            let g = Group::Lie(group);
            for a in g.test_elements(&mut rng, 20) {
                for b in g.test_elements(&mut rng, 0) {
                    let ab = g.compose(&a, &b).unwrap();
                    let lhs = action.rep(&ab).unwrap();
                    let rhs = action.rep(&a).unwrap() * action.rep(&b).unwrap();
                    assert!((lhs - rhs).amax() <= 1e-12);
                }
            }
        }
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

    #[test]
    fn morphological_pure_swap() {
        let (q_act, x_act) = build_morphological_action(&dual_arm(), &[1.0; 4], [1.0, 1.0]).unwrap();
        let q = v(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let g = GroupElement::Finite(1);
        assert_eq!(q_act.act(&g, &q).unwrap(), v(&[5.0, 6.0, 7.0, 8.0, 1.0, 2.0, 3.0, 4.0]));
        assert_eq!(x_act.act(&g, &v(&[1.0, 2.0, 3.0, 4.0])).unwrap(), v(&[3.0, 4.0, 1.0, 2.0]));
    }

    #[test]
    fn morphological_is_involution_and_descends() {
        let model = dual_arm();
        let (q_act, x_act) = build_morphological_action(&model, &[-1.0; 4], [-1.0, 1.0]).unwrap();
        let g = GroupElement::Finite(1);
        let r = q_act.rep(&g).unwrap();
        assert_abs_diff_eq!(&r * &r, DMatrix::identity(8, 8));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q = DVector::from_fn(8, |_, _| rng.random_range(-PI..PI));
            let lhs = model.forward_kinematics(&q_act.act(&g, &q).unwrap()).unwrap();
            let rhs = x_act.act(&g, &model.forward_kinematics(&q).unwrap()).unwrap();
            assert!((lhs - rhs).amax() <= 1e-12);
        }
    }

    #[test]
    fn morphological_rejects_mismatched_chains() {
        let three = RobotModel::new(
            vec![
                ChainSpec::new([0.0, 0.0], vec![1.0, 1.0]),
                ChainSpec::new([1.0, 0.0], vec![1.0, 1.0, 1.0]),
            ],
            Metric::Identity,
        )
        .unwrap();
        assert!(matches!(
            build_morphological_action(&three, &[1.0, 1.0], [1.0, 1.0]),
            Err(Error::ChainMismatch(_))
        ));
        assert!(matches!(
            build_morphological_action(&dual_arm(), &[1.0; 3], [1.0, 1.0]),
            Err(Error::ChainMismatch(_))
        ));
    }

    #[test]
    fn cost_invariance_examples() {
        let scaling = GeneratorField::origin(Space::X, LieGroupSpec::Scaling, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let samples: Vec<_> = (0..50)
            .map(|_| v(&[rng.random_range(0.2..2.0), rng.random_range(-2.0..2.0)]))
            .collect();

        let angle = |x: &DVector<f64>| x[1].atan2(x[0]);
        let r = cost_invariance_check(angle, &scaling, &samples, 1e-4);
        assert!(r.passed, "{r:?}");

        let norm2 = |x: &DVector<f64>| x.norm_squared();
        let r = cost_invariance_check(norm2, &scaling, &samples, 1e-4);
        assert!(!r.passed);
        let worst = &samples[r.worst_sample.unwrap()];
        assert_abs_diff_eq!(r.max_abs_derivative, 2.0 * worst.norm_squared(), epsilon = 1e-6);

        let constant = |_: &DVector<f64>| 4.2;
        let rot = GeneratorField::origin(Space::X, LieGroupSpec::So2, 1);
        assert!(cost_invariance_check(constant, &rot, &samples, 1e-12).passed);
    }

    #[test]
    fn semidirect_law_is_associative() {
        let right = Group::Lie(LieGroupSpec::So2);
        let twist = Twist {
            images: vec![Automorphism::Identity, Automorphism::Inverse],
        };
        let g = Group::product(Group::Finite(FiniteGroup::cyclic(2)), right, Some(twist));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (a, b, c) = (g.random(&mut rng), g.random(&mut rng), g.random(&mut rng));
            let l = g.compose(&g.compose(&a, &b).unwrap(), &c).unwrap();
            let r = g.compose(&a, &g.compose(&b, &c).unwrap()).unwrap();
            match (&l, &r) {
                (GroupElement::Pair(l1, l2), GroupElement::Pair(r1, r2)) => {
                    assert_eq!(l1, r1);
                    let (GroupElement::Lie(x), GroupElement::Lie(y)) = (&**l2, &**r2) else {
                        panic!()
                    };
                    assert!(wrap_angle(x - y).abs() < 1e-12);
                }
                _ => panic!(),
            }
            let inv = g.inverse(&a).unwrap();
            let e = g.compose(&a, &inv).unwrap();
            let GroupElement::Pair(e1, e2) = e else { panic!() };
            assert_eq!(*e1, GroupElement::Finite(0));
            let GroupElement::Lie(t) = *e2 else { panic!() };
            assert!(t.abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(-7.0), -7.0 + 2.0 * PI, epsilon = 1e-15);
    }
}
