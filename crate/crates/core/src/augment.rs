//! Symmetry-driven augmentation of demonstrations.
//!
//! An element `s = (θ, λ, σ)` acts on a configuration by the lifted scaling
//! flow for `t = ln λ`, then the lifted rotation flow for `t = θ`, then the
//! morphological swap when `σ = −1`. On task space this is the affine map
//! `x ↦ c + P^σ·R(θ)·λ·(x − c)` about the per-chain centers `c`, whose
//! differential `dΦ_X = P^σ·R(θ)·λ` pushes velocities forward:
//! `q̇′ = J⁺(q′)·dΦ_X·J(q)·q̇`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{ConditionVector, Dataset, Demonstration, Provenance};
use crate::error::{Error, Result};
use crate::kinematics::{JointVector, RobotModel};
use crate::symmetry::{GeneratorField, GroupAction, GroupElement, LieGroupSpec, LinearAction, Space};
use crate::transfer::lift_flow_many;

/// Demonstrations must be horizontal to this tolerance (vertical speed).
pub const HORIZONTAL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationGrid {
    pub thetas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub sigmas: Vec<i8>,
}

impl AugmentationGrid {
    pub fn new(thetas: Vec<f64>, lambdas: Vec<f64>, sigmas: Vec<i8>) -> Result<Self> {
        let g = Self { thetas, lambdas, sigmas };
        g.validate()?;
        Ok(g)
    }

    pub fn identity() -> Self {
        Self {
            thetas: vec![0.0],
            lambdas: vec![1.0],
            sigmas: vec![1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thetas.is_empty() || self.lambdas.is_empty() || self.sigmas.is_empty() {
            return Err(Error::InvalidParameter("augmentation grid lists must be non-empty".into()));
        }
        for c in self.elements() {
            c.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.thetas.len() * self.lambdas.len() * self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid elements in output order: θ outermost, then λ, then σ.
    pub fn elements(&self) -> Vec<ConditionVector> {
        let mut out = Vec::with_capacity(self.len());
        for &theta in &self.thetas {
            for &lambda in &self.lambdas {
                for &sigma in &self.sigmas {
                    out.push(ConditionVector { theta, lambda, sigma });
                }
            }
        }
        out
    }
}

/// Integer multiples of `step_deg` degrees in `[-180°, 180°)`, so 0 is
/// always included.
pub fn theta_grid(step_deg: f64) -> Vec<f64> {
    let first = (-180.0 / step_deg).ceil() as i64;
    (first..)
        .map(|m| m as f64 * step_deg)
        .take_while(|d| *d < 180.0 - 1e-9)
        .map(f64::to_radians)
        .collect()
}

pub const FIG5_DENSITIES: [u32; 8] = [5, 10, 15, 30, 45, 60, 75, 90];
pub const TABLE1_LAMBDAS: [f64; 4] = [0.5, 0.75, 1.0, 1.25];
pub const TABLE1_STEP_DEG: f64 = 30.0;

/// Named grids.
///
/// * `identity`
/// * `fig5_<k>deg`, `k ∈ {5, 10, 15, 30, 45, 60, 75, 90}`: rotations only
/// * `table1_r`, `table1_rt`, `table1` (= `table1_mrt`): 30° rotations, then
///   with scalings `{0.5, 0.75, 1, 1.25}`, then with both reflections
pub fn grid_presets(name: &str) -> Result<AugmentationGrid> {
    let r30 = || theta_grid(TABLE1_STEP_DEG);
    let grid = match name {
        "identity" => AugmentationGrid::identity(),
        "table1_r" => AugmentationGrid {
            thetas: r30(),
            lambdas: vec![1.0],
            sigmas: vec![1],
        },
        "table1_rt" => AugmentationGrid {
            thetas: r30(),
            lambdas: TABLE1_LAMBDAS.to_vec(),
            sigmas: vec![1],
        },
        "table1" | "table1_mrt" => AugmentationGrid {
            thetas: r30(),
            lambdas: TABLE1_LAMBDAS.to_vec(),
            sigmas: vec![1, -1],
        },
        other => {
            let k = other
                .strip_prefix("fig5_")
                .and_then(|s| s.strip_suffix("deg"))
                .and_then(|s| s.parse::<u32>().ok())
                .filter(|k| FIG5_DENSITIES.contains(k))
                .ok_or_else(|| Error::UnknownPreset(other.to_string()))?;
            AugmentationGrid {
                thetas: theta_grid(k as f64),
                lambdas: vec![1.0],
                sigmas: vec![1],
            }
        }
    };
    Ok(grid)
}

/// A preset name, or the path of a JSON [`AugmentationGrid`].
pub fn resolve_grid(name: &str) -> Result<AugmentationGrid> {
    let path = std::path::Path::new(name);
    if path.is_file() {
        let grid: AugmentationGrid = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        grid.validate()?;
        Ok(grid)
    } else {
        grid_presets(name)
    }
}

/// Applies composed rotation, scaling and reflection elements to
/// configurations, velocities and whole demonstrations.
#[derive(Clone, Debug)]
pub struct Augmenter {
    model: Arc<RobotModel>,
    rotation: GeneratorField,
    scaling: GeneratorField,
    reflect_q: DMatrix<f64>,
    reflect_x: DMatrix<f64>,
    step: f64,
}

impl Augmenter {
    /// `morph_q`/`morph_x` are the C₂ actions from
    /// [`build_morphological_action`](crate::symmetry::build_morphological_action);
    /// `centers` are the per-chain centers of rotation and scaling.
    pub fn new(
        model: Arc<RobotModel>,
        centers: Vec<[f64; 2]>,
        morph_q: &LinearAction,
        morph_x: &LinearAction,
        step: f64,
    ) -> Result<Self> {
        if centers.len() != model.chains().len() {
            return Err(Error::dim(model.chains().len(), centers.len()));
        }
        if morph_q.space() != Space::Q || morph_q.dim() != model.dim_q() {
            return Err(Error::InvalidParameter("morphological Q-action does not match the model".into()));
        }
        if morph_x.space() != Space::X || morph_x.dim() != model.dim_x() {
            return Err(Error::InvalidParameter("morphological X-action does not match the model".into()));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
        }
        let reflect_q = morph_q.rep(&GroupElement::Finite(1))?;
        let reflect_x = morph_x.rep(&GroupElement::Finite(1))?;
        // The reflection must fix the set of centers for the composed action to
        // stay affine about them.
        let c = DVector::from_iterator(model.dim_x(), centers.iter().flat_map(|c| c.iter().copied()));
        if (&reflect_x * &c - &c).amax() > 1e-12 {
            return Err(Error::InvalidParameter(
                "the morphological X-action must map the centers onto themselves".into(),
            ));
        }
        Ok(Self {
            rotation: GeneratorField {
                space: Space::X,
                group: LieGroupSpec::So2,
                centers: centers.clone(),
            },
            scaling: GeneratorField {
                space: Space::X,
                group: LieGroupSpec::Scaling,
                centers,
            },
            model,
            reflect_q,
            reflect_x,
            step,
        })
    }

    /// Same augmenter with a different RK4 step.
    pub fn with_step(&self, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
        }
        Ok(Self { step, ..self.clone() })
    }

    pub fn model(&self) -> &Arc<RobotModel> {
        &self.model
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.rotation.centers
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn rotation_field(&self) -> &GeneratorField {
        &self.rotation
    }

    pub fn scaling_field(&self) -> &GeneratorField {
        &self.scaling
    }

    /// `dΦ_X = P^σ·R(θ)·λ`.
    pub fn task_differential(&self, c: &ConditionVector) -> DMatrix<f64> {
        let rot = LinearAction::so2(Space::X, self.model.chains().len())
            .rep(&GroupElement::Lie(c.theta))
            .expect("finite angle")
            * c.lambda;
        if c.sigma < 0 {
            &self.reflect_x * rot
        } else {
            rot
        }
    }

    /// Closed-form task-space action.
    pub fn task_action(&self, c: &ConditionVector, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.model.dim_x() {
            return Err(Error::dim(self.model.dim_x(), x.len()));
        }
        let centers = DVector::from_iterator(x.len(), self.centers().iter().flat_map(|c| c.iter().copied()));
        Ok(&centers + self.task_differential(c) * (x - &centers))
    }

    /// `Φ_Q(g, q)` for each element, sharing one scaling pass and one
    /// rotation pass per distinct scale.
    pub fn transform_configuration(&self, q: &JointVector, elements: &[ConditionVector]) -> Result<Vec<JointVector>> {
        for c in elements {
            c.validate()?;
        }
        let mut lambdas: BTreeMap<u64, f64> = BTreeMap::new();
        for c in elements {
            lambdas.insert(c.lambda.to_bits(), c.lambda);
        }
        let scale_times: Vec<f64> = lambdas.values().map(|l| l.ln()).collect();
        let scaled = lift_flow_many(&self.model, &self.scaling, q, &scale_times, self.step)?;

        let mut out = vec![None; elements.len()];
        for (qs, &lambda) in scaled.iter().zip(lambdas.values()) {
            let idx: Vec<usize> = (0..elements.len())
                .filter(|&i| elements[i].lambda.to_bits() == lambda.to_bits())
                .collect();
            let thetas: Vec<f64> = idx.iter().map(|&i| elements[i].theta).collect();
            let rotated = lift_flow_many(&self.model, &self.rotation, qs, &thetas, self.step)?;
            for (i, qr) in idx.into_iter().zip(rotated) {
                out[i] = Some(if elements[i].sigma < 0 { &self.reflect_q * qr } else { qr });
            }
        }
        Ok(out.into_iter().map(|q| q.expect("every element visited")).collect())
    }

    /// Single-element [`transform_configuration`](Self::transform_configuration).
    pub fn apply(&self, c: &ConditionVector, q: &JointVector) -> Result<JointVector> {
        Ok(self.transform_configuration(q, std::slice::from_ref(c))?.remove(0))
    }

    /// Pushforward `J⁺(q′)·dΦ_X·J(q)·q̇`.
    pub fn transform_velocity(
        &self,
        c: &ConditionVector,
        q: &JointVector,
        qdot: &JointVector,
        q_new: &JointVector,
    ) -> Result<JointVector> {
        let xdot = self.model.jacobian(q)? * qdot;
        self.model.horizontal_lift(q_new, &(self.task_differential(c) * xdot))
    }

    /// Transforms every sample of `demo` under each element; rows are
    /// processed in parallel.
    pub fn transform_demo(&self, demo: &Demonstration, elements: &[ConditionVector]) -> Result<Vec<Demonstration>> {
        if demo.condition != ConditionVector::identity() {
            return Err(Error::InvalidDataset(
                "only untransformed demonstrations can be augmented".into(),
            ));
        }
        let diffs: Vec<DMatrix<f64>> = elements.iter().map(|c| self.task_differential(c)).collect();
        let rows = crate::par::try_map_range(demo.len(), |k| -> Result<Vec<(JointVector, JointVector)>> {
            let q = &demo.q[k];
            let xdot = self.model.jacobian(q)? * &demo.qdot[k];
            let qs = self.transform_configuration(q, elements)?;
            qs.into_iter()
                .zip(&diffs)
                .map(|(qn, d)| {
                    let v = self.model.horizontal_lift(&qn, &(d * &xdot))?;
                    Ok((qn, v))
                })
                .collect()
        })?;
        elements
            .iter()
            .enumerate()
            .map(|(e, c)| {
                let (q, qdot) = rows.iter().map(|r| r[e].clone()).unzip();
                Demonstration::new(demo.times.clone(), q, qdot, *c)
            })
            .collect()
    }
}

/// Largest vertical speed over the rows of `demo`.
pub fn max_vertical_speed(model: &RobotModel, demo: &Demonstration) -> Result<f64> {
    let mut worst = 0.0f64;
    for (q, v) in demo.q.iter().zip(&demo.qdot) {
        let (vertical, _) = model.tangent_decompose(q, v)?;
        worst = worst.max(vertical.norm());
    }
    Ok(worst)
}

/// Augments every demonstration with every grid element. Output is ordered
/// by (demonstration, grid element) with grid order as in
/// [`AugmentationGrid::elements`].
pub fn augment_dataset(augmenter: &Augmenter, dataset: &Dataset, grid: &AugmentationGrid) -> Result<Dataset> {
    grid.validate()?;
    dataset.validate()?;
    for (index, demo) in dataset.demos.iter().enumerate() {
        let vertical = max_vertical_speed(augmenter.model(), demo)?;
        if vertical > HORIZONTAL_TOL {
            return Err(Error::NotHorizontal { index, vertical });
        }
    }
    let elements = grid.elements();
    let mut out = Dataset::default();
    for (i, demo) in dataset.demos.iter().enumerate() {
        let source = match dataset.provenance.get(i) {
            Some(Provenance::Original { index }) => *index,
            _ => i,
        };
        for (d, c) in augmenter.transform_demo(demo, &elements)?.into_iter().zip(&elements) {
            out.push(d, Provenance::Augmented { source, element: *c });
        }
    }
    Ok(out)
}

/// Ground-truth transformation of one demonstration by `g`.
pub fn nominal_transform(augmenter: &Augmenter, demo: &Demonstration, g: &ConditionVector) -> Result<Demonstration> {
    Ok(augmenter.transform_demo(demo, std::slice::from_ref(g))?.remove(0))
}

impl GroupAction for Augmenter {
    fn space(&self) -> Space {
        Space::Q
    }

    fn dim(&self) -> usize {
        self.model.dim_q()
    }

    /// `C₂ ⋉ (SO(2) × S(2))`, with elements `(σ, (θ, λ))`.
    fn group(&self) -> crate::symmetry::Group {
        use crate::symmetry::{Automorphism, FiniteGroup, Group, Twist};
        Group::product(
            Group::Finite(FiniteGroup::cyclic(2)),
            Group::product(Group::Lie(LieGroupSpec::So2), Group::Lie(LieGroupSpec::Scaling), None),
            Some(Twist {
                images: vec![
                    Automorphism::Identity,
                    Automorphism::Product(Box::new(Automorphism::Inverse), Box::new(Automorphism::Identity)),
                ],
            }),
        )
    }

    fn apply(&self, g: &GroupElement, q: &JointVector) -> Result<JointVector> {
        let c = condition_from_element(g)?;
        Augmenter::apply(self, &c, q)
    }
}

/// Converts `(σ, (θ, λ))` with `σ ∈ {0, 1}` indexing C₂ into a condition.
pub fn condition_from_element(g: &GroupElement) -> Result<ConditionVector> {
    if let GroupElement::Pair(s, rest) = g {
        if let (GroupElement::Finite(s), GroupElement::Pair(t, l)) = (&**s, &**rest) {
            if let (GroupElement::Lie(theta), GroupElement::Lie(lambda)) = (&**t, &**l) {
                let sigma = match s {
                    0 => 1,
                    1 => -1,
                    _ => return Err(Error::InvalidParameter(format!("C2 has no element {s}"))),
                };
                return ConditionVector::new(crate::symmetry::wrap_angle(*theta), *lambda, sigma);
            }
        }
    }
    Err(Error::InvalidParameter(format!("{g:?} is not of the form (σ, (θ, λ))")))
}

/// Rotation angles `θ ∈ [−π, π)` at `n` equally spaced points.
pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| -PI + 2.0 * PI * k as f64 / n as f64).collect()
}
