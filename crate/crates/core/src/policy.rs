//! Condition-aware behavior cloning: `π(q, s) → q̇` as ridge regression on
//! random Fourier features, Euler rollouts and RMSE evaluation.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ConditionVector, Dataset, Demonstration};
use crate::error::{Error, Result};
use crate::kinematics::{JointVector, RobotModel};

/// Extra inputs appended to `q`: `cos θ, sin θ, ln λ, σ`.
pub const CONDITION_DIM: usize = 4;
const GRAM_CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Number of random features.
    pub features: usize,
    pub ridge: f64,
    pub seed: u64,
    /// Train on every `stride`-th sample of each demonstration.
    pub stride: usize,
    /// Multiplies every per-dimension bandwidth.
    pub bandwidth_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            features: 2000,
            ridge: 1e-4,
            seed: 42,
            stride: 4,
            bandwidth_scale: 2.0,
        }
    }
}

/// Network input for a configuration under a condition.
pub fn encode_input(q: &[f64], s: &ConditionVector, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(q);
    out.extend_from_slice(&[s.theta.cos(), s.theta.sin(), s.lambda.ln(), s.sigma as f64]);
}

/// Lower median of `|a_i − a_j|` over all ordered pairs, including `i = j`.
///
/// Found by bisection on the value with an O(n) two-pointer pair count, so it
/// costs O(n log n) instead of O(n²) and is exactly invariant to duplicating
/// the data.
pub fn median_pairwise_distance(values: &[f64]) -> f64 {
    let mut a = values.to_vec();
    a.sort_by(f64::total_cmp);
    let n = a.len() as u128;
    if n == 0 {
        return 0.0;
    }
    let k = (n * n).div_ceil(2);
    let count = |d: f64| -> u128 {
        // For each i, the j with a_j ∈ [a_i − d, a_i + d].
        let (mut lo, mut hi, mut total) = (0usize, 0usize, 0u128);
        for i in 0..a.len() {
            while a[lo] < a[i] - d {
                lo += 1;
            }
            while hi < a.len() && a[hi] <= a[i] + d {
                hi += 1;
            }
            total += (hi - lo) as u128;
        }
        total
    };
    if count(0.0) >= k {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, a[a.len() - 1] - a[0]);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count(mid) >= k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Per-dimension bandwidths: median heuristic, falling back to the standard
/// deviation and then to 1 for constant inputs.
pub fn bandwidths(inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dim = inputs.first().map_or(0, |x| x.len());
    let mut out = Vec::with_capacity(dim);
    let mut degenerate = 0;
    for j in 0..dim {
        let col: Vec<f64> = inputs.iter().map(|x| x[j]).collect();
        let med = median_pairwise_distance(&col);
        let bw = if med > 0.0 {
            med
        } else {
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            if var > 0.0 {
                var.sqrt()
            } else {
                degenerate += 1;
                1.0
            }
        };
        out.push(bw);
    }
    if dim == 0 || degenerate == dim {
        return Err(Error::DegenerateFeatures("every input dimension is constant".into()));
    }
    Ok(out)
}

/// `z(x) = √(2/D)·cos(Ωx + b)` with `Ω_kj ~ N(0, 1/bw_j²)`, `b ~ U[0, 2π)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    input_dim: usize,
    omega: Vec<f64>,
    phase: Vec<f64>,
    scale: f64,
}

impl FeatureMap {
    pub fn new(bandwidths: &[f64], features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_dim = bandwidths.len();
        let mut omega = Vec::with_capacity(features * input_dim);
        let mut phase = Vec::with_capacity(features);
        for _ in 0..features {
            for bw in bandwidths {
                let z: f64 = rng.sample(StandardNormal);
                omega.push(z / bw);
            }
            phase.push(rng.random_range(0.0..2.0 * PI));
        }
        Self {
            input_dim,
            omega,
            phase,
            scale: (2.0 / features as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.input_dim;
        for (k, o) in out.iter_mut().enumerate() {
            let w = &self.omega[k * d..(k + 1) * d];
            let z = w.iter().zip(x).fold(self.phase[k], |acc, (a, b)| acc + a * b);
            *o = self.scale * z.cos();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    pub config: PolicyConfig,
    pub bandwidths: Vec<f64>,
    pub dim_q: usize,
    features: FeatureMap,
    /// `D × dim_q`.
    pub weights: DMatrix<f64>,
    /// RMS error of predicted velocities on the training rows (rad/s).
    pub training_rmse: f64,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    config: PolicyConfig,
    dim_q: usize,
    bandwidths: Vec<f64>,
    /// Row-major `D × dim_q`.
    weights: Vec<f64>,
    training_rmse: f64,
}

/// Training inputs and targets, every `stride`-th row of each demonstration.
pub fn training_rows(dataset: &Dataset, stride: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let stride = stride.max(1);
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for demo in &dataset.demos {
        for k in (0..demo.len()).step_by(stride) {
            let mut x = Vec::new();
            encode_input(demo.q[k].as_slice(), &demo.condition, &mut x);
            inputs.push(x);
            targets.extend_from_slice(demo.qdot[k].as_slice());
        }
    }
    (inputs, targets)
}

/// Closed-form ridge fit of `q̇ ≈ Wᵀz(q, s)` minimising
/// `(1/N)·Σ‖Wᵀz − q̇‖² + ridge·‖W‖²`.
pub fn fit(dataset: &Dataset, config: &PolicyConfig) -> Result<PolicyModel> {
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("cannot fit an empty dataset".into()));
    }
    dataset.validate()?;
    if config.features == 0 || !(config.ridge >= 0.0) || !(config.bandwidth_scale > 0.0) {
        return Err(Error::InvalidParameter(format!("invalid policy config {config:?}")));
    }
    let dim_q = dataset.dim_q();
    let (inputs, targets) = training_rows(dataset, config.stride);
    let bw: Vec<f64> = bandwidths(&inputs)?
        .into_iter()
        .map(|b| b * config.bandwidth_scale)
        .collect();
    let fmap = FeatureMap::new(&bw, config.features, config.seed);
    let d = config.features;
    let n = inputs.len();

    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut moment = DMatrix::<f64>::zeros(d, dim_q);
    for start in (0..n).step_by(GRAM_CHUNK) {
        let end = (start + GRAM_CHUNK).min(n);
        let rows = end - start;
        // Column r holds z(x_r), so this is Φᵀ for the chunk.
        let mut phi_t = DMatrix::<f64>::zeros(d, rows);
        for (r, x) in inputs[start..end].iter().enumerate() {
            fmap.eval_into(x, phi_t.column_mut(r).as_mut_slice());
        }
        let y = DMatrix::from_row_slice(rows, dim_q, &targets[start * dim_q..end * dim_q]);
        gram.gemm(1.0, &phi_t, &phi_t.transpose(), 1.0);
        moment.gemm(1.0, &phi_t, &y, 1.0);
    }
    let inv_n = 1.0 / n as f64;
    gram *= inv_n;
    moment *= inv_n;
    for i in 0..d {
        gram[(i, i)] += config.ridge;
    }
    let weights = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&moment),
        None => gram
            .lu()
            .solve(&moment)
            .ok_or_else(|| Error::DegenerateFeatures("feature Gram matrix is singular".into()))?,
    };
    if !weights.iter().all(|w| w.is_finite()) {
        return Err(Error::NonFinite("policy weights".into()));
    }

    let mut model = PolicyModel {
        config: config.clone(),
        bandwidths: bw,
        dim_q,
        features: fmap,
        weights,
        training_rmse: 0.0,
    };
    let mut z = vec![0.0; d];
    let mut out = vec![0.0; dim_q];
    let mut sq = 0.0;
    for (r, x) in inputs.iter().enumerate() {
        model.predict_encoded(x, &mut z, &mut out);
        for (i, o) in out.iter().enumerate() {
            sq += (o - targets[r * dim_q + i]).powi(2);
        }
    }
    model.training_rmse = (sq / (n * dim_q) as f64).sqrt();
    Ok(model)
}

impl PolicyModel {
    fn predict_encoded(&self, x: &[f64], z: &mut [f64], out: &mut [f64]) {
        self.features.eval_into(x, z);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, zk) in z.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                *o += zk * self.weights[(k, i)];
            }
        }
    }

    /// `π(q, s)`.
    pub fn predict(&self, q: &JointVector, s: &ConditionVector) -> Result<JointVector> {
        if q.len() != self.dim_q {
            return Err(Error::dim(self.dim_q, q.len()));
        }
        let mut x = Vec::new();
        encode_input(q.as_slice(), s, &mut x);
        let mut z = vec![0.0; self.features.len()];
        let mut out = DVector::zeros(self.dim_q);
        self.predict_encoded(&x, &mut z, out.as_mut_slice());
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let d = self.features.len();
        let file = PolicyFile {
            config: self.config.clone(),
            dim_q: self.dim_q,
            bandwidths: self.bandwidths.clone(),
            weights: (0..d)
                .flat_map(|k| (0..self.dim_q).map(move |i| (k, i)))
                .map(|(k, i)| self.weights[(k, i)])
                .collect(),
            training_rmse: self.training_rmse,
        };
        crate::io::write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: PolicyFile = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        let d = file.config.features;
        if file.weights.len() != d * file.dim_q || file.bandwidths.len() != file.dim_q + CONDITION_DIM {
            return Err(Error::InvalidParameter("policy file has inconsistent sizes".into()));
        }
        Ok(Self {
            features: FeatureMap::new(&file.bandwidths, d, file.config.seed),
            weights: DMatrix::from_row_slice(d, file.dim_q, &file.weights),
            config: file.config,
            bandwidths: file.bandwidths,
            dim_q: file.dim_q,
            training_rmse: file.training_rmse,
        })
    }
}

/// Largest Euler step used by [`rollout`].
pub const ROLLOUT_STEP: f64 = 0.01;
/// Joint-space divergence bound.
pub const MAX_JOINT: f64 = 4.0 * PI;

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub times: Vec<f64>,
    /// Truncated at the last state before divergence.
    pub q: Vec<JointVector>,
    pub diverged: bool,
}

/// Anything that maps `(q, s)` to a joint velocity.
pub trait VelocityField: Sync {
    fn velocity(&self, q: &JointVector, s: &ConditionVector) -> JointVector;
}

impl VelocityField for PolicyModel {
    fn velocity(&self, q: &JointVector, s: &ConditionVector) -> JointVector {
        self.predict(q, s).expect("rollout keeps the dimension")
    }
}

/// Euler integration of `q̇ = π(q, s)` from `q0`, recorded at `times`
/// (uniform), with as many substeps per interval as needed to keep the step at
/// most [`ROLLOUT_STEP`].
///
/// Divergence: non-finite state, `‖q‖∞ > 4π`, or an end effector farther than
/// twice its chain's reach from its base.
pub fn rollout(
    policy: &dyn VelocityField,
    model: &RobotModel,
    q0: &JointVector,
    s: &ConditionVector,
    times: &[f64],
) -> RolloutResult {
    let mut q = q0.clone();
    let mut out = RolloutResult {
        times: Vec::with_capacity(times.len()),
        q: Vec::with_capacity(times.len()),
        diverged: false,
    };
    let diverged = |q: &JointVector| -> bool {
        if !q.iter().all(|v| v.is_finite()) || q.amax() > MAX_JOINT {
            return true;
        }
        model.chains().iter().enumerate().any(|(c, chain)| {
            let e = model.chain_end_effector(c, q).expect("dimension checked");
            let d = ((e[0] - chain.base[0]).powi(2) + (e[1] - chain.base[1]).powi(2)).sqrt();
            d > 2.0 * chain.reach()
        })
    };
    if q0.len() != model.dim_q() || diverged(&q) {
        out.diverged = true;
        return out;
    }
    for (k, &t) in times.iter().enumerate() {
        if k > 0 {
            let dt = t - times[k - 1];
            let sub = (dt / ROLLOUT_STEP).ceil().max(1.0) as usize;
            let h = dt / sub as f64;
            for _ in 0..sub {
                let v = policy.velocity(&q, s);
                q.axpy(h, &v, 1.0);
                if diverged(&q) {
                    out.diverged = true;
                    return out;
                }
            }
        }
        out.times.push(t);
        out.q.push(q.clone());
    }
    out
}

/// Task-space RMSE between a rollout and its nominal trajectory, aligned by
/// index: `sqrt(mean_k ‖f(q_k) − f(q*_k)‖²)`. A truncated rollout is held at
/// its last valid state for the remaining samples.
pub fn task_rmse(model: &RobotModel, rollout: &RolloutResult, nominal: &Demonstration) -> Result<f64> {
    let Some(last) = rollout.q.last() else {
        return Ok(f64::INFINITY);
    };
    let mut sq = 0.0;
    for k in 0..nominal.len() {
        let q = rollout.q.get(k).unwrap_or(last);
        sq += (model.forward_kinematics(q)? - model.forward_kinematics(&nominal.q[k])?).norm_squared();
    }
    Ok((sq / nominal.len() as f64).sqrt())
}

/// Joint-space counterpart of [`task_rmse`].
pub fn joint_rmse(rollout: &RolloutResult, nominal: &Demonstration) -> f64 {
    let Some(last) = rollout.q.last() else {
        return f64::INFINITY;
    };
    let sq: f64 = (0..nominal.len())
        .map(|k| (rollout.q.get(k).unwrap_or(last) - &nominal.q[k]).norm_squared())
        .sum();
    (sq / nominal.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub policy: String,
    pub test_set: String,
    pub mean: f64,
    pub std: f64,
    pub trajectories: usize,
    pub diverged: usize,
}

/// Rolls out `policy` from the start of every nominal trajectory under its
/// condition and summarises the task-space RMSE (population std).
pub fn evaluate(
    policy: &dyn VelocityField,
    model: &RobotModel,
    nominals: &[Demonstration],
) -> Result<(Vec<f64>, usize)> {
    let results = crate::par::try_map(nominals, |nom| -> Result<(f64, bool)> {
        let r = rollout(policy, model, &nom.q[0], &nom.condition, &nom.times);
        Ok((task_rmse(model, &r, nom)?, r.diverged))
    })?;
    let diverged = results.iter().filter(|r| r.1).count();
    Ok((results.into_iter().map(|r| r.0).collect(), diverged))
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Every policy against every named test set.
pub fn evaluate_matrix(
    policies: &[(String, &PolicyModel)],
    test_sets: &[(String, Vec<Demonstration>)],
    model: &RobotModel,
) -> Result<Vec<CellResult>> {
    let cells: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|p| (0..test_sets.len()).map(move |t| (p, t)))
        .collect();
    cells
        .iter()
        .map(|&(p, t)| {
            let (rmse, diverged) = evaluate(policies[p].1, model, &test_sets[t].1)?;
            let (mean, std) = mean_std(&rmse);
            Ok(CellResult {
                policy: policies[p].0.clone(),
                test_set: test_sets[t].0.clone(),
                mean,
                std,
                trajectories: rmse.len(),
                diverged,
            })
        })
        .collect()
}

/// Long-form CSV: one row per cell.
pub fn write_cells_csv<W: std::io::Write>(cells: &[CellResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["policy", "test_set", "rmse_mean", "rmse_std", "trajectories", "diverged"])?;
    for c in cells {
        wr.write_record([
            c.policy.clone(),
            c.test_set.clone(),
            format!("{:.6}", c.mean),
            format!("{:.6}", c.std),
            c.trajectories.to_string(),
            c.diverged.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Wide CSV: policies as rows, test sets as columns, `mean±std` entries.
pub fn write_table_csv<W: std::io::Write>(cells: &[CellResult], w: W) -> Result<()> {
    let mut policies: Vec<&str> = Vec::new();
    let mut sets: Vec<&str> = Vec::new();
    for c in cells {
        if !policies.contains(&c.policy.as_str()) {
            policies.push(&c.policy);
        }
        if !sets.contains(&c.test_set.as_str()) {
            sets.push(&c.test_set);
        }
    }
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["policy".to_string()];
    header.extend(sets.iter().map(|s| s.to_string()));
    wr.write_record(&header)?;
    for p in &policies {
        let mut row = vec![p.to_string()];
        for s in &sets {
            let c = cells
                .iter()
                .find(|c| c.policy == *p && c.test_set == *s)
                .expect("complete matrix");
            row.push(format!("{:.3}±{:.3}", c.mean, c.std));
        }
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}
