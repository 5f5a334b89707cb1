//! The planar dual-arm letter-writing experiment: robot and letter
//! constants, demonstration generation, the verification suite, the
//! policy-versus-test-set RMSE table and the augmentation density sweep.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_dataset, grid_presets, theta_grid, uniform_angles, Augmenter, FIG5_DENSITIES};
use crate::compose::{commute_test, conjugation_twist, direct_product, lie_bracket, semidirect_product};
use crate::dataset::{ConditionVector, Dataset, Demonstration};
use crate::error::{Error, Result};
use crate::io::{load_robot, write_atomic, write_json};
use crate::kinematics::{ChainSpec, JointVector, Metric, RobotModel, TaskPath};
use crate::policy::{evaluate, evaluate_matrix, fit, mean_std, rollout, write_cells_csv, write_table_csv, CellResult, PolicyConfig, PolicyModel};
use crate::svg::{Plot, Series};
use crate::symmetry::{
    build_morphological_action, FiniteGroup, GeneratorField, GroupAction, GroupElement, LieGroupSpec, LinearAction,
    Space,
};
use crate::transfer::{descend, verify_f_relatedness, verify_flow_naturality, DEFAULT_STEP};

pub const REFERENCE_LINKS: [f64; 4] = [0.5, 0.5, 0.4, 0.3];
pub const REFERENCE_BASES: [[f64; 2]; 2] = [[-0.4, 0.0], [0.4, 0.0]];
/// Letter centers in front of each arm; mirror images under `x ↦ −x`.
pub const REFERENCE_CENTERS: [[f64; 2]; 2] = [[-0.6, 0.95], [0.6, 0.95]];
pub const JOINT_SIGNS: [f64; 4] = [-1.0; 4];
pub const TASK_REFLECTION: [f64; 2] = [-1.0, 1.0];
/// Elbow-consistent IK seed; the right arm mirrors the left.
pub const IK_GUESS: [f64; 8] = [0.4, 0.5, 0.6, 0.5, -0.4, -0.5, -0.6, -0.5];

/// Order in which the density sweep's worst case must not increase.
pub const DENSITY_TREND: [u32; 6] = [90, 45, 30, 15, 10, 5];

pub const POLICY_NAMES: [&str; 4] = ["pi", "pi_R", "pi_RT", "pi_MRT"];
pub const TEST_SET_NAMES: [&str; 4] = ["Original", "G_R", "G_RT", "G_MRT"];

/// Two 4-link arms pointing up at `q = 0`, identity metric.
pub fn reference_robot() -> RobotModel {
    RobotModel::new(
        REFERENCE_BASES
            .iter()
            .map(|b| ChainSpec::new(*b, REFERENCE_LINKS.to_vec()).with_base_angle(FRAC_PI_2))
            .collect(),
        Metric::Identity,
    )
    .expect("reference robot is valid")
}

/// Morphological C₂ action of the dual arm. `break_reflection` drops the
/// task-space mirror, which no longer matches the joint-space swap.
pub fn reference_symmetry(model: &RobotModel, break_reflection: bool) -> Result<(LinearAction, LinearAction)> {
    let reflection = if break_reflection { [1.0, 1.0] } else { TASK_REFLECTION };
    build_morphological_action(model, &JOINT_SIGNS, reflection)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LetterConfig {
    /// Letter height and width (m).
    pub scale: f64,
    /// Angular extent of the C; the gap faces +x.
    pub arc_deg: f64,
    pub samples: usize,
    pub duration: f64,
    /// C center, N center.
    pub centers: Vec<[f64; 2]>,
    /// Per-demonstration uniform center offset bound (m).
    pub center_jitter: f64,
    /// Per-demonstration uniform relative scale bound.
    pub scale_jitter: f64,
}

impl Default for LetterConfig {
    fn default() -> Self {
        Self {
            scale: 0.5,
            arc_deg: 270.0,
            samples: 200,
            duration: 5.0,
            centers: REFERENCE_CENTERS.to_vec(),
            center_jitter: 0.01,
            scale_jitter: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Robot file; the reference dual arm when absent.
    pub robot: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub letters: LetterConfig,
    pub train_demos: usize,
    pub test_demos: usize,
    /// RK4 step of the lifted flows used for augmentation.
    pub lift_step: f64,
    /// Grid used by the `augment` command.
    pub grid: String,
    /// Random group elements per transformed test set.
    pub test_elements: usize,
    pub test_lambda: [f64; 2],
    /// Evaluation angles of the density sweep.
    pub sweep_points: usize,
    pub densities: Vec<u32>,
    pub policy: PolicyConfig,
    pub verify_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            robot: None,
            seed: 42,
            out: PathBuf::from("results"),
            letters: LetterConfig::default(),
            train_demos: 5,
            test_demos: 5,
            lift_step: 5e-3,
            grid: "table1".into(),
            test_elements: 8,
            test_lambda: [0.5, 1.25],
            sweep_points: 36,
            densities: FIG5_DENSITIES.to_vec(),
            policy: PolicyConfig::default(),
            verify_samples: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the experiment seed and the policy feature seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.policy.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.letters;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(l.scale > 0.0) || !(l.arc_deg > 0.0 && l.arc_deg < 360.0) || l.samples < 2 || !(l.duration > 0.0) {
            return bad("letter scale, arc, samples and duration must be positive (arc below 360°)");
        }
        if l.centers.len() != 2 || !(l.center_jitter >= 0.0) || !(l.scale_jitter >= 0.0 && l.scale_jitter < 1.0) {
            return bad("letters need two centers and non-negative jitter below 1");
        }
        if self.train_demos == 0 || self.test_demos == 0 || self.test_elements == 0 || self.sweep_points == 0 {
            return bad("demonstration, element and sweep counts must be positive");
        }
        if !(self.lift_step > 0.0) {
            return bad("lift_step must be positive");
        }
        if !(self.test_lambda[0] > 0.0 && self.test_lambda[0] <= self.test_lambda[1]) {
            return bad("test_lambda must be an increasing pair of positive scales");
        }
        if let Some(k) = self.densities.iter().find(|k| !FIG5_DENSITIES.contains(k)) {
            return bad(&format!("unsupported density {k}°"));
        }
        if let Some(robot) = &self.robot {
            if !robot.exists() {
                return bad(&format!("robot file {} does not exist", robot.display()));
            }
        }
        Ok(())
    }

    pub fn robot_model(&self) -> Result<RobotModel> {
        match &self.robot {
            Some(path) => load_robot(path),
            None => Ok(reference_robot()),
        }
    }
}

/// Point of the C at path fraction `s ∈ [0, 1]`, radius `scale/2`.
pub fn letter_c(center: [f64; 2], scale: f64, arc_deg: f64, s: f64) -> [f64; 2] {
    let gap = (360.0 - arc_deg).to_radians();
    let a = 0.5 * gap + s * arc_deg.to_radians();
    let r = 0.5 * scale;
    [center[0] + r * a.cos(), center[1] + r * a.sin()]
}

/// Point of the N at path fraction `s ∈ [0, 1]` by arc length: up the left
/// stroke, down the diagonal, up the right stroke.
pub fn letter_n(center: [f64; 2], scale: f64, s: f64) -> [f64; 2] {
    let h = 0.5 * scale;
    let v = [[-h, -h], [-h, h], [h, -h], [h, h]];
    let lens: Vec<f64> = v.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).collect();
    let total: f64 = lens.iter().sum();
    let mut d = s.clamp(0.0, 1.0) * total;
    for (i, len) in lens.iter().enumerate() {
        if d <= *len || i == lens.len() - 1 {
            let f = (d / len).min(1.0);
            return [
                center[0] + v[i][0] + f * (v[i + 1][0] - v[i][0]),
                center[1] + v[i][1] + f * (v[i + 1][1] - v[i][1]),
            ];
        }
        d -= len;
    }
    unreachable!("segments are non-empty")
}

/// Stacked `[C, N]` path with per-letter center offsets and a common scale
/// factor.
pub fn letter_path(cfg: &LetterConfig, offsets: [[f64; 2]; 2], factor: f64) -> TaskPath {
    let n = cfg.samples;
    let shift = |c: usize| [cfg.centers[c][0] + offsets[c][0], cfg.centers[c][1] + offsets[c][1]];
    let (cc, cn) = (shift(0), shift(1));
    let scale = cfg.scale * factor;
    let times = (0..n).map(|k| cfg.duration * k as f64 / (n - 1) as f64).collect();
    let points = (0..n)
        .map(|k| {
            let s = k as f64 / (n - 1) as f64;
            let a = letter_c(cc, scale, cfg.arc_deg, s);
            let b = letter_n(cn, scale, s);
            DVector::from_vec(vec![a[0], a[1], b[0], b[1]])
        })
        .collect();
    TaskPath { times, points }
}

/// `count` jittered letter demonstrations tracked with resolved-rate
/// control from an IK start. `stream` separates training and test draws.
pub fn generate_demos(model: &RobotModel, cfg: &LetterConfig, count: usize, seed: u64, stream: u64) -> Result<Vec<Demonstration>> {
    if model.dim_x() != 4 || model.dim_q() != IK_GUESS.len() {
        return Err(Error::InvalidModel(
            "letter demonstrations need two 4-joint planar chains".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let guess = DVector::from_column_slice(&IK_GUESS);
    (0..count)
        .map(|_| {
            let mut offsets = [[0.0; 2]; 2];
            for o in offsets.iter_mut().flatten() {
                *o = jitter(&mut rng, cfg.center_jitter);
            }
            let factor = 1.0 + jitter(&mut rng, cfg.scale_jitter);
            let path = letter_path(cfg, offsets, factor);
            let q0 = model.inverse_kinematics(&path.points[0], &guess)?;
            model.track_task_path(&path, &q0)
        })
        .collect()
}

fn jitter<R: Rng>(rng: &mut R, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Everything shared by the experiment commands.
pub struct Setup {
    pub model: Arc<RobotModel>,
    pub augmenter: Augmenter,
    pub train: Dataset,
    pub test: Vec<Demonstration>,
}

pub fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let model = Arc::new(cfg.robot_model()?);
    let (mq, mx) = reference_symmetry(&model, false)?;
    let augmenter = Augmenter::new(model.clone(), cfg.letters.centers.clone(), &mq, &mx, cfg.lift_step)?;
    let train = Dataset::from_originals(generate_demos(&model, &cfg.letters, cfg.train_demos, cfg.seed, 1)?)?;
    let test = generate_demos(&model, &cfg.letters, cfg.test_demos, cfg.seed, 2)?;
    Ok(Setup {
        model,
        augmenter,
        train,
        test,
    })
}

/// Seeded test elements. `G_R`: θ ~ U[−π, π). `G_RT`: also
/// λ ~ U[test_lambda]. `G_MRT`: also σ alternating +1, −1.
pub fn test_elements(cfg: &ExperimentConfig) -> Vec<(String, Vec<ConditionVector>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut sets = vec![(TEST_SET_NAMES[0].to_string(), vec![ConditionVector::identity()])];
    for (kind, name) in TEST_SET_NAMES.iter().enumerate().skip(1) {
        let elements = (0..cfg.test_elements)
            .map(|k| {
                let theta = rng.random_range(-PI..PI);
                let lambda = if kind >= 2 {
                    rng.random_range(cfg.test_lambda[0]..=cfg.test_lambda[1])
                } else {
                    1.0
                };
                let sigma = if kind == 3 && k % 2 == 1 { -1 } else { 1 };
                ConditionVector { theta, lambda, sigma }
            })
            .collect();
        sets.push((name.to_string(), elements));
    }
    sets
}

/// Nominal trajectories: every test demonstration under every element.
pub fn build_test_sets(setup: &Setup, elements: &[(String, Vec<ConditionVector>)]) -> Result<Vec<(String, Vec<Demonstration>)>> {
    elements
        .iter()
        .map(|(name, elems)| {
            let mut nominals = Vec::new();
            for demo in &setup.test {
                nominals.extend(setup.augmenter.transform_demo(demo, elems)?);
            }
            Ok((name.clone(), nominals))
        })
        .collect()
}

/// Training sets for the four policies. The full grid is augmented once and
/// the smaller grids are read off by element.
pub fn training_sets(setup: &Setup) -> Result<Vec<(String, Dataset)>> {
    let full = augment_dataset(&setup.augmenter, &setup.train, &grid_presets("table1")?)?;
    let subset = |keep: &dyn Fn(&ConditionVector) -> bool| {
        let mut d = Dataset::default();
        for (demo, p) in full.demos.iter().zip(&full.provenance) {
            if keep(&demo.condition) {
                d.push(demo.clone(), p.clone());
            }
        }
        d
    };
    Ok(vec![
        (POLICY_NAMES[0].into(), setup.train.clone()),
        (POLICY_NAMES[1].into(), subset(&|c| c.lambda == 1.0 && c.sigma == 1)),
        (POLICY_NAMES[2].into(), subset(&|c| c.sigma == 1)),
        (POLICY_NAMES[3].into(), full),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table1Trends {
    /// Unaugmented policy, `G_MRT` over `Original`.
    pub unaugmented_ratio: f64,
    /// Fully augmented policy, `G_MRT` over `Original`.
    pub augmented_ratio: f64,
    /// Unaugmented over fully augmented, both on `G_MRT`.
    pub improvement: f64,
    pub passed: bool,
}

pub fn table1_trends(cells: &[CellResult]) -> Result<Table1Trends> {
    let get = |p: &str, t: &str| {
        cells
            .iter()
            .find(|c| c.policy == p && c.test_set == t)
            .map(|c| c.mean)
            .ok_or_else(|| Error::InvalidParameter(format!("missing cell {p} × {t}")))
    };
    let (pi, full) = (POLICY_NAMES[0], POLICY_NAMES[3]);
    let (orig, mrt) = (TEST_SET_NAMES[0], TEST_SET_NAMES[3]);
    let unaugmented_ratio = get(pi, mrt)? / get(pi, orig)?;
    let augmented_ratio = get(full, mrt)? / get(full, orig)?;
    let improvement = get(pi, mrt)? / get(full, mrt)?;
    Ok(Table1Trends {
        unaugmented_ratio,
        augmented_ratio,
        improvement,
        passed: unaugmented_ratio >= 3.0 && augmented_ratio <= 2.0 && improvement >= 3.0,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Table1Report {
    pub cells: Vec<CellResult>,
    pub trends: Table1Trends,
    pub training_rmse: Vec<(String, f64)>,
    pub training_rows: Vec<(String, usize)>,
    pub elapsed_s: f64,
}

/// Trains the four policies, evaluates them on the four test sets and writes
/// `table1_cells.csv`, `table1.csv`, `table1_summary.json` and trajectory
/// overlays into `out`.
pub fn reproduce_table1(cfg: &ExperimentConfig, out: &Path) -> Result<Table1Report> {
    let start = Instant::now();
    let setup = setup(cfg)?;
    let elements = test_elements(cfg);
    let test_sets = build_test_sets(&setup, &elements)?;
    let sets = training_sets(&setup)?;
    let policies = crate::par::try_map(&sets, |(_, d)| fit(d, &cfg.policy))?;
    let named: Vec<(String, &PolicyModel)> = sets.iter().map(|s| s.0.clone()).zip(&policies).collect();
    let cells = evaluate_matrix(&named, &test_sets, &setup.model)?;
    let trends = table1_trends(&cells)?;

    std::fs::create_dir_all(out)?;
    let mut buf = Vec::new();
    write_cells_csv(&cells, &mut buf)?;
    write_atomic(&out.join("table1_cells.csv"), &buf)?;
    buf.clear();
    write_table_csv(&cells, &mut buf)?;
    write_atomic(&out.join("table1.csv"), &buf)?;
    for (name, policy) in &named {
        let plot = overlay_plot(&setup.model, *policy, name, &test_sets[3])?;
        write_atomic(&out.join(format!("fig4_{name}.svg")), plot.render().as_bytes())?;
    }
    let report = Table1Report {
        cells,
        trends,
        training_rmse: named.iter().map(|(n, p)| (n.clone(), p.training_rmse)).collect(),
        training_rows: sets.iter().map(|(n, d)| (n.clone(), d.rows())).collect(),
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("table1_summary.json"), &report)?;
    Ok(report)
}

/// Predicted (solid) against nominal (dashed) end-effector traces of the
/// first two trajectories of a test set.
fn overlay_plot(model: &RobotModel, policy: &PolicyModel, name: &str, set: &(String, Vec<Demonstration>)) -> Result<Plot> {
    let mut plot = Plot::new(format!("{name} on {}", set.0), "x (m)", "y (m)");
    plot.equal_aspect = true;
    for (i, nominal) in set.1.iter().take(2).enumerate() {
        let r = rollout(policy, model, &nominal.q[0], &nominal.condition, &nominal.times);
        let trace = |qs: &[JointVector], chain: usize| -> Result<Vec<(f64, f64)>> {
            qs.iter()
                .map(|q| model.chain_end_effector(chain, q).map(|p| (p[0], p[1])))
                .collect()
        };
        for chain in 0..model.chains().len() {
            let color = 2 * i + chain;
            plot.push(Series::new(format!("nominal {i}.{chain}"), trace(&nominal.q, chain)?).dashed().color(color));
            let label = if r.diverged { format!("rollout {i}.{chain} (diverged)") } else { format!("rollout {i}.{chain}") };
            plot.push(Series::new(label, trace(&r.q, chain)?).color(color));
        }
    }
    Ok(plot)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityCurve {
    pub density_deg: u32,
    /// Mean and std of the task-space RMSE at each evaluation angle.
    pub rmse: Vec<(f64, f64)>,
    pub worst: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityReport {
    pub thetas: Vec<f64>,
    pub curves: Vec<DensityCurve>,
    /// Worst case non-increasing (10% slack) along the densities of
    /// [`DENSITY_TREND`] that were run.
    pub monotone: bool,
    pub elapsed_s: f64,
}

/// Rotation-only policies at each density, evaluated on `sweep_points`
/// rotations of the test demonstrations. Writes `density_sweep.csv`,
/// `density_worst.csv`, `density_summary.json` and `density_sweep.svg`.
pub fn density_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<DensityReport> {
    let start = Instant::now();
    let setup = setup(cfg)?;
    let finest = *cfg.densities.iter().min().ok_or_else(|| Error::Config("no densities".into()))?;
    let full = augment_dataset(&setup.augmenter, &setup.train, &grid_presets(&format!("fig5_{finest}deg"))?)?;
    let mut densities = cfg.densities.clone();
    densities.sort_unstable_by(|a, b| b.cmp(a));
    densities.dedup();

    let thetas = uniform_angles(cfg.sweep_points);
    let elements: Vec<ConditionVector> = thetas.iter().map(|&theta| ConditionVector { theta, lambda: 1.0, sigma: 1 }).collect();
    let mut per_theta: Vec<Vec<Demonstration>> = vec![Vec::new(); thetas.len()];
    for demo in &setup.test {
        for (k, d) in setup.augmenter.transform_demo(demo, &elements)?.into_iter().enumerate() {
            per_theta[k].push(d);
        }
    }

    let datasets: Vec<Dataset> = densities
        .iter()
        .map(|&k| {
            let grid = theta_grid(k as f64);
            let mut d = Dataset::default();
            for (demo, p) in full.demos.iter().zip(&full.provenance) {
                if grid.iter().any(|t| (t - demo.condition.theta).abs() < 1e-9) {
                    d.push(demo.clone(), p.clone());
                }
            }
            d
        })
        .collect();
    let curves = crate::par::try_map_range(densities.len(), |i| -> Result<DensityCurve> {
        let policy = fit(&datasets[i], &cfg.policy)?;
        let rmse = per_theta
            .iter()
            .map(|nominals| Ok(mean_std(&evaluate(&policy, &setup.model, nominals)?.0)))
            .collect::<Result<Vec<_>>>()?;
        let worst = rmse.iter().map(|r| r.0).fold(0.0, f64::max);
        Ok(DensityCurve {
            density_deg: densities[i],
            rmse,
            worst,
        })
    })?;
    let monotone = density_monotone(&curves);

    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["density_deg", "theta_deg", "rmse_mean", "rmse_std"])?;
    for c in &curves {
        for (t, r) in thetas.iter().zip(&c.rmse) {
            w.write_record([
                c.density_deg.to_string(),
                format!("{:.1}", t.to_degrees()),
                format!("{:.6}", r.0),
                format!("{:.6}", r.1),
            ])?;
        }
    }
    write_atomic(&out.join("density_sweep.csv"), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["density_deg", "worst_rmse"])?;
    for c in &curves {
        w.write_record([c.density_deg.to_string(), format!("{:.6}", c.worst)])?;
    }
    write_atomic(&out.join("density_worst.csv"), &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;

    let mut plot = Plot::new("RMSE over test rotations", "θ (deg)", "task-space RMSE (m)");
    for c in &curves {
        let pts = thetas.iter().zip(&c.rmse).map(|(t, r)| (t.to_degrees(), r.0)).collect();
        plot.push(Series::new(format!("Δθ = {}°", c.density_deg), pts));
    }
    write_atomic(&out.join("density_sweep.svg"), plot.render().as_bytes())?;
    let report = DensityReport {
        thetas,
        curves,
        monotone,
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    write_json(&out.join("density_summary.json"), &report)?;
    Ok(report)
}

/// Worst-case RMSE may grow by at most 10% at each step to a denser grid.
pub fn density_monotone(curves: &[DensityCurve]) -> bool {
    let worst: Vec<f64> = DENSITY_TREND
        .iter()
        .filter_map(|k| curves.iter().find(|c| c.density_deg == *k).map(|c| c.worst))
        .collect();
    worst.windows(2).all(|w| w[1] <= 1.1 * w[0])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&CheckResult> {
        self.checks.iter().find(|c| !c.passed)
    }
}

fn check(name: &str, value: f64, tolerance: f64, passed: bool) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        value,
        tolerance,
    }
}

fn below(name: &str, value: f64, tolerance: f64) -> CheckResult {
    check(name, value, tolerance, value <= tolerance)
}

/// Flow-naturality error at two step sizes; the coarse pair is where RK4
/// truncation dominates roundoff.
pub const ORDER_STEPS: [f64; 2] = [1e-2, 5e-3];

/// Start configuration of the first letter sample, used by the flow checks.
pub fn letter_start(model: &RobotModel, cfg: &LetterConfig) -> Result<JointVector> {
    let path = letter_path(cfg, [[0.0; 2]; 2], 1.0);
    model.inverse_kinematics(&path.points[0], &DVector::from_column_slice(&IK_GUESS))
}

/// Runs the transfer and composition checks in order: descend,
/// f-relatedness of both generators, flow naturality and its convergence
/// order, the rotation/scaling bracket and commutation, the direct product
/// example, and the O(2) semi-direct product.
pub fn verify(cfg: &ExperimentConfig, break_reflection: bool) -> Result<VerifyReport> {
    cfg.validate()?;
    let model = cfg.robot_model()?;
    let centers = cfg.letters.centers.clone();
    let mut checks = Vec::new();

    let (mq, mx) = reference_symmetry(&model, break_reflection)?;
    let d = descend(&model, &mq, &mx, cfg.verify_samples, 1e-10, cfg.seed);
    checks.push(check("descend", d.max_violation, d.tolerance, d.passed));

    let rot = GeneratorField {
        space: Space::X,
        group: LieGroupSpec::So2,
        centers: centers.clone(),
    };
    let scale = GeneratorField {
        space: Space::X,
        group: LieGroupSpec::Scaling,
        centers: centers.clone(),
    };
    for (name, field) in [("f_related_rotation", &rot), ("f_related_scaling", &scale)] {
        let r = verify_f_relatedness(&model, field, cfg.verify_samples, 1e-10, cfg.seed)?;
        checks.push(check(name, r.max_relatedness.max(r.max_vertical), r.tolerance, r.passed));
    }

    let q0 = letter_start(&model, &cfg.letters)?;
    let t_grid: Vec<f64> = (0..=100).map(|k| PI * k as f64 / 100.0).collect();
    let n = verify_flow_naturality(&model, &rot, &q0, &t_grid, DEFAULT_STEP, 1e-6)?;
    checks.push(check("flow_naturality", n.max_deviation, n.tolerance, n.passed));
    let coarse = verify_flow_naturality(&model, &rot, &q0, &t_grid, ORDER_STEPS[0], f64::INFINITY)?;
    let fine = verify_flow_naturality(&model, &rot, &q0, &t_grid, ORDER_STEPS[1], f64::INFINITY)?;
    let ratio = coarse.max_deviation / fine.max_deviation;
    checks.push(check("flow_order", ratio, 8.0, ratio >= 8.0));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points: Vec<DVector<f64>> = (0..50)
        .map(|_| DVector::from_fn(4, |_, _| rng.random_range(-1.5..1.5)))
        .collect();
    let mut bracket = 0.0f64;
    for p in &points {
        bracket = bracket.max(lie_bracket(&rot, &scale, p)?.norm());
    }
    checks.push(below("bracket", bracket, 1e-8));
    let rot_x = LinearAction::lie(Space::X, LieGroupSpec::So2, centers.clone());
    let scale_x = LinearAction::lie(Space::X, LieGroupSpec::Scaling, centers);
    let c = commute_test(&rot_x, &scale_x, &points[..10], 1e-10, cfg.seed);
    checks.push(check("commute", c.max_violation, c.tolerance, c.passed));

    let plane: Vec<DVector<f64>> = points.iter().map(|p| p.rows(0, 2).into_owned()).collect();
    let product = direct_product(
        Arc::new(LinearAction::so2(Space::X, 1)),
        Arc::new(LinearAction::scaling(Space::X, 1)),
        &plane[..10],
        1e-10,
        cfg.seed,
    )?;
    let g = GroupElement::pair(GroupElement::Lie(FRAC_PI_2), GroupElement::Lie(2.0));
    let y = product.apply(&g, &DVector::from_vec(vec![1.0, 0.0]))?;
    checks.push(below("direct_product", (y - DVector::from_vec(vec![0.0, 2.0])).amax(), 1e-15));

    let reflection = LinearAction::finite(
        Space::X,
        FiniteGroup::cyclic(2),
        vec![DMatrix::identity(2, 2), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))],
    )?;
    let so2 = LinearAction::so2(Space::X, 1);
    let s = reflection.rep(&GroupElement::Finite(1))?;
    let mut conj = 0.0f64;
    for theta in uniform_angles(16) {
        let r = so2.rep(&GroupElement::Lie(theta))?;
        let expected = so2.rep(&GroupElement::Lie(-theta))?;
        conj = conj.max((&s * r * s.transpose() - expected).amax());
    }
    checks.push(below("semidirect_conjugation", conj, 1e-15));
    let twist = conjugation_twist(&reflection, &so2)?;
    let law = semidirect_product(Arc::new(reflection), Arc::new(so2), twist, &plane[..10], 100, 1e-12, cfg.seed)
        .map(|(_, r)| r.max_law_violation)
        .unwrap_or(f64::INFINITY);
    checks.push(below("semidirect_law", law, 1e-12));

    Ok(VerifyReport { checks })
}

/// Augments the training demonstrations with a named grid and writes the
/// originals and the augmented dataset under `out`.
pub fn augment_command(cfg: &ExperimentConfig, grid: &crate::augment::AugmentationGrid, out: &Path) -> Result<Dataset> {
    let setup = setup(cfg)?;
    setup.train.write_dir(&out.join("original"))?;
    let augmented = augment_dataset(&setup.augmenter, &setup.train, grid)?;
    augmented.write_dir(&out.join("augmented"))?;
    Ok(augmented)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letter_endpoints() {
        let c = [0.0, 0.0];
        let p = letter_c(c, 0.5, 270.0, 0.0);
        assert!((p[0] - 0.25 * (PI / 4.0).cos()).abs() < 1e-15 && (p[1] - 0.25 * (PI / 4.0).sin()).abs() < 1e-15);
        let p = letter_c(c, 0.5, 270.0, 0.5);
        assert!((p[0] + 0.25).abs() < 1e-15 && p[1].abs() < 1e-15);
        assert_eq!(letter_n(c, 0.5, 0.0), [-0.25, -0.25]);
        let p = letter_n(c, 0.5, 1.0);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let total = 1.0 + 0.5f64.hypot(0.5);
        let p = letter_n(c, 0.5, 0.5 / total);
        assert!((p[0] + 0.25).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn reference_symmetry_descends() {
        let m = reference_robot();
        let (q, x) = reference_symmetry(&m, false).unwrap();
        assert!(descend(&m, &q, &x, 20, 1e-10, 1).passed);
        let (q, x) = reference_symmetry(&m, true).unwrap();
        assert!(!descend(&m, &q, &x, 20, 1e-10, 1).passed);
    }

    #[test]
    fn config_defaults_and_parsing() {
        let cfg: ExperimentConfig = toml::from_str("seed = 7\n[letters]\nsamples = 50\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.letters.samples, 50);
        assert_eq!(cfg.letters.scale, 0.5);
        assert_eq!(cfg.policy.features, 2000);
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
        let mut bad = ExperimentConfig::default();
        bad.densities = vec![7];
        assert!(bad.validate().is_err());
        bad = ExperimentConfig::default();
        bad.robot = Some(PathBuf::from("/nonexistent/robot.json"));
        assert!(bad.validate().is_err());
        assert_eq!(ExperimentConfig::default().with_seed(3).policy.seed, 3);
    }

    #[test]
    fn monotone_rule_allows_ten_percent() {
        let curve = |k, worst| DensityCurve {
            density_deg: k,
            rmse: vec![],
            worst,
        };
        let ok = vec![curve(90, 1.0), curve(45, 1.09), curve(30, 0.5), curve(5, 0.2)];
        assert!(density_monotone(&ok));
        let bad = vec![curve(90, 1.0), curve(45, 0.5), curve(30, 0.56)];
        assert!(!density_monotone(&bad));
    }
}
