use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use symmlift::augment::{augment_dataset, resolve_grid};
use symmlift::dataset::Dataset;
use symmlift::experiment::{
    augment_command, build_test_sets, density_sweep, reproduce_table1, setup, test_elements, verify, ExperimentConfig,
};
use symmlift::io::write_atomic;
use symmlift::policy::{evaluate_matrix, fit, write_cells_csv, PolicyModel};

#[derive(Parser)]
#[command(name = "symmlift", version, about = "Symmetry transfer and augmentation experiments for a planar dual arm")]
struct Cli {
    /// Experiment config (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment and policy seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Robot description (JSON); the reference dual arm when omitted.
    #[arg(long, global = true)]
    robot: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the descend, lift and composition checks.
    Verify {
        /// Replace the task-space mirror by a plain swap (fault injection).
        #[arg(long)]
        break_reflection: bool,
    },
    /// Generate letter demonstrations and augment them.
    Augment {
        /// Preset name or JSON grid file; the config's grid when omitted.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Fit a policy to a dataset directory, or to freshly augmented demos.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        grid: Option<String>,
        /// Where to write the model; `<out>/policy.json` by default.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate a trained policy on the four test sets.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Train the four policies and write the RMSE table.
    #[command(name = "reproduce-table1")]
    ReproduceTable1,
    /// RMSE over test rotations for each augmentation density.
    #[command(name = "density-sweep")]
    DensitySweep,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<symmlift::Error> for Failure {
    fn from(e: symmlift::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
        None => ExperimentConfig::default(),
    };
    if let Some(robot) = &cli.robot {
        if !robot.is_file() {
            return Err(Failure::Usage(format!("robot file {} not found", robot.display())));
        }
        cfg.robot = Some(robot.clone());
    }
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let out = cfg.out.clone();
    match &cli.command {
        Command::Verify { break_reflection } => {
            let report = verify(&cfg, *break_reflection)?;
            std::fs::create_dir_all(&out).map_err(symmlift::Error::from)?;
            symmlift::io::write_json(&out.join("verify.json"), &report)?;
            for c in &report.checks {
                println!(
                    "{:<24} {}  value {:.3e}  tolerance {:.1e}",
                    c.name,
                    if c.passed { "PASS" } else { "FAIL" },
                    c.value,
                    c.tolerance
                );
            }
            if let Some(c) = report.first_failure() {
                return Err(Failure::Runtime(format!("check `{}` failed", c.name)));
            }
        }
        Command::Augment { grid } => {
            let grid = resolve_grid(grid.as_deref().unwrap_or(&cfg.grid)).map_err(|e| Failure::Usage(e.to_string()))?;
            let ds = augment_command(&cfg, &grid, &out)?;
            println!("wrote {} augmented demonstrations to {}", ds.len(), out.join("augmented").display());
        }
        Command::Train { data, grid, model } => {
            let dataset = match data {
                Some(dir) => Dataset::read_dir(dir)?,
                None => {
                    let grid =
                        resolve_grid(grid.as_deref().unwrap_or(&cfg.grid)).map_err(|e| Failure::Usage(e.to_string()))?;
                    let s = setup(&cfg)?;
                    augment_dataset(&s.augmenter, &s.train, &grid)?
                }
            };
            let policy = fit(&dataset, &cfg.policy)?;
            let path = model.clone().unwrap_or_else(|| out.join("policy.json"));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(symmlift::Error::from)?;
            }
            policy.save(&path)?;
            println!(
                "trained on {} demonstrations ({} rows), training RMSE {:.4} rad/s -> {}",
                dataset.len(),
                dataset.rows(),
                policy.training_rmse,
                path.display()
            );
        }
        Command::Eval { model } => {
            let policy = PolicyModel::load(model)?;
            let s = setup(&cfg)?;
            let sets = build_test_sets(&s, &test_elements(&cfg))?;
            let name = model_name(model);
            let cells = evaluate_matrix(&[(name, &policy)], &sets, &s.model)?;
            let mut buf = Vec::new();
            write_cells_csv(&cells, &mut buf)?;
            std::fs::create_dir_all(&out).map_err(symmlift::Error::from)?;
            write_atomic(&out.join("eval.csv"), &buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
        }
        Command::ReproduceTable1 => {
            let r = reproduce_table1(&cfg, &out)?;
            let t = &r.trends;
            println!(
                "unaugmented ratio {:.2}, augmented ratio {:.2}, improvement {:.2} ({}) in {:.0} s",
                t.unaugmented_ratio,
                t.augmented_ratio,
                t.improvement,
                if t.passed { "trend reproduced" } else { "trend not reproduced" },
                r.elapsed_s
            );
        }
        Command::DensitySweep => {
            let r = density_sweep(&cfg, &out)?;
            for c in &r.curves {
                println!("{:>3}°  worst RMSE {:.4}", c.density_deg, c.worst);
            }
            println!(
                "worst case {} in {:.0} s",
                if r.monotone { "non-increasing" } else { "not monotone" },
                r.elapsed_s
            );
        }
    }
    Ok(())
}

fn model_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "policy".into(), |s| s.to_string_lossy().into_owned())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}
