//! Robot and symmetry description files, plus atomic output writing.
//!
//! Robot file:
//! ```json
//! {"chains": [{"base": [-0.4, 0.0], "base_angle": 1.5708, "links": [0.5, 0.5, 0.4, 0.3]}],
//!  "metric": "identity"}
//! ```
//! `metric` is either `"identity"` or a row-major nested array. `base_angle`
//! is optional and defaults to zero.
//!
//! Symmetry file:
//! ```json
//! {"type": "morphological", "joint_signs": [-1, -1, -1, -1], "task_reflection": [-1, 1]}
//! {"type": "so2", "centers": [[-0.6, 0.95], [0.6, 0.95]]}
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{ChainSpec, Metric, RobotModel};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricSpec {
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotFile {
    pub chains: Vec<ChainSpec>,
    #[serde(default = "identity_metric")]
    pub metric: MetricSpec,
}

fn identity_metric() -> MetricSpec {
    MetricSpec::Named("identity".into())
}

impl RobotFile {
    pub fn from_model(model: &RobotModel) -> Self {
        let m = model.metric_inverse();
        let metric = if *m == DMatrix::identity(m.nrows(), m.ncols()) {
            identity_metric()
        } else {
            let full = model.metric(&nalgebra::DVector::zeros(model.dim_q()));
            MetricSpec::Matrix(full.row_iter().map(|r| r.iter().copied().collect()).collect())
        };
        Self {
            chains: model.chains().to_vec(),
            metric,
        }
    }

    pub fn into_model(self) -> Result<RobotModel> {
        let metric = match self.metric {
            MetricSpec::Named(name) if name == "identity" => Metric::Identity,
            MetricSpec::Named(other) => {
                return Err(Error::InvalidModel(format!("unknown metric `{other}`")))
            }
            MetricSpec::Matrix(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::InvalidModel("metric must be square".into()));
                }
                Metric::Constant(DMatrix::from_row_iterator(
                    n,
                    n,
                    rows.into_iter().flatten(),
                ))
            }
        };
        RobotModel::new(self.chains, metric)
    }
}

pub fn load_robot(path: &Path) -> Result<RobotModel> {
    let file: RobotFile = serde_json::from_reader(std::fs::File::open(path)?)?;
    file.into_model()
}

pub fn save_robot(path: &Path, model: &RobotModel) -> Result<()> {
    write_json(path, &RobotFile::from_model(model))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetryKind {
    Morphological,
    So2,
    Scaling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryFile {
    #[serde(rename = "type")]
    pub kind: SymmetryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_signs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_reflection: Option<[f64; 2]>,
    /// Per-chain centers of the task-space action; origin when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<[f64; 2]>>,
}

pub fn load_symmetry(path: &Path) -> Result<SymmetryFile> {
    Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robot_file_parses_both_metric_forms() {
        let text = r#"{"chains": [{"base": [0, 0], "links": [1, 1, 1]}], "metric": "identity"}"#;
        let m = serde_json::from_str::<RobotFile>(text).unwrap().into_model().unwrap();
        assert_eq!(m.dim_q(), 3);
        assert_eq!(m.chains()[0].base_angle, 0.0);

        let text = r#"{"chains": [{"base": [0, 0], "base_angle": 1.0, "links": [1, 1]}],
                       "metric": [[2, 0], [0, 1]]}"#;
        let m = serde_json::from_str::<RobotFile>(text).unwrap().into_model().unwrap();
        assert!((m.metric_inverse()[(0, 0)] - 0.5).abs() < 1e-15);

        let text = r#"{"chains": [{"base": [0, 0], "links": [1, 1]}], "metric": "kinetic"}"#;
        assert!(serde_json::from_str::<RobotFile>(text).unwrap().into_model().is_err());
    }

    #[test]
    fn symmetry_file_parses() {
        let s: SymmetryFile = serde_json::from_str(
            r#"{"type": "morphological", "joint_signs": [-1, -1], "task_reflection": [-1, 1]}"#,
        )
        .unwrap();
        assert_eq!(s.kind, SymmetryKind::Morphological);
        assert_eq!(s.task_reflection, Some([-1.0, 1.0]));
        let s: SymmetryFile = serde_json::from_str(r#"{"type": "scaling"}"#).unwrap();
        assert_eq!(s.kind, SymmetryKind::Scaling);
        assert!(s.centers.is_none());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        let leftovers: Vec<_> = std::fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
