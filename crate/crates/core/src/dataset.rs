//! Demonstrations, datasets and their on-disk formats.
//!
//! A demonstration CSV has the header
//! `t,q_0..q_{n-1},dq_0..dq_{n-1},theta,lambda,sigma`, one row per sample. A
//! dataset directory holds one such file per demonstration plus a
//! `manifest.json` recording where each demonstration came from.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Symmetric variant a demonstration realizes: rotation angle, scale factor
/// and reflection index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector {
    pub theta: f64,
    pub lambda: f64,
    pub sigma: i8,
}

impl ConditionVector {
    pub fn new(theta: f64, lambda: f64, sigma: i8) -> Result<Self> {
        let c = Self { theta, lambda, sigma };
        c.validate()?;
        Ok(c)
    }

    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            lambda: 1.0,
            sigma: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        const SLACK: f64 = 1e-12;
        if !(self.theta.abs() <= std::f64::consts::PI + SLACK) {
            return Err(Error::InvalidParameter(format!(
                "theta {} outside [-pi, pi]",
                self.theta
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda {} must be positive",
                self.lambda
            )));
        }
        if self.sigma != 1 && self.sigma != -1 {
            return Err(Error::InvalidParameter(format!(
                "sigma {} must be +1 or -1",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Inverse element. The reflection reverses the sense of rotation, so
    /// `(θ, λ, −1)` is inverted by `(θ, 1/λ, −1)` and `(θ, λ, +1)` by
    /// `(−θ, 1/λ, +1)`.
    pub fn inverse(&self) -> Self {
        Self {
            theta: if self.sigma < 0 { self.theta } else { -self.theta },
            lambda: 1.0 / self.lambda,
            sigma: self.sigma,
        }
    }
}

/// Time-stamped joint trajectory with velocities, all under one condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub times: Vec<f64>,
    pub q: Vec<DVector<f64>>,
    pub qdot: Vec<DVector<f64>>,
    pub condition: ConditionVector,
}

impl Demonstration {
    pub fn new(
        times: Vec<f64>,
        q: Vec<DVector<f64>>,
        qdot: Vec<DVector<f64>>,
        condition: ConditionVector,
    ) -> Result<Self> {
        let d = Self {
            times,
            q,
            qdot,
            condition,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim_q(&self) -> usize {
        self.q.first().map_or(0, |q| q.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n == 0 {
            return Err(Error::InvalidDataset("empty demonstration".into()));
        }
        if self.q.len() != n || self.qdot.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} timestamps but {} configurations and {} velocities",
                n,
                self.q.len(),
                self.qdot.len()
            )));
        }
        let dim = self.dim_q();
        if self.q.iter().chain(&self.qdot).any(|v| v.len() != dim) {
            return Err(Error::InvalidDataset("inconsistent joint dimension".into()));
        }
        if self.q.iter().chain(&self.qdot).any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidDataset("non-finite entries".into()));
        }
        if n > 1 {
            let dt = self.times[1] - self.times[0];
            for w in self.times.windows(2) {
                if !(w[1] > w[0]) || ((w[1] - w[0]) - dt).abs() > 1e-9 {
                    return Err(Error::InvalidDataset(
                        "timestamps must be strictly increasing and uniform".into(),
                    ));
                }
            }
        }
        self.condition.validate()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let n = self.dim_q();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("q_{i}")));
        header.extend((0..n).map(|i| format!("dq_{i}")));
        header.extend(["theta", "lambda", "sigma"].map(String::from));
        wtr.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = Vec::with_capacity(2 * n + 4);
            rec.push(fmt_f64(self.times[k]));
            rec.extend(self.q[k].iter().map(|v| fmt_f64(*v)));
            rec.extend(self.qdot[k].iter().map(|v| fmt_f64(*v)));
            rec.push(fmt_f64(self.condition.theta));
            rec.push(fmt_f64(self.condition.lambda));
            rec.push(self.condition.sigma.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let cols = header.len();
        if cols < 6 || (cols - 4) % 2 != 0 || &header[0] != "t" {
            return Err(Error::InvalidDataset(format!(
                "unexpected header with {cols} columns"
            )));
        }
        let n = (cols - 4) / 2;
        for i in 0..n {
            if header[1 + i] != format!("q_{i}") || header[1 + n + i] != format!("dq_{i}") {
                return Err(Error::InvalidDataset("malformed joint columns".into()));
            }
        }
        if &header[cols - 3] != "theta" || &header[cols - 2] != "lambda" || &header[cols - 1] != "sigma" {
            return Err(Error::InvalidDataset("missing condition columns".into()));
        }

        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidDataset(format!("bad number `{s}`: {e}")))
        };
        let mut times = Vec::new();
        let mut q = Vec::new();
        let mut qdot = Vec::new();
        let mut condition: Option<ConditionVector> = None;
        for rec in rdr.records() {
            let rec = rec?;
            times.push(parse(&rec[0])?);
            q.push(DVector::from_iterator(n, (1..=n).map(|i| parse(&rec[i]).unwrap_or(f64::NAN))));
            qdot.push(DVector::from_iterator(
                n,
                (n + 1..=2 * n).map(|i| parse(&rec[i]).unwrap_or(f64::NAN)),
            ));
            let sigma = parse(&rec[cols - 1])?;
            let c = ConditionVector {
                theta: parse(&rec[cols - 3])?,
                lambda: parse(&rec[cols - 2])?,
                sigma: if sigma > 0.0 { 1 } else { -1 },
            };
            match condition {
                None => condition = Some(c),
                Some(prev) if prev != c => {
                    return Err(Error::InvalidDataset(
                        "rows of one demonstration must share a condition".into(),
                    ))
                }
                _ => {}
            }
        }
        let condition =
            condition.ok_or_else(|| Error::InvalidDataset("empty demonstration".into()))?;
        Demonstration::new(times, q, qdot, condition)
    }
}

/// Shortest representation that round-trips exactly.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Where a demonstration in a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original {
        index: usize,
    },
    /// `source` indexes the original demonstration; `element` is the composed
    /// group element applied (scaling, then rotation, then reflection).
    Augmented {
        source: usize,
        element: ConditionVector,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub demos: Vec<Demonstration>,
    pub provenance: Vec<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dim_q: usize,
    demonstrations: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    provenance: Provenance,
}

impl Dataset {
    /// Wraps original (unaugmented) demonstrations.
    pub fn from_originals(demos: Vec<Demonstration>) -> Result<Self> {
        let provenance = (0..demos.len()).map(|index| Provenance::Original { index }).collect();
        let d = Self { demos, provenance };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.demos.iter().map(Demonstration::len).sum()
    }

    pub fn dim_q(&self) -> usize {
        self.demos.first().map_or(0, Demonstration::dim_q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.demos.len() != self.provenance.len() {
            return Err(Error::InvalidDataset(
                "provenance count differs from demonstration count".into(),
            ));
        }
        let dim = self.dim_q();
        for d in &self.demos {
            d.validate()?;
            if d.dim_q() != dim {
                return Err(Error::InvalidDataset("inconsistent joint dimension".into()));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, demo: Demonstration, provenance: Provenance) {
        self.demos.push(demo);
        self.provenance.push(provenance);
    }

    /// Writes `demo_XXXX.csv` files plus `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.len());
        for (i, (d, p)) in self.demos.iter().zip(&self.provenance).enumerate() {
            let file = format!("demo_{i:04}.csv");
            let mut buf = Vec::new();
            d.write_csv(&mut buf)?;
            write_atomic(&dir.join(&file), &buf)?;
            entries.push(ManifestEntry {
                file,
                provenance: p.clone(),
            });
        }
        let manifest = Manifest {
            dim_q: self.dim_q(),
            demonstrations: entries,
        };
        write_atomic(
            &dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_reader(std::fs::File::open(dir.join("manifest.json"))?)?;
        let mut ds = Dataset::default();
        for e in manifest.demonstrations {
            let demo = Demonstration::read_csv(std::fs::File::open(dir.join(&e.file))?)?;
            ds.push(demo, e.provenance);
        }
        ds.validate()?;
        if !ds.is_empty() && ds.dim_q() != manifest.dim_q {
            return Err(Error::InvalidDataset("manifest dim_q mismatch".into()));
        }
        Ok(ds)
    }
}
