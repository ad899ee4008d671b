use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Constraints, ExperimentKind};
use crate::error::{Error, Result};

/// Raw observations. Regression responses, density samples and time series
/// are scalar; autoregressive paths store `X_0, ..., X_n`; covariance data
/// are vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Observations {
    Scalar(Vec<f64>),
    Vectors(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub obs: Observations,
}

/// JSON sidecar written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub kind: ExperimentKind,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub constraints: Constraints,
}

impl Dataset {
    pub fn new(kind: ExperimentKind, seed: u64, obs: Observations) -> Self {
        Dataset { kind, seed, obs }
    }

    /// Sample size. An autoregressive path of length `n + 1` has size `n`.
    pub fn n(&self) -> usize {
        match &self.obs {
            Observations::Scalar(v) if self.kind == ExperimentKind::GaussAutoReg => {
                v.len().saturating_sub(1)
            }
            Observations::Scalar(v) => v.len(),
            Observations::Vectors(v) => v.len(),
        }
    }

    pub fn scalars(&self) -> Result<&[f64]> {
        match &self.obs {
            Observations::Scalar(v) => Ok(v),
            Observations::Vectors(_) => Err(Error::KindMismatch {
                expected: "scalar observations".into(),
                found: "vector observations".into(),
            }),
        }
    }

    pub fn meta(&self, constraints: &Constraints) -> DatasetMeta {
        DatasetMeta {
            kind: self.kind,
            n: self.n(),
            seed: self.seed,
            constraints: *constraints,
        }
    }

    /// Write `path` as CSV and `path` with extension `.json` as the sidecar.
    pub fn write(&self, path: &Path, constraints: &Constraints) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        match &self.obs {
            Observations::Scalar(v) => {
                w.write_record(["i", "value"]).map_err(csv_err)?;
                for (i, x) in v.iter().enumerate() {
                    w.write_record([i.to_string(), format!("{x:.17e}")])
                        .map_err(csv_err)?;
                }
            }
            Observations::Vectors(v) => {
                let p = v.first().map_or(0, |r| r.len());
                let mut header = vec!["i".to_string()];
                header.extend((1..=p).map(|j| format!("x{j}")));
                w.write_record(&header).map_err(csv_err)?;
                for (i, row) in v.iter().enumerate() {
                    let mut rec = vec![i.to_string()];
                    rec.extend(row.iter().map(|x| format!("{x:.17e}")));
                    w.write_record(&rec).map_err(csv_err)?;
                }
            }
        }
        w.flush()?;
        let meta = serde_json::to_string_pretty(&self.meta(constraints))?;
        std::fs::write(path.with_extension("json"), meta)?;
        Ok(())
    }

    /// Read a dataset written by [`Dataset::write`].
    pub fn read(path: &Path) -> Result<Self> {
        let meta: DatasetMeta = serde_json::from_reader(BufReader::new(File::open(
            path.with_extension("json"),
        )?))?;
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let width = r.headers().map_err(|e| Error::Io(e.to_string()))?.len();
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                line: line + 2,
                msg: e.to_string(),
            })?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: line + 2,
                        msg: format!("{s:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(vals);
        }
        let obs = if meta.kind == ExperimentKind::CovarianceEst {
            Observations::Vectors(rows)
        } else {
            if width != 2 {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected 2 columns, found {width}"),
                });
            }
            Observations::Scalar(rows.into_iter().map(|r| r[0]).collect())
        };
        let data = Dataset::new(meta.kind, meta.seed, obs);
        if data.n() != meta.n {
            return Err(Error::LengthMismatch {
                left: data.n(),
                right: meta.n,
            });
        }
        Ok(data)
    }
}
