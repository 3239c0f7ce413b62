use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use super::{feature_scale, Feature, FEATURE_DIM, OUTPUTS};
use crate::error::{Error, Result};

/// Training pairs `(z, y)` with `y` in physical units (N, N·m).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub features: Vec<Feature>,
    pub targets: Vec<Vector6<f64>>,
    /// Standard deviation of the label noise that was injected.
    pub noise_std: f64,
    /// Divide targets by the DIST_SCALE feature before fitting.
    pub normalize_by_dist: bool,
    pub provenance: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    noise_std: f64,
    normalize_by_dist: bool,
    rows: usize,
    provenance: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn push(&mut self, z: Feature, y: Vector6<f64>) {
        self.features.push(z);
        self.targets.push(y);
    }

    pub fn extend(&mut self, other: Dataset) {
        self.features.extend(other.features);
        self.targets.extend(other.targets);
        self.provenance.extend(other.provenance);
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.targets.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} target rows",
                self.features.len(),
                self.targets.len()
            )));
        }
        if self.features.is_empty() {
            return Err(Error::Shape("dataset is empty".into()));
        }
        let finite = self.features.iter().all(|z| z.iter().all(|c| c.is_finite()))
            && self.targets.iter().all(|y| y.iter().all(|c| c.is_finite()));
        if !finite {
            return Err(Error::Shape("dataset contains non-finite entries".into()));
        }
        Ok(())
    }

    /// Targets as seen by the regressors.
    pub fn model_targets(&self) -> Vec<Vector6<f64>> {
        self.features
            .iter()
            .zip(&self.targets)
            .map(|(z, y)| {
                let s = feature_scale(z);
                if self.normalize_by_dist && s > 0.0 {
                    y / s
                } else {
                    *y
                }
            })
            .collect()
    }

    /// Rows `0, stride, 2·stride, …`; nested for strides that divide each other.
    pub fn every_nth(&self, stride: usize) -> Dataset {
        let stride = stride.max(1);
        Dataset {
            features: self.features.iter().step_by(stride).copied().collect(),
            targets: self.targets.iter().step_by(stride).copied().collect(),
            noise_std: self.noise_std,
            normalize_by_dist: self.normalize_by_dist,
            provenance: self.provenance.clone(),
        }
    }

    /// `count` rows spread evenly over the dataset, in order.
    pub fn spread_subset(&self, count: usize) -> Dataset {
        let n = self.len();
        if count >= n {
            return self.clone();
        }
        let idx: Vec<usize> = (0..count).map(|i| i * n / count).collect();
        Dataset {
            features: idx.iter().map(|&i| self.features[i]).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            noise_std: self.noise_std,
            normalize_by_dist: self.normalize_by_dist,
            provenance: self.provenance.clone(),
        }
    }

    pub fn csv_header() -> String {
        let z = (0..FEATURE_DIM).map(|i| format!("z_{i}"));
        let y = (0..OUTPUTS).map(|i| format!("y_{i}"));
        z.chain(y).collect::<Vec<_>>().join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header();
        out.push('\n');
        for (z, y) in self.features.iter().zip(&self.targets) {
            let mut first = true;
            for c in z.iter().chain(y.iter()) {
                if !first {
                    out.push(',');
                }
                first = false;
                write!(out, "{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .map(|(_, l)| l.trim())
            .ok_or_else(|| parse_err(path, 1, "empty file"))?;
        if header != Self::csv_header() {
            return Err(parse_err(path, 1, "unexpected header, want z_0..z_19,y_0..y_5"));
        }
        let mut data = Dataset::default();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let values = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(path, i + 1, &e.to_string()))?;
            if values.len() != FEATURE_DIM + OUTPUTS {
                return Err(parse_err(
                    path,
                    i + 1,
                    &format!("expected {} fields, got {}", FEATURE_DIM + OUTPUTS, values.len()),
                ));
            }
            data.push(
                Feature::from_column_slice(&values[..FEATURE_DIM]),
                Vector6::from_column_slice(&values[FEATURE_DIM..]),
            );
        }
        Ok(data)
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("meta.json")
    }

    /// Writes the CSV plus a `.meta.json` sidecar with noise level,
    /// normalization flag and provenance.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let meta = Sidecar {
            noise_std: self.noise_std,
            normalize_by_dist: self.normalize_by_dist,
            rows: self.len(),
            provenance: self.provenance.clone(),
        };
        let side = Self::sidecar_path(path);
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&side, e))?;
        std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut data = Self::from_csv(&text, path)?;
        let side = Self::sidecar_path(path);
        if side.exists() {
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let meta: Sidecar = serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
            data.noise_std = meta.noise_std;
            data.normalize_by_dist = meta.normalize_by_dist;
            data.provenance = meta.provenance;
        }
        Ok(data)
    }
}

fn parse_err(path: &Path, line: usize, message: &str) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}
