//! Synthetic 2D datasets, CSV ingestion, and normalization.
//!
//! Generator parameters are fixed and documented on [`make_synthetic`];
//! sampling is bitwise reproducible given the RNG state. Normalization is
//! per-dimension zero mean and unit *population* standard deviation, and
//! the transform is kept on the dataset so exported samples can be mapped
//! back to the original coordinates.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Invertible per-dimension affine transform `x -> (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// A finite set of points with uniform dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<Vec<f64>>,
    pub name: String,
    /// Present when the points have been normalized; holds the transform
    /// that was applied.
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, points: Vec<Vec<f64>>) -> Self {
        Self {
            points,
            name: name.into(),
            normalization: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Map a point from normalized space back to original coordinates.
    /// Identity when the dataset carries no transform.
    pub fn denormalize_point(&self, p: &[f64]) -> Vec<f64> {
        match &self.normalization {
            None => p.to_vec(),
            Some(n) => p
                .iter()
                .zip(&n.scale)
                .zip(&n.mean)
                .map(|((v, s), m)| v * s + m)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticName {
    Gaussians8,
    Moons,
    Checkerboard,
    Spiral,
    Point,
}

impl fmt::Display for SyntheticName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SyntheticName::Gaussians8 => "gaussians8",
            SyntheticName::Moons => "moons",
            SyntheticName::Checkerboard => "checkerboard",
            SyntheticName::Spiral => "spiral",
            SyntheticName::Point => "point",
        };
        f.write_str(s)
    }
}

impl FromStr for SyntheticName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussians8" => Ok(SyntheticName::Gaussians8),
            "moons" => Ok(SyntheticName::Moons),
            "checkerboard" => Ok(SyntheticName::Checkerboard),
            "spiral" => Ok(SyntheticName::Spiral),
            "point" => Ok(SyntheticName::Point),
            other => Err(Error::Config(format!(
                "dataset name: unknown generator {other:?} \
                 (expected gaussians8|moons|checkerboard|spiral|point)"
            ))),
        }
    }
}

/// Mode centers of the `gaussians8` generator: 8 points on a circle of
/// radius 4, starting at angle 0.
pub fn gaussians8_modes() -> Vec<Vec<f64>> {
    (0..8)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
            vec![4.0 * angle.cos(), 4.0 * angle.sin()]
        })
        .collect()
}

/// Draw `n` points from a named 2D generator.
///
/// - `gaussians8`: equal mixture over [`gaussians8_modes`], std 0.1
/// - `moons`: two interleaved half-circles of radius 1, noise std 0.05
/// - `checkerboard`: alternating unit squares tiling `[-4, 4]^2`
/// - `spiral`: one noisy arm, radius growing linearly over 1.5 turns
/// - `point`: `n` copies of the origin
pub fn make_synthetic<R: Rng>(name: SyntheticName, n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("dataset n: must be >= 1".into()));
    }
    let points = match name {
        SyntheticName::Gaussians8 => {
            let modes = gaussians8_modes();
            (0..n)
                .map(|_| {
                    let m = &modes[rng.gen_range(0..8)];
                    vec![
                        m[0] + 0.1 * rng.sample::<f64, _>(StandardNormal),
                        m[1] + 0.1 * rng.sample::<f64, _>(StandardNormal),
                    ]
                })
                .collect()
        }
        SyntheticName::Moons => (0..n)
            .map(|i| {
                let theta = rng.gen_range(0.0..std::f64::consts::PI);
                let (mut px, mut py) = if i % 2 == 0 {
                    (theta.cos(), theta.sin())
                } else {
                    (1.0 - theta.cos(), 0.5 - theta.sin())
                };
                px += 0.05 * rng.sample::<f64, _>(StandardNormal);
                py += 0.05 * rng.sample::<f64, _>(StandardNormal);
                vec![px, py]
            })
            .collect(),
        SyntheticName::Checkerboard => (0..n)
            .map(|_| {
                let x1: f64 = rng.gen_range(-2.0..2.0);
                let shift = rng.gen_range(0..2) as f64 * 2.0;
                let x2 = rng.gen_range(0.0..1.0) - shift + (x1.floor().rem_euclid(2.0));
                vec![2.0 * x1, 2.0 * x2]
            })
            .collect(),
        SyntheticName::Spiral => (0..n)
            .map(|_| {
                let u: f64 = rng.gen_range(0.0f64..1.0);
                let theta = 3.0 * std::f64::consts::PI * u.sqrt();
                let r = 4.0 * theta / (3.0 * std::f64::consts::PI);
                vec![
                    r * theta.cos() + 0.05 * rng.sample::<f64, _>(StandardNormal),
                    r * theta.sin() + 0.05 * rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect(),
        SyntheticName::Point => vec![vec![0.0, 0.0]; n],
    };
    Ok(Dataset::new(name.to_string(), points))
}

/// Parse a CSV file of decimal rows into a dataset.
///
/// A single leading header row is skipped when its first cell is not a
/// number. Ragged rows and non-numeric cells are parse errors carrying the
/// 1-based line number.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(&path)?;
    let name = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            cells.iter().map(|c| c.trim().parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if idx == 0 => continue, // header row
            Err(_) => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "non-numeric cell".into(),
                })
            }
        };
        if let Some(w) = width {
            if row.len() != w {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {w} columns, found {}", row.len()),
                });
            }
        } else {
            width = Some(row.len());
        }
        points.push(row);
    }
    if points.is_empty() {
        return Err(Error::Config(format!(
            "csv {}: no data rows",
            path.as_ref().display()
        )));
    }
    Ok(Dataset::new(name, points))
}

/// Shift to zero mean and scale to unit population standard deviation per
/// dimension, recording the transform on the result.
pub fn normalize(dataset: &Dataset) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::Config("normalize: dataset is empty".into()));
    }
    let d = dataset.dim();
    let n = dataset.len() as f64;
    let mut mean = vec![0.0; d];
    for p in &dataset.points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for p in &dataset.points {
        for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let mut scale = Vec::with_capacity(d);
    for (axis, v) in var.iter().enumerate() {
        if *v <= 0.0 {
            return Err(Error::Config(format!(
                "normalize: dimension {axis} has zero variance"
            )));
        }
        scale.push(v.sqrt());
    }
    let points = dataset
        .points
        .iter()
        .map(|p| {
            p.iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();
    Ok(Dataset {
        points,
        name: dataset.name.clone(),
        normalization: Some(Normalization { mean, scale }),
    })
}

/// Invert [`normalize`] using the transform stored on the dataset.
pub fn denormalize(dataset: &Dataset) -> Dataset {
    let points = dataset
        .points
        .iter()
        .map(|p| dataset.denormalize_point(p))
        .collect();
    Dataset {
        points,
        name: dataset.name.clone(),
        normalization: None,
    }
}

/// Write points as comma-separated rows (no header).
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for p in &dataset.points {
        let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
