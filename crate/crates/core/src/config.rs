//! Run configuration: one JSON document that pins every knob of a training
//! run. Validated before any work; echoed into every artifact's metadata;
//! hashed so artifacts can be matched to the run that produced them.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SyntheticName;
use crate::error::{Error, Result};
use crate::interpolant::InterpolantKind;
use crate::loss::{Beta, Parameterization};

/// Where training data comes from: a named synthetic generator or a CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    Synthetic { name: SyntheticName, n: usize },
    Csv { path: String },
}

/// Coupling selection. `beta = "inf"` is the independent baseline (no
/// encoder); a finite positive `beta` trains a Gaussian encoder jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub beta: Beta,
    /// Encoder hidden widths; defaults to a quarter of the generator's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_hidden: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_interpolant")]
    pub interpolant: InterpolantKind,
    #[serde(default = "default_parameterization")]
    pub parameterization: Parameterization,
    #[serde(default = "default_beta")]
    pub beta: Beta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_hidden: Option<Vec<usize>>,
    #[serde(default = "default_hidden")]
    pub hidden_sizes: Vec<usize>,
    #[serde(default = "default_n_freqs")]
    pub n_freqs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: u64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: u64,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_ema_decay")]
    pub ema_decay: f64,
    #[serde(default = "default_ema_start")]
    pub ema_start: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    /// Checkpoint cadence in iterations; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
}

fn default_true() -> bool {
    true
}
fn default_interpolant() -> InterpolantKind {
    InterpolantKind::Linear
}
fn default_parameterization() -> Parameterization {
    Parameterization::Velocity
}
fn default_beta() -> Beta {
    Beta::Infinite
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64, 64]
}
fn default_n_freqs() -> usize {
    8
}
fn default_lr() -> f64 {
    3e-4
}
fn default_warmup() -> u64 {
    500
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    128
}
fn default_iterations() -> u64 {
    6000
}
fn default_t_min() -> f64 {
    1e-5
}
fn default_t_max() -> f64 {
    1.0
}
fn default_ema_decay() -> f64 {
    // Long-horizon runs want 0.9999; the desk-scale default keeps the
    // averaging window inside a few-thousand-iteration run.
    0.999
}
fn default_ema_start() -> u64 {
    300
}
fn default_out_dir() -> String {
    "out".into()
}
fn default_log_every() -> u64 {
    100
}

impl RunConfig {
    /// Minimal config for a synthetic dataset; everything else defaulted.
    pub fn synthetic(name: SyntheticName, n: usize) -> Self {
        serde_json::from_value(serde_json::json!({
            "dataset": {"name": name, "n": n},
        }))
        .expect("default config is well-formed")
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSpec::Synthetic { n, .. } => {
                if *n == 0 {
                    return Err(Error::Config("dataset.n: must be >= 1".into()));
                }
            }
            DatasetSpec::Csv { path } => {
                if path.is_empty() {
                    return Err(Error::Config("dataset.path: must be non-empty".into()));
                }
            }
        }
        self.interpolant.validate()?;
        self.beta.validate()?;
        if self.hidden_sizes.is_empty() || self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::Config(
                "hidden_sizes: need at least one nonzero width".into(),
            ));
        }
        if let Some(hidden) = &self.encoder_hidden {
            if hidden.is_empty() || hidden.iter().any(|&h| h == 0) {
                return Err(Error::Config(
                    "encoder_hidden: need at least one nonzero width".into(),
                ));
            }
        }
        if self.n_freqs == 0 {
            return Err(Error::Config("n_freqs: must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr: must be positive, got {}", self.lr)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name}: must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!(
                "adam_eps: must be positive, got {}",
                self.adam_eps
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size: must be >= 1".into()));
        }
        crate::loss::validate_time_range(self.t_min, self.t_max)?;
        if self.parameterization == Parameterization::XPrediction && self.t_min <= 0.0 {
            return Err(Error::Config(
                "t_min: must be > 0 with the x-prediction parameterization".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!(
                "ema_decay: must be in [0, 1), got {}",
                self.ema_decay
            )));
        }
        if let InterpolantKind::VarPreserving { .. } = self.interpolant {
            if self.beta.is_finite() {
                return Err(Error::Config(
                    "beta: learned couplings require the linear interpolant".into(),
                ));
            }
            if self.parameterization != Parameterization::XPrediction {
                return Err(Error::Config(
                    "parameterization: the vp interpolant trains with x_prediction".into(),
                ));
            }
        }
        Ok(())
    }

    /// Generator layer sizes for data of dimension `data_dim`.
    pub fn generator_layer_sizes(&self, data_dim: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(data_dim + 2 * self.n_freqs);
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes.push(data_dim);
        sizes
    }

    /// Encoder hidden widths: explicit when configured, otherwise a quarter
    /// of each generator width.
    pub fn encoder_hidden_sizes(&self) -> Vec<usize> {
        match &self.encoder_hidden {
            Some(h) => h.clone(),
            None => self.hidden_sizes.iter().map(|&w| (w / 4).max(1)).collect(),
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        sha256_hex(json.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_hash_stably() {
        let c = RunConfig::synthetic(SyntheticName::Gaussians8, 8000);
        c.validate().unwrap();
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.t_min, 1e-5);
        assert_eq!(c.adam_beta1, 0.9);
        assert_eq!(c.adam_beta2, 0.999);
        assert_eq!(c.adam_eps, 1e-8);
        assert_eq!(c.hash(), c.clone().hash());
        let mut other = c.clone();
        other.seed = 1;
        assert_ne!(c.hash(), other.hash());
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::synthetic(SyntheticName::Moons, 1000);
        let json = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn parses_flat_interface_fields() {
        let json = r#"{
            "dataset": {"name": "gaussians8", "n": 4000},
            "interpolant": {"kind": "linear"},
            "parameterization": "velocity",
            "beta": 3.0,
            "t_min": 1e-5, "t_max": 1.0,
            "batch_size": 64, "iterations": 100,
            "lr": 1e-3, "warmup_steps": 10,
            "ema_decay": 0.99, "ema_start": 5,
            "seed": 7
        }"#;
        let c: RunConfig = serde_json::from_str(json).unwrap();
        c.validate().unwrap();
        assert_eq!(c.beta, Beta::Finite(3.0));
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn rejects_unknown_fields() {
        let json = r#"{"dataset": {"name": "moons", "n": 10}, "learning_rate": 0.1}"#;
        assert!(serde_json::from_str::<RunConfig>(json).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = RunConfig::synthetic(SyntheticName::Point, 10);
        c.lr = -1.0;
        match c.validate() {
            Err(Error::Config(msg)) => assert!(msg.starts_with("lr:"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn vp_interpolant_constraints() {
        let mut c = RunConfig::synthetic(SyntheticName::Gaussians8, 100);
        c.interpolant = InterpolantKind::var_preserving();
        c.parameterization = Parameterization::XPrediction;
        c.validate().unwrap();
        c.beta = Beta::Finite(1.0);
        assert!(c.validate().is_err());
        c.beta = Beta::Infinite;
        c.parameterization = Parameterization::Velocity;
        assert!(c.validate().is_err());
    }

    #[test]
    fn encoder_hidden_defaults_to_quarter_width() {
        let c = RunConfig::synthetic(SyntheticName::Gaussians8, 100);
        assert_eq!(c.encoder_hidden_sizes(), vec![16, 16, 16]);
    }

    #[test]
    fn csv_spec_parses() {
        let json = r#"{"dataset": {"path": "data/points.csv"}}"#;
        let c: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(
            c.dataset,
            DatasetSpec::Csv {
                path: "data/points.csv".into()
            }
        );
    }
}
