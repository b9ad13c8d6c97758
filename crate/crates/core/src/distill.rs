//! One-step distillation: sample `(z, x_hat)` pairs from a teacher ODE and
//! fit a time-free student network to the map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::prior_samples;
use crate::error::{Error, Result};
use crate::net::{self, AdamState, EmaState, LossKind, NetworkParams};
use crate::rng;
use crate::solver::{self, SolverConfig, VectorField};

/// Latent inputs paired with the teacher's terminal states, plus the
/// provenance needed to re-verify them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub z_inputs: Vec<Vec<f64>>,
    pub x_outputs: Vec<Vec<f64>>,
    pub teacher_solver: SolverConfig,
    pub teacher_checkpoint_hash: String,
    pub total_teacher_nfe: usize,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.z_inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.z_inputs.first().map_or(0, Vec::len)
    }

    /// Split into train and test portions; the first `train_frac` of the
    /// pairs train, the rest test. Pairs are i.i.d. by construction, so a
    /// contiguous split is unbiased and deterministic.
    pub fn split(&self, train_frac: f64) -> Result<(PairSet, PairSet)> {
        if !(0.0 < train_frac && train_frac < 1.0) {
            return Err(Error::Config(format!(
                "train_frac: must lie in (0, 1), got {train_frac}"
            )));
        }
        let cut = ((self.len() as f64) * train_frac).ceil() as usize;
        if cut == 0 || cut >= self.len() {
            return Err(Error::Config(format!(
                "train_frac {train_frac} leaves an empty split for {} pairs",
                self.len()
            )));
        }
        let take = |lo: usize, hi: usize| PairSet {
            z_inputs: self.z_inputs[lo..hi].to_vec(),
            x_outputs: self.x_outputs[lo..hi].to_vec(),
            teacher_solver: self.teacher_solver,
            teacher_checkpoint_hash: self.teacher_checkpoint_hash.clone(),
            total_teacher_nfe: self.total_teacher_nfe,
        };
        Ok((take(0, cut), take(cut, self.len())))
    }
}

/// Solve the teacher ODE from `n_pairs` fresh prior latents.
///
/// Pairs whose solve fails numerically are dropped and counted; more than
/// 1% drops aborts with an error.
pub fn generate_pairs<F: VectorField>(
    teacher: &F,
    dim: usize,
    n_pairs: usize,
    solver_config: &SolverConfig,
    teacher_checkpoint_hash: &str,
    seed: u64,
) -> Result<PairSet> {
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs: must be >= 1".into()));
    }
    solver_config.validate()?;
    let mut z_inputs = Vec::with_capacity(n_pairs);
    let mut x_outputs = Vec::with_capacity(n_pairs);
    let mut total_nfe = 0usize;
    let mut dropped = 0usize;
    for i in 0..n_pairs {
        let mut r = rng::stream(seed, i as u64);
        let z = prior_samples(dim, 1, &mut r).pop().unwrap();
        match solver::solve(teacher, &z, solver_config) {
            Ok(traj) => {
                total_nfe += traj.nfe;
                x_outputs.push(traj.terminal().to_vec());
                z_inputs.push(z);
            }
            Err(e) if e.is_numerical() => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if dropped as f64 > 0.01 * n_pairs as f64 {
        return Err(Error::NonFinite {
            context: format!("pair generation: {dropped} of {n_pairs} teacher solves failed"),
        });
    }
    Ok(PairSet {
        z_inputs,
        x_outputs,
        teacher_solver: *solver_config,
        teacher_checkpoint_hash: teacher_checkpoint_hash.to_string(),
        total_teacher_nfe: total_nfe,
    })
}

/// Student training configuration. Empty `hidden` gives a purely linear
/// (affine) student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    #[serde(default = "default_student_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_student_iterations")]
    pub iterations: u64,
    #[serde(default = "default_student_batch")]
    pub batch_size: usize,
    #[serde(default = "default_student_lr")]
    pub lr: f64,
    #[serde(default = "default_adam_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_adam_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_student_ema")]
    pub ema_decay: f64,
    #[serde(default)]
    pub ema_start: u64,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_student_hidden() -> Vec<usize> {
    vec![64, 64, 64]
}
fn default_student_iterations() -> u64 {
    3000
}
fn default_student_batch() -> usize {
    128
}
fn default_student_lr() -> f64 {
    1e-3
}
fn default_adam_beta1() -> f64 {
    0.9
}
fn default_adam_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_student_ema() -> f64 {
    0.999
}
fn default_train_frac() -> f64 {
    0.9
}

impl Default for StudentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are well-formed")
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("student hidden: widths must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("student batch_size: must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "student lr: must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!(
                "student ema_decay: must be in [0, 1), got {}",
                self.ema_decay
            )));
        }
        if !(0.0 < self.train_frac && self.train_frac < 1.0) {
            return Err(Error::Config(format!(
                "student train_frac: must lie in (0, 1), got {}",
                self.train_frac
            )));
        }
        Ok(())
    }
}

/// Fit a time-free student `G(z) ~ x_hat` on training pairs with mean
/// squared error. Returns the EMA parameters.
pub fn train_student(train_pairs: &PairSet, config: &StudentConfig) -> Result<NetworkParams> {
    config.validate()?;
    if train_pairs.is_empty() {
        return Err(Error::Config("train pairs: must be non-empty".into()));
    }
    let dim = train_pairs.dim();
    let mut sizes = Vec::with_capacity(config.hidden.len() + 2);
    sizes.push(dim);
    sizes.extend_from_slice(&config.hidden);
    sizes.push(dim);
    let mut student = NetworkParams::init_time_free(&sizes, rng::derive(config.seed, 0x57))?;
    let mut adam = AdamState::new(
        &student,
        config.lr,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    )?;
    let mut ema = EmaState::new(&student, config.ema_decay, config.ema_start)?;
    let n = train_pairs.len();
    for iter in 0..config.iterations {
        let mut br = rng::stream(rng::derive(config.seed, 0xBA7C4), iter);
        let mut inputs = Vec::with_capacity(config.batch_size);
        let mut targets = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let idx = br.gen_range(0..n);
            inputs.push(train_pairs.z_inputs[idx].clone());
            targets.push(train_pairs.x_outputs[idx].clone());
        }
        let times = vec![0.0; inputs.len()];
        let (loss, grads) =
            net::loss_gradients(&student, &inputs, &times, LossKind::SquaredError, &targets)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: iter,
                message: "student loss is not finite".into(),
            });
        }
        net::adam_step(&mut student, &mut adam, &grads)?;
        net::ema_update(&mut ema, &student, iter)?;
    }
    Ok(ema.shadow)
}

/// One-step output of a student for a latent.
pub fn student_forward(student: &NetworkParams, z: &[f64]) -> Result<Vec<f64>> {
    net::forward(student, z, 0.0)
}

/// Mean per-dimension squared error of the student on held-out pairs:
/// `mean_i ||G(z_i) - x_hat_i||^2 / d`.
pub fn distillation_error(student: &NetworkParams, test_pairs: &PairSet) -> Result<f64> {
    if test_pairs.is_empty() {
        return Err(Error::Config("test pairs: must be non-empty".into()));
    }
    let d = test_pairs.dim() as f64;
    let mut acc = 0.0;
    for (z, x) in test_pairs.z_inputs.iter().zip(&test_pairs.x_outputs) {
        let g = student_forward(student, z)?;
        acc += g
            .iter()
            .zip(x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / d;
    }
    Ok(acc / test_pairs.len() as f64)
}
