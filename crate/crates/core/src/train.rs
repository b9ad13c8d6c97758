//! The training loop: joint optimization of the generator (and encoder,
//! when the coupling is learned) with Adam, linear learning-rate warm-up,
//! and EMA tracking. Deterministic given the config seed.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::coupling::EncoderParams;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::interpolant::{interpolate, InterpolantKind};
use crate::loss::{self, LossBreakdown};
use crate::net::{self, AdamState, EmaState, LossKind, NetworkParams};
use crate::rng;

/// One training-log row. Wall time is informational and excluded from the
/// determinism contract.
#[derive(Debug, Clone, Serialize)]
pub struct LogRow {
    pub step: u64,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub wall_time_s: f64,
}

/// Borrowed view of the models mid-training, handed to the checkpoint
/// callback.
pub struct TrainSnapshot<'a> {
    pub step: u64,
    pub generator: &'a NetworkParams,
    pub generator_ema: &'a NetworkParams,
    pub encoder: Option<&'a EncoderParams>,
    pub encoder_ema: Option<&'a EncoderParams>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub generator: NetworkParams,
    pub generator_ema: NetworkParams,
    pub encoder: Option<EncoderParams>,
    pub encoder_ema: Option<EncoderParams>,
    pub log: Vec<LogRow>,
    pub global_step: u64,
}

pub fn train(config: &RunConfig, data: &Dataset) -> Result<TrainResult> {
    train_with_callback(config, data, |_| Ok(()))
}

/// Train per `config` on `data` (already normalized by the caller when the
/// config asks for it). `on_checkpoint` fires every `checkpoint_every`
/// iterations when that is nonzero.
pub fn train_with_callback<C>(
    config: &RunConfig,
    data: &Dataset,
    mut on_checkpoint: C,
) -> Result<TrainResult>
where
    C: FnMut(&TrainSnapshot) -> Result<()>,
{
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("dataset: must be non-empty".into()));
    }
    let dim = data.dim();
    let start = Instant::now();

    let mut generator = NetworkParams::init(
        &config.generator_layer_sizes(dim),
        config.n_freqs,
        rng::derive(config.seed, 0x6e),
    )?;
    let mut gen_adam = AdamState::new(
        &generator,
        config.lr,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    )?;
    let mut gen_ema = EmaState::new(&generator, config.ema_decay, config.ema_start)?;

    let mut encoder = if config.beta.is_finite() {
        Some(EncoderParams::init(
            dim,
            &config.encoder_hidden_sizes(),
            rng::derive(config.seed, 0xe4c),
        )?)
    } else {
        None
    };
    let mut enc_adam = match &encoder {
        Some(enc) => Some(AdamState::new(
            &enc.net,
            config.lr,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )?),
        None => None,
    };
    let mut enc_ema = match &encoder {
        Some(enc) => Some(EmaState::new(&enc.net, config.ema_decay, config.ema_start)?),
        None => None,
    };

    let mut log = Vec::new();
    let mut last_breakdown: Option<LossBreakdown> = None;

    for iter in 0..config.iterations {
        let lr = warmup_lr(config.lr, iter, config.warmup_steps);
        gen_adam.lr = lr;
        if let Some(a) = enc_adam.as_mut() {
            a.lr = lr;
        }

        let batch = draw_batch(data, config.batch_size, config.seed, iter);
        let loss_seed = rng::derive(rng::derive(config.seed, 0x1055), iter);

        let breakdown = match config.interpolant {
            InterpolantKind::Linear => {
                let out = loss::joint_loss(
                    &generator,
                    encoder.as_ref(),
                    &batch,
                    config.beta,
                    config.parameterization,
                    config.t_min,
                    config.t_max,
                    loss_seed,
                )?;
                net::adam_step(&mut generator, &mut gen_adam, &out.generator_grads)?;
                if let (Some(enc), Some(adam), Some(grads)) =
                    (encoder.as_mut(), enc_adam.as_mut(), out.encoder_grads.as_ref())
                {
                    net::adam_step(&mut enc.net, adam, grads)?;
                }
                out.breakdown
            }
            InterpolantKind::VarPreserving { .. } => {
                // Plain (unweighted) data-prediction loss over the vp path,
                // independent coupling.
                let breakdown =
                    vp_step(&mut generator, &mut gen_adam, config, &batch, loss_seed)?;
                breakdown
            }
        };

        if !breakdown.total.is_finite() {
            return Err(Error::Diverged {
                step: iter,
                message: format!("loss = {}", breakdown.total),
            });
        }

        net::ema_update(&mut gen_ema, &generator, iter)?;
        if let (Some(enc), Some(ema)) = (encoder.as_ref(), enc_ema.as_mut()) {
            net::ema_update(ema, &enc.net, iter)?;
        }

        let step = iter + 1;
        if step % config.log_every == 0 || step == config.iterations {
            log.push(LogRow {
                step,
                total: breakdown.total,
                recon: breakdown.recon_term,
                kl: breakdown.kl_term,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
            let enc_ema_params = enc_ema.as_ref().map(|e| EncoderParams {
                net: e.shadow.clone(),
            });
            on_checkpoint(&TrainSnapshot {
                step,
                generator: &generator,
                generator_ema: &gen_ema.shadow,
                encoder: encoder.as_ref(),
                encoder_ema: enc_ema_params.as_ref(),
            })?;
        }
        last_breakdown = Some(breakdown);
    }
    let _ = last_breakdown;

    Ok(TrainResult {
        generator,
        generator_ema: gen_ema.shadow,
        encoder,
        encoder_ema: enc_ema.map(|e| EncoderParams { net: e.shadow }),
        log,
        global_step: config.iterations,
    })
}

fn warmup_lr(lr: f64, iter: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        lr
    } else {
        lr * (((iter + 1) as f64 / warmup_steps as f64).min(1.0))
    }
}

fn draw_batch(data: &Dataset, batch_size: usize, seed: u64, iter: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(rng::derive(seed, 0xba7c4), iter);
    (0..batch_size)
        .map(|_| data.points[r.gen_range(0..data.len())].clone())
        .collect()
}

fn vp_step(
    generator: &mut NetworkParams,
    adam: &mut AdamState,
    config: &RunConfig,
    batch: &[Vec<f64>],
    loss_seed: u64,
) -> Result<LossBreakdown> {
    use rand_distr::StandardNormal;
    let mut inputs = Vec::with_capacity(batch.len());
    let mut times = Vec::with_capacity(batch.len());
    for (i, x) in batch.iter().enumerate() {
        let mut r = rng::stream(loss_seed, i as u64);
        let t = loss::sample_time(&mut r, config.t_min, config.t_max)?;
        let z: Vec<f64> = (0..x.len()).map(|_| r.sample(StandardNormal)).collect();
        inputs.push(interpolate(config.interpolant, x, &z, t)?);
        times.push(t);
    }
    let (value, grads) =
        net::loss_gradients(generator, &inputs, &times, LossKind::SquaredError, batch)?;
    net::adam_step(generator, adam, &grads)?;
    Ok(LossBreakdown {
        total: value,
        recon_term: value,
        kl_term: 0.0,
        beta: f64::INFINITY,
    })
}
