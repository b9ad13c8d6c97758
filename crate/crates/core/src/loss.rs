//! Training objectives.
//!
//! Two algebraically equivalent reconstruction forms exist over the linear
//! path: the `1/t^2`-weighted data-prediction loss and the plain
//! velocity-matching loss, related through `v = (x_t - x_hat) / t`. The
//! joint objective adds `beta * KL(q(z|x) || p(z))` and backpropagates the
//! reconstruction term into the encoder through the reparameterized draw.
//! `beta = inf` degenerates to the independent coupling: no encoder, no KL.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coupling::{gaussian_kl, EncoderParams, LOGVAR_MAX, LOGVAR_MIN};
use crate::error::{Error, Result};
use crate::interpolant::{interpolate, InterpolantKind};
use crate::linalg::squared_norm;
use crate::net::{self, GradientSet, NetworkParams};
use crate::rng;

/// What the generator network outputs: the path velocity directly, or the
/// clean data point (converted to a velocity at sampling time).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    Velocity,
    XPrediction,
}

/// Coupling weight: a positive number, or infinite for the independent
/// baseline. Serializes as a JSON number or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    Finite(f64),
    Infinite,
}

impl Beta {
    pub fn is_finite(self) -> bool {
        matches!(self, Beta::Finite(_))
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Beta::Finite(b) => b,
            Beta::Infinite => f64::INFINITY,
        }
    }

    pub fn validate(self) -> Result<()> {
        if let Beta::Finite(b) = self {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!(
                    "beta: must be positive and finite (or \"inf\"), got {b}"
                )));
            }
        }
        Ok(())
    }
}

impl Serialize for Beta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Beta::Finite(b) => s.serialize_f64(*b),
            Beta::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(b) => Ok(Beta::Finite(b)),
            Repr::Text(s) if s == "inf" => Ok(Beta::Infinite),
            Repr::Text(s) => Err(serde::de::Error::custom(format!(
                "beta: expected a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// Per-batch loss decomposition. `total = recon_term + beta * kl_term`
/// when beta is finite; with the independent coupling `kl_term` is zero
/// and `total = recon_term`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon_term: f64,
    pub kl_term: f64,
    pub beta: f64,
}

/// Uniform draw on `[t_min, t_max)`.
pub fn sample_time<R: Rng>(rng: &mut R, t_min: f64, t_max: f64) -> Result<f64> {
    validate_time_range(t_min, t_max)?;
    Ok(t_min + (t_max - t_min) * rng.gen::<f64>())
}

pub fn validate_time_range(t_min: f64, t_max: f64) -> Result<()> {
    if !(0.0 <= t_min && t_min < t_max && t_max <= 1.0) {
        return Err(Error::Config(format!(
            "t range: need 0 <= t_min < t_max <= 1, got [{t_min}, {t_max}]"
        )));
    }
    Ok(())
}

/// `mean_b (1/t^2) ||x - x_pred(x_t, t)||^2` over `(x, z, t)` triples.
///
/// Requires strictly positive `t` (the weight is singular at zero).
pub fn weighted_x_loss<F>(x_pred: F, batch: &[(Vec<f64>, Vec<f64>, f64)]) -> Result<f64>
where
    F: Fn(&[f64], f64) -> Vec<f64>,
{
    if batch.is_empty() {
        return Err(Error::Config("batch: must be non-empty".into()));
    }
    let mut acc = 0.0;
    for (x, z, t) in batch {
        if !(*t > 0.0) {
            return Err(Error::Domain(format!(
                "weighted x loss requires t > 0, got {t}"
            )));
        }
        let xt = interpolate(InterpolantKind::Linear, x, z, *t)?;
        let pred = x_pred(&xt, *t);
        let r2: f64 = x.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
        acc += r2 / (t * t);
    }
    Ok(acc / batch.len() as f64)
}

/// `mean_b ||(z - x) - v(x_t, t)||^2` over `(x, z, t)` triples.
pub fn velocity_matching_loss<F>(velocity: F, batch: &[(Vec<f64>, Vec<f64>, f64)]) -> Result<f64>
where
    F: Fn(&[f64], f64) -> Vec<f64>,
{
    if batch.is_empty() {
        return Err(Error::Config("batch: must be non-empty".into()));
    }
    let mut acc = 0.0;
    for (x, z, t) in batch {
        let xt = interpolate(InterpolantKind::Linear, x, z, *t)?;
        let v = velocity(&xt, *t);
        acc += x
            .iter()
            .zip(z)
            .zip(&v)
            .map(|((xi, zi), vi)| {
                let d = (zi - xi) - vi;
                d * d
            })
            .sum::<f64>();
    }
    Ok(acc / batch.len() as f64)
}

/// Joint loss value and exact gradients for both networks.
#[derive(Debug, Clone)]
pub struct JointLossOutput {
    pub breakdown: LossBreakdown,
    pub generator_grads: GradientSet,
    /// Absent with the independent coupling.
    pub encoder_grads: Option<GradientSet>,
}

/// One evaluation of the joint objective on a batch of data points.
///
/// Per element: draw `t ~ U[t_min, t_max)`, draw the latent (through the
/// encoder when `beta` is finite, fresh from the prior otherwise), form the
/// reconstruction residual in the chosen parameterization, and add
/// `beta * KL` for learned couplings. Gradients flow into the encoder both
/// through the interpolated network input and, for the velocity form,
/// through the regression target.
///
/// Randomness comes from per-element streams of `seed`, so the result is
/// independent of evaluation order and identical across reruns.
pub fn joint_loss(
    generator: &NetworkParams,
    encoder: Option<&EncoderParams>,
    batch: &[Vec<f64>],
    beta: Beta,
    parameterization: Parameterization,
    t_min: f64,
    t_max: f64,
    seed: u64,
) -> Result<JointLossOutput> {
    beta.validate()?;
    validate_time_range(t_min, t_max)?;
    if batch.is_empty() {
        return Err(Error::Config("batch: must be non-empty".into()));
    }
    if parameterization == Parameterization::XPrediction && t_min <= 0.0 {
        return Err(Error::Config(
            "t_min: must be > 0 with the x-prediction parameterization".into(),
        ));
    }
    let encoder = match beta {
        Beta::Finite(_) => Some(encoder.ok_or_else(|| {
            Error::Config("finite beta requires an encoder".into())
        })?),
        Beta::Infinite => None,
    };

    let b = batch.len() as f64;
    let mut gen_grads = GradientSet::zeros_like(generator);
    let mut enc_grads = encoder.map(|e| GradientSet::zeros_like(&e.net));
    let mut recon_sum = 0.0;
    let mut kl_sum = 0.0;

    for (i, x) in batch.iter().enumerate() {
        let mut r = rng::stream(seed, i as u64);
        let t = sample_time(&mut r, t_min, t_max)?;
        let d = x.len();

        // Latent draw; learned couplings keep the pieces needed for backprop.
        let mut enc_ctx = None;
        let z: Vec<f64> = if let Some(enc) = encoder {
            let eps: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            let trace = net::forward_traced(&enc.net, x, 0.0)?;
            let raw_logvar = trace.output[d..].to_vec();
            let (mu, sigma) = split_moments(&trace.output, d);
            let z = mu
                .iter()
                .zip(&sigma)
                .zip(&eps)
                .map(|((m, s), e)| m + s * e)
                .collect();
            enc_ctx = Some((trace, mu, sigma, raw_logvar, eps));
            z
        } else {
            (0..d).map(|_| r.sample(StandardNormal)).collect()
        };

        let xt = interpolate(InterpolantKind::Linear, x, &z, t)?;
        let trace = net::forward_traced(generator, &xt, t)?;

        // Reconstruction residual and the chain back to z.
        let (recon_i, grad_z) = match parameterization {
            Parameterization::Velocity => {
                let residual: Vec<f64> = trace
                    .output
                    .iter()
                    .zip(&z)
                    .zip(x)
                    .map(|((o, zi), xi)| o - (zi - xi))
                    .collect();
                let recon_i = squared_norm(&residual);
                let grad_out: Vec<f64> = residual.iter().map(|r| 2.0 * r / b).collect();
                let grad_xt = net::backward(generator, &trace, &grad_out, &mut gen_grads);
                // z enters through x_t (coefficient t) and through the target.
                let grad_z: Vec<f64> = grad_xt
                    .iter()
                    .zip(&grad_out)
                    .map(|(gx, go)| t * gx - go)
                    .collect();
                (recon_i, grad_z)
            }
            Parameterization::XPrediction => {
                let residual: Vec<f64> =
                    trace.output.iter().zip(x).map(|(o, xi)| o - xi).collect();
                let w = 1.0 / (t * t);
                let recon_i = w * squared_norm(&residual);
                let grad_out: Vec<f64> = residual.iter().map(|r| 2.0 * w * r / b).collect();
                let grad_xt = net::backward(generator, &trace, &grad_out, &mut gen_grads);
                let grad_z: Vec<f64> = grad_xt.iter().map(|gx| t * gx).collect();
                (recon_i, grad_z)
            }
        };
        if !recon_i.is_finite() {
            return Err(Error::NonFinite {
                context: format!("sample {i}"),
            });
        }
        recon_sum += recon_i;

        if let (Some(enc), Some((enc_trace, mu, sigma, raw_logvar, eps))) = (encoder, enc_ctx) {
            let beta_val = beta.as_f64();
            let kl_i = gaussian_kl(&mu, &sigma)?;
            if !kl_i.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("sample {i} (kl)"),
                });
            }
            kl_sum += kl_i;

            // d total / d mu and d total / d logvar (clamp gates the latter).
            let mut grad_enc_out = vec![0.0; 2 * d];
            for j in 0..d {
                grad_enc_out[j] = grad_z[j] + beta_val * mu[j] / b;
                let grad_sigma = grad_z[j] * eps[j];
                let grad_logvar =
                    0.5 * sigma[j] * grad_sigma + beta_val * 0.5 * (sigma[j] * sigma[j] - 1.0) / b;
                let clamped = raw_logvar[j] < LOGVAR_MIN || raw_logvar[j] > LOGVAR_MAX;
                grad_enc_out[d + j] = if clamped { 0.0 } else { grad_logvar };
            }
            net::backward(&enc.net, &enc_trace, &grad_enc_out, enc_grads.as_mut().unwrap());
        }
    }

    let recon_term = recon_sum / b;
    let kl_term = kl_sum / b;
    let total = match beta {
        Beta::Finite(bv) => recon_term + bv * kl_term,
        Beta::Infinite => recon_term,
    };
    Ok(JointLossOutput {
        breakdown: LossBreakdown {
            total,
            recon_term,
            kl_term,
            beta: beta.as_f64(),
        },
        generator_grads: gen_grads,
        encoder_grads: enc_grads,
    })
}

fn split_moments(out: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mu = out[..d].to_vec();
    let sigma = out[d..]
        .iter()
        .map(|&lv| (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp())
        .collect();
    (mu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed_encoder(dim: usize) -> EncoderParams {
        let mut enc = EncoderParams::init(dim, &[4], 0).unwrap();
        for w in &mut enc.net.layer_weights {
            for v in w.iter_mut() {
                *v = 0.0;
            }
        }
        enc
    }

    fn random_batch(n: usize, d: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
        let mut r = rng::stream(seed, 0);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..2.0)).collect();
                let z: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
                let t: f64 = r.gen_range(1e-3..1.0);
                (x, z, t)
            })
            .collect()
    }

    #[test]
    fn weighted_x_loss_oracle_decoder_is_zero() {
        // A decoder that recovers x exactly: x = (x_t - t z) / (1 - t) is not
        // available without z, so use a point dataset where x is constant.
        let batch: Vec<_> = random_batch(16, 2, 1)
            .into_iter()
            .map(|(_, z, t)| (vec![0.5, -0.25], z, t))
            .collect();
        let loss = weighted_x_loss(|_, _| vec![0.5, -0.25], &batch).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn weighted_x_loss_hand_value() {
        let batch = vec![(vec![1.0, 0.0], vec![0.0, 0.0], 0.5)];
        let loss = weighted_x_loss(|_, _| vec![0.0, 0.0], &batch).unwrap();
        assert!((loss - 4.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_x_loss_rejects_zero_t() {
        let batch = vec![(vec![1.0], vec![0.0], 0.0)];
        assert!(matches!(
            weighted_x_loss(|_, _| vec![0.0], &batch),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn velocity_loss_oracle_field_is_zero() {
        // v = z - x is recoverable from (x_t, t) only when lines do not
        // cross; a single pair makes it exact.
        let x = vec![1.0, -1.0];
        let z = vec![0.5, 2.0];
        let v: Vec<f64> = z.iter().zip(&x).map(|(a, b)| a - b).collect();
        let batch = vec![(x, z, 0.3)];
        let loss = velocity_matching_loss(|_, _| v.clone(), &batch).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn velocity_loss_hand_value() {
        let batch = vec![(vec![0.0, 0.0], vec![1.0, 1.0], 0.77)];
        let loss = velocity_matching_loss(|_, _| vec![0.0, 0.0], &batch).unwrap();
        assert!((loss - 2.0).abs() < 1e-15);
    }

    #[test]
    fn parameterization_bridge_on_random_stub() {
        // With v = (x_t - x_hat)/t the two losses agree to ~machine precision.
        let net = NetworkParams::init(&[6, 8, 2], 2, 5).unwrap();
        let batch = random_batch(64, 2, 2);
        let wx = weighted_x_loss(|p, t| net::forward(&net, p, t).unwrap(), &batch).unwrap();
        let vm = velocity_matching_loss(
            |p, t| {
                let xh = net::forward(&net, p, t).unwrap();
                p.iter().zip(&xh).map(|(pi, xi)| (pi - xi) / t).collect()
            },
            &batch,
        )
        .unwrap();
        let rel = (wx - vm).abs() / wx.abs().max(vm.abs());
        assert!(rel < 1e-10, "bridge mismatch: {wx} vs {vm}, rel {rel}");
    }

    #[test]
    fn sample_time_range_and_determinism() {
        let mut r = rng::stream(3, 0);
        for _ in 0..1000 {
            let t = sample_time(&mut r, 0.25, 0.25 + 1e-9).unwrap();
            assert!((0.25..0.25 + 1e-9).contains(&t));
        }
        let a = sample_time(&mut rng::stream(3, 1), 0.0, 1.0).unwrap();
        let b = sample_time(&mut rng::stream(3, 1), 0.0, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            sample_time(&mut r, 0.5, 0.5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sample_time_mean() {
        let mut r = rng::stream(11, 0);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_time(&mut r, 0.0, 1.0).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn joint_loss_prior_encoder_matches_independent_baseline() {
        let gen = NetworkParams::init(&[6, 8, 2], 2, 9).unwrap();
        let enc = zeroed_encoder(2);
        let batch: Vec<Vec<f64>> = vec![vec![0.5, -0.5], vec![1.0, 0.25], vec![-0.75, 0.1]];
        let learned = joint_loss(
            &gen,
            Some(&enc),
            &batch,
            Beta::Finite(2.0),
            Parameterization::Velocity,
            1e-5,
            1.0,
            77,
        )
        .unwrap();
        let indep = joint_loss(
            &gen,
            None,
            &batch,
            Beta::Infinite,
            Parameterization::Velocity,
            1e-5,
            1.0,
            77,
        )
        .unwrap();
        // Zero-parameter encoder means z = eps: identical draws, identical
        // reconstruction, zero KL.
        assert_eq!(learned.breakdown.recon_term, indep.breakdown.recon_term);
        assert_eq!(learned.breakdown.kl_term, 0.0);
        assert_eq!(
            net::flatten_grads(&learned.generator_grads),
            net::flatten_grads(&indep.generator_grads)
        );
    }

    #[test]
    fn joint_loss_independent_reports_no_encoder_gradients() {
        let gen = NetworkParams::init(&[6, 8, 2], 2, 9).unwrap();
        let out = joint_loss(
            &gen,
            None,
            &[vec![0.0, 0.0]],
            Beta::Infinite,
            Parameterization::Velocity,
            0.0,
            1.0,
            5,
        )
        .unwrap();
        assert_eq!(out.breakdown.kl_term, 0.0);
        assert!(out.encoder_grads.is_none());
        assert!(out.breakdown.beta.is_infinite());
    }

    #[test]
    fn joint_loss_breakdown_decomposes_exactly() {
        let gen = NetworkParams::init(&[6, 8, 2], 2, 13).unwrap();
        let enc = EncoderParams::init(2, &[4], 21).unwrap();
        let out = joint_loss(
            &gen,
            Some(&enc),
            &[vec![0.4, 0.4], vec![-1.0, 0.3]],
            Beta::Finite(3.5),
            Parameterization::Velocity,
            1e-5,
            1.0,
            31,
        )
        .unwrap();
        let b = out.breakdown;
        assert_eq!(b.total, b.recon_term + 3.5 * b.kl_term);
        assert!(b.kl_term >= 0.0);
    }

    #[test]
    fn joint_loss_xprediction_requires_positive_t_min() {
        let gen = NetworkParams::init(&[6, 8, 2], 2, 9).unwrap();
        let err = joint_loss(
            &gen,
            None,
            &[vec![0.0, 0.0]],
            Beta::Infinite,
            Parameterization::XPrediction,
            0.0,
            1.0,
            5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn beta_serde_round_trip() {
        assert_eq!(serde_json::to_string(&Beta::Finite(3.0)).unwrap(), "3.0");
        assert_eq!(serde_json::to_string(&Beta::Infinite).unwrap(), "\"inf\"");
        let f: Beta = serde_json::from_str("30").unwrap();
        assert_eq!(f, Beta::Finite(30.0));
        let i: Beta = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(i, Beta::Infinite);
        assert!(serde_json::from_str::<Beta>("\"huge\"").is_err());
    }
}
