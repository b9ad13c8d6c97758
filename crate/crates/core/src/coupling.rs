//! Forward couplings between data and latents: the independent baseline
//! (fresh standard-normal z) and a learnable Gaussian encoder with
//! reparameterized sampling and closed-form KL to the prior.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::net::{self, NetworkParams};

/// Log-variance bounds applied before exponentiation. Wide enough to be
/// inactive at convergence; they only guard early training.
pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 4.0;

/// One draw from a forward coupling.
///
/// Encoder-produced samples satisfy `z = mu + sigma * eps` exactly and
/// carry all three; independent samples leave them unset. Latent and data
/// dims are always equal.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSample {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub mu: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub eps: Option<Vec<f64>>,
}

/// Gaussian encoder; the network outputs `[mean, log-variance]` halves.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub net: NetworkParams,
}

impl EncoderParams {
    /// Wrap a time-free network whose output dim is twice its input dim.
    pub fn new(net: NetworkParams) -> Result<Self> {
        if net.output_dim() != 2 * net.state_dim() {
            return Err(Error::Shape(format!(
                "encoder output dim {} must be twice the data dim {}",
                net.output_dim(),
                net.state_dim()
            )));
        }
        if !net.time_embed_frequencies.is_empty() {
            return Err(Error::Config(
                "encoder: must be time-free (no time embedding frequencies)".into(),
            ));
        }
        Ok(Self { net })
    }

    /// Fresh encoder with the given hidden widths.
    pub fn init(data_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(data_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(2 * data_dim);
        Self::new(NetworkParams::init_time_free(&sizes, seed)?)
    }

    pub fn data_dim(&self) -> usize {
        self.net.state_dim()
    }
}

/// `n` fresh draws from the standard-normal prior.
pub fn prior_samples<R: Rng>(dim: usize, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Draw from the independent coupling: `z` is a fresh standard normal,
/// `x` passes through untouched.
pub fn independent_sample<R: Rng>(x: &[f64], rng: &mut R) -> CouplingSample {
    let z: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    CouplingSample {
        x: x.to_vec(),
        z,
        mu: None,
        sigma: None,
        eps: None,
    }
}

/// Mean and standard deviation the encoder assigns to `x`.
///
/// The second output half is a log-variance, clamped to
/// `[LOGVAR_MIN, LOGVAR_MAX]` before `sigma = exp(logvar / 2)`.
pub fn encoder_moments(phi: &EncoderParams, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let out = net::forward(&phi.net, x, 0.0)?;
    if !all_finite(&out) {
        return Err(Error::NonFinite {
            context: "encoder output".into(),
        });
    }
    let d = phi.data_dim();
    let mu = out[..d].to_vec();
    let sigma = out[d..]
        .iter()
        .map(|&lv| (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp())
        .collect();
    Ok((mu, sigma))
}

/// Reparameterized draw `z = mu + sigma * eps` with `eps ~ N(0, I)`.
pub fn encode<R: Rng>(phi: &EncoderParams, x: &[f64], rng: &mut R) -> Result<CouplingSample> {
    let eps: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    encode_with_eps(phi, x, &eps)
}

/// [`encode`] with the noise supplied by the caller; the deterministic core
/// of the reparameterization path.
pub fn encode_with_eps(phi: &EncoderParams, x: &[f64], eps: &[f64]) -> Result<CouplingSample> {
    if x.len() != phi.data_dim() {
        return Err(Error::Shape(format!(
            "x dim {} does not match encoder data dim {}",
            x.len(),
            phi.data_dim()
        )));
    }
    if eps.len() != x.len() {
        return Err(Error::Shape("eps dim must match data dim".into()));
    }
    let (mu, sigma) = encoder_moments(phi, x)?;
    let z: Vec<f64> = mu
        .iter()
        .zip(&sigma)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect();
    Ok(CouplingSample {
        x: x.to_vec(),
        z,
        mu: Some(mu),
        sigma: Some(sigma),
        eps: Some(eps.to_vec()),
    })
}

/// KL divergence of `N(mu, diag(sigma^2))` from the standard normal:
/// `0.5 * sum(sigma^2 + mu^2 - 1 - 2 ln sigma)`.
pub fn gaussian_kl(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::Shape("mu and sigma dims differ".into()));
    }
    let mut kl = 0.0;
    for (m, s) in mu.iter().zip(sigma) {
        if !(*s > 0.0) {
            return Err(Error::Domain(format!("sigma must be positive, got {s}")));
        }
        kl += 0.5 * (s * s + m * m - 1.0 - 2.0 * s.ln());
    }
    Ok(kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn zero_encoder(dim: usize) -> EncoderParams {
        let mut enc = EncoderParams::init(dim, &[4], 0).unwrap();
        for w in &mut enc.net.layer_weights {
            for v in w.iter_mut() {
                *v = 0.0;
            }
        }
        enc
    }

    #[test]
    fn independent_sample_is_reproducible_and_keeps_x() {
        let x = vec![3.0, -1.0];
        let a = independent_sample(&x, &mut rng::stream(5, 0));
        let b = independent_sample(&x, &mut rng::stream(5, 0));
        assert_eq!(a, b);
        assert_eq!(a.x, x);
        assert!(a.mu.is_none() && a.sigma.is_none() && a.eps.is_none());
    }

    #[test]
    fn independent_sample_moments() {
        let n = 100_000;
        let mut r = rng::stream(42, 0);
        let mut sum = [0.0; 2];
        let mut sumsq = [0.0; 2];
        for _ in 0..n {
            let s = independent_sample(&[0.0, 0.0], &mut r);
            for d in 0..2 {
                sum[d] += s.z[d];
                sumsq[d] += s.z[d] * s.z[d];
            }
        }
        for d in 0..2 {
            let mean = sum[d] / n as f64;
            let var = sumsq[d] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "mean[{d}] = {mean}");
            assert!((var - 1.0).abs() < 0.05, "var[{d}] = {var}");
        }
    }

    #[test]
    fn zero_encoder_returns_prior() {
        let enc = zero_encoder(2);
        let s = encode(&enc, &[0.4, -0.9], &mut rng::stream(1, 0)).unwrap();
        assert_eq!(s.mu.as_ref().unwrap(), &vec![0.0, 0.0]);
        assert_eq!(s.sigma.as_ref().unwrap(), &vec![1.0, 1.0]);
        assert_eq!(&s.z, s.eps.as_ref().unwrap());
    }

    #[test]
    fn zero_eps_returns_mu() {
        let enc = EncoderParams::init(2, &[4], 3).unwrap();
        let s = encode_with_eps(&enc, &[0.4, -0.9], &[0.0, 0.0]).unwrap();
        assert_eq!(&s.z, s.mu.as_ref().unwrap());
    }

    #[test]
    fn reparameterization_identity_is_exact() {
        let enc = EncoderParams::init(2, &[8, 8], 7).unwrap();
        let s = encode(&enc, &[1.0, 2.0], &mut rng::stream(9, 3)).unwrap();
        let (mu, sigma, eps) = (s.mu.unwrap(), s.sigma.unwrap(), s.eps.unwrap());
        for i in 0..2 {
            assert_eq!(s.z[i] - mu[i], sigma[i] * eps[i]);
        }
    }

    #[test]
    fn encode_fixed_stream_is_deterministic() {
        let enc = EncoderParams::init(2, &[8], 11).unwrap();
        let a = encode(&enc, &[0.2, 0.3], &mut rng::stream(4, 2)).unwrap();
        let b = encode(&enc, &[0.2, 0.3], &mut rng::stream(4, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_rejects_time_embedding() {
        let timed = NetworkParams::init(&[6, 8, 2], 2, 0).unwrap();
        assert!(EncoderParams::new(timed).is_err());
    }

    #[test]
    fn gaussian_kl_known_values() {
        assert_eq!(gaussian_kl(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!((gaussian_kl(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        let expected = 0.5 * (4.0 - 1.0 - 2.0 * 2.0f64.ln());
        assert!((gaussian_kl(&[0.0], &[2.0]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn gaussian_kl_rejects_nonpositive_sigma() {
        assert!(matches!(
            gaussian_kl(&[0.0], &[0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            gaussian_kl(&[0.0], &[-1.0]),
            Err(Error::Domain(_))
        ));
    }

    proptest! {
        #[test]
        fn gaussian_kl_is_nonnegative(
            mu in proptest::collection::vec(-5.0f64..5.0, 1..6),
            log_sigma in proptest::collection::vec(-3.0f64..3.0, 1..6),
        ) {
            let n = mu.len().min(log_sigma.len());
            let sigma: Vec<f64> = log_sigma[..n].iter().map(|l| l.exp()).collect();
            let kl = gaussian_kl(&mu[..n], &sigma).unwrap();
            prop_assert!(kl >= 0.0);
        }
    }

    #[test]
    fn gaussian_kl_zero_only_at_prior() {
        // Random search never finds a negative value; the prior point is ~0.
        let mut r = rng::stream(100, 0);
        for _ in 0..1000 {
            let mu: Vec<f64> = (0..3).map(|_| r.gen_range(-4.0..4.0)).collect();
            let sigma: Vec<f64> = (0..3).map(|_| r.gen_range(0.05..5.0)).collect();
            assert!(gaussian_kl(&mu, &sigma).unwrap() >= 0.0);
        }
        assert!(gaussian_kl(&[0.0; 4], &[1.0; 4]).unwrap() < 1e-12);
    }
}
