//! Forward interpolation paths between a data point (t=0) and a latent
//! (t=1): the straight line used for flow training, and the
//! variance-preserving curve used for baseline comparisons.
//!
//! Both interpolants share one time convention: t=0 is data, t=1 is (close
//! to) the prior. The VP curve has `alpha(1) ~ 6.6e-3`, so its endpoint is
//! only approximately the prior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sub;

pub const DEFAULT_VP_A: f64 = 19.9;
pub const DEFAULT_VP_B: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterpolantKind {
    Linear,
    #[serde(rename = "vp")]
    VarPreserving {
        #[serde(default = "default_vp_a")]
        a: f64,
        #[serde(default = "default_vp_b")]
        b: f64,
    },
}

fn default_vp_a() -> f64 {
    DEFAULT_VP_A
}

fn default_vp_b() -> f64 {
    DEFAULT_VP_B
}

impl InterpolantKind {
    pub fn var_preserving() -> Self {
        InterpolantKind::VarPreserving {
            a: DEFAULT_VP_A,
            b: DEFAULT_VP_B,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let InterpolantKind::VarPreserving { a, b } = self {
            if !(*a > 0.0 && *b > 0.0) {
                return Err(Error::Config(format!(
                    "interpolant: vp coefficients must be positive, got a={a}, b={b}"
                )));
            }
        }
        Ok(())
    }
}

/// Signal coefficient `alpha(t) = exp(-a t^2 / 4 - b t / 2)`.
///
/// `alpha(0) = 1`, strictly decreasing on [0, 1].
pub fn vp_alpha(t: f64, vp_a: f64, vp_b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t must lie in [0, 1], got {t}")));
    }
    Ok((-0.25 * vp_a * t * t - 0.5 * vp_b * t).exp())
}

/// Position on the forward path at time `t`.
///
/// Linear: `(1-t) x + t z`. Variance-preserving:
/// `alpha(t) x + sqrt(1 - alpha(t)^2) z`.
pub fn interpolate(kind: InterpolantKind, x: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>> {
    if x.len() != z.len() {
        return Err(Error::Shape(format!(
            "x dim {} and z dim {} differ",
            x.len(),
            z.len()
        )));
    }
    match kind {
        InterpolantKind::Linear => {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Domain(format!("t must lie in [0, 1], got {t}")));
            }
            Ok(x.iter()
                .zip(z)
                .map(|(xi, zi)| (1.0 - t) * xi + t * zi)
                .collect())
        }
        InterpolantKind::VarPreserving { a, b } => {
            let alpha = vp_alpha(t, a, b)?;
            let noise = (1.0 - alpha * alpha).max(0.0).sqrt();
            Ok(x.iter()
                .zip(z)
                .map(|(xi, zi)| alpha * xi + noise * zi)
                .collect())
        }
    }
}

/// Constant velocity of the linear path, `z - x`.
///
/// Only the linear interpolant has a constant velocity; calling this with
/// the variance-preserving kind is an unsupported operation.
pub fn velocity_target(kind: InterpolantKind, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    match kind {
        InterpolantKind::Linear => {
            if x.len() != z.len() {
                return Err(Error::Shape(format!(
                    "x dim {} and z dim {} differ",
                    x.len(),
                    z.len()
                )));
            }
            Ok(sub(z, x))
        }
        InterpolantKind::VarPreserving { .. } => Err(Error::Unsupported(
            "velocity target is only defined for the linear interpolant".into(),
        )),
    }
}
