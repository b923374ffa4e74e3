use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepresentationMode {
    #[serde(rename = "AE")]
    Ae,
    #[serde(rename = "VAE")]
    Vae,
    #[serde(rename = "WAE")]
    Wae,
}

impl std::fmt::Display for RepresentationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RepresentationMode::Ae => "AE",
            RepresentationMode::Vae => "VAE",
            RepresentationMode::Wae => "WAE",
        })
    }
}

impl std::str::FromStr for RepresentationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AE" => Ok(RepresentationMode::Ae),
            "VAE" => Ok(RepresentationMode::Vae),
            "WAE" => Ok(RepresentationMode::Wae),
            other => Err(Error::Config(format!("unknown training mode '{other}'"))),
        }
    }
}

/// `KL(N(mu, exp(logvar)) || N(0, 1))` averaged over latent elements,
/// with gradients for `mu` and `logvar`.
pub fn vae_kl_grad(mu: &Array3<f64>, logvar: &Array3<f64>) -> Result<(f64, Array3<f64>, Array3<f64>)> {
    if mu.dim() != logvar.dim() {
        return Err(Error::shape(mu.dim(), logvar.dim()));
    }
    let n = mu.len().max(1) as f64;
    let mut kl = 0.0;
    ndarray::Zip::from(mu).and(logvar).for_each(|&m, &lv| {
        kl += 0.5 * (m * m + lv.exp() - 1.0 - lv);
    });
    let dmu = mu / n;
    let dlv = logvar.mapv(|lv| 0.5 * (lv.exp() - 1.0) / n);
    Ok((kl / n, dmu, dlv))
}

pub fn vae_kl(mu: &Array3<f64>, logvar: &Array3<f64>) -> Result<f64> {
    vae_kl_grad(mu, logvar).map(|(k, _, _)| k)
}

/// Mean binary cross-entropy on logits against a constant label, with logit gradients.
pub fn bce_with_logits(logits: &[f64], label: f64) -> (f64, Vec<f64>) {
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .map(|&z| {
            // log(1 + e^{-|z|}) + max(z, 0) - z * y, stable for large |z|
            loss += z.max(0.0) - z * label + (-z.abs()).exp().ln_1p();
            (1.0 / (1.0 + (-z).exp()) - label) / n
        })
        .collect();
    (loss / n, grad)
}

/// Latent codes `[b, c, t]` averaged over time to `[b, c]`.
pub fn pool_codes(mid: &Array3<f64>) -> Array2<f64> {
    mid.mean_axis(Axis(2)).expect("non-empty time axis")
}

pub fn pool_codes_backward(grad: &Array2<f64>, t: usize) -> Array3<f64> {
    let (b, c) = grad.dim();
    Array3::from_shape_fn((b, c, t), |(i, k, _)| grad[[i, k]] / t as f64)
}

/// Discriminator logits on prior samples and on encoded codes.
#[derive(Debug, Clone, Copy)]
pub struct AdversarialLogits<'a> {
    pub prior: &'a [f64],
    pub encoded: &'a [f64],
}

/// Scalar objectives of one representation-learning step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RepresentationLoss {
    pub reconstruction: f64,
    /// KL term (VAE) or adversarial generator term (WAE).
    pub regularizer: f64,
    /// Generator objective: reconstruction plus weighted regularizer.
    pub total: f64,
    /// WAE only: discriminator cross-entropy.
    pub discriminator: Option<f64>,
}

/// Supervised reconstruction plus the mode's latent regularizer.
pub fn representation_loss(
    mode: RepresentationMode,
    y_hat: &Array3<f64>,
    y_gt: &Array3<f64>,
    latent: Option<(&Array3<f64>, &Array3<f64>)>,
    adversarial: Option<AdversarialLogits<'_>>,
    weight: f64,
) -> Result<RepresentationLoss> {
    let reconstruction = super::ground_truth_loss(y_hat, y_gt)?;
    let mut out = RepresentationLoss {
        reconstruction,
        total: reconstruction,
        ..Default::default()
    };
    match mode {
        RepresentationMode::Ae => {}
        RepresentationMode::Vae => {
            let (mu, logvar) = latent.ok_or_else(|| {
                Error::InvalidArgument("VAE loss needs the latent mean and log-variance".into())
            })?;
            out.regularizer = vae_kl(mu, logvar)?;
            out.total += weight * out.regularizer;
        }
        RepresentationMode::Wae => {
            let logits = adversarial.ok_or_else(|| {
                Error::InvalidArgument("WAE loss needs a discriminator".into())
            })?;
            let (real, _) = bce_with_logits(logits.prior, 1.0);
            let (fake, _) = bce_with_logits(logits.encoded, 0.0);
            let (fool, _) = bce_with_logits(logits.encoded, 1.0);
            out.discriminator = Some(real + fake);
            out.regularizer = fool;
            out.total += weight * fool;
        }
    }
    Ok(out)
}
