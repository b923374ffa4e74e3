use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::correlation::{selective_correlation_loss_grad, KernelMode};
use super::output::{ground_truth_loss_grad, output_kd_loss_grad};
use super::taps::{output_feature, tap_feature, FeatureGrads, TapId};
use crate::error::{Error, Result};
use crate::models::TapBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    Exact,
    Taylor,
}

/// Weights and kernel settings of the selective-correlation objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SckdParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub gamma: f64,
    /// Taylor order P.
    pub order: usize,
    pub q: usize,
    /// Teacher/student tap pairs; the Mid/Mid pair is weighted by `lambda2`, the rest by `lambda3`.
    pub pairs: Vec<(TapId, TapId)>,
    pub kernel: KernelChoice,
}

impl Default for SckdParams {
    fn default() -> Self {
        SckdParams {
            lambda1: 1.0,
            lambda2: 10.0,
            lambda3: 1.0,
            gamma: 0.4,
            order: 2,
            q: 8,
            pairs: vec![(TapId::E2, TapId::E2), (TapId::Mid, TapId::Mid), (TapId::D1, TapId::D1)],
            kernel: KernelChoice::Taylor,
        }
    }
}

impl SckdParams {
    pub fn kernel_mode(&self) -> KernelMode {
        match self.kernel {
            KernelChoice::Exact => KernelMode::Exact,
            KernelChoice::Taylor => KernelMode::Taylor { order: self.order },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.q == 0 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if self.pairs.is_empty() {
            return Err(Error::Config("at least one tap pair is required".into()));
        }
        Ok(())
    }

    fn is_mid(pair: &(TapId, TapId)) -> bool {
        pair.0 == TapId::Mid && pair.1 == TapId::Mid
    }
}

/// Per-term values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_gt")]
    pub l_gt: f64,
    #[serde(rename = "L_KD_c")]
    pub l_kd_c: f64,
    #[serde(rename = "L_sc_r")]
    pub l_sc_r: f64,
    #[serde(rename = "L_sc_f")]
    pub l_sc_f: f64,
    pub total: f64,
}

fn correlation_term(
    pairs: &[(TapId, TapId)],
    teacher: &TapBundle,
    student: &TapBundle,
    params: &SckdParams,
    grads: Option<(&mut FeatureGrads, f64)>,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let feats: Vec<(Array3<f64>, Array3<f64>)> = pairs
        .iter()
        .map(|&(t, s)| (tap_feature(teacher, t), tap_feature(student, s)))
        .collect();
    let refs: Vec<(&Array3<f64>, &Array3<f64>)> = feats.iter().map(|(a, b)| (a, b)).collect();
    let (loss, g) =
        selective_correlation_loss_grad(&refs, params.q, params.gamma, params.kernel_mode())?;
    if let Some((acc, weight)) = grads {
        for (&(_, s), gi) in pairs.iter().zip(g) {
            acc.add_tap(student, s, gi * weight);
        }
    }
    Ok(loss)
}

/// Full SCKD objective and per-term breakdown.
pub fn total_sckd_loss(
    y_gt: &Array3<f64>,
    teacher: &TapBundle,
    student: &TapBundle,
    params: &SckdParams,
) -> Result<LossBreakdown> {
    sckd_objective(y_gt, teacher, student, params, false).map(|(b, _)| b)
}

/// SCKD objective with student gradients. Terms whose weight is zero are
/// evaluated for the breakdown but contribute no gradient.
pub fn total_sckd_loss_grad(
    y_gt: &Array3<f64>,
    teacher: &TapBundle,
    student: &TapBundle,
    params: &SckdParams,
) -> Result<(LossBreakdown, FeatureGrads)> {
    sckd_objective(y_gt, teacher, student, params, true)
}

fn sckd_objective(
    y_gt: &Array3<f64>,
    teacher: &TapBundle,
    student: &TapBundle,
    params: &SckdParams,
    with_grad: bool,
) -> Result<(LossBreakdown, FeatureGrads)> {
    params.validate()?;
    let mut grads = FeatureGrads::default();
    let y_s = output_feature(student);
    let y_t = output_feature(teacher);

    let (l_gt, g_gt) = ground_truth_loss_grad(&y_s, y_gt)?;
    let (l_kd_c, g_kd) = output_kd_loss_grad(&y_t, &y_s)?;
    if with_grad {
        grads.add_output(g_gt);
        if params.lambda1 != 0.0 {
            grads.add_output(g_kd * params.lambda1);
        }
    }

    let (mid, rest): (Vec<_>, Vec<_>) = params.pairs.iter().copied().partition(SckdParams::is_mid);
    let l_sc_r = correlation_term(
        &mid,
        teacher,
        student,
        params,
        (with_grad && params.lambda2 != 0.0).then_some((&mut grads, params.lambda2)),
    )?;
    let l_sc_f = correlation_term(
        &rest,
        teacher,
        student,
        params,
        (with_grad && params.lambda3 != 0.0).then_some((&mut grads, params.lambda3)),
    )?;

    let total = l_gt + params.lambda1 * l_kd_c + params.lambda2 * l_sc_r + params.lambda3 * l_sc_f;
    Ok((
        LossBreakdown {
            l_gt,
            l_kd_c,
            l_sc_r,
            l_sc_f,
            total,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let p = SckdParams::default();
        assert_eq!((p.lambda1, p.lambda2, p.lambda3), (1.0, 10.0, 1.0));
        assert_eq!((p.gamma, p.order, p.q), (0.4, 2, 8));
        assert!(p.validate().is_ok());
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<SckdParams>(&json).unwrap(), p);
        let partial: SckdParams = serde_json::from_str(r#"{"lambda2": 20}"#).unwrap();
        assert_eq!(partial.lambda2, 20.0);
        assert_eq!(partial.q, 8);
    }

    #[test]
    fn rejects_bad_params() {
        let p = SckdParams { pairs: vec![], ..Default::default() };
        assert!(p.validate().is_err());
        let p = SckdParams { lambda1: -1.0, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
