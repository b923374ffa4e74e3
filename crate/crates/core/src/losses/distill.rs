use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::baselines::{at_loss_grad, sp_loss_grad};
use super::output::{ground_truth_loss_grad, output_kd_loss_grad, vanilla_kd_loss_grad, BaselineKdParams};
use super::sckd::{total_sckd_loss_grad, LossBreakdown, SckdParams};
use super::taps::{output_feature, tap_feature, tap_flat, FeatureGrads, TapId};
use crate::error::{Error, Result};
use crate::models::TapBundle;

/// How a student is trained against its teacher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Distiller {
    #[serde(rename = "scratch")]
    Scratch,
    #[serde(rename = "KD")]
    Kd,
    #[serde(rename = "AT")]
    At,
    #[serde(rename = "SP")]
    Sp,
    #[serde(rename = "KD+SP")]
    KdSp,
    #[serde(rename = "DIST")]
    Dist,
    #[serde(rename = "SCKD")]
    Sckd,
}

impl Distiller {
    pub const ALL: [Distiller; 7] = [
        Distiller::Scratch,
        Distiller::Kd,
        Distiller::At,
        Distiller::Sp,
        Distiller::KdSp,
        Distiller::Dist,
        Distiller::Sckd,
    ];

    /// Whether the objective looks at the teacher at all.
    pub fn needs_teacher(self) -> bool {
        self != Distiller::Scratch
    }
}

impl fmt::Display for Distiller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string tag"))
    }
}

impl FromStr for Distiller {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Distiller::ALL
            .into_iter()
            .find(|d| d.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown distiller '{s}'")))
    }
}

/// Settings shared by every distiller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillParams {
    pub sckd: SckdParams,
    pub kd: BaselineKdParams,
    /// Tap pair used by the AT and SP baselines.
    pub feature_pair: (TapId, TapId),
    /// Weight of the AT / SP feature term.
    pub beta: f64,
}

impl Default for DistillParams {
    fn default() -> Self {
        DistillParams {
            sckd: SckdParams::default(),
            kd: BaselineKdParams::default(),
            feature_pair: (TapId::Mid, TapId::Mid),
            beta: 1.0,
        }
    }
}

impl DistillParams {
    pub fn validate(&self, distiller: Distiller) -> Result<()> {
        match distiller {
            Distiller::Sckd => self.sckd.validate(),
            Distiller::Kd | Distiller::KdSp => self.kd.validate(),
            _ => Ok(()),
        }?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Objective of one distillation step and its student gradients.
///
/// Output-level baseline terms are reported as `L_KD_c`, feature-level ones as `L_sc_f`.
pub fn distillation_loss_grad(
    distiller: Distiller,
    y_gt: &Array3<f64>,
    teacher: Option<&TapBundle>,
    student: &TapBundle,
    params: &DistillParams,
) -> Result<(LossBreakdown, FeatureGrads)> {
    let teacher = match (distiller.needs_teacher(), teacher) {
        (true, None) => {
            return Err(Error::InvalidArgument(format!("{distiller} needs teacher features")))
        }
        (_, t) => t,
    };
    if distiller == Distiller::Sckd {
        return total_sckd_loss_grad(y_gt, teacher.expect("checked"), student, &params.sckd);
    }
    let y_s = output_feature(student);
    let (l_gt, g_gt) = ground_truth_loss_grad(&y_s, y_gt)?;
    let mut grads = FeatureGrads::default();
    let mut out = LossBreakdown {
        l_gt,
        ..Default::default()
    };
    let (tap_t, tap_s) = params.feature_pair;
    match distiller {
        Distiller::Scratch => {
            grads.add_output(g_gt);
            out.total = l_gt;
        }
        Distiller::Dist => {
            let y_t = output_feature(teacher.expect("checked"));
            let (l, g) = output_kd_loss_grad(&y_t, &y_s)?;
            grads.add_output(g_gt);
            grads.add_output(g);
            out.l_kd_c = l;
            out.total = l_gt + l;
        }
        Distiller::Kd | Distiller::KdSp => {
            let teacher = teacher.expect("checked");
            let y_t = output_feature(teacher);
            let alpha = params.kd.alpha;
            let (l, g) = vanilla_kd_loss_grad(&y_t, &y_s, params.kd.tau)?;
            grads.add_output(g_gt * alpha);
            grads.add_output(g * (1.0 - alpha));
            out.l_kd_c = l;
            out.total = alpha * l_gt + (1.0 - alpha) * l;
            if distiller == Distiller::KdSp {
                let (l, g) = sp_loss_grad(tap_flat(teacher, tap_t).view(), tap_flat(student, tap_s).view())?;
                grads.add_flat(student, tap_s, g * params.beta);
                out.l_sc_f = l;
                out.total += params.beta * l;
            }
        }
        Distiller::Sp => {
            let teacher = teacher.expect("checked");
            let (l, g) = sp_loss_grad(tap_flat(teacher, tap_t).view(), tap_flat(student, tap_s).view())?;
            grads.add_output(g_gt);
            grads.add_flat(student, tap_s, g * params.beta);
            out.l_sc_f = l;
            out.total = l_gt + params.beta * l;
        }
        Distiller::At => {
            let teacher = teacher.expect("checked");
            let (l, g) = at_loss_grad(&tap_feature(teacher, tap_t), &tap_feature(student, tap_s))?;
            grads.add_output(g_gt);
            grads.add_tap(student, tap_s, g * params.beta);
            out.l_sc_f = l;
            out.total = l_gt + params.beta * l;
        }
        Distiller::Sckd => unreachable!(),
    }
    Ok((out, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for d in Distiller::ALL {
            assert_eq!(d.to_string().parse::<Distiller>().unwrap(), d);
        }
        assert_eq!("kd+sp".parse::<Distiller>().unwrap(), Distiller::KdSp);
        assert!("SemCKD".parse::<Distiller>().is_err());
    }
}
