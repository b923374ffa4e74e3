use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RMSE and MAE in units of 1e-2 of the normalized force; Pearson r times 100.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PointMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub r: f64,
}

fn pearson_flat(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Pooled metrics over all elements.
pub fn point_metrics(y_hat: &[f64], y_gt: &[f64]) -> Result<PointMetrics> {
    if y_hat.len() != y_gt.len() {
        return Err(Error::shape(y_gt.len(), y_hat.len()));
    }
    if y_hat.is_empty() {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    let n = y_hat.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (&p, &t) in y_hat.iter().zip(y_gt) {
        se += (p - t) * (p - t);
        ae += (p - t).abs();
    }
    Ok(PointMetrics {
        rmse: (se / n).sqrt() * 100.0,
        mae: ae / n * 100.0,
        r: pearson_flat(y_hat, y_gt) * 100.0,
    })
}

pub fn point_metrics_3d(y_hat: &Array3<f64>, y_gt: &Array3<f64>) -> Result<PointMetrics> {
    if y_hat.dim() != y_gt.dim() {
        return Err(Error::shape(y_gt.dim(), y_hat.dim()));
    }
    let a: Vec<f64> = y_hat.iter().copied().collect();
    let b: Vec<f64> = y_gt.iter().copied().collect();
    point_metrics(&a, &b)
}

/// Pearson r (x100) computed per window and averaged.
pub fn per_window_r(y_hat: &Array3<f64>, y_gt: &Array3<f64>) -> Result<f64> {
    if y_hat.dim() != y_gt.dim() {
        return Err(Error::shape(y_gt.dim(), y_hat.dim()));
    }
    let n = y_hat.dim().0;
    if n == 0 {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    let total: f64 = y_hat
        .outer_iter()
        .zip(y_gt.outer_iter())
        .map(|(p, t)| {
            let a: Vec<f64> = p.iter().copied().collect();
            let b: Vec<f64> = t.iter().copied().collect();
            pearson_flat(&a, &b)
        })
        .sum();
    Ok(total / n as f64 * 100.0)
}

/// Expected calibration error in percent, per foot and averaged.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Calibration {
    pub ece_left: f64,
    pub ece_right: f64,
    pub ece_avg: f64,
}

/// Binned gap between mean prediction and mean truth over equal-width bins on [0, 1].
/// The last bin is closed; predictions outside [0, 1] go to the edge bins.
pub fn ece(pred: &[f64], truth: &[f64], bins: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(truth.len(), pred.len()));
    }
    if pred.is_empty() || bins == 0 {
        return Err(Error::InvalidArgument("empty calibration input".into()));
    }
    let mut count = vec![0usize; bins];
    let mut sum_p = vec![0.0; bins];
    let mut sum_t = vec![0.0; bins];
    for (&p, &t) in pred.iter().zip(truth) {
        let mut k = ((p * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        // settle rounding in p * bins against the exact edges k / bins
        if k > 0 && p < k as f64 / bins as f64 {
            k -= 1;
        } else if k + 1 < bins && p >= (k + 1) as f64 / bins as f64 {
            k += 1;
        }
        count[k] += 1;
        sum_p[k] += p;
        sum_t[k] += t;
    }
    let n = pred.len() as f64;
    let total: f64 = (0..bins)
        .filter(|&k| count[k] > 0)
        .map(|k| {
            let c = count[k] as f64;
            c / n * (sum_p[k] / c - sum_t[k] / c).abs()
        })
        .sum();
    Ok(total * 100.0)
}

/// Calibration of `[n, 2, t]` predictions; channel 0 is the left foot.
pub fn calibration_error(y_hat: &Array3<f64>, y_gt: &Array3<f64>, bins: usize) -> Result<Calibration> {
    if y_hat.dim() != y_gt.dim() {
        return Err(Error::shape(y_gt.dim(), y_hat.dim()));
    }
    if y_hat.dim().1 != 2 {
        return Err(Error::shape("2 feet", y_hat.dim().1));
    }
    let foot = |k: usize| -> Result<f64> {
        let p: Vec<f64> = y_hat.index_axis(Axis(1), k).iter().copied().collect();
        let t: Vec<f64> = y_gt.index_axis(Axis(1), k).iter().copied().collect();
        ece(&p, &t, bins)
    };
    let (l, r) = (foot(0)?, foot(1)?);
    Ok(Calibration {
        ece_left: l,
        ece_right: r,
        ece_avg: 0.5 * (l + r),
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
