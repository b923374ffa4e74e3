use ndarray::{Array3, ArrayView1, Axis, Zip};

use crate::error::{Error, Result};

pub const PEARSON_EPS: f64 = 1e-8;

fn same_shape(a: &Array3<f64>, b: &Array3<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(a.dim(), b.dim()));
    }
    Ok(())
}

/// Mean squared error over all elements.
pub fn ground_truth_loss(y_hat: &Array3<f64>, y_gt: &Array3<f64>) -> Result<f64> {
    ground_truth_loss_grad(y_hat, y_gt).map(|(l, _)| l)
}

/// MSE and its gradient with respect to `y_hat`.
pub fn ground_truth_loss_grad(
    y_hat: &Array3<f64>,
    y_gt: &Array3<f64>,
) -> Result<(f64, Array3<f64>)> {
    same_shape(y_hat, y_gt)?;
    let n = y_hat.len().max(1) as f64;
    let diff = y_hat - y_gt;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// Softmax along the time axis for each (sample, channel) row.
pub fn temporal_softmax(y: &Array3<f64>) -> Array3<f64> {
    let mut h = y.clone();
    for mut row in h.lanes_mut(Axis(2)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    h
}

/// Vector-Jacobian product of [`temporal_softmax`] given its output `h`.
pub fn temporal_softmax_backward(h: &Array3<f64>, dh: &Array3<f64>) -> Array3<f64> {
    let mut dy = Array3::zeros(h.dim());
    Zip::from(dy.lanes_mut(Axis(2)))
        .and(h.lanes(Axis(2)))
        .and(dh.lanes(Axis(2)))
        .for_each(|mut out, hr, gr| {
            let dot = hr.dot(&gr);
            Zip::from(&mut out)
                .and(&hr)
                .and(&gr)
                .for_each(|o, &hv, &gv| *o = hv * (gv - dot));
        });
    dy
}

/// Pearson correlation; zero when either population variance is below [`PEARSON_EPS`].
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    pearson_core(ArrayView1::from(x), ArrayView1::from(y), None)
}

/// Pearson correlation and its gradient with respect to `y`.
pub fn pearson_grad(x: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; y.len()];
    let r = pearson_core(ArrayView1::from(x), ArrayView1::from(y), Some(&mut g));
    (r, g)
}

fn pearson_core(x: ArrayView1<f64>, y: ArrayView1<f64>, grad: Option<&mut [f64]>) -> f64 {
    let n = x.len();
    debug_assert_eq!(n, y.len());
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let mx = x.sum() / nf;
    let my = y.sum() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y.iter()) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (sxx, syy, sxy) = (sxx / nf, syy / nf, sxy / nf);
    if sxx < PEARSON_EPS || syy < PEARSON_EPS {
        if let Some(g) = grad {
            g.fill(0.0);
        }
        return 0.0;
    }
    let denom = (sxx * syy).sqrt();
    let r = sxy / denom;
    if let Some(g) = grad {
        for ((gk, &a), &b) in g.iter_mut().zip(x.iter()).zip(y.iter()) {
            *gk = ((a - mx) / denom - r * (b - my) / syy) / nf;
        }
    }
    r
}

/// Inter/intra temporal Pearson loss on already-softened outputs `[b, c, t]`.
///
/// Per channel: `1 - mean_b rho(rows)` plus `1 - mean_t rho(columns across batch)`,
/// averaged over channels. With fewer than two samples the intra term is skipped.
pub fn inter_intra_kd_loss(h_t: &Array3<f64>, h_s: &Array3<f64>) -> Result<f64> {
    inter_intra_kd_loss_grad(h_t, h_s).map(|(l, _)| l)
}

/// [`inter_intra_kd_loss`] and its gradient with respect to the student `h_s`.
pub fn inter_intra_kd_loss_grad(
    h_t: &Array3<f64>,
    h_s: &Array3<f64>,
) -> Result<(f64, Array3<f64>)> {
    same_shape(h_t, h_s)?;
    let (b, c, t) = h_s.dim();
    if b == 0 || c == 0 || t == 0 {
        return Err(Error::InvalidArgument("empty output tensor".into()));
    }
    let intra = b >= 2;
    if !intra {
        log::debug!("batch of one: intra-temporal term skipped");
    }
    let mut grad = Array3::zeros(h_s.dim());
    let mut loss = 0.0;
    let mut buf_t = vec![0.0; b.max(t)];
    let mut buf_s = vec![0.0; b.max(t)];
    for ch in 0..c {
        let mut inter = 0.0;
        for i in 0..b {
            let rt = h_t.slice(ndarray::s![i, ch, ..]);
            let rs = h_s.slice(ndarray::s![i, ch, ..]);
            let mut g = vec![0.0; t];
            inter += pearson_core(rt, rs, Some(&mut g));
            for (k, gk) in g.into_iter().enumerate() {
                grad[[i, ch, k]] -= gk / (b as f64 * c as f64);
            }
        }
        loss += 1.0 - inter / b as f64;
        if intra {
            let mut acc = 0.0;
            for k in 0..t {
                for i in 0..b {
                    buf_t[i] = h_t[[i, ch, k]];
                    buf_s[i] = h_s[[i, ch, k]];
                }
                let mut g = vec![0.0; b];
                acc += pearson_core(
                    ArrayView1::from(&buf_t[..b]),
                    ArrayView1::from(&buf_s[..b]),
                    Some(&mut g),
                );
                for (i, gi) in g.into_iter().enumerate() {
                    grad[[i, ch, k]] -= gi / (t as f64 * c as f64);
                }
            }
            loss += 1.0 - acc / t as f64;
        }
    }
    Ok((loss / c as f64, grad))
}

/// Output-level term of SCKD: [`inter_intra_kd_loss`] on temporal softmaxes of raw outputs.
pub fn output_kd_loss_grad(
    y_t: &Array3<f64>,
    y_s: &Array3<f64>,
) -> Result<(f64, Array3<f64>)> {
    same_shape(y_t, y_s)?;
    let h_t = temporal_softmax(y_t);
    let h_s = temporal_softmax(y_s);
    let (loss, dh) = inter_intra_kd_loss_grad(&h_t, &h_s)?;
    Ok((loss, temporal_softmax_backward(&h_s, &dh)))
}

pub fn output_kd_loss(y_t: &Array3<f64>, y_s: &Array3<f64>) -> Result<f64> {
    output_kd_loss_grad(y_t, y_s).map(|(l, _)| l)
}

/// Softening temperature and mixing weight of classic logit distillation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BaselineKdParams {
    pub tau: f64,
    pub alpha: f64,
}

impl Default for BaselineKdParams {
    fn default() -> Self {
        BaselineKdParams {
            tau: 4.0,
            alpha: 0.5,
        }
    }
}

impl BaselineKdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::Config(format!("tau must exceed 1, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// `tau^2 * KL(softmax(y_t / tau) || softmax(y_s / tau))` along time, averaged over rows.
pub fn vanilla_kd_loss(y_t: &Array3<f64>, y_s: &Array3<f64>, tau: f64) -> Result<f64> {
    vanilla_kd_loss_grad(y_t, y_s, tau).map(|(l, _)| l)
}

pub fn vanilla_kd_loss_grad(
    y_t: &Array3<f64>,
    y_s: &Array3<f64>,
    tau: f64,
) -> Result<(f64, Array3<f64>)> {
    same_shape(y_t, y_s)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature {tau}")));
    }
    let (b, c, _) = y_s.dim();
    let rows = (b * c).max(1) as f64;
    let p_t = temporal_softmax(&y_t.mapv(|v| v / tau));
    let p_s = temporal_softmax(&y_s.mapv(|v| v / tau));
    let mut kl = 0.0;
    Zip::from(&p_t).and(&p_s).for_each(|&pt, &ps| {
        if pt > 0.0 {
            kl += pt * (pt.ln() - ps.ln());
        }
    });
    let loss = tau * tau * kl / rows;
    let grad = (&p_s - &p_t) * (tau / rows);
    Ok((loss, grad))
}
