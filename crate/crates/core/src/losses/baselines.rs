use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::models::temporal_resize;

/// Similarity map `G G^T` of L2-row-normalized flattened features `[b, n]`.
pub fn sp_map(f: ArrayView2<f64>) -> Array2<f64> {
    let g = row_normalize(f).0;
    g.dot(&g.t())
}

fn row_normalize(f: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = f.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut g = f.to_owned();
    for (mut row, &n) in g.rows_mut().into_iter().zip(norms.iter()) {
        if n > 0.0 {
            row /= n;
        }
    }
    (g, norms)
}

/// `(1 / b^2) |M_T - M_S|_F^2` over flattened per-sample features.
pub fn sp_loss(f_t: ArrayView2<f64>, f_s: ArrayView2<f64>) -> Result<f64> {
    sp_loss_grad(f_t, f_s).map(|(l, _)| l)
}

/// SP loss and its gradient with respect to the student features.
pub fn sp_loss_grad(f_t: ArrayView2<f64>, f_s: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    let b = f_s.nrows();
    if f_t.nrows() != b {
        return Err(Error::shape(f_s.dim(), f_t.dim()));
    }
    let m_t = sp_map(f_t);
    let (g, norms) = row_normalize(f_s);
    let m_s = g.dot(&g.t());
    let diff = &m_s - &m_t;
    let bb = (b * b).max(1) as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / bb;
    // dL/dM = 2 diff / b^2; M = G G^T with symmetric dM gives dG = 2 dM G.
    let dm = &diff * (2.0 / bb);
    let dg = (&dm + &dm.t()).dot(&g);
    let mut df = Array2::zeros(f_s.dim());
    for i in 0..b {
        if norms[i] == 0.0 {
            continue;
        }
        let proj = g.row(i).dot(&dg.row(i));
        let row = (&dg.row(i) - &(&g.row(i) * proj)) / norms[i];
        df.row_mut(i).assign(&row);
    }
    Ok((loss, df))
}

fn attention(f: &Array3<f64>) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let (b, c, _) = f.dim();
    let m = f.mapv(|v| v * v).sum_axis(Axis(1)) / c as f64;
    let mut a = m.clone();
    let mut norms = vec![0.0; b];
    for (i, mut row) in a.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        norms[i] = n;
        if n > 0.0 {
            row /= n;
        }
    }
    (a, m, norms)
}

/// Attention transfer on pooled `[b, c, t]` features: channel mean of squares,
/// L2-normalized over time, squared distance averaged over the batch.
pub fn at_loss(f_t: &Array3<f64>, f_s: &Array3<f64>) -> Result<f64> {
    at_loss_grad(f_t, f_s).map(|(l, _)| l)
}

pub fn at_loss_grad(f_t: &Array3<f64>, f_s: &Array3<f64>) -> Result<(f64, Array3<f64>)> {
    let (b, c, t) = f_s.dim();
    if f_t.dim().0 != b {
        return Err(Error::shape(f_s.dim(), f_t.dim()));
    }
    let resized;
    let f_t = if f_t.dim().2 != t {
        resized = temporal_resize(f_t, t)?;
        &resized
    } else {
        f_t
    };
    let (a_t, _, _) = attention(f_t);
    let (a_s, _, norms) = attention(f_s);
    let diff = &a_s - &a_t;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / b as f64;
    let da = diff * (2.0 / b as f64);
    let mut grad = Array3::zeros(f_s.dim());
    for i in 0..b {
        if norms[i] == 0.0 {
            continue;
        }
        let proj = a_s.row(i).dot(&da.row(i));
        for k in 0..t {
            let dm = (da[[i, k]] - a_s[[i, k]] * proj) / norms[i];
            for ch in 0..c {
                grad[[i, ch, k]] = dm * 2.0 * f_s[[i, ch, k]] / c as f64;
            }
        }
    }
    Ok((loss, grad))
}
