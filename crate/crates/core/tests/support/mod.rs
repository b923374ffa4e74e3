//! Scalar-loop reference implementations and a finite-difference checker.
//! Written independently of the library code paths; nested `Vec`s and plain loops only.
#![allow(dead_code)]

pub mod checks;

use ndarray::{Array, Array2, Array3, Dimension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type V3 = Vec<Vec<Vec<f64>>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand3(r: &mut ChaCha8Rng, dims: (usize, usize, usize), lo: f64, hi: f64) -> Array3<f64> {
    Array3::from_shape_simple_fn(dims, || r.gen_range(lo..hi))
}

pub fn rand2(r: &mut ChaCha8Rng, dims: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(dims, || r.gen_range(lo..hi))
}

pub fn v3(a: &Array3<f64>) -> V3 {
    let (b, c, t) = a.dim();
    (0..b)
        .map(|i| (0..c).map(|k| (0..t).map(|j| a[[i, k, j]]).collect()).collect())
        .collect()
}

pub fn v2(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn mse(a: &V3, b: &V3) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for i in 0..a.len() {
        for k in 0..a[i].len() {
            for j in 0..a[i][k].len() {
                s += (a[i][k][j] - b[i][k][j]).powi(2);
                n += 1.0;
            }
        }
    }
    s / n
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut denom = 0.0;
    for &v in row {
        denom += v.exp();
    }
    row.iter().map(|&v| v.exp() / denom).collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut mx = 0.0;
    let mut my = 0.0;
    for i in 0..x.len() {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        cov += (x[i] - mx) * (y[i] - my);
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
    }
    cov /= n;
    vx /= n;
    vy /= n;
    if vx < 1e-8 || vy < 1e-8 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

pub fn inter_intra(ht: &V3, hs: &V3) -> f64 {
    let b = ht.len();
    let c = ht[0].len();
    let t = ht[0][0].len();
    let mut total = 0.0;
    for k in 0..c {
        let mut inter = 0.0;
        for i in 0..b {
            inter += pearson(&ht[i][k], &hs[i][k]);
        }
        total += 1.0 - inter / b as f64;
        if b >= 2 {
            let mut intra = 0.0;
            for j in 0..t {
                let col_t: Vec<f64> = (0..b).map(|i| ht[i][k][j]).collect();
                let col_s: Vec<f64> = (0..b).map(|i| hs[i][k][j]).collect();
                intra += pearson(&col_t, &col_s);
            }
            total += 1.0 - intra / t as f64;
        }
    }
    total / c as f64
}

pub fn softmax3(y: &V3) -> V3 {
    y.iter().map(|s| s.iter().map(|r| softmax(r)).collect()).collect()
}

pub fn output_kd(yt: &V3, ys: &V3) -> f64 {
    inter_intra(&softmax3(yt), &softmax3(ys))
}

pub fn vanilla_kd(yt: &V3, ys: &V3, tau: f64) -> f64 {
    let mut total = 0.0;
    let mut rows = 0.0;
    for i in 0..yt.len() {
        for k in 0..yt[i].len() {
            let p: Vec<f64> = softmax(&yt[i][k].iter().map(|v| v / tau).collect::<Vec<_>>());
            let q: Vec<f64> = softmax(&ys[i][k].iter().map(|v| v / tau).collect::<Vec<_>>());
            for j in 0..p.len() {
                total += p[j] * (p[j] / q[j]).ln();
            }
            rows += 1.0;
        }
    }
    tau * tau * total / rows
}

pub fn select(c: usize, q: usize) -> Vec<usize> {
    let q = q.min(c);
    let m = (c + q - 1) / q;
    let mut out = Vec::new();
    let mut k = 0;
    while k < c && out.len() < q {
        out.push(k);
        k += m;
    }
    out
}

fn unit_rows(f: &[Vec<f64>]) -> Vec<Vec<f64>> {
    f.iter()
        .map(|r| {
            let n: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                vec![1.0 / (r.len() as f64).sqrt(); r.len()]
            } else {
                r.iter().map(|v| v / n).collect()
            }
        })
        .collect()
}

fn factorial(p: usize) -> f64 {
    (1..=p).map(|k| k as f64).product()
}

/// `order = None` selects the exact Gaussian.
pub fn rbf(f: &[Vec<f64>], gamma: f64, order: Option<usize>) -> Vec<Vec<f64>> {
    let u = unit_rows(f);
    let b = u.len();
    let mut g = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in 0..b {
            g[i][j] = match order {
                None => {
                    let mut d2 = 0.0;
                    for k in 0..u[i].len() {
                        d2 += (u[i][k] - u[j][k]).powi(2);
                    }
                    (-gamma * d2).exp()
                }
                Some(p_max) => {
                    let mut dot = 0.0;
                    for k in 0..u[i].len() {
                        dot += u[i][k] * u[j][k];
                    }
                    let mut s = 0.0;
                    for p in 0..=p_max {
                        s += (-2.0 * gamma).exp() * (2.0 * gamma).powi(p as i32) / factorial(p)
                            * dot.powi(p as i32);
                    }
                    s
                }
            };
        }
    }
    g
}

fn linear_resize(row: &[f64], t_new: usize) -> Vec<f64> {
    let t = row.len();
    if t == t_new {
        return row.to_vec();
    }
    (0..t_new)
        .map(|j| {
            let pos = j as f64 * (t - 1) as f64 / (t_new - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(t - 1);
            let frac = pos - lo as f64;
            row[lo] * (1.0 - frac) + row[hi] * frac
        })
        .collect()
}

/// Selective correlation loss over `(teacher, student)` features `[b][c][t]`.
pub fn selective(pairs: &[(V3, V3)], q: usize, gamma: f64, order: Option<usize>) -> f64 {
    let mut total = 0.0;
    for (ft, fs) in pairs {
        let b = fs.len();
        let t_s = fs[0][0].len();
        let kt = select(ft[0].len(), q);
        let ks = select(fs[0].len(), q);
        let n = kt.len().min(ks.len());
        let mut acc = 0.0;
        for idx in 0..n {
            let rows_t: Vec<Vec<f64>> = (0..b).map(|i| linear_resize(&ft[i][kt[idx]], t_s)).collect();
            let rows_s: Vec<Vec<f64>> = (0..b).map(|i| fs[i][ks[idx]].clone()).collect();
            let gt = rbf(&rows_t, gamma, order);
            let gs = rbf(&rows_s, gamma, order);
            for i in 0..b {
                for j in 0..b {
                    acc += (gt[i][j] - gs[i][j]).powi(2);
                }
            }
        }
        total += acc / (b * b * n) as f64;
    }
    total / pairs.len() as f64
}

pub fn sp(ft: &[Vec<f64>], fs: &[Vec<f64>]) -> f64 {
    let map = |f: &[Vec<f64>]| {
        let u: Vec<Vec<f64>> = f
            .iter()
            .map(|r| {
                let n: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(|v| if n > 0.0 { v / n } else { *v }).collect()
            })
            .collect();
        let b = u.len();
        let mut m = vec![vec![0.0; b]; b];
        for i in 0..b {
            for j in 0..b {
                for k in 0..u[i].len() {
                    m[i][j] += u[i][k] * u[j][k];
                }
            }
        }
        m
    };
    let (mt, ms) = (map(ft), map(fs));
    let b = ft.len();
    let mut s = 0.0;
    for i in 0..b {
        for j in 0..b {
            s += (mt[i][j] - ms[i][j]).powi(2);
        }
    }
    s / (b * b) as f64
}

pub fn at(ft: &V3, fs: &V3) -> f64 {
    let att = |f: &V3, i: usize| -> Vec<f64> {
        let c = f[i].len();
        let t = f[i][0].len();
        let mut a = vec![0.0; t];
        for k in 0..c {
            for j in 0..t {
                a[j] += f[i][k][j] * f[i][k][j] / c as f64;
            }
        }
        let n: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            a.iter().map(|v| v / n).collect()
        } else {
            a
        }
    };
    let b = fs.len();
    let t_s = fs[0][0].len();
    let mut s = 0.0;
    for i in 0..b {
        let resized: Vec<Vec<f64>> = ft[i].iter().map(|r| linear_resize(r, t_s)).collect();
        let at = att(&vec![resized], 0);
        let as_ = att(fs, i);
        for j in 0..t_s {
            s += (at[j] - as_[j]).powi(2);
        }
    }
    s / b as f64
}

pub fn vae_kl(mu: &V3, logvar: &V3) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for i in 0..mu.len() {
        for k in 0..mu[i].len() {
            for j in 0..mu[i][k].len() {
                let (m, lv) = (mu[i][k][j], logvar[i][k][j]);
                s += 0.5 * (m * m + lv.exp() - 1.0 - lv);
                n += 1.0;
            }
        }
    }
    s / n
}

pub fn ece_foot(pred: &[f64], truth: &[f64], bins: usize) -> f64 {
    let n = pred.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let mut count = 0.0;
        let mut sp = 0.0;
        let mut st = 0.0;
        for i in 0..pred.len() {
            let p = pred[i];
            let inside = if b + 1 == bins { p >= lo && p <= hi } else { p >= lo && p < hi };
            if inside {
                count += 1.0;
                sp += p;
                st += truth[i];
            }
        }
        if count > 0.0 {
            total += count / n * (sp / count - st / count).abs();
        }
    }
    total * 100.0
}

/// Central differences of `f` at `x`, step `h`.
pub fn numeric_grad<D: Dimension>(
    x: &Array<f64, D>,
    h: f64,
    mut f: impl FnMut(&Array<f64, D>) -> f64,
) -> Array<f64, D> {
    let mut g = Array::zeros(x.raw_dim());
    let mut xp = x.clone();
    for (idx, gi) in g.iter_mut().enumerate() {
        let orig = xp.as_slice().expect("standard layout")[idx];
        xp.as_slice_mut().unwrap()[idx] = orig + h;
        let up = f(&xp);
        xp.as_slice_mut().unwrap()[idx] = orig - h;
        let down = f(&xp);
        xp.as_slice_mut().unwrap()[idx] = orig;
        *gi = (up - down) / (2.0 * h);
    }
    g
}

/// `|a - n| / max(|a|, |n|)` in the Euclidean norm (0 when both vanish).
pub fn rel_err<D: Dimension>(analytic: &Array<f64, D>, numeric: &Array<f64, D>) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}
