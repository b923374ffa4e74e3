use ndarray::{s, Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::temporal_resize;

/// Evenly spaced channel indices: stride `ceil(c / q)` starting at 0.
/// A `q` larger than `c` is clamped to `c`.
pub fn select_channel_indices(c: usize, q: usize) -> Vec<usize> {
    if c == 0 || q == 0 {
        return Vec::new();
    }
    let q = if q > c {
        log::warn!("q = {q} exceeds channel count {c}; using {c}");
        c
    } else {
        q
    };
    let m = c.div_ceil(q);
    (0..c).step_by(m).take(q).collect()
}

/// Teacher/student channel pairs for one tap: each side is selected on its own
/// channel count and the lists are matched position by position.
pub fn paired_channel_indices(c_t: usize, c_s: usize, q: usize) -> Vec<(usize, usize)> {
    let kt = select_channel_indices(c_t, q);
    let ks = select_channel_indices(c_s, q);
    kt.into_iter().zip(ks).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum KernelMode {
    /// `exp(-gamma * |u_i - u_j|^2)`.
    Exact,
    /// Truncated series `sum_p e^{-2 gamma} (2 gamma)^p / p! * (u_i . u_j)^p`.
    Taylor { order: usize },
}

fn normalize_rows(f: ArrayView2<f64>) -> (Array2<f64>, Vec<f64>) {
    let (b, t) = f.dim();
    let mut u = Array2::zeros((b, t));
    let mut norms = vec![0.0; b];
    for i in 0..b {
        let norm = f.row(i).dot(&f.row(i)).sqrt();
        norms[i] = norm;
        if norm > 0.0 {
            u.row_mut(i).assign(&(&f.row(i) / norm));
        } else {
            log::debug!("zero feature row {i} replaced by the uniform unit vector");
            u.row_mut(i).fill(1.0 / (t as f64).sqrt());
        }
    }
    (u, norms)
}

fn taylor_terms(gamma: f64, order: usize, d: f64) -> (f64, f64) {
    // value and derivative in d of sum_p (2 gamma d)^p / p!
    let a = 2.0 * gamma;
    let (mut value, mut deriv) = (0.0, 0.0);
    let mut term = 1.0; // (a d)^p / p!
    let mut dterm = 0.0;
    for p in 0..=order {
        if p > 0 {
            dterm = a * term; // derivative of term p equals a * term_{p-1}
            term *= a * d / p as f64;
        }
        value += term;
        deriv += dterm;
    }
    (value, deriv)
}

/// Kernel matrix over L2-normalized rows of `f` (`[b, t]`).
pub fn rbf_correlation_map(f: ArrayView2<f64>, gamma: f64, mode: KernelMode) -> Array2<f64> {
    let (u, _) = normalize_rows(f);
    kernel_of_unit_rows(&u, gamma, mode)
}

fn kernel_of_unit_rows(u: &Array2<f64>, gamma: f64, mode: KernelMode) -> Array2<f64> {
    let b = u.nrows();
    let mut g = Array2::zeros((b, b));
    let scale = (-2.0 * gamma).exp();
    for i in 0..b {
        for j in i..b {
            let v = match mode {
                KernelMode::Exact => {
                    let d2: f64 = u
                        .row(i)
                        .iter()
                        .zip(u.row(j))
                        .map(|(a, c)| (a - c) * (a - c))
                        .sum();
                    (-gamma * d2).exp()
                }
                KernelMode::Taylor { order } => {
                    scale * taylor_terms(gamma, order, u.row(i).dot(&u.row(j))).0
                }
            };
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
    g
}

/// Gradient of `sum(dg * G)` with respect to the raw rows `f`.
pub fn rbf_correlation_map_backward(
    f: ArrayView2<f64>,
    gamma: f64,
    mode: KernelMode,
    dg: &Array2<f64>,
) -> Array2<f64> {
    let (u, norms) = normalize_rows(f);
    let g = kernel_of_unit_rows(&u, gamma, mode);
    let (b, t) = u.dim();
    let scale = (-2.0 * gamma).exp();
    // The kernel is symmetric, so d/du_i sum_jk dg_jk G_jk = sum_j (dg_ij + dg_ji) dk(u_i, u_j)/du_i.
    let mut du = Array2::<f64>::zeros((b, t));
    for i in 0..b {
        for j in 0..b {
            let w = dg[[i, j]] + dg[[j, i]];
            if w == 0.0 {
                continue;
            }
            match mode {
                KernelMode::Exact => {
                    if i != j {
                        let c = -2.0 * gamma * g[[i, j]] * w;
                        let diff = &u.row(i) - &u.row(j);
                        du.row_mut(i).scaled_add(c, &diff);
                    }
                }
                KernelMode::Taylor { order } => {
                    let d = u.row(i).dot(&u.row(j));
                    let c = scale * taylor_terms(gamma, order, d).1 * w;
                    let uj = u.row(j).to_owned();
                    du.row_mut(i).scaled_add(c, &uj);
                }
            }
        }
    }
    // back through u = f / |f|; replaced zero rows carry no gradient
    let mut df = Array2::zeros((b, t));
    for i in 0..b {
        if norms[i] == 0.0 {
            continue;
        }
        let gi = du.row(i);
        let proj = u.row(i).dot(&gi);
        let row = (&gi - &(&u.row(i) * proj)) / norms[i];
        df.row_mut(i).assign(&row);
    }
    df
}

/// Kernel maps for the selected channels of one `[b, c, t]` feature.
pub fn selected_correlation_maps(
    feature: &Array3<f64>,
    q: usize,
    gamma: f64,
    mode: KernelMode,
) -> Vec<(usize, Array2<f64>)> {
    select_channel_indices(feature.dim().1, q)
        .into_iter()
        .map(|k| (k, rbf_correlation_map(feature.slice(s![.., k, ..]), gamma, mode)))
        .collect()
}

/// Mean squared difference of selected teacher/student kernel maps, averaged over pairs.
/// Features are `[b, c, t]`; teacher features are resized to the student's length.
pub fn selective_correlation_loss(
    pairs: &[(&Array3<f64>, &Array3<f64>)],
    q: usize,
    gamma: f64,
    mode: KernelMode,
) -> Result<f64> {
    selective_correlation_loss_grad(pairs, q, gamma, mode).map(|(l, _)| l)
}

/// Loss and gradient for each student feature.
pub fn selective_correlation_loss_grad(
    pairs: &[(&Array3<f64>, &Array3<f64>)],
    q: usize,
    gamma: f64,
    mode: KernelMode,
) -> Result<(f64, Vec<Array3<f64>>)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no layer pairs to match".into()));
    }
    if q == 0 {
        return Err(Error::InvalidArgument("q must be at least 1".into()));
    }
    let n_pairs = pairs.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(pairs.len());
    for &(teacher, student) in pairs {
        let (b, c_s, t_s) = student.dim();
        let (b_t, c_t, t_t) = teacher.dim();
        if b != b_t {
            return Err(Error::shape(student.dim(), teacher.dim()));
        }
        let resized;
        let teacher = if t_t != t_s {
            resized = temporal_resize(teacher, t_s)?;
            &resized
        } else {
            teacher
        };
        let channels = paired_channel_indices(c_t, c_s, q);
        let norm = (b * b * channels.len()) as f64 * n_pairs;
        let mut grad = Array3::zeros(student.dim());
        for (kt, ks) in channels {
            let gt = rbf_correlation_map(teacher.slice(s![.., kt, ..]), gamma, mode);
            let fs = student.slice(s![.., ks, ..]);
            let gs = rbf_correlation_map(fs, gamma, mode);
            let diff = &gs - &gt;
            total += diff.iter().map(|d| d * d).sum::<f64>() / norm;
            let dg = diff * (2.0 / norm);
            let df = rbf_correlation_map_backward(fs, gamma, mode, &dg);
            grad.slice_mut(s![.., ks, ..]).assign(&df);
        }
        grads.push(grad);
    }
    Ok((total, grads))
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn channel_selection_examples() {
        assert_eq!(select_channel_indices(64, 8), vec![0, 8, 16, 24, 32, 40, 48, 56]);
        assert_eq!(select_channel_indices(8, 8), (0..8).collect::<Vec<_>>());
        assert_eq!(select_channel_indices(3, 8), vec![0, 1, 2]);
        assert_eq!(select_channel_indices(10, 4), vec![0, 3, 6, 9]);
        assert_eq!(select_channel_indices(9, 4), vec![0, 3, 6]);
    }

    #[test]
    fn pairing_truncates_to_shorter_list() {
        assert_eq!(paired_channel_indices(64, 3, 8), vec![(0, 0), (8, 1), (16, 2)]);
    }

    #[test]
    fn kernel_examples() {
        let same = array![[1.0, 2.0], [2.0, 4.0]];
        let g = rbf_correlation_map(same.view(), 0.4, KernelMode::Exact);
        assert_abs_diff_eq!(g, Array2::ones((2, 2)), epsilon = 1e-15);

        let ortho = array![[1.0, 0.0], [0.0, 3.0]];
        let exact = rbf_correlation_map(ortho.view(), 0.4, KernelMode::Exact);
        let taylor = rbf_correlation_map(ortho.view(), 0.4, KernelMode::Taylor { order: 2 });
        assert_abs_diff_eq!(exact[[0, 1]], (-0.8f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(taylor[[0, 1]], (-0.8f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(taylor[[0, 0]], (-0.8f64).exp() * 2.12, epsilon = 1e-15);
        assert_abs_diff_eq!(taylor[[0, 0]], 0.9526, epsilon = 1e-4);
        assert_eq!(exact[[1, 1]], 1.0);
    }

    #[test]
    fn zero_rows_become_uniform() {
        let f = array![[0.0, 0.0], [1.0, 1.0]];
        let g = rbf_correlation_map(f.view(), 0.4, KernelMode::Exact);
        assert_abs_diff_eq!(g[[0, 1]], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn loss_arithmetic() {
        let f = Array3::from_shape_fn((4, 2, 3), |(i, c, t)| (i * 3 + c + t * t) as f64 + 0.5);
        let pairs = [(&f, &f)];
        assert_eq!(selective_correlation_loss(&pairs, 8, 0.4, KernelMode::Exact).unwrap(), 0.0);
        let g = array![[0.3, 0.9], [-0.4, 0.1]];
        let h = array![[0.2, -0.5], [0.8, 0.4]];
        let ft = g.clone().into_shape_with_order((2, 1, 2)).unwrap();
        let fs = h.clone().into_shape_with_order((2, 1, 2)).unwrap();
        let one = selective_correlation_loss(&[(&ft, &fs)], 8, 0.4, KernelMode::Exact).unwrap();
        let two =
            selective_correlation_loss(&[(&ft, &fs), (&ft, &fs)], 8, 0.4, KernelMode::Exact).unwrap();
        assert_abs_diff_eq!(one, two, epsilon = 1e-15);
        assert!(selective_correlation_loss(&[], 8, 0.4, KernelMode::Exact).is_err());
    }
}
