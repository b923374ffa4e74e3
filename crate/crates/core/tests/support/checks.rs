//! Randomized checks shared by the loss tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3, Array5};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use sckd::losses::{self, FeatureGrads, KernelMode, SckdParams, TapId};
use sckd::models::TapBundle;

use super::*;

pub struct KernelReport {
    pub max_asymmetry: f64,
    pub max_diag_dev: f64,
    pub min_eigenvalue: f64,
    pub max_taylor20_dev: f64,
    pub taylor2_diag: f64,
}

pub fn kernel_report(trials: usize, seed: u64) -> KernelReport {
    let mut r = rng(seed);
    let mut rep = KernelReport {
        max_asymmetry: 0.0,
        max_diag_dev: 0.0,
        min_eigenvalue: f64::INFINITY,
        max_taylor20_dev: 0.0,
        taylor2_diag: 0.0,
    };
    for _ in 0..trials {
        let b = r.gen_range(1..=8);
        let t = r.gen_range(1..=16);
        let f = rand2(&mut r, (b, t), -1.0, 1.0);
        let exact = losses::rbf_correlation_map(f.view(), 0.4, KernelMode::Exact);
        let taylor = losses::rbf_correlation_map(f.view(), 0.4, KernelMode::Taylor { order: 20 });
        let t2 = losses::rbf_correlation_map(f.view(), 0.4, KernelMode::Taylor { order: 2 });
        for i in 0..b {
            rep.max_diag_dev = rep.max_diag_dev.max((exact[[i, i]] - 1.0).abs());
            for j in 0..b {
                rep.max_asymmetry = rep.max_asymmetry.max((exact[[i, j]] - exact[[j, i]]).abs());
                rep.max_taylor20_dev =
                    rep.max_taylor20_dev.max((exact[[i, j]] - taylor[[i, j]]).abs());
            }
        }
        rep.taylor2_diag = t2[[0, 0]];
        let m = DMatrix::from_fn(b, b, |i, j| exact[[i, j]]);
        let eig = m.symmetric_eigen().eigenvalues.min();
        rep.min_eigenvalue = rep.min_eigenvalue.min(eig);
    }
    rep
}

fn tiny_dims(r: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(2..=4))
}

/// Max absolute deviation between the library and the scalar oracles, per loss.
pub fn oracle_errors(trials: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut errs = vec![
        ("L_gt", 0.0f64),
        ("L_KD_c", 0.0),
        ("L_sc", 0.0),
        ("SP", 0.0),
        ("AT", 0.0),
        ("vanilla KD", 0.0),
    ];
    let bump = |name: &str, e: f64, errs: &mut Vec<(&'static str, f64)>| {
        let slot = errs.iter_mut().find(|(n, _)| *n == name).expect("known loss");
        slot.1 = slot.1.max(e);
    };
    for _ in 0..trials {
        let (b, c, t) = tiny_dims(&mut r);
        let a = rand3(&mut r, (b, c, t), 0.0, 1.0);
        let y = rand3(&mut r, (b, c, t), 0.0, 1.0);
        let e = (losses::ground_truth_loss(&a, &y).unwrap() - mse(&v3(&a), &v3(&y))).abs();
        bump("L_gt", e, &mut errs);

        let yt = rand3(&mut r, (b, c, t), -2.0, 2.0);
        let ys = rand3(&mut r, (b, c, t), -2.0, 2.0);
        let e = (losses::output_kd_loss(&yt, &ys).unwrap() - output_kd(&v3(&yt), &v3(&ys))).abs();
        bump("L_KD_c", e, &mut errs);
        let e = (losses::vanilla_kd_loss(&yt, &ys, 4.0).unwrap() - vanilla_kd(&v3(&yt), &v3(&ys), 4.0)).abs();
        bump("vanilla KD", e, &mut errs);

        let c_t = r.gen_range(1..=4);
        let t_t = r.gen_range(2..=4);
        let ft = rand3(&mut r, (b, c_t, t_t), -1.0, 1.0);
        let fs = rand3(&mut r, (b, c, t), -1.0, 1.0);
        let q = r.gen_range(1..=4);
        for order in [None, Some(2)] {
            let mode = order.map_or(KernelMode::Exact, |o| KernelMode::Taylor { order: o });
            let lib = losses::selective_correlation_loss(&[(&ft, &fs)], q, 0.4, mode).unwrap();
            let oracle = selective(&[(v3(&ft), v3(&fs))], q, 0.4, order);
            bump("L_sc", (lib - oracle).abs(), &mut errs);
        }
        let e = (losses::at_loss(&ft, &fs).unwrap() - at(&v3(&ft), &v3(&fs))).abs();
        bump("AT", e, &mut errs);

        let gt = rand2(&mut r, (b, c * t), -1.0, 1.0);
        let gs = rand2(&mut r, (b, c_t * t_t), -1.0, 1.0);
        let e = (losses::sp_loss(gt.view(), gs.view()).unwrap() - sp(&v2(&gt), &v2(&gs))).abs();
        bump("SP", e, &mut errs);
    }
    errs
}

/// A student tap bundle with values on a 2^-8 grid so f32 perturbations are exact.
pub fn grid_bundle(r: &mut ChaCha8Rng, b: usize, t: usize) -> TapBundle {
    let q = |r: &mut ChaCha8Rng, lo: f32, hi: f32| -> f32 {
        let v: f32 = r.gen_range(lo..hi);
        (v * 256.0).round() / 256.0
    };
    let e1 = Array5::from_shape_simple_fn((b, 3, t / 2, 2, 2), || q(r, 0.0, 1.0));
    let e2 = Array5::from_shape_simple_fn((b, 4, t / 4, 2, 1), || q(r, 0.0, 1.0));
    let mid = Array3::from_shape_simple_fn((b, 5, t / 4), || q(r, -1.0, 1.0));
    let d1 = Array3::from_shape_simple_fn((b, 3, t / 2), || q(r, 0.0, 1.0));
    let d2 = Array3::from_shape_simple_fn((b, 2, t), || q(r, 0.0, 1.0));
    let y_hat = Array3::from_shape_simple_fn((b, 2, t), || q(r, 0.0, 1.0));
    TapBundle {
        e1,
        e2,
        mu: mid.clone(),
        mid,
        d1,
        d2,
        y_hat,
        logvar: None,
    }
}

fn bundle_entries(bundle: &mut TapBundle) -> Vec<&mut f32> {
    let mut out: Vec<&mut f32> = Vec::new();
    out.extend(bundle.y_hat.iter_mut());
    out.extend(bundle.e2.iter_mut());
    out.extend(bundle.mid.iter_mut());
    out.extend(bundle.d1.iter_mut());
    out
}

fn grad_entries(g: &FeatureGrads, bundle: &TapBundle) -> Vec<f64> {
    let mut out = Vec::new();
    let or3 = |a: &Option<Array3<f64>>, d: (usize, usize, usize)| a.clone().unwrap_or_else(|| Array3::zeros(d));
    out.extend(or3(&g.y_hat, bundle.y_hat.dim()).iter());
    out.extend(g.e2.clone().unwrap_or_else(|| Array5::zeros(bundle.e2.dim())).iter());
    out.extend(or3(&g.mid, bundle.mid.dim()).iter());
    out.extend(or3(&g.d1, bundle.d1.dim()).iter());
    out
}

fn max_rel(errs: &mut Vec<(&'static str, f64)>, name: &'static str, e: f64) {
    match errs.iter_mut().find(|(n, _)| *n == name) {
        Some(slot) => slot.1 = slot.1.max(e),
        None => errs.push((name, e)),
    }
}

/// Max relative gradient error per loss over random instances (f64 central differences, h = 1e-5).
pub fn gradient_errors(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    const H: f64 = 1e-5;
    let mut r = rng(seed);
    let mut errs = Vec::new();
    for _ in 0..instances {
        let b = r.gen_range(2..=4);
        let c = r.gen_range(1..=3);
        let t = r.gen_range(3..=6);
        let y = rand3(&mut r, (b, c, t), 0.0, 1.0);
        let x = rand3(&mut r, (b, c, t), 0.0, 1.0);
        let (_, g) = losses::ground_truth_loss_grad(&x, &y).unwrap();
        let n = numeric_grad(&x, H, |v| losses::ground_truth_loss(v, &y).unwrap());
        max_rel(&mut errs, "L_gt", rel_err(&g, &n));

        let yt = rand3(&mut r, (b, c, t), -2.0, 2.0);
        let (_, g) = losses::output_kd_loss_grad(&yt, &x).unwrap();
        let n = numeric_grad(&x, H, |v| losses::output_kd_loss(&yt, v).unwrap());
        max_rel(&mut errs, "L_KD_c", rel_err(&g, &n));

        let (_, g) = losses::vanilla_kd_loss_grad(&yt, &x, 4.0).unwrap();
        let n = numeric_grad(&x, H, |v| losses::vanilla_kd_loss(&yt, v, 4.0).unwrap());
        max_rel(&mut errs, "vanilla KD", rel_err(&g, &n));

        let ft = rand3(&mut r, (b, c + 1, t + 1), -1.0, 1.0);
        for (name, mode) in [
            ("L_sc exact", KernelMode::Exact),
            ("L_sc taylor", KernelMode::Taylor { order: 2 }),
        ] {
            let (_, g) = losses::selective_correlation_loss_grad(&[(&ft, &x)], 2, 0.4, mode).unwrap();
            let n = numeric_grad(&x, H, |v| {
                losses::selective_correlation_loss(&[(&ft, v)], 2, 0.4, mode).unwrap()
            });
            max_rel(&mut errs, name, rel_err(&g[0], &n));
        }

        let (_, g) = losses::at_loss_grad(&ft, &x).unwrap();
        let n = numeric_grad(&x, H, |v| losses::at_loss(&ft, v).unwrap());
        max_rel(&mut errs, "AT", rel_err(&g, &n));

        let st = rand2(&mut r, (b, 7), -1.0, 1.0);
        let ss = rand2(&mut r, (b, 5), -1.0, 1.0);
        let (_, g) = losses::sp_loss_grad(st.view(), ss.view()).unwrap();
        let n = numeric_grad(&ss, H, |v| losses::sp_loss(st.view(), v.view()).unwrap());
        max_rel(&mut errs, "SP", rel_err(&g, &n));

        let mu = rand3(&mut r, (b, c, t), -1.0, 1.0);
        let lv = rand3(&mut r, (b, c, t), -1.0, 1.0);
        let (_, gm, gl) = losses::vae_kl_grad(&mu, &lv).unwrap();
        let nm = numeric_grad(&mu, H, |v| losses::vae_kl(v, &lv).unwrap());
        let nl = numeric_grad(&lv, H, |v| losses::vae_kl(&mu, v).unwrap());
        max_rel(&mut errs, "VAE KL", rel_err(&gm, &nm).max(rel_err(&gl, &nl)));

        let logits = ndarray::Array1::from_shape_simple_fn(b, || r.gen_range(-3.0..3.0));
        let (_, g) = losses::bce_with_logits(logits.as_slice().unwrap(), 1.0);
        let n = numeric_grad(&logits, H, |v| losses::bce_with_logits(v.as_slice().unwrap(), 1.0).0);
        max_rel(&mut errs, "WAE adversarial", rel_err(&ndarray::Array1::from(g), &n));

        let f = rand2(&mut r, (b, t), -1.0, 1.0);
        let w = rand2(&mut r, (b, b), -1.0, 1.0);
        let mode = KernelMode::Taylor { order: 3 };
        let g = losses::rbf_correlation_map_backward(f.view(), 0.4, mode, &w);
        let n = numeric_grad(&f, H, |v| (&losses::rbf_correlation_map(v.view(), 0.4, mode) * &w).sum());
        max_rel(&mut errs, "RBF map", rel_err(&g, &n));
    }
    max_rel(&mut errs, "L_SCKD total", total_sckd_gradient_error(instances.min(5), seed ^ 0x5c));
    errs
}

/// The combined objective is evaluated on f32 tap bundles; its check perturbs grid
/// values by an exactly representable step instead of 1e-5.
pub fn total_sckd_gradient_error(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let params = SckdParams {
        pairs: vec![(TapId::E2, TapId::E2), (TapId::Mid, TapId::Mid), (TapId::D1, TapId::D1)],
        q: 2,
        ..Default::default()
    };
    for _ in 0..instances {
        let (b, t) = (3, 8);
        let teacher = grid_bundle(&mut r, b, t);
        let mut student = grid_bundle(&mut r, b, t);
        let y_gt = rand3(&mut r, (b, 2, t), 0.0, 1.0);
        let (_, g) = losses::total_sckd_loss_grad(&y_gt, &teacher, &student, &params).unwrap();
        let analytic = grad_entries(&g, &student);
        let h = 1.0f32 / 4096.0;
        let n_entries = bundle_entries(&mut student).len();
        let mut numeric = vec![0.0; n_entries];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = *bundle_entries(&mut student)[k];
            *bundle_entries(&mut student)[k] = orig + h;
            let up = losses::total_sckd_loss(&y_gt, &teacher, &student, &params).unwrap().total;
            *bundle_entries(&mut student)[k] = orig - h;
            let down = losses::total_sckd_loss(&y_gt, &teacher, &student, &params).unwrap().total;
            *bundle_entries(&mut student)[k] = orig;
            *slot = (up - down) / (2.0 * h as f64);
        }
        let a = ndarray::Array1::from(analytic);
        let n = ndarray::Array1::from(numeric);
        worst = worst.max(rel_err(&a, &n));
    }
    worst
}

pub fn slice_channel(a: &Array3<f64>, k: usize) -> Array2<f64> {
    a.slice(s![.., k, ..]).to_owned()
}
