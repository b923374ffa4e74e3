use ndarray::{Array3, Array5, Axis};
use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Mean over the two spatial axes: `[b, c, t, h, w] -> [b, c, t]`.
pub fn spatial_average_pool<A: Float + FromPrimitive>(feature: &Array5<A>) -> Array3<A> {
    let (b, c, t, h, w) = feature.dim();
    let scale = A::from_usize(h * w).map_or(A::one(), |n| A::one() / n);
    let mut out = Array3::zeros((b, c, t));
    for ((n, ch, k), v) in out.indexed_iter_mut() {
        let mut acc = A::zero();
        for y in 0..h {
            for x in 0..w {
                acc = acc + feature[[n, ch, k, y, x]];
            }
        }
        *v = acc * scale;
    }
    out
}

/// Adjoint of [`spatial_average_pool`].
pub fn spatial_average_pool_backward<A: Float + FromPrimitive>(
    grad: &Array3<A>,
    h: usize,
    w: usize,
) -> Array5<A> {
    let (b, c, t) = grad.dim();
    let scale = A::from_usize(h * w).map_or(A::one(), |n| A::one() / n);
    Array5::from_shape_fn((b, c, t, h, w), |(n, ch, k, _, _)| grad[[n, ch, k]] * scale)
}

/// Source index and weight pairs for align-corners linear interpolation.
fn resize_weights(t: usize, t_new: usize) -> Vec<(usize, f64)> {
    (0..t_new)
        .map(|j| {
            let pos = j as f64 * (t - 1) as f64 / (t_new - 1) as f64;
            let i = (pos.floor() as usize).min(t - 1);
            if i == t - 1 {
                (t - 2, 1.0)
            } else {
                (i, pos - i as f64)
            }
        })
        .collect()
}

fn check_lengths(t: usize, t_new: usize) -> Result<()> {
    if t < 2 || t_new < 2 {
        return Err(Error::InvalidArgument(format!(
            "temporal resize needs lengths >= 2 (got {t} -> {t_new})"
        )));
    }
    Ok(())
}

/// Linear interpolation along the last (temporal) axis, endpoints aligned.
pub fn temporal_resize<A: Float + FromPrimitive>(
    feature: &Array3<A>,
    t_new: usize,
) -> Result<Array3<A>> {
    let (b, c, t) = feature.dim();
    check_lengths(t, t_new)?;
    if t == t_new {
        return Ok(feature.clone());
    }
    let weights = resize_weights(t, t_new);
    let mut out = Array3::zeros((b, c, t_new));
    for (src, mut dst) in feature.lanes(Axis(2)).into_iter().zip(out.lanes_mut(Axis(2))) {
        for (v, &(i, f)) in dst.iter_mut().zip(&weights) {
            let f = A::from_f64(f).expect("finite weight");
            *v = src[i] * (A::one() - f) + src[i + 1] * f;
        }
    }
    Ok(out)
}

/// Adjoint of [`temporal_resize`]: maps a gradient at length `t_new` back to length `t`.
pub fn temporal_resize_backward<A: Float + FromPrimitive>(
    grad: &Array3<A>,
    t: usize,
) -> Result<Array3<A>> {
    let (b, c, t_new) = grad.dim();
    check_lengths(t, t_new)?;
    if t == t_new {
        return Ok(grad.clone());
    }
    let weights = resize_weights(t, t_new);
    let mut out = Array3::zeros((b, c, t));
    for (src, mut dst) in grad.lanes(Axis(2)).into_iter().zip(out.lanes_mut(Axis(2))) {
        for (g, &(i, f)) in src.iter().zip(&weights) {
            let f = A::from_f64(f).expect("finite weight");
            dst[i] = dst[i] + *g * (A::one() - f);
            dst[i + 1] = dst[i + 1] + *g * f;
        }
    }
    Ok(out)
}
