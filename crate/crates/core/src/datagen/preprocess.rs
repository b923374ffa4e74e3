use ndarray::{Array, Array2, Array4, Axis, Dimension};

use super::session::{RawSession, GRAVITY};
use super::{GRID_H, GRID_W};
use crate::error::{Error, Result};

/// Sensor ceiling used to map pressure onto [0, 1].
pub const INSOLE_FULL_SCALE_PSI: f32 = 30.0;

const E: f32 = 0.33;
const F: f32 = 0.67;

// Row 0 is the toe, row 15 the heel.
#[rustfmt::skip]
const INSOLE_OUTLINE: [[f32; GRID_W]; GRID_H] = [
    [0.0, 0.0, E,   F,   F,   E,   0.0, 0.0],
    [0.0, E,   1.0, 1.0, 1.0, F,   0.0, 0.0],
    [E,   1.0, 1.0, 1.0, 1.0, 1.0, E,   0.0],
    [F,   1.0, 1.0, 1.0, 1.0, 1.0, F,   0.0],
    [F,   1.0, 1.0, 1.0, 1.0, 1.0, 1.0, E  ],
    [E,   1.0, 1.0, 1.0, 1.0, 1.0, 1.0, E  ],
    [0.0, F,   1.0, 1.0, 1.0, 1.0, F,   0.0],
    [0.0, F,   1.0, 1.0, 1.0, 1.0, E,   0.0],
    [0.0, E,   1.0, 1.0, 1.0, F,   0.0, 0.0],
    [0.0, E,   1.0, 1.0, 1.0, F,   0.0, 0.0],
    [0.0, F,   1.0, 1.0, 1.0, F,   0.0, 0.0],
    [0.0, F,   1.0, 1.0, 1.0, F,   0.0, 0.0],
    [0.0, F,   1.0, 1.0, 1.0, 1.0, E,   0.0],
    [0.0, E,   1.0, 1.0, 1.0, 1.0, E,   0.0],
    [0.0, 0.0, F,   1.0, 1.0, F,   0.0, 0.0],
    [0.0, 0.0, E,   F,   F,   E,   0.0, 0.0],
];

/// Effective pixel coverage of the insole outline: 1 inside, 0.33/0.67 on
/// the boundary, 0 outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionMask {
    pub grid: [[f32; GRID_W]; GRID_H],
}

impl FractionMask {
    pub fn value(&self, row: usize, col: usize) -> f32 {
        self.grid[row][col]
    }

    /// Cells the sensor physically covers.
    pub fn covers(&self, row: usize, col: usize) -> bool {
        self.grid[row][col] > 0.0
    }

    pub fn to_array(&self) -> Array2<f32> {
        Array2::from_shape_fn((GRID_H, GRID_W), |(r, c)| self.grid[r][c])
    }
}

pub fn fraction_mask() -> FractionMask {
    FractionMask {
        grid: INSOLE_OUTLINE,
    }
}

/// Multiplies every trailing 16x8 frame of `frames` by the mask.
pub fn apply_fraction<D: Dimension>(
    frames: &Array<f32, D>,
    mask: &FractionMask,
) -> Result<Array<f32, D>> {
    let shape = frames.shape();
    let nd = shape.len();
    if nd < 2 || shape[nd - 2] != GRID_H || shape[nd - 1] != GRID_W {
        return Err(Error::shape(
            format!("[.., {GRID_H}, {GRID_W}]"),
            shape.to_vec(),
        ));
    }
    let mut out = frames.as_standard_layout().into_owned();
    let flat = out
        .as_slice_mut()
        .expect("standard layout array is contiguous");
    let cells: Vec<f32> = mask.grid.iter().flatten().copied().collect();
    for frame in flat.chunks_exact_mut(GRID_H * GRID_W) {
        for (v, m) in frame.iter_mut().zip(&cells) {
            *v *= m;
        }
    }
    Ok(out)
}

/// Second-order Butterworth low-pass section in transposed direct form II.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn butterworth_lowpass(cutoff: f64, rate: f64) -> Self {
        let k = (std::f64::consts::PI * cutoff / rate).tan();
        let sqrt2 = std::f64::consts::SQRT_2;
        let norm = 1.0 / (1.0 + sqrt2 * k + k * k);
        let b0 = k * k * norm;
        Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - sqrt2 * k + k * k) * norm],
        }
    }

    /// Filter state that makes a constant input `x0` a steady state.
    fn steady_state(&self, x0: f64) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * gain;
        let z1 = b1 - a1 * gain + z2;
        [z1 * x0, z2 * x0]
    }

    fn run(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let [mut z1, mut z2] = self.steady_state(first);
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z1;
            z1 = b1 * input - a1 * y + z2;
            z2 = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Forward-backward second-order Butterworth low-pass with odd-reflection
/// padding. Net phase is zero and DC gain is one.
pub fn zero_lag_lowpass(signal: &[f64], cutoff: f64, rate: f64) -> Result<Vec<f64>> {
    if !(rate > 0.0) || !(cutoff > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cutoff ({cutoff}) and rate ({rate}) must be positive"
        )));
    }
    if cutoff >= rate / 2.0 {
        return Err(Error::InvalidArgument(format!(
            "cutoff {cutoff} Hz is not below the Nyquist frequency {} Hz",
            rate / 2.0
        )));
    }
    let n = signal.len();
    if n < 2 {
        return Ok(signal.to_vec());
    }
    let filter = Biquad::butterworth_lowpass(cutoff, rate);
    let pad = 9.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (head, tail) = (signal[0], signal[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * head - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * tail - signal[n - 1 - i]));

    filter.run(&mut ext);
    ext.reverse();
    filter.run(&mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Resamples by linear interpolation, low-passing first when decimating by
/// more than two.
pub fn resample_to(signal: &[f64], from_rate: f64, to_rate: f64) -> Result<Vec<f64>> {
    if !(from_rate > 0.0) || !(to_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sample rates must be positive (got {from_rate} -> {to_rate})"
        )));
    }
    if from_rate < to_rate {
        return Err(Error::InvalidArgument(format!(
            "upsampling is not supported ({from_rate} -> {to_rate})"
        )));
    }
    if from_rate == to_rate {
        return Ok(signal.to_vec());
    }
    let filtered;
    let source = if from_rate > 2.0 * to_rate {
        filtered = zero_lag_lowpass(signal, 0.4 * to_rate, from_rate)?;
        filtered.as_slice()
    } else {
        signal
    };
    let ratio = from_rate / to_rate;
    let out_len = (signal.len() as f64 * to_rate / from_rate).floor() as usize;
    let last = source.len().saturating_sub(1);
    Ok((0..out_len)
        .map(|j| {
            let pos = j as f64 * ratio;
            let i = (pos.floor() as usize).min(last);
            let frac = pos - i as f64;
            if i == last || frac == 0.0 {
                source[i]
            } else {
                source[i] * (1.0 - frac) + source[i + 1] * frac
            }
        })
        .collect())
}

/// Largest GRF across `sessions`, in units of body weight.
pub fn grf_ceiling(sessions: &[RawSession]) -> f64 {
    sessions
        .iter()
        .map(|s| {
            let bw = s.profile.body_weight * GRAVITY;
            s.grf.fold(0.0_f64, |m, &v| m.max(v)) / bw
        })
        .fold(0.0, f64::max)
}

/// A session mapped onto [0, 1] with the constants needed to undo it.
#[derive(Debug, Clone)]
pub struct NormalizedSession {
    /// 2 x N, fraction of `grf_ceiling_bw` body weights.
    pub grf: Array2<f32>,
    /// 2 x N x 16 x 8, fraction of sensor full scale.
    pub insole: Array4<f32>,
    pub grf_ceiling_bw: f64,
    pub body_weight: f64,
    pub subject_id: u32,
    pub speed: f64,
    pub rate_hz: f64,
}

impl NormalizedSession {
    pub fn len(&self) -> usize {
        self.grf.len_of(Axis(1))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Divides GRF by body weight and then by `grf_ceiling_bw`, insole by the
/// sensor full scale. Values outside [0, 1] saturate.
pub fn normalize_pair(session: &RawSession, grf_ceiling_bw: f64) -> Result<NormalizedSession> {
    let bw = session.profile.body_weight;
    if !(bw > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "body weight must be positive, got {bw}"
        )));
    }
    let max_grf = session.grf.fold(0.0_f64, |m, &v| m.max(v));
    if !(max_grf > 0.0) {
        return Err(Error::InvalidArgument(
            "session has no positive GRF sample".into(),
        ));
    }
    if !(grf_ceiling_bw > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "GRF ceiling must be positive, got {grf_ceiling_bw}"
        )));
    }
    let scale = 1.0 / (bw * GRAVITY * grf_ceiling_bw);
    let grf = session
        .grf
        .mapv(|v| (v * scale).clamp(0.0, 1.0) as f32);
    let insole = session
        .insole
        .mapv(|v| (v / INSOLE_FULL_SCALE_PSI).clamp(0.0, 1.0));
    Ok(NormalizedSession {
        grf,
        insole,
        grf_ceiling_bw,
        body_weight: bw,
        subject_id: session.profile.subject_id,
        speed: session.speed,
        rate_hz: session.rate_hz,
    })
}
