use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::preprocess::{fraction_mask, INSOLE_FULL_SCALE_PSI};
use super::profile::{mix_seed, SubjectProfile};
use super::{FEET, GRID_H, GRID_W};
use crate::error::{Error, Result};

/// Standard gravity, m/s^2.
pub const GRAVITY: f64 = 9.81;

/// Treadmill speeds of the recorded protocol (slow, regular, brisk, fast), m/s.
pub const PAPER_SPEEDS: [f64; 4] = [0.88, 1.00, 1.25, 1.50];

const BLOB_SIGMA: f64 = 1.2;
/// Partial-sensor cells that always read zero.
const DEAD_CELLS: [(usize, usize); 4] = [(2, 6), (8, 1), (11, 5), (5, 7)];

/// Paired force-plate and insole recording, both at `rate_hz`.
#[derive(Debug, Clone)]
pub struct RawSession {
    /// 2 x N vertical force in Newtons (left, right).
    pub grf: Array2<f64>,
    /// 2 x N x 16 x 8 pressure in psi.
    pub insole: Array4<f32>,
    pub rate_hz: f64,
    pub speed: f64,
    pub profile: SubjectProfile,
}

impl RawSession {
    pub fn len(&self) -> usize {
        self.grf.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Vertical GRF over one stance, in body weights. `u` is stance progress in [0, 1].
fn stance_profile(u: f64, speed: f64) -> f64 {
    let s = (speed - 0.88) / 0.62;
    let peak = 1.0 + 0.1 * s;
    let valley = 0.74 - 0.08 * s;
    let heel = peak - 0.5 * valley;
    let push = 0.97 * heel;
    let hump = |c: f64| {
        let d = (u - c) / 0.25;
        if d.abs() < 1.0 {
            0.5 * (1.0 + (std::f64::consts::PI * d).cos())
        } else {
            0.0
        }
    };
    let body = (std::f64::consts::PI * u).sin();
    heel * hump(0.25) + push * hump(0.75) + valley * body * body
}

fn stance_fraction(speed: f64) -> f64 {
    (0.59 - 0.04 * (speed - 1.0)).clamp(0.55, 0.595)
}

/// Gait cycles per second for a profile at `speed`.
pub(crate) fn stride_frequency(profile: &SubjectProfile, speed: f64) -> f64 {
    0.5 * profile.cadence_base * speed.powf(0.35)
}

/// Synthesizes a treadmill session: M-shaped stance forces alternating
/// between feet, and a Gaussian pressure blob rolling heel to toe whose
/// pixel sum follows the force.
pub fn synth_session(
    profile: &SubjectProfile,
    speed: f64,
    duration: f64,
    rate: f64,
) -> Result<RawSession> {
    if !(0.5..=2.0).contains(&speed) {
        return Err(Error::InvalidArgument(format!(
            "speed {speed} m/s outside [0.5, 2.0]"
        )));
    }
    if !(rate > 0.0) || !(duration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration ({duration}) and rate ({rate}) must be positive"
        )));
    }
    let stride = 1.0 / stride_frequency(profile, speed);
    if duration < stride {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} s shorter than one gait cycle ({stride:.3} s)"
        )));
    }
    let n = (duration * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(profile.rng_seed, speed.to_bits()));
    let stance_frac = stance_fraction(speed);
    let bw_newton = profile.body_weight * GRAVITY;

    // Clean force and stance progress (NaN during swing) per foot.
    let mut clean = Array2::<f64>::zeros((FEET, n));
    let mut progress = Array2::<f64>::from_elem((FEET, n), f64::NAN);
    let mut strike = -2.0 * stride + rng.gen::<f64>() * stride;
    while strike < duration {
        let period = stride * (1.0 + rng.gen_range(-0.02..0.02));
        let stance = stance_frac * period;
        for foot in 0..FEET {
            let side = if foot == 0 { -0.5 } else { 0.5 };
            let gain = (1.0 + side * profile.asymmetry) * (1.0 + rng.gen_range(-0.02..0.02));
            let start = strike + foot as f64 * 0.5 * period * (1.0 + 0.02 * profile.asymmetry);
            let first = (start * rate).ceil().max(0.0) as usize;
            let last = (((start + stance) * rate).floor().max(-1.0) + 1.0) as usize;
            for i in first..last.min(n) {
                let u = (i as f64 / rate - start) / stance;
                if (0.0..=1.0).contains(&u) {
                    clean[[foot, i]] = bw_newton * gain * stance_profile(u, speed);
                    progress[[foot, i]] = u;
                }
            }
        }
        strike += period;
    }

    let mask = fraction_mask();
    let mut live = [[false; GRID_W]; GRID_H];
    for (r, row) in live.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = mask.covers(r, c) && !DEAD_CELLS.contains(&(r, c));
        }
    }

    let pressure_noise = Normal::new(0.0, profile.noise_level * f64::from(INSOLE_FULL_SCALE_PSI))
        .expect("noise level is finite and non-negative");
    let force_noise = Normal::new(0.0, 0.5 * profile.noise_level * bw_newton)
        .expect("noise level is finite and non-negative");

    let mut insole = Array4::<f32>::zeros((FEET, n, GRID_H, GRID_W));
    let mut weights = [[0.0_f64; GRID_W]; GRID_H];
    for foot in 0..FEET {
        let lateral = if foot == 0 { -0.4 } else { 0.4 };
        for i in 0..n {
            let u = progress[[foot, i]];
            let drift = 1.0 + profile.drift_rate * (i as f64 / rate) / 60.0;
            let load = if u.is_nan() {
                0.0
            } else {
                profile.pressure_gain * clean[[foot, i]] / bw_newton * drift
            };
            if load > 0.0 {
                let (rc, cc) = (
                    13.5 - 12.0 * u,
                    3.5 + lateral * (std::f64::consts::PI * u).sin(),
                );
                let mut total = 0.0;
                for r in 0..GRID_H {
                    for c in 0..GRID_W {
                        let w = if live[r][c] {
                            let d2 = (r as f64 - rc).powi(2) + (c as f64 - cc).powi(2);
                            (-d2 / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp()
                        } else {
                            0.0
                        };
                        weights[r][c] = w;
                        total += w;
                    }
                }
                for r in 0..GRID_H {
                    for c in 0..GRID_W {
                        insole[[foot, i, r, c]] = (load * weights[r][c] / total) as f32;
                    }
                }
            }
            if profile.noise_level > 0.0 {
                for r in 0..GRID_H {
                    for c in 0..GRID_W {
                        if live[r][c] {
                            insole[[foot, i, r, c]] += pressure_noise.sample(&mut rng) as f32;
                        }
                    }
                }
            }
        }
    }
    insole.mapv_inplace(|v| v.clamp(0.0, INSOLE_FULL_SCALE_PSI));

    let mut grf = clean;
    if profile.noise_level > 0.0 {
        grf.mapv_inplace(|v| (v + force_noise.sample(&mut rng)).max(0.0));
    }

    Ok(RawSession {
        grf,
        insole,
        rate_hz: rate,
        speed,
        profile: profile.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::make_profile;
    use ndarray::Axis;

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx).powi(2);
            syy += (b - my).powi(2);
        }
        sxy / (sxx * syy).sqrt()
    }

    fn quiet(id: u32) -> SubjectProfile {
        SubjectProfile {
            noise_level: 0.0,
            drift_rate: 0.0,
            ..make_profile(7, id)
        }
    }

    #[test]
    fn sample_count() {
        let s = synth_session(&make_profile(7, 0), 0.88, 10.0, 200.0).unwrap();
        assert_eq!(s.grf.dim(), (2, 2000));
        assert_eq!(s.insole.dim(), (2, 2000, GRID_H, GRID_W));
    }

    #[test]
    fn insole_sum_tracks_force_without_noise() {
        let s = synth_session(&quiet(3), 1.0, 20.0, 200.0).unwrap();
        for foot in 0..FEET {
            let sums: Vec<f64> = s
                .insole
                .index_axis(Axis(0), foot)
                .outer_iter()
                .map(|f| f.iter().map(|&v| f64::from(v)).sum())
                .collect();
            let grf: Vec<f64> = s.grf.row(foot).to_vec();
            let r = pearson(&sums, &grf);
            assert!(r > 0.99, "foot {foot}: r = {r}");
        }
    }

    #[test]
    fn faster_walking_has_higher_cadence() {
        let p = make_profile(7, 2);
        assert!(stride_frequency(&p, 1.5) >= stride_frequency(&p, 0.88));
    }

    #[test]
    fn peaks_and_alternation() {
        for id in 0..4 {
            let p = quiet(id);
            for &speed in &PAPER_SPEEDS {
                let s = synth_session(&p, speed, 12.0, 200.0).unwrap();
                let bw = p.body_weight * GRAVITY;
                for foot in 0..FEET {
                    let peak = s.grf.row(foot).fold(0.0_f64, |m, &v| m.max(v)) / bw;
                    assert!((0.93..=1.23).contains(&peak), "peak {peak} at {speed}");
                }
                let both = (0..s.len())
                    .filter(|&i| s.grf[[0, i]] > 0.0 && s.grf[[1, i]] > 0.0)
                    .count();
                assert!((both as f64) < 0.2 * s.len() as f64, "double support {both}");
                assert!(s.grf.iter().all(|&v| v >= 0.0));
                assert!(s.insole.iter().all(|&v| (0.0..=30.0).contains(&v)));
            }
        }
    }

    #[test]
    fn rejects_bad_speed() {
        let p = make_profile(7, 0);
        assert!(synth_session(&p, 0.3, 10.0, 200.0).is_err());
        assert!(synth_session(&p, 2.5, 10.0, 200.0).is_err());
        assert!(synth_session(&p, 1.0, 0.2, 200.0).is_err());
    }

    #[test]
    fn deterministic() {
        let p = make_profile(11, 1);
        let a = synth_session(&p, 1.25, 5.0, 200.0).unwrap();
        let b = synth_session(&p, 1.25, 5.0, 200.0).unwrap();
        assert_eq!(a.grf, b.grf);
        assert_eq!(a.insole, b.insole);
    }
}
