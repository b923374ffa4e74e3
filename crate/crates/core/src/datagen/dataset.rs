use std::collections::BTreeMap;

use log::debug;
use ndarray::{s, Array2, Array4};
use serde::{Deserialize, Serialize};

use super::preprocess::{
    apply_fraction, fraction_mask, grf_ceiling, normalize_pair, resample_to, zero_lag_lowpass,
    NormalizedSession, INSOLE_FULL_SCALE_PSI,
};
use super::profile::make_profile;
use super::session::{synth_session, RawSession, GRAVITY};
use super::{FEET, GRID_H, GRID_W, TARGET_RATE_HZ};
use crate::error::{Error, Result};

/// Leading seconds of every session discarded as treadmill acclimatisation.
pub const WARMUP_SECONDS: f64 = 10.0;

/// Usable seconds per session implied by the recorded per-subject window
/// counts (559 at t=100, 279 at t=200).
pub const REFERENCE_USABLE_SECONDS: f64 = 279.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub subjects: u32,
    pub speeds: Vec<f64>,
    pub window: usize,
    /// Session length including the warm-up.
    pub session_seconds: f64,
    pub rate_hz: f64,
    pub lowpass_hz: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DatasetConfig {
    /// 4 subjects x 2 speeds x 2 minutes.
    pub fn desk() -> Self {
        DatasetConfig {
            seed: 7,
            subjects: 4,
            speeds: vec![0.88, 1.25],
            window: 100,
            session_seconds: 120.0,
            rate_hz: TARGET_RATE_HZ,
            lowpass_hz: 10.0,
        }
    }

    /// Eight subjects at all four speeds, sessions sized to the recorded window counts.
    pub fn paper_sized(window: usize) -> Self {
        DatasetConfig {
            subjects: 8,
            speeds: super::PAPER_SPEEDS.to_vec(),
            window,
            session_seconds: WARMUP_SECONDS + REFERENCE_USABLE_SECONDS,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 {
            return Err(Error::Config("at least one subject is required".into()));
        }
        if self.speeds.is_empty() {
            return Err(Error::Config("at least one speed is required".into()));
        }
        if self.window < 2 {
            return Err(Error::Config(format!("window {} is too short", self.window)));
        }
        if !(self.rate_hz >= TARGET_RATE_HZ) {
            return Err(Error::Config(format!(
                "generator rate {} Hz is below the {TARGET_RATE_HZ} Hz target",
                self.rate_hz
            )));
        }
        if !(self.session_seconds > WARMUP_SECONDS) {
            return Err(Error::Config(format!(
                "sessions of {} s leave nothing after the {WARMUP_SECONDS} s warm-up",
                self.session_seconds
            )));
        }
        Ok(())
    }
}

/// One window: a 2 x t x 16 x 8 pressure clip and its 2 x t force trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub insole: Array4<f32>,
    pub grf: Array2<f32>,
    pub subject_id: u32,
    pub speed: f64,
}

/// Constants that map stored [0, 1] values back to physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub gravity: f64,
    pub insole_full_scale_psi: f64,
    /// Stored GRF of 1.0 equals this many body weights.
    pub grf_ceiling_bw: f64,
    pub body_weights: BTreeMap<u32, f64>,
    /// Largest GRF of each subject, in body weights.
    pub subject_grf_max_bw: BTreeMap<u32, f64>,
}

impl Scaling {
    /// Largest GRF among `subjects`, in body weights.
    pub fn split_max_bw(&self, subjects: &[u32]) -> Result<f64> {
        subjects.iter().try_fold(0.0_f64, |m, id| {
            self.subject_grf_max_bw
                .get(id)
                .map(|&v| m.max(v))
                .ok_or(Error::UnknownSubject(*id))
        })
    }
}

#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub window: usize,
    pub samples: Vec<Sample>,
    pub scaling: Scaling,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sorted distinct subject ids.
    pub fn subject_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.samples.iter().map(|s| s.subject_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Cuts a session into disjoint windows; the trailing remainder is dropped.
pub fn window_samples(session: &NormalizedSession, window: usize) -> Vec<Sample> {
    if window == 0 {
        return Vec::new();
    }
    let count = session.len() / window;
    (0..count)
        .map(|k| {
            let span = k * window..(k + 1) * window;
            Sample {
                insole: session
                    .insole
                    .slice(s![.., span.clone(), .., ..])
                    .to_owned(),
                grf: session.grf.slice(s![.., span]).to_owned(),
                subject_id: session.subject_id,
                speed: session.speed,
            }
        })
        .collect()
}

/// Train/test partition holding out one subject.
#[derive(Debug)]
pub struct LosoSplit<'a> {
    pub held_out: u32,
    pub train: Vec<&'a Sample>,
    pub test: Vec<&'a Sample>,
}

pub fn loso_split(dataset: &WindowedDataset, held_out: u32) -> Result<LosoSplit<'_>> {
    let (test, train): (Vec<&Sample>, Vec<&Sample>) = dataset
        .samples
        .iter()
        .partition(|s| s.subject_id == held_out);
    if test.is_empty() {
        return Err(Error::UnknownSubject(held_out));
    }
    Ok(LosoSplit {
        held_out,
        train,
        test,
    })
}

/// Resample to the target rate, low-pass the force, weight the pressure by
/// pixel coverage and drop the warm-up.
fn preprocess(raw: RawSession, config: &DatasetConfig) -> Result<RawSession> {
    let rate = TARGET_RATE_HZ;
    let resampled = if raw.rate_hz != rate {
        let n_out = (raw.len() as f64 * rate / raw.rate_hz).floor() as usize;
        let mut grf = Array2::zeros((FEET, n_out));
        for foot in 0..FEET {
            let series = resample_to(&raw.grf.row(foot).to_vec(), raw.rate_hz, rate)?;
            for (i, v) in series.into_iter().enumerate() {
                grf[[foot, i]] = v;
            }
        }
        let mut insole = Array4::zeros((FEET, n_out, GRID_H, GRID_W));
        for foot in 0..FEET {
            for r in 0..GRID_H {
                for c in 0..GRID_W {
                    let series: Vec<f64> = raw
                        .insole
                        .slice(s![foot, .., r, c])
                        .iter()
                        .map(|&v| f64::from(v))
                        .collect();
                    let out = resample_to(&series, raw.rate_hz, rate)?;
                    for (i, v) in out.into_iter().enumerate() {
                        insole[[foot, i, r, c]] = v as f32;
                    }
                }
            }
        }
        RawSession {
            grf,
            insole,
            rate_hz: rate,
            ..raw
        }
    } else {
        raw
    };

    let mut grf = resampled.grf.clone();
    for mut row in grf.outer_iter_mut() {
        let filtered = zero_lag_lowpass(&row.to_vec(), config.lowpass_hz, rate)?;
        for (v, f) in row.iter_mut().zip(filtered) {
            *v = f.max(0.0);
        }
    }
    let insole = apply_fraction(&resampled.insole, &fraction_mask())?;

    let skip = ((WARMUP_SECONDS * rate).round() as usize).min(resampled.len());
    Ok(RawSession {
        grf: grf.slice(s![.., skip..]).to_owned(),
        insole: insole.slice(s![.., skip.., .., ..]).to_owned(),
        ..resampled
    })
}

/// Full pipeline: profiles, sessions, preprocessing, windowing and a
/// dataset-wide GRF ceiling.
pub fn build_dataset(config: &DatasetConfig) -> Result<WindowedDataset> {
    config.validate()?;
    let mut samples = Vec::new();
    let mut session_max = Vec::new();
    let mut body_weights = BTreeMap::new();
    let mut subject_max: BTreeMap<u32, f64> = BTreeMap::new();

    for id in 0..config.subjects {
        let profile = make_profile(config.seed, id);
        body_weights.insert(id, profile.body_weight);
        for &speed in &config.speeds {
            let raw = synth_session(&profile, speed, config.session_seconds, config.rate_hz)?;
            let session = preprocess(raw, config)?;
            let ceiling = grf_ceiling(std::slice::from_ref(&session));
            let normalized = normalize_pair(&session, ceiling)?;
            let windows = window_samples(&normalized, config.window);
            debug!(
                "subject {id} at {speed} m/s: {} windows, peak {ceiling:.3} BW",
                windows.len()
            );
            let entry = subject_max.entry(id).or_insert(0.0);
            *entry = entry.max(ceiling);
            session_max.push((samples.len()..samples.len() + windows.len(), ceiling));
            samples.extend(windows);
        }
    }

    let global = subject_max.values().copied().fold(0.0, f64::max);
    for (range, ceiling) in session_max {
        let factor = (ceiling / global) as f32;
        for sample in &mut samples[range] {
            sample.grf.mapv_inplace(|v| (v * factor).min(1.0));
        }
    }

    Ok(WindowedDataset {
        window: config.window,
        samples,
        scaling: Scaling {
            gravity: GRAVITY,
            insole_full_scale_psi: f64::from(INSOLE_FULL_SCALE_PSI),
            grf_ceiling_bw: global,
            body_weights,
            subject_grf_max_bw: subject_max,
        },
    })
}
