//! Synthetic insole/GRF sessions and the preprocessing chain that turns them
//! into windowed, subject-labelled datasets.

mod dataset;
mod io;
mod preprocess;
mod profile;
mod session;

pub use dataset::{
    build_dataset, loso_split, window_samples, DatasetConfig, LosoSplit, Sample, Scaling,
    WindowedDataset, REFERENCE_USABLE_SECONDS, WARMUP_SECONDS,
};
pub use io::{load_dataset, save_dataset, DatasetManifest, SplitManifest};
pub use preprocess::{
    apply_fraction, fraction_mask, grf_ceiling, normalize_pair, resample_to, zero_lag_lowpass,
    FractionMask, NormalizedSession, INSOLE_FULL_SCALE_PSI,
};
pub use profile::{make_profile, SubjectProfile};
pub(crate) use profile::mix_seed;
pub use session::{synth_session, RawSession, GRAVITY, PAPER_SPEEDS};

/// Insole grid rows (heel to toe axis).
pub const GRID_H: usize = 16;
/// Insole grid columns (medial to lateral axis).
pub const GRID_W: usize = 8;
/// Both feet.
pub const FEET: usize = 2;
/// Common sample rate of both streams after preprocessing.
pub const TARGET_RATE_HZ: f64 = 200.0;
