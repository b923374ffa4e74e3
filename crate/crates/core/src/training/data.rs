use ndarray::{s, Array3, Array5};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{mix_seed, Sample, WindowedDataset, FEET, GRID_H, GRID_W};
use crate::error::{Error, Result};
use crate::models::Network;

/// Subject roles of one leave-one-subject-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out: u32,
    pub validation: u32,
    pub train_subjects: Vec<u32>,
    /// Multiplier on stored force values so the training split peaks at 1.
    pub grf_scale: f64,
}

impl Fold {
    /// The validation subject defaults to the id following the held-out one (cyclically).
    pub fn new(dataset: &WindowedDataset, held_out: u32, validation: Option<u32>) -> Result<Self> {
        let ids = dataset.subject_ids();
        if ids.len() < 3 {
            return Err(Error::Config(format!(
                "a fold needs at least 3 subjects (train, validation, test), dataset has {}",
                ids.len()
            )));
        }
        let pos = ids
            .iter()
            .position(|&s| s == held_out)
            .ok_or(Error::UnknownSubject(held_out))?;
        let validation = match validation {
            Some(v) if !ids.contains(&v) => return Err(Error::UnknownSubject(v)),
            Some(v) if v == held_out => {
                return Err(Error::Config("validation subject equals the test subject".into()))
            }
            Some(v) => v,
            None => ids[(pos + 1) % ids.len()],
        };
        let train_subjects: Vec<u32> = ids
            .into_iter()
            .filter(|&s| s != held_out && s != validation)
            .collect();
        let train_max = dataset.scaling.split_max_bw(&train_subjects)?;
        if !(train_max > 0.0) {
            return Err(Error::InvalidArgument("training split has no force".into()));
        }
        Ok(Fold {
            held_out,
            validation,
            train_subjects,
            grf_scale: dataset.scaling.grf_ceiling_bw / train_max,
        })
    }
}

/// A model-ready minibatch: `x` is `[b, 2, t, 16, 8]`, `y` is `[b, 2, t]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array5<f32>,
    pub y: Array3<f32>,
}

/// Samples of a fold, split by role.
#[derive(Debug)]
pub struct FoldData<'a> {
    pub fold: Fold,
    pub window: usize,
    pub train: Vec<&'a Sample>,
    pub validation: Vec<&'a Sample>,
    pub test: Vec<&'a Sample>,
}

impl<'a> FoldData<'a> {
    pub fn new(dataset: &'a WindowedDataset, fold: Fold) -> Self {
        let pick = |pred: &dyn Fn(u32) -> bool| -> Vec<&'a Sample> {
            dataset.samples.iter().filter(|s| pred(s.subject_id)).collect()
        };
        let train = pick(&|id| fold.train_subjects.contains(&id));
        let validation = pick(&|id| id == fold.validation);
        let test = pick(&|id| id == fold.held_out);
        FoldData {
            window: dataset.window,
            fold,
            train,
            validation,
            test,
        }
    }

    /// Stacks samples into a batch. Force targets are rescaled to the training
    /// split's peak and saturated at 1 for held-in/out subjects.
    pub fn batch(&self, samples: &[&Sample]) -> Batch {
        let t = self.window;
        let b = samples.len();
        let mut x = Array5::zeros((b, FEET, t, GRID_H, GRID_W));
        let mut y = Array3::zeros((b, FEET, t));
        let scale = self.fold.grf_scale as f32;
        for (i, s) in samples.iter().enumerate() {
            x.slice_mut(s![i, .., .., .., ..]).assign(&s.insole);
            y.slice_mut(s![i, .., ..])
                .assign(&s.grf.mapv(|v| (v * scale).clamp(0.0, 1.0)));
        }
        Batch { x, y }
    }

    /// Shuffled minibatch index lists for one epoch; a trailing single sample is dropped.
    pub fn epoch_order(&self, seed: u64, epoch: usize, batch_size: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5eed_0000 + epoch as u64));
        order.shuffle(&mut rng);
        order
            .chunks(batch_size)
            .filter(|c| c.len() >= 2)
            .map(<[usize]>::to_vec)
            .collect()
    }

    pub fn targets(&self, samples: &[&Sample]) -> Array3<f32> {
        self.batch(samples).y
    }
}

/// Evaluation-mode predictions for a list of samples, `[n, 2, t]`.
pub fn predict(network: &Network, data: &FoldData<'_>, samples: &[&Sample]) -> Result<Array3<f32>> {
    const CHUNK: usize = 64;
    let mut out = Array3::zeros((samples.len(), FEET, data.window));
    for (k, chunk) in samples.chunks(CHUNK).enumerate() {
        let batch = data.batch(chunk);
        let y = network.forward(&batch.x)?;
        out.slice_mut(s![k * CHUNK..k * CHUNK + chunk.len(), .., ..]).assign(&y);
    }
    Ok(out)
}
