use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{DistillParams, Distiller, RepresentationMode};
use crate::models::{EncoderKind, NetworkSpec, Scale};
use crate::nn::AdamConfig;

/// Everything needed to reproduce a teacher or student training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam step size; `None` picks 0.01, or 0.001 for factorized encoders.
    pub lr: Option<f64>,
    pub clip_norm: f64,
    pub seed: u64,
    /// Number of consecutive seeds per run.
    pub repeats: usize,
    /// Teacher architecture.
    pub encoder_kind: EncoderKind,
    /// Encoder width multiplier for both teacher and student.
    pub width: f64,
    pub mode: RepresentationMode,
    pub vae_beta: f64,
    pub adv_weight: f64,
    pub discriminator_depth: usize,
    pub discriminator_hidden: usize,
    pub distiller: Distiller,
    pub distill: DistillParams,
    /// Test subject of the fold; defaults to the lowest subject id.
    pub held_out: Option<u32>,
    /// Validation subject; defaults to the next id after the test subject.
    pub validation: Option<u32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 128,
            lr: None,
            clip_norm: 5.0,
            seed: 0,
            repeats: 3,
            encoder_kind: EncoderKind::C3d,
            width: 1.0,
            mode: RepresentationMode::Ae,
            vae_beta: 1e-2,
            adv_weight: 1.0,
            discriminator_depth: 5,
            discriminator_hidden: 64,
            distiller: Distiller::Sckd,
            distill: DistillParams::default(),
            held_out: None,
            validation: None,
        }
    }
}

impl TrainConfig {
    /// Reduced settings that train on one CPU core in minutes.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            width: 0.25,
            discriminator_depth: 3,
            ..Self::default()
        }
    }

    pub fn learning_rate(&self, kind: EncoderKind) -> f64 {
        self.lr.unwrap_or(match kind {
            EncoderKind::R2plus1d => 1e-3,
            EncoderKind::C3d | EncoderKind::I3d => 1e-2,
        })
    }

    pub fn adam(&self, kind: EncoderKind) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate(kind),
            ..AdamConfig::default()
        }
    }

    pub fn teacher_spec(&self, window: usize) -> NetworkSpec {
        NetworkSpec {
            variational: self.mode == RepresentationMode::Vae,
            ..NetworkSpec::teacher(self.encoder_kind, window).with_width(self.width)
        }
    }

    pub fn student_spec(&self, window: usize) -> NetworkSpec {
        NetworkSpec {
            scale: Scale::Student,
            ..NetworkSpec::teacher(EncoderKind::C3d, window).with_width(self.width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("invalid learning rate {lr}")));
            }
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!("invalid width {}", self.width)));
        }
        if self.vae_beta < 0.0 || self.adv_weight < 0.0 {
            return Err(Error::Config("regularizer weights must be non-negative".into()));
        }
        if self.discriminator_depth == 0 || self.discriminator_hidden == 0 {
            return Err(Error::Config("discriminator must have at least one layer".into()));
        }
        if self.held_out.is_some() && self.held_out == self.validation {
            return Err(Error::Config("validation subject equals the test subject".into()));
        }
        self.distill.validate(self.distiller)
    }
}
