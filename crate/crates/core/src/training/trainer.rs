use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{predict, Batch, FoldData};
use crate::datagen::mix_seed;
use crate::error::{Error, Result};
use crate::losses::{
    bce_with_logits, distillation_loss_grad, DistillParams, Distiller, ground_truth_loss_grad, pool_codes,
    pool_codes_backward, vae_kl_grad, LossBreakdown, RepresentationMode,
};
use crate::models::{build_network, Discriminator, Network, TapGrads};
use crate::nn::{clip_grad_norm, Adam, Module};

/// One optimizer step's loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    /// VAE KL or WAE adversarial term (teacher training only).
    #[serde(rename = "L_reg", skip_serializing_if = "Option::is_none", default)]
    pub regularizer: Option<f64>,
    #[serde(rename = "L_disc", skip_serializing_if = "Option::is_none", default)]
    pub discriminator: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
}

/// Result of one seeded training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest validation error.
    pub best: Network,
    pub best_epoch: usize,
    pub last: Network,
    /// Validation MSE of the untrained network.
    pub initial_val_mse: f64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn best_val_mse(&self) -> f64 {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map_or(self.initial_val_mse, |e| e.val_mse)
    }

    pub fn last_val_mse(&self) -> f64 {
        self.epochs.last().map_or(self.initial_val_mse, |e| e.val_mse)
    }

    /// Step records followed by epoch records, one JSON object per line.
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for s in &self.steps {
            serde_json::to_writer(&mut out, s)?;
            out.push(b'\n');
        }
        for e in &self.epochs {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

fn to_f64(a: &Array3<f32>) -> Array3<f64> {
    a.mapv(f64::from)
}

fn to_f32(a: &Array3<f64>) -> Array3<f32> {
    a.mapv(|v| v as f32)
}

/// Validation mean squared error in evaluation mode.
pub fn validation_mse(network: &Network, data: &FoldData<'_>) -> Result<f64> {
    let pred = predict(network, data, &data.validation)?;
    let truth = data.targets(&data.validation);
    let n = pred.len().max(1) as f64;
    Ok(pred
        .iter()
        .zip(truth.iter())
        .map(|(&p, &t)| (f64::from(p) - f64::from(t)).powi(2))
        .sum::<f64>()
        / n)
}

struct StepOutput {
    loss: LossBreakdown,
    regularizer: Option<f64>,
    discriminator: Option<f64>,
}

fn check_finite(step: usize, out: &StepOutput) -> Result<()> {
    let values = [out.loss.total, out.regularizer.unwrap_or(0.0), out.discriminator.unwrap_or(0.0)];
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            detail: format!("{:?}", out.loss),
        })
    }
}

/// Shared epoch/batch loop. `step_fn` must leave gradients in the network.
fn run_loop(
    config: &TrainConfig,
    data: &FoldData<'_>,
    seed: u64,
    mut network: Network,
    mut step_fn: impl FnMut(&mut Network, &Batch) -> Result<StepOutput>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.len() < 2 || data.validation.is_empty() {
        return Err(Error::InvalidArgument("fold has too few training or validation samples".into()));
    }
    let mut adam = Adam::new(config.adam(network.spec.encoder_kind));
    let initial_val_mse = validation_mse(&network, data)?;
    let mut best = (network.clone(), 0usize, initial_val_mse);
    let mut steps = Vec::new();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut epoch_loss = 0.0;
        let order = data.epoch_order(seed, epoch, config.batch_size);
        for idx in &order {
            let samples: Vec<_> = idx.iter().map(|&i| data.train[i]).collect();
            let batch = data.batch(&samples);
            network.zero_grad();
            let out = step_fn(&mut network, &batch)?;
            check_finite(steps.len(), &out)?;
            let mut params = network.params_mut();
            clip_grad_norm(&mut params, config.clip_norm);
            adam.step(&mut params);
            epoch_loss += out.loss.total;
            steps.push(StepRecord {
                step: steps.len(),
                loss: out.loss,
                regularizer: out.regularizer,
                discriminator: out.discriminator,
            });
        }
        let val_mse = validation_mse(&network, data)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFinite {
                step: steps.len(),
                detail: format!("validation error at epoch {epoch}"),
            });
        }
        log::debug!("epoch {epoch}: train {:.5} val {val_mse:.5}", epoch_loss / order.len().max(1) as f64);
        epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / order.len().max(1) as f64,
            val_mse,
        });
        if val_mse < best.2 {
            best = (network.clone(), epoch, val_mse);
        }
    }
    Ok(TrainOutcome {
        best: best.0,
        best_epoch: best.1,
        last: network,
        initial_val_mse,
        steps,
        epochs,
    })
}

/// Trains a teacher encoder-decoder in AE, VAE or WAE mode.
pub fn train_teacher(config: &TrainConfig, data: &FoldData<'_>, seed: u64) -> Result<TrainOutcome> {
    let spec = config.teacher_spec(data.window);
    let network = build_network(&spec, mix_seed(seed, 1))?;
    match config.mode {
        RepresentationMode::Ae => run_loop(config, data, seed, network, |net, batch| {
            let (taps, cache) = net.forward_train(&batch.x, None)?;
            let (l_gt, g) = ground_truth_loss_grad(&to_f64(&taps.y_hat), &to_f64(&batch.y))?;
            net.backward(&cache, &TapGrads { y_hat: Some(to_f32(&g)), ..Default::default() })?;
            Ok(StepOutput {
                loss: LossBreakdown { l_gt, total: l_gt, ..Default::default() },
                regularizer: None,
                discriminator: None,
            })
        }),
        RepresentationMode::Vae => {
            let mut sampler = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3));
            let beta = config.vae_beta;
            run_loop(config, data, seed, network, move |net, batch| {
                let (taps, cache) = net.forward_train(&batch.x, Some(&mut sampler))?;
                let (l_gt, g) = ground_truth_loss_grad(&to_f64(&taps.y_hat), &to_f64(&batch.y))?;
                let logvar = taps.logvar.as_ref().expect("variational network");
                let (kl, dmu, dlv) = vae_kl_grad(&to_f64(&taps.mu), &to_f64(logvar))?;
                net.backward(
                    &cache,
                    &TapGrads {
                        y_hat: Some(to_f32(&g)),
                        mu: Some(to_f32(&(dmu * beta))),
                        logvar: Some(to_f32(&(dlv * beta))),
                        ..Default::default()
                    },
                )?;
                Ok(StepOutput {
                    loss: LossBreakdown { l_gt, total: l_gt + beta * kl, ..Default::default() },
                    regularizer: Some(kl),
                    discriminator: None,
                })
            })
        }
        RepresentationMode::Wae => {
            let mut disc = Discriminator::new(
                spec.mid_channels,
                config.discriminator_hidden,
                config.discriminator_depth,
                mix_seed(seed, 2),
            );
            let mut disc_adam = Adam::new(config.adam(spec.encoder_kind));
            let mut prior = ChaCha8Rng::seed_from_u64(mix_seed(seed, 4));
            let (weight, clip) = (config.adv_weight, config.clip_norm);
            run_loop(config, data, seed, network, move |net, batch| {
                let (taps, cache) = net.forward_train(&batch.x, None)?;
                let t_mid = taps.mid.dim().2;
                let codes = pool_codes(&to_f64(&taps.mid)).mapv(|v| v as f32);
                let (b, c) = codes.dim();

                // discriminator: prior samples are real, encoded codes are fake
                let z: Array2<f32> = Array2::from_shape_simple_fn((b, c), || StandardNormal.sample(&mut prior));
                disc.zero_grad();
                let (real_logits, real_cache) = disc.forward(&z);
                let (fake_logits, fake_cache) = disc.forward(&codes);
                let real = real_logits.iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
                let fake = fake_logits.iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
                let (l_real, g_real) = bce_with_logits(&real, 1.0);
                let (l_fake, g_fake) = bce_with_logits(&fake, 0.0);
                disc.backward(&real_cache, &g_real.iter().map(|&v| v as f32).collect::<Vec<_>>());
                disc.backward(&fake_cache, &g_fake.iter().map(|&v| v as f32).collect::<Vec<_>>());
                let mut dparams = disc.params_mut();
                clip_grad_norm(&mut dparams, clip);
                disc_adam.step(&mut dparams);

                // generator: reconstruction plus fooling the updated discriminator
                let (l_gt, g) = ground_truth_loss_grad(&to_f64(&taps.y_hat), &to_f64(&batch.y))?;
                let (logits, gen_cache) = disc.forward(&codes);
                let logits = logits.iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
                let (l_adv, g_adv) = bce_with_logits(&logits, 1.0);
                let dcodes = disc.backward(
                    &gen_cache,
                    &g_adv.iter().map(|&v| (v * weight) as f32).collect::<Vec<_>>(),
                );
                disc.zero_grad();
                let dmid = pool_codes_backward(&dcodes.mapv(f64::from), t_mid);
                net.backward(
                    &cache,
                    &TapGrads {
                        y_hat: Some(to_f32(&g)),
                        mid: Some(to_f32(&dmid)),
                        ..Default::default()
                    },
                )?;
                Ok(StepOutput {
                    loss: LossBreakdown { l_gt, total: l_gt + weight * l_adv, ..Default::default() },
                    regularizer: Some(l_adv),
                    discriminator: Some(l_real + l_fake),
                })
            })
        }
    }
}

/// Trains a student against a frozen teacher with the configured distiller.
pub fn distill_student(
    config: &TrainConfig,
    teacher: &Network,
    data: &FoldData<'_>,
    seed: u64,
) -> Result<TrainOutcome> {
    let spec = config.student_spec(data.window);
    if teacher.spec.window != spec.window {
        return Err(Error::Config(format!(
            "teacher window {} differs from data window {}",
            teacher.spec.window, spec.window
        )));
    }
    let network = build_network(&spec, mix_seed(seed, 1))?;
    run_loop(config, data, seed, network, |net, batch| {
        let loss = distillation_step(net, teacher, batch, config.distiller, &config.distill)?;
        Ok(StepOutput {
            loss,
            regularizer: None,
            discriminator: None,
        })
    })
}

/// Forward and backward pass of one distillation batch. Gradients are
/// accumulated into `student`; the teacher is only read.
pub fn distillation_step(
    student: &mut Network,
    teacher: &Network,
    batch: &Batch,
    distiller: Distiller,
    params: &DistillParams,
) -> Result<LossBreakdown> {
    let teacher_taps = if distiller.needs_teacher() {
        Some(teacher.forward_with_taps(&batch.x)?)
    } else {
        None
    };
    let (taps, cache) = student.forward_train(&batch.x, None)?;
    let (loss, grads) =
        distillation_loss_grad(distiller, &to_f64(&batch.y), teacher_taps.as_ref(), &taps, params)?;
    student.backward(&cache, &grads.to_tap_grads())?;
    Ok(loss)
}
