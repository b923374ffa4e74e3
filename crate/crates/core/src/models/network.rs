use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array3, Array5, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ops::{
    spatial_average_pool, spatial_average_pool_backward, temporal_resize,
    temporal_resize_backward,
};
use crate::datagen::{FEET, GRID_H, GRID_W};
use crate::error::{Error, Result};
use crate::nn::{relu_backward, Conv1d, Conv3d, Conv3dCache, Module, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncoderKind {
    #[serde(rename = "C3D")]
    C3d,
    #[serde(rename = "I3D")]
    I3d,
    #[serde(rename = "R(2+1)D")]
    R2plus1d,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::C3d, EncoderKind::I3d, EncoderKind::R2plus1d];
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::C3d => "C3D",
            EncoderKind::I3d => "I3D",
            EncoderKind::R2plus1d => "R(2+1)D",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c3d" => Ok(EncoderKind::C3d),
            "i3d" => Ok(EncoderKind::I3d),
            "r(2+1)d" | "(2+1)d" | "r2plus1d" | "r2+1d" => Ok(EncoderKind::R2plus1d),
            other => Err(Error::Config(format!("unknown encoder kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Teacher,
    Student,
}

/// Architecture description; together with a seed it fully determines a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub encoder_kind: EncoderKind,
    pub scale: Scale,
    #[serde(default = "default_mid")]
    pub mid_channels: usize,
    /// Multiplier on encoder widths; 1.0 is the reference size.
    #[serde(default = "default_width")]
    pub width: f64,
    pub window: usize,
    #[serde(default = "default_out")]
    pub out_channels: usize,
    /// Adds a log-variance head on the latent (VAE training).
    #[serde(default)]
    pub variational: bool,
}

fn default_mid() -> usize {
    64
}
fn default_width() -> f64 {
    1.0
}
fn default_out() -> usize {
    FEET
}

impl NetworkSpec {
    pub fn teacher(kind: EncoderKind, window: usize) -> Self {
        NetworkSpec {
            encoder_kind: kind,
            scale: Scale::Teacher,
            mid_channels: default_mid(),
            width: 1.0,
            window,
            out_channels: FEET,
            variational: false,
        }
    }

    /// The compact C3D student.
    pub fn student(window: usize) -> Self {
        NetworkSpec {
            scale: Scale::Student,
            ..Self::teacher(EncoderKind::C3d, window)
        }
    }

    pub fn with_width(mut self, width: f64) -> Self {
        self.width = width;
        self
    }

    /// Product of the temporal strides of all encoder blocks.
    pub fn temporal_stride_total(&self) -> usize {
        block_plan(self.encoder_kind, self.scale)
            .iter()
            .map(|b| b.stride()[0])
            .product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels != FEET {
            return Err(Error::Config(format!(
                "out_channels must be {FEET} (one per foot), got {}",
                self.out_channels
            )));
        }
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::Config(format!("invalid width {}", self.width)));
        }
        if self.mid_channels == 0 {
            return Err(Error::Config("mid_channels must be positive".into()));
        }
        let latent = self.window / self.temporal_stride_total();
        if latent < 2 {
            return Err(Error::Config(format!(
                "window {} too short for temporal stride {}",
                self.window,
                self.temporal_stride_total()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum BlockPlan {
    Plain { out: usize, stride: [usize; 3] },
    Inception { point: usize, full: usize, stride: [usize; 3] },
    Factorized { mid: usize, out: usize, stride: [usize; 3] },
}

impl BlockPlan {
    fn stride(&self) -> [usize; 3] {
        match *self {
            BlockPlan::Plain { stride, .. }
            | BlockPlan::Inception { stride, .. }
            | BlockPlan::Factorized { stride, .. } => stride,
        }
    }
}

const S1: [usize; 3] = [1, 2, 2];
const S2: [usize; 3] = [2, 2, 2];
const S0: [usize; 3] = [1, 1, 1];

// Channel plans sized to 1.00 / 1.18 / 1.58 M (teachers) and 0.25 M (student)
// trainable parameters at width 1.0, including the shared latent head and decoder.
fn block_plan(kind: EncoderKind, scale: Scale) -> Vec<BlockPlan> {
    use BlockPlan::*;
    match (kind, scale) {
        (EncoderKind::C3d, Scale::Teacher) => vec![
            Plain { out: 16, stride: S1 },
            Plain { out: 64, stride: S2 },
            Plain { out: 128, stride: S2 },
            Plain { out: 204, stride: S0 },
        ],
        (EncoderKind::C3d, Scale::Student) => vec![
            Plain { out: 16, stride: S1 },
            Plain { out: 56, stride: S2 },
            Plain { out: 128, stride: S2 },
        ],
        (EncoderKind::I3d, Scale::Teacher) => vec![
            Inception { point: 4, full: 12, stride: S1 },
            Inception { point: 16, full: 48, stride: S2 },
            Inception { point: 32, full: 96, stride: S2 },
            Inception { point: 64, full: 264, stride: S0 },
        ],
        (EncoderKind::I3d, Scale::Student) => vec![
            Inception { point: 4, full: 12, stride: S1 },
            Inception { point: 16, full: 40, stride: S2 },
            Inception { point: 32, full: 96, stride: S2 },
        ],
        (EncoderKind::R2plus1d, Scale::Teacher) => vec![
            Factorized { mid: 13, out: 16, stride: S1 },
            Factorized { mid: 82, out: 64, stride: S2 },
            Factorized { mid: 230, out: 128, stride: S2 },
            Factorized { mid: 663, out: 256, stride: S0 },
        ],
        (EncoderKind::R2plus1d, Scale::Student) => vec![
            Factorized { mid: 13, out: 16, stride: S1 },
            Factorized { mid: 72, out: 56, stride: S2 },
            Factorized { mid: 200, out: 128, stride: S2 },
        ],
    }
}

fn scaled(c: usize, width: f64) -> usize {
    ((c as f64 * width).round() as usize).max(2)
}

#[derive(Debug, Clone)]
enum EncoderBlock {
    Plain(Conv3d),
    Inception { point: Conv3d, full: Conv3d },
    Factorized { spatial: Conv3d, temporal: Conv3d },
}

#[derive(Debug, Clone)]
enum BlockCache {
    Plain(Conv3dCache),
    Inception(Conv3dCache, Conv3dCache),
    Factorized {
        spatial: Conv3dCache,
        hidden: Array5<f32>,
        temporal: Conv3dCache,
    },
}

fn relu(mut x: Array5<f32>) -> Array5<f32> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

fn masked(grad: &Array5<f32>, output: &Array5<f32>) -> Array5<f32> {
    let mut g = grad.as_standard_layout().into_owned();
    let out = output.as_standard_layout();
    relu_backward(
        out.as_slice().expect("standard layout"),
        g.as_slice_mut().expect("standard layout"),
    );
    g
}

impl EncoderBlock {
    fn build(name: &str, plan: BlockPlan, in_ch: usize, width: f64, rng: &mut ChaCha8Rng) -> Self {
        const K3: [usize; 3] = [3, 3, 3];
        const P1: [usize; 3] = [1, 1, 1];
        match plan {
            BlockPlan::Plain { out, stride } => EncoderBlock::Plain(Conv3d::new(
                &format!("{name}.conv"),
                in_ch,
                scaled(out, width),
                K3,
                stride,
                P1,
                rng,
            )),
            BlockPlan::Inception { point, full, stride } => EncoderBlock::Inception {
                point: Conv3d::new(
                    &format!("{name}.point"),
                    in_ch,
                    scaled(point, width),
                    [1, 1, 1],
                    stride,
                    [0, 0, 0],
                    rng,
                ),
                full: Conv3d::new(
                    &format!("{name}.full"),
                    in_ch,
                    scaled(full, width),
                    K3,
                    stride,
                    P1,
                    rng,
                ),
            },
            BlockPlan::Factorized { mid, out, stride } => EncoderBlock::Factorized {
                spatial: Conv3d::new(
                    &format!("{name}.spatial"),
                    in_ch,
                    scaled(mid, width),
                    [1, 3, 3],
                    [1, stride[1], stride[2]],
                    [0, 1, 1],
                    rng,
                ),
                temporal: Conv3d::new(
                    &format!("{name}.temporal"),
                    scaled(mid, width),
                    scaled(out, width),
                    [3, 1, 1],
                    [stride[0], 1, 1],
                    [1, 0, 0],
                    rng,
                ),
            },
        }
    }

    fn out_channels(&self) -> usize {
        match self {
            EncoderBlock::Plain(c) => c.out_channels,
            EncoderBlock::Inception { point, full } => point.out_channels + full.out_channels,
            EncoderBlock::Factorized { temporal, .. } => temporal.out_channels,
        }
    }

    /// Returns the post-ReLU output.
    fn forward(&self, x: &Array5<f32>) -> (Array5<f32>, BlockCache) {
        match self {
            EncoderBlock::Plain(conv) => {
                let (y, c) = conv.forward(x);
                (relu(y), BlockCache::Plain(c))
            }
            EncoderBlock::Inception { point, full } => {
                let (a, ca) = point.forward(x);
                let (b, cb) = full.forward(x);
                let y = concatenate(Axis(1), &[a.view(), b.view()]).expect("matching dims");
                (relu(y), BlockCache::Inception(ca, cb))
            }
            EncoderBlock::Factorized { spatial, temporal } => {
                let (h, cs) = spatial.forward(x);
                let hidden = relu(h);
                let (y, ct) = temporal.forward(&hidden);
                (
                    relu(y),
                    BlockCache::Factorized {
                        spatial: cs,
                        hidden,
                        temporal: ct,
                    },
                )
            }
        }
    }

    fn backward(
        &mut self,
        cache: &BlockCache,
        output: &Array5<f32>,
        grad: &Array5<f32>,
        need_input_grad: bool,
    ) -> Option<Array5<f32>> {
        let g = masked(grad, output);
        match (self, cache) {
            (EncoderBlock::Plain(conv), BlockCache::Plain(c)) => {
                conv.backward(c, &g, need_input_grad)
            }
            (EncoderBlock::Inception { point, full }, BlockCache::Inception(ca, cb)) => {
                let split = point.out_channels;
                let ga = g.slice(s![.., ..split, .., .., ..]).to_owned();
                let gb = g.slice(s![.., split.., .., .., ..]).to_owned();
                let da = point.backward(ca, &ga, need_input_grad);
                let db = full.backward(cb, &gb, need_input_grad);
                match (da, db) {
                    (Some(a), Some(b)) => Some(a + b),
                    _ => None,
                }
            }
            (
                EncoderBlock::Factorized { spatial, temporal },
                BlockCache::Factorized {
                    spatial: cs,
                    hidden,
                    temporal: ct,
                },
            ) => {
                let dh = temporal
                    .backward(ct, &g, true)
                    .expect("input gradient requested");
                let dh = masked(&dh, hidden);
                spatial.backward(cs, &dh, need_input_grad)
            }
            _ => unreachable!("cache does not match block"),
        }
    }

    fn params(&self) -> Vec<&Param> {
        match self {
            EncoderBlock::Plain(c) => c.params(),
            EncoderBlock::Inception { point, full } => {
                let mut p = point.params();
                p.extend(full.params());
                p
            }
            EncoderBlock::Factorized { spatial, temporal } => {
                let mut p = spatial.params();
                p.extend(temporal.params());
                p
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            EncoderBlock::Plain(c) => c.params_mut(),
            EncoderBlock::Inception { point, full } => {
                let mut p = point.params_mut();
                p.extend(full.params_mut());
                p
            }
            EncoderBlock::Factorized { spatial, temporal } => {
                let mut p = spatial.params_mut();
                p.extend(temporal.params_mut());
                p
            }
        }
    }
}

/// Intermediate features of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TapBundle {
    /// Output of encoder block 2, `[b, c, t, h, w]`.
    pub e1: Array5<f32>,
    /// Output of the last encoder block, `[b, c, t, h, w]`.
    pub e2: Array5<f32>,
    /// Latent code `[b, mid, t_mid]` (a sample in VAE training mode, the mean otherwise).
    pub mid: Array3<f32>,
    pub d1: Array3<f32>,
    pub d2: Array3<f32>,
    /// Prediction in [0, 1], `[b, 2, t]`.
    pub y_hat: Array3<f32>,
    /// Latent mean (equals `mid` unless sampling).
    pub mu: Array3<f32>,
    pub logvar: Option<Array3<f32>>,
}

/// Gradients injected at tap points during backward.
#[derive(Debug, Clone, Default)]
pub struct TapGrads {
    pub y_hat: Option<Array3<f32>>,
    pub e1: Option<Array5<f32>>,
    pub e2: Option<Array5<f32>>,
    pub mid: Option<Array3<f32>>,
    pub d1: Option<Array3<f32>>,
    pub d2: Option<Array3<f32>>,
    pub mu: Option<Array3<f32>>,
    pub logvar: Option<Array3<f32>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    block_outputs: Vec<Array5<f32>>,
    mid: Conv3dCache,
    logvar: Option<Conv3dCache>,
    noise: Option<Array3<f32>>,
    logvar_out: Option<Array3<f32>>,
    decoder: Vec<(Conv3dCache, usize, Array3<f32>)>,
    head: Conv3dCache,
    y_hat: Array3<f32>,
    spatial: (usize, usize),
}

/// Spatiotemporal encoder, 1-D latent head and 1-D convolutional decoder.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    blocks: Vec<EncoderBlock>,
    mid: Conv1d,
    logvar: Option<Conv1d>,
    decoder: Vec<Conv1d>,
    head: Conv1d,
}

const DECODER_CHANNELS: [usize; 2] = [32, 16];

pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_ch = FEET;
    let mut blocks = Vec::new();
    for (i, plan) in block_plan(spec.encoder_kind, spec.scale).into_iter().enumerate() {
        let block = EncoderBlock::build(&format!("enc{}", i + 1), plan, in_ch, spec.width, &mut rng);
        in_ch = block.out_channels();
        blocks.push(block);
    }
    let mid = Conv1d::new("mid", in_ch, spec.mid_channels, 3, &mut rng);
    let logvar = spec
        .variational
        .then(|| Conv1d::new("logvar", in_ch, spec.mid_channels, 3, &mut rng));
    let mut decoder = Vec::new();
    let mut ch = spec.mid_channels;
    for (i, &out) in DECODER_CHANNELS.iter().enumerate() {
        decoder.push(Conv1d::new(&format!("dec{}", i + 1), ch, out, 3, &mut rng));
        ch = out;
    }
    let head = Conv1d::new("head", ch, spec.out_channels, 3, &mut rng);
    Ok(Network {
        spec: spec.clone(),
        blocks,
        mid,
        logvar,
        decoder,
        head,
    })
}

fn relu3(mut x: Array3<f32>) -> Array3<f32> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

fn masked3(grad: &Array3<f32>, output: &Array3<f32>) -> Array3<f32> {
    let mut g = grad.as_standard_layout().into_owned();
    let out = output.as_standard_layout();
    relu_backward(
        out.as_slice().expect("standard layout"),
        g.as_slice_mut().expect("standard layout"),
    );
    g
}

fn add_opt3(base: Array3<f32>, extra: Option<&Array3<f32>>) -> Result<Array3<f32>> {
    match extra {
        Some(e) if e.dim() != base.dim() => Err(Error::shape(base.dim(), e.dim())),
        Some(e) => Ok(base + e),
        None => Ok(base),
    }
}

impl Network {
    pub fn encoder_channels(&self) -> Vec<usize> {
        self.blocks.iter().map(EncoderBlock::out_channels).collect()
    }

    fn check_input(&self, x: &Array5<f32>) -> Result<()> {
        let (_, c, t, h, w) = x.dim();
        if (c, t, h, w) != (FEET, self.spec.window, GRID_H, GRID_W) {
            return Err(Error::shape(
                ("b", FEET, self.spec.window, GRID_H, GRID_W),
                x.dim(),
            ));
        }
        Ok(())
    }

    /// Forward pass keeping everything needed for [`Network::backward`].
    /// With `sampler`, a variational network draws its latent; otherwise it uses the mean.
    pub fn forward_train(
        &self,
        x: &Array5<f32>,
        sampler: Option<&mut ChaCha8Rng>,
    ) -> Result<(TapBundle, ForwardCache)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut outputs: Vec<Array5<f32>> = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let input = outputs.last().unwrap_or(x);
            let (y, c) = block.forward(input);
            caches.push(c);
            outputs.push(y);
        }
        let e2 = outputs.last().expect("encoder has blocks");
        let (_, _, _, h, w) = e2.dim();
        let pooled = spatial_average_pool(e2);
        let (mu, mid_cache) = self.mid.forward(&pooled);

        let (logvar, logvar_cache) = match &self.logvar {
            Some(head) => {
                let (lv, c) = head.forward(&pooled);
                (Some(lv), Some(c))
            }
            None => (None, None),
        };
        let (latent, noise) = match (&logvar, sampler) {
            (Some(lv), Some(rng)) => {
                let eps = Array3::from_shape_simple_fn(mu.dim(), || StandardNormal.sample(rng));
                let z = &mu + &(lv.mapv(|v| (0.5 * v).exp()) * &eps);
                (z, Some(eps))
            }
            _ => (mu.clone(), None),
        };

        let targets = [outputs[1].dim().2, self.spec.window];
        let mut decoder = Vec::with_capacity(self.decoder.len());
        let mut d = latent.clone();
        let mut taps = Vec::with_capacity(2);
        for (conv, &len) in self.decoder.iter().zip(&targets) {
            let from = d.dim().2;
            let up = temporal_resize(&d, len)?;
            let (y, c) = conv.forward(&up);
            let y = relu3(y);
            decoder.push((c, from, y.clone()));
            taps.push(y.clone());
            d = y;
        }
        let (logits, head_cache) = self.head.forward(&d);
        let y_hat = logits.mapv(|v| 1.0 / (1.0 + (-v).exp()));

        let bundle_logvar = logvar.clone();
        let bundle = TapBundle {
            e1: outputs[1].clone(),
            e2: e2.clone(),
            mid: latent,
            d1: taps[0].clone(),
            d2: taps[1].clone(),
            y_hat: y_hat.clone(),
            mu,
            logvar,
        };
        let cache = ForwardCache {
            blocks: caches,
            block_outputs: outputs,
            mid: mid_cache,
            logvar: logvar_cache,
            noise,
            logvar_out: bundle_logvar,
            decoder,
            head: head_cache,
            y_hat,
            spatial: (h, w),
        };
        Ok((bundle, cache))
    }

    /// Evaluation-mode forward returning every tap.
    pub fn forward_with_taps(&self, x: &Array5<f32>) -> Result<TapBundle> {
        self.forward_train(x, None).map(|(taps, _)| taps)
    }

    pub fn forward(&self, x: &Array5<f32>) -> Result<Array3<f32>> {
        self.forward_with_taps(x).map(|t| t.y_hat)
    }

    /// Accumulates parameter gradients for the given tap gradients.
    pub fn backward(&mut self, cache: &ForwardCache, grads: &TapGrads) -> Result<()> {
        let dy = grads
            .y_hat
            .clone()
            .unwrap_or_else(|| Array3::zeros(cache.y_hat.dim()));
        if dy.dim() != cache.y_hat.dim() {
            return Err(Error::shape(cache.y_hat.dim(), dy.dim()));
        }
        let dlogits = &dy * &cache.y_hat.mapv(|y| y * (1.0 - y));
        let mut d = self
            .head
            .backward(&cache.head, &dlogits, true)
            .expect("input gradient requested");

        let tap_grads = [grads.d1.as_ref(), grads.d2.as_ref()];
        for i in (0..self.decoder.len()).rev() {
            let (c, from, out) = &cache.decoder[i];
            d = add_opt3(d, tap_grads[i])?;
            let g = masked3(&d, out);
            let dup = self.decoder[i]
                .backward(c, &g, true)
                .expect("input gradient requested");
            d = temporal_resize_backward(&dup, *from)?;
        }

        let dz = add_opt3(d, grads.mid.as_ref())?;
        let dmu = add_opt3(dz.clone(), grads.mu.as_ref())?;
        let mut dpooled = None;
        if let (Some(head), Some(lc)) = (self.logvar.as_mut(), cache.logvar.as_ref()) {
            // z = mu + exp(logvar / 2) * eps
            let mut dlv = match (&cache.noise, &cache.logvar_out) {
                (Some(eps), Some(lv)) => &dz * eps * &lv.mapv(|v| 0.5 * (0.5 * v).exp()),
                _ => Array3::zeros(dz.dim()),
            };
            dlv = add_opt3(dlv, grads.logvar.as_ref())?;
            dpooled = head.backward(lc, &dlv, true);
        }
        let dmu_in = self
            .mid
            .backward(&cache.mid, &dmu, true)
            .expect("input gradient requested");
        let dpooled = match dpooled {
            Some(p) => p + &dmu_in,
            None => dmu_in,
        };

        let (h, w) = cache.spatial;
        let mut g = spatial_average_pool_backward(&dpooled, h, w);
        let last = self.blocks.len() - 1;
        for i in (0..self.blocks.len()).rev() {
            if i == last {
                if let Some(e2) = &grads.e2 {
                    if e2.dim() != g.dim() {
                        return Err(Error::shape(g.dim(), e2.dim()));
                    }
                    g = g + e2;
                }
            }
            if i == 1 {
                if let Some(e1) = &grads.e1 {
                    if e1.dim() != g.dim() {
                        return Err(Error::shape(g.dim(), e1.dim()));
                    }
                    g = g + e1;
                }
            }
            match self.blocks[i].backward(&cache.blocks[i], &cache.block_outputs[i], &g, i > 0) {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }

    /// FNV-1a over the raw parameter bytes.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params() {
            for v in &p.value {
                for byte in v.to_le_bytes() {
                    hash ^= u64::from(byte);
                    hash = hash.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        hash
    }
}

impl Module for Network {
    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.blocks.iter().flat_map(|b| b.params()).collect();
        p.extend(self.mid.params());
        if let Some(lv) = &self.logvar {
            p.extend(lv.params());
        }
        for d in &self.decoder {
            p.extend(d.params());
        }
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        p.extend(self.mid.params_mut());
        if let Some(lv) = &mut self.logvar {
            p.extend(lv.params_mut());
        }
        for d in &mut self.decoder {
            p.extend(d.params_mut());
        }
        p.extend(self.head.params_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::Rng;

    fn input(b: usize, t: usize, seed: u64) -> Array5<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_simple_fn((b, FEET, t, GRID_H, GRID_W), || rng.gen_range(0.0..1.0))
    }

    fn count(spec: &NetworkSpec) -> usize {
        build_network(spec, 0).unwrap().parameter_count()
    }

    #[test]
    fn reference_sizes_match_targets() {
        let targets = [
            (NetworkSpec::student(100), 0.25e6),
            (NetworkSpec::teacher(EncoderKind::C3d, 100), 1.00e6),
            (NetworkSpec::teacher(EncoderKind::I3d, 100), 1.18e6),
            (NetworkSpec::teacher(EncoderKind::R2plus1d, 100), 1.58e6),
        ];
        let mut last = 0;
        for (spec, target) in &targets {
            let n = count(spec);
            let rel = (n as f64 - target).abs() / target;
            assert!(rel < 0.2, "{:?}: {n} vs {target}", spec.encoder_kind);
            assert!(n > last);
            last = n;
        }
        let ratio = count(&targets[0].0) as f64 / count(&targets[1].0) as f64;
        assert!((ratio - 0.251).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn students_are_smaller_for_every_kind() {
        for kind in EncoderKind::ALL {
            let t = NetworkSpec::teacher(kind, 100);
            let s = NetworkSpec { scale: Scale::Student, ..t.clone() };
            assert!(count(&s) < count(&t), "{kind}");
        }
    }

    #[test]
    fn output_length_equals_window() {
        for kind in EncoderKind::ALL {
            for window in [100, 200] {
                let spec = NetworkSpec::teacher(kind, window).with_width(0.1);
                let net = build_network(&spec, 1).unwrap();
                let y = net.forward(&Array5::zeros((1, 2, window, 16, 8))).unwrap();
                assert_eq!(y.dim(), (1, 2, window));
                assert!(y.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn taps_have_expected_shapes() {
        let spec = NetworkSpec::student(40).with_width(0.25);
        let net = build_network(&spec, 2).unwrap();
        let x = input(3, 40, 0);
        let taps = net.forward_with_taps(&x).unwrap();
        assert_eq!(taps.e1.dim().0, 3);
        assert_eq!(taps.e1.dim().2, 20);
        assert_eq!(taps.e2.dim().2, 10);
        assert_eq!(taps.mid.dim(), (3, 64, 10));
        assert_eq!(taps.d1.dim(), (3, 32, 20));
        assert_eq!(taps.d2.dim(), (3, 16, 40));
        assert_eq!(taps.y_hat, net.forward(&x).unwrap());
        assert_eq!(taps, net.forward_with_taps(&x).unwrap());
    }

    #[test]
    fn rejects_wrong_window() {
        let net = build_network(&NetworkSpec::student(40).with_width(0.1), 0).unwrap();
        assert!(net.forward(&input(1, 20, 0)).is_err());
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert!("LSTM".parse::<EncoderKind>().unwrap_err().is_config_error());
        assert_eq!("r(2+1)d".parse::<EncoderKind>().unwrap(), EncoderKind::R2plus1d);
    }

    // Loss = sum(w_y * y_hat) + sum(w_mid * mid) + sum(w_e1 * e1); compare to finite differences.
    fn gradient_check(spec: NetworkSpec) {
        let mut net = build_network(&spec, 11).unwrap();
        let x = input(2, spec.window, 5);
        let (taps, cache) = net.forward_train(&x, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let wy = Array3::from_shape_simple_fn(taps.y_hat.dim(), || rng.gen_range(-1.0f32..1.0));
        let wm = Array3::from_shape_simple_fn(taps.mid.dim(), || rng.gen_range(-0.1f32..0.1));
        let we = Array5::from_shape_simple_fn(taps.e1.dim(), || rng.gen_range(-0.1f32..0.1));
        let objective = |net: &Network| -> f64 {
            let t = net.forward_with_taps(&x).unwrap();
            ((&t.y_hat * &wy).sum() + (&t.mid * &wm).sum() + (&t.e1 * &we).sum()) as f64
        };
        net.zero_grad();
        net.backward(
            &cache,
            &TapGrads {
                y_hat: Some(wy.clone()),
                mid: Some(wm.clone()),
                e1: Some(we.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        let n_params = net.params().len();
        let mut checked = 0;
        for pi in 0..n_params {
            let len = net.params()[pi].len();
            for &j in &[0, len / 2, len - 1] {
                let analytic = net.params()[pi].grad[j] as f64;
                let h = 1e-3f32;
                let orig = net.params()[pi].value[j];
                let base = objective(&net);
                net.params_mut()[pi].value[j] = orig + h;
                let up = objective(&net);
                net.params_mut()[pi].value[j] = orig - h;
                let down = objective(&net);
                net.params_mut()[pi].value[j] = orig;
                let (fwd, bwd) = ((up - base) / h as f64, (base - down) / h as f64);
                let fd = (up - down) / (2.0 * h as f64);
                let scale = fd.abs().max(analytic.abs()).max(1e-2);
                // A ReLU kink inside the stencil makes one-sided slopes disagree.
                if (fwd - bwd).abs() > 0.05 * scale {
                    continue;
                }
                assert!(
                    (fd - analytic).abs() / scale < 0.05,
                    "{}[{j}]: fd {fd} vs analytic {analytic}",
                    net.params()[pi].name
                );
                checked += 1;
            }
        }
        assert!(checked * 4 >= n_params * 3 * 3, "only {checked} coordinates checked");
    }

    #[test]
    fn backward_matches_finite_differences_c3d() {
        gradient_check(NetworkSpec::student(8).with_width(0.1));
    }

    #[test]
    fn backward_matches_finite_differences_i3d() {
        gradient_check(NetworkSpec::teacher(EncoderKind::I3d, 8).with_width(0.05));
    }

    #[test]
    fn backward_matches_finite_differences_factorized() {
        gradient_check(NetworkSpec::teacher(EncoderKind::R2plus1d, 8).with_width(0.05));
    }

    #[test]
    fn variational_head_gradients() {
        let spec = NetworkSpec {
            variational: true,
            ..NetworkSpec::student(8).with_width(0.1)
        };
        let mut net = build_network(&spec, 4).unwrap();
        let x = input(2, 8, 1);
        let mut sampler = ChaCha8Rng::seed_from_u64(3);
        let (taps, cache) = net.forward_train(&x, Some(&mut sampler)).unwrap();
        let lv = taps.logvar.clone().unwrap();
        assert_ne!(taps.mid, taps.mu);
        // objective = sum(y_hat) with the same noise draw
        let objective = |net: &Network| -> f64 {
            let mut s = ChaCha8Rng::seed_from_u64(3);
            net.forward_train(&x, Some(&mut s)).unwrap().0.y_hat.sum() as f64
        };
        net.zero_grad();
        let ones = Array3::ones(taps.y_hat.dim());
        net.backward(
            &cache,
            &TapGrads {
                y_hat: Some(ones),
                logvar: Some(Array3::zeros(lv.dim())),
                ..Default::default()
            },
        )
        .unwrap();
        let idx = net.params().iter().position(|p| p.name == "logvar.weight").unwrap();
        let analytic = net.params()[idx].grad[3] as f64;
        let h = 1e-2f32;
        let orig = net.params()[idx].value[3];
        net.params_mut()[idx].value[3] = orig + h;
        let up = objective(&net);
        net.params_mut()[idx].value[3] = orig - h;
        let down = objective(&net);
        let fd = (up - down) / (2.0 * h as f64);
        assert!((fd - analytic).abs() < 0.05 * fd.abs().max(1e-2), "{fd} vs {analytic}");
    }

    #[test]
    fn parameter_order_is_encoder_then_decoder() {
        let net = build_network(&NetworkSpec::student(100), 0).unwrap();
        let names: Vec<_> = net.params().iter().map(|p| p.name.clone()).collect();
        assert_eq!(names[0], "enc1.conv.weight");
        assert_eq!(names.last().unwrap(), "head.bias");
    }
}
