use std::path::Path;
use std::time::Instant;

use ndarray::Array5;
use serde::{Deserialize, Serialize};

use crate::datagen::{FEET, GRID_H, GRID_W};
use crate::error::Result;
use crate::models::{load_checkpoint, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub samples: usize,
    pub total_s: f64,
    /// Mean wall-clock time per sample; 0 when nothing was timed.
    pub avg_ms: f64,
    /// Set when `samples` is 0 and `avg_ms` is a placeholder.
    pub empty: bool,
}

/// A fixed, non-trivial input clip so timings do not depend on the data set.
fn probe_input(window: usize) -> Array5<f32> {
    Array5::from_shape_fn((1, FEET, window, GRID_H, GRID_W), |(_, f, t, h, w)| {
        ((f * 7 + t * 3 + h * 5 + w) % 11) as f32 / 11.0
    })
}

/// Times `samples` single-clip forward passes after `warmup` untimed ones.
/// Run this alone: it measures wall-clock time.
pub fn latency_bench_network(network: &Network, samples: usize, warmup: usize) -> Result<Latency> {
    let x = probe_input(network.spec.window);
    for _ in 0..warmup.min(samples) {
        network.forward(&x)?;
    }
    if samples == 0 {
        return Ok(Latency { samples: 0, total_s: 0.0, avg_ms: 0.0, empty: true });
    }
    let start = Instant::now();
    for _ in 0..samples {
        std::hint::black_box(network.forward(std::hint::black_box(&x))?);
    }
    let total_s = start.elapsed().as_secs_f64();
    Ok(Latency {
        samples,
        total_s,
        avg_ms: total_s * 1e3 / samples as f64,
        empty: false,
    })
}

/// Batch-1 latency of a stored checkpoint.
pub fn latency_bench(checkpoint: &Path, samples: usize) -> Result<Latency> {
    let (network, _) = load_checkpoint(checkpoint)?;
    latency_bench_network(&network, samples, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_network, NetworkSpec};

    #[test]
    fn empty_bench_is_flagged() {
        let net = build_network(&NetworkSpec::student(8).with_width(0.25), 0).unwrap();
        let l = latency_bench_network(&net, 0, 0).unwrap();
        assert!(l.empty);
        assert_eq!((l.total_s, l.avg_ms), (0.0, 0.0));
        let l = latency_bench_network(&net, 2, 1).unwrap();
        assert!(!l.empty && l.avg_ms > 0.0);
    }
}
