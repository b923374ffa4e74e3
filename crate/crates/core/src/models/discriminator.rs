use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{relu_backward, Linear, LinearCache, Module, Param};

/// MLP scoring latent codes as prior samples (positive logit) or encoder outputs.
#[derive(Debug, Clone)]
pub struct Discriminator {
    layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorCache {
    layers: Vec<LinearCache>,
    activations: Vec<Array2<f32>>,
}

impl Discriminator {
    /// `depth` linear layers with ReLU between them; the last maps to one logit.
    pub fn new(input: usize, hidden: usize, depth: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = depth.max(1);
        let layers = (0..depth)
            .map(|i| {
                let fan_in = if i == 0 { input } else { hidden };
                let out = if i + 1 == depth { 1 } else { hidden };
                Linear::new(&format!("disc{}", i + 1), fan_in, out, &mut rng)
            })
            .collect();
        Discriminator { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Returns logits `[b]`.
    pub fn forward(&self, z: &Array2<f32>) -> (Vec<f32>, DiscriminatorCache) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::new();
        let mut h = z.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (mut y, c) = layer.forward(&h);
            caches.push(c);
            if i < last {
                y.mapv_inplace(|v| v.max(0.0));
                activations.push(y.clone());
            }
            h = y;
        }
        let logits = h.index_axis(Axis(1), 0).to_vec();
        (
            logits,
            DiscriminatorCache {
                layers: caches,
                activations,
            },
        )
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input codes.
    pub fn backward(&mut self, cache: &DiscriminatorCache, dlogits: &[f32]) -> Array2<f32> {
        let mut g = Array2::from_shape_vec((dlogits.len(), 1), dlogits.to_vec()).expect("column");
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                let act = &cache.activations[i];
                let mut gs = g.as_standard_layout().into_owned();
                relu_backward(
                    act.as_slice().expect("standard layout"),
                    gs.as_slice_mut().expect("standard layout"),
                );
                g = gs;
            }
            g = self.layers[i].backward(&cache.layers[i], &g);
        }
        g
    }
}

impl Module for Discriminator {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_counts() {
        let d = Discriminator::new(64, 32, 5, 1);
        assert_eq!(d.depth(), 5);
        assert_eq!(d.parameter_count(), 64 * 32 + 32 + 3 * (32 * 32 + 32) + 33);
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut d = Discriminator::new(3, 4, 3, 5);
        let z = Array2::from_shape_vec((2, 3), vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4]).unwrap();
        let (_, cache) = d.forward(&z);
        let dz = d.backward(&cache, &[1.0, 1.0]);
        let h = 1e-2f32;
        for i in 0..2 {
            for j in 0..3 {
                let mut zp = z.clone();
                zp[[i, j]] += h;
                let mut zm = z.clone();
                zm[[i, j]] -= h;
                let fd = (d.forward(&zp).0.iter().sum::<f32>() - d.forward(&zm).0.iter().sum::<f32>())
                    / (2.0 * h);
                assert!((fd - dz[[i, j]]).abs() < 1e-2, "{fd} vs {}", dz[[i, j]]);
            }
        }
    }
}
