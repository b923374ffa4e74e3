use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use super::{Module, Param};

/// Fully connected layer, `y = x W^T + b` on `[batch, features]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Clone)]
pub struct LinearCache {
    input: Array2<f32>,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Linear {
            weight: Param::fan_in_uniform(
                format!("{name}.weight"),
                &[out_features, in_features],
                in_features,
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[out_features]),
            in_features,
            out_features,
        }
    }

    fn weight_view(&self) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((self.out_features, self.in_features), &self.weight.value)
            .expect("weight shape")
    }

    pub fn forward(&self, x: &Array2<f32>) -> (Array2<f32>, LinearCache) {
        let b = x.nrows();
        let mut y = Array2::from_shape_fn((b, self.out_features), |(_, o)| self.bias.value[o]);
        general_mat_mul(1.0, x, &self.weight_view().t(), 1.0, &mut y);
        (y, LinearCache { input: x.clone() })
    }

    pub fn backward(&mut self, cache: &LinearCache, dy: &Array2<f32>) -> Array2<f32> {
        {
            let mut dw =
                ArrayViewMut2::from_shape((self.out_features, self.in_features), &mut self.weight.grad)
                    .expect("weight grad shape");
            general_mat_mul(1.0, &dy.t(), &cache.input, 1.0, &mut dw);
        }
        for (g, s) in self.bias.grad.iter_mut().zip(dy.sum_axis(Axis(0))) {
            *g += s;
        }
        let mut dx = Array2::zeros((dy.nrows(), self.in_features));
        general_mat_mul(1.0, dy, &self.weight_view(), 0.0, &mut dx);
        dx
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ten_to_five_has_55_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(Linear::new("l", 10, 5, &mut rng).parameter_count(), 55);
    }

    #[test]
    fn gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lin = Linear::new("l", 3, 2, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f32 - j as f32) * 0.3);
        let (y, cache) = lin.forward(&x);
        assert_eq!(y.dim(), (4, 2));
        let dy = Array2::from_shape_fn((4, 2), |(i, j)| 0.1 * (i + 2 * j) as f32);
        let dx = lin.backward(&cache, &dy);
        // d(sum(dy * y))/dx = dy W
        for i in 0..4 {
            for k in 0..3 {
                let expect: f32 = (0..2).map(|o| dy[[i, o]] * lin.weight.value[o * 3 + k]).sum();
                assert!((dx[[i, k]] - expect).abs() < 1e-6);
            }
        }
        for o in 0..2 {
            for k in 0..3 {
                let expect: f32 = (0..4).map(|i| dy[[i, o]] * x[[i, k]]).sum();
                assert!((lin.weight.grad[o * 3 + k] - expect).abs() < 1e-5);
            }
        }
    }
}
