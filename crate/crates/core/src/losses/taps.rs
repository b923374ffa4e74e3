use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, Array5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{spatial_average_pool, spatial_average_pool_backward, TapBundle, TapGrads};

/// Named feature tap of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TapId {
    E1,
    E2,
    Mid,
    D1,
    D2,
}

impl TapId {
    pub const ALL: [TapId; 5] = [TapId::E1, TapId::E2, TapId::Mid, TapId::D1, TapId::D2];

    pub fn is_encoder(self) -> bool {
        matches!(self, TapId::E1 | TapId::E2)
    }
}

impl fmt::Display for TapId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for TapId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "E1" => Ok(TapId::E1),
            "E2" => Ok(TapId::E2),
            "MID" => Ok(TapId::Mid),
            "D1" => Ok(TapId::D1),
            "D2" => Ok(TapId::D2),
            other => Err(Error::Config(format!("unknown tap '{other}'"))),
        }
    }
}

fn to_f64_3(a: &Array3<f32>) -> Array3<f64> {
    a.mapv(f64::from)
}

/// Tap as a `[b, c, t]` f64 feature; encoder taps are spatially averaged.
pub fn tap_feature(bundle: &TapBundle, id: TapId) -> Array3<f64> {
    match id {
        TapId::E1 => spatial_average_pool(&bundle.e1.mapv(f64::from)),
        TapId::E2 => spatial_average_pool(&bundle.e2.mapv(f64::from)),
        TapId::Mid => to_f64_3(&bundle.mid),
        TapId::D1 => to_f64_3(&bundle.d1),
        TapId::D2 => to_f64_3(&bundle.d2),
    }
}

/// Tap flattened per sample, without pooling: `[b, n]`.
pub fn tap_flat(bundle: &TapBundle, id: TapId) -> Array2<f64> {
    fn flat<D: ndarray::Dimension>(a: &ndarray::Array<f32, D>) -> Array2<f64> {
        let b = a.shape()[0];
        let n = a.len() / b.max(1);
        let data: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
        Array2::from_shape_vec((b, n), data).expect("flatten")
    }
    match id {
        TapId::E1 => flat(&bundle.e1),
        TapId::E2 => flat(&bundle.e2),
        TapId::Mid => flat(&bundle.mid),
        TapId::D1 => flat(&bundle.d1),
        TapId::D2 => flat(&bundle.d2),
    }
}

pub fn output_feature(bundle: &TapBundle) -> Array3<f64> {
    to_f64_3(&bundle.y_hat)
}

/// Loss gradients with respect to a student's output and taps, in f64.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureGrads {
    pub y_hat: Option<Array3<f64>>,
    pub e1: Option<Array5<f64>>,
    pub e2: Option<Array5<f64>>,
    pub mid: Option<Array3<f64>>,
    pub d1: Option<Array3<f64>>,
    pub d2: Option<Array3<f64>>,
}

fn accumulate<D: ndarray::Dimension>(slot: &mut Option<ndarray::Array<f64, D>>, g: ndarray::Array<f64, D>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl FeatureGrads {
    pub fn add_output(&mut self, g: Array3<f64>) {
        accumulate(&mut self.y_hat, g);
    }

    /// Adds a gradient taken with respect to [`tap_feature`].
    pub fn add_tap(&mut self, bundle: &TapBundle, id: TapId, g: Array3<f64>) {
        match id {
            TapId::E1 => {
                let (_, _, _, h, w) = bundle.e1.dim();
                accumulate(&mut self.e1, spatial_average_pool_backward(&g, h, w));
            }
            TapId::E2 => {
                let (_, _, _, h, w) = bundle.e2.dim();
                accumulate(&mut self.e2, spatial_average_pool_backward(&g, h, w));
            }
            TapId::Mid => accumulate(&mut self.mid, g),
            TapId::D1 => accumulate(&mut self.d1, g),
            TapId::D2 => accumulate(&mut self.d2, g),
        }
    }

    /// Adds a gradient taken with respect to [`tap_flat`].
    pub fn add_flat(&mut self, bundle: &TapBundle, id: TapId, g: Array2<f64>) {
        let data = g.into_raw_vec_and_offset().0;
        match id {
            TapId::E1 => accumulate(&mut self.e1, Array5::from_shape_vec(bundle.e1.dim(), data).expect("shape")),
            TapId::E2 => accumulate(&mut self.e2, Array5::from_shape_vec(bundle.e2.dim(), data).expect("shape")),
            TapId::Mid => accumulate(&mut self.mid, Array3::from_shape_vec(bundle.mid.dim(), data).expect("shape")),
            TapId::D1 => accumulate(&mut self.d1, Array3::from_shape_vec(bundle.d1.dim(), data).expect("shape")),
            TapId::D2 => accumulate(&mut self.d2, Array3::from_shape_vec(bundle.d2.dim(), data).expect("shape")),
        }
    }

    pub fn scaled(mut self, k: f64) -> Self {
        for g in [&mut self.y_hat, &mut self.mid, &mut self.d1, &mut self.d2].into_iter().flatten() {
            *g *= k;
        }
        for g in [&mut self.e1, &mut self.e2].into_iter().flatten() {
            *g *= k;
        }
        self
    }

    /// Single-precision gradients for [`crate::models::Network::backward`].
    pub fn to_tap_grads(&self) -> TapGrads {
        let c3 = |a: &Option<Array3<f64>>| a.as_ref().map(|g| g.mapv(|v| v as f32));
        let c5 = |a: &Option<Array5<f64>>| a.as_ref().map(|g| g.mapv(|v| v as f32));
        TapGrads {
            y_hat: c3(&self.y_hat),
            e1: c5(&self.e1),
            e2: c5(&self.e2),
            mid: c3(&self.mid),
            d1: c3(&self.d1),
            d2: c3(&self.d2),
            mu: None,
            logvar: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tap_names_round_trip() {
        for id in TapId::ALL {
            assert_eq!(id.to_string().parse::<TapId>().unwrap(), id);
        }
        assert!("E3".parse::<TapId>().is_err());
        assert_eq!(serde_json::to_string(&TapId::Mid).unwrap(), "\"Mid\"");
    }
}
