use ndarray::linalg::general_mat_mul;
use ndarray::{Array3, Array5, ArrayView2, ArrayViewMut2};
use rand::Rng;

use super::{Module, Param};

/// 3-D convolution over `[b, c, t, h, w]`, computed per sample as
/// im2col followed by a GEMM.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: Param,
    pub bias: Param,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct Conv3dCache {
    cols: Vec<Vec<f32>>,
    input_dims: [usize; 3],
}

fn out_len(n: usize, k: usize, s: usize, p: usize) -> usize {
    (n + 2 * p - k) / s + 1
}

impl Conv3d {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        rng: &mut R,
    ) -> Self {
        let k = in_channels * kernel.iter().product::<usize>();
        Conv3d {
            weight: Param::fan_in_uniform(format!("{name}.weight"), &[out_channels, k], k, rng),
            bias: Param::zeros(format!("{name}.bias"), &[out_channels]),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    pub fn output_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|i| out_len(dims[i], self.kernel[i], self.stride[i], self.padding[i]))
    }

    fn im2col(&self, x: &[f32], dims: [usize; 3], out: [usize; 3], cols: &mut [f32]) {
        let [t, h, w] = dims;
        let [ot, oh, ow] = out;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.padding;
        let p = ot * oh * ow;
        let mut row = 0;
        for ci in 0..self.in_channels {
            let plane = &x[ci * t * h * w..(ci + 1) * t * h * w];
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let dst = &mut cols[row * p..(row + 1) * p];
                        let mut idx = 0;
                        for a in 0..ot {
                            let it = (a * st + dt) as isize - pt as isize;
                            let t_ok = it >= 0 && (it as usize) < t;
                            for b in 0..oh {
                                let ih = (b * sh + dh) as isize - ph as isize;
                                let h_ok = t_ok && ih >= 0 && (ih as usize) < h;
                                for c in 0..ow {
                                    let iw = (c * sw + dw) as isize - pw as isize;
                                    dst[idx] = if h_ok && iw >= 0 && (iw as usize) < w {
                                        plane[(it as usize * h + ih as usize) * w + iw as usize]
                                    } else {
                                        0.0
                                    };
                                    idx += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], dims: [usize; 3], out: [usize; 3], dx: &mut [f32]) {
        let [t, h, w] = dims;
        let [ot, oh, ow] = out;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.padding;
        let p = ot * oh * ow;
        let mut row = 0;
        for ci in 0..self.in_channels {
            let plane = &mut dx[ci * t * h * w..(ci + 1) * t * h * w];
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let src = &cols[row * p..(row + 1) * p];
                        let mut idx = 0;
                        for a in 0..ot {
                            let it = (a * st + dt) as isize - pt as isize;
                            let t_ok = it >= 0 && (it as usize) < t;
                            for b in 0..oh {
                                let ih = (b * sh + dh) as isize - ph as isize;
                                let h_ok = t_ok && ih >= 0 && (ih as usize) < h;
                                for c in 0..ow {
                                    let iw = (c * sw + dw) as isize - pw as isize;
                                    if h_ok && iw >= 0 && (iw as usize) < w {
                                        plane[(it as usize * h + ih as usize) * w + iw as usize] +=
                                            src[idx];
                                    }
                                    idx += 1;
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Array5<f32>) -> (Array5<f32>, Conv3dCache) {
        let (b, c, t, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "{}: channel mismatch", self.weight.name);
        let dims = [t, h, w];
        let out = self.output_dims(dims);
        let p: usize = out.iter().product();
        let k = self.patch_len();
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let in_stride = c * t * h * w;
        let weight = ArrayView2::from_shape((self.out_channels, k), &self.weight.value)
            .expect("weight shape");
        let mut y = Array5::<f32>::zeros((b, self.out_channels, out[0], out[1], out[2]));
        let ys = y.as_slice_mut().expect("fresh array");
        let mut cols = Vec::with_capacity(b);
        for n in 0..b {
            let mut col = vec![0.0f32; k * p];
            self.im2col(&xs[n * in_stride..(n + 1) * in_stride], dims, out, &mut col);
            let dst = &mut ys[n * self.out_channels * p..(n + 1) * self.out_channels * p];
            for (o, chunk) in dst.chunks_exact_mut(p).enumerate() {
                chunk.fill(self.bias.value[o]);
            }
            let colv = ArrayView2::from_shape((k, p), &col).expect("col shape");
            let mut yv = ArrayViewMut2::from_shape((self.out_channels, p), dst).expect("out shape");
            general_mat_mul(1.0, &weight, &colv, 1.0, &mut yv);
            cols.push(col);
        }
        (
            y,
            Conv3dCache {
                cols,
                input_dims: dims,
            },
        )
    }

    /// Accumulates parameter gradients and returns the input gradient when requested.
    pub fn backward(
        &mut self,
        cache: &Conv3dCache,
        dy: &Array5<f32>,
        need_input_grad: bool,
    ) -> Option<Array5<f32>> {
        let (b, co, ot, oh, ow) = dy.dim();
        assert_eq!(co, self.out_channels);
        let out = [ot, oh, ow];
        let p = ot * oh * ow;
        let k = self.patch_len();
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("standard layout");
        let [t, h, w] = cache.input_dims;
        let in_stride = self.in_channels * t * h * w;
        let mut dx = need_input_grad.then(|| Array5::<f32>::zeros((b, self.in_channels, t, h, w)));
        let mut dcol = vec![0.0f32; if need_input_grad { k * p } else { 0 }];
        for n in 0..b {
            let g = &dys[n * co * p..(n + 1) * co * p];
            let gv = ArrayView2::from_shape((co, p), g).expect("grad shape");
            let colv = ArrayView2::from_shape((k, p), &cache.cols[n]).expect("col shape");
            {
                let mut dw = ArrayViewMut2::from_shape((co, k), &mut self.weight.grad)
                    .expect("weight grad shape");
                general_mat_mul(1.0, &gv, &colv.t(), 1.0, &mut dw);
            }
            for (o, chunk) in g.chunks_exact(p).enumerate() {
                self.bias.grad[o] += chunk.iter().sum::<f32>();
            }
            if let Some(dx) = dx.as_mut() {
                let weight = ArrayView2::from_shape((co, k), &self.weight.value).expect("weight");
                {
                    let mut dcv = ArrayViewMut2::from_shape((k, p), &mut dcol[..]).expect("dcol");
                    general_mat_mul(1.0, &weight.t(), &gv, 0.0, &mut dcv);
                }
                let dxs = dx.as_slice_mut().expect("fresh array");
                self.col2im(
                    &dcol,
                    cache.input_dims,
                    out,
                    &mut dxs[n * in_stride..(n + 1) * in_stride],
                );
            }
        }
        dx
    }
}

impl Module for Conv3d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// 1-D convolution over `[b, c, t]` with "same" padding for odd kernels.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub inner: Conv3d,
}

impl Conv1d {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        Conv1d {
            inner: Conv3d::new(
                name,
                in_channels,
                out_channels,
                [kernel, 1, 1],
                [1, 1, 1],
                [kernel / 2, 0, 0],
                rng,
            ),
        }
    }

    pub fn forward(&self, x: &Array3<f32>) -> (Array3<f32>, Conv3dCache) {
        let (b, c, t) = x.dim();
        let x5 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b, c, t, 1, 1))
            .expect("reshape");
        let (y, cache) = self.inner.forward(&x5);
        let (b, c, t, _, _) = y.dim();
        (y.into_shape_with_order((b, c, t)).expect("reshape"), cache)
    }

    pub fn backward(
        &mut self,
        cache: &Conv3dCache,
        dy: &Array3<f32>,
        need_input_grad: bool,
    ) -> Option<Array3<f32>> {
        let (b, c, t) = dy.dim();
        let dy5 = dy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((b, c, t, 1, 1))
            .expect("reshape");
        self.inner
            .backward(cache, &dy5, need_input_grad)
            .map(|dx| {
                let (b, c, t, _, _) = dx.dim();
                dx.into_shape_with_order((b, c, t)).expect("reshape")
            })
    }
}

impl Module for Conv1d {
    fn params(&self) -> Vec<&Param> {
        self.inner.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.inner.params_mut()
    }
}
