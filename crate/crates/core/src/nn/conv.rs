//! 2-D cross-correlation via im2col.

use super::gemm::{gemm, Mat};
use super::params::{Grads, Init, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub w: ParamId,
    pub b: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Saved activations for one sample.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f64>,
    in_h: usize,
    in_w: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let w = store.add(
            &format!("{name}.w"),
            &[out_channels, in_channels, kernel, kernel],
            Init::He { fan_in },
            rng,
        );
        let b = store.add(&format!("{name}.b"), &[out_channels], Init::Zeros, rng);
        Conv2d {
            name: name.to_string(),
            w,
            b,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_size(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let ph = in_h + 2 * self.padding;
        let pw = in_w + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel || self.stride == 0 {
            return Err(Error::Config(format!(
                "layer {}: input {in_h}x{in_w} too small for kernel {} stride {} padding {}",
                self.name, self.kernel, self.stride, self.padding
            )));
        }
        Ok((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    /// Single sample: `input` is `C×H×W`, returns `O×Ho×Wo`.
    pub fn forward_one(
        &self,
        store: &ParamStore,
        input: &[f64],
        in_h: usize,
        in_w: usize,
    ) -> Result<(Vec<f64>, usize, usize, ConvCache)> {
        if input.len() != self.in_channels * in_h * in_w {
            return Err(Error::Config(format!(
                "layer {}: expected {} channels of {in_h}x{in_w}, got {} values",
                self.name,
                self.in_channels,
                input.len()
            )));
        }
        let (oh, ow) = self.output_size(in_h, in_w)?;
        let cols = self.im2col(input, in_h, in_w, oh, ow);
        let ckk = self.in_channels * self.kernel * self.kernel;
        let bias = store.value(self.b);
        let mut out: Vec<f64> = bias
            .iter()
            .flat_map(|b| std::iter::repeat_n(*b, oh * ow))
            .collect();
        gemm(
            Mat::new(store.value(self.w), self.out_channels, ckk),
            Mat::new(&cols, ckk, oh * ow),
            1.0,
            &mut out,
        );
        Ok((out, oh, ow, ConvCache { cols, in_h, in_w }))
    }

    /// Accumulates weight/bias gradients; returns `dL/dinput`.
    pub fn backward_one(
        &self,
        store: &ParamStore,
        cache: &ConvCache,
        dout: &[f64],
        grads: &mut Grads,
    ) -> Vec<f64> {
        let (oh, ow) = self.output_size(cache.in_h, cache.in_w).expect("validated in forward");
        let ckk = self.in_channels * self.kernel * self.kernel;
        let hw = oh * ow;
        gemm(
            Mat::new(dout, self.out_channels, hw),
            Mat::new(&cache.cols, ckk, hw).t(),
            1.0,
            grads.get_mut(self.w),
        );
        let db = grads.get_mut(self.b);
        for (o, g) in db.iter_mut().enumerate() {
            *g += dout[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
        let mut dcols = vec![0.0; ckk * hw];
        gemm(
            Mat::new(store.value(self.w), self.out_channels, ckk).t(),
            Mat::new(dout, self.out_channels, hw),
            0.0,
            &mut dcols,
        );
        self.col2im(&dcols, cache.in_h, cache.in_w, oh, ow)
    }

    fn im2col(&self, input: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        let k = self.kernel;
        let mut cols = vec![0.0; self.in_channels * k * k * oh * ow];
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &input[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
        let k = self.kernel;
        let mut dx = vec![0.0; self.in_channels * h * w];
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &dcols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (c * h + iy as usize) * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dx[base + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Batched NCHW forward. Returns the output tensor and per-sample caches.
pub fn conv2d_forward(
    layer: &Conv2d,
    store: &ParamStore,
    input: &Tensor,
) -> Result<(Tensor, Vec<ConvCache>)> {
    let shape = input.shape();
    if shape.len() != 4 || shape[1] != layer.in_channels {
        return Err(Error::Config(format!(
            "layer {}: expected NCHW input with {} channels, got {:?}",
            layer.name,
            layer.in_channels,
            shape
        )));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = layer.output_size(h, w)?;
    let mut out = Vec::with_capacity(n * layer.out_channels * oh * ow);
    let mut caches = Vec::with_capacity(n);
    for s in input.data().chunks_exact(c * h * w) {
        let (y, _, _, cache) = layer.forward_one(store, s, h, w)?;
        out.extend_from_slice(&y);
        caches.push(cache);
    }
    Ok((
        Tensor::from_vec(&[n, layer.out_channels, oh, ow], out),
        caches,
    ))
}

/// Batched NCHW backward; accumulates into `grads`, returns `dL/dinput`.
pub fn conv2d_backward(
    layer: &Conv2d,
    store: &ParamStore,
    caches: &[ConvCache],
    dout: &Tensor,
    grads: &mut Grads,
) -> Tensor {
    let n = caches.len();
    let per = dout.len() / n.max(1);
    let mut dx = Vec::new();
    let (h, w) = caches.first().map(|c| (c.in_h, c.in_w)).unwrap_or((0, 0));
    for (cache, d) in caches.iter().zip(dout.data().chunks_exact(per.max(1))) {
        dx.extend(layer.backward_one(store, cache, d, grads));
    }
    Tensor::from_vec(&[n, layer.in_channels, h, w], dx)
}
