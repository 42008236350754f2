use super::gemm::{gemm, Mat};
use super::params::{Grads, Init, ParamId, ParamStore};
use rand::Rng;

/// Fully connected layer `y = x·Wᵀ + b` over a batch of row vectors.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        relu_follows: bool,
        rng: &mut R,
    ) -> Self {
        let init = if relu_follows {
            Init::He { fan_in: inputs }
        } else {
            Init::Xavier {
                fan_in: inputs,
                fan_out: outputs,
            }
        };
        let w = store.add(&format!("{name}.w"), &[outputs, inputs], init, rng);
        let b = store.add(&format!("{name}.b"), &[outputs], Init::Zeros, rng);
        Dense {
            w,
            b,
            inputs,
            outputs,
        }
    }

    /// `x` is `batch × inputs`; returns `batch × outputs`.
    pub fn forward(&self, store: &ParamStore, x: &[f64], batch: usize) -> Vec<f64> {
        let bias = store.value(self.b);
        let mut y: Vec<f64> = (0..batch).flat_map(|_| bias.iter().copied()).collect();
        gemm(
            Mat::new(x, batch, self.inputs),
            Mat::new(store.value(self.w), self.outputs, self.inputs).t(),
            1.0,
            &mut y,
        );
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &[f64],
        dy: &[f64],
        batch: usize,
        grads: &mut Grads,
    ) -> Vec<f64> {
        gemm(
            Mat::new(dy, batch, self.outputs).t(),
            Mat::new(x, batch, self.inputs),
            1.0,
            grads.get_mut(self.w),
        );
        let db = grads.get_mut(self.b);
        for row in dy.chunks_exact(self.outputs) {
            for (g, d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; batch * self.inputs];
        gemm(
            Mat::new(dy, batch, self.outputs),
            Mat::new(store.value(self.w), self.outputs, self.inputs),
            0.0,
            &mut dx,
        );
        dx
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Gradient through ReLU given its *output*.
pub fn relu_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(dy)
        .map(|(y, d)| if *y > 0.0 { *d } else { 0.0 })
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise concatenation of two `batch × n` matrices.
pub fn concat_rows(a: &[f64], a_cols: usize, b: &[f64], b_cols: usize, batch: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * (a_cols + b_cols));
    for r in 0..batch {
        out.extend_from_slice(&a[r * a_cols..(r + 1) * a_cols]);
        out.extend_from_slice(&b[r * b_cols..(r + 1) * b_cols]);
    }
    out
}

/// Inverse of [`concat_rows`] for gradients.
pub fn split_rows(x: &[f64], a_cols: usize, b_cols: usize, batch: usize) -> (Vec<f64>, Vec<f64>) {
    let w = a_cols + b_cols;
    let mut a = Vec::with_capacity(batch * a_cols);
    let mut b = Vec::with_capacity(batch * b_cols);
    for r in 0..batch {
        a.extend_from_slice(&x[r * w..r * w + a_cols]);
        b.extend_from_slice(&x[r * w + a_cols..(r + 1) * w]);
    }
    (a, b)
}

/// Two-layer perceptron `out = W2·relu(W1·x + b1) + b2`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub hidden: Dense,
    pub out: Dense,
}

pub struct MlpCache {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        Mlp {
            hidden: Dense::new(store, &format!("{name}.0"), inputs, hidden, true, rng),
            out: Dense::new(store, &format!("{name}.1"), hidden, outputs, false, rng),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], batch: usize) -> (Vec<f64>, MlpCache) {
        let h = relu(&self.hidden.forward(store, x, batch));
        let y = self.out.forward(store, &h, batch);
        (y, MlpCache { x: x.to_vec(), h })
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &MlpCache,
        dy: &[f64],
        batch: usize,
        grads: &mut Grads,
    ) -> Vec<f64> {
        let dh = self.out.backward(store, &cache.h, dy, batch, grads);
        let dh = relu_backward(&cache.h, &dh);
        self.hidden.backward(store, &cache.x, &dh, batch, grads)
    }
}
