use super::dense::sigmoid;
use super::gemm::{gemm, Mat};
use super::params::{Grads, Init, ParamId, ParamStore};
use rand::Rng;

/// Recurrent state of one LSTM for a batch: `batch × hidden` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(batch: usize, width: usize) -> Self {
        LstmState {
            hidden: vec![0.0; batch * width],
            cell: vec![0.0; batch * width],
        }
    }
}

/// LSTM cell with gate order (input, forget, candidate, output).
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, `batch × 4h`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        forget_bias: f64,
        rng: &mut R,
    ) -> Self {
        let w_ih = store.add(
            &format!("{name}.w_ih"),
            &[4 * hidden, inputs],
            Init::Xavier {
                fan_in: inputs,
                fan_out: hidden,
            },
            rng,
        );
        let w_hh = store.add(
            &format!("{name}.w_hh"),
            &[4 * hidden, hidden],
            Init::Xavier {
                fan_in: hidden,
                fan_out: hidden,
            },
            rng,
        );
        let bias = store.add(&format!("{name}.b"), &[4 * hidden], Init::Zeros, rng);
        store.value_mut(bias)[hidden..2 * hidden]
            .iter_mut()
            .for_each(|b| *b = forget_bias);
        LstmCell {
            w_ih,
            w_hh,
            bias,
            inputs,
            hidden,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: &[f64],
        state: &LstmState,
        batch: usize,
    ) -> (LstmState, LstmStepCache) {
        let h = self.hidden;
        let bias = store.value(self.bias);
        let mut gates: Vec<f64> = (0..batch).flat_map(|_| bias.iter().copied()).collect();
        gemm(
            Mat::new(x, batch, self.inputs),
            Mat::new(store.value(self.w_ih), 4 * h, self.inputs).t(),
            1.0,
            &mut gates,
        );
        gemm(
            Mat::new(&state.hidden, batch, h),
            Mat::new(store.value(self.w_hh), 4 * h, h).t(),
            1.0,
            &mut gates,
        );
        let mut next = LstmState::zeros(batch, h);
        let mut tanh_c = vec![0.0; batch * h];
        for b in 0..batch {
            let g = &mut gates[b * 4 * h..(b + 1) * 4 * h];
            for j in 0..h {
                g[j] = sigmoid(g[j]);
                g[h + j] = sigmoid(g[h + j]);
                g[2 * h + j] = g[2 * h + j].tanh();
                g[3 * h + j] = sigmoid(g[3 * h + j]);
                let c = g[h + j] * state.cell[b * h + j] + g[j] * g[2 * h + j];
                let tc = c.tanh();
                next.cell[b * h + j] = c;
                tanh_c[b * h + j] = tc;
                next.hidden[b * h + j] = g[3 * h + j] * tc;
            }
        }
        let cache = LstmStepCache {
            x: x.to_vec(),
            h_prev: state.hidden.clone(),
            c_prev: state.cell.clone(),
            gates,
            tanh_c,
        };
        (next, cache)
    }

    /// Back-propagate one step. `dnext` holds `dL/dh` and `dL/dc` of this
    /// step's output; returns `(dL/dx, dL/dstate_prev)`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &LstmStepCache,
        dnext: &LstmState,
        batch: usize,
        grads: &mut Grads,
    ) -> (Vec<f64>, LstmState) {
        let h = self.hidden;
        let mut dgates = vec![0.0; batch * 4 * h];
        let mut dprev = LstmState::zeros(batch, h);
        for b in 0..batch {
            let g = &cache.gates[b * 4 * h..(b + 1) * 4 * h];
            let dg = &mut dgates[b * 4 * h..(b + 1) * 4 * h];
            for j in 0..h {
                let k = b * h + j;
                let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = cache.tanh_c[k];
                let dh = dnext.hidden[k];
                let dc = dnext.cell[k] + dh * o * (1.0 - tc * tc);
                dg[j] = dc * cand * i * (1.0 - i);
                dg[h + j] = dc * cache.c_prev[k] * f * (1.0 - f);
                dg[2 * h + j] = dc * i * (1.0 - cand * cand);
                dg[3 * h + j] = dh * tc * o * (1.0 - o);
                dprev.cell[k] = dc * f;
            }
        }
        gemm(
            Mat::new(&dgates, batch, 4 * h).t(),
            Mat::new(&cache.x, batch, self.inputs),
            1.0,
            grads.get_mut(self.w_ih),
        );
        gemm(
            Mat::new(&dgates, batch, 4 * h).t(),
            Mat::new(&cache.h_prev, batch, h),
            1.0,
            grads.get_mut(self.w_hh),
        );
        let db = grads.get_mut(self.bias);
        for row in dgates.chunks_exact(4 * h) {
            for (g, d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; batch * self.inputs];
        gemm(
            Mat::new(&dgates, batch, 4 * h),
            Mat::new(store.value(self.w_ih), 4 * h, self.inputs),
            0.0,
            &mut dx,
        );
        gemm(
            Mat::new(&dgates, batch, 4 * h),
            Mat::new(store.value(self.w_hh), 4 * h, h),
            0.0,
            &mut dprev.hidden,
        );
        (dx, dprev)
    }
}
