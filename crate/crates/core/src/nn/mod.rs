//! Dense f64 neural-network kernel with hand-chained reverse-mode gradients.
//!
//! Every layer exposes a `forward` that returns what its `backward` needs and
//! a `backward` that accumulates parameter gradients into a [`Grads`] buffer
//! and returns the gradient w.r.t. its input. The network graph is fixed, so
//! there is no tape.

pub mod conv;
pub mod crop;
pub mod dense;
pub mod gemm;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod params;
pub mod tensor;

pub use conv::{conv2d_backward, conv2d_forward, Conv2d, ConvCache};
pub use crop::{crop_gather, crop_scatter_add, crop_scatter_backward, Cell};
pub use dense::{concat_rows, relu, relu_backward, sigmoid, split_rows, Dense, Mlp, MlpCache};
pub use loss::{mse, weighted_mse};
pub use lstm::{LstmCell, LstmState, LstmStepCache};
pub use params::{AdamConfig, Grads, Init, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod gradient_tests {
    use super::gradcheck::{check, numeric_input_grad, relative_error};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn target_loss(y: &[f64], t: &[f64]) -> f64 {
        y.iter().zip(t).map(|(a, b)| 0.5 * (a - b).powi(2)).sum()
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "c", 4, 3, 3, 2, 1, &mut rng);
            store
                .value_mut(conv.b)
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.5..0.5));
            let x = Tensor::from_vec(&[2, 4, 8, 8], random_vec(&mut rng, 2 * 4 * 64));
            let (y, caches) = conv2d_forward(&conv, &store, &x).unwrap();
            let t = random_vec(&mut rng, y.len());
            let dy: Vec<f64> = y.data().iter().zip(&t).map(|(a, b)| a - b).collect();
            let mut grads = store.zero_grads();
            let dx = conv2d_backward(
                &conv,
                &store,
                &caches,
                &Tensor::from_vec(y.shape(), dy),
                &mut grads,
            );
            let rep = check(&mut store, &grads, 1e-5, usize::MAX, |s| {
                target_loss(conv2d_forward(&conv, s, &x).unwrap().0.data(), &t)
            });
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
            let mut xd = x.data().to_vec();
            let num = numeric_input_grad(&mut xd, 1e-5, |v| {
                let xt = Tensor::from_vec(&[2, 4, 8, 8], v.to_vec());
                target_loss(conv2d_forward(&conv, &store, &xt).unwrap().0.data(), &t)
            });
            for (a, n) in dx.data().iter().zip(&num) {
                assert!(relative_error(*a, *n) < 1e-4);
            }
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let mlp = Mlp::new(&mut store, "m", 5, 7, 3, &mut rng);
            let x = random_vec(&mut rng, 4 * 5);
            let t = random_vec(&mut rng, 4 * 3);
            let (y, cache) = mlp.forward(&store, &x, 4);
            let dy: Vec<f64> = y.iter().zip(&t).map(|(a, b)| a - b).collect();
            let mut grads = store.zero_grads();
            let dx = mlp.backward(&store, &cache, &dy, 4, &mut grads);
            let rep = check(&mut store, &grads, 1e-5, usize::MAX, |s| {
                target_loss(&mlp.forward(s, &x, 4).0, &t)
            });
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
            let mut xv = x.clone();
            let num = numeric_input_grad(&mut xv, 1e-5, |v| target_loss(&mlp.forward(&store, v, 4).0, &t));
            for (a, n) in dx.iter().zip(&num) {
                assert!(relative_error(*a, *n) < 1e-4);
            }
        }
    }

    #[test]
    fn lstm_bptt_matches_finite_differences() {
        let (inp, hid, batch, steps) = (3, 4, 2, 10);
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut store = ParamStore::new();
            let cell = LstmCell::new(&mut store, "l", inp, hid, 1.0, &mut rng);
            let xs: Vec<Vec<f64>> = (0..steps).map(|_| random_vec(&mut rng, batch * inp)).collect();
            let ts: Vec<Vec<f64>> = (0..steps).map(|_| random_vec(&mut rng, batch * hid)).collect();
            let unroll = |s: &ParamStore| {
                let mut st = LstmState::zeros(batch, hid);
                let mut loss = 0.0;
                for (x, t) in xs.iter().zip(&ts) {
                    st = cell.forward(s, x, &st, batch).0;
                    loss += target_loss(&st.hidden, t);
                }
                loss
            };
            let mut st = LstmState::zeros(batch, hid);
            let mut caches = Vec::new();
            let mut outs = Vec::new();
            for x in &xs {
                let (n, c) = cell.forward(&store, x, &st, batch);
                caches.push(c);
                outs.push(n.hidden.clone());
                st = n;
            }
            let mut grads = store.zero_grads();
            let mut carry = LstmState::zeros(batch, hid);
            for h in (0..steps).rev() {
                for (i, d) in carry.hidden.iter_mut().enumerate() {
                    *d += outs[h][i] - ts[h][i];
                }
                let (_, prev) = cell.backward(&store, &caches[h], &carry, batch, &mut grads);
                carry = prev;
            }
            let rep = check(&mut store, &grads, 1e-5, usize::MAX, unroll);
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        }
    }

    #[test]
    fn gather_scatter_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (c, h, w) = (3, 7, 12);
        for k in [1usize, 3, 5] {
            let r = k / 2;
            for row in r..h - r {
                for col in r..w - r {
                    let m = random_vec(&mut rng, c * h * w);
                    let g = random_vec(&mut rng, c * k * k);
                    let center = Cell::new(row, col);
                    let lhs: f64 = crop_gather(&m, c, h, w, center, k)
                        .iter()
                        .zip(&g)
                        .map(|(a, b)| a * b)
                        .sum();
                    let rhs: f64 = crop_scatter_backward(&g, center, k, [c, h, w])
                        .iter()
                        .zip(&m)
                        .map(|(a, b)| a * b)
                        .sum();
                    assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }
    }
}
