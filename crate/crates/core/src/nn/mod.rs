//! Minimal differentiable building blocks with hand-written backward passes.

pub mod adamw;
pub mod batchnorm;
pub mod checkpoint;
pub mod gumbel;
pub mod linear;
pub mod loss;
pub mod lstm;
pub mod mlp;
pub mod tensor;

pub use adamw::{AdamW, AdamWConfig};
pub use batchnorm::BatchNorm;
pub use checkpoint::Checkpoint;
pub use gumbel::{gumbel_backward, gumbel_softmax, gumbel_softmax_with_noise, GumbelSample};
pub use linear::Linear;
pub use loss::{gaussian_nll_unit_var, mse, softmax, softmax_cross_entropy};
pub use lstm::{Lstm, LstmCache};
pub use mlp::{Head, Mlp, MlpCache, MlpSpec};
pub use tensor::{Module, Tensor};

use ndarray::{Array2, Axis};

/// Column-wise concatenation of equally tall blocks.
pub fn hcat(blocks: &[&Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("blocks must have equal row counts")
}

/// Rows of `x` selected by `idx`.
pub fn gather_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.normal())
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
    }

    /// Central differences of `f` w.r.t. every entry of `x`.
    fn numeric_grad(x: &mut Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
        let h = 1e-5;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let orig = x[[r, c]];
            x[[r, c]] = orig + h;
            let up = f(x);
            x[[r, c]] = orig - h;
            let down = f(x);
            x[[r, c]] = orig;
            g[[r, c]] = (up - down) / (2.0 * h);
        }
        g
    }

    fn assert_close(analytic: &Array2<f64>, numeric: &Array2<f64>, tol: f64) {
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            assert!(rel_err(*a, *n) < tol || (a - n).abs() < 1e-8, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = Rng::new(1);
        let mut layer = Linear::new(4, 3, &mut rng);
        let mut x = random(5, 4, &mut rng);
        let w = random(5, 3, &mut rng);
        let dx = layer.backward(&x, &w);
        let l2 = layer.clone();
        let nx = numeric_grad(&mut x, |x| (l2.forward(x) * &w).sum());
        assert_close(&dx, &nx, 1e-4);
        let mut wt = layer.weight.value.clone();
        let nw = numeric_grad(&mut wt, |wt| {
            let mut l = layer.clone();
            l.weight.value = wt.clone();
            (l.forward(&x) * &w).sum()
        });
        assert_close(&layer.weight.grad, &nw, 1e-4);
    }

    #[test]
    fn mlp_with_batch_norm_gradients_match() {
        let mut rng = Rng::new(2);
        let mut mlp = Mlp::new(MlpSpec::new(3, 6, 2, 2, Head::GaussianMean), &mut rng);
        let mut x = random(7, 3, &mut rng);
        let w = random(7, 2, &mut rng);
        let (_, cache) = mlp.forward(&x, true);
        let dx = mlp.backward(&cache, &w);
        let base = mlp.clone();
        let nx = numeric_grad(&mut x, |x| {
            let mut m = base.clone();
            (m.forward(x, true).0 * &w).sum()
        });
        assert_close(&dx, &nx, 1e-4);
        let mut w0 = base.layers[0].weight.value.clone();
        let nw = numeric_grad(&mut w0, |w0| {
            let mut m = base.clone();
            m.layers[0].weight.value = w0.clone();
            (m.forward(&x, true).0 * &w).sum()
        });
        assert_close(&mlp.layers[0].weight.grad, &nw, 1e-4);
        let mut g0 = base.norms[1].gamma.value.clone();
        let ng = numeric_grad(&mut g0, |g0| {
            let mut m = base.clone();
            m.norms[1].gamma.value = g0.clone();
            (m.forward(&x, true).0 * &w).sum()
        });
        assert_close(&mlp.norms[1].gamma.grad, &ng, 1e-4);
    }

    #[test]
    fn eval_mode_backward_matches() {
        let mut rng = Rng::new(3);
        let mut mlp = Mlp::new(MlpSpec::new(3, 5, 1, 2, Head::Logits), &mut rng);
        for _ in 0..3 {
            mlp.forward(&random(8, 3, &mut rng), true);
        }
        let mut x = random(4, 3, &mut rng);
        let w = random(4, 2, &mut rng);
        let (_, cache) = mlp.forward(&x, false);
        let dx = mlp.backward(&cache, &w);
        let nx = numeric_grad(&mut x, |x| (mlp.predict(x) * &w).sum());
        assert_close(&dx, &nx, 1e-4);
    }

    #[test]
    fn batch_norm_eval_uses_running_statistics() {
        let mut bn = BatchNorm::new(2);
        let x = ndarray::array![[1.0, 2.0], [3.0, 6.0]];
        bn.forward_train(&x);
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
        let y = bn.forward_eval(&ndarray::array![[0.2, 0.4]]);
        assert!(y[[0, 0]].abs() < 1e-12);
    }

    fn lstm_loss(lstm: &Lstm, xs: &[Array2<f64>], ws: &[Array2<f64>]) -> f64 {
        let (hs, _) = lstm.forward(xs);
        hs.iter().zip(ws).map(|(h, w)| (h * w).sum()).sum()
    }

    #[test]
    fn lstm_gradients_match_through_recurrence() {
        let mut rng = Rng::new(4);
        let mut lstm = Lstm::new(3, 4, &mut rng);
        let mut xs: Vec<_> = (0..5).map(|_| random(2, 3, &mut rng)).collect();
        let ws: Vec<_> = (0..5).map(|_| random(2, 4, &mut rng)).collect();
        let (_, cache) = lstm.forward(&xs);
        let dxs = lstm.backward(&cache, &ws, None);
        let base = lstm.clone();
        let mut whh = base.w_hh.value.clone();
        let n = numeric_grad(&mut whh, |w| {
            let mut l = base.clone();
            l.w_hh.value = w.clone();
            lstm_loss(&l, &xs, &ws)
        });
        assert_close(&lstm.w_hh.grad, &n, 1e-3);
        let mut wih = base.w_ih.value.clone();
        let n = numeric_grad(&mut wih, |w| {
            let mut l = base.clone();
            l.w_ih.value = w.clone();
            lstm_loss(&l, &xs, &ws)
        });
        assert_close(&lstm.w_ih.grad, &n, 1e-3);
        let mut x0 = xs[0].clone();
        let n = numeric_grad(&mut x0, |x| {
            xs[0] = x.clone();
            lstm_loss(&base, &xs, &ws)
        });
        assert_close(&dxs[0], &n, 1e-3);
    }

    #[test]
    fn truncated_bptt_cuts_gradient_across_windows() {
        let mut rng = Rng::new(5);
        let mut lstm = Lstm::new(2, 3, &mut rng);
        let xs: Vec<_> = (0..6).map(|_| random(1, 2, &mut rng)).collect();
        let mut ws: Vec<_> = (0..6).map(|_| Array2::zeros((1, 3))).collect();
        ws[4] = random(1, 3, &mut rng);
        let (_, cache) = lstm.forward(&xs);
        let dxs = lstm.backward(&cache, &ws, Some(3));
        assert!(dxs[3].iter().any(|v| v.abs() > 0.0));
        assert!(dxs[2].iter().all(|v| *v == 0.0));
        let full = lstm.clone().backward(&cache, &ws, None);
        assert!(full[2].iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn gumbel_soft_gradient_matches() {
        let mut rng = Rng::new(6);
        let mut logits = random(3, 6, &mut rng);
        let noise = random(3, 6, &mut rng);
        let w = random(3, 6, &mut rng);
        let s = gumbel_softmax_with_noise(&logits, &noise, 2, 0.7, false);
        let d = gumbel_backward(&s, &w);
        let n = numeric_grad(&mut logits, |l| (gumbel_softmax_with_noise(l, &noise, 2, 0.7, false).output * &w).sum());
        assert_close(&d, &n, 1e-4);
    }

    #[test]
    fn hard_gumbel_is_one_hot_per_group() {
        let mut rng = Rng::new(7);
        let logits = random(10, 8, &mut rng);
        let s = gumbel_softmax(&logits, 4, 1.0, true, &mut rng);
        for row in s.output.rows() {
            for g in 0..4 {
                let seg = row.slice(ndarray::s![g * 2..g * 2 + 2]);
                assert_eq!(seg.sum(), 1.0);
                assert!(seg.iter().all(|&v| v == 0.0 || v == 1.0));
            }
        }
        for (r, idx) in s.hard_indices().iter().enumerate() {
            for (g, &k) in idx.iter().enumerate() {
                assert_eq!(s.output[[r, g * 2 + k]], 1.0);
            }
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let logits = Array2::zeros((2, 4));
        let (l, _) = softmax_cross_entropy(&logits, &[1, 3]);
        assert!((l - 4f64.ln()).abs() < 1e-12);
        let big = ndarray::array![[1000.0, 0.0, -1000.0]];
        let (l, g) = softmax_cross_entropy(&big, &[0]);
        assert!(l.is_finite() && l.abs() < 1e-12);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_entropy_gradient_matches() {
        let mut rng = Rng::new(8);
        let mut logits = random(4, 3, &mut rng);
        let t = [0, 2, 1, 1];
        let (_, g) = softmax_cross_entropy(&logits, &t);
        let n = numeric_grad(&mut logits, |l| softmax_cross_entropy(l, &t).0);
        assert_close(&g, &n, 1e-4);
    }

    #[test]
    fn gaussian_nll_examples() {
        let p = ndarray::array![[1.0, 2.0], [0.0, 0.0]];
        let t = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
        let (l, g) = gaussian_nll_unit_var(&p, &t);
        assert!((l - 0.5 * 5.0 / 2.0).abs() < 1e-12);
        assert_eq!(g, ndarray::array![[0.0, 1.0], [0.0, -0.5]]);
    }

    #[test]
    fn adamw_zero_gradient_only_decays() {
        let mut t = Tensor::new(ndarray::array![[2.0, -4.0]]);
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() });
        opt.step(vec![&mut t]);
        assert_eq!(t.value, ndarray::array![[2.0 - 0.1 * 0.5 * 2.0, -4.0 + 0.1 * 0.5 * 4.0]]);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut t = Tensor::new(ndarray::array![[1.0]]);
        t.grad[[0, 0]] = 3.0;
        let mut opt = AdamW::new(AdamWConfig { lr: 0.01, weight_decay: 0.0, ..Default::default() });
        opt.step(vec![&mut t]);
        assert!((t.value[[0, 0]] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = Rng::new(9);
        let mut mlp = Mlp::new(MlpSpec::new(3, 4, 2, 2, Head::Logits), &mut rng);
        mlp.forward(&random(6, 3, &mut rng), true);
        let mut state = Vec::new();
        mlp.state("policy", &mut state);
        let ck = Checkpoint::new("{\"k\":1}".into(), state);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        let mut other = Mlp::new(mlp.spec.clone(), &mut Rng::new(10));
        other.load_state("policy", &back.map()).unwrap();
        let x = random(2, 3, &mut rng);
        assert_eq!(other.predict(&x), mlp.predict(&x));
        assert!(Checkpoint::read_from(&mut &b"garbage!"[..]).is_err());
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let mut rng = Rng::new(11);
        let a = Mlp::new(MlpSpec::new(3, 4, 1, 2, Head::Logits), &mut rng);
        let mut b = Mlp::new(MlpSpec::new(3, 5, 1, 2, Head::Logits), &mut rng);
        let mut state = Vec::new();
        a.state("m", &mut state);
        assert!(b.load_state("m", &state.into_iter().collect()).is_err());
    }
}
