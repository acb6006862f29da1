use crate::numerics::ops::{matmul, matmul_nt, matmul_tn, matmul_vjp};
use crate::numerics::{softmax_rows, softmax_rows_vjp, Element, Prng, Tensor, Unary};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Mlp,
    Attention,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Mlp => "mlp",
            BlockKind::Attention => "attention",
        }
    }
}

/// A dimension-preserving residual branch acting on `[L, d]` token matrices.
///
/// Gradients use the same type: a gradient is an `FBlock` whose tensors hold
/// `∂L/∂θ` for the matching parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum FBlock<T> {
    /// `gelu(x·W1 + b1)·W2 + b2`, token-wise.
    Mlp {
        w1: Tensor<T>,
        b1: Tensor<T>,
        w2: Tensor<T>,
        b2: Tensor<T>,
    },
    /// Single-head `softmax(Q·Kᵀ/√d)·V·Wo` with `Q, K, V = x·Wq, x·Wk, x·Wv`.
    Attention {
        wq: Tensor<T>,
        wk: Tensor<T>,
        wv: Tensor<T>,
        wo: Tensor<T>,
    },
}

/// Intermediates saved by a taped forward pass; enough to run the VJP
/// without recomputing the block.
#[derive(Debug, Clone)]
pub enum BlockTape<T> {
    Mlp {
        pre: Tensor<T>,
        act: Tensor<T>,
    },
    Attention {
        q: Tensor<T>,
        k: Tensor<T>,
        v: Tensor<T>,
        probs: Tensor<T>,
        mixed: Tensor<T>,
    },
}

impl<T: Element> BlockTape<T> {
    pub fn bytes(&self) -> usize {
        match self {
            BlockTape::Mlp { pre, act } => pre.bytes() + act.bytes(),
            BlockTape::Attention {
                q,
                k,
                v,
                probs,
                mixed,
            } => q.bytes() + k.bytes() + v.bytes() + probs.bytes() + mixed.bytes(),
        }
    }

    pub fn tensor_count(&self) -> usize {
        match self {
            BlockTape::Mlp { .. } => 2,
            BlockTape::Attention { .. } => 5,
        }
    }
}

impl<T: Element> FBlock<T> {
    /// Weights `~ N(0, 1/d)`, biases zero.
    pub fn mlp_random(width: usize, hidden: usize, rng: &mut Prng) -> Self {
        let std = 1.0 / (width as f64).sqrt();
        FBlock::Mlp {
            w1: Tensor::randn(&[width, hidden], std, rng),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::randn(&[hidden, width], std, rng),
            b2: Tensor::zeros(&[width]),
        }
    }

    pub fn attention_random(width: usize, rng: &mut Prng) -> Self {
        let std = 1.0 / (width as f64).sqrt();
        FBlock::Attention {
            wq: Tensor::randn(&[width, width], std, rng),
            wk: Tensor::randn(&[width, width], std, rng),
            wv: Tensor::randn(&[width, width], std, rng),
            wo: Tensor::randn(&[width, width], std, rng),
        }
    }

    pub fn mlp_zeros(width: usize, hidden: usize) -> Self {
        FBlock::Mlp {
            w1: Tensor::zeros(&[width, hidden]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, width]),
            b2: Tensor::zeros(&[width]),
        }
    }

    pub fn attention_zeros(width: usize) -> Self {
        FBlock::Attention {
            wq: Tensor::zeros(&[width, width]),
            wk: Tensor::zeros(&[width, width]),
            wv: Tensor::zeros(&[width, width]),
            wo: Tensor::zeros(&[width, width]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.params_mut() {
            *t = Tensor::zeros(t.shape());
        }
        z
    }

    pub fn kind(&self) -> BlockKind {
        match self {
            FBlock::Mlp { .. } => BlockKind::Mlp,
            FBlock::Attention { .. } => BlockKind::Attention,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            FBlock::Mlp { w1, .. } => w1.rows(),
            FBlock::Attention { wq, .. } => wq.rows(),
        }
    }

    pub fn params(&self) -> [(&'static str, &Tensor<T>); 4] {
        match self {
            FBlock::Mlp { w1, b1, w2, b2 } => [("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)],
            FBlock::Attention { wq, wk, wv, wo } => {
                [("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)]
            }
        }
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Tensor<T>); 4] {
        match self {
            FBlock::Mlp { w1, b1, w2, b2 } => [("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)],
            FBlock::Attention { wq, wk, wv, wo } => {
                [("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)]
            }
        }
    }

    /// Elementwise `self += other`; both must have the same layout.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if self.kind() != other.kind() {
            return Err(Error::Topology(alloc::format!(
                "cannot accumulate {} into {}",
                other.kind().name(),
                self.kind().name()
            )));
        }
        for ((_, a), (_, b)) in self.params_mut().into_iter().zip(other.params()) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.width() {
            return Err(Error::shape("block_forward", x.shape(), &[0, self.width()]));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_taped(x).map(|(y, _)| y)
    }

    pub fn forward_taped(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BlockTape<T>)> {
        self.check_input(x)?;
        match self {
            FBlock::Mlp { w1, b1, w2, b2 } => {
                let pre = matmul(x, w1)?.add_row_vector(b1)?;
                let act = Unary::Gelu.forward(&pre)?;
                let out = matmul(&act, w2)?.add_row_vector(b2)?;
                Ok((out, BlockTape::Mlp { pre, act }))
            }
            FBlock::Attention { wq, wk, wv, wo } => {
                let q = matmul(x, wq)?;
                let k = matmul(x, wk)?;
                let v = matmul(x, wv)?;
                let inv_sqrt_d = T::one() / T::of(self.width() as f64).sqrt();
                let scores = matmul_nt(&q, &k)?.scale(inv_sqrt_d);
                let probs = softmax_rows(&scores)?;
                let mixed = matmul(&probs, &v)?;
                let out = matmul(&mixed, wo)?;
                Ok((
                    out,
                    BlockTape::Attention {
                        q,
                        k,
                        v,
                        probs,
                        mixed,
                    },
                ))
            }
        }
    }

    /// Reverse-mode derivative using a tape from [`forward_taped`](Self::forward_taped)
    /// on the same `x`. Returns `(∂L/∂x, ∂L/∂θ)`.
    pub fn vjp_taped(
        &self,
        x: &Tensor<T>,
        tape: &BlockTape<T>,
        g_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, FBlock<T>)> {
        self.check_input(x)?;
        g_out.same_shape(x, "block_vjp")?;
        match (self, tape) {
            (FBlock::Mlp { w1, w2, .. }, BlockTape::Mlp { pre, act }) => {
                let (g_act, g_w2) = matmul_vjp(act, w2, g_out)?;
                let g_b2 = g_out.sum_rows();
                let g_pre = Unary::Gelu.vjp(pre, &g_act)?;
                let (g_x, g_w1) = matmul_vjp(x, w1, &g_pre)?;
                let g_b1 = g_pre.sum_rows();
                Ok((
                    g_x,
                    FBlock::Mlp {
                        w1: g_w1,
                        b1: g_b1,
                        w2: g_w2,
                        b2: g_b2,
                    },
                ))
            }
            (
                FBlock::Attention { wq, wk, wv, wo },
                BlockTape::Attention {
                    q,
                    k,
                    v,
                    probs,
                    mixed,
                },
            ) => {
                let inv_sqrt_d = T::one() / T::of(self.width() as f64).sqrt();
                let (g_mixed, g_wo) = matmul_vjp(mixed, wo, g_out)?;
                let (g_probs, g_v) = matmul_vjp(probs, v, &g_mixed)?;
                let g_scores = softmax_rows_vjp(probs, &g_probs)?.scale(inv_sqrt_d);
                // scores = q·kᵀ
                let g_q = matmul(&g_scores, k)?;
                let g_k = matmul_tn(&g_scores, q)?;
                let (gx_q, g_wq) = matmul_vjp(x, wq, &g_q)?;
                let (gx_k, g_wk) = matmul_vjp(x, wk, &g_k)?;
                let (gx_v, g_wv) = matmul_vjp(x, wv, &g_v)?;
                let g_x = gx_q.add(&gx_k)?.add(&gx_v)?;
                Ok((
                    g_x,
                    FBlock::Attention {
                        wq: g_wq,
                        wk: g_wk,
                        wv: g_wv,
                        wo: g_wo,
                    },
                ))
            }
            _ => Err(Error::StaleCache(alloc::format!(
                "{} block given a tape from a different block kind",
                self.kind().name()
            ))),
        }
    }

    pub fn vjp(&self, x: &Tensor<T>, g_out: &Tensor<T>) -> Result<(Tensor<T>, FBlock<T>)> {
        let (_, tape) = self.forward_taped(x)?;
        self.vjp_taped(x, &tape, g_out)
    }

    /// `G(x) = F(x) + α·x`, summed in exactly that order.
    pub fn g_apply(&self, alpha: T, x: &Tensor<T>) -> Result<Tensor<T>> {
        let f = self.forward(x)?;
        add_scaled(&f, alpha, x)
    }
}

/// `f + c·x` elementwise, with the product formed first.
pub(crate) fn add_scaled<T: Element>(f: &Tensor<T>, c: T, x: &Tensor<T>) -> Result<Tensor<T>> {
    f.zip_map(x, "add_scaled", |fv, xv| fv + c * xv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_grad;
    use alloc::vec;

    fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.max_abs_diff(b).unwrap() / b.max_abs().max(1e-12)
    }

    fn random_blocks(seed: u64) -> Vec<FBlock<f64>> {
        let mut rng = Prng::new(seed);
        let mut mlp = FBlock::mlp_random(6, 10, &mut rng);
        if let FBlock::Mlp { b1, b2, .. } = &mut mlp {
            *b1 = Tensor::randn(&[10], 0.5, &mut rng);
            *b2 = Tensor::randn(&[6], 0.5, &mut rng);
        }
        vec![mlp, FBlock::attention_random(6, &mut rng)]
    }

    #[test]
    fn zero_block_outputs_zero() {
        let mut rng = Prng::new(1);
        let x = Tensor::<f64>::randn(&[4, 5], 1.0, &mut rng);
        let y = FBlock::mlp_zeros(5, 7).forward(&x).unwrap();
        assert_eq!(y, Tensor::zeros(&[4, 5]));
    }

    #[test]
    fn uniform_attention_averages_tokens() {
        let d = 3;
        let block = FBlock::<f64>::Attention {
            wq: Tensor::zeros(&[d, d]),
            wk: Tensor::zeros(&[d, d]),
            wv: Tensor::eye(d),
            wo: Tensor::eye(d),
        };
        let x = Tensor::<f64>::from_f64(&[2, 3], &[1., 2., 3., 5., 6., 7.]).unwrap();
        let y = block.forward(&x).unwrap();
        assert_eq!(y.data(), &[3., 4., 5., 3., 4., 5.]);
    }

    #[test]
    fn mlp_on_unit_vector_matches_hand_trace() {
        // Hand trace for d = 2, h = 2 with x = e1:
        //   pre = x·W1 + b1 = [0.5, -1.0] + [0.1, 0.2] = [0.6, -0.8]
        //   act = gelu(pre)
        //   out = act·W2 + b2
        let block = FBlock::<f64>::Mlp {
            w1: Tensor::from_f64(&[2, 2], &[0.5, -1.0, 2.0, 3.0]).unwrap(),
            b1: Tensor::from_f64(&[2], &[0.1, 0.2]).unwrap(),
            w2: Tensor::from_f64(&[2, 2], &[1.0, 0.0, -2.0, 0.5]).unwrap(),
            b2: Tensor::from_f64(&[2], &[0.0, 1.0]).unwrap(),
        };
        let x = Tensor::<f64>::from_f64(&[1, 2], &[1.0, 0.0]).unwrap();
        let y = block.forward(&x).unwrap();
        // gelu(0.6), gelu(-0.8) from the tanh formula at 30 digits
        let (a0, a1) = (0.435_415_199_230_814_7, -0.169_568_308_563_551_9);
        let expected = [a0 - 2.0 * a1, 1.0 + 0.5 * a1];
        for (v, e) in y.data().iter().zip(expected) {
            assert!((v - e).abs() < 1e-15, "{v} vs {e}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        for block in random_blocks(3) {
            let x = Tensor::randn(&[4, 6], 1.0, &mut Prng::new(4));
            let (gx, gp) = block.vjp(&x, &Tensor::zeros(&[4, 6])).unwrap();
            assert_eq!(gx.max_abs(), 0.0);
            assert!(gp.params().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn zero_mlp_has_no_input_path() {
        let block = FBlock::<f64>::mlp_zeros(3, 4);
        let mut rng = Prng::new(8);
        let x = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let g = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let (gx, gp) = block.vjp(&x, &g).unwrap();
        assert_eq!(gx.max_abs(), 0.0);
        let FBlock::Mlp { w1, b1, w2, b2 } = gp else { unreachable!() };
        // W2 = 0 cuts the path to W1 and b1; gelu(0) = 0 zeroes ∂W2.
        assert_eq!(w1.max_abs(), 0.0);
        assert_eq!(b1.max_abs(), 0.0);
        assert_eq!(w2.max_abs(), 0.0);
        assert_eq!(b2, g.sum_rows());
    }

    #[test]
    fn vjp_matches_finite_differences() {
        for block in random_blocks(5) {
            let mut rng = Prng::new(6);
            let x = Tensor::randn(&[4, 6], 1.0, &mut rng);
            let w = Tensor::randn(&[4, 6], 1.0, &mut rng);
            let (gx, gp) = block.vjp(&x, &w).unwrap();
            let fx = finite_difference_grad(|v| Ok(block.forward(v)?.mul(&w)?.sum()), &x, 1e-5)
                .unwrap();
            assert!(rel_err(&gx, &fx) < 1e-5, "{:?} input", block.kind());
            for (i, (name, g)) in gp.params().into_iter().enumerate() {
                let numeric = finite_difference_grad(
                    |p| {
                        let mut b = block.clone();
                        *b.params_mut()[i].1 = p.clone();
                        Ok(b.forward(&x)?.mul(&w)?.sum())
                    },
                    block.params()[i].1,
                    1e-5,
                )
                .unwrap();
                assert!(rel_err(g, &numeric) < 1e-5, "{:?} {name}", block.kind());
            }
        }
    }

    #[test]
    fn g_apply_cases() {
        let mut rng = Prng::new(12);
        let x = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng);
        let zero = FBlock::mlp_zeros(4, 8);
        assert_eq!(zero.g_apply(0.5, &x).unwrap(), x.scale(0.5));
        let block = FBlock::attention_random(4, &mut rng);
        assert!(block.g_apply(0.0, &x).unwrap().bit_eq(&block.forward(&x).unwrap()));
        let expected = block.forward(&x).unwrap().add(&x).unwrap();
        assert!(block.g_apply(1.0, &x).unwrap().bit_eq(&expected));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let block = FBlock::<f64>::mlp_zeros(4, 8);
        assert!(matches!(block.forward(&Tensor::zeros(&[3, 5])), Err(Error::Shape { .. })));
        let x = Tensor::zeros(&[3, 4]);
        assert!(block.vjp(&x, &Tensor::zeros(&[3, 3])).is_err());
    }
}
