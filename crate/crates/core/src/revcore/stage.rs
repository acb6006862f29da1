use alloc::vec::Vec;

use super::Coefficients;
use crate::blocks::{BlockTape, FBlock};
use crate::numerics::{Element, Tensor};
use crate::{Error, Result};

/// `(α, β)` converted to the element type once per pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Scalars<T> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Element> Scalars<T> {
    pub fn new(c: Coefficients) -> Self {
        Self {
            alpha: T::of(c.alpha),
            beta: T::of(c.beta),
        }
    }
}

/// `β·x`. At `β = 0` this is a `-0.0` tensor, which leaves the later
/// `G(x) + y` sum bit-identical to `G(x)`.
pub(crate) fn beta_skip<T: Element>(beta: T, x: &Tensor<T>) -> Tensor<T> {
    if beta == T::zero() {
        Tensor::neg_zeros(x.shape())
    } else {
        x.scale(beta)
    }
}

/// `(x_{i-1}, y_{i-1}) ↦ (x_i, y_i)`, also returning the block tape.
pub(crate) fn module_forward<T: Element>(
    block: &FBlock<T>,
    c: Scalars<T>,
    x_prev: &Tensor<T>,
    y_prev: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, BlockTape<T>)> {
    let (f, tape) = block.forward_taped(x_prev)?;
    let g = f.zip_map(x_prev, "g_apply", |fv, xv| fv + c.alpha * xv)?;
    let x = g.add(y_prev)?;
    let y = beta_skip(c.beta, x_prev);
    Ok((x, y, tape))
}

/// `(x_i, y_i) ↦ (x_{i-1}, y_{i-1})`, also returning the tape of the
/// recomputed `F_i(x_{i-1})` so the caller can run the VJP without a second
/// forward evaluation.
pub(crate) fn module_reverse<T: Element>(
    block: &FBlock<T>,
    c: Scalars<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, BlockTape<T>)> {
    if c.beta == T::zero() {
        return Err(Error::Irreversible);
    }
    let x_prev = y.div_scalar(c.beta);
    let (f, tape) = block.forward_taped(&x_prev)?;
    let g = f.zip_map(&x_prev, "g_apply", |fv, xv| fv + c.alpha * xv)?;
    let y_prev = x.sub(&g)?;
    Ok((x_prev, y_prev, tape))
}

/// Gradient of one module. With `x_i = G(x_{i-1}) + y_{i-1}` and
/// `y_i = β·x_{i-1}`:
///
/// ```text
/// ∂x_{i-1} = β·∂y_i + F'ᵀ·∂x_i + α·∂x_i
/// ∂y_{i-1} = ∂x_i
/// ```
pub(crate) fn module_backward<T: Element>(
    block: &FBlock<T>,
    c: Scalars<T>,
    x_prev: &Tensor<T>,
    tape: &BlockTape<T>,
    g_x: &Tensor<T>,
    g_y: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, FBlock<T>)> {
    let (g_f, g_block) = block.vjp_taped(x_prev, tape, g_x)?;
    let mut g_x_prev = g_f.zip_map(g_x, "module_backward", |gf, gx| gf + c.alpha * gx)?;
    g_x_prev.axpy(c.beta, g_y)?;
    Ok((g_x_prev, g_x.clone(), g_block))
}

/// All activations of one stage, `xs[i]` and `ys[i]` for `i = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageActivations<T> {
    pub xs: Vec<Tensor<T>>,
    pub ys: Vec<Tensor<T>>,
}

impl<T: Element> StageActivations<T> {
    pub fn output(&self) -> (&Tensor<T>, &Tensor<T>) {
        (self.xs.last().unwrap(), self.ys.last().unwrap())
    }

    /// Largest elementwise difference over every `x_i` and `y_i`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.xs.len() != other.xs.len() {
            return Err(Error::shape("stage_activations", &[self.xs.len()], &[other.xs.len()]));
        }
        let mut m = 0.0f64;
        for (a, b) in self.xs.iter().chain(&self.ys).zip(other.xs.iter().chain(&other.ys)) {
            m = m.max(a.max_abs_diff(b)?);
        }
        Ok(m)
    }
}

/// Runs one stage forward from `x_0`, keeping every activation.
pub fn stage_forward<T: Element>(
    blocks: &[FBlock<T>],
    coefficients: Coefficients,
    x0: &Tensor<T>,
) -> Result<StageActivations<T>> {
    let c = Scalars::new(coefficients.validate()?);
    let mut xs = Vec::with_capacity(blocks.len() + 1);
    let mut ys = Vec::with_capacity(blocks.len() + 1);
    xs.push(x0.clone());
    ys.push(beta_skip(c.beta, x0));
    for block in blocks {
        let (x, y, _) = module_forward(block, c, xs.last().unwrap(), ys.last().unwrap())?;
        xs.push(x);
        ys.push(y);
    }
    Ok(StageActivations { xs, ys })
}

/// Rebuilds every activation of a stage from its output pair `(x_N, y_N)`.
pub fn reverse_stage<T: Element>(
    blocks: &[FBlock<T>],
    coefficients: Coefficients,
    x_n: &Tensor<T>,
    y_n: &Tensor<T>,
) -> Result<StageActivations<T>> {
    let c = Scalars::new(coefficients.validate_reversible()?);
    x_n.same_shape(y_n, "reverse_stage")?;
    let mut xs = Vec::with_capacity(blocks.len() + 1);
    let mut ys = Vec::with_capacity(blocks.len() + 1);
    xs.push(x_n.clone());
    ys.push(y_n.clone());
    for block in blocks.iter().rev() {
        let (x, y, _) = module_reverse(block, c, xs.last().unwrap(), ys.last().unwrap())?;
        xs.push(x);
        ys.push(y);
    }
    xs.reverse();
    ys.reverse();
    Ok(StageActivations { xs, ys })
}
