use alloc::format;
use alloc::vec::Vec;

use super::stage::{beta_skip, module_backward, module_forward, module_reverse, Scalars};
use super::{ActivationLedger, Coefficients, LedgerReport, Mode};
use crate::blocks::{Backbone, BlockTape, Checkpoint, NetConfig, PlainResidualNetwork};
use crate::numerics::{Element, Tensor};
use crate::{Error, Result};

/// Every activation of a cached forward pass.
#[derive(Debug, Clone)]
pub struct CachedTrace<T> {
    pub coefficients: Coefficients,
    /// Per stage: `x_0..=x_N`.
    pub xs: Vec<Vec<Tensor<T>>>,
    /// Per stage: `y_0..=y_N`.
    pub ys: Vec<Vec<Tensor<T>>>,
    /// Per stage: tape of `F_i` evaluated on `x_{i-1}`.
    pub tapes: Vec<Vec<BlockTape<T>>>,
    pub logits: Tensor<T>,
    bytes: usize,
    tensors: usize,
}

/// What a reversible forward pass keeps: the `(x_N, y_N)` pair of each stage.
#[derive(Debug, Clone)]
pub struct ReversibleTrace<T> {
    pub coefficients: Coefficients,
    pub boundaries: Vec<(Tensor<T>, Tensor<T>)>,
    pub logits: Tensor<T>,
}

/// Dual-residual network with a single global `(α, β)`.
#[derive(Debug, Clone)]
pub struct DrrNetwork<T> {
    pub backbone: Backbone<T>,
    coefficients: Coefficients,
    mode: Mode,
    ledger: ActivationLedger,
}

impl<T: Element> DrrNetwork<T> {
    pub fn new(backbone: Backbone<T>, coefficients: Coefficients, mode: Mode) -> Result<Self> {
        backbone.validate()?;
        Self::check(coefficients, mode)?;
        Ok(Self {
            backbone,
            coefficients,
            mode,
            ledger: ActivationLedger::default(),
        })
    }

    fn check(c: Coefficients, mode: Mode) -> Result<Coefficients> {
        match mode {
            Mode::Cached => c.validate(),
            Mode::Reversible => c.validate_reversible(),
        }
    }

    pub fn coefficients(&self) -> Coefficients {
        self.coefficients
    }

    pub fn set_coefficients(&mut self, c: Coefficients) -> Result<()> {
        self.coefficients = Self::check(c, self.mode)?;
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) -> Result<()> {
        Self::check(self.coefficients, mode)?;
        self.mode = mode;
        Ok(())
    }

    pub fn ledger(&self) -> &ActivationLedger {
        &self.ledger
    }

    pub fn ledger_report(&self) -> LedgerReport {
        self.ledger.report()
    }

    fn check_input(&self, x0: &Tensor<T>) -> Result<()> {
        let w = self.backbone.input_width();
        if x0.rank() != 2 || x0.cols() != w {
            return Err(Error::shape("drr_forward", x0.shape(), &[0, w]));
        }
        Ok(())
    }

    /// Logits without any bookkeeping; same arithmetic as both forward passes.
    pub fn logits(&self, x0: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x0)?;
        let c = Scalars::new(self.coefficients);
        let mut x = x0.clone();
        for (s, stage) in self.backbone.stages.iter().enumerate() {
            let mut y = beta_skip(c.beta, &x);
            for block in &stage.blocks {
                let (nx, ny, _) = module_forward(block, c, &x, &y)?;
                x = nx;
                y = ny;
            }
            x = self.backbone.transition_forward(s, &x)?;
        }
        self.backbone.head_forward(&x)
    }

    /// Forward pass that keeps every `x_i`, `y_i` and block tape.
    pub fn forward_cached(&mut self, x0: &Tensor<T>) -> Result<CachedTrace<T>> {
        self.check_input(x0)?;
        let c = Scalars::new(self.coefficients.validate()?);
        self.ledger.reset();
        let n_stages = self.backbone.stages.len();
        let mut trace = CachedTrace {
            coefficients: self.coefficients,
            xs: Vec::with_capacity(n_stages),
            ys: Vec::with_capacity(n_stages),
            tapes: Vec::with_capacity(n_stages),
            logits: Tensor::zeros(&[1, 1]),
            bytes: 0,
            tensors: 0,
        };
        let mut x = x0.clone();
        for (s, stage) in self.backbone.stages.iter().enumerate() {
            let y = beta_skip(c.beta, &x);
            self.ledger.retain(x.bytes() + y.bytes(), 2);
            let mut xs = Vec::with_capacity(stage.blocks.len() + 1);
            let mut ys = Vec::with_capacity(stage.blocks.len() + 1);
            let mut tapes = Vec::with_capacity(stage.blocks.len());
            xs.push(x);
            ys.push(y);
            for block in &stage.blocks {
                let (nx, ny, tape) = module_forward(block, c, xs.last().unwrap(), ys.last().unwrap())?;
                self.ledger
                    .retain(nx.bytes() + ny.bytes() + tape.bytes(), 2 + tape.tensor_count());
                xs.push(nx);
                ys.push(ny);
                tapes.push(tape);
            }
            let out = xs.last().unwrap();
            self.ledger.transient(out.bytes());
            x = self.backbone.transition_forward(s, out)?;
            trace.xs.push(xs);
            trace.ys.push(ys);
            trace.tapes.push(tapes);
        }
        trace.logits = self.backbone.head_forward(&x)?;
        let r = self.ledger.report();
        trace.bytes = r.live_bytes;
        trace.tensors = r.cached_tensor_count;
        Ok(trace)
    }

    /// Forward pass that keeps only each stage's `(x_N, y_N)`.
    pub fn forward_reversible(&mut self, x0: &Tensor<T>) -> Result<ReversibleTrace<T>> {
        let c = Scalars::new(self.coefficients.validate_reversible()?);
        self.check_input(x0)?;
        self.ledger.reset();
        let mut boundaries = Vec::with_capacity(self.backbone.stages.len());
        let mut x = x0.clone();
        for (s, stage) in self.backbone.stages.iter().enumerate() {
            let mut y = beta_skip(c.beta, &x);
            for block in &stage.blocks {
                let (nx, ny, tape) = module_forward(block, c, &x, &y)?;
                // old pair, new pair and the block's internals coexist here
                self.ledger
                    .transient(x.bytes() + y.bytes() + nx.bytes() + ny.bytes() + tape.bytes());
                x = nx;
                y = ny;
            }
            self.ledger.retain(x.bytes() + y.bytes(), 2);
            let next = self.backbone.transition_forward(s, &x)?;
            self.ledger.transient(next.bytes());
            boundaries.push((x, y));
            x = next;
        }
        let logits = self.backbone.head_forward(&x)?;
        Ok(ReversibleTrace {
            coefficients: self.coefficients,
            boundaries,
            logits,
        })
    }

    fn check_trace(&self, coefficients: Coefficients, stages: usize) -> Result<()> {
        if coefficients != self.coefficients {
            return Err(Error::StaleCache(format!(
                "trace recorded at {coefficients:?}, network now at {:?}",
                self.coefficients
            )));
        }
        if stages != self.backbone.stages.len() {
            return Err(Error::StaleCache(format!(
                "trace has {stages} stages, network has {}",
                self.backbone.stages.len()
            )));
        }
        Ok(())
    }

    /// Conventional backprop over a [`CachedTrace`]. Returns parameter and
    /// input gradients.
    pub fn backprop_cached(
        &mut self,
        trace: CachedTrace<T>,
        g_logits: &Tensor<T>,
    ) -> Result<(Backbone<T>, Tensor<T>)> {
        self.check_trace(trace.coefficients, trace.xs.len())?;
        let c = Scalars::new(self.coefficients);
        let mut grads = self.backbone.zeros_like();
        let last = self.backbone.stages.len() - 1;
        let mut g_x = self
            .backbone
            .head_backward(trace.xs[last].last().unwrap(), g_logits, &mut grads)?;
        for s in (0..=last).rev() {
            let stage = &self.backbone.stages[s];
            let (xs, tapes) = (&trace.xs[s], &trace.tapes[s]);
            if tapes.len() != stage.blocks.len() {
                return Err(Error::StaleCache(format!(
                    "stage {s}: {} tapes for {} blocks",
                    tapes.len(),
                    stage.blocks.len()
                )));
            }
            if s != last {
                g_x = self
                    .backbone
                    .transition_backward(s, xs.last().unwrap(), &g_x, &mut grads)?;
            }
            let mut g_y = Tensor::zeros(g_x.shape());
            for i in (0..stage.blocks.len()).rev() {
                self.ledger.transient(g_x.bytes() + g_y.bytes());
                let (gx, gy, gb) = module_backward(&stage.blocks[i], c, &xs[i], &tapes[i], &g_x, &g_y)?;
                grads.stages[s].blocks[i].accumulate(&gb)?;
                g_x = gx;
                g_y = gy;
            }
            g_x.axpy(c.beta, &g_y)?;
        }
        self.ledger.release(trace.bytes, trace.tensors);
        Ok((grads, g_x))
    }

    /// Backprop that rebuilds each module's input from the stage output while
    /// walking backwards. Only one module's activations are alive at a time.
    pub fn backprop_reversible(
        &mut self,
        trace: ReversibleTrace<T>,
        g_logits: &Tensor<T>,
    ) -> Result<(Backbone<T>, Tensor<T>)> {
        let c = Scalars::new(self.coefficients.validate_reversible()?);
        self.check_trace(trace.coefficients, trace.boundaries.len())?;
        let mut grads = self.backbone.zeros_like();
        let last = self.backbone.stages.len() - 1;
        let mut g_x = self
            .backbone
            .head_backward(&trace.boundaries[last].0, g_logits, &mut grads)?;
        for (s, (x_n, y_n)) in trace.boundaries.into_iter().enumerate().rev() {
            if s != last {
                g_x = self.backbone.transition_backward(s, &x_n, &g_x, &mut grads)?;
            }
            let pair_bytes = x_n.bytes() + y_n.bytes();
            let stage = &self.backbone.stages[s];
            let mut g_y = Tensor::zeros(g_x.shape());
            let (mut x, mut y) = (x_n, y_n);
            for i in (0..stage.blocks.len()).rev() {
                let block = &stage.blocks[i];
                let (x_prev, y_prev, tape) = module_reverse(block, c, &x, &y)?;
                if !x_prev.is_finite() || !y_prev.is_finite() {
                    return Err(Error::NonFinite("activation reconstruction"));
                }
                self.ledger.transient(
                    x.bytes()
                        + y.bytes()
                        + x_prev.bytes()
                        + y_prev.bytes()
                        + tape.bytes()
                        + g_x.bytes()
                        + g_y.bytes(),
                );
                let (gx, gy, gb) = module_backward(block, c, &x_prev, &tape, &g_x, &g_y)?;
                grads.stages[s].blocks[i].accumulate(&gb)?;
                g_x = gx;
                g_y = gy;
                x = x_prev;
                y = y_prev;
            }
            g_x.axpy(c.beta, &g_y)?;
            self.ledger.release(pair_bytes, 2);
        }
        Ok((grads, g_x))
    }

    /// One forward/backward step in the network's current mode. `loss_grad`
    /// maps logits to `(loss, ∂loss/∂logits)`.
    pub fn gradients(
        &mut self,
        x0: &Tensor<T>,
        loss_grad: impl FnOnce(&Tensor<T>) -> Result<(f64, Tensor<T>)>,
    ) -> Result<(f64, Tensor<T>, Backbone<T>)> {
        match self.mode {
            Mode::Cached => {
                let trace = self.forward_cached(x0)?;
                let logits = trace.logits.clone();
                let (loss, g) = loss_grad(&logits)?;
                let (grads, _) = self.backprop_cached(trace, &g)?;
                Ok((loss, logits, grads))
            }
            Mode::Reversible => {
                let trace = self.forward_reversible(x0)?;
                let logits = trace.logits.clone();
                let (loss, g) = loss_grad(&logits)?;
                let (grads, _) = self.backprop_reversible(trace, &g)?;
                Ok((loss, logits, grads))
            }
        }
    }

    pub fn to_plain(&self) -> Result<PlainResidualNetwork<T>> {
        PlainResidualNetwork::new(self.backbone.clone())
    }
}

/// Copies pretrained parameters into a reversible network at `(α, β) = (1, 0.1)`.
pub fn init_from_pretrained<T: Element>(cfg: &NetConfig, ckpt: &Checkpoint) -> Result<DrrNetwork<T>> {
    DrrNetwork::new(ckpt.to_backbone(cfg)?, Coefficients::VANILLA, Mode::Reversible)
}

/// Copies pretrained parameters into a fully reversible network at `(0, 1)`.
pub fn init_hard<T: Element>(cfg: &NetConfig, ckpt: &Checkpoint) -> Result<DrrNetwork<T>> {
    DrrNetwork::new(ckpt.to_backbone(cfg)?, Coefficients::HARD, Mode::Reversible)
}
