use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::block::{BlockKind, BlockTape, FBlock};
use crate::numerics::ops::{matmul, matmul_vjp};
use crate::numerics::{Element, Prng, Tensor};
use crate::{Error, Result};

/// Which block kinds a stage is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pattern {
    /// attention, mlp, attention, ... restarting at every stage
    Interleaved,
    Mlp,
    Attention,
}

impl Pattern {
    pub fn name(self) -> &'static str {
        match self {
            Pattern::Interleaved => "interleaved",
            Pattern::Mlp => "mlp",
            Pattern::Attention => "attention",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "interleaved" => Some(Pattern::Interleaved),
            "mlp" => Some(Pattern::Mlp),
            "attention" => Some(Pattern::Attention),
            _ => None,
        }
    }

    pub fn kind_at(self, index: usize) -> BlockKind {
        match self {
            Pattern::Interleaved if index % 2 == 0 => BlockKind::Attention,
            Pattern::Interleaved | Pattern::Mlp => BlockKind::Mlp,
            Pattern::Attention => BlockKind::Attention,
        }
    }
}

/// Network topology. Every stage has the same width; stages are joined by
/// `width × width` linear transitions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetConfig {
    pub width: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub stages: usize,
    pub depth_per_stage: usize,
    pub pattern: Pattern,
    pub classes: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            width: 32,
            hidden: 64,
            seq_len: 8,
            stages: 2,
            depth_per_stage: 6,
            pattern: Pattern::Interleaved,
            classes: 10,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("width", self.width),
            ("hidden", self.hidden),
            ("seq_len", self.seq_len),
            ("stages", self.stages),
            ("classes", self.classes),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Topology(format!("{name} must be positive")));
            }
        }
        if self.classes < 2 {
            return Err(Error::Topology(String::from("need at least two classes")));
        }
        Ok(())
    }

    /// `1/√(total depth)`: initial scale of each block's output projection.
    pub fn branch_scale(&self) -> f64 {
        1.0 / ((self.stages * self.depth_per_stage).max(1) as f64).sqrt()
    }

    pub fn input_shape(&self) -> [usize; 2] {
        [self.seq_len, self.width]
    }

    /// FNV-1a over a canonical rendering of the topology.
    pub fn digest(&self) -> u64 {
        let text = format!(
            "w{}h{}l{}s{}d{}p{}c{}",
            self.width,
            self.hidden,
            self.seq_len,
            self.stages,
            self.depth_per_stage,
            self.pattern.name(),
            self.classes
        );
        text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage<T> {
    pub blocks: Vec<FBlock<T>>,
    /// Projection into the next stage; `None` only on the last stage.
    pub transition: Option<Tensor<T>>,
}

/// Parameters shared by the plain and the dual-residual networks: the
/// F-blocks, the stage transitions and a mean-pool linear head.
///
/// Also used as the gradient container for those parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    pub stages: Vec<Stage<T>>,
    pub head: Tensor<T>,
    pub head_bias: Tensor<T>,
}

impl<T: Element> Backbone<T> {
    /// Weights `~ N(0, 1/d)` and biases zero, with each block's output
    /// projection further scaled by [`NetConfig::branch_scale`] so that
    /// activations stay `O(1)` through a deep stack without normalization.
    pub fn random(cfg: &NetConfig, rng: &mut Prng) -> Result<Self> {
        Self::random_scaled(cfg, rng, cfg.branch_scale())
    }

    /// Weights `~ N(0, 1/d)`, biases zero, output projections (`w2`, `wo`)
    /// multiplied by `branch_scale`.
    pub fn random_scaled(cfg: &NetConfig, rng: &mut Prng, branch_scale: f64) -> Result<Self> {
        let mut bb = Self::unscaled(cfg, rng)?;
        let c = T::of(branch_scale);
        for stage in &mut bb.stages {
            for block in &mut stage.blocks {
                match block {
                    FBlock::Mlp { w2, .. } => *w2 = w2.scale(c),
                    FBlock::Attention { wo, .. } => *wo = wo.scale(c),
                }
            }
        }
        Ok(bb)
    }

    fn unscaled(cfg: &NetConfig, rng: &mut Prng) -> Result<Self> {
        let std = 1.0 / (cfg.width as f64).sqrt();
        Self::build(cfg, |shape, is_bias| {
            if is_bias {
                Tensor::zeros(shape)
            } else {
                Tensor::randn(shape, std, rng)
            }
        })
    }

    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        Self::build(cfg, |shape, _| Tensor::zeros(shape))
    }

    fn build(
        cfg: &NetConfig,
        mut init: impl FnMut(&[usize], bool) -> Tensor<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        let (d, h) = (cfg.width, cfg.hidden);
        let mut stages = Vec::with_capacity(cfg.stages);
        for s in 0..cfg.stages {
            let blocks = (0..cfg.depth_per_stage)
                .map(|i| match cfg.pattern.kind_at(i) {
                    BlockKind::Mlp => FBlock::Mlp {
                        w1: init(&[d, h], false),
                        b1: init(&[h], true),
                        w2: init(&[h, d], false),
                        b2: init(&[d], true),
                    },
                    BlockKind::Attention => FBlock::Attention {
                        wq: init(&[d, d], false),
                        wk: init(&[d, d], false),
                        wv: init(&[d, d], false),
                        wo: init(&[d, d], false),
                    },
                })
                .collect();
            let transition = (s + 1 < cfg.stages).then(|| init(&[d, d], false));
            stages.push(Stage { blocks, transition });
        }
        Ok(Self {
            stages,
            head: init(&[d, cfg.classes], false),
            head_bias: init(&[cfg.classes], true),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_param_mut(|_, t| *t = Tensor::zeros(t.shape()));
        z
    }

    pub fn input_width(&self) -> usize {
        self.stages
            .first()
            .and_then(|s| s.blocks.first().map(FBlock::width))
            .or_else(|| self.stages.first().and_then(|s| s.transition.as_ref().map(Tensor::rows)))
            .unwrap_or(self.head.rows())
    }

    pub fn classes(&self) -> usize {
        self.head.cols()
    }

    pub fn depth(&self) -> usize {
        self.stages.iter().map(|s| s.blocks.len()).sum()
    }

    /// Checks widths line up and transitions appear only between stages.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Topology(String::from("network has no stages")));
        }
        let mut width = self.input_width();
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.blocks.iter().enumerate() {
                if block.width() != width {
                    return Err(Error::Topology(format!(
                        "stage {s} block {b} has width {} but the stream carries {width}",
                        block.width()
                    )));
                }
            }
            let last = s + 1 == self.stages.len();
            match (&stage.transition, last) {
                (Some(t), false) => {
                    if t.rank() != 2 || t.rows() != width {
                        return Err(Error::shape("transition", t.shape(), &[width, 0]));
                    }
                    width = t.cols();
                }
                (None, true) => {}
                (Some(_), true) => {
                    return Err(Error::Topology(String::from("last stage carries a transition")))
                }
                (None, false) => {
                    return Err(Error::Topology(format!("stage {s} is missing its transition")))
                }
            }
        }
        if self.head.rank() != 2 || self.head.rows() != width {
            return Err(Error::shape("head", self.head.shape(), &[width, 0]));
        }
        self.head_bias.ensure_shape("head_bias", &[self.head.cols()])
    }

    /// Visits every parameter in a fixed order with a stable dotted name.
    pub fn for_each_param(&self, mut f: impl FnMut(String, &Tensor<T>)) {
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.blocks.iter().enumerate() {
                for (name, t) in block.params() {
                    f(format!("stage{s}.block{b}.{}.{name}", block.kind().name()), t);
                }
            }
            if let Some(t) = &stage.transition {
                f(format!("stage{s}.transition"), t);
            }
        }
        f(String::from("head.weight"), &self.head);
        f(String::from("head.bias"), &self.head_bias);
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(String, &mut Tensor<T>)) {
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.blocks.iter_mut().enumerate() {
                let kind = block.kind().name();
                for (name, t) in block.params_mut() {
                    f(format!("stage{s}.block{b}.{kind}.{name}"), t);
                }
            }
            if let Some(t) = &mut stage.transition {
                f(format!("stage{s}.transition"), t);
            }
        }
        f(String::from("head.weight"), &mut self.head);
        f(String::from("head.bias"), &mut self.head_bias);
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for stage in &self.stages {
            for block in &stage.blocks {
                out.extend(block.params().into_iter().map(|(_, t)| t));
            }
            out.extend(stage.transition.as_ref());
        }
        out.push(&self.head);
        out.push(&self.head_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for stage in &mut self.stages {
            for block in &mut stage.blocks {
                out.extend(block.params_mut().into_iter().map(|(_, t)| t));
            }
            out.extend(stage.transition.as_mut());
        }
        out.push(&mut self.head);
        out.push(&mut self.head_bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        let theirs = other.tensors();
        let mine = self.tensors_mut();
        if mine.len() != theirs.len() {
            return Err(Error::Topology(String::from("parameter count differs")));
        }
        for (a, b) in mine.into_iter().zip(theirs) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, c: T) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v = *v * c;
            }
        }
    }

    pub fn cast<U: Element>(&self) -> Backbone<U> {
        Backbone {
            stages: self
                .stages
                .iter()
                .map(|s| Stage {
                    blocks: s
                        .blocks
                        .iter()
                        .map(|b| match b {
                            FBlock::Mlp { w1, b1, w2, b2 } => FBlock::Mlp {
                                w1: w1.cast(),
                                b1: b1.cast(),
                                w2: w2.cast(),
                                b2: b2.cast(),
                            },
                            FBlock::Attention { wq, wk, wv, wo } => FBlock::Attention {
                                wq: wq.cast(),
                                wk: wk.cast(),
                                wv: wv.cast(),
                                wo: wo.cast(),
                            },
                        })
                        .collect(),
                    transition: s.transition.as_ref().map(Tensor::cast),
                })
                .collect(),
            head: self.head.cast(),
            head_bias: self.head_bias.cast(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Mean-pools tokens and applies the linear head. Returns `[1, C]` logits.
    pub fn head_forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        matmul(&x.mean_rows(), &self.head)?.add_row_vector(&self.head_bias)
    }

    /// Writes head gradients into `grads` and returns `∂L/∂x` for the pooled input.
    pub fn head_backward(
        &self,
        x: &Tensor<T>,
        g_logits: &Tensor<T>,
        grads: &mut Self,
    ) -> Result<Tensor<T>> {
        g_logits.ensure_shape("head_backward", &[1, self.classes()])?;
        let pooled = x.mean_rows();
        let (g_pooled, g_head) = matmul_vjp(&pooled, &self.head, g_logits)?;
        grads.head.add_assign(&g_head)?;
        grads.head_bias.add_assign(&g_logits.clone().reshape(&[self.classes()])?)?;
        let inv_rows = T::one() / T::of(x.rows() as f64);
        let mut g_x = Tensor::zeros(x.shape());
        let c = x.cols();
        for row in g_x.data_mut().chunks_mut(c) {
            for (v, &g) in row.iter_mut().zip(g_pooled.data()) {
                *v = g * inv_rows;
            }
        }
        Ok(g_x)
    }

    pub fn transition_forward(&self, stage: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.stages[stage].transition {
            Some(t) => matmul(x, t),
            None => Ok(x.clone()),
        }
    }

    /// Backprop through the transition after `stage`, given its input `x`.
    pub fn transition_backward(
        &self,
        stage: usize,
        x: &Tensor<T>,
        g_out: &Tensor<T>,
        grads: &mut Self,
    ) -> Result<Tensor<T>> {
        match &self.stages[stage].transition {
            Some(t) => {
                let (g_x, g_t) = matmul_vjp(x, t, g_out)?;
                grads.stages[stage]
                    .transition
                    .as_mut()
                    .ok_or_else(|| Error::Topology(String::from("gradient lacks a transition")))?
                    .add_assign(&g_t)?;
                Ok(g_x)
            }
            None => Ok(g_out.clone()),
        }
    }
}

/// Activations retained by [`PlainResidualNetwork::forward`].
#[derive(Debug, Clone)]
pub struct PlainCache<T> {
    /// Per stage, per block: the block input and its tape.
    pub stages: Vec<Vec<(Tensor<T>, BlockTape<T>)>>,
    /// Per stage: the stage output, which is also the transition input.
    pub stage_outputs: Vec<Tensor<T>>,
}

impl<T: Element> PlainCache<T> {
    pub fn bytes(&self) -> usize {
        let blocks: usize = self
            .stages
            .iter()
            .flatten()
            .map(|(x, tape)| x.bytes() + tape.bytes())
            .sum();
        blocks + self.stage_outputs.iter().map(Tensor::bytes).sum::<usize>()
    }
}

/// Ordinary residual network `x_i = F_i(x_{i-1}) + x_{i-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainResidualNetwork<T> {
    pub backbone: Backbone<T>,
}

impl<T: Element> PlainResidualNetwork<T> {
    pub fn new(backbone: Backbone<T>) -> Result<Self> {
        backbone.validate()?;
        Ok(Self { backbone })
    }

    pub fn random(cfg: &NetConfig, rng: &mut Prng) -> Result<Self> {
        Self::new(Backbone::random(cfg, rng)?)
    }

    fn check_input(&self, x0: &Tensor<T>) -> Result<()> {
        if x0.rank() != 2 || x0.cols() != self.backbone.input_width() {
            return Err(Error::shape(
                "plain_forward",
                x0.shape(),
                &[0, self.backbone.input_width()],
            ));
        }
        Ok(())
    }

    /// Forward pass without retaining activations.
    pub fn logits(&self, x0: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x0)?;
        let mut x = x0.clone();
        for (s, stage) in self.backbone.stages.iter().enumerate() {
            for block in &stage.blocks {
                x = block.forward(&x)?.add(&x)?;
            }
            x = self.backbone.transition_forward(s, &x)?;
        }
        self.backbone.head_forward(&x)
    }

    pub fn forward(&self, x0: &Tensor<T>) -> Result<(Tensor<T>, PlainCache<T>)> {
        self.check_input(x0)?;
        let mut cache = PlainCache {
            stages: Vec::with_capacity(self.backbone.stages.len()),
            stage_outputs: Vec::with_capacity(self.backbone.stages.len()),
        };
        let mut x = x0.clone();
        for (s, stage) in self.backbone.stages.iter().enumerate() {
            let mut records = Vec::with_capacity(stage.blocks.len());
            for block in &stage.blocks {
                let (f, tape) = block.forward_taped(&x)?;
                let next = f.add(&x)?;
                records.push((x, tape));
                x = next;
            }
            cache.stages.push(records);
            let next = self.backbone.transition_forward(s, &x)?;
            cache.stage_outputs.push(x);
            x = next;
        }
        let logits = self.backbone.head_forward(&x)?;
        Ok((logits, cache))
    }

    fn check_cache(&self, cache: &PlainCache<T>) -> Result<()> {
        let stages = &self.backbone.stages;
        if cache.stages.len() != stages.len() || cache.stage_outputs.len() != stages.len() {
            return Err(Error::StaleCache(format!(
                "cache holds {} stages, network has {}",
                cache.stages.len(),
                stages.len()
            )));
        }
        for (s, (records, stage)) in cache.stages.iter().zip(stages).enumerate() {
            if records.len() != stage.blocks.len() {
                return Err(Error::StaleCache(format!(
                    "stage {s}: cache holds {} blocks, network has {}",
                    records.len(),
                    stage.blocks.len()
                )));
            }
            for (b, ((x, _), block)) in records.iter().zip(&stage.blocks).enumerate() {
                if x.cols() != block.width() {
                    return Err(Error::StaleCache(format!(
                        "stage {s} block {b}: cached width {} vs block width {}",
                        x.cols(),
                        block.width()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Exact reverse-mode gradients from a cache produced by [`forward`](Self::forward).
    pub fn backprop(
        &self,
        cache: &PlainCache<T>,
        g_logits: &Tensor<T>,
    ) -> Result<(Backbone<T>, Tensor<T>)> {
        self.check_cache(cache)?;
        let mut grads = self.backbone.zeros_like();
        let last = self.backbone.stages.len() - 1;
        let mut g = self
            .backbone
            .head_backward(&cache.stage_outputs[last], g_logits, &mut grads)?;
        for s in (0..=last).rev() {
            if s != last {
                g = self
                    .backbone
                    .transition_backward(s, &cache.stage_outputs[s], &g, &mut grads)?;
            }
            let stage = &self.backbone.stages[s];
            for (b, (x, tape)) in cache.stages[s].iter().enumerate().rev() {
                let (g_f, g_block) = stage.blocks[b].vjp_taped(x, tape, &g)?;
                grads.stages[s].blocks[b].accumulate(&g_block)?;
                g = g_f.add(&g)?;
            }
        }
        Ok((grads, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_difference_grad;
    use alloc::vec;

    fn small_cfg(depth: usize) -> NetConfig {
        NetConfig {
            width: 4,
            hidden: 6,
            seq_len: 3,
            stages: 2,
            depth_per_stage: depth,
            pattern: Pattern::Interleaved,
            classes: 3,
        }
    }

    fn zero_blocks(net: &mut Backbone<f64>) {
        for stage in &mut net.stages {
            for block in &mut stage.blocks {
                *block = block.zeros_like();
            }
        }
    }

    #[test]
    fn interleaving_starts_with_attention() {
        let net = Backbone::<f64>::random(&small_cfg(4), &mut Prng::new(1)).unwrap();
        for stage in &net.stages {
            let kinds: Vec<_> = stage.blocks.iter().map(FBlock::kind).collect();
            assert_eq!(
                kinds,
                [BlockKind::Attention, BlockKind::Mlp, BlockKind::Attention, BlockKind::Mlp]
            );
        }
        assert!(net.stages[0].transition.is_some());
        assert!(net.stages[1].transition.is_none());
    }

    #[test]
    fn skip_only_network_is_head_of_mean() {
        let mut rng = Prng::new(2);
        let mut bb = Backbone::<f64>::random(&small_cfg(3), &mut rng).unwrap();
        zero_blocks(&mut bb);
        bb.stages[0].transition = Some(Tensor::eye(4));
        let net = PlainResidualNetwork::new(bb).unwrap();
        let x0 = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let expected = net.backbone.head_forward(&x0).unwrap();
        assert!(net.logits(&x0).unwrap().bit_eq(&expected));
    }

    #[test]
    fn zero_block_adds_nothing() {
        let mut rng = Prng::new(3);
        let mut cfg = small_cfg(0);
        cfg.stages = 1;
        let shallow = PlainResidualNetwork::<f64>::random(&cfg, &mut rng).unwrap();
        let mut deep = shallow.clone();
        deep.backbone.stages[0].blocks.push(FBlock::mlp_zeros(4, 6));
        let x0 = Tensor::randn(&[3, 4], 1.0, &mut rng);
        assert!(deep.logits(&x0).unwrap().bit_eq(&shallow.logits(&x0).unwrap()));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = small_cfg(4);
        let a = PlainResidualNetwork::<f64>::random(&cfg, &mut Prng::new(9)).unwrap();
        let b = PlainResidualNetwork::<f64>::random(&cfg, &mut Prng::new(9)).unwrap();
        let x0 = Tensor::randn(&[3, 4], 1.0, &mut Prng::new(10));
        let (la, _) = a.forward(&x0).unwrap();
        assert!(la.bit_eq(&b.forward(&x0).unwrap().0));
        assert!(la.bit_eq(&a.logits(&x0).unwrap()));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = PlainResidualNetwork::<f64>::random(&small_cfg(2), &mut Prng::new(4)).unwrap();
        let x0 = Tensor::randn(&[3, 4], 1.0, &mut Prng::new(5));
        let (_, cache) = net.forward(&x0).unwrap();
        let (g, gx) = net.backprop(&cache, &Tensor::zeros(&[1, 3])).unwrap();
        assert!(g.tensors().iter().all(|t| t.max_abs() == 0.0));
        assert_eq!(gx.max_abs(), 0.0);
    }

    #[test]
    fn skip_path_gradient_is_ones() {
        // Zero blocks and an identity head: sum(logits) = sum(x_N) / L, so
        // L · ∂/∂x0 is the all-ones gradient of sum(x_N) through the skips.
        let mut cfg = small_cfg(3);
        cfg.stages = 1;
        let mut bb = Backbone::<f64>::random(&cfg, &mut Prng::new(6)).unwrap();
        zero_blocks(&mut bb);
        bb.head = Tensor::eye(4);
        bb.head_bias = Tensor::zeros(&[4]);
        let net = PlainResidualNetwork::new(bb).unwrap();
        let x0 = Tensor::randn(&[3, 4], 1.0, &mut Prng::new(7));
        let (_, cache) = net.forward(&x0).unwrap();
        let (_, gx) = net.backprop(&cache, &Tensor::full(&[1, 4], 1.0)).unwrap();
        for v in gx.data() {
            assert!((v * 3.0 - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let net = PlainResidualNetwork::<f64>::random(&small_cfg(2), &mut Prng::new(8)).unwrap();
        let mut rng = Prng::new(9);
        let x0 = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let w = Tensor::randn(&[1, 3], 1.0, &mut rng);
        let loss = |n: &PlainResidualNetwork<f64>, x: &Tensor<f64>| -> crate::Result<f64> {
            Ok(n.logits(x)?.mul(&w)?.sum())
        };
        let (_, cache) = net.forward(&x0).unwrap();
        let (grads, gx) = net.backprop(&cache, &w).unwrap();
        let fx = finite_difference_grad(|x| loss(&net, x), &x0, 1e-5).unwrap();
        assert!(gx.max_abs_diff(&fx).unwrap() <= 1e-5 * fx.max_abs());
        let analytic = grads.tensors();
        for (i, g) in analytic.iter().enumerate() {
            let base = net.backbone.tensors()[i].clone();
            let numeric = finite_difference_grad(
                |p| {
                    let mut n = net.clone();
                    *n.backbone.tensors_mut()[i] = p.clone();
                    loss(&n, &x0)
                },
                &base,
                1e-5,
            )
            .unwrap();
            let scale = numeric.max_abs().max(1e-8);
            assert!(g.max_abs_diff(&numeric).unwrap() <= 1e-5 * scale, "tensor {i}");
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let net = PlainResidualNetwork::<f64>::random(&small_cfg(2), &mut Prng::new(1)).unwrap();
        let other = PlainResidualNetwork::<f64>::random(&small_cfg(3), &mut Prng::new(1)).unwrap();
        let x0 = Tensor::zeros(&[3, 4]);
        let (_, cache) = other.forward(&x0).unwrap();
        assert!(matches!(
            net.backprop(&cache, &Tensor::zeros(&[1, 3])),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn validate_rejects_misplaced_transitions() {
        let mut bb = Backbone::<f64>::random(&small_cfg(1), &mut Prng::new(1)).unwrap();
        bb.stages[1].transition = Some(Tensor::eye(4));
        assert!(bb.validate().is_err());
        let mut bb = Backbone::<f64>::random(&small_cfg(1), &mut Prng::new(1)).unwrap();
        bb.stages[0].transition = None;
        assert!(bb.validate().is_err());
    }

    #[test]
    fn param_names_are_stable() {
        let bb = Backbone::<f64>::random(&small_cfg(2), &mut Prng::new(1)).unwrap();
        let mut names = vec![];
        bb.for_each_param(|n, _| names.push(n));
        assert_eq!(names[0], "stage0.block0.attention.wq");
        assert_eq!(names[4], "stage0.block1.mlp.w1");
        assert_eq!(names[8], "stage0.transition");
        assert_eq!(names.last().unwrap(), "head.bias");
        assert_eq!(names.len(), bb.tensors().len());
    }

    #[test]
    fn branch_scale_touches_output_projections_only() {
        let cfg = small_cfg(2);
        assert_eq!(cfg.branch_scale(), 0.5);
        let a = Backbone::<f64>::random_scaled(&cfg, &mut Prng::new(3), 1.0).unwrap();
        let b = Backbone::<f64>::random(&cfg, &mut Prng::new(3)).unwrap();
        let mut checked = 0;
        a.for_each_param(|name, x| {
            let mut y = None;
            b.for_each_param(|n, t| {
                if n == name {
                    y = Some(t.clone());
                }
            });
            let y = y.unwrap();
            let expect = if name.ends_with(".w2") || name.ends_with(".wo") {
                x.scale(0.5)
            } else {
                x.clone()
            };
            assert!(y.bit_eq(&expect), "{name}");
            checked += 1;
        });
        assert_eq!(checked, a.tensors().len());
    }
}
