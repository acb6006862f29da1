//! Pretraining and the six finetuning regimes.

use std::time::Instant;

use drrnet_core::blocks::{Backbone, Checkpoint, PlainResidualNetwork};
use drrnet_core::numerics::softmax_rows;
use drrnet_core::revcore::{init_from_pretrained, init_hard, Coefficients, DrrNetwork, Mode};
use drrnet_core::schedule::STEPS_PER_EPOCH;
use drrnet_core::{Element, Prng, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::optim::{Adam, AdamConfig};
use crate::task::{Split, SyntheticTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Conventional,
    Frozen,
    RevScratch,
    Hard,
    Dr2Vanilla,
    Dr2Dynamic,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Conventional,
        Regime::Frozen,
        Regime::RevScratch,
        Regime::Hard,
        Regime::Dr2Vanilla,
        Regime::Dr2Dynamic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Conventional => "conventional",
            Regime::Frozen => "frozen",
            Regime::RevScratch => "rev-scratch",
            Regime::Hard => "hard",
            Regime::Dr2Vanilla => "dr2-vanilla",
            Regime::Dr2Dynamic => "dr2-dynamic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }

    pub fn needs_checkpoint(self) -> bool {
        self != Regime::RevScratch
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: u64,
    pub step: u64,
    pub alpha: f64,
    pub beta: f64,
    pub train_loss: f64,
    pub eval_accuracy: f64,
    pub peak_activation_bytes: usize,
    pub step_time_ms: f64,
}

/// `(−log softmax(z)[label], softmax(z) − onehot(label))` for `[1, C]` logits.
pub fn softmax_cross_entropy<T: Element>(logits: &Tensor<T>, label: usize) -> Result<(f64, Tensor<T>)> {
    let p = softmax_rows(logits)?;
    if label >= p.len() {
        return Err(HarnessError::Invariant(format!("label {label} out of {} classes", p.len())));
    }
    let loss = -p[label].as_f64().max(f64::MIN_POSITIVE).ln();
    let mut g = p;
    g[label] = g[label] - T::one();
    Ok((loss, g))
}

/// A network under training.
#[derive(Debug, Clone)]
pub enum Model<T> {
    Plain(PlainResidualNetwork<T>),
    Drr(DrrNetwork<T>),
}

impl<T: Element> Model<T> {
    pub fn backbone(&self) -> &Backbone<T> {
        match self {
            Model::Plain(n) => &n.backbone,
            Model::Drr(n) => &n.backbone,
        }
    }

    fn backbone_mut(&mut self) -> &mut Backbone<T> {
        match self {
            Model::Plain(n) => &mut n.backbone,
            Model::Drr(n) => &mut n.backbone,
        }
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(match self {
            Model::Plain(n) => n.logits(x)?,
            Model::Drr(n) => n.logits(x)?,
        })
    }

    /// The `(α, β)` this model computes with; a plain network is `(1, 0)`.
    pub fn coefficients(&self) -> Coefficients {
        match self {
            Model::Plain(_) => Coefficients::PLAIN,
            Model::Drr(n) => n.coefficients(),
        }
    }

    /// Loss, gradients and peak retained activation bytes for one sample.
    /// With `head_only`, only head gradients are formed.
    fn sample_gradients(
        &mut self,
        x: &Tensor<T>,
        label: usize,
        head_only: bool,
    ) -> Result<(f64, Backbone<T>, usize)> {
        match self {
            Model::Plain(net) => {
                let (logits, cache) = net.forward(x)?;
                let (loss, g) = softmax_cross_entropy(&logits, label)?;
                let bytes = cache.bytes();
                let grads = if head_only {
                    let mut grads = net.backbone.zeros_like();
                    let last = cache.stage_outputs.last().expect("at least one stage");
                    net.backbone.head_backward(last, &g, &mut grads)?;
                    grads
                } else {
                    net.backprop(&cache, &g)?.0
                };
                Ok((loss, grads, bytes))
            }
            Model::Drr(net) => {
                let mut label_loss = None;
                let (_, _, grads) = net.gradients(x, |logits| {
                    let (l, g) = softmax_cross_entropy(logits, label).map_err(|_| {
                        drrnet_core::Error::NonFinite("loss")
                    })?;
                    label_loss = Some(l);
                    Ok((l, g))
                })?;
                Ok((label_loss.unwrap_or(f64::NAN), grads, net.ledger_report().peak_bytes))
            }
        }
    }
}

/// Fraction of the first `n` evaluation samples the model classifies correctly.
pub fn evaluate<T: Element>(model: &Model<T>, task: &SyntheticTask, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(HarnessError::Config("evaluation needs at least one sample".into()));
    }
    let mut correct = 0u64;
    for i in 0..n {
        let (x, y) = task.sample::<T>(Split::Eval, i)?;
        if model.logits(&x)?.argmax() == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

fn adam_config(cfg: &TrainConfig) -> AdamConfig {
    AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.eps,
    }
}

fn divergence(cfg: &TrainConfig, what: &str, step: u64) -> HarnessError {
    HarnessError::Numeric(format!(
        "{what} diverged at step {step} (seed {}); config:\n{}",
        cfg.seed,
        cfg.to_text()
    ))
}

fn diverged(cfg: &TrainConfig, e: HarnessError, step: u64) -> HarnessError {
    match e {
        HarnessError::Core(drrnet_core::Error::NonFinite(what)) => divergence(cfg, what, step),
        other => other,
    }
}

/// Drives `steps` optimizer steps and emits a record at step 0, at every
/// epoch boundary and at the last step. Returns the final eval accuracy.
fn train_loop<T: Element>(
    cfg: &TrainConfig,
    model: &mut Model<T>,
    opt: &mut Adam<T>,
    task: &SyntheticTask,
    steps: u64,
    dynamic: bool,
    head_only: bool,
    sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
) -> Result<f64> {
    let batch = cfg.batch as u64;
    let scale = T::one() / T::of(batch as f64);
    for t in 0..steps {
        if dynamic {
            let c = cfg.schedule.coefficients_at(t)?;
            if let Model::Drr(net) = model {
                net.set_coefficients(c)?;
            }
        }
        let started = Instant::now();
        let mut total = model.backbone().zeros_like();
        let mut loss = 0.0;
        let mut peak = 0usize;
        for k in 0..batch {
            let (x, y) = task.sample::<T>(Split::Train, t * batch + k)?;
            let (l, g, bytes) = model
                .sample_gradients(&x, y, head_only)
                .map_err(|e| diverged(cfg, e, t))?;
            loss += l;
            peak = peak.max(bytes);
            total.accumulate(&g)?;
        }
        loss /= batch as f64;
        total.scale_in_place(scale);
        if !loss.is_finite() || !total.is_finite() {
            return Err(divergence(cfg, "loss", t));
        }
        opt.step(model.backbone_mut(), &total)?;
        if !model.backbone().is_finite() {
            return Err(divergence(cfg, "parameters", t));
        }
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        if t % STEPS_PER_EPOCH == 0 || t + 1 == steps {
            let c = model.coefficients();
            let record = MetricsRecord {
                epoch: t / STEPS_PER_EPOCH,
                step: t,
                alpha: c.alpha,
                beta: c.beta,
                train_loss: loss,
                eval_accuracy: evaluate(model, task, cfg.eval_size as u64)
                    .map_err(|e| diverged(cfg, e, t))?,
                peak_activation_bytes: peak,
                step_time_ms: if cfg.timing { elapsed } else { 0.0 },
            };
            log::info!(
                "step {t} loss {:.4} acc {:.3} alpha {} beta {}",
                record.train_loss,
                record.eval_accuracy,
                record.alpha,
                record.beta
            );
            sink(&record)?;
        }
    }
    evaluate(model, task, cfg.eval_size as u64).map_err(|e| diverged(cfg, e, steps))
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub accuracy: f64,
    pub records: Vec<MetricsRecord>,
}

/// Trains a plain network on the upstream task for `cfg.pretrain_steps`.
pub fn pretrain<T: Element>(cfg: &TrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let task = SyntheticTask::make(cfg.seed, &cfg.net)?;
    let init = Prng::new(cfg.seed).child("pretrain-init");
    let net = PlainResidualNetwork::<T>::random(&cfg.net, &mut init.clone())?;
    let mut model = Model::Plain(net);
    let mut opt = Adam::new(adam_config(cfg), model.backbone());
    let mut records = Vec::new();
    let accuracy = train_loop(
        cfg,
        &mut model,
        &mut opt,
        &task,
        cfg.pretrain_steps,
        false,
        false,
        &mut |r| {
            records.push(r.clone());
            Ok(())
        },
    )?;
    Ok(PretrainOutcome {
        checkpoint: Checkpoint::from_backbone(&cfg.net, model.backbone()),
        accuracy,
        records,
    })
}

/// Builds the starting model of a regime.
pub fn init_model<T: Element>(
    cfg: &TrainConfig,
    regime: Regime,
    ckpt: Option<&Checkpoint>,
) -> Result<Model<T>> {
    let ckpt = match (regime.needs_checkpoint(), ckpt) {
        (true, None) => {
            return Err(HarnessError::Config(format!(
                "regime {} needs a pretrained checkpoint (--init)",
                regime.name()
            )))
        }
        (false, Some(_)) => {
            return Err(HarnessError::Config(format!(
                "regime {} trains from scratch and takes no checkpoint",
                regime.name()
            )))
        }
        (_, c) => c,
    };
    Ok(match regime {
        Regime::Conventional | Regime::Frozen => {
            let bb = ckpt.unwrap().to_backbone::<T>(&cfg.net)?;
            Model::Plain(PlainResidualNetwork::new(bb)?)
        }
        Regime::RevScratch => {
            let mut rng = Prng::new(cfg.seed).child("scratch-init");
            let bb = Backbone::<T>::random(&cfg.net, &mut rng)?;
            Model::Drr(DrrNetwork::new(bb, Coefficients::HARD, Mode::Reversible)?)
        }
        Regime::Hard => Model::Drr(init_hard(&cfg.net, ckpt.unwrap())?),
        Regime::Dr2Vanilla => Model::Drr(init_from_pretrained(&cfg.net, ckpt.unwrap())?),
        Regime::Dr2Dynamic => {
            let mut net = init_from_pretrained::<T>(&cfg.net, ckpt.unwrap())?;
            net.set_coefficients(cfg.schedule.coefficients_at(0)?)?;
            Model::Drr(net)
        }
    })
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome<T> {
    pub model: Model<T>,
    pub accuracy: f64,
}

/// Finetunes on the downstream task (upstream teacher perturbed by
/// `cfg.sigma`), streaming metrics records into `sink`.
pub fn finetune<T: Element>(
    cfg: &TrainConfig,
    regime: Regime,
    ckpt: Option<&Checkpoint>,
    sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
) -> Result<FinetuneOutcome<T>> {
    cfg.validate()?;
    let upstream = SyntheticTask::make(cfg.seed, &cfg.net)?;
    let task = upstream.downstream(cfg.sigma)?;
    finetune_on(cfg, regime, ckpt, &task, sink)
}

/// [`finetune`] against an explicit task.
pub fn finetune_on<T: Element>(
    cfg: &TrainConfig,
    regime: Regime,
    ckpt: Option<&Checkpoint>,
    task: &SyntheticTask,
    sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
) -> Result<FinetuneOutcome<T>> {
    let mut model = init_model::<T>(cfg, regime, ckpt)?;
    let adam = adam_config(cfg);
    let mut opt = if regime == Regime::Frozen {
        Adam::with_filter(adam, model.backbone(), |n| n.starts_with("head."))
    } else {
        Adam::new(adam, model.backbone())
    };
    let accuracy = train_loop(
        cfg,
        &mut model,
        &mut opt,
        task,
        cfg.steps,
        regime == Regime::Dr2Dynamic,
        regime == Regime::Frozen,
        sink,
    )?;
    Ok(FinetuneOutcome { model, accuracy })
}
