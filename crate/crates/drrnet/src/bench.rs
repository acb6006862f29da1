//! Memory and step-time benchmarks and the reconstruction check.

use std::time::Instant;

use drrnet_core::analysis::reconstruction_error;
use drrnet_core::blocks::{Backbone, NetConfig};
use drrnet_core::revcore::{Coefficients, DrrNetwork, Mode};
use drrnet_core::{Element, Prng, Tensor};
use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::train::softmax_cross_entropy;

pub const WARMUP_TRIALS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemRow {
    pub depth: usize,
    pub mode: &'static str,
    pub peak_bytes: usize,
}

fn with_depth(cfg: &NetConfig, depth: usize) -> NetConfig {
    NetConfig {
        depth_per_stage: depth,
        ..cfg.clone()
    }
}

/// Peak ledger bytes of one training step per `(depth, mode)`.
pub fn mem_bench<T: Element>(
    cfg: &NetConfig,
    coefficients: Coefficients,
    depths: &[usize],
    seed: u64,
) -> Result<Vec<MemRow>> {
    if depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Config("depths must be strictly ascending".into()));
    }
    let mut rows = Vec::new();
    for &depth in depths {
        let c = with_depth(cfg, depth);
        let mut rng = Prng::new(seed).child_indexed("mem-bench", depth as u64);
        let bb = Backbone::<T>::random(&c, &mut rng)?;
        let x = Tensor::<T>::randn(&c.input_shape(), 1.0, &mut rng);
        for mode in [Mode::Cached, Mode::Reversible] {
            let mut net = DrrNetwork::new(bb.clone(), coefficients, mode)?;
            net.gradients(&x, |z| Ok(softmax_cross_entropy(z, 0).map_err(|_| drrnet_core::Error::NonFinite("loss"))?))?;
            rows.push(MemRow {
                depth,
                mode: mode.name(),
                peak_bytes: net.ledger_report().peak_bytes,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeBench {
    pub cached_step_ms: f64,
    pub reversible_step_ms: f64,
    pub ratio: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time of one forward/backward step in each mode, after
/// [`WARMUP_TRIALS`] discarded trials. Trials alternate between modes so
/// that drift affects both equally.
pub fn time_bench<T: Element>(
    cfg: &NetConfig,
    coefficients: Coefficients,
    samples_per_step: usize,
    trials: usize,
    seed: u64,
) -> Result<TimeBench> {
    if trials == 0 || samples_per_step == 0 {
        return Err(HarnessError::Config("time-bench needs trials and samples".into()));
    }
    let mut rng = Prng::new(seed).child("time-bench");
    let bb = Backbone::<T>::random(cfg, &mut rng)?;
    let inputs: Vec<Tensor<T>> = (0..samples_per_step)
        .map(|_| Tensor::randn(&cfg.input_shape(), 1.0, &mut rng))
        .collect();
    let mut cached = DrrNetwork::new(bb.clone(), coefficients, Mode::Cached)?;
    let mut reversible = DrrNetwork::new(bb, coefficients, Mode::Reversible)?;
    let ones = Tensor::full(&[1, cfg.classes], T::one());
    let step = |net: &mut DrrNetwork<T>| -> Result<f64> {
        let started = Instant::now();
        for x in &inputs {
            match net.mode() {
                Mode::Cached => {
                    let t = net.forward_cached(x)?;
                    std::hint::black_box(net.backprop_cached(t, &ones)?);
                }
                Mode::Reversible => {
                    let t = net.forward_reversible(x)?;
                    std::hint::black_box(net.backprop_reversible(t, &ones)?);
                }
            }
        }
        Ok(started.elapsed().as_secs_f64() * 1e3)
    };
    let (mut tc, mut tr) = (Vec::new(), Vec::new());
    for trial in 0..WARMUP_TRIALS + trials {
        let c = step(&mut cached)?;
        let r = step(&mut reversible)?;
        if trial >= WARMUP_TRIALS {
            tc.push(c);
            tr.push(r);
        }
    }
    let (c, r) = (median(tc), median(tr));
    Ok(TimeBench {
        cached_step_ms: c,
        reversible_step_ms: r,
        ratio: r / c,
    })
}

/// Largest reconstruction error of a random network at `coefficients`
/// over `trials` random inputs.
pub fn reverse_check<T: Element>(
    cfg: &NetConfig,
    coefficients: Coefficients,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = Prng::new(seed).child("reverse-check");
    let bb = Backbone::<T>::random(cfg, &mut rng)?;
    let net = DrrNetwork::new(bb, coefficients, Mode::Reversible)?;
    let inputs: Vec<Tensor<T>> = (0..trials)
        .map(|_| Tensor::randn(&cfg.input_shape(), 1.0, &mut rng))
        .collect();
    Ok(reconstruction_error(&net, &inputs)?)
}
