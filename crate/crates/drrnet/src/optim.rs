//! Adaptive-moment optimizer over a [`Backbone`].

use drrnet_core::blocks::Backbone;
use drrnet_core::Element;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state. `step` depends only on its arguments and this state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: Backbone<T>,
    v: Backbone<T>,
    /// Per parameter tensor, in [`Backbone::tensors`] order: updated or not.
    trainable: Vec<bool>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig, params: &Backbone<T>) -> Self {
        let n = params.tensors().len();
        Self {
            config,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            trainable: vec![true; n],
        }
    }

    /// Only tensors whose parameter name satisfies `keep` are updated.
    pub fn with_filter(config: AdamConfig, params: &Backbone<T>, keep: impl Fn(&str) -> bool) -> Self {
        let mut adam = Self::new(config, params);
        let mut names = Vec::new();
        params.for_each_param(|name, _| names.push(name));
        adam.trainable = names.iter().map(|n| keep(n)).collect();
        adam
    }

    pub fn step(&mut self, params: &mut Backbone<T>, grads: &Backbone<T>) -> Result<()> {
        let c = self.config;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, eps) = (c.lr, c.eps);
        let g_all = grads.tensors();
        let m_all = self.m.tensors_mut();
        let v_all = self.v.tensors_mut();
        let p_all = params.tensors_mut();
        if g_all.len() != p_all.len() {
            return Err(HarnessError::Invariant("gradient/parameter count mismatch".into()));
        }
        for ((((p, g), m), v), &train) in p_all.into_iter().zip(g_all).zip(m_all).zip(v_all).zip(&self.trainable) {
            if !train {
                continue;
            }
            if p.shape() != g.shape() {
                return Err(HarnessError::Invariant(format!(
                    "gradient shape {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (pd, gd, md, vd) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for k in 0..pd.len() {
                md[k] = b1 * md[k] + (T::one() - b1) * gd[k];
                vd[k] = b2 * vd[k] + (T::one() - b2) * gd[k] * gd[k];
                let m_hat = md[k].as_f64() / bc1;
                let v_hat = vd[k].as_f64() / bc2;
                pd[k] = pd[k] - T::of(lr * m_hat / (v_hat.sqrt() + eps));
            }
        }
        Ok(())
    }
}
