//! Dynamic `(α, β)` trajectories for finetuning.
//!
//! Coefficients start at `(1, 0.1)`, move towards an end point, and stay
//! there from step `τ` on. Updates happen only every `η` steps, so the
//! trajectory is piecewise constant.

use alloc::vec::Vec;

use num_traits::Float;

use crate::revcore::Coefficients;
use crate::{Error, Result};

/// Iterations per epoch when `η` and `τ` are given in epochs.
pub const STEPS_PER_EPOCH: u64 = 100;

const EXP_RATE: f64 = 3.0;
const LOG_RATE: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyShape {
    Linear,
    /// `(e^{3s} − 1) / (e^3 − 1)`: slow start, fast finish.
    Exponential,
    /// `ln(1 + 9s) / ln 10`: fast start, slow finish.
    Logarithm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpdateOrder {
    Simultaneous,
    /// α over the first half of `[0, τ]`, then β over the second half.
    AlphaFirst,
    BetaFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepUnit {
    Epochs,
    Iterations,
}

impl PolicyShape {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Self::Linear),
            "exponential" => Some(Self::Exponential),
            "logarithm" => Some(Self::Logarithm),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Exponential => "exponential",
            Self::Logarithm => "logarithm",
        }
    }

    fn warp(self, s: f64) -> f64 {
        match self {
            Self::Linear => s,
            Self::Exponential => (Float::exp(EXP_RATE * s) - 1.0) / (Float::exp(EXP_RATE) - 1.0),
            Self::Logarithm => Float::ln(1.0 + LOG_RATE * s) / Float::ln(1.0 + LOG_RATE),
        }
    }
}

impl UpdateOrder {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "simultaneous" => Some(Self::Simultaneous),
            "alpha_first" => Some(Self::AlphaFirst),
            "beta_first" => Some(Self::BetaFirst),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Simultaneous => "simultaneous",
            Self::AlphaFirst => "alpha_first",
            Self::BetaFirst => "beta_first",
        }
    }

    /// Splits overall progress into per-coefficient progress `(s_α, s_β)`.
    fn split(self, s: f64) -> (f64, f64) {
        let first = (2.0 * s).min(1.0);
        let second = (2.0 * s - 1.0).clamp(0.0, 1.0);
        match self {
            Self::Simultaneous => (s, s),
            Self::AlphaFirst => (first, second),
            Self::BetaFirst => (second, first),
        }
    }
}

impl StepUnit {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "epochs" | "epoch" => Some(Self::Epochs),
            "iterations" | "iteration" | "iters" => Some(Self::Iterations),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Epochs => "epochs",
            Self::Iterations => "iterations",
        }
    }

    pub fn to_steps(self, n: u64) -> u64 {
        match self {
            Self::Epochs => n * STEPS_PER_EPOCH,
            Self::Iterations => n,
        }
    }
}

/// Non-fatal configuration issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleWarning {
    /// `η > τ`: the end point is reached in a single jump at `t = η`.
    PeriodExceedsEnd { eta: u64, tau: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePolicy {
    pub shape: PolicyShape,
    pub order: UpdateOrder,
    /// Update period `η`, in `unit`.
    pub eta: u64,
    /// End of updates `τ`, in `unit`.
    pub tau: u64,
    pub unit: StepUnit,
    pub start: Coefficients,
    pub end: Coefficients,
}

impl Default for SchedulePolicy {
    fn default() -> Self {
        Self {
            shape: PolicyShape::Linear,
            order: UpdateOrder::Simultaneous,
            eta: 10,
            tau: 500,
            unit: StepUnit::Iterations,
            start: Coefficients::VANILLA,
            end: Coefficients::new(0.3, 0.7),
        }
    }
}

impl SchedulePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::Schedule("end point tau must be positive".into()));
        }
        if self.eta == 0 {
            return Err(Error::Schedule("update period eta must be positive".into()));
        }
        self.start.validate()?;
        self.end.validate()?;
        if self.end.beta == 0.0 {
            return Err(Error::Irreversible);
        }
        if self.end.alpha > self.start.alpha || self.end.beta < self.start.beta {
            return Err(Error::Schedule(alloc::format!(
                "alpha must not increase and beta must not decrease: {:?} -> {:?}",
                self.start,
                self.end
            )));
        }
        Ok(())
    }

    pub fn warning(&self) -> Option<ScheduleWarning> {
        (self.eta > self.tau).then_some(ScheduleWarning::PeriodExceedsEnd {
            eta: self.eta,
            tau: self.tau,
        })
    }

    pub fn eta_steps(&self) -> u64 {
        self.unit.to_steps(self.eta)
    }

    pub fn tau_steps(&self) -> u64 {
        self.unit.to_steps(self.tau)
    }

    /// Overall progress in `[0, 1]` at step `t`: the last multiple of `η`
    /// over `τ`, reaching exactly 1 at `t = τ`.
    fn progress(&self, t: u64) -> f64 {
        let (eta, tau) = (self.eta_steps(), self.tau_steps());
        if eta > tau {
            return if t >= eta { 1.0 } else { 0.0 };
        }
        if t >= tau {
            return 1.0;
        }
        ((t / eta) * eta) as f64 / tau as f64
    }

    pub fn coefficients_at(&self, t: u64) -> Result<Coefficients> {
        self.validate()?;
        let (sa, sb) = self.order.split(self.progress(t));
        let interpolate = |s: f64, from: f64, to: f64| match self.shape.warp(s) {
            w if w <= 0.0 => from,
            w if w >= 1.0 => to,
            w => from + w * (to - from),
        };
        Ok(Coefficients::new(
            interpolate(sa, self.start.alpha, self.end.alpha),
            interpolate(sb, self.start.beta, self.end.beta),
        ))
    }

    /// Every step in `[0, total_steps)` at which the coefficients change,
    /// starting with `t = 0`.
    pub fn events(&self, total_steps: u64) -> Result<Vec<(u64, Coefficients)>> {
        self.validate()?;
        let (eta, tau) = (self.eta_steps(), self.tau_steps());
        let mut candidates: Vec<u64> = (0..total_steps).step_by(eta as usize).collect();
        if eta <= tau && tau < total_steps && tau % eta != 0 {
            candidates.push(tau);
            candidates.sort_unstable();
        }
        let mut events: Vec<(u64, Coefficients)> = Vec::new();
        for t in candidates {
            let c = self.coefficients_at(t)?;
            if events.last().map_or(true, |&(_, prev)| prev != c) {
                events.push((t, c));
            }
        }
        Ok(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear(eta: u64, tau: u64) -> SchedulePolicy {
        SchedulePolicy {
            eta,
            tau,
            ..SchedulePolicy::default()
        }
    }

    const SHAPES: [PolicyShape; 3] =
        [PolicyShape::Linear, PolicyShape::Exponential, PolicyShape::Logarithm];
    const ORDERS: [UpdateOrder; 3] =
        [UpdateOrder::Simultaneous, UpdateOrder::AlphaFirst, UpdateOrder::BetaFirst];

    #[test]
    fn endpoints_and_midpoint() {
        let p = linear(1, 10);
        assert_eq!(p.coefficients_at(0).unwrap(), Coefficients::new(1.0, 0.1));
        assert_eq!(p.coefficients_at(10).unwrap(), Coefficients::new(0.3, 0.7));
        assert_eq!(p.coefficients_at(1000).unwrap(), Coefficients::new(0.3, 0.7));
        let mid = p.coefficients_at(5).unwrap();
        assert!((mid.alpha - 0.65).abs() < 1e-12 && (mid.beta - 0.40).abs() < 1e-12);
    }

    #[test]
    fn degenerate_configs() {
        assert!(matches!(linear(1, 0).coefficients_at(0), Err(Error::Schedule(_))));
        assert!(matches!(linear(0, 10).coefficients_at(0), Err(Error::Schedule(_))));
        let mut p = linear(1, 10);
        p.end = Coefficients::new(1.0, 0.05);
        assert!(p.validate().is_err());
    }

    #[test]
    fn period_beyond_end_jumps_once() {
        let p = linear(15, 10);
        assert!(p.warning().is_some());
        assert_eq!(p.coefficients_at(14).unwrap(), p.start);
        assert_eq!(p.coefficients_at(15).unwrap(), p.end);
        let e = p.events(100).unwrap();
        assert_eq!(e.iter().map(|x| x.0).collect::<Vec<_>>(), [0, 15]);
    }

    #[test]
    fn event_counts() {
        let e = linear(10, 10).events(100).unwrap();
        assert_eq!(e.len(), 2);
        let e = linear(2, 10).events(100).unwrap();
        assert_eq!(e.iter().map(|x| x.0).collect::<Vec<_>>(), [0, 2, 4, 6, 8, 10]);
        // τ not a multiple of η still lands exactly on τ
        let e = linear(3, 10).events(100).unwrap();
        assert_eq!(e.iter().map(|x| x.0).collect::<Vec<_>>(), [0, 3, 6, 9, 10]);
    }

    #[test]
    fn shapes_share_endpoints() {
        let events: Vec<_> = SHAPES
            .iter()
            .map(|&shape| SchedulePolicy { shape, ..linear(5, 50) }.events(200).unwrap())
            .collect();
        for e in &events[1..] {
            assert_eq!(e.first(), events[0].first());
            assert_eq!(e.last(), events[0].last());
        }
    }

    #[test]
    fn epochs_scale_by_steps_per_epoch() {
        let p = SchedulePolicy {
            unit: StepUnit::Epochs,
            ..linear(1, 4)
        };
        assert_eq!(p.coefficients_at(99).unwrap(), p.start);
        assert_ne!(p.coefficients_at(100).unwrap(), p.start);
        assert_eq!(p.coefficients_at(400).unwrap(), p.end);
    }

    #[test]
    fn sequential_orders_hand_over_at_half() {
        let a = SchedulePolicy {
            order: UpdateOrder::AlphaFirst,
            ..linear(1, 10)
        };
        let c = a.coefficients_at(5).unwrap();
        assert_eq!((c.alpha, c.beta), (0.3, 0.1));
        let b = SchedulePolicy {
            order: UpdateOrder::BetaFirst,
            ..linear(1, 10)
        };
        let c = b.coefficients_at(5).unwrap();
        assert_eq!((c.alpha, c.beta), (1.0, 0.7));
    }

    #[test]
    fn warps_bend_the_right_way() {
        let at = |shape| SchedulePolicy { shape, ..linear(1, 10) }.coefficients_at(5).unwrap().alpha;
        // alpha decreases: a concave warp moves it further by the midpoint
        assert!(at(PolicyShape::Logarithm) < at(PolicyShape::Linear));
        assert!(at(PolicyShape::Exponential) > at(PolicyShape::Linear));
    }

    fn any_policy() -> impl Strategy<Value = SchedulePolicy> {
        (0usize..3, 0usize..3, 1u64..20, 1u64..200, 0.0f64..1.0, 0.1f64..1.0).prop_map(
            |(s, o, eta, tau, a_end, b_end)| SchedulePolicy {
                shape: SHAPES[s],
                order: ORDERS[o],
                eta,
                tau,
                unit: StepUnit::Iterations,
                start: Coefficients::VANILLA,
                end: Coefficients::new(a_end, b_end),
            },
        )
    }

    proptest! {
        #[test]
        fn pinned_endpoints(p in any_policy(), extra in 0u64..500) {
            prop_assert_eq!(p.coefficients_at(0).unwrap(), p.start);
            let end_t = p.tau_steps().max(p.eta_steps());
            prop_assert_eq!(p.coefficients_at(end_t + extra).unwrap(), p.end);
        }

        #[test]
        fn monotone(p in any_policy(), t1 in 0u64..300, dt in 0u64..300) {
            let a = p.coefficients_at(t1).unwrap();
            let b = p.coefficients_at(t1 + dt).unwrap();
            prop_assert!(a.alpha >= b.alpha && a.beta <= b.beta);
        }

        #[test]
        fn constant_between_updates(p in any_policy(), k in 0u64..30, off in 0u64..20) {
            let eta = p.eta_steps();
            let t0 = k * eta;
            let t = t0 + off % eta;
            // the only extra change point is τ itself
            prop_assume!(!(t0 < p.tau_steps() && p.tau_steps() <= t));
            prop_assert_eq!(p.coefficients_at(t).unwrap(), p.coefficients_at(t0).unwrap());
        }

        #[test]
        fn simultaneous_moves_both(p in any_policy()) {
            let p = SchedulePolicy { order: UpdateOrder::Simultaneous, ..p };
            prop_assume!(p.end.alpha < 1.0 && p.end.beta > 0.1);
            for w in p.events(1000).unwrap().windows(2) {
                prop_assert!(w[1].1.alpha < w[0].1.alpha && w[1].1.beta > w[0].1.beta);
            }
        }
    }
}
