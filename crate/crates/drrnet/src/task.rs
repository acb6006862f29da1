//! Teacher-labelled synthetic classification tasks.

use drrnet_core::blocks::{NetConfig, PlainResidualNetwork};
use drrnet_core::{Element, Prng, Tensor};

use crate::error::{HarnessError, Result};

/// Samples used to check the class balance of a fresh teacher.
pub const BALANCE_SAMPLES: u64 = 10_000;
const MIN_CLASS_SHARE: f64 = 0.02;
const MAX_CLASS_SHARE: f64 = 0.9;
const CALIBRATION_SAMPLES: u64 = 2_000;
const CALIBRATION_ROUNDS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
    Calibrate,
}

impl Split {
    fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Calibrate => "calibrate",
        }
    }
}

/// Inputs are N(0, 1) tokens; labels are the argmax of a fixed teacher.
///
/// Inputs depend only on `(seed, split, index)`, so a downstream task built
/// with [`SyntheticTask::downstream`] sees the same inputs with new labels.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub config: NetConfig,
    pub seed: u64,
    /// Relative parameter noise applied to the upstream teacher; 0 for task A.
    pub sigma: f64,
    teacher: PlainResidualNetwork<f64>,
}

impl SyntheticTask {
    /// Pretraining task: a random teacher whose head bias is calibrated so
    /// that classes are roughly balanced.
    pub fn make(seed: u64, config: &NetConfig) -> Result<Self> {
        let root = Prng::new(seed).child("task");
        let teacher = PlainResidualNetwork::random(config, &mut root.child("teacher"))?;
        let mut task = Self {
            config: config.clone(),
            seed,
            sigma: 0.0,
            teacher,
        };
        task.calibrate()?;
        task.check_balance(BALANCE_SAMPLES)?;
        Ok(task)
    }

    /// Wraps an explicit teacher without calibration or balance checks.
    pub fn with_teacher(seed: u64, config: &NetConfig, teacher: PlainResidualNetwork<f64>) -> Self {
        Self {
            config: config.clone(),
            seed,
            sigma: 0.0,
            teacher,
        }
    }

    /// Downstream task: every teacher parameter tensor `p` receives
    /// `σ·rms(p)·N(0, 1)` noise, drawn from a stream fixed by the seed.
    pub fn downstream(&self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(HarnessError::Config(format!("task.sigma must be non-negative, got {sigma}")));
        }
        let mut rng = Prng::new(self.seed).child("task").child("perturb");
        let mut teacher = self.teacher.clone();
        if sigma > 0.0 {
            teacher.backbone.for_each_param_mut(|_, t| {
                let rms = (t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
                for v in t.data_mut() {
                    *v += sigma * rms * rng.normal();
                }
            });
        }
        let task = Self {
            config: self.config.clone(),
            seed: self.seed,
            sigma: self.sigma + sigma,
            teacher,
        };
        task.check_balance(BALANCE_SAMPLES)?;
        Ok(task)
    }

    pub fn teacher(&self) -> &PlainResidualNetwork<f64> {
        &self.teacher
    }

    pub fn input<T: Element>(&self, split: Split, index: u64) -> Tensor<T> {
        let mut rng = Prng::new(self.seed).child("inputs").child_indexed(split.label(), index);
        Tensor::<f64>::randn(&self.config.input_shape(), 1.0, &mut rng).cast()
    }

    pub fn label_of(&self, x: &Tensor<f64>) -> Result<usize> {
        Ok(self.teacher.logits(x)?.argmax())
    }

    pub fn sample<T: Element>(&self, split: Split, index: u64) -> Result<(Tensor<T>, usize)> {
        let x = self.input::<f64>(split, index);
        let y = self.label_of(&x)?;
        Ok((x.cast(), y))
    }

    pub fn labels(&self, split: Split, n: u64) -> Result<Vec<usize>> {
        (0..n).map(|i| self.label_of(&self.input(split, i))).collect()
    }

    pub fn class_histogram(&self, split: Split, n: u64) -> Result<Vec<usize>> {
        let mut hist = vec![0; self.config.classes];
        for y in self.labels(split, n)? {
            hist[y] += 1;
        }
        Ok(hist)
    }

    /// Shifts the head bias until every class wins roughly `1/C` of a
    /// calibration sample.
    fn calibrate(&mut self) -> Result<()> {
        let c = self.config.classes;
        let logits: Vec<Vec<f64>> = (0..CALIBRATION_SAMPLES)
            .map(|i| {
                let x = self.input::<f64>(Split::Calibrate, i);
                Ok(self.teacher.logits(&x)?.into_data())
            })
            .collect::<Result<_>>()?;
        let n = logits.len() as f64;
        let mut bias = self.teacher.backbone.head_bias.as_f64_vec();
        let mut mean = vec![0.0; c];
        for row in &logits {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let spread = (logits
            .iter()
            .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)))
            .sum::<f64>()
            / (n * c as f64))
            .sqrt()
            .max(1e-12);
        for (b, m) in bias.iter_mut().zip(&mean) {
            *b -= m;
        }
        let target = 1.0 / c as f64;
        for round in 0..CALIBRATION_ROUNDS {
            let mut freq = vec![0.0; c];
            for row in &logits {
                let k = argmax_biased(row, &bias);
                freq[k] += 1.0 / n;
            }
            let step = 0.5 * spread / (1.0 + round as f64 / 10.0);
            for (b, f) in bias.iter_mut().zip(&freq) {
                *b += step * (target.ln() - f.max(0.5 / n).ln()).clamp(-1.0, 1.0);
            }
        }
        self.teacher.backbone.head_bias = Tensor::from_vec(&[c], bias)?;
        Ok(())
    }

    fn check_balance(&self, samples: u64) -> Result<()> {
        let hist = self.class_histogram(Split::Eval, samples)?;
        let n = samples as f64;
        let top = *hist.iter().max().unwrap() as f64 / n;
        let low = *hist.iter().min().unwrap() as f64 / n;
        if top > MAX_CLASS_SHARE || low < MIN_CLASS_SHARE {
            return Err(HarnessError::Config(format!(
                "degenerate teacher for seed {}: class shares range {low:.3}..{top:.3} \
                 (need each in {MIN_CLASS_SHARE}..{MAX_CLASS_SHARE}); choose another seed \
                 or a smaller task.sigma",
                self.seed
            )));
        }
        Ok(())
    }
}

fn argmax_biased(row: &[f64], bias: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..row.len() {
        if row[k] + bias[k] > row[best] + bias[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> NetConfig {
        NetConfig {
            width: 8,
            hidden: 16,
            seq_len: 4,
            stages: 2,
            depth_per_stage: 2,
            pattern: drrnet_core::blocks::Pattern::Interleaved,
            classes: 4,
        }
    }

    #[test]
    fn same_seed_same_labels() {
        let a = SyntheticTask::make(3, &tiny()).unwrap();
        let b = SyntheticTask::make(3, &tiny()).unwrap();
        assert_eq!(a.labels(Split::Train, 100).unwrap(), b.labels(Split::Train, 100).unwrap());
    }

    #[test]
    fn zero_sigma_keeps_labels() {
        let a = SyntheticTask::make(3, &tiny()).unwrap();
        let b = a.downstream(0.0).unwrap();
        assert_eq!(a.labels(Split::Train, 200).unwrap(), b.labels(Split::Train, 200).unwrap());
    }

    #[test]
    fn classes_are_balanced() {
        let task = SyntheticTask::make(5, &tiny()).unwrap();
        let hist = task.class_histogram(Split::Eval, 4000).unwrap();
        for h in hist {
            assert!(h as f64 / 4000.0 > 0.1, "{h}");
        }
    }

    #[test]
    fn splits_differ() {
        let task = SyntheticTask::make(1, &tiny()).unwrap();
        let a: Tensor<f64> = task.input(Split::Train, 0);
        let b: Tensor<f64> = task.input(Split::Eval, 0);
        assert!(!a.bit_eq(&b));
        assert!(a.bit_eq(&task.input(Split::Train, 0)));
    }

    #[test]
    fn degenerate_teacher_is_rejected() {
        let base = SyntheticTask::make(1, &tiny()).unwrap();
        let mut teacher = base.teacher().clone();
        teacher.backbone.head_bias = Tensor::from_f64(&[4], &[1e6, 0.0, 0.0, 0.0]).unwrap();
        let task = SyntheticTask::with_teacher(1, &tiny(), teacher);
        let err = task.check_balance(500).unwrap_err();
        assert!(err.to_string().contains("another seed"), "{err}");
    }
}
