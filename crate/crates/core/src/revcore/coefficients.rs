use crate::{Error, Result};

/// The `(α, β)` pair shared by every module of the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub alpha: f64,
    pub beta: f64,
}

impl Coefficients {
    /// Reproduces the plain residual network exactly.
    pub const PLAIN: Self = Self::new(1.0, 0.0);
    /// Starting point for finetuning from pretrained parameters.
    pub const VANILLA: Self = Self::new(1.0, 0.1);
    /// Fully reversible: no α shortcut, unit β skip.
    pub const HARD: Self = Self::new(0.0, 1.0);

    pub const fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    /// Both coefficients in `[0, 1]`; valid for cached execution.
    pub fn validate(self) -> Result<Self> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Coefficient {
                name: "alpha",
                value: self.alpha,
                range: "[0, 1]",
            });
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Coefficient {
                name: "beta",
                value: self.beta,
                range: "[0, 1]",
            });
        }
        Ok(self)
    }

    /// Additionally requires `β ≠ 0`.
    pub fn validate_reversible(self) -> Result<Self> {
        self.validate()?;
        if self.beta == 0.0 {
            return Err(Error::Irreversible);
        }
        Ok(self)
    }
}

/// Whether a training step keeps every activation or only stage boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Cached,
    Reversible,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Cached => "cached",
            Mode::Reversible => "reversible",
        }
    }
}
