//! Gradient-precision instrumentation: the minimal-tolerance error map,
//! reconstruction error, and a numeric check of the module Jacobian
//! determinant.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_traits::Float;

use crate::blocks::{Backbone, FBlock, NetConfig};
use crate::numerics::{Element, Precision, Prng, Tensor};
use crate::revcore::{reverse_stage, stage_forward, Coefficients, DrrNetwork, Mode};
use crate::{Error, Result};

/// Smallest decade on the tolerance ladder.
pub const LADDER_FLOOR: i32 = -12;
/// Largest decade on the tolerance ladder.
pub const LADDER_CEIL: i32 = -1;
pub const DEFAULT_RTOL: f64 = 1e-5;

/// A rung of the `10⁻¹² … 10⁻¹` ladder, or the sentinel above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MinAtol {
    Decade(i32),
    AboveLadder,
}

impl MinAtol {
    pub fn value(self) -> f64 {
        match self {
            MinAtol::Decade(e) => Float::powi(10.0f64, e),
            MinAtol::AboveLadder => f64::INFINITY,
        }
    }

    pub fn is_floor(self) -> bool {
        self == MinAtol::Decade(LADDER_FLOOR)
    }
}

impl Ord for MinAtol {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (MinAtol::Decade(a), MinAtol::Decade(b)) => a.cmp(b),
            (MinAtol::Decade(_), MinAtol::AboveLadder) => Ordering::Less,
            (MinAtol::AboveLadder, MinAtol::Decade(_)) => Ordering::Greater,
            (MinAtol::AboveLadder, MinAtol::AboveLadder) => Ordering::Equal,
        }
    }
}

impl PartialOrd for MinAtol {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn pairs<'a, T: Element>(
    a: &[&'a Tensor<T>],
    b: &[&'a Tensor<T>],
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if a.len() != b.len() {
        return Err(Error::shape("gradient sets", &[a.len()], &[b.len()]));
    }
    for (x, y) in a.iter().zip(b) {
        x.same_shape(y, "gradient sets")?;
    }
    let a: Vec<&'a Tensor<T>> = a.to_vec();
    let b: Vec<&'a Tensor<T>> = b.to_vec();
    Ok(a.into_iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(u, v)| (u.as_f64(), v.as_f64()))))
}

/// `|a − b| ≤ atol + rtol·|b|` for every element; NaN never passes.
pub fn allclose<T: Element>(
    a: &[&Tensor<T>],
    b: &[&Tensor<T>],
    atol: f64,
    rtol: f64,
) -> Result<bool> {
    Ok(pairs(a, b)?.all(|(u, v)| (u - v).abs() <= atol + rtol * v.abs()))
}

/// Smallest ladder tolerance at which `allclose(a, b, atol, rtol)` holds.
pub fn min_atol<T: Element>(a: &[&Tensor<T>], b: &[&Tensor<T>], rtol: f64) -> Result<MinAtol> {
    for e in LADDER_FLOOR..=LADDER_CEIL {
        if allclose(a, b, Float::powi(10.0f64, e), rtol)? {
            return Ok(MinAtol::Decade(e));
        }
    }
    Ok(MinAtol::AboveLadder)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub min_atol: MinAtol,
    pub max_abs_err: f64,
    /// Largest `|a − b| / |b|` over elements with `b ≠ 0`.
    pub max_rel_err: f64,
    /// False when either gradient set held a non-finite value or the
    /// reconstruction failed outright.
    pub finite: bool,
}

pub fn error_stats<T: Element>(a: &[&Tensor<T>], b: &[&Tensor<T>], rtol: f64) -> Result<ErrorStats> {
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut finite = true;
    for (u, v) in pairs(a, b)? {
        if !u.is_finite() || !v.is_finite() {
            finite = false;
            continue;
        }
        let d = (u - v).abs();
        max_abs = max_abs.max(d);
        if v != 0.0 {
            max_rel = max_rel.max(d / v.abs());
        }
    }
    Ok(ErrorStats {
        min_atol: min_atol(a, b, rtol)?,
        max_abs_err: if finite { max_abs } else { f64::INFINITY },
        max_rel_err: if finite { max_rel } else { f64::INFINITY },
        finite,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorCell {
    pub alpha: f64,
    pub beta: f64,
    pub stats: ErrorStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapMeta {
    pub seed: u64,
    pub precision: Precision,
    pub config_digest: u64,
}

/// Minimal tolerances over an `(α, β)` grid. Cells are stored α-major:
/// index `i * beta_grid.len() + j` is `(alpha_grid[i], beta_grid[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub cells: Vec<ErrorCell>,
    pub meta: MapMeta,
}

impl ErrorMap {
    pub fn cell(&self, alpha: f64, beta: f64) -> Option<&ErrorCell> {
        let i = self.alpha_grid.iter().position(|&a| (a - alpha).abs() < 1e-9)?;
        let j = self.beta_grid.iter().position(|&b| (b - beta).abs() < 1e-9)?;
        self.cells.get(i * self.beta_grid.len() + j)
    }

    /// Lower median of the cell tolerances.
    pub fn median(&self) -> MinAtol {
        let mut v: Vec<MinAtol> = self.cells.iter().map(|c| c.stats.min_atol).collect();
        v.sort();
        v[(v.len() - 1) / 2]
    }
}

/// `start, start + step, …` up to `end` inclusive, rounded to kill drift.
pub fn grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || end < start {
        return Err(Error::Schedule(alloc::format!(
            "bad grid {start}:{end}:{step}"
        )));
    }
    let n = Float::round((end - start) / step) as usize;
    Ok((0..=n)
        .map(|k| Float::round((start + k as f64 * step) * 1e9) / 1e9)
        .collect())
}

pub fn default_alpha_grid() -> Vec<f64> {
    grid(0.0, 1.0, 0.1).expect("static grid")
}

pub fn default_beta_grid() -> Vec<f64> {
    grid(0.1, 1.0, 0.1).expect("static grid")
}

/// Shared state for computing error-map cells in any order.
///
/// Parameters are drawn once from `(seed, "theta")`; cell `k` draws its input
/// from `(seed, "cell-input", k)`. Cells are therefore independent of the
/// order (or thread) they are evaluated in.
#[derive(Debug, Clone)]
pub struct ErrorMapPlan<T> {
    pub config: NetConfig,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub rtol: f64,
    pub seed: u64,
    theta: Backbone<T>,
}

impl<T: Element> ErrorMapPlan<T> {
    pub fn new(
        config: &NetConfig,
        alpha_grid: Vec<f64>,
        beta_grid: Vec<f64>,
        rtol: f64,
        seed: u64,
    ) -> Result<Self> {
        if alpha_grid.is_empty() || beta_grid.is_empty() {
            return Err(Error::Schedule("empty coefficient grid".into()));
        }
        for &b in &beta_grid {
            Coefficients::new(0.0, b).validate_reversible()?;
        }
        for &a in &alpha_grid {
            Coefficients::new(a, 1.0).validate()?;
        }
        let theta = Backbone::random(config, &mut Prng::new(seed).child("theta"))?;
        Ok(Self {
            config: config.clone(),
            alpha_grid,
            beta_grid,
            rtol,
            seed,
            theta,
        })
    }

    pub fn len(&self) -> usize {
        self.alpha_grid.len() * self.beta_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coefficients(&self, index: usize) -> Coefficients {
        let nb = self.beta_grid.len();
        Coefficients::new(self.alpha_grid[index / nb], self.beta_grid[index % nb])
    }

    /// Runs cached and reconstruction-based backprop on the same input with
    /// loss `sum(logits)` and compares all parameter and input gradients.
    pub fn cell(&self, index: usize) -> Result<ErrorCell> {
        let c = self.coefficients(index);
        let mut rng = Prng::new(self.seed).child_indexed("cell-input", index as u64);
        let x0 = Tensor::<T>::randn(&self.config.input_shape(), 1.0, &mut rng);
        let mut net = DrrNetwork::new(self.theta.clone(), c, Mode::Cached)?;
        let ones = Tensor::full(&[1, self.config.classes], T::one());

        let trace = net.forward_cached(&x0)?;
        let (cached, cached_x) = net.backprop_cached(trace, &ones)?;
        let reversible = net
            .forward_reversible(&x0)
            .and_then(|trace| net.backprop_reversible(trace, &ones));
        let stats = match reversible {
            Ok((grads, gx)) => {
                let mut a = grads.tensors();
                a.push(&gx);
                let mut b = cached.tensors();
                b.push(&cached_x);
                error_stats(&a, &b, self.rtol)?
            }
            Err(Error::NonFinite(_)) => ErrorStats {
                min_atol: MinAtol::AboveLadder,
                max_abs_err: f64::INFINITY,
                max_rel_err: f64::INFINITY,
                finite: false,
            },
            Err(e) => return Err(e),
        };
        Ok(ErrorCell {
            alpha: c.alpha,
            beta: c.beta,
            stats,
        })
    }

    pub fn finish(&self, cells: Vec<ErrorCell>) -> Result<ErrorMap> {
        if cells.len() != self.len() {
            return Err(Error::shape("error map", &[cells.len()], &[self.len()]));
        }
        Ok(ErrorMap {
            alpha_grid: self.alpha_grid.clone(),
            beta_grid: self.beta_grid.clone(),
            cells,
            meta: MapMeta {
                seed: self.seed,
                precision: T::PRECISION,
                config_digest: self.config.digest(),
            },
        })
    }
}

/// Evaluates every cell of the map, in index order.
pub fn gradient_error_map<T: Element>(
    config: &NetConfig,
    alpha_grid: Vec<f64>,
    beta_grid: Vec<f64>,
    rtol: f64,
    seed: u64,
) -> Result<ErrorMap> {
    let plan = ErrorMapPlan::<T>::new(config, alpha_grid, beta_grid, rtol, seed)?;
    let cells = (0..plan.len()).map(|k| plan.cell(k)).collect::<Result<Vec<_>>>()?;
    plan.finish(cells)
}

/// Largest elementwise gap between forward activations and their
/// reconstruction from stage outputs, over all inputs, stages and modules.
pub fn reconstruction_error<T: Element>(net: &DrrNetwork<T>, inputs: &[Tensor<T>]) -> Result<f64> {
    let c = net.coefficients().validate_reversible()?;
    let mut worst = 0.0f64;
    for x0 in inputs {
        let mut x = x0.clone();
        for (s, stage) in net.backbone.stages.iter().enumerate() {
            let fwd = stage_forward(&stage.blocks, c, &x)?;
            let (xn, yn) = fwd.output();
            let back = reverse_stage(&stage.blocks, c, xn, yn)?;
            let err = back.max_abs_diff(&fwd)?;
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            x = net.backbone.transition_forward(s, xn)?;
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeterminantCheck {
    pub numeric: f64,
    pub analytic: f64,
}

impl DeterminantCheck {
    pub fn rel_error(&self) -> f64 {
        (self.numeric - self.analytic).abs() / self.analytic.abs()
    }
}

const JACOBIAN_STEP: f64 = 1e-6;

/// Numeric determinant of `(x_{i-1}, y_{i-1}) ↦ (y_i, x_i)` at `x_{i-1} = x`,
/// `y_{i-1} = β·x`, by central differences, against the analytic `β^d`.
pub fn jacobian_det_check(
    block: &FBlock<f64>,
    coefficients: Coefficients,
    x: &Tensor<f64>,
) -> Result<DeterminantCheck> {
    let c = coefficients.validate()?;
    let d = x.len();
    let y = x.scale(c.beta);
    let module = |z: &[f64]| -> Result<Vec<f64>> {
        let xp = Tensor::from_vec(x.shape(), z[..d].to_vec())?;
        let yp = Tensor::from_vec(x.shape(), z[d..].to_vec())?;
        let f = block.forward(&xp)?;
        let xi = f.zip_map(&xp, "g_apply", |fv, xv| fv + c.alpha * xv)?.add(&yp)?;
        let yi = xp.scale(c.beta);
        let mut out = yi.into_data();
        out.extend(xi.into_data());
        Ok(out)
    };
    let n = 2 * d;
    let mut z: Vec<f64> = x.data().iter().chain(y.data()).copied().collect();
    // column-major fill: column k is ∂O/∂z_k
    let mut jac = vec![0.0; n * n];
    for k in 0..n {
        let orig = z[k];
        z[k] = orig + JACOBIAN_STEP;
        let up = module(&z)?;
        z[k] = orig - JACOBIAN_STEP;
        let down = module(&z)?;
        z[k] = orig;
        for r in 0..n {
            jac[r * n + k] = (up[r] - down[r]) / (2.0 * JACOBIAN_STEP);
        }
    }
    let numeric = determinant(&mut jac, n);
    let analytic = Float::powi(c.beta, d as i32);
    if numeric == 0.0 && c.beta != 0.0 {
        return Err(Error::SingularJacobian {
            det: numeric,
            beta: c.beta,
        });
    }
    Ok(DeterminantCheck { numeric, analytic })
}

/// Determinant by LU decomposition with partial pivoting; destroys `m`.
fn determinant(m: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a * n + col].abs().total_cmp(&m[b * n + col].abs()))
            .unwrap();
        if m[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(pivot * n + k, col * n + k);
            }
            det = -det;
        }
        let p = m[col * n + col];
        det *= p;
        for r in col + 1..n {
            let factor = m[r * n + col] / p;
            for k in col..n {
                m[r * n + k] -= factor * m[col * n + k];
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::Pattern;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    #[test]
    fn identical_sets_hit_the_floor() {
        let a = t(&[1.0, -2.0, 3.0]);
        assert_eq!(min_atol(&[&a], &[&a], 1e-5).unwrap(), MinAtol::Decade(-12));
    }

    #[test]
    fn constructed_offset() {
        let a = t(&[0.0, 0.0, 1e-30]);
        let b = a.map(|v| v + 5e-9);
        assert_eq!(min_atol(&[&a], &[&b], 1e-5).unwrap(), MinAtol::Decade(-8));
    }

    #[test]
    fn sentinel_and_nan() {
        let a = t(&[0.0]);
        assert_eq!(min_atol(&[&a], &[&t(&[1.0])], 1e-5).unwrap(), MinAtol::AboveLadder);
        assert_eq!(min_atol(&[&a], &[&t(&[f64::NAN])], 1e-5).unwrap(), MinAtol::AboveLadder);
        let s = error_stats(&[&a], &[&t(&[f64::NAN])], 1e-5).unwrap();
        assert!(!s.finite);
    }

    #[test]
    fn min_atol_is_tight() {
        let mut rng = Prng::new(2);
        for _ in 0..50 {
            let a = Tensor::<f64>::randn(&[20], 1.0, &mut rng);
            let scale = Float::powi(10.0f64, -(rng.below(12) as i32));
            let noise = Tensor::<f64>::randn(&[20], scale, &mut rng);
            let b = a.add(&noise).unwrap();
            let m = min_atol(&[&a], &[&b], 1e-5).unwrap();
            if let MinAtol::Decade(e) = m {
                assert!(allclose(&[&a], &[&b], m.value(), 1e-5).unwrap());
                if !m.is_floor() {
                    let below = Float::powi(10.0f64, e - 1);
                    assert!(!allclose(&[&a], &[&b], below, 1e-5).unwrap());
                }
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(min_atol(&[&t(&[1.0])], &[&t(&[1.0, 2.0])], 1e-5).is_err());
        assert!(min_atol::<f64>(&[&t(&[1.0])], &[], 1e-5).is_err());
    }

    #[test]
    fn ladder_ordering() {
        assert!(MinAtol::Decade(-12) < MinAtol::Decade(-3));
        assert!(MinAtol::Decade(-1) < MinAtol::AboveLadder);
    }

    #[test]
    fn grids() {
        let g = default_alpha_grid();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.3);
        assert_eq!(default_beta_grid().first(), Some(&0.1));
        assert!(grid(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn determinant_of_known_matrices() {
        let mut m = [2.0, 0.0, 0.0, 3.0];
        assert_eq!(determinant(&mut m, 2), 6.0);
        let mut m = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(determinant(&mut m, 2), -1.0);
        let mut m = [1.0, 2.0, 2.0, 4.0];
        assert_eq!(determinant(&mut m, 2), 0.0);
    }

    #[test]
    fn jacobian_scalar_and_cube() {
        let zero = FBlock::<f64>::mlp_zeros(1, 2);
        let x = Tensor::from_f64(&[1, 1], &[0.7]).unwrap();
        let r = jacobian_det_check(&zero, Coefficients::new(0.3, 0.5), &x).unwrap();
        assert!((r.numeric - 0.5).abs() < 1e-8);
        let zero = FBlock::<f64>::mlp_zeros(3, 4);
        let x = Tensor::from_f64(&[1, 3], &[0.1, -0.4, 2.0]).unwrap();
        let r = jacobian_det_check(&zero, Coefficients::new(0.3, 0.5), &x).unwrap();
        assert_eq!(r.analytic, 0.125);
        assert!(r.rel_error() < 1e-4);
    }

    #[test]
    fn jacobian_ignores_f() {
        let mut rng = Prng::new(5);
        let block = FBlock::<f64>::mlp_random(3, 5, &mut rng);
        let x = Tensor::randn(&[1, 3], 1.0, &mut rng);
        for alpha in [0.0, 0.5, 1.0] {
            let r = jacobian_det_check(&block, Coefficients::new(alpha, 0.5), &x).unwrap();
            assert!(r.rel_error() < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn map_cells_are_order_independent() {
        let cfg = NetConfig {
            width: 4,
            hidden: 8,
            seq_len: 3,
            stages: 1,
            depth_per_stage: 4,
            pattern: Pattern::Interleaved,
            classes: 3,
        };
        let plan = ErrorMapPlan::<f32>::new(&cfg, vec![0.0, 1.0], vec![0.5, 1.0], 1e-5, 9).unwrap();
        let forward: Vec<_> = (0..plan.len()).map(|k| plan.cell(k).unwrap()).collect();
        let mut backward: Vec<_> = (0..plan.len()).rev().map(|k| (k, plan.cell(k).unwrap())).collect();
        backward.sort_by_key(|(k, _)| *k);
        let backward: Vec<_> = backward.into_iter().map(|(_, c)| c).collect();
        assert_eq!(plan.finish(forward).unwrap(), plan.finish(backward).unwrap());
    }

    #[test]
    fn zero_beta_grid_is_rejected() {
        let cfg = NetConfig::default();
        assert!(ErrorMapPlan::<f32>::new(&cfg, vec![0.0], vec![0.0, 0.5], 1e-5, 1).is_err());
    }
}
