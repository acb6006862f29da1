//! Primitive operations and their vector-Jacobian products.

use alloc::vec;

use super::{Element, Tensor};
use crate::{Error, Result};

/// `a · b` for `a: [m, k]`, `b: [k, n]`.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `aᵀ · b` without materialising the transpose.
pub fn matmul_tn<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0] {
        return Err(Error::shape("matmul_tn", a.shape(), b.shape()));
    }
    let (k, m, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for p in 0..k {
        let arow = &ad[p * m..(p + 1) * m];
        let brow = &bd[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `a · bᵀ` without materialising the transpose.
pub fn matmul_nt<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::shape("matmul_nt", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[0]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).fold(T::zero(), |s, (&x, &y)| s + x * y);
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// Given upstream `g = ∂L/∂(a·b)`, returns `(g·bᵀ, aᵀ·g)`.
pub fn matmul_vjp<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let expected = [a.shape()[0], b.shape()[1]];
    g.ensure_shape("matmul_vjp", &expected)?;
    Ok((matmul_nt(g, b)?, matmul_tn(a, g)?))
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

/// Tanh approximation of GELU: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
#[inline]
pub fn gelu<T: Element>(x: T) -> T {
    let c = T::of(SQRT_2_OVER_PI);
    let k = T::of(GELU_CUBIC);
    let half = T::of(0.5);
    let u = c * (x + k * x * x * x);
    half * x * (T::one() + u.tanh())
}

#[inline]
pub fn gelu_derivative<T: Element>(x: T) -> T {
    let c = T::of(SQRT_2_OVER_PI);
    let k = T::of(GELU_CUBIC);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
}

/// Elementwise kernels with closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Gelu,
    Scale(f64),
    AddConst(f64),
}

impl Unary {
    pub fn apply<T: Element>(self, x: T) -> T {
        match self {
            Unary::Gelu => gelu(x),
            Unary::Scale(c) => x * T::of(c),
            Unary::AddConst(c) => x + T::of(c),
        }
    }

    pub fn derivative<T: Element>(self, x: T) -> T {
        match self {
            Unary::Gelu => gelu_derivative(x),
            Unary::Scale(c) => T::of(c),
            Unary::AddConst(_) => T::one(),
        }
    }

    pub fn forward<T: Element>(self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = x.map(|v| self.apply(v));
        y.check_finite("map_unary")?;
        Ok(y)
    }

    /// `g ⊙ f'(x)`.
    pub fn vjp<T: Element>(self, x: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        x.zip_map(g, "map_unary_vjp", |xv, gv| gv * self.derivative(xv))
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 {
        return Err(Error::shape("softmax_rows", x.shape(), &[0, 0]));
    }
    let n = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s = s + *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    Ok(out)
}

/// With `y = softmax_rows(x)`: each gradient row is `y ⊙ (g − ⟨g, y⟩)`.
pub fn softmax_rows_vjp<T: Element>(y: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    y.same_shape(g, "softmax_rows_vjp")?;
    let n = y.cols();
    let mut out = g.clone();
    for (orow, yrow) in out.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
        let dot = orow.iter().zip(yrow).fold(T::zero(), |s, (&gv, &yv)| s + gv * yv);
        for (o, &yv) in orow.iter_mut().zip(yrow) {
            *o = yv * (*o - dot);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_grad, Prng};

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let scale = b.max_abs().max(1e-12);
        a.max_abs_diff(b).unwrap() / scale
    }

    #[test]
    fn matmul_hand_values() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 2], &[5., 6., 7., 8.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[19., 22., 43., 50.]);
        let i = Tensor::<f64>::eye(2);
        assert_eq!(matmul(&i, &a).unwrap(), a);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        match matmul(&a, &b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, [2, 3]);
                assert_eq!(right, [2, 3]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = Prng::new(11);
        let a = Tensor::<f64>::randn(&[4, 3], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[4, 5], 1.0, &mut rng);
        let c = Tensor::<f64>::randn(&[6, 3], 1.0, &mut rng);
        let tn = matmul_tn(&a, &b).unwrap();
        let reference = matmul(&a.transpose().unwrap(), &b).unwrap();
        assert!(tn.max_abs_diff(&reference).unwrap() < 1e-14);
        let nt = matmul_nt(&a, &c).unwrap();
        let reference = matmul(&a, &c.transpose().unwrap()).unwrap();
        assert!(nt.max_abs_diff(&reference).unwrap() < 1e-14);
    }

    #[test]
    fn matmul_vjp_matches_finite_differences() {
        let mut rng = Prng::new(5);
        let a = Tensor::<f64>::randn(&[5, 3], 1.0, &mut rng);
        let b = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[5, 4], 1.0, &mut rng);
        let loss = |p: &Tensor<f64>, q: &Tensor<f64>| matmul(p, q).unwrap().mul(&w).unwrap().sum();
        let (ga, gb) = matmul_vjp(&a, &b, &w).unwrap();
        let fa = finite_difference_grad(|x| Ok(loss(x, &b)), &a, 1e-5).unwrap();
        let fb = finite_difference_grad(|x| Ok(loss(&a, x)), &b, 1e-5).unwrap();
        assert!(rel_err(&ga, &fa) < 1e-6);
        assert!(rel_err(&gb, &fb) < 1e-6);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(10.0f64) - 10.0).abs() < 1e-6);
        // 0.5·(1 + tanh(√(2/π)·1.044715)) evaluated with mpmath at 30 digits.
        assert!((gelu(1.0f64) - 0.841_191_990_608_276_7).abs() < 1e-15);
    }

    #[test]
    fn unary_vjps_match_finite_differences() {
        let mut rng = Prng::new(9);
        let x = Tensor::<f64>::randn(&[4, 8], 1.5, &mut rng);
        let g = Tensor::<f64>::randn(&[4, 8], 1.0, &mut rng);
        for k in [Unary::Gelu, Unary::Scale(-0.7), Unary::AddConst(2.0)] {
            let analytic = k.vjp(&x, &g).unwrap();
            let numeric =
                finite_difference_grad(|v| Ok(k.forward(v)?.mul(&g)?.sum()), &x, 1e-5).unwrap();
            assert!(rel_err(&analytic, &numeric) < 1e-5, "{k:?}");
        }
    }

    #[test]
    fn softmax_reference_rows() {
        let y = softmax_rows(&t(&[2, 3], &[2., 2., 2., 1., 2., 3.])).unwrap();
        for v in &y.data()[..3] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // exp(k) / (e + e² + e³), computed directly.
        let expected = [0.090_030_573_170_380_46, 0.244_728_471_054_797_65, 0.665_240_955_774_821_9];
        for (v, e) in y.data()[3..].iter().zip(expected) {
            assert!((v - e).abs() < 1e-15);
        }
        for row in y.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let y = softmax_rows(&t(&[1, 2], &[1000.0, 1000.0])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_vjp_matches_finite_differences() {
        let mut rng = Prng::new(21);
        let x = Tensor::<f64>::randn(&[3, 7], 2.0, &mut rng);
        let g = Tensor::<f64>::randn(&[3, 7], 1.0, &mut rng);
        let y = softmax_rows(&x).unwrap();
        let analytic = softmax_rows_vjp(&y, &g).unwrap();
        let numeric =
            finite_difference_grad(|v| Ok(softmax_rows(v)?.mul(&g)?.sum()), &x, 1e-5).unwrap();
        assert!(rel_err(&analytic, &numeric) < 1e-5);
    }
}
