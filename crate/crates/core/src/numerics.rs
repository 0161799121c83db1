//! Dense `f64` tensors, a seeded generator, and a central-difference
//! gradient checker.

use rand::seq::{index, SliceRandom};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Row-major dense tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("dims must be positive, got {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} hold {expected} values but {} were given",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Vec<usize>, value: f64) -> Result<Self> {
        let len = dims.iter().product();
        Self::new(dims, vec![value; len])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Size of the trailing axis.
    pub fn last_dim(&self) -> usize {
        *self.dims.last().expect("tensor has at least one axis")
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        ensure_same_dims(self, other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

pub(crate) fn ensure_same_dims(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!(
            "dimension mismatch: {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

impl ElementwiseOp {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
        }
    }
}

pub fn elementwise(op: ElementwiseOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure_same_dims(a, b)?;
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| op.apply(x, y))
        .collect();
    Ok(Tensor {
        dims: a.dims.clone(),
        values,
    })
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Precondition(format!(
            "step size must be positive, got {h}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let plus = f(&probe);
        probe.values[i] = orig - h;
        let minus = f(&probe);
        probe.values[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "function is not finite near coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(Tensor {
        dims: x.dims.clone(),
        values: grad,
    })
}

/// Seeded generator backed by ChaCha8, whose output stream is fixed by the
/// seed on every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `[0, n)`, in draw order.
    pub fn distinct(&mut self, n: usize, amount: usize) -> Vec<usize> {
        index::sample(&mut self.inner, n, amount).into_vec()
    }

    /// Independent generator derived from this one's stream.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.inner.random::<u64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(values: &[f64]) -> Tensor {
        Tensor::new(vec![values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn add_two_vectors() {
        let out = elementwise(ElementwiseOp::Add, &t(&[1.0, 2.0]), &t(&[3.0, 4.0])).unwrap();
        assert_eq!(out.values(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_by_zeros_and_sub_self() {
        let x = t(&[1.5, -2.0, 7.0]);
        let zeros = Tensor::zeros(vec![3]).unwrap();
        assert_eq!(elementwise(ElementwiseOp::Mul, &x, &zeros).unwrap(), zeros);
        assert_eq!(elementwise(ElementwiseOp::Sub, &x, &x).unwrap(), zeros);
    }

    #[test]
    fn mismatched_dims_is_shape_error() {
        let a = Tensor::zeros(vec![2, 3]).unwrap();
        let b = Tensor::zeros(vec![3, 2]).unwrap();
        assert!(matches!(
            elementwise(ElementwiseOp::Add, &a, &b),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn tensor_rejects_wrong_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn finite_diff_of_sum_of_squares() {
        let x = t(&[1.0, 2.0]);
        let g = finite_diff_grad(|v| v.values().iter().map(|a| a * a).sum(), &x, 1e-5).unwrap();
        assert!((g.values()[0] - 2.0).abs() < 1e-6);
        assert!((g.values()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_of_constant() {
        let x = t(&[0.3, -4.0, 9.0]);
        let g = finite_diff_grad(|_| 42.0, &x, 1e-4).unwrap();
        assert!(g.values().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn finite_diff_rejects_bad_step_and_nan() {
        let x = t(&[1.0]);
        assert!(finite_diff_grad(|_| 0.0, &x, 0.0).is_err());
        assert!(matches!(
            finite_diff_grad(|_| f64::NAN, &x, 1e-3),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn rng_is_reproducible() {
        let mut a = Rng::new(99);
        let mut b = Rng::new(99);
        let xs: Vec<u64> = (0..32).map(|_| a.uniform().to_bits()).collect();
        let ys: Vec<u64> = (0..32).map(|_| b.uniform().to_bits()).collect();
        assert_eq!(xs, ys);
        let mut c = Rng::new(100);
        assert_ne!(xs[0], c.uniform().to_bits());
    }

    #[test]
    fn rng_distinct_indices() {
        let mut rng = Rng::new(3);
        let mut picks = rng.distinct(10, 4);
        picks.sort_unstable();
        picks.dedup();
        assert_eq!(picks.len(), 4);
        assert!(picks.iter().all(|&i| i < 10));
    }
}
