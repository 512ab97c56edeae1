use serde::{Deserialize, Serialize};

use super::{Matrix, Rng};
use crate::error::{Error, Result};

/// A trainable matrix paired with its gradient buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    value: Matrix,
    #[serde(skip, default)]
    grad: Option<Matrix>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        ParamTensor {
            name: name.into(),
            value,
            grad: None,
        }
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Matrix {
        &mut self.value
    }

    /// Gradient buffer, lazily allocated with the value's shape.
    pub fn grad(&mut self) -> &mut Matrix {
        let (r, c) = self.value.shape();
        self.grad.get_or_insert_with(|| Matrix::zeros(r, c))
    }

    pub fn grad_ref(&self) -> Option<&Matrix> {
        self.grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    /// Adds `delta` into the gradient buffer.
    pub fn accumulate(&mut self, delta: &Matrix) -> Result<()> {
        self.grad().axpy(1.0, delta)
    }
}

/// Anything that owns an ordered set of parameter tensors.
pub trait Parameterized {
    fn tensors(&self) -> Vec<&ParamTensor>;
    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.value().data().len()).sum()
    }
}

impl Parameterized for Vec<ParamTensor> {
    fn tensors(&self) -> Vec<&ParamTensor> {
        self.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.iter_mut().collect()
    }
}

/// `fan_in x fan_out` matrix with entries uniform on `[-a, a]`,
/// `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Matrix> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::dim(
            "glorot_init",
            format!("fan_in={fan_in}"),
            format!("fan_out={fan_out}"),
        ));
    }
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform_range(-a, a)).collect();
    Matrix::from_vec(fan_in, fan_out, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bound_is_one_for_3x3() {
        let m = glorot_init(3, 3, &mut Rng::new(5)).unwrap();
        assert_eq!(m.shape(), (3, 3));
        assert!(m.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn glorot_variance() {
        // Var(U[-a, a]) = a^2 / 3 = 2 / (fan_in + fan_out)
        let mut rng = Rng::new(11);
        let mut draws = Vec::new();
        for _ in 0..4 {
            draws.extend_from_slice(glorot_init(50, 50, &mut rng).unwrap().data());
        }
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(draws.len() >= 10_000);
        assert!((var - 0.02).abs() < 0.002, "variance {var}");
    }

    #[test]
    fn glorot_deterministic() {
        let a = glorot_init(4, 7, &mut Rng::new(1)).unwrap();
        let b = glorot_init(4, 7, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn glorot_rejects_zero() {
        assert!(glorot_init(0, 3, &mut Rng::new(1)).is_err());
        assert!(glorot_init(3, 0, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn grad_buffer_tracks_value_shape() {
        let mut p = ParamTensor::new("w", Matrix::zeros(2, 5));
        assert_eq!(p.grad().shape(), (2, 5));
        assert!(p.accumulate(&Matrix::zeros(5, 2)).is_err());
    }
}
