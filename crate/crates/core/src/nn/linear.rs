use rand::Rng;

use super::matrix::gemm;
use super::param::join;
use super::{Matrix, Module, Parameter};
use crate::error::{Error, Result};

/// Affine map `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    /// Weights and bias uniform in `±1/sqrt(fan_in)`.
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: Parameter::uniform(output, input, bound, rng),
            bias: Parameter::uniform(1, output, bound, rng),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Parameter::zeros(output, input), bias: Parameter::zeros(1, output) }
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias of length {} for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight: Parameter::new(weight), bias: Parameter::new(Matrix::row_vector(&bias)) })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "linear layer expects {} inputs, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let mut y = Matrix::zeros(x.rows(), self.output_dim());
        gemm(x, false, &self.weight.value, true, &mut y, false);
        let b = self.bias.value.data();
        for r in 0..y.rows() {
            for (v, bb) in y.row_mut(r).iter_mut().zip(b) {
                *v += bb;
            }
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Matrix, dy: &Matrix) -> Matrix {
        self.accumulate(x, dy);
        let mut dx = Matrix::zeros(dy.rows(), self.input_dim());
        gemm(dy, false, &self.weight.value, false, &mut dx, false);
        dx
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn accumulate(&mut self, x: &Matrix, dy: &Matrix) {
        gemm(dy, true, x, false, &mut self.weight.grad, true);
        let g = self.bias.grad.data_mut();
        for r in 0..dy.rows() {
            for (gb, d) in g.iter_mut().zip(dy.row(r)) {
                *gb += d;
            }
        }
    }
}

impl Module for Linear {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weight_passes_input_through() {
        let mut l = Linear::zeros(3, 3);
        l.weight.value = Matrix::identity(3);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.5], vec![0.0, 4.0, -1.0]]).unwrap();
        assert_eq!(l.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weight_returns_bias_rows() {
        let l = Linear::from_parts(Matrix::zeros(2, 4), vec![0.5, -1.5]).unwrap();
        let x = Matrix::filled(3, 4, 7.0);
        let y = l.forward(&x).unwrap();
        for r in 0..3 {
            assert_eq!(y.row(r), &[0.5, -1.5]);
        }
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = Linear::new(4, 2, &mut rng);
        let x = Parameter::uniform(3, 4, 1.0, &mut rng).value;
        let y = l.forward(&x).unwrap();
        for i in 0..3 {
            for o in 0..2 {
                let mut s = l.bias.value.get(0, o);
                for k in 0..4 {
                    s += x.get(i, k) * l.weight.value.get(o, k);
                }
                assert!((y.get(i, o) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let l = Linear::zeros(3, 2);
        assert!(l.forward(&Matrix::zeros(1, 4)).is_err());
    }
}
