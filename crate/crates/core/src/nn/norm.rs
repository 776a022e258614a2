use super::param::join;
use super::{Matrix, Module, Parameter};
use crate::error::{Error, Result};

const EPS: f64 = 1e-5;

/// Row-wise layer normalization with learnable gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    /// Identity-initialized: gain 1, bias 0.
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Parameter::new(Matrix::filled(1, dim, 1.0)),
            beta: Parameter::zeros(1, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.value.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerNormCache)> {
        let d = self.dim();
        if x.cols() != d {
            return Err(Error::Shape(format!("layer norm over {d} features, got {}", x.cols())));
        }
        let mut normalized = Matrix::zeros(x.rows(), d);
        let mut out = Matrix::zeros(x.rows(), d);
        let mut inv_std = Vec::with_capacity(x.rows());
        let g = self.gamma.value.data();
        let b = self.beta.value.data();
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std.push(is);
            let nrow = normalized.row_mut(r);
            for (n, v) in nrow.iter_mut().zip(row) {
                *n = (v - mean) * is;
            }
            let nrow = normalized.row(r);
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = nrow[j] * g[j] + b[j];
            }
        }
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Matrix) -> Matrix {
        let d = self.dim();
        let mut dx = Matrix::zeros(dy.rows(), d);
        let g = self.gamma.value.data().to_vec();
        {
            let gg = self.gamma.grad.data_mut();
            for r in 0..dy.rows() {
                for ((acc, dv), n) in gg.iter_mut().zip(dy.row(r)).zip(cache.normalized.row(r)) {
                    *acc += dv * n;
                }
            }
        }
        {
            let gb = self.beta.grad.data_mut();
            for r in 0..dy.rows() {
                for (acc, dv) in gb.iter_mut().zip(dy.row(r)) {
                    *acc += dv;
                }
            }
        }
        let mut dn = vec![0.0; d];
        for r in 0..dy.rows() {
            let n = cache.normalized.row(r);
            for (j, v) in dn.iter_mut().enumerate() {
                *v = dy.get(r, j) * g[j];
            }
            let sum_dn: f64 = dn.iter().sum();
            let sum_dn_n: f64 = dn.iter().zip(n).map(|(a, b)| a * b).sum();
            let scale = cache.inv_std[r] / d as f64;
            for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                *o = scale * (d as f64 * dn[j] - sum_dn - n[j] * sum_dn_n);
            }
        }
        dx
    }
}

impl Module for LayerNorm {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}
