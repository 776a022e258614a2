use rand::{Rng, RngCore};

use super::activation::{dropout_mask, masked_softmax};
use super::param::join;
use super::{Linear, Matrix, Module, Parameter};
use crate::error::{Error, Result};

/// Multi-head scaled dot-product self-attention over a batch of equal-length
/// sequences stacked row-wise (`batch * seq_len` rows).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadSelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    input: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    seq_len: usize,
    /// Softmax weights, indexed `((b * heads + h) * T + i) * T + j`.
    weights: Vec<f64>,
    drop: Option<Vec<f64>>,
    context: Matrix,
}

impl AttentionCache {
    /// Post-softmax (pre-dropout) weights for sequence `b`, head `h`, query `i`.
    pub fn weights_row(&self, heads: usize, b: usize, h: usize, i: usize) -> &[f64] {
        let t = self.seq_len;
        let start = ((b * heads + h) * t + i) * t;
        &self.weights[start..start + t]
    }
}

impl MultiHeadSelfAttention {
    pub fn new(dim: usize, heads: usize, dropout: f64, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("model width {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            output: Linear::new(dim, dim, rng),
            heads,
            dropout,
        })
    }

    pub fn dim(&self) -> usize {
        self.query.input_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    /// `key_mask[r]` false excludes row `r` as a key for its own sequence.
    /// Masked rows still produce (unused) outputs as queries.
    pub fn forward(
        &self,
        x: &Matrix,
        seq_len: usize,
        key_mask: &[bool],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Matrix, AttentionCache)> {
        let rows = x.rows();
        if seq_len == 0 || rows % seq_len != 0 {
            return Err(Error::Shape(format!("{rows} rows do not split into sequences of {seq_len}")));
        }
        if key_mask.len() != rows {
            return Err(Error::LengthMismatch { expected: rows, actual: key_mask.len() });
        }
        let (t, hd, heads) = (seq_len, self.head_dim(), self.heads);
        let batch = rows / t;
        let scale = 1.0 / (hd as f64).sqrt();
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;

        let mut weights = vec![0.0; batch * heads * t * t];
        let mut logits = vec![0.0; t];
        for b in 0..batch {
            let keep = &key_mask[b * t..(b + 1) * t];
            for h in 0..heads {
                let cols = h * hd..(h + 1) * hd;
                for i in 0..t {
                    let qi = &q.row(b * t + i)[cols.clone()];
                    for (j, l) in logits.iter_mut().enumerate() {
                        let kj = &k.row(b * t + j)[cols.clone()];
                        *l = scale * qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>();
                    }
                    let w = masked_softmax(&logits, keep).ok_or(Error::EmptyKeySet)?;
                    let start = ((b * heads + h) * t + i) * t;
                    weights[start..start + t].copy_from_slice(&w);
                }
            }
        }
        let drop = dropout_mask(weights.len(), self.dropout, rng);
        let effective: Vec<f64> = match &drop {
            Some(m) => weights.iter().zip(m).map(|(w, s)| w * s).collect(),
            None => weights.clone(),
        };

        let mut context = Matrix::zeros(rows, self.dim());
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..t {
                    let start = ((b * heads + h) * t + i) * t;
                    let w = &effective[start..start + t];
                    let out = &mut context.row_mut(b * t + i)[h * hd..(h + 1) * hd];
                    for (j, &wj) in w.iter().enumerate() {
                        if wj == 0.0 {
                            continue;
                        }
                        let vj = &v.row(b * t + j)[h * hd..(h + 1) * hd];
                        for (o, vv) in out.iter_mut().zip(vj) {
                            *o += wj * vv;
                        }
                    }
                }
            }
        }
        let out = self.output.forward(&context)?;
        Ok((out, AttentionCache { input: x.clone(), q, k, v, seq_len, weights, drop, context }))
    }

    pub fn backward(&mut self, cache: &AttentionCache, dy: &Matrix) -> Matrix {
        let t = cache.seq_len;
        let (hd, heads) = (self.head_dim(), self.heads);
        let rows = cache.input.rows();
        let batch = rows / t;
        let scale = 1.0 / (hd as f64).sqrt();
        let dctx = self.output.backward(&cache.context, dy);

        let mut dq = Matrix::zeros(rows, self.dim());
        let mut dk = Matrix::zeros(rows, self.dim());
        let mut dv = Matrix::zeros(rows, self.dim());
        let mut dw = vec![0.0; t];
        for b in 0..batch {
            for h in 0..heads {
                let cols = h * hd..(h + 1) * hd;
                for i in 0..t {
                    let start = ((b * heads + h) * t + i) * t;
                    let w = &cache.weights[start..start + t];
                    let drop = cache.drop.as_ref().map(|m| &m[start..start + t]);
                    let gi = &dctx.row(b * t + i)[cols.clone()];
                    for j in 0..t {
                        let keep = drop.map_or(1.0, |m| m[j]);
                        let vj = &cache.v.row(b * t + j)[cols.clone()];
                        dw[j] = keep * gi.iter().zip(vj).map(|(a, c)| a * c).sum::<f64>();
                        let we = w[j] * keep;
                        if we != 0.0 {
                            let dvj = &mut dv.row_mut(b * t + j)[cols.clone()];
                            for (o, g) in dvj.iter_mut().zip(gi) {
                                *o += we * g;
                            }
                        }
                    }
                    let inner: f64 = w.iter().zip(&dw).map(|(a, c)| a * c).sum();
                    for j in 0..t {
                        let ds = w[j] * (dw[j] - inner) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = cache.k.row(b * t + j)[cols.clone()].to_vec();
                        let qi = cache.q.row(b * t + i)[cols.clone()].to_vec();
                        for (o, kv) in dq.row_mut(b * t + i)[cols.clone()].iter_mut().zip(&kj) {
                            *o += ds * kv;
                        }
                        for (o, qv) in dk.row_mut(b * t + j)[cols.clone()].iter_mut().zip(&qi) {
                            *o += ds * qv;
                        }
                    }
                }
            }
        }
        let mut dx = self.query.backward(&cache.input, &dq);
        dx.add_assign(&self.key.backward(&cache.input, &dk)).expect("same shape");
        dx.add_assign(&self.value.backward(&cache.input, &dv)).expect("same shape");
        dx
    }
}

impl Module for MultiHeadSelfAttention {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        self.query.visit_params(&join(prefix, "query"), f);
        self.key.visit_params(&join(prefix, "key"), f);
        self.value.visit_params(&join(prefix, "value"), f);
        self.output.visit_params(&join(prefix, "output"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.query.visit_params_mut(&join(prefix, "query"), f);
        self.key.visit_params_mut(&join(prefix, "key"), f);
        self.value.visit_params_mut(&join(prefix, "value"), f);
        self.output.visit_params_mut(&join(prefix, "output"), f);
    }
}
