use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::activation::{dropout_mask, gelu, gelu_derivative, reborrow};
use super::attention::AttentionCache;
use super::norm::LayerNormCache;
use super::param::join;
use super::{LayerNorm, Linear, Matrix, Module, MultiHeadSelfAttention, Parameter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { dim: 768, layers: 4, heads: 8, ffn_dim: 3072, dropout: 0.1 }
    }
}

/// Linear → GELU → Linear, with dropout on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub expand: Linear,
    pub contract: Linear,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    input: Matrix,
    pre_activation: Matrix,
    activated: Matrix,
    drop: Option<Vec<f64>>,
}

impl FeedForward {
    pub fn new(dim: usize, hidden: usize, dropout: f64, rng: &mut impl Rng) -> Self {
        Self { expand: Linear::new(dim, hidden, rng), contract: Linear::new(hidden, dim, rng), dropout }
    }

    pub fn forward(
        &self,
        x: &Matrix,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Matrix, FeedForwardCache)> {
        let pre = self.expand.forward(x)?;
        let mut act = pre.clone();
        act.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
        let mut out = self.contract.forward(&act)?;
        let drop = dropout_mask(out.len(), self.dropout, rng);
        if let Some(m) = &drop {
            out.data_mut().iter_mut().zip(m).for_each(|(v, s)| *v *= s);
        }
        Ok((out, FeedForwardCache { input: x.clone(), pre_activation: pre, activated: act, drop }))
    }

    pub fn backward(&mut self, cache: &FeedForwardCache, dy: &Matrix) -> Matrix {
        let mut dy = dy.clone();
        if let Some(m) = &cache.drop {
            dy.data_mut().iter_mut().zip(m).for_each(|(v, s)| *v *= s);
        }
        let mut dact = self.contract.backward(&cache.activated, &dy);
        dact.data_mut()
            .iter_mut()
            .zip(cache.pre_activation.data())
            .for_each(|(g, x)| *g *= gelu_derivative(*x));
        self.expand.backward(&cache.input, &dact)
    }
}

impl Module for FeedForward {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        self.expand.visit_params(&join(prefix, "expand"), f);
        self.contract.visit_params(&join(prefix, "contract"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.expand.visit_params_mut(&join(prefix, "expand"), f);
        self.contract.visit_params_mut(&join(prefix, "contract"), f);
    }
}

/// Pre-norm encoder layer:
/// `h = x + attn(ln1(x))`, `out = h + ffn(ln2(h))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub norm_attention: LayerNorm,
    pub attention: MultiHeadSelfAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerCache {
    norm_attention: LayerNormCache,
    attention: AttentionCache,
    norm_ffn: LayerNormCache,
    ffn: FeedForwardCache,
}

impl EncoderLayer {
    pub fn new(config: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            norm_attention: LayerNorm::new(config.dim),
            attention: MultiHeadSelfAttention::new(config.dim, config.heads, config.dropout, rng)?,
            norm_ffn: LayerNorm::new(config.dim),
            ffn: FeedForward::new(config.dim, config.ffn_dim, config.dropout, rng),
        })
    }

    pub fn forward(
        &self,
        x: &Matrix,
        seq_len: usize,
        key_mask: &[bool],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Matrix, EncoderLayerCache)> {
        let (n1, c1) = self.norm_attention.forward(x)?;
        let (a, ca) = self.attention.forward(&n1, seq_len, key_mask, reborrow(&mut rng))?;
        let h = x.add(&a)?;
        let (n2, c2) = self.norm_ffn.forward(&h)?;
        let (f, cf) = self.ffn.forward(&n2, rng)?;
        let out = h.add(&f)?;
        Ok((out, EncoderLayerCache { norm_attention: c1, attention: ca, norm_ffn: c2, ffn: cf }))
    }

    pub fn backward(&mut self, cache: &EncoderLayerCache, dy: &Matrix) -> Matrix {
        let dn2 = self.ffn.backward(&cache.ffn, dy);
        let mut dh = self.norm_ffn.backward(&cache.norm_ffn, &dn2);
        dh.add_assign(dy).expect("same shape");
        let dn1 = self.attention.backward(&cache.attention, &dh);
        let mut dx = self.norm_attention.backward(&cache.norm_attention, &dn1);
        dx.add_assign(&dh).expect("same shape");
        dx
    }
}

impl Module for EncoderLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        self.norm_attention.visit_params(&join(prefix, "norm_attention"), f);
        self.attention.visit_params(&join(prefix, "attention"), f);
        self.norm_ffn.visit_params(&join(prefix, "norm_ffn"), f);
        self.ffn.visit_params(&join(prefix, "ffn"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.norm_attention.visit_params_mut(&join(prefix, "norm_attention"), f);
        self.attention.visit_params_mut(&join(prefix, "attention"), f);
        self.norm_ffn.visit_params_mut(&join(prefix, "norm_ffn"), f);
        self.ffn.visit_params_mut(&join(prefix, "ffn"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerEncoder {
    pub layers: Vec<EncoderLayer>,
}

impl TransformerEncoder {
    pub fn new(config: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        let layers = (0..config.layers)
            .map(|_| EncoderLayer::new(config, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(
        &self,
        x: &Matrix,
        seq_len: usize,
        key_mask: &[bool],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Matrix, Vec<EncoderLayerCache>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(&h, seq_len, key_mask, reborrow(&mut rng))?;
            caches.push(cache);
            h = next;
        }
        Ok((h, caches))
    }

    /// Evaluation-mode pass through `layers[from..]`.
    pub fn forward_from(&self, from: usize, x: &Matrix, seq_len: usize, key_mask: &[bool]) -> Result<Matrix> {
        let mut h = x.clone();
        for layer in &self.layers[from..] {
            h = layer.forward(&h, seq_len, key_mask, None)?.0;
        }
        Ok(h)
    }

    pub fn backward(&mut self, caches: &[EncoderLayerCache], dy: &Matrix) -> Matrix {
        let mut g = dy.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            g = layer.backward(cache, &g);
        }
        g
    }
}

impl Module for TransformerEncoder {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        self.layers.visit_params(&join(prefix, "layers"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.layers.visit_params_mut(&join(prefix, "layers"), f);
    }
}

/// Learnable per-slot offsets, zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    pub table: Parameter,
}

impl PositionalEncoding {
    pub fn new(slots: usize, dim: usize) -> Self {
        Self { table: Parameter::zeros(slots, dim) }
    }

    pub fn slots(&self) -> usize {
        self.table.value.rows()
    }

    /// Adds slot `r % slots` to every row `r` whose `present` flag is set.
    pub fn apply(&self, x: &mut Matrix, present: &[bool]) -> Result<()> {
        let slots = self.slots();
        if x.cols() != self.table.value.cols() || x.rows() % slots != 0 {
            return Err(Error::Shape(format!(
                "positional table {:?} cannot apply to {:?}",
                self.table.shape(),
                x.shape()
            )));
        }
        for r in 0..x.rows() {
            if present[r] {
                let p = self.table.value.row(r % slots);
                x.row_mut(r).iter_mut().zip(p).for_each(|(v, pp)| *v += pp);
            }
        }
        Ok(())
    }

    pub fn backward(&mut self, dy: &Matrix, present: &[bool]) {
        let slots = self.slots();
        for r in 0..dy.rows() {
            if present[r] {
                let g = self.table.grad.row_mut(r % slots);
                g.iter_mut().zip(dy.row(r)).for_each(|(a, b)| *a += b);
            }
        }
    }
}

impl Module for PositionalEncoding {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        f(&join(prefix, "table"), &self.table);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        f(&join(prefix, "table"), &mut self.table);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> EncoderConfig {
        EncoderConfig { dim: 8, layers: 2, heads: 2, ffn_dim: 16, dropout: 0.0 }
    }

    #[test]
    fn zero_branches_pass_residual_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc = TransformerEncoder::new(&small(), &mut rng).unwrap();
        enc.visit_params_mut("", &mut |name, p| {
            if !name.contains("norm") {
                p.value.fill(0.0);
            }
        });
        let x = Parameter::uniform(6, 8, 2.0, &mut rng).value;
        let (y, _) = enc.forward(&x, 3, &[true; 6], None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn permuting_tokens_permutes_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let enc = TransformerEncoder::new(&small(), &mut rng).unwrap();
        let x = Parameter::uniform(3, 8, 1.0, &mut rng).value;
        let mask = [true, false, true];
        let perm = [2, 0, 1];
        let xp = x.select_rows(&perm);
        let mp: Vec<bool> = perm.iter().map(|&i| mask[i]).collect();
        let (y, _) = enc.forward(&x, 3, &mask, None).unwrap();
        let (yp, _) = enc.forward(&xp, 3, &mp, None).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            for (a, b) in yp.row(dst).iter().zip(y.row(src)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dropout_only_in_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = EncoderConfig { dropout: 0.5, ..small() };
        let enc = TransformerEncoder::new(&cfg, &mut rng).unwrap();
        let x = Parameter::uniform(3, 8, 1.0, &mut rng).value;
        let (a, _) = enc.forward(&x, 3, &[true; 3], None).unwrap();
        let (b, _) = enc.forward(&x, 3, &[true; 3], None).unwrap();
        assert_eq!(a, b);
        let mut drng = ChaCha8Rng::seed_from_u64(1);
        let (c, _) = enc.forward(&x, 3, &[true; 3], Some(&mut drng)).unwrap();
        assert_ne!(a, c);
    }
}
