//! Finite-difference target for the intermediate-fusion model under Cox loss.
//!
//! Perturbing a parameter only changes activations from its own stage
//! onwards, so each perturbed loss reuses the cached input of that stage.
//! Perturbations of one tensor are stacked into a single batch for the
//! remaining layers.

use rayon::prelude::*;

use super::intermediate::{stack_tokens, IntermediateFusionModel, TokenizerInput, TOKENS};
use crate::error::Result;
use crate::nn::{join, FiniteDiffTarget, Linear, Matrix, Module, Parameter, PositionalEncoding};
use crate::survival::{cox_loss, cox_loss_gradient, SurvivalLabel};

use super::FusionSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Tokens,
    Layer(usize),
    Head,
}

/// The token-producing parameters, named as in the full model.
#[derive(Clone)]
struct TokenStage {
    tokenizers: [Linear; TOKENS],
    positions: PositionalEncoding,
}

impl Module for TokenStage {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        for (t, name) in self.tokenizers.iter().zip(TOKENIZER_NAMES) {
            t.visit_params(&join(prefix, name), f);
        }
        self.positions.visit_params(&join(prefix, "positions"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        for (t, name) in self.tokenizers.iter_mut().zip(TOKENIZER_NAMES) {
            t.visit_params_mut(&join(prefix, name), f);
        }
        self.positions.visit_params_mut(&join(prefix, "positions"), f);
    }
}

const TOKENIZER_NAMES: [&str; TOKENS] = ["tokenizer_clinical", "tokenizer_pathology", "tokenizer_radiology"];

pub struct FusionGradientProbe<'a> {
    model: &'a mut IntermediateFusionModel,
    samples: &'a [FusionSample],
    labels: &'a [SurvivalLabel],
    layout: Vec<(String, usize, Stage)>,
    inputs: Vec<Option<TokenizerInput>>,
    key_mask: Vec<bool>,
    /// Input of each encoder layer at the unperturbed parameters.
    layer_inputs: Vec<Matrix>,
    pooled: Matrix,
    /// Perturbed coordinates per parallel work unit.
    pub chunk: usize,
}

impl<'a> FusionGradientProbe<'a> {
    /// Evaluation mode (no dropout) throughout.
    pub fn new(
        model: &'a mut IntermediateFusionModel,
        samples: &'a [FusionSample],
        labels: &'a [SurvivalLabel],
    ) -> Result<Self> {
        let mut layout = Vec::new();
        model.visit_params("", &mut |name, p| {
            let stage = if let Some(rest) = name.strip_prefix("encoder.layers.") {
                Stage::Layer(rest.split('.').next().and_then(|i| i.parse().ok()).expect("layer index"))
            } else if name.starts_with("head.") {
                Stage::Head
            } else {
                Stage::Tokens
            };
            layout.push((name.to_string(), p.value.len(), stage));
        });
        let inputs = model.gather(samples)?;
        let mut probe = Self {
            model,
            samples,
            labels,
            layout,
            inputs,
            key_mask: Vec::new(),
            layer_inputs: Vec::new(),
            pooled: Matrix::zeros(0, 0),
            chunk: 8,
        };
        probe.refresh()?;
        Ok(probe)
    }

    fn refresh(&mut self) -> Result<()> {
        let stacked = self.model.stack(self.samples.len(), self.inputs.clone())?;
        let mut h = stacked.tokens;
        self.layer_inputs.clear();
        for layer in &self.model.encoder.layers {
            let next = layer.forward(&h, TOKENS, &stacked.key_mask, None)?.0;
            self.layer_inputs.push(std::mem::replace(&mut h, next));
        }
        self.pooled = self.model.head_log_risks(&h, &stacked.key_mask)?.1;
        self.key_mask = stacked.key_mask;
        Ok(())
    }

    fn token_stage(&self) -> TokenStage {
        TokenStage {
            tokenizers: [
                self.model.tokenizer_clinical.clone(),
                self.model.tokenizer_pathology.clone(),
                self.model.tokenizer_radiology.clone(),
            ],
            positions: self.model.positions.clone(),
        }
    }

    /// Cox losses of `copies` stacked perturbed batches entering `from_layer`.
    fn losses_from(&self, from_layer: usize, stacked: &Matrix, copies: usize) -> Vec<f64> {
        let mask: Vec<bool> = (0..copies).flat_map(|_| self.key_mask.iter().copied()).collect();
        let encoded = self.model.encoder.forward_from(from_layer, stacked, TOKENS, &mask).expect("valid batch");
        let lrs = self.model.head_log_risks(&encoded, &mask).expect("valid batch").0;
        lrs.chunks(self.samples.len()).map(|lr| self.cox(lr)).collect()
    }

    fn cox(&self, log_risks: &[f64]) -> f64 {
        cox_loss(log_risks, self.labels).unwrap_or(f64::NAN)
    }

    fn chunk_losses(&self, name: &str, stage: Stage, indices: &[usize], step: f64) -> Vec<(f64, f64)> {
        // Each perturbation yields the stage output for the whole batch.
        let outputs: Vec<Matrix> = match stage {
            Stage::Tokens => {
                let mut stage = self.token_stage();
                perturb(&mut stage, name, indices, step, |s| {
                    let t = [&s.tokenizers[0], &s.tokenizers[1], &s.tokenizers[2]];
                    stack_tokens(t, &s.positions, self.samples.len(), &self.inputs).expect("valid batch").0
                })
            }
            Stage::Layer(l) => {
                let mut layer = self.model.encoder.layers[l].clone();
                let local = name.strip_prefix(&format!("encoder.layers.{l}.")).expect("layer tensor");
                perturb(&mut layer, local, indices, step, |layer| {
                    layer.forward(&self.layer_inputs[l], TOKENS, &self.key_mask, None).expect("valid batch").0
                })
            }
            Stage::Head => {
                let mut head = self.model.head.clone();
                let local = name.strip_prefix("head.").expect("head tensor");
                let lrs = perturb(&mut head, local, indices, step, |h| h.forward(&self.pooled).expect("valid batch"));
                let losses: Vec<f64> = lrs.iter().map(|m| self.cox(m.data())).collect();
                return losses.chunks(2).map(|c| (c[0], c[1])).collect();
            }
        };
        let from = match stage {
            Stage::Layer(l) => l + 1,
            _ => 0,
        };
        let copies = outputs.len();
        let cols = outputs[0].cols();
        let data: Vec<f64> = outputs.into_iter().flat_map(Matrix::into_data).collect();
        let stacked = Matrix::from_vec(data.len() / cols, cols, data).expect("consistent widths");
        let losses = self.losses_from(from, &stacked, copies);
        losses.chunks(2).map(|c| (c[0], c[1])).collect()
    }
}

/// Stage outputs at `+step` then `-step` for each index, restoring afterwards.
fn perturb<M: Module, F: Fn(&M) -> Matrix>(module: &mut M, name: &str, indices: &[usize], step: f64, eval: F) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(2 * indices.len());
    for &i in indices {
        let original = module.coordinate(name, i).expect("coordinate exists");
        for delta in [step, -step] {
            module.set_coordinate(name, i, original + delta);
            out.push(eval(module));
        }
        module.set_coordinate(name, i, original);
    }
    out
}

impl FiniteDiffTarget for FusionGradientProbe<'_> {
    fn tensors(&self) -> Vec<(String, usize)> {
        self.layout.iter().map(|(n, len, _)| (n.clone(), *len)).collect()
    }

    fn get(&self, tensor: usize, index: usize) -> f64 {
        self.model.coordinate(&self.layout[tensor].0, index).expect("coordinate exists")
    }

    fn set(&mut self, tensor: usize, index: usize, value: f64) {
        let name = self.layout[tensor].0.clone();
        self.model.set_coordinate(&name, index, value);
    }

    fn loss(&mut self) -> f64 {
        self.model.log_risks(self.samples).map(|lr| self.cox(&lr)).unwrap_or(f64::NAN)
    }

    fn gradient(&mut self) -> Vec<Vec<f64>> {
        self.refresh().expect("valid batch");
        self.model.zero_grad();
        let (lrs, cache) = self.model.forward(self.samples, None).expect("valid batch");
        let g = cox_loss_gradient(&lrs, self.labels).expect("valid labels");
        self.model.backward(&cache, &g).expect("matching batch");
        let mut out = Vec::with_capacity(self.layout.len());
        self.model.visit_params("", &mut |_, p| out.push(p.grad.data().to_vec()));
        out
    }

    fn perturbed_losses(&mut self, tensor: usize, indices: &[usize], step: f64) -> Vec<(f64, f64)> {
        let (name, _, stage) = self.layout[tensor].clone();
        let this = &*self;
        indices
            .par_chunks(self.chunk.max(1))
            .map(|chunk| this.chunk_losses(&name, stage, chunk, step))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionConfig;
    use crate::nn::{grad_check, GradCheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn staged_losses_match_plain_losses() {
        let cfg = FusionConfig {
            clinical_dim: 4,
            pathology_dim: 5,
            radiology_dim: 3,
            latent_dim: 8,
            layers: 2,
            heads: 2,
            ffn_dim: 12,
            dropout: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = IntermediateFusionModel::new(&cfg, &mut rng).unwrap();
        model.head = Linear::new(8, 1, &mut rng);
        model.positions.table = Parameter::uniform(3, 8, 0.5, &mut rng);
        let mut v = |n: usize| Some((0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        let mut samples: Vec<FusionSample> = (0..5).map(|_| FusionSample::new(v(4), v(5), v(3))).collect();
        samples[2].radiology = None;
        samples[2].mask.radiology = false;
        let labels: Vec<SurvivalLabel> = [4.0, 2.0, 7.0, 1.0, 3.0]
            .iter()
            .zip([true, true, false, true, false])
            .map(|(&t, e)| SurvivalLabel::new(t, e).unwrap())
            .collect();
        let mut reference = model.clone();
        let mut probe = FusionGradientProbe::new(&mut model, &samples, &labels).unwrap();
        probe.chunk = 2;
        let tensors = probe.tensors();
        for (t, (name, len)) in tensors.iter().enumerate() {
            let indices: Vec<usize> = (0..*len).step_by(3).collect();
            let staged = probe.perturbed_losses(t, &indices, 1e-3);
            for (&i, (plus, minus)) in indices.iter().zip(staged) {
                let original = reference.coordinate(name, i).unwrap();
                reference.set_coordinate(name, i, original + 1e-3);
                let p = cox_loss(&reference.log_risks(&samples).unwrap(), &labels).unwrap();
                reference.set_coordinate(name, i, original - 1e-3);
                let m = cox_loss(&reference.log_risks(&samples).unwrap(), &labels).unwrap();
                reference.set_coordinate(name, i, original);
                assert!((plus - p).abs() < 1e-12 && (minus - m).abs() < 1e-12, "{name}[{i}]");
            }
        }
        let report = grad_check(&mut probe, &GradCheckConfig { tolerance: 1e-5, ..Default::default() });
        assert!(report.passed, "{:?}", report.worst());
    }
}
