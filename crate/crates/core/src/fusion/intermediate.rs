use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::encoders::Modality;
use crate::error::{Error, Result};
use crate::nn::{
    join, masked_mean_pool, masked_mean_pool_backward, EncoderConfig, EncoderLayerCache, Linear, Matrix, Module,
    Parameter, PositionalEncoding, TransformerEncoder,
};

pub const TOKENS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub clinical_dim: usize,
    pub pathology_dim: usize,
    pub radiology_dim: usize,
    pub latent_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            clinical_dim: 25,
            pathology_dim: 512,
            radiology_dim: 512,
            latent_dim: 768,
            layers: 4,
            heads: 8,
            ffn_dim: 3072,
            dropout: 0.1,
        }
    }
}

impl FusionConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.latent_dim,
            layers: self.layers,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
        }
    }

    pub fn input_dim(&self, modality: Modality) -> usize {
        match modality {
            Modality::Clinical => self.clinical_dim,
            Modality::Pathology => self.pathology_dim,
            Modality::Radiology => self.radiology_dim,
        }
    }
}

/// Which modalities take part in a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalityMask {
    pub clinical: bool,
    pub pathology: bool,
    pub radiology: bool,
}

impl Default for ModalityMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl ModalityMask {
    pub const ALL: Self = Self { clinical: true, pathology: true, radiology: true };
    pub const NONE: Self = Self { clinical: false, pathology: false, radiology: false };

    pub fn only(modality: Modality) -> Self {
        Self::NONE.with(modality, true)
    }

    pub fn from_modalities(modalities: &[Modality]) -> Self {
        modalities.iter().fold(Self::NONE, |m, &x| m.with(x, true))
    }

    pub fn get(&self, modality: Modality) -> bool {
        match modality {
            Modality::Clinical => self.clinical,
            Modality::Pathology => self.pathology,
            Modality::Radiology => self.radiology,
        }
    }

    pub fn with(mut self, modality: Modality, present: bool) -> Self {
        match modality {
            Modality::Clinical => self.clinical = present,
            Modality::Pathology => self.pathology = present,
            Modality::Radiology => self.radiology = present,
        }
        self
    }

    pub fn any(&self) -> bool {
        self.clinical || self.pathology || self.radiology
    }

    /// Flags in token-slot order.
    pub fn slots(&self) -> [bool; TOKENS] {
        [self.clinical, self.pathology, self.radiology]
    }

    pub fn present(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|&m| self.get(m)).collect()
    }
}

/// Patient-wise modality vectors. Vectors whose mask flag is false are
/// never read.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FusionSample {
    pub clinical: Option<Vec<f64>>,
    pub pathology: Option<Vec<f64>>,
    pub radiology: Option<Vec<f64>>,
    pub mask: ModalityMask,
}

impl FusionSample {
    /// Mask set from which vectors are present.
    pub fn new(clinical: Option<Vec<f64>>, pathology: Option<Vec<f64>>, radiology: Option<Vec<f64>>) -> Self {
        let mask = ModalityMask {
            clinical: clinical.is_some(),
            pathology: pathology.is_some(),
            radiology: radiology.is_some(),
        };
        Self { clinical, pathology, radiology, mask }
    }

    pub fn vector(&self, modality: Modality) -> Option<&[f64]> {
        match modality {
            Modality::Clinical => self.clinical.as_deref(),
            Modality::Pathology => self.pathology.as_deref(),
            Modality::Radiology => self.radiology.as_deref(),
        }
    }

    pub fn vector_mut(&mut self, modality: Modality) -> &mut Option<Vec<f64>> {
        match modality {
            Modality::Clinical => &mut self.clinical,
            Modality::Pathology => &mut self.pathology,
            Modality::Radiology => &mut self.radiology,
        }
    }

    pub fn with_mask(mut self, mask: ModalityMask) -> Self {
        self.mask = mask;
        self
    }
}

/// Gathered tokenizer inputs for one modality: subject indices and their rows.
#[derive(Debug, Clone)]
pub struct TokenizerInput {
    pub subjects: Vec<usize>,
    pub rows: Matrix,
}

/// Stacked `(B * 3) x d` tokens with positional offsets applied.
#[derive(Debug, Clone)]
pub struct Stacked {
    pub tokens: Matrix,
    pub key_mask: Vec<bool>,
    pub inputs: Vec<Option<TokenizerInput>>,
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    stacked: Stacked,
    layers: Vec<EncoderLayerCache>,
    pooled: Matrix,
}

/// Tokens from gathered inputs in slot order; absent slots are zero rows with
/// a false key mask and no positional offset.
pub fn stack_tokens(
    tokenizers: [&Linear; TOKENS],
    positions: &PositionalEncoding,
    batch: usize,
    inputs: &[Option<TokenizerInput>],
) -> Result<(Matrix, Vec<bool>)> {
    let d = positions.table.value.cols();
    let mut tokens = Matrix::zeros(batch * TOKENS, d);
    let mut key_mask = vec![false; batch * TOKENS];
    for (slot, input) in inputs.iter().enumerate() {
        let Some(input) = input else { continue };
        let projected = tokenizers[slot].forward(&input.rows)?;
        for (r, &b) in input.subjects.iter().enumerate() {
            let row = b * TOKENS + slot;
            tokens.row_mut(row).copy_from_slice(projected.row(r));
            key_mask[row] = true;
        }
    }
    positions.apply(&mut tokens, &key_mask)?;
    Ok((tokens, key_mask))
}

/// Tokenizer, transformer encoder and linear survival head over the
/// clinical, pathology and radiology tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct IntermediateFusionModel {
    pub tokenizer_clinical: Linear,
    pub tokenizer_pathology: Linear,
    pub tokenizer_radiology: Linear,
    pub positions: PositionalEncoding,
    pub encoder: TransformerEncoder,
    pub head: Linear,
}

impl IntermediateFusionModel {
    /// Random tokenizers and encoder, zero positions and a zero head.
    pub fn new(config: &FusionConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = config.latent_dim;
        if config.clinical_dim == 0 || config.pathology_dim == 0 || config.radiology_dim == 0 || d == 0 {
            return Err(Error::Config("fusion widths must be positive".into()));
        }
        Ok(Self {
            tokenizer_clinical: Linear::new(config.clinical_dim, d, rng),
            tokenizer_pathology: Linear::new(config.pathology_dim, d, rng),
            tokenizer_radiology: Linear::new(config.radiology_dim, d, rng),
            positions: PositionalEncoding::new(TOKENS, d),
            encoder: TransformerEncoder::new(&config.encoder(), rng)?,
            head: Linear::zeros(d, 1),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn tokenizer(&self, modality: Modality) -> &Linear {
        match modality {
            Modality::Clinical => &self.tokenizer_clinical,
            Modality::Pathology => &self.tokenizer_pathology,
            Modality::Radiology => &self.tokenizer_radiology,
        }
    }

    pub fn tokenizer_mut(&mut self, modality: Modality) -> &mut Linear {
        match modality {
            Modality::Clinical => &mut self.tokenizer_clinical,
            Modality::Pathology => &mut self.tokenizer_pathology,
            Modality::Radiology => &mut self.tokenizer_radiology,
        }
    }

    pub fn set_dropout(&mut self, p: f64) {
        for layer in &mut self.encoder.layers {
            layer.attention.dropout = p;
            layer.ffn.dropout = p;
        }
    }

    /// Validates samples and gathers each modality's present rows.
    pub fn gather(&self, samples: &[FusionSample]) -> Result<Vec<Option<TokenizerInput>>> {
        if samples.is_empty() {
            return Err(Error::Empty);
        }
        for (b, s) in samples.iter().enumerate() {
            if !s.mask.any() {
                return Err(Error::NoModalities);
            }
            for m in s.mask.present() {
                let width = self.tokenizer(m).input_dim();
                match s.vector(m) {
                    None => return Err(Error::MissingModality { case_id: format!("#{b}"), modality: m.to_string() }),
                    Some(v) if v.len() != width => {
                        return Err(Error::Shape(format!("{m} vector of width {}, expected {width}", v.len())))
                    }
                    Some(v) if v.iter().any(|x| !x.is_finite()) => return Err(Error::NonFinite),
                    Some(_) => {}
                }
            }
        }
        let mut inputs = Vec::with_capacity(TOKENS);
        for m in Modality::ALL {
            let subjects: Vec<usize> = (0..samples.len()).filter(|&b| samples[b].mask.get(m)).collect();
            if subjects.is_empty() {
                inputs.push(None);
                continue;
            }
            let width = self.tokenizer(m).input_dim();
            let mut data = Vec::with_capacity(subjects.len() * width);
            for &b in &subjects {
                data.extend_from_slice(samples[b].vector(m).expect("validated"));
            }
            inputs.push(Some(TokenizerInput { rows: Matrix::from_vec(subjects.len(), width, data)?, subjects }));
        }
        Ok(inputs)
    }

    pub fn stack(&self, batch: usize, inputs: Vec<Option<TokenizerInput>>) -> Result<Stacked> {
        let tokenizers = [&self.tokenizer_clinical, &self.tokenizer_pathology, &self.tokenizer_radiology];
        let (tokens, key_mask) = stack_tokens(tokenizers, &self.positions, batch, &inputs)?;
        Ok(Stacked { tokens, key_mask, inputs })
    }

    pub fn tokenize_and_stack(&self, samples: &[FusionSample]) -> Result<Stacked> {
        let inputs = self.gather(samples)?;
        self.stack(samples.len(), inputs)
    }

    /// Pooled representation to log-risks, one per sequence.
    pub fn head_log_risks(&self, encoded: &Matrix, key_mask: &[bool]) -> Result<(Vec<f64>, Matrix)> {
        let pooled = masked_mean_pool(encoded, key_mask, TOKENS)?;
        let lr = self.head.forward(&pooled)?;
        Ok((lr.into_data(), pooled))
    }

    /// Training-mode forward when `rng` is given, evaluation otherwise.
    pub fn forward(&self, samples: &[FusionSample], rng: Option<&mut dyn RngCore>) -> Result<(Vec<f64>, FusionCache)> {
        let stacked = self.tokenize_and_stack(samples)?;
        let (encoded, layers) = self.encoder.forward(&stacked.tokens, TOKENS, &stacked.key_mask, rng)?;
        let (lr, pooled) = self.head_log_risks(&encoded, &stacked.key_mask)?;
        Ok((lr, FusionCache { stacked, layers, pooled }))
    }

    pub fn log_risks(&self, samples: &[FusionSample]) -> Result<Vec<f64>> {
        Ok(self.forward(samples, None)?.0)
    }

    pub fn log_risk(&self, sample: &FusionSample) -> Result<f64> {
        Ok(self.log_risks(std::slice::from_ref(sample))?[0])
    }

    /// Accumulates parameter gradients for upstream `dL/d(log_risk)`.
    pub fn backward(&mut self, cache: &FusionCache, dlog_risks: &[f64]) -> Result<()> {
        let batch = cache.pooled.rows();
        if dlog_risks.len() != batch {
            return Err(Error::LengthMismatch { expected: batch, actual: dlog_risks.len() });
        }
        let dlr = Matrix::from_vec(batch, 1, dlog_risks.to_vec())?;
        let dpooled = self.head.backward(&cache.pooled, &dlr);
        let dencoded = masked_mean_pool_backward(&dpooled, &cache.stacked.key_mask, TOKENS);
        let dtokens = self.encoder.backward(&cache.layers, &dencoded);
        self.positions.backward(&dtokens, &cache.stacked.key_mask);
        for (m, input) in Modality::ALL.into_iter().zip(&cache.stacked.inputs) {
            let Some(input) = input else { continue };
            let rows: Vec<usize> = input.subjects.iter().map(|&b| b * TOKENS + m.slot()).collect();
            self.tokenizer_mut(m).accumulate(&input.rows, &dtokens.select_rows(&rows));
        }
        Ok(())
    }
}

impl Module for IntermediateFusionModel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        self.tokenizer_clinical.visit_params(&join(prefix, "tokenizer_clinical"), f);
        self.tokenizer_pathology.visit_params(&join(prefix, "tokenizer_pathology"), f);
        self.tokenizer_radiology.visit_params(&join(prefix, "tokenizer_radiology"), f);
        self.positions.visit_params(&join(prefix, "positions"), f);
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.tokenizer_clinical.visit_params_mut(&join(prefix, "tokenizer_clinical"), f);
        self.tokenizer_pathology.visit_params_mut(&join(prefix, "tokenizer_pathology"), f);
        self.tokenizer_radiology.visit_params_mut(&join(prefix, "tokenizer_radiology"), f);
        self.positions.visit_params_mut(&join(prefix, "positions"), f);
        self.encoder.visit_params_mut(&join(prefix, "encoder"), f);
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny() -> FusionConfig {
        FusionConfig {
            clinical_dim: 4,
            pathology_dim: 5,
            radiology_dim: 3,
            latent_dim: 8,
            layers: 2,
            heads: 2,
            ffn_dim: 12,
            dropout: 0.0,
        }
    }

    fn sample(rng: &mut ChaCha8Rng, cfg: &FusionConfig) -> FusionSample {
        let mut v = |n: usize| Some((0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        FusionSample::new(v(cfg.clinical_dim), v(cfg.pathology_dim), v(cfg.radiology_dim))
    }

    #[test]
    fn zero_tokenizers_stack_to_zeros() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = IntermediateFusionModel::new(&cfg, &mut rng).unwrap();
        for m in Modality::ALL {
            *model.tokenizer_mut(m) = Linear::zeros(cfg.input_dim(m), cfg.latent_dim);
        }
        let s = sample(&mut rng, &cfg);
        let stacked = model.tokenize_and_stack(&[s]).unwrap();
        assert!(stacked.tokens.data().iter().all(|v| *v == 0.0));
        assert_eq!(stacked.tokens.shape(), (3, 8));
    }

    #[test]
    fn clinical_only_key_mask() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = IntermediateFusionModel::new(&cfg, &mut rng).unwrap();
        let s = sample(&mut rng, &cfg).with_mask(ModalityMask::only(Modality::Clinical));
        assert_eq!(model.tokenize_and_stack(&[s]).unwrap().key_mask, vec![true, false, false]);
    }

    #[test]
    fn zero_head_gives_zero_log_risk() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = IntermediateFusionModel::new(&cfg, &mut rng).unwrap();
        let samples: Vec<_> = (0..4).map(|_| sample(&mut rng, &cfg)).collect();
        assert_eq!(model.log_risks(&samples).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn masked_modality_is_ignored_exactly() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = IntermediateFusionModel::new(&cfg, &mut rng).unwrap();
        model.head = Linear::new(cfg.latent_dim, 1, &mut rng);
        model.positions.table = Parameter::uniform(3, cfg.latent_dim, 1.0, &mut rng);
        let mask = ModalityMask { radiology: false, ..ModalityMask::ALL };
        let a = sample(&mut rng, &cfg).with_mask(mask);
        let mut b = a.clone();
        b.radiology = Some(vec![1e6, -3.0, f64::NAN]);
        let mut c = a.clone();
        c.radiology = None;
        let lr = model.log_risk(&a).unwrap();
        assert_eq!(lr, model.log_risk(&b).unwrap());
        assert_eq!(lr, model.log_risk(&c).unwrap());
        assert_ne!(lr, model.log_risk(&a.clone().with_mask(ModalityMask::ALL)).unwrap());
    }

    #[test]
    fn batch_rows_are_independent_and_deterministic() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = IntermediateFusionModel::new(&cfg, &mut rng).unwrap();
        model.head = Linear::new(cfg.latent_dim, 1, &mut rng);
        let s = sample(&mut rng, &cfg);
        let t = sample(&mut rng, &cfg);
        let both = model.log_risks(&[s.clone(), s.clone(), t.clone()]).unwrap();
        assert_eq!(both[0], both[1]);
        assert!((both[0] - model.log_risk(&s).unwrap()).abs() < 1e-12);
        let again = model.log_risks(&[s.clone(), s, t]).unwrap();
        assert_eq!(both, again);
    }

    #[test]
    fn requires_a_present_modality() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = IntermediateFusionModel::new(&cfg, &mut rng).unwrap();
        let s = sample(&mut rng, &cfg).with_mask(ModalityMask::NONE);
        assert!(matches!(model.log_risk(&s), Err(Error::NoModalities)));
        let missing = FusionSample { pathology: None, ..sample(&mut rng, &cfg) };
        assert!(matches!(model.log_risk(&missing), Err(Error::MissingModality { .. })));
    }
}
