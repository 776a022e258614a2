use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig, OptimizerKind};
use crate::encoders::MilCoxModel;
use crate::error::{Error, Result};
use crate::fusion::{FusionSample, IntermediateFusionModel};
use crate::nn::{Matrix, Module};
use crate::survival::{cox_loss, cox_loss_and_gradient, SurvivalLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Used by AdamW only.
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub min_epochs_before_stop: usize,
    /// Epochs without validation improvement tolerated once stopping is allowed.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::fusion()
    }
}

impl TrainConfig {
    pub fn fusion() -> Self {
        Self {
            optimizer: OptimizerKind::AdamW,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            max_epochs: 1000,
            min_epochs_before_stop: 250,
            patience: 50,
            seed: 0,
        }
    }

    pub fn encoder() -> Self {
        Self { optimizer: OptimizerKind::Adam, learning_rate: 1e-4, weight_decay: 0.0, ..Self::fusion() }
    }

    /// A zero learning rate is accepted so that frozen runs stay expressible.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be finite and ≥ 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be finite and ≥ 0, got {}", self.weight_decay)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        if self.min_epochs_before_stop > self.max_epochs {
            return Err(Error::Config(format!(
                "min_epochs_before_stop ({}) exceeds max_epochs ({})",
                self.min_epochs_before_stop, self.max_epochs
            )));
        }
        Ok(())
    }

    pub fn adam_config(&self) -> AdamConfig {
        match self.optimizer {
            OptimizerKind::Adam => AdamConfig::adam(self.learning_rate),
            OptimizerKind::AdamW => AdamConfig::adamw(self.learning_rate, self.weight_decay),
        }
    }
}

/// A model trainable by full-batch Cox partial likelihood.
pub trait SurvivalModel: Module + Clone + Send + Sync {
    type Input: Sync;

    /// Training-mode forward pass (dropout drawn from `rng`), Cox loss, and
    /// backward pass accumulating into the parameter gradients.
    fn cox_step(&mut self, inputs: &[&Self::Input], labels: &[SurvivalLabel], rng: &mut dyn RngCore) -> Result<f64>;

    /// Inference-mode log-risks.
    fn predict(&self, inputs: &[&Self::Input]) -> Result<Vec<f64>>;
}

impl SurvivalModel for MilCoxModel {
    type Input = Matrix;

    fn cox_step(&mut self, inputs: &[&Matrix], labels: &[SurvivalLabel], _rng: &mut dyn RngCore) -> Result<f64> {
        let mut lrs = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        for bag in inputs {
            let (lr, cache) = self.forward(bag)?;
            lrs.push(lr);
            caches.push(cache);
        }
        let (loss, grad) = cox_loss_and_gradient(&lrs, labels)?;
        for (cache, g) in caches.iter().zip(grad) {
            self.backward(cache, g);
        }
        Ok(loss)
    }

    fn predict(&self, inputs: &[&Matrix]) -> Result<Vec<f64>> {
        self.log_risks(inputs)
    }
}

impl SurvivalModel for IntermediateFusionModel {
    type Input = FusionSample;

    fn cox_step(&mut self, inputs: &[&FusionSample], labels: &[SurvivalLabel], rng: &mut dyn RngCore) -> Result<f64> {
        let samples: Vec<FusionSample> = inputs.iter().map(|s| (*s).clone()).collect();
        let (lrs, cache) = self.forward(&samples, Some(rng))?;
        let (loss, grad) = cox_loss_and_gradient(&lrs, labels)?;
        self.backward(&cache, &grad)?;
        Ok(loss)
    }

    fn predict(&self, inputs: &[&FusionSample]) -> Result<Vec<f64>> {
        let samples: Vec<FusionSample> = inputs.iter().map(|s| (*s).clone()).collect();
        self.log_risks(&samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Loss of the training-mode pass that produced this epoch's update.
    pub train_loss: f64,
    /// Validation loss after the update.
    pub val_loss: f64,
}

/// Parameters with the lowest validation loss, plus the full loss history.
#[derive(Debug, Clone)]
pub struct Checkpoint<M> {
    pub model: M,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub curve: Vec<EpochRecord>,
}

impl<M> Checkpoint<M> {
    pub fn epochs_run(&self) -> usize {
        self.curve.len()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.curve.iter().map(|r| r.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.curve.iter().map(|r| r.val_loss).collect()
    }
}

/// Labelled inputs of one split.
#[derive(Debug)]
pub struct Batch<'a, I> {
    pub inputs: &'a [&'a I],
    pub labels: &'a [SurvivalLabel],
}

impl<I> Clone for Batch<'_, I> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<I> Copy for Batch<'_, I> {}

impl<'a, I> Batch<'a, I> {
    pub fn new(inputs: &'a [&'a I], labels: &'a [SurvivalLabel]) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::LengthMismatch { expected: labels.len(), actual: inputs.len() });
        }
        Ok(Self { inputs, labels })
    }

    fn require_events(&self, split: &str) -> Result<()> {
        if self.labels.iter().any(|l| l.event) {
            Ok(())
        } else {
            Err(Error::Fold { fold: split.into(), reason: "no events".into() })
        }
    }
}

/// First epoch `t ≥ min_epochs` at which the second difference of the
/// curve changes sign strictly between `t - 1` and `t`.
pub fn early_stop_epoch(curve: &[f64], min_epochs: usize) -> Option<usize> {
    if curve.len() < 3 {
        return None;
    }
    let d2 = |t: usize| curve[t + 1] - 2.0 * curve[t] + curve[t - 1];
    (min_epochs.max(2)..curve.len() - 1).find(|&t| d2(t - 1) * d2(t) < 0.0)
}

/// Whether training may stop after the epochs recorded so far: past the
/// minimum epoch count, past the training-loss inflection, and `patience`
/// epochs without a new best validation loss.
pub fn should_stop(curve: &[EpochRecord], best_epoch: usize, config: &TrainConfig) -> bool {
    let done = curve.len();
    if done < config.min_epochs_before_stop {
        return false;
    }
    let train: Vec<f64> = curve.iter().map(|r| r.train_loss).collect();
    early_stop_epoch(&train, 0).is_some() && done - best_epoch >= config.patience
}

/// Full-batch training with best-validation checkpoint selection.
pub fn train_fold<M: SurvivalModel>(
    mut model: M,
    train: Batch<'_, M::Input>,
    val: Batch<'_, M::Input>,
    config: &TrainConfig,
) -> Result<Checkpoint<M>> {
    config.validate()?;
    train.require_events("train")?;
    val.require_events("validation")?;
    let mut optimizer = Adam::new(config.adam_config());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(M, usize, f64)> = None;
    let mut curve = Vec::new();
    for epoch in 1..=config.max_epochs {
        model.zero_grad();
        let train_loss = model.cox_step(train.inputs, train.labels, &mut rng)?;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite);
        }
        optimizer.step(&mut model)?;
        let val_loss = cox_loss(&model.predict(val.inputs)?, val.labels)?;
        curve.push(EpochRecord { epoch, train_loss, val_loss });
        if best.as_ref().is_none_or(|(_, _, b)| val_loss < *b) {
            best = Some((model.clone(), epoch, val_loss));
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.1);
        if should_stop(&curve, best_epoch, config) {
            break;
        }
    }
    let (mut model, best_epoch, best_val_loss) = best.expect("max_epochs ≥ 1");
    model.zero_grad();
    Ok(Checkpoint { model, best_epoch, best_val_loss, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::PoolingConfig;
    use crate::nn::Linear;

    #[test]
    fn hand_computed_curves() {
        assert_eq!(early_stop_epoch(&[10.0, 9.0, 7.0, 4.0, 2.0, 1.0, 0.5], 0), Some(3));
        assert_eq!(early_stop_epoch(&[10.0, 6.0, 3.0, 1.5, 1.2, 1.1], 0), None);
        assert_eq!(early_stop_epoch(&[2.0; 8], 0), None);
        assert_eq!(early_stop_epoch(&[1.0, 2.0], 0), None);
    }

    #[test]
    fn min_epochs_delays_the_crossing() {
        let curve = [10.0, 9.0, 7.0, 4.0, 2.0, 1.0, 0.5];
        assert_eq!(early_stop_epoch(&curve, 4), None);
        let wavy: Vec<f64> = (0..20).map(|t| (t as f64 * 0.9).sin()).collect();
        let first = early_stop_epoch(&wavy, 0).unwrap();
        assert!(early_stop_epoch(&wavy, first + 1).unwrap() > first);
    }

    fn toy_bags(n: usize) -> (Vec<Matrix>, Vec<SurvivalLabel>) {
        // Risk grows with the first feature, so earlier events carry larger values.
        let bags = (0..n)
            .map(|i| {
                let x = i as f64 / n as f64;
                Matrix::from_rows(&[vec![x, 0.3, -x], vec![0.5 * x, 0.1, 0.2]]).unwrap()
            })
            .collect();
        let labels = (0..n).map(|i| SurvivalLabel::new((n - i) as f64, i % 4 != 0).unwrap()).collect();
        (bags, labels)
    }

    fn toy_model() -> MilCoxModel {
        let cfg = PoolingConfig { input_dim: 3, reduction_dims: vec![4], scorer_hidden: 3, top_k: None };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = MilCoxModel::new(&cfg, &mut rng).unwrap();
        m.head = Linear::new(4, 1, &mut rng);
        m
    }

    fn quick(lr: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: lr,
            max_epochs: epochs,
            min_epochs_before_stop: 0,
            ..TrainConfig::encoder()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let (bags, labels) = toy_bags(12);
        let refs: Vec<&Matrix> = bags.iter().collect();
        let batch = Batch::new(&refs, &labels).unwrap();
        let init = toy_model();
        let ck = train_fold(init.clone(), batch, batch, &quick(0.0, 5)).unwrap();
        assert_eq!(ck.model.named_values(), init.named_values());
        assert_eq!(ck.best_epoch, 1);
    }

    #[test]
    fn training_loss_decreases_and_checkpoint_is_optimal() {
        let (bags, labels) = toy_bags(16);
        let refs: Vec<&Matrix> = bags.iter().collect();
        let batch = Batch::new(&refs, &labels).unwrap();
        let ck = train_fold(toy_model(), batch, batch, &quick(1e-2, 30)).unwrap();
        let train = ck.train_losses();
        assert!(train.windows(2).take(10).all(|w| w[1] < w[0]), "{train:?}");
        let min = ck.val_losses().into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(ck.best_val_loss, min);
        assert_eq!(ck.curve[ck.best_epoch - 1].val_loss, min);
        let again = train_fold(toy_model(), batch, batch, &quick(1e-2, 30)).unwrap();
        assert_eq!(again.model, ck.model);
    }

    #[test]
    fn event_free_split_is_rejected_before_training() {
        let (bags, mut labels) = toy_bags(6);
        let refs: Vec<&Matrix> = bags.iter().collect();
        let train = Batch::new(&refs, &labels.clone()).unwrap().labels.to_vec();
        for l in &mut labels {
            l.event = false;
        }
        let err = train_fold(
            toy_model(),
            Batch::new(&refs, &train).unwrap(),
            Batch::new(&refs, &labels).unwrap(),
            &quick(1e-2, 3),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Fold { ref fold, .. } if fold == "validation"), "{err}");
    }

    #[test]
    fn stopping_waits_for_minimum_and_patience() {
        let rec = |e: usize, t: f64, v: f64| EpochRecord { epoch: e, train_loss: t, val_loss: v };
        let curve: Vec<EpochRecord> = [10.0, 9.0, 7.0, 4.0, 2.0, 1.0, 0.5, 0.4]
            .iter()
            .enumerate()
            .map(|(i, &t)| rec(i + 1, t, 1.0))
            .collect();
        let cfg = TrainConfig { min_epochs_before_stop: 5, patience: 3, ..quick(1e-3, 100) };
        assert!(should_stop(&curve, 1, &cfg));
        assert!(!should_stop(&curve, 6, &cfg));
        assert!(!should_stop(&curve[..4], 1, &cfg));
        let cfg = TrainConfig { min_epochs_before_stop: 9, ..cfg };
        assert!(!should_stop(&curve, 1, &cfg));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::fusion().validate().is_ok());
        assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::fusion() }.validate().is_err());
        assert!(TrainConfig { min_epochs_before_stop: 2000, ..TrainConfig::fusion() }.validate().is_err());
    }
}
