//! Per-split training of the full model bundle, fold ensembles, and the
//! nested late/intermediate aggregation grid.
//!
//! One split trains, in order: the clinical encoder statistics and Cox
//! regressor, a pooling Cox model per imaging modality, and the
//! intermediate-fusion model on the pooled features those encoders produce.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FusionKind, FusionSettings, RunConfig};
use crate::encoders::{ClinicalEncoder, ClinicalSchema, MilCoxModel, Modality, PoolingConfig};
use crate::error::{Error, Result};
use crate::experiment::{run_kfold_train, run_splits, summarize, train_fold, Batch, EpochRecord, FoldPlan, MetricsSummary, Split};
use crate::fusion::{
    ensemble_intermediate, Aggregation, ClinicalCoxModel, Combination, FusionConfig, FusionSample,
    IntermediateFusionModel, LateFusionEnsemble, LateFusionInput,
};
use crate::io::{format_significant, Cohort, Prediction};
use crate::nn::{join, load_tensors, save_tensors, Matrix, Module, Parameter};
use crate::survival::{concordance_index, fit_cph, CoxRegressor, CphConfig, FitStatus, RiskScore, SurvivalLabel};

pub const CHECKPOINT_FILE: &str = "checkpoint.pfmw";
pub const MODEL_FILE: &str = "model.json";
pub const CURVES_FILE: &str = "curves.csv";

/// Weight and score aggregation per grid column, in column order.
pub const GRID_SETTINGS: [(Aggregation, Aggregation); 4] = [
    (Aggregation::Median, Aggregation::Median),
    (Aggregation::Median, Aggregation::Mean),
    (Aggregation::Mean, Aggregation::Median),
    (Aggregation::Mean, Aggregation::Mean),
];

pub fn grid_column(weight: Aggregation, score: Aggregation) -> String {
    format!("{}_mw_{}_lrs", weight.short(), score.short())
}

/// Layer shapes of a fold bundle; enough to rebuild it before loading weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub pathology: PoolingConfig,
    pub radiology: PoolingConfig,
    pub fusion: FusionConfig,
}

impl Architecture {
    /// Imaging input widths come from the cohort and must agree across subjects.
    pub fn infer(config: &RunConfig, schema: &ClinicalSchema, cohort: &Cohort) -> Result<Self> {
        let width = |m: Modality| -> Result<usize> {
            let mut widths = cohort.imaging(m).iter().flatten().map(Matrix::cols);
            let first = widths.next().ok_or_else(|| Error::Format(format!("no {m} embeddings in cohort")))?;
            match widths.find(|&w| w != first) {
                Some(w) => Err(Error::Shape(format!("{m} embeddings have widths {first} and {w}"))),
                None => Ok(first),
            }
        };
        let pathology = config.model.pooling(Modality::Pathology, width(Modality::Pathology)?);
        let radiology = config.model.pooling(Modality::Radiology, width(Modality::Radiology)?);
        let fusion = config.model.fusion(schema.vector_width(), pathology.output_dim(), radiology.output_dim());
        Ok(Self { pathology, radiology, fusion })
    }
}

/// Everything one split trains.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldModel {
    pub id: String,
    pub architecture: Architecture,
    pub clinical: ClinicalCoxModel,
    pub pathology: MilCoxModel,
    pub radiology: MilCoxModel,
    pub fusion: IntermediateFusionModel,
    /// Intermediate fusion trained with radiology masked out.
    pub fusion_without_radiology: Option<IntermediateFusionModel>,
}

impl Module for FoldModel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Parameter)) {
        self.pathology.visit_params(&join(prefix, "pathology"), f);
        self.radiology.visit_params(&join(prefix, "radiology"), f);
        self.fusion.visit_params(&join(prefix, "fusion"), f);
        if let Some(m) = &self.fusion_without_radiology {
            m.visit_params(&join(prefix, "fusion_without_radiology"), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Parameter)) {
        self.pathology.visit_params_mut(&join(prefix, "pathology"), f);
        self.radiology.visit_params_mut(&join(prefix, "radiology"), f);
        self.fusion.visit_params_mut(&join(prefix, "fusion"), f);
        if let Some(m) = &mut self.fusion_without_radiology {
            m.visit_params_mut(&join(prefix, "fusion_without_radiology"), f);
        }
    }
}

/// Non-tensor state stored next to the tensor checkpoint.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    id: String,
    architecture: Architecture,
    clinical: ClinicalCoxModel,
    fusion_without_radiology: bool,
}

/// Which intermediate-fusion model to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntermediateVariant {
    AllModalities,
    WithoutRadiology,
}

impl FoldModel {
    fn blank(id: String, architecture: Architecture, clinical: ClinicalCoxModel, without_radiology: bool) -> Result<Self> {
        // Placeholder weights; every tensor is overwritten on load.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fusion = IntermediateFusionModel::new(&architecture.fusion, &mut rng)?;
        Ok(Self {
            id,
            pathology: MilCoxModel::new(&architecture.pathology, &mut rng)?,
            radiology: MilCoxModel::new(&architecture.radiology, &mut rng)?,
            fusion_without_radiology: without_radiology.then(|| fusion.clone()),
            fusion,
            architecture,
            clinical,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_tensors(&dir.join(CHECKPOINT_FILE), &self.named_values())?;
        let sidecar = Sidecar {
            id: self.id.clone(),
            architecture: self.architecture.clone(),
            clinical: self.clinical.clone(),
            fusion_without_radiology: self.fusion_without_radiology.is_some(),
        };
        fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(dir.join(MODEL_FILE))?)?;
        let mut model = Self::blank(sidecar.id, sidecar.architecture, sidecar.clinical, sidecar.fusion_without_radiology)?;
        model.load_named_values(&load_tensors(&dir.join(CHECKPOINT_FILE))?)?;
        Ok(model)
    }

    fn intermediate(&self, variant: IntermediateVariant) -> Result<&IntermediateFusionModel> {
        match variant {
            IntermediateVariant::AllModalities => Ok(&self.fusion),
            IntermediateVariant::WithoutRadiology => self
                .fusion_without_radiology
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{} has no fusion model without radiology", self.id))),
        }
    }

    /// Fusion inputs for `subjects`: the clinical vector and this fold's pooled
    /// imaging features, with absent imaging masked.
    pub fn fusion_samples(&self, cohort: &Cohort, subjects: &[usize], variant: IntermediateVariant) -> Result<Vec<FusionSample>> {
        subjects
            .iter()
            .map(|&i| {
                let clinical = self.clinical.encoder.vector(&cohort.records[i])?;
                let pathology = cohort.pathology[i].as_ref().map(|b| self.pathology.pooling.pool(b)).transpose()?;
                let radiology = match variant {
                    IntermediateVariant::AllModalities => {
                        cohort.radiology[i].as_ref().map(|b| self.radiology.pooling.pool(b)).transpose()?
                    }
                    IntermediateVariant::WithoutRadiology => None,
                };
                Ok(FusionSample::new(Some(clinical), pathology, radiology))
            })
            .collect()
    }

    pub fn intermediate_log_risks(&self, cohort: &Cohort, subjects: &[usize], variant: IntermediateVariant) -> Result<Vec<f64>> {
        self.intermediate(variant)?.log_risks(&self.fusion_samples(cohort, subjects, variant)?)
    }
}

/// Per-epoch losses of every model trained in a split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FoldCurves {
    pub pathology: Vec<EpochRecord>,
    pub radiology: Vec<EpochRecord>,
    pub fusion: Vec<EpochRecord>,
    pub fusion_without_radiology: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub model: FoldModel,
    pub curves: FoldCurves,
}

/// Independent seed for `component` of split `split`.
fn derive_seed(seed: u64, split: usize, component: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split as u64 + 1);
    rng.set_word_pos(2 * component as u128);
    rng.next_u64()
}

fn labels_of(labels: &[SurvivalLabel], subjects: &[usize]) -> Vec<SurvivalLabel> {
    subjects.iter().map(|&i| labels[i]).collect()
}

/// Cox regression on the dummy coding. Columns constant over the training
/// split carry no information there and get a zero coefficient.
pub fn fit_clinical_cox(
    encoder: ClinicalEncoder,
    cohort: &Cohort,
    subjects: &[usize],
    labels: &[SurvivalLabel],
    config: &CphConfig,
) -> Result<ClinicalCoxModel> {
    let x: Vec<Vec<f64>> = subjects.iter().map(|&i| encoder.dummy(&cohort.records[i])).collect::<Result<_>>()?;
    let width = encoder.schema.dummy_width();
    let varying: Vec<usize> = (0..width).filter(|&c| x.iter().any(|row| row[c] != x[0][c])).collect();
    let reduced: Vec<Vec<f64>> = x.iter().map(|row| varying.iter().map(|&c| row[c]).collect()).collect();
    let fit = fit_cph(&reduced, labels, config)?;
    if fit.status != FitStatus::Converged {
        log::warn!("clinical regression stopped with status {:?} after {} iterations", fit.status, fit.iterations);
    }
    let mut beta = vec![0.0; width];
    for (&c, &b) in varying.iter().zip(&fit.model.beta) {
        beta[c] = b;
    }
    Ok(ClinicalCoxModel { encoder, regressor: CoxRegressor::new(beta) })
}

fn log_curve(id: &str, component: &str, curve: &[EpochRecord]) {
    if log::log_enabled!(log::Level::Info) {
        for r in curve {
            log::info!("{id} {component} epoch {} train_loss {:.6} val_loss {:.6}", r.epoch, r.train_loss, r.val_loss);
        }
    }
}

fn train_pooling(
    id: &str,
    modality: Modality,
    config: &PoolingConfig,
    cohort: &Cohort,
    split: &Split,
    run: &RunConfig,
    seeds: (u64, u64),
) -> Result<(MilCoxModel, Vec<EpochRecord>)> {
    let labels = cohort.labels()?;
    let bags = cohort.imaging(modality);
    let part = |subjects: &[usize]| -> (Vec<&Matrix>, Vec<SurvivalLabel>) {
        subjects.iter().filter_map(|&i| bags[i].as_ref().map(|b| (b, labels[i]))).unzip()
    };
    let (train_x, train_y) = part(&split.train);
    let (val_x, val_y) = part(&split.val);
    let model = MilCoxModel::new(config, &mut ChaCha8Rng::seed_from_u64(seeds.0))?;
    let ckpt = train_fold(
        model,
        Batch::new(&train_x, &train_y)?,
        Batch::new(&val_x, &val_y)?,
        &run.training.encoder.train_config(seeds.1),
    )
    .map_err(|e| Error::Fold { fold: modality.to_string(), reason: e.to_string() })?;
    log_curve(id, modality.name(), &ckpt.curve);
    Ok((ckpt.model, ckpt.curve))
}

fn train_intermediate(
    id: &str,
    bundle: &FoldModel,
    variant: IntermediateVariant,
    cohort: &Cohort,
    split: &Split,
    run: &RunConfig,
    seeds: (u64, u64),
) -> Result<(IntermediateFusionModel, Vec<EpochRecord>)> {
    let labels = cohort.labels()?;
    let train_x = bundle.fusion_samples(cohort, &split.train, variant)?;
    let val_x = bundle.fusion_samples(cohort, &split.val, variant)?;
    let (train_y, val_y) = (labels_of(labels, &split.train), labels_of(labels, &split.val));
    let train_refs: Vec<&FusionSample> = train_x.iter().collect();
    let val_refs: Vec<&FusionSample> = val_x.iter().collect();
    let model = IntermediateFusionModel::new(&bundle.architecture.fusion, &mut ChaCha8Rng::seed_from_u64(seeds.0))?;
    let name = match variant {
        IntermediateVariant::AllModalities => "fusion",
        IntermediateVariant::WithoutRadiology => "fusion_without_radiology",
    };
    let ckpt = train_fold(
        model,
        Batch::new(&train_refs, &train_y)?,
        Batch::new(&val_refs, &val_y)?,
        &run.training.fusion_schedule().train_config(seeds.1),
    )
    .map_err(|e| Error::Fold { fold: name.into(), reason: e.to_string() })?;
    log_curve(id, name, &ckpt.curve);
    Ok((ckpt.model, ckpt.curve))
}

/// Trains every model of one split. `index` decorrelates seeds across splits.
pub fn fit_split(
    cohort: &Cohort,
    schema: &ClinicalSchema,
    architecture: &Architecture,
    run: &RunConfig,
    split: &Split,
    index: usize,
    without_radiology: bool,
) -> Result<TrainedFold> {
    let labels = cohort.labels()?;
    let seed = |component| derive_seed(run.training.seed, index, component);
    let train_records: Vec<_> = split.train.iter().map(|&i| cohort.records[i].clone()).collect();
    let encoder = ClinicalEncoder::fit(schema.clone(), &train_records)?;
    let clinical = fit_clinical_cox(encoder, cohort, &split.train, &labels_of(labels, &split.train), &run.training.cph)?;

    let mut bundle = FoldModel::blank(split.id.clone(), architecture.clone(), clinical, false)?;
    let mut curves = FoldCurves::default();
    (bundle.pathology, curves.pathology) =
        train_pooling(&split.id, Modality::Pathology, &architecture.pathology, cohort, split, run, (seed(0), seed(1)))?;
    (bundle.radiology, curves.radiology) =
        train_pooling(&split.id, Modality::Radiology, &architecture.radiology, cohort, split, run, (seed(2), seed(3)))?;
    (bundle.fusion, curves.fusion) =
        train_intermediate(&split.id, &bundle, IntermediateVariant::AllModalities, cohort, split, run, (seed(4), seed(5)))?;
    if without_radiology {
        let (m, c) =
            train_intermediate(&split.id, &bundle, IntermediateVariant::WithoutRadiology, cohort, split, run, (seed(6), seed(7)))?;
        bundle.fusion_without_radiology = Some(m);
        curves.fusion_without_radiology = c;
    }
    Ok(TrainedFold { model: bundle, curves })
}

fn require_modalities(cohort: &Cohort, subjects: &[usize], modalities: &[Modality]) -> Result<()> {
    for &i in subjects {
        for &m in modalities {
            if m != Modality::Clinical && cohort.imaging(m)[i].is_none() {
                return Err(Error::MissingModality { case_id: cohort.records[i].case_id.clone(), modality: m.to_string() });
            }
        }
    }
    Ok(())
}

pub fn late_ensemble(models: &[&FoldModel], aggregate_pooling: bool) -> LateFusionEnsemble {
    LateFusionEnsemble {
        clinical: models.iter().map(|m| m.clinical.clone()).collect(),
        pathology: models.iter().map(|m| m.pathology.clone()).collect(),
        radiology: models.iter().map(|m| m.radiology.clone()).collect(),
        aggregate_pooling,
    }
}

/// Late-fusion log-risks of `subjects` under one grid cell.
pub fn late_log_risks(
    ensemble: &LateFusionEnsemble,
    cohort: &Cohort,
    subjects: &[usize],
    combination: Combination,
    weight: Aggregation,
    score: Aggregation,
) -> Result<Vec<f64>> {
    let aggregated = ensemble.aggregated(weight)?;
    subjects
        .iter()
        .map(|&i| {
            let input = LateFusionInput {
                clinical: Some(&cohort.records[i]),
                pathology: cohort.pathology[i].as_ref(),
                radiology: cohort.radiology[i].as_ref(),
            };
            aggregated.fold_scores(&input)?.fuse(combination, score)
        })
        .collect()
}

/// Ensemble log-risks of `subjects` under the configured fusion path.
pub fn ensemble_log_risks(models: &[&FoldModel], cohort: &Cohort, subjects: &[usize], settings: &FusionSettings) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(Error::Empty);
    }
    if !settings.mask_missing {
        let needed = match settings.kind {
            FusionKind::Intermediate => &Modality::ALL[..],
            FusionKind::Late => settings.modality_combination.modalities(),
        };
        require_modalities(cohort, subjects, needed)?;
    }
    match settings.kind {
        FusionKind::Intermediate => {
            let per_model: Vec<Vec<f64>> = models
                .par_iter()
                .map(|m| m.intermediate_log_risks(cohort, subjects, IntermediateVariant::AllModalities))
                .collect::<Result<_>>()?;
            (0..subjects.len())
                .map(|s| ensemble_intermediate(&per_model.iter().map(|lr| lr[s]).collect::<Vec<_>>()))
                .collect()
        }
        FusionKind::Late => late_log_risks(
            &late_ensemble(models, settings.aggregate_pooling),
            cohort,
            subjects,
            settings.modality_combination,
            settings.weight_agg,
            settings.score_agg,
        ),
    }
}

pub fn predict(models: &[&FoldModel], cohort: &Cohort, settings: &FusionSettings) -> Result<Vec<Prediction>> {
    let subjects: Vec<usize> = (0..cohort.len()).collect();
    let lrs = ensemble_log_risks(models, cohort, &subjects, settings)?;
    cohort
        .records
        .iter()
        .zip(lrs)
        .map(|(r, lr)| Ok(Prediction { case_id: r.case_id.clone(), log_risk: lr, ttr: RiskScore::from_log_risk(lr)?.ttr }))
        .collect()
}

fn events(labels: &[SurvivalLabel]) -> Vec<bool> {
    labels.iter().map(|l| l.event).collect()
}

/// Plain k-fold training: one bundle per fold, each scored on its own
/// validation fold with the configured fusion path.
#[derive(Debug, Clone)]
pub struct KFoldRun {
    pub plan: FoldPlan,
    pub folds: Vec<TrainedFold>,
    pub summary: MetricsSummary,
}

impl KFoldRun {
    pub fn models(&self) -> Vec<&FoldModel> {
        self.folds.iter().map(|f| &f.model).collect()
    }
}

pub fn train_kfold(cohort: &Cohort, schema: &ClinicalSchema, run: &RunConfig) -> Result<KFoldRun> {
    let labels = cohort.labels()?;
    let ev = events(labels);
    let plan = FoldPlan::plain(cohort.len(), run.cv.k, run.training.seed, run.cv.stratify.then_some(&ev[..]))?;
    let architecture = Architecture::infer(run, schema, cohort)?;
    let index = |s: &Split| plan.splits.iter().position(|p| p.id == s.id).expect("split of plan");
    let folds = run_kfold_train(labels, &plan, |split| fit_split(cohort, schema, &architecture, run, split, index(split), false))?;
    let scores = run_splits(&plan, |split| {
        let lrs = ensemble_log_risks(&[&folds[index(split)].model], cohort, &split.val, &run.fusion)?;
        concordance_index(&lrs, &labels_of(labels, &split.val))
    })?;
    Ok(KFoldRun { summary: summarize(&scores)?, plan, folds })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub label: String,
    /// One summary per `GRID_SETTINGS` column.
    pub cells: Vec<MetricsSummary>,
}

/// Nested cross-validation over the late-fusion grid and the two
/// intermediate-fusion variants.
#[derive(Debug, Clone)]
pub struct NestedRun {
    pub plan: FoldPlan,
    /// One bundle per split, in plan order.
    pub folds: Vec<TrainedFold>,
    /// Six rows in `Combination::ALL` order; one C-index per outer fold,
    /// from the ensemble of that fold's inner models.
    pub late: Vec<GridRow>,
    /// C+P then C+P+R; one C-index per inner model on its outer test set.
    pub intermediate: Vec<GridRow>,
    /// The configured model's summary.
    pub headline: MetricsSummary,
    pub headline_label: String,
}

pub fn intermediate_label(variant: IntermediateVariant) -> &'static str {
    match variant {
        IntermediateVariant::WithoutRadiology => "Intermediate C+P",
        IntermediateVariant::AllModalities => "Intermediate C+P+R",
    }
}

pub fn run_nested_grid(cohort: &Cohort, schema: &ClinicalSchema, run: &RunConfig) -> Result<NestedRun> {
    let labels = cohort.labels()?;
    let ev = events(labels);
    let plan = FoldPlan::nested(cohort.len(), run.cv.outer_k, run.cv.inner_k, run.training.seed, run.cv.stratify.then_some(&ev[..]))?;
    plan.check_events(labels)?;
    let architecture = Architecture::infer(run, schema, cohort)?;
    let index = |s: &Split| plan.splits.iter().position(|p| p.id == s.id).expect("split of plan");
    let trained = run_splits(&plan, |split| fit_split(cohort, schema, &architecture, run, split, index(split), true))?;

    let mut intermediate = Vec::new();
    for variant in [IntermediateVariant::WithoutRadiology, IntermediateVariant::AllModalities] {
        let scores = run_splits(&plan, |split| {
            let lrs = trained[index(split)].model.intermediate_log_risks(cohort, &split.test, variant)?;
            concordance_index(&lrs, &labels_of(labels, &split.test))
        })?;
        let summary = summarize(&scores)?;
        intermediate.push(GridRow { label: intermediate_label(variant).into(), cells: vec![summary; GRID_SETTINGS.len()] });
    }

    // cells[outer][combination][setting]
    let per_outer: Vec<Vec<Vec<f64>>> = (0..plan.outer_k)
        .into_par_iter()
        .map(|o| {
            let group = plan.outer_group(o);
            let models: Vec<&FoldModel> = group.iter().map(|s| &trained[index(s)].model).collect();
            let test = &group[0].test;
            let test_labels = labels_of(labels, test);
            let ensemble = late_ensemble(&models, run.fusion.aggregate_pooling);
            Combination::ALL
                .iter()
                .map(|&c| {
                    GRID_SETTINGS
                        .iter()
                        .map(|&(w, s)| concordance_index(&late_log_risks(&ensemble, cohort, test, c, w, s)?, &test_labels))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Fold { fold: format!("outer{o}"), reason: e.to_string() })
        })
        .collect::<Result<_>>()?;
    let late = Combination::ALL
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let cells = (0..GRID_SETTINGS.len())
                .map(|si| summarize(&per_outer.iter().map(|o| o[ci][si]).collect::<Vec<_>>()))
                .collect::<Result<_>>()?;
            Ok(GridRow { label: c.label().into(), cells })
        })
        .collect::<Result<Vec<_>>>()?;

    let (headline, headline_label) = match run.fusion.kind {
        FusionKind::Intermediate => (intermediate[1].cells[0].clone(), intermediate[1].label.clone()),
        FusionKind::Late => {
            let ci = Combination::ALL.iter().position(|&c| c == run.fusion.modality_combination).expect("known row");
            let si = GRID_SETTINGS.iter().position(|&s| s == (run.fusion.weight_agg, run.fusion.score_agg)).expect("known column");
            let label = format!("{} {}", late[ci].label, grid_column(run.fusion.weight_agg, run.fusion.score_agg));
            (late[ci].cells[si].clone(), label)
        }
    };
    Ok(NestedRun { plan, folds: trained, late, intermediate, headline, headline_label })
}

impl NestedRun {
    pub fn best_late(&self) -> f64 {
        self.late.iter().flat_map(|r| r.cells.iter().map(|c| c.mean)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_grid_csv(&self, w: &mut impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["model".to_string()];
        for &(wm, sm) in &GRID_SETTINGS {
            let col = grid_column(wm, sm);
            header.push(format!("{col}_mean"));
            header.push(format!("{col}_sigma"));
        }
        out.write_record(&header)?;
        for row in self.late.iter().chain(&self.intermediate) {
            let mut record = vec![row.label.clone()];
            for c in &row.cells {
                record.push(format_significant(c.mean, 9));
                record.push(format_significant(c.sigma, 9));
            }
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn write_curves_csv(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for r in curve {
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), r.val_loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
