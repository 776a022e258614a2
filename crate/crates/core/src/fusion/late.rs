use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoders::{ClinicalEncoder, ClinicalRecord, MilCoxModel, Modality};
use crate::error::{Error, Result};
use crate::nn::{Matrix, Module};
use crate::survival::{predict_log_risk, CoxRegressor, RiskScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Median,
    Mean,
}

impl Aggregation {
    pub const ALL: [Aggregation; 2] = [Aggregation::Median, Aggregation::Mean];

    pub fn short(self) -> &'static str {
        match self {
            Aggregation::Median => "med",
            Aggregation::Mean => "avg",
        }
    }
}

/// Median (mean of the two middle values for even counts) or mean. The mean
/// is taken as offsets from the first value, so equal inputs reduce exactly.
pub fn aggregate(values: &[f64], mode: Aggregation) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(match mode {
        Aggregation::Mean => {
            let x0 = values[0];
            x0 + values[1..].iter().map(|v| v - x0).sum::<f64>() / values.len() as f64
        }
        Aggregation::Median => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            if n % 2 == 1 {
                sorted[n / 2]
            } else {
                let (a, b) = (sorted[n / 2 - 1], sorted[n / 2]);
                if a == b {
                    a
                } else {
                    (a + b) / 2.0
                }
            }
        }
    })
}

/// Fold ensemble of intermediate-fusion log-risks: the arithmetic mean.
pub fn ensemble_intermediate(log_risks: &[f64]) -> Result<f64> {
    aggregate(log_risks, Aggregation::Mean)
}

/// Combines per-modality log-risks.
pub fn late_fuse(modality_log_risks: &[f64], mode: Aggregation) -> Result<f64> {
    if modality_log_risks.len() == 1 {
        return Ok(modality_log_risks[0]);
    }
    aggregate(modality_log_risks, mode)
}

/// Element-wise median or mean across identically shaped models. The mean is
/// accumulated as offsets from the first model so identical inputs return
/// that model bit-exactly.
pub fn aggregate_model_weights<M: Module + Clone>(models: &[M], mode: Aggregation) -> Result<M> {
    let first = models.first().ok_or(Error::Empty)?;
    let reference = first.named_values();
    let all: Vec<Vec<(String, Matrix)>> = models.iter().map(Module::named_values).collect();
    for values in &all[1..] {
        if values.len() != reference.len()
            || values.iter().zip(&reference).any(|((n0, m0), (n1, m1))| n0 != n1 || m0.shape() != m1.shape())
        {
            return Err(Error::Shape("models being aggregated differ in tensor layout".into()));
        }
    }
    let n = models.len() as f64;
    let mut column = vec![0.0; models.len()];
    let mut out = Vec::with_capacity(reference.len());
    for (t, (name, base)) in reference.iter().enumerate() {
        let mut agg = base.clone();
        for (i, v) in agg.data_mut().iter_mut().enumerate() {
            match mode {
                Aggregation::Mean => {
                    let x0 = *v;
                    *v = x0 + all[1..].iter().map(|m| m[t].1.data()[i] - x0).sum::<f64>() / n;
                }
                Aggregation::Median => {
                    for (c, m) in column.iter_mut().zip(&all) {
                        *c = m[t].1.data()[i];
                    }
                    *v = aggregate(&column, Aggregation::Median)?;
                }
            }
        }
        out.push((name.clone(), agg));
    }
    let mut model = first.clone();
    model.load_named_values(&out)?;
    Ok(model)
}

/// The late-fusion model rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    C,
    P,
    R,
    Cp,
    CprAvg,
    CprMed,
}

impl Combination {
    pub const ALL: [Combination; 6] =
        [Combination::C, Combination::P, Combination::R, Combination::Cp, Combination::CprAvg, Combination::CprMed];

    pub fn modalities(self) -> &'static [Modality] {
        use Modality::*;
        match self {
            Combination::C => &[Clinical],
            Combination::P => &[Pathology],
            Combination::R => &[Radiology],
            Combination::Cp => &[Clinical, Pathology],
            Combination::CprAvg | Combination::CprMed => &[Clinical, Pathology, Radiology],
        }
    }

    /// How modality scores are combined. Two-modality median equals the mean.
    pub fn fuse_mode(self) -> Aggregation {
        match self {
            Combination::CprAvg => Aggregation::Mean,
            _ => Aggregation::Median,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Combination::C => "C Only",
            Combination::P => "P Only",
            Combination::R => "R Only",
            Combination::Cp => "C+P",
            Combination::CprAvg => "C+P+R (AVG)",
            Combination::CprMed => "C+P+R (MED)",
        }
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Clinical Cox regressor with the encoder fitted on its training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalCoxModel {
    pub encoder: ClinicalEncoder,
    pub regressor: CoxRegressor,
}

impl ClinicalCoxModel {
    pub fn log_risk(&self, record: &ClinicalRecord) -> Result<f64> {
        predict_log_risk(&self.regressor, &self.encoder.dummy(record)?)
    }
}

/// Raw per-subject inputs for late fusion.
#[derive(Debug, Clone, Copy, Default)]
pub struct LateFusionInput<'a> {
    pub clinical: Option<&'a ClinicalRecord>,
    pub pathology: Option<&'a Matrix>,
    pub radiology: Option<&'a Matrix>,
}

/// Per-fold log-risks for each modality that had input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FoldScores {
    pub clinical: Option<Vec<f64>>,
    pub pathology: Option<Vec<f64>>,
    pub radiology: Option<Vec<f64>>,
}

impl FoldScores {
    pub fn get(&self, modality: Modality) -> Option<&[f64]> {
        match modality {
            Modality::Clinical => self.clinical.as_deref(),
            Modality::Pathology => self.pathology.as_deref(),
            Modality::Radiology => self.radiology.as_deref(),
        }
    }

    /// Folds reduce by `score_mode`; modalities by the combination's rule.
    /// Absent modalities are left out; at least one must remain.
    pub fn fuse(&self, combination: Combination, score_mode: Aggregation) -> Result<f64> {
        let mut per_modality = Vec::with_capacity(3);
        for &m in combination.modalities() {
            if let Some(folds) = self.get(m) {
                per_modality.push(aggregate(folds, score_mode)?);
            }
        }
        if per_modality.is_empty() {
            return Err(Error::NoModalities);
        }
        late_fuse(&per_modality, combination.fuse_mode())
    }
}

/// Independently trained per-modality regressors from each fold.
///
/// Clinical regressors keep their fold coefficients. Neural heads are
/// weight-aggregated; each fold's pooling encoder still produces that fold's
/// pooled feature unless `aggregate_pooling` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct LateFusionEnsemble {
    pub clinical: Vec<ClinicalCoxModel>,
    pub pathology: Vec<MilCoxModel>,
    pub radiology: Vec<MilCoxModel>,
    pub aggregate_pooling: bool,
}

/// Ensemble with neural weights aggregated under one mode.
#[derive(Debug, Clone)]
pub struct AggregatedLateModel<'a> {
    ensemble: &'a LateFusionEnsemble,
    pathology: Option<MilCoxModel>,
    radiology: Option<MilCoxModel>,
}

fn aggregate_mil(models: &[MilCoxModel], mode: Aggregation, pooling: bool) -> Result<Option<MilCoxModel>> {
    if models.is_empty() {
        return Ok(None);
    }
    if pooling {
        return aggregate_model_weights(models, mode).map(Some);
    }
    let heads: Vec<_> = models.iter().map(|m| m.head.clone()).collect();
    let mut out = models[0].clone();
    out.head = aggregate_model_weights(&heads, mode)?;
    Ok(Some(out))
}

impl LateFusionEnsemble {
    pub fn aggregated(&self, weight_mode: Aggregation) -> Result<AggregatedLateModel<'_>> {
        Ok(AggregatedLateModel {
            ensemble: self,
            pathology: aggregate_mil(&self.pathology, weight_mode, self.aggregate_pooling)?,
            radiology: aggregate_mil(&self.radiology, weight_mode, self.aggregate_pooling)?,
        })
    }
}

impl AggregatedLateModel<'_> {
    fn mil_scores(&self, modality: Modality, bag: &Matrix) -> Result<Vec<f64>> {
        let (folds, aggregated) = match modality {
            Modality::Pathology => (&self.ensemble.pathology, &self.pathology),
            Modality::Radiology => (&self.ensemble.radiology, &self.radiology),
            Modality::Clinical => unreachable!("clinical scores are not pooled"),
        };
        let Some(aggregated) = aggregated else {
            return Err(Error::MissingModality { case_id: String::new(), modality: modality.to_string() });
        };
        if self.ensemble.aggregate_pooling {
            return Ok(vec![aggregated.log_risk(bag)?]);
        }
        folds
            .iter()
            .map(|fold| {
                let pooled = fold.pooling.pool(bag)?;
                Ok(aggregated.head.forward(&Matrix::row_vector(&pooled))?.get(0, 0))
            })
            .collect()
    }

    pub fn fold_scores(&self, input: &LateFusionInput<'_>) -> Result<FoldScores> {
        let clinical = match input.clinical {
            Some(r) if !self.ensemble.clinical.is_empty() => {
                Some(self.ensemble.clinical.iter().map(|m| m.log_risk(r)).collect::<Result<Vec<_>>>()?)
            }
            _ => None,
        };
        let pathology = match input.pathology {
            Some(bag) if self.pathology.is_some() => Some(self.mil_scores(Modality::Pathology, bag)?),
            _ => None,
        };
        let radiology = match input.radiology {
            Some(bag) if self.radiology.is_some() => Some(self.mil_scores(Modality::Radiology, bag)?),
            _ => None,
        };
        Ok(FoldScores { clinical, pathology, radiology })
    }
}

pub fn predict_late(
    ensemble: &LateFusionEnsemble,
    input: &LateFusionInput<'_>,
    combination: Combination,
    weight_mode: Aggregation,
    score_mode: Aggregation,
) -> Result<RiskScore> {
    let scores = ensemble.aggregated(weight_mode)?.fold_scores(input)?;
    RiskScore::from_log_risk(scores.fuse(combination, score_mode)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{ClinicalSchema, PoolingConfig};
    use crate::nn::{Linear, Parameter};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate(&[1.0, 2.0, 9.0], Aggregation::Median).unwrap(), 2.0);
        assert_eq!(aggregate(&[1.0, 2.0, 9.0], Aggregation::Mean).unwrap(), 4.0);
        assert_eq!(aggregate(&[1.0, 2.0, 3.0, 10.0], Aggregation::Median).unwrap(), 2.5);
        assert_eq!(ensemble_intermediate(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(ensemble_intermediate(&[0.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(ensemble_intermediate(&[]), Err(Error::Empty)));
        assert_eq!(late_fuse(&[0.2, 0.5, 0.9], Aggregation::Median).unwrap(), 0.5);
        assert!((late_fuse(&[0.2, 0.5, 0.9], Aggregation::Mean).unwrap() - 1.6 / 3.0).abs() < 1e-15);
        assert_eq!(late_fuse(&[0.37], Aggregation::Mean).unwrap(), 0.37);
    }

    #[test]
    fn model_weight_aggregation() {
        let layer = |w: f64| Linear::from_parts(Matrix::filled(1, 1, w), vec![w]).unwrap();
        let models = [layer(1.0), layer(2.0), layer(9.0)];
        assert_eq!(aggregate_model_weights(&models, Aggregation::Median).unwrap(), layer(2.0));
        assert_eq!(aggregate_model_weights(&models, Aggregation::Mean).unwrap(), layer(4.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Linear::new(7, 3, &mut rng);
        let same = vec![m.clone(); 4];
        for mode in Aggregation::ALL {
            assert_eq!(aggregate_model_weights(&same, mode).unwrap(), m);
        }
        let other = Linear::new(6, 3, &mut rng);
        assert!(matches!(aggregate_model_weights(&[m, other], Aggregation::Mean), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_model_equals_mean_prediction_for_linear_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let heads: Vec<Linear> = (0..9).map(|_| Linear::new(5, 1, &mut rng)).collect();
        let x = Parameter::uniform(4, 5, 1.0, &mut rng).value;
        let mean = aggregate_model_weights(&heads, Aggregation::Mean).unwrap();
        let direct = mean.forward(&x).unwrap();
        for r in 0..4 {
            let avg: f64 = heads.iter().map(|h| h.forward(&x).unwrap().get(r, 0)).sum::<f64>() / 9.0;
            assert!((avg - direct.get(r, 0)).abs() < 1e-10);
        }
    }

    fn tiny_pooling() -> PoolingConfig {
        PoolingConfig { input_dim: 4, reduction_dims: vec![3], scorer_hidden: 2, top_k: Some(2) }
    }

    #[test]
    fn single_fold_matches_regressor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mil = MilCoxModel::new(&tiny_pooling(), &mut rng).unwrap();
        mil.head = Linear::new(3, 1, &mut rng);
        let ensemble =
            LateFusionEnsemble { clinical: vec![], pathology: vec![mil.clone()], radiology: vec![], aggregate_pooling: false };
        let bag = Parameter::uniform(3, 4, 1.0, &mut rng).value;
        let input = LateFusionInput { pathology: Some(&bag), ..Default::default() };
        for w in Aggregation::ALL {
            for s in Aggregation::ALL {
                let score = predict_late(&ensemble, &input, Combination::P, w, s).unwrap();
                let lr = mil.log_risk(&bag).unwrap();
                assert_eq!(score, RiskScore::from_log_risk(lr).unwrap());
            }
        }
        // Absent clinical input drops out of C+P, leaving P.
        let lr = mil.log_risk(&bag).unwrap();
        assert_eq!(predict_late(&ensemble, &input, Combination::Cp, Aggregation::Mean, Aggregation::Mean).unwrap().log_risk, lr);
        assert!(matches!(
            predict_late(&ensemble, &input, Combination::R, Aggregation::Mean, Aggregation::Mean),
            Err(Error::NoModalities)
        ));
    }

    #[test]
    fn identical_folds_make_aggregation_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mil = MilCoxModel::new(&tiny_pooling(), &mut rng).unwrap();
        mil.head = Linear::new(3, 1, &mut rng);
        let schema = ClinicalSchema::default();
        let records: Vec<ClinicalRecord> = (0..4)
            .map(|i| ClinicalRecord {
                case_id: format!("{i}"),
                age_at_rp: Some(55.0 + i as f64),
                isup_grade: Some(((i % 5) + 1).to_string()),
                ..Default::default()
            })
            .collect();
        let encoder = ClinicalEncoder::fit(schema.clone(), &records).unwrap();
        let clinical = ClinicalCoxModel {
            encoder,
            regressor: CoxRegressor::new((0..schema.dummy_width()).map(|i| 0.1 * i as f64).collect()),
        };
        let ensemble = LateFusionEnsemble {
            clinical: vec![clinical.clone(); 3],
            pathology: vec![mil.clone(); 3],
            radiology: vec![mil.clone(); 3],
            aggregate_pooling: false,
        };
        let bag = Parameter::uniform(5, 4, 1.0, &mut rng).value;
        let input = LateFusionInput { clinical: Some(&records[1]), pathology: Some(&bag), radiology: Some(&bag) };
        let c = clinical.log_risk(&records[1]).unwrap();
        let p = mil.log_risk(&bag).unwrap();
        for w in Aggregation::ALL {
            let scores = ensemble.aggregated(w).unwrap().fold_scores(&input).unwrap();
            assert_eq!(scores.pathology.as_deref(), Some(&[p, p, p][..]));
            assert_eq!(scores.fuse(Combination::C, Aggregation::Mean).unwrap(), c);
            assert_eq!(scores.fuse(Combination::CprMed, Aggregation::Median).unwrap(), aggregate(&[c, p, p], Aggregation::Median).unwrap());
            let clinical_only = FoldScores { clinical: scores.clinical.clone(), ..Default::default() };
            assert_eq!(clinical_only.fuse(Combination::CprMed, Aggregation::Mean).unwrap(), c);
            assert!(matches!(clinical_only.fuse(Combination::P, Aggregation::Mean), Err(Error::NoModalities)));
        }
    }
}
