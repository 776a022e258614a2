//! Seeded synthetic cohorts with a known log-risk, used as ground truth for
//! end-to-end checks.
//!
//! Each subject draws clinical attributes and two latent factors, one per
//! imaging modality. The true log-risk is `snr * h`, where `h` combines a
//! linear clinical term, both latents and optionally their product. Imaging
//! rows carry the latent along a fixed unit direction plus isotropic noise
//! of scale `1 / snr`, so `snr` sharpens both the hazard contrast and the
//! embeddings. Event times are exponential given the log-risk; censoring
//! times are uniform on a horizon calibrated by bisection.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::encoders::{ClinicalAttribute, ClinicalRecord, ClinicalSchema, Encoding};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::survival::SurvivalLabel;

/// Population age distribution used by the clinical risk term.
const AGE_MEAN: f64 = 63.0;
const AGE_STD: f64 = 7.0;
/// Events per month at zero log-risk.
const BASELINE_HAZARD: f64 = 1.0 / 60.0;
/// Largest realized-vs-target censoring gap accepted.
const CENSORING_TOLERANCE: f64 = 0.05;
const MAX_SPARSE_SUPPORT: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Fixes the signal directions and, with `subject_stream`, every draw.
    pub seed: u64,
    /// Independent subject draws under the same directions (held-out cohorts).
    pub subject_stream: u64,
    pub id_prefix: String,
    /// Coefficients over the dummy coding of the default schema, with age
    /// standardized by the population mean and spread.
    pub true_beta_clinical: Vec<f64>,
    pub pathology_weight: f64,
    pub radiology_weight: f64,
    /// Coefficient of the product of the two imaging latents.
    pub interaction_weight: f64,
    pub pathology_dim: usize,
    pub radiology_dim: usize,
    /// Radiology noise and signal live in columns `0..radiology_band`.
    pub radiology_band: usize,
    pub signal_to_noise: f64,
    pub censoring_rate_target: f64,
    /// Inclusive row-count ranges.
    pub patches_per_subject: (usize, usize),
    pub slices_per_subject: (usize, usize),
    /// Probability that a row carries the subject's latent.
    pub signal_row_fraction: f64,
    /// Probability that a binary attribute or the age is recorded as unknown.
    pub missing_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 200,
            seed: 0,
            subject_stream: 0,
            id_prefix: "case_".into(),
            true_beta_clinical: default_clinical_beta(),
            pathology_weight: 1.0,
            radiology_weight: 0.7,
            interaction_weight: 0.0,
            pathology_dim: 1024,
            radiology_dim: 65536,
            radiology_band: 1024,
            signal_to_noise: 4.0,
            censoring_rate_target: 0.3,
            patches_per_subject: (8, 16),
            slices_per_subject: (2, 4),
            signal_row_fraction: 0.5,
            missing_rate: 0.03,
        }
    }
}

/// Age, ISUP 2..5, pT stages after "2", then the five binary attributes.
pub fn default_clinical_beta() -> Vec<f64> {
    let mut beta = vec![0.25];
    beta.extend([0.2, 0.45, 0.7, 0.95]);
    beta.extend([0.0, 0.05, 0.1, 0.3, 0.35, 0.45, 0.5, 0.6]);
    beta.extend([0.3, 0.25, 0.35, 0.4, 0.25]);
    beta
}

impl SynthConfig {
    /// No attribute or latent affects the hazard.
    pub fn null(n_subjects: usize, seed: u64) -> Self {
        Self {
            n_subjects,
            seed,
            true_beta_clinical: vec![0.0; default_clinical_beta().len()],
            pathology_weight: 0.0,
            radiology_weight: 0.0,
            ..Self::default()
        }
    }

    /// Narrow embeddings for fast end-to-end runs.
    pub fn desk(n_subjects: usize, seed: u64) -> Self {
        Self {
            n_subjects,
            seed,
            pathology_dim: 32,
            radiology_dim: 48,
            radiology_band: 48,
            patches_per_subject: (4, 8),
            slices_per_subject: (2, 4),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let schema = ClinicalSchema::default();
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        if self.true_beta_clinical.len() != schema.dummy_width() {
            return bad(format!(
                "true_beta_clinical has {} entries, the default schema's dummy coding has {}",
                self.true_beta_clinical.len(),
                schema.dummy_width()
            ));
        }
        if !(self.signal_to_noise > 0.0) {
            return bad(format!("signal_to_noise must be positive, got {}", self.signal_to_noise));
        }
        if !(0.0..1.0).contains(&self.censoring_rate_target) {
            return bad(format!("censoring_rate_target must lie in [0, 1), got {}", self.censoring_rate_target));
        }
        if self.pathology_dim == 0 || self.radiology_dim == 0 {
            return bad("embedding widths must be positive".into());
        }
        if self.radiology_band == 0 || self.radiology_band > self.radiology_dim {
            return bad(format!("radiology_band must lie in 1..={}", self.radiology_dim));
        }
        for (name, (lo, hi)) in [("patches_per_subject", self.patches_per_subject), ("slices_per_subject", self.slices_per_subject)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} must be a non-empty range of positive counts, got {lo}..={hi}"));
            }
        }
        if !(0.0..=1.0).contains(&self.signal_row_fraction) || !(0.0..1.0).contains(&self.missing_rate) {
            return bad("signal_row_fraction and missing_rate must be probabilities".into());
        }
        let weights = [self.pathology_weight, self.radiology_weight, self.interaction_weight];
        if weights.iter().chain(&self.true_beta_clinical).any(|w| !w.is_finite()) {
            return bad("risk coefficients must be finite".into());
        }
        Ok(())
    }

    fn noise_scale(&self) -> f64 {
        1.0 / self.signal_to_noise
    }
}

/// Unit vector stored by its non-zero coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDirection {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseDirection {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDirections {
    pub pathology: Vec<f64>,
    pub radiology: SparseDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub case_ids: Vec<String>,
    pub log_risk: Vec<f64>,
    pub event_time: Vec<f64>,
    /// Infinite when no censoring was applied.
    pub censor_time: Vec<f64>,
    pub pathology_latent: Vec<f64>,
    pub radiology_latent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub records: Vec<ClinicalRecord>,
    pub pathology: Vec<Matrix>,
    pub radiology: Vec<Matrix>,
    pub labels: Vec<SurvivalLabel>,
    pub truth: GroundTruth,
    pub directions: SignalDirections,
}

impl SyntheticCohort {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn case_ids(&self) -> &[String] {
        &self.truth.case_ids
    }

    pub fn censored_fraction(&self) -> f64 {
        self.labels.iter().filter(|l| !l.event).count() as f64 / self.len() as f64
    }

    /// Same inputs with labels shuffled across subjects.
    pub fn with_permuted_labels(&self, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut out = self.clone();
        out.labels = order.iter().map(|&i| self.labels[i]).collect();
        out
    }
}

fn unit_normal(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn signal_directions(config: &SynthConfig) -> SignalDirections {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pathology = unit_normal(&mut rng, config.pathology_dim);
    let support = config.radiology_band.min(MAX_SPARSE_SUPPORT);
    let mut columns = sample(&mut rng, config.radiology_band, support).into_vec();
    columns.sort_unstable();
    let values = unit_normal(&mut rng, support);
    let radiology = SparseDirection { dim: config.radiology_dim, entries: columns.into_iter().zip(values).collect() };
    SignalDirections { pathology, radiology }
}

fn pick<'a>(rng: &mut ChaCha8Rng, options: &'a [&'a str], weights: &[f64]) -> &'a str {
    let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (o, w) in options.iter().zip(weights) {
        acc += w;
        if u < acc {
            return o;
        }
    }
    options[options.len() - 1]
}

const ISUP: [&str; 5] = ["1", "2", "3", "4", "5"];
const ISUP_WEIGHTS: [f64; 5] = [0.2, 0.3, 0.25, 0.15, 0.1];
const PT: [&str; 9] = ["2", "2a", "2b", "2c", "3", "3a", "3b", "3c", "4"];
const PT_WEIGHTS: [f64; 9] = [0.1, 0.1, 0.1, 0.2, 0.05, 0.2, 0.15, 0.05, 0.05];
const BINARY_YES: [f64; 5] = [0.15, 0.4, 0.3, 0.15, 0.2];

/// The complete record (no unknowns) behind a subject's clinical row.
fn draw_record(rng: &mut ChaCha8Rng, case_id: String) -> ClinicalRecord {
    let age: f64 = AGE_MEAN + AGE_STD * rng.sample::<f64, _>(StandardNormal);
    let mut r = ClinicalRecord {
        case_id,
        age_at_rp: Some((age * 10.0).round() / 10.0),
        isup_grade: Some(pick(rng, &ISUP, &ISUP_WEIGHTS).into()),
        pt_stage: Some(pick(rng, &PT, &PT_WEIGHTS).into()),
        ..Default::default()
    };
    let binaries = &ClinicalAttribute::ALL[3..];
    for (&a, &p) in binaries.iter().zip(&BINARY_YES) {
        let yes = rng.random::<f64>() < p;
        r.set_category(a, Some(if yes { "1" } else { "0" }.into()));
    }
    r
}

/// Dummy coding of a complete record with population-standardized age.
pub fn truth_covariates(record: &ClinicalRecord, schema: &ClinicalSchema) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(schema.dummy_width());
    for rule in &schema.attributes {
        match rule.encoding {
            Encoding::Numeric => {
                let v = record.numeric(rule.attribute).ok_or(Error::Config(format!("{} unknown", rule.attribute)))?;
                out.push((v - AGE_MEAN) / AGE_STD);
            }
            Encoding::OneHot => {
                let v = record.category(rule.attribute).ok_or(Error::Config(format!("{} unknown", rule.attribute)))?;
                if !rule.categories.iter().any(|c| c == v) {
                    return Err(Error::UnknownCategory { attribute: rule.attribute.to_string(), value: v.into() });
                }
                out.extend(rule.categories[1..].iter().map(|c| f64::from(u8::from(c == v))));
            }
        }
    }
    Ok(out)
}

fn hide_some(rng: &mut ChaCha8Rng, record: &mut ClinicalRecord, rate: f64) {
    if rng.random::<f64>() < rate {
        record.age_at_rp = None;
    }
    for &a in &ClinicalAttribute::ALL[3..] {
        if rng.random::<f64>() < rate {
            record.set_category(a, None);
        }
    }
}

fn row_count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.sample(Uniform::new_inclusive(lo, hi).expect("validated range"))
}

/// Rows that either carry `latent * direction` or not, plus noise in
/// columns `0..band`. At least one row carries the signal.
fn imaging_rows(
    rng: &mut ChaCha8Rng,
    rows: usize,
    dim: usize,
    band: usize,
    direction: &[(usize, f64)],
    latent: f64,
    config: &SynthConfig,
) -> Matrix {
    let mut m = Matrix::zeros(rows, dim);
    let forced = rng.random_range(0..rows);
    let scale = config.noise_scale();
    for r in 0..rows {
        let carries = r == forced || rng.random::<f64>() < config.signal_row_fraction;
        let row = m.row_mut(r);
        for x in &mut row[..band] {
            *x = scale * rng.sample::<f64, _>(StandardNormal);
        }
        if carries {
            for &(i, v) in direction {
                row[i] += latent * v;
            }
        }
        // Stored at the on-disk precision so written cohorts reload exactly.
        for x in row.iter_mut() {
            *x = *x as f32 as f64;
        }
    }
    m
}

/// Uniform censoring `C_i = horizon * v_i`, with the horizon chosen by
/// bisection so the censored fraction approaches `target`.
fn calibrate_censoring(event_times: &[f64], draws: &[f64], target: f64) -> Result<Vec<f64>> {
    let n = event_times.len() as f64;
    if target == 0.0 {
        return Ok(vec![f64::INFINITY; event_times.len()]);
    }
    let fraction = |log_h: f64| {
        let h = log_h.exp();
        event_times.iter().zip(draws).filter(|(t, v)| **t > h * **v).count() as f64 / n
    };
    let (min_t, max_t) = event_times.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &t| (a.min(t), b.max(t)));
    // Censored fraction falls as the horizon grows.
    let (mut lo, mut hi) = (min_t.ln() - 30.0, max_t.ln() + 30.0);
    let mut best = (f64::INFINITY, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = fraction(mid);
        if (f - target).abs() < best.0 {
            best = ((f - target).abs(), mid);
        }
        if f > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > CENSORING_TOLERANCE {
        return Err(Error::CensoringUnreachable { target, realized: target + best.0 });
    }
    let h = best.1.exp();
    Ok(draws.iter().map(|v| h * v).collect())
}

pub fn generate_cohort(config: &SynthConfig) -> Result<SyntheticCohort> {
    config.validate()?;
    let schema = ClinicalSchema::default();
    let directions = signal_directions(config);
    let dense_pathology: Vec<(usize, f64)> = directions.pathology.iter().copied().enumerate().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1 + config.subject_stream);

    let n = config.n_subjects;
    let mut records = Vec::with_capacity(n);
    let mut pathology = Vec::with_capacity(n);
    let mut radiology = Vec::with_capacity(n);
    let mut truth = GroundTruth {
        case_ids: Vec::with_capacity(n),
        log_risk: Vec::with_capacity(n),
        event_time: Vec::with_capacity(n),
        censor_time: Vec::new(),
        pathology_latent: Vec::with_capacity(n),
        radiology_latent: Vec::with_capacity(n),
    };
    let mut censor_draws = Vec::with_capacity(n);
    for i in 0..n {
        let case_id = format!("{}{i:04}", config.id_prefix);
        let mut record = draw_record(&mut rng, case_id.clone());
        let clinical: f64 = truth_covariates(&record, &schema)?.iter().zip(&config.true_beta_clinical).map(|(x, b)| x * b).sum();
        hide_some(&mut rng, &mut record, config.missing_rate);
        let u_p: f64 = rng.sample(StandardNormal);
        let u_r: f64 = rng.sample(StandardNormal);
        let h = clinical + config.pathology_weight * u_p + config.radiology_weight * u_r + config.interaction_weight * u_p * u_r;
        let log_risk = config.signal_to_noise * h;

        let rows = row_count(&mut rng, config.patches_per_subject);
        pathology.push(imaging_rows(&mut rng, rows, config.pathology_dim, config.pathology_dim, &dense_pathology, u_p, config));
        let rows = row_count(&mut rng, config.slices_per_subject);
        radiology.push(imaging_rows(
            &mut rng,
            rows,
            config.radiology_dim,
            config.radiology_band,
            &directions.radiology.entries,
            u_r,
            config,
        ));

        let e: f64 = 1.0 - rng.random::<f64>();
        let event_time = -e.ln() / (BASELINE_HAZARD * log_risk.exp());
        censor_draws.push(1.0 - rng.random::<f64>());

        records.push(record);
        truth.case_ids.push(case_id);
        truth.log_risk.push(log_risk);
        truth.event_time.push(event_time);
        truth.pathology_latent.push(u_p);
        truth.radiology_latent.push(u_r);
    }
    if truth.event_time.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::Config("log-risk range too wide for representable event times".into()));
    }
    truth.censor_time = calibrate_censoring(&truth.event_time, &censor_draws, config.censoring_rate_target)?;
    let labels = truth
        .event_time
        .iter()
        .zip(&truth.censor_time)
        .map(|(&t, &c)| SurvivalLabel::new(t.min(c), t <= c))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCohort { records, pathology, radiology, labels, truth, directions })
}

/// Gaussian covariates with an exact proportional-hazards outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateCohort {
    pub covariates: Vec<Vec<f64>>,
    pub labels: Vec<SurvivalLabel>,
    pub log_risk: Vec<f64>,
}

pub fn generate_covariate_cohort(n: usize, beta: &[f64], censoring_rate_target: f64, seed: u64) -> Result<CovariateCohort> {
    if n == 0 || beta.is_empty() {
        return Err(Error::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covariates = Vec::with_capacity(n);
    let mut log_risk = Vec::with_capacity(n);
    let mut event_times = Vec::with_capacity(n);
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = beta.iter().map(|_| rng.sample(StandardNormal)).collect();
        let h: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        let e: f64 = 1.0 - rng.random::<f64>();
        event_times.push(-e.ln() / (BASELINE_HAZARD * h.exp()));
        draws.push(1.0 - rng.random::<f64>());
        covariates.push(x);
        log_risk.push(h);
    }
    let censor = calibrate_censoring(&event_times, &draws, censoring_rate_target)?;
    let labels = event_times
        .iter()
        .zip(&censor)
        .map(|(&t, &c)| SurvivalLabel::new(t.min(c), t <= c))
        .collect::<Result<Vec<_>>>()?;
    Ok(CovariateCohort { covariates, labels, log_risk })
}

/// Harrell's C by enumerating every ordered pair.
pub fn oracle_cindex(log_risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64> {
    if log_risks.len() != labels.len() {
        return Err(Error::LengthMismatch { expected: labels.len(), actual: log_risks.len() });
    }
    if log_risks.iter().any(|h| h.is_nan()) {
        return Err(Error::NonFinite);
    }
    let (mut comparable, mut score) = (0u64, 0u64);
    for (i, a) in labels.iter().enumerate() {
        for (j, b) in labels.iter().enumerate() {
            let earlier = a.event && (a.time_months < b.time_months || (a.time_months == b.time_months && !b.event));
            if i == j || !earlier {
                continue;
            }
            comparable += 1;
            // Doubled so that ties stay integral.
            score += match log_risks[i].partial_cmp(&log_risks[j]).expect("not NaN") {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    if comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(score as f64 / (2 * comparable) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::concordance_index;

    fn label(t: f64, e: bool) -> SurvivalLabel {
        SurvivalLabel::new(t, e).unwrap()
    }

    #[test]
    fn oracle_pair_arithmetic() {
        let labels = [label(1.0, true), label(2.0, false)];
        assert_eq!(oracle_cindex(&[1.0, 0.0], &labels).unwrap(), 1.0);
        assert_eq!(oracle_cindex(&[0.0, 1.0], &labels).unwrap(), 0.0);
        assert_eq!(oracle_cindex(&[0.3, 0.3], &labels).unwrap(), 0.5);
        let tied = [label(2.0, true), label(2.0, false)];
        assert_eq!(oracle_cindex(&[1.0, 0.0], &tied).unwrap(), 1.0);
        let both = [label(2.0, true), label(2.0, true)];
        assert!(matches!(oracle_cindex(&[1.0, 0.0], &both), Err(Error::NoComparablePairs)));
    }

    fn desk_cohort(n: usize, seed: u64) -> SyntheticCohort {
        generate_cohort(&SynthConfig::desk(n, seed)).unwrap()
    }

    #[test]
    fn deterministic_and_consistent() {
        let a = desk_cohort(60, 3);
        assert_eq!(a, desk_cohort(60, 3));
        assert_ne!(a.labels, desk_cohort(60, 4).labels);
        for i in 0..a.len() {
            let (t, c) = (a.truth.event_time[i], a.truth.censor_time[i]);
            assert_eq!(a.labels[i].time_months, t.min(c));
            assert_eq!(a.labels[i].event, t <= c);
            assert!(a.pathology[i].is_finite() && a.radiology[i].is_finite());
            assert!((4..=8).contains(&a.pathology[i].rows()) && (2..=4).contains(&a.radiology[i].rows()));
        }
    }

    #[test]
    fn directions_are_unit_and_sparse() {
        let d = signal_directions(&SynthConfig::default());
        assert!((d.pathology.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
        assert!((d.radiology.norm() - 1.0).abs() < 1e-9);
        assert!(d.radiology.entries.len() <= MAX_SPARSE_SUPPORT);
        assert!(d.radiology.entries.iter().all(|(i, _)| *i < 1024));
    }

    #[test]
    fn censoring_hits_target() {
        for target in [0.0, 0.2, 0.5] {
            let c = generate_cohort(&SynthConfig { censoring_rate_target: target, ..SynthConfig::desk(300, 1) }).unwrap();
            assert!((c.censored_fraction() - target).abs() <= CENSORING_TOLERANCE, "{target}: {}", c.censored_fraction());
        }
    }

    #[test]
    fn high_snr_truth_is_nearly_perfectly_concordant() {
        // The log-risk scales with snr, so the limit is approached at finite snr.
        let c = generate_cohort(&SynthConfig { signal_to_noise: 50.0, ..SynthConfig::desk(500, 2) }).unwrap();
        assert!(concordance_index(&c.truth.log_risk, &c.labels).unwrap() > 0.97);
    }

    #[test]
    fn truth_concordance_grows_with_snr() {
        let ci = |snr: f64| {
            let c = generate_cohort(&SynthConfig { signal_to_noise: snr, ..SynthConfig::desk(400, 6) }).unwrap();
            concordance_index(&c.truth.log_risk, &c.labels).unwrap()
        };
        let levels: Vec<f64> = [0.5, 1.0, 2.0, 4.0].into_iter().map(ci).collect();
        assert!(levels.windows(2).all(|w| w[0] <= w[1]), "{levels:?}");
        assert!(levels[3] > 0.9, "{levels:?}");
    }

    #[test]
    fn null_cohort_is_uninformative() {
        let c = generate_cohort(&SynthConfig { pathology_dim: 8, radiology_dim: 8, radiology_band: 8, ..SynthConfig::null(500, 5) }).unwrap();
        assert!(c.truth.log_risk.iter().all(|&h| h == 0.0));
        let scores: Vec<f64> = c.truth.pathology_latent.clone();
        let ci = concordance_index(&scores, &c.labels).unwrap();
        assert!((0.4..=0.6).contains(&ci), "{ci}");
    }

    #[test]
    fn covariate_cohort_has_requested_censoring() {
        let c = generate_covariate_cohort(400, &[0.8, -0.5], 0.2, 7).unwrap();
        let censored = c.labels.iter().filter(|l| !l.event).count() as f64 / 400.0;
        assert!((censored - 0.2).abs() <= CENSORING_TOLERANCE);
    }

    #[test]
    fn permuted_labels_keep_the_multiset() {
        let c = desk_cohort(40, 8);
        let p = c.with_permuted_labels(1);
        let key = |l: &SurvivalLabel| (l.time_months.to_bits(), l.event);
        let mut a: Vec<_> = c.labels.iter().map(key).collect();
        let mut b: Vec<_> = p.labels.iter().map(key).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_ne!(c.labels, p.labels);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_cohort(&SynthConfig { n_subjects: 0, ..SynthConfig::desk(1, 0) }).is_err());
        assert!(generate_cohort(&SynthConfig { censoring_rate_target: 1.0, ..SynthConfig::desk(10, 0) }).is_err());
        assert!(generate_cohort(&SynthConfig { true_beta_clinical: vec![1.0], ..SynthConfig::desk(10, 0) }).is_err());
    }
}
