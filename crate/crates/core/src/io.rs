//! On-disk formats: clinical, label, ground-truth and prediction CSVs, and
//! PFME embedding files.
//!
//! PFME layout: magic `PFME`, then `version`, `rows`, `cols` as little-endian
//! u32, then `rows * cols` little-endian f32 values in row-major order.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::{ClinicalAttribute, ClinicalRecord, Modality};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::survival::SurvivalLabel;
use crate::synth::{GroundTruth, SyntheticCohort};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"PFME";
pub const EMBEDDING_VERSION: u32 = 1;

pub const CLINICAL_FILE: &str = "clinical.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

/// `%.9g`-style rendering: nine significant digits, trailing zeros trimmed.
pub fn format_significant(x: f64, digits: usize) -> String {
    if !x.is_finite() || x == 0.0 {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{exp}", trim(mantissa))
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    }
}

pub fn write_embedding(w: &mut impl Write, m: &Matrix) -> Result<()> {
    let dims = |v: usize| u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")));
    w.write_all(EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&dims(m.rows())?.to_le_bytes())?;
    w.write_all(&dims(m.cols())?.to_le_bytes())?;
    for &v in m.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_embedding(r: &mut impl Read) -> Result<Matrix> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(|_| Error::Format("truncated embedding header".into()))?;
    if &header[..4] != EMBEDDING_MAGIC {
        return Err(Error::Format("not a PFME embedding file".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
    if word(4) != EMBEDDING_VERSION {
        return Err(Error::Format(format!("unsupported embedding version {}", word(4))));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("empty embedding {rows}x{cols}")));
    }
    let mut bytes = vec![0u8; rows * cols * 4];
    r.read_exact(&mut bytes).map_err(|_| Error::Format("truncated embedding values".into()))?;
    if r.read(&mut [0u8])? != 0 {
        return Err(Error::Format("trailing bytes after embedding".into()));
    }
    let data: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    let m = Matrix::from_vec(rows, cols, data)?;
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(m)
}

pub fn save_embedding(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embedding(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_embedding(path: &Path) -> Result<Matrix> {
    read_embedding(&mut BufReader::new(File::open(path)?)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn embedding_path(dir: &Path, modality: Modality, case_id: &str) -> PathBuf {
    dir.join(modality.name()).join(format!("{case_id}.pfme"))
}

fn require_header(reader: &mut csv::Reader<File>, expected: &[&str], path: &Path) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Format(format!(
            "{}: header must be {}, found {}",
            path.display(),
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn clinical_header() -> Vec<&'static str> {
    std::iter::once("case_id").chain(ClinicalAttribute::ALL.iter().map(|a| a.column())).collect()
}

pub fn write_clinical_csv(path: &Path, records: &[ClinicalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(clinical_header())?;
    for r in records {
        let mut row = vec![r.case_id.clone(), r.age_at_rp.map(|a| a.to_string()).unwrap_or_default()];
        for &a in &ClinicalAttribute::ALL[1..] {
            row.push(r.category(a).unwrap_or_default().to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_clinical_csv(path: &Path) -> Result<Vec<ClinicalRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    require_header(&mut reader, &clinical_header(), path)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let cell = |i: usize| row.get(i).map(str::trim).filter(|s| !s.is_empty());
        let case_id = cell(0).ok_or_else(|| Error::Format(format!("{}: empty case_id", path.display())))?;
        let age_at_rp = cell(1)
            .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("{case_id}: age_at_rp {s:?} is not a number"))))
            .transpose()?;
        let mut r = ClinicalRecord { case_id: case_id.into(), age_at_rp, ..Default::default() };
        for (i, &a) in ClinicalAttribute::ALL.iter().enumerate().skip(1) {
            r.set_category(a, cell(i + 1).map(String::from));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_labels_csv(path: &Path, case_ids: &[String], labels: &[SurvivalLabel]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["case_id", "time_months", "event"])?;
    for (id, l) in case_ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.time_months.to_string(), if l.event { "1" } else { "0" }])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, SurvivalLabel)>> {
    let mut reader = csv::Reader::from_path(path)?;
    require_header(&mut reader, &["case_id", "time_months", "event"], path)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let id = row.get(0).unwrap_or_default().trim().to_string();
        let time: f64 = row
            .get(1)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("{id}: time_months is not a number")))?;
        let event = match row.get(2).unwrap_or_default().trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::Format(format!("{id}: event must be 0 or 1, got {other:?}"))),
        };
        out.push((id, SurvivalLabel::new(time, event)?));
    }
    Ok(out)
}

pub fn write_ground_truth_csv(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["case_id", "true_log_risk", "uncensored_time"])?;
    for i in 0..truth.case_ids.len() {
        w.write_record([truth.case_ids[i].as_str(), &truth.log_risk[i].to_string(), &truth.event_time[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub case_id: String,
    pub log_risk: f64,
    pub ttr: f64,
}

pub fn write_predictions_csv(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["case_id", "log_risk", "ttr"])?;
    for p in predictions {
        w.write_record([p.case_id.as_str(), &format_significant(p.log_risk, 9), &format_significant(p.ttr, 9)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<Prediction>> {
    let mut reader = csv::Reader::from_path(path)?;
    require_header(&mut reader, &["case_id", "log_risk", "ttr"], path)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let id = row.get(0).unwrap_or_default().trim().to_string();
        let num = |i: usize| -> Result<f64> {
            row.get(i).unwrap_or_default().trim().parse().map_err(|_| Error::Format(format!("{id}: column {i} is not a number")))
        };
        out.push(Prediction { log_risk: num(1)?, ttr: num(2)?, case_id: id });
    }
    Ok(out)
}

/// Per-subject inputs of one data directory, in clinical CSV order.
/// Imaging entries are `None` when the subject has no file.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub records: Vec<ClinicalRecord>,
    pub pathology: Vec<Option<Matrix>>,
    pub radiology: Vec<Option<Matrix>>,
    /// Present when the directory has a labels file.
    pub labels: Option<Vec<SurvivalLabel>>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.case_id.clone()).collect()
    }

    pub fn labels(&self) -> Result<&[SurvivalLabel]> {
        self.labels.as_deref().ok_or_else(|| Error::Format(format!("no {LABELS_FILE} in data directory")))
    }

    pub fn imaging(&self, modality: Modality) -> &[Option<Matrix>] {
        match modality {
            Modality::Pathology => &self.pathology,
            Modality::Radiology => &self.radiology,
            Modality::Clinical => panic!("clinical data is tabular"),
        }
    }

    pub fn from_synthetic(c: &SyntheticCohort) -> Self {
        Self {
            records: c.records.clone(),
            pathology: c.pathology.iter().cloned().map(Some).collect(),
            radiology: c.radiology.iter().cloned().map(Some).collect(),
            labels: Some(c.labels.clone()),
        }
    }

    /// Subjects at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            pathology: indices.iter().map(|&i| self.pathology[i].clone()).collect(),
            radiology: indices.iter().map(|&i| self.radiology[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn with_labels(mut self, labels: Vec<SurvivalLabel>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), actual: labels.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let records = read_clinical_csv(&dir.join(CLINICAL_FILE))?;
        let mut seen = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if seen.insert(r.case_id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate case_id {}", r.case_id)));
            }
        }
        let load_modality = |m: Modality| -> Result<Vec<Option<Matrix>>> {
            records
                .iter()
                .map(|r| {
                    let p = embedding_path(dir, m, &r.case_id);
                    if p.exists() {
                        load_embedding(&p).map(Some)
                    } else {
                        Ok(None)
                    }
                })
                .collect()
        };
        let pathology = load_modality(Modality::Pathology)?;
        let radiology = load_modality(Modality::Radiology)?;
        let labels_path = dir.join(LABELS_FILE);
        let labels = if labels_path.exists() {
            let rows = read_labels_csv(&labels_path)?;
            Some(match_labels(&records.iter().map(|r| r.case_id.clone()).collect::<Vec<_>>(), rows)?)
        } else {
            None
        };
        Ok(Self { records, pathology, radiology, labels })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_clinical_csv(&dir.join(CLINICAL_FILE), &self.records)?;
        if let Some(labels) = &self.labels {
            write_labels_csv(&dir.join(LABELS_FILE), &self.case_ids(), labels)?;
        }
        for m in [Modality::Pathology, Modality::Radiology] {
            fs::create_dir_all(dir.join(m.name()))?;
            for (r, e) in self.records.iter().zip(self.imaging(m)) {
                if let Some(e) = e {
                    save_embedding(&embedding_path(dir, m, &r.case_id), e)?;
                }
            }
        }
        Ok(())
    }
}

/// Orders labels like `case_ids`; every id must match exactly once.
pub fn match_labels(case_ids: &[String], rows: Vec<(String, SurvivalLabel)>) -> Result<Vec<SurvivalLabel>> {
    let mut by_id: HashMap<String, SurvivalLabel> = HashMap::new();
    for (id, l) in rows {
        if by_id.insert(id.clone(), l).is_some() {
            return Err(Error::Format(format!("duplicate label for {id}")));
        }
    }
    let missing: Vec<&str> = case_ids.iter().filter(|id| !by_id.contains_key(*id)).map(String::as_str).collect();
    let known: std::collections::HashSet<&str> = case_ids.iter().map(String::as_str).collect();
    let mut extra: Vec<&str> = by_id.keys().map(String::as_str).filter(|id| !known.contains(id)).collect();
    extra.sort_unstable();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Format(format!(
            "unmatched case ids: without labels [{}], labels without cases [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    Ok(case_ids.iter().map(|id| by_id[id]).collect())
}

/// Writes a synthetic cohort in the data-directory layout.
pub fn save_synthetic(dir: &Path, cohort: &SyntheticCohort) -> Result<()> {
    Cohort::from_synthetic(cohort).save(dir)?;
    write_ground_truth_csv(&dir.join(GROUND_TRUTH_FILE), &cohort.truth)
}
