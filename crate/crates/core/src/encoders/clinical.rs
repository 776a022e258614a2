use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eight clinical attributes, in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClinicalAttribute {
    AgeAtRp,
    IsupGrade,
    PtStage,
    LymphNodes,
    CapsularPenetration,
    SurgicalMargins,
    Svi,
    Lvi,
}

impl ClinicalAttribute {
    pub const ALL: [ClinicalAttribute; 8] = [
        Self::AgeAtRp,
        Self::IsupGrade,
        Self::PtStage,
        Self::LymphNodes,
        Self::CapsularPenetration,
        Self::SurgicalMargins,
        Self::Svi,
        Self::Lvi,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Self::AgeAtRp => "age_at_rp",
            Self::IsupGrade => "isup_grade",
            Self::PtStage => "pt_stage",
            Self::LymphNodes => "lymph_nodes",
            Self::CapsularPenetration => "capsular_penetration",
            Self::SurgicalMargins => "surgical_margins",
            Self::Svi => "svi",
            Self::Lvi => "lvi",
        }
    }
}

impl fmt::Display for ClinicalAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

/// One subject's clinical row. `None` means unknown.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub case_id: String,
    pub age_at_rp: Option<f64>,
    pub isup_grade: Option<String>,
    pub pt_stage: Option<String>,
    pub lymph_nodes: Option<String>,
    pub capsular_penetration: Option<String>,
    pub surgical_margins: Option<String>,
    pub svi: Option<String>,
    pub lvi: Option<String>,
}

impl ClinicalRecord {
    pub fn numeric(&self, attribute: ClinicalAttribute) -> Option<f64> {
        match attribute {
            ClinicalAttribute::AgeAtRp => self.age_at_rp,
            _ => None,
        }
    }

    pub fn category(&self, attribute: ClinicalAttribute) -> Option<&str> {
        let v = match attribute {
            ClinicalAttribute::AgeAtRp => return None,
            ClinicalAttribute::IsupGrade => &self.isup_grade,
            ClinicalAttribute::PtStage => &self.pt_stage,
            ClinicalAttribute::LymphNodes => &self.lymph_nodes,
            ClinicalAttribute::CapsularPenetration => &self.capsular_penetration,
            ClinicalAttribute::SurgicalMargins => &self.surgical_margins,
            ClinicalAttribute::Svi => &self.svi,
            ClinicalAttribute::Lvi => &self.lvi,
        };
        v.as_deref()
    }

    pub fn set_category(&mut self, attribute: ClinicalAttribute, value: Option<String>) {
        let slot = match attribute {
            ClinicalAttribute::AgeAtRp => {
                self.age_at_rp = value.and_then(|v| v.parse().ok());
                return;
            }
            ClinicalAttribute::IsupGrade => &mut self.isup_grade,
            ClinicalAttribute::PtStage => &mut self.pt_stage,
            ClinicalAttribute::LymphNodes => &mut self.lymph_nodes,
            ClinicalAttribute::CapsularPenetration => &mut self.capsular_penetration,
            ClinicalAttribute::SurgicalMargins => &mut self.surgical_margins,
            ClinicalAttribute::Svi => &mut self.svi,
            ClinicalAttribute::Lvi => &mut self.lvi,
        };
        *slot = value;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    Numeric,
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeRule {
    pub attribute: ClinicalAttribute,
    pub encoding: Encoding,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl AttributeRule {
    fn numeric(attribute: ClinicalAttribute) -> Self {
        Self { attribute, encoding: Encoding::Numeric, categories: Vec::new() }
    }

    fn one_hot(attribute: ClinicalAttribute, categories: &[&str]) -> Self {
        Self {
            attribute,
            encoding: Encoding::OneHot,
            categories: categories.iter().map(|c| c.to_string()).collect(),
        }
    }

    /// Width of the one-hot (or z-score) block.
    pub fn width(&self) -> usize {
        match self.encoding {
            Encoding::Numeric => 1,
            Encoding::OneHot => self.categories.len(),
        }
    }

    /// Width under reference-dropped dummy coding.
    pub fn dummy_width(&self) -> usize {
        match self.encoding {
            Encoding::Numeric => 1,
            Encoding::OneHot => self.categories.len() - 1,
        }
    }

    fn category_index(&self, value: &str) -> Result<usize> {
        self.categories.iter().position(|c| c == value).ok_or_else(|| Error::UnknownCategory {
            attribute: self.attribute.to_string(),
            value: value.to_string(),
        })
    }
}

/// Ordered encoding rules. Vector width is the sum of rule widths and must
/// equal `total_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalSchema {
    pub total_width: usize,
    pub attributes: Vec<AttributeRule>,
}

pub const BINARY_CATEGORIES: [&str; 2] = ["0", "1"];
pub const ISUP_CATEGORIES: [&str; 5] = ["1", "2", "3", "4", "5"];
pub const PT_STAGE_CATEGORIES: [&str; 9] = ["2", "2a", "2b", "2c", "3", "3a", "3b", "3c", "4"];

impl Default for ClinicalSchema {
    /// Age (1) + ISUP (5) + pT (9) + five binary attributes (2 each) = 25.
    fn default() -> Self {
        use ClinicalAttribute::*;
        let mut attributes = vec![
            AttributeRule::numeric(AgeAtRp),
            AttributeRule::one_hot(IsupGrade, &ISUP_CATEGORIES),
            AttributeRule::one_hot(PtStage, &PT_STAGE_CATEGORIES),
        ];
        for a in [LymphNodes, CapsularPenetration, SurgicalMargins, Svi, Lvi] {
            attributes.push(AttributeRule::one_hot(a, &BINARY_CATEGORIES));
        }
        Self { total_width: 25, attributes }
    }
}

impl ClinicalSchema {
    pub fn new(total_width: usize, attributes: Vec<AttributeRule>) -> Result<Self> {
        let schema = Self { total_width, attributes };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: Self = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = Vec::new();
        for rule in &self.attributes {
            if seen.contains(&rule.attribute) {
                return Err(Error::Schema(format!("attribute {} declared twice", rule.attribute)));
            }
            seen.push(rule.attribute);
            match rule.encoding {
                Encoding::Numeric => {
                    if rule.attribute != ClinicalAttribute::AgeAtRp {
                        return Err(Error::Schema(format!("{} is categorical", rule.attribute)));
                    }
                    if !rule.categories.is_empty() {
                        return Err(Error::Schema(format!("numeric {} lists categories", rule.attribute)));
                    }
                }
                Encoding::OneHot => {
                    if rule.attribute == ClinicalAttribute::AgeAtRp {
                        return Err(Error::Schema("age_at_rp is numeric".into()));
                    }
                    if rule.categories.len() < 2 {
                        return Err(Error::Schema(format!("{} needs at least two categories", rule.attribute)));
                    }
                    for (i, c) in rule.categories.iter().enumerate() {
                        if rule.categories[..i].contains(c) {
                            return Err(Error::Schema(format!("{}: duplicate category {c}", rule.attribute)));
                        }
                    }
                }
            }
        }
        let width = self.vector_width();
        if width != self.total_width {
            return Err(Error::Schema(format!(
                "attribute widths sum to {width}, declared total is {}",
                self.total_width
            )));
        }
        Ok(())
    }

    pub fn vector_width(&self) -> usize {
        self.attributes.iter().map(AttributeRule::width).sum()
    }

    pub fn dummy_width(&self) -> usize {
        self.attributes.iter().map(AttributeRule::dummy_width).sum()
    }

    pub fn categorical_count(&self) -> usize {
        self.attributes.iter().filter(|r| r.encoding == Encoding::OneHot).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttributeStats {
    Numeric { mean: f64, std: f64 },
    Categorical { mode: String },
}

/// Training-split statistics used for imputation and z-scoring; aligned with
/// the schema's attribute order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalStats {
    pub attributes: Vec<(ClinicalAttribute, AttributeStats)>,
}

impl ClinicalStats {
    /// Population mean and standard deviation over observed numerics; modal
    /// category (earliest in schema order on ties) for categoricals.
    pub fn fit(schema: &ClinicalSchema, records: &[ClinicalRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty);
        }
        let mut attributes = Vec::with_capacity(schema.attributes.len());
        for rule in &schema.attributes {
            let stats = match rule.encoding {
                Encoding::Numeric => {
                    let observed: Vec<f64> = records.iter().filter_map(|r| r.numeric(rule.attribute)).collect();
                    if observed.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite);
                    }
                    if observed.is_empty() {
                        return Err(Error::DegenerateNumeric(rule.attribute.to_string()));
                    }
                    let n = observed.len() as f64;
                    let mean = observed.iter().sum::<f64>() / n;
                    let var = observed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    AttributeStats::Numeric { mean, std: var.sqrt() }
                }
                Encoding::OneHot => {
                    let mut counts = vec![0usize; rule.categories.len()];
                    for r in records {
                        if let Some(v) = r.category(rule.attribute) {
                            counts[rule.category_index(v)?] += 1;
                        }
                    }
                    let best = counts
                        .iter()
                        .enumerate()
                        .fold(0, |best, (i, &c)| if c > counts[best] { i } else { best });
                    AttributeStats::Categorical { mode: rule.categories[best].clone() }
                }
            };
            attributes.push((rule.attribute, stats));
        }
        Ok(Self { attributes })
    }

    fn for_rule(&self, index: usize, rule: &AttributeRule) -> Result<&AttributeStats> {
        match self.attributes.get(index) {
            Some((a, s)) if *a == rule.attribute => Ok(s),
            _ => Err(Error::Schema(format!("statistics do not cover {}", rule.attribute))),
        }
    }
}

fn z_score(rule: &AttributeRule, stats: &AttributeStats, record: &ClinicalRecord) -> Result<f64> {
    let AttributeStats::Numeric { mean, std } = *stats else {
        return Err(Error::Schema(format!("{} has categorical statistics", rule.attribute)));
    };
    if std <= 0.0 || !std.is_finite() {
        return Err(Error::DegenerateNumeric(rule.attribute.to_string()));
    }
    let v = record.numeric(rule.attribute).unwrap_or(mean);
    if !v.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok((v - mean) / std)
}

fn category<'a>(rule: &AttributeRule, stats: &'a AttributeStats, record: &'a ClinicalRecord) -> Result<usize> {
    let AttributeStats::Categorical { mode } = stats else {
        return Err(Error::Schema(format!("{} has numeric statistics", rule.attribute)));
    };
    rule.category_index(record.category(rule.attribute).unwrap_or(mode))
}

/// One-hot categoricals and z-scored numerics, concatenated in schema order.
pub fn encode_clinical_vector(
    record: &ClinicalRecord,
    schema: &ClinicalSchema,
    stats: &ClinicalStats,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(schema.total_width);
    for (i, rule) in schema.attributes.iter().enumerate() {
        let s = stats.for_rule(i, rule)?;
        match rule.encoding {
            Encoding::Numeric => out.push(z_score(rule, s, record)?),
            Encoding::OneHot => {
                let hot = category(rule, s, record)?;
                out.extend((0..rule.width()).map(|c| if c == hot { 1.0 } else { 0.0 }));
            }
        }
    }
    Ok(out)
}

/// Dummy coding with the first category of each attribute as reference;
/// numerics are z-scored.
pub fn encode_clinical_dummy(
    record: &ClinicalRecord,
    schema: &ClinicalSchema,
    stats: &ClinicalStats,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(schema.dummy_width());
    for (i, rule) in schema.attributes.iter().enumerate() {
        let s = stats.for_rule(i, rule)?;
        match rule.encoding {
            Encoding::Numeric => out.push(z_score(rule, s, record)?),
            Encoding::OneHot => {
                let hot = category(rule, s, record)?;
                out.extend((1..rule.categories.len()).map(|c| if c == hot { 1.0 } else { 0.0 }));
            }
        }
    }
    Ok(out)
}

/// A schema with statistics frozen from a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalEncoder {
    pub schema: ClinicalSchema,
    pub stats: ClinicalStats,
}

impl ClinicalEncoder {
    pub fn fit(schema: ClinicalSchema, training: &[ClinicalRecord]) -> Result<Self> {
        let stats = ClinicalStats::fit(&schema, training)?;
        Ok(Self { schema, stats })
    }

    pub fn vector(&self, record: &ClinicalRecord) -> Result<Vec<f64>> {
        encode_clinical_vector(record, &self.schema, &self.stats)
    }

    pub fn dummy(&self, record: &ClinicalRecord) -> Result<Vec<f64>> {
        encode_clinical_dummy(record, &self.schema, &self.stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(age: f64, isup: &str, pt: &str, bits: [&str; 5]) -> ClinicalRecord {
        ClinicalRecord {
            case_id: "c".into(),
            age_at_rp: Some(age),
            isup_grade: Some(isup.into()),
            pt_stage: Some(pt.into()),
            lymph_nodes: Some(bits[0].into()),
            capsular_penetration: Some(bits[1].into()),
            surgical_margins: Some(bits[2].into()),
            svi: Some(bits[3].into()),
            lvi: Some(bits[4].into()),
        }
    }

    fn cohort() -> Vec<ClinicalRecord> {
        vec![
            record(60.0, "3", "2b", ["0", "1", "0", "0", "1"]),
            record(70.0, "1", "3a", ["1", "1", "0", "1", "0"]),
            record(65.0, "3", "2", ["0", "0", "1", "0", "0"]),
        ]
    }

    #[test]
    fn default_schema_widths() {
        let schema = ClinicalSchema::default();
        schema.validate().unwrap();
        assert_eq!(schema.vector_width(), 25);
        assert_eq!(schema.categorical_count(), 7);
        assert_eq!(schema.dummy_width(), 25 - 7);
    }

    #[test]
    fn isup_one_hot_and_mean_age() {
        let schema = ClinicalSchema::default();
        let train = cohort();
        let stats = ClinicalStats::fit(&schema, &train).unwrap();
        let mut r = train[0].clone();
        r.age_at_rp = Some(65.0);
        let v = encode_clinical_vector(&r, &schema, &stats).unwrap();
        assert_eq!(v.len(), 25);
        assert_eq!(v[0], 0.0);
        assert_eq!(&v[1..6], &[0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn dummy_reference_and_binary() {
        let schema = ClinicalSchema::default();
        let stats = ClinicalStats::fit(&schema, &cohort()).unwrap();
        let d = encode_clinical_dummy(&cohort()[1], &schema, &stats).unwrap();
        assert_eq!(d.len(), 18);
        assert_eq!(&d[1..5], &[0.0; 4]);
        // Binary blocks are single indicators: lymph nodes "1", capsular "1", margins "0".
        assert_eq!(&d[13..16], &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn missing_values_are_imputed() {
        let schema = ClinicalSchema::default();
        let train = cohort();
        let stats = ClinicalStats::fit(&schema, &train).unwrap();
        let blank = ClinicalRecord { case_id: "x".into(), ..Default::default() };
        let v = encode_clinical_vector(&blank, &schema, &stats).unwrap();
        assert_eq!(v[0], 0.0);
        // ISUP mode is "3".
        assert_eq!(&v[1..6], &[0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn errors() {
        let schema = ClinicalSchema::default();
        let stats = ClinicalStats::fit(&schema, &cohort()).unwrap();
        let mut r = cohort()[0].clone();
        r.isup_grade = Some("6".into());
        assert!(matches!(encode_clinical_vector(&r, &schema, &stats), Err(Error::UnknownCategory { .. })));
        let flat = vec![cohort()[0].clone(), cohort()[0].clone()];
        let stats = ClinicalStats::fit(&schema, &flat).unwrap();
        assert!(matches!(
            encode_clinical_vector(&flat[0], &schema, &stats),
            Err(Error::DegenerateNumeric(_))
        ));
    }

    #[test]
    fn schema_toml_round_trip_and_width_check() {
        let schema = ClinicalSchema::default();
        let text = schema.to_toml_string();
        assert_eq!(ClinicalSchema::from_toml_str(&text).unwrap(), schema);
        let bad = text.replace("total_width = 25", "total_width = 26");
        assert!(matches!(ClinicalSchema::from_toml_str(&bad), Err(Error::Schema(_))));
        let unknown = format!("colour = 1\n{text}");
        assert!(matches!(ClinicalSchema::from_toml_str(&unknown), Err(Error::Schema(_))));
    }
}
