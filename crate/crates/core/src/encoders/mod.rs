//! Per-modality encoders producing patient-wise vectors.

mod clinical;
mod pooling;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use clinical::{
    encode_clinical_dummy, encode_clinical_vector, AttributeRule, AttributeStats, ClinicalAttribute,
    ClinicalEncoder, ClinicalRecord, ClinicalSchema, ClinicalStats, Encoding, BINARY_CATEGORIES, ISUP_CATEGORIES,
    PT_STAGE_CATEGORIES,
};
pub use pooling::{AttentionPooling, MilCache, MilCoxModel, PoolingCache, PoolingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Clinical,
    Pathology,
    Radiology,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Clinical, Modality::Pathology, Modality::Radiology];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Clinical => "clinical",
            Modality::Pathology => "pathology",
            Modality::Radiology => "radiology",
        }
    }

    /// Token slot in the stacked fusion input.
    pub fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
