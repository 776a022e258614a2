//! Intermediate (token transformer) and late (per-modality ensemble) fusion.

mod intermediate;
mod late;
mod probe;

pub use intermediate::{
    stack_tokens, FusionCache, FusionConfig, FusionSample, IntermediateFusionModel, ModalityMask, Stacked,
    TokenizerInput, TOKENS,
};
pub use late::{
    aggregate, aggregate_model_weights, ensemble_intermediate, late_fuse, predict_late, AggregatedLateModel,
    Aggregation, ClinicalCoxModel, Combination, FoldScores, LateFusionEnsemble, LateFusionInput,
};
pub use probe::FusionGradientProbe;
