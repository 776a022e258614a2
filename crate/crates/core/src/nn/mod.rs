//! Hand-differentiated neural-network building blocks in `f64`.
//!
//! Sequences are batched by stacking: a batch of `B` sequences of length `T`
//! is a `(B * T) x d` matrix, with masks of length `B * T`.

mod activation;
mod attention;
pub mod checkpoint;
pub mod gradcheck;
mod linear;
mod matrix;
mod norm;
mod param;
mod pool;
mod transformer;

pub use activation::{dropout_mask, gelu, gelu_derivative, gelu_matrix, masked_softmax, softmax};
pub use attention::{AttentionCache, MultiHeadSelfAttention};
pub use checkpoint::{load_module, load_tensors, save_module, save_tensors};
pub use gradcheck::{grad_check, FiniteDiffTarget, GradCheckConfig, GradCheckReport, ModuleTarget};
pub use linear::Linear;
pub use matrix::{matmul, matmul_transposed, Matrix};
pub use norm::{LayerNorm, LayerNormCache};
pub(crate) use param::join;
pub use param::{Module, Parameter};
pub use pool::{masked_mean_pool, masked_mean_pool_backward};
pub use transformer::{
    EncoderConfig, EncoderLayer, EncoderLayerCache, FeedForward, FeedForwardCache, PositionalEncoding,
    TransformerEncoder,
};
