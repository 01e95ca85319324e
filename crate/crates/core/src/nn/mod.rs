//! Dense-network engine: batched tensors, linear/activation/dropout layers
//! with reverse-mode gradients, binary cross-entropy and Adam.

mod adam;
mod loss;
mod net;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use loss::{bce_loss, bce_with_logits, EPS_CLAMP};
pub use net::{dropout_apply, sigmoid, DenseNet, ForwardCache, Gradients, Layer, Linear, Mode, PenaltyOutput};
pub use tensor::{gemm, Tensor2};
