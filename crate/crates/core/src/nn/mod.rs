//! Dense double-precision tensors and the reverse-mode primitives the
//! transformer needs. Every op comes as a forward function plus an explicit
//! backward that accumulates gradients.

mod block;
mod gradcheck;
mod ops;
mod tensor;

pub use block::{block_backward, block_forward, BlockCache, BlockParams};
pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckReport};
pub use ops::{
    attention_backward, attention_forward, gelu, gelu_grad, gelu_scalar, layer_norm_backward,
    layer_norm_forward, matmul, matmul_acc, matmul_nt, matmul_nt_acc, matmul_tn_acc,
    softmax_backward, softmax_rows, AttentionCache, LayerNormCache, LN_EPS,
};
pub use tensor::Tensor;
