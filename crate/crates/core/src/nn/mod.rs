//! Layer primitives with hand-written forward and backward passes.
//!
//! Only the vocabulary an inverted-residual network needs is provided:
//! standard and depthwise convolution, batch norm, ReLU6, global average
//! pooling, a dense head and temperature softmax. [`gradcheck`] holds the
//! finite-difference tooling used to verify every backward pass.

pub mod activation;
pub mod conv;
pub mod gradcheck;
pub mod layer;
pub mod linear;
pub mod norm;
pub mod optim;
pub mod pool;
pub mod softmax;

use serde::{Deserialize, Serialize};

pub use activation::{relu6_backward, relu6_forward};
pub use conv::{conv2d_backward, conv2d_forward, depthwise_conv_backward, depthwise_conv_forward};
pub use layer::{Layer, LayerGrad};
pub use linear::{dense_backward, dense_forward};
pub use norm::{batchnorm_backward, batchnorm_forward, BnConfig, RunningStats};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use pool::{global_avg_pool_backward, global_avg_pool_forward};
pub use softmax::{log_softmax_with_temperature, softmax_with_temperature};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}
