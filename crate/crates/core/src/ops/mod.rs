//! Forward kernels (and the backward kernels the tape uses) for every
//! operation the network needs.

pub mod activation;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod softmax;

pub use activation::{activation, sigmoid, Activation};
pub use conv::{conv3d, out_dim, same_padding, Conv3dGeometry};
pub use linear::linear;
pub use loss::{bce_with_logits, bce_with_logits_grad};
pub use norm::{normalize, Mode, NormKind, RunningStats, DEFAULT_EPS};
pub use pool::{maxpool3d, spatial_mean, PoolGeometry};
pub use softmax::softmax;
