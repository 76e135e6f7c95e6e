//! Pure forward and backward kernels. The autodiff tape composes these;
//! they are also usable directly for inference.

mod basic;
mod conv;
mod norm;
mod pool;

pub use basic::{
    add, cross_entropy, linear, linear_backward, mul, mul_backward, mul_broadcast_kind, relu,
    relu_backward, sigmoid, sigmoid_backward, LinearGrads, MulBroadcast,
};
pub use conv::{conv2d, conv2d_backward, Conv2dGeometry, Conv2dGrads};
pub use norm::{
    batchnorm2d_eval, batchnorm2d_train, batchnorm2d_train_backward, eval_affine,
    update_running_stats, BatchNormCache, BatchStats, BatchNormGrads, BN_EPS, BN_MOMENTUM,
};
pub use pool::{
    avg_pool2d, avg_pool2d_backward, global_avg_pool, pool_geometry, upsample_nearest,
    upsample_to, upsample_to_backward,
};
