//! Forward operations and their analytic gradients.

pub mod conv;
pub mod dense;
pub mod loss;
pub mod lstm;
pub mod norm;
pub mod pool;

pub use conv::{conv2d, conv2d_backward, Conv2dGeometry, Conv2dGrads};
pub use dense::{linear, linear_backward, relu, relu_backward};
pub use loss::{softmax, softmax_crossentropy};
pub use lstm::{bilstm, bilstm_backward, lstm_cell, lstm_cell_backward, LstmGrads, LstmParams};
pub use norm::{batchnorm2d, batchnorm2d_backward, Mode, RunningStats, BN_EPSILON, BN_MOMENTUM};
pub use pool::{avgpool2d, avgpool2d_backward, global_avgpool, global_avgpool_backward, maxpool2d, maxpool2d_backward};
