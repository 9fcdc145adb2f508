//! Small CNN + recurrent network framework with hand-written gradients.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
mod gemm;
mod init;
pub mod network;
pub mod optim;
pub mod recurrent;
pub mod train;

pub use activation::{dropout_mask, relu, softmax, softmax_cross_entropy};
pub use batchnorm::{BatchNorm, BnCache};
pub use conv::{conv2d_forward, Conv2d};
pub use dense::Dense;
pub use init::glorot;
pub use network::{param_count, recurrent_param_count, ForwardCache, Mode, Network, NetworkConfig};
pub use optim::RmsProp;
pub use recurrent::{gru_step, lstm_step, GruLayerParams, LstmLayerParams, RecurrentKind, RecurrentLayer};
pub use train::{argmax, evaluate, predict_set, train, EpochOutcome, Evaluation, SequenceSet, TrainConfig, TrainHistory, Trainer};
