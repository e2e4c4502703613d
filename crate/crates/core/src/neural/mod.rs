//! Feed-forward mask estimation: network, losses, optimiser and training loop.

mod loss;
mod model;
mod optim;
mod train;

pub use loss::{loss_mask_mse, loss_psa, loss_signal_approx, LossKind, Targets};
pub use model::{
    init_glorot, sigmoid, Activation, FnnModel, ForwardCache, Gradients, Layer, Mode,
};
pub use optim::{adagrad_step, AdaGrad, EarlyStopping, StopDecision, ADAGRAD_EPS};
pub use train::{evaluate_loss, train, Dataset, EpochRecord, TrainConfig, TrainHistory};
