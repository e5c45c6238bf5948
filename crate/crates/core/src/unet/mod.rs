//! Small 3D U-Net written from scratch: layers with analytic gradients,
//! Tversky loss, Adam, cross-validated training and patch-based inference.

mod checkpoint;
mod conv;
mod denormal;
mod layers;
mod loss;
mod network;
mod optim;
mod params;
mod tensor;
mod train;

pub use loss::{tversky_index, tversky_loss, tversky_loss_gradient, TverskyParams};
pub use network::{backward, forward, Gradients};
pub use params::{NetworkArchitecture, NetworkParameters, ParamTensor};
pub use tensor::{Scalar, Tensor};
pub use optim::{Adam, AdamParams};
pub use train::{predict_probabilities, predict_volume, train, Checkpoint, EpochRecord, TrainConfig, TrainingOutcome};
pub use checkpoint::loss_log_csv;
