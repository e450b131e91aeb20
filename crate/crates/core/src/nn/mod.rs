//! Minimal CPU neural-network engine: 2D layers with hand-written
//! backward passes, Adam, and the PSNR loss.
//!
//! Networks are generic over [`Real`]: training and inference use `f32`,
//! gradient checks run the same code in `f64`.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradReport};
pub use layers::{Conv, ConvGrad, Param};
pub use loss::{psnr, psnr_loss, MSE_FLOOR};
pub use network::{Gradients, LayerSpec, Manifest, Mode, Network, Trace};
pub use optim::{adam_step, TrainConfig};
pub use tensor::{Real, Tensor4};
