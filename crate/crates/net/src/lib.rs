//! LIFE network: Dn-Net denoiser, recurrent-residual encoder with a
//! full-resolution reparameterized latent, shallow residual decoder, and the
//! reverse-mode tape they are trained on.

pub mod checkpoint;
pub mod error;
pub mod infer;
pub mod layers;
pub mod model;
pub mod tape;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use error::{NetError, Result};
pub use infer::infer_latent;
pub use model::{LatentMaps, LifeConfig, LifeModel, LrSchedule, PipelineOutput, Polarity};
pub use tape::{Graph, KinkPattern, Var};
pub use train::{build_dataset, calibrate_polarity, train, TrainOptions, TrainReport, TrainSample};

/// Model with `f32` parameters, the checkpoint storage type.
pub type Model = LifeModel<f32>;
