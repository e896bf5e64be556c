//! U-Net style segmentation network with optional anti-aliased
//! downsampling and a shape-embedding block supervised by a flow-type head.

pub mod checkpoint;
mod config;
mod data;
mod infer;
mod loss;
mod model;
mod train;

pub use config::{Fusion, NetworkConfig, TrainConfig};
pub use data::{nearest_index, resize_nearest, scale_intensity, Letterbox, Sample};
pub use infer::{argmax_classes, predict_mask, predict_masks};
pub use loss::{total_loss, LossVars, IGNORE_INDEX};
pub use model::{layer_plan, parameter_count, shape_embedding_block, shape_head, Forward, Model, Param};
pub use train::{make_batch, segmentation_loss, train, train_step, train_with, Batch, EpochStats, TrainOutcome};
