//! Multitask encoder-decoder: two denoised channels (re, im) and one
//! silhouette logit per pixel, trained with manual backpropagation.

pub mod checkpoint;
mod infer;
pub mod layers;
mod loss;
mod network;
mod optim;
mod train;

pub use infer::{bin_scale, infer_image, infer_video, threshold_mask, NetworkDenoiser};
pub use loss::{
    batch_loss_grad, loss_denoise, loss_seg, sample_loss_grad, total_loss, DenoiseLoss,
    LossConfig, LossValue, MSE_FLOOR,
};
pub use network::{split_output, Batch, Graph, Layer, NetSpec, Network, IN_CHANNELS, OUT_CHANNELS};
pub use optim::{AdamW, CosineSchedule};
pub use train::{prepare, train, Augment, HistoryRow, Prepared, TrainConfig, Trainer};
