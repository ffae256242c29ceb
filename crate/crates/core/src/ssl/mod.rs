//! Self-supervised pretraining: spectrogram augmentations, BYOL view pairing,
//! the loss and EMA target, and the training loop.

mod augment;
mod byol;
mod pretrain;
mod specset;

pub use augment::{mixup, mixup_with, random_resize_crop, resize_crop_into, AugmentationConfig, CropParams};
pub use byol::{byol_loss, byol_loss_value, ema_update, make_view_pair, PretrainVariant, RepeatIndex};
pub use pretrain::{
    cosine_lr, evaluate_byol_loss, pretrain, write_loss_trace, EpochLoss, PretrainConfig, PretrainOutcome,
};
pub use specset::SpecSet;
