//! Downstream segmentation harness: train a compact U-Net on translated
//! images with source-domain masks, evaluate volumetrically on held-out
//! labeled volumes, and run ablation/robustness experiment sweeps.

pub mod experiment;
pub mod model;
pub mod train;

pub use experiment::{
    check_axis_isolation, expand_axis, parse_axis, run_experiment, ExperimentAxis,
    ExperimentReport, ExperimentSetting, SettingReport,
};
pub use model::{build_seg_unet, SegArch, SegUNet};
pub use train::{
    cosine_lr, dice_bce_loss, evaluate_masks, evaluate_segmenter, pairs_from_volumes,
    predict_probs, probs_to_mask, train_segmenter, SegPair, SegTrainConfig, TrainedSegmenter,
};
