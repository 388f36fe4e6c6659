//! Data, augmentations, corruptions and experiment orchestration.

mod augment;
mod corrupt;
mod data;
mod grid;

pub use augment::{augment, AugmentationSpec, Augmenter};
pub use corrupt::{
    box_blur, corrupt, corrupt_dataset, corrupted_suite, pixelate, suite, CorruptionKind,
    CorruptionSpec, BOX_BLUR_KERNEL, CONTRAST_SCALE, GAUSS_NOISE_STD, PIXELATE_BLOCK,
    SHOT_NOISE_RATE,
};
pub use data::{
    generate_dataset, read_dataset, read_tensor, write_dataset, write_tensor, DatasetManifest,
    SyntheticSpec,
};
pub use grid::{
    default_popup_train, default_train, run_experiment, CellKey, CellResult, DeckSpec,
    ExternalData, GateParams, GridConfig, GridSummary, HeatmapParams,
};
