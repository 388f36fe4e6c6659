//! Compression methods. Every method is a sequence of prune / retrain cycles
//! over the same masked network representation:
//!
//! | method | when masks change            | what trains          |
//! |--------|------------------------------|----------------------|
//! | FT     | once, after training         | weights (fine-tune)  |
//! | GMP    | on a cubic schedule          | weights              |
//! | LTH    | every shot, weights rewound  | weights from `r`     |
//! | LRR    | every shot, LR rewound       | weights from `r`     |
//! | EP, BP | every step, from scores      | scores only          |

mod config;
mod ft;
mod gmp;
mod manifest;
mod mask;
mod popup;
mod rewind;

pub use config::{Method, PruneOutcome, PruneReport, ScheduleKind, TrainInput, TrainSpec};
pub use ft::{run_dense, run_ft, FtConfig};
pub use gmp::{gmp_sparsity, run_gmp, GmpConfig, GmpSchedule};
pub use manifest::{initialize, PruneManifest, ReportRow, RewindParams};
pub use mask::{
    apply_masks, current_masks, magnitude_mask, magnitude_mask_to_total, top_score_mask, PruneScope,
};
pub use popup::{binary_gain, run_bp, run_ep, run_popup_observed, PopupConfig, PopupLearner};
pub use rewind::{
    achieved_sparsity, run_rewinding, run_rewinding_observed, shots_for, RewindConfig, RewindMode,
    ShotEvent,
};
