//! Spectral-similarity gating between augmentation-specific training pools.

mod index;
pub mod kdtree;

pub use index::{
    batch_mean_signature, batch_signatures, build_index, d_ss, select, sidecar_path, GateDecision,
    IndexSidecar, SignatureIndex,
};
pub use kdtree::KdTree;
