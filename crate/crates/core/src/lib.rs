//! Landslide segmentation engine: a U-Net with optional dilated encoder,
//! ASPP bottleneck and attention-gated skips, trained and evaluated on top
//! of a small reverse-mode autodiff tensor core.

pub mod tensor;
pub mod arch;
pub mod gradcheck;
pub mod data;
pub mod eval;
pub mod train;
pub mod config;
pub mod infer;
