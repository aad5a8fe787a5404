//! Raster I/O, tiling and mosaicking, normalization, dataset assembly and
//! the synthetic scene generator.

mod dataset;
mod raster;
pub mod synth;
mod tiling;

use std::path::PathBuf;

use thiserror::Error;

pub use dataset::{load_dataset, load_samples, pair_files, parse_tags, split_samples, Dataset, Sample, DEFAULT_TAG};
pub use raster::{
    denormalize, denormalize_value, normalize, normalize_value, overlay, read_mask_png, read_rgb_png,
    write_mask_png, write_overlay_png, write_rgb_png, Raster,
};
pub use tiling::{mosaic, mosaic_labels, mosaic_probabilities, tile_offsets, tile_raster, TileIndex};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid raster: {0}")]
    BadRaster(String),
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: mask value {value} is not 0, 1 or 255")]
    MaskValue { path: PathBuf, value: u8 },
    #[error("{image} and {mask} differ in size")]
    SizeMismatch { image: PathBuf, mask: PathBuf },
    #[error("tiling: {0}")]
    TileGeometry(String),
    #[error("mosaic of {parent} is missing tiles at (x, y) offsets {offsets:?}")]
    MissingTiles {
        parent: String,
        offsets: Vec<(usize, usize)>,
    },
    #[error("files without a partner: {}", list(.0))]
    Unpaired(Vec<PathBuf>),
    #[error("{path}:{line}: {reason}")]
    Tags { path: PathBuf, line: usize, reason: String },
    #[error("samples missing from the tags table: {}", .0.join(", "))]
    Untagged(Vec<String>),
    #[error("split: {0}")]
    Split(String),
}

fn list(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}
