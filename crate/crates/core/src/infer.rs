//! Whole-scene inference: clip into tiles, predict each, mosaic back.

use thiserror::Error;

use crate::arch::Model;
use crate::data::{mosaic_probabilities, normalize, tile_raster, DataError, Raster};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum InferError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Per-pixel class probabilities `(1, C, H, W)` for an RGB raster, using
/// the model's tile size. Overlapping tiles are averaged.
pub fn predict_probabilities(
    model: &Model<f32>,
    image: &Raster,
    overlap: usize,
    batch_size: usize,
) -> Result<Tensor<f32>, InferError> {
    let tile = model.config().tile_size;
    let tiles = tile_raster(image, "scene", tile, overlap)?;
    let mut predictions = Vec::with_capacity(tiles.len());
    for chunk in tiles.chunks(batch_size.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * 3 * tile * tile);
        for (_, t) in chunk {
            data.extend_from_slice(normalize(t).data());
        }
        let x = Tensor::from_vec([chunk.len(), image.channels(), tile, tile], data)?;
        let probs = model.predict_probs(&x)?;
        let s = probs.shape();
        for (b, (index, _)) in chunk.iter().enumerate() {
            let item = probs.data()[b * s.item()..(b + 1) * s.item()].to_vec();
            predictions.push((index.clone(), Tensor::from_vec([1, s.channels, tile, tile], item)?));
        }
    }
    Ok(mosaic_probabilities(&predictions)?)
}

/// Label raster in {0, 1} for an RGB raster.
pub fn predict_raster(model: &Model<f32>, image: &Raster, overlap: usize, batch_size: usize) -> Result<Raster, InferError> {
    let probs = predict_probabilities(model, image, overlap, batch_size)?;
    let labels = crate::arch::argmax_labels(&probs);
    Ok(Raster::new(image.width(), image.height(), 1, labels)?)
}
