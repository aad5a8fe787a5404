use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{DataError, Raster};
use crate::tensor::Tensor;

/// Where a tile sits in its parent raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileIndex {
    pub parent: String,
    pub parent_width: usize,
    pub parent_height: usize,
    pub x_offset: usize,
    pub y_offset: usize,
    pub tile_size: usize,
    pub overlap: usize,
}

/// Tile origins along one axis: steps of `tile − overlap`, with the last
/// tile allowed to run past the end (it is reflection padded).
pub fn tile_offsets(len: usize, tile: usize, overlap: usize) -> Result<Vec<usize>, DataError> {
    if tile == 0 || overlap >= tile {
        return Err(DataError::TileGeometry(format!(
            "tile size {tile} must exceed overlap {overlap}"
        )));
    }
    let step = tile - overlap;
    let count = if len <= tile { 1 } else { (len - tile).div_ceil(step) + 1 };
    let last_end = (count - 1) * step + tile;
    let pad = last_end.saturating_sub(len);
    if pad > len - 1 {
        return Err(DataError::TileGeometry(format!(
            "tile size {tile} needs {pad} px of padding on a {len} px axis (at most {} available by reflection)",
            len - 1
        )));
    }
    Ok((0..count).map(|i| i * step).collect())
}

/// Mirror about the last pixel, without repeating it.
fn reflect(i: usize, len: usize) -> usize {
    if i < len {
        i
    } else {
        2 * (len - 1) - i
    }
}

/// Cuts `raster` into `tile_size` squares in row-major order.
pub fn tile_raster(
    raster: &Raster,
    parent: &str,
    tile_size: usize,
    overlap: usize,
) -> Result<Vec<(TileIndex, Raster)>, DataError> {
    let xs = tile_offsets(raster.width(), tile_size, overlap)?;
    let ys = tile_offsets(raster.height(), tile_size, overlap)?;
    let (w, h, ch) = (raster.width(), raster.height(), raster.channels());
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y0 in &ys {
        for &x0 in &xs {
            let tile = Raster::from_fn(tile_size, tile_size, ch, |x, y, c| {
                raster.get(reflect(x0 + x, w), reflect(y0 + y, h), c)
            });
            let index = TileIndex {
                parent: parent.to_owned(),
                parent_width: w,
                parent_height: h,
                x_offset: x0,
                y_offset: y0,
                tile_size,
                overlap,
            };
            out.push((index, tile));
        }
    }
    Ok(out)
}

/// Averages per-tile class probabilities `(1, C, t, t)` over the parent.
/// Returns a `(1, C, H, W)` tensor.
pub fn mosaic_probabilities(tiles: &[(TileIndex, Tensor<f32>)]) -> Result<Tensor<f32>, DataError> {
    let Some((first, first_t)) = tiles.first() else {
        return Err(DataError::TileGeometry("no tiles to mosaic".into()));
    };
    let classes = first_t.shape().channels;
    let (w, h, t) = (first.parent_width, first.parent_height, first.tile_size);
    let xs = tile_offsets(w, t, first.overlap)?;
    let ys = tile_offsets(h, t, first.overlap)?;
    let mut expected: BTreeSet<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();

    let mut sums = vec![0.0f32; classes * w * h];
    let mut counts = vec![0u32; w * h];
    for (idx, probs) in tiles {
        let consistent = idx.parent == first.parent
            && idx.parent_width == w
            && idx.parent_height == h
            && idx.tile_size == t
            && idx.overlap == first.overlap;
        if !consistent {
            return Err(DataError::TileGeometry(format!(
                "tile at ({}, {}) of {} does not match the geometry of {}",
                idx.x_offset, idx.y_offset, idx.parent, first.parent
            )));
        }
        if !expected.remove(&(idx.x_offset, idx.y_offset)) {
            return Err(DataError::TileGeometry(format!(
                "unexpected or duplicate tile at ({}, {})",
                idx.x_offset, idx.y_offset
            )));
        }
        let s = probs.shape();
        if s.to_array() != [1, classes, t, t] {
            return Err(DataError::TileGeometry(format!(
                "tile prediction has shape {s}, expected (1, {classes}, {t}, {t})"
            )));
        }
        let ylim = t.min(h - idx.y_offset);
        let xlim = t.min(w - idx.x_offset);
        for y in 0..ylim {
            for x in 0..xlim {
                let p = (idx.y_offset + y) * w + idx.x_offset + x;
                counts[p] += 1;
                for c in 0..classes {
                    sums[c * w * h + p] += probs.at(0, c, y, x);
                }
            }
        }
    }
    if !expected.is_empty() {
        return Err(DataError::MissingTiles {
            parent: first.parent.clone(),
            offsets: expected.into_iter().collect(),
        });
    }
    for c in 0..classes {
        for (s, &n) in sums[c * w * h..(c + 1) * w * h].iter_mut().zip(&counts) {
            *s /= n as f32;
        }
    }
    Ok(Tensor::from_vec([1, classes, h, w], sums).expect("sized from parent"))
}

/// Arg-max of the averaged probabilities; ties go to the lower class.
pub fn mosaic(tiles: &[(TileIndex, Tensor<f32>)]) -> Result<Raster, DataError> {
    let probs = mosaic_probabilities(tiles)?;
    let s = probs.shape();
    let labels = crate::arch::argmax_labels(&probs);
    Raster::new(s.width, s.height, 1, labels)
}

/// Mosaics hard label tiles by treating each as a one-hot probability map.
pub fn mosaic_labels(tiles: &[(TileIndex, Raster)], classes: usize) -> Result<Raster, DataError> {
    let soft: Vec<(TileIndex, Tensor<f32>)> = tiles
        .iter()
        .map(|(idx, r)| {
            let t = Tensor::from_fn([1, classes, r.height(), r.width()], |[_, c, y, x]| {
                if r.get(x, y, 0) as usize == c {
                    1.0
                } else {
                    0.0
                }
            });
            (idx.clone(), t)
        })
        .collect();
    mosaic(&soft)
}
