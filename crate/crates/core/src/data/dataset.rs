use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{normalize, read_mask_png, read_rgb_png, tile_raster, DataError, TileIndex};
use crate::tensor::Tensor;

/// Tag given to samples when no tags table is supplied.
pub const DEFAULT_TAG: &str = "plain";

/// One training tile.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `(1, 3, t, t)`, values in [−0.5, 0.5].
    pub image: Tensor<f32>,
    /// `t × t` labels in {0, 1}, row-major.
    pub mask: Vec<u8>,
    pub tag: String,
    pub tile: TileIndex,
}

impl Sample {
    pub fn size(&self) -> usize {
        self.image.shape().width
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Parses `id<TAB>tag` lines; blank lines and `#` comments are skipped.
pub fn parse_tags(text: &str, path: &Path) -> Result<BTreeMap<String, String>, DataError> {
    let mut tags = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| DataError::Tags {
            path: path.to_owned(),
            line: n + 1,
            reason: reason.to_owned(),
        };
        let mut parts = line.split('\t');
        let (Some(id), Some(tag), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(malformed("expected exactly two tab-separated fields"));
        };
        let (id, tag) = (id.trim(), tag.trim());
        if id.is_empty() || tag.is_empty() {
            return Err(malformed("empty id or tag"));
        }
        if tags.insert(id.to_owned(), tag.to_owned()).is_some() {
            return Err(malformed(&format!("duplicate id {id}")));
        }
    }
    Ok(tags)
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>, DataError> {
    let entries = fs::read_dir(dir).map_err(|e| DataError::Io {
        path: dir.to_owned(),
        message: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry
            .map_err(|e| DataError::Io {
                path: dir.to_owned(),
                message: e.to_string(),
            })?
            .path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if let (true, Some(stem)) = (is_png, path.file_stem().and_then(|s| s.to_str())) {
            out.insert(stem.to_owned(), path.clone());
        }
    }
    Ok(out)
}

/// Image/mask pairs matched by file stem, in sorted order.
pub fn pair_files(images_dir: &Path, masks_dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, DataError> {
    let images = png_stems(images_dir)?;
    let mut masks = png_stems(masks_dir)?;
    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    for (stem, image) in images {
        match masks.remove(&stem) {
            Some(mask) => pairs.push((stem, image, mask)),
            None => unpaired.push(image),
        }
    }
    unpaired.extend(masks.into_values());
    if !unpaired.is_empty() {
        unpaired.sort();
        return Err(DataError::Unpaired(unpaired));
    }
    Ok(pairs)
}

/// Reads every pair, cuts it into `tile_size` tiles (no overlap) and
/// attaches the scene's tag to each tile.
pub fn load_samples(
    images_dir: &Path,
    masks_dir: &Path,
    tags_file: Option<&Path>,
    tile_size: usize,
) -> Result<Vec<Sample>, DataError> {
    let pairs = pair_files(images_dir, masks_dir)?;
    let tags = match tags_file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| DataError::Io {
                path: p.to_owned(),
                message: e.to_string(),
            })?;
            Some(parse_tags(&text, p)?)
        }
        None => None,
    };
    let mut untagged = Vec::new();
    let mut samples = Vec::new();
    for (stem, image_path, mask_path) in pairs {
        let tag = match &tags {
            None => DEFAULT_TAG.to_owned(),
            Some(t) => match t.get(&stem) {
                Some(tag) => tag.clone(),
                None => {
                    untagged.push(stem);
                    continue;
                }
            },
        };
        let image = read_rgb_png(&image_path)?;
        let mask = read_mask_png(&mask_path)?;
        if !image.same_dims(&mask) {
            return Err(DataError::SizeMismatch {
                image: image_path,
                mask: mask_path,
            });
        }
        let image_tiles = tile_raster(&image, &stem, tile_size, 0)?;
        let mask_tiles = tile_raster(&mask, &stem, tile_size, 0)?;
        let single = image_tiles.len() == 1;
        for ((index, img), (_, m)) in image_tiles.into_iter().zip(mask_tiles) {
            let id = if single {
                stem.clone()
            } else {
                format!("{stem}@{},{}", index.x_offset, index.y_offset)
            };
            samples.push(Sample {
                id,
                image: normalize(&img),
                mask: m.into_data(),
                tag: tag.clone(),
                tile: index,
            });
        }
    }
    if !untagged.is_empty() {
        return Err(DataError::Untagged(untagged));
    }
    Ok(samples)
}

/// Seeded shuffle, then the first `round(n · fraction)` go to training.
pub fn split_samples(mut samples: Vec<Sample>, split_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if !(0.0..=1.0).contains(&split_fraction) {
        return Err(DataError::Split(format!("fraction {split_fraction} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
    let n_train = (samples.len() as f64 * split_fraction).round() as usize;
    let val = samples.split_off(n_train);
    Ok((Dataset { samples }, Dataset { samples: val }))
}

/// [`load_samples`] followed by [`split_samples`].
pub fn load_dataset(
    images_dir: &Path,
    masks_dir: &Path,
    tags_file: Option<&Path>,
    tile_size: usize,
    split_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    let samples = load_samples(images_dir, masks_dir, tags_file, tile_size)?;
    if samples.is_empty() {
        return Err(DataError::Split(format!("no image/mask pairs in {}", images_dir.display())));
    }
    split_samples(samples, split_fraction, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_parsing() {
        let p = Path::new("tags.tsv");
        let t = parse_tags("# id\ttag\na\troad\n\nb\tplain\n", p).unwrap();
        assert_eq!(t["a"], "road");
        assert_eq!(t.len(), 2);
        assert!(matches!(parse_tags("a road\n", p), Err(DataError::Tags { line: 1, .. })));
        assert!(matches!(parse_tags("a\tx\na\ty\n", p), Err(DataError::Tags { line: 2, .. })));
    }
}
