use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardMiningConfig {
    pub difficulty_weight: BTreeMap<String, f64>,
}

impl Default for HardMiningConfig {
    fn default() -> Self {
        Self::from_pairs(&[("plain", 1.0), ("road", 2.0), ("bare_earth", 2.0), ("river", 2.0)])
    }
}

impl HardMiningConfig {
    pub fn from_pairs(pairs: &[(&str, f64)]) -> Self {
        Self {
            difficulty_weight: pairs.iter().map(|&(t, w)| (t.to_owned(), w)).collect(),
        }
    }

    /// Every tag in `tags` with weight 1.
    pub fn uniform<'a>(tags: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            difficulty_weight: tags.into_iter().map(|t| (t.to_owned(), 1.0)).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        match self.difficulty_weight.iter().find(|(_, &w)| !(w > 0.0 && w.is_finite())) {
            Some((tag, w)) => Err(TrainError::Config(format!(
                "hard mining weight for {tag} must be positive, got {w}"
            ))),
            None => Ok(()),
        }
    }
}

/// Draws sample indices with replacement, each with probability
/// proportional to its tag's weight.
#[derive(Debug, Clone)]
pub struct Sampler {
    dist: WeightedIndex<f64>,
}

impl Sampler {
    pub fn new(dataset: &Dataset, config: &HardMiningConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(TrainError::EmptyDataset("training"));
        }
        let weights = dataset
            .samples
            .iter()
            .map(|s| {
                config
                    .difficulty_weight
                    .get(&s.tag)
                    .copied()
                    .ok_or_else(|| TrainError::UnknownTag {
                        sample: s.id.clone(),
                        tag: s.tag.clone(),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let dist = WeightedIndex::new(weights).map_err(|e| TrainError::Config(format!("hard mining: {e}")))?;
        Ok(Self { dist })
    }

    pub fn draw<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<usize> {
        (0..batch_size).map(|_| self.dist.sample(rng)).collect()
    }
}

pub fn sample_batch<R: Rng>(
    dataset: &Dataset,
    config: &HardMiningConfig,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>, TrainError> {
    Ok(Sampler::new(dataset, config)?.draw(batch_size, rng))
}
