use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid model config: {0}")]
    Invalid(String),
    #[error("unknown variant `{0}` (expected u-net, d-u-net, a-u-net or da-u-net)")]
    UnknownVariant(String),
}

/// The four ablation variants, named after which modules they enable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    UNet,
    DUNet,
    AUNet,
    DAUNet,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::UNet, Variant::DUNet, Variant::AUNet, Variant::DAUNet];

    pub fn from_flags(use_dilation: bool, use_attention: bool) -> Self {
        match (use_dilation, use_attention) {
            (false, false) => Variant::UNet,
            (true, false) => Variant::DUNet,
            (false, true) => Variant::AUNet,
            (true, true) => Variant::DAUNet,
        }
    }

    pub fn uses_dilation(self) -> bool {
        matches!(self, Variant::DUNet | Variant::DAUNet)
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::AUNet | Variant::DAUNet)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::UNet => "U-Net",
            Variant::DUNet => "D-U-Net",
            Variant::AUNet => "A-U-Net",
            Variant::DAUNet => "DA-U-Net",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "unet" => Ok(Variant::UNet),
            "dunet" => Ok(Variant::DUNet),
            "aunet" => Ok(Variant::AUNet),
            "daunet" => Ok(Variant::DAUNet),
            _ => Err(ConfigError::UnknownVariant(s.to_owned())),
        }
    }
}

/// One ASPP branch: dilation rate and kernel size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsppRate {
    pub dilation: usize,
    pub kernel: usize,
}

impl AsppRate {
    pub const fn new(dilation: usize, kernel: usize) -> Self {
        Self { dilation, kernel }
    }
}

/// Declarative description of a U-Net variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of encoder levels (each followed by a 2×2 max-pool).
    pub depth: usize,
    /// Channels at level 0; doubled at every level.
    pub base_channels: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub use_dilation: bool,
    pub use_attention: bool,
    /// Dilation rate of the two 3×3 convs at each encoder level. Only used
    /// when `use_dilation` is set.
    pub encoder_dilations: Vec<usize>,
    pub aspp_rates: Vec<AsppRate>,
    pub tile_size: usize,
}

impl Default for ModelConfig {
    /// DA-U-Net at the canonical U-Net size: depth 4, 64 base channels, 512 tiles.
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 64,
            input_channels: 3,
            num_classes: 2,
            use_dilation: true,
            use_attention: true,
            encoder_dilations: vec![1, 1, 2, 2],
            aspp_rates: vec![AsppRate::new(1, 3), AsppRate::new(3, 3), AsppRate::new(6, 3)],
            tile_size: 512,
        }
    }
}

impl ModelConfig {
    /// Small DA-U-Net used for laptop-scale runs: depth 3, 16 base channels, 64 tiles.
    pub fn desk() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            encoder_dilations: vec![1, 1, 2],
            tile_size: 64,
            ..Self::default()
        }
    }

    pub fn variant(&self) -> Variant {
        Variant::from_flags(self.use_dilation, self.use_attention)
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            use_dilation: variant.uses_dilation(),
            use_attention: variant.uses_attention(),
            ..self.clone()
        }
    }

    /// Channel width at encoder level `level` (level `depth` is the bottleneck).
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Dilation actually applied at an encoder level.
    pub fn dilation_at(&self, level: usize) -> usize {
        if self.use_dilation {
            self.encoder_dilations[level]
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.depth == 0 {
            return fail("depth must be >= 1".into());
        }
        if self.base_channels == 0 || self.input_channels == 0 {
            return fail("base_channels and input_channels must be >= 1".into());
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be >= 2 (got {})", self.num_classes));
        }
        if self.depth >= usize::BITS as usize || self.tile_size % (1usize << self.depth) != 0 || self.tile_size == 0 {
            return fail(format!(
                "tile_size {} must be a positive multiple of 2^depth = {}",
                self.tile_size,
                1u128 << self.depth.min(127)
            ));
        }
        if self.encoder_dilations.len() != self.depth {
            return fail(format!(
                "encoder_dilations has {} entries, expected one per level ({})",
                self.encoder_dilations.len(),
                self.depth
            ));
        }
        if self.encoder_dilations.contains(&0) {
            return fail("encoder dilation rates must be >= 1".into());
        }
        if self.use_dilation && self.aspp_rates.is_empty() {
            return fail("aspp_rates must be non-empty when use_dilation is true".into());
        }
        for r in &self.aspp_rates {
            if r.dilation == 0 || r.kernel == 0 || r.kernel % 2 == 0 {
                return fail(format!(
                    "aspp rate (dilation {}, kernel {}) needs dilation >= 1 and an odd kernel",
                    r.dilation, r.kernel
                ));
            }
        }
        Ok(())
    }

    /// Stable digest of every field, stored in checkpoints.
    pub fn fingerprint(&self) -> u64 {
        let canonical = format!(
            "depth={};base={};in={};classes={};dil={};att={};enc={:?};aspp={:?};tile={}",
            self.depth,
            self.base_channels,
            self.input_channels,
            self.num_classes,
            self.use_dilation,
            self.use_attention,
            self.encoder_dilations,
            self.aspp_rates.iter().map(|r| (r.dilation, r.kernel)).collect::<Vec<_>>(),
            self.tile_size
        );
        let digest = Sha256::digest(canonical.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
    }
}
