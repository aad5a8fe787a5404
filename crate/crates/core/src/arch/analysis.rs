//! Static analysis of a configuration: receptive field and parameter counts.
//! Nothing here runs a forward pass.

use serde::Serialize;

use super::config::{ModelConfig, Variant};
use super::model::{layer_specs, Model};
use crate::tensor::{effective_kernel_size, Real};

/// A layer as seen by the receptive-field recurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RfLayer {
    pub name: String,
    pub kernel_size: usize,
    pub dilation: usize,
    pub stride: usize,
}

impl RfLayer {
    pub fn conv(name: impl Into<String>, kernel_size: usize, dilation: usize) -> Self {
        Self {
            name: name.into(),
            kernel_size,
            dilation,
            stride: 1,
        }
    }

    pub fn pool(name: impl Into<String>, window: usize) -> Self {
        Self {
            name: name.into(),
            kernel_size: window,
            dilation: 1,
            stride: window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReceptiveFieldRow {
    pub layer: String,
    /// Product of strides up to and including this layer.
    pub stride: usize,
    pub effective_kernel: usize,
    /// Receptive field in input pixels after this layer.
    pub receptive_field: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReceptiveFieldReport {
    pub rows: Vec<ReceptiveFieldRow>,
    pub bottleneck_rf: usize,
    pub tile_size: usize,
    pub fraction_of_tile: f64,
}

/// `rf ← rf + (k_h − 1)·jump`, `jump ← jump·stride` over a chain of layers.
pub fn receptive_field_of(layers: &[RfLayer]) -> Vec<ReceptiveFieldRow> {
    let mut rf = 1;
    let mut jump = 1;
    layers
        .iter()
        .map(|l| {
            let kh = effective_kernel_size(l.kernel_size, l.dilation);
            rf += (kh - 1) * jump;
            jump *= l.stride;
            ReceptiveFieldRow {
                layer: l.name.clone(),
                stride: jump,
                effective_kernel: kh,
                receptive_field: rf,
            }
        })
        .collect()
}

/// Receptive field through the encoder and bottleneck of `config`.
///
/// Parallel ASPP branches are listed narrowest first; the bottleneck value
/// is that of the widest branch.
pub fn receptive_field(config: &ModelConfig) -> ReceptiveFieldReport {
    let mut chain = Vec::new();
    for level in 0..config.depth {
        let d = config.dilation_at(level);
        chain.push(RfLayer::conv(format!("enc{level}.conv1"), 3, d));
        chain.push(RfLayer::conv(format!("enc{level}.conv2"), 3, d));
        chain.push(RfLayer::pool(format!("enc{level}.pool"), 2));
    }
    let mut rows = receptive_field_of(&chain);
    let (mut rf, jump) = rows.last().map_or((1, 1), |r| (r.receptive_field, r.stride));
    if config.use_dilation {
        let mut branches: Vec<(usize, String)> = config
            .aspp_rates
            .iter()
            .enumerate()
            .map(|(i, r)| (effective_kernel_size(r.kernel, r.dilation), format!("aspp.branch{i}")))
            .collect();
        branches.sort();
        let base = rf;
        for (kh, name) in branches {
            rf = rf.max(base + (kh - 1) * jump);
            rows.push(ReceptiveFieldRow {
                layer: name,
                stride: jump,
                effective_kernel: kh,
                receptive_field: base + (kh - 1) * jump,
            });
        }
        rows.push(ReceptiveFieldRow {
            layer: "aspp.project".into(),
            stride: jump,
            effective_kernel: 1,
            receptive_field: rf,
        });
    } else {
        for name in ["bottleneck.conv1", "bottleneck.conv2"] {
            rf += 2 * jump;
            rows.push(ReceptiveFieldRow {
                layer: name.into(),
                stride: jump,
                effective_kernel: 3,
                receptive_field: rf,
            });
        }
    }
    ReceptiveFieldReport {
        rows,
        bottleneck_rf: rf,
        tile_size: config.tile_size,
        fraction_of_tile: rf as f64 / config.tile_size as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParameterCount {
    pub per_layer: Vec<(String, usize)>,
    pub total: usize,
}

impl ParameterCount {
    pub fn layer(&self, name: &str) -> Option<usize> {
        self.per_layer.iter().find(|(n, _)| n == name).map(|&(_, c)| c)
    }
}

/// Counts scalars in a built model's registry, grouped by layer.
pub fn parameter_count<T: Real>(model: &Model<T>) -> ParameterCount {
    let mut per_layer: Vec<(String, usize)> = Vec::new();
    for (name, p) in model.params().iter() {
        let layer = name.rsplit_once('.').map_or(name, |(l, _)| l);
        match per_layer.last_mut() {
            Some((last, count)) if last == layer => *count += p.value.numel(),
            _ => per_layer.push((layer.to_owned(), p.value.numel())),
        }
    }
    let total = per_layer.iter().map(|(_, c)| c).sum();
    ParameterCount { per_layer, total }
}

/// Same as [`parameter_count`], computed from the config alone.
pub fn parameter_count_for(config: &ModelConfig) -> ParameterCount {
    let per_layer: Vec<(String, usize)> = layer_specs(config)
        .into_iter()
        .map(|l| {
            let n = l.param_count();
            (l.name, n)
        })
        .collect();
    let total = per_layer.iter().map(|(_, c)| c).sum();
    ParameterCount { per_layer, total }
}

/// Parameter totals of a variant against the plain U-Net of the same size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Overhead {
    pub variant: String,
    pub variant_params: usize,
    pub unet_params: usize,
    pub extra_params: i64,
    /// `extra / unet`.
    pub ratio: f64,
}

pub fn overhead_vs_unet(config: &ModelConfig) -> Overhead {
    let variant = parameter_count_for(config).total;
    let unet = parameter_count_for(&config.with_variant(Variant::UNet)).total;
    let extra = variant as i64 - unet as i64;
    Overhead {
        variant: config.variant().name().to_owned(),
        variant_params: variant,
        unet_params: unet,
        extra_params: extra,
        ratio: extra as f64 / unet as f64,
    }
}
