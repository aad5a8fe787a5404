//! Network construction for the four U-Net variants and their static analysis.

mod analysis;
mod blocks;
mod config;
mod model;
mod params;

pub use analysis::{
    overhead_vs_unet, parameter_count, parameter_count_for, receptive_field, receptive_field_of, Overhead,
    ParameterCount, ReceptiveFieldReport, ReceptiveFieldRow, RfLayer,
};
pub use blocks::{aspp_forward, attention_gate, ConvParams, GateOutput, GateParams};
pub use config::{AsppRate, ConfigError, ModelConfig, Variant};
pub use model::{argmax_labels, build_model, layer_specs, Bound, ForwardOptions, ForwardOutput, LayerKind, LayerSpec, Model};
pub use params::{Param, ParamStore};
