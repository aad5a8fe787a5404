use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::blocks::{aspp_forward, attention_gate, ConvParams, GateParams};
use super::config::{ConfigError, ModelConfig};
use super::params::ParamStore;
use crate::tensor::{ConvGeometry, Graph, Real, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv(ConvGeometry),
    /// ×2 learned upsampling, kernel `(in, out, 2, 2)`.
    TransposedConv,
}

/// Static description of one learned layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    fn conv(name: impl Into<String>, in_channels: usize, out_channels: usize, geom: ConvGeometry) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv(geom),
            in_channels,
            out_channels,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv(geom) => [self.out_channels, self.in_channels, geom.kernel_size, geom.kernel_size],
            LayerKind::TransposedConv => [self.in_channels, self.out_channels, 2, 2],
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv(geom) => self.in_channels * geom.kernel_size * geom.kernel_size,
            LayerKind::TransposedConv => self.in_channels,
        }
    }

    /// Weights plus one bias per output channel.
    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + self.out_channels
    }

    pub fn geometry(&self) -> ConvGeometry {
        match self.kind {
            LayerKind::Conv(geom) => geom,
            LayerKind::TransposedConv => ConvGeometry {
                kernel_size: 2,
                stride: 2,
                padding: 0,
                dilation: 1,
            },
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
}

/// Every learned layer of the configured variant, in forward order.
pub fn layer_specs(config: &ModelConfig) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut in_c = config.input_channels;
    for level in 0..config.depth {
        let c = config.channels_at(level);
        let geom = ConvGeometry::same(3, config.dilation_at(level));
        specs.push(LayerSpec::conv(format!("enc{level}.conv1"), in_c, c, geom));
        specs.push(LayerSpec::conv(format!("enc{level}.conv2"), c, c, geom));
        in_c = c;
    }
    let bottleneck = config.channels_at(config.depth);
    if config.use_dilation {
        for (i, rate) in config.aspp_rates.iter().enumerate() {
            specs.push(LayerSpec::conv(
                format!("aspp.branch{i}"),
                in_c,
                bottleneck,
                ConvGeometry::same(rate.kernel, rate.dilation),
            ));
        }
        specs.push(LayerSpec::conv(
            "aspp.project",
            bottleneck * config.aspp_rates.len(),
            bottleneck,
            ConvGeometry::pointwise(1),
        ));
    } else {
        specs.push(LayerSpec::conv("bottleneck.conv1", in_c, bottleneck, ConvGeometry::same(3, 1)));
        specs.push(LayerSpec::conv("bottleneck.conv2", bottleneck, bottleneck, ConvGeometry::same(3, 1)));
    }
    for level in (0..config.depth).rev() {
        let c = config.channels_at(level);
        let coarse = config.channels_at(level + 1);
        specs.push(LayerSpec {
            name: format!("dec{level}.up"),
            kind: LayerKind::TransposedConv,
            in_channels: coarse,
            out_channels: c,
        });
        if config.use_attention {
            specs.push(LayerSpec::conv(format!("dec{level}.gate.theta"), c, c, ConvGeometry::pointwise(2)));
            specs.push(LayerSpec::conv(format!("dec{level}.gate.phi"), coarse, c, ConvGeometry::pointwise(1)));
            specs.push(LayerSpec::conv(format!("dec{level}.gate.psi"), c, 1, ConvGeometry::pointwise(1)));
        }
        specs.push(LayerSpec::conv(format!("dec{level}.conv1"), 2 * c, c, ConvGeometry::same(3, 1)));
        specs.push(LayerSpec::conv(format!("dec{level}.conv2"), c, c, ConvGeometry::same(3, 1)));
    }
    specs.push(LayerSpec::conv(
        "head",
        config.channels_at(0),
        config.num_classes,
        ConvGeometry::pointwise(1),
    ));
    specs
}

/// Per-parameter RNG seed, so a layer's initial weights depend only on the
/// run seed and its name.
fn param_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then a splitmix64 finaliser mixed with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Instantiated network: config, layer table and parameter registry.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    layers: Vec<LayerSpec>,
    params: ParamStore<T>,
}

/// Parameter leaves of a model on a particular graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Knobs for analysis runs of the forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    /// Factor applied to ungated skip connections.
    pub skip_scale: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { skip_scale: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Coarse attention maps α, deepest decoder level first.
    pub attention: Vec<Var>,
}

/// He-uniform kernels, zero biases, deterministic in `seed`.
pub fn build_model<T: Real>(config: &ModelConfig, seed: u64) -> Result<Model<T>, ConfigError> {
    config.validate()?;
    let layers = layer_specs(config);
    let mut params = ParamStore::new();
    for layer in &layers {
        let bound = (6.0 / layer.fan_in() as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let mut rng = ChaCha8Rng::seed_from_u64(param_seed(seed, &layer.weight_name()));
        let weight = Tensor::from_fn(layer.weight_shape(), |_| T::from_f64(dist.sample(&mut rng)));
        let inserted = params.insert(layer.weight_name(), weight, true)
            && params.insert(layer.bias_name(), Tensor::zeros([layer.out_channels, 1, 1, 1]), false);
        if !inserted {
            return Err(ConfigError::Invalid(format!("duplicate layer name {}", layer.name)));
        }
    }
    Ok(Model {
        config: config.clone(),
        layers,
        params,
    })
}

impl<T: Real> Model<T> {
    /// Rebuilds a model from stored parameters, checking names and shapes.
    /// Decay flags are reset from the layer layout.
    pub fn from_params(config: &ModelConfig, params: ParamStore<T>) -> Result<Self, ConfigError> {
        config.validate()?;
        let layers = layer_specs(config);
        let mut expected = Vec::new();
        for layer in &layers {
            expected.push((layer.weight_name(), layer.weight_shape(), true));
            expected.push((layer.bias_name(), [layer.out_channels, 1, 1, 1], false));
        }
        if expected.len() != params.len() {
            return Err(ConfigError::Invalid(format!(
                "parameter count mismatch: config has {} tensors, store has {}",
                expected.len(),
                params.len()
            )));
        }
        let mut ordered = ParamStore::new();
        for (name, shape, decay) in expected {
            let p = params
                .get(&name)
                .ok_or_else(|| ConfigError::Invalid(format!("missing parameter {name}")))?;
            if p.value.shape().to_array() != shape {
                return Err(ConfigError::Invalid(format!(
                    "parameter {name} has shape {}, expected {shape:?}",
                    p.value.shape()
                )));
            }
            ordered.insert(name, p.value.clone(), decay);
        }
        Ok(Self {
            config: config.clone(),
            layers,
            params: ordered,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Places every parameter on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(_, p)| {
                if trainable {
                    g.parameter(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    fn var(&self, bound: &Bound, name: &str) -> Var {
        bound.vars[self.params.index_of(name).unwrap_or_else(|| panic!("unregistered parameter {name}"))]
    }

    fn layer(&self, bound: &Bound, name: &str) -> ConvParams {
        let spec = self
            .layers
            .iter()
            .find(|l| l.name == name)
            .unwrap_or_else(|| panic!("unknown layer {name}"));
        ConvParams {
            weight: self.var(bound, &spec.weight_name()),
            bias: Some(self.var(bound, &spec.bias_name())),
            geom: spec.geometry(),
        }
    }

    fn conv_relu(&self, g: &mut Graph<T>, bound: &Bound, name: &str, x: Var) -> Result<Var, TensorError> {
        let y = self.layer(bound, name).apply(g, x)?;
        Ok(g.relu(y))
    }

    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, x: Var) -> Result<Var, TensorError> {
        Ok(self.forward_with(g, bound, x, ForwardOptions::default())?.logits)
    }

    pub fn forward_with(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        x: Var,
        options: ForwardOptions,
    ) -> Result<ForwardOutput, TensorError> {
        let cfg = &self.config;
        let s = g.shape(x);
        if s.channels != cfg.input_channels {
            return Err(TensorError::ShapeMismatch {
                op: "model",
                dim: "input channels",
                left: s.channels,
                right: cfg.input_channels,
            });
        }
        let factor = 1usize << cfg.depth;
        for (dim, size) in [("height", s.height), ("width", s.width)] {
            if size % factor != 0 {
                return Err(TensorError::NotDivisible {
                    op: "model",
                    dim,
                    size,
                    window: factor,
                });
            }
        }

        let mut h = x;
        let mut skips = Vec::with_capacity(cfg.depth);
        for level in 0..cfg.depth {
            h = self.conv_relu(g, bound, &format!("enc{level}.conv1"), h)?;
            h = self.conv_relu(g, bound, &format!("enc{level}.conv2"), h)?;
            skips.push(h);
            h = g.max_pool2d(h, 2)?;
        }

        h = if cfg.use_dilation {
            let branches: Vec<ConvParams> = (0..cfg.aspp_rates.len())
                .map(|i| self.layer(bound, &format!("aspp.branch{i}")))
                .collect();
            let project = self.layer(bound, "aspp.project");
            let y = aspp_forward(g, h, &branches, &project)?;
            g.relu(y)
        } else {
            let y = self.conv_relu(g, bound, "bottleneck.conv1", h)?;
            self.conv_relu(g, bound, "bottleneck.conv2", y)?
        };

        let mut attention = Vec::new();
        for level in (0..cfg.depth).rev() {
            let coarse = h;
            let up = self.layer(bound, &format!("dec{level}.up"));
            let up = g.transposed_conv2d(coarse, up.weight, up.bias, up.geom)?;
            let skip = if cfg.use_attention {
                let gate = GateParams {
                    theta: self.layer(bound, &format!("dec{level}.gate.theta")),
                    phi: self.layer(bound, &format!("dec{level}.gate.phi")),
                    psi: self.layer(bound, &format!("dec{level}.gate.psi")),
                };
                let out = attention_gate(g, skips[level], coarse, &gate)?;
                attention.push(out.alpha);
                out.output
            } else if options.skip_scale != 1.0 {
                let s = g.shape(skips[level]);
                let scale = g.constant(Tensor::full([s.batch, 1, s.height, s.width], T::from_f64(options.skip_scale)));
                g.mul_broadcast(skips[level], scale)?
            } else {
                skips[level]
            };
            h = g.concat_channels(&[skip, up])?;
            h = self.conv_relu(g, bound, &format!("dec{level}.conv1"), h)?;
            h = self.conv_relu(g, bound, &format!("dec{level}.conv2"), h)?;
        }
        let logits = self.layer(bound, "head").apply(g, h)?;
        Ok(ForwardOutput { logits, attention })
    }

    /// Raw logits for a batch, without recording gradients.
    pub fn logits(&self, input: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, &bound, x)?;
        Ok(g.value(y).clone())
    }

    /// Per-pixel class probabilities for a batch.
    pub fn predict_probs(&self, input: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(input.clone());
        let y = self.forward(&mut g, &bound, x)?;
        let p = g.softmax_channels(y);
        Ok(g.value(p).clone())
    }

    /// Gradients of all parameters after `backward`, zeros where none arrived.
    pub fn collect_grads(&self, g: &Graph<T>, bound: &Bound) -> Vec<Tensor<T>> {
        bound
            .vars
            .iter()
            .zip(self.params.iter())
            .map(|(&v, (_, p))| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect()
    }
}

/// Arg-max over the class axis; returns `(batch, height, width)` labels.
pub fn argmax_labels<T: Real>(scores: &Tensor<T>) -> Vec<u8> {
    let s = scores.shape();
    let plane = s.plane();
    let mut out = Vec::with_capacity(s.batch * plane);
    for b in 0..s.batch {
        for p in 0..plane {
            let mut best = 0;
            for c in 1..s.channels {
                if scores.data()[b * s.item() + c * plane + p] > scores.data()[b * s.item() + best * plane + p] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::config::Variant;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            depth: 2,
            base_channels: 4,
            encoder_dilations: vec![1, 2],
            tile_size: 16,
            ..ModelConfig::default()
        }
        .with_variant(variant)
    }

    #[test]
    fn logits_match_input_size_for_all_variants() {
        for v in Variant::ALL {
            let model = build_model::<f32>(&tiny(v), 3).unwrap();
            for size in [8, 16, 24] {
                let x = Tensor::from_fn([2, 3, size, size], |[b, c, h, w]| ((b + c + h * w) % 7) as f32 / 7.0 - 0.5);
                let y = model.logits(&x).unwrap();
                assert_eq!(y.shape().to_array(), [2, 2, size, size], "{v}");
                assert!(y.is_finite());
            }
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model::<f32>(&tiny(Variant::DAUNet), 11).unwrap();
        let b = build_model::<f32>(&tiny(Variant::DAUNet), 11).unwrap();
        let c = build_model::<f32>(&tiny(Variant::DAUNet), 12).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn shared_layers_identical_across_variants() {
        let u = build_model::<f32>(&tiny(Variant::UNet), 5).unwrap();
        let da = build_model::<f32>(&tiny(Variant::DAUNet), 5).unwrap();
        for (name, p) in u.params().iter() {
            if let Some(q) = da.params().get(name) {
                assert_eq!(p, q, "{name}");
            }
        }
    }

    #[test]
    fn forward_uses_every_parameter() {
        let model = build_model::<f64>(&tiny(Variant::DAUNet), 1).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let x = g.constant(Tensor::from_fn([1, 3, 8, 8], |[_, c, h, w]| (c as f64 - 1.0) * 0.3 + (h * 8 + w) as f64 / 64.0));
        let y = model.forward(&mut g, &bound, x).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        for (&v, name) in bound.vars().iter().zip(model.params().names()) {
            assert!(g.grad(v).is_some(), "{name} received no gradient");
        }
    }

    #[test]
    fn rejects_bad_input() {
        let model = build_model::<f32>(&tiny(Variant::UNet), 1).unwrap();
        assert!(model.logits(&Tensor::zeros([1, 3, 10, 12])).is_err());
        assert!(model.logits(&Tensor::zeros([1, 1, 8, 8])).is_err());
    }

    #[test]
    fn from_params_round_trip_and_mismatch() {
        let model = build_model::<f32>(&tiny(Variant::DAUNet), 2).unwrap();
        let again = Model::from_params(model.config(), model.params().clone()).unwrap();
        assert_eq!(again.params(), model.params());
        assert!(Model::from_params(&tiny(Variant::UNet), model.params().clone()).is_err());
    }

    #[test]
    fn argmax_ignores_constant_shift() {
        let scores = Tensor::<f32>::from_fn([1, 2, 3, 3], |[_, c, h, w]| ((h * 3 + w) as f32 - 4.0) * if c == 0 { 1.0 } else { -0.5 });
        let shifted = scores.map(|v| v + 123.0);
        assert_eq!(argmax_labels(&scores), argmax_labels(&shifted));
    }
}
