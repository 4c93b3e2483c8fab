//! The five compared encoder-decoder networks.
//!
//! Every variant shares one skeleton: per level two 3x3 convolutions with
//! ReLU, a downsampling step, a two-convolution bottleneck, and a decoder that
//! upsamples with a stride-2 transposed convolution, merges the skipped
//! encoder output and applies two more 3x3 convolutions. A 1x1 convolution
//! produces the class logits. The variants differ only in how they
//! downsample, dilate and merge:
//!
//! | variant      | downsample        | 3x3 dilation | skip merge            |
//! |--------------|-------------------|--------------|-----------------------|
//! | `UNet`       | 2x2 max pool      | 1            | concatenation         |
//! | `Dilated(r)` | 2x2 max pool      | r            | concatenation         |
//! | `BNet`       | 2x2 stride-2 conv | 1            | concatenation         |
//! | `TscNet`     | 2x2 max pool      | 1            | translated skip (4C)  |
//!
//! A built network is a [`LayerGraph`]: a flat list of layers referring to
//! earlier layers by index, plus the parameter store.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    concat_channels, conv2d, conv2d_transposed, maxpool2d, relu, ConvSpec, Shape, Tensor,
};
use crate::tsc::{coord_inject, tsc_block, TscBlockConfig};

/// Which of the compared architectures to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum VariantKind {
    UNet,
    /// U-Net with every 3x3 convolution dilated by 2 or 3.
    Dilated(usize),
    /// U-Net with max pooling replaced by stride-2 convolution.
    BNet,
    TscNet,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::UNet,
        VariantKind::Dilated(2),
        VariantKind::Dilated(3),
        VariantKind::BNet,
        VariantKind::TscNet,
    ];

    fn dilation(&self) -> usize {
        match self {
            VariantKind::Dilated(r) => *r,
            _ => 1,
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariantKind::UNet => f.write_str("unet"),
            VariantKind::Dilated(r) => write!(f, "dilated{r}"),
            VariantKind::BNet => f.write_str("bnet"),
            VariantKind::TscNet => f.write_str("tscnet"),
        }
    }
}

impl From<VariantKind> for String {
    fn from(v: VariantKind) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for VariantKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "unet" => Ok(VariantKind::UNet),
            "dilated2" => Ok(VariantKind::Dilated(2)),
            "dilated3" => Ok(VariantKind::Dilated(3)),
            "bnet" => Ok(VariantKind::BNet),
            "tscnet" | "tsc" => Ok(VariantKind::TscNet),
            _ => Err(Error::invalid(format!(
                "unknown variant `{s}` (expected unet, dilated2, dilated3, bnet or tscnet)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub variant: VariantKind,
    /// Number of downsampling levels.
    pub depth: usize,
    pub base_channels: usize,
    /// Explicit widths for levels `0..depth` plus the bottleneck. When unset,
    /// widths double per level from `base_channels`; for `TscNet` they are
    /// then shrunk until the network has fewer parameters than `BNet`.
    pub widths: Option<Vec<usize>>,
    pub num_classes: usize,
    /// Append normalized pixel coordinates to the input.
    pub ote: bool,
    /// Image channels fed to the network (before coordinate injection).
    pub input_channels: usize,
}

impl ArchitectureSpec {
    pub fn new(variant: VariantKind, depth: usize, base_channels: usize, num_classes: usize) -> Self {
        ArchitectureSpec {
            variant,
            depth,
            base_channels,
            widths: None,
            num_classes,
            ote: false,
            input_channels: 3,
        }
    }

    /// Desk-scale default: depth 3, base width 8, three classes.
    pub fn desk_default(variant: VariantKind) -> Self {
        ArchitectureSpec::new(variant, 3, 8, 3)
    }

    pub fn with_ote(mut self, ote: bool) -> Self {
        self.ote = ote;
        self
    }

    pub fn with_widths(mut self, widths: Vec<usize>) -> Self {
        self.widths = Some(widths);
        self
    }

    pub fn with_input_channels(mut self, channels: usize) -> Self {
        self.input_channels = channels;
        self
    }

    /// Channels entering the first convolution.
    pub fn network_input_channels(&self) -> usize {
        self.input_channels + if self.ote { 2 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if let VariantKind::Dilated(r) = self.variant {
            if !(2..=3).contains(&r) {
                return bad(format!("dilation rate {r} not in {{2, 3}}"));
            }
        }
        if self.num_classes == 0 || self.input_channels == 0 {
            return bad("num_classes and input_channels must be positive".into());
        }
        match &self.widths {
            Some(w) if w.len() != self.depth + 1 => bad(format!(
                "{} widths given, depth {} needs {}",
                w.len(),
                self.depth,
                self.depth + 1
            )),
            Some(w) if w.contains(&0) => bad("widths must be positive".into()),
            None if self.base_channels == 0 => bad("base_channels must be positive".into()),
            _ => Ok(()),
        }
    }

    /// Per-level widths actually used, bottleneck last.
    pub fn resolved_widths(&self) -> Vec<usize> {
        if let Some(w) = &self.widths {
            return w.clone();
        }
        if self.variant != VariantKind::TscNet {
            return doubling(self.base_channels, self.depth);
        }
        let budget = Layout::new(VariantKind::BNet, self.depth, &doubling(self.base_channels, self.depth), self)
            .param_count();
        (1..=self.base_channels)
            .rev()
            .map(|b| doubling(b, self.depth))
            .find(|w| Layout::new(VariantKind::TscNet, self.depth, w, self).param_count() < budget)
            .unwrap_or_else(|| doubling(1, self.depth))
    }
}

fn doubling(base: usize, depth: usize) -> Vec<usize> {
    (0..=depth).map(|i| base << i).collect()
}

/// Parameter arithmetic without allocating weights.
struct Layout {
    total: usize,
}

impl Layout {
    fn new(variant: VariantKind, depth: usize, widths: &[usize], spec: &ArchitectureSpec) -> Self {
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let mut total = 0;
        let mut cin = spec.network_input_channels();
        for &w in &widths[..depth] {
            total += conv(cin, w, 3) + conv(w, w, 3);
            if variant == VariantKind::BNet {
                total += conv(w, w, 2);
            }
            cin = w;
        }
        total += conv(cin, widths[depth], 3) + conv(widths[depth], widths[depth], 3);
        let merge = if variant == VariantKind::TscNet { 4 } else { 2 };
        for i in 0..depth {
            total += conv(widths[i + 1], widths[i], 2);
            total += conv(merge * widths[i], widths[i], 3) + conv(widths[i], widths[i], 3);
        }
        total += conv(widths[0], spec.num_classes, 1);
        Layout { total }
    }

    fn param_count(&self) -> usize {
        self.total
    }
}

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerOp {
    Input,
    CoordInject(NodeId),
    Conv { src: NodeId, weight: usize, bias: usize, spec: ConvSpec },
    ConvTransposed { src: NodeId, weight: usize, bias: usize, spec: ConvSpec },
    MaxPool(NodeId),
    Relu(NodeId),
    Concat(Vec<NodeId>),
    Tsc { decoder: NodeId, skip: NodeId, config: TscBlockConfig },
}

impl LayerOp {
    pub fn sources(&self) -> Vec<NodeId> {
        match self {
            LayerOp::Input => vec![],
            LayerOp::CoordInject(s) | LayerOp::MaxPool(s) | LayerOp::Relu(s) => vec![*s],
            LayerOp::Conv { src, .. } | LayerOp::ConvTransposed { src, .. } => vec![*src],
            LayerOp::Concat(srcs) => srcs.clone(),
            LayerOp::Tsc { decoder, skip, .. } => vec![*decoder, *skip],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub name: String,
    pub op: LayerOp,
}

/// A learnable array, kernel `(Cout, Cin, k, k)` or bias `(1, C, 1, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<f64>,
}

/// A built network: layers in evaluation order (the last one yields the
/// logits) and their parameters.
#[derive(Clone, Debug)]
pub struct LayerGraph {
    spec: Option<ArchitectureSpec>,
    input_channels: usize,
    /// Input sides must be multiples of `2^downsamples`.
    downsamples: usize,
    widths: Vec<usize>,
    layers: Vec<Layer>,
    params: Vec<Parameter>,
}

struct Builder {
    layers: Vec<Layer>,
    params: Vec<Parameter>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn push(&mut self, name: impl Into<String>, op: LayerOp) -> NodeId {
        self.layers.push(Layer { name: name.into(), op });
        self.layers.len() - 1
    }

    /// He-normal weights for `Some(fan_in)`, zeros for `None`.
    fn param(&mut self, name: String, shape: Shape, fan_in: Option<usize>) -> usize {
        let data = match fan_in {
            Some(fan_in) => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..shape.numel()).map(|_| normal.sample(&mut self.rng)).collect()
            }
            None => vec![0.0; shape.numel()],
        };
        self.params.push(Parameter { name, shape, data });
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, src: NodeId, cin: usize, cout: usize, k: usize, spec: ConvSpec) -> NodeId {
        let weight = self.param(format!("{name}.weight"), Shape::new(cout, cin, k, k), Some(cin * k * k));
        let bias = self.param(format!("{name}.bias"), Shape::new(1, cout, 1, 1), None);
        self.push(name, LayerOp::Conv { src, weight, bias, spec })
    }

    fn conv_relu(&mut self, name: &str, src: NodeId, cin: usize, cout: usize, dilation: usize) -> NodeId {
        let c = self.conv(name, src, cin, cout, 3, ConvSpec::same3x3(dilation));
        self.push(format!("{name}.relu"), LayerOp::Relu(c))
    }

    fn up(&mut self, name: &str, src: NodeId, cin: usize, cout: usize) -> NodeId {
        let weight = self.param(format!("{name}.weight"), Shape::new(cin, cout, 2, 2), Some(cin));
        let bias = self.param(format!("{name}.bias"), Shape::new(1, cout, 1, 1), None);
        self.push(name, LayerOp::ConvTransposed { src, weight, bias, spec: ConvSpec::new(2, 1, 0) })
    }
}

impl LayerGraph {
    /// Builds the network with weights drawn from `N(0, 2 / fan_in)` seeded by
    /// `seed`; biases start at zero.
    pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let widths = spec.resolved_widths();
        let depth = spec.depth;
        let dil = spec.variant.dilation();
        let mut b = Builder { layers: Vec::new(), params: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) };

        let mut x = b.push("input", LayerOp::Input);
        if spec.ote {
            x = b.push("coords", LayerOp::CoordInject(x));
        }
        let mut cin = spec.network_input_channels();
        let mut skips = Vec::with_capacity(depth);
        for (i, &w) in widths[..depth].iter().enumerate() {
            let a = b.conv_relu(&format!("enc{i}.conv1"), x, cin, w, dil);
            let s = b.conv_relu(&format!("enc{i}.conv2"), a, w, w, dil);
            skips.push(s);
            x = match spec.variant {
                VariantKind::BNet => b.conv(&format!("enc{i}.down"), s, w, w, 2, ConvSpec::new(2, 1, 0)),
                _ => b.push(format!("enc{i}.pool"), LayerOp::MaxPool(s)),
            };
            cin = w;
        }
        x = b.conv_relu("bottleneck.conv1", x, cin, widths[depth], dil);
        x = b.conv_relu("bottleneck.conv2", x, widths[depth], widths[depth], dil);

        for i in (0..depth).rev() {
            let w = widths[i];
            let up = b.up(&format!("dec{i}.up"), x, widths[i + 1], w);
            let (merged, merged_channels) = match spec.variant {
                VariantKind::TscNet => {
                    let config = TscBlockConfig::new(w, depth - i, depth)?;
                    let m = b.push(format!("dec{i}.tsc"), LayerOp::Tsc { decoder: up, skip: skips[i], config });
                    (m, config.out_channels())
                }
                _ => (b.push(format!("dec{i}.concat"), LayerOp::Concat(vec![skips[i], up])), 2 * w),
            };
            let a = b.conv_relu(&format!("dec{i}.conv1"), merged, merged_channels, w, dil);
            x = b.conv_relu(&format!("dec{i}.conv2"), a, w, w, dil);
        }
        b.conv("head", x, widths[0], spec.num_classes, 1, ConvSpec::default());

        Ok(LayerGraph {
            spec: Some(spec.clone()),
            input_channels: spec.input_channels,
            downsamples: depth,
            widths,
            layers: b.layers,
            params: b.params,
        })
    }

    /// A hand-assembled network. Layer 0 must be the only `Input`, sources
    /// must refer to earlier layers and kernels must be square.
    pub fn from_layers(input_channels: usize, layers: Vec<Layer>, params: Vec<Parameter>) -> Result<Self> {
        let bad = |i: usize, msg: String| Err(Error::invalid(msg).in_layer(&layers[i].name));
        if layers.first().map(|l| &l.op) != Some(&LayerOp::Input) {
            return Err(Error::invalid("the first layer must be the input"));
        }
        let mut downsamples = 0;
        for (i, layer) in layers.iter().enumerate() {
            if i > 0 && layer.op == LayerOp::Input {
                return bad(i, "only the first layer may be an input".into());
            }
            if layer.op.sources().iter().any(|&s| s >= i) {
                return bad(i, "refers to a layer that does not precede it".into());
            }
            match &layer.op {
                LayerOp::Conv { weight, bias, spec, .. } | LayerOp::ConvTransposed { weight, bias, spec, .. } => {
                    let (Some(w), Some(b)) = (params.get(*weight), params.get(*bias)) else {
                        return bad(i, "parameter index out of range".into());
                    };
                    if w.shape.h != w.shape.w || b.shape.numel() == 0 {
                        return bad(i, format!("kernel {} is not square", w.shape));
                    }
                    if matches!(layer.op, LayerOp::Conv { .. }) && spec.stride > 1 {
                        downsamples += 1;
                    }
                }
                LayerOp::MaxPool(_) => downsamples += 1,
                _ => {}
            }
        }
        Ok(LayerGraph { spec: None, input_channels, downsamples, widths: Vec::new(), layers, params })
    }

    /// The architecture this graph was built from; `None` for hand-assembled graphs.
    pub fn spec(&self) -> Option<&ArchitectureSpec> {
        self.spec.as_ref()
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// Replaces all parameters; names and shapes must match the current ones.
    pub fn set_params(&mut self, params: Vec<Parameter>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "{} parameters given, network has {}",
                params.len(),
                self.params.len()
            )));
        }
        for (new, old) in params.iter().zip(&self.params) {
            if new.name != old.name || new.shape != old.shape || new.data.len() != old.shape.numel() {
                return Err(Error::invalid(format!(
                    "parameter `{}` {} does not match `{}` {}",
                    new.name, new.shape, old.name, old.shape
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn layer_index(&self, name: &str) -> Option<NodeId> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Number of learnable scalars (kernels and biases).
    pub fn count_params(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// The parameters as leaf tensors.
    pub fn param_tensors(&self, requires_grad: bool) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| {
                let t = Tensor::from_vec(p.shape, p.data.clone()).expect("parameter shape is consistent");
                if requires_grad {
                    t.detached(true)
                } else {
                    t
                }
            })
            .collect()
    }

    /// Checks that `shape` is a valid network input.
    pub fn check_input(&self, shape: Shape) -> Result<()> {
        if shape.c != self.input_channels {
            return Err(Error::shape(
                "forward",
                format!("input has {} channels, network expects {}", shape.c, self.input_channels),
            )
            .in_layer("input"));
        }
        let div = 1usize << self.downsamples;
        if !shape.h.is_multiple_of(div) || !shape.w.is_multiple_of(div) || shape.h == 0 || shape.w == 0 {
            return Err(Error::shape(
                "forward",
                format!("input {}x{} is not divisible by 2^{} = {div}", shape.h, shape.w, self.downsamples),
            )
            .in_layer("input"));
        }
        Ok(())
    }

    /// Spatial size `(h, w)` of every layer's output for an `h x w` input.
    pub fn spatial_sizes(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        self.check_input(Shape::new(1, self.input_channels, h, w))?;
        let mut sizes: Vec<(usize, usize)> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let size = match &layer.op {
                LayerOp::Input => Some((h, w)),
                LayerOp::CoordInject(s) | LayerOp::Relu(s) => Some(sizes[*s]),
                LayerOp::MaxPool(s) => Some((sizes[*s].0 / 2, sizes[*s].1 / 2)),
                LayerOp::Conv { src, weight, spec, .. } => {
                    let k = self.params[*weight].shape.h;
                    let (ih, iw) = sizes[*src];
                    spec.output_len(ih, k).zip(spec.output_len(iw, k))
                }
                LayerOp::ConvTransposed { src, weight, spec, .. } => {
                    let k = self.params[*weight].shape.h;
                    let (ih, iw) = sizes[*src];
                    spec.transposed_output_len(ih, k).zip(spec.transposed_output_len(iw, k))
                }
                LayerOp::Concat(srcs) => srcs.first().map(|&s| sizes[s]),
                LayerOp::Tsc { decoder, .. } => Some(sizes[*decoder]),
            };
            let Some(size) = size else {
                return Err(Error::shape("spatial_sizes", format!("empty output for a {h}x{w} input"))
                    .in_layer(&layer.name));
            };
            sizes.push(size);
        }
        Ok(sizes)
    }

    /// Outputs of every layer for `input`, evaluated with the given parameter tensors.
    pub fn trace(&self, input: &Tensor, params: &[Tensor]) -> Result<Vec<Tensor>> {
        self.check_input(input.shape())?;
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "{} parameter tensors for a network with {}",
                params.len(),
                self.params.len()
            )));
        }
        let mut values: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let out = match &layer.op {
                LayerOp::Input => Ok(input.clone()),
                LayerOp::CoordInject(s) => coord_inject(&values[*s]),
                LayerOp::Conv { src, weight, bias, spec } => {
                    conv2d(&values[*src], &params[*weight], Some(&params[*bias]), *spec)
                }
                LayerOp::ConvTransposed { src, weight, bias, spec } => {
                    conv2d_transposed(&values[*src], &params[*weight], Some(&params[*bias]), *spec)
                }
                LayerOp::MaxPool(s) => maxpool2d(&values[*s]),
                LayerOp::Relu(s) => Ok(relu(&values[*s])),
                LayerOp::Concat(srcs) => {
                    let parts: Vec<&Tensor> = srcs.iter().map(|&s| &values[s]).collect();
                    concat_channels(&parts)
                }
                LayerOp::Tsc { decoder, skip, config } => tsc_block(&values[*decoder], &values[*skip], config),
            }
            .map_err(|e| e.in_layer(&layer.name))?;
            values.push(out);
        }
        Ok(values)
    }

    /// Logits `(N, classes, H, W)` using the given parameter tensors.
    pub fn forward_with(&self, input: &Tensor, params: &[Tensor]) -> Result<Tensor> {
        Ok(self.trace(input, params)?.pop().expect("graph has layers"))
    }

    /// Logits with the stored parameters, not tracking parameter gradients.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.forward_with(input, &self.param_tensors(false))
    }
}

/// Number of learnable scalars of a built network.
pub fn count_params(graph: &LayerGraph) -> usize {
    graph.count_params()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_conv_count() {
        let mut b = Builder { layers: vec![], params: vec![], rng: ChaCha8Rng::seed_from_u64(0) };
        let x = b.push("in", LayerOp::Input);
        b.conv("c", x, 3, 8, 3, ConvSpec::same3x3(1));
        let n: usize = b.params.iter().map(|p| p.data.len()).sum();
        assert_eq!(n, 3 * 8 * 9 + 8);
    }

    #[test]
    fn layout_matches_built_count() {
        for v in VariantKind::ALL {
            for ote in [false, true] {
                let spec = ArchitectureSpec::new(v, 2, 4, 3).with_ote(ote);
                let g = LayerGraph::build(&spec, 1).unwrap();
                let layout = Layout::new(v, 2, g.widths(), &spec).param_count();
                assert_eq!(g.count_params(), layout, "{v}");
            }
        }
    }

    #[test]
    fn unet_shape_contract() {
        let g = LayerGraph::build(&ArchitectureSpec::new(VariantKind::UNet, 2, 4, 2), 0).unwrap();
        let y = g.forward(&Tensor::zeros([1, 3, 16, 16])).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 16, 16));
    }

    #[test]
    fn tsc_factors_follow_level() {
        let g = LayerGraph::build(&ArchitectureSpec::new(VariantKind::TscNet, 2, 4, 2), 0).unwrap();
        let mut factors: Vec<(String, f64)> = g
            .layers()
            .iter()
            .filter_map(|l| match &l.op {
                LayerOp::Tsc { config, .. } => Some((l.name.clone(), config.factor().to_f64())),
                _ => None,
            })
            .collect();
        factors.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(factors, vec![("dec0.tsc".into(), 2.0 / 3.0), ("dec1.tsc".into(), 1.0 / 3.0)]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in VariantKind::ALL {
            assert_eq!(v.to_string().parse::<VariantKind>().unwrap(), v);
        }
        assert!("dilated4".parse::<VariantKind>().is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(LayerGraph::build(&ArchitectureSpec::new(VariantKind::Dilated(4), 2, 4, 2), 0).is_err());
        assert!(LayerGraph::build(&ArchitectureSpec::new(VariantKind::UNet, 0, 4, 2), 0).is_err());
        let s = ArchitectureSpec::new(VariantKind::UNet, 2, 4, 2).with_widths(vec![4, 8]);
        assert!(LayerGraph::build(&s, 0).is_err());
    }

    #[test]
    fn indivisible_input_names_layer() {
        let g = LayerGraph::build(&ArchitectureSpec::new(VariantKind::UNet, 2, 2, 2), 0).unwrap();
        let err = g.forward(&Tensor::zeros([1, 3, 10, 12])).unwrap_err().to_string();
        assert!(err.contains("input") && err.contains("divisible"), "{err}");
        let err = g.forward(&Tensor::zeros([1, 5, 8, 8])).unwrap_err().to_string();
        assert!(err.contains("channels"), "{err}");
    }

    #[test]
    fn build_is_deterministic() {
        let spec = ArchitectureSpec::new(VariantKind::BNet, 2, 3, 2);
        let a = LayerGraph::build(&spec, 9).unwrap();
        let b = LayerGraph::build(&spec, 9).unwrap();
        let c = LayerGraph::build(&spec, 10).unwrap();
        assert!(a.params().iter().zip(b.params()).all(|(p, q)| p.data == q.data));
        assert!(a.params().iter().zip(c.params()).any(|(p, q)| p.data != q.data));
    }
}
