//! Shape, parameter, FLOP and receptive-field bookkeeping for the
//! keypoint network family, without executing any tensors.
//!
//! The graph is a structural reconstruction: encoder
//! `conv4x4/s2 -> conv3x3 -> pool4 -> resblock -> pool4 -> resblock` producing
//! features at 1/2, 1/8 and 1/32 resolution; a detection head at 1/2 that
//! adds 1x1-reduced pyramid features, applies 3x3, 3x3, 1x1 convolutions and
//! pixel-shuffles back to full resolution; and a description head at 1/4
//! that concatenates resized pyramid features followed by a 1x1 convolution,
//! a grouped 3x3 convolution (16 channels per group) and a 1x1 output
//! convolution.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Channels per group in the description head's grouped convolution.
pub const CHANNELS_PER_GROUP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelSize {
    Tiny,
    Small,
    Medium,
    Large,
    Enormous,
}

impl ModelSize {
    pub const ALL: [ModelSize; 5] = [
        ModelSize::Tiny,
        ModelSize::Small,
        ModelSize::Medium,
        ModelSize::Large,
        ModelSize::Enormous,
    ];

    pub fn letter(self) -> char {
        match self {
            ModelSize::Tiny => 'T',
            ModelSize::Small => 'S',
            ModelSize::Medium => 'M',
            ModelSize::Large => 'L',
            ModelSize::Enormous => 'E',
        }
    }

    /// `(C1, C2, C3, C4, C_agg, C_det)`.
    fn channels(self) -> [usize; 6] {
        match self {
            ModelSize::Tiny => [8, 8, 16, 24, 48, 8],
            ModelSize::Small => [8, 8, 24, 32, 64, 8],
            ModelSize::Medium => [8, 16, 32, 48, 96, 8],
            ModelSize::Large => [8, 16, 48, 64, 128, 8],
            ModelSize::Enormous => [16, 16, 48, 64, 128, 16],
        }
    }

    pub fn descriptor_dims(self) -> &'static [usize] {
        match self {
            ModelSize::Tiny => &[32, 48],
            _ => &[32, 48, 64],
        }
    }
}

impl FromStr for ModelSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T" | "TINY" => Ok(ModelSize::Tiny),
            "S" | "SMALL" => Ok(ModelSize::Small),
            "M" | "MEDIUM" => Ok(ModelSize::Medium),
            "L" | "LARGE" => Ok(ModelSize::Large),
            "E" | "ENORMOUS" => Ok(ModelSize::Enormous),
            other => Err(Error::InvalidConfig(format!("unknown model size {other:?}"))),
        }
    }
}

/// Channel configuration of one named sub-model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub size: ModelSize,
    pub c1: usize,
    pub c2: usize,
    pub c3: usize,
    pub c4: usize,
    pub c_agg: usize,
    pub c_det: usize,
    pub c_desc: usize,
}

impl ModelConfig {
    pub fn named(size: ModelSize, c_desc: usize) -> Result<Self> {
        if !size.descriptor_dims().contains(&c_desc) {
            return Err(Error::InvalidConfig(format!(
                "{}{c_desc} is not a published configuration",
                size.letter()
            )));
        }
        let [c1, c2, c3, c4, c_agg, c_det] = size.channels();
        Ok(Self {
            size,
            c1,
            c2,
            c3,
            c4,
            c_agg,
            c_det,
            c_desc,
        })
    }

    /// All 14 published sub-models, smallest first.
    pub fn all() -> Vec<Self> {
        ModelSize::ALL
            .iter()
            .flat_map(|&s| s.descriptor_dims().iter().map(move |&d| Self::named(s, d).unwrap()))
            .collect()
    }

    pub fn name(&self) -> String {
        format!("{}{}", self.size.letter(), self.c_desc)
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    /// Parses names such as `"T32"` or `"E64"`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, dim) = s.split_at(s.find(|c: char| c.is_ascii_digit()).unwrap_or(s.len()));
        let dim = dim
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad model name {s:?}")))?;
        Self::named(head.parse()?, dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Input,
    Conv,
    GroupConv,
    AvgPool,
    ResBlock,
    PixelShuffle,
    Add,
    Concat,
    Upsample,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Input => "input",
            LayerKind::Conv => "conv",
            LayerKind::GroupConv => "group-conv",
            LayerKind::AvgPool => "avg-pool",
            LayerKind::ResBlock => "resblock",
            LayerKind::PixelShuffle => "pixel-shuffle",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
            LayerKind::Upsample => "upsample",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Encoder,
    Detection,
    Description,
}

/// One node of a [`LayerGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    /// Spatial upscaling factor (pixel-shuffle, upsample); 1 otherwise.
    pub upscale: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    /// Followed by a normalization layer (2 parameters per channel).
    pub norm: bool,
    pub stage: Stage,
    pub inputs: Vec<usize>,
    /// Image size divided by this layer's output size.
    pub downsample: usize,
}

impl Layer {
    fn conv_params(k: usize, cin: usize, cout: usize, groups: usize, norm: bool) -> u64 {
        let (k, cin, cout, groups) = (k as u64, cin as u64, cout as u64, groups as u64);
        k * k * cin * cout / groups + cout + if norm { 2 * cout } else { 0 }
    }

    fn conv_macs_per_pixel(k: usize, cin: usize, cout: usize, groups: usize) -> u64 {
        (k * k * (cin / groups) * cout) as u64
    }

    /// Trainable parameters, including bias and normalization.
    pub fn params(&self) -> u64 {
        match self.kind {
            LayerKind::Conv | LayerKind::GroupConv => {
                Self::conv_params(self.kernel, self.in_channels, self.out_channels, self.groups, self.norm)
            }
            LayerKind::ResBlock => {
                let (cin, cout) = (self.in_channels, self.out_channels);
                let mut p = Self::conv_params(3, cin, cout, 1, self.norm)
                    + Self::conv_params(3, cout, cout, 1, self.norm);
                if cin != cout {
                    p += Self::conv_params(1, cin, cout, 1, self.norm);
                }
                p
            }
            _ => 0,
        }
    }

    fn macs_per_output_pixel(&self) -> u64 {
        match self.kind {
            LayerKind::Conv | LayerKind::GroupConv => {
                Self::conv_macs_per_pixel(self.kernel, self.in_channels, self.out_channels, self.groups)
            }
            LayerKind::ResBlock => {
                let (cin, cout) = (self.in_channels, self.out_channels);
                let mut m = Self::conv_macs_per_pixel(3, cin, cout, 1) + Self::conv_macs_per_pixel(3, cout, cout, 1);
                if cin != cout {
                    m += Self::conv_macs_per_pixel(1, cin, cout, 1);
                }
                m
            }
            _ => 0,
        }
    }
}

/// An ordered DAG of layers; every layer's inputs precede it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerGraph {
    pub layers: Vec<Layer>,
}

impl LayerGraph {
    /// A graph holding only a single-channel image input.
    pub fn new() -> Self {
        let mut g = Self::default();
        g.layers.push(Layer {
            name: "input".into(),
            kind: LayerKind::Input,
            kernel: 1,
            stride: 1,
            upscale: 1,
            in_channels: 1,
            out_channels: 1,
            groups: 1,
            norm: false,
            stage: Stage::Encoder,
            inputs: vec![],
            downsample: 1,
        });
        g
    }

    pub fn input(&self) -> usize {
        0
    }

    fn push(&mut self, mut layer: Layer) -> usize {
        let src = &self.layers[layer.inputs[0]];
        layer.downsample = src.downsample * layer.stride / layer.upscale.max(1);
        self.layers.push(layer);
        self.layers.len() - 1
    }

    fn unary(&mut self, name: &str, kind: LayerKind, from: usize, stage: Stage) -> Layer {
        let cin = self.layers[from].out_channels;
        Layer {
            name: name.into(),
            kind,
            kernel: 1,
            stride: 1,
            upscale: 1,
            in_channels: cin,
            out_channels: cin,
            groups: 1,
            norm: false,
            stage,
            inputs: vec![from],
            downsample: 0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        from: usize,
        kernel: usize,
        stride: usize,
        out_channels: usize,
        groups: usize,
        norm: bool,
        stage: Stage,
    ) -> usize {
        let kind = if groups > 1 { LayerKind::GroupConv } else { LayerKind::Conv };
        let mut l = self.unary(name, kind, from, stage);
        l.kernel = kernel;
        l.stride = stride;
        l.out_channels = out_channels;
        l.groups = groups;
        l.norm = norm;
        self.push(l)
    }

    pub fn resblock(&mut self, name: &str, from: usize, out_channels: usize, norm: bool, stage: Stage) -> usize {
        let mut l = self.unary(name, LayerKind::ResBlock, from, stage);
        l.kernel = 3;
        l.out_channels = out_channels;
        l.norm = norm;
        self.push(l)
    }

    pub fn avg_pool(&mut self, name: &str, from: usize, kernel: usize, stride: usize, stage: Stage) -> usize {
        let mut l = self.unary(name, LayerKind::AvgPool, from, stage);
        l.kernel = kernel;
        l.stride = stride;
        self.push(l)
    }

    pub fn upsample(&mut self, name: &str, from: usize, factor: usize, stage: Stage) -> usize {
        let mut l = self.unary(name, LayerKind::Upsample, from, stage);
        l.upscale = factor;
        self.push(l)
    }

    pub fn pixel_shuffle(&mut self, name: &str, from: usize, factor: usize, stage: Stage) -> usize {
        let mut l = self.unary(name, LayerKind::PixelShuffle, from, stage);
        l.upscale = factor;
        l.out_channels = l.in_channels / (factor * factor);
        self.push(l)
    }

    pub fn add(&mut self, name: &str, from: &[usize], stage: Stage) -> usize {
        let mut l = self.unary(name, LayerKind::Add, from[0], stage);
        l.inputs = from.to_vec();
        self.push(l)
    }

    pub fn concat(&mut self, name: &str, from: &[usize], stage: Stage) -> usize {
        let mut l = self.unary(name, LayerKind::Concat, from[0], stage);
        let total = from.iter().map(|&i| self.layers[i].out_channels).sum();
        l.in_channels = total;
        l.out_channels = total;
        l.inputs = from.to_vec();
        self.push(l)
    }

    /// Appends another graph's non-input layers, rewiring its input to this
    /// graph's input.
    pub fn append(&mut self, other: &LayerGraph) {
        let offset = self.layers.len() - 1;
        for l in other.layers.iter().skip(1) {
            let mut l = l.clone();
            for i in &mut l.inputs {
                if *i != 0 {
                    *i += offset;
                }
            }
            self.layers.push(l);
        }
    }

    /// Checks edge-to-edge channel and resolution consistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |l: &Layer, why: String| Err(Error::InvalidConfig(format!("layer {}: {why}", l.name)));
        for (idx, l) in self.layers.iter().enumerate() {
            if l.kind == LayerKind::Input {
                continue;
            }
            if l.inputs.is_empty() || l.inputs.iter().any(|&i| i >= idx) {
                return bad(l, "inputs must refer to earlier layers".into());
            }
            if l.stride == 0 || l.upscale == 0 || l.kernel == 0 {
                return bad(l, "kernel, stride and upscale must be positive".into());
            }
            let srcs: Vec<&Layer> = l.inputs.iter().map(|&i| &self.layers[i]).collect();
            let down = srcs[0].downsample;
            if srcs.iter().any(|s| s.downsample != down) {
                return bad(l, "inputs have different resolutions".into());
            }
            if !(down * l.stride).is_multiple_of(l.upscale) || l.downsample != down * l.stride / l.upscale {
                return bad(l, "inconsistent resolution".into());
            }
            match l.kind {
                LayerKind::Add => {
                    if srcs.iter().any(|s| s.out_channels != l.out_channels) {
                        return bad(l, "add needs equal channel counts".into());
                    }
                }
                LayerKind::Concat => {
                    let total: usize = srcs.iter().map(|s| s.out_channels).sum();
                    if total != l.out_channels || total != l.in_channels {
                        return bad(l, "concat channels do not sum".into());
                    }
                }
                _ => {
                    if srcs.len() != 1 || srcs[0].out_channels != l.in_channels {
                        return bad(l, "input channels do not match".into());
                    }
                }
            }
            match l.kind {
                LayerKind::Conv | LayerKind::GroupConv => {
                    if l.groups == 0 || l.in_channels % l.groups != 0 || l.out_channels % l.groups != 0 {
                        return bad(l, "channels not divisible by groups".into());
                    }
                }
                LayerKind::PixelShuffle => {
                    if l.out_channels * l.upscale * l.upscale != l.in_channels {
                        return bad(l, "pixel-shuffle channel count".into());
                    }
                }
                LayerKind::AvgPool | LayerKind::Upsample | LayerKind::Add | LayerKind::Concat
                    if l.in_channels != l.out_channels => {
                        return bad(l, "layer must preserve channels".into());
                    }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Builds the full network graph for a named configuration.
pub fn build_graph(config: &ModelConfig) -> LayerGraph {
    use Stage::*;
    let c = config;
    let mut g = LayerGraph::new();
    let x = g.input();

    let e1 = g.conv("enc.conv1", x, 4, 2, c.c1, 1, true, Encoder);
    let f2 = g.conv("enc.conv2", e1, 3, 1, c.c2, 1, true, Encoder);
    let p1 = g.avg_pool("enc.pool1", f2, 4, 4, Encoder);
    let f8 = g.resblock("enc.block1", p1, c.c3, true, Encoder);
    let p2 = g.avg_pool("enc.pool2", f8, 4, 4, Encoder);
    let f32_ = g.resblock("enc.block2", p2, c.c4, true, Encoder);

    let r2 = g.conv("det.reduce2", f2, 1, 1, c.c_det, 1, false, Detection);
    let r8 = g.conv("det.reduce8", f8, 1, 1, c.c_det, 1, false, Detection);
    let u8_ = g.upsample("det.up8", r8, 4, Detection);
    let r32 = g.conv("det.reduce32", f32_, 1, 1, c.c_det, 1, false, Detection);
    let u32_ = g.upsample("det.up32", r32, 16, Detection);
    let sum = g.add("det.add", &[r2, u8_, u32_], Detection);
    let d1 = g.conv("det.conv1", sum, 3, 1, c.c_det, 1, false, Detection);
    let d2 = g.conv("det.conv2", d1, 3, 1, c.c_det, 1, false, Detection);
    let d3 = g.conv("det.conv3", d2, 1, 1, 4, 1, false, Detection);
    g.pixel_shuffle("det.shuffle", d3, 2, Detection);

    let s2 = g.avg_pool("desc.resize2", f2, 2, 2, Description);
    let s8 = g.upsample("desc.resize8", f8, 2, Description);
    let s32 = g.upsample("desc.resize32", f32_, 8, Description);
    let cat = g.concat("desc.concat", &[s2, s8, s32], Description);
    let a = g.conv("desc.agg", cat, 1, 1, c.c_agg, 1, false, Description);
    let gc = g.conv("desc.group", a, 3, 1, c.c_agg, c.c_agg / CHANNELS_PER_GROUP, false, Description);
    g.conv("desc.out", gc, 1, 1, c.c_desc, 1, false, Description);

    g
}

/// Total trainable parameters.
pub fn count_params(graph: &LayerGraph) -> u64 {
    graph.layers.iter().map(Layer::params).sum()
}

fn check_input_size(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 || !height.is_multiple_of(32) || !width.is_multiple_of(32) {
        return Err(Error::BadInputSize { height, width });
    }
    Ok(())
}

/// `sum 2 * k^2 * (C_in / groups) * C_out * H_out * W_out` over convolutions.
pub fn estimate_flops(graph: &LayerGraph, height: usize, width: usize) -> Result<u64> {
    check_input_size(height, width)?;
    Ok(layer_table(graph, height, width)?.iter().map(|r| r.flops).sum())
}

/// Multiply-accumulate count, i.e. half of [`estimate_flops`].
pub fn estimate_macs(graph: &LayerGraph, height: usize, width: usize) -> Result<u64> {
    Ok(estimate_flops(graph, height, width)? / 2)
}

/// One line of the per-layer report.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub name: String,
    pub kind: LayerKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub params: u64,
    pub flops: u64,
}

pub fn layer_table(graph: &LayerGraph, height: usize, width: usize) -> Result<Vec<LayerRow>> {
    check_input_size(height, width)?;
    Ok(graph
        .layers
        .iter()
        .map(|l| {
            let (h, w) = (height / l.downsample, width / l.downsample);
            LayerRow {
                name: l.name.clone(),
                kind: l.kind,
                channels: l.out_channels,
                height: h,
                width: w,
                params: l.params(),
                flops: 2 * l.macs_per_output_pixel() * (h * w) as u64,
            }
        })
        .collect())
}

/// Receptive field of the deepest encoder output, by the usual recursion
/// `r += (k - 1) * jump; jump *= stride` along its input chain.
pub fn receptive_field(graph: &LayerGraph) -> usize {
    let Some(mut idx) = graph
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.stage == Stage::Encoder)
        .max_by_key(|(i, l)| (l.downsample, *i))
        .map(|(i, _)| i)
    else {
        return 1;
    };

    let mut chain = Vec::new();
    while graph.layers[idx].kind != LayerKind::Input {
        chain.push(idx);
        idx = graph.layers[idx].inputs[0];
    }
    chain.reverse();

    let mut rf = 1.0_f64;
    let mut jump = 1.0_f64;
    for &i in &chain {
        let l = &graph.layers[i];
        match l.kind {
            LayerKind::Conv | LayerKind::GroupConv | LayerKind::AvgPool => {
                rf += (l.kernel as f64 - 1.0) * jump;
                jump *= l.stride as f64;
            }
            LayerKind::ResBlock => rf += 2.0 * 2.0 * jump,
            LayerKind::Upsample | LayerKind::PixelShuffle => jump /= l.upscale as f64,
            _ => {}
        }
    }
    rf.round() as usize
}
