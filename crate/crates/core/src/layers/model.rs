//! Model presets: a residual image backbone in five flavours and the 1-D
//! series networks, each with a hand-composed backward pass.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::attention::{apply_channel_gate, apply_channel_gate_vjp, channel_attention, ChannelAttention};
use super::params::{Grads, ParamId, ParamStore};
use super::units::{ConvUnit, DynamicConfig, Mixing, UnitCache};
use crate::error::{invalid, Error, Result};
use crate::metrics::flops::{flops_dense, CostCategory, LayerCost};
use crate::tensor::{
    dense, dense_vjp, gap, gap_vjp, he_normal, maxpool, softmax_xent, softmax_xent_spatial, upsample_nearest,
    upsample_nearest_vjp, Activation, ConvSpec, MaxPoolOutput, Prng, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    BaseCnn,
    GlobalSoft,
    LocalSoft,
    HardAttention,
    Odconv,
    Net1Dcnn,
    Net2Dcnn,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::BaseCnn,
        Preset::GlobalSoft,
        Preset::LocalSoft,
        Preset::HardAttention,
        Preset::Odconv,
        Preset::Net1Dcnn,
        Preset::Net2Dcnn,
    ];

    /// The five image variants compared against each other.
    pub const IMAGE_VARIANTS: [Preset; 5] =
        [Preset::BaseCnn, Preset::GlobalSoft, Preset::LocalSoft, Preset::HardAttention, Preset::Odconv];

    pub fn name(self) -> &'static str {
        match self {
            Preset::BaseCnn => "base_cnn",
            Preset::GlobalSoft => "global_soft",
            Preset::LocalSoft => "local_soft",
            Preset::HardAttention => "hard_attention",
            Preset::Odconv => "odconv",
            Preset::Net1Dcnn => "net1_dcnn",
            Preset::Net2Dcnn => "net2_dcnn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| Error::Validation(format!("unknown preset {s:?}; expected one of {}", Preset::names())))
    }

    pub fn names() -> String {
        Preset::ALL.iter().map(|p| p.name()).collect::<Vec<_>>().join(", ")
    }

    /// Whether the preset has attention weights worth exporting.
    pub fn has_attention(self) -> bool {
        !matches!(self, Preset::BaseCnn)
    }

    pub fn is_dynamic(self) -> bool {
        matches!(self, Preset::LocalSoft | Preset::HardAttention | Preset::Odconv | Preset::Net1Dcnn | Preset::Net2Dcnn)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Segment,
    Timeseries,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Segment => "segment",
            Task::Timeseries => "timeseries",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classify" => Ok(Task::Classify),
            "segment" => Ok(Task::Segment),
            "timeseries" => Ok(Task::Timeseries),
            other => invalid(format!("unknown task {other:?}; expected classify, segment or timeseries")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Human-readable preset/task support matrix.
pub const SUPPORTED_MATRIX: &str = "{base_cnn, global_soft, local_soft, hard_attention, odconv} x {classify, segment}; \
{base_cnn, net1_dcnn, net2_dcnn} x {timeseries}";

pub fn is_supported(preset: Preset, task: Task) -> bool {
    match task {
        Task::Classify | Task::Segment => Preset::IMAGE_VARIANTS.contains(&preset),
        Task::Timeseries => matches!(preset, Preset::BaseCnn | Preset::Net1Dcnn | Preset::Net2Dcnn),
    }
}

fn default_width() -> f64 {
    1.0
}
fn default_depth() -> usize {
    2
}
fn default_stages() -> usize {
    3
}
fn default_bank() -> usize {
    4
}
fn default_kr_dim() -> usize {
    32
}
fn default_reduction() -> usize {
    4
}

/// Everything needed to rebuild a model's topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub preset: Preset,
    pub task: Task,
    /// `[C, H, W]` for images, `[C, L]` for series.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    #[serde(default = "default_width")]
    pub width_multiplier: f64,
    /// Residual blocks per stage (images) or conv layers of the static series net.
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default = "default_bank")]
    pub bank_size: usize,
    /// Active kernels for hard attention; `None` means `bank_size / 2`.
    #[serde(default)]
    pub k_active: Option<usize>,
    #[serde(default = "default_kr_dim")]
    pub kr_dim: usize,
    #[serde(default = "default_reduction")]
    pub reduction: usize,
}

impl ModelSpec {
    pub fn new(preset: Preset, task: Task, input_shape: &[usize], num_classes: usize) -> Self {
        Self {
            preset,
            task,
            input_shape: input_shape.to_vec(),
            num_classes,
            width_multiplier: default_width(),
            depth: default_depth(),
            stages: default_stages(),
            bank_size: default_bank(),
            k_active: None,
            kr_dim: default_kr_dim(),
            reduction: default_reduction(),
        }
    }

    pub fn with_width(mut self, width_multiplier: f64) -> Self {
        self.width_multiplier = width_multiplier;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_stages(mut self, stages: usize) -> Self {
        self.stages = stages;
        self
    }

    pub fn with_bank_size(mut self, bank_size: usize) -> Self {
        self.bank_size = bank_size;
        self
    }

    pub fn with_k_active(mut self, k_active: usize) -> Self {
        self.k_active = Some(k_active);
        self
    }

    pub fn with_kr_dim(mut self, kr_dim: usize) -> Self {
        self.kr_dim = kr_dim;
        self
    }

    pub fn k_active(&self) -> usize {
        self.k_active.unwrap_or((self.bank_size / 2).max(1))
    }

    fn scaled(&self, base: usize) -> usize {
        ((base as f64 * self.width_multiplier).round() as usize).max(1)
    }

    /// Channel width of each residual stage: 16, 32, 64, … scaled.
    pub fn stage_widths(&self) -> Vec<usize> {
        (0..self.stages).map(|s| self.scaled(16 << s)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !is_supported(self.preset, self.task) {
            return invalid(format!(
                "preset {} does not support task {}; supported matrix: {SUPPORTED_MATRIX}",
                self.preset, self.task
            ));
        }
        if self.num_classes < 2 {
            return invalid("num_classes must be at least 2");
        }
        if !(self.width_multiplier > 0.0) || self.depth == 0 || self.stages == 0 || self.bank_size == 0 {
            return invalid("width_multiplier, depth, stages and bank_size must be positive");
        }
        if self.reduction == 0 {
            return invalid("reduction must be positive");
        }
        let k = self.k_active();
        if k == 0 || k > self.bank_size {
            return invalid(format!("k_active = {k} outside 1..={}", self.bank_size));
        }
        match self.task {
            Task::Classify | Task::Segment => {
                let [_, h, w] = self.input_shape[..] else {
                    return invalid(format!("image input shape must be [C, H, W], got {:?}", self.input_shape));
                };
                let down = 1usize << (self.stages - 1);
                if self.input_shape.contains(&0) || h < down || w < down {
                    return invalid(format!("input {h}x{w} too small for {} stages", self.stages));
                }
                if self.task == Task::Segment && (h % down != 0 || w % down != 0) {
                    return invalid(format!("segmentation input {h}x{w} must be divisible by {down}"));
                }
            }
            Task::Timeseries => {
                let [c, l] = self.input_shape[..] else {
                    return invalid(format!("series input shape must be [C, L], got {:?}", self.input_shape));
                };
                let layers = self.series_conv_layers();
                if c == 0 || l >> layers == 0 {
                    return invalid(format!("series length {l} too short for {layers} pooling layers"));
                }
            }
        }
        Ok(())
    }

    fn series_conv_layers(&self) -> usize {
        match self.preset {
            Preset::Net1Dcnn => 1,
            Preset::Net2Dcnn => 2,
            _ => self.depth,
        }
    }

    fn mixing(&self) -> Mixing {
        match self.preset {
            Preset::BaseCnn | Preset::GlobalSoft => Mixing::Static,
            Preset::LocalSoft | Preset::Net1Dcnn | Preset::Net2Dcnn => Mixing::Soft,
            Preset::HardAttention => Mixing::Hard { k_active: self.k_active() },
            Preset::Odconv => Mixing::Oriented,
        }
    }

    fn dynamic_config(&self) -> DynamicConfig {
        DynamicConfig { bank_size: self.bank_size, kr_dim: self.kr_dim, reduction: self.reduction }
    }
}

/// Forward-pass mode. Dropout is active only in training.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut Prng, dropout: f64 },
}

impl Mode<'_> {
    fn dropout(&mut self, x: &Tensor) -> (Tensor, Option<Vec<f64>>) {
        match self {
            Mode::Train { rng, dropout } if *dropout > 0.0 => {
                let keep = 1.0 - *dropout;
                let mask: Vec<f64> = (0..x.len()).map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 }).collect();
                let out = Tensor::from_fn(x.shape(), |i| x.data()[i] * mask[i]);
                (out, Some(mask))
            }
            _ => (x.clone(), None),
        }
    }
}

fn undo_dropout(mask: &Option<Vec<f64>>, grad: Tensor) -> Tensor {
    match mask {
        Some(m) => Tensor::from_fn(grad.shape(), |i| grad.data()[i] * m[i]),
        None => grad,
    }
}

fn relu(x: &Tensor) -> Tensor {
    x.map(|v| Activation::Relu.apply(v))
}

/// Gradient through relu given its input.
fn relu_back(pre: &Tensor, grad: &Tensor) -> Result<Tensor> {
    pre.zip_map(grad, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Learning targets for one batch.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    /// One class index per sample.
    Classes(&'a [usize]),
    /// One class index per output pixel, `N·H·W` in row-major order.
    Pixels(&'a [usize]),
}

/// Attention weights emitted by one layer for a batch, `[N, len]`.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    pub layer: String,
    pub kind: AttentionKind,
    pub weights: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Channel,
    Kernel,
}

impl AttentionKind {
    pub fn name(self) -> &'static str {
        match self {
            AttentionKind::Channel => "channel",
            AttentionKind::Kernel => "kernel",
        }
    }
}

// ---------------------------------------------------------------------------
// Image backbone

#[derive(Clone, Debug)]
struct ChannelGate {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct ResidualBlock {
    name: String,
    conv1: ConvUnit,
    conv2: ConvUnit,
    proj: Option<ConvUnit>,
    gate: Option<ChannelGate>,
}

#[derive(Clone, Debug)]
struct BlockCache {
    c1: UnitCache,
    h1: Tensor,
    c2: UnitCache,
    proj: Option<UnitCache>,
    sum: Tensor,
    gate: Option<(ChannelAttention, Tensor)>,
}

impl ResidualBlock {
    fn forward(&self, ps: &ParamStore, x: &Tensor, kr: Option<Tensor>) -> Result<(Tensor, Option<Tensor>, BlockCache)> {
        let (h1, kr1, c1) = self.conv1.forward(ps, x, kr.as_ref())?;
        let kr = kr1.or(kr);
        let a1 = relu(&h1);
        let (h2, kr2, c2) = self.conv2.forward(ps, &a1, kr.as_ref())?;
        let kr = kr2.or(kr);
        let (shortcut, proj) = match &self.proj {
            Some(p) => {
                let (s, _, cache) = p.forward(ps, x, None)?;
                (s, Some(cache))
            }
            None => (x.clone(), None),
        };
        let sum = h2.add(&shortcut)?;
        let out = relu(&sum);
        let (out, gate) = match &self.gate {
            Some(g) => {
                let att = channel_attention(&out, ps.get(g.weight), ps.get(g.bias))?;
                let gated = apply_channel_gate(&out, &att.weights)?;
                (gated, Some((att, out)))
            }
            None => (out, None),
        };
        Ok((out, kr, BlockCache { c1, h1, c2, proj, sum, gate }))
    }

    fn backward(
        &self,
        ps: &ParamStore,
        cache: &BlockCache,
        d_out: &Tensor,
        d_kr: Option<Tensor>,
        grads: &mut Grads,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let d_relu_out = match (&self.gate, &cache.gate) {
            (Some(g), Some((att, pre_gate))) => {
                let (mut d_pre, d_att) = apply_channel_gate_vjp(pre_gate, &att.weights, d_out)?;
                let (d_feat, dw, db) = att.vjp(pre_gate.shape(), ps.get(g.weight), &d_att)?;
                grads.accumulate(g.weight, &dw)?;
                grads.accumulate(g.bias, &db)?;
                d_pre.add_assign(&d_feat)?;
                d_pre
            }
            _ => d_out.clone(),
        };
        let d_sum = relu_back(&cache.sum, &d_relu_out)?;
        let (d_a1, d_kr) = self.conv2.backward(ps, &cache.c2, &d_sum, d_kr.as_ref(), grads)?;
        let d_h1 = relu_back(&cache.h1, &d_a1)?;
        let (mut dx, d_kr) = self.conv1.backward(ps, &cache.c1, &d_h1, d_kr.as_ref(), grads)?;
        match (&self.proj, &cache.proj) {
            (Some(p), Some(pc)) => {
                let (d_short, _) = p.backward(ps, pc, &d_sum, None, grads)?;
                dx.add_assign(&d_short)?;
            }
            _ => dx.add_assign(&d_sum)?,
        }
        Ok((dx, d_kr))
    }

    fn attention(&self, cache: &BlockCache, out: &mut Vec<AttentionRecord>) {
        for (unit, uc) in [(&self.conv1, &cache.c1), (&self.conv2, &cache.c2)] {
            if let Some(w) = uc.attention() {
                out.push(AttentionRecord { layer: unit.name.clone(), kind: AttentionKind::Kernel, weights: w.clone() });
            }
        }
        if let Some((att, _)) = &cache.gate {
            out.push(AttentionRecord {
                layer: format!("{}.gate", self.name),
                kind: AttentionKind::Channel,
                weights: att.weights.clone(),
            });
        }
    }
}

#[derive(Clone, Debug)]
enum ImageHead {
    Classify { weight: ParamId, bias: ParamId },
    Segment { unit: ConvUnit, factor: usize },
}

#[derive(Clone, Debug)]
struct ImageNet {
    stem: ConvUnit,
    blocks: Vec<ResidualBlock>,
    head: ImageHead,
    kr_dim: Option<usize>,
}

#[derive(Clone, Debug)]
struct ImageCache {
    stem: UnitCache,
    stem_pre: Tensor,
    blocks: Vec<BlockCache>,
    features: Tensor,
    dropout: Option<Vec<f64>>,
    head_in: Tensor,
    head_unit: Option<UnitCache>,
    head_map_shape: Vec<usize>,
}

impl ImageNet {
    fn build(spec: &ModelSpec, store: &mut ParamStore, rng: &mut Prng) -> Self {
        let cfg = spec.dynamic_config();
        let mixing = spec.mixing();
        let widths = spec.stage_widths();
        let cin = spec.input_shape[0];
        let same3 = ConvSpec::uniform(1, 1);
        let stem = ConvUnit::new(store, rng, "stem", Mixing::Static, cin, widths[0], (3, 3), same3, &cfg);
        let mut blocks = Vec::new();
        let mut prev = widths[0];
        for (s, &width) in widths.iter().enumerate() {
            for b in 0..spec.depth {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("stage{s}.block{b}");
                let conv1 = ConvUnit::new(store, rng, &format!("{name}.conv1"), mixing, prev, width, (3, 3), ConvSpec::uniform(stride, 1), &cfg);
                let conv2 = ConvUnit::new(store, rng, &format!("{name}.conv2"), mixing, width, width, (3, 3), same3, &cfg);
                let proj = (stride != 1 || prev != width).then(|| {
                    ConvUnit::new(store, rng, &format!("{name}.proj"), Mixing::Static, prev, width, (1, 1), ConvSpec::uniform(stride, 0), &cfg)
                });
                let gate = (spec.preset == Preset::GlobalSoft).then(|| ChannelGate {
                    weight: store.add(format!("{name}.gate.weight"), he_normal(&[width, width], width, rng)),
                    bias: store.add(format!("{name}.gate.bias"), Tensor::zeros(&[width])),
                });
                blocks.push(ResidualBlock { name, conv1, conv2, proj, gate });
                prev = width;
            }
        }
        let head = match spec.task {
            Task::Segment => ImageHead::Segment {
                unit: ConvUnit::new(store, rng, "head", Mixing::Static, prev, spec.num_classes, (1, 1), ConvSpec::default(), &cfg),
                factor: 1 << (spec.stages - 1),
            },
            _ => ImageHead::Classify {
                weight: store.add("head.weight", he_normal(&[spec.num_classes, prev], prev, rng)),
                bias: store.add("head.bias", Tensor::zeros(&[spec.num_classes])),
            },
        };
        let kr_dim = (mixing != Mixing::Oriented && mixing.is_dynamic() && spec.kr_dim > 0).then_some(spec.kr_dim);
        Self { stem, blocks, head, kr_dim }
    }

    fn forward(&self, ps: &ParamStore, x: &Tensor, mode: &mut Mode<'_>) -> Result<(Tensor, ImageCache)> {
        let (stem_pre, _, stem) = self.stem.forward(ps, x, None)?;
        let mut h = relu(&stem_pre);
        let mut kr = self.kr_dim.map(|d| Tensor::zeros(&[x.dim(0), d]));
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, next_kr, cache) = block.forward(ps, &h, kr)?;
            h = out;
            kr = next_kr;
            blocks.push(cache);
        }
        let features = h;
        match &self.head {
            ImageHead::Classify { weight, bias } => {
                let pooled = gap(&features)?;
                let (head_in, dropout) = mode.dropout(&pooled);
                let logits = dense(&head_in, ps.get(*weight), ps.get(*bias))?;
                Ok((logits, ImageCache { stem, stem_pre, blocks, features, dropout, head_in, head_unit: None, head_map_shape: vec![] }))
            }
            ImageHead::Segment { unit, factor } => {
                let (head_in, dropout) = mode.dropout(&features);
                let (map, _, uc) = unit.forward(ps, &head_in, None)?;
                let logits = upsample_nearest(&map, *factor)?;
                let head_map_shape = map.shape().to_vec();
                Ok((logits, ImageCache { stem, stem_pre, blocks, features, dropout, head_in, head_unit: Some(uc), head_map_shape }))
            }
        }
    }

    fn backward(&self, ps: &ParamStore, cache: &ImageCache, d_logits: &Tensor, grads: &mut Grads) -> Result<()> {
        let d_features = match &self.head {
            ImageHead::Classify { weight, bias } => {
                let (d_in, dw, db) = dense_vjp(&cache.head_in, ps.get(*weight), d_logits)?;
                grads.accumulate(*weight, &dw)?;
                grads.accumulate(*bias, &db)?;
                gap_vjp(cache.features.shape(), &undo_dropout(&cache.dropout, d_in))?
            }
            ImageHead::Segment { unit, factor } => {
                let d_map = upsample_nearest_vjp(&cache.head_map_shape, *factor, d_logits)?;
                let uc = cache.head_unit.as_ref().expect("segment head cache");
                let (d_in, _) = unit.backward(ps, uc, &d_map, None, grads)?;
                undo_dropout(&cache.dropout, d_in)
            }
        };
        let mut d = d_features;
        let mut d_kr: Option<Tensor> = None;
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (dx, dk) = block.backward(ps, bc, &d, d_kr, grads)?;
            d = dx;
            d_kr = dk;
        }
        let d_stem = relu_back(&cache.stem_pre, &d)?;
        self.stem.backward(ps, &cache.stem, &d_stem, None, grads)?;
        Ok(())
    }

    fn attention(&self, cache: &ImageCache) -> Vec<AttentionRecord> {
        let mut out = Vec::new();
        for (block, bc) in self.blocks.iter().zip(&cache.blocks) {
            block.attention(bc, &mut out);
        }
        out
    }

    fn costs(&self, spec: &ModelSpec) -> Vec<LayerCost> {
        let (mut h, mut w) = (spec.input_shape[1], spec.input_shape[2]);
        let mut costs = self.stem.costs(h, w);
        for block in &self.blocks {
            costs.extend(block.conv1.costs(h, w));
            let (h1, w1) = block.conv1.output_hw(h, w);
            costs.extend(block.conv2.costs(h1, w1));
            if let Some(p) = &block.proj {
                costs.extend(p.costs(h, w));
            }
            (h, w) = (h1, w1);
            if block.gate.is_some() {
                let c = block.conv2.cout;
                let name = format!("{}.gate", block.name);
                costs.push(LayerCost::new(format!("{name}.gap"), CostCategory::AttentionGenerator, (h * w * c) as u64));
                costs.push(LayerCost::new(format!("{name}.dense"), CostCategory::AttentionGenerator, flops_dense(c, c)));
                costs.push(LayerCost::new(format!("{name}.scale"), CostCategory::Other, (h * w * c) as u64));
            }
        }
        match &self.head {
            ImageHead::Classify { .. } => {
                let c = self.blocks.last().map_or(self.stem.cout, |b| b.conv2.cout);
                costs.push(LayerCost::new("head", CostCategory::Dense, flops_dense(c, spec.num_classes)));
            }
            ImageHead::Segment { unit, .. } => costs.extend(unit.costs(h, w)),
        }
        costs
    }
}

// ---------------------------------------------------------------------------
// Series networks

#[derive(Clone, Debug)]
struct SeriesNet {
    convs: Vec<ConvUnit>,
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
    hidden: usize,
    kr_dim: Option<usize>,
}

#[derive(Clone, Debug)]
struct SeriesCache {
    layers: Vec<(UnitCache, Tensor, MaxPoolOutput)>,
    flat: Tensor,
    hidden_pre: Tensor,
    hidden_drop: Tensor,
    dropout: Option<Vec<f64>>,
}

const SERIES_KERNEL: usize = 5;

impl SeriesNet {
    fn build(spec: &ModelSpec, store: &mut ParamStore, rng: &mut Prng) -> Self {
        let cfg = spec.dynamic_config();
        let mixing = spec.mixing();
        let [cin, mut len] = spec.input_shape[..] else { unreachable!("validated series shape") };
        let mut prev = cin;
        let mut convs = Vec::new();
        for i in 0..spec.series_conv_layers() {
            let width = spec.scaled(16 << i);
            let pad = ConvSpec::new([1, 1], [0, SERIES_KERNEL / 2]);
            convs.push(ConvUnit::new(store, rng, &format!("conv{i}"), mixing, prev, width, (1, SERIES_KERNEL), pad, &cfg));
            prev = width;
            len /= 2;
        }
        let flat = prev * len;
        let hidden = spec.scaled(64).max(4);
        let fc1 = (
            store.add("fc1.weight", he_normal(&[hidden, flat], flat, rng)),
            store.add("fc1.bias", Tensor::zeros(&[hidden])),
        );
        let fc2 = (
            store.add("fc2.weight", he_normal(&[spec.num_classes, hidden], hidden, rng)),
            store.add("fc2.bias", Tensor::zeros(&[spec.num_classes])),
        );
        let kr_dim = (mixing.is_dynamic() && spec.kr_dim > 0).then_some(spec.kr_dim);
        Self { convs, fc1, fc2, hidden, kr_dim }
    }

    fn forward(&self, ps: &ParamStore, x: &Tensor, mode: &mut Mode<'_>) -> Result<(Tensor, SeriesCache)> {
        x.expect_rank("series_forward", "input", 3)?;
        let n = x.dim(0);
        let mut h = x.clone().reshape(&[n, x.dim(1), 1, x.dim(2)])?;
        let mut kr = self.kr_dim.map(|d| Tensor::zeros(&[n, d]));
        let mut layers = Vec::with_capacity(self.convs.len());
        for unit in &self.convs {
            let (pre, next_kr, uc) = unit.forward(ps, &h, kr.as_ref())?;
            kr = next_kr.or(kr);
            let pooled = maxpool(&relu(&pre), &[1, 2], &[1, 2])?;
            h = pooled.output.clone();
            layers.push((uc, pre, pooled));
        }
        let flat = h.clone().reshape(&[n, h.len() / n])?;
        let hidden_pre = dense(&flat, ps.get(self.fc1.0), ps.get(self.fc1.1))?;
        let (hidden_drop, dropout) = mode.dropout(&relu(&hidden_pre));
        let logits = dense(&hidden_drop, ps.get(self.fc2.0), ps.get(self.fc2.1))?;
        Ok((logits, SeriesCache { layers, flat, hidden_pre, hidden_drop, dropout }))
    }

    fn backward(&self, ps: &ParamStore, cache: &SeriesCache, d_logits: &Tensor, grads: &mut Grads) -> Result<()> {
        let (d_hidden, dw2, db2) = dense_vjp(&cache.hidden_drop, ps.get(self.fc2.0), d_logits)?;
        grads.accumulate(self.fc2.0, &dw2)?;
        grads.accumulate(self.fc2.1, &db2)?;
        let d_hidden_pre = relu_back(&cache.hidden_pre, &undo_dropout(&cache.dropout, d_hidden))?;
        let (d_flat, dw1, db1) = dense_vjp(&cache.flat, ps.get(self.fc1.0), &d_hidden_pre)?;
        grads.accumulate(self.fc1.0, &dw1)?;
        grads.accumulate(self.fc1.1, &db1)?;
        let last = &cache.layers.last().expect("at least one conv layer").2.output;
        let mut d = d_flat.reshape(last.shape())?;
        let mut d_kr: Option<Tensor> = None;
        for (unit, (uc, pre, pooled)) in self.convs.iter().zip(&cache.layers).rev() {
            let d_pre = relu_back(pre, &pooled.vjp(&d)?)?;
            let (dx, dk) = unit.backward(ps, uc, &d_pre, d_kr.as_ref(), grads)?;
            d = dx;
            d_kr = dk;
        }
        Ok(())
    }

    fn attention(&self, cache: &SeriesCache) -> Vec<AttentionRecord> {
        self.convs
            .iter()
            .zip(&cache.layers)
            .filter_map(|(unit, (uc, _, _))| {
                uc.attention().map(|w| AttentionRecord { layer: unit.name.clone(), kind: AttentionKind::Kernel, weights: w.clone() })
            })
            .collect()
    }

    fn costs(&self, spec: &ModelSpec) -> Vec<LayerCost> {
        let mut len = spec.input_shape[1];
        let mut costs = Vec::new();
        for unit in &self.convs {
            costs.extend(unit.costs(1, len));
            len = unit.output_hw(1, len).1 / 2;
        }
        let flat = self.convs.last().map_or(0, |u| u.cout) * len;
        let hidden = self.hidden;
        costs.push(LayerCost::new("fc1", CostCategory::Dense, flops_dense(flat, hidden)));
        costs.push(LayerCost::new("fc2", CostCategory::Dense, flops_dense(hidden, spec.num_classes)));
        costs
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum Arch {
    Image(ImageNet),
    Series(SeriesNet),
}

#[derive(Clone, Debug)]
enum Cache {
    Image(ImageCache),
    Series(SeriesCache),
}

/// Output of [`Model::forward`]: logits plus everything needed for backward.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub logits: Tensor,
    cache: Cache,
}

/// A built network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore,
    arch: Arch,
}

/// Builds the network described by `spec`, drawing initial weights from `rng`.
pub fn build_model(spec: &ModelSpec, rng: &mut Prng) -> Result<Model> {
    spec.validate()?;
    let mut params = ParamStore::new();
    let arch = match spec.task {
        Task::Timeseries => Arch::Series(SeriesNet::build(spec, &mut params, rng)),
        _ => Arch::Image(ImageNet::build(spec, &mut params, rng)),
    };
    params.round_to_f32();
    Ok(Model { spec: spec.clone(), params, arch })
}

impl Model {
    pub fn forward(&self, x: &Tensor, mut mode: Mode<'_>) -> Result<ForwardPass> {
        self.check_input(x)?;
        let (logits, cache) = match &self.arch {
            Arch::Image(net) => {
                let (l, c) = net.forward(&self.params, x, &mut mode)?;
                (l, Cache::Image(c))
            }
            Arch::Series(net) => {
                let (l, c) = net.forward(&self.params, x, &mut mode)?;
                (l, Cache::Series(c))
            }
        };
        Ok(ForwardPass { logits, cache })
    }

    /// Parameter gradients given the gradient of the loss w.r.t. the logits.
    pub fn backward(&self, pass: &ForwardPass, d_logits: &Tensor) -> Result<Grads> {
        pass.logits.expect_same_shape("model_backward", d_logits)?;
        let mut grads = Grads::zeros_like(&self.params);
        match (&self.arch, &pass.cache) {
            (Arch::Image(net), Cache::Image(c)) => net.backward(&self.params, c, d_logits, &mut grads)?,
            (Arch::Series(net), Cache::Series(c)) => net.backward(&self.params, c, d_logits, &mut grads)?,
            _ => unreachable!("cache built by this model"),
        }
        Ok(grads)
    }

    /// Mean cross-entropy and its gradient w.r.t. the logits.
    pub fn loss(&self, logits: &Tensor, targets: Targets<'_>) -> Result<(f64, Tensor)> {
        match (self.spec.task, targets) {
            (Task::Segment, Targets::Pixels(p)) => softmax_xent_spatial(logits, p),
            (Task::Classify | Task::Timeseries, Targets::Classes(c)) => softmax_xent(logits, c),
            (task, _) => invalid(format!("targets do not match task {task}")),
        }
    }

    pub fn loss_and_grads(&self, x: &Tensor, targets: Targets<'_>, mode: Mode<'_>) -> Result<(f64, Grads, ForwardPass)> {
        let pass = self.forward(x, mode)?;
        let (loss, d_logits) = self.loss(&pass.logits, targets)?;
        let grads = self.backward(&pass, &d_logits)?;
        Ok((loss, grads, pass))
    }

    /// Arg-max class per sample (classify/timeseries) or per pixel (segment).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_predictions(&self.forward(x, Mode::Eval)?.logits))
    }

    pub fn attention(&self, pass: &ForwardPass) -> Vec<AttentionRecord> {
        match (&self.arch, &pass.cache) {
            (Arch::Image(net), Cache::Image(c)) => net.attention(c),
            (Arch::Series(net), Cache::Series(c)) => net.attention(c),
            _ => Vec::new(),
        }
    }

    /// Per-sample FLOP entries for every layer.
    pub fn layer_costs(&self) -> Vec<LayerCost> {
        match &self.arch {
            Arch::Image(net) => net.costs(&self.spec),
            Arch::Series(net) => net.costs(&self.spec),
        }
    }

    /// Number of dynamic conv layers appearing before the first pooling layer.
    pub fn dynamic_layers_before_pool(&self) -> usize {
        match &self.arch {
            Arch::Series(net) => net.convs.first().map_or(0, |u| usize::from(u.mixing.is_dynamic())),
            Arch::Image(_) => 0,
        }
    }

    /// Marks every kernel bank as frozen (or unfrozen).
    pub fn set_banks_frozen(&mut self, frozen: bool) {
        let ids: Vec<ParamId> = self.params.iter().filter(|(_, p)| p.name.ends_with(".bank")).map(|(id, _)| id).collect();
        for id in ids {
            self.params.set_frozen(id, frozen);
        }
    }

    /// Initializes this model from `src` by parameter name: every
    /// `{unit}.bank` takes `src`'s `{unit}.weight` tiled over the bank plus
    /// Gaussian noise of std `noise_std`; other parameters with a matching
    /// name and shape are copied. Returns the number of tensors filled.
    pub fn transfer_from(&mut self, src: &Model, noise_std: f64, rng: &mut Prng) -> Result<usize> {
        let mut filled = 0;
        let ids: Vec<(ParamId, String)> = self.params.iter().map(|(id, p)| (id, p.name.clone())).collect();
        for (id, name) in ids {
            if let Some(unit) = name.strip_suffix(".bank") {
                let Some(sid) = src.params.find(&format!("{unit}.weight")) else { continue };
                let kernel = src.params.get(sid);
                let bank = self.params.get_mut(id);
                if bank.len() % kernel.len() != 0 || bank.shape()[1..] != kernel.shape()[..] {
                    return invalid(format!("cannot tile {unit}.weight {:?} into bank {:?}", kernel.shape(), bank.shape()));
                }
                for (i, v) in bank.data_mut().iter_mut().enumerate() {
                    let noise = if noise_std > 0.0 { noise_std * rng.normal() } else { 0.0 };
                    *v = kernel.data()[i % kernel.len()] + noise;
                }
                filled += 1;
            } else if let Some(sid) = src.params.find(&name) {
                if src.params.get(sid).shape() == self.params.get(id).shape() {
                    *self.params.get_mut(id) = src.params.get(sid).clone();
                    filled += 1;
                }
            }
        }
        self.params.round_to_f32();
        Ok(filled)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != self.spec.input_shape.len() + 1 || x.shape()[1..] != self.spec.input_shape[..] {
            return Err(Error::Dimension {
                op: "model_forward",
                detail: format!("input {:?} does not match model input [N, {:?}]", x.shape(), self.spec.input_shape),
            });
        }
        Ok(())
    }
}

/// Arg-max over axis 1 for `[N, C]` or `[N, C, H, W]` logits (first maximum wins).
pub fn argmax_predictions(logits: &Tensor) -> Vec<usize> {
    let s = logits.shape();
    let (n, c) = (s[0], s[1]);
    let spatial: usize = s[2..].iter().product();
    let mut out = Vec::with_capacity(n * spatial);
    for b in 0..n {
        for p in 0..spatial {
            let mut best = 0;
            for k in 1..c {
                if logits.data()[(b * c + k) * spatial + p] > logits.data()[(b * c + best) * spatial + p] {
                    best = k;
                }
            }
            out.push(best);
        }
    }
    out
}
