//! Per-sample FLOP accounting. One multiply-accumulate counts as 2 FLOPs;
//! pooling and activations are free.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::layers::Model;

pub fn flops_conv2d(cin: usize, cout: usize, kh: usize, kw: usize, hout: usize, wout: usize) -> u64 {
    2 * (cout * cin * kh * kw * hout * wout) as u64
}

pub fn flops_dense(fan_in: usize, fan_out: usize) -> u64 {
    2 * (fan_in * fan_out) as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostCategory {
    Convolution,
    AttentionGenerator,
    Dense,
    Other,
}

impl CostCategory {
    pub const ALL: [CostCategory; 4] =
        [CostCategory::Convolution, CostCategory::AttentionGenerator, CostCategory::Dense, CostCategory::Other];

    pub fn name(self) -> &'static str {
        match self {
            CostCategory::Convolution => "convolution",
            CostCategory::AttentionGenerator => "attention_generator",
            CostCategory::Dense => "dense",
            CostCategory::Other => "other",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub category: CostCategory,
    pub flops: u64,
}

impl LayerCost {
    pub fn new(name: impl Into<String>, category: CostCategory, flops: u64) -> Self {
        Self { name: name.into(), category, flops }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopReport {
    pub layers: Vec<LayerCost>,
    pub total: u64,
    pub by_category: BTreeMap<CostCategory, u64>,
}

impl FlopReport {
    pub fn from_layers(layers: Vec<LayerCost>) -> Self {
        let mut by_category: BTreeMap<CostCategory, u64> = CostCategory::ALL.iter().map(|&c| (c, 0)).collect();
        for l in &layers {
            *by_category.entry(l.category).or_default() += l.flops;
        }
        let total = layers.iter().map(|l| l.flops).sum();
        Self { layers, total, by_category }
    }

    pub fn category(&self, c: CostCategory) -> u64 {
        self.by_category.get(&c).copied().unwrap_or(0)
    }
}

pub fn flops_model(model: &Model) -> FlopReport {
    FlopReport::from_layers(model.layer_costs())
}

/// The hand-countable reference net: a "same" 3×3 conv from 1 to 2 channels
/// on 8×8, flattened into a 128→10 dense layer.
pub fn two_layer_fixture() -> FlopReport {
    FlopReport::from_layers(vec![
        LayerCost::new("conv", CostCategory::Convolution, flops_conv2d(1, 2, 3, 3, 8, 8)),
        LayerCost::new("dense", CostCategory::Dense, flops_dense(128, 10)),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{build_model, ModelSpec, Preset, Task};
    use crate::tensor::Prng;

    #[test]
    fn conv_examples() {
        assert_eq!(flops_conv2d(1, 1, 3, 3, 8, 8), 1152);
        assert_eq!(flops_conv2d(1, 1, 1, 1, 1, 1), 2);
        assert_eq!(flops_conv2d(3, 8, 3, 3, 5, 7), 2 * flops_conv2d(3, 4, 3, 3, 5, 7));
    }

    #[test]
    fn fixture_total() {
        let r = two_layer_fixture();
        assert_eq!(r.layers[0].flops, 2304);
        assert_eq!(r.layers[1].flops, 2560);
        assert_eq!(r.total, 4864);
        assert_eq!(r.category(CostCategory::Convolution) + r.category(CostCategory::Dense), 4864);
    }

    fn report(preset: Preset, bank: usize, k_active: Option<usize>) -> FlopReport {
        let mut spec = ModelSpec::new(preset, Task::Classify, &[1, 16, 16], 4).with_bank_size(bank);
        spec.k_active = k_active;
        flops_model(&build_model(&spec, &mut Prng::new(1)).unwrap())
    }

    #[test]
    fn variant_ordering() {
        let base = report(Preset::BaseCnn, 4, None).total;
        let global = report(Preset::GlobalSoft, 4, None).total;
        let local = report(Preset::LocalSoft, 4, None).total;
        let hard = report(Preset::HardAttention, 4, Some(4)).total;
        let od = report(Preset::Odconv, 4, None).total;
        assert!(base < global && global < local && local <= hard && hard <= od, "{base} {global} {local} {hard} {od}");
    }

    #[test]
    fn single_kernel_bank_matches_static_conv_cost() {
        let base = report(Preset::BaseCnn, 1, None);
        let local = report(Preset::LocalSoft, 1, None);
        assert_eq!(base.category(CostCategory::Convolution), local.category(CostCategory::Convolution));
        assert!(local.category(CostCategory::AttentionGenerator) > 0);
    }
}
