//! Central finite-difference checks of the analytic gradients.

use super::model::{build_model, Mode, Model, ModelSpec, Preset, Targets, Task};
use super::params::Grads;
use crate::error::Result;
use crate::tensor::{Prng, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Entries sampled per parameter tensor unless every entry is requested.
pub const DEFAULT_SAMPLES: usize = 16;

/// Relative error with a floor so that two tiny gradients compare as equal.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` w.r.t. every entry of `x`.
pub fn numeric_gradient(x: &Tensor, eps: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Largest relative error between two gradient tensors of equal shape.
pub fn max_rel_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic.data().iter().zip(numeric.data()).map(|(&a, &n)| rel_error(a, n)).fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// `None` checks every entry.
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, tolerance: DEFAULT_TOLERANCE, samples: Some(DEFAULT_SAMPLES), seed: 0 }
    }
}

/// Worst entry found for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub name: String,
    pub checked: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GroupResult> {
        self.groups.iter().filter(|g| !g.passed)
    }

    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.rel_error).fold(0.0, f64::max)
    }
}

/// The tiny model and batch used for end-to-end checks of `preset`.
///
/// Hard attention is checked with every kernel active, i.e. on its soft
/// surrogate path, since the straight-through backward differs from the
/// true derivative of the top-k forward by design.
pub fn gradcheck_spec(preset: Preset) -> ModelSpec {
    let spec = if matches!(preset, Preset::Net1Dcnn | Preset::Net2Dcnn) {
        ModelSpec::new(preset, Task::Timeseries, &[1, 16], 3).with_depth(1)
    } else {
        ModelSpec::new(preset, Task::Classify, &[1, 8, 8], 3).with_depth(1)
    };
    let spec = spec.with_width(0.25).with_kr_dim(4);
    if preset == Preset::HardAttention {
        let k = spec.bank_size;
        spec.with_k_active(k)
    } else {
        spec
    }
}

/// Builds the gradcheck model for `preset` with a random batch of two.
///
/// Biases get small random values: with zero biases a dead input patch puts
/// a pre-activation exactly on the relu kink, where no finite difference
/// agrees with the one-sided analytic derivative.
pub fn gradcheck_fixture(preset: Preset, seed: u64) -> Result<(Model, Tensor, Vec<usize>)> {
    let spec = gradcheck_spec(preset);
    let mut rng = Prng::new(seed);
    let mut model = build_model(&spec, &mut rng)?;
    let mut bias_rng = Prng::new(seed).derive(0x6269_6173);
    for (_, p) in model.params.iter_mut() {
        if p.name.ends_with("bias") {
            let shape = p.value.shape().to_vec();
            p.value = Tensor::randn(&shape, 0.1, &mut bias_rng);
        }
    }
    let mut shape = vec![2];
    shape.extend(&spec.input_shape);
    let x = Tensor::randn(&shape, 1.0, &mut rng);
    let labels = (0..2).map(|_| rng.below(spec.num_classes)).collect();
    Ok((model, x, labels))
}

fn eval_loss(model: &Model, x: &Tensor, targets: Targets<'_>) -> Result<f64> {
    let pass = model.forward(x, Mode::Eval)?;
    Ok(model.loss(&pass.logits, targets)?.0)
}

/// Analytic gradients from the model's own backward pass.
pub fn model_gradients(model: &Model, x: &Tensor, targets: Targets<'_>) -> Result<Grads> {
    Ok(model.loss_and_grads(x, targets, Mode::Eval)?.1)
}

/// Compares `analytic` against central differences of the eval-mode loss,
/// one report row per parameter tensor.
///
/// An entry that fails at `epsilon` is retried at `epsilon / 10` and
/// `epsilon · 10` and keeps the best agreement; this absorbs probes that
/// straddle a relu kink without loosening the tolerance.
pub fn gradcheck_model(
    model: &mut Model,
    x: &Tensor,
    targets: Targets<'_>,
    cfg: &GradcheckConfig,
    analytic: &Grads,
) -> Result<GradcheckReport> {
    let mut rng = Prng::new(cfg.seed).derive(0x6752_4144);
    let ids: Vec<_> = model.params.iter().map(|(id, p)| (id, p.name.clone())).collect();
    let mut groups = Vec::with_capacity(ids.len());
    for (id, name) in ids {
        let len = model.params.get(id).len();
        let mut entries: Vec<usize> = (0..len).collect();
        if let Some(m) = cfg.samples.filter(|&m| m < len) {
            rng.shuffle(&mut entries);
            entries.truncate(m);
            entries.sort_unstable();
        }
        let mut worst = GroupResult {
            name,
            checked: entries.len(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_error: 0.0,
            passed: true,
        };
        for &i in &entries {
            let a = analytic.get(id).data()[i];
            let mut best = (f64::INFINITY, 0.0);
            for eps in [cfg.epsilon, cfg.epsilon / 10.0, cfg.epsilon * 10.0] {
                let orig = model.params.get(id).data()[i];
                model.params.get_mut(id).data_mut()[i] = orig + eps;
                let up = eval_loss(model, x, targets);
                model.params.get_mut(id).data_mut()[i] = orig - eps;
                let down = eval_loss(model, x, targets);
                model.params.get_mut(id).data_mut()[i] = orig;
                let n = (up? - down?) / (2.0 * eps);
                let err = rel_error(a, n);
                if err < best.0 {
                    best = (err, n);
                }
                if err <= cfg.tolerance {
                    break;
                }
            }
            if best.0 > worst.rel_error || (best.0 == 0.0 && worst.checked == 0) {
                worst.rel_error = best.0;
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = best.1;
            }
        }
        worst.passed = worst.rel_error <= cfg.tolerance;
        groups.push(worst);
    }
    Ok(GradcheckReport { tolerance: cfg.tolerance, groups })
}

/// End-to-end check of one preset on its standard fixture.
pub fn gradcheck_preset(preset: Preset, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let (mut model, x, labels) = gradcheck_fixture(preset, cfg.seed)?;
    let grads = model_gradients(&model, &x, Targets::Classes(&labels))?;
    gradcheck_model(&mut model, &x, Targets::Classes(&labels), cfg, &grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_square() {
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = numeric_gradient(&x, 1e-5, |t| t.data().iter().map(|v| v * v).sum());
        for (gi, xi) in g.data().iter().zip(x.data()) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!((rel_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
        assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn every_preset_passes() {
        for preset in Preset::ALL {
            let report = gradcheck_preset(preset, &GradcheckConfig::default()).unwrap();
            for g in &report.groups {
                assert!(g.passed, "{preset}: {g:?}");
            }
        }
    }

    #[test]
    fn corrupted_gradient_is_named() {
        let (mut model, x, labels) = gradcheck_fixture(Preset::LocalSoft, 3).unwrap();
        let mut grads = model_gradients(&model, &x, Targets::Classes(&labels)).unwrap();
        let id = model.params.find("stage0.block0.conv1.gen.w2").unwrap();
        grads.get_mut(id).data_mut().iter_mut().for_each(|g| *g = *g * 1.5 + 0.01);
        let report = gradcheck_model(&mut model, &x, Targets::Classes(&labels), &GradcheckConfig::default(), &grads).unwrap();
        let failed: Vec<_> = report.failures().map(|g| g.name.as_str()).collect();
        assert_eq!(failed, vec!["stage0.block0.conv1.gen.w2"]);
    }
}
