//! Convolution units: a static convolution, a kernel-attention dynamic
//! convolution (soft or hard-gated) and an orientation-pooled convolution.
//! All share one forward/backward contract so blocks can swap them freely.

use super::attention::{
    bottleneck_width, hard_select, kernel_attention, masked_softmax, update_kernel_representation,
    update_kernel_representation_vjp, GeneratorParams, KernelAttention, KrParams,
};
use super::bank::{aggregate_into, aggregate_vjp_into, orient_bank, orient_bank_vjp, KernelBank, ORIENTATIONS};
use super::params::{Grads, ParamId, ParamStore};
use crate::error::Result;
use crate::metrics::flops::{flops_conv2d, flops_dense, CostCategory, LayerCost};
use crate::tensor::{gap, gap_vjp, he_normal, softmax_rows_vjp, ConvGeometry, ConvSpec, Prng, Tensor};

/// How a unit turns its parameters into the kernel applied to a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mixing {
    /// One fixed kernel.
    Static,
    /// Softmax-weighted sum over a bank of `K` kernels.
    Soft,
    /// Top-`k_active` kernels with weights renormalized over the active set;
    /// gradients flow through the full softmax (straight-through).
    Hard { k_active: usize },
    /// Softmax over the 8 dihedral variants of each of the `K` bank kernels.
    Oriented,
}

impl Mixing {
    pub fn is_dynamic(self) -> bool {
        !matches!(self, Mixing::Static)
    }
}

/// Sizes shared by every dynamic unit of a model.
#[derive(Clone, Copy, Debug)]
pub struct DynamicConfig {
    pub bank_size: usize,
    pub kr_dim: usize,
    pub reduction: usize,
}

#[derive(Clone, Copy, Debug)]
struct GenIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct KrIds {
    u: ParamId,
    v: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
pub struct ConvUnit {
    pub name: String,
    pub mixing: Mixing,
    pub spec: ConvSpec,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub bank_size: usize,
    pub weight: ParamId,
    pub bias: ParamId,
    gen: Option<GenIds>,
    kr: Option<KrIds>,
    kr_dim: usize,
    reduction: usize,
}

#[derive(Clone, Debug)]
pub struct UnitCache {
    input: Tensor,
    geo: ConvGeometry,
    dynamic: Option<DynamicCache>,
}

#[derive(Clone, Debug)]
struct DynamicCache {
    pooled: Tensor,
    kr_prev: Option<Tensor>,
    kr_next: Option<Tensor>,
    attention: KernelAttention,
    /// Weights actually used for aggregation, `[N, bank entries]`.
    weights: Tensor,
    /// Per-sample aggregated kernels, `N × kernel_len`.
    kernels: Vec<f64>,
    /// Materialized dihedral bank for oriented units.
    oriented: Option<Vec<f64>>,
}

impl UnitCache {
    /// Attention weights used by this unit, if it is dynamic.
    pub fn attention(&self) -> Option<&Tensor> {
        self.dynamic.as_ref().map(|d| &d.weights)
    }
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Prng,
        name: &str,
        mixing: Mixing,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        spec: ConvSpec,
        cfg: &DynamicConfig,
    ) -> Self {
        let (kh, kw) = kernel;
        let fan_in = cin * kh * kw;
        let (weight, bank_size) = if mixing.is_dynamic() {
            let k = cfg.bank_size;
            (store.add(format!("{name}.bank"), he_normal(&[k, cout, cin, kh, kw], fan_in, rng)), k)
        } else {
            (store.add(format!("{name}.weight"), he_normal(&[cout, cin, kh, kw], fan_in, rng)), 1)
        };
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));

        let kr_dim = match mixing {
            Mixing::Soft | Mixing::Hard { .. } => cfg.kr_dim,
            _ => 0,
        };
        let kr = (kr_dim > 0).then(|| KrIds {
            u: store.add(format!("{name}.kr.u"), he_normal(&[kr_dim, kr_dim], kr_dim, rng)),
            v: store.add(format!("{name}.kr.v"), he_normal(&[kr_dim, cin], cin, rng)),
            b: store.add(format!("{name}.kr.b"), Tensor::zeros(&[kr_dim])),
        });
        let gen = mixing.is_dynamic().then(|| {
            let din = kr_dim + cin;
            let hidden = bottleneck_width(din, cfg.reduction);
            let logits = if mixing == Mixing::Oriented { bank_size * ORIENTATIONS } else { bank_size };
            GenIds {
                w1: store.add(format!("{name}.gen.w1"), he_normal(&[hidden, din], din, rng)),
                b1: store.add(format!("{name}.gen.b1"), Tensor::zeros(&[hidden])),
                w2: store.add(format!("{name}.gen.w2"), he_normal(&[logits, hidden], hidden, rng)),
                b2: store.add(format!("{name}.gen.b2"), Tensor::zeros(&[logits])),
            }
        });
        Self {
            name: name.to_string(),
            mixing,
            spec,
            cin,
            cout,
            kh,
            kw,
            bank_size,
            weight,
            bias,
            gen,
            kr,
            kr_dim,
            reduction: cfg.reduction,
        }
    }

    pub fn uses_kr(&self) -> bool {
        self.kr.is_some()
    }

    fn gen_params<'a>(&self, ps: &'a ParamStore) -> GeneratorParams<'a> {
        let g = self.gen.expect("dynamic unit without generator");
        GeneratorParams { w1: ps.get(g.w1), b1: ps.get(g.b1), w2: ps.get(g.w2), b2: ps.get(g.b2) }
    }

    fn kr_params<'a>(&self, ps: &'a ParamStore) -> Option<KrParams<'a>> {
        self.kr.map(|k| KrParams { u: ps.get(k.u), v: ps.get(k.v), b: ps.get(k.b) })
    }

    fn geometry(&self, input: &Tensor) -> Result<ConvGeometry> {
        input.expect_rank("conv_unit", "input", 4)?;
        let s = input.shape();
        ConvGeometry::new("conv_unit", [s[1], s[2], s[3]], [self.cout, self.cin, self.kh, self.kw], self.spec)
    }

    /// Output spatial size for a given input size.
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = self.spec.output_len(0, h, self.kh).expect("kernel fits");
        let wo = self.spec.output_len(1, w, self.kw).expect("kernel fits");
        (ho, wo)
    }

    /// Runs the unit. Returns the output and, for units carrying a kernel
    /// representation, the updated representation.
    pub fn forward(&self, ps: &ParamStore, x: &Tensor, kr: Option<&Tensor>) -> Result<(Tensor, Option<Tensor>, UnitCache)> {
        let geo = self.geometry(x)?;
        let n = x.dim(0);
        let (il, ol, kl) = (geo.input_len(), geo.output_len(), geo.kernel_len());
        let mut out = Tensor::zeros(&[n, geo.cout, geo.ho, geo.wo]);

        let dynamic = if self.mixing.is_dynamic() {
            let pooled = gap(x)?;
            let kr_next = match (self.kr_params(ps), kr) {
                (Some(p), Some(prev)) => Some(update_kernel_representation(prev, &pooled, &p)?),
                (Some(p), None) => Some(update_kernel_representation(&Tensor::zeros(&[n, self.kr_dim]), &pooled, &p)?),
                _ => None,
            };
            let attention = kernel_attention(kr_next.as_ref(), &pooled, &self.gen_params(ps))?;
            let weights = match self.mixing {
                Mixing::Hard { k_active } => {
                    let k = attention.logits.dim(1);
                    let mut w = Vec::with_capacity(n * k);
                    for row in attention.logits.data().chunks(k) {
                        w.extend(masked_softmax(row, &hard_select(row, k_active)?));
                    }
                    Tensor::new(vec![n, k], w)?
                }
                _ => attention.weights.clone(),
            };
            let oriented = if self.mixing == Mixing::Oriented {
                let bank = KernelBank::new(ps.get(self.weight).clone())?;
                Some(orient_bank(&bank)?.as_tensor().data().to_vec())
            } else {
                None
            };
            let bank: &[f64] = oriented.as_deref().unwrap_or_else(|| ps.get(self.weight).data());
            let k_entries = weights.dim(1);
            let mut kernels = vec![0.0; n * kl];
            for b in 0..n {
                let kb = &mut kernels[b * kl..(b + 1) * kl];
                aggregate_into(bank, kl, &weights.data()[b * k_entries..(b + 1) * k_entries], kb);
                geo.forward_sample(&x.data()[b * il..(b + 1) * il], kb, &mut out.data_mut()[b * ol..(b + 1) * ol]);
            }
            let kr_prev = kr_next.as_ref().map(|_| match kr {
                Some(prev) => prev.clone(),
                None => Tensor::zeros(&[n, self.kr_dim]),
            });
            Some(DynamicCache { pooled, kr_prev, kr_next, attention, weights, kernels, oriented })
        } else {
            let k = ps.get(self.weight).data();
            for b in 0..n {
                geo.forward_sample(&x.data()[b * il..(b + 1) * il], k, &mut out.data_mut()[b * ol..(b + 1) * ol]);
            }
            None
        };

        let bias = ps.get(self.bias).data();
        let plane = geo.ho * geo.wo;
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bv = bias[i % geo.cout];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        let kr_out = dynamic.as_ref().and_then(|d| d.kr_next.clone());
        Ok((out.debug_check_finite("conv_unit"), kr_out, UnitCache { input: x.clone(), geo, dynamic }))
    }

    /// Back-propagates `dy` (and, for representation-carrying units, the
    /// gradient w.r.t. the emitted representation). Returns the input
    /// gradient and the gradient w.r.t. the incoming representation.
    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &UnitCache,
        dy: &Tensor,
        d_kr_next: Option<&Tensor>,
        grads: &mut Grads,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let geo = &cache.geo;
        let x = &cache.input;
        let n = x.dim(0);
        let (il, ol, kl) = (geo.input_len(), geo.output_len(), geo.kernel_len());
        let plane = geo.ho * geo.wo;

        let db = grads.get_mut(self.bias).data_mut();
        for (i, chunk) in dy.data().chunks(plane).enumerate() {
            db[i % geo.cout] += chunk.iter().sum::<f64>();
        }

        let mut dx = Tensor::zeros(x.shape());
        let frozen = ps.is_frozen(self.weight);
        let Some(dc) = &cache.dynamic else {
            let k = ps.get(self.weight).data();
            let mut dk = (!frozen).then(|| vec![0.0; kl]);
            for b in 0..n {
                let dyb = &dy.data()[b * ol..(b + 1) * ol];
                geo.backward_input_sample(k, dyb, &mut dx.data_mut()[b * il..(b + 1) * il]);
                if let Some(dk) = dk.as_mut() {
                    geo.backward_kernel_sample(&x.data()[b * il..(b + 1) * il], dyb, dk);
                }
            }
            if let Some(dk) = dk {
                grads.accumulate_slice(self.weight, &dk);
            }
            return Ok((dx, d_kr_next.cloned()));
        };

        let bank: &[f64] = dc.oriented.as_deref().unwrap_or_else(|| ps.get(self.weight).data());
        let k_entries = dc.weights.dim(1);
        let mut d_weights = Tensor::zeros(&[n, k_entries]);
        let mut d_bank = (!frozen).then(|| vec![0.0; bank.len()]);
        let mut dk = vec![0.0; kl];
        for b in 0..n {
            let dyb = &dy.data()[b * ol..(b + 1) * ol];
            geo.backward_input_sample(&dc.kernels[b * kl..(b + 1) * kl], dyb, &mut dx.data_mut()[b * il..(b + 1) * il]);
            dk.fill(0.0);
            geo.backward_kernel_sample(&x.data()[b * il..(b + 1) * il], dyb, &mut dk);
            aggregate_vjp_into(
                bank,
                kl,
                &dc.weights.data()[b * k_entries..(b + 1) * k_entries],
                &dk,
                &mut d_weights.data_mut()[b * k_entries..(b + 1) * k_entries],
                d_bank.as_deref_mut(),
            );
        }
        if let Some(d_bank) = d_bank {
            if self.mixing == Mixing::Oriented {
                let base = orient_bank_vjp(ps.get(self.weight).shape(), &d_bank)?;
                grads.accumulate(self.weight, &base)?;
            } else {
                grads.accumulate_slice(self.weight, &d_bank);
            }
        }

        // Hard gating routes the gradient through the full softmax (straight-through);
        // for soft mixing `attention.weights` is exactly the forward weighting.
        let d_logits = softmax_rows_vjp(&dc.attention.weights, &d_weights)?;
        let gen = self.gen_params(ps);
        let gg = dc.attention.vjp(&gen, self.kr_dim, &d_logits)?;
        let ids = self.gen.expect("generator ids");
        grads.accumulate(ids.w1, &gg.dw1)?;
        grads.accumulate(ids.b1, &gg.db1)?;
        grads.accumulate(ids.w2, &gg.dw2)?;
        grads.accumulate(ids.b2, &gg.db2)?;
        let mut d_pooled = gg.d_gap;

        let mut d_kr_prev = None;
        if let (Some(p), Some(ids)) = (self.kr_params(ps), self.kr) {
            let mut d_next = gg.d_kr.expect("kr gradient");
            if let Some(extra) = d_kr_next {
                d_next.add_assign(extra)?;
            }
            let prev = dc.kr_prev.as_ref().expect("kr prev");
            let next = dc.kr_next.as_ref().expect("kr next");
            let kg = update_kernel_representation_vjp(prev, &dc.pooled, next, &p, &d_next)?;
            grads.accumulate(ids.u, &kg.du)?;
            grads.accumulate(ids.v, &kg.dv)?;
            grads.accumulate(ids.b, &kg.db)?;
            d_pooled.add_assign(&kg.d_gap)?;
            d_kr_prev = Some(kg.d_prev);
        }
        dx.add_assign(&gap_vjp(x.shape(), &d_pooled)?)?;
        Ok((dx, d_kr_prev))
    }

    /// Per-sample FLOPs of this unit on an `h × w` input.
    pub fn costs(&self, h: usize, w: usize) -> Vec<LayerCost> {
        let (ho, wo) = self.output_hw(h, w);
        let mut costs = vec![LayerCost::new(
            format!("{}.conv", self.name),
            CostCategory::Convolution,
            flops_conv2d(self.cin, self.cout, self.kh, self.kw, ho, wo),
        )];
        if !self.mixing.is_dynamic() {
            return costs;
        }
        let kernel_len = (self.cout * self.cin * self.kh * self.kw) as u64;
        let attn = CostCategory::AttentionGenerator;
        costs.push(LayerCost::new(format!("{}.gap", self.name), attn, (h * w * self.cin) as u64));
        if self.kr_dim > 0 {
            let d = self.kr_dim;
            costs.push(LayerCost::new(format!("{}.kr", self.name), attn, flops_dense(d, d) + flops_dense(self.cin, d)));
        }
        let din = self.kr_dim + self.cin;
        let hidden = bottleneck_width(din, self.reduction);
        let (logits, aggregated) = match self.mixing {
            Mixing::Oriented => (self.bank_size * ORIENTATIONS, self.bank_size * ORIENTATIONS),
            Mixing::Hard { k_active } => (self.bank_size, k_active),
            _ => (self.bank_size, self.bank_size),
        };
        costs.push(LayerCost::new(format!("{}.generator", self.name), attn, flops_dense(din, hidden) + flops_dense(hidden, logits)));
        costs.push(LayerCost::new(
            format!("{}.aggregate", self.name),
            CostCategory::Other,
            2 * aggregated as u64 * kernel_len,
        ));
        costs
    }
}
