//! Attention generators: channel gating, kernel attention, the kernel
//! representation recurrence and hard top-k kernel selection.

use crate::error::{dim_err, invalid, Result};
use crate::tensor::{dense, dense_vjp, gap, gap_vjp, softmax_rows, Activation, Tensor};

/// One sample's attention weights over kernels or channels.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionVector {
    weights: Vec<f64>,
}

impl AttentionVector {
    /// Kernel attention: non-negative and summing to one within 1e-6.
    pub fn kernel(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return invalid(format!("kernel attention must lie on the simplex, got {weights:?}"));
        }
        Ok(Self { weights })
    }

    /// Channel attention: every weight strictly inside (0, 1).
    pub fn channel(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0 && *w < 1.0)) {
            return invalid(format!("channel attention must lie in (0,1), got {weights:?}"));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Recurrent kernel-decision state carried from one dynamic layer to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelRepresentation {
    pub state: Vec<f64>,
    pub layer_index: usize,
}

impl KernelRepresentation {
    pub fn initial(dim: usize) -> Self {
        Self { state: vec![0.0; dim], layer_index: 0 }
    }

    /// `tanh(U·state + V·gap_feat + b)`, advancing the layer index by one.
    pub fn update(&self, gap_feat: &[f64], params: &KrParams<'_>) -> Result<Self> {
        let prev = Tensor::new(vec![1, self.state.len()], self.state.clone())?;
        let g = Tensor::new(vec![1, gap_feat.len()], gap_feat.to_vec())?;
        let next = update_kernel_representation(&prev, &g, params)?;
        Ok(Self { state: next.into_data(), layer_index: self.layer_index + 1 })
    }
}

/// Binary on/off selection over `K` kernels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GateMask {
    pub mask: Vec<u8>,
    pub k_active: usize,
}

// ---------------------------------------------------------------------------
// Channel attention

/// Forward state of [`channel_attention`]; `weights` is `[N, C]`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pooled: Tensor,
    pub weights: Tensor,
}

/// `sigmoid(weight · gap(F) + bias)` per sample.
pub fn channel_attention(features: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<ChannelAttention> {
    let pooled = gap(features)?;
    let c = pooled.dim(1);
    if weight.shape() != [c, c] {
        return dim_err("channel_attention", format!("weight {:?} does not match {c} channels", weight.shape()));
    }
    let pre = dense(&pooled, weight, bias)?;
    let weights = pre.map(|v| Activation::Sigmoid.apply(v));
    Ok(ChannelAttention { pooled, weights })
}

impl ChannelAttention {
    pub fn vectors(&self) -> Vec<AttentionVector> {
        let c = self.weights.dim(1);
        self.weights.data().chunks(c).map(|w| AttentionVector { weights: w.to_vec() }).collect()
    }

    /// Returns `(d features, d weight, d bias)` given the gradient w.r.t. the attention weights.
    pub fn vjp(&self, feature_shape: &[usize], weight: &Tensor, d_weights: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let d_pre = self.weights.zip_map(d_weights, |s, g| g * s * (1.0 - s))?;
        let (d_pooled, dw, db) = dense_vjp(&self.pooled, weight, &d_pre)?;
        Ok((gap_vjp(feature_shape, &d_pooled)?, dw, db))
    }
}

/// `F_new[n,c,…] = A[n,c] · F[n,c,…]`.
pub fn apply_channel_gate(features: &Tensor, attention: &Tensor) -> Result<Tensor> {
    let (n, c) = check_gate(features, attention)?;
    let spatial = features.len() / (n * c);
    let mut out = features.clone();
    for (plane, &a) in out.data_mut().chunks_mut(spatial).zip(attention.data()) {
        plane.iter_mut().for_each(|v| *v *= a);
    }
    Ok(out)
}

/// Returns `(d features, d attention)`.
pub fn apply_channel_gate_vjp(features: &Tensor, attention: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, c) = check_gate(features, attention)?;
    features.expect_same_shape("apply_channel_gate_vjp", grad_out)?;
    let spatial = features.len() / (n * c);
    let d_features = apply_channel_gate(grad_out, attention)?;
    let d_attention = features
        .data()
        .chunks(spatial)
        .zip(grad_out.data().chunks(spatial))
        .map(|(f, g)| f.iter().zip(g).map(|(a, b)| a * b).sum())
        .collect();
    Ok((d_features, Tensor::new(vec![n, c], d_attention)?))
}

fn check_gate(features: &Tensor, attention: &Tensor) -> Result<(usize, usize)> {
    if features.rank() < 3 {
        return dim_err("apply_channel_gate", format!("features need spatial axes, got {:?}", features.shape()));
    }
    let (n, c) = (features.dim(0), features.dim(1));
    if attention.shape() != [n, c] {
        return dim_err("apply_channel_gate", format!("attention {:?} vs features [N={n}, C={c}]", attention.shape()));
    }
    Ok((n, c))
}

// ---------------------------------------------------------------------------
// Kernel representation

/// Parameters of the kernel-representation recurrence: `U [D, D]`, `V [D, C]`, `b [D]`.
#[derive(Clone, Copy, Debug)]
pub struct KrParams<'a> {
    pub u: &'a Tensor,
    pub v: &'a Tensor,
    pub b: &'a Tensor,
}

/// Batched recurrence: `prev [N, D]`, `gap_feat [N, C]` → `[N, D]`.
pub fn update_kernel_representation(prev: &Tensor, gap_feat: &Tensor, params: &KrParams<'_>) -> Result<Tensor> {
    let from_prev = dense(prev, params.u, params.b)?;
    let zero_bias = Tensor::zeros(&[params.v.dim(0)]);
    let from_feat = dense(gap_feat, params.v, &zero_bias)?;
    Ok(from_prev.add(&from_feat)?.map(f64::tanh))
}

/// Gradients of the recurrence: `(d prev, d gap_feat, dU, dV, db)`.
pub struct KrGrads {
    pub d_prev: Tensor,
    pub d_gap: Tensor,
    pub du: Tensor,
    pub dv: Tensor,
    pub db: Tensor,
}

pub fn update_kernel_representation_vjp(
    prev: &Tensor,
    gap_feat: &Tensor,
    next: &Tensor,
    params: &KrParams<'_>,
    d_next: &Tensor,
) -> Result<KrGrads> {
    let d_pre = next.zip_map(d_next, |t, g| g * (1.0 - t * t))?;
    let (d_prev, du, db) = dense_vjp(prev, params.u, &d_pre)?;
    let (d_gap, dv, _) = dense_vjp(gap_feat, params.v, &d_pre)?;
    Ok(KrGrads { d_prev, d_gap, du, dv, db })
}

// ---------------------------------------------------------------------------
// Kernel attention generator

/// Squeeze-and-excitation bottleneck: `W1 [H, Din]`, `b1 [H]`, `W2 [K, H]`, `b2 [K]`.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorParams<'a> {
    pub w1: &'a Tensor,
    pub b1: &'a Tensor,
    pub w2: &'a Tensor,
    pub b2: &'a Tensor,
}

/// Forward state of the generator; `weights = softmax(logits)`.
#[derive(Clone, Debug)]
pub struct KernelAttention {
    input: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    pub logits: Tensor,
    pub weights: Tensor,
}

/// Gradients of the generator w.r.t. its inputs and parameters.
pub struct GeneratorGrads {
    /// `None` when no kernel representation was fed in.
    pub d_kr: Option<Tensor>,
    pub d_gap: Tensor,
    pub dw1: Tensor,
    pub db1: Tensor,
    pub dw2: Tensor,
    pub db2: Tensor,
}

/// Hidden width of the bottleneck for a given input width and reduction ratio.
pub fn bottleneck_width(input_dim: usize, reduction: usize) -> usize {
    (input_dim / reduction.max(1)).max(1)
}

/// Softmax attention over `K` kernels from `concat(kr, gap_feat)`, batched over `N`.
pub fn kernel_attention(kr: Option<&Tensor>, gap_feat: &Tensor, params: &GeneratorParams<'_>) -> Result<KernelAttention> {
    let input = match kr {
        Some(kr) => concat_columns(kr, gap_feat)?,
        None => gap_feat.clone(),
    };
    let hidden_pre = dense(&input, params.w1, params.b1)?;
    let hidden = hidden_pre.map(|v| Activation::Relu.apply(v));
    let logits = dense(&hidden, params.w2, params.b2)?;
    let weights = softmax_rows(&logits)?;
    Ok(KernelAttention { input, hidden_pre, hidden, logits, weights })
}

impl KernelAttention {
    /// Back-propagates a logit gradient through the bottleneck.
    pub fn vjp(&self, params: &GeneratorParams<'_>, kr_dim: usize, d_logits: &Tensor) -> Result<GeneratorGrads> {
        let (d_hidden, dw2, db2) = dense_vjp(&self.hidden, params.w2, d_logits)?;
        let d_hidden_pre = self.hidden_pre.zip_map(&d_hidden, |x, g| g * Activation::Relu.derivative(x, 0.0))?;
        let (d_input, dw1, db1) = dense_vjp(&self.input, params.w1, &d_hidden_pre)?;
        let (d_kr, d_gap) = if kr_dim > 0 {
            let (a, b) = split_columns(&d_input, kr_dim)?;
            (Some(a), b)
        } else {
            (None, d_input)
        };
        Ok(GeneratorGrads { d_kr, d_gap, dw1, db1, dw2, db2 })
    }
}

fn concat_columns(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_rank("concat", "lhs", 2)?;
    b.expect_rank("concat", "rhs", 2)?;
    if a.dim(0) != b.dim(0) {
        return dim_err("concat", format!("row counts {} and {} differ", a.dim(0), b.dim(0)));
    }
    let (n, da, db) = (a.dim(0), a.dim(1), b.dim(1));
    let mut data = Vec::with_capacity(n * (da + db));
    for r in 0..n {
        data.extend_from_slice(&a.data()[r * da..(r + 1) * da]);
        data.extend_from_slice(&b.data()[r * db..(r + 1) * db]);
    }
    Tensor::new(vec![n, da + db], data)
}

fn split_columns(t: &Tensor, left: usize) -> Result<(Tensor, Tensor)> {
    let (n, d) = (t.dim(0), t.dim(1));
    let right = d - left;
    let mut a = Vec::with_capacity(n * left);
    let mut b = Vec::with_capacity(n * right);
    for row in t.data().chunks(d) {
        a.extend_from_slice(&row[..left]);
        b.extend_from_slice(&row[left..]);
    }
    Ok((Tensor::new(vec![n, left], a)?, Tensor::new(vec![n, right], b)?))
}

// ---------------------------------------------------------------------------
// Hard selection

/// Top-`k_active` mask over `logits`; ties go to the lowest index.
pub fn hard_select(logits: &[f64], k_active: usize) -> Result<GateMask> {
    if k_active == 0 || k_active > logits.len() {
        return invalid(format!("k_active = {k_active} outside 1..={}", logits.len()));
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    // Stable sort keeps lower indices first among equal logits.
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]));
    let mut mask = vec![0u8; logits.len()];
    for &i in &order[..k_active] {
        mask[i] = 1;
    }
    Ok(GateMask { mask, k_active })
}

/// Softmax restricted to the active kernels; inactive kernels get weight 0.
pub fn masked_softmax(logits: &[f64], mask: &GateMask) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(&mask.mask)
        .filter(|(_, &m)| m == 1)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits
        .iter()
        .zip(&mask.mask)
        .map(|(l, &m)| if m == 1 { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Prng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn zero_params_give_half() {
        let mut rng = Prng::new(2);
        let f = Tensor::randn(&[3, 4, 5, 5], 2.0, &mut rng);
        let a = channel_attention(&f, &Tensor::zeros(&[4, 4]), &Tensor::zeros(&[4])).unwrap();
        assert!(a.weights.data().iter().all(|&w| w == 0.5));
    }

    #[test]
    fn scalar_closed_form() {
        for w in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let f = Tensor::full(&[1, 1, 3, 3], 1.0);
            let a = channel_attention(&f, &t(&[1, 1], &[w]), &t(&[1], &[0.0])).unwrap();
            let expected = 1.0 / (1.0 + f64::exp(-w));
            assert!((a.weights.data()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn channel_attention_stays_open_interval() {
        let mut rng = Prng::new(8);
        for _ in 0..50 {
            let f = Tensor::randn(&[2, 3, 4, 4], 3.0, &mut rng);
            let w = Tensor::randn(&[3, 3], 1.0, &mut rng);
            let b = Tensor::randn(&[3], 1.0, &mut rng);
            let a = channel_attention(&f, &w, &b).unwrap();
            for v in a.vectors() {
                assert!(AttentionVector::channel(v.weights().to_vec()).is_ok());
            }
        }
    }

    #[test]
    fn gate_examples() {
        let mut rng = Prng::new(1);
        let f = Tensor::randn(&[2, 3, 2, 2], 1.0, &mut rng);
        assert_eq!(apply_channel_gate(&f, &Tensor::full(&[2, 3], 1.0)).unwrap(), f);
        assert!(apply_channel_gate(&f, &Tensor::zeros(&[2, 3])).unwrap().data().iter().all(|&v| v == 0.0));
        let y = apply_channel_gate(&t(&[1, 1, 1, 1], &[2.0]), &t(&[1, 1], &[0.25])).unwrap();
        assert_eq!(y.data(), &[0.5]);
        assert!(apply_channel_gate(&f, &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn zero_generator_is_uniform() {
        let mut rng = Prng::new(4);
        let (d, c, h, k) = (5, 3, 2, 4);
        let zeros = (Tensor::zeros(&[h, d + c]), Tensor::zeros(&[h]), Tensor::zeros(&[k, h]), Tensor::zeros(&[k]));
        let params = GeneratorParams { w1: &zeros.0, b1: &zeros.1, w2: &zeros.2, b2: &zeros.3 };
        let kr = Tensor::randn(&[2, d], 1.0, &mut rng);
        let g = Tensor::randn(&[2, c], 1.0, &mut rng);
        let a = kernel_attention(Some(&kr), &g, &params).unwrap();
        assert!(a.weights.data().iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn kernel_attention_sums_to_one() {
        let mut rng = Prng::new(6);
        let (d, c, k) = (4, 6, 5);
        let h = bottleneck_width(d + c, 4);
        let w1 = Tensor::randn(&[h, d + c], 1.0, &mut rng);
        let b1 = Tensor::randn(&[h], 1.0, &mut rng);
        let w2 = Tensor::randn(&[k, h], 1.0, &mut rng);
        let b2 = Tensor::randn(&[k], 1.0, &mut rng);
        let params = GeneratorParams { w1: &w1, b1: &b1, w2: &w2, b2: &b2 };
        for _ in 0..100 {
            let kr = Tensor::randn(&[1, d], 1.0, &mut rng);
            let g = Tensor::randn(&[1, c], 3.0, &mut rng);
            let a = kernel_attention(Some(&kr), &g, &params).unwrap();
            assert!(AttentionVector::kernel(a.weights.data().to_vec()).is_ok());
        }
    }

    #[test]
    fn kr_examples() {
        let (u0, v0, b0) = (Tensor::zeros(&[3, 3]), Tensor::zeros(&[3, 2]), Tensor::zeros(&[3]));
        let zero = KrParams { u: &u0, v: &v0, b: &b0 };
        let prev = KernelRepresentation { state: vec![0.3, -0.9, 0.1], layer_index: 4 };
        let next = prev.update(&[1.0, 2.0], &zero).unwrap();
        assert_eq!(next.state, vec![0.0; 3]);
        assert_eq!(next.layer_index, 5);

        let (u, v, b) = (t(&[1, 1], &[1.0]), t(&[1, 1], &[0.0]), t(&[1], &[0.0]));
        let p = KrParams { u: &u, v: &v, b: &b };
        let next = KernelRepresentation { state: vec![0.5], layer_index: 0 }.update(&[7.0], &p).unwrap();
        assert!((next.state[0] - 0.5f64.tanh()).abs() < 1e-15);
        assert!((next.state[0] - 0.4621).abs() < 1e-4);
        assert_eq!(next.layer_index, 1);
    }

    #[test]
    fn hard_select_examples() {
        assert_eq!(hard_select(&[0.9, 0.1, 0.5], 2).unwrap().mask, vec![1, 0, 1]);
        assert_eq!(hard_select(&[0.9, 0.1, 0.5], 3).unwrap().mask, vec![1, 1, 1]);
        assert_eq!(hard_select(&[1.0, 1.0, 0.0], 1).unwrap().mask, vec![1, 0, 0]);
        assert!(hard_select(&[1.0, 2.0], 0).is_err());
        assert!(hard_select(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn masked_softmax_renormalizes_active() {
        let logits = [0.9, 0.1, 0.5];
        let mask = hard_select(&logits, 2).unwrap();
        let w = masked_softmax(&logits, &mask);
        assert_eq!(w[1], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let e = (0.9f64 - 0.5).exp();
        assert!((w[0] - e / (1.0 + e)).abs() < 1e-15);
    }
}
