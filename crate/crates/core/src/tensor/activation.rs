use super::Tensor;
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`; relu′(0) = 0.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn pointwise(input: &Tensor, act: Activation) -> Tensor {
    input.map(|v| act.apply(v)).debug_check_finite("pointwise")
}

pub fn pointwise_vjp(act: Activation, input: &Tensor, output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.expect_same_shape("pointwise_vjp", output)?;
    input.expect_same_shape("pointwise_vjp", grad_out)?;
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(grad_out.data())
        .map(|((&x, &y), &g)| g * act.derivative(x, y))
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Row-wise softmax of a `[N, K]` tensor, max-shifted for stability.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    logits.expect_rank("softmax", "logits", 2)?;
    let k = logits.dim(1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        softmax_in_place(row);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `dl = p ⊙ (g − ⟨g, p⟩)` per row.
pub fn softmax_rows_vjp(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    probs.expect_same_shape("softmax_vjp", grad_out)?;
    if probs.rank() != 2 {
        return dim_err("softmax_vjp", format!("expected rank 2, got {:?}", probs.shape()));
    }
    let k = probs.dim(1);
    let mut out = Tensor::zeros(probs.shape());
    for ((p, g), d) in probs.data().chunks(k).zip(grad_out.data().chunks(k)).zip(out.data_mut().chunks_mut(k)) {
        softmax_vjp_row(p, g, d);
    }
    Ok(out)
}

pub(crate) fn softmax_vjp_row(p: &[f64], g: &[f64], out: &mut [f64]) {
    let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &pi), &gi) in out.iter_mut().zip(p).zip(g) {
        *o = pi * (gi - inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_examples() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Relu.apply(-3.0), 0.0);
        assert_eq!(Activation::Relu.apply(3.0), 3.0);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.derivative(0.0, 0.0), 0.0);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn softmax_closed_form() {
        let l = Tensor::new(vec![1, 4], vec![10., 0., 0., 0.]).unwrap();
        let p = softmax_rows(&l).unwrap();
        let expected = 1.0 / (1.0 + 3.0 * (-10f64).exp());
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!(p.data()[0] > 0.999);
    }
}
