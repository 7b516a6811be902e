use super::Tensor;
use crate::error::{dim_err, invalid, Result};

/// Mean categorical cross-entropy over `[N, C]` logits, plus `(softmax − onehot)/N`.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    logits.expect_rank("softmax_xent", "logits", 2)?;
    let (n, c) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return dim_err("softmax_xent", format!("{} labels for {n} rows", labels.len()));
    }
    let mut grad = Tensor::zeros(&[n, c]);
    let mut loss = 0.0;
    for (r, (&label, row)) in labels.iter().zip(logits.data().chunks(c)).enumerate() {
        if label >= c {
            return invalid(format!("label {label} out of range for {c} classes"));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        loss += log_z - row[label];
        let g = &mut grad.data_mut()[r * c..(r + 1) * c];
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - log_z).exp() / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Per-pixel cross-entropy for `[N, C, H, W]` logits against `N·H·W` labels,
/// averaged over every pixel. The gradient has the logits' layout.
pub fn softmax_xent_spatial(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    logits.expect_rank("softmax_xent_spatial", "logits", 4)?;
    let s = logits.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    // [N, C, HW] -> [N·HW, C]
    let rows = Tensor::from_fn(&[n * hw, c], |i| {
        let (r, k) = (i / c, i % c);
        let (b, p) = (r / hw, r % hw);
        logits.data()[(b * c + k) * hw + p]
    });
    let (loss, g) = softmax_xent(&rows, labels)?;
    let grad = Tensor::from_fn(s, |i| {
        let (b, rest) = (i / (c * hw), i % (c * hw));
        let (k, p) = (rest / hw, rest % hw);
        g.data()[(b * hw + p) * c + k]
    });
    Ok((loss, grad))
}
