use super::Tensor;
use crate::error::{dim_err, Result};

/// Views `[N, C, L]` or `[N, C, H, W]` as `(N·C, H, W)`.
fn planes(op: &'static str, input: &Tensor) -> Result<(usize, usize, usize)> {
    match *input.shape() {
        [n, c, l] => Ok((n * c, 1, l)),
        [n, c, h, w] => Ok((n * c, h, w)),
        _ => dim_err(op, format!("expected [N,C,L] or [N,C,H,W], got {:?}", input.shape())),
    }
}

fn per_axis(op: &'static str, values: &[usize], rank: usize, what: &str) -> Result<[usize; 2]> {
    match (rank, values) {
        (3, [l]) => Ok([1, *l]),
        (4, [h, w]) => Ok([*h, *w]),
        _ => dim_err(op, format!("{what} needs {} entries for rank-{rank} input, got {values:?}", rank - 2)),
    }
}

/// Result of [`maxpool`]: the pooled tensor plus the argmax routing table.
#[derive(Clone, Debug)]
pub struct MaxPoolOutput {
    pub output: Tensor,
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl MaxPoolOutput {
    /// Routes each output gradient to the input position that produced the max.
    pub fn vjp(&self, grad_out: &Tensor) -> Result<Tensor> {
        self.output.expect_same_shape("maxpool_vjp", grad_out)?;
        let mut dx = Tensor::zeros(&self.input_shape);
        for (&src, &g) in self.argmax.iter().zip(grad_out.data()) {
            dx.data_mut()[src] += g;
        }
        Ok(dx)
    }
}

/// Max pooling without padding. Ties route to the first maximum in row-major order.
pub fn maxpool(input: &Tensor, window: &[usize], stride: &[usize]) -> Result<MaxPoolOutput> {
    const OP: &str = "maxpool";
    let (planes_n, h, w) = planes(OP, input)?;
    let [wh, ww] = per_axis(OP, window, input.rank(), "window")?;
    let [sh, sw] = per_axis(OP, stride, input.rank(), "stride")?;
    if wh == 0 || ww == 0 || sh == 0 || sw == 0 {
        return dim_err(OP, "window and stride must be positive");
    }
    if wh > h || ww > w {
        return dim_err(OP, format!("window {wh}x{ww} larger than input {h}x{w}"));
    }
    let (ho, wo) = ((h - wh) / sh + 1, (w - ww) / sw + 1);
    let mut out_shape = input.shape().to_vec();
    let rank = out_shape.len();
    if rank == 3 {
        out_shape[2] = wo;
    } else {
        out_shape[2] = ho;
        out_shape[3] = wo;
    }
    let mut out = Vec::with_capacity(planes_n * ho * wo);
    let mut argmax = Vec::with_capacity(planes_n * ho * wo);
    let x = input.data();
    for p in 0..planes_n {
        let base = p * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = base + oh * sh * w + ow * sw;
                for i in 0..wh {
                    for j in 0..ww {
                        let at = base + (oh * sh + i) * w + ow * sw + j;
                        if x[at] > best {
                            best = x[at];
                            best_at = at;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_at);
            }
        }
    }
    Ok(MaxPoolOutput { output: Tensor::new(out_shape, out)?, input_shape: input.shape().to_vec(), argmax })
}

/// Global average pooling over every spatial axis: `[N, C, ...] -> [N, C]`.
pub fn gap(input: &Tensor) -> Result<Tensor> {
    if input.rank() < 3 {
        return dim_err("gap", format!("expected at least one spatial axis, got {:?}", input.shape()));
    }
    let (n, c) = (input.dim(0), input.dim(1));
    let spatial = input.len() / (n * c);
    let data = input.data().chunks(spatial).map(|ch| ch.iter().sum::<f64>() / spatial as f64).collect();
    Tensor::new(vec![n, c], data)
}

/// Spreads each `[N, C]` gradient uniformly (1/spatial) over its channel.
pub fn gap_vjp(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if input_shape.len() < 3 || grad_out.shape() != &input_shape[..2] {
        return dim_err("gap_vjp", format!("grad {:?} incompatible with input {input_shape:?}", grad_out.shape()));
    }
    let spatial: usize = input_shape[2..].iter().product();
    let mut dx = Tensor::zeros(input_shape);
    for (chunk, &g) in dx.data_mut().chunks_mut(spatial).zip(grad_out.data()) {
        chunk.fill(g / spatial as f64);
    }
    Ok(dx)
}

/// Nearest-neighbour upsampling of `[N, C, H, W]` by an integer factor.
pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    input.expect_rank("upsample_nearest", "input", 4)?;
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (hf, wf) = (h * factor, w * factor);
    let x = input.data();
    Ok(Tensor::from_fn(&[n, c, hf, wf], |idx| {
        let plane = idx / (hf * wf);
        let rest = idx % (hf * wf);
        x[plane * h * w + (rest / wf / factor) * w + (rest % wf) / factor]
    }))
}

pub fn upsample_nearest_vjp(input_shape: &[usize], factor: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (hf, wf) = (h * factor, w * factor);
    let expected = [input_shape[0], input_shape[1], hf, wf];
    if grad_out.shape() != expected {
        return dim_err("upsample_nearest_vjp", format!("grad {:?} != {expected:?}", grad_out.shape()));
    }
    let mut dx = Tensor::zeros(input_shape);
    for (idx, &g) in grad_out.data().iter().enumerate() {
        let plane = idx / (hf * wf);
        let rest = idx % (hf * wf);
        dx.data_mut()[plane * h * w + (rest / wf / factor) * w + (rest % wf) / factor] += g;
    }
    Ok(dx)
}
