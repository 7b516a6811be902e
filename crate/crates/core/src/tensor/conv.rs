use super::Tensor;
use crate::error::{dim_err, Result};

/// Stride and zero padding per spatial axis, ordered (height, width).
///
/// The 1-D operations read only the second entry of each pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self { stride: [1, 1], padding: [0, 0] }
    }
}

impl ConvSpec {
    pub fn new(stride: [usize; 2], padding: [usize; 2]) -> Self {
        Self { stride, padding }
    }

    pub fn uniform(stride: usize, padding: usize) -> Self {
        Self { stride: [stride; 2], padding: [padding; 2] }
    }

    /// Spec for a 1-D convolution, expressed as a 2-D one over a height-1 map.
    pub fn along_length(self) -> Self {
        Self { stride: [1, self.stride[1]], padding: [0, self.padding[1]] }
    }

    /// `floor((input + 2·pad − kernel)/stride) + 1`, or `None` when that is < 1.
    pub fn output_len(&self, axis: usize, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.padding[axis];
        if self.stride[axis] == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride[axis] + 1)
    }
}

/// Resolved sizes of one convolution, shared by forward and both vjps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub spec: ConvSpec,
}

impl ConvGeometry {
    pub fn new(
        op: &'static str,
        input: [usize; 3],
        kernel: [usize; 4],
        spec: ConvSpec,
    ) -> Result<Self> {
        let [cin, h, w] = input;
        let [cout, kcin, kh, kw] = kernel;
        if cin != kcin {
            return dim_err(op, format!("input channels (axis 1) = {cin} but kernel in-channels (axis 1) = {kcin}"));
        }
        let ho = spec.output_len(0, h, kh);
        let wo = spec.output_len(1, w, kw);
        match (ho, wo) {
            (Some(ho), Some(wo)) => Ok(Self { cin, h, w, cout, kh, kw, ho, wo, spec }),
            _ => dim_err(
                op,
                format!("kernel {kh}x{kw} does not fit input {h}x{w} with spec {spec:?}"),
            ),
        }
    }

    pub fn input_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    pub fn kernel_len(&self) -> usize {
        self.cout * self.cin * self.kh * self.kw
    }

    pub fn output_len(&self) -> usize {
        self.cout * self.ho * self.wo
    }

    /// Output columns `ow` whose input column `ow·stride + kj − pad` is in bounds.
    #[inline]
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let (s, p) = (self.spec.stride[1], self.spec.padding[1]);
        let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
        let last_in = self.w - 1 + p;
        if last_in < kj {
            return (0, 0);
        }
        let hi = ((last_in - kj) / s + 1).min(self.wo);
        (lo.min(hi), hi)
    }

    #[inline]
    fn input_row(&self, oh: usize, ki: usize) -> Option<usize> {
        let ih = (oh * self.spec.stride[0] + ki) as isize - self.spec.padding[0] as isize;
        (ih >= 0 && (ih as usize) < self.h).then_some(ih as usize)
    }

    /// Cross-correlation of one sample; `out` is overwritten.
    pub fn forward_sample(&self, x: &[f64], kernel: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let (s, p) = (self.spec.stride[1], self.spec.padding[1]);
        for co in 0..self.cout {
            let out_c = &mut out[co * self.ho * self.wo..(co + 1) * self.ho * self.wo];
            for ci in 0..self.cin {
                let x_c = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
                let k_base = ((co * self.cin) + ci) * self.kh * self.kw;
                for ki in 0..self.kh {
                    for kj in 0..self.kw {
                        let wv = kernel[k_base + ki * self.kw + kj];
                        let (lo, hi) = self.col_range(kj);
                        for oh in 0..self.ho {
                            let Some(ih) = self.input_row(oh, ki) else { continue };
                            let row_in = &x_c[ih * self.w..(ih + 1) * self.w];
                            let row_out = &mut out_c[oh * self.wo..(oh + 1) * self.wo];
                            if s == 1 {
                                let off = kj as isize - p as isize;
                                let src = &row_in[(lo as isize + off) as usize..(hi as isize + off) as usize];
                                for (o, &v) in row_out[lo..hi].iter_mut().zip(src) {
                                    *o += wv * v;
                                }
                            } else {
                                for ow in lo..hi {
                                    row_out[ow] += wv * row_in[ow * s + kj - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates the input gradient of one sample into `dx`.
    pub fn backward_input_sample(&self, kernel: &[f64], dy: &[f64], dx: &mut [f64]) {
        let (s, p) = (self.spec.stride[1], self.spec.padding[1]);
        for co in 0..self.cout {
            let dy_c = &dy[co * self.ho * self.wo..(co + 1) * self.ho * self.wo];
            for ci in 0..self.cin {
                let dx_c = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
                let k_base = ((co * self.cin) + ci) * self.kh * self.kw;
                for ki in 0..self.kh {
                    for kj in 0..self.kw {
                        let wv = kernel[k_base + ki * self.kw + kj];
                        let (lo, hi) = self.col_range(kj);
                        for oh in 0..self.ho {
                            let Some(ih) = self.input_row(oh, ki) else { continue };
                            let row_dy = &dy_c[oh * self.wo..(oh + 1) * self.wo];
                            let row_dx = &mut dx_c[ih * self.w..(ih + 1) * self.w];
                            if s == 1 {
                                let off = kj as isize - p as isize;
                                let dst = &mut row_dx[(lo as isize + off) as usize..(hi as isize + off) as usize];
                                for (d, &g) in dst.iter_mut().zip(&row_dy[lo..hi]) {
                                    *d += wv * g;
                                }
                            } else {
                                for ow in lo..hi {
                                    row_dx[ow * s + kj - p] += wv * row_dy[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates the kernel gradient of one sample into `dk`.
    pub fn backward_kernel_sample(&self, x: &[f64], dy: &[f64], dk: &mut [f64]) {
        let (s, p) = (self.spec.stride[1], self.spec.padding[1]);
        for co in 0..self.cout {
            let dy_c = &dy[co * self.ho * self.wo..(co + 1) * self.ho * self.wo];
            for ci in 0..self.cin {
                let x_c = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
                let k_base = ((co * self.cin) + ci) * self.kh * self.kw;
                for ki in 0..self.kh {
                    for kj in 0..self.kw {
                        let (lo, hi) = self.col_range(kj);
                        let mut acc = 0.0;
                        for oh in 0..self.ho {
                            let Some(ih) = self.input_row(oh, ki) else { continue };
                            let row_in = &x_c[ih * self.w..(ih + 1) * self.w];
                            let row_dy = &dy_c[oh * self.wo..(oh + 1) * self.wo];
                            if s == 1 {
                                let off = kj as isize - p as isize;
                                let src = &row_in[(lo as isize + off) as usize..(hi as isize + off) as usize];
                                acc += src.iter().zip(&row_dy[lo..hi]).map(|(a, b)| a * b).sum::<f64>();
                            } else {
                                for ow in lo..hi {
                                    acc += row_in[ow * s + kj - p] * row_dy[ow];
                                }
                            }
                        }
                        dk[k_base + ki * self.kw + kj] += acc;
                    }
                }
            }
        }
    }
}

fn geometry_2d(op: &'static str, input: &Tensor, kernel: &Tensor, spec: ConvSpec) -> Result<(usize, ConvGeometry)> {
    input.expect_rank(op, "input", 4)?;
    kernel.expect_rank(op, "kernel", 4)?;
    let s = input.shape();
    let k = kernel.shape();
    let geo = ConvGeometry::new(op, [s[1], s[2], s[3]], [k[0], k[1], k[2], k[3]], spec)?;
    Ok((s[0], geo))
}

/// 2-D cross-correlation (no kernel flip) with zero padding.
///
/// `input` is `[N, Cin, H, W]`, `kernel` is `[Cout, Cin, Kh, Kw]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, spec: ConvSpec) -> Result<Tensor> {
    let (n, geo) = geometry_2d("conv2d", input, kernel, spec)?;
    let mut out = Tensor::zeros(&[n, geo.cout, geo.ho, geo.wo]);
    let (il, ol) = (geo.input_len(), geo.output_len());
    for b in 0..n {
        geo.forward_sample(
            &input.data()[b * il..(b + 1) * il],
            kernel.data(),
            &mut out.data_mut()[b * ol..(b + 1) * ol],
        );
    }
    Ok(out.debug_check_finite("conv2d"))
}

pub fn conv2d_vjp_input(input_shape: &[usize], kernel: &Tensor, spec: ConvSpec, grad_out: &Tensor) -> Result<Tensor> {
    let probe = Tensor::zeros(input_shape);
    let (n, geo) = geometry_2d("conv2d_vjp", &probe, kernel, spec)?;
    check_grad_out(&geo, n, grad_out)?;
    let mut dx = probe;
    let (il, ol) = (geo.input_len(), geo.output_len());
    for b in 0..n {
        geo.backward_input_sample(
            kernel.data(),
            &grad_out.data()[b * ol..(b + 1) * ol],
            &mut dx.data_mut()[b * il..(b + 1) * il],
        );
    }
    Ok(dx)
}

pub fn conv2d_vjp_kernel(input: &Tensor, kernel_shape: &[usize], spec: ConvSpec, grad_out: &Tensor) -> Result<Tensor> {
    let mut dk = Tensor::zeros(kernel_shape);
    let (n, geo) = geometry_2d("conv2d_vjp", input, &dk, spec)?;
    check_grad_out(&geo, n, grad_out)?;
    let (il, ol) = (geo.input_len(), geo.output_len());
    for b in 0..n {
        geo.backward_kernel_sample(
            &input.data()[b * il..(b + 1) * il],
            &grad_out.data()[b * ol..(b + 1) * ol],
            dk.data_mut(),
        );
    }
    Ok(dk)
}

/// Returns `(d input, d kernel)`.
pub fn conv2d_vjp(input: &Tensor, kernel: &Tensor, spec: ConvSpec, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((
        conv2d_vjp_input(input.shape(), kernel, spec, grad_out)?,
        conv2d_vjp_kernel(input, kernel.shape(), spec, grad_out)?,
    ))
}

fn check_grad_out(geo: &ConvGeometry, n: usize, grad_out: &Tensor) -> Result<()> {
    let expected = [n, geo.cout, geo.ho, geo.wo];
    if grad_out.shape() != expected {
        return dim_err("conv2d_vjp", format!("grad_out shape {:?} != output shape {expected:?}", grad_out.shape()));
    }
    Ok(())
}

fn lift_1d(op: &'static str, t: &Tensor, name: &str) -> Result<Tensor> {
    t.expect_rank(op, name, 3)?;
    let s = t.shape();
    t.clone().reshape(&[s[0], s[1], 1, s[2]])
}

/// 1-D cross-correlation: `input` is `[N, Cin, L]`, `kernel` is `[Cout, Cin, K]`.
pub fn conv1d(input: &Tensor, kernel: &Tensor, spec: ConvSpec) -> Result<Tensor> {
    let x = lift_1d("conv1d", input, "input")?;
    let k = lift_1d("conv1d", kernel, "kernel")?;
    let y = conv2d(&x, &k, spec.along_length())?;
    let s = y.shape().to_vec();
    y.reshape(&[s[0], s[1], s[3]])
}

/// Returns `(d input, d kernel)` for [`conv1d`].
pub fn conv1d_vjp(input: &Tensor, kernel: &Tensor, spec: ConvSpec, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let x = lift_1d("conv1d_vjp", input, "input")?;
    let k = lift_1d("conv1d_vjp", kernel, "kernel")?;
    let g = lift_1d("conv1d_vjp", grad_out, "grad_out")?;
    let (dx, dk) = conv2d_vjp(&x, &k, spec.along_length(), &g)?;
    Ok((dx.reshape(input.shape())?, dk.reshape(kernel.shape())?))
}
