//! Kernel banks: attention-weighted aggregation and the dihedral orientation expansion.

use crate::error::{dim_err, invalid, Result};
use crate::tensor::Tensor;

/// Number of dihedral variants emitted per base kernel.
pub const ORIENTATIONS: usize = 8;

/// `K` kernels of identical shape stored as one `[K, ...kernel shape]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBank {
    kernels: Tensor,
    pub frozen: bool,
}

impl KernelBank {
    pub fn new(kernels: Tensor) -> Result<Self> {
        if kernels.rank() < 2 {
            return dim_err("kernel_bank", format!("expected [K, ...kernel], got {:?}", kernels.shape()));
        }
        Ok(Self { kernels, frozen: false })
    }

    pub fn from_kernels(kernels: &[Tensor]) -> Result<Self> {
        let Some(first) = kernels.first() else {
            return invalid("a kernel bank needs at least one kernel");
        };
        if let Some(bad) = kernels.iter().find(|k| k.shape() != first.shape()) {
            return dim_err("kernel_bank", format!("kernel shapes {:?} and {:?} differ", first.shape(), bad.shape()));
        }
        let mut shape = vec![kernels.len()];
        shape.extend_from_slice(first.shape());
        let data = kernels.iter().flat_map(|k| k.data().iter().copied()).collect();
        Self::new(Tensor::new(shape, data)?)
    }

    pub fn size(&self) -> usize {
        self.kernels.dim(0)
    }

    pub fn kernel_shape(&self) -> &[usize] {
        &self.kernels.shape()[1..]
    }

    pub fn kernel_len(&self) -> usize {
        self.kernels.len() / self.size()
    }

    pub fn kernel(&self, i: usize) -> Tensor {
        let len = self.kernel_len();
        Tensor::new(self.kernel_shape().to_vec(), self.kernels.data()[i * len..(i + 1) * len].to_vec())
            .expect("bank slice shape")
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.kernels
    }
}

/// `Σᵢ a[i]·bank[i]` written into `out`.
pub(crate) fn aggregate_into(bank: &[f64], kernel_len: usize, attention: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (a, kernel) in attention.iter().zip(bank.chunks(kernel_len)) {
        if *a == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(kernel) {
            *o += a * w;
        }
    }
}

/// Attention gradient `⟨dW, bank[i]⟩` per kernel; optionally accumulates `a[i]·dW` into `d_bank`.
pub(crate) fn aggregate_vjp_into(
    bank: &[f64],
    kernel_len: usize,
    attention: &[f64],
    d_kernel: &[f64],
    d_attention: &mut [f64],
    d_bank: Option<&mut [f64]>,
) {
    for (da, kernel) in d_attention.iter_mut().zip(bank.chunks(kernel_len)) {
        *da = kernel.iter().zip(d_kernel).map(|(w, g)| w * g).sum();
    }
    if let Some(d_bank) = d_bank {
        for (a, dk) in attention.iter().zip(d_bank.chunks_mut(kernel_len)) {
            if *a == 0.0 {
                continue;
            }
            for (d, g) in dk.iter_mut().zip(d_kernel) {
                *d += a * g;
            }
        }
    }
}

fn check_attention(op: &'static str, bank: &KernelBank, attention: &[f64]) -> Result<()> {
    if attention.len() != bank.size() {
        return dim_err(op, format!("attention length {} != bank size {}", attention.len(), bank.size()));
    }
    Ok(())
}

/// Weighted sum of the bank's kernels.
pub fn aggregate_kernels(bank: &KernelBank, attention: &[f64]) -> Result<Tensor> {
    check_attention("aggregate_kernels", bank, attention)?;
    let mut out = Tensor::zeros(bank.kernel_shape());
    aggregate_into(bank.kernels.data(), bank.kernel_len(), attention, out.data_mut());
    Ok(out)
}

/// Returns `(d attention, d bank)`; the bank gradient is `None` when the bank is frozen.
pub fn aggregate_kernels_vjp(
    bank: &KernelBank,
    attention: &[f64],
    d_kernel: &Tensor,
) -> Result<(Vec<f64>, Option<Tensor>)> {
    check_attention("aggregate_kernels_vjp", bank, attention)?;
    if d_kernel.shape() != bank.kernel_shape() {
        return dim_err("aggregate_kernels_vjp", format!("gradient {:?} vs kernel {:?}", d_kernel.shape(), bank.kernel_shape()));
    }
    let mut d_attention = vec![0.0; bank.size()];
    let mut d_bank = (!bank.frozen).then(|| Tensor::zeros(bank.kernels.shape()));
    aggregate_vjp_into(
        bank.kernels.data(),
        bank.kernel_len(),
        attention,
        d_kernel.data(),
        &mut d_attention,
        d_bank.as_mut().map(|t| t.data_mut()),
    );
    Ok((d_attention, d_bank))
}

/// Source index table for dihedral variant `o` of a `k × k` grid: `out[dst] = in[table[dst]]`.
///
/// Variants 0..4 rotate counter-clockwise by `o·90°`; 4..8 mirror those horizontally.
pub fn dihedral_table(o: usize, k: usize) -> Vec<usize> {
    assert!(o < ORIENTATIONS);
    let mut table: Vec<usize> = (0..k * k).collect();
    for _ in 0..o % 4 {
        // 90° CCW: out[i][j] = in[j][k-1-i]
        table = (0..k * k).map(|dst| {
            let (i, j) = (dst / k, dst % k);
            table[j * k + (k - 1 - i)]
        }).collect();
    }
    if o >= 4 {
        table = (0..k * k).map(|dst| {
            let (i, j) = (dst / k, dst % k);
            table[i * k + (k - 1 - j)]
        }).collect();
    }
    table
}

/// Applies dihedral variant `o` to the trailing `k × k` plane of every slice.
pub fn transform_planes(data: &[f64], k: usize, o: usize) -> Vec<f64> {
    let table = dihedral_table(o, k);
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks(k * k).zip(out.chunks_mut(k * k)) {
        for (d, &t) in dst.iter_mut().zip(&table) {
            *d = src[t];
        }
    }
    out
}

/// Rotates a 2-D `[k, k]` kernel (or every trailing plane) by 90° counter-clockwise.
pub fn rotate90_ccw(kernel: &Tensor) -> Result<Tensor> {
    let k = square_side("rotate90_ccw", kernel.shape())?;
    Tensor::new(kernel.shape().to_vec(), transform_planes(kernel.data(), k, 1))
}

fn square_side(op: &'static str, shape: &[usize]) -> Result<usize> {
    let n = shape.len();
    if n < 2 || shape[n - 1] != shape[n - 2] {
        return invalid(format!("{op} requires square spatial kernels, got shape {shape:?}"));
    }
    Ok(shape[n - 1])
}

/// Expands a bank of `K` square kernels to `8·K`: variant `o` of kernel `j` sits at `j·8 + o`.
pub fn orient_bank(bank: &KernelBank) -> Result<KernelBank> {
    let side = square_side("orient_bank", bank.kernel_shape())?;
    let len = bank.kernel_len();
    let mut data = Vec::with_capacity(len * bank.size() * ORIENTATIONS);
    for kernel in bank.kernels.data().chunks(len) {
        for o in 0..ORIENTATIONS {
            data.extend(transform_planes(kernel, side, o));
        }
    }
    let mut shape = bank.kernels.shape().to_vec();
    shape[0] *= ORIENTATIONS;
    Ok(KernelBank { kernels: Tensor::new(shape, data)?, frozen: bank.frozen })
}

/// Folds a gradient over the oriented bank back onto the `K` base kernels.
pub fn orient_bank_vjp(base_shape: &[usize], d_oriented: &[f64]) -> Result<Tensor> {
    let side = square_side("orient_bank_vjp", base_shape)?;
    let k = base_shape[0];
    let len: usize = base_shape[1..].iter().product();
    if d_oriented.len() != k * ORIENTATIONS * len {
        return dim_err("orient_bank_vjp", format!("gradient length {} for base {base_shape:?}", d_oriented.len()));
    }
    let mut d_base = Tensor::zeros(base_shape);
    for j in 0..k {
        let dst = &mut d_base.data_mut()[j * len..(j + 1) * len];
        for o in 0..ORIENTATIONS {
            let table = dihedral_table(o, side);
            let src = &d_oriented[(j * ORIENTATIONS + o) * len..(j * ORIENTATIONS + o + 1) * len];
            for (plane_src, plane_dst) in src.chunks(side * side).zip(dst.chunks_mut(side * side)) {
                for (pos, &t) in table.iter().enumerate() {
                    plane_dst[t] += plane_src[pos];
                }
            }
        }
    }
    Ok(d_base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Prng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn one_hot_selects_kernel() {
        let mut rng = Prng::new(3);
        let kernels: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[2, 2, 3, 3], 1.0, &mut rng)).collect();
        let bank = KernelBank::from_kernels(&kernels).unwrap();
        for j in 0..3 {
            let mut a = vec![0.0; 3];
            a[j] = 1.0;
            assert_eq!(aggregate_kernels(&bank, &a).unwrap(), kernels[j]);
        }
    }

    #[test]
    fn uniform_pair_gives_midpoint() {
        let eye = t(&[1, 1, 2, 2], &[1., 0., 0., 1.]);
        let bank = KernelBank::from_kernels(&[eye.scale(2.0), eye.scale(4.0)]).unwrap();
        assert_eq!(aggregate_kernels(&bank, &[0.5, 0.5]).unwrap(), eye.scale(3.0));
    }

    #[test]
    fn matches_brute_force_sum() {
        let mut rng = Prng::new(9);
        for _ in 0..10 {
            let kernels: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng)).collect();
            let bank = KernelBank::from_kernels(&kernels).unwrap();
            let raw: Vec<f64> = (0..3).map(|_| rng.next_f64()).collect();
            let total: f64 = raw.iter().sum();
            let a: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let fast = aggregate_kernels(&bank, &a).unwrap();
            let brute = Tensor::from_fn(kernels[0].shape(), |i| (0..3).map(|j| a[j] * kernels[j].data()[i]).sum());
            assert!(fast.max_abs_diff(&brute) <= 1e-12);
        }
    }

    #[test]
    fn attention_length_mismatch() {
        let bank = KernelBank::new(Tensor::zeros(&[2, 1, 1, 3, 3])).unwrap();
        assert!(aggregate_kernels(&bank, &[1.0]).is_err());
    }

    #[test]
    fn frozen_bank_has_no_kernel_gradient() {
        let mut bank = KernelBank::new(Tensor::full(&[2, 1, 1, 1, 1], 1.0)).unwrap();
        bank.frozen = true;
        let (da, db) = aggregate_kernels_vjp(&bank, &[0.5, 0.5], &Tensor::full(&[1, 1, 1, 1], 2.0)).unwrap();
        assert_eq!(da, vec![2.0, 2.0]);
        assert!(db.is_none());
    }

    #[test]
    fn rotation_examples() {
        let k = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(rotate90_ccw(&k).unwrap().data(), &[2., 4., 1., 3.]);
        assert_eq!(transform_planes(k.data(), 2, 0), k.data());
        let mut r = k.clone();
        for _ in 0..4 {
            r = rotate90_ccw(&r).unwrap();
        }
        assert_eq!(r, k);
    }

    #[test]
    fn dihedral_variants_are_distinct_for_generic_kernel() {
        let k: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let mut variants: Vec<Vec<u64>> = (0..8)
            .map(|o| transform_planes(&k, 3, o).iter().map(|v| v.to_bits()).collect())
            .collect();
        variants.sort();
        variants.dedup();
        assert_eq!(variants.len(), 8);
    }

    #[test]
    fn orient_rejects_non_square() {
        let bank = KernelBank::new(Tensor::zeros(&[1, 1, 1, 2, 3])).unwrap();
        assert!(orient_bank(&bank).is_err());
    }

    #[test]
    fn orient_vjp_is_adjoint() {
        let mut rng = Prng::new(4);
        let base = KernelBank::new(Tensor::randn(&[2, 2, 1, 3, 3], 1.0, &mut rng)).unwrap();
        let oriented = orient_bank(&base).unwrap();
        let g = Tensor::randn(oriented.as_tensor().shape(), 1.0, &mut rng);
        let lhs = oriented.as_tensor().dot(&g).unwrap();
        let back = orient_bank_vjp(base.as_tensor().shape(), g.data()).unwrap();
        let rhs = base.as_tensor().dot(&back).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
