use super::Tensor;
use crate::error::{dim_err, Result};

/// Affine map `input · weightᵀ + bias` with `input [N, Din]`, `weight [Dout, Din]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, din, dout) = check("dense", input, weight, bias)?;
    let (x, w, b) = (input.data(), weight.data(), bias.data());
    let mut out = vec![0.0; n * dout];
    for r in 0..n {
        let row = &x[r * din..(r + 1) * din];
        for o in 0..dout {
            let wr = &w[o * din..(o + 1) * din];
            out[r * dout + o] = b[o] + row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(Tensor::new(vec![n, dout], out)?.debug_check_finite("dense"))
}

/// Returns `(d input, d weight, d bias)`.
pub fn dense_vjp(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    input.expect_rank("dense_vjp", "input", 2)?;
    weight.expect_rank("dense_vjp", "weight", 2)?;
    let (n, din, dout) = (input.dim(0), input.dim(1), weight.dim(0));
    if grad_out.shape() != [n, dout] || weight.dim(1) != din {
        return dim_err("dense_vjp", format!(
            "grad {:?}, input {:?}, weight {:?} are inconsistent",
            grad_out.shape(), input.shape(), weight.shape()
        ));
    }
    let (x, w, g) = (input.data(), weight.data(), grad_out.data());
    let mut dx = vec![0.0; n * din];
    let mut dw = vec![0.0; dout * din];
    let mut db = vec![0.0; dout];
    for r in 0..n {
        let xr = &x[r * din..(r + 1) * din];
        let dxr = &mut dx[r * din..(r + 1) * din];
        for o in 0..dout {
            let go = g[r * dout + o];
            if go == 0.0 {
                continue;
            }
            db[o] += go;
            let wr = &w[o * din..(o + 1) * din];
            let dwr = &mut dw[o * din..(o + 1) * din];
            for i in 0..din {
                dxr[i] += go * wr[i];
                dwr[i] += go * xr[i];
            }
        }
    }
    Ok((
        Tensor::new(vec![n, din], dx)?,
        Tensor::new(vec![dout, din], dw)?,
        Tensor::new(vec![dout], db)?,
    ))
}

fn check(op: &'static str, input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    input.expect_rank(op, "input", 2)?;
    weight.expect_rank(op, "weight", 2)?;
    let (n, din) = (input.dim(0), input.dim(1));
    let (dout, wdin) = (weight.dim(0), weight.dim(1));
    if din != wdin {
        return dim_err(op, format!("input features (axis 1) = {din} but weight in-features (axis 1) = {wdin}"));
    }
    if bias.shape() != [dout] {
        return dim_err(op, format!("bias shape {:?} != [{dout}]", bias.shape()));
    }
    Ok((n, din, dout))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn dense_examples() {
        let x = t(&[2, 2], &[1., 2., -3., 4.]);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[2])).unwrap(), x);

        let b = t(&[3], &[0.5, -1., 2.]);
        let y = dense(&x, &Tensor::zeros(&[3, 2]), &b).unwrap();
        assert_eq!(y.data(), &[0.5, -1., 2., 0.5, -1., 2.]);

        let y = dense(&t(&[1, 2], &[1., 2.]), &t(&[2, 2], &[1., 1., 1., -1.]), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[3., -1.]);
    }

    #[test]
    fn dense_shape_errors() {
        let x = Tensor::zeros(&[1, 3]);
        assert!(dense(&x, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2])).is_err());
        assert!(dense(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3])).is_err());
    }
}
