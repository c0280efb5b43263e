use super::{LayerGrad, Scalar, Tensor};
use crate::error::{Axis, Error, Result};

fn dense_dims<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<(usize, usize)> {
    let n = input.dims1(op)?;
    match weights.shape()[..] {
        [m, wn] if wn == n => Ok((m, n)),
        [_, wn] => Err(Error::dim(op, Axis::Features, n, wn)),
        _ => Err(Error::dim(op, Axis::Rank, 2, weights.rank())),
    }
}

/// `weights · input + bias`.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (m, n) = dense_dims("dense_forward", input, weights)?;
    let nb = bias.dims1("dense_forward")?;
    if nb != m {
        return Err(Error::dim("dense_forward", Axis::Features, m, nb));
    }
    let x = input.data();
    let w = weights.data();
    let out = (0..m)
        .map(|i| {
            let row = &w[i * n..(i + 1) * n];
            row.iter()
                .zip(x)
                .fold(bias.data()[i], |acc, (&a, &b)| acc + a * b)
        })
        .collect();
    Tensor::from_vec(&[m], out)
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<LayerGrad<T>> {
    let (m, n) = dense_dims("dense_backward", input, weights)?;
    let gm = grad_output.dims1("dense_backward")?;
    if gm != m {
        return Err(Error::dim("dense_backward", Axis::Features, m, gm));
    }
    let x = input.data();
    let w = weights.data();
    let g = grad_output.data();
    let mut grad_w = vec![T::zero(); m * n];
    let mut grad_x = vec![T::zero(); n];
    for i in 0..m {
        let gi = g[i];
        if gi == T::zero() {
            continue;
        }
        let row = &w[i * n..(i + 1) * n];
        let grow = &mut grad_w[i * n..(i + 1) * n];
        for j in 0..n {
            grow[j] = gi * x[j];
            grad_x[j] += gi * row[j];
        }
    }
    Ok(LayerGrad {
        grad_input: Tensor::from_vec(&[n], grad_x)?,
        grad_params: vec![
            Tensor::from_vec(&[m, n], grad_w)?,
            Tensor::from_vec(&[m], g.to_vec())?,
        ],
    })
}
