use super::{Scalar, Tensor};
use crate::error::{Axis, Error, Result};

/// Winning input positions recorded by [`max_pool2d_forward`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: [usize; 3],
    output_shape: [usize; 3],
    /// Flat index into the input for every output cell.
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }
}

/// 2×2 max pooling with stride 2. A trailing odd row or column is dropped.
/// Ties go to the first element of the window in row-major order.
pub fn max_pool2d_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    const OP: &str = "max_pool2d_forward";
    let (c, h, w) = input.dims3(OP)?;
    if h < 2 {
        return Err(Error::dim(OP, Axis::Height, 2, h));
    }
    if w < 2 {
        return Err(Error::dim(OP, Axis::Width, 2, w));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let top = base + 2 * y * w + 2 * xo;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::from_vec(&[c, oh, ow], out)?,
        PoolIndices {
            input_shape: [c, h, w],
            output_shape: [c, oh, ow],
            argmax,
        },
    ))
}

/// Routes each output gradient to the input position that won its window.
pub fn max_pool2d_backward<T: Scalar>(
    indices: &PoolIndices,
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    const OP: &str = "max_pool2d_backward";
    let (c, h, w) = grad_output.dims3(OP)?;
    let [ec, eh, ew] = indices.output_shape;
    if c != ec {
        return Err(Error::dim(OP, Axis::Channels, ec, c));
    }
    if h != eh {
        return Err(Error::dim(OP, Axis::Height, eh, h));
    }
    if w != ew {
        return Err(Error::dim(OP, Axis::Width, ew, w));
    }
    let mut grad = Tensor::zeros(&indices.input_shape);
    let gi = grad.data_mut();
    for (&idx, &g) in indices.argmax.iter().zip(grad_output.data()) {
        gi[idx] += g;
    }
    Ok(grad)
}
