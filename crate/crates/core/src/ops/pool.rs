use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

fn pooled_dims(h: usize, w: usize, window: (usize, usize), stride: (usize, usize)) -> Result<(usize, usize)> {
    if window.0 == 0 || window.1 == 0 || stride.0 == 0 || stride.1 == 0 {
        return Err(dim_err(format!("pool window {window:?} / stride {stride:?} must be positive")));
    }
    if window.0 > h || window.1 > w {
        return Err(dim_err(format!("pool window {window:?} larger than input {h}x{w}")));
    }
    Ok(((h - window.0) / stride.0 + 1, (w - window.1) / stride.1 + 1))
}

/// Max pooling without padding. Returns the output and, for every output
/// element, the flat index into `input` that supplied the maximum.
pub fn maxpool2d<T: Real>(
    input: &Tensor<T>,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = input.dims4("maxpool2d input")?;
    let (oh, ow) = pooled_dims(h, w, window, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride.0 * w + ox * stride.1;
                for i in 0..window.0 {
                    for j in 0..window.1 {
                        let idx = base + (oy * stride.0 + i) * w + ox * stride.1 + j;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

pub fn maxpool2d_backward<T: Real>(grad_out: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(dim_err("maxpool2d_backward: grad_out does not match recorded indices"));
    }
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        gd[idx] += v;
    }
    Ok(g)
}

pub fn avgpool2d<T: Real>(input: &Tensor<T>, window: (usize, usize), stride: (usize, usize)) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("avgpool2d input")?;
    let (oh, ow) = pooled_dims(h, w, window, stride)?;
    let inv = T::one() / T::of_usize(window.0 * window.1);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for i in 0..window.0 {
                    let row = base + (oy * stride.0 + i) * w + ox * stride.1;
                    for j in 0..window.1 {
                        acc += x[row + j];
                    }
                }
                out.push(acc * inv);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn avgpool2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input_shape else {
        return Err(dim_err(format!("avgpool2d_backward: input shape {input_shape:?} is not rank 4")));
    };
    let (oh, ow) = pooled_dims(h, w, window, stride)?;
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(dim_err(format!("avgpool2d_backward: grad_out shape {:?}", grad_out.shape())));
    }
    let inv = T::one() / T::of_usize(window.0 * window.1);
    let go = grad_out.data();
    let mut g = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let v = go[(plane * oh + oy) * ow + ox] * inv;
                for i in 0..window.0 {
                    let row = base + (oy * stride.0 + i) * w + ox * stride.1;
                    for j in 0..window.1 {
                        g[row + j] += v;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), g)
}

/// Mean over the spatial axes: `[N,C,H,W] -> [N,C]`.
pub fn global_avgpool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims4("global_avgpool input")?;
    let inv = T::one() / T::of_usize(h * w);
    let out = input.data().chunks_exact(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
    Tensor::new(vec![n, c], out)
}

pub fn global_avgpool_backward<T: Real>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let &[n, c, h, w] = input_shape else {
        return Err(dim_err(format!("global_avgpool_backward: input shape {input_shape:?} is not rank 4")));
    };
    if grad_out.shape() != [n, c] {
        return Err(dim_err(format!("global_avgpool_backward: grad_out shape {:?}", grad_out.shape())));
    }
    let inv = T::one() / T::of_usize(h * w);
    let mut g = Vec::with_capacity(n * c * h * w);
    for &v in grad_out.data() {
        g.extend(std::iter::repeat_n(v * inv, h * w));
    }
    Tensor::new(input_shape.to_vec(), g)
}
