use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU given the forward input; the subgradient at 0 is 0.
pub fn relu_backward<T: Real>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(dim_err(format!("relu_backward: grad_out {:?} vs input {:?}", grad_out.shape(), input.shape())));
    }
    let g =
        grad_out.data().iter().zip(input.data()).map(|(&g, &x)| if x > T::zero() { g } else { T::zero() }).collect();
    Tensor::new(input.shape().to_vec(), g)
}

/// `input [N,F_in] * weight^T [F_in,F_out] + bias`.
pub fn linear<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, fin] = input.dims2("linear input")?;
    let [fout, wfin] = weight.dims2("linear weight")?;
    if wfin != fin {
        return Err(dim_err(format!("linear feature axis: input has {fin}, weight expects {wfin}")));
    }
    if bias.shape() != [fout] {
        return Err(dim_err(format!("linear bias: expected [{fout}], got {:?}", bias.shape())));
    }
    let x = input.data();
    let w = weight.data();
    let mut out = Vec::with_capacity(n * fout);
    for r in 0..n {
        let row = &x[r * fin..][..fin];
        for o in 0..fout {
            let wr = &w[o * fin..][..fin];
            let dot: T = row.iter().zip(wr).map(|(&a, &b)| a * b).sum();
            out.push(dot + bias.data()[o]);
        }
    }
    Tensor::new(vec![n, fout], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, fin] = input.dims2("linear input")?;
    let [fout, _] = weight.dims2("linear weight")?;
    if grad_out.shape() != [n, fout] {
        return Err(dim_err(format!("linear_backward: grad_out shape {:?}", grad_out.shape())));
    }
    let x = input.data();
    let w = weight.data();
    let go = grad_out.data();
    let mut gx = vec![T::zero(); n * fin];
    let mut gw = vec![T::zero(); fout * fin];
    let mut gb = vec![T::zero(); fout];
    for r in 0..n {
        let xr = &x[r * fin..][..fin];
        let gxr = &mut gx[r * fin..][..fin];
        for o in 0..fout {
            let g = go[r * fout + o];
            if g == T::zero() {
                continue;
            }
            gb[o] += g;
            let wr = &w[o * fin..][..fin];
            let gwr = &mut gw[o * fin..][..fin];
            for i in 0..fin {
                gxr[i] += g * wr[i];
                gwr[i] += g * xr[i];
            }
        }
    }
    Ok((Tensor::new(vec![n, fin], gx)?, Tensor::new(vec![fout, fin], gw)?, Tensor::new(vec![fout], gb)?))
}
