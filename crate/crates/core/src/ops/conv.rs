use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::tensor::{Real, Tensor};

/// Stride and zero padding of a 2-D convolution, as (rows, cols).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Default for Conv2dGeometry {
    fn default() -> Self {
        Self { stride: (1, 1), padding: (0, 0) }
    }
}

impl Conv2dGeometry {
    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self { stride, padding }
    }

    /// Padding that keeps the spatial size for odd kernels at stride 1.
    pub fn same(kernel: (usize, usize)) -> Self {
        Self { stride: (1, 1), padding: (kernel.0 / 2, kernel.1 / 2) }
    }

    pub fn output_size(&self, input: (usize, usize), kernel: (usize, usize)) -> Result<(usize, usize)> {
        let h = out_len(input.0, kernel.0, self.stride.0, self.padding.0).ok_or_else(|| {
            dim_err(format!("kernel height {} exceeds padded input height {}+2*{}", kernel.0, input.0, self.padding.0))
        })?;
        let w = out_len(input.1, kernel.1, self.stride.1, self.padding.1).ok_or_else(|| {
            dim_err(format!("kernel width {} exceeds padded input width {}+2*{}", kernel.1, input.1, self.padding.1))
        })?;
        Ok((h, w))
    }
}

fn out_len(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if s == 0 || k == 0 || k > n + 2 * p {
        None
    } else {
        Some((n + 2 * p - k) / s + 1)
    }
}

/// Range of output columns `o` for which `o*s + k - p` lands inside `[0, n)`.
#[inline]
fn valid_range(out: usize, n: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    // o*s + k - p <= n-1  <=>  o <= (n-1+p-k)/s
    let hi = if n + p > k { ((n - 1 + p - k) / s + 1).min(out) } else { 0 };
    (lo, hi.max(lo))
}

struct Shapes {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn check_shapes<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, geom: Conv2dGeometry) -> Result<Shapes> {
    let [n, cin, h, w] = input.dims4("conv2d input")?;
    let [cout, kcin, kh, kw] = kernel.dims4("conv2d kernel")?;
    if kcin != cin {
        return Err(dim_err(format!("conv2d channel axis: input has {cin} channels, kernel expects {kcin}")));
    }
    let (oh, ow) = geom.output_size((h, w), (kh, kw))?;
    Ok(Shapes { n, cin, h, w, cout, kh, kw, oh, ow })
}

/// Direct 2-D cross-correlation with zero padding.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: Conv2dGeometry,
) -> Result<Tensor<T>> {
    let s = check_shapes(input, kernel, geom)?;
    if let Some(b) = bias {
        if b.shape() != [s.cout] {
            return Err(dim_err(format!("conv2d bias: expected [{}], got {:?}", s.cout, b.shape())));
        }
    }
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![T::zero(); s.n * s.cout * s.oh * s.ow];
    let plane = s.oh * s.ow;
    out.par_chunks_mut(s.cout * plane).enumerate().for_each(|(n, sample)| {
        for co in 0..s.cout {
            let o = &mut sample[co * plane..][..plane];
            if let Some(b) = bias {
                let bv = b.data()[co];
                o.iter_mut().for_each(|v| *v = bv);
            }
            for ci in 0..s.cin {
                let xin = &x[(n * s.cin + ci) * s.h * s.w..][..s.h * s.w];
                for ki in 0..s.kh {
                    let (oh_lo, oh_hi) = valid_range(s.oh, s.h, ki, sh, ph);
                    for kj in 0..s.kw {
                        let wv = k[((co * s.cin + ci) * s.kh + ki) * s.kw + kj];
                        if wv == T::zero() {
                            continue;
                        }
                        let (ow_lo, ow_hi) = valid_range(s.ow, s.w, kj, sw, pw);
                        for oy in oh_lo..oh_hi {
                            let iy = oy * sh + ki - ph;
                            let row = &xin[iy * s.w..][..s.w];
                            let orow = &mut o[oy * s.ow..][..s.ow];
                            for ox in ow_lo..ow_hi {
                                orow[ox] += wv * row[ox * sw + kj - pw];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![s.n, s.cout, s.oh, s.ow], out)
}

/// Gradients of a 2-D convolution.
#[derive(Debug, Clone)]
pub struct Conv2dGrads<T: Real> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: Conv2dGeometry,
) -> Result<Conv2dGrads<T>> {
    let s = check_shapes(input, kernel, geom)?;
    let expected = [s.n, s.cout, s.oh, s.ow];
    if grad_out.shape() != expected {
        return Err(dim_err(format!(
            "conv2d_backward: grad_out shape {:?} differs from forward output {expected:?}",
            grad_out.shape()
        )));
    }
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let x = input.data();
    let k = kernel.data();
    let go = grad_out.data();
    let plane = s.oh * s.ow;
    let ksize = s.kh * s.kw;
    // Samples own disjoint slices of the input gradient and output channels
    // own disjoint slices of the kernel gradient, so both parallelise without
    // changing the summation order.
    let mut gx = vec![T::zero(); x.len()];
    gx.par_chunks_mut(s.cin * s.h * s.w).enumerate().for_each(|(n, gxs)| {
        for co in 0..s.cout {
            let g = &go[(n * s.cout + co) * plane..][..plane];
            for ci in 0..s.cin {
                let gxc = &mut gxs[ci * s.h * s.w..][..s.h * s.w];
                for ki in 0..s.kh {
                    let (oh_lo, oh_hi) = valid_range(s.oh, s.h, ki, sh, ph);
                    for kj in 0..s.kw {
                        let wv = k[((co * s.cin + ci) * s.kh + ki) * s.kw + kj];
                        let (ow_lo, ow_hi) = valid_range(s.ow, s.w, kj, sw, pw);
                        for oy in oh_lo..oh_hi {
                            let iy = oy * sh + ki - ph;
                            let grow = &g[oy * s.ow..][..s.ow];
                            let xrow = &mut gxc[iy * s.w..][..s.w];
                            for ox in ow_lo..ow_hi {
                                xrow[ox * sw + kj - pw] += grow[ox] * wv;
                            }
                        }
                    }
                }
            }
        }
    });
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); s.cout];
    gk.par_chunks_mut(s.cin * ksize).zip(gb.par_iter_mut()).enumerate().for_each(|(co, (gkc, gbc))| {
        for n in 0..s.n {
            let g = &go[(n * s.cout + co) * plane..][..plane];
            *gbc += g.iter().copied().sum();
            for ci in 0..s.cin {
                let xin = &x[(n * s.cin + ci) * s.h * s.w..][..s.h * s.w];
                for ki in 0..s.kh {
                    let (oh_lo, oh_hi) = valid_range(s.oh, s.h, ki, sh, ph);
                    for kj in 0..s.kw {
                        let (ow_lo, ow_hi) = valid_range(s.ow, s.w, kj, sw, pw);
                        let mut acc = T::zero();
                        for oy in oh_lo..oh_hi {
                            let iy = oy * sh + ki - ph;
                            let grow = &g[oy * s.ow..][..s.ow];
                            let xrow = &xin[iy * s.w..][..s.w];
                            for ox in ow_lo..ow_hi {
                                acc += grow[ox] * xrow[ox * sw + kj - pw];
                            }
                        }
                        gkc[(ci * s.kh + ki) * s.kw + kj] += acc;
                    }
                }
            }
        }
    });
    Ok(Conv2dGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![s.cout], gb)?,
    })
}
