//! Occupancy-gated convolution.
//!
//! Given features `X [N,C,H,W]` and a binary mask `M [N,1,H,W]`:
//!
//! ```text
//! X_m   = X * M                      (mask broadcast over channels)
//! Y_raw = conv(X_m, W)
//! D     = conv(M, ones[1,1,kh,kw])   (valid cells per receptive field)
//! Y     = Y_raw * K/D + b   where D > 0
//!       = 0                 where D = 0
//! M_out = [D > 0]
//! ```
//!
//! `K` is the number of kernel taps that land inside the unpadded input,
//! i.e. `kh*kw` everywhere except receptive fields that overlap zero padding.
//! With that choice an all-ones mask reproduces a plain convolution exactly,
//! padding or not. With compensation disabled the `K/D` factor is dropped but
//! the `D = 0` zeroing and the mask update are kept. The bias is added after
//! scaling.

use crate::error::{dim_err, Error, Result};
use crate::ops::norm::BatchNormCache;
use crate::ops::{
    avgpool2d, avgpool2d_backward, batchnorm2d, batchnorm2d_backward, conv2d, conv2d_backward, maxpool2d, relu,
    relu_backward, Conv2dGeometry, Mode, RunningStats, BN_EPSILON, BN_MOMENTUM,
};
use crate::tensor::{Real, Tensor};

/// Features paired with a single-channel binary validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedFeature<T: Real> {
    pub features: Tensor<T>,
    pub mask: Tensor<T>,
}

impl<T: Real> MaskedFeature<T> {
    pub fn new(features: Tensor<T>, mask: Tensor<T>) -> Result<Self> {
        let mf = Self { features, mask };
        mf.validate()?;
        Ok(mf)
    }

    /// All-ones mask over the given features.
    pub fn dense(features: Tensor<T>) -> Result<Self> {
        let [n, _, h, w] = features.dims4("features")?;
        Self::new(features, Tensor::ones(&[n, 1, h, w]))
    }

    pub fn validate(&self) -> Result<()> {
        let [n, _, h, w] = self.features.dims4("masked features")?;
        if self.mask.shape() != [n, 1, h, w] {
            return Err(dim_err(format!(
                "mask shape {:?} does not match features {:?} (expected [{n},1,{h},{w}])",
                self.mask.shape(),
                self.features.shape()
            )));
        }
        if let Some(v) = self.mask.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
            return Err(Error::Validation(format!("mask value {v} is not 0 or 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OgConvParams<T: Real> {
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub geometry: Conv2dGeometry,
    pub compensation: bool,
}

impl<T: Real> OgConvParams<T> {
    pub fn kernel_hw(&self) -> (usize, usize) {
        (self.kernel.shape()[2], self.kernel.shape()[3])
    }

    pub fn kernel_area(&self) -> usize {
        let (kh, kw) = self.kernel_hw();
        kh * kw
    }
}

#[derive(Debug, Clone)]
pub struct OgConvCache<T: Real> {
    masked_input: Tensor<T>,
    input_mask: Tensor<T>,
    /// Per-position output scale: `K/D` (or 1) where `D > 0`, else 0.
    scale: Vec<T>,
    out_shape: [usize; 4],
}

/// Occupancy count `D` of every receptive field, `[N,1,H',W']`.
pub fn occupancy_count<T: Real>(mask: &Tensor<T>, kernel: (usize, usize), geom: Conv2dGeometry) -> Result<Tensor<T>> {
    conv2d(mask, &Tensor::ones(&[1, 1, kernel.0, kernel.1]), None, geom)
}

pub fn ogconv_forward<T: Real>(
    input: &MaskedFeature<T>,
    params: &OgConvParams<T>,
) -> Result<(MaskedFeature<T>, OgConvCache<T>)> {
    input.validate()?;
    let [n, c, h, w] = input.features.dims4("ogconv input")?;
    let mut masked = input.features.clone();
    let md = input.mask.data();
    for (i, chunk) in masked.data_mut().chunks_exact_mut(h * w).enumerate() {
        let m = &md[(i / c) * h * w..][..h * w];
        chunk.iter_mut().zip(m).for_each(|(x, &g)| *x *= g);
    }
    let raw = conv2d(&masked, &params.kernel, None, params.geometry)?;
    let [_, cout, oh, ow] = raw.dims4("ogconv output")?;
    let count = occupancy_count(&input.mask, params.kernel_hw(), params.geometry)?;
    let taps = occupancy_count(&Tensor::<T>::ones(&[1, 1, h, w]), params.kernel_hw(), params.geometry)?;
    let plane = oh * ow;
    let scale: Vec<T> = count
        .data()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d > T::zero() {
                if params.compensation {
                    taps.data()[i % plane] / d
                } else {
                    T::one()
                }
            } else {
                T::zero()
            }
        })
        .collect();
    let mask_out: Vec<T> = count.data().iter().map(|&d| if d > T::zero() { T::one() } else { T::zero() }).collect();

    let mut out = raw.into_data();
    for b in 0..n {
        let s = &scale[b * plane..][..plane];
        for co in 0..cout {
            let bias = params.bias.as_ref().map_or(T::zero(), |t| t.data()[co]);
            let o = &mut out[(b * cout + co) * plane..][..plane];
            for (v, &sc) in o.iter_mut().zip(s) {
                *v = if sc > T::zero() { *v * sc + bias } else { T::zero() };
            }
        }
    }
    let features = Tensor::new(vec![n, cout, oh, ow], out)?;
    let mask = Tensor::new(vec![n, 1, oh, ow], mask_out)?;
    Ok((
        MaskedFeature { features, mask },
        OgConvCache { masked_input: masked, input_mask: input.mask.clone(), scale, out_shape: [n, cout, oh, ow] },
    ))
}

#[derive(Debug, Clone)]
pub struct OgConvGrads<T: Real> {
    pub features: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// The mask and `D` are constants: gradients flow only through the scaled
/// convolution and the input gate.
pub fn ogconv_backward<T: Real>(
    grad_out: &Tensor<T>,
    cache: &OgConvCache<T>,
    params: &OgConvParams<T>,
) -> Result<OgConvGrads<T>> {
    if grad_out.shape() != cache.out_shape {
        return Err(dim_err(format!(
            "ogconv_backward: grad_out {:?} vs forward output {:?}",
            grad_out.shape(),
            cache.out_shape
        )));
    }
    let [n, cout, oh, ow] = cache.out_shape;
    let plane = oh * ow;
    let mut scaled = grad_out.data().to_vec();
    let mut gbias = vec![T::zero(); cout];
    for b in 0..n {
        let s = &cache.scale[b * plane..][..plane];
        for co in 0..cout {
            let g = &mut scaled[(b * cout + co) * plane..][..plane];
            for (v, &sc) in g.iter_mut().zip(s) {
                if sc > T::zero() {
                    gbias[co] += *v;
                }
                *v *= sc;
            }
        }
    }
    let scaled = Tensor::new(vec![n, cout, oh, ow], scaled)?;
    let g = conv2d_backward(&scaled, &cache.masked_input, &params.kernel, params.geometry)?;
    let [_, c, h, w] = cache.masked_input.dims4("ogconv input")?;
    let mut gx = g.input.into_data();
    let md = cache.input_mask.data();
    for (i, chunk) in gx.chunks_exact_mut(h * w).enumerate() {
        let m = &md[(i / c) * h * w..][..h * w];
        chunk.iter_mut().zip(m).for_each(|(x, &g)| *x *= g);
    }
    Ok(OgConvGrads {
        features: Tensor::new(vec![n, c, h, w], gx)?,
        kernel: g.kernel,
        bias: Tensor::new(vec![cout], gbias)?,
    })
}

/// Reference mask update computed with explicit loops: an output cell is
/// valid iff any input cell of its receptive field is valid.
pub fn mask_oracle<T: Real>(mask: &Tensor<T>, kernel: (usize, usize), geom: Conv2dGeometry) -> Result<Tensor<T>> {
    let [n, one, h, w] = mask.dims4("mask")?;
    if one != 1 {
        return Err(dim_err(format!("mask must have one channel, got {one}")));
    }
    let (oh, ow) = geom.output_size((h, w), kernel)?;
    let mut out = vec![T::zero(); n * oh * ow];
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut any = false;
                for ki in 0..kernel.0 {
                    for kj in 0..kernel.1 {
                        let iy = (oy * geom.stride.0 + ki) as isize - geom.padding.0 as isize;
                        let ix = (ox * geom.stride.1 + kj) as isize - geom.padding.1 as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            any |= mask.data()[(b * h + iy as usize) * w + ix as usize] != T::zero();
                        }
                    }
                }
                if any {
                    out[(b * oh + oy) * ow + ox] = T::one();
                }
            }
        }
    }
    Tensor::new(vec![n, 1, oh, ow], out)
}

/// OGConv followed by batch norm, ReLU and average pooling. Features at
/// positions the updated mask marks invalid are zeroed before pooling, and
/// the mask is carried through the pool by max pooling.
#[derive(Debug, Clone)]
pub struct OgConvBlock<T: Real> {
    pub conv: OgConvParams<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: RunningStats<T>,
    pub pool: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct OgConvBlockCache<T: Real> {
    conv: OgConvCache<T>,
    bn: BatchNormCache<T>,
    pre_relu: Tensor<T>,
    gate: Tensor<T>,
}

impl<T: Real> OgConvBlock<T> {
    pub fn forward(&mut self, input: &MaskedFeature<T>, mode: Mode) -> Result<(MaskedFeature<T>, OgConvBlockCache<T>)> {
        let mut stats = self.stats.clone();
        let out = self.forward_with_stats(input, mode, &mut stats)?;
        self.stats = stats;
        Ok(out)
    }

    /// Runs the block against externally held batch-norm statistics, so an
    /// inference pass can share the block immutably.
    pub fn forward_with_stats(
        &self,
        input: &MaskedFeature<T>,
        mode: Mode,
        stats: &mut RunningStats<T>,
    ) -> Result<(MaskedFeature<T>, OgConvBlockCache<T>)> {
        let (conv_out, conv_cache) = ogconv_forward(input, &self.conv)?;
        let (normed, bn_cache) =
            batchnorm2d(&conv_out.features, &self.gamma, &self.beta, stats, mode, BN_EPSILON, BN_MOMENTUM)?;
        let mut act = relu(&normed);
        gate_in_place(&mut act, &conv_out.mask);
        let features = avgpool2d(&act, self.pool, self.pool)?;
        let (mask, _) = maxpool2d(&conv_out.mask, self.pool, self.pool)?;
        Ok((
            MaskedFeature { features, mask },
            OgConvBlockCache { conv: conv_cache, bn: bn_cache, pre_relu: normed, gate: conv_out.mask },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the
    /// block's input features.
    pub fn backward(&mut self, grad_out: &Tensor<T>, cache: &OgConvBlockCache<T>) -> Result<Tensor<T>> {
        let (gx, _) = self.backward_detached(grad_out, cache)?;
        Ok(gx)
    }

    /// Like [`backward`](Self::backward) but also returns this call's
    /// parameter gradients: `(input, [kernel, bias, gamma, beta])`.
    pub fn backward_detached(
        &mut self,
        grad_out: &Tensor<T>,
        cache: &OgConvBlockCache<T>,
    ) -> Result<(Tensor<T>, [Tensor<T>; 4])> {
        let mut g = avgpool2d_backward(grad_out, cache.pre_relu.shape(), self.pool, self.pool)?;
        gate_in_place(&mut g, &cache.gate);
        let g = relu_backward(&g, &cache.pre_relu)?;
        let (g, ggamma, gbeta) = batchnorm2d_backward(&g, &self.gamma, &cache.bn)?;
        let cg = ogconv_backward(&g, &cache.conv, &self.conv)?;
        self.conv.kernel.accumulate_grad(cg.kernel.data());
        if let Some(b) = self.conv.bias.as_mut() {
            b.accumulate_grad(cg.bias.data());
        }
        self.gamma.accumulate_grad(ggamma.data());
        self.beta.accumulate_grad(gbeta.data());
        Ok((cg.features, [cg.kernel, cg.bias, ggamma, gbeta]))
    }
}

fn gate_in_place<T: Real>(x: &mut Tensor<T>, mask: &Tensor<T>) {
    let [_, c, h, w] = x.dims4("gate").expect("rank 4");
    let md = mask.data();
    for (i, chunk) in x.data_mut().chunks_exact_mut(h * w).enumerate() {
        let m = &md[(i / c) * h * w..][..h * w];
        chunk.iter_mut().zip(m).for_each(|(v, &g)| *v *= g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, DEFAULT_EPSILON};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(rng: &mut ChaCha8Rng, density: f64) -> (MaskedFeature<f64>, OgConvParams<f64>) {
        let (n, c, h, w, cout) = (2, 2, 6, 7, 3);
        let features = Tensor::from_fn(&[n, c, h, w], |_| rng.gen_range(-1.0..1.0));
        let mask = Tensor::from_fn(&[n, 1, h, w], |_| if rng.gen_bool(density) { 1.0 } else { 0.0 });
        let params = OgConvParams {
            kernel: Tensor::from_fn(&[cout, c, 3, 3], |_| rng.gen_range(-1.0..1.0)),
            bias: Some(Tensor::from_fn(&[cout], |_| rng.gen_range(-1.0..1.0))),
            geometry: Conv2dGeometry::same((3, 3)),
            compensation: true,
        };
        (MaskedFeature::new(features, mask).unwrap(), params)
    }

    #[test]
    fn dense_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (mf, p) = random_case(&mut rng, 1.0);
        for geom in [Conv2dGeometry::same((3, 3)), Conv2dGeometry::default(), Conv2dGeometry::new((2, 1), (2, 0))] {
            let p = OgConvParams { geometry: geom, ..p.clone() };
            let (out, cache) = ogconv_forward(&mf, &p).unwrap();
            let plain = conv2d(&mf.features, &p.kernel, p.bias.as_ref(), geom).unwrap();
            assert!(out.features.max_abs_diff(&plain) < 1e-12);
            assert!(out.mask.data().iter().all(|&m| m == 1.0));
            let go = Tensor::from_fn(plain.shape(), |i| (i as f64 * 0.37).sin());
            let a = ogconv_backward(&go, &cache, &p).unwrap();
            let b = conv2d_backward(&go, &mf.features, &p.kernel, geom).unwrap();
            assert!(a.features.max_abs_diff(&b.input) < 1e-12);
            assert!(a.kernel.max_abs_diff(&b.kernel) < 1e-12);
            assert!(a.bias.max_abs_diff(&b.bias) < 1e-12);
        }
    }

    #[test]
    fn all_zero_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let (mf, p) = random_case(&mut rng, 0.0);
        let (out, cache) = ogconv_forward(&mf, &p).unwrap();
        assert!(out.features.data().iter().all(|&v| v == 0.0));
        assert!(out.mask.data().iter().all(|&v| v == 0.0));
        let g = ogconv_backward(&Tensor::ones(out.features.shape()), &cache, &p).unwrap();
        assert!(g.features.data().iter().chain(g.kernel.data()).chain(g.bias.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn constant_input_completion() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for c in [-2.0f64, -1.0, 0.5, 2.0] {
            let mask = Tensor::from_fn(&[1, 1, 8, 8], |_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
            let mf = MaskedFeature::new(Tensor::full(&[1, 1, 8, 8], c), mask).unwrap();
            let p = OgConvParams {
                kernel: Tensor::ones(&[1, 1, 3, 3]),
                bias: None,
                geometry: Conv2dGeometry::default(),
                compensation: true,
            };
            let (out, _) = ogconv_forward(&mf, &p).unwrap();
            for (&v, &m) in out.features.data().iter().zip(out.mask.data()) {
                if m == 1.0 {
                    assert!((v - c * 9.0).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn single_bit_mask_oracle() {
        let mut m = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        m.data_mut()[0] = 1.0;
        let o = mask_oracle(&m, (3, 3), Conv2dGeometry::same((3, 3))).unwrap();
        let expected: Vec<f64> = (0..25).map(|i| if i / 5 < 2 && i % 5 < 2 { 1.0 } else { 0.0 }).collect();
        assert_eq!(o.data(), &expected[..]);
        m.data_mut()[0] = 0.0;
        m.data_mut()[12] = 1.0;
        let o = mask_oracle(&m, (3, 3), Conv2dGeometry::same((3, 3))).unwrap();
        assert_eq!(o.sum(), 9.0);
    }

    #[test]
    fn rejects_non_binary_mask() {
        let f = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        let mut m = Tensor::<f32>::ones(&[1, 1, 3, 3]);
        m.data_mut()[4] = 0.5;
        assert!(matches!(MaskedFeature::new(f.clone(), m), Err(Error::Validation(_))));
        assert!(MaskedFeature::new(f, Tensor::ones(&[1, 2, 3, 3])).is_err());
    }

    #[test]
    fn compensation_toggle() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let (mf, p) = random_case(&mut rng, 0.4);
        let off = OgConvParams { compensation: false, ..p.clone() };
        let (a, _) = ogconv_forward(&mf, &p).unwrap();
        let (b, _) = ogconv_forward(&mf, &off).unwrap();
        assert_eq!(a.mask, b.mask);
        assert!(a.features.max_abs_diff(&b.features) > 1e-6);
    }

    #[test]
    fn gradient_sparse_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let (mf, p) = random_case(&mut rng, 0.4);
        let (out, cache) = ogconv_forward(&mf, &p).unwrap();
        let weights = Tensor::<f64>::from_fn(out.features.shape(), |_| rng.gen_range(-1.0..1.0));
        let g = ogconv_backward(&weights, &cache, &p).unwrap();
        let loss = |x: &[f64]| -> crate::Result<f64> {
            let f = Tensor::new(mf.features.shape().to_vec(), x.to_vec())?;
            let (o, _) = ogconv_forward(&MaskedFeature::new(f, mf.mask.clone())?, &p)?;
            Ok(o.features.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
        };
        let r = grad_check(loss, mf.features.data(), g.features.data(), DEFAULT_EPSILON).unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
        let kloss = |k: &[f64]| -> crate::Result<f64> {
            let pk = OgConvParams { kernel: Tensor::new(p.kernel.shape().to_vec(), k.to_vec())?, ..p.clone() };
            let (o, _) = ogconv_forward(&mf, &pk)?;
            Ok(o.features.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
        };
        let r = grad_check(kloss, p.kernel.data(), g.kernel.data(), DEFAULT_EPSILON).unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
    }

    fn block(rng: &mut ChaCha8Rng, cin: usize, cout: usize, pool: (usize, usize)) -> OgConvBlock<f64> {
        OgConvBlock {
            conv: OgConvParams {
                kernel: Tensor::from_fn(&[cout, cin, 3, 3], |_| rng.gen_range(-1.0..1.0)).into_param(),
                bias: Some(Tensor::from_fn(&[cout], |_| rng.gen_range(-0.5..0.5)).into_param()),
                geometry: Conv2dGeometry::same((3, 3)),
                compensation: true,
            },
            gamma: Tensor::from_fn(&[cout], |_| rng.gen_range(0.5..1.5)).into_param(),
            beta: Tensor::from_fn(&[cout], |_| rng.gen_range(-0.5..0.5)).into_param(),
            stats: RunningStats::new(cout),
            pool,
        }
    }

    #[test]
    fn block_with_unit_pool_is_conv_bn_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let (mf, _) = random_case(&mut rng, 1.0);
        let mut b = block(&mut rng, 2, 3, (1, 1));
        let (out, _) = b.forward(&mf, Mode::Train).unwrap();
        let (conv_out, _) = ogconv_forward(&mf, &b.conv).unwrap();
        let mut st = RunningStats::new(3);
        let (bn, _) =
            batchnorm2d(&conv_out.features, &b.gamma, &b.beta, &mut st, Mode::Train, BN_EPSILON, BN_MOMENTUM).unwrap();
        assert!(out.features.max_abs_diff(&relu(&bn)) < 1e-12);
    }

    #[test]
    fn block_zero_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let (mf, _) = random_case(&mut rng, 0.0);
        let mut b = block(&mut rng, 2, 3, (2, 2));
        b.beta = Tensor::full(&[3], 1.0).into_param();
        let (out, _) = b.forward(&mf, Mode::Train).unwrap();
        assert!(out.features.data().iter().all(|&v| v == 0.0));
        assert!(out.mask.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let (mf, _) = random_case(&mut rng, 0.5);
        let mut b = block(&mut rng, 2, 3, (2, 2));
        let (out, cache) = b.forward(&mf, Mode::Train).unwrap();
        let weights = Tensor::<f64>::from_fn(out.features.shape(), |_| rng.gen_range(-1.0..1.0));
        let (gx, [gk, _, gg, _]) = b.backward_detached(&weights, &cache).unwrap();
        let template = b.clone();
        let eval = |blk: &mut OgConvBlock<f64>, x: &Tensor<f64>| -> crate::Result<f64> {
            let (o, _) = blk.forward(&MaskedFeature::new(x.clone(), mf.mask.clone())?, Mode::Train)?;
            Ok(o.features.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
        };
        let r = grad_check(
            |x| eval(&mut template.clone(), &Tensor::new(mf.features.shape().to_vec(), x.to_vec())?),
            mf.features.data(),
            gx.data(),
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-6, "input {r:?}");
        let r = grad_check(
            |k| {
                let mut blk = template.clone();
                blk.conv.kernel.data_mut().copy_from_slice(k);
                eval(&mut blk, &mf.features)
            },
            template.conv.kernel.data(),
            gk.data(),
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-6, "kernel {r:?}");
        let r = grad_check(
            |g| {
                let mut blk = template.clone();
                blk.gamma.data_mut().copy_from_slice(g);
                eval(&mut blk, &mf.features)
            },
            template.gamma.data(),
            gg.data(),
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-6, "gamma {r:?}");
    }

    proptest::proptest! {
        #[test]
        fn output_mask_matches_oracle_and_dense_is_unchanged_by_toggle(
            (h, w) in (3usize..9, 3usize..9),
            (stride, pad) in (1usize..3, 0usize..2),
            density in 0.0f64..1.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let geom = Conv2dGeometry::new((stride, stride), (pad, pad));
            let mask = Tensor::from_fn(&[1, 1, h, w], |_| if rng.gen_bool(density) { 1.0 } else { 0.0 });
            let x = Tensor::from_fn(&[1, 2, h, w], |_| rng.gen_range(-1.0..1.0));
            let mut params = OgConvParams {
                kernel: Tensor::from_fn(&[2, 2, 3, 3], |_| rng.gen_range(-1.0..1.0)),
                bias: Some(Tensor::from_fn(&[2], |_| rng.gen_range(-1.0..1.0))),
                geometry: geom,
                compensation: true,
            };
            let (y, _) = ogconv_forward(&MaskedFeature::new(x.clone(), mask.clone()).unwrap(), &params).unwrap();
            proptest::prop_assert_eq!(&y.mask, &mask_oracle(&mask, (3, 3), geom).unwrap());
            for (i, &v) in y.features.data().iter().enumerate() {
                if y.mask.data()[i % y.mask.len()] == 0.0 {
                    proptest::prop_assert_eq!(v, 0.0);
                }
            }
            let dense = MaskedFeature::dense(x).unwrap();
            let (on, _) = ogconv_forward(&dense, &params).unwrap();
            params.compensation = false;
            let (off, _) = ogconv_forward(&dense, &params).unwrap();
            proptest::prop_assert_eq!(on.features, off.features);
        }
    }
}
