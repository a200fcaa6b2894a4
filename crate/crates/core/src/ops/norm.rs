use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{Real, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel running mean/variance. `batches_tracked == 0` means the
/// statistics have never been estimated and infer mode refuses to run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T: Real> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub batches_tracked: u64,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![T::zero(); channels], var: vec![T::one(); channels], batches_tracked: 0 }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Real> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    shape: [usize; 4],
    mode: Mode,
}

/// Batch normalization over `(N, H, W)` for each channel of an `[N,C,H,W]` input.
pub fn batchnorm2d<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
    eps: f64,
    momentum: f64,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let [n, c, h, w] = input.dims4("batchnorm2d input")?;
    if gamma.shape() != [c] || beta.shape() != [c] || stats.channels() != c {
        return Err(dim_err(format!(
            "batchnorm2d: {c} channels but gamma {:?}, beta {:?}, stats {}",
            gamma.shape(),
            beta.shape(),
            stats.channels()
        )));
    }
    let eps = T::of_f64(eps);
    let hw = h * w;
    let m = n * hw;
    let x = input.data();
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            let inv_m = T::one() / T::of_usize(m);
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s += x[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
                }
                let mu = s * inv_m;
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &x[(b * c + ch) * hw..][..hw] {
                        sq += (v - mu) * (v - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = sq * inv_m;
            }
            let mom = T::of_f64(momentum);
            let unbias = if m > 1 { T::of_usize(m) / T::of_usize(m - 1) } else { T::one() };
            for ch in 0..c {
                stats.mean[ch] = (T::one() - mom) * stats.mean[ch] + mom * mean[ch];
                stats.var[ch] = (T::one() - mom) * stats.var[ch] + mom * var[ch] * unbias;
            }
            stats.batches_tracked += 1;
            (mean, var)
        }
        Mode::Infer => {
            if stats.batches_tracked == 0 {
                return Err(Error::State("batchnorm2d: running statistics are uninitialized".into()));
            }
            (stats.mean.clone(), stats.var.clone())
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut x_hat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in off..off + hw {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                x_hat[i] = xh;
                out[i] = g * xh + bt;
            }
        }
    }
    Ok((Tensor::new(vec![n, c, h, w], out)?, BatchNormCache { x_hat, inv_std, shape: [n, c, h, w], mode }))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = cache.shape;
    if grad_out.shape() != cache.shape {
        return Err(dim_err(format!("batchnorm2d_backward: grad_out shape {:?}", grad_out.shape())));
    }
    let hw = h * w;
    let m = T::of_usize(n * hw);
    let go = grad_out.data();
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                gb[ch] += go[i];
                gg[ch] += go[i] * cache.x_hat[i];
            }
        }
    }
    let mut gx = vec![T::zero(); go.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let g = gamma.data()[ch];
            let is = cache.inv_std[ch];
            for i in off..off + hw {
                gx[i] = match cache.mode {
                    // d/dx of gamma*x_hat with batch statistics
                    Mode::Train => g * is / m * (m * go[i] - gb[ch] - cache.x_hat[i] * gg[ch]),
                    Mode::Infer => g * is * go[i],
                };
            }
        }
    }
    Ok((Tensor::new(vec![n, c, h, w], gx)?, Tensor::new(vec![c], gg)?, Tensor::new(vec![c], gb)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(c: usize) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::ones(&[c]), Tensor::zeros(&[c]))
    }

    #[test]
    fn constant_channel_gives_beta() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 3, 3], |i| if (i / 9) % 2 == 0 { 3.0 } else { -1.0 });
        let gamma = Tensor::new(vec![2], vec![2.0, 0.5]).unwrap();
        let beta = Tensor::new(vec![2], vec![0.25, -0.75]).unwrap();
        let mut st = RunningStats::new(2);
        let (y, _) = batchnorm2d(&x, &gamma, &beta, &mut st, Mode::Train, BN_EPSILON, BN_MOMENTUM).unwrap();
        for (i, &v) in y.data().iter().enumerate() {
            let expected = if (i / 9) % 2 == 0 { 0.25 } else { -0.75 };
            assert_eq!(v, expected);
        }
    }

    #[test]
    fn standardized_batch_is_identity() {
        // mean 0, population variance 1
        let x = Tensor::<f64>::new(vec![4, 1, 1, 1], vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let (g, b) = unit(1);
        let mut st = RunningStats::new(1);
        let (y, _) = batchnorm2d(&x, &g, &b, &mut st, Mode::Train, BN_EPSILON, BN_MOMENTUM).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-4);
    }

    #[test]
    fn random_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::from_fn(&[8, 3, 5, 5], |_| rng.gen_range(-4.0..9.0));
        let (g, b) = unit(3);
        let mut st = RunningStats::new(3);
        let (y, _) = batchnorm2d(&x, &g, &b, &mut st, Mode::Train, BN_EPSILON, BN_MOMENTUM).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..8).flat_map(|n| y.data()[(n * 3 + ch) * 25..][..25].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert_eq!(st.batches_tracked, 1);
    }

    #[test]
    fn infer_requires_running_stats() {
        let x = Tensor::<f32>::ones(&[1, 2, 2, 2]);
        let g = Tensor::ones(&[2]);
        let b = Tensor::zeros(&[2]);
        let mut st = RunningStats::new(2);
        let err = batchnorm2d(&x, &g, &b, &mut st, Mode::Infer, BN_EPSILON, BN_MOMENTUM).unwrap_err();
        assert!(matches!(err, Error::State(_)));
        batchnorm2d(&x, &g, &b, &mut st, Mode::Train, BN_EPSILON, BN_MOMENTUM).unwrap();
        let before = st.clone();
        batchnorm2d(&x, &g, &b, &mut st, Mode::Infer, BN_EPSILON, BN_MOMENTUM).unwrap();
        assert_eq!(st, before);
    }

    #[test]
    fn gamma_length_checked() {
        let x = Tensor::<f32>::ones(&[1, 2, 2, 2]);
        let mut st = RunningStats::new(2);
        assert!(batchnorm2d(&x, &Tensor::ones(&[3]), &Tensor::zeros(&[2]), &mut st, Mode::Train, 1e-5, 0.1).is_err());
    }
}
