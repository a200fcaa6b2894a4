use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Row-wise softmax of `[N,K]` logits.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims2("softmax logits")?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean cross-entropy of softmax(logits) against class indices, with the
/// gradient `(softmax - onehot) / N`.
pub fn softmax_crossentropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [n, k] = logits.dims2("softmax_crossentropy logits")?;
    if labels.len() != n {
        return Err(Error::Validation(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Validation(format!("label {bad} outside [0,{k})")));
    }
    let inv_n = T::one() / T::of_usize(n);
    let mut grad = logits.data().to_vec();
    let mut loss = T::zero();
    for (row, &label) in grad.chunks_exact_mut(k).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
        loss += lse - row[label];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_n;
        }
        row[label] -= inv_n;
    }
    Ok((loss * inv_n, Tensor::new(vec![n, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits() {
        let l = Tensor::<f64>::zeros(&[1, 5]);
        let (loss, _) = softmax_crossentropy(&l, &[3]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!((loss - 1.60944).abs() < 1e-5);
    }

    #[test]
    fn confident_logit() {
        let l = Tensor::<f64>::new(vec![1, 3], vec![100.0, 0.0, 0.0]).unwrap();
        let (loss, _) = softmax_crossentropy(&l, &[0]).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn label_out_of_range() {
        let l = Tensor::<f32>::zeros(&[1, 3]);
        assert!(matches!(softmax_crossentropy(&l, &[3]), Err(Error::Validation(_))));
    }

    /// Compensated summation of exp terms as the high-precision reference.
    fn kahan_ce(row: &[f64], label: usize) -> f64 {
        let m = row.iter().copied().fold(f64::MIN, f64::max);
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for &v in row {
            let y = (v - m).exp() - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s.ln() + m - row[label]
    }

    #[test]
    fn matches_high_precision_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, k) = (6, 5);
        let l = Tensor::<f64>::from_fn(&[n, k], |_| rng.gen_range(-20.0..20.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let (loss, grad) = softmax_crossentropy(&l, &labels).unwrap();
        let oracle = (0..n).map(|r| kahan_ce(&l.data()[r * k..][..k], labels[r])).sum::<f64>() / n as f64;
        assert!((loss - oracle).abs() < 1e-8);
        let p = softmax(&l).unwrap();
        for r in 0..n {
            let row_sum: f64 = p.data()[r * k..][..k].iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-6);
            let gsum: f64 = grad.data()[r * k..][..k].iter().sum();
            assert!(gsum.abs() < 1e-12);
        }
    }
}
