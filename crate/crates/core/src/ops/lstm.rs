//! LSTM cell and bidirectional LSTM with backpropagation through time.
//!
//! Gate rows are laid out as (input, forget, candidate, output), each block
//! `H` rows tall, in `w_ih [4H,F]`, `w_hh [4H,H]` and a single `bias [4H]`.

use crate::error::{dim_err, Error, Result};
use crate::ops::dense::{linear, linear_backward};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T: Real> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LstmParams<T> {
    pub fn zeros(input_size: usize, hidden: usize) -> Self {
        Self {
            w_ih: Tensor::zeros(&[4 * hidden, input_size]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.shape()[1]
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden_size();
        if self.w_hh.shape() != [4 * h, h] || self.w_ih.shape()[0] != 4 * h || self.bias.shape() != [4 * h] {
            return Err(dim_err(format!(
                "lstm params: w_ih {:?}, w_hh {:?}, bias {:?} disagree on hidden size",
                self.w_ih.shape(),
                self.w_hh.shape(),
                self.bias.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LstmGrads<T: Real> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LstmGrads<T> {
    fn zeros_like(p: &LstmParams<T>) -> Self {
        Self {
            w_ih: Tensor::zeros(p.w_ih.shape()),
            w_hh: Tensor::zeros(p.w_hh.shape()),
            bias: Tensor::zeros(p.bias.shape()),
        }
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in [(&mut self.w_ih, &other.w_ih), (&mut self.w_hh, &other.w_hh), (&mut self.bias, &other.bias)] {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmStepCache<T: Real> {
    x: Tensor<T>,
    h_prev: Tensor<T>,
    c_prev: Tensor<T>,
    /// Activated gates `[N,4H]`.
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn lstm_cell<T: Real>(
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
    params: &LstmParams<T>,
) -> Result<(Tensor<T>, Tensor<T>, LstmStepCache<T>)> {
    params.validate()?;
    let hs = params.hidden_size();
    let [n, _] = x.dims2("lstm_cell input")?;
    if h_prev.shape() != [n, hs] || c_prev.shape() != [n, hs] {
        return Err(dim_err(format!(
            "lstm_cell state: expected [{n},{hs}], got h {:?} c {:?}",
            h_prev.shape(),
            c_prev.shape()
        )));
    }
    let zx = linear(x, &params.w_ih, &params.bias)?;
    let zh = linear(h_prev, &params.w_hh, &Tensor::zeros(&[4 * hs]))?;
    let mut gates: Vec<T> = zx.data().iter().zip(zh.data()).map(|(&a, &b)| a + b).collect();
    let mut h = vec![T::zero(); n * hs];
    let mut c = vec![T::zero(); n * hs];
    let mut tanh_c = vec![T::zero(); n * hs];
    for r in 0..n {
        let z = &mut gates[r * 4 * hs..][..4 * hs];
        for j in 0..hs {
            z[j] = sigmoid(z[j]);
            z[hs + j] = sigmoid(z[hs + j]);
            z[2 * hs + j] = z[2 * hs + j].tanh();
            z[3 * hs + j] = sigmoid(z[3 * hs + j]);
            let cv = z[hs + j] * c_prev.data()[r * hs + j] + z[j] * z[2 * hs + j];
            let tc = cv.tanh();
            c[r * hs + j] = cv;
            tanh_c[r * hs + j] = tc;
            h[r * hs + j] = z[3 * hs + j] * tc;
        }
    }
    let cache = LstmStepCache { x: x.clone(), h_prev: h_prev.clone(), c_prev: c_prev.clone(), gates, tanh_c };
    Ok((Tensor::new(vec![n, hs], h)?, Tensor::new(vec![n, hs], c)?, cache))
}

/// Gradients from one cell step.
#[derive(Debug, Clone)]
pub struct LstmCellGrads<T: Real> {
    pub x: Tensor<T>,
    pub h_prev: Tensor<T>,
    pub c_prev: Tensor<T>,
    pub params: LstmGrads<T>,
}

/// `grad_h`/`grad_c` are the total gradients arriving at this step's outputs.
pub fn lstm_cell_backward<T: Real>(
    grad_h: &Tensor<T>,
    grad_c: &Tensor<T>,
    cache: &LstmStepCache<T>,
    params: &LstmParams<T>,
) -> Result<LstmCellGrads<T>> {
    let hs = params.hidden_size();
    let n = cache.x.shape()[0];
    if grad_h.shape() != [n, hs] || grad_c.shape() != [n, hs] {
        return Err(dim_err("lstm_cell_backward: gradient shapes differ from cell state"));
    }
    let mut dz = vec![T::zero(); n * 4 * hs];
    let mut dc_prev = vec![T::zero(); n * hs];
    for r in 0..n {
        let z = &cache.gates[r * 4 * hs..][..4 * hs];
        let d = &mut dz[r * 4 * hs..][..4 * hs];
        for j in 0..hs {
            let k = r * hs + j;
            let (i, f, g, o) = (z[j], z[hs + j], z[2 * hs + j], z[3 * hs + j]);
            let tc = cache.tanh_c[k];
            let dh = grad_h.data()[k];
            let dc = grad_c.data()[k] + dh * o * (T::one() - tc * tc);
            d[j] = dc * g * i * (T::one() - i);
            d[hs + j] = dc * cache.c_prev.data()[k] * f * (T::one() - f);
            d[2 * hs + j] = dc * i * (T::one() - g * g);
            d[3 * hs + j] = dh * tc * o * (T::one() - o);
            dc_prev[k] = dc * f;
        }
    }
    let dz = Tensor::new(vec![n, 4 * hs], dz)?;
    let (gx, gw_ih, gb) = linear_backward(&dz, &cache.x, &params.w_ih)?;
    let (gh, gw_hh, _) = linear_backward(&dz, &cache.h_prev, &params.w_hh)?;
    Ok(LstmCellGrads {
        x: gx,
        h_prev: gh,
        c_prev: Tensor::new(vec![n, hs], dc_prev)?,
        params: LstmGrads { w_ih: gw_ih, w_hh: gw_hh, bias: gb },
    })
}

#[derive(Debug, Clone)]
pub struct BiLstmCache<T: Real> {
    fwd: Vec<LstmStepCache<T>>,
    /// Indexed by time step, not by processing order.
    bwd: Vec<LstmStepCache<T>>,
    n: usize,
    features: usize,
}

/// Runs `fwd` over `t = 0..T` and `bwd` over `t = T-1..0` on a sequence of
/// `[N,F]` steps, returning `[T,N,2H]` with the forward state in the first
/// `H` columns.
pub fn bilstm<T: Real>(
    sequence: &[Tensor<T>],
    fwd: &LstmParams<T>,
    bwd: &LstmParams<T>,
) -> Result<(Tensor<T>, BiLstmCache<T>)> {
    let steps = sequence.len();
    let Some(first) = sequence.first() else {
        return Err(Error::EmptySequence);
    };
    let [n, f] = first.dims2("bilstm step")?;
    if let Some(bad) = sequence.iter().find(|s| s.shape() != [n, f]) {
        return Err(dim_err(format!("bilstm: step shape {:?} differs from [{n},{f}]", bad.shape())));
    }
    let hs = fwd.hidden_size();
    if bwd.hidden_size() != hs {
        return Err(dim_err("bilstm: forward and backward hidden sizes differ"));
    }
    let mut out = vec![T::zero(); steps * n * 2 * hs];
    let mut write = |t: usize, h: &Tensor<T>, offset: usize| {
        for r in 0..n {
            out[(t * n + r) * 2 * hs + offset..][..hs].copy_from_slice(&h.data()[r * hs..][..hs]);
        }
    };
    let mut fwd_cache = Vec::with_capacity(steps);
    let (mut h, mut c) = (Tensor::zeros(&[n, hs]), Tensor::zeros(&[n, hs]));
    for t in 0..steps {
        let (h2, c2, cache) = lstm_cell(&sequence[t], &h, &c, fwd)?;
        write(t, &h2, 0);
        fwd_cache.push(cache);
        (h, c) = (h2, c2);
    }
    let mut bwd_cache = Vec::with_capacity(steps);
    let (mut h, mut c) = (Tensor::zeros(&[n, hs]), Tensor::zeros(&[n, hs]));
    for t in (0..steps).rev() {
        let (h2, c2, cache) = lstm_cell(&sequence[t], &h, &c, bwd)?;
        write(t, &h2, hs);
        bwd_cache.push(cache);
        (h, c) = (h2, c2);
    }
    bwd_cache.reverse();
    let out = Tensor::new(vec![steps, n, 2 * hs], out)?;
    Ok((out, BiLstmCache { fwd: fwd_cache, bwd: bwd_cache, n, features: f }))
}

/// Returns `(grad per step, grads_fwd, grads_bwd)`.
pub fn bilstm_backward<T: Real>(
    grad_out: &Tensor<T>,
    cache: &BiLstmCache<T>,
    fwd: &LstmParams<T>,
    bwd: &LstmParams<T>,
) -> Result<(Vec<Tensor<T>>, LstmGrads<T>, LstmGrads<T>)> {
    let steps = cache.fwd.len();
    let (n, f, hs) = (cache.n, cache.features, fwd.hidden_size());
    if grad_out.shape() != [steps, n, 2 * hs] {
        return Err(dim_err(format!("bilstm_backward: grad_out shape {:?}", grad_out.shape())));
    }
    let half = |t: usize, offset: usize| {
        let mut v = Vec::with_capacity(n * hs);
        for r in 0..n {
            v.extend_from_slice(&grad_out.data()[(t * n + r) * 2 * hs + offset..][..hs]);
        }
        Tensor::new(vec![n, hs], v).expect("half shape")
    };
    let mut gseq = vec![T::zero(); steps * n * f];
    let mut gf = LstmGrads::zeros_like(fwd);
    let mut gb = LstmGrads::zeros_like(bwd);

    let mut run = |order: &mut dyn Iterator<Item = usize>,
                   caches: &[LstmStepCache<T>],
                   params: &LstmParams<T>,
                   offset: usize,
                   acc: &mut LstmGrads<T>|
     -> Result<()> {
        let mut dh_next = Tensor::zeros(&[n, hs]);
        let mut dc_next = Tensor::zeros(&[n, hs]);
        for t in order {
            let mut dh = half(t, offset);
            dh.data_mut().iter_mut().zip(dh_next.data()).for_each(|(a, &b)| *a += b);
            let g = lstm_cell_backward(&dh, &dc_next, &caches[t], params)?;
            acc.add(&g.params);
            gseq[t * n * f..][..n * f].iter_mut().zip(g.x.data()).for_each(|(a, &b)| *a += b);
            dh_next = g.h_prev;
            dc_next = g.c_prev;
        }
        Ok(())
    };
    run(&mut (0..steps).rev(), &cache.fwd, fwd, 0, &mut gf)?;
    run(&mut (0..steps), &cache.bwd, bwd, hs, &mut gb)?;
    let steps_grad =
        gseq.chunks_exact(n * f).map(|c| Tensor::new(vec![n, f], c.to_vec())).collect::<Result<Vec<_>>>()?;
    Ok((steps_grad, gf, gb))
}
