//! Double-precision gradient checks of every differentiable layer and of
//! the full network loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{grad_check, DEFAULT_EPSILON};
use crate::error::Result;
use crate::ingest::VoxelDims;
use crate::model::{BlockConfig, BranchConfig, ModelConfig, OgPcl, SequenceBatch};
use crate::ogconv::{MaskedFeature, OgConvBlock, OgConvParams};
use crate::ops::{
    batchnorm2d, batchnorm2d_backward, bilstm, bilstm_backward, conv2d, conv2d_backward, lstm_cell, lstm_cell_backward,
    softmax_crossentropy, Conv2dGeometry, LstmParams, Mode, RunningStats, BN_EPSILON, BN_MOMENTUM,
};
use crate::projection::{project, Reduction, View};
use crate::tensor::Tensor;

pub const LAYER_TOLERANCE: f64 = 1e-6;
pub const END_TO_END_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub max_relative_error: f64,
    /// Tensor holding the worst element.
    pub worst: String,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

type Loss<'a> = Box<dyn Fn(&[Tensor<f64>]) -> Result<f64> + 'a>;

/// Checks the analytic gradient of every listed tensor.
fn check(
    name: &'static str,
    tolerance: f64,
    inputs: Vec<(String, Tensor<f64>)>,
    analytic: Vec<Tensor<f64>>,
    loss: Loss<'_>,
) -> Result<SuiteResult> {
    let values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut worst = (0.0, String::new());
    for (i, ((label, t), g)) in inputs.iter().zip(&analytic).enumerate() {
        let r = grad_check(
            |x| {
                let mut v = values.clone();
                v[i].data_mut().copy_from_slice(x);
                loss(&v)
            },
            t.data(),
            g.data(),
            DEFAULT_EPSILON,
        )?;
        if r.max_relative_error >= worst.0 {
            worst = (r.max_relative_error, label.clone());
        }
    }
    Ok(SuiteResult { name, max_relative_error: worst.0, worst: worst.1, tolerance })
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn conv_case(rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let geom = Conv2dGeometry::new((1, 2), (1, 1));
    let x = rand_t(rng, &[2, 3, 6, 5]);
    let k = rand_t(rng, &[4, 3, 3, 3]);
    let b = rand_t(rng, &[4]);
    let w = rand_t(rng, conv2d(&x, &k, Some(&b), geom)?.shape());
    let g = conv2d_backward(&w, &x, &k, geom)?;
    let w2 = w.clone();
    check(
        "conv2d",
        LAYER_TOLERANCE,
        vec![("input".into(), x), ("kernel".into(), k), ("bias".into(), b)],
        vec![g.input, g.kernel, g.bias],
        Box::new(move |v| Ok(dot(&conv2d(&v[0], &v[1], Some(&v[2]), geom)?, &w2))),
    )
}

fn batchnorm_case(rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let x = rand_t(rng, &[3, 2, 4, 4]);
    let gamma = Tensor::from_fn(&[2], |_| rng.gen_range(0.5..1.5));
    let beta = rand_t(rng, &[2]);
    let run = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
        batchnorm2d(x, g, b, &mut RunningStats::new(2), Mode::Train, BN_EPSILON, BN_MOMENTUM)
    };
    let (y, cache) = run(&x, &gamma, &beta)?;
    let w = rand_t(rng, y.shape());
    let (gx, gg, gb) = batchnorm2d_backward(&w, &gamma, &cache)?;
    check(
        "batchnorm2d",
        LAYER_TOLERANCE,
        vec![("input".into(), x), ("gamma".into(), gamma), ("beta".into(), beta)],
        vec![gx, gg, gb],
        Box::new(move |v| Ok(dot(&run(&v[0], &v[1], &v[2])?.0, &w))),
    )
}

fn block_case(rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let x = rand_t(rng, &[2, 2, 6, 6]);
    let mask = Tensor::from_fn(&[2, 1, 6, 6], |_| if rng.gen_bool(0.35) { 1.0 } else { 0.0 });
    let block = OgConvBlock {
        conv: OgConvParams {
            kernel: rand_t(rng, &[3, 2, 3, 3]).into_param(),
            bias: Some(rand_t(rng, &[3]).into_param()),
            geometry: Conv2dGeometry::same((3, 3)),
            compensation: true,
        },
        gamma: Tensor::from_fn(&[3], |_| rng.gen_range(0.5..1.5)).into_param(),
        beta: rand_t(rng, &[3]).into_param(),
        stats: RunningStats::new(3),
        pool: (2, 2),
    };
    let input = MaskedFeature::new(x.clone(), mask.clone())?;
    let mut b = block.clone();
    let (y, cache) = b.forward(&input, Mode::Train)?;
    let w = rand_t(rng, y.features.shape());
    let (gx, [gk, gbias, gg, gbeta]) = b.backward_detached(&w, &cache)?;
    let loss = move |v: &[Tensor<f64>]| -> Result<f64> {
        let mut b = block.clone();
        b.conv.kernel = v[1].clone();
        b.conv.bias = Some(v[2].clone());
        b.gamma = v[3].clone();
        b.beta = v[4].clone();
        let (y, _) = b.forward(&MaskedFeature::new(v[0].clone(), mask.clone())?, Mode::Train)?;
        Ok(dot(&y.features, &w))
    };
    check(
        "ogconv_block",
        LAYER_TOLERANCE,
        vec![
            ("input".into(), x),
            ("kernel".into(), detached(&b.conv.kernel)),
            ("bias".into(), detached(b.conv.bias.as_ref().expect("bias"))),
            ("gamma".into(), detached(&b.gamma)),
            ("beta".into(), detached(&b.beta)),
        ],
        vec![gx, gk, gbias, gg, gbeta],
        Box::new(loss),
    )
}

fn detached(t: &Tensor<f64>) -> Tensor<f64> {
    Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("same shape")
}

fn lstm_params(rng: &mut ChaCha8Rng, f: usize, h: usize) -> LstmParams<f64> {
    LstmParams { w_ih: rand_t(rng, &[4 * h, f]), w_hh: rand_t(rng, &[4 * h, h]), bias: rand_t(rng, &[4 * h]) }
}

fn lstm_cell_case(rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let (n, f, h) = (2, 4, 5);
    let p = lstm_params(rng, f, h);
    let x = rand_t(rng, &[n, f]);
    let h0 = rand_t(rng, &[n, h]);
    let c0 = rand_t(rng, &[n, h]);
    let (wh, wc) = (rand_t(rng, &[n, h]), rand_t(rng, &[n, h]));
    let (_, _, cache) = lstm_cell(&x, &h0, &c0, &p)?;
    let g = lstm_cell_backward(&wh, &wc, &cache, &p)?;
    check(
        "lstm_cell",
        LAYER_TOLERANCE,
        vec![
            ("x".into(), x),
            ("h_prev".into(), h0),
            ("c_prev".into(), c0),
            ("w_ih".into(), p.w_ih.clone()),
            ("w_hh".into(), p.w_hh.clone()),
            ("bias".into(), p.bias.clone()),
        ],
        vec![g.x, g.h_prev, g.c_prev, g.params.w_ih, g.params.w_hh, g.params.bias],
        Box::new(move |v| {
            let p = LstmParams { w_ih: v[3].clone(), w_hh: v[4].clone(), bias: v[5].clone() };
            let (h, c, _) = lstm_cell(&v[0], &v[1], &v[2], &p)?;
            Ok(dot(&h, &wh) + dot(&c, &wc))
        }),
    )
}

fn bilstm_case(rng: &mut ChaCha8Rng) -> Result<SuiteResult> {
    let (t, n, f, h) = (3, 2, 4, 3);
    let fwd = lstm_params(rng, f, h);
    let bwd = lstm_params(rng, f, h);
    let seq = rand_t(rng, &[t, n, f]);
    let steps = |s: &Tensor<f64>| -> Result<Vec<Tensor<f64>>> {
        s.data().chunks_exact(n * f).map(|c| Tensor::new(vec![n, f], c.to_vec())).collect()
    };
    let (out, cache) = bilstm(&steps(&seq)?, &fwd, &bwd)?;
    let w = rand_t(rng, out.shape());
    let (gsteps, gf, gb) = bilstm_backward(&w, &cache, &fwd, &bwd)?;
    let gseq = Tensor::new(vec![t, n, f], gsteps.iter().flat_map(|g| g.data().to_vec()).collect())?;
    check(
        "bilstm",
        LAYER_TOLERANCE,
        vec![
            ("sequence".into(), seq),
            ("fwd.w_ih".into(), fwd.w_ih.clone()),
            ("fwd.w_hh".into(), fwd.w_hh.clone()),
            ("fwd.bias".into(), fwd.bias.clone()),
            ("bwd.w_ih".into(), bwd.w_ih.clone()),
            ("bwd.w_hh".into(), bwd.w_hh.clone()),
            ("bwd.bias".into(), bwd.bias.clone()),
        ],
        vec![gseq, gf.w_ih, gf.w_hh, gf.bias, gb.w_ih, gb.w_hh, gb.bias],
        Box::new(move |v| {
            let fwd = LstmParams { w_ih: v[1].clone(), w_hh: v[2].clone(), bias: v[3].clone() };
            let bwd = LstmParams { w_ih: v[4].clone(), w_hh: v[5].clone(), bias: v[6].clone() };
            Ok(dot(&bilstm(&steps(&v[0])?, &fwd, &bwd)?.0, &w))
        }),
    )
}

/// Small three-view network used by the end-to-end check.
pub fn toy_model_config(seed: u64) -> ModelConfig {
    let branch = |view| BranchConfig {
        view,
        blocks: vec![
            BlockConfig { out_channels: 3, kernel: (3, 3), pool: (1, 2) },
            BlockConfig { out_channels: 4, kernel: (3, 3), pool: (2, 2) },
        ],
        fc_out: 4,
        fc_relu: true,
    };
    ModelConfig {
        voxel_dims: VoxelDims { x: 4, y: 8, z: 8 },
        seq_len: 2,
        branches: View::ALL.into_iter().map(branch).collect(),
        hidden: 4,
        seed,
        ..Default::default()
    }
}

fn model_case(rng: &mut ChaCha8Rng, seed: u64) -> Result<SuiteResult> {
    let cfg = toy_model_config(seed);
    let d = cfg.voxel_dims;
    let seqs: Vec<Vec<_>> = (0..2)
        .map(|_| {
            (0..2)
                .map(|_| {
                    let f = Tensor::from_fn(&[d.x, d.y, d.z], |_| {
                        if rng.gen_bool(0.04) {
                            rng.gen_range(1..4) as f32
                        } else {
                            0.0
                        }
                    });
                    project(&f, Reduction::Max)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&[_]> = seqs.iter().map(|s| s.as_slice()).collect();
    let batch = SequenceBatch::new(&refs)?.cast::<f64>();
    let labels = [0usize, 3];
    let mut model = OgPcl::<f64>::new(cfg)?;
    let out = model.forward(&batch, Mode::Train)?;
    let (_, g) = softmax_crossentropy(&out.logits, &labels)?;
    model.zero_grad();
    model.backward(&g, &out.cache)?;
    let (inputs, analytic): (Vec<_>, Vec<_>) = model
        .params()
        .into_iter()
        .map(|(n, p)| {
            let grad = Tensor::new(p.shape().to_vec(), p.grad().expect("param").to_vec()).expect("shape");
            ((n, detached(p)), grad)
        })
        .unzip();
    check(
        "ogpcl_loss_t2",
        END_TO_END_TOLERANCE,
        inputs,
        analytic,
        Box::new(move |v| {
            let mut m = model.clone();
            for ((_, p), t) in m.params_mut().into_iter().zip(v) {
                p.data_mut().copy_from_slice(t.data());
            }
            Ok(softmax_crossentropy(&m.forward(&batch, Mode::Train)?.logits, &labels)?.0)
        }),
    )
}

/// Runs every check from one seed.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        conv_case(&mut rng)?,
        batchnorm_case(&mut rng)?,
        block_case(&mut rng)?,
        lstm_cell_case(&mut rng)?,
        bilstm_case(&mut rng)?,
        model_case(&mut rng, seed)?,
    ])
}
