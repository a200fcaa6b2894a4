use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::model::config::ModelConfig;
use crate::ogconv::{MaskedFeature, OgConvBlock, OgConvBlockCache, OgConvParams};
use crate::ops::lstm::BiLstmCache;
use crate::ops::{
    bilstm, bilstm_backward, global_avgpool, global_avgpool_backward, linear, linear_backward, relu, relu_backward,
    Conv2dGeometry, LstmParams, Mode, RunningStats,
};
use crate::projection::{ProjectionTriple, View};
use crate::tensor::{Real, Tensor};

/// A batch of equally long sequences laid out per view as `[B*T,1,H,W]`
/// with row `b*T + t`.
#[derive(Debug, Clone)]
pub struct SequenceBatch<T: Real> {
    batch: usize,
    steps: usize,
    inputs: Vec<(View, MaskedFeature<T>)>,
}

impl SequenceBatch<f32> {
    pub fn new(sequences: &[&[ProjectionTriple]]) -> Result<Self> {
        let batch = sequences.len();
        let steps = sequences.first().map_or(0, |s| s.len());
        if batch == 0 || steps == 0 {
            return Err(Error::EmptySequence);
        }
        if let Some(s) = sequences.iter().find(|s| s.len() != steps) {
            return Err(dim_err(format!("sequence lengths differ within batch: {} vs {steps}", s.len())));
        }
        let inputs = View::ALL
            .into_iter()
            .map(|v| {
                let (first, _) = sequences[0][0].view(v);
                let (h, w) = (first.shape()[1], first.shape()[2]);
                let mut feats = Vec::with_capacity(batch * steps * h * w);
                let mut mask = Vec::with_capacity(batch * steps * h * w);
                for p in sequences.iter().flat_map(|s| s.iter()) {
                    let (m, k) = p.view(v);
                    if m.shape() != [1, h, w] {
                        return Err(dim_err(format!("{} map {:?} differs from [1,{h},{w}]", v.name(), m.shape())));
                    }
                    feats.extend_from_slice(m.data());
                    mask.extend_from_slice(k.data());
                }
                let shape = vec![batch * steps, 1, h, w];
                Ok((v, MaskedFeature::new(Tensor::new(shape.clone(), feats)?, Tensor::new(shape, mask)?)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { batch, steps, inputs })
    }
}

impl<T: Real> SequenceBatch<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn view(&self, v: View) -> Result<&MaskedFeature<T>> {
        self.inputs
            .iter()
            .find(|(w, _)| *w == v)
            .map(|(_, m)| m)
            .ok_or_else(|| dim_err(format!("batch has no {} view", v.name())))
    }

    pub fn cast<U: Real>(&self) -> SequenceBatch<U> {
        SequenceBatch {
            batch: self.batch,
            steps: self.steps,
            inputs: self
                .inputs
                .iter()
                .map(|(v, m)| (*v, MaskedFeature { features: m.features.cast(), mask: m.mask.cast() }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Branch<T: Real> {
    pub view: View,
    pub blocks: Vec<OgConvBlock<T>>,
    pub fc_weight: Tensor<T>,
    pub fc_bias: Tensor<T>,
    pub fc_relu: bool,
}

#[derive(Debug, Clone)]
struct BranchCache<T: Real> {
    blocks: Vec<OgConvBlockCache<T>>,
    pooled_shape: Vec<usize>,
    fc_input: Tensor<T>,
    fc_pre: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T: Real> {
    branches: Vec<BranchCache<T>>,
    lstm: BiLstmCache<T>,
    classifier_input: Tensor<T>,
    dropout: Option<Vec<T>>,
    batch: usize,
    steps: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Real> {
    /// `[B, classes]`.
    pub logits: Tensor<T>,
    /// Last-step BiLSTM state `h_T`, `[B, 2H]`.
    pub embedding: Tensor<T>,
    pub cache: ForwardCache<T>,
}

/// Parallel OGConv branches per view, a shared BiLSTM over the concatenated
/// per-frame features, and a linear classifier on the last step.
#[derive(Debug, Clone)]
pub struct OgPcl<T: Real = f32> {
    config: ModelConfig,
    pub branches: Vec<Branch<T>>,
    pub lstm_fwd: LstmParams<T>,
    pub lstm_bwd: LstmParams<T>,
    pub classifier_weight: Tensor<T>,
    pub classifier_bias: Tensor<T>,
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of_f64(rng.gen_range(-bound..=bound))).into_param()
}

impl<T: Real> OgPcl<T> {
    /// Seeded initialisation: weights and biases uniform in `±sqrt(1/fan_in)`,
    /// BN scale 1 and shift 0, LSTM forget-gate bias 1.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let branches = config
            .branches
            .iter()
            .map(|bc| {
                let mut cin = 1;
                let blocks = bc
                    .blocks
                    .iter()
                    .map(|b| {
                        let fan_in = cin * b.kernel.0 * b.kernel.1;
                        let block = OgConvBlock {
                            conv: OgConvParams {
                                kernel: uniform(&mut rng, &[b.out_channels, cin, b.kernel.0, b.kernel.1], fan_in),
                                bias: Some(uniform(&mut rng, &[b.out_channels], fan_in)),
                                geometry: Conv2dGeometry::same(b.kernel),
                                compensation: config.compensation,
                            },
                            gamma: Tensor::ones(&[b.out_channels]).into_param(),
                            beta: Tensor::zeros(&[b.out_channels]).into_param(),
                            stats: RunningStats::new(b.out_channels),
                            pool: b.pool,
                        };
                        cin = b.out_channels;
                        block
                    })
                    .collect();
                Branch {
                    view: bc.view,
                    blocks,
                    fc_weight: uniform(&mut rng, &[bc.fc_out, cin], cin),
                    fc_bias: uniform(&mut rng, &[bc.fc_out], cin),
                    fc_relu: bc.fc_relu,
                }
            })
            .collect();
        let (f, h) = (config.feature_width(), config.hidden);
        let lstm = |rng: &mut ChaCha8Rng| {
            let mut p = LstmParams {
                w_ih: uniform(rng, &[4 * h, f], h),
                w_hh: uniform(rng, &[4 * h, h], h),
                bias: uniform(rng, &[4 * h], h),
            };
            p.bias.data_mut()[h..2 * h].fill(T::one());
            p
        };
        let lstm_fwd = lstm(&mut rng);
        let lstm_bwd = lstm(&mut rng);
        let k = config.classes.len();
        Ok(Self {
            classifier_weight: uniform(&mut rng, &[k, 2 * h], 2 * h),
            classifier_bias: uniform(&mut rng, &[k], 2 * h),
            branches,
            lstm_fwd,
            lstm_bwd,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Trainable tensors in a fixed order with stable names.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for b in &self.branches {
            let v = b.view.name();
            for (i, blk) in b.blocks.iter().enumerate() {
                out.push((format!("{v}.block{i}.kernel"), &blk.conv.kernel));
                if let Some(bias) = &blk.conv.bias {
                    out.push((format!("{v}.block{i}.bias"), bias));
                }
                out.push((format!("{v}.block{i}.gamma"), &blk.gamma));
                out.push((format!("{v}.block{i}.beta"), &blk.beta));
            }
            out.push((format!("{v}.fc.weight"), &b.fc_weight));
            out.push((format!("{v}.fc.bias"), &b.fc_bias));
        }
        for (d, p) in [("fwd", &self.lstm_fwd), ("bwd", &self.lstm_bwd)] {
            out.push((format!("lstm.{d}.w_ih"), &p.w_ih));
            out.push((format!("lstm.{d}.w_hh"), &p.w_hh));
            out.push((format!("lstm.{d}.bias"), &p.bias));
        }
        out.push(("classifier.weight".into(), &self.classifier_weight));
        out.push(("classifier.bias".into(), &self.classifier_bias));
        out
    }

    /// Same order and names as [`params`](Self::params).
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for b in &mut self.branches {
            let v = b.view.name();
            for (i, blk) in b.blocks.iter_mut().enumerate() {
                out.push((format!("{v}.block{i}.kernel"), &mut blk.conv.kernel));
                if let Some(bias) = &mut blk.conv.bias {
                    out.push((format!("{v}.block{i}.bias"), bias));
                }
                out.push((format!("{v}.block{i}.gamma"), &mut blk.gamma));
                out.push((format!("{v}.block{i}.beta"), &mut blk.beta));
            }
            out.push((format!("{v}.fc.weight"), &mut b.fc_weight));
            out.push((format!("{v}.fc.bias"), &mut b.fc_bias));
        }
        for (d, p) in [("fwd", &mut self.lstm_fwd), ("bwd", &mut self.lstm_bwd)] {
            out.push((format!("lstm.{d}.w_ih"), &mut p.w_ih));
            out.push((format!("lstm.{d}.w_hh"), &mut p.w_hh));
            out.push((format!("lstm.{d}.bias"), &mut p.bias));
        }
        out.push(("classifier.weight".into(), &mut self.classifier_weight));
        out.push(("classifier.bias".into(), &mut self.classifier_bias));
        out
    }

    /// Batch-norm running statistics, named `<view>.block<i>`.
    pub fn stats(&self) -> Vec<(String, &RunningStats<T>)> {
        self.branches
            .iter()
            .flat_map(|b| {
                b.blocks.iter().enumerate().map(move |(i, blk)| (format!("{}.block{i}", b.view.name()), &blk.stats))
            })
            .collect()
    }

    pub fn stats_mut(&mut self) -> Vec<(String, &mut RunningStats<T>)> {
        self.branches
            .iter_mut()
            .flat_map(|b| {
                let v = b.view.name();
                b.blocks.iter_mut().enumerate().map(move |(i, blk)| (format!("{v}.block{i}"), &mut blk.stats))
            })
            .collect()
    }

    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn set_compensation(&mut self, enabled: bool) {
        self.config.compensation = enabled;
        for blk in self.branches.iter_mut().flat_map(|b| b.blocks.iter_mut()) {
            blk.conv.compensation = enabled;
        }
    }

    /// Copy of the model in another precision, including running statistics.
    pub fn cast<U: Real>(&self) -> OgPcl<U> {
        let mut out = OgPcl::<U>::new(self.config.clone()).expect("config already validated");
        for ((_, dst), (_, src)) in out.params_mut().into_iter().zip(self.params()) {
            let c = src.cast::<U>();
            dst.data_mut().copy_from_slice(c.data());
        }
        for ((_, dst), (_, src)) in out.stats_mut().into_iter().zip(self.stats()) {
            dst.mean = src.mean.iter().map(|v| U::of_f64(v.to_f64().unwrap_or(f64::NAN))).collect();
            dst.var = src.var.iter().map(|v| U::of_f64(v.to_f64().unwrap_or(f64::NAN))).collect();
            dst.batches_tracked = src.batches_tracked;
        }
        out
    }

    /// Forward pass updating batch-norm statistics in train mode. No dropout.
    pub fn forward(&mut self, batch: &SequenceBatch<T>, mode: Mode) -> Result<ForwardOutput<T>> {
        self.forward_inner(batch, mode, None)
    }

    /// Training forward pass with dropout on `h_T` when configured.
    pub fn forward_train(&mut self, batch: &SequenceBatch<T>, rng: &mut dyn RngCore) -> Result<ForwardOutput<T>> {
        self.forward_inner(batch, Mode::Train, Some(rng))
    }

    /// Inference pass through a shared model.
    pub fn predict(&self, batch: &SequenceBatch<T>) -> Result<ForwardOutput<T>> {
        let mut stats: Vec<RunningStats<T>> = self.stats().into_iter().map(|(_, s)| s.clone()).collect();
        self.run(batch, Mode::Infer, &mut stats, None)
    }

    fn forward_inner(
        &mut self,
        batch: &SequenceBatch<T>,
        mode: Mode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardOutput<T>> {
        let mut stats: Vec<RunningStats<T>> = self.stats().into_iter().map(|(_, s)| s.clone()).collect();
        let out = self.run(batch, mode, &mut stats, rng)?;
        for ((_, dst), src) in self.stats_mut().into_iter().zip(stats) {
            *dst = src;
        }
        Ok(out)
    }

    fn run(
        &self,
        batch: &SequenceBatch<T>,
        mode: Mode,
        stats: &mut [RunningStats<T>],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardOutput<T>> {
        let (bsz, steps) = (batch.batch, batch.steps);
        let n = bsz * steps;
        let d = self.config.feature_width();
        let mut features = vec![T::zero(); n * d];
        let mut caches = Vec::with_capacity(self.branches.len());
        let mut col = 0;
        let mut stats = stats.iter_mut();
        for br in &self.branches {
            let input = batch.view(br.view)?;
            let (eh, ew) = br.view.map_size(self.config.voxel_dims);
            if input.features.shape() != [n, 1, eh, ew] {
                return Err(dim_err(format!(
                    "{} view input {:?}, model expects [{n},1,{eh},{ew}]",
                    br.view.name(),
                    input.features.shape()
                )));
            }
            let mut x = input.clone();
            let mut block_caches = Vec::with_capacity(br.blocks.len());
            for blk in &br.blocks {
                let st = stats.next().expect("one stats entry per block");
                let (y, c) = blk.forward_with_stats(&x, mode, st)?;
                block_caches.push(c);
                x = y;
            }
            let pooled_shape = x.features.shape().to_vec();
            let fc_input = global_avgpool(&x.features)?;
            let fc_pre = linear(&fc_input, &br.fc_weight, &br.fc_bias)?;
            let f = if br.fc_relu { relu(&fc_pre) } else { fc_pre.clone() };
            let dv = br.fc_weight.shape()[0];
            for r in 0..n {
                features[r * d + col..][..dv].copy_from_slice(&f.data()[r * dv..][..dv]);
            }
            col += dv;
            caches.push(BranchCache { blocks: block_caches, pooled_shape, fc_input, fc_pre });
        }

        let sequence = (0..steps)
            .map(|t| {
                let mut v = Vec::with_capacity(bsz * d);
                for b in 0..bsz {
                    v.extend_from_slice(&features[(b * steps + t) * d..][..d]);
                }
                Tensor::new(vec![bsz, d], v)
            })
            .collect::<Result<Vec<_>>>()?;
        let (seq_out, lstm_cache) = bilstm(&sequence, &self.lstm_fwd, &self.lstm_bwd)?;
        let h2 = 2 * self.config.hidden;
        let last = seq_out.data()[(steps - 1) * bsz * h2..].to_vec();
        let embedding = Tensor::new(vec![bsz, h2], last)?;

        let p = self.config.dropout;
        let (classifier_input, dropout) = match rng {
            Some(rng) if p > 0.0 => {
                let keep = T::of_f64(1.0 / (1.0 - p));
                let mask: Vec<T> = (0..bsz * h2).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
                let data = embedding.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
                (Tensor::new(vec![bsz, h2], data)?, Some(mask))
            }
            _ => (embedding.clone(), None),
        };
        let logits = linear(&classifier_input, &self.classifier_weight, &self.classifier_bias)?;
        Ok(ForwardOutput {
            logits,
            embedding,
            cache: ForwardCache { branches: caches, lstm: lstm_cache, classifier_input, dropout, batch: bsz, steps },
        })
    }

    /// Accumulates gradients of every parameter given `dLoss/dlogits`.
    pub fn backward(&mut self, grad_logits: &Tensor<T>, cache: &ForwardCache<T>) -> Result<()> {
        let (bsz, steps) = (cache.batch, cache.steps);
        let n = bsz * steps;
        let d = self.config.feature_width();
        let h2 = 2 * self.config.hidden;
        let (mut gh, gw, gb) = linear_backward(grad_logits, &cache.classifier_input, &self.classifier_weight)?;
        self.classifier_weight.accumulate_grad(gw.data());
        self.classifier_bias.accumulate_grad(gb.data());
        if let Some(mask) = &cache.dropout {
            gh.data_mut().iter_mut().zip(mask).for_each(|(g, &m)| *g *= m);
        }
        let mut gseq = vec![T::zero(); steps * bsz * h2];
        gseq[(steps - 1) * bsz * h2..].copy_from_slice(gh.data());
        let gseq = Tensor::new(vec![steps, bsz, h2], gseq)?;
        let (gsteps, gf, gbw) = bilstm_backward(&gseq, &cache.lstm, &self.lstm_fwd, &self.lstm_bwd)?;
        for (p, g) in [(&mut self.lstm_fwd, gf), (&mut self.lstm_bwd, gbw)] {
            p.w_ih.accumulate_grad(g.w_ih.data());
            p.w_hh.accumulate_grad(g.w_hh.data());
            p.bias.accumulate_grad(g.bias.data());
        }
        let mut gfeat = vec![T::zero(); n * d];
        for (t, g) in gsteps.iter().enumerate() {
            for b in 0..bsz {
                gfeat[(b * steps + t) * d..][..d].copy_from_slice(&g.data()[b * d..][..d]);
            }
        }

        let mut col = 0;
        for (br, bc) in self.branches.iter_mut().zip(&cache.branches) {
            let dv = br.fc_weight.shape()[0];
            let mut g = Vec::with_capacity(n * dv);
            for r in 0..n {
                g.extend_from_slice(&gfeat[r * d + col..][..dv]);
            }
            col += dv;
            let mut g = Tensor::new(vec![n, dv], g)?;
            if br.fc_relu {
                g = relu_backward(&g, &bc.fc_pre)?;
            }
            let (gx, gw, gb) = linear_backward(&g, &bc.fc_input, &br.fc_weight)?;
            br.fc_weight.accumulate_grad(gw.data());
            br.fc_bias.accumulate_grad(gb.data());
            let mut g = global_avgpool_backward(&gx, &bc.pooled_shape)?;
            for (blk, c) in br.blocks.iter_mut().zip(&bc.blocks).rev() {
                g = blk.backward(&g, c)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::VoxelDims;
    use crate::model::config::{BlockConfig, BranchConfig};
    use crate::ops::{lstm_cell, softmax};

    pub(crate) fn tiny_config(seed: u64) -> ModelConfig {
        let branch = |view| BranchConfig {
            view,
            blocks: vec![BlockConfig { out_channels: 3, kernel: (3, 3), pool: (2, 2) }],
            fc_out: 4,
            fc_relu: true,
        };
        ModelConfig {
            voxel_dims: VoxelDims { x: 4, y: 6, z: 6 },
            seq_len: 2,
            branches: View::ALL.into_iter().map(branch).collect(),
            hidden: 3,
            seed,
            ..Default::default()
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, t: usize, dims: VoxelDims) -> SequenceBatch<f32> {
        let seqs: Vec<Vec<ProjectionTriple>> = (0..b)
            .map(|_| {
                (0..t)
                    .map(|_| {
                        let f = Tensor::from_fn(&[dims.x, dims.y, dims.z], |_| {
                            if rng.gen_bool(0.2) {
                                rng.gen_range(1..4) as f32
                            } else {
                                0.0
                            }
                        });
                        crate::projection::project(&f, Default::default()).unwrap()
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&[ProjectionTriple]> = seqs.iter().map(|s| s.as_slice()).collect();
        SequenceBatch::new(&refs).unwrap()
    }

    #[test]
    fn default_parameter_count() {
        let m = OgPcl::<f32>::new(ModelConfig::default()).unwrap();
        assert_eq!(m.count_parameters(), 831_205);
    }

    #[test]
    fn shapes_and_determinism() {
        let cfg = tiny_config(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = random_batch(&mut rng, 2, 3, cfg.voxel_dims);
        let mut a = OgPcl::<f32>::new(cfg.clone()).unwrap();
        let mut b = OgPcl::<f32>::new(cfg).unwrap();
        let oa = a.forward(&batch, Mode::Train).unwrap();
        let ob = b.forward(&batch, Mode::Train).unwrap();
        assert_eq!(oa.logits.shape(), [2, 5]);
        assert_eq!(oa.embedding.shape(), [2, 6]);
        assert_eq!(oa.logits, ob.logits);
        let p1 = a.predict(&batch).unwrap();
        let p2 = a.predict(&batch).unwrap();
        assert_eq!(p1.logits, p2.logits);
    }

    #[test]
    fn infer_before_training_is_state_error() {
        let cfg = tiny_config(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = random_batch(&mut rng, 1, 2, cfg.voxel_dims);
        let m = OgPcl::<f32>::new(cfg).unwrap();
        assert!(matches!(m.predict(&batch), Err(Error::State(_))));
    }

    #[test]
    fn all_zero_input_gives_finite_logits() {
        let cfg = tiny_config(5);
        let p = crate::projection::project(&Tensor::zeros(&[4, 6, 6]), Default::default()).unwrap();
        let seq = vec![p; 3];
        let batch = SequenceBatch::new(&[&seq[..]]).unwrap();
        let mut m = OgPcl::<f32>::new(cfg).unwrap();
        let out = m.forward(&batch, Mode::Train).unwrap();
        assert!(out.logits.all_finite());
        let s = softmax(&out.logits).unwrap();
        assert!((s.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_step_matches_cells() {
        let cfg = tiny_config(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = random_batch(&mut rng, 2, 1, cfg.voxel_dims).cast::<f64>();
        let mut m = OgPcl::<f32>::new(cfg).unwrap().cast::<f64>();
        let out = m.forward(&batch, Mode::Train).unwrap();
        // rebuild the BiLSTM input from the cached branch outputs
        let mut feat = Vec::new();
        for r in 0..2 {
            for (br, bc) in m.branches.iter().zip(&out.cache.branches) {
                let f = relu(&linear(&bc.fc_input, &br.fc_weight, &br.fc_bias).unwrap());
                feat.extend_from_slice(&f.data()[r * 4..][..4]);
            }
        }
        let x = Tensor::new(vec![2, 12], feat).unwrap();
        let z = Tensor::zeros(&[2, 3]);
        let (hf, _, _) = lstm_cell(&x, &z, &z, &m.lstm_fwd).unwrap();
        let (hb, _, _) = lstm_cell(&x, &z, &z, &m.lstm_bwd).unwrap();
        for r in 0..2 {
            assert_eq!(&out.embedding.data()[r * 6..][..3], &hf.data()[r * 3..][..3]);
            assert_eq!(&out.embedding.data()[r * 6 + 3..][..3], &hb.data()[r * 3..][..3]);
        }
    }

    #[test]
    fn wrong_view_size_is_dimension_error() {
        let cfg = tiny_config(7);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = random_batch(&mut rng, 1, 2, VoxelDims { x: 4, y: 8, z: 6 });
        let mut m = OgPcl::<f32>::new(cfg).unwrap();
        assert!(matches!(m.forward(&batch, Mode::Train), Err(Error::Dimension(_))));
    }

    #[test]
    fn cast_round_trip_preserves_weights() {
        let m = OgPcl::<f32>::new(tiny_config(8)).unwrap();
        let back = m.cast::<f64>().cast::<f32>();
        for ((na, a), (nb, b)) in m.params().into_iter().zip(back.params()) {
            assert_eq!(na, nb);
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn end_to_end_gradient() {
        let cfg = ModelConfig { dropout: 0.0, ..tiny_config(9) };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = random_batch(&mut rng, 2, 2, cfg.voxel_dims).cast::<f64>();
        let labels = [1usize, 3];
        let mut m = OgPcl::<f32>::new(cfg).unwrap().cast::<f64>();
        let out = m.forward(&batch, Mode::Train).unwrap();
        let (_, g) = crate::ops::softmax_crossentropy(&out.logits, &labels).unwrap();
        m.zero_grad();
        m.backward(&g, &out.cache).unwrap();
        let names: Vec<String> = m.params().into_iter().map(|(n, _)| n).collect();
        for (pi, name) in names.iter().enumerate() {
            let (values, analytic) = {
                let (_, p) = &m.params()[pi];
                (p.data().to_vec(), p.grad().unwrap().to_vec())
            };
            let template = m.clone();
            let r = crate::gradcheck::grad_check(
                |x| {
                    let mut mm = template.clone();
                    mm.params_mut()[pi].1.data_mut().copy_from_slice(x);
                    let o = mm.forward(&batch, Mode::Train)?;
                    Ok(crate::ops::softmax_crossentropy(&o.logits, &labels)?.0)
                },
                &values,
                &analytic,
                crate::gradcheck::DEFAULT_EPSILON,
            )
            .unwrap();
            assert!(r.max_relative_error < 1e-4, "{name}: {r:?}");
        }
    }
}
