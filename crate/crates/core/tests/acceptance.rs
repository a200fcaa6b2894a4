//! Acceptance checks. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line; exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ogpcl::gradcheck::{run_suite, END_TO_END_TOLERANCE};
use ogpcl::ingest::{voxelize, AugmentPolicy, Bounds, Point, PointFrame, VoxelDims, VoxelSequence};
use ogpcl::model::{BlockConfig, BranchConfig, ModelConfig, OgPcl, SequenceBatch};
use ogpcl::ogconv::{ogconv_forward, MaskedFeature, OgConvParams};
use ogpcl::ops::{conv2d, Conv2dGeometry, Mode};
use ogpcl::projection::{project, Reduction, View};
use ogpcl::train::{evaluate, train_fold, AdamConfig, TrainConfig};
use ogpcl::Tensor;

type Check = Result<String, String>;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn rand_mask(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.gen_bool(p) { 1.0 } else { 0.0 })
}

/// Random shapes and geometries with `H, W >= kernel` after padding.
fn rand_case(rng: &mut ChaCha8Rng) -> ([usize; 4], [usize; 4], Conv2dGeometry) {
    let (kh, kw) = (rng.gen_range(1..=3) * 2 - 1, rng.gen_range(1..=3) * 2 - 1);
    let n = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=3);
    let co = rng.gen_range(1..=4);
    let h = rng.gen_range(kh..kh + 6);
    let w = rng.gen_range(kw..kw + 6);
    let geom = Conv2dGeometry::new(
        (rng.gen_range(1..=2), rng.gen_range(1..=2)),
        (rng.gen_range(0..=kh / 2), rng.gen_range(0..=kw / 2)),
    );
    ([n, c, h, w], [co, c, kh, kw], geom)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dense_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (xs, ks, geom) = rand_case(&mut rng);
        let x = rand_t(&mut rng, &xs);
        let kernel = rand_t(&mut rng, &ks);
        let bias = rand_t(&mut rng, &[ks[0]]);
        let params =
            OgConvParams { kernel: kernel.clone(), bias: Some(bias.clone()), geometry: geom, compensation: true };
        let (y, _) = ogconv_forward(&MaskedFeature::dense(x.clone()).map_err(|e| e.to_string())?, &params)
            .map_err(|e| e.to_string())?;
        let reference = conv2d(&x, &kernel, Some(&bias), geom).map_err(|e| e.to_string())?;
        if y.mask.data().iter().any(|&m| m != 1.0) {
            return Err("dense input produced an unoccupied output position".into());
        }
        worst = worst.max(max_abs_diff(y.features.data(), reference.data()));
    }
    if worst <= 1e-6 {
        Ok(format!("100 cases, max |diff| {worst:.2e}"))
    } else {
        Err(format!("max |diff| {worst:.2e} > 1e-6"))
    }
}

/// `1` where any tap of the window lands on an occupied in-bounds cell.
fn nested_loop_mask(mask: &Tensor<f64>, k: (usize, usize), geom: Conv2dGeometry) -> Vec<f64> {
    let s = mask.shape();
    let (n, h, w) = (s[0], s[2] as isize, s[3] as isize);
    let oh = (s[2] + 2 * geom.padding.0 - k.0) / geom.stride.0 + 1;
    let ow = (s[3] + 2 * geom.padding.1 - k.1) / geom.stride.1 + 1;
    let mut out = vec![0.0; n * oh * ow];
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let mut hit = false;
                for u in 0..k.0 {
                    for v in 0..k.1 {
                        let r = (i * geom.stride.0 + u) as isize - geom.padding.0 as isize;
                        let c = (j * geom.stride.1 + v) as isize - geom.padding.1 as isize;
                        if r >= 0
                            && r < h
                            && c >= 0
                            && c < w
                            && mask.data()[(b * h as usize + r as usize) * w as usize + c as usize] > 0.0
                        {
                            hit = true;
                        }
                    }
                }
                out[(b * oh + i) * ow + j] = if hit { 1.0 } else { 0.0 };
            }
        }
    }
    out
}

fn mask_propagation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..100 {
        let (xs, ks, geom) = rand_case(&mut rng);
        let p = rng.gen_range(0.05..0.6);
        let mask = rand_mask(&mut rng, &[xs[0], 1, xs[2], xs[3]], p);
        let params = OgConvParams { kernel: rand_t(&mut rng, &ks), bias: None, geometry: geom, compensation: true };
        let input = MaskedFeature::new(rand_t(&mut rng, &xs), mask.clone()).map_err(|e| e.to_string())?;
        let (y, _) = ogconv_forward(&input, &params).map_err(|e| e.to_string())?;
        if y.mask.data() != nested_loop_mask(&mask, (ks[2], ks[3]), geom).as_slice() {
            return Err(format!("case {case}: output mask differs from the nested-loop reference"));
        }
    }
    Ok("100 random masks match".into())
}

fn constant_completion() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let c = rng.gen_range(-2..=2) as f64;
        let (k, (h, w)) = (3, (rng.gen_range(3..10), rng.gen_range(3..10)));
        let x = Tensor::from_fn(&[1, 1, h, w], |_| c);
        let p = rng.gen_range(0.1..0.9);
        let mask = rand_mask(&mut rng, &[1, 1, h, w], p);
        let params = OgConvParams {
            kernel: Tensor::ones(&[1, 1, k, k]),
            bias: None,
            geometry: Conv2dGeometry::new((1, 1), (0, 0)),
            compensation: true,
        };
        let (y, _) = ogconv_forward(&MaskedFeature::new(x, mask).map_err(|e| e.to_string())?, &params)
            .map_err(|e| e.to_string())?;
        for (&v, &m) in y.features.data().iter().zip(y.mask.data()) {
            if m == 1.0 {
                worst = worst.max((v - c * (k * k) as f64).abs());
            }
        }
    }
    if worst <= 1e-5 {
        Ok(format!("50 masks, max |y - cK| {worst:.2e}"))
    } else {
        Err(format!("max |y - cK| {worst:.2e} > 1e-5"))
    }
}

fn gradient_checks() -> Check {
    let start = Instant::now();
    let results = run_suite(0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (mut layers, mut model) = (0.0f64, 0.0f64);
    for r in &results {
        if r.tolerance == END_TO_END_TOLERANCE {
            model = model.max(r.max_relative_error);
        } else {
            layers = layers.max(r.max_relative_error);
        }
    }
    let summary = format!("layers {layers:.2e}, end-to-end {model:.2e}, {:.1}s", elapsed.as_secs_f64());
    if layers < 1e-6 && model < 1e-4 && elapsed < Duration::from_secs(120) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn projection_and_counts() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (x, y, z) = (rng.gen_range(1..6), rng.gen_range(1..9), rng.gen_range(1..9));
        let v = Tensor::from_fn(&[x, y, z], |_| if rng.gen_bool(0.3) { rng.gen_range(0..5) as f32 } else { 0.0 });
        let p = project(&v, Reduction::Max).map_err(|e| e.to_string())?;
        let at = |i: usize, j: usize, k: usize| v.data()[(i * y + j) * z + k];
        for j in 0..y {
            for k in 0..z {
                let m = (0..x).map(|i| at(i, j, k)).fold(0.0f32, f32::max);
                if p.top.data()[j * z + k] != m || p.top_mask.data()[j * z + k] != (m > 0.0) as u8 as f32 {
                    return Err(format!("top view differs at ({j},{k})"));
                }
            }
        }
        for i in 0..x {
            for k in 0..z {
                let m = (0..y).map(|j| at(i, j, k)).fold(0.0f32, f32::max);
                if p.front.data()[i * z + k] != m {
                    return Err(format!("front view differs at ({i},{k})"));
                }
            }
            for j in 0..y {
                let m = (0..z).map(|k| at(i, j, k)).fold(0.0f32, f32::max);
                if p.side.data()[i * y + j] != m {
                    return Err(format!("side view differs at ({i},{j})"));
                }
            }
        }
    }
    let bounds = Bounds::new([0.0, -1.0, 0.0], [2.0, 1.0, 2.5]).map_err(|e| e.to_string())?;
    let frames: Vec<PointFrame> = (0..5)
        .map(|t| PointFrame {
            frame_index: t,
            points: (0..1000)
                .map(|_| Point::new(rng.gen_range(0.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.5)))
                .collect(),
        })
        .collect();
    let seq = voxelize(&frames, &bounds, VoxelDims::default()).map_err(|e| e.to_string())?;
    let sums = seq.frame_sums();
    if sums.iter().any(|&s| s != 1000.0) {
        return Err(format!("voxel counts {sums:?}, expected 1000 per frame"));
    }
    Ok("20 grids match the triple loop; 5 x 1000 points conserved".into())
}

fn block(c: usize, pool: (usize, usize)) -> BlockConfig {
    BlockConfig { out_channels: c, kernel: (3, 3), pool }
}

/// Closed-form parameter count: conv weights and bias, BN scale and shift,
/// the per-view linear layer, two LSTMs with one bias vector each, and the
/// classifier.
fn closed_form(cfg: &ModelConfig) -> usize {
    let mut feature = 0;
    let mut total = 0;
    for b in &cfg.branches {
        let mut cin = 1;
        for blk in &b.blocks {
            total += cin * blk.out_channels * blk.kernel.0 * blk.kernel.1 + 3 * blk.out_channels;
            cin = blk.out_channels;
        }
        total += cin * b.fc_out + b.fc_out;
        feature += b.fc_out;
    }
    let h = cfg.hidden;
    total + 2 * (4 * h * (feature + h) + 4 * h) + 2 * h * cfg.classes.len() + cfg.classes.len()
}

fn parameter_count() -> Check {
    let default = ModelConfig::default();
    let mut grid = Vec::new();
    for (i, &(hidden, fc, c1, k)) in
        [(8, 4, 2, 2), (16, 8, 4, 3), (32, 16, 8, 5), (64, 32, 16, 7), (128, 64, 8, 4)].iter().enumerate()
    {
        let branch = |view| BranchConfig {
            view,
            blocks: vec![block(c1, (2, 2)), block(2 * c1, (1, 2))],
            fc_out: fc,
            fc_relu: i % 2 == 0,
        };
        let classes: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
        let all = ModelConfig {
            branches: View::ALL.into_iter().map(branch).collect(),
            hidden,
            classes: classes.clone(),
            ..default.clone()
        };
        grid.push(all.with_views(&[View::ALL[i % 3]]).map_err(|e| e.to_string())?);
        grid.push(all);
    }
    for cfg in &grid {
        let model = OgPcl::<f32>::new(cfg.clone()).map_err(|e| e.to_string())?;
        if model.count_parameters() != closed_form(cfg) {
            return Err(format!("counted {} but closed form gives {}", model.count_parameters(), closed_form(cfg)));
        }
    }
    let n = closed_form(&default);
    if (750_000..=950_000).contains(&n) {
        Ok(format!("{} configs match; default {n}", grid.len()))
    } else {
        Err(format!("default has {n} parameters"))
    }
}

fn toy_config(seed: u64) -> ModelConfig {
    let branch = |view| BranchConfig { view, blocks: vec![block(4, (2, 2))], fc_out: 8, fc_relu: true };
    ModelConfig {
        voxel_dims: VoxelDims { x: 4, y: 8, z: 8 },
        seq_len: 4,
        stride: 2,
        branches: View::ALL.into_iter().map(branch).collect(),
        hidden: 8,
        classes: vec!["a".into(), "b".into()],
        augment: AugmentPolicy::disabled(),
        seed,
        ..Default::default()
    }
}

/// Sparse sequences whose occupied cells sit on one side of the grid per class.
fn blobs(cfg: &ModelConfig, n: usize, rng: &mut ChaCha8Rng) -> Vec<VoxelSequence> {
    let d = cfg.voxel_dims;
    (0..n)
        .map(|i| {
            let label = i % 2;
            let values = Tensor::from_fn(&[cfg.seq_len, d.x, d.y, d.z], |idx| {
                let j = (idx / d.z) % d.y;
                let side = if label == 0 { j < d.y / 2 } else { j >= d.y / 2 };
                if side && rng.gen_bool(0.15) {
                    rng.gen_range(1..4) as f32
                } else {
                    0.0
                }
            });
            VoxelSequence { values, bounds: Bounds::new([0.0; 3], [1.0; 3]).unwrap(), label: Some(label) }
        })
        .collect()
}

fn overfit() -> Check {
    let cfg = toy_config(7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = blobs(&cfg, 8, &mut rng);
    let refs: Vec<&VoxelSequence> = data.iter().collect();
    let model = OgPcl::new(cfg).map_err(|e| e.to_string())?;
    let tc = TrainConfig {
        epochs: 200,
        batch_size: 8,
        adam: AdamConfig { learning_rate: 1e-2, ..Default::default() },
        ..Default::default()
    };
    let r = train_fold(&refs, &refs, model, &tc, 0).map_err(|e| e.to_string())?;
    let first = r.log.iter().position(|e| e.val_acc == Some(1.0));
    let acc = evaluate(&r.model, &refs).map_err(|e| e.to_string())?.accuracy;
    match first {
        Some(e) if acc == 1.0 => Ok(format!("100% train accuracy from epoch {}", e + 1)),
        _ => Err(format!("train accuracy {acc:.3} after 200 epochs")),
    }
}

fn compensation_toggle() -> Check {
    let cfg = toy_config(9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sparse = blobs(&cfg, 4, &mut rng);
    let d = cfg.voxel_dims;
    let dense: Vec<VoxelSequence> = (0..4)
        .map(|_| VoxelSequence {
            values: Tensor::from_fn(&[cfg.seq_len, d.x, d.y, d.z], |_| rng.gen_range(0.5..3.0)),
            bounds: Bounds::new([0.0; 3], [1.0; 3]).unwrap(),
            label: None,
        })
        .collect();
    let model = OgPcl::<f32>::new(cfg.clone()).map_err(|e| e.to_string())?;
    let logits = |seqs: &[VoxelSequence], comp: bool| -> Result<Vec<f32>, String> {
        let prepared: Vec<_> =
            seqs.iter().map(|s| cfg.prepare(s)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        let refs: Vec<&[_]> = prepared.iter().map(|p: &Vec<_>| p.as_slice()).collect();
        let batch = SequenceBatch::new(&refs).map_err(|e| e.to_string())?;
        let mut m = model.clone();
        m.set_compensation(comp);
        Ok(m.forward(&batch, Mode::Train).map_err(|e| e.to_string())?.logits.data().to_vec())
    };
    let diff = |a: Vec<f32>, b: Vec<f32>| a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    let sparse_diff = diff(logits(&sparse, true)?, logits(&sparse, false)?);
    let dense_diff = diff(logits(&dense, true)?, logits(&dense, false)?);
    let summary = format!("sparse max |diff| {sparse_diff:.2e}, dense {dense_diff:.2e}");
    if sparse_diff > 1e-6 && dense_diff < 1e-6 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

const CLI_CONFIG: &str = r#"{
  "model": {
    "voxel_dims": {"x": 4, "y": 8, "z": 8},
    "seq_len": 4, "stride": 2, "hidden": 4, "classes": ["left", "right"],
    "branches": [
      {"view": "top", "blocks": [{"out_channels": 3, "kernel": [3, 3], "pool": [2, 2]}], "fc_out": 4, "fc_relu": true},
      {"view": "front", "blocks": [{"out_channels": 3, "kernel": [3, 3], "pool": [1, 2]}], "fc_out": 4, "fc_relu": true},
      {"view": "side", "blocks": [{"out_channels": 3, "kernel": [3, 3], "pool": [1, 2]}], "fc_out": 4, "fc_relu": true}
    ]
  },
  "train": {"epochs": 3, "batch_size": 4, "folds": 2, "adam": {"learning_rate": 0.01}}
}"#;

fn write_dataset(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut manifest = String::new();
    for i in 0..6 {
        let y0 = if i % 2 == 0 { -0.6 } else { 0.4 };
        let mut s = String::new();
        for f in 0..8 {
            for _ in 0..4 {
                s += &format!(
                    "{f} {:.3} {:.3} {:.3}\n",
                    rng.gen_range(0.2..0.8),
                    y0 + rng.gen_range(0.0..0.3),
                    rng.gen_range(0.2..1.8)
                );
            }
        }
        std::fs::write(dir.join(format!("r{i}.txt")), s).unwrap();
        manifest += &format!("r{i}.txt\t{}\n", i % 2);
    }
    std::fs::write(dir.join("manifest.tsv"), manifest).unwrap();
    std::fs::write(dir.join("config.json"), CLI_CONFIG).unwrap();
}

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_dataset(dir.path());
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_ogpcl"))
            .args(["--seed", "42", "--config"])
            .arg(dir.path().join("config.json"))
            .args(["train", "--manifest"])
            .arg(dir.path().join("manifest.tsv"))
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        let mut bytes = std::fs::read(out.join("fold0.ogpc")).map_err(|e| e.to_string())?;
        bytes.extend(std::fs::read(out.join("fold1.ogpc")).map_err(|e| e.to_string())?);
        Ok(bytes)
    };
    let (a, b) = (run("a")?, run("b")?);
    if a == b {
        Ok(format!("two runs, {} checkpoint bytes identical", a.len()))
    } else {
        Err("checkpoints differ between runs with the same seed".into())
    }
}

/// Set `OGPCL_DATASET` to a manifest of the real recordings to run this.
fn dataset_smoke() -> Option<Check> {
    let manifest = std::env::var_os("OGPCL_DATASET")?;
    let out = tempfile::tempdir().ok()?;
    let o = Command::new(env!("CARGO_BIN_EXE_ogpcl"))
        .args(["train", "--epochs", "1", "--folds", "2", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(out.path())
        .output()
        .ok()?;
    Some(if o.status.success() {
        Ok(String::from_utf8_lossy(&o.stdout).lines().last().unwrap_or("").to_string())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    })
}

fn main() {
    let checks: [(&str, fn() -> Check); 9] = [
        ("ogconv equals conv2d on dense input", dense_equivalence),
        ("output mask matches nested-loop reference", mask_propagation),
        ("constant input completes to c*K", constant_completion),
        ("analytic gradients match finite differences", gradient_checks),
        ("projections and voxel counts", projection_and_counts),
        ("parameter count", parameter_count),
        ("overfits eight sequences", overfit),
        ("compensation toggle", compensation_toggle),
        ("cli training is deterministic", cli_determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    match dataset_smoke() {
        None => println!("SKIP  recorded dataset smoke test: OGPCL_DATASET not set"),
        Some(Ok(d)) => println!("PASS  recorded dataset smoke test: {d}"),
        Some(Err(d)) => {
            failed += 1;
            println!("FAIL  recorded dataset smoke test: {d}");
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
