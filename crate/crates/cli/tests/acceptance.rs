//! End-to-end acceptance checks. Run with
//! `cargo test -p unmod-cli --test acceptance [-- <criterion numbers>]`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unmod_core::datagen::{synthesize, window_pairs, DatasetTuple, SynthConfig, WindowPair};
use unmod_core::flow::{estimate_flow, warp_mask, FlowField, FrameDims};
use unmod_core::imaging::{
    evaluate_video, frame_mean_std, psnr, ssim, tonemap_per_frame_values, tonemap_values, Psnr,
};
use unmod_core::modulo::{
    fold_clip, masks_from_counts, run_inference, sliding_window_reconstruct, BinaryFoldMask, ClipShape,
    FoldCountMap, IntClip, OraclePredictor, RealClip,
};
use unmod_core::select::{nsm_score, EmbeddingVolume, TokenCoord};
use unmod_core::ssvit::{evaluate_pairs, train, ModelConfig, PairMetrics, SsvitModel, SsvitPredictor, TrainConfig, TrainReport};
use unmod_core::tensor::Tensor;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn exact_round_trip() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut clips = 0;
    for &(b, a) in &[(10u32, 8u32), (12, 8), (16, 12)] {
        for _ in 0..400 {
            let shape = ClipShape::new(rng.random_range(1..=5), rng.random_range(1..=9), rng.random_range(1..=9), 1);
            let data = (0..shape.len()).map(|_| rng.random_range(0..1u32 << b)).collect();
            let gt = IntClip::new(shape, b, data).unwrap();
            let (m, counts) = fold_clip(&gt, a).map_err(|e| e.to_string())?;
            let max_l = counts.counts().iter().copied().max().unwrap_or(0);
            let rec = run_inference(&m, &mut OraclePredictor::new(counts), b).map_err(|e| e.to_string())?;
            ensure(rec.clip == gt, || format!("B={b} A={a}: reconstruction differs for {shape}"))?;
            ensure(rec.masks.len() as u32 == max_l, || {
                format!("B={b} A={a}: {} iterations for max fold count {max_l}", rec.masks.len())
            })?;
            clips += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{clips} clips bit-exact in {:.2}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------- 2

fn mask_factorisation() -> Check {
    // Every count 0..15 alone, and every ordered pair of counts.
    let mut cases: Vec<Vec<u32>> = (0..16).map(|l| vec![l]).collect();
    cases.push((0..16).collect());
    for x in 0..16 {
        for y in 0..16 {
            cases.push(vec![x, y]);
        }
    }
    for counts in &cases {
        let shape = ClipShape::new(1, 1, counts.len(), 1);
        let map = FoldCountMap::new(shape, counts.clone()).unwrap();
        let masks = masks_from_counts(&map);
        let max = counts.iter().copied().max().unwrap();
        ensure(masks.len() as u32 == max, || format!("{} masks for max count {max}", masks.len()))?;
        for (k, m) in masks.iter().enumerate() {
            let order = k as u32 + 1;
            ensure(m.order() == order, || format!("mask {k} has order {}", m.order()))?;
            let expect: Vec<u8> = counts.iter().map(|&l| u8::from(l >= order)).collect();
            ensure(m.bits() == expect.as_slice(), || format!("counts {counts:?}: mask {order} wrong"))?;
        }
        for w in masks.windows(2) {
            ensure(w[1].bits().iter().zip(w[0].bits()).all(|(hi, lo)| hi <= lo), || {
                format!("counts {counts:?}: masks not nested")
            })?;
        }
        let sum: Vec<u32> = (0..counts.len())
            .map(|i| masks.iter().map(|m| u32::from(m.bits()[i])).sum())
            .collect();
        ensure(&sum == counts, || format!("counts {counts:?}: masks sum to {sum:?}"))?;
    }
    Ok(format!("{} count vectors over 0..15", cases.len()))
}

// ---------------------------------------------------------------- 3

/// Direct evaluation: explicit padded triple loop and log-sum-exp softmax.
fn naive_nsm(data: &[f64], dims: (usize, usize, usize, usize), c: (usize, usize, usize), r: usize) -> f64 {
    let (t_n, h_n, w_n, d) = dims;
    let feat = |t: usize, y: usize, x: usize| &data[((t * h_n + y) * w_n + x) * d..((t * h_n + y) * w_n + x + 1) * d];
    let centre = feat(c.0, c.1, c.2);
    let ri = r as i64;
    let mut neighbours = Vec::new();
    for dt in -ri..=ri {
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                let t = (c.0 as i64 + dt).max(0).min(t_n as i64 - 1) as usize;
                let y = (c.1 as i64 + dy).max(0).min(h_n as i64 - 1) as usize;
                let x = (c.2 as i64 + dx).max(0).min(w_n as i64 - 1) as usize;
                neighbours.push(feat(t, y, x));
            }
        }
    }
    let n = neighbours.len() as f64;
    let logits: Vec<f64> = neighbours
        .iter()
        .map(|f| f.iter().zip(centre).map(|(a, b)| a * b).sum())
        .collect();
    let m = logits.iter().copied().fold(f64::MIN, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    let kl: f64 = logits
        .iter()
        .map(|l| (1.0 / n) * (-(n.ln()) - (l - lse).max(1e-12f64.ln())))
        .sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos: f64 = neighbours
        .iter()
        .map(|f| 1.0 - f.iter().zip(centre).map(|(a, b)| a * b).sum::<f64>() / (norm(f) * norm(centre)))
        .sum::<f64>()
        / n;
    kl + cos
}

fn nsm_oracle() -> Check {
    let dims = (4, 8, 8, 8);
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0300 + seed);
        let data: Vec<f64> = (0..4 * 8 * 8 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vol = EmbeddingVolume::new(4, 8, 8, 8, data.clone()).unwrap();
        for r in 1..=2 {
            for t in 0..4 {
                for y in 0..8 {
                    for x in 0..8 {
                        let got = nsm_score(&vol, TokenCoord { t, y, x }, r).unwrap().total;
                        let want = naive_nsm(&data, dims, (t, y, x), r);
                        worst = worst.max((got - want).abs());
                    }
                }
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    let mut homogeneous = 0.0f64;
    for v in [0.3, -2.0, 7.5] {
        let vol = EmbeddingVolume::new(4, 8, 8, 8, vec![v; 4 * 8 * 8 * 8]).unwrap();
        for t in 0..4 {
            for y in 0..8 {
                for x in 0..8 {
                    homogeneous = homogeneous.max(nsm_score(&vol, TokenCoord { t, y, x }, 1).unwrap().total.abs());
                }
            }
        }
    }
    ensure(homogeneous <= 1e-9, || format!("homogeneous score {homogeneous:e}"))?;
    Ok(format!("max |Δ| {worst:.1e}, homogeneous max {homogeneous:.1e}"))
}

// ---------------------------------------------------------------- 4

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-5;

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error over all inputs of a scalar function of tensors.
fn fd_check(inputs: &[(Vec<usize>, Vec<f64>)], f: &dyn Fn(&[Tensor]) -> Tensor) -> f64 {
    let params: Vec<Tensor> = inputs.iter().map(|(s, d)| Tensor::param(s, d.clone()).unwrap()).collect();
    let grads = f(&params).backward().unwrap();
    let mut worst = 0.0f64;
    for (i, (_, data)) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zero(&params[i]);
        let mut numeric = vec![0.0; data.len()];
        for j in 0..data.len() {
            let eval = |delta: f64| {
                let ts: Vec<Tensor> = inputs
                    .iter()
                    .enumerate()
                    .map(|(k, (s, d))| {
                        let mut d = d.clone();
                        if k == i {
                            d[j] += delta;
                        }
                        Tensor::new(s, d).unwrap()
                    })
                    .collect();
                f(&ts).item()
            };
            numeric[j] = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let n = shape.iter().product();
    (shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Contracts any tensor with fixed random weights to a scalar.
fn project(t: &Tensor, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(t.shape(), (0..t.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    t.mul(&w).unwrap().sum()
}

fn micro_model(seed: u64) -> SsvitModel {
    let cfg = ModelConfig {
        patch: 4,
        embed_dim: 4,
        token_dim: 8,
        layers: 2,
        heads: 2,
        mlp_hidden: 8,
        clip_len: 1,
        seed,
        ..ModelConfig::default()
    };
    let mut model = SsvitModel::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    // The head starts at zero; randomise everything so every path carries gradient.
    for i in 0..model.params().len() {
        for v in model.params_mut().values_mut(i) {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    model
}

fn gradients() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0400);
    let mut report = BTreeMap::new();
    let a34 = random(&mut rng, &[3, 4]);
    let b34 = random(&mut rng, &[3, 4]);
    let b45 = random(&mut rng, &[4, 5]);
    let row4 = random(&mut rng, &[4]);
    let gain = random(&mut rng, &[4]);
    let targets: Vec<f64> = (0..12).map(|i| f64::from(i % 3 == 0)).collect();
    let weights: Vec<f64> = (0..12).map(|i| if i == 5 { 0.0 } else { 1.0 + 0.1 * i as f64 }).collect();
    let cases: Vec<(&str, Vec<(Vec<usize>, Vec<f64>)>, Box<dyn Fn(&[Tensor]) -> Tensor>)> = vec![
        ("matmul", vec![a34.clone(), b45.clone()], Box::new(|t| project(&t[0].matmul(&t[1]).unwrap(), 1))),
        ("add", vec![a34.clone(), b34.clone()], Box::new(|t| project(&t[0].add(&t[1]).unwrap(), 2))),
        ("sub", vec![a34.clone(), b34.clone()], Box::new(|t| project(&t[0].sub(&t[1]).unwrap(), 3))),
        ("mul", vec![a34.clone(), b34.clone()], Box::new(|t| project(&t[0].mul(&t[1]).unwrap(), 4))),
        ("add_row", vec![a34.clone(), row4.clone()], Box::new(|t| project(&t[0].add_row(&t[1]).unwrap(), 5))),
        ("scale", vec![a34.clone()], Box::new(|t| project(&t[0].scale(-2.5), 6))),
        ("transpose", vec![a34.clone()], Box::new(|t| project(&t[0].transpose().unwrap(), 7))),
        ("reshape", vec![a34.clone()], Box::new(|t| project(&t[0].reshape(&[2, 6]).unwrap(), 8))),
        ("slice_cols", vec![a34.clone()], Box::new(|t| project(&t[0].slice_cols(1, 2).unwrap(), 9))),
        (
            "concat_cols",
            vec![a34.clone(), b34.clone()],
            Box::new(|t| project(&Tensor::concat_cols(&[t[0].clone(), t[1].clone()]).unwrap(), 10)),
        ),
        ("gather_rows", vec![a34.clone()], Box::new(|t| project(&t[0].gather_rows(&[2, 0, 2, 1]).unwrap(), 11))),
        ("softmax(rows)", vec![a34.clone()], Box::new(|t| project(&t[0].softmax(1).unwrap(), 12))),
        ("softmax(cols)", vec![a34.clone()], Box::new(|t| project(&t[0].softmax(0).unwrap(), 13))),
        (
            "layer_norm",
            vec![a34.clone(), gain.clone(), row4.clone()],
            Box::new(|t| project(&t[0].layer_norm(&t[1], &t[2], 1e-5).unwrap(), 14)),
        ),
        ("gelu", vec![a34.clone()], Box::new(|t| project(&t[0].scale(3.0).gelu(), 15))),
        ("sum", vec![a34.clone()], Box::new(|t| t[0].sum().scale(1.7))),
        ("mean", vec![a34.clone()], Box::new(|t| t[0].mean().scale(-0.3))),
        (
            "bce_with_logits",
            vec![a34.clone()],
            Box::new(move |t| t[0].scale(4.0).bce_with_logits(&targets, &weights).unwrap()),
        ),
    ];
    for (name, inputs, f) in &cases {
        report.insert(name.to_string(), fd_check(inputs, f.as_ref()));
    }

    // Micro transformer: 2 layers, 2 heads, all parameters and the input tokens.
    let model = micro_model(41);
    let tokens = random(&mut rng, &[5, 8]);
    let transformer_err = transformer_fd(&model, &tokens);
    report.insert("transformer (2 layers, 2 heads)".into(), transformer_err);

    // Whole model: patch encoder, token projection, transformer, head and loss.
    let full_err = model_loss_fd(&micro_model(43));
    report.insert("full model loss".into(), full_err);

    let worst = report.values().copied().fold(0.0, f64::max);
    let elapsed = started.elapsed();
    let failing: Vec<String> = report
        .iter()
        .filter(|(_, &e)| !(e <= FD_TOL))
        .map(|(k, e)| format!("{k}={e:.1e}"))
        .collect();
    ensure(failing.is_empty(), || format!("relative error above {FD_TOL:e}: {}", failing.join(", ")))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{} checks, worst relative error {worst:.1e}, {:.1}s", report.len(), elapsed.as_secs_f64()))
}

/// Finite differences of a projected transformer output with respect to the
/// tokens and every layer parameter.
fn transformer_fd(model: &SsvitModel, tokens: &(Vec<usize>, Vec<f64>)) -> f64 {
    let value = |m: &SsvitModel, toks: &[f64]| -> f64 {
        let bound = m.bind(false);
        let z = Tensor::new(&tokens.0, toks.to_vec()).unwrap();
        project(&bound.transformer_encode(&z).unwrap(), 77).item()
    };
    let bound = model.bind(true);
    let z = Tensor::param(&tokens.0, tokens.1.clone()).unwrap();
    let out = project(&bound.transformer_encode(&z).unwrap(), 77);
    let grads = out.backward().unwrap();
    let mut worst = rel_error(
        &grads.get_or_zero(&z),
        &(0..tokens.1.len())
            .map(|j| {
                let mut p = tokens.1.clone();
                let mut q = tokens.1.clone();
                p[j] += FD_STEP;
                q[j] -= FD_STEP;
                (value(model, &p) - value(model, &q)) / (2.0 * FD_STEP)
            })
            .collect::<Vec<_>>(),
    );
    for (i, t) in bound.tensors().iter().enumerate() {
        let name = &model.params().names()[i];
        if !name.starts_with("layer") {
            continue;
        }
        let numeric: Vec<f64> = (0..t.len())
            .map(|j| {
                let mut mp = model.clone();
                mp.params_mut().values_mut(i)[j] += FD_STEP;
                let mut mm = model.clone();
                mm.params_mut().values_mut(i)[j] -= FD_STEP;
                (value(&mp, &tokens.1) - value(&mm, &tokens.1)) / (2.0 * FD_STEP)
            })
            .collect();
        worst = worst.max(rel_error(&grads.get_or_zero(t), &numeric));
    }
    worst
}

fn model_loss_fd(model: &SsvitModel) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0401);
    let shape = ClipShape::new(2, 8, 8, 1);
    let clip = IntClip::new(shape, 10, (0..shape.len()).map(|_| rng.random_range(0..1024)).collect()).unwrap();
    let target = BinaryFoldMask::new(shape, 1, (0..shape.len()).map(|_| rng.random_range(0..2u8)).collect()).unwrap();
    let loss = |m: &SsvitModel| m.bind(false).loss(&clip, &target).unwrap().item();
    let bound = model.bind(true);
    let grads = bound.loss(&clip, &target).unwrap().backward().unwrap();
    let mut worst = 0.0f64;
    for (i, t) in bound.tensors().iter().enumerate() {
        let numeric: Vec<f64> = (0..t.len())
            .map(|j| {
                let mut mp = model.clone();
                mp.params_mut().values_mut(i)[j] += FD_STEP;
                let mut mm = model.clone();
                mm.params_mut().values_mut(i)[j] -= FD_STEP;
                (loss(&mp) - loss(&mm)) / (2.0 * FD_STEP)
            })
            .collect();
        worst = worst.max(rel_error(&grads.get_or_zero(t), &numeric));
    }
    worst
}

// ---------------------------------------------------------------- 5

fn permutation_equivariance() -> Check {
    let mut worst = 0.0f64;
    let mut trials = 0;
    for seed in 0..4u64 {
        let model = {
            let mut m = SsvitModel::new(ModelConfig { seed, ..ModelConfig::default() }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for i in 0..m.params().len() {
                for v in m.params_mut().values_mut(i) {
                    *v += rng.random_range(-0.3..0.3);
                }
            }
            m
        };
        let bound = model.bind(false);
        let d = model.config().token_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
        for n in [1usize, 2, 7, 20] {
            let z = Tensor::new(&[n, d], (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let lhs = bound.transformer_encode(&z.gather_rows(&perm).unwrap()).unwrap();
            let rhs = bound.transformer_encode(&z).unwrap().gather_rows(&perm).unwrap();
            let dev = lhs.data().iter().zip(rhs.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(dev);
            trials += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("{trials} permutations, max |Δ| {worst:.1e}"))
}

// ---------------------------------------------------------------- 6, 11

struct Experiment {
    fraction: f64,
    params: usize,
    train_windows: usize,
    report: TrainReport,
    metrics: PairMetrics,
    psnr: f64,
    identity_psnr: f64,
    macs_per_call: f64,
    elapsed: Duration,
}

struct Dataset {
    train: Vec<DatasetTuple>,
    test: Vec<DatasetTuple>,
    train_pairs: Vec<WindowPair>,
    test_pairs: Vec<WindowPair>,
}

const CLIP_LEN: usize = 4;
const BITS_B: u32 = 10;

fn dataset() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = SynthConfig {
            videos: 36,
            frames: 12,
            width: 32,
            height: 32,
            channels: 1,
            bits_a: 8,
            bits_b: BITS_B,
            clip_len: CLIP_LEN,
            seed: 7,
            ..SynthConfig::default()
        };
        let tuples: Vec<DatasetTuple> = synthesize(&cfg).unwrap().into_iter().map(|v| v.tuple).collect();
        let (train, test) = tuples.split_at(30);
        let pairs = |ts: &[DatasetTuple]| -> Vec<WindowPair> {
            ts.iter()
                .enumerate()
                .flat_map(|(i, t)| window_pairs(t, i, CLIP_LEN).unwrap())
                .collect()
        };
        Dataset {
            train_pairs: pairs(train),
            test_pairs: pairs(test),
            train: train.to_vec(),
            test: test.to_vec(),
        }
    })
}

fn run_experiment(fraction: f64) -> Experiment {
    let data = dataset();
    let started = Instant::now();
    let mut model = SsvitModel::new(ModelConfig {
        fraction,
        clip_len: CLIP_LEN,
        ..ModelConfig::default()
    })
    .unwrap();
    let tc = TrainConfig {
        steps: 5000,
        batch: 4,
        lr: 1e-4,
        seed: 0,
    };
    let report = train(&mut model, &data.train_pairs, &tc).unwrap();
    let metrics = evaluate_pairs(&model, &data.test, &data.test_pairs).unwrap();
    let (mut psnr_sum, mut identity_sum) = (0.0, 0.0);
    let (mut macs, mut calls) = (0u64, 0usize);
    for t in &data.test {
        let mut p = SsvitPredictor::new(model.clone());
        let rec = sliding_window_reconstruct(&t.modulo, &mut p, CLIP_LEN, BITS_B).unwrap();
        macs += p.transformer_macs();
        calls += p.calls();
        psnr_sum += evaluate_video(&t.gt, &rec.video, 4).unwrap().mean_psnr();
        let identity = t.modulo.clone().with_bit_depth(BITS_B).unwrap();
        identity_sum += evaluate_video(&t.gt, &identity, 4).unwrap().mean_psnr();
    }
    let n = data.test.len() as f64;
    Experiment {
        fraction,
        params: model.param_count(),
        train_windows: data.train.iter().map(|t| t.gt.shape().frames - CLIP_LEN).sum(),
        report,
        metrics,
        psnr: psnr_sum / n,
        identity_psnr: identity_sum / n,
        macs_per_call: macs as f64 / calls.max(1) as f64,
        elapsed: started.elapsed(),
    }
}

fn full_experiment() -> &'static Experiment {
    static E: OnceLock<Experiment> = OnceLock::new();
    E.get_or_init(|| run_experiment(1.0))
}

fn sparse_experiment() -> &'static Experiment {
    static E: OnceLock<Experiment> = OnceLock::new();
    E.get_or_init(|| run_experiment(0.25))
}

/// Conditions (b) and (c) shared by both selection settings.
fn accuracy_and_psnr(e: &Experiment) -> std::result::Result<String, String> {
    let gain = e.metrics.accuracy() - e.metrics.zero_accuracy();
    ensure(gain >= 0.10, || {
        format!(
            "fraction {}: accuracy {:.4} vs zero-mask {:.4} (+{:.1} pp, need +10)",
            e.fraction,
            e.metrics.accuracy(),
            e.metrics.zero_accuracy(),
            gain * 100.0
        )
    })?;
    ensure(e.psnr > e.identity_psnr, || {
        format!("fraction {}: PSNR {:.3} dB not above identity {:.3} dB", e.fraction, e.psnr, e.identity_psnr)
    })?;
    Ok(format!(
        "acc {:.1}% vs zero {:.1}%, PSNR {:.2} vs identity {:.2} dB",
        e.metrics.accuracy() * 100.0,
        e.metrics.zero_accuracy() * 100.0,
        e.psnr,
        e.identity_psnr
    ))
}

fn desk_scale_learning() -> Check {
    let e = full_experiment();
    ensure(e.params <= 100_000, || format!("{} parameters", e.params))?;
    ensure(e.train_windows >= 200, || format!("{} training windows", e.train_windows))?;
    let blocks = e.report.block_means(5);
    ensure(blocks.len() == 5 && blocks.windows(2).all(|w| w[1] < w[0]), || {
        format!("smoothed loss not strictly decreasing: {blocks:.4?}")
    })?;
    let ab = accuracy_and_psnr(e)?;
    ensure(e.elapsed < Duration::from_secs(30 * 60), || format!("took {:?}", e.elapsed))?;
    Ok(format!(
        "{} params, {} windows, loss blocks {:.3?}, {ab}, {:.0}s",
        e.params,
        e.train_windows,
        blocks,
        e.elapsed.as_secs_f64()
    ))
}

fn selection_economy() -> Check {
    let full = full_experiment();
    let sparse = sparse_experiment();
    let drop = 1.0 - sparse.macs_per_call / full.macs_per_call;
    ensure(drop >= 0.60, || {
        format!("MACs per call {} → {} ({:.1}% drop)", full.macs_per_call, sparse.macs_per_call, drop * 100.0)
    })?;
    let ab = accuracy_and_psnr(sparse)?;
    Ok(format!(
        "MACs per call {:.0} → {:.0} (−{:.1}%), {ab}",
        full.macs_per_call,
        sparse.macs_per_call,
        drop * 100.0
    ))
}

// ---------------------------------------------------------------- 7

fn flow_fallback() -> Check {
    let dims = FrameDims::new(48, 48, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0700);
    let prev: Vec<u32> = (0..dims.len()).map(|_| rng.random_range(0..256)).collect();
    let (block, radius) = (8usize, 7i32);
    let mut checked = 0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let cur: Vec<u32> = (0..48i32)
                .flat_map(|y| (0..48i32).map(move |x| (x, y)))
                .map(|(x, y)| prev[((y - dy).clamp(0, 47) * 48 + (x - dx).clamp(0, 47)) as usize])
                .collect();
            let f = estimate_flow(&prev, &cur, dims, block, radius as usize).map_err(|e| e.to_string())?;
            for gy in 0..f.grid_h {
                for gx in 0..f.grid_w {
                    let (x0, y0) = ((gx * block) as i32, (gy * block) as i32);
                    // Interior: the whole search window and its source pixels lie in the frame.
                    let inside = |v: i32| v - 2 * radius >= 0 && v + block as i32 + 2 * radius <= 48;
                    if !(inside(x0) && inside(y0)) {
                        continue;
                    }
                    ensure(f.vectors[gy * f.grid_w + gx] == (dx, dy), || {
                        format!("shift ({dx},{dy}) block ({gx},{gy}) -> {:?}", f.vectors[gy * f.grid_w + gx])
                    })?;
                    checked += 1;
                }
            }
        }
    }
    ensure(checked > 0, || "no interior blocks".into())?;

    let shape = ClipShape::new(3, 21, 19, 1);
    let mask = BinaryFoldMask::new(shape, 2, (0..shape.len()).map(|_| rng.random_range(0..2u8)).collect()).unwrap();
    let mdims = FrameDims::new(21, 19, 1);
    let flows: Vec<FlowField> = (0..3)
        .map(|_| {
            let mut f = FlowField::zero(mdims, 5, 7).unwrap();
            f.vectors.iter_mut().for_each(|v| *v = (rng.random_range(-7..=7), rng.random_range(-7..=7)));
            f
        })
        .collect();
    let warped = warp_mask(&mask, &flows).map_err(|e| e.to_string())?;
    for t in 0..3 {
        for y in 0..21i32 {
            for x in 0..19i32 {
                let (dx, dy) = flows[t].vectors[(y as usize / 5) * flows[t].grid_w + x as usize / 5];
                let sy = (y - dy).clamp(0, 20) as usize;
                let sx = (x - dx).clamp(0, 18) as usize;
                let want = mask.bits()[(t * 21 + sy) * 19 + sx];
                let got = warped.bits()[(t * 21 + y as usize) * 19 + x as usize];
                ensure(got == want, || format!("warp differs at frame {t} ({x},{y})"))?;
            }
        }
    }
    Ok(format!("225 shifts, {checked} interior blocks exact; warp matches per-pixel oracle"))
}

// ---------------------------------------------------------------- 8

/// PSNR and SSIM from exact integer sums.
fn exact_metrics(a: &[i64], b: &[i64]) -> (f64, f64) {
    let n = a.len() as i128;
    let sa: i128 = a.iter().map(|&v| v as i128).sum();
    let sb: i128 = b.iter().map(|&v| v as i128).sum();
    let saa: i128 = a.iter().map(|&v| (v as i128) * (v as i128)).sum();
    let sbb: i128 = b.iter().map(|&v| (v as i128) * (v as i128)).sum();
    let sab: i128 = a.iter().zip(b).map(|(&x, &y)| (x as i128) * (y as i128)).sum();
    let sdd: i128 = a.iter().zip(b).map(|(&x, &y)| ((x - y) as i128).pow(2)).sum();
    let peak = *a.iter().max().unwrap() as f64;
    let psnr = 20.0 * peak.log10() - 10.0 * (sdd as f64 / n as f64).log10();
    let nf = n as f64;
    let (ma, mb) = (sa as f64 / nf, sb as f64 / nf);
    let n2 = (n * n) as f64;
    let va = (n * saa - sa * sa) as f64 / n2;
    let vb = (n * sbb - sb * sb) as f64 / n2;
    let cov = (n * sab - sa * sb) as f64 / n2;
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let ssim = (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    (psnr, ssim)
}

fn metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0800);
    let dims = FrameDims::new(8, 8, 1);
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let a: Vec<i64> = (0..64).map(|_| rng.random_range(0..4096)).collect();
        let b: Vec<i64> = a.iter().map(|&v| (v + rng.random_range(-300..300)).max(0)).collect();
        if a == b {
            continue;
        }
        let (p, s) = exact_metrics(&a, &b);
        let af: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        let bf: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        match psnr(&af, &bf, dims, 0).unwrap() {
            Psnr::Finite(v) => dp = dp.max((v - p).abs()),
            Psnr::Identical => return Err("distinct frames reported identical".into()),
        }
        ds = ds.max((ssim(&af, &bf, dims, 0).unwrap() - s).abs());
        let selfsim = ssim(&af, &af, dims, 0).unwrap();
        ensure(selfsim == 1.0, || format!("ssim(x, x) = {selfsim:.17}"))?;
        ensure(psnr(&af, &af, dims, 0).unwrap() == Psnr::Identical, || "identical frames not flagged".into())?;
    }
    ensure(dp <= 1e-9 && ds <= 1e-9, || format!("PSNR |Δ| {dp:e}, SSIM |Δ| {ds:e}"))?;
    Ok(format!("200 pairs, PSNR |Δ| {dp:.1e}, SSIM |Δ| {ds:.1e}, ssim(x,x)=1, sentinel ok"))
}

// ---------------------------------------------------------------- 9

fn tone_mapping() -> Check {
    let shape = ClipShape::new(10, 8, 8, 1);
    let constant = RealClip::new(shape, vec![1234.5; shape.len()]).unwrap();
    let out = tonemap_values(&constant, 0.9).unwrap();
    ensure(out.iter().all(|&v| v == out[0]), || "constant video maps to varying output".into())?;

    // Frames alternate between background only and background plus a small
    // very bright region.
    let shape = ClipShape::new(12, 16, 16, 1);
    let data: Vec<f64> = (0..shape.len())
        .map(|i| {
            let t = i / 256;
            let p = i % 256;
            if t % 2 == 1 && p < 26 {
                20_000.0
            } else {
                100.0 + (p % 16) as f64
            }
        })
        .collect();
    let hdr = RealClip::new(shape, data).unwrap();
    let smoothed = frame_mean_std(&tonemap_values(&hdr, 0.9).unwrap(), shape);
    let independent = frame_mean_std(&tonemap_per_frame_values(&hdr).unwrap(), shape);
    ensure(smoothed < independent, || {
        format!("frame-mean std smoothed {smoothed:.4} vs per-frame {independent:.4}")
    })?;
    Ok(format!("constant ok; frame-mean std {smoothed:.3} (smoothed) < {independent:.3} (per-frame)"))
}

// ---------------------------------------------------------------- 10

fn unmod(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_unmod"))
        .args(args)
        .output()
        .map_err(|e| format!("cannot run unmod: {e}"))?;
    ensure(out.status.success(), || {
        format!("unmod {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "run.log") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn same_tree(a: &Path, b: &Path, what: &str) -> std::result::Result<usize, String> {
    let (ta, tb) = (tree(a), tree(b));
    ensure(ta.keys().eq(tb.keys()), || format!("{what}: different file sets"))?;
    for (k, v) in &ta {
        ensure(tb[k] == *v, || format!("{what}: {} differs", k.display()))?;
    }
    Ok(ta.len())
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| tmp.path().join(s).to_string_lossy().into_owned();
    let synth = |out: &str, threads: &str| {
        unmod(&["synth", "--out", out, "--videos", "4", "--bits-b", "10", "--seed", "3", "--threads", threads])
    };
    synth(&p("s1"), "1")?;
    synth(&p("s4"), "4")?;
    synth(&p("s4b"), "4")?;
    let mut files = same_tree(&tmp.path().join("s1"), &tmp.path().join("s4"), "synth")?;
    files += same_tree(&tmp.path().join("s4"), &tmp.path().join("s4b"), "synth rerun")?;
    let data = p("s1");
    for threads in ["1", "4"] {
        unmod(&[
            "train", "--data", &data, "--out", &p(&format!("t{threads}")), "--steps", "40", "--holdout", "1",
            "--fraction", "0.5", "--threads", threads,
        ])?;
    }
    files += same_tree(&tmp.path().join("t1"), &tmp.path().join("t4"), "train")?;
    let model = format!("{}/model.ckpt", p("t1"));
    for threads in ["1", "4"] {
        unmod(&[
            "infer", "--input", &data, "--model", &model, "--out", &p(&format!("i{threads}")), "--threads", threads,
        ])?;
        unmod(&[
            "infer", "--input", &data, "--predictor", "flow-only", "--out", &p(&format!("f{threads}")), "--threads",
            threads,
        ])?;
    }
    files += same_tree(&tmp.path().join("i1"), &tmp.path().join("i4"), "infer ssvit")?;
    files += same_tree(&tmp.path().join("f1"), &tmp.path().join("f4"), "infer flow-only")?;
    Ok(format!("{files} files byte-identical across --threads 1/4 and reruns"))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Check); 11] = [
        (1, "exact modulo round trip", exact_round_trip),
        (2, "mask factorisation", mask_factorisation),
        (3, "NSM oracle equivalence", nsm_oracle),
        (4, "gradient correctness", gradients),
        (5, "permutation equivariance", permutation_equivariance),
        (6, "desk-scale learning", desk_scale_learning),
        (7, "flow fallback", flow_fallback),
        (8, "metrics", metrics),
        (9, "tone mapping", tone_mapping),
        (10, "determinism", determinism),
        (11, "token-selection economy", selection_economy),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {id:>2} {name:<26} PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} {name:<26} FAIL  {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
