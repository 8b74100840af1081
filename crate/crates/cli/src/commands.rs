use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use unmod_core::datagen::{synthesize, window_pairs, DatasetTuple, SynthConfig, WindowPair};
use unmod_core::imaging::{
    evaluate_video, frame_mean_std, tonemap_per_frame_values, tonemap_values, QualityReport, PSNR_AVERAGE_CAP,
};
use unmod_core::io::{read_int_clip, read_manifest, read_real_clip, write_int_clip, write_real_clip, ClipMeta, FrameFormat};
use unmod_core::modulo::{fold_clip, sliding_window_reconstruct, IntClip, OraclePredictor, RealClip};
use unmod_core::select::{score_volume, select_tokens, KlVariant};
use unmod_core::ssvit::{
    evaluate_pairs, load_checkpoint, save_checkpoint, train_with, FlowOnlyPredictor, ModelConfig, SsvitModel,
    SsvitPredictor, TrainConfig,
};
use unmod_core::{Error, Result};

use crate::dataset::{
    create_dir, is_clip_dir, list_videos, read_counts, read_text, read_tuple, write_text, write_video, Provenance,
    RUN_LOG, SYNTH_CONFIG,
};
use crate::{EvalArgs, FoldArgs, InferArgs, PredictorKind, SelectArgs, SynthArgs, TonemapArgs, TrainArgs};

/// Non-reproducible run details (timing, worker count).
struct RunLog {
    started: Instant,
    text: String,
}

impl RunLog {
    fn new(command: &str, threads: usize) -> Self {
        Self {
            started: Instant::now(),
            text: format!("command: {command}\nthreads: {threads}\n"),
        }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.text.push_str(s.as_ref());
        self.text.push('\n');
    }

    fn finish(mut self, dir: &Path) -> Result<()> {
        let ms = self.started.elapsed().as_millis();
        self.line(format!("elapsed_ms: {ms}"));
        write_text(&dir.join(RUN_LOG), &self.text)
    }
}

fn check_matches(flag: Option<u32>, recorded: u32, what: &str) -> Result<u32> {
    match flag {
        Some(v) if v != recorded => Err(Error::Validation(format!(
            "--{what} {v} disagrees with the recorded value {recorded}"
        ))),
        _ => Ok(recorded),
    }
}

pub fn fold(a: FoldArgs, threads: usize) -> Result<()> {
    let log = RunLog::new("fold", threads);
    let (clip, m) = read_int_clip(&a.input)?;
    let bits_b = a.bits_b.unwrap_or(clip.bit_depth());
    if a.bits_a >= bits_b {
        return Err(Error::Validation(format!(
            "modulo depth A={} must be below the source depth B={bits_b}",
            a.bits_a
        )));
    }
    let clip = clip.with_bit_depth(bits_b)?;
    let (modulo, counts) = fold_clip(&clip, a.bits_a)?;
    let source = a.input.display().to_string();
    let meta = |kind: &str| ClipMeta::new(kind).bits(a.bits_a, bits_b).extra("source", &source);
    write_int_clip(&a.out.join("modulo"), &modulo, &meta("modulo"))?;
    let counts_clip = IntClip::new(counts.shape(), bits_b - a.bits_a, counts.counts().to_vec())?;
    write_int_clip(&a.out.join("counts"), &counts_clip, &meta("counts"))?;
    let mut p = Provenance::new("fold");
    p.add("input", &source)
        .add("input_kind", &m.kind)
        .add("bits_a", a.bits_a)
        .add("bits_b", bits_b)
        .add("max_fold_count", counts.max_count());
    p.write(&a.out)?;
    log.finish(&a.out)
}

pub fn synth(a: SynthArgs, threads: usize) -> Result<()> {
    let mut log = RunLog::new("synth", threads);
    let mut cfg = match &a.config {
        Some(path) => toml::from_str::<SynthConfig>(&read_text(path)?).map_err(|e| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            message: format!("{}: {}", path.display(), e.message()),
        })?,
        None => SynthConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(bits_a, bits_b, clip_len, seed, videos, frames, width, height, over_rate);
    cfg.validate()?;
    create_dir(&a.out)?;
    let videos = synthesize(&cfg)?;
    for (i, v) in videos.iter().enumerate() {
        write_video(&a.out, i, v, &cfg)?;
    }
    let cfg_text = toml::to_string(&cfg).map_err(|e| Error::Validation(e.to_string()))?;
    write_text(&a.out.join(SYNTH_CONFIG), &cfg_text)?;
    let mut windows = 0;
    for (name, dir) in list_videos(&a.out)? {
        let (tuple, _) = read_tuple(&dir)?;
        windows += tuple.gt.shape().frames.saturating_sub(cfg.clip_len);
        log.line(format!("{name}: max fold count {}", tuple.counts.max_count()));
    }
    let mut p = Provenance::new("synth");
    for line in cfg_text.lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            p.add(k, v);
        }
    }
    p.add("windows", windows);
    p.write(&a.out)?;
    log.finish(&a.out)
}

fn load_dataset(root: &Path) -> Result<(Vec<String>, Vec<DatasetTuple>, u32)> {
    let mut names = Vec::new();
    let mut tuples = Vec::new();
    let mut depth = None;
    for (name, dir) in list_videos(root)? {
        let (t, b) = read_tuple(&dir)?;
        if depth.is_some_and(|d| d != b) {
            return Err(Error::Validation(format!("{name} has a different bit depth")));
        }
        depth = Some(b);
        names.push(name);
        tuples.push(t);
    }
    Ok((names, tuples, depth.expect("list_videos is non-empty")))
}

fn pairs_of(tuples: &[DatasetTuple], clip_len: usize) -> Result<Vec<WindowPair>> {
    let mut out = Vec::new();
    for (i, t) in tuples.iter().enumerate() {
        out.extend(window_pairs(t, i, clip_len)?);
    }
    Ok(out)
}

pub fn train(a: TrainArgs, threads: usize) -> Result<()> {
    let mut log = RunLog::new("train", threads);
    let (names, tuples, bits_b) = load_dataset(&a.data)?;
    let bits_a = check_matches(a.bits_a, tuples[0].bits_a(), "bits-a")?;
    let mut cfg = match &a.model_config {
        Some(path) => ModelConfig::from_toml(&read_text(path)?)?,
        None => ModelConfig::default(),
    };
    cfg.bits_a = bits_a;
    cfg.channels = tuples[0].gt.shape().channels;
    cfg.seed = a.seed;
    if let Some(f) = a.fraction {
        cfg.fraction = f;
    }
    if let Some(r) = a.radius {
        cfg.radius = r;
    }
    if let Some(c) = a.clip_len {
        cfg.clip_len = c;
    }
    cfg.validate()?;
    if a.holdout >= tuples.len() {
        return Err(Error::Validation(format!(
            "holding out {} of {} videos leaves nothing to train on",
            a.holdout,
            tuples.len()
        )));
    }
    let (train_set, held) = tuples.split_at(tuples.len() - a.holdout);
    let pairs = pairs_of(train_set, cfg.clip_len)?;
    let tc = TrainConfig {
        steps: a.steps,
        batch: a.batch,
        lr: a.lr,
        seed: a.seed,
    };
    let mut model = SsvitModel::new(cfg.clone())?;
    log.line(format!("parameters: {}", model.param_count()));
    log.line(format!("training pairs: {}", pairs.len()));
    let report = train_with(&mut model, &pairs, &tc, |step, loss| {
        if step % 100 == 0 {
            eprintln!("step {step:>6}  loss {loss:.6}");
        }
    })?;
    create_dir(&a.out)?;
    save_checkpoint(&a.out.join("model.ckpt"), &model)?;
    write_text(&a.out.join("model.toml"), &cfg.to_toml())?;
    let mut curve = String::from("step\tloss\n");
    for (i, l) in report.losses.iter().enumerate() {
        let _ = writeln!(curve, "{i}\t{l:e}");
    }
    write_text(&a.out.join("losses.tsv"), &curve)?;
    let mut p = Provenance::new("train");
    p.add("data", a.data.display())
        .add("videos", names[..train_set.len()].join(","))
        .add("bits_a", bits_a)
        .add("bits_b", bits_b)
        .add("steps", tc.steps)
        .add("batch", tc.batch)
        .add("lr", format!("{:e}", tc.lr))
        .add("seed", tc.seed)
        .add("pairs", pairs.len())
        .add("parameters", model.param_count());
    for line in cfg.to_toml().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            p.add(&format!("model.{k}"), v);
        }
    }
    let blocks = report.block_means(5);
    p.add(
        "loss_block_means",
        blocks.iter().map(|b| format!("{b:.6}")).collect::<Vec<_>>().join(","),
    );
    if !held.is_empty() {
        let hp = pairs_of(held, cfg.clip_len)?;
        let m = evaluate_pairs(&model, held, &hp)?;
        p.add("holdout_videos", names[train_set.len()..].join(","))
            .add("holdout_pairs", m.pairs)
            .add("holdout_accuracy", format!("{:.6}", m.accuracy()))
            .add("holdout_zero_accuracy", format!("{:.6}", m.zero_accuracy()));
    }
    p.write(&a.out)?;
    log.finish(&a.out)
}

pub fn infer(a: InferArgs, threads: usize) -> Result<()> {
    let log = RunLog::new("infer", threads);
    let model = match (a.predictor, &a.model) {
        (PredictorKind::Ssvit, Some(path)) => {
            let mut m = load_checkpoint(path)?;
            if let Some(f) = a.fraction {
                m.set_fraction(f)?;
            }
            if let Some(r) = a.radius {
                let mut cfg = m.config().clone();
                cfg.radius = r;
                m = SsvitModel::from_params(cfg, m.params().clone())?;
            }
            Some(m)
        }
        (PredictorKind::Ssvit, None) => {
            return Err(Error::Validation("the ssvit predictor needs --model".into()));
        }
        _ => None,
    };
    let clip_len = match (&model, a.clip_len) {
        (Some(m), Some(c)) if c != m.config().clip_len => {
            return Err(Error::Validation(format!(
                "--clip-len {c} differs from the model's {}",
                m.config().clip_len
            )))
        }
        (Some(m), _) => m.config().clip_len,
        (None, c) => c.unwrap_or(4),
    };
    let mut p = Provenance::new("infer");
    p.add("input", a.input.display())
        .add("predictor", format!("{:?}", a.predictor).to_lowercase())
        .add("clip_len", clip_len);
    if let (Some(path), Some(m)) = (&a.model, &model) {
        p.add("model", path.display())
            .add("fraction", m.config().fraction)
            .add("radius", m.config().radius);
    }
    create_dir(&a.out)?;
    for (name, dir) in list_videos(&a.input)? {
        let (modulo, man) = read_int_clip(&dir.join("modulo"))?;
        let bits_a = check_matches(a.bits_a, modulo.bit_depth(), "bits-a")?;
        let bits_b = match (a.bits_b, man.bits_b) {
            (Some(b), _) | (None, Some(b)) => b,
            (None, None) => return Err(Error::Validation(format!("{name}: target depth unknown, pass --bits-b"))),
        };
        if let Some(m) = &model {
            check_matches(Some(bits_a), m.config().bits_a, "bits-a")?;
        }
        let mut stats = String::new();
        let rec = match a.predictor {
            PredictorKind::Oracle => {
                let mut pr = OraclePredictor::new(read_counts(&dir)?);
                sliding_window_reconstruct(&modulo, &mut pr, clip_len, bits_b)?
            }
            PredictorKind::FlowOnly => {
                let mut pr = FlowOnlyPredictor::new(
                    bits_a,
                    unmod_core::flow::DEFAULT_BLOCK,
                    unmod_core::flow::DEFAULT_RADIUS,
                );
                if dir.join("counts").is_dir() {
                    pr = pr.with_seed(read_counts(&dir)?.window(0, clip_len + 1)?);
                }
                sliding_window_reconstruct(&modulo, &mut pr, clip_len, bits_b)?
            }
            PredictorKind::Ssvit => {
                let mut pr = SsvitPredictor::new(model.clone().expect("checked above"));
                let rec = sliding_window_reconstruct(&modulo, &mut pr, clip_len, bits_b)?;
                let _ = writeln!(stats, "predictor_calls: {}", pr.calls());
                let _ = writeln!(stats, "transformer_macs: {}", pr.transformer_macs());
                rec
            }
        };
        let _ = writeln!(stats, "windows: {}", rec.windows);
        let its: Vec<String> = rec.iterations.iter().map(ToString::to_string).collect();
        let _ = writeln!(stats, "iterations: {}", its.join(","));
        let out = a.out.join(&name);
        let meta = ClipMeta::new("recon")
            .bits(bits_a, bits_b)
            .extra("video", &name)
            .extra("predictor", format!("{:?}", a.predictor).to_lowercase());
        write_int_clip(&out.join("recon"), &rec.video, &meta)?;
        write_text(&out.join("stats.txt"), &stats)?;
    }
    p.write(&a.out)?;
    log.finish(&a.out)
}

pub fn eval(a: EvalArgs, threads: usize) -> Result<()> {
    let log = RunLog::new("eval", threads);
    create_dir(&a.out)?;
    let mut table = String::from("video\tframe\tpsnr_db\tssim\n");
    let mut summary = String::new();
    let mut reports: Vec<QualityReport> = Vec::new();
    let single_gt = is_clip_dir(&a.data.join("gt"));
    for (name, dir) in list_videos(&a.recon)? {
        let (est, _) = read_int_clip(&dir.join("recon"))?;
        let gt_dir = if single_gt { a.data.join("gt") } else { a.data.join(&name).join("gt") };
        let (gt, _) = read_int_clip(&gt_dir)?;
        let report = evaluate_video(&gt, &est, a.exclude)?;
        for line in report.table().lines().skip(1) {
            let _ = writeln!(table, "{name}\t{line}");
        }
        let _ = writeln!(
            summary,
            "{name}: mean_psnr_db={:.6} mean_ssim={:.6} identical={}",
            report.mean_psnr(),
            report.mean_ssim(),
            report.all_identical()
        );
        reports.push(report);
    }
    let n = reports.len() as f64;
    let mean_psnr = reports.iter().map(QualityReport::mean_psnr).sum::<f64>() / n;
    let mean_ssim = reports.iter().map(QualityReport::mean_ssim).sum::<f64>() / n;
    let identical = reports.iter().all(QualityReport::all_identical);
    let _ = writeln!(
        summary,
        "overall: mean_psnr_db={mean_psnr:.6} mean_ssim={mean_ssim:.6} psnr={} exclude={} psnr_cap_db={PSNR_AVERAGE_CAP}",
        if identical { "inf".to_string() } else { format!("{mean_psnr:.6}") },
        a.exclude
    );
    write_text(&a.out.join("metrics.tsv"), &table)?;
    write_text(&a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    let mut p = Provenance::new("eval");
    p.add("data", a.data.display())
        .add("recon", a.recon.display())
        .add("exclude", a.exclude);
    p.write(&a.out)?;
    log.finish(&a.out)
}

fn read_any_clip(dir: &Path) -> Result<RealClip> {
    match read_manifest(dir)?.format {
        FrameFormat::Pfm => Ok(read_real_clip(dir)?.0),
        FrameFormat::Pgm16 => Ok(RealClip::from_int(&read_int_clip(dir)?.0)),
    }
}

pub fn tonemap(a: TonemapArgs, threads: usize) -> Result<()> {
    let log = RunLog::new("tonemap", threads);
    let hdr = read_any_clip(&a.input)?;
    let values = if a.per_frame {
        tonemap_per_frame_values(&hdr)?
    } else {
        tonemap_values(&hdr, a.smoothing)?
    };
    let ldr = IntClip::new(
        hdr.shape(),
        8,
        values.iter().map(|v| v.round().clamp(0.0, 255.0) as u32).collect(),
    )?;
    write_int_clip(&a.out.join("ldr"), &ldr, &ClipMeta::new("tonemapped"))?;
    let mut p = Provenance::new("tonemap");
    p.add("input", a.input.display())
        .add("mode", if a.per_frame { "per-frame" } else { "smoothed" })
        .add("smoothing", a.smoothing)
        .add("frame_mean_std", format!("{:.6}", frame_mean_std(&values, hdr.shape())));
    p.write(&a.out)?;
    log.finish(&a.out)
}

pub fn select(a: SelectArgs, threads: usize) -> Result<()> {
    let log = RunLog::new("select", threads);
    let (clip, _) = read_int_clip(&a.input)?;
    let bits_a = check_matches(a.bits_a, clip.bit_depth(), "bits-a")?;
    let model = match &a.model {
        Some(path) => load_checkpoint(path)?,
        None => SsvitModel::new(ModelConfig {
            channels: clip.shape().channels,
            clip_len: a.clip_len,
            bits_a,
            seed: a.seed,
            ..ModelConfig::default()
        })?,
    };
    let window = clip.window(a.start, model.config().window_frames())?;
    let encoded = model.bind(false).encode_frames(&window)?;
    let volume = encoded.tube_volume()?;
    let scores = score_volume(&volume, a.radius, KlVariant::Divergence)?;
    let selection = select_tokens(&volume, a.radius, a.fraction)?;
    let shape = unmod_core::modulo::ClipShape::new(scores.frames, scores.height, scores.width, 1);
    let heat = RealClip::new(shape, scores.scores.clone())?;
    write_real_clip(
        &a.out.join("nsm"),
        &heat,
        &ClipMeta::new("nsm-scores").extra("radius", a.radius).extra("start", a.start),
    )?;
    let mut listing = String::from("rank\tt\ty\tx\tscore\n");
    for (rank, c) in selection.selected.iter().enumerate() {
        let s = scores.scores[volume.linear(*c)];
        let _ = writeln!(listing, "{rank}\t{}\t{}\t{}\t{s:e}", c.t, c.y, c.x);
    }
    write_text(&a.out.join("selected.tsv"), &listing)?;
    let mut p = Provenance::new("select");
    p.add("input", a.input.display())
        .add("start", a.start)
        .add("radius", a.radius)
        .add("fraction", a.fraction)
        .add("selected", selection.selected.len())
        .add("positions", volume.positions())
        .add("degenerate", scores.degenerate);
    if let Some(m) = &a.model {
        p.add("model", m.display());
    } else {
        p.add("encoder_seed", a.seed);
    }
    p.write(&a.out)?;
    log.finish(&a.out)
}
