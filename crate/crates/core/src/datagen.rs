//! Seeded synthetic HDR scenes and the training/evaluation tuples derived
//! from them: re-exposure, quantisation, folding and LDR clipping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulo::{fold_clip, masks_from_counts, BinaryFoldMask, ClipShape, FoldCountMap, IntClip, RealClip};

/// A Gaussian highlight moving at constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub sigma: f64,
    pub amplitude: f64,
}

/// Fully explicit scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub frames: usize,
    pub background: f64,
    /// Ramp gain along `ramp_angle`, per frame width.
    pub ramp: f64,
    pub ramp_angle: f64,
    pub blobs: Vec<Blob>,
    /// Rescale so the brightest sample equals this value.
    pub peak: Option<f64>,
}

impl SceneSpec {
    pub fn shape(&self) -> ClipShape {
        ClipShape::new(self.frames, self.height, self.width, self.channels)
    }
}

/// Radiance of a blob-and-ramp scene. Channel `c` is attenuated by
/// `1 − 0.1·c`.
pub fn render_scene(spec: &SceneSpec) -> Result<RealClip> {
    let shape = spec.shape();
    if shape.is_empty() {
        return Err(Error::arg(format!("empty scene {shape}")));
    }
    if spec.background < 0.0 || spec.blobs.iter().any(|b| b.sigma <= 0.0 || b.amplitude < 0.0) {
        return Err(Error::arg("scene radiance terms must be non-negative with positive widths"));
    }
    let (cos, sin) = (spec.ramp_angle.cos(), spec.ramp_angle.sin());
    let mut data = Vec::with_capacity(shape.len());
    for t in 0..spec.frames {
        let tf = t as f64;
        for y in 0..spec.height {
            for x in 0..spec.width {
                let (xf, yf) = (x as f64, y as f64);
                let mut v = spec.background + spec.ramp * (cos * xf + sin * yf) / spec.width as f64;
                for b in &spec.blobs {
                    let dx = xf - b.x - b.vx * tf;
                    let dy = yf - b.y - b.vy * tf;
                    v += b.amplitude * (-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma)).exp();
                }
                for c in 0..spec.channels {
                    data.push(v * (1.0 - 0.1 * c as f64));
                }
            }
        }
    }
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        data.iter_mut().for_each(|v| *v -= min);
    }
    if let Some(peak) = spec.peak {
        let max = data.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            data.iter_mut().for_each(|v| *v *= peak / max);
        }
    }
    RealClip::new(shape, data)
}

/// Global exposure scale `s` so that a fraction `rate` of samples lands at
/// or above `2^A` after scaling. Returns the scaled clip and `s`.
pub fn re_expose(hdr: &RealClip, rate: f64, bits_a: u32) -> Result<(RealClip, f64)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::arg(format!("over-exposure rate {rate} outside [0, 1)")));
    }
    let limit = f64::from(1u32 << bits_a);
    let mut sorted = hdr.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let n_over = (rate * n as f64).round() as usize;
    let max = sorted.last().copied().unwrap_or(0.0);
    let scale = if n_over == 0 {
        if max < limit {
            1.0
        } else {
            let mut s = limit / max;
            while max * s >= limit {
                s = s.next_down();
            }
            s
        }
    } else {
        let threshold = sorted[n - n_over];
        if threshold <= 0.0 {
            return Err(Error::DegenerateInput(format!(
                "cannot saturate {n_over} of {n} samples: too few positive values"
            )));
        }
        let mut s = limit / threshold;
        while threshold * s < limit {
            s = s.next_up();
        }
        s
    };
    let data = hdr.data().iter().map(|v| v * scale).collect();
    Ok((RealClip::new(hdr.shape(), data)?, scale))
}

/// `floor(v)` clamped to `[0, 2^B − 1]`.
pub fn quantize(hdr: &RealClip, bits_b: u32) -> Result<IntClip> {
    let max = f64::from((1u32 << bits_b) - 1);
    if let Some(i) = hdr.data().iter().position(|&v| v < 0.0) {
        return Err(Error::data(format!("negative radiance at index {i}")));
    }
    let data = hdr.data().iter().map(|v| v.floor().min(max) as u32).collect();
    IntClip::new(hdr.shape(), bits_b, data)
}

/// Everything derived from one ground-truth clip.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTuple {
    pub gt: IntClip,
    pub modulo: IntClip,
    pub counts: FoldCountMap,
    pub masks: Vec<BinaryFoldMask>,
    /// Conventional sensor output: `min(gt, 2^A − 1)`.
    pub ldr: IntClip,
}

pub fn make_tuple(gt: &IntClip, bits_a: u32) -> Result<DatasetTuple> {
    let (modulo, counts) = fold_clip(gt, bits_a)?;
    let masks = masks_from_counts(&counts);
    let sat = (1u32 << bits_a) - 1;
    let ldr = IntClip::new(gt.shape(), bits_a, gt.data().iter().map(|&v| v.min(sat)).collect())?;
    Ok(DatasetTuple {
        gt: gt.clone(),
        modulo,
        counts,
        masks,
        ldr,
    })
}

impl DatasetTuple {
    pub fn bits_a(&self) -> u32 {
        self.modulo.bit_depth()
    }

    /// Re-derives every field from the ground truth and compares.
    pub fn check_consistency(&self) -> Result<()> {
        let fresh = make_tuple(&self.gt, self.bits_a())?;
        if &fresh != self {
            return Err(Error::Validation("tuple fields disagree with its ground truth".into()));
        }
        Ok(())
    }

    /// Running clip after `k` correct mask applications,
    /// `F_m + 2^A · min(L, k)`, for frames `start..start + len`.
    pub fn running_clip(&self, start: usize, len: usize, k: u32) -> Result<IntClip> {
        let modulo = self.modulo.window(start, len)?;
        let counts = self.counts.window(start, len)?;
        let a = self.bits_a();
        let data = modulo
            .data()
            .iter()
            .zip(counts.counts())
            .map(|(&m, &l)| m + (l.min(k) << a))
            .collect();
        IntClip::new(modulo.shape(), self.gt.bit_depth(), data)
    }

    /// Ground-truth mask of `order` for frames `start..start + len`
    /// (all zero past the largest count).
    pub fn target_mask(&self, start: usize, len: usize, order: u32) -> Result<BinaryFoldMask> {
        let counts = self.counts.window(start, len)?;
        let bits = counts.counts().iter().map(|&l| u8::from(l >= order)).collect();
        BinaryFoldMask::new(counts.shape(), order, bits)
    }
}

/// One supervised example: the running clip of a window after `order − 1`
/// steps and the mask of `order` it should predict.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub video: usize,
    pub start: usize,
    pub order: u32,
    pub clip: IntClip,
    pub target: BinaryFoldMask,
}

/// All (window, order) pairs of a video, including the terminal all-zero
/// target after the last fold.
pub fn window_pairs(tuple: &DatasetTuple, video: usize, clip_len: usize) -> Result<Vec<WindowPair>> {
    let frames = tuple.gt.shape().frames;
    if frames < clip_len + 1 {
        return Err(Error::arg(format!(
            "{frames}-frame video is shorter than a {}-frame window",
            clip_len + 1
        )));
    }
    let mut out = Vec::new();
    for start in 0..=frames - clip_len - 1 {
        let max = tuple.counts.window(start, clip_len + 1)?.max_count();
        for k in 0..=max {
            out.push(WindowPair {
                video,
                start,
                order: k + 1,
                clip: tuple.running_clip(start, clip_len + 1, k)?,
                target: tuple.target_mask(start, clip_len + 1, k + 1)?,
            });
        }
    }
    Ok(out)
}

/// Parameters of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub videos: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bits_a: u32,
    pub bits_b: u32,
    pub clip_len: usize,
    pub over_rate: f64,
    pub min_blobs: usize,
    pub max_blobs: usize,
    pub min_sigma: f64,
    pub max_sigma: f64,
    pub max_speed: f64,
    pub max_ramp: f64,
    pub background: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            videos: 8,
            frames: 12,
            width: 32,
            height: 32,
            channels: 1,
            bits_a: 8,
            bits_b: 12,
            clip_len: 4,
            over_rate: 0.7,
            min_blobs: 2,
            max_blobs: 4,
            min_sigma: 3.0,
            max_sigma: 8.0,
            max_speed: 1.0,
            max_ramp: 0.3,
            background: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.videos == 0 || self.width == 0 || self.height == 0 {
            return bad("dataset needs at least one non-empty video".into());
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("{} channels; use 1 or 3", self.channels));
        }
        if self.bits_a == 0 || self.bits_a >= self.bits_b || self.bits_b > 16 {
            return bad(format!(
                "depths A={} B={} must satisfy 0 < A < B <= 16",
                self.bits_a, self.bits_b
            ));
        }
        if self.clip_len == 0 || self.frames < self.clip_len + 1 {
            return bad(format!(
                "{} frames cannot hold a window of {}",
                self.frames,
                self.clip_len + 1
            ));
        }
        if !(0.0..1.0).contains(&self.over_rate) {
            return bad(format!("over_rate {} outside [0, 1)", self.over_rate));
        }
        if self.min_blobs > self.max_blobs || !(0.0 < self.min_sigma && self.min_sigma <= self.max_sigma) {
            return bad("blob count or width range is inverted".into());
        }
        if self.max_speed < 0.0 || self.max_ramp < 0.0 || self.background < 0.0 {
            return bad("speed, ramp and background must be non-negative".into());
        }
        Ok(())
    }

    /// Scene of video `index`, drawn from its own stream of the seed.
    pub fn scene(&self, index: usize) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let (w, h) = (self.width as f64, self.height as f64);
        let count = rng.random_range(self.min_blobs..=self.max_blobs);
        let (mx, my) = (w / 8.0, h / 8.0);
        let blobs = (0..count)
            .map(|_| {
                Blob {
                    y: rng.random_range(my..=h - my),
                    x: rng.random_range(mx..=w - mx),
                    vy: rng.random_range(-self.max_speed..=self.max_speed),
                    vx: rng.random_range(-self.max_speed..=self.max_speed),
                    sigma: rng.random_range(self.min_sigma..=self.max_sigma),
                    amplitude: rng.random_range(0.3..=1.0),
                }
            })
            .collect();
        let ramp_angle = rng.random_range(0.0..std::f64::consts::TAU);
        let ramp = rng.random_range(0.0..=self.max_ramp);
        SceneSpec {
            width: self.width,
            height: self.height,
            channels: self.channels,
            frames: self.frames,
            background: self.background,
            ramp,
            ramp_angle,
            blobs,
            peak: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub scene: SceneSpec,
    /// Re-exposed radiance.
    pub hdr: RealClip,
    pub exposure: f64,
    pub tuple: DatasetTuple,
}

pub fn synthesize_video(cfg: &SynthConfig, index: usize) -> Result<SyntheticVideo> {
    let scene = cfg.scene(index);
    let radiance = render_scene(&scene)?;
    let (hdr, exposure) = re_expose(&radiance, cfg.over_rate, cfg.bits_a)?;
    let gt = quantize(&hdr, cfg.bits_b)?;
    let tuple = make_tuple(&gt, cfg.bits_a)?;
    Ok(SyntheticVideo {
        scene,
        hdr,
        exposure,
        tuple,
    })
}

/// Videos `0..cfg.videos`; independent of the worker count.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<SyntheticVideo>> {
    cfg.validate()?;
    (0..cfg.videos)
        .into_par_iter()
        .map(|i| synthesize_video(cfg, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_scene() -> SceneSpec {
        SceneSpec {
            width: 6,
            height: 5,
            channels: 1,
            frames: 3,
            background: 0.4,
            ramp: 0.0,
            ramp_angle: 0.0,
            blobs: vec![],
            peak: None,
        }
    }

    #[test]
    fn flat_scene_is_constant() {
        let clip = render_scene(&flat_scene()).unwrap();
        assert!(clip.data().iter().all(|&v| v == 0.4));
    }

    #[test]
    fn peak_controls_fold_count() {
        let mut spec = SynthConfig::default().scene(3);
        spec.peak = Some(3.5 * 256.0);
        let gt = quantize(&render_scene(&spec).unwrap(), 12).unwrap();
        let (_, counts) = fold_clip(&gt, 8).unwrap();
        assert_eq!(counts.max_count(), 3);
    }

    #[test]
    fn quantize_examples() {
        let shape = ClipShape::new(1, 1, 3, 1);
        let clip = RealClip::new(shape, vec![0.9, 1024.0 + 5.0, 255.0]).unwrap();
        assert_eq!(quantize(&clip, 10).unwrap().data(), &[0, 1023, 255]);
    }

    #[test]
    fn re_expose_examples() {
        let shape = ClipShape::new(1, 10, 10, 1);
        let dim = RealClip::new(shape, (0..100).map(f64::from).collect()).unwrap();
        let (same, s) = re_expose(&dim, 0.0, 8).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(same, dim);

        let ramp = RealClip::new(shape, (0..100).map(|i| f64::from(i) / 99.0).collect()).unwrap();
        let (out, s) = re_expose(&ramp, 0.25, 8).unwrap();
        let q75 = 75.0 / 99.0;
        assert!((s - 256.0 / q75).abs() / s < 1e-12);
        assert_eq!(out.data().iter().filter(|&&v| v >= 256.0).count(), 25);

        let zero = RealClip::new(shape, vec![0.0; 100]).unwrap();
        assert!(matches!(re_expose(&zero, 0.1, 8), Err(Error::DegenerateInput(_))));
        assert!(re_expose(&ramp, 1.0, 8).is_err());
    }

    #[test]
    fn tuple_examples() {
        let shape = ClipShape::new(1, 1, 2, 1);
        let gt = IntClip::new(shape, 12, vec![300, 17]).unwrap();
        let t = make_tuple(&gt, 8).unwrap();
        assert_eq!(t.modulo.data(), &[44, 17]);
        assert_eq!(t.counts.counts(), &[1, 0]);
        assert_eq!(t.ldr.data(), &[255, 17]);
        t.check_consistency().unwrap();
    }

    #[test]
    fn pairs_cover_every_order_and_terminal() {
        let cfg = SynthConfig {
            videos: 1,
            bits_b: 10,
            ..SynthConfig::default()
        };
        let v = synthesize_video(&cfg, 0).unwrap();
        let pairs = window_pairs(&v.tuple, 0, 4).unwrap();
        let windows = cfg.frames - 4;
        assert_eq!(pairs.iter().filter(|p| p.order == 1).count(), windows);
        for p in &pairs {
            let max = v.tuple.counts.window(p.start, 5).unwrap().max_count();
            assert_eq!(p.target.is_zero(), p.order == max + 1);
        }
    }

    #[test]
    fn synthesis_is_seeded() {
        let cfg = SynthConfig {
            videos: 3,
            ..SynthConfig::default()
        };
        let a = synthesize(&cfg).unwrap();
        let b = synthesize(&cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].tuple.gt, a[1].tuple.gt);
        let measured = a[0].hdr.data().iter().filter(|&&v| v >= 256.0).count() as f64
            / a[0].hdr.data().len() as f64;
        assert!((measured - 0.7).abs() <= 1.0 / a[0].hdr.data().len() as f64 + 1e-12);
    }
}
