//! Quality metrics and display tone mapping.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::FrameDims;
use crate::modulo::{ClipShape, IntClip, RealClip};

pub const DEFAULT_EXCLUDE: usize = 4;
pub const DEFAULT_SMOOTHING: f64 = 0.9;
/// Identical frames count as this many dB when averaging.
pub const PSNR_AVERAGE_CAP: f64 = 100.0;

/// Peak signal-to-noise ratio; identical inputs have no finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Identical,
}

impl Psnr {
    pub fn is_identical(&self) -> bool {
        matches!(self, Psnr::Identical)
    }

    pub fn capped(&self, cap: f64) -> f64 {
        match *self {
            Psnr::Finite(v) => v.min(cap),
            Psnr::Identical => cap,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Identical => f.write_str("inf"),
        }
    }
}

fn interior(dims: FrameDims, exclude: usize) -> Result<(usize, usize, usize, usize)> {
    if 2 * exclude >= dims.height || 2 * exclude >= dims.width {
        return Err(Error::arg(format!(
            "excluding {exclude} border pixels leaves nothing of a {}x{} frame",
            dims.width, dims.height
        )));
    }
    Ok((exclude, dims.height - exclude, exclude, dims.width - exclude))
}

fn check_pair(gt: &[f64], est: &[f64], dims: FrameDims) -> Result<()> {
    if gt.len() != est.len() || gt.len() != dims.len() {
        return Err(Error::arg(format!(
            "frame sizes {} and {} for {}x{}x{}",
            gt.len(),
            est.len(),
            dims.height,
            dims.width,
            dims.channels
        )));
    }
    Ok(())
}

/// Interior samples of a frame in raster order.
fn crop(frame: &[f64], dims: FrameDims, exclude: usize) -> Result<Vec<f64>> {
    let (y0, y1, x0, x1) = interior(dims, exclude)?;
    let ch = dims.channels;
    let mut out = Vec::with_capacity((y1 - y0) * (x1 - x0) * ch);
    for y in y0..y1 {
        let row = y * dims.width * ch;
        out.extend_from_slice(&frame[row + x0 * ch..row + x1 * ch]);
    }
    Ok(out)
}

/// `20 log10(max(gt) / sqrt(MSE))` over the frame interior.
pub fn psnr(gt: &[f64], est: &[f64], dims: FrameDims, exclude: usize) -> Result<Psnr> {
    check_pair(gt, est, dims)?;
    let a = crop(gt, dims, exclude)?;
    let b = crop(est, dims, exclude)?;
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(Psnr::Identical);
    }
    let peak = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak <= 0.0 {
        return Err(Error::DegenerateInput(
            "ground-truth interior has no positive peak".into(),
        ));
    }
    Ok(Psnr::Finite(20.0 * (peak / mse.sqrt()).log10()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SsimOptions {
    /// Dynamic range for the stabilising constants; defaults to `max(gt)`
    /// over the interior (or 1 when that is zero).
    pub dynamic_range: Option<f64>,
    /// Mean of 11×11 Gaussian-windowed SSIM instead of global statistics.
    pub windowed: bool,
}

pub fn ssim(gt: &[f64], est: &[f64], dims: FrameDims, exclude: usize) -> Result<f64> {
    ssim_with(gt, est, dims, exclude, SsimOptions::default())
}

pub fn ssim_with(gt: &[f64], est: &[f64], dims: FrameDims, exclude: usize, opts: SsimOptions) -> Result<f64> {
    check_pair(gt, est, dims)?;
    let a = crop(gt, dims, exclude)?;
    let b = crop(est, dims, exclude)?;
    let range = match opts.dynamic_range {
        Some(d) if d > 0.0 => d,
        Some(d) => return Err(Error::arg(format!("dynamic range {d} must be positive"))),
        None => {
            let peak = a.iter().copied().fold(0.0, f64::max);
            if peak > 0.0 {
                peak
            } else {
                1.0
            }
        }
    };
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    if !opts.windowed {
        return Ok(ssim_stats(&a, &b, c1, c2));
    }
    let (y0, y1, x0, x1) = interior(dims, exclude)?;
    windowed_ssim(&a, &b, FrameDims::new(y1 - y0, x1 - x0, dims.channels), c1, c2)
}

fn ssim_stats(a: &[f64], b: &[f64], c1: f64, c2: f64) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut cov = 0.0;
    for (x, y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    va /= n;
    vb /= n;
    cov /= n;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let half = (WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..WINDOW * WINDOW)
        .map(|i| {
            let dy = (i / WINDOW) as f64 - half;
            let dx = (i % WINDOW) as f64 - half;
            (-(dx * dx + dy * dy) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn windowed_ssim(a: &[f64], b: &[f64], dims: FrameDims, c1: f64, c2: f64) -> Result<f64> {
    if dims.height < WINDOW || dims.width < WINDOW {
        return Err(Error::arg(format!(
            "windowed SSIM needs at least {WINDOW}x{WINDOW} interior pixels"
        )));
    }
    let g = gaussian_window();
    let ch = dims.channels;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        for y in 0..=dims.height - WINDOW {
            for x in 0..=dims.width - WINDOW {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for wy in 0..WINDOW {
                    for wx in 0..WINDOW {
                        let k = g[wy * WINDOW + wx];
                        let i = ((y + wy) * dims.width + x + wx) * ch + c;
                        ma += k * a[i];
                        mb += k * b[i];
                        saa += k * a[i] * a[i];
                        sbb += k * b[i] * b[i];
                        sab += k * a[i] * b[i];
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Per-frame metrics for a reconstructed video.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub exclude: usize,
    pub psnr: Vec<Psnr>,
    pub ssim: Vec<f64>,
}

impl QualityReport {
    /// Mean PSNR with identical frames counted at [`PSNR_AVERAGE_CAP`].
    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().map(|p| p.capped(PSNR_AVERAGE_CAP)).sum::<f64>() / self.psnr.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.ssim.iter().sum::<f64>() / self.ssim.len().max(1) as f64
    }

    pub fn all_identical(&self) -> bool {
        self.psnr.iter().all(Psnr::is_identical)
    }

    /// Plain-text table: frame index, PSNR, SSIM.
    pub fn table(&self) -> String {
        let mut s = String::from("frame\tpsnr_db\tssim\n");
        for (i, (p, q)) in self.psnr.iter().zip(&self.ssim).enumerate() {
            s.push_str(&format!("{i}\t{p}\t{q:.6}\n"));
        }
        s
    }

    /// `key=value` summary lines.
    pub fn summary(&self) -> String {
        format!(
            "frames={}\nexclude={}\nmean_psnr_db={:.6}\nmean_ssim={:.6}\nidentical_frames={}\npsnr_cap_db={}\n",
            self.psnr.len(),
            self.exclude,
            self.mean_psnr(),
            self.mean_ssim(),
            self.psnr.iter().filter(|p| p.is_identical()).count(),
            PSNR_AVERAGE_CAP
        )
    }
}

pub fn evaluate_video(gt: &IntClip, est: &IntClip, exclude: usize) -> Result<QualityReport> {
    let gt = RealClip::from_int(gt);
    let est = RealClip::from_int(est);
    evaluate_real(&gt, &est, exclude)
}

pub fn evaluate_real(gt: &RealClip, est: &RealClip, exclude: usize) -> Result<QualityReport> {
    if gt.shape() != est.shape() {
        return Err(Error::arg(format!(
            "ground truth {} vs estimate {}",
            gt.shape(),
            est.shape()
        )));
    }
    let s = gt.shape();
    let dims = FrameDims::new(s.height, s.width, s.channels);
    let rows: Vec<(Psnr, f64)> = (0..s.frames)
        .into_par_iter()
        .map(|t| {
            let p = psnr(gt.frame(t), est.frame(t), dims, exclude)?;
            let q = ssim(gt.frame(t), est.frame(t), dims, exclude)?;
            Ok((p, q))
        })
        .collect::<Result<_>>()?;
    let (psnr, ssim) = rows.into_iter().unzip();
    Ok(QualityReport {
        exclude,
        psnr,
        ssim,
    })
}

fn frame_luminance_means(hdr: &RealClip) -> Vec<f64> {
    let s = hdr.shape();
    (0..s.frames)
        .map(|t| hdr.frame(t).iter().sum::<f64>() / s.frame_len().max(1) as f64)
        .collect()
}

fn check_non_negative(hdr: &RealClip) -> Result<()> {
    if let Some(i) = hdr.data().iter().position(|&v| v < 0.0) {
        return Err(Error::data(format!("negative radiance at index {i}")));
    }
    Ok(())
}

fn to_display(shape: ClipShape, values: Vec<f64>) -> Result<IntClip> {
    let data = values
        .into_iter()
        .map(|v| (v.round() as u32).min(255))
        .collect();
    IntClip::new(shape, 8, data)
}

/// Global Reinhard mapping keyed by the whole video's mean luminance, with
/// per-frame brightness pulled toward an exponentially smoothed mean.
/// Returns unquantised display values in `[0, 255)`.
pub fn tonemap_values(hdr: &RealClip, smoothing: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::arg(format!("smoothing {smoothing} outside [0, 1)")));
    }
    check_non_negative(hdr)?;
    let s = hdr.shape();
    let means = frame_luminance_means(hdr);
    let global = means.iter().sum::<f64>() / means.len().max(1) as f64;
    if global == 0.0 {
        return Ok(vec![0.0; hdr.data().len()]);
    }
    let mut out = Vec::with_capacity(hdr.data().len());
    let mut smoothed = means.first().copied().unwrap_or(0.0);
    for (t, &m) in means.iter().enumerate() {
        if t > 0 {
            smoothed = smoothing * smoothed + (1.0 - smoothing) * m;
        }
        let gain = if m > 0.0 { smoothed / m } else { 1.0 };
        out.extend(hdr.frame(t).iter().map(|&v| {
            let v = v * gain;
            255.0 * v / (v + global)
        }));
    }
    debug_assert_eq!(out.len(), s.len());
    Ok(out)
}

pub fn tonemap_video(hdr: &RealClip, smoothing: f64) -> Result<IntClip> {
    to_display(hdr.shape(), tonemap_values(hdr, smoothing)?)
}

/// Reinhard applied to each frame independently, keyed by that frame's
/// own mean luminance.
pub fn tonemap_per_frame_values(hdr: &RealClip) -> Result<Vec<f64>> {
    check_non_negative(hdr)?;
    let means = frame_luminance_means(hdr);
    let mut out = Vec::with_capacity(hdr.data().len());
    for (t, &m) in means.iter().enumerate() {
        out.extend(hdr.frame(t).iter().map(|&v| if m > 0.0 { 255.0 * v / (v + m) } else { 0.0 }));
    }
    Ok(out)
}

pub fn tonemap_per_frame(hdr: &RealClip) -> Result<IntClip> {
    to_display(hdr.shape(), tonemap_per_frame_values(hdr)?)
}

/// Population standard deviation of per-frame means.
pub fn frame_mean_std(values: &[f64], shape: ClipShape) -> f64 {
    let n = shape.frame_len();
    let means: Vec<f64> = values.chunks_exact(n).map(|f| f.iter().sum::<f64>() / n as f64).collect();
    let mu = means.iter().sum::<f64>() / means.len() as f64;
    (means.iter().map(|m| (m - mu) * (m - mu)).sum::<f64>() / means.len() as f64).sqrt()
}
