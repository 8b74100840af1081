use super::{apply_mask_update, masks_from_counts, BinaryFoldMask, FoldCountMap, IntClip};
use crate::error::{Error, Result};

/// Per-step fold-mask predictor `g`: given the running clip `F_m(k)`,
/// returns the mask of order `k + 1`.
pub trait MaskPredictor {
    /// Announces that the following predictions belong to the window whose
    /// first frame has stream index `start`.
    fn begin_window(&mut self, start: usize) -> Result<()> {
        let _ = start;
        Ok(())
    }

    fn predict(&mut self, clip: &IntClip, order: u32) -> Result<BinaryFoldMask>;
}

impl<P: MaskPredictor + ?Sized> MaskPredictor for &mut P {
    fn begin_window(&mut self, start: usize) -> Result<()> {
        (**self).begin_window(start)
    }

    fn predict(&mut self, clip: &IntClip, order: u32) -> Result<BinaryFoldMask> {
        (**self).predict(clip, order)
    }
}

impl<P: MaskPredictor + ?Sized> MaskPredictor for Box<P> {
    fn begin_window(&mut self, start: usize) -> Result<()> {
        (**self).begin_window(start)
    }

    fn predict(&mut self, clip: &IntClip, order: u32) -> Result<BinaryFoldMask> {
        (**self).predict(clip, order)
    }
}

/// Replays ground-truth masks from known fold counts.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    counts: FoldCountMap,
    start: usize,
}

impl OraclePredictor {
    /// `counts` may span a whole video; windows are selected through
    /// [`MaskPredictor::begin_window`].
    pub fn new(counts: FoldCountMap) -> Self {
        Self { counts, start: 0 }
    }
}

impl MaskPredictor for OraclePredictor {
    fn begin_window(&mut self, start: usize) -> Result<()> {
        self.start = start;
        Ok(())
    }

    fn predict(&mut self, clip: &IntClip, order: u32) -> Result<BinaryFoldMask> {
        let window = self.counts.window(self.start, clip.shape().frames)?;
        if window.shape() != clip.shape() {
            return Err(Error::PredictorContract(format!(
                "oracle counts {} do not cover clip {}",
                window.shape(),
                clip.shape()
            )));
        }
        let masks = masks_from_counts(&window);
        match masks.into_iter().nth(order as usize - 1) {
            Some(mask) => Ok(mask),
            None => BinaryFoldMask::zeros(clip.shape(), order),
        }
    }
}

/// Always predicts "no further folds"; reconstruction then equals the
/// modulo input.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl MaskPredictor for ZeroPredictor {
    fn predict(&mut self, clip: &IntClip, order: u32) -> Result<BinaryFoldMask> {
        BinaryFoldMask::zeros(clip.shape(), order)
    }
}

/// Result of iterating the predictor on one clip.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub clip: IntClip,
    /// Applied (nonzero) masks in order.
    pub masks: Vec<BinaryFoldMask>,
    /// Number of predictor invocations, including a final all-zero mask.
    pub predictor_calls: usize,
}

/// Iterative reconstruction of a modulo clip.
///
/// The input's bit depth is taken as `A`. Iteration stops at the first
/// all-zero mask or after `2^(B−A) − 1` applications, whichever is first.
pub fn run_inference<P: MaskPredictor + ?Sized>(
    clip_m: &IntClip,
    predictor: &mut P,
    bits_b: u32,
) -> Result<Reconstruction> {
    let bits_a = clip_m.bit_depth();
    if bits_a >= bits_b {
        return Err(Error::arg(format!(
            "target depth B={bits_b} must exceed the modulo depth A={bits_a}"
        )));
    }
    if bits_b > 31 || bits_b - bits_a > 24 {
        return Err(Error::arg(format!("unsupported depth pair A={bits_a}, B={bits_b}")));
    }
    let max_orders = (1u32 << (bits_b - bits_a)) - 1;
    let mut current = clip_m.clone();
    let mut masks = Vec::new();
    let mut calls = 0;
    for order in 1..=max_orders {
        let mask = predictor.predict(&current, order)?;
        calls += 1;
        if mask.shape() != current.shape() {
            return Err(Error::PredictorContract(format!(
                "predicted mask {} for clip {}",
                mask.shape(),
                current.shape()
            )));
        }
        if mask.order() != order {
            return Err(Error::PredictorContract(format!(
                "asked for order {order}, got {}",
                mask.order()
            )));
        }
        if mask.is_zero() {
            break;
        }
        current = apply_mask_update(&current, &mask, bits_a)?;
        masks.push(mask);
    }
    Ok(Reconstruction {
        clip: current.with_bit_depth(bits_b)?,
        masks,
        predictor_calls: calls,
    })
}

/// Reconstruction of a whole stream with a step-1 sliding window.
#[derive(Debug, Clone)]
pub struct StreamReconstruction {
    /// One reconstructed frame per input frame.
    pub video: IntClip,
    /// Number of windows processed (`frames − n_c`).
    pub windows: usize,
    /// Nonzero masks applied in each window.
    pub iterations: Vec<usize>,
}

/// Runs [`run_inference`] on every window `{T − n_c, …, T}` and keeps the
/// last frame of each. Frames `0..n_c` come from the first window.
pub fn sliding_window_reconstruct<P: MaskPredictor + ?Sized>(
    video: &IntClip,
    predictor: &mut P,
    clip_len: usize,
    bits_b: u32,
) -> Result<StreamReconstruction> {
    let frames = video.shape().frames;
    if clip_len == 0 || frames < clip_len + 1 {
        return Err(Error::arg(format!(
            "video of {frames} frames is shorter than a window of {}",
            clip_len + 1
        )));
    }
    let windows = frames - clip_len;
    let mut parts = Vec::with_capacity(frames);
    let mut iterations = Vec::with_capacity(windows);
    for start in 0..windows {
        predictor.begin_window(start)?;
        let window = video.window(start, clip_len + 1)?;
        let rec = run_inference(&window, predictor, bits_b)?;
        iterations.push(rec.masks.len());
        if start == 0 {
            parts.push(rec.clip);
        } else {
            parts.push(rec.clip.window(clip_len, 1)?);
        }
    }
    Ok(StreamReconstruction {
        video: IntClip::concat(&parts)?.with_bit_depth(bits_b)?,
        windows,
        iterations,
    })
}
