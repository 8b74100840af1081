//! Folding model and iterative fold-mask reconstruction.
//!
//! A modulo sensor with `A` bits keeps only the low bits of the true value:
//! `F_m = F mod 2^A`, so `F = F_m + 2^A · L` for the per-sample fold count
//! `L`. The count is factorised into nested binary masks `M(k) = [L >= k]`,
//! and reconstruction adds one mask per iteration:
//! `F_m(k+1) = F_m(k) + 2^A · M(k+1)`.

mod clip;
mod inference;

pub use clip::{BinaryFoldMask, ClipShape, FoldCountMap, IntClip, RealClip};
pub use inference::{
    run_inference, sliding_window_reconstruct, MaskPredictor, OraclePredictor, Reconstruction,
    StreamReconstruction, ZeroPredictor,
};

use crate::error::{Error, Result};

/// Folds a `B`-bit clip down to `target_bits` (`A`) bits.
///
/// Returns the modulo clip and the exact fold counts.
pub fn fold_clip(clip: &IntClip, target_bits: u32) -> Result<(IntClip, FoldCountMap)> {
    clip::check_bit_depth(target_bits)?;
    if target_bits >= clip.bit_depth() {
        return Err(Error::arg(format!(
            "target depth A={target_bits} must be below the clip depth B={}",
            clip.bit_depth()
        )));
    }
    let mask = (1u32 << target_bits) - 1;
    let (folded, counts): (Vec<u32>, Vec<u32>) = clip
        .data()
        .iter()
        .map(|&v| (v & mask, v >> target_bits))
        .unzip();
    Ok((
        IntClip::new(clip.shape(), target_bits, folded)?,
        FoldCountMap::new(clip.shape(), counts)?,
    ))
}

/// Factorises fold counts into nested binary masks `M(1), M(2), …, M(max L)`.
pub fn masks_from_counts(counts: &FoldCountMap) -> Vec<BinaryFoldMask> {
    let max = counts.max_count();
    (1..=max)
        .map(|k| {
            let bits = counts.counts().iter().map(|&l| u8::from(l >= k)).collect();
            BinaryFoldMask::new(counts.shape(), k, bits).expect("shape taken from counts")
        })
        .collect()
}

fn bits_needed(v: u32) -> u32 {
    (u32::BITS - v.leading_zeros()).max(1)
}

/// One reconstruction step: `out = clip + 2^A · mask`.
///
/// The result keeps full integer width; its bit depth grows when a sample
/// crosses the current limit.
pub fn apply_mask_update(clip: &IntClip, mask: &BinaryFoldMask, bits_a: u32) -> Result<IntClip> {
    if clip.shape() != mask.shape() {
        return Err(Error::arg(format!(
            "mask shape {} does not match clip {}",
            mask.shape(),
            clip.shape()
        )));
    }
    clip::check_bit_depth(bits_a)?;
    let step = 1u32 << bits_a;
    let mut max = 0u32;
    let mut data = Vec::with_capacity(clip.data().len());
    for (&v, &m) in clip.data().iter().zip(mask.bits()) {
        let out = v
            .checked_add(step * u32::from(m))
            .ok_or_else(|| Error::data("reconstruction overflowed 32-bit samples"))?;
        max = max.max(out);
        data.push(out);
    }
    let depth = clip.bit_depth().max(bits_needed(max));
    IntClip::new(clip.shape(), depth, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: u32, bits: u32) -> IntClip {
        IntClip::new(ClipShape::new(1, 1, 1, 1), bits, vec![v]).unwrap()
    }

    #[test]
    fn fold_examples() {
        let (m, l) = fold_clip(&single(100, 12), 8).unwrap();
        assert_eq!((m.data()[0], l.counts()[0]), (100, 0));
        let (m, l) = fold_clip(&single(4095, 12), 8).unwrap();
        assert_eq!((m.data()[0], l.counts()[0]), (255, 15));
        let (m, l) = fold_clip(&single(256, 12), 8).unwrap();
        assert_eq!((m.data()[0], l.counts()[0]), (0, 1));
        assert_eq!(m.bit_depth(), 8);
    }

    #[test]
    fn fold_rejects_non_reducing_depth() {
        let clip = single(3, 8);
        assert!(matches!(fold_clip(&clip, 8), Err(Error::InvalidArgument(_))));
        assert!(matches!(fold_clip(&clip, 9), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn masks_from_counts_examples() {
        let shape = ClipShape::new(1, 1, 3, 1);
        let counts = FoldCountMap::new(shape, vec![0, 1, 2]).unwrap();
        let masks = masks_from_counts(&counts);
        assert_eq!(masks.len(), 2);
        assert_eq!(masks[0].bits(), &[0, 1, 1]);
        assert_eq!(masks[1].bits(), &[0, 0, 1]);
        assert_eq!(masks[1].order(), 2);

        let three = FoldCountMap::new(ClipShape::new(1, 1, 1, 1), vec![3]).unwrap();
        let masks = masks_from_counts(&three);
        assert_eq!(masks.len(), 3);
        assert!(masks.iter().all(|m| m.bits() == [1]));

        let zero = FoldCountMap::new(shape, vec![0; 3]).unwrap();
        assert!(masks_from_counts(&zero).is_empty());
    }

    #[test]
    fn update_examples() {
        let shape = ClipShape::new(1, 1, 1, 1);
        let one = BinaryFoldMask::new(shape, 1, vec![1]).unwrap();
        let out = apply_mask_update(&single(255, 8), &one, 8).unwrap();
        assert_eq!(out.data(), &[511]);
        assert_eq!(out.bit_depth(), 9);

        let zero = BinaryFoldMask::zeros(shape, 1).unwrap();
        let clip = single(17, 8);
        assert_eq!(apply_mask_update(&clip, &zero, 8).unwrap(), clip);

        let two = BinaryFoldMask::new(shape, 2, vec![1]).unwrap();
        let a = apply_mask_update(&clip, &one, 8).unwrap();
        let b = apply_mask_update(&a, &two, 8).unwrap();
        assert_eq!(b.data(), &[17 + 512]);
    }

    #[test]
    fn update_rejects_shape_mismatch() {
        let mask = BinaryFoldMask::zeros(ClipShape::new(1, 1, 2, 1), 1).unwrap();
        assert!(matches!(
            apply_mask_update(&single(1, 8), &mask, 8),
            Err(Error::InvalidArgument(_))
        ));
    }
}
