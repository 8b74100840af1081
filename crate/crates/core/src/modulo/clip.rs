use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of a clip: `frames × height × width × channels`, stored in
/// that order (channels fastest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClipShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ClipShape {
    pub const fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples in a single frame.
    pub const fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    #[inline]
    pub const fn index(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.height + y) * self.width + x) * self.channels + c
    }

    pub const fn with_frames(&self, frames: usize) -> Self {
        Self { frames, ..*self }
    }
}

impl std::fmt::Display for ClipShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.frames, self.height, self.width, self.channels
        )
    }
}

pub(crate) fn check_bit_depth(bits: u32) -> Result<()> {
    if bits == 0 || bits > 31 {
        return Err(Error::arg(format!("bit depth {bits} outside 1..=31")));
    }
    Ok(())
}

/// Integer-valued video clip at a declared bit depth.
///
/// Every sample satisfies `0 <= v < 2^bit_depth`. Used for ground-truth
/// high-bit clips, folded modulo clips and the running reconstruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntClip {
    shape: ClipShape,
    bit_depth: u32,
    data: Vec<u32>,
}

impl IntClip {
    pub fn new(shape: ClipShape, bit_depth: u32, data: Vec<u32>) -> Result<Self> {
        check_bit_depth(bit_depth)?;
        if data.len() != shape.len() {
            return Err(Error::arg(format!(
                "clip {shape} needs {} samples, got {}",
                shape.len(),
                data.len()
            )));
        }
        let limit = 1u64 << bit_depth;
        if let Some(pos) = data.iter().position(|&v| u64::from(v) >= limit) {
            return Err(Error::data(format!(
                "sample {} at index {pos} does not fit in {bit_depth} bits",
                data[pos]
            )));
        }
        Ok(Self {
            shape,
            bit_depth,
            data,
        })
    }

    /// Builds a clip from signed samples, rejecting negative values.
    pub fn from_signed(shape: ClipShape, bit_depth: u32, data: &[i64]) -> Result<Self> {
        let mut out = Vec::with_capacity(data.len());
        for (i, &v) in data.iter().enumerate() {
            if v < 0 {
                return Err(Error::data(format!("negative sample {v} at index {i}")));
            }
            let v = u32::try_from(v)
                .map_err(|_| Error::data(format!("sample {v} at index {i} overflows")))?;
            out.push(v);
        }
        Self::new(shape, bit_depth, out)
    }

    pub fn zeros(shape: ClipShape, bit_depth: u32) -> Result<Self> {
        Self::new(shape, bit_depth, vec![0; shape.len()])
    }

    pub fn shape(&self) -> ClipShape {
        self.shape
    }

    pub fn bit_depth(&self) -> u32 {
        self.bit_depth
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u32> {
        self.data
    }

    pub fn get(&self, t: usize, y: usize, x: usize, c: usize) -> u32 {
        self.data[self.shape.index(t, y, x, c)]
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        let n = self.shape.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn max_value(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Copy of frames `start..start + count`.
    pub fn window(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.frames || count == 0 {
            return Err(Error::arg(format!(
                "window {start}..{} outside clip of {} frames",
                start + count,
                self.shape.frames
            )));
        }
        let n = self.shape.frame_len();
        Ok(Self {
            shape: self.shape.with_frames(count),
            bit_depth: self.bit_depth,
            data: self.data[start * n..(start + count) * n].to_vec(),
        })
    }

    /// Same samples, relabelled with another bit depth (validated).
    pub fn with_bit_depth(self, bit_depth: u32) -> Result<Self> {
        Self::new(self.shape, bit_depth, self.data)
    }

    /// Concatenates clips of equal frame geometry along time. The result
    /// takes the largest bit depth among the parts.
    pub fn concat(parts: &[IntClip]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("cannot concatenate zero clips"))?;
        let mut frames = 0;
        let mut bit_depth = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape.with_frames(0) != first.shape.with_frames(0) {
                return Err(Error::arg(format!(
                    "frame geometry mismatch: {} vs {}",
                    p.shape, first.shape
                )));
            }
            frames += p.shape.frames;
            bit_depth = bit_depth.max(p.bit_depth);
            data.extend_from_slice(&p.data);
        }
        Self::new(first.shape.with_frames(frames), bit_depth, data)
    }

    /// Samples normalised by `2^bits` as doubles.
    pub fn normalized(&self, bits: u32) -> Vec<f64> {
        let scale = (1u64 << bits) as f64;
        self.data.iter().map(|&v| f64::from(v) / scale).collect()
    }
}

/// Real-valued (radiance) clip with the same layout as [`IntClip`].
#[derive(Debug, Clone, PartialEq)]
pub struct RealClip {
    shape: ClipShape,
    data: Vec<f64>,
}

impl RealClip {
    pub fn new(shape: ClipShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::arg(format!(
                "clip {shape} needs {} samples, got {}",
                shape.len(),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite sample at index {pos}")));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> ClipShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.shape.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn from_int(clip: &IntClip) -> Self {
        Self {
            shape: clip.shape,
            data: clip.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Per-sample fold counts `L`, with `F = F_m + 2^A · L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldCountMap {
    shape: ClipShape,
    counts: Vec<u32>,
}

impl FoldCountMap {
    pub fn new(shape: ClipShape, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != shape.len() {
            return Err(Error::arg(format!(
                "count map {shape} needs {} entries, got {}",
                shape.len(),
                counts.len()
            )));
        }
        Ok(Self { shape, counts })
    }

    pub fn shape(&self) -> ClipShape {
        self.shape
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn window(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.frames || count == 0 {
            return Err(Error::arg(format!(
                "window {start}..{} outside count map of {} frames",
                start + count,
                self.shape.frames
            )));
        }
        let n = self.shape.frame_len();
        Ok(Self {
            shape: self.shape.with_frames(count),
            counts: self.counts[start * n..(start + count) * n].to_vec(),
        })
    }
}

/// Binary folding mask of order `k`: 1 where the fold count is at least `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryFoldMask {
    shape: ClipShape,
    order: u32,
    bits: Vec<u8>,
}

impl BinaryFoldMask {
    pub fn new(shape: ClipShape, order: u32, bits: Vec<u8>) -> Result<Self> {
        if order == 0 {
            return Err(Error::arg("mask order starts at 1"));
        }
        if bits.len() != shape.len() {
            return Err(Error::arg(format!(
                "mask {shape} needs {} entries, got {}",
                shape.len(),
                bits.len()
            )));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::data(format!(
                "mask value {} at index {pos} is not binary",
                bits[pos]
            )));
        }
        Ok(Self { shape, order, bits })
    }

    pub fn zeros(shape: ClipShape, order: u32) -> Result<Self> {
        Self::new(shape, order, vec![0; shape.len()])
    }

    pub fn shape(&self) -> ClipShape {
        self.shape
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.bits
    }

    pub fn is_zero(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.shape.frame_len();
        &self.bits[t * n..(t + 1) * n]
    }

    pub fn with_order(self, order: u32) -> Result<Self> {
        Self::new(self.shape, order, self.bits)
    }

    pub fn window(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.frames || count == 0 {
            return Err(Error::arg(format!(
                "window {start}..{} outside mask of {} frames",
                start + count,
                self.shape.frames
            )));
        }
        let n = self.shape.frame_len();
        Ok(Self {
            shape: self.shape.with_frames(count),
            order: self.order,
            bits: self.bits[start * n..(start + count) * n].to_vec(),
        })
    }
}
