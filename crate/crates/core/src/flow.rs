//! Exhaustive block-matching motion estimation and nearest-neighbour mask
//! warping.
//!
//! A displacement `(dx, dy)` for a block of the current frame means the
//! block's content came from `(x − dx, y − dy)` in the previous frame, so
//! warping pulls `out[x, y] = prev[x − dx, y − dy]`.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::modulo::BinaryFoldMask;

pub const DEFAULT_BLOCK: usize = 8;
pub const DEFAULT_RADIUS: usize = 7;

/// Frame geometry for interleaved `height × width × channels` planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl FrameDims {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-block integer displacements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowField {
    pub block: usize,
    pub radius: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    /// `(dx, dy)` per block, raster order.
    pub vectors: Vec<(i32, i32)>,
}

impl FlowField {
    pub fn zero(dims: FrameDims, block: usize, radius: usize) -> Result<Self> {
        check_geometry(dims, block)?;
        let grid_w = dims.width.div_ceil(block);
        let grid_h = dims.height.div_ceil(block);
        Ok(Self {
            block,
            radius,
            grid_w,
            grid_h,
            vectors: vec![(0, 0); grid_w * grid_h],
        })
    }

    /// Displacement governing pixel `(x, y)`.
    pub fn at(&self, x: usize, y: usize) -> (i32, i32) {
        let bx = (x / self.block).min(self.grid_w - 1);
        let by = (y / self.block).min(self.grid_h - 1);
        self.vectors[by * self.grid_w + bx]
    }

    pub fn negated(&self) -> Self {
        Self {
            vectors: self.vectors.iter().map(|&(dx, dy)| (-dx, -dy)).collect(),
            ..self.clone()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.vectors.iter().all(|&v| v == (0, 0))
    }

    /// Text dump: a header line followed by one `dx dy` row per block.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "flow block {} radius {} grid {} {}\n",
            self.block, self.radius, self.grid_w, self.grid_h
        );
        for (dx, dy) in &self.vectors {
            let _ = writeln!(s, "{dx} {dy}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut offset = 0;
        let mut lines = text.split_inclusive('\n').map(|l| {
            let start = offset;
            offset += l.len();
            (start, l.trim_end_matches(['\r', '\n']))
        });
        let (_, header) = lines.next().ok_or_else(|| Error::parse(0, "empty flow dump"))?;
        let f: Vec<&str> = header.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            f.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(0, format!("bad flow header {header:?}")))
        };
        if f.len() != 8 || f[0] != "flow" || f[1] != "block" || f[3] != "radius" || f[5] != "grid" {
            return Err(Error::parse(0, format!("bad flow header {header:?}")));
        }
        let (block, radius, grid_w, grid_h) = (num(2)?, num(4)?, num(6)?, num(7)?);
        let mut vectors = Vec::with_capacity(grid_w * grid_h);
        for (at, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<i32>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(dx)), Some(Ok(dy)), None) => vectors.push((dx, dy)),
                _ => return Err(Error::parse(at, format!("bad flow row {line:?}"))),
            }
        }
        if vectors.len() != grid_w * grid_h || block == 0 {
            return Err(Error::parse(
                text.len(),
                format!("expected {} rows, found {}", grid_w * grid_h, vectors.len()),
            ));
        }
        Ok(Self {
            block,
            radius,
            grid_w,
            grid_h,
            vectors,
        })
    }
}

fn check_geometry(dims: FrameDims, block: usize) -> Result<()> {
    if block == 0 {
        return Err(Error::arg("block size must be positive"));
    }
    if dims.is_empty() {
        return Err(Error::arg("empty frame"));
    }
    if block > dims.width || block > dims.height {
        return Err(Error::arg(format!(
            "block {block} larger than frame {}x{}",
            dims.width, dims.height
        )));
    }
    Ok(())
}

/// Candidate displacements ordered by `|dx| + |dy|`, then raster order.
fn candidates(radius: usize) -> Vec<(i32, i32)> {
    let r = radius as i32;
    let mut c: Vec<(i32, i32)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .collect();
    c.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dy, dx));
    c
}

/// Per block of `cur`, the displacement into `prev` with the smallest sum
/// of absolute differences. Displaced blocks must lie inside the frame.
pub fn estimate_flow<T>(prev: &[T], cur: &[T], dims: FrameDims, block: usize, radius: usize) -> Result<FlowField>
where
    T: Copy + Into<f64> + Sync,
{
    check_geometry(dims, block)?;
    if prev.len() != dims.len() || cur.len() != dims.len() {
        return Err(Error::arg(format!(
            "frames of {} and {} samples for {}x{}x{}",
            prev.len(),
            cur.len(),
            dims.height,
            dims.width,
            dims.channels
        )));
    }
    let mut field = FlowField::zero(dims, block, radius)?;
    let cands = candidates(radius);
    let (w, h, ch) = (dims.width as i64, dims.height as i64, dims.channels);
    let grid_w = field.grid_w;
    field.vectors = (0..field.vectors.len())
        .into_par_iter()
        .map(|b| {
            let x0 = ((b % grid_w) * block) as i64;
            let y0 = ((b / grid_w) * block) as i64;
            let x1 = (x0 + block as i64).min(w);
            let y1 = (y0 + block as i64).min(h);
            let mut best = (0, 0);
            let mut best_sad = f64::INFINITY;
            for &(dx, dy) in &cands {
                let (dx64, dy64) = (i64::from(dx), i64::from(dy));
                if x0 - dx64 < 0 || y0 - dy64 < 0 || x1 - dx64 > w || y1 - dy64 > h {
                    continue;
                }
                let mut sad = 0.0;
                for y in y0..y1 {
                    let cur_row = (y * w) as usize * ch;
                    let prev_row = ((y - dy64) * w) as usize * ch;
                    for x in x0..x1 {
                        let ci = cur_row + x as usize * ch;
                        let pi = prev_row + (x - dx64) as usize * ch;
                        for c in 0..ch {
                            sad += (cur[ci + c].into() - prev[pi + c].into()).abs();
                        }
                    }
                    if sad >= best_sad {
                        break;
                    }
                }
                if sad < best_sad {
                    best_sad = sad;
                    best = (dx, dy);
                }
            }
            best
        })
        .collect();
    Ok(field)
}

/// Nearest-neighbour pullback of one plane, clamped at the borders.
pub fn warp_plane<T: Copy>(prev: &[T], dims: FrameDims, flow: &FlowField) -> Result<Vec<T>> {
    if prev.len() != dims.len() {
        return Err(Error::arg("plane size does not match its dimensions"));
    }
    if flow.grid_w != dims.width.div_ceil(flow.block) || flow.grid_h != dims.height.div_ceil(flow.block) {
        return Err(Error::arg(format!(
            "flow grid {}x{} does not cover a {}x{} frame",
            flow.grid_w, flow.grid_h, dims.width, dims.height
        )));
    }
    let (w, h, ch) = (dims.width as i64, dims.height as i64, dims.channels);
    let mut out = Vec::with_capacity(prev.len());
    for y in 0..dims.height {
        for x in 0..dims.width {
            let (dx, dy) = flow.at(x, y);
            let sx = (x as i64 - i64::from(dx)).clamp(0, w - 1) as usize;
            let sy = (y as i64 - i64::from(dy)).clamp(0, h - 1) as usize;
            let src = (sy * dims.width + sx) * ch;
            out.extend_from_slice(&prev[src..src + ch]);
        }
    }
    Ok(out)
}

/// Warps every frame of `mask` with the corresponding flow field.
pub fn warp_mask(mask: &BinaryFoldMask, flows: &[FlowField]) -> Result<BinaryFoldMask> {
    let shape = mask.shape();
    if flows.len() != shape.frames {
        return Err(Error::arg(format!(
            "{} flow fields for {} frames",
            flows.len(),
            shape.frames
        )));
    }
    let dims = FrameDims::new(shape.height, shape.width, shape.channels);
    let mut bits = Vec::with_capacity(shape.len());
    for (t, flow) in flows.iter().enumerate() {
        bits.extend(warp_plane(mask.frame(t), dims, flow)?);
    }
    BinaryFoldMask::new(shape, mask.order(), bits)
}
