use super::{HistoryMode, SsvitModel};
use crate::error::{Error, Result};
use crate::flow::{estimate_flow, warp_plane, FlowField, FrameDims};
use crate::modulo::{BinaryFoldMask, ClipShape, FoldCountMap, IntClip, MaskPredictor};

/// Motion-fallback history for one window.
#[derive(Debug, Clone, Copy)]
pub struct FallbackInput<'a> {
    /// Mask bits for the previous window (frames `start − 1 …`).
    pub history: &'a [u8],
    /// Modulo samples of stream frame `start − 1`.
    pub prev_frame: &'a [u32],
}

fn low_bits(v: &[u32], bits_a: u32) -> Vec<u32> {
    let m = (1u32 << bits_a) - 1;
    v.iter().map(|&x| x & m).collect()
}

/// Per-frame motion from stream frame `start + j − 1` to `start + j`,
/// measured on the modulo samples.
pub fn window_flows(clip: &IntClip, bits_a: u32, prev_frame: &[u32], block: usize, radius: usize) -> Result<Vec<FlowField>> {
    let s = clip.shape();
    let dims = FrameDims::new(s.height, s.width, s.channels);
    if prev_frame.len() != s.frame_len() {
        return Err(Error::arg("previous frame does not match the window geometry"));
    }
    let block = block.min(s.height).min(s.width);
    let mut prev = low_bits(prev_frame, bits_a);
    let mut flows = Vec::with_capacity(s.frames);
    for t in 0..s.frames {
        let cur = low_bits(clip.frame(t), bits_a);
        flows.push(estimate_flow(&prev, &cur, dims, block, radius)?);
        prev = cur;
    }
    Ok(flows)
}

fn warp_history(shape: ClipShape, history: &[u8], flows: &[FlowField]) -> Result<Vec<u8>> {
    if history.len() != shape.len() {
        return Err(Error::arg(format!(
            "history of {} samples for window {shape}",
            history.len()
        )));
    }
    let dims = FrameDims::new(shape.height, shape.width, shape.channels);
    let n = shape.frame_len();
    let mut out = Vec::with_capacity(shape.len());
    for (t, flow) in flows.iter().enumerate() {
        out.extend(warp_plane(&history[t * n..(t + 1) * n], dims, flow)?);
    }
    Ok(out)
}

/// Previous window's mask warped onto the current window: frame `j`
/// takes the mask of stream frame `start + j − 1` moved along the
/// estimated motion.
pub fn fallback_mask(clip: &IntClip, bits_a: u32, input: FallbackInput<'_>, block: usize, radius: usize) -> Result<Vec<u8>> {
    let flows = window_flows(clip, bits_a, input.prev_frame, block, radius)?;
    warp_history(clip.shape(), input.history, &flows)
}

/// Mask history carried across consecutive windows.
#[derive(Debug, Clone, Default)]
struct WindowHistory {
    current: Option<usize>,
    cur_modulo: Option<IntClip>,
    cur_masks: Vec<BinaryFoldMask>,
    flows: Option<Vec<FlowField>>,
    prev_modulo: Option<IntClip>,
    prev_masks: Vec<BinaryFoldMask>,
}

impl WindowHistory {
    fn begin(&mut self, start: usize) {
        let consecutive = self.current.is_some_and(|c| c + 1 == start);
        if consecutive {
            self.prev_masks = std::mem::take(&mut self.cur_masks);
            self.prev_modulo = self.cur_modulo.take();
        } else {
            self.prev_masks.clear();
            self.prev_modulo = None;
        }
        self.cur_masks.clear();
        self.cur_modulo = None;
        self.flows = None;
        self.current = Some(start);
    }

    fn observe(&mut self, clip: &IntClip, bits_a: u32) -> Result<()> {
        if self.current.is_none() {
            self.begin(0);
        }
        if self.cur_modulo.is_none() {
            let data = low_bits(clip.data(), bits_a);
            self.cur_modulo = Some(IntClip::new(clip.shape(), bits_a, data)?);
        }
        Ok(())
    }

    fn has_history(&self, shape: ClipShape) -> bool {
        self.prev_modulo.as_ref().is_some_and(|p| p.shape() == shape)
    }

    fn history_bits(&self, shape: ClipShape, order: u32, mode: HistoryMode) -> Vec<u8> {
        match mode {
            HistoryMode::SameOrder => self
                .prev_masks
                .get(order as usize - 1)
                .map_or_else(|| vec![0; shape.len()], |m| m.bits().to_vec()),
            HistoryMode::Final => {
                let mut counts = vec![0u32; shape.len()];
                for m in &self.prev_masks {
                    for (c, &b) in counts.iter_mut().zip(m.bits()) {
                        *c += u32::from(b);
                    }
                }
                counts.iter().map(|&c| u8::from(c >= order)).collect()
            }
        }
    }

    fn fallback(&mut self, clip: &IntClip, order: u32, bits_a: u32, mode: HistoryMode, block: usize, radius: usize) -> Result<Option<Vec<u8>>> {
        self.observe(clip, bits_a)?;
        let shape = clip.shape();
        if !self.has_history(shape) {
            return Ok(None);
        }
        if self.flows.is_none() {
            let prev = self.prev_modulo.as_ref().expect("checked above");
            self.flows = Some(window_flows(clip, bits_a, prev.frame(0), block, radius)?);
        }
        let history = self.history_bits(shape, order, mode);
        let flows = self.flows.as_ref().expect("just computed");
        warp_history(shape, &history, flows).map(Some)
    }

    fn record(&mut self, mask: &BinaryFoldMask) {
        if mask.order() as usize == self.cur_masks.len() + 1 {
            self.cur_masks.push(mask.clone());
        }
    }
}

/// Stateful learned predictor for sliding-window reconstruction.
#[derive(Debug, Clone)]
pub struct SsvitPredictor {
    model: SsvitModel,
    history: WindowHistory,
    transformer_macs: u64,
    calls: usize,
}

impl SsvitPredictor {
    pub fn new(model: SsvitModel) -> Self {
        Self {
            model,
            history: WindowHistory::default(),
            transformer_macs: 0,
            calls: 0,
        }
    }

    pub fn model(&self) -> &SsvitModel {
        &self.model
    }

    /// Transformer multiply–accumulates summed over all predictions.
    pub fn transformer_macs(&self) -> u64 {
        self.transformer_macs
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl MaskPredictor for SsvitPredictor {
    fn begin_window(&mut self, start: usize) -> Result<()> {
        self.history.begin(start);
        Ok(())
    }

    fn predict(&mut self, clip: &IntClip, order: u32) -> Result<BinaryFoldMask> {
        let cfg = self.model.config();
        let fallback = if cfg.fraction < 1.0 {
            self.history
                .fallback(clip, order, cfg.bits_a, cfg.history, cfg.flow_block, cfg.flow_radius)?
        } else {
            self.history.observe(clip, cfg.bits_a)?;
            None
        };
        let p = self.model.predict_mask(clip, order, fallback.as_deref())?;
        self.transformer_macs += p.transformer_macs;
        self.calls += 1;
        self.history.record(&p.mask);
        Ok(p.mask)
    }
}

/// Propagates masks along estimated motion only. The first window's masks
/// come from optional seed counts (zero otherwise).
#[derive(Debug, Clone)]
pub struct FlowOnlyPredictor {
    bits_a: u32,
    mode: HistoryMode,
    block: usize,
    radius: usize,
    seed: Option<FoldCountMap>,
    history: WindowHistory,
}

impl FlowOnlyPredictor {
    pub fn new(bits_a: u32, block: usize, radius: usize) -> Self {
        Self {
            bits_a,
            mode: HistoryMode::SameOrder,
            block,
            radius,
            seed: None,
            history: WindowHistory::default(),
        }
    }

    /// Fold counts of the first window, used until motion history exists.
    pub fn with_seed(mut self, counts: FoldCountMap) -> Self {
        self.seed = Some(counts);
        self
    }

    pub fn with_history(mut self, mode: HistoryMode) -> Self {
        self.mode = mode;
        self
    }
}

impl MaskPredictor for FlowOnlyPredictor {
    fn begin_window(&mut self, start: usize) -> Result<()> {
        self.history.begin(start);
        Ok(())
    }

    fn predict(&mut self, clip: &IntClip, order: u32) -> Result<BinaryFoldMask> {
        let shape = clip.shape();
        let bits = match self
            .history
            .fallback(clip, order, self.bits_a, self.mode, self.block, self.radius)?
        {
            Some(b) => b,
            None => match &self.seed {
                Some(c) if c.shape() == shape => c.counts().iter().map(|&l| u8::from(l >= order)).collect(),
                _ => vec![0; shape.len()],
            },
        };
        let mask = BinaryFoldMask::new(shape, order, bits)?;
        self.history.record(&mask);
        Ok(mask)
    }
}
