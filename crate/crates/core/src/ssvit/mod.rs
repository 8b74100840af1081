//! Selective spatiotemporal transformer fold-mask predictor.
//!
//! A window of frames is normalised by `2^A`, encoded patch by patch into a
//! feature volume, scored for intricacy, and only the highest-scoring tubes
//! become transformer tokens. A linear head turns each processed token back
//! into per-pixel fold logits; the other tubes fall back to the previous
//! window's mask, warped along block-matching motion.

mod checkpoint;
mod config;
mod predictor;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{HistoryMode, ModelConfig, TokenSource};
pub use predictor::{fallback_mask, window_flows, FallbackInput, FlowOnlyPredictor, SsvitPredictor};
pub use train::{evaluate_pairs, train, train_with, PairMetrics, TrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::modulo::{BinaryFoldMask, IntClip};
use crate::select::{rank_scores, score_volume, selected_count, EmbeddingVolume, KlVariant, TokenCoord};
use crate::tensor::{mac_count, Tensor};

const LN_EPS: f64 = 1e-5;

/// Named trainable arrays, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
}

impl ParamStore {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, values: Vec<f64>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.names.push(name);
        self.shapes.push(shape);
        self.values.push(values);
        self.names.len() - 1
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn values(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn values_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.values.iter().map(Vec::len).collect()
    }

    pub(crate) fn all_values_mut(&mut self) -> Vec<&mut [f64]> {
        self.values.iter_mut().map(Vec::as_mut_slice).collect()
    }

    pub(crate) fn from_parts(names: Vec<String>, shapes: Vec<Vec<usize>>, values: Vec<Vec<f64>>) -> Self {
        Self { names, shapes, values }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerSlots {
    ln1_g: usize,
    ln1_b: usize,
    qkv_w: usize,
    qkv_b: usize,
    out_w: usize,
    out_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    enc_w: usize,
    enc_b: usize,
    tok_w: usize,
    tok_b: usize,
    layers: Vec<LayerSlots>,
    head_w: usize,
    head_b: usize,
}

/// Geometry of the tube grid for one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TubeGrid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch: usize,
    pub tube_frames: usize,
    /// Patch rows and columns after zero padding.
    pub grid_h: usize,
    pub grid_w: usize,
}

impl TubeGrid {
    /// Encoder cells: `frames × grid_h × grid_w`.
    pub fn cells(&self) -> usize {
        self.frames * self.grid_h * self.grid_w
    }

    pub fn tube_slices(&self) -> usize {
        self.frames / self.tube_frames
    }

    pub fn tubes(&self) -> usize {
        self.tube_slices() * self.grid_h * self.grid_w
    }

    pub fn tube_index(&self, c: TokenCoord) -> usize {
        (c.t * self.grid_h + c.y) * self.grid_w + c.x
    }

    pub fn cell_index(&self, frame: usize, gy: usize, gx: usize) -> usize {
        (frame * self.grid_h + gy) * self.grid_w + gx
    }

    /// Clip sample index of the `j`-th value of tube `c`, or `None` in the
    /// zero-padded margin. Values run over (frame, y, x, channel).
    pub fn sample_index(&self, c: TokenCoord, j: usize) -> Option<usize> {
        let ch = j % self.channels;
        let x = (j / self.channels) % self.patch;
        let y = (j / (self.channels * self.patch)) % self.patch;
        let tt = j / (self.channels * self.patch * self.patch);
        let py = c.y * self.patch + y;
        let px = c.x * self.patch + x;
        if py >= self.height || px >= self.width {
            return None;
        }
        let t = c.t * self.tube_frames + tt;
        Some(((t * self.height + py) * self.width + px) * self.channels + ch)
    }
}

/// Model configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SsvitModel {
    cfg: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

fn layout_for(cfg: &ModelConfig, store: &mut ParamStore, rng: Option<&mut ChaCha8Rng>) -> Layout {
    let mut rng = rng;
    let mut dense = |store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, zero: bool| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| match (&mut rng, zero) {
                (Some(r), false) => r.random_range(-bound..bound),
                _ => 0.0,
            })
            .collect();
        let wi = store.push(format!("{name}.weight"), vec![fan_in, fan_out], w);
        let bi = store.push(format!("{name}.bias"), vec![fan_out], vec![0.0; fan_out]);
        (wi, bi)
    };
    let norm = |store: &mut ParamStore, name: &str, n: usize| {
        let g = store.push(format!("{name}.gain"), vec![n], vec![1.0; n]);
        let b = store.push(format!("{name}.bias"), vec![n], vec![0.0; n]);
        (g, b)
    };
    let d = cfg.token_dim;
    let (enc_w, enc_b) = dense(store, "encoder", cfg.patch * cfg.patch * cfg.channels, cfg.embed_dim, false);
    let (tok_w, tok_b) = dense(store, "tokens", cfg.token_input(), d, false);
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let (ln1_g, ln1_b) = norm(store, &format!("layer{l}.norm1"), d);
        let (qkv_w, qkv_b) = dense(store, &format!("layer{l}.qkv"), d, 3 * d, false);
        let (out_w, out_b) = dense(store, &format!("layer{l}.proj"), d, d, false);
        let (ln2_g, ln2_b) = norm(store, &format!("layer{l}.norm2"), d);
        let (fc1_w, fc1_b) = dense(store, &format!("layer{l}.fc1"), d, cfg.mlp_hidden, false);
        let (fc2_w, fc2_b) = dense(store, &format!("layer{l}.fc2"), cfg.mlp_hidden, d, false);
        layers.push(LayerSlots {
            ln1_g,
            ln1_b,
            qkv_w,
            qkv_b,
            out_w,
            out_b,
            ln2_g,
            ln2_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        });
    }
    let (head_w, head_b) = dense(store, "head", d, cfg.tube_len(), true);
    Layout {
        enc_w,
        enc_b,
        tok_w,
        tok_b,
        layers,
        head_w,
        head_b,
    }
}

impl SsvitModel {
    /// Seeded initialisation: uniform `±1/√fan_in` weights, zero biases,
    /// unit norm gains and a zero output head.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamStore::new();
        let layout = layout_for(&cfg, &mut params, Some(&mut rng));
        Ok(Self { cfg, params, layout })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let mut expected = ParamStore::new();
        let layout = layout_for(&cfg, &mut expected, None);
        if expected.names != params.names || expected.shapes != params.shapes {
            return Err(Error::Validation(
                "stored parameters do not match the model configuration".into(),
            ));
        }
        Ok(Self { cfg, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Changes the selection fraction of a trained model.
    pub fn set_fraction(&mut self, fraction: f64) -> Result<()> {
        let mut cfg = self.cfg.clone();
        cfg.fraction = fraction;
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Wraps the parameters as graph leaves.
    pub fn bind(&self, trainable: bool) -> BoundModel<'_> {
        let tensors = (0..self.params.len())
            .map(|i| {
                let shape = self.params.shape(i);
                let data = self.params.values(i).to_vec();
                if trainable {
                    Tensor::param(shape, data)
                } else {
                    Tensor::new(shape, data)
                }
                .expect("stored shapes are consistent")
            })
            .collect();
        BoundModel { model: self, tensors }
    }

    pub fn grid(&self, clip: &IntClip) -> Result<TubeGrid> {
        let s = clip.shape();
        if s.frames != self.cfg.window_frames() {
            return Err(Error::arg(format!(
                "model windows hold {} frames, clip has {}",
                self.cfg.window_frames(),
                s.frames
            )));
        }
        if s.channels != self.cfg.channels {
            return Err(Error::arg(format!(
                "model expects {} channel(s), clip has {}",
                self.cfg.channels, s.channels
            )));
        }
        if s.height == 0 || s.width == 0 {
            return Err(Error::arg("empty frames"));
        }
        Ok(TubeGrid {
            frames: s.frames,
            height: s.height,
            width: s.width,
            channels: s.channels,
            patch: self.cfg.patch,
            tube_frames: self.cfg.tube_frames,
            grid_h: s.height.div_ceil(self.cfg.patch),
            grid_w: s.width.div_ceil(self.cfg.patch),
        })
    }

    /// Full-frame mask of `order` for a window; tubes outside the selection
    /// take `fallback` (or zero without one).
    pub fn predict_mask(&self, clip: &IntClip, order: u32, fallback: Option<&[u8]>) -> Result<Prediction> {
        let bound = self.bind(false);
        let fwd = bound.forward(clip)?;
        let len = clip.shape().len();
        let mut bits = match fallback {
            Some(f) if f.len() == len => f.to_vec(),
            Some(f) => {
                return Err(Error::arg(format!(
                    "fallback mask has {} samples, clip {}",
                    f.len(),
                    len
                )))
            }
            None => vec![0; len],
        };
        let tube_len = self.cfg.tube_len();
        let logits = fwd.logits.data();
        for (i, &c) in fwd.selected.iter().enumerate() {
            for j in 0..tube_len {
                if let Some(s) = fwd.grid.sample_index(c, j) {
                    bits[s] = u8::from(logits[i * tube_len + j] >= 0.0);
                }
            }
        }
        Ok(Prediction {
            mask: BinaryFoldMask::new(clip.shape(), order, bits)?,
            selected: fwd.selected,
            complement: fwd.complement,
            grid: fwd.grid,
            transformer_macs: fwd.transformer_macs,
        })
    }
}

/// Output of [`SsvitModel::predict_mask`].
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mask: BinaryFoldMask,
    pub selected: Vec<TokenCoord>,
    pub complement: Vec<TokenCoord>,
    pub grid: TubeGrid,
    /// Multiply–accumulates in token projection, transformer layers and head.
    pub transformer_macs: u64,
}

/// Encoder output for one window.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `cells × embed_dim`, cells in (frame, row, column) order.
    pub volume: Tensor,
    /// Normalised patch pixels, `cells × patch² · channels`.
    pub patches: Tensor,
    pub grid: TubeGrid,
}

impl Encoded {
    /// Tube-level feature volume used for scoring: the features of a tube's
    /// frames concatenated.
    pub fn tube_volume(&self) -> Result<EmbeddingVolume> {
        let g = self.grid;
        let d = self.volume.shape()[1];
        let src = self.volume.data();
        let mut data = Vec::with_capacity(g.tubes() * g.tube_frames * d);
        for s in 0..g.tube_slices() {
            for gy in 0..g.grid_h {
                for gx in 0..g.grid_w {
                    for tt in 0..g.tube_frames {
                        let cell = g.cell_index(s * g.tube_frames + tt, gy, gx);
                        data.extend_from_slice(&src[cell * d..(cell + 1) * d]);
                    }
                }
            }
        }
        EmbeddingVolume::new(g.tube_slices(), g.grid_h, g.grid_w, g.tube_frames * d, data)
    }

    /// Cell rows belonging to each tube, tube by tube.
    fn tube_rows(&self, tubes: &[TokenCoord]) -> Vec<usize> {
        let g = self.grid;
        tubes
            .iter()
            .flat_map(|c| (0..g.tube_frames).map(move |tt| g.cell_index(c.t * g.tube_frames + tt, c.y, c.x)))
            .collect()
    }
}

/// Forward pass result for one window.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `selected.len() × tube_len` logits.
    pub logits: Tensor,
    pub selected: Vec<TokenCoord>,
    pub complement: Vec<TokenCoord>,
    pub grid: TubeGrid,
    pub transformer_macs: u64,
}

/// Parameters bound as tensors for one or more forward passes.
pub struct BoundModel<'m> {
    model: &'m SsvitModel,
    tensors: Vec<Tensor>,
}

impl BoundModel<'_> {
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    fn t(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    /// Shared linear patch encoder over every frame of the window.
    pub fn encode_frames(&self, clip: &IntClip) -> Result<Encoded> {
        let cfg = &self.model.cfg;
        let grid = self.model.grid(clip)?;
        let p = cfg.patch;
        let ch = grid.channels;
        let scale = f64::from(1u32 << cfg.bits_a);
        let width = p * p * ch;
        let mut patches = Vec::with_capacity(grid.cells() * width);
        for t in 0..grid.frames {
            for gy in 0..grid.grid_h {
                for gx in 0..grid.grid_w {
                    for y in 0..p {
                        for x in 0..p {
                            let (py, px) = (gy * p + y, gx * p + x);
                            for c in 0..ch {
                                patches.push(if py < grid.height && px < grid.width {
                                    f64::from(clip.get(t, py, px, c)) / scale
                                } else {
                                    0.0
                                });
                            }
                        }
                    }
                }
            }
        }
        let patches = Tensor::new(&[grid.cells(), width], patches)?;
        let l = &self.model.layout;
        let volume = patches.matmul(self.t(l.enc_w))?.add_row(self.t(l.enc_b))?;
        Ok(Encoded {
            volume,
            patches,
            grid,
        })
    }

    /// Projects the chosen tubes, in order, into `n × token_dim` tokens.
    pub fn tubes_to_tokens(&self, enc: &Encoded, tubes: &[TokenCoord]) -> Result<Tensor> {
        if tubes.is_empty() {
            return Err(Error::arg("no tubes selected"));
        }
        let cfg = &self.model.cfg;
        let rows = enc.tube_rows(tubes);
        let source = match cfg.token_source {
            TokenSource::Embedding => &enc.volume,
            TokenSource::Pixels => &enc.patches,
        };
        let width = source.shape()[1] * cfg.tube_frames;
        let feats = source.gather_rows(&rows)?.reshape(&[tubes.len(), width])?;
        let l = &self.model.layout;
        feats.matmul(self.t(l.tok_w))?.add_row(self.t(l.tok_b))
    }

    /// Pre-norm encoder layers: `Y = MSA(LN(Z)) + Z`, `Z' = MLP(LN(Y)) + Y`.
    pub fn transformer_encode(&self, tokens: &Tensor) -> Result<Tensor> {
        let cfg = &self.model.cfg;
        let d = cfg.token_dim;
        if tokens.shape().len() != 2 || tokens.shape()[1] != d || tokens.shape()[0] == 0 {
            return Err(Error::arg(format!(
                "expected n x {d} tokens, got {:?}",
                tokens.shape()
            )));
        }
        let dh = cfg.head_dim();
        let inv = 1.0 / (dh as f64).sqrt();
        let mut z = tokens.clone();
        for s in &self.model.layout.layers {
            let y = z.layer_norm(self.t(s.ln1_g), self.t(s.ln1_b), LN_EPS)?;
            let qkv = y.matmul(self.t(s.qkv_w))?.add_row(self.t(s.qkv_b))?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let q = qkv.slice_cols(h * dh, dh)?;
                let k = qkv.slice_cols(d + h * dh, dh)?;
                let v = qkv.slice_cols(2 * d + h * dh, dh)?;
                let scores = q.matmul(&k.transpose()?)?.scale(inv);
                let attn = scores.softmax(1).map_err(|e| match e {
                    Error::InvalidData(m) => Error::Numerical(format!("attention: {m}")),
                    other => other,
                })?;
                heads.push(attn.matmul(&v)?);
            }
            let msa = Tensor::concat_cols(&heads)?
                .matmul(self.t(s.out_w))?
                .add_row(self.t(s.out_b))?;
            let y = msa.add(&z)?;
            let hidden = y
                .layer_norm(self.t(s.ln2_g), self.t(s.ln2_b), LN_EPS)?
                .matmul(self.t(s.fc1_w))?
                .add_row(self.t(s.fc1_b))?
                .gelu();
            let mlp = hidden.matmul(self.t(s.fc2_w))?.add_row(self.t(s.fc2_b))?;
            z = mlp.add(&y)?;
        }
        if z.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("transformer produced non-finite values".into()));
        }
        Ok(z)
    }

    /// Linear head: one row of `tube_len` logits per token.
    pub fn decode_masks(&self, tokens: &Tensor) -> Result<Tensor> {
        let l = &self.model.layout;
        tokens.matmul(self.t(l.head_w))?.add_row(self.t(l.head_b))
    }

    /// Encode, select, transform and decode one window.
    pub fn forward(&self, clip: &IntClip) -> Result<Forward> {
        let cfg = &self.model.cfg;
        let enc = self.encode_frames(clip)?;
        let grid = enc.grid;
        let all: Vec<TokenCoord> = (0..grid.tubes())
            .map(|i| TokenCoord {
                t: i / (grid.grid_h * grid.grid_w),
                y: (i / grid.grid_w) % grid.grid_h,
                x: i % grid.grid_w,
            })
            .collect();
        let (selected, complement) = if cfg.fraction >= 1.0 {
            (all, Vec::new())
        } else {
            let vol = enc.tube_volume()?;
            let keep = selected_count(vol.positions(), cfg.fraction)?;
            let scores = score_volume(&vol, cfg.radius, KlVariant::Divergence)?;
            let order = rank_scores(&scores.scores);
            let mut chosen = vec![false; order.len()];
            let selected: Vec<TokenCoord> = order[..keep]
                .iter()
                .map(|&i| {
                    chosen[i] = true;
                    all[i]
                })
                .collect();
            let complement = (0..all.len()).filter(|&i| !chosen[i]).map(|i| all[i]).collect();
            (selected, complement)
        };
        let before = mac_count();
        let tokens = self.tubes_to_tokens(&enc, &selected)?;
        let encoded = self.transformer_encode(&tokens)?;
        let logits = self.decode_masks(&encoded)?;
        let transformer_macs = mac_count() - before;
        Ok(Forward {
            logits,
            selected,
            complement,
            grid,
            transformer_macs,
        })
    }

    /// Mean binary cross-entropy of the selected tubes' logits against
    /// `target`, ignoring padded pixels.
    pub fn loss(&self, clip: &IntClip, target: &BinaryFoldMask) -> Result<Tensor> {
        if target.shape() != clip.shape() {
            return Err(Error::arg(format!(
                "target {} for clip {}",
                target.shape(),
                clip.shape()
            )));
        }
        let fwd = self.forward(clip)?;
        let tube_len = self.model.cfg.tube_len();
        let mut targets = Vec::with_capacity(fwd.selected.len() * tube_len);
        let mut weights = Vec::with_capacity(targets.capacity());
        for &c in &fwd.selected {
            for j in 0..tube_len {
                match fwd.grid.sample_index(c, j) {
                    Some(s) => {
                        targets.push(f64::from(target.bits()[s]));
                        weights.push(1.0);
                    }
                    None => {
                        targets.push(0.0);
                        weights.push(0.0);
                    }
                }
            }
        }
        fwd.logits.bce_with_logits(&targets, &weights)
    }
}
