//! Neighbourhood-similarity scoring of an embedding volume and selection of
//! the most intricate token positions.
//!
//! For a token `x` and its `(2r+1)³` space-time neighbourhood (centre
//! included, edges replicated), the score is
//! `KL(uniform ‖ softmax(X_local · x)) + mean(1 − cos(local_i, x))`.

use rayon::prelude::*;

use crate::error::{Error, Result};

const PROB_FLOOR: f64 = 1e-12;

/// Feature field of shape `frames × height × width × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVolume {
    frames: usize,
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

/// Position of a token in the volume grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenCoord {
    pub t: usize,
    pub y: usize,
    pub x: usize,
}

impl TokenCoord {
    pub const fn new(t: usize, y: usize, x: usize) -> Self {
        Self { t, y, x }
    }
}

impl EmbeddingVolume {
    pub fn new(frames: usize, height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("embedding dimension must be at least 1"));
        }
        if data.len() != frames * height * width * dim {
            return Err(Error::arg(format!(
                "volume {frames}x{height}x{width}x{dim} needs {} values, got {}",
                frames * height * width * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite feature at index {i}")));
        }
        Ok(Self {
            frames,
            height,
            width,
            dim,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Number of token positions.
    pub fn positions(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.positions() == 0
    }

    pub fn linear(&self, c: TokenCoord) -> usize {
        (c.t * self.height + c.y) * self.width + c.x
    }

    pub fn coord(&self, index: usize) -> TokenCoord {
        let x = index % self.width;
        let y = (index / self.width) % self.height;
        let t = index / (self.width * self.height);
        TokenCoord { t, y, x }
    }

    pub fn feature(&self, c: TokenCoord) -> &[f64] {
        let i = self.linear(c) * self.dim;
        &self.data[i..i + self.dim]
    }

    fn check_coord(&self, c: TokenCoord) -> Result<()> {
        if c.t >= self.frames || c.y >= self.height || c.x >= self.width {
            return Err(Error::arg(format!(
                "coordinate ({}, {}, {}) outside {}x{}x{}",
                c.t, c.y, c.x, self.frames, self.height, self.width
            )));
        }
        Ok(())
    }

    /// Neighbourhood of `c` in raster order (t, then y, then x), with
    /// out-of-range positions clamped to the nearest edge.
    pub fn neighbourhood(&self, c: TokenCoord, radius: usize) -> Vec<TokenCoord> {
        let r = radius as isize;
        let clamp = |v: usize, d: isize, n: usize| (v as isize + d).clamp(0, n as isize - 1) as usize;
        let mut out = Vec::with_capacity(neighbourhood_size(radius));
        for dt in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    out.push(TokenCoord {
                        t: clamp(c.t, dt, self.frames),
                        y: clamp(c.y, dy, self.height),
                        x: clamp(c.x, dx, self.width),
                    });
                }
            }
        }
        out
    }
}

/// `(2r+1)³`
pub const fn neighbourhood_size(radius: usize) -> usize {
    let side = 2 * radius + 1;
    side * side * side
}

/// Sign convention of the divergence term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlVariant {
    /// `Σ p_u ln(p_u / p_sim)`, nonnegative and largest for peaked similarity.
    #[default]
    Divergence,
    /// `Σ p_u ln(p_sim / p_u)`, the negated form.
    Negated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsmScore {
    pub kl: f64,
    pub cos: f64,
    pub total: f64,
    /// The centre feature had zero norm; the score is reported as 0.
    pub degenerate: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax of the dot products between the centre feature and each
/// neighbourhood feature.
pub fn similarity_distribution(vol: &EmbeddingVolume, c: TokenCoord, radius: usize) -> Result<Vec<f64>> {
    if radius == 0 {
        return Err(Error::arg("neighbourhood radius must be at least 1"));
    }
    vol.check_coord(c)?;
    let centre = vol.feature(c);
    let logits: Vec<f64> = vol
        .neighbourhood(c, radius)
        .into_iter()
        .map(|n| dot(vol.feature(n), centre))
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

pub fn nsm_score(vol: &EmbeddingVolume, c: TokenCoord, radius: usize) -> Result<NsmScore> {
    nsm_score_with(vol, c, radius, KlVariant::Divergence)
}

pub fn nsm_score_with(
    vol: &EmbeddingVolume,
    c: TokenCoord,
    radius: usize,
    variant: KlVariant,
) -> Result<NsmScore> {
    let p_sim = similarity_distribution(vol, c, radius)?;
    let centre = vol.feature(c);
    let centre_norm = dot(centre, centre).sqrt();
    if centre_norm == 0.0 {
        return Ok(NsmScore {
            kl: 0.0,
            cos: 0.0,
            total: 0.0,
            degenerate: true,
        });
    }
    let n = p_sim.len() as f64;
    let pu = 1.0 / n;
    let kl: f64 = p_sim
        .iter()
        .map(|&p| pu * (pu / p.max(PROB_FLOOR)).ln())
        .sum();
    let kl = match variant {
        KlVariant::Divergence => kl,
        KlVariant::Negated => -kl,
    };
    let cos = vol
        .neighbourhood(c, radius)
        .into_iter()
        .map(|nb| {
            let f = vol.feature(nb);
            let norm = dot(f, f).sqrt();
            let cosine = if norm == 0.0 {
                0.0
            } else {
                dot(f, centre) / (norm * centre_norm)
            };
            1.0 - cosine
        })
        .sum::<f64>()
        / n;
    Ok(NsmScore {
        kl,
        cos,
        total: kl + cos,
        degenerate: false,
    })
}

/// Scores for every position of a volume, in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct NsmScoreVolume {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub radius: usize,
    pub scores: Vec<f64>,
    pub degenerate: usize,
}

pub fn score_volume(vol: &EmbeddingVolume, radius: usize, variant: KlVariant) -> Result<NsmScoreVolume> {
    if vol.is_empty() {
        return Err(Error::arg("cannot score an empty volume"));
    }
    let results: Vec<NsmScore> = (0..vol.positions())
        .into_par_iter()
        .map(|i| nsm_score_with(vol, vol.coord(i), radius, variant))
        .collect::<Result<_>>()?;
    Ok(NsmScoreVolume {
        frames: vol.frames,
        height: vol.height,
        width: vol.width,
        radius,
        degenerate: results.iter().filter(|s| s.degenerate).count(),
        scores: results.into_iter().map(|s| s.total).collect(),
    })
}

/// `ceil(fraction · n)`, at least one.
pub fn selected_count(positions: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::arg(format!("selection fraction {fraction} outside (0, 1]")));
    }
    Ok(((fraction * positions as f64).ceil() as usize).clamp(1, positions.max(1)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Selected positions, highest score first.
    pub selected: Vec<TokenCoord>,
    /// Features of the selected positions, `selected.len() × dim`.
    pub tokens: Vec<f64>,
    /// Unselected positions in raster order.
    pub complement: Vec<TokenCoord>,
    pub scores: NsmScoreVolume,
}

/// Ranks positions by descending score with raster order breaking ties.
pub fn rank_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn select_tokens(vol: &EmbeddingVolume, radius: usize, fraction: f64) -> Result<SelectionResult> {
    select_tokens_with(vol, radius, fraction, KlVariant::Divergence)
}

pub fn select_tokens_with(
    vol: &EmbeddingVolume,
    radius: usize,
    fraction: f64,
    variant: KlVariant,
) -> Result<SelectionResult> {
    if vol.is_empty() {
        return Err(Error::arg("cannot select from an empty volume"));
    }
    let keep = selected_count(vol.positions(), fraction)?;
    let scores = score_volume(vol, radius, variant)?;
    let order = rank_scores(&scores.scores);
    let mut chosen = vec![false; order.len()];
    let mut selected = Vec::with_capacity(keep);
    let mut tokens = Vec::with_capacity(keep * vol.dim);
    for &i in &order[..keep] {
        chosen[i] = true;
        let c = vol.coord(i);
        selected.push(c);
        tokens.extend_from_slice(vol.feature(c));
    }
    let complement = (0..order.len())
        .filter(|&i| !chosen[i])
        .map(|i| vol.coord(i))
        .collect();
    Ok(SelectionResult {
        selected,
        tokens,
        complement,
        scores,
    })
}
