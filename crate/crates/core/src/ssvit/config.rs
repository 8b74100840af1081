use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{DEFAULT_BLOCK, DEFAULT_RADIUS};

/// What a tube token is projected from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenSource {
    /// Encoder features of the tube's cells.
    #[default]
    Embedding,
    /// Raw normalised tube pixels.
    Pixels,
}

/// Which mask of the previous window feeds the motion fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryMode {
    /// The previous window's mask of the same order.
    #[default]
    SameOrder,
    /// The previous window's final fold counts, thresholded at the order.
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Spatial side of encoder patches and tubes.
    pub patch: usize,
    /// Frames per tube.
    pub tube_frames: usize,
    pub channels: usize,
    /// Encoder feature width.
    pub embed_dim: usize,
    /// Transformer token width.
    pub token_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// Preceding frames per window; windows hold `clip_len + 1` frames.
    pub clip_len: usize,
    pub radius: usize,
    pub fraction: f64,
    pub bits_a: u32,
    pub token_source: TokenSource,
    pub history: HistoryMode,
    pub flow_block: usize,
    pub flow_radius: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            tube_frames: 1,
            channels: 1,
            embed_dim: 16,
            token_dim: 32,
            layers: 2,
            heads: 2,
            mlp_hidden: 64,
            clip_len: 4,
            radius: 1,
            fraction: 1.0,
            bits_a: 8,
            token_source: TokenSource::Embedding,
            history: HistoryMode::SameOrder,
            flow_block: DEFAULT_BLOCK,
            flow_radius: DEFAULT_RADIUS,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn window_frames(&self) -> usize {
        self.clip_len + 1
    }

    pub fn head_dim(&self) -> usize {
        self.token_dim / self.heads
    }

    /// Values per tube: `tube_frames · patch² · channels`.
    pub fn tube_len(&self) -> usize {
        self.tube_frames * self.patch * self.patch * self.channels
    }

    /// Width of the vector projected into a token.
    pub fn token_input(&self) -> usize {
        match self.token_source {
            TokenSource::Embedding => self.tube_frames * self.embed_dim,
            TokenSource::Pixels => self.tube_len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.patch == 0 || self.tube_frames == 0 || self.embed_dim == 0 || self.token_dim == 0 {
            return bad("patch, tube, embedding and token sizes must be positive".into());
        }
        if self.heads == 0 || self.token_dim % self.heads != 0 {
            return bad(format!(
                "token width {} is not divisible by {} heads",
                self.token_dim, self.heads
            ));
        }
        if self.token_dim < 2 || self.mlp_hidden == 0 {
            return bad("token width must be at least 2 and the MLP non-empty".into());
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("{} channels; use 1 or 3", self.channels));
        }
        if self.clip_len == 0 || self.window_frames() % self.tube_frames != 0 {
            return bad(format!(
                "tubes of {} frames do not tile windows of {}",
                self.tube_frames,
                self.window_frames()
            ));
        }
        if self.radius == 0 {
            return bad("selection radius must be at least 1".into());
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("selection fraction {} outside (0, 1]", self.fraction));
        }
        if self.bits_a == 0 || self.bits_a > 24 {
            return bad(format!("modulo depth {} unsupported", self.bits_a));
        }
        if self.flow_block == 0 {
            return bad("flow block must be positive".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let offset = e.span().map_or(0, |s| s.start);
            Error::parse(offset, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_validation() {
        let cfg = ModelConfig {
            fraction: 0.25,
            token_source: TokenSource::Pixels,
            history: HistoryMode::Final,
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(matches!(
            ModelConfig::from_toml("heads = 3\n"),
            Err(Error::Validation(_))
        ));
        assert!(matches!(ModelConfig::from_toml("unknown = 1\n"), Err(Error::Parse { .. })));
    }
}
