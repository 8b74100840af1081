use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::predictor::{fallback_mask, FallbackInput};
use super::{HistoryMode, SsvitModel};
use crate::datagen::{DatasetTuple, WindowPair};
use crate::error::{Error, Result};
use crate::tensor::Adam;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch: 4,
            lr: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Means of `blocks` consecutive equal-length stretches of the loss
    /// curve (a trailing remainder is dropped).
    pub fn block_means(&self, blocks: usize) -> Vec<f64> {
        let len = self.losses.len() / blocks.max(1);
        if len == 0 {
            return Vec::new();
        }
        self.losses
            .chunks_exact(len)
            .take(blocks)
            .map(|c| c.iter().sum::<f64>() / len as f64)
            .collect()
    }
}

/// Adam on mean per-pixel binary cross-entropy over selected tubes.
/// Per-sample gradients may be computed in parallel; they are summed in
/// batch order so results do not depend on the worker count.
pub fn train(model: &mut SsvitModel, pairs: &[WindowPair], tc: &TrainConfig) -> Result<TrainReport> {
    train_with(model, pairs, tc, |_, _| {})
}

pub fn train_with(
    model: &mut SsvitModel,
    pairs: &[WindowPair],
    tc: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if pairs.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if tc.batch == 0 || !(tc.lr > 0.0) {
        return Err(Error::arg("batch size and learning rate must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut adam = Adam::new(tc.lr, &model.params().sizes());
    let mut losses = Vec::with_capacity(tc.steps);
    for step in 0..tc.steps {
        let batch: Vec<usize> = (0..tc.batch).map(|_| rng.random_range(0..pairs.len())).collect();
        let snapshot = &*model;
        let results: Vec<(f64, Vec<Vec<f64>>)> = batch
            .par_iter()
            .map(|&i| {
                let bound = snapshot.bind(true);
                let loss = bound.loss(&pairs[i].clip, &pairs[i].target)?;
                let grads = loss.backward()?;
                let g = bound.tensors().iter().map(|t| grads.get_or_zero(t)).collect();
                Ok((loss.item(), g))
            })
            .collect::<Result<_>>()
            .map_err(|e| Error::Training {
                step,
                message: e.to_string(),
            })?;
        let inv = 1.0 / tc.batch as f64;
        let mut loss = 0.0;
        let mut total: Vec<Vec<f64>> = model.params().sizes().iter().map(|&n| vec![0.0; n]).collect();
        for (l, g) in &results {
            loss += l * inv;
            for (acc, part) in total.iter_mut().zip(g) {
                for (a, v) in acc.iter_mut().zip(part) {
                    *a += v * inv;
                }
            }
        }
        if !loss.is_finite() || total.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Training {
                step,
                message: format!("non-finite loss or gradient (loss {loss})"),
            });
        }
        adam.update(&mut model.params_mut().all_values_mut(), &total);
        losses.push(loss);
        progress(step, loss);
    }
    Ok(TrainReport { losses })
}

/// Pixel accuracy of predicted masks against targets, alongside the
/// accuracy of always predicting zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairMetrics {
    pub pairs: usize,
    pub pixels: usize,
    pub correct: usize,
    pub zero_correct: usize,
}

impl PairMetrics {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.pixels.max(1) as f64
    }

    pub fn zero_accuracy(&self) -> f64 {
        self.zero_correct as f64 / self.pixels.max(1) as f64
    }
}

/// Scores predictions on (window, order) pairs. Each pair sees the
/// ground-truth running clip; unselected tubes use the ground-truth mask of
/// the previous window, warped along estimated motion.
pub fn evaluate_pairs(model: &SsvitModel, tuples: &[DatasetTuple], pairs: &[WindowPair]) -> Result<PairMetrics> {
    let cfg = model.config();
    let per: Vec<(usize, usize, usize)> = pairs
        .par_iter()
        .map(|p| {
            let tuple = tuples
                .get(p.video)
                .ok_or_else(|| Error::arg(format!("pair refers to missing video {}", p.video)))?;
            let len = p.clip.shape().frames;
            let fallback = if cfg.fraction < 1.0 && p.start > 0 {
                let history = match cfg.history {
                    HistoryMode::SameOrder | HistoryMode::Final => tuple.target_mask(p.start - 1, len, p.order)?,
                };
                let input = FallbackInput {
                    history: history.bits(),
                    prev_frame: tuple.modulo.frame(p.start - 1),
                };
                Some(fallback_mask(&p.clip, cfg.bits_a, input, cfg.flow_block, cfg.flow_radius)?)
            } else {
                None
            };
            let pred = model.predict_mask(&p.clip, p.order, fallback.as_deref())?;
            let t = p.target.bits();
            let correct = pred.mask.bits().iter().zip(t).filter(|(a, b)| a == b).count();
            let zero = t.iter().filter(|&&b| b == 0).count();
            Ok((t.len(), correct, zero))
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().fold(
        PairMetrics {
            pairs: pairs.len(),
            ..PairMetrics::default()
        },
        |mut m, (n, c, z)| {
            m.pixels += n;
            m.correct += c;
            m.zero_correct += z;
            m
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synthesize, window_pairs, SynthConfig};
    use crate::ssvit::ModelConfig;

    fn tiny() -> (Vec<DatasetTuple>, Vec<WindowPair>) {
        let cfg = SynthConfig {
            videos: 2,
            frames: 6,
            width: 16,
            height: 16,
            bits_b: 10,
            ..SynthConfig::default()
        };
        let videos = synthesize(&cfg).unwrap();
        let tuples: Vec<DatasetTuple> = videos.into_iter().map(|v| v.tuple).collect();
        let pairs = tuples
            .iter()
            .enumerate()
            .flat_map(|(i, t)| window_pairs(t, i, 4).unwrap())
            .collect();
        (tuples, pairs)
    }

    #[test]
    fn loss_descends_on_a_frozen_batch() {
        let (_, pairs) = tiny();
        let mut model = SsvitModel::new(ModelConfig::default()).unwrap();
        let one = &pairs[..1];
        let tc = TrainConfig {
            steps: 40,
            batch: 1,
            lr: 1e-3,
            seed: 1,
        };
        let report = train(&mut model, one, &tc).unwrap();
        assert!((report.losses[0] - 2f64.ln()).abs() < 1e-12);
        assert!(report.losses[39] < report.losses[0]);
    }

    #[test]
    fn constant_target_loss_goes_to_zero() {
        let (_, pairs) = tiny();
        let mut pair = pairs[0].clone();
        pair.target = crate::modulo::BinaryFoldMask::new(pair.target.shape(), 1, vec![1; pair.target.shape().len()]).unwrap();
        let mut model = SsvitModel::new(ModelConfig::default()).unwrap();
        let tc = TrainConfig {
            steps: 300,
            batch: 1,
            lr: 1e-2,
            seed: 2,
        };
        let r = train(&mut model, &[pair], &tc).unwrap();
        assert!(r.losses[299] < 0.01, "final loss {}", r.losses[299]);
        let tail = &r.losses[100..];
        assert!(tail.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn training_is_reproducible() {
        let (tuples, pairs) = tiny();
        let tc = TrainConfig {
            steps: 5,
            batch: 3,
            lr: 1e-3,
            seed: 3,
        };
        let mut a = SsvitModel::new(ModelConfig::default()).unwrap();
        let mut b = a.clone();
        assert_eq!(train(&mut a, &pairs, &tc).unwrap(), train(&mut b, &pairs, &tc).unwrap());
        assert_eq!(a, b);
        let m = evaluate_pairs(&a, &tuples, &pairs).unwrap();
        assert_eq!(m.pixels, pairs.len() * 5 * 256);
    }
}
