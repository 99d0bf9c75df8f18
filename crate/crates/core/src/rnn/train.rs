use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{bptt_gradients, one_hot, sse_loss, RnnModel};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::features::FeatureMatrix;

/// Stream offset so the shuffling generator never replays the initialisation stream.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// A feature sequence (`T × input_dim`, row-major) with per-frame class labels.
#[derive(Debug, Clone, Copy)]
pub struct SequenceRef<'a> {
    pub features: &'a [f64],
    pub labels: &'a [usize],
}

impl<'a> SequenceRef<'a> {
    pub fn new(features: &'a FeatureMatrix, labels: &'a [usize]) -> Self {
        Self {
            features: features.values(),
            labels,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_sse: f64,
    pub val_sse: f64,
    pub val_uar: Option<f64>,
    /// Excluded from files and from equality.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl PartialEq for EpochStats {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_sse.to_bits() == other.train_sse.to_bits()
            && self.val_sse.to_bits() == other.val_sse.to_bits()
            && self.val_uar.map(f64::to_bits) == other.val_uar.map(f64::to_bits)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) whose parameters were returned.
    pub best_epoch: usize,
}

/// Class decisions and raw logistic outputs for each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePredictions {
    pub classes: Vec<usize>,
    /// `T × output_dim`.
    pub posteriors: Vec<f64>,
    pub output_dim: usize,
}

impl FramePredictions {
    pub fn posterior(&self, t: usize, class: usize) -> f64 {
        self.posteriors[t * self.output_dim + class]
    }
}

/// Argmax per frame; ties resolve to the lowest class index (Dry).
pub fn decide(posteriors: &[f64], output_dim: usize) -> Vec<usize> {
    posteriors
        .chunks_exact(output_dim)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub fn predict_frames(model: &RnnModel, features: &FeatureMatrix) -> Result<FramePredictions> {
    if features.dims() != model.spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.spec.input_dim,
            found: features.dims(),
        });
    }
    let posteriors = model.forward(features.values())?;
    Ok(FramePredictions {
        classes: decide(&posteriors, model.spec.output_dim),
        posteriors,
        output_dim: model.spec.output_dim,
    })
}

fn check_sequence(model: &RnnModel, s: &SequenceRef) -> Result<()> {
    let d = model.spec.input_dim;
    if s.features.len() != s.labels.len() * d {
        return Err(Error::DimensionMismatch {
            expected: s.labels.len() * d,
            found: s.features.len(),
        });
    }
    if let Some(&l) = s.labels.iter().find(|&&l| l >= model.spec.output_dim) {
        return Err(Error::Validation(format!(
            "label {l} outside the {} network outputs",
            model.spec.output_dim
        )));
    }
    Ok(())
}

/// Summed SSE and confusion counts of `model` over whole sequences.
pub fn evaluate_sequences(model: &RnnModel, set: &[SequenceRef]) -> Result<(f64, ConfusionMatrix)> {
    let o = model.spec.output_dim;
    let mut sse = 0.0;
    let mut cm = ConfusionMatrix::new(o);
    for s in set {
        check_sequence(model, s)?;
        let y = model.forward(s.features)?;
        sse += sse_loss(&y, &one_hot(s.labels, o))?;
        for (&truth, pred) in s.labels.iter().zip(decide(&y, o)) {
            cm.add(truth, pred);
        }
    }
    Ok((sse, cm))
}

/// Online gradient descent over fixed-length subsequences with early
/// stopping on validation UAR (validation SSE breaks ties and stands in when
/// UAR is undefined). An empty `val_set` validates on the training data.
/// Returns the best-scoring parameters.
pub fn train(
    mut model: RnnModel,
    train_set: &[SequenceRef],
    val_set: &[SequenceRef],
) -> Result<(RnnModel, TrainHistory)> {
    model.validate()?;
    if train_set.iter().all(|s| s.labels.is_empty()) {
        return Err(Error::EmptyInput("training set"));
    }
    for s in train_set.iter().chain(val_set) {
        check_sequence(&model, s)?;
    }
    let spec = model.spec.clone();
    let (d, o, len) = (spec.input_dim, spec.output_dim, spec.subsequence_len);
    let val_set = if val_set.is_empty() { train_set } else { val_set };

    // (sequence, start, end) chunks; the remainder stays as a shorter tail
    let mut chunks: Vec<(usize, usize, usize)> = Vec::new();
    for (i, s) in train_set.iter().enumerate() {
        let n = s.labels.len();
        let mut start = 0;
        while start < n {
            let end = (start + len).min(n);
            chunks.push((i, start, end));
            start = end;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ SHUFFLE_STREAM);
    let mut history = TrainHistory::default();
    let mut best: Option<((f64, f64), RnnModel)> = None;
    let mut since_best = 0;
    for epoch in 1..=spec.max_epochs {
        let started = Instant::now();
        chunks.shuffle(&mut rng);
        let mut train_sse = 0.0;
        for &(i, start, end) in &chunks {
            let s = &train_set[i];
            let x = &s.features[start * d..end * d];
            let target = one_hot(&s.labels[start..end], o);
            let (loss, grads) = bptt_gradients(&model, x, &target)?;
            train_sse += loss;
            model.params.axpy(-spec.learning_rate, &grads);
        }
        let (val_sse, cm) = evaluate_sequences(&model, val_set)?;
        let val_uar = cm.uar().ok();
        history.epochs.push(EpochStats {
            epoch,
            train_sse,
            val_sse,
            val_uar,
            wall_time_s: started.elapsed().as_secs_f64(),
        });

        let score = (val_uar.unwrap_or(f64::NEG_INFINITY), -val_sse);
        let improved = best.as_ref().is_none_or(|(b, _)| {
            score.0 > b.0 || (score.0 == b.0 && score.1 > b.1)
        });
        if improved {
            best = Some((score, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > spec.patience {
                break;
            }
        }
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((model, history))
}
