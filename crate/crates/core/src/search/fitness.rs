use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::expr::Expression;

use super::CvConfig;

/// Root-mean-square error as accumulated by the engine (streaming, used as
/// the search loss). Independent of `metrics::rmse`, which the self-checks
/// compare it against.
pub fn engine_rmse(pred: &[f64], y: &[f64]) -> f64 {
    let mut mean_sq = 0.0;
    for (k, (p, t)) in pred.iter().zip(y).enumerate() {
        let d = p - t;
        mean_sq += (d * d - mean_sq) / (k as f64 + 1.0);
    }
    let loss = mean_sq.sqrt();
    if loss.is_finite() {
        loss
    } else {
        f64::INFINITY
    }
}

/// Evaluation phase of the CV proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Subsampled training loss only.
    Warmup,
    /// Blend of training loss and mean fold validation loss.
    Blended,
}

/// Cross-validation proxy over a fixed subsample of the training split.
///
/// The subsample and the fold assignment are drawn once per run, so the
/// proxy of a given expression is a deterministic number within a phase.
#[derive(Debug, Clone)]
pub struct CvProxy {
    config: CvConfig,
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
    fold_of: Vec<usize>,
    full_columns: Vec<Vec<f64>>,
    full_y: Vec<f64>,
}

impl CvProxy {
    pub fn new<R: Rng + ?Sized>(z_train: &Dataset, config: &CvConfig, rng: &mut R) -> CvProxy {
        let n = z_train.n_rows();
        let mut idx: Vec<usize> = (0..n).collect();
        let take = if config.enabled {
            let want = (config.subsample * n as f64).ceil() as usize;
            want.max((2 * config.folds.max(1)).min(n)).min(n)
        } else {
            n
        };
        if take < n {
            idx.shuffle(rng);
            idx.truncate(take);
            idx.sort_unstable();
        }
        let mut fold_of: Vec<usize> = (0..take).map(|i| i % config.folds.max(1)).collect();
        fold_of.shuffle(rng);
        let sub = z_train.subset(&idx);
        CvProxy {
            config: config.clone(),
            columns: sub.columns,
            y: sub.y,
            fold_of,
            full_columns: z_train.columns.clone(),
            full_y: z_train.y.clone(),
        }
    }

    pub fn subsample_len(&self) -> usize {
        self.y.len()
    }

    pub fn fold_assignment(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn phase(&self, generation: usize, total_generations: usize) -> Phase {
        if !self.config.enabled || self.config.weight == 0.0 {
            return Phase::Warmup;
        }
        let cut = self.config.warmup * total_generations as f64;
        if (generation as f64) < cut {
            Phase::Warmup
        } else {
            Phase::Blended
        }
    }

    pub fn loss(&self, expr: &Expression, phase: Phase) -> f64 {
        let pred = expr.eval(&self.columns, self.y.len());
        let train = engine_rmse(&pred, &self.y);
        if phase == Phase::Warmup {
            return train;
        }
        let folds = self.config.folds.max(1);
        let mut total = 0.0;
        let mut used = 0;
        for k in 0..folds {
            let (p, t): (Vec<f64>, Vec<f64>) = self
                .fold_of
                .iter()
                .enumerate()
                .filter(|(_, f)| **f == k)
                .map(|(i, _)| (pred[i], self.y[i]))
                .unzip();
            if !t.is_empty() {
                total += engine_rmse(&p, &t);
                used += 1;
            }
        }
        let val = if used > 0 { total / used as f64 } else { train };
        let w = self.config.weight;
        let blended = (1.0 - w) * train + w * val;
        if blended.is_finite() {
            blended
        } else {
            f64::INFINITY
        }
    }

    /// RMSE over the whole training split.
    pub fn full_train_loss(&self, expr: &Expression) -> f64 {
        let pred = expr.eval(&self.full_columns, self.full_y.len());
        engine_rmse(&pred, &self.full_y)
    }
}

/// One-shot form: draws the subsample from `rng` and scores `expr` at the
/// given generation.
pub fn cv_proxy_loss<R: Rng + ?Sized>(
    expr: &Expression,
    z_train: &Dataset,
    config: &CvConfig,
    generation: usize,
    total_generations: usize,
    rng: &mut R,
) -> f64 {
    let proxy = CvProxy::new(z_train, config, rng);
    let phase = proxy.phase(generation, total_generations);
    proxy.loss(expr, phase)
}
