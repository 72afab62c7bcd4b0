use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ratings::{
    aggregate_targets, remove_outliers, RatingRecord, RatingsDataset, QUANTILE_METHOD,
};
use super::{classify, ModelMetadata, ReadabilityModel, MODEL_VERSION};
use crate::features::{
    extract_features, FeatureError, FeatureVector, FEATURE_COUNT, FEATURE_NAMES,
};
use crate::stats::mean;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    /// Fraction of samples used for training; the rest is the test split.
    pub split: f64,
    pub folds: usize,
    /// Ridge penalty on the standardized weights; 0 gives ordinary least squares.
    pub ridge: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            split: 0.8,
            folds: 10,
            ridge: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_mse: f64,
    pub test_mse: f64,
    pub cv_fold_mses: Vec<f64>,
    pub cv_mean_mse: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_outliers_removed: usize,
    pub outlier_fraction: f64,
    pub split_seed: u64,
    /// Agreement of thresholded predictions with thresholded targets on the test split.
    pub classification_accuracy: f64,
    pub quantile_method: String,
    /// Sample indices of the held-out split, in shuffled order.
    pub test_indices: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least {need} samples, got {have}")]
    TooFewSamples { have: usize, need: usize },
    #[error("{features} feature vectors but {targets} targets")]
    LengthMismatch { features: usize, targets: usize },
    #[error("sample {sample}: feature `{feature}` is not finite")]
    NonFiniteFeature {
        sample: usize,
        feature: &'static str,
    },
    #[error("sample {sample}: target is not finite")]
    NonFiniteTarget { sample: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("snippet {snippet}: {source}")]
    Feature {
        snippet: String,
        #[source]
        source: FeatureError,
    },
}

struct Fit {
    means: [f64; FEATURE_COUNT],
    stds: [f64; FEATURE_COUNT],
    weights: [f64; FEATURE_COUNT],
    bias: f64,
}

impl Fit {
    fn predict(&self, row: &[f64; FEATURE_COUNT]) -> f64 {
        self.bias
            + (0..FEATURE_COUNT)
                .map(|i| self.weights[i] * (row[i] - self.means[i]) / self.stds[i])
                .sum::<f64>()
    }

    fn mse(&self, rows: &[[f64; FEATURE_COUNT]], y: &[f64], idx: &[usize]) -> f64 {
        idx.iter()
            .map(|&i| (self.predict(&rows[i]) - y[i]).powi(2))
            .sum::<f64>()
            / idx.len() as f64
    }
}

fn is_constant(std: f64, mean: f64) -> bool {
    std <= 1e-12 * (1.0 + mean.abs())
}

/// Solves `(Z'Z + ridge I) w = Z'(y - mean(y))` on standardized columns.
/// Columns are centered, so the unpenalized intercept is `mean(y)`.
fn fit(rows: &[[f64; FEATURE_COUNT]], y: &[f64], idx: &[usize], ridge: f64) -> Fit {
    let n = idx.len() as f64;
    let mut means = [0.0; FEATURE_COUNT];
    let mut stds = [1.0; FEATURE_COUNT];
    for j in 0..FEATURE_COUNT {
        means[j] = idx.iter().map(|&i| rows[i][j]).sum::<f64>() / n;
        let var = idx
            .iter()
            .map(|&i| (rows[i][j] - means[j]).powi(2))
            .sum::<f64>()
            / n;
        stds[j] = var.sqrt();
    }
    let active: Vec<usize> = (0..FEATURE_COUNT)
        .filter(|&j| !is_constant(stds[j], means[j]))
        .collect();
    for (j, sd) in stds.iter_mut().enumerate() {
        if !active.contains(&j) {
            *sd = 1.0;
        }
    }

    let y_mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    let mut weights = [0.0; FEATURE_COUNT];
    if !active.is_empty() {
        let z = DMatrix::from_fn(idx.len(), active.len(), |r, c| {
            let j = active[c];
            (rows[idx[r]][j] - means[j]) / stds[j]
        });
        let yc = DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i] - y_mean));
        let zt = z.transpose();
        let gram = &zt * &z + DMatrix::identity(active.len(), active.len()) * ridge;
        let rhs = &zt * yc;
        let solution = match gram.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => gram
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(active.len())),
        };
        for (c, &j) in active.iter().enumerate() {
            weights[j] = solution[c];
        }
    }
    Fit {
        means,
        stds,
        weights,
        bias: y_mean,
    }
}

fn check_inputs(x: &[FeatureVector], y: &[f64]) -> Result<Vec<[f64; FEATURE_COUNT]>, TrainError> {
    if x.len() != y.len() {
        return Err(TrainError::LengthMismatch {
            features: x.len(),
            targets: y.len(),
        });
    }
    let rows: Vec<[f64; FEATURE_COUNT]> = x.iter().map(FeatureVector::to_array).collect();
    for (sample, row) in rows.iter().enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteFeature {
                sample,
                feature: FEATURE_NAMES[j],
            });
        }
        if !y[sample].is_finite() {
            return Err(TrainError::NonFiniteTarget { sample });
        }
    }
    Ok(rows)
}

fn to_model(f: Fit, metadata: ModelMetadata) -> ReadabilityModel {
    ReadabilityModel {
        version: MODEL_VERSION,
        feature_order: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        means: f.means.to_vec(),
        stds: f.stds.to_vec(),
        weights: f.weights.to_vec(),
        bias: f.bias,
        metadata,
    }
}

/// Fits on every sample with no split or cross-validation.
pub fn fit_model(
    x: &[FeatureVector],
    y: &[f64],
    ridge: f64,
) -> Result<ReadabilityModel, TrainError> {
    let rows = check_inputs(x, y)?;
    if rows.is_empty() {
        return Err(TrainError::TooFewSamples { have: 0, need: 1 });
    }
    let idx: Vec<usize> = (0..rows.len()).collect();
    let metadata = ModelMetadata {
        n_snippets: rows.len(),
        ..ModelMetadata::default()
    };
    Ok(to_model(fit(&rows, y, &idx, ridge), metadata))
}

/// Fits the model on a seeded 80/20-style split and cross-validates on the
/// training part. Outlier statistics in the report are zero; use
/// [`train_from_dataset`] for the full pipeline.
pub fn train(
    x: &[FeatureVector],
    y: &[f64],
    cfg: &TrainConfig,
) -> Result<(ReadabilityModel, TrainReport), TrainError> {
    let rows = check_inputs(x, y)?;
    if !(cfg.split > 0.0 && cfg.split < 1.0) {
        return Err(TrainError::InvalidConfig(format!(
            "split {} not in (0, 1)",
            cfg.split
        )));
    }
    if cfg.folds < 2 {
        return Err(TrainError::InvalidConfig(format!(
            "folds {} < 2",
            cfg.folds
        )));
    }
    if !(cfg.ridge >= 0.0 && cfg.ridge.is_finite()) {
        return Err(TrainError::InvalidConfig(format!(
            "ridge {} must be >= 0",
            cfg.ridge
        )));
    }
    let need = cfg.folds + 2;
    if x.len() < need {
        return Err(TrainError::TooFewSamples {
            have: x.len(),
            need,
        });
    }
    let n = rows.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_train = ((n as f64 * cfg.split).round() as usize).clamp(cfg.folds, n - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let model_fit = fit(&rows, y, train_idx, cfg.ridge);
    let train_mse = model_fit.mse(&rows, y, train_idx);
    let test_mse = model_fit.mse(&rows, y, test_idx);

    let cv_fold_mses: Vec<f64> = (0..cfg.folds)
        .map(|f| {
            let lo = f * n_train / cfg.folds;
            let hi = (f + 1) * n_train / cfg.folds;
            let held_out = &train_idx[lo..hi];
            let rest: Vec<usize> = train_idx[..lo]
                .iter()
                .chain(&train_idx[hi..])
                .copied()
                .collect();
            fit(&rows, y, &rest, cfg.ridge).mse(&rows, y, held_out)
        })
        .collect();
    let cv_mean_mse = mean(&cv_fold_mses);

    let correct = test_idx
        .iter()
        .filter(|&&i| {
            let score = model_fit
                .predict(&rows[i])
                .clamp(super::SCORE_MIN, super::SCORE_MAX);
            classify(score) == classify(y[i])
        })
        .count();

    let model = to_model(
        model_fit,
        ModelMetadata {
            trained_at: None,
            seed: cfg.seed,
            n_snippets: n,
            train_mse,
            test_mse,
            cv_mean_mse,
        },
    );
    let report = TrainReport {
        train_mse,
        test_mse,
        cv_fold_mses,
        cv_mean_mse,
        n_train,
        n_test: test_idx.len(),
        n_outliers_removed: 0,
        outlier_fraction: 0.0,
        split_seed: cfg.seed,
        classification_accuracy: correct as f64 / test_idx.len() as f64,
        quantile_method: QUANTILE_METHOD.to_string(),
        test_indices: test_idx.to_vec(),
    };
    Ok((model, report))
}

/// Everything produced by a training run over a ratings dataset.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: ReadabilityModel,
    pub report: TrainReport,
    pub removed: Vec<RatingRecord>,
    pub cleaned: RatingsDataset,
    /// Snippet ids in training-sample order.
    pub snippet_ids: Vec<String>,
    pub features: Vec<FeatureVector>,
    pub targets: Vec<f64>,
    /// Snippets dropped because every rating was an outlier.
    pub empty_after_outliers: Vec<String>,
}

/// Outlier removal, mean-rating targets, feature extraction, and fitting.
pub fn train_from_dataset(
    ds: &RatingsDataset,
    cfg: &TrainConfig,
) -> Result<TrainingRun, TrainError> {
    let (cleaned, removed) = remove_outliers(ds);
    let targets = aggregate_targets(&cleaned);
    let mut features = Vec::with_capacity(targets.means.len());
    let mut snippet_ids = Vec::with_capacity(targets.means.len());
    let mut y = Vec::with_capacity(targets.means.len());
    for (id, &target) in &targets.means {
        let fv = extract_features(&ds.snippets[id]).map_err(|source| TrainError::Feature {
            snippet: id.clone(),
            source,
        })?;
        features.push(fv);
        snippet_ids.push(id.clone());
        y.push(target);
    }
    let (model, mut report) = train(&features, &y, cfg)?;
    report.n_outliers_removed = removed.len();
    report.outlier_fraction = if ds.records.is_empty() {
        0.0
    } else {
        removed.len() as f64 / ds.records.len() as f64
    };
    Ok(TrainingRun {
        model,
        report,
        removed,
        cleaned,
        snippet_ids,
        features,
        targets: y,
        empty_after_outliers: targets.empty_after_outliers,
    })
}

/// Snippet id → model score, for agreement statistics.
pub fn predictions_by_snippet(run: &TrainingRun) -> BTreeMap<String, f64> {
    run.snippet_ids
        .iter()
        .zip(&run.features)
        .map(|(id, f)| (id.clone(), run.model.predict(f).unwrap_or(f64::NAN)))
        .collect()
}
