//! The linear readability model and everything around it: training from
//! survey ratings, persistence, scoring, explanations, and agreement with
//! human raters.

mod importance;
mod ratings;
mod suggest;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_COUNT, FEATURE_NAMES};

pub use importance::{
    agreement, feature_importance, Agreement, AgreementError, FeatureImportance, RaterAgreement,
    MIN_RATED_SNIPPETS,
};
pub use ratings::{
    aggregate_targets, load_ratings, outlier_fences, remove_outliers, ExperienceBand, RatingRecord,
    RatingsDataset, RatingsError, Targets, QUANTILE_METHOD, RATINGS_HEADER,
};
pub use suggest::{
    suggest, suggest_with_threshold, Severity, Suggestion, DEFAULT_SUGGESTION_THRESHOLD,
};
pub use train::{
    fit_model, predictions_by_snippet, train, train_from_dataset, TrainConfig, TrainError,
    TrainReport, TrainingRun,
};

pub const MODEL_VERSION: u32 = 1;
pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 10.0;
/// Scores at or below this value are labelled not readable.
pub const READABLE_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Readable,
    NotReadable,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Readable => "readable",
            Label::NotReadable => "not_readable",
        })
    }
}

pub fn classify(score: f64) -> Label {
    if score <= READABLE_THRESHOLD {
        Label::NotReadable
    } else {
        Label::Readable
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    /// Set only on request so that identical training runs produce identical files.
    pub trained_at: Option<String>,
    pub seed: u64,
    pub n_snippets: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub cv_mean_mse: f64,
}

impl ModelMetadata {
    /// Sets `trained_at` to the current UTC time.
    pub fn stamp_now(&mut self) {
        self.trained_at =
            Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    }
}

/// Weights act on z-scored features: `score = bias + sum(w * (f - mean) / std)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadabilityModel {
    pub version: u32,
    pub feature_order: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub metadata: ModelMetadata,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid model JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported model version {0}")]
    Version(u32),
    #[error("`{field}` has {len} entries, expected {FEATURE_COUNT}")]
    Length { field: &'static str, len: usize },
    #[error("feature order mismatch at index {index}: model has {found:?}, expected {expected:?}")]
    ModelFeatureMismatch {
        index: usize,
        expected: &'static str,
        found: String,
    },
    #[error("model contains a non-finite or non-positive value in `{0}`")]
    InvalidValue(&'static str),
    #[error("feature `{0}` is not finite")]
    NonFiniteFeature(&'static str),
}

impl ReadabilityModel {
    /// A model that ignores its input and always returns `bias`.
    pub fn constant(bias: f64) -> Self {
        ReadabilityModel {
            version: MODEL_VERSION,
            feature_order: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            means: vec![0.0; FEATURE_COUNT],
            stds: vec![1.0; FEATURE_COUNT],
            weights: vec![0.0; FEATURE_COUNT],
            bias,
            metadata: ModelMetadata::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.version != MODEL_VERSION {
            return Err(ModelError::Version(self.version));
        }
        for (field, len) in [
            ("feature_order", self.feature_order.len()),
            ("means", self.means.len()),
            ("stds", self.stds.len()),
            ("weights", self.weights.len()),
        ] {
            if len != FEATURE_COUNT {
                return Err(ModelError::Length { field, len });
            }
        }
        for (index, (found, expected)) in self.feature_order.iter().zip(FEATURE_NAMES).enumerate() {
            if found != expected {
                return Err(ModelError::ModelFeatureMismatch {
                    index,
                    expected,
                    found: found.clone(),
                });
            }
        }
        if !self.means.iter().all(|v| v.is_finite()) {
            return Err(ModelError::InvalidValue("means"));
        }
        if !self.stds.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(ModelError::InvalidValue("stds"));
        }
        if !self.weights.iter().all(|v| v.is_finite()) {
            return Err(ModelError::InvalidValue("weights"));
        }
        if !self.bias.is_finite() {
            return Err(ModelError::InvalidValue("bias"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let model: ReadabilityModel =
            serde_json::from_str(&text).map_err(|source| ModelError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        model.validate()?;
        Ok(model)
    }

    /// Pretty JSON with a trailing newline; byte-stable for equal models.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Per-feature score contributions `w * (f - mean) / std`.
    pub fn contributions(&self, f: &FeatureVector) -> Result<[f64; FEATURE_COUNT], ModelError> {
        self.validate()?;
        let values = f.to_array();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteFeature(FEATURE_NAMES[i]));
        }
        Ok(std::array::from_fn(|i| {
            self.weights[i] * (values[i] - self.means[i]) / self.stds[i]
        }))
    }

    /// The unclamped linear prediction.
    pub fn raw_score(&self, f: &FeatureVector) -> Result<f64, ModelError> {
        Ok(self.bias + self.contributions(f)?.iter().sum::<f64>())
    }

    /// Readability score clamped to `[SCORE_MIN, SCORE_MAX]`.
    pub fn predict(&self, f: &FeatureVector) -> Result<f64, ModelError> {
        Ok(self.raw_score(f)?.clamp(SCORE_MIN, SCORE_MAX))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_model() {
        let m = ReadabilityModel::constant(7.0);
        let f = FeatureVector::from_array([3.0; FEATURE_COUNT], 4);
        assert_eq!(m.predict(&f).unwrap(), 7.0);
        assert_eq!(ReadabilityModel::constant(20.0).predict(&f).unwrap(), 10.0);
        assert_eq!(ReadabilityModel::constant(-3.0).predict(&f).unwrap(), 1.0);
    }

    #[test]
    fn hand_evaluated_dot_product() {
        let mut m = ReadabilityModel::constant(5.5);
        let li = crate::features::feature_index("avg_line_length").unwrap();
        let ci = crate::features::feature_index("avg_comments").unwrap();
        m.means[li] = 30.0;
        m.stds[li] = 10.0;
        m.weights[li] = -1.2;
        m.means[ci] = 0.1;
        m.stds[ci] = 0.2;
        m.weights[ci] = 0.4;
        let mut values = [0.0; FEATURE_COUNT];
        values[li] = 45.0;
        values[ci] = 0.3;
        // 5.5 + (-1.2)(1.5) + (0.4)(1.0) = 4.1
        let score = m.predict(&FeatureVector::from_array(values, 10)).unwrap();
        assert!((score - 4.1).abs() < 1e-12);
        assert_eq!(classify(score), Label::NotReadable);
    }

    #[test]
    fn classification_boundary() {
        assert_eq!(classify(5.0), Label::NotReadable);
        assert_eq!(classify(5.01), Label::Readable);
        assert_eq!(classify(1.0), Label::NotReadable);
        assert_eq!(classify(10.0), Label::Readable);
    }

    #[test]
    fn rejects_mismatched_feature_order() {
        let mut m = ReadabilityModel::constant(5.0);
        m.feature_order.swap(0, 1);
        let f = FeatureVector::default();
        assert!(matches!(
            m.predict(&f),
            Err(ModelError::ModelFeatureMismatch { index: 0, .. })
        ));
        let mut m = ReadabilityModel::constant(5.0);
        m.weights.pop();
        assert!(matches!(
            m.validate(),
            Err(ModelError::Length {
                field: "weights",
                len: 21
            })
        ));
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = ReadabilityModel::constant(6.25);
        m.weights[3] = 0.125;
        m.save(&path).unwrap();
        assert_eq!(ReadabilityModel::load(&path).unwrap(), m);

        let mut v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        v["extra"] = serde_json::json!(1);
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(
            ReadabilityModel::load(&path),
            Err(ModelError::Json { .. })
        ));
    }

    proptest! {
        #[test]
        fn predictions_stay_in_bounds(
            bias in -100.0f64..100.0,
            weights in proptest::collection::vec(-50.0f64..50.0, FEATURE_COUNT),
            values in proptest::collection::vec(0.0f64..500.0, FEATURE_COUNT),
        ) {
            let mut m = ReadabilityModel::constant(bias);
            m.weights = weights;
            let f = FeatureVector::from_array(values.try_into().unwrap(), 1);
            let s = m.predict(&f).unwrap();
            prop_assert!((SCORE_MIN..=SCORE_MAX).contains(&s));
        }

        #[test]
        fn labels_follow_score_order(a in 1.0f64..10.0, b in 1.0f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if lo <= 5.0 && hi > 5.0 {
                prop_assert_ne!(classify(lo), classify(hi));
            }
        }
    }
}
