use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ratings::RatingsDataset;
use crate::features::{FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
use crate::stats::{mean, permutation_test, stream_rng, CorrelationMethod, PermutationConfig};

/// Raters who rated fewer snippets than this are left out of agreement.
pub const MIN_RATED_SNIPPETS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub pearson_r: f64,
    pub p_value: f64,
    /// The feature was constant across the samples.
    pub zero_variance: bool,
}

/// Pearson correlation of every feature with the targets, with permutation
/// p-values. Feature `i` shuffles with stream `i` of `cfg.seed`.
pub fn feature_importance(
    x: &[FeatureVector],
    y: &[f64],
    cfg: &PermutationConfig,
) -> Result<Vec<FeatureImportance>, AgreementError> {
    if x.len() != y.len() {
        return Err(AgreementError::LengthMismatch {
            features: x.len(),
            targets: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(AgreementError::TooFewSamples(x.len()));
    }
    let rows: Vec<[f64; FEATURE_COUNT]> = x.iter().map(FeatureVector::to_array).collect();
    Ok((0..FEATURE_COUNT)
        .into_par_iter()
        .map(|j| {
            let column: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let mut rng = stream_rng(cfg.seed, j as u64);
            let t = permutation_test(
                &column,
                y,
                CorrelationMethod::Pearson,
                cfg.permutations,
                &mut rng,
            );
            FeatureImportance {
                feature: FEATURE_NAMES[j].to_string(),
                pearson_r: t.r,
                p_value: t.p_value,
                zero_variance: t.degenerate,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterAgreement {
    pub rater_id: String,
    pub n_snippets: usize,
    pub r: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub method: CorrelationMethod,
    pub mean_corr: f64,
    pub mean_p: f64,
    pub raters: Vec<RaterAgreement>,
    /// Raters with too few scored snippets or constant ratings.
    pub skipped_raters: Vec<String>,
}

#[derive(Debug, Error)]
pub enum AgreementError {
    #[error("no rater has at least {MIN_RATED_SNIPPETS} scored snippets with varying ratings")]
    NoEligibleRaters,
    #[error("need at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{features} feature vectors but {targets} targets")]
    LengthMismatch { features: usize, targets: usize },
}

/// Per-rater correlation between model scores and that rater's ratings,
/// averaged without weights. Repeated ratings of one snippet by the same
/// rater are averaged first. Rater `k` in id order uses stream `k`.
pub fn agreement(
    predictions: &BTreeMap<String, f64>,
    ds: &RatingsDataset,
    method: CorrelationMethod,
    cfg: &PermutationConfig,
) -> Result<Agreement, AgreementError> {
    let mut per_rater: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for r in &ds.records {
        per_rater
            .entry(r.rater_id.as_str())
            .or_default()
            .entry(r.snippet_id.as_str())
            .or_default()
            .push(r.rating as f64);
    }

    let mut raters = Vec::new();
    let mut skipped_raters = Vec::new();
    for (k, (rater, snippets)) in per_rater.iter().enumerate() {
        let (scores, ratings): (Vec<f64>, Vec<f64>) = snippets
            .iter()
            .filter_map(|(id, rs)| predictions.get(*id).map(|p| (*p, mean(rs))))
            .unzip();
        if scores.len() < MIN_RATED_SNIPPETS {
            skipped_raters.push(rater.to_string());
            continue;
        }
        let mut rng = stream_rng(cfg.seed, k as u64);
        let t = permutation_test(&scores, &ratings, method, cfg.permutations, &mut rng);
        if t.degenerate {
            skipped_raters.push(rater.to_string());
            continue;
        }
        raters.push(RaterAgreement {
            rater_id: rater.to_string(),
            n_snippets: scores.len(),
            r: t.r,
            p_value: t.p_value,
        });
    }
    if raters.is_empty() {
        return Err(AgreementError::NoEligibleRaters);
    }
    let rs: Vec<f64> = raters.iter().map(|r| r.r).collect();
    let ps: Vec<f64> = raters.iter().map(|r| r.p_value).collect();
    Ok(Agreement {
        method,
        mean_corr: mean(&rs),
        mean_p: mean(&ps),
        raters,
        skipped_raters,
    })
}
