use serde::{Deserialize, Serialize};

use super::{ModelError, ReadabilityModel};
use crate::features::{FeatureVector, FEATURE_NAMES};

/// Contributions below minus this many score points produce a suggestion.
pub const DEFAULT_SUGGESTION_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    Medium,
    High,
}

impl Severity {
    fn from_contribution(c: f64) -> Self {
        match c.abs() {
            m if m >= 1.0 => Severity::High,
            m if m >= 0.5 => Severity::Medium,
            _ => Severity::Low,
        }
    }
}

impl std::fmt::Display for Severity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub feature: String,
    pub message: String,
    pub severity: Severity,
    /// Signed score contribution of the feature; 0 for advisories.
    pub contribution: f64,
}

fn describe(feature: &str) -> &'static str {
    match feature {
        "avg_arithmetic" => "arithmetic operators per line",
        "avg_assignments" => "assignments per line",
        "avg_blank_lines" => "blank lines",
        "avg_branches" => "branches per line",
        "avg_commas" => "commas per line",
        "avg_comments" => "comments",
        "avg_comparison" => "comparisons per line",
        "avg_indentation" => "average indentation",
        "avg_keywords" => "keywords per line",
        "avg_line_length" => "average line length",
        "avg_loops" => "loops per line",
        "avg_numbers" => "numeric literals per line",
        "avg_parens" => "parentheses per line",
        "avg_periods" => "periods per line",
        "avg_spaces" => "spaces per line",
        "avg_variables" => "variables per line",
        "max_character" => "repetition of a single character on one line",
        "max_indentation" => "maximum indentation depth",
        "max_keywords" => "keywords on the busiest line",
        "max_line_length" => "longest line length",
        "max_numbers" => "numeric literals on the busiest line",
        "max_variables" => "variables on the busiest line",
        _ => "this feature",
    }
}

const COMMENTS_ADVISORY: &str =
    "No comments were found; consider adding comments that explain intent.";

pub fn suggest(f: &FeatureVector, m: &ReadabilityModel) -> Result<Vec<Suggestion>, ModelError> {
    suggest_with_threshold(f, m, DEFAULT_SUGGESTION_THRESHOLD)
}

/// Suggestions for every feature whose contribution is below `-threshold`,
/// plus a comments advisory when the file has none. Sorted by absolute
/// contribution, largest first.
pub fn suggest_with_threshold(
    f: &FeatureVector,
    m: &ReadabilityModel,
    threshold: f64,
) -> Result<Vec<Suggestion>, ModelError> {
    let contributions = m.contributions(f)?;
    let mut out: Vec<Suggestion> = Vec::new();
    for (i, &c) in contributions.iter().enumerate() {
        if c < -threshold {
            let direction = if m.weights[i] < 0.0 {
                "Reduce"
            } else {
                "Increase"
            };
            out.push(Suggestion {
                feature: FEATURE_NAMES[i].to_string(),
                message: format!(
                    "{direction} {} (costs {:.2} points).",
                    describe(FEATURE_NAMES[i]),
                    -c
                ),
                severity: Severity::from_contribution(c),
                contribution: c,
            });
        }
    }
    if f.avg_comments == 0.0 {
        match out.iter_mut().find(|s| s.feature == "avg_comments") {
            Some(s) => s.message = format!("{} {}", COMMENTS_ADVISORY, s.message),
            None => out.push(Suggestion {
                feature: "avg_comments".to_string(),
                message: COMMENTS_ADVISORY.to_string(),
                severity: Severity::Low,
                contribution: 0.0,
            }),
        }
    }
    out.sort_by(|a, b| b.contribution.abs().total_cmp(&a.contribution.abs()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{feature_index, FEATURE_COUNT};

    fn model() -> ReadabilityModel {
        let mut m = ReadabilityModel::constant(6.0);
        let set = |m: &mut ReadabilityModel, name: &str, mean: f64, std: f64, w: f64| {
            let i = feature_index(name).unwrap();
            m.means[i] = mean;
            m.stds[i] = std;
            m.weights[i] = w;
        };
        set(&mut m, "max_line_length", 60.0, 20.0, -0.9);
        set(&mut m, "avg_line_length", 30.0, 10.0, -0.6);
        set(&mut m, "avg_comments", 0.1, 0.1, 0.3);
        set(&mut m, "avg_blank_lines", 0.1, 0.05, 0.2);
        m
    }

    fn features(pairs: &[(&str, f64)]) -> FeatureVector {
        let mut a = [0.0; FEATURE_COUNT];
        for (k, v) in pairs {
            a[feature_index(k).unwrap()] = *v;
        }
        FeatureVector::from_array(a, 10)
    }

    #[test]
    fn long_lines_come_first() {
        let f = features(&[
            ("max_line_length", 200.0),
            ("avg_line_length", 45.0),
            ("avg_comments", 0.1),
            ("avg_blank_lines", 0.1),
        ]);
        let s = suggest(&f, &model()).unwrap();
        assert_eq!(s[0].feature, "max_line_length");
        assert_eq!(s[0].severity, Severity::High);
        assert!(s[0].message.starts_with("Reduce"));
        assert_eq!(s[1].feature, "avg_line_length");
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn comments_advisory_without_weights() {
        let f = features(&[
            ("avg_line_length", 30.0),
            ("max_line_length", 60.0),
            ("avg_blank_lines", 0.1),
        ]);
        let s = suggest(&f, &ReadabilityModel::constant(5.0)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].feature, "avg_comments");
        assert_eq!(s[0].contribution, 0.0);

        // with weights the advisory merges into the weighted suggestion
        let s = suggest(&f, &model()).unwrap();
        let c: Vec<_> = s.iter().filter(|s| s.feature == "avg_comments").collect();
        assert_eq!(c.len(), 1);
        assert!(c[0].message.contains("No comments") && c[0].message.contains("Increase"));
    }

    #[test]
    fn nothing_to_suggest() {
        let f = features(&[
            ("max_line_length", 40.0),
            ("avg_line_length", 20.0),
            ("avg_comments", 0.3),
            ("avg_blank_lines", 0.2),
        ]);
        assert!(suggest(&f, &model()).unwrap().is_empty());
    }
}
