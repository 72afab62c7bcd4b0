//! Survey ratings: CSV ingestion, per-snippet IQR outlier removal, and
//! aggregation into mean-rating regression targets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::SourceFile;
use crate::stats::{mean, quantile_sorted};

pub const RATINGS_HEADER: [&str; 5] = [
    "snippet_id",
    "rater_id",
    "rating",
    "experience_band",
    "knows_r",
];

/// Human-readable name of the quartile convention, carried in training reports.
pub const QUANTILE_METHOD: &str = "linear interpolation at p*(n-1), 0-indexed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperienceBand {
    #[serde(rename = "0-3")]
    UpToThree,
    #[serde(rename = "3-5")]
    ThreeToFive,
    #[serde(rename = "5+")]
    FivePlus,
}

impl ExperienceBand {
    fn parse(s: &str) -> Option<Option<Self>> {
        match s {
            "" => Some(None),
            "0-3" => Some(Some(ExperienceBand::UpToThree)),
            "3-5" => Some(Some(ExperienceBand::ThreeToFive)),
            "5+" => Some(Some(ExperienceBand::FivePlus)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub snippet_id: String,
    pub rater_id: String,
    /// 1 (unreadable) to 10 (highly readable).
    pub rating: u8,
    pub experience: Option<ExperienceBand>,
    pub knows_r: Option<bool>,
}

#[derive(Debug, Clone, Default)]
pub struct RatingsDataset {
    pub records: Vec<RatingRecord>,
    pub snippets: BTreeMap<String, SourceFile>,
}

impl RatingsDataset {
    /// Ratings grouped by snippet, in snippet-id order.
    pub fn by_snippet(&self) -> BTreeMap<&str, Vec<&RatingRecord>> {
        let mut groups: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
        for r in &self.records {
            groups.entry(r.snippet_id.as_str()).or_default().push(r);
        }
        groups
    }
}

#[derive(Debug, Error)]
pub enum RatingsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: rating {rating} outside 1..=10")]
    RatingOutOfRange { line: u64, rating: i64 },
    #[error("line {line}: snippet {snippet_id:?} not found in {dir}")]
    UnknownSnippet {
        line: u64,
        snippet_id: String,
        dir: PathBuf,
    },
}

fn resolve_snippet(dir: &Path, id: &str) -> Option<PathBuf> {
    [id.to_string(), format!("{id}.R"), format!("{id}.r")]
        .into_iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
}

/// Parses the ratings CSV and loads every referenced snippet from
/// `snippet_dir`. A snippet id resolves to `<dir>/<id>`, `<dir>/<id>.R`, or
/// `<dir>/<id>.r`.
pub fn load_ratings(path: &Path, snippet_dir: &Path) -> Result<RatingsDataset, RatingsError> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| RatingsError::Io { path: p, source }
    };
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut ds = RatingsDataset::default();
    let mut rows = reader.records();
    let header = match rows.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(malformed(&e, 1)),
        None => {
            return Err(RatingsError::MalformedRow {
                line: 1,
                reason: "missing header".into(),
            })
        }
    };
    if header.iter().collect::<Vec<_>>() != RATINGS_HEADER {
        return Err(RatingsError::MalformedRow {
            line: 1,
            reason: format!("header must be `{}`", RATINGS_HEADER.join(",")),
        });
    }

    for row in rows {
        let row = row.map_err(|e| malformed(&e, 0))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        if row.len() != RATINGS_HEADER.len() {
            return Err(RatingsError::MalformedRow {
                line,
                reason: format!(
                    "expected {} fields, found {}",
                    RATINGS_HEADER.len(),
                    row.len()
                ),
            });
        }
        let bad = |reason: String| RatingsError::MalformedRow { line, reason };
        let snippet_id = row[0].to_string();
        let rater_id = row[1].to_string();
        if snippet_id.is_empty() || rater_id.is_empty() {
            return Err(bad("empty snippet_id or rater_id".into()));
        }
        let rating: i64 = row[2]
            .parse()
            .map_err(|_| bad(format!("rating {:?} is not an integer", &row[2])))?;
        if !(1..=10).contains(&rating) {
            return Err(RatingsError::RatingOutOfRange { line, rating });
        }
        let experience = ExperienceBand::parse(&row[3])
            .ok_or_else(|| bad(format!("unknown experience_band {:?}", &row[3])))?;
        let knows_r = match &row[4] {
            "" => None,
            "true" => Some(true),
            "false" => Some(false),
            other => return Err(bad(format!("knows_r {other:?} is not true/false"))),
        };

        if !ds.snippets.contains_key(&snippet_id) {
            let snippet_path = resolve_snippet(snippet_dir, &snippet_id).ok_or_else(|| {
                RatingsError::UnknownSnippet {
                    line,
                    snippet_id: snippet_id.clone(),
                    dir: snippet_dir.to_path_buf(),
                }
            })?;
            let src = SourceFile::read(&snippet_path).map_err(io_err(&snippet_path))?;
            ds.snippets.insert(snippet_id.clone(), src);
        }
        ds.records.push(RatingRecord {
            snippet_id,
            rater_id,
            rating: rating as u8,
            experience,
            knows_r,
        });
    }
    Ok(ds)
}

fn malformed(e: &csv::Error, fallback_line: u64) -> RatingsError {
    RatingsError::MalformedRow {
        line: e.position().map(|p| p.line()).unwrap_or(fallback_line),
        reason: e.to_string(),
    }
}

/// Lower and upper Tukey fences (1.5 IQR beyond the quartiles).
pub fn outlier_fences(ratings: &[f64]) -> (f64, f64) {
    let mut sorted = ratings.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    (q1 - 1.5 * iqr, q3 + 1.5 * iqr)
}

/// Removes, per snippet, ratings strictly outside the Tukey fences. Fences
/// are computed once from the original ratings; there is no second pass.
/// Returns the cleaned dataset and the removed records in input order.
pub fn remove_outliers(ds: &RatingsDataset) -> (RatingsDataset, Vec<RatingRecord>) {
    let fences: BTreeMap<&str, (f64, f64)> = ds
        .by_snippet()
        .into_iter()
        .map(|(id, recs)| {
            let ratings: Vec<f64> = recs.iter().map(|r| r.rating as f64).collect();
            (id, outlier_fences(&ratings))
        })
        .collect();

    let (kept, removed): (Vec<RatingRecord>, Vec<RatingRecord>) =
        ds.records.iter().cloned().partition(|r| {
            let (lo, hi) = fences[r.snippet_id.as_str()];
            let v = r.rating as f64;
            v >= lo && v <= hi
        });
    (
        RatingsDataset {
            records: kept,
            snippets: ds.snippets.clone(),
        },
        removed,
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Targets {
    /// Mean surviving rating per snippet.
    pub means: BTreeMap<String, f64>,
    /// Snippets with no remaining ratings; excluded from `means`.
    pub empty_after_outliers: Vec<String>,
}

pub fn aggregate_targets(ds: &RatingsDataset) -> Targets {
    let groups = ds.by_snippet();
    let mut targets = Targets::default();
    for id in ds.snippets.keys() {
        match groups.get(id.as_str()) {
            Some(recs) if !recs.is_empty() => {
                let ratings: Vec<f64> = recs.iter().map(|r| r.rating as f64).collect();
                targets.means.insert(id.clone(), mean(&ratings));
            }
            _ => targets.empty_after_outliers.push(id.clone()),
        }
    }
    targets
}
