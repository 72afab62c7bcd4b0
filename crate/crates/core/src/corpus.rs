//! Batch scoring of R file collections and grouped score distributions.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::features::{extract_features, FeatureVector};
use crate::lexer::SourceFile;
use crate::model::{ModelError, ReadabilityModel, SCORE_MAX, SCORE_MIN};
use crate::stats::median;

pub const MAX_FILE_BYTES: u64 = 1 << 20;
pub const DEFAULT_BIN_WIDTH: f64 = 0.5;
/// Optional `path,group` sidecar at the corpus root.
pub const GROUPS_FILE: &str = "groups.csv";
pub const UNKNOWN_GROUP: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub path: String,
    pub group: String,
    pub score: f64,
    pub line_count: usize,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum SkipReason {
    EmptyFile,
    TooLarge { bytes: u64 },
    NotUtf8,
    Unreadable { error: String },
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipReason::EmptyFile => f.write_str("empty file"),
            SkipReason::TooLarge { bytes } => {
                write!(f, "{bytes} bytes exceeds the {MAX_FILE_BYTES}-byte limit")
            }
            SkipReason::NotUtf8 => f.write_str("not valid UTF-8"),
            SkipReason::Unreadable { error } => write!(f, "unreadable: {error}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    #[serde(flatten)]
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScan {
    pub records: Vec<CorpusRecord>,
    pub skipped: Vec<SkippedFile>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no .R or .r files under {0}")]
    NoFilesFound(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{GROUPS_FILE} line {line}: {reason}")]
    Sidecar { line: u64, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("bin width {0} must be positive and at most 9")]
    InvalidBinWidth(f64),
    #[error("no records to summarize")]
    NoRecords,
}

fn is_r_file(path: &str) -> bool {
    path.ends_with(".R") || path.ends_with(".r")
}

/// R files under `dir` as sorted `/`-joined relative paths.
pub fn discover(dir: &Path) -> Result<Vec<String>, CorpusError> {
    let mut out = Vec::new();
    let walker = WalkDir::new(dir).into_iter().filter_entry(|e| {
        e.depth() == 0
            || !(e.file_type().is_dir() && e.file_name().to_string_lossy().starts_with('.'))
    });
    for entry in walker {
        let entry = entry.map_err(|e| CorpusError::Io {
            path: dir.to_path_buf(),
            source: io::Error::other(e),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(dir)
            .expect("walk stays under root");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if is_r_file(&rel) {
            out.push(rel);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_groups(dir: &Path) -> Result<Option<BTreeMap<String, String>>, CorpusError> {
    let path = dir.join(GROUPS_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let mut reader = csv::Reader::from_path(&path).map_err(|e| CorpusError::Sidecar {
        line: 0,
        reason: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| CorpusError::Sidecar {
        line: 1,
        reason: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != ["path", "group"] {
        return Err(CorpusError::Sidecar {
            line: 1,
            reason: "header must be `path,group`".into(),
        });
    }
    let mut groups = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| CorpusError::Sidecar {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let (path, group) = (row[0].trim(), row[1].trim());
        if path.is_empty() || group.is_empty() {
            return Err(CorpusError::Sidecar {
                line,
                reason: "empty path or group".into(),
            });
        }
        groups.insert(path.trim_start_matches("./").to_string(), group.to_string());
    }
    Ok(Some(groups))
}

/// Sidecar entry if present, else the first directory of the relative path.
pub fn group_for(rel: &str, sidecar: Option<&BTreeMap<String, String>>) -> String {
    if let Some(g) = sidecar.and_then(|s| s.get(rel)) {
        return g.clone();
    }
    match rel.split_once('/') {
        Some((first, _)) if !first.is_empty() => first.to_string(),
        _ => UNKNOWN_GROUP.to_string(),
    }
}

/// Reads and scores one file. The source path is kept as given.
pub fn score_file(
    path: &Path,
    display: &str,
    model: &ReadabilityModel,
) -> Result<(FeatureVector, f64), SkipReason> {
    let md = std::fs::metadata(path).map_err(|e| SkipReason::Unreadable {
        error: e.to_string(),
    })?;
    if md.len() > MAX_FILE_BYTES {
        return Err(SkipReason::TooLarge { bytes: md.len() });
    }
    let bytes = std::fs::read(path).map_err(|e| SkipReason::Unreadable {
        error: e.to_string(),
    })?;
    let text = String::from_utf8(bytes).map_err(|_| SkipReason::NotUtf8)?;
    let src = SourceFile::new(display, &text);
    let features = extract_features(&src).map_err(|_| SkipReason::EmptyFile)?;
    let score = model
        .predict(&features)
        .map_err(|e| SkipReason::Unreadable {
            error: e.to_string(),
        })?;
    Ok((features, score))
}

pub fn score_corpus(dir: &Path, model: &ReadabilityModel) -> Result<CorpusScan, CorpusError> {
    model.validate()?;
    let files = discover(dir)?;
    if files.is_empty() {
        return Err(CorpusError::NoFilesFound(dir.to_path_buf()));
    }
    let groups = load_groups(dir)?;
    let results: Vec<Result<CorpusRecord, SkippedFile>> = files
        .par_iter()
        .map(|rel| match score_file(&dir.join(rel), rel, model) {
            Ok((features, score)) => Ok(CorpusRecord {
                path: rel.clone(),
                group: group_for(rel, groups.as_ref()),
                score,
                line_count: features.line_count,
                features,
            }),
            Err(reason) => Err(SkippedFile {
                path: rel.clone(),
                reason,
            }),
        })
        .collect();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(s) => skipped.push(s),
        }
    }
    records.sort_by(|a, b| a.path.cmp(&b.path));
    skipped.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(CorpusScan { records, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    /// Counts per bin, aligned with the report's `bin_edges`.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub bin_width: f64,
    /// `n + 1` edges for `n` bins; every bin is half-open except the last.
    pub bin_edges: Vec<f64>,
    pub groups: Vec<GroupStats>,
}

pub fn bin_edges(bin_width: f64) -> Result<Vec<f64>, CorpusError> {
    let span = SCORE_MAX - SCORE_MIN;
    if !(bin_width.is_finite() && bin_width > 0.0 && bin_width <= span) {
        return Err(CorpusError::InvalidBinWidth(bin_width));
    }
    let n = ((span / bin_width) - 1e-9).ceil() as usize;
    let mut edges: Vec<f64> = (0..n).map(|i| SCORE_MIN + i as f64 * bin_width).collect();
    edges.push(SCORE_MAX);
    Ok(edges)
}

/// Bin index of `score`: the last bin whose lower edge is at or below it.
pub fn bin_index(edges: &[f64], score: f64) -> usize {
    let bins = edges.len() - 1;
    edges[..bins]
        .partition_point(|&lo| lo <= score)
        .saturating_sub(1)
}

/// Per-group statistics in lexicographic group order. The result does not
/// depend on the order of `records`.
pub fn distribution_report(
    records: &[CorpusRecord],
    bin_width: f64,
) -> Result<DistributionReport, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::NoRecords);
    }
    let edges = bin_edges(bin_width)?;
    let mut by_group: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_group.entry(r.group.as_str()).or_default().push(r.score);
    }
    let groups = by_group
        .into_iter()
        .map(|(group, mut scores)| {
            scores.sort_by(f64::total_cmp);
            let mut histogram = vec![0; edges.len() - 1];
            for &s in &scores {
                histogram[bin_index(&edges, s)] += 1;
            }
            GroupStats {
                group: group.to_string(),
                count: scores.len(),
                mean: scores.iter().sum::<f64>() / scores.len() as f64,
                median: median(&scores),
                min: scores[0],
                max: scores[scores.len() - 1],
                histogram,
            }
        })
        .collect();
    Ok(DistributionReport {
        bin_width,
        bin_edges: edges,
        groups,
    })
}

/// `path,group,score,line_count` rows in record order.
pub fn write_csv<W: io::Write>(records: &[CorpusRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "group", "score", "line_count"])?;
    for r in records {
        w.write_record([
            r.path.as_str(),
            r.group.as_str(),
            &r.score.to_string(),
            &r.line_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
