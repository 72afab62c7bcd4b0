use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use re3_core::corpus::{
    distribution_report, score_corpus, write_csv, DistributionReport, SkippedFile,
};
use re3_core::features::{extract_features, FeatureVector};
use re3_core::lexer::{tokenize, SourceFile, TokenKind};
use re3_core::model::{
    self, classify, feature_importance, load_ratings, remove_outliers, train_from_dataset, Label,
    ReadabilityModel, Suggestion, TrainConfig, TrainReport,
};
use re3_core::stats::{CorrelationMethod, PermutationConfig};

use crate::output::{CmdResult, Failure, Output, EXIT_OK};

fn read_source(path: &Path) -> Result<SourceFile, Failure> {
    if !path.is_file() {
        return Err(Failure::validation(format!(
            "{}: no such file",
            path.display()
        )));
    }
    SourceFile::read(path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ReadabilityModel, Failure> {
    ReadabilityModel::load(path).map_err(Failure::validation)
}

fn features_of(src: &SourceFile) -> Result<FeatureVector, Failure> {
    extract_features(src).map_err(Failure::validation)
}

#[derive(Serialize)]
struct TokenRecord<'a> {
    kind: TokenKind,
    text: &'a str,
    line: usize,
    col: usize,
}

#[derive(Serialize)]
struct FeaturesOutput<'a> {
    path: String,
    line_count: usize,
    features: BTreeMap<&'a str, f64>,
}

pub fn features(out: &Output, path: &Path, debug_tokens: bool) -> CmdResult {
    let src = read_source(path)?;
    if debug_tokens {
        let lexed = tokenize(&src);
        for w in &lexed.warnings {
            out.warn(format!("{}: {w}", path.display()));
        }
        let records: Vec<TokenRecord> = lexed
            .tokens
            .iter()
            .map(|t| TokenRecord {
                kind: t.kind,
                text: &t.text,
                line: t.line + 1,
                col: t.col + 1,
            })
            .collect();
        println!(
            "{}",
            serde_json::to_string_pretty(&records).expect("tokens serialize")
        );
        return Ok(EXIT_OK);
    }
    let fv = features_of(&src)?;
    let doc = FeaturesOutput {
        path: path.display().to_string(),
        line_count: fv.line_count,
        features: fv.named().collect(),
    };
    out.emit(&doc, || {
        println!("{} ({} lines)", doc.path, doc.line_count);
        for (name, value) in fv.named() {
            println!("  {name:<18} {value:>10.4}");
        }
    });
    Ok(EXIT_OK)
}

pub struct TrainOptions {
    pub ratings: PathBuf,
    pub snippets: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub split: f64,
    pub folds: usize,
    pub ridge: f64,
    pub timestamp: bool,
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    model: String,
    n_snippets: usize,
    report: &'a TrainReport,
    empty_after_outliers: &'a [String],
}

pub fn train(out: &Output, opts: &TrainOptions) -> CmdResult {
    if !(opts.split > 0.0 && opts.split < 1.0) {
        return Err(Failure::usage(format!(
            "--split {} must be between 0 and 1",
            opts.split
        )));
    }
    if opts.folds < 2 {
        return Err(Failure::usage("--folds must be at least 2"));
    }
    if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
        return Err(Failure::usage("--ridge must be a non-negative number"));
    }
    let ds = load_ratings(&opts.ratings, &opts.snippets).map_err(Failure::validation)?;
    let cfg = TrainConfig {
        seed: opts.seed,
        split: opts.split,
        folds: opts.folds,
        ridge: opts.ridge,
    };
    let run = train_from_dataset(&ds, &cfg).map_err(Failure::validation)?;
    for id in &run.empty_after_outliers {
        out.warn(format!(
            "snippet {id} lost every rating to outlier removal and was left out"
        ));
    }
    let mut model = run.model.clone();
    if opts.timestamp {
        model.metadata.stamp_now();
    }
    model
        .save(&opts.out)
        .map_err(|e| Failure::validation(format!("writing model: {e}")))?;
    let r = &run.report;
    let doc = TrainOutput {
        model: opts.out.display().to_string(),
        n_snippets: run.snippet_ids.len(),
        report: r,
        empty_after_outliers: &run.empty_after_outliers,
    };
    out.emit(&doc, || {
        if out.quiet {
            return;
        }
        println!(
            "trained on {} snippets ({} train / {} test, seed {})",
            doc.n_snippets, r.n_train, r.n_test, r.split_seed
        );
        println!(
            "outliers removed: {} ({:.2}% of ratings)",
            r.n_outliers_removed,
            100.0 * r.outlier_fraction
        );
        println!(
            "train MSE {:.4}  test MSE {:.4}  CV mean MSE {:.4}",
            r.train_mse, r.test_mse, r.cv_mean_mse
        );
        println!(
            "test classification accuracy {:.1}%",
            100.0 * r.classification_accuracy
        );
        println!("model written to {}", doc.model);
    });
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ScoreOutput<'a> {
    path: String,
    score: f64,
    label: Label,
    features: BTreeMap<&'a str, f64>,
    suggestions: Vec<Suggestion>,
}

pub fn score(out: &Output, path: &Path, model_path: &Path) -> CmdResult {
    let src = read_source(path)?;
    let m = load_model(model_path)?;
    let fv = features_of(&src)?;
    let score = m.predict(&fv).map_err(Failure::validation)?;
    let doc = ScoreOutput {
        path: path.display().to_string(),
        score,
        label: classify(score),
        features: fv.named().collect(),
        suggestions: model::suggest(&fv, &m).map_err(Failure::validation)?,
    };
    out.emit(&doc, || {
        println!("{}: {} ({})", doc.path, out.score(score), doc.label);
    });
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SuggestOutput {
    path: String,
    score: f64,
    suggestions: Vec<Suggestion>,
}

pub fn suggest(out: &Output, path: &Path, model_path: &Path, threshold: f64) -> CmdResult {
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(Failure::usage("--threshold must be a non-negative number"));
    }
    let src = read_source(path)?;
    let m = load_model(model_path)?;
    let fv = features_of(&src)?;
    let doc = SuggestOutput {
        path: path.display().to_string(),
        score: m.predict(&fv).map_err(Failure::validation)?,
        suggestions: model::suggest_with_threshold(&fv, &m, threshold)
            .map_err(Failure::validation)?,
    };
    out.emit(&doc, || {
        println!("{}: {}", doc.path, out.score(doc.score));
        if doc.suggestions.is_empty() {
            println!("  nothing to suggest");
        }
        for s in &doc.suggestions {
            println!("  [{}] {}: {}", s.severity, s.feature, s.message);
        }
    });
    Ok(EXIT_OK)
}

pub fn importance(
    out: &Output,
    ratings: &Path,
    snippets: &Path,
    seed: u64,
    permutations: usize,
) -> CmdResult {
    let ds = load_ratings(ratings, snippets).map_err(Failure::validation)?;
    let (cleaned, _) = remove_outliers(&ds);
    let targets = model::aggregate_targets(&cleaned);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (id, t) in &targets.means {
        x.push(
            extract_features(&ds.snippets[id])
                .map_err(|e| Failure::validation(format!("{id}: {e}")))?,
        );
        y.push(*t);
    }
    let cfg = PermutationConfig { permutations, seed };
    let result = feature_importance(&x, &y, &cfg).map_err(Failure::validation)?;
    out.emit(&result, || {
        let mut ranked = result.clone();
        ranked.sort_by(|a, b| b.pearson_r.abs().total_cmp(&a.pearson_r.abs()));
        println!("{:<18} {:>8} {:>8}", "feature", "r", "p");
        for fi in &ranked {
            println!(
                "{:<18} {:>8.3} {:>8.4}",
                fi.feature, fi.pearson_r, fi.p_value
            );
        }
    });
    Ok(EXIT_OK)
}

pub fn agreement(
    out: &Output,
    ratings: &Path,
    snippets: &Path,
    model_path: &Path,
    seed: u64,
    permutations: usize,
) -> CmdResult {
    let m = load_model(model_path)?;
    let ds = load_ratings(ratings, snippets).map_err(Failure::validation)?;
    let mut predictions = BTreeMap::new();
    for (id, src) in &ds.snippets {
        let fv = extract_features(src).map_err(|e| Failure::validation(format!("{id}: {e}")))?;
        predictions.insert(id.clone(), m.predict(&fv).map_err(Failure::validation)?);
    }
    let cfg = PermutationConfig { permutations, seed };
    let mut results = Vec::new();
    for method in [
        CorrelationMethod::Spearman,
        CorrelationMethod::Pearson,
        CorrelationMethod::Kendall,
    ] {
        results
            .push(model::agreement(&predictions, &ds, method, &cfg).map_err(Failure::validation)?);
    }
    out.emit(&results, || {
        println!(
            "{:<10} {:>8} {:>8} {:>7}",
            "method", "mean r", "mean p", "raters"
        );
        for a in &results {
            let name = serde_json::to_value(a.method)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            println!(
                "{name:<10} {:>8.3} {:>8.4} {:>7}",
                a.mean_corr,
                a.mean_p,
                a.raters.len()
            );
        }
    });
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct CorpusOutput<'a> {
    #[serde(flatten)]
    report: &'a DistributionReport,
    n_records: usize,
    skipped: &'a [SkippedFile],
}

pub fn corpus(
    out: &Output,
    dir: &Path,
    model_path: &Path,
    report_path: &Path,
    csv_path: Option<&Path>,
    bin_width: f64,
) -> CmdResult {
    re3_core::corpus::bin_edges(bin_width).map_err(Failure::usage)?;
    if !dir.is_dir() {
        return Err(Failure::validation(format!(
            "{}: not a directory",
            dir.display()
        )));
    }
    let m = load_model(model_path)?;
    let scan = score_corpus(dir, &m).map_err(Failure::validation)?;
    for s in &scan.skipped {
        out.warn(format!("skipped {}: {}", s.path, s.reason));
    }
    if scan.records.is_empty() {
        return Err(Failure::validation("no file could be scored"));
    }
    let report = distribution_report(&scan.records, bin_width).map_err(Failure::validation)?;
    let doc = CorpusOutput {
        report: &report,
        n_records: scan.records.len(),
        skipped: &scan.skipped,
    };
    let text = serde_json::to_string_pretty(&doc).expect("report serializes") + "\n";
    std::fs::write(report_path, text)
        .map_err(|e| Failure::validation(format!("{}: {e}", report_path.display())))?;
    if let Some(p) = csv_path {
        let file = std::fs::File::create(p)
            .map_err(|e| Failure::validation(format!("{}: {e}", p.display())))?;
        write_csv(&scan.records, file)
            .map_err(|e| Failure::validation(format!("{}: {e}", p.display())))?;
    }
    out.emit(&doc, || {
        println!(
            "{:<12} {:>6} {:>6} {:>6} {:>6} {:>6}",
            "group", "count", "mean", "median", "min", "max"
        );
        for g in &report.groups {
            println!(
                "{:<12} {:>6} {:>6.2} {:>6.2} {:>6.2} {:>6.2}",
                g.group, g.count, g.mean, g.median, g.min, g.max
            );
        }
        if !out.quiet {
            println!("report written to {}", report_path.display());
        }
    });
    Ok(EXIT_OK)
}
