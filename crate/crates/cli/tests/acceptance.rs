//! Acceptance checks. Prints one PASS, FAIL or SKIP line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use re3_core::corpus::{distribution_report, CorpusRecord};
use re3_core::features::{extract_features, FeatureVector, FEATURE_COUNT};
use re3_core::lexer::{tokenize, SourceFile};
use re3_core::model::{
    aggregate_targets, feature_importance, load_ratings, remove_outliers, train,
    train_from_dataset, RatingRecord, RatingsDataset, ReadabilityModel, TrainConfig, SCORE_MAX,
    SCORE_MIN,
};
use re3_core::repro::{resolve_runtime, scan_dependencies};
use re3_core::stats::PermutationConfig;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Criterion<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.3}s", d.as_secs_f64())
}

fn fraction(s: &str) -> f64 {
    match s.split_once('/') {
        Some((n, d)) => n.parse::<f64>().unwrap() / d.parse::<f64>().unwrap(),
        None => s.parse().unwrap(),
    }
}

fn feature_oracle() -> Outcome {
    #[derive(serde::Deserialize)]
    struct Expected {
        line_count: usize,
        features: BTreeMap<String, String>,
    }
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/features");
    let expected: BTreeMap<String, Expected> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
    let start = Instant::now();
    let mut bad = Vec::new();
    for (file, exp) in &expected {
        let fv = extract_features(&SourceFile::read(&dir.join(file)).unwrap()).unwrap();
        if fv.line_count != exp.line_count {
            bad.push(format!("{file}: line_count"));
        }
        for (name, got) in fv.named() {
            let want = exp.features.get(name).map(|s| fraction(s)).unwrap_or(0.0);
            if (got - want).abs() > 1e-12 {
                bad.push(format!("{file}: {name}"));
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        expected.len() == 10 && bad.is_empty() && elapsed < Duration::from_secs(1),
        format!(
            "{} files, {} mismatches {:?}, {}",
            expected.len(),
            bad.len(),
            bad,
            secs(elapsed)
        ),
    )
}

fn gaussian_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let (upper, lower) = a.split_at_mut(col + 1);
        let pivot_row = &upper[col];
        for (offset, row) in lower.iter_mut().enumerate() {
            let factor = row[col] / pivot_row[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= factor * p;
            }
            b[col + 1 + offset] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Ordinary least squares on raw features with an intercept, via the normal equations.
fn normal_equation_fit(rows: &[[f64; FEATURE_COUNT]], y: &[f64]) -> Vec<f64> {
    let k = FEATURE_COUNT + 1;
    let mut a = vec![vec![0.0; k]; k];
    let mut b = vec![0.0; k];
    for (r, yi) in rows.iter().zip(y) {
        let mut v = vec![1.0];
        v.extend_from_slice(r);
        for p in 0..k {
            for q in 0..k {
                a[p][q] += v[p] * v[q];
            }
            b[p] += v[p] * yi;
        }
    }
    gaussian_solve(a, b)
}

fn regression_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let planted: Vec<f64> = (0..FEATURE_COUNT)
        .map(|_| rng.random_range(-0.2..0.2))
        .collect();
    let rows: Vec<[f64; FEATURE_COUNT]> = (0..200)
        .map(|_| std::array::from_fn(|j| rng.random_range(0.0..(1.0 + j as f64 / 4.0))))
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| 5.5 + r.iter().zip(&planted).map(|(f, w)| f * w).sum::<f64>())
        .collect();
    let x: Vec<FeatureVector> = rows
        .iter()
        .map(|r| FeatureVector::from_array(*r, 20))
        .collect();

    let start = Instant::now();
    let (model, report) = train(&x, &y, &TrainConfig::default()).unwrap();
    let elapsed = start.elapsed();

    let train_rows: Vec<usize> = (0..rows.len())
        .filter(|i| !report.test_indices.contains(i))
        .collect();
    let coef = normal_equation_fit(
        &train_rows.iter().map(|&i| rows[i]).collect::<Vec<_>>(),
        &train_rows.iter().map(|&i| y[i]).collect::<Vec<_>>(),
    );
    let worst = rows
        .iter()
        .zip(&x)
        .map(|(r, fv)| {
            let oracle = coef[0] + r.iter().zip(&coef[1..]).map(|(f, w)| f * w).sum::<f64>();
            (model.raw_score(fv).unwrap() - oracle).abs()
        })
        .fold(0.0, f64::max);
    check(
        report.test_mse < 1e-10 && worst <= 1e-8 && elapsed < Duration::from_secs(1),
        format!(
            "test MSE {:.3e}, max |pred - oracle| {:.3e}, {}",
            report.test_mse,
            worst,
            secs(elapsed)
        ),
    )
}

fn type7_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn rating(snippet: &str, rater: usize, value: u8) -> RatingRecord {
    RatingRecord {
        snippet_id: snippet.to_string(),
        rater_id: format!("r{rater}"),
        rating: value,
        experience: None,
        knows_r: None,
    }
}

fn outlier_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut records = Vec::new();
    for s in 0..50 {
        let id = format!("s{s:02}");
        let centre = rng.random_range(3..=8);
        let n = rng.random_range(4..=25);
        for r in 0..n {
            let v = if rng.random_bool(0.12) {
                rng.random_range(1..=10)
            } else {
                (centre + rng.random_range(-1i32..=1)).clamp(1, 10) as u8
            };
            records.push(rating(&id, r, v));
        }
    }
    // Quartiles 4 and 6: the fences are exactly 1 and 9.
    for (r, v) in [1, 4, 4, 5, 6, 6, 9].into_iter().enumerate() {
        records.push(rating("s50_fence", r, v));
    }
    let ds = RatingsDataset {
        records,
        snippets: BTreeMap::new(),
    };
    let (_, removed) = remove_outliers(&ds);
    let got: BTreeSet<(String, String)> = removed
        .iter()
        .map(|r| (r.snippet_id.clone(), r.rater_id.clone()))
        .collect();

    let mut want = BTreeSet::new();
    let mut at_fence = 0;
    let mut agree = 0;
    let mut groups: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    for r in &ds.records {
        groups.entry(&r.snippet_id).or_default().push(r);
    }
    for (id, recs) in &groups {
        let mut sorted: Vec<f64> = recs.iter().map(|r| r.rating as f64).collect();
        sorted.sort_by(f64::total_cmp);
        let (q1, q3) = (type7_quantile(&sorted, 0.25), type7_quantile(&sorted, 0.75));
        let (lo, hi) = (q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1));
        let mut expected = BTreeSet::new();
        for r in recs {
            let v = r.rating as f64;
            if v == lo || v == hi {
                at_fence += 1;
            }
            if v < lo || v > hi {
                expected.insert((id.to_string(), r.rater_id.clone()));
            }
        }
        let actual: BTreeSet<_> = got.iter().filter(|(s, _)| s == id).cloned().collect();
        if actual == expected {
            agree += 1;
        }
        want.extend(expected);
    }
    let fence_kept = !got.iter().any(|(s, _)| s == "s50_fence");
    check(
        agree == groups.len() && got == want && fence_kept && at_fence >= 2,
        format!(
            "{agree}/{} snippets agree, {} removed, {at_fence} fence-equal ratings kept: {fence_kept}",
            groups.len(),
            got.len()
        ),
    )
}

fn survey_data() -> Outcome {
    let Some(dir) = std::env::var_os("RE3_SURVEY_DATA").map(PathBuf::from) else {
        return Outcome::Skip(
            "RE3_SURVEY_DATA not set; the released survey dataset is not available".into(),
        );
    };
    let ds = match load_ratings(&dir.join("ratings.csv"), &dir.join("snippets")) {
        Ok(ds) => ds,
        Err(e) => return Outcome::Fail(format!("loading {}: {e}", dir.display())),
    };
    let mut all: Vec<f64> = ds.records.iter().map(|r| r.rating as f64).collect();
    all.sort_by(f64::total_cmp);
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let median = type7_quantile(&all, 0.5);
    let run = match train_from_dataset(&ds, &TrainConfig::default()) {
        Ok(run) => run,
        Err(e) => return Outcome::Fail(format!("training: {e}")),
    };
    let outlier_pct = 100.0 * run.report.outlier_fraction;
    let accuracy = run.report.classification_accuracy;

    let (cleaned, _) = remove_outliers(&ds);
    let targets = aggregate_targets(&cleaned);
    let x: Vec<FeatureVector> = targets
        .means
        .keys()
        .map(|id| extract_features(&ds.snippets[id]).unwrap())
        .collect();
    let y: Vec<f64> = targets.means.values().copied().collect();
    let mut ranked = feature_importance(
        &x,
        &y,
        &PermutationConfig {
            permutations: 999,
            seed: 0,
        },
    )
    .unwrap();
    ranked.sort_by(|a, b| b.pearson_r.abs().total_cmp(&a.pearson_r.abs()));
    let rank = ranked
        .iter()
        .position(|f| f.feature == "avg_line_length")
        .unwrap()
        + 1;

    check(
        (mean - 5.8).abs() <= 0.05 && median == 6.0 && (outlier_pct - 1.6).abs() <= 0.5 && accuracy >= 0.70 && rank <= 3,
        format!(
            "mean {mean:.3}, median {median}, outliers {outlier_pct:.2}%, accuracy {accuracy:.2}, avg_line_length rank {rank}"
        ),
    )
}

fn determinism(state: &Path) -> Outcome {
    let a = state.join("model_a.json");
    let b = state.join("model_b.json");
    let trained = [train_model(state, &a, 1), train_model(state, &b, 1)];
    if trained.iter().any(|o| code(o) != 0) {
        return Outcome::Fail("train exited with an error".into());
    }
    let models_equal = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();

    let mut dockerfiles = Vec::new();
    for name in ["Dockerfile.a", "Dockerfile.b"] {
        let path = state.join(name);
        let out = re3(state)
            .arg("containerize")
            .arg(fixtures().join("packages/clean"))
            .arg("--out")
            .arg(&path)
            .output()
            .unwrap();
        if code(&out) != 0 {
            return Outcome::Fail("containerize exited with an error".into());
        }
        dockerfiles.push(std::fs::read(&path).unwrap());
    }
    let dockerfiles_equal = dockerfiles[0] == dockerfiles[1];
    check(
        models_equal && dockerfiles_equal,
        format!(
            "model files identical: {models_equal}, Dockerfiles identical: {dockerfiles_equal}"
        ),
    )
}

fn stub_packages(state: &Path) -> Outcome {
    let start = Instant::now();
    let mut statuses = Vec::new();
    let mut mismatch_flagged = false;
    for name in ["clean", "missing_library", "version_mismatch"] {
        let pkg = package(name, &state.join("packages"));
        let out = re3(&state.join("stub"))
            .arg("--json")
            .arg("run")
            .arg(&pkg)
            .arg("--runtime")
            .arg(stub_runtime())
            .output()
            .unwrap();
        let doc = json(&out);
        statuses.push(
            doc["report"]["overall"]
                .as_str()
                .unwrap_or("none")
                .to_string(),
        );
        if name == "version_mismatch" {
            mismatch_flagged = doc["findings"]
                .as_array()
                .is_some_and(|fs| fs.iter().any(|f| f["kind"] == "UndeclaredRVersionMention"));
        }
    }
    let elapsed = start.elapsed();
    check(
        statuses == ["success", "error", "success"]
            && mismatch_flagged
            && elapsed < Duration::from_secs(5),
        format!(
            "{}, version mention flagged: {mismatch_flagged}, {}",
            statuses.join(" / "),
            secs(elapsed)
        ),
    )
}

fn r_line() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            "[a-zA-Z_. ]{0,6}",
            Just("<-".to_string()),
            Just("\"s#\\\"x\"".to_string()),
            Just("'q'".to_string()),
            Just("# c \"".to_string()),
            Just("%in%".to_string()),
            Just("if (x > 1) y else z".to_string()),
            Just("for (i in 1:3) next".to_string()),
            "[0-9.eEL]{1,4}",
            "[-+*/^=<>!&|:,;{}\\[\\]()$@~?\\t]{1,3}",
        ],
        0..8,
    )
    .prop_map(|parts| parts.concat())
}

/// Lines whose brackets balance, so nesting depth returns to zero at each line end.
fn balanced_r_line() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            "[a-zA-Z_. ]{0,6}",
            Just("<-".to_string()),
            Just("\"s#(\\\"x\"".to_string()),
            Just("# c [ \"".to_string()),
            Just("f(a, b = 2)".to_string()),
            Just("x[[i]][2]".to_string()),
            Just("if (x > 1) y else z".to_string()),
            Just("{ y <- 0 }".to_string()),
            "[0-9.eEL]{1,4}",
            "[-+*/^=<>!&|:,;$@~?\\t]{1,3}",
        ],
        0..8,
    )
    .prop_map(|parts| parts.concat())
}

fn dep_line() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{2,6}".prop_map(|p| format!("library({p})")),
        "[a-z]{2,6}".prop_map(|p| format!("require(\"{p}\")")),
        "[a-z]{2,6}".prop_map(|p| format!("requireNamespace('{p}')")),
        "[a-z]{2,6}".prop_map(|p| format!("y <- {p}::f(1)")),
        "[a-z]{2,6}".prop_map(|p| format!("# library({p})")),
        Just("x <- c(1, 2)".to_string()),
    ]
}

fn run_property<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))
}

fn property_suites() -> Outcome {
    let lines = || proptest::collection::vec(r_line(), 1..8);
    let results = [
        run_property("lexer round-trip", lines(), |lines| {
            let src = SourceFile::new("p.R", &lines.join("\n"));
            let lexed = tokenize(&src);
            for (i, line) in src.lines.iter().enumerate() {
                let joined: String = lexed.line_tokens(i).map(|t| t.text.as_str()).collect();
                prop_assert_eq!(&joined, line);
            }
            Ok(())
        }),
        run_property(
            "line duplication",
            proptest::collection::vec(balanced_r_line(), 1..8),
            |lines| {
                let once: String = lines.iter().map(|l| format!("{l}\n")).collect();
                let a = extract_features(&SourceFile::new("a.R", &once)).unwrap();
                let b = extract_features(&SourceFile::new("b.R", &once.repeat(2))).unwrap();
                for ((name, x), (_, y)) in a.named().zip(b.named()) {
                    prop_assert!((x - y).abs() <= 1e-12, "{}: {} vs {}", name, x, y);
                }
                Ok(())
            },
        ),
        run_property(
            "score clamp",
            (
                -100.0f64..100.0,
                proptest::collection::vec(-50.0f64..50.0, FEATURE_COUNT),
                proptest::collection::vec(0.0f64..500.0, FEATURE_COUNT),
            ),
            |(bias, weights, values)| {
                let mut m = ReadabilityModel::constant(bias);
                m.weights = weights;
                let s = m
                    .predict(&FeatureVector::from_array(values.try_into().unwrap(), 1))
                    .unwrap();
                prop_assert!((SCORE_MIN..=SCORE_MAX).contains(&s));
                Ok(())
            },
        ),
        run_property(
            "histogram conservation",
            (
                proptest::collection::vec((1.0f64..=10.0, 0usize..4), 1..60),
                prop_oneof![Just(0.5), Just(0.25), Just(1.0), 0.1f64..3.0],
            ),
            |(scores, width)| {
                let records: Vec<CorpusRecord> = scores
                    .iter()
                    .enumerate()
                    .map(|(i, (s, g))| CorpusRecord {
                        path: format!("g{g}/f{i}.R"),
                        group: format!("g{g}"),
                        score: *s,
                        line_count: 1,
                        features: FeatureVector::from_array([0.0; FEATURE_COUNT], 1),
                    })
                    .collect();
                let report = distribution_report(&records, width).unwrap();
                prop_assert_eq!(
                    report.groups.iter().map(|g| g.count).sum::<usize>(),
                    records.len()
                );
                for g in &report.groups {
                    prop_assert_eq!(g.histogram.iter().sum::<usize>(), g.count);
                }
                Ok(())
            },
        ),
        run_property(
            "dependency scan idempotence",
            proptest::collection::vec(proptest::collection::vec(dep_line(), 0..6), 1..5),
            |files| {
                let sources: Vec<SourceFile> = files
                    .iter()
                    .enumerate()
                    .map(|(i, lines)| SourceFile::new(format!("f{i}.R"), &lines.join("\n")))
                    .collect();
                let first = scan_dependencies(&sources);
                prop_assert_eq!(&first, &scan_dependencies(&sources));
                Ok(())
            },
        ),
    ];
    let failures: Vec<String> = results.into_iter().filter_map(Result::err).collect();
    check(
        failures.is_empty(),
        format!("5 properties x 1000 cases, failures: {failures:?}"),
    )
}

const SMOKE_SCRIPT: &str = "cat(\"hello from R\\n\")\npdf(\"plot.pdf\")\nplot(1:10)\ndev.off()\n";

fn container_smoke(state: &Path) -> Outcome {
    let Some(runtime) = ["docker", "podman"]
        .into_iter()
        .find(|r| resolve_runtime(r).is_ok())
    else {
        return Outcome::Skip("no docker or podman on PATH".into());
    };
    let pkg = state.join("smoke");
    std::fs::create_dir_all(&pkg).unwrap();
    std::fs::write(pkg.join("main.R"), SMOKE_SCRIPT).unwrap();
    std::fs::write(
        pkg.join("re3.json"),
        r#"{"author": "Smoke Test", "title": "Smoke", "r_version": "4.3.1", "code_license": "MIT",
            "data_license": "CC0-1.0", "execution_order": ["main.R"]}"#,
    )
    .unwrap();
    let out = re3(state)
        .arg("--json")
        .arg("run")
        .arg(&pkg)
        .arg("--runtime")
        .arg(runtime)
        .output()
        .unwrap();
    let doc = json(&out);
    let overall = doc["report"]["overall"]
        .as_str()
        .unwrap_or("none")
        .to_string();
    let has_pdf = doc["report"]["artifacts"]
        .as_array()
        .is_some_and(|a| a.iter().any(|x| x["path"] == "plot.pdf"));
    let printed = doc["report"]["per_file"][0]["stdout_tail"]
        .as_str()
        .is_some_and(|s| s.contains("hello from R"));
    check(
        overall == "success" && has_pdf && printed,
        format!(
            "{runtime}: overall {overall}, plot.pdf listed: {has_pdf}, output captured: {printed}"
        ),
    )
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let sub = |name: &str| {
        let p = tmp.path().join(name);
        std::fs::create_dir_all(&p).unwrap();
        p
    };
    let criteria: Vec<(&str, Criterion)> = vec![
        ("feature extraction oracle", Box::new(feature_oracle)),
        ("regression recovery", Box::new(regression_recovery)),
        ("outlier removal", Box::new(outlier_oracle)),
        ("survey data", Box::new(survey_data)),
        ("determinism", Box::new(|| determinism(&sub("determinism")))),
        (
            "stub runtime packages",
            Box::new(|| stub_packages(&sub("stub"))),
        ),
        ("property suites", Box::new(property_suites)),
        (
            "container smoke",
            Box::new(|| container_smoke(&sub("smoke"))),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let (tag, detail) = match run() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {} {name}: {detail}", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
