use std::path::Path;

use serde::Serialize;

use re3_core::repro::container::RUNNER_NAME;
use re3_core::repro::execute::FileResult;
use re3_core::repro::{
    execute, generate_container_spec, has_errors, init_manifest, r_sources, resolve_runtime,
    scan_dependencies, static_checks, validate_manifest, DependencyReport, ExecConfig,
    ExecuteError, ExecutionReport, FileStatus, Manifest, OnError, Overall, StaticFinding,
};

use crate::output::{
    CmdResult, Failure, Output, EXIT_BUILD, EXIT_ENVIRONMENT, EXIT_EXECUTION, EXIT_OK,
    EXIT_VALIDATION,
};

const DEFAULT_RUNTIMES: [&str; 2] = ["docker", "podman"];

fn require_dir(dir: &Path) -> Result<(), Failure> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Failure::validation(format!(
            "{}: not a directory",
            dir.display()
        )))
    }
}

fn manifest_of(dir: &Path) -> Result<Manifest, Failure> {
    require_dir(dir)?;
    validate_manifest(dir).map_err(|e| Failure::validation(format!("{}: {e}", dir.display())))
}

fn dependencies(dir: &Path) -> Result<DependencyReport, Failure> {
    let sources =
        r_sources(dir).map_err(|e| Failure::validation(format!("{}: {e}", dir.display())))?;
    Ok(scan_dependencies(&sources))
}

fn findings(dir: &Path, manifest: &Manifest) -> Result<Vec<StaticFinding>, Failure> {
    let sources =
        r_sources(dir).map_err(|e| Failure::validation(format!("{}: {e}", dir.display())))?;
    static_checks(dir, &sources, manifest)
        .map_err(|e| Failure::validation(format!("{}: {e}", dir.display())))
}

fn print_findings(out: &Output, findings: &[StaticFinding]) {
    for f in findings {
        let sev = match f.severity {
            re3_core::repro::FindingSeverity::Error => out.paint("error", "1;31"),
            re3_core::repro::FindingSeverity::Warn => out.paint("warn", "33"),
        };
        println!("{}:{}: {sev} {:?}: {}", f.file, f.line, f.kind, f.message);
        println!("    {}", f.excerpt);
    }
}

pub fn manifest_init(out: &Output, dir: &Path) -> CmdResult {
    require_dir(dir)?;
    let path = init_manifest(dir).map_err(Failure::validation)?;
    #[derive(Serialize)]
    struct Doc {
        manifest: String,
    }
    let doc = Doc {
        manifest: path.display().to_string(),
    };
    out.emit(&doc, || {
        out.info(format!(
            "wrote {}; fill in author, title, r_version and licenses",
            doc.manifest
        ));
    });
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ManifestDoc<'a> {
    #[serde(flatten)]
    manifest: &'a Manifest,
    created_at: Option<String>,
}

pub fn manifest_validate(out: &Output, dir: &Path) -> CmdResult {
    let m = manifest_of(dir)?;
    let doc = ManifestDoc {
        manifest: &m,
        created_at: m.created_at_rfc3339(),
    };
    out.emit(&doc, || {
        out.info(format!(
            "{}: valid ({} by {}, R {}, {} files)",
            dir.display(),
            m.title,
            m.author,
            m.r_version,
            m.execution_order.len()
        ));
    });
    Ok(EXIT_OK)
}

pub fn deps(out: &Output, dir: &Path) -> CmdResult {
    require_dir(dir)?;
    let report = dependencies(dir)?;
    out.emit(&report, || {
        if report.packages.is_empty() {
            out.info("no package dependencies found");
        }
        for p in &report.packages {
            let places: Vec<String> = report
                .provenance
                .iter()
                .flat_map(|(file, uses)| {
                    uses.iter()
                        .filter(|u| &u.package == p)
                        .map(move |u| format!("{file}:{}", u.line))
                })
                .collect();
            println!("{p:<20} {}", places.join(", "));
        }
    });
    Ok(EXIT_OK)
}

pub fn check(out: &Output, dir: &Path) -> CmdResult {
    let m = manifest_of(dir)?;
    let found = findings(dir, &m)?;
    out.emit(&found, || {
        if found.is_empty() {
            out.info("no findings");
        }
        print_findings(out, &found);
    });
    Ok(if has_errors(&found) {
        EXIT_VALIDATION
    } else {
        EXIT_OK
    })
}

pub fn containerize(out: &Output, dir: &Path, dockerfile: &Path) -> CmdResult {
    let m = manifest_of(dir)?;
    let spec = generate_container_spec(&m, &dependencies(dir)?);
    let runner = dockerfile
        .parent()
        .unwrap_or(Path::new(""))
        .join(RUNNER_NAME);
    let write = |path: &Path, text: &str| {
        std::fs::write(path, text)
            .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
    };
    write(dockerfile, &spec.dockerfile_text)?;
    write(&runner, &spec.runner_script_text)?;
    out.emit(&spec, || {
        out.info(format!(
            "wrote {} and {} (image {})",
            dockerfile.display(),
            runner.display(),
            spec.image_tag
        ));
    });
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct RunDoc<'a> {
    findings: &'a [StaticFinding],
    dependencies: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a ExecutionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn choose_runtime(flag: Option<&str>) -> Result<std::path::PathBuf, Failure> {
    let from_env = std::env::var("RE3_RUNTIME").ok().filter(|s| !s.is_empty());
    let env_fail = |e: ExecuteError| Failure::new(EXIT_ENVIRONMENT, e);
    match from_env.as_deref().or(flag) {
        Some(name) => resolve_runtime(name).map_err(env_fail),
        None => DEFAULT_RUNTIMES
            .iter()
            .find_map(|name| resolve_runtime(name).ok())
            .ok_or_else(|| {
                Failure::new(
                    EXIT_ENVIRONMENT,
                    "no container runtime found (tried docker, podman)",
                )
            }),
    }
}

fn status_label(out: &Output, f: &FileResult) -> String {
    match f.status {
        FileStatus::Success => out.paint("ok", "32"),
        FileStatus::Error => out.paint(
            &format!(
                "error (exit {})",
                f.exit_code.map_or("?".into(), |c| c.to_string())
            ),
            "1;31",
        ),
        FileStatus::TimedOut => out.paint("timed out", "1;31"),
        FileStatus::Skipped => out.paint("skipped", "33"),
    }
}

pub fn run(
    out: &Output,
    dir: &Path,
    runtime: Option<&str>,
    timeout: u64,
    keep_going: bool,
) -> CmdResult {
    if timeout == 0 {
        return Err(Failure::usage("--timeout must be positive"));
    }
    let m = manifest_of(dir)?;
    let deps = dependencies(dir)?;
    let found = findings(dir, &m)?;
    let runtime = choose_runtime(runtime)?;
    let spec = generate_container_spec(&m, &deps);
    let cfg = ExecConfig {
        runtime,
        workdir: dir.to_path_buf(),
        per_file_timeout_s: timeout,
        on_error: keep_going.then_some(OnError::Continue),
    };
    if !out.json && !out.quiet {
        print_findings(out, &found);
    }
    let result = execute(&spec, &cfg);
    let (report, error, code) = match &result {
        Ok(r) => (
            Some(r),
            None,
            if r.overall == Overall::Success {
                EXIT_OK
            } else {
                EXIT_EXECUTION
            },
        ),
        Err(e @ ExecuteError::BuildFailed { .. }) => (None, Some(e.to_string()), EXIT_BUILD),
        Err(e @ ExecuteError::RuntimeNotFound(_)) => (None, Some(e.to_string()), EXIT_ENVIRONMENT),
        Err(e) => (None, Some(e.to_string()), EXIT_EXECUTION),
    };
    let doc = RunDoc {
        findings: &found,
        dependencies: &deps.packages,
        report,
        error: error.clone(),
    };
    out.emit(&doc, || {
        if let Some(r) = report {
            for f in &r.per_file {
                let duration = f.duration_s.map_or(String::new(), |d| format!(" in {d}s"));
                println!("{:<40} {}{duration}", f.path, status_label(out, f));
                if f.status != FileStatus::Success
                    && f.status != FileStatus::Skipped
                    && !f.stderr_tail.is_empty()
                {
                    for line in f.stderr_tail.lines() {
                        println!("    {line}");
                    }
                }
            }
            if !r.artifacts.is_empty() {
                println!("artifacts:");
                for a in &r.artifacts {
                    println!("    {} ({} bytes)", a.path, a.size_bytes);
                }
            }
            let overall = match r.overall {
                Overall::Success => out.paint("success", "32"),
                Overall::Error => out.paint("error", "1;31"),
            };
            println!("overall: {overall}");
        }
    });
    match error {
        Some(e) if !out.json => Err(Failure::new(code, e)),
        _ => Ok(code),
    }
}
