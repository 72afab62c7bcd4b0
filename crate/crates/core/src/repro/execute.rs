use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::time::{Duration, Instant, SystemTime};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use super::container::{ContainerSpec, FILE_MARKER, RUNNER_NAME, STATUS_FILE};
use super::manifest::OnError;

pub const LOG_TAIL_LINES: usize = 200;
pub const TIMEOUT_EXIT_CODE: i32 = 124;
/// Slack on top of the summed per-file timeouts before the host kills the run.
const HOST_GRACE: Duration = Duration::from_secs(600);

#[derive(Debug, Clone)]
pub struct ExecConfig {
    pub runtime: PathBuf,
    pub workdir: PathBuf,
    pub per_file_timeout_s: u64,
    /// Overrides the manifest's on_error policy when set.
    pub on_error: Option<OnError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileStatus {
    Success,
    Error,
    TimedOut,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileResult {
    pub path: String,
    pub status: FileStatus,
    pub exit_code: Option<i32>,
    pub duration_s: Option<f64>,
    pub stdout_tail: String,
    pub stderr_tail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overall {
    Success,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub overall: Overall,
    pub image_tag: String,
    pub per_file: Vec<FileResult>,
    pub artifacts: Vec<Artifact>,
    pub build_log_tail: String,
    pub container_exit_code: Option<i32>,
    /// The host stopped the container after the overall deadline.
    pub killed: bool,
}

#[derive(Debug, Error)]
pub enum ExecuteError {
    #[error("container runtime `{0}` not found")]
    RuntimeNotFound(String),
    #[error("image build failed:\n{log_tail}")]
    BuildFailed { log_tail: String },
    #[error("container exited without writing {STATUS_FILE}:\n{log_tail}")]
    StatusFileMissing { log_tail: String },
    #[error("malformed {STATUS_FILE}: {0}")]
    BadStatus(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> ExecuteError {
    let context = context.into();
    move |source| ExecuteError::Io { context, source }
}

fn is_executable(p: &Path) -> bool {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        p.metadata()
            .is_ok_and(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
    }
    #[cfg(not(unix))]
    {
        p.is_file()
    }
}

/// A path containing a separator is used as is; a bare name is looked up on PATH.
pub fn resolve_runtime(name: &str) -> Result<PathBuf, ExecuteError> {
    let candidate = Path::new(name);
    if candidate.components().count() > 1 {
        return if is_executable(candidate) {
            Ok(candidate.to_path_buf())
        } else {
            Err(ExecuteError::RuntimeNotFound(name.to_string()))
        };
    }
    std::env::var_os("PATH")
        .iter()
        .flat_map(std::env::split_paths)
        .map(|dir| dir.join(name))
        .find(|p| is_executable(p))
        .ok_or_else(|| ExecuteError::RuntimeNotFound(name.to_string()))
}

pub fn tail_lines(text: &str, n: usize) -> String {
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(n)..].join("\n")
}

struct Output {
    status: Option<ExitStatus>,
    stdout: String,
    stderr: String,
}

fn run_command(cmd: &mut Command, deadline: Option<Duration>) -> std::io::Result<Output> {
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;
    let mut out_pipe = child.stdout.take().expect("piped stdout");
    let mut err_pipe = child.stderr.take().expect("piped stderr");
    let out_thread = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_thread = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });
    let start = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if deadline.is_some_and(|d| start.elapsed() > d) {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(Duration::from_millis(20));
    };
    let stdout = String::from_utf8_lossy(&out_thread.join().unwrap_or_default()).into_owned();
    let stderr = String::from_utf8_lossy(&err_thread.join().unwrap_or_default()).into_owned();
    Ok(Output {
        status,
        stdout,
        stderr,
    })
}

type Snapshot = BTreeMap<String, (u64, Option<SystemTime>)>;

fn skip_entry(e: &walkdir::DirEntry) -> bool {
    e.depth() > 0 && e.file_name().to_str().is_some_and(|n| n == ".git")
}

fn snapshot(root: &Path) -> Snapshot {
    WalkDir::new(root)
        .into_iter()
        .filter_entry(|e| !skip_entry(e))
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .filter_map(|e| {
            let rel = e.path().strip_prefix(root).ok()?;
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            let md = e.metadata().ok()?;
            Some((rel, (md.len(), md.modified().ok())))
        })
        .collect()
}

/// Files that are new or whose size or mtime changed.
pub fn diff_snapshots(before: &Snapshot, after: &Snapshot) -> Vec<Artifact> {
    after
        .iter()
        .filter(|(path, _)| path.as_str() != STATUS_FILE)
        .filter(|(path, meta)| before.get(*path) != Some(meta))
        .map(|(path, (size, _))| Artifact {
            path: path.clone(),
            size_bytes: *size,
        })
        .collect()
}

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    for entry in WalkDir::new(from)
        .into_iter()
        .filter_entry(|e| !skip_entry(e))
    {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry
            .path()
            .strip_prefix(from)
            .expect("walk stays under root");
        if rel.as_os_str() == STATUS_FILE {
            continue;
        }
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&dest)?;
        } else if entry.file_type().is_file() {
            std::fs::copy(entry.path(), &dest)?;
        }
    }
    Ok(())
}

/// Splits a log into per-file sections at marker lines.
fn split_log(text: &str) -> BTreeMap<String, Vec<String>> {
    let mut sections: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        if let Some(path) = line.strip_prefix(FILE_MARKER) {
            current = Some(path.to_string());
            sections.entry(path.to_string()).or_default();
        } else if let Some(path) = &current {
            sections
                .get_mut(path)
                .expect("section exists")
                .push(line.to_string());
        }
    }
    sections
}

#[derive(Deserialize)]
struct StatusFile {
    files: Vec<StatusEntry>,
}

#[derive(Deserialize)]
struct StatusEntry {
    path: String,
    exit_code: i32,
    duration_s: f64,
}

fn build_context(spec: &ContainerSpec, workdir: &Path) -> Result<tempfile::TempDir, ExecuteError> {
    let ctx = tempfile::Builder::new()
        .prefix("re3-build-")
        .tempdir()
        .map_err(io_err("creating build context"))?;
    std::fs::write(ctx.path().join("Dockerfile"), &spec.dockerfile_text)
        .map_err(io_err("writing Dockerfile"))?;
    std::fs::write(ctx.path().join(RUNNER_NAME), &spec.runner_script_text)
        .map_err(io_err("writing runner"))?;
    let package = ctx.path().join("package");
    std::fs::create_dir_all(&package).map_err(io_err("creating build context"))?;
    copy_tree(workdir, &package).map_err(io_err("copying package into build context"))?;
    Ok(ctx)
}

/// Builds the image, runs the package inside it with the package mounted
/// as the working directory, and reports per-file status and artifacts.
pub fn execute(spec: &ContainerSpec, cfg: &ExecConfig) -> Result<ExecutionReport, ExecuteError> {
    let runtime = resolve_runtime(&cfg.runtime.to_string_lossy())?;
    let workdir = cfg
        .workdir
        .canonicalize()
        .map_err(io_err(format!("resolving {}", cfg.workdir.display())))?;

    let ctx = build_context(spec, &workdir)?;
    let build = run_command(
        Command::new(&runtime)
            .arg("build")
            .arg("-t")
            .arg(&spec.image_tag)
            .arg("-f")
            .arg(ctx.path().join("Dockerfile"))
            .arg(ctx.path()),
        None,
    )
    .map_err(io_err(format!("running {}", runtime.display())))?;
    let build_log_tail = tail_lines(&format!("{}{}", build.stdout, build.stderr), LOG_TAIL_LINES);
    if !build.status.is_some_and(|s| s.success()) {
        return Err(ExecuteError::BuildFailed {
            log_tail: build_log_tail,
        });
    }

    let status_path = workdir.join(STATUS_FILE);
    if status_path.exists() {
        std::fs::remove_file(&status_path).map_err(io_err("removing stale status file"))?;
    }
    let before = snapshot(&workdir);

    let mut cmd = Command::new(&runtime);
    cmd.arg("run")
        .arg("--rm")
        .arg("-v")
        .arg(format!("{}:/work", workdir.display()))
        .arg("-w")
        .arg("/work")
        .arg("-e")
        .arg(format!("RE3_TIMEOUT={}", cfg.per_file_timeout_s));
    if let Some(policy) = cfg.on_error {
        cmd.arg("-e")
            .arg(format!("RE3_ON_ERROR={}", policy.as_str()));
    }
    cmd.arg(&spec.image_tag);
    let n = spec.execution_order.len().max(1) as u32;
    let deadline = Duration::from_secs(cfg.per_file_timeout_s).saturating_mul(n) + HOST_GRACE;
    let run = run_command(&mut cmd, Some(deadline))
        .map_err(io_err(format!("running {}", runtime.display())))?;

    let status_text = match std::fs::read_to_string(&status_path) {
        Ok(t) => t,
        Err(_) => {
            return Err(ExecuteError::StatusFileMissing {
                log_tail: tail_lines(&format!("{}{}", run.stdout, run.stderr), LOG_TAIL_LINES),
            })
        }
    };
    let status: StatusFile =
        serde_json::from_str(&status_text).map_err(|e| ExecuteError::BadStatus(e.to_string()))?;
    let entries: BTreeMap<&str, &StatusEntry> =
        status.files.iter().map(|e| (e.path.as_str(), e)).collect();
    let stdout_sections = split_log(&run.stdout);
    let stderr_sections = split_log(&run.stderr);
    let tail_of = |sections: &BTreeMap<String, Vec<String>>, path: &str| {
        sections
            .get(path)
            .map(|lines| lines[lines.len().saturating_sub(LOG_TAIL_LINES)..].join("\n"))
            .unwrap_or_default()
    };

    let mut per_file = Vec::with_capacity(spec.execution_order.len());
    let mut failed = false;
    for path in &spec.execution_order {
        let (status, exit_code, duration_s) = match entries.get(path.as_str()) {
            Some(e) => {
                let status = match e.exit_code {
                    0 => FileStatus::Success,
                    TIMEOUT_EXIT_CODE => FileStatus::TimedOut,
                    _ => FileStatus::Error,
                };
                (status, Some(e.exit_code), Some(e.duration_s))
            }
            None if failed => (FileStatus::Skipped, None, None),
            None if run.status.is_none() => (FileStatus::TimedOut, None, None),
            None => (FileStatus::Error, None, None),
        };
        failed |= status != FileStatus::Success;
        per_file.push(FileResult {
            path: path.clone(),
            status,
            exit_code,
            duration_s,
            stdout_tail: tail_of(&stdout_sections, path),
            stderr_tail: tail_of(&stderr_sections, path),
        });
    }

    let artifacts = diff_snapshots(&before, &snapshot(&workdir));
    let overall = if per_file.iter().all(|f| f.exit_code == Some(0)) {
        Overall::Success
    } else {
        Overall::Error
    };
    Ok(ExecutionReport {
        overall,
        image_tag: spec.image_tag.clone(),
        per_file,
        artifacts,
        build_log_tail,
        container_exit_code: run.status.and_then(|s| s.code()),
        killed: run.status.is_none(),
    })
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::repro::container::generate_container_spec;
    use crate::repro::deps::DependencyReport;
    use crate::repro::manifest::Manifest;
    use std::os::unix::fs::PermissionsExt;

    /// A runtime that fakes `build` and, for `run`, writes the status file
    /// and a plot into the mounted directory according to FAKE_MODE.
    const FAKE: &str = r#"#!/bin/sh
case "$1" in
  build) echo "building $3"; [ "$FAKE_MODE" = nobuild ] && exit 1; exit 0 ;;
  run)
    shift
    while [ "$1" != "-v" ]; do shift; done
    dir="${2%:/work}"
    cd "$dir" || exit 9
    echo "::re3-file a.R"; echo "::re3-file a.R" >&2
    echo "hello from a"
    case "$FAKE_MODE" in
      ok)
        touch plot.pdf
        echo "::re3-file b.R"; echo "::re3-file b.R" >&2
        printf '{"files":[{"path":"a.R","exit_code":0,"duration_s":1},{"path":"b.R","exit_code":0,"duration_s":2}]}' > re3_status.json ;;
      fail)
        echo "Error: boom" >&2
        printf '{"files":[{"path":"a.R","exit_code":1,"duration_s":0}]}' > re3_status.json; exit 1 ;;
      nostatus) exit 137 ;;
    esac ;;
esac
"#;

    fn setup(mode: &str) -> (tempfile::TempDir, ExecConfig, ContainerSpec) {
        let dir = tempfile::tempdir().unwrap();
        let rt = dir.path().join("fake-runtime");
        std::fs::write(&rt, FAKE.replace("$FAKE_MODE", mode)).unwrap();
        std::fs::set_permissions(&rt, std::fs::Permissions::from_mode(0o755)).unwrap();
        let pkg = dir.path().join("pkg");
        std::fs::create_dir(&pkg).unwrap();
        std::fs::write(pkg.join("a.R"), "cat('hello from a\\n')\n").unwrap();
        std::fs::write(pkg.join("b.R"), "pdf('plot.pdf'); dev.off()\n").unwrap();
        let m = Manifest::parse(
            r#"{"author":"a","title":"t","r_version":"4.1","code_license":"MIT","data_license":"CC0","execution_order":["a.R","b.R"]}"#,
        )
        .unwrap();
        let spec = generate_container_spec(&m, &DependencyReport::default());
        let cfg = ExecConfig {
            runtime: rt,
            workdir: pkg,
            per_file_timeout_s: 5,
            on_error: None,
        };
        (dir, cfg, spec)
    }

    #[test]
    fn success_with_artifact() {
        let (_dir, cfg, spec) = setup("ok");
        let r = execute(&spec, &cfg).unwrap();
        assert_eq!(r.overall, Overall::Success);
        assert_eq!(
            r.per_file
                .iter()
                .map(|f| f.path.as_str())
                .collect::<Vec<_>>(),
            vec!["a.R", "b.R"]
        );
        assert_eq!(r.per_file[0].stdout_tail, "hello from a");
        assert_eq!(
            r.artifacts,
            vec![Artifact {
                path: "plot.pdf".into(),
                size_bytes: 0
            }]
        );
        assert!(r.build_log_tail.contains("building"));
    }

    #[test]
    fn failure_skips_rest() {
        let (_dir, cfg, spec) = setup("fail");
        let r = execute(&spec, &cfg).unwrap();
        assert_eq!(r.overall, Overall::Error);
        assert_eq!(r.per_file[0].status, FileStatus::Error);
        assert_eq!(r.per_file[0].stderr_tail, "Error: boom");
        assert_eq!(r.per_file[1].status, FileStatus::Skipped);
        assert_eq!(r.per_file[1].exit_code, None);
    }

    #[test]
    fn build_and_status_errors() {
        let (_dir, cfg, spec) = setup("nobuild");
        assert!(matches!(
            execute(&spec, &cfg),
            Err(ExecuteError::BuildFailed { .. })
        ));
        let (_dir, cfg, spec) = setup("nostatus");
        assert!(matches!(
            execute(&spec, &cfg),
            Err(ExecuteError::StatusFileMissing { .. })
        ));
        let (_dir, mut cfg, spec) = setup("ok");
        cfg.runtime = PathBuf::from("definitely-not-a-runtime-xyz");
        assert!(matches!(
            execute(&spec, &cfg),
            Err(ExecuteError::RuntimeNotFound(_))
        ));
    }

    #[test]
    fn log_tails_are_bounded() {
        let text: String = (0..500).map(|i| format!("{i}\n")).collect();
        let t = tail_lines(&text, LOG_TAIL_LINES);
        assert_eq!(t.lines().count(), 200);
        assert!(t.starts_with("300\n"));
    }
}
