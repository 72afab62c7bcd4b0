//! A stand-in for `docker`/`podman` that understands just enough of the
//! generated Dockerfile and runner to emulate a package run without a
//! container engine.
//!
//! `build` records the pinned packages and execution order under a state
//! directory keyed by image tag. `run` walks each R file's calls: attaching
//! packages, printing, reading and writing files, `stop()`, `quit()` and
//! `Sys.sleep()`. It writes `re3_status.json` exactly as the runner would.
//!
//! Environment: `RE3_STUB_STATE` (state directory), `RE3_STUB_LOG` (append
//! one line per invocation), `RE3_STUB_UNAVAILABLE` (comma-separated conda
//! packages that fail to resolve, or `*` to fail every build).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::{Deserialize, Serialize};

use re3_core::calls::{find_calls, Arg, Call};
use re3_core::lexer::{tokenize, SourceFile, Token, TokenKind};
use re3_core::repro::container::{BASE_R_PACKAGES, FILE_MARKER, RUNNER_NAME, STATUS_FILE};

#[derive(Debug, Serialize, Deserialize)]
struct Image {
    r_version: String,
    packages: BTreeSet<String>,
    order: Vec<String>,
    on_error: String,
    default_timeout: u64,
}

fn state_dir() -> PathBuf {
    std::env::var_os("RE3_STUB_STATE")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("re3-stub-state"))
}

fn image_file(tag: &str) -> PathBuf {
    let safe: String = tag
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    state_dir().join(format!("{safe}.json"))
}

fn log_invocation(args: &[String]) {
    if let Some(path) = std::env::var_os("RE3_STUB_LOG") {
        if let Ok(mut f) = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
        {
            let _ = writeln!(f, "{}", args.join(" "));
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    log_invocation(&args);
    match args.first().map(String::as_str) {
        Some("build") => build(&args[1..]),
        Some("run") => run(&args[1..]),
        Some("--version") | Some("version") => {
            println!("re3-stub-runtime {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
        _ => {
            eprintln!(
                "usage: re3-stub-runtime build -t TAG -f DOCKERFILE CONTEXT | run [OPTIONS] TAG"
            );
            ExitCode::from(125)
        }
    }
}

fn build(args: &[String]) -> ExitCode {
    let mut tag = None;
    let mut dockerfile = None;
    let mut context = None;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "-t" => tag = it.next().cloned(),
            "-f" => dockerfile = it.next().map(PathBuf::from),
            other => context = Some(PathBuf::from(other)),
        }
    }
    let (Some(tag), Some(context)) = (tag, context) else {
        eprintln!("build: need -t TAG and a context directory");
        return ExitCode::from(125);
    };
    let dockerfile = dockerfile.unwrap_or_else(|| context.join("Dockerfile"));
    let Ok(docker_text) = std::fs::read_to_string(&dockerfile) else {
        eprintln!("build: cannot read {}", dockerfile.display());
        return ExitCode::from(1);
    };
    let Ok(runner_text) = std::fs::read_to_string(context.join(RUNNER_NAME)) else {
        eprintln!("build: {RUNNER_NAME} missing from context");
        return ExitCode::from(1);
    };

    let mut r_version = String::new();
    let mut packages = BTreeSet::new();
    for word in docker_text.split_whitespace() {
        if let Some(v) = word.strip_prefix("r-base=") {
            r_version = v.to_string();
        } else if let Some(p) = word.strip_prefix("r-") {
            packages.insert(p.to_string());
        }
    }
    println!(
        "STEP 1/6: FROM {}",
        docker_text
            .lines()
            .find_map(|l| l.strip_prefix("FROM "))
            .unwrap_or("?")
    );
    println!(
        "STEP 2/6: conda create r-base={r_version} {}",
        packages
            .iter()
            .map(|p| format!("r-{p}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    let unavailable = std::env::var("RE3_STUB_UNAVAILABLE").unwrap_or_default();
    for bad in unavailable
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
    {
        if bad == "*" || packages.contains(bad.trim_start_matches("r-")) {
            eprintln!("PackagesNotFoundError: The following packages are not available from current channels:");
            eprintln!("  - {}", if bad == "*" { "r-base" } else { bad });
            return ExitCode::from(1);
        }
    }
    if r_version.is_empty() {
        eprintln!("build: no r-base pin in Dockerfile");
        return ExitCode::from(1);
    }

    let order: Vec<String> = runner_text
        .lines()
        .filter_map(|l| {
            l.strip_prefix("run_file '")
                .and_then(|r| r.strip_suffix('\''))
        })
        .map(str::to_string)
        .collect();
    let default_of = |var: &str| {
        runner_text.lines().find_map(|l| {
            let rest = l.split_once(&format!("${{{var}:-"))?.1;
            rest.split_once('}').map(|(v, _)| v.to_string())
        })
    };
    let image = Image {
        r_version,
        packages,
        order,
        on_error: default_of("RE3_ON_ERROR").unwrap_or_else(|| "abort".into()),
        default_timeout: default_of("RE3_TIMEOUT")
            .and_then(|v| v.parse().ok())
            .unwrap_or(3600),
    };
    if std::fs::create_dir_all(state_dir()).is_err()
        || std::fs::write(
            image_file(&tag),
            serde_json::to_string_pretty(&image).expect("image serializes"),
        )
        .is_err()
    {
        eprintln!(
            "build: cannot write stub state under {}",
            state_dir().display()
        );
        return ExitCode::from(1);
    }
    println!("Successfully tagged {tag}");
    ExitCode::SUCCESS
}

fn run(args: &[String]) -> ExitCode {
    let mut mount = None;
    let mut env = BTreeMap::new();
    let mut tag = None;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--rm" => {}
            "-v" => mount = it.next().cloned(),
            "-w" => {
                it.next();
            }
            "-e" => {
                if let Some((k, v)) = it.next().and_then(|kv| kv.split_once('=')) {
                    env.insert(k.to_string(), v.to_string());
                }
            }
            other => tag = Some(other.to_string()),
        }
    }
    let Some(tag) = tag else {
        eprintln!("run: no image given");
        return ExitCode::from(125);
    };
    let image: Image = match std::fs::read_to_string(image_file(&tag))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
    {
        Some(i) => i,
        None => {
            eprintln!("Unable to find image '{tag}' locally");
            return ExitCode::from(125);
        }
    };
    let Some(host) = mount
        .as_deref()
        .and_then(|m| m.strip_suffix(":/work"))
        .map(PathBuf::from)
    else {
        eprintln!("run: expected -v HOST:/work");
        return ExitCode::from(125);
    };
    let on_error = env
        .get("RE3_ON_ERROR")
        .cloned()
        .unwrap_or(image.on_error.clone());
    let timeout = env
        .get("RE3_TIMEOUT")
        .and_then(|v| v.parse().ok())
        .unwrap_or(image.default_timeout);

    let mut entries = Vec::new();
    let write_status = |entries: &Vec<serde_json::Value>| {
        let doc = serde_json::json!({ "files": entries });
        std::fs::write(host.join(STATUS_FILE), format!("{doc}\n")).is_ok()
    };
    if !write_status(&entries) {
        eprintln!("run: cannot write to {}", host.display());
        return ExitCode::from(126);
    }
    let mut failed = false;
    for path in &image.order {
        println!("{FILE_MARKER}{path}");
        eprintln!("{FILE_MARKER}{path}");
        let outcome = emulate(&host, path, &image, timeout);
        print!("{}", outcome.stdout);
        eprint!("{}", outcome.stderr);
        let _ = std::io::stdout().flush();
        entries.push(serde_json::json!({
            "path": path,
            "exit_code": outcome.exit_code,
            "duration_s": outcome.duration_s,
        }));
        write_status(&entries);
        if outcome.exit_code != 0 {
            failed = true;
            if on_error == "abort" {
                return ExitCode::from(1);
            }
        }
    }
    ExitCode::from(u8::from(failed))
}

#[derive(Default)]
struct Outcome {
    exit_code: i32,
    duration_s: u64,
    stdout: String,
    stderr: String,
}

impl Outcome {
    fn fail(mut self, message: String) -> Outcome {
        self.stderr.push_str(&message);
        self.stderr.push_str("\nExecution halted\n");
        self.exit_code = 1;
        self
    }
}

/// Functions that need their package attached, keyed by function name.
const EXPORTS: [(&str, &str); 24] = [
    ("fread", "data.table"),
    ("fwrite", "data.table"),
    ("setDT", "data.table"),
    ("data.table", "data.table"),
    ("mutate", "dplyr"),
    ("summarise", "dplyr"),
    ("summarize", "dplyr"),
    ("group_by", "dplyr"),
    ("arrange", "dplyr"),
    ("left_join", "dplyr"),
    ("inner_join", "dplyr"),
    ("ggplot", "ggplot2"),
    ("aes", "ggplot2"),
    ("geom_point", "ggplot2"),
    ("geom_line", "ggplot2"),
    ("ggsave", "ggplot2"),
    ("read_csv", "readr"),
    ("write_csv", "readr"),
    ("pivot_longer", "tidyr"),
    ("pivot_wider", "tidyr"),
    ("str_detect", "stringr"),
    ("str_replace", "stringr"),
    ("tibble", "tibble"),
    ("felm", "lfe"),
];

const READERS: [&str; 7] = [
    "read.csv",
    "read.table",
    "readRDS",
    "load",
    "source",
    "read_csv",
    "fread",
];

const WRITERS: [(&str, &str); 11] = [
    ("pdf", "file"),
    ("png", "filename"),
    ("jpeg", "filename"),
    ("svg", "filename"),
    ("write.csv", "file"),
    ("write.table", "file"),
    ("saveRDS", "file"),
    ("ggsave", "filename"),
    ("writeLines", "con"),
    ("fwrite", "file"),
    ("write_csv", "file"),
];

fn brace_depths(tokens: &[Token]) -> Vec<u32> {
    let mut depth = 0u32;
    tokens
        .iter()
        .map(|t| {
            let d = depth;
            match t.kind {
                TokenKind::OpenBrace => depth += 1,
                TokenKind::CloseBrace => depth = depth.saturating_sub(1),
                _ => {}
            }
            d
        })
        .collect()
}

fn string_of(arg: Option<&Arg>) -> Option<String> {
    arg.and_then(Arg::single).and_then(|t| t.string_value())
}

fn number_of(arg: Option<&Arg>) -> Option<f64> {
    arg.and_then(Arg::single)
        .filter(|t| t.kind == TokenKind::Number)
        .and_then(|t| t.text.trim_end_matches(['L', 'i']).parse().ok())
}

/// Positional argument `index`, or the argument named `name`.
fn arg_at<'a>(call: &'a Call, index: usize, name: &str) -> Option<&'a Arg<'a>> {
    call.named(name)
        .or_else(|| call.args.iter().filter(|a| a.name.is_none()).nth(index))
}

fn render(arg: &Arg) -> String {
    match arg.single() {
        Some(t) if t.kind == TokenKind::String => t.string_value().unwrap_or_default(),
        _ => arg
            .value
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(""),
    }
}

fn emulate(host: &Path, rel: &str, image: &Image, timeout: u64) -> Outcome {
    let mut out = Outcome::default();
    let Ok(text) = std::fs::read_to_string(host.join(rel)) else {
        return out.fail(format!(
            "Fatal error: cannot open file '{rel}': No such file or directory"
        ));
    };
    let src = SourceFile::new(rel, &text);
    let lexed = tokenize(&src);
    if !lexed.warnings.is_empty() {
        return out.fail("Error: unexpected end of input".to_string());
    }
    let installed =
        |p: &str| BASE_R_PACKAGES.contains(&p) || image.packages.contains(&p.to_lowercase());
    let mut attached: BTreeSet<String> = BASE_R_PACKAGES.iter().map(|s| s.to_string()).collect();
    let mut defined: BTreeSet<&str> = BTreeSet::new();
    let sig: Vec<&Token> = lexed.tokens.iter().filter(|t| !t.is_trivia()).collect();
    for w in sig.windows(3) {
        if w[0].kind == TokenKind::Identifier
            && matches!(w[1].text.as_str(), "<-" | "=")
            && w[2].is(TokenKind::Keyword, "function")
        {
            defined.insert(w[0].text.as_str());
        }
    }
    let depths = brace_depths(&lexed.tokens);
    let index_of = |t: &Token| {
        lexed
            .tokens
            .iter()
            .position(|x| std::ptr::eq(x, t))
            .unwrap_or(0)
    };
    let mut elapsed = 0.0f64;

    for call in find_calls(&lexed.tokens) {
        let top_level = depths[index_of(call.name_token)] == 0 && call.name_token.depth_paren == 0;
        let name = call.name;
        if let Some(ns) = call.namespace {
            if !installed(ns) {
                return out.fail(format!(
                    "Error in loadNamespace(x) : there is no package called \u{2018}{ns}\u{2019}"
                ));
            }
        }
        match name {
            "library" | "require" => {
                let pkg = arg_at(&call, 0, "package")
                    .and_then(Arg::single)
                    .map(|t| match t.kind {
                        TokenKind::String => t.string_value().unwrap_or_default(),
                        _ => t.text.clone(),
                    });
                if let Some(pkg) = pkg {
                    if !installed(&pkg) {
                        return out.fail(format!(
                            "Error in {name}({pkg}) : there is no package called \u{2018}{pkg}\u{2019}"
                        ));
                    }
                    attached.insert(pkg);
                }
                continue;
            }
            "stop" if top_level => {
                let msg = call
                    .args
                    .iter()
                    .filter(|a| a.name.is_none())
                    .map(render)
                    .collect::<String>();
                return out.fail(format!("Error: {msg}"));
            }
            "quit" | "q" if top_level => {
                let status = number_of(arg_at(&call, 1, "status")).unwrap_or(0.0) as i32;
                out.exit_code = status;
                out.duration_s = elapsed as u64;
                return out;
            }
            "Sys.sleep" => {
                elapsed += number_of(arg_at(&call, 0, "time")).unwrap_or(0.0);
                if elapsed > timeout as f64 {
                    out.exit_code = 124;
                    out.duration_s = timeout;
                    return out;
                }
            }
            "cat" => {
                let pieces: Vec<String> = call
                    .args
                    .iter()
                    .filter(|a| a.name.is_none())
                    .map(render)
                    .collect();
                out.stdout.push_str(&pieces.join(" "));
            }
            "print" => {
                if let Some(a) = arg_at(&call, 0, "x") {
                    match a.single() {
                        Some(t) if t.kind == TokenKind::String => {
                            out.stdout.push_str(&format!("[1] {}\n", t.text))
                        }
                        _ => out.stdout.push_str(&format!("{}\n", render(a))),
                    }
                }
            }
            "message" => {
                let pieces: String = call
                    .args
                    .iter()
                    .filter(|a| a.name.is_none())
                    .map(render)
                    .collect();
                out.stderr.push_str(&pieces);
                out.stderr.push('\n');
            }
            "setwd" => {
                let dir = string_of(arg_at(&call, 0, "dir")).unwrap_or_default();
                if dir.starts_with('/')
                    || dir.starts_with('~')
                    || dir.contains(":/")
                    || !host.join(&dir).is_dir()
                {
                    return out.fail(format!(
                        "Error in setwd(\"{dir}\") : cannot change working directory"
                    ));
                }
            }
            "install.packages" => {
                out.stderr
                    .push_str("Warning: install.packages() skipped; no network inside the stub\n");
            }
            _ => {}
        }
        if call.namespace.is_none() && !defined.contains(name) {
            if let Some((_, pkg)) = EXPORTS.iter().find(|(f, _)| *f == name) {
                if !attached.contains(*pkg) {
                    return out.fail(format!(
                        "Error in {name}() : could not find function \"{name}\""
                    ));
                }
            }
        }
        if READERS.contains(&name) {
            let arg_name = if name == "fread" { "input" } else { "file" };
            if let Some(target) = string_of(arg_at(&call, 0, arg_name)) {
                if target.starts_with('/')
                    || target.starts_with('~')
                    || !host.join(&target).is_file()
                {
                    out.stderr.push_str(&format!(
                        "Warning message:\nIn file(file, \"rt\") :\n  cannot open file '{target}': No such file or directory\n"
                    ));
                    return out
                        .fail("Error in file(file, \"rt\") : cannot open the connection".into());
                }
            }
        }
        if let Some((_, arg_name)) = WRITERS.iter().find(|(f, _)| *f == name) {
            let positional = if matches!(name, "pdf" | "png" | "jpeg" | "svg" | "ggsave") {
                0
            } else {
                1
            };
            let target = string_of(arg_at(&call, positional, arg_name))
                .or_else(|| (name == "pdf").then(|| "Rplots.pdf".to_string()));
            if let Some(target) = target {
                if target.starts_with('/') || target.starts_with('~') || target.contains(":/") {
                    return out.fail(format!("Error in {name}() : cannot open file '{target}'"));
                }
                let path = host.join(&target);
                let written = path
                    .parent()
                    .filter(|p| p.is_dir())
                    .and_then(|_| std::fs::write(&path, stub_contents(&target)).ok());
                if written.is_none() {
                    return out.fail(format!("Error in {name}() : cannot open file '{target}'"));
                }
            }
        }
    }
    out.duration_s = elapsed as u64;
    out
}

fn stub_contents(target: &str) -> Vec<u8> {
    if target.ends_with(".pdf") {
        b"%PDF-1.4\n% re3 stub output\n%%EOF\n".to_vec()
    } else {
        format!("stub output for {target}\n").into_bytes()
    }
}
