use std::collections::BTreeSet;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, MANIFEST_FILE};
use super::package_files;
use crate::calls::{find_calls, Arg};
use crate::lexer::{tokenize, SourceFile, TokenKind};

static ABSOLUTE_PATH: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:[A-Za-z]:[/\\]|/home/|/Users/|~/)").unwrap());
static R_VERSION_MENTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bR ([0-9]+\.[0-9]+(?:\.[0-9]+)?)").unwrap());

const READ_FUNCTIONS: [&str; 6] = [
    "read.csv",
    "read.table",
    "readRDS",
    "load",
    "source",
    "read_csv",
];
/// Writers and the argument naming their output file.
const WRITE_FUNCTIONS: [(&str, usize, &str); 10] = [
    ("saveRDS", 1, "file"),
    ("save", usize::MAX, "file"),
    ("write.csv", 1, "file"),
    ("write.table", 1, "file"),
    ("write_csv", 1, "file"),
    ("fwrite", 1, "file"),
    ("writeLines", 1, "con"),
    ("pdf", 0, "file"),
    ("png", 0, "filename"),
    ("ggsave", 0, "filename"),
];
const EXCERPT_CHARS: usize = 120;
const MAX_SCANNED_BYTES: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FindingKind {
    AbsolutePath,
    SetwdCall,
    MissingReferencedFile,
    InstallCall,
    UndeclaredRVersionMention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FindingSeverity {
    Warn,
    Error,
}

impl std::fmt::Display for FindingSeverity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FindingSeverity::Warn => "warn",
            FindingSeverity::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StaticFinding {
    pub file: String,
    /// 1-based line number.
    pub line: usize,
    pub kind: FindingKind,
    pub severity: FindingSeverity,
    pub excerpt: String,
    pub message: String,
}

fn line_excerpt(src: &SourceFile, line: usize) -> String {
    src.lines
        .get(line)
        .map(|l| l.trim().chars().take(EXCERPT_CHARS).collect())
        .unwrap_or_default()
}

pub fn is_absolute_path(s: &str) -> bool {
    ABSOLUTE_PATH.is_match(s)
}

/// True when one dotted version is a component-wise prefix of the other,
/// so "3.6" agrees with "3.6.3" but "3.4.1" does not.
pub fn versions_agree(a: &str, b: &str) -> bool {
    let pa: Vec<&str> = a.split('.').collect();
    let pb: Vec<&str> = b.split('.').collect();
    pa.iter()
        .zip(&pb)
        .all(|(x, y)| x.trim_start_matches('0') == y.trim_start_matches('0'))
}

/// Relative paths that some file in the package writes with a literal name.
fn produced_files(files: &[SourceFile]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for src in files {
        let lexed = tokenize(src);
        for call in find_calls(&lexed.tokens) {
            let Some(&(_, position, name)) =
                WRITE_FUNCTIONS.iter().find(|(f, _, _)| *f == call.name)
            else {
                continue;
            };
            let arg = call
                .named(name)
                .or_else(|| call.args.iter().filter(|a| a.name.is_none()).nth(position));
            if let Some(target) = arg.and_then(Arg::single).and_then(|t| t.string_value()) {
                out.insert(target.trim_start_matches("./").to_string());
            }
        }
    }
    out
}

/// Findings from R sources. `root` is the package directory used to resolve
/// relative file references. Files written by package code are not reported
/// as missing.
pub fn check_sources(root: &Path, files: &[SourceFile]) -> Vec<StaticFinding> {
    let produced = produced_files(files);
    let mut out = Vec::new();
    for src in files {
        let file = src.display_path();
        let lexed = tokenize(src);
        for tok in lexed.tokens.iter().filter(|t| t.kind == TokenKind::String) {
            let Some(value) = tok.string_value() else {
                continue;
            };
            if is_absolute_path(&value) {
                out.push(StaticFinding {
                    file: file.clone(),
                    line: tok.line + 1,
                    kind: FindingKind::AbsolutePath,
                    severity: FindingSeverity::Error,
                    excerpt: tok.text.clone(),
                    message: format!("absolute path {value:?} will not exist on another machine"),
                });
            }
        }
        for call in find_calls(&lexed.tokens) {
            let line = call.line();
            let string_arg = |name: &str| {
                call.first_or_named(name)
                    .and_then(Arg::single)
                    .and_then(|t| t.string_value())
            };
            match call.name {
                "setwd" => {
                    let absolute = string_arg("dir")
                        .is_some_and(|v| is_absolute_path(&v) || v.starts_with('/'));
                    out.push(StaticFinding {
                        file: file.clone(),
                        line: line + 1,
                        kind: FindingKind::SetwdCall,
                        severity: if absolute {
                            FindingSeverity::Error
                        } else {
                            FindingSeverity::Warn
                        },
                        excerpt: line_excerpt(src, line),
                        message: "setwd() ties the code to one directory layout".into(),
                    });
                }
                "install.packages" => out.push(StaticFinding {
                    file: file.clone(),
                    line: line + 1,
                    kind: FindingKind::InstallCall,
                    severity: FindingSeverity::Warn,
                    excerpt: line_excerpt(src, line),
                    message: "install.packages() at run time; declare the dependency instead"
                        .into(),
                }),
                name if READ_FUNCTIONS.contains(&name) => {
                    let Some(target) = string_arg("file") else {
                        continue;
                    };
                    if target.is_empty()
                        || target.starts_with('/')
                        || is_absolute_path(&target)
                        || target.contains("://")
                        || root.join(&target).exists()
                        || produced.contains(target.trim_start_matches("./"))
                    {
                        continue;
                    }
                    out.push(StaticFinding {
                        file: file.clone(),
                        line: line + 1,
                        kind: FindingKind::MissingReferencedFile,
                        severity: FindingSeverity::Error,
                        excerpt: line_excerpt(src, line),
                        message: format!("{name}() reads {target:?}, which is not in the package"),
                    });
                }
                _ => {}
            }
        }
    }
    out
}

/// "R x.y[.z]" mentions in any package text file that disagree with the
/// declared version.
pub fn check_version_mentions(
    root: &Path,
    manifest: &Manifest,
) -> std::io::Result<Vec<StaticFinding>> {
    let mut out = Vec::new();
    for rel in package_files(root)? {
        if rel == MANIFEST_FILE {
            continue;
        }
        let path = root.join(&rel);
        if std::fs::metadata(&path)?.len() > MAX_SCANNED_BYTES {
            continue;
        }
        let Ok(text) = std::fs::read_to_string(&path) else {
            continue;
        };
        let src = SourceFile::new(&rel, &text);
        for (i, line) in src.lines.iter().enumerate() {
            for cap in R_VERSION_MENTION.captures_iter(line) {
                let version = &cap[1];
                if !versions_agree(version, &manifest.r_version) {
                    out.push(StaticFinding {
                        file: rel.clone(),
                        line: i + 1,
                        kind: FindingKind::UndeclaredRVersionMention,
                        severity: FindingSeverity::Warn,
                        excerpt: cap[0].to_string(),
                        message: format!(
                            "mentions R {version} but the manifest declares R {}",
                            manifest.r_version
                        ),
                    });
                }
            }
        }
    }
    Ok(out)
}

/// All static checks, sorted by file, line, and kind.
pub fn static_checks(
    root: &Path,
    files: &[SourceFile],
    manifest: &Manifest,
) -> std::io::Result<Vec<StaticFinding>> {
    let mut out = check_sources(root, files);
    out.extend(check_version_mentions(root, manifest)?);
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn has_errors(findings: &[StaticFinding]) -> bool {
    findings
        .iter()
        .any(|f| f.severity == FindingSeverity::Error)
}
