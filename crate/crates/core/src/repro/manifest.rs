use std::collections::BTreeSet;
use std::path::{Component, Path, PathBuf};
use std::sync::LazyLock;

use chrono::{DateTime, SecondsFormat, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::package_files;

pub const MANIFEST_FILE: &str = "re3.json";

pub const MANIFEST_KEYS: [&str; 9] = [
    "author",
    "title",
    "r_version",
    "code_license",
    "data_license",
    "keywords",
    "execution_order",
    "data_files",
    "on_error",
];

const REQUIRED_STRINGS: [&str; 5] = [
    "author",
    "title",
    "r_version",
    "code_license",
    "data_license",
];

static R_VERSION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d+\.\d+(\.\d+)?$").unwrap());

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnError {
    #[default]
    Abort,
    Continue,
}

impl OnError {
    pub fn as_str(self) -> &'static str {
        match self {
            OnError::Abort => "abort",
            OnError::Continue => "continue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub author: String,
    pub title: String,
    pub r_version: String,
    pub code_license: String,
    pub data_license: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    pub execution_order: Vec<String>,
    #[serde(default)]
    pub data_files: Vec<String>,
    #[serde(default)]
    pub on_error: OnError,
    /// Modification time of the manifest file; not stored in the JSON.
    #[serde(skip)]
    pub created_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no {MANIFEST_FILE} in {0}")]
    ManifestMissing(PathBuf),
    #[error("{MANIFEST_FILE} already exists in {0}")]
    AlreadyExists(PathBuf),
    #[error("invalid manifest JSON: {0}")]
    Json(String),
    #[error("unknown manifest key `{0}`")]
    UnknownKey(String),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` must be {expected}")]
    WrongType {
        field: &'static str,
        expected: &'static str,
    },
    #[error("r_version {0:?} is not of the form x.y or x.y.z")]
    BadRVersion(String),
    #[error("execution_order is empty")]
    EmptyExecutionOrder,
    #[error("execution_order entry {0:?} is not an R file (.R or .r)")]
    NotAnRFile(String),
    #[error("execution_order lists {0:?} more than once")]
    DuplicateOrderEntry(String),
    #[error("path {0:?} must be relative, stay inside the package, and avoid quotes, backslashes, `$` and backticks")]
    UnsafePath(String),
    #[error("files not found in package: {}", paths.join(", "))]
    FileNotFound { paths: Vec<String> },
}

/// Relative, normalized, and free of characters that would need escaping in
/// a shell single-quoted word or a JSON string.
pub fn is_safe_relative_path(p: &str) -> bool {
    if p.is_empty() || p.starts_with('/') || p.starts_with('~') {
        return false;
    }
    if p.chars()
        .any(|c| matches!(c, '\'' | '"' | '\\' | '$' | '`') || c.is_control())
    {
        return false;
    }
    Path::new(p)
        .components()
        .all(|c| matches!(c, Component::Normal(_)))
}

impl Manifest {
    /// Structural validation: keys, types, required fields, version format,
    /// and execution-order shape. File existence is checked separately.
    pub fn parse(text: &str) -> Result<Manifest, ManifestError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| ManifestError::Json(e.to_string()))?;
        let Value::Object(obj) = value else {
            return Err(ManifestError::Json("top level must be an object".into()));
        };
        for key in obj.keys() {
            if !MANIFEST_KEYS.contains(&key.as_str()) {
                return Err(ManifestError::UnknownKey(key.clone()));
            }
        }
        for field in REQUIRED_STRINGS {
            match obj.get(field) {
                None | Some(Value::Null) => return Err(ManifestError::MissingField(field)),
                Some(Value::String(s)) if s.trim().is_empty() => {
                    return Err(ManifestError::MissingField(field))
                }
                Some(Value::String(_)) => {}
                Some(_) => {
                    return Err(ManifestError::WrongType {
                        field,
                        expected: "a string",
                    })
                }
            }
        }
        string_list(&obj, "execution_order", true)?;
        string_list(&obj, "keywords", false)?;
        string_list(&obj, "data_files", false)?;
        if let Some(v) = obj.get("on_error") {
            if !matches!(v.as_str(), Some("abort" | "continue")) {
                return Err(ManifestError::WrongType {
                    field: "on_error",
                    expected: "\"abort\" or \"continue\"",
                });
            }
        }
        let m: Manifest = serde_json::from_value(Value::Object(obj))
            .map_err(|e| ManifestError::Json(e.to_string()))?;

        if !R_VERSION.is_match(m.r_version.trim()) {
            return Err(ManifestError::BadRVersion(m.r_version));
        }
        if m.execution_order.is_empty() {
            return Err(ManifestError::EmptyExecutionOrder);
        }
        let mut seen = BTreeSet::new();
        for entry in &m.execution_order {
            if !is_safe_relative_path(entry) {
                return Err(ManifestError::UnsafePath(entry.clone()));
            }
            if !(entry.ends_with(".R") || entry.ends_with(".r")) {
                return Err(ManifestError::NotAnRFile(entry.clone()));
            }
            if !seen.insert(entry.as_str()) {
                return Err(ManifestError::DuplicateOrderEntry(entry.clone()));
            }
        }
        for entry in &m.data_files {
            if !is_safe_relative_path(entry) {
                return Err(ManifestError::UnsafePath(entry.clone()));
            }
        }
        Ok(Manifest {
            r_version: m.r_version.trim().to_string(),
            ..m
        })
    }

    /// Every execution-order entry and data file must exist under `root`.
    pub fn check_files(&self, root: &Path) -> Result<(), ManifestError> {
        let paths: Vec<String> = self
            .execution_order
            .iter()
            .chain(&self.data_files)
            .filter(|p| !root.join(p).is_file())
            .cloned()
            .collect();
        if paths.is_empty() {
            Ok(())
        } else {
            Err(ManifestError::FileNotFound { paths })
        }
    }

    pub fn created_at_rfc3339(&self) -> Option<String> {
        self.created_at
            .map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

fn string_list(
    obj: &Map<String, Value>,
    field: &'static str,
    required: bool,
) -> Result<(), ManifestError> {
    match obj.get(field) {
        None | Some(Value::Null) if required => Err(ManifestError::MissingField(field)),
        None | Some(Value::Null) => Ok(()),
        Some(Value::Array(items)) if items.iter().all(Value::is_string) => Ok(()),
        Some(_) => Err(ManifestError::WrongType {
            field,
            expected: "a list of strings",
        }),
    }
}

/// Reads and fully validates `<root>/re3.json`.
pub fn validate_manifest(root: &Path) -> Result<Manifest, ManifestError> {
    let path = root.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(ManifestError::ManifestMissing(root.to_path_buf()));
    }
    let io_err = |source| ManifestError::Io {
        path: path.clone(),
        source,
    };
    let text = std::fs::read_to_string(&path).map_err(io_err)?;
    let mut m = Manifest::parse(&text)?;
    m.check_files(root)?;
    m.created_at = std::fs::metadata(&path)
        .and_then(|md| md.modified())
        .ok()
        .map(DateTime::<Utc>::from);
    Ok(m)
}

/// Writes a template manifest listing the package's R files in path order.
/// Required text fields are left empty for the author to fill in.
pub fn init_manifest(root: &Path) -> Result<PathBuf, ManifestError> {
    let path = root.join(MANIFEST_FILE);
    if path.exists() {
        return Err(ManifestError::AlreadyExists(root.to_path_buf()));
    }
    let files = package_files(root).map_err(|source| ManifestError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let order: Vec<String> = files
        .into_iter()
        .filter(|f| f.ends_with(".R") || f.ends_with(".r"))
        .collect();
    let template = Manifest {
        author: String::new(),
        title: String::new(),
        r_version: String::new(),
        code_license: String::new(),
        data_license: String::new(),
        keywords: Vec::new(),
        execution_order: order,
        data_files: Vec::new(),
        on_error: OnError::Abort,
        created_at: None,
    };
    std::fs::write(&path, template.to_json()).map_err(|source| ManifestError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
