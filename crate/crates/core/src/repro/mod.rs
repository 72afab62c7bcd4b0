//! Replication-package validation: manifest capture, dependency scanning,
//! static checks, container-spec generation, and in-container execution.

pub mod checks;
pub mod container;
pub mod deps;
pub mod execute;
pub mod manifest;

use std::io;
use std::path::Path;

use walkdir::WalkDir;

use crate::lexer::SourceFile;

pub use checks::{has_errors, static_checks, FindingKind, FindingSeverity, StaticFinding};
pub use container::{generate_container_spec, ContainerSpec};
pub use deps::{scan_dependencies, DependencyReport, PackageUse};
pub use execute::{
    execute, resolve_runtime, ExecConfig, ExecuteError, ExecutionReport, FileStatus, Overall,
};
pub use manifest::{
    init_manifest, validate_manifest, Manifest, ManifestError, OnError, MANIFEST_FILE,
};

/// Regular files under `root` as `/`-joined relative paths, sorted.
/// Hidden directories are skipped.
pub fn package_files(root: &Path) -> io::Result<Vec<String>> {
    let mut out = Vec::new();
    let walker = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            e.depth() == 0
                || !(e.file_type().is_dir() && e.file_name().to_string_lossy().starts_with('.'))
        });
    for entry in walker {
        let entry = entry.map_err(io::Error::other)?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walk stays under root");
        out.push(
            rel.components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/"),
        );
    }
    out.sort();
    Ok(out)
}

/// Every `.R`/`.r` file in the package, with paths relative to `root`.
/// Invalid UTF-8 is replaced rather than rejected.
pub fn r_sources(root: &Path) -> io::Result<Vec<SourceFile>> {
    package_files(root)?
        .into_iter()
        .filter(|p| p.ends_with(".R") || p.ends_with(".r"))
        .map(|rel| {
            let bytes = std::fs::read(root.join(&rel))?;
            Ok(SourceFile::new(rel, &String::from_utf8_lossy(&bytes)))
        })
        .collect()
}
