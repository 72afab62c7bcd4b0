use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::deps::DependencyReport;
use super::manifest::Manifest;

pub const BASE_IMAGE: &str = "condaforge/miniforge3:24.3.0-0";
pub const CONDA_ENV: &str = "re3";
pub const RUNNER_NAME: &str = "re3_run.sh";
pub const STATUS_FILE: &str = "re3_status.json";
/// Marker line printed to both streams before each file runs.
pub const FILE_MARKER: &str = "::re3-file ";
pub const DEFAULT_TIMEOUT_S: u64 = 3600;

/// Packages shipped with r-base; they have no separate conda package.
pub const BASE_R_PACKAGES: [&str; 14] = [
    "base",
    "compiler",
    "datasets",
    "graphics",
    "grDevices",
    "grid",
    "methods",
    "parallel",
    "splines",
    "stats",
    "stats4",
    "tcltk",
    "tools",
    "utils",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerSpec {
    pub dockerfile_text: String,
    pub runner_script_text: String,
    /// Build-context entries, relative to the context root.
    pub context_files: Vec<String>,
    pub image_tag: String,
    pub execution_order: Vec<String>,
}

fn conda_packages(deps: &DependencyReport) -> Vec<String> {
    let mut pkgs: Vec<String> = deps
        .packages
        .iter()
        .filter(|p| !BASE_R_PACKAGES.contains(&p.as_str()))
        .map(|p| format!("r-{}", p.to_lowercase()))
        .collect();
    pkgs.sort();
    pkgs.dedup();
    pkgs
}

fn dockerfile(m: &Manifest, deps: &DependencyReport) -> String {
    let mut install = vec![format!("r-base={}", m.r_version)];
    install.extend(conda_packages(deps));
    let mut s = String::new();
    s.push_str("# Generated by re3; regenerate rather than edit.\n");
    s.push_str(&format!("FROM {BASE_IMAGE}\n"));
    s.push_str(&format!(
        "RUN conda create --yes --name {CONDA_ENV} --channel conda-forge --override-channels \\\n"
    ));
    for pkg in &install {
        s.push_str(&format!("        {pkg} \\\n"));
    }
    s.push_str("    && conda clean --all --yes\n");
    s.push_str("WORKDIR /work\n");
    s.push_str("COPY package/ /work/\n");
    s.push_str(&format!("COPY {RUNNER_NAME} /opt/re3/{RUNNER_NAME}\n"));
    s.push_str(&format!(
        "ENTRYPOINT [\"conda\", \"run\", \"--no-capture-output\", \"--name\", \"{CONDA_ENV}\", \"sh\", \"/opt/re3/{RUNNER_NAME}\"]\n"
    ));
    s
}

fn runner_script(m: &Manifest) -> String {
    let mut s = String::from(
        r#"#!/bin/sh
# Generated by re3. Runs the package's R files in order and records
# one status entry per file in re3_status.json.
ON_ERROR="${RE3_ON_ERROR:-"#,
    );
    s.push_str(m.on_error.as_str());
    s.push_str(&format!(
        r#"}}"
TIMEOUT="${{RE3_TIMEOUT:-{DEFAULT_TIMEOUT_S}}}"
STATUS={STATUS_FILE}
ENTRIES=""
FAILED=0

write_status() {{
    printf '{{"files":[%s]}}\n' "$ENTRIES" > "$STATUS"
}}

run_file() {{
    echo "{FILE_MARKER}$1"
    echo "{FILE_MARKER}$1" >&2
    start=$(date +%s)
    timeout "$TIMEOUT" Rscript --vanilla "$1"
    code=$?
    end=$(date +%s)
    entry=$(printf '{{"path":"%s","exit_code":%d,"duration_s":%d}}' "$1" "$code" "$((end - start))")
    if [ -z "$ENTRIES" ]; then ENTRIES="$entry"; else ENTRIES="$ENTRIES,$entry"; fi
    write_status
    if [ "$code" -ne 0 ]; then
        FAILED=1
        if [ "$ON_ERROR" = "abort" ]; then
            exit 1
        fi
    fi
}}

write_status
"#
    ));
    for path in &m.execution_order {
        s.push_str(&format!("run_file '{path}'\n"));
    }
    s.push_str("exit \"$FAILED\"\n");
    s
}

fn slug(title: &str) -> String {
    let mut out = String::new();
    for c in title.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
        if out.len() >= 40 {
            break;
        }
    }
    let out = out.trim_end_matches('-').to_string();
    if out.is_empty() {
        "package".to_string()
    } else {
        out
    }
}

/// Deterministic image recipe and runner for a validated manifest.
pub fn generate_container_spec(m: &Manifest, deps: &DependencyReport) -> ContainerSpec {
    let dockerfile_text = dockerfile(m, deps);
    let runner_script_text = runner_script(m);
    let mut hasher = Sha256::new();
    hasher.update(dockerfile_text.as_bytes());
    hasher.update([0u8]);
    hasher.update(runner_script_text.as_bytes());
    let digest: String = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    ContainerSpec {
        image_tag: format!("re3-{}:{}", slug(&m.title), &digest[..12]),
        dockerfile_text,
        runner_script_text,
        context_files: vec!["Dockerfile".into(), RUNNER_NAME.into(), "package/".into()],
        execution_order: m.execution_order.clone(),
    }
}
