#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn survey() -> (PathBuf, PathBuf) {
    let dir = fixtures().join("survey");
    (dir.join("ratings.csv"), dir.join("snippets"))
}

pub fn stub_runtime() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_re3-stub-runtime"))
}

/// `re3` with a private stub state directory and no inherited runtime override.
pub fn re3(state: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_re3"));
    cmd.env("RE3_STUB_STATE", state)
        .env_remove("RE3_RUNTIME")
        .env_remove("RE3_STUB_UNAVAILABLE")
        .env("NO_COLOR", "1");
    cmd
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("stdout is not one JSON document ({e}):\n{}", stdout(out)))
}

pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Copies a fixture package into `parent` and returns its path.
pub fn package(name: &str, parent: &Path) -> PathBuf {
    let dest = parent.join(name);
    copy_dir(&fixtures().join("packages").join(name), &dest);
    dest
}

pub fn train_model(state: &Path, out: &Path, seed: u64) -> Output {
    let (ratings, snippets) = survey();
    re3(state)
        .args(["--quiet", "--seed", &seed.to_string(), "train", "--ratings"])
        .arg(ratings)
        .arg("--snippets")
        .arg(snippets)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}
