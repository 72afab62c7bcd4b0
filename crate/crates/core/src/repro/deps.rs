use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::calls::{find_calls, Arg, Call};
use crate::lexer::{tokenize, SourceFile, Token, TokenKind};

static PACKAGE_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z][A-Za-z0-9.]*[A-Za-z0-9]$").unwrap());

pub fn is_package_name(s: &str) -> bool {
    PACKAGE_NAME.is_match(s)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PackageUse {
    pub package: String,
    /// 1-based line number.
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyReport {
    pub packages: Vec<String>,
    /// File path → every detected use, in source order.
    pub provenance: BTreeMap<String, Vec<PackageUse>>,
}

fn is_true(arg: Option<&Arg>) -> bool {
    arg.and_then(Arg::single).is_some_and(|t| {
        matches!(t.kind, TokenKind::Identifier | TokenKind::Keyword)
            && matches!(t.text.as_str(), "TRUE" | "T")
    })
}

fn literal_name(tok: &Token, allow_symbol: bool) -> Option<String> {
    let name = match tok.kind {
        TokenKind::String => tok.string_value()?,
        TokenKind::Identifier if allow_symbol => tok.text.trim_matches('`').to_string(),
        _ => return None,
    };
    is_package_name(&name).then_some(name)
}

fn namespace_is(call: &Call, allowed: &[&str]) -> bool {
    call.namespace.is_none_or(|ns| allowed.contains(&ns))
}

fn call_packages(call: &Call) -> Vec<String> {
    match call.name {
        "library" | "require" if namespace_is(call, &["base"]) => {
            let symbolic = !is_true(call.named("character.only"));
            call.first_or_named("package")
                .and_then(Arg::single)
                .and_then(|t| literal_name(t, symbolic))
                .into_iter()
                .collect()
        }
        "requireNamespace" | "loadNamespace" if namespace_is(call, &["base"]) => call
            .first_or_named("package")
            .and_then(Arg::single)
            .and_then(|t| literal_name(t, false))
            .into_iter()
            .collect(),
        "p_load" if namespace_is(call, &["pacman"]) => {
            let symbolic = !is_true(call.named("character.only"));
            call.args
                .iter()
                .filter(|a| a.name.is_none())
                .filter_map(Arg::single)
                .filter_map(|t| literal_name(t, symbolic))
                .collect()
        }
        _ => Vec::new(),
    }
}

/// Package uses in one file: attach/load calls and `pkg::` / `pkg:::`
/// qualifiers. Strings and comments are never matched.
pub fn scan_file(src: &SourceFile) -> Vec<PackageUse> {
    let lexed = tokenize(src);
    let mut uses = Vec::new();
    for call in find_calls(&lexed.tokens) {
        for package in call_packages(&call) {
            uses.push(PackageUse {
                package,
                line: call.line() + 1,
            });
        }
    }
    let sig: Vec<&Token> = lexed.tokens.iter().filter(|t| !t.is_trivia()).collect();
    for pair in sig.windows(2) {
        if pair[0].kind == TokenKind::Identifier
            && pair[1].kind == TokenKind::OtherOp
            && matches!(pair[1].text.as_str(), "::" | ":::")
        {
            let name = pair[0].text.trim_matches('`');
            if is_package_name(name) {
                uses.push(PackageUse {
                    package: name.to_string(),
                    line: pair[0].line + 1,
                });
            }
        }
    }
    uses.sort();
    uses
}

pub fn scan_dependencies(files: &[SourceFile]) -> DependencyReport {
    let mut provenance: BTreeMap<String, Vec<PackageUse>> = BTreeMap::new();
    for f in files {
        let uses = scan_file(f);
        if !uses.is_empty() {
            provenance.entry(f.display_path()).or_default().extend(uses);
        }
    }
    for uses in provenance.values_mut() {
        uses.sort();
    }
    let packages: BTreeSet<&str> = provenance
        .values()
        .flatten()
        .map(|u| u.package.as_str())
        .collect();
    DependencyReport {
        packages: packages.into_iter().map(str::to_string).collect(),
        provenance,
    }
}
