//! Structural readability features of an R file.
//!
//! Each feature is either an average per line (sum of per-line counts over the
//! total line count, blank and comment lines included) or a maximum over all
//! lines, so that long and short files are comparable.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::{tokenize, Lexed, SourceFile, Token, TokenKind};

pub const FEATURE_COUNT: usize = 22;

/// Canonical feature order. Model files and reports index by this order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "avg_arithmetic",
    "avg_assignments",
    "avg_blank_lines",
    "avg_branches",
    "avg_commas",
    "avg_comments",
    "avg_comparison",
    "avg_indentation",
    "avg_keywords",
    "avg_line_length",
    "avg_loops",
    "avg_numbers",
    "avg_parens",
    "avg_periods",
    "avg_spaces",
    "avg_variables",
    "max_character",
    "max_indentation",
    "max_keywords",
    "max_line_length",
    "max_numbers",
    "max_variables",
];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

const TAB_WIDTH: usize = 4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("{path}: file has no lines")]
    EmptyFile { path: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LineMetrics {
    pub length_chars: usize,
    pub indent_cols: usize,
    pub arithmetic_ops: usize,
    pub assignments: usize,
    pub branches: usize,
    pub commas: usize,
    pub comments: usize,
    pub comparison_ops: usize,
    pub keywords: usize,
    pub loops: usize,
    pub numbers: usize,
    pub parens: usize,
    pub periods: usize,
    pub spaces: usize,
    pub variables: usize,
    pub is_blank: bool,
    pub max_single_char_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub avg_arithmetic: f64,
    pub avg_assignments: f64,
    pub avg_blank_lines: f64,
    pub avg_branches: f64,
    pub avg_commas: f64,
    pub avg_comments: f64,
    pub avg_comparison: f64,
    pub avg_indentation: f64,
    pub avg_keywords: f64,
    pub avg_line_length: f64,
    pub avg_loops: f64,
    pub avg_numbers: f64,
    pub avg_parens: f64,
    pub avg_periods: f64,
    pub avg_spaces: f64,
    pub avg_variables: f64,
    pub max_character: f64,
    pub max_indentation: f64,
    pub max_keywords: f64,
    pub max_line_length: f64,
    pub max_numbers: f64,
    pub max_variables: f64,
    pub line_count: usize,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.avg_arithmetic,
            self.avg_assignments,
            self.avg_blank_lines,
            self.avg_branches,
            self.avg_commas,
            self.avg_comments,
            self.avg_comparison,
            self.avg_indentation,
            self.avg_keywords,
            self.avg_line_length,
            self.avg_loops,
            self.avg_numbers,
            self.avg_parens,
            self.avg_periods,
            self.avg_spaces,
            self.avg_variables,
            self.max_character,
            self.max_indentation,
            self.max_keywords,
            self.max_line_length,
            self.max_numbers,
            self.max_variables,
        ]
    }

    pub fn from_array(values: [f64; FEATURE_COUNT], line_count: usize) -> Self {
        let [avg_arithmetic, avg_assignments, avg_blank_lines, avg_branches, avg_commas, avg_comments, avg_comparison, avg_indentation, avg_keywords, avg_line_length, avg_loops, avg_numbers, avg_parens, avg_periods, avg_spaces, avg_variables, max_character, max_indentation, max_keywords, max_line_length, max_numbers, max_variables] =
            values;
        FeatureVector {
            avg_arithmetic,
            avg_assignments,
            avg_blank_lines,
            avg_branches,
            avg_commas,
            avg_comments,
            avg_comparison,
            avg_indentation,
            avg_keywords,
            avg_line_length,
            avg_loops,
            avg_numbers,
            avg_parens,
            avg_periods,
            avg_spaces,
            avg_variables,
            max_character,
            max_indentation,
            max_keywords,
            max_line_length,
            max_numbers,
            max_variables,
            line_count,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.to_array()[i])
    }

    /// (name, value) pairs in canonical order.
    pub fn named(&self) -> impl Iterator<Item = (&'static str, f64)> {
        FEATURE_NAMES.into_iter().zip(self.to_array())
    }
}

/// Index of the next token after `i` that is not whitespace.
fn next_non_ws(tokens: &[Token], i: usize) -> Option<&Token> {
    tokens[i + 1..]
        .iter()
        .find(|t| t.kind != TokenKind::Whitespace)
}

fn indent_cols(line: &str) -> usize {
    line.chars()
        .take_while(|c| c.is_whitespace())
        .map(|c| if c == '\t' { TAB_WIDTH } else { 1 })
        .sum()
}

pub fn extract_line_metrics(lexed: &Lexed, src: &SourceFile) -> Vec<LineMetrics> {
    let tokens = &lexed.tokens;
    let mut metrics: Vec<LineMetrics> = src
        .lines
        .iter()
        .map(|line| LineMetrics {
            length_chars: line.chars().count(),
            indent_cols: indent_cols(line),
            spaces: line.chars().filter(|&c| c == ' ').count(),
            is_blank: line.trim().is_empty(),
            ..LineMetrics::default()
        })
        .collect();
    let mut char_counts: Vec<HashMap<char, usize>> = vec![HashMap::new(); metrics.len()];

    for (i, tok) in tokens.iter().enumerate() {
        let m = &mut metrics[tok.line];
        let text = tok.text.as_str();
        match tok.kind {
            TokenKind::Comment => m.comments = 1,
            TokenKind::ArithmeticOp => m.arithmetic_ops += 1,
            TokenKind::ComparisonOp => m.comparison_ops += 1,
            TokenKind::AssignOp => {
                // `=` inside a call binds an argument
                if text != "=" || tok.depth_paren == 0 {
                    m.assignments += 1;
                }
            }
            TokenKind::Keyword => {
                m.keywords += 1;
                match text {
                    "if" => m.branches += 1,
                    "else" => {
                        let else_if =
                            next_non_ws(tokens, i).is_some_and(|t| t.is(TokenKind::Keyword, "if"));
                        if !else_if {
                            m.branches += 1;
                        }
                    }
                    "for" | "while" | "repeat" => m.loops += 1,
                    _ => {}
                }
            }
            TokenKind::Number => m.numbers += 1,
            TokenKind::OpenParen | TokenKind::CloseParen => m.parens += 1,
            TokenKind::Comma => m.commas += 1,
            TokenKind::Identifier => {
                let outside = tok.depth_paren == 0 && tok.depth_bracket == 0;
                let is_call =
                    next_non_ws(tokens, i).is_some_and(|t| t.kind == TokenKind::OpenParen);
                if outside && !is_call {
                    m.variables += 1;
                }
            }
            _ => {}
        }
        if !matches!(
            tok.kind,
            TokenKind::String | TokenKind::Comment | TokenKind::Number
        ) {
            m.periods += text.chars().filter(|&c| c == '.').count();
        }
        if !matches!(
            tok.kind,
            TokenKind::String | TokenKind::Comment | TokenKind::Whitespace
        ) {
            let counts = &mut char_counts[tok.line];
            for c in text.chars().filter(|c| !c.is_whitespace()) {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
    }

    for (m, counts) in metrics.iter_mut().zip(char_counts) {
        m.max_single_char_count = counts.into_values().max().unwrap_or(0);
    }
    metrics
}

/// Aggregates per-line metrics into the feature vector.
pub fn aggregate(metrics: &[LineMetrics]) -> Option<FeatureVector> {
    if metrics.is_empty() {
        return None;
    }
    let n = metrics.len() as f64;
    let avg = |f: fn(&LineMetrics) -> usize| metrics.iter().map(f).sum::<usize>() as f64 / n;
    let max = |f: fn(&LineMetrics) -> usize| metrics.iter().map(f).max().unwrap_or(0) as f64;
    Some(FeatureVector {
        avg_arithmetic: avg(|m| m.arithmetic_ops),
        avg_assignments: avg(|m| m.assignments),
        avg_blank_lines: avg(|m| m.is_blank as usize),
        avg_branches: avg(|m| m.branches),
        avg_commas: avg(|m| m.commas),
        avg_comments: avg(|m| m.comments),
        avg_comparison: avg(|m| m.comparison_ops),
        avg_indentation: avg(|m| m.indent_cols),
        avg_keywords: avg(|m| m.keywords),
        avg_line_length: avg(|m| m.length_chars),
        avg_loops: avg(|m| m.loops),
        avg_numbers: avg(|m| m.numbers),
        avg_parens: avg(|m| m.parens),
        avg_periods: avg(|m| m.periods),
        avg_spaces: avg(|m| m.spaces),
        avg_variables: avg(|m| m.variables),
        max_character: max(|m| m.max_single_char_count),
        max_indentation: max(|m| m.indent_cols),
        max_keywords: max(|m| m.keywords),
        max_line_length: max(|m| m.length_chars),
        max_numbers: max(|m| m.numbers),
        max_variables: max(|m| m.variables),
        line_count: metrics.len(),
    })
}

pub fn extract_features(src: &SourceFile) -> Result<FeatureVector, FeatureError> {
    let lexed = tokenize(src);
    let metrics = extract_line_metrics(&lexed, src);
    aggregate(&metrics).ok_or_else(|| FeatureError::EmptyFile {
        path: src.display_path(),
    })
}
