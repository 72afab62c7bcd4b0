use std::io::IsTerminal;
use std::process::ExitCode;

use serde::Serialize;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_BUILD: u8 = 2;
pub const EXIT_EXECUTION: u8 = 3;
pub const EXIT_ENVIRONMENT: u8 = 4;
pub const EXIT_USAGE: u8 = 64;

/// A command failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl std::fmt::Display) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }

    pub fn validation(message: impl std::fmt::Display) -> Self {
        Failure::new(EXIT_VALIDATION, message)
    }

    pub fn usage(message: impl std::fmt::Display) -> Self {
        Failure::new(EXIT_USAGE, message)
    }
}

pub type CmdResult = Result<u8, Failure>;

#[derive(Debug, Clone, Copy)]
pub struct Output {
    pub json: bool,
    pub quiet: bool,
    pub color: bool,
}

impl Output {
    pub fn new(json: bool, quiet: bool) -> Self {
        let color =
            !json && std::io::stdout().is_terminal() && std::env::var_os("NO_COLOR").is_none();
        Output { json, quiet, color }
    }

    /// Prints one JSON document in `--json` mode, otherwise runs `human`.
    pub fn emit<T: Serialize>(&self, value: &T, human: impl FnOnce()) {
        if self.json {
            println!(
                "{}",
                serde_json::to_string_pretty(value).expect("output serializes")
            );
        } else {
            human();
        }
    }

    /// Informational text suppressed by `--quiet` and `--json`.
    pub fn info(&self, text: impl std::fmt::Display) {
        if !self.quiet && !self.json {
            println!("{text}");
        }
    }

    pub fn warn(&self, text: impl std::fmt::Display) {
        if !self.quiet {
            eprintln!("warning: {text}");
        }
    }

    pub fn paint(&self, text: &str, code: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_string()
        }
    }

    pub fn score(&self, score: f64) -> String {
        let text = format!("{score:.2}");
        match score {
            s if s <= 5.0 => self.paint(&text, "1;31"),
            s if s < 7.0 => self.paint(&text, "33"),
            _ => self.paint(&text, "32"),
        }
    }
}

pub fn finish(result: CmdResult) -> ExitCode {
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
