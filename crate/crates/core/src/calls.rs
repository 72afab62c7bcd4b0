//! Function-call recognition over a token stream.
//!
//! A call is an identifier immediately followed (ignoring whitespace and
//! comments) by `(`. Arguments are split on top-level commas.

use crate::lexer::{Token, TokenKind};

#[derive(Debug, Clone)]
pub struct Call<'a> {
    pub name: &'a str,
    /// `pkg` in `pkg::fn(...)` or `pkg:::fn(...)`.
    pub namespace: Option<&'a str>,
    /// The token naming the function.
    pub name_token: &'a Token,
    pub args: Vec<Arg<'a>>,
}

#[derive(Debug, Clone)]
pub struct Arg<'a> {
    /// Argument name for `name = value` arguments.
    pub name: Option<&'a str>,
    pub value: Vec<&'a Token>,
}

impl<'a> Arg<'a> {
    /// The value as a single token, if it consists of exactly one.
    pub fn single(&self) -> Option<&'a Token> {
        match self.value.as_slice() {
            [tok] => Some(*tok),
            _ => None,
        }
    }
}

impl<'a> Call<'a> {
    pub fn line(&self) -> usize {
        self.name_token.line
    }

    pub fn named(&self, name: &str) -> Option<&Arg<'a>> {
        self.args.iter().find(|a| a.name == Some(name))
    }

    /// The first positional argument, or the argument named `name`.
    pub fn first_or_named(&self, name: &str) -> Option<&Arg<'a>> {
        self.named(name)
            .or_else(|| self.args.iter().find(|a| a.name.is_none()))
    }
}

pub fn find_calls(tokens: &[Token]) -> Vec<Call<'_>> {
    let sig: Vec<&Token> = tokens.iter().filter(|t| !t.is_trivia()).collect();
    let mut calls = Vec::new();
    for k in 0..sig.len() {
        let tok = sig[k];
        if tok.kind != TokenKind::Identifier {
            continue;
        }
        if !sig
            .get(k + 1)
            .is_some_and(|t| t.kind == TokenKind::OpenParen)
        {
            continue;
        }
        let namespace = if k >= 2
            && sig[k - 1].kind == TokenKind::OtherOp
            && matches!(sig[k - 1].text.as_str(), "::" | ":::")
            && sig[k - 2].kind == TokenKind::Identifier
        {
            Some(sig[k - 2].text.as_str())
        } else {
            None
        };
        calls.push(Call {
            name: tok.text.as_str(),
            namespace,
            name_token: tok,
            args: split_args(&sig[k + 2..]),
        });
    }
    calls
}

fn split_args<'a>(rest: &[&'a Token]) -> Vec<Arg<'a>> {
    let mut args = Vec::new();
    let mut current: Vec<&'a Token> = Vec::new();
    let mut depth = 0usize;
    for &tok in rest {
        match tok.kind {
            TokenKind::OpenParen | TokenKind::OpenBracket | TokenKind::OpenBrace => depth += 1,
            TokenKind::CloseParen if depth == 0 => break,
            TokenKind::CloseParen | TokenKind::CloseBracket | TokenKind::CloseBrace => {
                depth = depth.saturating_sub(1)
            }
            TokenKind::Comma if depth == 0 => {
                args.push(make_arg(std::mem::take(&mut current)));
                continue;
            }
            _ => {}
        }
        current.push(tok);
    }
    if !current.is_empty() || !args.is_empty() {
        args.push(make_arg(current));
    }
    args
}

fn make_arg(tokens: Vec<&Token>) -> Arg<'_> {
    if tokens.len() >= 2
        && matches!(tokens[0].kind, TokenKind::Identifier | TokenKind::String)
        && tokens[1].is(TokenKind::AssignOp, "=")
    {
        return Arg {
            name: Some(
                tokens[0]
                    .text
                    .trim_matches(|c| c == '"' || c == '\'' || c == '`'),
            ),
            value: tokens[2..].to_vec(),
        };
    }
    Arg {
        name: None,
        value: tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexer::{tokenize, SourceFile};

    #[test]
    fn finds_nested_and_namespaced_calls() {
        let lexed = tokenize(&SourceFile::new(
            "c.R",
            "x <- data.table::fread(file = \"a.csv\", sep = \",\")\nprint(sum(x[, 1]))",
        ));
        let calls = find_calls(&lexed.tokens);
        let names: Vec<(&str, Option<&str>)> =
            calls.iter().map(|c| (c.name, c.namespace)).collect();
        assert_eq!(
            names,
            vec![
                ("fread", Some("data.table")),
                ("print", None),
                ("sum", None)
            ]
        );
        let fread = &calls[0];
        assert_eq!(fread.args.len(), 2);
        assert_eq!(fread.args[0].name, Some("file"));
        assert_eq!(fread.args[0].single().unwrap().text, "\"a.csv\"");
        assert_eq!(calls[2].args.len(), 1);
        assert_eq!(calls[1].line(), 1);
    }

    #[test]
    fn empty_argument_list() {
        let lexed = tokenize(&SourceFile::new("c.R", "f()"));
        let calls = find_calls(&lexed.tokens);
        assert!(calls[0].args.is_empty());
    }
}
