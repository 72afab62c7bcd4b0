//! Line-oriented lexer for R source text.
//!
//! The lexer is regex-grade rather than a full R grammar: it classifies every
//! character of the input into a token so that downstream feature counting
//! never looks inside strings or comments. Lexing never fails; malformed input
//! (an unterminated string, for instance) yields a best-effort token stream
//! plus a [`LexWarning`].

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// R reserved words. Anything else made of identifier characters is an
/// [`TokenKind::Identifier`].
pub const KEYWORDS: [&str; 18] = [
    "if",
    "else",
    "repeat",
    "while",
    "function",
    "for",
    "next",
    "break",
    "TRUE",
    "FALSE",
    "NULL",
    "Inf",
    "NaN",
    "NA",
    "NA_integer_",
    "NA_real_",
    "NA_complex_",
    "NA_character_",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.contains(&word)
}

/// One R file, split into lines.
///
/// CRLF line endings are normalized to LF on construction, so `lines` never
/// carries a trailing `\r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: PathBuf,
    pub text: String,
    pub lines: Vec<String>,
}

impl SourceFile {
    pub fn new(path: impl Into<PathBuf>, text: &str) -> Self {
        let text = text.replace("\r\n", "\n");
        let mut lines: Vec<String> = text
            .split('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
            .collect();
        // A trailing newline terminates the last line rather than opening a new one.
        if text.is_empty() || text.ends_with('\n') {
            lines.pop();
        }
        SourceFile {
            path: path.into(),
            text,
            lines,
        }
    }

    /// Reads a file from disk. Invalid UTF-8 is reported as
    /// [`io::ErrorKind::InvalidData`].
    pub fn read(path: &Path) -> io::Result<Self> {
        let bytes = std::fs::read(path)?;
        let text =
            String::from_utf8(bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        Ok(SourceFile::new(path, &text))
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    /// Path rendered with forward slashes, for stable report keys.
    pub fn display_path(&self) -> String {
        self.path
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TokenKind {
    Comment,
    String,
    Number,
    Keyword,
    Identifier,
    AssignOp,
    ArithmeticOp,
    ComparisonOp,
    Comma,
    OpenParen,
    CloseParen,
    OpenBracket,
    CloseBracket,
    OpenBrace,
    CloseBrace,
    Period,
    OtherOp,
    Whitespace,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// 0-based line index.
    pub line: usize,
    /// 0-based column, counted in characters (a tab is one column).
    pub col: usize,
    /// Number of enclosing `(` at the start of this token.
    pub depth_paren: u32,
    /// Number of enclosing `[` at the start of this token.
    pub depth_bracket: u32,
}

impl Token {
    pub fn is_trivia(&self) -> bool {
        matches!(self.kind, TokenKind::Whitespace | TokenKind::Comment)
    }

    pub fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }

    /// Contents of a string literal with the quotes removed and simple
    /// escapes resolved. Returns `None` for non-string tokens.
    pub fn string_value(&self) -> Option<String> {
        if self.kind != TokenKind::String {
            return None;
        }
        let mut chars = self.text.chars().peekable();
        let quote = match chars.peek() {
            Some(&q @ ('"' | '\'')) => {
                chars.next();
                Some(q)
            }
            // continuation fragment of a multi-line string
            _ => None,
        };
        let mut out = String::new();
        while let Some(c) = chars.next() {
            match c {
                '\\' => match chars.next() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(other) => out.push(other),
                    None => {}
                },
                c if Some(c) == quote && chars.peek().is_none() => {}
                c => out.push(c),
            }
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum LexWarning {
    /// A string opened on `line` (0-based) was still open at end of input.
    UnterminatedString { line: usize },
}

impl fmt::Display for LexWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LexWarning::UnterminatedString { line } => {
                write!(f, "unterminated string starting on line {}", line + 1)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Lexed {
    pub tokens: Vec<Token>,
    pub warnings: Vec<LexWarning>,
}

impl Lexed {
    /// Tokens belonging to `line`, in column order.
    pub fn line_tokens(&self, line: usize) -> impl Iterator<Item = &Token> {
        let start = self.tokens.partition_point(|t| t.line < line);
        self.tokens[start..]
            .iter()
            .take_while(move |t| t.line == line)
    }
}

// Longest operators first so that maximal munch falls out of a linear scan.
const OPERATORS: [(&str, TokenKind); 17] = [
    ("<<-", TokenKind::AssignOp),
    ("->>", TokenKind::AssignOp),
    ("%/%", TokenKind::ArithmeticOp),
    (":::", TokenKind::OtherOp),
    ("%%", TokenKind::ArithmeticOp),
    ("<-", TokenKind::AssignOp),
    ("->", TokenKind::AssignOp),
    ("<=", TokenKind::ComparisonOp),
    (">=", TokenKind::ComparisonOp),
    ("==", TokenKind::ComparisonOp),
    ("!=", TokenKind::ComparisonOp),
    ("**", TokenKind::ArithmeticOp),
    ("&&", TokenKind::OtherOp),
    ("||", TokenKind::OtherOp),
    ("|>", TokenKind::OtherOp),
    ("::", TokenKind::OtherOp),
    (":=", TokenKind::OtherOp),
];

struct Lexer {
    tokens: Vec<Token>,
    warnings: Vec<LexWarning>,
    depth_paren: u32,
    depth_bracket: u32,
    /// Quote character and opening line of a string that spans lines.
    open_string: Option<(char, usize)>,
}

impl Lexer {
    fn push(&mut self, kind: TokenKind, chars: &[char], line: usize, start: usize, end: usize) {
        self.tokens.push(Token {
            kind,
            text: chars[start..end].iter().collect(),
            line,
            col: start,
            depth_paren: self.depth_paren,
            depth_bracket: self.depth_bracket,
        });
        match kind {
            TokenKind::OpenParen => self.depth_paren += 1,
            TokenKind::CloseParen => self.depth_paren = self.depth_paren.saturating_sub(1),
            TokenKind::OpenBracket => self.depth_bracket += 1,
            TokenKind::CloseBracket => self.depth_bracket = self.depth_bracket.saturating_sub(1),
            _ => {}
        }
    }

    fn lex_line(&mut self, line_no: usize, line: &str) {
        let chars: Vec<char> = line.chars().collect();
        let n = chars.len();
        let mut i = 0;

        if let Some((quote, opened)) = self.open_string {
            let (end, closed) = scan_string_body(&chars, 0, quote);
            if end > 0 {
                self.push(TokenKind::String, &chars, line_no, 0, end);
            }
            if closed {
                self.open_string = None;
            } else {
                self.open_string = Some((quote, opened));
            }
            i = end;
        }

        while i < n {
            let c = chars[i];
            let next = chars.get(i + 1).copied();

            if c.is_whitespace() {
                let end = scan_while(&chars, i, |c| c.is_whitespace());
                self.push(TokenKind::Whitespace, &chars, line_no, i, end);
                i = end;
                continue;
            }

            if c == '#' {
                self.push(TokenKind::Comment, &chars, line_no, i, n);
                break;
            }

            if c == '"' || c == '\'' {
                let (end, closed) = scan_string_body(&chars, i + 1, c);
                self.push(TokenKind::String, &chars, line_no, i, end);
                if !closed {
                    self.open_string = Some((c, line_no));
                }
                i = end;
                continue;
            }

            if c == '`' {
                let (end, _) = scan_string_body(&chars, i + 1, '`');
                self.push(TokenKind::Identifier, &chars, line_no, i, end);
                i = end;
                continue;
            }

            if c.is_ascii_digit() || (c == '.' && next.is_some_and(|d| d.is_ascii_digit())) {
                let end = scan_number(&chars, i);
                self.push(TokenKind::Number, &chars, line_no, i, end);
                i = end;
                continue;
            }

            if c.is_alphabetic() || c == '.' {
                let end = scan_while(&chars, i, |c| c.is_alphanumeric() || c == '.' || c == '_');
                let word: String = chars[i..end].iter().collect();
                let kind = if word == "." {
                    TokenKind::Period
                } else if is_keyword(&word) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Identifier
                };
                self.push(kind, &chars, line_no, i, end);
                i = end;
                continue;
            }

            if let Some((op, kind)) = OPERATORS.iter().find(|(op, _)| starts_with(&chars, i, op)) {
                let end = i + op.chars().count();
                self.push(*kind, &chars, line_no, i, end);
                i = end;
                continue;
            }

            // user-defined infix operator such as %in% or %>%
            if c == '%' {
                if let Some(offset) = chars[i + 1..].iter().position(|&c| c == '%') {
                    let end = i + offset + 2;
                    self.push(TokenKind::OtherOp, &chars, line_no, i, end);
                    i = end;
                    continue;
                }
            }

            let kind = match c {
                '=' => TokenKind::AssignOp,
                '<' | '>' => TokenKind::ComparisonOp,
                '+' | '-' | '*' | '/' | '^' => TokenKind::ArithmeticOp,
                ',' => TokenKind::Comma,
                '(' => TokenKind::OpenParen,
                ')' => TokenKind::CloseParen,
                '[' => TokenKind::OpenBracket,
                ']' => TokenKind::CloseBracket,
                '{' => TokenKind::OpenBrace,
                '}' => TokenKind::CloseBrace,
                _ => TokenKind::OtherOp,
            };
            self.push(kind, &chars, line_no, i, i + 1);
            i += 1;
        }
    }
}

fn starts_with(chars: &[char], at: usize, pat: &str) -> bool {
    pat.chars()
        .enumerate()
        .all(|(k, p)| chars.get(at + k) == Some(&p))
}

fn scan_while(chars: &[char], start: usize, pred: impl Fn(char) -> bool) -> usize {
    let mut end = start;
    while end < chars.len() && pred(chars[end]) {
        end += 1;
    }
    end
}

/// Scans string contents starting at `start` (just past the opening quote).
/// Returns the exclusive end index and whether the closing quote was found.
fn scan_string_body(chars: &[char], start: usize, quote: char) -> (usize, bool) {
    let mut j = start;
    while j < chars.len() {
        match chars[j] {
            '\\' => j += 2,
            c if c == quote => return (j + 1, true),
            _ => j += 1,
        }
    }
    (chars.len(), false)
}

fn scan_number(chars: &[char], start: usize) -> usize {
    let n = chars.len();
    let mut j = start;
    if chars[j] == '0'
        && matches!(chars.get(j + 1), Some('x' | 'X'))
        && chars.get(j + 2).is_some_and(|c| c.is_ascii_hexdigit())
    {
        j = scan_while(chars, j + 2, |c| c.is_ascii_hexdigit());
    } else {
        j = scan_while(chars, j, |c| c.is_ascii_digit());
        if j < n && chars[j] == '.' {
            j = scan_while(chars, j + 1, |c| c.is_ascii_digit());
        }
        if j < n && matches!(chars[j], 'e' | 'E') {
            let mut k = j + 1;
            if k < n && matches!(chars[k], '+' | '-') {
                k += 1;
            }
            if k < n && chars[k].is_ascii_digit() {
                j = scan_while(chars, k, |c| c.is_ascii_digit());
            }
        }
    }
    if j < n && matches!(chars[j], 'L' | 'i') {
        j += 1;
    }
    j
}

/// Splits `src` into tokens. Every character of every line belongs to exactly
/// one token, so concatenating a line's token texts reproduces the line.
pub fn tokenize(src: &SourceFile) -> Lexed {
    let mut lexer = Lexer {
        tokens: Vec::new(),
        warnings: Vec::new(),
        depth_paren: 0,
        depth_bracket: 0,
        open_string: None,
    };
    for (line_no, line) in src.lines.iter().enumerate() {
        lexer.lex_line(line_no, line);
    }
    if let Some((_, line)) = lexer.open_string {
        lexer.warnings.push(LexWarning::UnterminatedString { line });
    }
    Lexed {
        tokens: lexer.tokens,
        warnings: lexer.warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex(text: &str) -> Lexed {
        tokenize(&SourceFile::new("t.R", text))
    }

    fn significant(text: &str) -> Vec<(TokenKind, String)> {
        lex(text)
            .tokens
            .into_iter()
            .filter(|t| t.kind != TokenKind::Whitespace)
            .map(|t| (t.kind, t.text))
            .collect()
    }

    #[test]
    fn minimal_assignment() {
        use TokenKind::*;
        assert_eq!(
            significant("x <- 1"),
            vec![
                (Identifier, "x".into()),
                (AssignOp, "<-".into()),
                (Number, "1".into())
            ]
        );
        assert_eq!(lex("x <- 1").tokens.len(), 5);
    }

    #[test]
    fn comment_only_line() {
        let toks = lex("# load data").tokens;
        assert_eq!(toks.len(), 1);
        assert_eq!(toks[0].kind, TokenKind::Comment);
        assert_eq!(toks[0].text, "# load data");
    }

    #[test]
    fn hash_inside_string_is_not_a_comment() {
        use TokenKind::*;
        let toks: Vec<Token> = lex(r#"if (a == "b#c") { y <- a }"#)
            .tokens
            .into_iter()
            .filter(|t| t.kind != Whitespace)
            .collect();
        let expected = [
            (Keyword, "if", 0),
            (OpenParen, "(", 0),
            (Identifier, "a", 1),
            (ComparisonOp, "==", 1),
            (String, "\"b#c\"", 1),
            (CloseParen, ")", 1),
            (OpenBrace, "{", 0),
            (Identifier, "y", 0),
            (AssignOp, "<-", 0),
            (Identifier, "a", 0),
            (CloseBrace, "}", 0),
        ];
        assert_eq!(toks.len(), expected.len());
        for (tok, (kind, text, depth)) in toks.iter().zip(expected) {
            assert_eq!(
                (tok.kind, tok.text.as_str(), tok.depth_paren),
                (kind, text, depth)
            );
        }
    }

    #[test]
    fn multi_character_operators() {
        use TokenKind::*;
        let cases = [
            ("<-", AssignOp),
            ("<<-", AssignOp),
            ("->", AssignOp),
            ("->>", AssignOp),
            ("==", ComparisonOp),
            ("!=", ComparisonOp),
            ("<=", ComparisonOp),
            (">=", ComparisonOp),
            ("%%", ArithmeticOp),
            ("%/%", ArithmeticOp),
            ("%in%", OtherOp),
            ("%>%", OtherOp),
            ("::", OtherOp),
        ];
        for (op, kind) in cases {
            let toks = significant(&format!("a {op} b"));
            assert_eq!(toks[1], (kind, op.to_string()), "operator {op}");
            assert_eq!(toks.len(), 3);
        }
    }

    #[test]
    fn dotted_names_and_numbers_stay_whole() {
        use TokenKind::*;
        assert_eq!(
            significant("my.var <- .5e-3 + 1.25L + 0x1F + .hidden"),
            vec![
                (Identifier, "my.var".into()),
                (AssignOp, "<-".into()),
                (Number, ".5e-3".into()),
                (ArithmeticOp, "+".into()),
                (Number, "1.25L".into()),
                (ArithmeticOp, "+".into()),
                (Number, "0x1F".into()),
                (ArithmeticOp, "+".into()),
                (Identifier, ".hidden".into()),
            ]
        );
        assert_eq!(significant("y ~ .")[2], (Period, ".".into()));
    }

    #[test]
    fn keywords_need_exact_match() {
        for kw in KEYWORDS {
            assert_eq!(significant(kw), vec![(TokenKind::Keyword, kw.to_string())]);
        }
        assert_eq!(significant("TRUEx")[0].0, TokenKind::Identifier);
        assert_eq!(significant("iffy")[0].0, TokenKind::Identifier);
    }

    #[test]
    fn escaped_quotes_and_mixed_quotes() {
        let toks = significant(r#"x <- "say \"hi\" # not" # real"#);
        assert_eq!(toks[2], (TokenKind::String, r#""say \"hi\" # not""#.into()));
        assert_eq!(toks[3], (TokenKind::Comment, "# real".into()));
        let toks = significant(r#"'it"s'"#);
        assert_eq!(toks, vec![(TokenKind::String, r#"'it"s'"#.into())]);
    }

    #[test]
    fn unterminated_string_warns_and_keeps_going() {
        let lexed = lex("x <- \"open\ny <- 2");
        assert_eq!(
            lexed.warnings,
            vec![LexWarning::UnterminatedString { line: 0 }]
        );
        let kinds: Vec<TokenKind> = lexed.tokens.iter().map(|t| t.kind).collect();
        assert_eq!(kinds.last(), Some(&TokenKind::String));
        assert_eq!(lexed.tokens.iter().filter(|t| t.line == 1).count(), 1);
    }

    #[test]
    fn string_spanning_lines_closes() {
        let lexed = lex("s <- \"a\nb\" ; z");
        assert!(lexed.warnings.is_empty());
        let second: Vec<&Token> = lexed.line_tokens(1).collect();
        assert_eq!(second[0].kind, TokenKind::String);
        assert_eq!(second[0].text, "b\"");
        assert_eq!(second.last().unwrap().text, "z");
    }

    #[test]
    fn depth_tracks_brackets_across_lines() {
        let lexed = lex("df[x,\n  f(a)]");
        let a = lexed.tokens.iter().find(|t| t.text == "a").unwrap();
        assert_eq!((a.depth_paren, a.depth_bracket), (1, 1));
        let close = lexed.tokens.iter().find(|t| t.text == "]").unwrap();
        assert_eq!(close.depth_bracket, 1);
        assert_eq!(close.depth_paren, 0);
    }

    #[test]
    fn crlf_is_normalized() {
        let src = SourceFile::new("t.R", "a <- 1\r\nb <- 2\r\n");
        assert_eq!(src.lines, vec!["a <- 1", "b <- 2"]);
        assert_eq!(src.text, "a <- 1\nb <- 2\n");
        assert_eq!(SourceFile::new("e.R", "").line_count(), 0);
        assert_eq!(SourceFile::new("b.R", "\n").lines, vec![""]);
    }

    #[test]
    fn string_value_unquotes() {
        let toks = lex(r#"read.csv("data/in\"put.csv")"#).tokens;
        let s = toks.iter().find(|t| t.kind == TokenKind::String).unwrap();
        assert_eq!(s.string_value().unwrap(), "data/in\"put.csv");
    }

    fn line_strategy() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                "[a-zA-Z_. ]{0,6}",
                Just("<-".to_string()),
                Just("\"s#\\\"x\"".to_string()),
                Just("'q'".to_string()),
                Just("# c \"".to_string()),
                Just("%in%".to_string()),
                Just("(".to_string()),
                Just("]".to_string()),
                "[0-9.eEL]{1,4}",
                "[-+*/^=<>!&|:,;{}\\[\\]()$@~?\\t]{1,3}",
            ],
            0..8,
        )
        .prop_map(|parts| parts.concat())
    }

    proptest! {
        #[test]
        fn round_trip_reproduces_lines(lines in proptest::collection::vec(line_strategy(), 1..6)) {
            let src = SourceFile::new("p.R", &lines.join("\n"));
            let lexed = tokenize(&src);
            for (i, line) in src.lines.iter().enumerate() {
                let joined: String = lexed.line_tokens(i).map(|t| t.text.as_str()).collect();
                prop_assert_eq!(&joined, line);
            }
            for w in lexed.tokens.windows(2) {
                prop_assert!((w[0].line, w[0].col) < (w[1].line, w[1].col));
            }
        }

        #[test]
        fn comment_tail_is_opaque(prefix in "[a-z ]{0,8}( <- [0-9])?", tail in "[ -~]{0,20}") {
            let base = SourceFile::new("c.R", &format!("{prefix}#"));
            let edited = SourceFile::new("c.R", &format!("{prefix}#{tail}"));
            let a = tokenize(&base).tokens;
            let b = tokenize(&edited).tokens;
            prop_assert_eq!(a.len(), b.len());
            let last = b.last().unwrap();
            prop_assert_eq!(last.kind, TokenKind::Comment);
            prop_assert_eq!(&a[..a.len() - 1], &b[..b.len() - 1]);
        }

        #[test]
        fn string_contents_are_one_token(body in "[^\"\\\\\n]{0,20}") {
            let toks = tokenize(&SourceFile::new("s.R", &format!("x <- \"{body}\""))).tokens;
            let strings: Vec<&Token> = toks.iter().filter(|t| t.kind == TokenKind::String).collect();
            prop_assert_eq!(strings.len(), 1);
            prop_assert_eq!(strings[0].text.clone(), format!("\"{body}\""));
        }
    }
}
