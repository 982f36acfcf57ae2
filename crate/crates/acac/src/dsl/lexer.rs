//! Line-aware tokenizer shared by the policy and scenario parsers.

use super::{unit_seconds, ParseError, SourceSpan};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokKind {
    Ident(String),
    Number(f64),
    /// Integer with a time unit suffix, already scaled to seconds.
    Duration(u64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Colon,
    Semi,
    Slash,
    Star,
    Bang,
    Eq,
    Ne,
    Lt,
    Gt,
    Arrow,
    DotDot,
    Newline,
    Eof,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub kind: TokKind,
    pub text: String,
    pub line: u32,
    pub col: u32,
}

impl Token {
    pub fn span(&self, file: &str) -> SourceSpan {
        SourceSpan {
            file: file.to_string(),
            line: self.line,
            column: self.col,
            length: (self.text.chars().count() as u32).max(1),
        }
    }

    pub fn ident(&self) -> Option<&str> {
        match &self.kind {
            TokKind::Ident(s) => Some(s),
            _ => None,
        }
    }
}

pub(crate) fn lex(file: &str, text: &str) -> Result<Vec<Token>, Vec<ParseError>> {
    let mut tokens = Vec::new();
    let mut errors = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut line: u32 = 1;
    let mut col: u32 = 1;

    macro_rules! push {
        ($kind:expr, $text:expr, $len:expr) => {{
            tokens.push(Token {
                kind: $kind,
                text: $text,
                line,
                col,
            });
            i += $len;
            col += $len as u32;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                tokens.push(Token {
                    kind: TokKind::Newline,
                    text: "\n".into(),
                    line,
                    col,
                });
                i += 1;
                line += 1;
                col = 1;
            }
            '\r' => {
                // CRLF accepted; the newline token is emitted for the \n
                i += 1;
                col += 1;
            }
            ' ' | '\t' => {
                i += 1;
                col += 1;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                    col += 1;
                }
            }
            '(' => push!(TokKind::LParen, "(".into(), 1),
            ')' => push!(TokKind::RParen, ")".into(), 1),
            ',' => push!(TokKind::Comma, ",".into(), 1),
            ':' => push!(TokKind::Colon, ":".into(), 1),
            ';' => push!(TokKind::Semi, ";".into(), 1),
            '/' => push!(TokKind::Slash, "/".into(), 1),
            '*' => push!(TokKind::Star, "*".into(), 1),
            '<' => push!(TokKind::Lt, "<".into(), 1),
            '>' => push!(TokKind::Gt, ">".into(), 1),
            '=' => push!(TokKind::Eq, "=".into(), 1),
            '!' => {
                if chars.get(i + 1) == Some(&'=') {
                    push!(TokKind::Ne, "!=".into(), 2);
                } else {
                    push!(TokKind::Bang, "!".into(), 1);
                }
            }
            '.' => {
                if chars.get(i + 1) == Some(&'.') {
                    push!(TokKind::DotDot, "..".into(), 2);
                } else {
                    errors.push(ParseError {
                        span: SourceSpan {
                            file: file.to_string(),
                            line,
                            column: col,
                            length: 1,
                        },
                        expected: "a token".into(),
                        found: ".".into(),
                    });
                    i += 1;
                    col += 1;
                }
            }
            '-' => {
                if chars.get(i + 1) == Some(&'>') {
                    push!(TokKind::Arrow, "->".into(), 2);
                } else if chars.get(i + 1).map(|c| c.is_ascii_digit()).unwrap_or(false) {
                    lex_number(file, &chars, &mut i, &mut col, line, &mut tokens, &mut errors);
                } else {
                    errors.push(ParseError {
                        span: SourceSpan {
                            file: file.to_string(),
                            line,
                            column: col,
                            length: 1,
                        },
                        expected: "a token".into(),
                        found: "-".into(),
                    });
                    i += 1;
                    col += 1;
                }
            }
            '"' => {
                let start_col = col;
                let mut s = String::new();
                let mut j = i + 1;
                let mut closed = false;
                while j < chars.len() && chars[j] != '\n' {
                    match chars[j] {
                        '"' => {
                            closed = true;
                            j += 1;
                            break;
                        }
                        '\\' if j + 1 < chars.len() => {
                            s.push(chars[j + 1]);
                            j += 2;
                        }
                        ch => {
                            s.push(ch);
                            j += 1;
                        }
                    }
                }
                let len = j - i;
                if closed {
                    tokens.push(Token {
                        kind: TokKind::Str(s),
                        text: chars[i..j].iter().collect(),
                        line,
                        col: start_col,
                    });
                } else {
                    errors.push(ParseError {
                        span: SourceSpan {
                            file: file.to_string(),
                            line,
                            column: start_col,
                            length: len.max(1) as u32,
                        },
                        expected: "closing `\"`".into(),
                        found: "end of line".into(),
                    });
                }
                i = j;
                col += len as u32;
            }
            c if c.is_ascii_digit() => {
                lex_number(file, &chars, &mut i, &mut col, line, &mut tokens, &mut errors);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                let start_col = col;
                let mut j = i + 1;
                while j < chars.len() {
                    let ch = chars[j];
                    if ch.is_ascii_alphanumeric() || ch == '_' {
                        j += 1;
                    } else if ch == '-'
                        && chars
                            .get(j + 1)
                            .map(|n| n.is_ascii_alphanumeric() || *n == '_')
                            .unwrap_or(false)
                    {
                        // hyphen stays inside the identifier only when more
                        // identifier follows, so `owner-of->Speaker` splits
                        // into `owner-of`, `->`, `Speaker`
                        j += 2;
                    } else {
                        break;
                    }
                }
                let word: String = chars[start..j].iter().collect();
                col = start_col + (j - start) as u32;
                i = j;
                tokens.push(Token {
                    kind: TokKind::Ident(word.clone()),
                    text: word,
                    line,
                    col: start_col,
                });
            }
            other => {
                errors.push(ParseError {
                    span: SourceSpan {
                        file: file.to_string(),
                        line,
                        column: col,
                        length: 1,
                    },
                    expected: "a token".into(),
                    found: other.to_string(),
                });
                i += 1;
                col += 1;
            }
        }
    }

    let (eof_line, eof_col) = match tokens.last() {
        Some(t) => (t.line, t.col),
        None => (1, 1),
    };
    tokens.push(Token {
        kind: TokKind::Eof,
        text: "end of input".into(),
        line: eof_line,
        col: eof_col,
    });

    if errors.is_empty() {
        Ok(tokens)
    } else {
        Err(errors)
    }
}

fn lex_number(
    file: &str,
    chars: &[char],
    i: &mut usize,
    col: &mut u32,
    line: u32,
    tokens: &mut Vec<Token>,
    errors: &mut Vec<ParseError>,
) {
    let start = *i;
    let start_col = *col;
    let mut j = *i;
    if chars[j] == '-' {
        j += 1;
    }
    while j < chars.len() && chars[j].is_ascii_digit() {
        j += 1;
    }
    // a lone `.` starts a fraction; `..` is the range operator
    if j < chars.len() && chars[j] == '.' && chars.get(j + 1) != Some(&'.') {
        j += 1;
        while j < chars.len() && chars[j].is_ascii_digit() {
            j += 1;
        }
    }
    let digits: String = chars[start..j].iter().collect();
    let unit = chars.get(j).copied().and_then(|c| {
        if digits.contains('.') || digits.starts_with('-') {
            None
        } else {
            unit_seconds(c).filter(|_| {
                // the unit letter must end the token: `2h` is a duration,
                // `2hr` would be a stray identifier
                chars
                    .get(j + 1)
                    .map(|n| !(n.is_ascii_alphanumeric() || *n == '_' || *n == '-'))
                    .unwrap_or(true)
            })
        }
    });
    if let Some(scale) = unit {
        let value: u64 = digits.parse().unwrap_or(0);
        let text: String = chars[start..=j].iter().collect();
        let len = text.chars().count();
        tokens.push(Token {
            kind: TokKind::Duration(value * scale),
            text,
            line,
            col: start_col,
        });
        *i = j + 1;
        *col = start_col + len as u32;
        return;
    }
    match digits.parse::<f64>() {
        Ok(n) => {
            tokens.push(Token {
                kind: TokKind::Number(n),
                text: digits.clone(),
                line,
                col: start_col,
            });
        }
        Err(_) => errors.push(ParseError {
            span: SourceSpan {
                file: file.to_string(),
                line,
                column: start_col,
                length: digits.chars().count().max(1) as u32,
            },
            expected: "a number".into(),
            found: digits.clone(),
        }),
    }
    *i = j;
    *col = start_col + digits.chars().count() as u32;
}
