// SPDX-License-Identifier: Apache-2.0

use crate::error::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub line: usize,
    pub column: usize,
}

/// Words that can never be used as identifiers.
pub const RESERVED: &[&str] = &[
    "AND", "AS", "BEGIN", "BY", "CALL", "DECLARE", "DELETE", "ELSE", "ELSIF", "END", "EXTERNAL", "FALSE", "FOR",
    "FROM", "GROUP", "IF", "IN", "INNER", "INSERT", "INTO", "JOIN", "LOOP", "NOT", "NULL", "ON", "OR", "PROC", "RAISE",
    "RETURN", "SELECT", "SET", "THEN", "TRUE", "UPDATE", "VALUES", "WHERE",
];

pub fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|r| r.eq_ignore_ascii_case(word))
}

impl Token {
    pub fn describe(&self) -> String {
        match &self.kind {
            TokenKind::Ident(s) if is_reserved(s) => format!("keyword {}", s.to_ascii_uppercase()),
            TokenKind::Ident(s) => format!("identifier {s}"),
            TokenKind::Int(i) => format!("integer {i}"),
            TokenKind::Float(f) => format!("number {f}"),
            TokenKind::Str(s) => format!("string '{s}'"),
            TokenKind::Sym(s) => format!("'{s}'"),
            TokenKind::Eof => "end of input".to_owned(),
        }
    }
}

const SYMBOLS: &[&str] = &[
    "!=", "<>", "<=", ">=", "(", ")", ",", ";", ".", ":", "=", "<", ">", "+", "-", "*", "/",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    let err = |line, column, expected: &str, found: String| ParseError {
        line,
        column,
        expected: vec![expected.to_owned()],
        found,
    };

    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        let start = i;
        let kind = if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            TokenKind::Ident(src[start..i].to_owned())
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_float = false;
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                is_float = true;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    is_float = true;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            if is_float {
                let f: f64 = text
                    .parse()
                    .map_err(|_| err(start_line, start_col, "number", text.to_owned()))?;
                if !f.is_finite() {
                    return Err(err(start_line, start_col, "finite number", text.to_owned()));
                }
                TokenKind::Float(f)
            } else {
                let v: i64 = text
                    .parse()
                    .map_err(|_| err(start_line, start_col, "64-bit integer", text.to_owned()))?;
                TokenKind::Int(v)
            }
        } else if c == b'\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match src[i..].chars().next() {
                    None => return Err(err(start_line, start_col, "closing quote", "end of input".into())),
                    Some('\'') if bytes.get(i + 1) == Some(&b'\'') => {
                        s.push('\'');
                        i += 2;
                    }
                    Some('\'') => {
                        i += 1;
                        break;
                    }
                    Some(ch) => {
                        if ch == '\n' {
                            line += 1;
                        }
                        s.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            TokenKind::Str(s)
        } else if let Some(sym) = SYMBOLS.iter().find(|s| bytes[i..].starts_with(s.as_bytes())) {
            i += sym.len();
            TokenKind::Sym(if *sym == "<>" { "!=" } else { sym })
        } else {
            let ch = src[i..].chars().next().unwrap_or('?');
            return Err(err(line, col, "token", format!("{ch:?}")));
        };
        col += src[start..i].chars().count();
        tokens.push(Token {
            kind,
            line: start_line,
            column: start_col,
        });
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        line,
        column: col,
    });
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn numbers_and_symbols() {
        assert_eq!(
            kinds("x<=1.5 <> 2e3"),
            vec![
                TokenKind::Ident("x".into()),
                TokenKind::Sym("<="),
                TokenKind::Float(1.5),
                TokenKind::Sym("!="),
                TokenKind::Float(2000.0),
                TokenKind::Eof
            ]
        );
    }

    #[test]
    fn qualified_name_is_three_tokens() {
        assert_eq!(kinds("a.b").len(), 4);
        assert_eq!(kinds("1.x")[0], TokenKind::Int(1));
    }

    #[test]
    fn string_escape_and_comment() {
        assert_eq!(
            kinds("'it''s' -- trailing\n;"),
            vec![TokenKind::Str("it's".into()), TokenKind::Sym(";"), TokenKind::Eof]
        );
    }

    #[test]
    fn positions_track_lines() {
        let toks = tokenize("a\n  b").unwrap();
        assert_eq!((toks[1].line, toks[1].column), (2, 3));
    }

    #[test]
    fn errors() {
        assert!(tokenize("'open").is_err());
        assert!(tokenize("99999999999999999999").is_err());
        assert!(tokenize("a # b").is_err());
    }
}
