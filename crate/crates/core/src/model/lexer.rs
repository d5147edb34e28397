use super::{ModelError, ModelErrorKind, Pos};

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Str(String),
    LBrace,
    RBrace,
    Comma,
    Colon,
    Dot,
    Arrow,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Arrow => "`-->`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

/// Splits source into tokens; `//` comments and whitespace are dropped.
pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ModelError> {
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    let (mut line, mut col) = (1u32, 1u32);

    let syntax = |expected: &str, found: String, pos: Pos| {
        ModelError::new(ModelErrorKind::Syntax { expected: vec![expected.to_owned()], found }, pos)
    };

    while let Some(&c) = chars.peek() {
        let pos = Pos::new(line, col);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars<'_>>| {
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        };
        match c {
            c if c.is_whitespace() => {
                bump(&mut chars);
            }
            '/' => {
                bump(&mut chars);
                if chars.peek() != Some(&'/') {
                    let found = chars.peek().map_or("end of input".into(), |c| format!("`{c}`"));
                    return Err(syntax("`//`", found, pos));
                }
                while chars.peek().is_some_and(|&c| c != '\n') {
                    bump(&mut chars);
                }
            }
            '{' | '}' | ',' | ':' | '.' => {
                bump(&mut chars);
                let tok = match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    ',' => Tok::Comma,
                    ':' => Tok::Colon,
                    _ => Tok::Dot,
                };
                out.push(Token { tok, pos });
            }
            '-' => {
                for expect in ['-', '-', '>'] {
                    if chars.peek() != Some(&expect) {
                        let found = chars.peek().map_or("end of input".into(), |c| format!("`{c}`"));
                        return Err(syntax("`-->`", found, pos));
                    }
                    bump(&mut chars);
                }
                out.push(Token { tok: Tok::Arrow, pos });
            }
            '"' => {
                bump(&mut chars);
                let mut s = String::new();
                loop {
                    match bump(&mut chars) {
                        Some('"') => break,
                        Some('\n') | None => {
                            return Err(syntax("closing `\"`", "end of line".into(), pos));
                        }
                        Some(c) => s.push(c),
                    }
                }
                out.push(Token { tok: Tok::Str(s), pos });
            }
            c if is_ident_start(c) => {
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if !is_ident_continue(c) {
                        break;
                    }
                    s.push(c);
                    bump(&mut chars);
                }
                out.push(Token { tok: Tok::Ident(s), pos });
            }
            other => {
                return Err(ModelError::new(
                    ModelErrorKind::Syntax { expected: vec!["a token".into()], found: format!("`{other}`") },
                    pos,
                ));
            }
        }
    }
    out.push(Token { tok: Tok::Eof, pos: Pos::new(line, col) });
    Ok(out)
}
