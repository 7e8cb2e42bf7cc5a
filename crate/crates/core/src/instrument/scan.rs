//! Lexical scanner that locates `if (...)` conditions in C-like source.
//!
//! Only enough of C is understood to skip comments, string and character
//! literals, and preprocessor directive lines, and to match parentheses.

use serde::{Deserialize, Serialize};

use super::InstrumentError;

/// One flippable IF statement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchSite {
    pub id: u32,
    pub file: String,
    pub line: usize,
    #[serde(rename = "col")]
    pub column: usize,
    #[serde(rename = "cond")]
    pub condition_text: String,
    /// Byte span of the condition (between the parentheses) in the scanned text.
    #[serde(skip)]
    pub span: (usize, usize),
}

// Spans are scanner bookkeeping, not part of a site's identity.
impl PartialEq for BranchSite {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.file == other.file
            && self.line == other.line
            && self.column == other.column
            && self.condition_text == other.condition_text
    }
}

impl Eq for BranchSite {}

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    line_start: usize,
    file: &'a str,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<u8> {
        self.src.get(self.pos + offset).copied()
    }

    fn bump(&mut self) {
        if let Some(b) = self.peek() {
            self.pos += 1;
            if b == b'\n' {
                self.line += 1;
                self.line_start = self.pos;
            }
        }
    }

    fn column(&self, pos: usize) -> usize {
        pos - self.line_start + 1
    }

    fn err(&self, line: usize, message: impl Into<String>) -> InstrumentError {
        InstrumentError::Syntax {
            file: self.file.to_string(),
            line,
            message: message.into(),
        }
    }

    /// True when only whitespace precedes `pos` on its line.
    fn at_line_start(&self) -> bool {
        self.src[self.line_start..self.pos]
            .iter()
            .all(|b| *b == b' ' || *b == b'\t' || *b == b'\x0c' || *b == b'\r')
    }

    /// Skips a comment, literal, or directive at the cursor. Returns false
    /// when the cursor is on ordinary code.
    fn skip_trivia(&mut self) -> Result<bool, InstrumentError> {
        match (self.peek(), self.peek_at(1)) {
            (Some(b'/'), Some(b'/')) => {
                while let Some(b) = self.peek() {
                    if b == b'\n' {
                        break;
                    }
                    // Line splice continues the comment.
                    if b == b'\\' && self.peek_at(1) == Some(b'\n') {
                        self.bump();
                    }
                    self.bump();
                }
                Ok(true)
            }
            (Some(b'/'), Some(b'*')) => {
                let start_line = self.line;
                self.bump();
                self.bump();
                loop {
                    match (self.peek(), self.peek_at(1)) {
                        (Some(b'*'), Some(b'/')) => {
                            self.bump();
                            self.bump();
                            return Ok(true);
                        }
                        (Some(_), _) => self.bump(),
                        (None, _) => return Err(self.err(start_line, "unterminated block comment")),
                    }
                }
            }
            (Some(q @ (b'"' | b'\'')), _) => {
                let start_line = self.line;
                self.bump();
                loop {
                    match self.peek() {
                        Some(b'\\') => {
                            self.bump();
                            self.bump();
                        }
                        Some(b) if b == q => {
                            self.bump();
                            return Ok(true);
                        }
                        Some(b'\n') | None => {
                            let what = if q == b'"' { "string" } else { "character" };
                            return Err(self.err(start_line, format!("unterminated {what} literal")));
                        }
                        Some(_) => self.bump(),
                    }
                }
            }
            (Some(b'#'), _) if self.at_line_start() => {
                self.skip_directive()?;
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    /// Skips to the end of a directive line, honoring line splices and
    /// block comments that span lines.
    fn skip_directive(&mut self) -> Result<(), InstrumentError> {
        while let Some(b) = self.peek() {
            match b {
                b'\n' => break,
                b'\\' if self.peek_at(1) == Some(b'\n') => {
                    self.bump();
                    self.bump();
                }
                b'\\' if self.peek_at(1) == Some(b'\r') && self.peek_at(2) == Some(b'\n') => {
                    self.bump();
                    self.bump();
                    self.bump();
                }
                b'/' if matches!(self.peek_at(1), Some(b'*') | Some(b'/')) => {
                    self.skip_trivia()?;
                }
                b'"' | b'\'' => {
                    // Stray apostrophes are common in #error text; don't fail on them.
                    let save = (self.pos, self.line, self.line_start);
                    if self.skip_trivia().is_err() {
                        (self.pos, self.line, self.line_start) = save;
                        self.bump();
                    }
                }
                _ => self.bump(),
            }
        }
        Ok(())
    }

    fn skip_space_and_comments(&mut self) -> Result<(), InstrumentError> {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => self.bump(),
                Some(b'/') if matches!(self.peek_at(1), Some(b'*') | Some(b'/')) => {
                    self.skip_trivia()?;
                }
                _ => return Ok(()),
            }
        }
    }

    /// With the cursor on `(`, advances past the matching `)` and returns the
    /// position of that closing paren.
    fn match_parens(&mut self, if_line: usize) -> Result<usize, InstrumentError> {
        let mut depth = 0usize;
        loop {
            if self.skip_trivia()? {
                continue;
            }
            match self.peek() {
                Some(b'(') => {
                    depth += 1;
                    self.bump();
                }
                Some(b')') => {
                    depth -= 1;
                    let close = self.pos;
                    self.bump();
                    if depth == 0 {
                        return Ok(close);
                    }
                }
                Some(_) => self.bump(),
                None => return Err(self.err(if_line, "unbalanced parentheses in if condition")),
            }
        }
    }
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Finds every `if (` condition in `source`, assigning ids from `start_id`.
/// Returns the sites and the next unused id.
pub fn scan_branch_sites(source: &str, file: &str, start_id: u32) -> Result<(Vec<BranchSite>, u32), InstrumentError> {
    let mut cur = Cursor {
        src: source.as_bytes(),
        pos: 0,
        line: 1,
        line_start: 0,
        file,
    };
    let mut sites = Vec::new();
    let mut next_id = start_id;

    while let Some(b) = cur.peek() {
        if cur.skip_trivia()? {
            continue;
        }
        if !is_ident_byte(b) {
            cur.bump();
            continue;
        }
        let word_start = cur.pos;
        while cur.peek().is_some_and(is_ident_byte) {
            cur.bump();
        }
        if &cur.src[word_start..cur.pos] != b"if" {
            continue;
        }
        let (line, column) = (cur.line, cur.column(word_start));
        cur.skip_space_and_comments()?;
        if cur.peek() != Some(b'(') {
            continue;
        }
        let open = cur.pos;
        let close = cur.match_parens(line)?;
        sites.push(BranchSite {
            id: next_id,
            file: file.to_string(),
            line,
            column,
            condition_text: source[open + 1..close].to_string(),
            span: (open + 1, close),
        });
        next_id += 1;
    }
    Ok((sites, next_id))
}
