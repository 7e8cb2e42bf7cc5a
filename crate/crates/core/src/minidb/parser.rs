//! Parser for the engine's SQL subset:
//!
//! ```text
//! SELECT cols FROM t (JOIN t ON qcol = qcol)* (WHERE pred (AND pred)*)? (LIMIT n)? [;]
//! ```

use std::fmt;

use super::value::Value;
use super::DbError;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnRef {
    pub table: Option<String>,
    pub column: String,
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.table {
            Some(t) => write!(f, "{t}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CompareOp {
    Eq,
    Lt,
    Gt,
    Le,
    Ge,
    Ne,
}

impl CompareOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Lt => "<",
            CompareOp::Gt => ">",
            CompareOp::Le => "<=",
            CompareOp::Ge => ">=",
            CompareOp::Ne => "<>",
        }
    }

    pub fn holds(&self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CompareOp::Eq => ord == Equal,
            CompareOp::Lt => ord == Less,
            CompareOp::Gt => ord == Greater,
            CompareOp::Le => ord != Greater,
            CompareOp::Ge => ord != Less,
            CompareOp::Ne => ord != Equal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub column: ColumnRef,
    pub op: CompareOp,
    pub constant: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinClause {
    pub table: String,
    pub left: ColumnRef,
    pub right: ColumnRef,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Projection {
    Star,
    Columns(Vec<ColumnRef>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryAst {
    pub projection: Projection,
    pub base: String,
    pub joins: Vec<JoinClause>,
    pub predicates: Vec<Predicate>,
    pub limit: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Star,
    Comma,
    Dot,
    Semi,
    Op(CompareOp),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    /// 1-based byte offset.
    offset: usize,
}

fn syntax(offset: usize, message: impl Into<String>) -> DbError {
    DbError::Syntax {
        offset,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>, DbError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let offset = i + 1;
        if b.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let tok = if b.is_ascii_alphabetic() || b == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            Tok::Ident(text[start..i].to_string())
        } else if b.is_ascii_digit() || (b == b'-' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let value = text[start..i]
                .parse::<i64>()
                .map_err(|_| syntax(offset, "integer constant out of range"))?;
            Tok::Int(value)
        } else if b == b'\'' {
            let start = i + 1;
            let end = text[start..]
                .find('\'')
                .map(|p| start + p)
                .ok_or_else(|| syntax(offset, "unterminated string constant"))?;
            i = end + 1;
            Tok::Str(text[start..end].to_string())
        } else {
            let two = text.get(i..i + 2).unwrap_or("");
            let (tok, len) = match (b, two) {
                (_, "<=") => (Tok::Op(CompareOp::Le), 2),
                (_, ">=") => (Tok::Op(CompareOp::Ge), 2),
                (_, "<>") => (Tok::Op(CompareOp::Ne), 2),
                (b'<', _) => (Tok::Op(CompareOp::Lt), 1),
                (b'>', _) => (Tok::Op(CompareOp::Gt), 1),
                (b'=', _) => (Tok::Op(CompareOp::Eq), 1),
                (b'*', _) => (Tok::Star, 1),
                (b',', _) => (Tok::Comma, 1),
                (b'.', _) => (Tok::Dot, 1),
                (b';', _) => (Tok::Semi, 1),
                (b'!' | b'~' | b'^', _) => {
                    let op_len = text[i..]
                        .find(|c: char| !"!=<>~^".contains(c))
                        .unwrap_or(text.len() - i);
                    return Err(syntax(offset, format!("unknown operator {:?}", &text[i..i + op_len])));
                }
                _ => {
                    let ch = text[i..].chars().next().unwrap_or('?');
                    return Err(syntax(offset, format!("unexpected character {ch:?}")));
                }
            };
            i += len;
            tok
        };
        tokens.push(Token { tok, offset });
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end_offset: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map(|t| t.offset).unwrap_or(self.end_offset)
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Ident(s), .. }) if s.eq_ignore_ascii_case(kw))
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), DbError> {
        if self.is_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            Err(syntax(self.offset(), format!("expected {kw}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, DbError> {
        match self.peek() {
            Some(Token { tok: Tok::Ident(s), .. }) if !is_reserved(s) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(syntax(self.offset(), format!("expected {what}"))),
        }
    }

    fn column_ref(&mut self) -> Result<ColumnRef, DbError> {
        let first = self.ident("column")?;
        if matches!(self.peek(), Some(Token { tok: Tok::Dot, .. })) {
            self.pos += 1;
            let column = self.ident("column name after '.'")?;
            Ok(ColumnRef {
                table: Some(first),
                column,
            })
        } else {
            Ok(ColumnRef {
                table: None,
                column: first,
            })
        }
    }

    fn projection(&mut self) -> Result<Projection, DbError> {
        if matches!(self.peek(), Some(Token { tok: Tok::Star, .. })) {
            self.pos += 1;
            return Ok(Projection::Star);
        }
        let mut cols = vec![self.column_ref()?];
        while matches!(self.peek(), Some(Token { tok: Tok::Comma, .. })) {
            self.pos += 1;
            cols.push(self.column_ref()?);
        }
        Ok(Projection::Columns(cols))
    }

    fn predicate(&mut self) -> Result<Predicate, DbError> {
        let column = self.column_ref()?;
        let op = match self.peek() {
            Some(Token { tok: Tok::Op(op), .. }) => *op,
            _ => return Err(syntax(self.offset(), "expected comparison operator")),
        };
        self.pos += 1;
        let constant = match self.peek() {
            Some(Token { tok: Tok::Int(v), .. }) => Value::Int(*v),
            Some(Token { tok: Tok::Str(s), .. }) => Value::Text(s.clone()),
            _ => return Err(syntax(self.offset(), "expected constant")),
        };
        self.pos += 1;
        Ok(Predicate { column, op, constant })
    }

    fn query(&mut self) -> Result<QueryAst, DbError> {
        self.expect_keyword("SELECT")?;
        let projection = self.projection()?;
        self.expect_keyword("FROM")?;
        let base = self.ident("table name")?;
        let mut joins = Vec::new();
        while self.is_keyword("JOIN") {
            self.pos += 1;
            let table = self.ident("table name")?;
            self.expect_keyword("ON")?;
            let left = self.column_ref()?;
            match self.peek() {
                Some(Token {
                    tok: Tok::Op(CompareOp::Eq),
                    ..
                }) => self.pos += 1,
                _ => return Err(syntax(self.offset(), "expected '=' in join condition")),
            }
            let right = self.column_ref()?;
            joins.push(JoinClause { table, left, right });
        }
        let mut predicates = Vec::new();
        if self.is_keyword("WHERE") {
            self.pos += 1;
            predicates.push(self.predicate()?);
            while self.is_keyword("AND") {
                self.pos += 1;
                predicates.push(self.predicate()?);
            }
        }
        let mut limit = None;
        while self.is_keyword("LIMIT") {
            let at = self.offset();
            self.pos += 1;
            if limit.is_some() {
                return Err(syntax(at, "duplicate LIMIT"));
            }
            match self.peek() {
                Some(Token { tok: Tok::Int(n), .. }) if *n >= 0 => {
                    limit = Some(*n as u64);
                    self.pos += 1;
                }
                _ => return Err(syntax(self.offset(), "expected non-negative LIMIT count")),
            }
        }
        if matches!(self.peek(), Some(Token { tok: Tok::Semi, .. })) {
            self.pos += 1;
        }
        if self.peek().is_some() {
            return Err(syntax(self.offset(), "unexpected trailing input"));
        }
        Ok(QueryAst {
            projection,
            base,
            joins,
            predicates,
            limit,
        })
    }
}

fn is_reserved(word: &str) -> bool {
    ["SELECT", "FROM", "JOIN", "ON", "WHERE", "AND", "LIMIT"]
        .iter()
        .any(|kw| word.eq_ignore_ascii_case(kw))
}

pub fn parse_query(text: &str) -> Result<QueryAst, DbError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        end_offset: text.len() + 1,
    };
    parser.query()
}
