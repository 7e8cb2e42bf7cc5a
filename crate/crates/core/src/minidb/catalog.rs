use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::value::{ColumnType, Row, Value};
use super::DbError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: Vec<(&str, ColumnType)>) -> Self {
        Table {
            name: name.into(),
            columns: columns
                .into_iter()
                .map(|(n, ty)| Column {
                    name: n.to_string(),
                    ty,
                })
                .collect(),
            rows: Vec::new(),
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Appends a row after checking it against the schema.
    pub fn push(&mut self, row: Row) -> Result<(), DbError> {
        if row.len() != self.columns.len() || row.iter().zip(&self.columns).any(|(v, c)| v.column_type() != c.ty) {
            return Err(DbError::Load(format!(
                "{}: row {} does not match schema",
                self.name,
                self.rows.len() + 1
            )));
        }
        self.rows.push(row);
        Ok(())
    }
}

/// Tables by name plus their row counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Database {
    tables: BTreeMap<String, Table>,
}

/// Planner statistics: row counts per table.
pub type Stats = BTreeMap<String, u64>;

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_table(&mut self, table: Table) -> Result<(), DbError> {
        if self.tables.contains_key(&table.name) {
            return Err(DbError::Load(format!("duplicate table {}", table.name)));
        }
        self.tables.insert(table.name.clone(), table);
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn tables(&self) -> impl Iterator<Item = &Table> {
        self.tables.values()
    }

    pub fn stats(&self) -> Stats {
        self.tables
            .iter()
            .map(|(name, t)| (name.clone(), t.rows.len() as u64))
            .collect()
    }
}

/// Loads every `<table>.csv` in `dir`. The header names columns as
/// `name:type`; rows are numbered from 1 after the header in errors.
pub fn load_database(dir: &Path) -> Result<Database, DbError> {
    let mut db = Database::new();
    let entries = fs::read_dir(dir).map_err(|e| DbError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.is_file())
        .collect();
    paths.sort();
    for path in paths {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = fs::read_to_string(&path).map_err(|e| DbError::Io(format!("{}: {e}", path.display())))?;
        db.add_table(parse_table(&name, &text)?)?;
    }
    Ok(db)
}

pub fn parse_table(name: &str, text: &str) -> Result<Table, DbError> {
    let err = |msg: String| DbError::Load(format!("{name}.csv: {msg}"));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| err(e.to_string()))?,
        None => return Err(err("missing header".into())),
    };
    let mut columns = Vec::new();
    for field in header.iter() {
        let (col, ty) = field
            .split_once(':')
            .ok_or_else(|| err(format!("header field {field:?} is not name:type")))?;
        let ty = ColumnType::parse(ty).ok_or_else(|| err(format!("unknown column type in {field:?}")))?;
        let col = col.trim();
        if col.is_empty() || columns.iter().any(|c: &Column| c.name == col) {
            return Err(err(format!("bad or duplicate column name {col:?}")));
        }
        columns.push(Column {
            name: col.to_string(),
            ty,
        });
    }
    let mut table = Table {
        name: name.to_string(),
        columns,
        rows: Vec::new(),
    };
    for (idx, record) in records.enumerate() {
        let row_no = idx + 1;
        let record = record.map_err(|e| err(format!("row {row_no}: {e}")))?;
        if record.len() != table.columns.len() {
            return Err(err(format!(
                "row {row_no}: expected {} fields, found {}",
                table.columns.len(),
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(record.len());
        for (field, col) in record.iter().zip(&table.columns) {
            row.push(match col.ty {
                ColumnType::Int => Value::Int(field.trim().parse().map_err(|_| {
                    err(format!(
                        "row {row_no}: value {field:?} is not an int for column {}",
                        col.name
                    ))
                })?),
                ColumnType::Text => Value::Text(field.to_string()),
            });
        }
        table.rows.push(row);
    }
    Ok(table)
}
