//! Seeded CSV generator for workload databases.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::value::ColumnType;
use super::DbError;

pub const LCG_MULTIPLIER: u64 = 6364136223846793005;
pub const LCG_INCREMENT: u64 = 1442695040888963407;

/// 64-bit LCG; each draw is the top 31 bits of the advanced state.
#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Lcg { state: seed }
    }

    pub fn draw(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(LCG_MULTIPLIER).wrapping_add(LCG_INCREMENT);
        self.state >> 33
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    /// Int columns draw from `0..range`.
    #[serde(default)]
    pub range: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub rows: u64,
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub tokens: Vec<String>,
    pub tables: Vec<TableSpec>,
}

impl DatasetSpec {
    pub fn from_toml(text: &str) -> Result<Self, DbError> {
        let spec: DatasetSpec = toml::from_str(text).map_err(|e| DbError::Load(format!("dataset spec: {e}")))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, DbError> {
        let text = fs::read_to_string(path).map_err(|e| DbError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn check(&self) -> Result<(), DbError> {
        let needs_tokens = self
            .tables
            .iter()
            .flat_map(|t| &t.columns)
            .any(|c| c.ty == ColumnType::Text);
        if needs_tokens && self.tokens.is_empty() {
            return Err(DbError::Load(
                "dataset spec: text columns need a non-empty token list".into(),
            ));
        }
        for table in &self.tables {
            for col in &table.columns {
                if col.ty == ColumnType::Int && !col.range.is_some_and(|r| r > 0) {
                    return Err(DbError::Load(format!(
                        "dataset spec: int column {}.{} needs range >= 1",
                        table.name, col.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Renders every table as CSV text, keyed by table name.
pub fn generate_dataset(seed: u64, spec: &DatasetSpec) -> Result<BTreeMap<String, String>, DbError> {
    spec.check()?;
    let mut rng = Lcg::new(seed);
    let mut out = BTreeMap::new();
    for table in &spec.tables {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let header: Vec<String> = table.columns.iter().map(|c| format!("{}:{}", c.name, c.ty)).collect();
        writer.write_record(&header).map_err(|e| DbError::Io(e.to_string()))?;
        let mut record = Vec::with_capacity(table.columns.len());
        for _ in 0..table.rows {
            record.clear();
            for col in &table.columns {
                let draw = rng.draw();
                record.push(match col.ty {
                    ColumnType::Int => (draw % col.range.unwrap_or(1)).to_string(),
                    ColumnType::Text => spec.tokens[(draw % spec.tokens.len() as u64) as usize].clone(),
                });
            }
            writer.write_record(&record).map_err(|e| DbError::Io(e.to_string()))?;
        }
        let bytes = writer.into_inner().map_err(|e| DbError::Io(e.to_string()))?;
        out.insert(
            table.name.clone(),
            String::from_utf8(bytes).expect("csv of utf-8 fields"),
        );
    }
    Ok(out)
}

/// Writes `<table>.csv` files into `dir`.
pub fn write_dataset(dir: &Path, seed: u64, spec: &DatasetSpec) -> Result<Vec<String>, DbError> {
    fs::create_dir_all(dir).map_err(|e| DbError::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for (name, text) in generate_dataset(seed, spec)? {
        let path = dir.join(format!("{name}.csv"));
        fs::write(&path, text).map_err(|e| DbError::Io(format!("{}: {e}", path.display())))?;
        written.push(name);
    }
    Ok(written)
}
