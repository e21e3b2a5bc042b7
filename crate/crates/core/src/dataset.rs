//! Row tables, pre-computed embedding stores and data slices.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value as Json};

use crate::error::{Error, Result};
use crate::query::{parse_predicates, Comparator, Literal, Predicate};

pub type RowId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Int,
    Float,
    Text,
    Bool,
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColumnType::Int => "int",
            ColumnType::Float => "float",
            ColumnType::Text => "text",
            ColumnType::Bool => "bool",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    fn column_type(&self) -> Option<ColumnType> {
        match self {
            Value::Null => None,
            Value::Bool(_) => Some(ColumnType::Bool),
            Value::Int(_) => Some(ColumnType::Int),
            Value::Float(_) => Some(ColumnType::Float),
            Value::Text(_) => Some(ColumnType::Text),
        }
    }

    fn to_json(&self) -> Json {
        match self {
            Value::Null => Json::Null,
            Value::Bool(b) => Json::Bool(*b),
            Value::Int(v) => Json::Number((*v).into()),
            Value::Float(v) => Number::from_f64(*v).map_or(Json::Null, Json::Number),
            Value::Text(s) => Json::String(s.clone()),
        }
    }

    fn from_json(v: &Json) -> std::result::Result<Value, String> {
        Ok(match v {
            Json::Null => Value::Null,
            Json::Bool(b) => Value::Bool(*b),
            Json::Number(n) => match n.as_i64() {
                Some(i) => Value::Int(i),
                None => Value::Float(n.as_f64().ok_or("number out of range")?),
            },
            Json::String(s) => Value::Text(s.clone()),
            Json::Array(_) | Json::Object(_) => return Err("nested values are not supported".into()),
        })
    }
}

/// Ordered column list. The `id` column is always first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    columns: Vec<(String, ColumnType)>,
}

impl Schema {
    pub fn new(columns: Vec<(String, ColumnType)>) -> Self {
        Schema { columns }
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, ColumnType)> {
        self.columns.iter().map(|(n, t)| (n.as_str(), *t))
    }

    pub fn lookup(&self, name: &str) -> Option<(&str, ColumnType)> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(n, t)| (n.as_str(), *t))
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|(n, _)| n == name)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Jsonl,
    Csv,
}

impl TableFormat {
    pub fn from_path(path: &Path) -> TableFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TableFormat::Csv,
            _ => TableFormat::Jsonl,
        }
    }
}

/// Immutable row store. Every row carries one value per schema column.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    schema: Schema,
    ids: Vec<RowId>,
    rows: Vec<Vec<Value>>,
    index: HashMap<RowId, usize>,
}

impl Table {
    /// Build a table from rows keyed by column name. Missing columns become null.
    pub fn from_rows(
        name: impl Into<String>,
        schema: Schema,
        rows: Vec<(RowId, Vec<Value>)>,
    ) -> Result<Table> {
        let mut t = Table {
            name: name.into(),
            schema,
            ids: Vec::with_capacity(rows.len()),
            rows: Vec::with_capacity(rows.len()),
            index: HashMap::with_capacity(rows.len()),
        };
        for (line, (id, values)) in rows.into_iter().enumerate() {
            if values.len() != t.schema.len() {
                return Err(Error::invalid(format!(
                    "row {id} has {} values, schema has {}",
                    values.len(),
                    t.schema.len()
                )));
            }
            if t.index.insert(id, t.ids.len()).is_some() {
                return Err(Error::DuplicateId { id, line: line + 1 });
            }
            t.ids.push(id);
            t.rows.push(values);
        }
        Ok(t)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[RowId] {
        &self.ids
    }

    pub fn contains(&self, id: RowId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn value(&self, id: RowId, column: &str) -> Option<&Value> {
        let row = *self.index.get(&id)?;
        let col = self.schema.position(column)?;
        Some(&self.rows[row][col])
    }

    /// Text cells of `column` for the given ids; errors on unknown ids or non-text cells.
    pub fn texts(&self, column: &str, ids: &[RowId]) -> Result<Vec<String>> {
        let col = self
            .schema
            .position(column)
            .ok_or_else(|| Error::UnknownColumn(column.to_string()))?;
        ids.iter()
            .map(|id| {
                let row = self
                    .index
                    .get(id)
                    .ok_or_else(|| Error::invalid(format!("unknown row id {id}")))?;
                match &self.rows[*row][col] {
                    Value::Text(s) => Ok(s.clone()),
                    Value::Null => Ok(String::new()),
                    other => Err(Error::TypeMismatch(format!(
                        "row {id}: `{column}` holds {other:?}, expected text"
                    ))),
                }
            })
            .collect()
    }

    /// Ids of rows satisfying every predicate, in table order.
    pub fn filter(&self, preds: &[Predicate]) -> Result<Vec<RowId>> {
        let mut cols = Vec::with_capacity(preds.len());
        for p in preds {
            let pos = self
                .schema
                .position(&p.column)
                .ok_or_else(|| Error::UnknownColumn(p.column.clone()))?;
            check_comparable(self.schema.columns[pos].1, p)?;
            cols.push(pos);
        }
        let mut out = Vec::new();
        for (row, id) in self.rows.iter().zip(&self.ids) {
            if preds
                .iter()
                .zip(&cols)
                .all(|(p, &c)| predicate_holds(p, &row[c]))
            {
                out.push(*id);
            }
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for row in &self.rows {
            let mut obj = Map::new();
            for ((name, _), v) in self.schema.columns.iter().zip(row) {
                obj.insert(name.clone(), v.to_json());
            }
            serde_json::to_writer(&mut w, &Json::Object(obj))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_comparable(ty: ColumnType, p: &Predicate) -> Result<()> {
    let ok = match (&p.literal, ty) {
        (Literal::Null, _) => matches!(p.op, Comparator::Eq | Comparator::Ne),
        (Literal::Int(_) | Literal::Float(_), ColumnType::Int | ColumnType::Float) => true,
        (Literal::Str(_), ColumnType::Text) => true,
        (Literal::Bool(_), ColumnType::Bool) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::TypeMismatch(format!(
            "cannot compare {ty} column `{}` with {:?}",
            p.column, p.literal
        )))
    }
}

fn predicate_holds(p: &Predicate, v: &Value) -> bool {
    use std::cmp::Ordering;
    let ord: Option<Ordering> = match (v, &p.literal) {
        (Value::Null, Literal::Null) => Some(Ordering::Equal),
        (Value::Null, _) => None,
        (_, Literal::Null) => Some(Ordering::Greater),
        (Value::Int(a), Literal::Int(b)) => Some(a.cmp(b)),
        (Value::Int(a), Literal::Float(b)) => (*a as f64).partial_cmp(b),
        (Value::Float(a), Literal::Int(b)) => a.partial_cmp(&(*b as f64)),
        (Value::Float(a), Literal::Float(b)) => a.partial_cmp(b),
        (Value::Text(a), Literal::Str(b)) => Some(a.as_str().cmp(b.as_str())),
        (Value::Bool(a), Literal::Bool(b)) => Some(a.cmp(b)),
        _ => None,
    };
    ord.is_some_and(|o| p.op.holds(o))
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn widen(current: Option<ColumnType>, seen: ColumnType) -> std::result::Result<ColumnType, String> {
    match (current, seen) {
        (None, t) => Ok(t),
        (Some(a), b) if a == b => Ok(a),
        (Some(ColumnType::Int), ColumnType::Float) | (Some(ColumnType::Float), ColumnType::Int) => {
            Ok(ColumnType::Float)
        }
        (Some(a), b) => Err(format!("expected {a}, found {b}")),
    }
}

/// Load a table. The table name is the file stem.
pub fn load_table(path: &Path, format: TableFormat) -> Result<Table> {
    let records = match format {
        TableFormat::Jsonl => read_jsonl_records(path)?,
        TableFormat::Csv => read_csv_records(path)?,
    };
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("table")
        .to_string();
    build_table(path, name, records)
}

type Record = (usize, Vec<(String, Value)>);

fn read_jsonl_records(path: &Path) -> Result<Vec<Record>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Map<String, Json> = serde_json::from_str(&line)
            .map_err(|e| malformed(path, lineno, format!("invalid JSON object: {e}")))?;
        let mut fields = Vec::with_capacity(obj.len());
        for (k, v) in &obj {
            let v = Value::from_json(v).map_err(|m| malformed(path, lineno, format!("`{k}`: {m}")))?;
            fields.push((k.clone(), v));
        }
        out.push((lineno, fields));
    }
    Ok(out)
}

fn read_csv_records(path: &Path) -> Result<Vec<Record>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| malformed(path, 1, e.to_string()))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut raw: Vec<(usize, Vec<String>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let lineno = i + 2;
        let rec = rec.map_err(|e| malformed(path, lineno, e.to_string()))?;
        raw.push((lineno, rec.iter().map(str::to_string).collect()));
    }
    // Infer one type per column from every non-empty cell.
    let infer = |cells: &mut dyn Iterator<Item = &str>| -> ColumnType {
        let mut ty: Option<ColumnType> = None;
        for c in cells.filter(|c| !c.is_empty()) {
            let t = if c.parse::<i64>().is_ok() {
                ColumnType::Int
            } else if c.parse::<f64>().is_ok() {
                ColumnType::Float
            } else if c.eq_ignore_ascii_case("true") || c.eq_ignore_ascii_case("false") {
                ColumnType::Bool
            } else {
                ColumnType::Text
            };
            ty = Some(match widen(ty, t) {
                Ok(t) => t,
                Err(_) => return ColumnType::Text,
            });
        }
        ty.unwrap_or(ColumnType::Text)
    };
    let types: Vec<ColumnType> = (0..headers.len())
        .map(|c| infer(&mut raw.iter().map(|(_, r)| r[c].as_str())))
        .collect();
    Ok(raw
        .into_iter()
        .map(|(lineno, cells)| {
            let fields = headers
                .iter()
                .zip(&types)
                .zip(cells)
                .map(|((h, t), c)| {
                    let v = if c.is_empty() {
                        Value::Null
                    } else {
                        match t {
                            ColumnType::Int => Value::Int(c.parse().unwrap()),
                            ColumnType::Float => Value::Float(c.parse().unwrap()),
                            ColumnType::Bool => Value::Bool(c.eq_ignore_ascii_case("true")),
                            ColumnType::Text => Value::Text(c),
                        }
                    };
                    (h.clone(), v)
                })
                .collect();
            (lineno, fields)
        })
        .collect())
}

fn build_table(path: &Path, name: String, records: Vec<Record>) -> Result<Table> {
    let synthesize_ids = records
        .first()
        .is_none_or(|(_, f)| !f.iter().any(|(k, _)| k == "id"));

    let mut columns: Vec<(String, Option<ColumnType>)> = vec![("id".into(), Some(ColumnType::Int))];
    let mut positions: HashMap<String, usize> = HashMap::from([("id".to_string(), 0)]);
    for (lineno, fields) in &records {
        for (k, v) in fields {
            let pos = *positions.entry(k.clone()).or_insert_with(|| {
                columns.push((k.clone(), None));
                columns.len() - 1
            });
            if let Some(t) = v.column_type() {
                columns[pos].1 = Some(
                    widen(columns[pos].1, t)
                        .map_err(|m| malformed(path, *lineno, format!("column `{k}`: {m}")))?,
                );
            }
        }
    }
    let schema = Schema::new(
        columns
            .into_iter()
            .map(|(n, t)| (n, t.unwrap_or(ColumnType::Text)))
            .collect(),
    );

    let mut rows = Vec::with_capacity(records.len());
    let mut seen = HashSet::with_capacity(records.len());
    for (ordinal, (lineno, fields)) in records.into_iter().enumerate() {
        let mut values = vec![Value::Null; schema.len()];
        for (k, v) in fields {
            let pos = positions[&k];
            values[pos] = match (schema.columns[pos].1, v) {
                (ColumnType::Float, Value::Int(i)) => Value::Float(i as f64),
                (_, v) => v,
            };
        }
        let id = if synthesize_ids {
            if !matches!(values[0], Value::Null) {
                return Err(malformed(path, lineno, "`id` present on some rows but not the first"));
            }
            values[0] = Value::Int(ordinal as i64);
            ordinal as RowId
        } else {
            match values[0] {
                Value::Int(i) if i >= 0 => i as RowId,
                _ => return Err(malformed(path, lineno, "`id` must be a non-negative integer")),
            }
        };
        if !seen.insert(id) {
            return Err(Error::DuplicateId { id, line: lineno });
        }
        rows.push((id, values));
    }
    Table::from_rows(name, schema, rows)
}

/// Pre-computed embeddings keyed by row id, stored as 32-bit floats.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<RowId>,
    data: Vec<f32>,
    index: HashMap<RowId, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(EmbeddingStore {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    /// Insert or replace the vector for `id`.
    pub fn insert(&mut self, id: RowId, vec: &[f32]) -> Result<()> {
        if vec.len() != self.dim {
            return Err(Error::MixedDimensions {
                expected: self.dim,
                found: vec.len(),
                id,
            });
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(id));
        }
        match self.index.get(&id) {
            Some(&row) => self.data[row * self.dim..(row + 1) * self.dim].copy_from_slice(vec),
            None => {
                self.index.insert(id, self.ids.len());
                self.ids.push(id);
                self.data.extend_from_slice(vec);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[RowId] {
        &self.ids
    }

    pub fn get(&self, id: RowId) -> Option<&[f32]> {
        let row = *self.index.get(&id)?;
        Some(&self.data[row * self.dim..(row + 1) * self.dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (RowId, &[f32])> {
        self.ids.iter().copied().zip(self.data.chunks_exact(self.dim))
    }

    /// Number of stored ids that have no row in `table`.
    pub fn unmatched_ids(&self, table: &Table) -> usize {
        self.ids.iter().filter(|id| !table.contains(**id)).count()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Rec<'a> {
            id: RowId,
            vec: &'a [f32],
        }
        let mut w = BufWriter::new(File::create(path)?);
        for (id, vec) in self.iter() {
            serde_json::to_writer(&mut w, &Rec { id, vec })?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    id: RowId,
    vec: Vec<Option<f64>>,
}

/// Load `{"id": int, "vec": [floats]}` records.
pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingStore> {
    let reader = BufReader::new(File::open(path)?);
    let mut store: Option<EmbeddingStore> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                // Non-standard NaN / Infinity tokens are reported as non-finite values.
                let patched = line
                    .replace("-Infinity", "null")
                    .replace("Infinity", "null")
                    .replace("NaN", "null");
                match serde_json::from_str::<EmbeddingRecord>(&patched) {
                    Ok(r) => return Err(Error::NonFinite(r.id)),
                    Err(_) => return Err(malformed(path, lineno, e.to_string())),
                }
            }
        };
        let vec: Vec<f32> = rec
            .vec
            .iter()
            .map(|v| v.map(|x| x as f32).unwrap_or(f32::NAN))
            .collect();
        let s = match &mut store {
            Some(s) => s,
            None => {
                let dim = vec.len();
                if let Some(exp) = expected_dim {
                    if exp != dim {
                        return Err(Error::DimensionMismatch {
                            expected: exp,
                            found: dim,
                        });
                    }
                }
                store.insert(
                    EmbeddingStore::new(dim).map_err(|e| malformed(path, lineno, e.to_string()))?,
                )
            }
        };
        if s.index.contains_key(&rec.id) {
            return Err(Error::DuplicateId {
                id: rec.id,
                line: lineno,
            });
        }
        s.insert(rec.id, &vec)?;
    }
    match store {
        Some(s) => Ok(s),
        None => Err(malformed(path, 0, "no embedding records")),
    }
}

/// Named relational predicate over a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub name: String,
    #[serde(rename = "where", with = "predicate_text")]
    pub predicate: Vec<Predicate>,
}

mod predicate_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::query::{format_predicate, parse_predicates, Predicate};

    pub fn serialize<S: Serializer>(preds: &[Predicate], s: S) -> Result<S::Ok, S::Error> {
        let parts: Vec<String> = preds.iter().map(format_predicate).collect();
        s.serialize_str(&parts.join(" AND "))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Predicate>, D::Error> {
        let text = String::deserialize(d)?;
        parse_predicates(&text).map_err(serde::de::Error::custom)
    }
}

impl Slice {
    pub fn new(name: impl Into<String>, predicate_text: &str) -> Result<Slice> {
        Ok(Slice {
            name: name.into(),
            predicate: parse_predicates(predicate_text)?,
        })
    }
}

/// A set of slices, optionally declared to partition the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceFamily {
    #[serde(default)]
    pub partition: bool,
    pub slices: Vec<Slice>,
}

impl SliceFamily {
    pub fn load(path: &Path) -> Result<SliceFamily> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    /// Apply every slice; when `partition` is set, verify disjointness and coverage.
    pub fn apply(&self, table: &Table) -> Result<Vec<Vec<RowId>>> {
        let members: Vec<Vec<RowId>> = self
            .slices
            .iter()
            .map(|s| apply_slice(table, s))
            .collect::<Result<_>>()?;
        if self.partition {
            let mut owner: HashMap<RowId, usize> = HashMap::with_capacity(table.len());
            for (i, ids) in members.iter().enumerate() {
                for id in ids {
                    if let Some(prev) = owner.insert(*id, i) {
                        return Err(Error::invalid(format!(
                            "slices `{}` and `{}` overlap on row {id}",
                            self.slices[prev].name, self.slices[i].name
                        )));
                    }
                }
            }
            if let Some(id) = table.ids().iter().find(|id| !owner.contains_key(id)) {
                return Err(Error::invalid(format!("row {id} is not covered by any slice")));
            }
        }
        Ok(members)
    }
}

/// Ids of rows satisfying the slice predicate, in table order.
pub fn apply_slice(table: &Table, slice: &Slice) -> Result<Vec<RowId>> {
    table.filter(&slice.predicate)
}
