//! Columnar in-memory tables plus CSV / JSON-lines serialization.

use std::cmp::Ordering;
use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::value::{format_number, Field, ScalarType, Schema, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("row {row} has {found} cells, schema has {expected} fields")]
    Arity {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("column '{column}' row {row}: expected {expected}, found {found}")]
    Type {
        column: String,
        row: usize,
        expected: ScalarType,
        found: String,
    },
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("malformed JSON rows: {0}")]
    Json(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Number(Vec<Option<f64>>),
    String(Vec<Option<Arc<str>>>),
    Boolean(Vec<Option<bool>>),
}

impl Column {
    pub fn with_capacity(ty: ScalarType, cap: usize) -> Column {
        match ty {
            ScalarType::Number => Column::Number(Vec::with_capacity(cap)),
            ScalarType::String => Column::String(Vec::with_capacity(cap)),
            ScalarType::Boolean => Column::Boolean(Vec::with_capacity(cap)),
        }
    }

    pub fn scalar_type(&self) -> ScalarType {
        match self {
            Column::Number(_) => ScalarType::Number,
            Column::String(_) => ScalarType::String,
            Column::Boolean(_) => ScalarType::Boolean,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Number(v) => v.len(),
            Column::String(v) => v.len(),
            Column::Boolean(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, row: usize) -> Value {
        match self {
            Column::Number(v) => v[row].map_or(Value::Null, Value::Number),
            Column::String(v) => v[row].clone().map_or(Value::Null, Value::String),
            Column::Boolean(v) => v[row].map_or(Value::Null, Value::Boolean),
        }
    }

    pub fn number(&self, row: usize) -> Option<f64> {
        match self {
            Column::Number(v) => v[row],
            _ => None,
        }
    }

    pub fn push(&mut self, value: Value) -> Result<(), Value> {
        match (self, value) {
            (Column::Number(v), Value::Null) => v.push(None),
            (Column::String(v), Value::Null) => v.push(None),
            (Column::Boolean(v), Value::Null) => v.push(None),
            (Column::Number(v), Value::Number(x)) => v.push(Some(x)),
            (Column::String(v), Value::String(s)) => v.push(Some(s)),
            (Column::Boolean(v), Value::Boolean(b)) => v.push(Some(b)),
            (_, other) => return Err(other),
        }
        Ok(())
    }

    pub fn take(&self, indices: &[usize]) -> Column {
        match self {
            Column::Number(v) => Column::Number(indices.iter().map(|&i| v[i]).collect()),
            Column::String(v) => Column::String(indices.iter().map(|&i| v[i].clone()).collect()),
            Column::Boolean(v) => Column::Boolean(indices.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Builds a column of the given type from values, failing on the first
    /// ill-typed cell (returned as its row index and value).
    pub fn from_values(
        ty: ScalarType,
        values: impl IntoIterator<Item = Value>,
    ) -> Result<Column, (usize, Value)> {
        let iter = values.into_iter();
        let mut col = Column::with_capacity(ty, iter.size_hint().0);
        for (i, v) in iter.enumerate() {
            col.push(v).map_err(|v| (i, v))?;
        }
        Ok(col)
    }
}

/// A schema plus one column per field; every column has `num_rows` cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    schema: Schema,
    columns: Vec<Column>,
    rows: usize,
}

impl Table {
    pub fn empty(schema: Schema) -> Table {
        let columns = schema
            .fields()
            .iter()
            .map(|f| Column::with_capacity(f.ty, 0))
            .collect();
        Table {
            schema,
            columns,
            rows: 0,
        }
    }

    pub fn from_rows<I>(schema: Schema, rows: I) -> Result<Table, TableError>
    where
        I: IntoIterator<Item = Vec<Value>>,
    {
        let mut t = Table::empty(schema);
        for row in rows {
            t.push_row(row)?;
        }
        Ok(t)
    }

    /// Assembles a table from prebuilt columns.
    pub fn from_columns(schema: Schema, columns: Vec<Column>) -> Result<Table, TableError> {
        if schema.len() != columns.len() {
            return Err(TableError::Schema(format!(
                "{} fields but {} columns",
                schema.len(),
                columns.len()
            )));
        }
        let rows = columns.first().map_or(0, Column::len);
        for (f, c) in schema.fields().iter().zip(&columns) {
            if c.scalar_type() != f.ty {
                return Err(TableError::Schema(format!(
                    "column '{}' is {} but field is {}",
                    f.name,
                    c.scalar_type(),
                    f.ty
                )));
            }
            if c.len() != rows {
                return Err(TableError::Schema(format!(
                    "column '{}' has {} cells, expected {rows}",
                    f.name,
                    c.len()
                )));
            }
        }
        Ok(Table {
            schema,
            columns,
            rows,
        })
    }

    pub fn push_row(&mut self, row: Vec<Value>) -> Result<(), TableError> {
        if row.len() != self.columns.len() {
            return Err(TableError::Arity {
                row: self.rows,
                expected: self.columns.len(),
                found: row.len(),
            });
        }
        for (i, v) in row.into_iter().enumerate() {
            if let Err(bad) = self.columns[i].push(v) {
                // roll back the partially pushed row
                for c in &mut self.columns[..i] {
                    truncate(c, self.rows);
                }
                let f = &self.schema.fields()[i];
                return Err(TableError::Type {
                    column: f.name.clone(),
                    row: self.rows,
                    expected: f.ty,
                    found: format!("{bad:?}"),
                });
            }
        }
        self.rows += 1;
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, idx: usize) -> &Column {
        &self.columns[idx]
    }

    pub fn column_by_name(&self, name: &str) -> Result<&Column, TableError> {
        self.schema
            .index_of(name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))
    }

    pub fn value(&self, row: usize, col: usize) -> Value {
        self.columns[col].get(row)
    }

    pub fn row(&self, row: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.get(row)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<Value>> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn take(&self, indices: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.take(indices)).collect(),
            rows: indices.len(),
        }
    }

    /// Replaces the named column in place, or appends it.
    pub fn upsert_column(&mut self, field: Field, column: Column) {
        debug_assert_eq!(column.len(), self.rows);
        debug_assert_eq!(column.scalar_type(), field.ty);
        match self.schema.index_of(&field.name) {
            Some(i) => {
                self.schema.0[i] = field;
                self.columns[i] = column;
            }
            None => {
                self.schema.0.push(field);
                self.columns.push(column);
            }
        }
    }

    pub fn project(&self, names: &[String]) -> Result<Table, TableError> {
        let mut fields = Vec::with_capacity(names.len());
        let mut columns = Vec::with_capacity(names.len());
        for n in names {
            let i = self
                .schema
                .index_of(n)
                .ok_or_else(|| TableError::UnknownColumn(n.clone()))?;
            fields.push(self.schema.fields()[i].clone());
            columns.push(self.columns[i].clone());
        }
        Ok(Table {
            schema: Schema(fields),
            columns,
            rows: self.rows,
        })
    }

    /// Coerces a table produced by a SQL engine to the expected schema:
    /// names must match positionally; numbers 0/1 become booleans where the
    /// schema says boolean; booleans become numbers where it says number.
    pub fn conform(self, expected: &Schema) -> Result<Table, TableError> {
        if self.schema.len() != expected.len() {
            return Err(TableError::Schema(format!(
                "expected columns {:?}, got {:?}",
                expected.names(),
                self.schema.names()
            )));
        }
        let rows = self.rows;
        let mut columns = Vec::with_capacity(expected.len());
        for (i, (col, want)) in self.columns.into_iter().zip(expected.fields()).enumerate() {
            let got = &self.schema.fields()[i];
            if got.name != want.name {
                return Err(TableError::Schema(format!(
                    "column {i}: expected '{}', got '{}'",
                    want.name, got.name
                )));
            }
            let col = match (col, want.ty) {
                (c, t) if c.scalar_type() == t => c,
                (Column::Number(v), ScalarType::Boolean) => {
                    Column::Boolean(v.into_iter().map(|x| x.map(|x| x != 0.0)).collect())
                }
                (Column::Boolean(v), ScalarType::Number) => Column::Number(
                    v.into_iter()
                        .map(|x| x.map(|b| if b { 1.0 } else { 0.0 }))
                        .collect(),
                ),
                (Column::String(v), ScalarType::Number) if v.iter().all(Option::is_none) => {
                    Column::Number(vec![None; v.len()])
                }
                (Column::String(v), ScalarType::Boolean) if v.iter().all(Option::is_none) => {
                    Column::Boolean(vec![None; v.len()])
                }
                (Column::Number(v), ScalarType::String) if v.iter().all(Option::is_none) => {
                    Column::String(vec![None; v.len()])
                }
                (c, t) => {
                    return Err(TableError::Schema(format!(
                        "column '{}' is {} but expected {}",
                        want.name,
                        c.scalar_type(),
                        t
                    )))
                }
            };
            columns.push(col);
        }
        Ok(Table {
            schema: expected.clone(),
            columns,
            rows,
        })
    }

    // ---- CSV ----

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TableError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(self.schema.fields().iter().map(|f| f.name.as_str()))
            .map_err(csv_err)?;
        let mut record = Vec::with_capacity(self.columns.len());
        for r in 0..self.rows {
            record.clear();
            for c in &self.columns {
                record.push(csv_cell(c, r));
            }
            wtr.write_record(&record).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| TableError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Length in bytes of the CSV serialization, computed without buffering it.
    pub fn csv_len(&self) -> u64 {
        let mut counter = ByteCounter(0);
        self.write_csv(&mut counter)
            .expect("counting writer cannot fail");
        counter.0
    }

    /// Parses RFC 4180 CSV with a header row. Types come from `schema` when
    /// given, otherwise they are inferred per column (all-numeric => number,
    /// all true/false => boolean, else string). Empty cells are null.
    pub fn from_csv(bytes: &[u8], schema: Option<&Schema>) -> Result<Table, TableError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(bytes);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(TableError::Csv("missing header row".into()));
        }
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != headers.len() {
                return Err(TableError::Arity {
                    row: i,
                    expected: headers.len(),
                    found: rec.len(),
                });
            }
            for (j, cell) in rec.iter().enumerate() {
                raw[j].push(cell.to_string());
            }
        }
        let fields: Vec<Field> = match schema {
            Some(s) => {
                if s.names() != headers {
                    return Err(TableError::Schema(format!(
                        "CSV header {headers:?} does not match schema {:?}",
                        s.names()
                    )));
                }
                s.fields().to_vec()
            }
            None => headers
                .iter()
                .zip(&raw)
                .map(|(h, cells)| Field::new(h.clone(), infer_type(cells)))
                .collect(),
        };
        let schema = Schema(fields);
        if let Some(dup) = schema.duplicate_name() {
            return Err(TableError::Csv(format!("duplicate column '{dup}'")));
        }
        let mut columns = Vec::with_capacity(raw.len());
        for (f, cells) in schema.fields().iter().zip(raw) {
            columns.push(parse_column(f, cells)?);
        }
        Table::from_columns(schema, columns)
    }

    // ---- JSON rows ----

    pub fn to_json_rows(&self) -> Vec<serde_json::Value> {
        (0..self.rows)
            .map(|r| {
                let mut obj = serde_json::Map::with_capacity(self.columns.len());
                for (f, c) in self.schema.fields().iter().zip(&self.columns) {
                    obj.insert(f.name.clone(), c.get(r).to_json());
                }
                serde_json::Value::Object(obj)
            })
            .collect()
    }

    /// Line-delimited JSON: one object per row.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in self.to_json_rows() {
            out.push_str(&row.to_string());
            out.push('\n');
        }
        out
    }

    /// Builds a table from JSON objects. Missing keys are null. Without a
    /// schema, fields are taken in first-seen order and typed by their first
    /// non-null value.
    pub fn from_json_rows(
        rows: &[serde_json::Value],
        schema: Option<&Schema>,
    ) -> Result<Table, TableError> {
        let objects: Vec<&serde_json::Map<String, serde_json::Value>> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.as_object()
                    .ok_or_else(|| TableError::Json(format!("row {i} is not an object")))
            })
            .collect::<Result<_, _>>()?;
        let schema = match schema {
            Some(s) => s.clone(),
            None => {
                let mut fields: Vec<Field> = Vec::new();
                let mut typed: Vec<bool> = Vec::new();
                for obj in &objects {
                    for (k, v) in obj.iter() {
                        let ty = Value::from_json(v).and_then(|v| v.scalar_type());
                        match fields.iter().position(|f| &f.name == k) {
                            Some(i) => {
                                if !typed[i] {
                                    if let Some(t) = ty {
                                        fields[i].ty = t;
                                        typed[i] = true;
                                    }
                                }
                            }
                            None => {
                                fields.push(Field::new(k.clone(), ty.unwrap_or(ScalarType::String)));
                                typed.push(ty.is_some());
                            }
                        }
                    }
                }
                Schema(fields)
            }
        };
        let mut t = Table::empty(schema.clone());
        for (i, obj) in objects.iter().enumerate() {
            let mut row = Vec::with_capacity(schema.len());
            for f in schema.fields() {
                let v = match obj.get(&f.name) {
                    None => Value::Null,
                    Some(j) => Value::from_json(j).ok_or_else(|| {
                        TableError::Json(format!("row {i} field '{}' is not a scalar", f.name))
                    })?,
                };
                row.push(v);
            }
            t.push_row(row)?;
        }
        Ok(t)
    }
}

fn truncate(c: &mut Column, len: usize) {
    match c {
        Column::Number(v) => v.truncate(len),
        Column::String(v) => v.truncate(len),
        Column::Boolean(v) => v.truncate(len),
    }
}

fn csv_err(e: csv::Error) -> TableError {
    TableError::Csv(e.to_string())
}

fn csv_cell(c: &Column, r: usize) -> String {
    match c {
        Column::Number(v) => v[r].map(format_number).unwrap_or_default(),
        Column::String(v) => v[r].as_deref().unwrap_or("").to_string(),
        Column::Boolean(v) => v[r].map(|b| b.to_string()).unwrap_or_default(),
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn infer_type(cells: &[String]) -> ScalarType {
    let non_empty: Vec<&String> = cells.iter().filter(|c| !c.is_empty()).collect();
    if non_empty.is_empty() {
        return ScalarType::String;
    }
    if non_empty.iter().all(|c| parse_number(c).is_some()) {
        ScalarType::Number
    } else if non_empty.iter().all(|c| parse_bool(c).is_some()) {
        ScalarType::Boolean
    } else {
        ScalarType::String
    }
}

fn parse_column(field: &Field, cells: Vec<String>) -> Result<Column, TableError> {
    let bad = |row: usize, cell: &str| TableError::Type {
        column: field.name.clone(),
        row,
        expected: field.ty,
        found: format!("{cell:?}"),
    };
    Ok(match field.ty {
        ScalarType::Number => Column::Number(
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        parse_number(c).map(Some).ok_or_else(|| bad(i, c))
                    }
                })
                .collect::<Result<_, _>>()?,
        ),
        ScalarType::Boolean => Column::Boolean(
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        parse_bool(c).map(Some).ok_or_else(|| bad(i, c))
                    }
                })
                .collect::<Result<_, _>>()?,
        ),
        ScalarType::String => Column::String(
            cells
                .into_iter()
                .map(|c| if c.is_empty() { None } else { Some(Arc::from(c)) })
                .collect(),
        ),
    })
}

struct ByteCounter(u64);

impl Write for ByteCounter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0 += buf.len() as u64;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Numeric closeness with a mixed absolute/relative tolerance.
pub fn numbers_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

fn values_close(a: &Value, b: &Value, tol: f64) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => numbers_close(*x, *y, tol),
        _ => a == b,
    }
}

fn rows_close(a: &[Value], b: &[Value], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| values_close(x, y, tol))
}

fn row_cmp(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.sort_cmp(y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    Ordering::Equal
}

/// Multiset equality of two tables with numeric tolerance. Column names and
/// order must match. Returns a description of the first difference.
pub fn multiset_diff(a: &Table, b: &Table, tol: f64) -> Result<(), String> {
    if a.schema().names() != b.schema().names() {
        return Err(format!(
            "column mismatch: {:?} vs {:?}",
            a.schema().names(),
            b.schema().names()
        ));
    }
    if a.num_rows() != b.num_rows() {
        return Err(format!("row count {} vs {}", a.num_rows(), b.num_rows()));
    }
    let mut ra: Vec<Vec<Value>> = a.rows().collect();
    let mut rb: Vec<Vec<Value>> = b.rows().collect();
    ra.sort_by(|x, y| row_cmp(x, y));
    rb.sort_by(|x, y| row_cmp(x, y));
    if ra.iter().zip(&rb).all(|(x, y)| rows_close(x, y, tol)) {
        return Ok(());
    }
    // Near-equal floats can sort differently; fall back to greedy matching.
    let mut used = vec![false; rb.len()];
    for x in &ra {
        let hit = rb
            .iter()
            .enumerate()
            .find(|(j, y)| !used[*j] && rows_close(x, y, tol))
            .map(|(j, _)| j);
        match hit {
            Some(j) => used[j] = true,
            None => return Err(format!("row {x:?} has no counterpart")),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema(vec![
            Field::new("a", ScalarType::Number),
            Field::new("b", ScalarType::String),
            Field::new("c", ScalarType::Boolean),
        ])
    }

    #[test]
    fn csv_inference_and_nulls() {
        let t = Table::from_csv(b"a,b,c\n1,x,true\n,\"y,z\",false\n2.5,,\n", None).unwrap();
        assert_eq!(t.schema(), &schema());
        assert_eq!(t.num_rows(), 3);
        assert!(t.value(1, 0).is_null());
        assert_eq!(t.value(1, 1), Value::string("y,z"));
        assert!(t.value(2, 2).is_null());
    }

    #[test]
    fn csv_round_trip_preserves_rows() {
        let t = Table::from_rows(
            schema(),
            vec![
                vec![Value::Number(1.5), Value::string("q\"uote"), Value::Boolean(true)],
                vec![Value::Null, Value::string("x"), Value::Null],
            ],
        )
        .unwrap();
        let text = t.to_csv_string();
        assert_eq!(text.len() as u64, t.csv_len());
        let back = Table::from_csv(text.as_bytes(), Some(t.schema())).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_ragged_csv_and_missing_header() {
        assert!(matches!(
            Table::from_csv(b"a,b\n1\n", None),
            Err(TableError::Csv(_)) | Err(TableError::Arity { .. })
        ));
        assert!(Table::from_csv(b"", None).is_err());
    }

    #[test]
    fn push_row_type_error_rolls_back() {
        let mut t = Table::empty(schema());
        let err = t
            .push_row(vec![Value::Number(1.0), Value::Number(2.0), Value::Null])
            .unwrap_err();
        assert!(matches!(err, TableError::Type { .. }));
        assert_eq!(t.num_rows(), 0);
        assert!(t.columns().iter().all(Column::is_empty));
    }

    #[test]
    fn conform_maps_integers_to_booleans() {
        let raw = Table::from_rows(
            Schema(vec![Field::new("c", ScalarType::Number)]),
            vec![vec![Value::Number(1.0)], vec![Value::Number(0.0)]],
        )
        .unwrap();
        let t = raw
            .conform(&Schema(vec![Field::new("c", ScalarType::Boolean)]))
            .unwrap();
        assert_eq!(t.value(0, 0), Value::Boolean(true));
        assert_eq!(t.value(1, 0), Value::Boolean(false));
    }

    #[test]
    fn multiset_ignores_order_and_tiny_error() {
        let s = Schema(vec![Field::new("a", ScalarType::Number)]);
        let a = Table::from_rows(s.clone(), vec![vec![1.0.into()], vec![2.0.into()]]).unwrap();
        let b = Table::from_rows(s, vec![vec![(2.0 + 1e-12).into()], vec![1.0.into()]]).unwrap();
        assert!(multiset_diff(&a, &b, 1e-9).is_ok());
        let c = b.take(&[0, 0]);
        assert!(multiset_diff(&a, &c, 1e-9).is_err());
    }

    #[test]
    fn json_rows_infer_schema() {
        let rows: Vec<serde_json::Value> =
            serde_json::from_str(r#"[{"a":1,"b":null},{"a":2,"b":"x"}]"#).unwrap();
        let t = Table::from_json_rows(&rows, None).unwrap();
        assert_eq!(t.schema().field("b").unwrap().ty, ScalarType::String);
        assert_eq!(t.to_jsonl().lines().count(), 2);
    }
}
