//! Embedded SQLite back-end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use regex::Regex;
use rusqlite::functions::{Context, FunctionFlags};
use rusqlite::types::{Value as SqlValue, ValueRef};
use rusqlite::{params, Connection, OpenFlags, OptionalExtension};

use super::driver::{table_hash, DbDriver, DriverError};
use crate::partition::{estimate_distinct, FieldStats, TableStats, DISTINCT_SAMPLE_CAP};
use crate::sql::SqlDialect;
use crate::table::{Column, Table};
use crate::value::{Field, ScalarType, Schema, Value};

const META: &str = "__vp_tables";
const POOL_CAP: usize = 8;

/// SQLite database file shared by a small connection pool. Each connection
/// carries the functions the SQL renderer relies on.
pub struct EmbeddedDriver {
    path: PathBuf,
    _dir: Option<tempfile::TempDir>,
    pool: Mutex<Vec<Connection>>,
    ingest_lock: Mutex<()>,
    dialect: SqlDialect,
}

fn connect_err(path: &Path, e: impl ToString) -> DriverError {
    DriverError::Connect {
        url: format!("embedded://{}", path.display()),
        message: e.to_string(),
    }
}

impl EmbeddedDriver {
    /// A database in a fresh temporary directory, removed on drop.
    pub fn temporary() -> Result<EmbeddedDriver, DriverError> {
        let dir = tempfile::tempdir().map_err(|e| connect_err(Path::new("<temp>"), e))?;
        let path = dir.path().join("vegaplus.db");
        let mut d = Self::open(&path)?;
        d._dir = Some(dir);
        Ok(d)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<EmbeddedDriver, DriverError> {
        let path = path.as_ref().to_path_buf();
        let conn = open_connection(&path)?;
        conn.execute_batch(&format!(
            "CREATE TABLE IF NOT EXISTS {META} (name TEXT PRIMARY KEY, hash TEXT NOT NULL, rows INTEGER NOT NULL)"
        ))
        .map_err(|e| connect_err(&path, e))?;
        let window = conn.query_row("SELECT SUM(1) OVER ()", [], |_| Ok(())).is_ok();
        let dialect = SqlDialect::sqlite().with_window_functions(window);
        Ok(EmbeddedDriver {
            path,
            _dir: None,
            pool: Mutex::new(vec![conn]),
            ingest_lock: Mutex::new(()),
            dialect,
        })
    }

    /// Pretends the engine lacks window functions (for capability tests).
    pub fn without_window_functions(mut self) -> EmbeddedDriver {
        self.dialect.window_functions = false;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn with_conn<T>(&self, f: impl FnOnce(&mut Connection) -> T) -> Result<T, DriverError> {
        let conn = self.pool.lock().unwrap_or_else(|p| p.into_inner()).pop();
        let mut conn = match conn {
            Some(c) => c,
            None => open_connection(&self.path)?,
        };
        let out = f(&mut conn);
        let mut pool = self.pool.lock().unwrap_or_else(|p| p.into_inner());
        if pool.len() < POOL_CAP {
            pool.push(conn);
        }
        Ok(out)
    }
}

fn open_connection(path: &Path) -> Result<Connection, DriverError> {
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_WRITE | OpenFlags::SQLITE_OPEN_CREATE | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| connect_err(path, e))?;
    conn.busy_timeout(Duration::from_secs(30))
        .map_err(|e| connect_err(path, e))?;
    conn.execute_batch(
        "PRAGMA journal_mode=WAL; PRAGMA synchronous=OFF; PRAGMA temp_store=MEMORY; PRAGMA cache_size=-262144;",
    )
        .map_err(|e| connect_err(path, e))?;
    register_functions(&conn).map_err(|e| connect_err(path, e))?;
    Ok(conn)
}

fn unary(conn: &Connection, name: &str, f: fn(f64) -> Option<f64>) -> rusqlite::Result<()> {
    conn.create_scalar_function(
        name,
        1,
        FunctionFlags::SQLITE_UTF8 | FunctionFlags::SQLITE_DETERMINISTIC,
        move |ctx: &Context| {
            let v: Option<f64> = ctx.get(0)?;
            Ok(v.and_then(f))
        },
    )
}

fn register_functions(conn: &Connection) -> rusqlite::Result<()> {
    unary(conn, "floor", |x| Some(x.floor()))?;
    unary(conn, "ceil", |x| Some(x.ceil()))?;
    unary(conn, "sqrt", |x| if x < 0.0 { None } else { Some(x.sqrt()) })?;
    conn.create_scalar_function(
        "vp_mod",
        2,
        FunctionFlags::SQLITE_UTF8 | FunctionFlags::SQLITE_DETERMINISTIC,
        |ctx: &Context| {
            let a: Option<f64> = ctx.get(0)?;
            let b: Option<f64> = ctx.get(1)?;
            Ok(match (a, b) {
                (Some(a), Some(b)) if b != 0.0 => {
                    let r = a % b;
                    if r.is_nan() {
                        None
                    } else {
                        Some(r)
                    }
                }
                _ => None,
            })
        },
    )?;
    conn.create_scalar_function(
        "regexp",
        2,
        FunctionFlags::SQLITE_UTF8 | FunctionFlags::SQLITE_DETERMINISTIC,
        |ctx: &Context| {
            if matches!(ctx.get_raw(0), ValueRef::Null) || matches!(ctx.get_raw(1), ValueRef::Null) {
                return Ok(None);
            }
            let re: Arc<Regex> = ctx.get_or_create_aux(0, |v| -> Result<Regex, Box<dyn std::error::Error + Send + Sync>> {
                Ok(Regex::new(v.as_str()?)?)
            })?;
            let subject = ctx.get_raw(1).as_str().map_err(|e| rusqlite::Error::UserFunctionError(e.into()))?;
            Ok(Some(re.is_match(subject)))
        },
    )?;
    Ok(())
}

fn quote(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn query_err(sql: &str, e: impl ToString) -> DriverError {
    DriverError::Query {
        sql: sql.to_string(),
        message: e.to_string(),
    }
}

fn run_query(conn: &Connection, sql: &str) -> Result<Table, DriverError> {
    let mut stmt = conn.prepare(sql).map_err(|e| query_err(sql, e))?;
    let names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let n = names.len();
    let mut cols: Vec<Option<Column>> = vec![None; n];
    let mut nulls: Vec<usize> = vec![0; n];
    let mut rows = stmt.query([]).map_err(|e| query_err(sql, e))?;
    let mut count = 0usize;
    while let Some(row) = rows.next().map_err(|e| query_err(sql, e))? {
        for i in 0..n {
            let v = match row.get_ref(i).map_err(|e| query_err(sql, e))? {
                ValueRef::Null => Value::Null,
                ValueRef::Integer(x) => Value::number(x as f64),
                ValueRef::Real(x) => Value::number(x),
                ValueRef::Text(t) => Value::string(String::from_utf8_lossy(t)),
                ValueRef::Blob(_) => return Err(query_err(sql, "blob values are not supported")),
            };
            match &mut cols[i] {
                None if v.is_null() => nulls[i] += 1,
                None => {
                    let ty = v.scalar_type().expect("non-null value has a type");
                    let mut c = Column::with_capacity(ty, 16);
                    for _ in 0..nulls[i] {
                        c.push(Value::Null).expect("null fits any column");
                    }
                    c.push(v).expect("type taken from value");
                    cols[i] = Some(c);
                }
                Some(c) => c
                    .push(v)
                    .map_err(|bad| query_err(sql, format!("column '{}' mixes types at {bad:?}", names[i])))?,
            }
        }
        count += 1;
    }
    let mut fields = Vec::with_capacity(n);
    let mut columns = Vec::with_capacity(n);
    for (i, c) in cols.into_iter().enumerate() {
        let c = c.unwrap_or_else(|| Column::String(vec![None; count]));
        fields.push(Field::new(names[i].clone(), c.scalar_type()));
        columns.push(c);
    }
    Table::from_columns(Schema(fields), columns).map_err(|e| query_err(sql, e))
}

fn sql_type(ty: ScalarType) -> &'static str {
    match ty {
        ScalarType::Number => "REAL",
        ScalarType::String => "TEXT",
        ScalarType::Boolean => "BOOLEAN",
    }
}

impl DbDriver for EmbeddedDriver {
    fn dialect(&self) -> &SqlDialect {
        &self.dialect
    }

    fn execute(&self, sql: &str) -> Result<Table, DriverError> {
        self.with_conn(|c| run_query(c, sql))?
    }

    fn ingest(&self, name: &str, table: &Table) -> Result<u64, DriverError> {
        let _guard = self.ingest_lock.lock().unwrap_or_else(|p| p.into_inner());
        let fail = |e: rusqlite::Error| DriverError::Ingest {
            table: name.to_string(),
            message: e.to_string(),
        };
        let hash = table_hash(table);
        self.with_conn(|conn| {
            let existing: Option<(String, i64)> = conn
                .query_row(
                    &format!("SELECT hash, rows FROM {META} WHERE name = ?1"),
                    params![name],
                    |r| Ok((r.get(0)?, r.get(1)?)),
                )
                .optional()
                .map_err(fail)?;
            if let Some((h, rows)) = existing {
                if h == hash {
                    return Ok(rows as u64);
                }
            }
            let tx = conn.transaction().map_err(fail)?;
            let cols: Vec<String> = table
                .schema()
                .fields()
                .iter()
                .map(|f| format!("{} {}", quote(&f.name), sql_type(f.ty)))
                .collect();
            tx.execute_batch(&format!(
                "DROP TABLE IF EXISTS {q}; CREATE TABLE {q} ({});",
                cols.join(", "),
                q = quote(name)
            ))
            .map_err(fail)?;
            {
                let marks = vec!["?"; table.num_columns()].join(", ");
                let mut stmt = tx
                    .prepare(&format!("INSERT INTO {} VALUES ({marks})", quote(name)))
                    .map_err(fail)?;
                let mut row: Vec<SqlValue> = Vec::with_capacity(table.num_columns());
                for r in 0..table.num_rows() {
                    row.clear();
                    for c in table.columns() {
                        row.push(match c.get(r) {
                            Value::Null => SqlValue::Null,
                            Value::Number(x) => SqlValue::Real(x),
                            Value::String(s) => SqlValue::Text(s.to_string()),
                            Value::Boolean(b) => SqlValue::Integer(b as i64),
                        });
                    }
                    stmt.execute(rusqlite::params_from_iter(row.iter()))
                        .map_err(fail)?;
                }
            }
            tx.execute(
                &format!("INSERT OR REPLACE INTO {META} (name, hash, rows) VALUES (?1, ?2, ?3)"),
                params![name, hash, table.num_rows() as i64],
            )
            .map_err(fail)?;
            tx.commit().map_err(fail)?;
            Ok(table.num_rows() as u64)
        })?
    }

    fn table_schema(&self, name: &str) -> Result<Schema, DriverError> {
        let sql = format!("PRAGMA table_info({})", quote(name));
        let fields = self.with_conn(|c| -> rusqlite::Result<Vec<Field>> {
            let mut stmt = c.prepare(&sql)?;
            let rows = stmt.query_map([], |r| {
                let n: String = r.get(1)?;
                let t: String = r.get(2)?;
                Ok((n, t))
            })?;
            let mut out = Vec::new();
            for row in rows {
                let (n, t) = row?;
                let t = t.to_ascii_uppercase();
                let ty = if t.contains("BOOL") {
                    ScalarType::Boolean
                } else if t.contains("CHAR") || t.contains("TEXT") || t.contains("CLOB") {
                    ScalarType::String
                } else {
                    ScalarType::Number
                };
                out.push(Field::new(n, ty));
            }
            Ok(out)
        })?
        .map_err(|e| query_err(&sql, e))?;
        if fields.is_empty() {
            return Err(DriverError::UnknownTable(name.to_string()));
        }
        Ok(Schema(fields))
    }

    fn table_stats(&self, name: &str) -> Result<TableStats, DriverError> {
        let schema = self.table_schema(name)?;
        let t = quote(name);
        let mut parts = vec!["COUNT(*)".to_string()];
        for f in schema.fields() {
            let c = quote(&f.name);
            parts.push(format!("MIN({c})"));
            parts.push(format!("MAX({c})"));
            parts.push(format!("AVG(LENGTH(CAST({c} AS TEXT)))"));
        }
        let sql = format!("SELECT {} FROM {t}", parts.join(", "));
        let summary = self.execute(&sql)?;
        let rows = summary.value(0, 0).as_f64().unwrap_or(0.0) as u64;
        let sample = (rows as usize).min(DISTINCT_SAMPLE_CAP);
        let distinct_parts: Vec<String> = schema
            .fields()
            .iter()
            .map(|f| format!("COUNT(DISTINCT {})", quote(&f.name)))
            .collect();
        let sql = format!(
            "SELECT {} FROM (SELECT * FROM {t} LIMIT {sample})",
            distinct_parts.join(", ")
        );
        let distinct = self.execute(&sql)?;
        let mut fields = BTreeMap::new();
        for (i, f) in schema.fields().iter().enumerate() {
            let numeric = f.ty == ScalarType::Number;
            let get = |j: usize| summary.value(0, 1 + 3 * i + j);
            let width = get(2).as_f64().map_or(0.0, |w| w + 1.0);
            fields.insert(
                f.name.clone(),
                FieldStats {
                    distinct: estimate_distinct(
                        distinct.value(0, i).as_f64().unwrap_or(0.0) as u64,
                        sample as u64,
                        rows,
                    ),
                    min: if numeric { get(0).as_f64() } else { None },
                    max: if numeric { get(1).as_f64() } else { None },
                    width: if width > 0.0 { width } else { crate::partition::default_width(f.ty) },
                },
            );
        }
        let row_width = fields.values().map(|f| f.width).sum::<f64>().max(1.0);
        Ok(TableStats {
            rows,
            row_width,
            fields,
        })
    }

    fn content_hash(&self, name: &str) -> Result<String, DriverError> {
        let sql = format!("SELECT hash FROM {META} WHERE name = ?1");
        let hash: Option<String> = self
            .with_conn(|c| c.query_row(&sql, params![name], |r| r.get(0)).optional())?
            .map_err(|e| query_err(&sql, e))?;
        match hash {
            Some(h) => Ok(h),
            None => {
                // a table created outside this driver: hash its content
                let t = self.execute(&format!("SELECT * FROM {}", quote(name)))?;
                Ok(table_hash(&t))
            }
        }
    }
}
