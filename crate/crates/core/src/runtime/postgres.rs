//! Remote back-end over the PostgreSQL wire protocol.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;

use postgres::types::Type;
use postgres::{Client, NoTls};

use super::driver::{table_hash, DbDriver, DriverError};
use crate::partition::{default_width, estimate_distinct, FieldStats, TableStats, DISTINCT_SAMPLE_CAP};
use crate::sql::SqlDialect;
use crate::table::{Column, Table};
use crate::value::{Field, ScalarType, Schema, Value};

const META: &str = "__vp_tables";

pub struct RemoteDriver {
    url: String,
    pool: Mutex<Vec<Client>>,
    dialect: SqlDialect,
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

impl RemoteDriver {
    pub fn connect(url: &str) -> Result<RemoteDriver, DriverError> {
        let fail = |e: postgres::Error| DriverError::Connect {
            url: url.to_string(),
            message: e.to_string(),
        };
        let mut client = Client::connect(url, NoTls).map_err(fail)?;
        client
            .batch_execute(&format!(
                "CREATE TABLE IF NOT EXISTS {META} (name TEXT PRIMARY KEY, hash TEXT NOT NULL, rows BIGINT NOT NULL)"
            ))
            .map_err(fail)?;
        let window = client.simple_query("SELECT SUM(1) OVER ()").is_ok();
        Ok(RemoteDriver {
            url: url.to_string(),
            pool: Mutex::new(vec![client]),
            dialect: SqlDialect::postgres().with_window_functions(window),
        })
    }

    fn with_client<T>(&self, f: impl FnOnce(&mut Client) -> T) -> Result<T, DriverError> {
        let c = self.pool.lock().unwrap_or_else(|p| p.into_inner()).pop();
        let mut c = match c {
            Some(c) if !c.is_closed() => c,
            _ => Client::connect(&self.url, NoTls).map_err(|e| DriverError::Connect {
                url: self.url.clone(),
                message: e.to_string(),
            })?,
        };
        let out = f(&mut c);
        self.pool.lock().unwrap_or_else(|p| p.into_inner()).push(c);
        Ok(out)
    }
}

fn column_type(t: &Type) -> Option<ScalarType> {
    Some(match *t {
        Type::FLOAT8 | Type::FLOAT4 | Type::INT2 | Type::INT4 | Type::INT8 => ScalarType::Number,
        Type::TEXT | Type::VARCHAR | Type::BPCHAR | Type::NAME => ScalarType::String,
        Type::BOOL => ScalarType::Boolean,
        _ => return None,
    })
}

fn cell(row: &postgres::Row, i: usize, t: &Type) -> Result<Value, postgres::Error> {
    Ok(match *t {
        Type::FLOAT8 => row.try_get::<_, Option<f64>>(i)?.map_or(Value::Null, Value::number),
        Type::FLOAT4 => row
            .try_get::<_, Option<f32>>(i)?
            .map_or(Value::Null, |x| Value::number(x as f64)),
        Type::INT2 => row
            .try_get::<_, Option<i16>>(i)?
            .map_or(Value::Null, |x| Value::number(x as f64)),
        Type::INT4 => row
            .try_get::<_, Option<i32>>(i)?
            .map_or(Value::Null, |x| Value::number(x as f64)),
        Type::INT8 => row
            .try_get::<_, Option<i64>>(i)?
            .map_or(Value::Null, |x| Value::number(x as f64)),
        Type::BOOL => row.try_get::<_, Option<bool>>(i)?.map_or(Value::Null, Value::Boolean),
        _ => row
            .try_get::<_, Option<String>>(i)?
            .map_or(Value::Null, Value::string),
    })
}

fn pg_type(ty: ScalarType) -> &'static str {
    match ty {
        ScalarType::Number => "DOUBLE PRECISION",
        ScalarType::String => "TEXT",
        ScalarType::Boolean => "BOOLEAN",
    }
}

impl DbDriver for RemoteDriver {
    fn dialect(&self) -> &SqlDialect {
        &self.dialect
    }

    fn execute(&self, sql: &str) -> Result<Table, DriverError> {
        self.with_client(|c| {
            let stmt = c.prepare(sql).map_err(|e| query_err(sql, e))?;
            let mut fields = Vec::new();
            for col in stmt.columns() {
                let ty = column_type(col.type_())
                    .ok_or_else(|| query_err(sql, format!("unsupported column type {}", col.type_())))?;
                fields.push(Field::new(col.name(), ty));
            }
            let rows = c.query(&stmt, &[]).map_err(|e| query_err(sql, e))?;
            let mut columns: Vec<Column> = fields
                .iter()
                .map(|f| Column::with_capacity(f.ty, rows.len()))
                .collect();
            for row in &rows {
                for (i, col) in stmt.columns().iter().enumerate() {
                    let v = cell(row, i, col.type_()).map_err(|e| query_err(sql, e))?;
                    columns[i]
                        .push(v)
                        .map_err(|bad| query_err(sql, format!("unexpected value {bad:?}")))?;
                }
            }
            Table::from_columns(Schema(fields), columns).map_err(|e| query_err(sql, e))
        })?
    }

    fn ingest(&self, name: &str, table: &Table) -> Result<u64, DriverError> {
        let hash = table_hash(table);
        let fail = |e: postgres::Error| DriverError::Ingest {
            table: name.to_string(),
            message: e.to_string(),
        };
        self.with_client(|c| {
            let existing = c
                .query_opt(&format!("SELECT hash, rows FROM {META} WHERE name = $1"), &[&name])
                .map_err(fail)?;
            if let Some(row) = existing {
                let h: String = row.get(0);
                if h == hash {
                    return Ok(row.get::<_, i64>(1) as u64);
                }
            }
            let mut tx = c.transaction().map_err(fail)?;
            let cols: Vec<String> = table
                .schema()
                .fields()
                .iter()
                .map(|f| format!("{} {}", quote(&f.name), pg_type(f.ty)))
                .collect();
            tx.batch_execute(&format!(
                "DROP TABLE IF EXISTS {q}; CREATE TABLE {q} ({});",
                cols.join(", "),
                q = quote(name)
            ))
            .map_err(fail)?;
            let mut w = tx
                .copy_in(&format!("COPY {} FROM STDIN WITH (FORMAT csv, HEADER true)", quote(name)))
                .map_err(fail)?;
            table.write_csv(&mut w).map_err(|e| DriverError::Ingest {
                table: name.to_string(),
                message: e.to_string(),
            })?;
            w.flush().map_err(|e| DriverError::Ingest {
                table: name.to_string(),
                message: e.to_string(),
            })?;
            w.finish().map_err(fail)?;
            tx.execute(
                &format!(
                    "INSERT INTO {META} (name, hash, rows) VALUES ($1, $2, $3) \
                     ON CONFLICT (name) DO UPDATE SET hash = EXCLUDED.hash, rows = EXCLUDED.rows"
                ),
                &[&name, &hash, &(table.num_rows() as i64)],
            )
            .map_err(fail)?;
            tx.commit().map_err(fail)?;
            Ok(table.num_rows() as u64)
        })?
    }

    fn table_schema(&self, name: &str) -> Result<Schema, DriverError> {
        let sql = format!("SELECT * FROM {} LIMIT 0", quote(name));
        let fields = self.with_client(|c| -> Result<Vec<Field>, DriverError> {
            let stmt = c
                .prepare(&sql)
                .map_err(|_| DriverError::UnknownTable(name.to_string()))?;
            stmt.columns()
                .iter()
                .map(|col| {
                    column_type(col.type_())
                        .map(|t| Field::new(col.name(), t))
                        .ok_or_else(|| query_err(&sql, format!("unsupported column type {}", col.type_())))
                })
                .collect()
        })??;
        Ok(Schema(fields))
    }

    fn table_stats(&self, name: &str) -> Result<TableStats, DriverError> {
        let schema = self.table_schema(name)?;
        let t = quote(name);
        let mut parts = vec!["COUNT(*)::float8".to_string()];
        for f in schema.fields() {
            let c = quote(&f.name);
            let numeric = f.ty == ScalarType::Number;
            parts.push(if numeric { format!("MIN({c})") } else { "NULL::float8".into() });
            parts.push(if numeric { format!("MAX({c})") } else { "NULL::float8".into() });
            parts.push(format!("AVG(LENGTH(CAST({c} AS TEXT)))::float8"));
        }
        let summary = self.execute(&format!("SELECT {} FROM {t}", parts.join(", ")))?;
        let rows = summary.value(0, 0).as_f64().unwrap_or(0.0) as u64;
        let sample = (rows as usize).min(DISTINCT_SAMPLE_CAP);
        let dparts: Vec<String> = schema
            .fields()
            .iter()
            .map(|f| format!("COUNT(DISTINCT {})::float8", quote(&f.name)))
            .collect();
        let distinct = self.execute(&format!(
            "SELECT {} FROM (SELECT * FROM {t} LIMIT {sample}) AS s",
            dparts.join(", ")
        ))?;
        let mut fields = BTreeMap::new();
        for (i, f) in schema.fields().iter().enumerate() {
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
                    min: get(0).as_f64(),
                    max: get(1).as_f64(),
                    width: if width > 0.0 { width } else { default_width(f.ty) },
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
        let sql = format!("SELECT hash FROM {META} WHERE name = $1");
        let row = self
            .with_client(|c| c.query_opt(&sql, &[&name]))?
            .map_err(|e| query_err(&sql, e))?;
        match row {
            Some(r) => Ok(r.get(0)),
            None => Ok(table_hash(&self.execute(&format!("SELECT * FROM {}", quote(name)))?)),
        }
    }
}
