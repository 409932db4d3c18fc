use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::partition::{NetworkProfile, TableStats};
use crate::sql::SqlDialect;
use crate::table::Table;
use crate::value::Schema;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum DriverError {
    #[error("cannot connect to {url}: {message}")]
    Connect { url: String, message: String },
    #[error("query failed: {message}\n  sql: {sql}")]
    Query { sql: String, message: String },
    #[error("ingest of '{table}' failed: {message}")]
    Ingest { table: String, message: String },
    #[error("no table '{0}'")]
    UnknownTable(String),
    #[error("unsupported driver url '{0}'")]
    BadUrl(String),
}

/// A SQL back-end. Implementations are shared across threads; each call
/// takes its own connection.
pub trait DbDriver: Send + Sync {
    fn dialect(&self) -> &SqlDialect;

    /// Runs a read-only query. Column types come from the values returned.
    fn execute(&self, sql: &str) -> Result<Table, DriverError>;

    /// Creates or replaces table `name` with `table`'s rows. Re-ingesting
    /// identical content is a no-op. Returns the row count.
    fn ingest(&self, name: &str, table: &Table) -> Result<u64, DriverError>;

    fn table_schema(&self, name: &str) -> Result<Schema, DriverError>;

    fn table_stats(&self, name: &str) -> Result<TableStats, DriverError>;

    /// Hash of the content last ingested under `name`.
    fn content_hash(&self, name: &str) -> Result<String, DriverError>;

    fn has_table(&self, name: &str) -> bool {
        self.table_schema(name).is_ok()
    }

    /// Parses CSV (header row, inferred types) and ingests it.
    fn ingest_csv(&self, name: &str, csv: &[u8]) -> Result<(u64, Schema), DriverError> {
        let table = Table::from_csv(csv, None).map_err(|e| DriverError::Ingest {
            table: name.to_string(),
            message: e.to_string(),
        })?;
        let rows = self.ingest(name, &table)?;
        Ok((rows, table.schema().clone()))
    }
}

/// SHA-256 over a table's CSV serialization, hex encoded.
pub fn table_hash(t: &Table) -> String {
    struct HashWriter(Sha256);
    impl std::io::Write for HashWriter {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.update(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }
    let mut w = HashWriter(Sha256::new());
    t.write_csv(&mut w).expect("hashing writer cannot fail");
    hex::encode(w.0.finalize())
}

/// Opens a driver from a URL: `embedded://` (temporary database),
/// `embedded://path.db`, or `postgresql://...` when built with postgres.
pub fn connect(url: &str) -> Result<Arc<dyn DbDriver>, DriverError> {
    if let Some(rest) = url.strip_prefix("embedded://") {
        let d = if rest.is_empty() || rest == ":memory:" {
            super::sqlite::EmbeddedDriver::temporary()?
        } else {
            super::sqlite::EmbeddedDriver::open(rest)?
        };
        return Ok(Arc::new(d));
    }
    if url.starts_with("postgres://") || url.starts_with("postgresql://") {
        #[cfg(feature = "postgres")]
        return Ok(Arc::new(super::postgres::RemoteDriver::connect(url)?));
    }
    Err(DriverError::BadUrl(url.to_string()))
}

/// Counts `execute` calls of the wrapped driver and remembers their SQL.
pub struct InstrumentedDriver {
    inner: Arc<dyn DbDriver>,
    calls: AtomicU64,
    log: Mutex<Vec<String>>,
}

impl InstrumentedDriver {
    pub fn new(inner: Arc<dyn DbDriver>) -> InstrumentedDriver {
        InstrumentedDriver {
            inner,
            calls: AtomicU64::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn queries(&self) -> Vec<String> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

impl DbDriver for InstrumentedDriver {
    fn dialect(&self) -> &SqlDialect {
        self.inner.dialect()
    }

    fn execute(&self, sql: &str) -> Result<Table, DriverError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(sql.to_string());
        self.inner.execute(sql)
    }

    fn ingest(&self, name: &str, table: &Table) -> Result<u64, DriverError> {
        self.inner.ingest(name, table)
    }

    fn table_schema(&self, name: &str) -> Result<Schema, DriverError> {
        self.inner.table_schema(name)
    }

    fn table_stats(&self, name: &str) -> Result<TableStats, DriverError> {
        self.inner.table_stats(name)
    }

    fn content_hash(&self, name: &str) -> Result<String, DriverError> {
        self.inner.content_hash(name)
    }
}

/// One query result with its measured server and network time.
#[derive(Clone, Debug)]
pub struct Fetched {
    pub table: Table,
    pub server_ms: f64,
    pub network_ms: f64,
    pub bytes: u64,
}

/// Wraps a driver and delays every result by `L_rt + bytes / B`, bytes
/// being the result's CSV length. A zero profile adds nothing.
#[derive(Clone)]
pub struct SimulatedNetwork {
    pub driver: Arc<dyn DbDriver>,
    pub profile: NetworkProfile,
}

impl SimulatedNetwork {
    pub fn new(driver: Arc<dyn DbDriver>, profile: NetworkProfile) -> SimulatedNetwork {
        SimulatedNetwork { driver, profile }
    }

    pub fn dialect(&self) -> &SqlDialect {
        self.driver.dialect()
    }

    pub fn fetch(&self, sql: &str) -> Result<Fetched, DriverError> {
        let start = Instant::now();
        let table = self.driver.execute(sql)?;
        let server_ms = ms_since(start);
        if self.profile.is_zero() {
            return Ok(Fetched {
                table,
                server_ms,
                network_ms: 0.0,
                bytes: 0,
            });
        }
        let bytes = table.csv_len();
        // The sleep makes the delay observable to callers; the reported
        // figure is the modelled delay, since sleeps overshoot under load.
        let network_ms = self.profile.transfer_ms(bytes as f64);
        if network_ms.is_finite() && network_ms > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(network_ms / 1000.0));
        }
        tracing::debug!(server_ms, network_ms, bytes, rows = table.num_rows(), sql, "fetched");
        Ok(Fetched {
            table,
            server_ms,
            network_ms,
            bytes,
        })
    }
}

pub(crate) fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}
