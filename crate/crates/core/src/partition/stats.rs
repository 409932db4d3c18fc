use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::spec::TransformKind;
use crate::table::Table;
use crate::value::{ScalarType, Value};

/// Distinct values counted exactly before switching to an estimate.
pub const DISTINCT_SAMPLE_CAP: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldStats {
    pub distinct: u64,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Mean encoded width in bytes.
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableStats {
    pub rows: u64,
    pub row_width: f64,
    pub fields: BTreeMap<String, FieldStats>,
}

impl TableStats {
    /// Stats of an in-memory table; distinct counts come from the first
    /// [`DISTINCT_SAMPLE_CAP`] rows (see [`estimate_distinct`]).
    pub fn of_table(t: &Table) -> TableStats {
        let rows = t.num_rows();
        let sample = rows.min(DISTINCT_SAMPLE_CAP);
        let mut fields = BTreeMap::new();
        for (i, f) in t.schema().fields().iter().enumerate() {
            let col = t.column(i);
            let mut seen: HashSet<String> = HashSet::new();
            let (mut lo, mut hi) = (None::<f64>, None::<f64>);
            let mut bytes = 0usize;
            for r in 0..rows {
                let v = col.get(r);
                if let Some(x) = v.as_f64() {
                    lo = Some(lo.map_or(x, |l| l.min(x)));
                    hi = Some(hi.map_or(x, |h| h.max(x)));
                }
                let text = match &v {
                    Value::Null => String::new(),
                    other => other.to_string(),
                };
                bytes += text.len() + 1;
                if r < sample && !v.is_null() {
                    seen.insert(text);
                }
            }
            let width = if rows == 0 {
                default_width(f.ty)
            } else {
                bytes as f64 / rows as f64
            };
            fields.insert(
                f.name.clone(),
                FieldStats {
                    distinct: estimate_distinct(seen.len() as u64, sample as u64, rows as u64),
                    min: lo,
                    max: hi,
                    width,
                },
            );
        }
        let row_width = fields.values().map(|f| f.width).sum::<f64>().max(1.0);
        TableStats {
            rows: rows as u64,
            row_width,
            fields,
        }
    }
}

/// Distinct count of a column from the distinct count of a prefix sample.
/// A sample that repeats values a lot is taken at face value; a mostly
/// unique one is scaled to the full row count.
pub fn estimate_distinct(sample_distinct: u64, sample_rows: u64, total_rows: u64) -> u64 {
    if sample_rows >= total_rows || sample_distinct * 2 <= sample_rows {
        return sample_distinct;
    }
    ((sample_distinct as f64) * total_rows as f64 / sample_rows as f64).round() as u64
}

/// Width assumed for a field with no measured stats.
pub fn default_width(ty: ScalarType) -> f64 {
    match ty {
        ScalarType::Number => 8.0,
        ScalarType::String => 16.0,
        ScalarType::Boolean => 5.0,
    }
}

/// Per-source statistics, keyed by data source name.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub tables: BTreeMap<String, TableStats>,
    /// Assumed fraction of rows a filter keeps.
    pub selectivity: f64,
}

impl Default for Stats {
    fn default() -> Self {
        Stats {
            tables: BTreeMap::new(),
            selectivity: 0.5,
        }
    }
}

/// Round-trip latency and bandwidth between middleware and DBMS.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub latency_ms: f64,
    /// Bytes per millisecond.
    pub bandwidth: f64,
}

impl NetworkProfile {
    pub fn new(latency_ms: f64, bandwidth: f64) -> NetworkProfile {
        assert!(latency_ms >= 0.0 && bandwidth > 0.0, "invalid network profile");
        NetworkProfile {
            latency_ms,
            bandwidth,
        }
    }

    /// No latency, unlimited bandwidth.
    pub fn zero() -> NetworkProfile {
        NetworkProfile {
            latency_ms: 0.0,
            bandwidth: f64::INFINITY,
        }
    }

    /// Bandwidth given in megabits per second.
    pub fn from_mbps(latency_ms: f64, mbps: f64) -> NetworkProfile {
        Self::new(latency_ms, mbps * 125.0)
    }

    pub fn is_zero(&self) -> bool {
        self.latency_ms == 0.0 && self.bandwidth.is_infinite()
    }

    /// Milliseconds to move one result of `bytes` bytes.
    pub fn transfer_ms(&self, bytes: f64) -> f64 {
        self.latency_ms + bytes / self.bandwidth
    }
}

/// Per-row operator costs on the server (ms/row) and the client slowdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub filter: f64,
    pub formula: f64,
    pub project: f64,
    pub collect: f64,
    pub bin: f64,
    pub stack: f64,
    pub aggregate: f64,
    pub extent: f64,
    /// Client cost = kappa x server cost.
    pub kappa: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            filter: 0.0002,
            formula: 0.0002,
            project: 0.0002,
            collect: 0.0002,
            bin: 0.0004,
            stack: 0.0004,
            aggregate: 0.0006,
            extent: 0.0006,
            kappa: 3.0,
        }
    }
}

impl CostParams {
    pub fn server(&self, kind: TransformKind) -> f64 {
        match kind {
            TransformKind::Filter => self.filter,
            TransformKind::Formula => self.formula,
            TransformKind::Project => self.project,
            TransformKind::Collect => self.collect,
            TransformKind::Bin => self.bin,
            TransformKind::Stack => self.stack,
            TransformKind::Aggregate => self.aggregate,
            TransformKind::Extent => self.extent,
        }
    }

    pub fn client(&self, kind: TransformKind) -> f64 {
        self.kappa * self.server(kind)
    }
}
