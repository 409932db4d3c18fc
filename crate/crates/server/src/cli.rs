//! `vegaplus run` and `vegaplus bench`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use vegaplus_core::partition::{baseline_plan, CostEstimate, NetworkProfile, PartitionPlan, Side};
use vegaplus_core::runtime::{DbDriver, PlanLabel, Session, TimingBreakdown};
use vegaplus_core::synth;
use vegaplus_core::table::Table;
use vegaplus_core::Value;

use crate::config::Config;
use crate::error::ApiError;
use crate::state::AppState;

/// Bad command-line input; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn api(e: ApiError) -> anyhow::Error {
    anyhow!("{}", e.message)
}

/// Splits `NAME=VALUE`.
pub fn split_pair(s: &str) -> anyhow::Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(usage(format!("expected NAME=VALUE, got '{s}'"))),
    }
}

pub fn read_csv(path: &Path) -> anyhow::Result<Table> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Table::from_csv(&bytes, None).with_context(|| format!("parsing {}", path.display()))
}

fn ingest_data(driver: &dyn DbDriver, data: &[String]) -> anyhow::Result<()> {
    for d in data {
        let (name, file) = split_pair(d)?;
        let t = read_csv(Path::new(&file))?;
        driver.ingest(&name, &t)?;
    }
    Ok(())
}

fn parse_signal(s: &str) -> anyhow::Result<(String, Value)> {
    let (name, raw) = split_pair(s)?;
    let json: serde_json::Value =
        serde_json::from_str(&raw).unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
    let v = Value::from_json(&json).ok_or_else(|| usage(format!("signal {name}: not a scalar")))?;
    Ok((name, v))
}

pub struct RunOptions {
    pub spec: PathBuf,
    pub data: Vec<String>,
    pub signals: Vec<String>,
    pub profile: NetworkProfile,
    pub explain: bool,
    pub baseline: bool,
}

fn read_spec(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Executes a spec once and writes sinks and timing as JSON, or with
/// `explain` writes the recommended plan's queries and cost estimates.
pub fn run(config: Config, opts: &RunOptions, out: &mut dyn Write) -> anyhow::Result<()> {
    let text = read_spec(&opts.spec)?;
    let state = AppState::new(config)?;
    ingest_data(&*state.driver, &opts.data)?;
    let mut session = state
        .open_session(&text, &BTreeMap::new(), opts.profile)
        .map_err(api)?;
    if opts.explain {
        // Bin steps depend on server extents, so queries render after a run.
        session.execute_active()?;
        out.write_all(explain(&session).as_bytes())?;
        return Ok(());
    }
    let mut result = if opts.baseline {
        session.execute_baseline()?
    } else {
        session.execute_active()?
    };
    for s in &opts.signals {
        let (name, v) = parse_signal(s)?;
        result = session.handle_interaction(&name, v)?;
    }
    let sinks: serde_json::Map<String, serde_json::Value> = session
        .graph()
        .sink_datasets()
        .iter()
        .map(|name| {
            let t = session.dataset_table(name)?;
            Ok((name.clone(), serde_json::Value::Array(t.to_json_rows())))
        })
        .collect::<anyhow::Result<_>>()?;
    let body = serde_json::json!({
        "plan": if opts.baseline { PlanLabel::Baseline } else { session.plan_label() },
        "timing": {
            "server_ms": result.timing.server_ms,
            "network_ms": result.timing.network_ms,
            "client_ms": result.timing.client_ms,
            "total_ms": result.timing.total_ms(),
        },
        "sinks": sinks,
    });
    serde_json::to_writer_pretty(&mut *out, &body)?;
    writeln!(out)?;
    Ok(())
}

fn cost_line(out: &mut String, name: &str, e: &CostEstimate) {
    let _ = writeln!(
        out,
        "{name:<12} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
        e.server_ms, e.transfer_ms, e.client_ms, e.total_ms
    );
}

/// The queries the recommended plan sends, one per server extent and cut
/// producer, followed by estimated costs of it and the all-client plan.
/// Queries parameterized by extents render once those have run.
pub fn explain(session: &Session) -> String {
    let plan = session.recommended();
    let g = session.graph();
    let json = plan.to_json(g, session.backend().network.dialect(), &|s: &str| {
        session.backend().bindings.table(s)
    });
    let issued = issued_nodes(session, plan);
    let mut out = String::new();
    for node in json["nodes"].as_array().into_iter().flatten() {
        let id = node["id"].as_u64().unwrap_or_default() as usize;
        if !issued.contains(&id) {
            continue;
        }
        let _ = writeln!(out, "-- node {id} {}", node["label"].as_str().unwrap_or(""));
        match node["sql"].as_str() {
            Some(sql) => {
                let _ = writeln!(out, "{sql};\n");
            }
            None => {
                let _ = writeln!(out, "-- (not expressible in SQL)\n");
            }
        }
    }
    if issued.is_empty() {
        let _ = writeln!(out, "-- no server queries\n");
    }
    let _ = writeln!(
        out,
        "{:<12} {:>12} {:>12} {:>12} {:>12}",
        "plan", "server_ms", "transfer_ms", "client_ms", "total_ms"
    );
    cost_line(&mut out, "recommended", &plan.est);
    cost_line(&mut out, "baseline", &baseline_plan(g, &session.cost_context()).est);
    out
}

fn issued_nodes(session: &Session, plan: &PartitionPlan) -> Vec<usize> {
    let g = session.graph();
    let mut ids: Vec<usize> = plan
        .assignment
        .iter()
        .filter(|(id, side)| **side == Side::Server && g.node(**id).kind_name() == "extent")
        .map(|(id, _)| *id)
        .collect();
    ids.extend(plan.cut_producers());
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Where bench tables come from.
pub enum BenchSource {
    /// Rows of a CSV file, repeated cyclically up to the requested size.
    File { name: String, table: Table },
    /// A synthetic generator: `flights` or `jobs`.
    Synthetic { name: String, generator: String },
}

impl BenchSource {
    pub fn parse_data(s: &str) -> anyhow::Result<BenchSource> {
        let (name, file) = split_pair(s)?;
        Ok(BenchSource::File {
            name,
            table: read_csv(Path::new(&file))?,
        })
    }

    pub fn parse_synth(s: &str) -> anyhow::Result<BenchSource> {
        let (name, generator) = split_pair(s)?;
        if !matches!(generator.as_str(), "flights" | "jobs") {
            return Err(usage(format!("unknown generator '{generator}'; use flights or jobs")));
        }
        Ok(BenchSource::Synthetic { name, generator })
    }

    fn table(&self, rows: usize, seed: u64) -> (&str, Table) {
        match self {
            BenchSource::File { name, table } => (name, cycle_rows(table, rows)),
            BenchSource::Synthetic { name, generator } => {
                let t = match generator.as_str() {
                    "flights" => synth::flights(rows, seed),
                    _ => cycle_rows(&synth::jobs(seed), rows),
                };
                (name, t)
            }
        }
    }
}

/// `rows` rows taken from `t` in order, wrapping around.
pub fn cycle_rows(t: &Table, rows: usize) -> Table {
    if t.num_rows() == 0 {
        return t.clone();
    }
    let idx: Vec<usize> = (0..rows).map(|i| i % t.num_rows()).collect();
    t.take(&idx)
}

pub struct BenchOptions {
    pub spec: PathBuf,
    pub sources: Vec<BenchSource>,
    pub rows: Vec<usize>,
    pub repeat: usize,
    pub profile: NetworkProfile,
    pub seed: u64,
}

pub const BENCH_HEADER: &str = "rows,label,repeat,server_ms,network_ms,client_ms,total_ms";

/// One cold execution of both plans at one table size.
#[derive(Clone, Debug)]
pub struct BenchRun {
    pub rows: usize,
    pub repeat: usize,
    pub baseline: TimingBreakdown,
    pub recommended: TimingBreakdown,
    /// Kinds of the recommended plan's cut producers, in node order.
    pub recommended_cut: Vec<String>,
}

/// Runs the baseline and recommended plans cold for each size and repeat,
/// calling `each` after every pair.
pub fn bench_runs(
    config: Config,
    opts: &BenchOptions,
    each: &mut dyn FnMut(&BenchRun) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    if opts.rows.is_empty() {
        bail!(usage("--rows needs at least one size"));
    }
    let text = read_spec(&opts.spec)?;
    let state = Arc::new(AppState::new(config)?);
    for &rows in &opts.rows {
        for src in &opts.sources {
            let (name, t) = src.table(rows, opts.seed);
            state.driver.ingest(name, &t)?;
        }
        for repeat in 0..opts.repeat {
            let mut session = state
                .open_session(&text, &BTreeMap::new(), opts.profile)
                .map_err(api)?;
            let base = session.execute_baseline()?;
            session.cache().clear();
            let rec = session.execute_active()?;
            let recommended_cut = session
                .plan()
                .cut_producers()
                .into_iter()
                .map(|id| session.graph().node(id).kind_name().to_string())
                .collect();
            each(&BenchRun {
                rows,
                repeat,
                baseline: base.timing,
                recommended: rec.timing,
                recommended_cut,
            })?;
        }
    }
    Ok(())
}

/// [`bench_runs`] written as CSV, one row per plan execution.
pub fn bench(config: Config, opts: &BenchOptions, out: &mut dyn Write) -> anyhow::Result<()> {
    writeln!(out, "{BENCH_HEADER}")?;
    bench_runs(config, opts, &mut |run| {
        for t in [&run.baseline, &run.recommended] {
            writeln!(
                out,
                "{},{},{},{:.3},{:.3},{:.3},{:.3}",
                run.rows,
                t.label.name(),
                run.repeat,
                t.server_ms,
                t.network_ms,
                t.client_ms,
                t.total_ms()
            )?;
        }
        Ok(())
    })
}
