//! Transform operators to relational query trees.

use super::dialect::SqlDialect;
use super::query::{RunningSum, SqlAggregate, SqlExpr, SqlQuery};
use crate::dataflow::transforms::{resolve_extent, resolve_maxbins};
use crate::dataflow::{BinLayout, DataflowGraph, NodeId, NodeKind, OperatorNode, SignalValue, Signals};
use crate::expr::{BinaryOp, Expr, Func};
use crate::spec::{AggOp, SortOrder, TransformDef};
use crate::value::Value;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SqlError {
    #[error("{what} is not supported by the {dialect} dialect")]
    UnsupportedOnDialect { what: String, dialect: String },
    #[error("cannot translate: {0}")]
    Translate(String),
    #[error("server region is not a chain from a scan: {0}")]
    Chain(String),
}

/// Expression with signal references replaced by their current values.
pub fn translate_expr(e: &Expr, signals: &Signals) -> Result<SqlExpr, SqlError> {
    Ok(match e {
        Expr::Number(v) => SqlExpr::number(*v),
        Expr::String(s) => SqlExpr::Literal(Value::string(s)),
        Expr::Boolean(b) => SqlExpr::boolean(*b),
        Expr::Field(f) => SqlExpr::Column(f.clone()),
        Expr::Signal(name) => match signals.get(name) {
            Some(SignalValue::Scalar(v)) => SqlExpr::Literal(v.clone()),
            Some(SignalValue::Extent(..)) => {
                return Err(SqlError::Translate(format!("signal '{name}' is an extent pair")))
            }
            None => return Err(SqlError::Translate(format!("signal '{name}' has no value"))),
        },
        Expr::Unary { op, operand } => SqlExpr::Unary {
            op: *op,
            operand: Box::new(translate_expr(operand, signals)?),
        },
        Expr::Binary { op, left, right } => {
            SqlExpr::binary(*op, translate_expr(left, signals)?, translate_expr(right, signals)?)
        }
        Expr::Call { func, args } => SqlExpr::Call {
            func: *func,
            args: args
                .iter()
                .map(|a| translate_expr(a, signals))
                .collect::<Result<_, _>>()?,
        },
    })
}

fn uses_regex(e: &Expr) -> bool {
    match e {
        Expr::Call { func: Func::Test, .. } => true,
        Expr::Call { args, .. } => args.iter().any(uses_regex),
        Expr::Unary { operand, .. } => uses_regex(operand),
        Expr::Binary { left, right, .. } => uses_regex(left) || uses_regex(right),
        _ => false,
    }
}

/// Whether `def` can run on `dialect` at all.
pub fn check_supported(def: &TransformDef, dialect: &SqlDialect) -> Result<(), SqlError> {
    let unsupported = |what: &str| SqlError::UnsupportedOnDialect {
        what: what.to_string(),
        dialect: dialect.name.clone(),
    };
    match def {
        TransformDef::Stack { .. } if !dialect.window_functions => Err(unsupported("stack (window functions)")),
        TransformDef::Filter { expr } | TransformDef::Formula { expr, .. }
            if !dialect.supports_regex() && uses_regex(expr) =>
        {
            Err(unsupported("test() (regular expressions)"))
        }
        _ => Ok(()),
    }
}

/// Hidden column for the bin index, under one of two names. [`BIN_INDEX`]
/// is used only when distinct indices give distinct boundaries, which lets
/// the rewriter group on it.
pub(crate) const BIN_INDEX: &str = "__bin_index";
const BIN_SLOT: &str = "__bin_slot";

fn boundaries_distinct(b: &BinLayout) -> bool {
    let at = |i: u64| b.start + b.step * i as f64;
    b.nbins <= 1 << 20 && (1..b.nbins).all(|i| at(i) > at(i - 1) && at(i) + b.step > at(i - 1) + b.step)
}

/// Output list of `child` with each update replaced in place or appended.
fn upsert_items(child: &SqlQuery, updates: Vec<(String, SqlExpr)>) -> Vec<(SqlExpr, String)> {
    let mut items: Vec<(SqlExpr, String)> = child
        .columns()
        .into_iter()
        .map(|c| (SqlExpr::Column(c.clone()), c))
        .collect();
    for (name, e) in updates {
        match items.iter_mut().find(|(_, a)| *a == name) {
            Some(slot) => slot.0 = e,
            None => items.push((e, name)),
        }
    }
    items
}

/// The query producing `def`'s result from `child`. `extent` yields its
/// one-row `(min, max)` table; see [`translate_data`] for the pass-through form.
pub fn translate_transform(
    def: &TransformDef,
    child: SqlQuery,
    signals: &Signals,
    dialect: &SqlDialect,
) -> Result<SqlQuery, SqlError> {
    if let TransformDef::Extent { field, .. } = def {
        return Ok(extent_query(field, child));
    }
    translate_data(def, child, signals, dialect)
}

/// Like [`translate_transform`], but `extent` passes its input through.
pub fn translate_data(
    def: &TransformDef,
    child: SqlQuery,
    signals: &Signals,
    dialect: &SqlDialect,
) -> Result<SqlQuery, SqlError> {
    check_supported(def, dialect)?;
    let fail = |e: crate::dataflow::TransformFailure| SqlError::Translate(e.message);
    Ok(match def {
        TransformDef::Filter { expr } => SqlQuery::Select {
            predicate: translate_expr(expr, signals)?,
            input: Box::new(child),
        },
        TransformDef::Formula { expr, output } => {
            let e = translate_expr(expr, signals)?;
            SqlQuery::Project {
                items: upsert_items(&child, vec![(output.clone(), e)]),
                input: Box::new(child),
            }
        }
        TransformDef::Extent { .. } => child,
        TransformDef::Bin {
            field,
            extent,
            maxbins,
            outputs,
        } => {
            let (lo, hi) = resolve_extent(extent, signals).map_err(fail)?;
            let m = resolve_maxbins(maxbins, signals).map_err(fail)?;
            let (Some(lo), Some(hi)) = (lo, hi) else {
                let filtered = SqlQuery::Select {
                    predicate: SqlExpr::boolean(false),
                    input: Box::new(child),
                };
                return Ok(SqlQuery::Project {
                    items: upsert_items(
                        &filtered,
                        vec![
                            (outputs[0].clone(), SqlExpr::Literal(Value::Null)),
                            (outputs[1].clone(), SqlExpr::Literal(Value::Null)),
                        ],
                    ),
                    input: Box::new(filtered),
                });
            };
            let b = BinLayout::new(lo, hi, m);
            // The index is a hidden column so that grouping on the bin
            // boundaries can group on the index instead.
            let offset = SqlExpr::binary(
                BinaryOp::Div,
                SqlExpr::binary(BinaryOp::Sub, SqlExpr::column(field), SqlExpr::number(b.start)),
                SqlExpr::number(b.step),
            );
            let index = if boundaries_distinct(&b) { BIN_INDEX } else { BIN_SLOT };
            let filtered = SqlQuery::Select {
                predicate: SqlExpr::is_not_null(SqlExpr::column(field)),
                input: Box::new(child),
            };
            let bin0 = SqlExpr::binary(
                BinaryOp::Add,
                SqlExpr::number(b.start),
                SqlExpr::binary(BinaryOp::Mul, SqlExpr::number(b.step), SqlExpr::column(index)),
            );
            let bin1 = SqlExpr::binary(BinaryOp::Add, bin0.clone(), SqlExpr::number(b.step));
            let items = upsert_items(
                &filtered,
                vec![(outputs[0].clone(), bin0), (outputs[1].clone(), bin1)],
            );
            let indexed = SqlQuery::Project {
                items: upsert_items(
                    &filtered,
                    vec![(
                        index.to_string(),
                        SqlExpr::BinIndex {
                            offset: Box::new(offset),
                            last: (b.nbins - 1) as f64,
                        },
                    )],
                ),
                input: Box::new(filtered),
            };
            SqlQuery::Project {
                items,
                input: Box::new(indexed),
            }
        }
        TransformDef::Aggregate { groupby, measures } => SqlQuery::GroupBy {
            keys: groupby.clone(),
            aggs: measures
                .iter()
                .map(|m| SqlAggregate {
                    op: m.op,
                    arg: match m.op {
                        AggOp::Count => None,
                        _ => m.field.as_ref().map(SqlExpr::column),
                    },
                    alias: m.output.clone(),
                })
                .collect(),
            nonempty: groupby.is_empty(),
            input: Box::new(child),
        },
        TransformDef::Collect { sort } => {
            // remaining columns make the order total
            let mut keys: Vec<(String, SortOrder)> =
                sort.iter().map(|k| (k.field.clone(), k.order)).collect();
            for c in child.columns() {
                if !keys.iter().any(|(k, _)| *k == c) {
                    keys.push((c, SortOrder::Ascending));
                }
            }
            SqlQuery::OrderBy {
                keys,
                input: Box::new(child),
            }
        }
        TransformDef::Stack {
            groupby,
            sort,
            field,
            outputs,
        } => {
            let cols = child.columns();
            let mut order = vec![(sort.field.clone(), sort.order)];
            order.extend(
                cols.iter()
                    .filter(|c| **c != sort.field)
                    .map(|c| (c.clone(), SortOrder::Ascending)),
            );
            let mut running = "__vp_running".to_string();
            while cols.contains(&running) {
                running.push('_');
            }
            let value = SqlExpr::Coalesce(vec![SqlExpr::column(field), SqlExpr::number(0.0)]);
            let window = SqlQuery::Window {
                partition: groupby.clone(),
                order,
                sums: vec![RunningSum {
                    expr: value.clone(),
                    alias: running.clone(),
                }],
                input: Box::new(child),
            };
            let y1 = SqlExpr::column(&running);
            let y0 = SqlExpr::binary(BinaryOp::Sub, y1.clone(), value);
            let mut items: Vec<(SqlExpr, String)> =
                cols.iter().map(|c| (SqlExpr::column(c), c.clone())).collect();
            for (name, e) in [(outputs[0].clone(), y0), (outputs[1].clone(), y1)] {
                match items.iter_mut().find(|(_, a)| *a == name) {
                    Some(slot) => slot.0 = e,
                    None => items.push((e, name)),
                }
            }
            SqlQuery::Project {
                items,
                input: Box::new(window),
            }
        }
        TransformDef::Project { fields } => SqlQuery::Project {
            items: fields.iter().map(|f| (SqlExpr::column(f), f.clone())).collect(),
            input: Box::new(child),
        },
    })
}

/// `SELECT MIN(field) AS min, MAX(field) AS max FROM child`.
pub fn extent_query(field: &str, child: SqlQuery) -> SqlQuery {
    SqlQuery::GroupBy {
        keys: vec![],
        aggs: vec![
            SqlAggregate {
                op: AggOp::Min,
                arg: Some(SqlExpr::column(field)),
                alias: "min".into(),
            },
            SqlAggregate {
                op: AggOp::Max,
                arg: Some(SqlExpr::column(field)),
                alias: "max".into(),
            },
        ],
        nonempty: false,
        input: Box::new(child),
    }
}

/// Translates a single operator node over `child`.
pub fn translate_operator(
    node: &OperatorNode,
    child: SqlQuery,
    signals: &Signals,
    dialect: &SqlDialect,
) -> Result<SqlQuery, SqlError> {
    match &node.kind {
        NodeKind::Transform(t) => translate_transform(t, child, signals, dialect),
        _ => Err(SqlError::Translate(format!("{} is not a transform", node.label()))),
    }
}

/// Nests the queries of a server chain `[scan, t1, t2, ...]` into one query
/// over `base`. Extents inside the chain pass their input through.
pub fn merge_region(
    g: &DataflowGraph,
    chain: &[NodeId],
    base: &str,
    signals: &Signals,
    dialect: &SqlDialect,
) -> Result<SqlQuery, SqlError> {
    let first = chain
        .first()
        .ok_or_else(|| SqlError::Chain("empty chain".into()))?;
    let scan = g.node(*first);
    if !scan.is_scan() {
        return Err(SqlError::Chain(format!("{} is not a scan", scan.label())));
    }
    let mut q = SqlQuery::scan(base, scan.output_schema.names());
    for pair in chain.windows(2) {
        let node = g.node(pair[1]);
        if node.input != Some(pair[0]) {
            return Err(SqlError::Chain(format!(
                "{} does not read from {}",
                node.label(),
                g.node(pair[0]).label()
            )));
        }
        let t = node
            .transform()
            .ok_or_else(|| SqlError::Chain(format!("{} is not a transform", node.label())))?;
        q = translate_data(t, q, signals, dialect)?;
    }
    Ok(q)
}

/// The query computing node `id`'s result from its scan, over the base table
/// `base(source)`. For an extent this is its `(min, max)` query.
pub fn node_query(
    g: &DataflowGraph,
    id: NodeId,
    base: &dyn Fn(&str) -> String,
    dialect: &SqlDialect,
) -> Result<SqlQuery, SqlError> {
    node_query_with(g, id, base, dialect, g.signal_values())
}

/// [`node_query`] with explicit signal values.
pub fn node_query_with(
    g: &DataflowGraph,
    id: NodeId,
    base: &dyn Fn(&str) -> String,
    dialect: &SqlDialect,
    signals: &Signals,
) -> Result<SqlQuery, SqlError> {
    let node = g.node(id);
    if node.is_signal() {
        return Err(SqlError::Translate(format!("{} is not a data node", node.label())));
    }
    let mut chain: Vec<NodeId> = g.upstream(id);
    chain.reverse();
    let is_extent = matches!(node.transform(), Some(TransformDef::Extent { .. }));
    if !is_extent {
        chain.push(id);
    }
    let scan = g.node(chain[0]);
    let NodeKind::Scan { source } = &scan.kind else {
        return Err(SqlError::Chain(format!("{} is not a scan", scan.label())));
    };
    let q = merge_region(g, &chain, &base(source), signals, dialect)?;
    match node.transform() {
        Some(TransformDef::Extent { field, .. }) => Ok(extent_query(field, q)),
        _ => Ok(q),
    }
}
