//! In-memory implementations of the eight transform kinds.

use std::collections::HashMap;

use super::bin::BinLayout;
use super::eval_expr::{eval_expr, RegexCache, SignalValue, Signals};
use crate::expr::Expr;
use crate::spec::{AggOp, ExtentRef, Measure, Param, SortKey, SortOrder, TransformDef};
use crate::table::{Column, Table};
use crate::value::{Field, GroupValue, ScalarType, Schema, Value};

/// Failure while running a transform, with the offending row when known.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{}{message}", row.map(|r| format!("row {r}: ")).unwrap_or_default())]
pub struct TransformFailure {
    pub row: Option<usize>,
    pub message: String,
}

impl TransformFailure {
    fn new(message: impl Into<String>) -> Self {
        TransformFailure {
            row: None,
            message: message.into(),
        }
    }

    fn at(row: usize, message: impl Into<String>) -> Self {
        TransformFailure {
            row: Some(row),
            message: message.into(),
        }
    }
}

type Result<T> = std::result::Result<T, TransformFailure>;

/// Result of one transform application.
#[derive(Clone, Debug)]
pub struct TransformOutput {
    pub table: Table,
    /// `[min, max]` published by `extent`.
    pub published: Option<(Value, Value)>,
    /// Rows removed because the binned field was null.
    pub dropped_nulls: usize,
}

/// Applies a transform to `input`. `extent` passes its input through and
/// publishes the pair; use [`extent`] for the one-row table form.
pub fn apply_transform(
    def: &TransformDef,
    input: &Table,
    signals: &Signals,
) -> Result<TransformOutput> {
    let mut out = TransformOutput {
        table: Table::empty(Schema::default()),
        published: None,
        dropped_nulls: 0,
    };
    out.table = match def {
        TransformDef::Filter { expr } => filter(input, expr, signals)?,
        TransformDef::Formula { expr, output } => formula(input, expr, output, signals)?,
        TransformDef::Extent { field, .. } => {
            let t = extent(input, field)?;
            out.published = Some((t.value(0, 0), t.value(0, 1)));
            input.clone()
        }
        TransformDef::Bin {
            field,
            extent,
            maxbins,
            outputs,
        } => {
            let (lo, hi) = resolve_extent(extent, signals)?;
            let m = resolve_maxbins(maxbins, signals)?;
            let (t, dropped) = bin(input, field, lo, hi, m, outputs)?;
            out.dropped_nulls = dropped;
            t
        }
        TransformDef::Aggregate { groupby, measures } => aggregate(input, groupby, measures)?,
        TransformDef::Collect { sort } => collect(input, sort)?,
        TransformDef::Stack {
            groupby,
            sort,
            field,
            outputs,
        } => stack(input, groupby, sort, field, outputs)?,
        TransformDef::Project { fields } => project(input, fields)?,
    };
    Ok(out)
}

pub fn resolve_extent(extent: &ExtentRef, signals: &Signals) -> Result<(Option<f64>, Option<f64>)> {
    match extent {
        ExtentRef::Literal(lo, hi) => Ok((Some(*lo), Some(*hi))),
        ExtentRef::Signal(name) => match signals.get(name) {
            Some(SignalValue::Extent(lo, hi)) => Ok((lo.as_f64(), hi.as_f64())),
            Some(_) => Err(TransformFailure::new(format!("signal '{name}' is not an extent"))),
            None => Err(TransformFailure::new(format!("signal '{name}' has no value"))),
        },
    }
}

pub fn resolve_maxbins(maxbins: &Param<f64>, signals: &Signals) -> Result<f64> {
    match maxbins {
        Param::Literal(m) => Ok(*m),
        Param::Signal(name) => signals
            .get(name)
            .and_then(SignalValue::scalar)
            .and_then(Value::as_f64)
            .ok_or_else(|| TransformFailure::new(format!("signal '{name}' is not a number"))),
    }
}

fn column_index(input: &Table, name: &str) -> Result<usize> {
    input
        .schema()
        .index_of(name)
        .ok_or_else(|| TransformFailure::new(format!("missing field '{name}'")))
}

fn numeric_column<'a>(input: &'a Table, name: &str) -> Result<&'a [Option<f64>]> {
    match input.column(column_index(input, name)?) {
        Column::Number(v) => Ok(v),
        other => Err(TransformFailure::new(format!(
            "field '{name}' is {}, expected number",
            other.scalar_type()
        ))),
    }
}

/// Rows where `expr` is exactly true.
pub fn filter(input: &Table, expr: &Expr, signals: &Signals) -> Result<Table> {
    let mut regexes = RegexCache::default();
    let mut keep = Vec::new();
    for r in 0..input.num_rows() {
        match eval_expr(expr, input, r, signals, &mut regexes).map_err(|m| TransformFailure::at(r, m))? {
            Value::Boolean(true) => keep.push(r),
            Value::Boolean(false) | Value::Null => {}
            v => return Err(TransformFailure::at(r, format!("filter produced non-boolean {v:?}"))),
        }
    }
    Ok(input.take(&keep))
}

/// Input plus the computed column (replacing a same-named column).
pub fn formula(input: &Table, expr: &Expr, output: &str, signals: &Signals) -> Result<Table> {
    let mut regexes = RegexCache::default();
    let mut values = Vec::with_capacity(input.num_rows());
    let mut ty = None;
    for r in 0..input.num_rows() {
        let v = eval_expr(expr, input, r, signals, &mut regexes).map_err(|m| TransformFailure::at(r, m))?;
        if ty.is_none() {
            ty = v.scalar_type();
        }
        values.push(v);
    }
    let ty = match ty {
        Some(t) => t,
        None => crate::expr::check_expr(expr, input.schema(), &|name| {
            signals.get(name).map(|v| match v {
                SignalValue::Scalar(v) => crate::expr::SignalType::Scalar(v.scalar_type().unwrap_or(ScalarType::Number)),
                SignalValue::Extent(..) => crate::expr::SignalType::Extent,
            })
        })
        .unwrap_or(ScalarType::Number),
    };
    let column = Column::from_values(ty, values)
        .map_err(|(r, v)| TransformFailure::at(r, format!("formula produced {v:?}, expected {ty}")))?;
    let mut t = input.clone();
    t.upsert_column(Field::new(output, ty), column);
    Ok(t)
}

/// One-row `(min, max)` table over the non-null values of `field`.
pub fn extent(input: &Table, field: &str) -> Result<Table> {
    let col = numeric_column(input, field)?;
    let mut lo: Option<f64> = None;
    let mut hi: Option<f64> = None;
    for v in col.iter().flatten() {
        lo = Some(lo.map_or(*v, |m| m.min(*v)));
        hi = Some(hi.map_or(*v, |m| m.max(*v)));
    }
    let schema = Schema(vec![
        Field::new("min", ScalarType::Number),
        Field::new("max", ScalarType::Number),
    ]);
    Table::from_columns(
        schema,
        vec![Column::Number(vec![lo]), Column::Number(vec![hi])],
    )
    .map_err(|e| TransformFailure::new(e.to_string()))
}

/// Adds `[bin0, bin1)` bounds. Rows with a null `field` are dropped; a null
/// extent (empty upstream) drops everything.
pub fn bin(
    input: &Table,
    field: &str,
    lo: Option<f64>,
    hi: Option<f64>,
    maxbins: f64,
    outputs: &[String; 2],
) -> Result<(Table, usize)> {
    let col = numeric_column(input, field)?;
    let (Some(lo), Some(hi)) = (lo, hi) else {
        let t = input.take(&[]);
        return Ok((with_bins(t, outputs, vec![], vec![]), input.num_rows()));
    };
    let layout = BinLayout::new(lo, hi, maxbins);
    let mut keep = Vec::with_capacity(col.len());
    let mut b0 = Vec::with_capacity(col.len());
    let mut b1 = Vec::with_capacity(col.len());
    for (r, v) in col.iter().enumerate() {
        if let Some(v) = v {
            let (a, b) = layout.bounds(*v);
            keep.push(r);
            b0.push(Some(a));
            b1.push(Some(b));
        }
    }
    let dropped = col.len() - keep.len();
    let t = if dropped == 0 { input.clone() } else { input.take(&keep) };
    Ok((with_bins(t, outputs, b0, b1), dropped))
}

fn with_bins(mut t: Table, outputs: &[String; 2], b0: Vec<Option<f64>>, b1: Vec<Option<f64>>) -> Table {
    t.upsert_column(Field::new(&outputs[0], ScalarType::Number), Column::Number(b0));
    t.upsert_column(Field::new(&outputs[1], ScalarType::Number), Column::Number(b1));
    t
}

#[derive(Clone, Copy)]
struct Acc {
    rows: u64,
    n: u64,
    sum: f64,
    min: f64,
    max: f64,
}

impl Acc {
    fn new() -> Acc {
        Acc {
            rows: 0,
            n: 0,
            sum: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    fn finish(&self, op: AggOp) -> Option<f64> {
        match op {
            AggOp::Count => Some(self.rows as f64),
            _ if self.n == 0 => None,
            AggOp::Sum => Some(self.sum),
            AggOp::Mean => Some(self.sum / self.n as f64),
            AggOp::Min => Some(self.min),
            AggOp::Max => Some(self.max),
        }
    }
}

/// One row per distinct `groupby` tuple, in first-seen order. Nulls group
/// together. With no groupby, empty input yields no rows.
pub fn aggregate(input: &Table, groupby: &[String], measures: &[Measure]) -> Result<Table> {
    let key_cols: Vec<usize> = groupby
        .iter()
        .map(|g| column_index(input, g))
        .collect::<Result<_>>()?;
    let value_cols: Vec<Option<&[Option<f64>]>> = measures
        .iter()
        .map(|m| match (&m.field, m.op) {
            (_, AggOp::Count) | (None, _) => Ok(None),
            (Some(f), _) => numeric_column(input, f).map(Some),
        })
        .collect::<Result<_>>()?;

    let mut index: HashMap<Vec<GroupValue>, usize> = HashMap::new();
    let mut first_rows: Vec<usize> = Vec::new();
    let mut accs: Vec<Vec<Acc>> = Vec::new();
    for r in 0..input.num_rows() {
        let key: Vec<GroupValue> = key_cols.iter().map(|&c| GroupValue(input.value(r, c))).collect();
        let g = *index.entry(key).or_insert_with(|| {
            first_rows.push(r);
            accs.push(vec![Acc::new(); measures.len()]);
            first_rows.len() - 1
        });
        for (acc, col) in accs[g].iter_mut().zip(&value_cols) {
            acc.rows += 1;
            if let Some(Some(v)) = col.map(|c| c[r]) {
                acc.n += 1;
                acc.sum += v;
                acc.min = acc.min.min(v);
                acc.max = acc.max.max(v);
            }
        }
    }

    let mut fields = Vec::new();
    let mut columns = Vec::new();
    for &c in &key_cols {
        fields.push(input.schema().fields()[c].clone());
        columns.push(input.column(c).take(&first_rows));
    }
    for (k, m) in measures.iter().enumerate() {
        fields.push(Field::new(&m.output, ScalarType::Number));
        columns.push(Column::Number(accs.iter().map(|a| a[k].finish(m.op)).collect()));
    }
    Table::from_columns(Schema(fields), columns).map_err(|e| TransformFailure::new(e.to_string()))
}

fn compare_keys(input: &Table, keys: &[(usize, SortOrder)], a: usize, b: usize) -> std::cmp::Ordering {
    for &(c, order) in keys {
        let (va, vb) = (input.value(a, c), input.value(b, c));
        let ord = match (va.is_null(), vb.is_null(), order) {
            // nulls last regardless of direction
            (false, false, SortOrder::Descending) => vb.sort_cmp(&va),
            _ => va.sort_cmp(&vb),
        };
        if ord.is_ne() {
            return ord;
        }
    }
    std::cmp::Ordering::Equal
}

/// Stable sort; nulls last in both directions.
pub fn collect(input: &Table, sort: &[SortKey]) -> Result<Table> {
    let keys: Vec<(usize, SortOrder)> = sort
        .iter()
        .map(|k| Ok((column_index(input, &k.field)?, k.order)))
        .collect::<Result<_>>()?;
    let mut idx: Vec<usize> = (0..input.num_rows()).collect();
    idx.sort_by(|&a, &b| compare_keys(input, &keys, a, b));
    Ok(input.take(&idx))
}

/// Within each `groupby` partition, rows ordered by the sort key (ties broken
/// by the remaining input columns, ascending) get `y0` = running total before
/// the row and `y1 = y0 + value`. Null values count as zero. Row order of the
/// input is preserved.
pub fn stack(
    input: &Table,
    groupby: &[String],
    sort: &SortKey,
    field: &str,
    outputs: &[String; 2],
) -> Result<Table> {
    let values = numeric_column(input, field)?;
    let group_cols: Vec<usize> = groupby
        .iter()
        .map(|g| column_index(input, g))
        .collect::<Result<_>>()?;
    let sort_col = column_index(input, &sort.field)?;
    let mut keys = vec![(sort_col, sort.order)];
    keys.extend(
        (0..input.num_columns())
            .filter(|&c| c != sort_col)
            .map(|c| (c, SortOrder::Ascending)),
    );

    let mut partitions: HashMap<Vec<GroupValue>, Vec<usize>> = HashMap::new();
    for r in 0..input.num_rows() {
        let key: Vec<GroupValue> = group_cols.iter().map(|&c| GroupValue(input.value(r, c))).collect();
        partitions.entry(key).or_default().push(r);
    }
    let mut y0 = vec![None; input.num_rows()];
    let mut y1 = vec![None; input.num_rows()];
    for rows in partitions.values_mut() {
        rows.sort_by(|&a, &b| compare_keys(input, &keys, a, b));
        let mut running = 0.0;
        for &r in rows.iter() {
            let v = values[r].unwrap_or(0.0);
            y0[r] = Some(running);
            running += v;
            y1[r] = Some(running);
        }
    }
    let mut t = input.clone();
    t.upsert_column(Field::new(&outputs[0], ScalarType::Number), Column::Number(y0));
    t.upsert_column(Field::new(&outputs[1], ScalarType::Number), Column::Number(y1));
    Ok(t)
}

/// The listed columns, in the listed order.
pub fn project(input: &Table, fields: &[String]) -> Result<Table> {
    input
        .project(fields)
        .map_err(|e| TransformFailure::new(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbers(name: &str, vals: &[Option<f64>]) -> Table {
        Table::from_columns(
            Schema(vec![Field::new(name, ScalarType::Number)]),
            vec![Column::Number(vals.to_vec())],
        )
        .unwrap()
    }

    #[test]
    fn count_without_groupby() {
        let t = numbers("x", &vec![Some(1.0); 42]);
        let m = Measure {
            op: AggOp::Count,
            field: None,
            output: "count".into(),
        };
        let out = aggregate(&t, &[], &[m.clone()]).unwrap();
        assert_eq!(out.num_rows(), 1);
        assert_eq!(out.value(0, 0), Value::number(42.0));
        assert_eq!(aggregate(&numbers("x", &[]), &[], &[m]).unwrap().num_rows(), 0);
    }

    #[test]
    fn stack_prefix_sums() {
        let t = numbers("v", &[Some(3.0), Some(1.0), Some(2.0)]);
        let key = SortKey {
            field: "v".into(),
            order: SortOrder::Ascending,
        };
        let out = stack(&t, &[], &key, "v", &["y0".into(), "y1".into()]).unwrap();
        let pairs: Vec<(Value, Value)> = (0..3).map(|r| (out.value(r, 1), out.value(r, 2))).collect();
        assert_eq!(pairs[1], (Value::number(0.0), Value::number(1.0)));
        assert_eq!(pairs[2], (Value::number(1.0), Value::number(3.0)));
        assert_eq!(pairs[0], (Value::number(3.0), Value::number(6.0)));
    }

    #[test]
    fn extent_ignores_nulls_and_empty_is_null() {
        let t = extent(&numbers("x", &[None, Some(4.0), Some(-2.0)]), "x").unwrap();
        assert_eq!(t.row(0), vec![Value::number(-2.0), Value::number(4.0)]);
        let t = extent(&numbers("x", &[]), "x").unwrap();
        assert_eq!(t.row(0), vec![Value::Null, Value::Null]);
    }

    #[test]
    fn bin_drops_nulls() {
        let vals: Vec<Option<f64>> = (0..=1000).step_by(50).map(|v| Some(v as f64)).chain([None]).collect();
        let (t, dropped) = bin(&numbers("x", &vals), "x", Some(0.0), Some(1000.0), 10.0, &["b0".into(), "b1".into()]).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(t.num_rows(), 21);
        assert_eq!(t.value(20, 1), Value::number(900.0));
        assert_eq!(t.value(3, 1), Value::number(100.0));
    }

    #[test]
    fn collect_is_stable_with_nulls_last() {
        let t = Table::from_rows(
            Schema(vec![Field::new("k", ScalarType::Number), Field::new("i", ScalarType::Number)]),
            vec![
                vec![Value::Null, 0.0.into()],
                vec![1.0.into(), 1.0.into()],
                vec![2.0.into(), 2.0.into()],
                vec![1.0.into(), 3.0.into()],
            ],
        )
        .unwrap();
        let desc = collect(&t, &[SortKey { field: "k".into(), order: SortOrder::Descending }]).unwrap();
        let order: Vec<Value> = (0..4).map(|r| desc.value(r, 1)).collect();
        assert_eq!(order, vec![2.0.into(), 1.0.into(), 3.0.into(), 0.0.into()]);
    }
}
