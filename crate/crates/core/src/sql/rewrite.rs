//! Semantics-preserving rewrites: predicate pushdown, projection pruning,
//! expression simplification and grouping on bin indices, applied to a
//! fixpoint.

use std::collections::{BTreeMap, BTreeSet};

use super::query::{SqlExpr, SqlQuery};
use super::translate::BIN_INDEX;
use crate::dataflow::eval_expr::{binary, call, logic};
use crate::dataflow::RegexCache;
use crate::expr::{BinaryOp, UnaryOp};
use crate::value::Value;

/// Upper bound on rewrite passes.
pub const MAX_PASSES: usize = 100;

pub fn rewrite(q: &SqlQuery) -> SqlQuery {
    rewrite_counted(q).0
}

/// Rewrites to a fixpoint and returns the number of passes taken. A query
/// that no rule changes takes one pass.
pub fn rewrite_counted(q: &SqlQuery) -> (SqlQuery, usize) {
    let mut cur = q.clone();
    let mut regexes = RegexCache::default();
    for pass in 1..=MAX_PASSES {
        let next = simplify(&cur, &mut regexes);
        let next = pushdown(next);
        let next = group_on_index(next);
        let next = prune(next, None);
        if next == cur {
            return (cur, pass);
        }
        cur = next;
    }
    (cur, MAX_PASSES)
}

// ---- simplification

fn simplify(q: &SqlQuery, rx: &mut RegexCache) -> SqlQuery {
    use SqlQuery::*;
    match q {
        Scan { .. } => q.clone(),
        Select { predicate, input } => {
            let input = simplify(input, rx);
            let predicate = fold(predicate, rx);
            if predicate.is_true() {
                input
            } else {
                Select {
                    predicate,
                    input: Box::new(input),
                }
            }
        }
        Project { items, input } => {
            let input = simplify(input, rx);
            let items: Vec<(SqlExpr, String)> =
                items.iter().map(|(e, a)| (fold(e, rx), a.clone())).collect();
            let identity = items.len() == input.columns().len()
                && items
                    .iter()
                    .zip(input.columns())
                    .all(|((e, a), c)| *a == c && matches!(e, SqlExpr::Column(x) if *x == c));
            if identity {
                input
            } else {
                Project {
                    items,
                    input: Box::new(input),
                }
            }
        }
        GroupBy {
            keys,
            aggs,
            nonempty,
            input,
        } => GroupBy {
            keys: keys.clone(),
            aggs: aggs
                .iter()
                .map(|a| {
                    let mut a = a.clone();
                    a.arg = a.arg.as_ref().map(|e| fold(e, rx));
                    a
                })
                .collect(),
            nonempty: *nonempty,
            input: Box::new(simplify(input, rx)),
        },
        Window {
            partition,
            order,
            sums,
            input,
        } => Window {
            partition: partition.clone(),
            order: order.clone(),
            sums: sums
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.expr = fold(&s.expr, rx);
                    s
                })
                .collect(),
            input: Box::new(simplify(input, rx)),
        },
        OrderBy { keys, input } => OrderBy {
            keys: keys.clone(),
            input: Box::new(simplify(input, rx)),
        },
        Limit { n, input } => Limit {
            n: *n,
            input: Box::new(simplify(input, rx)),
        },
    }
}

fn lit(v: Value) -> SqlExpr {
    SqlExpr::Literal(v)
}

/// Constant folding with the interpreter's value semantics. Anything that
/// fails to evaluate is left as is.
pub fn fold(e: &SqlExpr, rx: &mut RegexCache) -> SqlExpr {
    match e {
        SqlExpr::Column(_) | SqlExpr::Literal(_) => e.clone(),
        SqlExpr::Unary { op, operand } => {
            let x = fold(operand, rx);
            match (op, &x) {
                (_, SqlExpr::Literal(Value::Null)) => lit(Value::Null),
                (UnaryOp::Neg, SqlExpr::Literal(Value::Number(v))) => lit(Value::number(-v)),
                (UnaryOp::Not, SqlExpr::Literal(Value::Boolean(b))) => lit(Value::Boolean(!b)),
                (
                    UnaryOp::Not,
                    SqlExpr::Unary {
                        op: UnaryOp::Not,
                        operand: inner,
                    },
                ) => (**inner).clone(),
                _ => SqlExpr::Unary {
                    op: *op,
                    operand: Box::new(x),
                },
            }
        }
        SqlExpr::Binary { op, left, right } => {
            let l = fold(left, rx);
            let r = fold(right, rx);
            if let (Some(a), Some(b)) = (l.as_literal(), r.as_literal()) {
                let v = match op {
                    BinaryOp::And => logic(a.clone(), b.clone(), false),
                    BinaryOp::Or => logic(a.clone(), b.clone(), true),
                    _ => binary(*op, a.clone(), b.clone()),
                };
                if let Ok(v) = v {
                    return lit(v);
                }
            }
            if matches!(op, BinaryOp::And | BinaryOp::Or) {
                let is_or = *op == BinaryOp::Or;
                for (a, b) in [(&l, &r), (&r, &l)] {
                    match a.as_literal() {
                        Some(Value::Boolean(v)) if *v == is_or => return lit(Value::Boolean(is_or)),
                        Some(Value::Boolean(_)) => return b.clone(),
                        _ => {}
                    }
                }
            }
            SqlExpr::binary(*op, l, r)
        }
        SqlExpr::Call { func, args } => {
            let args: Vec<SqlExpr> = args.iter().map(|a| fold(a, rx)).collect();
            let values: Option<Vec<Value>> = args.iter().map(|a| a.as_literal().cloned()).collect();
            if let Some(values) = values {
                if let Ok(v) = call(*func, &values, rx) {
                    return lit(v);
                }
            }
            SqlExpr::Call { func: *func, args }
        }
        SqlExpr::IsNull { expr, negated } => {
            let x = fold(expr, rx);
            match x.as_literal() {
                Some(v) => lit(Value::Boolean(v.is_null() != *negated)),
                None => SqlExpr::IsNull {
                    expr: Box::new(x),
                    negated: *negated,
                },
            }
        }
        SqlExpr::Coalesce(args) => {
            let mut out: Vec<SqlExpr> = args
                .iter()
                .map(|a| fold(a, rx))
                .skip_while(|a| matches!(a, SqlExpr::Literal(Value::Null)))
                .collect();
            match out.first() {
                None => lit(Value::Null),
                Some(SqlExpr::Literal(v)) => lit(v.clone()),
                Some(_) if out.len() == 1 => out.pop().unwrap(),
                Some(_) => SqlExpr::Coalesce(out),
            }
        }
        SqlExpr::BinIndex { offset, last } => {
            let x = fold(offset, rx);
            match x.as_literal() {
                Some(Value::Null) => lit(Value::Null),
                Some(Value::Number(v)) => lit(Value::number(v.floor().max(0.0).min(*last))),
                _ => SqlExpr::BinIndex {
                    offset: Box::new(x),
                    last: *last,
                },
            }
        }
    }
}

// ---- predicate pushdown

fn pushdown(q: SqlQuery) -> SqlQuery {
    use SqlQuery::*;
    match q {
        Scan { .. } => q,
        Select { predicate, input } => push_select(predicate, pushdown(*input)),
        Project { items, input } => Project {
            items,
            input: Box::new(pushdown(*input)),
        },
        GroupBy {
            keys,
            aggs,
            nonempty,
            input,
        } => GroupBy {
            keys,
            aggs,
            nonempty,
            input: Box::new(pushdown(*input)),
        },
        Window {
            partition,
            order,
            sums,
            input,
        } => Window {
            partition,
            order,
            sums,
            input: Box::new(pushdown(*input)),
        },
        OrderBy { keys, input } => OrderBy {
            keys,
            input: Box::new(pushdown(*input)),
        },
        Limit { n, input } => Limit {
            n,
            input: Box::new(pushdown(*input)),
        },
    }
}

/// Places `Select(p)` over `input`, moving it below `input` where that is
/// equivalent.
fn push_select(p: SqlExpr, input: SqlQuery) -> SqlQuery {
    use SqlQuery::*;
    let cols = p.columns();
    match input {
        Select { predicate, input } => Select {
            predicate: SqlExpr::and(predicate, p),
            input,
        },
        Project { items, input } => {
            let sources: BTreeMap<&str, &str> = items
                .iter()
                .filter_map(|(e, a)| match e {
                    SqlExpr::Column(c) => Some((a.as_str(), c.as_str())),
                    _ => None,
                })
                .collect();
            if cols.iter().all(|c| sources.contains_key(c.as_str())) {
                let mapped = p.map_columns(&|c| SqlExpr::column(sources[c]));
                Project {
                    items,
                    input: Box::new(push_select(mapped, *input)),
                }
            } else {
                Select {
                    predicate: p,
                    input: Box::new(Project { items, input }),
                }
            }
        }
        OrderBy { keys, input } => OrderBy {
            keys,
            input: Box::new(push_select(p, *input)),
        },
        GroupBy {
            keys,
            aggs,
            nonempty,
            input,
        } if cols.iter().all(|c| keys.contains(c)) && (!keys.is_empty() || nonempty) => GroupBy {
            keys,
            aggs,
            nonempty,
            input: Box::new(push_select(p, *input)),
        },
        Window {
            partition,
            order,
            sums,
            input,
        } if cols.iter().all(|c| partition.contains(c)) => Window {
            partition,
            order,
            sums,
            input: Box::new(push_select(p, *input)),
        },
        other => Select {
            predicate: p,
            input: Box::new(other),
        },
    }
}

// ---- grouping on bin indices

/// `GroupBy` over a `Project` whose group keys are computed from the hidden
/// bin index alone groups on the index and computes the keys afterwards.
/// Bin translation only names that column when the map from index to
/// boundaries is injective, so the groups are the same.
fn group_on_index(q: SqlQuery) -> SqlQuery {
    use SqlQuery::*;
    match q {
        Scan { .. } => q,
        Select { predicate, input } => Select {
            predicate,
            input: Box::new(group_on_index(*input)),
        },
        Project { items, input } => Project {
            items,
            input: Box::new(group_on_index(*input)),
        },
        GroupBy {
            keys,
            aggs,
            nonempty,
            input,
        } => {
            let input = group_on_index(*input);
            match collapse_keys(&keys, &aggs, &input) {
                Some(q) => q,
                None => GroupBy {
                    keys,
                    aggs,
                    nonempty,
                    input: Box::new(input),
                },
            }
        }
        Window {
            partition,
            order,
            sums,
            input,
        } => Window {
            partition,
            order,
            sums,
            input: Box::new(group_on_index(*input)),
        },
        OrderBy { keys, input } => OrderBy {
            keys,
            input: Box::new(group_on_index(*input)),
        },
        Limit { n, input } => Limit {
            n,
            input: Box::new(group_on_index(*input)),
        },
    }
}

fn collapse_keys(keys: &[String], aggs: &[super::query::SqlAggregate], input: &SqlQuery) -> Option<SqlQuery> {
    let SqlQuery::Project { items, input: below } = input else {
        return None;
    };
    if !below.columns().iter().any(|c| c == BIN_INDEX)
        || keys.iter().any(|k| k == BIN_INDEX)
        || aggs.iter().any(|a| a.alias == BIN_INDEX)
    {
        return None;
    }
    let index_only = |e: &SqlExpr| {
        let cols = e.columns();
        cols.len() == 1 && cols.contains(BIN_INDEX)
    };
    let expr_of = |k: &String| items.iter().find(|(_, a)| a == k).map(|(e, _)| e);
    let derived: Vec<bool> = keys
        .iter()
        .map(|k| expr_of(k).is_some_and(index_only))
        .collect();
    if !derived.iter().any(|d| *d) {
        return None;
    }
    let mut inner_items = items.clone();
    if !inner_items.iter().any(|(_, a)| a == BIN_INDEX) {
        inner_items.push((SqlExpr::column(BIN_INDEX), BIN_INDEX.to_string()));
    }
    let mut new_keys: Vec<String> = keys
        .iter()
        .zip(&derived)
        .filter(|(_, d)| !**d)
        .map(|(k, _)| k.clone())
        .collect();
    new_keys.push(BIN_INDEX.to_string());
    let grouped = SqlQuery::GroupBy {
        keys: new_keys,
        aggs: aggs.to_vec(),
        nonempty: false,
        input: Box::new(SqlQuery::Project {
            items: inner_items,
            input: below.clone(),
        }),
    };
    let mut out: Vec<(SqlExpr, String)> = keys
        .iter()
        .zip(&derived)
        .map(|(k, d)| match (d, expr_of(k)) {
            (true, Some(e)) => (e.clone(), k.clone()),
            _ => (SqlExpr::column(k), k.clone()),
        })
        .collect();
    out.extend(aggs.iter().map(|a| (SqlExpr::column(&a.alias), a.alias.clone())));
    Some(SqlQuery::Project {
        items: out,
        input: Box::new(grouped),
    })
}

// ---- projection pruning

/// Drops columns not needed above. `required == None` keeps every output
/// column in order.
fn prune(q: SqlQuery, required: Option<&BTreeSet<String>>) -> SqlQuery {
    use SqlQuery::*;
    let with = |extra: BTreeSet<String>| -> Option<BTreeSet<String>> {
        required.map(|r| r.iter().cloned().chain(extra).collect())
    };
    match q {
        Scan {
            table,
            columns,
            all_columns,
        } => {
            let Some(r) = required else {
                return Scan {
                    table,
                    columns,
                    all_columns,
                };
            };
            let mut kept: Vec<String> = all_columns
                .iter()
                .filter(|c| r.contains(*c) && columns.contains(c))
                .cloned()
                .collect();
            if kept.is_empty() {
                kept = columns.into_iter().take(1).collect();
            }
            Scan {
                table,
                columns: kept,
                all_columns,
            }
        }
        Select { predicate, input } => {
            let child = with(predicate.columns());
            Select {
                input: Box::new(prune(*input, child.as_ref())),
                predicate,
            }
        }
        Project { mut items, input } => {
            if let Some(r) = required {
                let first = items[0].clone();
                items.retain(|(_, a)| r.contains(a));
                if items.is_empty() {
                    items.push(first);
                }
            }
            let child: BTreeSet<String> = items.iter().flat_map(|(e, _)| e.columns()).collect();
            Project {
                input: Box::new(prune(*input, Some(&child))),
                items,
            }
        }
        GroupBy {
            keys,
            mut aggs,
            nonempty,
            input,
        } => {
            if let Some(r) = required {
                let first = aggs.first().cloned();
                aggs.retain(|a| r.contains(&a.alias));
                if aggs.is_empty() && keys.is_empty() {
                    aggs.extend(first);
                }
            }
            let mut child: BTreeSet<String> = keys.iter().cloned().collect();
            for a in &aggs {
                if let Some(e) = &a.arg {
                    child.extend(e.columns());
                }
            }
            GroupBy {
                input: Box::new(prune(*input, Some(&child))),
                keys,
                aggs,
                nonempty,
            }
        }
        Window {
            partition,
            order,
            mut sums,
            input,
        } => {
            let child = match required {
                None => None,
                Some(r) => {
                    sums.retain(|s| r.contains(&s.alias));
                    let aliases: BTreeSet<&String> = sums.iter().map(|s| &s.alias).collect();
                    let mut c: BTreeSet<String> =
                        r.iter().filter(|x| !aliases.contains(x)).cloned().collect();
                    if !sums.is_empty() {
                        c.extend(partition.iter().cloned());
                        c.extend(order.iter().map(|(k, _)| k.clone()));
                        for s in &sums {
                            c.extend(s.expr.columns());
                        }
                    }
                    Some(c)
                }
            };
            let input = prune(*input, child.as_ref());
            if sums.is_empty() {
                input
            } else {
                Window {
                    partition,
                    order,
                    sums,
                    input: Box::new(input),
                }
            }
        }
        OrderBy { keys, input } => {
            let child = with(keys.iter().map(|(k, _)| k.clone()).collect());
            OrderBy {
                input: Box::new(prune(*input, child.as_ref())),
                keys,
            }
        }
        Limit { n, input } => Limit {
            n,
            input: Box::new(prune(*input, required)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan() -> SqlQuery {
        SqlQuery::scan("t", vec!["a".into(), "b".into(), "c".into()])
    }

    #[test]
    fn no_op_takes_one_pass() {
        let (q, passes) = rewrite_counted(&scan());
        assert_eq!(q, scan());
        assert_eq!(passes, 1);
    }

    #[test]
    fn select_true_disappears_and_filters_merge() {
        let q = SqlQuery::Select {
            predicate: SqlExpr::boolean(true),
            input: Box::new(SqlQuery::Select {
                predicate: SqlExpr::binary(BinaryOp::Gt, SqlExpr::column("a"), SqlExpr::number(1.0)),
                input: Box::new(SqlQuery::Select {
                    predicate: SqlExpr::binary(BinaryOp::Lt, SqlExpr::column("b"), SqlExpr::number(2.0)),
                    input: Box::new(scan()),
                }),
            }),
        };
        let r = rewrite(&q);
        assert_eq!(r.depth(), 2);
    }

    #[test]
    fn pruning_narrows_scan() {
        let q = SqlQuery::Project {
            items: vec![(SqlExpr::column("b"), "b".into())],
            input: Box::new(scan()),
        };
        match rewrite(&q) {
            SqlQuery::Scan { columns, .. } => assert_eq!(columns, vec!["b".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn folding_follows_value_semantics() {
        let mut rx = RegexCache::default();
        let e = SqlExpr::binary(BinaryOp::Div, SqlExpr::number(1.0), SqlExpr::number(0.0));
        assert_eq!(fold(&e, &mut rx), SqlExpr::Literal(Value::Null));
        let e = SqlExpr::and(SqlExpr::column("x"), SqlExpr::boolean(false));
        assert_eq!(fold(&e, &mut rx), SqlExpr::boolean(false));
    }
}
