use std::collections::BTreeSet;

use crate::expr::{BinaryOp, Func, UnaryOp};
use crate::spec::{AggOp, SortOrder};
use crate::value::Value;

/// Scalar expression inside a relational query.
#[derive(Clone, Debug, PartialEq)]
pub enum SqlExpr {
    Column(String),
    Literal(Value),
    Unary {
        op: UnaryOp,
        operand: Box<SqlExpr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<SqlExpr>,
        right: Box<SqlExpr>,
    },
    Call {
        func: Func,
        args: Vec<SqlExpr>,
    },
    IsNull {
        expr: Box<SqlExpr>,
        negated: bool,
    },
    Coalesce(Vec<SqlExpr>),
    /// `floor(offset)` limited to `[0, last]`; null stays null.
    BinIndex {
        offset: Box<SqlExpr>,
        last: f64,
    },
}

impl SqlExpr {
    pub fn column(name: impl Into<String>) -> SqlExpr {
        SqlExpr::Column(name.into())
    }

    pub fn number(v: f64) -> SqlExpr {
        SqlExpr::Literal(Value::number(v))
    }

    pub fn boolean(b: bool) -> SqlExpr {
        SqlExpr::Literal(Value::Boolean(b))
    }

    pub fn binary(op: BinaryOp, left: SqlExpr, right: SqlExpr) -> SqlExpr {
        SqlExpr::Binary {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn and(left: SqlExpr, right: SqlExpr) -> SqlExpr {
        SqlExpr::binary(BinaryOp::And, left, right)
    }

    pub fn not(e: SqlExpr) -> SqlExpr {
        SqlExpr::Unary {
            op: UnaryOp::Not,
            operand: Box::new(e),
        }
    }

    pub fn is_not_null(e: SqlExpr) -> SqlExpr {
        SqlExpr::IsNull {
            expr: Box::new(e),
            negated: true,
        }
    }

    pub fn as_literal(&self) -> Option<&Value> {
        match self {
            SqlExpr::Literal(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_true(&self) -> bool {
        matches!(self, SqlExpr::Literal(Value::Boolean(true)))
    }

    /// Columns referenced anywhere in the expression.
    pub fn columns(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns(&self, out: &mut BTreeSet<String>) {
        match self {
            SqlExpr::Column(c) => {
                out.insert(c.clone());
            }
            SqlExpr::Literal(_) => {}
            SqlExpr::Unary { operand, .. } => operand.collect_columns(out),
            SqlExpr::Binary { left, right, .. } => {
                left.collect_columns(out);
                right.collect_columns(out);
            }
            SqlExpr::Call { args, .. } | SqlExpr::Coalesce(args) => {
                args.iter().for_each(|a| a.collect_columns(out))
            }
            SqlExpr::IsNull { expr, .. } | SqlExpr::BinIndex { offset: expr, .. } => expr.collect_columns(out),
        }
    }

    /// Replaces column references through `f`.
    pub fn map_columns(&self, f: &dyn Fn(&str) -> SqlExpr) -> SqlExpr {
        match self {
            SqlExpr::Column(c) => f(c),
            SqlExpr::Literal(_) => self.clone(),
            SqlExpr::Unary { op, operand } => SqlExpr::Unary {
                op: *op,
                operand: Box::new(operand.map_columns(f)),
            },
            SqlExpr::Binary { op, left, right } => {
                SqlExpr::binary(*op, left.map_columns(f), right.map_columns(f))
            }
            SqlExpr::Call { func, args } => SqlExpr::Call {
                func: *func,
                args: args.iter().map(|a| a.map_columns(f)).collect(),
            },
            SqlExpr::IsNull { expr, negated } => SqlExpr::IsNull {
                expr: Box::new(expr.map_columns(f)),
                negated: *negated,
            },
            SqlExpr::Coalesce(args) => SqlExpr::Coalesce(args.iter().map(|a| a.map_columns(f)).collect()),
            SqlExpr::BinIndex { offset, last } => SqlExpr::BinIndex {
                offset: Box::new(offset.map_columns(f)),
                last: *last,
            },
        }
    }
}

/// One aggregate output of a `GroupBy`. `Count` takes no argument (`COUNT(*)`).
#[derive(Clone, Debug, PartialEq)]
pub struct SqlAggregate {
    pub op: AggOp,
    pub arg: Option<SqlExpr>,
    pub alias: String,
}

/// A running sum `SUM(expr) OVER (... ROWS UNBOUNDED PRECEDING)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningSum {
    pub expr: SqlExpr,
    pub alias: String,
}

/// Relational query tree. Each node's output columns are determined by its
/// input (see [`SqlQuery::columns`]).
#[derive(Clone, Debug, PartialEq)]
pub enum SqlQuery {
    /// Base table; `columns` lists what is read, in table order.
    Scan {
        table: String,
        columns: Vec<String>,
        /// All columns of the table (used to render `*`).
        all_columns: Vec<String>,
    },
    Select {
        predicate: SqlExpr,
        input: Box<SqlQuery>,
    },
    Project {
        items: Vec<(SqlExpr, String)>,
        input: Box<SqlQuery>,
    },
    GroupBy {
        keys: Vec<String>,
        aggs: Vec<SqlAggregate>,
        /// Keep only non-empty groups; makes a keyless aggregate of no rows
        /// return no rows.
        nonempty: bool,
        input: Box<SqlQuery>,
    },
    /// Input columns plus running sums.
    Window {
        partition: Vec<String>,
        order: Vec<(String, SortOrder)>,
        sums: Vec<RunningSum>,
        input: Box<SqlQuery>,
    },
    OrderBy {
        keys: Vec<(String, SortOrder)>,
        input: Box<SqlQuery>,
    },
    Limit {
        n: u64,
        input: Box<SqlQuery>,
    },
}

impl SqlQuery {
    pub fn scan(table: impl Into<String>, columns: Vec<String>) -> SqlQuery {
        SqlQuery::Scan {
            table: table.into(),
            all_columns: columns.clone(),
            columns,
        }
    }

    pub fn input(&self) -> Option<&SqlQuery> {
        match self {
            SqlQuery::Scan { .. } => None,
            SqlQuery::Select { input, .. }
            | SqlQuery::Project { input, .. }
            | SqlQuery::GroupBy { input, .. }
            | SqlQuery::Window { input, .. }
            | SqlQuery::OrderBy { input, .. }
            | SqlQuery::Limit { input, .. } => Some(input),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SqlQuery::Scan { .. } => "Scan",
            SqlQuery::Select { .. } => "Select",
            SqlQuery::Project { .. } => "Project",
            SqlQuery::GroupBy { .. } => "GroupBy",
            SqlQuery::Window { .. } => "Window",
            SqlQuery::OrderBy { .. } => "OrderBy",
            SqlQuery::Limit { .. } => "Limit",
        }
    }

    /// Output column names in order.
    pub fn columns(&self) -> Vec<String> {
        match self {
            SqlQuery::Scan { columns, .. } => columns.clone(),
            SqlQuery::Project { items, .. } => items.iter().map(|(_, a)| a.clone()).collect(),
            SqlQuery::GroupBy { keys, aggs, .. } => keys
                .iter()
                .cloned()
                .chain(aggs.iter().map(|a| a.alias.clone()))
                .collect(),
            SqlQuery::Window { sums, input, .. } => {
                let mut cols = input.columns();
                cols.extend(sums.iter().map(|s| s.alias.clone()));
                cols
            }
            SqlQuery::Select { input, .. }
            | SqlQuery::OrderBy { input, .. }
            | SqlQuery::Limit { input, .. } => input.columns(),
        }
    }

    /// Number of query nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        1 + self.input().map_or(0, SqlQuery::depth)
    }

    /// Base tables read by the query.
    pub fn tables(&self) -> Vec<&str> {
        match self {
            SqlQuery::Scan { table, .. } => vec![table],
            other => other.input().map(SqlQuery::tables).unwrap_or_default(),
        }
    }

    /// Checks that every referenced column is produced by the child.
    pub fn validate(&self) -> Result<(), String> {
        let Some(input) = self.input() else {
            return Ok(());
        };
        input.validate()?;
        let available: BTreeSet<String> = input.columns().into_iter().collect();
        let mut used = BTreeSet::new();
        match self {
            SqlQuery::Select { predicate, .. } => used.extend(predicate.columns()),
            SqlQuery::Project { items, .. } => {
                for (e, _) in items {
                    used.extend(e.columns());
                }
            }
            SqlQuery::GroupBy { keys, aggs, .. } => {
                used.extend(keys.iter().cloned());
                for a in aggs {
                    if let Some(e) = &a.arg {
                        used.extend(e.columns());
                    }
                }
            }
            SqlQuery::Window {
                partition,
                order,
                sums,
                ..
            } => {
                used.extend(partition.iter().cloned());
                used.extend(order.iter().map(|(c, _)| c.clone()));
                for s in sums {
                    used.extend(s.expr.columns());
                }
            }
            SqlQuery::OrderBy { keys, .. } => used.extend(keys.iter().map(|(c, _)| c.clone())),
            SqlQuery::Limit { .. } | SqlQuery::Scan { .. } => {}
        }
        match used.difference(&available).next() {
            Some(c) => Err(format!("{} references unknown column '{c}'", self.kind_name())),
            None => Ok(()),
        }
    }
}
