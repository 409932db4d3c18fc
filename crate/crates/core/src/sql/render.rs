use super::dialect::SqlDialect;
use super::query::{SqlAggregate, SqlExpr, SqlQuery};
use super::translate::SqlError;
use crate::expr::{BinaryOp, Func, UnaryOp};
use crate::spec::{AggOp, SortOrder};
use crate::value::Value;

/// Renders `q` as a single SQL statement. Output is deterministic: the same
/// tree and dialect always give the same bytes.
pub fn render_sql(q: &SqlQuery, d: &SqlDialect) -> Result<String, SqlError> {
    let mut r = Renderer { d, next_alias: 0 };
    r.query(q)
}

/// Canonical float text: shortest round-trip digits, always with a fraction
/// or exponent so engines read it as floating point.
pub fn float_text(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "9e999".into() } else { "-9e999".into() };
    }
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E']) || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

struct Renderer<'a> {
    d: &'a SqlDialect,
    next_alias: usize,
}

/// A FROM source, possibly with a WHERE clause folded out of a child Select.
struct Source {
    from: String,
    filter: Option<String>,
    /// Select list standing for "all input columns".
    star: String,
}

impl Renderer<'_> {
    fn q(&self, name: &str) -> String {
        self.d.quote_ident(name)
    }

    fn column_list(&self, cols: &[String]) -> String {
        cols.iter().map(|c| self.q(c)).collect::<Vec<_>>().join(", ")
    }

    fn source(&mut self, input: &SqlQuery) -> Result<Source, SqlError> {
        match input {
            SqlQuery::Scan {
                table,
                columns,
                all_columns,
            } => Ok(Source {
                from: self.q(table),
                filter: None,
                star: if columns == all_columns {
                    "*".into()
                } else {
                    self.column_list(columns)
                },
            }),
            SqlQuery::Select { predicate, input } => {
                let inner = self.source(input)?;
                let p = self.expr(predicate)?;
                let filter = match inner.filter {
                    Some(f) => format!("{f} AND {p}"),
                    None => p,
                };
                Ok(Source {
                    filter: Some(filter),
                    ..inner
                })
            }
            other => {
                self.next_alias += 1;
                let alias = format!("_q{}", self.next_alias);
                let sub = self.query(other)?;
                Ok(Source {
                    from: format!("({sub}) AS {}", self.q(&alias)),
                    filter: None,
                    star: "*".into(),
                })
            }
        }
    }

    fn from_clause(src: &Source) -> String {
        match &src.filter {
            Some(f) => format!(" FROM {} WHERE {f}", src.from),
            None => format!(" FROM {}", src.from),
        }
    }

    fn order_list(&self, keys: &[(String, SortOrder)]) -> String {
        keys.iter()
            .map(|(c, o)| {
                let dir = match o {
                    SortOrder::Ascending => "ASC",
                    SortOrder::Descending => "DESC",
                };
                format!("{} {dir} NULLS LAST", self.q(c))
            })
            .collect::<Vec<_>>()
            .join(", ")
    }

    fn query(&mut self, q: &SqlQuery) -> Result<String, SqlError> {
        Ok(match q {
            SqlQuery::Scan { .. } | SqlQuery::Select { .. } => {
                let src = self.source(q)?;
                format!("SELECT {}{}", src.star, Self::from_clause(&src))
            }
            SqlQuery::Project { items, input } => {
                let src = self.source(input)?;
                let mut list = Vec::with_capacity(items.len());
                for (e, alias) in items {
                    if matches!(e, SqlExpr::Column(c) if c == alias) {
                        list.push(self.q(alias));
                    } else {
                        list.push(format!("{} AS {}", self.expr(e)?, self.q(alias)));
                    }
                }
                format!("SELECT {}{}", list.join(", "), Self::from_clause(&src))
            }
            SqlQuery::GroupBy {
                keys,
                aggs,
                nonempty,
                input,
            } => {
                let src = self.source(input)?;
                let mut list: Vec<String> = keys.iter().map(|k| self.q(k)).collect();
                for a in aggs {
                    list.push(format!("{} AS {}", self.aggregate(a)?, self.q(&a.alias)));
                }
                let mut sql = format!("SELECT {}{}", list.join(", "), Self::from_clause(&src));
                if !keys.is_empty() {
                    sql.push_str(&format!(" GROUP BY {}", self.column_list(keys)));
                }
                if *nonempty {
                    sql.push_str(" HAVING COUNT(*) > 0");
                }
                sql
            }
            SqlQuery::Window {
                partition,
                order,
                sums,
                input,
            } => {
                if !self.d.window_functions {
                    return Err(SqlError::UnsupportedOnDialect {
                        what: "window functions".into(),
                        dialect: self.d.name.clone(),
                    });
                }
                let src = self.source(input)?;
                let mut over = String::new();
                if !partition.is_empty() {
                    over.push_str(&format!("PARTITION BY {} ", self.column_list(partition)));
                }
                if !order.is_empty() {
                    over.push_str(&format!("ORDER BY {} ", self.order_list(order)));
                }
                over.push_str("ROWS BETWEEN UNBOUNDED PRECEDING AND CURRENT ROW");
                let mut list = vec![src.star.clone()];
                for s in sums {
                    list.push(format!(
                        "SUM({}) OVER ({over}) AS {}",
                        self.expr(&s.expr)?,
                        self.q(&s.alias)
                    ));
                }
                format!("SELECT {}{}", list.join(", "), Self::from_clause(&src))
            }
            SqlQuery::OrderBy { keys, input } => {
                let src = self.source(input)?;
                format!(
                    "SELECT {}{} ORDER BY {}",
                    src.star,
                    Self::from_clause(&src),
                    self.order_list(keys)
                )
            }
            SqlQuery::Limit { n, input } => match &**input {
                // keep ORDER BY and LIMIT in one statement so the order holds
                SqlQuery::OrderBy { .. } => format!("{} LIMIT {n}", self.query(input)?),
                other => {
                    let src = self.source(other)?;
                    format!("SELECT {}{} LIMIT {n}", src.star, Self::from_clause(&src))
                }
            },
        })
    }

    fn aggregate(&mut self, a: &SqlAggregate) -> Result<String, SqlError> {
        let arg = |r: &mut Self| -> Result<String, SqlError> {
            match &a.arg {
                Some(e) => r.expr(e),
                None => Err(SqlError::Translate(format!("{} needs an argument", a.op.name()))),
            }
        };
        Ok(match a.op {
            AggOp::Count => self.d.float_cast.replace("{}", "COUNT(*)"),
            AggOp::Sum => format!("SUM({})", arg(self)?),
            AggOp::Mean => format!("AVG({})", arg(self)?),
            AggOp::Min => format!("MIN({})", arg(self)?),
            AggOp::Max => format!("MAX({})", arg(self)?),
        })
    }

    fn literal(&self, v: &Value) -> String {
        match v {
            Value::Null => "NULL".into(),
            Value::Boolean(true) => "TRUE".into(),
            Value::Boolean(false) => "FALSE".into(),
            Value::Number(x) => {
                let text = self.d.float_literal.replace("{}", &float_text(*x));
                if x.is_sign_negative() {
                    format!("({text})")
                } else {
                    text
                }
            }
            Value::String(s) => format!("'{}'", s.replace('\'', "''")),
        }
    }

    fn expr(&mut self, e: &SqlExpr) -> Result<String, SqlError> {
        Ok(match e {
            SqlExpr::Column(c) => self.q(c),
            SqlExpr::Literal(v) => self.literal(v),
            SqlExpr::Unary { op, operand } => {
                let x = self.expr(operand)?;
                match op {
                    UnaryOp::Neg => format!("(- {x})"),
                    UnaryOp::Not => format!("(NOT {x})"),
                }
            }
            SqlExpr::Binary { op, left, right } => {
                let a = self.expr(left)?;
                let b = self.expr(right)?;
                match op {
                    BinaryOp::Div => match right.as_literal() {
                        Some(Value::Number(x)) if *x != 0.0 => format!("({a} / {b})"),
                        _ => format!("({a} / NULLIF({b}, {}))", self.literal(&Value::Number(0.0))),
                    },
                    BinaryOp::Mod => SqlDialect::fill(&self.d.modulo, &[("a", &a), ("b", &b)]),
                    _ => {
                        let sym = match op {
                            BinaryOp::Add => "+",
                            BinaryOp::Sub => "-",
                            BinaryOp::Mul => "*",
                            BinaryOp::Eq => "=",
                            BinaryOp::Ne => "<>",
                            BinaryOp::Lt => "<",
                            BinaryOp::Le => "<=",
                            BinaryOp::Gt => ">",
                            BinaryOp::Ge => ">=",
                            BinaryOp::And => "AND",
                            BinaryOp::Or => "OR",
                            BinaryOp::Div | BinaryOp::Mod => unreachable!(),
                        };
                        format!("({a} {sym} {b})")
                    }
                }
            }
            SqlExpr::Call { func, args } => {
                let mut a = Vec::with_capacity(args.len());
                for x in args {
                    a.push(self.expr(x)?);
                }
                let zero = self.literal(&Value::Number(0.0));
                match func {
                    Func::Abs => format!("abs({})", a[0]),
                    Func::Floor => self.d.floor.replace("{}", &a[0]),
                    Func::Ceil => self.d.ceil.replace("{}", &a[0]),
                    Func::Sqrt => format!(
                        "(CASE WHEN {x} < {zero} THEN NULL ELSE {} END)",
                        self.d.sqrt.replace("{}", &a[0]),
                        x = a[0]
                    ),
                    Func::Min | Func::Max => {
                        let cmp = if *func == Func::Min { "<=" } else { ">=" };
                        format!(
                            "(CASE WHEN {x} IS NULL OR {y} IS NULL THEN NULL WHEN {x} {cmp} {y} THEN {x} ELSE {y} END)",
                            x = a[0],
                            y = a[1]
                        )
                    }
                    Func::Test => {
                        if !self.d.supports_regex() {
                            return Err(SqlError::UnsupportedOnDialect {
                                what: "test() (regular expressions)".into(),
                                dialect: self.d.name.clone(),
                            });
                        }
                        SqlDialect::fill(&self.d.regex_match, &[("pattern", &a[0]), ("subject", &a[1])])
                    }
                }
            }
            SqlExpr::IsNull { expr, negated } => {
                let x = self.expr(expr)?;
                if *negated {
                    format!("({x} IS NOT NULL)")
                } else {
                    format!("({x} IS NULL)")
                }
            }
            SqlExpr::Coalesce(args) => {
                let mut a = Vec::with_capacity(args.len());
                for x in args {
                    a.push(self.expr(x)?);
                }
                format!("COALESCE({})", a.join(", "))
            }
            SqlExpr::BinIndex { offset, last } => {
                // Truncation equals floor on the non-negative values kept
                // by the clamp, and is native where floor() is not.
                let x = self.d.trunc.replace("{}", &self.expr(offset)?);
                let lo = self.literal(&Value::Number(0.0));
                let hi = self.literal(&Value::Number(*last));
                format!("(CASE WHEN {x} < {lo} THEN {lo} WHEN {x} > {hi} THEN {hi} ELSE {x} END)")
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_and_project() {
        let d = SqlDialect::sqlite();
        let scan = SqlQuery::scan("flights", vec!["a".into(), "b".into()]);
        assert_eq!(render_sql(&scan, &d).unwrap(), "SELECT * FROM \"flights\"");
        let p = SqlQuery::Project {
            items: vec![(SqlExpr::column("a"), "a".into())],
            input: Box::new(scan),
        };
        assert_eq!(render_sql(&p, &d).unwrap(), "SELECT \"a\" FROM \"flights\"");
    }

    #[test]
    fn float_text_is_canonical() {
        assert_eq!(float_text(10.0), "10.0");
        assert_eq!(float_text(0.1), "0.1");
        assert_eq!(float_text(1e300), "1e300");
        assert_eq!(float_text(-2.5), "-2.5");
    }
}
