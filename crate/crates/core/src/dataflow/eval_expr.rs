use std::collections::HashMap;

use regex::Regex;

use crate::expr::{BinaryOp, Expr, Func, UnaryOp};
use crate::table::Table;
use crate::value::Value;

/// Current value of a signal. Extent transforms publish `[min, max]` pairs.
#[derive(Clone, Debug, PartialEq)]
pub enum SignalValue {
    Scalar(Value),
    Extent(Value, Value),
}

impl SignalValue {
    pub fn scalar(&self) -> Option<&Value> {
        match self {
            SignalValue::Scalar(v) => Some(v),
            SignalValue::Extent(..) => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            SignalValue::Scalar(v) => v.to_json(),
            SignalValue::Extent(lo, hi) => serde_json::json!([lo.to_json(), hi.to_json()]),
        }
    }
}

pub type Signals = HashMap<String, SignalValue>;

/// Compiled regexes keyed by pattern text.
#[derive(Default)]
pub struct RegexCache {
    compiled: HashMap<String, Regex>,
}

impl RegexCache {
    pub fn get(&mut self, pattern: &str) -> Result<&Regex, String> {
        if !self.compiled.contains_key(pattern) {
            let re = Regex::new(pattern).map_err(|e| format!("invalid regex {pattern:?}: {e}"))?;
            self.compiled.insert(pattern.to_string(), re);
        }
        Ok(&self.compiled[pattern])
    }
}

/// Evaluates `e` on one row. Follows SQL null semantics: null operands give
/// null, division or modulo by zero give null, `&&`/`||` are three-valued.
pub fn eval_expr(
    e: &Expr,
    table: &Table,
    row: usize,
    signals: &Signals,
    regexes: &mut RegexCache,
) -> Result<Value, String> {
    Ok(match e {
        Expr::Number(v) => Value::number(*v),
        Expr::String(s) => Value::string(s),
        Expr::Boolean(b) => Value::Boolean(*b),
        Expr::Field(name) => {
            let col = table
                .schema()
                .index_of(name)
                .ok_or_else(|| format!("unknown field '{name}'"))?;
            table.value(row, col)
        }
        Expr::Signal(name) => match signals.get(name) {
            Some(SignalValue::Scalar(v)) => v.clone(),
            Some(SignalValue::Extent(..)) => {
                return Err(format!("signal '{name}' is an extent pair"))
            }
            None => return Err(format!("unknown signal '{name}'")),
        },
        Expr::Unary { op, operand } => {
            let v = eval_expr(operand, table, row, signals, regexes)?;
            match (op, v) {
                (_, Value::Null) => Value::Null,
                (UnaryOp::Neg, Value::Number(x)) => Value::number(-x),
                (UnaryOp::Not, Value::Boolean(b)) => Value::Boolean(!b),
                (op, v) => return Err(format!("cannot apply {op:?} to {v:?}")),
            }
        }
        Expr::Binary { op, left, right } => {
            let l = eval_expr(left, table, row, signals, regexes)?;
            match op {
                BinaryOp::And => {
                    if l == Value::Boolean(false) {
                        return Ok(l);
                    }
                    let r = eval_expr(right, table, row, signals, regexes)?;
                    return logic(l, r, false);
                }
                BinaryOp::Or => {
                    if l == Value::Boolean(true) {
                        return Ok(l);
                    }
                    let r = eval_expr(right, table, row, signals, regexes)?;
                    return logic(l, r, true);
                }
                _ => {}
            }
            let r = eval_expr(right, table, row, signals, regexes)?;
            binary(*op, l, r)?
        }
        Expr::Call { func, args } => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(eval_expr(a, table, row, signals, regexes)?);
            }
            call(*func, &vals, regexes)?
        }
    })
}

pub(crate) fn logic(l: Value, r: Value, is_or: bool) -> Result<Value, String> {
    let short = Value::Boolean(is_or);
    Ok(match (l, r) {
        (_, r) if r == short => short,
        (Value::Null, _) | (_, Value::Null) => Value::Null,
        (Value::Boolean(_), Value::Boolean(b)) => Value::Boolean(b),
        (l, r) => return Err(format!("logical operands must be boolean, got {l:?} and {r:?}")),
    })
}

pub(crate) fn binary(op: BinaryOp, l: Value, r: Value) -> Result<Value, String> {
    if l.is_null() || r.is_null() {
        return Ok(Value::Null);
    }
    if op.is_arithmetic() {
        let (Some(a), Some(b)) = (l.as_f64(), r.as_f64()) else {
            return Err(format!("arithmetic on non-numbers {l:?} {} {r:?}", op.symbol()));
        };
        return Ok(match op {
            BinaryOp::Add => Value::number(a + b),
            BinaryOp::Sub => Value::number(a - b),
            BinaryOp::Mul => Value::number(a * b),
            BinaryOp::Div if b == 0.0 => Value::Null,
            BinaryOp::Div => Value::number(a / b),
            BinaryOp::Mod if b == 0.0 => Value::Null,
            BinaryOp::Mod => Value::number(a % b),
            _ => unreachable!(),
        });
    }
    let ord = match (&l, &r) {
        (Value::Number(a), Value::Number(b)) => a.partial_cmp(b),
        (Value::String(a), Value::String(b)) => Some(a.as_bytes().cmp(b.as_bytes())),
        (Value::Boolean(a), Value::Boolean(b)) => Some(a.cmp(b)),
        _ => None,
    }
    .ok_or_else(|| format!("cannot compare {l:?} with {r:?}"))?;
    use std::cmp::Ordering::*;
    Ok(Value::Boolean(match op {
        BinaryOp::Eq => ord == Equal,
        BinaryOp::Ne => ord != Equal,
        BinaryOp::Lt => ord == Less,
        BinaryOp::Le => ord != Greater,
        BinaryOp::Gt => ord == Greater,
        BinaryOp::Ge => ord != Less,
        _ => unreachable!(),
    }))
}

pub(crate) fn call(func: Func, args: &[Value], regexes: &mut RegexCache) -> Result<Value, String> {
    if args.iter().any(Value::is_null) {
        return Ok(Value::Null);
    }
    if func == Func::Test {
        let (Some(pattern), Some(subject)) = (args[0].as_str(), args[1].as_str()) else {
            return Err(format!("test() expects strings, got {:?}", args));
        };
        return Ok(Value::Boolean(regexes.get(pattern)?.is_match(subject)));
    }
    let nums: Vec<f64> = args
        .iter()
        .map(|v| v.as_f64().ok_or_else(|| format!("{}() expects numbers, got {v:?}", func.name())))
        .collect::<Result<_, _>>()?;
    Ok(Value::number(match func {
        Func::Abs => nums[0].abs(),
        Func::Floor => nums[0].floor(),
        Func::Ceil => nums[0].ceil(),
        Func::Sqrt if nums[0] < 0.0 => return Ok(Value::Null),
        Func::Sqrt => nums[0].sqrt(),
        Func::Min => nums[0].min(nums[1]),
        Func::Max => nums[0].max(nums[1]),
        Func::Test => unreachable!(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::value::{Field, ScalarType, Schema};

    fn eval(text: &str) -> Value {
        let schema = Schema(vec![
            Field::new("x", ScalarType::Number),
            Field::new("s", ScalarType::String),
        ]);
        let t = Table::from_rows(schema, vec![vec![Value::Null, Value::string("Engineer")]]).unwrap();
        let mut signals = Signals::new();
        signals.insert("k".into(), SignalValue::Scalar(Value::number(2.0)));
        eval_expr(&parse_expr(text).unwrap(), &t, 0, &signals, &mut RegexCache::default()).unwrap()
    }

    #[test]
    fn null_propagation_and_three_valued_logic() {
        assert_eq!(eval("datum.x + 1"), Value::Null);
        assert_eq!(eval("datum.x > 1"), Value::Null);
        assert_eq!(eval("datum.x > 1 && false"), Value::Boolean(false));
        assert_eq!(eval("datum.x > 1 || true"), Value::Boolean(true));
        assert_eq!(eval("datum.x > 1 || false"), Value::Null);
        assert_eq!(eval("!(datum.x > 1)"), Value::Null);
    }

    #[test]
    fn division_by_zero_is_null() {
        assert_eq!(eval("1 / 0"), Value::Null);
        assert_eq!(eval("5 % 0"), Value::Null);
        assert_eq!(eval("-7 % k"), Value::number(-1.0));
        assert_eq!(eval("sqrt(-1)"), Value::Null);
    }

    #[test]
    fn regex_and_functions() {
        assert_eq!(eval("test('^Eng', datum.s)"), Value::Boolean(true));
        assert_eq!(eval("test('^eng', datum.s)"), Value::Boolean(false));
        assert_eq!(eval("max(k, 3) + min(k, 3) + floor(2.5) + ceil(0.1) + abs(-1)"), Value::number(9.0));
    }
}
