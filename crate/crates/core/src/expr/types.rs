use thiserror::Error;

use super::{BinaryOp, Expr, Func, UnaryOp};
use crate::value::{ScalarType, Schema};

/// What a signal name refers to, as seen by the type checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalType {
    Scalar(ScalarType),
    /// `[min, max]` pair published by an `extent` transform.
    Extent,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeError {
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("unknown signal '{0}'")]
    UnknownSignal(String),
    #[error("signal '{0}' is an extent pair and cannot be used in an expression")]
    NotScalarSignal(String),
    #[error("operator '{op}' expects {expected}, found {found}")]
    Operand {
        op: String,
        expected: String,
        found: String,
    },
    #[error("cannot compare {0} with {1}")]
    Incomparable(ScalarType, ScalarType),
    #[error("first argument of test() must be a string literal or string signal")]
    RegexArgument,
    #[error("invalid regular expression: {0}")]
    Regex(String),
}

fn expect(op: &str, want: ScalarType, got: ScalarType) -> Result<(), TypeError> {
    if want == got {
        Ok(())
    } else {
        Err(TypeError::Operand {
            op: op.to_string(),
            expected: want.name().to_string(),
            found: got.name().to_string(),
        })
    }
}

/// Infers the result type of `e` against the row schema and signal table.
pub fn check_expr(
    e: &Expr,
    schema: &Schema,
    signals: &dyn Fn(&str) -> Option<SignalType>,
) -> Result<ScalarType, TypeError> {
    use ScalarType::*;
    Ok(match e {
        Expr::Number(_) => Number,
        Expr::String(_) => String,
        Expr::Boolean(_) => Boolean,
        Expr::Field(name) => {
            schema
                .field(name)
                .ok_or_else(|| TypeError::UnknownField(name.clone()))?
                .ty
        }
        Expr::Signal(name) => match signals(name) {
            Some(SignalType::Scalar(t)) => t,
            Some(SignalType::Extent) => return Err(TypeError::NotScalarSignal(name.clone())),
            None => return Err(TypeError::UnknownSignal(name.clone())),
        },
        Expr::Unary { op, operand } => {
            let t = check_expr(operand, schema, signals)?;
            match op {
                UnaryOp::Neg => {
                    expect("-", Number, t)?;
                    Number
                }
                UnaryOp::Not => {
                    expect("!", Boolean, t)?;
                    Boolean
                }
            }
        }
        Expr::Binary { op, left, right } => {
            let l = check_expr(left, schema, signals)?;
            let r = check_expr(right, schema, signals)?;
            match op {
                o if o.is_arithmetic() => {
                    expect(o.symbol(), Number, l)?;
                    expect(o.symbol(), Number, r)?;
                    Number
                }
                BinaryOp::And | BinaryOp::Or => {
                    expect(op.symbol(), Boolean, l)?;
                    expect(op.symbol(), Boolean, r)?;
                    Boolean
                }
                BinaryOp::Eq | BinaryOp::Ne => {
                    if l != r {
                        return Err(TypeError::Incomparable(l, r));
                    }
                    Boolean
                }
                _ => {
                    if l != r || l == Boolean {
                        return Err(TypeError::Incomparable(l, r));
                    }
                    Boolean
                }
            }
        }
        Expr::Call { func, args } => match func {
            Func::Abs | Func::Floor | Func::Ceil | Func::Sqrt | Func::Min | Func::Max => {
                for a in args {
                    expect(func.name(), Number, check_expr(a, schema, signals)?)?;
                }
                Number
            }
            Func::Test => {
                match &args[0] {
                    Expr::String(pattern) => {
                        regex::Regex::new(pattern).map_err(|e| TypeError::Regex(e.to_string()))?;
                    }
                    Expr::Signal(name) => match signals(name) {
                        Some(SignalType::Scalar(String)) => {}
                        Some(_) => return Err(TypeError::RegexArgument),
                        None => return Err(TypeError::UnknownSignal(name.clone())),
                    },
                    _ => return Err(TypeError::RegexArgument),
                }
                expect("test", String, check_expr(&args[1], schema, signals)?)?;
                Boolean
            }
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::value::Field;

    fn schema() -> Schema {
        Schema(vec![
            Field::new("delay", ScalarType::Number),
            Field::new("job", ScalarType::String),
            Field::new("ok", ScalarType::Boolean),
        ])
    }

    fn sig(name: &str) -> Option<SignalType> {
        match name {
            "cutoff" => Some(SignalType::Scalar(ScalarType::Number)),
            "search" => Some(SignalType::Scalar(ScalarType::String)),
            "ext" => Some(SignalType::Extent),
            _ => None,
        }
    }

    fn check(s: &str) -> Result<ScalarType, TypeError> {
        check_expr(&parse_expr(s).unwrap(), &schema(), &sig)
    }

    #[test]
    fn well_typed() {
        assert_eq!(check("datum.delay > 0 && datum.delay < cutoff"), Ok(ScalarType::Boolean));
        assert_eq!(check("floor(datum.delay / 10) * 10"), Ok(ScalarType::Number));
        assert_eq!(check("test(search, datum.job) || !datum.ok"), Ok(ScalarType::Boolean));
        assert_eq!(check("datum.job < 'm'"), Ok(ScalarType::Boolean));
    }

    #[test]
    fn ill_typed() {
        assert!(matches!(check("datum.job + 1"), Err(TypeError::Operand { .. })));
        assert!(matches!(check("datum.job == 1"), Err(TypeError::Incomparable(..))));
        assert!(matches!(check("datum.ok < true"), Err(TypeError::Incomparable(..))));
        assert!(matches!(check("datum.nope"), Err(TypeError::UnknownField(_))));
        assert!(matches!(check("nope + 1"), Err(TypeError::UnknownSignal(_))));
        assert!(matches!(check("ext + 1"), Err(TypeError::NotScalarSignal(_))));
        assert!(matches!(check("test('(', datum.job)"), Err(TypeError::Regex(_))));
        assert!(matches!(check("test(datum.job, datum.job)"), Err(TypeError::RegexArgument)));
        assert!(matches!(check("test('a', datum.delay)"), Err(TypeError::Operand { .. })));
    }
}
