use super::{Expr, UnaryOp};
use crate::value::format_number;

const UNARY_PREC: u8 = 6;
const ATOM_PREC: u8 = 7;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary { .. } => UNARY_PREC,
        _ => ATOM_PREC,
    }
}

/// Renders an expression with the minimum parentheses needed for
/// `parse_expr` to rebuild the same tree.
pub fn print_expr(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(e, &mut out);
    out
}

fn write_expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Number(v) => out.push_str(&format_number(*v)),
        Expr::String(s) => write_string(s, out),
        Expr::Boolean(b) => out.push_str(if *b { "true" } else { "false" }),
        Expr::Field(name) => {
            if is_identifier(name) {
                out.push_str("datum.");
                out.push_str(name);
            } else {
                out.push_str("datum[");
                write_string(name, out);
                out.push(']');
            }
        }
        Expr::Signal(name) => out.push_str(name),
        Expr::Unary { op, operand } => {
            out.push(match op {
                UnaryOp::Neg => '-',
                UnaryOp::Not => '!',
            });
            // "- -x" keeps the lexer from seeing a single token
            if matches!(**operand, Expr::Unary { op: UnaryOp::Neg, .. }) && *op == UnaryOp::Neg {
                out.push(' ');
            }
            write_child(operand, precedence(operand) < UNARY_PREC, out);
        }
        Expr::Binary { op, left, right } => {
            let p = op.precedence();
            write_child(left, precedence(left) < p, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            write_child(right, precedence(right) <= p, out);
        }
        Expr::Call { func, args } => {
            out.push_str(func.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(a, out);
            }
            out.push(')');
        }
    }
}

fn write_child(e: &Expr, parens: bool, out: &mut String) {
    // negative literals print with a sign and must be wrapped under operators
    let parens = parens || matches!(e, Expr::Number(v) if v.is_sign_negative());
    if parens {
        out.push('(');
        write_expr(e, out);
        out.push(')');
    } else {
        write_expr(e, out);
    }
}

fn write_string(s: &str, out: &mut String) {
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('\'');
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_alphanumeric() || c == '_' || c == '$')
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn round(s: &str) -> String {
        print_expr(&parse_expr(s).unwrap())
    }

    #[test]
    fn no_spurious_parens() {
        assert_eq!(round("1 + 2 * 3"), "1 + 2 * 3");
        assert_eq!(round("(1 + 2) * 3"), "(1 + 2) * 3");
        assert_eq!(round("1 - (2 - 3)"), "1 - (2 - 3)");
        assert_eq!(round("((a))"), "a");
    }

    #[test]
    fn unary_and_calls() {
        assert_eq!(round("-(a * b)"), "-(a * b)");
        assert_eq!(round("- -a"), "- -a");
        assert_eq!(round("!(x == 1)"), "!(x == 1)");
        assert_eq!(round("test('^Eng', datum.job)"), "test('^Eng', datum.job)");
        assert_eq!(round("datum['a b'] + 1"), "datum['a b'] + 1");
    }
}
