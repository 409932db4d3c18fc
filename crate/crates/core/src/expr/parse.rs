use thiserror::Error;

use super::{BinaryOp, Expr, Func, UnaryOp};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message} at byte {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        ParseError {
            offset,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Number(f64),
    Str(String),
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Op(&'static str),
    Eof,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            lx.skip_ws();
            let start = lx.pos;
            let tok = lx.next_tok()?;
            let done = tok == Tok::Eof;
            out.push((tok, start));
            if done {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(n)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn next_tok(&mut self) -> Result<Tok, ParseError> {
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok(Tok::Eof);
        };
        if c.is_ascii_digit() || (c == '.' && matches!(self.peek_at(1), Some(d) if d.is_ascii_digit()))
        {
            return self.number();
        }
        if c == '\'' || c == '"' {
            return self.string(c);
        }
        if c.is_alphabetic() || c == '_' || c == '$' {
            while matches!(self.peek(), Some(c) if c.is_alphanumeric() || c == '_' || c == '$') {
                self.bump();
            }
            return Ok(Tok::Ident(self.src[start..self.pos].to_string()));
        }
        self.bump();
        let two = |lx: &mut Lexer, next: char| {
            if lx.peek() == Some(next) {
                lx.bump();
                true
            } else {
                false
            }
        };
        Ok(match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ',' => Tok::Comma,
            '.' => Tok::Dot,
            '+' => Tok::Op("+"),
            '-' => Tok::Op("-"),
            '*' => Tok::Op("*"),
            '/' => Tok::Op("/"),
            '%' => Tok::Op("%"),
            '=' => {
                if !two(self, '=') {
                    return Err(ParseError::new(start, "assignment is not supported; use '=='"));
                }
                two(self, '=');
                Tok::Op("==")
            }
            '!' => {
                if two(self, '=') {
                    two(self, '=');
                    Tok::Op("!=")
                } else {
                    Tok::Op("!")
                }
            }
            '<' => {
                if two(self, '=') {
                    Tok::Op("<=")
                } else {
                    Tok::Op("<")
                }
            }
            '>' => {
                if two(self, '=') {
                    Tok::Op(">=")
                } else {
                    Tok::Op(">")
                }
            }
            '&' if two(self, '&') => Tok::Op("&&"),
            '|' if two(self, '|') => Tok::Op("||"),
            other => return Err(ParseError::new(start, format!("unexpected character {other:?}"))),
        })
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.bump();
        }
        if self.peek() == Some('.') {
            self.bump();
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.bump();
            if matches!(self.peek(), Some('+' | '-')) {
                self.bump();
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.bump();
                }
            } else {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        let v: f64 = text
            .parse()
            .map_err(|_| ParseError::new(start, format!("invalid number '{text}'")))?;
        if !v.is_finite() {
            return Err(ParseError::new(start, format!("number out of range '{text}'")));
        }
        if matches!(self.peek(), Some(c) if c.is_alphabetic() || c == '_') {
            return Err(ParseError::new(self.pos, "identifier directly after number"));
        }
        Ok(Tok::Number(v))
    }

    fn string(&mut self, quote: char) -> Result<Tok, ParseError> {
        let start = self.pos;
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(ParseError::new(start, "unterminated string literal")),
                Some(c) if c == quote => return Ok(Tok::Str(out)),
                Some('\\') => match self.bump() {
                    None => return Err(ParseError::new(start, "unterminated string literal")),
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some(c @ ('\\' | '\'' | '"')) => out.push(c),
                    // keep unknown escapes verbatim so regexes like '\d' work
                    Some(c) => {
                        out.push('\\');
                        out.push(c);
                    }
                },
                Some(c) => out.push(c),
            }
        }
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

/// Parses an expression with the usual precedence:
/// unary > `* / %` > `+ -` > comparisons > `&&` > `||`.
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let toks = Lexer::tokens(text)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    match p.peek() {
        Tok::Eof => Ok(e),
        t => Err(ParseError::new(p.offset(), format!("unexpected token {t:?}"))),
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if t != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.advance();
            Ok(())
        } else {
            Err(ParseError::new(
                self.offset(),
                format!("expected {what}, found {:?}", self.peek()),
            ))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(1)
    }

    fn binary_op(&self) -> Option<BinaryOp> {
        let Tok::Op(s) = self.peek() else {
            return None;
        };
        Some(match *s {
            "||" => BinaryOp::Or,
            "&&" => BinaryOp::And,
            "==" => BinaryOp::Eq,
            "!=" => BinaryOp::Ne,
            "<" => BinaryOp::Lt,
            "<=" => BinaryOp::Le,
            ">" => BinaryOp::Gt,
            ">=" => BinaryOp::Ge,
            "+" => BinaryOp::Add,
            "-" => BinaryOp::Sub,
            "*" => BinaryOp::Mul,
            "/" => BinaryOp::Div,
            "%" => BinaryOp::Mod,
            _ => return None,
        })
    }

    // precedence climbing; all binary operators are left associative
    fn binary(&mut self, min_prec: u8) -> Result<Expr, ParseError> {
        if min_prec > 5 {
            return self.unary();
        }
        let mut left = self.binary(min_prec + 1)?;
        while let Some(op) = self.binary_op() {
            if op.precedence() != min_prec {
                break;
            }
            self.advance();
            let right = self.binary(min_prec + 1)?;
            left = Expr::binary(op, left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::Op("-") => {
                self.advance();
                Ok(Expr::unary(UnaryOp::Neg, self.unary()?))
            }
            Tok::Op("!") => {
                self.advance();
                Ok(Expr::unary(UnaryOp::Not, self.unary()?))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.advance() {
            Tok::Number(v) => Ok(Expr::Number(v)),
            Tok::Str(s) => Ok(Expr::String(s)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "true" => Ok(Expr::Boolean(true)),
                "false" => Ok(Expr::Boolean(false)),
                "datum" => self.datum_access(at),
                _ if *self.peek() == Tok::LParen => self.call(name, at),
                _ => Ok(Expr::Signal(name)),
            },
            Tok::Eof => Err(ParseError::new(at, "unexpected end of expression")),
            t => Err(ParseError::new(at, format!("unexpected token {t:?}"))),
        }
    }

    fn datum_access(&mut self, at: usize) -> Result<Expr, ParseError> {
        match self.advance() {
            Tok::Dot => match self.advance() {
                Tok::Ident(f) => Ok(Expr::Field(f)),
                _ => Err(ParseError::new(at, "expected field name after 'datum.'")),
            },
            Tok::LBracket => {
                let off = self.offset();
                let Tok::Str(f) = self.advance() else {
                    return Err(ParseError::new(off, "expected string field name in datum[...]"));
                };
                self.expect(Tok::RBracket, "']'")?;
                Ok(Expr::Field(f))
            }
            _ => Err(ParseError::new(at, "'datum' must be followed by a field access")),
        }
    }

    fn call(&mut self, name: String, at: usize) -> Result<Expr, ParseError> {
        let func = Func::from_name(&name)
            .ok_or_else(|| ParseError::new(at, format!("unknown function '{name}'")))?;
        self.expect(Tok::LParen, "'('")?;
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                args.push(self.expr()?);
                if *self.peek() == Tok::Comma {
                    self.advance();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "')'")?;
        if args.len() != func.arity() {
            return Err(ParseError::new(
                at,
                format!(
                    "function '{name}' takes {} argument(s), got {}",
                    func.arity(),
                    args.len()
                ),
            ));
        }
        Ok(Expr::Call { func, args })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(v: f64) -> Expr {
        Expr::Number(v)
    }

    #[test]
    fn conjunction_of_comparisons() {
        let e = parse_expr("datum.delay > 0 && datum.delay < cutoff").unwrap();
        let want = Expr::binary(
            BinaryOp::And,
            Expr::binary(BinaryOp::Gt, Expr::field("delay"), num(0.0)),
            Expr::binary(BinaryOp::Lt, Expr::field("delay"), Expr::signal("cutoff")),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn call_nested_under_multiplication() {
        let e = parse_expr("floor(datum.x / 10) * 10").unwrap();
        let want = Expr::binary(
            BinaryOp::Mul,
            Expr::call(
                Func::Floor,
                vec![Expr::binary(BinaryOp::Div, Expr::field("x"), num(10.0))],
            ),
            num(10.0),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn regex_test_call() {
        let e = parse_expr("test('^Eng', datum.job)").unwrap();
        assert_eq!(
            e,
            Expr::call(Func::Test, vec![Expr::String("^Eng".into()), Expr::field("job")])
        );
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(
            parse_expr("1 - 2 - 3").unwrap(),
            Expr::binary(
                BinaryOp::Sub,
                Expr::binary(BinaryOp::Sub, num(1.0), num(2.0)),
                num(3.0)
            )
        );
        assert_eq!(
            parse_expr("-a * b").unwrap(),
            Expr::binary(
                BinaryOp::Mul,
                Expr::unary(UnaryOp::Neg, Expr::signal("a")),
                Expr::signal("b")
            )
        );
        assert_eq!(
            parse_expr("a || b && c").unwrap(),
            Expr::binary(
                BinaryOp::Or,
                Expr::signal("a"),
                Expr::binary(BinaryOp::And, Expr::signal("b"), Expr::signal("c"))
            )
        );
    }

    #[test]
    fn bracket_field_access_and_js_equality() {
        assert_eq!(
            parse_expr("datum['a b'] === 'x'").unwrap(),
            Expr::binary(BinaryOp::Eq, Expr::field("a b"), Expr::String("x".into()))
        );
    }

    #[test]
    fn numbers() {
        assert_eq!(parse_expr("1.5e3").unwrap(), num(1500.0));
        assert_eq!(parse_expr(".25").unwrap(), num(0.25));
    }

    #[test]
    fn errors_carry_offsets() {
        let e = parse_expr("1 + ").unwrap_err();
        assert_eq!(e.offset, 4);
        let e = parse_expr("foo(1)").unwrap_err();
        assert!(e.message.contains("unknown function"));
        assert_eq!(e.offset, 0);
        let e = parse_expr("datum.x @ 2").unwrap_err();
        assert_eq!(e.offset, 8);
        assert!(parse_expr("'abc").is_err());
        assert!(parse_expr("abs(1, 2)").is_err());
        assert!(parse_expr("(1 + 2").is_err());
        assert!(parse_expr("a = 1").is_err());
    }

    #[test]
    fn unknown_escape_is_kept_for_regexes() {
        assert_eq!(parse_expr(r"'\d+'").unwrap(), Expr::String(r"\d+".into()));
    }
}
