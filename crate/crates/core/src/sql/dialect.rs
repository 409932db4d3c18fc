use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::Deserialize;

const BUILTIN: &str = include_str!("../../dialects.toml");

/// Rendering parameters for one SQL engine.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct SqlDialect {
    #[serde(skip)]
    pub name: String,
    pub quote: char,
    /// Template for float literals, e.g. `{}::float8`.
    pub float_literal: String,
    pub float_cast: String,
    /// Template with `{subject}` and `{pattern}` slots; empty when unsupported.
    #[serde(default)]
    pub regex_match: String,
    /// Template with `{a}` and `{b}` slots; must yield null when `b` is zero.
    pub modulo: String,
    pub sqrt: String,
    pub floor: String,
    /// Rounds toward zero; used for bin indices, where values outside the
    /// integer range may saturate.
    pub trunc: String,
    pub ceil: String,
    pub window_functions: bool,
}

/// Parses a dialect file: one TOML table per dialect.
pub fn parse_dialects(text: &str) -> Result<BTreeMap<String, SqlDialect>, toml::de::Error> {
    let mut map: BTreeMap<String, SqlDialect> = toml::from_str(text)?;
    for (name, d) in map.iter_mut() {
        d.name = name.clone();
    }
    Ok(map)
}

fn builtin() -> &'static BTreeMap<String, SqlDialect> {
    static DIALECTS: OnceLock<BTreeMap<String, SqlDialect>> = OnceLock::new();
    DIALECTS.get_or_init(|| parse_dialects(BUILTIN).expect("bundled dialects.toml is valid"))
}

impl SqlDialect {
    pub fn by_name(name: &str) -> Option<SqlDialect> {
        builtin().get(name).cloned()
    }

    pub fn sqlite() -> SqlDialect {
        Self::by_name("sqlite").unwrap()
    }

    pub fn postgres() -> SqlDialect {
        Self::by_name("postgres").unwrap()
    }

    pub fn duckdb() -> SqlDialect {
        Self::by_name("duckdb").unwrap()
    }

    pub fn with_window_functions(mut self, enabled: bool) -> SqlDialect {
        self.window_functions = enabled;
        self
    }

    pub fn supports_regex(&self) -> bool {
        !self.regex_match.is_empty()
    }

    pub fn quote_ident(&self, name: &str) -> String {
        let q = self.quote;
        let mut out = String::with_capacity(name.len() + 2);
        out.push(q);
        for c in name.chars() {
            if c == q {
                out.push(q);
            }
            out.push(c);
        }
        out.push(q);
        out
    }

    pub(crate) fn fill(template: &str, slots: &[(&str, &str)]) -> String {
        let mut out = template.to_string();
        for (k, v) in slots {
            out = out.replace(&format!("{{{k}}}"), v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_dialects_load() {
        let d = SqlDialect::sqlite();
        assert_eq!(d.name, "sqlite");
        assert!(d.window_functions && d.supports_regex());
        assert_eq!(SqlDialect::postgres().float_literal, "{}::float8");
        assert_eq!(d.quote_ident("a\"b"), "\"a\"\"b\"");
    }
}
