//! Visualization spec model and its JSON parser.

mod model;
mod parse;

pub use model::*;
pub use parse::{parse_spec, parse_spec_with_catalog, Catalog, SpecError, SpecErrorKind, SPEC_VERSION};

/// Bundled example specs.
pub mod gallery {
    pub const FLIGHTS: &str = include_str!("../../gallery/flights.json");
    pub const CENSUS: &str = include_str!("../../gallery/census.json");
}
