//! Compiles declarative visualization specs into dataflow graphs, translates
//! their transforms to SQL, and splits execution between a client-side
//! interpreter and a database server.

pub mod cache;
pub mod dataflow;
pub mod expr;
pub mod partition;
pub mod runtime;
pub mod spec;
pub mod sql;
pub mod synth;
pub mod table;
pub mod testkit;
pub mod value;

pub use spec::{parse_spec, VizSpec};
pub use table::Table;
pub use value::{Field, ScalarType, Schema, Value};
