//! Relational query trees, their translation from transforms, rewriting and
//! rendering to SQL text.

mod dialect;
mod query;
mod render;
mod rewrite;
mod translate;

pub use dialect::{parse_dialects, SqlDialect};
pub use query::{RunningSum, SqlAggregate, SqlExpr, SqlQuery};
pub use render::{float_text, render_sql};
pub use rewrite::{fold, rewrite, rewrite_counted, MAX_PASSES};
pub use translate::{
    check_supported, extent_query, merge_region, node_query, node_query_with, translate_data, translate_expr, translate_operator,
    translate_transform, SqlError,
};
