//! Reactive operator graph and the client-side interpreter.

mod bin;
pub(crate) mod eval_expr;
mod graph;
pub mod transforms;

pub use bin::BinLayout;
pub use eval_expr::{eval_expr, RegexCache, SignalValue, Signals};
pub use graph::{
    build_dataflow, DataflowGraph, EvalError, GraphError, NodeId, NodeKind, OperatorNode, Pulse,
};
pub use transforms::{apply_transform, TransformFailure, TransformOutput};
