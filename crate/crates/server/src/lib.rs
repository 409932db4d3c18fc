//! HTTP service and command-line front end for the vegaplus middleware.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod state;

pub use api::router;
pub use config::Config;
pub use state::AppState;
