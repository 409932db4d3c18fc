//! Plan execution against a SQL back-end, and interactive sessions.

mod driver;
mod exec;
#[cfg(feature = "postgres")]
mod postgres;
mod session;
mod sources;
mod sqlite;

pub use driver::{connect, table_hash, DbDriver, DriverError, Fetched, InstrumentedDriver, SimulatedNetwork};
pub use exec::{
    client_set, data_query, execute_plan, fetch_node_data, fetch_server_results, need_all, Backend,
    Bindings, Execution, FetchMode, Need, PlanLabel, RuntimeError, ServerResults, TimingBreakdown,
};
#[cfg(feature = "postgres")]
pub use postgres::RemoteDriver;
pub(crate) use session::choose_step;
pub use session::{Freshness, Outcome, OverrideError, PlanChoice, Session, TimingRow};
pub use sources::{bind_sources, DriverCatalog};
pub use sqlite::EmbeddedDriver;
