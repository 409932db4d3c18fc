//! Result cache, interaction prediction and idle-time prefetching.

mod lru;
mod predict;
mod prefetch;

pub use lru::{normalize_sql, CacheMetrics, CanonicalKey, PutOutcome, ResultCache};
pub use predict::{InteractionPredictor, Prediction};
pub use prefetch::{PrefetchJob, PrefetchReport, PrefetchTask};
