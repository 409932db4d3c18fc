use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::table::Table;

/// Cache key: content hashes of the tables a query reads plus its rendered
/// SQL with whitespace runs collapsed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CanonicalKey {
    pub content: String,
    pub sql: String,
}

impl CanonicalKey {
    pub fn new(content: impl Into<String>, sql: &str) -> CanonicalKey {
        CanonicalKey {
            content: content.into(),
            sql: normalize_sql(sql),
        }
    }
}

/// Collapses whitespace runs outside string literals to one space.
pub fn normalize_sql(sql: &str) -> String {
    let mut out = String::with_capacity(sql.len());
    let mut in_string = false;
    let mut pending_space = false;
    for c in sql.trim().chars() {
        if in_string {
            out.push(c);
            if c == '\'' {
                in_string = false;
            }
            continue;
        }
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        if c == '\'' {
            in_string = true;
        }
        out.push(c);
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CacheMetrics {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub bytes: u64,
    pub entries: u64,
    pub rejected: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PutOutcome {
    /// Stored; lists the keys evicted to make room, oldest first.
    Stored { evicted: Vec<CanonicalKey> },
    /// Larger than the whole budget; the cache is unchanged.
    Rejected,
}

struct Entry {
    table: Arc<Table>,
    size: u64,
    tick: u64,
}

struct Inner {
    budget: u64,
    entries: HashMap<CanonicalKey, Entry>,
    by_tick: BTreeMap<u64, CanonicalKey>,
    tick: u64,
    metrics: CacheMetrics,
}

impl Inner {
    fn touch(&mut self, key: &CanonicalKey) {
        self.tick += 1;
        let tick = self.tick;
        if let Some(e) = self.entries.get_mut(key) {
            self.by_tick.remove(&e.tick);
            e.tick = tick;
            self.by_tick.insert(tick, key.clone());
        }
    }
}

/// Byte-budgeted LRU map from canonical keys to result tables. All
/// operations take one lock and are linearizable.
pub struct ResultCache {
    inner: Mutex<Inner>,
}

impl ResultCache {
    pub fn new(budget_bytes: u64) -> ResultCache {
        ResultCache {
            inner: Mutex::new(Inner {
                budget: budget_bytes,
                entries: HashMap::new(),
                by_tick: BTreeMap::new(),
                tick: 0,
                metrics: CacheMetrics::default(),
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn budget(&self) -> u64 {
        self.lock().budget
    }

    /// Looks up `key`, counting a hit or miss; a hit becomes most recent.
    pub fn get(&self, key: &CanonicalKey) -> Option<Arc<Table>> {
        let mut inner = self.lock();
        match inner.entries.get(key).map(|e| e.table.clone()) {
            Some(t) => {
                inner.metrics.hits += 1;
                inner.touch(key);
                Some(t)
            }
            None => {
                inner.metrics.misses += 1;
                None
            }
        }
    }

    /// Lookup that changes neither recency nor counters.
    pub fn peek(&self, key: &CanonicalKey) -> Option<Arc<Table>> {
        self.lock().entries.get(key).map(|e| e.table.clone())
    }

    /// Presence check that changes neither recency nor counters.
    pub fn contains(&self, key: &CanonicalKey) -> bool {
        self.lock().entries.contains_key(key)
    }

    /// Stores `table` sized by its CSV length.
    pub fn put(&self, key: CanonicalKey, table: Arc<Table>) -> PutOutcome {
        let size = table.csv_len();
        self.put_sized(key, table, size)
    }

    pub fn put_sized(&self, key: CanonicalKey, table: Arc<Table>, size: u64) -> PutOutcome {
        let mut inner = self.lock();
        if size > inner.budget {
            inner.metrics.rejected += 1;
            return PutOutcome::Rejected;
        }
        if let Some(old) = inner.entries.remove(&key) {
            inner.by_tick.remove(&old.tick);
            inner.metrics.bytes -= old.size;
        }
        let mut evicted = Vec::new();
        while inner.metrics.bytes + size > inner.budget {
            let Some((_, victim)) = inner.by_tick.pop_first() else {
                break;
            };
            let e = inner.entries.remove(&victim).expect("indexed entry exists");
            inner.metrics.bytes -= e.size;
            inner.metrics.evictions += 1;
            evicted.push(victim);
        }
        inner.tick += 1;
        let tick = inner.tick;
        inner.by_tick.insert(tick, key.clone());
        inner.entries.insert(key, Entry { table, size, tick });
        inner.metrics.bytes += size;
        inner.metrics.entries = inner.entries.len() as u64;
        PutOutcome::Stored { evicted }
    }

    pub fn metrics(&self) -> CacheMetrics {
        let inner = self.lock();
        CacheMetrics {
            entries: inner.entries.len() as u64,
            ..inner.metrics
        }
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        let mut inner = self.lock();
        inner.entries.clear();
        inner.by_tick.clear();
        inner.metrics.bytes = 0;
        inner.metrics.entries = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{Field, ScalarType, Schema};

    fn t() -> Arc<Table> {
        Arc::new(Table::empty(Schema(vec![Field::new("x", ScalarType::Number)])))
    }

    fn k(s: &str) -> CanonicalKey {
        CanonicalKey::new("h", s)
    }

    #[test]
    fn textbook_lru() {
        let c = ResultCache::new(2);
        c.put_sized(k("A"), t(), 1);
        c.put_sized(k("B"), t(), 1);
        assert!(c.get(&k("A")).is_some());
        let out = c.put_sized(k("C"), t(), 1);
        assert_eq!(out, PutOutcome::Stored { evicted: vec![k("B")] });
    }

    #[test]
    fn same_key_counts_once() {
        let c = ResultCache::new(10);
        c.put_sized(k("A"), t(), 4);
        c.put_sized(k("A"), t(), 4);
        assert_eq!(c.metrics().bytes, 4);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn oversize_is_rejected() {
        let c = ResultCache::new(3);
        c.put_sized(k("A"), t(), 2);
        assert_eq!(c.put_sized(k("B"), t(), 4), PutOutcome::Rejected);
        assert_eq!(c.len(), 1);
        assert!(c.get(&k("B")).is_none());
        assert_eq!(c.metrics().misses, 1);
    }

    #[test]
    fn whitespace_is_normalized_outside_strings() {
        assert_eq!(normalize_sql(" SELECT  *\n FROM t WHERE a = 'x  y' "), "SELECT * FROM t WHERE a = 'x  y'");
    }
}
