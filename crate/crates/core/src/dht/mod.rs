//! Consistent-hashing ownership and the write-behind object cache.

mod cache;
mod ring;

pub use cache::{
    CacheEntry, Dht, DhtConfig, DhtMetrics, FlushReport, NodeMetrics, PersistencePolicy,
    RebalanceReport,
};
pub use ring::{hash64, rebalance, HashRing, DEFAULT_HASH_SEED, DEFAULT_VNODES};
