//! Consistent-hashing ring with virtual nodes.
//!
//! Points are `hash64("{node}#{i}")` for `i in 0..vnodes_per_node`, where
//! `hash64` is XXH3-64 with a pinned seed. A key belongs to the first point at
//! or after `hash64(key)`, wrapping to the lowest point past the end.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::store::{ObjectId, StoreError};

pub const DEFAULT_VNODES: u32 = 128;
pub const DEFAULT_HASH_SEED: u64 = 0x0aa5_0aa5_0aa5_0aa5;

pub fn hash64(seed: u64, data: &[u8]) -> u64 {
    xxh3_64_with_seed(data, seed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HashRing {
    nodes: BTreeSet<String>,
    vnodes_per_node: u32,
    seed: u64,
    /// Sorted by hash, then node id, so equal hashes still order deterministically.
    #[serde(skip)]
    points: Vec<(u64, u32)>,
    #[serde(skip)]
    names: Vec<String>,
}

impl HashRing {
    pub fn new(vnodes_per_node: u32, seed: u64) -> Self {
        assert!(vnodes_per_node > 0, "vnodes_per_node must be positive");
        HashRing {
            nodes: BTreeSet::new(),
            vnodes_per_node,
            seed,
            points: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn with_nodes<I, S>(nodes: I, vnodes_per_node: u32, seed: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut ring = HashRing::new(vnodes_per_node, seed);
        ring.set_nodes(nodes);
        ring
    }

    /// Replaces the node set and rebuilds every point.
    pub fn set_nodes<I, S>(&mut self, nodes: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.nodes = nodes.into_iter().map(Into::into).collect();
        self.names = self.nodes.iter().cloned().collect();
        self.points.clear();
        self.points
            .reserve(self.names.len() * self.vnodes_per_node as usize);
        for (ni, node) in self.names.iter().enumerate() {
            for v in 0..self.vnodes_per_node {
                let h = hash64(self.seed, format!("{node}#{v}").as_bytes());
                self.points.push((h, ni as u32));
            }
        }
        self.points.sort_unstable();
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn vnodes_per_node(&self) -> u32 {
        self.vnodes_per_node
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(hash point, node id)` pairs in ring order.
    pub fn points(&self) -> impl Iterator<Item = (u64, &str)> + '_ {
        self.points
            .iter()
            .map(|&(h, n)| (h, self.names[n as usize].as_str()))
    }

    pub fn key_hash(&self, key: &str) -> u64 {
        hash64(self.seed, key.as_bytes())
    }

    pub fn owner_of(&self, key: &str) -> Result<&str, StoreError> {
        if self.points.is_empty() {
            return Err(StoreError::RingEmpty);
        }
        let h = self.key_hash(key);
        let idx = self.points.partition_point(|&(p, _)| p < h);
        let (_, node) = self.points[if idx == self.points.len() { 0 } else { idx }];
        Ok(&self.names[node as usize])
    }
}

/// Ids whose owner differs between the two rings, mapped to their new owner.
pub fn rebalance<'a, I>(old: &HashRing, new: &HashRing, ids: I) -> Result<BTreeMap<ObjectId, String>, StoreError>
where
    I: IntoIterator<Item = &'a ObjectId>,
{
    let mut plan = BTreeMap::new();
    for id in ids {
        let to = new.owner_of(id.as_str())?;
        let moved = match old.owner_of(id.as_str()) {
            Ok(from) => from != to,
            Err(StoreError::RingEmpty) => true,
            Err(e) => return Err(e),
        };
        if moved {
            plan.insert(id.clone(), to.to_string());
        }
    }
    Ok(plan)
}
