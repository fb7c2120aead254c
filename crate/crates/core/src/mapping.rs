//! Flat logical-to-physical table with granularity flags, and the bounded
//! L2P cache in front of it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{LinearAddr, UNIT_BYTES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Granularity {
    Page,
    Chunk,
    Zone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MissStrategy {
    Multiple,
    Bitmap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HitLevel {
    Zone,
    Chunk,
    Page,
    Miss,
}

/// Bytes of a 2-bit-per-unit granularity bitmap for a device.
pub fn bitmap_overhead_bytes(device_bytes: u64) -> u64 {
    (device_bytes / UNIT_BYTES * 2).div_ceil(8)
}

/// Bytes needed to keep one pinned entry per zone.
pub fn pinned_zone_entry_bytes(device_bytes: u64, zone_size: u64, entry_bytes: u64) -> u64 {
    device_bytes.div_ceil(zone_size) * entry_bytes
}

/// One namespace's flat table. Entries hold `linear + 1`, 0 meaning unmapped.
/// Zoned namespaces index as `zone * zone_units + offset`; aggregation only
/// sets the granularity flags, page entries stay in place underneath.
#[derive(Clone, Debug)]
pub struct MappingTable {
    entries: Vec<u64>,
    zone_units: u64,
    chunk_units: u64,
    chunks_per_zone: u64,
    zone_agg: Vec<bool>,
    chunk_agg: Vec<bool>,
}

impl MappingTable {
    /// Page-only table for a block namespace.
    pub fn flat(units: u64) -> Self {
        MappingTable {
            entries: vec![0; units as usize],
            zone_units: units.max(1),
            chunk_units: units.max(1),
            chunks_per_zone: 0,
            zone_agg: Vec::new(),
            chunk_agg: Vec::new(),
        }
    }

    pub fn zoned(zones: u64, zone_units: u64, chunk_units: u64) -> Self {
        let chunks_per_zone = zone_units.div_ceil(chunk_units);
        MappingTable {
            entries: vec![0; (zones * zone_units) as usize],
            zone_units,
            chunk_units,
            chunks_per_zone,
            zone_agg: vec![false; zones as usize],
            chunk_agg: vec![false; (zones * chunks_per_zone) as usize],
        }
    }

    pub fn len(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_levels(&self) -> bool {
        !self.zone_agg.is_empty()
    }

    pub fn zone_units(&self) -> u64 {
        self.zone_units
    }

    pub fn chunk_units(&self) -> u64 {
        self.chunk_units
    }

    pub fn chunks_per_zone(&self) -> u64 {
        self.chunks_per_zone
    }

    pub fn get(&self, idx: u64) -> Option<LinearAddr> {
        match self.entries[idx as usize] {
            0 => None,
            v => Some(LinearAddr(v - 1)),
        }
    }

    /// Writes a page entry, demoting any aggregate covering it. Returns the
    /// previous location.
    pub fn set(&mut self, idx: u64, to: Option<LinearAddr>) -> Option<LinearAddr> {
        if self.has_levels() {
            let z = idx / self.zone_units;
            let c = z * self.chunks_per_zone + (idx % self.zone_units) / self.chunk_units;
            self.zone_agg[z as usize] = false;
            self.chunk_agg[c as usize] = false;
        }
        let old = self.get(idx);
        self.entries[idx as usize] = to.map_or(0, |l| l.0 + 1);
        old
    }

    pub fn zone_of(&self, idx: u64) -> u64 {
        idx / self.zone_units
    }

    /// Chunk number inside the zone.
    pub fn chunk_of(&self, idx: u64) -> u64 {
        (idx % self.zone_units) / self.chunk_units
    }

    pub fn granularity(&self, idx: u64) -> Granularity {
        if !self.has_levels() {
            return Granularity::Page;
        }
        let z = self.zone_of(idx);
        if self.zone_agg[z as usize] {
            Granularity::Zone
        } else if self.chunk_agg[(z * self.chunks_per_zone + self.chunk_of(idx)) as usize] {
            Granularity::Chunk
        } else {
            Granularity::Page
        }
    }

    pub fn zone_aggregated(&self, zone: u64) -> bool {
        self.zone_agg.get(zone as usize).copied().unwrap_or(false)
    }

    pub fn chunk_aggregated(&self, zone: u64, chunk: u64) -> bool {
        self.chunk_agg
            .get((zone * self.chunks_per_zone + chunk) as usize)
            .copied()
            .unwrap_or(false)
    }

    pub fn set_zone_aggregated(&mut self, zone: u64, on: bool) {
        self.zone_agg[zone as usize] = on;
    }

    pub fn set_chunk_aggregated(&mut self, zone: u64, chunk: u64, on: bool) {
        self.chunk_agg[(zone * self.chunks_per_zone + chunk) as usize] = on;
    }

    /// Zone-offset range `[start, end)` of a chunk, clipped to the zone.
    pub fn chunk_range(&self, chunk: u64) -> (u64, u64) {
        let start = chunk * self.chunk_units;
        (start, (start + self.chunk_units).min(self.zone_units))
    }

    /// Table reads needed to learn the entry covering `idx`.
    pub fn fetch_reads(&self, idx: u64, strategy: MissStrategy) -> u32 {
        if !self.has_levels() || strategy == MissStrategy::Bitmap {
            return 1;
        }
        match self.granularity(idx) {
            Granularity::Zone => 1,
            Granularity::Chunk => 2,
            Granularity::Page => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub ns: u32,
    pub granularity: Granularity,
    /// Page index, chunk number (`zone * chunks_per_zone + chunk`) or zone.
    pub address: u64,
}

const NIL: u32 = u32::MAX;

#[derive(Clone, Debug)]
struct Slot {
    key: CacheKey,
    value: u64,
    pinned: bool,
    prev: u32,
    next: u32,
}

/// Capacity-bounded L2P cache: hash buckets for lookup, one global LRU list
/// over unpinned entries. Pinned entries count against the capacity.
#[derive(Clone, Debug)]
pub struct L2pCache {
    capacity_entries: usize,
    entry_size: u64,
    buckets: Vec<HashMap<CacheKey, u32>>,
    slots: Vec<Slot>,
    free: Vec<u32>,
    head: u32,
    tail: u32,
    len: usize,
    pinned: usize,
}

impl L2pCache {
    pub fn new(capacity_bytes: u64, entry_size: u64, bucket_count: usize) -> Self {
        L2pCache {
            capacity_entries: (capacity_bytes / entry_size.max(1)) as usize,
            entry_size,
            buckets: (0..bucket_count.max(1)).map(|_| HashMap::new()).collect(),
            slots: Vec::new(),
            free: Vec::new(),
            head: NIL,
            tail: NIL,
            len: 0,
            pinned: 0,
        }
    }

    pub fn capacity_entries(&self) -> usize {
        self.capacity_entries
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn pinned_len(&self) -> usize {
        self.pinned
    }

    pub fn bytes_used(&self) -> u64 {
        self.len as u64 * self.entry_size
    }

    fn bucket(&self, key: &CacheKey) -> usize {
        let h = key.address ^ (key.ns as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        (h % self.buckets.len() as u64) as usize
    }

    fn unlink(&mut self, i: u32) {
        let (prev, next) = (self.slots[i as usize].prev, self.slots[i as usize].next);
        if prev == NIL {
            self.head = next;
        } else {
            self.slots[prev as usize].next = next;
        }
        if next == NIL {
            self.tail = prev;
        } else {
            self.slots[next as usize].prev = prev;
        }
    }

    fn push_front(&mut self, i: u32) {
        self.slots[i as usize].prev = NIL;
        self.slots[i as usize].next = self.head;
        if self.head != NIL {
            self.slots[self.head as usize].prev = i;
        }
        self.head = i;
        if self.tail == NIL {
            self.tail = i;
        }
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.buckets[self.bucket(key)].contains_key(key)
    }

    /// Looks up and refreshes recency.
    pub fn get(&mut self, key: &CacheKey) -> Option<u64> {
        let b = self.bucket(key);
        let &i = self.buckets[b].get(key)?;
        if !self.slots[i as usize].pinned {
            self.unlink(i);
            self.push_front(i);
        }
        Some(self.slots[i as usize].value)
    }

    /// Rewrites a cached value in place; recency is untouched.
    pub fn update(&mut self, key: &CacheKey, value: u64) -> bool {
        let b = self.bucket(key);
        let Some(&i) = self.buckets[b].get(key) else { return false };
        self.slots[i as usize].value = value;
        true
    }

    /// Inserts or refreshes an entry. Returns false when the cache is full of
    /// pinned entries and nothing could be evicted.
    pub fn insert(&mut self, key: CacheKey, value: u64, pinned: bool) -> bool {
        let b = self.bucket(&key);
        if let Some(&i) = self.buckets[b].get(&key) {
            let was_pinned = self.slots[i as usize].pinned;
            self.slots[i as usize].value = value;
            if !was_pinned {
                self.unlink(i);
            }
            if pinned {
                if !was_pinned {
                    self.pinned += 1;
                }
                self.slots[i as usize].pinned = true;
            } else {
                if was_pinned {
                    self.pinned -= 1;
                }
                self.slots[i as usize].pinned = false;
                self.push_front(i);
            }
            return true;
        }
        if self.len >= self.capacity_entries {
            if self.tail == NIL {
                return false;
            }
            let victim = self.slots[self.tail as usize].key;
            self.remove(&victim);
        }
        let slot = Slot { key, value, pinned, prev: NIL, next: NIL };
        let i = match self.free.pop() {
            Some(i) => {
                self.slots[i as usize] = slot;
                i
            }
            None => {
                self.slots.push(slot);
                (self.slots.len() - 1) as u32
            }
        };
        self.buckets[b].insert(key, i);
        self.len += 1;
        if pinned {
            self.pinned += 1;
        } else {
            self.push_front(i);
        }
        true
    }

    pub fn remove(&mut self, key: &CacheKey) -> bool {
        let b = self.bucket(key);
        let Some(i) = self.buckets[b].remove(key) else { return false };
        if self.slots[i as usize].pinned {
            self.pinned -= 1;
        } else {
            self.unlink(i);
        }
        self.free.push(i);
        self.len -= 1;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(address: u64) -> CacheKey {
        CacheKey { ns: 1, granularity: Granularity::Page, address }
    }

    #[test]
    fn memory_overheads() {
        assert_eq!(bitmap_overhead_bytes(1 << 40), 64 << 20);
        assert_eq!(pinned_zone_entry_bytes(1 << 40, 16 << 20, 4), 256 << 10);
    }

    #[test]
    fn fetch_reads_follow_the_level_walk() {
        let mut t = MappingTable::zoned(2, 12, 4);
        assert_eq!(t.fetch_reads(5, MissStrategy::Multiple), 3);
        t.set_chunk_aggregated(0, 1, true);
        assert_eq!(t.fetch_reads(5, MissStrategy::Multiple), 2);
        t.set_zone_aggregated(0, true);
        assert_eq!(t.fetch_reads(5, MissStrategy::Multiple), 1);
        assert_eq!(t.fetch_reads(17, MissStrategy::Multiple), 3);
        assert_eq!(t.fetch_reads(17, MissStrategy::Bitmap), 1);
        assert_eq!(MappingTable::flat(8).fetch_reads(3, MissStrategy::Multiple), 1);
    }

    #[test]
    fn update_demotes_covering_aggregates() {
        let mut t = MappingTable::zoned(2, 12, 4);
        t.set_chunk_aggregated(1, 2, true);
        t.set_zone_aggregated(1, true);
        assert_eq!(t.granularity(12 + 9), Granularity::Zone);
        assert_eq!(t.set(12 + 9, Some(LinearAddr(7))), None);
        assert_eq!(t.granularity(12 + 9), Granularity::Page);
        assert!(!t.zone_aggregated(1));
        assert_eq!(t.get(21), Some(LinearAddr(7)));
        assert_eq!(t.set(21, None), Some(LinearAddr(7)));
        assert_eq!(t.get(21), None);
    }

    #[test]
    fn lru_evicts_least_recent_unpinned() {
        let mut c = L2pCache::new(3 * 8, 8, 4);
        for a in 0..3 {
            assert!(c.insert(key(a), a, false));
        }
        assert_eq!(c.get(&key(0)), Some(0));
        c.insert(key(3), 3, false);
        assert!(!c.contains(&key(1)));
        assert!(c.contains(&key(0)));
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn pinned_entries_fill_capacity_and_are_never_evicted() {
        let mut c = L2pCache::new(2 * 8, 8, 4);
        assert!(c.insert(key(0), 0, true));
        assert!(c.insert(key(1), 1, false));
        assert!(c.insert(key(2), 2, false));
        assert!(c.contains(&key(0)));
        assert!(!c.contains(&key(1)));
        assert!(c.insert(key(3), 3, true));
        assert!(!c.insert(key(4), 4, false));
        assert_eq!(c.pinned_len(), 2);
        assert!(c.bytes_used() <= 16);
        assert!(c.remove(&key(0)));
        assert!(c.insert(key(4), 4, false));
    }

    #[test]
    fn namespaces_do_not_alias() {
        let mut c = L2pCache::new(64, 8, 1);
        c.insert(CacheKey { ns: 0, granularity: Granularity::Page, address: 5 }, 1, false);
        assert_eq!(c.get(&CacheKey { ns: 1, granularity: Granularity::Page, address: 5 }), None);
        assert_eq!(c.get(&CacheKey { ns: 0, granularity: Granularity::Chunk, address: 5 }), None);
    }
}
