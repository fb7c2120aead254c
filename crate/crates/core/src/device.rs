//! The shared device: one flash complex, one set of clocks and one L2P cache,
//! with a controller context per namespace. Host requests enter here.

use std::collections::HashMap;

use crate::allocator::FlashSpace;
use crate::config::{NamespaceKind, SimConfig};
use crate::error::{SimError, SimResult};
use crate::events::Event;
use crate::gc::GcJob;
use crate::geometry::{Layout, LinearAddr, MediaProfile, Ppa, UNIT_BYTES};
use crate::mapping::{CacheKey, Granularity, HitLevel, L2pCache};
use crate::namespace::{plan_namespaces, NsContext, NsCounters, NsPlan, ZoneState};
use crate::timing::{ChipCommand, CommandKind, CommandMeta, CommandScheduler, CommandTotals, Origin, Scheduled};
use crate::write_path::WriteBuffer;

/// Deferred background work, applied when the queue reaches it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Marker {
    /// Apply a GC job's mapping updates.
    Commit(u64),
    /// Return an erased SLC superblock to its partition.
    Release(u32),
}

/// Where a read unit was served from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadSource {
    Buffer { seq: u64 },
    Flash { ppa: Ppa },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadOutcome {
    pub completion: u64,
    pub sources: Vec<ReadSource>,
    pub levels: Vec<HitLevel>,
}

pub struct Device {
    pub(crate) cfg: SimConfig,
    pub(crate) layout: Layout,
    pub(crate) space: FlashSpace,
    pub(crate) sched: CommandScheduler<Marker>,
    pub(crate) cache: L2pCache,
    pub(crate) nss: Vec<NsContext>,
    pub(crate) buffers: Vec<WriteBuffer>,
    pub(crate) jobs: HashMap<u64, GcJob>,
    pub(crate) next_job: u64,
    pub(crate) gc_active: bool,
    pub(crate) next_seq: u64,
}

impl Device {
    /// Builds the one shared device and a controller context per namespace.
    pub fn new(cfg: SimConfig) -> SimResult<Self> {
        cfg.validate_basic()?;
        let slc = cfg.slc_profile();
        let regular = cfg.regular_profile();
        let layout = Layout::new(&cfg.geometry, &slc, &regular)?;
        if !cfg.buffers.capacity.is_multiple_of(UNIT_BYTES) {
            return Err(SimError::config("buffers.capacity must be a multiple of 4096"));
        }
        let mut space = FlashSpace::new(layout.clone(), cfg.zones.blocks_per_zone)?;
        let cap_units = space.zone_capacity_units();
        let plans = plan_namespaces(&cfg, &layout, cap_units, space.zone_regions_available())?;
        for p in &plans {
            if p.slc_superblocks > 0 {
                space.assign_slc_partition(p.id, p.slc_superblocks)?;
            }
        }
        let chunk_units = cfg.cache.chunk_size / UNIT_BYTES;
        let cap = cfg.buffers.capacity / UNIT_BYTES;
        let mut buffers = Vec::new();
        let mut nss = Vec::new();
        for p in plans {
            let count = match p.kind {
                NamespaceKind::Block => cfg.buffers.block_namespace_buffers.max(1),
                NamespaceKind::Zoned => cfg.buffers.count,
            };
            let ids: Vec<usize> = (0..count as usize).map(|i| buffers.len() + i).collect();
            for &id in &ids {
                buffers.push(WriteBuffer::new(id, p.id, cap));
            }
            nss.push(NsContext::new(p, chunk_units, ids));
        }
        let sched = CommandScheduler::new(
            &cfg.geometry,
            layout.clone(),
            slc,
            regular,
            cfg.gc.preemptible,
            nss.len(),
        );
        let cache = L2pCache::new(cfg.cache.capacity, cfg.cache.entry_size, cfg.cache.buckets);
        Ok(Device {
            cfg,
            layout,
            space,
            sched,
            cache,
            nss,
            buffers,
            jobs: HashMap::new(),
            next_job: 0,
            gc_active: false,
            next_seq: 1,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn space(&self) -> &FlashSpace {
        &self.space
    }

    pub fn cache(&self) -> &L2pCache {
        &self.cache
    }

    pub fn namespace_count(&self) -> usize {
        self.nss.len()
    }

    pub fn plan(&self, ns: u32) -> SimResult<&NsPlan> {
        Ok(&self.ctx(ns)?.plan)
    }

    pub fn counters(&self, ns: u32) -> SimResult<&NsCounters> {
        Ok(&self.ctx(ns)?.counters)
    }

    pub fn totals(&self, ns: u32) -> SimResult<&CommandTotals> {
        self.ctx(ns)?;
        Ok(self.sched.totals(ns))
    }

    pub fn zone_state(&self, ns: u32, zone: u64) -> SimResult<ZoneState> {
        let c = self.ctx(ns)?;
        c.zones.get(zone as usize).map(|z| z.state).ok_or(SimError::LbaOutOfRange { ns, lpa: zone })
    }

    pub fn write_pointer(&self, ns: u32, zone: u64) -> SimResult<u64> {
        let c = self.ctx(ns)?;
        c.zones.get(zone as usize).map(|z| z.write_pointer).ok_or(SimError::LbaOutOfRange { ns, lpa: zone })
    }

    /// Current table entry of an LBA, bypassing the cache.
    pub fn mapping_of(&self, ns: u32, lba: u64) -> SimResult<Option<Ppa>> {
        let c = self.ctx(ns)?;
        let (idx, _, _) = c.locate(lba)?;
        Ok(c.table.get(idx).map(|l| self.layout.ppa(l)))
    }

    pub fn mapping_granularity(&self, ns: u32, lba: u64) -> SimResult<Granularity> {
        let c = self.ctx(ns)?;
        let (idx, _, _) = c.locate(lba)?;
        Ok(c.table.granularity(idx))
    }

    /// Sequence number the next host-written unit will carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn buffer_fill(&self, id: usize) -> u64 {
        self.buffers[id].staged.len() as u64 * UNIT_BYTES
    }

    pub fn buffer_binding(&self, id: usize) -> Option<u64> {
        self.buffers[id].bound
    }

    pub fn buffer_ids(&self, ns: u32) -> SimResult<Vec<usize>> {
        Ok(self.ctx(ns)?.buffers.clone())
    }

    pub fn enable_event_log(&mut self, record_placements: bool) {
        self.sched.enable_event_log(record_placements);
    }

    pub fn events(&self) -> &[Event] {
        self.sched.events()
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        self.sched.take_events()
    }

    pub fn slc_profile(&self) -> MediaProfile {
        self.cfg.slc_profile()
    }

    pub fn regular_profile(&self) -> MediaProfile {
        self.cfg.regular_profile()
    }

    pub(crate) fn ctx(&self, ns: u32) -> SimResult<&NsContext> {
        self.nss.get(ns as usize).ok_or(SimError::UnknownNamespace(ns))
    }

    pub(crate) fn apply_markers(&mut self, markers: Vec<Marker>) -> SimResult<()> {
        for m in markers {
            match m {
                Marker::Commit(job) => self.commit_gc_job(job)?,
                Marker::Release(sb) => self.space.release_slc(sb),
            }
        }
        Ok(())
    }

    /// Dispatches background work that would start before `t`.
    pub(crate) fn drain_before(&mut self, t: u64) -> SimResult<()> {
        if !self.sched.has_pending_background() {
            return Ok(());
        }
        let mut markers = Vec::new();
        self.sched.drain_before(t, &mut markers)?;
        self.apply_markers(markers)
    }

    pub(crate) fn drain_all(&mut self) -> SimResult<()> {
        let mut markers = Vec::new();
        self.sched.drain_all(&mut markers)?;
        self.apply_markers(markers)
    }

    /// Eager submission; queued background work that could start earlier
    /// goes first.
    pub(crate) fn submit(&mut self, cmd: ChipCommand, meta: CommandMeta) -> SimResult<Scheduled> {
        self.drain_before(cmd.issue_time)?;
        self.sched.submit(cmd, meta)
    }

    fn drop_cached(&mut self, ns: u32, idx: u64) {
        self.cache.remove(&CacheKey { ns, granularity: Granularity::Page, address: idx });
        let t = &self.nss[ns as usize].table;
        if t.has_levels() {
            let z = t.zone_of(idx);
            let c = z * t.chunks_per_zone() + t.chunk_of(idx);
            self.cache.remove(&CacheKey { ns, granularity: Granularity::Chunk, address: c });
            self.cache.remove(&CacheKey { ns, granularity: Granularity::Zone, address: z });
        }
    }

    /// Repoints a unit that reclamation moved. The cache keeps its shape, so
    /// when a move commits never changes later hits or evictions.
    pub(crate) fn relocate(&mut self, ns: u32, idx: u64, to: LinearAddr) {
        if let Some(old) = self.nss[ns as usize].table.set(idx, Some(to)) {
            if old != to {
                self.space.invalidate(old);
            }
        }
        self.cache.update(&CacheKey { ns, granularity: Granularity::Page, address: idx }, to.0);
    }

    /// Points `idx` at `to`, invalidating whatever it pointed at before.
    pub(crate) fn map_update(&mut self, ns: u32, idx: u64, to: Option<LinearAddr>) {
        let old = self.nss[ns as usize].table.set(idx, to);
        if let Some(old) = old {
            if Some(old) != to {
                self.space.invalidate(old);
            }
        }
        self.drop_cached(ns, idx);
    }

    fn fetch_chip(&self, ns: u32, granularity: Granularity, address: u64) -> u32 {
        let g = match granularity {
            Granularity::Page => 0u64,
            Granularity::Chunk => 1,
            Granularity::Zone => 2,
        };
        let h = (address.wrapping_mul(3).wrapping_add(g)) ^ (ns as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let h = h ^ (h >> 29);
        (h % self.layout.chips as u64) as u32
    }

    /// Resolves `idx` through the cache, fetching table pages from flash on a
    /// miss. Returns the location and when it is known.
    fn translate(&mut self, ns: u32, idx: u64, at: u64) -> SimResult<(LinearAddr, u64, HitLevel)> {
        let hybrid = self.cfg.cache.hybrid;
        let c = &self.nss[ns as usize];
        let Some(lin) = c.table.get(idx) else {
            return Err(SimError::UnmappedRead { ns, lpa: c.lba_of(idx) });
        };
        let levels = hybrid && c.table.has_levels();
        let (zone, chunk_key) = if levels {
            let t = &c.table;
            let z = t.zone_of(idx);
            (z, z * t.chunks_per_zone() + t.chunk_of(idx))
        } else {
            (0, 0)
        };
        if levels {
            if self.cache.get(&CacheKey { ns, granularity: Granularity::Zone, address: zone }).is_some() {
                self.nss[ns as usize].counters.zone_hits += 1;
                return Ok((lin, at, HitLevel::Zone));
            }
            if self.cache.get(&CacheKey { ns, granularity: Granularity::Chunk, address: chunk_key }).is_some() {
                self.nss[ns as usize].counters.chunk_hits += 1;
                return Ok((lin, at, HitLevel::Chunk));
            }
        }
        let page_key = CacheKey { ns, granularity: Granularity::Page, address: idx };
        if let Some(v) = self.cache.get(&page_key) {
            debug_assert_eq!(v, lin.0);
            self.nss[ns as usize].counters.page_hits += 1;
            return Ok((lin, at, HitLevel::Page));
        }
        let c = &self.nss[ns as usize];
        let reads = if levels { c.table.fetch_reads(idx, self.cfg.cache.miss_strategy) } else { 1 };
        let granularity = if levels { c.table.granularity(idx) } else { Granularity::Page };
        let probe_order = [(Granularity::Zone, zone), (Granularity::Chunk, chunk_key), (Granularity::Page, idx)];
        let probes: Vec<(Granularity, u64)> = if reads == 1 {
            vec![match granularity {
                Granularity::Zone => probe_order[0],
                Granularity::Chunk => probe_order[1],
                Granularity::Page => probe_order[2],
            }]
        } else {
            probe_order[..reads as usize].to_vec()
        };
        let mut t = at;
        for (g, a) in probes {
            let chip = self.fetch_chip(ns, g, a);
            let target = self.layout.ppa_on_chip(chip, 0, 0);
            let cmd = ChipCommand {
                kind: CommandKind::Read,
                origin: Origin::Host,
                target,
                payload_bytes: UNIT_BYTES,
                issue_time: t,
            };
            let meta = CommandMeta { ns, mapping_fetch: true, ..Default::default() };
            t = self.submit(cmd, meta)?.completion;
        }
        // A reclamation commit during the fetch may have moved the unit.
        let lin = self.nss[ns as usize].table.get(idx).expect("caller checked the unit is mapped");
        let key = match granularity {
            Granularity::Zone => CacheKey { ns, granularity, address: zone },
            Granularity::Chunk => CacheKey { ns, granularity, address: chunk_key },
            Granularity::Page => page_key,
        };
        let pinned = granularity == Granularity::Zone && self.cfg.cache.pin_zone_entries;
        self.cache.insert(key, lin.0, pinned);
        self.nss[ns as usize].counters.misses += 1;
        Ok((lin, t, HitLevel::Miss))
    }

    /// Seq of a unit still staged in a write buffer.
    fn staged_seq(&self, ns: u32, idx: u64, zone: u64, off: u64) -> Option<u64> {
        let c = &self.nss[ns as usize];
        match c.plan.kind {
            NamespaceKind::Block => {
                let b = &self.buffers[c.buffers[0]];
                b.staged.iter().rev().find(|s| s.0 == idx).map(|s| s.1)
            }
            NamespaceKind::Zoned => {
                let z = &c.zones[zone as usize];
                let first = z.regular_units + z.slc_units;
                if off < first || off >= z.write_pointer {
                    return None;
                }
                let b = &self.buffers[z.buffer?];
                b.staged.get((off - first) as usize).map(|s| s.1)
            }
        }
    }

    pub fn read(&mut self, ns: u32, lba: u64, len: u64, now: u64) -> SimResult<ReadOutcome> {
        self.ctx(ns)?;
        if len == 0 || !len.is_multiple_of(UNIT_BYTES) {
            return Err(SimError::BadLength(len));
        }
        let n = len / UNIT_BYTES;
        let mut located = Vec::with_capacity(n as usize);
        {
            let c = &self.nss[ns as usize];
            for u in lba..lba + n {
                let (idx, zone, off) = c.locate(u)?;
                if c.plan.kind == NamespaceKind::Zoned && off >= c.plan.zone_capacity_units {
                    return Err(SimError::LbaOutOfRange { ns, lpa: u });
                }
                if c.table.get(idx).is_none() && self.staged_seq(ns, idx, zone, off).is_none() {
                    return Err(SimError::UnmappedRead { ns, lpa: u });
                }
                located.push((idx, zone, off));
            }
        }
        self.drain_before(now)?;
        let mut sources = Vec::with_capacity(n as usize);
        let mut levels = Vec::with_capacity(n as usize);
        // (chip, block, flash page) -> (ready time, units), in first-seen order.
        let mut groups: Vec<((u32, u32, u32), u64, u64)> = Vec::new();
        let mut chain = now;
        let mut flash = Vec::with_capacity(n as usize);
        for (idx, zone, off) in located {
            if let Some(seq) = self.staged_seq(ns, idx, zone, off) {
                sources.push(Some(ReadSource::Buffer { seq }));
                self.nss[ns as usize].counters.buffer_hits += 1;
                continue;
            }
            let (_, ready, level) = self.translate(ns, idx, chain)?;
            chain = ready;
            levels.push(level);
            flash.push((sources.len(), idx, ready));
            sources.push(None);
        }
        // Reclamation that commits while translation is under way moves
        // data; locations are taken once the lookups are done.
        self.drain_before(chain)?;
        for (slot, idx, ready) in flash {
            let lin = self.nss[ns as usize].table.get(idx).expect("checked above");
            let ppa = self.layout.ppa(lin);
            sources[slot] = Some(ReadSource::Flash { ppa });
            let key = (self.layout.chip_index(ppa.channel, ppa.chip), ppa.block, self.layout.flash_page(&ppa));
            match groups.iter_mut().find(|g| g.0 == key) {
                Some(g) => {
                    g.1 = g.1.max(ready);
                    g.2 += 1;
                }
                None => groups.push((key, ready, 1)),
            }
        }
        let mut completion = chain;
        for ((chip, block, fpage), ready, units) in groups {
            let target = self.layout.ppa_on_chip(chip, block, fpage * self.layout.units_per_flash_page);
            let cmd = ChipCommand {
                kind: CommandKind::Read,
                origin: Origin::Host,
                target,
                payload_bytes: units * UNIT_BYTES,
                issue_time: ready,
            };
            let s = self.submit(cmd, CommandMeta { ns, ..Default::default() })?;
            completion = completion.max(s.completion);
        }
        let c = &mut self.nss[ns as usize].counters;
        c.read_ops += 1;
        c.host_read_bytes += len;
        let sources = sources.into_iter().map(|s| s.expect("every unit resolved")).collect();
        Ok(ReadOutcome { completion, sources, levels })
    }

    /// Drains every queued background command; returns the time the device
    /// goes idle.
    pub fn finish(&mut self) -> SimResult<u64> {
        self.drain_all()?;
        let clocks = self.sched.clocks();
        let mut t = 0;
        for ch in 0..self.layout.channels {
            t = t.max(clocks.channel_free(ch));
            for chip in 0..self.layout.chips_per_channel {
                t = t.max(clocks.chip_free(ch, chip));
            }
        }
        Ok(t)
    }
}
