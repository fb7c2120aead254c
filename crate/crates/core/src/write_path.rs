//! Host writes: buffer binding, flush routing between regular flash and the
//! SLC partition, and folding SLC-resident zone data back into the zone's
//! region.
//!
//! For a zone, units `[regular, regular + slc)` live in SLC and everything up
//! to the write pointer is staged in the bound buffer, so the SLC part always
//! precedes the staged part in zone order.

use std::collections::HashMap;

use crate::config::{BindingPolicyKind, NamespaceKind};
use crate::device::Device;
use crate::error::{SimError, SimResult};
use crate::events::{ProgramCause, UnitOwner};
use crate::geometry::{LinearAddr, Ppa, UNIT_BYTES};
use crate::mapping::{CacheKey, Granularity};
use crate::namespace::ZoneState;
use crate::timing::{ChipCommand, CommandKind, CommandMeta, Origin};

#[derive(Clone, Debug, PartialEq)]
pub struct WriteBuffer {
    pub id: usize,
    pub ns: u32,
    pub capacity_units: u64,
    /// (table index, seq) in arrival order.
    pub staged: Vec<(u64, u64)>,
    pub bound: Option<u64>,
    /// Staging waits until the previous flush has left the buffer.
    pub busy_until: u64,
}

impl WriteBuffer {
    pub fn new(id: usize, ns: u32, capacity_units: u64) -> Self {
        WriteBuffer { id, ns, capacity_units, staged: Vec::new(), bound: None, busy_until: 0 }
    }

    pub fn fill(&self) -> u64 {
        self.staged.len() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlushReason {
    Full,
    Conflict,
    Sync,
    HostFlush,
    /// The zone reached capacity or was finished.
    ZoneFinish,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BindDecision {
    Reuse(usize),
    /// Free or empty buffer; no flush needed.
    Take(usize),
    /// Flush this buffer's current zone first.
    Steal(usize),
}

/// Chooses a buffer (position in `views`) for `zone`. `views` holds each
/// buffer's (bound zone, fill).
pub fn choose_buffer(policy: BindingPolicyKind, custom: &[u32], views: &[(Option<u64>, u64)], zone: u64) -> BindDecision {
    let fixed = |i: usize| match views[i] {
        (Some(z), _) if z == zone => BindDecision::Reuse(i),
        (Some(_), fill) if fill > 0 => BindDecision::Steal(i),
        _ => BindDecision::Take(i),
    };
    match policy {
        BindingPolicyKind::Modulo => fixed((zone % views.len() as u64) as usize),
        BindingPolicyKind::Custom => fixed(custom[(zone % custom.len() as u64) as usize] as usize),
        BindingPolicyKind::FullyAssociative => {
            if let Some(i) = views.iter().position(|v| v.0 == Some(zone)) {
                return BindDecision::Reuse(i);
            }
            if let Some(i) = views.iter().position(|v| v.0.is_none()) {
                return BindDecision::Take(i);
            }
            if let Some(i) = views.iter().position(|v| v.1 == 0) {
                return BindDecision::Take(i);
            }
            let mut best = 0;
            for (i, v) in views.iter().enumerate() {
                if v.1 > views[best].1 {
                    best = i;
                }
            }
            BindDecision::Steal(best)
        }
    }
}

/// A unit headed for the zone region.
pub(crate) enum Source {
    /// Currently in SLC at this location.
    Slc(LinearAddr),
    Staged,
}

impl Device {
    fn flush_threshold(&self, b: usize) -> u64 {
        let stripe = self.layout.program_units as u64 * self.layout.chips as u64;
        self.buffers[b].capacity_units.min(stripe)
    }

    fn owner_for(&self, ns: u32, idx: u64, seq: u64) -> UnitOwner {
        UnitOwner { ns, lpa: self.nss[ns as usize].lba_of(idx), seq }
    }

    /// Programs units into the namespace's SLC partition. Returns (completion,
    /// last transfer end).
    pub(crate) fn program_slc(
        &mut self,
        ns: u32,
        items: &[(u64, UnitOwner)],
        now: u64,
        origin: Origin,
        cause: ProgramCause,
    ) -> SimResult<(u64, u64)> {
        if items.is_empty() {
            return Ok((now, now));
        }
        self.ensure_slc(ns, items.len() as u64, now)?;
        let lins = self.space.allocate_slc_stripe(ns, items.len() as u64)?;
        for (lin, (_, owner)) in lins.iter().zip(items) {
            self.space.program(*lin, *owner);
        }
        let groups = self.group_by_flash_page(&lins, items.iter().map(|i| i.1));
        let (mut done, mut xfer) = (now, now);
        for (target, placements) in groups {
            let bytes = placements.len() as u64 * UNIT_BYTES;
            let cmd = ChipCommand { kind: CommandKind::Program, origin, target, payload_bytes: bytes, issue_time: now };
            let meta = CommandMeta { ns, causes: vec![(cause, bytes)], mapping_fetch: false, placements };
            let s = self.submit(cmd, meta)?;
            done = done.max(s.completion);
            xfer = xfer.max(s.transfer.map_or(s.completion, |t| t.end));
        }
        for (lin, (idx, _)) in lins.iter().zip(items) {
            self.map_update(ns, *idx, Some(*lin));
        }
        Ok((done, xfer))
    }

    /// Splits allocated units into one command per (chip, flash page).
    pub(crate) fn group_by_flash_page(
        &self,
        lins: &[LinearAddr],
        owners: impl Iterator<Item = UnitOwner>,
    ) -> Vec<(Ppa, Vec<(Ppa, UnitOwner)>)> {
        let mut groups: Vec<(Ppa, Vec<(Ppa, UnitOwner)>)> = Vec::new();
        for (lin, owner) in lins.iter().zip(owners) {
            let ppa = self.layout.ppa(*lin);
            let fp = self.layout.flash_page(&ppa);
            let found = groups.iter_mut().find(|g| {
                let t = g.0;
                (t.channel, t.chip, t.block) == (ppa.channel, ppa.chip, ppa.block) && self.layout.flash_page(&t) == fp
            });
            match found {
                Some(g) => g.1.push((ppa, owner)),
                None => groups.push((ppa, vec![(ppa, owner)])),
            }
        }
        groups
    }

    /// Makes sure the partition can hand out `n` units, finishing pending
    /// reclamation and then collecting on demand if that is what it takes.
    pub(crate) fn ensure_slc(&mut self, ns: u32, n: u64, now: u64) -> SimResult<()> {
        // Reclaim before the allocation eats the headroom migration needs.
        self.maybe_gc(ns, now)?;
        if self.space.slc_available_units(ns) >= n {
            return Ok(());
        }
        if self.sched.has_pending_background() {
            self.drain_all()?;
        }
        if self.space.slc_available_units(ns) < n {
            self.reclaim_for(ns, n, now)?;
        }
        if self.space.slc_available_units(ns) >= n {
            return Ok(());
        }
        Err(SimError::OutOfSpace("slc"))
    }

    /// Programs the next units of a zone's region, in zone order. Sources
    /// that live in SLC are read first. Returns (completion, last transfer end
    /// of staged data).
    fn program_zone(
        &mut self,
        ns: u32,
        zone: u64,
        sources: Vec<(u64, Source, UnitOwner)>,
        now: u64,
        gc: bool,
    ) -> SimResult<(u64, u64)> {
        let pu = self.layout.program_units as u64;
        debug_assert_eq!(sources.len() as u64 % pu, 0);
        let start = self.nss[ns as usize].zones[zone as usize].regular_units;
        let region = self.nss[ns as usize].zones[zone as usize]
            .region
            .clone()
            .expect("open zone has a region");
        // Fold reads occupy their chips, but the program is timed from the
        // flush rather than from the reads' completion.
        for (_, src, _) in &sources {
            if let Source::Slc(lin) = src {
                let cmd = ChipCommand {
                    kind: CommandKind::Read,
                    origin: Origin::Background,
                    target: self.layout.ppa(*lin),
                    payload_bytes: UNIT_BYTES,
                    issue_time: now,
                };
                if gc {
                    self.sched.enqueue_background(cmd, CommandMeta { ns, ..Default::default() })?;
                } else {
                    self.submit(cmd, CommandMeta { ns, ..Default::default() })?;
                }
            }
        }
        if gc {
            self.sched.enqueue_barrier();
        }
        let (mut done, mut xfer) = (now, now);
        let mut slc_total = 0;
        for (k, chunk) in sources.chunks(pu as usize).enumerate() {
            let first = start + k as u64 * pu;
            let mut placements = Vec::with_capacity(chunk.len());
            let (mut from_slc, mut from_buf) = (0u64, 0u64);
            for (j, (_, src, owner)) in chunk.iter().enumerate() {
                let lin = region.linear(&self.layout, first + j as u64)?;
                self.space.program(lin, *owner);
                placements.push((self.layout.ppa(lin), *owner));
                match src {
                    Source::Slc(_) => from_slc += 1,
                    Source::Staged => from_buf += 1,
                }
            }
            slc_total += from_slc;
            let mut causes = Vec::new();
            let slc_cause = if gc { ProgramCause::GcMigration } else { ProgramCause::Fold };
            if from_slc > 0 {
                causes.push((slc_cause, from_slc * UNIT_BYTES));
            }
            if from_buf > 0 {
                causes.push((ProgramCause::HostRegular, from_buf * UNIT_BYTES));
            }
            let cmd = ChipCommand {
                kind: CommandKind::Program,
                origin: if from_slc > 0 { Origin::Background } else { Origin::Host },
                target: region.ppa_from_zone_offset(&self.layout, first)?,
                payload_bytes: pu * UNIT_BYTES,
                issue_time: now,
            };
            let meta = CommandMeta { ns, causes, mapping_fetch: false, placements };
            if gc {
                self.sched.enqueue_background(cmd, meta)?;
            } else {
                let s = self.submit(cmd, meta)?;
                done = done.max(s.completion);
                if from_buf > 0 {
                    xfer = xfer.max(s.transfer.map_or(s.completion, |t| t.end));
                }
            }
        }
        let z = &mut self.nss[ns as usize].zones[zone as usize];
        z.regular_units += sources.len() as u64;
        z.slc_units -= slc_total;
        if !gc {
            for (j, (idx, _, _)) in sources.iter().enumerate() {
                let lin = region.linear(&self.layout, start + j as u64)?;
                self.map_update(ns, *idx, Some(lin));
            }
            self.try_aggregate(ns, zone)?;
        }
        Ok((done, xfer))
    }

    /// The first `n` SLC-resident units of a zone as fold sources.
    pub(crate) fn zone_slc_sources(&self, ns: u32, zone: u64, n: u64) -> Vec<(u64, Source, UnitOwner)> {
        let c = &self.nss[ns as usize];
        let z = &c.zones[zone as usize];
        let cap = c.plan.zone_capacity_units;
        (z.regular_units..z.regular_units + n)
            .map(|off| {
                let idx = zone * cap + off;
                let lin = c.table.get(idx).expect("SLC-resident unit is mapped");
                let owner = self.space.owner(lin).expect("mapped unit has an owner");
                (idx, Source::Slc(lin), owner)
            })
            .collect()
    }

    /// Folds `n` SLC-resident units (a multiple of the programming unit) into
    /// the zone region.
    pub(crate) fn fold_zone(&mut self, ns: u32, zone: u64, n: u64, now: u64, gc: bool) -> SimResult<(u64, Vec<(u64, LinearAddr, LinearAddr)>)> {
        if n == 0 {
            return Ok((now, Vec::new()));
        }
        if !gc {
            // Sources are read at `now`; reclamation that would commit first
            // has to be applied before they are looked up.
            self.drain_before(now)?;
        }
        let sources = self.zone_slc_sources(ns, zone, n);
        let start = self.nss[ns as usize].zones[zone as usize].regular_units;
        let region = self.nss[ns as usize].zones[zone as usize].region.clone().expect("open zone");
        let mut updates = Vec::new();
        if gc {
            for (j, (idx, src, _)) in sources.iter().enumerate() {
                if let Source::Slc(old) = src {
                    updates.push((*idx, *old, region.linear(&self.layout, start + j as u64)?));
                }
            }
        } else {
            self.nss[ns as usize].counters.folds += 1;
        }
        let (done, _) = self.program_zone(ns, zone, sources, now, gc)?;
        Ok((done, updates))
    }

    /// Flushes one buffer. Returns when the flushed data is durable.
    pub(crate) fn flush_buffer(&mut self, b: usize, reason: FlushReason, now: u64) -> SimResult<u64> {
        let ns = self.buffers[b].ns;
        if self.buffers[b].staged.is_empty() {
            if matches!(reason, FlushReason::Conflict | FlushReason::ZoneFinish) {
                self.unbind(b);
            }
            return Ok(now);
        }
        let (done, xfer) = match self.nss[ns as usize].plan.kind {
            NamespaceKind::Block => {
                let staged = std::mem::take(&mut self.buffers[b].staged);
                let items: Vec<(u64, UnitOwner)> =
                    staged.iter().map(|&(idx, seq)| (idx, self.owner_for(ns, idx, seq))).collect();
                self.program_slc(ns, &items, now, Origin::Host, ProgramCause::HostSlc)?
            }
            NamespaceKind::Zoned => self.flush_zone_buffer(b, reason, now)?,
        };
        let buf = &mut self.buffers[b];
        buf.busy_until = buf.busy_until.max(xfer);
        if matches!(reason, FlushReason::Conflict | FlushReason::ZoneFinish) {
            self.unbind(b);
        }
        let c = &mut self.nss[ns as usize];
        c.durable_at = c.durable_at.max(done);
        Ok(done)
    }

    fn unbind(&mut self, b: usize) {
        let ns = self.buffers[b].ns;
        if let Some(z) = self.buffers[b].bound.take() {
            if let Some(zone) = self.nss[ns as usize].zones.get_mut(z as usize) {
                if zone.buffer == Some(b) {
                    zone.buffer = None;
                }
            }
        }
    }

    /// Takes the first `n` staged units of a buffer as region sources.
    fn take_staged(&mut self, b: usize, n: usize) -> Vec<(u64, Source, UnitOwner)> {
        let ns = self.buffers[b].ns;
        let taken: Vec<(u64, u64)> = self.buffers[b].staged.drain(..n).collect();
        taken.into_iter().map(|(idx, seq)| (idx, Source::Staged, self.owner_for(ns, idx, seq))).collect()
    }

    fn staged_to_slc(&mut self, b: usize, zone: u64, now: u64) -> SimResult<(u64, u64)> {
        let n = self.buffers[b].staged.len();
        if n < self.layout.program_units as usize || !self.cfg.buffers.buffer_all_in_slc {
            self.nss[self.buffers[b].ns as usize].counters.premature_flushes += 1;
        }
        self.front_to_slc(b, zone, n, now)
    }

    /// Moves the first `n` staged units of a buffer to the SLC partition.
    fn front_to_slc(&mut self, b: usize, zone: u64, n: usize, now: u64) -> SimResult<(u64, u64)> {
        let ns = self.buffers[b].ns;
        let staged: Vec<(u64, u64)> = self.buffers[b].staged.drain(..n).collect();
        let items: Vec<(u64, UnitOwner)> = staged.iter().map(|&(idx, seq)| (idx, self.owner_for(ns, idx, seq))).collect();
        let r = self.program_slc(ns, &items, now, Origin::Host, ProgramCause::HostSlc)?;
        self.nss[ns as usize].zones[zone as usize].slc_units += n as u64;
        Ok(r)
    }

    fn flush_zone_buffer(&mut self, b: usize, reason: FlushReason, now: u64) -> SimResult<(u64, u64)> {
        let ns = self.buffers[b].ns;
        let zone = self.buffers[b].bound.expect("staged zone buffer is bound");
        let p = self.layout.program_units as u64;
        let f = self.buffers[b].fill();
        let s = self.nss[ns as usize].zones[zone as usize].slc_units;
        if self.cfg.buffers.buffer_all_in_slc {
            return self.staged_to_slc(b, zone, now);
        }
        let keep_rest = reason == FlushReason::Full;
        if s == 0 {
            let d = f / p * p;
            let (mut done, mut xfer) = (now, now);
            if d > 0 {
                let sources = self.take_staged(b, d as usize);
                (done, xfer) = self.program_zone(ns, zone, sources, now, false)?;
            }
            if f > d && !(keep_rest && d > 0) {
                let (d2, x2) = self.staged_to_slc(b, zone, now)?;
                done = done.max(d2);
                xfer = xfer.max(x2);
            }
            return Ok((done, xfer));
        }
        match reason {
            FlushReason::Sync | FlushReason::HostFlush => {
                // Same data path as staging everything and folding once, but
                // in programming-unit steps so the partition never has to
                // hold more than the residue plus one unit for this zone.
                self.nss[ns as usize].counters.premature_flushes += 1;
                let (mut done, mut xfer) = (now, now);
                while !self.buffers[b].staged.is_empty() {
                    let s = self.nss[ns as usize].zones[zone as usize].slc_units;
                    let k = (p - s % p).min(self.buffers[b].fill()) as usize;
                    let (d, x) = self.front_to_slc(b, zone, k, now)?;
                    done = done.max(d);
                    xfer = xfer.max(x);
                    let s = self.nss[ns as usize].zones[zone as usize].slc_units;
                    if s >= p {
                        let (d2, _) = self.fold_zone(ns, zone, s / p * p, now, false)?;
                        done = done.max(d2);
                    }
                }
                Ok((done, xfer))
            }
            FlushReason::Full | FlushReason::Conflict | FlushReason::ZoneFinish => {
                if s + f < p {
                    return self.staged_to_slc(b, zone, now);
                }
                let n = (s + f) / p * p;
                self.drain_before(now)?;
                let mut sources = self.zone_slc_sources(ns, zone, s);
                sources.extend(self.take_staged(b, (n - s) as usize));
                self.nss[ns as usize].counters.folds += 1;
                let (mut done, mut xfer) = self.program_zone(ns, zone, sources, now, false)?;
                if !self.buffers[b].staged.is_empty() && !keep_rest {
                    let (d2, x2) = self.staged_to_slc(b, zone, now)?;
                    done = done.max(d2);
                    xfer = xfer.max(x2);
                }
                Ok((done, xfer))
            }
        }
    }

    /// Binds `zone` to a buffer, flushing a conflicting zone if needed.
    /// Returns the buffer and the time staging can start.
    fn bind_buffer(&mut self, ns: u32, zone: u64, now: u64) -> SimResult<(usize, u64)> {
        let ids = self.nss[ns as usize].buffers.clone();
        let views: Vec<(Option<u64>, u64)> = ids.iter().map(|&i| (self.buffers[i].bound, self.buffers[i].fill())).collect();
        let decision = choose_buffer(self.cfg.buffers.policy, &self.cfg.buffers.custom_map, &views, zone);
        let pos = match decision {
            BindDecision::Reuse(i) => return Ok((ids[i], now)),
            BindDecision::Take(i) => {
                self.unbind(ids[i]);
                i
            }
            BindDecision::Steal(i) => {
                self.flush_buffer(ids[i], FlushReason::Conflict, now)?;
                i
            }
        };
        let b = ids[pos];
        self.buffers[b].bound = Some(zone);
        self.nss[ns as usize].zones[zone as usize].buffer = Some(b);
        Ok((b, now))
    }

    pub fn write(&mut self, ns: u32, lba: u64, len: u64, now: u64, synced: bool) -> SimResult<u64> {
        self.ctx(ns)?;
        if len == 0 || !len.is_multiple_of(UNIT_BYTES) {
            return Err(SimError::BadLength(len));
        }
        let n = len / UNIT_BYTES;
        self.drain_before(now)?;
        let done = match self.nss[ns as usize].plan.kind {
            NamespaceKind::Block => self.write_block(ns, lba, n, now, synced)?,
            NamespaceKind::Zoned => self.write_zoned(ns, lba, n, now, synced)?,
        };
        let c = &mut self.nss[ns as usize].counters;
        c.write_ops += 1;
        c.host_write_bytes += len;
        self.maybe_gc(ns, now)?;
        Ok(done)
    }

    fn write_block(&mut self, ns: u32, lba: u64, n: u64, now: u64, synced: bool) -> SimResult<u64> {
        let c = &self.nss[ns as usize];
        if lba + n > c.plan.lba_units {
            return Err(SimError::LbaOutOfRange { ns, lpa: (lba + n - 1).max(c.plan.lba_units) });
        }
        let b = c.buffers[0];
        let threshold = self.flush_threshold(b);
        let mut t = now;
        let mut done = now;
        for idx in lba..lba + n {
            t = t.max(self.buffers[b].busy_until);
            let seq = self.next_seq;
            self.next_seq += 1;
            self.buffers[b].staged.push((idx, seq));
            if self.buffers[b].fill() >= threshold {
                self.flush_buffer(b, FlushReason::Full, t)?;
            }
        }
        if synced {
            done = done.max(self.flush_buffer(b, FlushReason::Sync, t)?);
        }
        Ok(done.max(t))
    }

    fn write_zoned(&mut self, ns: u32, lba: u64, n: u64, now: u64, synced: bool) -> SimResult<u64> {
        let (_, zone, off) = self.nss[ns as usize].locate(lba)?;
        let cap = self.nss[ns as usize].plan.zone_capacity_units;
        let z = &self.nss[ns as usize].zones[zone as usize];
        if z.state == ZoneState::Full {
            return Err(SimError::ZoneFull { zone });
        }
        if off != z.write_pointer {
            return Err(SimError::UnalignedWrite { zone, offset: off, write_pointer: z.write_pointer });
        }
        if off + n > cap {
            return Err(SimError::ZoneFull { zone });
        }
        if z.state == ZoneState::Empty {
            let region = self.space.reserve_zone_region()?;
            let z = &mut self.nss[ns as usize].zones[zone as usize];
            z.region = Some(region);
            z.state = ZoneState::Open;
        }
        let (mut b, mut t) = self.bind_buffer(ns, zone, now)?;
        let threshold = self.flush_threshold(b);
        let mut done = now;
        for u in 0..n {
            // A conflict flush elsewhere in this request may have unbound us.
            if self.nss[ns as usize].zones[zone as usize].buffer != Some(b) {
                (b, t) = self.bind_buffer(ns, zone, t)?;
            }
            t = t.max(self.buffers[b].busy_until);
            let seq = self.next_seq;
            self.next_seq += 1;
            self.buffers[b].staged.push((zone * cap + off + u, seq));
            self.nss[ns as usize].zones[zone as usize].write_pointer += 1;
            if self.buffers[b].fill() >= threshold {
                self.flush_buffer(b, FlushReason::Full, t)?;
            }
        }
        if self.nss[ns as usize].zones[zone as usize].write_pointer == cap {
            let d = self.flush_buffer(b, FlushReason::ZoneFinish, t)?;
            if synced {
                done = done.max(d);
            }
            self.nss[ns as usize].zones[zone as usize].state = ZoneState::Full;
            self.try_aggregate(ns, zone)?;
        } else if synced {
            done = done.max(self.flush_buffer(b, FlushReason::Sync, t)?);
        }
        Ok(done.max(t))
    }

    /// Flushes every buffer of a namespace; completes when all of its data
    /// written so far is durable.
    pub fn flush(&mut self, ns: u32, now: u64) -> SimResult<u64> {
        self.ctx(ns)?;
        self.drain_all()?;
        let ids = self.nss[ns as usize].buffers.clone();
        let mut done = now;
        for b in ids {
            let t = now.max(self.buffers[b].busy_until);
            if !self.buffers[b].staged.is_empty() {
                done = done.max(self.flush_buffer(b, FlushReason::HostFlush, t)?);
            }
        }
        let c = &mut self.nss[ns as usize];
        c.counters.flush_ops += 1;
        done = done.max(c.durable_at);
        self.maybe_gc(ns, now)?;
        Ok(done)
    }

    /// Moves a zone to FULL, persisting staged data. Unused capacity stays
    /// unwritten.
    pub fn zone_finish(&mut self, ns: u32, zone: u64, now: u64) -> SimResult<u64> {
        let c = self.ctx(ns)?;
        if c.plan.kind != NamespaceKind::Zoned {
            return Err(SimError::Unsupported("zone finish"));
        }
        if zone >= c.plan.zones {
            return Err(SimError::LbaOutOfRange { ns, lpa: zone * c.plan.zone_size_units });
        }
        self.drain_before(now)?;
        let mut done = now;
        if let Some(b) = self.nss[ns as usize].zones[zone as usize].buffer {
            let t = now.max(self.buffers[b].busy_until);
            done = self.flush_buffer(b, FlushReason::ZoneFinish, t)?;
        }
        self.nss[ns as usize].zones[zone as usize].state = ZoneState::Full;
        self.try_aggregate(ns, zone)?;
        self.maybe_gc(ns, now)?;
        Ok(done)
    }

    /// Promotes fully regular-resident chunks, and the zone once full.
    pub(crate) fn try_aggregate(&mut self, ns: u32, zone: u64) -> SimResult<()> {
        self.try_aggregate_with(ns, zone, &HashMap::new())
    }

    /// As `try_aggregate`, reading `pending` moves in place of table entries.
    pub(crate) fn try_aggregate_with(&mut self, ns: u32, zone: u64, pending: &HashMap<u64, LinearAddr>) -> SimResult<()> {
        if !self.cfg.cache.hybrid {
            return Ok(());
        }
        let c = &self.nss[ns as usize];
        let Some(region) = c.zones[zone as usize].region.clone() else { return Ok(()) };
        let regular = c.zones[zone as usize].regular_units;
        let cap = c.plan.zone_capacity_units;
        let chunk_units = c.table.chunk_units();
        let in_place = |c: &crate::namespace::NsContext, off: u64| -> bool {
            let idx = zone * cap + off;
            pending.get(&idx).copied().or_else(|| c.table.get(idx)) == region.linear(&self.layout, off).ok()
        };
        let mut promote = Vec::new();
        for k in 0..c.table.chunks_per_zone() {
            let (s, e) = c.table.chunk_range(k);
            if e - s == chunk_units && regular >= e && !c.table.chunk_aggregated(zone, k) && (s..e).all(|o| in_place(c, o)) {
                promote.push(k);
            }
        }
        let zone_ok = c.zones[zone as usize].state == ZoneState::Full
            && regular == cap
            && !c.table.zone_aggregated(zone)
            && (0..cap).all(|o| in_place(c, o));
        let c = &mut self.nss[ns as usize];
        for k in promote {
            c.table.set_chunk_aggregated(zone, k, true);
        }
        if zone_ok {
            c.table.set_zone_aggregated(zone, true);
            if self.cfg.cache.pin_zone_entries {
                let cpz = c.table.chunks_per_zone();
                for k in 0..cpz {
                    self.cache.remove(&CacheKey { ns, granularity: Granularity::Chunk, address: zone * cpz + k });
                }
                for off in 0..cap {
                    self.cache.remove(&CacheKey { ns, granularity: Granularity::Page, address: zone * cap + off });
                }
                let base = region.linear(&self.layout, 0)?;
                self.cache.insert(CacheKey { ns, granularity: Granularity::Zone, address: zone }, base.0, true);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fully_associative_steals_the_fullest_buffer() {
        let views = [(Some(0), 24), (Some(1), 12)];
        assert_eq!(choose_buffer(BindingPolicyKind::FullyAssociative, &[], &views, 2), BindDecision::Steal(0));
        let tie = [(Some(0), 12), (Some(1), 12)];
        assert_eq!(choose_buffer(BindingPolicyKind::FullyAssociative, &[], &tie, 2), BindDecision::Steal(0));
    }

    #[test]
    fn fully_associative_reuses_then_prefers_free() {
        let views = [(Some(3), 5), (None, 0)];
        assert_eq!(choose_buffer(BindingPolicyKind::FullyAssociative, &[], &views, 3), BindDecision::Reuse(0));
        assert_eq!(choose_buffer(BindingPolicyKind::FullyAssociative, &[], &views, 4), BindDecision::Take(1));
        let empty = [(Some(3), 5), (Some(4), 0)];
        assert_eq!(choose_buffer(BindingPolicyKind::FullyAssociative, &[], &empty, 7), BindDecision::Take(1));
    }

    #[test]
    fn modulo_maps_zone_mod_count() {
        let views = [(None, 0), (None, 0)];
        assert_eq!(choose_buffer(BindingPolicyKind::Modulo, &[], &views, 5), BindDecision::Take(1));
        let busy = [(None, 0), (Some(3), 4)];
        assert_eq!(choose_buffer(BindingPolicyKind::Modulo, &[], &busy, 5), BindDecision::Steal(1));
        assert_eq!(choose_buffer(BindingPolicyKind::Modulo, &[], &busy, 3), BindDecision::Reuse(1));
    }

    #[test]
    fn custom_table_is_indexed_by_zone() {
        let views = [(None, 0), (None, 0), (None, 0)];
        assert_eq!(choose_buffer(BindingPolicyKind::Custom, &[2, 0], &views, 4), BindDecision::Take(2));
        assert_eq!(choose_buffer(BindingPolicyKind::Custom, &[2, 0], &views, 5), BindDecision::Take(0));
    }
}
