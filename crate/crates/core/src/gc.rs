//! SLC reclamation and zone reset.
//!
//! A GC job is created in one step and executed by the background queue:
//! reads of every valid victim unit, destination programs, a commit marker
//! that repoints the mapping, per-chip erases, and a release marker that
//! returns the victim to its partition.

use std::collections::{BTreeSet, HashMap};

use crate::config::{GcDestination, NamespaceKind};
use crate::device::{Device, Marker};
use crate::error::{SimError, SimResult};
use crate::events::ProgramCause;
use crate::geometry::{LinearAddr, UNIT_BYTES};
use crate::namespace::{ZoneDescriptor, ZoneState};
use crate::timing::{ChipCommand, CommandKind, CommandMeta, Origin};

#[derive(Clone, Debug, PartialEq)]
pub struct GcJob {
    pub id: u64,
    pub ns: u32,
    pub victim: u32,
    /// (table index, expected old location, new location).
    pub updates: Vec<(u64, LinearAddr, LinearAddr)>,
}

impl Device {
    fn gc_pressure(&self, ns: u32) -> u32 {
        self.space.free_slc_superblocks(ns) + self.space.migrating_slc_superblocks(ns)
    }

    /// Runs GC jobs until the partition is back at its target. Counting
    /// superblocks still migrating keeps the trigger independent of how far
    /// the background queue has progressed.
    pub(crate) fn maybe_gc(&mut self, ns: u32, now: u64) -> SimResult<()> {
        if self.gc_active || self.gc_pressure(ns) >= self.cfg.gc.trigger_free {
            return Ok(());
        }
        self.gc_active = true;
        let r = self.gc_loop(ns, now);
        self.gc_active = false;
        r
    }

    fn gc_loop(&mut self, ns: u32, now: u64) -> SimResult<()> {
        while self.gc_pressure(ns) < self.cfg.gc.target_free {
            if !self.gc_once(ns, now)? {
                break;
            }
        }
        Ok(())
    }

    /// Reclaims until `n` SLC units can be allocated or no victim helps.
    pub(crate) fn reclaim_for(&mut self, ns: u32, n: u64, now: u64) -> SimResult<()> {
        if self.gc_active {
            return Ok(());
        }
        self.gc_active = true;
        let mut r = Ok(());
        while self.space.slc_available_units(ns) < n {
            match self.gc_once(ns, now) {
                Ok(true) => {
                    if let Err(e) = self.drain_all() {
                        r = Err(e);
                        break;
                    }
                }
                Ok(false) => break,
                Err(e) => {
                    r = Err(e);
                    break;
                }
            }
        }
        self.gc_active = false;
        r
    }

    /// Zones with valid units in `victim`, and for each the zone offset below
    /// which SLC data will be folded to regular flash by the job.
    fn plan_folds(&self, ns: u32, valid: &[LinearAddr]) -> SimResult<(BTreeSet<u64>, Vec<(u64, u64)>)> {
        let c = &self.nss[ns as usize];
        let mut zones = BTreeSet::new();
        if c.plan.kind != NamespaceKind::Zoned {
            return Ok((zones, Vec::new()));
        }
        for lin in valid {
            let owner = self.space.owner(*lin).expect("valid unit has an owner");
            zones.insert(c.locate(owner.lpa)?.1);
        }
        let mut until = Vec::new();
        if self.cfg.gc.destination == GcDestination::ToRegular {
            let p = self.layout.program_units as u64;
            for &z in &zones {
                let d = &c.zones[z as usize];
                until.push((z, d.regular_units + d.slc_units / p * p));
            }
        }
        Ok((zones, until))
    }

    /// Victim units that stay in SLC: (table index, location, owner).
    fn plan_moves(
        &self,
        ns: u32,
        valid: &[LinearAddr],
        until: &[(u64, u64)],
    ) -> SimResult<Vec<(u64, LinearAddr, crate::events::UnitOwner)>> {
        let c = &self.nss[ns as usize];
        let mut moves = Vec::new();
        for lin in valid {
            let owner = self.space.owner(*lin).expect("valid unit has an owner");
            let (idx, zone, off) = c.locate(owner.lpa)?;
            if until.iter().any(|&(z, u)| z == zone && off < u) {
                continue;
            }
            moves.push((idx, *lin, owner));
        }
        Ok(moves)
    }

    /// Creates one GC job if some victim can be reclaimed. Returns whether
    /// it did.
    fn gc_once(&mut self, ns: u32, now: u64) -> SimResult<bool> {
        self.drain_all()?;
        let victim = match self.space.select_victim(ns) {
            Ok(v) => v,
            Err(SimError::NoVictim(_)) => return Ok(false),
            Err(e) => return Err(e),
        };
        let valid = self.space.valid_units(victim);
        let (zones, until) = self.plan_folds(ns, &valid)?;
        let moves = self.plan_moves(ns, &valid, &until)?;
        let stay = moves.len() as u64;
        if stay >= self.layout.superblock_units(victim) || stay > self.space.slc_available_units(ns) {
            return Ok(false);
        }
        self.space.mark_migrating(victim);
        let p = self.layout.program_units as u64;
        let mut updates = Vec::new();
        for &(zone, _) in &until {
            let n = self.nss[ns as usize].zones[zone as usize].slc_units / p * p;
            if n > 0 {
                let (_, mut ups) = self.fold_zone(ns, zone, n, now, true)?;
                updates.append(&mut ups);
            }
        }
        for lin in moves.iter().map(|m| m.1) {
            let cmd = ChipCommand {
                kind: CommandKind::Read,
                origin: Origin::Background,
                target: self.layout.ppa(lin),
                payload_bytes: UNIT_BYTES,
                issue_time: now,
            };
            self.sched.enqueue_background(cmd, CommandMeta { ns, ..Default::default() })?;
        }
        self.sched.enqueue_barrier();
        if !moves.is_empty() {
            let dest = self.space.allocate_slc_stripe(ns, stay)?;
            for (d, m) in dest.iter().zip(&moves) {
                self.space.program(*d, m.2);
                updates.push((m.0, m.1, *d));
            }
            let groups = self.group_by_flash_page(&dest, moves.iter().map(|m| m.2));
            for (target, placements) in groups {
                let bytes = placements.len() as u64 * UNIT_BYTES;
                let cmd = ChipCommand {
                    kind: CommandKind::Program,
                    origin: Origin::Background,
                    target,
                    payload_bytes: bytes,
                    issue_time: now,
                };
                let meta = CommandMeta { ns, causes: vec![(ProgramCause::GcMigration, bytes)], mapping_fetch: false, placements };
                self.sched.enqueue_background(cmd, meta)?;
            }
        }
        self.sched.enqueue_barrier();
        // Aggregation is decided now, against the post-move layout, rather
        // than whenever the commit happens to be reached.
        let moved: HashMap<u64, LinearAddr> = updates.iter().map(|u| (u.0, u.2)).collect();
        for &z in &zones {
            self.try_aggregate_with(ns, z, &moved)?;
        }
        let id = self.next_job;
        self.next_job += 1;
        self.jobs.insert(id, GcJob { id, ns, victim, updates });
        self.sched.enqueue_marker(Marker::Commit(id));
        for chip in 0..self.layout.chips {
            let cmd = ChipCommand {
                kind: CommandKind::Erase,
                origin: Origin::Background,
                target: self.layout.ppa_on_chip(chip, victim, 0),
                payload_bytes: 0,
                issue_time: now,
            };
            self.sched.enqueue_background(cmd, CommandMeta { ns, ..Default::default() })?;
        }
        self.sched.enqueue_barrier();
        self.sched.enqueue_marker(Marker::Release(victim));
        self.nss[ns as usize].counters.gc_runs += 1;
        Ok(true)
    }

    /// Repoints each migrated unit unless the host moved it meanwhile, in
    /// which case the copy is dropped.
    pub(crate) fn commit_gc_job(&mut self, id: u64) -> SimResult<()> {
        let Some(job) = self.jobs.remove(&id) else { return Ok(()) };
        for (idx, old, new) in job.updates {
            if self.nss[job.ns as usize].table.get(idx) == Some(old) {
                self.relocate(job.ns, idx, new);
            } else {
                self.space.invalidate(new);
            }
        }
        Ok(())
    }

    /// Discards a zone's data and returns its region. Staged data is dropped
    /// without being programmed.
    pub fn zone_reset(&mut self, ns: u32, zone: u64, now: u64) -> SimResult<u64> {
        let c = self.ctx(ns)?;
        if c.plan.kind != NamespaceKind::Zoned {
            return Err(SimError::Unsupported("zone reset"));
        }
        if zone >= c.plan.zones {
            return Err(SimError::LbaOutOfRange { ns, lpa: zone * c.plan.zone_size_units });
        }
        self.drain_all()?;
        self.nss[ns as usize].counters.zone_resets += 1;
        if self.nss[ns as usize].zones[zone as usize].state == ZoneState::Empty {
            return Ok(now);
        }
        if let Some(b) = self.nss[ns as usize].zones[zone as usize].buffer {
            let buf = &mut self.buffers[b];
            let dropped = buf.fill() * UNIT_BYTES;
            buf.staged.clear();
            buf.bound = None;
            self.nss[ns as usize].counters.discarded_bytes += dropped;
        }
        let cap = self.nss[ns as usize].plan.zone_capacity_units;
        for off in 0..cap {
            let idx = zone * cap + off;
            if self.nss[ns as usize].table.get(idx).is_some() {
                self.map_update(ns, idx, None);
            }
        }
        let t = &mut self.nss[ns as usize].table;
        t.set_zone_aggregated(zone, false);
        for k in 0..t.chunks_per_zone() {
            t.set_chunk_aggregated(zone, k, false);
        }
        let mut done = now;
        if let Some(region) = self.nss[ns as usize].zones[zone as usize].region.take() {
            for &(chip, block) in &region.blocks {
                let cmd = ChipCommand {
                    kind: CommandKind::Erase,
                    origin: Origin::Host,
                    target: self.layout.ppa_on_chip(chip, block, 0),
                    payload_bytes: 0,
                    issue_time: now,
                };
                done = done.max(self.submit(cmd, CommandMeta { ns, ..Default::default() })?.completion);
                self.space.erase_block(chip, block);
            }
            self.space.release_zone_region(&region);
        }
        self.nss[ns as usize].zones[zone as usize] = ZoneDescriptor::new(zone);
        self.maybe_gc(ns, now)?;
        Ok(done)
    }
}
