//! Shadow-map oracle: a map from logical page to the sequence number of its
//! last write, and a physical image rebuilt only from the event log's program
//! placements and erases. Every read must agree with both.

use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use zonesim_core::device::ReadSource;
use zonesim_core::events::UnitOwner;
use zonesim_core::geometry::UNIT_BYTES;
use zonesim_core::namespace::ZoneState;
use zonesim_core::timing::CommandKind;
use zonesim_core::{Device, SimError};

use super::{small_config, Knobs, Op, BLOCK_UNITS};

type Slot = (u32, u32, u32, u32);

struct Oracle {
    /// (ns, lba) -> seq of the last write.
    shadow: HashMap<(u32, u64), u64>,
    image: HashMap<Slot, UnitOwner>,
    wp: Vec<u64>,
    full: Vec<bool>,
    reads_checked: u64,
}

impl Oracle {
    fn absorb(&mut self, dev: &mut Device) {
        for e in dev.take_events() {
            let Some(ppa) = e.ppa else { continue };
            match e.kind {
                CommandKind::Program => {
                    for (p, owner) in e.placements {
                        let prev = self.image.insert((p.channel, p.chip, p.block, p.page), owner);
                        assert!(prev.is_none(), "unit {p} programmed twice without erase");
                    }
                }
                CommandKind::Erase => {
                    self.image.retain(|s, _| (s.0, s.1, s.2) != (ppa.channel, ppa.chip, ppa.block));
                }
                CommandKind::Read => {}
            }
        }
    }

    /// Returns whether every unit came from flash.
    fn check_read(&mut self, dev: &mut Device, ns: u32, lba: u64, units: u64, now: u64) -> bool {
        let out = dev.read(ns, lba, units * UNIT_BYTES, now).expect("read of written data");
        self.absorb(dev);
        assert_eq!(out.sources.len() as u64, units);
        for (i, src) in out.sources.iter().enumerate() {
            let l = lba + i as u64;
            let want = self.shadow[&(ns, l)];
            match *src {
                ReadSource::Buffer { seq } => assert_eq!(seq, want, "buffer hit for lba {l}"),
                ReadSource::Flash { ppa } => {
                    let got = self.image.get(&(ppa.channel, ppa.chip, ppa.block, ppa.page));
                    let got = got.unwrap_or_else(|| panic!("lba {l} maps to unwritten {ppa}"));
                    assert_eq!((got.ns, got.lpa, got.seq), (ns, l, want), "lba {l} at {ppa}");
                }
            }
            self.reads_checked += 1;
        }
        out.sources.iter().all(|s| matches!(s, ReadSource::Flash { .. }))
    }
}

/// With everything buffered in SLC a small partition can legitimately fill
/// up; that ends the case. Any other error fails it.
fn exhausted<T>(k: &Knobs, r: Result<T, SimError>, what: &str) -> bool {
    match r {
        Ok(_) => false,
        Err(SimError::OutOfSpace(_)) if k.all_in_slc => true,
        Err(e) => panic!("{what} failed: {e}"),
    }
}

pub fn run_case(k: &Knobs, ops: &[Op]) -> Result<(u64, Device), TestCaseError> {
    let cfg = small_config(k);
    let mut dev = Device::new(cfg).expect("small config is valid");
    dev.enable_event_log(true);
    let zns = if k.with_block_ns { 1 } else { 0 };
    let plan = dev.plan(zns).unwrap().clone();
    let cap = plan.zone_capacity_units;
    let zsize = plan.zone_size_units;
    let mut o = Oracle {
        shadow: HashMap::new(),
        image: HashMap::new(),
        wp: vec![0; plan.zones as usize],
        full: vec![false; plan.zones as usize],
        reads_checked: 0,
    };
    let mut now = 0u64;
    for op in ops {
        now += 37_000;
        match *op {
            Op::Write { zone, units, synced } => {
                let z = zone as usize % o.wp.len();
                if o.full[z] {
                    continue;
                }
                let n = (units as u64).min(cap - o.wp[z]);
                let lba = z as u64 * zsize + o.wp[z];
                let first = dev.next_seq();
                if exhausted(k, dev.write(zns, lba, n * UNIT_BYTES, now, synced), "write") {
                    return Ok((o.reads_checked, dev));
                }
                for u in 0..n {
                    o.shadow.insert((zns, lba + u), first + u);
                }
                o.wp[z] += n;
                if o.wp[z] == cap {
                    o.full[z] = true;
                }
                prop_assert_eq!(dev.write_pointer(zns, z as u64).unwrap(), o.wp[z]);
            }
            Op::BlockWrite { lba, units, synced } => {
                if !k.with_block_ns {
                    continue;
                }
                let n = (units as u64).min(BLOCK_UNITS - lba as u64);
                let first = dev.next_seq();
                dev.write(0, lba as u64, n * UNIT_BYTES, now, synced).expect("block write");
                for u in 0..n {
                    o.shadow.insert((0, lba as u64 + u), first + u);
                }
            }
            Op::Read { pick, units } => {
                if o.shadow.is_empty() {
                    continue;
                }
                let mut keys: Vec<&(u32, u64)> = o.shadow.keys().collect();
                keys.sort();
                let (ns, lba) = *keys[pick as usize % keys.len()];
                let mut n = 1;
                while n < units as u64 && o.shadow.contains_key(&(ns, lba + n)) {
                    n += 1;
                }
                o.check_read(&mut dev, ns, lba, n, now);
            }
            Op::Flush => {
                if exhausted(k, dev.flush(zns, now), "flush") {
                    return Ok((o.reads_checked, dev));
                }
                if k.with_block_ns {
                    dev.flush(0, now).expect("flush");
                }
            }
            Op::Reset { zone } => {
                let z = zone as usize % o.wp.len();
                if exhausted(k, dev.zone_reset(zns, z as u64, now), "reset") {
                    return Ok((o.reads_checked, dev));
                }
                o.shadow.retain(|&(ns, l), _| ns != zns || l / zsize != z as u64);
                o.wp[z] = 0;
                o.full[z] = false;
                prop_assert_eq!(dev.zone_state(zns, z as u64).unwrap(), ZoneState::Empty);
            }
            Op::Finish { zone } => {
                let z = zone as usize % o.wp.len();
                if exhausted(k, dev.zone_finish(zns, z as u64, now), "finish") {
                    return Ok((o.reads_checked, dev));
                }
                o.full[z] = true;
            }
        }
        o.absorb(&mut dev);
    }
    dev.finish().expect("drain");
    o.absorb(&mut dev);
    let mut keys: Vec<(u32, u64)> = o.shadow.keys().copied().collect();
    keys.sort();
    let mut on_flash = Vec::new();
    for (ns, lba) in keys {
        now += 1000;
        if o.check_read(&mut dev, ns, lba, 1, now) {
            on_flash.push((ns, lba));
        }
    }
    // The table points only at live units once nothing newer is buffered.
    let live: HashSet<(u32, u64, u64)> = o.shadow.iter().map(|(&(ns, l), &s)| (ns, l, s)).collect();
    for (ns, lba) in &on_flash {
        if let Some(ppa) = dev.mapping_of(*ns, *lba).unwrap() {
            let owner = o.image[&(ppa.channel, ppa.chip, ppa.block, ppa.page)];
            prop_assert!(live.contains(&(owner.ns, owner.lpa, owner.seq)));
        }
    }
    Ok((o.reads_checked, dev))
}

