//! Whole-device properties over random host traces on the small geometry.

use std::collections::{BTreeMap, HashMap, HashSet};

use proptest::prelude::*;
use zonesim_core::config::BindingPolicyKind;
use zonesim_core::events::{Event, ProgramCause};
use zonesim_core::geometry::{LinearAddr, UNIT_BYTES};
use zonesim_core::harness::Simulation;
use zonesim_core::mapping::{MappingTable, MissStrategy};
use zonesim_core::stats::StatsReport;
use zonesim_core::timing::{CommandKind, Origin};
use zonesim_core::trace::{TraceOp, TraceRecord};
use zonesim_core::workload::{generate_workload, WorkloadSpec};
use zonesim_core::{emit_report, Device, ReportFormat, SimConfig, SimError};

#[allow(dead_code)]
mod common;
use common::*;

/// A replayable trace plus the LBAs it leaves live.
struct Built {
    records: Vec<TraceRecord>,
    live: HashSet<(u32, u64)>,
}

/// Turns abstract operations into a valid trace: zone writes follow the write
/// pointer, reads only touch written data, and every namespace is flushed at
/// the end.
fn build(k: &Knobs, ops: &[Op]) -> Built {
    let dev = Device::new(small_config(k)).expect("small config is valid");
    let zns = if k.with_block_ns { 1 } else { 0 };
    let plan = dev.plan(zns).unwrap();
    let (cap, zsize) = (plan.zone_capacity_units, plan.zone_size_units);
    let mut wp = vec![0u64; plan.zones as usize];
    let mut full = vec![false; plan.zones as usize];
    let mut live = HashSet::new();
    let mut records = Vec::new();
    let mut t = 0u64;
    for op in ops {
        t += 23_000;
        match *op {
            Op::Write { zone, units, synced } => {
                let z = zone as usize % wp.len();
                if full[z] {
                    continue;
                }
                let n = (units as u64).min(cap - wp[z]);
                let lba = z as u64 * zsize + wp[z];
                records.push(TraceRecord::write(t, zns, lba, n * UNIT_BYTES, synced));
                live.extend((lba..lba + n).map(|l| (zns, l)));
                wp[z] += n;
                full[z] = wp[z] == cap;
            }
            Op::BlockWrite { lba, units, synced } => {
                if !k.with_block_ns {
                    continue;
                }
                let n = (units as u64).min(BLOCK_UNITS - lba as u64);
                records.push(TraceRecord::write(t, 0, lba as u64, n * UNIT_BYTES, synced));
                live.extend((lba as u64..lba as u64 + n).map(|l| (0, l)));
            }
            Op::Read { pick, units } => {
                let mut keys: Vec<&(u32, u64)> = live.iter().collect();
                if keys.is_empty() {
                    continue;
                }
                keys.sort();
                let (ns, lba) = *keys[pick as usize % keys.len()];
                let mut n = 1;
                while n < units as u64 && live.contains(&(ns, lba + n)) {
                    n += 1;
                }
                records.push(TraceRecord::read(t, ns, lba, n * UNIT_BYTES));
            }
            Op::Flush => records.push(TraceRecord::flush(t, zns)),
            Op::Reset { zone } => {
                let z = zone as usize % wp.len();
                records.push(TraceRecord::zone_op(t, zns, TraceOp::ZoneReset, z as u64 * zsize));
                live.retain(|&(ns, l)| ns != zns || l / zsize != z as u64);
                wp[z] = 0;
                full[z] = false;
            }
            Op::Finish { zone } => {
                let z = zone as usize % wp.len();
                records.push(TraceRecord::zone_op(t, zns, TraceOp::ZoneFinish, z as u64 * zsize));
                full[z] = true;
            }
        }
    }
    t += 23_000;
    for ns in 0..=zns {
        records.push(TraceRecord::flush(t, ns));
    }
    Built { records, live }
}

struct Run {
    report: StatsReport,
    events: Vec<Event>,
    device: Device,
    /// Set when the all-in-SLC mode legitimately ran out of SLC space.
    exhausted: bool,
}

fn replay(cfg: SimConfig, records: &[TraceRecord], mut each: impl FnMut(&Device)) -> Run {
    let all_in_slc = cfg.buffers.buffer_all_in_slc;
    let mut sim = Simulation::new(cfg).expect("valid config");
    sim.device_mut().enable_event_log(true);
    let mut exhausted = false;
    for rec in records {
        match sim.step(rec) {
            Ok(_) => each(sim.device()),
            Err(SimError::Record { source, .. }) if all_in_slc && matches!(*source, SimError::OutOfSpace(_)) => {
                exhausted = true;
                break;
            }
            Err(e) => panic!("replay failed: {e}"),
        }
    }
    let (report, mut device) = sim.finish().expect("drain");
    let events = device.take_events();
    Run { report, events, device, exhausted }
}

/// Sequence number of the data each live LBA resolves to on flash.
fn resident(dev: &Device, live: &HashSet<(u32, u64)>) -> BTreeMap<(u32, u64), u64> {
    live.iter()
        .map(|&(ns, lba)| {
            let ppa = dev.mapping_of(ns, lba).unwrap().expect("flushed data is mapped");
            let owner = dev.space().owner(dev.layout().linear(&ppa)).expect("mapped unit has an owner");
            assert_eq!((owner.ns, owner.lpa), (ns, lba));
            ((ns, lba), owner.seq)
        })
        .collect()
}

fn assert_disjoint(mut spans: Vec<(u64, u64)>, what: &str) {
    spans.sort();
    for w in spans.windows(2) {
        assert!(w[1].0 >= w[0].1, "{what}: [{}, {}) overlaps [{}, {})", w[0].0, w[0].1, w[1].0, w[1].1);
    }
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(op(), 1..120)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn event_log_is_consistent_with_counters(k in knobs(), ops in ops()) {
        let built = build(&k, &ops);
        let cfg = small_config(&k);
        let budget = cfg.cache.capacity;
        let run = replay(cfg, &built.records, |d| assert!(d.cache().bytes_used() <= budget));
        let layout = run.device.layout().clone();

        let mut chips: HashMap<(u32, u32), Vec<(u64, u64)>> = HashMap::new();
        let mut channels: HashMap<u32, Vec<(u64, u64)>> = HashMap::new();
        for e in &run.events {
            chips.entry((e.channel, e.chip)).or_default().push((e.chip_busy.start, e.chip_busy.end));
            if let Some(x) = e.transfer {
                channels.entry(e.channel).or_default().push((x.start, x.end));
            }
        }
        for (c, spans) in chips {
            assert_disjoint(spans, &format!("chip {c:?}"));
        }
        for (c, spans) in channels {
            assert_disjoint(spans, &format!("channel {c}"));
        }

        for ns in 0..run.device.namespace_count() as u32 {
            let mut by_cause: HashMap<ProgramCause, u64> = HashMap::new();
            let mut programmed = 0;
            for e in run.events.iter().filter(|e| e.ns == ns && e.kind == CommandKind::Program) {
                programmed += e.bytes;
                let split: u64 = e.causes.iter().map(|c| c.1).sum();
                prop_assert_eq!(split, e.bytes);
                for &(c, b) in &e.causes {
                    *by_cause.entry(c).or_default() += b;
                }
            }
            let s = run.report.namespace(ns).unwrap();
            let get = |c| by_cause.get(&c).copied().unwrap_or(0);
            prop_assert_eq!(s.device_program_bytes, programmed);
            prop_assert_eq!(s.host_regular_bytes, get(ProgramCause::HostRegular));
            prop_assert_eq!(s.host_slc_bytes, get(ProgramCause::HostSlc));
            prop_assert_eq!(s.fold_bytes, get(ProgramCause::Fold));
            prop_assert_eq!(s.gc_migrated_bytes, get(ProgramCause::GcMigration));
            prop_assert_eq!(
                s.device_program_bytes,
                s.host_regular_bytes + s.host_slc_bytes + s.fold_bytes + s.gc_migrated_bytes
            );
        }

        // Zone-managed blocks are erased by resets only.
        for e in run.events.iter().filter(|e| e.kind == CommandKind::Erase) {
            let block = e.ppa.expect("erases have a target").block;
            if block >= layout.slc_superblocks {
                prop_assert_eq!(e.origin, Origin::Host);
            }
        }

        if !run.exhausted {
            // Every live unit sits in exactly one valid flash unit.
            let mut valid = 0;
            for chip in 0..layout.chips {
                for block in 0..layout.superblocks {
                    valid += run.device.space().block_valid_count(chip, block) as usize;
                }
            }
            prop_assert_eq!(valid, built.live.len());
            resident(&run.device, &built.live);
        }
    }

    #[test]
    fn replay_is_deterministic(k in knobs(), ops in ops()) {
        let built = build(&k, &ops);
        let a = replay(small_config(&k), &built.records, |_| {});
        let b = replay(small_config(&k), &built.records, |_| {});
        prop_assert_eq!(emit_report(&a.report, ReportFormat::Json), emit_report(&b.report, ReportFormat::Json));
        let lines = |r: &Run| r.events.iter().map(Event::csv_line).collect::<Vec<_>>();
        prop_assert_eq!(lines(&a), lines(&b));
    }

    #[test]
    fn preemption_never_changes_final_data(k in knobs(), ops in ops()) {
        let built = build(&k, &ops);
        let mut on = k.clone();
        on.preemptible = true;
        let mut off = k;
        off.preemptible = false;
        let a = replay(small_config(&on), &built.records, |_| {});
        let b = replay(small_config(&off), &built.records, |_| {});
        prop_assume!(!a.exhausted && !b.exhausted);
        prop_assert_eq!(resident(&a.device, &built.live), resident(&b.device, &built.live));
    }

    #[test]
    fn miss_strategies_differ_only_in_fetches_and_time(k in knobs(), ops in ops()) {
        let built = build(&k, &ops);
        let mut m = k.clone();
        m.bitmap = false;
        let mut b = k;
        b.bitmap = true;
        let a = replay(small_config(&m), &built.records, |_| {});
        let c = replay(small_config(&b), &built.records, |_| {});
        prop_assert_eq!(a.exhausted, c.exhausted);
        let ppas = |r: &Run| {
            let mut v: Vec<_> = built.live.iter().map(|&(ns, l)| ((ns, l), r.device.mapping_of(ns, l).unwrap())).collect();
            v.sort_by_key(|e| e.0);
            v
        };
        prop_assert_eq!(ppas(&a), ppas(&c));
        prop_assert_eq!(timeless(&a.report), timeless(&c.report));
    }

    #[test]
    fn aligned_streams_within_buffer_count_never_flush_prematurely(
        buffers in 1u32..=3,
        per_pu in 1u64..=4,
        policy in prop_oneof![Just(BindingPolicyKind::FullyAssociative), Just(BindingPolicyKind::Modulo)],
        chunks in prop::collection::vec(1u64..=3, 1..16),
    ) {
        let k = Knobs { buffers, buffer_units: 24 * per_pu, policy, ..quiet_knobs() };
        let zones = buffers.min(ZONES as u32) as u64;
        let cfg = small_config(&k);
        let zsize = Device::new(cfg.clone()).unwrap().plan(0).unwrap().zone_size_units;
        let mut wp = vec![0u64; zones as usize];
        let mut records = Vec::new();
        for (i, &c) in chunks.iter().enumerate() {
            let z = i as u64 % zones;
            let n = (c * 24).min(96 - wp[z as usize]);
            if n == 0 {
                continue;
            }
            records.push(TraceRecord::write(i as u64 * 50_000, 0, z * zsize + wp[z as usize], n * UNIT_BYTES, false));
            wp[z as usize] += n;
        }
        records.push(TraceRecord::flush(chunks.len() as u64 * 50_000, 0));
        let run = replay(cfg, &records, |_| {});
        prop_assert_eq!(run.report.namespace(0).unwrap().premature_flush_count, 0);
    }

    #[test]
    fn interleaving_more_zones_than_buffers_flushes_prematurely(units in 1u64..=7, per_zone in 2u64..=6) {
        let k = Knobs { buffers: 1, buffer_units: 24, ..quiet_knobs() };
        let cfg = small_config(&k);
        let zsize = Device::new(cfg.clone()).unwrap().plan(0).unwrap().zone_size_units;
        let count = |interleave: bool| {
            let mut records = Vec::new();
            let mut t = 0;
            let steps: Vec<(u64, u64)> = if interleave {
                (0..per_zone).flat_map(|i| (0..2).map(move |z| (z, i))).collect()
            } else {
                (0..2).flat_map(|z| (0..per_zone).map(move |i| (z, i))).collect()
            };
            for (z, i) in steps {
                t += 50_000;
                records.push(TraceRecord::write(t, 0, z * zsize + i * units * 3, units * 3 * UNIT_BYTES, false));
            }
            let run = replay(cfg.clone(), &records, |_| {});
            run.report.namespace(0).unwrap().premature_flush_count
        };
        prop_assert!(count(true) > count(false));
    }

    #[test]
    fn aggregation_flags_never_change_lookups(
        sets in prop::collection::vec((0u64..192, prop::option::of(0u64..10_000)), 1..200),
        flips in prop::collection::vec((0u64..3, prop::option::of(0u64..3), any::<bool>()), 0..40),
    ) {
        let mut t = MappingTable::zoned(2, 96, 32);
        let mut shadow = vec![None; 192];
        for (i, &(idx, v)) in sets.iter().enumerate() {
            t.set(idx, v.map(LinearAddr));
            shadow[idx as usize] = v.map(LinearAddr);
            if let Some(&(z, c, on)) = flips.get(i) {
                let z = z % 2;
                match c {
                    Some(c) => t.set_chunk_aggregated(z, c, on),
                    None => t.set_zone_aggregated(z, on),
                }
            }
        }
        for idx in 0..192 {
            prop_assert_eq!(t.get(idx), shadow[idx as usize]);
        }
        let bitmap: Vec<u32> = (0..192).map(|i| t.fetch_reads(i, MissStrategy::Bitmap)).collect();
        prop_assert!(bitmap.iter().all(|&r| r == 1));
    }

    #[test]
    fn generators_are_reproducible(seed in any::<u64>(), files in prop::collection::vec(1u64..=64, 1..4)) {
        let cfg = SimConfig::default();
        let spec = WorkloadSpec::MultiStream {
            ns: 1,
            file_sizes: files.iter().map(|f| f * 64 * KIB).collect(),
            updates: files.iter().map(|f| (f % 3) as u32).collect(),
            request_size: 64 * KIB,
            seed,
        };
        prop_assert_eq!(generate_workload(&spec, &cfg).unwrap(), generate_workload(&spec, &cfg).unwrap());
    }
}

/// Zoned namespace only, no GC pressure, page mapping.
fn quiet_knobs() -> Knobs {
    Knobs {
        with_block_ns: false,
        buffers: 2,
        buffer_units: 24,
        policy: BindingPolicyKind::FullyAssociative,
        all_in_slc: false,
        to_regular: false,
        preemptible: false,
        gc: (1, 2),
        hybrid: false,
        bitmap: false,
        pin: false,
        cache_entries: 64,
        blocks_per_zone: None,
    }
}

/// A report with flash-read and timing-derived fields cleared. Which medium a
/// read hits depends on whether pending reclamation has committed by then.
fn timeless(r: &StatsReport) -> StatsReport {
    let mut r = r.clone();
    r.elapsed_ns = 0;
    for s in &mut r.namespaces {
        s.slc_read_bytes = 0;
        s.regular_read_bytes = 0;
        s.mapping_fetch_reads = 0;
        s.mapping_read_bytes = 0;
        s.elapsed_ns = 0;
        s.bandwidth_mib_s = 0.0;
        s.iops = 0.0;
        s.read_latency = Default::default();
        s.write_latency = Default::default();
    }
    r
}

#[test]
fn idle_zoned_neighbor_leaves_block_namespace_events_unchanged() {
    let with = Knobs { with_block_ns: true, ..quiet_knobs() };
    let mut alone = small_config(&with);
    alone.namespaces.truncate(1);
    let neighbor = small_config(&with);
    let records: Vec<TraceRecord> = (0..300u64)
        .map(|i| TraceRecord::write(i * 40_000, 0, i * 7 % (BLOCK_UNITS - 4), 4 * UNIT_BYTES, i % 5 == 0))
        .chain(std::iter::once(TraceRecord::flush(300 * 40_000, 0)))
        .collect();
    let a = replay(alone, &records, |_| {});
    let b = replay(neighbor, &records, |_| {});
    assert!(a.report.namespace(0).unwrap().gc_runs > 0);
    let lines = |r: &Run| r.events.iter().map(Event::csv_line).collect::<Vec<_>>();
    assert_eq!(lines(&a), lines(&b));
}

#[test]
fn namespaces_never_share_superblocks_or_buffers() {
    let k = Knobs { with_block_ns: true, ..quiet_knobs() };
    let dev = Device::new(small_config(&k)).unwrap();
    let p0: HashSet<u32> = dev.space().partition(0).unwrap().superblocks.iter().copied().collect();
    let p1: HashSet<u32> = dev.space().partition(1).unwrap().superblocks.iter().copied().collect();
    assert!(!p0.is_empty() && !p1.is_empty());
    assert!(p0.is_disjoint(&p1));
    let b0: HashSet<usize> = dev.buffer_ids(0).unwrap().into_iter().collect();
    let b1: HashSet<usize> = dev.buffer_ids(1).unwrap().into_iter().collect();
    assert!(b0.is_disjoint(&b1));
    assert_eq!(dev.namespace_count(), 2);
}
