//! Synthetic trace generators. Every generator is a pure function of its
//! parameters, the configuration and the seed.
//!
//! Zoned namespaces are addressed in "capacity space": byte offset `o`
//! lands in zone `o / capacity` at offset `o % capacity`, so sequential
//! streams skip the unwritable tail of each zone.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{NamespaceKind, SimConfig};
use crate::error::{SimError, SimResult};
use crate::geometry::UNIT_BYTES;
use crate::namespace::{plans_for_config, NsPlan};
use crate::trace::{TraceOp, TraceRecord};

const KIB: u64 = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorkloadSpec {
    /// `bytes` written sequentially from the start of `start_zone` (zoned) or
    /// LBA 0 (block), optionally followed by a FLUSH.
    SeqWrite { ns: u32, start_zone: u64, bytes: u64, request_size: u64, synced: bool, flush: bool },
    /// Sequential fill of `fill_bytes`, a FLUSH, then `count` uniform 4 KiB
    /// reads within the first `range_bytes`.
    RandReadRange { ns: u32, fill_bytes: u64, fill_request: u64, range_bytes: u64, count: u64, seed: u64 },
    /// Two interleaved zone streams. With `conflict` the second zone maps to
    /// the same buffer as the first under modulo binding.
    BufferConflict { ns: u32, conflict: bool, request_size: u64, bytes_per_stream: Option<u64> },
    /// Files rewritten `updates[i]` times each; streams interleave at random
    /// and each file version ends with a synced write.
    MultiStream { ns: u32, file_sizes: Vec<u64>, updates: Vec<u32>, request_size: u64, seed: u64 },
}

impl WorkloadSpec {
    pub fn buffer_conflict(ns: u32, conflict: bool) -> Self {
        WorkloadSpec::BufferConflict { ns, conflict, request_size: 48 * KIB, bytes_per_stream: None }
    }
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidParams(msg.into())
}

fn check_request(size: u64) -> SimResult<()> {
    if size == 0 || !size.is_multiple_of(UNIT_BYTES) {
        return Err(invalid(format!("request size {size} is not a positive multiple of 4096")));
    }
    Ok(())
}

/// Capacity of the namespace in capacity-space bytes.
fn usable_bytes(plan: &NsPlan) -> u64 {
    match plan.kind {
        NamespaceKind::Block => plan.lba_units * UNIT_BYTES,
        NamespaceKind::Zoned => plan.zones * plan.zone_capacity_units * UNIT_BYTES,
    }
}

/// LBA of capacity-space unit `u`.
fn lba_at(plan: &NsPlan, u: u64) -> u64 {
    match plan.kind {
        NamespaceKind::Block => u,
        NamespaceKind::Zoned => (u / plan.zone_capacity_units) * plan.zone_size_units + u % plan.zone_capacity_units,
    }
}

/// Writes covering `[start, start + bytes)` of capacity space, split so no
/// request crosses a zone boundary.
fn sequential(plan: &NsPlan, start: u64, bytes: u64, request: u64, synced: bool, out: &mut Vec<TraceRecord>) {
    let mut u = start / UNIT_BYTES;
    let end = (start + bytes) / UNIT_BYTES;
    let req = request / UNIT_BYTES;
    while u < end {
        let mut n = req.min(end - u);
        if plan.kind == NamespaceKind::Zoned {
            n = n.min(plan.zone_capacity_units - u % plan.zone_capacity_units);
        }
        out.push(TraceRecord::write(0, plan.id, lba_at(plan, u), n * UNIT_BYTES, synced));
        u += n;
    }
}

pub fn generate_workload(spec: &WorkloadSpec, cfg: &SimConfig) -> SimResult<Vec<TraceRecord>> {
    let plans = plans_for_config(cfg)?;
    let ns = match spec {
        WorkloadSpec::SeqWrite { ns, .. }
        | WorkloadSpec::RandReadRange { ns, .. }
        | WorkloadSpec::BufferConflict { ns, .. }
        | WorkloadSpec::MultiStream { ns, .. } => *ns,
    };
    let plan = plans.iter().find(|p| p.id == ns).ok_or(SimError::UnknownNamespace(ns))?;
    let mut out = Vec::new();
    match spec {
        &WorkloadSpec::SeqWrite { start_zone, bytes, request_size, synced, flush, .. } => {
            check_request(request_size)?;
            let start = match plan.kind {
                NamespaceKind::Block if start_zone > 0 => return Err(invalid("start_zone applies to zoned namespaces")),
                NamespaceKind::Block => 0,
                NamespaceKind::Zoned => start_zone * plan.zone_capacity_units * UNIT_BYTES,
            };
            if bytes % UNIT_BYTES != 0 || start + bytes > usable_bytes(plan) {
                return Err(invalid(format!("{bytes} bytes from zone {start_zone} do not fit the namespace")));
            }
            sequential(plan, start, bytes, request_size, synced, &mut out);
            if flush {
                out.push(TraceRecord::flush(0, ns));
            }
        }
        &WorkloadSpec::RandReadRange { fill_bytes, fill_request, range_bytes, count, seed, .. } => {
            check_request(fill_request)?;
            if fill_bytes % UNIT_BYTES != 0 || fill_bytes > usable_bytes(plan) {
                return Err(invalid("fill does not fit the namespace"));
            }
            if range_bytes < UNIT_BYTES || range_bytes > fill_bytes {
                return Err(invalid("read range must lie within the filled data"));
            }
            sequential(plan, 0, fill_bytes, fill_request, false, &mut out);
            out.push(TraceRecord::flush(0, ns));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let units = range_bytes / UNIT_BYTES;
            for _ in 0..count {
                let u = rng.random_range(0..units);
                out.push(TraceRecord::read(0, ns, lba_at(plan, u), UNIT_BYTES));
            }
        }
        &WorkloadSpec::BufferConflict { conflict, request_size, bytes_per_stream, .. } => {
            check_request(request_size)?;
            if plan.kind != NamespaceKind::Zoned {
                return Err(invalid("buffer conflict needs a zoned namespace"));
            }
            let cap = plan.zone_capacity_units * UNIT_BYTES;
            let bytes = bytes_per_stream.unwrap_or(cap);
            let zb = if conflict { cfg.buffers.count as u64 } else { 1 };
            if bytes == 0 || bytes > cap || bytes % UNIT_BYTES != 0 || zb >= plan.zones || zb == 0 {
                return Err(invalid("streams must fit in zone 0 and its partner zone"));
            }
            let (mut a, mut b) = (Vec::new(), Vec::new());
            sequential(plan, 0, bytes, request_size, false, &mut a);
            sequential(plan, zb * cap, bytes, request_size, false, &mut b);
            for (x, y) in a.into_iter().zip(b) {
                out.push(x);
                out.push(y);
            }
            out.push(TraceRecord::flush(0, ns));
        }
        WorkloadSpec::MultiStream { file_sizes, updates, request_size, seed, .. } => {
            multi_stream(plan, file_sizes, updates, *request_size, *seed, &mut out)?;
        }
    }
    Ok(out)
}

struct Stream {
    size_units: u64,
    versions_left: u32,
    /// Units written of the current version.
    done: u64,
    /// Zoned: zones of the current and previous version.
    zones: Vec<u64>,
    old_zones: Vec<u64>,
    /// Block: first LBA of the file.
    base: u64,
}

fn multi_stream(
    plan: &NsPlan,
    file_sizes: &[u64],
    updates: &[u32],
    request_size: u64,
    seed: u64,
    out: &mut Vec<TraceRecord>,
) -> SimResult<()> {
    check_request(request_size)?;
    if file_sizes.is_empty() || file_sizes.len() != updates.len() {
        return Err(invalid("file_sizes and updates must be non-empty and the same length"));
    }
    if file_sizes.iter().any(|&s| s == 0 || s % UNIT_BYTES != 0) {
        return Err(invalid("file sizes must be positive multiples of 4096"));
    }
    let ns = plan.id;
    let req = request_size / UNIT_BYTES;
    let mut streams: Vec<Stream> = Vec::new();
    let mut base = 0;
    for (&size, &upd) in file_sizes.iter().zip(updates) {
        streams.push(Stream {
            size_units: size / UNIT_BYTES,
            versions_left: upd + 1,
            done: 0,
            zones: Vec::new(),
            old_zones: Vec::new(),
            base,
        });
        base += size / UNIT_BYTES;
    }
    let mut free: VecDeque<u64> = VecDeque::new();
    match plan.kind {
        NamespaceKind::Block => {
            if base > plan.lba_units {
                return Err(invalid("files exceed the namespace"));
            }
        }
        NamespaceKind::Zoned => {
            // Two versions of every file may be live at once.
            let need: u64 = streams.iter().map(|s| 2 * s.size_units.div_ceil(plan.zone_capacity_units)).sum();
            if need > plan.zones {
                return Err(invalid(format!("files need up to {need} zones, the namespace has {}", plan.zones)));
            }
            free.extend(0..plan.zones);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let active: Vec<usize> = (0..streams.len()).filter(|&i| streams[i].versions_left > 0).collect();
        if active.is_empty() {
            break;
        }
        let i = active[rng.random_range(0..active.len())];
        let s = &mut streams[i];
        let mut n = req.min(s.size_units - s.done);
        let lba = match plan.kind {
            NamespaceKind::Block => s.base + s.done,
            NamespaceKind::Zoned => {
                let cap = plan.zone_capacity_units;
                if s.done.is_multiple_of(cap) {
                    s.zones.push(free.pop_front().expect("zone budget checked"));
                }
                n = n.min(cap - s.done % cap);
                s.zones.last().expect("zone pushed") * plan.zone_size_units + s.done % cap
            }
        };
        s.done += n;
        let last = s.done == s.size_units;
        out.push(TraceRecord::write(0, ns, lba, n * UNIT_BYTES, last));
        if last {
            if plan.kind == NamespaceKind::Zoned {
                let tail = *s.zones.last().expect("file has zones");
                if !s.size_units.is_multiple_of(plan.zone_capacity_units) {
                    out.push(TraceRecord::zone_op(0, ns, TraceOp::ZoneFinish, tail * plan.zone_size_units));
                }
                for z in s.old_zones.drain(..) {
                    out.push(TraceRecord::zone_op(0, ns, TraceOp::ZoneReset, z * plan.zone_size_units));
                    free.push_back(z);
                }
                s.old_zones = std::mem::take(&mut s.zones);
            }
            s.done = 0;
            s.versions_left -= 1;
        }
    }
    out.push(TraceRecord::flush(0, ns));
    Ok(())
}
