//! Trace replay. Requests are issued in trace order; a request issues at its
//! timestamp unless `queue_depth` requests are still outstanding, in which
//! case it waits for the earliest one to complete. Every request's observed
//! completion includes the host overhead.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;

use crate::config::SimConfig;
use crate::device::{Device, ReadOutcome};
use crate::error::{SimError, SimResult};
use crate::events::Event;
use crate::stats::{LatencyStats, NamespaceStats, StatsReport, SCHEMA_VERSION};
use crate::trace::{TraceOp, TraceRecord};

/// What one replayed request did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub issue: u64,
    /// Host-observed completion, overhead included.
    pub completion: u64,
    pub read: Option<ReadOutcome>,
}

#[derive(Default)]
struct NsTrack {
    first_issue: Option<u64>,
    last_completion: u64,
    read_lat: Vec<u64>,
    write_lat: Vec<u64>,
}

pub struct Simulation {
    device: Device,
    outstanding: BinaryHeap<Reverse<u64>>,
    last_issue: u64,
    tracks: Vec<NsTrack>,
    index: usize,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> SimResult<Self> {
        let device = Device::new(cfg)?;
        let tracks = (0..device.namespace_count()).map(|_| NsTrack::default()).collect();
        Ok(Simulation { device, outstanding: BinaryHeap::new(), last_issue: 0, tracks, index: 0 })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn device_mut(&mut self) -> &mut Device {
        &mut self.device
    }

    /// Replays one record; errors name the record that caused them.
    pub fn step(&mut self, rec: &TraceRecord) -> SimResult<StepOutcome> {
        let index = self.index;
        self.index += 1;
        self.apply(rec).map_err(|e| SimError::Record {
            index,
            record: format!("{},{},{:?},{},{},{}", rec.timestamp, rec.ns, rec.op, rec.lba, rec.len, rec.synced as u8),
            source: Box::new(e),
        })
    }

    fn apply(&mut self, rec: &TraceRecord) -> SimResult<StepOutcome> {
        let host = self.device.config().host.clone();
        let mut issue = rec.timestamp.max(self.last_issue);
        while self.outstanding.peek().is_some_and(|t| t.0 <= issue) {
            self.outstanding.pop();
        }
        if self.outstanding.len() >= host.queue_depth as usize {
            let Reverse(t) = self.outstanding.pop().expect("queue is full");
            issue = issue.max(t);
        }
        self.last_issue = issue;
        let ns = rec.ns;
        let mut read = None;
        let done = match rec.op {
            TraceOp::Read => {
                let r = self.device.read(ns, rec.lba, rec.len, issue)?;
                let c = r.completion;
                read = Some(r);
                c
            }
            TraceOp::Write => self.device.write(ns, rec.lba, rec.len, issue, rec.synced)?,
            TraceOp::Flush => self.device.flush(ns, issue)?,
            TraceOp::ZoneReset | TraceOp::ZoneFinish => {
                let zone = rec.lba / self.device.plan(ns)?.zone_size_units.max(1);
                if rec.op == TraceOp::ZoneReset {
                    self.device.zone_reset(ns, zone, issue)?
                } else {
                    self.device.zone_finish(ns, zone, issue)?
                }
            }
        };
        let completion = done.max(issue) + host.overhead_ns;
        self.outstanding.push(Reverse(completion));
        let t = &mut self.tracks[ns as usize];
        t.first_issue.get_or_insert(issue);
        t.last_completion = t.last_completion.max(completion);
        match rec.op {
            TraceOp::Read => t.read_lat.push(completion - issue),
            TraceOp::Write => t.write_lat.push(completion - issue),
            _ => {}
        }
        Ok(StepOutcome { issue, completion, read })
    }

    /// Lets queued background work finish and builds the report.
    pub fn finish(mut self) -> SimResult<(StatsReport, Device)> {
        self.device.finish()?;
        let d = &self.device;
        let mut report = StatsReport {
            schema_version: SCHEMA_VERSION,
            cache_entry_size: d.config().cache.entry_size,
            cache_capacity_bytes: d.config().cache.capacity,
            elapsed_ns: 0,
            namespaces: Vec::new(),
        };
        let start = self.tracks.iter().filter_map(|t| t.first_issue).min();
        let end = self.tracks.iter().map(|t| t.last_completion).max().unwrap_or(0);
        report.elapsed_ns = start.map_or(0, |s| end - s);
        for (i, t) in self.tracks.iter_mut().enumerate() {
            let ns = i as u32;
            let c = d.counters(ns)?;
            let x = d.totals(ns)?;
            let mut s = NamespaceStats {
                ns,
                kind: format!("{:?}", d.plan(ns)?.kind).to_uppercase(),
                host_read_bytes: c.host_read_bytes,
                host_write_bytes: c.host_write_bytes,
                read_ops: c.read_ops,
                write_ops: c.write_ops,
                flush_ops: c.flush_ops,
                zone_resets: c.zone_resets,
                slc_program_bytes: x.slc_program_bytes,
                regular_program_bytes: x.regular_program_bytes,
                device_program_bytes: x.device_program_bytes(),
                host_regular_bytes: x.host_regular_bytes,
                host_slc_bytes: x.host_slc_bytes,
                fold_bytes: x.fold_bytes,
                gc_migrated_bytes: x.gc_bytes,
                slc_read_bytes: x.slc_read_bytes,
                regular_read_bytes: x.regular_read_bytes,
                slc_erases: x.slc_erases,
                regular_erases: x.regular_erases,
                slc_erase_bytes: x.slc_erase_bytes,
                regular_erase_bytes: x.regular_erase_bytes,
                mapping_fetch_reads: x.mapping_reads,
                mapping_read_bytes: x.mapping_read_bytes,
                zone_hits: c.zone_hits,
                chunk_hits: c.chunk_hits,
                page_hits: c.page_hits,
                misses: c.misses,
                buffer_hits: c.buffer_hits,
                premature_flush_count: c.premature_flushes,
                folds: c.folds,
                gc_runs: c.gc_runs,
                discarded_bytes: c.discarded_bytes,
                elapsed_ns: t.first_issue.map_or(0, |f| t.last_completion - f),
                read_latency: LatencyStats::from_samples(&mut t.read_lat),
                write_latency: LatencyStats::from_samples(&mut t.write_lat),
                ..Default::default()
            };
            s.finalize();
            report.namespaces.push(s);
        }
        Ok((report, self.device))
    }
}

pub struct RunOutput {
    pub report: StatsReport,
    pub events: Vec<Event>,
}

/// Replays a trace from start to finish.
pub fn run_trace(cfg: SimConfig, records: &[TraceRecord], record_events: bool) -> SimResult<RunOutput> {
    let mut sim = Simulation::new(cfg)?;
    if record_events {
        sim.device_mut().enable_event_log(false);
    }
    for rec in records {
        sim.step(rec)?;
    }
    let (report, mut device) = sim.finish()?;
    Ok(RunOutput { report, events: device.take_events() })
}

/// File-based entry point used by the CLI.
pub fn run_trace_files(config: &Path, trace: &Path, record_events: bool) -> SimResult<RunOutput> {
    let cfg = SimConfig::from_path(config)?;
    let file = std::fs::File::open(trace)?;
    let records = crate::trace::parse_trace(std::io::BufReader::new(file))?;
    run_trace(cfg, &records, record_events)
}
