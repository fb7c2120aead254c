//! Run metrics and their JSON / CSV / human renderings. Field order is the
//! declaration order below and is part of the report format.

use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};

/// Bumped whenever a field is added, removed or changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Human,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub p999_ns: u64,
}

impl LatencyStats {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &mut [u64]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        samples.sort_unstable();
        let n = samples.len();
        let rank = |q: f64| samples[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        let sum: u128 = samples.iter().map(|&s| s as u128).sum();
        LatencyStats {
            count: n as u64,
            mean_ns: sum as f64 / n as f64,
            p50_ns: rank(0.50),
            p99_ns: rank(0.99),
            p999_ns: rank(0.999),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NamespaceStats {
    pub ns: u32,
    pub kind: String,
    pub host_read_bytes: u64,
    pub host_write_bytes: u64,
    pub read_ops: u64,
    pub write_ops: u64,
    pub flush_ops: u64,
    pub zone_resets: u64,
    pub slc_program_bytes: u64,
    pub regular_program_bytes: u64,
    pub device_program_bytes: u64,
    pub host_regular_bytes: u64,
    pub host_slc_bytes: u64,
    pub fold_bytes: u64,
    pub gc_migrated_bytes: u64,
    pub slc_read_bytes: u64,
    pub regular_read_bytes: u64,
    pub slc_erases: u64,
    pub regular_erases: u64,
    pub slc_erase_bytes: u64,
    pub regular_erase_bytes: u64,
    pub mapping_fetch_reads: u64,
    pub mapping_read_bytes: u64,
    pub zone_hits: u64,
    pub chunk_hits: u64,
    pub page_hits: u64,
    pub misses: u64,
    pub buffer_hits: u64,
    pub miss_rate: f64,
    pub premature_flush_count: u64,
    pub folds: u64,
    pub gc_runs: u64,
    pub discarded_bytes: u64,
    pub elapsed_ns: u64,
    pub bandwidth_mib_s: f64,
    pub iops: f64,
    pub read_latency: LatencyStats,
    pub write_latency: LatencyStats,
    /// Device-programmed over host-written bytes; 0 without host writes.
    pub waf: f64,
}

impl NamespaceStats {
    /// Recomputes the ratios from the counters.
    pub fn finalize(&mut self) {
        let lookups = self.zone_hits + self.chunk_hits + self.page_hits + self.misses;
        self.miss_rate = ratio(self.misses, lookups);
        self.waf = ratio(self.device_program_bytes, self.host_write_bytes);
        let secs = self.elapsed_ns as f64 / 1e9;
        let bytes = self.host_read_bytes + self.host_write_bytes;
        let ops = self.read_ops + self.write_ops;
        (self.bandwidth_mib_s, self.iops) = if self.elapsed_ns == 0 {
            (0.0, 0.0)
        } else {
            (bytes as f64 / (1024.0 * 1024.0) / secs, ops as f64 / secs)
        };
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 { 0.0 } else { a as f64 / b as f64 }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub schema_version: u32,
    pub cache_entry_size: u64,
    pub cache_capacity_bytes: u64,
    pub elapsed_ns: u64,
    pub namespaces: Vec<NamespaceStats>,
}

impl StatsReport {
    pub fn namespace(&self, ns: u32) -> Option<&NamespaceStats> {
        self.namespaces.iter().find(|s| s.ns == ns)
    }

    pub fn from_json(bytes: &[u8]) -> SimResult<Self> {
        serde_json::from_slice(bytes).map_err(|e| SimError::Io(e.to_string()))
    }
}

const CSV_COLUMNS: &[&str] = &[
    "ns",
    "kind",
    "host_read_bytes",
    "host_write_bytes",
    "read_ops",
    "write_ops",
    "flush_ops",
    "zone_resets",
    "slc_program_bytes",
    "regular_program_bytes",
    "device_program_bytes",
    "host_regular_bytes",
    "host_slc_bytes",
    "fold_bytes",
    "gc_migrated_bytes",
    "slc_read_bytes",
    "regular_read_bytes",
    "slc_erases",
    "regular_erases",
    "slc_erase_bytes",
    "regular_erase_bytes",
    "mapping_fetch_reads",
    "mapping_read_bytes",
    "zone_hits",
    "chunk_hits",
    "page_hits",
    "misses",
    "buffer_hits",
    "miss_rate",
    "premature_flush_count",
    "folds",
    "gc_runs",
    "discarded_bytes",
    "elapsed_ns",
    "bandwidth_mib_s",
    "iops",
    "read_count",
    "read_mean_ns",
    "read_p50_ns",
    "read_p99_ns",
    "read_p999_ns",
    "write_count",
    "write_mean_ns",
    "write_p50_ns",
    "write_p99_ns",
    "write_p999_ns",
    "waf",
];

fn csv_row(s: &NamespaceStats) -> Vec<String> {
    let ints = [
        s.host_read_bytes,
        s.host_write_bytes,
        s.read_ops,
        s.write_ops,
        s.flush_ops,
        s.zone_resets,
        s.slc_program_bytes,
        s.regular_program_bytes,
        s.device_program_bytes,
        s.host_regular_bytes,
        s.host_slc_bytes,
        s.fold_bytes,
        s.gc_migrated_bytes,
        s.slc_read_bytes,
        s.regular_read_bytes,
        s.slc_erases,
        s.regular_erases,
        s.slc_erase_bytes,
        s.regular_erase_bytes,
        s.mapping_fetch_reads,
        s.mapping_read_bytes,
        s.zone_hits,
        s.chunk_hits,
        s.page_hits,
        s.misses,
        s.buffer_hits,
    ];
    let mut row = vec![s.ns.to_string(), s.kind.clone()];
    row.extend(ints.iter().map(u64::to_string));
    row.push(s.miss_rate.to_string());
    for v in [s.premature_flush_count, s.folds, s.gc_runs, s.discarded_bytes, s.elapsed_ns] {
        row.push(v.to_string());
    }
    row.push(s.bandwidth_mib_s.to_string());
    row.push(s.iops.to_string());
    for l in [&s.read_latency, &s.write_latency] {
        row.push(l.count.to_string());
        row.push(l.mean_ns.to_string());
        row.push(l.p50_ns.to_string());
        row.push(l.p99_ns.to_string());
        row.push(l.p999_ns.to_string());
    }
    row.push(s.waf.to_string());
    debug_assert_eq!(row.len(), CSV_COLUMNS.len());
    row
}

fn human(r: &StatsReport) -> String {
    let mut out = format!(
        "schema {}  elapsed {:.3} ms  cache {} B ({} B entries)\n",
        r.schema_version,
        r.elapsed_ns as f64 / 1e6,
        r.cache_capacity_bytes,
        r.cache_entry_size
    );
    for s in &r.namespaces {
        out += &format!("namespace {} ({})\n", s.ns, s.kind);
        out += &format!(
            "  host      written {} B  read {} B  ops w/r/f {}/{}/{}  resets {}\n",
            s.host_write_bytes, s.host_read_bytes, s.write_ops, s.read_ops, s.flush_ops, s.zone_resets
        );
        out += &format!(
            "  programs  slc {} B  regular {} B  (host->regular {}, host->slc {}, fold {}, gc {})\n",
            s.slc_program_bytes,
            s.regular_program_bytes,
            s.host_regular_bytes,
            s.host_slc_bytes,
            s.fold_bytes,
            s.gc_migrated_bytes
        );
        out += &format!(
            "  reads     slc {} B  regular {} B  mapping fetches {}\n",
            s.slc_read_bytes, s.regular_read_bytes, s.mapping_fetch_reads
        );
        out += &format!(
            "  erases    slc {} ({} B)  regular {} ({} B)\n",
            s.slc_erases, s.slc_erase_bytes, s.regular_erases, s.regular_erase_bytes
        );
        out += &format!(
            "  l2p       zone {}  chunk {}  page {}  miss {}  buffer {}  miss rate {:.4}\n",
            s.zone_hits, s.chunk_hits, s.page_hits, s.misses, s.buffer_hits, s.miss_rate
        );
        out += &format!(
            "  flushes   premature {}  folds {}  gc runs {}  discarded {} B\n",
            s.premature_flush_count, s.folds, s.gc_runs, s.discarded_bytes
        );
        out += &format!("  perf      {:.2} MiB/s  {:.1} IOPS\n", s.bandwidth_mib_s, s.iops);
        for (name, l) in [("read", &s.read_latency), ("write", &s.write_latency)] {
            out += &format!(
                "  {name:<5} lat n={} mean {:.1} us  p50 {:.1}  p99 {:.1}  p99.9 {:.1}\n",
                l.count,
                l.mean_ns / 1e3,
                l.p50_ns as f64 / 1e3,
                l.p99_ns as f64 / 1e3,
                l.p999_ns as f64 / 1e3
            );
        }
        out += &format!("  WAF       {:.2}\n", s.waf);
    }
    out
}

pub fn emit_report(report: &StatsReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report).expect("report serializes");
            v.push(b'\n');
            v
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_COLUMNS).expect("in-memory write");
            for s in &report.namespaces {
                w.write_record(csv_row(s)).expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
        ReportFormat::Human => human(report).into_bytes(),
    }
}
