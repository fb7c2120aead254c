use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use zonesim_core::events::write_event_log;
use zonesim_core::harness::run_trace;
use zonesim_core::namespace::plans_for_config;
use zonesim_core::trace::{parse_trace, write_trace};
use zonesim_core::workload::{generate_workload, WorkloadSpec};
use zonesim_core::{emit_report, ReportFormat, SimConfig, SimError, SimResult};

#[derive(Parser)]
#[command(name = "zonesim", version, about = "Trace-driven zoned flash storage simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Replay a trace and report metrics.
    Run {
        /// TOML configuration; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trace: PathBuf,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "human")]
        format: ReportFormat,
        /// Write the per-command event log here.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Generate a synthetic workload trace.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 1)]
        ns: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// SEQ_WRITE total bytes, or the RAND_READ_RANGE fill size.
        #[arg(long, default_value_t = 64 << 20)]
        bytes: u64,
        #[arg(long, default_value_t = 512 << 10)]
        request_size: u64,
        #[arg(long, default_value_t = 0)]
        start_zone: u64,
        #[arg(long)]
        synced: bool,
        #[arg(long)]
        no_flush: bool,
        /// RAND_READ_RANGE read range in bytes.
        #[arg(long, default_value_t = 1 << 20)]
        range: u64,
        /// RAND_READ_RANGE read count.
        #[arg(long, default_value_t = 10_000)]
        count: u64,
        /// BUFFER_CONFLICT: place both streams on the same buffer.
        #[arg(long)]
        conflict: bool,
        /// MULTI_STREAM file sizes in bytes, comma separated.
        #[arg(long, value_delimiter = ',')]
        files: Vec<u64>,
        /// MULTI_STREAM rewrite counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        updates: Vec<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration and print the namespace layout.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also check that this trace parses.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "SCREAMING_SNAKE_CASE")]
enum Kind {
    SeqWrite,
    RandReadRange,
    BufferConflict,
    MultiStream,
}

fn load_config(path: Option<&Path>) -> SimResult<SimConfig> {
    match path {
        Some(p) => SimConfig::from_path(p),
        None => Ok(SimConfig::default()),
    }
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> SimResult<()> {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn read_trace(path: &Path) -> SimResult<Vec<zonesim_core::trace::TraceRecord>> {
    let f = std::fs::File::open(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    parse_trace(std::io::BufReader::new(f))
}

fn main_inner(cli: Cli) -> SimResult<()> {
    match cli.cmd {
        Cmd::Run { config, trace, out, format, events } => {
            let cfg = load_config(config.as_deref())?;
            let records = read_trace(&trace)?;
            let run = run_trace(cfg, &records, events.is_some())?;
            if let Some(p) = events {
                let f = std::fs::File::create(&p)?;
                write_event_log(&run.events, std::io::BufWriter::new(f))?;
            }
            write_out(out.as_deref(), &emit_report(&run.report, format))
        }
        Cmd::Gen {
            config,
            kind,
            ns,
            seed,
            bytes,
            request_size,
            start_zone,
            synced,
            no_flush,
            range,
            count,
            conflict,
            files,
            updates,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let spec = match kind {
                Kind::SeqWrite => WorkloadSpec::SeqWrite { ns, start_zone, bytes, request_size, synced, flush: !no_flush },
                Kind::RandReadRange => WorkloadSpec::RandReadRange {
                    ns,
                    fill_bytes: bytes,
                    fill_request: request_size,
                    range_bytes: range,
                    count,
                    seed,
                },
                Kind::BufferConflict => WorkloadSpec::BufferConflict {
                    ns,
                    conflict,
                    request_size: if request_size == 512 << 10 { 48 << 10 } else { request_size },
                    bytes_per_stream: None,
                },
                Kind::MultiStream => WorkloadSpec::MultiStream { ns, file_sizes: files, updates, request_size, seed },
            };
            let records = generate_workload(&spec, &cfg)?;
            let mut buf = Vec::new();
            write_trace(&records, &mut buf)?;
            write_out(out.as_deref(), &buf)
        }
        Cmd::Validate { config, trace } => {
            let cfg = load_config(config.as_deref())?;
            let plans = plans_for_config(&cfg)?;
            for p in &plans {
                println!(
                    "namespace {} {:?}: logical {} B, physical {} B, {} zones, {} SLC superblocks",
                    p.id, p.kind, p.logical_size, p.physical_size, p.zones, p.slc_superblocks
                );
            }
            if let Some(t) = trace {
                let n = read_trace(&t)?.len();
                println!("trace ok: {n} records");
            }
            println!("config ok");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
