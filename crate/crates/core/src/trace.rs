//! Host request traces: CSV lines `timestamp_ns,ns,op,lba,len,synced`, with
//! `#` comment lines. `lba` counts 4 KiB units; zone operations address the
//! zone that contains `lba`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};
use crate::geometry::UNIT_BYTES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TraceOp {
    Read,
    Write,
    Flush,
    ZoneReset,
    ZoneFinish,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(rename = "timestamp_ns")]
    pub timestamp: u64,
    pub ns: u32,
    pub op: TraceOp,
    pub lba: u64,
    pub len: u64,
    #[serde(deserialize_with = "flag", serialize_with = "write_flag")]
    pub synced: bool,
}

fn flag<'de, D: serde::Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" | "" => Ok(false),
        _ => Err(serde::de::Error::custom(format!("bad synced flag {s:?}"))),
    }
}

fn write_flag<S: serde::Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u8(*v as u8)
}

impl TraceRecord {
    pub fn write(timestamp: u64, ns: u32, lba: u64, len: u64, synced: bool) -> Self {
        TraceRecord { timestamp, ns, op: TraceOp::Write, lba, len, synced }
    }

    pub fn read(timestamp: u64, ns: u32, lba: u64, len: u64) -> Self {
        TraceRecord { timestamp, ns, op: TraceOp::Read, lba, len, synced: false }
    }

    pub fn flush(timestamp: u64, ns: u32) -> Self {
        TraceRecord { timestamp, ns, op: TraceOp::Flush, lba: 0, len: 0, synced: false }
    }

    pub fn zone_op(timestamp: u64, ns: u32, op: TraceOp, lba: u64) -> Self {
        TraceRecord { timestamp, ns, op, lba, len: 0, synced: false }
    }
}

pub const TRACE_HEADER: &str = "timestamp_ns,ns,op,lba,len,synced";

/// Parses a trace. The header line is optional.
pub fn parse_trace<R: Read>(input: R) -> SimResult<Vec<TraceRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(input);
    let mut out: Vec<TraceRecord> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            SimError::TraceParse { line, msg: e.to_string() }
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.get(0) == Some("timestamp_ns") {
            continue;
        }
        let rec: TraceRecord =
            row.deserialize(None).map_err(|e| SimError::TraceParse { line, msg: e.to_string() })?;
        check_record(&rec).map_err(|msg| SimError::TraceParse { line, msg })?;
        if let Some(prev) = out.last() {
            if rec.timestamp < prev.timestamp {
                return Err(SimError::TraceParse { line, msg: "timestamps must not decrease".into() });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

fn check_record(r: &TraceRecord) -> Result<(), String> {
    if matches!(r.op, TraceOp::Read | TraceOp::Write) && (r.len == 0 || !r.len.is_multiple_of(UNIT_BYTES)) {
        return Err(format!("len {} is not a positive multiple of 4096", r.len));
    }
    Ok(())
}

pub fn write_trace<W: Write>(records: &[TraceRecord], out: W) -> SimResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TRACE_HEADER.split(','))
        .and_then(|_| records.iter().try_for_each(|r| w.serialize(r)))
        .map_err(|e| SimError::Io(e.to_string()))?;
    w.flush()?;
    Ok(())
}
