//! Per-command event records and the CSV event-log format
//! (`time,unit,origin,kind,ppa,bytes`).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::geometry::Ppa;
use crate::timing::{CommandKind, Occupation, Origin};

/// Who a physical unit belongs to. `seq` is the host write sequence number
/// that produced the data, carried so oracles can check content identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitOwner {
    pub ns: u32,
    pub lpa: u64,
    pub seq: u64,
}

/// Why a program command was issued; the WAF identity sums these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProgramCause {
    HostRegular,
    HostSlc,
    Fold,
    GcMigration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub start: u64,
    pub end: u64,
    pub channel: u32,
    pub chip: u32,
    pub origin: Origin,
    pub kind: CommandKind,
    /// `None` for mapping-table fetches, which have no modeled location.
    pub ppa: Option<Ppa>,
    pub bytes: u64,
    pub ns: u32,
    pub causes: Vec<(ProgramCause, u64)>,
    pub chip_busy: Occupation,
    pub transfer: Option<Occupation>,
    /// Units written by a program, filled only when placement recording is on.
    pub placements: Vec<(Ppa, UnitOwner)>,
}

impl Event {
    pub fn csv_line(&self) -> String {
        let ppa = match &self.ppa {
            Some(p) => p.to_string(),
            None => "-".to_string(),
        };
        format!(
            "{},ch{}.chip{},{},{},{},{}",
            self.start,
            self.channel,
            self.chip,
            self.origin.as_str(),
            self.kind.as_str(),
            ppa,
            self.bytes
        )
    }
}

pub const EVENT_LOG_HEADER: &str = "time,unit,origin,kind,ppa,bytes";

pub fn write_event_log<W: Write>(events: &[Event], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{EVENT_LOG_HEADER}")?;
    for e in events {
        writeln!(out, "{}", e.csv_line())?;
    }
    Ok(())
}
