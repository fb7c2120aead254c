//! Namespace sizing over the shared device, zone descriptors and the
//! per-namespace controller context.

use serde::{Deserialize, Serialize};

use crate::allocator::ZoneRegion;
use crate::config::{NamespaceKind, SimConfig};
use crate::error::{SimError, SimResult};
use crate::geometry::{Layout, UNIT_BYTES};
use crate::mapping::MappingTable;

/// Derived sizes of one namespace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsPlan {
    pub id: u32,
    pub kind: NamespaceKind,
    pub logical_size: u64,
    pub physical_size: u64,
    /// Addressable 4 KiB units: `zones * zone_size_units` when zoned.
    pub lba_units: u64,
    pub zones: u64,
    pub zone_size_units: u64,
    pub zone_capacity_units: u64,
    pub slc_superblocks: u32,
}

/// Sizes every namespace and checks the result fits the device.
/// `zone_capacity_units` is what one reserved region holds and
/// `zone_regions` how many regions the regular pool can supply.
pub fn plan_namespaces(
    cfg: &SimConfig,
    layout: &Layout,
    zone_capacity_units: u64,
    zone_regions: u64,
) -> SimResult<Vec<NsPlan>> {
    let slc_sb_bytes = layout.slc_units_per_block as u64 * layout.chips as u64 * UNIT_BYTES;
    let cap_bytes = zone_capacity_units * UNIT_BYTES;
    let zone_size = cfg.zones.zone_size.unwrap_or_else(|| cap_bytes.next_power_of_two());
    if !zone_size.is_power_of_two() || zone_size < cap_bytes {
        return Err(SimError::config(format!(
            "zones.zone_size ({zone_size}) must be a power of two >= the zone capacity ({cap_bytes})"
        )));
    }

    let mut plans = Vec::new();
    let mut slc_used = 0u32;
    for ns in cfg.namespaces.iter().filter(|n| n.kind == NamespaceKind::Block) {
        let min_physical = ns.logical_size + ns.logical_size.div_ceil(8);
        let physical = match ns.physical_size {
            Some(p) => {
                if p < min_physical {
                    return Err(SimError::config(format!(
                        "namespace {}: physical_size {p} < logical_size plus 1/8 over-provisioning ({min_physical})",
                        ns.id
                    )));
                }
                if p % slc_sb_bytes != 0 {
                    return Err(SimError::config(format!(
                        "namespace {}: physical_size must be a multiple of the SLC superblock size ({slc_sb_bytes})",
                        ns.id
                    )));
                }
                p
            }
            None => min_physical.div_ceil(slc_sb_bytes) * slc_sb_bytes,
        };
        if ns.slc_size.is_some() {
            return Err(SimError::config(format!("namespace {}: slc_size applies to zoned namespaces", ns.id)));
        }
        let sbs = (physical / slc_sb_bytes) as u32;
        slc_used += sbs;
        plans.push(NsPlan {
            id: ns.id,
            kind: NamespaceKind::Block,
            logical_size: ns.logical_size,
            physical_size: physical,
            lba_units: ns.logical_size / UNIT_BYTES,
            zones: 0,
            zone_size_units: 0,
            zone_capacity_units: 0,
            slc_superblocks: sbs,
        });
    }
    if slc_used > layout.slc_superblocks {
        return Err(SimError::config(format!(
            "block namespaces need {slc_used} SLC superblocks, the device has {}",
            layout.slc_superblocks
        )));
    }

    let zoned: Vec<_> = cfg.namespaces.iter().filter(|n| n.kind == NamespaceKind::Zoned).collect();
    let leftover = layout.slc_superblocks - slc_used;
    let mut zones_used = 0u64;
    for (i, ns) in zoned.iter().enumerate() {
        let sbs = match ns.slc_size {
            Some(s) => {
                if s % slc_sb_bytes != 0 {
                    return Err(SimError::config(format!(
                        "namespace {}: slc_size must be a multiple of the SLC superblock size ({slc_sb_bytes})",
                        ns.id
                    )));
                }
                (s / slc_sb_bytes) as u32
            }
            None => {
                let share = leftover / zoned.len() as u32;
                share + if i == 0 { leftover % zoned.len() as u32 } else { 0 }
            }
        };
        let zones = ns.logical_size.div_ceil(cap_bytes);
        let physical = zones * cap_bytes + sbs as u64 * slc_sb_bytes;
        if let Some(p) = ns.physical_size {
            if p != physical {
                return Err(SimError::config(format!(
                    "namespace {}: physical_size {p} != zones x capacity + SLC buffer ({physical})",
                    ns.id
                )));
            }
        }
        slc_used += sbs;
        zones_used += zones;
        plans.push(NsPlan {
            id: ns.id,
            kind: NamespaceKind::Zoned,
            logical_size: ns.logical_size,
            physical_size: physical,
            lba_units: zones * (zone_size / UNIT_BYTES),
            zones,
            zone_size_units: zone_size / UNIT_BYTES,
            zone_capacity_units,
            slc_superblocks: sbs,
        });
    }
    if slc_used > layout.slc_superblocks || zones_used > zone_regions {
        return Err(SimError::config(format!(
            "namespace physical sizes exceed the device: {slc_used}/{} SLC superblocks, {zones_used}/{zone_regions} zone regions",
            layout.slc_superblocks
        )));
    }
    plans.sort_by_key(|p| p.id);
    Ok(plans)
}

/// Namespace plans for a configuration without building the device.
pub fn plans_for_config(cfg: &SimConfig) -> SimResult<Vec<NsPlan>> {
    cfg.validate_basic()?;
    let layout = Layout::new(&cfg.geometry, &cfg.slc_profile(), &cfg.regular_profile())?;
    let bpz = cfg.zones.blocks_per_zone;
    if bpz.is_some_and(|k| k == 0 || k > layout.chips) {
        return Err(SimError::config("blocks_per_zone must be in 1..=total chips"));
    }
    plan_namespaces(
        cfg,
        &layout,
        crate::allocator::zone_capacity_units(&layout, bpz),
        crate::allocator::zone_regions_available(&layout, bpz),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ZoneState {
    Empty,
    Open,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZoneDescriptor {
    pub id: u64,
    pub state: ZoneState,
    /// Host write pointer, in units from the zone start.
    pub write_pointer: u64,
    pub region: Option<ZoneRegion>,
    /// Units `[regular_units, regular_units + slc_units)` live in SLC; the
    /// range below is programmed in the region, the range above is staged.
    pub regular_units: u64,
    pub slc_units: u64,
    pub buffer: Option<usize>,
}

impl ZoneDescriptor {
    pub fn new(id: u64) -> Self {
        ZoneDescriptor {
            id,
            state: ZoneState::Empty,
            write_pointer: 0,
            region: None,
            regular_units: 0,
            slc_units: 0,
            buffer: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsCounters {
    pub host_write_bytes: u64,
    pub host_read_bytes: u64,
    pub write_ops: u64,
    pub read_ops: u64,
    pub flush_ops: u64,
    pub zone_resets: u64,
    pub premature_flushes: u64,
    pub folds: u64,
    pub zone_hits: u64,
    pub chunk_hits: u64,
    pub page_hits: u64,
    pub misses: u64,
    pub buffer_hits: u64,
    pub gc_runs: u64,
    pub discarded_bytes: u64,
}

/// Controller state of one namespace.
pub struct NsContext {
    pub plan: NsPlan,
    pub table: MappingTable,
    pub zones: Vec<ZoneDescriptor>,
    /// Indices into the device's buffer array.
    pub buffers: Vec<usize>,
    pub counters: NsCounters,
    /// Latest program completion of this namespace's data.
    pub durable_at: u64,
}

impl NsContext {
    pub fn new(plan: NsPlan, chunk_units: u64, buffers: Vec<usize>) -> Self {
        let table = match plan.kind {
            NamespaceKind::Block => MappingTable::flat(plan.lba_units),
            NamespaceKind::Zoned => MappingTable::zoned(plan.zones, plan.zone_capacity_units, chunk_units),
        };
        let zones = (0..plan.zones).map(ZoneDescriptor::new).collect();
        NsContext { plan, table, zones, buffers, counters: NsCounters::default(), durable_at: 0 }
    }

    /// Table index of a unit, or an error when outside the namespace. For
    /// zoned namespaces also returns (zone, offset).
    pub fn locate(&self, lba: u64) -> SimResult<(u64, u64, u64)> {
        let ns = self.plan.id;
        match self.plan.kind {
            NamespaceKind::Block => {
                if lba >= self.plan.lba_units {
                    return Err(SimError::LbaOutOfRange { ns, lpa: lba });
                }
                Ok((lba, 0, lba))
            }
            NamespaceKind::Zoned => {
                let zone = lba / self.plan.zone_size_units;
                let off = lba % self.plan.zone_size_units;
                if zone >= self.plan.zones {
                    return Err(SimError::LbaOutOfRange { ns, lpa: lba });
                }
                Ok((zone * self.plan.zone_capacity_units + off, zone, off))
            }
        }
    }

    /// Host LBA of a table index.
    pub fn lba_of(&self, idx: u64) -> u64 {
        match self.plan.kind {
            NamespaceKind::Block => idx,
            NamespaceKind::Zoned => {
                let cap = self.plan.zone_capacity_units;
                (idx / cap) * self.plan.zone_size_units + idx % cap
            }
        }
    }
}
