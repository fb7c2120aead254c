//! Simulator configuration, loaded from TOML. Every section has defaults for
//! the reference device: 2 channels x 2 chips at 3200 MiB/s, 16 KiB pages,
//! TLC with a 96 KiB programming unit, 2 x 384 KiB write buffers, a 1 MiB L2P
//! cache, a 64 MiB block namespace and a 4 GiB zoned namespace.

use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};
use crate::geometry::{CellKind, FlashGeometry, MediaProfile, UNIT_BYTES};
use crate::mapping::MissStrategy;

const MIB: u64 = 1024 * 1024;

impl Default for FlashGeometry {
    fn default() -> Self {
        FlashGeometry {
            channels: 2,
            chips_per_channel: 2,
            blocks_per_chip: 384,
            pages_per_block: 192,
            page_size: 16 * 1024,
            channel_bandwidth: 3200 * MIB,
            slc_blocks_per_chip: 32,
        }
    }
}

/// A media profile with optional overrides of the per-kind defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub cell_kind: CellKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program_latency_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_latency_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erase_latency_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_program_pages: Option<u32>,
}

impl ProfileConfig {
    pub fn profile(&self) -> MediaProfile {
        let mut p = MediaProfile::for_kind(self.cell_kind);
        if let Some(v) = self.program_latency_ns {
            p.program_latency_ns = v;
        }
        if let Some(v) = self.read_latency_ns {
            p.read_latency_ns = v;
        }
        if let Some(v) = self.erase_latency_ns {
            p.erase_latency_ns = v;
        }
        if let Some(v) = self.min_program_pages {
            p.min_program_pages = v;
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MediaConfig {
    pub slc: ProfileConfig,
    pub regular: ProfileConfig,
}

impl Default for MediaConfig {
    fn default() -> Self {
        MediaConfig {
            slc: ProfileConfig {
                cell_kind: CellKind::Slc,
                program_latency_ns: None,
                read_latency_ns: None,
                erase_latency_ns: None,
                min_program_pages: None,
            },
            // Two-plane TLC: 6 x 16 KiB = 96 KiB per chip.
            regular: ProfileConfig {
                cell_kind: CellKind::Tlc,
                program_latency_ns: None,
                read_latency_ns: None,
                erase_latency_ns: None,
                min_program_pages: Some(6),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BindingPolicyKind {
    FullyAssociative,
    Modulo,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferConfig {
    /// Buffers shared by the zoned namespaces.
    pub count: u32,
    /// Bytes per buffer.
    pub capacity: u64,
    pub policy: BindingPolicyKind,
    /// For CUSTOM: buffer index for `zone % custom_map.len()`.
    pub custom_map: Vec<u32>,
    /// Route every flush through SLC; folding then happens only in GC.
    pub buffer_all_in_slc: bool,
    /// Dedicated buffers of each block namespace, on top of `count`.
    pub block_namespace_buffers: u32,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig {
            count: 2,
            capacity: 384 * 1024,
            policy: BindingPolicyKind::FullyAssociative,
            custom_map: Vec::new(),
            buffer_all_in_slc: false,
            block_namespace_buffers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheConfig {
    pub capacity: u64,
    pub entry_size: u64,
    pub buckets: usize,
    pub miss_strategy: MissStrategy,
    pub pin_zone_entries: bool,
    /// false selects pure page-level mapping (no chunk or zone entries).
    pub hybrid: bool,
    pub chunk_size: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            capacity: MIB,
            entry_size: 8,
            buckets: 1024,
            miss_strategy: MissStrategy::Multiple,
            pin_zone_entries: false,
            hybrid: true,
            chunk_size: 4 * MIB,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GcDestination {
    InSlc,
    ToRegular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcConfig {
    /// GC starts when a partition has fewer free SLC superblocks than this.
    pub trigger_free: u32,
    /// ...and runs until free plus reclaiming superblocks reach this.
    pub target_free: u32,
    pub destination: GcDestination,
    pub preemptible: bool,
}

impl Default for GcConfig {
    fn default() -> Self {
        GcConfig { trigger_free: 2, target_free: 3, destination: GcDestination::InSlc, preemptible: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoneConfig {
    /// Sub-block mode: blocks (on distinct chips) per zone. Unset reserves
    /// whole superblocks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks_per_zone: Option<u32>,
    /// Power-of-two addressable zone window; defaults to the capacity
    /// rounded up.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zone_size: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HostConfig {
    pub queue_depth: u32,
    /// Added to every request's observed latency (submission and completion
    /// handling on the host).
    pub overhead_ns: u64,
}

impl Default for HostConfig {
    fn default() -> Self {
        HostConfig { queue_depth: 32, overhead_ns: 16_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NamespaceKind {
    Block,
    Zoned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamespaceConfig {
    pub id: u32,
    pub kind: NamespaceKind,
    pub logical_size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical_size: Option<u64>,
    /// Zoned only: SLC buffer bytes. Defaults to the SLC left after block
    /// namespaces, split across zoned namespaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slc_size: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub geometry: FlashGeometry,
    pub media: MediaConfig,
    pub buffers: BufferConfig,
    pub cache: CacheConfig,
    pub gc: GcConfig,
    pub zones: ZoneConfig,
    pub host: HostConfig,
    #[serde(rename = "namespace")]
    pub namespaces: Vec<NamespaceConfig>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            geometry: FlashGeometry::default(),
            media: MediaConfig::default(),
            buffers: BufferConfig::default(),
            cache: CacheConfig::default(),
            gc: GcConfig::default(),
            zones: ZoneConfig::default(),
            host: HostConfig::default(),
            namespaces: vec![
                NamespaceConfig {
                    id: 0,
                    kind: NamespaceKind::Block,
                    logical_size: 64 * MIB,
                    physical_size: None,
                    slc_size: None,
                },
                NamespaceConfig {
                    id: 1,
                    kind: NamespaceKind::Zoned,
                    logical_size: 4096 * MIB,
                    physical_size: None,
                    slc_size: None,
                },
            ],
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> SimResult<Self> {
        let cfg: SimConfig = toml::from_str(s).map_err(|e| SimError::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> SimResult<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn slc_profile(&self) -> MediaProfile {
        self.media.slc.profile()
    }

    pub fn regular_profile(&self) -> MediaProfile {
        self.media.regular.profile()
    }

    /// Checks everything that does not need the derived layout; namespace
    /// sizing is checked when the device is built.
    pub fn validate_basic(&self) -> SimResult<()> {
        let b = &self.buffers;
        if b.count == 0 {
            return Err(SimError::config("buffers.count must be >= 1"));
        }
        if b.capacity < UNIT_BYTES || !b.capacity.is_multiple_of(UNIT_BYTES) {
            return Err(SimError::config("buffers.capacity must be a positive multiple of 4096"));
        }
        if b.policy == BindingPolicyKind::Custom {
            if b.custom_map.is_empty() {
                return Err(SimError::config("CUSTOM binding needs a non-empty buffers.custom_map"));
            }
            if b.custom_map.iter().any(|&x| x >= b.count) {
                return Err(SimError::config("buffers.custom_map entries must be < buffers.count"));
            }
        }
        if b.buffer_all_in_slc && self.gc.destination != GcDestination::ToRegular {
            return Err(SimError::config("buffer_all_in_slc requires gc.destination = TO_REGULAR"));
        }
        let c = &self.cache;
        if c.entry_size == 0 || c.buckets == 0 {
            return Err(SimError::config("cache.entry_size and cache.buckets must be >= 1"));
        }
        if c.chunk_size < UNIT_BYTES || !c.chunk_size.is_multiple_of(UNIT_BYTES) {
            return Err(SimError::config("cache.chunk_size must be a positive multiple of 4096"));
        }
        if self.gc.trigger_free == 0 || self.gc.target_free < self.gc.trigger_free {
            return Err(SimError::config("gc needs 1 <= trigger_free <= target_free"));
        }
        if self.host.queue_depth == 0 {
            return Err(SimError::config("host.queue_depth must be >= 1"));
        }
        if self.namespaces.is_empty() {
            return Err(SimError::config("at least one [[namespace]] is required"));
        }
        for (i, ns) in self.namespaces.iter().enumerate() {
            if ns.id != i as u32 {
                return Err(SimError::config("namespace ids must be 0, 1, ... in order"));
            }
            if ns.logical_size == 0 || ns.logical_size % UNIT_BYTES != 0 {
                return Err(SimError::config(format!(
                    "namespace {} logical_size must be a positive multiple of 4096",
                    ns.id
                )));
            }
        }
        Ok(())
    }
}
