//! Small-device configurations and host operations shared by the property
//! suites.

use proptest::prelude::*;
use zonesim_core::config::{BindingPolicyKind, GcDestination, NamespaceConfig, NamespaceKind};
use zonesim_core::geometry::{FlashGeometry, UNIT_BYTES};
use zonesim_core::mapping::MissStrategy;
use zonesim_core::SimConfig;

pub mod oracle;

pub const KIB: u64 = 1024;
pub const ZONES: u8 = 3;
pub const BLOCK_UNITS: u64 = 32;

#[derive(Clone, Debug)]
pub struct Knobs {
    pub with_block_ns: bool,
    pub buffers: u32,
    pub buffer_units: u64,
    pub policy: BindingPolicyKind,
    pub all_in_slc: bool,
    pub to_regular: bool,
    pub preemptible: bool,
    pub gc: (u32, u32),
    pub hybrid: bool,
    pub bitmap: bool,
    pub pin: bool,
    pub cache_entries: u64,
    pub blocks_per_zone: Option<u32>,
}

pub fn knobs() -> impl Strategy<Value = Knobs> {
    (
        any::<bool>(),
        1u32..=3,
        prop_oneof![Just(4u64), Just(12), Just(24), Just(48), Just(96)],
        prop_oneof![
            Just(BindingPolicyKind::FullyAssociative),
            Just(BindingPolicyKind::Modulo),
            Just(BindingPolicyKind::Custom)
        ],
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
        prop_oneof![Just((1u32, 1u32)), Just((1, 2)), Just((2, 2))],
        (any::<bool>(), any::<bool>(), any::<bool>()),
        prop_oneof![Just(8u64), Just(64), Just(4096)],
        prop_oneof![Just(None), Just(Some(1u32)), Just(Some(2)), Just(Some(4))],
    )
        .prop_map(
            |(with_block_ns, buffers, buffer_units, policy, all_in_slc, to_regular, preemptible, gc, m, cache_entries, bpz)| {
                Knobs {
                    with_block_ns,
                    buffers,
                    buffer_units,
                    policy,
                    all_in_slc: all_in_slc && to_regular,
                    to_regular,
                    preemptible,
                    gc,
                    hybrid: m.0,
                    bitmap: m.1,
                    pin: m.2,
                    cache_entries,
                    blocks_per_zone: bpz,
                }
            },
        )
}

/// 2 channels x 2 chips, 8 superblocks (5 SLC), 12-page blocks: 24-unit
/// programming units, 64-unit SLC superblocks, three zones' worth of regular
/// flash.
pub fn small_config(k: &Knobs) -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.geometry = FlashGeometry {
        channels: 2,
        chips_per_channel: 2,
        blocks_per_chip: 8,
        pages_per_block: 12,
        page_size: 16 * KIB,
        channel_bandwidth: 3200 * KIB * KIB,
        slc_blocks_per_chip: 5,
    };
    cfg.buffers.count = k.buffers;
    cfg.buffers.capacity = k.buffer_units * UNIT_BYTES;
    cfg.buffers.policy = k.policy;
    cfg.buffers.custom_map = (0..ZONES as u32).map(|z| (z * 7 + 1) % k.buffers).collect();
    cfg.buffers.buffer_all_in_slc = k.all_in_slc;
    cfg.gc.destination = if k.to_regular { GcDestination::ToRegular } else { GcDestination::InSlc };
    cfg.gc.preemptible = k.preemptible;
    (cfg.gc.trigger_free, cfg.gc.target_free) = k.gc;
    cfg.cache.hybrid = k.hybrid;
    cfg.cache.miss_strategy = if k.bitmap { MissStrategy::Bitmap } else { MissStrategy::Multiple };
    cfg.cache.pin_zone_entries = k.pin;
    cfg.cache.capacity = k.cache_entries * cfg.cache.entry_size;
    cfg.cache.buckets = 4;
    cfg.cache.chunk_size = 64 * UNIT_BYTES;
    cfg.zones.blocks_per_zone = k.blocks_per_zone;
    let zone_bytes = k.blocks_per_zone.unwrap_or(4) as u64 * 48 * UNIT_BYTES;
    cfg.namespaces.clear();
    if k.with_block_ns {
        // Two SLC superblocks for 32 logical units keep GC able to compact.
        cfg.namespaces.push(NamespaceConfig {
            id: 0,
            kind: NamespaceKind::Block,
            logical_size: BLOCK_UNITS * UNIT_BYTES,
            physical_size: Some(512 * KIB),
            slc_size: None,
        });
    }
    cfg.namespaces.push(NamespaceConfig {
        id: cfg.namespaces.len() as u32,
        kind: NamespaceKind::Zoned,
        logical_size: ZONES as u64 * zone_bytes,
        physical_size: None,
        slc_size: None,
    });
    cfg
}

#[derive(Clone, Debug)]
pub enum Op {
    Write { zone: u8, units: u8, synced: bool },
    BlockWrite { lba: u8, units: u8, synced: bool },
    Read { pick: u16, units: u8 },
    Flush,
    Reset { zone: u8 },
    Finish { zone: u8 },
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        8 => (0u8..ZONES, 1u8..=30, prop::bool::weighted(0.3)).prop_map(|(zone, units, synced)| Op::Write { zone, units, synced }),
        3 => (0u8..BLOCK_UNITS as u8, 1u8..=8, prop::bool::weighted(0.3)).prop_map(|(lba, units, synced)| Op::BlockWrite { lba, units, synced }),
        6 => (any::<u16>(), 1u8..=4).prop_map(|(pick, units)| Op::Read { pick, units }),
        1 => Just(Op::Flush),
        1 => (0u8..ZONES).prop_map(|zone| Op::Reset { zone }),
        1 => (0u8..ZONES).prop_map(|zone| Op::Finish { zone }),
    ]
}
