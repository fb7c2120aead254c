//! Superblock bookkeeping, per-unit validity, SLC write pointers and the
//! regular-flash pool that zone regions are reserved from.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};
use crate::events::UnitOwner;
use crate::geometry::{Layout, LinearAddr, Ppa, Region};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SuperblockState {
    Free,
    Open,
    Full,
    Migrating,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Superblock {
    pub id: u32,
    pub region: Region,
    /// Set for SLC superblocks only.
    pub owner_namespace: Option<u32>,
    pub state: SuperblockState,
    pub valid_page_count: u64,
    pub erase_count: u64,
}

/// Regular-flash blocks reserved for one zone. Programming units are striped
/// across `blocks` in order, one block per step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZoneRegion {
    /// (chip index, block) pairs on distinct chips.
    pub blocks: Vec<(u32, u32)>,
    program_units: u32,
    units_per_block: u32,
}

impl ZoneRegion {
    pub fn capacity_units(&self) -> u64 {
        self.blocks.len() as u64 * self.units_per_block as u64
    }

    /// Physical location of the unit at `offset` units into the zone; a pure
    /// function of the reserved blocks and the stripe walk.
    pub fn ppa_from_zone_offset(&self, layout: &Layout, offset: u64) -> SimResult<Ppa> {
        if offset >= self.capacity_units() {
            return Err(SimError::AddressOutOfRange);
        }
        let pu = self.program_units as u64;
        let step = offset / pu;
        let k = self.blocks.len() as u64;
        let (chip, block) = self.blocks[(step % k) as usize];
        let page = (step / k) * pu + offset % pu;
        Ok(layout.ppa_on_chip(chip, block, page as u32))
    }

    pub fn linear(&self, layout: &Layout, offset: u64) -> SimResult<LinearAddr> {
        Ok(layout.linear(&self.ppa_from_zone_offset(layout, offset)?))
    }
}

/// An SLC partition: a fixed set of SLC superblocks owned by one namespace
/// with a single write pointer.
#[derive(Clone, Debug, PartialEq)]
pub struct SlcPartition {
    pub ns: u32,
    pub superblocks: Vec<u32>,
    free: VecDeque<u32>,
    open: Option<u32>,
    cursor: u64,
}

pub fn zone_capacity_units(layout: &Layout, blocks_per_zone: Option<u32>) -> u64 {
    blocks_per_zone.unwrap_or(layout.chips) as u64 * layout.regular_units_per_block as u64
}

pub fn zone_regions_available(layout: &Layout, blocks_per_zone: Option<u32>) -> u64 {
    let regular_sbs = (layout.superblocks - layout.slc_superblocks) as u64;
    match blocks_per_zone {
        None => regular_sbs,
        Some(k) => regular_sbs * layout.chips as u64 / k as u64,
    }
}

/// Physical state of the whole flash complex.
pub struct FlashSpace {
    layout: Layout,
    owner: Vec<Option<UnitOwner>>,
    valid: Vec<bool>,
    block_valid: Vec<u32>,
    superblocks: Vec<Superblock>,
    regular_free: VecDeque<u32>,
    sub_block_free: Vec<VecDeque<u32>>,
    blocks_per_zone: Option<u32>,
    rr_chip: u32,
    partitions: Vec<Option<SlcPartition>>,
    next_slc: u32,
}

impl FlashSpace {
    /// `blocks_per_zone = Some(k)` selects sub-block mode with `k` blocks per
    /// zone on distinct chips; `None` reserves whole superblocks.
    pub fn new(layout: Layout, blocks_per_zone: Option<u32>) -> SimResult<Self> {
        if let Some(k) = blocks_per_zone {
            if k == 0 || k > layout.chips {
                return Err(SimError::config("blocks_per_zone must be in 1..=total chips"));
            }
        }
        let total = layout.total_units() as usize;
        let superblocks = (0..layout.superblocks)
            .map(|id| Superblock {
                id,
                region: layout.region_of_block(id),
                owner_namespace: None,
                state: SuperblockState::Free,
                valid_page_count: 0,
                erase_count: 0,
            })
            .collect();
        let regular: VecDeque<u32> = (layout.slc_superblocks..layout.superblocks).collect();
        let sub_block_free = match blocks_per_zone {
            Some(_) => (0..layout.chips).map(|_| regular.clone()).collect(),
            None => Vec::new(),
        };
        Ok(FlashSpace {
            owner: vec![None; total],
            valid: vec![false; total],
            block_valid: vec![0; (layout.chips * layout.superblocks) as usize],
            superblocks,
            regular_free: if blocks_per_zone.is_some() { VecDeque::new() } else { regular },
            sub_block_free,
            blocks_per_zone,
            rr_chip: 0,
            partitions: Vec::new(),
            next_slc: 0,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn superblock(&self, id: u32) -> &Superblock {
        &self.superblocks[id as usize]
    }

    pub fn superblocks(&self) -> &[Superblock] {
        &self.superblocks
    }

    /// Units of one zone region.
    pub fn zone_capacity_units(&self) -> u64 {
        zone_capacity_units(&self.layout, self.blocks_per_zone)
    }

    /// Zones that fit in the regular pool.
    pub fn zone_regions_available(&self) -> u64 {
        zone_regions_available(&self.layout, self.blocks_per_zone)
    }

    /// Hands the next `count` SLC superblocks to `ns`.
    pub fn assign_slc_partition(&mut self, ns: u32, count: u32) -> SimResult<()> {
        if self.next_slc + count > self.layout.slc_superblocks {
            return Err(SimError::config("SLC partitions exceed the SLC superblocks of the device"));
        }
        let ids: Vec<u32> = (self.next_slc..self.next_slc + count).collect();
        self.next_slc += count;
        for &id in &ids {
            self.superblocks[id as usize].owner_namespace = Some(ns);
        }
        if self.partitions.len() <= ns as usize {
            self.partitions.resize(ns as usize + 1, None);
        }
        self.partitions[ns as usize] = Some(SlcPartition {
            ns,
            free: ids.iter().copied().collect(),
            superblocks: ids,
            open: None,
            cursor: 0,
        });
        Ok(())
    }

    pub fn partition(&self, ns: u32) -> Option<&SlcPartition> {
        self.partitions.get(ns as usize).and_then(|p| p.as_ref())
    }

    fn partition_mut(&mut self, ns: u32) -> SimResult<&mut SlcPartition> {
        self.partitions
            .get_mut(ns as usize)
            .and_then(|p| p.as_mut())
            .ok_or(SimError::OutOfSpace("slc"))
    }

    pub fn free_slc_superblocks(&self, ns: u32) -> u32 {
        self.partition(ns).map_or(0, |p| p.free.len() as u32)
    }

    pub fn migrating_slc_superblocks(&self, ns: u32) -> u32 {
        self.partition(ns).map_or(0, |p| {
            p.superblocks
                .iter()
                .filter(|&&id| self.superblocks[id as usize].state == SuperblockState::Migrating)
                .count() as u32
        })
    }

    /// Units the partition can still hand out without reclaiming.
    pub fn slc_available_units(&self, ns: u32) -> u64 {
        let Some(p) = self.partition(ns) else { return 0 };
        let open = p.open.map_or(0, |sb| self.layout.superblock_units(sb) - p.cursor);
        open + p.free.iter().map(|&sb| self.layout.superblock_units(sb)).sum::<u64>()
    }

    /// Next `n` units at the partition's write pointer, striped across chips
    /// and rebinding to the next free superblock at the end of the current one.
    pub fn allocate_slc_stripe(&mut self, ns: u32, n: u64) -> SimResult<Vec<LinearAddr>> {
        if self.slc_available_units(ns) < n {
            return Err(SimError::OutOfSpace("slc"));
        }
        let mut out = Vec::with_capacity(n as usize);
        while (out.len() as u64) < n {
            let layout = &self.layout;
            let p = self.partitions[ns as usize].as_mut().expect("checked above");
            let sb = match p.open {
                Some(sb) => sb,
                None => {
                    let sb = p.free.pop_front().expect("availability checked");
                    p.open = Some(sb);
                    p.cursor = 0;
                    self.superblocks[sb as usize].state = SuperblockState::Open;
                    sb
                }
            };
            let units = layout.superblock_units(sb);
            let base = layout.superblock_base(sb);
            let take = (units - p.cursor).min(n - out.len() as u64);
            out.extend((p.cursor..p.cursor + take).map(|o| LinearAddr(base + o)));
            p.cursor += take;
            if p.cursor == units {
                p.open = None;
                self.superblocks[sb as usize].state = SuperblockState::Full;
            }
        }
        Ok(out)
    }

    pub fn reserve_zone_region(&mut self) -> SimResult<ZoneRegion> {
        let pu = self.layout.program_units;
        let upb = self.layout.regular_units_per_block;
        match self.blocks_per_zone {
            None => {
                let sb = self.regular_free.pop_front().ok_or(SimError::OutOfSpace("regular"))?;
                self.superblocks[sb as usize].state = SuperblockState::Open;
                Ok(ZoneRegion {
                    blocks: (0..self.layout.chips).map(|c| (c, sb)).collect(),
                    program_units: pu,
                    units_per_block: upb,
                })
            }
            Some(k) => {
                let chips = self.layout.chips;
                let mut blocks = Vec::with_capacity(k as usize);
                for i in 0..chips {
                    if blocks.len() == k as usize {
                        break;
                    }
                    let c = (self.rr_chip + i) % chips;
                    if let Some(&b) = self.sub_block_free[c as usize].front() {
                        blocks.push((c, b));
                    }
                }
                if blocks.len() < k as usize {
                    return Err(SimError::OutOfSpace("regular"));
                }
                for &(c, _) in &blocks {
                    self.sub_block_free[c as usize].pop_front();
                }
                self.rr_chip = (blocks.last().expect("k >= 1").0 + 1) % chips;
                Ok(ZoneRegion { blocks, program_units: pu, units_per_block: upb })
            }
        }
    }

    /// Returns erased region blocks to the pool.
    pub fn release_zone_region(&mut self, region: &ZoneRegion) {
        match self.blocks_per_zone {
            None => {
                let sb = region.blocks[0].1;
                self.superblocks[sb as usize].state = SuperblockState::Free;
                self.superblocks[sb as usize].erase_count += 1;
                self.regular_free.push_back(sb);
            }
            Some(_) => {
                for &(c, b) in &region.blocks {
                    self.sub_block_free[c as usize].push_back(b);
                }
            }
        }
    }

    fn block_slot(&self, lin: LinearAddr) -> usize {
        let ppa = self.layout.ppa(lin);
        (self.layout.chip_index(ppa.channel, ppa.chip) * self.layout.superblocks + ppa.block) as usize
    }

    pub fn owner(&self, lin: LinearAddr) -> Option<UnitOwner> {
        self.owner[lin.0 as usize]
    }

    pub fn is_valid(&self, lin: LinearAddr) -> bool {
        self.valid[lin.0 as usize]
    }

    /// Marks an erased unit as written and valid.
    pub fn program(&mut self, lin: LinearAddr, owner: UnitOwner) {
        let i = lin.0 as usize;
        assert!(self.owner[i].is_none(), "unit {} programmed twice without erase", lin.0);
        self.owner[i] = Some(owner);
        self.valid[i] = true;
        let slot = self.block_slot(lin);
        self.block_valid[slot] += 1;
        let sb = self.layout.superblock_of(lin);
        self.superblocks[sb as usize].valid_page_count += 1;
    }

    pub fn invalidate(&mut self, lin: LinearAddr) {
        let i = lin.0 as usize;
        if !self.valid[i] {
            return;
        }
        self.valid[i] = false;
        let slot = self.block_slot(lin);
        self.block_valid[slot] -= 1;
        let sb = self.layout.superblock_of(lin);
        self.superblocks[sb as usize].valid_page_count -= 1;
    }

    pub fn block_valid_count(&self, chip_index: u32, block: u32) -> u32 {
        self.block_valid[(chip_index * self.layout.superblocks + block) as usize]
    }

    /// Clears every unit of a block. Valid data must already be gone.
    pub fn erase_block(&mut self, chip_index: u32, block: u32) {
        let lins: Vec<LinearAddr> = self.layout.block_units(chip_index, block).collect();
        for lin in lins {
            let i = lin.0 as usize;
            debug_assert!(!self.valid[i], "erasing a valid unit");
            if self.valid[i] {
                self.invalidate(lin);
            }
            self.owner[i] = None;
        }
    }

    /// Lowest-valid FULL superblock of the partition, ties to the lowest id.
    pub fn select_victim(&self, ns: u32) -> SimResult<u32> {
        let p = self.partition(ns).ok_or(SimError::NoVictim(ns))?;
        p.superblocks
            .iter()
            .map(|&id| &self.superblocks[id as usize])
            .filter(|sb| sb.state == SuperblockState::Full)
            .min_by_key(|sb| (sb.valid_page_count, sb.id))
            .map(|sb| sb.id)
            .ok_or(SimError::NoVictim(ns))
    }

    pub fn mark_migrating(&mut self, sb: u32) {
        debug_assert_eq!(self.superblocks[sb as usize].state, SuperblockState::Full);
        self.superblocks[sb as usize].state = SuperblockState::Migrating;
    }

    /// Erases an SLC superblock's units and returns it to its partition.
    pub fn release_slc(&mut self, sb: u32) {
        for chip in 0..self.layout.chips {
            self.erase_block(chip, sb);
        }
        let s = &mut self.superblocks[sb as usize];
        s.state = SuperblockState::Free;
        s.erase_count += 1;
        let ns = s.owner_namespace.expect("SLC superblock has an owner");
        if let Ok(p) = self.partition_mut(ns) {
            p.free.push_back(sb);
        }
    }

    /// Linear addresses of the valid units of a superblock, in walk order.
    pub fn valid_units(&self, sb: u32) -> Vec<LinearAddr> {
        let base = self.layout.superblock_base(sb);
        (base..base + self.layout.superblock_units(sb))
            .map(LinearAddr)
            .filter(|&l| self.valid[l.0 as usize])
            .collect()
    }
}
