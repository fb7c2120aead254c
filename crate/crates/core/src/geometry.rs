//! Flash complex description: channels, chips, blocks and pages, the media
//! profiles that drive latency, and the physical address linearization used
//! everywhere else in the simulator.
//!
//! The simulator maps host data in 4 KiB units. A flash page holds
//! `page_size / 4096` of them, and [`Ppa::page`] counts units, not flash pages.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};

/// Size of one mapping unit (the host logical page).
pub const UNIT_BYTES: u64 = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CellKind {
    Slc,
    Tlc,
    Qlc,
}

impl CellKind {
    pub fn bits_per_cell(self) -> u32 {
        match self {
            CellKind::Slc => 1,
            CellKind::Tlc => 3,
            CellKind::Qlc => 4,
        }
    }
}

/// Latency and programming constraints of one cell mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediaProfile {
    pub cell_kind: CellKind,
    pub bits_per_cell: u32,
    /// Time to program one programming unit.
    pub program_latency_ns: u64,
    /// Time to sense one page.
    pub read_latency_ns: u64,
    pub erase_latency_ns: u64,
    pub partial_program_allowed: bool,
    /// Flash pages one chip programs together (bits per cell times planes).
    pub min_program_pages: u32,
}

impl MediaProfile {
    pub fn slc() -> Self {
        MediaProfile {
            cell_kind: CellKind::Slc,
            bits_per_cell: 1,
            program_latency_ns: 75_000,
            read_latency_ns: 20_000,
            erase_latency_ns: 3_000_000,
            partial_program_allowed: true,
            min_program_pages: 1,
        }
    }

    pub fn tlc() -> Self {
        MediaProfile {
            cell_kind: CellKind::Tlc,
            bits_per_cell: 3,
            program_latency_ns: 937_500,
            read_latency_ns: 32_000,
            erase_latency_ns: 3_000_000,
            partial_program_allowed: false,
            min_program_pages: 3,
        }
    }

    pub fn qlc() -> Self {
        MediaProfile {
            cell_kind: CellKind::Qlc,
            bits_per_cell: 4,
            program_latency_ns: 6_400_000,
            read_latency_ns: 85_000,
            erase_latency_ns: 3_000_000,
            partial_program_allowed: false,
            min_program_pages: 4,
        }
    }

    pub fn for_kind(kind: CellKind) -> Self {
        match kind {
            CellKind::Slc => Self::slc(),
            CellKind::Tlc => Self::tlc(),
            CellKind::Qlc => Self::qlc(),
        }
    }

    pub fn validate(&self) -> SimResult<()> {
        if self.bits_per_cell != self.cell_kind.bits_per_cell() {
            return Err(SimError::config(format!(
                "{:?} profile must have bits_per_cell = {}",
                self.cell_kind,
                self.cell_kind.bits_per_cell()
            )));
        }
        if self.cell_kind == CellKind::Slc {
            if !self.partial_program_allowed || self.min_program_pages != 1 {
                return Err(SimError::config(
                    "SLC profile must allow partial programming with min_program_pages = 1",
                ));
            }
        } else {
            if self.partial_program_allowed {
                return Err(SimError::config("only SLC media allows partial programming"));
            }
            // Plane parallelism is folded in as a multiple of bits_per_cell.
            if self.min_program_pages == 0 || !self.min_program_pages.is_multiple_of(self.bits_per_cell) {
                return Err(SimError::config(format!(
                    "min_program_pages ({}) must be a positive multiple of bits_per_cell ({})",
                    self.min_program_pages, self.bits_per_cell
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlashGeometry {
    pub channels: u32,
    pub chips_per_channel: u32,
    pub blocks_per_chip: u32,
    /// Pages per block in regular-density mode.
    pub pages_per_block: u32,
    pub page_size: u64,
    /// Bytes per second.
    pub channel_bandwidth: u64,
    /// The first `slc_blocks_per_chip` blocks of every chip run in SLC mode.
    pub slc_blocks_per_chip: u32,
}

impl FlashGeometry {
    pub fn total_chips(&self) -> u32 {
        self.channels * self.chips_per_channel
    }

    /// One superblock per block offset.
    pub fn superblock_count(&self) -> u32 {
        self.blocks_per_chip
    }

    pub fn validate(&self) -> SimResult<()> {
        if self.channels == 0
            || self.chips_per_channel == 0
            || self.blocks_per_chip == 0
            || self.pages_per_block == 0
            || self.channel_bandwidth == 0
        {
            return Err(SimError::config("geometry counts must all be >= 1"));
        }
        if self.page_size < UNIT_BYTES || !self.page_size.is_multiple_of(UNIT_BYTES) {
            return Err(SimError::config("page_size must be a multiple of 4096 and >= 4096"));
        }
        if self.slc_blocks_per_chip >= self.blocks_per_chip {
            return Err(SimError::config("slc_blocks_per_chip must be < blocks_per_chip"));
        }
        Ok(())
    }
}

/// Pages per block once a profile is applied. SLC-mode blocks are converted
/// regular blocks and lose capacity by the regular media's bits per cell.
pub fn effective_pages(profile: &MediaProfile, regular: &MediaProfile, geometry: &FlashGeometry) -> u32 {
    if profile.cell_kind == CellKind::Slc && regular.bits_per_cell > 1 {
        geometry.pages_per_block / regular.bits_per_cell
    } else {
        geometry.pages_per_block
    }
}

/// Per-chip programming granularity in bytes.
pub fn program_unit_bytes(geometry: &FlashGeometry, profile: &MediaProfile) -> u64 {
    geometry.page_size * profile.min_program_pages as u64
}

/// Bytes programmed at once across every block of a superblock.
pub fn stripe_unit_bytes(geometry: &FlashGeometry, profile: &MediaProfile) -> u64 {
    program_unit_bytes(geometry, profile) * geometry.total_chips() as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Region {
    Slc,
    Regular,
}

/// Physical address of one 4 KiB unit: `page` indexes units inside the block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ppa {
    pub channel: u32,
    pub chip: u32,
    pub block: u32,
    pub page: u32,
}

impl fmt::Display for Ppa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.channel, self.chip, self.block, self.page)
    }
}

/// Position of a unit in the device-wide linear order (see [`Layout`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinearAddr(pub u64);

/// Derived sizes of a validated geometry plus the address linearization.
///
/// Chips are numbered `chip * channels + channel` so that consecutive chip
/// numbers alternate channels. The linear order is superblock-major; inside a
/// superblock it follows the write pointer: SLC superblocks stripe single
/// units across chips, regular superblocks stripe whole programming units.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub channels: u32,
    pub chips_per_channel: u32,
    pub chips: u32,
    pub slc_superblocks: u32,
    pub superblocks: u32,
    pub units_per_flash_page: u32,
    pub slc_units_per_block: u32,
    pub regular_units_per_block: u32,
    /// Units in one regular programming unit.
    pub program_units: u32,
    pub page_size: u64,
}

impl Layout {
    pub fn new(geometry: &FlashGeometry, slc: &MediaProfile, regular: &MediaProfile) -> SimResult<Self> {
        geometry.validate()?;
        slc.validate()?;
        regular.validate()?;
        if slc.cell_kind != CellKind::Slc {
            return Err(SimError::config("the SLC-mode profile must have cell_kind SLC"));
        }
        if regular.cell_kind == CellKind::Slc {
            return Err(SimError::config("the regular profile must be TLC or QLC"));
        }
        if !geometry.pages_per_block.is_multiple_of(regular.min_program_pages) {
            return Err(SimError::config(format!(
                "pages_per_block ({}) must be a multiple of min_program_pages ({})",
                geometry.pages_per_block, regular.min_program_pages
            )));
        }
        let slc_pages = effective_pages(slc, regular, geometry);
        if slc_pages == 0 || !geometry.pages_per_block.is_multiple_of(regular.bits_per_cell) {
            return Err(SimError::config("pages_per_block must be a multiple of bits_per_cell"));
        }
        let upp = (geometry.page_size / UNIT_BYTES) as u32;
        Ok(Layout {
            channels: geometry.channels,
            chips_per_channel: geometry.chips_per_channel,
            chips: geometry.total_chips(),
            slc_superblocks: geometry.slc_blocks_per_chip,
            superblocks: geometry.blocks_per_chip,
            units_per_flash_page: upp,
            slc_units_per_block: slc_pages * upp,
            regular_units_per_block: geometry.pages_per_block * upp,
            program_units: regular.min_program_pages * upp,
            page_size: geometry.page_size,
        })
    }

    pub fn region_of_block(&self, block: u32) -> Region {
        if block < self.slc_superblocks {
            Region::Slc
        } else {
            Region::Regular
        }
    }

    pub fn units_per_block(&self, region: Region) -> u32 {
        match region {
            Region::Slc => self.slc_units_per_block,
            Region::Regular => self.regular_units_per_block,
        }
    }

    pub fn superblock_units(&self, sb: u32) -> u64 {
        self.units_per_block(self.region_of_block(sb)) as u64 * self.chips as u64
    }

    pub fn superblock_base(&self, sb: u32) -> u64 {
        let slc_sb = self.slc_units_per_block as u64 * self.chips as u64;
        let reg_sb = self.regular_units_per_block as u64 * self.chips as u64;
        if sb < self.slc_superblocks {
            sb as u64 * slc_sb
        } else {
            self.slc_superblocks as u64 * slc_sb + (sb - self.slc_superblocks) as u64 * reg_sb
        }
    }

    pub fn total_units(&self) -> u64 {
        self.superblock_base(self.superblocks)
    }

    pub fn chip_index(&self, channel: u32, chip: u32) -> u32 {
        chip * self.channels + channel
    }

    /// (channel, chip-in-channel) of a linear chip number.
    pub fn chip_coords(&self, chip_index: u32) -> (u32, u32) {
        (chip_index % self.channels, chip_index / self.channels)
    }

    pub fn contains(&self, ppa: &Ppa) -> bool {
        ppa.channel < self.channels
            && ppa.chip < self.chips_per_channel
            && ppa.block < self.superblocks
            && ppa.page < self.units_per_block(self.region_of_block(ppa.block))
    }

    /// Offset of a unit inside its superblock following the write-pointer walk.
    fn walk_offset(&self, region: Region, chip: u32, unit_in_block: u32) -> u64 {
        let chips = self.chips as u64;
        match region {
            Region::Slc => unit_in_block as u64 * chips + chip as u64,
            Region::Regular => {
                let pu = self.program_units as u64;
                let row = unit_in_block as u64 / pu;
                (row * chips + chip as u64) * pu + unit_in_block as u64 % pu
            }
        }
    }

    /// Inverse of [`Layout::walk_offset`]: (chip index, unit in block).
    pub fn walk_position(&self, region: Region, offset: u64) -> (u32, u32) {
        let chips = self.chips as u64;
        match region {
            Region::Slc => ((offset % chips) as u32, (offset / chips) as u32),
            Region::Regular => {
                let pu = self.program_units as u64;
                let step = offset / pu;
                let chip = step % chips;
                let row = step / chips;
                (chip as u32, (row * pu + offset % pu) as u32)
            }
        }
    }

    pub fn linear(&self, ppa: &Ppa) -> LinearAddr {
        let region = self.region_of_block(ppa.block);
        let chip = self.chip_index(ppa.channel, ppa.chip);
        LinearAddr(self.superblock_base(ppa.block) + self.walk_offset(region, chip, ppa.page))
    }

    pub fn ppa(&self, lin: LinearAddr) -> Ppa {
        let sb = self.superblock_of(lin);
        let off = lin.0 - self.superblock_base(sb);
        let (chip, page) = self.walk_position(self.region_of_block(sb), off);
        self.ppa_on_chip(chip, sb, page)
    }

    pub fn ppa_on_chip(&self, chip_index: u32, block: u32, page: u32) -> Ppa {
        let (channel, chip) = self.chip_coords(chip_index);
        Ppa { channel, chip, block, page }
    }

    pub fn superblock_of(&self, lin: LinearAddr) -> u32 {
        let slc_total = self.superblock_base(self.slc_superblocks);
        if lin.0 < slc_total {
            (lin.0 / (self.slc_units_per_block as u64 * self.chips as u64)) as u32
        } else {
            let reg_sb = self.regular_units_per_block as u64 * self.chips as u64;
            self.slc_superblocks + ((lin.0 - slc_total) / reg_sb) as u32
        }
    }

    /// Flash page (in page-size units) holding a unit.
    pub fn flash_page(&self, ppa: &Ppa) -> u32 {
        ppa.page / self.units_per_flash_page
    }

    /// Linear addresses of every unit in one physical block.
    pub fn block_units(&self, chip_index: u32, block: u32) -> impl Iterator<Item = LinearAddr> + '_ {
        let region = self.region_of_block(block);
        let n = self.units_per_block(region);
        (0..n).map(move |page| self.linear(&self.ppa_on_chip(chip_index, block, page)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo(pages: u32) -> FlashGeometry {
        FlashGeometry {
            channels: 2,
            chips_per_channel: 2,
            blocks_per_chip: 8,
            pages_per_block: pages,
            page_size: 16 * 1024,
            channel_bandwidth: 3200 * 1024 * 1024,
            slc_blocks_per_chip: 2,
        }
    }

    #[test]
    fn effective_pages_divides_by_bits_per_cell() {
        let g = geo(768);
        let tlc = MediaProfile::tlc();
        assert_eq!(effective_pages(&MediaProfile::slc(), &tlc, &g), 256);
        assert_eq!(effective_pages(&tlc, &tlc, &g), 768);
        let g = geo(1024);
        assert_eq!(effective_pages(&MediaProfile::slc(), &MediaProfile::qlc(), &g), 256);
    }

    #[test]
    fn stripe_and_program_unit_sizes() {
        let g = geo(768);
        let tlc = MediaProfile::tlc();
        assert_eq!(stripe_unit_bytes(&g, &tlc), 192 * 1024);
        assert_eq!(program_unit_bytes(&g, &tlc), 48 * 1024);
        let slc = MediaProfile::slc();
        assert_eq!(stripe_unit_bytes(&g, &slc), 64 * 1024);
        assert_eq!(program_unit_bytes(&g, &slc), 16 * 1024);
        let two_plane = MediaProfile { min_program_pages: 6, ..MediaProfile::tlc() };
        assert_eq!(program_unit_bytes(&g, &two_plane), 96 * 1024);
    }

    #[test]
    fn profile_invariants() {
        assert!(MediaProfile::slc().validate().is_ok());
        assert!(MediaProfile::tlc().validate().is_ok());
        assert!(MediaProfile::qlc().validate().is_ok());
        let bad = MediaProfile { min_program_pages: 4, ..MediaProfile::tlc() };
        assert!(bad.validate().is_err());
        let bad = MediaProfile { partial_program_allowed: false, ..MediaProfile::slc() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn geometry_rejects_bad_values() {
        let mut g = geo(12);
        g.page_size = 6000;
        assert!(g.validate().is_err());
        let mut g = geo(12);
        g.slc_blocks_per_chip = 8;
        assert!(g.validate().is_err());
        let mut g = geo(12);
        g.channels = 0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn linearization_is_a_bijection() {
        let g = geo(12);
        let layout = Layout::new(&g, &MediaProfile::slc(), &MediaProfile::tlc()).unwrap();
        let total = layout.total_units();
        let mut seen = vec![false; total as usize];
        for lin in 0..total {
            let ppa = layout.ppa(LinearAddr(lin));
            assert!(layout.contains(&ppa));
            assert_eq!(layout.linear(&ppa), LinearAddr(lin));
            assert!(!seen[lin as usize]);
            seen[lin as usize] = true;
        }
    }

    #[test]
    fn slc_walk_stripes_units_across_chips() {
        let g = geo(12);
        let layout = Layout::new(&g, &MediaProfile::slc(), &MediaProfile::tlc()).unwrap();
        let first: Vec<Ppa> = (0..4).map(|i| layout.ppa(LinearAddr(i))).collect();
        for (i, p) in first.iter().enumerate() {
            assert_eq!(layout.chip_index(p.channel, p.chip), i as u32);
            assert_eq!((p.block, p.page), (0, 0));
        }
    }
}
