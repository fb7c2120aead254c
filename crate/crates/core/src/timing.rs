//! Next-free-timestamp timing model for channels and chips, and the per-chip
//! command scheduler that lets host commands overtake queued background work.
//!
//! A READ occupies the chip for the sense latency and then the channel for the
//! transfer; a PROGRAM transfers first and then occupies the chip; an ERASE
//! only occupies the chip. All times are nanoseconds from 0.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{SimError, SimResult};
use crate::events::{Event, ProgramCause, UnitOwner};
use crate::geometry::{FlashGeometry, Layout, MediaProfile, Ppa, Region};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CommandKind {
    Read,
    Program,
    Erase,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Read => "READ",
            CommandKind::Program => "PROGRAM",
            CommandKind::Erase => "ERASE",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Origin {
    Host,
    Background,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Host => "HOST",
            Origin::Background => "BACKGROUND",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChipCommand {
    pub kind: CommandKind,
    pub origin: Origin,
    /// First unit touched; for an ERASE only channel, chip and block matter.
    pub target: Ppa,
    pub payload_bytes: u64,
    pub issue_time: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Occupation {
    pub start: u64,
    pub end: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scheduled {
    pub chip: Occupation,
    pub transfer: Option<Occupation>,
    pub completion: u64,
}

impl Scheduled {
    pub fn start(&self) -> u64 {
        match self.transfer {
            Some(t) => t.start.min(self.chip.start),
            None => self.chip.start,
        }
    }
}

/// Busy intervals of one channel. Transfers may fill idle gaps left by
/// reads whose data returns late; everything before `horizon` counts as busy.
#[derive(Clone, Debug, Default, PartialEq)]
struct ChannelTimeline {
    busy: VecDeque<(u64, u64)>,
    horizon: u64,
}

/// Intervals kept per channel before the oldest fold into the horizon.
const CHANNEL_WINDOW: usize = 256;

impl ChannelTimeline {
    fn last_end(&self) -> u64 {
        self.busy.back().map_or(self.horizon, |b| b.1)
    }

    /// Earliest start >= `at` with `len` idle nanoseconds, and its slot.
    fn find(&self, at: u64, len: u64) -> (u64, usize) {
        let mut t = at.max(self.horizon);
        for (i, &(s, e)) in self.busy.iter().enumerate() {
            if t + len <= s {
                return (t, i);
            }
            t = t.max(e);
        }
        (t, self.busy.len())
    }

    fn reserve(&mut self, at: u64, len: u64) -> u64 {
        let (t, i) = self.find(at, len);
        if len > 0 {
            self.busy.insert(i, (t, t + len));
            if self.busy.len() > CHANNEL_WINDOW {
                let (_, e) = self.busy.pop_front().expect("window is full");
                self.horizon = self.horizon.max(e);
            }
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParallelUnitClock {
    channels: u32,
    chips_per_channel: u32,
    bandwidth: u64,
    channel: Vec<ChannelTimeline>,
    chip_free: Vec<u64>,
}

impl ParallelUnitClock {
    pub fn new(geometry: &FlashGeometry) -> Self {
        ParallelUnitClock {
            channels: geometry.channels,
            chips_per_channel: geometry.chips_per_channel,
            bandwidth: geometry.channel_bandwidth,
            channel: vec![ChannelTimeline::default(); geometry.channels as usize],
            chip_free: vec![0; geometry.total_chips() as usize],
        }
    }

    /// End of the channel's last reserved transfer.
    pub fn channel_free(&self, channel: u32) -> u64 {
        self.channel[channel as usize].last_end()
    }

    pub fn chip_free(&self, channel: u32, chip: u32) -> u64 {
        self.chip_free[(chip * self.channels + channel) as usize]
    }

    /// Channel occupancy for a payload, rounded up to whole nanoseconds.
    pub fn transfer_ns(&self, bytes: u64) -> u64 {
        let num = bytes as u128 * 1_000_000_000u128;
        num.div_ceil(self.bandwidth as u128) as u64
    }

    /// Start of the first occupation `cmd` would get, without committing.
    pub fn preview_start(&self, cmd: &ChipCommand) -> u64 {
        let chip = self.chip_free[(cmd.target.chip * self.channels + cmd.target.channel) as usize];
        match cmd.kind {
            CommandKind::Program => {
                let len = self.transfer_ns(cmd.payload_bytes);
                self.channel[cmd.target.channel as usize].find(cmd.issue_time, len).0
            }
            CommandKind::Read | CommandKind::Erase => cmd.issue_time.max(chip),
        }
    }
}

/// Places `cmd` on the channel and chip timelines and advances both.
pub fn schedule_command(
    cmd: &ChipCommand,
    clocks: &mut ParallelUnitClock,
    profile: &MediaProfile,
) -> SimResult<Scheduled> {
    let t = &cmd.target;
    if t.channel >= clocks.channels || t.chip >= clocks.chips_per_channel {
        return Err(SimError::AddressOutOfRange);
    }
    let ch = t.channel as usize;
    let chip = (t.chip * clocks.channels + t.channel) as usize;
    let xfer = clocks.transfer_ns(cmd.payload_bytes);
    let s = match cmd.kind {
        CommandKind::Program => {
            let ts = clocks.channel[ch].reserve(cmd.issue_time, xfer);
            let te = ts + xfer;
            let cs = te.max(clocks.chip_free[chip]);
            let ce = cs + profile.program_latency_ns;
            clocks.chip_free[chip] = ce;
            Scheduled {
                chip: Occupation { start: cs, end: ce },
                transfer: Some(Occupation { start: ts, end: te }),
                completion: ce.max(te),
            }
        }
        CommandKind::Read => {
            let cs = cmd.issue_time.max(clocks.chip_free[chip]);
            let ce = cs + profile.read_latency_ns;
            let ts = clocks.channel[ch].reserve(ce, xfer);
            let te = ts + xfer;
            clocks.chip_free[chip] = ce;
            Scheduled {
                chip: Occupation { start: cs, end: ce },
                transfer: Some(Occupation { start: ts, end: te }),
                completion: te.max(ce),
            }
        }
        CommandKind::Erase => {
            let cs = cmd.issue_time.max(clocks.chip_free[chip]);
            let ce = cs + profile.erase_latency_ns;
            clocks.chip_free[chip] = ce;
            Scheduled { chip: Occupation { start: cs, end: ce }, transfer: None, completion: ce }
        }
    };
    Ok(s)
}

/// Accounting attached to a command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CommandMeta {
    pub ns: u32,
    /// Program bytes by cause; a combined fold carries both host and fold bytes.
    pub causes: Vec<(ProgramCause, u64)>,
    pub mapping_fetch: bool,
    pub placements: Vec<(Ppa, UnitOwner)>,
}

/// Byte and command counters for one namespace.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommandTotals {
    pub slc_program_bytes: u64,
    pub regular_program_bytes: u64,
    pub host_regular_bytes: u64,
    pub host_slc_bytes: u64,
    pub fold_bytes: u64,
    pub gc_bytes: u64,
    pub slc_read_bytes: u64,
    pub regular_read_bytes: u64,
    pub mapping_read_bytes: u64,
    pub mapping_reads: u64,
    pub slc_erases: u64,
    pub regular_erases: u64,
    pub slc_erase_bytes: u64,
    pub regular_erase_bytes: u64,
    pub regular_erases_by_gc: u64,
}

impl CommandTotals {
    pub fn device_program_bytes(&self) -> u64 {
        self.slc_program_bytes + self.regular_program_bytes
    }
}

enum BgItem<M> {
    Cmd(ChipCommand, CommandMeta),
    /// Later commands wait for everything queued before the barrier.
    Barrier,
    Marker(M),
}

/// Owns the clocks and the background queue. Host-path commands go straight
/// to the clocks; background commands are queued and dispatched lazily so a
/// later host command can overtake them at command boundaries.
pub struct CommandScheduler<M> {
    layout: Layout,
    clocks: ParallelUnitClock,
    slc: MediaProfile,
    regular: MediaProfile,
    preemptible: bool,
    queue: VecDeque<(u64, BgItem<M>)>,
    barrier_time: u64,
    bg_max_end: u64,
    totals: Vec<CommandTotals>,
    log: Option<Vec<Event>>,
    record_placements: bool,
}

impl<M> CommandScheduler<M> {
    pub fn new(
        geometry: &FlashGeometry,
        layout: Layout,
        slc: MediaProfile,
        regular: MediaProfile,
        preemptible: bool,
        namespaces: usize,
    ) -> Self {
        CommandScheduler {
            layout,
            clocks: ParallelUnitClock::new(geometry),
            slc,
            regular,
            preemptible,
            queue: VecDeque::new(),
            barrier_time: 0,
            bg_max_end: 0,
            totals: vec![CommandTotals::default(); namespaces],
            log: None,
            record_placements: false,
        }
    }

    pub fn enable_event_log(&mut self, record_placements: bool) {
        self.log.get_or_insert_with(Vec::new);
        self.record_placements = record_placements;
    }

    pub fn events(&self) -> &[Event] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn records_placements(&self) -> bool {
        self.log.is_some() && self.record_placements
    }

    pub fn clocks(&self) -> &ParallelUnitClock {
        &self.clocks
    }

    pub fn totals(&self, ns: u32) -> &CommandTotals {
        &self.totals[ns as usize]
    }

    pub fn preemptible(&self) -> bool {
        self.preemptible
    }

    pub fn has_pending_background(&self) -> bool {
        !self.queue.is_empty()
    }

    fn profile_for(&self, block: u32) -> &MediaProfile {
        match self.layout.region_of_block(block) {
            Region::Slc => &self.slc,
            Region::Regular => &self.regular,
        }
    }

    fn dispatch(&mut self, cmd: &ChipCommand, meta: CommandMeta) -> SimResult<Scheduled> {
        let profile = match self.layout.region_of_block(cmd.target.block) {
            Region::Slc => &self.slc,
            Region::Regular => &self.regular,
        };
        let profile = if meta.mapping_fetch { &self.slc } else { profile };
        let s = schedule_command(cmd, &mut self.clocks, profile)?;
        let region = self.layout.region_of_block(cmd.target.block);
        let t = &mut self.totals[meta.ns as usize];
        match cmd.kind {
            CommandKind::Read if meta.mapping_fetch => {
                t.mapping_reads += 1;
                t.mapping_read_bytes += cmd.payload_bytes;
            }
            CommandKind::Read => match region {
                Region::Slc => t.slc_read_bytes += cmd.payload_bytes,
                Region::Regular => t.regular_read_bytes += cmd.payload_bytes,
            },
            CommandKind::Program => {
                match region {
                    Region::Slc => t.slc_program_bytes += cmd.payload_bytes,
                    Region::Regular => t.regular_program_bytes += cmd.payload_bytes,
                }
                for &(cause, bytes) in &meta.causes {
                    match cause {
                        ProgramCause::HostRegular => t.host_regular_bytes += bytes,
                        ProgramCause::HostSlc => t.host_slc_bytes += bytes,
                        ProgramCause::Fold => t.fold_bytes += bytes,
                        ProgramCause::GcMigration => t.gc_bytes += bytes,
                    }
                }
            }
            CommandKind::Erase => {
                let bytes = self.layout.units_per_block(region) as u64 * crate::geometry::UNIT_BYTES;
                match region {
                    Region::Slc => {
                        t.slc_erases += 1;
                        t.slc_erase_bytes += bytes;
                    }
                    Region::Regular => {
                        t.regular_erases += 1;
                        t.regular_erase_bytes += bytes;
                        if cmd.origin == Origin::Background {
                            t.regular_erases_by_gc += 1;
                        }
                    }
                }
            }
        }
        if let Some(log) = self.log.as_mut() {
            log.push(Event {
                start: s.start(),
                end: s.completion,
                channel: cmd.target.channel,
                chip: cmd.target.chip,
                origin: cmd.origin,
                kind: cmd.kind,
                ppa: if meta.mapping_fetch { None } else { Some(cmd.target) },
                bytes: cmd.payload_bytes,
                ns: meta.ns,
                causes: meta.causes,
                chip_busy: s.chip,
                transfer: s.transfer,
                placements: if self.record_placements { meta.placements } else { Vec::new() },
            });
        }
        Ok(s)
    }

    /// Schedules a command immediately. Callers drain the background queue
    /// first (see [`CommandScheduler::drain_before`]).
    pub fn submit(&mut self, cmd: ChipCommand, meta: CommandMeta) -> SimResult<Scheduled> {
        if !self.layout.contains(&cmd.target) {
            return Err(SimError::AddressOutOfRange);
        }
        self.dispatch(&cmd, meta)
    }

    pub fn enqueue_background(&mut self, mut cmd: ChipCommand, meta: CommandMeta) -> SimResult<()> {
        if !self.layout.contains(&cmd.target) {
            return Err(SimError::AddressOutOfRange);
        }
        cmd.origin = Origin::Background;
        self.queue.push_back((cmd.issue_time, BgItem::Cmd(cmd, meta)));
        Ok(())
    }

    pub fn enqueue_barrier(&mut self) {
        self.queue.push_back((0, BgItem::Barrier));
    }

    pub fn enqueue_marker(&mut self, marker: M) {
        self.queue.push_back((0, BgItem::Marker(marker)));
    }

    /// Host-priority drain: dispatch queued background work that would start
    /// before `now`. In-flight commands finish; the rest waits behind the
    /// host command. Without preemption the whole queue goes first (FIFO).
    pub fn drain_before(&mut self, now: u64, markers: &mut Vec<M>) -> SimResult<()> {
        if self.preemptible {
            self.drain_inner(Some(now), markers)
        } else {
            self.drain_inner(None, markers)
        }
    }

    /// Same as [`CommandScheduler::drain_before`]; named after the chip-level
    /// operation it models.
    pub fn preempt_background(&mut self, now: u64, markers: &mut Vec<M>) -> SimResult<()> {
        self.drain_before(now, markers)
    }

    pub fn drain_all(&mut self, markers: &mut Vec<M>) -> SimResult<()> {
        self.drain_inner(None, markers)
    }

    fn drain_inner(&mut self, limit: Option<u64>, markers: &mut Vec<M>) -> SimResult<()> {
        while let Some((enq, item)) = self.queue.front() {
            match item {
                BgItem::Barrier => {
                    self.barrier_time = self.barrier_time.max(self.bg_max_end);
                    self.queue.pop_front();
                }
                BgItem::Marker(_) => {
                    if let Some((_, BgItem::Marker(m))) = self.queue.pop_front() {
                        markers.push(m);
                    }
                }
                BgItem::Cmd(cmd, _) => {
                    let ready = (*enq).max(self.barrier_time);
                    let mut probe = cmd.clone();
                    probe.issue_time = ready;
                    if let Some(limit) = limit {
                        if self.clocks.preview_start(&probe) >= limit {
                            break;
                        }
                    }
                    if let Some((_, BgItem::Cmd(mut cmd, meta))) = self.queue.pop_front() {
                        cmd.issue_time = ready;
                        let s = self.dispatch(&cmd, meta)?;
                        self.bg_max_end = self.bg_max_end.max(s.completion);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn media_read_latency(&self, block: u32) -> u64 {
        self.profile_for(block).read_latency_ns
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo() -> FlashGeometry {
        FlashGeometry {
            channels: 2,
            chips_per_channel: 2,
            blocks_per_chip: 8,
            pages_per_block: 12,
            page_size: 16 * 1024,
            channel_bandwidth: 3200 * 1024 * 1024,
            slc_blocks_per_chip: 2,
        }
    }

    fn cmd(kind: CommandKind, block: u32, bytes: u64, at: u64) -> ChipCommand {
        ChipCommand {
            kind,
            origin: Origin::Host,
            target: Ppa { channel: 0, chip: 0, block, page: 0 },
            payload_bytes: bytes,
            issue_time: at,
        }
    }

    #[test]
    fn tlc_program_is_transfer_then_937_5_us() {
        let mut clocks = ParallelUnitClock::new(&geo());
        let s = schedule_command(&cmd(CommandKind::Program, 4, 48 * 1024, 0), &mut clocks, &MediaProfile::tlc())
            .unwrap();
        // 49152 B at 3200 MiB/s = 14648.4375 ns, rounded up.
        assert_eq!(s.transfer.unwrap().end, 14_649);
        assert_eq!(s.completion, 14_649 + 937_500);
    }

    #[test]
    fn slc_read_is_sense_then_transfer() {
        let mut clocks = ParallelUnitClock::new(&geo());
        let s = schedule_command(&cmd(CommandKind::Read, 0, 16 * 1024, 0), &mut clocks, &MediaProfile::slc())
            .unwrap();
        assert_eq!(s.chip, Occupation { start: 0, end: 20_000 });
        // 16384 B at 3200 MiB/s = 4882.8125 ns.
        assert_eq!(s.completion, 20_000 + 4_883);
    }

    #[test]
    fn busy_chip_defers_second_program() {
        let mut clocks = ParallelUnitClock::new(&geo());
        let tlc = MediaProfile::tlc();
        let a = schedule_command(&cmd(CommandKind::Program, 4, 48 * 1024, 0), &mut clocks, &tlc).unwrap();
        let b = schedule_command(&cmd(CommandKind::Program, 4, 48 * 1024, 0), &mut clocks, &tlc).unwrap();
        assert_eq!(b.chip.start, a.chip.end);
        assert_eq!(b.transfer.unwrap().start, a.transfer.unwrap().end);
    }

    #[test]
    fn out_of_range_command_is_rejected() {
        let mut clocks = ParallelUnitClock::new(&geo());
        let mut c = cmd(CommandKind::Read, 0, 4096, 0);
        c.target.channel = 5;
        assert_eq!(
            schedule_command(&c, &mut clocks, &MediaProfile::slc()),
            Err(SimError::AddressOutOfRange)
        );
    }

    fn sched(preemptible: bool) -> CommandScheduler<u32> {
        let g = geo();
        let layout = Layout::new(&g, &MediaProfile::slc(), &MediaProfile::tlc()).unwrap();
        let mut s = CommandScheduler::new(&g, layout, MediaProfile::slc(), MediaProfile::tlc(), preemptible, 1);
        s.enable_event_log(false);
        s
    }

    fn read_at(block: u32, page: u32, at: u64, origin: Origin) -> ChipCommand {
        ChipCommand {
            kind: CommandKind::Read,
            origin,
            target: Ppa { channel: 0, chip: 0, block, page },
            payload_bytes: 4096,
            issue_time: at,
        }
    }

    fn order(s: &CommandScheduler<u32>) -> Vec<(u32, u32)> {
        s.events().iter().map(|e| (e.ppa.unwrap().block, e.ppa.unwrap().page)).collect()
    }

    #[test]
    fn host_read_overtakes_queued_migration_pages() {
        let mut s = sched(true);
        for page in 0..16u32 {
            s.enqueue_background(read_at(0, page, 0, Origin::Background), CommandMeta::default()).unwrap();
        }
        // Arrives while background page 4 is on the chip (20 us per read).
        let host_at = 4 * 20_000 + 5_000;
        let mut m = Vec::new();
        s.drain_before(host_at, &mut m).unwrap();
        let host = s.submit(read_at(1, 0, host_at, Origin::Host), CommandMeta::default()).unwrap();
        s.drain_all(&mut m).unwrap();
        let mut expected: Vec<(u32, u32)> = (0..5).map(|p| (0, p)).collect();
        expected.push((1, 0));
        expected.extend((5..16).map(|p| (0, p)));
        assert_eq!(order(&s), expected);
        assert_eq!(s.events()[5].origin, Origin::Host);
        assert_eq!(host.chip.start, 5 * 20_000);
    }

    #[test]
    fn two_host_commands_keep_arrival_order_ahead_of_background() {
        let mut s = sched(true);
        for page in 0..8u32 {
            s.enqueue_background(read_at(0, page, 0, Origin::Background), CommandMeta::default()).unwrap();
        }
        let mut m = Vec::new();
        s.drain_before(30_000, &mut m).unwrap();
        s.submit(read_at(1, 0, 30_000, Origin::Host), CommandMeta::default()).unwrap();
        s.drain_before(31_000, &mut m).unwrap();
        s.submit(read_at(1, 1, 31_000, Origin::Host), CommandMeta::default()).unwrap();
        s.drain_all(&mut m).unwrap();
        let mut expected = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        expected.extend((2..8).map(|p| (0, p)));
        assert_eq!(order(&s), expected);
    }

    #[test]
    fn without_preemption_queue_is_fifo() {
        let mut s = sched(false);
        for page in 0..4u32 {
            s.enqueue_background(read_at(0, page, 0, Origin::Background), CommandMeta::default()).unwrap();
        }
        let mut m = Vec::new();
        s.drain_before(10, &mut m).unwrap();
        s.submit(read_at(1, 0, 10, Origin::Host), CommandMeta::default()).unwrap();
        assert_eq!(order(&s), vec![(0, 0), (0, 1), (0, 2), (0, 3), (1, 0)]);
    }

    #[test]
    fn empty_queue_leaves_host_order_unchanged() {
        let mut s = sched(true);
        let mut m = Vec::new();
        s.drain_before(0, &mut m).unwrap();
        let a = s.submit(read_at(1, 0, 0, Origin::Host), CommandMeta::default()).unwrap();
        assert_eq!(a.chip.start, 0);
        assert!(m.is_empty());
    }

    #[test]
    fn barrier_orders_dependent_background_commands() {
        let mut s = sched(true);
        s.enqueue_background(read_at(0, 0, 0, Origin::Background), CommandMeta::default()).unwrap();
        s.enqueue_barrier();
        let mut prog = read_at(0, 0, 0, Origin::Background);
        prog.kind = CommandKind::Program;
        prog.target.channel = 1;
        prog.target.block = 4;
        s.enqueue_background(prog, CommandMeta::default()).unwrap();
        s.enqueue_marker(7);
        let mut m = Vec::new();
        s.drain_all(&mut m).unwrap();
        let ev = s.events();
        assert!(ev[1].start >= ev[0].end);
        assert_eq!(m, vec![7]);
    }
}
