//! Page mapping with coherence metadata, hardware calendars, and the data
//! movement and commit primitives built on them.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::isa::{InstrId, PageId};
use crate::resources::ResourceKind;
use crate::topology::{energy_per_kib, transfer_time, FlashAddress, Nanos, Picojoules};

use super::ledger::{Category, EnergyLedger, EventKind, LogEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Owner {
    Flash,
    Dram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PageState {
    Clean,
    Dirty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Location {
    Flash(FlashAddress),
    Dram(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyncTrigger {
    CrossResource,
    HostTransfer,
    Eviction,
    GarbageCollection,
    PowerCycle,
    VersionWrap,
}

/// Multi-wordline sensing placement rule for an in-flash AND or OR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mws {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct L2PEntry {
    pub lpa: PageId,
    /// Flash home; for a buffered page, the plane whose page buffer holds it.
    pub flash: FlashAddress,
    /// The flash copy sits in a page buffer and has not been programmed.
    pub buffered: bool,
    pub dram_row: Option<u64>,
    pub owner: Owner,
    pub state: PageState,
    pub version: u8,
    /// Mapping entry cached in DRAM (otherwise a lookup reads flash).
    pub mapping_cached: bool,
}

impl L2PEntry {
    pub fn location(&self) -> Location {
        match (self.owner, self.dram_row) {
            (Owner::Dram, Some(row)) => Location::Dram(row),
            _ => Location::Flash(self.flash),
        }
    }

    /// DRAM holds the current contents.
    pub fn dram_valid(&self) -> bool {
        self.dram_row.is_some() && (self.owner == Owner::Dram || self.state == PageState::Clean)
    }
}

/// Deterministic page hash for mapping-cache residency.
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn mapping_cached(page: PageId, fraction: f64) -> bool {
    if fraction >= 1.0 {
        return true;
    }
    (splitmix(page) % 1_000_000) as f64 / 1_000_000.0 < fraction
}

fn reserve(slot: &mut Nanos, at: Nanos, dur: Nanos) -> Nanos {
    let start = (*slot).max(at);
    *slot = start + dur;
    start + dur
}

/// Bytes moved per ingress path inside a sliding window.
#[derive(Debug, Clone, Default)]
pub struct BandwidthTracker {
    window: Nanos,
    /// channel, bus, core fetch
    paths: [VecDeque<(Nanos, u64)>; 3],
    sums: [u64; 3],
}

pub const PATH_CHANNEL: usize = 0;
pub const PATH_BUS: usize = 1;
pub const PATH_CORE: usize = 2;

impl BandwidthTracker {
    pub fn new(window: Nanos) -> Self {
        Self { window, ..Default::default() }
    }

    pub fn record(&mut self, path: usize, at: Nanos, bytes: u64) {
        self.paths[path].push_back((at, bytes));
        self.sums[path] += bytes;
    }

    fn prune(&mut self, now: Nanos) {
        let cutoff = now.saturating_sub(self.window);
        for p in 0..3 {
            while let Some(&(t, b)) = self.paths[p].front() {
                if t >= cutoff {
                    break;
                }
                self.paths[p].pop_front();
                self.sums[p] -= b;
            }
        }
    }

    /// Utilization per resource (indexed by `ResourceKind::index`).
    pub fn utilization(&mut self, now: Nanos, cfg: &SimConfig) -> [f64; 3] {
        self.prune(now);
        let secs = self.window as f64 / 1e9;
        let ch_peak = cfg.topology.channel_bandwidth as f64 * cfg.topology.channels as f64 * secs;
        let bus_peak = cfg.dram.bus_bandwidth as f64 * secs;
        let mut u = [0.0; 3];
        u[ResourceKind::Ifp.index()] = self.sums[PATH_CHANNEL] as f64 / ch_peak;
        u[ResourceKind::Pud.index()] = self.sums[PATH_BUS] as f64 / bus_peak;
        u[ResourceKind::Isp.index()] =
            (self.sums[PATH_BUS] + self.sums[PATH_CORE]) as f64 / bus_peak;
        u
    }
}

/// Busy-until calendars for shared hardware; reservations are FIFO.
#[derive(Debug, Clone)]
pub struct Calendars {
    pub channels: Vec<Nanos>,
    pub dies: Vec<Nanos>,
    pub bus: Nanos,
    /// Busy-until per DRAM bank for in-DRAM compute.
    pub pud: Vec<Nanos>,
    pub cores: Vec<Nanos>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoherenceStats {
    pub commits: u64,
    pub buffer_evictions: u64,
    pub dram_evictions: u64,
    pub relocations: u64,
    pub violations: u64,
}

/// Attribution for charges made by a primitive.
#[derive(Debug, Clone, Copy)]
pub struct Ctx {
    pub instr: Option<InstrId>,
    /// Zero latency: no calendar is reserved, energy is still charged.
    pub instant: bool,
}

impl Ctx {
    pub fn of(instr: InstrId) -> Self {
        Self { instr: Some(instr), instant: false }
    }

    pub fn none() -> Self {
        Self { instr: None, instant: false }
    }
}

/// Mapping table, calendars and the energy ledger of one simulation.
pub struct Storage {
    pub cfg: SimConfig,
    pub l2p: HashMap<PageId, L2PEntry>,
    pub cal: Calendars,
    pub ledger: EnergyLedger,
    pub log: Vec<LogEntry>,
    pub bw: BandwidthTracker,
    pub coherence: CoherenceStats,
    /// Buffered result pages per plane, oldest first.
    plane_buffers: HashMap<usize, VecDeque<PageId>>,
    dram_capacity_pages: u64,
    next_row: u64,
    lru: BTreeSet<(u64, PageId)>,
    lru_tick: HashMap<PageId, u64>,
    tick: u64,
    pins: HashMap<PageId, u32>,
}

pub const VERSION_LIMIT: u8 = u8::MAX;

impl Storage {
    pub fn new(cfg: &SimConfig) -> Self {
        let t = &cfg.topology;
        Self {
            cfg: cfg.clone(),
            l2p: HashMap::new(),
            cal: Calendars {
                channels: vec![0; t.channels as usize],
                dies: vec![0; t.total_dies() as usize],
                bus: 0,
                pud: vec![0; cfg.dram.banks as usize],
                cores: vec![0; cfg.cores.compute_cores as usize],
            },
            ledger: EnergyLedger::default(),
            log: Vec::new(),
            bw: BandwidthTracker::new(cfg.offloader.bw_window_ns),
            coherence: CoherenceStats::default(),
            plane_buffers: HashMap::new(),
            dram_capacity_pages: (cfg.dram.capacity / t.page_size as u64).max(1),
            next_row: 0,
            lru: BTreeSet::new(),
            lru_tick: HashMap::new(),
            tick: 0,
            pins: HashMap::new(),
        }
    }

    /// Places a page in flash, clean, at `addr`.
    pub fn place(&mut self, page: PageId, addr: FlashAddress) {
        let cached = mapping_cached(page, self.cfg.offloader.l2p_dram_fraction);
        self.l2p.insert(
            page,
            L2PEntry {
                lpa: page,
                flash: addr,
                buffered: false,
                dram_row: None,
                owner: Owner::Flash,
                state: PageState::Clean,
                version: 0,
                mapping_cached: cached,
            },
        );
    }

    pub fn entry(&self, page: PageId) -> Result<&L2PEntry> {
        self.l2p.get(&page).ok_or(Error::UnknownPage(page))
    }

    fn entry_mut(&mut self, page: PageId) -> Result<&mut L2PEntry> {
        self.l2p.get_mut(&page).ok_or(Error::UnknownPage(page))
    }

    pub fn die_of(&self, addr: FlashAddress) -> usize {
        self.cfg.topology.die_index(addr)
    }

    fn page_bytes(&self) -> u64 {
        self.cfg.topology.page_size as u64
    }

    #[allow(clippy::too_many_arguments)]
    pub fn charge(
        &mut self,
        time: Nanos,
        kind: EventKind,
        ctx: Ctx,
        page: Option<PageId>,
        category: Category,
        resource: Option<ResourceKind>,
        pj: Picojoules,
    ) {
        self.ledger.add(category, resource, pj);
        self.log.push(LogEntry { time, kind, instr: ctx.instr, page, category, resource, pj });
    }

    // Hardware primitives. Each returns its completion time.

    fn sense(&mut self, die: usize, at: Nanos, ctx: Ctx, page: PageId) -> Nanos {
        let d = self.cfg.flash_timing.t_read_slc;
        let end = if ctx.instant { at } else { reserve(&mut self.cal.dies[die], at, d) };
        let e = self.cfg.energy.e_read_per_channel;
        self.charge(end.saturating_sub(d).max(at), EventKind::TransferStart, ctx, Some(page), Category::DataMovement, None, e);
        end
    }

    fn channel_xfer(&mut self, channel: usize, at: Nanos, bytes: u64, ctx: Ctx, page: PageId) -> Nanos {
        let d = self.cfg.flash_timing.t_dma + transfer_time(bytes, self.cfg.topology.channel_bandwidth);
        let end = if ctx.instant { at } else { reserve(&mut self.cal.channels[channel], at, d) };
        self.bw.record(PATH_CHANNEL, at, bytes);
        let e = self.cfg.energy.e_dma_per_channel;
        self.charge(end, EventKind::TransferDone, ctx, Some(page), Category::DataMovement, None, e);
        end
    }

    fn program(&mut self, die: usize, at: Nanos, ctx: Ctx, page: PageId) -> Nanos {
        let d = self.cfg.flash_timing.t_prog_slc;
        let end = if ctx.instant { at } else { reserve(&mut self.cal.dies[die], at, d) };
        let e = self.cfg.energy.e_prog_per_channel;
        self.charge(end, EventKind::CoherenceSync, ctx, Some(page), Category::DataMovement, None, e);
        end
    }

    pub fn bus_xfer(&mut self, at: Nanos, bytes: u64, ctx: Ctx, page: PageId, core: bool) -> Nanos {
        let d = transfer_time(bytes, self.cfg.dram.bus_bandwidth);
        let end = if ctx.instant { at } else { reserve(&mut self.cal.bus, at, d) };
        self.bw.record(if core { PATH_CORE } else { PATH_BUS }, at, bytes);
        let e = energy_per_kib(bytes, self.cfg.energy.e_dram_bus_per_kb);
        self.charge(end, EventKind::TransferDone, ctx, Some(page), Category::DataMovement, None, e);
        end
    }

    // DRAM residency.

    fn touch(&mut self, page: PageId) {
        self.tick += 1;
        if let Some(old) = self.lru_tick.insert(page, self.tick) {
            self.lru.remove(&(old, page));
        }
        self.lru.insert((self.tick, page));
    }

    fn drop_dram(&mut self, page: PageId) {
        if let Some(old) = self.lru_tick.remove(&page) {
            self.lru.remove(&(old, page));
        }
        if let Some(e) = self.l2p.get_mut(&page) {
            e.dram_row = None;
        }
    }

    /// Gives `page` a DRAM row, evicting the least recently used unpinned
    /// page when DRAM is full.
    fn fill_dram(&mut self, page: PageId, at: Nanos, ctx: Ctx) -> Result<()> {
        if self.entry(page)?.dram_row.is_none() {
            if self.lru_tick.len() as u64 >= self.dram_capacity_pages {
                let victim = self
                    .lru
                    .iter()
                    .map(|&(_, p)| p)
                    .find(|p| self.pins.get(p).copied().unwrap_or(0) == 0 && *p != page);
                if let Some(v) = victim {
                    self.sync_page(v, SyncTrigger::Eviction, at, ctx)?;
                    self.drop_dram(v);
                    self.coherence.dram_evictions += 1;
                }
            }
            let row = self.next_row;
            self.next_row += 1;
            self.entry_mut(page)?.dram_row = Some(row);
        }
        self.touch(page);
        Ok(())
    }

    pub fn pin(&mut self, page: PageId) {
        *self.pins.entry(page).or_default() += 1;
    }

    pub fn unpin(&mut self, page: PageId) {
        if let Some(c) = self.pins.get_mut(&page) {
            *c -= 1;
            if *c == 0 {
                self.pins.remove(&page);
            }
        }
    }

    fn remove_from_buffer(&mut self, page: PageId, addr: FlashAddress) {
        let plane = self.cfg.topology.plane_index(addr);
        if let Some(q) = self.plane_buffers.get_mut(&plane) {
            q.retain(|&p| p != page);
        }
    }

    /// Commits a dirty page to flash; clean pages are left alone.
    pub fn sync_page(&mut self, page: PageId, trigger: SyncTrigger, at: Nanos, ctx: Ctx) -> Result<Nanos> {
        self.sync_to(page, trigger, None, at, ctx)
    }

    /// Commits a dirty page, optionally re-homing a DRAM-dirty page at
    /// `target` instead of its previous flash address.
    fn sync_to(
        &mut self,
        page: PageId,
        _trigger: SyncTrigger,
        target: Option<FlashAddress>,
        at: Nanos,
        ctx: Ctx,
    ) -> Result<Nanos> {
        let e = self.entry(page)?.clone();
        if e.state == PageState::Clean {
            return Ok(at);
        }
        let end = match e.owner {
            Owner::Flash => {
                let die = self.die_of(e.flash);
                self.remove_from_buffer(page, e.flash);
                self.program(die, at, ctx, page)
            }
            Owner::Dram => {
                let home = target.unwrap_or(e.flash);
                let t = self.bus_xfer(at, self.page_bytes(), ctx, page, false);
                let t = self.channel_xfer(home.channel as usize, t, self.page_bytes(), ctx, page);
                let die = self.die_of(home);
                let t = self.program(die, t, ctx, page);
                self.entry_mut(page)?.flash = home;
                t
            }
        };
        let m = self.entry_mut(page)?;
        m.owner = Owner::Flash;
        m.state = PageState::Clean;
        m.buffered = false;
        m.version = 0;
        self.coherence.commits += 1;
        Ok(end)
    }

    /// Commits every dirty page (garbage collection or power cycle).
    pub fn flush_all(&mut self, trigger: SyncTrigger, at: Nanos) -> Result<Nanos> {
        let mut dirty: Vec<PageId> =
            self.l2p.values().filter(|e| e.state == PageState::Dirty).map(|e| e.lpa).collect();
        dirty.sort_unstable();
        let mut end = at;
        for p in dirty {
            end = end.max(self.sync_page(p, trigger, at, Ctx::none())?);
        }
        Ok(end)
    }

    /// Makes DRAM hold the current contents of `page`.
    pub fn stage_dram(&mut self, page: PageId, at: Nanos, ctx: Ctx) -> Result<Nanos> {
        let e = self.entry(page)?.clone();
        if e.dram_valid() {
            self.touch(page);
            return Ok(at);
        }
        let bytes = self.page_bytes();
        let end = if e.buffered && e.state == PageState::Dirty {
            // Commit first; the page is still latched, so no new sense.
            let t = self.sync_page(page, SyncTrigger::CrossResource, at, ctx)?;
            self.channel_xfer(e.flash.channel as usize, t, bytes, ctx, page)
        } else {
            let t = self.sense(self.die_of(e.flash), at, ctx, page);
            self.channel_xfer(e.flash.channel as usize, t, bytes, ctx, page)
        };
        self.fill_dram(page, at, ctx)?;
        Ok(end)
    }

    /// Moves `bytes` of `page` from DRAM to a controller core.
    pub fn stage_core(&mut self, page: PageId, bytes: u64, at: Nanos, ctx: Ctx) -> Result<Nanos> {
        let t = self.stage_dram(page, at, ctx)?;
        Ok(self.bus_xfer(t, bytes, ctx, page, true))
    }

    /// Brings `page` to the die of `anchor` for in-flash computation.
    pub fn stage_ifp(
        &mut self,
        page: PageId,
        anchor: FlashAddress,
        mws: Option<Mws>,
        at: Nanos,
        ctx: Ctx,
    ) -> Result<Nanos> {
        let e = self.entry(page)?.clone();
        let bytes = self.page_bytes();
        let anchor_die = self.die_of(anchor);
        if e.owner == Owner::Dram && e.state == PageState::Dirty {
            let t = self.sync_to(page, SyncTrigger::CrossResource, Some(anchor), at, ctx)?;
            return Ok(t);
        }
        let mut t = at;
        if e.buffered && e.state == PageState::Dirty && (mws.is_some() || self.die_of(e.flash) != anchor_die) {
            t = self.sync_page(page, SyncTrigger::CrossResource, t, ctx)?;
        }
        let home = self.entry(page)?.flash;
        if self.die_of(home) == anchor_die {
            let placed = match mws {
                Some(Mws::And) => home.same_block(&anchor),
                Some(Mws::Or) => home.same_plane(&anchor),
                None => true,
            };
            if !placed {
                // Copy-back into the anchor's block.
                t = self.sense(anchor_die, t, ctx, page);
                t = self.program(anchor_die, t, ctx, page);
                self.entry_mut(page)?.flash = FlashAddress { page: home.page, ..anchor };
                self.coherence.relocations += 1;
            }
            return Ok(t);
        }
        t = self.sense(self.die_of(home), t, ctx, page);
        t = self.channel_xfer(home.channel as usize, t, bytes, ctx, page);
        t = self.channel_xfer(anchor.channel as usize, t, bytes, ctx, page);
        if mws.is_some() {
            t = self.program(anchor_die, t, ctx, page);
            self.entry_mut(page)?.flash = FlashAddress { page: home.page, ..anchor };
            self.coherence.relocations += 1;
        }
        Ok(t)
    }

    fn bump_version(&mut self, page: PageId, writer: Owner, at: Nanos, ctx: Ctx) -> Result<u8> {
        let e = self.entry(page)?.clone();
        let same = e.owner == writer && e.state == PageState::Dirty;
        if same && e.version == VERSION_LIMIT {
            self.sync_page(page, SyncTrigger::VersionWrap, at, ctx)?;
            return Ok(1);
        }
        Ok(if same { e.version + 1 } else { 1 })
    }

    /// Records a result written into DRAM by the in-DRAM units or a core.
    pub fn write_dram(&mut self, page: PageId, at: Nanos, ctx: Ctx) -> Result<()> {
        let version = self.bump_version(page, Owner::Dram, at, ctx)?;
        let e = self.entry(page)?.clone();
        if e.buffered {
            self.remove_from_buffer(page, e.flash);
        }
        self.fill_dram(page, at, ctx)?;
        let m = self.entry_mut(page)?;
        m.owner = Owner::Dram;
        m.state = PageState::Dirty;
        m.buffered = false;
        m.version = version;
        Ok(())
    }

    /// Records an in-flash result left in the page buffer of `plane_addr`.
    pub fn write_flash_buffer(&mut self, page: PageId, plane_addr: FlashAddress, at: Nanos, ctx: Ctx) -> Result<()> {
        let version = self.bump_version(page, Owner::Flash, at, ctx)?;
        let e = self.entry(page)?.clone();
        if e.buffered {
            self.remove_from_buffer(page, e.flash);
        }
        self.drop_dram(page);
        let addr = FlashAddress { page: e.flash.page, ..plane_addr };
        {
            let m = self.entry_mut(page)?;
            m.owner = Owner::Flash;
            m.state = PageState::Dirty;
            m.buffered = true;
            m.version = version;
            m.flash = addr;
        }
        let plane = self.cfg.topology.plane_index(addr);
        let slots = self.cfg.resources.page_buffer_slots as usize;
        let q = self.plane_buffers.entry(plane).or_default();
        q.push_back(page);
        if q.len() > slots {
            let oldest = q.pop_front().expect("non-empty");
            self.sync_page(oldest, SyncTrigger::Eviction, at, ctx)?;
            self.coherence.buffer_evictions += 1;
        }
        Ok(())
    }

    /// Explicit data movement between locations; used directly by tests
    /// and tools. Moving to where the page already is costs nothing.
    pub fn move_data(&mut self, page: PageId, to: MoveTarget, at: Nanos) -> Result<Nanos> {
        let ctx = Ctx::none();
        match to {
            MoveTarget::Dram => self.stage_dram(page, at, ctx),
            MoveTarget::Core => self.stage_core(page, self.page_bytes(), at, ctx),
            MoveTarget::FlashDie(anchor) => self.stage_ifp(page, anchor, None, at, ctx),
            MoveTarget::Flash => self.sync_page(page, SyncTrigger::HostTransfer, at, ctx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveTarget {
    Dram,
    Core,
    /// Page buffer of the die holding this address.
    FlashDie(FlashAddress),
    /// Commit to the page's flash home.
    Flash,
}
