//! Deterministic discrete-event simulation of one trace under one policy.
//!
//! The offloader core decides instructions in program order, one at a
//! time. A decided instruction is dispatched to its resource's FIFO queue,
//! waits for its producers, stages operands over the flash channels and
//! the DRAM bus, computes, and retires. Shared hardware is modeled with
//! FIFO busy-until calendars.

pub mod ledger;
pub mod report;
pub mod state;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::interp::PageStore;
use crate::isa::{InstrId, PageId, Trace, VecInstr, VecOpType};
use crate::offloader::{
    choose, overhead_cost, total_latency, Breakdown, ChoiceContext, FeatureVector, OperandLoc,
    OverheadInputs, Policy, INF,
};
use crate::resources::{
    compute_energy, compute_latency, pud_sub_ops, supports, ExecQueue, ResourceKind,
};
use crate::topology::{transfer_time, FlashAddress, Nanos};

pub use ledger::{percentile, percentiles, Category, EnergyLedger, EventKind, LogEntry};
pub use report::{csv_header, functional_verify, DecisionFractions, StatsReport, CSV_COLUMNS};
pub use state::{
    CoherenceStats, Ctx, L2PEntry, Location, MoveTarget, Mws, Owner, PageState, Storage,
    SyncTrigger,
};

/// Bytes a SCALAR instruction fetches per operand.
pub const SCALAR_FETCH_BYTES: u64 = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Carry page bytes and execute instruction semantics.
    pub functional: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DecisionRecord {
    pub instr: InstrId,
    pub resource: ResourceKind,
    pub decided_at: Nanos,
    pub overhead_ns: Nanos,
    pub est_total_ns: Nanos,
    pub staged_at: Nanos,
    pub started_at: Nanos,
    pub done_at: Nanos,
    pub breakdown: [Breakdown; 3],
}

pub struct RunOutput {
    pub report: StatsReport,
    pub log: Vec<LogEntry>,
    pub decisions: Vec<DecisionRecord>,
    pub final_contents: Option<PageStore>,
    pub events_processed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Decide(InstrId),
    Dispatch(InstrId),
    Staged(InstrId),
    Retire(InstrId),
    Start(InstrId),
    Done(InstrId),
}

impl Ev {
    fn kind(self) -> EventKind {
        match self {
            Ev::Decide(_) | Ev::Dispatch(_) => EventKind::DecisionReady,
            Ev::Staged(_) | Ev::Retire(_) => EventKind::TransferDone,
            Ev::Start(_) => EventKind::ComputeStart,
            Ev::Done(_) => EventKind::ComputeDone,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct InstrRt {
    resource: Option<ResourceKind>,
    queue: usize,
    anchor: Option<FlashAddress>,
    decided_at: Nanos,
    est_comp: Nanos,
    est_total: Nanos,
    overhead: Nanos,
    breakdown: [Breakdown; 3],
    pending: u32,
    dispatched: bool,
    ready: bool,
    staged_at: Nanos,
    started: Option<Nanos>,
    done: Option<Nanos>,
    result: Option<Vec<u8>>,
}

struct QueueRt {
    exec: ExecQueue,
    running: Option<InstrId>,
}

/// Where an operand will be when the instruction reads it.
#[derive(Debug, Clone, Copy)]
struct OpClass {
    /// Flash copy and whether it is an unprogrammed page-buffer result.
    flash: Option<(FlashAddress, bool)>,
    dram: bool,
}

pub struct Simulator<'t> {
    trace: &'t Trace,
    cfg: SimConfig,
    policy: Policy,
    seed: u64,
    pub storage: Storage,
    now: Nanos,
    seq: u64,
    heap: BinaryHeap<Reverse<(Nanos, EventKind, u64, Ev)>>,
    rt: Vec<InstrRt>,
    dependents: Vec<Vec<InstrId>>,
    queues: Vec<QueueRt>,
    last_writer: HashMap<PageId, InstrId>,
    functional: Option<PageStore>,
    replay_hook: Option<Box<dyn FnMut(InstrId, Nanos) -> bool + 't>>,
    replays: u64,
    events: u64,
    inflight: u32,
    parked: Option<InstrId>,
}

impl<'t> Simulator<'t> {
    pub fn new(trace: &'t Trace, cfg: &SimConfig, policy: Policy, seed: u64) -> Result<Self> {
        Self::with_options(trace, cfg, policy, seed, RunOptions::default())
    }

    pub fn with_options(
        trace: &'t Trace,
        cfg: &SimConfig,
        policy: Policy,
        seed: u64,
        opts: RunOptions,
    ) -> Result<Self> {
        cfg.validate()?;
        trace.validate()?;
        if trace.header.page_size != cfg.topology.page_size {
            return Err(Error::InvalidTrace {
                id: 0,
                reason: format!(
                    "trace page size {} differs from configured {}",
                    trace.header.page_size, cfg.topology.page_size
                ),
            });
        }
        let total = cfg.topology.total_pages();
        if let Some(max) = trace.max_page() {
            if max >= total {
                return Err(Error::CapacityExceeded { pages: max + 1, capacity: total });
            }
        }
        let mut storage = Storage::new(cfg);
        for (page, addr) in initial_placement(trace, cfg)? {
            storage.place(page, addr);
        }
        let n_isp = cfg.cores.compute_cores as usize;
        let n_queues = n_isp + cfg.dram.banks as usize + cfg.topology.total_dies() as usize;
        let functional = if opts.functional {
            let contents = trace.contents.as_ref().ok_or(Error::MissingContents)?;
            Some(PageStore::from_contents(trace.header.page_size, contents))
        } else {
            None
        };
        let mut sim = Simulator {
            trace,
            cfg: cfg.clone(),
            policy,
            seed,
            storage,
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            rt: vec![InstrRt::default(); trace.instrs.len()],
            dependents: vec![Vec::new(); trace.instrs.len()],
            queues: (0..n_queues).map(|_| QueueRt { exec: ExecQueue::new(), running: None }).collect(),
            last_writer: HashMap::new(),
            functional,
            replay_hook: None,
            replays: 0,
            events: 0,
            inflight: 0,
            parked: None,
        };
        if !trace.instrs.is_empty() {
            sim.push(0, Ev::Decide(0));
        }
        Ok(sim)
    }

    /// Called when an instruction finishes computing, with its compute
    /// time; returning true re-executes it. No fault model drives this.
    pub fn set_replay_hook(&mut self, hook: impl FnMut(InstrId, Nanos) -> bool + 't) {
        self.replay_hook = Some(Box::new(hook));
    }

    fn ideal(&self) -> bool {
        self.policy == Policy::Ideal
    }

    fn push(&mut self, at: Nanos, ev: Ev) {
        self.seq += 1;
        self.heap.push(Reverse((at.max(self.now), ev.kind(), self.seq, ev)));
    }

    fn isp_queue(&self) -> usize {
        let n = self.cfg.cores.compute_cores as usize;
        (0..n).min_by_key(|&q| (self.queues[q].exec.counter(), q)).unwrap_or(0)
    }

    /// One queue per DRAM bank; new work goes to the least loaded bank.
    fn pud_queue(&self) -> usize {
        let first = self.cfg.cores.compute_cores as usize;
        (first..first + self.cfg.dram.banks as usize)
            .min_by_key(|&q| (self.queues[q].exec.counter(), q))
            .unwrap_or(first)
    }

    fn ifp_queue(&self, anchor: FlashAddress) -> usize {
        (self.cfg.cores.compute_cores + self.cfg.dram.banks) as usize + self.storage.die_of(anchor)
    }

    fn queue_for(&self, r: ResourceKind, anchor: Option<FlashAddress>) -> usize {
        match r {
            ResourceKind::Isp => self.isp_queue(),
            ResourceKind::Pud => self.pud_queue(),
            ResourceKind::Ifp => self.ifp_queue(anchor.expect("in-flash work has an anchor")),
        }
    }

    /// Pages the instruction must stage: distinct sources, plus the
    /// destination when only part of it is overwritten.
    fn operand_pages(&self, ins: &VecInstr) -> Vec<PageId> {
        let mut pages: Vec<PageId> = Vec::with_capacity(ins.src_pages.len() + 1);
        for &p in &ins.src_pages {
            if !pages.contains(&p) {
                pages.push(p);
            }
        }
        let full = !ins.is_scalar()
            && ins.offset == 0
            && ins.vector_length == self.trace.header.elements_per_page();
        if !full && !pages.contains(&ins.dst_page) {
            pages.push(ins.dst_page);
        }
        pages
    }

    fn predicted(&self, page: PageId) -> Result<OpClass> {
        if let Some(&w) = self.last_writer.get(&page) {
            let w = &self.rt[w as usize];
            if w.done.is_none() {
                return Ok(match w.resource {
                    Some(ResourceKind::Ifp) => OpClass { flash: Some((w.anchor.unwrap(), true)), dram: false },
                    _ => OpClass { flash: None, dram: true },
                });
            }
        }
        let e = self.storage.entry(page)?;
        Ok(OpClass {
            flash: (e.owner == Owner::Flash)
                .then_some((e.flash, e.buffered && e.state == PageState::Dirty)),
            dram: e.dram_valid(),
        })
    }

    fn mws(op: VecOpType) -> Option<Mws> {
        match op {
            VecOpType::And => Some(Mws::And),
            VecOpType::Or => Some(Mws::Or),
            _ => None,
        }
    }

    /// Uncontended data-movement estimates per resource.
    fn dm_estimates(&self, ins: &VecInstr, classes: &[OpClass], anchor: FlashAddress) -> [Nanos; 3] {
        let ft = &self.cfg.flash_timing;
        let page = self.cfg.topology.page_size as u64;
        let t_ch = ft.t_dma + transfer_time(page, self.cfg.topology.channel_bandwidth);
        let bus = |b: u64| transfer_time(b, self.cfg.dram.bus_bandwidth);
        let fetch = if ins.is_scalar() { SCALAR_FETCH_BYTES } else { ins.vector_bytes() };
        let mws = Self::mws(ins.op);
        let anchor_die = self.storage.die_of(anchor);
        let to_dram = |c: &OpClass| match c.flash {
            _ if c.dram => 0,
            Some((_, true)) => ft.t_prog_slc + t_ch,
            _ => ft.t_read_slc + t_ch,
        };
        let to_ifp = |c: &OpClass| match c.flash {
            None => bus(page) + t_ch + ft.t_prog_slc,
            Some((addr, buffered)) if self.storage.die_of(addr) == anchor_die => {
                let commit = if buffered && mws.is_some() { ft.t_prog_slc } else { 0 };
                let placed = match mws {
                    Some(Mws::And) => addr.same_block(&anchor),
                    Some(Mws::Or) => addr.same_plane(&anchor),
                    None => true,
                };
                commit + if placed { 0 } else { ft.t_read_slc + ft.t_prog_slc }
            }
            Some((_, buffered)) => {
                let commit = if buffered { ft.t_prog_slc } else { 0 };
                let reloc = if mws.is_some() { ft.t_prog_slc } else { 0 };
                commit + ft.t_read_slc + 2 * t_ch + reloc
            }
        };
        let mut dm = [0; 3];
        dm[ResourceKind::Pud.index()] = classes.iter().map(to_dram).sum();
        dm[ResourceKind::Isp.index()] =
            classes.iter().map(|c| to_dram(c) + bus(fetch)).sum::<Nanos>() + bus(fetch);
        // A result left in a page buffer is programmed once it is evicted or
        // read elsewhere, like the core's write-back over the bus. Updating a
        // page already buffered on the die only bumps its version.
        let dst_buffered = self
            .storage
            .entry(ins.dst_page)
            .is_ok_and(|e| e.buffered && self.storage.die_of(e.flash) == anchor_die);
        let write_back = if dst_buffered { 0 } else { ft.t_prog_slc };
        dm[ResourceKind::Ifp.index()] = classes.iter().map(to_ifp).sum::<Nanos>() + write_back;
        dm
    }

    fn decide(&mut self, id: InstrId, t: Nanos) -> Result<()> {
        let window = self.cfg.offloader.window;
        if window > 0 && self.inflight >= window {
            self.parked = Some(id);
            return Ok(());
        }
        self.inflight += 1;
        let ins = &self.trace.instrs[id as usize];
        let pages = self.operand_pages(ins);
        let classes: Vec<OpClass> = pages.iter().map(|&p| self.predicted(p)).collect::<Result<_>>()?;
        let anchor = match classes.iter().find_map(|c| c.flash.map(|f| f.0)) {
            Some(a) => a,
            None => self.storage.entry(ins.dst_page)?.flash,
        };

        let mut producer_resources = [false; 3];
        let mut delay_dd: Nanos = 0;
        let mut pending = 0;
        for &p in &ins.producer_ids {
            let prt = &self.rt[p as usize];
            if prt.done.is_none() {
                pending += 1;
                if let Some(r) = prt.resource {
                    producer_resources[r.index()] = true;
                }
                let remaining = match prt.started {
                    Some(s) => prt.est_comp.saturating_sub(t - s),
                    None => prt.est_comp,
                };
                delay_dd = delay_dd.saturating_add(remaining);
            }
        }
        for &p in &ins.producer_ids {
            if self.rt[p as usize].done.is_none() {
                self.dependents[p as usize].push(id);
            }
        }

        let mut comp = [INF; 3];
        for r in ResourceKind::ALL {
            if supports(r, ins.op, &self.cfg) {
                comp[r.index()] = compute_latency(r, ins, &self.cfg)?;
            }
        }
        let dm = self.dm_estimates(ins, &classes, anchor);
        let mut queue = [0; 3];
        queue[ResourceKind::Isp.index()] = self.queues[self.isp_queue()].exec.counter();
        queue[ResourceKind::Pud.index()] = self.queues[self.pud_queue()].exec.counter();
        // In-flash compute shares the die's command queue with senses and
        // programs, so pending die work counts as queueing delay.
        let die_backlog = self.storage.cal.dies[self.storage.die_of(anchor)].saturating_sub(t);
        queue[ResourceKind::Ifp.index()] =
            self.queues[self.ifp_queue(anchor)].exec.counter().max(die_backlog);
        let mut resident = [false; 3];
        for r in ResourceKind::ALL {
            resident[r.index()] = match r {
                ResourceKind::Ifp => dm[r.index()] == 0,
                _ => classes.iter().all(|c| c.dram),
            };
        }
        let mut fv = FeatureVector {
            op_type: ins.op,
            operand_locations: classes
                .iter()
                .map(|c| if c.dram { OperandLoc::Dram } else { OperandLoc::Flash })
                .collect(),
            delay_dd,
            delay_queue: queue,
            latency_dm: dm,
            latency_comp: comp,
            resident,
        };
        if self.cfg.offloader.zero_cost_features {
            fv = fv.zero_cost();
        }

        let bw = self.storage.bw.utilization(t, &self.cfg);
        let ctx = ChoiceContext { bw_utilization: bw, tie_break: &self.cfg.offloader.tie_break };
        let policy = if ins.is_scalar() { Policy::Fixed(ResourceKind::Isp) } else { self.policy };
        let decision = choose(&fv, policy, &ctx);
        let r = decision.resource;

        let mut distinct = ins.src_pages.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let flash_entries = distinct
            .iter()
            .filter(|&&p| self.storage.l2p.get(&p).is_some_and(|e| !e.mapping_cached))
            .count() as u32;
        let cost = overhead_cost(
            self.policy,
            &OverheadInputs {
                operands: distinct.len() as u32,
                flash_entries,
                producer_queues: producer_resources.iter().filter(|&&b| b).count() as u32,
                supported_resources: comp.iter().filter(|&&c| c != INF).count() as u32,
                scalar: ins.is_scalar(),
            },
            &self.cfg,
        );
        let overhead = cost.total;

        let est_comp = comp[r.index()];
        let est_total = if self.ideal() { est_comp } else { total_latency(r, &fv) };
        let anchor = (r == ResourceKind::Ifp).then_some(anchor);
        let queue = self.queue_for(r, anchor);
        self.rt[id as usize] = InstrRt {
            resource: Some(r),
            queue,
            anchor,
            decided_at: t,
            est_comp,
            est_total,
            overhead,
            pending,
            breakdown: decision.breakdown,
            ..Default::default()
        };
        self.last_writer.insert(ins.dst_page, id);
        if !self.ideal() {
            self.queues[queue].exec.enqueue(id as u64, est_comp);
        }
        self.push(t + overhead, Ev::Dispatch(id));
        if (id as usize) + 1 < self.trace.instrs.len() {
            self.push(t + cost.serial, Ev::Decide(id + 1));
        }
        Ok(())
    }

    fn dispatch(&mut self, id: InstrId, t: Nanos) -> Result<()> {
        let rt = &mut self.rt[id as usize];
        rt.dispatched = true;
        if rt.pending == 0 {
            self.stage(id, t)?;
        }
        Ok(())
    }

    fn stage(&mut self, id: InstrId, t: Nanos) -> Result<()> {
        let ins = &self.trace.instrs[id as usize];
        let rt = &self.rt[id as usize];
        let r = rt.resource.expect("decided");
        let anchor = rt.anchor;
        let ctx = Ctx { instr: Some(id), instant: self.ideal() };
        let pages = self.operand_pages(ins);
        for &p in pages.iter().chain(std::iter::once(&ins.dst_page)) {
            self.storage.pin(p);
        }
        let mws = Self::mws(ins.op);
        let mut ready = t;
        for p in pages {
            let end = match r {
                ResourceKind::Pud => self.storage.stage_dram(p, t, ctx)?,
                ResourceKind::Isp => self.storage.stage_core(p, Self::core_bytes(ins), t, ctx)?,
                ResourceKind::Ifp => self.storage.stage_ifp(p, anchor.unwrap(), mws, t, ctx)?,
            };
            ready = ready.max(end);
        }
        self.push(ready, Ev::Staged(id));
        Ok(())
    }

    fn staged(&mut self, id: InstrId, t: Nanos) -> Result<()> {
        self.rt[id as usize].ready = true;
        self.rt[id as usize].staged_at = t;
        if self.ideal() {
            self.push(t, Ev::Start(id));
            return Ok(());
        }
        let q = self.rt[id as usize].queue;
        self.try_start(q, t);
        Ok(())
    }

    /// Reserves the servers for `comp` from `now` on; returns the start time.
    /// Rows wider than one bank spill onto the following banks.
    fn occupy(&mut self, id: InstrId, now: Nanos, comp: Nanos) -> Nanos {
        let rt = &self.rt[id as usize];
        let die = rt.anchor.map(|a| self.storage.die_of(a));
        let cal = &mut self.storage.cal;
        let slots: Vec<&mut Nanos> = match rt.resource.expect("decided") {
            ResourceKind::Isp => vec![&mut cal.cores[rt.queue]],
            ResourceKind::Pud => {
                let ins = &self.trace.instrs[id as usize];
                let n = cal.pud.len();
                let need = (pud_sub_ops(ins, &self.cfg) as usize).clamp(1, n);
                let home = rt.queue - self.cfg.cores.compute_cores as usize;
                cal.pud
                    .iter_mut()
                    .enumerate()
                    .filter(|(b, _)| (b + n - home) % n < need)
                    .map(|(_, s)| s)
                    .collect()
            }
            ResourceKind::Ifp => vec![&mut cal.dies[die.expect("in-flash work has an anchor")]],
        };
        let start = slots.iter().map(|s| **s).max().unwrap_or(0).max(now);
        for s in slots {
            *s = start + comp;
        }
        start
    }

    fn try_start(&mut self, q: usize, now: Nanos) {
        if self.queues[q].running.is_some() {
            return;
        }
        let Some(head) = self.queues[q].exec.head() else { return };
        let head = head as InstrId;
        if !self.rt[head as usize].ready {
            return;
        }
        let comp = self.rt[head as usize].est_comp;
        let start = self.occupy(head, now, comp);
        self.queues[q].running = Some(head);
        self.push(start, Ev::Start(head));
    }

    fn start(&mut self, id: InstrId, t: Nanos) -> Result<()> {
        let ins = &self.trace.instrs[id as usize];
        let r = self.rt[id as usize].resource.expect("decided");
        for &p in &ins.producer_ids {
            match self.rt[p as usize].done {
                Some(d) if d <= t => {}
                _ => {
                    return Err(Error::InvalidTrace {
                        id,
                        reason: format!("started before producer {p} completed"),
                    })
                }
            }
        }
        for p in self.operand_pages(ins) {
            let e = self.storage.entry(p)?;
            let ok = match r {
                ResourceKind::Ifp => e.owner == Owner::Flash,
                _ => e.dram_valid(),
            };
            if !ok {
                self.storage.coherence.violations += 1;
            }
        }
        self.rt[id as usize].started = Some(t);
        if let Some(store) = &self.functional {
            self.rt[id as usize].result = Some(store.evaluate(ins));
        }
        let e = compute_energy(r, ins, &self.cfg)?;
        self.storage.charge(t, EventKind::ComputeStart, Ctx::of(id), None, Category::Compute, Some(r), e);
        let comp = self.rt[id as usize].est_comp;
        self.push(t + comp, Ev::Done(id));
        Ok(())
    }

    fn core_bytes(ins: &VecInstr) -> u64 {
        if ins.is_scalar() {
            SCALAR_FETCH_BYTES
        } else {
            ins.vector_bytes()
        }
    }

    fn done(&mut self, id: InstrId, t: Nanos) -> Result<()> {
        let ins = &self.trace.instrs[id as usize];
        let rt = self.rt[id as usize].clone();
        let r = rt.resource.expect("decided");
        let ctx = Ctx { instr: Some(id), instant: self.ideal() };

        if let Some(hook) = self.replay_hook.as_mut() {
            if hook(id, t - rt.started.unwrap_or(t)) {
                self.replays += 1;
                let comp = rt.est_comp;
                if !self.ideal() {
                    self.occupy(id, t, comp);
                }
                let e = compute_energy(r, ins, &self.cfg)?;
                self.storage.charge(t, EventKind::ComputeStart, Ctx::of(id), None, Category::Compute, Some(r), e);
                self.rt[id as usize].started = Some(t);
                self.push(t + comp, Ev::Done(id));
                return Ok(());
            }
        }

        if let (Some(store), Some(bytes)) = (self.functional.as_mut(), rt.result) {
            store.set_page(ins.dst_page, bytes);
        }
        match r {
            ResourceKind::Ifp => self.storage.write_flash_buffer(ins.dst_page, rt.anchor.unwrap(), t, ctx)?,
            _ => self.storage.write_dram(ins.dst_page, t, ctx)?,
        }
        for p in self.operand_pages(ins).into_iter().chain(std::iter::once(ins.dst_page)) {
            self.storage.unpin(p);
        }
        let end = if r == ResourceKind::Isp {
            self.storage.bus_xfer(t, Self::core_bytes(ins), ctx, ins.dst_page, true)
        } else {
            t
        };
        if !self.ideal() {
            let q = rt.queue;
            self.queues[q].exec.complete(id as u64)?;
            self.queues[q].running = None;
            self.try_start(q, t);
        }
        if end > t {
            self.push(end, Ev::Retire(id));
        } else {
            self.retire(id, t)?;
        }
        Ok(())
    }

    fn retire(&mut self, id: InstrId, t: Nanos) -> Result<()> {
        self.rt[id as usize].done = Some(t);
        self.inflight -= 1;
        if let Some(next) = self.parked.take() {
            self.push(t, Ev::Decide(next));
        }
        let deps = std::mem::take(&mut self.dependents[id as usize]);
        for d in deps {
            let rt = &mut self.rt[d as usize];
            rt.pending -= 1;
            if rt.pending == 0 && rt.dispatched {
                self.stage(d, t)?;
            }
        }
        Ok(())
    }

    /// Processes one event; false once the queue is empty.
    pub fn step(&mut self) -> Result<bool> {
        let Some(Reverse((t, _, _, ev))) = self.heap.pop() else { return Ok(false) };
        assert!(t >= self.now, "clock moved backwards");
        self.now = t;
        self.events += 1;
        match ev {
            Ev::Decide(i) => self.decide(i, t)?,
            Ev::Dispatch(i) => self.dispatch(i, t)?,
            Ev::Staged(i) => self.staged(i, t)?,
            Ev::Start(i) => self.start(i, t)?,
            Ev::Done(i) => self.done(i, t)?,
            Ev::Retire(i) => self.retire(i, t)?,
        }
        Ok(true)
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn run_to_end(mut self) -> Result<RunOutput> {
        while self.step()? {}
        self.finish()
    }

    fn finish(self) -> Result<RunOutput> {
        let trace = self.trace;
        let n = trace.instrs.len();
        let mut latencies = Vec::with_capacity(n);
        let mut timeline = Vec::with_capacity(n);
        let mut decisions = Vec::with_capacity(n);
        let mut total_time = 0;
        for (i, rt) in self.rt.iter().enumerate() {
            let done = rt.done.ok_or_else(|| Error::InvalidTrace {
                id: i as InstrId,
                reason: "instruction never completed".into(),
            })?;
            total_time = total_time.max(done);
            latencies.push(done - rt.decided_at);
            let r = rt.resource.expect("decided");
            timeline.push(r);
            decisions.push(DecisionRecord {
                instr: i as InstrId,
                resource: r,
                decided_at: rt.decided_at,
                overhead_ns: rt.overhead,
                est_total_ns: rt.est_total,
                breakdown: rt.breakdown,
                staged_at: rt.staged_at,
                started_at: rt.started.unwrap_or(done),
                done_at: done,
            });
        }
        let vector: Vec<usize> = (0..n).filter(|&i| !trace.instrs[i].is_scalar()).collect();
        let basis: Vec<usize> = if vector.is_empty() { (0..n).collect() } else { vector.clone() };
        let sample: Vec<Nanos> = basis.iter().map(|&i| latencies[i]).collect();
        let (p99, p9999) = if sample.is_empty() {
            (0, 0)
        } else {
            let v = percentiles(&sample, &[99.0, 99.99])?;
            (v[0], v[1])
        };
        let mean_latency = if sample.is_empty() {
            0.0
        } else {
            sample.iter().map(|&x| x as f64).sum::<f64>() / sample.len() as f64
        };
        let mut counts = [0usize; 3];
        for &i in &basis {
            counts[timeline[i].index()] += 1;
        }
        let frac = |r: ResourceKind| {
            if basis.is_empty() {
                0.0
            } else {
                counts[r.index()] as f64 / basis.len() as f64
            }
        };
        let overheads: Vec<Nanos> = vector.iter().map(|&i| self.rt[i].overhead).collect();
        let overhead = report::OverheadStats {
            decisions: overheads.len(),
            mean_ns: if overheads.is_empty() {
                0.0
            } else {
                overheads.iter().sum::<Nanos>() as f64 / overheads.len() as f64
            },
            max_ns: overheads.iter().copied().max().unwrap_or(0),
        };
        let report = StatsReport {
            policy: self.policy.to_string(),
            profile: trace.header.profile.clone(),
            seed: self.seed,
            n_instructions: n,
            n_vector: vector.len(),
            total_time_ns: total_time,
            p99_ns: p99,
            p9999_ns: p9999,
            mean_latency_ns: mean_latency,
            energy: self.storage.ledger,
            decision_fractions: DecisionFractions {
                isp: frac(ResourceKind::Isp),
                pud: frac(ResourceKind::Pud),
                ifp: frac(ResourceKind::Ifp),
            },
            overhead,
            coherence: self.storage.coherence,
            replays: self.replays,
            latencies_ns: latencies,
            timeline,
        };
        Ok(RunOutput {
            report,
            log: self.storage.log,
            decisions,
            final_contents: self.functional,
            events_processed: self.events,
        })
    }
}

/// Flash home of every page the trace touches: striped by page id, then
/// optionally with the inputs of each in-flash AND/OR moved into the block
/// of its first source.
pub fn initial_placement(trace: &Trace, cfg: &SimConfig) -> Result<Vec<(PageId, FlashAddress)>> {
    let topo = &cfg.topology;
    let mut pages: Vec<PageId> = trace
        .instrs
        .iter()
        .flat_map(|i| i.src_pages.iter().copied().chain(std::iter::once(i.dst_page)))
        .collect();
    if let Some(c) = &trace.contents {
        pages.extend(c.keys().copied());
    }
    pages.sort_unstable();
    pages.dedup();
    let mut homes: HashMap<PageId, FlashAddress> = HashMap::with_capacity(pages.len());
    for &p in &pages {
        homes.insert(p, topo.address_of(p)?);
    }
    if cfg.workload.colocate_operands {
        let mut written = std::collections::HashSet::new();
        let mut moved = std::collections::HashSet::new();
        for ins in &trace.instrs {
            if matches!(ins.op, VecOpType::And | VecOpType::Or) {
                let first = homes[&ins.src_pages[0]];
                for p in &ins.src_pages[1..] {
                    if !written.contains(p) && moved.insert(*p) {
                        let own = homes[p];
                        homes.insert(*p, FlashAddress { page: own.page, ..first });
                    }
                }
            }
            written.insert(ins.dst_page);
        }
    }
    Ok(pages.into_iter().map(|p| (p, homes[&p])).collect())
}

pub fn run(trace: &Trace, cfg: &SimConfig, policy: Policy, seed: u64) -> Result<StatsReport> {
    Ok(Simulator::new(trace, cfg, policy, seed)?.run_to_end()?.report)
}

pub fn run_with(
    trace: &Trace,
    cfg: &SimConfig,
    policy: Policy,
    seed: u64,
    opts: RunOptions,
) -> Result<RunOutput> {
    Simulator::with_options(trace, cfg, policy, seed, opts)?.run_to_end()
}

/// Runs in functional mode and checks final contents against a sequential
/// replay of the trace.
pub fn run_and_verify(trace: &Trace, cfg: &SimConfig, policy: Policy) -> Result<StatsReport> {
    let out = run_with(trace, cfg, policy, 0, RunOptions { functional: true })?;
    functional_verify(trace, out.final_contents.as_ref().expect("functional mode"))?;
    Ok(out.report)
}
