//! Intermittent-execution runtime: reacts to energy signals, runs workload
//! steps, checkpoints to and restores from non-volatile memory, and records
//! outages.
//!
//! Loads are expressed at the regulator output; the engine converts them to
//! capacitor draw.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::controller::{EnergySignal, SignalKind, SolutionKind};
use crate::workload::{AtomicOp, Repeat, WorkloadProgram};

/// Checkpoint memory with per-100-byte access costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NvStore {
    #[serde(skip)]
    pub checkpoint: Option<Checkpoint>,
    pub read_energy_per_100b: f64,
    pub write_energy_per_100b: f64,
    /// Standby draw of the memory. The memory is power-gated between
    /// accesses, so this is informational and not charged.
    pub static_power: f64,
    /// Access time of one read or write.
    #[serde(default = "default_nv_access_time")]
    pub access_time: f64,
}

fn default_nv_access_time() -> f64 {
    crate::workload::DEFAULT_OP_DURATION
}

impl Default for NvStore {
    fn default() -> Self {
        Self {
            checkpoint: None,
            read_energy_per_100b: 205.7e-6,
            write_energy_per_100b: 206.8e-6,
            static_power: 29.7e-6,
            access_time: default_nv_access_time(),
        }
    }
}

impl NvStore {
    pub fn read_op(&self, bytes: usize) -> AtomicOp {
        AtomicOp::new("nv_restore", self.read_energy_per_100b * bytes as f64 / 100.0, self.access_time)
    }

    pub fn write_op(&self, bytes: usize) -> AtomicOp {
        AtomicOp::new("nv_checkpoint", self.write_energy_per_100b * bytes as f64 / 100.0, self.access_time)
    }
}

/// Next step to execute: `step` of iteration `iteration`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Position {
    pub iteration: u64,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub position: Position,
    /// Image bytes still to be sent at checkpoint time.
    pub pending_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutageCause {
    StartupFailure,
    MidOpAbort,
    MissedCheckpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outage {
    pub t: f64,
    pub cause: OutageCause,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub boots: u64,
    pub outages: u64,
    pub checkpoints: u64,
    pub restores: u64,
    pub self_reboots: u64,
    pub tasks_completed: u64,
    pub packets_sent: u64,
    pub iterations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Boot,
    Restore,
    Checkpoint,
    Step,
}

#[derive(Debug, Clone, PartialEq)]
struct ActiveOp {
    kind: OpKind,
    op: AtomicOp,
    elapsed: f64,
    spent: f64,
}

/// Runtime occurrences surfaced in the waveform event column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuntimeEvent {
    OpStart(OpKind),
    OpDone(OpKind),
    OpAbort(OpKind),
    IterationDone,
    SelfReboot,
    Outage(OutageCause),
}

impl RuntimeEvent {
    pub fn label(&self) -> String {
        fn kind(k: &OpKind) -> &'static str {
            match k {
                OpKind::Boot => "boot",
                OpKind::Restore => "restore",
                OpKind::Checkpoint => "checkpoint",
                OpKind::Step => "step",
            }
        }
        match self {
            RuntimeEvent::OpStart(k) => format!("{}_start", kind(k)),
            RuntimeEvent::OpDone(k) => format!("{}_done", kind(k)),
            RuntimeEvent::OpAbort(k) => format!("{}_abort", kind(k)),
            RuntimeEvent::IterationDone => "iteration_done".into(),
            RuntimeEvent::SelfReboot => "self_reboot".into(),
            RuntimeEvent::Outage(c) => format!(
                "outage_{}",
                match c {
                    OutageCause::StartupFailure => "startup_failure",
                    OutageCause::MidOpAbort => "mid_op_abort",
                    OutageCause::MissedCheckpoint => "missed_checkpoint",
                }
            ),
        }
    }
}

/// One finished workload iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u64,
    pub start: f64,
    pub end: f64,
    /// Workload-op energy spent on this iteration, aborted attempts included.
    pub energy: f64,
    /// Checkpoints taken and restores made part-way through the iteration.
    pub checkpoints: u64,
    pub restores: u64,
}

/// Per-image reassembly result at the receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub index: u64,
    pub bytes_received: usize,
    pub complete: bool,
    /// Every reassembled byte equals the transmitted pattern at its offset.
    pub verified: bool,
    pub duplicate_packets: u64,
    pub gaps: u64,
    /// Contiguous packet runs, one per power session that sent data.
    pub segments: u64,
}

/// Deterministic payload byte at `offset` of image `image`.
pub fn pattern_byte(image: u64, offset: usize) -> u8 {
    (offset as u64).wrapping_mul(31).wrapping_add(image.wrapping_mul(7)) as u8
}

/// Receiver side of the image stream, checking byte-range continuity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Receiver {
    image_bytes: usize,
    open: BTreeMap<u64, Reassembly>,
    pub images: Vec<ImageRecord>,
}

#[derive(Debug, Clone, PartialEq)]
struct Reassembly {
    record: ImageRecord,
    buf: Vec<u8>,
    last_session: Option<u64>,
}

impl Receiver {
    pub fn new(image_bytes: usize) -> Self {
        Self {
            image_bytes,
            ..Default::default()
        }
    }

    /// Accepts the packet carrying `payload` at image offset `range.start`.
    pub fn on_packet(&mut self, image: u64, range: Range<usize>, payload: &[u8], session: u64) {
        debug_assert_eq!(payload.len(), range.len());
        if let Some(done) = self.images.iter_mut().find(|r| r.index == image) {
            done.duplicate_packets += 1;
            return;
        }
        let total = self.image_bytes;
        let r = self.open.entry(image).or_insert_with(|| Reassembly {
            record: ImageRecord {
                index: image,
                bytes_received: 0,
                complete: false,
                verified: false,
                duplicate_packets: 0,
                gaps: 0,
                segments: 0,
            },
            buf: Vec::with_capacity(total),
            last_session: None,
        });
        let next = r.buf.len();
        if range.end <= next {
            r.record.duplicate_packets += 1;
            return;
        }
        if range.start > next {
            r.record.gaps += 1;
            return;
        }
        if r.last_session != Some(session) {
            r.record.segments += 1;
            r.last_session = Some(session);
        }
        r.buf.extend_from_slice(&payload[next - range.start..]);
        r.record.bytes_received = r.buf.len();
        if r.buf.len() == total {
            r.record.complete = true;
            self.close(image);
        }
    }

    fn close(&mut self, image: u64) {
        if let Some(Reassembly { mut record, buf, .. }) = self.open.remove(&image) {
            record.verified = buf.iter().enumerate().all(|(i, b)| *b == pattern_byte(image, i));
            self.images.push(record);
        }
    }

    /// Closes every in-progress image and orders the records by index.
    pub fn finish(&mut self) {
        let open: Vec<u64> = self.open.keys().copied().collect();
        for image in open {
            self.close(image);
        }
        self.images.sort_by_key(|r| r.index);
    }
}

/// Volatile and persistent state of one simulated node.
#[derive(Debug, Clone)]
pub struct Runtime {
    program: WorkloadProgram,
    nv: NvStore,
    kind: SolutionKind,
    checkpointing: bool,

    powered: bool,
    ram_valid: bool,
    boot_pending: bool,
    good: bool,
    sleeping: bool,
    sleep_requested: bool,
    checkpoint_pending: bool,
    wake_armed: bool,
    committed_since_boot: bool,
    session: u64,
    position: Position,
    committed: Position,
    next_iteration_at: f64,
    iteration_start: Option<f64>,
    iteration_energy: f64,
    tracked_iteration: Option<u64>,
    iteration_checkpoints: u64,
    iteration_restores: u64,
    yield_requested: bool,
    low_resume: bool,
    resumed_session: bool,
    headroom: Option<f64>,
    active: Option<ActiveOp>,

    pub counters: Counters,
    pub outages: Vec<Outage>,
    pub iterations: Vec<IterationRecord>,
    pub receiver: Option<Receiver>,
    pub task_energy: f64,
    pub nv_energy: f64,
    pub boot_energy: f64,
    pub aborted_energy: f64,
    events: Vec<RuntimeEvent>,
}

impl Runtime {
    pub fn new(program: WorkloadProgram, nv: NvStore, kind: SolutionKind) -> Self {
        let checkpointing = program.stateful() && kind != SolutionKind::Uvlo;
        let receiver = program.image_bytes.map(Receiver::new);
        Self {
            program,
            nv,
            kind,
            checkpointing,
            powered: false,
            ram_valid: false,
            boot_pending: false,
            good: false,
            sleeping: false,
            sleep_requested: false,
            checkpoint_pending: false,
            wake_armed: false,
            committed_since_boot: false,
            session: 0,
            position: Position::default(),
            committed: Position::default(),
            next_iteration_at: 0.0,
            iteration_start: None,
            iteration_energy: 0.0,
            tracked_iteration: None,
            iteration_checkpoints: 0,
            iteration_restores: 0,
            yield_requested: false,
            low_resume: false,
            resumed_session: false,
            headroom: None,
            active: None,
            counters: Counters::default(),
            outages: Vec::new(),
            iterations: Vec::new(),
            receiver,
            task_energy: 0.0,
            nv_energy: 0.0,
            boot_energy: 0.0,
            aborted_energy: 0.0,
            events: Vec::new(),
        }
    }

    pub fn program(&self) -> &WorkloadProgram {
        &self.program
    }

    pub fn nv(&self) -> &NvStore {
        &self.nv
    }

    pub fn position(&self) -> Position {
        self.position
    }

    pub fn checkpointing(&self) -> bool {
        self.checkpointing
    }

    pub fn powered(&self) -> bool {
        self.powered
    }

    /// Drains the events recorded since the last call.
    pub fn take_events(&mut self) -> Vec<RuntimeEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn finish(&mut self) {
        if let Some(r) = self.receiver.as_mut() {
            r.finish();
        }
    }

    /// The controller wakes a checkpointed node below `v_pgood` to finish
    /// partial work.
    pub fn set_low_resume(&mut self, on: bool) {
        self.low_resume = on;
    }

    /// Energy the software monitor sees above `v_psleep`. When set, a new
    /// iteration starts only if it covers the first op.
    pub fn set_headroom(&mut self, energy: Option<f64>) {
        self.headroom = energy;
    }

    /// Returns and clears a pending request to drop the task-operation latch.
    pub fn take_yield(&mut self) -> bool {
        std::mem::take(&mut self.yield_requested)
    }

    /// Checkpointed or in-RAM work is part-way through an iteration.
    pub fn resume_pending(&self) -> bool {
        self.checkpointing && (self.position.step != 0 || self.committed.step != 0)
    }

    fn finished(&self) -> bool {
        self.program
            .max_iterations
            .is_some_and(|m| self.counters.iterations >= m)
    }

    /// Latest resumable position at or before `p`.
    fn marker_floor(&self, p: Position) -> Position {
        let step = (0..=p.step)
            .rev()
            .find(|&j| j == 0 || self.program.steps[j - 1].marker)
            .unwrap_or(0);
        Position { step, ..p }
    }

    fn uncommitted(&self) -> bool {
        let step_active = matches!(self.active, Some(ActiveOp { kind: OpKind::Step, .. }));
        if self.checkpointing {
            step_active || self.marker_floor(self.position) != self.committed
        } else {
            step_active || self.position.step != 0
        }
    }

    pub fn on_signal(&mut self, sig: &EnergySignal) {
        match sig.kind {
            SignalKind::PStart => {
                self.on_pstart(sig.t);
                if self.kind == SolutionKind::Uvlo {
                    self.on_pgood(sig.t);
                }
            }
            SignalKind::PGood => self.on_pgood(sig.t),
            SignalKind::PSleep => self.on_psleep(sig.t),
            SignalKind::PClose => self.on_pclose(sig.t),
        }
    }

    pub fn on_pstart(&mut self, _t: f64) {
        self.counters.boots += 1;
        self.session += 1;
        self.powered = true;
        self.ram_valid = false;
        self.boot_pending = self.program.boot.is_some();
        self.good = false;
        self.sleeping = false;
        self.sleep_requested = false;
        self.checkpoint_pending = false;
        self.committed_since_boot = false;
        self.resumed_session = false;
        self.position = self.committed;
    }

    pub fn on_pgood(&mut self, t: f64) {
        self.resumed_session = self.low_resume && self.sleeping && self.resume_pending();
        self.good = true;
        self.sleeping = false;
        self.sleep_requested = false;
        self.wake_armed = true;
        if let Repeat::Continuous { .. } = self.program.repeat {
            self.next_iteration_at = self.next_iteration_at.min(t);
        }
    }

    pub fn on_psleep(&mut self, _t: f64) {
        self.good = false;
        self.sleep_requested = true;
        if let Some(a) = &self.active {
            if a.kind == OpKind::Step && a.op.interruptible {
                self.abort_active();
            }
        }
        if self.active.is_none() {
            self.enter_sleep();
        }
    }

    /// Called once no op is in flight after a `PSleep`.
    fn enter_sleep(&mut self) {
        self.sleep_requested = false;
        if self.checkpointing && self.uncommitted() {
            self.checkpoint_pending = true;
        } else {
            if !self.checkpointing && self.position.step != 0 {
                self.position = self.committed;
            }
            self.sleeping = true;
        }
    }

    pub fn on_pclose(&mut self, t: f64) {
        let pending_work = !self.finished() || self.uncommitted();
        let cause = if self.checkpointing && self.uncommitted() {
            Some(OutageCause::MissedCheckpoint)
        } else if !self.committed_since_boot && pending_work {
            Some(OutageCause::StartupFailure)
        } else if self.uncommitted() {
            Some(OutageCause::MidOpAbort)
        } else {
            None
        };
        if let Some(cause) = cause {
            self.counters.outages += 1;
            self.outages.push(Outage { t, cause });
            self.events.push(RuntimeEvent::Outage(cause));
        }
        self.abort_active();
        self.powered = false;
        self.ram_valid = false;
        self.good = false;
        self.sleeping = false;
        self.sleep_requested = false;
        self.checkpoint_pending = false;
        self.boot_pending = false;
        self.position = self.committed;
    }

    fn abort_active(&mut self) {
        if let Some(a) = self.active.take() {
            self.events.push(RuntimeEvent::OpAbort(a.kind));
            self.aborted_energy += a.spent;
            if a.kind == OpKind::Step {
                self.iteration_energy += a.spent;
            }
        }
    }

    fn work_available(&self, t: f64) -> bool {
        if !self.good || self.finished() && self.position.step == 0 {
            return false;
        }
        if self.position.step != 0 {
            return true;
        }
        if let Some(h) = self.headroom {
            if h < self.program.steps[0].op.energy {
                return false;
            }
        }
        match self.program.repeat {
            Repeat::OncePerWake => self.wake_armed,
            Repeat::Continuous { .. } => t + 1e-12 >= self.next_iteration_at,
        }
    }

    fn next_op(&mut self, t: f64) -> Option<(OpKind, AtomicOp)> {
        if self.boot_pending {
            self.boot_pending = false;
            return self.program.boot.clone().map(|op| (OpKind::Boot, op));
        }
        if self.checkpoint_pending {
            return Some((OpKind::Checkpoint, self.nv.write_op(self.program.checkpoint_bytes)));
        }
        if !self.work_available(t) {
            return None;
        }
        if !self.ram_valid {
            if self.checkpointing && self.nv.checkpoint.is_some() {
                return Some((OpKind::Restore, self.nv.read_op(self.program.checkpoint_bytes)));
            }
            self.ram_valid = true;
            self.position = self.committed;
        }
        if self.position.step == 0 {
            self.iteration_start = Some(t);
            if self.tracked_iteration != Some(self.position.iteration) {
                self.tracked_iteration = Some(self.position.iteration);
                self.iteration_energy = 0.0;
                self.iteration_checkpoints = 0;
                self.iteration_restores = 0;
            }
            if let Repeat::Continuous { period } = self.program.repeat {
                self.next_iteration_at = t + period;
            }
        }
        let op = self.program.steps[self.position.step].op.clone();
        Some((OpKind::Step, op))
    }

    /// Advances the node by one step of length `dt` starting at `t` and
    /// returns the mean load power at the regulator output.
    pub fn execute_tick(&mut self, t: f64, dt: f64) -> f64 {
        if !self.powered {
            return 0.0;
        }
        if self.active.is_none() {
            if let Some((kind, op)) = self.next_op(t) {
                if matches!(kind, OpKind::Step | OpKind::Restore) {
                    self.sleeping = false;
                }
                self.events.push(RuntimeEvent::OpStart(kind));
                self.active = Some(ActiveOp {
                    kind,
                    op,
                    elapsed: 0.0,
                    spent: 0.0,
                });
            }
        }
        let Some(active) = self.active.as_mut() else {
            return self.background_power();
        };
        let p = active.op.power();
        let remaining = active.op.duration - active.elapsed;
        if remaining > dt * (1.0 + 1e-9) {
            active.elapsed += dt;
            active.spent += p * dt;
            return p;
        }
        // Completes within this step: exact remaining energy, then background.
        let e_op = active.op.energy - active.spent;
        let rest = (dt - remaining).max(0.0);
        let done = self.active.take().expect("active op");
        self.complete(done, t + remaining);
        (e_op + self.background_power() * rest) / dt
    }

    fn background_power(&self) -> f64 {
        if self.good && !self.sleeping {
            self.program.idle_power
        } else {
            self.program.sleep_power
        }
    }

    fn complete(&mut self, done: ActiveOp, t_end: f64) {
        self.events.push(RuntimeEvent::OpDone(done.kind));
        let energy = done.op.energy;
        match done.kind {
            OpKind::Boot => self.boot_energy += energy,
            OpKind::Restore => {
                self.nv_energy += energy;
                self.counters.restores += 1;
                let ckpt = self.nv.checkpoint.expect("restore requires a checkpoint");
                self.position = ckpt.position;
                self.committed = ckpt.position;
                if ckpt.position.step != 0 {
                    self.iteration_restores += 1;
                }
                self.ram_valid = true;
                self.session += 1;
            }
            OpKind::Checkpoint => {
                self.nv_energy += energy;
                self.counters.checkpoints += 1;
                self.checkpoint_pending = false;
                let position = self.marker_floor(self.position);
                let sent = self.program.steps[..position.step]
                    .iter()
                    .filter_map(|s| s.payload.as_ref())
                    .map(|r| r.len())
                    .sum::<usize>();
                self.nv.checkpoint = Some(Checkpoint {
                    position,
                    pending_bytes: self.program.image_bytes.unwrap_or(0).saturating_sub(sent),
                });
                self.committed = position;
                self.committed_since_boot = true;
                if position.step != 0 {
                    self.iteration_checkpoints += 1;
                }
                // Self-reboot: volatile state is dropped, the node sleeps.
                self.ram_valid = false;
                self.sleeping = true;
                self.counters.self_reboots += 1;
                self.events.push(RuntimeEvent::SelfReboot);
            }
            OpKind::Step => self.complete_step(done, t_end),
        }
        if self.sleep_requested && self.active.is_none() {
            self.enter_sleep();
        }
    }

    fn complete_step(&mut self, done: ActiveOp, t_end: f64) {
        let energy = done.op.energy;
        self.task_energy += energy;
        self.iteration_energy += energy;
        self.counters.tasks_completed += 1;
        let step = &self.program.steps[self.position.step];
        if let Some(range) = step.payload.clone() {
            self.counters.packets_sent += 1;
            let (image, session) = (self.position.iteration, self.session);
            if let Some(r) = self.receiver.as_mut() {
                let payload: Vec<u8> = range.clone().map(|off| pattern_byte(image, off)).collect();
                r.on_packet(image, range, &payload, session);
            }
        }
        self.position.step += 1;
        if self.position.step == self.program.steps.len() {
            self.events.push(RuntimeEvent::IterationDone);
            self.iterations.push(IterationRecord {
                index: self.position.iteration,
                start: self.iteration_start.unwrap_or(t_end),
                end: t_end,
                energy: self.iteration_energy,
                checkpoints: self.iteration_checkpoints,
                restores: self.iteration_restores,
            });
            self.counters.iterations += 1;
            self.position = Position {
                iteration: self.position.iteration + 1,
                step: 0,
            };
            self.iteration_start = None;
            self.wake_armed = false;
            if !self.checkpointing {
                self.committed = self.position;
                self.committed_since_boot = true;
            }
            // A software-monitored node that woke on the low resume threshold
            // only has energy to finish what it started; it sleeps until the
            // next full wake-up before starting anything new.
            let once = self.program.repeat == Repeat::OncePerWake;
            if self.kind == SolutionKind::Apc && (once || self.resumed_session) {
                self.yield_requested = true;
                self.good = false;
                self.sleep_requested = true;
            }
        }
    }
}
