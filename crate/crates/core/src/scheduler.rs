//! Process model and the scheduler main loop.
//!
//! The scheduler is cooperative until timed synchronisation is used: a
//! process runs until its next API call, and only an alarm for a process with
//! an earlier deadline can take the CPU away from it.
//!
//! Each process body runs on its own OS thread, but the threads never run
//! concurrently. The scheduler hands a baton (a [`Reply`]) to exactly one
//! process and then waits for that process's next [`Request`]; every API call
//! on [`Proc`] is such a round trip and therefore the only place a process
//! can be suspended. All runtime state lives in [`Kernel`], which is touched
//! only by the scheduler thread.

use std::collections::VecDeque;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde::{Deserialize, Serialize};

use crate::audit::AuditLog;
use crate::bridge::{self, Board, DriverId, DriverKind, DriverTable, ExternalThreadId, StimulusScript};
use crate::error::{Error, Result};
use crate::events::{ChannelId, ChannelTable, Event, EventKind, Value};
use crate::time::{Clock, Next, Time, TimeUnits, Timeline, DEFAULT_CLOCK_HZ, TIME_MAX};
use crate::timed::WaitQueue;
use crate::trace::{Trace, TraceKind, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

/// `msg_type` of a message carrying driver data.
pub const MSG_DRIVER_DATA: u32 = 0;
/// `msg_type` of a message from the alarm subsystem.
pub const MSG_ALARM: u32 = 1;
/// `sender_id` used by the alarm subsystem; outside any board's driver range.
pub const ALARM_SENDER_ID: u32 = u32::MAX;

/// Envelope from a driver or the alarm subsystem to the scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub sender_id: u32,
    pub msg_type: u32,
    pub data: u32,
    pub timestamp: Time,
}

impl Message {
    pub fn driver(driver: u32, data: u32, timestamp: Time) -> Self {
        Message {
            sender_id: driver,
            msg_type: MSG_DRIVER_DATA,
            data,
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProcState {
    Ready,
    Running,
    Blocked,
    Waiting,
    Finished,
}

/// What a process does the next time it is made current.
#[derive(Debug)]
pub(crate) enum Resume {
    /// Thread not started yet.
    Start,
    /// Hand this reply to the thread and let it run.
    Reply(Reply),
    /// Perform `sync` on this event first (second half of a timed sync).
    Sync(Event),
    /// Keep consuming this many ticks of busy work.
    Busy(Time),
    /// Blocked or finished; nothing to resume yet.
    Nothing,
}

/// A process context.
#[derive(Debug)]
pub struct Context {
    pub pid: ProcessId,
    /// The process's logical clock; advances only at timed synchronisation.
    pub t_local: Time,
    /// Absolute deadline; [`TIME_MAX`] for untimed processes.
    pub deadline: Time,
    pub state: ProcState,
    /// The event a blocked process is waiting on.
    pub remembered_event: Option<Event>,
    pub(crate) resume: Resume,
    /// Finite deadline of the timed sync in progress, for miss detection.
    pub(crate) pending_deadline: Option<Time>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    pub clock_hz: u64,
    /// Baselines shorter than this skip the wait queue.
    pub epsilon: Time,
    pub max_channels: usize,
    pub max_processes: usize,
    pub driver_buffer_depth: usize,
    /// Check runtime invariants after every scheduler step.
    pub audit: bool,
    /// Stop after this many scheduler steps.
    pub max_steps: Option<u64>,
}

pub const DEFAULT_EPSILON: Time = 2;
pub const DEFAULT_MAX_PROCESSES: usize = 16;

impl Default for Config {
    fn default() -> Self {
        Config {
            clock_hz: DEFAULT_CLOCK_HZ,
            epsilon: DEFAULT_EPSILON,
            max_channels: crate::events::DEFAULT_MAX_CHANNELS,
            max_processes: DEFAULT_MAX_PROCESSES,
            driver_buffer_depth: bridge::DEFAULT_DRIVER_BUFFER_DEPTH,
            audit: false,
            max_steps: None,
        }
    }
}

pub type TraceSink = Box<dyn FnMut(&TraceRecord) + Send>;

/// Runtime state. Every algorithm of the runtime is a method on this type;
/// it knows nothing about threads.
pub struct Kernel {
    pub(crate) config: Config,
    pub(crate) timeline: Timeline,
    pub(crate) channels: ChannelTable,
    pub(crate) drivers: DriverTable,
    pub(crate) procs: Vec<Context>,
    pub(crate) ready_q: VecDeque<ProcessId>,
    pub(crate) wait_q: WaitQueue,
    pub(crate) current: Option<ProcessId>,
    pub(crate) trace: Trace,
    pub(crate) audit: AuditLog,
    sink: Option<TraceSink>,
}

impl Kernel {
    pub fn new(config: Config, board: &Board) -> Self {
        let clock = Clock::new(config.clock_hz);
        Kernel {
            timeline: Timeline::new(clock),
            channels: ChannelTable::with_capacity(config.max_channels),
            drivers: board.driver_table(config.driver_buffer_depth),
            procs: Vec::new(),
            ready_q: VecDeque::new(),
            wait_q: WaitQueue::default(),
            current: None,
            trace: Trace::new(),
            audit: AuditLog::default(),
            sink: None,
            config,
        }
    }

    pub fn now(&self) -> Time {
        self.timeline.now()
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn channels(&self) -> &ChannelTable {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut ChannelTable {
        &mut self.channels
    }

    pub fn drivers(&self) -> &DriverTable {
        &self.drivers
    }

    pub fn timeline(&self) -> &Timeline {
        &self.timeline
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn current(&self) -> Option<ProcessId> {
        self.current
    }

    pub fn ready_queue(&self) -> impl Iterator<Item = &ProcessId> {
        self.ready_q.iter()
    }

    pub fn wait_queue(&self) -> &WaitQueue {
        &self.wait_q
    }

    pub fn context(&self, pid: ProcessId) -> &Context {
        &self.procs[pid.0 as usize]
    }

    pub(crate) fn ctx(&mut self, pid: ProcessId) -> &mut Context {
        &mut self.procs[pid.0 as usize]
    }

    pub fn contexts(&self) -> &[Context] {
        &self.procs
    }

    pub(crate) fn set_sink(&mut self, sink: TraceSink) {
        self.sink = Some(sink);
    }

    pub(crate) fn record(&mut self, r: TraceRecord) {
        if let Some(sink) = self.sink.as_mut() {
            sink(&r);
        }
        self.trace.push(r);
    }

    /// Allocate a context and queue it behind the already-ready processes.
    pub fn new_context(&mut self) -> Result<ProcessId> {
        if self.procs.len() >= self.config.max_processes {
            return Err(Error::resource(format!(
                "process capacity {} exhausted",
                self.config.max_processes
            )));
        }
        let pid = ProcessId(self.procs.len() as u32);
        let now = self.now();
        self.procs.push(Context {
            pid,
            t_local: now,
            deadline: TIME_MAX,
            state: ProcState::Ready,
            remembered_event: None,
            resume: Resume::Start,
            pending_deadline: None,
        });
        self.ready_q.push_back(pid);
        self.record(TraceRecord::new(now, TraceKind::Spawn).pid(pid));
        Ok(pid)
    }

    /// Take the head of the ready queue, if any, as the running process.
    pub fn dispatch_new_process(&mut self) {
        debug_assert!(self.current.is_none());
        if let Some(pid) = self.ready_q.pop_front() {
            self.ctx(pid).state = ProcState::Running;
            self.current = Some(pid);
        }
    }

    /// Put a ready process at the back of the ready queue with `resume`.
    pub(crate) fn make_ready(&mut self, pid: ProcessId, resume: Resume) {
        let ctx = self.ctx(pid);
        ctx.state = ProcState::Ready;
        ctx.resume = resume;
        self.ready_q.push_back(pid);
    }

    /// The running process gives up the CPU (blocked, waiting or finished).
    pub(crate) fn relinquish(&mut self, pid: ProcessId) {
        if self.current == Some(pid) {
            self.current = None;
        }
        self.dispatch_new_process();
    }

    pub(crate) fn finish(&mut self, pid: ProcessId) {
        let now = self.now();
        let ctx = self.ctx(pid);
        ctx.state = ProcState::Finished;
        ctx.resume = Resume::Nothing;
        ctx.remembered_event = None;
        self.record(TraceRecord::new(now, TraceKind::Finish).pid(pid));
        self.relinquish(pid);
    }

    pub fn all_finished(&self) -> bool {
        self.procs.iter().all(|c| c.state == ProcState::Finished)
    }

    pub fn spawn_external(&mut self, chan: ChannelId, driver: DriverId) -> Result<ExternalThreadId> {
        bridge::spawn_external(&mut self.channels, &mut self.drivers, chan, driver)
    }

    /// Schedule a device event. Unknown or unbound drivers are dropped at
    /// delivery time, with a trace record.
    pub fn inject_stimulus(&mut self, driver: DriverId, data: u32, at: Time) -> Result<()> {
        if let Ok(d) = self.drivers.get(driver) {
            if !d.kind.is_readable() {
                return Err(Error::usage(format!("{driver} ({}) does not produce data", d.kind)));
            }
        }
        self.timeline.schedule(Message::driver(driver.0, data, at));
        Ok(())
    }

    /// Dispatch a message from a driver or the alarm subsystem.
    pub fn handle_msg(&mut self, msg: Message) -> Result<()> {
        match msg.msg_type {
            MSG_ALARM => self.handle_alarm(),
            MSG_DRIVER_DATA => self.deliver_driver_word(DriverId(msg.sender_id), msg.data),
            other => {
                log::warn!("dropping message with unknown type {other}");
                Ok(())
            }
        }
    }

    fn deliver_driver_word(&mut self, driver: DriverId, word: u32) -> Result<()> {
        let now = self.now();
        let bound = self.drivers.get(driver).ok().and_then(|d| d.bound_channel);
        let Some(ch) = bound else {
            log::warn!("dropping stimulus for unbound {driver}");
            self.record(
                TraceRecord::new(now, TraceKind::DroppedStimulus)
                    .driver(driver)
                    .data(Some(word)),
            );
            return Ok(());
        };
        self.record(
            TraceRecord::new(now, TraceKind::DriverMsg)
                .channel(ch)
                .driver(driver)
                .data(Some(word)),
        );
        let receiver = self.channels.get_mut(ch)?.recvq.pop_front();
        match receiver {
            Some(pid) => {
                let idx = self.complete_blocked(pid, ch, EventKind::Recv)?;
                self.record(
                    TraceRecord::new(now, TraceKind::Rendezvous)
                        .pid(pid)
                        .channel(ch)
                        .driver(driver)
                        .data(Some(word)),
                );
                self.make_ready(
                    pid,
                    Resume::Reply(Reply::Synced {
                        base: idx,
                        value: Value::from(word),
                    }),
                );
            }
            None => {
                if let Some(lost) = self.drivers.get_mut(driver)?.buffer(word) {
                    self.record(
                        TraceRecord::new(now, TraceKind::DriverOverflow)
                            .channel(ch)
                            .driver(driver)
                            .data(Some(lost)),
                    );
                }
            }
        }
        Ok(())
    }

    /// Some blocked process listens on a channel bound to a device that can
    /// produce data, so the system is waiting for the outside world rather
    /// than deadlocked.
    pub fn awaiting_input(&self) -> bool {
        self.procs
            .iter()
            .filter(|c| c.state == ProcState::Blocked)
            .filter_map(|c| c.remembered_event.as_ref())
            .flat_map(|e| e.bases())
            .any(|b| {
                b.kind == EventKind::Recv
                    && self
                        .channels
                        .get(b.channel)
                        .ok()
                        .and_then(|ch| ch.driver_binding)
                        .and_then(|d| self.drivers.get(d).ok())
                        .is_some_and(|d| d.kind.is_readable())
            })
    }

    /// Processes blocked right now, with the channels they wait on.
    pub fn blocked_processes(&self) -> Vec<BlockedProcess> {
        self.procs
            .iter()
            .filter(|c| c.state == ProcState::Blocked)
            .map(|c| BlockedProcess {
                pid: c.pid,
                waiting_on: c
                    .remembered_event
                    .as_ref()
                    .map(|e| e.bases().iter().map(|b| (b.kind, b.channel)).collect())
                    .unwrap_or_default(),
            })
            .collect()
    }
}

/// A process left blocked when the run deadlocked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockedProcess {
    pub pid: ProcessId,
    pub waiting_on: Vec<(EventKind, ChannelId)>,
}

impl fmt::Display for BlockedProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} blocked on", self.pid)?;
        for (kind, ch) in &self.waiting_on {
            let k = match kind {
                EventKind::Send => "send",
                EventKind::Recv => "recv",
            };
            write!(f, " {k} {ch}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    AllFinished,
    LimitReached,
    Deadlock(Vec<BlockedProcess>),
    /// Every process is blocked, but at least one listens to a device that
    /// may still produce data, and the run has no time limit.
    AwaitingInput,
    StepLimit,
    /// A live input source asked the run to end.
    Stopped,
}

impl Outcome {
    pub fn name(&self) -> &'static str {
        match self {
            Outcome::AllFinished => "all_finished",
            Outcome::LimitReached => "limit_reached",
            Outcome::Deadlock(_) => "deadlock",
            Outcome::AwaitingInput => "awaiting_input",
            Outcome::StepLimit => "step_limit",
            Outcome::Stopped => "stopped",
        }
    }
}

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct RunReport {
    pub outcome: Outcome,
    pub trace: Trace,
    pub end_time: Time,
    pub steps: u64,
    pub drivers: DriverTable,
    /// Invariant violations seen by the audit hook (empty unless auditing).
    pub violations: Vec<String>,
    /// Moments where a ready process held an earlier finite deadline than
    /// the running one.
    pub edf_violations: Vec<String>,
}

/// Result of waiting on a live input source while every process is blocked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LiveWait {
    /// A device event arrived; inject it at virtual time `at`.
    Stimulus {
        at: Time,
        driver: DriverId,
        data: u32,
    },
    /// Wall-clock caught up with the requested virtual instant.
    Elapsed,
    Stop,
}

/// A source of device events that arrive while the simulation runs, paced
/// against wall-clock time.
pub trait LiveInput: Send {
    /// Called when every process is blocked at virtual time `now`. `next` is
    /// the next instant at which something is scheduled (or the run limit);
    /// `None` means nothing will ever happen without live input.
    fn wait(&mut self, now: Time, next: Option<Time>) -> LiveWait;
}

pub type ProcessBody = Box<dyn FnOnce(&mut Proc) -> Result<()> + Send + 'static>;

pub(crate) enum Request {
    NewChannel,
    Spawn(ProcessBody),
    SpawnExternal(ChannelId, DriverId),
    Sync(Event),
    SyncT {
        baseline: Time,
        deadline: Time,
        event: Event,
    },
    Busy(Time),
    Now,
    LocalTime,
    Exit(Result<()>),
}

#[derive(Debug)]
pub(crate) enum Reply {
    Start,
    Unit,
    Channel(ChannelId),
    Pid(ProcessId),
    External(ExternalThreadId),
    Synced { base: usize, value: Value },
    Time(Time),
    Err(Error),
    Halt,
}

/// A process's handle on the runtime. Every method that talks to the
/// scheduler is a suspension point.
pub struct Proc {
    pid: ProcessId,
    requests: Sender<(ProcessId, Request)>,
    replies: Receiver<Reply>,
    channel_count: Arc<AtomicUsize>,
    units: TimeUnits,
    halted: bool,
}

impl Proc {
    pub fn pid(&self) -> ProcessId {
        self.pid
    }

    /// Unit conversions for the runtime's clock.
    pub fn units(&self) -> TimeUnits {
        self.units
    }

    fn call(&mut self, req: Request) -> Result<Reply> {
        if self.halted {
            return Err(Error::Halted);
        }
        if self.requests.send((self.pid, req)).is_err() {
            self.halted = true;
            return Err(Error::Halted);
        }
        match self.replies.recv() {
            Ok(Reply::Halt) | Err(_) => {
                self.halted = true;
                Err(Error::Halted)
            }
            Ok(Reply::Err(e)) => Err(e),
            Ok(r) => Ok(r),
        }
    }

    fn unexpected(r: Reply) -> Error {
        Error::internal(format!("unexpected scheduler reply {r:?}"))
    }

    pub fn channel(&mut self) -> Result<ChannelId> {
        match self.call(Request::NewChannel)? {
            Reply::Channel(c) => Ok(c),
            r => Err(Self::unexpected(r)),
        }
    }

    pub fn spawn<F>(&mut self, body: F) -> Result<ProcessId>
    where
        F: FnOnce(&mut Proc) -> Result<()> + Send + 'static,
    {
        match self.call(Request::Spawn(Box::new(body)))? {
            Reply::Pid(p) => Ok(p),
            r => Err(Self::unexpected(r)),
        }
    }

    pub fn spawn_external(&mut self, chan: ChannelId, driver: DriverId) -> Result<ExternalThreadId> {
        match self.call(Request::SpawnExternal(chan, driver))? {
            Reply::External(x) => Ok(x),
            r => Err(Self::unexpected(r)),
        }
    }

    fn check_channel(&self, chan: ChannelId) -> Result<()> {
        if (chan.0 as usize) < self.channel_count.load(Ordering::Acquire) {
            Ok(())
        } else {
            Err(Error::usage(format!("unknown channel {chan}")))
        }
    }

    /// The intent to send `payload` on `chan`. Nothing is communicated yet.
    pub fn send(&self, chan: ChannelId, payload: impl Into<Value>) -> Result<Event> {
        self.check_channel(chan)?;
        Ok(crate::events::BaseEvent::send(chan, payload.into()).into())
    }

    /// The intent to receive on `chan`.
    pub fn recv(&self, chan: ChannelId) -> Result<Event> {
        self.check_channel(chan)?;
        Ok(crate::events::BaseEvent::recv(chan).into())
    }

    /// Synchronise on `event`, blocking until one of its bases completes,
    /// then apply that base's wrap functions in this process.
    pub fn sync(&mut self, event: &Event) -> Result<Value> {
        let reply = self.call(Request::Sync(event.clone()))?;
        self.finish_sync(event, reply)
    }

    /// Timed synchronisation: start synchronising no earlier than `baseline`
    /// ticks after this process's local time, ideally within `deadline`
    /// further ticks (`0` = no deadline).
    pub fn sync_t(&mut self, baseline: Time, deadline: Time, event: &Event) -> Result<Value> {
        let reply = self.call(Request::SyncT {
            baseline,
            deadline,
            event: event.clone(),
        })?;
        self.finish_sync(event, reply)
    }

    /// Signed-argument form of [`Proc::sync_t`]; negative times are a usage
    /// error.
    pub fn sync_t_signed(&mut self, baseline: i64, deadline: i64, event: &Event) -> Result<Value> {
        if baseline < 0 || deadline < 0 {
            return Err(Error::usage(format!("negative timing window ({baseline}, {deadline})")));
        }
        self.sync_t(baseline as Time, deadline as Time, event)
    }

    fn finish_sync(&mut self, event: &Event, reply: Reply) -> Result<Value> {
        let Reply::Synced { base, value } = reply else {
            return Err(Self::unexpected(reply));
        };
        let wraps = event
            .bases()
            .get(base)
            .ok_or_else(|| Error::internal(format!("base index {base} out of range")))?
            .wraps
            .clone();
        wraps.iter().try_fold(value, |v, w| w.call(self, v))
    }

    /// Occupy the CPU for `ticks` of virtual time. Pure computation is
    /// otherwise free; this is how a process models work that takes time and
    /// can be preempted.
    pub fn busy(&mut self, ticks: Time) -> Result<()> {
        match self.call(Request::Busy(ticks))? {
            Reply::Unit => Ok(()),
            r => Err(Self::unexpected(r)),
        }
    }

    /// Absolute virtual time.
    pub fn now(&mut self) -> Result<Time> {
        match self.call(Request::Now)? {
            Reply::Time(t) => Ok(t),
            r => Err(Self::unexpected(r)),
        }
    }

    /// This process's local clock.
    pub fn local_time(&mut self) -> Result<Time> {
        match self.call(Request::LocalTime)? {
            Reply::Time(t) => Ok(t),
            r => Err(Self::unexpected(r)),
        }
    }
}

struct ProcThread {
    replies: Sender<Reply>,
    handle: Option<JoinHandle<()>>,
}

/// Run bound: virtual time and/or number of scheduler steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limit {
    pub until: Time,
}

impl Limit {
    pub fn until(t: Time) -> Self {
        Limit { until: t }
    }

    pub fn none() -> Self {
        Limit { until: TIME_MAX }
    }
}

/// A runtime instance: kernel state plus the process threads.
pub struct Runtime {
    kernel: Kernel,
    threads: Vec<ProcThread>,
    requests_tx: Sender<(ProcessId, Request)>,
    requests_rx: Receiver<(ProcessId, Request)>,
    channel_count: Arc<AtomicUsize>,
    live: Option<Box<dyn LiveInput>>,
    steps: u64,
}

impl Runtime {
    pub fn new(config: Config, board: &Board) -> Self {
        let (tx, rx) = mpsc::channel();
        Runtime {
            kernel: Kernel::new(config, board),
            threads: Vec::new(),
            requests_tx: tx,
            requests_rx: rx,
            channel_count: Arc::new(AtomicUsize::new(0)),
            live: None,
            steps: 0,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Spawn a process from outside the simulation (the first one is `main`).
    pub fn spawn<F>(&mut self, body: F) -> Result<ProcessId>
    where
        F: FnOnce(&mut Proc) -> Result<()> + Send + 'static,
    {
        self.spawn_boxed(Box::new(body))
    }

    fn spawn_boxed(&mut self, body: ProcessBody) -> Result<ProcessId> {
        let pid = self.kernel.new_context()?;
        let (reply_tx, reply_rx) = mpsc::channel();
        let mut proc = Proc {
            pid,
            requests: self.requests_tx.clone(),
            replies: reply_rx,
            channel_count: Arc::clone(&self.channel_count),
            units: TimeUnits::new(self.kernel.config.clock_hz),
            halted: false,
        };
        let handle = thread::Builder::new()
            .name(format!("synchron-{pid}"))
            .spawn(move || {
                match proc.replies.recv() {
                    Ok(Reply::Start) => {}
                    _ => return,
                }
                let result = match catch_unwind(AssertUnwindSafe(|| body(&mut proc))) {
                    Ok(r) => r,
                    Err(payload) => Err(Error::ProcessPanic {
                        pid: pid.0,
                        message: panic_message(payload.as_ref()),
                    }),
                };
                let _ = proc.requests.send((pid, Request::Exit(result)));
            })
            .map_err(|e| Error::resource(format!("cannot start process thread: {e}")))?;
        self.threads.push(ProcThread {
            replies: reply_tx,
            handle: Some(handle),
        });
        Ok(pid)
    }

    pub fn inject_stimulus(&mut self, driver: DriverId, data: u32, at: Time) -> Result<()> {
        self.kernel.inject_stimulus(driver, data, at)
    }

    pub fn load_stimuli(&mut self, script: &StimulusScript) -> Result<()> {
        for s in script.entries() {
            self.kernel.inject_stimulus(s.driver, s.data, s.at)?;
        }
        Ok(())
    }

    /// Receive every trace record as it is produced.
    pub fn set_trace_sink(&mut self, sink: TraceSink) {
        self.kernel.set_sink(sink);
    }

    pub fn set_live_input(&mut self, live: Box<dyn LiveInput>) {
        self.live = Some(live);
    }

    /// Run the scheduler loop until `limit`, deadlock, or every process has
    /// finished. Consumes the runtime; all process threads are torn down
    /// before this returns.
    pub fn run(mut self, limit: Limit) -> Result<RunReport> {
        let result = self.run_loop(limit);
        self.shutdown();
        let outcome = result?;
        let kernel = &mut self.kernel;
        let end_time = kernel.now();
        let audit = std::mem::take(&mut kernel.audit);
        let mut violations = audit.violations;
        violations.extend(audit.ledger.check());
        Ok(RunReport {
            outcome,
            trace: std::mem::take(&mut kernel.trace),
            end_time,
            steps: self.steps,
            drivers: std::mem::take(&mut kernel.drivers),
            violations,
            edf_violations: audit.edf_violations,
        })
    }

    fn run_loop(&mut self, limit: Limit) -> Result<Outcome> {
        let now = self.kernel.now();
        for ctx in &mut self.kernel.procs {
            ctx.t_local = now;
        }
        loop {
            if let Some(max) = self.kernel.config.max_steps {
                if self.steps >= max {
                    return Ok(Outcome::StepLimit);
                }
            }
            self.steps += 1;

            while let Some(msg) = self.kernel.timeline.take_due() {
                self.kernel.handle_msg(msg)?;
            }
            if self.kernel.current.is_none() {
                self.kernel.dispatch_new_process();
            }
            if self.kernel.config.audit {
                self.kernel.audit_step();
            }

            match self.kernel.current {
                Some(pid) => {
                    if let Some(outcome) = self.step_process(pid, limit)? {
                        return Ok(outcome);
                    }
                }
                None => {
                    if self.kernel.all_finished() {
                        return Ok(Outcome::AllFinished);
                    }
                    if let Some(outcome) = self.idle(limit)? {
                        return Ok(outcome);
                    }
                }
            }
        }
    }

    /// Every process is blocked or waiting: move virtual time to the next
    /// message, consulting the live input if there is one.
    fn idle(&mut self, limit: Limit) -> Result<Option<Outcome>> {
        if let Some(live) = self.live.as_mut() {
            let now = self.kernel.now();
            let next = match self.kernel.timeline.next_event_time() {
                Some(t) => Some(t.min(limit.until)),
                None if limit.until != TIME_MAX => Some(limit.until),
                None => None,
            };
            match live.wait(now, next) {
                LiveWait::Stimulus { at, driver, data } => {
                    let at = at.max(now).min(next.unwrap_or(TIME_MAX));
                    self.kernel.timeline.schedule(Message::driver(driver.0, data, at));
                }
                LiveWait::Stop => return Ok(Some(Outcome::Stopped)),
                LiveWait::Elapsed => {}
            }
        }
        match self.kernel.timeline.advance(limit.until) {
            Next::Message(m) => {
                self.kernel.handle_msg(m)?;
                Ok(None)
            }
            Next::Reached => Ok(Some(Outcome::LimitReached)),
            Next::Idle if self.live.is_some() && self.kernel.now() < limit.until => Ok(None),
            Next::Idle if self.kernel.awaiting_input() => {
                if limit.until == TIME_MAX {
                    return Ok(Some(Outcome::AwaitingInput));
                }
                self.kernel.timeline.clock_mut().advance_to(limit.until);
                Ok(Some(Outcome::LimitReached))
            }
            Next::Idle => {
                let blocked = self.kernel.blocked_processes();
                let now = self.kernel.now();
                for b in &blocked {
                    for (_, ch) in &b.waiting_on {
                        self.kernel
                            .record(TraceRecord::new(now, TraceKind::Deadlock).pid(b.pid).channel(*ch));
                    }
                }
                for b in &blocked {
                    log::warn!("deadlock: {b}");
                }
                Ok(Some(Outcome::Deadlock(blocked)))
            }
        }
    }

    fn step_process(&mut self, pid: ProcessId, limit: Limit) -> Result<Option<Outcome>> {
        let resume = std::mem::replace(&mut self.kernel.ctx(pid).resume, Resume::Nothing);
        match resume {
            Resume::Start => self.hand_over(pid, Reply::Start)?,
            Resume::Reply(r) => self.hand_over(pid, r)?,
            Resume::Sync(event) => {
                if let Err(e) = self.kernel.sync(pid, event) {
                    self.reply_error(pid, e)?;
                }
            }
            Resume::Busy(remaining) => return self.busy(pid, remaining, limit),
            Resume::Nothing => return Err(Error::internal(format!("{pid} is current but has nothing to resume"))),
        }
        Ok(None)
    }

    fn reply_error(&mut self, pid: ProcessId, e: Error) -> Result<()> {
        match e {
            Error::Usage(_) | Error::Resource(_) => {
                self.kernel.ctx(pid).resume = Resume::Reply(Reply::Err(e));
                Ok(())
            }
            other => Err(other),
        }
    }

    fn busy(&mut self, pid: ProcessId, remaining: Time, limit: Limit) -> Result<Option<Outcome>> {
        if remaining == 0 {
            self.kernel.ctx(pid).resume = Resume::Reply(Reply::Unit);
            return Ok(None);
        }
        let start = self.kernel.now();
        let target = start.saturating_add(remaining);
        let bound = target.min(limit.until);
        let next = self.kernel.timeline.advance(bound);
        if next == Next::Idle {
            self.kernel.timeline.clock_mut().advance_to(bound);
        }
        let elapsed = self.kernel.now() - start;
        let left = remaining - elapsed;
        self.kernel.ctx(pid).resume = if left == 0 {
            Resume::Reply(Reply::Unit)
        } else {
            Resume::Busy(left)
        };
        match next {
            Next::Message(m) => {
                self.kernel.handle_msg(m)?;
                Ok(None)
            }
            _ if left > 0 => Ok(Some(Outcome::LimitReached)),
            _ => Ok(None),
        }
    }

    /// Give the CPU to the process thread and act on its next request.
    fn hand_over(&mut self, pid: ProcessId, reply: Reply) -> Result<()> {
        let thread = &self.threads[pid.0 as usize];
        thread
            .replies
            .send(reply)
            .map_err(|_| Error::internal(format!("{pid} thread is gone")))?;
        let (from, req) = self
            .requests_rx
            .recv()
            .map_err(|_| Error::internal("request channel closed"))?;
        if from != pid {
            return Err(Error::internal(format!(
                "{from} issued a request while {pid} held the CPU"
            )));
        }
        self.handle_request(pid, req)
    }

    fn handle_request(&mut self, pid: ProcessId, req: Request) -> Result<()> {
        let reply = match req {
            Request::NewChannel => match self.kernel.channels.new_channel() {
                Ok(c) => {
                    self.channel_count.store(self.kernel.channels.len(), Ordering::Release);
                    Reply::Channel(c)
                }
                Err(e) => Reply::Err(e),
            },
            Request::Spawn(body) => match self.spawn_boxed(body) {
                Ok(child) => Reply::Pid(child),
                Err(e) => Reply::Err(e),
            },
            Request::SpawnExternal(ch, d) => match self.kernel.spawn_external(ch, d) {
                Ok(x) => Reply::External(x),
                Err(e) => Reply::Err(e),
            },
            Request::Sync(event) => {
                if let Err(e) = self.kernel.sync(pid, event) {
                    self.reply_error(pid, e)?;
                }
                return Ok(());
            }
            Request::SyncT {
                baseline,
                deadline,
                event,
            } => {
                if let Err(e) = self.kernel.sync_t(pid, baseline, deadline, event) {
                    self.reply_error(pid, e)?;
                }
                return Ok(());
            }
            Request::Busy(ticks) => {
                self.kernel.ctx(pid).resume = Resume::Busy(ticks);
                return Ok(());
            }
            Request::Now => Reply::Time(self.kernel.now()),
            Request::LocalTime => Reply::Time(self.kernel.context(pid).t_local),
            Request::Exit(result) => {
                self.kernel.finish(pid);
                return match result {
                    Ok(()) | Err(Error::Halted) => Ok(()),
                    Err(e) => Err(e),
                };
            }
        };
        self.kernel.ctx(pid).resume = Resume::Reply(reply);
        Ok(())
    }

    fn shutdown(&mut self) {
        for (i, t) in self.threads.iter().enumerate() {
            if self.kernel.procs[i].state != ProcState::Finished {
                let _ = t.replies.send(Reply::Halt);
            }
        }
        for t in &mut self.threads {
            if let Some(h) = t.handle.take() {
                let _ = h.join();
            }
        }
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

/// Convenience: a runtime for `board` with the board's clock.
pub fn runtime_for(board: &Board, mut config: Config) -> Runtime {
    config.clock_hz = board.clock_hz;
    Runtime::new(config, board)
}

impl DriverTable {
    /// Drivers of one kind, in id order.
    pub fn of_kind(&self, kind: DriverKind) -> impl Iterator<Item = DriverId> + '_ {
        self.iter().filter(move |d| d.kind == kind).map(|d| d.id)
    }
}
