//! Untimed synchronisation: pick the first base event that can complete now,
//! otherwise block on all of them.

use crate::error::{Error, Result};
use crate::events::{BaseEvent, ChannelId, Event, EventKind, Value};
use crate::scheduler::{Kernel, ProcState, ProcessId, Reply, Resume};
use crate::trace::{TraceKind, TraceRecord};

impl Kernel {
    /// `sync` on behalf of the running process `pid`. On return either `pid`
    /// is still current with its reply stored, or another process has been
    /// dispatched.
    pub fn sync(&mut self, pid: ProcessId, event: Event) -> Result<()> {
        if self.current != Some(pid) {
            return Err(Error::internal(format!("{pid} synchronised while not running")));
        }
        self.validate_event(&event)?;
        let now = self.now();
        let mut begin = TraceRecord::new(now, TraceKind::SyncBegin).pid(pid);
        if event.len() == 1 {
            begin = begin.channel(event.bases()[0].channel);
        }
        self.record(begin);
        match self.find_synchronisable_event(&event) {
            Some(idx) => self.sync_now(pid, event, idx),
            None => {
                self.block(pid, event)?;
                self.relinquish(pid);
                Ok(())
            }
        }
    }

    fn validate_event(&self, event: &Event) -> Result<()> {
        if event.is_empty() {
            return Err(Error::usage("cannot synchronise on an empty event"));
        }
        if let Some(ch) = event.self_rendezvous_channel() {
            return Err(Error::usage(format!("event both sends and receives on {ch}")));
        }
        for b in event.bases() {
            let ch = self.channels.get(b.channel)?;
            if let (Some(d), EventKind::Send) = (ch.driver_binding, b.kind) {
                let kind = self.drivers.get(d)?.kind;
                if !kind.is_synchronous() {
                    return Err(Error::usage(format!("cannot send to {d} ({kind})")));
                }
                let payload = b.payload.as_ref().and_then(Value::as_word);
                if payload.is_none() {
                    return Err(Error::usage(format!(
                        "driver payload on {} must be an integer in 0..=u32::MAX, got {:?}",
                        b.channel, b.payload
                    )));
                }
            }
        }
        Ok(())
    }

    /// Index of the leftmost base event that can complete immediately.
    pub fn find_synchronisable_event(&self, event: &Event) -> Option<usize> {
        event.bases().iter().position(|b| {
            let Ok(ch) = self.channels.get(b.channel) else {
                return false;
            };
            match ch.driver_binding {
                Some(d) => self.drivers.get(d).is_ok_and(|drv| match b.kind {
                    EventKind::Send => drv.ll_data_writeable() > 0,
                    EventKind::Recv => drv.ll_data_readable() > 0,
                }),
                None => !ch.queue(b.kind.opposite()).is_empty(),
            }
        })
    }

    /// Enqueue `pid` on the queue of every base event and remember the event.
    pub fn block(&mut self, pid: ProcessId, event: Event) -> Result<()> {
        let now = self.now();
        for b in event.bases() {
            self.channels.get_mut(b.channel)?.queue_mut(b.kind).push_back(pid);
            self.record(TraceRecord::new(now, TraceKind::Block).pid(pid).channel(b.channel));
        }
        let ctx = self.ctx(pid);
        ctx.state = ProcState::Blocked;
        ctx.resume = Resume::Nothing;
        ctx.remembered_event = Some(event);
        Ok(())
    }

    /// Complete base event `idx` of `event` for the running process `pid`.
    pub fn sync_now(&mut self, pid: ProcessId, event: Event, idx: usize) -> Result<()> {
        let base = &event.bases()[idx];
        let ch = base.channel;
        let now = self.now();
        let binding = self.channels.get(ch)?.driver_binding;
        match (binding, base.kind) {
            (Some(d), EventKind::Send) => {
                let word = base
                    .payload
                    .as_ref()
                    .and_then(Value::as_word)
                    .ok_or_else(|| Error::usage(format!("bad driver payload on {ch}")))?;
                let drv = self.drivers.get_mut(d)?;
                drv.ll_write(word, now)?;
                let echo = drv.kind == crate::bridge::DriverKind::UartStub;
                self.record(
                    TraceRecord::new(now, TraceKind::Rendezvous)
                        .pid(pid)
                        .channel(ch)
                        .driver(d)
                        .data(Some(word)),
                );
                self.record(
                    TraceRecord::new(now, TraceKind::DriverWrite)
                        .pid(pid)
                        .channel(ch)
                        .driver(d)
                        .data(Some(word)),
                );
                if echo {
                    self.timeline.post(crate::scheduler::Message::driver(d.0, word, now));
                }
                self.complete_running(pid, idx, Value::Unit);
            }
            (Some(d), EventKind::Recv) => {
                let word = self.drivers.get_mut(d)?.ll_read()?;
                self.record(
                    TraceRecord::new(now, TraceKind::Rendezvous)
                        .pid(pid)
                        .channel(ch)
                        .driver(d)
                        .data(Some(word)),
                );
                self.complete_running(pid, idx, Value::from(word));
            }
            (None, EventKind::Send) => {
                let payload = base.payload.clone().unwrap_or(Value::Unit);
                let receiver = self
                    .channels
                    .get_mut(ch)?
                    .recvq
                    .pop_front()
                    .ok_or_else(|| Error::internal(format!("no receiver on {ch}")))?;
                let ridx = self.complete_blocked(receiver, ch, EventKind::Recv)?;
                self.record(
                    TraceRecord::new(now, TraceKind::Rendezvous)
                        .pid(pid)
                        .peer(receiver)
                        .channel(ch)
                        .data(payload.as_word()),
                );
                self.audit.ledger.transfer(ch, &payload, &payload);
                // The receiver takes over the CPU; the sender queues up.
                self.note_completion(pid);
                self.make_ready(
                    pid,
                    Resume::Reply(Reply::Synced {
                        base: idx,
                        value: Value::Unit,
                    }),
                );
                let rctx = self.ctx(receiver);
                rctx.state = ProcState::Running;
                rctx.resume = Resume::Reply(Reply::Synced {
                    base: ridx,
                    value: payload,
                });
                self.current = Some(receiver);
            }
            (None, EventKind::Recv) => {
                let sender = self
                    .channels
                    .get_mut(ch)?
                    .sendq
                    .pop_front()
                    .ok_or_else(|| Error::internal(format!("no sender on {ch}")))?;
                let sent = self.context(sender).remembered_event.as_ref().and_then(|e| {
                    e.bases()
                        .iter()
                        .find(|b| b.channel == ch && b.kind == EventKind::Send)
                        .and_then(|b| b.payload.clone())
                });
                let sidx = self.complete_blocked(sender, ch, EventKind::Send)?;
                let payload = sent.unwrap_or(Value::Unit);
                self.record(
                    TraceRecord::new(now, TraceKind::Rendezvous)
                        .pid(sender)
                        .peer(pid)
                        .channel(ch)
                        .data(payload.as_word()),
                );
                let delivered = payload.clone();
                self.audit.ledger.transfer(ch, &payload, &delivered);
                self.make_ready(
                    sender,
                    Resume::Reply(Reply::Synced {
                        base: sidx,
                        value: Value::Unit,
                    }),
                );
                self.complete_running(pid, idx, delivered);
            }
        }
        Ok(())
    }

    /// The running process completed its sync without blocking.
    fn complete_running(&mut self, pid: ProcessId, idx: usize, value: Value) {
        self.note_completion(pid);
        self.ctx(pid).resume = Resume::Reply(Reply::Synced { base: idx, value });
    }

    /// A blocked process has been chosen as the partner on `ch`: remove it
    /// from every other queue it sits in and return the index of the base
    /// event that completed.
    pub(crate) fn complete_blocked(&mut self, pid: ProcessId, ch: ChannelId, kind: EventKind) -> Result<usize> {
        let event = self
            .ctx(pid)
            .remembered_event
            .take()
            .ok_or_else(|| Error::internal(format!("{pid} queued on {ch} without an event")))?;
        let idx = base_index(&event, ch, kind)
            .ok_or_else(|| Error::internal(format!("{pid} queued on {ch} for the wrong direction")))?;
        for b in event.bases() {
            self.channels.get_mut(b.channel)?.purge(pid);
        }
        self.note_completion(pid);
        Ok(idx)
    }

    /// Deadline-miss bookkeeping at the moment a sync completes.
    fn note_completion(&mut self, pid: ProcessId) {
        let now = self.now();
        if let Some(deadline) = self.ctx(pid).pending_deadline.take() {
            if now > deadline {
                self.record(
                    TraceRecord::new(now, TraceKind::DeadlineMiss)
                        .pid(pid)
                        .deadline_abs(deadline),
                );
            }
        }
    }
}

fn base_index(event: &Event, ch: ChannelId, kind: EventKind) -> Option<usize> {
    event
        .bases()
        .iter()
        .position(|b: &BaseEvent| b.channel == ch && b.kind == kind)
}

impl EventKind {
    pub fn opposite(self) -> EventKind {
        match self {
            EventKind::Send => EventKind::Recv,
            EventKind::Recv => EventKind::Send,
        }
    }
}
