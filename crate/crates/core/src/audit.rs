//! Runtime invariant checks, run after every scheduler step in audit mode.

use std::collections::BTreeMap;

use crate::events::{ChannelId, Value};
use crate::scheduler::{Kernel, ProcState, ProcessId};
use crate::time::TIME_MAX;

/// Per-channel record of what senders offered and receivers got.
#[derive(Debug, Default, Clone)]
pub struct ConservationLedger {
    sent: BTreeMap<ChannelId, Vec<Value>>,
    received: BTreeMap<ChannelId, Vec<Value>>,
}

impl ConservationLedger {
    pub(crate) fn transfer(&mut self, ch: ChannelId, sent: &Value, received: &Value) {
        self.sent.entry(ch).or_default().push(sent.clone());
        self.received.entry(ch).or_default().push(received.clone());
    }

    /// Channels where the delivered sequence differs from the sent one.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (ch, sent) in &self.sent {
            let got = self.received.get(ch).map(Vec::as_slice).unwrap_or(&[]);
            if got != sent.as_slice() {
                out.push(format!(
                    "{ch}: {} values sent but {} received or contents differ",
                    sent.len(),
                    got.len()
                ));
            }
        }
        out
    }

    pub fn transfers(&self, ch: ChannelId) -> usize {
        self.sent.get(&ch).map_or(0, Vec::len)
    }
}

#[derive(Debug, Default)]
pub struct AuditLog {
    pub violations: Vec<String>,
    pub edf_violations: Vec<String>,
    pub ledger: ConservationLedger,
}

impl Kernel {
    /// Check every structural invariant of the current state. Violations are
    /// appended to the audit log, prefixed with the virtual time.
    pub fn audit_step(&mut self) {
        let found = self.check_invariants();
        let edf = self.check_edf();
        let now = self.now();
        self.audit
            .violations
            .extend(found.into_iter().map(|v| format!("t={now}: {v}")));
        self.audit
            .edf_violations
            .extend(edf.into_iter().map(|v| format!("t={now}: {v}")));
    }

    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        let now = self.now();

        let running: Vec<ProcessId> = self
            .procs
            .iter()
            .filter(|c| c.state == ProcState::Running)
            .map(|c| c.pid)
            .collect();
        if running.len() > 1 {
            out.push(format!("several running processes: {running:?}"));
        }
        if running.first().copied() != self.current && !(running.is_empty() && self.current.is_none()) {
            out.push(format!("current is {:?} but running is {running:?}", self.current));
        }

        for ctx in &self.procs {
            let pid = ctx.pid;
            let in_ready = self.ready_q.iter().filter(|p| **p == pid).count();
            let in_wait = self.wait_q.iter().filter(|e| e.pid == pid).count();
            let in_chan = self
                .channels
                .iter()
                .any(|c| c.sendq.contains(&pid) || c.recvq.contains(&pid));
            let places = usize::from(in_ready > 0)
                + usize::from(in_wait > 0)
                + usize::from(in_chan)
                + usize::from(self.current == Some(pid));
            if in_ready > 1 || in_wait > 1 || places > 1 {
                out.push(format!(
                    "{pid} is in several places (ready {in_ready}, wait {in_wait}, channels {in_chan}, current {})",
                    self.current == Some(pid)
                ));
            }
            let consistent = match ctx.state {
                ProcState::Ready => in_ready == 1,
                ProcState::Running => self.current == Some(pid),
                ProcState::Blocked => in_chan && ctx.remembered_event.is_some(),
                ProcState::Waiting => in_wait == 1,
                ProcState::Finished => places == 0,
            };
            if !consistent {
                out.push(format!("{pid} is {:?} but its queue membership disagrees", ctx.state));
            }
            if ctx.state != ProcState::Finished && ctx.t_local > now {
                out.push(format!("{pid} local time {} is ahead of now {now}", ctx.t_local));
            }
        }

        for ch in self.channels.iter() {
            if ch.driver_binding.is_none() && !ch.sendq.is_empty() && !ch.recvq.is_empty() {
                out.push(format!("{} has both senders and receivers waiting", ch.id));
            }
        }

        if !self.wait_q.is_sorted() {
            out.push("wait queue is out of order".to_string());
        }

        let clock = self.timeline.clock().state();
        if clock.compare_armed {
            match clock.armed_alarm {
                Some(at) if (at >> 32) as u32 == clock.hi => {}
                other => out.push(format!(
                    "compare armed outside its window: alarm {other:?}, hi {}",
                    clock.hi
                )),
            }
        }
        out
    }

    /// A ready process with an earlier finite deadline than the running one.
    pub fn check_edf(&self) -> Vec<String> {
        let Some(cur) = self.current else {
            return Vec::new();
        };
        let cur_deadline = self.context(cur).deadline;
        if cur_deadline == TIME_MAX {
            return Vec::new();
        }
        self.ready_q
            .iter()
            .map(|p| self.context(*p))
            .filter(|c| c.deadline != TIME_MAX && c.deadline < cur_deadline)
            .map(|c| {
                format!(
                    "{} (deadline {}) waits while {cur} (deadline {cur_deadline}) runs",
                    c.pid, c.deadline
                )
            })
            .collect()
    }
}
