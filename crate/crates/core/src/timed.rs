//! Timed synchronisation: the wait queue, `syncT`, and the alarm handler.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::Event;
use crate::scheduler::{Kernel, ProcState, ProcessId, Resume};
use crate::time::{Time, TIME_MAX};
use crate::trace::{TraceKind, TraceRecord};

/// A timing window relative to a process's local clock. A deadline of `0`
/// means "no deadline".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimingWindow {
    pub baseline: Time,
    pub deadline: Time,
}

impl TimingWindow {
    pub fn new(baseline: Time, deadline: Time) -> Self {
        TimingWindow { baseline, deadline }
    }

    /// `(T_wakeup, T_finish)` for a process whose local clock reads `t_local`.
    pub fn bounds(&self, t_local: Time) -> (Time, Time) {
        let wakeup = t_local.saturating_add(self.baseline);
        let finish = if self.deadline == 0 {
            TIME_MAX
        } else {
            wakeup.saturating_add(self.deadline)
        };
        (wakeup, finish)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaitEntry {
    pub pid: ProcessId,
    pub wakeup: Time,
    pub deadline_abs: Time,
    pub event: Event,
}

/// Processes sleeping until their baseline, ordered by wake-up time; equal
/// wake-up times keep arrival order.
#[derive(Debug, Clone, Default)]
pub struct WaitQueue {
    entries: VecDeque<WaitEntry>,
}

impl WaitQueue {
    /// Insert in order and return the position taken.
    pub fn insert(&mut self, entry: WaitEntry) -> usize {
        let idx = self.entries.partition_point(|e| e.wakeup <= entry.wakeup);
        self.entries.insert(idx, entry);
        idx
    }

    pub fn pop_front(&mut self) -> Option<WaitEntry> {
        self.entries.pop_front()
    }

    pub fn front(&self) -> Option<&WaitEntry> {
        self.entries.front()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &WaitEntry> {
        self.entries.iter()
    }

    pub fn contains(&self, pid: ProcessId) -> bool {
        self.entries.iter().any(|e| e.pid == pid)
    }

    pub fn is_sorted(&self) -> bool {
        self.entries
            .iter()
            .zip(self.entries.iter().skip(1))
            .all(|(a, b)| a.wakeup <= b.wakeup)
    }
}

impl Kernel {
    /// `syncT` on behalf of the running process `pid`.
    pub fn sync_t(&mut self, pid: ProcessId, baseline: Time, deadline: Time, event: Event) -> Result<()> {
        if self.current != Some(pid) {
            return Err(Error::internal(format!("{pid} synchronised while not running")));
        }
        if event.is_empty() {
            return Err(Error::usage("cannot synchronise on an empty event"));
        }
        let now = self.now();
        let epsilon = self.config.epsilon;
        let ctx = self.ctx(pid);
        let (wakeup, finish) = TimingWindow::new(baseline, deadline).bounds(ctx.t_local);
        ctx.deadline = finish;
        ctx.pending_deadline = (deadline != 0).then_some(finish);

        let baseline_abs = now.saturating_add(baseline);
        let deadline_abs = baseline_abs.saturating_add(deadline);
        let past_window = now > deadline_abs;
        let inside_window = now >= baseline_abs && now <= deadline_abs;
        let too_short = baseline < epsilon;

        if baseline == 0 || past_window || inside_window || too_short {
            // Synchronise as soon as the process is scheduled again.
            self.make_ready(pid, Resume::Sync(event));
            self.relinquish(pid);
            return Ok(());
        }

        let mut rec = TraceRecord::new(now, TraceKind::TimedEnqueue).pid(pid).wakeup(wakeup);
        if finish != TIME_MAX {
            rec = rec.deadline_abs(finish);
        }
        self.record(rec);
        let pos = self.wait_q.insert(WaitEntry {
            pid,
            wakeup,
            deadline_abs: finish,
            event: event.clone(),
        });
        if pos == 0 {
            self.arm_alarm(wakeup)?;
        }
        let ctx = self.ctx(pid);
        ctx.state = ProcState::Waiting;
        ctx.resume = Resume::Sync(event);
        self.relinquish(pid);
        Ok(())
    }

    /// Arm the hardware alarm for the head of the wait queue.
    fn arm_alarm(&mut self, at: Time) -> Result<()> {
        match self.wait_q.front() {
            Some(head) if head.wakeup == at => {
                self.timeline.clock_mut().set_wake_up(at);
                Ok(())
            }
            _ => Err(Error::internal(format!(
                "alarm at {at} does not match the wait-queue head"
            ))),
        }
    }

    /// The alarm fired: wake the head of the wait queue and decide, by
    /// deadline, whether it preempts the running process.
    pub fn handle_alarm(&mut self) -> Result<()> {
        let Some(entry) = self.wait_q.pop_front() else {
            log::warn!("alarm fired with an empty wait queue");
            return Ok(());
        };
        let t_now = entry.wakeup;
        let timed = entry.pid;
        self.ctx(timed).t_local = t_now;
        let now = self.now();
        self.record(TraceRecord::new(now, TraceKind::Alarm).pid(timed).wakeup(t_now));
        if let Some(next) = self.wait_q.front().map(|e| e.wakeup) {
            self.arm_alarm(next)?;
        }
        match self.current {
            None => {
                self.ctx(timed).state = ProcState::Running;
                self.current = Some(timed);
            }
            Some(cur) if self.context(timed).deadline < self.context(cur).deadline => {
                self.record(TraceRecord::new(now, TraceKind::Preempt).pid(timed).peer(cur));
                self.ctx(cur).state = ProcState::Ready;
                self.ready_q.push_back(cur);
                self.ctx(timed).state = ProcState::Running;
                self.current = Some(timed);
            }
            Some(cur) => {
                self.ctx(timed).state = ProcState::Ready;
                self.ready_q.push_back(timed);
                self.ctx(cur).t_local = t_now;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{BaseEvent, ChannelId};

    fn entry(pid: u32, wakeup: Time) -> WaitEntry {
        WaitEntry {
            pid: ProcessId(pid),
            wakeup,
            deadline_abs: TIME_MAX,
            event: BaseEvent::recv(ChannelId(0)).into(),
        }
    }

    #[test]
    fn window_bounds() {
        assert_eq!(TimingWindow::new(500, 0).bounds(1000), (1500, TIME_MAX));
        assert_eq!(TimingWindow::new(500, 20).bounds(1000), (1500, 1520));
    }

    #[test]
    fn wait_queue_orders_by_wakeup_and_keeps_ties_fifo() {
        let mut q = WaitQueue::default();
        assert_eq!(q.insert(entry(0, 30)), 0);
        assert_eq!(q.insert(entry(1, 10)), 0);
        assert_eq!(q.insert(entry(2, 30)), 2);
        assert_eq!(q.insert(entry(3, 20)), 1);
        let order: Vec<u32> = q.iter().map(|e| e.pid.0).collect();
        assert_eq!(order, vec![1, 3, 0, 2]);
        assert!(q.is_sorted());
        assert!(q.contains(ProcessId(2)));
        assert_eq!(q.pop_front().unwrap().pid, ProcessId(1));
    }
}
