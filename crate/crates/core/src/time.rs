//! Virtual wall-clock.
//!
//! A 64-bit monotone tick counter is synthesised from a 32-bit counter plus an
//! overflow count, the way a microcontroller timer peripheral is driven: the
//! compare register only sees the low 32 bits, so an absolute 64-bit alarm is
//! armed on the compare unit only once the counter has entered the alarm's
//! 32-bit window. The overflow handler does that arming.
//!
//! Time is event-jumping: [`Timeline::advance`] moves straight to the next
//! alarm or scheduled stimulus, stopping at every overflow boundary on the way
//! so the overflow logic runs exactly as it would tick by tick. [`Clock::tick`]
//! is the single-step reference used to check that claim.

use std::collections::VecDeque;

use crate::scheduler::{Message, ALARM_SENDER_ID, MSG_ALARM};

/// Virtual time in clock ticks.
pub type Time = u64;

/// Deadline of an untimed process.
pub const TIME_MAX: Time = u64::MAX;

pub const DEFAULT_CLOCK_HZ: u64 = 1_000_000;

/// Converts human time units into ticks of a clock running at `clock_hz`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeUnits {
    pub clock_hz: u64,
}

impl Default for TimeUnits {
    fn default() -> Self {
        TimeUnits {
            clock_hz: DEFAULT_CLOCK_HZ,
        }
    }
}

impl TimeUnits {
    pub fn new(clock_hz: u64) -> Self {
        TimeUnits { clock_hz }
    }

    pub fn usec(&self, n: u64) -> Time {
        n * self.clock_hz / 1_000_000
    }

    pub fn msec(&self, n: u64) -> Time {
        n * self.clock_hz / 1_000
    }

    pub fn sec(&self, n: u64) -> Time {
        n * self.clock_hz
    }
}

/// Hardware-level timer state: the two 32-bit halves plus one alarm channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClockState {
    pub lo: u32,
    pub hi: u32,
    pub armed_alarm: Option<Time>,
    /// The compare unit holds the alarm's low word; only valid inside the
    /// alarm's own 32-bit window.
    pub compare_armed: bool,
    pub freq_hz: u64,
}

#[derive(Debug, Clone)]
pub struct Clock {
    state: ClockState,
    fired: VecDeque<Message>,
}

impl Clock {
    pub fn new(freq_hz: u64) -> Self {
        Self::starting_at(freq_hz, 0)
    }

    /// A clock whose counter already reads `now`. Lets tests start next to a
    /// 32-bit boundary without stepping four billion ticks.
    pub fn starting_at(freq_hz: u64, now: Time) -> Self {
        Clock {
            state: ClockState {
                lo: now as u32,
                hi: (now >> 32) as u32,
                armed_alarm: None,
                compare_armed: false,
                freq_hz,
            },
            fired: VecDeque::new(),
        }
    }

    pub fn now_ticks(&self) -> Time {
        ((self.state.hi as u64) << 32) | self.state.lo as u64
    }

    pub fn state(&self) -> &ClockState {
        &self.state
    }

    /// `(frequency, alarm channel count)`.
    pub fn clock_info(&self) -> (u64, u32) {
        (self.state.freq_hz, 1)
    }

    /// `(is_set, wake_up_time)`; the time reads 0 when nothing is armed.
    pub fn alarm_status(&self) -> (bool, Time) {
        match self.state.armed_alarm {
            Some(at) => (true, at),
            None => (false, 0),
        }
    }

    /// Arms the single alarm channel at an absolute time, replacing any
    /// previous alarm. An alarm at or before `now` fires immediately.
    pub fn set_wake_up(&mut self, at: Time) -> bool {
        self.state.armed_alarm = Some(at);
        self.state.compare_armed = (at >> 32) as u32 == self.state.hi;
        self.check_compare();
        true
    }

    pub fn cancel_wake_up(&mut self) {
        self.state.armed_alarm = None;
        self.state.compare_armed = false;
    }

    /// Single-step the counter. Reference implementation for the overflow
    /// logic; the scheduler never uses it.
    pub fn tick(&mut self) {
        self.state.lo = self.state.lo.wrapping_add(1);
        if self.state.lo == 0 {
            self.on_overflow();
        }
        self.check_compare();
    }

    /// Jump to `target`, running the overflow handler at every 32-bit
    /// boundary crossed.
    pub fn advance_to(&mut self, target: Time) {
        debug_assert!(target >= self.now_ticks(), "virtual time must not go backwards");
        while (target >> 32) > self.state.hi as u64 {
            self.state.lo = 0;
            self.on_overflow();
            self.check_compare();
        }
        self.state.lo = target as u32;
        self.check_compare();
    }

    /// Next instant at which the hardware does something: the armed compare,
    /// or the next overflow when an alarm is waiting for a later window.
    fn next_hardware_instant(&self) -> Option<Time> {
        match self.state.armed_alarm {
            Some(at) if self.state.compare_armed => Some(at),
            Some(_) => Some(((self.state.hi as u64) + 1) << 32),
            None => None,
        }
    }

    fn on_overflow(&mut self) {
        self.state.hi = self.state.hi.wrapping_add(1);
        if let Some(at) = self.state.armed_alarm {
            if (at >> 32) as u32 == self.state.hi {
                self.state.compare_armed = true;
            }
        }
    }

    fn check_compare(&mut self) {
        let now = self.now_ticks();
        if let Some(at) = self.state.armed_alarm {
            if self.state.compare_armed && at <= now {
                self.state.armed_alarm = None;
                self.state.compare_armed = false;
                self.fired.push_back(Message {
                    sender_id: ALARM_SENDER_ID,
                    msg_type: MSG_ALARM,
                    data: 0,
                    timestamp: now,
                });
            }
        }
    }

    pub fn take_fired(&mut self) -> Option<Message> {
        self.fired.pop_front()
    }
}

/// Result of [`Timeline::advance`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Next {
    Message(Message),
    /// The bound was reached with nothing firing on the way.
    Reached,
    /// No alarm and no scheduled stimulus exists; the clock did not move.
    Idle,
}

/// The clock plus everything that can produce a message for the scheduler:
/// the alarm, scheduled stimuli and an immediate mailbox.
#[derive(Debug, Clone)]
pub struct Timeline {
    clock: Clock,
    scheduled: VecDeque<Message>,
    mailbox: VecDeque<Message>,
}

impl Timeline {
    pub fn new(clock: Clock) -> Self {
        Timeline {
            clock,
            scheduled: VecDeque::new(),
            mailbox: VecDeque::new(),
        }
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn clock_mut(&mut self) -> &mut Clock {
        &mut self.clock
    }

    pub fn now(&self) -> Time {
        self.clock.now_ticks()
    }

    /// Queue a message for delivery at `msg.timestamp`; equal timestamps keep
    /// insertion order. Past or present timestamps go straight to the mailbox.
    pub fn schedule(&mut self, msg: Message) {
        if msg.timestamp <= self.now() {
            self.mailbox.push_back(msg);
            return;
        }
        let idx = self.scheduled.partition_point(|m| m.timestamp <= msg.timestamp);
        self.scheduled.insert(idx, msg);
    }

    /// Deliver on the next scheduler step regardless of timestamps.
    pub fn post(&mut self, msg: Message) {
        self.mailbox.push_back(msg);
    }

    pub fn has_scheduled(&self) -> bool {
        !self.scheduled.is_empty()
    }

    /// Pop a message that is due at the current instant. Stimuli come before
    /// an alarm firing at the same tick.
    pub fn take_due(&mut self) -> Option<Message> {
        if let Some(m) = self.mailbox.pop_front() {
            return Some(m);
        }
        let now = self.now();
        if self.scheduled.front().is_some_and(|m| m.timestamp <= now) {
            return self.scheduled.pop_front();
        }
        self.clock.take_fired()
    }

    /// Earliest instant at which something is pending, if anything is.
    pub fn next_event_time(&self) -> Option<Time> {
        if !self.mailbox.is_empty() {
            return Some(self.now());
        }
        let stim = self.scheduled.front().map(|m| m.timestamp);
        let alarm = self.clock.state.armed_alarm;
        match (stim, alarm) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Move virtual time forward to the next pending message, but never past
    /// `bound`. This is the simulated counterpart of blocking on the OS
    /// mailbox while every process is blocked.
    pub fn advance(&mut self, bound: Time) -> Next {
        loop {
            if let Some(m) = self.take_due() {
                return Next::Message(m);
            }
            let stim = self.scheduled.front().map(|m| m.timestamp);
            let hw = self.clock.next_hardware_instant();
            let step = match (stim, hw) {
                (None, None) => return Next::Idle,
                (Some(a), Some(b)) => a.min(b),
                (a, b) => a.or(b).unwrap_or(TIME_MAX),
            };
            if step > bound {
                if bound > self.now() {
                    self.clock.advance_to(bound);
                }
                return match self.take_due() {
                    Some(m) => Next::Message(m),
                    None => Next::Reached,
                };
            }
            self.clock.advance_to(step);
        }
    }
}
