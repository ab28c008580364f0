//! A virtual-time runtime for first-class synchronous events.
//!
//! Processes communicate only through events built from `send` and `recv`
//! on channels, combined with [`choose`] and [`wrap`], and committed with
//! [`Proc::sync`] or its timed variant [`Proc::sync_t`]. Peripherals are
//! modelled as drivers bound to channels, so device I/O uses the same event
//! algebra. Time is simulated: a run is a deterministic function of the
//! program, the board description and the stimulus script.

pub mod audit;
pub mod bridge;
pub mod error;
pub mod events;
pub mod harness;
pub mod scheduler;
pub mod sync_engine;
pub mod time;
pub mod timed;
pub mod trace;

pub use bridge::{Board, DriverId, DriverKind, ExternalThreadId, Stimulus, StimulusScript};
pub use error::{Error, Result};
pub use events::{choose, choose_all, wrap, BaseEvent, ChannelId, Event, EventKind, Value, WrapFn};
pub use scheduler::{BlockedProcess, Config, Limit, LiveInput, LiveWait, Outcome, Proc, ProcessId, RunReport, Runtime};
pub use time::{Time, TimeUnits, TIME_MAX};
pub use timed::TimingWindow;
pub use trace::{Trace, TraceKind, TraceRecord};
