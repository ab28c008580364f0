//! Timestamped record of every scheduler and driver action.
//!
//! Traces persist as JSON lines, one record per line, fields in a fixed order
//! with absent fields omitted. Identical runs produce byte-identical files.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bridge::DriverId;
use crate::error::{Error, Result};
use crate::events::ChannelId;
use crate::scheduler::ProcessId;
use crate::time::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Spawn,
    SyncBegin,
    Block,
    Rendezvous,
    DriverWrite,
    DriverMsg,
    Alarm,
    Preempt,
    TimedEnqueue,
    DeadlineMiss,
    DriverOverflow,
    DroppedStimulus,
    Deadlock,
    Finish,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: Time,
    pub kind: TraceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pid: Option<ProcessId>,
    /// Second process involved: the receiver of a rendezvous (`pid` is the
    /// sender), or the process displaced by a preemption.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<ProcessId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver: Option<DriverId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wakeup: Option<Time>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline_abs: Option<Time>,
}

impl TraceRecord {
    pub fn new(t: Time, kind: TraceKind) -> Self {
        TraceRecord {
            t,
            kind,
            pid: None,
            peer: None,
            channel: None,
            driver: None,
            data: None,
            wakeup: None,
            deadline_abs: None,
        }
    }

    pub fn pid(mut self, pid: ProcessId) -> Self {
        self.pid = Some(pid);
        self
    }

    pub fn peer(mut self, pid: ProcessId) -> Self {
        self.peer = Some(pid);
        self
    }

    pub fn channel(mut self, ch: ChannelId) -> Self {
        self.channel = Some(ch);
        self
    }

    pub fn driver(mut self, d: DriverId) -> Self {
        self.driver = Some(d);
        self
    }

    pub fn data(mut self, data: Option<u32>) -> Self {
        self.data = data;
        self
    }

    pub fn wakeup(mut self, t: Time) -> Self {
        self.wakeup = Some(t);
        self
    }

    pub fn deadline_abs(mut self, t: Time) -> Self {
        self.deadline_abs = Some(t);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace record serialises")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: TraceRecord) {
        debug_assert!(
            self.records.last().is_none_or(|l| l.t <= r.t),
            "trace time went backwards"
        );
        self.records.push(r);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// `driver_write` records for one driver, in order.
    pub fn driver_writes(&self, driver: DriverId) -> impl Iterator<Item = &TraceRecord> {
        self.of_kind(TraceKind::DriverWrite)
            .filter(move |r| r.driver == Some(driver))
    }

    /// Rendezvous records on one channel, in order.
    pub fn rendezvous_on(&self, ch: ChannelId) -> impl Iterator<Item = &TraceRecord> {
        self.of_kind(TraceKind::Rendezvous)
            .filter(move |r| r.channel == Some(ch))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 48);
        for r in &self.records {
            out.push_str(&r.to_json());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(s: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in s.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: TraceRecord =
                serde_json::from_str(line).map_err(|e| Error::Parse(format!("trace line {}: {e}", n + 1)))?;
            records.push(r);
        }
        Ok(Trace { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    /// Hash of the serialised trace.
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.to_jsonl().hash(&mut h);
        h.finish()
    }
}

impl FromIterator<TraceRecord> for Trace {
    fn from_iter<I: IntoIterator<Item = TraceRecord>>(iter: I) -> Self {
        Trace {
            records: iter.into_iter().collect(),
        }
    }
}
