//! Channels and first-class events.
//!
//! An [`Event`] is kept in canonical form at all times: a flat, ordered list
//! of [`BaseEvent`]s. `choose` appends lists and `wrap` pushes its function
//! onto every base, so a nested `choose`/`wrap` tree never survives
//! construction. List order is the priority order used when more than one
//! base could synchronise.

use std::collections::VecDeque;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bridge::DriverId;
use crate::error::{Error, Result};
use crate::scheduler::{Proc, ProcessId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(pub u32);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ch{}", self.0)
    }
}

/// Message payloads. Software channels carry any value; channels bound to a
/// driver accept only integers that fit a 32-bit word.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Unit,
    Int(i64),
    Chan(ChannelId),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    /// The payload as a driver word, if it is one.
    pub fn as_word(&self) -> Option<u32> {
        self.as_int().and_then(|i| u32::try_from(i).ok())
    }

    pub fn as_channel(&self) -> Option<ChannelId> {
        match self {
            Value::Chan(c) => Some(*c),
            _ => None,
        }
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<i32> for Value {
    fn from(i: i32) -> Self {
        Value::Int(i64::from(i))
    }
}

impl From<u32> for Value {
    fn from(w: u32) -> Self {
        Value::Int(w as i64)
    }
}

impl From<ChannelId> for Value {
    fn from(c: ChannelId) -> Self {
        Value::Chan(c)
    }
}

impl From<()> for Value {
    fn from(_: ()) -> Self {
        Value::Unit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Send,
    Recv,
}

type WrapBody = dyn Fn(&mut Proc, Value) -> Result<Value> + Send + Sync;

static NEXT_WRAP_ID: AtomicU64 = AtomicU64::new(0);

/// A post-synchronisation function. It runs in the owning process after the
/// process has been resumed, so it may itself synchronise.
///
/// Two `WrapFn`s compare equal only if they are clones of the same function.
#[derive(Clone)]
pub struct WrapFn {
    id: u64,
    body: Arc<WrapBody>,
}

impl WrapFn {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&mut Proc, Value) -> Result<Value> + Send + Sync + 'static,
    {
        WrapFn {
            id: NEXT_WRAP_ID.fetch_add(1, Ordering::Relaxed),
            body: Arc::new(f),
        }
    }

    /// A wrap that needs no runtime access.
    pub fn pure<F>(f: F) -> Self
    where
        F: Fn(Value) -> Value + Send + Sync + 'static,
    {
        Self::new(move |_, v| Ok(f(v)))
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn call(&self, proc: &mut Proc, v: Value) -> Result<Value> {
        (self.body)(proc, v)
    }
}

impl PartialEq for WrapFn {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for WrapFn {}

impl fmt::Debug for WrapFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "wrap#{}", self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseEvent {
    pub kind: EventKind,
    pub channel: ChannelId,
    /// Always `None` for receives.
    pub payload: Option<Value>,
    /// Applied in order, first registered first.
    pub wraps: Vec<WrapFn>,
}

impl BaseEvent {
    pub fn send(channel: ChannelId, payload: Value) -> Self {
        BaseEvent {
            kind: EventKind::Send,
            channel,
            payload: Some(payload),
            wraps: Vec::new(),
        }
    }

    pub fn recv(channel: ChannelId) -> Self {
        BaseEvent {
            kind: EventKind::Recv,
            channel,
            payload: None,
            wraps: Vec::new(),
        }
    }
}

/// A canonical event: a non-empty list of base events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    bases: Vec<BaseEvent>,
}

impl Event {
    /// Builds an event from an explicit base list.
    pub fn from_bases(bases: Vec<BaseEvent>) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::usage("an event needs at least one base event"));
        }
        Ok(Event { bases })
    }

    pub fn bases(&self) -> &[BaseEvent] {
        &self.bases
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    /// Left-biased choice; see [`choose`].
    pub fn or(self, other: Event) -> Event {
        choose(&self, &other)
    }

    /// See [`wrap`].
    pub fn map(self, f: WrapFn) -> Event {
        wrap(&self, f)
    }

    /// Channels used with both a send and a receive. Synchronising such an
    /// event would let a process rendezvous with itself.
    pub fn self_rendezvous_channel(&self) -> Option<ChannelId> {
        self.bases.iter().find_map(|b| {
            self.bases
                .iter()
                .any(|o| o.channel == b.channel && o.kind != b.kind)
                .then_some(b.channel)
        })
    }
}

impl From<BaseEvent> for Event {
    fn from(b: BaseEvent) -> Self {
        Event { bases: vec![b] }
    }
}

/// `choose e1 e2`: the bases of `e1` followed by those of `e2`.
pub fn choose(e1: &Event, e2: &Event) -> Event {
    let mut bases = Vec::with_capacity(e1.bases.len() + e2.bases.len());
    bases.extend_from_slice(&e1.bases);
    bases.extend_from_slice(&e2.bases);
    Event { bases }
}

/// Choice over any number of events, leftmost first.
pub fn choose_all<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<Event> {
    let bases: Vec<_> = events.into_iter().flat_map(|e| e.bases.iter().cloned()).collect();
    Event::from_bases(bases)
}

/// `wrap e f`: distributes `f` over every base of `e`.
pub fn wrap(e: &Event, f: WrapFn) -> Event {
    let bases = e
        .bases
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.wraps.push(f.clone());
            b
        })
        .collect();
    Event { bases }
}

/// A channel: two FIFO queues of blocked processes and an optional driver.
#[derive(Debug, Clone)]
pub struct Channel {
    pub id: ChannelId,
    pub sendq: VecDeque<ProcessId>,
    pub recvq: VecDeque<ProcessId>,
    pub driver_binding: Option<DriverId>,
}

impl Channel {
    fn new(id: ChannelId) -> Self {
        Channel {
            id,
            sendq: VecDeque::new(),
            recvq: VecDeque::new(),
            driver_binding: None,
        }
    }

    pub fn queue(&self, kind: EventKind) -> &VecDeque<ProcessId> {
        match kind {
            EventKind::Send => &self.sendq,
            EventKind::Recv => &self.recvq,
        }
    }

    pub fn queue_mut(&mut self, kind: EventKind) -> &mut VecDeque<ProcessId> {
        match kind {
            EventKind::Send => &mut self.sendq,
            EventKind::Recv => &mut self.recvq,
        }
    }

    /// Remove every entry for `pid` from both queues.
    pub fn purge(&mut self, pid: ProcessId) {
        self.sendq.retain(|p| *p != pid);
        self.recvq.retain(|p| *p != pid);
    }
}

pub const DEFAULT_MAX_CHANNELS: usize = 64;

/// Densely numbered channel storage with a fixed capacity.
#[derive(Debug, Clone)]
pub struct ChannelTable {
    channels: Vec<Channel>,
    capacity: usize,
}

impl Default for ChannelTable {
    fn default() -> Self {
        Self::with_capacity(DEFAULT_MAX_CHANNELS)
    }
}

impl ChannelTable {
    pub fn with_capacity(capacity: usize) -> Self {
        ChannelTable {
            channels: Vec::new(),
            capacity,
        }
    }

    pub fn new_channel(&mut self) -> Result<ChannelId> {
        if self.channels.len() >= self.capacity {
            return Err(Error::resource(format!("channel capacity {} exhausted", self.capacity)));
        }
        let id = ChannelId(self.channels.len() as u32);
        self.channels.push(Channel::new(id));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn contains(&self, id: ChannelId) -> bool {
        (id.0 as usize) < self.channels.len()
    }

    pub fn get(&self, id: ChannelId) -> Result<&Channel> {
        self.channels
            .get(id.0 as usize)
            .ok_or_else(|| Error::usage(format!("unknown channel {id}")))
    }

    pub fn get_mut(&mut self, id: ChannelId) -> Result<&mut Channel> {
        self.channels
            .get_mut(id.0 as usize)
            .ok_or_else(|| Error::usage(format!("unknown channel {id}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Channel> {
        self.channels.iter_mut()
    }

    pub fn send_event(&self, chan: ChannelId, payload: impl Into<Value>) -> Result<Event> {
        self.get(chan)?;
        Ok(BaseEvent::send(chan, payload.into()).into())
    }

    pub fn recv_event(&self, chan: ChannelId) -> Result<Event> {
        self.get(chan)?;
        Ok(BaseEvent::recv(chan).into())
    }
}
