//! Low-level bridge between the runtime and (virtual) peripherals.
//!
//! Every driver exposes the same four operations: `ll_read`, `ll_write`,
//! `ll_data_readable` and `ll_data_writeable`. Synchronous drivers (LED,
//! DAC, GPIO probe, UART stub) complete writes immediately. The button is
//! asynchronous: it produces data through interrupt-like messages that the
//! scheduler turns into receives on the bound channel.
//!
//! Drivers are numbered by their position in the board file, from 0.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{ChannelId, ChannelTable};
use crate::time::{Time, DEFAULT_CLOCK_HZ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DriverId(pub u32);

impl fmt::Display for DriverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "drv{}", self.0)
    }
}

/// Handle returned by `spawn_external`, for symmetry with `spawn`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExternalThreadId(pub DriverId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    Button,
    Led,
    Dac,
    GpioProbe,
    UartStub,
}

impl DriverKind {
    pub fn is_synchronous(self) -> bool {
        !matches!(self, DriverKind::Button)
    }

    /// Devices that can hold data for the runtime to read.
    pub fn is_readable(self) -> bool {
        matches!(self, DriverKind::Button | DriverKind::UartStub)
    }
}

impl fmt::Display for DriverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DriverKind::Button => "button",
            DriverKind::Led => "led",
            DriverKind::Dac => "dac",
            DriverKind::GpioProbe => "gpio_probe",
            DriverKind::UartStub => "uart_stub",
        };
        f.write_str(s)
    }
}

/// One recorded transition on a GPIO probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeEdge {
    pub t: Time,
    pub level: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceState {
    Button,
    Led { on: bool },
    Dac { level: u32 },
    GpioProbe { level: Option<u32>, edges: Vec<ProbeEdge> },
    UartStub,
}

pub const DEFAULT_DRIVER_BUFFER_DEPTH: usize = 16;

#[derive(Debug, Clone)]
pub struct Driver {
    pub id: DriverId,
    pub kind: DriverKind,
    pub bound_channel: Option<ChannelId>,
    pub device: DeviceState,
    pending: VecDeque<u32>,
    depth: usize,
}

impl Driver {
    pub fn new(id: DriverId, kind: DriverKind, depth: usize) -> Self {
        let device = match kind {
            DriverKind::Button => DeviceState::Button,
            DriverKind::Led => DeviceState::Led { on: false },
            DriverKind::Dac => DeviceState::Dac { level: 0 },
            DriverKind::GpioProbe => DeviceState::GpioProbe {
                level: None,
                edges: Vec::new(),
            },
            DriverKind::UartStub => DeviceState::UartStub,
        };
        Driver {
            id,
            kind,
            bound_channel: None,
            device,
            pending: VecDeque::new(),
            depth,
        }
    }

    pub fn is_synchronous(&self) -> bool {
        self.kind.is_synchronous()
    }

    /// Write one word to the device at virtual time `now`. Returns the number
    /// of words written.
    pub fn ll_write(&mut self, word: u32, now: Time) -> Result<u32> {
        if !self.is_synchronous() {
            return Err(Error::usage(format!("{} ({}) is not writeable", self.id, self.kind)));
        }
        match &mut self.device {
            DeviceState::Led { on } => *on = word != 0,
            DeviceState::Dac { level } => *level = word,
            DeviceState::GpioProbe { level, edges } => {
                if *level != Some(word) {
                    edges.push(ProbeEdge { t: now, level: word });
                    *level = Some(word);
                }
            }
            DeviceState::UartStub | DeviceState::Button => {}
        }
        Ok(1)
    }

    /// Pop the oldest pending word.
    pub fn ll_read(&mut self) -> Result<u32> {
        self.pending
            .pop_front()
            .ok_or_else(|| Error::usage(format!("{} has no data to read", self.id)))
    }

    pub fn ll_data_readable(&self) -> u32 {
        self.pending.len() as u32
    }

    pub fn ll_data_writeable(&self) -> u32 {
        u32::from(self.is_synchronous())
    }

    /// Buffer a word that no process was waiting for. When the buffer is full
    /// the oldest word is dropped and returned.
    pub fn buffer(&mut self, word: u32) -> Option<u32> {
        let dropped = if self.pending.len() >= self.depth {
            self.pending.pop_front()
        } else {
            None
        };
        self.pending.push_back(word);
        dropped
    }

    pub fn pending(&self) -> impl Iterator<Item = &u32> {
        self.pending.iter()
    }

    pub fn probe_edges(&self) -> &[ProbeEdge] {
        match &self.device {
            DeviceState::GpioProbe { edges, .. } => edges,
            _ => &[],
        }
    }

    pub fn led_on(&self) -> Option<bool> {
        match self.device {
            DeviceState::Led { on } => Some(on),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DriverTable {
    drivers: Vec<Driver>,
}

impl DriverTable {
    pub fn get(&self, id: DriverId) -> Result<&Driver> {
        self.drivers
            .get(id.0 as usize)
            .ok_or_else(|| Error::usage(format!("unknown driver {id}")))
    }

    pub fn get_mut(&mut self, id: DriverId) -> Result<&mut Driver> {
        self.drivers
            .get_mut(id.0 as usize)
            .ok_or_else(|| Error::usage(format!("unknown driver {id}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Driver> {
        self.drivers.iter()
    }

    pub fn len(&self) -> usize {
        self.drivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drivers.is_empty()
    }
}

/// Bind a channel to a driver in both directions.
pub fn spawn_external(
    channels: &mut ChannelTable,
    drivers: &mut DriverTable,
    chan: ChannelId,
    driver: DriverId,
) -> Result<ExternalThreadId> {
    let ch = channels.get(chan)?;
    if let Some(d) = ch.driver_binding {
        return Err(Error::usage(format!("{chan} is already bound to {d}")));
    }
    let drv = drivers.get_mut(driver)?;
    if let Some(c) = drv.bound_channel {
        return Err(Error::usage(format!("{driver} is already bound to {c}")));
    }
    drv.bound_channel = Some(chan);
    channels.get_mut(chan)?.driver_binding = Some(driver);
    Ok(ExternalThreadId(driver))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverSpec {
    pub kind: DriverKind,
}

fn default_clock_hz() -> u64 {
    DEFAULT_CLOCK_HZ
}

/// Board description; the index in `drivers` is the driver id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Board {
    #[serde(default = "default_clock_hz")]
    pub clock_hz: u64,
    pub drivers: Vec<DriverSpec>,
}

impl Board {
    pub fn new(clock_hz: u64, kinds: &[DriverKind]) -> Self {
        Board {
            clock_hz,
            drivers: kinds.iter().map(|&kind| DriverSpec { kind }).collect(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let board: Board = serde_json::from_str(s)?;
        if board.clock_hz == 0 {
            return Err(Error::usage("clock_hz must be positive"));
        }
        Ok(board)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("board serialises")
    }

    pub fn kind(&self, id: DriverId) -> Option<DriverKind> {
        self.drivers.get(id.0 as usize).map(|d| d.kind)
    }

    pub fn driver_table(&self, depth: usize) -> DriverTable {
        DriverTable {
            drivers: self
                .drivers
                .iter()
                .enumerate()
                .map(|(i, d)| Driver::new(DriverId(i as u32), d.kind, depth))
                .collect(),
        }
    }
}

/// One scripted device event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub at: Time,
    pub driver: DriverId,
    pub data: u32,
}

/// Scripted stimuli, ordered by time with ties kept in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StimulusScript {
    entries: Vec<Stimulus>,
}

impl StimulusScript {
    pub fn new(mut entries: Vec<Stimulus>) -> Self {
        entries.sort_by_key(|s| s.at);
        StimulusScript { entries }
    }

    /// Parse JSON lines: `{"at":1000,"driver":0,"data":1}` per line.
    pub fn from_jsonl(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let st: Stimulus =
                serde_json::from_str(line).map_err(|e| Error::Parse(format!("stimulus line {}: {e}", n + 1)))?;
            entries.push(st);
        }
        Ok(Self::new(entries))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("stimulus serialises"));
            out.push('\n');
        }
        out
    }

    pub fn entries(&self) -> &[Stimulus] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn board_file_numbers_drivers_by_position() {
        let b = Board::from_json(
            r#"{"clock_hz":1000000, "drivers":[{"kind":"button"},{"kind":"led"},{"kind":"dac"},{"kind":"gpio_probe"}]}"#,
        )
        .unwrap();
        let t = b.driver_table(DEFAULT_DRIVER_BUFFER_DEPTH);
        let kinds: Vec<_> = t.iter().map(|d| (d.id.0, d.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (0, DriverKind::Button),
                (1, DriverKind::Led),
                (2, DriverKind::Dac),
                (3, DriverKind::GpioProbe)
            ]
        );
    }

    #[test]
    fn clock_defaults_when_omitted() {
        let b = Board::from_json(r#"{"drivers":[{"kind":"uart_stub"}]}"#).unwrap();
        assert_eq!(b.clock_hz, 1_000_000);
    }

    #[test]
    fn led_follows_written_word() {
        let mut led = Driver::new(DriverId(1), DriverKind::Led, 16);
        led.ll_write(1, 0).unwrap();
        assert_eq!(led.led_on(), Some(true));
        led.ll_write(0, 5).unwrap();
        assert_eq!(led.led_on(), Some(false));
        assert_eq!(led.ll_data_writeable(), 1);
    }

    #[test]
    fn dac_stores_level() {
        let mut dac = Driver::new(DriverId(0), DriverKind::Dac, 16);
        dac.ll_write(4095, 0).unwrap();
        assert_eq!(dac.device, DeviceState::Dac { level: 4095 });
    }

    #[test]
    fn probe_records_edges() {
        let mut p = Driver::new(DriverId(1), DriverKind::GpioProbe, 16);
        for k in 1..=6u64 {
            p.ll_write((k % 2) as u32, 500 * k).unwrap();
        }
        let deltas: Vec<u64> = p.probe_edges().windows(2).map(|w| w[1].t - w[0].t).collect();
        assert_eq!(deltas, vec![500; 5]);
    }

    #[test]
    fn button_queue_semantics() {
        let mut b = Driver::new(DriverId(0), DriverKind::Button, 16);
        assert_eq!(b.ll_data_writeable(), 0);
        assert!(matches!(b.ll_write(1, 0), Err(Error::Usage(_))));
        assert!(b.buffer(1).is_none());
        assert_eq!(b.ll_data_readable(), 1);
        assert_eq!(b.ll_read().unwrap(), 1);
        assert_eq!(b.ll_data_readable(), 0);
        assert!(matches!(b.ll_read(), Err(Error::Usage(_))));
    }

    #[test]
    fn full_buffer_drops_oldest() {
        let mut b = Driver::new(DriverId(0), DriverKind::Button, 16);
        let dropped: Vec<_> = (0..17).filter_map(|i| b.buffer(i)).collect();
        assert_eq!(dropped, vec![0]);
        assert_eq!(b.ll_data_readable(), 16);
        assert_eq!(b.ll_read().unwrap(), 1);
    }

    #[test]
    fn binding_rules() {
        let mut chans = ChannelTable::default();
        let butchan = chans.new_channel().unwrap();
        let ledchan = chans.new_channel().unwrap();
        let mut drivers = Board::new(1_000_000, &[DriverKind::Button, DriverKind::Led]).driver_table(16);
        spawn_external(&mut chans, &mut drivers, butchan, DriverId(0)).unwrap();
        spawn_external(&mut chans, &mut drivers, ledchan, DriverId(1)).unwrap();
        assert_eq!(chans.get(butchan).unwrap().driver_binding, Some(DriverId(0)));
        assert_eq!(drivers.get(DriverId(1)).unwrap().bound_channel, Some(ledchan));

        let spare = chans.new_channel().unwrap();
        assert!(spawn_external(&mut chans, &mut drivers, butchan, DriverId(1)).is_err());
        assert!(spawn_external(&mut chans, &mut drivers, spare, DriverId(0)).is_err());
        assert!(spawn_external(&mut chans, &mut drivers, spare, DriverId(9)).is_err());
    }

    #[test]
    fn stimulus_script_sorts_stably() {
        let s = StimulusScript::from_jsonl(
            "{\"at\":2000,\"driver\":0,\"data\":0}\n\n{\"at\":1000,\"driver\":0,\"data\":1}\n{\"at\":1000,\"driver\":1,\"data\":7}\n",
        )
        .unwrap();
        let v: Vec<_> = s.entries().iter().map(|e| (e.at, e.driver.0, e.data)).collect();
        assert_eq!(v, vec![(1000, 0, 1), (1000, 1, 7), (2000, 0, 0)]);
    }
}
