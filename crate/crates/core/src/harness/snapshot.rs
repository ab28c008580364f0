//! Visible device state, folded from trace records.

use serde::{Deserialize, Serialize};

use crate::bridge::{Board, DriverId, DriverKind};
use crate::time::Time;
use crate::trace::{TraceKind, TraceRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverView {
    pub driver: DriverId,
    pub kind: DriverKind,
    /// Last word seen on the device, in either direction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
}

impl DriverView {
    /// Button held down, or LED lit.
    pub fn active(&self) -> bool {
        self.level.is_some_and(|l| l != 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: Time,
    pub drivers: Vec<DriverView>,
}

impl Snapshot {
    pub fn new(board: &Board) -> Self {
        Snapshot {
            t: 0,
            drivers: board
                .drivers
                .iter()
                .enumerate()
                .map(|(i, d)| DriverView {
                    driver: DriverId(i as u32),
                    kind: d.kind,
                    level: None,
                })
                .collect(),
        }
    }

    pub fn apply(&mut self, r: &TraceRecord) {
        self.t = self.t.max(r.t);
        if !matches!(r.kind, TraceKind::DriverMsg | TraceKind::DriverWrite) {
            return;
        }
        if let (Some(d), Some(data)) = (r.driver, r.data) {
            if let Some(v) = self.drivers.get_mut(d.0 as usize) {
                v.level = Some(data);
            }
        }
    }

    pub fn fold<'a>(board: &Board, records: impl IntoIterator<Item = &'a TraceRecord>) -> Self {
        let mut s = Snapshot::new(board);
        for r in records {
            s.apply(r);
        }
        s
    }
}
