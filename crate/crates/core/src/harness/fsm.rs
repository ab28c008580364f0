//! Explicit transition tables for the button/LED case studies, and a
//! checker that replays a trace's button inputs through a table.
//!
//! Tables are derived by exhaustive exploration of a sequential model of
//! each program: the program sits at one `sync` point at a time, a press on
//! a button the current event listens to is consumed at once, and any other
//! press waits in that driver's buffer until an event that listens to it is
//! synchronised.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bridge::{DriverId, DEFAULT_DRIVER_BUFFER_DEPTH};
use crate::error::{Error, Result};
use crate::time::Time;
use crate::trace::{Trace, TraceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FsmInput {
    pub driver: DriverId,
    pub data: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FsmOutput {
    pub driver: DriverId,
    pub data: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsmTransition {
    pub state: String,
    pub input: FsmInput,
    pub next: String,
    pub outputs: Vec<FsmOutput>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FsmSpec {
    pub name: String,
    pub initial: String,
    pub transitions: Vec<FsmTransition>,
}

impl FsmSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(format!("fsm spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fsm spec serialises")
    }

    pub fn states(&self) -> usize {
        let mut s: Vec<&str> = self.transitions.iter().map(|t| t.state.as_str()).collect();
        s.sort_unstable();
        s.dedup();
        s.len()
    }

    fn index(&self) -> Result<HashMap<(&str, FsmInput), &FsmTransition>> {
        let mut map = HashMap::with_capacity(self.transitions.len());
        for t in &self.transitions {
            if map.insert((t.state.as_str(), t.input), t).is_some() {
                return Err(Error::Parse(format!(
                    "fsm spec has two transitions for state {:?} on {:?}",
                    t.state, t.input
                )));
            }
        }
        Ok(map)
    }
}

/// A sequential model of a button/LED program.
pub trait ProgramModel: Clone + Eq + std::hash::Hash {
    /// Feed one press; return the LED writes it causes, in order.
    fn press(&mut self, input: FsmInput) -> Vec<FsmOutput>;
    fn label(&self) -> String;
}

/// Enumerate every state reachable from `initial` under `inputs`.
pub fn derive_table<M: ProgramModel>(name: &str, initial: M, inputs: &[FsmInput]) -> FsmSpec {
    let mut seen: HashMap<M, String> = HashMap::new();
    let mut frontier = VecDeque::new();
    seen.insert(initial.clone(), initial.label());
    frontier.push_back(initial.clone());
    let mut transitions = Vec::new();
    while let Some(m) = frontier.pop_front() {
        for input in inputs {
            let mut next = m.clone();
            let outputs = next.press(*input);
            let label = next.label();
            if !seen.contains_key(&next) {
                seen.insert(next.clone(), label.clone());
                frontier.push_back(next);
            }
            transitions.push(FsmTransition {
                state: m.label(),
                input: *input,
                next: label,
                outputs,
            });
        }
    }
    FsmSpec {
        name: name.to_string(),
        initial: initial.label(),
        transitions,
    }
}

/// Four independent button-to-LED mirrors: a press on button `i` writes its
/// data to LED `i + 4`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FourButtonModel;

impl ProgramModel for FourButtonModel {
    fn press(&mut self, input: FsmInput) -> Vec<FsmOutput> {
        if input.driver.0 < 4 {
            vec![FsmOutput {
                driver: DriverId(input.driver.0 + 4),
                data: input.data,
            }]
        } else {
            Vec::new()
        }
    }

    fn label(&self) -> String {
        "listening".to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Point {
    /// Waiting for button 1 or 3.
    Off,
    /// Button 1 seen; button 2 completes, 1/3/4 is an error.
    AfterB1,
    /// Button 3 seen; button 4 completes, 1/2/3 is an error.
    AfterB3,
}

/// The two-press state machine with an error LED. Buttons are drivers 0-3,
/// LEDs 4-7; every completed pair writes `not state` to one LED and flips
/// `state`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ComplexFsmModel {
    point: Point,
    state: u32,
    buffered: [usize; 4],
    depth: usize,
}

impl Default for ComplexFsmModel {
    fn default() -> Self {
        Self::with_depth(DEFAULT_DRIVER_BUFFER_DEPTH)
    }
}

impl ComplexFsmModel {
    pub fn with_depth(depth: usize) -> Self {
        ComplexFsmModel {
            point: Point::Off,
            state: 0,
            buffered: [0; 4],
            depth,
        }
    }

    /// Buttons the current sync point listens to, leftmost first.
    fn listening(&self) -> &'static [u32] {
        match self.point {
            Point::Off => &[0, 2],
            Point::AfterB1 => &[1, 0, 2, 3],
            Point::AfterB3 => &[3, 0, 1, 2],
        }
    }

    fn consume(&mut self, button: u32) -> Option<FsmOutput> {
        let (next, led) = match (self.point, button) {
            (Point::Off, 0) => (Point::AfterB1, None),
            (Point::Off, 2) => (Point::AfterB3, None),
            (Point::AfterB1, 1) => (Point::Off, Some(4)),
            (Point::AfterB3, 3) => (Point::Off, Some(5)),
            (Point::AfterB1 | Point::AfterB3, _) => (Point::Off, Some(6)),
            (Point::Off, _) => unreachable!("button {button} is not listened to"),
        };
        self.point = next;
        led.map(|d| {
            self.state = 1 - self.state;
            FsmOutput {
                driver: DriverId(d),
                data: self.state,
            }
        })
    }
}

impl ProgramModel for ComplexFsmModel {
    fn press(&mut self, input: FsmInput) -> Vec<FsmOutput> {
        let b = input.driver.0;
        if b >= 4 {
            return Vec::new();
        }
        let mut out = Vec::new();
        if self.listening().contains(&b) {
            out.extend(self.consume(b));
        } else if self.buffered[b as usize] < self.depth {
            self.buffered[b as usize] += 1;
        }
        while let Some(&p) = self.listening().iter().find(|p| self.buffered[**p as usize] > 0) {
            self.buffered[p as usize] -= 1;
            out.extend(self.consume(p));
        }
        out
    }

    fn label(&self) -> String {
        let p = match self.point {
            Point::Off => "off",
            Point::AfterB1 => "b1",
            Point::AfterB3 => "b3",
        };
        format!("{p} s={} buf={:?}", self.state, self.buffered)
    }
}

pub fn presses(drivers: std::ops::Range<u32>, data: &[u32]) -> Vec<FsmInput> {
    drivers
        .flat_map(|d| {
            data.iter().map(move |x| FsmInput {
                driver: DriverId(d),
                data: *x,
            })
        })
        .collect()
}

pub fn four_button_table() -> FsmSpec {
    derive_table("four_button", FourButtonModel, &presses(0..4, &[0, 1]))
}

pub fn complex_fsm_table() -> FsmSpec {
    derive_table("complex_fsm", ComplexFsmModel::default(), &presses(0..4, &[1]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    /// Index of the offending trace record, or the trace length when an
    /// expected write never happened.
    pub record: usize,
    pub t: Time,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConformanceReport {
    pub inputs: usize,
    pub writes: usize,
    pub final_state: String,
    pub divergence: Option<Divergence>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.divergence.is_none()
    }
}

/// Replay the trace's `driver_msg` records through `spec` and check that the
/// trace's `driver_write` records are exactly the table's outputs, in order
/// and at the instant of the input that caused them.
///
/// Inputs are taken one at a time, so stimuli should fall on distinct ticks;
/// several inputs on one tick are queued together and served in the
/// program's choice order.
pub fn fsm_conformance(trace: &Trace, spec: &FsmSpec) -> ConformanceReport {
    let index = match spec.index() {
        Ok(i) => i,
        Err(e) => {
            return ConformanceReport {
                inputs: 0,
                writes: 0,
                final_state: spec.initial.clone(),
                divergence: Some(Divergence {
                    record: 0,
                    t: 0,
                    message: e.to_string(),
                }),
            }
        }
    };
    let mut state = spec.initial.as_str();
    let mut expected: VecDeque<(Time, FsmOutput)> = VecDeque::new();
    let mut inputs = 0;
    let mut writes = 0;
    let fail = |record: usize, t: Time, message: String| Some(Divergence { record, t, message });
    let mut divergence = None;

    for (i, r) in trace.records().iter().enumerate() {
        match r.kind {
            TraceKind::DriverMsg => {
                let (Some(driver), Some(data)) = (r.driver, r.data) else {
                    continue;
                };
                let input = FsmInput { driver, data };
                inputs += 1;
                match index.get(&(state, input)) {
                    Some(t) => {
                        expected.extend(t.outputs.iter().map(|o| (r.t, *o)));
                        state = t.next.as_str();
                    }
                    None => {
                        divergence = fail(i, r.t, format!("no transition from {state:?} on {input:?}"));
                        break;
                    }
                }
            }
            TraceKind::DriverWrite => {
                writes += 1;
                let got = FsmOutput {
                    driver: r.driver.unwrap_or(DriverId(u32::MAX)),
                    data: r.data.unwrap_or(u32::MAX),
                };
                match expected.pop_front() {
                    Some((t, want)) if want == got && t == r.t => {}
                    Some((t, want)) => {
                        divergence = fail(
                            i,
                            r.t,
                            format!("expected {want:?} at t={t}, trace wrote {got:?} at t={}", r.t),
                        );
                        break;
                    }
                    None => {
                        divergence = fail(i, r.t, format!("unexpected write {got:?}"));
                        break;
                    }
                }
            }
            _ => {}
        }
    }
    if divergence.is_none() {
        if let Some((t, want)) = expected.front() {
            divergence = fail(trace.len(), *t, format!("expected write {want:?} never happened"));
        }
    }
    ConformanceReport {
        inputs,
        writes,
        final_state: state.to_string(),
        divergence,
    }
}

/// Outputs of replaying `inputs` through the table, grouped per input.
pub fn replay(spec: &FsmSpec, inputs: &[FsmInput]) -> Result<Vec<Vec<FsmOutput>>> {
    let index = spec.index()?;
    let mut state = spec.initial.as_str();
    let mut out = Vec::new();
    for i in inputs {
        let t = index
            .get(&(state, *i))
            .ok_or_else(|| Error::usage(format!("no transition from {state:?} on {i:?}")))?;
        out.push(t.outputs.clone());
        state = t.next.as_str();
    }
    Ok(out)
}

/// Number of transitions per state, for summaries.
pub fn fan_out(spec: &FsmSpec) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in &spec.transitions {
        *m.entry(t.state.clone()).or_insert(0) += 1;
    }
    m
}
