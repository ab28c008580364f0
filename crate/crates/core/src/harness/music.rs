//! Note tables for the "Twinkle, Twinkle" case study.

use crate::error::{Error, Result};
use crate::time::{Time, DEFAULT_CLOCK_HZ};

/// Half period of a tone, in ticks of a 1 MHz clock, rounded to nearest.
pub fn time_write(freq_hz: u64) -> Result<Time> {
    time_write_at(DEFAULT_CLOCK_HZ, freq_hz)
}

pub fn time_write_at(clock_hz: u64, freq_hz: u64) -> Result<Time> {
    if freq_hz == 0 {
        return Err(Error::usage("frequency must be positive"));
    }
    let denom = 2 * freq_hz;
    Ok((clock_hz + denom / 2) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Note {
    G,
    A,
    B,
    C,
    D,
    E,
}

impl Note {
    /// Tabulated half period in microseconds.
    pub fn time_write(self) -> Time {
        match self {
            Note::G => 2551,
            Note::A => 2273,
            Note::B => 2025,
            Note::C => 1911,
            Note::D => 1703,
            Note::E => 1517,
        }
    }

    /// Nominal frequency in whole hertz.
    pub fn frequency(self) -> u64 {
        match self {
            Note::G => 196,
            Note::A => 220,
            Note::B => 247,
            Note::C => 261,
            Note::D => 294,
            Note::E => 329,
        }
    }

    pub fn from_time_write(t: Time) -> Option<Note> {
        [Note::G, Note::A, Note::B, Note::C, Note::D, Note::E]
            .into_iter()
            .find(|n| n.time_write() == t)
    }
}

pub const QUARTER: Time = 500_000;
pub const HALF: Time = 1_000_000;

use Note::*;

pub const TWINKLE: [Note; 28] = [
    G, G, D, D, E, E, D, C, C, B, B, A, A, G, D, D, C, C, B, B, A, D, D, C, C, B, B, A,
];

pub const DURATIONS: [Time; 28] = [
    QUARTER, QUARTER, QUARTER, QUARTER, QUARTER, QUARTER, HALF, //
    QUARTER, QUARTER, QUARTER, QUARTER, QUARTER, QUARTER, HALF, //
    QUARTER, QUARTER, QUARTER, QUARTER, QUARTER, QUARTER, HALF, //
    QUARTER, QUARTER, QUARTER, QUARTER, QUARTER, QUARTER, HALF,
];

/// Length of one pass through the tune.
pub fn tune_length() -> Time {
    DURATIONS.iter().sum()
}

/// Tail-recursive Fibonacci, wrapping on overflow. Used as pure CPU load.
pub fn fib_tailrec(n: u32) -> u128 {
    fn go(n: u32, a: u128, b: u128) -> u128 {
        if n == 0 {
            a
        } else {
            go(n - 1, b, a.wrapping_add(b))
        }
    }
    go(n, 0, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_write_examples() {
        assert_eq!(time_write(196).unwrap(), 2551);
        assert_eq!(time_write(220).unwrap(), 2273);
        assert_eq!(time_write(500_000).unwrap(), 1);
        assert!(time_write(0).is_err());
    }

    #[test]
    fn fib_small_values() {
        assert_eq!(fib_tailrec(0), 0);
        assert_eq!(fib_tailrec(1), 1);
        assert_eq!(fib_tailrec(10), 55);
        assert_eq!(fib_tailrec(50), 12_586_269_025);
    }

    #[test]
    fn tune_is_sixteen_seconds() {
        assert_eq!(tune_length(), 16_000_000);
        assert_eq!(Note::from_time_write(1911), Some(Note::C));
    }
}
