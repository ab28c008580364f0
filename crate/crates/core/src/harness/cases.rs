//! The case-study programs, written against [`Proc`].

use std::fmt;
use std::str::FromStr;

use crate::bridge::{Board, DriverId, DriverKind, Stimulus, StimulusScript};
use crate::error::{Error, Result};
use crate::events::{choose, choose_all, wrap, ChannelId, Event, Value, WrapFn};
use crate::harness::music::{fib_tailrec, DURATIONS, TWINKLE};
use crate::scheduler::{Config, Limit, Proc, RunReport, Runtime};
use crate::time::{Time, DEFAULT_CLOCK_HZ, TIME_MAX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseStudy {
    Blinky,
    ButtonBlinky,
    FourButton,
    ComplexFsm,
    Twinkle,
    SquareWave1khz,
    PingPong,
}

impl CaseStudy {
    pub const ALL: [CaseStudy; 7] = [
        CaseStudy::Blinky,
        CaseStudy::ButtonBlinky,
        CaseStudy::FourButton,
        CaseStudy::ComplexFsm,
        CaseStudy::Twinkle,
        CaseStudy::SquareWave1khz,
        CaseStudy::PingPong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaseStudy::Blinky => "blinky",
            CaseStudy::ButtonBlinky => "button_blinky",
            CaseStudy::FourButton => "four_button",
            CaseStudy::ComplexFsm => "complex_fsm",
            CaseStudy::Twinkle => "twinkle",
            CaseStudy::SquareWave1khz => "square_wave_1khz",
            CaseStudy::PingPong => "ping_pong",
        }
    }

    pub fn default_board(self) -> Board {
        use DriverKind::*;
        let kinds: &[DriverKind] = match self {
            CaseStudy::Blinky | CaseStudy::ButtonBlinky => &[Button, Led],
            CaseStudy::FourButton | CaseStudy::ComplexFsm => &[Button, Button, Button, Button, Led, Led, Led, Led],
            CaseStudy::Twinkle => &[Dac],
            CaseStudy::SquareWave1khz => &[Button, GpioProbe],
            CaseStudy::PingPong => &[],
        };
        Board::new(DEFAULT_CLOCK_HZ, kinds)
    }

    pub fn default_stimulus(self) -> StimulusScript {
        let s = |at, driver, data| Stimulus {
            at,
            driver: DriverId(driver),
            data,
        };
        let entries = match self {
            CaseStudy::ButtonBlinky => vec![s(1000, 0, 1), s(2000, 0, 0)],
            CaseStudy::FourButton => (0..4)
                .flat_map(|b| {
                    [
                        s(10_000 * (b as Time + 1), b, 1),
                        s(10_000 * (b as Time + 1) + 5_000, b, 0),
                    ]
                })
                .collect(),
            CaseStudy::ComplexFsm => vec![s(10_000, 0, 1), s(20_000, 1, 1)],
            _ => Vec::new(),
        };
        StimulusScript::new(entries)
    }

    pub fn default_until(self) -> Time {
        match self {
            CaseStudy::Blinky => 5_500_000,
            CaseStudy::ButtonBlinky => 10_000,
            CaseStudy::FourButton | CaseStudy::ComplexFsm => 100_000,
            CaseStudy::Twinkle => 17_000_000,
            CaseStudy::SquareWave1khz => 5_000_000,
            CaseStudy::PingPong => TIME_MAX,
        }
    }

    /// Drivers the program binds, with a predicate on their kind.
    fn requirements(self) -> Vec<(u32, Requirement)> {
        use Requirement::*;
        match self {
            CaseStudy::Blinky | CaseStudy::SquareWave1khz => vec![(1, Writeable)],
            CaseStudy::ButtonBlinky => vec![(0, Readable), (1, Writeable)],
            CaseStudy::FourButton | CaseStudy::ComplexFsm => (0..4)
                .map(|d| (d, Readable))
                .chain((4..8).map(|d| (d, Writeable)))
                .collect(),
            CaseStudy::Twinkle => vec![(0, Writeable)],
            CaseStudy::PingPong => Vec::new(),
        }
    }

    pub fn check_board(self, board: &Board) -> Result<()> {
        for (id, req) in self.requirements() {
            let id = DriverId(id);
            let ok = board.kind(id).is_some_and(|k| match req {
                Requirement::Readable => k.is_readable(),
                Requirement::Writeable => k.is_synchronous(),
            });
            if !ok {
                return Err(Error::usage(format!(
                    "{} needs a {} driver at {id}, board has {}",
                    self.name(),
                    req,
                    board.kind(id).map_or("nothing".to_string(), |k| k.to_string())
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Requirement {
    Readable,
    Writeable,
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Requirement::Readable => "readable",
            Requirement::Writeable => "writeable",
        })
    }
}

impl fmt::Display for CaseStudy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaseStudy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CaseStudy::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<_> = CaseStudy::ALL.iter().map(|c| c.name()).collect();
            Error::usage(format!(
                "unknown case study {s:?}; expected one of {}",
                names.join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct CaseOptions {
    pub board: Option<Board>,
    pub stimulus: Option<StimulusScript>,
    pub until: Option<Time>,
    pub clock_hz: Option<u64>,
    pub epsilon: Option<Time>,
    pub audit: bool,
    /// Compute `fib_tailrec(n)` before every timed sync (blinky and the
    /// square wave only).
    pub fib_load: Option<u32>,
}

/// A runtime with the case's program spawned and its stimuli loaded, ready
/// for [`Runtime::run`].
pub struct PreparedCase {
    pub runtime: Runtime,
    pub board: Board,
    pub limit: Limit,
}

pub fn prepare_case(case: CaseStudy, opts: &CaseOptions) -> Result<PreparedCase> {
    let board = opts.board.clone().unwrap_or_else(|| case.default_board());
    case.check_board(&board)?;
    let mut config = Config {
        clock_hz: opts.clock_hz.unwrap_or(board.clock_hz),
        audit: opts.audit,
        ..Config::default()
    };
    if config.clock_hz == 0 {
        return Err(Error::usage("clock frequency must be positive"));
    }
    if let Some(e) = opts.epsilon {
        config.epsilon = e;
    }
    let mut runtime = Runtime::new(config, &board);
    let fib = opts.fib_load;
    match case {
        CaseStudy::Blinky => runtime.spawn(move |p| blinky(p, fib))?,
        CaseStudy::ButtonBlinky => runtime.spawn(button_blinky)?,
        CaseStudy::FourButton => runtime.spawn(four_button)?,
        CaseStudy::ComplexFsm => runtime.spawn(complex_fsm)?,
        CaseStudy::Twinkle => runtime.spawn(twinkle)?,
        CaseStudy::SquareWave1khz => runtime.spawn(move |p| square_wave(p, fib))?,
        CaseStudy::PingPong => runtime.spawn(|p| ping_pong(p, 5))?,
    };
    let script = opts.stimulus.clone().unwrap_or_else(|| case.default_stimulus());
    runtime.load_stimuli(&script)?;
    let limit = Limit::until(opts.until.unwrap_or_else(|| case.default_until()));
    Ok(PreparedCase { runtime, board, limit })
}

pub fn run_case_study(case: CaseStudy, opts: &CaseOptions) -> Result<RunReport> {
    let prepared = prepare_case(case, opts)?;
    prepared.runtime.run(prepared.limit)
}

fn not(v: i64) -> i64 {
    i64::from(v == 0)
}

fn bind(p: &mut Proc, driver: u32) -> Result<ChannelId> {
    let ch = p.channel()?;
    p.spawn_external(ch, DriverId(driver))?;
    Ok(ch)
}

fn int(v: Value) -> Result<i64> {
    v.as_int()
        .ok_or_else(|| Error::usage(format!("expected an integer, got {v:?}")))
}

/// Toggle an LED once a second.
pub fn blinky(p: &mut Proc, fib_load: Option<u32>) -> Result<()> {
    let ledchan = bind(p, 1)?;
    let u = p.units();
    let mut val = 1;
    loop {
        if let Some(n) = fib_load {
            std::hint::black_box(fib_tailrec(std::hint::black_box(n)));
        }
        let ev = p.send(ledchan, val)?;
        p.sync_t(u.sec(1), u.usec(1), &ev)?;
        val = not(val);
    }
}

/// The LED follows the button.
pub fn button_blinky(p: &mut Proc) -> Result<()> {
    let butchan = bind(p, 0)?;
    let ledchan = bind(p, 1)?;
    let glowled = WrapFn::new(move |p, i| p.sync(&p.send(ledchan, i)?));
    let ev = wrap(&p.recv(butchan)?, glowled);
    loop {
        p.sync(&ev)?;
    }
}

/// Four buttons mirrored onto four LEDs.
pub fn four_button(p: &mut Proc) -> Result<()> {
    let buttons: Vec<ChannelId> = (0..4).map(|d| bind(p, d)).collect::<Result<_>>()?;
    let leds: Vec<ChannelId> = (4..8).map(|d| bind(p, d)).collect::<Result<_>>()?;
    let presses: Vec<Event> = buttons
        .iter()
        .zip(&leds)
        .map(|(&b, &l)| Ok(wrap(&p.recv(b)?, WrapFn::new(move |p, x| p.sync(&p.send(l, x)?)))))
        .collect::<Result<_>>()?;
    let anybutton = choose(&presses[0], &choose(&presses[1], &choose(&presses[2], &presses[3])));
    loop {
        p.sync(&anybutton)?;
    }
}

/// Two-press state machine with an error LED.
pub fn complex_fsm(p: &mut Proc) -> Result<()> {
    let b: Vec<ChannelId> = (0..4).map(|d| bind(p, d)).collect::<Result<_>>()?;
    let l: Vec<ChannelId> = (4..8).map(|d| bind(p, d)).collect::<Result<_>>()?;
    let (led1, led2, led3) = (l[0], l[1], l[2]);
    let to = |ch: ChannelId| WrapFn::pure(move |_| Value::Chan(ch));
    let on = |p: &Proc, button: ChannelId, ch: ChannelId| -> Result<Event> { Ok(wrap(&p.recv(button)?, to(ch))) };

    let fail1ev = choose_all(&[on(p, b[0], led3)?, on(p, b[2], led3)?, on(p, b[3], led3)?])?;
    let fail2ev = choose_all(&[on(p, b[0], led3)?, on(p, b[1], led3)?, on(p, b[2], led3)?])?;
    let second1 = choose(&on(p, b[1], led1)?, &fail1ev);
    let second2 = choose(&on(p, b[3], led2)?, &fail2ev);
    let led1_handler = WrapFn::new(move |p, _| p.sync(&second1));
    let led2_handler = WrapFn::new(move |p, _| p.sync(&second2));
    let fsm1 = wrap(&p.recv(b[0])?, led1_handler);
    let fsm2 = wrap(&p.recv(b[2])?, led2_handler);
    let top = choose(&fsm1, &fsm2);

    let mut state = 0;
    loop {
        let ch = p
            .sync(&top)?
            .as_channel()
            .ok_or_else(|| Error::internal("state machine did not yield a channel"))?;
        p.sync(&p.send(ch, not(state))?)?;
        state = not(state);
    }
}

/// Plays the tune forever on the DAC.
pub fn twinkle(p: &mut Proc) -> Result<()> {
    let dac_c = bind(p, 0)?;
    let note_c = p.channel()?;
    let first = TWINKLE[0].time_write();
    p.spawn(move |p| tune_p(p, dac_c, note_c, first, 1))?;
    p.spawn(move |p| player_p(p, note_c, 1, 0, 2))?;
    Ok(())
}

fn after(p: &mut Proc, t: Time, ev: &Event) -> Result<Value> {
    p.sync_t(t, 0, ev)
}

/// `melody` and `nt` index into the note and duration lists; `n` counts
/// notes sent so far, plus one.
fn player_p(p: &mut Proc, note_c: ChannelId, mut melody: usize, mut nt: usize, mut n: u32) -> Result<()> {
    loop {
        if n == 29 {
            let ev = p.send(note_c, TWINKLE[0].time_write() as i64)?;
            after(p, DURATIONS[nt], &ev)?;
            melody = 1;
            nt = 0;
            n = 2;
        } else {
            let ev = p.send(note_c, TWINKLE[melody].time_write() as i64)?;
            after(p, DURATIONS[nt], &ev)?;
            melody += 1;
            nt += 1;
            n += 1;
        }
    }
}

fn tune_p(p: &mut Proc, dac_c: ChannelId, note_c: ChannelId, mut time_period: Time, mut vol: i64) -> Result<()> {
    loop {
        let tp = time_period as i64;
        let write = wrap(&p.send(dac_c, vol * 4095)?, WrapFn::pure(move |_| Value::Int(tp)));
        let ev = choose(&p.recv(note_c)?, &write);
        let newtp = int(after(p, time_period, &ev)?)?;
        time_period = Time::try_from(newtp).map_err(|_| Error::usage(format!("negative note period {newtp}")))?;
        vol = not(vol);
    }
}

/// A 1 kHz square wave on the GPIO probe.
pub fn square_wave(p: &mut Proc, fib_load: Option<u32>) -> Result<()> {
    let ledchan = bind(p, 1)?;
    let mut val = 1;
    loop {
        if let Some(n) = fib_load {
            std::hint::black_box(fib_tailrec(std::hint::black_box(n)));
        }
        let ev = p.send(ledchan, val)?;
        p.sync_t(500, 0, &ev)?;
        val = not(val);
    }
}

/// Two processes bounce a counter over one channel, `rounds` times each way.
pub fn ping_pong(p: &mut Proc, rounds: usize) -> Result<()> {
    let ch = p.channel()?;
    p.spawn(move |p| {
        for i in 0..rounds {
            p.sync(&p.send(ch, i as i64 * 2)?)?;
            p.sync(&p.recv(ch)?)?;
        }
        Ok(())
    })?;
    p.spawn(move |p| {
        for _ in 0..rounds {
            let v = int(p.sync(&p.recv(ch)?)?)?;
            p.sync(&p.send(ch, v + 1)?)?;
        }
        Ok(())
    })?;
    Ok(())
}
