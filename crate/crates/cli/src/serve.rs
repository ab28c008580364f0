//! Panel server: streams a live run over one websocket connection and feeds
//! button presses back into it.
//!
//! Every websocket text frame carries newline-terminated JSON objects.
//! Server to client: `board`, `snapshot` and `trace` messages. Client to
//! server: `{"type":"press","driver":0,"data":1}`.

use std::io::{ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use synchron::harness::{prepare_case, CaseOptions, CaseStudy, Snapshot};
use synchron::{Board, DriverId, LiveInput, LiveWait, RunReport, Time, TraceRecord, TIME_MAX};
use tungstenite::{Message, WebSocket};

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ServerMsg<'a> {
    Board {
        case: &'a str,
        #[serde(flatten)]
        board: &'a Board,
    },
    Snapshot(&'a Snapshot),
    Trace(&'a TraceRecord),
}

impl ServerMsg<'_> {
    fn line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server messages serialise");
        s.push('\n');
        s
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientMsg {
    Press { driver: DriverId, data: u32 },
}

struct Press {
    driver: DriverId,
    data: u32,
}

/// Maps wall-clock time since the run started onto virtual ticks.
struct Pacer {
    start: Instant,
    ticks_per_sec: f64,
}

impl Pacer {
    fn virtual_now(&self) -> Time {
        (self.start.elapsed().as_secs_f64() * self.ticks_per_sec) as Time
    }

    fn wall_at(&self, t: Time) -> Instant {
        let secs = t as f64 / self.ticks_per_sec;
        // Far-future instants would overflow `Instant`; an hour is plenty
        // for a single wait.
        self.start + Duration::from_secs_f64(secs.min(self.start.elapsed().as_secs_f64() + 3600.0))
    }
}

struct PanelInput {
    presses: Receiver<Press>,
    pacer: Pacer,
    board: Board,
}

impl LiveInput for PanelInput {
    fn wait(&mut self, now: Time, next: Option<Time>) -> LiveWait {
        loop {
            let got = match next {
                Some(t) => {
                    let timeout = self.pacer.wall_at(t).saturating_duration_since(Instant::now());
                    self.presses.recv_timeout(timeout)
                }
                None => self.presses.recv().map_err(|_| RecvTimeoutError::Disconnected),
            };
            match got {
                Ok(p) => {
                    if !self.board.kind(p.driver).is_some_and(|k| k.is_readable()) {
                        log::warn!("ignoring press on {}: not an input device", p.driver);
                        continue;
                    }
                    let at = self.pacer.virtual_now().max(now);
                    return LiveWait::Stimulus {
                        at,
                        driver: p.driver,
                        data: p.data,
                    };
                }
                Err(RecvTimeoutError::Timeout) => return LiveWait::Elapsed,
                Err(RecvTimeoutError::Disconnected) => return LiveWait::Stop,
            }
        }
    }
}

/// Accept one panel connection on `port`, run `case` live, and return the
/// report once the run ends or the panel disconnects.
pub fn serve(case: CaseStudy, opts: &CaseOptions, port: u16, speed: f64) -> anyhow::Result<RunReport> {
    let listener = TcpListener::bind(("127.0.0.1", port)).context("binding the panel port")?;
    let addr = listener.local_addr()?;
    println!("listening on ws://{addr}");
    std::io::stdout().flush()?;

    let (stream, peer) = listener.accept().context("accepting a panel connection")?;
    log::info!("panel connected from {peer}");
    let mut ws = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("websocket handshake: {e}"))?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;

    // Input comes from the panel unless a script was given explicitly.
    let opts = CaseOptions {
        stimulus: Some(opts.stimulus.clone().unwrap_or_default()),
        ..opts.clone()
    };
    let mut prepared = prepare_case(case, &opts)?;
    let board = prepared.board.clone();
    // Without an explicit limit a live run lasts as long as the panel.
    if opts.until.is_none() {
        prepared.limit = synchron::Limit::until(TIME_MAX);
    }

    ws.send(Message::text(
        ServerMsg::Board {
            case: case.name(),
            board: &board,
        }
        .line(),
    ))?;
    let mut snapshot = Snapshot::new(&board);
    ws.send(Message::text(ServerMsg::Snapshot(&snapshot).line()))?;

    let (out_tx, out_rx) = mpsc::channel::<String>();
    let (press_tx, press_rx) = mpsc::channel::<Press>();
    let io = thread::spawn(move || pump(ws, out_rx, press_tx));

    let mut runtime = prepared.runtime;
    let sink_tx = out_tx.clone();
    runtime.set_trace_sink(Box::new(move |r| {
        let _ = sink_tx.send(ServerMsg::Trace(r).line());
    }));
    let clock_hz = opts.clock_hz.unwrap_or(board.clock_hz);
    runtime.set_live_input(Box::new(PanelInput {
        presses: press_rx,
        pacer: Pacer {
            start: Instant::now(),
            ticks_per_sec: clock_hz as f64 * speed,
        },
        board: board.clone(),
    }));

    let report = runtime.run(prepared.limit);
    if let Ok(r) = &report {
        for rec in r.trace.iter() {
            snapshot.apply(rec);
        }
        let _ = out_tx.send(ServerMsg::Snapshot(&snapshot).line());
    }
    drop(out_tx);
    if let Err(e) = io.join().expect("panel i/o thread panicked") {
        log::warn!("panel connection: {e}");
    }
    Ok(report?)
}

/// Moves messages between the socket and the run until the run ends (the
/// outgoing channel closes) or the panel goes away.
fn pump(mut ws: WebSocket<TcpStream>, out: Receiver<String>, presses: Sender<Press>) -> anyhow::Result<()> {
    loop {
        loop {
            match out.try_recv() {
                Ok(line) => ws.send(Message::text(line))?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    // Let the close handshake finish.
                    while ws.read().is_ok() {}
                    return Ok(());
                }
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                for line in text.as_str().lines().filter(|l| !l.trim().is_empty()) {
                    match serde_json::from_str::<ClientMsg>(line) {
                        Ok(ClientMsg::Press { driver, data }) => {
                            if presses.send(Press { driver, data }).is_err() {
                                return Ok(());
                            }
                        }
                        Err(e) => log::warn!("ignoring panel message {line:?}: {e}"),
                    }
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        }
    }
}
