use std::io::{BufRead, BufReader};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use synchron::harness::{run_case_study, CaseOptions, CaseStudy, Snapshot};
use synchron::{DriverId, Stimulus, StimulusScript, TraceRecord};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

type Socket = WebSocket<MaybeTlsStream<TcpStream>>;

/// Kills the server if the test bails out early.
struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start(args: &[&str]) -> (Server, BufReader<std::process::ChildStdout>, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_synchron"))
        .args(args)
        .stdout(Stdio::piped())
        .spawn()
        .expect("server starts");
    let mut out = BufReader::new(child.stdout.take().unwrap());
    let mut line = String::new();
    out.read_line(&mut line).unwrap();
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();
    (Server(child), out, url)
}

fn connect(url: &str) -> Socket {
    let (ws, _) = tungstenite::connect(url).expect("connects");
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    }
    ws
}

/// Next JSON object from the server; every frame holds newline-terminated
/// lines.
fn next(ws: &mut Socket, pending: &mut Vec<Value>) -> Value {
    loop {
        if !pending.is_empty() {
            return pending.remove(0);
        }
        match ws.read().expect("server message") {
            Message::Text(t) => {
                assert!(t.as_str().ends_with('\n'), "frame is not newline-terminated");
                for l in t.as_str().lines() {
                    pending.push(serde_json::from_str(l).expect("frame line is JSON"));
                }
            }
            Message::Close(_) => panic!("server closed early"),
            _ => {}
        }
    }
}

fn until_write(ws: &mut Socket, pending: &mut Vec<Value>, seen: &mut Vec<Value>, data: u64) -> Value {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        assert!(Instant::now() < deadline, "no LED write with data {data}");
        let m = next(ws, pending);
        seen.push(m.clone());
        if m["type"] == "trace" && m["kind"] == "driver_write" && m["driver"] == 1 && m["data"] == data {
            return m;
        }
    }
}

fn press(ws: &mut Socket, driver: u32, data: u32) {
    let line = json!({"type": "press", "driver": driver, "data": data}).to_string() + "\n";
    ws.send(Message::text(line)).unwrap();
}

#[test]
fn panel_round_trip_matches_batch_run() {
    let (mut server, mut out, url) = start(&["run", "button_blinky", "--serve", "0"]);
    let mut ws = connect(&url);
    let mut pending = Vec::new();

    let board = next(&mut ws, &mut pending);
    assert_eq!(board["type"], "board");
    assert_eq!(board["case"], "button_blinky");
    assert_eq!(board["drivers"], json!([{"kind": "button"}, {"kind": "led"}]));
    let snap = next(&mut ws, &mut pending);
    assert_eq!(snap["type"], "snapshot");
    assert_eq!(snap["t"], 0);

    let mut seen = Vec::new();
    // A press on the LED is not an input and must be ignored.
    press(&mut ws, 1, 1);
    press(&mut ws, 0, 1);
    let on = until_write(&mut ws, &mut pending, &mut seen, 1);
    std::thread::sleep(Duration::from_millis(30));
    press(&mut ws, 0, 0);
    let off = until_write(&mut ws, &mut pending, &mut seen, 0);
    assert!(off["t"].as_u64() > on["t"].as_u64());
    ws.close(None).unwrap();
    while ws.read().is_ok() {}

    let status = server.0.wait().unwrap();
    assert!(status.success());
    let mut summary = String::new();
    out.read_line(&mut summary).unwrap();
    let summary: Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["outcome"], "stopped");

    // Replay the injection instants in batch mode.
    let records: Vec<TraceRecord> = seen
        .iter()
        .filter(|m| m["type"] == "trace")
        .map(|m| {
            let mut m = m.clone();
            m.as_object_mut().unwrap().remove("type");
            serde_json::from_value(m).unwrap()
        })
        .collect();
    let msgs: Vec<&TraceRecord> = records
        .iter()
        .filter(|r| r.kind == synchron::TraceKind::DriverMsg)
        .collect();
    assert_eq!(msgs.len(), 2, "exactly one stimulus per button press: {msgs:?}");
    let script = StimulusScript::new(
        msgs.iter()
            .map(|r| Stimulus {
                at: r.t,
                driver: r.driver.unwrap(),
                data: r.data.unwrap(),
            })
            .collect(),
    );
    let opts = CaseOptions {
        stimulus: Some(script),
        until: Some(off["t"].as_u64().unwrap() + 1),
        ..Default::default()
    };
    let batch = run_case_study(CaseStudy::ButtonBlinky, &opts).unwrap();
    let board = CaseStudy::ButtonBlinky.default_board();
    let live_state = Snapshot::fold(&board, records.iter());
    let batch_state = Snapshot::fold(&board, batch.trace.iter());
    assert_eq!(live_state.drivers, batch_state.drivers);
    assert!(!live_state.drivers[1].active());

    let batch_writes: Vec<u64> = batch.trace.driver_writes(DriverId(1)).map(|r| r.t).collect();
    let live_writes = [on["t"].as_u64().unwrap(), off["t"].as_u64().unwrap()];
    for (b, l) in batch_writes.iter().zip(live_writes) {
        assert!(b.abs_diff(l) <= 1, "batch {b} vs live {l}");
    }
    // Each write happens on the tick its press was injected.
    for (m, l) in msgs.iter().zip(live_writes) {
        assert!(m.t.abs_diff(l) <= 1);
    }
}

#[test]
fn virtual_time_follows_the_wall_clock() {
    // At 1 MHz and speed 1, blinky's first write arrives after about a
    // second of wall time.
    let (mut server, _out, url) = start(&["run", "blinky", "--serve", "0", "--until", "1500000"]);
    let t0 = Instant::now();
    let mut ws = connect(&url);
    let mut pending = Vec::new();
    let mut seen = Vec::new();
    let w = until_write(&mut ws, &mut pending, &mut seen, 1);
    let wall = t0.elapsed();
    assert_eq!(w["t"], 1_000_000);
    assert!(wall >= Duration::from_millis(900), "{wall:?}");
    assert!(server.0.wait().unwrap().success());
}
