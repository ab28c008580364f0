use std::path::Path;
use std::process::{Command, Output};

fn synchron(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synchron"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn summary(out: &Output) -> serde_json::Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(stdout.lines().last().expect("a summary line")).expect("summary is JSON")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn blinky_run_and_jitter() {
    let dir = tempfile::tempdir().unwrap();
    let trace = path(dir.path(), "blinky.jsonl");
    let out = synchron(&["run", "blinky", "--until", "5500000", "--trace", &trace]);
    assert!(out.status.success(), "{out:?}");
    let s = summary(&out);
    assert_eq!(s["outcome"], "limit_reached");
    assert_eq!(s["end_time"], 5_500_000);

    let text = std::fs::read_to_string(&trace).unwrap();
    let writes: Vec<u64> = text
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|r| r["kind"] == "driver_write")
        .map(|r| r["t"].as_u64().unwrap())
        .collect();
    assert_eq!(writes, vec![1_000_000, 2_000_000, 3_000_000, 4_000_000, 5_000_000]);

    let out = synchron(&["jitter", &trace, "--driver", "1", "--period", "1000000"]);
    assert!(out.status.success());
    assert_eq!(summary(&out)["max_abs_deviation"], 0);

    // A wrong period fails the check unless the tolerance covers it.
    let out = synchron(&["jitter", &trace, "--driver", "1", "--period", "999990"]);
    assert_eq!(out.status.code(), Some(1));
    let out = synchron(&[
        "jitter",
        &trace,
        "--driver",
        "1",
        "--period",
        "999990",
        "--tolerance",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn board_stimulus_and_fsm_check() {
    let dir = tempfile::tempdir().unwrap();
    let board = path(dir.path(), "board.json");
    let stim = path(dir.path(), "stim.jsonl");
    let trace = path(dir.path(), "trace.jsonl");
    let spec = path(dir.path(), "fsm.json");
    std::fs::write(
        &board,
        r#"{"clock_hz":1000000,"drivers":[{"kind":"button"},{"kind":"button"},{"kind":"button"},{"kind":"button"},{"kind":"led"},{"kind":"led"},{"kind":"led"},{"kind":"led"}]}"#,
    )
    .unwrap();
    std::fs::write(
        &stim,
        "{\"at\":100,\"driver\":0,\"data\":1}\n{\"at\":200,\"driver\":0,\"data\":1}\n{\"at\":300,\"driver\":2,\"data\":1}\n{\"at\":400,\"driver\":3,\"data\":1}\n",
    )
    .unwrap();
    let out = synchron(&[
        "run",
        "complex_fsm",
        "--board",
        &board,
        "--stimulus",
        &stim,
        "--until",
        "1000",
        "--trace",
        &trace,
        "--audit",
    ]);
    assert!(out.status.success(), "{out:?}");

    let out = synchron(&["fsm-table", "complex_fsm", "--out", &spec]);
    assert!(out.status.success());
    let out = synchron(&["fsm-check", &trace, "--spec", &spec]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let r = summary(&out);
    assert_eq!((r["inputs"].as_u64(), r["writes"].as_u64()), (Some(4), Some(2)));

    // The same trace does not fit the four-button table.
    let out = synchron(&["fsm-check", &trace, "--case", "four_button"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!summary(&out)["divergence"].is_null());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(synchron(&["run", "no_such_case"]).status.code(), Some(2));
    assert_eq!(synchron(&["run"]).status.code(), Some(2));
    assert_eq!(
        synchron(&["run", "blinky", "--board", &path(dir.path(), "missing.json")])
            .status
            .code(),
        Some(2)
    );
    // Blinky needs a writeable device on driver 1.
    let board = path(dir.path(), "board.json");
    std::fs::write(&board, r#"{"drivers":[{"kind":"led"},{"kind":"button"}]}"#).unwrap();
    assert_eq!(synchron(&["run", "blinky", "--board", &board]).status.code(), Some(2));
    assert_eq!(synchron(&["fsm-table", "blinky"]).status.code(), Some(2));
    let bad = path(dir.path(), "bad.jsonl");
    std::fs::write(&bad, "not json\n").unwrap();
    assert_eq!(
        synchron(&["jitter", &bad, "--driver", "0", "--period", "1"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn clean_runs_exit_with_zero() {
    for case in ["ping_pong", "button_blinky", "four_button", "square_wave_1khz"] {
        let out = synchron(&["run", case, "--audit"]);
        assert!(out.status.success(), "{case}: {out:?}");
        assert!(summary(&out).get("violations").is_none());
    }
}

#[test]
fn uart_input_waits_instead_of_deadlocking() {
    let dir = tempfile::tempdir().unwrap();
    let board = path(dir.path(), "board.json");
    std::fs::write(&board, r#"{"drivers":[{"kind":"uart_stub"},{"kind":"led"}]}"#).unwrap();
    let out = synchron(&["run", "button_blinky", "--board", &board, "--until", "100"]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(summary(&out)["outcome"], "limit_reached");
}

#[test]
fn cases_lists_every_case() {
    let out = synchron(&["cases"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().any(|l| l == "square_wave_1khz"));
}
