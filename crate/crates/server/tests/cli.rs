use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::Duration;

use tungstenite::Message;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_teleop-sim"))
}

fn repo(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(path)
}

fn temp(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("teleop-cli-{}-{name}", std::process::id()))
}

#[test]
fn scripted_run_writes_metrics_table_and_summary() {
    let metrics = temp("metrics.csv");
    let out = bin()
        .arg("--scenario")
        .arg(repo("scenarios/wall_stop.toml"))
        .arg("--trace")
        .arg(repo("scenarios/traces/full_forward_3ms.csv"))
        .args(["--run-time", "2", "--r-v", "0.3"])
        .arg("--metrics")
        .arg(&metrics)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("cycles: 50"), "{stdout}");
    assert!(stdout.contains("final position"));

    let text = std::fs::read_to_string(&metrics).unwrap();
    let _ = std::fs::remove_file(&metrics);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("stamp,op_vx"));
    let rows = lines[1..].iter().take_while(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 50);
    assert!(lines.iter().any(|l| l.starts_with("# min true clearance")));
}

#[test]
fn scan_log_is_written() {
    let log = temp("scans.bin");
    let out = bin()
        .arg("--scenario")
        .arg(repo("scenarios/straight_traverse.toml"))
        .args(["--run-time", "1"])
        .arg("--scan-log")
        .arg(&log)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let file = std::fs::File::open(&log).unwrap();
    let n = teleop_core::map::scan_log::ScanLogReader::new(file).unwrap().count();
    let _ = std::fs::remove_file(&log);
    // Two cameras at 30 Hz for one second.
    assert_eq!(n, 60);
}

#[test]
fn bad_inputs_exit_with_a_diagnostic() {
    let broken = temp("broken.toml");
    std::fs::write(&broken, "name = \"broken\"\n[grid]\nvx = 3\n").unwrap();
    let no_script = temp("no_script.toml");
    std::fs::write(
        &no_script,
        "name = \"quiet\"\n[grid]\nvx = { min = 0.0, max = 1.0, count = 2 }\nomega = { min = 0.0, max = 0.0, count = 1 }\nvz = { min = 0.0, max = 0.0, count = 1 }\n",
    )
    .unwrap();
    let bad_trace = temp("bad_trace.csv");
    std::fs::write(&bad_trace, "t,vx,vz,omega,rot\n0,1,0\n").unwrap();

    let cases: Vec<(Vec<std::ffi::OsString>, &str)> = vec![
        (vec!["--scenario".into(), broken.clone().into()], "error"),
        (vec!["--scenario".into(), temp("missing.toml").into()], "error"),
        (vec!["--scenario".into(), no_script.clone().into()], "--trace"),
        (
            vec!["--scenario".into(), no_script.clone().into(), "--trace".into(), bad_trace.clone().into()],
            "expected 5 fields",
        ),
        (
            vec!["--scenario".into(), repo("scenarios/wall_stop.toml").into(), "--vehicle-radius=-1".into()],
            "override",
        ),
    ];
    for (args, needle) in cases {
        let out = bin().args(&args).output().unwrap();
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(stderr.contains(needle), "{args:?}: {stderr}");
    }
    for p in [broken, no_script, bad_trace] {
        let _ = std::fs::remove_file(p);
    }
}

#[test]
fn live_mode_serves_config_to_a_client() {
    let mut child = bin()
        .arg("--scenario")
        .arg(repo("scenarios/pillar_slalom.toml"))
        .args(["--mode", "live", "--listen", "127.0.0.1:0", "--run-time", "2"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());
    let mut line = String::new();
    stdout.read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("listen banner").to_owned();

    let (mut ws, _) = tungstenite::connect(url).unwrap();
    let first = loop {
        if let Message::Text(t) = ws.read().unwrap() {
            break t;
        }
    };
    let v: serde_json::Value = serde_json::from_str(first.as_str()).unwrap();
    assert_eq!(v["type"], "config");
    assert_eq!(v["scenario"], "pillar_slalom");
    ws.send(Message::text(r#"{"type":"action","vx":5,"vz":0,"omega":0}"#)).unwrap();

    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        let _ = ws.read();
        std::thread::sleep(Duration::from_millis(5));
    };
    assert!(status.success());
    let mut rest = String::new();
    std::io::Read::read_to_string(&mut stdout, &mut rest).unwrap();
    assert!(rest.contains("cycles: 50"), "{rest}");
}
