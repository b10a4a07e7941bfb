use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use fvhand_core::wire::{split_frame, ButtonCommand, Message};

fn fvhand(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fvhand"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn last_row(csv: &str) -> Vec<String> {
    csv.lines().last().unwrap().split(',').map(str::to_string).collect()
}

#[test]
fn simulate_index_close_reaches_full_travel() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&fvhand(dir.path(), &["simulate", "--close", "index", "--duration", "1.5"]));
    let header: Vec<&str> = out.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "index_count").unwrap();
    let count: i64 = last_row(&out)[col].parse().unwrap();
    assert!((count - 60_000).abs() <= 500, "index ended at {count}");
}

#[test]
fn simulate_with_empty_script_stays_at_rest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.txt"), "# nothing\n").unwrap();
    let o = fvhand(dir.path(), &["simulate", "--script", "empty.txt", "--duration", "0.5", "--out", "t.csv"]);
    stdout(&o);
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 502);
    for line in csv.lines().skip(1) {
        let fields: Vec<f64> = line.split(',').skip(2).map(|f| f.parse().unwrap()).collect();
        assert!(fields.iter().all(|&v| v == 0.0), "{line}");
    }
}

#[test]
fn script_press_drives_a_motor() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.txt"), "0.1 2 press\n").unwrap();
    let out = stdout(&fvhand(dir.path(), &["simulate", "--script", "s.txt", "--duration", "0.5"]));
    let header: Vec<&str> = out.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "index_count").unwrap();
    let at = |tick: usize| -> i64 { out.lines().nth(tick + 1).unwrap().split(',').nth(col).unwrap().parse().unwrap() };
    assert_eq!(at(100), 0);
    assert!(at(500) > 1000);
}

#[test]
fn infer_ledger_reports_cost() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&fvhand(dir.path(), &["infer", "--ledger"]));
    assert!(out.contains("33302016"), "{out}");
    assert!(out.contains("7416"), "{out}");
}

#[test]
fn eval_reports_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--set", "classes=lemon", "--set", "mean_frames=3"];
    let mut args = vec!["dataset-gen", "--out", "ds"];
    args.extend(common);
    stdout(&fvhand(dir.path(), &args));
    let mut args = vec!["eval", "--data", "ds", "--out", "rep", "--set", "epochs=1", "--set", "crop=16x16"];
    args.extend(common);
    let out = stdout(&fvhand(dir.path(), &args));
    let rows = out.lines().filter(|l| l.starts_with("lemon")).count();
    assert_eq!(rows, 11, "{out}");
    assert!(dir.path().join("rep/report.json").exists());
    assert!(dir.path().join("rep/folds.csv").exists());
}

#[test]
fn encode_then_replay_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&fvhand(dir.path(), &["encode", "--out", "p.bin", "--camera", "3", "--counter", "17"]));
    let out = stdout(&fvhand(dir.path(), &["replay", "--input", "p.bin"]));
    assert!(out.contains("frame camera=3 counter=17 176x144"), "{out}");
    assert!(out.trim_end().ends_with("frames=1 sync_losses=0"), "{out}");
}

#[test]
fn dead_link_replay_reports_sync_loss() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&fvhand(dir.path(), &["mux", "--out", "s.bin", "--cycles", "30", "--dead", "10,20"]));
    let out = stdout(&fvhand(dir.path(), &["replay", "--input", "s.bin"]));
    assert!(out.contains("sync_loss"), "{out}");
    for line in out.lines().filter(|l| l.starts_with("frame ")) {
        let counter: u32 = line.split("counter=").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
        assert!(counter < 20, "{line}");
    }
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fvhand(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(fvhand(dir.path(), &["infer", "--set", "colour=red"]).status.code(), Some(1));
    assert_eq!(fvhand(dir.path(), &["simulate", "--duration", "-1"]).status.code(), Some(1));
    assert_eq!(fvhand(dir.path(), &["replay", "--input", "missing.bin"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.txt"), "0.1 9 press\n").unwrap();
    assert_eq!(fvhand(dir.path(), &["simulate", "--script", "bad.txt"]).status.code(), Some(2));
    assert_eq!(fvhand(dir.path(), &["eval", "--data", "nowhere", "--out", "r"]).status.code(), Some(2));
    assert_eq!(fvhand(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn resolved_config_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fvhand"))
        .args(["--seed", "9", "--set", "epochs=3", "infer", "--ledger"])
        .current_dir(dir.path())
        .env("RUST_LOG", "info")
        .output()
        .unwrap();
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("seed=9") && err.contains("epochs=3"), "{err}");
}

fn read_message(stream: &mut TcpStream, buf: &mut Vec<u8>) -> Message {
    loop {
        if let Ok((tag, body, used)) = split_frame(buf) {
            let msg = Message::decode_body(tag, body).expect("well-formed message");
            buf.drain(..used);
            return msg;
        }
        let mut chunk = [0u8; 65536];
        let n = stream.read(&mut chunk).expect("server sends");
        assert!(n > 0, "server closed the connection");
        buf.extend_from_slice(&chunk[..n]);
    }
}

#[test]
fn serve_press_starts_the_motor() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_fvhand"))
        .args(["serve", "--port", "0", "--speed", "0", "--ticks", "3000", "--set", "frame_rate_hz=1"])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(60))).unwrap();
    let mut buf = Vec::new();
    let Message::Hello(hello) = read_message(&mut stream, &mut buf) else { panic!("hello first") };
    assert_eq!((hello.version, hello.width, hello.height, hello.cameras), (1, 88, 72, 5));
    stream
        .write_all(&Message::ButtonCommand(ButtonCommand { button: 1, action: 0 }).encode())
        .unwrap();
    stream.write_all(&[2, 0, 0, 0, 0x7F, 0]).unwrap();
    let (mut acked, mut errored, mut driven, mut frames) = (false, false, false, 0);
    while !(acked && errored && driven && frames > 0) {
        match read_message(&mut stream, &mut buf) {
            Message::CommandAck(a) => {
                assert_eq!((a.button, a.drive_state), (1, 1));
                acked = true;
            }
            Message::Error { code, .. } => {
                assert_eq!(code, 2);
                errored = true;
            }
            Message::State(s) if acked => driven |= s.motors[0].pwm_duty != 0,
            Message::State(_) => {}
            Message::Frame(f) => {
                assert_eq!(f.total_macs, 33_302_016);
                assert_eq!(f.weight_bytes, 7416);
                frames += 1;
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    drop(stream);
    child.kill().ok();
    child.wait().unwrap();
}
