//! End-to-end runs of the `stars` binary.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use serde_json::{json, Value};

fn stars() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stars"))
}

fn ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

/// q0 -a-> {q1 .5, q2 .5}, q0 -b-> q0, q1 -a-> q0, q2 -a-> q2 | q0.
fn small_mdp(dir: &Path) -> PathBuf {
    write(
        dir,
        "m.json",
        &json!({
            "states": ["q0", "q1", "q2"],
            "actions": {"q0": ["a", "b"], "q1": ["a"], "q2": ["a", "b"]},
            "trans": {
                "q0|a": [["q1", 0.5], ["q2", 0.5]],
                "q0|b": [["q0", 1.0]],
                "q1|a": [["q0", 1.0]],
                "q2|a": [["q2", 1.0]],
                "q2|b": [["q0", 1.0]]
            },
            "initial": "q0"
        }),
    )
}

#[test]
fn synth_writes_a_template() {
    let d = tempfile::tempdir().unwrap();
    let m = small_mdp(d.path());
    let cells = write(d.path(), "b.json", &json!(["q1"]));
    let out = d.path().join("t.json");
    ok(stars().args(["synth", "--mdp"]).arg(&m).arg("--objective").arg(format!("buchi:{}", cells.display())).arg("--out").arg(&out));
    let t: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(t["winning_region"].as_array().unwrap().len(), 3);
    assert!(!t["live_groups"].as_array().unwrap().is_empty());
}

#[test]
fn simulate_trace_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let m = small_mdp(d.path());
    let cells = write(d.path(), "b.json", &json!(["q1"]));
    let obj = format!("buchi:{}", cells.display());
    let run = |name: &str| {
        let p = d.path().join(name);
        ok(stars()
            .args(["simulate", "--mdp"])
            .arg(&m)
            .args(["--objective", &obj, "--steps", "200", "--seed", "9", "--trace"])
            .arg(&p));
        std::fs::read_to_string(p).unwrap()
    };
    let a = run("a.jsonl");
    assert_eq!(a.lines().count(), 200);
    assert_eq!(a, run("b.jsonl"));
    let first: Value = serde_json::from_str(a.lines().next().unwrap()).unwrap();
    for key in ["state", "nominal", "shielded", "action", "counters"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn oracle_check_passes_on_a_small_mdp() {
    let d = tempfile::tempdir().unwrap();
    let m = small_mdp(d.path());
    let cells = write(d.path(), "b.json", &json!(["q1"]));
    let out = ok(stars()
        .args(["oracle-check", "--mdp"])
        .arg(&m)
        .args(["--horizon", "4", "--gamma", "0.05", "--theta", "0.05", "--objective"])
        .arg(format!("buchi:{}", cells.display())));
    let r: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(r["ok"], true);
    assert!((r["sum"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn gen_grids_and_sweep_are_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let grids = d.path().join("grids");
    let out = ok(stars()
        .args(["gen-grids", "--count", "2", "--category", "far", "--sizes", "5..6", "--seed", "3", "--out"])
        .arg(&grids));
    assert_eq!(out.lines().count(), 2);
    let cfg = write(
        d.path(),
        "sweep.json",
        &json!({"instances": "grids", "gammas": [0.05, 0.5], "theta": 0.01, "steps": 500, "seeds": [0, 1]}),
    );
    let csv = |name: &str| {
        let p = d.path().join(name);
        ok(stars().args(["sweep", "--config"]).arg(&cfg).arg("--out").arg(&p));
        std::fs::read_to_string(p).unwrap()
    };
    let a = csv("a.csv");
    assert_eq!(a, csv("b.csv"));
    let mut lines = a.lines();
    assert_eq!(
        lines.next().unwrap(),
        "instance_id,category,size,gamma,theta,steps,seed,buchi_freq,avg_reward,max_avg_reward,reward_gap"
    );
    assert_eq!(lines.count(), 2 * 2 * 2);
}

struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn start(instances: &Path, metrics: &Path) -> Server {
        let mut child = stars()
            .args(["serve", "--port", "0", "--instances"])
            .arg(instances)
            .arg("--metrics")
            .arg(metrics)
            .env_remove("STARS_PORT")
            .env_remove("STARS_INSTANCE_DIR")
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();
        Server { child, addr }
    }

    fn connect(&self) -> Client {
        let s = TcpStream::connect(&self.addr).unwrap();
        Client {
            reader: BufReader::new(s.try_clone().unwrap()),
            writer: s,
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    fn send(&mut self, v: Value) -> Value {
        writeln!(self.writer, "{v}").unwrap();
        let mut line = String::new();
        self.reader.read_line(&mut line).unwrap();
        serde_json::from_str(&line).unwrap()
    }
}

fn instance_dir() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    ok(stars().args(["gen-grids", "--count", "1", "--category", "close", "--sizes", "6", "--seed", "5", "--out"]).arg(d.path()));
    d
}

#[test]
fn reconnect_finds_the_same_session() {
    let inst = instance_dir();
    let srv = Server::start(inst.path(), &inst.path().join("m.csv"));
    let mut c = srv.connect();
    let r = c.send(json!({"type":"create_session","instance_ref":"close-000","seed":3}));
    let id = r["id"].as_str().unwrap().to_string();
    let before = c.send(json!({"type":"step","n":250}));
    drop(c);
    let mut c = srv.connect();
    let after = c.send(json!({"type":"get_snapshot","session":id}));
    assert_eq!(before, after);
}

#[test]
fn concurrent_sessions_stay_apart() {
    let inst = instance_dir();
    let metrics = inst.path().join("m.csv");
    let srv = Server::start(inst.path(), &metrics);
    let handles: Vec<_> = (0..2)
        .map(|k| {
            let mut c = srv.connect();
            std::thread::spawn(move || {
                let r = c.send(json!({"type":"create_session","instance_ref":"close-000","seed":k,"gamma":0.2}));
                let id = r["id"].as_str().unwrap().to_string();
                let mut snap = Value::Null;
                for _ in 0..20 {
                    snap = c.send(json!({"type":"step","n":100}));
                }
                (id, snap)
            })
        })
        .collect();
    let res: Vec<(String, Value)> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_ne!(res[0].0, res[1].0);
    for (id, snap) in &res {
        assert_eq!(&snap["session"], id);
        assert_eq!(snap["step"], 2000);
    }
    assert_ne!(res[0].1["seed"], res[1].1["seed"]);
}

#[cfg(unix)]
#[test]
fn termination_signal_flushes_metrics() {
    let inst = instance_dir();
    let metrics = inst.path().join("m.csv");
    let mut srv = Server::start(inst.path(), &metrics);
    let mut ids = Vec::new();
    for seed in 0..3 {
        let mut c = srv.connect();
        let r = c.send(json!({"type":"create_session","instance_ref":"close-000","seed":seed}));
        ids.push(r["id"].as_str().unwrap().to_string());
        c.send(json!({"type":"step","n":1000}));
    }
    let pid = srv.child.id().to_string();
    assert!(Command::new("kill").args(["-TERM", &pid]).status().unwrap().success());
    let status = srv.child.wait().unwrap();
    assert!(status.success());
    let mut r = csv::Reader::from_path(&metrics).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for (row, id) in rows.iter().zip(&ids) {
        assert_eq!(&row[0], format!("{id}/close-000"));
        assert_eq!(&row[5], "1000");
    }
}

#[test]
fn websocket_speaks_the_same_protocol() {
    use tungstenite::Message;
    let inst = instance_dir();
    let srv = Server::start(inst.path(), &inst.path().join("m.csv"));
    let (mut ws, _) = tungstenite::connect(format!("ws://{}/", srv.addr)).unwrap();
    let mut send = |v: Value| -> Value {
        ws.send(Message::text(v.to_string())).unwrap();
        match ws.read().unwrap() {
            Message::Text(t) => serde_json::from_str(t.as_str()).unwrap(),
            other => panic!("{other:?}"),
        }
    };
    let r = send(json!({"type":"create_session","instance_ref":"close-000","seed":1}));
    assert_eq!(r["type"], "session_created");
    let s = send(json!({"type":"step","n":0}));
    assert_eq!(s["type"], "snapshot");
    assert_eq!(s["heatmap"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|x| x.as_u64().unwrap()).sum::<u64>(), 1);
}
