//! Session server: line-delimited JSON over TCP, or the same messages as
//! WebSocket text frames when a connection opens with an HTTP upgrade.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use stars::eval::{csv_string, MetricsRecord, Prepared};
use stars::factorybot::{GridInstance, SolvedInstance, DEFAULT_SOFTENING};
use stars::session::{ClientMessage, Reply, Session};
use stars::shield::ShieldParams;
use tungstenite::Message;

use crate::files;

pub const MAX_SESSIONS: usize = 64;

pub struct ServerConfig {
    pub addr: String,
    pub instances: PathBuf,
    pub metrics: PathBuf,
}

#[derive(Default)]
struct Sessions {
    map: HashMap<String, Arc<Mutex<Session>>>,
    /// Least recently used first.
    order: VecDeque<String>,
}

impl Sessions {
    fn touch(&mut self, id: &str) {
        if let Some(i) = self.order.iter().position(|x| x == id) {
            let id = self.order.remove(i).expect("present");
            self.order.push_back(id);
        }
    }
}

/// Shared state of the server. Sessions are locked one at a time; the
/// session table lock is never held while waiting for a session.
pub struct Hub {
    instances: PathBuf,
    metrics: PathBuf,
    prepared: Mutex<HashMap<String, Arc<Prepared>>>,
    sessions: Mutex<Sessions>,
    /// Final rows of evicted sessions.
    finished: Mutex<Vec<MetricsRecord>>,
    next_id: AtomicU64,
}

fn to_line(r: &Reply) -> String {
    serde_json::to_string(r).expect("replies serialize")
}

impl Hub {
    pub fn new(instances: PathBuf, metrics: PathBuf) -> Self {
        Hub {
            instances,
            metrics,
            prepared: Mutex::default(),
            sessions: Mutex::default(),
            finished: Mutex::default(),
            next_id: AtomicU64::new(1),
        }
    }

    fn prepared(&self, name: &str) -> Result<Arc<Prepared>, Reply> {
        if name.is_empty() || name.contains(['/', '\\']) || name.contains("..") {
            return Err(Reply::error("unknown_instance", format!("bad instance name {name:?}")));
        }
        if let Some(p) = self.prepared.lock().expect("lock").get(name) {
            return Ok(p.clone());
        }
        let path = self.instances.join(format!("{name}.json"));
        let inst = files::read_instance(&path).map_err(|e| Reply::error("unknown_instance", format!("{e:#}")))?;
        let prep = Arc::new(build(name, inst)?);
        self.prepared.lock().expect("lock").insert(name.to_string(), prep.clone());
        Ok(prep)
    }

    fn fresh_seed(&self) -> u64 {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
        t ^ self.next_id.load(Ordering::Relaxed).wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }

    fn create(&self, msg: ClientMessage) -> Result<(String, u64), Reply> {
        let ClientMessage::CreateSession {
            instance_ref,
            config,
            gamma,
            theta,
            seed,
            trace,
        } = msg
        else {
            unreachable!("only create_session gets here")
        };
        let prep = match (instance_ref, config) {
            (Some(name), None) => self.prepared(&name)?,
            (None, Some(cfg)) => {
                let inst = GridInstance::from_json_str(&cfg.to_string())
                    .map_err(|e| Reply::error("bad_instance", e.to_string()))?;
                Arc::new(build("inline", inst)?)
            }
            _ => return Err(Reply::error("bad_request", "give exactly one of instance_ref and config")),
        };
        let seed = seed.unwrap_or_else(|| self.fresh_seed());
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let session = Session::new(id.clone(), prep, ShieldParams::new(gamma, theta), seed, trace)
            .map_err(|e| Reply::from_run_error(&e))?;
        let evicted = {
            let mut s = self.sessions.lock().expect("lock");
            let evicted = if s.map.len() >= MAX_SESSIONS {
                s.order.pop_front().and_then(|old| s.map.remove(&old))
            } else {
                None
            };
            s.map.insert(id.clone(), Arc::new(Mutex::new(session)));
            s.order.push_back(id.clone());
            evicted
        };
        if let Some(old) = evicted {
            let rec = old.lock().expect("lock").metrics_record();
            self.finished.lock().expect("lock").push(rec);
            if let Err(e) = self.flush_metrics() {
                eprintln!("metrics flush failed: {e:#}");
            }
        }
        Ok((id, seed))
    }

    fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        let mut s = self.sessions.lock().expect("lock");
        let found = s.map.get(id).cloned();
        if found.is_some() {
            s.touch(id);
        }
        found
    }

    pub fn num_sessions(&self) -> usize {
        self.sessions.lock().expect("lock").map.len()
    }

    /// Answers one protocol line. `current` is the connection's session,
    /// set by `create_session` or by a `session` field.
    pub fn handle_line(&self, line: &str, current: &mut Option<String>) -> String {
        let mut value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return to_line(&Reply::error("malformed", e.to_string())),
        };
        if let Some(obj) = value.as_object_mut() {
            match obj.remove("session") {
                Some(serde_json::Value::String(id)) => {
                    if self.session(&id).is_none() {
                        return to_line(&Reply::error("no_session", format!("no session {id}")));
                    }
                    *current = Some(id);
                }
                Some(_) => return to_line(&Reply::error("malformed", "session must be a string")),
                None => {}
            }
        }
        let msg: ClientMessage = match serde_json::from_value(value) {
            Ok(m) => m,
            Err(e) => return to_line(&Reply::error("malformed", e.to_string())),
        };
        if let ClientMessage::CreateSession { .. } = msg {
            return to_line(&match self.create(msg) {
                Ok((id, seed)) => {
                    *current = Some(id.clone());
                    Reply::SessionCreated { id, seed }
                }
                Err(r) => r,
            });
        }
        let Some(id) = current.as_deref() else {
            return to_line(&Reply::error("no_session", "create or name a session first"));
        };
        let Some(session) = self.session(id) else {
            return to_line(&Reply::error("no_session", format!("session {id} is gone")));
        };
        let reply = session.lock().expect("lock").handle(msg);
        to_line(&reply)
    }

    /// Rewrites the metrics file with evicted and live sessions.
    pub fn flush_metrics(&self) -> Result<()> {
        let mut rows = self.finished.lock().expect("lock").clone();
        let live: Vec<Arc<Mutex<Session>>> = {
            let s = self.sessions.lock().expect("lock");
            s.order.iter().filter_map(|id| s.map.get(id).cloned()).collect()
        };
        rows.extend(live.iter().map(|s| s.lock().expect("lock").metrics_record()));
        files::write_atomic(&self.metrics, csv_string(&rows).as_bytes())
    }
}

fn build(name: &str, inst: GridInstance) -> Result<Prepared, Reply> {
    let solved = SolvedInstance::new(name, inst, DEFAULT_SOFTENING).map_err(|e| Reply::error("bad_instance", e.to_string()))?;
    Prepared::new(solved).map_err(|e| Reply::error("bad_instance", e.to_string()))
}

fn serve_lines(hub: &Hub, stream: TcpStream) -> std::io::Result<()> {
    let mut out = stream.try_clone()?;
    let mut current = None;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = hub.handle_line(&line, &mut current);
        out.write_all(reply.as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}

fn serve_websocket(hub: &Hub, stream: TcpStream) -> Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("handshake: {e}"))?;
    let mut current = None;
    loop {
        match ws.read() {
            Ok(Message::Text(t)) => {
                let reply = hub.handle_line(t.as_str(), &mut current);
                ws.send(Message::text(reply))?;
            }
            Ok(Message::Close(_)) | Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            Ok(_) => {}
            Err(e) => return Err(e.into()),
        }
    }
}

fn connection(hub: Arc<Hub>, stream: TcpStream) {
    let mut head = [0u8; 4];
    let is_http = matches!(stream.peek(&mut head), Ok(4) if &head == b"GET ");
    let result = if is_http {
        serve_websocket(&hub, stream)
    } else {
        serve_lines(&hub, stream).map_err(Into::into)
    };
    if let Err(e) = result {
        eprintln!("connection ended: {e:#}");
    }
}

/// Binds, prints `listening on <addr>` and serves until a termination
/// signal, which writes the metrics file before exiting.
pub fn serve(cfg: &ServerConfig) -> Result<()> {
    let listener = TcpListener::bind(&cfg.addr).with_context(|| format!("binding {}", cfg.addr))?;
    if !cfg.instances.is_dir() {
        eprintln!("warning: instance directory {} does not exist", cfg.instances.display());
    }
    let hub = Arc::new(Hub::new(cfg.instances.clone(), cfg.metrics.clone()));
    let on_signal = hub.clone();
    ctrlc::set_handler(move || {
        let code = match on_signal.flush_metrics() {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("metrics flush failed: {e:#}");
                1
            }
        };
        std::process::exit(code);
    })
    .context("installing signal handler")?;
    println!("listening on {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    for stream in listener.incoming() {
        match stream {
            Ok(s) => {
                let hub = hub.clone();
                std::thread::spawn(move || connection(hub, s));
            }
            Err(e) => eprintln!("accept failed: {e}"),
        }
    }
    Ok(())
}
