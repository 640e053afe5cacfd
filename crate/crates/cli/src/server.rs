//! Blocking TCP front end for the engine: Content-Length framing, keep-alive
//! connections, an idle-session sweeper, and signal-driven shutdown.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use lurepot_core::engine::Engine;

/// Refuse to buffer request bodies larger than this.
const MAX_BODY_BYTES: usize = 1 << 20;

static STOP: AtomicBool = AtomicBool::new(false);

pub fn stop_flag() -> &'static AtomicBool {
    &STOP
}

/// SIGINT/SIGTERM flip the stop flag; the accept loop notices and drains.
pub fn install_signal_handlers() {
    extern "C" fn on_signal(_sig: libc::c_int) {
        STOP.store(true, Ordering::SeqCst);
    }
    let handler = on_signal as extern "C" fn(libc::c_int) as libc::sighandler_t;
    unsafe {
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub struct HttpServer {
    listener: TcpListener,
    engine: Arc<Mutex<Engine>>,
    sweep_interval: Duration,
}

impl HttpServer {
    pub fn bind(address: &str, engine: Engine, sweep_interval: Duration) -> io::Result<HttpServer> {
        let listener = TcpListener::bind(address)?;
        listener.set_nonblocking(true)?;
        Ok(HttpServer {
            listener,
            engine: Arc::new(Mutex::new(engine)),
            sweep_interval,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accept until `stop` flips, then drain workers, force-close live
    /// sessions, and hand the engine back for snapshotting.
    pub fn run(self, stop: &'static AtomicBool) -> io::Result<Engine> {
        let sweeper_engine = Arc::clone(&self.engine);
        let sweeper_done = Arc::new(AtomicBool::new(false));
        let sweeper_stop = Arc::clone(&sweeper_done);
        let interval = self.sweep_interval;
        let sweeper = thread::spawn(move || {
            while !sweeper_stop.load(Ordering::SeqCst) {
                thread::sleep(interval);
                let mut engine = match sweeper_engine.lock() {
                    Ok(engine) => engine,
                    Err(_) => break,
                };
                let _ = engine.close_idle_sessions(unix_now());
            }
        });

        let mut workers: Vec<thread::JoinHandle<()>> = Vec::new();
        while !stop.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    let engine = Arc::clone(&self.engine);
                    workers.push(thread::spawn(move || {
                        handle_connection(stream, peer, engine, stop);
                    }));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(20));
                }
                Err(_) => thread::sleep(Duration::from_millis(20)),
            }
            workers.retain(|w| !w.is_finished());
        }
        drop(self.listener);
        for worker in workers {
            let _ = worker.join();
        }
        sweeper_done.store(true, Ordering::SeqCst);
        let _ = sweeper.join();

        let engine = Arc::try_unwrap(self.engine)
            .map_err(|_| io::Error::other("worker still holds the engine"))?
            .into_inner()
            .map_err(|_| io::Error::other("engine lock poisoned"))?;
        let mut engine = engine;
        engine
            .shutdown(unix_now())
            .map_err(|e| io::Error::other(e.to_string()))?;
        Ok(engine)
    }
}

fn handle_connection(
    stream: TcpStream,
    peer: SocketAddr,
    engine: Arc<Mutex<Engine>>,
    stop: &AtomicBool,
) {
    let ip = peer.ip().to_string();
    let port = peer.port();
    if stream
        .set_read_timeout(Some(Duration::from_millis(200)))
        .is_err()
    {
        return;
    }
    let mut stream = stream;
    while let Ok(Some(raw)) = read_request(&mut stream, stop) {
        let response = match engine.lock() {
            Ok(mut engine) => engine.handle_request(&raw, &ip, port, unix_now()).response,
            Err(_) => break,
        };
        if stream.write_all(&response).is_err() {
            break;
        }
    }
    if let Ok(mut engine) = engine.lock() {
        let _ = engine.peer_closed(&ip, port, unix_now());
    }
}

/// Read one framed request: headers up to the blank line, then exactly
/// Content-Length body bytes. `Ok(None)` means the peer hung up cleanly or
/// shutdown was requested while the line was idle.
fn read_request<R: Read>(reader: &mut R, stop: &AtomicBool) -> io::Result<Option<Vec<u8>>> {
    let mut raw = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match reader.read(&mut byte) {
            Ok(0) => {
                // EOF: a partial request still goes to the engine so the
                // exchange is logged; an idle close is a clean hangup
                return Ok((!raw.is_empty()).then_some(raw));
            }
            Ok(_) => {
                raw.push(byte[0]);
                if raw.ends_with(b"\r\n\r\n") {
                    break;
                }
                if raw.len() > MAX_BODY_BYTES {
                    return Err(io::Error::other("header block too large"));
                }
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if stop.load(Ordering::SeqCst) && raw.is_empty() {
                    return Ok(None);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let body_len = content_length(&raw).min(MAX_BODY_BYTES);
    let mut remaining = body_len;
    let mut chunk = [0u8; 4096];
    while remaining > 0 {
        let want = remaining.min(chunk.len());
        match reader.read(&mut chunk[..want]) {
            Ok(0) => break,
            Ok(n) => {
                raw.extend_from_slice(&chunk[..n]);
                remaining -= n;
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(Some(raw))
}

/// Content-Length from a raw header block; absent or malformed means 0.
fn content_length(head: &[u8]) -> usize {
    let text = String::from_utf8_lossy(head);
    for line in text.lines().skip(1) {
        let Some((name, value)) = line.split_once(':') else {
            continue;
        };
        if name.trim().eq_ignore_ascii_case("content-length") {
            return value.trim().parse().unwrap_or(0);
        }
    }
    0
}
