//! WebSocket bridge between browser operators and the session loop.
//!
//! Every connection gets its own thread and a bounded outgoing queue. When a
//! queue is full the oldest droppable message is discarded; map messages are
//! never dropped because clients rebuild the voxel set from them, and a
//! client whose queue fills with map messages alone is disconnected.

use std::collections::VecDeque;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use teleop_core::session::{ClientMessage, OperatorInput, OperatorMailbox, ServerMessage, TelemetrySink};
use tungstenite::protocol::frame::coding::CloseCode;
use tungstenite::protocol::CloseFrame;
use tungstenite::{Message, WebSocket};

/// Outgoing messages buffered per client before dropping.
pub const QUEUE_CAPACITY: usize = 256;

const POLL_INTERVAL: Duration = Duration::from_millis(5);

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

struct Outgoing {
    text: Arc<str>,
    droppable: bool,
}

#[derive(Default)]
struct QueueState {
    items: VecDeque<Outgoing>,
    dropped: u64,
    overflowed: bool,
}

#[derive(Default)]
struct ClientQueue {
    state: Mutex<QueueState>,
    ready: Condvar,
}

impl ClientQueue {
    fn push(&self, msg: Outgoing) {
        let mut s = lock(&self.state);
        if s.items.len() >= QUEUE_CAPACITY {
            match s.items.iter().position(|m| m.droppable) {
                Some(i) => {
                    s.items.remove(i);
                    s.dropped += 1;
                }
                None if msg.droppable => {
                    s.dropped += 1;
                    return;
                }
                None => {
                    s.overflowed = true;
                    return;
                }
            }
        }
        s.items.push_back(msg);
        self.ready.notify_one();
    }

    /// Takes everything queued, waiting up to `timeout` for the first item.
    fn drain(&self, timeout: Duration) -> (Vec<Outgoing>, bool) {
        let mut s = lock(&self.state);
        if s.items.is_empty() && !s.overflowed {
            s = self
                .ready
                .wait_timeout(s, timeout)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        (s.items.drain(..).collect(), s.overflowed)
    }
}

struct Client {
    id: u64,
    queue: Arc<ClientQueue>,
}

#[derive(Default)]
struct HubState {
    clients: Vec<Client>,
    config: Option<Arc<str>>,
    full_map: Option<Arc<str>>,
    checksum: Option<Arc<str>>,
}

/// Fan-out point for telemetry and fan-in point for operator actions.
pub struct Hub {
    state: Mutex<HubState>,
    mailbox: OperatorMailbox,
    next_id: AtomicU64,
    /// Connection that most recently sent an action.
    last_writer: AtomicU64,
}

impl Hub {
    pub fn new(mailbox: OperatorMailbox) -> Arc<Self> {
        Arc::new(Self {
            state: Mutex::new(HubState::default()),
            mailbox,
            next_id: AtomicU64::new(1),
            last_writer: AtomicU64::new(0),
        })
    }

    pub fn mailbox(&self) -> &OperatorMailbox {
        &self.mailbox
    }

    pub fn client_count(&self) -> usize {
        lock(&self.state).clients.len()
    }

    /// Sent to every client right after it connects.
    pub fn set_config(&self, msg: &ServerMessage) {
        lock(&self.state).config = Some(msg.to_json().into());
    }

    fn register(&self) -> (u64, Arc<ClientQueue>) {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let queue = Arc::new(ClientQueue::default());
        let mut s = lock(&self.state);
        for text in [&s.config, &s.full_map, &s.checksum].into_iter().flatten() {
            queue.push(Outgoing {
                text: text.clone(),
                droppable: false,
            });
        }
        s.clients.push(Client {
            id,
            queue: queue.clone(),
        });
        (id, queue)
    }

    fn unregister(&self, id: u64) {
        lock(&self.state).clients.retain(|c| c.id != id);
        if self.last_writer.load(Ordering::Relaxed) == id {
            self.mailbox.post(OperatorInput::IDLE);
        }
    }

    fn accept_action(&self, id: u64, msg: &ClientMessage) {
        self.last_writer.store(id, Ordering::Relaxed);
        self.mailbox.post(msg.input());
    }
}

impl TelemetrySink for Hub {
    fn is_active(&self) -> bool {
        !lock(&self.state).clients.is_empty()
    }

    fn publish(&self, msg: ServerMessage) {
        let droppable = !matches!(msg, ServerMessage::MapDiff { .. } | ServerMessage::MapChecksum { .. });
        let text: Arc<str> = msg.to_json().into();
        for c in &lock(&self.state).clients {
            c.queue.push(Outgoing {
                text: text.clone(),
                droppable,
            });
        }
    }

    fn set_map_state(&self, full_map: ServerMessage, checksum: ServerMessage) {
        let mut s = lock(&self.state);
        s.full_map = Some(full_map.to_json().into());
        s.checksum = Some(checksum.to_json().into());
    }
}

/// Running listener; dropping it does not stop connections already open.
pub struct Server {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `endpoint` and serves the wire protocol on background threads.
pub fn serve(endpoint: &str, hub: Arc<Hub>) -> io::Result<Server> {
    let listener = TcpListener::bind(endpoint)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let handle = std::thread::Builder::new()
        .name("ws-accept".into())
        .spawn(move || accept_loop(listener, hub, flag))?;
    log::info!("listening on ws://{addr}");
    Ok(Server {
        addr,
        shutdown,
        handle: Some(handle),
    })
}

fn accept_loop(listener: TcpListener, hub: Arc<Hub>, shutdown: Arc<AtomicBool>) {
    while !shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let hub = hub.clone();
                let flag = shutdown.clone();
                let spawned = std::thread::Builder::new()
                    .name(format!("ws-{peer}"))
                    .spawn(move || {
                        if let Err(e) = connection(stream, &hub, &flag) {
                            log::info!("{peer}: {e}");
                        }
                    });
                if let Err(e) = spawned {
                    log::error!("cannot spawn connection thread: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(POLL_INTERVAL * 4),
            Err(e) => {
                log::error!("accept failed: {e}");
                std::thread::sleep(POLL_INTERVAL * 4);
            }
        }
    }
}

fn connection(stream: TcpStream, hub: &Hub, shutdown: &AtomicBool) -> anyhow::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("handshake failed: {e}"))?;
    ws.get_ref().set_read_timeout(Some(POLL_INTERVAL))?;
    let (id, queue) = hub.register();
    log::info!("client {id} connected");
    let result = pump(&mut ws, hub, id, &queue, shutdown);
    hub.unregister(id);
    log::info!("client {id} disconnected");
    result
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn close_with(ws: &mut WebSocket<TcpStream>, code: CloseCode, reason: &str) {
    let _ = ws.close(Some(CloseFrame {
        code,
        reason: reason.to_owned().into(),
    }));
    let _ = ws.flush();
}

fn pump(
    ws: &mut WebSocket<TcpStream>,
    hub: &Hub,
    id: u64,
    queue: &ClientQueue,
    shutdown: &AtomicBool,
) -> anyhow::Result<()> {
    loop {
        if shutdown.load(Ordering::Relaxed) {
            close_with(ws, CloseCode::Away, "server shutting down");
            return Ok(());
        }
        match ws.read() {
            Ok(Message::Text(text)) => match ClientMessage::parse(text.as_str()) {
                Ok(msg) => hub.accept_action(id, &msg),
                Err(e) => {
                    close_with(ws, CloseCode::Policy, &e.to_string());
                    anyhow::bail!("protocol violation: {e}");
                }
            },
            Ok(Message::Binary(_)) => {
                close_with(ws, CloseCode::Unsupported, "text frames only");
                anyhow::bail!("protocol violation: binary frame");
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        }

        let (batch, overflowed) = queue.drain(Duration::ZERO);
        if overflowed {
            close_with(ws, CloseCode::Again, "client too slow");
            anyhow::bail!("outgoing queue overflowed with map updates");
        }
        for msg in batch {
            ws.write(Message::text(msg.text.as_ref()))?;
        }
        match ws.flush() {
            Ok(()) => {}
            Err(e) if is_timeout(&e) => {}
            Err(e) => return Err(e.into()),
        }
    }
}
