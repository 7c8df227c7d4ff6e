//! WebSocket front end. A dedicated thread owns the [`LoopState`] and
//! ticks at the loop rate; connections push raw frames into one ordered
//! queue and receive immutable snapshots through bounded per-client
//! outboxes that drop their oldest entry when full.

use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::Notify;
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::{ClientMessage, ServerMessage};
use crate::service::{LoopState, MessageLog};
use retarget_core::simulate::Trace;

/// Frames a client may lag behind before the oldest is dropped.
pub const OUTBOX_CAPACITY: usize = 64;

/// Bounded single-consumer queue of encoded frames. Pushing never waits.
pub struct Outbox {
    queue: Mutex<VecDeque<Arc<str>>>,
    notify: Notify,
    capacity: usize,
    dropped: Mutex<u64>,
    closed: AtomicBool,
}

impl Outbox {
    pub fn new(capacity: usize) -> Self {
        Self {
            queue: Mutex::new(VecDeque::with_capacity(capacity)),
            notify: Notify::new(),
            capacity: capacity.max(1),
            dropped: Mutex::new(0),
            closed: AtomicBool::new(false),
        }
    }

    pub fn push(&self, frame: Arc<str>) {
        let mut q = self.queue.lock().expect("outbox lock");
        if q.len() == self.capacity {
            q.pop_front();
            *self.dropped.lock().expect("outbox lock") += 1;
        }
        q.push_back(frame);
        drop(q);
        self.notify.notify_one();
    }

    pub fn drain(&self) -> Vec<Arc<str>> {
        self.queue.lock().expect("outbox lock").drain(..).collect()
    }

    pub fn dropped(&self) -> u64 {
        *self.dropped.lock().expect("outbox lock")
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.notify.notify_one();
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Waits until something was pushed or the outbox was closed.
    pub async fn wait(&self) {
        self.notify.notified().await
    }
}

enum Inbound {
    Connected { id: u64, outbox: Arc<Outbox> },
    Text { id: u64, text: String },
    Disconnected { id: u64 },
}

struct Client {
    outbox: Arc<Outbox>,
    /// Ticks between state messages; `None` while unsubscribed.
    every: Option<u64>,
    since: u64,
}

/// What the loop thread hands back when it stops.
pub struct Recording {
    pub log: MessageLog,
    pub trace: Option<Trace>,
}

/// Runs the loop thread until `stop` is set (or `max_ticks` ticks ran).
fn run_loop(
    mut state: LoopState,
    rx: mpsc::Receiver<Inbound>,
    stop: Arc<AtomicBool>,
    max_ticks: Option<u64>,
) -> anyhow::Result<Recording> {
    let rate = state.rate();
    let period = Duration::from_secs_f64(1.0 / rate);
    let mut clients: BTreeMap<u64, Client> = BTreeMap::new();
    let mut deadline = Instant::now();
    let mut overruns = 0u64;
    let broadcast = |clients: &BTreeMap<u64, Client>, frame: Arc<str>| {
        for c in clients.values() {
            c.outbox.push(frame.clone());
        }
    };
    while !stop.load(Ordering::SeqCst) && max_ticks.is_none_or(|m| state.ticks() < m) {
        while let Ok(m) = rx.try_recv() {
            match m {
                Inbound::Connected { id, outbox } => {
                    clients.insert(
                        id,
                        Client {
                            outbox,
                            every: None,
                            since: 0,
                        },
                    );
                }
                Inbound::Disconnected { id } => {
                    if let Some(c) = clients.remove(&id) {
                        c.outbox.close();
                    }
                }
                Inbound::Text { id, text } => {
                    let t = state.session().time();
                    let reply = match ClientMessage::decode(&text) {
                        Err(e) => Some(ServerMessage::from(e)),
                        Ok(ClientMessage::Subscribe { rate: r }) => {
                            if let Some(c) = clients.get_mut(&id) {
                                if r > 0.0 && r.is_finite() {
                                    c.every = Some(((rate / r).round() as u64).max(1));
                                    c.since = state.ticks();
                                } else if r == 0.0 {
                                    c.every = None;
                                }
                            }
                            (!(r >= 0.0 && r.is_finite())).then(|| {
                                ServerMessage::from(crate::protocol::WireError::new(
                                    crate::protocol::ErrorCode::OutOfRange,
                                    format!("subscribe rate {r}"),
                                ))
                            })
                        }
                        Ok(msg) => match state.handle(&msg) {
                            Ok(Some(event)) => {
                                broadcast(&clients, ServerMessage::Event { t, event }.encode().into());
                                None
                            }
                            Ok(None) => None,
                            Err(e) => Some(ServerMessage::from(e)),
                        },
                    };
                    if let (Some(reply), Some(c)) = (reply, clients.get(&id)) {
                        c.outbox.push(reply.encode().into());
                    }
                }
            }
        }

        let events = state.tick()?;
        let t = state.session().time();
        for event in events {
            broadcast(&clients, ServerMessage::Event { t, event }.encode().into());
        }
        let k = state.ticks();
        let due: Vec<&Client> = clients
            .values()
            .filter(|c| c.every.is_some_and(|e| (k - c.since) % e == 0))
            .collect();
        if !due.is_empty() {
            let frame: Arc<str> = ServerMessage::State(state.snapshot()?).encode().into();
            for c in due {
                c.outbox.push(frame.clone());
            }
        }

        deadline += period;
        let now = Instant::now();
        if deadline > now {
            thread::sleep(deadline - now);
        } else if now - deadline > period {
            // Behind by more than a tick: resynchronize instead of bursting.
            overruns += 1;
            deadline = now;
        }
    }
    if overruns > 0 {
        log::warn!("loop fell behind its {rate} Hz schedule {overruns} times");
    }
    for c in clients.values() {
        c.outbox.close();
    }
    Ok(Recording {
        log: state.message_log(),
        trace: state.trace(),
    })
}

async fn connection(stream: tokio::net::TcpStream, id: u64, tx: mpsc::Sender<Inbound>) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            log::debug!("client {id}: handshake failed: {e}");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let outbox = Arc::new(Outbox::new(OUTBOX_CAPACITY));
    if tx
        .send(Inbound::Connected {
            id,
            outbox: outbox.clone(),
        })
        .is_err()
    {
        return;
    }
    let writer_box = outbox.clone();
    let writer = tokio::spawn(async move {
        loop {
            for frame in writer_box.drain() {
                if sink.send(Message::text(frame.to_string())).await.is_err() {
                    return;
                }
            }
            if writer_box.is_closed() {
                let _ = sink.close().await;
                return;
            }
            writer_box.wait().await;
        }
    });
    while let Some(msg) = source.next().await {
        match msg {
            Ok(Message::Text(text)) => {
                if tx
                    .send(Inbound::Text {
                        id,
                        text: text.to_string(),
                    })
                    .is_err()
                {
                    break;
                }
            }
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => {}
        }
    }
    let _ = tx.send(Inbound::Disconnected { id });
    outbox.close();
    let _ = writer.await;
    log::info!("client {id} disconnected ({} frames dropped)", outbox.dropped());
}

/// Handle of a running service.
pub struct Server {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    loop_thread: thread::JoinHandle<anyhow::Result<Recording>>,
    acceptor: tokio::task::JoinHandle<()>,
}

impl Server {
    /// Starts the loop thread and accepts connections on `listener`.
    /// Must be called inside a tokio runtime.
    pub fn start(listener: TcpListener, state: LoopState, max_ticks: Option<u64>) -> anyhow::Result<Self> {
        let addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let loop_stop = stop.clone();
        let loop_thread = thread::Builder::new()
            .name("retarget-loop".into())
            .spawn(move || run_loop(state, rx, loop_stop, max_ticks))?;
        let acceptor = tokio::spawn(async move {
            let mut next_id = 0u64;
            loop {
                match listener.accept().await {
                    Ok((stream, peer)) => {
                        log::info!("client {next_id} connected from {peer}");
                        let _ = stream.set_nodelay(true);
                        tokio::spawn(connection(stream, next_id, tx.clone()));
                        next_id += 1;
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        });
        Ok(Self {
            addr,
            stop,
            loop_thread,
            acceptor,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.loop_thread.is_finished()
    }

    /// Stops the loop and returns what it recorded.
    pub async fn shutdown(self) -> anyhow::Result<Recording> {
        self.stop.store(true, Ordering::SeqCst);
        self.acceptor.abort();
        let handle = self.loop_thread;
        tokio::task::spawn_blocking(move || handle.join())
            .await?
            .map_err(|_| anyhow::anyhow!("loop thread panicked"))?
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outbox_drops_the_oldest_frame() {
        let o = Outbox::new(3);
        for i in 0..5 {
            o.push(i.to_string().into());
        }
        let got: Vec<String> = o.drain().iter().map(|s| s.to_string()).collect();
        assert_eq!(got, ["2", "3", "4"]);
        assert_eq!(o.dropped(), 2);
        assert!(o.drain().is_empty());
    }
}
