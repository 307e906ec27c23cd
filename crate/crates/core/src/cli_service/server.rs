use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Ipv4Addr, Ipv6Addr, Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};

use super::query::respond;
use crate::ingestion::ReplaySink;
use crate::semantic_layer::ObjectMapSnapshot;

/// Latest published snapshot. Readers get a shared handle that never changes
/// under them; publishing swaps the handle.
#[derive(Debug, Default)]
pub struct SnapshotStore {
    current: RwLock<Arc<ObjectMapSnapshot>>,
    published: AtomicU64,
}

impl SnapshotStore {
    pub fn new(snapshot: ObjectMapSnapshot) -> Self {
        Self { current: RwLock::new(Arc::new(snapshot)), published: AtomicU64::new(0) }
    }

    pub fn current(&self) -> Arc<ObjectMapSnapshot> {
        self.current.read().expect("store lock").clone()
    }

    pub fn publish(&self, snapshot: ObjectMapSnapshot) {
        *self.current.write().expect("store lock") = Arc::new(snapshot);
        self.published.fetch_add(1, Ordering::Release);
    }

    /// Number of snapshots published since creation.
    pub fn published(&self) -> u64 {
        self.published.load(Ordering::Acquire)
    }
}

impl ReplaySink for &SnapshotStore {
    fn on_snapshot(&mut self, snapshot: &ObjectMapSnapshot) {
        self.publish(snapshot.clone());
    }
}

type Connections = Arc<Mutex<HashMap<u64, TcpStream>>>;

/// Threaded TCP server for the query line protocol.
pub struct QueryServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    connections: Connections,
    accept: Option<JoinHandle<()>>,
}

impl QueryServer {
    pub fn start(addr: impl ToSocketAddrs, store: Arc<SnapshotStore>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let connections = Connections::default();
        let accept = {
            let stop = stop.clone();
            let connections = connections.clone();
            thread::spawn(move || accept_loop(listener, store, stop, connections))
        };
        Ok(Self { addr, stop, connections, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server is shut down from elsewhere.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Stops accepting, closes open connections, and joins the accept thread.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let mut wake = self.addr;
        if wake.ip().is_unspecified() {
            wake.set_ip(if wake.is_ipv4() { Ipv4Addr::LOCALHOST.into() } else { Ipv6Addr::LOCALHOST.into() });
        }
        let _ = TcpStream::connect(wake);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for (_, c) in self.connections.lock().expect("connection list").drain() {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for QueryServer {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_now();
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    store: Arc<SnapshotStore>,
    stop: Arc<AtomicBool>,
    connections: Connections,
) {
    for (key, conn) in (0u64..).zip(listener.incoming()) {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        if let Ok(clone) = stream.try_clone() {
            connections.lock().expect("connection list").insert(key, clone);
        }
        let store = store.clone();
        let connections = connections.clone();
        thread::spawn(move || {
            let _ = serve_connection(stream, &store);
            connections.lock().expect("connection list").remove(&key);
        });
    }
}

fn serve_connection(stream: TcpStream, store: &SnapshotStore) -> io::Result<()> {
    let _ = stream.set_nodelay(true);
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        let mut reply = respond(line.trim(), &store.current());
        reply.push('\n');
        writer.write_all(reply.as_bytes())?;
    }
    Ok(())
}
