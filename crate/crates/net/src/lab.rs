//! Lab helpers: a TCP relay that adds fixed one-way delays, and a trivial
//! HTTP responder to probe.
//!
//! Pointing verifier peer, client, and probe addresses at delay links lets
//! a single host stand in for a continent: each link's delays play the role
//! of propagation.

use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use crate::conn::serve;

/// A running delay link; dropped links keep forwarding until [`Self::stop`].
#[derive(Debug)]
pub struct DelayLink {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
}

impl DelayLink {
    pub fn stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

/// Forwards `from` to `to`, releasing each chunk `delay` after it was read.
/// Order is preserved because the delay is constant.
fn pump(mut from: TcpStream, mut to: TcpStream, delay: Duration) {
    let (tx, rx) = mpsc::channel::<(Instant, Vec<u8>)>();
    let mut writer_side = to.try_clone().ok();
    let writer = thread::spawn(move || {
        for (due, chunk) in rx {
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
            if to.write_all(&chunk).is_err() {
                break;
            }
        }
        let _ = to.shutdown(Shutdown::Write);
    });
    let mut buf = [0u8; 16 * 1024];
    loop {
        match from.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                if tx.send((Instant::now() + delay, buf[..n].to_vec())).is_err() {
                    break;
                }
            }
        }
    }
    drop(tx);
    let _ = writer.join();
    if let Some(s) = writer_side.take() {
        let _ = s.shutdown(Shutdown::Write);
    }
}

/// Listens on `listen` and relays every connection to `target`, adding
/// `to_target` to bytes travelling toward the target and `to_client` to
/// bytes coming back.
pub fn spawn_delay_link(listen: &str, target: &str, to_target: Duration, to_client: Duration) -> std::io::Result<DelayLink> {
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let target = target.to_string();
    serve(listener, Arc::clone(&stop), move |client| {
        let Ok(upstream) = TcpStream::connect(&target) else {
            let _ = client.shutdown(Shutdown::Both);
            return;
        };
        let _ = upstream.set_nodelay(true);
        let (Ok(c2), Ok(u2)) = (client.try_clone(), upstream.try_clone()) else { return };
        let back = thread::spawn(move || pump(u2, c2, to_client));
        pump(client, upstream, to_target);
        let _ = back.join();
    })?;
    Ok(DelayLink { addr, stop })
}

/// Answers every request with an empty `200 OK`.
#[derive(Debug)]
pub struct HttpResponder {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
}

impl HttpResponder {
    pub fn stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

pub fn spawn_http_responder(listen: &str) -> std::io::Result<HttpResponder> {
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    serve(listener, Arc::clone(&stop), |mut s| {
        let mut req = Vec::new();
        let mut buf = [0u8; 1024];
        while !req.windows(4).any(|w| w == b"\r\n\r\n") {
            match s.read(&mut buf) {
                Ok(0) | Err(_) => return,
                Ok(n) => req.extend_from_slice(&buf[..n]),
            }
        }
        let _ = s.write_all(b"HTTP/1.1 200 OK\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
    })?;
    Ok(HttpResponder { addr, stop })
}
