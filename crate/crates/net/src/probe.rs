//! Live RTT probes to a server: TCP handshake time, then a timed
//! `HEAD /` on the same connection.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{IpAddr, SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use geoverity::slv::{ProbeError, ProbeLayer, ProbeSample, Prober};

use crate::conn::wall_ms;

#[derive(Debug, Clone)]
pub struct HttpProber {
    pub layers: Vec<ProbeLayer>,
    pub port: u16,
    pub timeout: Duration,
    /// Lab routing: probes for a server address go to the mapped address
    /// instead (a delay link standing in for the path).
    pub via: HashMap<SocketAddr, String>,
}

impl HttpProber {
    pub fn new(port: u16) -> Self {
        Self { layers: ProbeLayer::ALL.to_vec(), port, timeout: Duration::from_secs(3), via: HashMap::new() }
    }

    fn target(&self, server: IpAddr) -> std::io::Result<SocketAddr> {
        let direct = SocketAddr::new(server, self.port);
        match self.via.get(&direct) {
            Some(a) => a
                .to_socket_addrs()?
                .next()
                .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, a.clone())),
            None => Ok(direct),
        }
    }

    /// One connection: returns (handshake ms, HEAD request/response ms).
    pub fn probe_once(&self, server: IpAddr) -> std::io::Result<(f64, f64)> {
        let addr = self.target(server)?;
        let start = Instant::now();
        let mut s = TcpStream::connect_timeout(&addr, self.timeout)?;
        let handshake = start.elapsed().as_secs_f64() * 1e3;
        s.set_nodelay(true)?;
        s.set_read_timeout(Some(self.timeout))?;
        let req = format!("HEAD / HTTP/1.1\r\nHost: {server}\r\nConnection: close\r\n\r\n");
        let start = Instant::now();
        s.write_all(req.as_bytes())?;
        let mut first = [0u8; 1];
        if s.read(&mut first)? == 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "no HTTP response"));
        }
        Ok((handshake, start.elapsed().as_secs_f64() * 1e3))
    }
}

impl Prober for HttpProber {
    fn layers(&self) -> Vec<ProbeLayer> {
        self.layers.clone()
    }

    fn probe(&mut self, verifier: u16, server: IpAddr, layer: ProbeLayer, count: usize) -> Result<Vec<ProbeSample>, ProbeError> {
        (0..count)
            .map(|_| {
                let (hs, http) = self
                    .probe_once(server)
                    .map_err(|e| ProbeError::ProbeFailed { verifier, reason: e.to_string() })?;
                let rtt_ms = match layer {
                    ProbeLayer::TcpHandshake => hs,
                    ProbeLayer::HttpRequestResponse => http,
                };
                Ok(ProbeSample { layer, rtt_ms, verifier, timestamp_ms: wall_ms() })
            })
            .collect()
    }
}
