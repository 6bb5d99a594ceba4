use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::protocol::MAX_FRAME_LEN;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("connection closed")]
    Closed,
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Message-oriented endpoint: every `send` arrives as one `receive`.
pub trait Transport {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError>;
    fn receive(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError>;
    fn close(&mut self);
}

/// One end of an in-process channel pair.
#[derive(Debug)]
pub struct MemoryTransport {
    tx: Option<Sender<Vec<u8>>>,
    rx: Receiver<Vec<u8>>,
}

impl MemoryTransport {
    pub fn pair() -> (MemoryTransport, MemoryTransport) {
        let (a_tx, b_rx) = mpsc::channel();
        let (b_tx, a_rx) = mpsc::channel();
        (
            MemoryTransport { tx: Some(a_tx), rx: a_rx },
            MemoryTransport { tx: Some(b_tx), rx: b_rx },
        )
    }
}

impl Transport for MemoryTransport {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        let tx = self.tx.as_ref().ok_or(TransportError::Closed)?;
        tx.send(frame.to_vec()).map_err(|_| TransportError::Closed)
    }

    fn receive(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        self.rx.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout,
            RecvTimeoutError::Disconnected => TransportError::Closed,
        })
    }

    fn close(&mut self) {
        self.tx = None;
    }
}

/// TCP stream carrying frames as `len:u32 BE || bytes`.
#[derive(Debug)]
pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(TcpTransport { stream })
    }

    /// Connects, retrying refused attempts until `timeout` elapses.
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self, TransportError> {
        let deadline = Instant::now() + timeout;
        let addrs: Vec<_> = addr.to_socket_addrs()?.collect();
        loop {
            let mut last = None;
            for a in &addrs {
                let left = deadline.saturating_duration_since(Instant::now());
                if left.is_zero() {
                    return Err(TransportError::Timeout);
                }
                match TcpStream::connect_timeout(a, left) {
                    Ok(s) => return Ok(TcpTransport::new(s)?),
                    Err(e) => last = Some(e),
                }
            }
            if Instant::now() >= deadline {
                return Err(match last {
                    Some(e) if e.kind() != io::ErrorKind::ConnectionRefused && e.kind() != io::ErrorKind::TimedOut => {
                        TransportError::Io(e)
                    }
                    _ => TransportError::Timeout,
                });
            }
            std::thread::sleep(Duration::from_millis(50));
        }
    }

    pub fn accept(listener: &TcpListener) -> io::Result<Self> {
        let (s, _) = listener.accept()?;
        TcpTransport::new(s)
    }

    fn read_exact_by(&mut self, buf: &mut [u8], deadline: Instant) -> Result<(), TransportError> {
        let mut filled = 0;
        while filled < buf.len() {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::Timeout);
            }
            self.stream.set_read_timeout(Some(left))?;
            match self.stream.read(&mut buf[filled..]) {
                Ok(0) => return Err(TransportError::Closed),
                Ok(n) => filled += n,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Err(TransportError::Timeout)
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) if matches!(e.kind(), io::ErrorKind::ConnectionReset | io::ErrorKind::BrokenPipe) => {
                    return Err(TransportError::Closed)
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        if frame.len() > MAX_FRAME_LEN + 4 {
            return Err(TransportError::FrameTooLarge(frame.len()));
        }
        let mut buf = Vec::with_capacity(4 + frame.len());
        buf.extend_from_slice(&(frame.len() as u32).to_be_bytes());
        buf.extend_from_slice(frame);
        self.stream.write_all(&buf).map_err(|e| match e.kind() {
            io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset => TransportError::Closed,
            _ => e.into(),
        })
    }

    fn receive(&mut self, timeout: Duration) -> Result<Vec<u8>, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut len = [0u8; 4];
        self.read_exact_by(&mut len, deadline)?;
        let len = u32::from_be_bytes(len) as usize;
        if len > MAX_FRAME_LEN + 4 {
            return Err(TransportError::FrameTooLarge(len));
        }
        let mut frame = vec![0u8; len];
        self.read_exact_by(&mut frame, deadline)?;
        Ok(frame)
    }

    fn close(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_preserves_boundaries() {
        let (mut a, mut b) = MemoryTransport::pair();
        a.send(b"one").unwrap();
        a.send(b"").unwrap();
        a.send(b"three").unwrap();
        let t = Duration::from_millis(100);
        assert_eq!(b.receive(t).unwrap(), b"one");
        assert_eq!(b.receive(t).unwrap(), b"");
        assert_eq!(b.receive(t).unwrap(), b"three");
        assert!(matches!(b.receive(Duration::from_millis(10)), Err(TransportError::Timeout)));
        a.close();
        drop(a);
        assert!(matches!(b.receive(t), Err(TransportError::Closed)));
    }

    #[test]
    fn tcp_round_trip_and_close() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let mut t = TcpTransport::accept(&listener).unwrap();
            let f = t.receive(Duration::from_secs(5)).unwrap();
            t.send(&f).unwrap();
            t.close();
        });
        let mut c = TcpTransport::connect(addr, Duration::from_secs(5)).unwrap();
        let big = vec![0x5a; 70_000];
        c.send(&big).unwrap();
        assert_eq!(c.receive(Duration::from_secs(5)).unwrap(), big);
        assert!(matches!(c.receive(Duration::from_secs(5)), Err(TransportError::Closed)));
        server.join().unwrap();
    }

    #[test]
    fn tcp_connect_unreachable_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        assert!(matches!(
            TcpTransport::connect(addr, Duration::from_millis(200)),
            Err(TransportError::Timeout)
        ));
    }
}
