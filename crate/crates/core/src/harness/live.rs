//! Loopback live mode: the TI and DTI devices run as threads exchanging
//! real datagrams with the orchestrating TT socket.
//!
//! Only the protocol messages travel over the wire; recordings stay
//! deterministic through the synthetic environment, so a live session with
//! a given seed stores exactly what the emulated channel stores.

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::wire::{self, ProtocolMessage, PAYLOAD_LEN};
use super::HarnessError;

const DEVICE_POLL: Duration = Duration::from_millis(20);
const RESPONSE_TIMEOUT: Duration = Duration::from_secs(2);

/// Default broadcast destination port for the DTI listener.
pub const DEFAULT_PORT: u16 = 8888;

/// Live environment handle: TT's socket plus the two device threads.
pub struct LiveChannel {
    tt_sock: UdpSocket,
    ti_addr: SocketAddr,
    dti_addr: SocketAddr,
    dti_events: Receiver<ProtocolMessage>,
    shutdown: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl LiveChannel {
    /// Binds the DTI listener on the given loopback port and starts the
    /// device threads.
    pub fn bind(port: u16) -> Result<LiveChannel, HarnessError> {
        let dti_sock =
            UdpSocket::bind(("127.0.0.1", port)).map_err(|source| HarnessError::Bind {
                port,
                source,
            })?;
        let ti_sock = UdpSocket::bind(("127.0.0.1", 0)).map_err(io_channel)?;
        let tt_sock = UdpSocket::bind(("127.0.0.1", 0)).map_err(io_channel)?;
        tt_sock
            .set_read_timeout(Some(RESPONSE_TIMEOUT))
            .map_err(io_channel)?;
        let ti_addr = ti_sock.local_addr().map_err(io_channel)?;
        let dti_addr = dti_sock.local_addr().map_err(io_channel)?;

        let shutdown = Arc::new(AtomicBool::new(false));
        let (dti_tx, dti_events) = channel();
        let threads = vec![
            spawn_ti(ti_sock, Arc::clone(&shutdown))?,
            spawn_dti(dti_sock, dti_tx, Arc::clone(&shutdown))?,
        ];
        Ok(LiveChannel {
            tt_sock,
            ti_addr,
            dti_addr,
            dti_events,
            shutdown,
            threads,
        })
    }

    /// Sends the transaction message over the NFC stand-in link, returns the
    /// raw TI response bytes.
    pub(super) fn send_to_ti(&self, payload: &[u8]) -> Result<Vec<u8>, HarnessError> {
        self.tt_sock.send_to(payload, self.ti_addr).map_err(io_channel)?;
        let mut buf = [0u8; 64];
        let (n, _) = self.tt_sock.recv_from(&mut buf).map_err(|e| {
            HarnessError::Channel(format!("no response from TI: {e}"))
        })?;
        Ok(buf[..n].to_vec())
    }

    /// Broadcasts raw bytes toward the DTI listener port.
    pub(super) fn send_to_dti(&self, payload: &[u8]) -> Result<(), HarnessError> {
        self.tt_sock.send_to(payload, self.dti_addr).map_err(io_channel)?;
        Ok(())
    }

    /// True once the DTI device reports having decoded this transaction's
    /// message.
    pub(super) fn dti_received(&self, expected: &ProtocolMessage) -> bool {
        let deadline = std::time::Instant::now() + RESPONSE_TIMEOUT;
        loop {
            let now = std::time::Instant::now();
            if now >= deadline {
                return false;
            }
            match self.dti_events.recv_timeout(deadline - now) {
                Ok(msg) if msg == *expected => return true,
                Ok(_) => continue, // stale event from an earlier transaction
                Err(_) => return false,
            }
        }
    }

    /// Drains any queued DTI receipts (used when no broadcast was sent).
    pub(super) fn drain_dti_events(&self) {
        while self.dti_events.try_recv().is_ok() {}
    }
}

impl Drop for LiveChannel {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn io_channel(e: std::io::Error) -> HarnessError {
    HarnessError::Channel(e.to_string())
}

fn spawn_ti(sock: UdpSocket, shutdown: Arc<AtomicBool>) -> Result<JoinHandle<()>, HarnessError> {
    sock.set_read_timeout(Some(DEVICE_POLL)).map_err(io_channel)?;
    Ok(std::thread::spawn(move || {
        let mut buf = [0u8; 64];
        while !shutdown.load(Ordering::SeqCst) {
            match sock.recv_from(&mut buf) {
                Ok((n, src)) => {
                    // Echo valid transaction messages back as the response;
                    // anything else is ignored.
                    if n == PAYLOAD_LEN && wire::decode(&buf[..n]).is_ok() {
                        let _ = sock.send_to(&buf[..n], src);
                    }
                }
                Err(_) => continue,
            }
        }
    }))
}

fn spawn_dti(
    sock: UdpSocket,
    events: Sender<ProtocolMessage>,
    shutdown: Arc<AtomicBool>,
) -> Result<JoinHandle<()>, HarnessError> {
    sock.set_read_timeout(Some(DEVICE_POLL)).map_err(io_channel)?;
    Ok(std::thread::spawn(move || {
        let mut buf = [0u8; 64];
        while !shutdown.load(Ordering::SeqCst) {
            match sock.recv_from(&mut buf) {
                Ok((n, _)) => {
                    // Corrupted datagrams are dropped; the transaction is
                    // simply absent from this device's store.
                    if let Ok(msg) = wire::decode(&buf[..n]) {
                        if events.send(msg).is_err() {
                            break;
                        }
                    }
                }
                Err(_) => continue,
            }
        }
    }))
}
