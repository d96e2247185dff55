//! Datagram wire format: 7 raw transaction-id bytes followed by one sensor
//! code byte. The TI response uses the identical encoding.

use thiserror::Error;

use crate::trace::{SensorKind, TransactionId};

/// Encoded payload length in bytes.
pub const PAYLOAD_LEN: usize = 8;

/// The message TT sends to both other devices at transaction start, and the
/// response TI returns after recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub id: TransactionId,
    pub sensor: SensorKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("payload must be {PAYLOAD_LEN} bytes, got {0}")]
    BadLength(usize),
    #[error("unknown sensor code {0}")]
    UnknownSensor(u8),
}

pub fn encode(msg: &ProtocolMessage) -> [u8; PAYLOAD_LEN] {
    let mut out = [0u8; PAYLOAD_LEN];
    out[..7].copy_from_slice(msg.id.bytes());
    out[7] = msg.sensor.code();
    out
}

pub fn decode(bytes: &[u8]) -> Result<ProtocolMessage, WireError> {
    if bytes.len() != PAYLOAD_LEN {
        return Err(WireError::BadLength(bytes.len()));
    }
    let mut id = [0u8; 7];
    id.copy_from_slice(&bytes[..7]);
    let sensor = SensorKind::from_code(bytes[7]).ok_or(WireError::UnknownSensor(bytes[7]))?;
    Ok(ProtocolMessage {
        id: TransactionId::new(id),
        sensor,
    })
}
