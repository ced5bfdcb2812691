//! Binary message framing.
//!
//! ```text
//! length: u32 BE | type: u8 | session: [u8; 16] | round: u32 BE | gadget: u32 BE | payload
//! ```
//!
//! `length` counts every byte after the length field. Field elements inside
//! payloads are 16 bytes little-endian.

use std::fmt;
use std::io::Read;

use crate::error::{Error, Result};
use crate::field::Fe;

pub const HEADER_LEN: usize = 4 + 1 + 16 + 4 + 4;

/// Largest frame accepted from a stream (length field value).
pub const MAX_FRAME_LEN: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Setup = 1,
    SetupAck = 2,
    InputMShare = 3,
    CountRequest = 4,
    CountShares = 5,
    MaterialRequest = 6,
    Material = 7,
    OpenPart = 8,
    LayerDigest = 9,
    Result = 10,
    Abort = 11,
}

impl MessageType {
    pub fn from_byte(b: u8) -> Result<MessageType> {
        use MessageType::*;
        Ok(match b {
            1 => Setup,
            2 => SetupAck,
            3 => InputMShare,
            4 => CountRequest,
            5 => CountShares,
            6 => MaterialRequest,
            7 => Material,
            8 => OpenPart,
            9 => LayerDigest,
            10 => Result,
            11 => Abort,
            _ => return Err(Error::Malformed(format!("unknown message type {b}"))),
        })
    }
}

#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct SessionId(pub [u8; 16]);

impl SessionId {
    pub fn from_hex(s: &str) -> Result<SessionId> {
        let bytes = hex::decode(s).map_err(|e| Error::Config(format!("session id: {e}")))?;
        let arr: [u8; 16] = bytes
            .try_into()
            .map_err(|_| Error::Config("session id must be 16 bytes (32 hex digits)".into()))?;
        Ok(SessionId(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionId({})", self.to_hex())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: MessageType,
    pub session: SessionId,
    pub round: u32,
    pub gadget: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let len = HEADER_LEN - 4 + self.payload.len();
        let mut out = Vec::with_capacity(4 + len);
        out.extend_from_slice(&(len as u32).to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.session.0);
        out.extend_from_slice(&self.round.to_be_bytes());
        out.extend_from_slice(&self.gadget.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one complete frame; the length field must cover the rest exactly.
    pub fn decode(bytes: &[u8]) -> Result<Frame> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Malformed(format!("frame of {} bytes is shorter than its header", bytes.len())));
        }
        let len = u32::from_be_bytes(bytes[0..4].try_into().unwrap()) as usize;
        if len != bytes.len() - 4 {
            return Err(Error::Malformed(format!(
                "frame length field says {len}, frame carries {}",
                bytes.len() - 4
            )));
        }
        let kind = MessageType::from_byte(bytes[4])?;
        let session = SessionId(bytes[5..21].try_into().unwrap());
        let round = u32::from_be_bytes(bytes[21..25].try_into().unwrap());
        let gadget = u32::from_be_bytes(bytes[25..29].try_into().unwrap());
        Ok(Frame { kind, session, round, gadget, payload: bytes[HEADER_LEN..].to_vec() })
    }
}

/// Reads one raw frame (length prefix included) from a byte stream.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Vec<u8>> {
    let mut len_buf = [0u8; 4];
    reader.read_exact(&mut len_buf)?;
    let len = u32::from_be_bytes(len_buf) as usize;
    if !(HEADER_LEN - 4..=MAX_FRAME_LEN).contains(&len) {
        return Err(Error::Malformed(format!("frame length {len} out of bounds")));
    }
    let mut buf = vec![0u8; 4 + len];
    buf[..4].copy_from_slice(&len_buf);
    reader.read_exact(&mut buf[4..])?;
    Ok(buf)
}

pub fn encode_fes(values: &[Fe]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 16);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fes(bytes: &[u8]) -> Result<Vec<Fe>> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::Malformed(format!("{} bytes is not a whole number of field elements", bytes.len())));
    }
    bytes.chunks_exact(16).map(|c| Fe::from_le_bytes(c.try_into().unwrap())).collect()
}

/// `target: u32 BE | set length: u32 BE | variable indices: u32 BE...`
pub fn encode_set_header(target: usize, set: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * set.len());
    out.extend_from_slice(&(target as u32).to_be_bytes());
    out.extend_from_slice(&(set.len() as u32).to_be_bytes());
    for &v in set {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    out
}

/// Parses a set header and returns it with the remaining bytes.
pub fn decode_set_header(bytes: &[u8]) -> Result<(usize, Vec<usize>, &[u8])> {
    let word = |i: usize| -> Result<usize> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| Error::Malformed("truncated set header".into()))
    };
    let target = word(0)?;
    let len = word(1)?;
    if len > 64 {
        return Err(Error::Malformed(format!("set of {len} variables")));
    }
    let set = (0..len).map(|i| word(2 + i)).collect::<Result<Vec<_>>>()?;
    Ok((target, set, &bytes[8 + 4 * len..]))
}
