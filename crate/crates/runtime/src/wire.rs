//! Length-prefixed binary framing between master and workers.
//!
//! Header: `"CCOI"`, version byte `1`, message type byte, payload length as
//! little-endian `u64`. Multi-byte integers in payloads are little-endian;
//! tensors use the core container format.

use std::io::{ErrorKind, Read, Write};

use coded_conv::Tensor;

use crate::error::{Result, RuntimeError};

pub const MAGIC: [u8; 4] = *b"CCOI";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
/// Frames above this size are rejected before allocation.
pub const MAX_PAYLOAD: u64 = 1 << 30;

/// Error codes carried by [`Message::Error`].
pub mod codes {
    pub const MALFORMED: u16 = 1;
    pub const LAYER_NOT_LOADED: u16 = 2;
    pub const BAD_TASK: u16 = 3;
    pub const INTERNAL: u16 = 4;
}

/// Convolution geometry sent ahead of the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerHeader {
    pub in_channels: u32,
    pub out_channels: u32,
    pub kernel_size: u32,
    pub stride: u32,
    pub padding: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { worker_id: u32 },
    LoadLayer { layer_id: u32, header: LayerHeader, weights: Tensor },
    TaskAssign { task_id: u64, layer_id: u32, subtask_index: u32, input: Tensor },
    ResultReturn { task_id: u64, subtask_index: u32, output: Tensor },
    Cancel { task_id: u64 },
    Heartbeat,
    Error { code: u16, text: String },
}

impl Message {
    pub fn type_byte(&self) -> u8 {
        match self {
            Message::Hello { .. } => 1,
            Message::LoadLayer { .. } => 2,
            Message::TaskAssign { .. } => 3,
            Message::ResultReturn { .. } => 4,
            Message::Cancel { .. } => 5,
            Message::Heartbeat => 6,
            Message::Error { .. } => 7,
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            Message::Hello { worker_id } => p.extend_from_slice(&worker_id.to_le_bytes()),
            Message::LoadLayer { layer_id, header, weights } => {
                p.extend_from_slice(&layer_id.to_le_bytes());
                for v in [header.in_channels, header.out_channels, header.kernel_size, header.stride, header.padding] {
                    p.extend_from_slice(&v.to_le_bytes());
                }
                p.extend(weights.to_container_bytes());
            }
            Message::TaskAssign { task_id, layer_id, subtask_index, input } => {
                p.extend_from_slice(&task_id.to_le_bytes());
                p.extend_from_slice(&layer_id.to_le_bytes());
                p.extend_from_slice(&subtask_index.to_le_bytes());
                p.extend(input.to_container_bytes());
            }
            Message::ResultReturn { task_id, subtask_index, output } => {
                p.extend_from_slice(&task_id.to_le_bytes());
                p.extend_from_slice(&subtask_index.to_le_bytes());
                p.extend(output.to_container_bytes());
            }
            Message::Cancel { task_id } => p.extend_from_slice(&task_id.to_le_bytes()),
            Message::Heartbeat => {}
            Message::Error { code, text } => {
                p.extend_from_slice(&code.to_le_bytes());
                p.extend_from_slice(text.as_bytes());
            }
        }
        p
    }

    /// Complete frame: header plus payload.
    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.type_byte());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend(payload);
        out
    }

    /// Parses the payload of a frame with type byte `msg_type`.
    pub fn decode(msg_type: u8, payload: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf: payload, at: 0 };
        let msg = match msg_type {
            1 => Message::Hello { worker_id: c.u32()? },
            2 => {
                let layer_id = c.u32()?;
                let header = LayerHeader {
                    in_channels: c.u32()?,
                    out_channels: c.u32()?,
                    kernel_size: c.u32()?,
                    stride: c.u32()?,
                    padding: c.u32()?,
                };
                Message::LoadLayer { layer_id, header, weights: c.tensor()? }
            }
            3 => Message::TaskAssign { task_id: c.u64()?, layer_id: c.u32()?, subtask_index: c.u32()?, input: c.tensor()? },
            4 => Message::ResultReturn { task_id: c.u64()?, subtask_index: c.u32()?, output: c.tensor()? },
            5 => Message::Cancel { task_id: c.u64()? },
            6 => Message::Heartbeat,
            7 => {
                let code = c.u16()?;
                let text = String::from_utf8(c.rest().to_vec()).map_err(|_| protocol("error text is not UTF-8"))?;
                Message::Error { code, text }
            }
            t => return Err(protocol(format!("unknown message type {t}"))),
        };
        c.finish()?;
        Ok(msg)
    }
}

fn protocol(msg: impl Into<String>) -> RuntimeError {
    RuntimeError::Protocol(msg.into())
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(len).filter(|&e| e <= self.buf.len()).ok_or_else(|| protocol("payload too short"))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let (t, used) = Tensor::parse_container_prefix(&self.buf[self.at..]).map_err(|e| protocol(e.to_string()))?;
        self.at += used;
        Ok(t)
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.at..];
        self.at = self.buf.len();
        s
    }

    fn finish(&self) -> Result<()> {
        match self.buf.len() - self.at {
            0 => Ok(()),
            extra => Err(protocol(format!("{extra} trailing payload bytes"))),
        }
    }
}

/// Validates a header, returning the message type and payload length.
pub fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(u8, u64)> {
    if h[..4] != MAGIC {
        return Err(protocol("bad magic"));
    }
    if h[4] != VERSION {
        return Err(protocol(format!("unsupported version {}", h[4])));
    }
    if !(1..=7).contains(&h[5]) {
        return Err(protocol(format!("unknown message type {}", h[5])));
    }
    let len = u64::from_le_bytes(h[6..14].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(protocol(format!("payload of {len} bytes exceeds limit")));
    }
    Ok((h[5], len))
}

/// Reads one frame. `Ok(None)` means the peer closed cleanly between frames.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(protocol("stream ended inside a header")),
            Ok(m) => got += m,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (msg_type, len) = parse_header(&header)?;
    let mut payload = Vec::new();
    let read = r.take(len).read_to_end(&mut payload)?;
    if read as u64 != len {
        return Err(protocol(format!("stream ended after {read} of {len} payload bytes")));
    }
    Message::decode(msg_type, &payload).map(Some)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    w.write_all(&msg.encode())?;
    w.flush()?;
    Ok(())
}

/// Parses a buffer holding exactly one frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Message> {
    let mut r = bytes;
    let msg = read_message(&mut r)?.ok_or_else(|| protocol("empty frame"))?;
    if !r.is_empty() {
        return Err(protocol(format!("{} bytes after frame", r.len())));
    }
    Ok(msg)
}
