//! Framed binary protocol spoken with external translator processes over
//! their stdin/stdout. All integers are little-endian.
//!
//! ```text
//! request:  "CCWT" | version u8 = 1 | msg_type u8 | tile_id u32 | width u16 | height u16
//!           | channels u8 = 3 | hist_flag u8 | [bins u16 | 3*bins^2 f32] | width*height*3 bytes
//! response: "CCWT" | version u8 = 1 | msg_type u8 | tile_id u32 | width u16 | height u16
//!           | channels u8 = 3 | width*height*3 bytes
//! ```
//!
//! `msg_type` is 0 for the handshake, 1 for a request and 2 for a response.
//! The client opens with a request-layout handshake frame (tile_id 0, zero
//! dimensions, hist_flag 0); the server answers with a response-layout
//! handshake frame, also with zero dimensions.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"CCWT";
pub const VERSION: u8 = 1;
pub const CHANNELS: u8 = 3;

pub const MSG_HANDSHAKE: u8 = 0;
pub const MSG_REQUEST: u8 = 1;
pub const MSG_RESPONSE: u8 = 2;

const REQUEST_HEADER_LEN: usize = 16;
const RESPONSE_HEADER_LEN: usize = 15;

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum ProtocolViolation {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unexpected message type {0}")]
    UnexpectedMessageType(u8),
    #[error("unsupported channel count {0}")]
    BadChannels(u8),
    #[error("bad histogram flag {0}")]
    BadHistFlag(u8),
    #[error("handshake frame with non-zero dimensions")]
    BadHandshake,
    #[error("truncated frame")]
    Truncated,
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Violation(#[from] ProtocolViolation),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramPayload {
    pub bins: u16,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestFrame {
    pub msg_type: u8,
    pub tile_id: u32,
    pub width: u16,
    pub height: u16,
    pub histogram: Option<HistogramPayload>,
    pub payload: Vec<u8>,
}

impl RequestFrame {
    pub fn handshake() -> Self {
        Self {
            msg_type: MSG_HANDSHAKE,
            tile_id: 0,
            width: 0,
            height: 0,
            histogram: None,
            payload: Vec::new(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let hist_len = self
            .histogram
            .as_ref()
            .map_or(0, |h| 2 + 4 * h.values.len());
        let mut out = Vec::with_capacity(REQUEST_HEADER_LEN + hist_len + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type);
        out.extend_from_slice(&self.tile_id.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(CHANNELS);
        match &self.histogram {
            Some(h) => {
                out.push(1);
                out.extend_from_slice(&h.bins.to_le_bytes());
                for v in &h.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.payload);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseFrame {
    pub msg_type: u8,
    pub tile_id: u32,
    pub width: u16,
    pub height: u16,
    pub payload: Vec<u8>,
}

impl ResponseFrame {
    pub fn handshake() -> Self {
        Self {
            msg_type: MSG_HANDSHAKE,
            tile_id: 0,
            width: 0,
            height: 0,
            payload: Vec::new(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        self.encode_with(MAGIC, VERSION)
    }

    fn encode_with(&self, magic: [u8; 4], version: u8) -> Vec<u8> {
        let mut out = Vec::with_capacity(RESPONSE_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&magic);
        out.push(version);
        out.push(self.msg_type);
        out.extend_from_slice(&self.tile_id.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(CHANNELS);
        out.extend_from_slice(&self.payload);
        out
    }
}

/// Fill `buf` completely. `Ok(false)` on a clean EOF before the first byte.
fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> Result<bool, FrameError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(ProtocolViolation::Truncated.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

fn read_body(r: &mut impl Read, len: usize) -> Result<Vec<u8>, FrameError> {
    let mut body = vec![0u8; len];
    if len > 0 && !read_exact_or_eof(r, &mut body)? {
        return Err(ProtocolViolation::Truncated.into());
    }
    Ok(body)
}

fn check_prefix(header: &[u8]) -> Result<u8, ProtocolViolation> {
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ProtocolViolation::BadMagic(magic));
    }
    if header[4] != VERSION {
        return Err(ProtocolViolation::BadVersion(header[4]));
    }
    Ok(header[5])
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Next request frame, or `None` at a clean end of stream.
pub fn read_request(r: &mut impl Read) -> Result<Option<RequestFrame>, FrameError> {
    let mut header = [0u8; REQUEST_HEADER_LEN];
    if !read_exact_or_eof(r, &mut header)? {
        return Ok(None);
    }
    let msg_type = check_prefix(&header)?;
    if msg_type != MSG_HANDSHAKE && msg_type != MSG_REQUEST {
        return Err(ProtocolViolation::UnexpectedMessageType(msg_type).into());
    }
    let tile_id = le_u32(&header[6..10]);
    let width = le_u16(&header[10..12]);
    let height = le_u16(&header[12..14]);
    if header[14] != CHANNELS {
        return Err(ProtocolViolation::BadChannels(header[14]).into());
    }
    let histogram = match header[15] {
        0 => None,
        1 => {
            let bins = le_u16(&read_body(r, 2)?);
            let n = 3 * usize::from(bins) * usize::from(bins);
            let raw = read_body(r, 4 * n)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Some(HistogramPayload { bins, values })
        }
        other => return Err(ProtocolViolation::BadHistFlag(other).into()),
    };
    let payload = read_body(r, usize::from(width) * usize::from(height) * 3)?;
    Ok(Some(RequestFrame {
        msg_type,
        tile_id,
        width,
        height,
        histogram,
        payload,
    }))
}

/// Next response frame, or `None` at a clean end of stream.
pub fn read_response(r: &mut impl Read) -> Result<Option<ResponseFrame>, FrameError> {
    let mut header = [0u8; RESPONSE_HEADER_LEN];
    if !read_exact_or_eof(r, &mut header)? {
        return Ok(None);
    }
    let msg_type = check_prefix(&header)?;
    if msg_type != MSG_HANDSHAKE && msg_type != MSG_RESPONSE {
        return Err(ProtocolViolation::UnexpectedMessageType(msg_type).into());
    }
    let tile_id = le_u32(&header[6..10]);
    let width = le_u16(&header[10..12]);
    let height = le_u16(&header[12..14]);
    if header[14] != CHANNELS {
        return Err(ProtocolViolation::BadChannels(header[14]).into());
    }
    let payload = read_body(r, usize::from(width) * usize::from(height) * 3)?;
    Ok(Some(ResponseFrame {
        msg_type,
        tile_id,
        width,
        height,
        payload,
    }))
}

/// Misbehaviours the echo server can be asked to exhibit, for exercising
/// client error paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EchoFault {
    #[default]
    None,
    /// Responses carry magic `"XXXX"`.
    BadMagic,
    /// Responses carry version 9.
    BadVersion,
    /// Responses carry `tile_id + 1`.
    WrongTileId,
    /// Exit without replying once this many requests have been answered.
    ExitAfter(usize),
    /// Answer requests two at a time in reverse arrival order.
    ReversePairs,
}

impl std::str::FromStr for EchoFault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "none" => EchoFault::None,
            "bad-magic" => EchoFault::BadMagic,
            "bad-version" => EchoFault::BadVersion,
            "wrong-tile-id" => EchoFault::WrongTileId,
            "reverse-pairs" => EchoFault::ReversePairs,
            other => match other.strip_prefix("exit-after=") {
                Some(n) => EchoFault::ExitAfter(n.parse().map_err(|e| format!("{other}: {e}"))?),
                None => return Err(format!("unknown fault {other:?}")),
            },
        })
    }
}

/// Reference translator server: answers every request with its own payload.
/// Returns when the client closes the stream.
pub fn serve_echo(
    mut reader: impl Read,
    mut writer: impl Write,
    fault: EchoFault,
) -> Result<(), FrameError> {
    match read_request(&mut reader)? {
        Some(f) if f.msg_type == MSG_HANDSHAKE => {
            if f.width != 0 || f.height != 0 {
                return Err(ProtocolViolation::BadHandshake.into());
            }
        }
        Some(f) => return Err(ProtocolViolation::UnexpectedMessageType(f.msg_type).into()),
        None => return Ok(()),
    }
    writer.write_all(&ResponseFrame::handshake().encode())?;
    writer.flush()?;

    let mut answered = 0usize;
    let mut held: Option<ResponseFrame> = None;
    while let Some(req) = read_request(&mut reader)? {
        if req.msg_type != MSG_REQUEST {
            return Err(ProtocolViolation::UnexpectedMessageType(req.msg_type).into());
        }
        if let EchoFault::ExitAfter(n) = fault {
            if answered >= n {
                return Ok(());
            }
        }
        let mut resp = ResponseFrame {
            msg_type: MSG_RESPONSE,
            tile_id: req.tile_id,
            width: req.width,
            height: req.height,
            payload: req.payload,
        };
        let bytes = match fault {
            EchoFault::BadMagic => resp.encode_with(*b"XXXX", VERSION),
            EchoFault::BadVersion => resp.encode_with(MAGIC, 9),
            EchoFault::WrongTileId => {
                resp.tile_id = resp.tile_id.wrapping_add(1);
                resp.encode()
            }
            EchoFault::ReversePairs => match held.take() {
                None => {
                    held = Some(resp);
                    continue;
                }
                Some(first) => {
                    let mut b = resp.encode();
                    b.extend_from_slice(&first.encode());
                    b
                }
            },
            EchoFault::None | EchoFault::ExitAfter(_) => resp.encode(),
        };
        writer.write_all(&bytes)?;
        writer.flush()?;
        answered += 1;
    }
    if let Some(last) = held {
        writer.write_all(&last.encode())?;
        writer.flush()?;
    }
    Ok(())
}
