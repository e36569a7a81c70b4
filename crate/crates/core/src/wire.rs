//! Length-prefixed framing shared by the gatekeeper, staging and daemon
//! protocols.
//!
//! ```text
//! u32 big-endian length | MINIGRID/1 <TYPE>\n
//!                       | key: value\n ...
//!                       | \n
//!                       | payload bytes
//! ```

use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use thiserror::Error;

pub const PROTOCOL: &str = "MINIGRID/1";
pub const MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    JobRequest,
    JobStatus,
    JobCollect,
    XferPut,
    XferGet,
    Error,
    CliExec,
    CliResult,
}

impl MessageType {
    pub const ALL: [MessageType; 8] = [
        MessageType::JobRequest,
        MessageType::JobStatus,
        MessageType::JobCollect,
        MessageType::XferPut,
        MessageType::XferGet,
        MessageType::Error,
        MessageType::CliExec,
        MessageType::CliResult,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::JobRequest => "JOB-REQUEST",
            MessageType::JobStatus => "JOB-STATUS",
            MessageType::JobCollect => "JOB-COLLECT",
            MessageType::XferPut => "XFER-PUT",
            MessageType::XferGet => "XFER-GET",
            MessageType::Error => "ERROR",
            MessageType::CliExec => "CLI-EXEC",
            MessageType::CliResult => "CLI-RESULT",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageType {
    type Err = WireError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| WireError::UnknownType(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("truncated frame")]
    Truncated,
    #[error("not a {PROTOCOL} message")]
    BadProtocol,
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("malformed header line {0:?}")]
    BadHeader(String),
    #[error("message head is not UTF-8")]
    NotUtf8,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: MessageType,
    pub headers: Vec<(String, String)>,
    pub payload: Vec<u8>,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_')
}

impl Frame {
    pub fn new(kind: MessageType) -> Self {
        Frame {
            kind,
            headers: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn error(code: &str, detail: &str) -> Self {
        Frame::new(MessageType::Error)
            .with("code", code)
            .with("detail", detail)
    }

    /// Adds a header. Keys are lowercase; line breaks in values become spaces.
    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        let key = key.to_ascii_lowercase();
        assert!(valid_key(&key), "invalid header key {key:?}");
        let value = value.to_string().replace(['\r', '\n'], " ");
        match self.headers.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.headers.push((key, value)),
        }
    }

    pub fn with_payload(mut self, payload: Vec<u8>) -> Self {
        self.payload = payload;
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn is_error(&self) -> bool {
        self.kind == MessageType::Error
    }

    /// Message body without the length prefix.
    pub fn body(&self) -> Vec<u8> {
        let mut out = format!("{PROTOCOL} {}\n", self.kind).into_bytes();
        for (k, v) in &self.headers {
            out.extend_from_slice(format!("{k}: {v}\n").as_bytes());
        }
        out.push(b'\n');
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let body = self.body();
        let mut out = (body.len() as u32).to_be_bytes().to_vec();
        out.extend_from_slice(&body);
        out
    }

    pub fn parse_body(body: &[u8]) -> Result<Frame, WireError> {
        let head_end = body
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or(WireError::Truncated)?;
        let head = std::str::from_utf8(&body[..head_end]).map_err(|_| WireError::NotUtf8)?;
        let mut lines = head.split('\n');
        let first = lines.next().unwrap_or("");
        let kind = first
            .strip_prefix(PROTOCOL)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or(WireError::BadProtocol)?
            .parse()?;
        let mut frame = Frame::new(kind);
        for line in lines {
            let (k, v) = line
                .split_once(": ")
                .filter(|(k, _)| valid_key(k))
                .ok_or_else(|| WireError::BadHeader(line.to_string()))?;
            frame.headers.push((k.to_string(), v.to_string()));
        }
        frame.payload = body[head_end + 2..].to_vec();
        Ok(frame)
    }

    /// Decodes one complete frame, returning it with the bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize), WireError> {
        let len_bytes: [u8; 4] = buf.get(..4).ok_or(WireError::Truncated)?.try_into().expect("4 bytes");
        let len = u32::from_be_bytes(len_bytes) as usize;
        if len > MAX_FRAME {
            return Err(WireError::TooLarge(len));
        }
        let body = buf.get(4..4 + len).ok_or(WireError::Truncated)?;
        Ok((Frame::parse_body(body)?, 4 + len))
    }
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>, WireError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(WireError::Truncated),
            n => got += n,
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated,
        _ => WireError::Io(e),
    })?;
    Frame::parse_body(&body).map(Some)
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<(), WireError> {
    let body = frame.body();
    if body.len() > MAX_FRAME {
        return Err(WireError::TooLarge(body.len()));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}
