//! Blocking clients for the control and stream sockets.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde_json::{json, Value};

use super::protocol::{ControlResponse, Envelope, EnvelopeReader};
use crate::error::{Error, Result};

pub struct ControlClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl ControlClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(Duration::from_secs(10)))?;
        Ok(Self {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    /// Sends one raw line and reads one response line.
    pub fn send_line(&mut self, line: &str) -> Result<ControlResponse> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(Error::Io(std::io::ErrorKind::UnexpectedEof.into()));
        }
        Ok(serde_json::from_str(&buf)?)
    }

    pub fn request(&mut self, kind: &str, payload: Value, request_id: &str) -> Result<ControlResponse> {
        let msg = json!({"type": kind, "payload": payload, "request_id": request_id});
        self.send_line(&msg.to_string())
    }
}

pub struct StreamClient {
    stream: TcpStream,
    reader: EnvelopeReader,
    chunk: Vec<u8>,
}

impl StreamClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(Duration::from_secs(10)))?;
        Ok(Self {
            stream,
            reader: EnvelopeReader::default(),
            chunk: vec![0; 64 * 1024],
        })
    }

    /// Blocks for the next envelope; `None` once the server closes.
    pub fn next_envelope(&mut self) -> Result<Option<Envelope>> {
        loop {
            if let Some(e) = self
                .reader
                .next_envelope()
                .map_err(|e| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?
            {
                return Ok(Some(e));
            }
            let n = self.stream.read(&mut self.chunk)?;
            if n == 0 {
                return Ok(None);
            }
            self.reader.push(&self.chunk[..n]);
        }
    }

    pub fn skipped(&self) -> u64 {
        self.reader.skipped()
    }
}
