//! Socket adapter for an external sentence encoder.
//!
//! Each request is a u32 little-endian payload length followed by a UTF-8
//! JSON object `{"text": ..., "lang": ...}`. The reply is exactly `dim`
//! little-endian `f32` values. Requests on one connection are sequential.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::embedding::ConceptEmbedding;
use super::lang::LanguageSet;
use super::{CodecInfo, ConceptEncoder};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub text: String,
    pub lang: String,
}

pub struct SocketEncoder {
    dim: usize,
    stream: Mutex<TcpStream>,
    languages: Option<LanguageSet>,
}

impl SocketEncoder {
    pub fn connect(addr: impl ToSocketAddrs, dim: usize) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::io("connecting to encoder", e))?;
        stream.set_nodelay(true).ok();
        Ok(SocketEncoder {
            dim,
            stream: Mutex::new(stream),
            languages: None,
        })
    }

    /// Restricts accepted tags locally before any request is sent.
    pub fn with_languages(mut self, languages: LanguageSet) -> Self {
        self.languages = Some(languages);
        self
    }
}

impl ConceptEncoder for SocketEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str, lang: &str) -> Result<ConceptEmbedding> {
        if text.trim().is_empty() {
            return Err(Error::InvalidSentence("empty sentence".into()));
        }
        match &self.languages {
            Some(l) => l.check(lang)?,
            None if !super::lang::is_well_formed(lang) => {
                return Err(Error::UnknownLanguage(lang.to_string()))
            }
            None => {}
        }
        let payload = serde_json::to_vec(&EncodeRequest {
            text: text.trim().to_string(),
            lang: lang.to_string(),
        })?;
        let mut stream = self.stream.lock().expect("encoder connection poisoned");
        stream
            .write_all(&(payload.len() as u32).to_le_bytes())
            .and_then(|_| stream.write_all(&payload))
            .map_err(|e| Error::io("sending encode request", e))?;
        let mut buf = vec![0u8; 4 * self.dim];
        stream
            .read_exact(&mut buf)
            .map_err(|e| Error::io("reading encoder reply", e))?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ConceptEmbedding::new(values)
    }

    fn info(&self) -> CodecInfo {
        CodecInfo {
            kind: "socket".into(),
            dim: self.dim,
            seed: None,
        }
    }

    fn languages(&self) -> Option<&LanguageSet> {
        self.languages.as_ref()
    }
}

/// Answers requests on one connection until the peer hangs up. A request the
/// encoder rejects closes the connection.
pub fn serve_connection(mut stream: TcpStream, encoder: &dyn ConceptEncoder) -> Result<()> {
    loop {
        let mut len = [0u8; 4];
        match stream.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(Error::io("reading request", e)),
        }
        let mut payload = vec![0u8; u32::from_le_bytes(len) as usize];
        stream
            .read_exact(&mut payload)
            .map_err(|e| Error::io("reading request", e))?;
        let req: EncodeRequest = serde_json::from_slice(&payload)?;
        let e = encoder.encode(&req.text, &req.lang)?;
        let mut out = Vec::with_capacity(4 * e.dim());
        for v in e.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        stream
            .write_all(&out)
            .map_err(|e| Error::io("writing reply", e))?;
    }
}

/// Accepts connections forever, serving each in turn.
pub fn serve(listener: TcpListener, encoder: &dyn ConceptEncoder) -> Result<()> {
    for stream in listener.incoming() {
        let stream = stream.map_err(|e| Error::io("accepting connection", e))?;
        if let Err(e) = serve_connection(stream, encoder) {
            eprintln!("encoder connection closed: {e}");
        }
    }
    Ok(())
}
