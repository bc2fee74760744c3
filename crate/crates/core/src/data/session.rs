//! On-disk session container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "EMGSEQ01"                      8-byte magic
//! u32 header_len
//! header_len bytes of UTF-8 JSON  {user_id, session_id, sample_rate_hz,
//!                                  num_channels, num_samples, num_events}
//! f32 × num_samples × num_channels  time-major, channel-contiguous
//! (u32 symbol, u64 timestamp) × num_events
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::BAND_SIZE;

pub const SESSION_MAGIC: &[u8; 8] = b"EMGSEQ01";

/// A single keystroke label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub symbol: u32,
    /// Sample index into the session.
    pub timestamp: u64,
}

/// One recording: raw multi-channel signal plus timestamped keystrokes.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub user_id: String,
    pub session_id: String,
    pub sample_rate_hz: u32,
    /// `num_samples × num_channels`.
    pub samples: Mat,
    pub labels: Vec<KeyEvent>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionHeader {
    user_id: String,
    session_id: String,
    sample_rate_hz: u32,
    num_channels: u32,
    num_samples: u64,
    num_events: u64,
}

impl Session {
    pub fn num_samples(&self) -> usize {
        self.samples.rows
    }

    pub fn num_channels(&self) -> usize {
        self.samples.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::InvalidSession("sample_rate_hz must be positive".into()));
        }
        let c = self.num_channels();
        if c == 0 || c % BAND_SIZE != 0 {
            return Err(Error::InvalidSession(format!(
                "num_channels {c} is not a positive multiple of the band size {BAND_SIZE}"
            )));
        }
        let n = self.num_samples() as u64;
        let mut prev = 0u64;
        for (i, ev) in self.labels.iter().enumerate() {
            if ev.timestamp >= n {
                return Err(Error::TimestampOutOfRange {
                    timestamp: ev.timestamp,
                    num_samples: n,
                });
            }
            if ev.symbol == crate::BLANK {
                return Err(Error::InvalidSession(format!(
                    "label {i} uses the blank symbol"
                )));
            }
            if i > 0 && ev.timestamp < prev {
                return Err(Error::InvalidSession(format!(
                    "labels not sorted by timestamp at index {i}"
                )));
            }
            prev = ev.timestamp;
        }
        Ok(())
    }

    /// Checks every label symbol against a vocabulary size.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.labels.iter().find(|e| e.symbol as usize >= vocab_size) {
            Some(e) => Err(Error::SymbolOutOfVocab {
                symbol: e.symbol,
                vocab_size,
            }),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = SessionHeader {
            user_id: self.user_id.clone(),
            session_id: self.session_id.clone(),
            sample_rate_hz: self.sample_rate_hz,
            num_channels: self.num_channels() as u32,
            num_samples: self.num_samples() as u64,
            num_events: self.labels.len() as u64,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out =
            Vec::with_capacity(12 + json.len() + self.samples.data.len() * 4 + self.labels.len() * 12);
        out.extend_from_slice(SESSION_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.samples.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for ev in &self.labels {
            out.extend_from_slice(&ev.symbol.to_le_bytes());
            out.extend_from_slice(&ev.timestamp.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Session> {
        if bytes.len() < 8 || &bytes[..8] != SESSION_MAGIC {
            let found = &bytes[..bytes.len().min(8)];
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(SESSION_MAGIC).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        if bytes.len() < 12 {
            return Err(Error::MalformedHeader("missing header length".into()));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::MalformedHeader("header length exceeds file size".into()))?;
        let header: SessionHeader = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| Error::MalformedHeader(e.to_string()))?;

        let num_samples = header.num_samples as usize;
        let num_channels = header.num_channels as usize;
        let sample_bytes = num_samples
            .checked_mul(num_channels)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::MalformedHeader("sample block size overflows".into()))?;
        let rest = &bytes[header_end..];
        if rest.len() < sample_bytes {
            return Err(Error::Truncated {
                block: "sample",
                expected: sample_bytes,
                found: rest.len(),
            });
        }
        let data: Vec<f32> = rest[..sample_bytes]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();

        let events = &rest[sample_bytes..];
        let event_bytes = (header.num_events as usize)
            .checked_mul(12)
            .ok_or_else(|| Error::MalformedHeader("event block size overflows".into()))?;
        if events.len() < event_bytes {
            return Err(Error::Truncated {
                block: "event",
                expected: event_bytes,
                found: events.len(),
            });
        }
        if events.len() > event_bytes {
            return Err(Error::MalformedHeader(format!(
                "{} trailing bytes after event block",
                events.len() - event_bytes
            )));
        }
        let labels = events
            .chunks_exact(12)
            .map(|b| KeyEvent {
                symbol: u32::from_le_bytes(b[..4].try_into().unwrap()),
                timestamp: u64::from_le_bytes(b[4..].try_into().unwrap()),
            })
            .collect();

        let session = Session {
            user_id: header.user_id,
            session_id: header.session_id,
            sample_rate_hz: header.sample_rate_hz,
            samples: Mat::from_vec(num_samples, num_channels, data),
            labels,
        };
        session.validate()?;
        Ok(session)
    }
}

pub fn save_session(session: &Session, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = session.to_bytes()?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_session(path: impl AsRef<Path>) -> Result<Session> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Session::from_bytes(&bytes)
}

/// Adapter point for external corpora.
///
/// Implementors enumerate recordings from some foreign layout and hand back
/// validated [`Session`]s; the result is written out with [`save_session`]
/// so every downstream tool only ever reads the native container.
pub trait SessionSource {
    /// `(user_id, session_id)` pairs available from this source.
    fn list(&self) -> Result<Vec<(String, String)>>;

    fn load(&self, user_id: &str, session_id: &str) -> Result<Session>;

    /// Converts every listed session into `out_dir/<user>/<session>.emgseq`.
    fn convert_all(&self, out_dir: &Path) -> Result<usize> {
        let ids = self.list()?;
        for (user, sess) in &ids {
            let s = self.load(user, sess)?;
            save_session(&s, out_dir.join(user).join(format!("{sess}.emgseq")))?;
        }
        Ok(ids.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(num_samples: usize) -> Session {
        let data = (0..num_samples * 32).map(|i| (i as f32).sin()).collect();
        Session {
            user_id: "u0".into(),
            session_id: "s0".into(),
            sample_rate_hz: 2000,
            samples: Mat::from_vec(num_samples, 32, data),
            labels: vec![
                KeyEvent { symbol: 3, timestamp: 0 },
                KeyEvent { symbol: 1, timestamp: 7 },
            ],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let s = toy(10);
        let bytes = s.to_bytes().unwrap();
        let back = Session::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn altered_magic_is_rejected() {
        let mut bytes = toy(8).to_bytes().unwrap();
        bytes[3] = b'X';
        assert!(matches!(Session::from_bytes(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn timestamp_equal_to_length_rejected_at_save() {
        let mut s = toy(10);
        s.labels.push(KeyEvent { symbol: 2, timestamp: 10 });
        assert!(matches!(
            s.to_bytes(),
            Err(Error::TimestampOutOfRange { timestamp: 10, num_samples: 10 })
        ));
        s.labels.pop();
        s.labels.push(KeyEvent { symbol: 2, timestamp: 9 });
        assert!(s.to_bytes().is_ok());
    }

    #[test]
    fn truncation_diagnostics_name_the_block() {
        let bytes = toy(10).to_bytes().unwrap();
        let cut_events = &bytes[..bytes.len() - 5];
        assert!(matches!(
            Session::from_bytes(cut_events),
            Err(Error::Truncated { block: "event", .. })
        ));
        let cut_samples = &bytes[..bytes.len() - 24 - 100];
        assert!(matches!(
            Session::from_bytes(cut_samples),
            Err(Error::Truncated { block: "sample", .. })
        ));
        let mut bad_json = bytes.clone();
        bad_json[12] = b'!';
        assert!(matches!(
            Session::from_bytes(&bad_json),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn invariant_violations() {
        let mut s = toy(10);
        s.labels.swap(0, 1);
        assert!(matches!(s.validate(), Err(Error::InvalidSession(_))));
        let mut s = toy(10);
        s.labels[0].symbol = 0;
        assert!(s.validate().is_err());
        let mut s = toy(10);
        s.samples = Mat::zeros(10, 20);
        assert!(s.validate().is_err());
        let mut s = toy(10);
        s.sample_rate_hz = 0;
        assert!(s.validate().is_err());
        assert!(toy(10).check_vocab(4).is_ok());
        assert!(toy(10).check_vocab(3).is_err());
    }
}
