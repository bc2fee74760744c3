use serde::{Deserialize, Serialize};

use super::session::Session;
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Window geometry, all in samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub window_len: usize,
    pub pad_past: usize,
    pub pad_future: usize,
    /// Defaults to `window_len` (non-overlapping) when omitted.
    #[serde(default)]
    pub hop: Option<usize>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_len: 8000,
            pad_past: 1800,
            pad_future: 200,
            hop: None,
        }
    }
}

impl WindowConfig {
    /// Builds a geometry from millisecond values; each must land on a whole sample.
    pub fn from_ms(
        window_ms: f64,
        pad_past_ms: f64,
        pad_future_ms: f64,
        sample_rate_hz: u32,
    ) -> Result<Self> {
        let to_samples = |name: &str, ms: f64| -> Result<usize> {
            let s = ms * sample_rate_hz as f64 / 1000.0;
            if ms < 0.0 || (s - s.round()).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {ms} ms is not a whole number of samples at {sample_rate_hz} Hz"
                )));
            }
            Ok(s.round() as usize)
        };
        Ok(WindowConfig {
            window_len: to_samples("window", window_ms)?,
            pad_past: to_samples("pad_past", pad_past_ms)?,
            pad_future: to_samples("pad_future", pad_future_ms)?,
            hop: None,
        })
    }

    pub fn hop(&self) -> usize {
        self.hop.unwrap_or(self.window_len)
    }

    pub fn total_len(&self) -> usize {
        self.pad_past + self.window_len + self.pad_future
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(Error::InvalidConfig("window_len must be positive".into()));
        }
        if self.hop() == 0 {
            return Err(Error::InvalidConfig("hop must be positive".into()));
        }
        Ok(())
    }
}

/// A padded window of signal and the labels falling in its core span.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSample {
    /// `(pad_past + window_len + pad_future) × num_channels`.
    pub signal: Mat,
    pub target: Vec<u32>,
    /// `[pad_past, pad_past + window_len)` in window coordinates.
    pub core_range: (usize, usize),
    /// Session sample index of the first core sample.
    pub start: usize,
}

/// Cuts a session into padded windows. Regions outside the session are zero.
///
/// Windows start at `0, hop, 2·hop, …` while the start lies inside the
/// session; a session shorter than one window still yields one window.
pub fn window_session(session: &Session, cfg: &WindowConfig) -> Result<Vec<WindowedSample>> {
    cfg.validate()?;
    let n = session.num_samples();
    let c = session.num_channels();
    let hop = cfg.hop();
    let total = cfg.total_len();
    let count = n.div_ceil(hop).max(1);

    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * hop;
        let mut signal = Mat::zeros(total, c);
        // window row r ↔ session sample start + r - pad_past
        let first = start as isize - cfg.pad_past as isize;
        let lo = first.max(0) as usize;
        let hi = ((first + total as isize).max(0) as usize).min(n);
        if lo < hi {
            let dst = (lo as isize - first) as usize;
            signal.data[dst * c..(dst + hi - lo) * c]
                .copy_from_slice(&session.samples.data[lo * c..hi * c]);
        }
        let end = start + cfg.window_len;
        let target = session
            .labels
            .iter()
            .filter(|e| (e.timestamp as usize) >= start && (e.timestamp as usize) < end)
            .map(|e| e.symbol)
            .collect();
        out.push(WindowedSample {
            signal,
            target,
            core_range: (cfg.pad_past, cfg.pad_past + cfg.window_len),
            start,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::session::KeyEvent;

    fn session(n: usize, events: &[u64]) -> Session {
        let data = (0..n * 16).map(|i| (i / 16) as f32 + 1.0).collect();
        Session {
            user_id: "u".into(),
            session_id: "s".into(),
            sample_rate_hz: 2000,
            samples: Mat::from_vec(n, 16, data),
            labels: events
                .iter()
                .enumerate()
                .map(|(i, &t)| KeyEvent { symbol: i as u32 + 1, timestamp: t })
                .collect(),
        }
    }

    #[test]
    fn default_geometry_yields_ten_thousand_samples() {
        let cfg = WindowConfig::default();
        let w = window_session(&session(20000, &[]), &cfg).unwrap();
        assert!(w.iter().all(|s| s.signal.rows == 10000));
        let ms = WindowConfig::from_ms(4000.0, 900.0, 100.0, 2000).unwrap();
        assert_eq!(ms, cfg);
    }

    #[test]
    fn ms_conversion_rejects_fractional_samples() {
        assert!(WindowConfig::from_ms(4000.0, 900.25, 100.0, 2000).is_err());
    }

    #[test]
    fn events_land_in_their_core_windows() {
        let cfg = WindowConfig { window_len: 8000, pad_past: 1800, pad_future: 200, hop: Some(8000) };
        let w = window_session(&session(12000, &[100, 8100]), &cfg).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].target, vec![1]);
        assert_eq!(w[1].target, vec![2]);
    }

    #[test]
    fn single_window_session_without_events() {
        let cfg = WindowConfig { window_len: 100, pad_past: 10, pad_future: 5, hop: None };
        let w = window_session(&session(100, &[]), &cfg).unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].target.is_empty());
    }

    #[test]
    fn short_session_gives_one_padded_window() {
        let cfg = WindowConfig { window_len: 100, pad_past: 10, pad_future: 5, hop: None };
        let w = window_session(&session(30, &[29]), &cfg).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].signal.rows, 115);
        // pad_past rows and everything past sample 29 are zero
        assert!(w[0].signal.row(9).iter().all(|&v| v == 0.0));
        assert_eq!(w[0].signal.at(10, 0), 1.0);
        assert_eq!(w[0].signal.at(39, 0), 30.0);
        assert!(w[0].signal.row(40).iter().all(|&v| v == 0.0));
        assert_eq!(w[0].target, vec![1]);
    }

    #[test]
    fn padding_copies_neighbouring_context() {
        let cfg = WindowConfig { window_len: 10, pad_past: 3, pad_future: 2, hop: None };
        let w = window_session(&session(25, &[]), &cfg).unwrap();
        assert_eq!(w.len(), 3);
        // second window: row 0 ↔ sample 7
        assert_eq!(w[1].signal.at(0, 0), 8.0);
        assert_eq!(w[1].signal.at(14, 0), 22.0);
    }

    #[test]
    fn zero_hop_is_an_error() {
        let cfg = WindowConfig { window_len: 10, pad_past: 0, pad_future: 0, hop: Some(0) };
        assert!(window_session(&session(25, &[]), &cfg).is_err());
    }
}
