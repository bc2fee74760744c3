//! Session container, windowing, split manifests and the synthetic corpus.

pub mod session;
pub mod split;
pub mod synth;
pub mod window;

pub use session::{load_session, save_session, KeyEvent, Session, SessionSource};
pub use split::{split_dataset, ResolvedSplits, SplitManifest, SplitMode, UserSessions};
pub use synth::{synth_dataset, SynthConfig, SynthSummary, Synthesizer, MANIFEST_FILE};
pub use window::{window_session, WindowConfig, WindowedSample};

use std::path::PathBuf;

use crate::error::Result;

/// Loads and windows every session in `paths`, keeping per-session grouping.
pub fn load_windows(paths: &[PathBuf], cfg: &WindowConfig) -> Result<Vec<SessionWindows>> {
    paths
        .iter()
        .map(|p| {
            let s = load_session(p)?;
            Ok(SessionWindows {
                user_id: s.user_id.clone(),
                session_id: s.session_id.clone(),
                windows: window_session(&s, cfg)?,
            })
        })
        .collect()
}

/// The windows cut from one session.
#[derive(Clone, Debug)]
pub struct SessionWindows {
    pub user_id: String,
    pub session_id: String,
    pub windows: Vec<WindowedSample>,
}
