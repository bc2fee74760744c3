use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Session ids for one user, by split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSessions {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub train_users: Vec<String>,
    pub test_users: Vec<String>,
    pub sessions: BTreeMap<String, UserSessions>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Generic,
    Personalization,
}

/// Session file paths for train/val/test.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ResolvedSplits {
    pub train: Vec<PathBuf>,
    pub val: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

impl SplitManifest {
    pub fn validate(&self) -> Result<()> {
        if self.train_users.is_empty() {
            return Err(Error::EmptyManifest("no training users".into()));
        }
        if let Some(u) = self.train_users.iter().find(|u| self.test_users.contains(u)) {
            return Err(Error::InvalidConfig(format!(
                "user {u:?} is listed as both a train and a test user"
            )));
        }
        for u in self.train_users.iter().chain(&self.test_users) {
            if !self.sessions.contains_key(u) {
                return Err(Error::UnknownUser(u.clone()));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: SplitManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Resolves session ids to file paths under `root`.
    pub fn resolve(
        &self,
        root: &Path,
        mode: SplitMode,
        user_id: Option<&str>,
    ) -> Result<ResolvedSplits> {
        self.validate()?;
        let path = |u: &str, s: &str| session_path(root, u, s);
        let mut out = ResolvedSplits::default();
        match (mode, user_id) {
            (SplitMode::Generic, None) => {
                for u in &self.train_users {
                    let us = &self.sessions[u];
                    out.train.extend(us.train.iter().map(|s| path(u, s)));
                    out.val.extend(us.val.iter().map(|s| path(u, s)));
                }
                for u in &self.test_users {
                    out.test.extend(self.sessions[u].test.iter().map(|s| path(u, s)));
                }
            }
            (SplitMode::Generic, Some(_)) => {
                return Err(Error::InvalidConfig(
                    "user_id is only accepted in personalization mode".into(),
                ))
            }
            (SplitMode::Personalization, None) => {
                return Err(Error::InvalidConfig(
                    "personalization mode requires a user_id".into(),
                ))
            }
            (SplitMode::Personalization, Some(u)) => {
                if self.train_users.iter().any(|t| t == u) {
                    return Err(Error::UserInTrainSet(u.to_string()));
                }
                let us = self
                    .sessions
                    .get(u)
                    .filter(|_| self.test_users.iter().any(|t| t == u))
                    .ok_or_else(|| Error::UnknownUser(u.to_string()))?;
                out.train = us.train.iter().map(|s| path(u, s)).collect();
                out.val = us.val.iter().map(|s| path(u, s)).collect();
                out.test = us.test.iter().map(|s| path(u, s)).collect();
            }
        }
        Ok(out)
    }
}

/// `<root>/sessions/<user>/<session>.emgseq`
pub fn session_path(root: &Path, user_id: &str, session_id: &str) -> PathBuf {
    root.join("sessions")
        .join(user_id)
        .join(format!("{session_id}.emgseq"))
}

/// Loads a manifest and resolves it relative to the manifest's directory.
pub fn split_dataset(
    manifest_path: impl AsRef<Path>,
    mode: SplitMode,
    user_id: Option<&str>,
) -> Result<ResolvedSplits> {
    let manifest_path = manifest_path.as_ref();
    let manifest = SplitManifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    manifest.resolve(root, mode, user_id)
}

/// Assigns up to two test and two validation sessions, always keeping at least
/// one for training.
pub fn allocate_sessions(ids: &[String]) -> UserSessions {
    let n = ids.len();
    let test = 2.min(n.saturating_sub(1));
    let val = 2.min(n.saturating_sub(1 + test));
    let train = n - test - val;
    UserSessions {
        train: ids[..train].to_vec(),
        val: ids[train..train + val].to_vec(),
        test: ids[train + val..].to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n_train: usize, n_test: usize) -> SplitManifest {
        let mut m = SplitManifest::default();
        for i in 0..n_train + n_test {
            let u = format!("u{i:02}");
            let ids: Vec<String> = (0..6).map(|s| format!("{u}_s{s}")).collect();
            m.sessions.insert(u.clone(), allocate_sessions(&ids));
            if i < n_train {
                m.train_users.push(u);
            } else {
                m.test_users.push(u);
            }
        }
        m
    }

    #[test]
    fn generic_test_list_only_holds_held_out_users() {
        let m = manifest(10, 2);
        let r = m.resolve(Path::new("/d"), SplitMode::Generic, None).unwrap();
        assert_eq!(r.test.len(), 4);
        assert!(r
            .test
            .iter()
            .all(|p| p.to_string_lossy().contains("u10") || p.to_string_lossy().contains("u11")));
        assert_eq!(r.train.len(), 20);
        assert_eq!(r.val.len(), 20);
    }

    #[test]
    fn personalization_is_single_user() {
        let m = manifest(10, 2);
        let r = m
            .resolve(Path::new("/d"), SplitMode::Personalization, Some("u11"))
            .unwrap();
        for p in r.train.iter().chain(&r.val).chain(&r.test) {
            assert!(p.to_string_lossy().contains("/u11/"));
        }
        assert_eq!((r.train.len(), r.val.len(), r.test.len()), (2, 2, 2));
    }

    #[test]
    fn error_paths() {
        let m = manifest(10, 2);
        let root = Path::new("/d");
        assert!(matches!(
            m.resolve(root, SplitMode::Personalization, Some("u03")),
            Err(Error::UserInTrainSet(_))
        ));
        assert!(matches!(
            m.resolve(root, SplitMode::Personalization, Some("nobody")),
            Err(Error::UnknownUser(_))
        ));
        assert!(m.resolve(root, SplitMode::Personalization, None).is_err());
        let empty = manifest(0, 2);
        assert!(matches!(
            empty.resolve(root, SplitMode::Generic, None),
            Err(Error::EmptyManifest(_))
        ));
    }

    #[test]
    fn allocation_keeps_a_training_session() {
        let ids = |n: usize| (0..n).map(|i| i.to_string()).collect::<Vec<_>>();
        let a = allocate_sessions(&ids(6));
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (2, 2, 2));
        let a = allocate_sessions(&ids(1));
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (1, 0, 0));
        let a = allocate_sessions(&ids(3));
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (1, 0, 2));
    }
}
