//! JSONL profile store. Each line is one profile revision; a user's current
//! profile is the revision with the highest number.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{NlProfile, ProfileError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StoreReport {
    pub loaded: usize,
    /// Lines that did not parse as a profile.
    pub skipped: usize,
}

/// All stored revisions, grouped by user in revision order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileSet {
    by_user: BTreeMap<String, Vec<NlProfile>>,
}

impl ProfileSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, profile: NlProfile) {
        let history = self.by_user.entry(profile.user_id.clone()).or_default();
        let pos = history.partition_point(|p| p.revision <= profile.revision);
        history.insert(pos, profile);
    }

    pub fn latest(&self, user: &str) -> Option<&NlProfile> {
        self.by_user.get(user).and_then(|h| h.last())
    }

    pub fn history(&self, user: &str) -> &[NlProfile] {
        self.by_user.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.by_user.keys().map(String::as_str)
    }

    /// Current profile text per user.
    pub fn latest_texts(&self) -> BTreeMap<String, String> {
        self.by_user
            .iter()
            .filter_map(|(u, h)| h.last().map(|p| (u.clone(), p.text.clone())))
            .collect()
    }

    pub fn latest_profiles(&self) -> impl Iterator<Item = &NlProfile> {
        self.by_user.values().filter_map(|h| h.last())
    }

    pub fn len(&self) -> usize {
        self.by_user.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_user.is_empty()
    }
}

impl FromIterator<NlProfile> for ProfileSet {
    fn from_iter<T: IntoIterator<Item = NlProfile>>(iter: T) -> Self {
        let mut set = Self::new();
        for p in iter {
            set.insert(p);
        }
        set
    }
}

fn store_err(path: &Path, e: impl ToString) -> ProfileError {
    ProfileError::Store {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `profiles` to a fresh JSONL file.
pub fn save_profiles<'a>(
    path: impl AsRef<Path>,
    profiles: impl IntoIterator<Item = &'a NlProfile>,
) -> Result<(), ProfileError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| store_err(path, e))?;
    let mut out = BufWriter::new(file);
    for p in profiles {
        serde_json::to_writer(&mut out, p).map_err(|e| store_err(path, e))?;
        out.write_all(b"\n").map_err(|e| store_err(path, e))?;
    }
    out.flush().map_err(|e| store_err(path, e))
}

/// Appends one revision, creating the file if needed.
pub fn append_profile(path: impl AsRef<Path>, profile: &NlProfile) -> Result<(), ProfileError> {
    let path = path.as_ref();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| store_err(path, e))?;
    let mut line = serde_json::to_string(profile).map_err(|e| store_err(path, e))?;
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| store_err(path, e))
}

/// Loads a store. Lines that fail to parse are skipped and counted.
pub fn load_profiles(path: impl AsRef<Path>) -> Result<(ProfileSet, StoreReport), ProfileError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| store_err(path, e))?;
    let mut set = ProfileSet::new();
    let mut report = StoreReport::default();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| store_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<NlProfile>(&line) {
            Ok(p) => {
                set.insert(p);
                report.loaded += 1;
            }
            Err(e) => {
                tracing::warn!("{}:{}: skipping profile line: {e}", path.display(), lineno + 1);
                report.skipped += 1;
            }
        }
    }
    Ok((set, report))
}
