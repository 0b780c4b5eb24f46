//! Profile store shared by request handlers: concurrent reads, writes
//! serialized per user, optionally persisted to an append-only JSONL file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use tokio::sync::OwnedMutexGuard;

use scrutable_core::profilegen::{append_profile, load_profiles, NlProfile, ProfileError, ProfileSet, StoreReport};

#[derive(Debug, Default)]
pub struct ProfileStore {
    profiles: RwLock<ProfileSet>,
    writers: Mutex<BTreeMap<String, Arc<tokio::sync::Mutex<()>>>>,
    file: Option<Mutex<PathBuf>>,
}

impl ProfileStore {
    pub fn in_memory(profiles: ProfileSet) -> Self {
        Self {
            profiles: RwLock::new(profiles),
            ..Self::default()
        }
    }

    /// Loads `path` (an absent file is an empty store); new revisions are appended to it.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, StoreReport), ProfileError> {
        let path = path.as_ref();
        let (profiles, report) = if path.exists() {
            load_profiles(path)?
        } else {
            (ProfileSet::new(), StoreReport::default())
        };
        let store = Self {
            profiles: RwLock::new(profiles),
            writers: Mutex::default(),
            file: Some(Mutex::new(path.to_path_buf())),
        };
        Ok((store, report))
    }

    pub fn latest(&self, user: &str) -> Option<NlProfile> {
        self.read().latest(user).cloned()
    }

    pub fn history(&self, user: &str) -> Vec<NlProfile> {
        self.read().history(user).to_vec()
    }

    pub fn users(&self) -> Vec<String> {
        self.read().users().map(str::to_string).collect()
    }

    /// Waits for exclusive write access to `user`'s profile chain.
    pub async fn lock_user(&self, user: &str) -> OwnedMutexGuard<()> {
        let lock = {
            let mut writers = self.writers.lock().unwrap_or_else(|e| e.into_inner());
            writers.entry(user.to_string()).or_default().clone()
        };
        lock.lock_owned().await
    }

    /// Persists, then publishes, a new revision. Callers hold the user's lock.
    pub fn commit(&self, profile: NlProfile) -> Result<(), ProfileError> {
        if let Some(file) = &self.file {
            let path = file.lock().unwrap_or_else(|e| e.into_inner());
            append_profile(&*path, &profile)?;
        }
        self.profiles.write().unwrap_or_else(|e| e.into_inner()).insert(profile);
        Ok(())
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, ProfileSet> {
        self.profiles.read().unwrap_or_else(|e| e.into_inner())
    }
}
