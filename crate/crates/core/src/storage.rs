//! Fileshares with quota enforcement and transfer metering.
//!
//! Shares hold sizes and caller-supplied digests, never file contents.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::SimTime;

pub const GIB: u64 = 1 << 30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StorageError {
    #[error("storage account `{0}` already exists")]
    DuplicateAccount(String),
    #[error("no storage account; create one first")]
    NoAccount,
    #[error("share `{0}` already exists")]
    DuplicateShare(String),
    #[error("unknown share `{0}`")]
    UnknownShare(String),
    #[error("unknown path `{share}/{path}`")]
    UnknownPath { share: String, path: String },
    #[error("invalid path `{0}`")]
    InvalidPath(String),
    #[error("duplicate path `{0}` in manifest")]
    DuplicatePath(String),
    #[error("share `{share}` quota exceeded: needs {needed} bytes, quota {quota} bytes")]
    QuotaExceededOnShare { share: String, needed: u64, quota: u64 },
}

/// Normalizes a relative path: no empty or `.` components, no `..`.
pub fn normalize_path(p: &str) -> Result<String, StorageError> {
    let mut parts = Vec::new();
    for c in p.split('/') {
        match c {
            "" | "." => {}
            ".." => return Err(StorageError::InvalidPath(p.to_string())),
            c => parts.push(c),
        }
    }
    if parts.is_empty() {
        return Err(StorageError::InvalidPath(p.to_string()));
    }
    Ok(parts.join("/"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Ingress,
    Egress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferRecord {
    pub direction: Direction,
    pub share: String,
    pub bytes: u64,
    pub files: u64,
    pub timestamp: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileShare {
    pub name: String,
    pub quota_gib: u64,
    pub created_at: SimTime,
    entries: BTreeMap<String, FileEntry>,
    directories: BTreeSet<String>,
}

impl FileShare {
    pub fn new(name: &str, quota_gib: u64, created_at: SimTime) -> Self {
        FileShare {
            name: name.to_string(),
            quota_gib,
            created_at,
            entries: BTreeMap::new(),
            directories: BTreeSet::new(),
        }
    }

    pub fn quota_bytes(&self) -> u64 {
        self.quota_gib.saturating_mul(GIB)
    }

    pub fn used_bytes(&self) -> u64 {
        self.entries.values().map(|e| e.bytes).sum()
    }

    pub fn entries(&self) -> &BTreeMap<String, FileEntry> {
        &self.entries
    }

    pub fn has_directory(&self, dir: &str) -> bool {
        normalize_path(dir).map(|d| self.directories.contains(&d)).unwrap_or(false)
    }

    fn add_directory_chain(&mut self, dir: &str) {
        let mut acc = String::new();
        for c in dir.split('/') {
            if !acc.is_empty() {
                acc.push('/');
            }
            acc.push_str(c);
            self.directories.insert(acc.clone());
        }
    }

    /// Idempotent.
    pub fn directory_create(&mut self, dir: &str) -> Result<(), StorageError> {
        let dir = normalize_path(dir)?;
        self.add_directory_chain(&dir);
        Ok(())
    }

    /// Adds `manifest` under `dir`. Returns `None` when nothing was
    /// transferred (empty manifest or only empty files).
    pub fn ingress(
        &mut self,
        dir: &str,
        manifest: &[ManifestEntry],
        now: SimTime,
    ) -> Result<Option<TransferRecord>, StorageError> {
        let dir = normalize_path(dir)?;
        let mut staged = BTreeMap::new();
        for m in manifest {
            let path = format!("{dir}/{}", normalize_path(&m.path)?);
            if staged.insert(path.clone(), FileEntry { bytes: m.bytes, digest: m.digest.clone() }).is_some() {
                return Err(StorageError::DuplicatePath(path));
            }
        }
        let replaced: u64 = staged.keys().filter_map(|p| self.entries.get(p)).map(|e| e.bytes).sum();
        let added: u64 = staged.values().map(|e| e.bytes).sum();
        let needed = self.used_bytes() - replaced + added;
        if needed > self.quota_bytes() {
            return Err(StorageError::QuotaExceededOnShare {
                share: self.name.clone(),
                needed,
                quota: self.quota_bytes(),
            });
        }
        self.add_directory_chain(&dir);
        let files = staged.len() as u64;
        for (path, entry) in staged {
            if let Some((parent, _)) = path.rsplit_once('/') {
                self.add_directory_chain(parent);
            }
            self.entries.insert(path, entry);
        }
        Ok((added > 0).then(|| TransferRecord {
            direction: Direction::Ingress,
            share: self.name.clone(),
            bytes: added,
            files,
            timestamp: now,
        }))
    }

    /// Every entry under `dir`, with its path relative to the share root.
    pub fn download_batch(&self, dir: &str, now: SimTime) -> Result<Download, StorageError> {
        let dir = normalize_path(dir)?;
        if !self.directories.contains(&dir) {
            return Err(StorageError::UnknownPath { share: self.name.clone(), path: dir });
        }
        let prefix = format!("{dir}/");
        let files: Vec<DownloadedFile> = self
            .entries
            .range(prefix.clone()..)
            .take_while(|(p, _)| p.starts_with(&prefix))
            .map(|(p, e)| DownloadedFile { path: format!("{}/{p}", self.name), bytes: e.bytes, digest: e.digest.clone() })
            .collect();
        let bytes: u64 = files.iter().map(|f| f.bytes).sum();
        let record = (bytes > 0).then(|| TransferRecord {
            direction: Direction::Egress,
            share: self.name.clone(),
            bytes,
            files: files.len() as u64,
            timestamp: now,
        });
        Ok(Download { files, record })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DownloadedFile {
    /// `<share>/<dir>/<file>`
    pub path: String,
    pub bytes: u64,
    pub digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Download {
    pub files: Vec<DownloadedFile>,
    pub record: Option<TransferRecord>,
}

impl Download {
    /// Writes each file below `destination` as a sparse file of its
    /// recorded size.
    pub fn materialize(&self, destination: &Path) -> io::Result<()> {
        for f in &self.files {
            let path = destination.join(&f.path);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            let file = fs::File::create(&path)?;
            file.set_len(f.bytes)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StorageAccount {
    pub name: String,
    shares: BTreeMap<String, FileShare>,
    transfers: Vec<TransferRecord>,
}

impl StorageAccount {
    pub fn new(name: &str) -> Self {
        StorageAccount { name: name.to_string(), shares: BTreeMap::new(), transfers: Vec::new() }
    }

    pub fn share(&self, name: &str) -> Result<&FileShare, StorageError> {
        self.shares.get(name).ok_or_else(|| StorageError::UnknownShare(name.to_string()))
    }

    fn share_mut(&mut self, name: &str) -> Result<&mut FileShare, StorageError> {
        self.shares.get_mut(name).ok_or_else(|| StorageError::UnknownShare(name.to_string()))
    }

    pub fn shares(&self) -> impl Iterator<Item = &FileShare> {
        self.shares.values()
    }

    pub fn transfers(&self) -> &[TransferRecord] {
        &self.transfers
    }

    pub fn share_create(&mut self, name: &str, quota_gib: u64, now: SimTime) -> Result<&FileShare, StorageError> {
        if name.is_empty() || name.contains('/') {
            return Err(StorageError::InvalidPath(name.to_string()));
        }
        if self.shares.contains_key(name) {
            return Err(StorageError::DuplicateShare(name.to_string()));
        }
        Ok(self.shares.entry(name.to_string()).or_insert(FileShare::new(name, quota_gib, now)))
    }

    pub fn directory_create(&mut self, share: &str, dir: &str) -> Result<(), StorageError> {
        self.share_mut(share)?.directory_create(dir)
    }

    pub fn ingress(
        &mut self,
        share: &str,
        dir: &str,
        manifest: &[ManifestEntry],
        now: SimTime,
    ) -> Result<Option<TransferRecord>, StorageError> {
        let rec = self.share_mut(share)?.ingress(dir, manifest, now)?;
        if let Some(r) = &rec {
            self.transfers.push(r.clone());
        }
        Ok(rec)
    }

    pub fn download_batch(&mut self, share: &str, dir: &str, now: SimTime) -> Result<Download, StorageError> {
        let d = self.share(share)?.download_batch(dir, now)?;
        if let Some(r) = &d.record {
            self.transfers.push(r.clone());
        }
        Ok(d)
    }
}
