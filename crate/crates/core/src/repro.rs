//! Reproducibility packages: configuration, seed, transcript and output
//! digests in one JSON archive that can be re-executed and checked.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ConfigSet, Documents, CREDENTIALS_DOC};
use crate::digest::{sha256_hex, ALGORITHM};
use crate::session::{Command, Session, SessionError, OUTPUTS};

pub const FORMAT: &str = "batchsim-repro/1";

/// Stands in for the account keys, which replay never needs.
pub const REDACTED_CREDENTIALS: &str = "credentials:\n  storage_key: redacted\n  batch_key: redacted\n";

#[derive(Debug, Error)]
pub enum ReproError {
    #[error("no completed run to pack")]
    NoCompletedRun,
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("archived configuration does not parse: {0}")]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproManifest {
    pub digest_algorithm: String,
    pub seed: u64,
    pub config_digests: BTreeMap<String, String>,
    pub transcript: Vec<Command>,
    pub output_digests: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archive {
    pub format: String,
    pub manifest: ReproManifest,
    pub documents: Documents,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    /// First artifact whose re-execution differs from the archive.
    Fail { artifact: String, detail: String },
}

impl Archive {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("archive serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Archive, ReproError> {
        let a: Archive = serde_json::from_str(text).map_err(|e| ReproError::CorruptArchive(e.to_string()))?;
        if a.format != FORMAT {
            return Err(ReproError::CorruptArchive(format!("unsupported format `{}`", a.format)));
        }
        if a.manifest.digest_algorithm != ALGORITHM {
            return Err(ReproError::CorruptArchive(format!("unsupported digest `{}`", a.manifest.digest_algorithm)));
        }
        Ok(a)
    }
}

/// Packs `session`, whose configuration was read from `documents`. Every
/// job must have finished. Credentials are replaced by placeholders.
pub fn pack(session: &Session, documents: &Documents) -> Result<Archive, ReproError> {
    let svc = session.service().ok_or(ReproError::NoCompletedRun)?;
    if svc.jobs().is_empty() || svc.jobs().iter().any(|j| j.state == crate::batch::JobState::Active) {
        return Err(ReproError::NoCompletedRun);
    }
    let mut documents = documents.clone();
    if documents.contains_key(CREDENTIALS_DOC) {
        documents.insert(CREDENTIALS_DOC.into(), REDACTED_CREDENTIALS.into());
    }
    let config_digests = documents.iter().map(|(k, v)| (k.clone(), sha256_hex(v.as_bytes()))).collect();
    let output_digests = session.outputs().into_iter().map(|(k, v)| (k.to_string(), sha256_hex(v.as_bytes()))).collect();
    Ok(Archive {
        format: FORMAT.to_string(),
        manifest: ReproManifest {
            digest_algorithm: ALGORITHM.to_string(),
            seed: session.seed(),
            config_digests,
            transcript: session.transcript().to_vec(),
            output_digests,
        },
        documents,
    })
}

/// Re-runs the archived transcript on a fresh simulator and compares
/// digests: configuration first, then outputs in the fixed order.
pub fn verify(archive: &Archive) -> Result<Verdict, ReproError> {
    let m = &archive.manifest;
    let names: Vec<&String> = m.config_digests.keys().chain(archive.documents.keys()).collect();
    for name in names {
        let expected = m.config_digests.get(name);
        let actual = archive.documents.get(name).map(|d| sha256_hex(d.as_bytes()));
        if expected != actual.as_ref() {
            return Ok(Verdict::Fail {
                artifact: name.clone(),
                detail: format!("config digest {} != {}", show(expected), show(actual.as_ref())),
            });
        }
    }
    let config = ConfigSet::from_documents(&archive.documents)?;
    let session = match Session::replay(config, m.seed, &m.transcript) {
        Ok(s) => s,
        Err(e) => return Ok(Verdict::Fail { artifact: "transcript".into(), detail: replay_failure(&e) }),
    };
    let outputs = session.outputs();
    for name in OUTPUTS {
        let expected = m.output_digests.get(name);
        let actual = outputs.get(name).map(|o| sha256_hex(o.as_bytes()));
        if expected != actual.as_ref() {
            return Ok(Verdict::Fail {
                artifact: name.to_string(),
                detail: format!("output digest {} != {}", show(expected), show(actual.as_ref())),
            });
        }
    }
    Ok(Verdict::Pass)
}

fn show(d: Option<&String>) -> &str {
    d.map_or("<missing>", String::as_str)
}

fn replay_failure(e: &SessionError) -> String {
    format!("replay failed: {e}")
}
