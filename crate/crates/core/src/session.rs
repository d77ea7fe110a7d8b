//! Command transcripts and their replay against a fresh service.
//!
//! A session is a configuration set, a seed and the ordered commands applied
//! so far. Applying a command either succeeds and is appended to the
//! transcript, or fails and leaves every piece of state as it was, so a
//! transcript can always be replayed to the same outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::batch::{BatchError, Service};
use crate::catalog::CatalogError;
use crate::config::{ConfigError, ConfigSet};
use crate::digest::sha256_reader;
use crate::storage::{Download, ManifestEntry};

pub const LEDGER_OUTPUT: &str = "ledger.tsv";
pub const EVENTS_OUTPUT: &str = "events.log";
pub const STATUS_OUTPUT: &str = "status.json";

/// Outputs in the order they are compared.
pub const OUTPUTS: [&str; 3] = [LEDGER_OUTPUT, EVENTS_OUTPUT, STATUS_OUTPUT];

/// Files uploaded into one share directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngressBatch {
    pub share: String,
    pub directory: String,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    WorkspaceInit,
    StorageAccountCreate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    ShareCreate {
        name: String,
        quota_gib: u64,
    },
    DirectoryCreate {
        share: String,
        name: String,
    },
    QuotaSet {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        region: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dedicated_cores: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        low_priority_cores: Option<u32>,
    },
    PoolAdd,
    DataIngress {
        batches: Vec<IngressBatch>,
    },
    JobsAdd {
        wait: bool,
        #[serde(default)]
        retries: u32,
    },
    Wait,
    JobsDel {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        job_id: Option<String>,
    },
    PoolDel {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool_id: Option<String>,
    },
    DataDownload {
        share: String,
        directory: String,
    },
    /// Preempts a low-priority node immediately.
    NodePreempt {
        node_id: String,
    },
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("no workspace: run `workspace init` first")]
    MissingWorkspace,
    #[error("workspace already initialized")]
    WorkspaceExists,
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

impl SessionError {
    /// 2 for invalid requests, 3 when the simulation itself failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            SessionError::Batch(e) if !e.is_validation() => 3,
            _ => 2,
        }
    }
}

/// What a successful command reports.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub message: String,
    pub warnings: Vec<String>,
    pub download: Option<Download>,
}

impl Outcome {
    fn msg(message: impl Into<String>) -> Self {
        Outcome { message: message.into(), ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    config: ConfigSet,
    seed: u64,
    service: Option<Service>,
    transcript: Vec<Command>,
}

impl Session {
    pub fn new(config: ConfigSet, seed: u64) -> Self {
        Session { config, seed, service: None, transcript: Vec::new() }
    }

    /// Applies `transcript` to a fresh session.
    pub fn replay(config: ConfigSet, seed: u64, transcript: &[Command]) -> Result<Session, SessionError> {
        let mut s = Session::new(config, seed);
        for c in transcript {
            s.apply(c.clone())?;
        }
        Ok(s)
    }

    pub fn config(&self) -> &ConfigSet {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn transcript(&self) -> &[Command] {
        &self.transcript
    }

    pub fn service(&self) -> Option<&Service> {
        self.service.as_ref()
    }

    /// Runs one command. On error nothing changes.
    pub fn apply(&mut self, command: Command) -> Result<Outcome, SessionError> {
        let mut next = match (&self.service, &command) {
            (None, Command::WorkspaceInit) => {
                let catalog = self.config.catalog()?;
                Service::new(catalog, self.config.simulation.fabric(self.seed))
            }
            (Some(_), Command::WorkspaceInit) => return Err(SessionError::WorkspaceExists),
            (None, _) => return Err(SessionError::MissingWorkspace),
            (Some(s), _) => s.clone(),
        };
        let outcome = run(&self.config, &mut next, &command)?;
        self.service = Some(next);
        self.transcript.push(command);
        Ok(outcome)
    }

    /// Rendered outputs keyed by file name.
    pub fn outputs(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        if let Some(s) = &self.service {
            m.insert(LEDGER_OUTPUT, s.ledger_snapshot().to_tsv());
            m.insert(EVENTS_OUTPUT, s.event_log_tsv());
            m.insert(STATUS_OUTPUT, serde_json::to_string_pretty(&s.status()).expect("status serializes") + "\n");
        }
        m
    }
}

fn run(config: &ConfigSet, svc: &mut Service, command: &Command) -> Result<Outcome, SessionError> {
    Ok(match command {
        Command::WorkspaceInit => Outcome::msg(format!(
            "workspace {} initialized in {}",
            config.workspace.batch_account, config.workspace.region
        )),
        Command::StorageAccountCreate { name } => {
            let name = name.clone().unwrap_or_else(|| config.workspace.storage_account.clone());
            svc.storage_account_create(&name)?;
            Outcome::msg(format!("storage account {name} created"))
        }
        Command::ShareCreate { name, quota_gib } => {
            svc.share_create(name, *quota_gib)?;
            Outcome::msg(format!("share {name} created with quota {quota_gib} GiB"))
        }
        Command::DirectoryCreate { share, name } => {
            svc.directory_create(share, name)?;
            Outcome::msg(format!("directory {share}/{name} created"))
        }
        Command::QuotaSet { region, dedicated_cores, low_priority_cores } => {
            let region = region.clone().unwrap_or_else(|| config.workspace.region.clone());
            let q = svc.quota_set(&region, *dedicated_cores, *low_priority_cores)?;
            Outcome::msg(format!(
                "quota for {region}: {} dedicated cores, {} low-priority cores",
                q.dedicated_cores, q.low_priority_cores
            ))
        }
        Command::PoolAdd => {
            let warnings = svc.pool_add(&config.pool)?;
            Outcome {
                message: format!("pool {} allocating", config.pool.id),
                warnings: warnings.iter().map(|w| w.to_string()).collect(),
                download: None,
            }
        }
        Command::DataIngress { batches } => {
            let mut bytes = 0;
            let mut files = 0;
            for b in batches {
                svc.data_ingress(&b.share, &b.directory, &b.files)?;
                bytes += b.files.iter().map(|f| f.bytes).sum::<u64>();
                files += b.files.len();
            }
            Outcome::msg(format!("ingressed {files} files, {bytes} bytes"))
        }
        Command::JobsAdd { wait, retries } => {
            for j in &config.jobs {
                svc.jobs_add(j, *retries)?;
            }
            if *wait {
                svc.wait()?;
            }
            Outcome::msg(format!("{} job(s) submitted", config.jobs.len()))
        }
        Command::Wait => {
            svc.wait()?;
            Outcome::msg(format!("idle at t={}s", svc.now()))
        }
        Command::JobsDel { job_id } => {
            let ids: Vec<String> = match job_id {
                Some(id) => vec![id.clone()],
                None => config.jobs.iter().map(|j| j.id.clone()).collect(),
            };
            for id in &ids {
                svc.jobs_del(id)?;
            }
            Outcome::msg(format!("deleted job(s) {}", ids.join(", ")))
        }
        Command::PoolDel { pool_id } => {
            let id = pool_id.clone().unwrap_or_else(|| config.pool.id.clone());
            svc.pool_del(&id)?;
            Outcome::msg(format!("pool {id} deleted"))
        }
        Command::DataDownload { share, directory } => {
            let d = svc.data_download(share, directory)?;
            let bytes: u64 = d.files.iter().map(|f| f.bytes).sum();
            Outcome {
                message: format!("downloaded {} files, {bytes} bytes", d.files.len()),
                warnings: Vec::new(),
                download: Some(d),
            }
        }
        Command::NodePreempt { node_id } => {
            svc.preempt_node(node_id)?;
            Outcome::msg(format!("node {node_id} preempted"))
        }
    })
}

/// Builds ingress batches from the configuration's `data_ingress`
/// entries, reading and hashing every file below each source directory.
pub fn ingress_batches(config: &ConfigSet, configdir: &Path) -> Result<Vec<IngressBatch>, ConfigError> {
    let mut out = Vec::new();
    for spec in &config.data_ingress {
        let root = configdir.join(&spec.source);
        let io = |e: std::io::Error| ConfigError::Io { path: root.display().to_string(), source: e };
        if !root.is_dir() {
            return Err(io(std::io::Error::new(std::io::ErrorKind::NotFound, "ingress source is not a directory")));
        }
        let mut files = Vec::new();
        for entry in WalkDir::new(&root).sort_by_file_name() {
            let entry = entry.map_err(|e| io(e.into()))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(&root).expect("walk stays below root");
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            let file = std::fs::File::open(entry.path()).map_err(io)?;
            let bytes = file.metadata().map_err(io)?.len();
            let digest = sha256_reader(file).map_err(io)?;
            files.push(ManifestEntry { path, bytes, digest: Some(digest) });
        }
        out.push(IngressBatch { share: spec.share.clone(), directory: spec.directory.clone(), files });
    }
    Ok(out)
}
