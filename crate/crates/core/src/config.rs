//! The configuration documents that drive a run.
//!
//! A configuration directory holds four YAML documents, one per concern:
//!
//! | file               | content                                          |
//! |--------------------|--------------------------------------------------|
//! | `config.yaml`      | workspace identity, data ingress, sim settings   |
//! | `credentials.yaml` | storage and batch account keys                   |
//! | `pool.yaml`        | the pool of compute nodes                        |
//! | `jobs.yaml`        | jobs and their (multi-instance) tasks            |
//!
//! An optional `catalog.yaml` adds or replaces SKUs and regions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, CatalogOverrides, PricingPlan, RegionQuota};
use crate::fabric::{FabricSettings, SimTime, Window, DEFAULT_PREEMPTION_RATE};
use crate::workloads::WorkloadSpec;

pub const CONFIG_DOC: &str = "config.yaml";
pub const CREDENTIALS_DOC: &str = "credentials.yaml";
pub const POOL_DOC: &str = "pool.yaml";
pub const JOBS_DOC: &str = "jobs.yaml";
pub const CATALOG_DOC: &str = "catalog.yaml";
pub const REQUIRED_DOCS: [&str; 4] = [CONFIG_DOC, CREDENTIALS_DOC, POOL_DOC, JOBS_DOC];

/// Raw document text keyed by file name.
pub type Documents = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing configuration document `{0}`")]
    MissingDocument(String),
    #[error("{document}: schema error at `{key}`: {message}")]
    Schema { document: String, key: String, message: String },
    #[error("cross-reference error: {0}")]
    CrossRef(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl ConfigError {
    fn cross(msg: impl Into<String>) -> Self {
        ConfigError::CrossRef(msg.into())
    }
}

/// A secret value that never appears in `Debug` or `Display` output.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Secret(String);

impl Secret {
    pub fn new(s: impl Into<String>) -> Self {
        Secret(s.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

impl fmt::Display for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("***")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceConfig {
    pub subscription: String,
    pub resource_group: String,
    pub region: String,
    pub storage_account: String,
    pub batch_account: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CredentialsConfig {
    pub storage_key: Secret,
    pub batch_key: Secret,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmCount {
    #[serde(default)]
    pub dedicated: u32,
    #[serde(default)]
    pub low_priority: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub id: String,
    pub sku: String,
    /// Defaults to the workspace region.
    #[serde(default)]
    pub region: String,
    pub vm_count: VmCount,
    #[serde(default)]
    pub inter_node_comm: bool,
    #[serde(default)]
    pub shared_filesystem: bool,
    /// Container image pulled onto every node at allocation.
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size_mib: Option<u64>,
    /// Plan used to bill dedicated nodes; low-priority nodes always bill
    /// at the low-priority rate.
    #[serde(default = "default_plan")]
    pub pricing_plan: PricingPlan,
}

fn default_plan() -> PricingPlan {
    PricingPlan::PayGoDedicated
}

/// Seconds to pull an image of `size_mib` onto a node.
pub const IMAGE_PULL_MIB_PER_SEC: u64 = 25;
/// Size assumed when the pool does not state one (120 s pull).
pub const DEFAULT_IMAGE_SIZE_MIB: u64 = 3000;

impl PoolConfig {
    pub fn node_count(&self) -> u32 {
        self.vm_count.dedicated + self.vm_count.low_priority
    }

    pub fn image_pull_secs(&self) -> u64 {
        let mib = self.image_size_mib.unwrap_or(DEFAULT_IMAGE_SIZE_MIB);
        mib.div_ceil(IMAGE_PULL_MIB_PER_SEC)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    pub workload: WorkloadSpec,
    /// Nodes the task holds simultaneously.
    #[serde(default = "one")]
    pub instances: u32,
    #[serde(default = "one")]
    pub procs_per_node: u32,
    #[serde(default)]
    pub gpus_per_node: u32,
    /// `<share>/<directory>` that must exist when the task starts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dir: Option<String>,
    /// `<share>/<directory>` receiving the task's output file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub id: String,
    pub pool_id: String,
    pub tasks: Vec<TaskSpec>,
}

/// A local directory uploaded into a share directory by `data ingress`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngressSpec {
    /// Path relative to the configuration directory.
    pub source: String,
    pub share: String,
    pub directory: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScarcityWindow {
    pub start_seconds: u64,
    pub end_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSettings {
    #[serde(default = "default_preemption_rate")]
    pub preemption_rate_per_node_hour: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub low_priority_scarcity: Vec<ScarcityWindow>,
    #[serde(default = "default_boot_latency")]
    pub boot_latency_seconds: [u64; 2],
}

fn default_preemption_rate() -> f64 {
    DEFAULT_PREEMPTION_RATE
}

fn default_boot_latency() -> [u64; 2] {
    [60, 300]
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            preemption_rate_per_node_hour: DEFAULT_PREEMPTION_RATE,
            low_priority_scarcity: Vec::new(),
            boot_latency_seconds: default_boot_latency(),
        }
    }
}

impl SimulationSettings {
    pub fn fabric(&self, seed: u64) -> FabricSettings {
        FabricSettings {
            seed,
            boot_latency_secs: (self.boot_latency_seconds[0], self.boot_latency_seconds[1]),
            preemption_rate_per_node_hour: self.preemption_rate_per_node_hour,
            low_priority_scarcity: self
                .low_priority_scarcity
                .iter()
                .map(|w| Window { start: SimTime::from_secs(w.start_seconds), end: SimTime::from_secs(w.end_seconds) })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    workspace: WorkspaceConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    data_ingress: Vec<IngressSpec>,
    #[serde(default)]
    simulation: SimulationSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CredentialsDoc {
    credentials: CredentialsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolDoc {
    pool: PoolConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JobsDoc {
    jobs: Vec<JobConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogDoc {
    catalog: CatalogOverrides,
}

/// A fully validated configuration directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSet {
    pub workspace: WorkspaceConfig,
    pub credentials: CredentialsConfig,
    pub pool: PoolConfig,
    pub jobs: Vec<JobConfig>,
    pub data_ingress: Vec<IngressSpec>,
    pub simulation: SimulationSettings,
    pub catalog_overrides: Option<CatalogOverrides>,
}

fn parse_doc<T: DeserializeOwned>(name: &str, text: &str) -> Result<T, ConfigError> {
    let de = serde_yaml::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        ConfigError::Schema { document: name.to_string(), key: schema_key(&path, &message), message }
    })
}

/// Dotted key of the offending entry. Missing fields are reported at the
/// parent path, so the field name is appended when absent.
fn schema_key(path: &str, message: &str) -> String {
    let base = if path == "." { "" } else { path };
    let field = ["missing field `", "unknown field `"]
        .iter()
        .find_map(|m| message.split_once(m))
        .and_then(|(_, rest)| rest.split('`').next());
    match (base, field) {
        ("", Some(f)) => f.to_string(),
        (b, Some(f)) if b == f || b.ends_with(&format!(".{f}")) => b.to_string(),
        (b, Some(f)) => format!("{b}.{f}"),
        (b, None) => b.to_string(),
    }
}

/// Splits `<share>/<directory...>`.
pub fn split_share_path(p: &str) -> Option<(&str, &str)> {
    let p = p.trim_matches('/');
    let (share, dir) = p.split_once('/')?;
    let dir = dir.trim_matches('/');
    if share.is_empty() || dir.is_empty() {
        None
    } else {
        Some((share, dir))
    }
}

impl ConfigSet {
    /// Reads and validates a configuration directory.
    pub fn parse_dir(dir: impl AsRef<Path>) -> Result<ConfigSet, ConfigError> {
        ConfigSet::from_documents(&read_documents(dir)?)
    }

    pub fn from_documents(docs: &Documents) -> Result<ConfigSet, ConfigError> {
        let get = |name: &str| docs.get(name).ok_or_else(|| ConfigError::MissingDocument(name.to_string()));
        let config: ConfigDoc = parse_doc(CONFIG_DOC, get(CONFIG_DOC)?)?;
        let creds: CredentialsDoc = parse_doc(CREDENTIALS_DOC, get(CREDENTIALS_DOC)?)?;
        let pool: PoolDoc = parse_doc(POOL_DOC, get(POOL_DOC)?)?;
        let jobs: JobsDoc = parse_doc(JOBS_DOC, get(JOBS_DOC)?)?;
        let catalog_overrides = match docs.get(CATALOG_DOC) {
            Some(text) => Some(parse_doc::<CatalogDoc>(CATALOG_DOC, text)?.catalog),
            None => None,
        };
        let mut set = ConfigSet {
            workspace: config.workspace,
            credentials: creds.credentials,
            pool: pool.pool,
            jobs: jobs.jobs,
            data_ingress: config.data_ingress,
            simulation: config.simulation,
            catalog_overrides,
        };
        if set.pool.region.is_empty() {
            set.pool.region = set.workspace.region.clone();
        }
        set.validate()?;
        Ok(set)
    }

    pub fn to_documents(&self) -> Documents {
        let mut docs = Documents::new();
        docs.insert(
            CONFIG_DOC.into(),
            to_yaml(&ConfigDoc {
                workspace: self.workspace.clone(),
                data_ingress: self.data_ingress.clone(),
                simulation: self.simulation.clone(),
            }),
        );
        docs.insert(CREDENTIALS_DOC.into(), to_yaml(&CredentialsDoc { credentials: self.credentials.clone() }));
        docs.insert(POOL_DOC.into(), to_yaml(&PoolDoc { pool: self.pool.clone() }));
        docs.insert(JOBS_DOC.into(), to_yaml(&JobsDoc { jobs: self.jobs.clone() }));
        if let Some(c) = &self.catalog_overrides {
            docs.insert(CATALOG_DOC.into(), to_yaml(&CatalogDoc { catalog: c.clone() }));
        }
        docs
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, text) in self.to_documents() {
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }

    /// Built-in catalog merged with this directory's overrides.
    pub fn catalog(&self) -> Result<Catalog, CatalogError> {
        match &self.catalog_overrides {
            Some(o) => Catalog::with_overrides(o),
            None => Ok(Catalog::default_catalog()),
        }
    }

    pub fn job(&self, id: &str) -> Option<&JobConfig> {
        self.jobs.iter().find(|j| j.id == id)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let catalog = self.catalog().map_err(|e| ConfigError::cross(e.to_string()))?;
        let ws = &self.workspace;
        for (k, v) in [
            ("subscription", &ws.subscription),
            ("resource_group", &ws.resource_group),
            ("region", &ws.region),
            ("storage_account", &ws.storage_account),
            ("batch_account", &ws.batch_account),
        ] {
            if v.trim().is_empty() {
                return Err(ConfigError::Schema {
                    document: CONFIG_DOC.into(),
                    key: format!("workspace.{k}"),
                    message: "must not be empty".into(),
                });
            }
        }
        catalog.region(&ws.region).map_err(|e| ConfigError::cross(format!("workspace: {e}")))?;

        let pool = &self.pool;
        if pool.id.trim().is_empty() {
            return Err(ConfigError::Schema {
                document: POOL_DOC.into(),
                key: "pool.id".into(),
                message: "must not be empty".into(),
            });
        }
        let sku = catalog.lookup(&pool.sku).map_err(|e| ConfigError::cross(format!("pool `{}`: {e}", pool.id)))?;
        catalog.region(&pool.region).map_err(|e| ConfigError::cross(format!("pool `{}`: {e}", pool.id)))?;
        if !sku.region_availability.contains(&pool.region) {
            return Err(ConfigError::cross(format!(
                "pool `{}`: SKU {} is not offered in region {}",
                pool.id, pool.sku, pool.region
            )));
        }
        if pool.node_count() == 0 {
            return Err(ConfigError::cross(format!("pool `{}`: vm_count must request at least one node", pool.id)));
        }
        if pool.inter_node_comm && !sku.rdma_capable {
            return Err(ConfigError::cross(format!(
                "pool `{}`: inter_node_comm requires an RDMA-capable SKU, {} is not",
                pool.id, pool.sku
            )));
        }
        if pool.pricing_plan == PricingPlan::PayGoLowPriority {
            return Err(ConfigError::cross(format!(
                "pool `{}`: pricing_plan applies to dedicated nodes and cannot be pay_go_low_priority",
                pool.id
            )));
        }

        let mut job_ids = BTreeSet::new();
        for job in &self.jobs {
            if !job_ids.insert(job.id.as_str()) {
                return Err(ConfigError::cross(format!("duplicate job id `{}`", job.id)));
            }
            if job.pool_id != pool.id {
                return Err(ConfigError::cross(format!(
                    "job `{}` references pool `{}`, but pool.yaml defines `{}`",
                    job.id, job.pool_id, pool.id
                )));
            }
            let mut task_ids = BTreeSet::new();
            for task in &job.tasks {
                let at = format!("job `{}` task `{}`", job.id, task.id);
                if !task_ids.insert(task.id.as_str()) {
                    return Err(ConfigError::cross(format!("{at}: duplicate task id")));
                }
                if task.instances < 1 {
                    return Err(ConfigError::cross(format!("{at}: instances must be at least 1")));
                }
                if task.procs_per_node < 1 || task.procs_per_node > sku.vcores {
                    return Err(ConfigError::cross(format!(
                        "{at}: procs_per_node {} outside 1..={} ({} vcores)",
                        task.procs_per_node, sku.vcores, pool.sku
                    )));
                }
                if task.gpus_per_node > sku.gpu_count {
                    return Err(ConfigError::cross(format!(
                        "{at}: gpus_per_node {} exceeds {} GPUs on {}",
                        task.gpus_per_node, sku.gpu_count, pool.sku
                    )));
                }
                for d in [&task.input_dir, &task.output_dir].into_iter().flatten() {
                    if split_share_path(d).is_none() {
                        return Err(ConfigError::cross(format!("{at}: `{d}` is not of the form <share>/<directory>")));
                    }
                }
                task.workload.validate().map_err(|e| ConfigError::cross(format!("{at}: {e}")))?;
            }
        }

        for (i, ing) in self.data_ingress.iter().enumerate() {
            if ing.source.trim().is_empty() || ing.share.trim().is_empty() || ing.directory.trim().is_empty() {
                return Err(ConfigError::Schema {
                    document: CONFIG_DOC.into(),
                    key: format!("data_ingress[{i}]"),
                    message: "source, share and directory must not be empty".into(),
                });
            }
            if Path::new(&ing.source).is_absolute() {
                return Err(ConfigError::cross(format!(
                    "data_ingress[{i}]: source `{}` must be relative to the configuration directory",
                    ing.source
                )));
            }
        }

        let sim = &self.simulation;
        if !(sim.preemption_rate_per_node_hour >= 0.0 && sim.preemption_rate_per_node_hour.is_finite()) {
            return Err(ConfigError::Schema {
                document: CONFIG_DOC.into(),
                key: "simulation.preemption_rate_per_node_hour".into(),
                message: "must be a finite, non-negative rate".into(),
            });
        }
        if sim.boot_latency_seconds[0] > sim.boot_latency_seconds[1] {
            return Err(ConfigError::Schema {
                document: CONFIG_DOC.into(),
                key: "simulation.boot_latency_seconds".into(),
                message: "lower bound exceeds upper bound".into(),
            });
        }
        for w in &sim.low_priority_scarcity {
            if w.start_seconds >= w.end_seconds {
                return Err(ConfigError::Schema {
                    document: CONFIG_DOC.into(),
                    key: "simulation.low_priority_scarcity".into(),
                    message: "window start must precede its end".into(),
                });
            }
        }
        Ok(())
    }
}

fn to_yaml<T: Serialize>(v: &T) -> String {
    serde_yaml::to_string(v).expect("config documents always serialize")
}

/// Reads every known document present in `dir`.
pub fn read_documents(dir: impl AsRef<Path>) -> Result<Documents, ConfigError> {
    let dir = dir.as_ref();
    let mut docs = Documents::new();
    for name in REQUIRED_DOCS.iter().chain(std::iter::once(&CATALOG_DOC)) {
        let path = dir.join(name);
        match fs::read_to_string(&path) {
            Ok(text) => {
                docs.insert(name.to_string(), text);
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                if *name != CATALOG_DOC {
                    return Err(ConfigError::MissingDocument(name.to_string()));
                }
            }
            Err(e) => return Err(ConfigError::Io { path: path.display().to_string(), source: e }),
        }
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoreClass {
    Dedicated,
    LowPriority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    /// The pool cannot be created.
    Error,
    /// Allowed, but reported.
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    UnknownSku { sku: String },
    EmptyPool,
    RdmaRequired { sku: String },
    SharedFsLowPriority { low_priority: u32 },
    QuotaExceeded { class: CoreClass, needed: u32, available: u32 },
    LowPriorityInterNode { low_priority: u32 },
}

impl Violation {
    pub fn severity(&self) -> Severity {
        match self {
            Violation::LowPriorityInterNode { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownSku { sku } => write!(f, "unknown SKU `{sku}`"),
            Violation::EmptyPool => write!(f, "pool requests no nodes"),
            Violation::RdmaRequired { sku } => {
                write!(f, "inter-node communication requires an RDMA-capable SKU; {sku} is not")
            }
            Violation::SharedFsLowPriority { low_priority } => write!(
                f,
                "a shared filesystem cannot be created on a pool with low-priority nodes ({low_priority} requested)"
            ),
            Violation::QuotaExceeded { class, needed, available } => {
                let c = match class {
                    CoreClass::Dedicated => "dedicated",
                    CoreClass::LowPriority => "low-priority",
                };
                write!(f, "{c} core quota exceeded: needed {needed}, available {available}")
            }
            Violation::LowPriorityInterNode { low_priority } => write!(
                f,
                "{low_priority} low-priority node(s) in an inter-node-communication pool may be preempted mid-run"
            ),
        }
    }
}

/// Every rule `cfg` violates against the catalog and the remaining quota.
pub fn validate_pool(cfg: &PoolConfig, catalog: &Catalog, available: &RegionQuota) -> Vec<Violation> {
    let mut out = Vec::new();
    let sku = match catalog.lookup(&cfg.sku) {
        Ok(s) => s,
        Err(_) => return vec![Violation::UnknownSku { sku: cfg.sku.clone() }],
    };
    if cfg.node_count() == 0 {
        out.push(Violation::EmptyPool);
    }
    if cfg.inter_node_comm && !sku.rdma_capable {
        out.push(Violation::RdmaRequired { sku: cfg.sku.clone() });
    }
    if cfg.shared_filesystem && cfg.vm_count.low_priority > 0 {
        out.push(Violation::SharedFsLowPriority { low_priority: cfg.vm_count.low_priority });
    }
    let dedicated = cfg.vm_count.dedicated * sku.vcores;
    if dedicated > available.dedicated_cores {
        out.push(Violation::QuotaExceeded {
            class: CoreClass::Dedicated,
            needed: dedicated,
            available: available.dedicated_cores,
        });
    }
    let low = cfg.vm_count.low_priority * sku.vcores;
    if low > available.low_priority_cores {
        out.push(Violation::QuotaExceeded {
            class: CoreClass::LowPriority,
            needed: low,
            available: available.low_priority_cores,
        });
    }
    if cfg.inter_node_comm && cfg.vm_count.low_priority > 0 {
        out.push(Violation::LowPriorityInterNode { low_priority: cfg.vm_count.low_priority });
    }
    out
}
