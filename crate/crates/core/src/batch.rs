//! The batch service: pools, jobs, gang scheduling and failure handling.
//!
//! Everything happens inside one discrete-event loop. Pools provision nodes
//! through the fabric, nodes boot, pull the container image and go Idle.
//! A pool is Steady once every dedicated node is Idle. A node is billable
//! from the instant it is Idle in a Steady pool until it is released.
//!
//! Tasks are scheduled strictly first-in first-out per pool, in job
//! submission order and then task order. The head task starts only when
//! `instances` nodes are Idle at the same instant; nothing behind it may
//! overtake it.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::billing::{self, BillingRates, LineItem, Ledger, ServiceCategory, VmUsage};
use crate::catalog::{Catalog, CatalogError, PricingPlan, QuotaTable, RegionQuota};
use crate::config::{split_share_path, validate_pool, CoreClass, JobConfig, PoolConfig, Severity, TaskSpec, Violation};
use crate::digest::sha256_hex;
use crate::fabric::{
    FabricError, FabricSettings, InterconnectModel, Node, NodeState, Priority, ProvisionRequest, SimClock, SimDuration,
    SimTime, Window,
};
use crate::par::Execution;
use crate::storage::{Download, ManifestEntry, StorageAccount, StorageError, TransferRecord, Direction};
use crate::workloads::{ExecContext, WorkloadSummary};

/// Guard against configurations that never quiesce.
pub const MAX_EVENTS_PER_RUN: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatchError {
    #[error("unknown SKU `{0}`")]
    UnknownSku(String),
    #[error("pool requests no nodes")]
    EmptyPool,
    #[error("{class} core quota exceeded: needed {needed}, available {available}", class = class_name(*.class))]
    QuotaExceeded { class: CoreClass, needed: u32, available: u32 },
    #[error("a shared filesystem cannot be created on a pool with low-priority nodes ({low_priority} requested)")]
    SharedFsLowPriority { low_priority: u32 },
    #[error("inter-node communication requires an RDMA-capable SKU; {sku} is not")]
    RdmaRequired { sku: String },
    #[error("pool `{0}` already exists")]
    DuplicatePool(String),
    #[error("unknown pool `{0}`")]
    UnknownPool(String),
    #[error("pool `{pool}` is {state} and cannot accept jobs")]
    PoolNotUsable { pool: String, state: PoolState },
    #[error("job `{0}` already exists")]
    DuplicateJob(String),
    #[error("unknown job `{0}`")]
    UnknownJob(String),
    #[error("task `{task}` needs {instances} nodes but pool `{pool}` has {nodes}")]
    TaskTooWide { task: String, pool: String, instances: u32, nodes: u32 },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error("simulation did not settle within {0} events")]
    Runaway(u64),
}

fn class_name(c: CoreClass) -> &'static str {
    match c {
        CoreClass::Dedicated => "dedicated",
        CoreClass::LowPriority => "low-priority",
    }
}

impl BatchError {
    /// True when the request itself was invalid, as opposed to the
    /// simulation failing while carrying it out.
    pub fn is_validation(&self) -> bool {
        !matches!(self, BatchError::Fabric(_) | BatchError::Runaway(_))
    }

    fn from_violation(v: Violation) -> BatchError {
        match v {
            Violation::UnknownSku { sku } => BatchError::UnknownSku(sku),
            Violation::EmptyPool => BatchError::EmptyPool,
            Violation::RdmaRequired { sku } => BatchError::RdmaRequired { sku },
            Violation::SharedFsLowPriority { low_priority } => BatchError::SharedFsLowPriority { low_priority },
            Violation::QuotaExceeded { class, needed, available } => BatchError::QuotaExceeded { class, needed, available },
            Violation::LowPriorityInterNode { .. } => unreachable!("warnings are not errors"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PoolState {
    Allocating,
    Steady,
    Resizing,
    Deleting,
    Deleted,
}

impl fmt::Display for PoolState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum FailureReason {
    NodePreempted,
    PoolDeleted,
    JobDeleted,
    InputMissing,
    OutputRejected(String),
    Workload(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "state", content = "failure")]
pub enum TaskState {
    Pending,
    Staging,
    Running,
    Completed,
    Failed(FailureReason),
}

impl TaskState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskState::Completed | TaskState::Failed(_))
    }

    fn label(&self) -> String {
        match self {
            TaskState::Failed(r) => format!("Failed({})", serde_json::to_value(r).unwrap()["reason"].as_str().unwrap_or("")),
            other => format!("{other:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum JobState {
    Active,
    Completed,
    Deleted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub spec: TaskSpec,
    pub state: TaskState,
    pub assigned_nodes: Vec<String>,
    pub start_time: Option<SimTime>,
    pub end_time: Option<SimTime>,
    /// Starts so far, including retried ones.
    pub attempts: u32,
    pub summary: Option<WorkloadSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub job_id: String,
    pub pool_id: String,
    pub tasks: Vec<Task>,
    pub state: JobState,
    pub max_retries: u32,
    pub submitted_at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolNode {
    pub node: Node,
    /// Start of the billing meter.
    pub ready_at: Option<SimTime>,
    pub released_at: Option<SimTime>,
    assigned: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub config: PoolConfig,
    pub state: PoolState,
    pub nodes: Vec<PoolNode>,
    pub shared_fs_mounted: bool,
    pub created_at: SimTime,
    pub steady_at: Option<SimTime>,
    pub deleted_at: Option<SimTime>,
    serial: u64,
    replacements: u32,
    interconnect: InterconnectModel,
}

impl Pool {
    fn node_mut(&mut self, id: &str) -> Option<&mut PoolNode> {
        self.nodes.iter_mut().find(|n| n.node.node_id == id)
    }

    fn plan_for(&self, priority: Priority) -> PricingPlan {
        match priority {
            Priority::Dedicated => self.config.pricing_plan,
            Priority::LowPriority => PricingPlan::PayGoLowPriority,
        }
    }
}

/// One node held by one task attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub node_id: String,
    pub job_id: String,
    pub task_id: String,
    pub attempt: u32,
    pub start: SimTime,
    pub end: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogRecord {
    pub time: SimTime,
    pub entity: String,
    pub transition: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Event {
    NodeBooted { serial: u64, node: String },
    ImagePulled { serial: u64, node: String },
    NodePreempted { serial: u64, node: String },
    ReplaceNode { serial: u64 },
    TaskFinished { job: usize, task: usize, attempt: u32, output_bytes: u64 },
}

#[derive(Debug, Clone)]
pub struct Service {
    catalog: Catalog,
    quotas: QuotaTable,
    fabric: FabricSettings,
    rates: BillingRates,
    exec: Execution,
    clock: SimClock<Event>,
    pools: BTreeMap<String, Pool>,
    retired: Vec<Pool>,
    jobs: Vec<Job>,
    storage: Option<StorageAccount>,
    ledger: Ledger,
    log: Vec<LogRecord>,
    assignments: Vec<Assignment>,
    next_serial: u64,
    events_processed: u64,
}

impl Service {
    pub fn new(catalog: Catalog, fabric: FabricSettings) -> Self {
        Service {
            quotas: QuotaTable::new(&catalog),
            catalog,
            fabric,
            rates: BillingRates::default(),
            exec: Execution::default(),
            clock: SimClock::new(),
            pools: BTreeMap::new(),
            retired: Vec::new(),
            jobs: Vec::new(),
            storage: None,
            ledger: Ledger::new(),
            log: Vec::new(),
            assignments: Vec::new(),
            next_serial: 0,
            events_processed: 0,
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn pool(&self, id: &str) -> Option<&Pool> {
        self.pools.get(id)
    }

    /// Live pools, then deleted ones in deletion order.
    pub fn all_pools(&self) -> impl Iterator<Item = &Pool> {
        self.pools.values().chain(self.retired.iter())
    }

    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    pub fn job(&self, id: &str) -> Option<&Job> {
        self.jobs.iter().rev().find(|j| j.job_id == id)
    }

    pub fn storage(&self) -> Option<&StorageAccount> {
        self.storage.as_ref()
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    pub fn quota(&self, region: &str) -> RegionQuota {
        self.quotas.get(region)
    }

    fn record(&mut self, entity: impl Into<String>, transition: impl Into<String>) {
        self.log.push(LogRecord { time: self.clock.now(), entity: entity.into(), transition: transition.into() });
    }

    /// `time<TAB>entity<TAB>transition`, one line per record.
    pub fn event_log_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&format!("{}\t{}\t{}\n", r.time, r.entity, r.transition));
        }
        out
    }

    // ---- quota -------------------------------------------------------

    pub fn quota_set(
        &mut self,
        region: &str,
        dedicated_cores: Option<u32>,
        low_priority_cores: Option<u32>,
    ) -> Result<RegionQuota, BatchError> {
        self.quotas.set(&self.catalog, region, dedicated_cores, low_priority_cores)?;
        let q = self.quotas.get(region);
        self.record(
            format!("quota/{region}"),
            format!("dedicated={} low_priority={}", q.dedicated_cores, q.low_priority_cores),
        );
        Ok(q)
    }

    /// Quota minus cores held by live pools in `region`.
    pub fn available_quota(&self, region: &str) -> RegionQuota {
        let mut q = self.quotas.get(region);
        for p in self.pools.values().filter(|p| p.config.region == region) {
            let vcores = self.catalog.lookup(&p.config.sku).map(|s| s.vcores).unwrap_or(0);
            q.dedicated_cores = q.dedicated_cores.saturating_sub(p.config.vm_count.dedicated * vcores);
            q.low_priority_cores = q.low_priority_cores.saturating_sub(p.config.vm_count.low_priority * vcores);
        }
        q
    }

    // ---- storage -----------------------------------------------------

    pub fn storage_account_create(&mut self, name: &str) -> Result<(), BatchError> {
        if let Some(a) = &self.storage {
            return Err(StorageError::DuplicateAccount(a.name.clone()).into());
        }
        self.storage = Some(StorageAccount::new(name));
        self.record(format!("storage/{name}"), "created");
        Ok(())
    }

    fn account_mut(&mut self) -> Result<&mut StorageAccount, BatchError> {
        self.storage.as_mut().ok_or(BatchError::Storage(StorageError::NoAccount))
    }

    pub fn share_create(&mut self, name: &str, quota_gib: u64) -> Result<(), BatchError> {
        let now = self.now();
        self.account_mut()?.share_create(name, quota_gib, now)?;
        self.record(format!("share/{name}"), format!("created quota={quota_gib}GiB"));
        Ok(())
    }

    pub fn directory_create(&mut self, share: &str, dir: &str) -> Result<(), BatchError> {
        self.account_mut()?.directory_create(share, dir)?;
        self.record(format!("share/{share}"), format!("mkdir {dir}"));
        Ok(())
    }

    pub fn data_ingress(&mut self, share: &str, dir: &str, manifest: &[ManifestEntry]) -> Result<Option<TransferRecord>, BatchError> {
        let now = self.now();
        let rec = self.account_mut()?.ingress(share, dir, manifest, now)?;
        self.record(format!("share/{share}"), format!("ingress {dir} files={}", manifest.len()));
        if let Some(r) = &rec {
            self.bill_transfer(r);
        }
        Ok(rec)
    }

    pub fn data_download(&mut self, share: &str, dir: &str) -> Result<Download, BatchError> {
        let now = self.now();
        let d = self.account_mut()?.download_batch(share, dir, now)?;
        self.record(format!("share/{share}"), format!("download {dir} files={}", d.files.len()));
        if let Some(r) = &d.record {
            self.bill_transfer(r);
        }
        Ok(d)
    }

    fn bill_transfer(&mut self, r: &TransferRecord) {
        let (usd, what) = match r.direction {
            Direction::Ingress => (self.rates.ingress(r.bytes), "ingress"),
            Direction::Egress => (self.rates.egress(r.bytes), "egress"),
        };
        let at = Some(Window { start: r.timestamp, end: r.timestamp });
        if !usd.is_zero() {
            self.ledger.append(LineItem {
                category: ServiceCategory::Bandwidth,
                usd,
                description: format!("{what} {} bytes share={}", r.bytes, r.share),
                interval: at,
                vm: None,
            });
        }
        self.ledger.append(LineItem {
            category: ServiceCategory::DataManagement,
            usd: self.rates.data_ops(r.files),
            description: format!("{what} {} operations share={}", r.files, r.share),
            interval: at,
            vm: None,
        });
    }

    // ---- pools -------------------------------------------------------

    /// Every rule `cfg` breaks against the catalog and remaining quota.
    pub fn check_pool(&self, cfg: &PoolConfig) -> Vec<Violation> {
        validate_pool(cfg, &self.catalog, &self.available_quota(&cfg.region))
    }

    /// Creates a pool and starts provisioning. Returns warnings.
    pub fn pool_add(&mut self, cfg: &PoolConfig) -> Result<Vec<Violation>, BatchError> {
        if self.pools.contains_key(&cfg.id) {
            return Err(BatchError::DuplicatePool(cfg.id.clone()));
        }
        let (errors, warnings): (Vec<_>, Vec<_>) =
            self.check_pool(cfg).into_iter().partition(|v| v.severity() == Severity::Error);
        if let Some(v) = errors.into_iter().next() {
            return Err(BatchError::from_violation(v));
        }
        let region = self.catalog.region(&cfg.region)?;
        let interconnect = InterconnectModel::by_name(&region.interconnect).unwrap_or_else(InterconnectModel::azure);
        let serial = self.next_serial;
        let request = ProvisionRequest {
            pool_id: cfg.id.clone(),
            sku: cfg.sku.clone(),
            dedicated: cfg.vm_count.dedicated,
            low_priority: cfg.vm_count.low_priority,
        };
        let nodes = self
            .fabric
            .provision(&mut self.clock, &request, |id| Event::NodeBooted { serial, node: id.to_string() })?;
        self.next_serial += 1;
        let now = self.now();
        let pool = Pool {
            config: cfg.clone(),
            state: PoolState::Allocating,
            nodes: nodes.into_iter().map(|node| PoolNode { node, ready_at: None, released_at: None, assigned: None }).collect(),
            shared_fs_mounted: false,
            created_at: now,
            steady_at: None,
            deleted_at: None,
            serial,
            replacements: 0,
            interconnect,
        };
        self.record(format!("pool/{}", cfg.id), "->Allocating");
        for n in &pool.nodes {
            let rec = LogRecord { time: now, entity: format!("node/{}", n.node.node_id), transition: "->Starting".into() };
            self.log.push(rec);
        }
        for w in &warnings {
            self.record(format!("pool/{}", cfg.id), format!("warning: {w}"));
        }
        self.pools.insert(cfg.id.clone(), pool);
        self.maybe_steady(&cfg.id);
        Ok(warnings)
    }

    fn maybe_steady(&mut self, pool_id: &str) {
        let now = self.now();
        let Some(pool) = self.pools.get_mut(pool_id) else { return };
        if pool.state != PoolState::Allocating {
            return;
        }
        let all_ready = pool
            .nodes
            .iter()
            .filter(|n| n.node.priority == Priority::Dedicated)
            .all(|n| matches!(n.node.state, NodeState::Idle | NodeState::Running));
        if !all_ready {
            return;
        }
        pool.state = PoolState::Steady;
        pool.steady_at = Some(now);
        pool.shared_fs_mounted = pool.config.shared_filesystem;
        let mounted = pool.shared_fs_mounted;
        let idle: Vec<String> = pool
            .nodes
            .iter()
            .filter(|n| n.node.state == NodeState::Idle && n.ready_at.is_none())
            .map(|n| n.node.node_id.clone())
            .collect();
        self.record(format!("pool/{pool_id}"), "Allocating->Steady");
        if mounted {
            self.record(format!("pool/{pool_id}"), "shared_fs mounted");
        }
        for id in idle {
            self.node_ready(pool_id, &id);
        }
    }

    /// Opens the node's meter and arms its preemption clock.
    fn node_ready(&mut self, pool_id: &str, node_id: &str) {
        let now = self.now();
        let process = self.fabric.preemption();
        let pool = self.pools.get_mut(pool_id).expect("live pool");
        let serial = pool.serial;
        let n = pool.node_mut(node_id).expect("pool node");
        n.ready_at = Some(now);
        if n.node.priority == Priority::LowPriority {
            if let Some(d) = process.time_to_preemption(node_id, serial as u32) {
                self.clock.schedule_in(d, Event::NodePreempted { serial, node: node_id.to_string() });
            }
        }
    }

    /// Closes the node's meter, appending its VM and networking charges.
    fn close_meter(&mut self, pool_id: &str, node_id: &str, why: &str) {
        let now = self.now();
        let pool = self.pools.get_mut(pool_id).expect("live pool");
        let inter_node = pool.config.inter_node_comm;
        let n = pool.nodes.iter().find(|n| n.node.node_id == node_id).expect("pool node");
        let plan = pool.plan_for(n.node.priority);
        let n = pool.node_mut(node_id).expect("pool node");
        n.released_at = Some(now);
        let Some(start) = n.ready_at else { return };
        let sku = n.node.sku.clone();
        self.append_vm(&sku, plan, node_id, start, now, inter_node, why);
    }

    #[allow(clippy::too_many_arguments)]
    fn append_vm_to(
        ledger: &mut Ledger,
        catalog: &Catalog,
        rates: &BillingRates,
        sku: &str,
        plan: PricingPlan,
        node_id: &str,
        start: SimTime,
        end: SimTime,
        inter_node: bool,
        why: &str,
    ) {
        let duration = end - start;
        let usd = billing::meter_vm(catalog, sku, plan, duration).expect("pool SKU is in the catalog");
        ledger.append(LineItem {
            category: ServiceCategory::VirtualMachines,
            usd,
            description: format!("{node_id} {sku} {plan} {duration}s {why}"),
            interval: billing::span(start, end),
            vm: Some(VmUsage { sku: sku.to_string(), plan, node_id: node_id.to_string(), duration }),
        });
        if inter_node {
            ledger.append(LineItem {
                category: ServiceCategory::Networking,
                usd: rates.networking(duration),
                description: format!("{node_id} inter-node {duration}s"),
                interval: billing::span(start, end),
                vm: None,
            });
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn append_vm(&mut self, sku: &str, plan: PricingPlan, node_id: &str, start: SimTime, end: SimTime, inter_node: bool, why: &str) {
        Self::append_vm_to(&mut self.ledger, &self.catalog, &self.rates, sku, plan, node_id, start, end, inter_node, why);
    }

    fn set_node_state(&mut self, pool_id: &str, node_id: &str, to: NodeState) {
        let pool = self.pools.get_mut(pool_id).expect("live pool");
        let n = pool.node_mut(node_id).expect("pool node");
        let from = n.node.state;
        n.node.transition(to).expect("scheduler only requests legal transitions");
        self.record(format!("node/{node_id}"), format!("{}->{}", from.as_str(), to.as_str()));
    }

    pub fn pool_del(&mut self, pool_id: &str) -> Result<(), BatchError> {
        let state = self.pools.get(pool_id).ok_or_else(|| BatchError::UnknownPool(pool_id.to_string()))?.state;
        self.pools.get_mut(pool_id).unwrap().state = PoolState::Deleting;
        self.record(format!("pool/{pool_id}"), format!("{state}->Deleting"));
        for j in 0..self.jobs.len() {
            if self.jobs[j].pool_id != pool_id || self.jobs[j].state != JobState::Active {
                continue;
            }
            for t in 0..self.jobs[j].tasks.len() {
                if !self.jobs[j].tasks[t].state.is_terminal() {
                    self.fail_task(j, t, FailureReason::PoolDeleted, false);
                }
            }
        }
        let ids: Vec<(String, NodeState)> = self.pools[pool_id].nodes.iter().map(|n| (n.node.node_id.clone(), n.node.state)).collect();
        for (id, st) in ids {
            if matches!(st, NodeState::Unusable | NodeState::Preempted) {
                continue;
            }
            self.close_meter(pool_id, &id, "released");
            self.set_node_state(pool_id, &id, NodeState::Unusable);
        }
        let now = self.now();
        let mut pool = self.pools.remove(pool_id).unwrap();
        pool.state = PoolState::Deleted;
        pool.shared_fs_mounted = false;
        pool.deleted_at = Some(now);
        self.retired.push(pool);
        self.record(format!("pool/{pool_id}"), "Deleting->Deleted");
        Ok(())
    }

    /// Preempts a low-priority node now, as the platform might at any time.
    pub fn preempt_node(&mut self, node_id: &str) -> Result<(), BatchError> {
        let pool_id = self
            .pools
            .values()
            .find(|p| p.nodes.iter().any(|n| n.node.node_id == node_id))
            .map(|p| p.config.id.clone())
            .ok_or_else(|| BatchError::UnknownNode(node_id.to_string()))?;
        self.handle_preemption(&pool_id, node_id);
        self.run_ready()?;
        Ok(())
    }

    // ---- jobs --------------------------------------------------------

    pub fn jobs_add(&mut self, job: &JobConfig, max_retries: u32) -> Result<(), BatchError> {
        let pool = match self.pools.get(&job.pool_id) {
            Some(p) => p,
            None => return Err(BatchError::UnknownPool(job.pool_id.clone())),
        };
        if matches!(pool.state, PoolState::Deleting | PoolState::Deleted) {
            return Err(BatchError::PoolNotUsable { pool: job.pool_id.clone(), state: pool.state });
        }
        if self.jobs.iter().any(|j| j.job_id == job.id && j.state != JobState::Deleted) {
            return Err(BatchError::DuplicateJob(job.id.clone()));
        }
        let nodes = pool.config.node_count();
        if let Some(t) = job.tasks.iter().find(|t| t.instances > nodes) {
            return Err(BatchError::TaskTooWide {
                task: t.id.clone(),
                pool: job.pool_id.clone(),
                instances: t.instances,
                nodes,
            });
        }
        let now = self.now();
        let tasks = job
            .tasks
            .iter()
            .map(|spec| Task {
                spec: spec.clone(),
                state: TaskState::Pending,
                assigned_nodes: Vec::new(),
                start_time: None,
                end_time: None,
                attempts: 0,
                summary: None,
            })
            .collect();
        self.jobs.push(Job {
            job_id: job.id.clone(),
            pool_id: job.pool_id.clone(),
            tasks,
            state: JobState::Active,
            max_retries,
            submitted_at: now,
        });
        self.record(format!("job/{}", job.id), "->Active");
        for t in &job.tasks {
            self.record(format!("task/{}/{}", job.id, t.id), "->Pending");
        }
        let j = self.jobs.len() - 1;
        self.check_job_complete(j);
        self.schedule_pool(&job.pool_id);
        Ok(())
    }

    pub fn jobs_del(&mut self, job_id: &str) -> Result<(), BatchError> {
        let j = self
            .jobs
            .iter()
            .rposition(|j| j.job_id == job_id && j.state != JobState::Deleted)
            .ok_or_else(|| BatchError::UnknownJob(job_id.to_string()))?;
        for t in 0..self.jobs[j].tasks.len() {
            if !self.jobs[j].tasks[t].state.is_terminal() {
                self.fail_task(j, t, FailureReason::JobDeleted, false);
            }
        }
        let from = self.jobs[j].state;
        self.jobs[j].state = JobState::Deleted;
        self.record(format!("job/{job_id}"), format!("{from:?}->Deleted"));
        let pool = self.jobs[j].pool_id.clone();
        self.schedule_pool(&pool);
        Ok(())
    }

    fn check_job_complete(&mut self, j: usize) {
        let job = &mut self.jobs[j];
        if job.state == JobState::Active && job.tasks.iter().all(|t| t.state.is_terminal()) {
            job.state = JobState::Completed;
            let id = job.job_id.clone();
            self.record(format!("job/{id}"), "Active->Completed");
        }
    }

    fn set_task_state(&mut self, j: usize, t: usize, to: TaskState) {
        let task = &mut self.jobs[j].tasks[t];
        let from = task.state.label();
        assert!(!task.state.is_terminal(), "terminal task states are absorbing");
        let label = to.label();
        task.state = to;
        let entity = format!("task/{}/{}", self.jobs[j].job_id, self.jobs[j].tasks[t].spec.id);
        self.record(entity, format!("{from}->{label}"));
    }

    /// Frees the task's nodes, then fails it or puts it back in the queue.
    fn fail_task(&mut self, j: usize, t: usize, reason: FailureReason, retryable: bool) {
        let now = self.now();
        let nodes = std::mem::take(&mut self.jobs[j].tasks[t].assigned_nodes);
        let pool_id = self.jobs[j].pool_id.clone();
        let attempt = self.jobs[j].tasks[t].attempts;
        for id in &nodes {
            self.end_assignment(id, j, t, attempt, now);
            let Some(pool) = self.pools.get_mut(&pool_id) else { continue };
            let Some(n) = pool.node_mut(id) else { continue };
            n.assigned = None;
            if n.node.state == NodeState::Running {
                self.set_node_state(&pool_id, id, NodeState::Idle);
            }
        }
        let retry = retryable && self.jobs[j].tasks[t].attempts <= self.jobs[j].max_retries;
        if retry {
            let task = &mut self.jobs[j].tasks[t];
            task.start_time = None;
            task.state = TaskState::Pending;
            let entity = format!("task/{}/{}", self.jobs[j].job_id, self.jobs[j].tasks[t].spec.id);
            self.record(entity, format!("Running->Pending retry={attempt}"));
        } else {
            self.jobs[j].tasks[t].end_time = Some(now);
            self.set_task_state(j, t, TaskState::Failed(reason));
            self.check_job_complete(j);
        }
    }

    fn end_assignment(&mut self, node: &str, j: usize, t: usize, attempt: u32, now: SimTime) {
        let job_id = &self.jobs[j].job_id;
        let task_id = &self.jobs[j].tasks[t].spec.id;
        if let Some(a) = self
            .assignments
            .iter_mut()
            .rev()
            .find(|a| a.node_id == node && &a.job_id == job_id && &a.task_id == task_id && a.attempt == attempt)
        {
            a.end = Some(now);
        }
    }

    /// First pending task bound to the pool, in submission order.
    fn head_of_queue(&self, pool_id: &str) -> Option<(usize, usize)> {
        self.jobs.iter().enumerate().filter(|(_, j)| j.pool_id == pool_id && j.state == JobState::Active).find_map(|(ji, j)| {
            j.tasks.iter().position(|t| t.state == TaskState::Pending).map(|ti| (ji, ti))
        })
    }

    fn schedule_pool(&mut self, pool_id: &str) {
        loop {
            let Some(pool) = self.pools.get(pool_id) else { return };
            if pool.state != PoolState::Steady {
                return;
            }
            let Some((j, t)) = self.head_of_queue(pool_id) else { return };
            let need = self.jobs[j].tasks[t].spec.instances as usize;
            let idle: Vec<String> = pool
                .nodes
                .iter()
                .filter(|n| n.node.state == NodeState::Idle && n.ready_at.is_some() && n.assigned.is_none())
                .take(need)
                .map(|n| n.node.node_id.clone())
                .collect();
            if idle.len() < need {
                return;
            }
            self.start_task(pool_id, j, t, idle);
        }
    }

    fn start_task(&mut self, pool_id: &str, j: usize, t: usize, nodes: Vec<String>) {
        let now = self.now();
        let spec = self.jobs[j].tasks[t].spec.clone();
        if let Some(input) = &spec.input_dir {
            let present = split_share_path(input)
                .and_then(|(share, dir)| self.storage.as_ref()?.share(share).ok().map(|s| s.has_directory(dir)))
                .unwrap_or(false);
            if !present {
                self.jobs[j].tasks[t].end_time = Some(now);
                self.set_task_state(j, t, TaskState::Failed(FailureReason::InputMissing));
                self.check_job_complete(j);
                return;
            }
        }
        let pool = &self.pools[pool_id];
        let ctx = ExecContext {
            nodes: spec.instances,
            procs_per_node: spec.procs_per_node,
            interconnect: &pool.interconnect,
            exec: self.exec,
        };
        let run = match spec.workload.execute(&ctx) {
            Ok(r) => r,
            Err(e) => {
                self.jobs[j].tasks[t].end_time = Some(now);
                self.set_task_state(j, t, TaskState::Failed(FailureReason::Workload(e.to_string())));
                self.check_job_complete(j);
                return;
            }
        };
        self.jobs[j].tasks[t].attempts += 1;
        let attempt = self.jobs[j].tasks[t].attempts;
        let job_id = self.jobs[j].job_id.clone();
        for id in &nodes {
            let pool = self.pools.get_mut(pool_id).unwrap();
            pool.node_mut(id).unwrap().assigned = Some((j, t));
            self.set_node_state(pool_id, id, NodeState::Running);
            self.assignments.push(Assignment {
                node_id: id.clone(),
                job_id: job_id.clone(),
                task_id: spec.id.clone(),
                attempt,
                start: now,
                end: None,
            });
        }
        let task = &mut self.jobs[j].tasks[t];
        task.assigned_nodes = nodes;
        task.start_time = Some(now);
        task.end_time = None;
        task.summary = Some(run.summary);
        self.set_task_state(j, t, TaskState::Staging);
        self.set_task_state(j, t, TaskState::Running);
        self.clock.schedule_in(run.duration, Event::TaskFinished { job: j, task: t, attempt, output_bytes: run.output_bytes });
    }

    // ---- event loop --------------------------------------------------

    fn live_pool_id(&self, serial: u64) -> Option<String> {
        self.pools.values().find(|p| p.serial == serial).map(|p| p.config.id.clone())
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::NodeBooted { serial, node } => {
                let Some(pool_id) = self.live_pool_id(serial) else { return };
                let pull = SimDuration::from_secs(self.pools[&pool_id].config.image_pull_secs());
                self.record(format!("node/{node}"), "booted");
                self.clock.schedule_in(pull, Event::ImagePulled { serial, node });
            }
            Event::ImagePulled { serial, node } => {
                let Some(pool_id) = self.live_pool_id(serial) else { return };
                let pool = &self.pools[&pool_id];
                if pool.nodes.iter().any(|n| n.node.node_id == node && n.node.state == NodeState::Starting) {
                    self.record(format!("node/{node}"), "image pulled");
                    self.set_node_state(&pool_id, &node, NodeState::Idle);
                    if self.pools[&pool_id].state == PoolState::Steady {
                        self.node_ready(&pool_id, &node);
                    } else {
                        self.maybe_steady(&pool_id);
                    }
                    self.schedule_pool(&pool_id);
                }
            }
            Event::NodePreempted { serial, node } => {
                let Some(pool_id) = self.live_pool_id(serial) else { return };
                self.handle_preemption(&pool_id, &node);
            }
            Event::ReplaceNode { serial } => {
                let Some(pool_id) = self.live_pool_id(serial) else { return };
                self.replace_node(&pool_id);
            }
            Event::TaskFinished { job, task, attempt, output_bytes } => {
                let t = &self.jobs[job].tasks[task];
                if t.state == TaskState::Running && t.attempts == attempt {
                    self.finish_task(job, task, output_bytes);
                }
            }
        }
    }

    fn handle_preemption(&mut self, pool_id: &str, node_id: &str) {
        let pool = &self.pools[pool_id];
        let Some(n) = pool.nodes.iter().find(|n| n.node.node_id == node_id) else { return };
        if n.node.priority != Priority::LowPriority || !matches!(n.node.state, NodeState::Idle | NodeState::Running) {
            return;
        }
        if let Some((j, t)) = n.assigned {
            self.fail_task(j, t, FailureReason::NodePreempted, true);
        }
        self.close_meter(pool_id, node_id, "preempted");
        self.set_node_state(pool_id, node_id, NodeState::Preempted);
        let serial = self.pools[pool_id].serial;
        self.clock.schedule_in(SimDuration::ZERO, Event::ReplaceNode { serial });
        self.schedule_pool(pool_id);
    }

    /// Provisions one low-priority node to restore the pool's target size,
    /// retrying when the current scarcity window closes.
    fn replace_node(&mut self, pool_id: &str) {
        let now = self.now();
        if let Some(w) = self.fabric.low_priority_scarcity.iter().find(|w| w.contains(now)) {
            let serial = self.pools[pool_id].serial;
            self.clock.schedule_at(w.end, Event::ReplaceNode { serial });
            return;
        }
        let pool = self.pools.get_mut(pool_id).unwrap();
        pool.replacements += 1;
        let serial = pool.serial;
        let request = ProvisionRequest {
            pool_id: format!("{pool_id}-r{}", pool.replacements),
            sku: pool.config.sku.clone(),
            dedicated: 0,
            low_priority: 1,
        };
        let nodes = self
            .fabric
            .provision(&mut self.clock, &request, |id| Event::NodeBooted { serial, node: id.to_string() })
            .expect("scarcity checked above");
        for mut node in nodes {
            node.pool_id = pool_id.to_string();
            let id = node.node_id.clone();
            self.pools.get_mut(pool_id).unwrap().nodes.push(PoolNode { node, ready_at: None, released_at: None, assigned: None });
            self.record(format!("node/{id}"), "->Starting");
        }
    }

    fn finish_task(&mut self, j: usize, t: usize, output_bytes: u64) {
        let now = self.now();
        let job_id = self.jobs[j].job_id.clone();
        let spec = self.jobs[j].tasks[t].spec.clone();
        let attempt = self.jobs[j].tasks[t].attempts;
        let mut failure = None;
        if let Some(out) = &spec.output_dir {
            let (share, dir) = split_share_path(out).expect("validated share path");
            let digest = sha256_hex(format!("{job_id}/{}/{attempt}/{output_bytes}", spec.id).as_bytes());
            let manifest = [ManifestEntry { path: format!("{}.dat", spec.id), bytes: output_bytes, digest: Some(digest) }];
            let res = match self.storage.as_mut() {
                Some(a) => a.ingress(share, dir, &manifest, now).map_err(|e| e.to_string()),
                None => Err(StorageError::NoAccount.to_string()),
            };
            match res {
                Ok(rec) => {
                    self.record(format!("share/{share}"), format!("output {dir}/{}.dat bytes={output_bytes}", spec.id));
                    if let Some(r) = rec {
                        self.bill_transfer(&r);
                    }
                }
                Err(e) => failure = Some(FailureReason::OutputRejected(e)),
            }
        }
        if let Some(reason) = failure {
            self.fail_task(j, t, reason, false);
        } else {
            let pool_id = self.jobs[j].pool_id.clone();
            let nodes = std::mem::take(&mut self.jobs[j].tasks[t].assigned_nodes);
            for id in &nodes {
                self.end_assignment(id, j, t, attempt, now);
                self.pools.get_mut(&pool_id).unwrap().node_mut(id).unwrap().assigned = None;
                self.set_node_state(&pool_id, id, NodeState::Idle);
            }
            self.jobs[j].tasks[t].assigned_nodes = nodes;
            self.jobs[j].tasks[t].end_time = Some(now);
            self.set_task_state(j, t, TaskState::Completed);
            self.check_job_complete(j);
        }
        let pool_id = self.jobs[j].pool_id.clone();
        self.schedule_pool(&pool_id);
    }

    /// Processes every event due at the current instant.
    fn run_ready(&mut self) -> Result<(), BatchError> {
        while self.clock.peek_time() == Some(self.now()) {
            self.step()?;
        }
        Ok(())
    }

    fn step(&mut self) -> Result<bool, BatchError> {
        let Some((_, event)) = self.clock.pop() else { return Ok(false) };
        self.events_processed += 1;
        if self.events_processed > MAX_EVENTS_PER_RUN {
            return Err(BatchError::Runaway(MAX_EVENTS_PER_RUN));
        }
        self.handle(event);
        Ok(true)
    }

    fn busy(&self) -> bool {
        self.jobs.iter().any(|j| j.state == JobState::Active)
            || self
                .pools
                .values()
                .any(|p| p.state == PoolState::Allocating || p.nodes.iter().any(|n| n.node.state == NodeState::Starting))
    }

    /// Runs until every job is terminal and every pool is allocated, or
    /// until nothing is left to happen.
    pub fn wait(&mut self) -> Result<(), BatchError> {
        self.events_processed = 0;
        while self.busy() {
            if !self.step()? {
                break;
            }
        }
        Ok(())
    }

    /// Processes every event up to and including `t`, then sets the clock
    /// to `t`.
    pub fn run_until(&mut self, t: SimTime) -> Result<(), BatchError> {
        self.events_processed = 0;
        while self.clock.peek_time().is_some_and(|next| next <= t) {
            self.step()?;
        }
        if t > self.now() {
            self.clock.advance_to(t);
        }
        Ok(())
    }

    // ---- snapshots ---------------------------------------------------

    /// The ledger as of now: closed charges plus open node meters and
    /// share storage accrued to this instant.
    pub fn ledger_snapshot(&self) -> Ledger {
        let now = self.now();
        let mut l = self.ledger.clone();
        for p in self.pools.values() {
            for n in &p.nodes {
                if let (Some(start), None) = (n.ready_at, n.released_at) {
                    let plan = p.plan_for(n.node.priority);
                    let (sku, id) = (&n.node.sku, &n.node.node_id);
                    let inter = p.config.inter_node_comm;
                    Self::append_vm_to(&mut l, &self.catalog, &self.rates, sku, plan, id, start, now, inter, "accrued");
                }
            }
        }
        if let Some(a) = &self.storage {
            for s in a.shares() {
                let span = now - s.created_at;
                l.append(LineItem {
                    category: ServiceCategory::Storage,
                    usd: self.rates.storage(s.quota_gib, span),
                    description: format!("share {} {}GiB provisioned {span}s", s.name, s.quota_gib),
                    interval: billing::span(s.created_at, now),
                    vm: None,
                });
            }
        }
        l
    }

    pub fn status(&self) -> StatusDoc {
        let pools = self
            .all_pools()
            .map(|p| PoolStatus {
                id: p.config.id.clone(),
                state: p.state,
                sku: p.config.sku.clone(),
                region: p.config.region.clone(),
                shared_fs_mounted: p.shared_fs_mounted,
                created_at: p.created_at.to_string(),
                steady_at: p.steady_at.map(|t| t.to_string()),
                deleted_at: p.deleted_at.map(|t| t.to_string()),
                nodes: p
                    .nodes
                    .iter()
                    .map(|n| NodeStatus {
                        id: n.node.node_id.clone(),
                        priority: match n.node.priority {
                            Priority::Dedicated => "dedicated",
                            Priority::LowPriority => "low_priority",
                        },
                        state: n.node.state.as_str(),
                        ready_at: n.ready_at.map(|t| t.to_string()),
                        released_at: n.released_at.map(|t| t.to_string()),
                    })
                    .collect(),
            })
            .collect();
        let jobs = self
            .jobs
            .iter()
            .map(|j| JobStatus {
                id: j.job_id.clone(),
                pool_id: j.pool_id.clone(),
                state: j.state,
                tasks: j
                    .tasks
                    .iter()
                    .map(|t| TaskStatus {
                        id: t.spec.id.clone(),
                        state: t.state.clone(),
                        nodes: t.assigned_nodes.clone(),
                        attempts: t.attempts,
                        start_time: t.start_time.map(|x| x.to_string()),
                        end_time: t.end_time.map(|x| x.to_string()),
                        summary: t.summary.clone(),
                    })
                    .collect(),
            })
            .collect();
        let shares = self
            .storage
            .iter()
            .flat_map(|a| a.shares())
            .map(|s| ShareStatus {
                name: s.name.clone(),
                quota_gib: s.quota_gib,
                used_bytes: s.used_bytes(),
                files: s.entries().len(),
            })
            .collect();
        StatusDoc {
            now: self.now().to_string(),
            storage_account: self.storage.as_ref().map(|a| a.name.clone()),
            shares,
            pools,
            jobs,
        }
    }

    /// Metered node time, summed over every released or open meter.
    pub fn metered_node_time(&self) -> SimDuration {
        let now = self.now();
        self.all_pools()
            .flat_map(|p| &p.nodes)
            .filter_map(|n| n.ready_at.map(|s| n.released_at.unwrap_or(now) - s))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeStatus {
    pub id: String,
    pub priority: &'static str,
    pub state: &'static str,
    pub ready_at: Option<String>,
    pub released_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolStatus {
    pub id: String,
    pub state: PoolState,
    pub sku: String,
    pub region: String,
    pub shared_fs_mounted: bool,
    pub created_at: String,
    pub steady_at: Option<String>,
    pub deleted_at: Option<String>,
    pub nodes: Vec<NodeStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskStatus {
    pub id: String,
    #[serde(flatten)]
    pub state: TaskState,
    pub nodes: Vec<String>,
    pub attempts: u32,
    pub start_time: Option<String>,
    pub end_time: Option<String>,
    pub summary: Option<WorkloadSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobStatus {
    pub id: String,
    pub pool_id: String,
    pub state: JobState,
    pub tasks: Vec<TaskStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShareStatus {
    pub name: String,
    pub quota_gib: u64,
    pub used_bytes: u64,
    pub files: usize,
}

/// Service state as reported by `status`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatusDoc {
    pub now: String,
    pub storage_account: Option<String>,
    pub shares: Vec<ShareStatus>,
    pub pools: Vec<PoolStatus>,
    pub jobs: Vec<JobStatus>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::MILLIS_PER_HOUR;
    use crate::money::Usd;

    fn pool(dedicated: u32, low: u32, shared: bool) -> PoolConfig {
        serde_yaml::from_str(&format!(
            "id: p\nsku: NC24r\nregion: eastus\nvm_count: {{dedicated: {dedicated}, low_priority: {low}}}\n\
             inter_node_comm: true\nshared_filesystem: {shared}\nimage: img\n"
        ))
        .unwrap()
    }

    fn job(id: &str, tasks: &[(u32, u64)]) -> JobConfig {
        let mut y = format!("id: {id}\npool_id: p\ntasks:\n");
        for (i, (inst, secs)) in tasks.iter().enumerate() {
            y.push_str(&format!("  - {{id: t{i}, instances: {inst}, workload: {{kind: fixed_duration, seconds: {secs}}}}}\n"));
        }
        serde_yaml::from_str(&y).unwrap()
    }

    fn service(rate: f64) -> Service {
        let mut f = FabricSettings::with_seed(42);
        f.preemption_rate_per_node_hour = rate;
        let mut s = Service::new(Catalog::default_catalog(), f);
        s.quota_set("eastus", Some(1000), Some(1000)).unwrap();
        s
    }

    #[test]
    fn default_quota_rejects_two_nc24r() {
        let mut s = Service::new(Catalog::default_catalog(), FabricSettings::with_seed(1));
        let e = s.pool_add(&pool(2, 0, true)).unwrap_err();
        assert_eq!(e, BatchError::QuotaExceeded { class: CoreClass::Dedicated, needed: 48, available: 24 });
        assert!(s.log().is_empty());
    }

    #[test]
    fn shared_fs_with_low_priority_fails() {
        let mut s = service(0.0);
        assert_eq!(s.pool_add(&pool(1, 1, true)).unwrap_err(), BatchError::SharedFsLowPriority { low_priority: 1 });
    }

    #[test]
    fn pool_reaches_steady_and_mounts() {
        let mut s = service(0.0);
        s.pool_add(&pool(2, 0, true)).unwrap();
        assert_eq!(s.pool("p").unwrap().state, PoolState::Allocating);
        s.wait().unwrap();
        let p = s.pool("p").unwrap();
        assert_eq!(p.state, PoolState::Steady);
        assert!(p.shared_fs_mounted);
        assert!(p.nodes.iter().all(|n| n.ready_at == p.steady_at));
    }

    #[test]
    fn gang_task_runs_on_both_nodes_then_next() {
        let mut s = service(0.0);
        s.pool_add(&pool(2, 0, false)).unwrap();
        s.jobs_add(&job("j", &[(2, 3600), (2, 60)]), 0).unwrap();
        let steady = {
            s.run_until(SimTime(10 * MILLIS_PER_HOUR / 10)).unwrap();
            s.pool("p").unwrap().steady_at.unwrap()
        };
        let j = s.job("j").unwrap();
        assert_eq!(j.tasks[0].state, TaskState::Running);
        assert_eq!(j.tasks[0].assigned_nodes, vec!["p-d0", "p-d1"]);
        assert_eq!(j.tasks[1].state, TaskState::Pending);
        s.wait().unwrap();
        let j = s.job("j").unwrap();
        assert_eq!(j.state, JobState::Completed);
        assert_eq!(j.tasks[1].start_time, Some(steady + SimDuration::from_secs(3600)));
    }

    #[test]
    fn too_wide_task_is_rejected() {
        let mut s = service(0.0);
        s.pool_add(&pool(2, 0, false)).unwrap();
        assert!(matches!(s.jobs_add(&job("j", &[(3, 1)]), 0), Err(BatchError::TaskTooWide { instances: 3, nodes: 2, .. })));
        assert!(matches!(s.jobs_add(&JobConfig { pool_id: "q".into(), ..job("j", &[]) }, 0), Err(BatchError::UnknownPool(_))));
    }

    #[test]
    fn preempting_one_node_fails_the_whole_task() {
        let mut s = service(0.0);
        s.pool_add(&pool(0, 2, false)).unwrap();
        s.jobs_add(&job("j", &[(2, 7200)]), 0).unwrap();
        s.run_until(SimTime::from_secs(1000)).unwrap();
        assert_eq!(s.job("j").unwrap().tasks[0].state, TaskState::Running);
        s.preempt_node("p-lp1").unwrap();
        let t = &s.job("j").unwrap().tasks[0];
        assert_eq!(t.state, TaskState::Failed(FailureReason::NodePreempted));
        let nodes = &s.pool("p").unwrap().nodes;
        assert_eq!(nodes[0].node.state, NodeState::Idle);
        assert_eq!(nodes[1].node.state, NodeState::Preempted);
        // a replacement is booting
        assert_eq!(nodes.len(), 3);
        assert_eq!(s.job("j").unwrap().state, JobState::Completed);
    }

    #[test]
    fn retries_requeue_preempted_tasks() {
        let mut s = service(0.0);
        s.pool_add(&pool(0, 2, false)).unwrap();
        s.jobs_add(&job("j", &[(2, 3600)]), 1).unwrap();
        s.run_until(SimTime::from_secs(1000)).unwrap();
        s.preempt_node("p-lp0").unwrap();
        assert_eq!(s.job("j").unwrap().tasks[0].state, TaskState::Pending);
        s.wait().unwrap();
        let t = &s.job("j").unwrap().tasks[0];
        assert_eq!(t.state, TaskState::Completed);
        assert_eq!(t.attempts, 2);
        assert!(t.assigned_nodes.contains(&"p-r1-lp0".to_string()));
    }

    #[test]
    fn dedicated_nodes_ignore_preemption() {
        let mut s = service(0.0);
        s.pool_add(&pool(2, 0, false)).unwrap();
        s.wait().unwrap();
        s.preempt_node("p-d0").unwrap();
        assert_eq!(s.pool("p").unwrap().nodes[0].node.state, NodeState::Idle);
    }

    #[test]
    fn pool_delete_fails_running_tasks_and_closes_meters() {
        let mut s = service(0.0);
        s.pool_add(&pool(2, 0, false)).unwrap();
        s.jobs_add(&job("j", &[(2, 7200), (1, 10)]), 0).unwrap();
        s.run_until(SimTime::from_secs(1800)).unwrap();
        s.pool_del("p").unwrap();
        let j = s.job("j").unwrap();
        assert!(j.tasks.iter().all(|t| t.state == TaskState::Failed(FailureReason::PoolDeleted)));
        assert_eq!(j.state, JobState::Completed);
        assert_eq!(s.pool_del("p"), Err(BatchError::UnknownPool("p".into())));
        let steady = s.all_pools().next().unwrap().steady_at.unwrap();
        let each = SimTime::from_secs(1800) - steady;
        assert_eq!(s.metered_node_time(), each + each);
        let vm = s.ledger().category_total(ServiceCategory::VirtualMachines);
        let expected = billing::meter_vm(s.catalog(), "NC24r", PricingPlan::PayGoDedicated, each + each).unwrap();
        assert_eq!(vm, expected);
        assert!(s.ledger().category_total(ServiceCategory::Networking) > Usd::zero());
    }

    #[test]
    fn job_delete_frees_nodes() {
        let mut s = service(0.0);
        s.pool_add(&pool(2, 0, false)).unwrap();
        s.jobs_add(&job("a", &[(2, 7200)]), 0).unwrap();
        s.jobs_add(&job("b", &[(2, 60)]), 0).unwrap();
        s.run_until(SimTime::from_secs(1800)).unwrap();
        s.jobs_del("a").unwrap();
        assert_eq!(s.job("a").unwrap().tasks[0].state, TaskState::Failed(FailureReason::JobDeleted));
        assert_eq!(s.job("b").unwrap().tasks[0].state, TaskState::Running);
        assert_eq!(s.jobs_del("a"), Err(BatchError::UnknownJob("a".into())));
    }

    #[test]
    fn missing_input_fails_task() {
        let mut s = service(0.0);
        s.pool_add(&pool(1, 0, false)).unwrap();
        let mut j = job("j", &[(1, 5)]);
        j.tasks[0].input_dir = Some("data/in".into());
        s.jobs_add(&j, 0).unwrap();
        s.wait().unwrap();
        assert_eq!(s.job("j").unwrap().tasks[0].state, TaskState::Failed(FailureReason::InputMissing));
    }

    #[test]
    fn outputs_land_in_the_share() {
        let mut s = service(0.0);
        s.storage_account_create("acct").unwrap();
        s.share_create("data", 1).unwrap();
        s.pool_add(&pool(1, 0, false)).unwrap();
        let mut j: JobConfig = serde_yaml::from_str(
            "id: j\npool_id: p\ntasks:\n  - {id: t, output_dir: data/out, workload: {kind: fixed_duration, seconds: 5, output_bytes: 1000}}\n",
        )
        .unwrap();
        s.jobs_add(&j, 0).unwrap();
        s.wait().unwrap();
        let d = s.data_download("data", "out").unwrap();
        assert_eq!(d.files[0].path, "data/out/t.dat");
        assert_eq!(d.files[0].bytes, 1000);
        assert!(s.ledger().category_total(ServiceCategory::Bandwidth) > Usd::zero());
        // over quota output is rejected
        j.id = "k".into();
        j.tasks[0].workload = crate::workloads::WorkloadSpec::FixedDuration { seconds: 1.0, output_bytes: 2 << 30 };
        s.jobs_add(&j, 0).unwrap();
        s.wait().unwrap();
        assert!(matches!(s.job("k").unwrap().tasks[0].state, TaskState::Failed(FailureReason::OutputRejected(_))));
    }

    #[test]
    fn random_preemption_is_seeded() {
        let run = || {
            let mut s = service(2.0);
            s.pool_add(&pool(1, 3, false)).unwrap();
            s.jobs_add(&job("j", &[(2, 3600), (1, 3600), (4, 1800)]), 2).unwrap();
            s.wait().unwrap();
            (s.event_log_tsv(), s.ledger_snapshot().to_tsv())
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.0.contains("->Preempted"));
    }
}
