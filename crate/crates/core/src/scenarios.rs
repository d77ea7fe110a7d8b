//! Canned end-to-end runs of the snake studies.
//!
//! Wall-clock hours are fixed inputs. Each scenario builds a full
//! configuration set and a command transcript, so a scenario run is an
//! ordinary session that can be packed and verified like any other.

use std::str::FromStr;

use rust_decimal::Decimal;

use crate::batch::{JobState, TaskState};
use crate::billing::{Ledger, ServiceCategory};
use crate::catalog::PricingPlan;
use crate::config::{ConfigSet, Documents, CONFIG_DOC, CREDENTIALS_DOC, JOBS_DOC, POOL_DOC};
use crate::digest::sha256_hex;
use crate::fabric::SimDuration;
use crate::money::Usd;
use crate::session::{Command, IngressBatch, Session, SessionError};
use crate::storage::{ManifestEntry, GIB};

pub const SHARE: &str = "snake";
pub const SHARE_QUOTA_GIB: u64 = 100;
/// Dedicated-core quota requested before the pool is added.
pub const RAISED_QUOTA: u32 = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: &'static str,
    pub sku: &'static str,
    pub region: &'static str,
    pub nodes: u32,
    pub procs_per_node: u32,
    pub gpus_per_node: u32,
    pub expected_wall_hours: Decimal,
    pub plan: PricingPlan,
    pub output_bytes: u64,
}

impl Scenario {
    pub fn wall_time(&self) -> SimDuration {
        SimDuration::from_hours(self.expected_wall_hours)
    }

    /// `nodes * hours * rate` under the scenario's plan.
    pub fn expected_vm_cost(&self, rate: Decimal) -> Usd {
        Usd::from_decimal(rate * Decimal::from(self.nodes) * self.expected_wall_hours)
    }

    pub fn documents(&self) -> Documents {
        let config = format!(
            "workspace:\n  subscription: snake-study\n  resource_group: snake-rg\n  region: {region}\n  \
             storage_account: snakestorage\n  batch_account: snakebatch\n",
            region = self.region
        );
        let credentials = "credentials:\n  storage_key: scenario-storage-key\n  batch_key: scenario-batch-key\n".to_string();
        let pool = format!(
            "pool:\n  id: {name}-pool\n  sku: {sku}\n  vm_count:\n    dedicated: {nodes}\n    low_priority: 0\n  \
             inter_node_comm: true\n  shared_filesystem: true\n  image: barbagroup/petibm:0.4-GPU-IntelMPI-ubuntu\n  \
             pricing_plan: {plan}\n",
            name = self.name,
            sku = self.sku,
            nodes = self.nodes,
            plan = self.plan
        );
        let seconds = self.wall_time().millis() as f64 / 1000.0;
        let jobs = format!(
            "jobs:\n  - id: {name}\n    pool_id: {name}-pool\n    tasks:\n      - id: petibm\n        \
             instances: {nodes}\n        procs_per_node: {ppn}\n        gpus_per_node: {gpus}\n        \
             input_dir: {SHARE}/{name}/input\n        output_dir: {SHARE}/{name}/output\n        workload:\n          \
             kind: fixed_duration\n          seconds: {seconds}\n          output_bytes: {out}\n",
            name = self.name,
            nodes = self.nodes,
            ppn = self.procs_per_node,
            gpus = self.gpus_per_node,
            out = self.output_bytes
        );
        [(CONFIG_DOC, config), (CREDENTIALS_DOC, credentials), (POOL_DOC, pool), (JOBS_DOC, jobs)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    pub fn config_set(&self) -> ConfigSet {
        ConfigSet::from_documents(&self.documents()).expect("built-in scenario configuration is valid")
    }

    /// Solver input files staged before the run.
    fn input_manifest(&self) -> Vec<ManifestEntry> {
        [("config.yaml", 2_048u64), ("body.txt", 120_000), ("mesh.yaml", 1_024)]
            .into_iter()
            .map(|(path, bytes)| ManifestEntry {
                path: path.to_string(),
                bytes,
                digest: Some(sha256_hex(format!("{}/{path}/{bytes}", self.name).as_bytes())),
            })
            .collect()
    }

    pub fn transcript(&self, options: &ScenarioOptions) -> Vec<Command> {
        let dir = |leaf: &str| format!("{}/{leaf}", self.name);
        let mut t = vec![
            Command::WorkspaceInit,
            Command::StorageAccountCreate { name: None },
            Command::ShareCreate { name: SHARE.into(), quota_gib: SHARE_QUOTA_GIB },
            Command::DirectoryCreate { share: SHARE.into(), name: dir("input") },
            Command::DirectoryCreate { share: SHARE.into(), name: dir("output") },
        ];
        if let Some(q) = options.dedicated_quota {
            t.push(Command::QuotaSet { region: None, dedicated_cores: Some(q), low_priority_cores: None });
        }
        t.extend([
            Command::PoolAdd,
            Command::DataIngress {
                batches: vec![IngressBatch { share: SHARE.into(), directory: dir("input"), files: self.input_manifest() }],
            },
            Command::JobsAdd { wait: true, retries: 0 },
            Command::PoolDel { pool_id: None },
            Command::JobsDel { job_id: None },
            Command::DataDownload { share: SHARE.into(), directory: dir("output") },
        ]);
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioOptions {
    /// Dedicated-core quota to request; `None` keeps the default.
    pub dedicated_quota: Option<u32>,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        ScenarioOptions { dedicated_quota: Some(RAISED_QUOTA) }
    }
}

pub fn builtin_scenarios() -> Vec<Scenario> {
    let d = |s| Decimal::from_str(s).unwrap();
    let base = Scenario {
        name: "snake2d",
        sku: "NC24r",
        region: "eastus",
        nodes: 2,
        procs_per_node: 12,
        gpus_per_node: 2,
        expected_wall_hours: d("7.0"),
        plan: PricingPlan::PayGoDedicated,
        output_bytes: 3 * GIB / 2,
    };
    vec![
        base.clone(),
        Scenario {
            name: "snake3d",
            procs_per_node: 24,
            gpus_per_node: 4,
            expected_wall_hours: d("136"),
            output_bytes: 24 * GIB,
            ..base.clone()
        },
        Scenario {
            name: "snake3d_fine",
            nodes: 6,
            procs_per_node: 24,
            gpus_per_node: 4,
            expected_wall_hours: d("335.23"),
            output_bytes: 60 * GIB,
            ..base
        },
    ]
}

pub fn find_scenario(name: &str) -> Option<Scenario> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub job_id: String,
    pub task_id: String,
    pub state: TaskState,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub session: Session,
    pub event_log: String,
    pub ledger: Ledger,
    pub outcomes: Vec<TaskOutcome>,
    pub vm_cost: Usd,
}

impl ScenarioRun {
    pub fn all_completed(&self) -> bool {
        self.outcomes.iter().all(|o| o.state == TaskState::Completed)
    }
}

pub fn run_scenario(scenario: &Scenario, seed: u64, options: &ScenarioOptions) -> Result<ScenarioRun, SessionError> {
    let mut session = Session::new(scenario.config_set(), seed);
    for c in scenario.transcript(options) {
        session.apply(c)?;
    }
    let svc = session.service().expect("workspace initialized");
    let ledger = svc.ledger_snapshot();
    let outcomes = svc
        .jobs()
        .iter()
        .flat_map(|j| {
            debug_assert!(j.state != JobState::Active);
            j.tasks.iter().map(|t| TaskOutcome { job_id: j.job_id.clone(), task_id: t.spec.id.clone(), state: t.state.clone() })
        })
        .collect();
    Ok(ScenarioRun {
        event_log: svc.event_log_tsv(),
        vm_cost: ledger.category_total(ServiceCategory::VirtualMachines),
        ledger,
        outcomes,
        session,
    })
}
