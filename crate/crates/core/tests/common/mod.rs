//! Seeded random schedules and the checks shared by the property suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use batchsim::batch::{Assignment, FailureReason, JobState, TaskState};
use batchsim::config::{JobConfig, PoolConfig, TaskSpec, VmCount};
use batchsim::fabric::{FabricSettings, NodeState, Priority};
use batchsim::workloads::WorkloadSpec;
use batchsim::{Catalog, PricingPlan, Service, SimDuration, SimTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POOL: &str = "p";

#[derive(Debug, Clone)]
pub struct Schedule {
    pub seed: u64,
    pub dedicated: u32,
    pub low_priority: u32,
    pub rate: f64,
    pub jobs: Vec<JobConfig>,
    pub retries: Vec<u32>,
    /// Forced preemption of a node index at a time, seconds.
    pub forced: Option<(u32, u64)>,
}

pub fn pool_config(dedicated: u32, low_priority: u32, shared: bool) -> PoolConfig {
    PoolConfig {
        id: POOL.into(),
        sku: "NC24r".into(),
        region: "eastus".into(),
        vm_count: VmCount { dedicated, low_priority },
        inter_node_comm: true,
        shared_filesystem: shared,
        image: "img".into(),
        image_size_mib: None,
        pricing_plan: PricingPlan::PayGoDedicated,
    }
}

pub fn fixed_task(id: &str, instances: u32, seconds: u64) -> TaskSpec {
    TaskSpec {
        id: id.into(),
        workload: WorkloadSpec::FixedDuration { seconds: seconds as f64, output_bytes: 0 },
        instances,
        procs_per_node: 1,
        gpus_per_node: 0,
        input_dir: None,
        output_dir: None,
    }
}

pub fn task_seconds(spec: &TaskSpec) -> u64 {
    match spec.workload {
        WorkloadSpec::FixedDuration { seconds, .. } => seconds as u64,
        _ => unreachable!("schedules only use fixed-duration tasks"),
    }
}

impl Schedule {
    pub fn random(seed: u64) -> Schedule {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dedicated = rng.gen_range(0..=3);
        let low_priority = rng.gen_range(u32::from(dedicated == 0)..=3);
        let nodes = dedicated + low_priority;
        let rate = [0.0, 0.5, 2.0][rng.gen_range(0..3)];
        let jobs: Vec<JobConfig> = (0..rng.gen_range(1..=3))
            .map(|j| JobConfig {
                id: format!("j{j}"),
                pool_id: POOL.into(),
                tasks: (0..rng.gen_range(1..=4))
                    .map(|t| fixed_task(&format!("t{t}"), rng.gen_range(1..=nodes), rng.gen_range(60..=7200)))
                    .collect(),
            })
            .collect();
        let retries = jobs.iter().map(|_| rng.gen_range(0..=2)).collect();
        let forced = rng.gen_bool(0.5).then(|| (rng.gen_range(0..nodes), rng.gen_range(0..=7200)));
        Schedule { seed, dedicated, low_priority, rate, jobs, retries, forced }
    }

    pub fn service(&self) -> Service {
        let mut f = FabricSettings::with_seed(self.seed);
        f.preemption_rate_per_node_hour = self.rate;
        let mut s = Service::new(Catalog::default_catalog(), f);
        s.quota_set("eastus", Some(1000), Some(1000)).unwrap();
        s
    }

    pub fn run(&self) -> Result<Service, String> {
        let mut s = self.service();
        s.pool_add(&pool_config(self.dedicated, self.low_priority, false)).map_err(|e| e.to_string())?;
        for (job, &r) in self.jobs.iter().zip(&self.retries) {
            s.jobs_add(job, r).map_err(|e| e.to_string())?;
        }
        if let Some((index, at)) = self.forced {
            s.run_until(SimTime::from_secs(at)).map_err(|e| e.to_string())?;
            let id = s.pool(POOL).unwrap().nodes[index as usize].node.node_id.clone();
            s.preempt_node(&id).map_err(|e| e.to_string())?;
        }
        s.wait().map_err(|e| e.to_string())?;
        Ok(s)
    }
}

type AttemptKey = (String, String, u32);

fn attempts(s: &Service) -> BTreeMap<AttemptKey, Vec<&Assignment>> {
    let mut m: BTreeMap<AttemptKey, Vec<&Assignment>> = BTreeMap::new();
    for a in s.assignments() {
        m.entry((a.job_id.clone(), a.task_id.clone(), a.attempt)).or_default().push(a);
    }
    m
}

fn node_priority(s: &Service, id: &str) -> Option<(Priority, NodeState, Option<SimTime>)> {
    s.all_pools()
        .flat_map(|p| &p.nodes)
        .find(|n| n.node.node_id == id)
        .map(|n| (n.node.priority, n.node.state, n.released_at))
}

/// Every attempt holds exactly `instances` nodes over one common interval.
pub fn check_gang_atomicity(s: &Service) -> Result<(), String> {
    for ((job, task, attempt), group) in attempts(s) {
        let spec = &s.job(&job).unwrap().tasks.iter().find(|t| t.spec.id == task).unwrap().spec;
        if group.len() != spec.instances as usize {
            return Err(format!("{job}/{task}#{attempt} held {} of {} nodes", group.len(), spec.instances));
        }
        if group.iter().any(|a| a.start != group[0].start || a.end != group[0].end) {
            return Err(format!("{job}/{task}#{attempt} nodes started or ended apart"));
        }
        if group[0].end.is_none() {
            return Err(format!("{job}/{task}#{attempt} never released its nodes"));
        }
    }
    Ok(())
}

/// No node runs two attempts at once.
pub fn check_no_oversubscription(s: &Service) -> Result<(), String> {
    let mut by_node: BTreeMap<&str, Vec<&Assignment>> = BTreeMap::new();
    for a in s.assignments() {
        by_node.entry(&a.node_id).or_default().push(a);
    }
    for (node, mut list) in by_node {
        list.sort_by_key(|a| a.start);
        for w in list.windows(2) {
            match w[0].end {
                Some(end) if end <= w[1].start => {}
                _ => return Err(format!("node {node} oversubscribed at {}", w[1].start)),
            }
        }
    }
    Ok(())
}

/// An attempt cut short lost a preempted low-priority node at that instant,
/// and then the whole task failed or was requeued.
pub fn check_preemption_fails_whole_task(s: &Service) -> Result<(), String> {
    for ((job, task, attempt), group) in attempts(s) {
        let t = s.job(&job).unwrap().tasks.iter().find(|t| t.spec.id == task).unwrap();
        let start = group[0].start;
        let end = group[0].end.unwrap();
        let full = start + SimDuration::from_secs(task_seconds(&t.spec));
        let last = attempt == t.attempts;
        if end < full {
            let culprit = group.iter().any(|a| {
                matches!(node_priority(s, &a.node_id), Some((Priority::LowPriority, NodeState::Preempted, Some(r))) if r == end)
            });
            if !culprit {
                return Err(format!("{job}/{task}#{attempt} ended early without a preempted node"));
            }
            if last && t.state != TaskState::Failed(FailureReason::NodePreempted) {
                return Err(format!("{job}/{task}#{attempt} cut short but final state {:?}", t.state));
            }
        } else if end != full {
            return Err(format!("{job}/{task}#{attempt} overran its duration"));
        } else if !last {
            return Err(format!("{job}/{task}#{attempt} completed yet was retried"));
        }
    }
    for j in s.jobs() {
        if j.state == JobState::Active {
            return Err(format!("job {} still active after wait", j.job_id));
        }
        for t in &j.tasks {
            if t.state == TaskState::Failed(FailureReason::NodePreempted) && t.attempts != j.max_retries + 1 {
                return Err(format!("{}/{} failed after {} of {} attempts", j.job_id, t.spec.id, t.attempts, j.max_retries + 1));
            }
        }
    }
    Ok(())
}

/// Dedicated nodes never enter `Preempted`, in state or in the log.
pub fn check_dedicated_never_preempted(s: &Service) -> Result<(), String> {
    for p in s.all_pools() {
        for n in &p.nodes {
            if n.node.priority == Priority::Dedicated && n.node.state == NodeState::Preempted {
                return Err(format!("dedicated node {} preempted", n.node.node_id));
            }
        }
    }
    for r in s.log() {
        if r.transition.contains("->Preempted") {
            let id = r.entity.trim_start_matches("node/");
            if !matches!(node_priority(s, id), Some((Priority::LowPriority, ..))) {
                return Err(format!("log shows {id} preempted"));
            }
        }
    }
    Ok(())
}

pub fn check_all(s: &Service) -> Result<(), String> {
    check_gang_atomicity(s)?;
    check_no_oversubscription(s)?;
    check_preemption_fails_whole_task(s)?;
    check_dedicated_never_preempted(s)
}

/// Validation expected from core counts alone: NC24r has 24 cores and the
/// default quota is 24 of each class.
pub fn expected_rejection(dedicated: u32, low_priority: u32, shared: bool) -> bool {
    dedicated + low_priority == 0 || (shared && low_priority > 0) || dedicated * 24 > 24 || low_priority * 24 > 24
}

/// FIFO head-of-line gang schedule on identical always-up nodes: a task
/// starts once enough nodes are free and never before its predecessor.
/// Returns start offsets in seconds, in submission order.
pub fn fifo_oracle(nodes: usize, tasks: &[(u32, u64)]) -> Vec<u64> {
    let mut free = vec![0u64; nodes];
    let mut prev = 0;
    tasks
        .iter()
        .map(|&(instances, secs)| {
            let mut sorted = free.clone();
            sorted.sort_unstable();
            let start = prev.max(sorted[instances as usize - 1]);
            let mut taken = 0;
            for f in free.iter_mut() {
                if taken < instances && *f <= start {
                    *f = start + secs;
                    taken += 1;
                }
            }
            prev = start;
            start
        })
        .collect()
}
