use std::path::{Path, PathBuf};

use batchsim::batch::TaskState;
use batchsim::config::split_share_path;
use batchsim::session::{ingress_batches, Command, Session};
use batchsim::workloads::WorkloadSummary;
use batchsim::ConfigSet;

fn study(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("studies").join(name).join("config_shipyard")
}

/// Creates every share directory the study touches, then runs it to the end.
fn run_study(name: &str, seed: u64, retries: u32) -> Session {
    let dir = study(name);
    let config = ConfigSet::parse_dir(&dir).unwrap();
    let mut dirs: Vec<(String, String)> = config.data_ingress.iter().map(|i| (i.share.clone(), i.directory.clone())).collect();
    for t in config.jobs.iter().flat_map(|j| &j.tasks) {
        for p in t.input_dir.iter().chain(&t.output_dir) {
            let (share, d) = split_share_path(p).unwrap();
            dirs.push((share.to_string(), d.to_string()));
        }
    }
    dirs.sort();
    dirs.dedup();
    let batches = ingress_batches(&config, &dir).unwrap();
    let mut s = Session::new(config, seed);
    s.apply(Command::WorkspaceInit).unwrap();
    s.apply(Command::StorageAccountCreate { name: None }).unwrap();
    let mut shares: Vec<&String> = dirs.iter().map(|(s, _)| s).collect();
    shares.dedup();
    for share in shares.clone() {
        s.apply(Command::ShareCreate { name: share.clone(), quota_gib: 100 }).unwrap();
    }
    for (share, d) in &dirs {
        s.apply(Command::DirectoryCreate { share: share.clone(), name: d.clone() }).unwrap();
    }
    s.apply(Command::QuotaSet { region: None, dedicated_cores: Some(1000), low_priority_cores: Some(1000) }).unwrap();
    s.apply(Command::PoolAdd).unwrap();
    if !batches.is_empty() {
        s.apply(Command::DataIngress { batches }).unwrap();
    }
    s.apply(Command::JobsAdd { wait: true, retries }).unwrap();
    s
}

fn task_states(s: &Session) -> Vec<(String, TaskState)> {
    s.service().unwrap().jobs().iter().flat_map(|j| j.tasks.iter().map(|t| (t.spec.id.clone(), t.state.clone()))).collect()
}

#[test]
fn every_study_parses() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("studies");
    let mut names: Vec<String> =
        std::fs::read_dir(&root).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["lowpriority", "osu", "poisson", "snake2d2k35"]);
    for n in names {
        ConfigSet::parse_dir(study(&n)).unwrap_or_else(|e| panic!("{n}: {e}"));
    }
}

#[test]
fn snake_study_ingests_inputs_and_completes() {
    let s = run_study("snake2d2k35", 7, 0);
    assert_eq!(task_states(&s), [("petibm".to_string(), TaskState::Completed)]);
    let svc = s.service().unwrap();
    let share = svc.storage().unwrap().share("fileshare").unwrap();
    let paths: Vec<&String> = share.entries().keys().collect();
    assert_eq!(paths, ["snake2d2k35/config.yaml", "snake2d2k35/output/petibm.dat", "snake2d2k35/snake2d35.body"]);
}

#[test]
fn osu_study_reports_model_endpoints() {
    let s = run_study("osu", 1, 0);
    let tasks = &s.service().unwrap().job("osu").unwrap().tasks;
    assert!(tasks.iter().all(|t| t.state == TaskState::Completed));
    match tasks[0].summary {
        Some(WorkloadSummary::PingPongLatency { smallest_us, .. }) => assert!((smallest_us - 1.95).abs() < 1e-9),
        ref other => panic!("{other:?}"),
    }
    match tasks[1].summary {
        Some(WorkloadSummary::PingPongBandwidth { peak_mb_per_s }) => assert!((peak_mb_per_s / 5200.0 - 1.0).abs() < 0.01),
        ref other => panic!("{other:?}"),
    }
}

#[test]
fn poisson_study_solves_and_models() {
    let s = run_study("poisson", 1, 0);
    let tasks = &s.service().unwrap().job("poisson").unwrap().tasks;
    assert!(tasks.iter().all(|t| t.state == TaskState::Completed), "{:?}", task_states(&s));
    match tasks[0].summary {
        Some(WorkloadSummary::PoissonCg { final_residual, .. }) => assert!(final_residual <= 1e-12),
        ref other => panic!("{other:?}"),
    }
}

#[test]
fn lowpriority_study_survives_preemption_with_retries() {
    let s = run_study("lowpriority", 3, 5);
    assert!(task_states(&s).iter().all(|(_, st)| *st == TaskState::Completed), "{:?}", task_states(&s));
    let log = s.service().unwrap().event_log_tsv();
    assert!(log.contains("->Preempted"), "expected at least one preemption");
}

#[test]
fn scarcity_window_denies_low_priority_allocation() {
    let dir = study("lowpriority");
    let mut docs = batchsim::config::read_documents(&dir).unwrap();
    let cfg = docs["config.yaml"].replace("start_seconds: 1800", "start_seconds: 0");
    docs.insert("config.yaml".into(), cfg);
    let mut s = Session::new(ConfigSet::from_documents(&docs).unwrap(), 3);
    s.apply(Command::WorkspaceInit).unwrap();
    s.apply(Command::QuotaSet { region: None, dedicated_cores: None, low_priority_cores: Some(1000) }).unwrap();
    let err = s.apply(Command::PoolAdd).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    assert!(s.service().unwrap().pool("lp-pool").is_none());
}
