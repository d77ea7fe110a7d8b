use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn batchsim(cwd: &Path, args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut c = Command::new(env!("CARGO_BIN_EXE_batchsim"));
    c.current_dir(cwd).args(args).env_remove("BATCHSIM_CONFIGDIR").env_remove("BATCHSIM_WORKSPACE");
    for (k, v) in env {
        c.env(k, v);
    }
    let out = c.output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let r = batchsim(cwd, args, &[]);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    r.stdout
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dest = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &dest);
        } else {
            fs::copy(e.path(), dest).unwrap();
        }
    }
}

/// A fresh copy of the 2D snake study.
fn snake_study() -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("snake2d2k35");
    copy_dir(&Path::new(env!("CARGO_MANIFEST_DIR")).join("studies/snake2d2k35"), &root);
    (tmp, root)
}

fn state(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    walkdir::WalkDir::new(root.join(".batchsim"))
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().to_path_buf(), fs::read(e.path()).unwrap()))
        .collect()
}

/// Runs the study up to its finished job, all with `--configdir` given to init.
fn run_to_completion(root: &Path) {
    ok(root, &["workspace", "init", "--configdir", "config_shipyard", "--seed", "7"]);
    ok(root, &["storage", "account", "create"]);
    ok(root, &["share", "create", "--name", "fileshare", "--quota", "100"]);
    ok(root, &["directory", "create", "--share", "fileshare", "--name", "snake2d2k35"]);
    ok(root, &["quota", "set", "--dedicated", "100"]);
    ok(root, &["pool", "add"]);
    ok(root, &["data", "ingress"]);
    ok(root, &["jobs", "add"]);
    ok(root, &["pool", "del"]);
    ok(root, &["jobs", "del"]);
}

#[test]
fn usage_errors_exit_64() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(batchsim(tmp.path(), &["frobnicate"], &[]).code, 64);
    assert_eq!(batchsim(tmp.path(), &["share", "create", "--name", "x"], &[]).code, 64);
    assert_eq!(batchsim(tmp.path(), &["--version"], &[]).code, 0);
}

#[test]
fn commands_before_init_are_validation_errors() {
    let tmp = TempDir::new().unwrap();
    let r = batchsim(tmp.path(), &["pool", "add"], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("workspace init"), "{}", r.stderr);
    assert!(!tmp.path().join(".batchsim").exists());
}

#[test]
fn full_study_workflow() {
    let (_tmp, root) = snake_study();
    run_to_completion(&root);
    let out = ok(&root, &["data", "download", "--share", "fileshare", "--dir", "snake2d2k35/output", "--destination", "out"]);
    assert!(out.contains("1610612736 bytes"), "{out}");
    let dat = root.join("out/fileshare/snake2d2k35/output/petibm.dat");
    assert_eq!(fs::metadata(dat).unwrap().len(), 1_610_612_736);

    let table = ok(&root, &["ledger", "report", "--plan", "reserved_3_year"]);
    assert!(table.contains("55.44"), "{table}");
    assert!(table.contains("24.6092"), "{table}");
    let status: serde_json::Value = serde_json::from_str(&ok(&root, &["status"])).unwrap();
    assert_eq!(status["jobs"][0]["state"], "Deleted");

    ok(&root, &["repro", "pack", "--output", "study.json"]);
    assert!(ok(&root, &["repro", "verify", "study.json"]).contains("verified"));

    let edited = fs::read_to_string(root.join("study.json")).unwrap().replace("sku: NC24r", "sku: H16r");
    fs::write(root.join("edited.json"), edited).unwrap();
    let r = batchsim(&root, &["repro", "verify", "edited.json"], &[]);
    assert_eq!(r.code, 3);
    assert!(r.stdout.contains("pool.yaml") || r.stderr.contains("pool.yaml"), "{}{}", r.stdout, r.stderr);
}

#[test]
fn env_var_and_flag_are_equivalent() {
    let (_a, flag) = snake_study();
    let (_b, env) = snake_study();
    run_to_completion(&flag);
    let steps: &[&[&str]] = &[
        &["workspace", "init", "--seed", "7"],
        &["storage", "account", "create"],
        &["share", "create", "--name", "fileshare", "--quota", "100"],
        &["directory", "create", "--share", "fileshare", "--name", "snake2d2k35"],
        &["quota", "set", "--dedicated", "100"],
        &["pool", "add"],
        &["data", "ingress"],
        &["jobs", "add"],
        &["pool", "del"],
        &["jobs", "del"],
    ];
    for s in steps {
        let r = batchsim(&env, s, &[("BATCHSIM_CONFIGDIR", "config_shipyard")]);
        assert_eq!(r.code, 0, "{s:?}: {}", r.stderr);
    }
    for name in ["events.log", "ledger.tsv", "status.json"] {
        let a = fs::read(flag.join(".batchsim/outputs").join(name)).unwrap();
        let b = fs::read(env.join(".batchsim/outputs").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn validation_failure_leaves_state_untouched() {
    let (_tmp, root) = snake_study();
    ok(&root, &["workspace", "init", "--configdir", "config_shipyard"]);
    let before = state(&root);
    let r = batchsim(&root, &["pool", "add"], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("needed 48, available 24"), "{}", r.stderr);
    assert_eq!(state(&root), before);
    assert_eq!(batchsim(&root, &["workspace", "init", "--configdir", "config_shipyard"], &[]).code, 2);
    assert_eq!(state(&root), before);
}

#[test]
fn edited_configdir_is_refused() {
    let (_tmp, root) = snake_study();
    ok(&root, &["workspace", "init", "--configdir", "config_shipyard"]);
    let pool = root.join("config_shipyard/pool.yaml");
    let text = fs::read_to_string(&pool).unwrap().replace("dedicated: 2", "dedicated: 1");
    fs::write(&pool, text).unwrap();
    let r = batchsim(&root, &["--configdir", "config_shipyard", "pool", "add"], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("differs"), "{}", r.stderr);
}

#[test]
fn malformed_config_names_the_key() {
    let (_tmp, root) = snake_study();
    let pool = root.join("config_shipyard/pool.yaml");
    fs::write(&pool, fs::read_to_string(&pool).unwrap().replace("sku:", "skew:")).unwrap();
    let r = batchsim(&root, &["workspace", "init", "--configdir", "config_shipyard"], &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("pool.yaml") && r.stderr.contains("skew"), "{}", r.stderr);
}

#[test]
fn credentials_are_never_printed() {
    let (_tmp, root) = snake_study();
    run_to_completion(&root);
    let mut seen = ok(&root, &["status"]);
    seen += &ok(&root, &["ledger", "report", "--format", "items"]);
    seen += &ok(&root, &["repro", "pack", "--output", "study.json"]);
    seen += &fs::read_to_string(root.join("study.json")).unwrap();
    for n in ["events.log", "ledger.tsv", "status.json"] {
        seen += &fs::read_to_string(root.join(".batchsim/outputs").join(n)).unwrap();
    }
    for secret in ["storagekey", "batchkey"] {
        assert!(!seen.contains(secret), "{secret} leaked");
    }
    assert!(ok(&root, &["repro", "verify", "study.json"]).contains("verified"));
}

#[test]
fn scenario_run_reports_costs() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["scenario", "run", "snake2d", "--seed", "1", "--pack", "s.json"]);
    assert!(out.contains("VM cost: 55.44 USD"), "{out}");
    assert!(out.contains("VM cost under reserved_3_year: 24.61 USD"), "{out}");
    assert!(ok(tmp.path(), &["repro", "verify", "s.json"]).contains("verified"));
    let r = batchsim(tmp.path(), &["scenario", "run", "snake2d", "--default-quota"], &[]);
    assert_eq!(r.code, 2);
    assert_eq!(batchsim(tmp.path(), &["scenario", "run", "nope"], &[]).code, 2);
}

#[test]
fn bench_tables() {
    let tmp = TempDir::new().unwrap();
    let lat = ok(tmp.path(), &["bench", "latency", "--model", "colonial-one"]);
    assert!(lat.lines().any(|l| l == "0\t1.25"), "{lat}");
    let sc = ok(tmp.path(), &["bench", "scaling", "--mode", "weak", "--nodes", "1,2,4"]);
    assert_eq!(sc.lines().filter(|l| !l.starts_with('#')).count(), 3);
}
