use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use batchsim::billing::{counterfactual, report};
use batchsim::catalog::PricingPlan;
use batchsim::config::{read_documents, ConfigError, ConfigSet, Documents};
use batchsim::fabric::InterconnectModel;
use batchsim::repro::{self, Archive, ReproError, Verdict};
use batchsim::scenarios::{builtin_scenarios, find_scenario, run_scenario, ScenarioOptions};
use batchsim::session::{ingress_batches, Command, Outcome, Session, SessionError};
use batchsim::workloads::osu;
use batchsim::workloads::poisson::{solve_cg, CgOptions, PoissonGrid, Preconditioner, RhsSpec};
use batchsim::workloads::scaling::{scaling_table, scaling_tsv, GridShape, ScalingConstants, ScalingMode};

const STATE_DIR: &str = ".batchsim";
const SESSION_FILE: &str = "session.json";

const EXIT_VALIDATION: u8 = 2;
const EXIT_SIMULATION: u8 = 3;
const EXIT_USAGE: u8 = 64;

/// Simulated cloud batch service driven by YAML configuration.
#[derive(Debug, Parser)]
#[command(name = "batchsim", version)]
struct Cli {
    /// Directory holding config.yaml, credentials.yaml, pool.yaml and jobs.yaml.
    #[arg(long, global = true, env = "BATCHSIM_CONFIGDIR")]
    configdir: Option<PathBuf>,
    /// Directory whose `.batchsim/` holds the workspace state.
    #[arg(long, global = true, env = "BATCHSIM_WORKSPACE", default_value = ".")]
    workspace: PathBuf,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Workspace lifecycle.
    #[command(subcommand)]
    Workspace(WorkspaceCmd),
    /// Storage accounts.
    #[command(subcommand)]
    Storage(StorageCmd),
    /// File shares.
    #[command(subcommand)]
    Share(ShareCmd),
    /// Share directories.
    #[command(subcommand)]
    Directory(DirectoryCmd),
    /// Core quotas.
    #[command(subcommand)]
    Quota(QuotaCmd),
    /// Compute pools.
    #[command(subcommand)]
    Pool(PoolCmd),
    /// Data movement between local disk and shares.
    #[command(subcommand)]
    Data(DataCmd),
    /// Jobs from jobs.yaml.
    #[command(subcommand)]
    Jobs(JobsCmd),
    /// Node operations.
    #[command(subcommand)]
    Node(NodeCmd),
    /// Run the simulation until all jobs finish.
    Wait,
    /// Print the service state as JSON.
    Status,
    /// Billing.
    #[command(subcommand)]
    Ledger(LedgerCmd),
    /// Built-in studies.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Benchmark workloads run directly.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Reproducibility packages.
    #[command(subcommand)]
    Repro(ReproCmd),
}

#[derive(Debug, Subcommand)]
enum WorkspaceCmd {
    /// Snapshot the configuration and start a workspace.
    Init {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
enum StorageCmd {
    #[command(subcommand)]
    Account(AccountCmd),
}

#[derive(Debug, Subcommand)]
enum AccountCmd {
    /// Create the storage account (named in config.yaml unless given).
    Create {
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum ShareCmd {
    Create {
        #[arg(long)]
        name: String,
        /// Quota in GiB.
        #[arg(long)]
        quota: u64,
    },
}

#[derive(Debug, Subcommand)]
enum DirectoryCmd {
    Create {
        #[arg(long)]
        share: String,
        #[arg(long)]
        name: String,
    },
}

#[derive(Debug, Subcommand)]
enum QuotaCmd {
    Set {
        /// Defaults to the workspace region.
        #[arg(long)]
        region: Option<String>,
        #[arg(long)]
        dedicated: Option<u32>,
        #[arg(long)]
        low_priority: Option<u32>,
    },
}

#[derive(Debug, Subcommand)]
enum PoolCmd {
    /// Create the pool from pool.yaml.
    Add,
    Del {
        /// Defaults to the pool in pool.yaml.
        #[arg(long)]
        id: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum DataCmd {
    /// Upload every `data_ingress` source listed in config.yaml.
    Ingress,
    Download {
        #[arg(long)]
        share: String,
        #[arg(long)]
        dir: String,
        /// Local directory receiving `<share>/<dir>/...`.
        #[arg(long, default_value = "download")]
        destination: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum JobsCmd {
    /// Submit every job in jobs.yaml.
    Add {
        /// Return right after submission.
        #[arg(long)]
        no_wait: bool,
        /// Times a task is re-queued after a node preemption.
        #[arg(long, default_value_t = 0)]
        retries: u32,
    },
    Del {
        /// Defaults to every job in jobs.yaml.
        #[arg(long)]
        id: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum NodeCmd {
    /// Preempt a low-priority node now.
    Preempt { id: String },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Tsv,
    Items,
}

#[derive(Debug, Subcommand)]
enum LedgerCmd {
    Report {
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Also re-price recorded VM usage under this plan.
        #[arg(long)]
        plan: Option<PricingPlan>,
    },
}

#[derive(Debug, Subcommand)]
enum ScenarioCmd {
    List,
    Run {
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Leave the default core quota instead of raising it.
        #[arg(long)]
        default_quota: bool,
        /// Write events.log and ledger.tsv here.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Write a reproducibility package here.
        #[arg(long)]
        pack: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Model {
    Azure,
    ColonialOne,
}

impl Model {
    fn model(self) -> InterconnectModel {
        match self {
            Model::Azure => InterconnectModel::azure(),
            Model::ColonialOne => InterconnectModel::colonial_one(),
        }
    }
}

#[derive(Debug, Args)]
struct ModelArg {
    #[arg(long, value_enum, default_value_t = Model::Azure)]
    model: Model,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Strong,
    Weak,
}

#[derive(Debug, Subcommand)]
enum BenchCmd {
    /// Ping-pong latency table.
    Latency {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = osu::DEFAULT_MAX_BYTES)]
        max_bytes: u64,
    },
    /// Windowed bandwidth table.
    Bandwidth {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = osu::DEFAULT_MAX_BYTES)]
        max_bytes: u64,
        #[arg(long, default_value_t = osu::DEFAULT_WINDOW)]
        window: u64,
    },
    /// Solve the Poisson problem on the n^3 unit cube.
    Poisson {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 1e-12)]
        tolerance: f64,
        #[arg(long)]
        jacobi: bool,
    },
    /// Modeled seconds per iteration against node count.
    Scaling {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_enum, default_value_t = Mode::Strong)]
        mode: Mode,
        #[arg(long, num_args = 3, default_values_t = [1000u64, 1000, 50])]
        grid: Vec<u64>,
        #[arg(long, default_value_t = 24)]
        procs_per_node: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 4, 8])]
        nodes: Vec<u64>,
    },
}

#[derive(Debug, Subcommand)]
enum ReproCmd {
    /// Pack the workspace's finished run.
    Pack {
        #[arg(long)]
        output: PathBuf,
    },
    /// Re-run an archive and compare its digests.
    Verify { archive: PathBuf },
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Simulation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Simulation(_) => EXIT_SIMULATION,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Simulation(m) => m,
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        if e.exit_code() == i32::from(EXIT_SIMULATION) {
            CliError::Simulation(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ReproError> for CliError {
    fn from(e: ReproError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Validation(format!("{}: {e}", path.display()))
}

/// What `.batchsim/session.json` holds.
#[derive(Debug, Serialize, Deserialize)]
struct SavedSession {
    seed: u64,
    /// Absolute configuration directory given at init.
    configdir: PathBuf,
    transcript: Vec<Command>,
}

struct Workspace {
    root: PathBuf,
    saved: SavedSession,
    documents: Documents,
    session: Session,
}

impl Workspace {
    fn state_dir(root: &Path) -> PathBuf {
        root.join(STATE_DIR)
    }

    fn load(root: &Path) -> Result<Option<Workspace>, CliError> {
        let dir = Self::state_dir(root);
        let file = dir.join(SESSION_FILE);
        if !file.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&file).map_err(io_err(&file))?;
        let saved: SavedSession = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: corrupt workspace state: {e}", file.display())))?;
        let documents = read_documents(dir.join("config"))?;
        let config = ConfigSet::from_documents(&documents)?;
        let session = Session::replay(config, saved.seed, &saved.transcript)?;
        Ok(Some(Workspace { root: root.to_path_buf(), saved, documents, session }))
    }

    fn save(&mut self) -> Result<(), CliError> {
        let dir = Self::state_dir(&self.root);
        let outputs = dir.join("outputs");
        fs::create_dir_all(&outputs).map_err(io_err(&outputs))?;
        self.saved.transcript = self.session.transcript().to_vec();
        let file = dir.join(SESSION_FILE);
        let json = serde_json::to_string_pretty(&self.saved).expect("session serializes");
        fs::write(&file, json + "\n").map_err(io_err(&file))?;
        for (name, body) in self.session.outputs() {
            let p = outputs.join(name);
            fs::write(&p, body).map_err(io_err(&p))?;
        }
        Ok(())
    }

    /// The configuration directory, which must still match the snapshot.
    fn configdir(&self, given: Option<&Path>) -> Result<PathBuf, CliError> {
        let Some(dir) = given else { return Ok(self.saved.configdir.clone()) };
        let now = read_documents(dir)?;
        let differs = self.documents.iter().any(|(k, v)| now.get(k) != Some(v))
            || now.keys().any(|k| !self.documents.contains_key(k));
        if differs {
            return Err(CliError::Validation(format!(
                "configuration in {} differs from the workspace snapshot; start a new workspace to use it",
                dir.display()
            )));
        }
        Ok(dir.to_path_buf())
    }

    fn apply(&mut self, command: Command) -> Result<Outcome, CliError> {
        let out = self.session.apply(command)?;
        self.save()?;
        Ok(out)
    }
}

fn report_outcome(out: &Outcome) {
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", out.message);
}

fn require(ws: Option<Workspace>) -> Result<Workspace, CliError> {
    ws.ok_or_else(|| CliError::from(SessionError::MissingWorkspace))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let root = cli.workspace.clone();
    let configdir = cli.configdir.as_deref();
    match cli.command {
        Cmd::Workspace(WorkspaceCmd::Init { seed }) => {
            if Workspace::load(&root)?.is_some() {
                return Err(SessionError::WorkspaceExists.into());
            }
            let dir = configdir.ok_or_else(|| {
                CliError::Validation("no configuration directory: pass --configdir or set BATCHSIM_CONFIGDIR".into())
            })?;
            let documents = read_documents(dir)?;
            let config = ConfigSet::from_documents(&documents)?;
            let mut session = Session::new(config, seed);
            let out = session.apply(Command::WorkspaceInit)?;
            let snapshot = Workspace::state_dir(&root).join("config");
            fs::create_dir_all(&snapshot).map_err(io_err(&snapshot))?;
            for (name, body) in &documents {
                fs::write(snapshot.join(name), body).map_err(io_err(&snapshot))?;
            }
            let abs = fs::canonicalize(dir).map_err(io_err(dir))?;
            let mut ws = Workspace {
                root,
                saved: SavedSession { seed, configdir: abs, transcript: Vec::new() },
                documents,
                session,
            };
            ws.save()?;
            report_outcome(&out);
        }
        Cmd::Storage(StorageCmd::Account(AccountCmd::Create { name })) => {
            workspace_command(&root, configdir, Command::StorageAccountCreate { name })?
        }
        Cmd::Share(ShareCmd::Create { name, quota }) => {
            workspace_command(&root, configdir, Command::ShareCreate { name, quota_gib: quota })?
        }
        Cmd::Directory(DirectoryCmd::Create { share, name }) => {
            workspace_command(&root, configdir, Command::DirectoryCreate { share, name })?
        }
        Cmd::Quota(QuotaCmd::Set { region, dedicated, low_priority }) => workspace_command(
            &root,
            configdir,
            Command::QuotaSet { region, dedicated_cores: dedicated, low_priority_cores: low_priority },
        )?,
        Cmd::Pool(PoolCmd::Add) => workspace_command(&root, configdir, Command::PoolAdd)?,
        Cmd::Pool(PoolCmd::Del { id }) => workspace_command(&root, configdir, Command::PoolDel { pool_id: id })?,
        Cmd::Data(DataCmd::Ingress) => {
            let mut ws = require(Workspace::load(&root)?)?;
            let dir = ws.configdir(configdir)?;
            let batches = ingress_batches(ws.session.config(), &dir)?;
            let out = ws.apply(Command::DataIngress { batches })?;
            report_outcome(&out);
        }
        Cmd::Data(DataCmd::Download { share, dir, destination }) => {
            let mut ws = require(Workspace::load(&root)?)?;
            ws.configdir(configdir)?;
            let out = ws.apply(Command::DataDownload { share, directory: dir })?;
            if let Some(d) = &out.download {
                d.materialize(&destination).map_err(io_err(&destination))?;
            }
            report_outcome(&out);
        }
        Cmd::Jobs(JobsCmd::Add { no_wait, retries }) => {
            workspace_command(&root, configdir, Command::JobsAdd { wait: !no_wait, retries })?
        }
        Cmd::Jobs(JobsCmd::Del { id }) => workspace_command(&root, configdir, Command::JobsDel { job_id: id })?,
        Cmd::Node(NodeCmd::Preempt { id }) => workspace_command(&root, configdir, Command::NodePreempt { node_id: id })?,
        Cmd::Wait => workspace_command(&root, configdir, Command::Wait)?,
        Cmd::Status => {
            let ws = require(Workspace::load(&root)?)?;
            let svc = ws.session.service().expect("initialized workspace");
            println!("{}", serde_json::to_string_pretty(&svc.status()).expect("status serializes"));
        }
        Cmd::Ledger(LedgerCmd::Report { format, plan }) => {
            let ws = require(Workspace::load(&root)?)?;
            let svc = ws.session.service().expect("initialized workspace");
            let ledger = svc.ledger_snapshot();
            match format {
                Format::Table => print!("{}", report(&ledger).render_table()),
                Format::Tsv => print!("{}", report(&ledger).to_tsv()),
                Format::Items => print!("{}", ledger.to_tsv()),
            }
            if let Some(p) = plan {
                let usd = counterfactual(&ledger, svc.catalog(), p).map_err(|e| CliError::Validation(e.to_string()))?;
                println!("VM usage re-priced under {p}: {usd:.4} USD");
            }
        }
        Cmd::Scenario(ScenarioCmd::List) => {
            for s in builtin_scenarios() {
                println!("{}\t{} x {}\t{} h\t{}", s.name, s.nodes, s.sku, s.expected_wall_hours, s.plan);
            }
        }
        Cmd::Scenario(ScenarioCmd::Run { name, seed, default_quota, output_dir, pack }) => {
            let scenario = find_scenario(&name).ok_or_else(|| {
                let names: Vec<_> = builtin_scenarios().iter().map(|s| s.name).collect();
                CliError::Validation(format!("unknown scenario `{name}`; expected one of {}", names.join(", ")))
            })?;
            let options = if default_quota { ScenarioOptions { dedicated_quota: None } } else { ScenarioOptions::default() };
            let run = run_scenario(&scenario, seed, &options)?;
            for o in &run.outcomes {
                println!("task {}/{}: {:?}", o.job_id, o.task_id, o.state);
            }
            print!("{}", report(&run.ledger).render_table());
            println!("VM cost: {:.2} USD", run.vm_cost);
            let svc = run.session.service().expect("initialized");
            for p in [PricingPlan::Reserved1Year, PricingPlan::Reserved3Year] {
                let usd = counterfactual(&run.ledger, svc.catalog(), p).map_err(|e| CliError::Validation(e.to_string()))?;
                println!("VM cost under {p}: {usd:.2} USD");
            }
            if let Some(dir) = output_dir {
                fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                for (name, body) in run.session.outputs() {
                    fs::write(dir.join(name), body).map_err(io_err(&dir))?;
                }
            }
            if let Some(path) = pack {
                let archive = repro::pack(&run.session, &scenario.documents())?;
                fs::write(&path, archive.to_json()).map_err(io_err(&path))?;
                println!("packed {}", path.display());
            }
        }
        Cmd::Bench(b) => bench(b)?,
        Cmd::Repro(ReproCmd::Pack { output }) => {
            let ws = require(Workspace::load(&root)?)?;
            let archive = repro::pack(&ws.session, &ws.documents)?;
            fs::write(&output, archive.to_json()).map_err(io_err(&output))?;
            println!("packed {} commands into {}", archive.manifest.transcript.len(), output.display());
        }
        Cmd::Repro(ReproCmd::Verify { archive }) => {
            let text = fs::read_to_string(&archive).map_err(io_err(&archive))?;
            let a = Archive::from_json(&text)?;
            match repro::verify(&a)? {
                Verdict::Pass => println!("verified: all digests match"),
                Verdict::Fail { artifact, detail } => {
                    return Err(CliError::Simulation(format!("verification failed at {artifact}: {detail}")));
                }
            }
        }
    }
    Ok(())
}

fn workspace_command(root: &Path, configdir: Option<&Path>, command: Command) -> Result<(), CliError> {
    let mut ws = require(Workspace::load(root)?)?;
    ws.configdir(configdir)?;
    let out = ws.apply(command)?;
    report_outcome(&out);
    Ok(())
}

fn bench(b: BenchCmd) -> Result<(), CliError> {
    match b {
        BenchCmd::Latency { model, max_bytes } => {
            let m = model.model.model();
            let rows = osu::osu_latency(&m, &osu::latency_sizes(max_bytes), osu::DEFAULT_REPETITIONS, None);
            print!("{}", osu::latency_tsv(&m, &rows));
        }
        BenchCmd::Bandwidth { model, max_bytes, window } => {
            if window == 0 {
                return Err(CliError::Validation("window must be at least 1".into()));
            }
            let m = model.model.model();
            let rows = osu::osu_bandwidth(&m, &osu::bandwidth_sizes(max_bytes), window);
            print!("{}", osu::bandwidth_tsv(&m, &rows));
        }
        BenchCmd::Poisson { n, tolerance, jacobi } => {
            let grid = PoissonGrid::unit_cube(n).map_err(|e| CliError::Validation(e.to_string()))?;
            let rhs = RhsSpec::default();
            let opts = CgOptions {
                tol_abs: tolerance,
                preconditioner: if jacobi { Preconditioner::Jacobi } else { Preconditioner::Identity },
                ..Default::default()
            };
            let r = solve_cg(&grid, &rhs.rhs(&grid), &opts).map_err(|e| CliError::Simulation(e.to_string()))?;
            let err = batchsim::workloads::poisson::max_abs_diff(&rhs.exact(&grid).expect("closed form"), &r.solution);
            println!("grid\t{n}^3");
            println!("iterations\t{}", r.iterations);
            println!("final_residual\t{:e}", r.final_residual);
            println!("true_residual\t{:e}", r.true_residual);
            println!("max_error\t{err:e}");
            println!("wall_seconds\t{:.3}", r.runtime_seconds);
        }
        BenchCmd::Scaling { model, mode, grid, procs_per_node, nodes } => {
            let m = model.model.model();
            let mode = match mode {
                Mode::Strong => ScalingMode::Strong,
                Mode::Weak => ScalingMode::Weak,
            };
            if grid.iter().any(|d| *d < 2) || procs_per_node == 0 || nodes.contains(&0) {
                return Err(CliError::Validation("grid dimensions must be at least 2 and counts positive".into()));
            }
            let base = GridShape { nx: grid[0], ny: grid[1], nz: grid[2] };
            let rows = scaling_table(base, mode, &nodes, procs_per_node, &m, &ScalingConstants::default());
            print!("{}", scaling_tsv(mode, &m, &rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
