use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use secfu::bounds::{BoundsError, Capacity, ClusterPlan};
use secfu::cohort::{assign_clusters, sample_population, CohortError};
use secfu::crypto::FieldElement;
use secfu::fltrain::{
    ensemble_accuracy, make_synthetic_task, retrain_cluster, train_federation, write_metrics_csv, TaskSpec,
    TrainConfig, TrainError,
};
use secfu::montecarlo::{
    estimate_failure, is_nondecreasing, sweep, write_estimates_csv, write_sweep_csv, MonteCarloError, Requirement,
    SweepGrid,
};
use secfu::rng::derive_rng;
use secfu::secagg::{audit_privacy, run_round, RoundConfig, SecaggError};
use secfu::topology::communication_graph;
use secfu::unlearning::{sample_batch, sample_target, UnlearnError, UnlearnMode, UnlearnState};
use secfu::{par_gen, SystemParams};

use crate::config::{RunConfig, RunMode};

/// Commonly quoted cluster size for the reference configuration.
pub const REFERENCE_CLUSTER_SIZE: u64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Internal = 1,
    Infeasible = 2,
    GuardViolation = 3,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub exit: ExitCode,
    /// The `summary ...` line printed on standard output.
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

enum Failure {
    Infeasible(String),
    Guard(String),
    Internal(String),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Internal(format!("io error: {e}"))
    }
}

impl From<BoundsError> for Failure {
    fn from(e: BoundsError) -> Self {
        match e {
            BoundsError::GuardViolation { .. } => Failure::Guard(e.to_string()),
            BoundsError::InvalidParameter(_) => Failure::Internal(e.to_string()),
            _ => Failure::Infeasible(e.to_string()),
        }
    }
}

impl From<CohortError> for Failure {
    fn from(e: CohortError) -> Self {
        Failure::Infeasible(e.to_string())
    }
}

impl From<MonteCarloError> for Failure {
    fn from(e: MonteCarloError) -> Self {
        match e {
            MonteCarloError::Bounds(b) => b.into(),
            MonteCarloError::Cohort(c) => c.into(),
            other => Failure::Internal(other.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        Failure::Internal(e.to_string())
    }
}

impl From<SecaggError> for Failure {
    fn from(e: SecaggError) -> Self {
        Failure::Internal(e.to_string())
    }
}

struct Output {
    dir: PathBuf,
    artifacts: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.artifacts.push(path);
        Ok(())
    }
}

/// Executes the configured mode, writing artifacts under
/// `config.output_path`.
pub fn run(config: &RunConfig) -> RunOutcome {
    let mut out = match Output::new(&config.output_path) {
        Ok(o) => o,
        Err(e) => {
            return RunOutcome {
                exit: ExitCode::Internal,
                summary: format!("summary error=internal reason=\"cannot create output directory: {e}\""),
                artifacts: Vec::new(),
            }
        }
    };
    let result = match config.mode {
        RunMode::Pargen => pargen(config, &mut out),
        RunMode::SimulateSeq => simulate(config, UnlearnMode::Sequential, &mut out),
        RunMode::SimulateBat => simulate(config, UnlearnMode::Batch, &mut out),
        RunMode::MonteCarlo => montecarlo(config, &mut out),
        RunMode::Sweep => run_sweep(config, &mut out),
        RunMode::Train => train(config, &mut out),
    };
    let (exit, summary) = match result {
        Ok(r) => r,
        Err(Failure::Infeasible(m)) => (ExitCode::Infeasible, format!("summary error=infeasible reason=\"{m}\"")),
        Err(Failure::Guard(m)) => (ExitCode::GuardViolation, format!("summary error=guard reason=\"{m}\"")),
        Err(Failure::Internal(m)) => (ExitCode::Internal, format!("summary error=internal reason=\"{m}\"")),
    };
    RunOutcome { exit, summary, artifacts: out.artifacts }
}

type ModeResult = Result<(ExitCode, String), Failure>;

fn plan_line(plan: &ClusterPlan) -> String {
    format!(
        "k={} s={} t={} q={} tau_seq={} tau_bat={}",
        plan.cluster_size,
        plan.n_clusters,
        plan.shamir_threshold,
        plan.max_unlearn_per_cluster,
        plan.capacity_seq,
        plan.capacity_bat
    )
}

fn capacity_text(c: &Capacity) -> String {
    match c {
        Capacity::Bounded(v) => v.to_string(),
        Capacity::GuardViolated { guard, value } => format!("guard-violated ({guard} guard value {value:.6})"),
    }
}

fn guard_exit(plan: &ClusterPlan) -> ExitCode {
    let violated = [plan.capacity_seq, plan.capacity_bat].iter().any(|c| c.value().is_none());
    if violated {
        ExitCode::GuardViolation
    } else {
        ExitCode::Success
    }
}

fn pargen(config: &RunConfig, out: &mut Output) -> ModeResult {
    let p = &config.params;
    let plan = par_gen(p)?;
    let z = plan.sizes;
    let mut report = String::new();
    writeln!(report, "[pargen]").unwrap();
    writeln!(report, "n_users = {}", p.n_users).unwrap();
    writeln!(report, "k1 = {}", z.k1).unwrap();
    writeln!(report, "k2 = {}", z.k2).unwrap();
    writeln!(report, "k3 = {}", z.k3).unwrap();
    writeln!(report, "k = {}", plan.cluster_size).unwrap();
    writeln!(report, "s = {}", plan.n_clusters).unwrap();
    writeln!(report, "t = {}", plan.shamir_threshold).unwrap();
    writeln!(report, "q = {}", plan.max_unlearn_per_cluster).unwrap();
    writeln!(report, "tau_seq = {}", capacity_text(&plan.capacity_seq)).unwrap();
    writeln!(report, "tau_bat = {}", capacity_text(&plan.capacity_bat)).unwrap();
    let mut summary = format!("summary {}", plan_line(&plan));
    if *p == SystemParams::reference() {
        let delta = plan.cluster_size as i64 - REFERENCE_CLUSTER_SIZE as i64;
        writeln!(report, "reference_k = {REFERENCE_CLUSTER_SIZE}").unwrap();
        writeln!(report, "reference_delta = {delta}").unwrap();
        write!(summary, " reference_k={REFERENCE_CLUSTER_SIZE} delta={delta:+}").unwrap();
    }
    out.write("pargen.txt", report.as_bytes())?;
    Ok((guard_exit(&plan), summary))
}

fn simulate(config: &RunConfig, mode: UnlearnMode, out: &mut Output) -> ModeResult {
    let p = &config.params;
    let plan = par_gen(p)?;
    let requests = config.requests.unwrap_or(0);
    let mut rng = derive_rng("cli/simulate", config.master_seed, &[]);
    let n = p.n_users as usize;
    let assignment = assign_clusters(n, plan.cluster_size as usize, plan.n_clusters as usize, &mut rng)?;
    let pop = sample_population(n, p.frac_adversarial, p.frac_dropout, &mut rng);
    let mut st = UnlearnState::from_plan(mode, &plan, assignment.clone()).map_err(|e| match e {
        UnlearnError::Capacity(b) => Failure::from(b),
        other => Failure::Internal(other.to_string()),
    })?;

    let mut report = String::new();
    writeln!(report, "[simulate]").unwrap();
    writeln!(report, "mode = {mode}").unwrap();
    writeln!(report, "{}", plan_line(&plan).replace(' ', "\n").replace('=', " = ")).unwrap();
    writeln!(report, "requests = {requests}").unwrap();

    let mut stop: Option<UnlearnError> = None;
    let mut budget_rejections = 0u64;
    match mode {
        UnlearnMode::Sequential => {
            for _ in 0..requests {
                let Some(u) = sample_target(st.assignment(), st.removed(), &pop.adversarial, &mut rng) else { break };
                match st.process_sequential(u) {
                    Ok(_) => {}
                    Err(UnlearnError::PerClusterBudgetExceeded { .. }) => budget_rejections += 1,
                    Err(e) => {
                        stop = Some(e);
                        break;
                    }
                }
            }
        }
        UnlearnMode::Batch => {
            let targets = sample_batch(st.assignment(), st.removed(), &pop.adversarial, requests as usize, &mut rng);
            match st.process_batch(&targets) {
                Ok(_) => {}
                Err(UnlearnError::PerClusterBudgetExceeded { .. }) => budget_rejections += 1,
                Err(e) => stop = Some(e),
            }
        }
    }
    let stats = st.retrained_statistics();
    writeln!(report, "requests_consumed = {}", st.requests_consumed()).unwrap();
    writeln!(report, "budget_rejections = {budget_rejections}").unwrap();
    writeln!(report, "total_retrained = {}", stats.total_retrained).unwrap();
    writeln!(report, "max_q = {}", stats.max_q).unwrap();
    for (q, count) in &stats.q_histogram {
        writeln!(report, "q_histogram.{q} = {count}").unwrap();
    }
    if let Some(e) = &stop {
        let kind = match e {
            UnlearnError::CapacityExhausted { .. } => "CapacityExhausted",
            _ => "Error",
        };
        writeln!(report, "stopped = {kind}: {e}").unwrap();
    }

    // One aggregation round per cluster after unlearning, audited against
    // the adversarial set.
    for (c, members) in assignment.clusters() {
        let graph = communication_graph(members.len());
        let unlearned: BTreeSet<_> = members.iter().copied().filter(|u| st.removed().contains(u)).collect();
        let dropouts: BTreeSet<_> =
            members.iter().copied().filter(|u| pop.dropped.contains(u) && !unlearned.contains(u)).collect();
        let mut input_rng = derive_rng("cli/simulate/inputs", config.master_seed, &[c as u64]);
        let inputs: BTreeMap<_, _> =
            members.iter().map(|&u| (u, (0..4).map(|_| FieldElement::random(&mut input_rng)).collect())).collect();
        let cfg = RoundConfig {
            cluster_id: c,
            t: plan.shamir_threshold as usize,
            nonce: ((config.master_seed as u128) << 64) | c as u128,
            unlearned,
        };
        match run_round(members, &graph, &inputs, &dropouts, &cfg) {
            Ok(mut tr) => {
                tr.privacy_findings = audit_privacy(&tr, &pop.adversarial);
                report.push_str(&tr.report());
            }
            Err(SecaggError::ReconstructionFailure { alive, .. }) => {
                writeln!(
                    report,
                    "[round]\ncluster_id = {c}\nalive = {alive}\ndropouts = {}\nsuccess = false\nfindings = 0",
                    dropouts.len()
                )
                .unwrap();
            }
            Err(e) => return Err(e.into()),
        }
    }

    let mut log = Vec::new();
    st.write_log_csv(&mut log)?;
    out.write("retrain_log.csv", &log)?;
    out.write("simulate.txt", report.as_bytes())?;

    let base = format!(
        "summary {} requests_consumed={} total_retrained={} budget_rejections={budget_rejections}",
        plan_line(&plan),
        st.requests_consumed(),
        stats.total_retrained
    );
    match stop {
        Some(UnlearnError::CapacityExhausted { .. }) => {
            Ok((ExitCode::GuardViolation, format!("{base} stopped=CapacityExhausted")))
        }
        Some(e) => Err(Failure::Internal(e.to_string())),
        None => Ok((ExitCode::Success, base)),
    }
}

fn montecarlo(config: &RunConfig, out: &mut Output) -> ModeResult {
    let p = &config.params;
    let plan = par_gen(p)?;
    let trials = config.trials.unwrap_or(0);
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for req in Requirement::ALL {
        match estimate_failure(req, p, &plan, trials, config.master_seed) {
            Ok(r) => reports.push(r),
            Err(MonteCarloError::Bounds(BoundsError::GuardViolation { .. })) => skipped.push(req.to_string()),
            Err(e) => return Err(e.into()),
        }
    }
    let mut csv = Vec::new();
    write_estimates_csv(&reports, &mut csv)?;
    out.write("montecarlo.csv", &csv)?;
    let mut summary = format!("summary {} trials={trials}", plan_line(&plan));
    for r in &reports {
        write!(summary, " {}={}/{}", r.requirement, r.failures, r.trials).unwrap();
    }
    if skipped.is_empty() {
        Ok((ExitCode::Success, summary))
    } else {
        write!(summary, " guard_skipped={}", skipped.join(",")).unwrap();
        Ok((ExitCode::GuardViolation, summary))
    }
}

/// One-at-a-time sweeps around the configured point over the grids used in
/// the docs.
fn run_sweep(config: &RunConfig, out: &mut Output) -> ModeResult {
    let base = SweepGrid::around(&config.params);
    let grids = [
        SweepGrid { sigma: vec![10, 20, 40], ..base.clone() },
        SweepGrid { gamma: vec![0.05, 0.1, 0.2], ..base.clone() },
        SweepGrid { delta: vec![0.05, 0.1, 0.2], ..base.clone() },
        SweepGrid { zeta: vec![0.05, 0.1, 0.2], ..base.clone() },
        SweepGrid { n_users: (1..=10).map(|i| i * 100).collect(), ..base.clone() },
    ];
    let names = ["sigma", "gamma", "delta", "zeta", "n_users"];
    let mut rows = Vec::new();
    let mut summary = String::from("summary");
    for (name, grid) in names.iter().zip(&grids) {
        let part = sweep(grid);
        let ks: Vec<Option<u64>> = part.iter().map(|r| r.k()).collect();
        let infeasible = part.iter().filter(|r| !r.feasible()).count();
        write!(summary, " {name}:k_nondecreasing={} infeasible={infeasible}", is_nondecreasing(&ks)).unwrap();
        rows.extend(part);
    }
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv)?;
    out.write("sweep.csv", &csv)?;
    Ok((ExitCode::Success, summary))
}

fn train(config: &RunConfig, out: &mut Output) -> ModeResult {
    let p = &config.params;
    let plan = par_gen(p)?;
    let n = p.n_users as usize;
    let spec = TaskSpec { n_users: n, ..TaskSpec::default() };
    let task = make_synthetic_task(&spec, config.master_seed);
    let mut rng = derive_rng("cli/train", config.master_seed, &[]);
    let assignment = assign_clusters(n, plan.cluster_size as usize, plan.n_clusters as usize, &mut rng)?;
    let cfg = TrainConfig {
        rounds: config.rounds.unwrap_or(1),
        xi: p.shamir_rate,
        dropout_rate: p.frac_dropout,
        master_seed: config.master_seed,
        ..TrainConfig::default()
    };
    let run = train_federation(&assignment, &task, &cfg)?;
    let mut csv = Vec::new();
    write_metrics_csv(&run.metrics, &mut csv)?;
    out.write("metrics.csv", &csv)?;
    let before = ensemble_accuracy(&run.models, &task.test);
    let mut summary = format!("summary {} rounds={} ensemble_accuracy={before:.4}", plan_line(&plan), cfg.rounds);

    let requests = config.requests.unwrap_or(0);
    if requests > 0 {
        let mut st =
            UnlearnState::new(UnlearnMode::Sequential, assignment.clone(), requests, plan.max_unlearn_per_cluster);
        let pop = sample_population(n, p.frac_adversarial, 0.0, &mut rng);
        let mut models = run.models.clone();
        let mut log = String::from("request_index,cluster_id,target,users_retrained,ensemble_accuracy\n");
        for i in 0..requests {
            let Some(u) = sample_target(st.assignment(), st.removed(), &pop.adversarial, &mut rng) else { break };
            match st.process_sequential(u) {
                Ok(job) => {
                    let c = job.cluster_id;
                    let unlearned: BTreeSet<_> = st.removed().clone();
                    models[c] = retrain_cluster(c, assignment.members(c), &unlearned, &task.users, &cfg)?;
                    let acc = ensemble_accuracy(&models, &task.test);
                    writeln!(log, "{i},{c},{u},{},{acc:.4}", job.users_retrained()).unwrap();
                }
                Err(UnlearnError::PerClusterBudgetExceeded { .. }) => {}
                Err(e) => return Err(Failure::Internal(e.to_string())),
            }
        }
        out.write("unlearn.csv", log.as_bytes())?;
        let after = ensemble_accuracy(&models, &task.test);
        write!(summary, " unlearned={} ensemble_accuracy_after={after:.4}", st.requests_consumed()).unwrap();
    }
    Ok((ExitCode::Success, summary))
}
