//! Run configuration, orchestration of the `simulate`, `verify` and `export`
//! commands, and the artifact manifest.
//!
//! All outputs of one `(config, seed)` pair are byte-identical across runs
//! and thread counts, except the timestamps in `manifest.json`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::counterexample::{verdict_table, verify_appendix, AppendixPlan};
use crate::exec::Execution;
use crate::flow::{
    check_cocycle, check_flow_axioms, write_trace_csv, AnalyticFlow, ConstantFlow, EvalQuery, FlowElement, SamplePlan,
    TraceRow,
};
use crate::motion::{CrossingRule, DiffusionSpec, GammaFamily, HarrisSpec, MotionError, MotionModel, SystemState};
use crate::rng::RngStream;
use crate::skeleton::{
    build_skeleton, check_sp_properties, read_snapshot, write_snapshot, SkeletonConfig, SkeletonError, SkeletonFlow,
    SpCheckPlan,
};
use crate::stats;
use crate::verify::{
    test_cluster_count, test_marginal_law, test_meeting_bound, test_shift_invariance, test_small_time_continuity,
    test_stopped_equivalence, test_two_point_law, ClusterCountParams, MarginalParams, MeetingBoundParams,
    ReplicaTable, ReportBundle, ShiftInvarianceParams, SmallTimeParams, StoppedParams, TestReport, TestRun,
    TwoPointParams,
};

pub const BUNDLES: [&str; 6] = ["axioms", "skeleton", "motion", "shift", "counterexample", "controls"];
pub const MANIFEST: &str = "manifest.json";
pub const SNAPSHOT: &str = "skeleton.bin";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, RunError> {
    Err(RunError::Config(msg.into()))
}

// ----------------------------------------------------------------- config

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Arratia,
    OrnsteinUhlenbeck { rate: f64, volatility: f64 },
    Harris { family: GammaFamily },
    /// Broken fixtures, for controls.
    ArratiaSignChangeOnly,
    DriftControl { slope: f64 },
}

impl ModelConfig {
    pub fn build(&self) -> Result<MotionModel, MotionError> {
        Ok(match self {
            ModelConfig::Arratia => MotionModel::arratia(),
            ModelConfig::OrnsteinUhlenbeck { rate, volatility } => {
                MotionModel::diffusion(DiffusionSpec::ornstein_uhlenbeck(*rate, *volatility)?)
            }
            ModelConfig::Harris { family } => MotionModel::harris(HarrisSpec::new(*family)?),
            ModelConfig::ArratiaSignChangeOnly => MotionModel::Diffusion {
                spec: DiffusionSpec::Arratia,
                crossing: CrossingRule::SignChangeOnly,
            },
            ModelConfig::DriftControl { slope } => MotionModel::DriftControl { slope: *slope },
        })
    }
}

/// A test parameter set together with the model it runs on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case<P> {
    pub model: ModelConfig,
    #[serde(flatten)]
    pub params: P,
}

impl<P> Case<P> {
    fn new(model: ModelConfig, params: P) -> Self {
        Self { model, params }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkeletonParams {
    pub window: (f64, f64),
    pub spacing: f64,
    pub horizon: (f64, f64),
    pub dt: f64,
    /// New starters every this many steps.
    pub start_every: usize,
}

impl Default for SkeletonParams {
    fn default() -> Self {
        Self {
            window: (0.0, 1.0),
            spacing: 1.0 / 32.0,
            horizon: (0.0, 0.5),
            // Adjacent starters cross within one step with probability
            // about exp(-Δx²/dt); keep that negligible so the range stays
            // Δx-dense.
            dt: 1e-4,
            start_every: 1,
        }
    }
}

impl SkeletonParams {
    pub fn config(&self, model: MotionModel) -> SkeletonConfig {
        let mut cfg = SkeletonConfig::every_step(model, self.window, self.spacing, self.horizon, self.dt);
        let every = self.start_every.max(1);
        cfg.start_times = cfg.start_times.iter().step_by(every).copied().collect();
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    /// Starting points of the exported trajectory fan, at the skeleton's
    /// initial time.
    pub starts: Vec<f64>,
    /// Record every this many steps.
    pub record_every: usize,
    /// Independent fans for the cluster-count summary; the first one is
    /// exported.
    pub replicas: usize,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            starts: (0..16).map(|i| (i as f64 + 0.5) / 16.0).collect(),
            record_every: 10,
            replicas: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxiomParams {
    /// Composition and monotonicity tuples per flow.
    pub tuples: usize,
    pub cocycle_samples: usize,
    pub skeleton_replicas: usize,
    /// Shift applied for the shifted-element cocycle check.
    pub shift: f64,
}

impl Default for AxiomParams {
    fn default() -> Self {
        Self {
            tuples: 10_000,
            cocycle_samples: 1000,
            skeleton_replicas: 5,
            shift: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionBundle {
    pub two_point: Vec<Case<TwoPointParams>>,
    pub meeting: Vec<Case<MeetingBoundParams>>,
    pub cluster_count: Vec<Case<ClusterCountParams>>,
    pub marginal: Vec<Case<MarginalParams>>,
    pub small_time: Vec<Case<SmallTimeParams>>,
    pub stopped: Vec<Case<StoppedParams>>,
}

impl Default for MotionBundle {
    fn default() -> Self {
        let ou = |rate, volatility| ModelConfig::OrnsteinUhlenbeck { rate, volatility };
        Self {
            two_point: vec![Case::new(ModelConfig::Arratia, TwoPointParams::default())],
            meeting: vec![
                Case::new(ModelConfig::Arratia, MeetingBoundParams::default()),
                Case::new(ou(1.0, 1.0), MeetingBoundParams::default()),
            ],
            cluster_count: vec![Case::new(ModelConfig::Arratia, ClusterCountParams::default())],
            marginal: vec![
                Case::new(
                    ou(1.0, std::f64::consts::SQRT_2),
                    MarginalParams {
                        x: 1.0,
                        ..Default::default()
                    },
                ),
                Case::new(ModelConfig::Arratia, MarginalParams::default()),
            ],
            small_time: vec![Case::new(ModelConfig::Arratia, SmallTimeParams::default())],
            stopped: vec![Case::new(ModelConfig::Arratia, StoppedParams::default())],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlParams {
    pub drift_slope: f64,
    pub shift: ShiftInvarianceParams,
    pub meeting: MeetingBoundParams,
    pub marginal: MarginalParams,
    pub small_time: SmallTimeParams,
    pub stopped: StoppedParams,
    pub constant_flow_tuples: usize,
    pub counterexample_replicas: usize,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            drift_slope: 4.0,
            shift: ShiftInvarianceParams {
                shifts: vec![0.5],
                replicas: 300,
                ..Default::default()
            },
            meeting: MeetingBoundParams::default(),
            marginal: MarginalParams {
                replicas: 20_000,
                reference_variance_factor: 1.21,
                ..Default::default()
            },
            small_time: SmallTimeParams {
                jump_rate: 5.0,
                ..Default::default()
            },
            stopped: StoppedParams {
                stop: false,
                ..Default::default()
            },
            constant_flow_tuples: 1000,
            counterexample_replicas: 20_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionConfig {
    #[default]
    Parallel,
    Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory. Not part of the config hash.
    pub out: PathBuf,
    /// Not part of the config hash either: both modes give identical output.
    pub execution: ExecutionConfig,
    pub model: ModelConfig,
    pub skeleton: SkeletonParams,
    pub simulate: SimulateParams,
    pub bundles: Vec<String>,
    pub axioms: AxiomParams,
    pub motion: MotionBundle,
    pub shift: Vec<Case<ShiftInvarianceParams>>,
    pub counterexample_replicas: usize,
    pub controls: ControlParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out: PathBuf::from("out"),
            execution: ExecutionConfig::default(),
            model: ModelConfig::Arratia,
            skeleton: SkeletonParams::default(),
            simulate: SimulateParams::default(),
            bundles: BUNDLES.iter().map(|b| b.to_string()).collect(),
            axioms: AxiomParams::default(),
            motion: MotionBundle::default(),
            shift: vec![Case::new(ModelConfig::Arratia, ShiftInvarianceParams::default())],
            counterexample_replicas: 100_000,
            controls: ControlParams::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Hex sha256 of the canonical JSON. The output directory and the
    /// execution mode don't change results and are excluded.
    pub fn hash(&self) -> String {
        hex::encode(self.hash_bytes())
    }

    fn hash_bytes(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.execution = ExecutionConfig::default();
        Sha256::digest(serde_json::to_vec(&c).expect("config serializes")).into()
    }

    pub fn execution(&self) -> Execution {
        match self.execution {
            ExecutionConfig::Parallel => Execution::Parallel,
            ExecutionConfig::Sequential => Execution::Sequential,
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), RunError> {
        for b in &self.bundles {
            if !BUNDLES.contains(&b.as_str()) {
                return invalid(format!("unknown bundle {b:?}; known: {}", BUNDLES.join(", ")));
            }
        }
        let model = self.model.build()?;
        self.skeleton.config(model).geometry()?;
        if self.simulate.starts.windows(2).any(|w| w[1] < w[0]) || self.simulate.starts.is_empty() {
            return invalid("simulate.starts must be nonempty and sorted");
        }
        if self.simulate.record_every == 0 || self.simulate.replicas == 0 {
            return invalid("simulate.record_every and simulate.replicas must be positive");
        }
        let models = std::iter::empty()
            .chain(self.motion.two_point.iter().map(|c| &c.model))
            .chain(self.motion.meeting.iter().map(|c| &c.model))
            .chain(self.motion.cluster_count.iter().map(|c| &c.model))
            .chain(self.motion.marginal.iter().map(|c| &c.model))
            .chain(self.motion.small_time.iter().map(|c| &c.model))
            .chain(self.motion.stopped.iter().map(|c| &c.model))
            .chain(self.shift.iter().map(|c| &c.model));
        for m in models {
            m.build()?;
        }
        let replica_counts = [
            self.axioms.skeleton_replicas,
            self.counterexample_replicas,
            self.controls.shift.replicas,
            self.controls.counterexample_replicas,
        ];
        if replica_counts.contains(&0) {
            return invalid("replica counts must be positive");
        }
        Ok(())
    }
}

// --------------------------------------------------------------- manifest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: Vec<Artifact>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String, RunError> {
    let mut hasher = Sha256::new();
    let mut f = File::open(path)?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST) {
            out.push(path);
        }
    }
    Ok(())
}

/// Lists every file under `out` (the manifest itself aside) and writes
/// `manifest.json`.
pub fn write_manifest(out: &Path, command: &str, config: &RunConfig, started: u64) -> Result<RunManifest, RunError> {
    let mut files = Vec::new();
    collect_files(out, out, &mut files)?;
    files.sort();
    let artifacts = files
        .iter()
        .map(|p| {
            Ok(Artifact {
                path: p.strip_prefix(out).unwrap_or(p).to_string_lossy().replace('\\', "/"),
                bytes: fs::metadata(p)?.len(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    let manifest = RunManifest {
        command: command.to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: unix_now(),
        artifacts,
    };
    fs::write(out.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

// --------------------------------------------------------------- simulate

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub config_hash: String,
    pub seed: u64,
    pub model: String,
    pub skeleton_trajectories: usize,
    pub skeleton_steps: u32,
    pub skeleton_stored_samples: usize,
    pub fan_starts: usize,
    pub fan_replicas: usize,
    pub fan_final_clusters_mean: f64,
    pub fan_final_clusters_std_error: f64,
}

/// Build and persist the skeleton, export one trajectory fan and the
/// per-step plot data.
pub fn cmd_simulate(config: &RunConfig) -> Result<SimulateSummary, RunError> {
    config.validate()?;
    let started = unix_now();
    let out = &config.out;
    fs::create_dir_all(out)?;
    let exec = config.execution();
    let root = RngStream::new(config.seed).named("simulate");
    let model = config.model.build()?;
    let sk = build_skeleton(&config.skeleton.config(model.clone()), config.seed, &mut root.named("skeleton").generator())?;
    let mut w = create(&out.join(SNAPSHOT))?;
    write_snapshot(&sk, config.hash_bytes(), &mut w)?;
    w.flush()?;

    // Trajectory fans, first one exported.
    let p = &config.simulate;
    let (t0, t1) = config.skeleton.horizon;
    let fans = exec.try_map(p.replicas, |i| {
        let mut rng = root.named("fan").child(i as u64).generator();
        let mut state = SystemState::at_time(t0, &p.starts)?;
        let mut rows = Vec::new();
        let mut record = |s: &SystemState, k: usize| {
            if i == 0 && k.is_multiple_of(p.record_every) {
                for j in 0..s.n_particles() {
                    rows.push((j, s.time(), s.particle_position(j), s.cluster_of(j)));
                }
            }
        };
        record(&state, 0);
        let mut k = 0;
        crate::motion::simulate(&model, &mut state, t1 - t0, config.skeleton.dt, &mut rng, |s| {
            k += 1;
            record(s, k);
        })?;
        Ok::<_, MotionError>((state.n_clusters() as f64, rows))
    })?;
    let mut w = csv::Writer::from_writer(create(&out.join("trajectories.csv"))?);
    w.write_record(["trajectory_id", "t", "x", "cluster"])?;
    for (j, t, x, c) in &fans[0].1 {
        w.write_record([j.to_string(), t.to_string(), x.to_string(), c.to_string()])?;
    }
    w.flush()?;

    // Plot data: skeleton range statistics per recorded step.
    let g = sk.geometry();
    let mut w = csv::Writer::from_writer(create(&out.join("plotdata.csv"))?);
    w.write_record(["t", "live_trajectories", "range_points", "max_gap"])?;
    for k in (0..=g.n_steps).step_by(p.record_every) {
        let (ids, _) = sk.live_at_step(k);
        let range = sk.range_at_step(k);
        let gap = stats::max_gap(range.iter().map(|&(_, x)| x), g.window.0, g.window.1);
        w.write_record([g.time(k).to_string(), ids.len().to_string(), range.len().to_string(), gap.to_string()])?;
    }
    w.flush()?;

    let counts: Vec<f64> = fans.iter().map(|f| f.0).collect();
    let summary = SimulateSummary {
        config_hash: config.hash(),
        seed: config.seed,
        model: model.name(),
        skeleton_trajectories: sk.n_trajectories(),
        skeleton_steps: sk.n_steps(),
        skeleton_stored_samples: sk.stored_samples(),
        fan_starts: p.starts.len(),
        fan_replicas: p.replicas,
        fan_final_clusters_mean: stats::mean(&counts),
        fan_final_clusters_std_error: if counts.len() > 1 { stats::std_error(&counts) } else { 0.0 },
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    write_manifest(out, "simulate", config, started)?;
    Ok(summary)
}

// ----------------------------------------------------------------- verify

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOutcome {
    pub bundles: Vec<ReportBundle>,
}

impl VerifyOutcome {
    /// No non-control check failed. Controls are reported, not gated on.
    pub fn checks_pass(&self) -> bool {
        self.bundles.iter().all(ReportBundle::checks_pass)
    }

    pub fn controls_behave(&self) -> bool {
        self.bundles.iter().all(ReportBundle::controls_behave)
    }

    pub fn reports(&self) -> impl Iterator<Item = &TestReport> {
        self.bundles.iter().flat_map(|b| b.reports.iter())
    }
}

/// Reports and tables of one bundle.
#[derive(Default)]
struct BundleRun {
    reports: Vec<TestReport>,
    tables: Vec<ReplicaTable>,
    text: Vec<(String, String)>,
}

impl BundleRun {
    fn absorb(&mut self, run: TestRun) {
        self.reports.extend(run.reports);
        self.tables.extend(run.tables);
    }

    fn control(&mut self, run: TestRun, pick: usize) {
        let n = run.reports.len();
        let report = run.reports.into_iter().nth(pick.min(n.saturating_sub(1)));
        self.reports.extend(report.map(TestReport::as_negative_control));
        self.tables.extend(run.tables);
    }
}

fn file_safe(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    while s.contains("__") {
        s = s.replace("__", "_");
    }
    s.trim_matches('_').to_string()
}

/// Skeleton from `out/skeleton.bin` when it was written for this config,
/// else a fresh build with the same stream as `simulate`.
fn configured_skeleton(config: &RunConfig) -> Result<SkeletonFlow, RunError> {
    let path = config.out.join(SNAPSHOT);
    if let Ok(f) = File::open(&path) {
        if let Ok((h, sk)) = read_snapshot(&mut BufReader::new(f)) {
            if h.config_hash == config.hash_bytes() && h.seed == config.seed {
                return Ok(sk);
            }
        }
    }
    let root = RngStream::new(config.seed).named("simulate");
    let cfg = config.skeleton.config(config.model.build()?);
    Ok(build_skeleton(&cfg, config.seed, &mut root.named("skeleton").generator())?)
}

fn run_axioms(config: &RunConfig, stream: &RngStream) -> Result<BundleRun, RunError> {
    let p = &config.axioms;
    let mut run = BundleRun::default();
    let label = |prefix: &str, reports: Vec<TestReport>| -> Vec<TestReport> {
        reports
            .into_iter()
            .map(|mut r| {
                r.name = format!("{prefix}: {}", r.name);
                r
            })
            .collect()
    };

    let analytic = AnalyticFlow::default();
    let plan = SamplePlan::for_analytic(&analytic, p.tuples);
    let f = FlowElement::new(analytic);
    let s = stream.named("analytic");
    run.reports.extend(label("analytic", check_flow_axioms(&f, &plan, &s)));
    run.reports.extend(label("analytic", vec![check_cocycle(&f, &plan, p.cocycle_samples, &s)]));
    let h = num_rational::BigRational::new(1.into(), 8.into());
    let mut shifted = plan.clone();
    shifted.times.retain(|t| t + &h <= plan.times[plan.times.len() - 1]);
    run.reports.extend(label(
        "analytic shifted by 1/8",
        vec![check_cocycle(&f.shift(&h), &shifted, p.cocycle_samples, &s.named("shifted"))],
    ));

    let cfg = config.skeleton.config(MotionModel::arratia());
    let exec = config.execution();
    let per_replica = exec.try_map(p.skeleton_replicas, |i| {
        let sub = stream.named("skeleton").child(i as u64);
        let sk = build_skeleton(&cfg, sub.seed(), &mut sub.generator())?;
        let plan = SamplePlan::for_skeleton(&sk, p.tuples);
        let t_end = plan.times[plan.times.len() - 1];
        let f = FlowElement::new(sk);
        let mut reports = check_flow_axioms(&f, &plan, &sub);
        reports.push(check_cocycle(&f, &plan, p.cocycle_samples, &sub));
        let mut shifted = plan.clone();
        shifted.times.retain(|&t| t + p.shift <= t_end + 1e-12);
        let mut r = check_cocycle(&f.shift(&p.shift), &shifted, p.cocycle_samples, &sub.named("shifted"));
        r.name = format!("{} (shifted by {})", r.name, p.shift);
        reports.push(r);
        Ok::<_, SkeletonError>(label(&format!("arratia skeleton #{i}"), reports))
    })?;
    run.reports.extend(per_replica.into_iter().flatten());

    let constant = ConstantFlow::default();
    let plan = SamplePlan::for_constant(&constant, config.controls.constant_flow_tuples);
    let reports = check_flow_axioms(&FlowElement::new(constant), &plan, &stream.named("constant"));
    run.reports.extend(
        label("constant flow", reports)
            .into_iter()
            .filter(|r| r.name.ends_with("F4 fresh-start witnesses"))
            .map(|r| r.as_negative_control().with_note("every point is in the range: no fresh starts")),
    );
    Ok(run)
}

fn run_skeleton(config: &RunConfig, stream: &RngStream) -> Result<BundleRun, RunError> {
    let sk = configured_skeleton(config)?;
    let model = config.model.build()?;
    let plan = SpCheckPlan::for_skeleton(&sk, model.diffusion_spec().cloned());
    let mut run = BundleRun::default();
    run.reports.extend(check_sp_properties(&sk, &plan, stream).into_iter().map(|mut r| {
        r.name = format!("{} skeleton: {}", model.name(), r.name);
        r
    }));
    Ok(run)
}

fn run_motion(config: &RunConfig, stream: &RngStream) -> Result<BundleRun, RunError> {
    let m = &config.motion;
    let exec = config.execution();
    let mut run = BundleRun::default();
    for (i, c) in m.two_point.iter().enumerate() {
        run.absorb(test_two_point_law(&c.model.build()?, &c.params, &stream.named("two_point").child(i as u64), exec)?);
    }
    for (i, c) in m.meeting.iter().enumerate() {
        run.absorb(test_meeting_bound(&c.model.build()?, &c.params, &stream.named("meeting").child(i as u64), exec)?);
    }
    for (i, c) in m.cluster_count.iter().enumerate() {
        let s = stream.named("cluster_count").child(i as u64);
        run.absorb(test_cluster_count(&c.model.build()?, &c.params, &s, exec)?);
    }
    for (i, c) in m.marginal.iter().enumerate() {
        run.absorb(test_marginal_law(&c.model.build()?, &c.params, &stream.named("marginal").child(i as u64), exec)?);
    }
    for (i, c) in m.small_time.iter().enumerate() {
        let s = stream.named("small_time").child(i as u64);
        run.absorb(test_small_time_continuity(&c.model.build()?, &c.params, &s, exec)?);
    }
    for (i, c) in m.stopped.iter().enumerate() {
        let s = stream.named("stopped").child(i as u64);
        run.absorb(test_stopped_equivalence(&c.model.build()?, &c.params, &s, exec)?);
    }
    Ok(run)
}

fn run_shift(config: &RunConfig, stream: &RngStream) -> Result<BundleRun, RunError> {
    let mut run = BundleRun::default();
    for (i, c) in config.shift.iter().enumerate() {
        let r = test_shift_invariance(&c.model.build()?, &c.params, &stream.child(i as u64), config.execution())?;
        run.absorb(r);
    }
    Ok(run)
}

fn run_counterexample(config: &RunConfig, stream: &RngStream) -> Result<BundleRun, RunError> {
    let reports = verify_appendix(&AppendixPlan::new(config.counterexample_replicas), stream, config.execution());
    let mut run = BundleRun::default();
    run.text.push(("counterexample_verdict.txt".into(), verdict_table(&reports)));
    run.reports = reports;
    Ok(run)
}

/// Every test on a deliberately broken fixture. Each must fail.
fn run_controls(config: &RunConfig, stream: &RngStream) -> Result<BundleRun, RunError> {
    let c = &config.controls;
    let exec = config.execution();
    let arratia = MotionModel::arratia();
    let mut run = BundleRun::default();

    let constant = ConstantFlow::default();
    let plan = SamplePlan::for_constant(&constant, c.constant_flow_tuples);
    let f4 = check_flow_axioms(&FlowElement::new(constant), &plan, &stream.named("constant"))
        .into_iter()
        .filter(|r| r.name == "F4 fresh-start witnesses")
        .map(|mut r| {
            r.name = format!("constant flow: {}", r.name);
            r.as_negative_control()
        });
    run.reports.extend(f4);

    let sign_change = ModelConfig::ArratiaSignChangeOnly.build()?;
    run.control(test_meeting_bound(&sign_change, &c.meeting, &stream.named("meeting"), exec)?, 0);
    run.control(test_marginal_law(&arratia, &c.marginal, &stream.named("marginal"), exec)?, 0);
    run.control(test_small_time_continuity(&arratia, &c.small_time, &stream.named("small_time"), exec)?, 1);
    let unstopped = StoppedParams { stop: false, ..c.stopped.clone() };
    run.control(test_stopped_equivalence(&arratia, &unstopped, &stream.named("stopped"), exec)?, 0);
    let drift = MotionModel::DriftControl { slope: c.drift_slope };
    run.control(test_shift_invariance(&drift, &c.shift, &stream.named("shift"), exec)?, usize::MAX);

    let appendix = verify_appendix(&AppendixPlan::new(c.counterexample_replicas), &stream.named("counterexample"), exec);
    run.reports.extend(appendix.into_iter().filter(|r| r.negative_control));
    Ok(run)
}

/// Run the selected bundles, writing `reports/<bundle>.json`, per-replica
/// CSVs under `reports/<bundle>/` and a plain-text summary.
pub fn cmd_verify(config: &RunConfig) -> Result<VerifyOutcome, RunError> {
    config.validate()?;
    let started = unix_now();
    let out = &config.out;
    let reports_dir = out.join("reports");
    fs::create_dir_all(&reports_dir)?;
    let hash = config.hash();
    let root = RngStream::new(config.seed).named("verify");
    let mut outcome = VerifyOutcome { bundles: Vec::new() };
    let mut summary = String::new();
    for name in BUNDLES.iter().filter(|b| config.bundles.iter().any(|c| c == *b)) {
        let stream = root.named(name);
        let run = match *name {
            "axioms" => run_axioms(config, &stream)?,
            "skeleton" => run_skeleton(config, &stream)?,
            "motion" => run_motion(config, &stream)?,
            "shift" => run_shift(config, &stream)?,
            "counterexample" => run_counterexample(config, &stream)?,
            "controls" => run_controls(config, &stream)?,
            _ => unreachable!("validated bundle names"),
        };
        let mut bundle = ReportBundle::new(*name, config.seed, hash.clone());
        bundle.extend(run.reports);
        fs::write(reports_dir.join(format!("{name}.json")), bundle.to_json() + "\n")?;
        for (i, table) in run.tables.iter().enumerate() {
            let path = reports_dir.join(name).join(format!("{i:02}_{}.csv", file_safe(&table.name)));
            table.write_csv(create(&path)?)?;
        }
        for (file, text) in &run.text {
            fs::write(reports_dir.join(file), text)?;
        }
        summary.push_str(&format!("== {name}\n"));
        for r in &bundle.reports {
            summary.push_str(&format!("{r}\n"));
        }
        outcome.bundles.push(bundle);
    }
    summary.push_str(&format!(
        "checks pass: {}\ncontrols fail as designed: {}\n",
        outcome.checks_pass(),
        outcome.controls_behave()
    ));
    fs::write(reports_dir.join("summary.txt"), summary)?;
    write_manifest(out, "verify", config, started)?;
    Ok(outcome)
}

// ----------------------------------------------------------------- export

/// Evaluate the queries (CSV with header `s,x,t`) on a snapshot and write
/// `s,x,t,value,trajectory_id,status`. Failed queries keep their row with an
/// empty value and a status.
pub fn cmd_export(snapshot: &Path, queries: &Path, out: &Path) -> Result<usize, RunError> {
    let (_, sk) = read_snapshot(&mut BufReader::new(File::open(snapshot)?))?;
    let f = FlowElement::new(sk);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(queries)?;
    let mut rows = Vec::new();
    for rec in reader.deserialize::<(f64, f64, f64)>() {
        let (s, x, t) = rec?;
        rows.push(TraceRow::evaluate(&f, &EvalQuery::new(s, x, t)));
    }
    write_trace_csv(&rows, create(out)?)?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(out: &Path) -> RunConfig {
        RunConfig {
            out: out.to_path_buf(),
            skeleton: SkeletonParams {
                spacing: 1.0 / 8.0,
                horizon: (0.0, 0.2),
                dt: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn config_roundtrip_and_hash() {
        let c = RunConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let moved = RunConfig {
            out: "elsewhere".into(),
            ..c.clone()
        };
        assert_eq!(moved.hash(), c.hash());
        let sequential = RunConfig {
            execution: ExecutionConfig::Sequential,
            ..c.clone()
        };
        assert_eq!(sequential.hash(), c.hash());
        let reseeded = RunConfig { seed: 7, ..c.clone() };
        assert_ne!(reseeded.hash(), c.hash());
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        let c = RunConfig {
            bundles: vec!["nope".into()],
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(RunError::Config(_))));
        assert!(RunConfig::from_json(r#"{"sede": 1}"#).is_err());
        let c = RunConfig {
            model: ModelConfig::OrnsteinUhlenbeck {
                rate: 1.0,
                volatility: -1.0,
            },
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            skeleton: SkeletonParams {
                dt: 0.3,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn simulate_is_deterministic_and_listed() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        cmd_simulate(&small_config(a.path())).unwrap();
        cmd_simulate(&small_config(b.path())).unwrap();
        let m: RunManifest = serde_json::from_str(&fs::read_to_string(a.path().join(MANIFEST)).unwrap()).unwrap();
        let names: Vec<&str> = m.artifacts.iter().map(|x| x.path.as_str()).collect();
        assert_eq!(names, ["plotdata.csv", "skeleton.bin", "summary.json", "trajectories.csv"]);
        for name in names {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
        }
    }

    #[test]
    fn single_start_gives_one_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config(dir.path());
        c.simulate.starts = vec![0.5];
        cmd_simulate(&c).unwrap();
        let mut r = csv::Reader::from_path(dir.path().join("trajectories.csv")).unwrap();
        let ids: std::collections::BTreeSet<String> = r.records().map(|x| x.unwrap()[0].to_string()).collect();
        assert_eq!(ids.len(), 1);
    }

    #[test]
    fn export_rows_and_statuses() {
        let dir = tempfile::tempdir().unwrap();
        cmd_simulate(&small_config(dir.path())).unwrap();
        let q = dir.path().join("q.csv");
        fs::write(&q, "s,x,t\n0.1,0.3,0.1\n0.0,0.5,0.2\n0.0,5.0,0.1\n0.055,0.5,0.1\n").unwrap();
        let out = dir.path().join("eval.csv");
        assert_eq!(cmd_export(&dir.path().join(SNAPSHOT), &q, &out).unwrap(), 4);
        let text = fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "s,x,t,value,trajectory_id,status");
        assert!(lines[1].starts_with("0.1,0.3,0.1,0.3,"), "{text}");
        assert!(lines[2].ends_with(",ok"), "{text}");
        assert!(lines[3].ends_with(",,above_range"), "{text}");
        assert!(lines[4].ends_with(",,off_grid"), "{text}");
        fs::write(&q, "s,x,t\n").unwrap();
        assert_eq!(cmd_export(&dir.path().join(SNAPSHOT), &q, &out).unwrap(), 0);
        assert_eq!(fs::read_to_string(&out).unwrap(), "s,x,t,value,trajectory_id,status\n");
    }

    #[test]
    fn verify_counterexample_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            bundles: vec!["counterexample".into()],
            counterexample_replicas: 20_000,
            ..small_config(dir.path())
        };
        let outcome = cmd_verify(&c).unwrap();
        assert!(outcome.checks_pass());
        assert!(outcome.controls_behave());
        let verdict = fs::read_to_string(dir.path().join("reports/counterexample_verdict.txt")).unwrap();
        assert!(verdict.contains("same marginals, different joints"));
        let m: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
        assert!(m.artifacts.iter().any(|a| a.path == "reports/counterexample.json"));
    }

    #[test]
    fn file_names_are_sanitized() {
        assert_eq!(file_safe("marginal[ou(rate=1,volatility=1)]"), "marginal_ou_rate_1_volatility_1");
    }
}
