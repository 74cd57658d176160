//! Executes configured experiments and writes their artifacts.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{classify_trapping, hopf_adaptation_experiment, phase_portrait, AnalysisError, HopfOutcome, PhasePortrait, TrapVerdict};
use crate::config::{ConfigError, ExperimentConfig, FigurePreset, Format, SystemKind};
use crate::export::{self, columns_csv, grid_svg, portrait_svg, trajectory_header, ExportError};
use crate::floquet::{monodromy, stability_sweep, FloquetError, MonodromyResult, StabilityGrid};
use crate::invariants::{drift_report, poisson_bracket, saddle_phase_integrals, InvariantReport, InvariantSet};
use crate::models::PhaseState;
use crate::ode::{integrate_state, NumericalFailure, OdeError, Trajectory, TrajectoryMeta};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Export(#[from] ExportError),
}

impl RunError {
    /// Process exit code: 2 for configuration errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Export(_) => 1,
        }
    }
}

impl From<OdeError> for RunError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::InvalidConfig(_) | OdeError::EmptySpan(_) | OdeError::NonFiniteInitial | OdeError::DimensionMismatch { .. } => {
                RunError::Config(ConfigError::Invalid { field: "integrator", rule: e.to_string() })
            }
            other => RunError::Numerical(other.to_string()),
        }
    }
}

impl From<AnalysisError> for RunError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Model(m) => RunError::Config(m.into()),
            other => RunError::Numerical(other.to_string()),
        }
    }
}

impl From<FloquetError> for RunError {
    fn from(e: FloquetError) -> Self {
        match e {
            FloquetError::Ode(o) => o.into(),
            FloquetError::Model(m) => RunError::Config(m.into()),
            FloquetError::Nonlinear(_) | FloquetError::NotPeriodic(_) => {
                RunError::Config(ConfigError::Invalid { field: "system", rule: e.to_string() })
            }
            FloquetError::ZeroEigenvalue => RunError::Numerical(e.to_string()),
        }
    }
}

/// In-memory result of a trajectory run.
#[derive(Debug, Clone)]
pub struct Simulation {
    /// Every accepted integrator step.
    pub raw: Trajectory,
    /// The evenly spaced export sampling.
    pub sampled: Trajectory,
    pub labels: Vec<String>,
    /// Invariants at each exported sample.
    pub invariant_rows: Vec<Vec<f64>>,
    /// Drift over the exported samples (what the CSV holds).
    pub report: Option<InvariantReport>,
    /// Drift over every integrator step.
    pub step_report: Option<InvariantReport>,
    pub verdict: TrapVerdict,
    pub portraits: Vec<PhasePortrait>,
    pub failure: Option<NumericalFailure>,
}

/// Integrates from the initial state to both ends of `t_span` as needed.
pub fn integrate_config(cfg: &ExperimentConfig) -> Result<Trajectory, RunError> {
    let sys = cfg.build_system()?;
    let s0 = cfg.initial_state()?;
    let [t0, t1] = cfg.t_span.ok_or(ConfigError::Missing("t_span"))?;
    let field = sys.newtonian_field();
    let icfg = cfg.integrator.clone().with_dense(true);
    let traj = if s0.t == t0 {
        integrate_state(&field, &s0, t1, &icfg)?
    } else if s0.t == t1 {
        integrate_state(&field, &s0, t0, &icfg)?
    } else {
        let back = integrate_state(&field, &s0, t0, &icfg)?;
        let fwd = integrate_state(&field, &s0, t1, &icfg)?;
        Trajectory::join_two_sided(back, fwd)
    };
    Ok(traj)
}

/// Integration, invariant drift, trap classification and portraits.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation, RunError> {
    let cfg = cfg.clone().validated()?;
    let sys = cfg.build_system()?;
    let raw = integrate_config(&cfg)?;
    let failure = raw.failure().copied();
    let sampled = if raw.len() >= 2 { raw.resample_uniform(cfg.output.samples)? } else { raw.clone() };
    let set = if cfg.analysis.invariants { InvariantSet::for_system(&sys) } else { InvariantSet::empty() };
    let invariant_rows = set.samples(&sampled, sys.profile());
    let (report, step_report) = if set.is_empty() {
        (None, None)
    } else {
        (Some(drift_report(&sampled, &set, sys.profile())), Some(drift_report(&raw, &set, sys.profile())))
    };
    let verdict = classify_trapping(&sampled, cfg.escape_radius(), cfg.analysis.per_coordinate)?;
    let portraits = (0..sys.dim()).map(|i| phase_portrait(&sampled, i)).collect::<Result<_, _>>()?;
    Ok(Simulation { raw, sampled, labels: set.labels().to_vec(), invariant_rows, report, step_report, verdict, portraits, failure })
}

#[derive(Debug, Clone, Serialize)]
pub struct FigureRecord {
    pub figure: u8,
    pub caption: BTreeMap<String, f64>,
    /// Why the as-printed parameters were not run, if they were not.
    pub as_printed_rejection: Option<String>,
    pub as_printed: ExperimentConfig,
    pub adjusted: Option<ExperimentConfig>,
}

impl FigureRecord {
    pub fn new(preset: &FigurePreset) -> Self {
        Self {
            figure: preset.figure,
            caption: preset.caption.clone(),
            as_printed_rejection: preset.as_printed_check().err().map(|e| e.to_string()),
            as_printed: preset.as_printed.clone(),
            adjusted: preset.adjusted.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub figure: Option<FigureRecord>,
    pub columns: Vec<String>,
    pub rows: usize,
    pub integrator: TrajectoryMeta,
    pub invariants: Option<InvariantReport>,
    pub invariants_all_steps: Option<InvariantReport>,
    pub verdict: TrapVerdict,
    pub failure: Option<NumericalFailure>,
    pub files: Vec<PathBuf>,
}

/// Files written by a run plus its machine-readable summary.
#[derive(Debug, Clone)]
pub struct RunArtifacts<S> {
    pub files: Vec<PathBuf>,
    pub summary: S,
    /// Set when the run stopped early; artifacts are still written.
    pub failure: Option<String>,
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn trajectory_json(sim: &Simulation) -> String {
    let columns = trajectory_header(sim.sampled.width() / 2, &sim.labels);
    let csv = export::trajectory_csv(&sim.sampled, &sim.labels, &sim.invariant_rows);
    let (_, rows) = export::parse_csv(&csv).expect("own CSV parses");
    json(&serde_json::json!({ "columns": columns, "rows": rows }))
}

/// Runs a trajectory experiment and writes its files into `out_dir`.
pub fn run(cfg: &ExperimentConfig, figure: Option<&FigurePreset>, out_dir: &Path) -> Result<RunArtifacts<SimulationSummary>, RunError> {
    let cfg = cfg.clone().validated()?;
    let sim = simulate(&cfg)?;
    let stem = &cfg.output.stem;
    let mut files = Vec::new();
    let mut write = |name: String, contents: &str| -> Result<(), RunError> {
        let path = out_dir.join(name);
        export::write_file(&path, contents)?;
        files.push(path);
        Ok(())
    };
    match cfg.output.format {
        Format::Csv => write(format!("{stem}.csv"), &export::trajectory_csv(&sim.sampled, &sim.labels, &sim.invariant_rows))?,
        Format::Json => write(format!("{stem}.json"), &trajectory_json(&sim))?,
    }
    if cfg.output.svg {
        for p in &sim.portraits {
            let axis = ["x", "y"][p.coordinate];
            write(format!("{stem}_portrait_{axis}.svg"), &portrait_svg(p, &format!("{stem}: d{axis}/dt vs {axis}")))?;
        }
    }
    let summary_path = out_dir.join(format!("{stem}_summary.json"));
    files.push(summary_path.clone());
    let summary = SimulationSummary {
        config: cfg.clone(),
        figure: figure.map(FigureRecord::new),
        columns: trajectory_header(sim.sampled.width() / 2, &sim.labels),
        rows: sim.sampled.len(),
        integrator: sim.raw.meta().clone(),
        invariants: sim.report.clone(),
        invariants_all_steps: sim.step_report.clone(),
        verdict: sim.verdict.clone(),
        failure: sim.failure,
        files: files.clone(),
    };
    export::write_file(&summary_path, &json(&summary))?;
    Ok(RunArtifacts { files, summary, failure: sim.failure.map(|f| f.to_string()) })
}

#[derive(Debug, Clone, Serialize)]
pub struct BracketCheck {
    pub seed: u64,
    pub points: usize,
    pub step: f64,
    pub max_abs_bracket: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InvariantsSummary {
    pub labels: Vec<String>,
    pub invariants: Option<InvariantReport>,
    pub invariants_all_steps: Option<InvariantReport>,
    /// `{Ĩ₁, Ĩ₂}` at seeded points, for the saddle pairs.
    pub bracket: Option<BracketCheck>,
    pub failure: Option<NumericalFailure>,
}

/// `max |{Ĩ₁, Ĩ₂}|` over `points` seeded phase points with `|qᵢ|, |pᵢ| ≤ 1`.
pub fn bracket_check(potential: crate::models::PotentialField, seed: u64, points: usize, step: f64) -> Option<BracketCheck> {
    saddle_phase_integrals(potential, &PhaseState { t: 0.0, q: vec![0.0; 2], p: vec![0.0; 2] })?;
    let i1 = |ps: &PhaseState| saddle_phase_integrals(potential, ps).expect("saddle").0;
    let i2 = |ps: &PhaseState| saddle_phase_integrals(potential, ps).expect("saddle").1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_abs_bracket = (0..points)
        .map(|_| {
            let mut c = || rng.random_range(-1.0..=1.0);
            let ps = PhaseState { t: 0.0, q: vec![c(), c()], p: vec![c(), c()] };
            poisson_bracket(i1, i2, &ps, step).abs()
        })
        .fold(0.0, f64::max);
    Some(BracketCheck { seed, points, step, max_abs_bracket })
}

/// Drift report plus the commutation check, written as `{stem}_invariants.json`.
pub fn run_invariants(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<RunArtifacts<InvariantsSummary>, RunError> {
    let cfg = cfg.clone().validated()?;
    let sim = simulate(&cfg)?;
    let sys = cfg.build_system()?;
    let summary = InvariantsSummary {
        labels: sim.labels.clone(),
        invariants: sim.report.clone(),
        invariants_all_steps: sim.step_report.clone(),
        bracket: bracket_check(*sys.potential(), seed, 20, 1e-3),
        failure: sim.failure,
    };
    let path = out_dir.join(format!("{}_invariants.json", cfg.output.stem));
    export::write_file(&path, &json(&summary))?;
    Ok(RunArtifacts { files: vec![path], summary, failure: sim.failure.map(|f| f.to_string()) })
}

#[derive(Debug, Clone, Serialize)]
pub struct MonodromySummary {
    pub period: f64,
    pub matrix: Vec<Vec<f64>>,
    /// `[re, im]` pairs.
    pub eigenvalues: Vec<[f64; 2]>,
    pub exponents: Vec<[f64; 2]>,
    pub classification: crate::floquet::Stability,
    pub determinant: f64,
    pub reciprocity_error: f64,
    pub max_modulus: f64,
}

impl From<&MonodromyResult> for MonodromySummary {
    fn from(m: &MonodromyResult) -> Self {
        Self {
            period: m.period,
            matrix: m.matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
            eigenvalues: m.eigenvalues.iter().map(|z| [z.re, z.im]).collect(),
            exponents: m.exponents.iter().map(|z| [z.re, z.im]).collect(),
            classification: m.classification,
            determinant: m.determinant(),
            reciprocity_error: m.reciprocity_error(),
            max_modulus: m.max_modulus(),
        }
    }
}

/// Monodromy over the profile period (`2π` for constant profiles).
pub fn run_floquet(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts<MonodromySummary>, RunError> {
    let sys = cfg.build_system()?;
    cfg.integrator.validate()?;
    let period = sys.profile().period().unwrap_or(TAU);
    let m = monodromy(&sys, period, &cfg.integrator)?;
    let summary = MonodromySummary::from(&m);
    let path = out_dir.join(format!("{}_monodromy.json", cfg.output.stem));
    export::write_file(&path, &json(&summary))?;
    Ok(RunArtifacts { files: vec![path], summary, failure: None })
}

pub fn run_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts<StabilityGrid>, RunError> {
    let sweep = cfg.sweep.as_ref().ok_or(ConfigError::Missing("sweep"))?;
    cfg.integrator.validate()?;
    let grid = stability_sweep(sweep.family, sweep.a.clone(), sweep.q.clone(), &cfg.integrator);
    let stem = &cfg.output.stem;
    let mut files = Vec::new();
    let a: Vec<f64> = grid.cells.iter().map(|c| c.a).collect();
    let q: Vec<f64> = grid.cells.iter().map(|c| c.q).collect();
    let modulus: Vec<f64> = grid.cells.iter().map(|c| c.max_modulus.unwrap_or(f64::NAN)).collect();
    let mut csv = String::from("a,q,class,max_modulus\n");
    for (k, c) in grid.cells.iter().enumerate() {
        let class = serde_json::to_value(c.class).expect("enum").as_str().unwrap_or_default().to_string();
        csv.push_str(&format!("{},{},{class},{}\n", export::fmt_num(a[k]), export::fmt_num(q[k]), export::fmt_num(modulus[k])));
    }
    let body = match cfg.output.format {
        Format::Csv => (format!("{stem}_sweep.csv"), csv),
        Format::Json => (format!("{stem}_sweep.json"), json(&grid)),
    };
    let path = out_dir.join(body.0);
    export::write_file(&path, &body.1)?;
    files.push(path);
    if cfg.output.svg {
        let path = out_dir.join(format!("{stem}_sweep.svg"));
        export::export_svg(&grid_svg(&grid, &format!("{:?} stability", sweep.family)), &path)?;
        files.push(path);
    }
    let failed = grid.cells.iter().filter(|c| c.error.is_some()).count();
    let failure = (failed > 0).then(|| format!("{failed} cells failed"));
    Ok(RunArtifacts { files, summary: grid, failure })
}

#[derive(Debug, Clone, Serialize)]
pub struct HopfSummary {
    pub config: ExperimentConfig,
    pub final_omega: f64,
    pub terminal_mean: f64,
    pub forcing_frequency: f64,
    pub rows: usize,
}

pub fn run_hopf(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(RunArtifacts<HopfSummary>, HopfOutcome), RunError> {
    let cfg = cfg.clone().validated()?;
    if cfg.system != SystemKind::Hopf {
        return Err(ConfigError::Invalid { field: "system", rule: "hopf command needs system = \"hopf\"".into() }.into());
    }
    let h = cfg.hopf.clone().ok_or(ConfigError::Missing("hopf"))?;
    let out = hopf_adaptation_experiment(h.params(), h.start, h.omega0, h.horizon, cfg.output.samples, &cfg.integrator)?;
    let stem = &cfg.output.stem;
    let data = match cfg.output.format {
        Format::Csv => (format!("{stem}_omega.csv"), columns_csv(&["t", "omega"], &[&out.times, &out.omega])),
        Format::Json => (format!("{stem}_omega.json"), json(&serde_json::json!({ "t": out.times, "omega": out.omega }))),
    };
    let path = out_dir.join(data.0);
    export::write_file(&path, &data.1)?;
    let summary = HopfSummary {
        config: cfg.clone(),
        final_omega: out.final_omega,
        terminal_mean: out.terminal_mean,
        forcing_frequency: h.forcing.frequency,
        rows: out.times.len(),
    };
    let spath = out_dir.join(format!("{stem}_summary.json"));
    export::write_file(&spath, &json(&summary))?;
    Ok((RunArtifacts { files: vec![path, spath], summary, failure: None }, out))
}
