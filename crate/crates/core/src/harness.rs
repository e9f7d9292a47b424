//! Experiment manifests and the study drivers behind the command line:
//! single runs, convergence sequences, strong scaling, stability sweeps and
//! the Jacobian assembly benchmark.

use crate::error::{Error, Result};
use crate::law::{ConservationLaw, LawKind, ProblemSetup};
use crate::mesh::{task_grid_for, CartesianMesh, Decomposition};
use crate::metrics::{self, MetricsRecord};
use crate::parallel::{self, ParallelOptions, ScalingConfig, ScalingRow, TaskCounters};
use crate::predictor::{Backend, NewtonConfig, Predictor, RegionWork};
use crate::stepper::{SchemeConfig, SchemeKind, Solver, StepLog};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const ENV_OUTPUT_DIR: &str = "RIDG_OUTPUT_DIR";
pub const ENV_THREADS: &str = "RIDG_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Run,
    Convergence,
    Scaling,
    Stability,
    BenchAssembly,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Run => "run",
            Study::Convergence => "convergence",
            Study::Scaling => "scaling",
            Study::Stability => "stability",
            Study::BenchAssembly => "bench-assembly",
        }
    }
}

/// Flat experiment manifest. Every key is optional in a file; environment
/// variables and then command-line flags are applied on top by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub scheme: String,
    pub mdeg: usize,
    pub nu: f64,
    /// Cells per axis for single runs and scaling studies.
    pub mesh: usize,
    /// Cells per axis of a convergence sequence.
    pub meshes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_time: Option<f64>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub linear_fast_path: bool,
    pub backend: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    /// Tasks per axis for single runs.
    pub tasks: usize,
    /// Total task counts of a scaling study.
    pub task_counts: Vec<usize>,
    /// Threads per task.
    pub threads: usize,
    /// CFL numbers of a stability sweep.
    pub nus: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Stages per step assumed by the analytic message count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comms_stages: Option<u64>,
    pub bench_dim: usize,
    /// Basis orders `Mdeg + 1` of the assembly benchmark.
    pub orders: Vec<usize>,
    pub repetitions: usize,
    /// Largest order at which the (slow) perturbation backend is timed.
    pub perturbation_max_order: usize,
    pub output: PathBuf,
    pub seed: u64,
    pub emit_plots: bool,
    pub step_log: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let newton = NewtonConfig::default();
        RunConfig {
            problem: "adv1d".into(),
            scheme: "ridg".into(),
            mdeg: 3,
            nu: 0.9,
            mesh: 50,
            meshes: vec![50, 70, 120, 240],
            final_time: None,
            newton_tol: newton.tolerance,
            newton_max_iter: newton.max_iterations,
            linear_fast_path: newton.linear_fast_path,
            backend: "qqf".into(),
            stages: None,
            tasks: 1,
            task_counts: vec![1, 4, 9, 36],
            threads: 1,
            nus: vec![0.9],
            max_steps: None,
            comms_stages: None,
            bench_dim: 3,
            orders: vec![2, 3, 4, 5],
            repetitions: 5,
            perturbation_max_order: 3,
            output: PathBuf::from("results"),
            seed: 0,
            emit_plots: false,
            step_log: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::invalid("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Canonical manifest text: every key, in declaration order.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid("config", e.to_string()))
    }

    /// Apply the output-directory and thread-count environment overrides.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_env_from(|k| std::env::var(k).ok())
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(dir) = get(ENV_OUTPUT_DIR).filter(|d| !d.is_empty()) {
            self.output = PathBuf::from(dir);
        }
        if let Some(t) = get(ENV_THREADS).filter(|t| !t.is_empty()) {
            self.threads = t
                .trim()
                .parse()
                .map_err(|_| Error::invalid("threads", format!("{ENV_THREADS}=`{t}` is not a thread count")))?;
        }
        Ok(())
    }

    pub fn problem_setup(&self) -> Result<ProblemSetup> {
        let p = ProblemSetup::by_name(&self.problem)?;
        Ok(match self.final_time {
            Some(t) => p.with_final_time(t),
            None => p,
        })
    }

    pub fn scheme_config(&self) -> Result<SchemeConfig> {
        Ok(SchemeConfig {
            kind: SchemeKind::parse(&self.scheme)?,
            degree: self.mdeg,
            cfl: self.nu,
            newton: NewtonConfig {
                tolerance: self.newton_tol,
                max_iterations: self.newton_max_iter,
                linear_fast_path: self.linear_fast_path,
            },
            backend: Backend::parse(&self.backend)?,
            stages: self.stages,
        })
    }

    fn check_mesh(&self, field: &str, n: usize, kind: SchemeKind) -> Result<()> {
        if n < 1 {
            return Err(Error::invalid(field, "needs at least one cell per axis"));
        }
        if kind == SchemeKind::Ridg && n < 3 {
            return Err(Error::invalid(field, format!("the predictor-corrector needs at least 3 cells per axis, got {n}")));
        }
        Ok(())
    }

    /// Check everything `study` will use before any computation starts.
    pub fn validate(&self, study: Study) -> Result<()> {
        if study == Study::BenchAssembly {
            if !(1..=3).contains(&self.bench_dim) {
                return Err(Error::invalid("bench_dim", format!("must be 1, 2 or 3, got {}", self.bench_dim)));
            }
            if self.orders.is_empty() {
                return Err(Error::invalid("orders", "at least one basis order is needed"));
            }
            let max = [0, 12, 8, 6][self.bench_dim];
            if let Some(o) = self.orders.iter().find(|&&o| o < 2 || o > max) {
                return Err(Error::invalid("orders", format!("basis order {o} outside 2..={max} in {}D", self.bench_dim)));
            }
            if self.repetitions < 5 {
                return Err(Error::invalid("repetitions", format!("at least 5 are needed, got {}", self.repetitions)));
            }
            return Ok(());
        }
        let problem = self.problem_setup()?;
        if !(problem.final_time > 0.0 && problem.final_time.is_finite()) {
            return Err(Error::invalid("final_time", "must be positive"));
        }
        let scheme = self.scheme_config()?;
        scheme.validate()?;
        if self.threads < 1 {
            return Err(Error::invalid("threads", "must be at least 1"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::invalid("max_steps", "must be at least 1"));
        }
        let dim = problem.dim();
        match study {
            Study::Run => {
                self.check_mesh("mesh", self.mesh, scheme.kind)?;
                if self.tasks < 1 {
                    return Err(Error::invalid("tasks", "must be at least 1"));
                }
                if self.mesh % self.tasks != 0 {
                    return Err(Error::invalid("tasks", format!("{} tasks per axis do not divide {} cells", self.tasks, self.mesh)));
                }
            }
            Study::Convergence => {
                if self.meshes.is_empty() {
                    return Err(Error::invalid("meshes", "at least one mesh is needed"));
                }
                for &n in &self.meshes {
                    self.check_mesh("meshes", n, scheme.kind)?;
                }
                if !problem.has_exact() {
                    return Err(Error::invalid("problem", format!("{} has no exact solution to measure errors against", self.problem)));
                }
            }
            Study::Scaling => {
                self.check_mesh("mesh", self.mesh, scheme.kind)?;
                if self.task_counts.is_empty() {
                    return Err(Error::invalid("task_counts", "at least one task count is needed"));
                }
                let mesh = CartesianMesh::unit(dim, self.mesh)?;
                for &t in &self.task_counts {
                    let g = task_grid_for(t, dim).map_err(|e| Error::invalid("task_counts", e.to_string()))?;
                    Decomposition::new(&mesh, &g).map_err(|e| Error::invalid("task_counts", e.to_string()))?;
                }
            }
            Study::Stability => {
                self.check_mesh("mesh", self.mesh, scheme.kind)?;
                if self.nus.is_empty() {
                    return Err(Error::invalid("nus", "at least one CFL number is needed"));
                }
                if let Some(v) = self.nus.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                    return Err(Error::invalid("nus", format!("CFL numbers must be positive, got {v}")));
                }
            }
            Study::BenchAssembly => unreachable!(),
        }
        Ok(())
    }
}

fn create_output(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Whitespace-separated columns with a commented header, for gnuplot.
pub fn write_dat(path: &Path, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# {}", columns.join(" "))?;
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:.10e}")).collect();
        writeln!(f, "{}", line.join(" "))?;
    }
    f.flush()?;
    Ok(())
}

fn record(problem: &ProblemSetup, scheme: &SchemeConfig, mesh: &CartesianMesh, error: Option<f64>, runtime: f64, steps: usize, tasks: usize, threads: usize, comms_stages: Option<u64>) -> Result<MetricsRecord> {
    let dim = problem.dim();
    let theta = (scheme.degree + 1).pow(dim as u32);
    let (stages, vertex) = match scheme.kind {
        SchemeKind::Ridg => (comms_stages.unwrap_or(2), true),
        SchemeKind::Rkdg => (comms_stages.unwrap_or(scheme.rk_stages()? as u64), false),
    };
    Ok(MetricsRecord {
        scheme: scheme.kind.name().to_uppercase(),
        degree: scheme.degree,
        cfl: scheme.cfl,
        mesh: mesh.cells.clone(),
        dof: theta * mesh.num_cells(),
        efom: metrics::efom(theta, mesh.num_cells(), dim),
        error,
        order: None,
        runtime_s: runtime,
        quality: error.and_then(|e| metrics::quality(e, runtime).ok()),
        tasks,
        cores: tasks * threads,
        speedup: None,
        efficiency_pct: None,
        comms: metrics::comms_estimate(tasks as u64, steps as u64, stages, metrics::messages_per_stage(dim, vertex)),
    })
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub record: MetricsRecord,
    pub steps: usize,
    pub conservation_defect: f64,
    pub newton_total: usize,
    pub newton_max: usize,
    /// Per-task instrumentation of threaded runs.
    pub counters: Vec<TaskCounters>,
}

impl RunReport {
    pub fn summary(&self) -> String {
        let r = &self.record;
        format!(
            "{} Mdeg={} nu={} mesh={}: error={} steps={} runtime={:.3}s conservation={:.2e} newton(total={}, max={}) tasks={}",
            r.scheme,
            r.degree,
            r.cfl,
            metrics::mesh_label(&r.mesh),
            r.error.map_or("n/a".into(), |e| format!("{e:.3e}")),
            self.steps,
            r.runtime_s,
            self.conservation_defect,
            self.newton_total,
            self.newton_max,
            r.tasks
        )
    }
}

/// One run, serial for a single task and threaded otherwise.
pub fn run_once(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate(Study::Run)?;
    let problem = cfg.problem_setup()?;
    let scheme = cfg.scheme_config()?;
    let mesh = CartesianMesh::unit(problem.dim(), cfg.mesh)?;
    let error_of = |state| {
        if problem.has_exact() {
            metrics::l2_relative_error(state, &problem, &mesh, scheme.degree).ok()
        } else {
            None
        }
    };
    let tasks_per_axis = vec![cfg.tasks; problem.dim()];
    let tasks: usize = tasks_per_axis.iter().product();
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    let (state, stats, counters) = if tasks == 1 {
        let solver = Solver::new(problem, scheme, mesh.clone())?;
        let out = with_pool(cfg.threads, || -> Result<_> {
            if cfg.step_log {
                let mut log = StepLog::new(create_output(&cfg.output, "steps.csv")?)?;
                solver.run_from(solver.initial_state(), Some(&mut log), max_steps)
            } else {
                solver.run_from(solver.initial_state(), None, max_steps)
            }
        })??;
        (out.state, out.stats, Vec::new())
    } else {
        let mut opts = ParallelOptions::new(&tasks_per_axis, cfg.threads);
        opts.max_steps = max_steps;
        let out = parallel::run_parallel_with(problem, scheme, &mesh, &opts, None)?;
        (out.state, out.stats, out.counters)
    };
    let error = if state.t >= problem.final_time { error_of(&state) } else { None };
    Ok(RunReport {
        record: record(&problem, &scheme, &mesh, error, stats.runtime_s, stats.steps, tasks, cfg.threads, cfg.comms_stages)?,
        steps: stats.steps,
        conservation_defect: stats.conservation_defect(),
        newton_total: stats.newton.total_iterations,
        newton_max: stats.newton.max_iterations,
        counters,
    })
}

pub fn write_run(cfg: &RunConfig, report: &RunReport) -> Result<()> {
    metrics::write_csv(create_output(&cfg.output, "run.csv")?, std::slice::from_ref(&report.record))?;
    if !report.counters.is_empty() {
        parallel::write_instrumentation_csv(create_output(&cfg.output, "run_tasks.csv")?, &report.counters)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub runs: Vec<RunReport>,
    /// Least-squares order over all meshes.
    pub fitted_order: Option<f64>,
}

impl ConvergenceReport {
    pub fn records(&self) -> Vec<MetricsRecord> {
        self.runs.iter().map(|r| r.record.clone()).collect()
    }

    pub fn summary(&self) -> String {
        let mut s: Vec<String> = self
            .runs
            .iter()
            .map(|r| format!("{} order={}", r.summary(), r.record.order.map_or("-".into(), |o| format!("{o:.2}"))))
            .collect();
        s.push(format!("fitted order: {}", self.fitted_order.map_or("n/a".into(), |o| format!("{o:.2}"))));
        s.join("\n")
    }
}

/// Serial runs over `cfg.meshes` with pairwise and fitted orders.
pub fn convergence(cfg: &RunConfig) -> Result<ConvergenceReport> {
    cfg.validate(Study::Convergence)?;
    let mut runs = Vec::with_capacity(cfg.meshes.len());
    for &n in &cfg.meshes {
        let c = RunConfig {
            mesh: n,
            tasks: 1,
            step_log: false,
            ..cfg.clone()
        };
        runs.push(run_once(&c)?);
    }
    let mut records: Vec<MetricsRecord> = runs.iter().map(|r| r.record.clone()).collect();
    metrics::fill_orders(&mut records);
    for (r, rec) in runs.iter_mut().zip(records) {
        r.record = rec;
    }
    let (e, h): (Vec<f64>, Vec<f64>) = runs
        .iter()
        .filter_map(|r| r.record.error.map(|e| (e, 1.0 / r.record.mesh[0] as f64)))
        .unzip();
    Ok(ConvergenceReport {
        fitted_order: metrics::fitted_order(&e, &h).ok(),
        runs,
    })
}

pub fn write_convergence(cfg: &RunConfig, report: &ConvergenceReport) -> Result<()> {
    metrics::write_csv(create_output(&cfg.output, "convergence.csv")?, &report.records())?;
    if cfg.emit_plots {
        let rows: Vec<Vec<f64>> = report
            .runs
            .iter()
            .filter_map(|r| r.record.error.map(|e| vec![1.0 / r.record.mesh[0] as f64, e, r.record.runtime_s]))
            .collect();
        write_dat(&cfg.output.join("convergence.dat"), &["h", "error", "runtime_s"], &rows)?;
    }
    Ok(())
}

pub fn scaling(cfg: &RunConfig) -> Result<Vec<ScalingRow>> {
    cfg.validate(Study::Scaling)?;
    parallel::scaling_study(
        &ScalingConfig {
            problem: cfg.problem_setup()?,
            scheme: cfg.scheme_config()?,
            cells_per_axis: cfg.mesh,
            threads_per_task: cfg.threads,
            comms_stages: cfg.comms_stages,
            max_steps: cfg.max_steps.unwrap_or(usize::MAX),
        },
        &cfg.task_counts,
    )
}

pub fn scaling_summary(rows: &[ScalingRow]) -> String {
    rows.iter()
        .map(|r| {
            let m = &r.record;
            format!(
                "tasks={} mesh/task={} runtime={:.3}s speedup={} efficiency={} comms={} measured_messages={}",
                m.tasks,
                metrics::mesh_label(&r.mesh_per_task),
                m.runtime_s,
                m.speedup.map_or("-".into(), |s| format!("{s:.2}")),
                m.efficiency_pct.map_or("-".into(), |e| format!("{e:.1}%")),
                m.comms,
                r.measured_messages
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn write_scaling(cfg: &RunConfig, rows: &[ScalingRow]) -> Result<()> {
    let records: Vec<MetricsRecord> = rows.iter().map(|r| r.record.clone()).collect();
    metrics::write_csv(create_output(&cfg.output, "scaling.csv")?, &records)?;
    let mut w = csv::Writer::from_writer(create_output(&cfg.output, "scaling_tasks.csv")?);
    let mut header = vec!["tasks"];
    header.extend(parallel::INSTRUMENTATION_COLUMNS);
    w.write_record(&header)?;
    for r in rows {
        for c in &r.counters {
            w.write_record([
                r.record.tasks.to_string(),
                c.task.to_string(),
                c.messages_sent.to_string(),
                c.payload_elements.to_string(),
                c.reductions.to_string(),
                format!("{:.6}", c.wait_s),
                format!("{:.6}", c.compute_s),
            ])?;
        }
    }
    w.flush()?;
    if cfg.emit_plots {
        let rows: Vec<Vec<f64>> = records
            .iter()
            .map(|m| vec![m.tasks as f64, m.runtime_s, m.speedup.unwrap_or(f64::NAN), m.efficiency_pct.unwrap_or(f64::NAN)])
            .collect();
        write_dat(&cfg.output.join("scaling.dat"), &["tasks", "runtime_s", "speedup", "efficiency_pct"], &rows)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub problem: String,
    pub scheme: String,
    pub degree: usize,
    pub cfl: f64,
    pub mesh: Vec<usize>,
    pub stable: bool,
    pub steps: usize,
    pub t: f64,
    pub detail: String,
}

pub const STABILITY_COLUMNS: [&str; 9] = ["problem", "scheme", "Mdeg", "nu", "mesh", "stable", "steps", "t", "detail"];

/// Run each CFL number in `cfg.nus`; instabilities and Newton failures are
/// recorded as unstable rather than reported as errors.
pub fn stability(cfg: &RunConfig) -> Result<Vec<StabilityRow>> {
    cfg.validate(Study::Stability)?;
    let problem = cfg.problem_setup()?;
    let mesh = CartesianMesh::unit(problem.dim(), cfg.mesh)?;
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    let mut rows = Vec::with_capacity(cfg.nus.len());
    for &nu in &cfg.nus {
        let scheme = SchemeConfig {
            cfl: nu,
            ..cfg.scheme_config()?
        };
        let solver = Solver::new(problem, scheme, mesh.clone())?;
        let out = with_pool(cfg.threads, || solver.run_from(solver.initial_state(), None, max_steps))?;
        let (stable, steps, t, detail) = match out {
            Ok(o) => (true, o.stats.steps, o.state.t, String::new()),
            Err(e @ Error::Instability { step, time, .. }) => (false, step, time, e.to_string()),
            Err(e @ Error::NonConvergence { .. }) => (false, 0, f64::NAN, e.to_string()),
            Err(e) => return Err(e),
        };
        rows.push(StabilityRow {
            problem: problem.law.kind.name().into(),
            scheme: scheme.kind.name().to_uppercase(),
            degree: scheme.degree,
            cfl: nu,
            mesh: mesh.cells.clone(),
            stable,
            steps,
            t,
            detail,
        });
    }
    Ok(rows)
}

pub fn stability_summary(rows: &[StabilityRow]) -> String {
    rows.iter()
        .map(|r| {
            format!(
                "{} {} Mdeg={} nu={} mesh={}: {} after {} steps (t={:.4}){}",
                r.problem,
                r.scheme,
                r.degree,
                r.cfl,
                metrics::mesh_label(&r.mesh),
                if r.stable { "stable" } else { "UNSTABLE" },
                r.steps,
                r.t,
                if r.detail.is_empty() { String::new() } else { format!(": {}", r.detail) }
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn write_stability(cfg: &RunConfig, rows: &[StabilityRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_output(&cfg.output, "stability.csv")?);
    w.write_record(STABILITY_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.problem.clone(),
            r.scheme.clone(),
            r.degree.to_string(),
            r.cfl.to_string(),
            metrics::mesh_label(&r.mesh),
            r.stable.to_string(),
            r.steps.to_string(),
            format!("{:.6e}", r.t),
            r.detail.clone(),
        ])?;
    }
    w.flush()?;
    if cfg.emit_plots {
        let data: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.cfl, r.stable as u8 as f64, r.steps as f64]).collect();
        write_dat(&cfg.output.join("stability.dat"), &["nu", "stable", "steps"], &data)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub dim: usize,
    /// Basis order `Mdeg + 1`.
    pub order: usize,
    pub backend: Backend,
    pub median_s: f64,
    pub min_s: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCheck {
    pub order: usize,
    /// Largest entry difference relative to the largest entry.
    pub qqf_vs_quadrature: f64,
    pub qqf_vs_perturbation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Fitted `log(time)` against `log(Mdeg + 1)` slope per backend.
    pub exponents: Vec<(Backend, f64)>,
    pub checks: Vec<BenchCheck>,
}

impl BenchReport {
    pub fn median(&self, order: usize, backend: Backend) -> Option<f64> {
        self.rows.iter().find(|r| r.order == order && r.backend == backend).map(|r| r.median_s)
    }

    pub fn exponent(&self, backend: Backend) -> Option<f64> {
        self.exponents.iter().find(|(b, _)| *b == backend).map(|&(_, e)| e)
    }

    pub fn summary(&self) -> String {
        let mut s: Vec<String> = self
            .rows
            .iter()
            .map(|r| format!("{}D order {} {:<12} median {:.3e}s (min {:.3e}s)", r.dim, r.order, r.backend.name(), r.median_s, r.min_s))
            .collect();
        for (b, e) in &self.exponents {
            s.push(format!("fitted exponent {:<12} {e:.2}", b.name()));
        }
        for c in &self.checks {
            s.push(format!(
                "order {} max relative difference: qqf/quadrature {:.2e}{}",
                c.order,
                c.qqf_vs_quadrature,
                c.qqf_vs_perturbation.map_or(String::new(), |p| format!(", qqf/perturbation {p:.2e}"))
            ));
        }
        s.join("\n")
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn advection_of(dim: usize) -> LawKind {
    match dim {
        1 => LawKind::Advection1d,
        2 => LawKind::Advection2d,
        _ => LawKind::Advection3d,
    }
}

/// Time single-region Jacobian assembly per backend and basis order on
/// random region states of linear advection, and cross-check the backends.
pub fn bench_assembly(cfg: &RunConfig) -> Result<BenchReport> {
    cfg.validate(Study::BenchAssembly)?;
    let dim = cfg.bench_dim;
    let law = ConservationLaw::new(advection_of(dim));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = vec![0.1; dim];
    let dt = 0.05;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for &order in &cfg.orders {
        let pred = Predictor::build(law, order - 1, &h, NewtonConfig::default(), Backend::Qqf)?;
        let ops = &pred.ops;
        let th = ops.kern.theta;
        let q: Vec<f64> = (0..ops.nb() * th).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut w = ops.initial_guess(&q);
        w.iter_mut().for_each(|v| *v += 0.1 * rng.gen_range(-1.0..1.0));
        let mut rw = RegionWork::default();
        let lam = ops.face_lambdas(&w, &mut rw.wk);
        let mut jacs = Vec::new();
        for backend in Backend::ALL {
            if backend == Backend::Perturbation && order > cfg.perturbation_max_order {
                continue;
            }
            let mut jac = ops.new_jacobian();
            let mut times = Vec::with_capacity(cfg.repetitions);
            for _ in 0..cfg.repetitions {
                let t = Instant::now();
                ops.jacobian(backend, &w, &q, dt, &lam, &mut jac, &mut rw);
                times.push(t.elapsed().as_secs_f64());
            }
            let min_s = times.iter().copied().fold(f64::INFINITY, f64::min);
            rows.push(BenchRow {
                dim,
                order,
                backend,
                median_s: median(&mut times),
                min_s,
                repetitions: cfg.repetitions,
            });
            jacs.push((backend, jac));
        }
        let scale = jacs[0].1.max_abs().max(f64::MIN_POSITIVE);
        let diff = |b: Backend| jacs.iter().find(|(x, _)| *x == b).map(|(_, j)| jacs[0].1.max_abs_diff(j) / scale);
        checks.push(BenchCheck {
            order,
            qqf_vs_quadrature: diff(Backend::Quadrature).expect("quadrature is always timed"),
            qqf_vs_perturbation: diff(Backend::Perturbation),
        });
    }
    let exponents = Backend::ALL
        .iter()
        .filter_map(|&b| {
            let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.backend == b).map(|r| (r.order as f64, r.median_s)).unzip();
            metrics::loglog_slope(&x, &y).ok().map(|e| (b, e))
        })
        .collect();
    Ok(BenchReport { rows, exponents, checks })
}

pub const BENCH_COLUMNS: [&str; 7] = ["dim", "Mdeg", "basis_order", "backend", "median_s", "min_s", "repetitions"];

pub fn write_bench(cfg: &RunConfig, report: &BenchReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_output(&cfg.output, "bench_assembly.csv")?);
    w.write_record(BENCH_COLUMNS)?;
    for r in &report.rows {
        w.write_record([
            r.dim.to_string(),
            (r.order - 1).to_string(),
            r.order.to_string(),
            r.backend.name().to_string(),
            format!("{:.6e}", r.median_s),
            format!("{:.6e}", r.min_s),
            r.repetitions.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(create_output(&cfg.output, "bench_fit.csv")?);
    w.write_record(["backend", "exponent"])?;
    for (b, e) in &report.exponents {
        w.write_record([b.name().to_string(), format!("{e:.4}")])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(create_output(&cfg.output, "bench_check.csv")?);
    w.write_record(["Mdeg", "qqf_vs_quadrature", "qqf_vs_perturbation"])?;
    for c in &report.checks {
        w.write_record([
            (c.order - 1).to_string(),
            format!("{:.3e}", c.qqf_vs_quadrature),
            c.qqf_vs_perturbation.map_or(String::new(), |p| format!("{p:.3e}")),
        ])?;
    }
    w.flush()?;
    if cfg.emit_plots {
        let data: Vec<Vec<f64>> = cfg
            .orders
            .iter()
            .map(|&o| {
                let mut r = vec![o as f64];
                r.extend(Backend::ALL.iter().map(|&b| report.median(o, b).unwrap_or(f64::NAN)));
                r
            })
            .collect();
        write_dat(&cfg.output.join("bench_assembly.dat"), &["basis_order", "qqf_s", "quadrature_s", "perturbation_s"], &data)?;
    }
    Ok(())
}
