//! `ridg`: command-line driver for runs, convergence and scaling studies,
//! stability sweeps and the Jacobian assembly benchmark.

use clap::{Args, Parser, Subcommand};
use ridg_core::harness::{self, RunConfig, Study};
use ridg_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "ridg", version, about = "Regionally-implicit DG solver studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Advance one problem to its final time.
    Run(Opts),
    /// Errors and orders over a sequence of meshes.
    Convergence(Opts),
    /// Strong scaling over task counts.
    Scaling(Opts),
    /// Stable or unstable at each CFL number.
    Stability(Opts),
    /// Time region Jacobian assembly per backend and order.
    BenchAssembly(Opts),
}

/// A comma list given as one flag value.
#[derive(Debug, Clone)]
struct List<T>(Vec<T>);

impl<T> From<List<T>> for Vec<T> {
    fn from(l: List<T>) -> Self {
        l.0
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<List<T>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("`{p}` is not a valid entry")))
        .collect::<Result<_, _>>()
        .map(List)
}

/// `a..b` (inclusive), `a..=b` or a comma list.
fn parse_orders(s: &str) -> Result<List<usize>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| format!("bad range start in `{s}`"))?, b.trim().parse().map_err(|_| format!("bad range end in `{s}`"))?);
        if a > b {
            return Err(format!("empty range `{s}`"));
        }
        return Ok(List((a..=b).collect()));
    }
    parse_list(s)
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// Manifest file (flat TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// adv1d | adv2d | adv3d | burgers2d
    #[arg(long)]
    problem: Option<String>,
    /// ridg | rkdg
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    mdeg: Option<usize>,
    /// CFL number.
    #[arg(long, allow_hyphen_values = true)]
    nu: Option<f64>,
    /// Cells per axis.
    #[arg(long)]
    mesh: Option<usize>,
    /// Comma-separated cells per axis, e.g. 50,70,120,240.
    #[arg(long, value_parser = parse_list::<usize>)]
    meshes: Option<List<usize>>,
    #[arg(long)]
    final_time: Option<f64>,
    #[arg(long)]
    newton_tol: Option<f64>,
    #[arg(long)]
    newton_max_iter: Option<usize>,
    /// Solve linear problems by full Newton instead of the reused operator.
    #[arg(long)]
    no_fast_path: bool,
    /// qqf | quadrature | perturbation
    #[arg(long)]
    backend: Option<String>,
    /// Runge-Kutta stages (3 or 10).
    #[arg(long)]
    stages: Option<usize>,
    /// Tasks per axis.
    #[arg(long)]
    tasks: Option<usize>,
    /// Comma-separated total task counts.
    #[arg(long, value_parser = parse_list::<usize>)]
    task_counts: Option<List<usize>>,
    /// Threads per task.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated CFL numbers.
    #[arg(long, value_parser = parse_list::<f64>)]
    nus: Option<List<f64>>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Stages per step in the analytic message count.
    #[arg(long)]
    comms_stages: Option<u64>,
    /// Benchmark dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Basis orders Mdeg+1, e.g. 2..5.
    #[arg(long, value_parser = parse_orders)]
    orders: Option<List<usize>>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    perturbation_max_order: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write gnuplot data files.
    #[arg(long)]
    emit_plots: bool,
    /// Write a per-step CSV log (single-task runs).
    #[arg(long)]
    step_log: bool,
    /// Print the effective manifest and exit.
    #[arg(long)]
    print_config: bool,
}

impl Opts {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        c.apply_env()?;
        macro_rules! set {
            ($($f:ident => $g:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$g = v.clone().into();
                }
            )*};
        }
        set!(problem => problem, scheme => scheme, mdeg => mdeg, nu => nu, mesh => mesh, meshes => meshes,
             newton_tol => newton_tol, newton_max_iter => newton_max_iter, backend => backend, tasks => tasks,
             task_counts => task_counts, threads => threads, nus => nus, dim => bench_dim, orders => orders,
             repetitions => repetitions, perturbation_max_order => perturbation_max_order, output => output, seed => seed);
        if self.final_time.is_some() {
            c.final_time = self.final_time;
        }
        if self.stages.is_some() {
            c.stages = self.stages;
        }
        if self.max_steps.is_some() {
            c.max_steps = self.max_steps;
        }
        if self.comms_stages.is_some() {
            c.comms_stages = self.comms_stages;
        }
        if self.no_fast_path {
            c.linear_fast_path = false;
        }
        c.emit_plots |= self.emit_plots;
        c.step_log |= self.step_log;
        Ok(c)
    }
}

fn execute(study: Study, opts: &Opts) -> Result<String, Error> {
    let cfg = opts.config()?;
    if opts.print_config {
        return cfg.to_toml();
    }
    cfg.validate(study)?;
    log::info!("{} -> {}", study.name(), cfg.output.display());
    Ok(match study {
        Study::Run => {
            let r = harness::run_once(&cfg)?;
            harness::write_run(&cfg, &r)?;
            r.summary()
        }
        Study::Convergence => {
            let r = harness::convergence(&cfg)?;
            harness::write_convergence(&cfg, &r)?;
            r.summary()
        }
        Study::Scaling => {
            let r = harness::scaling(&cfg)?;
            harness::write_scaling(&cfg, &r)?;
            harness::scaling_summary(&r)
        }
        Study::Stability => {
            let r = harness::stability(&cfg)?;
            harness::write_stability(&cfg, &r)?;
            harness::stability_summary(&r)
        }
        Study::BenchAssembly => {
            let r = harness::bench_assembly(&cfg)?;
            harness::write_bench(&cfg, &r)?;
            r.summary()
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (study, opts) = match &cli.command {
        Command::Run(o) => (Study::Run, o),
        Command::Convergence(o) => (Study::Convergence, o),
        Command::Scaling(o) => (Study::Scaling, o),
        Command::Stability(o) => (Study::Stability, o),
        Command::BenchAssembly(o) => (Study::BenchAssembly, o),
    };
    match execute(study, opts) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
