//! Time integration: the predictor-corrector step, the SSP Runge-Kutta
//! reference scheme, CFL control and complete runs.

use crate::dg::{ElementKernels, Work};
use crate::error::{Error, Result};
use crate::law::ProblemSetup;
use crate::mesh::{CartesianMesh, CellSplit, LocalGrid};
use crate::predictor::newton::{predict_cells, PredictStats};
use crate::predictor::{Backend, NewtonConfig, Predictor, QqfTables};
use crate::tensor::{Scratch, TensorOps};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Ridg,
    Rkdg,
}

impl SchemeKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ridg" => Ok(SchemeKind::Ridg),
            "rkdg" => Ok(SchemeKind::Rkdg),
            _ => Err(Error::invalid("scheme", format!("unknown scheme `{s}` (ridg|rkdg)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Ridg => "ridg",
            SchemeKind::Rkdg => "rkdg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub degree: usize,
    /// CFL number.
    pub cfl: f64,
    pub newton: NewtonConfig,
    pub backend: Backend,
    /// Runge-Kutta stages; `None` picks 3 for degree <= 2 and 10 otherwise.
    pub stages: Option<usize>,
}

impl SchemeConfig {
    pub fn ridg(degree: usize, cfl: f64) -> Self {
        SchemeConfig {
            kind: SchemeKind::Ridg,
            degree,
            cfl,
            newton: NewtonConfig::default(),
            backend: Backend::Qqf,
            stages: None,
        }
    }

    pub fn rkdg(degree: usize, cfl: f64) -> Self {
        SchemeConfig {
            kind: SchemeKind::Rkdg,
            ..Self::ridg(degree, cfl)
        }
    }

    pub fn rk_stages(&self) -> Result<usize> {
        let s = self.stages.unwrap_or(if self.degree <= 2 { 3 } else { 10 });
        match (s, self.degree) {
            (3, 0..=2) | (10, 0..=3) => Ok(s),
            _ => Err(Error::invalid(
                "stages",
                format!("{s} Runge-Kutta stages are not supported with Mdeg={}", self.degree),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl.is_finite()) {
            return Err(Error::invalid("nu", format!("CFL number must be positive, got {}", self.cfl)));
        }
        if self.degree < 1 {
            return Err(Error::invalid("mdeg", "polynomial degree must be at least 1"));
        }
        if self.degree > 12 {
            return Err(Error::invalid("mdeg", "polynomial degree above 12 is not supported"));
        }
        match self.kind {
            SchemeKind::Ridg => self.newton.validate(),
            SchemeKind::Rkdg => self.rk_stages().map(|_| ()),
        }
    }
}

/// Modal coefficients of every cell at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub q: Vec<f64>,
    pub theta: usize,
    pub t: f64,
}

impl StateField {
    pub fn cell(&self, i: usize) -> &[f64] {
        &self.q[i * self.theta..(i + 1) * self.theta]
    }

    pub fn num_cells(&self) -> usize {
        self.q.len() / self.theta
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite())
    }

    /// `int q` over the domain.
    pub fn total_integral(&self, mesh: &CartesianMesh) -> f64 {
        total_integral(&self.q, self.theta, mesh.cell_volume())
    }

    /// `(int q^2)^(1/2)`.
    pub fn l2_norm(&self, mesh: &CartesianMesh) -> f64 {
        (mesh.cell_volume() * self.q.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

pub fn total_integral(q: &[f64], theta: usize, cell_volume: f64) -> f64 {
    q.iter().step_by(theta).sum::<f64>() * cell_volume
}

/// L2 projection of `f` onto degree `degree` in every cell, with `points`
/// Gauss points per axis.
pub fn project_field(f: impl Fn(&[f64]) -> f64 + Sync, mesh: &CartesianMesh, degree: usize, points: usize) -> Vec<f64> {
    let d = mesh.dim;
    let ops = TensorOps::new(degree + 1, points);
    let npts = points.pow(d as u32);
    let norm = 0.5f64.powi(d as i32);
    let blocks: Vec<Vec<f64>> = (0..mesh.num_cells())
        .into_par_iter()
        .map_init(Scratch::default, |s, c| {
            let vals: Vec<f64> = (0..npts)
                .map(|i| {
                    let mut xi = Vec::with_capacity(d);
                    let mut r = i;
                    for _ in 0..d {
                        xi.push(ops.nodes[r % points]);
                        r /= points;
                    }
                    f(&mesh.to_physical(c, &xi)) * norm
                })
                .collect();
            let mut out = Vec::new();
            ops.integrate(&vals, d, &mut out, s);
            out
        })
        .collect();
    blocks.concat()
}

/// `dt = nu min(h) / lambda`.
pub fn compute_dt(cfl: f64, mesh: &CartesianMesh, lambda_max: f64) -> Result<f64> {
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::invalid("lambda_max", format!("wave speed must be positive and finite, got {lambda_max}")));
    }
    Ok(cfl * mesh.min_h() / lambda_max)
}

/// Step actually taken from `t` toward `t_end`, and whether it is the last.
/// Steps within a relative `1e-12` of the remaining time are taken as is,
/// so that evenly dividing step sizes are not perturbed by rounding.
pub fn clip_dt(dt: f64, t: f64, t_end: f64) -> (f64, bool) {
    let rest = t_end - t;
    if (rest - dt).abs() <= 1e-12 * t_end.abs().max(1.0) {
        (dt, true)
    } else if dt > rest {
        (rest, true)
    } else {
        (dt, false)
    }
}

fn face_blocks<'a>(q: &'a [f64], th: usize, nb: &[Option<usize>]) -> Vec<&'a [f64]> {
    nb.iter()
        .map(|n| {
            let n = n.expect("face neighbour of an owned cell");
            &q[n * th..(n + 1) * th]
        })
        .collect()
}

/// Semi-discrete right-hand side of the local cells `cells`, one block each.
pub fn rhs_cells(kern: &ElementKernels, q: &[f64], grid: &LocalGrid, cells: &[usize]) -> Vec<Vec<f64>> {
    let th = kern.theta;
    cells
        .par_iter()
        .map_init(Work::default, |wk, &c| {
            let nb = grid.face_neighbors(c);
            let mut out = Vec::new();
            kern.rkdg_rhs(&q[c * th..(c + 1) * th], &face_blocks(q, th, &nb), &mut out, wk);
            out
        })
        .collect()
}

/// Corrected states of the local cells `cells`, one block each.
pub fn correct_cells(kern: &ElementKernels, q: &[f64], w: &[f64], grid: &LocalGrid, cells: &[usize], dt: f64) -> Vec<Vec<f64>> {
    let (th, tt) = (kern.theta, kern.theta_t);
    cells
        .par_iter()
        .map_init(Work::default, |wk, &c| {
            let nb = grid.face_neighbors(c);
            let mut out = Vec::new();
            kern.correct(&q[c * th..(c + 1) * th], &w[c * tt..(c + 1) * tt], &face_blocks(w, tt, &nb), dt, &mut out, wk);
            out
        })
        .collect()
}

fn scatter(out: &mut [f64], cells: &[usize], blocks: Vec<Vec<f64>>) {
    for (&c, b) in cells.iter().zip(blocks) {
        let n = b.len();
        out[c * n..(c + 1) * n].copy_from_slice(&b);
    }
}

/// Semi-discrete right-hand side on the owned cells (others left zero).
pub fn rhs_grid(kern: &ElementKernels, q: &[f64], grid: &LocalGrid) -> Vec<f64> {
    let mut r = vec![0.0; q.len()];
    scatter(&mut r, &grid.owned, rhs_cells(kern, q, grid, &grid.owned));
    r
}

/// Corrector on the owned cells; other blocks are copied from `q`.
pub fn correct_grid(kern: &ElementKernels, q: &[f64], w: &[f64], grid: &LocalGrid, dt: f64) -> Vec<f64> {
    let mut r = q.to_vec();
    scatter(&mut r, &grid.owned, correct_cells(kern, q, w, grid, &grid.owned, dt));
    r
}

/// Largest wave speed over the owned cells.
pub fn max_speed_grid(kern: &ElementKernels, q: &[f64], grid: &LocalGrid) -> f64 {
    let th = kern.theta;
    grid.owned
        .par_iter()
        .map_init(Work::default, |wk, &c| kern.max_speed(&q[c * th..(c + 1) * th], wk))
        .reduce(|| 0.0, f64::max)
}

pub fn rhs_field(kern: &ElementKernels, q: &[f64], mesh: &CartesianMesh) -> Vec<f64> {
    rhs_grid(kern, q, &LocalGrid::periodic(mesh))
}

pub fn correct_field(kern: &ElementKernels, q: &[f64], w: &[f64], mesh: &CartesianMesh, dt: f64) -> Vec<f64> {
    correct_grid(kern, q, w, &LocalGrid::periodic(mesh), dt)
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(y, x)| y + a * x).collect()
}

/// One SSP Runge-Kutta step. `rhs` evaluates the spatial operator of a
/// stage state; it may first refresh halo entries of its argument.
///
/// Stages are carried as increments over `q`, so that a vanishing operator
/// returns `q` bit for bit.
pub fn ssprk_step_with(q: &[f64], dt: f64, stages: usize, mut rhs: impl FnMut(&mut Vec<f64>) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut eval = |d: &[f64]| -> Result<Vec<f64>> {
        let mut u = axpy(q, 1.0, d);
        rhs(&mut u)
    };
    match stages {
        3 => {
            let l0 = eval(&vec![0.0; q.len()])?;
            let d1: Vec<f64> = l0.iter().map(|l| dt * l).collect();
            let l1 = eval(&d1)?;
            let d2: Vec<f64> = d1.iter().zip(&l1).map(|(d, l)| 0.25 * (d + dt * l)).collect();
            let l2 = eval(&d2)?;
            let d3: Vec<f64> = d2.iter().zip(&l2).map(|(d, l)| 2.0 / 3.0 * (d + dt * l)).collect();
            Ok(axpy(q, 1.0, &d3))
        }
        10 => {
            // low-storage SSPRK(10,4); e2 is the second register minus 2q/5
            let mut d1 = vec![0.0; q.len()];
            for _ in 0..5 {
                let l = eval(&d1)?;
                d1 = axpy(&d1, dt / 6.0, &l);
            }
            let e2: Vec<f64> = d1.iter().map(|d| 9.0 / 25.0 * d).collect();
            d1 = e2.iter().zip(&d1).map(|(a, b)| 15.0 * a - 5.0 * b).collect();
            for _ in 0..4 {
                let l = eval(&d1)?;
                d1 = axpy(&d1, dt / 6.0, &l);
            }
            let l = eval(&d1)?;
            let d: Vec<f64> = e2.iter().zip(&d1).zip(&l).map(|((a, b), l)| a + 0.6 * b + 0.1 * dt * l).collect();
            Ok(axpy(q, 1.0, &d))
        }
        s => Err(Error::invalid("stages", format!("unsupported stage count {s}"))),
    }
}

pub fn ssprk_step(kern: &ElementKernels, q: &[f64], dt: f64, mesh: &CartesianMesh, stages: usize) -> Result<Vec<f64>> {
    let grid = LocalGrid::periodic(mesh);
    ssprk_step_with(q, dt, stages, |u| Ok(rhs_grid(kern, u, &grid)))
}

/// Everything one run records besides the final state.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    pub runtime_s: f64,
    pub newton: PredictStats,
    pub initial_integral: f64,
    pub final_integral: f64,
    pub initial_norm: f64,
}

impl RunStats {
    pub fn conservation_defect(&self) -> f64 {
        (self.final_integral - self.initial_integral).abs() / self.initial_integral.abs().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: StateField,
    pub stats: RunStats,
}

/// Per-step log rows.
pub struct StepLog<'a> {
    writer: csv::Writer<Box<dyn Write + 'a>>,
}

impl<'a> StepLog<'a> {
    pub fn new(out: impl Write + 'a) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Box::new(out) as Box<dyn Write + 'a>);
        writer.write_record(["step", "t", "dt", "newton_iterations", "newton_max"])?;
        Ok(StepLog { writer })
    }

    pub fn row(&mut self, step: usize, t: f64, dt: f64, s: &PredictStats) -> Result<()> {
        self.writer.write_record([
            step.to_string(),
            format!("{t:.15e}"),
            format!("{dt:.15e}"),
            s.total_iterations.to_string(),
            s.max_iterations.to_string(),
        ])?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Instability check shared by the serial and threaded drivers.
pub fn check_state(norm: f64, finite: bool, initial_norm: f64, step: usize, t: f64) -> Result<()> {
    if !finite || !norm.is_finite() {
        return Err(Error::Instability {
            step,
            time: t,
            reason: "non-finite coefficients".into(),
            task: None,
        });
    }
    if norm > 10.0 * initial_norm {
        return Err(Error::Instability {
            step,
            time: t,
            reason: format!("L2 norm {norm:.3e} exceeds 10x the initial {initial_norm:.3e}"),
            task: None,
        });
    }
    Ok(())
}

/// Field carried by a halo exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaloField {
    /// Spatial coefficients (the step's initial state or a stage state).
    State,
    /// Predicted space-time coefficients.
    Prediction,
}

/// Refreshes the halo blocks of a worker-local field. The exchange is split
/// so that interior cells can be updated while it is in flight: `post`
/// sends the owned boundary layer, `complete` fills the halo.
pub trait Halo {
    fn post(&mut self, field: HaloField, data: &mut [f64]) -> Result<()>;
    fn complete(&mut self, field: HaloField, data: &mut [f64]) -> Result<()>;
}

/// The periodic whole-mesh grid has no halo.
pub struct NoHalo;

impl Halo for NoHalo {
    fn post(&mut self, _: HaloField, _: &mut [f64]) -> Result<()> {
        Ok(())
    }

    fn complete(&mut self, _: HaloField, _: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

/// A problem discretised on a mesh with one scheme.
#[derive(Debug)]
pub struct Solver {
    pub problem: ProblemSetup,
    pub scheme: SchemeConfig,
    pub mesh: CartesianMesh,
    pub kern: ElementKernels,
    pub predictor: Option<Predictor>,
}

impl Solver {
    pub fn new(problem: ProblemSetup, scheme: SchemeConfig, mesh: CartesianMesh) -> Result<Self> {
        Self::with_tables(problem, scheme, mesh, None)
    }

    /// Like [`new`](Self::new) with prebuilt predictor tables.
    pub fn with_tables(problem: ProblemSetup, scheme: SchemeConfig, mesh: CartesianMesh, tables: Option<Arc<QqfTables>>) -> Result<Self> {
        scheme.validate()?;
        if problem.dim() != mesh.dim {
            return Err(Error::invalid(
                "mesh",
                format!("{} is {}-dimensional but the mesh has {} axes", problem.law.kind.name(), problem.dim(), mesh.dim),
            ));
        }
        if !(problem.final_time > 0.0) {
            return Err(Error::invalid("final_time", "must be positive"));
        }
        let kern = ElementKernels::exact(problem.law, scheme.degree, &mesh.h);
        let predictor = match scheme.kind {
            SchemeKind::Ridg => {
                mesh.check_ridg()?;
                let tables = match tables {
                    Some(t) => t,
                    None => Arc::new(crate::predictor::build_tables(scheme.degree, mesh.dim)?),
                };
                Some(Predictor::with_tables(problem.law, scheme.degree, &mesh.h, tables, scheme.newton, scheme.backend))
            }
            SchemeKind::Rkdg => None,
        };
        Ok(Solver {
            problem,
            scheme,
            mesh,
            kern,
            predictor,
        })
    }

    pub fn projection_points(&self) -> usize {
        2 * (self.scheme.degree + 2)
    }

    pub fn initial_state(&self) -> StateField {
        let p = &self.problem;
        StateField {
            q: project_field(|x| p.initial(x), &self.mesh, self.scheme.degree, self.projection_points()),
            theta: self.kern.theta,
            t: 0.0,
        }
    }

    /// Advance `q` over one step of size `dt` on `grid`. Interior cells are
    /// updated between posting and completing each halo exchange; every
    /// cell's arithmetic is the same whichever group it falls in.
    pub fn step_grid(&self, q: &[f64], dt: f64, grid: &LocalGrid, split: &CellSplit, halo: &mut dyn Halo) -> Result<(Vec<f64>, PredictStats)> {
        let (inner, outer) = (&split.interior, &split.boundary);
        match &self.predictor {
            Some(pred) => {
                let tt = self.kern.theta_t;
                let mut q = q.to_vec();
                halo.post(HaloField::State, &mut q)?;
                let (wi, mut stats) = predict_cells(pred, &q, grid, inner, dt)?;
                halo.complete(HaloField::State, &mut q)?;
                let (wb, sb) = predict_cells(pred, &q, grid, outer, dt)?;
                stats.merge(&sb);
                let mut w = vec![0.0; grid.num_cells() * tt];
                scatter(&mut w, inner, wi);
                scatter(&mut w, outer, wb);
                halo.post(HaloField::Prediction, &mut w)?;
                let ci = correct_cells(&self.kern, &q, &w, grid, inner, dt);
                halo.complete(HaloField::Prediction, &mut w)?;
                let cb = correct_cells(&self.kern, &q, &w, grid, outer, dt);
                scatter(&mut q, inner, ci);
                scatter(&mut q, outer, cb);
                Ok((q, stats))
            }
            None => {
                let stages = self.scheme.rk_stages()?;
                let q = ssprk_step_with(q, dt, stages, |u| {
                    halo.post(HaloField::State, u)?;
                    let ri = rhs_cells(&self.kern, u, grid, inner);
                    halo.complete(HaloField::State, u)?;
                    let rb = rhs_cells(&self.kern, u, grid, outer);
                    let mut r = vec![0.0; u.len()];
                    scatter(&mut r, inner, ri);
                    scatter(&mut r, outer, rb);
                    Ok(r)
                })?;
                Ok((q, PredictStats::default()))
            }
        }
    }

    pub fn step(&self, q: &[f64], dt: f64) -> Result<(Vec<f64>, PredictStats)> {
        let grid = LocalGrid::periodic(&self.mesh);
        let split = grid.split();
        self.step_grid(q, dt, &grid, &split, &mut NoHalo)
    }

    /// Advance the initial state to the final time.
    pub fn run(&self, log: Option<&mut StepLog>) -> Result<RunOutcome> {
        self.run_from(self.initial_state(), log, usize::MAX)
    }

    /// Advance `state` to the final time or for at most `max_steps` steps.
    pub fn run_from(&self, state: StateField, mut log: Option<&mut StepLog>, max_steps: usize) -> Result<RunOutcome> {
        let mesh = &self.mesh;
        let t_end = self.problem.final_time;
        let grid = LocalGrid::periodic(mesh);
        let split = grid.split();
        let initial_norm = state.l2_norm(mesh);
        let initial_integral = state.total_integral(mesh);
        let mut q = state.q;
        let mut t = state.t;
        let mut steps = 0;
        let mut newton = PredictStats::default();
        let start = Instant::now();
        while t < t_end && steps < max_steps {
            let lam = max_speed_grid(&self.kern, &q, &grid);
            let (dt, last) = clip_dt(compute_dt(self.scheme.cfl, mesh, lam)?, t, t_end);
            let (next, s) = self.step_grid(&q, dt, &grid, &split, &mut NoHalo)?;
            q = next;
            t = if last { t_end } else { t + dt };
            steps += 1;
            newton.merge(&s);
            let norm = (mesh.cell_volume() * q.iter().map(|v| v * v).sum::<f64>()).sqrt();
            check_state(norm, q.iter().all(|v| v.is_finite()), initial_norm, steps, t)?;
            if let Some(l) = log.as_deref_mut() {
                l.row(steps, t, dt, &s)?;
            }
        }
        let runtime_s = start.elapsed().as_secs_f64();
        if let Some(l) = log {
            l.flush()?;
        }
        let state = StateField {
            theta: self.kern.theta,
            t,
            q,
        };
        Ok(RunOutcome {
            stats: RunStats {
                steps,
                runtime_s,
                newton,
                initial_integral,
                final_integral: state.total_integral(mesh),
                initial_norm,
            },
            state,
        })
    }
}
