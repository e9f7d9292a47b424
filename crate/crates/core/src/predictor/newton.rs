//! Regional Newton solves and the whole-mesh prediction driver.

use super::linalg::DenseLu;
use super::region::{Backend, RegionOps, RegionWork};
use crate::error::{Error, Result};
use crate::mesh::{CartesianMesh, LocalGrid};
use rayon::prelude::*;
use crate::tensor::Side;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Absolute tolerance on the 2-norm of the region residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Reuse one factorised Jacobian per step size for linear laws.
    pub linear_fast_path: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tolerance: 1e-11,
            max_iterations: 20,
            linear_fast_path: true,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("newton_tol", "must be positive"));
        }
        if self.max_iterations < 1 {
            return Err(Error::invalid("newton_max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RegionSolve {
    /// Central element prediction (`theta_t` coefficients).
    pub w: Vec<f64>,
    /// All region unknowns.
    pub full: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// For a linear law the region system is `J W = J W0 - R(W0)` with a
/// state-independent `J`. Only the central rows of `J^-1` restricted to the
/// constant-in-time columns are needed, because `R(W0)` vanishes elsewhere.
#[derive(Debug)]
pub struct LinearOperator {
    pub dt: f64,
    /// Per region element: `theta_t x theta` block of `J^-1`, or `None` if
    /// identically zero.
    pub blocks: Vec<Option<Vec<f64>>>,
}

/// Spatial residual pieces of one cell: the volume term followed by the
/// `2d` face terms, ordered (axis 0 lower, axis 0 upper, ...).
pub fn cell_pieces(ops: &RegionOps, q: &[f64], nbrs: &[&[f64]], out: &mut Vec<f64>, rw: &mut RegionWork) {
    let k = &ops.kern;
    let th = k.theta;
    let mut v = Vec::new();
    k.spatial_volume(q, &mut v, &mut rw.wk);
    out.clear();
    out.extend_from_slice(&v);
    for a in 0..k.dim {
        for side in Side::BOTH {
            let start = out.len();
            out.resize(start + th, 0.0);
            k.spatial_face_add(q, nbrs[2 * a + side.index()], a, side, &mut out[start..], &mut rw.wk);
        }
    }
}

#[derive(Debug)]
pub struct Predictor {
    pub ops: RegionOps,
    pub cfg: NewtonConfig,
    pub backend: Backend,
    linear: Mutex<Vec<(u64, Arc<LinearOperator>)>>,
}

impl Predictor {
    pub fn new(ops: RegionOps, cfg: NewtonConfig, backend: Backend) -> Self {
        Predictor {
            ops,
            cfg,
            backend,
            linear: Mutex::new(Vec::new()),
        }
    }

    /// Predictor for cells of size `h`, building the coefficient tables.
    pub fn build(law: crate::law::ConservationLaw, degree: usize, h: &[f64], cfg: NewtonConfig, backend: Backend) -> Result<Self> {
        cfg.validate()?;
        let tables = Arc::new(super::tables::build_tables(degree, law.dim)?);
        Ok(Self::with_tables(law, degree, h, tables, cfg, backend))
    }

    pub fn with_tables(law: crate::law::ConservationLaw, degree: usize, h: &[f64], tables: Arc<super::tables::QqfTables>, cfg: NewtonConfig, backend: Backend) -> Self {
        let kern = crate::dg::ElementKernels::exact(law, degree, h);
        Predictor::new(RegionOps::new(kern, tables), cfg, backend)
    }

    pub fn uses_fast_path(&self) -> bool {
        self.cfg.linear_fast_path && self.ops.kern.law.is_linear()
    }

    /// Cached linear operator for step `dt` (built on first use).
    pub fn linear_operator(&self, dt: f64) -> Result<Arc<LinearOperator>> {
        let mut cache = self.linear.lock().expect("operator cache poisoned");
        if let Some((_, op)) = cache.iter().find(|(b, _)| *b == dt.to_bits()) {
            return Ok(op.clone());
        }
        let op = Arc::new(self.build_linear(dt)?);
        cache.push((dt.to_bits(), op.clone()));
        Ok(op)
    }

    fn build_linear(&self, dt: f64) -> Result<LinearOperator> {
        let ops = &self.ops;
        let (th, tt, nb) = (ops.kern.theta, ops.kern.theta_t, ops.nb());
        let mut rw = RegionWork::default();
        let w = vec![0.0; ops.unknowns()];
        let q = vec![0.0; nb * th];
        let lam = ops.face_lambdas(&w, &mut rw.wk);
        let mut jac = ops.new_jacobian();
        ops.jacobian(self.backend, &w, &q, dt, &lam, &mut jac, &mut rw);
        let n = ops.unknowns();
        let lu = DenseLu::factor(jac.to_dense(), n)?;
        drop(jac);
        let mut blocks: Vec<Vec<f64>> = vec![vec![0.0; tt * th]; nb];
        let mut e = vec![0.0; n];
        for r in 0..tt {
            let row = ops.topo.centre * tt + r;
            e[row] = 1.0;
            let x = lu.solve_transpose(&e);
            e[row] = 0.0;
            for (j, b) in blocks.iter_mut().enumerate() {
                b[r * th..(r + 1) * th].copy_from_slice(&x[j * tt..j * tt + th]);
            }
        }
        Ok(LinearOperator {
            dt,
            blocks: blocks
                .into_iter()
                .map(|b| if b.iter().all(|&v| v == 0.0) { None } else { Some(b) })
                .collect(),
        })
    }

    /// Sum of the pieces of region element `j` that lie inside the region.
    fn region_source(&self, j: usize, pieces: &[f64], out: &mut [f64]) {
        let k = &self.ops.kern;
        let th = k.theta;
        out.copy_from_slice(&pieces[..th]);
        for a in 0..k.dim {
            for side in Side::BOTH {
                let f = 2 * a + side.index();
                if self.ops.topo.nbr[j][f].is_some() {
                    for (o, p) in out.iter_mut().zip(&pieces[(1 + f) * th..(2 + f) * th]) {
                        *o += p;
                    }
                }
            }
        }
    }

    /// One-shot linear prediction for the centre of a region, given every
    /// region element's pieces (see [`cell_pieces`]).
    pub fn predict_linear(&self, op: &LinearOperator, q_centre: &[f64], pieces: &[&[f64]]) -> Vec<f64> {
        let k = &self.ops.kern;
        let (th, tt) = (k.theta, k.theta_t);
        let mut w = vec![0.0; tt];
        w[..th].copy_from_slice(q_centre);
        let mut s = vec![0.0; th];
        for (j, blk) in op.blocks.iter().enumerate() {
            let Some(g) = blk else { continue };
            self.region_source(j, pieces[j], &mut s);
            if s.iter().all(|&v| v == 0.0) {
                continue;
            }
            for v in s.iter_mut() {
                *v *= op.dt;
            }
            for r in 0..tt {
                let row = &g[r * th..(r + 1) * th];
                let mut acc = 0.0;
                for (a, b) in row.iter().zip(&s) {
                    acc += a * b;
                }
                w[r] -= acc;
            }
        }
        w
    }

    /// Newton solve of a region system; `q` holds the `3^d` spatial blocks
    /// in stencil order.
    pub fn solve_region(&self, q: &[f64], dt: f64, rw: &mut RegionWork) -> Result<RegionSolve> {
        let ops = &self.ops;
        let n = ops.unknowns();
        let mut w = ops.initial_guess(q);
        let mut jac = ops.new_jacobian();
        let mut iterations = 0;
        loop {
            let lam = ops.face_lambdas(&w, &mut rw.wk);
            let r = ops.residual(&w, q, dt, &lam, rw);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || (iterations >= 1 && norm < self.cfg.tolerance) || iterations == self.cfg.max_iterations {
                if norm.is_finite() && norm < self.cfg.tolerance {
                    let tt = ops.kern.theta_t;
                    let c = ops.topo.centre;
                    return Ok(RegionSolve {
                        w: w[c * tt..(c + 1) * tt].to_vec(),
                        full: w,
                        iterations,
                        residual: norm,
                    });
                }
                return Err(Error::NonConvergence {
                    element: None,
                    iterations,
                    residual: norm,
                    iterate: w,
                    task: None,
                });
            }
            ops.jacobian(self.backend, &w, q, dt, &lam, &mut jac, rw);
            let lu = DenseLu::factor(jac.to_dense(), n)?;
            let dw = lu.solve(&r);
            for (x, d) in w.iter_mut().zip(&dw) {
                *x -= d;
            }
            iterations += 1;
        }
    }
}

/// Newton statistics of one prediction sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PredictStats {
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub regions: usize,
}

impl PredictStats {
    pub fn merge(&mut self, other: &PredictStats) {
        self.total_iterations += other.total_iterations;
        self.max_iterations = self.max_iterations.max(other.max_iterations);
        self.regions += other.regions;
    }
}

/// Gather the region data of `cell` from a global field.
pub fn gather_region(mesh: &CartesianMesh, field: &[f64], block: usize, cell: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3usize.pow(mesh.dim as u32) * block);
    for c in mesh.region(cell) {
        out.extend_from_slice(&field[c * block..(c + 1) * block]);
    }
    out
}

/// Predict the central element of one region.
pub fn predict_region(pred: &Predictor, q_region: &[f64], dt: f64) -> Result<RegionSolve> {
    let mut rw = RegionWork::default();
    pred.solve_region(q_region, dt, &mut rw)
}

/// Spatial pieces of the local cells marked in `needed` (all when `None`).
/// Faces whose neighbour lies outside the grid, and unmarked cells, are
/// filled with NaN; no region that is solved uses them.
pub fn grid_pieces(pred: &Predictor, q: &[f64], grid: &LocalGrid, needed: Option<&[bool]>) -> Vec<f64> {
    let k = &pred.ops.kern;
    let th = k.theta;
    let plen = (2 * k.dim + 1) * th;
    let cells: Vec<usize> = (0..grid.num_cells()).collect();
    let blocks: Vec<Vec<f64>> = cells
        .par_iter()
        .map_init(RegionWork::default, |rw, &c| {
            if needed.is_some_and(|m| !m[c]) {
                return vec![f64::NAN; plen];
            }
            let nb = grid.face_neighbors(c);
            let poison = vec![f64::NAN; th];
            let nbrs: Vec<&[f64]> = nb
                .iter()
                .map(|n| n.map_or(poison.as_slice(), |n| &q[n * th..(n + 1) * th]))
                .collect();
            let mut buf = Vec::with_capacity(plen);
            cell_pieces(&pred.ops, &q[c * th..(c + 1) * th], &nbrs, &mut buf, rw);
            for (f, n) in nb.iter().enumerate() {
                if n.is_none() {
                    buf[(1 + f) * th..(2 + f) * th].iter_mut().for_each(|v| *v = f64::NAN);
                }
            }
            buf
        })
        .collect();
    blocks.concat()
}

/// Predictions for the local cells `cells`, one `theta_t` block each in
/// the same order. Only the regions of these cells are read from `q`.
pub fn predict_cells(pred: &Predictor, q: &[f64], grid: &LocalGrid, cells: &[usize], dt: f64) -> Result<(Vec<Vec<f64>>, PredictStats)> {
    let k = &pred.ops.kern;
    let th = k.theta;
    let mut stats = PredictStats::default();
    if cells.is_empty() {
        return Ok((Vec::new(), stats));
    }
    let region_of = |c: usize| {
        grid.region(c)
            .ok_or_else(|| Error::Decomposition(format!("region of cell {} leaves the local grid", grid.global[c])))
    };
    let results: Vec<Result<(Vec<f64>, usize)>> = if pred.uses_fast_path() {
        let op = pred.linear_operator(dt)?;
        let plen = (2 * k.dim + 1) * th;
        let mut needed = vec![false; grid.num_cells()];
        for &c in cells {
            for r in region_of(c)? {
                needed[r] = true;
            }
        }
        let pieces = grid_pieces(pred, q, grid, Some(&needed));
        cells
            .par_iter()
            .map(|&c| {
                let region = region_of(c)?;
                let ps: Vec<&[f64]> = region.iter().map(|&r| &pieces[r * plen..(r + 1) * plen]).collect();
                Ok((pred.predict_linear(&op, &q[c * th..(c + 1) * th], &ps), 1))
            })
            .collect()
    } else {
        cells
            .par_iter()
            .map_init(RegionWork::default, |rw, &c| {
                let region = region_of(c)?;
                let mut qr = Vec::with_capacity(region.len() * th);
                for &r in &region {
                    qr.extend_from_slice(&q[r * th..(r + 1) * th]);
                }
                let sol = pred.solve_region(&qr, dt, rw).map_err(|e| match e {
                    Error::NonConvergence {
                        iterations,
                        residual,
                        iterate,
                        task,
                        ..
                    } => Error::NonConvergence {
                        element: Some(grid.global[c]),
                        iterations,
                        residual,
                        iterate,
                        task,
                    },
                    other => other,
                })?;
                Ok((sol.w, sol.iterations))
            })
            .collect()
    };
    let mut out = Vec::with_capacity(cells.len());
    for r in results {
        let (wc, its) = r?;
        out.push(wc);
        stats.total_iterations += its;
        stats.max_iterations = stats.max_iterations.max(its);
        stats.regions += 1;
    }
    Ok((out, stats))
}

/// Predictions for the owned cells of `grid`; the result has one
/// `theta_t` block per local cell, with non-owned blocks left zero.
pub fn predict_grid(pred: &Predictor, q: &[f64], grid: &LocalGrid, dt: f64) -> Result<(Vec<f64>, PredictStats)> {
    let tt = pred.ops.kern.theta_t;
    let mut w = vec![0.0; grid.num_cells() * tt];
    let (blocks, stats) = predict_cells(pred, q, grid, &grid.owned, dt)?;
    for (&c, b) in grid.owned.iter().zip(blocks) {
        w[c * tt..(c + 1) * tt].copy_from_slice(&b);
    }
    Ok((w, stats))
}

/// Predictions for every element of a periodic mesh, visiting cells in
/// `order` (all cells when `None`).
pub fn predict_all(pred: &Predictor, q: &[f64], mesh: &CartesianMesh, dt: f64, order: Option<&[usize]>) -> Result<(Vec<f64>, PredictStats)> {
    mesh.check_ridg()?;
    let mut grid = LocalGrid::periodic(mesh);
    if let Some(o) = order {
        grid.owned = o.to_vec();
    }
    predict_grid(pred, q, &grid, dt)
}
