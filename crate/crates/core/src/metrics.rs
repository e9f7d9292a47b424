//! Error, convergence and performance measures, and the results CSV.

use crate::error::{Error, Result};
use crate::law::ProblemSetup;
use crate::mesh::CartesianMesh;
use crate::stepper::{project_field, StateField};
use std::io::Write;

/// Relative L2 error against the exact solution at `state.t`. The exact
/// solution is projected one degree higher than the state, so the error
/// includes its truncation part.
pub fn l2_relative_error(state: &StateField, problem: &ProblemSetup, mesh: &CartesianMesh, degree: usize) -> Result<f64> {
    let t = state.t;
    if !problem.has_exact() {
        return Err(Error::invalid("problem", format!("{} has no exact solution", problem.law.kind.name())));
    }
    let x = project_field(|p| problem.exact(p, t).unwrap_or(f64::NAN), mesh, degree + 1, 2 * (degree + 2));
    relative_error_coeffs(&state.q, &x, mesh.dim, degree)
}

/// The same measure for given reference coefficients of degree `degree+1`.
pub fn relative_error_coeffs(q: &[f64], x: &[f64], dim: usize, degree: usize) -> Result<f64> {
    let (n, np) = (degree + 1, degree + 2);
    let theta = n.pow(dim as u32);
    let theta_p = np.pow(dim as u32);
    if q.len() % theta != 0 || x.len() / theta_p != q.len() / theta {
        return Err(Error::invalid("coefficients", "state and reference sizes disagree"));
    }
    // position of each higher-space mode in the lower space, if present
    let map: Vec<Option<usize>> = (0..theta_p)
        .map(|k| {
            let mut r = k;
            let mut low = 0;
            let mut mul = 1;
            for _ in 0..dim {
                let m = r % np;
                r /= np;
                if m >= n {
                    return None;
                }
                low += m * mul;
                mul *= n;
            }
            Some(low)
        })
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (qc, xc) in q.chunks(theta).zip(x.chunks(theta_p)) {
        for (k, &xv) in xc.iter().enumerate() {
            den += xv * xv;
            num += match map[k] {
                Some(l) => (xv - qc[l]).powi(2),
                None => xv * xv,
            };
        }
    }
    if !(den > 0.0) {
        return Err(Error::invalid("exact", "exact solution has zero norm"));
    }
    Ok((num / den).sqrt())
}

/// `log(e1/e2) / log(h1/h2)`.
pub fn convergence_order(e1: f64, h1: f64, e2: f64, h2: f64) -> Result<f64> {
    if !(e1 > 0.0 && e2 > 0.0 && h1 > 0.0 && h2 > 0.0) {
        return Err(Error::invalid("order", "errors and spacings must be positive"));
    }
    if h1 == h2 {
        return Err(Error::invalid("order", "spacings must differ"));
    }
    Ok((e1 / e2).ln() / (h1 / h2).ln())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("samples", "need at least two paired samples"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("samples", "samples must be positive and finite"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("samples", "abscissae must differ"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// Convergence order fitted over a whole refinement sequence.
pub fn fitted_order(errors: &[f64], spacings: &[f64]) -> Result<f64> {
    loglog_slope(spacings, errors)
}

/// `-log10(error * runtime)`.
pub fn quality(error: f64, runtime: f64) -> Result<f64> {
    if !(error > 0.0 && runtime > 0.0 && error.is_finite() && runtime.is_finite()) {
        return Err(Error::invalid("quality", "error and runtime must be positive and finite"));
    }
    Ok(-(error * runtime).log10())
}

/// Per-axis size of the first-order mesh with the same number of unknowns.
pub fn efom(theta: usize, elements: usize, dim: usize) -> usize {
    ((theta * elements) as f64).powf(1.0 / dim as f64).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub tasks: usize,
    pub speedup: f64,
    /// Percent; `None` for the single-task baseline.
    pub efficiency_pct: Option<f64>,
}

/// Speedups and efficiencies relative to the single-task runtime.
pub fn speedup_efficiency(runtimes: &[(usize, f64)]) -> Result<Vec<Scaling>> {
    let base = runtimes
        .iter()
        .find(|(t, _)| *t == 1)
        .map(|&(_, r)| r)
        .ok_or_else(|| Error::invalid("runtimes", "the single-task baseline is missing"))?;
    if !(base > 0.0) {
        return Err(Error::invalid("runtimes", "baseline runtime must be positive"));
    }
    runtimes
        .iter()
        .map(|&(tasks, r)| {
            if !(r > 0.0) || tasks == 0 {
                return Err(Error::invalid("runtimes", "runtimes and task counts must be positive"));
            }
            let speedup = base / r;
            let efficiency_pct = (tasks > 1).then(|| ((speedup - 1.0) / (tasks - 1) as f64 * 100.0).max(0.0));
            Ok(Scaling {
                tasks,
                speedup,
                efficiency_pct,
            })
        })
        .collect()
}

/// Estimated number of messages: tasks x steps x stages x messages per stage.
pub fn comms_estimate(tasks: u64, timesteps: u64, stages_per_step: u64, comms_per_stage: u64) -> u64 {
    tasks * timesteps * stages_per_step * comms_per_stage
}

/// Neighbour messages per task and exchange stage: `3^d - 1` for the
/// vertex halo, `2d` for the face halo.
pub fn messages_per_stage(dim: usize, vertex_halo: bool) -> u64 {
    if vertex_halo {
        3u64.pow(dim as u32) - 1
    } else {
        2 * dim as u64
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub scheme: String,
    pub degree: usize,
    pub cfl: f64,
    pub mesh: Vec<usize>,
    pub dof: usize,
    pub efom: usize,
    pub error: Option<f64>,
    pub order: Option<f64>,
    pub runtime_s: f64,
    pub quality: Option<f64>,
    pub tasks: usize,
    pub cores: usize,
    pub speedup: Option<f64>,
    pub efficiency_pct: Option<f64>,
    pub comms: u64,
}

pub const CSV_COLUMNS: [&str; 16] = [
    "scheme",
    "Mdeg",
    "nu",
    "mesh",
    "dof",
    "efom",
    "error",
    "order",
    "runtime_s",
    "quality",
    "tasks",
    "cores",
    "dof_per_core",
    "speedup",
    "efficiency_pct",
    "comms",
];

/// Mesh descriptor such as `20x20`.
pub fn mesh_label(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("x")
}

impl MetricsRecord {
    pub fn dof_per_core(&self) -> f64 {
        self.dof as f64 / self.cores.max(1) as f64
    }

    pub fn csv_fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>, p: usize| v.map_or(String::new(), |x| format!("{x:.p$}"));
        let d = self.mesh.len();
        vec![
            self.scheme.clone(),
            self.degree.to_string(),
            format!("{}", self.cfl),
            mesh_label(&self.mesh),
            self.dof.to_string(),
            mesh_label(&vec![self.efom; d]),
            self.error.map_or(String::new(), |e| format!("{e:.6e}")),
            opt(self.order, 3),
            format!("{:.3}", self.runtime_s),
            opt(self.quality, 3),
            self.tasks.to_string(),
            self.cores.to_string(),
            format!("{:.1}", self.dof_per_core()),
            opt(self.speedup, 3),
            if self.tasks == 1 {
                "—".to_string()
            } else {
                opt(self.efficiency_pct, 1)
            },
            self.comms.to_string(),
        ]
    }
}

pub fn write_csv(out: impl Write, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record(r.csv_fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Fill `order` of each record from its predecessor in the list.
pub fn fill_orders(records: &mut [MetricsRecord]) {
    for i in 1..records.len() {
        let (a, b) = (&records[i - 1], &records[i]);
        if let (Some(e1), Some(e2)) = (a.error, b.error) {
            let h = |r: &MetricsRecord| 1.0 / r.mesh[0] as f64;
            records[i].order = convergence_order(e1, h(a), e2, h(b)).ok();
        }
    }
}
