//! Task-parallel runs: one worker thread per subdomain, halo exchange and
//! reductions by message passing, and instrumented scaling studies.
//!
//! Each worker owns a block of cells plus a one-cell halo. Halo blocks are
//! copied in from the owning neighbour, never shared, and every cell is
//! updated by the same per-element code as the serial solver, so the final
//! state does not depend on the decomposition.

use crate::error::{Error, Result};
use crate::law::ProblemSetup;
use crate::mesh::{stencil_offsets, CartesianMesh, CellSplit, Decomposition, LocalGrid, TaskDomain};
use crate::metrics::{self, MetricsRecord};
use crate::predictor::{build_tables, PredictStats, QqfTables};
use crate::stepper::{check_state, clip_dt, compute_dt, max_speed_grid, Halo, HaloField, RunStats, SchemeConfig, SchemeKind, Solver, StateField};
use std::collections::HashMap;
use std::io::Write;
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Longest a worker waits for any single message.
pub const RECV_TIMEOUT: Duration = Duration::from_secs(60);

/// Bit pattern written into halo blocks before every exchange: a quiet NaN
/// with a recognisable payload, so stale or missing halo data is detected.
pub const POISON_BITS: u64 = 0x7ff8_dead_beef_0001;

pub fn poison() -> f64 {
    f64::from_bits(POISON_BITS)
}

pub fn is_poison(v: f64) -> bool {
    v.to_bits() == POISON_BITS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    /// Stage states of the Runge-Kutta scheme, face neighbours only.
    RkdgFace,
    /// Step states before prediction, all vertex neighbours.
    RidgPredict,
    /// Predictions of boundary cells before correction, all vertex neighbours.
    RidgCorrect,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::RkdgFace => "rkdg-face",
            Protocol::RidgPredict => "ridg-predict",
            Protocol::RidgCorrect => "ridg-correct",
        }
    }

    pub fn uses_vertex_halo(self) -> bool {
        !matches!(self, Protocol::RkdgFace)
    }
}

/// Traffic with one neighbour. Cell lists are worker-local ids.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanLink {
    pub direction: Vec<isize>,
    /// Position of `direction` among the `3^d - 1` neighbour directions.
    pub slot: usize,
    /// Slot under which the neighbour files what this task sends.
    pub peer_slot: usize,
    pub task: usize,
    pub send: Vec<usize>,
    pub recv: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangePlan {
    pub protocol: Protocol,
    /// Coefficients per cell.
    pub block: usize,
    pub links: Vec<PlanLink>,
}

fn neighbour_directions(dim: usize) -> Vec<Vec<isize>> {
    stencil_offsets(dim).into_iter().filter(|o| o.iter().any(|&x| x != 0)).collect()
}

impl ExchangePlan {
    pub fn new(protocol: Protocol, task: &TaskDomain, grid: &LocalGrid, block: usize) -> Self {
        let dirs = neighbour_directions(grid.dim);
        let slot_of = |d: &[isize]| dirs.iter().position(|x| x == d).expect("neighbour direction");
        let links = task
            .links
            .iter()
            .filter(|l| protocol.uses_vertex_halo() || l.is_face())
            .map(|l| {
                let back: Vec<isize> = l.direction.iter().map(|x| -x).collect();
                PlanLink {
                    direction: l.direction.clone(),
                    slot: slot_of(&l.direction),
                    peer_slot: slot_of(&back),
                    task: l.task,
                    send: grid.slab(&l.direction, false),
                    recv: grid.slab(&l.direction, true),
                }
            })
            .collect();
        ExchangePlan { protocol, block, links }
    }

    pub fn messages(&self) -> usize {
        self.links.len()
    }

    /// Coefficients sent per exchange.
    pub fn payload(&self) -> usize {
        self.links.iter().map(|l| l.send.len() * self.block).sum()
    }
}

/// Per-task instrumentation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TaskCounters {
    pub task: usize,
    /// Halo messages sent.
    pub messages_sent: u64,
    /// Coefficients carried by those messages.
    pub payload_elements: u64,
    /// All-reduce operations joined.
    pub reductions: u64,
    pub wait_s: f64,
    pub compute_s: f64,
}

pub const INSTRUMENTATION_COLUMNS: [&str; 6] = ["task", "messages_sent", "payload_elements", "reductions", "wait_s", "compute_s"];

pub fn write_instrumentation_csv(out: impl Write, counters: &[TaskCounters]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(INSTRUMENTATION_COLUMNS)?;
    for c in counters {
        w.write_record([
            c.task.to_string(),
            c.messages_sent.to_string(),
            c.payload_elements.to_string(),
            c.reductions.to_string(),
            format!("{:.6}", c.wait_s),
            format!("{:.6}", c.compute_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Tag {
    Halo(Protocol, usize),
    Reduce(usize),
    Result,
}

#[derive(Debug)]
enum Envelope {
    Data { tag: Tag, epoch: u64, payload: Vec<f64> },
    Abort { from: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Max,
    /// Summed in task order at the root, so the result is reproducible.
    Sum,
}

/// One task's endpoint. Collective operations carry an epoch that every
/// task advances in the same sequence; a message from an epoch already
/// closed means the tasks disagree about the protocol and aborts the run.
#[derive(Debug)]
pub struct Comm {
    pub id: usize,
    peers: Vec<Sender<Envelope>>,
    inbox: Receiver<Envelope>,
    pending: HashMap<(Tag, u64), Vec<f64>>,
    epoch: u64,
    timeout: Duration,
    pub counters: TaskCounters,
}

/// Connected endpoints for `n` tasks.
pub fn comm_world(n: usize, timeout: Duration) -> Vec<Comm> {
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..n).map(|_| channel()).unzip();
    receivers
        .into_iter()
        .enumerate()
        .map(|(id, inbox)| Comm {
            id,
            peers: senders.clone(),
            inbox,
            pending: HashMap::new(),
            epoch: 0,
            timeout,
            counters: TaskCounters {
                task: id,
                ..Default::default()
            },
        })
        .collect()
}

impl Comm {
    pub fn size(&self) -> usize {
        self.peers.len()
    }

    fn next_epoch(&mut self) -> u64 {
        self.epoch += 1;
        self.epoch
    }

    fn send(&mut self, to: usize, tag: Tag, epoch: u64, payload: Vec<f64>) -> Result<()> {
        self.peers[to]
            .send(Envelope::Data { tag, epoch, payload })
            .map_err(|_| Error::Comm(format!("task {} cannot reach task {to}", self.id)))
    }

    fn recv(&mut self, tag: Tag, epoch: u64) -> Result<Vec<f64>> {
        if let Some(p) = self.pending.remove(&(tag, epoch)) {
            return Ok(p);
        }
        let start = Instant::now();
        let deadline = start + self.timeout;
        let out = loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.inbox.recv_timeout(left) {
                Ok(Envelope::Data { tag: t, epoch: e, payload }) => {
                    if t == tag && e == epoch {
                        break Ok(payload);
                    }
                    if e < epoch {
                        break Err(Error::Comm(format!(
                            "task {} got a {t:?} message of epoch {e} while in epoch {epoch}",
                            self.id
                        )));
                    }
                    self.pending.insert((t, e), payload);
                }
                Ok(Envelope::Abort { from, reason }) => {
                    break Err(Error::Comm(format!("task {} stopped: task {from} failed ({reason})", self.id)));
                }
                Err(RecvTimeoutError::Timeout) => {
                    break Err(Error::Comm(format!(
                        "task {} waited {:?} for {tag:?} of epoch {epoch}",
                        self.id, self.timeout
                    )));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    break Err(Error::Comm(format!("task {}: all peers are gone", self.id)));
                }
            }
        };
        self.counters.wait_s += start.elapsed().as_secs_f64();
        out
    }

    /// Combine one value per task at task 0 and broadcast the result.
    pub fn allreduce(&mut self, value: f64, op: ReduceOp) -> Result<f64> {
        let epoch = self.next_epoch();
        self.counters.reductions += 1;
        let n = self.size();
        if self.id == 0 {
            let mut acc = value;
            for from in 1..n {
                let v = self.recv(Tag::Reduce(from), epoch)?[0];
                acc = match op {
                    ReduceOp::Max => acc.max(v),
                    ReduceOp::Sum => acc + v,
                };
            }
            for to in 1..n {
                self.send(to, Tag::Result, epoch, vec![acc])?;
            }
            Ok(acc)
        } else {
            self.send(0, Tag::Reduce(self.id), epoch, vec![value])?;
            Ok(self.recv(Tag::Result, epoch)?[0])
        }
    }

    pub fn allreduce_max(&mut self, value: f64) -> Result<f64> {
        self.allreduce(value, ReduceOp::Max)
    }

    /// Tell every other task to stop waiting.
    pub fn abort(&self, reason: &str) {
        for (to, p) in self.peers.iter().enumerate() {
            if to != self.id {
                let _ = p.send(Envelope::Abort {
                    from: self.id,
                    reason: reason.to_string(),
                });
            }
        }
    }
}

/// The maximum of one value per simulated task, as received by each task.
pub fn allreduce_max(values: &[f64]) -> Result<Vec<f64>> {
    let comms = comm_world(values.len(), RECV_TIMEOUT);
    let handles: Vec<_> = comms
        .into_iter()
        .zip(values.iter().copied())
        .map(|(mut c, v)| {
            std::thread::Builder::new()
                .stack_size(256 * 1024)
                .spawn(move || c.allreduce_max(v))
                .map_err(|e| Error::Comm(format!("cannot spawn task: {e}")))
        })
        .collect::<Result<_>>()?;
    handles
        .into_iter()
        .map(|h| h.join().map_err(|_| Error::Comm("task panicked".into()))?)
        .collect()
}

/// A task's subdomain, exchange plans and endpoint.
#[derive(Debug)]
pub struct TaskWorker {
    pub task: TaskDomain,
    pub grid: LocalGrid,
    pub split: CellSplit,
    state_plan: ExchangePlan,
    prediction_plan: Option<ExchangePlan>,
    owned_mask: Vec<bool>,
    open: Option<u64>,
    pub comm: Comm,
}

impl TaskWorker {
    pub fn new(mesh: &CartesianMesh, task: TaskDomain, scheme: &SchemeConfig, comm: Comm) -> Self {
        let grid = LocalGrid::task_box(mesh, &task);
        let n = scheme.degree + 1;
        let theta = n.pow(mesh.dim as u32);
        let (state_plan, prediction_plan) = match scheme.kind {
            SchemeKind::Rkdg => (ExchangePlan::new(Protocol::RkdgFace, &task, &grid, theta), None),
            SchemeKind::Ridg => (
                ExchangePlan::new(Protocol::RidgPredict, &task, &grid, theta),
                Some(ExchangePlan::new(Protocol::RidgCorrect, &task, &grid, theta * n)),
            ),
        };
        let mut owned_mask = vec![false; grid.num_cells()];
        for &c in &grid.owned {
            owned_mask[c] = true;
        }
        TaskWorker {
            split: grid.split(),
            grid,
            task,
            state_plan,
            prediction_plan,
            owned_mask,
            open: None,
            comm,
        }
    }

    pub fn plan(&self, field: HaloField) -> Result<&ExchangePlan> {
        match field {
            HaloField::State => Ok(&self.state_plan),
            HaloField::Prediction => self
                .prediction_plan
                .as_ref()
                .ok_or_else(|| Error::Comm("this scheme exchanges no predictions".into())),
        }
    }

    /// Local field with the owned blocks taken from a global field and the
    /// halo poisoned.
    pub fn scatter(&self, global: &[f64], block: usize) -> Vec<f64> {
        let mut q = vec![poison(); self.grid.num_cells() * block];
        for &c in &self.grid.owned {
            let g = self.grid.global[c];
            q[c * block..(c + 1) * block].copy_from_slice(&global[g * block..(g + 1) * block]);
        }
        q
    }

    /// Sum of squares and finiteness of the owned blocks, in owned order.
    fn owned_sum_squares(&self, q: &[f64], block: usize) -> f64 {
        let mut s = 0.0;
        for &c in &self.grid.owned {
            for v in &q[c * block..(c + 1) * block] {
                if !v.is_finite() {
                    return f64::NAN;
                }
                s += v * v;
            }
        }
        s
    }
}

impl Halo for TaskWorker {
    fn post(&mut self, field: HaloField, data: &mut [f64]) -> Result<()> {
        if self.open.is_some() {
            return Err(Error::Comm(format!("task {}: exchange posted twice", self.comm.id)));
        }
        let epoch = self.comm.next_epoch();
        let plan = match field {
            HaloField::State => &self.state_plan,
            HaloField::Prediction => self
                .prediction_plan
                .as_ref()
                .ok_or_else(|| Error::Comm("this scheme exchanges no predictions".into()))?,
        };
        let b = plan.block;
        for (c, &mine) in self.owned_mask.iter().enumerate() {
            if !mine {
                data[c * b..(c + 1) * b].iter_mut().for_each(|v| *v = poison());
            }
        }
        let mut outgoing = Vec::with_capacity(plan.links.len());
        for l in &plan.links {
            let mut payload = Vec::with_capacity(l.send.len() * b);
            for &c in &l.send {
                payload.extend_from_slice(&data[c * b..(c + 1) * b]);
            }
            outgoing.push((l.task, Tag::Halo(plan.protocol, l.peer_slot), payload));
        }
        for (to, tag, payload) in outgoing {
            self.comm.counters.messages_sent += 1;
            self.comm.counters.payload_elements += payload.len() as u64;
            self.comm.send(to, tag, epoch, payload)?;
        }
        self.open = Some(epoch);
        Ok(())
    }

    fn complete(&mut self, field: HaloField, data: &mut [f64]) -> Result<()> {
        let epoch = self
            .open
            .take()
            .ok_or_else(|| Error::Comm(format!("task {}: exchange completed before it was posted", self.comm.id)))?;
        let plan = match field {
            HaloField::State => &self.state_plan,
            HaloField::Prediction => self
                .prediction_plan
                .as_ref()
                .ok_or_else(|| Error::Comm("this scheme exchanges no predictions".into()))?,
        };
        let b = plan.block;
        for l in &plan.links {
            let payload = self.comm.recv(Tag::Halo(plan.protocol, l.slot), epoch)?;
            if payload.len() != l.recv.len() * b {
                return Err(Error::Comm(format!(
                    "task {}: {} message from direction {:?} has {} values, expected {}",
                    self.comm.id,
                    plan.protocol.name(),
                    l.direction,
                    payload.len(),
                    l.recv.len() * b
                )));
            }
            for (&c, blk) in l.recv.iter().zip(payload.chunks(b)) {
                data[c * b..(c + 1) * b].copy_from_slice(blk);
            }
        }
        for l in &plan.links {
            for &c in &l.recv {
                if data[c * b..(c + 1) * b].iter().any(|&v| is_poison(v)) {
                    return Err(Error::Comm(format!(
                        "task {}: halo cell {} still stale after the {} exchange",
                        self.comm.id,
                        self.grid.global[c],
                        plan.protocol.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Inputs of a threaded run besides the problem itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelOptions {
    pub tasks_per_axis: Vec<usize>,
    pub threads_per_task: usize,
    pub max_steps: usize,
    pub timeout: Duration,
}

impl ParallelOptions {
    pub fn new(tasks_per_axis: &[usize], threads_per_task: usize) -> Self {
        ParallelOptions {
            tasks_per_axis: tasks_per_axis.to_vec(),
            threads_per_task,
            max_steps: usize::MAX,
            timeout: RECV_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParallelOutcome {
    pub state: StateField,
    /// `runtime_s` is the slowest task's stepping time.
    pub stats: RunStats,
    pub task_grid: Vec<usize>,
    pub threads_per_task: usize,
    pub counters: Vec<TaskCounters>,
}

impl ParallelOutcome {
    pub fn num_tasks(&self) -> usize {
        self.counters.len()
    }

    /// Halo messages sent by all tasks.
    pub fn messages(&self) -> u64 {
        self.counters.iter().map(|c| c.messages_sent).sum()
    }
}

struct TaskResult {
    owned: Vec<(usize, Vec<f64>)>,
    steps: usize,
    t: f64,
    newton: PredictStats,
    runtime_s: f64,
    counters: TaskCounters,
}

fn run_task(solver: &Solver, worker: &mut TaskWorker, q0: &[f64], initial_norm: f64, max_steps: usize) -> Result<TaskResult> {
    let mesh = &solver.mesh;
    let th = solver.kern.theta;
    let t_end = solver.problem.final_time;
    let mut q = worker.scatter(q0, th);
    let mut t = 0.0;
    let mut steps = 0;
    let mut newton = PredictStats::default();
    let grid = worker.grid.clone();
    let split = worker.split.clone();
    let start = Instant::now();
    while t < t_end && steps < max_steps {
        let lam = worker.comm.allreduce_max(max_speed_grid(&solver.kern, &q, &worker.grid))?;
        let (dt, last) = clip_dt(compute_dt(solver.scheme.cfl, mesh, lam)?, t, t_end);
        let (next, s) = solver.step_grid(&q, dt, &grid, &split, worker)?;
        q = next;
        t = if last { t_end } else { t + dt };
        steps += 1;
        newton.merge(&s);
        let sq = worker.owned_sum_squares(&q, th);
        let total = worker.comm.allreduce(sq, ReduceOp::Sum)?;
        let norm = (mesh.cell_volume() * total).sqrt();
        check_state(norm, total.is_finite(), initial_norm, steps, t)?;
    }
    let runtime_s = start.elapsed().as_secs_f64();
    let mut counters = worker.comm.counters;
    counters.compute_s = (runtime_s - counters.wait_s).max(0.0);
    let owned = worker
        .grid
        .owned
        .iter()
        .map(|&c| (worker.grid.global[c], q[c * th..(c + 1) * th].to_vec()))
        .collect();
    Ok(TaskResult {
        owned,
        steps,
        t,
        newton,
        runtime_s,
        counters,
    })
}

/// Run `problem` with one worker thread per task of a block decomposition.
pub fn run_parallel(problem: ProblemSetup, scheme: SchemeConfig, mesh: &CartesianMesh, tasks_per_axis: &[usize], threads_per_task: usize) -> Result<ParallelOutcome> {
    run_parallel_with(problem, scheme, mesh, &ParallelOptions::new(tasks_per_axis, threads_per_task), None)
}

pub fn run_parallel_with(problem: ProblemSetup, scheme: SchemeConfig, mesh: &CartesianMesh, opts: &ParallelOptions, tables: Option<Arc<QqfTables>>) -> Result<ParallelOutcome> {
    if opts.threads_per_task == 0 {
        return Err(Error::invalid("threads_per_task", "must be at least 1"));
    }
    let decomp = Decomposition::new(mesh, &opts.tasks_per_axis)?;
    let tables = match (scheme.kind, tables) {
        (SchemeKind::Ridg, None) => {
            scheme.validate()?;
            Some(Arc::new(build_tables(scheme.degree, mesh.dim)?))
        }
        (_, t) => t,
    };
    // the serial solver projects the initial data and validates the setup
    let reference = Solver::with_tables(problem, scheme, mesh.clone(), tables.clone())?;
    let initial = reference.initial_state();
    let initial_norm = initial.l2_norm(mesh);
    let initial_integral = initial.total_integral(mesh);
    let q0 = Arc::new(initial.q);

    let comms = comm_world(decomp.num_tasks(), opts.timeout);
    let mut handles = Vec::with_capacity(comms.len());
    for (task, comm) in decomp.tasks.iter().cloned().zip(comms) {
        let (mesh, tables, q0) = (mesh.clone(), tables.clone(), q0.clone());
        let (threads, max_steps) = (opts.threads_per_task, opts.max_steps);
        let h = std::thread::Builder::new()
            .name(format!("task-{}", task.id))
            .spawn(move || -> Result<TaskResult> {
                let id = task.id;
                let mut worker = TaskWorker::new(&mesh, task, &scheme, comm);
                let out = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::Comm(format!("task {id}: cannot build thread pool: {e}")))
                    .and_then(|pool| {
                        pool.install(|| {
                            let solver = Solver::with_tables(problem, scheme, mesh, tables)?;
                            run_task(&solver, &mut worker, &q0, initial_norm, max_steps)
                        })
                    });
                if let Err(e) = &out {
                    worker.comm.abort(&e.to_string());
                }
                out.map_err(|e| e.with_task(id))
            })
            .map_err(|e| Error::Comm(format!("cannot spawn task: {e}")))?;
        handles.push(h);
    }
    let results: Vec<Result<TaskResult>> = handles
        .into_iter()
        .map(|h| h.join().unwrap_or_else(|_| Err(Error::Comm("task panicked".into()))))
        .collect();
    // report the root cause rather than the aborts it triggered
    if let Some(e) = results
        .iter()
        .filter_map(|r| r.as_ref().err())
        .find(|e| !matches!(e, Error::Comm(_)))
        .or_else(|| results.iter().find_map(|r| r.as_ref().err()))
    {
        return Err(e.clone());
    }
    let results: Vec<TaskResult> = results.into_iter().map(|r| r.expect("checked above")).collect();

    let th = reference.kern.theta;
    let mut q = vec![0.0; mesh.num_cells() * th];
    let mut newton = PredictStats::default();
    for r in &results {
        for (g, b) in &r.owned {
            q[g * th..(g + 1) * th].copy_from_slice(b);
        }
        newton.merge(&r.newton);
    }
    let (steps, t) = (results[0].steps, results[0].t);
    if results.iter().any(|r| r.steps != steps || r.t.to_bits() != t.to_bits()) {
        return Err(Error::Comm("tasks finished at different steps".into()));
    }
    let state = StateField { q, theta: th, t };
    Ok(ParallelOutcome {
        stats: RunStats {
            steps,
            runtime_s: results.iter().map(|r| r.runtime_s).fold(0.0, f64::max),
            newton,
            initial_integral,
            final_integral: state.total_integral(mesh),
            initial_norm,
        },
        state,
        task_grid: decomp.task_grid.clone(),
        threads_per_task: opts.threads_per_task,
        counters: results.iter().map(|r| r.counters).collect(),
    })
}

/// Halo messages one task sends per step: two vertex exchanges for the
/// predictor-corrector, one face exchange per stage for Runge-Kutta.
pub fn messages_per_task_step(scheme: &SchemeConfig, dim: usize) -> Result<u64> {
    Ok(match scheme.kind {
        SchemeKind::Ridg => 2 * metrics::messages_per_stage(dim, true),
        SchemeKind::Rkdg => scheme.rk_stages()? as u64 * metrics::messages_per_stage(dim, false),
    })
}

/// Strong-scaling study setup.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    pub problem: ProblemSetup,
    pub scheme: SchemeConfig,
    pub cells_per_axis: usize,
    pub threads_per_task: usize,
    /// Stages per step used in the analytic message count; defaults to 2
    /// for the predictor-corrector and the stage count for Runge-Kutta.
    pub comms_stages: Option<u64>,
    pub max_steps: usize,
}

#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub record: MetricsRecord,
    pub mesh_per_task: Vec<usize>,
    /// Halo messages actually sent by all tasks.
    pub measured_messages: u64,
    pub counters: Vec<TaskCounters>,
}

/// One threaded run per task count, with speedups relative to one task.
pub fn scaling_study(cfg: &ScalingConfig, task_counts: &[usize]) -> Result<Vec<ScalingRow>> {
    let dim = cfg.problem.dim();
    let mesh = CartesianMesh::unit(dim, cfg.cells_per_axis)?;
    let grids = task_counts
        .iter()
        .map(|&n| {
            let g = crate::mesh::task_grid_for(n, dim)?;
            Decomposition::new(&mesh, &g)?;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    let tables = match cfg.scheme.kind {
        SchemeKind::Ridg => {
            cfg.scheme.validate()?;
            Some(Arc::new(build_tables(cfg.scheme.degree, dim)?))
        }
        SchemeKind::Rkdg => None,
    };
    let theta = (cfg.scheme.degree + 1).pow(dim as u32);
    let (stages, vertex) = match cfg.scheme.kind {
        SchemeKind::Ridg => (cfg.comms_stages.unwrap_or(2), true),
        SchemeKind::Rkdg => (cfg.comms_stages.unwrap_or(cfg.scheme.rk_stages()? as u64), false),
    };
    let mut rows = Vec::with_capacity(task_counts.len());
    for (&tasks, grid) in task_counts.iter().zip(&grids) {
        let mut opts = ParallelOptions::new(grid, cfg.threads_per_task);
        opts.max_steps = cfg.max_steps;
        let out = run_parallel_with(cfg.problem, cfg.scheme, &mesh, &opts, tables.clone())?;
        let error = if cfg.problem.has_exact() && out.state.t >= cfg.problem.final_time {
            metrics::l2_relative_error(&out.state, &cfg.problem, &mesh, cfg.scheme.degree).ok()
        } else {
            None
        };
        let runtime = out.stats.runtime_s;
        rows.push(ScalingRow {
            record: MetricsRecord {
                scheme: cfg.scheme.kind.name().to_uppercase(),
                degree: cfg.scheme.degree,
                cfl: cfg.scheme.cfl,
                mesh: mesh.cells.clone(),
                dof: theta * mesh.num_cells(),
                efom: metrics::efom(theta, mesh.num_cells(), dim),
                error,
                order: None,
                runtime_s: runtime,
                quality: error.and_then(|e| metrics::quality(e, runtime).ok()),
                tasks,
                cores: tasks * cfg.threads_per_task,
                speedup: None,
                efficiency_pct: None,
                comms: metrics::comms_estimate(tasks as u64, out.stats.steps as u64, stages, metrics::messages_per_stage(dim, vertex)),
            },
            mesh_per_task: (0..dim).map(|a| mesh.cells[a] / grid[a]).collect(),
            measured_messages: out.messages(),
            counters: out.counters,
        });
    }
    let runtimes: Vec<(usize, f64)> = rows.iter().map(|r| (r.record.tasks, r.record.runtime_s.max(1e-9))).collect();
    if runtimes.iter().any(|(t, _)| *t == 1) {
        for (row, s) in rows.iter_mut().zip(metrics::speedup_efficiency(&runtimes)?) {
            row.record.speedup = Some(s.speedup);
            row.record.efficiency_pct = s.efficiency_pct;
        }
    }
    Ok(rows)
}
