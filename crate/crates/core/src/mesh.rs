//! Periodic uniform Cartesian meshes and block decompositions into task
//! subdomains with width-one halos.
//!
//! Cells and tasks are numbered with the first axis fastest.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CartesianMesh {
    pub dim: usize,
    pub cells: Vec<usize>,
    pub domain: Vec<(f64, f64)>,
    pub h: Vec<f64>,
}

pub fn build_mesh(dim: usize, cells_per_axis: &[usize], domain: &[(f64, f64)]) -> Result<CartesianMesh> {
    CartesianMesh::new(dim, cells_per_axis, domain)
}

/// Multi-index helpers for a box of extents `shape`, first axis fastest.
pub fn unflatten(mut i: usize, shape: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .map(|&n| {
            let c = i % n;
            i /= n;
            c
        })
        .collect()
}

pub fn flatten(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).rev().fold(0, |acc, (&c, &n)| acc * n + c)
}

/// All offsets in `{-1,0,1}^dim`, first axis fastest. The centre is at
/// position `(3^dim - 1) / 2`.
pub fn stencil_offsets(dim: usize) -> Vec<Vec<isize>> {
    (0..3usize.pow(dim as u32))
        .map(|f| unflatten(f, &vec![3; dim]).iter().map(|&c| c as isize - 1).collect())
        .collect()
}

impl CartesianMesh {
    pub fn new(dim: usize, cells_per_axis: &[usize], domain: &[(f64, f64)]) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::invalid("dim", "must be 1, 2 or 3"));
        }
        if cells_per_axis.len() != dim || domain.len() != dim {
            return Err(Error::invalid("mesh", format!("expected {dim} axes")));
        }
        if let Some(a) = cells_per_axis.iter().position(|&n| n < 1) {
            return Err(Error::invalid("mesh", format!("axis {a} needs at least one cell")));
        }
        if domain.iter().any(|(lo, hi)| !(hi > lo)) {
            return Err(Error::invalid("domain", "upper bound must exceed lower bound"));
        }
        let h = cells_per_axis
            .iter()
            .zip(domain)
            .map(|(&n, (lo, hi))| (hi - lo) / n as f64)
            .collect();
        Ok(CartesianMesh {
            dim,
            cells: cells_per_axis.to_vec(),
            domain: domain.to_vec(),
            h,
        })
    }

    /// Unit box with `n` cells along every axis.
    pub fn unit(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, &vec![n; dim], &vec![(0.0, 1.0); dim])
    }

    pub fn num_cells(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.iter().product()
    }

    pub fn min_h(&self) -> f64 {
        self.h.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn coords(&self, cell: usize) -> Vec<usize> {
        unflatten(cell, &self.cells)
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        flatten(coords, &self.cells)
    }

    /// Periodic neighbour at an arbitrary integer offset.
    pub fn offset(&self, cell: usize, off: &[isize]) -> usize {
        let c = self.coords(cell);
        let wrapped: Vec<usize> = c
            .iter()
            .zip(off)
            .zip(&self.cells)
            .map(|((&ci, &o), &n)| (ci as isize + o).rem_euclid(n as isize) as usize)
            .collect();
        self.index(&wrapped)
    }

    pub fn face_neighbor(&self, cell: usize, axis: usize, upper: bool) -> usize {
        let mut off = vec![0isize; self.dim];
        off[axis] = if upper { 1 } else { -1 };
        self.offset(cell, &off)
    }

    /// The 3^d cells of the region centred on `cell`, in stencil order.
    pub fn region(&self, cell: usize) -> Vec<usize> {
        stencil_offsets(self.dim).iter().map(|o| self.offset(cell, o)).collect()
    }

    /// Vertex neighbours (region without its centre).
    pub fn vertex_neighbors(&self, cell: usize) -> Vec<usize> {
        let centre = (3usize.pow(self.dim as u32) - 1) / 2;
        let mut r = self.region(cell);
        r.remove(centre);
        r
    }

    /// Lower corner of a cell in physical coordinates.
    pub fn cell_origin(&self, cell: usize) -> Vec<f64> {
        self.coords(cell)
            .iter()
            .enumerate()
            .map(|(a, &c)| self.domain[a].0 + c as f64 * self.h[a])
            .collect()
    }

    /// Map a reference point in `[-1,1]^d` of `cell` to physical space.
    pub fn to_physical(&self, cell: usize, xi: &[f64]) -> Vec<f64> {
        let o = self.cell_origin(cell);
        o.iter()
            .zip(xi)
            .zip(&self.h)
            .map(|((o, x), h)| o + 0.5 * h * (x + 1.0))
            .collect()
    }

    /// Regions of the predictor must not wrap onto themselves.
    pub fn check_ridg(&self) -> Result<()> {
        if let Some(a) = self.cells.iter().position(|&n| n < 3) {
            return Err(Error::invalid(
                "mesh",
                format!("RIDG needs at least 3 cells per axis (axis {a} has {})", self.cells[a]),
            ));
        }
        Ok(())
    }
}

/// Halo traffic with the neighbour in one stencil direction.
#[derive(Debug, Clone, PartialEq)]
pub struct HaloLink {
    /// Offset in `{-1,0,1}^d`, never all zero.
    pub direction: Vec<isize>,
    pub task: usize,
    /// Global ids of owned cells sent toward `direction`.
    pub send: Vec<usize>,
    /// Global ids of the ghost cells received from `direction`.
    pub recv: Vec<usize>,
}

impl HaloLink {
    pub fn is_face(&self) -> bool {
        self.direction.iter().filter(|&&o| o != 0).count() == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDomain {
    pub id: usize,
    pub task_coords: Vec<usize>,
    /// First owned cell coordinate per axis.
    pub lo: Vec<usize>,
    /// Owned cells per axis.
    pub extent: Vec<usize>,
    /// Owned global cell ids in local order.
    pub owned: Vec<usize>,
    /// All 3^d - 1 links in stencil order (centre omitted).
    pub links: Vec<HaloLink>,
}

impl TaskDomain {
    pub fn face_links(&self) -> impl Iterator<Item = &HaloLink> {
        self.links.iter().filter(|l| l.is_face())
    }

    pub fn face_neighbors(&self) -> Vec<usize> {
        self.face_links().map(|l| l.task).collect()
    }

    pub fn vertex_neighbors(&self) -> Vec<usize> {
        self.links.iter().map(|l| l.task).collect()
    }

    pub fn link(&self, direction: &[isize]) -> Option<&HaloLink> {
        self.links.iter().find(|l| l.direction == direction)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub task_grid: Vec<usize>,
    pub tasks: Vec<TaskDomain>,
}

pub fn decompose(mesh: &CartesianMesh, tasks_per_axis: &[usize]) -> Result<Decomposition> {
    Decomposition::new(mesh, tasks_per_axis)
}

impl Decomposition {
    pub fn new(mesh: &CartesianMesh, tasks_per_axis: &[usize]) -> Result<Self> {
        let d = mesh.dim;
        if tasks_per_axis.len() != d {
            return Err(Error::Decomposition(format!(
                "task grid has {} axes but the mesh has {d}",
                tasks_per_axis.len()
            )));
        }
        for a in 0..d {
            let (n, t) = (mesh.cells[a], tasks_per_axis[a]);
            if t == 0 || n % t != 0 {
                return Err(Error::Decomposition(format!(
                    "{t} tasks do not divide {n} cells along axis {a}"
                )));
            }
        }
        let extent: Vec<usize> = (0..d).map(|a| mesh.cells[a] / tasks_per_axis[a]).collect();
        let ntasks: usize = tasks_per_axis.iter().product();
        let offsets: Vec<Vec<isize>> = stencil_offsets(d).into_iter().filter(|o| o.iter().any(|&x| x != 0)).collect();

        let owned_cells = |tc: &[usize]| -> Vec<usize> {
            let lo: Vec<usize> = (0..d).map(|a| tc[a] * extent[a]).collect();
            (0..extent.iter().product())
                .map(|l| {
                    let c = unflatten(l, &extent);
                    mesh.index(&(0..d).map(|a| lo[a] + c[a]).collect::<Vec<_>>())
                })
                .collect()
        };

        // Cells of the block `tc` lying in the slab selected by `dir`:
        // inside = the owned boundary layer, outside = the ghost layer.
        let slab = |tc: &[usize], dir: &[isize], outside: bool| -> Vec<usize> {
            let ranges: Vec<Vec<isize>> = (0..d)
                .map(|a| {
                    let lo = (tc[a] * extent[a]) as isize;
                    let n = extent[a] as isize;
                    match (dir[a], outside) {
                        (0, _) => (lo..lo + n).collect(),
                        (-1, false) => vec![lo],
                        (1, false) => vec![lo + n - 1],
                        (-1, true) => vec![lo - 1],
                        (_, _) => vec![lo + n],
                    }
                })
                .collect();
            let shape: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
            (0..shape.iter().product())
                .map(|f| {
                    let c = unflatten(f, &shape);
                    let g: Vec<usize> = (0..d)
                        .map(|a| ranges[a][c[a]].rem_euclid(mesh.cells[a] as isize) as usize)
                        .collect();
                    mesh.index(&g)
                })
                .collect()
        };

        let tasks = (0..ntasks)
            .map(|id| {
                let tc = unflatten(id, tasks_per_axis);
                let links = offsets
                    .iter()
                    .map(|dir| {
                        let nc: Vec<usize> = (0..d)
                            .map(|a| (tc[a] as isize + dir[a]).rem_euclid(tasks_per_axis[a] as isize) as usize)
                            .collect();
                        HaloLink {
                            direction: dir.clone(),
                            task: flatten(&nc, tasks_per_axis),
                            send: slab(&tc, dir, false),
                            recv: slab(&tc, dir, true),
                        }
                    })
                    .collect();
                TaskDomain {
                    id,
                    lo: (0..d).map(|a| tc[a] * extent[a]).collect(),
                    extent: extent.clone(),
                    owned: owned_cells(&tc),
                    task_coords: tc,
                    links,
                }
            })
            .collect();
        Ok(Decomposition {
            task_grid: tasks_per_axis.to_vec(),
            tasks,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Cells per task per axis.
    pub fn cells_per_task(&self) -> &[usize] {
        &self.tasks[0].extent
    }

    /// Owner of every global cell.
    pub fn owner_map(&self, mesh: &CartesianMesh) -> Vec<usize> {
        let mut owner = vec![usize::MAX; mesh.num_cells()];
        for t in &self.tasks {
            for &c in &t.owned {
                owner[c] = t.id;
            }
        }
        owner
    }
}

/// Square-ish task grid for `tasks` tasks in `dim` dimensions: the task count
/// must be a perfect power.
pub fn task_grid_for(tasks: usize, dim: usize) -> Result<Vec<usize>> {
    let root = (tasks as f64).powf(1.0 / dim as f64).round() as usize;
    if root.pow(dim as u32) != tasks {
        return Err(Error::Decomposition(format!(
            "{tasks} tasks is not a perfect {} power",
            match dim {
                1 => "first",
                2 => "square",
                _ => "cube",
            }
        )));
    }
    Ok(vec![root; dim])
}

/// Owned cells of a [`LocalGrid`] split by whether their whole region is
/// owned, so that they can be updated before halo data arrives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellSplit {
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
}

/// Cell adjacency in a worker-local numbering. The serial solver uses the
/// whole periodic mesh; a task uses its owned block plus a width-one halo,
/// where neighbours outside the box are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGrid {
    pub dim: usize,
    pub shape: Vec<usize>,
    pub periodic: bool,
    /// Global id of every local cell.
    pub global: Vec<usize>,
    /// Local ids of the cells this grid updates.
    pub owned: Vec<usize>,
}

impl LocalGrid {
    pub fn periodic(mesh: &CartesianMesh) -> Self {
        let n = mesh.num_cells();
        LocalGrid {
            dim: mesh.dim,
            shape: mesh.cells.clone(),
            periodic: true,
            global: (0..n).collect(),
            owned: (0..n).collect(),
        }
    }

    /// Owned block of `task` with its halo layer.
    pub fn task_box(mesh: &CartesianMesh, task: &TaskDomain) -> Self {
        let d = mesh.dim;
        let shape: Vec<usize> = task.extent.iter().map(|e| e + 2).collect();
        let total: usize = shape.iter().product();
        let global = (0..total)
            .map(|l| {
                let c = unflatten(l, &shape);
                let g: Vec<usize> = (0..d)
                    .map(|a| (task.lo[a] as isize + c[a] as isize - 1).rem_euclid(mesh.cells[a] as isize) as usize)
                    .collect();
                mesh.index(&g)
            })
            .collect();
        let owned = (0..task.owned.len())
            .map(|l| {
                let c: Vec<usize> = unflatten(l, &task.extent).iter().map(|x| x + 1).collect();
                flatten(&c, &shape)
            })
            .collect();
        LocalGrid {
            dim: d,
            shape,
            periodic: false,
            global,
            owned,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.global.len()
    }

    pub fn offset(&self, cell: usize, off: &[isize]) -> Option<usize> {
        let c = unflatten(cell, &self.shape);
        let mut out = Vec::with_capacity(self.dim);
        for a in 0..self.dim {
            let x = c[a] as isize + off[a];
            let n = self.shape[a] as isize;
            if self.periodic {
                out.push(x.rem_euclid(n) as usize);
            } else if (0..n).contains(&x) {
                out.push(x as usize);
            } else {
                return None;
            }
        }
        Some(flatten(&out, &self.shape))
    }

    pub fn face_neighbor(&self, cell: usize, axis: usize, upper: bool) -> Option<usize> {
        let mut off = vec![0isize; self.dim];
        off[axis] = if upper { 1 } else { -1 };
        self.offset(cell, &off)
    }

    /// Face neighbours ordered (axis 0 lower, axis 0 upper, ...).
    pub fn face_neighbors(&self, cell: usize) -> Vec<Option<usize>> {
        (0..self.dim)
            .flat_map(|a| [false, true].map(|u| self.face_neighbor(cell, a, u)))
            .collect()
    }

    /// Region in stencil order; `None` if it leaves the box.
    pub fn region(&self, cell: usize) -> Option<Vec<usize>> {
        stencil_offsets(self.dim).iter().map(|o| self.offset(cell, o)).collect()
    }

    /// Owned cells whose `3^d` region lies inside the owned set come first
    /// in `interior`, the rest in `boundary`; both keep the owned order.
    pub fn split(&self) -> CellSplit {
        let mut mine = vec![false; self.num_cells()];
        for &c in &self.owned {
            mine[c] = true;
        }
        let (interior, boundary) = self
            .owned
            .iter()
            .partition(|&&c| self.region(c).is_some_and(|r| r.iter().all(|&n| mine[n])));
        CellSplit { interior, boundary }
    }

    /// Local ids of the slab selected by `dir`, enumerated like the
    /// matching [`HaloLink`] lists: the owned boundary layer, or the halo
    /// layer when `outside`.
    pub fn slab(&self, dir: &[isize], outside: bool) -> Vec<usize> {
        let ranges: Vec<Vec<usize>> = (0..self.dim)
            .map(|a| {
                let n = self.shape[a];
                match (dir[a], outside) {
                    (0, _) => (1..n - 1).collect(),
                    (-1, false) => vec![1],
                    (1, false) => vec![n - 2],
                    (-1, true) => vec![0],
                    (_, _) => vec![n - 1],
                }
            })
            .collect();
        let rshape: Vec<usize> = ranges.iter().map(|r| r.len()).collect();
        (0..rshape.iter().product())
            .map(|f| {
                let c = unflatten(f, &rshape);
                let l: Vec<usize> = (0..self.dim).map(|a| ranges[a][c[a]]).collect();
                flatten(&l, &self.shape)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_centre_position() {
        for d in 1..=3 {
            let o = stencil_offsets(d);
            assert!(o[(o.len() - 1) / 2].iter().all(|&x| x == 0));
        }
    }

    #[test]
    fn flatten_roundtrip() {
        let shape = [3, 4, 5];
        for i in 0..60 {
            assert_eq!(flatten(&unflatten(i, &shape), &shape), i);
        }
    }
}
