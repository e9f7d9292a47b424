//! The implicit space-time system on one region of `3^d` elements: residual
//! evaluation and Jacobian assembly with three interchangeable backends.

use super::linalg::BlockMatrix;
use super::tables::QqfTables;
use crate::dg::{ElementKernels, Work};
use crate::error::{Error, Result};
use crate::mesh::stencil_offsets;
use crate::tensor::Side;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Qqf,
    Quadrature,
    Perturbation,
}

impl Backend {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qqf" => Ok(Backend::Qqf),
            "quadrature" | "quad" => Ok(Backend::Quadrature),
            "perturbation" | "pert" => Ok(Backend::Perturbation),
            _ => Err(Error::invalid("backend", format!("unknown backend `{s}` (qqf|quadrature|perturbation)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backend::Qqf => "qqf",
            Backend::Quadrature => "quadrature",
            Backend::Perturbation => "perturbation",
        }
    }

    pub const ALL: [Backend; 3] = [Backend::Qqf, Backend::Quadrature, Backend::Perturbation];
}

/// Element adjacency inside a region. Elements are numbered in stencil
/// order, first axis fastest; the centre is `(3^d - 1) / 2`.
#[derive(Debug, Clone)]
pub struct RegionTopology {
    pub dim: usize,
    pub nb: usize,
    pub centre: usize,
    pub offsets: Vec<Vec<isize>>,
    /// `nbr[j][2a + side]`: element across face `(a, side)` if inside.
    pub nbr: Vec<Vec<Option<usize>>>,
    /// Interior faces `(lower element, upper element, axis)`.
    pub faces: Vec<(usize, usize, usize)>,
    /// `face_of[j][2a + side]`: index into `faces`.
    pub face_of: Vec<Vec<Option<usize>>>,
}

impl RegionTopology {
    pub fn new(dim: usize) -> Self {
        let offsets = stencil_offsets(dim);
        let nb = offsets.len();
        let find = |o: &[isize]| offsets.iter().position(|x| x == o);
        let mut nbr = vec![vec![None; 2 * dim]; nb];
        let mut faces = Vec::new();
        let mut face_of = vec![vec![None; 2 * dim]; nb];
        for j in 0..nb {
            for a in 0..dim {
                for side in Side::BOTH {
                    let mut o = offsets[j].clone();
                    o[a] += side.sign() as isize;
                    if o[a].abs() <= 1 {
                        nbr[j][2 * a + side.index()] = find(&o);
                    }
                }
            }
        }
        for j in 0..nb {
            for a in 0..dim {
                if let Some(u) = nbr[j][2 * a + 1] {
                    face_of[j][2 * a + 1] = Some(faces.len());
                    face_of[u][2 * a] = Some(faces.len());
                    faces.push((j, u, a));
                }
            }
        }
        RegionTopology {
            dim,
            nb,
            centre: (nb - 1) / 2,
            offsets,
            nbr,
            faces,
            face_of,
        }
    }
}

/// Basis values at the quadrature points, for the direct-quadrature backend.
#[derive(Debug, Clone)]
pub struct QuadTables {
    /// `theta_t x Q`: psi_l(x_q).
    pub psi_t: Vec<f64>,
    /// Per axis, `theta_t x Q`: w_q d_a psi_k(x_q).
    pub wdpsi: Vec<Vec<f64>>,
    /// Per `(axis, side)`, `theta_t x Q_f`: psi_k on the face points.
    pub face_psi: Vec<Vec<f64>>,
    pub nq: usize,
    pub nqf: usize,
}

impl QuadTables {
    fn new(k: &ElementKernels) -> Self {
        let d = k.dim;
        let o = &k.ops;
        let n = o.modes;
        let p = o.points;
        let dt = d + 1;
        let tt = k.theta_t;
        let nq = p.pow(dt as u32);
        let nqf = p.pow(d as u32);
        let digit = |x: usize, b: usize, base: usize| (x / base.pow(b as u32)) % base;
        let mut psi_t = vec![0.0; tt * nq];
        let mut wdpsi = vec![vec![0.0; tt * nq]; d];
        for kk in 0..tt {
            for q in 0..nq {
                let mut v = 1.0;
                for b in 0..dt {
                    v *= o.vals[digit(q, b, p) * n + digit(kk, b, n)];
                }
                psi_t[kk * nq + q] = v;
                for (a, wd) in wdpsi.iter_mut().enumerate() {
                    let mut v = k.w_st[q];
                    for b in 0..dt {
                        let (qi, ki) = (digit(q, b, p), digit(kk, b, n));
                        v *= if a == b { o.ders[qi * n + ki] } else { o.vals[qi * n + ki] };
                    }
                    wd[kk * nq + q] = v;
                }
            }
        }
        let mut face_psi = Vec::new();
        for a in 0..d {
            for side in Side::BOTH {
                let e = o.end(side);
                let mut t = vec![0.0; tt * nqf];
                for kk in 0..tt {
                    for q in 0..nqf {
                        // face point digits skip axis a
                        let mut v = e[digit(kk, a, n)];
                        let mut fb = 0;
                        for b in 0..dt {
                            if b == a {
                                continue;
                            }
                            v *= o.vals[digit(q, fb, p) * n + digit(kk, b, n)];
                            fb += 1;
                        }
                        t[kk * nqf + q] = v;
                    }
                }
                face_psi.push(t);
            }
        }
        QuadTables {
            psi_t,
            wdpsi,
            face_psi,
            nq,
            nqf,
        }
    }
}

/// Immutable operators for region solves of one `(law, Mdeg, h)`.
#[derive(Debug)]
pub struct RegionOps {
    pub kern: ElementKernels,
    pub tables: Arc<QqfTables>,
    pub topo: RegionTopology,
    pub time_op: Vec<f64>,
    quad: std::sync::OnceLock<QuadTables>,
    /// Per axis: for each space-time index `k`, the face index with axis `a`
    /// removed and the coordinate along `a`.
    split: Vec<(Vec<u32>, Vec<u8>)>,
}

/// Per-thread scratch for region work.
#[derive(Debug, Default, Clone)]
pub struct RegionWork {
    pub wk: Work,
    buf: Vec<f64>,
    stacked: Vec<f64>,
    acc: Vec<f64>,
    c_own: Vec<f64>,
    c_nbr: Vec<f64>,
    v: Vec<f64>,
    g: Vec<f64>,
}

impl RegionOps {
    pub fn new(kern: ElementKernels, tables: Arc<QqfTables>) -> Self {
        assert_eq!(kern.degree, tables.degree);
        assert_eq!(kern.dim, tables.dim);
        let d = kern.dim;
        let n = kern.modes();
        let split = (0..d)
            .map(|a| {
                let mut face = Vec::with_capacity(kern.theta_t);
                let mut along = Vec::with_capacity(kern.theta_t);
                for k in 0..kern.theta_t {
                    let mut rem = k;
                    let mut f = 0usize;
                    let mut mul = 1usize;
                    for b in 0..=d {
                        let digit = rem % n;
                        rem /= n;
                        if b == a {
                            along.push(digit as u8);
                        } else {
                            f += digit * mul;
                            mul *= n;
                        }
                    }
                    face.push(f as u32);
                }
                (face, along)
            })
            .collect();
        RegionOps {
            time_op: tables.time_operator(),
            topo: RegionTopology::new(d),
            kern,
            tables,
            quad: std::sync::OnceLock::new(),
            split,
        }
    }

    pub fn nb(&self) -> usize {
        self.topo.nb
    }

    pub fn unknowns(&self) -> usize {
        self.topo.nb * self.kern.theta_t
    }

    pub fn nu(&self, dt: f64) -> Vec<f64> {
        self.kern.h.iter().map(|h| dt / h).collect()
    }

    pub fn quad_tables(&self) -> &QuadTables {
        self.quad.get_or_init(|| QuadTables::new(&self.kern))
    }

    /// Newton initial guess: spatial modes from `Q`, time modes zero.
    pub fn initial_guess(&self, q: &[f64]) -> Vec<f64> {
        let (th, tt) = (self.kern.theta, self.kern.theta_t);
        let mut w = vec![0.0; self.nb() * tt];
        for j in 0..self.nb() {
            w[j * tt..j * tt + th].copy_from_slice(&q[j * th..(j + 1) * th]);
        }
        w
    }

    /// Frozen Rusanov speeds, one per interior face.
    pub fn face_lambdas(&self, w: &[f64], wk: &mut Work) -> Vec<f64> {
        let tt = self.kern.theta_t;
        self.topo
            .faces
            .iter()
            .map(|&(lo, hi, a)| self.kern.face_lambda(&w[lo * tt..(lo + 1) * tt], &w[hi * tt..(hi + 1) * tt], a, wk))
            .collect()
    }

    /// Time, causal and volume part of element `j`'s residual.
    fn self_part(&self, j: usize, w: &[f64], q: &[f64], nu: &[f64], out: &mut Vec<f64>, wk: &mut Work) {
        let (th, tt) = (self.kern.theta, self.kern.theta_t);
        let wj = &w[j * tt..(j + 1) * tt];
        self.kern.time_causal(wj, &q[j * th..(j + 1) * th], out);
        self.kern.st_volume_add(wj, nu, out, wk);
    }

    /// Face `(a, side)` part of element `j`'s residual, added to `out`. Faces
    /// on the region boundary use the interior trace only, which contributes
    /// nothing in strong form.
    fn face_part(&self, j: usize, a: usize, side: Side, w: &[f64], nu: &[f64], lam: &[f64], out: &mut [f64], wk: &mut Work) {
        let tt = self.kern.theta_t;
        let f = 2 * a + side.index();
        if let (Some(nj), Some(fi)) = (self.topo.nbr[j][f], self.topo.face_of[j][f]) {
            self.kern
                .st_face_add(&w[j * tt..(j + 1) * tt], &w[nj * tt..(nj + 1) * tt], a, side, nu[a], lam[fi], out, wk);
        }
    }

    fn element_residual(&self, j: usize, w: &[f64], q: &[f64], nu: &[f64], lam: &[f64], out: &mut Vec<f64>, wk: &mut Work) {
        self.self_part(j, w, q, nu, out, wk);
        for a in 0..self.kern.dim {
            for side in Side::BOTH {
                self.face_part(j, a, side, w, nu, lam, out, wk);
            }
        }
    }

    /// Full region residual for unknowns `w` (`nb * theta_t`) and start-of-
    /// step data `q` (`nb * theta`).
    pub fn residual(&self, w: &[f64], q: &[f64], dt: f64, lam: &[f64], rw: &mut RegionWork) -> Vec<f64> {
        let tt = self.kern.theta_t;
        let nu = self.nu(dt);
        let mut r = vec![0.0; self.unknowns()];
        for j in 0..self.nb() {
            self.element_residual(j, w, q, &nu, lam, &mut rw.buf, &mut rw.wk);
            r[j * tt..(j + 1) * tt].copy_from_slice(&rw.buf);
        }
        r
    }

    /// Residual with Rusanov speeds taken from `w` itself.
    pub fn residual_at(&self, w: &[f64], q: &[f64], dt: f64, rw: &mut RegionWork) -> Vec<f64> {
        let lam = self.face_lambdas(w, &mut rw.wk);
        self.residual(w, q, dt, &lam, rw)
    }

    pub fn new_jacobian(&self) -> BlockMatrix {
        BlockMatrix::new(self.nb(), self.kern.theta_t)
    }

    pub fn jacobian(&self, backend: Backend, w: &[f64], q: &[f64], dt: f64, lam: &[f64], jac: &mut BlockMatrix, rw: &mut RegionWork) {
        jac.clear();
        match backend {
            Backend::Qqf => self.jacobian_qqf(w, dt, lam, jac, rw),
            Backend::Quadrature => self.jacobian_quadrature(w, dt, lam, jac, rw),
            Backend::Perturbation => self.jacobian_perturbation(w, q, dt, lam, jac, rw),
        }
    }

    fn add_time_blocks(&self, jac: &mut BlockMatrix) {
        for j in 0..self.nb() {
            let b = jac.block_mut(j, j);
            for (x, t) in b.iter_mut().zip(&self.time_op) {
                *x += t;
            }
        }
    }

    /// Face-point values of the flux-Jacobian coefficients for element `j`'s
    /// face `f`: `c_own = dFhat/dw_in`, `c_nbr = dFhat/dw_out` (empty on the
    /// region boundary). Left in `rw.c_own`, `rw.c_nbr`.
    fn face_coefficients(&self, j: usize, a: usize, side: Side, w: &[f64], lam: &[f64], rw: &mut RegionWork) -> Option<usize> {
        let tt = self.kern.theta_t;
        let law = &self.kern.law;
        let f = 2 * a + side.index();
        let s = side.sign();
        let wj = &w[j * tt..(j + 1) * tt];
        rw.c_own.clear();
        rw.c_nbr.clear();
        match (self.topo.nbr[j][f], self.topo.face_of[j][f]) {
            (Some(nj), Some(fi)) => {
                self.kern.st_face_values(wj, &w[nj * tt..(nj + 1) * tt], a, side, &mut rw.wk);
                let l = lam[fi];
                for (wi, we) in rw.wk.va.iter().zip(&rw.wk.vb) {
                    rw.c_own.push(0.5 * (law.jacobian_axis(*wi, a) * s + l));
                    rw.c_nbr.push(0.5 * (law.jacobian_axis(*we, a) * s - l));
                }
                Some(nj)
            }
            _ => {
                self.kern.ops.trace(wj, self.kern.dim + 1, a, side, &mut rw.wk.ta);
                self.kern.ops.eval(&rw.wk.ta, self.kern.dim, &mut rw.wk.va, &mut rw.wk.s);
                for wi in &rw.wk.va {
                    rw.c_own.push(law.jacobian_axis(*wi, a) * s);
                }
                None
            }
        }
    }

    // ---- quasi-quadrature-free -------------------------------------------

    fn jacobian_qqf(&self, w: &[f64], dt: f64, lam: &[f64], jac: &mut BlockMatrix, rw: &mut RegionWork) {
        let k = &self.kern;
        let d = k.dim;
        let tt = k.theta_t;
        let nb = self.nb();
        let nu = self.nu(dt);
        let proj_scale = 0.5f64.powi(d as i32 + 1);

        // Project nu_a F_a'(w_j) onto the space-time basis, stacked as
        // [(a * theta_t + p) * nb + j].
        rw.stacked.clear();
        rw.stacked.resize(d * tt * nb, 0.0);
        for j in 0..nb {
            let wj = &w[j * tt..(j + 1) * tt];
            k.ops.eval(wj, d + 1, &mut rw.wk.w, &mut rw.wk.s);
            for a in 0..d {
                rw.g.clear();
                for v in &rw.wk.w {
                    rw.g.push(k.law.jacobian_axis(*v, a));
                }
                k.ops.integrate(&rw.g, d + 1, &mut rw.wk.m, &mut rw.wk.s);
                for p in 0..tt {
                    rw.stacked[(a * tt + p) * nb + j] = nu[a] * proj_scale * rw.wk.m[p];
                }
            }
        }

        self.add_time_blocks(jac);

        // Volume: J_jj[k,l] -= sum_a nu_a sum_{p in alpha} beta F'_{a,p}.
        let vol = &self.tables.volume;
        rw.acc.resize(nb, 0.0);
        let mut blocks = jac.diagonal_blocks_mut();
        for row in 0..tt * tt {
            rw.acc.iter_mut().for_each(|v| *v = 0.0);
            let (alpha, beta) = vol.row(row);
            for (&p, &b) in alpha.iter().zip(beta) {
                let f = &rw.stacked[p as usize * nb..(p as usize + 1) * nb];
                for (acc, fj) in rw.acc.iter_mut().zip(f) {
                    *acc += b * fj;
                }
            }
            for (blk, acc) in blocks.iter_mut().zip(&rw.acc) {
                blk[row] -= acc;
            }
        }
        drop(blocks);

        // Faces: project the flux linearisations onto the face basis and
        // contract with the face triple tensor.
        let th = k.theta; // face basis size (d axes)
        let face_scale = 0.5f64.powi(d as i32);
        for j in 0..nb {
            for a in 0..d {
                for side in Side::BOTH {
                    let nbr = self.face_coefficients(j, a, side, w, lam, rw);
                    let parts: [(Option<usize>, bool); 2] = [(Some(j), true), (nbr, false)];
                    for (target, own) in parts {
                        let Some(t) = target else { continue };
                        let c = if own { &rw.c_own } else { &rw.c_nbr };
                        rw.g.clear();
                        rw.g.extend(c.iter().map(|c| c * face_scale));
                        k.ops.integrate(&rw.g, d, &mut rw.wk.m, &mut rw.wk.s);
                        // V[k~, l~] = sum_p G[k~,l~,p] c~_p
                        rw.v.clear();
                        for fr in 0..th * th {
                            let (alpha, beta) = self.tables.face.row(fr);
                            let mut s = 0.0;
                            for (&p, &b) in alpha.iter().zip(beta) {
                                s += b * rw.wk.m[p as usize];
                            }
                            rw.v.push(s);
                        }
                        let e_k = k.ops.end(side);
                        let e_l = if own { e_k } else { k.ops.end(side.opposite()) };
                        self.scatter_face(jac.block_mut(j, t), a, nu[a], e_k, e_l, &rw.v);
                    }
                }
            }
        }
    }

    /// `block[k,l] += nu e_k[k_a] e_l[l_a] V[k~, l~]`.
    fn scatter_face(&self, block: &mut [f64], a: usize, nu: f64, e_k: &[f64], e_l: &[f64], v: &[f64]) {
        let tt = self.kern.theta_t;
        let th = self.kern.theta;
        let (face, along) = &self.split[a];
        let el: Vec<f64> = along.iter().map(|&i| e_l[i as usize]).collect();
        for kk in 0..tt {
            let ck = nu * e_k[along[kk] as usize];
            let vrow = &v[face[kk] as usize * th..(face[kk] as usize + 1) * th];
            let row = &mut block[kk * tt..(kk + 1) * tt];
            for l in 0..tt {
                row[l] += ck * el[l] * vrow[face[l] as usize];
            }
        }
    }

    // ---- direct quadrature ---------------------------------------------------

    fn jacobian_quadrature(&self, w: &[f64], dt: f64, lam: &[f64], jac: &mut BlockMatrix, rw: &mut RegionWork) {
        let k = &self.kern;
        let d = k.dim;
        let tt = k.theta_t;
        let nb = self.nb();
        let nu = self.nu(dt);
        let qt = self.quad_tables();
        let nq = qt.nq;
        let nqf = qt.nqf;
        let norm = 0.5f64.powi(d as i32);

        self.add_time_blocks(jac);

        for j in 0..nb {
            let wj = &w[j * tt..(j + 1) * tt];
            k.ops.eval(wj, d + 1, &mut rw.wk.w, &mut rw.wk.s);
            // G[k][q] = sum_a nu_a 2^-d w_q d_a psi_k(q) F_a'(w_q)
            rw.acc.clear();
            rw.acc.resize(tt * nq, 0.0);
            for a in 0..d {
                let wd = &qt.wdpsi[a];
                for q in 0..nq {
                    let f = nu[a] * norm * k.law.jacobian_axis(rw.wk.w[q], a);
                    for kk in 0..tt {
                        rw.acc[kk * nq + q] += f * wd[kk * nq + q];
                    }
                }
            }
            let blk = jac.block_mut(j, j);
            for kk in 0..tt {
                let gk = &rw.acc[kk * nq..(kk + 1) * nq];
                for l in 0..tt {
                    let pl = &qt.psi_t[l * nq..(l + 1) * nq];
                    let mut s = 0.0;
                    for q in 0..nq {
                        s += gk[q] * pl[q];
                    }
                    blk[kk * tt + l] -= s;
                }
            }
        }

        for j in 0..nb {
            for a in 0..d {
                for side in Side::BOTH {
                    let nbr = self.face_coefficients(j, a, side, w, lam, rw);
                    let fk = &qt.face_psi[2 * a + side.index()];
                    let parts: [(Option<usize>, bool); 2] = [(Some(j), true), (nbr, false)];
                    for (target, own) in parts {
                        let Some(t) = target else { continue };
                        let c = if own { &rw.c_own } else { &rw.c_nbr };
                        let fl = if own { fk } else { &qt.face_psi[2 * a + side.opposite().index()] };
                        // U[k][q] = nu_a 2^-d w_q psi_k(q) c(q)
                        rw.v.clear();
                        rw.v.resize(tt * nqf, 0.0);
                        for kk in 0..tt {
                            for q in 0..nqf {
                                rw.v[kk * nqf + q] = nu[a] * norm * k.w_fst[q] * c[q] * fk[kk * nqf + q];
                            }
                        }
                        let blk = jac.block_mut(j, t);
                        for kk in 0..tt {
                            let uk = &rw.v[kk * nqf..(kk + 1) * nqf];
                            for l in 0..tt {
                                let pl = &fl[l * nqf..(l + 1) * nqf];
                                let mut s = 0.0;
                                for q in 0..nqf {
                                    s += uk[q] * pl[q];
                                }
                                blk[kk * tt + l] += s;
                            }
                        }
                    }
                }
            }
        }
    }

    // ---- finite-difference perturbation ------------------------------------

    fn jacobian_perturbation(&self, w: &[f64], q: &[f64], dt: f64, lam: &[f64], jac: &mut BlockMatrix, rw: &mut RegionWork) {
        let k = &self.kern;
        let d = k.dim;
        let tt = k.theta_t;
        let nb = self.nb();
        let nu = self.nu(dt);
        // Cache the parts of every element residual.
        let mut selfp: Vec<Vec<f64>> = Vec::with_capacity(nb);
        let mut facep: Vec<Vec<Vec<f64>>> = Vec::with_capacity(nb);
        let mut base: Vec<Vec<f64>> = Vec::with_capacity(nb);
        for j in 0..nb {
            let mut s = Vec::new();
            self.self_part(j, w, q, &nu, &mut s, &mut rw.wk);
            let mut fs = Vec::with_capacity(2 * d);
            for a in 0..d {
                for side in Side::BOTH {
                    let mut f = vec![0.0; tt];
                    self.face_part(j, a, side, w, &nu, lam, &mut f, &mut rw.wk);
                    fs.push(f);
                }
            }
            base.push(sum_parts(&s, &fs));
            selfp.push(s);
            facep.push(fs);
        }

        let mut wp = w.to_vec();
        let mut s_new = Vec::new();
        let mut f_new = vec![0.0; tt];
        for j in 0..nb {
            for l in 0..tt {
                let idx = j * tt + l;
                let h = 1e-7 * w[idx].abs().max(1.0);
                wp[idx] = w[idx] + h;
                let h = wp[idx] - w[idx];
                // element j: everything changes
                self.self_part(j, &wp, q, &nu, &mut s_new, &mut rw.wk);
                let mut fs: Vec<Vec<f64>> = Vec::with_capacity(2 * d);
                for a in 0..d {
                    for side in Side::BOTH {
                        f_new.iter_mut().for_each(|v| *v = 0.0);
                        self.face_part(j, a, side, &wp, &nu, lam, &mut f_new, &mut rw.wk);
                        fs.push(f_new.clone());
                    }
                }
                let r = sum_parts(&s_new, &fs);
                let blk = jac.block_mut(j, j);
                for kk in 0..tt {
                    blk[kk * tt + l] = (r[kk] - base[j][kk]) / h;
                }
                // neighbours: only their face toward j changes
                for a in 0..d {
                    for side in Side::BOTH {
                        let Some(nj) = self.topo.nbr[j][2 * a + side.index()] else { continue };
                        let back = 2 * a + side.opposite().index();
                        f_new.iter_mut().for_each(|v| *v = 0.0);
                        self.face_part(nj, a, side.opposite(), &wp, &nu, lam, &mut f_new, &mut rw.wk);
                        let mut parts = facep[nj].clone();
                        parts[back].copy_from_slice(&f_new);
                        let r = sum_parts(&selfp[nj], &parts);
                        let blk = jac.block_mut(nj, j);
                        for kk in 0..tt {
                            blk[kk * tt + l] = (r[kk] - base[nj][kk]) / h;
                        }
                    }
                }
                wp[idx] = w[idx];
            }
        }
    }
}

fn sum_parts(s: &[f64], faces: &[Vec<f64>]) -> Vec<f64> {
    let mut r = s.to_vec();
    for f in faces {
        for (x, y) in r.iter_mut().zip(f) {
            *x += y;
        }
    }
    r
}
