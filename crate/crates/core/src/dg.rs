//! Element-local DG operators shared by the predictor and the steppers.
//!
//! All flux terms are evaluated in strong form: a volume integral of
//! `psi_k F'(w) . grad w` plus face integrals of `psi_k (Fhat - F(w_in) . n)`.
//! This equals the integrated-by-parts form whenever the quadrature is exact,
//! and makes constant states produce exactly zero flux contributions.
//!
//! Every integral is normalised by the element measure, so `1/2^d` of the
//! reference integral appears throughout.

use crate::law::{rusanov, ConservationLaw};
use crate::tensor::{Scratch, Side, TensorOps};

/// Scratch buffers for one thread.
#[derive(Debug, Default, Clone)]
pub struct Work {
    pub s: Scratch,
    pub w: Vec<f64>,
    pub dw: Vec<f64>,
    pub g: Vec<f64>,
    pub m: Vec<f64>,
    pub ta: Vec<f64>,
    pub tb: Vec<f64>,
    pub va: Vec<f64>,
    pub vb: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ElementKernels {
    pub law: ConservationLaw,
    pub dim: usize,
    pub degree: usize,
    pub h: Vec<f64>,
    pub ops: TensorOps,
    pub theta: usize,
    pub theta_t: usize,
    /// Product quadrature weights on the space-time volume and face.
    pub w_st: Vec<f64>,
    pub w_fst: Vec<f64>,
    /// One-dimensional time operator `chi_i(1) chi_j(1) - int chi_i' chi_j`.
    pub time_1d: Vec<f64>,
    /// `chi_i(-1)`.
    pub causal_1d: Vec<f64>,
    norm: f64,
}

/// Gauss points per axis that integrate every kernel exactly: per-axis
/// degree `2M` integrands for linear fluxes and `3M` for quadratic ones.
pub fn quadrature_points(law: &ConservationLaw, degree: usize) -> usize {
    if law.is_linear() {
        degree + 1
    } else {
        (3 * degree + 2) / 2
    }
}

impl ElementKernels {
    /// Kernels with [`quadrature_points`] points per axis.
    pub fn exact(law: ConservationLaw, degree: usize, h: &[f64]) -> Self {
        let p = quadrature_points(&law, degree);
        Self::new(law, degree, h, p)
    }

    pub fn new(law: ConservationLaw, degree: usize, h: &[f64], points: usize) -> Self {
        let d = law.dim;
        let n = degree + 1;
        let ops = TensorOps::new(n, points);
        let exact = TensorOps::new(n, n + 1);
        let mut time_1d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut k = 0.0;
                for q in 0..exact.points {
                    k += exact.weights[q] * exact.ders[q * n + i] * exact.vals[q * n + j];
                }
                time_1d[i * n + j] = ops.upper[i] * ops.upper[j] - k;
            }
            // the constant column is chi_i(-1) analytically; pin it so that
            // steady states cancel the causal term exactly
            time_1d[i * n] = ops.lower[i];
        }
        ElementKernels {
            law,
            dim: d,
            degree,
            h: h.to_vec(),
            theta: n.pow(d as u32),
            theta_t: n.pow(d as u32 + 1),
            w_st: ops.weight_tensor(d + 1),
            w_fst: ops.weight_tensor(d),
            causal_1d: ops.lower.clone(),
            time_1d,
            ops,
            norm: 0.5f64.powi(d as i32),
        }
    }

    pub fn modes(&self) -> usize {
        self.degree + 1
    }

    // ---- method of lines (spatial) ---------------------------------------

    /// `sum_a (2/h_a) 2^-d int phi_k F_a'(w) d_a w`.
    pub fn spatial_volume(&self, q: &[f64], out: &mut Vec<f64>, wk: &mut Work) {
        let d = self.dim;
        let o = &self.ops;
        o.eval(q, d, &mut wk.w, &mut wk.s);
        wk.g.clear();
        wk.g.resize(wk.w.len(), 0.0);
        for a in 0..d {
            o.eval_deriv(q, d, a, &mut wk.dw, &mut wk.s);
            let s = 2.0 / self.h[a];
            for i in 0..wk.g.len() {
                wk.g[i] += s * self.law.jacobian_axis(wk.w[i], a) * wk.dw[i];
            }
        }
        for g in wk.g.iter_mut() {
            *g *= self.norm;
        }
        o.integrate(&wk.g, d, out, &mut wk.s);
    }

    /// Contribution of face `(axis, side)` of the element holding `q_own`:
    /// `(1/h_a) 2^{1-d} int_face phi_k (Fhat - F_a(w_in) n)`, added to `out`.
    pub fn spatial_face_add(&self, q_own: &[f64], q_nbr: &[f64], axis: usize, side: Side, out: &mut [f64], wk: &mut Work) {
        let d = self.dim;
        let o = &self.ops;
        o.trace(q_own, d, axis, side, &mut wk.ta);
        o.trace(q_nbr, d, axis, side.opposite(), &mut wk.tb);
        o.eval(&wk.ta, d - 1, &mut wk.va, &mut wk.s);
        o.eval(&wk.tb, d - 1, &mut wk.vb, &mut wk.s);
        let sign = side.sign();
        wk.g.clear();
        for i in 0..wk.va.len() {
            let (wi, we) = (wk.va[i], wk.vb[i]);
            let lam = self.law.wave_speed(wi, axis).max(self.law.wave_speed(we, axis));
            let fhat = rusanov(&self.law, we, wi, axis, sign, lam);
            wk.g.push(fhat - self.law.flux_axis(wi, axis) * sign);
        }
        o.integrate(&wk.g, d - 1, &mut wk.m, &mut wk.s);
        let scale = 2.0 * self.norm / self.h[axis];
        o.lift_add(&wk.m, d, axis, side, scale, out);
    }

    /// Semi-discrete right-hand side of one element; `nbrs` holds the face
    /// neighbours ordered (axis 0 lower, axis 0 upper, axis 1 lower, ...).
    pub fn rkdg_rhs(&self, q: &[f64], nbrs: &[&[f64]], out: &mut Vec<f64>, wk: &mut Work) {
        self.spatial_volume(q, out, wk);
        for a in 0..self.dim {
            for side in Side::BOTH {
                self.spatial_face_add(q, nbrs[2 * a + side.index()], a, side, out, wk);
            }
        }
        for v in out.iter_mut() {
            *v = -*v;
        }
    }

    // ---- space-time --------------------------------------------------------

    /// `A W - C Q`: the time term minus the causal source.
    pub fn time_causal(&self, w: &[f64], q: &[f64], out: &mut Vec<f64>) {
        let theta = self.theta;
        let n = self.modes();
        out.clear();
        out.resize(self.theta_t, 0.0);
        for kt in 0..n {
            let row = &mut out[kt * theta..(kt + 1) * theta];
            for lt in 0..n {
                let a = self.time_1d[kt * n + lt];
                for (r, x) in row.iter_mut().zip(&w[lt * theta..(lt + 1) * theta]) {
                    *r += a * x;
                }
            }
            let c = self.causal_1d[kt];
            for (r, x) in row.iter_mut().zip(q) {
                *r -= c * x;
            }
        }
    }

    /// `sum_a nu_a 2^-d int int psi_k F_a'(w) d_a w`, added to `out`.
    pub fn st_volume_add(&self, w: &[f64], nu: &[f64], out: &mut [f64], wk: &mut Work) {
        let d = self.dim;
        let o = &self.ops;
        o.eval(w, d + 1, &mut wk.w, &mut wk.s);
        wk.g.clear();
        wk.g.resize(wk.w.len(), 0.0);
        for a in 0..d {
            o.eval_deriv(w, d + 1, a, &mut wk.dw, &mut wk.s);
            let s = nu[a] * self.norm;
            for i in 0..wk.g.len() {
                wk.g[i] += s * self.law.jacobian_axis(wk.w[i], a) * wk.dw[i];
            }
        }
        o.integrate(&wk.g, d + 1, &mut wk.m, &mut wk.s);
        for (r, v) in out.iter_mut().zip(&wk.m) {
            *r += v;
        }
    }

    /// Largest directional wave speed over both space-time traces of the
    /// face between `w_lo` (its upper side) and `w_hi` (its lower side).
    pub fn face_lambda(&self, w_lo: &[f64], w_hi: &[f64], axis: usize, wk: &mut Work) -> f64 {
        let d = self.dim;
        let o = &self.ops;
        o.trace(w_lo, d + 1, axis, Side::Upper, &mut wk.ta);
        o.trace(w_hi, d + 1, axis, Side::Lower, &mut wk.tb);
        o.eval(&wk.ta, d, &mut wk.va, &mut wk.s);
        o.eval(&wk.tb, d, &mut wk.vb, &mut wk.s);
        let mut lam = 0.0f64;
        for (a, b) in wk.va.iter().zip(&wk.vb) {
            lam = lam.max(self.law.wave_speed(*a, axis)).max(self.law.wave_speed(*b, axis));
        }
        lam
    }

    /// Space-time face values of both traces: `(own, neighbour)` in
    /// `wk.va`, `wk.vb`.
    pub fn st_face_values(&self, w_own: &[f64], w_nbr: &[f64], axis: usize, side: Side, wk: &mut Work) {
        let d = self.dim;
        let o = &self.ops;
        o.trace(w_own, d + 1, axis, side, &mut wk.ta);
        o.trace(w_nbr, d + 1, axis, side.opposite(), &mut wk.tb);
        o.eval(&wk.ta, d, &mut wk.va, &mut wk.s);
        o.eval(&wk.tb, d, &mut wk.vb, &mut wk.s);
    }

    /// `nu_a 2^-d int int_face psi_k (Fhat - F_a(w_in) n)` with a frozen
    /// Rusanov speed, added to `out`.
    pub fn st_face_add(&self, w_own: &[f64], w_nbr: &[f64], axis: usize, side: Side, nu_a: f64, lambda: f64, out: &mut [f64], wk: &mut Work) {
        let d = self.dim;
        let o = &self.ops;
        self.st_face_values(w_own, w_nbr, axis, side, wk);
        let sign = side.sign();
        wk.g.clear();
        for i in 0..wk.va.len() {
            let (wi, we) = (wk.va[i], wk.vb[i]);
            let fhat = rusanov(&self.law, we, wi, axis, sign, lambda);
            wk.g.push(fhat - self.law.flux_axis(wi, axis) * sign);
        }
        o.integrate(&wk.g, d, &mut wk.m, &mut wk.s);
        o.lift_add(&wk.m, d + 1, axis, side, nu_a * self.norm, out);
    }

    // ---- corrector ---------------------------------------------------------

    /// Explicit update of one element from its predicted space-time solution
    /// and those of its face neighbours (same ordering as
    /// [`rkdg_rhs`](Self::rkdg_rhs)).
    pub fn correct(&self, q: &[f64], w: &[f64], nbrs: &[&[f64]], dt: f64, out: &mut Vec<f64>, wk: &mut Work) {
        let d = self.dim;
        let o = &self.ops;
        // volume
        o.eval(w, d + 1, &mut wk.w, &mut wk.s);
        wk.g.clear();
        wk.g.resize(wk.w.len(), 0.0);
        for a in 0..d {
            o.eval_deriv(w, d + 1, a, &mut wk.dw, &mut wk.s);
            let s = dt / self.h[a] * self.norm;
            for i in 0..wk.g.len() {
                wk.g[i] += s * self.law.jacobian_axis(wk.w[i], a) * wk.dw[i];
            }
        }
        let mut delta = Vec::new();
        o.integrate_drop_last(&wk.g, d + 1, &mut delta, &mut wk.s);
        // faces with pointwise Rusanov speed
        for a in 0..d {
            for side in Side::BOTH {
                self.st_face_values(w, nbrs[2 * a + side.index()], a, side, wk);
                let sign = side.sign();
                wk.g.clear();
                for i in 0..wk.va.len() {
                    let (wi, we) = (wk.va[i], wk.vb[i]);
                    let lam = self.law.wave_speed(wi, a).max(self.law.wave_speed(we, a));
                    let fhat = rusanov(&self.law, we, wi, a, sign, lam);
                    wk.g.push(fhat - self.law.flux_axis(wi, a) * sign);
                }
                o.integrate_drop_last(&wk.g, d, &mut wk.m, &mut wk.s);
                o.lift_add(&wk.m, d, a, side, dt / self.h[a] * self.norm, &mut delta);
            }
        }
        out.clear();
        out.extend(q.iter().zip(&delta).map(|(q, dq)| q - dq));
    }

    /// Largest wave speed over the Gauss points of a spatial expansion.
    pub fn max_speed(&self, q: &[f64], wk: &mut Work) -> f64 {
        self.ops.eval(q, self.dim, &mut wk.w, &mut wk.s);
        let mut m = 0.0f64;
        for &v in &wk.w {
            for a in 0..self.dim {
                m = m.max(self.law.wave_speed(v, a));
            }
        }
        m
    }
}
