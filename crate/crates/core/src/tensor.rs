//! Sum-factorised kernels on modal/nodal tensors.
//!
//! A tensor of dimension `D` is stored flat with the first axis fastest. All
//! kernels apply one-dimensional operators axis by axis, so evaluating or
//! integrating a degree-`M` expansion costs `O(D n^{D+1})` instead of
//! `O(n^{2D})`.

use crate::basis::{gauss_legendre, normalized_legendre};

/// Dense `rows x cols` row-major matrix acting along one tensor axis.
#[derive(Debug, Clone, Copy)]
pub struct AxisMat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
}

/// `dst[.., r, ..] = sum_c op[r, c] src[.., c, ..]` along `axis`.
pub fn apply_axis(src: &[f64], shape: &[usize], axis: usize, op: AxisMat, dst: &mut Vec<f64>) {
    debug_assert_eq!(shape[axis], op.cols);
    let inner: usize = shape[..axis].iter().product();
    let outer: usize = shape[axis + 1..].iter().product();
    let n = op.cols;
    let rows = op.rows;
    dst.clear();
    dst.resize(inner * rows * outer, 0.0);
    if inner == 1 {
        for o in 0..outer {
            let s = &src[o * n..(o + 1) * n];
            for r in 0..rows {
                let m = &op.data[r * n..(r + 1) * n];
                let mut acc = 0.0;
                for c in 0..n {
                    acc += m[c] * s[c];
                }
                dst[o * rows + r] = acc;
            }
        }
    } else {
        for o in 0..outer {
            for r in 0..rows {
                let d = &mut dst[(o * rows + r) * inner..(o * rows + r + 1) * inner];
                for c in 0..n {
                    let m = op.data[r * n + c];
                    let s = &src[(o * n + c) * inner..(o * n + c + 1) * inner];
                    for (di, si) in d.iter_mut().zip(s) {
                        *di += m * si;
                    }
                }
            }
        }
    }
}

/// Reusable ping-pong buffers for chained axis transforms.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// One-dimensional modal tables for `modes` Legendre modes sampled at
/// `points` Gauss points.
#[derive(Debug, Clone)]
pub struct TensorOps {
    pub modes: usize,
    pub points: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `points x modes`: chi_m(x_q).
    pub vals: Vec<f64>,
    /// `points x modes`: chi_m'(x_q).
    pub ders: Vec<f64>,
    /// `modes x points`: w_q chi_m(x_q).
    pub wvals_t: Vec<f64>,
    /// `1 x points`: the quadrature weights as a row operator.
    pub wrow: Vec<f64>,
    /// chi_m(-1) and chi_m(+1).
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl TensorOps {
    pub fn new(modes: usize, points: usize) -> Self {
        let (nodes, weights) = gauss_legendre(points).expect("points >= 1");
        let mut vals = vec![0.0; points * modes];
        let mut ders = vec![0.0; points * modes];
        let mut wvals_t = vec![0.0; modes * points];
        for q in 0..points {
            let (v, d) = normalized_legendre(modes, nodes[q]);
            for m in 0..modes {
                vals[q * modes + m] = v[m];
                ders[q * modes + m] = d[m];
                wvals_t[m * points + q] = weights[q] * v[m];
            }
        }
        let lower = normalized_legendre(modes, -1.0).0;
        let upper = normalized_legendre(modes, 1.0).0;
        TensorOps {
            modes,
            points,
            wrow: weights.clone(),
            nodes,
            weights,
            vals,
            ders,
            wvals_t,
            lower,
            upper,
        }
    }

    pub fn end(&self, side: Side) -> &[f64] {
        match side {
            Side::Lower => &self.lower,
            Side::Upper => &self.upper,
        }
    }

    fn vals_mat(&self) -> AxisMat<'_> {
        AxisMat {
            data: &self.vals,
            rows: self.points,
            cols: self.modes,
        }
    }

    fn ders_mat(&self) -> AxisMat<'_> {
        AxisMat {
            data: &self.ders,
            rows: self.points,
            cols: self.modes,
        }
    }

    fn integ_mat(&self) -> AxisMat<'_> {
        AxisMat {
            data: &self.wvals_t,
            rows: self.modes,
            cols: self.points,
        }
    }

    fn chain<'a>(&'a self, src: &[f64], dims: usize, from: usize, mats: &dyn Fn(usize) -> AxisMat<'a>, out: &mut Vec<f64>, s: &mut Scratch) {
        if dims == 0 {
            out.clear();
            out.extend_from_slice(src);
            return;
        }
        let mut shape = vec![from; dims];
        s.a.clear();
        s.a.extend_from_slice(src);
        for axis in 0..dims {
            let m = mats(axis);
            apply_axis(&s.a, &shape, axis, m, &mut s.b);
            shape[axis] = m.rows;
            std::mem::swap(&mut s.a, &mut s.b);
        }
        std::mem::swap(out, &mut s.a);
    }

    /// Values of a `dims`-dimensional expansion at the tensor Gauss points.
    pub fn eval(&self, coeffs: &[f64], dims: usize, out: &mut Vec<f64>, s: &mut Scratch) {
        self.chain(coeffs, dims, self.modes, &|_| self.vals_mat(), out, s);
    }

    /// Reference derivative along `axis` at the tensor Gauss points.
    pub fn eval_deriv(&self, coeffs: &[f64], dims: usize, axis: usize, out: &mut Vec<f64>, s: &mut Scratch) {
        self.chain(
            coeffs,
            dims,
            self.modes,
            &|a| if a == axis { self.ders_mat() } else { self.vals_mat() },
            out,
            s,
        );
    }

    /// `out_k = sum_q w_q phi_k(x_q) g_q` (no 2^-D normalisation).
    pub fn integrate(&self, g: &[f64], dims: usize, out: &mut Vec<f64>, s: &mut Scratch) {
        self.chain(g, dims, self.points, &|_| self.integ_mat(), out, s);
    }

    /// Like [`integrate`](Self::integrate) but the last axis is only summed
    /// with the weights, i.e. tested against the constant mode. Used to
    /// integrate space-time point data against spatial test functions.
    pub fn integrate_drop_last(&self, g: &[f64], dims: usize, out: &mut Vec<f64>, s: &mut Scratch) {
        let last = dims - 1;
        let wrow = AxisMat {
            data: &self.wrow,
            rows: 1,
            cols: self.points,
        };
        self.chain(g, dims, self.points, &|a| if a == last { wrow } else { self.integ_mat() }, out, s);
    }

    /// Trace of a modal tensor on the `side` face normal to `axis`: the
    /// result has `dims - 1` axes.
    pub fn trace(&self, coeffs: &[f64], dims: usize, axis: usize, side: Side, out: &mut Vec<f64>) {
        let shape = vec![self.modes; dims];
        let e = AxisMat {
            data: self.end(side),
            rows: 1,
            cols: self.modes,
        };
        apply_axis(coeffs, &shape, axis, e, out);
    }

    /// `out[.., k_axis, ..] += scale * e_{k_axis} face[..]` with `e` the basis
    /// values at the chosen end.
    pub fn lift_add(&self, face: &[f64], dims: usize, axis: usize, side: Side, scale: f64, out: &mut [f64]) {
        let n = self.modes;
        let inner = n.pow(axis as u32);
        let outer = n.pow((dims - 1 - axis) as u32);
        let e = self.end(side);
        for o in 0..outer {
            for (m, &em) in e.iter().enumerate() {
                let f = scale * em;
                let d = &mut out[(o * n + m) * inner..(o * n + m + 1) * inner];
                let src = &face[o * inner..(o + 1) * inner];
                for (di, si) in d.iter_mut().zip(src) {
                    *di += f * si;
                }
            }
        }
    }

    /// Product quadrature weights over `dims` axes.
    pub fn weight_tensor(&self, dims: usize) -> Vec<f64> {
        let total = self.points.pow(dims as u32);
        (0..total)
            .map(|flat| {
                let mut rem = flat;
                let mut w = 1.0;
                for _ in 0..dims {
                    w *= self.weights[rem % self.points];
                    rem /= self.points;
                }
                w
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Lower => Side::Upper,
            Side::Upper => Side::Lower,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Lower => 0,
            Side::Upper => 1,
        }
    }

    pub const BOTH: [Side; 2] = [Side::Lower, Side::Upper];
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{gauss_rule, BasisSet};

    #[test]
    fn eval_matches_direct_basis_sum() {
        let ops = TensorOps::new(3, 4);
        let b = BasisSet::new(3, 2).unwrap();
        let c: Vec<f64> = (0..27).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let rule = gauss_rule(4, 3).unwrap();
        let mut out = Vec::new();
        let mut s = Scratch::default();
        ops.eval(&c, 3, &mut out, &mut s);
        for q in 0..rule.len() {
            let want: f64 = b.eval_all(rule.point(q)).iter().zip(&c).map(|(p, c)| p * c).sum();
            assert!((out[q] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn integrate_inverts_eval() {
        let ops = TensorOps::new(3, 3);
        let c: Vec<f64> = (0..9).map(|i| i as f64 * 0.1 - 0.3).collect();
        let mut s = Scratch::default();
        let mut v = Vec::new();
        let mut back = Vec::new();
        ops.eval(&c, 2, &mut v, &mut s);
        ops.integrate(&v, 2, &mut back, &mut s);
        for k in 0..9 {
            assert!((back[k] * 0.25 - c[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn trace_and_lift_are_adjoint() {
        let ops = TensorOps::new(3, 4);
        let c: Vec<f64> = (0..27).map(|i| (i as f64).sin()).collect();
        let f: Vec<f64> = (0..9).map(|i| (i as f64).cos()).collect();
        for axis in 0..3 {
            let mut t = Vec::new();
            ops.trace(&c, 3, axis, Side::Upper, &mut t);
            let mut l = vec![0.0; 27];
            ops.lift_add(&f, 3, axis, Side::Upper, 1.0, &mut l);
            let lhs: f64 = t.iter().zip(&f).map(|(a, b)| a * b).sum();
            let rhs: f64 = l.iter().zip(&c).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
