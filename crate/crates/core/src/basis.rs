//! Orthonormal tensor-product Legendre bases on `[-1,1]^d`, Gauss-Legendre
//! rules and L2 projection.
//!
//! Flat indices enumerate multi-indices with the first axis fastest, so for a
//! space-time basis the time axis (stored last) is the slowest.

use crate::error::{Error, Result};

/// Legendre polynomials `P_0..=P_n` and their derivatives at `x`.
///
/// Derivatives use `P'_{m+1} = P'_{m-1} + (2m+1) P_m`, which stays finite at
/// the endpoints.
pub fn legendre_table(n: usize, x: f64, p: &mut [f64], dp: &mut [f64]) {
    p[0] = 1.0;
    dp[0] = 0.0;
    if n == 0 {
        return;
    }
    p[1] = x;
    dp[1] = 1.0;
    for m in 1..n {
        let mf = m as f64;
        p[m + 1] = ((2.0 * mf + 1.0) * x * p[m] - mf * p[m - 1]) / (mf + 1.0);
        dp[m + 1] = dp[m - 1] + (2.0 * mf + 1.0) * p[m];
    }
}

/// Values and derivatives of the normalised factors `sqrt(2m+1) P_m(x)` for
/// `m = 0..modes`.
pub fn normalized_legendre(modes: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; modes.max(2)];
    let mut dp = vec![0.0; modes.max(2)];
    legendre_table(modes.max(1) - 1, x, &mut p, &mut dp);
    p.truncate(modes);
    dp.truncate(modes);
    for m in 0..modes {
        let s = (2.0 * m as f64 + 1.0).sqrt();
        p[m] *= s;
        dp[m] *= s;
    }
    (p, dp)
}

/// One-dimensional Gauss-Legendre nodes (ascending) and weights.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::invalid("points_per_axis", "must be at least 1"));
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut p = vec![0.0; n + 1];
    let mut dp = vec![0.0; n + 1];
    let nf = n as f64;
    // Roots come in symmetric pairs; solve for the positive half only.
    for i in 0..n / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            legendre_table(n, z, &mut p, &mut dp);
            let dz = p[n] / dp[n];
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        legendre_table(n, z, &mut p, &mut dp);
        let wi = 2.0 / ((1.0 - z * z) * dp[n] * dp[n]);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        legendre_table(n, 0.0, &mut p, &mut dp);
        x[n / 2] = 0.0;
        w[n / 2] = 2.0 / (dp[n] * dp[n]);
    }
    Ok((x, w))
}

/// Tensor-product Gauss-Legendre rule on `[-1,1]^dim`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points_per_axis: usize,
    pub nodes_1d: Vec<f64>,
    pub weights_1d: Vec<f64>,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * f(self.point(i))).sum()
    }
}

pub fn gauss_rule(points_per_axis: usize, dim: usize) -> Result<QuadratureRule> {
    if dim == 0 {
        return Err(Error::invalid("dim", "must be at least 1"));
    }
    let (x, w) = gauss_legendre(points_per_axis)?;
    let total = points_per_axis.pow(dim as u32);
    let mut points = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut wt = 1.0;
        for _ in 0..dim {
            let i = rem % points_per_axis;
            rem /= points_per_axis;
            points.push(x[i]);
            wt *= w[i];
        }
        weights.push(wt);
    }
    Ok(QuadratureRule {
        dim,
        points_per_axis,
        nodes_1d: x,
        weights_1d: w,
        points,
        weights,
    })
}

/// Orthonormal tensor Legendre basis of per-axis degree `degree` in `dim`
/// dimensions. A space-time basis is simply one with `dim = d + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisSet {
    pub dim: usize,
    pub degree: usize,
}

impl BasisSet {
    pub fn new(dim: usize, degree: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        Ok(BasisSet { dim, degree })
    }

    pub fn modes(&self) -> usize {
        self.degree + 1
    }

    pub fn size(&self) -> usize {
        self.modes().pow(self.dim as u32)
    }

    pub fn multi_index(&self, k: usize) -> Vec<usize> {
        let n = self.modes();
        let mut rem = k;
        (0..self.dim)
            .map(|_| {
                let i = rem % n;
                rem /= n;
                i
            })
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let n = self.modes();
        idx.iter().rev().fold(0, |acc, &i| acc * n + i)
    }

    fn check(&self, k: usize) -> Result<()> {
        if k >= self.size() {
            return Err(Error::IndexOutOfRange {
                index: k,
                size: self.size(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, k: usize, xi: &[f64]) -> Result<f64> {
        self.check(k)?;
        let idx = self.multi_index(k);
        Ok(idx
            .iter()
            .zip(xi)
            .map(|(&m, &x)| normalized_legendre(m + 1, x).0[m])
            .product())
    }

    pub fn gradient(&self, k: usize, xi: &[f64]) -> Result<Vec<f64>> {
        self.check(k)?;
        let idx = self.multi_index(k);
        let tabs: Vec<_> = idx
            .iter()
            .zip(xi)
            .map(|(&m, &x)| {
                let (p, dp) = normalized_legendre(m + 1, x);
                (p[m], dp[m])
            })
            .collect();
        Ok((0..self.dim)
            .map(|a| {
                tabs.iter()
                    .enumerate()
                    .map(|(b, &(v, dv))| if a == b { dv } else { v })
                    .product()
            })
            .collect())
    }

    /// All basis values at `xi`, flat order.
    pub fn eval_all(&self, xi: &[f64]) -> Vec<f64> {
        let n = self.modes();
        let tabs: Vec<Vec<f64>> = xi.iter().map(|&x| normalized_legendre(n, x).0).collect();
        (0..self.size())
            .map(|k| {
                let mut rem = k;
                let mut v = 1.0;
                for t in &tabs {
                    v *= t[rem % n];
                    rem /= n;
                }
                v
            })
            .collect()
    }
}

pub fn eval_basis(basis: &BasisSet, k: usize, xi: &[f64]) -> Result<f64> {
    basis.eval(k, xi)
}

/// `c_k = 2^{-d} sum_q w_q phi_k(xi_q) f(xi_q)`.
pub fn project(f: impl Fn(&[f64]) -> f64, basis: &BasisSet, rule: &QuadratureRule) -> Vec<f64> {
    let mut c = vec![0.0; basis.size()];
    for q in 0..rule.len() {
        let x = rule.point(q);
        let fw = rule.weight(q) * f(x);
        for (ck, phi) in c.iter_mut().zip(basis.eval_all(x)) {
            *ck += fw * phi;
        }
    }
    let scale = 0.5f64.powi(basis.dim as i32);
    c.iter_mut().for_each(|v| *v *= scale);
    c
}

pub fn reconstruct(basis: &BasisSet, coeffs: &[f64], xi: &[f64]) -> f64 {
    basis.eval_all(xi).iter().zip(coeffs).map(|(p, c)| p * c).sum()
}
