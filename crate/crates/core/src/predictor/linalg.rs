//! Dense LU with threshold partial pivoting and a block container for region Jacobians.
//!
//! Region Jacobians are block sparse (only face-adjacent elements couple), so
//! the factorisation tracks the nonzero column extent of every row and skips
//! work that would only add zeros. The arithmetic performed on nonzero
//! entries is the same as for a plain dense elimination.

use crate::error::{Error, Result};

/// Square matrix made of `nb x nb` optional dense blocks of size `bs`.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    pub nb: usize,
    pub bs: usize,
    blocks: Vec<Option<Vec<f64>>>,
}

impl BlockMatrix {
    pub fn new(nb: usize, bs: usize) -> Self {
        BlockMatrix {
            nb,
            bs,
            blocks: vec![None; nb * nb],
        }
    }

    pub fn dim(&self) -> usize {
        self.nb * self.bs
    }

    /// Zero all allocated blocks, keeping their storage.
    pub fn clear(&mut self) {
        for b in self.blocks.iter_mut().flatten() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&[f64]> {
        self.blocks[i * self.nb + j].as_deref()
    }

    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let bs = self.bs;
        self.blocks[i * self.nb + j].get_or_insert_with(|| vec![0.0; bs * bs])
    }

    /// Mutable views of all diagonal blocks (allocating them if needed).
    pub fn diagonal_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let bs = self.bs;
        self.blocks
            .iter_mut()
            .step_by(self.nb + 1)
            .map(|b| b.get_or_insert_with(|| vec![0.0; bs * bs]).as_mut_slice())
            .collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (bi, ri) = (r / self.bs, r % self.bs);
        let (bj, cj) = (c / self.bs, c % self.bs);
        self.block(bi, bj).map_or(0.0, |b| b[ri * self.bs + cj])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let bs = self.bs;
        let mut y = vec![0.0; self.dim()];
        for i in 0..self.nb {
            for j in 0..self.nb {
                if let Some(b) = self.block(i, j) {
                    for r in 0..bs {
                        let row = &b[r * bs..(r + 1) * bs];
                        y[i * bs + r] += row.iter().zip(&x[j * bs..(j + 1) * bs]).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let bs = self.bs;
        let mut a = vec![0.0; n * n];
        for i in 0..self.nb {
            for j in 0..self.nb {
                if let Some(b) = self.block(i, j) {
                    for r in 0..bs {
                        a[(i * bs + r) * n + j * bs..(i * bs + r) * n + (j + 1) * bs].copy_from_slice(&b[r * bs..(r + 1) * bs]);
                    }
                }
            }
        }
        a
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flatten().flat_map(|b| b.iter()).fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest entrywise difference to another matrix of the same shape.
    pub fn max_abs_diff(&self, other: &BlockMatrix) -> f64 {
        let n = self.dim();
        let mut m = 0.0f64;
        for i in 0..self.nb {
            for j in 0..self.nb {
                match (self.block(i, j), other.block(i, j)) {
                    (None, None) => {}
                    (Some(a), Some(b)) => {
                        m = a.iter().zip(b).fold(m, |m, (x, y)| m.max((x - y).abs()));
                    }
                    (Some(a), None) | (None, Some(a)) => {
                        m = a.iter().fold(m, |m, x| m.max(x.abs()));
                    }
                }
            }
        }
        let _ = n;
        m
    }

    pub fn allocated_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| b.is_some()).count()
    }
}

/// Smallest accepted pivot relative to the largest candidate in its column.
pub const PIVOT_THRESHOLD: f64 = 0.01;

/// `P A = L U` of a dense row-major matrix.
#[derive(Debug, Clone)]
pub struct DenseLu {
    pub n: usize,
    lu: Vec<f64>,
    /// `perm[i]` = original row now at position `i`.
    perm: Vec<usize>,
    start: Vec<usize>,
    end: Vec<usize>,
}

impl DenseLu {
    pub fn factor(mut a: Vec<f64>, n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut start = vec![n; n];
        let mut end = vec![0; n];
        for r in 0..n {
            let row = &a[r * n..(r + 1) * n];
            if let Some(s) = row.iter().position(|&v| v != 0.0) {
                start[r] = s;
                end[r] = row.iter().rposition(|&v| v != 0.0).unwrap() + 1;
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for c in 0..n {
            let mut best = 0.0f64;
            for r in c..n {
                if start[r] <= c {
                    best = best.max(a[r * n + c].abs());
                }
            }
            if best == 0.0 {
                return Err(Error::Singular(c));
            }
            // threshold pivoting: among acceptable pivots take the one whose
            // row reaches least far right, which keeps fill inside the band
            let mut p = n;
            for r in c..n {
                if start[r] <= c && a[r * n + c].abs() >= PIVOT_THRESHOLD * best {
                    if p == n || end[r] < end[p] || (end[r] == end[p] && a[r * n + c].abs() > a[p * n + c].abs()) {
                        p = r;
                    }
                }
            }
            if p != c {
                for k in 0..n {
                    a.swap(c * n + k, p * n + k);
                }
                perm.swap(c, p);
                start.swap(c, p);
                end.swap(c, p);
            }
            let pivot = a[c * n + c];
            let pend = end[c];
            let (upper, lower) = a.split_at_mut((c + 1) * n);
            let prow = &upper[c * n + c + 1..c * n + pend];
            for r in c + 1..n {
                if start[r] > c {
                    continue;
                }
                let row = &mut lower[(r - c - 1) * n..(r - c) * n];
                let v = row[c];
                if v == 0.0 {
                    continue;
                }
                let m = v / pivot;
                row[c] = m;
                for (x, y) in row[c + 1..pend].iter_mut().zip(prow) {
                    *x -= m * y;
                }
                if pend > end[r] {
                    end[r] = pend;
                }
            }
        }
        Ok(DenseLu {
            n,
            lu: a,
            perm,
            start,
            end,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let row = &self.lu[r * n..(r + 1) * n];
            let mut s = y[r];
            for c in self.start[r].min(r)..r {
                s -= row[c] * y[c];
            }
            y[r] = s;
        }
        for r in (0..n).rev() {
            let row = &self.lu[r * n..(r + 1) * n];
            let mut s = y[r];
            for c in r + 1..self.end[r].max(r + 1) {
                s -= row[c] * y[c];
            }
            y[r] = s / row[r];
        }
        y
    }

    /// Solve `A^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut u = b.to_vec();
        // U^T u' = b, column-oriented over rows of U
        for r in 0..n {
            let row = &self.lu[r * n..(r + 1) * n];
            let v = u[r] / row[r];
            u[r] = v;
            if v != 0.0 {
                for c in r + 1..self.end[r].max(r + 1) {
                    u[c] -= row[c] * v;
                }
            }
        }
        // L^T v = u'
        for r in (0..n).rev() {
            let row = &self.lu[r * n..(r + 1) * n];
            let v = u[r];
            if v != 0.0 {
                for c in self.start[r].min(r)..r {
                    u[c] -= row[c] * v;
                }
            }
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = u[i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matvec(a: &[f64], x: &[f64], n: usize) -> Vec<f64> {
        (0..n).map(|r| (0..n).map(|c| a[r * n + c] * x[c]).sum()).collect()
    }

    #[test]
    fn solves_random_system_and_transpose() {
        let n = 7;
        let a: Vec<f64> = (0..n * n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0 + if i % (n + 1) == 0 { 0.5 } else { 0.0 }).collect();
        let x: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let b = matvec(&a, &x, n);
        let lu = DenseLu::factor(a.clone(), n).unwrap();
        let got = lu.solve(&b);
        for i in 0..n {
            assert!((got[i] - x[i]).abs() < 1e-10);
        }
        let mut at = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                at[c * n + r] = a[r * n + c];
            }
        }
        let bt = matvec(&at, &x, n);
        let got = lu.solve_transpose(&bt);
        for i in 0..n {
            assert!((got[i] - x[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = vec![1.0, 2.0, 2.0, 4.0];
        assert!(matches!(DenseLu::factor(a, 2), Err(Error::Singular(_))));
    }

    #[test]
    fn sparse_rows_handled() {
        // lower block triangular with a zero leading entry forcing a swap
        let a = vec![0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 4.0];
        let lu = DenseLu::factor(a.clone(), 3).unwrap();
        let x = lu.solve(&[1.0, 2.0, 3.0]);
        let y = matvec(&a, &x, 3);
        for (u, v) in y.iter().zip([1.0, 2.0, 3.0]) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
