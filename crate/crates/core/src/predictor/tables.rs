//! Exact space-time integral tables for the regional prediction system.
//!
//! All entries are products of one-dimensional Legendre integrals, which are
//! computed once with a rule that integrates them exactly. Triple products
//! are kept as sparse `(alpha, beta)` lists: for each test/trial pair `(k, l)`
//! the indices `p` with a nonzero integral and the integral values.

use crate::basis::{gauss_legendre, normalized_legendre};
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"RIDGQQF\0";
pub const CACHE_VERSION: u32 = 1;

/// Sparse triple-product tensor indexed by `(k, l)` rows, optionally split
/// into several segments per row (one per spatial axis for the volume
/// tensor). Entry values for segment `s` of row `r` live in
/// `beta[ptr[r*segments+s]..ptr[r*segments+s+1]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleList {
    pub rows: usize,
    pub segments: usize,
    pub ptr: Vec<usize>,
    pub alpha: Vec<u32>,
    pub beta: Vec<f64>,
}

impl TripleList {
    fn empty() -> Self {
        TripleList {
            rows: 0,
            segments: 1,
            ptr: vec![0],
            alpha: Vec::new(),
            beta: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.beta.len()
    }

    /// `(alpha, beta)` of one row segment.
    pub fn entries(&self, row: usize, segment: usize) -> (&[u32], &[f64]) {
        let i = row * self.segments + segment;
        let (a, b) = (self.ptr[i], self.ptr[i + 1]);
        (&self.alpha[a..b], &self.beta[a..b])
    }

    /// Whole row across all segments.
    pub fn row(&self, row: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.ptr[row * self.segments], self.ptr[(row + 1) * self.segments]);
        (&self.alpha[a..b], &self.beta[a..b])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QqfTables {
    pub degree: usize,
    pub dim: usize,
    pub theta: usize,
    pub theta_t: usize,
    /// `t1[i][j][m] = 1/2 int chi_i chi_j chi_m`.
    pub t1: Vec<f64>,
    /// `d1[i][j][m] = 1/2 int chi_i' chi_j chi_m`.
    pub d1: Vec<f64>,
    /// Endpoint mass at `tau = +1`, `theta_t x theta_t`.
    pub mass_plus: Vec<f64>,
    /// `int int psi_{k,tau} psi_l`, `theta_t x theta_t`.
    pub time_stiffness: Vec<f64>,
    /// Causal coupling at `tau = -1`, `theta_t x theta`.
    pub causal: Vec<f64>,
    /// Volume tensors `B_a[k,l,p] = 2^-d int int psi_{k,xi_a} psi_p psi_l`;
    /// segment `a` of row `k*theta_t + l` holds axis `a`. Column indices are
    /// offset by `a * theta_t` so the whole row can be contracted against
    /// the stacked projected Jacobian.
    pub volume: TripleList,
    /// Face tensor over the `d`-dimensional face-times-time manifold:
    /// `G[k~,l~,p~] = 2^-d int psi~_k psi~_l psi~_p`. The normal-direction
    /// factors `chi(+-1)` are applied at assembly, which distinguishes the
    /// one-sided (own trace) and two-sided (neighbour trace) couplings.
    pub face: TripleList,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn idx3(n: usize, i: usize, j: usize, m: usize) -> usize {
    (i * n + j) * n + m
}

fn unflatten(mut k: usize, n: usize, dims: usize, out: &mut [usize]) {
    for o in out.iter_mut().take(dims) {
        *o = k % n;
        k /= n;
    }
}

/// One-dimensional triple products with an exact rule.
pub fn one_d_triples(modes: usize) -> (Vec<f64>, Vec<f64>) {
    let n = modes;
    let (x, w) = gauss_legendre(2 * n).expect("positive");
    let tab: Vec<_> = x.iter().map(|&xi| normalized_legendre(n, xi)).collect();
    let mut t1 = vec![0.0; n * n * n];
    let mut d1 = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for m in 0..n {
                let mut s = 0.0;
                let mut sd = 0.0;
                for q in 0..x.len() {
                    let (v, dv) = &tab[q];
                    s += w[q] * v[i] * v[j] * v[m];
                    sd += w[q] * dv[i] * v[j] * v[m];
                }
                // Selection rules: the product vanishes unless the degrees
                // satisfy the triangle inequality with even sum; for the
                // derivative, chi_i' spans degrees below i of matching parity.
                t1[idx3(n, i, j, m)] = if (i + j + m) % 2 == 0 && i <= j + m && j <= i + m && m <= i + j { 0.5 * s } else { 0.0 };
                d1[idx3(n, i, j, m)] = if (i + j + m) % 2 == 1 && i >= 1 && j.abs_diff(m) < i { 0.5 * sd } else { 0.0 };
            }
        }
    }
    (t1, d1)
}

pub fn build_tables(degree: usize, dim: usize) -> Result<QqfTables> {
    QqfTables::build(degree, dim)
}

impl QqfTables {
    pub fn build(degree: usize, dim: usize) -> Result<Self> {
        let mut t = Self::dense_only(degree, dim)?;
        let n = degree + 1;
        let (t1, d1) = (&t.t1, &t.d1);
        t.volume = triple_list(n, dim + 1, dim, 2.0, |a, b, ki, li| {
            let tab = if a == b { d1 } else { t1 };
            (0..n).map(|p| (p, tab[idx3(n, ki, li, p)])).filter(|&(_, v)| v != 0.0).collect()
        });
        t.face = triple_list(n, dim, 1, 1.0, |_, _, ki, li| {
            (0..n).map(|p| (p, t1[idx3(n, ki, li, p)])).filter(|&(_, v)| v != 0.0).collect()
        });
        Ok(t)
    }

    fn dense_only(degree: usize, dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::invalid("dim", "must be 1, 2 or 3"));
        }
        let n = degree + 1;
        let theta = n.pow(dim as u32);
        let theta_t = theta * n;
        let (t1, d1) = one_d_triples(n);
        let lower = normalized_legendre(n, -1.0).0;
        let upper = normalized_legendre(n, 1.0).0;

        // time integrals: int chi_i' chi_j
        let (x, w) = gauss_legendre(n + 1)?;
        let tab: Vec<_> = x.iter().map(|&xi| normalized_legendre(n, xi)).collect();
        let kt1 = |i: usize, j: usize| -> f64 { (0..x.len()).map(|q| w[q] * tab[q].1[i] * tab[q].0[j]).sum() };

        let mut mass_plus = vec![0.0; theta_t * theta_t];
        let mut time_stiffness = vec![0.0; theta_t * theta_t];
        let mut causal = vec![0.0; theta_t * theta];
        for k in 0..theta_t {
            let (ks, kt) = (k % theta, k / theta);
            for lt in 0..n {
                let l = ks + lt * theta;
                mass_plus[k * theta_t + l] = upper[kt] * upper[lt];
                time_stiffness[k * theta_t + l] = kt1(kt, lt);
            }
            causal[k * theta + ks] = lower[kt];
        }

        Ok(QqfTables {
            degree,
            dim,
            theta,
            theta_t,
            t1,
            d1,
            mass_plus,
            time_stiffness,
            causal,
            volume: TripleList::empty(),
            face: TripleList::empty(),
            lower,
            upper,
        })
    }

    pub fn modes(&self) -> usize {
        self.degree + 1
    }

    /// Dense `theta_t x theta_t` time operator `M+ - K`.
    pub fn time_operator(&self) -> Vec<f64> {
        self.mass_plus.iter().zip(&self.time_stiffness).map(|(m, k)| m - k).collect()
    }

    pub fn volume_entries(&self, axis: usize, k: usize, l: usize) -> (&[u32], &[f64]) {
        self.volume.entries(k * self.theta_t + l, axis)
    }

    // ---- binary cache ------------------------------------------------------

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [CACHE_VERSION, self.degree as u32, self.dim as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for list in [&self.volume, &self.face] {
            w.write_all(&(list.rows as u64).to_le_bytes())?;
            w.write_all(&(list.segments as u64).to_le_bytes())?;
            w.write_all(&(list.ptr.len() as u64).to_le_bytes())?;
            for &p in &list.ptr {
                w.write_all(&(p as u64).to_le_bytes())?;
            }
            w.write_all(&(list.alpha.len() as u64).to_le_bytes())?;
            for &a in &list.alpha {
                w.write_all(&a.to_le_bytes())?;
            }
            for &b in &list.beta {
                w.write_all(&b.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Read a cache written by [`write_to`](Self::write_to). The small dense
    /// tables are rebuilt; only the sparse tensors are stored.
    pub fn read_from(r: &mut impl Read, degree: usize, dim: usize) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Io("not a table cache file".into()));
        }
        let mut u32s = [0u32; 3];
        for v in u32s.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        if u32s[0] != CACHE_VERSION {
            return Err(Error::Io(format!("cache version {} != {}", u32s[0], CACHE_VERSION)));
        }
        if (u32s[1] as usize, u32s[2] as usize) != (degree, dim) {
            return Err(Error::Io(format!(
                "cache holds (Mdeg={}, d={}), wanted ({degree}, {dim})",
                u32s[1], u32s[2]
            )));
        }
        let mut read_list = || -> Result<TripleList> {
            let rows = read_u64(r)? as usize;
            let segments = read_u64(r)? as usize;
            let np = read_u64(r)? as usize;
            let ptr = (0..np).map(|_| read_u64(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let nnz = read_u64(r)? as usize;
            let mut alpha = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                alpha.push(u32::from_le_bytes(b));
            }
            let mut beta = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                beta.push(f64::from_bits(read_u64(r)?));
            }
            Ok(TripleList {
                rows,
                segments,
                ptr,
                alpha,
                beta,
            })
        };
        let volume = read_list()?;
        let face = read_list()?;
        let mut t = QqfTables::dense_only(degree, dim)?;
        t.volume = volume;
        t.face = face;
        Ok(t)
    }
}

/// Enumerate nonzero triple products of tensor-product functions in `dims`
/// dimensions. `factors(segment, axis, k_b, l_b)` lists the `(p_b, value)`
/// pairs with nonzero one-dimensional factor; `segments` > 1 stacks one
/// tensor per segment with column offset `segment * size`.
fn triple_list(
    n: usize,
    dims: usize,
    segments: usize,
    base: f64,
    factors: impl Fn(usize, usize, usize, usize) -> Vec<(usize, f64)>,
) -> TripleList {
    let size = n.pow(dims as u32);
    let rows = size * size;
    let mut ptr = Vec::with_capacity(rows * segments + 1);
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    let mut ki = vec![0; dims];
    let mut li = vec![0; dims];
    ptr.push(0);
    for k in 0..size {
        unflatten(k, n, dims, &mut ki);
        for l in 0..size {
            unflatten(l, n, dims, &mut li);
            for s in 0..segments {
                let lists: Vec<Vec<(usize, f64)>> = (0..dims).map(|b| factors(s, b, ki[b], li[b])).collect();
                if lists.iter().all(|l| !l.is_empty()) {
                    // Cartesian product, first axis fastest, so p ascends.
                    let mut pos = vec![0usize; dims];
                    'outer: loop {
                        let mut p = 0;
                        let mut v = base;
                        for b in (0..dims).rev() {
                            let (pb, f) = lists[b][pos[b]];
                            p = p * n + pb;
                            v *= f;
                        }
                        alpha.push((s * size + p) as u32);
                        beta.push(v);
                        for b in 0..dims {
                            pos[b] += 1;
                            if pos[b] < lists[b].len() {
                                continue 'outer;
                            }
                            pos[b] = 0;
                        }
                        break;
                    }
                }
                ptr.push(beta.len());
            }
        }
    }
    TripleList {
        rows,
        segments,
        ptr,
        alpha,
        beta,
    }
}

/// Load tables from `path` if it holds a matching cache, else build them and
/// try to write the cache.
pub fn cached_tables(path: &Path, degree: usize, dim: usize) -> Result<QqfTables> {
    if let Ok(f) = std::fs::File::open(path) {
        let mut r = std::io::BufReader::new(f);
        if let Ok(t) = QqfTables::read_from(&mut r, degree, dim) {
            return Ok(t);
        }
    }
    let t = QqfTables::build(degree, dim)?;
    if let Some(dir) = path.parent() {
        let _ = std::fs::create_dir_all(dir);
    }
    if let Ok(f) = std::fs::File::create(path) {
        let mut w = std::io::BufWriter::new(f);
        t.write_to(&mut w)?;
        w.flush()?;
    }
    Ok(t)
}
