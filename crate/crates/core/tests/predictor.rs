//! Region residual, Jacobian backends and Newton checked against
//! brute-force evaluations built only from point values of the basis.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ridg_core::basis::{gauss_rule, BasisSet};
use ridg_core::law::{rusanov, ConservationLaw, LawKind};
use ridg_core::mesh::{stencil_offsets, CartesianMesh};
use ridg_core::predictor::newton::{cell_pieces, gather_region};
use ridg_core::predictor::tables::one_d_triples;
use ridg_core::predictor::{build_tables, predict_all, Backend, NewtonConfig, Predictor, QqfTables, RegionWork};
use ridg_core::Error;

fn predictor(kind: LawKind, m: usize, h: f64, backend: Backend) -> Predictor {
    let law = ConservationLaw::new(kind);
    let d = law.dim;
    Predictor::build(law, m, &vec![h; d], NewtonConfig::default(), backend).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (rng.gen::<f64>() - 0.5)).collect()
}

/// State of moderate size with decaying modes, so Burgers stays well posed.
fn smooth_state(rng: &mut ChaCha8Rng, nb: usize, size: usize, m: usize, dims: usize) -> Vec<f64> {
    let n = m + 1;
    let mut v = Vec::with_capacity(nb * size);
    for _ in 0..nb {
        for k in 0..size {
            let mut deg = 0;
            let mut r = k;
            for _ in 0..dims {
                deg += r % n;
                r /= n;
            }
            let base = if k == 0 { 0.6 } else { 0.0 };
            v.push(base + 0.3 * (rng.gen::<f64>() - 0.5) / (1 + deg * deg) as f64);
        }
    }
    v
}

fn eval(basis: &BasisSet, c: &[f64], x: &[f64]) -> f64 {
    basis.eval_all(x).iter().zip(c).map(|(p, c)| p * c).sum()
}

/// Weak-form region residual evaluated point by point.
fn oracle_residual(law: &ConservationLaw, m: usize, w: &[f64], q: &[f64], nu: &[f64], lam: &[f64], faces: &[(usize, usize, usize)]) -> Vec<f64> {
    let d = law.dim;
    let st = BasisSet::new(d + 1, m).unwrap();
    let sp = BasisSet::new(d, m).unwrap();
    let (tt, th) = (st.size(), sp.size());
    let offs = stencil_offsets(d);
    let nb = offs.len();
    let find = |o: &[isize]| offs.iter().position(|x| x == o);
    let vol = gauss_rule(2 * m + 2, d + 1).unwrap();
    let face_rule = gauss_rule(2 * m + 2, d).unwrap();
    let sp_rule = gauss_rule(2 * m + 2, d).unwrap();
    let norm = 0.5f64.powi(d as i32);
    let mut r = vec![0.0; nb * tt];
    for j in 0..nb {
        let wj = &w[j * tt..(j + 1) * tt];
        let qj = &q[j * th..(j + 1) * th];
        for k in 0..tt {
            let mut acc = 0.0;
            // time: [psi W]_{t=1} - int d_t psi W - [psi Q]_{t=-1}
            for i in 0..sp_rule.len() {
                let x = sp_rule.point(i);
                let mut top = x.to_vec();
                top.push(1.0);
                let mut bot = x.to_vec();
                bot.push(-1.0);
                acc += sp_rule.weight(i) * (st.eval(k, &top).unwrap() * eval(&st, wj, &top) - st.eval(k, &bot).unwrap() * eval(&sp, qj, x));
            }
            for i in 0..vol.len() {
                let x = vol.point(i);
                let g = st.gradient(k, x).unwrap();
                let wv = eval(&st, wj, x);
                let mut v = -g[d] * wv;
                for a in 0..d {
                    v -= nu[a] * g[a] * law.flux_axis(wv, a);
                }
                acc += vol.weight(i) * v;
            }
            for a in 0..d {
                for (sign, s) in [(-1.0, -1isize), (1.0, 1)] {
                    let mut o = offs[j].clone();
                    o[a] += s;
                    let nbr = find(&o);
                    let lam_f = nbr.map(|n| {
                        let (lo, hi) = if s > 0 { (j, n) } else { (n, j) };
                        lam[faces.iter().position(|f| *f == (lo, hi, a)).unwrap()]
                    });
                    for i in 0..face_rule.len() {
                        let fp = face_rule.point(i);
                        let mut x: Vec<f64> = fp[..a].to_vec();
                        x.push(sign);
                        x.extend_from_slice(&fp[a..]);
                        let wi = eval(&st, wj, &x);
                        let g = match nbr {
                            Some(n) => {
                                x[a] = -sign;
                                let we = eval(&st, &w[n * tt..(n + 1) * tt], &x);
                                x[a] = sign;
                                rusanov(law, we, wi, a, sign, lam_f.unwrap())
                            }
                            None => law.flux_axis(wi, a) * sign,
                        };
                        acc += face_rule.weight(i) * nu[a] * st.eval(k, &x).unwrap() * g;
                    }
                }
            }
            r[j * tt + k] = norm * acc;
        }
    }
    r
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn residual_matches_weak_form_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cases = [
        (LawKind::Advection1d, 0),
        (LawKind::Advection1d, 1),
        (LawKind::Advection1d, 3),
        (LawKind::Advection2d, 1),
        (LawKind::Advection2d, 2),
        (LawKind::Burgers2d, 1),
        (LawKind::Burgers2d, 2),
        (LawKind::Advection3d, 1),
    ];
    for (kind, m) in cases {
        let p = predictor(kind, m, 0.1, Backend::Qqf);
        let ops = &p.ops;
        let d = ops.kern.dim;
        let w = smooth_state(&mut rng, ops.nb(), ops.kern.theta_t, m, d + 1);
        let q = smooth_state(&mut rng, ops.nb(), ops.kern.theta, m, d);
        let dt = 0.04;
        let mut rw = RegionWork::default();
        let lam = ops.face_lambdas(&w, &mut rw.wk);
        let got = ops.residual(&w, &q, dt, &lam, &mut rw);
        let want = oracle_residual(&ops.kern.law, m, &w, &q, &ops.nu(dt), &lam, &ops.topo.faces);
        let err = max_diff(&got, &want);
        assert!(err < 1e-12, "{kind:?} M={m}: residual differs by {err}");
    }
}

#[test]
fn face_lambda_is_one_for_advection_and_bounds_burgers_traces() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = predictor(LawKind::Advection2d, 2, 0.1, Backend::Qqf);
    let w = random_vec(&mut rng, p.ops.unknowns(), 2.0);
    let lam = p.ops.face_lambdas(&w, &mut RegionWork::default().wk);
    assert!(lam.iter().all(|&l| l == 1.0));
    let p = predictor(LawKind::Burgers2d, 2, 0.1, Backend::Qqf);
    let w = smooth_state(&mut rng, p.ops.nb(), p.ops.kern.theta_t, 2, 3);
    let lam = p.ops.face_lambdas(&w, &mut RegionWork::default().wk);
    let st = BasisSet::new(3, 2).unwrap();
    let tt = st.size();
    let rule = gauss_rule(p.ops.kern.ops.points, 2).unwrap();
    for (f, &(lo, hi, a)) in p.ops.topo.faces.iter().enumerate() {
        // largest |w| over both traces at the face quadrature points
        let mut want = 0.0f64;
        for i in 0..rule.len() {
            let fp = rule.point(i);
            let mut x: Vec<f64> = fp[..a].to_vec();
            x.push(1.0);
            x.extend_from_slice(&fp[a..]);
            want = want.max(eval(&st, &w[lo * tt..(lo + 1) * tt], &x).abs());
            x[a] = -1.0;
            want = want.max(eval(&st, &w[hi * tt..(hi + 1) * tt], &x).abs());
        }
        assert!((lam[f] - want).abs() < 1e-14, "face {f}: {} vs {want}", lam[f]);
    }
}

#[test]
fn backends_assemble_the_same_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (kind, m) in [(LawKind::Advection1d, 2), (LawKind::Advection2d, 1), (LawKind::Burgers2d, 1), (LawKind::Burgers2d, 2), (LawKind::Advection3d, 1)] {
        let p = predictor(kind, m, 0.05, Backend::Qqf);
        let ops = &p.ops;
        let d = ops.kern.dim;
        let w = smooth_state(&mut rng, ops.nb(), ops.kern.theta_t, m, d + 1);
        let q = smooth_state(&mut rng, ops.nb(), ops.kern.theta, m, d);
        let dt = 0.02;
        let mut rw = RegionWork::default();
        let lam = ops.face_lambdas(&w, &mut rw.wk);
        let mut jq = ops.new_jacobian();
        let mut jd = ops.new_jacobian();
        let mut jp = ops.new_jacobian();
        ops.jacobian(Backend::Qqf, &w, &q, dt, &lam, &mut jq, &mut rw);
        ops.jacobian(Backend::Quadrature, &w, &q, dt, &lam, &mut jd, &mut rw);
        ops.jacobian(Backend::Perturbation, &w, &q, dt, &lam, &mut jp, &mut rw);
        let scale = jq.max_abs();
        assert!(jq.max_abs_diff(&jd) < 1e-12 * scale, "{kind:?} M={m}: qqf vs quadrature {}", jq.max_abs_diff(&jd));
        assert!(jq.max_abs_diff(&jp) < 1e-6 * scale, "{kind:?} M={m}: qqf vs perturbation {}", jq.max_abs_diff(&jp));
        // only face-adjacent elements couple
        assert_eq!(jq.allocated_blocks(), ops.nb() + 2 * ops.topo.faces.len());
    }
}

#[test]
fn jacobian_is_the_derivative_of_the_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = predictor(LawKind::Burgers2d, 2, 0.1, Backend::Qqf);
    let ops = &p.ops;
    let w = smooth_state(&mut rng, ops.nb(), ops.kern.theta_t, 2, 3);
    let q = smooth_state(&mut rng, ops.nb(), ops.kern.theta, 2, 2);
    let v = random_vec(&mut rng, ops.unknowns(), 1.0);
    let dt = 0.05;
    let mut rw = RegionWork::default();
    let lam = ops.face_lambdas(&w, &mut rw.wk);
    let mut jac = ops.new_jacobian();
    ops.jacobian(Backend::Qqf, &w, &q, dt, &lam, &mut jac, &mut rw);
    let jv = jac.mul_vec(&v);
    let mut prev = f64::INFINITY;
    for eps in [1e-2, 1e-3] {
        let wp: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
        let wm: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
        let rp = ops.residual(&wp, &q, dt, &lam, &mut rw);
        let rm = ops.residual(&wm, &q, dt, &lam, &mut rw);
        let fd: Vec<f64> = rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let err = max_diff(&fd, &jv);
        // quadratic flux: the central difference is exact up to rounding
        assert!(err < 1e-9, "eps {eps}: {err}");
        prev = prev.min(err);
    }
    assert!(prev.is_finite());
}

#[test]
fn table_entries_match_exact_polynomial_integrals() {
    // Legendre polynomials as monomial coefficient vectors
    fn legendre_coeffs(n: usize) -> Vec<Vec<f64>> {
        let mut p = vec![vec![1.0], vec![0.0, 1.0]];
        for k in 1..n {
            let mut next = vec![0.0; k + 2];
            for (i, c) in p[k].iter().enumerate() {
                next[i + 1] += (2 * k + 1) as f64 * c / (k + 1) as f64;
            }
            for (i, c) in p[k - 1].iter().enumerate() {
                next[i] -= k as f64 * c / (k + 1) as f64;
            }
            p.push(next);
        }
        p.truncate(n.max(1));
        p.iter()
            .enumerate()
            .map(|(m, c)| c.iter().map(|v| v * ((2 * m + 1) as f64).sqrt()).collect())
            .collect()
    }
    fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }
    fn integral(c: &[f64]) -> f64 {
        c.iter().enumerate().map(|(k, v)| if k % 2 == 0 { 2.0 * v / (k + 1) as f64 } else { 0.0 }).sum()
    }
    fn deriv(c: &[f64]) -> Vec<f64> {
        if c.len() == 1 {
            return vec![0.0];
        }
        c.iter().enumerate().skip(1).map(|(k, v)| k as f64 * v).collect()
    }
    for n in 1..=5 {
        let chi = legendre_coeffs(n);
        let (t1, d1) = one_d_triples(n);
        for i in 0..n {
            for j in 0..n {
                for m in 0..n {
                    let t = 0.5 * integral(&mul(&mul(&chi[i], &chi[j]), &chi[m]));
                    let dd = 0.5 * integral(&mul(&mul(&deriv(&chi[i]), &chi[j]), &chi[m]));
                    let idx = (i * n + j) * n + m;
                    assert!((t1[idx] - t).abs() < 1e-13, "t1 {i}{j}{m}");
                    assert!((d1[idx] - dd).abs() < 1e-13, "d1 {i}{j}{m}");
                }
            }
        }
    }
}

#[test]
fn time_operator_maps_constants_to_the_causal_term() {
    for d in 1..=3 {
        let t = build_tables(2, d).unwrap();
        let a = t.time_operator();
        let tt = t.theta_t;
        for k in 0..tt {
            for s in 0..t.theta {
                // constant-in-time column: A[k, s] = chi_kt(-1) delta
                assert!((a[k * tt + s] - t.causal[k * t.theta + s]).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn table_cache_round_trips_and_checks_its_key() {
    let t = build_tables(2, 2).unwrap();
    let mut buf = Vec::new();
    t.write_to(&mut buf).unwrap();
    let back = QqfTables::read_from(&mut buf.as_slice(), 2, 2).unwrap();
    assert_eq!(t, back);
    assert!(QqfTables::read_from(&mut buf.as_slice(), 3, 2).is_err());
    assert!(QqfTables::read_from(&mut &buf[..buf.len() / 2], 2, 2).is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.bin");
    let a = ridg_core::predictor::tables::cached_tables(&path, 1, 3).unwrap();
    assert!(path.exists());
    let b = ridg_core::predictor::tables::cached_tables(&path, 1, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn constant_state_converges_in_one_iteration() {
    for kind in [LawKind::Advection2d, LawKind::Burgers2d, LawKind::Advection1d] {
        let mut p = predictor(kind, 2, 0.1, Backend::Qqf);
        p.cfg.linear_fast_path = false;
        let th = p.ops.kern.theta;
        let mut q = vec![0.0; p.ops.nb() * th];
        for j in 0..p.ops.nb() {
            q[j * th] = 0.7;
        }
        let sol = p.solve_region(&q, 0.03, &mut RegionWork::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.w[0], 0.7);
        assert!(sol.w[1..].iter().all(|&v| v.abs() < 1e-14));
    }
}

#[test]
fn linear_fast_path_equals_newton() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for (kind, m, n) in [(LawKind::Advection1d, 3, 6), (LawKind::Advection2d, 2, 4), (LawKind::Advection3d, 1, 3)] {
        let law = ConservationLaw::new(kind);
        let d = law.dim;
        let mesh = CartesianMesh::unit(d, n).unwrap();
        let fast = Predictor::build(law, m, &mesh.h, NewtonConfig::default(), Backend::Qqf).unwrap();
        let slow_cfg = NewtonConfig {
            linear_fast_path: false,
            ..NewtonConfig::default()
        };
        let slow = Predictor::build(law, m, &mesh.h, slow_cfg, Backend::Qqf).unwrap();
        let th = fast.ops.kern.theta;
        let q = random_vec(&mut rng, mesh.num_cells() * th, 1.0);
        let dt = 0.4 * mesh.min_h();
        let (wf, sf) = predict_all(&fast, &q, &mesh, dt, None).unwrap();
        let (ws, ss) = predict_all(&slow, &q, &mesh, dt, None).unwrap();
        let err = max_diff(&wf, &ws);
        assert!(err < 1e-11, "{kind:?}: {err}");
        // a linear system needs exactly one Newton step
        assert_eq!(ss.max_iterations, 1);
        assert_eq!(sf.regions, mesh.num_cells());
    }
}

#[test]
fn predicted_region_solves_the_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mesh = CartesianMesh::unit(2, 4).unwrap();
    let p = Predictor::build(ConservationLaw::new(LawKind::Burgers2d), 2, &mesh.h, NewtonConfig::default(), Backend::Qqf).unwrap();
    let th = p.ops.kern.theta;
    let q = smooth_state(&mut rng, mesh.num_cells(), th, 2, 2);
    let qr = gather_region(&mesh, &q, th, 5);
    let mut rw = RegionWork::default();
    let sol = p.solve_region(&qr, 0.02, &mut rw).unwrap();
    let r = p.ops.residual_at(&sol.full, &qr, 0.02, &mut rw);
    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-11 && sol.residual < 1e-11);
    assert!(sol.iterations >= 2 && sol.iterations <= 8, "{}", sol.iterations);
}

#[test]
fn non_convergence_reports_the_element() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mesh = CartesianMesh::unit(2, 3).unwrap();
    let cfg = NewtonConfig {
        max_iterations: 1,
        ..NewtonConfig::default()
    };
    let p = Predictor::build(ConservationLaw::new(LawKind::Burgers2d), 1, &mesh.h, cfg, Backend::Qqf).unwrap();
    let q = smooth_state(&mut rng, mesh.num_cells(), p.ops.kern.theta, 1, 2);
    match predict_all(&p, &q, &mesh, 0.05, Some(&[4, 0])) {
        Err(Error::NonConvergence { element, iterations, iterate, .. }) => {
            assert_eq!(element, Some(4));
            assert_eq!(iterations, 1);
            assert_eq!(iterate.len(), p.ops.unknowns());
        }
        other => panic!("expected non-convergence, got {other:?}"),
    }
}

#[test]
fn invalid_newton_settings_are_rejected() {
    let bad = NewtonConfig {
        tolerance: 0.0,
        ..NewtonConfig::default()
    };
    assert!(Predictor::build(ConservationLaw::new(LawKind::Advection1d), 1, &[0.1], bad, Backend::Qqf).is_err());
    let bad = NewtonConfig {
        max_iterations: 0,
        ..NewtonConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(predict_all(&predictor(LawKind::Advection1d, 1, 0.5, Backend::Qqf), &[0.0; 4], &CartesianMesh::unit(1, 2).unwrap(), 0.1, None).is_err());
}

#[test]
fn pieces_reproduce_the_spatial_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mesh = CartesianMesh::unit(2, 3).unwrap();
    let p = predictor(LawKind::Advection2d, 2, mesh.h[0], Backend::Qqf);
    let th = p.ops.kern.theta;
    let q = random_vec(&mut rng, mesh.num_cells() * th, 1.0);
    let c = 4;
    let nbrs: Vec<&[f64]> = (0..2)
        .flat_map(|a| [false, true].map(|u| mesh.face_neighbor(c, a, u)))
        .map(|n| &q[n * th..(n + 1) * th])
        .collect();
    let mut rw = RegionWork::default();
    let mut pieces = Vec::new();
    cell_pieces(&p.ops, &q[c * th..(c + 1) * th], &nbrs, &mut pieces, &mut rw);
    let mut rhs = Vec::new();
    p.ops.kern.rkdg_rhs(&q[c * th..(c + 1) * th], &nbrs, &mut rhs, &mut rw.wk);
    for k in 0..th {
        let sum: f64 = (0..5).map(|s| pieces[s * th + k]).sum();
        assert!((sum + rhs[k]).abs() < 1e-13);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn advection_residual_is_affine(seed in any::<u64>(), alpha in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = predictor(LawKind::Advection2d, 1, 0.1, Backend::Qqf);
        let ops = &p.ops;
        let (n, nq) = (ops.unknowns(), ops.nb() * ops.kern.theta);
        let (w1, w2) = (random_vec(&mut rng, n, 1.0), random_vec(&mut rng, n, 1.0));
        let (q1, q2) = (random_vec(&mut rng, nq, 1.0), random_vec(&mut rng, nq, 1.0));
        let mut rw = RegionWork::default();
        let r1 = ops.residual_at(&w1, &q1, 0.03, &mut rw);
        let r2 = ops.residual_at(&w2, &q2, 0.03, &mut rw);
        let w: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| alpha * a + b).collect();
        let q: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| alpha * a + b).collect();
        let r = ops.residual_at(&w, &q, 0.03, &mut rw);
        for i in 0..n {
            prop_assert!((r[i] - alpha * r1[i] - r2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn free_stream_is_preserved_exactly(c in -3.0f64..3.0, dt in 0.001f64..0.2) {
        let p = predictor(LawKind::Burgers2d, 2, 0.1, Backend::Qqf);
        let ops = &p.ops;
        let th = ops.kern.theta;
        let mut q = vec![0.0; ops.nb() * th];
        for j in 0..ops.nb() {
            q[j * th] = c;
        }
        let w = ops.initial_guess(&q);
        let r = ops.residual_at(&w, &q, dt, &mut RegionWork::default());
        prop_assert!(r.iter().all(|&v| v == 0.0));
    }
}
