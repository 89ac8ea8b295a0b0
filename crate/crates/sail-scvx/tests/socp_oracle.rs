//! Oracle tests for the embedded conic solver.
//!
//! The LP subset is checked against an independent exhaustive vertex
//! enumeration oracle; the SOC subset against instances constructed from a
//! known KKT-optimal primal/dual pair. Both oracles are independent of the
//! interior-point implementation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sail_scvx::socp::sparse::CscMatrix;
use sail_scvx::socp::{Cone, ConicProgram, SolverSettings, SolverStatus};

fn dense_to_csc(m: &DMatrix<f64>) -> CscMatrix {
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != 0.0 {
                rows.push(i);
                cols.push(j);
                vals.push(m[(i, j)]);
            }
        }
    }
    CscMatrix::from_triplets(m.nrows(), m.ncols(), &rows, &cols, &vals)
}

fn solve(prog: &ConicProgram) -> sail_scvx::socp::SolverSolution {
    prog.solve(&SolverSettings::default()).expect("valid program")
}

/// Exhaustive vertex enumeration for LPs: min c'x, A x = b, G x <= h.
/// Every vertex makes n constraints active (all equalities plus a subset of
/// the inequalities); enumerate all subsets and keep the feasible best.
fn lp_vertex_oracle(
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
) -> Option<f64> {
    let n = c.len();
    let p = a.nrows();
    let m = g.nrows();
    assert!(p <= n);
    let need = n - p;
    let mut best: Option<f64> = None;
    let mut subset: Vec<usize> = (0..need).collect();
    loop {
        // Assemble the candidate active system.
        let mut mat = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for i in 0..p {
            mat.row_mut(i).copy_from(&a.row(i));
            rhs[i] = b[i];
        }
        for (t, &ri) in subset.iter().enumerate() {
            mat.row_mut(p + t).copy_from(&g.row(ri));
            rhs[p + t] = h[ri];
        }
        if let Some(x) = mat.lu().solve(&rhs) {
            let gx = g * &x;
            let feasible = (0..m).all(|i| gx[i] <= h[i] + 1e-8);
            if feasible {
                let obj = c.dot(&x);
                best = Some(match best {
                    Some(cur) => cur.min(obj),
                    None => obj,
                });
            }
        }
        // Next combination of `need` indices out of m.
        let mut k = need;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if subset[k] + (need - k) < m {
                subset[k] += 1;
                for t in k + 1..need {
                    subset[t] = subset[t - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Checks the KKT residuals of an Optimal solution against the program data.
fn assert_kkt(prog: &ConicProgram, sol: &sail_scvx::socp::SolverSolution, tol: f64) {
    assert_eq!(sol.status, SolverStatus::Optimal);
    let n = prog.n_vars();
    // Primal: A x = b, G x + s = h.
    let mut ax = vec![0.0; prog.n_eq()];
    prog.a_eq.axpy(1.0, &sol.x, &mut ax);
    for i in 0..prog.n_eq() {
        assert!(
            (ax[i] - prog.b_eq[i]).abs() <= tol * (1.0 + prog.b_eq[i].abs()),
            "equality residual row {i}: {} vs {}",
            ax[i],
            prog.b_eq[i]
        );
    }
    let mut gx = vec![0.0; prog.cone_dim()];
    prog.g.axpy(1.0, &sol.x, &mut gx);
    for i in 0..prog.cone_dim() {
        let r = gx[i] + sol.s[i] - prog.h[i];
        assert!(r.abs() <= tol * (1.0 + prog.h[i].abs()), "cone residual row {i}: {r}");
    }
    // Dual: c + A'y + G'z = 0.
    let mut rx = prog.c.clone();
    prog.a_eq.axpy_t(1.0, &sol.y, &mut rx);
    prog.g.axpy_t(1.0, &sol.z, &mut rx);
    let cmax = prog.c.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for j in 0..n {
        assert!(rx[j].abs() <= tol * cmax * 10.0, "dual residual col {j}: {}", rx[j]);
    }
    // Complementary slackness.
    let gap: f64 = sol.s.iter().zip(&sol.z).map(|(a, b)| a * b).sum();
    assert!(gap.abs() <= 1e-6 * (1.0 + sol.objective.abs()), "gap {gap}");
}

#[test]
fn min_x_subject_to_x_ge_one() {
    // min x s.t. x >= 1  encoded as  -x + s = -1, s >= 0.
    let prog = ConicProgram {
        c: vec![1.0],
        a_eq: CscMatrix::zeros(0, 1),
        b_eq: vec![],
        g: CscMatrix::from_triplets(1, 1, &[0], &[0], &[-1.0]),
        h: vec![-1.0],
        cones: vec![Cone::Nonnegative(1)],
    };
    let sol = solve(&prog);
    assert_eq!(sol.status, SolverStatus::Optimal);
    assert!((sol.x[0] - 1.0).abs() < 1e-7, "x = {}", sol.x[0]);
}

#[test]
fn min_t_norm_three_four_le_t() {
    // min t s.t. ||(3,4)|| <= t: vars (t), SOC rows s = (t, 3, 4).
    let prog = ConicProgram {
        c: vec![1.0],
        a_eq: CscMatrix::zeros(0, 1),
        b_eq: vec![],
        g: CscMatrix::from_triplets(3, 1, &[0], &[0], &[-1.0]),
        h: vec![0.0, 3.0, 4.0],
        cones: vec![Cone::SecondOrder(3)],
    };
    let sol = solve(&prog);
    assert_eq!(sol.status, SolverStatus::Optimal);
    assert!((sol.x[0] - 5.0).abs() < 1e-6, "t = {}", sol.x[0]);
}

#[test]
fn random_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(20260826);
    for trial in 0..25 {
        let n = rng.gen_range(2..=6usize);
        let p = rng.gen_range(0..=(n / 2));
        let extra = rng.gen_range(1..=4usize);
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let a = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = &a * &x0;
        // Box constraints guarantee boundedness; extra rows pass through a
        // strict-interior margin at x0.
        let m = 2 * n + extra;
        let mut g = DMatrix::zeros(m, n);
        let mut h = DVector::zeros(m);
        for j in 0..n {
            g[(2 * j, j)] = 1.0;
            h[2 * j] = 2.0;
            g[(2 * j + 1, j)] = -1.0;
            h[2 * j + 1] = 2.0;
        }
        for i in 0..extra {
            for j in 0..n {
                g[(2 * n + i, j)] = rng.gen_range(-1.0..1.0);
            }
            let gi = g.row(2 * n + i) * &x0;
            h[2 * n + i] = gi[0] + rng.gen_range(0.1..1.0);
        }
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));

        let oracle = lp_vertex_oracle(&c, &a, &b, &g, &h).expect("bounded feasible LP");
        let prog = ConicProgram {
            c: c.iter().copied().collect(),
            a_eq: dense_to_csc(&a),
            b_eq: b.iter().copied().collect(),
            g: dense_to_csc(&g),
            h: h.iter().copied().collect(),
            cones: vec![Cone::Nonnegative(m)],
        };
        let sol = solve(&prog);
        assert_eq!(sol.status, SolverStatus::Optimal, "trial {trial}");
        let rel = (sol.objective - oracle).abs() / (1.0 + oracle.abs());
        assert!(rel < 1e-6, "trial {trial}: solver {} vs oracle {}", sol.objective, oracle);
        assert_kkt(&prog, &sol, 1e-6);
    }
}

#[test]
fn random_socps_match_constructed_kkt_optimum() {
    // Instances built backwards from a known strictly complementary
    // primal/dual pair: choose (x*, y*, z*, s*) satisfying the KKT system,
    // then derive b, h, c. The optimal value c'x* is known exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(7_041_776);
    for trial in 0..25 {
        let n = rng.gen_range(3..=8usize);
        let p = rng.gen_range(0..=2usize.min(n - 1));
        let soc_dim = rng.gen_range(3..=5usize);
        let k_nn = rng.gen_range(1..=4usize);
        let m = soc_dim + k_nn;

        let x_star = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let y_star = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
        // Boundary-complementary SOC pair: s = a(1, u), z = g(1, -u), |u|=1.
        let mut u = DVector::from_fn(soc_dim - 1, |_, _| rng.gen_range(-1.0..1.0));
        let nu: f64 = u.norm();
        u /= nu.max(1e-9);
        let amp_s = rng.gen_range(0.5..2.0);
        let amp_z = rng.gen_range(0.5..2.0);
        let mut s_star = DVector::zeros(m);
        let mut z_star = DVector::zeros(m);
        s_star[0] = amp_s;
        z_star[0] = amp_z;
        for i in 0..soc_dim - 1 {
            s_star[1 + i] = amp_s * u[i];
            z_star[1 + i] = -amp_z * u[i];
        }
        // Nonnegative part: strictly complementary partition.
        for i in 0..k_nn {
            if rng.gen_bool(0.5) {
                s_star[soc_dim + i] = rng.gen_range(0.2..1.5);
                z_star[soc_dim + i] = 0.0;
            } else {
                s_star[soc_dim + i] = 0.0;
                z_star[soc_dim + i] = rng.gen_range(0.2..1.5);
            }
        }

        let a = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
        let g = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = &a * &x_star;
        let h = &g * &x_star + &s_star;
        let c = -(a.transpose() * &y_star) - g.transpose() * &z_star;
        let opt = c.dot(&x_star);

        let prog = ConicProgram {
            c: c.iter().copied().collect(),
            a_eq: dense_to_csc(&a),
            b_eq: b.iter().copied().collect(),
            g: dense_to_csc(&g),
            h: h.iter().copied().collect(),
            cones: vec![Cone::SecondOrder(soc_dim), Cone::Nonnegative(k_nn)],
        };
        let sol = solve(&prog);
        assert_eq!(sol.status, SolverStatus::Optimal, "trial {trial}");
        let rel = (sol.objective - opt).abs() / (1.0 + opt.abs());
        assert!(rel < 1e-6, "trial {trial}: solver {} vs constructed {}", sol.objective, opt);
        assert_kkt(&prog, &sol, 1e-6);
    }
}

#[test]
fn detects_primal_infeasibility() {
    // x >= 1 and x <= 0 simultaneously.
    let prog = ConicProgram {
        c: vec![1.0],
        a_eq: CscMatrix::zeros(0, 1),
        b_eq: vec![],
        g: CscMatrix::from_triplets(2, 1, &[0, 1], &[0, 0], &[-1.0, 1.0]),
        h: vec![-1.0, 0.0],
        cones: vec![Cone::Nonnegative(2)],
    };
    let sol = solve(&prog);
    assert_eq!(sol.status, SolverStatus::PrimalInfeasible);
    // Certificate: G'z ~ 0, h'z < 0.
    let hz: f64 = prog.h.iter().zip(&sol.z).map(|(a, b)| a * b).sum();
    assert!(hz < 0.0, "h'z = {hz}");
}

#[test]
fn detects_dual_infeasibility() {
    // min -x s.t. x >= 0: unbounded below.
    let prog = ConicProgram {
        c: vec![-1.0],
        a_eq: CscMatrix::zeros(0, 1),
        b_eq: vec![],
        g: CscMatrix::from_triplets(1, 1, &[0], &[0], &[-1.0]),
        h: vec![0.0],
        cones: vec![Cone::Nonnegative(1)],
    };
    let sol = solve(&prog);
    assert_eq!(sol.status, SolverStatus::DualInfeasible);
    // Certificate ray: c'x < 0 along a feasible recession direction.
    assert!(sol.x[0] > 0.0);
}

#[test]
fn duplicate_equality_row_removed_same_solution() {
    // min x + y s.t. x + y = 1 (twice), x,y >= 0.
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    let prog = ConicProgram {
        c: vec![1.0, 2.0],
        a_eq: dense_to_csc(&a),
        b_eq: vec![1.0, 1.0],
        g: dense_to_csc(&DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0])),
        h: vec![0.0, 0.0],
        cones: vec![Cone::Nonnegative(2)],
    };
    let sol = solve(&prog);
    assert_eq!(sol.status, SolverStatus::Optimal);
    assert!((sol.objective - 1.0).abs() < 1e-7);
    assert!((sol.x[0] - 1.0).abs() < 1e-6 && sol.x[1].abs() < 1e-6);
}

#[test]
fn contradictory_duplicate_rows_reported_structurally_infeasible() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
    let prog = ConicProgram {
        c: vec![1.0, 2.0],
        a_eq: dense_to_csc(&a),
        b_eq: vec![1.0, 3.0], // second row says x + y = 1.5: contradiction
        g: dense_to_csc(&DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0])),
        h: vec![0.0, 0.0],
        cones: vec![Cone::Nonnegative(2)],
    };
    let err = prog.solve(&SolverSettings::default());
    assert!(err.is_err(), "contradictory rows must be rejected structurally");
}

#[test]
fn equilibration_tames_badly_scaled_program() {
    // Entries spanning 1e±6; after presolve the stacked row/col norms must
    // sit within [0.1, 10], and the solve must still match the LP oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 4;
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let scales = [1e6, 1e-6, 1.0, 1e3];
    let mut g = DMatrix::zeros(2 * n + 2, n);
    let mut h = DVector::zeros(2 * n + 2);
    for j in 0..n {
        g[(2 * j, j)] = scales[j];
        h[2 * j] = 2.0 * scales[j];
        g[(2 * j + 1, j)] = -scales[j];
        h[2 * j + 1] = 2.0 * scales[j];
    }
    for i in 0..2 {
        for j in 0..n {
            g[(2 * n + i, j)] = rng.gen_range(-1.0..1.0) * scales[(i + j) % 4];
        }
        let gi = g.row(2 * n + i) * &x0;
        h[2 * n + i] = gi[0] + 0.5 * f64::max(scales[i % 4], 1.0);
    }
    let c = DVector::from_fn(n, |j, _| rng.gen_range(-1.0..1.0) * scales[(j + 1) % 4]);
    let a = DMatrix::zeros(0, n);
    let b = DVector::zeros(0);
    let prog = ConicProgram {
        c: c.iter().copied().collect(),
        a_eq: dense_to_csc(&a),
        b_eq: vec![],
        g: dense_to_csc(&g),
        h: h.iter().copied().collect(),
        cones: vec![Cone::Nonnegative(2 * n + 2)],
    };
    let pre = sail_scvx::socp::presolve::presolve(&prog).unwrap();
    let gs = &pre.program.g;
    let mut row_norms = vec![0.0f64; gs.nrows];
    let mut col_norms = vec![0.0f64; gs.ncols];
    for j in 0..gs.ncols {
        for q in gs.colptr[j]..gs.colptr[j + 1] {
            let v = gs.values[q].abs();
            row_norms[gs.rowind[q]] = row_norms[gs.rowind[q]].max(v);
            col_norms[j] = col_norms[j].max(v);
        }
    }
    for (i, r) in row_norms.iter().enumerate() {
        assert!(*r >= 0.1 && *r <= 10.0, "row {i} norm {r}");
    }
    for (j, cn) in col_norms.iter().enumerate() {
        assert!(*cn >= 0.1 && *cn <= 10.0, "col {j} norm {cn}");
    }
    let oracle = lp_vertex_oracle(&c, &a, &b, &g, &h).expect("bounded LP");
    let sol = solve(&prog);
    assert_eq!(sol.status, SolverStatus::Optimal);
    let rel = (sol.objective - oracle).abs() / (1.0 + oracle.abs());
    assert!(rel < 1e-6, "solver {} vs oracle {}", sol.objective, oracle);
}

#[test]
fn solution_invariant_under_manual_scaling() {
    // Scale rows and columns of a fixed LP; the unscaled-space solution must
    // agree with the original to 1e-6.
    let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
    let g = DMatrix::from_row_slice(4, 3, &[-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 2.0, 0.5]);
    let h = DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.5]);
    let c = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
    let base = ConicProgram {
        c: c.iter().copied().collect(),
        a_eq: dense_to_csc(&a),
        b_eq: vec![1.0],
        g: dense_to_csc(&g),
        h: h.iter().copied().collect(),
        cones: vec![Cone::Nonnegative(4)],
    };
    let sol0 = solve(&base);
    assert_eq!(sol0.status, SolverStatus::Optimal);

    let col_s = [100.0, 0.01, 5.0];
    let row_s = [3.0, 0.2, 7.0, 0.01];
    let mut a2 = a.clone();
    let mut g2 = g.clone();
    let mut h2 = h.clone();
    let mut c2 = c.clone();
    for j in 0..3 {
        for i in 0..1 {
            a2[(i, j)] *= col_s[j];
        }
        for i in 0..4 {
            g2[(i, j)] *= col_s[j];
        }
        c2[j] *= col_s[j];
    }
    for i in 0..4 {
        for j in 0..3 {
            g2[(i, j)] *= row_s[i];
        }
        h2[i] *= row_s[i];
    }
    let scaled = ConicProgram {
        c: c2.iter().copied().collect(),
        a_eq: dense_to_csc(&a2),
        b_eq: vec![1.0],
        g: dense_to_csc(&g2),
        h: h2.iter().copied().collect(),
        cones: vec![Cone::Nonnegative(4)],
    };
    let sol1 = solve(&scaled);
    assert_eq!(sol1.status, SolverStatus::Optimal);
    for j in 0..3 {
        let xj = sol1.x[j] * col_s[j]; // map back to original variable space
        assert!((xj - sol0.x[j]).abs() < 1e-6, "var {j}: {} vs {}", xj, sol0.x[j]);
    }
}

#[test]
fn deterministic_repeat_solves() {
    let prog = ConicProgram {
        c: vec![1.0, 0.3],
        a_eq: CscMatrix::zeros(0, 2),
        b_eq: vec![],
        g: CscMatrix::from_triplets(
            3,
            2,
            &[0, 1, 2, 2],
            &[0, 0, 0, 1],
            &[-1.0, 1.0, -0.5, -1.0],
        ),
        h: vec![0.0, 4.0, -1.0],
        cones: vec![Cone::Nonnegative(3)],
    };
    let s1 = solve(&prog);
    let s2 = solve(&prog);
    assert_eq!(s1.iterations, s2.iterations);
    assert_eq!(s1.x, s2.x);
    assert_eq!(s1.y, s2.y);
    assert_eq!(s1.z, s2.z);
}

#[test]
fn weak_duality_and_gap_at_optimum() {
    let prog = ConicProgram {
        c: vec![1.0, 1.0],
        a_eq: dense_to_csc(&DMatrix::from_row_slice(1, 2, &[1.0, -1.0])),
        b_eq: vec![0.25],
        g: dense_to_csc(&DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0])),
        h: vec![0.0, 0.0, 5.0],
        cones: vec![Cone::Nonnegative(3)],
    };
    let sol = solve(&prog);
    assert_eq!(sol.status, SolverStatus::Optimal);
    let by: f64 = prog.b_eq.iter().zip(&sol.y).map(|(a, b)| a * b).sum();
    let hz: f64 = prog.h.iter().zip(&sol.z).map(|(a, b)| a * b).sum();
    let dual_obj = -(by + hz);
    assert!(sol.objective >= dual_obj - 1e-8, "weak duality violated");
    assert!(sol.duality_gap.abs() <= 1e-6 * (1.0 + sol.objective.abs()));
}

#[test]
fn dump_roundtrips_dimensions() {
    let prog = ConicProgram {
        c: vec![1.0],
        a_eq: CscMatrix::zeros(0, 1),
        b_eq: vec![],
        g: CscMatrix::from_triplets(3, 1, &[0], &[0], &[-1.0]),
        h: vec![0.0, 3.0, 4.0],
        cones: vec![Cone::SecondOrder(3)],
    };
    let text = prog.dump();
    assert!(text.starts_with("socp n=1 p=0 m=3 cones=1"));
    assert!(text.contains("soc 3"));
}
