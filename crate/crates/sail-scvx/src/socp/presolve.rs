//! Presolve for the embedded conic solver: structural cleanup of the
//! equality rows (zero rows, duplicate rows, inconsistencies), removal of
//! empty columns, and Ruiz-style equilibration. Every transformation is
//! recorded so solutions map back to the original data space exactly.

use super::sparse::Triplets;
use super::{Cone, ConicProgram, SocpError, SolverSolution};

/// Result of presolve: the scaled/cleaned program plus the bookkeeping
/// needed to map a solution of it back to the original program.
pub struct Presolved {
    pub program: ConicProgram,
    /// Kept equality-row indices (into the original rows).
    kept_rows: Vec<usize>,
    /// Kept column indices (into the original variables).
    kept_cols: Vec<usize>,
    n_orig: usize,
    p_orig: usize,
    /// Column scaling: x_orig[kept_cols[j]] = col_scale[j] * x_scaled[j].
    col_scale: Vec<f64>,
    /// Equality row scaling applied to kept rows.
    eq_row_scale: Vec<f64>,
    /// Cone row scaling (uniform within each second-order cone block).
    cone_row_scale: Vec<f64>,
    /// Cost scaling sigma: c_scaled = sigma * D_col * c.
    sigma: f64,
    c_orig: Vec<f64>,
}

const RUIZ_ITERS: usize = 10;
const DUP_TOL: f64 = 1e-14;

/// Runs structural cleanup and equilibration.
pub fn presolve(prog: &ConicProgram) -> Result<Presolved, SocpError> {
    let n = prog.n_vars();
    let p = prog.n_eq();
    let m = prog.cone_dim();

    // --- Equality-row cleanup: zero rows and (scaled) duplicates. ---
    let at = prog.a_eq.transpose(); // rows of A as columns of A^T
    let mut kept_rows: Vec<usize> = Vec::with_capacity(p);
    // Normalized form of each kept row for duplicate detection.
    let mut kept_norm: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for i in 0..p {
        let lo = at.colptr[i];
        let hi = at.colptr[i + 1];
        if lo == hi {
            if prog.b_eq[i].abs() > 0.0 {
                return Err(SocpError::StructurallyInfeasible { row: i, rhs: prog.b_eq[i] });
            }
            continue; // 0 = 0 row: drop
        }
        let pivot = at.values[lo];
        let norm_row: Vec<(usize, f64)> =
            (lo..hi).map(|q| (at.rowind[q], at.values[q] / pivot)).collect();
        let norm_b = prog.b_eq[i] / pivot;
        let mut duplicate = false;
        for (row2, b2) in &kept_norm {
            if row2.len() == norm_row.len()
                && row2.iter().zip(&norm_row).all(|((c1, v1), (c2, v2))| {
                    c1 == c2 && (v1 - v2).abs() <= DUP_TOL * (1.0 + v1.abs())
                })
            {
                if (b2 - norm_b).abs() > 1e-10 * (1.0 + norm_b.abs()) {
                    return Err(SocpError::StructurallyInfeasible { row: i, rhs: prog.b_eq[i] });
                }
                duplicate = true;
                break;
            }
        }
        if duplicate {
            continue;
        }
        kept_norm.push((norm_row, norm_b));
        kept_rows.push(i);
    }

    // --- Empty-column removal. ---
    let mut col_used = vec![false; n];
    for j in 0..n {
        if prog.a_eq.colptr[j] != prog.a_eq.colptr[j + 1] || prog.g.colptr[j] != prog.g.colptr[j + 1]
        {
            col_used[j] = true;
        }
    }
    for j in 0..n {
        if !col_used[j] && prog.c[j] != 0.0 {
            return Err(SocpError::UnboundedColumn { col: j });
        }
    }
    let kept_cols: Vec<usize> = (0..n).filter(|&j| col_used[j]).collect();
    let mut col_of: Vec<Option<usize>> = vec![None; n];
    for (jj, &j) in kept_cols.iter().enumerate() {
        col_of[j] = Some(jj);
    }
    let row_of: Vec<Option<usize>> = {
        let mut v = vec![None; p];
        for (ii, &i) in kept_rows.iter().enumerate() {
            v[i] = Some(ii);
        }
        v
    };

    let np = kept_cols.len();
    let pp = kept_rows.len();

    // Rebuild A, G in the reduced index space.
    let mut ta = Triplets::new(pp, np);
    for j in 0..n {
        if let Some(jj) = col_of[j] {
            for q in prog.a_eq.colptr[j]..prog.a_eq.colptr[j + 1] {
                if let Some(ii) = row_of[prog.a_eq.rowind[q]] {
                    ta.push(ii, jj, prog.a_eq.values[q]);
                }
            }
        }
    }
    let mut tg = Triplets::new(m, np);
    for j in 0..n {
        if let Some(jj) = col_of[j] {
            for q in prog.g.colptr[j]..prog.g.colptr[j + 1] {
                tg.push(prog.g.rowind[q], jj, prog.g.values[q]);
            }
        }
    }
    let mut a = ta.to_csc();
    let mut g = tg.to_csc();
    let mut b: Vec<f64> = kept_rows.iter().map(|&i| prog.b_eq[i]).collect();
    let mut h = prog.h.clone();
    let mut c: Vec<f64> = kept_cols.iter().map(|&j| prog.c[j]).collect();

    // --- Ruiz equilibration on the stacked matrix [A; G]. ---
    // Second-order cone rows must share one scale so cone membership is
    // preserved; nonnegative rows scale independently.
    let mut col_scale = vec![1.0; np];
    let mut eq_row_scale = vec![1.0; pp];
    let mut cone_row_scale = vec![1.0; m];
    // Map each cone row to its block and kind.
    let mut soc_block_of: Vec<Option<usize>> = vec![None; m];
    {
        let mut row = 0;
        for (bi, cone) in prog.cones.iter().enumerate() {
            match *cone {
                Cone::Nonnegative(d) => row += d,
                Cone::SecondOrder(d) => {
                    for r in row..row + d {
                        soc_block_of[r] = Some(bi);
                    }
                    row += d;
                }
            }
        }
    }
    for _ in 0..RUIZ_ITERS {
        // Row infinity norms.
        let mut arn = vec![0.0f64; pp];
        for j in 0..np {
            for q in a.colptr[j]..a.colptr[j + 1] {
                let i = a.rowind[q];
                arn[i] = arn[i].max(a.values[q].abs());
            }
        }
        let mut grn = vec![0.0f64; m];
        for j in 0..np {
            for q in g.colptr[j]..g.colptr[j + 1] {
                let i = g.rowind[q];
                grn[i] = grn[i].max(g.values[q].abs());
            }
        }
        // Uniform scale within each SOC block: use the block max.
        let mut block_max: Vec<f64> = vec![0.0; prog.cones.len()];
        for i in 0..m {
            if let Some(bi) = soc_block_of[i] {
                block_max[bi] = block_max[bi].max(grn[i]);
            }
        }
        for i in 0..m {
            if let Some(bi) = soc_block_of[i] {
                grn[i] = block_max[bi];
            }
        }
        let scale = |x: f64| if x > 0.0 { 1.0 / x.sqrt() } else { 1.0 };
        let dr_a: Vec<f64> = arn.iter().map(|&x| scale(x)).collect();
        let dr_g: Vec<f64> = grn.iter().map(|&x| scale(x)).collect();
        for j in 0..np {
            for q in a.colptr[j]..a.colptr[j + 1] {
                a.values[q] *= dr_a[a.rowind[q]];
            }
            for q in g.colptr[j]..g.colptr[j + 1] {
                g.values[q] *= dr_g[g.rowind[q]];
            }
        }
        for i in 0..pp {
            b[i] *= dr_a[i];
            eq_row_scale[i] *= dr_a[i];
        }
        for i in 0..m {
            h[i] *= dr_g[i];
            cone_row_scale[i] *= dr_g[i];
        }
        // Column infinity norms over the stacked matrix.
        let mut cn = vec![0.0f64; np];
        for j in 0..np {
            for q in a.colptr[j]..a.colptr[j + 1] {
                cn[j] = cn[j].max(a.values[q].abs());
            }
            for q in g.colptr[j]..g.colptr[j + 1] {
                cn[j] = cn[j].max(g.values[q].abs());
            }
        }
        let dc: Vec<f64> = cn.iter().map(|&x| scale(x)).collect();
        for j in 0..np {
            for q in a.colptr[j]..a.colptr[j + 1] {
                a.values[q] *= dc[j];
            }
            for q in g.colptr[j]..g.colptr[j + 1] {
                g.values[q] *= dc[j];
            }
            c[j] *= dc[j];
            col_scale[j] *= dc[j];
        }
    }
    let cmax = c.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
    let sigma = if cmax > 1.0 { 1.0 / cmax } else { 1.0 };
    for cj in c.iter_mut() {
        *cj *= sigma;
    }

    Ok(Presolved {
        program: ConicProgram { c, a_eq: a, b_eq: b, g, h, cones: prog.cones.clone() },
        kept_rows,
        kept_cols,
        n_orig: n,
        p_orig: p,
        col_scale,
        eq_row_scale,
        cone_row_scale,
        sigma,
        c_orig: prog.c.clone(),
    })
}

impl Presolved {
    /// Maps a solution of the scaled program back to the original space.
    pub fn unscale_solution(&self, sol: SolverSolution) -> SolverSolution {
        let mut x = vec![0.0; self.n_orig];
        for (jj, &j) in self.kept_cols.iter().enumerate() {
            x[j] = self.col_scale[jj] * sol.x[jj];
        }
        let mut y = vec![0.0; self.p_orig];
        for (ii, &i) in self.kept_rows.iter().enumerate() {
            y[i] = self.eq_row_scale[ii] * sol.y[ii] / self.sigma;
        }
        let m = self.cone_row_scale.len();
        let mut z = vec![0.0; m];
        let mut s = vec![0.0; m];
        for i in 0..m {
            z[i] = self.cone_row_scale[i] * sol.z[i] / self.sigma;
            s[i] = sol.s[i] / self.cone_row_scale[i];
        }
        let objective: f64 = self.c_orig.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
        SolverSolution {
            x,
            y,
            z,
            s,
            status: sol.status,
            iterations: sol.iterations,
            duality_gap: sol.duality_gap / self.sigma,
            objective,
        }
    }
}
