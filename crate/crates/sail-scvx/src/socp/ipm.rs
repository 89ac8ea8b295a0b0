//! Homogeneous self-dual interior-point method with Nesterov-Todd scaling
//! and a Mehrotra predictor-corrector, over products of nonnegative and
//! second-order cones. The KKT systems are solved by sparse LDL^T with a
//! one-time minimum-degree ordering; the sparsity pattern is factored
//! symbolically once and refactored numerically each iteration.

use super::sparse::{min_degree_ordering, sym_upper_axpy, CscMatrix, LdlFactor};
use super::{Cone, ConicProgram, SolverSettings, SolverSolution, SolverStatus};

// ---------------------------------------------------------------------------
// Cone utilities
// ---------------------------------------------------------------------------

fn cone_offsets(cones: &[Cone]) -> Vec<usize> {
    let mut off = Vec::with_capacity(cones.len());
    let mut acc = 0;
    for c in cones {
        off.push(acc);
        acc += c.dim();
    }
    off
}

/// Barrier degree nu: each nonnegative component counts 1, each SOC block 1.
fn barrier_degree(cones: &[Cone]) -> f64 {
    cones
        .iter()
        .map(|c| match *c {
            Cone::Nonnegative(d) => d as f64,
            Cone::SecondOrder(_) => 1.0,
        })
        .sum()
}

/// The identity element e of the product cone.
fn cone_identity(cones: &[Cone]) -> Vec<f64> {
    let mut e = Vec::new();
    for c in cones {
        match *c {
            Cone::Nonnegative(d) => e.extend(std::iter::repeat(1.0).take(d)),
            Cone::SecondOrder(d) => {
                e.push(1.0);
                e.extend(std::iter::repeat(0.0).take(d - 1));
            }
        }
    }
    e
}

/// Minimum "eigenvalue" of v with respect to the cone (negative outside).
fn cone_min_eig(cones: &[Cone], offsets: &[usize], v: &[f64]) -> f64 {
    let mut m = f64::INFINITY;
    for (c, &o) in cones.iter().zip(offsets) {
        match *c {
            Cone::Nonnegative(d) => {
                for i in 0..d {
                    m = m.min(v[o + i]);
                }
            }
            Cone::SecondOrder(d) => {
                let tail: f64 = v[o + 1..o + d].iter().map(|x| x * x).sum::<f64>().sqrt();
                m = m.min(v[o] - tail);
            }
        }
    }
    m
}

/// Largest step alpha >= 0 with v + alpha*dv remaining in the cone
/// (f64::INFINITY when unbounded). v must be strictly interior.
fn cone_max_step(cones: &[Cone], offsets: &[usize], v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (c, &o) in cones.iter().zip(offsets) {
        match *c {
            Cone::Nonnegative(d) => {
                for i in 0..d {
                    if dv[o + i] < 0.0 {
                        alpha = alpha.min(-v[o + i] / dv[o + i]);
                    }
                }
            }
            Cone::SecondOrder(d) => {
                let (v0, dv0) = (v[o], dv[o]);
                let vb = &v[o + 1..o + d];
                let db = &dv[o + 1..o + d];
                // (v0+a dv0)^2 - |vb + a db|^2 >= 0 : quadratic in a.
                let aq = dv0 * dv0 - db.iter().map(|x| x * x).sum::<f64>();
                let bq = 2.0 * (v0 * dv0 - vb.iter().zip(db).map(|(a, b)| a * b).sum::<f64>());
                let cq = v0 * v0 - vb.iter().map(|x| x * x).sum::<f64>();
                let mut best = f64::INFINITY;
                let disc = bq * bq - 4.0 * aq * cq;
                if disc >= 0.0 {
                    let sq = disc.sqrt();
                    for r in [(-bq - sq), (-bq + sq)] {
                        if aq.abs() > 0.0 {
                            let root = r / (2.0 * aq);
                            if root > 0.0 {
                                best = best.min(root);
                            }
                        }
                    }
                    if aq.abs() == 0.0 && bq < 0.0 {
                        best = best.min(-cq / bq);
                    }
                }
                if dv0 < 0.0 {
                    best = best.min(-v0 / dv0);
                }
                alpha = alpha.min(best);
            }
        }
    }
    alpha
}

/// Jordan product u o v per cone block (componentwise on the orthant).
fn jordan_product(cones: &[Cone], offsets: &[usize], u: &[f64], v: &[f64], out: &mut [f64]) {
    for (c, &o) in cones.iter().zip(offsets) {
        match *c {
            Cone::Nonnegative(d) => {
                for i in 0..d {
                    out[o + i] = u[o + i] * v[o + i];
                }
            }
            Cone::SecondOrder(d) => {
                let dot: f64 = (0..d).map(|i| u[o + i] * v[o + i]).sum();
                for i in 1..d {
                    out[o + i] = u[o] * v[o + i] + v[o] * u[o + i];
                }
                out[o] = dot;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Nesterov-Todd scaling
// ---------------------------------------------------------------------------

enum BlockScaling {
    /// w_i = sqrt(s_i / z_i); W = diag(w).
    Nonneg { w: Vec<f64> },
    /// W = beta * (2 v v' - J) with v'Jv = 1, v0 > 0.
    Soc { beta: f64, v: Vec<f64> },
}

struct NtScaling {
    blocks: Vec<BlockScaling>,
    /// Scaled point lambda = W z = W^{-1} s.
    lambda: Vec<f64>,
    /// w_i^2 per row for nonnegative rows (unused slots hold 1.0).
    w2_diag: Vec<f64>,
}

impl NtScaling {
    /// Computes the NT scaling at a strictly interior (s, z); None if the
    /// pair has left the interior numerically.
    fn compute(cones: &[Cone], offsets: &[usize], s: &[f64], z: &[f64]) -> Option<NtScaling> {
        let mdim: usize = cones.iter().map(|c| c.dim()).sum();
        let mut blocks = Vec::with_capacity(cones.len());
        let mut lambda = vec![0.0; mdim];
        let mut w2_diag = vec![1.0; mdim];
        for (c, &o) in cones.iter().zip(offsets) {
            match *c {
                Cone::Nonnegative(d) => {
                    let mut w = vec![0.0; d];
                    for i in 0..d {
                        let (si, zi) = (s[o + i], z[o + i]);
                        if si <= 0.0 || zi <= 0.0 {
                            return None;
                        }
                        w[i] = (si / zi).sqrt();
                        lambda[o + i] = (si * zi).sqrt();
                        w2_diag[o + i] = si / zi;
                    }
                    blocks.push(BlockScaling::Nonneg { w });
                }
                Cone::SecondOrder(d) => {
                    let sb = &s[o..o + d];
                    let zb = &z[o..o + d];
                    let jn = |v: &[f64]| -> f64 {
                        v[0] * v[0] - v[1..].iter().map(|x| x * x).sum::<f64>()
                    };
                    let (s2, z2) = (jn(sb), jn(zb));
                    if s2 <= 0.0 || z2 <= 0.0 || sb[0] <= 0.0 || zb[0] <= 0.0 {
                        return None;
                    }
                    let (sn, zn) = (s2.sqrt(), z2.sqrt());
                    let dot: f64 = sb.iter().zip(zb).map(|(a, b)| a * b).sum();
                    let gamma = ((1.0 + dot / (sn * zn)) / 2.0).sqrt();
                    // wbar = (s/sn + J z/zn) / (2 gamma); v is its square-root
                    // point, v = (wbar + e) / sqrt(2 (1 + wbar_0)), so that
                    // (2 v v' - J) = P(wbar)^{1/2} and W z = W^{-1} s.
                    let mut v = vec![0.0; d];
                    v[0] = (sb[0] / sn + zb[0] / zn) / (2.0 * gamma);
                    for i in 1..d {
                        v[i] = (sb[i] / sn - zb[i] / zn) / (2.0 * gamma);
                    }
                    let scale = (2.0 * (1.0 + v[0])).sqrt();
                    v[0] = (v[0] + 1.0) / scale;
                    for q in v.iter_mut().skip(1) {
                        *q /= scale;
                    }
                    let beta = (sn / zn).sqrt();
                    let block = BlockScaling::Soc { beta, v };
                    apply_soc_w(&block, zb, &mut lambda[o..o + d]);
                    blocks.push(block);
                }
            }
        }
        Some(NtScaling { blocks, lambda, w2_diag })
    }

    /// out = W x
    fn apply_w(&self, cones: &[Cone], offsets: &[usize], x: &[f64], out: &mut [f64]) {
        for ((c, &o), block) in cones.iter().zip(offsets).zip(&self.blocks) {
            let d = c.dim();
            match block {
                BlockScaling::Nonneg { w } => {
                    for i in 0..d {
                        out[o + i] = w[i] * x[o + i];
                    }
                }
                soc => apply_soc_w(soc, &x[o..o + d], &mut out[o..o + d]),
            }
        }
    }

    /// out = W^{-1} x
    fn apply_winv(&self, cones: &[Cone], offsets: &[usize], x: &[f64], out: &mut [f64]) {
        for ((c, &o), block) in cones.iter().zip(offsets).zip(&self.blocks) {
            let d = c.dim();
            match block {
                BlockScaling::Nonneg { w } => {
                    for i in 0..d {
                        out[o + i] = x[o + i] / w[i];
                    }
                }
                BlockScaling::Soc { beta, v } => {
                    // W^{-1} = (1/beta) J H(v) J  (H J H = J)
                    let xb = &x[o..o + d];
                    let mut jx = xb.to_vec();
                    for q in jx.iter_mut().skip(1) {
                        *q = -*q;
                    }
                    let mut hjx = vec![0.0; d];
                    apply_h(v, &jx, &mut hjx);
                    out[o] = hjx[0] / beta;
                    for i in 1..d {
                        out[o + i] = -hjx[i] / beta;
                    }
                }
            }
        }
    }

    /// out = lambda \ rhs (inverse Jordan product per block).
    fn lambda_solve(&self, cones: &[Cone], offsets: &[usize], rhs: &[f64], out: &mut [f64]) {
        for (c, &o) in cones.iter().zip(offsets) {
            match *c {
                Cone::Nonnegative(d) => {
                    for i in 0..d {
                        out[o + i] = rhs[o + i] / self.lambda[o + i];
                    }
                }
                Cone::SecondOrder(d) => {
                    let l = &self.lambda[o..o + d];
                    let r = &rhs[o..o + d];
                    let lbar_sq: f64 = l[1..].iter().map(|x| x * x).sum();
                    let det = l[0] * l[0] - lbar_sq;
                    let lr: f64 = l[1..].iter().zip(&r[1..]).map(|(a, b)| a * b).sum();
                    let u0 = (l[0] * r[0] - lr) / det;
                    out[o] = u0;
                    for i in 1..d {
                        out[o + i] = (r[i] - u0 * l[i]) / l[0];
                    }
                }
            }
        }
    }

    /// Dense d x d matrix of W^2 for one SOC block (for KKT assembly).
    fn soc_w2_dense(&self, block_idx: usize, d: usize) -> Vec<f64> {
        match &self.blocks[block_idx] {
            BlockScaling::Soc { beta, v } => {
                // W^2 = beta^2 H(v)^2, computed column by column.
                let mut w2 = vec![0.0; d * d];
                let mut col = vec![0.0; d];
                let mut hcol = vec![0.0; d];
                for j in 0..d {
                    for (i, c) in col.iter_mut().enumerate() {
                        *c = if i == j { 1.0 } else { 0.0 };
                    }
                    apply_h(v, &col, &mut hcol);
                    let mut h2col = vec![0.0; d];
                    apply_h(v, &hcol, &mut h2col);
                    for i in 0..d {
                        w2[i + j * d] = beta * beta * h2col[i];
                    }
                }
                w2
            }
            BlockScaling::Nonneg { .. } => unreachable!("nonnegative block has diagonal W^2"),
        }
    }
}

/// out = H(v) x with H(v) = 2 v v' - J.
fn apply_h(v: &[f64], x: &[f64], out: &mut [f64]) {
    let dot: f64 = v.iter().zip(x).map(|(a, b)| a * b).sum();
    out[0] = 2.0 * v[0] * dot - x[0];
    for i in 1..v.len() {
        out[i] = 2.0 * v[i] * dot + x[i];
    }
}

fn apply_soc_w(block: &BlockScaling, x: &[f64], out: &mut [f64]) {
    match block {
        BlockScaling::Soc { beta, v } => {
            apply_h(v, x, out);
            for o in out.iter_mut() {
                *o *= *beta;
            }
        }
        BlockScaling::Nonneg { .. } => unreachable!(),
    }
}

// ---------------------------------------------------------------------------
// KKT system
// ---------------------------------------------------------------------------

/// Which dynamic value feeds a KKT entry.
enum EntrySource {
    /// Fixed value (A/G data entries).
    Static(f64),
    /// +delta regularization on an x-block diagonal (0 in the true matrix).
    RegPos,
    /// -delta regularization on a y-block diagonal (0 in the true matrix).
    RegNeg,
    /// -w_i^2 - delta on the diagonal of a nonnegative row i (cone index).
    NonnegDiag(usize),
    /// -(W^2)_{ij} (- delta on the diagonal) for SOC block b, local (i, j).
    SocEntry { block: usize, i: usize, j: usize, diag: bool },
}

/// Sparse symmetric indefinite KKT system
///
/// ```text
///   [ dI   A'        G'       ]
///   [ A   -dI        0        ]
///   [ G    0   -(W^2 + dI)    ]
/// ```
///
/// held in a fixed permuted upper-triangular pattern; only the W^2 entries
/// change between factorizations.
struct KktSystem {
    dim: usize,
    perm: Vec<usize>,
    upper: CscMatrix,
    /// Values of the unregularized KKT matrix on the same pattern; iterative
    /// refinement targets this matrix so the regularization bias is removed.
    true_values: Vec<f64>,
    /// Parallel arrays: target value index in `upper.values` and its source.
    entry_pos: Vec<usize>,
    entry_src: Vec<EntrySource>,
    expected_sign: Vec<f64>,
    factor: LdlFactor,
    /// Scratch buffers for permuted solves and refinement.
    work: Vec<f64>,
    resid: Vec<f64>,
    corr: Vec<f64>,
    refine_steps: usize,
    /// Relative residual of the most recent solve.
    last_rel_resid: f64,
}

impl KktSystem {
    fn new(prog: &ConicProgram, offsets: &[usize], settings: &SolverSettings) -> KktSystem {
        let n = prog.n_vars();
        let p = prog.n_eq();
        let m = prog.cone_dim();
        let dim = n + p + m;
        let _ = settings;

        // Enumerate entries of the upper triangle in original coordinates.
        let mut entries: Vec<(usize, usize, EntrySource)> = Vec::new();
        for j in 0..n {
            entries.push((j, j, EntrySource::RegPos));
        }
        for j in 0..n {
            for q in prog.a_eq.colptr[j]..prog.a_eq.colptr[j + 1] {
                // A entry (row i, col j) sits at (n + i, j); store transposed.
                entries.push((j, n + prog.a_eq.rowind[q], EntrySource::Static(prog.a_eq.values[q])));
            }
            for q in prog.g.colptr[j]..prog.g.colptr[j + 1] {
                entries.push((j, n + p + prog.g.rowind[q], EntrySource::Static(prog.g.values[q])));
            }
        }
        for i in 0..p {
            entries.push((n + i, n + i, EntrySource::RegNeg));
        }
        for (b, (c, &o)) in prog.cones.iter().zip(offsets).enumerate() {
            match *c {
                Cone::Nonnegative(d) => {
                    for i in 0..d {
                        entries.push((n + p + o + i, n + p + o + i, EntrySource::NonnegDiag(o + i)));
                    }
                }
                Cone::SecondOrder(d) => {
                    for i in 0..d {
                        for j in i..d {
                            entries.push((
                                n + p + o + i,
                                n + p + o + j,
                                EntrySource::SocEntry { block: b, i, j, diag: i == j },
                            ));
                        }
                    }
                }
            }
        }

        // Fill-reducing ordering on the adjacency of the full pattern.
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); dim];
        for &(i, j, _) in &entries {
            if i != j {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
        let perm = min_degree_ordering(dim, &adjacency);
        let mut iperm = vec![0usize; dim];
        for (k, &pk) in perm.iter().enumerate() {
            iperm[pk] = k;
        }

        // Build the permuted upper-triangular CSC pattern and the mapping
        // from each entry to its slot in the values array.
        let mut keyed: Vec<(usize, usize, usize)> = entries
            .iter()
            .enumerate()
            .map(|(k, &(i, j, _))| {
                let (mut a, mut b) = (iperm[i], iperm[j]);
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                (b, a, k) // sort by column then row
            })
            .collect();
        keyed.sort_unstable();
        let mut colptr = vec![0usize; dim + 1];
        let mut rowind = Vec::with_capacity(keyed.len());
        let mut entry_pos = vec![0usize; entries.len()];
        for &(col, row, k) in &keyed {
            entry_pos[k] = rowind.len();
            rowind.push(row);
            colptr[col + 1] += 1;
        }
        for c in 0..dim {
            colptr[c + 1] += colptr[c];
        }
        let upper = CscMatrix {
            nrows: dim,
            ncols: dim,
            colptr,
            rowind,
            values: vec![0.0; entries.len()],
        };

        let mut expected_sign = vec![0.0; dim];
        for i in 0..dim {
            expected_sign[iperm[i]] = if i < n { 1.0 } else { -1.0 };
        }

        let factor = LdlFactor::analyze(&upper);
        let entry_srcs: Vec<EntrySource> = entries.into_iter().map(|(_, _, s)| s).collect();
        let nnz = upper.values.len();
        KktSystem {
            dim,
            perm,
            upper,
            true_values: vec![0.0; nnz],
            entry_pos,
            entry_src: entry_srcs,
            expected_sign,
            factor,
            work: vec![0.0; dim],
            resid: vec![0.0; dim],
            corr: vec![0.0; dim],
            refine_steps: settings.refine_steps,
            last_rel_resid: 0.0,
        }
    }

    /// Refreshes the W^2 entries and refactors.
    fn refactor(
        &mut self,
        scaling: Option<&NtScaling>,
        cones: &[Cone],
        _offsets: &[usize],
        delta: f64,
    ) {
        // Cache dense W^2 blocks for SOC cones.
        let mut soc_w2: Vec<Option<Vec<f64>>> = vec![None; cones.len()];
        if let Some(sc) = scaling {
            for (b, c) in cones.iter().enumerate() {
                if let Cone::SecondOrder(d) = *c {
                    soc_w2[b] = Some(sc.soc_w2_dense(b, d));
                }
            }
        }
        for (k, src) in self.entry_src.iter().enumerate() {
            // (true value, regularized value) per entry.
            let (vt, vr) = match *src {
                EntrySource::Static(v) => (v, v),
                EntrySource::RegPos => (0.0, delta),
                EntrySource::RegNeg => (0.0, -delta),
                EntrySource::NonnegDiag(row) => {
                    let w2 = match scaling {
                        Some(sc) => sc.w2_diag[row],
                        None => 1.0,
                    };
                    (-w2, -w2 - delta)
                }
                EntrySource::SocEntry { block, i, j, diag } => {
                    let w2 = match &soc_w2[block] {
                        Some(m) => {
                            let d = cones[block].dim();
                            m[i + j * d]
                        }
                        None => {
                            if diag {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    (-w2, -w2 - if diag { delta } else { 0.0 })
                }
            };
            self.true_values[self.entry_pos[k]] = vt;
            self.upper.values[self.entry_pos[k]] = vr;
        }
        self.factor.factor(&self.upper, &self.expected_sign, 1e-13, 1e-7);
    }

    /// Solves K u = rhs with monitored iterative refinement; rhs is in
    /// original (unpermuted) coordinates and is overwritten by the solution.
    /// Corrections that increase the residual are reverted, and the relative
    /// residual of the accepted solution is recorded in `last_rel_resid` so
    /// the caller can detect a failed factorization.
    fn solve(&mut self, rhs: &mut [f64]) {
        debug_assert_eq!(rhs.len(), self.dim);
        for k in 0..self.dim {
            self.work[k] = rhs[self.perm[k]];
        }
        let b_perm: Vec<f64> = self.work.clone();
        let bscale = 1.0 + inf_norm(&b_perm);
        self.factor.solve(&mut self.work);
        // Refine against the unregularized matrix: this removes both the
        // static-regularization bias and factorization error, monitored so a
        // diverging correction is dropped.
        std::mem::swap(&mut self.upper.values, &mut self.true_values);
        let mut rel = {
            self.resid.copy_from_slice(&b_perm);
            sym_upper_axpy(&self.upper, -1.0, &self.work, &mut self.resid);
            inf_norm(&self.resid) / bscale
        };
        for _ in 0..self.refine_steps {
            if rel <= 1e-14 || !rel.is_finite() {
                break;
            }
            self.corr.copy_from_slice(&self.resid);
            self.factor.solve(&mut self.corr);
            for k in 0..self.dim {
                self.corr[k] += self.work[k];
            }
            self.resid.copy_from_slice(&b_perm);
            sym_upper_axpy(&self.upper, -1.0, &self.corr, &mut self.resid);
            let rel_new = inf_norm(&self.resid) / bscale;
            if !(rel_new < rel) {
                break;
            }
            std::mem::swap(&mut self.work, &mut self.corr);
            rel = rel_new;
        }
        std::mem::swap(&mut self.upper.values, &mut self.true_values);
        self.last_rel_resid = rel;
        for k in 0..self.dim {
            rhs[self.perm[k]] = self.work[k];
        }
    }
}

// ---------------------------------------------------------------------------
// Main interior-point loop
// ---------------------------------------------------------------------------

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves an already presolved/equilibrated program.
pub fn solve_scaled(prog: &ConicProgram, settings: &SolverSettings) -> SolverSolution {
    let n = prog.n_vars();
    let p = prog.n_eq();
    let m = prog.cone_dim();
    let cones = &prog.cones;
    let offsets = cone_offsets(cones);
    let nu = barrier_degree(cones);
    let e = cone_identity(cones);

    let fail = |status: SolverStatus| SolverSolution {
        x: vec![0.0; n],
        y: vec![0.0; p],
        z: vec![0.0; m],
        s: vec![0.0; m],
        status,
        iterations: 0,
        duality_gap: f64::NAN,
        objective: f64::NAN,
    };
    if m == 0 {
        // Pure equality problems do not arise from the transcription; treat
        // as numerical trouble rather than special-casing them.
        return fail(SolverStatus::NumericalTrouble);
    }

    let mut kkt = KktSystem::new(prog, &offsets, settings);

    // --- Initialization (identity scaling). ---
    kkt.refactor(None, cones, &offsets, settings.static_reg);
    let dim = n + p + m;
    let mut rhs1 = vec![0.0; dim];
    rhs1[n..n + p].copy_from_slice(&prog.b_eq);
    rhs1[n + p..].copy_from_slice(&prog.h);
    kkt.solve(&mut rhs1);
    let mut x: Vec<f64> = rhs1[..n].to_vec();
    // Row 3 reads G x - z = h, so the slack candidate is -z.
    let mut s: Vec<f64> = rhs1[n + p..].iter().map(|v| -v).collect();
    let mut rhs2 = vec![0.0; dim];
    for j in 0..n {
        rhs2[j] = -prog.c[j];
    }
    kkt.solve(&mut rhs2);
    let mut y: Vec<f64> = rhs2[n..n + p].to_vec();
    let mut z: Vec<f64> = rhs2[n + p..].to_vec();
    let shift = |v: &mut [f64], cones: &[Cone], offsets: &[usize], e: &[f64]| {
        let me = cone_min_eig(cones, offsets, v);
        if me <= 0.0 {
            for i in 0..v.len() {
                v[i] += (1.0 - me) * e[i];
            }
        }
    };
    shift(&mut s, cones, &offsets, &e);
    shift(&mut z, cones, &offsets, &e);
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let resx0 = f64::max(1.0, inf_norm(&prog.c));
    let resy0 = f64::max(1.0, inf_norm(&prog.b_eq));
    let resz0 = f64::max(1.0, inf_norm(&prog.h));

    let mut rx = vec![0.0; n];
    let mut ry = vec![0.0; p];
    let mut rz = vec![0.0; m];
    let mut lam_ds = vec![0.0; m];
    let mut w_lds = vec![0.0; m];
    let mut ds = vec![0.0; m];
    let mut dz_scaled_s = vec![0.0; m]; // W^{-1} ds_aff
    let mut dz_scaled_z = vec![0.0; m]; // W dz_aff
    let mut corr = vec![0.0; m];
    let mut d_s = vec![0.0; m];
    let mut u1 = vec![0.0; dim];
    let mut u2 = vec![0.0; dim];

    let mut iterations = 0;
    let mut status = SolverStatus::MaxIterations;

    // Best iterate seen so far, by worst-case optimality metric. Late
    // iterations can degrade numerically once mu reaches the floating-point
    // floor; in that case the best iterate is returned instead, and accepted
    // as optimal at a relaxed tolerance.
    let relaxed_tol = settings.tol.max(1e-6);
    let mut best_metric = f64::INFINITY;
    let mut best_snap: Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64)> = None;
    let mut stall = 0usize;
    let mut certificate = false;

    for iter in 0..settings.max_iter {
        iterations = iter;
        // Residuals of the homogeneous embedding.
        for j in 0..n {
            rx[j] = -prog.c[j] * tau;
        }
        prog.a_eq.axpy_t(-1.0, &y, &mut rx);
        prog.g.axpy_t(-1.0, &z, &mut rx);
        for i in 0..p {
            ry[i] = -prog.b_eq[i] * tau;
        }
        prog.a_eq.axpy(1.0, &x, &mut ry);
        for i in 0..m {
            rz[i] = s[i] - prog.h[i] * tau;
        }
        prog.g.axpy(1.0, &x, &mut rz);
        let cx = dot(&prog.c, &x);
        let by = dot(&prog.b_eq, &y);
        let hz = dot(&prog.h, &z);
        let rtau = kappa + cx + by + hz;

        let mu = (dot(&s, &z) + tau * kappa) / (nu + 1.0);

        // Termination checks.
        let pres = f64::max(inf_norm(&ry) / resy0, inf_norm(&rz) / resz0) / tau;
        let dres = inf_norm(&rx) / (resx0 * tau);
        let pcost = cx / tau;
        let dcost = -(by + hz) / tau;
        let gap = dot(&s, &z) / (tau * tau);
        let relgap = gap / f64::max(1.0, f64::min(pcost.abs(), dcost.abs()));
        if pres <= settings.tol && dres <= settings.tol && relgap <= settings.tol {
            status = SolverStatus::Optimal;
            break;
        }
        let metric = pres.max(dres).max(relgap);
        if metric < best_metric {
            best_metric = metric;
            best_snap = Some((x.clone(), y.clone(), z.clone(), s.clone(), tau));
            stall = 0;
        } else {
            stall += 1;
            if stall >= 15 {
                break;
            }
        }
        // Infeasibility certificates.
        let bt = -(by + hz);
        if bt > settings.tol {
            let mut aty = vec![0.0; n];
            prog.a_eq.axpy_t(1.0, &y, &mut aty);
            prog.g.axpy_t(1.0, &z, &mut aty);
            if inf_norm(&aty) / resx0 <= settings.tol * bt {
                for v in y.iter_mut() {
                    *v /= bt;
                }
                for v in z.iter_mut() {
                    *v /= bt;
                }
                status = SolverStatus::PrimalInfeasible;
                certificate = true;
                break;
            }
        }
        let ct = -cx;
        if ct > settings.tol {
            let mut ax = vec![0.0; p];
            prog.a_eq.axpy(1.0, &x, &mut ax);
            let mut gxs = s.clone();
            prog.g.axpy(1.0, &x, &mut gxs);
            if f64::max(inf_norm(&ax) / resy0, inf_norm(&gxs) / resz0) <= settings.tol * ct {
                for v in x.iter_mut() {
                    *v /= ct;
                }
                for v in s.iter_mut() {
                    *v /= ct;
                }
                status = SolverStatus::DualInfeasible;
                certificate = true;
                break;
            }
        }

        // NT scaling and KKT refactorization.
        let scaling = match NtScaling::compute(cones, &offsets, &s, &z) {
            Some(sc) => sc,
            None => {
                status = SolverStatus::NumericalTrouble;
                break;
            }
        };
        // Factor with the static regularization, escalating it when the
        // factorization is too poor to deliver a usable solve (detected via
        // the refined residual of the common solve K u1 = [-c; b; h]).
        let mut delta = settings.static_reg;
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        loop {
            kkt.refactor(Some(&scaling), cones, &offsets, delta);
            for j in 0..n {
                u1[j] = -prog.c[j];
            }
            u1[n..n + p].copy_from_slice(&prog.b_eq);
            u1[n + p..].copy_from_slice(&prog.h);
            kkt.solve(&mut u1);
            let keep = match &best {
                Some((r, _, _)) => kkt.last_rel_resid < *r,
                None => true,
            };
            if keep {
                best = Some((kkt.last_rel_resid, delta, u1.clone()));
            }
            if kkt.last_rel_resid <= 1e-8 || delta >= 1e-4 {
                break;
            }
            delta *= 100.0;
        }
        // Adopt the best attempt; later solves this iteration reuse the
        // factorization, so refactor at the winning delta if it was not the
        // last one tried.
        let (best_rel, best_delta, best_u1) = best.unwrap();
        if best_delta != delta {
            kkt.refactor(Some(&scaling), cones, &offsets, best_delta);
        }
        u1.copy_from_slice(&best_u1);
        kkt.last_rel_resid = best_rel;
        let delta = best_delta;
        if std::env::var("SOCP_DEBUG").is_ok() {
            eprintln!(
                "  |u1| {:.3e} relres {:.3e} delta {:.1e} bumps {}",
                inf_norm(&u1),
                kkt.last_rel_resid,
                delta,
                kkt.factor.dynamic_bumps
            );
        }
        // The raw dot product c'x1 + b'y1 + h'z1 cancels catastrophically as
        // the iterate converges; by the KKT identity it equals
        // -(||W z1||^2 + delta ||u1||^2), which is computed stably.
        let xi1 = {
            let mut wz1 = vec![0.0; m];
            scaling.apply_w(cones, &offsets, &u1[n + p..], &mut wz1);
            -(dot(&wz1, &wz1) + delta * dot(&u1, &u1))
        };
        let denom_base = xi1 - kappa / tau;

        // Direction computation shared by predictor and corrector.
        let compute_direction =
            |kkt: &mut KktSystem,
             d_s: &[f64],
             one_minus_sigma: f64,
             d_tau_rhs: f64,
             d_kappa_rhs: f64,
             u2: &mut Vec<f64>,
             lam_ds: &mut Vec<f64>,
             w_lds: &mut Vec<f64>,
             ds_out: &mut Vec<f64>|
             -> (f64, f64) {
                scaling.lambda_solve(cones, &offsets, d_s, lam_ds);
                scaling.apply_w(cones, &offsets, lam_ds, w_lds);
                for j in 0..n {
                    u2[j] = one_minus_sigma * rx[j];
                }
                for i in 0..p {
                    u2[n + i] = -one_minus_sigma * ry[i];
                }
                for i in 0..m {
                    u2[n + p + i] = -one_minus_sigma * rz[i] - w_lds[i];
                }
                kkt.solve(u2);
                let xi2 = dot(&prog.c, &u2[..n])
                    + dot(&prog.b_eq, &u2[n..n + p])
                    + dot(&prog.h, &u2[n + p..]);
                let dtau = (d_tau_rhs - d_kappa_rhs / tau - xi2) / denom_base;
                for k in 0..dim {
                    u2[k] += dtau * u1[k];
                }
                // ds = W(lambda \ d_s) - W^2 dz
                let dz = &u2[n + p..];
                let mut wdz = vec![0.0; m];
                scaling.apply_w(cones, &offsets, dz, &mut wdz);
                let mut w2dz = vec![0.0; m];
                scaling.apply_w(cones, &offsets, &wdz, &mut w2dz);
                for i in 0..m {
                    ds_out[i] = w_lds[i] - w2dz[i];
                }
                let dkappa = (d_kappa_rhs - kappa * dtau) / tau;
                (dtau, dkappa)
            };

        // Predictor (affine) direction: d_s = -lambda o lambda.
        jordan_product(cones, &offsets, &scaling.lambda, &scaling.lambda, &mut d_s);
        for v in d_s.iter_mut() {
            *v = -*v;
        }
        let (dtau_a, dkappa_a) = compute_direction(
            &mut kkt,
            &d_s.clone(),
            1.0,
            -rtau,
            -tau * kappa,
            &mut u2,
            &mut lam_ds,
            &mut w_lds,
            &mut ds,
        );
        let dz_aff: Vec<f64> = u2[n + p..].to_vec();
        let ds_aff = ds.clone();

        // Affine step length.
        let mut alpha_aff = 1.0f64;
        alpha_aff = alpha_aff.min(cone_max_step(cones, &offsets, &s, &ds_aff));
        alpha_aff = alpha_aff.min(cone_max_step(cones, &offsets, &z, &dz_aff));
        if dtau_a < 0.0 {
            alpha_aff = alpha_aff.min(-tau / dtau_a);
        }
        if dkappa_a < 0.0 {
            alpha_aff = alpha_aff.min(-kappa / dkappa_a);
        }
        alpha_aff = alpha_aff.min(1.0);

        let mut mu_aff = (tau + alpha_aff * dtau_a) * (kappa + alpha_aff * dkappa_a);
        for i in 0..m {
            mu_aff += (s[i] + alpha_aff * ds_aff[i]) * (z[i] + alpha_aff * dz_aff[i]);
        }
        mu_aff /= nu + 1.0;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector: d_s = -lambda o lambda - (W^{-1} ds_aff) o (W dz_aff) + sigma mu e.
        scaling.apply_winv(cones, &offsets, &ds_aff, &mut dz_scaled_s);
        scaling.apply_w(cones, &offsets, &dz_aff, &mut dz_scaled_z);
        jordan_product(cones, &offsets, &dz_scaled_s, &dz_scaled_z, &mut corr);
        jordan_product(cones, &offsets, &scaling.lambda, &scaling.lambda, &mut d_s);
        for i in 0..m {
            d_s[i] = -d_s[i] - corr[i] + sigma * mu * e[i];
        }
        let d_kappa_rhs = -tau * kappa - dtau_a * dkappa_a + sigma * mu;
        let (dtau, dkappa) = compute_direction(
            &mut kkt,
            &d_s.clone(),
            1.0 - sigma,
            -(1.0 - sigma) * rtau,
            d_kappa_rhs,
            &mut u2,
            &mut lam_ds,
            &mut w_lds,
            &mut ds,
        );
        let dz_c: Vec<f64> = u2[n + p..].to_vec();

        let mut alpha = 1.0f64;
        alpha = alpha.min(cone_max_step(cones, &offsets, &s, &ds));
        alpha = alpha.min(cone_max_step(cones, &offsets, &z, &dz_c));
        if dtau < 0.0 {
            alpha = alpha.min(-tau / dtau);
        }
        if dkappa < 0.0 {
            alpha = alpha.min(-kappa / dkappa);
        }
        alpha = (0.99 * alpha).min(1.0);
        if std::env::var("SOCP_DEBUG").is_ok() {
            eprintln!(
                "it {iter}: mu {mu:.3e} pres {pres:.3e} dres {dres:.3e} gap {relgap:.3e} \
                 a_aff {alpha_aff:.3e} sigma {sigma:.3e} alpha {alpha:.3e} tau {tau:.3e} kappa {kappa:.3e} dtau {dtau:.3e} \
                 xi1 {xi1:.3e} k/t {:.3e} dtau_a {dtau_a:.3e} dkappa_a {dkappa_a:.3e}",
                kappa / tau
            );
        }
        let dir_finite = dtau.is_finite()
            && dkappa.is_finite()
            && u2.iter().all(|v| v.is_finite())
            && ds.iter().all(|v| v.is_finite());
        if !dir_finite || !alpha.is_finite() || alpha < 1e-10 {
            status = SolverStatus::NumericalTrouble;
            break;
        }

        for j in 0..n {
            x[j] += alpha * u2[j];
        }
        for i in 0..p {
            y[i] += alpha * u2[n + i];
        }
        for i in 0..m {
            z[i] += alpha * dz_c[i];
            s[i] += alpha * ds[i];
        }
        tau += alpha * dtau;
        kappa += alpha * dkappa;
    }

    // Fall back to the best iterate when the loop ended without a
    // certificate and without meeting the strict tolerance.
    if !certificate && status != SolverStatus::Optimal {
        if let Some((bx, by_, bz, bs, btau)) = best_snap {
            x = bx;
            y = by_;
            z = bz;
            s = bs;
            tau = btau;
            if best_metric <= relaxed_tol {
                status = SolverStatus::Optimal;
            }
        }
    }

    // Map the homogeneous iterate back to problem space.
    let scale = match status {
        SolverStatus::PrimalInfeasible | SolverStatus::DualInfeasible => 1.0,
        _ => tau,
    };
    let xs: Vec<f64> = x.iter().map(|v| v / scale).collect();
    let ys: Vec<f64> = y.iter().map(|v| v / scale).collect();
    let zs: Vec<f64> = z.iter().map(|v| v / scale).collect();
    let ss: Vec<f64> = s.iter().map(|v| v / scale).collect();
    let objective = dot(&prog.c, &xs);
    let duality_gap = dot(&ss, &zs);
    SolverSolution {
        x: xs,
        y: ys,
        z: zs,
        s: ss,
        status,
        iterations: iterations + 1,
        duality_gap,
        objective,
    }
}
