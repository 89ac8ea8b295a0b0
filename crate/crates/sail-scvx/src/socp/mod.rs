//! Embedded primal-dual interior-point solver for conic programs over
//! nonnegative and second-order cones:
//!
//! ```text
//!     minimize    c'x
//!     subject to  A x = b
//!                 G x + s = h,   s in K
//! ```
//!
//! where `K` is a product of nonnegative orthants and second-order cones.
//! The algorithm is a homogeneous self-dual embedding with Nesterov-Todd
//! scaling and a Mehrotra predictor-corrector, solving the KKT systems by
//! sparse LDL^T with a minimum-degree ordering (see [`sparse`]).

pub mod ipm;
pub mod presolve;
pub mod sparse;

use sparse::CscMatrix;
use std::fmt::Write as _;
use thiserror::Error;

/// One cone block in the product cone `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// `dim` independent nonnegative components.
    Nonnegative(usize),
    /// A second-order cone of total dimension `dim`: `x0 >= ||x1..||`.
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Nonnegative(d) | Cone::SecondOrder(d) => d,
        }
    }
}

/// Standard-form cone program data.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub c: Vec<f64>,
    pub a_eq: CscMatrix,
    pub b_eq: Vec<f64>,
    pub g: CscMatrix,
    pub h: Vec<f64>,
    pub cones: Vec<Cone>,
}

#[derive(Debug, Error)]
pub enum SocpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in program data ({0})")]
    NonFinite(&'static str),
    #[error("structurally infeasible equality row {row}: 0 = {rhs}")]
    StructurallyInfeasible { row: usize, rhs: f64 },
    #[error("unconstrained variable {col} with nonzero cost; program is unbounded")]
    UnboundedColumn { col: usize },
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalTrouble,
}

/// Solution of a cone program, in the original (unscaled) data space.
#[derive(Debug, Clone)]
pub struct SolverSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub status: SolverStatus,
    pub iterations: usize,
    pub duality_gap: f64,
    pub objective: f64,
}

/// Solver tuning knobs; the defaults are the ones the SCP loop uses.
#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Static regularization placed on the KKT diagonal.
    pub static_reg: f64,
    /// Iterative refinement sweeps per KKT solve.
    pub refine_steps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tol: 1e-8, max_iter: 100, static_reg: 1e-8, refine_steps: 8 }
    }
}

impl ConicProgram {
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn cone_dim(&self) -> usize {
        self.cones.iter().map(|c| c.dim()).sum()
    }

    /// Validates the structural invariants of the data.
    pub fn validate(&self) -> Result<(), SocpError> {
        let n = self.n_vars();
        if self.a_eq.ncols != n || self.g.ncols != n {
            return Err(SocpError::DimensionMismatch(format!(
                "c has {} entries but A has {} and G has {} columns",
                n, self.a_eq.ncols, self.g.ncols
            )));
        }
        if self.a_eq.nrows != self.b_eq.len() {
            return Err(SocpError::DimensionMismatch(format!(
                "A has {} rows but b has {}",
                self.a_eq.nrows,
                self.b_eq.len()
            )));
        }
        if self.g.nrows != self.h.len() || self.g.nrows != self.cone_dim() {
            return Err(SocpError::DimensionMismatch(format!(
                "G has {} rows, h has {}, cones sum to {}",
                self.g.nrows,
                self.h.len(),
                self.cone_dim()
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.c) {
            return Err(SocpError::NonFinite("c"));
        }
        if !finite(&self.b_eq) || !finite(&self.a_eq.values) {
            return Err(SocpError::NonFinite("equality data"));
        }
        if !finite(&self.h) || !finite(&self.g.values) {
            return Err(SocpError::NonFinite("cone data"));
        }
        Ok(())
    }

    /// Solves the program: presolve (scaling + row cleanup), interior-point
    /// solve, and mapping of the solution back to the original data space.
    pub fn solve(&self, settings: &SolverSettings) -> Result<SolverSolution, SocpError> {
        self.validate()?;
        let pre = presolve::presolve(self)?;
        let sol = ipm::solve_scaled(&pre.program, settings);
        Ok(pre.unscale_solution(sol))
    }

    /// Plain-text dump of the program for offline cross-checking.
    ///
    /// Format: a dimensions header, then one coordinate triplet per line for
    /// each matrix, then dense vectors, then the cone list.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "socp n={} p={} m={} cones={}",
            self.n_vars(),
            self.n_eq(),
            self.cone_dim(),
            self.cones.len()
        );
        let dump_mat = |name: &str, m: &CscMatrix, out: &mut String| {
            let _ = writeln!(out, "{name} nnz={}", m.nnz());
            for j in 0..m.ncols {
                for p in m.colptr[j]..m.colptr[j + 1] {
                    let _ = writeln!(out, "{} {} {:.17e}", m.rowind[p], j, m.values[p]);
                }
            }
        };
        dump_mat("A", &self.a_eq, &mut out);
        dump_mat("G", &self.g, &mut out);
        let dump_vec = |name: &str, v: &[f64], out: &mut String| {
            let _ = writeln!(out, "{name} len={}", v.len());
            for x in v {
                let _ = writeln!(out, "{x:.17e}");
            }
        };
        dump_vec("c", &self.c, &mut out);
        dump_vec("b", &self.b_eq, &mut out);
        dump_vec("h", &self.h, &mut out);
        let _ = writeln!(out, "cones");
        for c in &self.cones {
            match c {
                Cone::Nonnegative(d) => {
                    let _ = writeln!(out, "nonneg {d}");
                }
                Cone::SecondOrder(d) => {
                    let _ = writeln!(out, "soc {d}");
                }
            }
        }
        out
    }
}
