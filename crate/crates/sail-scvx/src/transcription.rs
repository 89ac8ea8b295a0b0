//! Discrete free-final-time transcription and the linearized convex
//! sub-problem.
//!
//! The nonlinear discrete update (Eq. 14) advances each node pair with the
//! blended accelerations of both endpoints; linearizing it about a reference
//! iterate yields the per-pair Jacobians A = ∂f_r/∂Γ and B = ∂f_v/∂Γ over the
//! 19-component stacked variable Γ = [Δt, r_k, r_{k+1}, v_k, v_{k+1}, u_k,
//! u_{k+1}]. `assemble_problem` emits the full sub-problem as a standard-form
//! cone program in a frozen variable layout shared with `extract_iterate`.

use nalgebra::{Matrix3, SMatrix, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::ephemeris::{elements_to_state, EphemerisError, OrbitalElements, StateVector};
use crate::sail::{
    manifold_gradient, manifold_residual, rtn_frame, total_accel, EquivalentControl, SailError,
};
use crate::scp::IterateSolution;
use crate::socp::sparse::CscMatrix;
use crate::socp::{Cone, ConicProgram, SolverSolution, SolverStatus};
use crate::units::CanonicalUnits;

#[derive(Debug, Error)]
pub enum TranscriptionError {
    #[error(transparent)]
    Sail(#[from] SailError),
    #[error(transparent)]
    Ephemeris(#[from] EphemerisError),
    #[error("control reference has u1 = {0} < 0")]
    NegativeConeComponent(f64),
    #[error("non-finite Jacobian entry at node pair {0}")]
    NonFiniteJacobian(usize),
    #[error("cannot extract iterate from solver status {0:?}")]
    NotOptimal(SolverStatus),
}

/// Uniform time grid t[k] = t0 + k·Δt, k = 0..N−1 (Eq. 12).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizationGrid {
    pub n_nodes: usize,
    /// Node spacing in canonical time units.
    pub dt: f64,
    /// Departure time in canonical units (0 by convention).
    pub t0: f64,
}

impl DiscretizationGrid {
    pub fn new(n_nodes: usize, dt: f64) -> DiscretizationGrid {
        assert!(n_nodes >= 2, "grid needs at least two nodes");
        assert!(dt > 0.0, "node spacing must be positive");
        DiscretizationGrid { n_nodes, dt, t0: 0.0 }
    }

    /// Index of the final node, k_f = N − 1.
    pub fn k_f(&self) -> usize {
        self.n_nodes - 1
    }

    pub fn t(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Final time t_f = t0 + (N−1)Δt.
    pub fn t_f(&self) -> f64 {
        self.t(self.k_f())
    }
}

/// Stacked node-pair variable Γ[k] of Eqs. (17)–(18).
///
/// The 19-column ordering [Δt, r_k, r_{k+1}, v_k, v_{k+1}, u_k, u_{k+1}] is
/// frozen; every Jacobian in this module uses it.
#[derive(Debug, Clone, Copy)]
pub struct NodePairVariables {
    pub dt: f64,
    pub r_k: Vector3<f64>,
    pub r_k1: Vector3<f64>,
    pub v_k: Vector3<f64>,
    pub v_k1: Vector3<f64>,
    pub u_k: EquivalentControl,
    pub u_k1: EquivalentControl,
}

impl NodePairVariables {
    /// Flattens into the frozen 19-component column ordering.
    pub fn to_vec(&self) -> [f64; 19] {
        let mut g = [0.0; 19];
        g[0] = self.dt;
        for i in 0..3 {
            g[1 + i] = self.r_k[i];
            g[4 + i] = self.r_k1[i];
            g[7 + i] = self.v_k[i];
            g[10 + i] = self.v_k1[i];
            g[13 + i] = self.u_k[i];
            g[16 + i] = self.u_k1[i];
        }
        g
    }

    pub fn from_vec(g: &[f64; 19]) -> NodePairVariables {
        NodePairVariables {
            dt: g[0],
            r_k: Vector3::new(g[1], g[2], g[3]),
            r_k1: Vector3::new(g[4], g[5], g[6]),
            v_k: Vector3::new(g[7], g[8], g[9]),
            v_k1: Vector3::new(g[10], g[11], g[12]),
            u_k: Vector3::new(g[13], g[14], g[15]),
            u_k1: Vector3::new(g[16], g[17], g[18]),
        }
    }
}

/// One linearized node pair: reference values f_r, f_v of Eq. (20) and the
/// Jacobians A, B of Eq. (21).
#[derive(Debug, Clone)]
pub struct LinearizedDynamics {
    pub f_r: Vector3<f64>,
    pub f_v: Vector3<f64>,
    pub a: SMatrix<f64, 3, 19>,
    pub b: SMatrix<f64, 3, 19>,
}

/// Linearization of the moving rendezvous target about the reference final
/// time (Eqs. 26/32).
#[derive(Debug, Clone)]
pub struct TerminalLinearization {
    /// Exact target state at the reference final time.
    pub x_ter_ref: StateVector,
    /// Its two-body time derivative (v, −μ r/|r|³).
    pub g_ref: [Vector3<f64>; 2],
    /// δt_f = scale · δΔt, i.e. N − 1.
    pub scale: f64,
}

/// Trust-region caps and their update parameters (Eqs. 24–25, Table 2).
#[derive(Debug, Clone, Copy)]
pub struct TrustRegionConfig {
    /// Cap on the shared control trust radius η_u (dimensionless).
    pub eta_u_max: f64,
    /// Cap on the final-time change per iteration, in days.
    pub eta_dt_max_days: f64,
    /// Multiplicative shrink applied by the loop's update policy.
    pub shrink_factor: f64,
    /// Floor below which η_u is not shrunk further.
    pub eta_u_floor: f64,
    /// Floor for the final-time cap, in days.
    pub eta_dt_floor_days: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> TrustRegionConfig {
        TrustRegionConfig {
            eta_u_max: 0.5,
            eta_dt_max_days: 18.0,
            shrink_factor: 0.75,
            eta_u_floor: 0.02,
            eta_dt_floor_days: 1e-4,
        }
    }
}

/// L1 penalty weights of the sub-problem objective (Eq. 30 / Table 2).
#[derive(Debug, Clone, Copy)]
pub struct PenaltyWeights {
    pub w_dt: f64,
    pub w_u: f64,
    pub w_av: f64,
}

impl Default for PenaltyWeights {
    fn default() -> PenaltyWeights {
        // w_av is an exact L1 penalty: any value safely above the dynamics
        // dual magnitudes (O(10) here) drives the virtual control to zero.
        // 1e4 keeps the sub-problem within double-precision interior-point
        // conditioning; reference solvers return spurious infeasibility
        // certificates at 1e7.
        PenaltyWeights { w_dt: 0.1, w_u: 0.01, w_av: 1e4 }
    }
}

/// Nonlinear discrete update of Eq. (14): blended-acceleration kinematics over
/// one node pair, no virtual control.
pub fn discrete_update(
    gamma: &NodePairVariables,
    beta: f64,
) -> Result<(Vector3<f64>, Vector3<f64>), TranscriptionError> {
    let a_k = total_accel(&gamma.r_k, &gamma.v_k, &gamma.u_k, beta)?;
    let a_k1 = total_accel(&gamma.r_k1, &gamma.v_k1, &gamma.u_k1, beta)?;
    let dt = gamma.dt;
    let r_next = gamma.r_k + gamma.v_k * dt + (a_k + a_k1 * 0.5) * (dt * dt / 3.0);
    let v_next = gamma.v_k + (a_k + a_k1) * (0.5 * dt);
    Ok((r_next, v_next))
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Partial derivatives of the total acceleration a(r, v, u) of Eq. (9) plus
/// solar gravity, with the RTN frame differentiated as a function of (r, v).
fn accel_jacobians(
    r: &Vector3<f64>,
    v: &Vector3<f64>,
    u: &EquivalentControl,
    beta: f64,
) -> Result<(Matrix3<f64>, Matrix3<f64>, Matrix3<f64>), TranscriptionError> {
    let frame = rtn_frame(r, v)?;
    let r_mag = r.norm();
    let r_hat = frame.r_hat;
    let h_hat = frame.h_hat;
    let t_hat = frame.t_hat;
    let eye = Matrix3::identity();

    // Gravity: ∂(−μ r/r³)/∂r = (μ/r³)(3 r̂ r̂ᵀ − I).
    let inv_r3 = 1.0 / (r_mag * r_mag * r_mag);
    let grav_dr = (r_hat * r_hat.transpose() * 3.0 - eye) * inv_r3;

    // Frame derivatives.
    let dr_hat_dr = (eye - r_hat * r_hat.transpose()) / r_mag;
    let h = r.cross(v);
    let h_mag = h.norm();
    let dh_hat_dh = (eye - h_hat * h_hat.transpose()) / h_mag;
    let dh_hat_dr = dh_hat_dh * (-skew(v));
    let dh_hat_dv = dh_hat_dh * skew(r);
    // t̂ = ĥ × r̂ ⇒ ∂t̂ = [ĥ]ₓ ∂r̂ − [r̂]ₓ ∂ĥ.
    let dt_hat_dr = skew(&h_hat) * dr_hat_dr - skew(&r_hat) * dh_hat_dr;
    let dt_hat_dv = -skew(&r_hat) * dh_hat_dv;

    // SRP magnitude s = β μ / r² and its radial derivative.
    let s = beta / (r_mag * r_mag);
    let dir = r_hat * u.x + h_hat * u.y + t_hat * u.z;
    let srp_dr = (dr_hat_dr * u.x + dh_hat_dr * u.y + dt_hat_dr * u.z) * s
        - dir * r_hat.transpose() * (2.0 * s / r_mag);
    let srp_dv = (dh_hat_dv * u.y + dt_hat_dv * u.z) * s;
    let mut da_du = Matrix3::zeros();
    da_du.set_column(0, &(r_hat * s));
    da_du.set_column(1, &(h_hat * s));
    da_du.set_column(2, &(t_hat * s));

    Ok((grav_dr + srp_dr, srp_dv, da_du))
}

/// Analytic Jacobians A = ∂f_r/∂Γ, B = ∂f_v/∂Γ at a reference node pair
/// (Eq. 21), columns in the frozen Γ ordering.
pub fn dynamics_jacobians(
    gamma_ref: &NodePairVariables,
    beta: f64,
) -> Result<LinearizedDynamics, TranscriptionError> {
    let dt = gamma_ref.dt;
    let a_k = total_accel(&gamma_ref.r_k, &gamma_ref.v_k, &gamma_ref.u_k, beta)?;
    let a_k1 = total_accel(&gamma_ref.r_k1, &gamma_ref.v_k1, &gamma_ref.u_k1, beta)?;
    let (dak_dr, dak_dv, dak_du) =
        accel_jacobians(&gamma_ref.r_k, &gamma_ref.v_k, &gamma_ref.u_k, beta)?;
    let (dak1_dr, dak1_dv, dak1_du) =
        accel_jacobians(&gamma_ref.r_k1, &gamma_ref.v_k1, &gamma_ref.u_k1, beta)?;

    let f_r = gamma_ref.r_k + gamma_ref.v_k * dt + (a_k + a_k1 * 0.5) * (dt * dt / 3.0);
    let f_v = gamma_ref.v_k + (a_k + a_k1) * (0.5 * dt);

    let eye = Matrix3::identity();
    let c_k = dt * dt / 3.0; // weight of a_k in the position update
    let c_k1 = dt * dt / 6.0; // weight of a_{k+1}
    let mut a = SMatrix::<f64, 3, 19>::zeros();
    a.set_column(0, &(gamma_ref.v_k + (a_k + a_k1 * 0.5) * (2.0 * dt / 3.0)));
    a.view_mut((0, 1), (3, 3)).copy_from(&(eye + dak_dr * c_k));
    a.view_mut((0, 4), (3, 3)).copy_from(&(dak1_dr * c_k1));
    a.view_mut((0, 7), (3, 3)).copy_from(&(eye * dt + dak_dv * c_k));
    a.view_mut((0, 10), (3, 3)).copy_from(&(dak1_dv * c_k1));
    a.view_mut((0, 13), (3, 3)).copy_from(&(dak_du * c_k));
    a.view_mut((0, 16), (3, 3)).copy_from(&(dak1_du * c_k1));

    let half_dt = 0.5 * dt;
    let mut b = SMatrix::<f64, 3, 19>::zeros();
    b.set_column(0, &((a_k + a_k1) * 0.5));
    b.view_mut((0, 1), (3, 3)).copy_from(&(dak_dr * half_dt));
    b.view_mut((0, 4), (3, 3)).copy_from(&(dak1_dr * half_dt));
    b.view_mut((0, 7), (3, 3)).copy_from(&(eye + dak_dv * half_dt));
    b.view_mut((0, 10), (3, 3)).copy_from(&(dak1_dv * half_dt));
    b.view_mut((0, 13), (3, 3)).copy_from(&(dak_du * half_dt));
    b.view_mut((0, 16), (3, 3)).copy_from(&(dak1_du * half_dt));

    Ok(LinearizedDynamics { f_r, f_v, a, b })
}

/// Row vector C = ∂Φ/∂u of the linearized control manifold (Eq. 23).
pub fn control_jacobian(u_ref: &EquivalentControl) -> Result<Vector3<f64>, TranscriptionError> {
    if u_ref.x < 0.0 {
        return Err(TranscriptionError::NegativeConeComponent(u_ref.x));
    }
    Ok(manifold_gradient(u_ref))
}

/// Exact target state at the reference final time plus its two-body time
/// derivative, for the moving-target terminal constraint (Eq. 32).
///
/// `t_f_ref` is canonical time past `t0_mjd`. The state is always recomputed
/// from the ephemeris, never accumulated from previous linear predictions.
pub fn linearize_terminal(
    target_elements: &OrbitalElements,
    t_f_ref: f64,
    t0_mjd: f64,
    n_nodes: usize,
    units: &CanonicalUnits,
) -> Result<TerminalLinearization, TranscriptionError> {
    let t_f_mjd = t0_mjd + units.tu_to_days(t_f_ref);
    let x_ter_ref = elements_to_state(target_elements, t_f_mjd, t0_mjd, units)?;
    let r_mag = x_ter_ref.r.norm();
    let g_ref = [x_ter_ref.v, -x_ter_ref.r / (r_mag * r_mag * r_mag)];
    Ok(TerminalLinearization { x_ter_ref, g_ref, scale: (n_nodes - 1) as f64 })
}

// ---------------------------------------------------------------------------
// Frozen sub-problem variable layout
// ---------------------------------------------------------------------------

/// Internal column scaling of the virtual-control variables: the program
/// carries ã_v = `AV_COLUMN_SCALE`·a_v so the equality coefficients and the
/// variable magnitudes stay within the double-precision comfort zone of the
/// interior-point solver, independent of the (much larger) penalty weight.
pub const AV_COLUMN_SCALE: f64 = 1e4;

/// Index map of the sub-problem decision vector (13N + 3 variables).
///
/// ```text
///   0                 δΔt
///   1 + 9k .. +3      r[k]            k = 0..N−1
///   4 + 9k .. +3      v[k]
///   7 + 9k .. +3      u[k]
///   1 + 9N + 3k       ã_v[k] = AV_COLUMN_SCALE·a_v[k]
///   1 + 12N + k       s̃_k    (epigraph of ‖ã_v[k]‖)
///   13N + 1           η_u
///   13N + 2           η_dt
/// ```
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub n: usize,
}

impl Layout {
    pub fn new(n_nodes: usize) -> Layout {
        Layout { n: n_nodes }
    }
    pub fn n_vars(&self) -> usize {
        13 * self.n + 3
    }
    pub fn ddt(&self) -> usize {
        0
    }
    pub fn r(&self, k: usize) -> usize {
        1 + 9 * k
    }
    pub fn v(&self, k: usize) -> usize {
        4 + 9 * k
    }
    pub fn u(&self, k: usize) -> usize {
        7 + 9 * k
    }
    pub fn av(&self, k: usize) -> usize {
        1 + 9 * self.n + 3 * k
    }
    pub fn s(&self, k: usize) -> usize {
        1 + 12 * self.n + k
    }
    pub fn eta_u(&self) -> usize {
        13 * self.n + 1
    }
    pub fn eta_dt(&self) -> usize {
        13 * self.n + 2
    }
}

/// Builds the linearized convex sub-problem (Problem P2) about a reference
/// iterate as a standard-form cone program.
///
/// `eta_u_cap` and `eta_dt_cap_days` are the current trust caps (post-shrink);
/// the caps in `TrustRegionConfig` are the loop's initial values.
pub fn assemble_problem(
    reference: &IterateSolution,
    initial_state: &StateVector,
    terminal: &TerminalLinearization,
    beta: f64,
    weights: &PenaltyWeights,
    eta_u_cap: f64,
    eta_dt_cap_days: f64,
    units: &CanonicalUnits,
) -> Result<ConicProgram, TranscriptionError> {
    let n = reference.grid.n_nodes;
    let lay = Layout::new(n);
    let dt_ref = reference.grid.dt;
    let nv = lay.n_vars();

    // Per-pair linearizations are independent; evaluate them in parallel.
    let pairs: Vec<Result<LinearizedDynamics, TranscriptionError>> = (0..n - 1)
        .into_par_iter()
        .map(|k| {
            let gamma = NodePairVariables {
                dt: dt_ref,
                r_k: reference.states[k].r,
                r_k1: reference.states[k + 1].r,
                v_k: reference.states[k].v,
                v_k1: reference.states[k + 1].v,
                u_k: reference.controls[k],
                u_k1: reference.controls[k + 1],
            };
            dynamics_jacobians(&gamma, beta)
        })
        .collect();
    let mut lins = Vec::with_capacity(n - 1);
    for (k, p) in pairs.into_iter().enumerate() {
        let lin = p?;
        let finite = lin.a.iter().all(|v| v.is_finite()) && lin.b.iter().all(|v| v.is_finite());
        if !finite {
            return Err(TranscriptionError::NonFiniteJacobian(k));
        }
        lins.push(lin);
    }

    // Objective (Eq. 30): t_f = (N−1)(Δt_ref + δΔt), so δΔt carries the
    // (N−1) scale; penalty terms on the shared radii and the virtual
    // epigraphs. s̃_k bounds ‖ã_v[k]‖ = AV_COLUMN_SCALE·‖a_v[k]‖, so the
    // penalty coefficient is w_av over the column scale.
    let mut c = vec![0.0; nv];
    c[lay.ddt()] = (n - 1) as f64;
    c[lay.eta_u()] = weights.w_u;
    c[lay.eta_dt()] = weights.w_dt;
    for k in 0..n {
        c[lay.s(k)] = weights.w_av / AV_COLUMN_SCALE;
    }

    // --- Equalities: 6 initial + 6 terminal + 6(N−1) dynamics + N manifold.
    let p_rows = 7 * n + 6;
    let mut arows = Vec::new();
    let mut acols = Vec::new();
    let mut avals = Vec::new();
    let mut b_eq = vec![0.0; p_rows];
    let push = |rows: &mut Vec<usize>, cols: &mut Vec<usize>, vals: &mut Vec<f64>,
                    r: usize, ccol: usize, v: f64| {
        if v != 0.0 {
            rows.push(r);
            cols.push(ccol);
            vals.push(v);
        }
    };

    let mut row = 0;
    // (b) initial condition (Eq. 31).
    for i in 0..3 {
        push(&mut arows, &mut acols, &mut avals, row, lay.r(0) + i, 1.0);
        b_eq[row] = initial_state.r[i];
        row += 1;
    }
    for i in 0..3 {
        push(&mut arows, &mut acols, &mut avals, row, lay.v(0) + i, 1.0);
        b_eq[row] = initial_state.v[i];
        row += 1;
    }
    // (c) terminal condition (Eq. 32): x[k_f] − g_ref·(N−1)·δΔt = x_ter_ref.
    let kf = n - 1;
    for i in 0..3 {
        push(&mut arows, &mut acols, &mut avals, row, lay.r(kf) + i, 1.0);
        push(&mut arows, &mut acols, &mut avals, row, lay.ddt(), -terminal.scale * terminal.g_ref[0][i]);
        b_eq[row] = terminal.x_ter_ref.r[i];
        row += 1;
    }
    for i in 0..3 {
        push(&mut arows, &mut acols, &mut avals, row, lay.v(kf) + i, 1.0);
        push(&mut arows, &mut acols, &mut avals, row, lay.ddt(), -terminal.scale * terminal.g_ref[1][i]);
        b_eq[row] = terminal.x_ter_ref.v[i];
        row += 1;
    }
    // (d) linearized dynamics (Eqs. 34–35). For pair k:
    //   x[k+1] = f_ref + J·(Γ − Γ_ref) + virtual terms, with the virtual
    //   acceleration entering like a at Δt_ref and the ã_v columns carrying
    //   1/w_av.
    let col_of = |lay: &Layout, k: usize, j: usize| -> usize {
        // Γ column j → program column for pair k.
        match j {
            0 => lay.ddt(),
            1..=3 => lay.r(k) + (j - 1),
            4..=6 => lay.r(k + 1) + (j - 4),
            7..=9 => lay.v(k) + (j - 7),
            10..=12 => lay.v(k + 1) + (j - 10),
            13..=15 => lay.u(k) + (j - 13),
            _ => lay.u(k + 1) + (j - 16),
        }
    };
    let inv_wav = 1.0 / AV_COLUMN_SCALE;
    let pos_vk = dt_ref * dt_ref / 3.0;
    let pos_vk1 = dt_ref * dt_ref / 6.0;
    let vel_v = 0.5 * dt_ref;
    for (k, lin) in lins.iter().enumerate() {
        // Reference values per Γ column for the rhs shift. The program
        // variable in the Δt column is already the deviation δΔt, so its
        // reference entry is zero, not Δt_ref.
        let gamma_ref = [
            0.0,
            reference.states[k].r[0], reference.states[k].r[1], reference.states[k].r[2],
            reference.states[k + 1].r[0], reference.states[k + 1].r[1], reference.states[k + 1].r[2],
            reference.states[k].v[0], reference.states[k].v[1], reference.states[k].v[2],
            reference.states[k + 1].v[0], reference.states[k + 1].v[1], reference.states[k + 1].v[2],
            reference.controls[k][0], reference.controls[k][1], reference.controls[k][2],
            reference.controls[k + 1][0], reference.controls[k + 1][1], reference.controls[k + 1][2],
        ];
        for i in 0..3 {
            // r[k+1] row: r[k+1] − A δΓ − virt = f_r.
            let rr = row + i;
            push(&mut arows, &mut acols, &mut avals, rr, lay.r(k + 1) + i, 1.0);
            let mut rhs = lin.f_r[i];
            for j in 0..19 {
                let aij = lin.a[(i, j)];
                if aij != 0.0 {
                    // The r[k+1] variable also appears inside Γ; merge by
                    // summing triplets (CscMatrix sums duplicates).
                    push(&mut arows, &mut acols, &mut avals, rr, col_of(&lay, k, j), -aij);
                    rhs -= aij * gamma_ref[j];
                }
            }
            push(&mut arows, &mut acols, &mut avals, rr, lay.av(k) + i, -pos_vk * inv_wav);
            push(&mut arows, &mut acols, &mut avals, rr, lay.av(k + 1) + i, -pos_vk1 * inv_wav);
            b_eq[rr] = rhs;
        }
        for i in 0..3 {
            let rr = row + 3 + i;
            push(&mut arows, &mut acols, &mut avals, rr, lay.v(k + 1) + i, 1.0);
            let mut rhs = lin.f_v[i];
            for j in 0..19 {
                let bij = lin.b[(i, j)];
                if bij != 0.0 {
                    push(&mut arows, &mut acols, &mut avals, rr, col_of(&lay, k, j), -bij);
                    rhs -= bij * gamma_ref[j];
                }
            }
            push(&mut arows, &mut acols, &mut avals, rr, lay.av(k) + i, -vel_v * inv_wav);
            push(&mut arows, &mut acols, &mut avals, rr, lay.av(k + 1) + i, -vel_v * inv_wav);
            b_eq[rr] = rhs;
        }
        row += 6;
    }
    // (f) linearized manifold (Eq. 38): C_k·u[k] = C_k·u_ref[k] − Φ(u_ref[k]).
    // Solver output can leave u1 a hair below zero; clamp before taking the
    // fractional power.
    for k in 0..n {
        let mut u_ref = reference.controls[k];
        u_ref.x = u_ref.x.max(0.0);
        let ck = control_jacobian(&u_ref)?;
        for i in 0..3 {
            push(&mut arows, &mut acols, &mut avals, row, lay.u(k) + i, ck[i]);
        }
        b_eq[row] = ck.dot(&u_ref) - manifold_residual(&u_ref);
        row += 1;
    }
    debug_assert_eq!(row, p_rows);

    // --- Cones: 6N+4 nonnegative rows, then N control-trust SOC4, then N
    //     virtual-epigraph SOC4 (14N + 4 rows total).
    let m_rows = 14 * n + 4;
    let mut grows = Vec::new();
    let mut gcols = Vec::new();
    let mut gvals = Vec::new();
    let mut h = vec![0.0; m_rows];
    let mut crow = 0;
    // (e) box bounds (Eq. 37): 0 ≤ u1 ≤ 1, |u2| ≤ 1, |u3| ≤ 1.
    for k in 0..n {
        push(&mut grows, &mut gcols, &mut gvals, crow, lay.u(k), -1.0);
        h[crow] = 0.0; // u1 ≥ 0
        crow += 1;
        push(&mut grows, &mut gcols, &mut gvals, crow, lay.u(k), 1.0);
        h[crow] = 1.0; // u1 ≤ 1
        crow += 1;
        for i in 1..3 {
            push(&mut grows, &mut gcols, &mut gvals, crow, lay.u(k) + i, 1.0);
            h[crow] = 1.0;
            crow += 1;
            push(&mut grows, &mut gcols, &mut gvals, crow, lay.u(k) + i, -1.0);
            h[crow] = 1.0;
            crow += 1;
        }
    }
    // (g) final-time trust: ±(N−1)·δΔt ≤ η_dt, and radius caps.
    let scale = (n - 1) as f64;
    push(&mut grows, &mut gcols, &mut gvals, crow, lay.ddt(), scale);
    push(&mut grows, &mut gcols, &mut gvals, crow, lay.eta_dt(), -1.0);
    crow += 1;
    push(&mut grows, &mut gcols, &mut gvals, crow, lay.ddt(), -scale);
    push(&mut grows, &mut gcols, &mut gvals, crow, lay.eta_dt(), -1.0);
    crow += 1;
    push(&mut grows, &mut gcols, &mut gvals, crow, lay.eta_u(), 1.0);
    h[crow] = eta_u_cap;
    crow += 1;
    push(&mut grows, &mut gcols, &mut gvals, crow, lay.eta_dt(), 1.0);
    h[crow] = units.days_to_tu(eta_dt_cap_days);
    crow += 1;
    debug_assert_eq!(crow, 6 * n + 4);
    // (g) per-node control trust cones: ‖u[k] − u_ref[k]‖ ≤ η_u, centered on
    // the same clamped reference the manifold rows use.
    for k in 0..n {
        push(&mut grows, &mut gcols, &mut gvals, crow, lay.eta_u(), -1.0);
        crow += 1;
        for i in 0..3 {
            push(&mut grows, &mut gcols, &mut gvals, crow, lay.u(k) + i, -1.0);
            let mut c_ref = reference.controls[k][i];
            if i == 0 {
                c_ref = c_ref.max(0.0);
            }
            h[crow] = -c_ref;
            crow += 1;
        }
    }
    // (h) virtual-control epigraphs: ‖ã_v[k]‖ ≤ s̃_k.
    for k in 0..n {
        push(&mut grows, &mut gcols, &mut gvals, crow, lay.s(k), -1.0);
        crow += 1;
        for i in 0..3 {
            push(&mut grows, &mut gcols, &mut gvals, crow, lay.av(k) + i, -1.0);
            crow += 1;
        }
    }
    debug_assert_eq!(crow, m_rows);

    let mut cones = vec![Cone::Nonnegative(6 * n + 4)];
    cones.extend(std::iter::repeat(Cone::SecondOrder(4)).take(2 * n));

    Ok(ConicProgram {
        c,
        a_eq: CscMatrix::from_triplets(p_rows, nv, &arows, &acols, &avals),
        b_eq,
        g: CscMatrix::from_triplets(m_rows, nv, &grows, &gcols, &gvals),
        h,
        cones,
    })
}

/// Unpacks a solved sub-problem back into an iterate on the updated grid.
pub fn extract_iterate(
    solution: &SolverSolution,
    grid: &DiscretizationGrid,
) -> Result<IterateSolution, TranscriptionError> {
    if solution.status != SolverStatus::Optimal {
        return Err(TranscriptionError::NotOptimal(solution.status));
    }
    let n = grid.n_nodes;
    let lay = Layout::new(n);
    assert_eq!(solution.x.len(), lay.n_vars(), "solution/layout mismatch");
    let x = &solution.x;
    let dt_new = grid.dt + x[lay.ddt()];
    let mut states = Vec::with_capacity(n);
    let mut controls = Vec::with_capacity(n);
    let mut virtual_accel = Vec::with_capacity(n);
    for k in 0..n {
        states.push(StateVector {
            r: Vector3::new(x[lay.r(k)], x[lay.r(k) + 1], x[lay.r(k) + 2]),
            v: Vector3::new(x[lay.v(k)], x[lay.v(k) + 1], x[lay.v(k) + 2]),
            t: k as f64 * dt_new,
        });
        controls.push(Vector3::new(x[lay.u(k)], x[lay.u(k) + 1], x[lay.u(k) + 2]));
        virtual_accel.push(
            Vector3::new(x[lay.av(k)], x[lay.av(k) + 1], x[lay.av(k) + 2]) / AV_COLUMN_SCALE,
        );
    }
    Ok(IterateSolution {
        grid: DiscretizationGrid::new(n, dt_new),
        states,
        controls,
        virtual_accel,
        eta_u: x[lay.eta_u()],
        eta_dt: x[lay.eta_dt()],
        objective: solution.objective,
        solver_status: solution.status,
    })
}
