//! Independent validation of converged trajectories.
//!
//! Two checks back the optimizer's own convergence report. The discrete
//! defect evaluates the exact nonlinear node-to-node update — no
//! linearization, no virtual control — and differences it against the stored
//! next-node states. Reintegration solves the continuous dynamics from the
//! exact initial state with the converged control profile (linearly
//! interpolated between nodes) and compares the arrival state against the
//! target body's ephemeris at the final time. Virtual control is always
//! excluded so both checks measure physical feasibility.

use nalgebra::Vector3;

use crate::ephemeris::{elements_to_state, EphemerisError, OrbitalElements};
use crate::sail::{
    integrate_trajectory, manifold_residual, project_to_manifold, total_accel, SailError,
};
use crate::scp::IterateSolution;
use crate::units::CanonicalUnits;

/// Verification failure modes.
#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Sail(#[from] SailError),
    #[error(transparent)]
    Ephemeris(#[from] EphemerisError),
    #[error("solution has {0} nodes; need at least 2")]
    TooFewNodes(usize),
    #[error("solution arrays have inconsistent lengths")]
    InconsistentArrays,
}

/// Summary of the independent checks on one converged solution.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    /// Max over nodes of the nonlinear discrete-update position defect (AU).
    pub discrete_defect_pos_max: f64,
    /// Max over nodes of the nonlinear discrete-update velocity defect (AU/TU).
    pub discrete_defect_vel_max: f64,
    /// |r_sail(t_f) − r_target(t_f)| after continuous reintegration (AU).
    pub reintegration_pos_err: f64,
    /// |v_sail(t_f) − v_target(t_f)| after continuous reintegration (AU/TU).
    pub reintegration_vel_err: f64,
    /// max_k |Φ(u[k])|.
    pub manifold_residual_max: f64,
    /// Time of flight, days.
    pub tof_days: f64,
    /// Arrival epoch, MJD.
    pub rendezvous_mjd: f64,
}

/// Options for [`reintegrate`].
#[derive(Debug, Clone)]
pub struct VerifyParams {
    /// Relative tolerance of the adaptive integrator.
    pub rel_tol: f64,
    /// Project controls onto the manifold Φ(u)=0 (through the angles) before
    /// integrating. Off by default: the raw converged controls are what the
    /// optimizer certifies; projection is for comparison only.
    pub project_angles: bool,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self { rel_tol: 1e-12, project_angles: false }
    }
}

/// Per-node defect of the exact nonlinear discrete update.
#[derive(Debug, Clone, Copy)]
pub struct NodeDefect {
    /// Index of the interval start node.
    pub k: usize,
    /// Position defect norm (AU).
    pub pos: f64,
    /// Velocity defect norm (AU/TU).
    pub vel: f64,
}

/// Evaluates the exact nonlinear discrete update for every interval and
/// differences it against the stored next-node state.
pub fn discrete_defect(solution: &IterateSolution) -> Result<Vec<NodeDefect>, VerifyError> {
    let n = solution.grid.n_nodes;
    if n < 2 {
        return Err(VerifyError::TooFewNodes(n));
    }
    if solution.states.len() != n || solution.controls.len() != n {
        return Err(VerifyError::InconsistentArrays);
    }
    let dt = solution.grid.dt;
    let beta = solution.beta;
    let mut out = Vec::with_capacity(n - 1);
    for k in 0..n - 1 {
        let s0 = &solution.states[k];
        let s1 = &solution.states[k + 1];
        let a0 = total_accel(&s0.r, &s0.v, &solution.controls[k], beta)?;
        let a1 = total_accel(&s1.r, &s1.v, &solution.controls[k + 1], beta)?;
        let r_pred = s0.r + s0.v * dt + (a0 + 0.5 * a1) * (dt * dt / 3.0);
        let v_pred = s0.v + (a0 + a1) * (dt / 2.0);
        out.push(NodeDefect {
            k,
            pos: (r_pred - s1.r).norm(),
            vel: (v_pred - s1.v).norm(),
        });
    }
    Ok(out)
}

/// Reintegrates the continuous dynamics with the converged controls and fills
/// the report against the target body's exact ephemeris at arrival.
pub fn reintegrate(
    solution: &IterateSolution,
    target: &OrbitalElements,
    t0_mjd: f64,
    params: &VerifyParams,
    units: &CanonicalUnits,
) -> Result<VerificationReport, VerifyError> {
    let n = solution.grid.n_nodes;
    if n < 2 {
        return Err(VerifyError::TooFewNodes(n));
    }
    if solution.states.len() != n || solution.controls.len() != n {
        return Err(VerifyError::InconsistentArrays);
    }
    let defects = discrete_defect(solution)?;
    let (pos_max, vel_max) = defects
        .iter()
        .fold((0.0_f64, 0.0_f64), |(p, v), d| (p.max(d.pos), v.max(d.vel)));

    let controls: Vec<Vector3<f64>> = if params.project_angles {
        solution.controls.iter().map(project_to_manifold).collect()
    } else {
        solution.controls.clone()
    };
    let s0 = &solution.states[0];
    let (r_f, v_f) = integrate_trajectory(
        &s0.r,
        &s0.v,
        &controls,
        solution.grid.dt,
        solution.beta,
        params.rel_tol,
    )?;

    let tof_days = units.tu_to_days(solution.grid.t_f());
    let rendezvous_mjd = t0_mjd + tof_days;
    let target_state = elements_to_state(target, rendezvous_mjd, t0_mjd, units)?;

    Ok(VerificationReport {
        discrete_defect_pos_max: pos_max,
        discrete_defect_vel_max: vel_max,
        reintegration_pos_err: (r_f - target_state.r).norm(),
        reintegration_vel_err: (v_f - target_state.v).norm(),
        manifold_residual_max: solution
            .controls
            .iter()
            .map(|u| manifold_residual(u).abs())
            .fold(0.0, f64::max),
        tof_days,
        rendezvous_mjd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ephemeris::StateVector;
    use crate::scp::IterateSolution;
    use crate::socp::SolverStatus;
    use crate::transcription::DiscretizationGrid;
    use approx::assert_abs_diff_eq;

    /// A solution built by running the exact nonlinear recursion forward has
    /// zero discrete defect by construction.
    fn forward_recursion(n: usize, dt: f64, beta: f64) -> IterateSolution {
        let u = crate::sail::angles_to_u(0.4, 1.0).unwrap();
        let mut states = vec![StateVector {
            r: Vector3::new(1.0, 0.0, 0.0),
            v: Vector3::new(0.0, 1.0, 0.0),
            t: 0.0,
        }];
        for k in 0..n - 1 {
            let s0 = states[k];
            let a0 = total_accel(&s0.r, &s0.v, &u, beta).unwrap();
            // One fixed-point pass on the implicit a[k+1] dependence.
            let mut r1 = s0.r + s0.v * dt + a0 * (dt * dt / 2.0);
            let mut v1 = s0.v + a0 * dt;
            for _ in 0..50 {
                let a1 = total_accel(&r1, &v1, &u, beta).unwrap();
                r1 = s0.r + s0.v * dt + (a0 + 0.5 * a1) * (dt * dt / 3.0);
                v1 = s0.v + (a0 + a1) * (dt / 2.0);
            }
            states.push(StateVector { r: r1, v: v1, t: (k + 1) as f64 * dt });
        }
        IterateSolution {
            grid: DiscretizationGrid::new(n, dt),
            states,
            controls: vec![u; n],
            virtual_accel: vec![Vector3::zeros(); n],
            eta_u: 0.0,
            eta_dt: 0.0,
            objective: 0.0,
            solver_status: SolverStatus::Optimal,
            beta,
        }
    }

    #[test]
    fn forward_recursion_has_zero_defect() {
        let sol = forward_recursion(20, 0.05, 0.0843);
        let defects = discrete_defect(&sol).unwrap();
        for d in defects {
            assert!(d.pos <= 1e-12 && d.vel <= 1e-12, "node {}: {} {}", d.k, d.pos, d.vel);
        }
    }

    #[test]
    fn perturbed_state_is_flagged() {
        let mut sol = forward_recursion(20, 0.05, 0.0843);
        sol.states[10].r.x += 1e-3;
        let defects = discrete_defect(&sol).unwrap();
        let max = defects.iter().map(|d| d.pos).fold(0.0, f64::max);
        assert!(max > 1e-4, "max defect {max}");
    }

    #[test]
    fn zero_thrust_circular_orbit_reintegrates() {
        // One full period of a circular orbit with the sail feathered:
        // arrival must coincide with the analytic two-body state.
        let units = CanonicalUnits::default();
        let n = 50;
        let dt = std::f64::consts::TAU / (n as f64 - 1.0);
        let el = OrbitalElements::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 57800.0).unwrap();
        let mut states = Vec::new();
        for k in 0..n {
            let t_mjd = 57800.0 + units.tu_to_days(k as f64 * dt);
            states.push(elements_to_state(&el, t_mjd, 57800.0, &units).unwrap());
        }
        let sol = IterateSolution {
            grid: DiscretizationGrid::new(n, dt),
            states,
            controls: vec![Vector3::zeros(); n],
            virtual_accel: vec![Vector3::zeros(); n],
            eta_u: 0.0,
            eta_dt: 0.0,
            objective: 0.0,
            solver_status: SolverStatus::Optimal,
            beta: 0.0843,
        };
        let report =
            reintegrate(&sol, &el, 57800.0, &VerifyParams::default(), &units).unwrap();
        assert!(report.reintegration_pos_err <= 1e-10, "{}", report.reintegration_pos_err);
        assert_abs_diff_eq!(report.tof_days, 365.25, epsilon = 1e-9);
    }

    #[test]
    fn rendezvous_date_is_t0_plus_tof() {
        let sol = forward_recursion(10, 0.1, 0.0843);
        let units = CanonicalUnits::default();
        let el = OrbitalElements::new(1.5, 0.1, 0.0, 0.0, 0.0, 0.0, 57800.0).unwrap();
        let report = reintegrate(&sol, &el, 55840.0, &VerifyParams::default(), &units).unwrap();
        assert_abs_diff_eq!(report.rendezvous_mjd, 55840.0 + report.tof_days, epsilon = 0.0);
    }
}
