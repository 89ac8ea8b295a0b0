//! Successive convex programming loop.
//!
//! Starting from a coasting reference on the departure body's own orbit, each
//! iteration re-linearizes the dynamics and the moving rendezvous target about
//! the previous iterate, solves the convex sub-problem, and adopts its
//! solution as the next reference. Trust radii follow a two-phase policy: a
//! march phase with a wide fixed final-time window while the virtual control
//! heals, then — after two consecutive quiet iterations — a squeeze phase that
//! contracts both radii geometrically until the iterate stops moving.

use std::time::Instant;

use nalgebra::Vector3;
use thiserror::Error;

use crate::ephemeris::{elements_to_state, EphemerisError, OrbitalElements, StateVector};
use crate::sail::{angles_to_u, EquivalentControl, SailError};
use crate::socp::{SocpError, SolverSettings, SolverStatus};
use crate::transcription::{
    assemble_problem, extract_iterate, linearize_terminal, DiscretizationGrid, PenaltyWeights,
    TranscriptionError, TrustRegionConfig,
};
use crate::units::CanonicalUnits;

#[derive(Debug, Error)]
pub enum ScpError {
    #[error(transparent)]
    Transcription(#[from] TranscriptionError),
    #[error(transparent)]
    Socp(#[from] SocpError),
    #[error(transparent)]
    Sail(#[from] SailError),
    #[error(transparent)]
    Ephemeris(#[from] EphemerisError),
}

/// Loop parameters (Table 2 values unless noted).
#[derive(Debug, Clone)]
pub struct ScpConfig {
    pub n_nodes: usize,
    pub tof_guess_days: f64,
    pub weights: PenaltyWeights,
    pub trust: TrustRegionConfig,
    /// Control iteration tolerance ε_u.
    pub eps_u: f64,
    /// Node-spacing iteration tolerance ε_Δt, in days.
    pub eps_dt_days: f64,
    pub i_max: usize,
    /// Largest virtual-control magnitude accepted at convergence.
    pub av_accept_threshold: f64,
}

impl Default for ScpConfig {
    fn default() -> ScpConfig {
        ScpConfig {
            n_nodes: 100,
            tof_guess_days: 300.0,
            weights: PenaltyWeights::default(),
            trust: TrustRegionConfig::default(),
            eps_u: 1e-5,
            eps_dt_days: 1e-3,
            i_max: 60,
            av_accept_threshold: 1e-8,
        }
    }
}

/// One full iterate: grid, discrete trajectory, controls, and the penalty
/// diagnostics of the sub-problem that produced it.
#[derive(Debug, Clone)]
pub struct IterateSolution {
    pub grid: DiscretizationGrid,
    pub states: Vec<StateVector>,
    pub controls: Vec<EquivalentControl>,
    /// Physical (unscaled) virtual acceleration per node.
    pub virtual_accel: Vec<Vector3<f64>>,
    pub eta_u: f64,
    pub eta_dt: f64,
    pub objective: f64,
    pub solver_status: SolverStatus,
}

impl IterateSolution {
    pub fn max_virtual_accel(&self) -> f64 {
        self.virtual_accel.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    pub fn tof_days(&self, units: &CanonicalUnits) -> f64 {
        units.tu_to_days(self.grid.t_f())
    }
}

/// Per-iteration log record.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    pub dt_days: f64,
    pub tof_days: f64,
    pub iter_err_u: f64,
    pub iter_err_dt_days: f64,
    pub max_av: f64,
    pub objective: f64,
    pub solver_status: SolverStatus,
    pub solver_iters: usize,
    pub wall_ms: f64,
}

/// Outcome of the loop: convergence flag, iteration history, and the last and
/// penultimate control errors (the paper's final reported error sits above its
/// own tolerance, so both are kept explicit).
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub failure: Option<String>,
    pub final_iter_err_u: f64,
    pub penultimate_iter_err_u: Option<f64>,
}

/// Initial reference (iteration 0): the departure body's own coasting
/// trajectory sampled on the guess grid, with the fixed cone attitude
/// α = 30°, δ = 180° at every node.
pub fn initial_reference(
    departure: &OrbitalElements,
    t0_mjd: f64,
    config: &ScpConfig,
    units: &CanonicalUnits,
) -> Result<IterateSolution, ScpError> {
    let n = config.n_nodes;
    let dt = units.days_to_tu(config.tof_guess_days) / (n - 1) as f64;
    let grid = DiscretizationGrid::new(n, dt);
    let u0 = angles_to_u(30f64.to_radians(), 180f64.to_radians())?;
    let mut states = Vec::with_capacity(n);
    for k in 0..n {
        let t_mjd = t0_mjd + units.tu_to_days(grid.t(k));
        states.push(elements_to_state(departure, t_mjd, t0_mjd, units)?);
    }
    Ok(IterateSolution {
        grid,
        states,
        controls: vec![u0; n],
        virtual_accel: vec![Vector3::zeros(); n],
        eta_u: config.trust.eta_u_max,
        eta_dt: units.days_to_tu(config.trust.eta_dt_max_days),
        objective: 0.0,
        solver_status: SolverStatus::Optimal,
    })
}

/// Runs the SCP loop to convergence or `i_max` iterations.
///
/// Returns the last accepted iterate together with the report; a
/// non-converged run still returns its best iterate so callers can inspect
/// and verify it.
pub fn run(
    config: &ScpConfig,
    departure: &OrbitalElements,
    target: &OrbitalElements,
    t0_mjd: f64,
    beta: f64,
    units: &CanonicalUnits,
) -> Result<(IterateSolution, ConvergenceReport), ScpError> {
    let n = config.n_nodes;
    let scale = (n - 1) as f64;
    let mut reference = initial_reference(departure, t0_mjd, config, units)?;
    let x0 = reference.states[0];

    let mut eu_cap = config.trust.eta_u_max;
    let mut dt_cap_days = config.trust.eta_dt_max_days;
    let mut squeeze = false;
    let mut quiet = 0usize;
    let mut fails = 0usize;
    // Squeeze recovery state: the caps in force when the squeeze began, and a
    // strike counter for squeeze iterations whose virtual acceleration is
    // neither small nor decaying.
    let mut presqueeze = (eu_cap, dt_cap_days);
    let mut av_strikes = 0usize;
    let mut prev_av = f64::INFINITY;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut failure: Option<String> = None;

    let settings = SolverSettings { max_iter: 200, ..SolverSettings::default() };

    for iter in 1..=config.i_max {
        let tic = Instant::now();
        // Exact target state at the current reference final time, every
        // iteration; never accumulated from linear predictions.
        let terminal = linearize_terminal(target, reference.grid.t_f(), t0_mjd, n, units)?;
        let program = assemble_problem(
            &reference,
            &x0,
            &terminal,
            beta,
            &config.weights,
            eu_cap,
            dt_cap_days,
            units,
        )?;
        let solution = program.solve(&settings)?;
        let wall_ms = tic.elapsed().as_secs_f64() * 1e3;

        if solution.status != SolverStatus::Optimal {
            // Degenerate sub-problem (typically a trust region squeezed
            // against an infeasible linearization): widen and retry.
            fails += 1;
            eu_cap *= 2.0;
            dt_cap_days *= 2.0;
            history.push(IterationRecord {
                iter,
                dt_days: units.tu_to_days(reference.grid.dt),
                tof_days: reference.tof_days(units),
                iter_err_u: f64::NAN,
                iter_err_dt_days: f64::NAN,
                max_av: f64::NAN,
                objective: f64::NAN,
                solver_status: solution.status,
                solver_iters: solution.iterations,
                wall_ms,
            });
            if fails > 3 {
                failure = Some(format!(
                    "sub-problem solver returned {:?} in {} iterations; aborting",
                    solution.status, fails
                ));
                break;
            }
            continue;
        }

        let mut next = extract_iterate(&solution, &reference.grid)?;
        // Box constraints hold only to solver tolerance; clamp the cone
        // component so downstream fractional powers stay real.
        for u in &mut next.controls {
            u.x = u.x.max(0.0);
        }

        let err_u = next
            .controls
            .iter()
            .zip(&reference.controls)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        let ddt = next.grid.dt - reference.grid.dt;
        let err_dt_days = units.tu_to_days(ddt.abs());
        let max_av = next.max_virtual_accel();
        // Report the full objective including the constant (N−1)Δt_ref term.
        let objective = solution.objective + scale * reference.grid.dt;

        reference = next;

        // Trust-radius policy: march until quiet, then squeeze.
        if !squeeze {
            if max_av < 1e-8 && err_dt_days * scale < 0.2 * dt_cap_days {
                quiet += 1;
            } else {
                quiet = 0;
            }
            if quiet >= 2 {
                squeeze = true;
                presqueeze = (eu_cap, dt_cap_days);
                av_strikes = 0;
            }
        }
        if squeeze {
            // A healthy squeeze drains the virtual acceleration as the caps
            // contract. If it instead stagnates above the dynamics-feasibility
            // level for consecutive iterations, the squeeze fired around an
            // iterate that still violates the nonlinear dynamics; reopen the
            // trust region to its pre-squeeze size and resume the march.
            if max_av > 1e-6 && max_av > 0.5 * prev_av {
                av_strikes += 1;
            } else {
                av_strikes = 0;
            }
            if av_strikes >= 2 {
                squeeze = false;
                quiet = 0;
                eu_cap = presqueeze.0;
                dt_cap_days = presqueeze.1;
            } else {
                eu_cap *= 0.25;
                dt_cap_days *= 0.25;
            }
        } else if max_av < 1e-6 {
            eu_cap = (eu_cap * config.trust.shrink_factor).max(config.trust.eta_u_floor);
        }
        prev_av = max_av;

        history.push(IterationRecord {
            iter,
            dt_days: units.tu_to_days(reference.grid.dt),
            tof_days: reference.tof_days(units),
            iter_err_u: err_u,
            iter_err_dt_days: err_dt_days,
            max_av,
            objective,
            solver_status: SolverStatus::Optimal,
            solver_iters: solution.iterations,
            wall_ms,
        });

        if err_u <= config.eps_u
            && err_dt_days <= config.eps_dt_days
            && max_av <= config.av_accept_threshold
        {
            converged = true;
            break;
        }
    }

    if !converged && failure.is_none() {
        failure = Some(format!("not converged after {} iterations", history.len()));
    }

    let errs: Vec<f64> = history
        .iter()
        .filter(|r| r.iter_err_u.is_finite())
        .map(|r| r.iter_err_u)
        .collect();
    let report = ConvergenceReport {
        converged,
        iterations: history.len(),
        final_iter_err_u: errs.last().copied().unwrap_or(f64::NAN),
        penultimate_iter_err_u: errs.len().checked_sub(2).map(|i| errs[i]),
        history,
        failure,
    };
    Ok((reference, report))
}
