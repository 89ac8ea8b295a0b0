//! Two-body ephemeris: Kepler's equation, element/state conversions, and the
//! built-in body table.
//!
//! Everything works in canonical units (AU, year/2π, μ = 1) and is exact
//! two-body motion; no perturbations.

use nalgebra::Vector3;
use thiserror::Error;

use crate::units::CanonicalUnits;

#[derive(Debug, Error, PartialEq)]
pub enum EphemerisError {
    #[error("eccentricity {0} outside supported elliptic range [0, 1)")]
    UnsupportedEccentricity(f64),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("state is not elliptic (specific energy {0} >= 0)")]
    NotElliptic(f64),
    #[error("unknown body '{0}'")]
    UnknownBody(String),
}

/// Classical Keplerian elements at a reference epoch (a Table 1 row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitalElements {
    /// Semi-major axis, AU.
    pub a: f64,
    /// Eccentricity.
    pub e: f64,
    /// Inclination, rad.
    pub i: f64,
    /// Longitude of ascending node Ω, rad.
    pub raan: f64,
    /// Argument of perihelion ω, rad.
    pub argp: f64,
    /// Mean anomaly at epoch, rad.
    pub m0: f64,
    /// Reference epoch, MJD.
    pub epoch: f64,
}

/// Heliocentric position/velocity in canonical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    /// Position, AU.
    pub r: Vector3<f64>,
    /// Velocity, AU/TU.
    pub v: Vector3<f64>,
    /// Time tag, TU past the scenario reference epoch.
    pub t: f64,
}

fn wrap_2pi(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = x % tau;
    if w < 0.0 {
        w + tau
    } else {
        w
    }
}

/// Solve Kepler's equation M = E − e sin E for the eccentric anomaly.
///
/// Newton iteration seeded at E = M + e sin M; falls back to bisection if
/// Newton has not met tolerance after 50 steps (it essentially always has).
pub fn solve_kepler(mean_anomaly: f64, e: f64) -> Result<f64, EphemerisError> {
    if !mean_anomaly.is_finite() {
        return Err(EphemerisError::NonFinite("mean_anomaly"));
    }
    if !(0.0..1.0).contains(&e) {
        return Err(EphemerisError::UnsupportedEccentricity(e));
    }
    let m = wrap_2pi(mean_anomaly);
    let mut east = m + e * m.sin();
    for _ in 0..50 {
        let f = east - e * east.sin() - m;
        if f.abs() <= 1e-14 {
            break;
        }
        east -= f / (1.0 - e * east.cos());
    }
    if (east - e * east.sin() - m).abs() > 1e-13 {
        // Bisection fallback: f is monotone increasing in E.
        let (mut lo, mut hi) = (0.0f64, std::f64::consts::TAU);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - e * mid.sin() - m < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        east = 0.5 * (lo + hi);
    }
    Ok(wrap_2pi(east))
}

impl OrbitalElements {
    pub fn new(
        a: f64,
        e: f64,
        i: f64,
        raan: f64,
        argp: f64,
        m0: f64,
        epoch: f64,
    ) -> Result<Self, EphemerisError> {
        if !(a.is_finite() && e.is_finite() && i.is_finite()) {
            return Err(EphemerisError::NonFinite("elements"));
        }
        if !(0.0..1.0).contains(&e) {
            return Err(EphemerisError::UnsupportedEccentricity(e));
        }
        Ok(OrbitalElements {
            a,
            e,
            i,
            raan: wrap_2pi(raan),
            argp: wrap_2pi(argp),
            m0: wrap_2pi(m0),
            epoch,
        })
    }

    /// Mean motion in canonical units (μ = 1).
    pub fn mean_motion(&self) -> f64 {
        self.a.powf(-1.5)
    }
}

/// Cartesian state of a body at an arbitrary MJD.
///
/// The mean anomaly is advanced by n·(t − epoch); negative offsets (epochs
/// after the evaluation time) are fine, two-body motion is time-symmetric.
/// `t_ref_mjd` fixes the canonical time origin for the returned time tag.
pub fn elements_to_state(
    el: &OrbitalElements,
    t_mjd: f64,
    t_ref_mjd: f64,
    units: &CanonicalUnits,
) -> Result<StateVector, EphemerisError> {
    if !t_mjd.is_finite() {
        return Err(EphemerisError::NonFinite("t_mjd"));
    }
    let n = el.mean_motion();
    let m = el.m0 + n * units.days_to_tu(t_mjd - el.epoch);
    let east = solve_kepler(m, el.e)?;
    let (s_e, c_e) = east.sin_cos();
    let r_mag = el.a * (1.0 - el.e * c_e);

    // Perifocal position/velocity, then a 3-1-3 rotation into heliocentric axes.
    let xp = el.a * (c_e - el.e);
    let yp = el.a * (1.0 - el.e * el.e).sqrt() * s_e;
    let vxp = -el.a.sqrt() / r_mag * s_e;
    let vyp = (el.a * (1.0 - el.e * el.e)).sqrt() / r_mag * c_e;

    let (s_o, c_o) = el.raan.sin_cos();
    let (s_i, c_i) = el.i.sin_cos();
    let (s_w, c_w) = el.argp.sin_cos();
    let row = |px: f64, py: f64| {
        Vector3::new(
            (c_o * c_w - s_o * s_w * c_i) * px + (-c_o * s_w - s_o * c_w * c_i) * py,
            (s_o * c_w + c_o * s_w * c_i) * px + (-s_o * s_w + c_o * c_w * c_i) * py,
            s_w * s_i * px + c_w * s_i * py,
        )
    };
    Ok(StateVector {
        r: row(xp, yp),
        v: row(vxp, vyp),
        t: units.mjd_to_tu(t_mjd, t_ref_mjd),
    })
}

/// Recover osculating elements from a Cartesian state (elliptic only).
///
/// The epoch of the returned elements is the state's own time tag expressed
/// in MJD via `t_ref_mjd`.
pub fn state_to_elements(
    state: &StateVector,
    t_ref_mjd: f64,
    units: &CanonicalUnits,
) -> Result<OrbitalElements, EphemerisError> {
    let r = state.r;
    let v = state.v;
    let r_mag = r.norm();
    let energy = 0.5 * v.norm_squared() - 1.0 / r_mag;
    if energy >= 0.0 {
        return Err(EphemerisError::NotElliptic(energy));
    }
    let a = -0.5 / energy;
    let h = r.cross(&v);
    let e_vec = v.cross(&h) - r / r_mag;
    let e = e_vec.norm();
    let i = (h.z / h.norm()).acos();
    let node = Vector3::new(-h.y, h.x, 0.0);
    let node_mag = node.norm();
    let (raan, argp_base) = if node_mag > 1e-12 {
        let raan = node.y.atan2(node.x);
        let cw = node.dot(&e_vec) / (node_mag * e.max(1e-300));
        let mut argp = cw.clamp(-1.0, 1.0).acos();
        if e_vec.z < 0.0 {
            argp = std::f64::consts::TAU - argp;
        }
        (raan, argp)
    } else {
        // Equatorial: measure ω from the x-axis.
        let mut argp = e_vec.y.atan2(e_vec.x);
        if h.z < 0.0 {
            argp = -argp;
        }
        (0.0, argp)
    };
    // True → eccentric → mean anomaly.
    let nu = if e > 1e-12 {
        let c_nu = (e_vec.dot(&r) / (e * r_mag)).clamp(-1.0, 1.0);
        let mut nu = c_nu.acos();
        if r.dot(&v) < 0.0 {
            nu = std::f64::consts::TAU - nu;
        }
        nu
    } else {
        // Circular: measure from the ascending node (or x-axis).
        let refdir = if node_mag > 1e-12 {
            node / node_mag
        } else {
            Vector3::x()
        };
        let mut nu = (refdir.dot(&r) / r_mag).clamp(-1.0, 1.0).acos();
        if r.dot(&h.cross(&refdir)) > 0.0 {
            nu = std::f64::consts::TAU - nu;
        }
        nu
    };
    let east = 2.0 * ((1.0 - e).sqrt() * (0.5 * nu).tan()).atan2((1.0 + e).sqrt());
    let m = east - e * east.sin();
    OrbitalElements::new(a, e, i, raan, argp_base, m, units.tu_to_mjd(state.t, t_ref_mjd))
}

/// Exact two-body advance by `dt` canonical time units.
pub fn propagate_state(
    state: &StateVector,
    dt: f64,
    units: &CanonicalUnits,
) -> Result<StateVector, EphemerisError> {
    // Lagrange f and g coefficients via the eccentric-anomaly difference;
    // robust for circular and equatorial orbits where individual elements
    // are undefined.
    let r0 = state.r;
    let v0 = state.v;
    let r0_mag = r0.norm();
    let energy = 0.5 * v0.norm_squared() - 1.0 / r0_mag;
    if energy >= 0.0 {
        return Err(EphemerisError::NotElliptic(energy));
    }
    let a = -0.5 / energy;
    let n = a.powf(-1.5);
    let sqrt_a = a.sqrt();
    // e·sin(E0) and e·cos(E0) from the state; no individual elements needed.
    let es0 = r0.dot(&v0) / sqrt_a;
    let ec0 = 1.0 - r0_mag / a;
    // Kepler's equation in the eccentric-anomaly difference dE:
    //   n dt = dE + e sinE0 (1 − cos dE) − e cosE0 sin dE.
    let m_d = n * dt;
    let mut de = m_d;
    let f = |de: f64| de + es0 * (1.0 - de.cos()) - ec0 * de.sin() - m_d;
    let fp = |de: f64| 1.0 + es0 * de.sin() - ec0 * de.cos();
    let mut ok = false;
    for _ in 0..60 {
        let fv = f(de);
        if fv.abs() <= 1e-14 {
            ok = true;
            break;
        }
        de -= fv / fp(de);
    }
    if !ok && f(de).abs() > 1e-12 {
        // Bisection fallback over one full anomaly turn around the seed.
        let tau = std::f64::consts::TAU;
        let (mut lo, mut hi) = (m_d - tau, m_d + tau);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        de = 0.5 * (lo + hi);
    }
    let (s_de, c_de) = de.sin_cos();
    let r_mag = a + (r0_mag - a) * c_de + a * es0 * s_de;
    let f_lag = 1.0 - a / r0_mag * (1.0 - c_de);
    let g_lag = dt + a * sqrt_a * (s_de - de);
    let fdot = -sqrt_a * s_de / (r_mag * r0_mag);
    let gdot = 1.0 - a / r_mag * (1.0 - c_de);
    let _ = units;
    Ok(StateVector {
        r: r0 * f_lag + v0 * g_lag,
        v: r0 * fdot + v0 * gdot,
        t: state.t + dt,
    })
}

/// Built-in Table 1 element sets.
///
/// Earth, Venus and Mars are referenced to MJD 57800; Apophis to MJD 54441.
pub fn builtin_body(name: &str) -> Result<OrbitalElements, EphemerisError> {
    let row = match name.to_ascii_lowercase().as_str() {
        "earth" => (0.9995, 0.0166, 0.0000, 3.5798, 4.4677, 0.7822, 57800.0),
        "venus" => (0.7233, 0.0067, 0.0592, 1.3375, 0.9602, 6.1517, 57800.0),
        "mars" => (1.5237, 0.0935, 0.0322, 0.8640, 5.0032, 1.0011, 57800.0),
        "apophis" => (0.9222, 0.1911, 0.0581, 3.5684, 2.2060, 3.7619, 54441.0),
        other => return Err(EphemerisError::UnknownBody(other.to_string())),
    };
    OrbitalElements::new(row.0, row.1, row.2, row.3, row.4, row.5, row.6)
}
