//! Solar-sail dynamics: RTN frame, the equivalent-control transform, SRP
//! acceleration, and continuous trajectory integration.
//!
//! The sail is ideal and perfectly reflecting; its acceleration is
//! a_s = β μ/r² (u₁ r̂ + u₂ ĥ + u₃ t̂) with the equivalent control
//! u = (cos³α, cos²α sinα cosδ, cos²α sinα sinδ) constrained to the
//! manifold Φ(u) = u₁² + u₂² + u₃² − u₁^{4/3} = 0.

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SailError {
    #[error("degenerate frame: |{0}| too small to normalize")]
    DegenerateFrame(&'static str),
    #[error("cone angle {0} outside [0, pi/2]")]
    ConeAngleRange(f64),
    #[error("integrator failed to reach requested accuracy (h = {0:.3e})")]
    StepUnderflow(f64),
}

/// Equivalent control u of Eq. (8); valid points satisfy Φ(u) = 0, u₁ ≥ 0.
pub type EquivalentControl = Vector3<f64>;

/// Radial / angular-momentum / transverse unit vectors at a state.
pub struct RtnFrame {
    pub r_hat: Vector3<f64>,
    pub h_hat: Vector3<f64>,
    pub t_hat: Vector3<f64>,
}

/// RTN frame from position and velocity.
pub fn rtn_frame(r: &Vector3<f64>, v: &Vector3<f64>) -> Result<RtnFrame, SailError> {
    let r_mag = r.norm();
    if r_mag < 1e-12 {
        return Err(SailError::DegenerateFrame("r"));
    }
    let h = r.cross(v);
    let h_mag = h.norm();
    if h_mag < 1e-12 {
        return Err(SailError::DegenerateFrame("h"));
    }
    let r_hat = r / r_mag;
    let h_hat = h / h_mag;
    Ok(RtnFrame {
        r_hat,
        h_hat,
        t_hat: h_hat.cross(&r_hat),
    })
}

/// Cone/clock angles → equivalent control (Eq. 8).
///
/// α ∈ [0, π/2] is measured from the sun line; δ is the clock angle measured
/// from ĥ in the plane perpendicular to r̂.
pub fn angles_to_u(alpha: f64, delta: f64) -> Result<EquivalentControl, SailError> {
    if !(0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&alpha) {
        return Err(SailError::ConeAngleRange(alpha));
    }
    let (sa, ca) = alpha.sin_cos();
    let (sd, cd) = delta.sin_cos();
    Ok(Vector3::new(ca * ca * ca, ca * ca * sa * cd, ca * ca * sa * sd))
}

/// Equivalent control → cone/clock angles.
///
/// The inverse of `angles_to_u` for on-manifold controls: α = acos(u₁^{1/3}),
/// δ = atan2(u₃, u₂). For u near the edge-on singularity (u₁ = 0) the clock
/// angle is taken from whatever lateral component remains.
pub fn u_to_angles(u: &EquivalentControl) -> (f64, f64) {
    let alpha = u.x.max(0.0).powf(1.0 / 3.0).clamp(0.0, 1.0).acos();
    let delta = if u.y.abs() + u.z.abs() > 0.0 {
        let d = u.z.atan2(u.y);
        if d < 0.0 {
            d + std::f64::consts::TAU
        } else {
            d
        }
    } else {
        0.0
    };
    (alpha, delta)
}

/// Manifold residual Φ(u) = u₁² + u₂² + u₃² − u₁^{4/3}.
pub fn manifold_residual(u: &EquivalentControl) -> f64 {
    u.norm_squared() - u.x.max(0.0).powf(4.0 / 3.0)
}

/// Gradient of Φ, the row vector C of the linearized manifold constraint.
pub fn manifold_gradient(u: &EquivalentControl) -> Vector3<f64> {
    let du1 = if u.x > 0.0 {
        2.0 * u.x - 4.0 / 3.0 * u.x.powf(1.0 / 3.0)
    } else {
        0.0
    };
    Vector3::new(du1, 2.0 * u.y, 2.0 * u.z)
}

/// Project a control onto the manifold by re-normalizing through the angles.
pub fn project_to_manifold(u: &EquivalentControl) -> EquivalentControl {
    let (alpha, delta) = u_to_angles(u);
    angles_to_u(alpha, delta).expect("angles from u_to_angles are always in range")
}

/// SRP acceleration for an on-manifold (or nearly so) control.
pub fn srp_accel(
    r: &Vector3<f64>,
    v: &Vector3<f64>,
    u: &EquivalentControl,
    beta: f64,
) -> Result<Vector3<f64>, SailError> {
    let frame = rtn_frame(r, v)?;
    let r2 = r.norm_squared();
    Ok((frame.r_hat * u.x + frame.h_hat * u.y + frame.t_hat * u.z) * (beta / r2))
}

/// Total acceleration: solar gravity plus SRP (μ = 1 canonical).
pub fn total_accel(
    r: &Vector3<f64>,
    v: &Vector3<f64>,
    u: &EquivalentControl,
    beta: f64,
) -> Result<Vector3<f64>, SailError> {
    let r_mag = r.norm();
    let grav = -r / (r_mag * r_mag * r_mag);
    Ok(grav + srp_accel(r, v, u, beta)?)
}

/// Dormand–Prince 5(4) adaptive integration of the sail dynamics with a
/// linearly interpolated control profile.
///
/// `controls` holds the node controls of a uniform grid with spacing `dt`;
/// integration runs from t = 0 to t = (len−1)·dt. Returns the final (r, v).
pub fn integrate_trajectory(
    r0: &Vector3<f64>,
    v0: &Vector3<f64>,
    controls: &[EquivalentControl],
    dt: f64,
    beta: f64,
    rel_tol: f64,
) -> Result<(Vector3<f64>, Vector3<f64>), SailError> {
    let n = controls.len();
    assert!(n >= 2, "need at least two control nodes");
    let t_end = (n - 1) as f64 * dt;
    let u_of_t = |t: f64| -> EquivalentControl {
        let s = (t / dt).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        let tau = s - k as f64;
        controls[k] * (1.0 - tau) + controls[k + 1] * tau
    };
    let deriv = |t: f64, y: &[f64; 6]| -> Result<[f64; 6], SailError> {
        let r = Vector3::new(y[0], y[1], y[2]);
        let v = Vector3::new(y[3], y[4], y[5]);
        let a = total_accel(&r, &v, &u_of_t(t), beta)?;
        Ok([v.x, v.y, v.z, a.x, a.y, a.z])
    };

    // Dormand–Prince RK5(4)7M coefficients.
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const B5: [f64; 7] = [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
        0.0,
    ];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let abs_tol = rel_tol * 1e-2;
    let mut t = 0.0;
    let mut y = [r0.x, r0.y, r0.z, v0.x, v0.y, v0.z];
    let mut h = (t_end / 100.0).min(0.05).max(1e-6);
    let mut k = [[0.0f64; 6]; 7];
    while t < t_end {
        if t + h > t_end {
            h = t_end - t;
        }
        k[0] = deriv(t, &y)?;
        for s in 1..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                for d in 0..6 {
                    ys[d] += h * A[s][j] * kj[d];
                }
            }
            k[s] = deriv(t + C[s] * h, &ys)?;
        }
        let mut y5 = y;
        let mut err = 0.0f64;
        for d in 0..6 {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += B5[s] * k[s][d];
                d4 += B4[s] * k[s][d];
            }
            y5[d] += h * d5;
            let scale = abs_tol + rel_tol * y[d].abs().max(y5[d].abs());
            let e = h * (d5 - d4) / scale;
            err += e * e;
        }
        let err = (err / 6.0).sqrt();
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
        h *= factor;
        if h < 1e-13 * t_end.max(1.0) {
            return Err(SailError::StepUnderflow(h));
        }
    }
    Ok((
        Vector3::new(y[0], y[1], y[2]),
        Vector3::new(y[3], y[4], y[5]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn frame_is_orthonormal_right_handed() {
        let r = Vector3::new(0.3, -1.1, 0.2);
        let v = Vector3::new(0.9, 0.3, -0.1);
        let f = rtn_frame(&r, &v).unwrap();
        assert_abs_diff_eq!(f.r_hat.norm(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.h_hat.norm(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.t_hat.norm(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.r_hat.dot(&f.h_hat), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!((f.r_hat.cross(&f.h_hat) + f.t_hat).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_frames_rejected() {
        let r = Vector3::new(1.0, 0.0, 0.0);
        assert!(rtn_frame(&r, &(r * 2.0)).is_err());
        assert!(rtn_frame(&Vector3::zeros(), &r).is_err());
    }

    #[test]
    fn angles_to_u_lands_on_manifold() {
        // Includes the paper's initial guess α = 30°, δ = 180°.
        let u = angles_to_u(30f64.to_radians(), std::f64::consts::PI).unwrap();
        assert!(manifold_residual(&u).abs() <= 1e-15);
        assert!(u.x > 0.0 && u.y < 0.0 && u.z.abs() < 1e-16);
        let (a, d) = u_to_angles(&u);
        assert_abs_diff_eq!(a, 30f64.to_radians(), epsilon = 1e-12);
        assert_abs_diff_eq!(d, std::f64::consts::PI, epsilon = 1e-12);
    }

    #[test]
    fn cone_angle_out_of_range_rejected() {
        assert!(angles_to_u(-0.1, 0.0).is_err());
        assert!(angles_to_u(2.0, 0.0).is_err());
    }

    #[test]
    fn face_on_sail_is_radial() {
        let u = angles_to_u(0.0, 1.234).unwrap();
        assert_abs_diff_eq!(u.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u.y, 0.0, epsilon = 1e-15);
        let r = Vector3::new(2.0, 0.0, 0.0);
        let v = Vector3::new(0.0, 0.5, 0.0);
        let a = srp_accel(&r, &v, &u, 0.0843).unwrap();
        // Pure radial thrust of magnitude β/r².
        assert_abs_diff_eq!(a.x, 0.0843 / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn edge_on_sail_vanishes() {
        let u = angles_to_u(std::f64::consts::FRAC_PI_2, 0.3).unwrap();
        assert!(u.norm() <= 1e-15);
    }

    #[test]
    fn manifold_gradient_matches_finite_differences() {
        let u = angles_to_u(0.7, 2.1).unwrap();
        let g = manifold_gradient(&u);
        let h = 1e-7;
        for idx in 0..3 {
            let mut up = u;
            let mut um = u;
            up[idx] += h;
            um[idx] -= h;
            let fd = (manifold_residual(&up) - manifold_residual(&um)) / (2.0 * h);
            assert_abs_diff_eq!(g[idx], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn projection_restores_manifold() {
        let mut u = angles_to_u(0.9, 4.0).unwrap();
        u.x += 0.01;
        u.y -= 0.005;
        let p = project_to_manifold(&u);
        assert!(manifold_residual(&p).abs() <= 1e-14);
        assert!((p - u).norm() < 0.05);
    }

    #[test]
    fn ballistic_integration_closes_circular_orbit() {
        let r0 = Vector3::new(1.0, 0.0, 0.0);
        let v0 = Vector3::new(0.0, 1.0, 0.0);
        let zero = Vector3::zeros();
        let n = 50;
        let controls = vec![zero; n];
        let dt = std::f64::consts::TAU / (n - 1) as f64;
        let (r, v) = integrate_trajectory(&r0, &v0, &controls, dt, 0.0843, 1e-12).unwrap();
        assert!((r - r0).norm() <= 1e-10, "position gap {}", (r - r0).norm());
        assert!((v - v0).norm() <= 1e-10);
    }
}
