//! End-to-end SCP loop runs against the built-in ephemerides.

use sail_scvx::ephemeris::builtin_body;
use sail_scvx::scp::{run, ScpConfig};
use sail_scvx::units::CanonicalUnits;

#[test]
fn mars_rendezvous_converges() {
    let units = CanonicalUnits::default();
    let earth = builtin_body("earth").unwrap();
    let mars = builtin_body("mars").unwrap();
    let config = ScpConfig::default();
    let (iterate, report) = run(&config, &earth, &mars, 55840.0, 0.0843, &units).unwrap();
    for rec in &report.history {
        eprintln!(
            "it {:2} TOF {:8.3} err_u {:.2e} ddt {:.5}d av {:.1e} ipm {} {:.0}ms",
            rec.iter,
            rec.tof_days,
            rec.iter_err_u,
            rec.iter_err_dt_days,
            rec.max_av,
            rec.solver_iters,
            rec.wall_ms
        );
    }
    assert!(report.converged, "failure: {:?}", report.failure);
    let tof = iterate.tof_days(&units);
    assert!((576.4..=578.6).contains(&tof), "TOF {tof}");
    assert!(report.iterations <= 30, "{} iterations", report.iterations);
}

#[test]
fn venus_rendezvous_converges() {
    let units = CanonicalUnits::default();
    let earth = builtin_body("earth").unwrap();
    let venus = builtin_body("venus").unwrap();
    let config = ScpConfig::default();
    let (iterate, report) = run(&config, &earth, &venus, 58782.0, 0.0843, &units).unwrap();
    assert!(report.converged, "failure: {:?}", report.failure);
    assert!(report.iterations <= 24, "{} iterations", report.iterations);
    let tof = iterate.tof_days(&units);
    assert!((280.0..=290.0).contains(&tof), "TOF {tof}");
}

#[test]
fn apophis_rendezvous_converges() {
    let units = CanonicalUnits::default();
    let earth = builtin_body("earth").unwrap();
    let apophis = builtin_body("apophis").unwrap();
    let config = ScpConfig::default();
    let (iterate, report) = run(&config, &earth, &apophis, 56258.0, 0.0843, &units).unwrap();
    assert!(report.converged, "failure: {:?}", report.failure);
    assert!(report.iterations <= 32, "{} iterations", report.iterations);
    let tof = iterate.tof_days(&units);
    assert!((280.0..=290.0).contains(&tof), "TOF {tof}");
}
