//! Canonical unit system: distances in AU, times in years/2π, μ_sun = 1.
//!
//! All trajectory math runs in these units; physical constants only enter
//! when converting scenario inputs (days, MJD, mm/s²) at the boundary.

/// One astronomical unit in meters.
pub const AU_M: f64 = 1.495978707e11;
/// Heliocentric gravitational parameter, m³/s².
pub const MU_SUN_M3S2: f64 = 1.32712440018e20;
/// Days per year used by the canonical time normalization.
pub const YEAR_DAYS: f64 = 365.25;
/// Solar gravitational parameter in canonical units (exact by construction).
pub const MU_SUN: f64 = 1.0;

/// Canonical unit system constants bundled for conversion helpers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalUnits {
    /// Gravitational parameter in canonical units; always 1.
    pub mu_sun: f64,
    /// Meters per distance unit (1 AU).
    pub distance_unit: f64,
    /// Seconds per canonical time unit (one year / 2π).
    pub time_unit: f64,
    /// Days per year assumed by the time normalization.
    pub year_days: f64,
}

impl Default for CanonicalUnits {
    fn default() -> Self {
        CanonicalUnits {
            mu_sun: MU_SUN,
            distance_unit: AU_M,
            time_unit: YEAR_DAYS * 86400.0 / std::f64::consts::TAU,
            year_days: YEAR_DAYS,
        }
    }
}

impl CanonicalUnits {
    /// Days → canonical time units (a year maps to 2π).
    pub fn days_to_tu(&self, days: f64) -> f64 {
        days * std::f64::consts::TAU / self.year_days
    }

    /// Canonical time units → days.
    pub fn tu_to_days(&self, tu: f64) -> f64 {
        tu * self.year_days / std::f64::consts::TAU
    }

    /// mm/s² → canonical acceleration (AU/TU²).
    pub fn mmps2_to_canonical(&self, mmps2: f64) -> f64 {
        mmps2 * 1e-3 * self.time_unit * self.time_unit / self.distance_unit
    }

    /// Canonical acceleration (AU/TU²) → mm/s².
    pub fn canonical_to_mmps2(&self, acc: f64) -> f64 {
        acc * self.distance_unit / (self.time_unit * self.time_unit) * 1e3
    }

    /// MJD → canonical time relative to a reference epoch (MJD).
    pub fn mjd_to_tu(&self, mjd: f64, epoch_mjd: f64) -> f64 {
        self.days_to_tu(mjd - epoch_mjd)
    }

    /// Canonical time relative to a reference epoch → MJD.
    pub fn tu_to_mjd(&self, tu: f64, epoch_mjd: f64) -> f64 {
        epoch_mjd + self.tu_to_days(tu)
    }
}

/// Lightness number β for a given characteristic acceleration (mm/s² at 1 AU).
pub fn beta_from_char_accel(a_c_mmps2: f64) -> f64 {
    // β = a_c / (μ/r²) evaluated at r = 1 AU, all in SI.
    a_c_mmps2 * 1e-3 * AU_M * AU_M / MU_SUN_M3S2
}

/// Characteristic acceleration at 1 AU (mm/s²) for a lightness number β.
pub fn char_accel_from_beta(beta: f64) -> f64 {
    beta * MU_SUN_M3S2 / (AU_M * AU_M) * 1e3
}

/// MJD (integer day) → Gregorian calendar date.
///
/// Fliegel–Van Flandern algorithm on the Julian day number; valid for all
/// dates of interest here.
pub fn mjd_to_calendar(mjd: f64) -> (u32, u32, i32) {
    let jdn = (mjd + 2_400_001.0).floor() as i64; // JD at noon of the civil date
    let l = jdn + 68_569;
    let n = 4 * l / 146_097;
    let l = l - (146_097 * n + 3) / 4;
    let i = 4000 * (l + 1) / 1_461_001;
    let l = l - 1461 * i / 4 + 31;
    let j = 80 * l / 2447;
    let day = l - 2447 * j / 80;
    let l = j / 11;
    let month = j + 2 - 12 * l;
    let year = 100 * (n - 49) + i + l;
    (month as u32, day as u32, year as i32)
}

/// Gregorian calendar date → MJD (midnight).
pub fn calendar_to_mjd(month: u32, day: u32, year: i32) -> f64 {
    let (m, d, y) = (month as i64, day as i64, year as i64);
    let jdn = (1461 * (y + 4800 + (m - 14) / 12)) / 4 + (367 * (m - 2 - 12 * ((m - 14) / 12))) / 12
        - (3 * ((y + 4900 + (m - 14) / 12) / 100)) / 4
        + d
        - 32075;
    jdn as f64 - 2_400_001.0
}

/// Format an MJD as `MM-DD-YYYY`, rounding to the nearest whole day.
pub fn format_mjd(mjd: f64) -> String {
    let (m, d, y) = mjd_to_calendar(mjd.round());
    format!("{m:02}-{d:02}-{y:04}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn year_is_two_pi_tu() {
        let u = CanonicalUnits::default();
        assert!((u.days_to_tu(365.25) - std::f64::consts::TAU).abs() < 1e-14);
        assert_eq!(u.days_to_tu(0.0), 0.0);
    }

    #[test]
    fn day_roundtrip_is_identity() {
        let u = CanonicalUnits::default();
        for d in [0.0, 1.0, 281.167, 577.391, 10_000.0] {
            assert!((u.tu_to_days(u.days_to_tu(d)) - d).abs() <= 1e-14 * d.max(1.0));
        }
    }

    #[test]
    fn accel_roundtrip_is_identity() {
        let u = CanonicalUnits::default();
        let a = 0.5;
        let rt = u.canonical_to_mmps2(u.mmps2_to_canonical(a));
        assert!((rt - a).abs() < 1e-14);
    }

    #[test]
    fn beta_matches_characteristic_accel() {
        // β = 0.0843 corresponds to a_c = 0.5 mm/s² within 0.5%.
        let a_c = char_accel_from_beta(0.0843);
        assert!(
            (a_c - 0.5).abs() / 0.5 < 0.005,
            "a_c for beta 0.0843 was {a_c}"
        );
        let beta = beta_from_char_accel(0.5);
        assert!((beta - 0.0843).abs() / 0.0843 < 0.005);
    }

    #[test]
    fn time_unit_definition() {
        let u = CanonicalUnits::default();
        assert!((u.time_unit - u.year_days * 86400.0 / std::f64::consts::TAU).abs() < 1e-9);
        assert_eq!(u.mu_sun, 1.0);
    }

    #[test]
    fn calendar_conversions() {
        // MJD 55840 is 2011-10-06; 59063 is 2020-08-02.
        assert_eq!(mjd_to_calendar(55840.0), (10, 6, 2011));
        assert_eq!(mjd_to_calendar(59063.0), (8, 2, 2020));
        assert_eq!(mjd_to_calendar(56258.0), (11, 27, 2012));
        assert_eq!(calendar_to_mjd(10, 26, 2019), 58782.0);
        assert_eq!(format_mjd(59063.0), "08-02-2020");
        // Round trip over a wide range of dates.
        for mjd in (40000..70000).step_by(173) {
            let (m, d, y) = mjd_to_calendar(mjd as f64);
            assert_eq!(calendar_to_mjd(m, d, y), mjd as f64);
        }
    }
}
