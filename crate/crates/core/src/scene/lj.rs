//! Lennard-Jones tip-surface law in the 12-6 form `U = B/z^12 - A/z^6`.
//!
//! Force is `-dU/dz = 12B/z^13 - 6A/z^7`, positive when repulsive, and is
//! truncated to zero from the cutoff outwards.

use serde::{Deserialize, Serialize};

use crate::model::{ForceLaw, LawError};

use super::SceneError;

/// Default equilibrium gap (m).
pub const DEFAULT_Z_EQ: f64 = 0.3e-9;
/// Default `depth / z_eq^2` (N/m); sets the curvature scale of the well.
pub const DEFAULT_WELL_STIFFNESS: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LJParams {
    /// Attractive coefficient `A` (J m^6).
    pub attr_coeff: f64,
    /// Repulsive coefficient `B` (J m^12).
    pub rep_coeff: f64,
    /// Gap (m) at and beyond which the interaction vanishes.
    pub cutoff: f64,
}

impl Default for LJParams {
    fn default() -> Self {
        let z_eq = DEFAULT_Z_EQ;
        Self::from_well(DEFAULT_WELL_STIFFNESS * z_eq * z_eq, z_eq, 3.0 * z_eq)
    }
}

impl LJParams {
    /// Builds the law from its well depth (J) and equilibrium gap (m).
    pub fn from_well(depth: f64, z_eq: f64, cutoff: f64) -> Self {
        let z6 = z_eq.powi(6);
        Self {
            attr_coeff: 2.0 * depth * z6,
            rep_coeff: depth * z6 * z6,
            cutoff,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SceneError::Invalid(format!("LJParams.{name} must be finite and > 0, got {v}")))
            }
        };
        positive("attr_coeff", self.attr_coeff)?;
        positive("rep_coeff", self.rep_coeff)?;
        positive("cutoff", self.cutoff)?;
        if self.z_eq() >= self.cutoff {
            return Err(SceneError::Invalid(format!(
                "equilibrium gap {:e} m must lie below the cutoff {:e} m",
                self.z_eq(),
                self.cutoff
            )));
        }
        Ok(())
    }

    /// Zero-force gap `(2B/A)^(1/6)`.
    pub fn z_eq(&self) -> f64 {
        (2.0 * self.rep_coeff / self.attr_coeff).powf(1.0 / 6.0)
    }

    /// Gap of maximum attraction `(26B/7A)^(1/6)`.
    pub fn max_attraction_gap(&self) -> f64 {
        (26.0 * self.rep_coeff / (7.0 * self.attr_coeff)).powf(1.0 / 6.0)
    }

    /// Gap of the steepest positive force gradient `(13B/2A)^(1/6)`.
    pub fn max_gradient_gap(&self) -> f64 {
        (6.5 * self.rep_coeff / self.attr_coeff).powf(1.0 / 6.0)
    }

    /// Well depth `A^2 / 4B` (J).
    pub fn depth(&self) -> f64 {
        self.attr_coeff * self.attr_coeff / (4.0 * self.rep_coeff)
    }

    /// Most negative force (N), attained at [`Self::max_attraction_gap`].
    pub fn max_attraction(&self) -> f64 {
        raw_force(self.max_attraction_gap(), self)
    }

    /// Largest value of the force gradient (N/m); cantilevers softer than
    /// this snap in and off.
    pub fn max_gradient(&self) -> f64 {
        let z = self.max_gradient_gap();
        if z >= self.cutoff {
            return 0.0;
        }
        raw_gradient(z, self)
    }

    /// Untruncated potential, for zero-referencing at the cutoff.
    fn raw_potential(&self, z: f64) -> f64 {
        let inv6 = z.powi(-6);
        self.rep_coeff * inv6 * inv6 - self.attr_coeff * inv6
    }
}

fn check(z: f64) -> Result<(), LawError> {
    if z.is_finite() && z > 0.0 {
        Ok(())
    } else {
        Err(LawError::Domain { gap: z })
    }
}

fn raw_force(z: f64, p: &LJParams) -> f64 {
    let inv = 1.0 / z;
    let inv6 = inv.powi(6);
    let inv7 = inv6 * inv;
    12.0 * p.rep_coeff * inv7 * inv6 - 6.0 * p.attr_coeff * inv7
}

fn raw_gradient(z: f64, p: &LJParams) -> f64 {
    let inv = 1.0 / z;
    let inv8 = inv.powi(8);
    -156.0 * p.rep_coeff * inv8 * inv.powi(6) + 42.0 * p.attr_coeff * inv8
}

/// Interaction force (N) at gap `z`; positive pushes the tip away.
pub fn lj_force(z: f64, p: &LJParams) -> Result<f64, LawError> {
    check(z)?;
    if z >= p.cutoff {
        return Ok(0.0);
    }
    Ok(raw_force(z, p))
}

/// Analytic `d(lj_force)/dz` (N/m); zero beyond the cutoff.
pub fn lj_force_gradient(z: f64, p: &LJParams) -> Result<f64, LawError> {
    check(z)?;
    if z >= p.cutoff {
        return Ok(0.0);
    }
    Ok(raw_gradient(z, p))
}

/// Potential (J) zero-referenced at the cutoff.
pub fn lj_potential(z: f64, p: &LJParams) -> Result<f64, LawError> {
    check(z)?;
    if z >= p.cutoff {
        return Ok(0.0);
    }
    Ok(p.raw_potential(z) - p.raw_potential(p.cutoff))
}

impl ForceLaw for LJParams {
    fn force(&self, gap: f64) -> Result<f64, LawError> {
        lj_force(gap, self)
    }

    fn gradient(&self, gap: f64) -> Result<f64, LawError> {
        lj_force_gradient(gap, self)
    }

    fn potential(&self, gap: f64) -> Result<f64, LawError> {
        lj_potential(gap, self)
    }

    fn cutoff(&self) -> f64 {
        self.cutoff
    }

    fn min_gap(&self) -> Option<f64> {
        Some(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        let (a, b) = (lo.ln(), hi.ln());
        (0..n).map(move |i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
    }

    #[test]
    fn zero_force_at_equilibrium_gap() {
        let p = LJParams::default();
        let z_eq = p.z_eq();
        assert!((z_eq - DEFAULT_Z_EQ).abs() < 1e-12 * DEFAULT_Z_EQ);
        let f = lj_force(z_eq, &p).unwrap();
        // relative to the size of either term at z_eq
        let scale = 12.0 * p.rep_coeff / z_eq.powi(13);
        assert!(f.abs() < 1e-12 * scale, "f(z_eq) = {f:e}");
    }

    #[test]
    fn vanishes_beyond_cutoff() {
        let p = LJParams::default();
        for z in [p.cutoff, 1.5 * p.cutoff, 1.0] {
            assert_eq!(lj_force(z, &p).unwrap(), 0.0);
            assert_eq!(lj_force_gradient(z, &p).unwrap(), 0.0);
            assert_eq!(lj_potential(z, &p).unwrap(), 0.0);
        }
        // the truncation discards less than 0.3% of the peak attraction
        let tail = raw_force(p.cutoff * (1.0 - 1e-12), &p);
        assert!(tail.abs() < 0.003 * p.max_attraction().abs());
    }

    #[test]
    fn rejects_non_positive_gaps() {
        let p = LJParams::default();
        for z in [0.0, -1e-10, f64::NAN] {
            assert!(lj_force(z, &p).is_err());
            assert!(lj_force_gradient(z, &p).is_err());
        }
    }

    #[test]
    fn maximum_attraction_matches_grid_search() {
        let p = LJParams::default();
        let z_eq = p.z_eq();
        let n = 200_001;
        let (lo, hi) = (z_eq, p.cutoff);
        let (best_z, best_f) = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .map(|z| (z, lj_force(z, &p).unwrap()))
            .fold((0.0, f64::INFINITY), |acc, (z, f)| if f < acc.1 { (z, f) } else { acc });
        let spacing = (hi - lo) / (n - 1) as f64;
        assert!((best_z - p.max_attraction_gap()).abs() <= spacing);
        assert!((best_f - p.max_attraction()).abs() <= 1e-8 * best_f.abs());
    }

    #[test]
    fn gradient_at_equilibrium_is_negative() {
        let p = LJParams::default();
        assert!(lj_force_gradient(p.z_eq(), &p).unwrap() < 0.0);
    }

    #[test]
    fn gradient_matches_centered_difference() {
        let p = LJParams::default();
        let z_eq = p.z_eq();
        let g_max = p.max_gradient();
        for z in log_grid(0.5 * z_eq, p.cutoff * 0.999, 400) {
            let h = z * 1e-5;
            let fd = (lj_force(z + h, &p).unwrap() - lj_force(z - h, &p).unwrap()) / (2.0 * h);
            let g = lj_force_gradient(z, &p).unwrap();
            // the gradient crosses zero at the attraction peak; floor the scale there
            let scale = g.abs().max(1e-3 * g_max);
            assert!((fd - g).abs() / scale < 1e-6, "z = {z:e}: fd {fd:e} vs {g:e}");
        }
    }

    #[test]
    fn max_gradient_is_the_gradient_peak() {
        let p = LJParams::default();
        let g_max = p.max_gradient();
        let peak = log_grid(p.z_eq(), p.cutoff * 0.999, 100_000)
            .map(|z| lj_force_gradient(z, &p).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(peak <= g_max * (1.0 + 1e-12));
        assert!(peak > g_max * (1.0 - 1e-6));
        assert!(g_max > 0.1, "default well must out-stiffen the default cantilever");
    }

    #[test]
    fn potential_is_antiderivative_of_force() {
        let p = LJParams::default();
        for z in log_grid(0.7 * p.z_eq(), 0.99 * p.cutoff, 50) {
            let h = z * 1e-6;
            let du = (lj_potential(z + h, &p).unwrap() - lj_potential(z - h, &p).unwrap()) / (2.0 * h);
            let f = lj_force(z, &p).unwrap();
            let scale = f.abs().max(1e-3 * p.max_attraction().abs());
            assert!((-du - f).abs() / scale < 1e-5);
        }
    }

    #[test]
    fn equilibrium_must_sit_inside_cutoff() {
        let mut p = LJParams::default();
        p.cutoff = 0.9 * p.z_eq();
        assert!(p.validate().is_err());
        assert!(LJParams::default().validate().is_ok());
    }
}
