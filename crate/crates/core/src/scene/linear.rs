//! Three-part linearization of the Lennard-Jones force.
//!
//! Below the equilibrium gap the force is a repulsive line of slope
//! `-repulsive_slope`; between `z_eq` and the cutoff it is a V whose bottom
//! sits at the true maximum attraction; beyond the cutoff it is zero.

use serde::{Deserialize, Serialize};

use crate::model::{ForceLaw, LawError};

use super::lj::{lj_force_gradient, LJParams};

/// Fraction of `z_eq` at which the repulsive slope is sampled from the true law.
pub const CONTACT_POINT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearLaw {
    /// `[z_eq, z_max_attraction, cutoff]`, strictly increasing (m).
    pub breakpoints: [f64; 3],
    /// Magnitude of the slope of the repulsive segment (N/m).
    pub repulsive_slope: f64,
    /// Force at the middle breakpoint (N, negative).
    pub well_force: f64,
}

/// Linearizes `p`, taking the repulsive slope from the true gradient at
/// `0.9 z_eq`.
pub fn linearize_lj(p: &LJParams) -> PiecewiseLinearLaw {
    let z_eq = p.z_eq();
    let slope = lj_force_gradient(CONTACT_POINT * z_eq, p)
        .map(f64::abs)
        .unwrap_or(f64::NAN);
    PiecewiseLinearLaw {
        breakpoints: [z_eq, p.max_attraction_gap(), p.cutoff],
        repulsive_slope: slope,
        well_force: p.max_attraction(),
    }
}

impl PiecewiseLinearLaw {
    pub fn with_repulsive_slope(mut self, slope: f64) -> Self {
        self.repulsive_slope = slope;
        self
    }

    /// Slope of the segment climbing from the well back to zero at the cutoff.
    pub fn ascending_slope(&self) -> f64 {
        let [_, z2, z3] = self.breakpoints;
        -self.well_force / (z3 - z2)
    }

    fn descending_slope(&self) -> f64 {
        let [z1, z2, _] = self.breakpoints;
        self.well_force / (z2 - z1)
    }

    fn value(&self, z: f64) -> f64 {
        let [z1, z2, z3] = self.breakpoints;
        if z < z1 {
            self.repulsive_slope * (z1 - z)
        } else if z < z2 {
            self.well_force * (z - z1) / (z2 - z1)
        } else if z < z3 {
            self.well_force * (z3 - z) / (z3 - z2)
        } else {
            0.0
        }
    }

    /// `U(z) = integral of f from z to the cutoff`, so `-dU/dz = f` and
    /// `U = 0` beyond the cutoff.
    fn energy(&self, z: f64) -> f64 {
        let [z1, z2, z3] = self.breakpoints;
        let w = self.well_force;
        let tail = |z: f64| 0.5 * w * (z3 - z) * (z3 - z) / (z3 - z2);
        if z >= z3 {
            0.0
        } else if z >= z2 {
            tail(z)
        } else if z >= z1 {
            tail(z2) + 0.5 * w * ((z2 - z1) - (z - z1) * (z - z1) / (z2 - z1))
        } else {
            tail(z2) + 0.5 * w * (z2 - z1) + 0.5 * self.repulsive_slope * (z1 - z) * (z1 - z)
        }
    }
}

fn check(z: f64) -> Result<(), LawError> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(LawError::Domain { gap: z })
    }
}

// The linear wall has no singularity, so negative gaps (indentation past the
// surface plane) stay in the domain.
impl ForceLaw for PiecewiseLinearLaw {
    fn force(&self, gap: f64) -> Result<f64, LawError> {
        check(gap)?;
        Ok(self.value(gap))
    }

    /// Right-sided slope at the breakpoints.
    fn gradient(&self, gap: f64) -> Result<f64, LawError> {
        check(gap)?;
        let [z1, z2, z3] = self.breakpoints;
        Ok(if gap < z1 {
            -self.repulsive_slope
        } else if gap < z2 {
            self.descending_slope()
        } else if gap < z3 {
            self.ascending_slope()
        } else {
            0.0
        })
    }

    fn potential(&self, gap: f64) -> Result<f64, LawError> {
        check(gap)?;
        Ok(self.energy(gap))
    }

    fn cutoff(&self) -> f64 {
        self.breakpoints[2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::lj::lj_force;

    #[test]
    fn structural_invariants() {
        let p = LJParams::default();
        let law = linearize_lj(&p);
        let [z1, z2, z3] = law.breakpoints;
        assert!(z1 < z2 && z2 < z3);
        assert_eq!(z1, p.z_eq());
        assert_eq!(z3, p.cutoff);
        assert_eq!(law.force(z1).unwrap(), 0.0);
        for z in [z3, 1.01 * z3, 10.0 * z3] {
            assert_eq!(law.force(z).unwrap(), 0.0);
        }
        for zb in law.breakpoints {
            let below = law.force(zb * (1.0 - 1e-12)).unwrap();
            let above = law.force(zb).unwrap();
            let scale = law.well_force.abs() + law.repulsive_slope * zb;
            assert!((below - above).abs() <= 1e-10 * scale);
        }
        assert_eq!(law.force(z2).unwrap(), p.max_attraction());
        let expected_slope = lj_force_gradient(0.9 * p.z_eq(), &p).unwrap().abs();
        assert_eq!(law.repulsive_slope, expected_slope);
    }

    #[test]
    fn agrees_with_true_law_at_equilibrium_and_beyond_cutoff() {
        let p = LJParams::default();
        let law = linearize_lj(&p);
        assert_eq!(law.force(p.z_eq()).unwrap(), 0.0);
        assert!(lj_force(p.z_eq(), &p).unwrap().abs() < 1e-20);
        for z in [p.cutoff, 2.0 * p.cutoff] {
            assert_eq!(law.force(z).unwrap(), lj_force(z, &p).unwrap());
        }
    }

    // Frozen measurement: with breakpoints at (z_eq, z*, cutoff) the V cannot
    // follow the curved attractive branch any closer than this.
    #[test]
    fn deviation_from_true_law_is_frozen() {
        let p = LJParams::default();
        let law = linearize_lj(&p);
        let peak = p.max_attraction().abs();
        let worst = |lo: f64| {
            let n = 100_000;
            (0..=n)
                .map(|i| lo + (p.cutoff - lo) * i as f64 / n as f64)
                .map(|z| (law.force(z).unwrap() - lj_force(z, &p).unwrap()).abs())
                .fold(0.0, f64::max)
                / peak
        };
        let attractive = worst(p.z_eq());
        assert!((attractive - 0.586).abs() < 0.005, "{attractive}");
        let with_wall = worst(0.8 * p.z_eq());
        assert!((with_wall - 23.68).abs() < 0.05, "{with_wall}");
    }

    #[test]
    fn gradient_and_potential_are_consistent() {
        let law = linearize_lj(&LJParams::default());
        let [z1, z2, z3] = law.breakpoints;
        for &z in &[0.5 * z1, -z1, 0.5 * (z1 + z2), 0.5 * (z2 + z3)] {
            let h = 1e-4 * z1;
            let fd = (law.force(z + h).unwrap() - law.force(z - h).unwrap()) / (2.0 * h);
            let g = law.gradient(z).unwrap();
            assert!((fd - g).abs() <= 1e-6 * g.abs());
            let du = (law.potential(z + h).unwrap() - law.potential(z - h).unwrap()) / (2.0 * h);
            let f = law.force(z).unwrap();
            assert!((-du - f).abs() <= 1e-6 * f.abs().max(1e-3 * law.well_force.abs()));
        }
        // continuity of the potential across breakpoints
        for zb in law.breakpoints {
            let a = law.potential(zb * (1.0 - 1e-12)).unwrap();
            let b = law.potential(zb).unwrap();
            assert!((a - b).abs() <= 1e-9 * law.potential(z1).unwrap().abs());
        }
    }

    #[test]
    fn ascending_segment_is_softer_than_true_peak_gradient() {
        let p = LJParams::default();
        let law = linearize_lj(&p);
        let ratio = law.ascending_slope() / p.max_gradient();
        assert!((ratio - 0.190).abs() < 0.001, "{ratio}");
    }
}
