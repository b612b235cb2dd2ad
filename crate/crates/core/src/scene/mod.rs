//! The virtual nano-scene: piezo, cantilever spring, tip and a deformable
//! atomic surface layer, coupled by a tip-surface force law.
//!
//! Coordinates are vertical and positive up. The undisturbed surface sits at
//! `z = 0`, so a tip height is also its gap to the undeformed surface.

pub mod lj;
pub mod linear;

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Fault, ForceLaw, ForceLawLink, GroundSpring, Link, MassPoint, Network, NetworkError, SpringDamper};

pub use lj::{lj_force, lj_force_gradient, lj_potential, LJParams};
pub use linear::{linearize_lj, PiecewiseLinearLaw};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("invalid scene parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CantileverParams {
    /// Spring constant kappa (N/m).
    pub stiffness: f64,
    pub tip_mass: f64,
    pub damping: f64,
    /// Piezo-to-tip distance of the undeflected cantilever (m).
    pub rest_length: f64,
}

impl Default for CantileverParams {
    fn default() -> Self {
        Self {
            stiffness: 0.1,
            tip_mass: 1e-4,
            damping: 2e-3,
            rest_length: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfaceParams {
    pub n_elements: usize,
    pub element_mass: f64,
    pub neighbor_stiffness: f64,
    pub anchor_stiffness: f64,
    pub element_damping: f64,
    /// Repulsive slope of the tip-surface contact (N/m), used by the
    /// linearized law.
    pub contact_slope: f64,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        Self {
            n_elements: 8,
            element_mass: 1e-3,
            neighbor_stiffness: 500.0,
            anchor_stiffness: 1000.0,
            element_damping: 2e-3,
            contact_slope: linearize_lj(&LJParams::default()).repulsive_slope,
        }
    }
}

fn require(cond: bool, what: impl FnOnce() -> String) -> Result<(), SceneError> {
    if cond {
        Ok(())
    } else {
        Err(SceneError::Invalid(what()))
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn non_negative(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

impl CantileverParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        require(positive(self.stiffness), || format!("cantilever stiffness must be > 0, got {}", self.stiffness))?;
        require(positive(self.tip_mass), || format!("tip mass must be > 0, got {}", self.tip_mass))?;
        require(non_negative(self.damping), || format!("cantilever damping must be >= 0, got {}", self.damping))?;
        require(self.rest_length.is_finite(), || "cantilever rest length must be finite".into())
    }
}

impl SurfaceParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        require(self.n_elements >= 1, || "surface needs at least one element".into())?;
        for (name, v) in [
            ("element_mass", self.element_mass),
            ("neighbor_stiffness", self.neighbor_stiffness),
            ("anchor_stiffness", self.anchor_stiffness),
            ("contact_slope", self.contact_slope),
        ] {
            require(positive(v), || format!("surface {name} must be > 0, got {v}"))?;
        }
        require(non_negative(self.element_damping), || {
            format!("surface element_damping must be >= 0, got {}", self.element_damping)
        })
    }
}

/// Parameters needed to rebuild a scene; also the scene section of a session
/// config.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub lj: LJParams,
    pub cantilever: CantileverParams,
    pub surface: SurfaceParams,
    pub use_linearized: bool,
}

/// A built scene: the network plus the indices that give it meaning.
#[derive(Debug, Clone)]
pub struct NanoScene {
    network: Network,
    params: SceneParams,
    law: Arc<dyn ForceLaw>,
    piezo: usize,
    tip: usize,
    contact: usize,
    surface: Range<usize>,
}

pub const PIEZO: usize = 0;
pub const TIP: usize = 1;

/// Builds the scene network at `timestep`, with the piezo anchored (driven
/// kinematically) and the tip hanging undeflected `initial_piezo_z - rest_length`.
pub fn build_scene(
    lj: LJParams,
    cant: CantileverParams,
    surf: SurfaceParams,
    use_linearized: bool,
    timestep: f64,
    initial_piezo_z: f64,
) -> Result<NanoScene, SceneError> {
    lj.validate()?;
    cant.validate()?;
    surf.validate()?;
    require(initial_piezo_z.is_finite(), || "initial piezo position must be finite".into())?;

    let law: Arc<dyn ForceLaw> = if use_linearized {
        Arc::new(linearize_lj(&lj).with_repulsive_slope(surf.contact_slope))
    } else {
        Arc::new(lj)
    };

    let n = surf.n_elements;
    let first = 2;
    let contact = first + n / 2;
    let mut masses = vec![
        MassPoint::anchored(initial_piezo_z),
        MassPoint::free(cant.tip_mass, initial_piezo_z - cant.rest_length),
    ];
    masses.extend((0..n).map(|_| MassPoint::free(surf.element_mass, 0.0)));

    let mut links = vec![Link::Spring(SpringDamper {
        a: TIP,
        b: PIEZO,
        stiffness: cant.stiffness,
        damping: cant.damping,
        rest_length: cant.rest_length,
    })];
    links.extend((first..first + n).map(|i| {
        Link::Ground(GroundSpring {
            mass: i,
            stiffness: surf.anchor_stiffness,
            damping: surf.element_damping,
            anchor: 0.0,
        })
    }));
    links.extend((first..first + n - 1).map(|i| {
        Link::Spring(SpringDamper {
            a: i,
            b: i + 1,
            stiffness: surf.neighbor_stiffness,
            damping: 0.0,
            rest_length: 0.0,
        })
    }));
    links.push(Link::Law(ForceLawLink {
        a: contact,
        b: TIP,
        law: law.clone(),
    }));

    let network = Network::new(masses, links, timestep)?;
    Ok(NanoScene {
        network,
        params: SceneParams {
            lj,
            cantilever: cant,
            surface: surf,
            use_linearized,
        },
        law,
        piezo: PIEZO,
        tip: TIP,
        contact,
        surface: first..first + n,
    })
}

impl NanoScene {
    pub fn from_params(params: &SceneParams, timestep: f64, initial_piezo_z: f64) -> Result<Self, SceneError> {
        build_scene(
            params.lj,
            params.cantilever,
            params.surface,
            params.use_linearized,
            timestep,
            initial_piezo_z,
        )
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn params(&self) -> &SceneParams {
        &self.params
    }

    pub fn law(&self) -> &Arc<dyn ForceLaw> {
        &self.law
    }

    pub fn kappa(&self) -> f64 {
        self.params.cantilever.stiffness
    }

    pub fn z_eq(&self) -> f64 {
        self.params.lj.z_eq()
    }

    pub fn piezo_index(&self) -> usize {
        self.piezo
    }

    pub fn tip_index(&self) -> usize {
        self.tip
    }

    pub fn contact_index(&self) -> usize {
        self.contact
    }

    pub fn surface_indices(&self) -> Range<usize> {
        self.surface.clone()
    }

    pub fn piezo_z(&self) -> f64 {
        self.network.position(self.piezo)
    }

    pub fn piezo_velocity(&self) -> f64 {
        self.network.velocity(self.piezo)
    }

    pub fn tip_z(&self) -> f64 {
        self.network.position(self.tip)
    }

    pub fn contact_z(&self) -> f64 {
        self.network.position(self.contact)
    }

    /// Tip height above the contacted surface element.
    pub fn gap(&self) -> f64 {
        self.tip_z() - self.contact_z()
    }

    /// `tip_z - piezo_z + rest_length`: positive when the tip is pushed up.
    pub fn deflection(&self) -> f64 {
        self.tip_z() - self.piezo_z() + self.params.cantilever.rest_length
    }

    /// Cantilever force `kappa * deflection`; in equilibrium this balances the
    /// tip-surface interaction (positive = repulsive).
    pub fn tip_force(&self) -> f64 {
        self.kappa() * self.deflection()
    }

    pub fn surface_displacements(&self) -> impl Iterator<Item = f64> + '_ {
        self.surface.clone().map(|i| self.network.position(i))
    }

    /// Resets every mass to rest with the piezo at `piezo_z`.
    pub fn place(&mut self, piezo_z: f64) {
        let rest = self.params.cantilever.rest_length;
        self.network.set_state(self.piezo, piezo_z, 0.0);
        self.network.set_state(self.tip, piezo_z - rest, 0.0);
        for i in self.surface.clone() {
            self.network.set_state(i, 0.0, 0.0);
        }
    }

    /// Kinematic piezo command for the next step.
    pub fn drive_piezo(&mut self, z: f64, velocity: f64) {
        self.network.set_state(self.piezo, z, velocity);
    }

    /// Gives the piezo inertia so that it is moved by forces instead.
    pub fn make_piezo_dynamic(&mut self, mass: f64) -> Result<(), SceneError> {
        Ok(self.network.set_inertia(self.piezo, Some(mass))?)
    }

    pub fn apply_piezo_force(&mut self, force: f64) {
        self.network.apply_force(self.piezo, force);
    }

    pub fn step(&mut self) -> Result<(), Fault> {
        self.network.step()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: f64 = 1.0 / 3000.0;

    fn scene(n: usize, z: f64) -> NanoScene {
        let surf = SurfaceParams {
            n_elements: n,
            ..Default::default()
        };
        build_scene(LJParams::default(), CantileverParams::default(), surf, false, H, z).unwrap()
    }

    #[test]
    fn single_element_scene_counts() {
        let s = scene(1, 5e-9);
        assert_eq!(s.network().masses().len(), 3);
        assert_eq!(s.network().links().len(), 3);
        assert!(s.network().mass(PIEZO).anchored);
        assert_eq!(s.contact_index(), 2);
    }

    #[test]
    fn larger_surface_counts() {
        let s = scene(16, 5e-9);
        assert_eq!(s.network().masses().len(), 18);
        // cantilever + 16 anchors + 15 neighbor springs + law
        assert_eq!(s.network().links().len(), 33);
        assert_eq!(s.contact_index(), 10);
    }

    #[test]
    fn rejects_invalid_bundles() {
        let bad_cant = CantileverParams {
            stiffness: -1.0,
            ..Default::default()
        };
        let err = build_scene(LJParams::default(), bad_cant, SurfaceParams::default(), false, H, 1e-9).unwrap_err();
        assert!(err.to_string().contains("stiffness"));
        let bad_surf = SurfaceParams {
            n_elements: 0,
            ..Default::default()
        };
        assert!(build_scene(LJParams::default(), CantileverParams::default(), bad_surf, false, H, 1e-9).is_err());
        let mut lj = LJParams::default();
        lj.cutoff = 0.1e-9;
        let err = build_scene(lj, CantileverParams::default(), SurfaceParams::default(), false, H, 1e-9).unwrap_err();
        assert!(err.to_string().contains("cutoff"));
    }

    #[test]
    fn tip_beyond_cutoff_is_a_fixed_point() {
        let mut s = scene(8, 5e-9);
        let before: Vec<_> = s.network().masses().to_vec();
        for _ in 0..1000 {
            s.step().unwrap();
        }
        for (a, b) in before.iter().zip(s.network().masses()) {
            assert!((a.position - b.position).abs() < 1e-15);
            assert_eq!(b.velocity, 0.0);
        }
    }

    fn slow_press(use_linearized: bool, target: f64) -> NanoScene {
        let surf = SurfaceParams::default();
        let mut s = build_scene(LJParams::default(), CantileverParams::default(), surf, use_linearized, H, 1.5e-9).unwrap();
        let speed = 1e-9;
        let ticks = ((1.5e-9 - target) / (speed * H)) as u64;
        for n in 1..=ticks {
            s.drive_piezo(1.5e-9 - speed * H * n as f64, -speed);
            s.step().unwrap();
        }
        for _ in 0..3000 {
            s.drive_piezo(target, 0.0);
            s.step().unwrap();
        }
        s
    }

    #[test]
    fn pressing_below_equilibrium_strains_the_surface() {
        for linearized in [false, true] {
            let s = slow_press(linearized, -0.5e-9);
            assert!(s.gap() < s.z_eq());
            assert!(s.tip_force() > 0.0, "repulsive contact expected");
            // the lightly damped lattice still rings; compare time averages
            let n = s.surface_indices().len();
            let mut mean = vec![0.0; n];
            let mut s = s;
            for _ in 0..3000 {
                s.drive_piezo(-0.5e-9, 0.0);
                s.step().unwrap();
                for (m, z) in mean.iter_mut().zip(s.surface_displacements()) {
                    *m += z / 3000.0;
                }
            }
            let contact = s.contact_index() - s.surface_indices().start;
            assert!(mean[contact] < 0.0, "surface must be pushed down");
            assert!(mean.iter().all(|&z| z < 0.0), "{mean:?}");
            assert!(mean.iter().all(|&z| z >= mean[contact]), "{mean:?}");
        }
    }

    #[test]
    fn adhesion_lifts_the_surface() {
        let mut s = slow_press(false, 0.1e-9);
        // retract into the adhesive regime, stopping short of snap-off
        let speed = 1e-9;
        let (from, to) = (0.1e-9, 1.2e-9);
        let ticks = ((to - from) / (speed * H)) as u64;
        for n in 1..=ticks {
            s.drive_piezo(from + speed * H * n as f64, speed);
            s.step().unwrap();
        }
        assert!(s.gap() < s.params().lj.max_gradient_gap());
        assert!(s.tip_force() < 0.0);
        assert!(s.contact_z() > 0.0, "surface element must follow the tip up");
    }
}
