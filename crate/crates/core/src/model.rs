//! Mass-interaction engine: 1-DOF point masses joined by spring-dampers and
//! arbitrary force-law links, advanced by a fixed-step semi-implicit Euler
//! integrator.
//!
//! Positions are vertical coordinates (positive up). A link acting between
//! masses `a` and `b` sees the signed separation `x[b] - x[a]`; a positive
//! link force pushes the two masses apart.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Reasons a force law may refuse to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum LawError {
    /// The separation is outside the law's domain (e.g. the `z -> 0` singularity).
    #[error("separation {gap:e} m is outside the force law domain")]
    Domain { gap: f64 },
}

/// A one-dimensional interaction law `f(gap)` with its derivative and potential.
///
/// Positive force is repulsive. `potential` is referenced so that it is zero
/// wherever the force is identically zero at large separation.
pub trait ForceLaw: fmt::Debug + Send + Sync {
    fn force(&self, gap: f64) -> Result<f64, LawError>;
    fn gradient(&self, gap: f64) -> Result<f64, LawError>;
    fn potential(&self, gap: f64) -> Result<f64, LawError>;
    /// Separation beyond which the law contributes nothing.
    fn cutoff(&self) -> f64;
    /// Smallest admissible separation, if the law is singular below it.
    fn min_gap(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassPoint {
    pub mass: f64,
    pub anchored: bool,
    pub position: f64,
    pub velocity: f64,
}

impl MassPoint {
    pub fn free(mass: f64, position: f64) -> Self {
        Self {
            mass,
            anchored: false,
            position,
            velocity: 0.0,
        }
    }

    /// A point with infinite inertia; `step` never moves it.
    pub fn anchored(position: f64) -> Self {
        Self {
            mass: f64::INFINITY,
            anchored: true,
            position,
            velocity: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpringDamper {
    pub a: usize,
    pub b: usize,
    pub stiffness: f64,
    pub damping: f64,
    pub rest_length: f64,
}

impl SpringDamper {
    /// Tension-positive convention: returns the force applied to `a`; `b`
    /// receives the exact negation.
    fn force_on_a(&self, masses: &[MassPoint]) -> f64 {
        let (ma, mb) = (&masses[self.a], &masses[self.b]);
        let extension = mb.position - ma.position - self.rest_length;
        self.stiffness * extension + self.damping * (mb.velocity - ma.velocity)
    }

    fn energy(&self, masses: &[MassPoint]) -> f64 {
        let extension = masses[self.b].position - masses[self.a].position - self.rest_length;
        0.5 * self.stiffness * extension * extension
    }
}

/// Spring-damper from a mass to a fixed reference height.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundSpring {
    pub mass: usize,
    pub stiffness: f64,
    pub damping: f64,
    pub anchor: f64,
}

impl GroundSpring {
    fn force(&self, masses: &[MassPoint]) -> f64 {
        let m = &masses[self.mass];
        -self.stiffness * (m.position - self.anchor) - self.damping * m.velocity
    }

    fn energy(&self, masses: &[MassPoint]) -> f64 {
        let d = masses[self.mass].position - self.anchor;
        0.5 * self.stiffness * d * d
    }
}

#[derive(Debug, Clone)]
pub struct ForceLawLink {
    pub a: usize,
    pub b: usize,
    pub law: Arc<dyn ForceLaw>,
}

#[derive(Debug, Clone)]
pub enum Link {
    Spring(SpringDamper),
    Ground(GroundSpring),
    Law(ForceLawLink),
}

impl Link {
    /// Network masses touched by the link; ground links have one.
    pub fn endpoints(&self) -> (usize, Option<usize>) {
        match self {
            Link::Spring(s) => (s.a, Some(s.b)),
            Link::Ground(g) => (g.mass, None),
            Link::Law(l) => (l.a, Some(l.b)),
        }
    }
}

/// Why a network stopped advancing.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FaultKind {
    #[error("non-finite force")]
    NonFiniteForce,
    #[error("non-finite state")]
    NonFiniteState,
    #[error(transparent)]
    Law(#[from] LawError),
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("fault at tick {tick} on mass {mass}: {kind}")]
pub struct Fault {
    pub tick: u64,
    pub mass: usize,
    pub kind: FaultKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("timestep must be finite and > 0, got {0}")]
    Timestep(f64),
    #[error("mass {index} has invalid inertia {mass}")]
    Mass { index: usize, mass: f64 },
    #[error("link {link} references missing mass {mass}")]
    Endpoint { link: usize, mass: usize },
    #[error("link {link} has negative stiffness or damping")]
    Coefficients { link: usize },
    #[error("link {link} connects mass {mass} to itself")]
    SelfLink { link: usize, mass: usize },
}

/// A set of masses and links sharing one fixed timestep.
#[derive(Debug, Clone)]
pub struct Network {
    masses: Vec<MassPoint>,
    links: Vec<Link>,
    external: Vec<f64>,
    forces: Vec<f64>,
    timestep: f64,
    tick: u64,
    fault: Option<Fault>,
}

impl Network {
    pub fn new(masses: Vec<MassPoint>, links: Vec<Link>, timestep: f64) -> Result<Self, NetworkError> {
        if !(timestep.is_finite() && timestep > 0.0) {
            return Err(NetworkError::Timestep(timestep));
        }
        for (index, m) in masses.iter().enumerate() {
            if !m.anchored && !(m.mass.is_finite() && m.mass > 0.0) {
                return Err(NetworkError::Mass { index, mass: m.mass });
            }
        }
        for (i, link) in links.iter().enumerate() {
            let (a, b) = link.endpoints();
            for mass in std::iter::once(a).chain(b) {
                if mass >= masses.len() {
                    return Err(NetworkError::Endpoint { link: i, mass });
                }
            }
            if b == Some(a) {
                return Err(NetworkError::SelfLink { link: i, mass: a });
            }
            let (k, c) = match link {
                Link::Spring(s) => (s.stiffness, s.damping),
                Link::Ground(g) => (g.stiffness, g.damping),
                Link::Law(_) => (0.0, 0.0),
            };
            if !(k >= 0.0 && c >= 0.0) {
                return Err(NetworkError::Coefficients { link: i });
            }
        }
        let n = masses.len();
        Ok(Self {
            masses,
            links,
            external: vec![0.0; n],
            forces: vec![0.0; n],
            timestep,
            tick: 0,
            fault: None,
        })
    }

    pub fn masses(&self) -> &[MassPoint] {
        &self.masses
    }

    pub fn mass(&self, index: usize) -> &MassPoint {
        &self.masses[index]
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn timestep(&self) -> f64 {
        self.timestep
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn fault(&self) -> Option<Fault> {
        self.fault
    }

    pub fn position(&self, index: usize) -> f64 {
        self.masses[index].position
    }

    pub fn velocity(&self, index: usize) -> f64 {
        self.masses[index].velocity
    }

    /// Kinematically places a mass. Intended for anchored (driven) points.
    pub fn set_state(&mut self, index: usize, position: f64, velocity: f64) {
        let m = &mut self.masses[index];
        m.position = position;
        m.velocity = velocity;
    }

    /// Turns an anchored point into a free one of the given mass, or back.
    pub fn set_inertia(&mut self, index: usize, mass: Option<f64>) -> Result<(), NetworkError> {
        let m = &mut self.masses[index];
        match mass {
            Some(value) if value.is_finite() && value > 0.0 => {
                m.mass = value;
                m.anchored = false;
            }
            Some(value) => return Err(NetworkError::Mass { index, mass: value }),
            None => {
                m.mass = f64::INFINITY;
                m.anchored = true;
            }
        }
        Ok(())
    }

    /// Adds an exogenous force for the next `step`; inputs accumulate.
    pub fn apply_force(&mut self, index: usize, force: f64) {
        self.external[index] += force;
    }

    /// Per-link forces this tick as `(on_a, on_b)` pairs. For ground links the
    /// second entry is the reaction taken up by the fixed anchor.
    pub fn link_forces(&self) -> Result<Vec<(f64, f64)>, LawError> {
        self.links
            .iter()
            .map(|link| match link {
                Link::Spring(s) => {
                    let f = s.force_on_a(&self.masses);
                    Ok((f, -f))
                }
                Link::Ground(g) => {
                    let f = g.force(&self.masses);
                    Ok((f, -f))
                }
                Link::Law(l) => {
                    let f = l.law.force(self.masses[l.b].position - self.masses[l.a].position)?;
                    Ok((-f, f))
                }
            })
            .collect()
    }

    /// Advances one tick: `v += F/m * h` then `x += v * h` for every free mass.
    ///
    /// A faulted network refuses to advance and keeps returning its fault.
    pub fn step(&mut self) -> Result<(), Fault> {
        if let Some(fault) = self.fault {
            return Err(fault);
        }
        let tick = self.tick;
        self.forces.copy_from_slice(&self.external);
        self.external.iter_mut().for_each(|f| *f = 0.0);

        for link in &self.links {
            match link {
                Link::Spring(s) => {
                    let f = s.force_on_a(&self.masses);
                    self.forces[s.a] += f;
                    self.forces[s.b] -= f;
                }
                Link::Ground(g) => self.forces[g.mass] += g.force(&self.masses),
                Link::Law(l) => {
                    let gap = self.masses[l.b].position - self.masses[l.a].position;
                    let f = match l.law.force(gap) {
                        Ok(f) => f,
                        Err(e) => return Err(self.raise(tick, l.b, e.into())),
                    };
                    self.forces[l.a] -= f;
                    self.forces[l.b] += f;
                }
            }
        }

        let h = self.timestep;
        for (i, (m, &f)) in self.masses.iter_mut().zip(&self.forces).enumerate() {
            if m.anchored {
                continue;
            }
            if !f.is_finite() {
                self.fault = Some(Fault {
                    tick,
                    mass: i,
                    kind: FaultKind::NonFiniteForce,
                });
                return Err(self.fault.unwrap());
            }
            m.velocity += f / m.mass * h;
            m.position += m.velocity * h;
            if !(m.position.is_finite() && m.velocity.is_finite()) {
                self.fault = Some(Fault {
                    tick,
                    mass: i,
                    kind: FaultKind::NonFiniteState,
                });
                return Err(self.fault.unwrap());
            }
        }
        self.tick += 1;
        Ok(())
    }

    fn raise(&mut self, tick: u64, mass: usize, kind: FaultKind) -> Fault {
        let fault = Fault { tick, mass, kind };
        self.fault = Some(fault);
        fault
    }

    /// Kinetic energy of free masses plus the potential stored in every link.
    ///
    /// Anchored points carry no kinetic term. A law evaluated outside its
    /// domain yields `NaN`.
    pub fn mechanical_energy(&self) -> f64 {
        let kinetic: f64 = self
            .masses
            .iter()
            .filter(|m| !m.anchored)
            .map(|m| 0.5 * m.mass * m.velocity * m.velocity)
            .sum();
        let potential: f64 = self
            .links
            .iter()
            .map(|link| match link {
                Link::Spring(s) => s.energy(&self.masses),
                Link::Ground(g) => g.energy(&self.masses),
                Link::Law(l) => l
                    .law
                    .potential(self.masses[l.b].position - self.masses[l.a].position)
                    .unwrap_or(f64::NAN),
            })
            .sum();
        kinetic + potential
    }
}
