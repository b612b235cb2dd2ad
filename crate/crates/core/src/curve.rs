//! Approach-retract force curves: kinematic piezo sweeps, detection of the
//! snap-in / contact / snap-off states, the contact slope and the hysteresis
//! area, plus a quasi-static equilibrium solver used as an independent
//! ground truth for the snap locations.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Fault, ForceLaw};
use crate::scene::NanoScene;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("invalid sweep: {0}")]
    Config(String),
    #[error("simulation fault during sweep: {0}")]
    Fault(#[from] Fault),
    #[error("{0} must be > 0")]
    Domain(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Approach,
    Retract,
}

/// Triangular piezo profile: down from `z_start` to `z_turn` and back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub z_start: f64,
    pub z_turn: f64,
    pub speed: f64,
    /// Trace decimation: one sample every this many ticks.
    pub ticks_per_sample: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            z_start: 3e-9,
            z_turn: -1e-9,
            speed: 1e-11,
            ticks_per_sample: 600,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self, timestep: f64) -> Result<(), CurveError> {
        if !(self.z_start.is_finite() && self.z_turn.is_finite() && self.z_start > self.z_turn) {
            return Err(CurveError::Config(format!(
                "z_start ({}) must be above z_turn ({})",
                self.z_start, self.z_turn
            )));
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(CurveError::Config(format!("speed must be > 0, got {}", self.speed)));
        }
        if self.ticks_per_sample == 0 {
            return Err(CurveError::Config("ticks_per_sample must be >= 1".into()));
        }
        if !(timestep.is_finite() && timestep > 0.0) {
            return Err(CurveError::Config(format!("timestep must be > 0, got {timestep}")));
        }
        Ok(())
    }

    /// Piezo travel between two recorded samples.
    pub fn sample_spacing(&self, timestep: f64) -> f64 {
        self.speed * timestep * self.ticks_per_sample as f64
    }

    pub fn profile(&self, timestep: f64) -> SweepProfile {
        let step = self.speed * timestep;
        let approach_ticks = ((self.z_start - self.z_turn) / step).ceil() as u64;
        SweepProfile {
            cfg: *self,
            step,
            approach_ticks,
        }
    }
}

/// Tick-indexed piezo command of a sweep. Positions are computed from the
/// tick number directly, so they are exactly monotone within each phase.
#[derive(Debug, Clone, Copy)]
pub struct SweepProfile {
    cfg: SweepConfig,
    step: f64,
    approach_ticks: u64,
}

impl SweepProfile {
    /// Total ticks of the approach and retract legs.
    pub fn len(&self) -> u64 {
        2 * self.approach_ticks
    }

    pub fn is_empty(&self) -> bool {
        self.approach_ticks == 0
    }

    /// `(piezo_z, piezo_velocity, phase)` commanded for tick `n` (1-based:
    /// tick 0 is the starting pose).
    pub fn at(&self, n: u64) -> (f64, f64, Phase) {
        let SweepConfig { z_start, z_turn, speed, .. } = self.cfg;
        if n <= self.approach_ticks {
            let z = (z_start - self.step * n as f64).max(z_turn);
            (z, -speed, Phase::Approach)
        } else {
            let k = (n - self.approach_ticks) as f64;
            let z = (z_turn + self.step * k).min(z_start);
            (z, speed, Phase::Retract)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub tick: u64,
    pub phase: Phase,
    pub piezo_z: f64,
    pub tip_z: f64,
    pub deflection: f64,
    /// Cantilever force `kappa * deflection` (N).
    pub tip_force: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForceCurveTrace {
    pub samples: Vec<TraceSample>,
}

pub const TRACE_HEADER: &str = "tick,phase,piezo_z,tip_z,deflection,tip_force";

impl ForceCurveTrace {
    pub fn approach(&self) -> impl Iterator<Item = &TraceSample> {
        self.samples.iter().filter(|s| s.phase == Phase::Approach)
    }

    pub fn retract(&self) -> impl Iterator<Item = &TraceSample> {
        self.samples.iter().filter(|s| s.phase == Phase::Retract)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CurveError> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), CurveError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, CurveError> {
        let mut r = csv::Reader::from_reader(input);
        let samples = r.deserialize().collect::<Result<Vec<TraceSample>, _>>()?;
        Ok(Self { samples })
    }
}

/// Runs one triangular sweep on `scene`, starting from rest at `z_start`.
///
/// The piezo is an anchored mass moved kinematically; nothing servoes the
/// deflection. Samples are taken after the step of every
/// `ticks_per_sample`-th tick, and always after the last one.
pub fn run_sweep(scene: &mut NanoScene, cfg: &SweepConfig) -> Result<ForceCurveTrace, CurveError> {
    let h = scene.network().timestep();
    cfg.validate(h)?;
    let profile = cfg.profile(h);
    scene.place(cfg.z_start);

    let every = cfg.ticks_per_sample as u64;
    let mut samples = Vec::with_capacity((profile.len() / every + 2) as usize);
    samples.push(sample(scene, 0, Phase::Approach));
    for n in 1..=profile.len() {
        let (z, v, phase) = profile.at(n);
        scene.drive_piezo(z, v);
        scene.step()?;
        if n % every == 0 || n == profile.len() {
            samples.push(sample(scene, n, phase));
        }
    }
    Ok(ForceCurveTrace { samples })
}

fn sample(scene: &NanoScene, tick: u64, phase: Phase) -> TraceSample {
    TraceSample {
        tick,
        phase,
        piezo_z: scene.piezo_z(),
        tip_z: scene.tip_z(),
        deflection: scene.deflection(),
        tip_force: scene.tip_force(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveEvent {
    pub piezo_z: f64,
    pub tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveEvents {
    pub snap_in: Option<CurveEvent>,
    pub snap_off: Option<CurveEvent>,
    /// Magnitude of d(force)/d(piezo_z) in repulsive contact (N/m); `None`
    /// when no contact segment was found.
    pub contact_slope_fit: Option<f64>,
    pub hysteresis_energy: f64,
}

impl CurveEvents {
    pub fn to_json(&self) -> Result<String, CurveError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Tuning of [`detect_events`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    /// Gap (m) below which the tip counts as in repulsive contact.
    pub contact_gap: f64,
    /// A sample is steep when |d deflection| exceeds this many times the
    /// piezo travel across it.
    pub steep_ratio: f64,
    /// A run of steep samples is a jump when its total exceeds this many
    /// times the piezo travel per sample ...
    pub jump_ratio: f64,
    /// ... and this many times the median |d deflection| over the trace.
    pub median_factor: f64,
    /// Leading fraction of the contact segment skipped before fitting, so the
    /// ring-down after snap-in does not bias the slope.
    pub settle_fraction: f64,
}

impl DetectorConfig {
    pub fn new(contact_gap: f64) -> Self {
        Self {
            contact_gap,
            steep_ratio: 50.0,
            jump_ratio: 10.0,
            median_factor: 5.0,
            settle_fraction: 0.2,
        }
    }

    pub fn for_scene(scene: &NanoScene) -> Self {
        Self::new(scene.z_eq())
    }
}

/// Finds the snap events, contact slope and hysteresis area of a trace.
///
/// A snap is the largest run of consecutive steep deflection changes of the
/// right sign within its phase (down on approach, up on retract) whose total
/// clears both jump thresholds. The event is stamped with the last sample
/// before the run.
pub fn detect_events(trace: &ForceCurveTrace, cfg: &DetectorConfig) -> CurveEvents {
    let s = &trace.samples;
    let mut deltas: Vec<f64> = s.windows(2).map(|w| (w[1].deflection - w[0].deflection).abs()).collect();
    let median = median(&mut deltas);

    let find = |phase: Phase, sign: f64| -> Option<CurveEvent> {
        let mut best: Option<(f64, usize)> = None;
        let mut run: Option<(f64, usize, f64)> = None;
        let mut close = |run: &mut Option<(f64, usize, f64)>| {
            if let Some((size, start, piezo)) = run.take() {
                let clears = size > cfg.median_factor * median && size > cfg.jump_ratio * piezo;
                if clears && best.is_none_or(|(b, _)| size > b) {
                    best = Some((size, start));
                }
            }
        };
        for (i, w) in s.windows(2).enumerate() {
            let change = sign * (w[1].deflection - w[0].deflection);
            let piezo = (w[1].piezo_z - w[0].piezo_z).abs();
            if w[1].phase == phase && change > cfg.steep_ratio * piezo {
                let (size, _, travel) = run.get_or_insert((0.0, i, 0.0));
                *size += change;
                *travel = travel.max(piezo);
            } else {
                close(&mut run);
            }
        }
        close(&mut run);
        best.map(|(_, i)| CurveEvent {
            piezo_z: s[i].piezo_z,
            tick: s[i].tick,
        })
    };
    let snap_in = find(Phase::Approach, -1.0);
    let snap_off = find(Phase::Retract, 1.0);

    CurveEvents {
        snap_in,
        snap_off,
        contact_slope_fit: contact_slope(trace, cfg),
        hysteresis_energy: hysteresis_energy(trace),
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Least-squares |slope| of force vs piezo over approach samples in contact.
fn contact_slope(trace: &ForceCurveTrace, cfg: &DetectorConfig) -> Option<f64> {
    let contact: Vec<&TraceSample> = trace.approach().filter(|s| s.tip_z < cfg.contact_gap).collect();
    let skip = (contact.len() as f64 * cfg.settle_fraction).floor() as usize;
    let pts = &contact[skip..];
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|s| s.piezo_z).sum::<f64>() / n;
    let my = pts.iter().map(|s| s.tip_force).sum::<f64>() / n;
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(sxy, sxx), s| {
        let dx = s.piezo_z - mx;
        (sxy + dx * (s.tip_force - my), sxx + dx * dx)
    });
    (sxx > 0.0).then(|| (sxy / sxx).abs())
}

/// Which of the five canonical force-curve states a trace went through,
/// in tick order:
/// A free plateau at zero force, B snap-in (downward jump),
/// C contact with force rising over time, D retraction with force falling
/// through zero into adhesion, E snap-off (upward jump back to zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Morphology {
    pub plateau: bool,
    pub snap_in: bool,
    pub rising_contact: bool,
    pub falling_into_adhesion: bool,
    pub snap_off: bool,
}

impl Morphology {
    pub fn is_complete(&self) -> bool {
        self.plateau && self.snap_in && self.rising_contact && self.falling_into_adhesion && self.snap_off
    }
}

/// Checks the A-E sequence against the detected events.
///
/// "Zero" means within `zero_tol` times the largest |force| of the trace.
pub fn classify_morphology(trace: &ForceCurveTrace, events: &CurveEvents, zero_tol: f64) -> Morphology {
    let s = &trace.samples;
    let mut m = Morphology::default();
    let peak = s.iter().map(|x| x.tip_force.abs()).fold(0.0, f64::max);
    if s.len() < 2 || peak == 0.0 {
        return m;
    }
    let zero = zero_tol * peak;
    let index_of = |tick: u64| s.partition_point(|x| x.tick < tick);
    let turn = s.partition_point(|x| x.phase == Phase::Approach);

    let Some(si) = events.snap_in.map(|e| index_of(e.tick)) else {
        return m;
    };
    m.plateau = si >= 2 && s[..=si].iter().take(si / 2 + 1).all(|x| x.tip_force.abs() <= zero);
    m.snap_in = s[si + 1..turn.max(si + 1)].iter().take(64).any(|x| x.tip_force < -zero);

    // C: least-squares trend of force over ticks between snap-in and the turn
    let trend = |seg: &[TraceSample]| -> f64 {
        let n = seg.len() as f64;
        let mt = seg.iter().map(|x| x.tick as f64).sum::<f64>() / n;
        let mf = seg.iter().map(|x| x.tip_force).sum::<f64>() / n;
        let (num, den) = seg.iter().fold((0.0, 0.0), |(a, b), x| {
            let dt = x.tick as f64 - mt;
            (a + dt * (x.tip_force - mf), b + dt * dt)
        });
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };
    if turn > si + 3 {
        m.rising_contact = trend(&s[si + 1..turn]) > 0.0;
    }

    let Some(so) = events.snap_off.map(|e| index_of(e.tick)) else {
        return m;
    };
    if so > turn + 2 && so < s.len() {
        let seg = &s[turn..=so];
        let max = seg.iter().map(|x| x.tip_force).fold(f64::NEG_INFINITY, f64::max);
        let min = seg.iter().map(|x| x.tip_force).fold(f64::INFINITY, f64::min);
        m.falling_into_adhesion = trend(seg) < 0.0 && max > zero && min < -zero;
    }
    m.snap_off = so + 1 < s.len()
        && s[so].tip_force < -zero
        && s[so + 1..].iter().rev().take((s.len() - so - 1) / 2 + 1).all(|x| x.tip_force.abs() <= zero);
    m
}

/// Signed area between the approach and retract force branches (J).
///
/// Both branches are resampled by linear interpolation onto a common
/// ascending piezo grid and integrated with the trapezoidal rule; positive
/// when the retract branch lies below the approach branch.
pub fn hysteresis_energy(trace: &ForceCurveTrace) -> f64 {
    let branch = |phase: Phase| {
        let mut pts: Vec<(f64, f64)> = trace
            .samples
            .iter()
            .filter(|s| s.phase == phase)
            .map(|s| (s.piezo_z, s.tip_force))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        pts
    };
    let approach = branch(Phase::Approach);
    let retract = branch(Phase::Retract);
    if approach.len() < 2 || retract.len() < 2 {
        return 0.0;
    }
    let lo = approach[0].0.max(retract[0].0);
    let hi = approach[approach.len() - 1].0.min(retract[retract.len() - 1].0);
    if hi <= lo {
        return 0.0;
    }
    let n = approach.len().max(retract.len());
    let dz = (hi - lo) / (n - 1) as f64;
    let diff = |z: f64| interp(&approach, z) - interp(&retract, z);
    let mut area = 0.0;
    let mut prev = diff(lo);
    for i in 1..n {
        let z = if i == n - 1 { hi } else { lo + dz * i as f64 };
        let cur = diff(z);
        area += 0.5 * (prev + cur) * dz;
        prev = cur;
    }
    area
}

/// Linear interpolation on points sorted by x; clamps outside the range.
fn interp(pts: &[(f64, f64)], x: f64) -> f64 {
    let i = pts.partition_point(|p| p.0 < x);
    if i == 0 {
        return pts[0].1;
    }
    if i == pts.len() {
        return pts[pts.len() - 1].1;
    }
    let (x0, y0) = pts[i - 1];
    let (x1, y1) = pts[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Series stiffness of sample contact and cantilever, `a k / (a + k)` (N/m).
pub fn chi(alpha_rep: f64, kappa: f64) -> Result<f64, CurveError> {
    if !(alpha_rep > 0.0) {
        return Err(CurveError::Domain("alpha_rep"));
    }
    if !(kappa > 0.0) {
        return Err(CurveError::Domain("kappa"));
    }
    Ok(alpha_rep * kappa / (alpha_rep + kappa))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub tip_z: f64,
    pub stable: bool,
}

/// Grid resolution of the equilibrium bracketing.
const BRACKET_CELLS: usize = 20_000;

/// All rest positions of a tip on a cantilever of stiffness `kappa` whose
/// undeflected height is `piezo_z`, over a rigid surface at zero.
///
/// Solves `kappa (piezo_z - z) + f(z) = 0` by dense bracketing and bisection.
/// Each grid cell is also checked for a pair of roots hiding between two
/// samples of equal sign, located from the extremum of the residual. A root
/// is stable when `f'(z) < kappa`.
pub fn quasi_static_equilibria(law: &dyn ForceLaw, kappa: f64, piezo_z: f64) -> Vec<Equilibrium> {
    let residual = |z: f64| kappa * (piezo_z - z) + law.force(z).unwrap_or(f64::INFINITY);
    let slope = |z: f64| law.gradient(z).unwrap_or(f64::NEG_INFINITY) - kappa;

    let cutoff = law.cutoff();
    let span = cutoff.max(piezo_z.abs()).max(f64::MIN_POSITIVE);
    let hi = piezo_z.max(cutoff) + 0.1 * span;
    let mut lo = piezo_z.min(0.01 * cutoff);
    // Walk down until the repulsive side is reached.
    while residual(lo) <= 0.0 {
        lo = match law.min_gap() {
            Some(floor) => floor + 0.5 * (lo - floor),
            None => lo - span,
        };
    }

    let mut roots = Vec::new();
    let n = BRACKET_CELLS;
    let at = |i: usize| lo + (hi - lo) * i as f64 / n as f64;
    let mut z0 = lo;
    let mut r0 = residual(z0);
    let mut d0 = slope(z0);
    for i in 1..=n {
        let z1 = at(i);
        let r1 = residual(z1);
        let d1 = slope(z1);
        if r0 == 0.0 {
            roots.push(z0);
        } else if r0.signum() != r1.signum() && r1 != 0.0 {
            roots.push(bisect(&residual, z0, z1));
        } else if d0.signum() != d1.signum() && r1 != 0.0 {
            // residual turns around inside the cell; a sign flip at the
            // extremum means two roots straddle it
            let zm = bisect(&slope, z0, z1);
            let rm = residual(zm);
            if rm.signum() != r0.signum() {
                roots.push(bisect(&residual, z0, zm));
                roots.push(bisect(&residual, zm, z1));
            }
        }
        z0 = z1;
        r0 = r1;
        d0 = d1;
    }
    roots
        .into_iter()
        .map(|z| Equilibrium {
            tip_z: z,
            stable: law.gradient(z).map(|g| g < kappa).unwrap_or(false),
        })
        .collect()
}

/// Bisects a sign change of `f` on `[a, b]` down to adjacent floats.
fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldKind {
    /// Upper fold, crossed on approach: the far branch ends.
    SnapIn,
    /// Lower fold, crossed on retract: the contact branch ends.
    SnapOff,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fold {
    pub kind: FoldKind,
    /// Piezo height at which the branch ends.
    pub piezo_z: f64,
    /// Tip height where the two equilibria merge.
    pub tip_z: f64,
}

/// Fold points from the tangency condition `f'(z) = kappa`, solved directly.
///
/// Returns `None` when the law never out-stiffens the cantilever (no
/// hysteresis). A second route to the same folds, independent of
/// [`quasi_static_equilibria`].
pub fn fold_points(law: &dyn ForceLaw, kappa: f64) -> Option<(Fold, Fold)> {
    let cutoff = law.cutoff();
    let excess = |z: f64| law.gradient(z).unwrap_or(f64::NEG_INFINITY) - kappa;
    let lo = cutoff * 1e-3;
    let n = 200_000;
    let mut crossings = Vec::new();
    let mut z0 = lo;
    let mut e0 = excess(z0);
    for i in 1..=n {
        let z1 = lo + (cutoff - lo) * i as f64 / n as f64;
        let e1 = excess(z1);
        if (e0 > 0.0) != (e1 > 0.0) {
            crossings.push(bisect(&excess, z0, z1));
        }
        z0 = z1;
        e0 = e1;
    }
    let (&first, &last) = (crossings.first()?, crossings.last()?);
    if crossings.len() < 2 {
        return None;
    }
    let piezo = |z: f64| z - law.force(z).unwrap_or(f64::NAN) / kappa;
    Some((
        Fold {
            kind: FoldKind::SnapIn,
            piezo_z: piezo(last),
            tip_z: last,
        },
        Fold {
            kind: FoldKind::SnapOff,
            piezo_z: piezo(first),
            tip_z: first,
        },
    ))
}

/// Largest force gradient of `law` over `(0, cutoff)`, by grid search with
/// golden-section refinement.
pub fn max_law_gradient(law: &dyn ForceLaw) -> f64 {
    let cutoff = law.cutoff();
    let g = |z: f64| law.gradient(z).unwrap_or(f64::NEG_INFINITY);
    let n = 100_000;
    let lo = cutoff * 1e-3;
    let dz = (cutoff - lo) / n as f64;
    let (best, _) = (0..n)
        .map(|i| lo + dz * i as f64)
        .map(|z| (z, g(z)))
        .fold((lo, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
    let (mut a, mut b) = ((best - dz).max(lo), (best + dz).min(cutoff));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if g(c) > g(d) {
            b = d;
        } else {
            a = c;
        }
    }
    g(0.5 * (a + b)).max(g(best))
}
