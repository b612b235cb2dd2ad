//! Bilateral coupling between the virtual key and the nano piezo.
//!
//! The key lives in human units (m, N) and is measured as depth of travel,
//! positive when pressed. The piezo lives in nano units with `z` up. A
//! virtual spring-damper in human units joins the key to the scaled piezo
//! depth; its force goes back to the hand and, divided by the force gain,
//! down to the piezo.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("key profile: {0}")]
    Profile(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn positive(name: &str, v: f64) -> Result<(), TeleopError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(TeleopError::Invalid(format!("{name} must be finite and > 0, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingParams {
    /// Human newtons per nano newton.
    pub force_gain: f64,
    /// Human metres of key travel per nano metre of piezo travel.
    pub position_gain: f64,
}

impl Default for ScalingParams {
    fn default() -> Self {
        Self {
            force_gain: 1e8,
            position_gain: 1e6,
        }
    }
}

impl ScalingParams {
    pub fn validate(&self) -> Result<(), TeleopError> {
        positive("force_gain", self.force_gain)?;
        positive("position_gain", self.position_gain)
    }

    /// Energy scale from nano to human units.
    pub fn energy_gain(&self) -> f64 {
        self.force_gain * self.position_gain
    }

    /// Human-side inertia of a nano mass seen through both gains.
    pub fn equivalent_mass(&self, nano_mass: f64) -> f64 {
        nano_mass * self.force_gain / self.position_gain
    }
}

/// Envelope of the emulated force-feedback key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceLimits {
    pub travel: f64,
    pub encoder_resolution: f64,
    pub max_speed: f64,
    pub force_continuous: f64,
    pub force_transient: f64,
    pub force_loop_cutoff: f64,
    /// Window (s) of the moving RMS held to `force_continuous`.
    pub rms_window: f64,
}

impl Default for DeviceLimits {
    fn default() -> Self {
        Self {
            travel: 0.020,
            encoder_resolution: 2e-6,
            max_speed: 2.0,
            force_continuous: 50.0,
            force_transient: 200.0,
            force_loop_cutoff: 1e4,
            rms_window: 1.0,
        }
    }
}

impl DeviceLimits {
    pub fn validate(&self) -> Result<(), TeleopError> {
        positive("travel", self.travel)?;
        positive("encoder_resolution", self.encoder_resolution)?;
        positive("max_speed", self.max_speed)?;
        positive("force_continuous", self.force_continuous)?;
        positive("force_transient", self.force_transient)?;
        positive("force_loop_cutoff", self.force_loop_cutoff)?;
        positive("rms_window", self.rms_window)?;
        if self.force_transient < self.force_continuous {
            return Err(TeleopError::Invalid("force_transient must be >= force_continuous".into()));
        }
        Ok(())
    }

    /// Encoder counts spanning the travel.
    pub fn travel_steps(&self) -> i64 {
        (self.travel / self.encoder_resolution).round() as i64
    }

    /// Largest per-tick move in encoder counts that respects `max_speed`.
    pub fn max_steps_per_tick(&self, timestep: f64) -> i64 {
        // floor, so the limit holds after quantization
        ((self.max_speed * timestep / self.encoder_resolution) * (1.0 + 1e-12)).floor() as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouplingParams {
    /// Virtual spring stiffness (N/m, human units).
    pub spring_k: f64,
    /// Virtual spring damping (N s/m, human units).
    pub spring_damping: f64,
    /// Inertia of the force-driven piezo (kg, nano side).
    pub piezo_mass: f64,
    /// Piezo height (m, nano side) when the key is fully up.
    pub piezo_top: f64,
}

impl Default for CouplingParams {
    fn default() -> Self {
        Self {
            spring_k: 1000.0,
            spring_damping: 2.0,
            piezo_mass: 1e-4,
            piezo_top: 10e-9,
        }
    }
}

impl CouplingParams {
    pub fn validate(&self) -> Result<(), TeleopError> {
        positive("spring_k", self.spring_k)?;
        positive("piezo_mass", self.piezo_mass)?;
        if !(self.spring_damping.is_finite() && self.spring_damping >= 0.0) {
            return Err(TeleopError::Invalid(format!("spring_damping must be >= 0, got {}", self.spring_damping)));
        }
        if !self.piezo_top.is_finite() {
            return Err(TeleopError::Invalid("piezo_top must be finite".into()));
        }
        Ok(())
    }
}

/// Largest spring stiffness for which the sampled spring-damper on `mass`
/// stays stable, `(2/h) c + m (2/h)^2`. Conservative.
pub fn coupling_stability_bound(timestep: f64, damping: f64, mass: f64) -> f64 {
    let w = 2.0 / timestep;
    w * damping + mass * w * w
}

/// Coupling state carried from tick to tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CouplingState {
    /// Key position in encoder counts.
    pub key_steps: i64,
    pub key_pos: f64,
    pub key_force_out: f64,
    pub piezo_command: f64,
    pub energy_ledger: f64,
    pub dropout: bool,
}

/// Clamps, quantizes and rate-limits a raw key reading.
///
/// A non-finite reading keeps the previous position and sets `dropout`.
pub fn ingest_key(raw_pos: f64, limits: &DeviceLimits, timestep: f64, prev: &CouplingState) -> CouplingState {
    let mut next = *prev;
    if !raw_pos.is_finite() {
        next.dropout = true;
        return next;
    }
    next.dropout = false;
    let clamped = raw_pos.clamp(0.0, limits.travel);
    let target = ((clamped / limits.encoder_resolution).round() as i64).clamp(0, limits.travel_steps());
    let max_step = limits.max_steps_per_tick(timestep);
    let steps = target.clamp(prev.key_steps - max_step, prev.key_steps + max_step);
    next.key_steps = steps;
    next.key_pos = steps as f64 * limits.encoder_resolution;
    next
}

/// One tick of spring output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupled {
    pub stretch: f64,
    /// Spring force (N, human units), positive when the key is ahead of the
    /// piezo.
    pub spring_force: f64,
    /// Reaction on the hand (N, human units, along key depth).
    pub force_to_key: f64,
    /// Force pushing the piezo deeper (N, nano units). Apply `-force` along z.
    pub force_to_piezo_nano: f64,
}

/// Virtual spring-damper between key and piezo.
#[derive(Debug, Clone)]
pub struct Coupler {
    params: CouplingParams,
    scale: ScalingParams,
    timestep: f64,
    prev_stretch: Option<f64>,
}

impl Coupler {
    pub fn new(params: CouplingParams, scale: ScalingParams, timestep: f64) -> Result<Self, TeleopError> {
        params.validate()?;
        scale.validate()?;
        positive("timestep", timestep)?;
        Ok(Self {
            params,
            scale,
            timestep,
            prev_stretch: None,
        })
    }

    pub fn params(&self) -> &CouplingParams {
        &self.params
    }

    pub fn scale(&self) -> &ScalingParams {
        &self.scale
    }

    /// Piezo height commanded by a key position, at zero stretch.
    pub fn piezo_for_key(&self, key_pos: f64) -> f64 {
        self.params.piezo_top - key_pos / self.scale.position_gain
    }

    /// Key-side image of a piezo height.
    pub fn key_for_piezo(&self, piezo_z: f64) -> f64 {
        (self.params.piezo_top - piezo_z) * self.scale.position_gain
    }

    pub fn stretch(&self, key_pos: f64, piezo_z: f64) -> f64 {
        key_pos - self.key_for_piezo(piezo_z)
    }

    /// Elastic energy stored in the spring (J, human units).
    pub fn spring_energy(&self, key_pos: f64, piezo_z: f64) -> f64 {
        let s = self.stretch(key_pos, piezo_z);
        0.5 * self.params.spring_k * s * s
    }

    /// Spring force for this tick; the stretch rate is a backward difference
    /// (zero on the first call).
    pub fn couple(&mut self, key_pos: f64, piezo_z: f64) -> Coupled {
        let stretch = self.stretch(key_pos, piezo_z);
        let rate = self.prev_stretch.map_or(0.0, |p| (stretch - p) / self.timestep);
        self.prev_stretch = Some(stretch);
        let spring_force = self.params.spring_k * stretch + self.params.spring_damping * rate;
        let force_to_piezo_nano = spring_force / self.scale.force_gain;
        Coupled {
            stretch,
            spring_force,
            force_to_key: -(force_to_piezo_nano * self.scale.force_gain),
            force_to_piezo_nano,
        }
    }
}

/// First-order low-pass standing in for the device force bandwidth.
#[derive(Debug, Clone)]
pub struct LowPass {
    alpha: f64,
    y: f64,
}

impl LowPass {
    pub fn new(cutoff_hz: f64, timestep: f64) -> Self {
        Self {
            alpha: 1.0 - (-2.0 * std::f64::consts::PI * cutoff_hz * timestep).exp(),
            y: 0.0,
        }
    }

    pub fn filter(&mut self, x: f64) -> f64 {
        self.y += self.alpha * (x - self.y);
        self.y
    }
}

/// Transient clamp plus a moving-RMS limiter on the key force.
#[derive(Debug, Clone)]
pub struct ForceLimiter {
    transient: f64,
    continuous: f64,
    window: VecDeque<f64>,
    len: usize,
    sum_sq: f64,
    since_resum: usize,
}

impl ForceLimiter {
    pub fn new(limits: &DeviceLimits, timestep: f64) -> Self {
        let len = ((limits.rms_window / timestep).round() as usize).max(1);
        Self {
            transient: limits.force_transient,
            continuous: limits.force_continuous,
            window: VecDeque::with_capacity(len),
            len,
            sum_sq: 0.0,
            since_resum: 0,
        }
    }

    /// Window length in ticks.
    pub fn window_len(&self) -> usize {
        self.len
    }

    /// Limits `force` so that |out| <= transient and the RMS over the last
    /// window (this output included) stays within the continuous rating.
    pub fn clamp(&mut self, force: f64) -> f64 {
        if self.window.len() == self.len {
            let old = self.window.pop_front().unwrap_or(0.0);
            self.sum_sq -= old * old;
        }
        // the window holds len - 1 past outputs; the rest of the budget is ours
        let budget = (self.len as f64 * self.continuous * self.continuous - self.sum_sq).max(0.0);
        let force = if force.is_finite() { force } else { 0.0 };
        let out = force.clamp(-self.transient, self.transient);
        let cap = budget.sqrt() * (1.0 - 1e-12);
        let out = if out.abs() > cap { cap.copysign(out) } else { out };
        self.window.push_back(out);
        self.sum_sq += out * out;
        self.since_resum += 1;
        if self.since_resum >= self.len {
            self.since_resum = 0;
            self.sum_sq = self.window.iter().map(|f| f * f).sum();
        }
        out
    }

    pub fn rms(&self) -> f64 {
        (self.sum_sq.max(0.0) / self.len as f64).sqrt()
    }
}

/// Energy-balance monitor of the coupled chain.
///
/// The ledger is stored energy (spring plus scaled scene) minus its starting
/// value minus the work done by the hand. A passive chain keeps it at or
/// below zero up to discretization error; `active` latches once it stays
/// above `epsilon` for `patience` consecutive ticks.
#[derive(Debug, Clone)]
pub struct PassivityMonitor {
    pub epsilon: f64,
    pub patience: u32,
    initial: Option<f64>,
    hand_work: f64,
    ledger: f64,
    streak: u32,
    active: bool,
}

impl PassivityMonitor {
    pub fn new(epsilon: f64, patience: u32) -> Self {
        Self {
            epsilon,
            patience,
            initial: None,
            hand_work: 0.0,
            ledger: 0.0,
            streak: 0,
            active: false,
        }
    }

    /// Adds one tick: `hand_force` is the force the hand applies along key
    /// depth (the negated reaction), `key_delta` the key move this tick and
    /// `stored` the current stored energy (J).
    pub fn update(&mut self, hand_force: f64, key_delta: f64, stored: f64) -> f64 {
        let initial = *self.initial.get_or_insert(stored);
        self.hand_work += hand_force * key_delta;
        self.ledger = stored - initial - self.hand_work;
        if self.ledger > self.epsilon {
            self.streak = self.streak.saturating_add(1);
        } else {
            self.streak = 0;
        }
        if self.streak >= self.patience {
            self.active = true;
        }
        self.ledger
    }

    pub fn ledger(&self) -> f64 {
        self.ledger
    }

    pub fn hand_work(&self) -> f64 {
        self.hand_work
    }

    pub fn is_active(&self) -> bool {
        self.active
    }
}

impl Default for PassivityMonitor {
    fn default() -> Self {
        Self::new(1e-4, 300)
    }
}

/// Scripted key positions over time, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyProfile {
    t: Vec<f64>,
    pos: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct ProfileRow {
    t: f64,
    key_pos: f64,
}

impl KeyProfile {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, TeleopError> {
        if points.is_empty() {
            return Err(TeleopError::Profile("no points".into()));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(TeleopError::Profile(format!("times must increase strictly ({} then {})", w[0].0, w[1].0)));
            }
        }
        if points.iter().any(|p| !p.0.is_finite()) {
            return Err(TeleopError::Profile("non-finite time".into()));
        }
        let (t, pos) = points.into_iter().unzip();
        Ok(Self { t, pos })
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, TeleopError> {
        let mut r = csv::Reader::from_reader(input);
        let rows = r.deserialize().collect::<Result<Vec<ProfileRow>, _>>()?;
        Self::new(rows.into_iter().map(|r| (r.t, r.key_pos)).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TeleopError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), TeleopError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "key_pos"])?;
        for (t, p) in self.t.iter().zip(&self.pos) {
            w.write_record([t.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    /// Position at time `t`, held constant outside the profile.
    pub fn at(&self, t: f64) -> f64 {
        let i = self.t.partition_point(|&x| x <= t);
        if i == 0 {
            return self.pos[0];
        }
        if i == self.t.len() {
            return self.pos[i - 1];
        }
        let (t0, t1) = (self.t[i - 1], self.t[i]);
        let (p0, p1) = (self.pos[i - 1], self.pos[i]);
        p0 + (p1 - p0) * (t - t0) / (t1 - t0)
    }
}

/// Single-slot latest-value mailbox for key input. Writers overwrite; the
/// reader sees only the newest value.
#[derive(Debug, Clone, Default)]
pub struct KeyMailbox {
    slot: Arc<AtomicU64>,
    seq: Arc<AtomicU64>,
}

impl KeyMailbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn post(&self, key_pos: f64) {
        self.slot.store(key_pos.to_bits(), Ordering::Release);
        self.seq.fetch_add(1, Ordering::AcqRel);
    }

    /// Newest value, or `None` if nothing was ever posted.
    pub fn latest(&self) -> Option<f64> {
        if self.seq.load(Ordering::Acquire) == 0 {
            return None;
        }
        Some(f64::from_bits(self.slot.load(Ordering::Acquire)))
    }

    /// Number of posts so far.
    pub fn posts(&self) -> u64 {
        self.seq.load(Ordering::Acquire)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const H: f64 = 1.0 / 3000.0;

    fn at(steps: i64) -> CouplingState {
        CouplingState {
            key_steps: steps,
            key_pos: steps as f64 * 2e-6,
            ..Default::default()
        }
    }

    #[test]
    fn ingest_examples() {
        let lim = DeviceLimits::default();
        let full = at(lim.travel_steps());
        assert_eq!(ingest_key(0.025, &lim, H, &full).key_pos, 0.020);
        assert_eq!(ingest_key(3.1e-6, &lim, H, &at(0)).key_pos, 4e-6);
        let moved = ingest_key(0.010, &lim, H, &at(0));
        assert_eq!(moved.key_steps, 333);
        assert!((moved.key_pos - 2.0 / 3000.0).abs() < 2e-6);
        assert!(moved.key_pos / H <= 2.0);
    }

    #[test]
    fn dropout_keeps_previous_position() {
        let lim = DeviceLimits::default();
        let prev = at(1234);
        for raw in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            let next = ingest_key(raw, &lim, H, &prev);
            assert!(next.dropout);
            assert_eq!(next.key_steps, 1234);
        }
        assert!(!ingest_key(0.0, &lim, H, &at(1)).dropout);
    }

    #[test]
    fn coupling_examples() {
        let mut c = Coupler::new(CouplingParams::default(), ScalingParams::default(), H).unwrap();
        let key = 0.0;
        let rest = c.params().piezo_top;
        let out = c.couple(key, rest);
        assert_eq!(out.stretch, 0.0);
        assert_eq!(out.force_to_key, 0.0);
        assert_eq!(out.force_to_piezo_nano, 0.0);

        let k = c.params().spring_k;
        let s = 1e-4;
        let out = c.couple(key + s, rest);
        let out2 = c.couple(key + s, rest);
        assert!((out2.stretch - s).abs() < 1e-15);
        assert!((out2.force_to_key + k * s).abs() <= 1e-12 * k * s);
        assert!((out2.force_to_piezo_nano - k * s / 1e8).abs() <= 1e-12 * k * s / 1e8);
        // first tick of a step change also sees the damper
        assert!(out.spring_force > out2.spring_force);
    }

    #[test]
    fn stability_bound_grows_without_limit_as_h_shrinks() {
        let mut last = 0.0;
        for h in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            let b = coupling_stability_bound(h, 2.0, 1e-2);
            assert!(b > last * 10.0);
            last = b;
        }
        assert_eq!(coupling_stability_bound(0.5, 1.0, 1.0), 4.0 + 16.0);
    }

    #[test]
    fn limiter_examples() {
        let lim = DeviceLimits::default();
        let mut f = ForceLimiter::new(&lim, H);
        for _ in 0..6000 {
            assert_eq!(f.clamp(30.0), 30.0);
        }
        let mut f = ForceLimiter::new(&lim, H);
        assert_eq!(f.clamp(500.0), 200.0);
        assert_eq!(f.clamp(-500.0), -200.0);

        let mut f = ForceLimiter::new(&lim, H);
        let n = f.window_len();
        let mut out = Vec::new();
        for _ in 0..6000 {
            out.push(f.clamp(120.0));
        }
        for w in out.windows(n) {
            let rms = (w.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
            assert!(rms <= 50.0 * (1.0 + 1e-9), "{rms}");
        }
        assert!(out[0] == 120.0, "a short burst passes under the transient limit");
    }

    #[test]
    fn lowpass_passes_dc() {
        let mut lp = LowPass::new(1e4, H);
        let mut y = 0.0;
        for _ in 0..10 {
            y = lp.filter(3.0);
        }
        assert!((y - 3.0).abs() < 1e-12);
        let mut slow = LowPass::new(1.0, H);
        assert!(slow.filter(1.0) < 0.01);
    }

    #[test]
    fn passivity_at_rest_is_zero() {
        let mut m = PassivityMonitor::default();
        for _ in 0..1000 {
            assert_eq!(m.update(0.0, 0.0, 0.5), 0.0);
        }
        assert!(!m.is_active());
    }

    #[test]
    fn passivity_latches_on_energy_growth() {
        let mut m = PassivityMonitor::new(1e-3, 10);
        for i in 0..9 {
            m.update(0.0, 0.0, 1.0 + i as f64);
        }
        assert!(!m.is_active());
        m.update(0.0, 0.0, 100.0);
        m.update(0.0, 0.0, 100.0);
        assert!(m.is_active());
        m.update(0.0, 0.0, 0.0);
        assert!(m.is_active());
    }

    #[test]
    fn profile_interpolates_and_round_trips() {
        let p = KeyProfile::new(vec![(0.0, 0.0), (1.0, 0.01), (2.0, 0.0)]).unwrap();
        assert_eq!(p.at(-1.0), 0.0);
        assert_eq!(p.at(0.5), 0.005);
        assert_eq!(p.at(1.5), 0.005);
        assert_eq!(p.at(9.0), 0.0);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,key_pos\n"));
        assert_eq!(KeyProfile::read_csv(text.as_bytes()).unwrap(), p);
        assert!(KeyProfile::new(vec![(0.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(KeyProfile::new(vec![]).is_err());
    }

    #[test]
    fn mailbox_keeps_latest() {
        let m = KeyMailbox::new();
        assert_eq!(m.latest(), None);
        let w = m.clone();
        let t = std::thread::spawn(move || {
            for i in 0..1000 {
                w.post(i as f64 * 1e-5);
            }
        });
        t.join().unwrap();
        assert_eq!(m.latest(), Some(999.0 * 1e-5));
        assert_eq!(m.posts(), 1000);
    }

    proptest! {
        #[test]
        fn ingest_stays_on_grid_in_travel_and_speed(
            start in 0i64..=10_000,
            raws in proptest::collection::vec(prop_oneof![
                -1.0f64..1.0,
                Just(f64::NAN),
                Just(f64::INFINITY),
                0.0f64..0.02,
            ], 1..200),
        ) {
            let lim = DeviceLimits::default();
            let mut st = at(start);
            for raw in raws {
                let next = ingest_key(raw, &lim, H, &st);
                prop_assert!(next.key_pos >= 0.0 && next.key_pos <= lim.travel);
                prop_assert_eq!(next.key_pos, next.key_steps as f64 * lim.encoder_resolution);
                prop_assert!((next.key_pos - st.key_pos).abs() / H <= lim.max_speed * (1.0 + 1e-9));
                st = next;
            }
        }

        #[test]
        fn dual_transfer_is_exact(
            key in 0.0f64..0.02,
            piezo in -1e-8f64..2e-8,
            k in 1.0f64..1e5,
            c in 0.0f64..10.0,
            gain in 1.0f64..1e10,
        ) {
            let params = CouplingParams { spring_k: k, spring_damping: c, ..Default::default() };
            let scale = ScalingParams { force_gain: gain, ..Default::default() };
            let mut cp = Coupler::new(params, scale, H).unwrap();
            for i in 0..3 {
                let out = cp.couple(key + i as f64 * 1e-5, piezo);
                prop_assert_eq!(out.force_to_key, -gain * out.force_to_piezo_nano);
            }
        }

        #[test]
        fn limiter_never_exceeds_limits(forces in proptest::collection::vec(-1000.0f64..1000.0, 1..8000)) {
            let lim = DeviceLimits::default();
            let mut f = ForceLimiter::new(&lim, H);
            let n = f.window_len();
            let mut out = Vec::with_capacity(forces.len());
            for x in forces {
                let y = f.clamp(x);
                prop_assert!(y.abs() <= 200.0);
                out.push(y);
            }
            let mut sum = 0.0;
            for (i, y) in out.iter().enumerate() {
                sum += y * y;
                if i >= n {
                    sum -= out[i - n] * out[i - n];
                }
                prop_assert!((sum.max(0.0) / n as f64).sqrt() <= 50.0 * 1.0001);
            }
        }
    }
}
