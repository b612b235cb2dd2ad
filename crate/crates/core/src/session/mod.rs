//! The fixed-rate session loop: key input, coupling, scene step, force
//! output, audio, frame publishing and recording.
//!
//! Virtual time is authoritative. A tick `n` always stands for `t = n /
//! tick_rate`; wall-clock pacing is only layered on top in interactive mode.

pub mod publish;
pub mod record;
pub mod server;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::{detect_events, CurveError, CurveEvents, DetectorConfig, ForceCurveTrace, SweepConfig, SweepProfile, TraceSample};
use crate::feeds::{ball_state, potential_landscape, AudioConfig, AudioRenderer, AudioRing, DEFAULT_BARRIER_FRACTION, DEFAULT_GRID};
use crate::model::Fault;
use crate::scene::{CantileverParams, LJParams, NanoScene, SceneError, SceneParams, SurfaceParams};
use crate::teleop::{
    ingest_key, Coupled, Coupler, CouplingParams, CouplingState, DeviceLimits, ForceLimiter, KeyMailbox, KeyProfile, LowPass,
    PassivityMonitor, ScalingParams, TeleopError,
};

pub use publish::{Fanout, FanoutHandle, Publisher, PublisherHandle, Subscription};
pub use record::{first_difference, parse_recording, read_recording, replay, write_recording, Recorder, Recording};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Teleop(#[from] TeleopError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("recording line {line}: {msg}")]
    Recording { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Interactive,
    Scripted,
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PassivityParams {
    pub epsilon: f64,
    pub patience: u32,
}

impl Default for PassivityParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            patience: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub tick_rate: f64,
    pub lj: LJParams,
    pub cantilever: CantileverParams,
    pub surface: SurfaceParams,
    pub use_linearized: bool,
    pub coupling: CouplingParams,
    pub scaling: ScalingParams,
    pub limits: DeviceLimits,
    pub audio: AudioConfig,
    pub mode: Mode,
    /// Key profile CSV (`t,key_pos`) for scripted mode.
    pub profile: Option<PathBuf>,
    pub sweep: Option<SweepConfig>,
    pub record_path: Option<PathBuf>,
    pub listen_address: Option<String>,
    /// Run length (s); scripted mode defaults to the profile length.
    pub duration: Option<f64>,
    pub queue_depth: usize,
    /// Full-rate frames per UI frame.
    pub ui_decimation: u64,
    pub passivity: PassivityParams,
    pub landscape_grid: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            tick_rate: 3000.0,
            lj: LJParams::default(),
            cantilever: CantileverParams::default(),
            surface: SurfaceParams::default(),
            use_linearized: false,
            coupling: CouplingParams::default(),
            scaling: ScalingParams::default(),
            limits: DeviceLimits::default(),
            audio: AudioConfig::default(),
            mode: Mode::Interactive,
            profile: None,
            sweep: None,
            record_path: None,
            listen_address: None,
            duration: None,
            queue_depth: 8,
            ui_decimation: 50,
            passivity: PassivityParams::default(),
            landscape_grid: DEFAULT_GRID,
        }
    }
}

impl SessionConfig {
    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            lj: self.lj,
            cantilever: self.cantilever,
            surface: self.surface,
            use_linearized: self.use_linearized,
        }
    }

    pub fn timestep(&self) -> f64 {
        1.0 / self.tick_rate
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if !(self.tick_rate.is_finite() && self.tick_rate > 0.0) {
            return Err(SessionError::Config(format!("tick_rate must be > 0, got {}", self.tick_rate)));
        }
        self.lj.validate()?;
        self.cantilever.validate()?;
        self.surface.validate()?;
        self.coupling.validate()?;
        self.scaling.validate()?;
        self.limits.validate()?;
        self.audio.validate(self.tick_rate).map_err(SessionError::Config)?;
        match self.mode {
            Mode::Scripted if self.profile.is_none() => {
                return Err(SessionError::Config("scripted mode needs a profile path".into()));
            }
            Mode::Sweep => match &self.sweep {
                None => return Err(SessionError::Config("sweep mode needs a sweep config".into())),
                Some(s) => s.validate(self.timestep())?,
            },
            _ => {}
        }
        if let Some(d) = self.duration {
            if !(d.is_finite() && d >= 0.0) {
                return Err(SessionError::Config(format!("duration must be >= 0, got {d}")));
            }
        }
        if self.queue_depth == 0 || self.ui_decimation == 0 {
            return Err(SessionError::Config("queue_depth and ui_decimation must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative `profile` and `record_path` entries are
    /// taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let path = path.as_ref();
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.profile, &mut cfg.record_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

pub mod flags {
    pub const FAULT: u32 = 1;
    pub const ACTIVE: u32 = 2;
    pub const DROPOUT: u32 = 4;
    pub const OVERRUN: u32 = 8;
}

/// One tick of published state. Non-finite numbers travel as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    pub t: f64,
    #[serde(with = "nullable")]
    pub key_pos: f64,
    #[serde(with = "nullable")]
    pub key_force: f64,
    #[serde(with = "nullable")]
    pub piezo_z: f64,
    #[serde(with = "nullable")]
    pub tip_z: f64,
    #[serde(with = "nullable")]
    pub deflection: f64,
    #[serde(with = "nullable")]
    pub tip_force_nano: f64,
    #[serde(with = "nullable_vec")]
    pub surface_displacements: Vec<f64>,
    pub well_index: Option<u32>,
    pub flags: u32,
}

impl Frame {
    pub fn has(&self, flag: u32) -> bool {
        self.flags & flag != 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frame serializes")
    }

    /// True when every numeric field is finite.
    pub fn is_finite(&self) -> bool {
        [self.t, self.key_pos, self.key_force, self.piezo_z, self.tip_z, self.deflection, self.tip_force_nano]
            .iter()
            .chain(&self.surface_displacements)
            .all(|v| v.is_finite())
    }
}

mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

mod nullable_vec {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            if x.is_finite() {
                seq.serialize_element(x)?;
            } else {
                seq.serialize_element(&None::<f64>)?;
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v = Vec::<Option<f64>>::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

/// The single-writer simulation state behind a session.
#[derive(Debug)]
pub struct Engine {
    cfg: SessionConfig,
    scene: NanoScene,
    coupler: Coupler,
    state: CouplingState,
    lowpass: LowPass,
    limiter: ForceLimiter,
    monitor: PassivityMonitor,
    audio: AudioRenderer,
    sweep: Option<SweepProfile>,
    last_raw: Option<f64>,
    coupled: Option<Coupled>,
    fault: Option<Fault>,
}

impl Engine {
    pub fn new(cfg: &SessionConfig) -> Result<Self, SessionError> {
        cfg.validate()?;
        let h = cfg.timestep();
        let coupler = Coupler::new(cfg.coupling, cfg.scaling, h)?;
        let sweep = match cfg.mode {
            Mode::Sweep => cfg.sweep.map(|s| s.profile(h)),
            _ => None,
        };
        let start = match (cfg.mode, cfg.sweep) {
            (Mode::Sweep, Some(s)) => s.z_start,
            _ => cfg.coupling.piezo_top,
        };
        let mut scene = NanoScene::from_params(&cfg.scene_params(), h, start)?;
        if sweep.is_none() {
            scene.make_piezo_dynamic(cfg.coupling.piezo_mass)?;
        }
        let audio = AudioRenderer::new(cfg.audio.clone(), cfg.tick_rate).map_err(SessionError::Config)?;
        let state = CouplingState {
            piezo_command: start,
            ..CouplingState::default()
        };
        Ok(Self {
            scene,
            coupler,
            state,
            lowpass: LowPass::new(cfg.limits.force_loop_cutoff, h),
            limiter: ForceLimiter::new(&cfg.limits, h),
            monitor: PassivityMonitor::new(cfg.passivity.epsilon, cfg.passivity.patience),
            audio,
            sweep,
            last_raw: None,
            coupled: None,
            fault: None,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn scene(&self) -> &NanoScene {
        &self.scene
    }

    pub fn state(&self) -> &CouplingState {
        &self.state
    }

    pub fn monitor(&self) -> &PassivityMonitor {
        &self.monitor
    }

    pub fn limiter(&self) -> &ForceLimiter {
        &self.limiter
    }

    pub fn audio_ring(&self) -> Arc<AudioRing> {
        self.audio.ring()
    }

    pub fn fault(&self) -> Option<Fault> {
        self.fault
    }

    /// Ticks completed so far.
    pub fn ticks(&self) -> u64 {
        self.scene.network().tick()
    }

    pub fn sweep_profile(&self) -> Option<&SweepProfile> {
        self.sweep.as_ref()
    }

    /// Output of the last coupling step (`None` in sweep mode).
    pub fn last_coupled(&self) -> Option<Coupled> {
        self.coupled
    }

    /// Advances one tick and returns its frame. `key_input` is the newest
    /// raw key reading, `None` to keep chasing the previous one.
    /// `extra_flags` are or-ed into the frame (overrun is decided by the
    /// caller).
    pub fn tick(&mut self, key_input: Option<f64>, extra_flags: u32) -> Frame {
        let flags = self.advance(key_input, extra_flags);
        self.frame(flags)
    }

    /// [`Engine::tick`] without building the frame; returns the flags.
    pub fn advance(&mut self, key_input: Option<f64>, extra_flags: u32) -> u32 {
        let n = self.ticks() + 1;
        let mut flags = extra_flags;
        if self.fault.is_some() {
            return flags | flags::FAULT;
        }

        if let Some(profile) = self.sweep {
            let (z, v, _) = profile.at(n);
            self.scene.drive_piezo(z, v);
            if let Err(f) = self.scene.step() {
                self.fault = Some(f);
                flags |= flags::FAULT;
            }
            self.state.key_pos = self.coupler.key_for_piezo(self.scene.piezo_z());
            self.state.piezo_command = z;
            self.state.key_force_out = 0.0;
        } else {
            if key_input.is_some() {
                self.last_raw = key_input;
            }
            let prev_key = self.state.key_pos;
            if let Some(raw) = self.last_raw {
                let next = ingest_key(raw, &self.cfg.limits, self.cfg.timestep(), &self.state);
                self.state.key_steps = next.key_steps;
                self.state.key_pos = next.key_pos;
                self.state.dropout = next.dropout;
            }
            if self.state.dropout {
                flags |= flags::DROPOUT;
            }
            let key = self.state.key_pos;
            let out = self.coupler.couple(key, self.scene.piezo_z());
            self.coupled = Some(out);
            self.scene.apply_piezo_force(-out.force_to_piezo_nano);
            if let Err(f) = self.scene.step() {
                self.fault = Some(f);
                flags |= flags::FAULT;
            }
            self.state.key_force_out = self.limiter.clamp(self.lowpass.filter(out.force_to_key));
            self.state.piezo_command = self.coupler.piezo_for_key(key);
            let stored = self.coupler.spring_energy(key, self.scene.piezo_z())
                + self.cfg.scaling.energy_gain() * self.scene.network().mechanical_energy();
            self.state.energy_ledger = self.monitor.update(-out.force_to_key, key - prev_key, stored);
            if self.monitor.is_active() {
                flags |= flags::ACTIVE;
            }
        }
        if self.fault.is_none() {
            self.audio.audio_tick(&self.scene);
        }
        flags
    }

    /// Current state as a frame for the last completed tick.
    pub fn frame(&self, flags: u32) -> Frame {
        let tick = match self.fault {
            Some(f) => f.tick + 1,
            None => self.ticks(),
        };
        let key_force = if flags & flags::FAULT != 0 { f64::NAN } else { self.state.key_force_out };
        self.build_frame(tick, flags, key_force)
    }

    fn build_frame(&self, tick: u64, flags: u32, key_force: f64) -> Frame {
        let scene = &self.scene;
        let well_index = if flags & flags::FAULT != 0 {
            None
        } else {
            let base = scene.contact_z();
            let sample = potential_landscape(
                scene.piezo_z() - base,
                scene.tip_z() - base,
                &scene.params().lj,
                scene.kappa(),
                self.cfg.landscape_grid,
            );
            ball_state(&sample, DEFAULT_BARRIER_FRACTION).well_index
        };
        Frame {
            tick,
            t: tick as f64 / self.cfg.tick_rate,
            key_pos: self.state.key_pos,
            key_force,
            piezo_z: scene.piezo_z(),
            tip_z: scene.tip_z(),
            deflection: scene.deflection(),
            tip_force_nano: scene.tip_force(),
            surface_displacements: scene.surface_displacements().collect(),
            well_index,
            flags,
        }
    }
}

/// How the loop is driven and observed.
#[derive(Default)]
pub struct RunOptions {
    /// Overrides the config duration (s).
    pub duration: Option<f64>,
    pub stop: Option<Arc<AtomicBool>>,
    pub mailbox: Option<KeyMailbox>,
    pub publisher: Option<Publisher>,
    /// Sleep until each tick's virtual time. Interactive mode only.
    pub realtime: bool,
}

/// Mean and 99th percentile of per-tick compute time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TickTiming {
    pub mean_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl TickTiming {
    pub fn from_samples(mut us: Vec<f64>) -> Self {
        if us.is_empty() {
            return Self::default();
        }
        us.sort_by(f64::total_cmp);
        let mean = us.iter().sum::<f64>() / us.len() as f64;
        let i = ((us.len() as f64 * 0.99).ceil() as usize).clamp(1, us.len()) - 1;
        Self {
            mean_us: mean,
            p99_us: us[i],
            max_us: us[us.len() - 1],
        }
    }
}

#[derive(Debug)]
pub struct SessionSummary {
    pub ticks: u64,
    pub fault: Option<Fault>,
    pub overruns: u64,
    pub active: bool,
    pub timing: TickTiming,
    /// Sweep mode only.
    pub trace: Option<ForceCurveTrace>,
    pub events: Option<CurveEvents>,
    pub last_frame: Option<Frame>,
}

fn sweep_sample(frame: &Frame, phase: crate::curve::Phase) -> TraceSample {
    TraceSample {
        tick: frame.tick,
        phase,
        piezo_z: frame.piezo_z,
        tip_z: frame.tip_z,
        deflection: frame.deflection,
        tip_force: frame.tip_force_nano,
    }
}

/// Runs a session to completion: script end, configured duration, stop
/// flag or fault.
///
/// Sweep recordings hold only the trace sample ticks. Interactive input
/// comes from the mailbox; without one the key never moves.
pub fn run_session(cfg: &SessionConfig, opts: RunOptions) -> Result<SessionSummary, SessionError> {
    run_engine(Engine::new(cfg)?, opts)
}

/// [`run_session`] on an engine built by the caller, e.g. to take its audio
/// ring first.
pub fn run_engine(mut engine: Engine, opts: RunOptions) -> Result<SessionSummary, SessionError> {
    let cfg = &engine.config().clone();
    let rate = cfg.tick_rate;
    let profile = match cfg.mode {
        Mode::Scripted => Some(KeyProfile::load(cfg.profile.as_ref().expect("validated"))?),
        _ => None,
    };
    let duration = opts.duration.or(cfg.duration);
    let limit: Option<u64> = match (cfg.mode, &profile, engine.sweep_profile()) {
        (Mode::Sweep, _, Some(p)) => Some(duration.map_or(p.len(), |d| ((d * rate).round() as u64).min(p.len()))),
        (Mode::Scripted, Some(p), _) => Some((duration.unwrap_or(p.duration()) * rate).round() as u64),
        _ => duration.map(|d| (d * rate).round() as u64),
    };

    let mut recorder = cfg.record_path.as_ref().map(Recorder::create).transpose()?;
    let mut publisher = opts.publisher;
    let realtime = opts.realtime && cfg.mode == Mode::Interactive;
    let every = cfg.sweep.map_or(1, |s| s.ticks_per_sample as u64);
    let sweep_len = engine.sweep_profile().map_or(0, |p| p.len());

    let mut trace = ForceCurveTrace::default();
    if cfg.mode == Mode::Sweep {
        let scene = engine.scene();
        trace.samples.push(TraceSample {
            tick: 0,
            phase: crate::curve::Phase::Approach,
            piezo_z: scene.piezo_z(),
            tip_z: scene.tip_z(),
            deflection: scene.deflection(),
            tip_force: scene.tip_force(),
        });
    }

    let mut timing = Vec::with_capacity(limit.unwrap_or(1 << 16).min(1 << 24) as usize);
    let mut overruns = 0u64;
    let mut last_frame = None;
    let start = Instant::now();
    let mut n = 0u64;
    let mut late = false;
    loop {
        if limit.is_some_and(|l| n >= l) {
            break;
        }
        if opts.stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed)) {
            break;
        }
        let t_next = (n + 1) as f64 / rate;
        let input = match (&profile, &opts.mailbox) {
            (Some(p), _) => Some(p.at(t_next)),
            (None, Some(m)) => m.latest(),
            _ => None,
        };
        let extra = if late { flags::OVERRUN } else { 0 };
        let t0 = Instant::now();
        let tick_flags = engine.advance(input, extra);
        timing.push(t0.elapsed().as_secs_f64() * 1e6);
        n += 1;

        let keep = cfg.mode != Mode::Sweep || n % every == 0 || n == sweep_len || tick_flags & flags::FAULT != 0;
        if !keep {
            continue;
        }
        let frame = engine.frame(tick_flags);
        if cfg.mode == Mode::Sweep {
            let phase = engine.sweep_profile().map_or(crate::curve::Phase::Approach, |p| p.at(n).2);
            trace.samples.push(sweep_sample(&frame, phase));
        }
        if let Some(r) = recorder.as_mut() {
            r.write(&frame)?;
        }
        let faulted = frame.has(flags::FAULT);
        if let Some(p) = publisher.as_mut() {
            p.publish(frame.clone());
        }
        last_frame = Some(frame);
        if faulted {
            break;
        }

        late = false;
        if realtime {
            let due = start + Duration::from_secs_f64((n + 1) as f64 / rate);
            let now = Instant::now();
            if now > due {
                late = true;
                overruns += 1;
            } else {
                spin_sleep_until(due);
            }
        }
    }
    if let Some(r) = recorder.as_mut() {
        r.flush()?;
    }

    let (trace, events) = if cfg.mode == Mode::Sweep {
        let events = detect_events(&trace, &DetectorConfig::for_scene(engine.scene()));
        (Some(trace), Some(events))
    } else {
        (None, None)
    };
    Ok(SessionSummary {
        ticks: n,
        fault: engine.fault(),
        overruns,
        active: engine.monitor().is_active(),
        timing: TickTiming::from_samples(timing),
        trace,
        events,
        last_frame,
    })
}

/// Sleeps most of the way, then yields until `due`.
fn spin_sleep_until(due: Instant) {
    let now = Instant::now();
    if due <= now {
        return;
    }
    let left = due - now;
    if left > Duration::from_micros(200) {
        std::thread::sleep(left - Duration::from_micros(150));
    }
    while Instant::now() < due {
        std::thread::yield_now();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn far_cfg() -> SessionConfig {
        SessionConfig::default()
    }

    #[test]
    fn frame_roundtrips_with_nulls() {
        let f = Frame {
            tick: 3,
            t: 0.001,
            key_pos: 1e-3,
            key_force: f64::NAN,
            piezo_z: 1e-9,
            tip_z: f64::INFINITY,
            deflection: 0.0,
            tip_force_nano: -1e-12,
            surface_displacements: vec![0.0, f64::NAN],
            well_index: None,
            flags: flags::FAULT,
        };
        let s = f.to_json();
        assert!(s.contains("\"key_force\":null"));
        assert!(s.contains("[0.0,null]"));
        let back: Frame = serde_json::from_str(&s).unwrap();
        assert_eq!(back.to_json(), s);
        assert!(!back.is_finite());
    }

    #[test]
    fn config_requires_mode_fields() {
        let mut cfg = far_cfg();
        cfg.mode = Mode::Scripted;
        assert!(cfg.validate().is_err());
        cfg.mode = Mode::Sweep;
        assert!(cfg.validate().is_err());
        cfg.sweep = Some(SweepConfig::default());
        cfg.validate().unwrap();
        cfg.tick_rate = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_uses_field_names() {
        let cfg = SessionConfig::from_json(r#"{"tick_rate": 1000, "mode": "sweep", "sweep": {"speed": 2e-11}, "cantilever": {"stiffness": 0.2}}"#).unwrap();
        assert_eq!(cfg.tick_rate, 1000.0);
        assert_eq!(cfg.mode, Mode::Sweep);
        assert_eq!(cfg.sweep.unwrap().speed, 2e-11);
        assert_eq!(cfg.cantilever.stiffness, 0.2);
        assert_eq!(cfg.cantilever.tip_mass, CantileverParams::default().tip_mass);
    }

    #[test]
    fn idle_key_far_from_surface_is_quiet() {
        let mut e = Engine::new(&far_cfg()).unwrap();
        for n in 1..=3000u64 {
            let f = e.tick(Some(0.0), 0);
            assert_eq!(f.tick, n);
            assert_eq!(f.t, n as f64 / 3000.0);
            assert_eq!(f.tip_force_nano, 0.0);
            assert_eq!(f.key_force, 0.0);
            assert_eq!(f.flags, 0);
            assert_eq!(f.well_index, Some(0));
        }
    }

    #[test]
    fn dropout_holds_key_and_flags() {
        let mut e = Engine::new(&far_cfg()).unwrap();
        e.tick(Some(1e-3), 0);
        let k = e.state().key_pos;
        let f = e.tick(Some(f64::NAN), 0);
        assert!(f.has(flags::DROPOUT));
        assert_eq!(f.key_pos, k);
        // the dropout reading replaces the target, so the key stays put
        let f = e.tick(None, 0);
        assert_eq!(f.key_pos, k);
    }

    #[test]
    fn pressed_key_lowers_piezo() {
        let mut e = Engine::new(&far_cfg()).unwrap();
        for _ in 0..6000 {
            e.tick(Some(2e-3), 0);
        }
        let want = e.coupler.piezo_for_key(2e-3);
        assert!((e.scene().piezo_z() - want).abs() < 1e-11, "{} vs {want}", e.scene().piezo_z());
        assert!(!e.monitor().is_active());
    }

    #[test]
    fn timing_percentiles() {
        let t = TickTiming::from_samples((1..=100).map(f64::from).collect());
        assert_eq!(t.mean_us, 50.5);
        assert_eq!(t.p99_us, 99.0);
        assert_eq!(t.max_us, 100.0);
    }
}
