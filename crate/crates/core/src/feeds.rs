//! Sensory feeds derived from the scene: an audio stream taken from the
//! vibration of the surface layer, and the potential landscape with the
//! tip drawn as a ball.

use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::scene::{lj_potential, LJParams, NanoScene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioSource {
    /// The element under the tip.
    Contact,
    /// Sum over the listed surface elements (0-based within the layer).
    Elements(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioConfig {
    pub sample_rate: u32,
    /// Output units per m/s of surface velocity.
    pub gain: f64,
    pub source: AudioSource,
    pub highpass_corner: f64,
    /// Ring capacity in samples (rounded up to a power of two).
    pub ring_capacity: usize,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate: 48_000,
            gain: 1e9,
            source: AudioSource::Contact,
            highpass_corner: 20.0,
            ring_capacity: 1 << 15,
        }
    }
}

impl AudioConfig {
    pub fn validate(&self, tick_rate: f64) -> Result<(), String> {
        if self.sample_rate == 0 {
            return Err("sample_rate must be > 0".into());
        }
        if !(self.gain.is_finite() && self.gain >= 0.0) {
            return Err(format!("gain must be >= 0, got {}", self.gain));
        }
        if !(self.highpass_corner.is_finite() && self.highpass_corner >= 0.0) {
            return Err("highpass_corner must be >= 0".into());
        }
        if self.highpass_corner * 2.0 >= tick_rate {
            return Err("highpass_corner must be below half the tick rate".into());
        }
        let per_tick = self.sample_rate as f64 / tick_rate;
        if per_tick.fract() != 0.0 || per_tick < 1.0 {
            return Err(format!("sample_rate must be a whole multiple of the tick rate ({tick_rate} Hz)"));
        }
        if self.ring_capacity == 0 {
            return Err("ring_capacity must be > 0".into());
        }
        Ok(())
    }
}

/// Single-producer single-consumer sample ring. The producer never waits:
/// when full it discards the oldest sample and counts an overrun.
#[derive(Debug)]
pub struct AudioRing {
    slots: Box<[AtomicU32]>,
    mask: u64,
    head: AtomicU64,
    tail: AtomicU64,
    overruns: AtomicU64,
}

impl AudioRing {
    pub fn new(capacity: usize) -> Self {
        let cap = capacity.max(1).next_power_of_two();
        Self {
            slots: (0..cap).map(|_| AtomicU32::new(0)).collect(),
            mask: cap as u64 - 1,
            head: AtomicU64::new(0),
            tail: AtomicU64::new(0),
            overruns: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    /// Producer side.
    pub fn push(&self, sample: f32) {
        let head = self.head.load(Ordering::Relaxed);
        let cap = self.slots.len() as u64;
        let mut tail = self.tail.load(Ordering::Acquire);
        while head - tail >= cap {
            match self.tail.compare_exchange(tail, tail + 1, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => {
                    self.overruns.fetch_add(1, Ordering::Relaxed);
                    break;
                }
                Err(now) => tail = now,
            }
        }
        self.slots[(head & self.mask) as usize].store(sample.to_bits(), Ordering::Relaxed);
        self.head.store(head + 1, Ordering::Release);
    }

    /// Consumer side: moves up to `max` samples into `out`, returns the count.
    pub fn pop_into(&self, out: &mut Vec<f32>, max: usize) -> usize {
        let mut n = 0;
        while n < max {
            let tail = self.tail.load(Ordering::Acquire);
            let head = self.head.load(Ordering::Acquire);
            if tail == head {
                break;
            }
            let v = f32::from_bits(self.slots[(tail & self.mask) as usize].load(Ordering::Relaxed));
            if self
                .tail
                .compare_exchange(tail, tail + 1, Ordering::AcqRel, Ordering::Acquire)
                .is_ok()
            {
                out.push(v);
                n += 1;
            }
        }
        n
    }

    pub fn len(&self) -> usize {
        let head = self.head.load(Ordering::Acquire);
        let tail = self.tail.load(Ordering::Acquire);
        head.saturating_sub(tail) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn overruns(&self) -> u64 {
        self.overruns.load(Ordering::Relaxed)
    }

    /// Total samples ever pushed.
    pub fn written(&self) -> u64 {
        self.head.load(Ordering::Acquire)
    }
}

/// Turns surface velocity into audio at the output rate.
///
/// Per tick: source velocity times gain, one-pole DC-blocking high-pass at
/// the tick rate, then linear interpolation from the previous tick's value
/// to `sample_rate / tick_rate` output samples. Ticks in which the tip is at
/// or beyond the cutoff are rendered silent.
#[derive(Debug)]
pub struct AudioRenderer {
    cfg: AudioConfig,
    per_tick: usize,
    pole: f64,
    x_prev: f64,
    y_prev: f64,
    out_prev: f64,
    block: Vec<f32>,
    ring: Arc<AudioRing>,
}

impl AudioRenderer {
    pub fn new(cfg: AudioConfig, tick_rate: f64) -> Result<Self, String> {
        cfg.validate(tick_rate)?;
        let per_tick = (cfg.sample_rate as f64 / tick_rate) as usize;
        let pole = (-2.0 * std::f64::consts::PI * cfg.highpass_corner / tick_rate).exp();
        let ring = Arc::new(AudioRing::new(cfg.ring_capacity));
        Ok(Self {
            cfg,
            per_tick,
            pole,
            x_prev: 0.0,
            y_prev: 0.0,
            out_prev: 0.0,
            block: Vec::with_capacity(per_tick),
            ring,
        })
    }

    pub fn ring(&self) -> Arc<AudioRing> {
        Arc::clone(&self.ring)
    }

    pub fn samples_per_tick(&self) -> usize {
        self.per_tick
    }

    pub fn config(&self) -> &AudioConfig {
        &self.cfg
    }

    fn source_velocity(&self, scene: &NanoScene) -> f64 {
        let net = scene.network();
        match &self.cfg.source {
            AudioSource::Contact => net.velocity(scene.contact_index()),
            AudioSource::Elements(ids) => {
                let range = scene.surface_indices();
                ids.iter()
                    .map(|&i| range.start + i)
                    .filter(|i| range.contains(i))
                    .map(|i| net.velocity(i))
                    .sum()
            }
        }
    }

    /// Renders one tick, pushes it to the ring and returns it.
    pub fn audio_tick(&mut self, scene: &NanoScene) -> &[f32] {
        let x = self.cfg.gain * self.source_velocity(scene);
        let y = self.pole * (self.y_prev + x - self.x_prev);
        self.x_prev = x;
        self.y_prev = y;
        let live = scene.gap() < scene.law().cutoff();

        self.block.clear();
        if live {
            let n = self.per_tick as f64;
            for j in 1..=self.per_tick {
                let v = self.out_prev + (y - self.out_prev) * j as f64 / n;
                self.block.push(v as f32);
            }
            self.out_prev = y;
        } else {
            self.block.resize(self.per_tick, 0.0);
            self.out_prev = 0.0;
        }
        for &s in &self.block {
            self.ring.push(s);
        }
        &self.block
    }
}

/// Full-scale float to signed 16-bit PCM, clipping at +-1.
pub fn to_pcm16(sample: f32) -> i16 {
    (sample.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16
}

/// Writes mono 16-bit PCM.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<(), hound::Error> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample(to_pcm16(s))?;
    }
    w.finalize()
}

pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Magnitude-weighted mean frequency (Hz) of a Hann-windowed spectrum.
pub fn spectral_centroid(samples: &[f32], sample_rate: f64) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
            Complex::new(s as f64 * hann, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (mut num, mut den) = (0.0, 0.0);
    for (k, c) in buf.iter().enumerate().take(n / 2).skip(1) {
        let mag = c.norm();
        num += mag * k as f64 * sample_rate / n as f64;
        den += mag;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Potential curves over tip gap, with the tip as a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSample {
    pub z_grid: Vec<f64>,
    pub u_total: Vec<f64>,
    pub u_cantilever: Vec<f64>,
    pub u_lj: Vec<f64>,
    pub ball_z: f64,
    /// Minima below this gap belong to the contact well.
    pub contact_limit: f64,
}

pub const DEFAULT_GRID: usize = 512;

/// Samples the cantilever and tip-surface potentials over gap `z`.
///
/// `piezo_z` and `tip_z` are measured from the surface under the tip. The
/// grid runs from `0.5 z_eq` to above both the cutoff and the piezo; its
/// first quarter is log-spaced up to `z_eq`, the rest linear.
pub fn potential_landscape(piezo_z: f64, tip_z: f64, lj: &LJParams, kappa: f64, grid: usize) -> PotentialSample {
    let grid = grid.max(2);
    let z_eq = lj.z_eq();
    let lo = 0.5 * z_eq;
    let hi = lj.cutoff.max(piezo_z) + 0.5 * lj.cutoff;
    let n_log = (grid / 4).max(1).min(grid - 1);
    let mut z_grid = Vec::with_capacity(grid);
    let (a, b) = (lo.ln(), z_eq.ln());
    for i in 0..n_log {
        z_grid.push((a + (b - a) * i as f64 / n_log as f64).exp());
    }
    let n_lin = grid - n_log;
    for i in 0..n_lin {
        let t = if n_lin == 1 { 0.0 } else { i as f64 / (n_lin - 1) as f64 };
        z_grid.push(z_eq + (hi - z_eq) * t);
    }
    let u_cantilever: Vec<f64> = z_grid.iter().map(|&z| 0.5 * kappa * (z - piezo_z) * (z - piezo_z)).collect();
    let u_lj: Vec<f64> = z_grid.iter().map(|&z| lj_potential(z, lj).unwrap_or(f64::NAN)).collect();
    let u_total = u_cantilever.iter().zip(&u_lj).map(|(c, l)| c + l).collect();
    PotentialSample {
        z_grid,
        u_total,
        u_cantilever,
        u_lj,
        ball_z: tip_z,
        contact_limit: lj.max_gradient_gap(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BallState {
    /// 0 = free well, 1 = contact well; `None` when no minimum is found.
    pub well_index: Option<u32>,
    pub in_barrier_region: bool,
    pub wells: usize,
}

impl PotentialSample {
    /// Grid indices of interior local minima of `u_total`.
    pub fn minima(&self) -> Vec<usize> {
        extrema(&self.u_total, |a, b| a < b)
    }

    /// Grid indices of interior local maxima of `u_total`.
    pub fn maxima(&self) -> Vec<usize> {
        extrema(&self.u_total, |a, b| a > b)
    }
}

fn extrema(u: &[f64], better: impl Fn(f64, f64) -> bool) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < u.len() {
        if better(u[i], u[i - 1]) {
            // step across a flat run
            let mut j = i;
            while j + 1 < u.len() && u[j + 1] == u[i] {
                j += 1;
            }
            if j + 1 < u.len() && better(u[i], u[j + 1]) {
                out.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Places the ball in the basin of a minimum and flags barrier proximity.
///
/// Basins are bounded by the interior maxima of `u_total`. The barrier
/// flag is raised when the ball is within `barrier_fraction` of the
/// nearest barrier's gap, `|ball - z_top| <= fraction * z_top`.
pub fn ball_state(sample: &PotentialSample, barrier_fraction: f64) -> BallState {
    let minima = sample.minima();
    let maxima = sample.maxima();
    let z = &sample.z_grid;
    let ball = sample.ball_z;
    let in_barrier_region = maxima.iter().any(|&m| (ball - z[m]).abs() <= barrier_fraction * z[m]);
    if minima.is_empty() {
        return BallState {
            well_index: None,
            in_barrier_region,
            wells: 0,
        };
    }
    // basin edges: maxima below and above the ball
    let below = maxima.iter().rev().map(|&m| z[m]).find(|&zm| zm <= ball).unwrap_or(f64::NEG_INFINITY);
    let above = maxima.iter().map(|&m| z[m]).find(|&zm| zm > ball).unwrap_or(f64::INFINITY);
    let basin_min = minima
        .iter()
        .map(|&m| z[m])
        .filter(|&zm| zm > below && zm < above)
        .min_by(|a, b| (a - ball).abs().total_cmp(&(b - ball).abs()))
        .or_else(|| minima.iter().map(|&m| z[m]).min_by(|a, b| (a - ball).abs().total_cmp(&(b - ball).abs())));
    BallState {
        well_index: basin_min.map(|zm| u32::from(zm < sample.contact_limit)),
        in_barrier_region,
        wells: minima.len(),
    }
}

pub const DEFAULT_BARRIER_FRACTION: f64 = 0.1;

/// Landscape and ball state for the scene's current pose.
pub fn scene_landscape(scene: &NanoScene, grid: usize) -> PotentialSample {
    let base = scene.contact_z();
    potential_landscape(scene.piezo_z() - base, scene.tip_z() - base, &scene.params().lj, scene.kappa(), grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{fold_points, quasi_static_equilibria};
    use crate::scene::{build_scene, CantileverParams, SurfaceParams};

    const TICK_RATE: f64 = 3000.0;

    #[test]
    fn ring_drops_oldest_when_full() {
        let r = AudioRing::new(4);
        for i in 0..6 {
            r.push(i as f32);
        }
        assert_eq!(r.overruns(), 2);
        let mut out = Vec::new();
        assert_eq!(r.pop_into(&mut out, 10), 4);
        assert_eq!(out, vec![2.0, 3.0, 4.0, 5.0]);
        assert!(r.is_empty());
    }

    #[test]
    fn ring_spsc_preserves_order() {
        let r = Arc::new(AudioRing::new(64));
        let p = Arc::clone(&r);
        let n = 200_000u32;
        let producer = std::thread::spawn(move || {
            for i in 0..n {
                p.push(i as f32);
            }
        });
        let mut got = Vec::new();
        loop {
            let done = producer.is_finished();
            r.pop_into(&mut got, 1024);
            if done && r.is_empty() {
                break;
            }
        }
        producer.join().unwrap();
        assert!(got.windows(2).all(|w| w[1] > w[0]), "consumer saw reordering");
        assert_eq!(got.len() as u64 + r.overruns(), n as u64);
        assert_eq!(*got.last().unwrap(), (n - 1) as f32);
    }

    #[test]
    fn resting_scene_is_silent() {
        let mut s = build_scene(LJParams::default(), CantileverParams::default(), SurfaceParams::default(), false, 1.0 / TICK_RATE, 5e-9).unwrap();
        let mut a = AudioRenderer::new(AudioConfig::default(), TICK_RATE).unwrap();
        assert_eq!(a.samples_per_tick(), 16);
        for _ in 0..100 {
            s.step().unwrap();
            assert!(a.audio_tick(&s).iter().all(|&x| x == 0.0));
        }
        assert_eq!(a.ring().len(), 1600);
    }

    #[test]
    fn pcm_conversion_clips() {
        assert_eq!(to_pcm16(0.0), 0);
        assert_eq!(to_pcm16(1.0), i16::MAX);
        assert_eq!(to_pcm16(5.0), i16::MAX);
        assert_eq!(to_pcm16(-5.0), -i16::MAX);
    }

    #[test]
    fn centroid_of_pure_tones() {
        let fs = 48_000.0;
        let tone = |f: f64| -> Vec<f32> { (0..2048).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin() as f32).collect() };
        let lo = spectral_centroid(&tone(500.0), fs);
        let hi = spectral_centroid(&tone(4000.0), fs);
        assert!((lo - 500.0).abs() < 100.0, "{lo}");
        assert!((hi - 4000.0).abs() < 100.0, "{hi}");
    }

    #[test]
    fn additivity_is_exact() {
        let p = LJParams::default();
        for piezo in [5e-9, 1e-9, 0.5e-9, 0.1e-9] {
            let s = potential_landscape(piezo, 0.4e-9, &p, 0.1, DEFAULT_GRID);
            assert_eq!(s.z_grid.len(), DEFAULT_GRID);
            assert!(s.z_grid.windows(2).all(|w| w[1] > w[0]));
            for i in 0..s.z_grid.len() {
                assert_eq!(s.u_total[i], s.u_cantilever[i] + s.u_lj[i]);
            }
        }
    }

    #[test]
    fn far_piezo_gives_single_parabola_well() {
        let p = LJParams::default();
        let piezo = 5e-9;
        let s = potential_landscape(piezo, piezo, &p, 0.1, DEFAULT_GRID);
        let minima = s.minima();
        assert_eq!(minima.len(), 1);
        let dz = s.z_grid[minima[0] + 1] - s.z_grid[minima[0]];
        assert!((s.z_grid[minima[0]] - piezo).abs() <= dz);
        let st = ball_state(&s, DEFAULT_BARRIER_FRACTION);
        assert_eq!(st.well_index, Some(0));
        assert!(!st.in_barrier_region);
    }

    #[test]
    fn double_well_between_folds() {
        let p = LJParams::default();
        let kappa = 0.1;
        let (snap_in, snap_off) = fold_points(&p, kappa).unwrap();
        let mid = 0.5 * (snap_in.piezo_z + snap_off.piezo_z);
        let eq = quasi_static_equilibria(&p, kappa, mid);
        let s = potential_landscape(mid, eq[0].tip_z, &p, kappa, DEFAULT_GRID);
        assert_eq!(s.minima().len(), 2);
        assert_eq!(s.maxima().len(), 1);
        assert_eq!(ball_state(&s, DEFAULT_BARRIER_FRACTION).well_index, Some(1));
        let far = eq.last().unwrap().tip_z;
        let s = potential_landscape(mid, far, &p, kappa, DEFAULT_GRID);
        assert_eq!(ball_state(&s, DEFAULT_BARRIER_FRACTION).well_index, Some(0));
    }
}
