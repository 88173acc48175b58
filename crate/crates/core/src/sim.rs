//! Synthetic THz time-domain transmission scans of a phantom.
//!
//! Each detector position fires a straight parallel-beam ray through the
//! material grid. The ray's optical delay and Beer–Lambert attenuation shape
//! a copy of the reference pulse (plus one internal-reflection echo); the
//! traces are then mixed along the detector axis by the finite beam width and
//! corrupted by white noise at the configured dynamic range.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phantom::Phantom;
use crate::tensor::Tensor;

/// Speed of light in vacuum, mm/ps.
pub const SPEED_OF_LIGHT: f64 = 0.299_792_458;
const FWHM_PER_SIGMA: f64 = 2.354_820_045;

#[derive(Clone, Debug, PartialEq)]
pub struct ScanConfig {
    pub n_angles: usize,
    pub angle_step_deg: f64,
    pub width: usize,
    pub pitch_mm: f64,
    pub n_time: usize,
    pub dt_ps: f64,
    pub pulse_fwhm_ps: f64,
    /// Arrival time of the air-path pulse; `None` means a quarter of the window.
    pub t0_ps: Option<f64>,
    pub beam_fwhm_mm: f64,
    /// Peak-to-noise amplitude ratio in dB; `f64::INFINITY` disables noise.
    pub noise_db: f64,
    pub echo_enabled: bool,
    pub seed: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            n_angles: 30,
            angle_step_deg: 6.0,
            width: crate::phantom::DEFAULT_WIDTH,
            pitch_mm: crate::phantom::DEFAULT_PITCH_MM,
            n_time: 512,
            dt_ps: 0.2,
            pulse_fwhm_ps: 0.5,
            t0_ps: None,
            beam_fwhm_mm: 1.25,
            noise_db: 41.7,
            echo_enabled: true,
            seed: 0,
        }
    }
}

pub const SCAN_CONFIG_KEYS: [&str; 12] = [
    "n_angles",
    "angle_step_deg",
    "width",
    "pitch_mm",
    "n_time",
    "dt_ps",
    "pulse_fwhm_ps",
    "t0_ps",
    "beam_fwhm_mm",
    "noise_db",
    "echo_enabled",
    "seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::validation(format!("cannot parse {key} = {value:?}")))
}

impl ScanConfig {
    pub fn t0(&self) -> f64 {
        self.t0_ps
            .unwrap_or(self.n_time as f64 * self.dt_ps / 4.0)
    }

    pub fn noise_sigma(&self) -> f64 {
        if self.noise_db.is_infinite() && self.noise_db > 0.0 {
            0.0
        } else {
            10f64.powf(-self.noise_db / 20.0)
        }
    }

    pub fn pulse_sigma_ps(&self) -> f64 {
        self.pulse_fwhm_ps / (FWHM_PER_SIGMA / 2.0)
    }

    pub fn angles_deg(&self) -> Vec<f64> {
        (0..self.n_angles)
            .map(|k| k as f64 * self.angle_step_deg)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.n_angles == 0 {
            return fail("n_angles must be >= 1".into());
        }
        if !(self.angle_step_deg > 0.0) {
            return fail("angle_step_deg must be positive".into());
        }
        let span = self.n_angles as f64 * self.angle_step_deg;
        if span > 180.0 + 1e-9 {
            return fail(format!(
                "n_angles * angle_step_deg = {span} exceeds 180 degrees"
            ));
        }
        if self.width == 0 || !(self.pitch_mm > 0.0) {
            return fail("width and pitch_mm must be positive".into());
        }
        if self.n_time < 2 || !(self.dt_ps > 0.0) {
            return fail("need n_time >= 2 and dt_ps > 0".into());
        }
        if !(self.pulse_fwhm_ps > 0.0) || !(self.beam_fwhm_mm >= 0.0) {
            return fail("pulse_fwhm_ps must be positive and beam_fwhm_mm non-negative".into());
        }
        if self.noise_db.is_nan() {
            return fail("noise_db is NaN".into());
        }
        let t0 = self.t0();
        if !(t0 >= 0.0) || t0 >= self.n_time as f64 * self.dt_ps {
            return fail(format!("t0_ps = {t0} lies outside the time window"));
        }
        Ok(())
    }

    /// Largest delay any ray through `phantom` can accumulate: the most
    /// refractive material along the full field-of-view diagonal.
    pub fn max_possible_delay(&self, phantom: &Phantom) -> f64 {
        let n_max = phantom
            .materials()
            .iter()
            .filter(|m| !m.opaque)
            .map(|m| m.n)
            .fold(1.0, f64::max);
        let diagonal = self.width as f64 * self.pitch_mm * std::f64::consts::SQRT_2;
        (n_max - 1.0) * diagonal / SPEED_OF_LIGHT
    }

    pub fn validate_for(&self, phantom: &Phantom) -> Result<()> {
        self.validate()?;
        if phantom.width() != self.width {
            return Err(Error::validation(format!(
                "scan width {} does not match phantom width {}",
                self.width,
                phantom.width()
            )));
        }
        if (phantom.pitch_mm() - self.pitch_mm).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "scan pitch {} does not match phantom pitch {}",
                self.pitch_mm,
                phantom.pitch_mm()
            )));
        }
        let window = self.n_time as f64 * self.dt_ps;
        let needed = self.t0() + self.max_possible_delay(phantom);
        if window <= needed {
            return Err(Error::validation(format!(
                "time window {window} ps cannot hold t0 + max delay = {needed:.2} ps"
            )));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_angles" => self.n_angles = parse(key, value)?,
            "angle_step_deg" => self.angle_step_deg = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "pitch_mm" => self.pitch_mm = parse(key, value)?,
            "n_time" => self.n_time = parse(key, value)?,
            "dt_ps" => self.dt_ps = parse(key, value)?,
            "pulse_fwhm_ps" => self.pulse_fwhm_ps = parse(key, value)?,
            "t0_ps" => {
                self.t0_ps = match value.trim() {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "beam_fwhm_mm" => self.beam_fwhm_mm = parse(key, value)?,
            "noise_db" => self.noise_db = parse(key, value)?,
            "echo_enabled" => self.echo_enabled = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::validation(format!("unknown scan config key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("n_angles", self.n_angles.to_string());
        m.insert("angle_step_deg", self.angle_step_deg.to_string());
        m.insert("width", self.width.to_string());
        m.insert("pitch_mm", self.pitch_mm.to_string());
        m.insert("n_time", self.n_time.to_string());
        m.insert("dt_ps", self.dt_ps.to_string());
        m.insert("pulse_fwhm_ps", self.pulse_fwhm_ps.to_string());
        m.insert("t0_ps", self.t0().to_string());
        m.insert("beam_fwhm_mm", self.beam_fwhm_mm.to_string());
        m.insert("noise_db", self.noise_db.to_string());
        m.insert("echo_enabled", self.echo_enabled.to_string());
        m.insert("seed", self.seed.to_string());
        m
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

impl fmt::Display for ScanConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayResult {
    pub delay_ps: f64,
    pub attenuation: f64,
    pub path_len_mm: f64,
    pub blocked: bool,
}

impl RayResult {
    /// Path-averaged refractive index of the in-object segments.
    pub fn mean_index(&self) -> f64 {
        if self.path_len_mm > 0.0 {
            1.0 + self.delay_ps * SPEED_OF_LIGHT / self.path_len_mm
        } else {
            1.0
        }
    }
}

/// Sampled reference pulse: the first derivative of a Gaussian centred on
/// `t0`, scaled so the largest sample magnitude is exactly 1.
pub fn reference_pulse(cfg: &ScanConfig) -> Vec<f64> {
    let sigma = cfg.pulse_sigma_ps();
    let t0 = cfg.t0();
    let half_e = 0.5f64.exp();
    let mut p: Vec<f64> = (0..cfg.n_time)
        .map(|i| {
            let u = (i as f64 * cfg.dt_ps - t0) / sigma;
            -u * half_e * (-0.5 * u * u).exp()
        })
        .collect();
    let peak = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        p.iter_mut().for_each(|v| *v /= peak);
    }
    p
}

/// Half length (in pixels) of the ray march: covers the field-of-view
/// diagonal and keeps the sample grid aligned to pixel edges.
fn march_half_length_px(width: usize) -> f64 {
    let half = width as f64 / 2.0;
    half + (width as f64 / std::f64::consts::SQRT_2 - half).ceil()
}

pub fn detector_offset(index: usize, width: usize, pitch_mm: f64) -> f64 {
    (index as f64 - (width as f64 - 1.0) / 2.0) * pitch_mm
}

/// Marches the parallel-beam ray at `angle_deg` and detector index `s_index`
/// through the grid in quarter-pixel steps.
pub fn trace_ray(phantom: &Phantom, angle_deg: f64, s_index: usize) -> RayResult {
    let width = phantom.width();
    let pitch = phantom.pitch_mm();
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let s = detector_offset(s_index, width, pitch);
    let step = pitch / 4.0;
    let half_len = march_half_length_px(width) * pitch;
    let n_steps = (2.0 * half_len / step).round() as usize;
    let half = width as f64 / 2.0;
    let (mut optical, mut absorb, mut path) = (0.0, 0.0, 0.0);
    let mut blocked = false;
    for j in 0..n_steps {
        let l = -half_len + (j as f64 + 0.5) * step;
        let x = s * cos - l * sin;
        let y = s * sin + l * cos;
        let col = (x / pitch + half).floor();
        let row = (half - y / pitch).floor();
        if col < 0.0 || row < 0.0 || col >= width as f64 || row >= width as f64 {
            continue;
        }
        let idx = phantom.grid()[row as usize * width + col as usize];
        if idx == 0 {
            continue;
        }
        let m = &phantom.materials()[idx as usize];
        if m.opaque {
            blocked = true;
        }
        optical += (m.n - 1.0) * step;
        absorb += m.alpha * step;
        path += step;
    }
    RayResult {
        delay_ps: optical / SPEED_OF_LIGHT,
        attenuation: if blocked { 0.0 } else { (-absorb).exp() },
        path_len_mm: path,
        blocked,
    }
}

/// Adds `gain · p(t − delay)` to `out`, linearly interpolating the sampled
/// pulse between grid points.
fn add_shifted(out: &mut [f64], pulse: &[f64], delay_ps: f64, dt: f64, gain: f64) {
    let shift = delay_ps / dt;
    let n = pulse.len();
    for (i, o) in out.iter_mut().enumerate() {
        let pos = i as f64 - shift;
        if pos < 0.0 || pos > (n - 1) as f64 {
            continue;
        }
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        let v = if frac == 0.0 || i0 + 1 >= n {
            pulse[i0]
        } else {
            pulse[i0] * (1.0 - frac) + pulse[i0 + 1] * frac
        };
        *o += gain * v;
    }
}

pub fn synthesize_trace(ray: &RayResult, cfg: &ScanConfig, pulse: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; pulse.len()];
    if ray.blocked {
        return out;
    }
    let a = ray.attenuation;
    add_shifted(&mut out, pulse, ray.delay_ps, cfg.dt_ps, a);
    if cfg.echo_enabled && ray.path_len_mm > 0.0 {
        let n_bar = ray.mean_index();
        let r = (n_bar - 1.0) / (n_bar + 1.0);
        let echo_delay = 2.0 * n_bar * ray.path_len_mm / SPEED_OF_LIGHT;
        add_shifted(&mut out, pulse, ray.delay_ps + echo_delay, cfg.dt_ps, a * r * r);
    }
    out
}

/// Normalized Gaussian beam profile over detector positions, truncated at ±3σ.
pub fn beam_kernel(cfg: &ScanConfig) -> Vec<f64> {
    let sigma_px = cfg.beam_fwhm_mm / (FWHM_PER_SIGMA * cfg.pitch_mm);
    if sigma_px <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma_px).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma_px).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Symmetric reflection (`d c b a | a b c d | d c b a`) of an index into `0..n`.
pub fn reflect_index(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Convolves each time column of a `rows × n_time` block along the row axis.
pub fn blur_rows(traces: &[Vec<f64>], kernel: &[f64]) -> Vec<Vec<f64>> {
    let rows = traces.len();
    let radius = (kernel.len() / 2) as isize;
    (0..rows)
        .map(|s| {
            let mut acc = vec![0.0; traces[s].len()];
            for (k, &g) in kernel.iter().enumerate() {
                let src = &traces[reflect_index(s as isize + k as isize - radius, rows)];
                acc.iter_mut().zip(src).for_each(|(a, &v)| *a += g * v);
            }
            acc
        })
        .collect()
}

fn frame_rng(seed: u64, angle_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(angle_index as u64);
    rng
}

/// Noise-free per-position traces for one projection, before beam mixing.
pub fn clean_traces(phantom: &Phantom, angle_deg: f64, cfg: &ScanConfig, pulse: &[f64]) -> Vec<Vec<f64>> {
    (0..cfg.width)
        .map(|s| synthesize_trace(&trace_ray(phantom, angle_deg, s), cfg, pulse))
        .collect()
}

/// One projection `width × n_time` at angle `angle_index · angle_step_deg`.
pub fn simulate_frame(phantom: &Phantom, angle_index: usize, cfg: &ScanConfig) -> Result<Tensor> {
    cfg.validate_for(phantom)?;
    let pulse = reference_pulse(cfg);
    Ok(frame_with_pulse(phantom, angle_index, cfg, &pulse))
}

fn frame_with_pulse(phantom: &Phantom, angle_index: usize, cfg: &ScanConfig, pulse: &[f64]) -> Tensor {
    let angle = angle_index as f64 * cfg.angle_step_deg;
    let traces = clean_traces(phantom, angle, cfg, pulse);
    let mixed = blur_rows(&traces, &beam_kernel(cfg));
    let sigma = cfg.noise_sigma();
    let mut data = Vec::with_capacity(cfg.width * cfg.n_time);
    if sigma > 0.0 {
        let mut rng = frame_rng(cfg.seed, angle_index);
        for row in &mixed {
            for &v in row {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push((v + sigma * z) as f32);
            }
        }
    } else {
        data.extend(mixed.iter().flatten().map(|&v| v as f32));
    }
    Tensor::from_f32(vec![cfg.width, cfg.n_time], data).unwrap()
}

/// A simulated slice: `(n_angles, width, n_time)` f32 samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanVolume {
    pub data: Tensor,
    pub config: ScanConfig,
}

impl ScanVolume {
    pub fn new(data: Tensor, config: ScanConfig) -> Result<Self> {
        data.expect_shape(&[config.n_angles, config.width, config.n_time], "scan volume")?;
        if data.as_f32().is_none() {
            return Err(Error::validation("scan volume must be f32"));
        }
        Ok(Self { data, config })
    }

    /// Samples of projection `k` as a `width × n_time` row-major slice.
    pub fn frame(&self, k: usize) -> &[f32] {
        let n = self.config.width * self.config.n_time;
        &self.data.as_f32().expect("scan volumes are f32")[k * n..(k + 1) * n]
    }

    pub fn frame_tensor(&self, k: usize) -> Tensor {
        Tensor::from_f32(vec![self.config.width, self.config.n_time], self.frame(k).to_vec())
            .unwrap()
    }
}

pub fn simulate_scan(phantom: &Phantom, cfg: &ScanConfig) -> Result<ScanVolume> {
    cfg.validate_for(phantom)?;
    let pulse = reference_pulse(cfg);
    let frames: Vec<Tensor> = (0..cfg.n_angles)
        .into_par_iter()
        .map(|k| frame_with_pulse(phantom, k, cfg, &pulse))
        .collect();
    let mut data = Vec::with_capacity(cfg.n_angles * cfg.width * cfg.n_time);
    for f in frames {
        data.extend(f.into_f32_vec());
    }
    ScanVolume::new(
        Tensor::from_f32(vec![cfg.n_angles, cfg.width, cfg.n_time], data)?,
        cfg.clone(),
    )
}
