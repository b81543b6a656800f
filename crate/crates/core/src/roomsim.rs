//! Shoebox room impulse responses by the image-source method.
//!
//! Positions are expressed in scene coordinates: the origin is the room
//! center and the room spans `[-dims/2, dims/2]` on every axis. All six
//! walls share one absorption coefficient `α`; every reflection scales the
//! pressure by `sqrt(1 − α)`. Arrivals are placed with a Hann-windowed sinc
//! fractional-delay kernel, so sub-sample geometry is preserved.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub type Point = [f64; 3];

/// Sabine's constant `24 ln(10) / c` at c ≈ 343 m/s, in s/m.
pub const SABINE_CONSTANT: f64 = 0.1611;
pub const SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_FRAC_DELAY_TAPS: usize = 81;
pub const DEFAULT_HIGHPASS_HZ: f64 = 100.0;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("invalid room: {0}")]
    Room(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
}

/// How a target reverberation time is turned into a wall absorption.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AbsorptionModel {
    /// `α = 0.1611·V / (S·T60)`.
    Sabine,
    /// `α = 1 − exp(−0.1611·V / (S·T60))`.
    Eyring,
    /// Inverts the T20 decay of the image lattice itself (see
    /// [`lattice_absorption`]), so simulated rooms hit their target T60.
    #[default]
    Lattice,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Absorption {
    pub alpha: f64,
    /// The formula asked for `α > 1` and the value was clamped to 1.
    pub clamped: bool,
}

fn volume_and_surface(dims: Point) -> (f64, f64) {
    let [x, y, z] = dims;
    (x * y * z, 2.0 * (x * y + x * z + y * z))
}

fn check_room_inputs(dims: Point, rt60: f64) -> Result<(), SimError> {
    if dims.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(SimError::Room(format!("dimensions must be positive, got {dims:?}")));
    }
    if !(rt60 > 0.0) {
        return Err(SimError::Room(format!("rt60 must be positive, got {rt60}")));
    }
    Ok(())
}

fn clamp_alpha(alpha: f64) -> Absorption {
    if alpha > 1.0 {
        log::warn!("absorption {alpha:.3} exceeds 1; clamped (room too small for the requested rt60)");
        Absorption { alpha: 1.0, clamped: true }
    } else {
        Absorption { alpha, clamped: false }
    }
}

/// Uniform wall absorption from Sabine's formula, clamped to `(0, 1]`.
pub fn sabine_absorption(dims: Point, rt60: f64) -> Result<Absorption, SimError> {
    check_room_inputs(dims, rt60)?;
    let (v, s) = volume_and_surface(dims);
    Ok(clamp_alpha(SABINE_CONSTANT * v / (s * rt60)))
}

/// Uniform wall absorption from Eyring's formula, in `(0, 1)`.
pub fn eyring_absorption(dims: Point, rt60: f64) -> Result<Absorption, SimError> {
    check_room_inputs(dims, rt60)?;
    let (v, s) = volume_and_surface(dims);
    Ok(clamp_alpha(1.0 - (-SABINE_CONSTANT * v / (s * rt60)).exp()))
}

const LATTICE_DIRECTIONS: usize = 4096;

/// T20 reverberation time of a shoebox image lattice whose per-reflection
/// energy factor is `1/e` (unit log-absorption).
///
/// Images at distance `d` in direction `u` have undergone about
/// `d·Σ|u_a|/L_a` reflections, and their count grows like `d²`, cancelling
/// spherical spreading. The energy envelope is therefore the direction
/// average of `exp(−κ·c·t·w(u))` with `w(u) = Σ|u_a|/L_a` and
/// `κ = −ln(1 − α)`, whose backward integral is closed-form. The envelope
/// depends on `α` only through `κ·t`, so T60(α) = T60(κ = 1) / κ.
pub fn lattice_unit_rt60(dims: Point, c: f64) -> f64 {
    // Fibonacci sphere
    let golden = PI * (3.0 - 5f64.sqrt());
    let rates: Vec<f64> = (0..LATTICE_DIRECTIONS)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / LATTICE_DIRECTIONS as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let u = [r * phi.cos(), r * phi.sin(), z];
            c * (0..3).map(|a| u[a].abs() / dims[a]).sum::<f64>()
        })
        .collect();
    let edc = |t: f64| rates.iter().map(|&b| (-b * t).exp() / b).sum::<f64>();
    let e0 = edc(0.0);
    let db = |t: f64| 10.0 * (edc(t) / e0).log10();
    let cross = |level: f64| {
        let (mut lo, mut hi) = (0.0, 1.0);
        while db(hi) > level {
            hi *= 2.0;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if db(mid) > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let (t5, t25) = (cross(-5.0), cross(-25.0));
    // least-squares line through the curve between the two crossings
    let n = 256;
    let pts: Vec<(f64, f64)> = (0..=n).map(|i| t5 + (t25 - t5) * i as f64 / n as f64).map(|t| (t, db(t))).collect();
    let m = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let md = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|(t, d)| (t - mt) * (d - md)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    -60.0 / (sxy / sxx)
}

/// Uniform wall absorption whose image-lattice decay has T20-based
/// reverberation time `rt60`.
pub fn lattice_absorption(dims: Point, rt60: f64, c: f64) -> Result<Absorption, SimError> {
    check_room_inputs(dims, rt60)?;
    let kappa = lattice_unit_rt60(dims, c) / rt60;
    Ok(clamp_alpha(1.0 - (-kappa).exp()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// `(Lx, Ly, Lz)` in meters.
    pub dims: Point,
    pub rt60: f64,
    pub absorption: f64,
}

impl RoomSpec {
    pub fn new(dims: Point, rt60: f64, model: AbsorptionModel) -> Result<Self, SimError> {
        let a = match model {
            AbsorptionModel::Sabine => sabine_absorption(dims, rt60)?,
            AbsorptionModel::Eyring => eyring_absorption(dims, rt60)?,
            AbsorptionModel::Lattice => lattice_absorption(dims, rt60, SPEED_OF_SOUND)?,
        };
        Ok(RoomSpec { dims, rt60, absorption: a.alpha })
    }

    pub fn half_extent(&self) -> Point {
        self.dims.map(|d| 0.5 * d)
    }

    /// True when `p` is at least `margin` meters from every wall.
    pub fn contains(&self, p: Point, margin: f64) -> bool {
        p.iter().zip(self.half_extent()).all(|(c, h)| c.abs() < h - margin)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub fs: f64,
    /// RIR length in samples.
    pub k: usize,
    pub c: f64,
    /// Reflection order cap; `None` picks one from the window length.
    pub max_order: Option<u32>,
    pub frac_delay_taps: usize,
    /// Cutoff of the Allen–Berkley high-pass applied to the rendered
    /// response, in Hz. `None` leaves the raw image sum.
    pub highpass_hz: Option<f64>,
}

impl SimConfig {
    pub fn new(fs: f64, k: usize) -> Self {
        SimConfig {
            fs,
            k,
            c: SPEED_OF_SOUND,
            max_order: None,
            frac_delay_taps: DEFAULT_FRAC_DELAY_TAPS,
            highpass_hz: Some(DEFAULT_HIGHPASS_HZ),
        }
    }

    /// Raw image sum without the high-pass; the direct path of a free field
    /// is then exactly the fractional-delay kernel.
    pub fn unfiltered(fs: f64, k: usize) -> Self {
        SimConfig { highpass_hz: None, ..Self::new(fs, k) }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.fs > 0.0) || self.k == 0 || !(self.c > 0.0) {
            return Err(SimError::Config(format!("fs={}, K={}, c={}", self.fs, self.k, self.c)));
        }
        if let Some(f) = self.highpass_hz {
            if !(f > 0.0 && f < self.fs / 2.0) {
                return Err(SimError::Config(format!("high-pass cutoff {f} Hz outside (0, fs/2)")));
            }
        }
        if self.frac_delay_taps.is_multiple_of(2) || self.frac_delay_taps < 9 {
            return Err(SimError::Config(format!(
                "fractional-delay taps must be odd and >= 9, got {}",
                self.frac_delay_taps
            )));
        }
        Ok(())
    }

    fn half_taps(&self) -> usize {
        self.frac_delay_taps / 2
    }

    /// Longest propagation distance that can still put energy in the window.
    pub fn horizon(&self) -> f64 {
        (self.k + self.half_taps() + 1) as f64 * self.c / self.fs
    }

    /// Smallest reflection order that includes every image within
    /// [`horizon`](Self::horizon) of any point of `room`.
    pub fn auto_order(&self, room: &RoomSpec) -> u32 {
        let h = self.horizon();
        let sum: f64 = room.dims.iter().map(|l| h / l).sum();
        sum.ceil() as u32 + 3
    }
}

/// A sampled impulse response.
#[derive(Clone, Debug, PartialEq)]
pub struct Rir {
    pub samples: Vec<f64>,
    pub fs: f64,
}

impl Rir {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageSource {
    /// Scene coordinates.
    pub position: Point,
    pub gain: f64,
    pub order: u32,
}

/// Per-axis image coordinates `(position, reflections)` in scene
/// coordinates, for all lattice images with at most `max_order` reflections.
fn axis_images(src: f64, len: f64, max_order: u32) -> Vec<(f64, u32)> {
    // Corner frame: image = 2nL + (1 − 2q)(s + L/2), reflections = |2n − q|.
    // Shifted back to the center frame that is s + 2nL (q = 0) or
    // (2n − 1)L − s (q = 1).
    let mut out = Vec::with_capacity(2 * max_order as usize + 1);
    let n_max = (max_order as i64 + 1) / 2 + 1;
    for n in -n_max..=n_max {
        for q in 0..=1i64 {
            let r = (2 * n - q).unsigned_abs();
            if r <= u64::from(max_order) {
                let pos = if q == 0 { src + 2.0 * n as f64 * len } else { (2 * n - 1) as f64 * len - src };
                out.push((pos, r as u32));
            }
        }
    }
    out.sort_by_key(|&(_, r)| r);
    out
}

fn check_inside(room: &RoomSpec, p: Point, what: &str) -> Result<(), SimError> {
    if !room.contains(p, 0.0) {
        return Err(SimError::Geometry(format!("{what} {p:?} is not strictly inside room {:?}", room.dims)));
    }
    Ok(())
}

/// All image sources with total reflection count `<= max_order`.
pub fn image_sources(room: &RoomSpec, source: Point, max_order: u32) -> Result<Vec<ImageSource>, SimError> {
    image_sources_within(room, source, max_order, None)
}

/// Like [`image_sources`], keeping only images within `radius` of `center`.
fn image_sources_within(
    room: &RoomSpec,
    source: Point,
    max_order: u32,
    within: Option<(Point, f64)>,
) -> Result<Vec<ImageSource>, SimError> {
    check_inside(room, source, "source")?;
    if !(0.0..=1.0).contains(&room.absorption) {
        return Err(SimError::Room(format!("absorption {} outside [0, 1]", room.absorption)));
    }
    let beta = (1.0 - room.absorption).sqrt();
    let axes: Vec<Vec<(f64, u32)>> = (0..3).map(|a| axis_images(source[a], room.dims[a], max_order)).collect();
    let mut out = Vec::new();
    for &(px, rx) in &axes[0] {
        let dx = within.map_or(0.0, |(c, _)| px - c[0]);
        for &(py, ry) in &axes[1] {
            if rx + ry > max_order {
                break;
            }
            let dy = within.map_or(0.0, |(c, _)| py - c[1]);
            for &(pz, rz) in &axes[2] {
                let order = rx + ry + rz;
                if order > max_order {
                    break;
                }
                if let Some((c, radius)) = within {
                    let dz = pz - c[2];
                    if dx * dx + dy * dy + dz * dz > radius * radius {
                        continue;
                    }
                }
                out.push(ImageSource { position: [px, py, pz], gain: beta.powi(order as i32), order });
            }
        }
    }
    Ok(out)
}

fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Adds `amplitude` at fractional sample `delay` into `out`.
fn place_arrival(out: &mut [f64], delay: f64, amplitude: f64, half: usize) {
    let center = delay.round() as i64;
    let first = center - half as i64;
    let width = (half + 1) as f64;
    // sin(π(n − τ)) alternates sign with n, so one sine serves all taps.
    let base = (PI * (first as f64 - delay)).sin();
    for j in 0..=(2 * half) as i64 {
        let n = first + j;
        if n < 0 {
            continue;
        }
        if n as usize >= out.len() {
            break;
        }
        let x = n as f64 - delay;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            let s = if j % 2 == 0 { base } else { -base };
            s / (PI * x)
        };
        let window = 0.5 * (1.0 + (PI * x / width).cos());
        out[n as usize] += amplitude * sinc * window;
    }
}

/// Sums free-field Green's function arrivals `gain / (4πd)` at delay `d/c`.
pub fn render_rir(images: &[ImageSource], mic: Point, cfg: &SimConfig) -> Result<Rir, SimError> {
    cfg.validate()?;
    let mut samples = vec![0.0; cfg.k];
    let half = cfg.half_taps();
    let horizon = cfg.horizon();
    for img in images {
        let d = distance(img.position, mic);
        if d < 1e-9 {
            return Err(SimError::Geometry(format!("microphone {mic:?} coincides with an image source")));
        }
        if d > horizon || img.gain == 0.0 {
            continue;
        }
        place_arrival(&mut samples, d * cfg.fs / cfg.c, img.gain / (4.0 * PI * d), half);
    }
    if let Some(f) = cfg.highpass_hz {
        highpass(&mut samples, f, cfg.fs);
    }
    Ok(Rir { samples, fs: cfg.fs })
}

/// Allen–Berkley second-order high-pass, in place.
///
/// With every wall reflecting in phase the image sum carries a large
/// low-frequency component that builds up coherently with image density and
/// decays far slower than the broadband energy. Removing it is standard
/// practice for image-method generators.
pub fn highpass(x: &mut [f64], cutoff_hz: f64, fs: f64) {
    let w = 2.0 * PI * cutoff_hz / fs;
    let r1 = (-w).exp();
    let b1 = 2.0 * r1 * w.cos();
    let b2 = -r1 * r1;
    let a1 = -(1.0 + r1);
    let (mut y0, mut y1) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y2 = y1;
        y1 = y0;
        y0 = b1 * y1 + b2 * y2 + *v;
        *v = y0 + a1 * y1 + r1 * y2;
    }
}

/// Complete RIR from `source` to `mic`, absolute propagation delay kept.
pub fn simulate_rir(room: &RoomSpec, source: Point, mic: Point, cfg: &SimConfig) -> Result<Rir, SimError> {
    let mut out = simulate_array(room, source, &[mic], cfg)?;
    Ok(out.remove(0))
}

/// RIRs from one source to many microphones; the image lattice is built
/// once.
pub fn simulate_array(room: &RoomSpec, source: Point, mics: &[Point], cfg: &SimConfig) -> Result<Vec<Rir>, SimError> {
    cfg.validate()?;
    for (i, &m) in mics.iter().enumerate() {
        check_inside(room, m, &format!("microphone {i}"))?;
        if distance(m, source) < 1e-9 {
            return Err(SimError::Geometry(format!("microphone {i} coincides with the source")));
        }
    }
    let order = cfg.max_order.unwrap_or_else(|| cfg.auto_order(room));
    // Prune images that cannot reach any microphone inside the window.
    let within = if mics.is_empty() {
        None
    } else {
        let n = mics.len() as f64;
        let c = [0, 1, 2].map(|a| mics.iter().map(|m| m[a]).sum::<f64>() / n);
        let spread = mics.iter().map(|&m| distance(m, c)).fold(0.0, f64::max);
        Some((c, cfg.horizon() + spread))
    };
    let images = image_sources_within(room, source, order, within)?;
    mics.iter().map(|&m| render_rir(&images, m, cfg)).collect()
}
