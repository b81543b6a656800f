//! Scene generation for the two array experiments and the on-disk dataset
//! container.
//!
//! # Dataset file layout
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | field                                  |
//! |-------:|-----:|----------------------------------------|
//! | 0      | 4    | magic `b"RIRD"`                        |
//! | 4      | 4    | format version (`u32`, currently 1)    |
//! | 8      | 4    | sampling rate `fs` (`u32`, Hz)         |
//! | 12     | 4    | RIR length `K` (`u32`)                 |
//! | 16     | 4    | array points `L` (`u32`)               |
//! | 20     | 8    | scene count (`u64`)                    |
//! | 28     | 1    | experiment id (`u8`, 1 or 2)           |
//! | 29     | 4    | CRC-32 of everything after this field  |
//! | 33     | ...  | scene records                          |
//!
//! Each scene record is: room dims `3×f64`, rt60 `f64`, absorption `f64`,
//! source `3×f64`, point positions `L×3 f64` (row-major), RIR samples
//! `L×K f32` (row-major).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng::{stream, Rng};
use crate::roomsim::{simulate_array, AbsorptionModel, Point, RoomSpec, SimConfig, SimError};

pub const ARRAY_POINTS: usize = 64;
pub const DEFAULT_FS: f64 = 8000.0;
/// Clearance kept between any scene point and the walls.
pub const WALL_MARGIN: f64 = 0.2;
/// Smallest allowed gap between neighbouring random-spacing array points.
pub const MIN_POINT_GAP: f64 = 0.002;
/// Smallest allowed distance between the source and any array point.
pub const MIN_SOURCE_DISTANCE: f64 = 0.1;

const MAGIC: &[u8; 4] = b"RIRD";
const FORMAT_VERSION: u32 = 1;
const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("mask: {0}")]
    Mask(String),
    #[error("scene {scene}: {source}")]
    Simulation { scene: usize, source: SimError },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset format: {0}")]
    Format(String),
    #[error("dataset checksum mismatch: header {expected:08x}, payload {found:08x}")]
    Checksum { expected: u32, found: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// Fixed source, uniform linear array centred at (−1.5, 0, 0).
    Exp1,
    /// Random source, random-spacing linear array anywhere in a 2×2 m ROI.
    Exp2,
}

impl Experiment {
    pub fn id(self) -> u8 {
        match self {
            Experiment::Exp1 => 1,
            Experiment::Exp2 => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Experiment::Exp1),
            2 => Some(Experiment::Exp2),
            _ => None,
        }
    }

    pub fn default_k(self) -> usize {
        match self {
            Experiment::Exp1 => 1024,
            Experiment::Exp2 => 2048,
        }
    }

    /// Normalisation frame of the experiment, centred on the room centre.
    ///
    /// Experiment 2 uses its 2×2 m ROI. The Experiment 1 array reaches
    /// x = −3 m, so its frame spans ±3 m in x and ±1.5 m in y.
    pub fn roi(self) -> RoiSpec {
        match self {
            Experiment::Exp1 => RoiSpec { center: [0.0; 3], half_extent: [3.0, 1.5, 1.0] },
            Experiment::Exp2 => RoiSpec { center: [0.0; 3], half_extent: [1.0, 1.0, 1.0] },
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exp{}", self.id())
    }
}

/// Axis-aligned region of interest. All scene points lie in its `z = center.z`
/// plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub center: Point,
    pub half_extent: Point,
}

impl RoiSpec {
    /// Closed-box membership, with a little slack for round-off.
    pub fn contains(&self, p: Point) -> bool {
        (0..3).all(|a| (p[a] - self.center[a]).abs() <= self.half_extent[a] + 1e-12)
    }
}

/// One room with its full `L × K` ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneInstance {
    pub room: RoomSpec,
    pub source: Point,
    pub points: Vec<Point>,
    /// Row `l` is the RIR at `points[l]`. Values are exactly representable
    /// in `f32`, so a file round trip is lossless.
    pub rirs: Matrix,
    pub fs: f64,
}

impl SceneInstance {
    pub fn k(&self) -> usize {
        self.rirs.cols()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Split of the array into measured and target points; both lists sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskAssignment {
    pub measured: Vec<usize>,
    pub target: Vec<usize>,
}

impl MaskAssignment {
    pub fn len(&self) -> usize {
        self.measured.len() + self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mr(&self) -> f64 {
        self.target.len() as f64 / self.len() as f64
    }

    /// Per-point flags, true for measured.
    pub fn measured_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.len()];
        for &i in &self.measured {
            flags[i] = true;
        }
        flags
    }

    /// Short fingerprint of the split, used to check that two reports
    /// evaluated the same masks.
    pub fn fingerprint(&self) -> String {
        let mut h = crc32fast::Hasher::new();
        h.update(&(self.len() as u32).to_le_bytes());
        for &i in &self.target {
            h.update(&(i as u32).to_le_bytes());
        }
        format!("{:08x}", h.finalize())
    }
}

/// `round(mr · L)` with halves rounded up.
pub fn target_count(l: usize, mr: f64) -> usize {
    (mr * l as f64 + 0.5).floor() as usize
}

pub fn assign_mask(rng: &mut Rng, l: usize, mr: f64) -> Result<MaskAssignment, ScenarioError> {
    if !(mr > 0.0 && mr < 1.0) {
        return Err(ScenarioError::Mask(format!("missing rate {mr} outside (0, 1)")));
    }
    let n = target_count(l, mr).min(l);
    if l - n < 2 {
        return Err(ScenarioError::Mask(format!("mr {mr} leaves {} measured points of {l}; need at least 2", l - n)));
    }
    if n == 0 {
        return Err(ScenarioError::Mask(format!("mr {mr} leaves no target among {l} points")));
    }
    let mut target = index::sample(rng, l, n).into_vec();
    target.sort_unstable();
    let mut is_target = vec![false; l];
    for &t in &target {
        is_target[t] = true;
    }
    let measured = (0..l).filter(|&i| !is_target[i]).collect();
    Ok(MaskAssignment { measured, target })
}

/// Room dimensions and reverberation time from the training distribution.
pub fn sample_room(rng: &mut Rng, absorption: AbsorptionModel) -> Result<RoomSpec, ScenarioError> {
    let dims = [rng.random_range(4.0..=8.0), rng.random_range(4.0..=8.0), rng.random_range(2.5..=4.0)];
    let rt60 = rng.random_range(0.2..=0.8);
    RoomSpec::new(dims, rt60, absorption).map_err(|e| ScenarioError::Geometry(e.to_string()))
}

pub const EXP1_ARRAY_CENTER: Point = [-1.5, 0.0, 0.0];
pub const EXP1_SOURCE: Point = [1.5, 0.0, 0.0];

/// Evenly spaced points on an x-aligned segment centred at `center`.
pub fn uniform_line(center: Point, length: f64, l: usize) -> Vec<Point> {
    let step = length / (l - 1) as f64;
    (0..l).map(|i| [center[0] - 0.5 * length + step * i as f64, center[1], center[2]]).collect()
}

/// Uniform linear array of random length in [1.28, 3] m.
pub fn build_array_exp1(rng: &mut Rng) -> Vec<Point> {
    let length = rng.random_range(1.28..=3.0);
    uniform_line(EXP1_ARRAY_CENTER, length, ARRAY_POINTS)
}

/// Random-spacing linear array along x or y, inside `roi`, sorted along its
/// axis.
///
/// Points are i.i.d. uniform on the segment conditioned on every gap being
/// at least [`MIN_POINT_GAP`]. That conditional law is sampled exactly by
/// drawing on a segment shortened by `(L−1)·gap` and pushing the `j`-th
/// sorted point forward by `j·gap`, so no rejection loop is needed.
pub fn build_array_exp2(rng: &mut Rng, roi: &RoiSpec) -> Vec<Point> {
    let axis = if rng.random_bool(0.5) { 0 } else { 1 };
    let other = 1 - axis;
    let length = rng.random_range(1.28..=2.0f64).min(2.0 * roi.half_extent[axis]);
    let lo = roi.center[axis] - roi.half_extent[axis];
    let start = lo + rng.random_range(0.0..=(2.0 * roi.half_extent[axis] - length));
    let across = roi.center[other] + rng.random_range(-roi.half_extent[other]..=roi.half_extent[other]);
    let slack = length - (ARRAY_POINTS - 1) as f64 * MIN_POINT_GAP;
    let mut u: Vec<f64> = (0..ARRAY_POINTS).map(|_| rng.random_range(0.0..slack)).collect();
    u.sort_by(f64::total_cmp);
    u.iter()
        .enumerate()
        .map(|(j, &v)| {
            let mut p = roi.center;
            p[axis] = start + v + j as f64 * MIN_POINT_GAP;
            p[other] = across;
            p
        })
        .collect()
}

fn distance(a: Point, b: Point) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// Source position. Experiment 1 always returns the fixed source; Experiment 2
/// draws uniformly over the ROI square, away from the array.
pub fn sample_source(
    rng: &mut Rng,
    experiment: Experiment,
    roi: &RoiSpec,
    array: &[Point],
) -> Result<Point, ScenarioError> {
    match experiment {
        Experiment::Exp1 => Ok(EXP1_SOURCE),
        Experiment::Exp2 => {
            for _ in 0..MAX_ATTEMPTS {
                let mut p = roi.center;
                for (c, &h) in p.iter_mut().zip(&roi.half_extent).take(2) {
                    *c += rng.random_range(-h..=h);
                }
                if array.iter().all(|&q| distance(p, q) >= MIN_SOURCE_DISTANCE) {
                    return Ok(p);
                }
            }
            Err(ScenarioError::Geometry(format!("no source position {MIN_SOURCE_DISTANCE} m from the array")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub experiment: Experiment,
    pub n_scenes: usize,
    pub seed: u64,
    pub fs: f64,
    pub k: usize,
    pub absorption: AbsorptionModel,
}

impl DatasetConfig {
    pub fn new(experiment: Experiment, n_scenes: usize, seed: u64) -> Self {
        DatasetConfig {
            experiment,
            n_scenes,
            seed,
            fs: DEFAULT_FS,
            k: experiment.default_k(),
            absorption: AbsorptionModel::default(),
        }
    }
}

/// Room, source and array of scene `index`, drawn from its own sub-stream.
///
/// Experiment 1 arrays up to 3 m long centred at x = −1.5 m do not fit the
/// smallest rooms, so room and array are redrawn together until every point
/// keeps [`WALL_MARGIN`] from the walls.
pub fn sample_geometry(cfg: &DatasetConfig, index: usize) -> Result<(RoomSpec, Point, Vec<Point>), ScenarioError> {
    let mut rng = stream(cfg.seed, "scene", &[index as u64]);
    let roi = cfg.experiment.roi();
    for _ in 0..MAX_ATTEMPTS {
        let room = sample_room(&mut rng, cfg.absorption)?;
        let points = match cfg.experiment {
            Experiment::Exp1 => build_array_exp1(&mut rng),
            Experiment::Exp2 => build_array_exp2(&mut rng, &roi),
        };
        let source = sample_source(&mut rng, cfg.experiment, &roi, &points)?;
        if points.iter().chain([&source]).all(|&p| room.contains(p, WALL_MARGIN)) {
            return Ok((room, source, points));
        }
    }
    Err(ScenarioError::Geometry(format!("scene {index}: geometry never fit the room")))
}

pub fn generate_scene(cfg: &DatasetConfig, index: usize) -> Result<SceneInstance, ScenarioError> {
    let (room, source, points) = sample_geometry(cfg, index)?;
    let sim = SimConfig::new(cfg.fs, cfg.k);
    let rirs = simulate_array(&room, source, &points, &sim)
        .map_err(|source| ScenarioError::Simulation { scene: index, source })?;
    let mut data = Vec::with_capacity(points.len() * cfg.k);
    for r in &rirs {
        data.extend(r.samples.iter().map(|&v| v as f32 as f64));
    }
    Ok(SceneInstance { room, source, rirs: Matrix::from_vec(points.len(), cfg.k, data), points, fs: cfg.fs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub experiment: Experiment,
    pub fs: f64,
    pub k: usize,
    pub scenes: Vec<SceneInstance>,
}

/// Simulates every scene of `cfg`, in parallel. Output does not depend on
/// the thread count.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset, ScenarioError> {
    let scenes = (0..cfg.n_scenes).into_par_iter().map(|i| generate_scene(cfg, i)).collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { experiment: cfg.experiment, fs: cfg.fs, k: cfg.k, scenes })
}

impl Dataset {
    pub fn l(&self) -> usize {
        self.scenes.first().map_or(ARRAY_POINTS, SceneInstance::len)
    }

    fn payload(&self) -> Result<Vec<u8>, ScenarioError> {
        let l = self.l();
        let mut buf = Vec::with_capacity(self.scenes.len() * (l * (24 + 4 * self.k) + 64));
        for (i, s) in self.scenes.iter().enumerate() {
            if s.len() != l || s.k() != self.k {
                return Err(ScenarioError::Format(format!(
                    "scene {i} is {}×{}, expected {l}×{}",
                    s.len(),
                    s.k(),
                    self.k
                )));
            }
            let mut put = |v: f64| buf.extend_from_slice(&v.to_le_bytes());
            s.room.dims.iter().for_each(|&v| put(v));
            put(s.room.rt60);
            put(s.room.absorption);
            s.source.iter().for_each(|&v| put(v));
            s.points.iter().flatten().for_each(|&v| put(v));
            for &v in s.rirs.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(buf)
    }

    /// CRC-32 of the serialized scene records.
    pub fn checksum(&self) -> Result<u32, ScenarioError> {
        Ok(crc32fast::hash(&self.payload()?))
    }

    pub fn write(&self, mut out: impl Write) -> Result<u32, ScenarioError> {
        let payload = self.payload()?;
        let crc = crc32fast::hash(&payload);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.fs as u32).to_le_bytes())?;
        out.write_all(&(self.k as u32).to_le_bytes())?;
        out.write_all(&(self.l() as u32).to_le_bytes())?;
        out.write_all(&(self.scenes.len() as u64).to_le_bytes())?;
        out.write_all(&[self.experiment.id()])?;
        out.write_all(&crc.to_le_bytes())?;
        out.write_all(&payload)?;
        out.flush()?;
        Ok(crc)
    }

    pub fn read(mut input: impl Read) -> Result<Self, ScenarioError> {
        let mut header = [0u8; 33];
        input.read_exact(&mut header).map_err(|e| ScenarioError::Format(format!("truncated header: {e}")))?;
        if &header[0..4] != MAGIC {
            return Err(ScenarioError::Format("bad magic, not a dataset file".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(ScenarioError::Format(format!("unsupported version {version}")));
        }
        let fs = f64::from(u32_at(8));
        let k = u32_at(12) as usize;
        let l = u32_at(16) as usize;
        let n = u64::from_le_bytes(header[20..28].try_into().unwrap()) as usize;
        let experiment = Experiment::from_id(header[28])
            .ok_or_else(|| ScenarioError::Format(format!("unknown experiment id {}", header[28])))?;
        let expected = u32_at(29);
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        let found = crc32fast::hash(&payload);
        if found != expected {
            return Err(ScenarioError::Checksum { expected, found });
        }
        let record = 8 * (3 + 2 + 3 + 3 * l) + 4 * l * k;
        if payload.len() != n * record {
            return Err(ScenarioError::Format(format!("payload is {} bytes, expected {}", payload.len(), n * record)));
        }
        let scenes = payload
            .chunks_exact(record.max(1))
            .take(n)
            .map(|rec| {
                let f64_at = |i: usize| f64::from_le_bytes(rec[8 * i..8 * i + 8].try_into().unwrap());
                let dims = [f64_at(0), f64_at(1), f64_at(2)];
                let room = RoomSpec { dims, rt60: f64_at(3), absorption: f64_at(4) };
                let source = [f64_at(5), f64_at(6), f64_at(7)];
                let points = (0..l).map(|j| [f64_at(8 + 3 * j), f64_at(9 + 3 * j), f64_at(10 + 3 * j)]).collect();
                let off = 8 * (8 + 3 * l);
                let data =
                    rec[off..].chunks_exact(4).map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap()))).collect();
                SceneInstance { room, source, points, rirs: Matrix::from_vec(l, k, data), fs }
            })
            .collect();
        Ok(Dataset { experiment, fs, k, scenes })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<u32, ScenarioError> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn target_counts() {
        assert_eq!(target_count(64, 0.5), 32);
        assert_eq!(target_count(64, 0.7), 45);
        assert_eq!(target_count(64, 0.1), 6);
        assert_eq!(target_count(64, 0.9), 58);
    }

    #[test]
    fn mask_needs_two_measured_points() {
        let mut rng = Rng::seed_from_u64(0);
        assert!(matches!(assign_mask(&mut rng, 64, 0.99), Err(ScenarioError::Mask(_))));
        assert!(matches!(assign_mask(&mut rng, 64, 0.0), Err(ScenarioError::Mask(_))));
        let m = assign_mask(&mut rng, 64, 0.7).unwrap();
        assert_eq!((m.measured.len(), m.target.len()), (19, 45));
    }

    #[test]
    fn shortest_ula_endpoints() {
        let pts = uniform_line(EXP1_ARRAY_CENTER, 1.28, 64);
        assert!((pts[1][0] - pts[0][0] - 1.28 / 63.0).abs() < 1e-15);
        assert!((pts[0][0] + 2.14).abs() < 1e-15);
        assert!((pts[63][0] + 0.86).abs() < 1e-12);
    }

    #[test]
    fn fingerprint_depends_on_targets() {
        let a = MaskAssignment { measured: vec![0, 2], target: vec![1] };
        let b = MaskAssignment { measured: vec![0, 1], target: vec![2] };
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
    }
}
