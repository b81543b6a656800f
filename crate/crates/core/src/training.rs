//! Masked-reconstruction training, per-segment finetuning and evaluation.
//!
//! Each step hides a random subset of a scene's array points, feeds the rest
//! to the model and penalises the squared error on the hidden rows only:
//! `loss = ‖Ĥ − H̄‖²_F / N`. Scenes are scaled by the largest absolute
//! sample of their measured rows before they reach the model.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamW, AdamWConfig, DiffError, Float, Tape};
use crate::matrix::Matrix;
use crate::metrics::{self, AggregateMetrics, MetricError, MetricsReport, SceneMetrics, SegmentMetrics};
use crate::model::{normalize_position, ModelError, RirFormer, SceneInput};
use crate::rng::{stream, Rng};
use crate::roomsim::Point;
use crate::scenario::{assign_mask, Dataset, MaskAssignment, ScenarioError, SceneInstance};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Baseline(#[from] crate::baselines::BaselineError),
    #[error("training configuration: {0}")]
    Config(String),
    #[error("cannot normalise scene: measured rows are all zero")]
    ZeroScene,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize, what: &'static str },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<DiffError> for TrainError {
    fn from(e: DiffError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub ramp_epochs: usize,
    pub mr_start: f64,
    pub mr_end: f64,
    /// Band the per-batch ratio is drawn from once the ramp is over.
    pub post_ramp_mr_range: (f64, f64),
    pub finetune_epochs_per_segment: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Replaces the whole curriculum with one ratio.
    pub fixed_mr: Option<f64>,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            batch_size: 8,
            epochs: 200,
            ramp_epochs: 10,
            mr_start: 0.30,
            mr_end: 0.70,
            post_ramp_mr_range: (0.6, 0.8),
            finetune_epochs_per_segment: 20,
            seed: 0,
            precision: Precision::F32,
            fixed_mr: None,
            clip_norm: Some(1.0),
            weight_decay: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0 < self.mr_start && self.mr_start <= self.mr_end && self.mr_end < 1.0) {
            return bad(format!("need 0 < mr_start <= mr_end < 1, got {} and {}", self.mr_start, self.mr_end));
        }
        if self.fixed_mr.is_none() && self.ramp_epochs > self.epochs {
            return bad(format!("ramp of {} epochs exceeds {} epochs", self.ramp_epochs, self.epochs));
        }
        let (lo, hi) = self.post_ramp_mr_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return bad(format!("post-ramp band ({lo}, {hi})"));
        }
        if let Some(mr) = self.fixed_mr {
            if !(0.0 < mr && mr < 1.0) {
                return bad(format!("fixed mr {mr}"));
            }
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return bad("clip_norm must be positive".into());
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..Default::default() }
    }
}

/// Curriculum ratio for `epoch` (0-based) when it does not depend on a
/// draw: the linear ramp up to and including `ramp_epochs`, or the fixed
/// override. `None` means the ratio is drawn per batch.
pub fn scheduled_ratio(epoch: usize, cfg: &TrainConfig) -> Option<f64> {
    if let Some(mr) = cfg.fixed_mr {
        return Some(mr);
    }
    if epoch >= cfg.ramp_epochs {
        return (epoch == cfg.ramp_epochs).then_some(cfg.mr_end);
    }
    let f = epoch as f64 / cfg.ramp_epochs as f64;
    Some(cfg.mr_start + (cfg.mr_end - cfg.mr_start) * f)
}

/// Masking ratio for one batch of `epoch`. After the ramp the value is
/// drawn from `post_ramp_mr_range` with `rng`; before it `rng` is untouched.
pub fn masking_ratio(epoch: usize, cfg: &TrainConfig, rng: &mut Rng) -> f64 {
    scheduled_ratio(epoch, cfg).unwrap_or_else(|| {
        let (lo, hi) = cfg.post_ramp_mr_range;
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationRecord {
    pub scale: f64,
}

/// Divides every RIR of the scene by the largest absolute sample among the
/// measured rows.
pub fn normalize_scene(rirs: &Matrix, measured: &[usize]) -> Result<(Matrix, NormalizationRecord), TrainError> {
    let scale = measured.iter().flat_map(|&i| rirs.row(i).iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Err(TrainError::ZeroScene);
    }
    Ok((rirs.scaled(1.0 / scale), NormalizationRecord { scale }))
}

pub fn denormalize(m: &Matrix, rec: NormalizationRecord) -> Matrix {
    m.scaled(rec.scale)
}

/// `‖pred − truth‖²_F / rows`.
pub fn compute_loss(pred: &Matrix, truth: &Matrix) -> Result<f64, TrainError> {
    if pred.shape() != truth.shape() {
        return Err(TrainError::Shape(format!("{:?} vs {:?}", pred.shape(), truth.shape())));
    }
    let sq: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sq / pred.rows() as f64)
}

/// Array positions mapped into the model's normalised frame.
pub fn model_positions(dataset: &Dataset, scene: &SceneInstance) -> Result<Vec<Point>, TrainError> {
    let roi = dataset.experiment.roi();
    Ok(scene.points.iter().map(|&p| normalize_position(p, &roi)).collect::<Result<_, _>>()?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean masking ratio over the epoch's batches.
    pub mr: f64,
}

pub fn write_loss_csv(history: &[EpochStats], out: impl Write) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for h in history {
        w.serialize(h).map_err(MetricError::from)?;
    }
    w.flush()?;
    Ok(())
}

struct Prepared {
    positions: Vec<Point>,
}

fn prepare(dataset: &Dataset, k: usize) -> Result<Vec<Prepared>, TrainError> {
    if dataset.scenes.is_empty() {
        return Err(TrainError::Config("dataset has no scenes".into()));
    }
    if dataset.k != k {
        return Err(TrainError::Config(format!("dataset K = {}, model K = {k}", dataset.k)));
    }
    dataset.scenes.iter().map(|s| Ok(Prepared { positions: model_positions(dataset, s)? })).collect()
}

/// Which columns of the target rows enter the loss.
#[derive(Clone, Copy)]
enum Window {
    Full,
    Segment(usize),
}

/// Loss and dense gradients of one scene under one mask.
fn scene_step<F: Float>(
    model: &RirFormer<F>,
    scene: &SceneInstance,
    positions: &[Point],
    mask: &MaskAssignment,
    window: Window,
    trainable: &(dyn Fn(usize) -> bool + Sync),
) -> Result<(f64, Vec<Vec<F>>), TrainError> {
    let (signals, _) = normalize_scene(&scene.rirs, &mask.measured)?;
    let mut tape = Tape::new();
    let b = model.params().bind(&mut tape, trainable);
    let out = model.forward(&mut tape, &b, &SceneInput { positions, signals: &signals, mask })?;
    let n = mask.target.len();
    let (pred, start, len) = match window {
        Window::Full => (out.output, 0, model.config().k),
        Window::Segment(t) => {
            let len = model.config().segment_len();
            (tape.slice_cols(out.output, t * len, len)?, t * len, len)
        }
    };
    let truth: Vec<F> =
        mask.target.iter().flat_map(|&i| signals.row(i)[start..start + len].iter().map(|&v| F::of(v))).collect();
    let truth = tape.input(&[n, len], truth, false)?;
    let diff = tape.sub(pred, truth)?;
    let sq = tape.sum_squares(diff)?;
    let loss = tape.scale(sq, F::of(1.0 / n as f64))?;
    let value = tape.value(loss)[0].as_f64();
    let mut grads = tape.backward(loss)?;
    Ok((value, model.params().collect_grads(&b, &mut grads)))
}

/// Runs one optimiser step over `batch` (scene indices) and returns the
/// per-scene losses. Gradients are averaged over the batch and reduced in
/// batch order, so the result does not depend on thread scheduling.
#[allow(clippy::too_many_arguments)]
fn batch_step<F: Float>(
    model: &mut RirFormer<F>,
    opt: &mut AdamW<F>,
    dataset: &Dataset,
    prepared: &[Prepared],
    jobs: &[(usize, MaskAssignment)],
    window: Window,
    trainable: &(dyn Fn(usize) -> bool + Sync),
    cfg: &TrainConfig,
    (epoch, batch): (usize, usize),
) -> Result<Vec<f64>, TrainError> {
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(s, mask)| scene_step(model, &dataset.scenes[*s], &prepared[*s].positions, mask, window, trainable))
        .collect();
    let inv = F::of(1.0 / jobs.len() as f64);
    let params = model.params_mut();
    params.zero_grad();
    let mut losses = Vec::with_capacity(jobs.len());
    for r in results {
        let (loss, mut grads) = r?;
        if !loss.is_finite() {
            return Err(TrainError::Divergence { epoch, batch, what: "loss" });
        }
        losses.push(loss);
        grads.iter_mut().flatten().for_each(|g| *g *= inv);
        params.accumulate_dense(&grads)?;
    }
    let norm = params.grad_norm();
    if !norm.is_finite() {
        return Err(TrainError::Divergence { epoch, batch, what: "gradient" });
    }
    if let Some(c) = cfg.clip_norm {
        params.clip_grad_norm(c);
    }
    opt.step_where(params, trainable)?;
    if !params.all_finite() {
        return Err(TrainError::Divergence { epoch, batch, what: "parameter" });
    }
    Ok(losses)
}

fn shuffled(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Trains `model` in place for `cfg.epochs` epochs. `on_epoch` sees the
/// model after every epoch (used for checkpointing and progress output).
///
/// On divergence the error is returned before the offending update is
/// applied, so `model` still holds the last finite parameters.
pub fn train<F: Float>(
    model: &mut RirFormer<F>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &RirFormer<F>),
) -> Result<Vec<EpochStats>, TrainError> {
    cfg.validate()?;
    let prepared = prepare(dataset, model.config().k)?;
    let l = dataset.l();
    let mut opt = AdamW::new(cfg.adamw(), model.params());
    let all = |_: usize| true;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = shuffled(dataset.scenes.len(), &mut stream(cfg.seed, "train-order", &[epoch as u64]));
        let (mut losses, mut mr_sum, mut batches) = (Vec::new(), 0.0, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut rng = stream(cfg.seed, "train-batch", &[epoch as u64, bi as u64]);
            let mr = masking_ratio(epoch, cfg, &mut rng);
            let jobs = chunk
                .iter()
                .map(|&s| Ok((s, assign_mask(&mut rng, l, mr)?)))
                .collect::<Result<Vec<_>, TrainError>>()?;
            losses.extend(batch_step(
                model,
                &mut opt,
                dataset,
                &prepared,
                &jobs,
                Window::Full,
                &all,
                cfg,
                (epoch, bi),
            )?);
            mr_sum += mr;
            batches += 1;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            mr: mr_sum / batches as f64,
        };
        log::info!("epoch {epoch}: loss {:.6e}, mr {:.3}", stats.mean_loss, stats.mr);
        on_epoch(&stats, model);
        history.push(stats);
    }
    Ok(history)
}

/// One finetuning phase: segment `t` trained with everything else frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetunePhase {
    pub segment: usize,
    pub history: Vec<EpochStats>,
}

/// Trains each segment head in turn on the loss restricted to its sample
/// range. Every phase starts a fresh optimiser and touches only the
/// parameters of its own head. Masks use the post-ramp ratio band (or the
/// fixed ratio).
pub fn finetune_segments<F: Float>(
    model: &mut RirFormer<F>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_phase: impl FnMut(&FinetunePhase, &RirFormer<F>),
) -> Result<Vec<FinetunePhase>, TrainError> {
    cfg.validate()?;
    if !model.config().use_segments {
        return Err(TrainError::Config("finetuning needs the segmented decoder (use_segments = true)".into()));
    }
    let prepared = prepare(dataset, model.config().k)?;
    let l = dataset.l();
    let mut phases = Vec::new();
    for t in 0..model.config().segments {
        let ids = model.head_param_ids(t);
        let active = move |id: usize| ids.contains(&id);
        let mut opt = AdamW::new(cfg.adamw(), model.params());
        let mut history = Vec::new();
        for epoch in 0..cfg.finetune_epochs_per_segment {
            let e = epoch as u64;
            let order = shuffled(dataset.scenes.len(), &mut stream(cfg.seed, "finetune-order", &[t as u64, e]));
            let (mut losses, mut mr_sum, mut batches) = (Vec::new(), 0.0, 0usize);
            for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let mut rng = stream(cfg.seed, "finetune-batch", &[t as u64, e, bi as u64]);
                // past the ramp, so this is the post-ramp draw
                let mr = masking_ratio(cfg.ramp_epochs + 1, cfg, &mut rng);
                let jobs = chunk
                    .iter()
                    .map(|&s| Ok((s, assign_mask(&mut rng, l, mr)?)))
                    .collect::<Result<Vec<_>, TrainError>>()?;
                let w = Window::Segment(t);
                losses.extend(batch_step(model, &mut opt, dataset, &prepared, &jobs, w, &active, cfg, (epoch, bi))?);
                mr_sum += mr;
                batches += 1;
            }
            history.push(EpochStats {
                epoch,
                mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
                mr: mr_sum / batches as f64,
            });
        }
        log::info!("segment {t} finetuned, last loss {:.6e}", history.last().map_or(f64::NAN, |h| h.mean_loss));
        let phase = FinetunePhase { segment: t, history };
        on_phase(&phase, model);
        phases.push(phase);
    }
    Ok(phases)
}

/// Mean loss over the dataset with one fixed mask per scene (drawn from
/// `seed` at ratio `mr`), optionally restricted to segment `t`. No update.
pub fn dataset_loss<F: Float>(
    model: &RirFormer<F>,
    dataset: &Dataset,
    mr: f64,
    seed: u64,
    segment: Option<usize>,
) -> Result<f64, TrainError> {
    let prepared = prepare(dataset, model.config().k)?;
    let window = segment.map_or(Window::Full, Window::Segment);
    let none = |_: usize| false;
    let losses = (0..dataset.scenes.len())
        .into_par_iter()
        .map(|s| {
            let mask = assign_mask(&mut stream(seed, "probe-mask", &[s as u64]), dataset.l(), mr)?;
            Ok(scene_step(model, &dataset.scenes[s], &prepared[s].positions, &mask, window, &none)?.0)
        })
        .collect::<Result<Vec<f64>, TrainError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Anything that can fill in the target rows of a scene.
pub trait Reconstructor: Sync {
    /// Estimated target rows (`mask.target.len() × K`), in the same units as
    /// `scene.rirs`.
    fn reconstruct(
        &self,
        dataset: &Dataset,
        scene: &SceneInstance,
        mask: &MaskAssignment,
    ) -> Result<Matrix, TrainError>;

    /// Short identifier written into reports.
    fn label(&self) -> String;
}

impl<F: Float> Reconstructor for RirFormer<F> {
    fn reconstruct(
        &self,
        dataset: &Dataset,
        scene: &SceneInstance,
        mask: &MaskAssignment,
    ) -> Result<Matrix, TrainError> {
        let positions = model_positions(dataset, scene)?;
        let (signals, rec) = normalize_scene(&scene.rirs, &mask.measured)?;
        let out = self.predict(&SceneInput { positions: &positions, signals: &signals, mask })?;
        Ok(denormalize(&out, rec))
    }

    fn label(&self) -> String {
        "rirformer".into()
    }
}

/// Returns the ground truth. Pins the metric identities end to end.
pub struct Oracle;

impl Reconstructor for Oracle {
    fn reconstruct(&self, _: &Dataset, scene: &SceneInstance, mask: &MaskAssignment) -> Result<Matrix, TrainError> {
        Ok(scene.rirs.select_rows(&mask.target))
    }

    fn label(&self) -> String {
        "oracle".into()
    }
}

/// Default seed of the evaluation mask stream.
pub const EVAL_SEED: u64 = 0x5eed_e7a1;

/// Evaluation mask of scene `scene` at ratio `mr`. The ratio enters the
/// stream index in per-mille, so any two reconstructors evaluated with the
/// same seed see the same masks regardless of the rest of the list.
pub fn eval_mask(seed: u64, scene: usize, mr: f64, l: usize) -> Result<MaskAssignment, ScenarioError> {
    let permille = (mr * 1000.0).round() as u64;
    assign_mask(&mut stream(seed, "eval-mask", &[scene as u64, permille]), l, mr)
}

/// NMSE and CD of `recon` on every scene at every ratio in `mr_list`.
/// `segments` > 1 adds a per-segment NMSE breakdown.
pub fn evaluate(
    recon: &dyn Reconstructor,
    dataset: &Dataset,
    mr_list: &[f64],
    seed: u64,
    segments: usize,
) -> Result<MetricsReport, TrainError> {
    if let Some(bad) = mr_list.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
        return Err(TrainError::Config(format!("missing rate {bad} outside (0, 1)")));
    }
    if segments == 0 || !dataset.k.is_multiple_of(segments) {
        return Err(TrainError::Config(format!("{segments} segments do not divide K = {}", dataset.k)));
    }
    let label = recon.label();
    let seg_len = dataset.k / segments;
    let mut report = MetricsReport { seed, source_id: label.clone(), ..Default::default() };
    for &mr in mr_list {
        let rows = dataset
            .scenes
            .par_iter()
            .enumerate()
            .map(|(i, scene)| {
                let mask = eval_mask(seed, i, mr, scene.len())?;
                let est = recon.reconstruct(dataset, scene, &mask)?;
                let truth = scene.rirs.select_rows(&mask.target);
                let per_seg: Vec<Option<f64>> = if segments > 1 {
                    (0..segments)
                        .map(|t| {
                            metrics::nmse(
                                &truth.select_cols(t * seg_len, seg_len),
                                &est.select_cols(t * seg_len, seg_len),
                            )
                            .ok()
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                let row = SceneMetrics {
                    scene_id: i,
                    mr,
                    nmse_db: metrics::nmse(&truth, &est)?,
                    cd: metrics::cosine_distance(&truth, &est)?,
                    seed,
                    mask_hash: mask.fingerprint(),
                    label: label.clone(),
                };
                Ok((row, per_seg))
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        let n = rows.len();
        report.aggregates.push(AggregateMetrics {
            mr,
            mean_nmse_db: rows.iter().map(|r| r.0.nmse_db).sum::<f64>() / n as f64,
            mean_cd: rows.iter().map(|r| r.0.cd).sum::<f64>() / n as f64,
            n_scenes: n,
        });
        if segments > 1 {
            for t in 0..segments {
                let vals: Vec<f64> = rows.iter().filter_map(|r| r.1[t]).collect();
                if !vals.is_empty() {
                    report.segments.push(SegmentMetrics {
                        mr,
                        segment: t,
                        mean_nmse_db: vals.iter().sum::<f64>() / vals.len() as f64,
                        n_scenes: vals.len(),
                    });
                }
            }
        }
        report.scenes.extend(rows.into_iter().map(|r| r.0));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn curriculum_endpoints() {
        let cfg = TrainConfig::default();
        let mut rng = Rng::seed_from_u64(0);
        assert_eq!(masking_ratio(0, &cfg, &mut rng), 0.30);
        assert_eq!(masking_ratio(5, &cfg, &mut rng), 0.50);
        assert_eq!(masking_ratio(10, &cfg, &mut rng), 0.70);
        for e in 11..200 {
            let mr = masking_ratio(e, &cfg, &mut rng);
            assert!((0.6..0.8).contains(&mr));
        }
        let fixed = TrainConfig { fixed_mr: Some(0.7), ..cfg };
        assert_eq!(masking_ratio(0, &fixed, &mut rng), 0.7);
        assert_eq!(masking_ratio(100, &fixed, &mut rng), 0.7);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig::default();
        assert!(TrainConfig { mr_start: 0.8, ..c }.validate().is_err());
        assert!(TrainConfig { ramp_epochs: 300, ..c }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
        assert!(TrainConfig { mr_end: 1.0, ..c }.validate().is_err());
    }

    #[test]
    fn loss_examples() {
        let truth = Matrix::from_rows(&[[0.5, -1.0, 2.0, 0.0], [1.0, 1.0, 1.0, 1.0]]);
        assert_eq!(compute_loss(&truth, &truth).unwrap(), 0.0);
        let pred = Matrix::from_vec(2, 4, truth.data().iter().map(|v| v + 1.0).collect());
        assert_eq!(compute_loss(&pred, &truth).unwrap(), 4.0);
        let dup = |m: &Matrix| Matrix::from_rows(&[m.row(0), m.row(1), m.row(0), m.row(1)]);
        assert_eq!(compute_loss(&dup(&pred), &dup(&truth)).unwrap(), 4.0);
        assert!(compute_loss(&pred, &Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn normalisation_examples() {
        let m = Matrix::from_rows(&[[0.5, -0.25], [0.1, 0.0], [2.0, 9.0]]);
        let (n, rec) = normalize_scene(&m, &[0, 1]).unwrap();
        assert_eq!(rec.scale, 0.5);
        assert_eq!(n.row(0), &[1.0, -0.5]);
        assert_eq!(n.row(2), &[4.0, 18.0]);
        let back = denormalize(&n, rec);
        for (a, b) in back.data().iter().zip(m.data()) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
        let z = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(normalize_scene(&z, &[0]), Err(TrainError::ZeroScene)));
    }
}
