//! The reconstruction network.
//!
//! Every array point becomes one token `[γ(x); e]`: a sinusoidal encoding
//! of its normalised position and a latent projection of its measured RIR
//! (zero for targets). A pre-norm transformer encoder mixes the tokens, and
//! each target's contextual vector is decoded by `T` parallel MLP heads,
//! one per temporal segment, followed by an additive MLP refiner.
//!
//! # Checkpoint file layout
//!
//! Little-endian throughout.
//!
//! ```text
//! magic        4   b"RIRF"
//! version      u32 (currently 1)
//! config       13 × u32 fields then 3 × u8 flags, in ModelConfig field order
//! n_tensors    u32
//!   name_len   u16, name bytes (UTF-8)
//!   ndim       u8, dims ndim × u32
//!   dtype      u8 (0 = f32, 1 = f64)
//!   payload    product(dims) values of dtype
//! epoch        u32
//! seed         u64
//! n_history    u32, then n_history × f64 loss values
//! crc32        u32 over all preceding bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffcore::{BoundParams, DType, DiffError, Float, ParamSet, Tape, Tensor, Var};
use crate::matrix::Matrix;
use crate::rng::stream;
use crate::roomsim::Point;
use crate::scenario::{MaskAssignment, RoiSpec};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("model configuration: {0}")]
    Config(String),
    #[error("position {0:?} outside the normalisation frame")]
    Range(Point),
    #[error("contract: {0}")]
    Contract(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Latent width `D`.
    pub d_model: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Number of decoder segments `T`.
    pub segments: usize,
    /// Encoding order `i`: frequencies `2⁰π … 2^{i−1}π`.
    pub encoding_order: usize,
    /// RIR length `K`.
    pub k: usize,
    pub signal_hidden: usize,
    pub head_hidden: usize,
    pub refiner_hidden: usize,
    pub use_sinusoidal: bool,
    pub use_segments: bool,
    pub use_refiner: bool,
    pub activation: Activation,
    /// Seed of the parameter initialisation stream.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 256,
            encoder_layers: 4,
            heads: 8,
            ff_dim: 512,
            segments: 8,
            encoding_order: 6,
            k: 1024,
            signal_hidden: 512,
            head_hidden: 512,
            refiner_hidden: 256,
            use_sinusoidal: true,
            use_segments: true,
            use_refiner: true,
            activation: Activation::Gelu,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("D={} must be a positive multiple of heads={}", self.d_model, self.heads));
        }
        if self.segments == 0 || self.k == 0 || !self.k.is_multiple_of(self.segments) {
            return bad(format!("K={} is not divisible into T={} segments", self.k, self.segments));
        }
        if self.encoding_order == 0 {
            return bad("encoding order must be at least 1".into());
        }
        if self.ff_dim == 0 || self.signal_hidden == 0 || self.head_hidden == 0 || self.refiner_hidden == 0 {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }

    /// Width of the position part of a token.
    pub fn position_width(&self) -> usize {
        if self.use_sinusoidal {
            6 * self.encoding_order
        } else {
            3
        }
    }

    pub fn token_width(&self) -> usize {
        self.position_width() + self.d_model
    }

    /// Number of decoder heads actually built.
    pub fn head_count(&self) -> usize {
        if self.use_segments {
            self.segments
        } else {
            1
        }
    }

    pub fn segment_len(&self) -> usize {
        self.k / self.segments
    }

    fn head_width(&self) -> usize {
        self.k / self.head_count()
    }
}

/// Affine map of `p` from `roi` onto `[−1, 1]³`.
pub fn normalize_position(p: Point, roi: &RoiSpec) -> Result<Point, ModelError> {
    if !roi.contains(p) {
        return Err(ModelError::Range(p));
    }
    Ok([0, 1, 2].map(|a| ((p[a] - roi.center[a]) / roi.half_extent[a]).clamp(-1.0, 1.0)))
}

pub fn denormalize_position(q: Point, roi: &RoiSpec) -> Point {
    [0, 1, 2].map(|a| roi.center[a] + q[a] * roi.half_extent[a])
}

/// `γ(p)`: for each coordinate, `sin(2ʲπx), cos(2ʲπx)` for `j = 0..order`.
///
/// Phases are reduced modulo 2 before multiplying by π, so shifting any
/// coordinate by 2 gives a bit-identical encoding whenever the shift itself
/// is exact.
pub fn positional_encode(p: Point, order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(6 * order);
    for x in p {
        let mut f = 1.0;
        for _ in 0..order {
            let phase = (f * x).rem_euclid(2.0) * std::f64::consts::PI;
            out.push(phase.sin());
            out.push(phase.cos());
            f *= 2.0;
        }
    }
    out
}

/// Inputs of one forward pass, all already normalised.
pub struct SceneInput<'s> {
    /// One position per array point, in `[−1, 1]³`.
    pub positions: &'s [Point],
    /// `L × K`; only the measured rows are read.
    pub signals: &'s Matrix,
    pub mask: &'s MaskAssignment,
}

/// Tape handles produced by [`RirFormer::decode`].
#[derive(Clone, Copy, Debug)]
pub struct Decoded {
    /// Heads concatenated in temporal order, before refinement.
    pub concat: Var,
    pub residual: Option<Var>,
    /// `concat + residual`, or `concat` without a refiner.
    pub output: Var,
}

struct Block {
    ln1: (usize, usize),
    q: (usize, usize),
    k: (usize, usize),
    v: (usize, usize),
    o: (usize, usize),
    ln2: (usize, usize),
    ff1: (usize, usize),
    ff2: (usize, usize),
}

struct Layout {
    sig1: (usize, usize),
    sig2: (usize, usize),
    input: (usize, usize),
    blocks: Vec<Block>,
    final_ln: (usize, usize),
    heads: Vec<[(usize, usize); 2]>,
    refiner: Option<[(usize, usize); 3]>,
}

pub struct RirFormer<F: Float> {
    config: ModelConfig,
    params: ParamSet<F>,
    layout: Layout,
    calls: AtomicU64,
}

impl<F: Float> Clone for RirFormer<F> {
    fn clone(&self) -> Self {
        RirFormer::from_params(self.config, self.params.clone()).expect("parameters of a built model")
    }
}

impl<F: Float> std::fmt::Debug for RirFormer<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RirFormer").field("config", &self.config).field("parameters", &self.params.numel()).finish()
    }
}

fn names_linear(prefix: &str) -> (String, String) {
    (format!("{prefix}.w"), format!("{prefix}.b"))
}

/// Parameter names and shapes, in storage order.
fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = Vec::new();
    let linear = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str, i: usize, o: usize| {
        let (w, b) = names_linear(prefix);
        out.push((w, vec![i, o]));
        out.push((b, vec![o]));
    };
    linear(&mut out, "signal.0", cfg.k, cfg.signal_hidden);
    linear(&mut out, "signal.1", cfg.signal_hidden, d);
    linear(&mut out, "input", cfg.token_width(), d);
    for l in 0..cfg.encoder_layers {
        let p = format!("encoder.{l}");
        out.push((format!("{p}.ln1.gain"), vec![d]));
        out.push((format!("{p}.ln1.bias"), vec![d]));
        for n in ["q", "k", "v", "o"] {
            linear(&mut out, &format!("{p}.attn.{n}"), d, d);
        }
        out.push((format!("{p}.ln2.gain"), vec![d]));
        out.push((format!("{p}.ln2.bias"), vec![d]));
        linear(&mut out, &format!("{p}.ff.0"), d, cfg.ff_dim);
        linear(&mut out, &format!("{p}.ff.1"), cfg.ff_dim, d);
    }
    out.push(("encoder.ln.gain".into(), vec![d]));
    out.push(("encoder.ln.bias".into(), vec![d]));
    for t in 0..cfg.head_count() {
        linear(&mut out, &format!("head.{t}.0"), d, cfg.head_hidden);
        linear(&mut out, &format!("head.{t}.1"), cfg.head_hidden, cfg.head_width());
    }
    if cfg.use_refiner {
        linear(&mut out, "refiner.0", cfg.k, cfg.refiner_hidden);
        linear(&mut out, "refiner.1", cfg.refiner_hidden, cfg.refiner_hidden);
        linear(&mut out, "refiner.2", cfg.refiner_hidden, cfg.k);
    }
    out
}

impl<F: Float> RirFormer<F> {
    /// Fresh model. Weights are `U(±1/√fan_in)`, biases zero, layer-norm
    /// gains one; the refiner's last layer starts at zero so the initial
    /// residual vanishes.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = stream(config.init_seed, "init", &[]);
        let mut params = ParamSet::new();
        for (name, shape) in parameter_shapes(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<F> = if name.ends_with(".gain") {
                vec![F::one(); n]
            } else if name.ends_with(".b") || name.ends_with(".bias") || name.starts_with("refiner.2") {
                vec![F::zero(); n]
            } else {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                (0..n).map(|_| F::of(rng.random_range(-bound..bound))).collect()
            };
            params.insert(name, Tensor::new(&shape, data)?)?;
        }
        Self::from_params(config, params)
    }

    /// Wraps existing parameters, checking names and shapes against the
    /// configuration.
    pub fn from_params(config: ModelConfig, params: ParamSet<F>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = parameter_shapes(&config);
        if expected.len() != params.len() {
            return Err(ModelError::Format(format!(
                "{} tensors, configuration needs {}",
                params.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            match params.by_name(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(ModelError::Format(format!("{name}: shape {:?}, expected {shape:?}", t.shape())))
                }
                None => return Err(ModelError::Format(format!("missing tensor {name}"))),
            }
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let lin = |p: &str| (id(&format!("{p}.w")), id(&format!("{p}.b")));
        let ln = |p: &str| (id(&format!("{p}.gain")), id(&format!("{p}.bias")));
        let blocks = (0..config.encoder_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                Block {
                    ln1: ln(&format!("{p}.ln1")),
                    q: lin(&format!("{p}.attn.q")),
                    k: lin(&format!("{p}.attn.k")),
                    v: lin(&format!("{p}.attn.v")),
                    o: lin(&format!("{p}.attn.o")),
                    ln2: ln(&format!("{p}.ln2")),
                    ff1: lin(&format!("{p}.ff.0")),
                    ff2: lin(&format!("{p}.ff.1")),
                }
            })
            .collect();
        let layout = Layout {
            sig1: lin("signal.0"),
            sig2: lin("signal.1"),
            input: lin("input"),
            blocks,
            final_ln: ln("encoder.ln"),
            heads: (0..config.head_count())
                .map(|t| [lin(&format!("head.{t}.0")), lin(&format!("head.{t}.1"))])
                .collect(),
            refiner: config.use_refiner.then(|| [lin("refiner.0"), lin("refiner.1"), lin("refiner.2")]),
        };
        Ok(RirFormer { config, params, layout, calls: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }

    /// Parameter ids belonging to decoder head `t`.
    pub fn head_param_ids(&self, t: usize) -> Vec<usize> {
        self.layout.heads[t].iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// How many times [`predict`](Self::predict) has run.
    pub fn forward_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn act(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var, DiffError> {
        match self.config.activation {
            Activation::Gelu => tape.gelu(x),
            Activation::Relu => tape.relu(x),
        }
    }

    fn linear(
        &self,
        tape: &mut Tape<'_, F>,
        b: &BoundParams,
        x: Var,
        (w, bias): (usize, usize),
    ) -> Result<Var, DiffError> {
        tape.linear(x, b.var(w), b.var(bias))
    }

    fn mlp2(
        &self,
        tape: &mut Tape<'_, F>,
        b: &BoundParams,
        x: Var,
        l0: (usize, usize),
        l1: (usize, usize),
    ) -> Result<Var, DiffError> {
        let h = self.linear(tape, b, x, l0)?;
        let h = self.act(tape, h)?;
        self.linear(tape, b, h, l1)
    }

    /// Position part of every token, `L × position_width`.
    pub fn position_features(&self, positions: &[Point]) -> Vec<F> {
        let mut out = Vec::with_capacity(positions.len() * self.config.position_width());
        for &p in positions {
            if self.config.use_sinusoidal {
                out.extend(positional_encode(p, self.config.encoding_order).into_iter().map(F::of));
            } else {
                out.extend(p.iter().map(|&v| F::of(v)));
            }
        }
        out
    }

    /// Signal embeddings `e`, `L × D`: the MLP runs on measured rows only
    /// and targets receive exact zeros with no path back to the encoder.
    pub fn encode_signals(
        &self,
        tape: &mut Tape<'_, F>,
        b: &BoundParams,
        signals: &Matrix,
        measured: &[usize],
    ) -> Result<Var, ModelError> {
        let k = self.config.k;
        if signals.cols() != k {
            return Err(DiffError::Shape(format!("signals have {} samples, model expects {k}", signals.cols())).into());
        }
        let rows: Vec<F> = measured.iter().flat_map(|&i| signals.row(i).iter().map(|&v| F::of(v))).collect();
        let x = tape.input(&[measured.len(), k], rows, false)?;
        let e = self.mlp2(tape, b, x, self.layout.sig1, self.layout.sig2)?;
        Ok(tape.scatter_rows(e, measured, signals.rows())?)
    }

    /// Transformer encoder over a `L × token_width` token matrix.
    pub fn encoder_forward(&self, tape: &mut Tape<'_, F>, b: &BoundParams, tokens: Var) -> Result<Var, ModelError> {
        let width = tape.dims(tokens).1;
        if width != self.config.token_width() {
            return Err(DiffError::Shape(format!("token width {width}, expected {}", self.config.token_width())).into());
        }
        let mut x = self.linear(tape, b, tokens, self.layout.input)?;
        for blk in &self.layout.blocks {
            let h = tape.layer_norm(x, b.var(blk.ln1.0), b.var(blk.ln1.1))?;
            let q = self.linear(tape, b, h, blk.q)?;
            let k = self.linear(tape, b, h, blk.k)?;
            let v = self.linear(tape, b, h, blk.v)?;
            let a = tape.attention(q, k, v, self.config.heads)?;
            let a = self.linear(tape, b, a, blk.o)?;
            x = tape.add(x, a)?;
            let h = tape.layer_norm(x, b.var(blk.ln2.0), b.var(blk.ln2.1))?;
            let f = self.mlp2(tape, b, h, blk.ff1, blk.ff2)?;
            x = tape.add(x, f)?;
        }
        Ok(tape.layer_norm(x, b.var(self.layout.final_ln.0), b.var(self.layout.final_ln.1))?)
    }

    /// Segment heads plus refiner applied to contextual rows `c` (`N × D`).
    pub fn decode(&self, tape: &mut Tape<'_, F>, b: &BoundParams, c: Var) -> Result<Decoded, ModelError> {
        let mut parts = Vec::with_capacity(self.layout.heads.len());
        for head in &self.layout.heads {
            parts.push(self.mlp2(tape, b, c, head[0], head[1])?);
        }
        let concat = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
        let Some([r0, r1, r2]) = self.layout.refiner else {
            return Ok(Decoded { concat, residual: None, output: concat });
        };
        let h = self.linear(tape, b, concat, r0)?;
        let h = self.act(tape, h)?;
        let h = self.linear(tape, b, h, r1)?;
        let h = self.act(tape, h)?;
        let residual = self.linear(tape, b, h, r2)?;
        let output = tape.add(concat, residual)?;
        Ok(Decoded { concat, residual: Some(residual), output })
    }

    /// Full pass on a tape; rows of the result follow `mask.target`.
    pub fn forward(
        &self,
        tape: &mut Tape<'_, F>,
        b: &BoundParams,
        input: &SceneInput<'_>,
    ) -> Result<Decoded, ModelError> {
        let l = input.positions.len();
        let mask = input.mask;
        if input.signals.rows() != l || mask.len() != l {
            return Err(ModelError::Contract(format!(
                "{l} positions, {} signal rows, mask over {} points",
                input.signals.rows(),
                mask.len()
            )));
        }
        if mask.measured.len() < 2 || mask.target.is_empty() {
            return Err(ModelError::Contract(format!(
                "need at least 2 measured and 1 target point, got {} and {}",
                mask.measured.len(),
                mask.target.len()
            )));
        }
        let pos = tape.input(&[l, self.config.position_width()], self.position_features(input.positions), false)?;
        let e = self.encode_signals(tape, b, input.signals, &mask.measured)?;
        let tokens = tape.concat_cols(&[pos, e])?;
        let c = self.encoder_forward(tape, b, tokens)?;
        let ct = tape.gather_rows(c, &mask.target)?;
        self.decode(tape, b, ct)
    }

    /// One-step reconstruction of the target rows (`N × K`).
    pub fn predict(&self, input: &SceneInput<'_>) -> Result<Matrix, ModelError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, |_| false);
        let out = self.forward(&mut tape, &b, input)?;
        let data = tape.value(out.output).iter().map(|v| v.as_f64()).collect();
        Ok(Matrix::from_vec(input.mask.target.len(), self.config.k, data))
    }
}

/// Training state stored next to the weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u32,
    pub seed: u64,
    pub loss_history: Vec<f64>,
}

const CKPT_MAGIC: &[u8; 4] = b"RIRF";
const CKPT_VERSION: u32 = 1;

fn config_fields(c: &ModelConfig) -> [u32; 13] {
    [
        c.d_model as u32,
        c.encoder_layers as u32,
        c.heads as u32,
        c.ff_dim as u32,
        c.segments as u32,
        c.encoding_order as u32,
        c.k as u32,
        c.signal_hidden as u32,
        c.head_hidden as u32,
        c.refiner_hidden as u32,
        (c.init_seed & 0xffff_ffff) as u32,
        (c.init_seed >> 32) as u32,
        match c.activation {
            Activation::Gelu => 0,
            Activation::Relu => 1,
        },
    ]
}

struct Cursor<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::Format("unexpected end of checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Debug)]
pub struct Checkpoint<F: Float> {
    pub model: RirFormer<F>,
    pub meta: CheckpointMeta,
}

impl<F: Float> Checkpoint<F> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        let cfg = self.model.config();
        for v in config_fields(cfg) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend([cfg.use_sinusoidal, cfg.use_segments, cfg.use_refiner].map(u8::from));
        let params = self.model.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.push(F::DTYPE.code());
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out.extend_from_slice(&self.meta.epoch.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        out.extend_from_slice(&(self.meta.loss_history.len() as u32).to_le_bytes());
        for &l in &self.meta.loss_history {
            out.extend_from_slice(&l.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses a checkpoint, converting stored tensors to `F` if their dtype
    /// differs.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, ModelError> {
        if buf.len() < 12 || &buf[..4] != CKPT_MAGIC {
            return Err(ModelError::Format("bad magic, not a checkpoint".into()));
        }
        let (body, tail) = buf.split_at(buf.len() - 4);
        let crc = u32::from_le_bytes(tail.try_into().unwrap());
        let mut c = Cursor { buf: body, pos: 4 };
        let version = c.u32()?;
        if version != CKPT_VERSION {
            return Err(ModelError::Format(format!("unsupported checkpoint version {version}")));
        }
        if crc32fast::hash(body) != crc {
            return Err(ModelError::Format("checksum mismatch".into()));
        }
        let mut f = [0u32; 13];
        for v in &mut f {
            *v = c.u32()?;
        }
        let flags = [c.u8()?, c.u8()?, c.u8()?];
        let config = ModelConfig {
            d_model: f[0] as usize,
            encoder_layers: f[1] as usize,
            heads: f[2] as usize,
            ff_dim: f[3] as usize,
            segments: f[4] as usize,
            encoding_order: f[5] as usize,
            k: f[6] as usize,
            signal_hidden: f[7] as usize,
            head_hidden: f[8] as usize,
            refiner_hidden: f[9] as usize,
            init_seed: u64::from(f[10]) | (u64::from(f[11]) << 32),
            activation: if f[12] == 1 { Activation::Relu } else { Activation::Gelu },
            use_sinusoidal: flags[0] != 0,
            use_segments: flags[1] != 0,
            use_refiner: flags[2] != 0,
        };
        let n = c.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..n {
            let len = c.u16()? as usize;
            let name = std::str::from_utf8(c.take(len)?)
                .map_err(|_| ModelError::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = c.u8()? as usize;
            let shape = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let dtype =
                DType::from_code(c.u8()?).ok_or_else(|| ModelError::Format(format!("{name}: unknown dtype")))?;
            let count: usize = shape.iter().product();
            let raw = c.take(count * dtype.size_of())?;
            let data: Vec<F> = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|b| F::of(f64::from(f32::read_le(b)))).collect(),
                DType::F64 => raw.chunks_exact(8).map(|b| F::of(f64::read_le(b))).collect(),
            };
            params.insert(name, Tensor::new(&shape, data)?)?;
        }
        let epoch = c.u32()?;
        let seed = c.u64()?;
        let h = c.u32()? as usize;
        let loss_history = (0..h).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
        if c.pos != body.len() {
            return Err(ModelError::Format(format!("{} trailing bytes", body.len() - c.pos)));
        }
        Ok(Checkpoint {
            model: RirFormer::from_params(config, params)?,
            meta: CheckpointMeta { epoch, seed, loss_history },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let mut buf = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_at_origin_alternates() {
        let g = positional_encode([0.0; 3], 6);
        assert_eq!(g.len(), 36);
        for (j, v) in g.iter().enumerate() {
            assert_eq!(*v, if j % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn normalisation_frame() {
        let roi = RoiSpec { center: [0.5, 0.0, 0.0], half_extent: [2.0, 1.0, 1.0] };
        assert_eq!(normalize_position([0.5, 0.0, 0.0], &roi).unwrap(), [0.0; 3]);
        assert_eq!(normalize_position([2.5, -1.0, 1.0], &roi).unwrap(), [1.0, -1.0, 1.0]);
        assert!(matches!(normalize_position([3.0, 0.0, 0.0], &roi), Err(ModelError::Range(_))));
        let p = [1.234, -0.56, 0.1];
        let back = denormalize_position(normalize_position(p, &roi).unwrap(), &roi);
        assert!(p.iter().zip(back).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn config_checks() {
        let bad = ModelConfig { k: 1001, segments: 8, ..Default::default() };
        assert!(matches!(bad.validate(), Err(ModelError::Config(_))));
        let bad = ModelConfig { d_model: 30, heads: 8, ..Default::default() };
        assert!(bad.validate().is_err());
        let cfg = ModelConfig::default();
        assert_eq!(cfg.token_width(), 36 + 256);
        assert_eq!(cfg.segment_len(), 128);
        let raw = ModelConfig { use_sinusoidal: false, ..cfg };
        assert_eq!(raw.token_width(), 3 + 256);
    }
}
