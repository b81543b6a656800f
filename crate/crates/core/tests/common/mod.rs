//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rirecon_core::diffcore::{DiffError, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Builds a scalar loss from leaf tensors on a fresh tape.
pub trait LossFn: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, DiffError> {}
impl<T: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, DiffError>> LossFn for T {}

/// Combines the output of an operation into a scalar with fixed random
/// weights, so every output element contributes a distinct sensitivity.
pub fn weighted_sum(tape: &mut Tape<'_, f64>, y: Var, seed: u64) -> Result<Var, DiffError> {
    let mut r = rng(seed ^ 0x5eed);
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let wv = tape.input(&shape, w, false)?;
    let prod = tape.mul(y, wv)?;
    tape.sum(prod)
}

fn eval(inputs: &[Tensor<f64>], f: &impl LossFn) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars).unwrap();
    tape.value(loss)[0]
}

/// Maximum relative error between the tape's gradients and central finite
/// differences, over every element of every input.
///
/// The relative error of one element is `|a − n| / max(|a| + |n|, floor)`;
/// the floor keeps elements whose true derivative is zero from dividing
/// noise by noise.
pub fn gradcheck(inputs: &[Tensor<f64>], f: &impl LossFn, step: f64) -> f64 {
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.clone().with_grad()).collect();
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t)).collect();
        let loss = f(&mut tape, &vars).unwrap();
        let grads = tape.backward(loss).unwrap();
        vars.iter()
            .zip(&leaves)
            .map(|(v, t)| grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect()
    };

    let mut worst: f64 = 0.0;
    for (i, t) in leaves.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = leaves.clone();
            plus[i].data_mut()[j] += step;
            let mut minus = leaves.clone();
            minus[i].data_mut()[j] -= step;
            let numeric = (eval(&plus, f) - eval(&minus, f)) / (2.0 * step);
            let a = analytic[i][j];
            let denom = (a.abs() + numeric.abs()).max(1e-3);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Kahan-summed, element-by-element reference.
pub fn kahan(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

pub fn nmse_oracle(t: &rirecon_core::Matrix, e: &rirecon_core::Matrix) -> f64 {
    let num = kahan(t.data().iter().zip(e.data()).map(|(a, b)| (a - b).powi(2)));
    let den = kahan(t.data().iter().map(|a| a * a));
    10.0 * (num / den).log10()
}

pub fn cd_oracle(t: &rirecon_core::Matrix, e: &rirecon_core::Matrix) -> f64 {
    let per_row: Vec<f64> = (0..t.rows())
        .map(|r| {
            let (a, b) = (t.row(r), e.row(r));
            let dot = kahan(a.iter().zip(b).map(|(x, y)| x * y));
            let na = kahan(a.iter().map(|x| x * x)).sqrt();
            let nb = kahan(b.iter().map(|x| x * x)).sqrt();
            1.0 - dot / (na * nb)
        })
        .collect();
    kahan(per_row.into_iter()) / t.rows() as f64
}

/// Worst relative gradient error of every differentiable tape operation on
/// random inputs drawn from `seed`, with the tolerance each one must meet.
pub fn op_gradchecks(seed: u64) -> Vec<(&'static str, f64, f64)> {
    const STEP: f64 = 1e-5;
    let mut r = rng(seed);
    let mut out = Vec::new();

    let inputs = [random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[4, 2])];
    let err = gradcheck(
        &inputs,
        &|t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, seed)
        },
        STEP,
    );
    out.push(("matmul", err, 1e-6));

    let inputs = [random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[2, 4])];
    let err = gradcheck(
        &inputs,
        &|t, v| {
            let y = t.matmul_nt(v[0], v[1])?;
            let bt = t.transpose(v[1])?;
            let z = t.matmul(v[0], bt)?;
            let s = t.add(y, z)?;
            weighted_sum(t, s, seed)
        },
        STEP,
    );
    out.push(("matmul_nt+transpose", err, 1e-6));

    let inputs = [random_tensor(&mut r, &[2, 5])];
    let err = gradcheck(
        &inputs,
        &|t, v| {
            let y = t.softmax_rows(v[0])?;
            weighted_sum(t, y, seed)
        },
        STEP,
    );
    out.push(("softmax_rows", err, 1e-6));

    let inputs = [random_tensor(&mut r, &[3, 6]), random_tensor(&mut r, &[6]), random_tensor(&mut r, &[6])];
    let err = gradcheck(
        &inputs,
        &|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(t, y, seed)
        },
        STEP,
    );
    out.push(("layer_norm", err, 1e-5));

    let inputs = [random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[3, 4]), random_tensor(&mut r, &[3, 4])];
    let err = gradcheck(
        &inputs,
        &|t, v| {
            let y = t.attention(v[0], v[1], v[2], 2)?;
            weighted_sum(t, y, seed)
        },
        STEP,
    );
    out.push(("attention", err, 1e-4));

    let inputs = [random_tensor(&mut r, &[4, 3]), random_tensor(&mut r, &[4, 3]), random_tensor(&mut r, &[3])];
    let err = gradcheck(
        &inputs,
        &|t, v| {
            let a = t.gelu(v[0])?;
            let a = t.relu(a)?;
            let b = t.mul(a, v[1])?;
            let c = t.sub(b, v[0])?;
            let d = t.add_row(c, v[2])?;
            let e = t.scale(d, 0.7)?;
            let left = t.slice_cols(e, 0, 2)?;
            let right = t.slice_cols(e, 2, 1)?;
            let cat = t.concat_cols(&[right, left, right])?;
            let g = t.gather_rows(cat, &[3, 0, 0, 2])?;
            let s = t.scatter_rows(g, &[1, 4, 0, 2], 6)?;
            let sq = t.sum_squares(s)?;
            let w = weighted_sum(t, s, seed)?;
            t.add(sq, w)
        },
        STEP,
    );
    out.push(("elementwise+structural", err, 1e-6));

    let inputs = [
        random_tensor(&mut r, &[5, 4]),
        random_tensor(&mut r, &[4, 6]),
        random_tensor(&mut r, &[6]),
        random_tensor(&mut r, &[6, 3]),
        random_tensor(&mut r, &[3]),
        random_tensor(&mut r, &[5, 3]),
    ];
    let err = gradcheck(
        &inputs,
        &|t, v| {
            let h = t.linear(v[0], v[1], v[2])?;
            let h = t.gelu(h)?;
            let y = t.linear(h, v[3], v[4])?;
            let d = t.sub(y, v[5])?;
            let l = t.sum_squares(d)?;
            t.scale(l, 0.2)
        },
        STEP,
    );
    out.push(("linear mlp", err, 1e-4));
    out
}

pub mod model {
    use super::{gradcheck, random_tensor, rng, weighted_sum};
    use rand::Rng;
    use rirecon_core::diffcore::{BoundParams, Float, ParamSet, Tape, Tensor, Var};
    use rirecon_core::model::{ModelConfig, RirFormer, SceneInput};
    use rirecon_core::roomsim::Point;
    use rirecon_core::scenario::MaskAssignment;
    use rirecon_core::Matrix;

    /// D = 8, one layer, two heads.
    pub fn tiny(k: usize, segments: usize) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            encoder_layers: 1,
            heads: 2,
            ff_dim: 16,
            segments,
            encoding_order: 2,
            k,
            signal_hidden: 8,
            head_hidden: 8,
            refiner_hidden: 8,
            ..Default::default()
        }
    }

    pub fn random_scene(seed: u64, l: usize, k: usize) -> (Vec<Point>, Matrix) {
        let mut r = rng(seed);
        let pos = (0..l).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 0.0]).collect();
        let sig = Matrix::from_vec(l, k, (0..l * k).map(|_| r.random_range(-1.0..1.0)).collect());
        (pos, sig)
    }

    pub fn mask(measured: &[usize], target: &[usize]) -> MaskAssignment {
        MaskAssignment { measured: measured.to_vec(), target: target.to_vec() }
    }

    /// Random values for every parameter, so no gradient path starts at zero.
    pub fn randomized<F: Float>(cfg: ModelConfig, seed: u64) -> RirFormer<F> {
        let base = RirFormer::<f64>::new(cfg).unwrap();
        let mut r = rng(seed);
        let mut params = ParamSet::new();
        for (name, t) in base.params().iter() {
            let data = (0..t.len()).map(|_| F::of(0.5 * r.random_range(-1.0..1.0))).collect();
            params.insert(name, Tensor::new(t.shape(), data).unwrap()).unwrap();
        }
        RirFormer::from_params(cfg, params).unwrap()
    }

    /// Gradient check of every parameter through a four-token forward pass.
    pub fn model_gradcheck(cfg: ModelConfig, seed: u64) -> f64 {
        let model = RirFormer::<f64>::new(cfg).unwrap();
        let mut r = rng(seed);
        let inputs: Vec<Tensor<f64>> = model.params().iter().map(|(_, t)| random_tensor(&mut r, t.shape())).collect();
        let (pos, sig) = random_scene(seed, 4, cfg.k);
        let m = mask(&[0, 2], &[1, 3]);
        gradcheck(
            &inputs,
            &|t: &mut Tape<'_, f64>, v: &[Var]| {
                let b = BoundParams::from_vars(v.to_vec());
                let input = SceneInput { positions: &pos, signals: &sig, mask: &m };
                let out = model.forward(t, &b, &input).unwrap();
                weighted_sum(t, out.output, seed)
            },
            1e-5,
        )
    }

    /// Largest deviation between encoder outputs of a token matrix and of a
    /// random row permutation of it, after undoing the permutation.
    pub fn permutation_deviation(cfg: ModelConfig, seed: u64) -> f32 {
        let model: RirFormer<f32> = randomized(cfg, seed);
        let l = 12;
        let mut r = rng(seed);
        let width = cfg.token_width();
        let tokens: Vec<f32> = (0..l * width).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut perm: Vec<usize> = (0..l).collect();
        for i in (1..l).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let permuted: Vec<f32> = perm.iter().flat_map(|&p| tokens[p * width..(p + 1) * width].to_vec()).collect();
        let run = |data: Vec<f32>| {
            let mut tape = Tape::new();
            let b = model.params().bind(&mut tape, |_| false);
            let x = tape.input(&[l, width], data, false).unwrap();
            let y = model.encoder_forward(&mut tape, &b, x).unwrap();
            tape.value(y).to_vec()
        };
        let a = run(tokens);
        let b = run(permuted);
        let d = cfg.d_model;
        let mut worst = 0.0f32;
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..d {
                worst = worst.max((b[i * d + j] - a[p * d + j]).abs());
            }
        }
        worst
    }
}
