use super::{DiffError, Float, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

enum Value<'a, F> {
    Owned(Vec<F>),
    Borrowed(&'a [F]),
}

impl<F> Value<'_, F> {
    fn as_slice(&self) -> &[F] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(v) => v,
        }
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    Relu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<F>, rstd: Vec<F> },
    Softmax(Var),
    Transpose(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    GatherRows { x: Var, idx: Vec<usize> },
    ScatterRows { x: Var, idx: Vec<usize> },
    Sum(Var),
    SumSquares(Var),
}

struct Node<'a, F> {
    shape: Vec<usize>,
    value: Value<'a, F>,
    op: Op<F>,
    needs_grad: bool,
}

impl<F> Node<'_, F> {
    fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => {
                let c = *s.last().unwrap();
                (s.iter().product::<usize>() / c.max(1), c)
            }
        }
    }
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Leaves may borrow their data (parameters are never copied onto the
/// tape). Nodes are appended in evaluation order, so the node list is a
/// topological order and `backward` is a single reverse sweep.
pub struct Tape<'a, F: Float> {
    nodes: Vec<Node<'a, F>>,
}

/// Gradients of a scalar with respect to every node that required one.
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Float> Gradients<F> {
    /// Gradient of `var`; `None` when no differentiable path reached it.
    pub fn get(&self, var: Var) -> Option<&[F]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<F>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<F: Float> Default for Tape<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, F: Float> Tape<'a, F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[F] {
        self.nodes[v.0].value.as_slice()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].dims2()
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<F> {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("node shape is consistent")
    }

    /// Records a tensor as a leaf. It receives a gradient when
    /// `tensor.requires_grad()` is set.
    pub fn leaf(&mut self, tensor: &'a Tensor<F>) -> Var {
        self.push_leaf(tensor.shape().to_vec(), Value::Borrowed(tensor.data()), tensor.requires_grad())
    }

    /// Records a borrowed tensor as a constant (never differentiated).
    pub fn constant(&mut self, tensor: &'a Tensor<F>) -> Var {
        self.push_leaf(tensor.shape().to_vec(), Value::Borrowed(tensor.data()), false)
    }

    /// Records an owned buffer as a leaf.
    pub fn input(&mut self, shape: &[usize], data: Vec<F>, requires_grad: bool) -> Result<Var, DiffError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(DiffError::Shape(format!("shape {shape:?} vs {} values", data.len())));
        }
        Ok(self.push_leaf(shape.to_vec(), Value::Owned(data), requires_grad))
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Value<'a, F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { shape, value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<F>, op: Op<F>, inputs: &[Var]) -> Result<Var, DiffError> {
        if cfg!(debug_assertions) && data.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite(op_name(&op).to_string()));
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { shape, value: Value::Owned(data), op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::Shape(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    /// Matrix product `a[M×K] · b[K×N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 || self.shape(a).len() > 2 || self.shape(b).len() != 2 {
            return Err(DiffError::Shape(format!("matmul {:?} x {:?}", self.shape(a), self.shape(b))));
        }
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, F::zero());
        self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// `a[M×K] · b[N×K]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(DiffError::Shape(format!("matmul_nt {:?} x {:?}ᵀ", self.shape(a), self.shape(b))));
        }
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), true, &mut out, F::zero());
        self.push(vec![m, n], out, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape(a, b, "add")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape(a, b, "sub")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape(a, b, "mul")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b])
    }

    /// Adds the vector `b[C]` to every row of `a[R×C]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (r, c) = self.dims(a);
        if self.value(b).len() != c {
            return Err(DiffError::Shape(format!("add_row {:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let bias = self.value(b);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(c.max(1)).take(r) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += *bv;
            }
        }
        self.push(self.shape(a).to_vec(), out, Op::AddRow(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: F) -> Result<Var, DiffError> {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, s), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var, DiffError> {
        let c = F::of(GELU_C);
        let k = F::of(GELU_A);
        let half = F::of(0.5);
        let out = self.value(a).iter().map(|&x| half * x * (F::one() + (c * (x + k * x * x * x)).tanh())).collect();
        self.push(self.shape(a).to_vec(), out, Op::Gelu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).iter().map(|&x| x.max(F::zero())).collect();
        self.push(self.shape(a).to_vec(), out, Op::Relu(a), &[a])
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias` (both of length `D`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, DiffError> {
        let (r, d) = self.dims(x);
        if d == 0 {
            return Err(DiffError::Shape("layer_norm over an empty axis".into()));
        }
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(DiffError::Shape(format!(
                "layer_norm width {d} with gain {:?} and bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let eps = F::of(LAYER_NORM_EPS);
        let inv_d = F::one() / F::of(d as f64);
        let xs = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let mut xhat = vec![F::zero(); r * d];
        let mut rstd = vec![F::zero(); r];
        let mut out = vec![F::zero(); r * d];
        for i in 0..r {
            let row = &xs[i * d..(i + 1) * d];
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
            let rs = F::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        self.push(self.shape(x).to_vec(), out, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, DiffError> {
        let (r, c) = self.dims(x);
        let xs = self.value(x);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for j in 0..c {
                let e = (row[j] - mx).exp();
                out[i * c + j] = e;
                total += e;
            }
            for v in &mut out[i * c..(i + 1) * c] {
                *v /= total;
            }
        }
        self.push(self.shape(x).to_vec(), out, Op::Softmax(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, DiffError> {
        let (r, c) = self.dims(x);
        let xs = self.value(x);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xs[i * c + j];
            }
        }
        self.push(vec![c, r], out, Op::Transpose(x), &[x])
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(DiffError::Shape(format!("slice [{start}, {}) of {c} columns", start + len)));
        }
        let xs = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xs[i * c + start..i * c + start + len]);
        }
        self.push(vec![r, len], out, Op::SliceCols { x, start }, &[x])
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let Some(&first) = parts.first() else {
            return Err(DiffError::Shape("concat of nothing".into()));
        };
        let r = self.dims(first).0;
        if parts.iter().any(|&p| self.dims(p).0 != r) {
            return Err(DiffError::Shape("concat_cols with mismatched row counts".into()));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        self.push(vec![r, total], out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Selects rows `idx` (in that order).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, DiffError> {
        let (r, c) = self.dims(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(DiffError::Shape(format!("row {bad} of {r}")));
        }
        let xs = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&xs[i * c..(i + 1) * c]);
        }
        self.push(vec![idx.len(), c], out, Op::GatherRows { x, idx: idx.to_vec() }, &[x])
    }

    /// Places the rows of `x` at positions `idx` of a `total`-row zero matrix.
    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], total: usize) -> Result<Var, DiffError> {
        let (r, c) = self.dims(x);
        if idx.len() != r || idx.iter().any(|&i| i >= total) {
            return Err(DiffError::Shape(format!("scatter of {r} rows via {} indices into {total}", idx.len())));
        }
        let xs = self.value(x);
        let mut out = vec![F::zero(); total * c];
        for (src, &dst) in idx.iter().enumerate() {
            out[dst * c..(dst + 1) * c].copy_from_slice(&xs[src * c..(src + 1) * c]);
        }
        self.push(vec![total, c], out, Op::ScatterRows { x, idx: idx.to_vec() }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![], vec![s], Op::Sum(x), &[x])
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var, DiffError> {
        let s = self.value(x).iter().map(|&v| v * v).sum();
        self.push(vec![], vec![s], Op::SumSquares(x), &[x])
    }

    /// `x · w + b` for a weight `w[in×out]` and bias `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Multi-head scaled dot-product attention over all tokens.
    ///
    /// `q`, `k` and `v` are `[tokens × dim]`; `dim` must be divisible by
    /// `heads`. No mask is applied.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, DiffError> {
        let (tq, dim) = self.dims(q);
        let (tk, dk) = self.dims(k);
        let (tv, dv) = self.dims(v);
        if dk != dim || dv != dim || tk != tv {
            return Err(DiffError::Shape(format!("attention q{:?} k{:?} v{:?}", (tq, dim), (tk, dk), (tv, dv))));
        }
        if heads == 0 || dim % heads != 0 {
            return Err(DiffError::Config(format!("dimension {dim} is not divisible into {heads} heads")));
        }
        let hd = dim / heads;
        let scale = F::one() / F::of(hd as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (self.slice_cols(q, h * hd, hd)?, self.slice_cols(k, h * hd, hd)?, self.slice_cols(v, h * hd, hd)?)
            };
            let logits = self.matmul_nt(qh, kh)?;
            let logits = self.scale(logits, scale)?;
            let weights = self.softmax_rows(logits)?;
            outs.push(self.matmul(weights, vh)?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            self.concat_cols(&outs)
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>, DiffError> {
        if self.value(loss).len() != 1 {
            return Err(DiffError::Contract(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        // Only leaves keep gradients.
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node<'a, F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if wants(*a) {
                    // dA = G · Bᵀ
                    let acc = slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, self.value(*b), true, acc, F::one());
                }
                if wants(*b) {
                    // dB = Aᵀ · G
                    let acc = slot(grads, *b, k * n);
                    gemm(k, m, n, self.value(*a), true, g, false, acc, F::one());
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                if wants(*a) {
                    // dA = G · B
                    let acc = slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, self.value(*b), false, acc, F::one());
                }
                if wants(*b) {
                    // dB = Gᵀ · A
                    let acc = slot(grads, *b, n * k);
                    gemm(n, m, k, g, true, self.value(*a), false, acc, F::one());
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        add_into(slot(grads, v, g.len()), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if wants(*b) {
                    for (acc, gv) in slot(grads, *b, g.len()).iter_mut().zip(g) {
                        *acc -= *gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = self.value(*b);
                    for ((acc, gv), y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(bv) {
                        *acc += *gv * *y;
                    }
                }
                if wants(*b) {
                    let av = self.value(*a);
                    for ((acc, gv), x) in slot(grads, *b, g.len()).iter_mut().zip(g).zip(av) {
                        *acc += *gv * *x;
                    }
                }
            }
            Op::AddRow(a, b) => {
                if wants(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if wants(*b) {
                    let c = self.value(*b).len();
                    let acc = slot(grads, *b, c);
                    for row in g.chunks_exact(c.max(1)) {
                        add_into(acc, row);
                    }
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    for (acc, gv) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                        *acc += *gv * *s;
                    }
                }
            }
            Op::Gelu(a) => {
                if wants(*a) {
                    let c = F::of(GELU_C);
                    let k = F::of(GELU_A);
                    let half = F::of(0.5);
                    let three = F::of(3.0);
                    let xs = self.value(*a);
                    for ((acc, gv), &x) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(xs) {
                        let t = (c * (x + k * x * x * x)).tanh();
                        let d =
                            half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * k * x * x);
                        *acc += *gv * d;
                    }
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let xs = self.value(*a);
                    for ((acc, gv), &x) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(xs) {
                        if x > F::zero() {
                            *acc += *gv;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (r, d) = self.dims(*x);
                let gv = self.value(*gain);
                if wants(*x) {
                    let inv_d = F::one() / F::of(d as f64);
                    let acc = slot(grads, *x, r * d);
                    for i in 0..r {
                        let gr = &g[i * d..(i + 1) * d];
                        let hr = &xhat[i * d..(i + 1) * d];
                        let mut sum_dh = F::zero();
                        let mut sum_dh_h = F::zero();
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            acc[i * d + j] += rstd[i] * (dh - inv_d * sum_dh - hr[j] * inv_d * sum_dh_h);
                        }
                    }
                }
                if wants(*gain) {
                    let acc = slot(grads, *gain, d);
                    for i in 0..r {
                        for j in 0..d {
                            acc[j] += g[i * d + j] * xhat[i * d + j];
                        }
                    }
                }
                if wants(*bias) {
                    let acc = slot(grads, *bias, d);
                    for row in g.chunks_exact(d) {
                        add_into(acc, row);
                    }
                }
            }
            Op::Softmax(x) => {
                if wants(*x) {
                    let (r, c) = self.dims(*x);
                    let y = node.value.as_slice();
                    let acc = slot(grads, *x, r * c);
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: F = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                        for j in 0..c {
                            acc[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if wants(*x) {
                    let (r, c) = self.dims(*x);
                    let acc = slot(grads, *x, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            acc[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if wants(*x) {
                    let (r, c) = self.dims(*x);
                    let len = node.dims2().1;
                    let acc = slot(grads, *x, r * c);
                    for i in 0..r {
                        add_into(&mut acc[i * c + start..i * c + start + len], &g[i * len..(i + 1) * len]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.dims2();
                let mut offset = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if wants(p) {
                        let acc = slot(grads, p, r * c);
                        for i in 0..r {
                            add_into(&mut acc[i * c..(i + 1) * c], &g[i * total + offset..i * total + offset + c]);
                        }
                    }
                    offset += c;
                }
            }
            Op::GatherRows { x, idx } => {
                if wants(*x) {
                    let (r, c) = self.dims(*x);
                    let acc = slot(grads, *x, r * c);
                    for (src, &dst) in idx.iter().enumerate() {
                        add_into(&mut acc[dst * c..(dst + 1) * c], &g[src * c..(src + 1) * c]);
                    }
                }
            }
            Op::ScatterRows { x, idx } => {
                if wants(*x) {
                    let (r, c) = self.dims(*x);
                    let acc = slot(grads, *x, r * c);
                    for (src, &dst) in idx.iter().enumerate() {
                        add_into(&mut acc[src * c..(src + 1) * c], &g[dst * c..(dst + 1) * c]);
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let n = self.value(*x).len();
                    slot(grads, *x, n).iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::SumSquares(x) => {
                if wants(*x) {
                    let xs = self.value(*x);
                    let two = F::of(2.0);
                    for (acc, &v) in slot(grads, *x, xs.len()).iter_mut().zip(xs) {
                        *acc += two * v * g[0];
                    }
                }
            }
        }
    }
}

fn op_name<F>(op: &Op<F>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::MatMulNt(..) => "matmul_nt",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::Gelu(..) => "gelu",
        Op::Relu(..) => "relu",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Softmax(..) => "softmax_rows",
        Op::Transpose(..) => "transpose",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatCols(..) => "concat_cols",
        Op::GatherRows { .. } => "gather_rows",
        Op::ScatterRows { .. } => "scatter_rows",
        Op::Sum(..) => "sum",
        Op::SumSquares(..) => "sum_squares",
    }
}

fn slot<F: Float>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut [F] {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
}

fn add_into<F: Float>(acc: &mut [F], g: &[F]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += *b;
    }
}

fn zip_map<F: Float>(a: &[F], b: &[F], f: impl Fn(F, F) -> F) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// `c = op(a) · op(b) + beta · c` for row-major operands, where `op`
/// optionally transposes. `op(a)` is `m×k` and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<F: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    a_t: bool,
    b: &[F],
    b_t: bool,
    c: &mut [F],
    beta: F,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access is in bounds.
    unsafe {
        F::gemm(m, k, n, F::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}
