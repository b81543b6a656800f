//! Spline cubic interpolation (SCI) along the array.
//!
//! Each time sample is interpolated independently across space with a
//! natural cubic spline over the measured points' positions on the array
//! line. With fewer than four measured points the interpolant drops to the
//! polynomial through them; outside the measured span the nearest end value
//! is held.

use crate::matrix::Matrix;
use crate::roomsim::Point;
use crate::scenario::{Dataset, Experiment, MaskAssignment, SceneInstance};
use crate::training::{Reconstructor, TrainError};

/// Largest distance (m) a point may sit off the array line.
pub const COLLINEAR_TOLERANCE: f64 = 1e-5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BaselineError {
    #[error("need at least 2 measured points, got {0}")]
    Insufficient(usize),
    #[error("knot coordinates must be strictly increasing (index {0})")]
    Knots(usize),
    #[error("{0} coordinates for {1} rows")]
    Shape(usize, usize),
    #[error("array is not one-dimensional: point {index} is {offset:.3e} m off the line")]
    Unsupported { index: usize, offset: f64 },
}

/// Natural cubic spline sharing one knot vector across many channels
/// (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct SplineModel {
    xs: Vec<f64>,
    ys: Matrix,
    /// Second derivatives at the knots, same layout as `ys`.
    m: Matrix,
}

fn check_knots(xs: &[f64]) -> Result<(), BaselineError> {
    match xs.windows(2).position(|w| !(w[1] > w[0])) {
        Some(i) => Err(BaselineError::Knots(i + 1)),
        None => Ok(()),
    }
}

impl SplineModel {
    /// Fits every column of `ys` (one row per knot). Needs at least two
    /// knots; with two the spline is the straight line.
    pub fn fit(xs: &[f64], ys: &Matrix) -> Result<Self, BaselineError> {
        let n = xs.len();
        if n < 2 {
            return Err(BaselineError::Insufficient(n));
        }
        if ys.rows() != n {
            return Err(BaselineError::Shape(n, ys.rows()));
        }
        check_knots(xs)?;
        let k = ys.cols();
        let mut m = Matrix::zeros(n, k);
        if n > 2 {
            // Thomas sweep on the interior equations
            // h₋ m₋ + 2(h₋ + h₊) m + h₊ m₊ = 6 (Δ₊ − Δ₋)
            let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
            let inner = n - 2;
            let mut cp = vec![0.0; inner];
            let mut dp = Matrix::zeros(inner, k);
            for r in 0..inner {
                let i = r + 1;
                let (lo, diag, up) = (h[i - 1], 2.0 * (h[i - 1] + h[i]), h[i]);
                let denom = if r == 0 { diag } else { diag - lo * cp[r - 1] };
                cp[r] = up / denom;
                for c in 0..k {
                    let rhs =
                        6.0 * ((ys.row(i + 1)[c] - ys.row(i)[c]) / h[i] - (ys.row(i)[c] - ys.row(i - 1)[c]) / h[i - 1]);
                    let prev = if r == 0 { 0.0 } else { dp.row(r - 1)[c] };
                    dp.row_mut(r)[c] = (rhs - lo * prev) / denom;
                }
            }
            for r in (0..inner).rev() {
                for c in 0..k {
                    let next = if r + 1 < inner { m.row(r + 2)[c] } else { 0.0 };
                    m.row_mut(r + 1)[c] = dp.row(r)[c] - cp[r] * next;
                }
            }
        }
        Ok(SplineModel { xs: xs.to_vec(), ys: ys.clone(), m })
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    pub fn second_derivatives(&self) -> &Matrix {
        &self.m
    }

    /// All channels at `x`; outside the knot span the end values are held.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys.row(0).to_vec();
        }
        if x >= self.xs[n - 1] {
            return self.ys.row(n - 1).to_vec();
        }
        let i = self.xs.partition_point(|&k| k <= x).clamp(1, n - 1) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        let (ca, cb) = ((a * a * a - a) * h * h / 6.0, (b * b * b - b) * h * h / 6.0);
        let (y0, y1, m0, m1) = (self.ys.row(i), self.ys.row(i + 1), self.m.row(i), self.m.row(i + 1));
        (0..self.ys.cols()).map(|c| a * y0[c] + b * y1[c] + ca * m0[c] + cb * m1[c]).collect()
    }
}

/// Single-channel convenience wrapper around [`SplineModel::fit`].
pub fn spline_fit(xs: &[f64], ys: &[f64]) -> Result<SplineModel, BaselineError> {
    SplineModel::fit(xs, &Matrix::from_vec(ys.len(), 1, ys.to_vec()))
}

/// Lagrange polynomial through two or three knots, held flat outside.
fn polynomial_eval(xs: &[f64], ys: &Matrix, x: f64) -> Vec<f64> {
    let n = xs.len();
    let x = x.clamp(xs[0], xs[n - 1]);
    let weights: Vec<f64> =
        (0..n).map(|j| (0..n).filter(|&i| i != j).map(|i| (x - xs[i]) / (xs[j] - xs[i])).product()).collect();
    (0..ys.cols()).map(|c| (0..n).map(|j| weights[j] * ys.row(j)[c]).sum()).collect()
}

/// Interpolates the rows of `measured` (one per coordinate in
/// `measured_coords`, any order) at `target_coords`.
pub fn sci_reconstruct(
    measured: &Matrix,
    measured_coords: &[f64],
    target_coords: &[f64],
) -> Result<Matrix, BaselineError> {
    let m = measured_coords.len();
    if m != measured.rows() {
        return Err(BaselineError::Shape(m, measured.rows()));
    }
    if m < 2 {
        return Err(BaselineError::Insufficient(m));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| measured_coords[a].total_cmp(&measured_coords[b]));
    let xs: Vec<f64> = order.iter().map(|&i| measured_coords[i]).collect();
    check_knots(&xs)?;
    let ys = measured.select_rows(&order);
    let mut out = Matrix::zeros(target_coords.len(), measured.cols());
    if m >= 4 {
        let spline = SplineModel::fit(&xs, &ys)?;
        for (r, &x) in target_coords.iter().enumerate() {
            out.row_mut(r).copy_from_slice(&spline.eval(x));
        }
    } else {
        for (r, &x) in target_coords.iter().enumerate() {
            out.row_mut(r).copy_from_slice(&polynomial_eval(&xs, &ys, x));
        }
    }
    Ok(out)
}

/// Signed distance of every point along the line through the array, with
/// the first point at zero. Fails if any point is off that line.
pub fn array_coordinates(points: &[Point]) -> Result<Vec<f64>, BaselineError> {
    let Some(&p0) = points.first() else {
        return Ok(Vec::new());
    };
    let d = |p: &Point| [p[0] - p0[0], p[1] - p0[1], p[2] - p0[2]];
    let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let far = points.iter().map(d).max_by(|a, b| norm(*a).total_cmp(&norm(*b))).unwrap();
    let len = norm(far);
    if len == 0.0 {
        return Ok(vec![0.0; points.len()]);
    }
    let u = [far[0] / len, far[1] / len, far[2] / len];
    points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let v = d(p);
            let s = v[0] * u[0] + v[1] * u[1] + v[2] * u[2];
            let offset = norm([v[0] - s * u[0], v[1] - s * u[1], v[2] - s * u[2]]);
            if offset > COLLINEAR_TOLERANCE {
                Err(BaselineError::Unsupported { index, offset })
            } else {
                Ok(s)
            }
        })
        .collect()
}

/// The SCI baseline as a [`Reconstructor`].
#[derive(Clone, Debug)]
pub struct Sci {
    label: String,
}

impl Sci {
    /// Exp-2 arrays have irregular spacing, which the method was not
    /// designed for; reports say so in their label.
    pub fn for_dataset(dataset: &Dataset) -> Self {
        let label = match dataset.experiment {
            Experiment::Exp1 => "sci",
            Experiment::Exp2 => "sci-grid-free-extension",
        };
        Sci { label: label.into() }
    }
}

impl Reconstructor for Sci {
    fn reconstruct(&self, _: &Dataset, scene: &SceneInstance, mask: &MaskAssignment) -> Result<Matrix, TrainError> {
        let coords = array_coordinates(&scene.points)?;
        let pick = |idx: &[usize]| idx.iter().map(|&i| coords[i]).collect::<Vec<_>>();
        Ok(sci_reconstruct(&scene.rirs.select_rows(&mask.measured), &pick(&mask.measured), &pick(&mask.target))?)
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_linear_data() {
        let xs = [0.0, 0.5, 1.7, 2.0, 3.1];
        let s = spline_fit(&xs, &[2.5; 5]).unwrap();
        for x in [-1.0, 0.2, 1.0, 2.9, 5.0] {
            assert!((s.eval(x)[0] - 2.5).abs() < 1e-14);
        }
        let lin: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let s = spline_fit(&xs, &lin).unwrap();
        for w in xs.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            assert!((s.eval(mid)[0] - (3.0 * mid - 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn knot_errors() {
        assert_eq!(spline_fit(&[0.0, 1.0, 1.0], &[0.0; 3]), Err(BaselineError::Knots(2)));
        assert_eq!(spline_fit(&[0.0], &[0.0]), Err(BaselineError::Insufficient(1)));
        let one = Matrix::zeros(1, 3);
        assert_eq!(sci_reconstruct(&one, &[0.0], &[1.0]), Err(BaselineError::Insufficient(1)));
    }

    #[test]
    fn small_sets_use_polynomials() {
        let ys = Matrix::from_rows(&[[1.0], [4.0], [9.0]]);
        let out = sci_reconstruct(&ys, &[1.0, 2.0, 3.0], &[1.5, 2.5, 0.0, 7.0]).unwrap();
        assert!((out.row(0)[0] - 2.25).abs() < 1e-12);
        assert!((out.row(1)[0] - 6.25).abs() < 1e-12);
        assert_eq!(out.row(2)[0], 1.0);
        assert_eq!(out.row(3)[0], 9.0);
        let two = Matrix::from_rows(&[[0.0, 1.0], [2.0, 1.0]]);
        let out = sci_reconstruct(&two, &[0.0, 1.0], &[0.25]).unwrap();
        assert_eq!(out.row(0), &[0.5, 1.0]);
    }

    #[test]
    fn coordinates_along_a_diagonal_line() {
        let pts: Vec<Point> = (0..5).map(|i| [1.0 + 0.6 * i as f64, 2.0 - 0.8 * i as f64, 0.5]).collect();
        let s = array_coordinates(&pts).unwrap();
        for (i, v) in s.iter().enumerate() {
            assert!((v - i as f64).abs() < 1e-12);
        }
        let mut bent = pts.clone();
        bent[2][2] += 0.01;
        assert!(matches!(array_coordinates(&bent), Err(BaselineError::Unsupported { index: 2, .. })));
    }
}
