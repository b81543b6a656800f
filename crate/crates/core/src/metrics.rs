//! Reconstruction metrics (NMSE, cosine distance), Schroeder decay
//! analysis and the CSV report schema.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

/// Lower clamp for NMSE in dB; exact reconstructions report this value.
pub const NMSE_FLOOR_DB: f64 = -120.0;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("ground truth has zero energy")]
    ZeroReference,
    #[error("row {0} has zero norm")]
    ZeroRow(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn check_shapes(a: &Matrix, b: &Matrix) -> Result<(), MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::Shape(a.shape(), b.shape()));
    }
    Ok(())
}

/// Normalized squared Frobenius error in dB, clamped at [`NMSE_FLOOR_DB`].
pub fn nmse(truth: &Matrix, estimate: &Matrix) -> Result<f64, MetricError> {
    check_shapes(truth, estimate)?;
    let mut err = 0.0;
    let mut reference = 0.0;
    for (t, e) in truth.data().iter().zip(estimate.data()) {
        err += (t - e) * (t - e);
        reference += t * t;
    }
    if reference <= 0.0 {
        return Err(MetricError::ZeroReference);
    }
    Ok(ratio_db(err / reference))
}

fn ratio_db(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        return NMSE_FLOOR_DB;
    }
    (10.0 * ratio.log10()).max(NMSE_FLOOR_DB)
}

/// Mean over rows of `1 − cos(truth_n, estimate_n)`; in `[0, 2]`.
pub fn cosine_distance(truth: &Matrix, estimate: &Matrix) -> Result<f64, MetricError> {
    check_shapes(truth, estimate)?;
    if truth.rows() == 0 {
        return Err(MetricError::ZeroReference);
    }
    let mut total = 0.0;
    for (n, (t, e)) in truth.iter_rows().zip(estimate.iter_rows()).enumerate() {
        let (mut dot, mut tt, mut ee) = (0.0, 0.0, 0.0);
        for (a, b) in t.iter().zip(e) {
            dot += a * b;
            tt += a * a;
            ee += b * b;
        }
        if tt <= 0.0 || ee <= 0.0 {
            return Err(MetricError::ZeroRow(n));
        }
        let cos = (dot / (tt.sqrt() * ee.sqrt())).clamp(-1.0, 1.0);
        total += 1.0 - cos;
    }
    Ok(total / truth.rows() as f64)
}

/// Outcome of a T20 reverberation-time fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rt60Estimate {
    Reliable(f64),
    /// The decay curve never spans −5…−25 dB inside the window, or the fit
    /// is not a decay. Carries the fitted value when one could be formed.
    Unreliable(Option<f64>),
}

impl Rt60Estimate {
    pub fn seconds(self) -> Option<f64> {
        match self {
            Rt60Estimate::Reliable(s) => Some(s),
            Rt60Estimate::Unreliable(s) => s,
        }
    }

    pub fn is_reliable(self) -> bool {
        matches!(self, Rt60Estimate::Reliable(_))
    }
}

/// Schroeder energy decay curve in dB relative to total energy.
pub fn energy_decay_db(samples: &[f64]) -> Vec<f64> {
    let mut edc = vec![0.0; samples.len()];
    let mut acc = 0.0;
    for (i, s) in samples.iter().enumerate().rev() {
        acc += s * s;
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter().map(|&e| if total > 0.0 && e > 0.0 { 10.0 * (e / total).log10() } else { f64::NEG_INFINITY }).collect()
}

const T20_MIN_POINTS: usize = 8;

/// Reverberation time from the Schroeder curve: least-squares line over the
/// −5 dB…−25 dB span, extrapolated to −60 dB.
pub fn schroeder_rt60(samples: &[f64], fs: f64) -> Rt60Estimate {
    let edc = energy_decay_db(samples);
    let Some(start) = edc.iter().position(|&d| d <= -5.0) else {
        return Rt60Estimate::Unreliable(None);
    };
    let Some(end) = edc.iter().position(|&d| d < -25.0) else {
        return Rt60Estimate::Unreliable(None);
    };
    let span: Vec<(f64, f64)> = (start..end).filter(|&i| edc[i].is_finite()).map(|i| (i as f64 / fs, edc[i])).collect();
    if span.len() < 2 {
        return Rt60Estimate::Unreliable(None);
    }
    let n = span.len() as f64;
    let mt = span.iter().map(|p| p.0).sum::<f64>() / n;
    let md = span.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = span.iter().map(|(t, d)| (t - mt) * (d - md)).sum();
    let sxx: f64 = span.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    if sxx <= 0.0 {
        return Rt60Estimate::Unreliable(None);
    }
    let slope = sxy / sxx;
    if slope >= 0.0 {
        return Rt60Estimate::Unreliable(None);
    }
    let rt = -60.0 / slope;
    if span.len() < T20_MIN_POINTS {
        Rt60Estimate::Unreliable(Some(rt))
    } else {
        Rt60Estimate::Reliable(rt)
    }
}

/// One reconstructed scene at one missing rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene_id: usize,
    pub mr: f64,
    pub nmse_db: f64,
    pub cd: f64,
    pub seed: u64,
    /// Hash of the measured/target split, so reports from different
    /// reconstructors can be checked for identical masks.
    pub mask_hash: String,
    pub label: String,
}

/// Mean over scenes at one missing rate (NMSE averaged in dB).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mr: f64,
    pub mean_nmse_db: f64,
    pub mean_cd: f64,
    pub n_scenes: usize,
}

/// Mean NMSE of one temporal segment at one missing rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub mr: f64,
    pub segment: usize,
    pub mean_nmse_db: f64,
    pub n_scenes: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub scenes: Vec<SceneMetrics>,
    pub aggregates: Vec<AggregateMetrics>,
    pub segments: Vec<SegmentMetrics>,
    pub seed: u64,
    pub source_id: String,
}

impl MetricsReport {
    pub fn aggregate(&self, mr: f64) -> Option<&AggregateMetrics> {
        self.aggregates.iter().find(|a| (a.mr - mr).abs() < 1e-9)
    }

    pub fn write_scenes_csv(&self, out: impl Write) -> Result<(), MetricError> {
        write_rows(out, &self.scenes)
    }

    pub fn write_aggregate_csv(&self, out: impl Write) -> Result<(), MetricError> {
        write_rows(out, &self.aggregates)
    }

    pub fn write_segments_csv(&self, out: impl Write) -> Result<(), MetricError> {
        write_rows(out, &self.segments)
    }
}

fn write_rows<T: Serialize>(out: impl Write, rows: &[T]) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_aggregate_csv(input: impl Read) -> Result<Vec<AggregateMetrics>, MetricError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn read_scenes_csv(input: impl Read) -> Result<Vec<SceneMetrics>, MetricError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows)
    }

    #[test]
    fn nmse_identities() {
        let h = m(&[&[1.0, -2.0, 0.5], &[0.0, 3.0, 1.0]]);
        let zero = Matrix::zeros(2, 3);
        assert_eq!(nmse(&h, &zero).unwrap(), 0.0);
        assert_eq!(nmse(&h, &h).unwrap(), NMSE_FLOOR_DB);
        assert!(nmse(&h, &h.scaled(2.0)).unwrap().abs() < 1e-12);
        assert!(matches!(nmse(&zero, &h), Err(MetricError::ZeroReference)));
        assert!(matches!(nmse(&h, &Matrix::zeros(1, 3)), Err(MetricError::Shape(..))));
    }

    #[test]
    fn cosine_identities() {
        let h = m(&[&[1.0, -2.0, 0.5], &[0.0, 3.0, 1.0]]);
        assert!(cosine_distance(&h, &h).unwrap().abs() < 1e-15);
        assert!((cosine_distance(&h, &h.scaled(-1.0)).unwrap() - 2.0).abs() < 1e-15);
        let a = m(&[&[1.0, 0.0], &[0.0, 2.0]]);
        let b = m(&[&[0.0, 5.0], &[-1.0, 0.0]]);
        assert!((cosine_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let z = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(cosine_distance(&a, &z), Err(MetricError::ZeroRow(1))));
    }

    #[test]
    fn impulse_has_no_decay_range() {
        let mut x = vec![0.0; 100];
        x[0] = 1.0;
        assert_eq!(schroeder_rt60(&x, 8000.0), Rt60Estimate::Unreliable(None));
    }

    #[test]
    fn pure_exponential_energy_decay() {
        // h² decays by 60 dB over rt seconds
        let (fs, rt) = (8000.0, 0.4);
        let x: Vec<f64> = (0..8000).map(|n| 10f64.powf(-3.0 * (n as f64 / fs) / rt)).collect();
        let est = schroeder_rt60(&x, fs);
        assert!((est.seconds().unwrap() - rt).abs() / rt < 0.01, "{est:?}");
        assert!(est.is_reliable());
    }

    #[test]
    fn csv_roundtrip_of_aggregates() {
        let report = MetricsReport {
            aggregates: vec![AggregateMetrics { mr: 0.1, mean_nmse_db: -3.25, mean_cd: 0.5, n_scenes: 10 }],
            ..Default::default()
        };
        let mut buf = Vec::new();
        report.write_aggregate_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("mr,mean_nmse_db,mean_cd,n_scenes"));
        assert_eq!(read_aggregate_csv(buf.as_slice()).unwrap(), report.aggregates);
    }
}
