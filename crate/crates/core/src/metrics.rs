//! Evaluation metrics: MAE%, weighted R², compound error, MTL/STL deltas
//! and inference timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FieldId;
use crate::linalg::Matrix;
use crate::scenario::Sequences;

/// Normalizer floor for identically-zero training maxima (field units).
pub const ZERO_MAX_GUARD: f64 = 1e-8;

/// A sample's coefficient counts as constant when its std over steps is
/// below this fraction of the coefficient's largest magnitude.
pub const ZERO_VARIANCE_REL: f64 = 1e-8;

/// Frame budget for real-time display, seconds.
pub const REAL_TIME_BAR: f64 = 3.33e-2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaeStats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

/// Largest absolute entry over all snapshots.
pub fn train_max(s: &Matrix) -> f64 {
    s.max_abs()
}

/// Pointwise `|truth − pred| / max(train_max, guard)` in percent, summarized
/// over every point, step and sample.
pub fn mae_percent(pred: &Matrix, truth: &Matrix, train_max: f64) -> Result<MaeStats> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape())));
    }
    let d = train_max.max(ZERO_MAX_GUARD);
    let n = pred.as_slice().len();
    if n == 0 {
        return Ok(MaeStats::default());
    }
    let (mut sum, mut sum2, mut max) = (0.0, 0.0, 0.0f64);
    for (p, t) in pred.as_slice().iter().zip(truth.as_slice()) {
        let e = 100.0 * (t - p).abs() / d;
        sum += e;
        sum2 += e * e;
        max = max.max(e);
    }
    let mean = sum / n as f64;
    let var = (sum2 / n as f64 - mean * mean).max(0.0);
    Ok(MaeStats { mean, std: var.sqrt(), max })
}

/// Mean MAE% per load step; columns are sample-major, `n_steps` per sample.
pub fn compound_error_curve(pred: &Matrix, truth: &Matrix, train_max: f64, n_steps: usize) -> Result<Vec<f64>> {
    if pred.shape() != truth.shape() || n_steps == 0 || pred.cols() % n_steps != 0 {
        return Err(Error::Shape(format!("cannot split {:?} into {n_steps}-step samples", pred.shape())));
    }
    let d = train_max.max(ZERO_MAX_GUARD);
    let mut curve = vec![0.0; n_steps];
    for i in 0..pred.rows() {
        for (j, (p, t)) in pred.row(i).iter().zip(truth.row(i)).enumerate() {
            curve[j % n_steps] += (t - p).abs();
        }
    }
    let count = (pred.rows() * pred.cols() / n_steps) as f64;
    Ok(curve.into_iter().map(|c| 100.0 * c / d / count).collect())
}

/// Coefficient weights `(|a|max − |a|min) / Σ(|a|max − |a|min)` over training
/// samples and steps. Uniform when every range is zero.
pub fn r2_weights(train: &Sequences) -> Vec<f64> {
    let n = train.n_features;
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut lo = vec![f64::INFINITY; n];
    for row in train.data.chunks_exact(n.max(1)) {
        for c in 0..n {
            hi[c] = hi[c].max(row[c].abs());
            lo[c] = lo[c].min(row[c].abs());
        }
    }
    let ranges: Vec<f64> = hi.iter().zip(&lo).map(|(h, l)| if h.is_finite() { h - l } else { 0.0 }).collect();
    let total: f64 = ranges.iter().sum();
    if total > 0.0 {
        ranges.iter().map(|r| r / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedR2 {
    pub value: f64,
    /// (coefficient, sample) terms dropped because the true coefficient is
    /// constant over the sample's steps.
    pub skipped: usize,
}

/// Per-coefficient R² over each test sample's steps, averaged over samples,
/// then weight-summed. Zero-variance terms are skipped; a coefficient with
/// no usable sample is dropped and the remaining weights renormalized.
pub fn weighted_r2(pred: &Sequences, truth: &Sequences, weights: &[f64]) -> Result<WeightedR2> {
    if pred.n_samples != truth.n_samples
        || pred.n_steps != truth.n_steps
        || pred.n_features != truth.n_features
        || weights.len() != truth.n_features
    {
        return Err(Error::Shape("weighted R²: prediction, truth and weights disagree".into()));
    }
    let (nt, nf) = (truth.n_steps, truth.n_features);
    let mut skipped = 0;
    let (mut acc, mut wsum) = (0.0, 0.0);
    for c in 0..nf {
        let (mut r2, mut used) = (0.0, 0usize);
        let scale = (0..truth.n_samples * nt).fold(0.0f64, |a, r| a.max(truth.data[r * nf + c].abs()));
        let floor = nt as f64 * (ZERO_VARIANCE_REL * scale).powi(2);
        for s in 0..truth.n_samples {
            let mean = (0..nt).map(|k| truth.get(s, k, c)).sum::<f64>() / nt as f64;
            let ss_tot: f64 = (0..nt).map(|k| (truth.get(s, k, c) - mean).powi(2)).sum();
            let ss_res: f64 = (0..nt).map(|k| (truth.get(s, k, c) - pred.get(s, k, c)).powi(2)).sum();
            if ss_tot <= floor {
                skipped += 1;
                continue;
            }
            r2 += 1.0 - ss_res / ss_tot;
            used += 1;
        }
        if used > 0 {
            acc += weights[c] * r2 / used as f64;
            wsum += weights[c];
        }
    }
    let value = if wsum > 0.0 { acc / wsum } else { f64::NAN };
    Ok(WeightedR2 { value, skipped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldReport {
    pub field: FieldId,
    pub mae: MaeStats,
    pub r2: WeightedR2,
    pub compound: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fields: Vec<FieldReport>,
    #[serde(default)]
    pub timing: Option<Timing>,
}

impl EvalReport {
    pub fn field(&self, id: FieldId) -> Option<&FieldReport> {
        self.fields.iter().find(|f| f.field == id)
    }

    /// Text table with MAE% mean/std/max and weighted R² per field.
    pub fn render(&self) -> String {
        let mut s = format!("{:<10} {:>9} {:>9} {:>9} {:>8}\n", "field", "mean%", "std%", "max%", "R2w");
        for f in &self.fields {
            s.push_str(&format!(
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8.4}\n",
                f.field.as_str(),
                f.mae.mean,
                f.mae.std,
                f.mae.max,
                f.r2.value
            ));
        }
        if let Some(t) = &self.timing {
            s.push_str(&format!("inference {:.3e} s/sample (bar {:.2e} s/frame)\n", t.median_s, REAL_TIME_BAR));
        }
        s
    }
}

/// MTL minus STL; negative MAE deltas and positive R² deltas favour MTL.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDelta {
    pub field: FieldId,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub r2: f64,
}

pub fn compare_mtl_stl(mtl: &EvalReport, stl: &EvalReport) -> Result<Vec<FieldDelta>> {
    let a: Vec<FieldId> = mtl.fields.iter().map(|f| f.field).collect();
    let b: Vec<FieldId> = stl.fields.iter().map(|f| f.field).collect();
    if a != b {
        return Err(Error::RegistryMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(mtl
        .fields
        .iter()
        .zip(&stl.fields)
        .map(|(m, s)| FieldDelta {
            field: m.field,
            mean: m.mae.mean - s.mae.mean,
            std: m.mae.std - s.mae.std,
            max: m.mae.max - s.mae.max,
            r2: m.r2.value - s.r2.value,
        })
        .collect())
}

pub fn render_deltas(deltas: &[FieldDelta]) -> String {
    let mut s = format!("{:<10} {:>9} {:>9} {:>9} {:>8}\n", "field", "dmean%", "dstd%", "dmax%", "dR2w");
    for d in deltas {
        s.push_str(&format!(
            "{:<10} {:>+9.4} {:>+9.4} {:>+9.4} {:>+8.4}\n",
            d.field.as_str(),
            d.mean,
            d.std,
            d.max,
            d.r2
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub repetitions: usize,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

impl Timing {
    /// How many times faster than one real-time frame.
    pub fn margin(&self) -> f64 {
        REAL_TIME_BAR / self.median_s
    }
}

/// Median wall-clock of `f` after one warm-up call.
pub fn timing_benchmark(repetitions: usize, mut f: impl FnMut()) -> Timing {
    let reps = repetitions.max(1);
    f();
    let mut t: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64()
        })
        .collect();
    t.sort_by(f64::total_cmp);
    let median = if reps % 2 == 1 { t[reps / 2] } else { 0.5 * (t[reps / 2 - 1] + t[reps / 2]) };
    Timing { repetitions: reps, median_s: median, min_s: t[0], max_s: t[reps - 1] }
}
