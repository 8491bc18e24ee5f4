use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{FieldHistory, FieldId};
use crate::linalg::Matrix;

/// Floor below which an output standard deviation counts as degenerate.
pub const STD_FLOOR: f64 = 1e-12;

/// Dense `samples × steps × features` tensor, sample-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequences {
    pub n_samples: usize,
    pub n_steps: usize,
    pub n_features: usize,
    pub data: Vec<f64>,
}

impl Sequences {
    pub fn zeros(n_samples: usize, n_steps: usize, n_features: usize) -> Self {
        Self { n_samples, n_steps, n_features, data: vec![0.0; n_samples * n_steps * n_features] }
    }

    pub fn from_vec(n_samples: usize, n_steps: usize, n_features: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_samples * n_steps * n_features {
            return Err(Error::Shape(format!(
                "{} values for a {n_samples}×{n_steps}×{n_features} tensor",
                data.len()
            )));
        }
        Ok(Self { n_samples, n_steps, n_features, data })
    }

    /// Inputs from load paths: one `μ` per step.
    pub fn from_paths(paths: &[super::LoadPath]) -> Result<Self> {
        let n_steps = paths.first().map_or(0, |p| p.n_steps());
        let n_features = paths.first().and_then(|p| p.steps.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(paths.len() * n_steps * n_features);
        for p in paths {
            if p.n_steps() != n_steps || p.steps.iter().any(|mu| mu.len() != n_features) {
                return Err(Error::Shape("load paths differ in length or parameter count".into()));
            }
            data.extend(p.steps.iter().flatten());
        }
        Self::from_vec(paths.len(), n_steps, n_features, data)
    }

    /// Stacks reduced coefficients `A` (`n × (samples·steps)`, sample-major
    /// columns) into per-sample sequences.
    pub fn from_coefficients(a: &Matrix, n_samples: usize, n_steps: usize) -> Result<Self> {
        if a.cols() != n_samples * n_steps {
            return Err(Error::Shape(format!("{} columns for {n_samples}×{n_steps} snapshots", a.cols())));
        }
        let n = a.rows();
        let mut out = Self::zeros(n_samples, n_steps, n);
        for s in 0..n_samples {
            for k in 0..n_steps {
                for c in 0..n {
                    out.data[(s * n_steps + k) * n + c] = a.get(c, s * n_steps + k);
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`Sequences::from_coefficients`].
    pub fn to_coefficients(&self) -> Matrix {
        let cols = self.n_samples * self.n_steps;
        Matrix::from_fn(self.n_features, cols, |c, j| self.data[j * self.n_features + c])
    }

    pub fn sample_len(&self) -> usize {
        self.n_steps * self.n_features
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[s * l..(s + 1) * l]
    }

    pub fn get(&self, s: usize, k: usize, f: usize) -> f64 {
        self.data[(s * self.n_steps + k) * self.n_features + f]
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Self { n_samples: indices.len(), n_steps: self.n_steps, n_features: self.n_features, data }
    }

    /// Concatenates feature blocks of tensors sharing samples and steps.
    pub fn concat_features(parts: &[&Sequences]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        let (ns, nt) = (first.n_samples, first.n_steps);
        if parts.iter().any(|p| p.n_samples != ns || p.n_steps != nt) {
            return Err(Error::Shape("feature blocks disagree on samples or steps".into()));
        }
        let nf: usize = parts.iter().map(|p| p.n_features).sum();
        let mut data = Vec::with_capacity(ns * nt * nf);
        for row in 0..ns * nt {
            for p in parts {
                data.extend_from_slice(&p.data[row * p.n_features..(row + 1) * p.n_features]);
            }
        }
        Self::from_vec(ns, nt, nf, data)
    }

    /// Feature columns `range` of every row.
    pub fn slice_features(&self, range: std::ops::Range<usize>) -> Self {
        let w = range.len();
        let mut data = Vec::with_capacity(self.n_samples * self.n_steps * w);
        for row in 0..self.n_samples * self.n_steps {
            let base = row * self.n_features;
            data.extend_from_slice(&self.data[base + range.start..base + range.end]);
        }
        Self { n_samples: self.n_samples, n_steps: self.n_steps, n_features: w, data }
    }
}

/// Full-order snapshots of one field: `N_h × (N_s·N_t)`, column
/// `s·N_t + k` holding step `k` of sample `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMatrix {
    pub field: FieldId,
    pub n_samples: usize,
    pub n_steps: usize,
    pub matrix: Matrix,
}

pub fn assemble_snapshots(histories: &[FieldHistory], field: FieldId) -> Result<SnapshotMatrix> {
    let first = histories.first().ok_or_else(|| Error::Shape("no histories to assemble".into()))?;
    let (n_nodes, n_steps) = (first.n_nodes, first.n_steps());
    if histories.iter().any(|h| h.n_nodes != n_nodes || h.n_steps() != n_steps) {
        return Err(Error::Shape("histories come from different meshes or step counts".into()));
    }
    let rows = field.components() * n_nodes;
    let cols = histories.len() * n_steps;
    let mut m = Matrix::zeros(rows, cols);
    for (s, h) in histories.iter().enumerate() {
        for k in 0..n_steps {
            let v = h.field(field, k);
            let j = s * n_steps + k;
            for (i, x) in v.iter().enumerate() {
                m.set(i, j, *x);
            }
        }
    }
    Ok(SnapshotMatrix { field, n_samples: histories.len(), n_steps, matrix: m })
}

/// Per-feature min/max of the training inputs, pooled over steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl InputStats {
    pub fn fit(x: &Sequences) -> Result<Self> {
        let nf = x.n_features;
        let mut min = vec![f64::INFINITY; nf];
        let mut max = vec![f64::NEG_INFINITY; nf];
        for row in x.data.chunks_exact(nf.max(1)) {
            for f in 0..nf {
                min[f] = min[f].min(row[f]);
                max[f] = max[f].max(row[f]);
            }
        }
        for feature in 0..nf {
            if !(max[feature] > min[feature]) {
                return Err(Error::ConstantFeature { feature });
            }
        }
        Ok(Self { min, max })
    }

    pub fn normalize_row(&self, mu: &[f64], out: &mut [f64]) {
        for f in 0..mu.len() {
            out[f] = (mu[f] - self.min[f]) / (self.max[f] - self.min[f]);
        }
    }

    pub fn normalize(&self, x: &Sequences) -> Sequences {
        self.map(x, |v, lo, hi| (v - lo) / (hi - lo))
    }

    pub fn denormalize(&self, x: &Sequences) -> Sequences {
        self.map(x, |v, lo, hi| lo + v * (hi - lo))
    }

    fn map(&self, x: &Sequences, f: impl Fn(f64, f64, f64) -> f64) -> Sequences {
        let nf = x.n_features;
        let data = x.data.iter().enumerate().map(|(i, v)| f(*v, self.min[i % nf], self.max[i % nf])).collect();
        Sequences { data, ..*x }
    }
}

/// Per-(coefficient, step) training mean and population std.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputStats {
    pub n_steps: usize,
    pub n_features: usize,
    /// Indexed `step · n_features + coefficient`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl OutputStats {
    pub fn fit(y: &Sequences) -> Result<Self> {
        let l = y.sample_len();
        let n = y.n_samples as f64;
        let mut mean = vec![0.0; l];
        for s in 0..y.n_samples {
            for (m, v) in mean.iter_mut().zip(y.sample(s)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; l];
        for s in 0..y.n_samples {
            for ((q, v), m) in var.iter_mut().zip(y.sample(s)).zip(&mean) {
                *q += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|q| (q / n).sqrt()).collect();
        for (i, sd) in std.iter().enumerate() {
            if !(*sd > STD_FLOOR) {
                return Err(Error::DegenerateOutput {
                    coefficient: i % y.n_features,
                    step: i / y.n_features,
                    std: *sd,
                });
            }
        }
        Ok(Self { n_steps: y.n_steps, n_features: y.n_features, mean, std })
    }

    pub fn standardize(&self, y: &Sequences) -> Sequences {
        let l = self.mean.len();
        let data = y.data.iter().enumerate().map(|(i, v)| (v - self.mean[i % l]) / self.std[i % l]).collect();
        Sequences { data, ..*y }
    }

    pub fn destandardize(&self, y: &Sequences) -> Sequences {
        let l = self.mean.len();
        let data = y.data.iter().enumerate().map(|(i, v)| self.mean[i % l] + v * self.std[i % l]).collect();
        Sequences { data, ..*y }
    }

    /// De-standardizes one sample's first `steps` rows in place.
    pub fn destandardize_sample(&self, y: &mut [f64]) {
        for (i, v) in y.iter_mut().enumerate() {
            *v = self.mean[i] + *v * self.std[i];
        }
    }

    /// Statistics restricted to a contiguous block of coefficients.
    pub fn slice_features(&self, range: std::ops::Range<usize>) -> Self {
        let pick = |v: &[f64]| {
            (0..self.n_steps).flat_map(|k| v[k * self.n_features + range.start..k * self.n_features + range.end].to_vec()).collect()
        };
        Self { n_steps: self.n_steps, n_features: range.len(), mean: pick(&self.mean), std: pick(&self.std) }
    }
}

/// Sample indices of the training and validation partitions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Seeded random 80/20 partition of `n` samples (training size rounded).
pub fn split_dataset(n: usize, seed: u64) -> Result<Split> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 samples to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((0.8 * n as f64).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n_train);
    Ok(Split { train: idx, val })
}

/// Raw inputs and reduced outputs with training-partition statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Load parameters, `samples × steps × n_μ`.
    pub inputs: Sequences,
    /// Composite reduced coefficients, `samples × steps × N_n`.
    pub outputs: Sequences,
    pub split: Split,
    pub input_stats: InputStats,
    pub output_stats: OutputStats,
}

impl Dataset {
    pub fn new(inputs: Sequences, outputs: Sequences, split: Split) -> Result<Self> {
        if inputs.n_samples != outputs.n_samples || inputs.n_steps != outputs.n_steps {
            return Err(Error::Shape("inputs and outputs disagree on samples or steps".into()));
        }
        let input_stats = InputStats::fit(&inputs.select(&split.train))?;
        let output_stats = OutputStats::fit(&outputs.select(&split.train))?;
        Ok(Self { inputs, outputs, split, input_stats, output_stats })
    }

    /// Normalized inputs and standardized outputs of a partition.
    pub fn prepared(&self, indices: &[usize]) -> (Sequences, Sequences) {
        (
            self.input_stats.normalize(&self.inputs.select(indices)),
            self.output_stats.standardize(&self.outputs.select(indices)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::NodalFields;

    fn history(n_nodes: usize, steps: usize, offset: f64) -> FieldHistory {
        let mut h = FieldHistory::new(n_nodes);
        for k in 0..steps {
            let mut f = NodalFields::zeros(n_nodes);
            for (i, v) in f.values[FieldId::VonMises.index()].iter_mut().enumerate() {
                *v = offset + 100.0 * k as f64 + i as f64;
            }
            h.push(f);
        }
        h
    }

    #[test]
    fn snapshot_columns_are_sample_then_step() {
        let hs = [history(3, 10, 0.0), history(3, 10, 1e4)];
        let s = assemble_snapshots(&hs, FieldId::VonMises).unwrap();
        assert_eq!(s.matrix.shape(), (3, 20));
        for sample in 0..2 {
            for k in 0..10 {
                for i in 0..3 {
                    let expected = 1e4 * sample as f64 + 100.0 * k as f64 + i as f64;
                    assert_eq!(s.matrix.get(i, sample * 10 + k), expected);
                }
            }
        }
    }

    #[test]
    fn zero_history_gives_zero_matrix() {
        let mut h = FieldHistory::new(4);
        h.push(NodalFields::zeros(4));
        let s = assemble_snapshots(&[h], FieldId::PlasticStrain).unwrap();
        assert_eq!(s.matrix.shape(), (24, 1));
        assert!(s.matrix.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mixed_meshes_are_rejected() {
        assert!(assemble_snapshots(&[history(3, 2, 0.0), history(4, 2, 0.0)], FieldId::VonMises).is_err());
        assert!(assemble_snapshots(&[], FieldId::VonMises).is_err());
    }

    #[test]
    fn min_max_maps_to_unit_interval() {
        let x = Sequences::from_vec(1, 3, 1, vec![-3.5, 0.0, 3.5]).unwrap();
        let st = InputStats::fit(&x).unwrap();
        let n = st.normalize(&x);
        assert_eq!(n.data, vec![0.0, 0.5, 1.0]);
        let back = st.denormalize(&n);
        for (a, b) in back.data.iter().zip(&x.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_feature_is_named() {
        let x = Sequences::from_vec(2, 1, 2, vec![0.0, 5.0, 1.0, 5.0]).unwrap();
        assert!(matches!(InputStats::fit(&x), Err(Error::ConstantFeature { feature: 1 })));
    }

    #[test]
    fn out_of_range_inputs_are_not_clipped() {
        let st = InputStats { min: vec![0.0], max: vec![1.0] };
        let x = Sequences::from_vec(1, 1, 1, vec![2.0]).unwrap();
        assert_eq!(st.normalize(&x).data, vec![2.0]);
    }

    #[test]
    fn standardized_train_set_has_zero_mean_unit_std() {
        let data: Vec<f64> = (0..5 * 3 * 2).map(|i| ((i * 7919) % 31) as f64 * 0.37 - 2.0).collect();
        let y = Sequences::from_vec(5, 3, 2, data).unwrap();
        let st = OutputStats::fit(&y).unwrap();
        let z = st.standardize(&y);
        let again = OutputStats::fit(&z).unwrap();
        for (m, s) in again.mean.iter().zip(&again.std) {
            assert!(m.abs() < 1e-10 && (s - 1.0).abs() < 1e-10);
        }
        let back = st.destandardize(&z);
        for (a, b) in back.data.iter().zip(&y.data) {
            assert!((a - b).abs() < 1e-10);
        }
        let mean_row = Sequences::from_vec(1, 3, 2, st.mean.clone()).unwrap();
        assert!(st.standardize(&mean_row).data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_coefficient_is_degenerate() {
        let y = Sequences::from_vec(3, 1, 2, vec![1.0, 4.0, 2.0, 4.0, 3.0, 4.0]).unwrap();
        assert!(matches!(OutputStats::fit(&y), Err(Error::DegenerateOutput { coefficient: 1, step: 0, .. })));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split_dataset(300, 7).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (240, 60));
        assert_eq!(s, split_dataset(300, 7).unwrap());
        let t = split_dataset(10, 1).unwrap();
        assert_eq!((t.train.len(), t.val.len()), (8, 2));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort();
        assert_eq!(all, (0..300).collect::<Vec<_>>());
        assert!(split_dataset(1, 0).is_err());
    }

    #[test]
    fn stats_come_from_training_partition_only() {
        let x = Sequences::from_vec(4, 1, 1, vec![0.0, 1.0, 2.0, 100.0]).unwrap();
        let y = Sequences::from_vec(4, 1, 1, vec![0.0, 2.0, 4.0, -50.0]).unwrap();
        let d = Dataset::new(x, y, Split { train: vec![0, 1, 2], val: vec![3] }).unwrap();
        assert_eq!((d.input_stats.min[0], d.input_stats.max[0]), (0.0, 2.0));
        assert_eq!(d.output_stats.mean[0], 2.0);
    }

    #[test]
    fn coefficient_round_trip() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 10 + j) as f64);
        let s = Sequences::from_coefficients(&a, 2, 2).unwrap();
        assert_eq!(s.get(1, 0, 2), 22.0);
        assert_eq!(s.to_coefficients(), a);
    }

    #[test]
    fn feature_concat_and_slice_invert() {
        let a = Sequences::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Sequences::from_vec(2, 2, 2, (10..18).map(f64::from).collect()).unwrap();
        let c = Sequences::concat_features(&[&a, &b]).unwrap();
        assert_eq!(c.n_features, 3);
        assert_eq!(c.slice_features(0..1), a);
        assert_eq!(c.slice_features(1..3), b);
    }
}
