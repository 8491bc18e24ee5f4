//! Proper orthogonal decomposition of snapshot matrices.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::{svd, svd_scratch, ComputeSvdVectors};
use faer::{Mat, Par};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FieldId;
use crate::linalg::Matrix;
use crate::metrics::ZERO_MAX_GUARD;

/// Default truncation threshold on `e_RMSE%`.
pub const DEFAULT_THRESHOLD_PCT: f64 = 1.0;

/// Subtracts the mean column. Returns `(S', s̄)`.
pub fn center(s: &Matrix) -> (Matrix, Vec<f64>) {
    let (m, n) = s.shape();
    let mut mean = vec![0.0; m];
    let mut out = s.clone();
    if n == 0 {
        return (out, mean);
    }
    for i in 0..m {
        let row = s.row(i);
        let mu = row.iter().sum::<f64>() / n as f64;
        mean[i] = mu;
        for j in 0..n {
            out.set(i, j, row[j] - mu);
        }
    }
    (out, mean)
}

/// Thin SVD `S' = Φ Π Ψᵀ`.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    /// `m × r`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, length `r = min(m, n)`.
    pub singular_values: Vec<f64>,
    /// `n × r`.
    pub v: Matrix,
}

/// Sequential (bit-reproducible) thin SVD.
pub fn svd_centered(s: &Matrix) -> Result<ThinSvd> {
    let (m, n) = s.shape();
    if s.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Svd("matrix has non-finite entries".into()));
    }
    let r = m.min(n);
    let a = Mat::<f64>::from_fn(m, n, |i, j| s.get(i, j));
    let mut u = Mat::<f64>::zeros(m, r);
    let mut v = Mat::<f64>::zeros(n, r);
    let mut d = faer::diag::Diag::<f64>::zeros(r);
    if r > 0 {
        let par = Par::Seq;
        let req = svd_scratch::<f64>(m, n, ComputeSvdVectors::Thin, ComputeSvdVectors::Thin, par, Default::default());
        let mut mem = MemBuffer::new(req);
        svd(
            a.as_ref(),
            d.as_mut(),
            Some(u.as_mut()),
            Some(v.as_mut()),
            par,
            MemStack::new(&mut mem),
            Default::default(),
        )
        .map_err(|e| Error::Svd(format!("{e:?}")))?;
    }
    let sv: Vec<f64> = (0..r).map(|k| d[k]).collect();
    Ok(ThinSvd {
        u: Matrix::from_fn(m, r, |i, k| u[(i, k)]),
        singular_values: sv,
        v: Matrix::from_fn(n, r, |j, k| v[(j, k)]),
    })
}

/// Max-normalized RMSE over rows of each column, averaged over columns, in
/// percent. An identically-zero column of `s` is normalized by the guarded
/// max over all of `s` instead.
pub fn rmse_percent(s: &Matrix, approx: &Matrix) -> Result<f64> {
    if s.shape() != approx.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", s.shape(), approx.shape())));
    }
    let (m, n) = s.shape();
    let mut sq = vec![0.0; n];
    let mut mx = vec![0.0f64; n];
    for i in 0..m {
        for (j, (a, b)) in s.row(i).iter().zip(approx.row(i)).enumerate() {
            sq[j] += (a - b) * (a - b);
            mx[j] = mx[j].max(a.abs());
        }
    }
    Ok(column_average(&sq, &mx, m))
}

fn column_average(sq: &[f64], mx: &[f64], m: usize) -> f64 {
    let n = sq.len();
    if n == 0 || m == 0 {
        return 0.0;
    }
    let fallback = mx.iter().fold(0.0f64, |a, b| a.max(*b)).max(ZERO_MAX_GUARD);
    let total: f64 = sq
        .iter()
        .zip(mx)
        .map(|(q, &x)| (q / m as f64).sqrt() / if x > 0.0 { x } else { fallback })
        .sum();
    100.0 * total / n as f64
}

/// Truncated modes, mean and spectrum of one field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PodBasis {
    pub field: FieldId,
    /// `N_h × n`.
    pub modes: Matrix,
    pub mean: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub threshold_pct: f64,
    /// `e_RMSE%` of the selected rank on the snapshots it was built from.
    pub rmse_pct: f64,
}

impl PodBasis {
    pub fn rank(&self) -> usize {
        self.modes.cols()
    }

    pub fn n_dofs(&self) -> usize {
        self.modes.rows()
    }

    /// `A_n = Φₙᵀ (S − s̄)`.
    pub fn project(&self, s: &Matrix) -> Result<ReducedCoefficients> {
        if s.rows() != self.n_dofs() {
            return Err(Error::Shape(format!("{} rows, basis has {}", s.rows(), self.n_dofs())));
        }
        let mut c = s.clone();
        for i in 0..c.rows() {
            let mu = self.mean[i];
            for j in 0..c.cols() {
                c.set(i, j, s.get(i, j) - mu);
            }
        }
        Ok(ReducedCoefficients { field: self.field, coefficients: self.modes.t_matmul(&c)? })
    }

    /// `S̃ = Φₙ A_n + s̄`.
    pub fn reconstruct(&self, a: &Matrix) -> Result<Matrix> {
        if a.rows() != self.rank() {
            return Err(Error::Shape(format!("{} coefficient rows, basis rank {}", a.rows(), self.rank())));
        }
        let mut s = self.modes.matmul(a)?;
        for i in 0..s.rows() {
            let mu = self.mean[i];
            for j in 0..s.cols() {
                s.set(i, j, s.get(i, j) + mu);
            }
        }
        Ok(s)
    }

    /// Reconstructs a single snapshot from `n` coefficients into `out`.
    pub fn reconstruct_into(&self, a: &[f64], out: &mut [f64]) {
        let n = self.rank();
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.modes.row(i);
            let mut acc = self.mean[i];
            for k in 0..n {
                acc += row[k] * a[k];
            }
            *o = acc;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedCoefficients {
    pub field: FieldId,
    /// `n × N_s`.
    pub coefficients: Matrix,
}

/// Smallest rank whose reconstruction of `s` has `e_RMSE% < threshold_pct`.
///
/// The residual `S' − Φₙ Φₙᵀ S'` is updated one rank-one term at a time from a
/// single SVD. If no rank reaches the threshold, the full rank is kept.
pub fn select_rank(s: &Matrix, field: FieldId, threshold_pct: f64) -> Result<PodBasis> {
    if !(threshold_pct > 0.0) {
        return Err(Error::Config(format!("threshold must be positive, got {threshold_pct}")));
    }
    let (m, ncol) = s.shape();
    if m == 0 || ncol == 0 {
        return Err(Error::Shape("empty snapshot matrix".into()));
    }
    let (centered, mean) = center(s);
    let dec = svd_centered(&centered)?;
    let mx: Vec<f64> = (0..ncol).map(|j| (0..m).fold(0.0f64, |a, i| a.max(s.get(i, j).abs()))).collect();

    let mut resid = centered;
    let r = dec.singular_values.len();
    let mut sq = vec![0.0; ncol];
    let mut chosen = r;
    let mut err = f64::INFINITY;
    for n in 1..=r {
        let pi = dec.singular_values[n - 1];
        let k = n - 1;
        sq.iter_mut().for_each(|q| *q = 0.0);
        for i in 0..m {
            let phi = dec.u.get(i, k) * pi;
            let row = &mut resid.as_mut_slice()[i * ncol..(i + 1) * ncol];
            for (j, x) in row.iter_mut().enumerate() {
                *x -= phi * dec.v.get(j, k);
                sq[j] += *x * *x;
            }
        }
        err = column_average(&sq, &mx, m);
        if err < threshold_pct {
            chosen = n;
            break;
        }
    }
    let modes = Matrix::from_fn(m, chosen, |i, k| dec.u.get(i, k));
    Ok(PodBasis { field, modes, mean, singular_values: dec.singular_values, threshold_pct, rmse_pct: err })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        move || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    #[test]
    fn centering_cases() {
        let (z, m) = center(&Matrix::zeros(3, 4));
        assert!(m.iter().all(|v| *v == 0.0) && z.max_abs() == 0.0);

        let c = [1.0, -2.0, 5.0];
        let s = Matrix::from_fn(3, 4, |i, _| c[i]);
        let (z, m) = center(&s);
        assert_eq!(m, c);
        assert_eq!(z.max_abs(), 0.0);

        let v = [1.0, 2.0, -3.0];
        let s = Matrix::from_fn(3, 2, |i, j| if j == 0 { v[i] } else { -v[i] });
        let (z, m) = center(&s);
        assert!(m.iter().all(|x| *x == 0.0));
        assert_eq!(z, s);
    }

    #[test]
    fn rank_one_singular_values() {
        let u = [1.0, 2.0, 2.0];
        let v = [3.0, 0.0, 4.0, 0.0];
        let s = Matrix::from_fn(3, 4, |i, j| u[i] * v[j]);
        let d = svd_centered(&s).unwrap();
        assert!((d.singular_values[0] - 15.0).abs() < 1e-12);
        assert!(d.singular_values[1].abs() < 1e-12);
    }

    #[test]
    fn diagonal_singular_values_are_sorted_abs() {
        let diag = [2.0, -5.0, 0.5];
        let s = Matrix::from_fn(3, 3, |i, j| if i == j { diag[i] } else { 0.0 });
        let d = svd_centered(&s).unwrap();
        for (a, b) in d.singular_values.iter().zip([5.0, 2.0, 0.5]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn frobenius_identity_and_reconstruction() {
        let mut r = lcg(5);
        let s = Matrix::from_fn(50, 30, |_, _| r());
        let d = svd_centered(&s).unwrap();
        let norm2: f64 = d.singular_values.iter().map(|p| p * p).sum();
        assert!((norm2.sqrt() - s.frobenius_norm()).abs() < 1e-10 * s.frobenius_norm());
        let us = Matrix::from_fn(50, 30, |i, k| d.u.get(i, k) * d.singular_values[k]);
        let rec = us.matmul(&d.v.transpose()).unwrap();
        let diff = Matrix::from_fn(50, 30, |i, j| rec.get(i, j) - s.get(i, j));
        assert!(diff.frobenius_norm() <= 1e-8 * s.frobenius_norm());
    }

    #[test]
    fn rmse_percent_hand_value() {
        let s = Matrix::from_vec(2, 1, vec![2.0, 0.0]).unwrap();
        let z = Matrix::zeros(2, 1);
        let e = rmse_percent(&s, &z).unwrap();
        assert!((e - 100.0 * 0.5 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(rmse_percent(&s, &s).unwrap(), 0.0);
        let s2 = Matrix::from_vec(2, 1, vec![4.0, 0.0]).unwrap();
        assert!((rmse_percent(&s2, &z).unwrap() - e).abs() < 1e-12);
    }

    #[test]
    fn zero_column_uses_field_max() {
        let s = Matrix::from_vec(2, 2, vec![4.0, 0.0, 0.0, 0.0]).unwrap();
        let approx = Matrix::from_vec(2, 2, vec![4.0, 1.0, 0.0, 1.0]).unwrap();
        // column 1: rmse 1, normalized by the global max 4
        let e = rmse_percent(&s, &approx).unwrap();
        assert!((e - 100.0 * 0.5 * 0.25).abs() < 1e-12);
        let z = Matrix::zeros(1, 1);
        let one = Matrix::from_vec(1, 1, vec![1e-10]).unwrap();
        assert!((rmse_percent(&z, &one).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_rank_two_is_found() {
        let mut r = lcg(11);
        let a: Vec<f64> = (0..40).map(|_| r()).collect();
        let b: Vec<f64> = (0..40).map(|_| r()).collect();
        let s = Matrix::from_fn(40, 25, |i, j| {
            3.0 + 5.0 * a[i] * (j as f64 * 0.3).sin() + 0.7 * b[i] * (j as f64 * 1.1).cos()
        });
        let basis = select_rank(&s, FieldId::VonMises, 1e-6).unwrap();
        assert_eq!(basis.rank(), 2);
        let a = basis.project(&s).unwrap();
        let rec = basis.reconstruct(&a.coefficients).unwrap();
        assert!(rmse_percent(&s, &rec).unwrap() < 1e-6);
    }

    #[test]
    fn full_rank_round_trip_and_zero_coefficients() {
        let mut r = lcg(2);
        let s = Matrix::from_fn(12, 8, |_, _| r());
        let b = select_rank(&s, FieldId::Displacement, 1e-30).unwrap();
        assert_eq!(b.rank(), 8);
        let rec = b.reconstruct(&b.project(&s).unwrap().coefficients).unwrap();
        let diff = Matrix::from_fn(12, 8, |i, j| rec.get(i, j) - s.get(i, j));
        assert!(diff.frobenius_norm() <= 1e-8 * s.frobenius_norm());

        let zero = b.reconstruct(&Matrix::zeros(8, 3)).unwrap();
        for j in 0..3 {
            assert_eq!(zero.column(j), b.mean);
        }
    }

    #[test]
    fn bad_threshold_rejected() {
        assert!(select_rank(&Matrix::zeros(2, 2), FieldId::Displacement, 0.0).is_err());
    }
}
