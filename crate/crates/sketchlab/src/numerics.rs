//! Dense real linear algebra used by the attack and the samplers.
//!
//! Only the few kernels the rest of the crate needs: orthogonal residuals,
//! the top right singular vector of a tall matrix, and row orthonormalization
//! with the change-of-basis that produced it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Residual norms at or below this (relative to the input norm) are degenerate.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;
/// Pivots below this fraction of the Frobenius norm mark a rank-deficient row set.
pub const PIVOT_TOLERANCE: f64 = 1e-10;
/// Allowed deviation from orthonormality for [`OrthonormalBasis`].
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-10;
/// Relative Rayleigh-quotient change that stops power iteration.
pub const RAYLEIGH_STOP: f64 = 1e-12;
/// Relative Rayleigh-quotient change above which an exhausted iteration is an error.
pub const RAYLEIGH_FAIL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("residual norm {norm:e} is below tolerance; vector lies in the span of the basis")]
    DegenerateResidual { norm: f64 },
    #[error("power iteration did not converge after {iterations} iterations (relative change {relative_change:e})")]
    NoConvergence { iterations: usize, relative_change: f64 },
    #[error("row {row} is linearly dependent on earlier rows (pivot {pivot:e})")]
    RankDeficient { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty matrix")]
    Empty,
    #[error("vectors are not orthonormal (deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += c * x`
pub fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

fn scale(v: &mut [f64], c: f64) {
    v.iter_mut().for_each(|x| *x *= c);
}

/// Row-major dense real matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NumericsError::DimensionMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(RealMatrix { rows: rows.len(), cols, data })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(RealMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn transpose(&self) -> RealMatrix {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            axpy(x[i], self.row(i), &mut out);
        }
        out
    }

    pub fn matmul(&self, other: &RealMatrix) -> Result<RealMatrix, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a != 0.0 {
                    axpy(a, other.row(k), dst);
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ self`, the column Gram matrix.
    pub fn gram(&self) -> RealMatrix {
        let c = self.cols;
        let mut g = Self::zeros(c, c);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..c {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                let dst = &mut g.data[a * c..a * c + c];
                for b in a..c {
                    dst[b] += ra * r[b];
                }
            }
        }
        for a in 0..c {
            for b in 0..a {
                g.data[a * c + b] = g.data[b * c + a];
            }
        }
        g
    }
}

impl TryFrom<Vec<Vec<f64>>> for RealMatrix {
    type Error = NumericsError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        RealMatrix::from_rows(&rows)
    }
}

impl From<RealMatrix> for Vec<Vec<f64>> {
    fn from(m: RealMatrix) -> Self {
        m.to_rows()
    }
}

/// Orthonormal vectors spanning a subspace of `R^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthonormalBasis {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl OrthonormalBasis {
    pub fn empty(dim: usize) -> Self {
        OrthonormalBasis { dim, vectors: Vec::new() }
    }

    /// Wraps vectors that are already orthonormal, checking the invariant.
    pub fn new(dim: usize, vectors: Vec<Vec<f64>>) -> Result<Self, NumericsError> {
        let mut worst = 0.0f64;
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(NumericsError::DimensionMismatch { expected: dim, got: v.len() });
            }
            for (j, w) in vectors[..=i].iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(v, w) - target).abs());
            }
        }
        if worst > ORTHONORMAL_TOLERANCE {
            return Err(NumericsError::NotOrthonormal { deviation: worst });
        }
        Ok(OrthonormalBasis { dim, vectors })
    }

    /// Orthonormal basis for the span of linearly independent rows.
    pub fn from_rows(rows: &RealMatrix) -> Result<Self, NumericsError> {
        let (q, _) = orthonormalize_rows(rows)?;
        Ok(OrthonormalBasis { dim: rows.cols(), vectors: q.to_rows() })
    }

    pub fn ambient_dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Appends the normalized residual of `v`, returning it.
    pub fn extend_with(&mut self, v: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let r = gram_schmidt_residual(v, self)?;
        self.vectors.push(r.clone());
        Ok(r)
    }

    /// Orthogonal projection of `x` onto the subspace.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for b in &self.vectors {
            axpy(dot(b, x), b, &mut out);
        }
        out
    }

    /// Projection of `x` onto the orthogonal complement, in place.
    pub fn project_out(&self, x: &mut [f64]) {
        for b in &self.vectors {
            let c = dot(b, x);
            axpy(-c, b, x);
        }
    }
}

/// Normalized component of `v` orthogonal to `basis`.
///
/// Uses two passes of modified Gram-Schmidt so the result stays orthogonal
/// to working precision even when `v` is nearly in the span.
pub fn gram_schmidt_residual(v: &[f64], basis: &OrthonormalBasis) -> Result<Vec<f64>, NumericsError> {
    if v.len() != basis.ambient_dim() {
        return Err(NumericsError::DimensionMismatch { expected: basis.ambient_dim(), got: v.len() });
    }
    let scale_in = norm(v);
    let mut r = v.to_vec();
    basis.project_out(&mut r);
    basis.project_out(&mut r);
    let n = norm(&r);
    if !(n > RESIDUAL_TOLERANCE * scale_in.max(f64::MIN_POSITIVE)) {
        return Err(NumericsError::DegenerateResidual { norm: n });
    }
    scale(&mut r, 1.0 / n);
    Ok(r)
}

/// Top right singular vector and singular value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopSingular {
    pub vector: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Top right singular vector of `m` by power iteration on `mᵀm`.
///
/// Starts from the normalized all-ones vector and squares the iteration
/// operator each step, so the effective power doubles. If the start is
/// annihilated (orthogonal to the dominant space) one seeded random restart
/// is made. Stops when the Rayleigh quotient changes by less than
/// [`RAYLEIGH_STOP`] relative, or after `10 * cols` steps.
pub fn top_right_singular_vector(m: &RealMatrix) -> Result<TopSingular, NumericsError> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(NumericsError::Empty);
    }
    top_eigenvector_psd(&m.gram())
}

/// Dominant eigenvector of a symmetric positive semidefinite matrix.
pub(crate) fn top_eigenvector_psd(g: &RealMatrix) -> Result<TopSingular, NumericsError> {
    let c = g.cols();
    let gnorm = g.frobenius_norm();
    let start = vec![1.0 / (c as f64).sqrt(); c];
    if gnorm == 0.0 {
        return Ok(TopSingular { vector: start, value: 0.0, iterations: 0 });
    }
    let max_iter = 10 * c;
    let mut op = g.clone();
    scale(&mut op.data, 1.0 / gnorm);
    let mut u = start;
    let mut restarted = false;
    let mut rayleigh = rayleigh_quotient(g, &u);
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut w = op.mul_vec(&u);
        let wn = norm(&w);
        if !(wn > 1e-13) {
            if restarted {
                break;
            }
            restarted = true;
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 ^ c as u64);
            u = (0..c).map(|_| rng.random::<f64>() - 0.5).collect();
            let un = norm(&u);
            scale(&mut u, 1.0 / un);
            op = g.clone();
            scale(&mut op.data, 1.0 / gnorm);
            rayleigh = rayleigh_quotient(g, &u);
            continue;
        }
        scale(&mut w, 1.0 / wn);
        u = w;
        let next = rayleigh_quotient(g, &u);
        change = (next - rayleigh).abs() / next.abs().max(f64::MIN_POSITIVE);
        rayleigh = next;
        if change < RAYLEIGH_STOP {
            break;
        }
        let sq = op.matmul(&op).expect("square operator");
        let sn = sq.frobenius_norm();
        if sn > 0.0 {
            op = sq;
            scale(&mut op.data, 1.0 / sn);
        }
    }
    if change > RAYLEIGH_FAIL {
        return Err(NumericsError::NoConvergence { iterations, relative_change: change });
    }
    Ok(TopSingular { vector: u, value: rayleigh.max(0.0).sqrt(), iterations })
}

fn rayleigh_quotient(g: &RealMatrix, u: &[f64]) -> f64 {
    dot(u, &g.mul_vec(u))
}

/// Orthonormalizes the rows of `a`.
///
/// Returns `(Q, R)` with `R · A = Q`, `Q` having orthonormal rows and `R`
/// lower triangular. Fails with [`NumericsError::RankDeficient`] when a
/// residual pivot falls below [`PIVOT_TOLERANCE`] times `‖A‖_F`.
pub fn orthonormalize_rows(a: &RealMatrix) -> Result<(RealMatrix, RealMatrix), NumericsError> {
    let (r, n) = (a.rows(), a.cols());
    if r == 0 || n == 0 {
        return Err(NumericsError::Empty);
    }
    let threshold = PIVOT_TOLERANCE * a.frobenius_norm();
    let mut q = RealMatrix::zeros(r, n);
    let mut coef = RealMatrix::zeros(r, r);
    for i in 0..r {
        let mut w = a.row(i).to_vec();
        let mut ci = vec![0.0; r];
        ci[i] = 1.0;
        for _pass in 0..2 {
            for j in 0..i {
                let c = dot(&w, q.row(j));
                axpy(-c, q.row(j), &mut w);
                let rj = coef.row(j).to_vec();
                axpy(-c, &rj, &mut ci);
            }
        }
        let pivot = norm(&w);
        if !(pivot > threshold) {
            return Err(NumericsError::RankDeficient { row: i, pivot });
        }
        scale(&mut w, 1.0 / pivot);
        scale(&mut ci, 1.0 / pivot);
        q.row_mut(i).copy_from_slice(&w);
        coef.row_mut(i).copy_from_slice(&ci);
    }
    Ok((q, coef))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Cyclic Jacobi eigen-decomposition of a symmetric matrix; returns
    /// (eigenvalues, eigenvectors as columns of a row-major matrix).
    fn jacobi_eigen(a: &RealMatrix) -> (Vec<f64>, RealMatrix) {
        let n = a.rows();
        let mut m = a.clone();
        let mut v = RealMatrix::identity(n);
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m.get(i, j).powi(2))
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m.get(p, q);
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (mkp, mkq) = (m.get(k, p), m.get(k, q));
                        m.set(k, p, c * mkp - s * mkq);
                        m.set(k, q, s * mkp + c * mkq);
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m.get(p, k), m.get(q, k));
                        m.set(p, k, c * mpk - s * mqk);
                        m.set(q, k, s * mpk + c * mqk);
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }
        ((0..n).map(|i| m.get(i, i)).collect(), v)
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> RealMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        RealMatrix::from_row_major(rows, cols, data).unwrap()
    }

    #[test]
    fn residual_against_axis() {
        let b = OrthonormalBasis::new(2, vec![vec![1.0, 0.0]]).unwrap();
        let r = gram_schmidt_residual(&[1.0, 1.0], &b).unwrap();
        assert_abs_diff_eq!(r[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[1], 1.0, epsilon = 1e-15);
        assert!(matches!(
            gram_schmidt_residual(&[2.0, 0.0], &b),
            Err(NumericsError::DegenerateResidual { .. })
        ));
    }

    #[test]
    fn residual_matches_qr_oracle() {
        // Oracle: Householder QR of [b1 b2 b3 v]; the fourth column of Q is the residual up to sign.
        let m = random_matrix(4, 8, 7);
        let (q, _) = orthonormalize_rows(&RealMatrix::from_rows(&m.to_rows()[..3]).unwrap()).unwrap();
        let basis = OrthonormalBasis::new(8, q.to_rows()).unwrap();
        let got = gram_schmidt_residual(m.row(3), &basis).unwrap();
        let a = nalgebra::DMatrix::from_fn(8, 4, |i, j| m.get(j, i));
        let qr = a.qr();
        let qm = qr.q();
        let col: Vec<f64> = (0..8).map(|i| qm[(i, 3)]).collect();
        let sign = dot(&col, &got).signum();
        for i in 0..8 {
            assert_abs_diff_eq!(got[i], sign * col[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn top_vector_of_diagonal() {
        let m = RealMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = top_right_singular_vector(&m).unwrap();
        assert_abs_diff_eq!(t.vector[0].abs(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(t.vector[1], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(t.value, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn top_vector_of_rank_one() {
        let m = RealMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let t = top_right_singular_vector(&m).unwrap();
        let want = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt()];
        let s = t.vector[0].signum();
        assert_abs_diff_eq!(s * t.vector[0], want[0], epsilon = 1e-10);
        assert_abs_diff_eq!(s * t.vector[1], want[1], epsilon = 1e-10);
        assert_abs_diff_eq!(t.value, 5.0, epsilon = 1e-10);
    }

    #[test]
    fn top_vector_restarts_when_start_is_annihilated() {
        let m = RealMatrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let t = top_right_singular_vector(&m).unwrap();
        assert_abs_diff_eq!(t.vector[0].abs(), 1.0 / 2f64.sqrt(), epsilon = 1e-10);
        assert_abs_diff_eq!(t.vector[0], -t.vector[1], epsilon = 1e-10);
        assert_abs_diff_eq!(t.value, 2f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn top_vector_matches_jacobi_oracle() {
        for seed in 0..20 {
            let m = random_matrix(5, 3, seed);
            let (vals, vecs) = jacobi_eigen(&m.gram());
            let k = (0..3).max_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap()).unwrap();
            let oracle: Vec<f64> = (0..3).map(|i| vecs.get(i, k)).collect();
            let t = top_right_singular_vector(&m).unwrap();
            assert!(dot(&oracle, &t.vector).abs() >= 1.0 - 1e-8, "seed {seed}");
            assert_abs_diff_eq!(t.value, vals[k].sqrt(), epsilon = 1e-9);
        }
    }

    #[test]
    fn orthonormalize_examples() {
        let a = RealMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let (q, r) = orthonormalize_rows(&a).unwrap();
        assert_eq!(q, RealMatrix::identity(2));
        assert_abs_diff_eq!(r.get(0, 0), 0.5);
        assert_abs_diff_eq!(r.get(1, 1), 1.0 / 3.0);

        let h = RealMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let (q, _) = orthonormalize_rows(&h).unwrap();
        let s = 1.0 / 2f64.sqrt();
        for (got, want) in q.as_slice().iter().zip([s, s, s, -s]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        let dep = RealMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(orthonormalize_rows(&dep), Err(NumericsError::RankDeficient { row: 1, .. })));
    }

    #[test]
    fn orthonormalize_random_wide() {
        let a = random_matrix(4, 16, 3);
        let (q, r) = orthonormalize_rows(&a).unwrap();
        let qqt = q.matmul(&q.transpose()).unwrap();
        let id = RealMatrix::identity(4);
        for (x, y) in qqt.as_slice().iter().zip(id.as_slice()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
        let ra = r.matmul(&a).unwrap();
        for (x, y) in ra.as_slice().iter().zip(q.as_slice()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn jacobi_oracle_sanity() {
        let a = RealMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (mut vals, _) = jacobi_eigen(&a);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(vals[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 3.0, epsilon = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-10.0f64..10.0, n)
        }

        proptest! {
            #[test]
            fn pythagorean_identity(a in vec_strategy(6), b in vec_strategy(6), v in vec_strategy(6)) {
                let rows = RealMatrix::from_rows(&[a, b]).unwrap();
                prop_assume!(orthonormalize_rows(&rows).is_ok());
                let basis = OrthonormalBasis::from_rows(&rows).unwrap();
                let mut perp = v.clone();
                basis.project_out(&mut perp);
                prop_assume!(norm(&perp) > 1e-6 * norm(&v).max(1e-12));
                let r = gram_schmidt_residual(&v, &basis).unwrap();
                let proj = basis.project(&v);
                let lhs = norm(&v).powi(2);
                let rhs = norm(&proj).powi(2) + dot(&v, &r).powi(2);
                prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.max(1.0));
                for b in basis.vectors() {
                    prop_assert!(dot(b, &r).abs() <= 1e-9);
                }
            }

            #[test]
            fn orthonormalize_is_idempotent(data in vec_strategy(12)) {
                let a = RealMatrix::from_row_major(3, 4, data).unwrap();
                prop_assume!(orthonormalize_rows(&a).is_ok());
                let (q, _) = orthonormalize_rows(&a).unwrap();
                let (q2, _) = orthonormalize_rows(&q).unwrap();
                for (x, y) in q.as_slice().iter().zip(q2.as_slice()) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
            }
        }
    }
}
