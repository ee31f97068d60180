//! Exact integer lattice tools.
//!
//! Echelon forms and LLL run over arbitrary-precision integers so kernel
//! computations never lose exactness. Rounding to a lattice works on a real
//! basis (the image of an integer lattice under a change of basis).

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{dot, RealMatrix};

/// LLL parameter `δ = 99/100`.
const DELTA_NUM: i64 = 99;
const DELTA_DEN: i64 = 100;
/// Largest lattice dimension for which rounding enumerates exactly.
pub const EXACT_CVP_MAX_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("matrix has full column rank; kernel is trivial")]
    FullRank,
    #[error("shortest kernel vector has sup-norm {found}, above the bound {bound}")]
    BoundViolated { found: i64, bound: f64 },
    #[error("sketch has {rows} rows but at most n/4 = {limit} are supported")]
    TooManyRows { rows: usize, limit: usize },
    #[error("only {short} kernel vectors are within length {bound}; need {needed} (next length {achieved})")]
    LengthBoundUnachieved { short: usize, needed: usize, bound: f64, achieved: f64 },
    #[error("input vectors are linearly dependent")]
    DependentInput,
    #[error("lattice is not full rank in its ambient space")]
    DegenerateLattice,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("integer entry does not fit in 64 bits")]
    Overflow,
    #[error("empty input")]
    Empty,
}

/// Row-major integer matrix, serialized as a list of rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<i64>>", into = "Vec<Vec<i64>>")]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntMatrix { rows, cols, data: vec![0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Self, LatticeError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(LatticeError::DimensionMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(IntMatrix { rows: rows.len(), cols, data })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<i64>) -> Result<Self, LatticeError> {
        if data.len() != rows * cols {
            return Err(LatticeError::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(IntMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[i64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: i64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<i64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> i64 {
        self.data.iter().map(|x| x.abs()).max().unwrap_or(0)
    }

    pub fn to_real(&self) -> RealMatrix {
        RealMatrix::from_row_major(self.rows, self.cols, self.data.iter().map(|&x| x as f64).collect())
            .expect("shape preserved")
    }

    /// Exact product `self · x`.
    pub fn mul_vec(&self, x: &[i64]) -> Result<Vec<i64>, LatticeError> {
        if x.len() != self.cols {
            return Err(LatticeError::DimensionMismatch { expected: self.cols, got: x.len() });
        }
        (0..self.rows)
            .map(|i| {
                let s: i128 = self.row(i).iter().zip(x).map(|(&a, &b)| a as i128 * b as i128).sum();
                i64::try_from(s).map_err(|_| LatticeError::Overflow)
            })
            .collect()
    }

    fn transpose_big(&self) -> Vec<Vec<BigInt>> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| BigInt::from(self.get(i, j))).collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<i64>>> for IntMatrix {
    type Error = LatticeError;
    fn try_from(rows: Vec<Vec<i64>>) -> Result<Self, Self::Error> {
        IntMatrix::from_rows(&rows)
    }
}

impl From<IntMatrix> for Vec<Vec<i64>> {
    fn from(m: IntMatrix) -> Self {
        m.to_rows()
    }
}

/// Integer basis of `ker(A) ∩ Z^n`, one vector per entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBasis {
    pub vectors: Vec<Vec<i64>>,
}

impl KernelBasis {
    /// Largest Euclidean length among the basis vectors.
    pub fn max_length(&self) -> f64 {
        self.vectors.iter().map(|v| l2(v)).fold(0.0, f64::max)
    }
}

pub fn l2(v: &[i64]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub fn linf(v: &[i64]) -> i64 {
    v.iter().map(|x| x.abs()).max().unwrap_or(0)
}

fn big_dot(a: &[BigInt], b: &[BigInt]) -> BigInt {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn to_i64_vec(v: &[BigInt]) -> Result<Vec<i64>, LatticeError> {
    v.iter().map(|x| x.to_i64().ok_or(LatticeError::Overflow)).collect()
}

fn to_big_vec(v: &[i64]) -> Vec<BigInt> {
    v.iter().map(|&x| BigInt::from(x)).collect()
}

/// Result of unimodular row reduction `U · M = E`.
struct Echelon {
    echelon: Vec<Vec<BigInt>>,
    transform: Vec<Vec<BigInt>>,
    rank: usize,
    pivots: Vec<usize>,
}

/// Row echelon form by Euclidean elimination, tracking the unimodular transform.
fn row_echelon(m: Vec<Vec<BigInt>>, cols: usize) -> Echelon {
    let rows = m.len();
    let mut e = m;
    let mut u: Vec<Vec<BigInt>> = (0..rows)
        .map(|i| (0..rows).map(|j| if i == j { BigInt::one() } else { BigInt::zero() }).collect())
        .collect();
    let mut p = 0;
    let mut pivots = Vec::new();
    for c in 0..cols {
        if p == rows {
            break;
        }
        loop {
            let best = (p..rows).filter(|&i| !e[i][c].is_zero()).min_by(|&a, &b| e[a][c].abs().cmp(&e[b][c].abs()));
            let Some(best) = best else { break };
            e.swap(p, best);
            u.swap(p, best);
            let mut done = true;
            for i in p + 1..rows {
                if e[i][c].is_zero() {
                    continue;
                }
                let q = e[i][c].div_floor(&e[p][c]);
                let (ep, up) = (e[p].clone(), u[p].clone());
                for (x, y) in e[i].iter_mut().zip(&ep) {
                    *x -= &q * y;
                }
                for (x, y) in u[i].iter_mut().zip(&up) {
                    *x -= &q * y;
                }
                if !e[i][c].is_zero() {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        if e[p][c].is_zero() {
            continue;
        }
        if e[p][c].is_negative() {
            e[p].iter_mut().for_each(|x| *x = -&*x);
            u[p].iter_mut().for_each(|x| *x = -&*x);
        }
        pivots.push(c);
        p += 1;
    }
    Echelon { echelon: e, transform: u, rank: p, pivots }
}

/// Canonical row Hermite normal form of the lattice spanned by `rows`.
///
/// Two bases generate the same lattice exactly when their forms are equal.
pub fn hermite_normal_form(rows: &[Vec<i64>]) -> Vec<Vec<BigInt>> {
    let cols = rows.first().map_or(0, Vec::len);
    let ech = row_echelon(rows.iter().map(|r| to_big_vec(r)).collect(), cols);
    let mut h: Vec<Vec<BigInt>> = ech.echelon.into_iter().take(ech.rank).collect();
    for (i, &c) in ech.pivots.iter().enumerate() {
        for k in 0..i {
            let q = h[k][c].div_floor(&h[i][c]);
            if !q.is_zero() {
                let hi = h[i].clone();
                for (x, y) in h[k].iter_mut().zip(&hi) {
                    *x -= &q * y;
                }
            }
        }
    }
    h
}

/// Integral LLL reduction (exact arithmetic, `δ = 0.99`) of the rows of `basis`.
fn lll_big(basis: Vec<Vec<BigInt>>) -> Result<Vec<Vec<BigInt>>, LatticeError> {
    let n = basis.len();
    if n == 0 {
        return Ok(basis);
    }
    // 1-based indexing follows the integral formulation; slot 0 is unused for b.
    let mut b: Vec<Vec<BigInt>> = std::iter::once(Vec::new()).chain(basis).collect();
    let mut d: Vec<BigInt> = vec![BigInt::zero(); n + 1];
    let mut lam: Vec<Vec<BigInt>> = vec![vec![BigInt::zero(); n + 1]; n + 1];
    d[0] = BigInt::one();
    d[1] = big_dot(&b[1], &b[1]);
    if d[1].is_zero() {
        return Err(LatticeError::DependentInput);
    }
    if n == 1 {
        return Ok(b.into_iter().skip(1).collect());
    }
    let (dn, dd) = (BigInt::from(DELTA_NUM), BigInt::from(DELTA_DEN));
    let mut k = 2;
    let mut kmax = 1;
    while k <= n {
        if k > kmax {
            kmax = k;
            for j in 1..=k {
                let mut u = big_dot(&b[k], &b[j]);
                for i in 1..j {
                    u = (&d[i] * &u - &lam[k][i] * &lam[j][i]) / &d[i - 1];
                }
                if j < k {
                    lam[k][j] = u;
                } else {
                    if u.is_zero() {
                        return Err(LatticeError::DependentInput);
                    }
                    d[k] = u;
                }
            }
        }
        reduce_pair(&mut b, &mut lam, &d, k, k - 1);
        let lhs = &dd * &d[k] * &d[k - 2];
        let rhs = &dn * &d[k - 1] * &d[k - 1] - &dd * &lam[k][k - 1] * &lam[k][k - 1];
        if lhs < rhs {
            b.swap(k, k - 1);
            for j in 1..k - 1 {
                let t = lam[k][j].clone();
                lam[k][j] = std::mem::replace(&mut lam[k - 1][j], t);
            }
            let l = lam[k][k - 1].clone();
            let bb = (&d[k - 2] * &d[k] + &l * &l) / &d[k - 1];
            for i in k + 1..=kmax {
                let t = lam[i][k].clone();
                lam[i][k] = (&d[k] * &lam[i][k - 1] - &l * &t) / &d[k - 1];
                lam[i][k - 1] = (&bb * &t + &l * &lam[i][k]) / &d[k];
            }
            d[k - 1] = bb;
            k = (k - 1).max(2);
        } else {
            for l in (1..k - 1).rev() {
                reduce_pair(&mut b, &mut lam, &d, k, l);
            }
            k += 1;
        }
    }
    Ok(b.into_iter().skip(1).collect())
}

fn reduce_pair(b: &mut [Vec<BigInt>], lam: &mut [Vec<BigInt>], d: &[BigInt], k: usize, l: usize) {
    let two_lam: BigInt = &lam[k][l] * 2;
    if two_lam.abs() <= d[l] {
        return;
    }
    // q = round(lam / d) = floor((2 lam + d) / (2 d))
    let q = (&two_lam + &d[l]).div_floor(&(&d[l] * 2));
    let bl = b[l].clone();
    for (x, y) in b[k].iter_mut().zip(&bl) {
        *x -= &q * y;
    }
    lam[k][l] -= &q * &d[l];
    for i in 1..l {
        let t = &q * &lam[l][i];
        lam[k][i] -= t;
    }
}

/// LLL-reduces (`δ = 0.99`) a set of linearly independent integer vectors.
pub fn reduce_basis(vectors: &[Vec<i64>]) -> Result<Vec<Vec<i64>>, LatticeError> {
    if vectors.is_empty() {
        return Err(LatticeError::Empty);
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(LatticeError::DimensionMismatch { expected: dim, got: v.len() });
    }
    lll_big(vectors.iter().map(|v| to_big_vec(v)).collect())?
        .iter()
        .map(|v| to_i64_vec(v))
        .collect()
}

fn sort_by_length(vs: &mut [Vec<i64>]) {
    vs.sort_by(|a, b| l2(a).partial_cmp(&l2(b)).expect("finite lengths"));
}

/// LLL-reduced integer basis of `ker(A) ∩ Z^n`, sorted by length.
pub fn integer_kernel_basis(a: &IntMatrix) -> Result<KernelBasis, LatticeError> {
    if a.cols() == 0 {
        return Err(LatticeError::Empty);
    }
    let ech = row_echelon(a.transpose_big(), a.rows());
    if ech.rank == a.cols() {
        return Err(LatticeError::FullRank);
    }
    let raw: Vec<Vec<BigInt>> = ech.transform.into_iter().skip(ech.rank).collect();
    let mut vectors: Vec<Vec<i64>> = lll_big(raw)?.iter().map(|v| to_i64_vec(v)).collect::<Result<_, _>>()?;
    sort_by_length(&mut vectors);
    for v in vectors.iter_mut() {
        canonical_sign(v);
    }
    Ok(KernelBasis { vectors })
}

/// Flips `v` so its first nonzero entry is positive.
fn canonical_sign(v: &mut [i64]) {
    if v.iter().find(|&&x| x != 0).is_some_and(|&x| x < 0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// The sup-norm bound `(n M)^{r / (n - r)}` for a short kernel vector.
pub fn siegel_bound(rows: usize, cols: usize, entry_bound: i64) -> f64 {
    let (r, n) = (rows as f64, cols as f64);
    ((n * entry_bound.max(1) as f64).ln() * r / (n - r)).exp()
}

/// A nonzero kernel vector meeting the sup-norm bound of [`siegel_bound`].
///
/// Reduces the kernel basis and returns its member with the smallest
/// sup-norm, also trying sums and differences of pairs of basis vectors.
pub fn short_kernel_vector(a: &IntMatrix, entry_bound: i64) -> Result<Vec<i64>, LatticeError> {
    let basis = integer_kernel_basis(a)?;
    let bound = siegel_bound(a.rows(), a.cols(), entry_bound);
    let mut best = basis.vectors[0].clone();
    let consider = |best: &mut Vec<i64>, v: Vec<i64>| {
        if v.iter().any(|&x| x != 0) && linf(&v) < linf(best) {
            *best = v;
        }
    };
    for v in &basis.vectors {
        consider(&mut best, v.clone());
    }
    if (linf(&best) as f64) > bound * (1.0 + 1e-12) {
        let vs = &basis.vectors;
        for i in 0..vs.len() {
            for j in 0..i {
                consider(&mut best, vs[i].iter().zip(&vs[j]).map(|(x, y)| x + y).collect());
                consider(&mut best, vs[i].iter().zip(&vs[j]).map(|(x, y)| x - y).collect());
            }
        }
    }
    let found = linf(&best);
    if (found as f64) > bound * (1.0 + 1e-12) {
        return Err(LatticeError::BoundViolated { found, bound });
    }
    canonical_sign(&mut best);
    Ok(best)
}

/// Output of [`preprocess_sketch`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedSketch {
    /// The original rows followed by any added rows.
    pub augmented: IntMatrix,
    /// Basis of the orthogonal lattice of `augmented`.
    pub kernel: KernelBasis,
    /// Number of rows appended to the input.
    pub added_rows: usize,
    /// The length guarantee `√n · M`.
    pub length_bound: f64,
    /// Largest length among the kernel basis vectors.
    pub achieved_length: f64,
    /// Largest absolute entry of `augmented`; reported, never clamped.
    pub augmented_entry_bound: i64,
}

/// Augments a sketch so its orthogonal lattice has a short basis.
///
/// Requires `r ≤ n/4`. The reduced kernel basis of `A` is split into vectors
/// of length at most `√n·M` and the rest. When some are long, rows spanning
/// the integer kernel of `[A; short vectors]` are appended, which leaves
/// exactly the short vectors as a basis of the new orthogonal lattice. The
/// result has at most `4r` rows and at least `n − 4r` kernel vectors.
pub fn preprocess_sketch(a: &IntMatrix, entry_bound: i64) -> Result<PreprocessedSketch, LatticeError> {
    let (r, n) = (a.rows(), a.cols());
    if r == 0 || n == 0 {
        return Err(LatticeError::Empty);
    }
    if 4 * r > n {
        return Err(LatticeError::TooManyRows { rows: r, limit: n / 4 });
    }
    let length_bound = (n as f64).sqrt() * entry_bound as f64;
    let kernel = integer_kernel_basis(a)?;
    let short: Vec<Vec<i64>> = kernel.vectors.iter().filter(|v| l2(v) <= length_bound * (1.0 + 1e-12)).cloned().collect();
    let needed = n - 4 * r;
    if short.len() == kernel.vectors.len() {
        let achieved_length = kernel.max_length();
        return Ok(PreprocessedSketch {
            augmented: a.clone(),
            kernel,
            added_rows: 0,
            length_bound,
            achieved_length,
            augmented_entry_bound: a.max_abs(),
        });
    }
    if short.len() < needed {
        let mut lengths: Vec<f64> = kernel.vectors.iter().map(|v| l2(v)).collect();
        lengths.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
        return Err(LatticeError::LengthBoundUnachieved {
            short: short.len(),
            needed,
            bound: length_bound,
            achieved: lengths[needed - 1],
        });
    }
    let mut stacked = a.to_rows();
    stacked.extend(short.iter().cloned());
    let extra = integer_kernel_basis(&IntMatrix::from_rows(&stacked)?)?;
    let mut rows = a.to_rows();
    rows.extend(extra.vectors.iter().cloned());
    let augmented = IntMatrix::from_rows(&rows)?;
    for v in &short {
        debug_assert!(augmented.mul_vec(v)?.iter().all(|&x| x == 0));
    }
    let kernel = KernelBasis { vectors: short };
    Ok(PreprocessedSketch {
        added_rows: extra.vectors.len(),
        augmented_entry_bound: augmented.max_abs(),
        achieved_length: kernel.max_length(),
        augmented,
        kernel,
        length_bound,
    })
}

/// Integer basis of the lattice `A · Z^n ⊂ Z^r`, LLL-reduced.
pub fn column_lattice_basis(a: &IntMatrix) -> Result<Vec<Vec<i64>>, LatticeError> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(LatticeError::Empty);
    }
    let ech = row_echelon(a.transpose_big(), a.rows());
    if ech.rank < a.rows() {
        return Err(LatticeError::DegenerateLattice);
    }
    let gens: Vec<Vec<BigInt>> = ech.echelon.into_iter().take(ech.rank).collect();
    lll_big(gens)?.iter().map(|v| to_i64_vec(v)).collect()
}

/// A lattice point with its integer coordinates in the rounder's basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticePoint {
    pub coefficients: Vec<i64>,
    pub point: Vec<f64>,
}

/// Rounds real vectors to a full-rank lattice in `R^r`.
#[derive(Clone, Debug)]
pub struct CellRounder {
    basis: Vec<Vec<f64>>,
    gso: Vec<Vec<f64>>,
    gso_sq: Vec<f64>,
    mu: Vec<Vec<f64>>,
    /// Rows map a point to its basis coordinates.
    inverse: RealMatrix,
}

impl CellRounder {
    /// Rounder for the lattice spanned by `vectors` (one basis vector each).
    /// The basis is LLL-reduced in floating point first.
    pub fn from_basis(vectors: Vec<Vec<f64>>) -> Result<Self, LatticeError> {
        let r = vectors.len();
        if r == 0 {
            return Err(LatticeError::Empty);
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != r) {
            return Err(LatticeError::DimensionMismatch { expected: r, got: v.len() });
        }
        let basis = lll_real(vectors)?;
        let (gso, gso_sq, mu) = gram_schmidt(&basis)?;
        let bt = nalgebra::DMatrix::from_fn(r, r, |i, j| basis[j][i]);
        let inv = bt.try_inverse().ok_or(LatticeError::DegenerateLattice)?;
        let inverse = RealMatrix::from_row_major(r, r, (0..r * r).map(|k| inv[(k / r, k % r)]).collect())
            .expect("square");
        Ok(CellRounder { basis, gso, gso_sq, mu, inverse })
    }

    /// Rounder for `A · Z^n` where `A` is an integer matrix of full row rank.
    pub fn for_integer_columns(a: &IntMatrix) -> Result<Self, LatticeError> {
        let basis = column_lattice_basis(a)?;
        Self::from_basis(basis.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect())
    }

    /// Rounder for `C · A · Z^n`, where `C` is an invertible change of basis
    /// (for example the map taking `A` to its orthonormalized rows).
    pub fn for_transformed_columns(a: &IntMatrix, change: &RealMatrix) -> Result<Self, LatticeError> {
        let basis = column_lattice_basis(a)?;
        let mapped = basis
            .iter()
            .map(|v| change.mul_vec(&v.iter().map(|&x| x as f64).collect::<Vec<_>>()))
            .collect();
        Self::from_basis(mapped)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    fn combine(&self, coefficients: Vec<i64>) -> LatticePoint {
        let mut point = vec![0.0; self.dim()];
        for (c, b) in coefficients.iter().zip(&self.basis) {
            crate::numerics::axpy(*c as f64, b, &mut point);
        }
        LatticePoint { coefficients, point }
    }

    /// The lattice point whose fundamental parallelepiped contains `y`.
    pub fn cell_point(&self, y: &[f64]) -> LatticePoint {
        let coords = self.inverse.mul_vec(y);
        self.combine(coords.iter().map(|c| c.floor() as i64).collect())
    }

    /// Babai nearest-plane coefficients.
    fn babai(&self, y: &[f64]) -> Vec<i64> {
        let r = self.dim();
        let mut t = y.to_vec();
        let mut coeffs = vec![0i64; r];
        for i in (0..r).rev() {
            let c = (dot(&t, &self.gso[i]) / self.gso_sq[i]).round();
            coeffs[i] = c as i64;
            crate::numerics::axpy(-c, &self.basis[i], &mut t);
        }
        coeffs
    }

    /// Closest lattice point to `y`.
    ///
    /// Exact (enumeration within the Babai radius) for dimension at most
    /// [`EXACT_CVP_MAX_DIM`]; otherwise Babai's point improved by a ±1 search
    /// over each coefficient.
    pub fn round_nearest(&self, y: &[f64]) -> LatticePoint {
        let start = self.babai(y);
        let dist = |c: &[i64]| -> f64 {
            let p = self.combine(c.to_vec()).point;
            p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()
        };
        let mut best = start.clone();
        let mut best_d = dist(&best);
        if self.dim() <= EXACT_CVP_MAX_DIM {
            let coords = self.gso_coords(y);
            let mut x = vec![0i64; self.dim()];
            self.enumerate(self.dim(), &coords, 0.0, &mut x, &mut best, &mut best_d);
        } else {
            let mut improved = true;
            while improved {
                improved = false;
                for i in 0..self.dim() {
                    for delta in [-1i64, 1] {
                        let mut c = best.clone();
                        c[i] += delta;
                        let d = dist(&c);
                        if d < best_d - 1e-12 {
                            best = c;
                            best_d = d;
                            improved = true;
                        }
                    }
                }
            }
        }
        self.combine(best)
    }

    fn gso_coords(&self, y: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|i| dot(y, &self.gso[i]) / self.gso_sq[i]).collect()
    }

    /// Depth-first enumeration over coefficients `x[level-1]`, `x[level-2]`, ...
    fn enumerate(&self, level: usize, t: &[f64], partial: f64, x: &mut [i64], best: &mut Vec<i64>, best_d: &mut f64) {
        if level == 0 {
            if partial < *best_d - 1e-12 {
                *best_d = partial;
                *best = x.to_vec();
            }
            return;
        }
        let i = level - 1;
        let center = t[i] - (i + 1..self.dim()).map(|j| x[j] as f64 * self.mu[j][i]).sum::<f64>();
        let room = (*best_d + 1e-9 - partial).max(0.0);
        let half = (room / self.gso_sq[i]).sqrt();
        let lo = (center - half).ceil() as i64;
        let hi = (center + half).floor() as i64;
        for xi in lo..=hi {
            let step = (center - xi as f64).powi(2) * self.gso_sq[i];
            if partial + step > *best_d + 1e-9 {
                continue;
            }
            x[i] = xi;
            self.enumerate(level - 1, t, partial + step, x, best, best_d);
        }
        x[i] = 0;
    }
}

fn gram_schmidt(basis: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>), LatticeError> {
    let r = basis.len();
    let mut gso: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut sq = Vec::with_capacity(r);
    let mut mu = vec![vec![0.0; r]; r];
    let scale = basis.iter().map(|v| dot(v, v)).fold(0.0, f64::max);
    for i in 0..r {
        let mut v = basis[i].clone();
        for j in 0..i {
            mu[i][j] = dot(&basis[i], &gso[j]) / sq[j];
            crate::numerics::axpy(-mu[i][j], &gso[j], &mut v);
        }
        let s = dot(&v, &v);
        if !(s > 1e-20 * scale) {
            return Err(LatticeError::DegenerateLattice);
        }
        gso.push(v);
        sq.push(s);
    }
    Ok((gso, sq, mu))
}

/// Floating-point LLL (`δ = 0.99`) for small real bases.
fn lll_real(mut b: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>, LatticeError> {
    let n = b.len();
    let delta = DELTA_NUM as f64 / DELTA_DEN as f64;
    let mut k = 1;
    let mut steps = 0usize;
    while k < n && steps < 10_000 {
        steps += 1;
        for j in (0..k).rev() {
            let (_, _, mu) = gram_schmidt(&b[..=k])?;
            let q = mu[k][j].round();
            if q != 0.0 {
                let bj = b[j].clone();
                crate::numerics::axpy(-q, &bj, &mut b[k]);
            }
        }
        let (_, sq, mu) = gram_schmidt(&b[..=k])?;
        if sq[k] >= (delta - mu[k][k - 1].powi(2)) * sq[k - 1] {
            k += 1;
        } else {
            b.swap(k, k - 1);
            k = (k - 1).max(1);
        }
    }
    gram_schmidt(&b)?;
    Ok(b)
}

/// Uniform sample `η = Σ u_i b_i`, `u ∈ [0,1)^r`, from the rounder's basis parallelepiped.
pub fn fundamental_cell_uniform<R: Rng + ?Sized>(rounder: &CellRounder, rng: &mut R) -> Vec<f64> {
    let mut eta = vec![0.0; rounder.dim()];
    for b in rounder.basis() {
        let u: f64 = rng.random();
        crate::numerics::axpy(u, b, &mut eta);
    }
    eta
}

/// Closest point of `A · Z^n` to `y`, as an integer vector in `Z^r`.
pub fn round_to_column_lattice(a: &IntMatrix, y: &[f64]) -> Result<Vec<i64>, LatticeError> {
    if y.len() != a.rows() {
        return Err(LatticeError::DimensionMismatch { expected: a.rows(), got: y.len() });
    }
    let rounder = CellRounder::for_integer_columns(a)?;
    Ok(rounder.round_nearest(y).point.iter().map(|x| x.round() as i64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[i64]]) -> IntMatrix {
        IntMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let k = integer_kernel_basis(&m(&[&[1, 0, 0], &[0, 1, 0]])).unwrap();
        assert_eq!(k.vectors, vec![vec![0, 0, 1]]);
        let k = integer_kernel_basis(&m(&[&[1, 1]])).unwrap();
        assert_eq!(k.vectors, vec![vec![1, -1]]);
        assert_eq!(integer_kernel_basis(&m(&[&[1, 0], &[0, 1]])), Err(LatticeError::FullRank));
    }

    #[test]
    fn kernel_of_single_row_generates_all_small_solutions() {
        let a = m(&[&[2, 3, 5]]);
        let k = integer_kernel_basis(&a).unwrap();
        assert_eq!(k.vectors.len(), 2);
        for v in &k.vectors {
            assert_eq!(a.mul_vec(v).unwrap(), vec![0]);
        }
        // Every kernel vector with entries in [-10, 10] is an integer combination.
        let h = hermite_normal_form(&k.vectors);
        for x in -10..=10i64 {
            for y in -10..=10i64 {
                for z in -10..=10i64 {
                    if 2 * x + 3 * y + 5 * z != 0 {
                        continue;
                    }
                    let mut rows = k.vectors.clone();
                    rows.push(vec![x, y, z]);
                    assert_eq!(hermite_normal_form(&rows), h, "({x},{y},{z})");
                }
            }
        }
    }

    #[test]
    fn short_kernel_examples() {
        let v = short_kernel_vector(&m(&[&[1, 1, 1]]), 1).unwrap();
        assert!(v.iter().all(|x| x.abs() <= 1) && v.iter().sum::<i64>() == 0 && v.iter().any(|&x| x != 0));
        assert_eq!(short_kernel_vector(&m(&[&[2, 3]]), 3).unwrap(), vec![3, -2]);
        assert_eq!(short_kernel_vector(&m(&[&[1, 0]]), 1).unwrap(), vec![0, 1]);
        assert_eq!(short_kernel_vector(&m(&[&[1, 0], &[0, 1]]), 1), Err(LatticeError::FullRank));
    }

    #[test]
    fn reduce_examples() {
        assert_eq!(reduce_basis(&[vec![1, 0], vec![5, 1]]).unwrap(), vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(reduce_basis(&[vec![1, 2], vec![2, 4]]), Err(LatticeError::DependentInput));
    }

    #[test]
    fn preprocess_examples() {
        let p = preprocess_sketch(&m(&[&[1, 1, 1, 1]]), 1).unwrap();
        assert_eq!(p.added_rows, 0);
        assert_eq!(p.kernel.vectors.len(), 3);
        assert!(p.kernel.vectors.iter().all(|v| (l2(v) - 2f64.sqrt()).abs() < 1e-12));
        assert!(p.length_bound >= 2.0 - 1e-12);

        let mut id = IntMatrix::zeros(2, 16);
        id.set(0, 0, 1);
        id.set(1, 1, 1);
        let p = preprocess_sketch(&id, 1).unwrap();
        assert_eq!(p.augmented, id);
        assert_eq!(p.kernel.vectors.len(), 14);
        assert!(p.kernel.vectors.iter().all(|v| l2(v) == 1.0));

        let wide = IntMatrix::zeros(5, 16);
        assert_eq!(preprocess_sketch(&wide, 1), Err(LatticeError::TooManyRows { rows: 5, limit: 4 }));
    }

    #[test]
    fn rounding_examples() {
        let id = m(&[&[1, 0], &[0, 1]]);
        assert_eq!(round_to_column_lattice(&id, &[0.6, -1.4]).unwrap(), vec![1, -1]);
        let two = m(&[&[2, 0], &[0, 2]]);
        assert_eq!(round_to_column_lattice(&two, &[0.9, 0.9]).unwrap(), vec![0, 0]);
        let flat = m(&[&[1, 2], &[2, 4]]);
        assert_eq!(round_to_column_lattice(&flat, &[0.0, 0.0]), Err(LatticeError::DegenerateLattice));
    }

    #[test]
    fn cell_point_floors_coordinates() {
        let r = CellRounder::from_basis(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(r.cell_point(&[0.6, -1.4]).coefficients, vec![0, -2]);
    }
}
