//! Sparse storage, symmetric factorization and eigensolvers.
//!
//! The graph operators are block-tridiagonal chains coupled through a small
//! set of vertex unknowns ordered last, so an unpivoted LDLᵀ only fills one
//! extra column per chain plus the vertex block. The same factorization gives
//! Sylvester inertia counts, which back both interval eigenvalue counting and
//! the completeness check of the shift-invert Lanczos solver.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Entry type of a [`CsrMatrix`]: `f64` or `Complex64`.
pub trait Scalar:
    Copy
    + Debug
    + Default
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Send
    + Sync
    + 'static
{
    fn conj(self) -> Self;
    fn modulus(self) -> f64;
    fn from_real(x: f64) -> Self;
    fn scale(self, s: f64) -> Self;
}

impl Scalar for f64 {
    fn conj(self) -> Self {
        self
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
}

impl Scalar for C64 {
    fn conj(self) -> Self {
        C64::conj(&self)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn from_real(x: f64) -> Self {
        C64::new(x, 0.0)
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
}

/// Compressed sparse row matrix with sorted column indices and no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// exact zeros kept (the pattern is structural).
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, T)>) -> Self {
        trips.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(trips.len());
        let mut values: Vec<T> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trips {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => T::default(),
        }
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.ncols,
                got: x.len(),
            });
        }
        Ok((0..self.nrows)
            .map(|i| {
                let mut acc = T::default();
                for (j, v) in self.row(i) {
                    acc += v * x[j];
                }
                acc
            })
            .collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.modulus()).fold(0.0, f64::max)
    }

    /// `max |A − A*| / max |A|` (zero for the zero matrix).
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for (i, j, v) in self.iter() {
            worst = worst.max((v - self.get(j, i).conj()).modulus());
        }
        worst / scale
    }

    pub fn map<U: Scalar>(&self, mut f: impl FnMut(usize, usize, T) -> U) -> CsrMatrix<U> {
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                values.push(f(i, self.indices[k], self.values[k]));
            }
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values,
        }
    }

    /// `A + s I` (adds diagonal entries where missing).
    pub fn shifted(&self, s: f64) -> Self {
        let mut trips: Vec<(usize, usize, T)> = self.iter().collect();
        trips.extend((0..self.nrows.min(self.ncols)).map(|i| (i, i, T::from_real(s))));
        CsrMatrix::from_triplets(self.nrows, self.ncols, trips)
    }
}

impl CsrMatrix<f64> {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            m[(i, j)] += v;
        }
        m
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unpivoted `LDLᵀ` factorization of a real symmetric sparse matrix.
#[derive(Debug, Clone)]
pub struct Ldlt {
    l: Vec<Vec<(usize, f64)>>,
    d: Vec<f64>,
    perturbed: usize,
}

impl Ldlt {
    /// Factors `A − shift·I` using the lower triangle of `A`.
    ///
    /// With `pivot_floor = Some(f)` pivots smaller than `f` in modulus are
    /// replaced by `−f` (the usual Sturm-count safeguard); otherwise such a
    /// pivot is reported as [`Error::Breakdown`] with `f = 1e−14·max|A|`.
    pub fn factor(a: &CsrMatrix<f64>, shift: f64, pivot_floor: Option<f64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        let scale = a.max_abs().max(shift.abs()).max(f64::MIN_POSITIVE);
        let mut diag = vec![-shift; n];
        let mut cols: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for (i, j, v) in a.iter() {
            if i == j {
                diag[i] += v;
            } else if i > j {
                *cols[j].entry(i).or_insert(0.0) += v;
            }
        }
        let mut l = Vec::with_capacity(n);
        let mut perturbed = 0;
        for k in 0..n {
            let mut dk = diag[k];
            match pivot_floor {
                Some(f) => {
                    if !(dk.abs() >= f) {
                        dk = -f;
                        perturbed += 1;
                    }
                }
                None => {
                    if !(dk.abs() > 1e-14 * scale) {
                        return Err(Error::Breakdown {
                            index: k,
                            pivot: dk.abs(),
                        });
                    }
                }
            }
            diag[k] = dk;
            let col: Vec<(usize, f64)> = std::mem::take(&mut cols[k]).into_iter().collect();
            for (a_idx, &(i, aik)) in col.iter().enumerate() {
                diag[i] -= aik * aik / dk;
                for &(j, ajk) in &col[..a_idx] {
                    // i > j since col is sorted
                    *cols[j].entry(i).or_insert(0.0) -= aik * ajk / dk;
                }
            }
            l.push(col.into_iter().map(|(i, v)| (i, v / dk)).collect());
        }
        Ok(Ldlt { l, d: diag, perturbed })
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Number of negative pivots, i.e. eigenvalues of `A` below the shift.
    pub fn negative_count(&self) -> usize {
        self.d.iter().filter(|&&x| x < 0.0).count()
    }

    /// Number of pivots replaced by the floor.
    pub fn perturbed(&self) -> usize {
        self.perturbed
    }

    /// Crude condition estimate `max|d| / min|d|`.
    pub fn condition_estimate(&self) -> f64 {
        let (lo, hi) = self.d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), x| {
            (lo.min(x.abs()), hi.max(x.abs()))
        });
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        for (k, col) in self.l.iter().enumerate() {
            let xk = x[k];
            for &(i, v) in col {
                x[i] -= v * xk;
            }
        }
        for (xi, di) in x.iter_mut().zip(&self.d) {
            *xi /= di;
        }
        for (k, col) in self.l.iter().enumerate().rev() {
            let mut s = x[k];
            for &(i, v) in col {
                s -= v * x[i];
            }
            x[k] = s;
        }
        x
    }
}

/// Number of eigenvalues of the symmetric matrix `a` in `[lo, hi)`.
pub fn count_in_interval(a: &CsrMatrix<f64>, lo: f64, hi: f64) -> Result<usize> {
    if !(lo < hi) {
        return Ok(0);
    }
    Ok(count_below(a, hi)?.saturating_sub(count_below(a, lo)?))
}

/// Number of eigenvalues strictly below `t` (Sylvester inertia).
pub fn count_below(a: &CsrMatrix<f64>, t: f64) -> Result<usize> {
    let floor = f64::EPSILON * a.max_abs().max(t.abs()).max(f64::MIN_POSITIVE);
    Ok(Ldlt::factor(a, t, Some(floor))?.negative_count())
}

/// Solves a symmetric (possibly indefinite) system: sparse `LDLᵀ` with one
/// step of iterative refinement, falling back to dense LU for moderate sizes
/// when the unpivoted factorization breaks down or loses accuracy.
pub fn solve_symmetric(a: &CsrMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    const DENSE_LIMIT: usize = 3000;
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let attempt = Ldlt::factor(a, 0.0, None).map(|f| {
        let mut x = f.solve(b);
        for _ in 0..2 {
            let ax = a.matvec(&x).expect("square");
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let dx = f.solve(&r);
            x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
        }
        (x, f.condition_estimate())
    });
    let sparse_err = match attempt {
        Ok((x, cond)) => {
            let ax = a.matvec(&x)?;
            let res = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt();
            if x.iter().all(|v| v.is_finite()) && res <= 1e-9 * bnorm {
                return Ok(x);
            }
            Error::SingularJacobian { condition: cond }
        }
        Err(e) => e,
    };
    if a.nrows() > DENSE_LIMIT {
        return Err(match sparse_err {
            Error::Breakdown { .. } => Error::SingularJacobian {
                condition: f64::INFINITY,
            },
            e => e,
        });
    }
    dense_solve(a, b)
}

/// Dense LU solve with a pivot-ratio condition estimate on failure.
pub fn dense_solve(a: &CsrMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let lu = a.to_dense().lu();
    let u = lu.u();
    let (lo, hi) = (0..u.nrows()).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
        let v = u[(i, i)].abs();
        (lo.min(v), hi.max(v))
    });
    let condition = if lo == 0.0 { f64::INFINITY } else { hi / lo };
    if !(condition < 1e15) {
        return Err(Error::SingularJacobian { condition });
    }
    let x = lu
        .solve(&DVector::from_column_slice(b))
        .ok_or(Error::SingularJacobian { condition })?;
    Ok(x.as_slice().to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// All eigenpairs of a small symmetric matrix, ascending.
pub fn dense_symmetric_eigen(a: &CsrMatrix<f64>) -> Vec<EigenPair> {
    let eig = SymmetricEigen::new(a.to_dense());
    let mut pairs: Vec<EigenPair> = (0..a.nrows())
        .map(|i| EigenPair {
            value: eig.eigenvalues[i],
            vector: eig.eigenvectors.column(i).iter().copied().collect(),
        })
        .collect();
    pairs.sort_by(|x, y| x.value.total_cmp(&y.value));
    pairs
}

/// Eigenvalues only, ascending.
pub fn dense_symmetric_eigenvalues(a: &CsrMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = a.to_dense().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Outcome of [`shift_invert_nearest`].
#[derive(Debug, Clone)]
pub struct LanczosOutcome {
    pub pairs: Vec<EigenPair>,
    pub iterations: usize,
}

/// Finds the `want` eigenpairs of `a` in `[lo, hi)` nearest to `sigma` by
/// shift-invert Lanczos with full reorthogonalization. Converged vectors are
/// locked and the process restarted until an inertia count confirms that no
/// eigenvalue (including repeated ones) closer to `sigma` has been missed.
pub fn shift_invert_nearest(
    a: &CsrMatrix<f64>,
    sigma: f64,
    want: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Result<LanczosOutcome> {
    const MAX_ROUNDS: usize = 40;
    let n = a.nrows();
    let available = count_in_interval(a, lo, hi)?;
    let want = want.min(available);
    if want == 0 {
        return Ok(LanczosOutcome {
            pairs: Vec::new(),
            iterations: 0,
        });
    }
    let scale = a.max_abs().max(1.0);
    let mut shift = sigma;
    let mut factor = None;
    for attempt in 0..6 {
        match Ldlt::factor(a, shift, None) {
            Ok(f) => {
                factor = Some(f);
                break;
            }
            Err(Error::Breakdown { .. }) => {
                shift = sigma + 1e-7 * scale * (attempt as f64 + 1.0) * if attempt % 2 == 0 { 1.0 } else { -1.0 };
            }
            Err(e) => return Err(e),
        }
    }
    let factor = factor.ok_or(Error::EigenNonConvergence {
        iterations: 0,
        converged: 0,
        wanted: want,
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut locked: Vec<EigenPair> = Vec::new();
    let mut mdim = (2 * want + 40).max(80);
    let mut iterations = 0;
    for _ in 0..MAX_ROUNDS {
        let room = n - locked.len();
        if room == 0 {
            break;
        }
        let m = mdim.min(room);
        let run = lanczos_run(&factor, &locked, m, &mut rng);
        iterations += run.alpha.len();
        let k = run.alpha.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = run.alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = run.beta[i];
                t[(i + 1, i)] = run.beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let theta_max = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let beta_last = run.beta.get(k - 1).copied().unwrap_or(0.0);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
        let mut new = 0;
        for &i in &order {
            let theta = eig.eigenvalues[i];
            let resid = (beta_last * eig.eigenvectors[(k - 1, i)]).abs();
            if theta == 0.0 || resid > 1e-11 * theta_max {
                continue;
            }
            let mut v = vec![0.0; n];
            for (j, q) in run.q.iter().enumerate() {
                let s = eig.eigenvectors[(j, i)];
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi += s * qi);
            }
            orthogonalize(&mut v, locked.iter().map(|p| p.vector.as_slice()));
            let nv = norm2(&v);
            if nv < 0.5 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            let pair = refine_pair(a, shift + 1.0 / theta, v)?;
            locked.push(pair);
            new += 1;
        }
        if let Some(result) = complete(a, &locked, sigma, want, lo, hi)? {
            return Ok(LanczosOutcome {
                pairs: result,
                iterations,
            });
        }
        if new == 0 {
            mdim = (mdim * 2).min(n);
        }
    }
    Err(Error::EigenNonConvergence {
        iterations,
        converged: locked.len(),
        wanted: want,
    })
}

struct LanczosRun {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    q: Vec<Vec<f64>>,
}

fn orthogonalize<'a>(v: &mut [f64], basis: impl Iterator<Item = &'a [f64]> + Clone) {
    for _ in 0..2 {
        for b in basis.clone() {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
}

fn lanczos_run(f: &Ldlt, locked: &[EigenPair], m: usize, rng: &mut ChaCha8Rng) -> LanczosRun {
    let n = f.dim();
    let mut q0: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    orthogonalize(&mut q0, locked.iter().map(|p| p.vector.as_slice()));
    let nq = norm2(&q0);
    q0.iter_mut().for_each(|x| *x /= nq);
    let mut q = vec![q0];
    let mut alpha = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m);
    for j in 0..m {
        let mut w = f.solve(&q[j]);
        let a = dot(&w, &q[j]);
        alpha.push(a);
        orthogonalize(
            &mut w,
            q.iter()
                .map(|v| v.as_slice())
                .chain(locked.iter().map(|p| p.vector.as_slice())),
        );
        let b = norm2(&w);
        beta.push(b);
        if j + 1 == m || b <= 1e-13 * a.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        w.iter_mut().for_each(|x| *x /= b);
        q.push(w);
    }
    q.truncate(alpha.len());
    LanczosRun { alpha, beta, q }
}

/// Rayleigh quotient plus inverse iteration until `‖Av − λv‖ ≤ 1e−10·max(1,|λ|)`.
fn refine_pair(a: &CsrMatrix<f64>, guess: f64, mut v: Vec<f64>) -> Result<EigenPair> {
    let mut lambda = guess;
    for it in 0..4 {
        let av = a.matvec(&v)?;
        lambda = dot(&v, &av);
        let res = av
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - lambda * y).powi(2))
            .sum::<f64>()
            .sqrt();
        if res <= 1e-10 * lambda.abs().max(1.0) || it == 3 {
            break;
        }
        let delta = 1e-10 * lambda.abs().max(1.0);
        let floor = f64::EPSILON * a.max_abs().max(1.0);
        let f = Ldlt::factor(a, lambda + delta, Some(floor))?;
        let mut w = f.solve(&v);
        let nw = norm2(&w);
        if !(nw.is_finite() && nw > 0.0) {
            break;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        if dot(&w, &v) < 0.0 {
            w.iter_mut().for_each(|x| *x = -*x);
        }
        v = w;
    }
    Ok(EigenPair {
        value: lambda,
        vector: v,
    })
}

/// Returns the `want` nearest in-window pairs once inertia confirms that no
/// eigenvalue within that distance is missing.
fn complete(
    a: &CsrMatrix<f64>,
    locked: &[EigenPair],
    sigma: f64,
    want: usize,
    lo: f64,
    hi: f64,
) -> Result<Option<Vec<EigenPair>>> {
    let mut cands: Vec<&EigenPair> = locked.iter().filter(|p| p.value >= lo && p.value < hi).collect();
    if cands.len() < want {
        return Ok(None);
    }
    cands.sort_by(|x, y| {
        (x.value - sigma)
            .abs()
            .total_cmp(&(y.value - sigma).abs())
            .then(x.value.total_cmp(&y.value))
    });
    let r = (cands[want - 1].value - sigma).abs();
    let tol = 1e-8 * r.max(sigma.abs()).max(1.0);
    let (a_lo, a_hi) = ((sigma - r - tol).max(lo), (sigma + r + tol).min(hi));
    let expected = count_in_interval(a, a_lo, a_hi)?;
    let found = locked.iter().filter(|p| p.value >= a_lo && p.value < a_hi).count();
    if found < expected {
        return Ok(None);
    }
    let mut out: Vec<EigenPair> = cands[..want].iter().map(|p| (*p).clone()).collect();
    out.sort_by(|x, y| x.value.total_cmp(&y.value));
    Ok(Some(out))
}
