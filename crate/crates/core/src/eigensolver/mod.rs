//! Real symmetric eigensolvers behind a common [`EigenSolver`] trait, looked
//! up by name through [`SolverRegistry`].
//!
//! All strategies share the same post-processing: eigenvalues ascending,
//! each eigenvector scaled so that its largest-magnitude component is
//! positive. Degenerate subspaces carry no canonical rotation.

mod band;
mod jacobi;
mod tridiag;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{DickeError, Result};
use crate::hilbert::{
    build_basis, build_sparse_limited, Fingerprint, ModelParams, Sector, SparseSymmetric, Subspace,
    DEFAULT_DIM_LIMIT,
};

use band::BandMatrix;
use tridiag::{householder, ql_implicit};

/// Bumped whenever a change can alter eigensolver output bits.
pub const SOLVER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotConverged;

/// Ascending eigenvalues with orthonormal eigenvectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub subspace: Subspace,
    pub fingerprint: Fingerprint,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `max |VᵀV - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let v = &self.eigenvectors;
        let g = v.transpose() * v;
        let mut err = 0.0f64;
        for j in 0..g.ncols() {
            for i in 0..g.nrows() {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((g[(i, j)] - target).abs());
            }
        }
        err
    }

    /// `max |A V - V Λ|`.
    pub fn residual(&self, a: &DMatrix<f64>) -> f64 {
        let av = a * &self.eigenvectors;
        let mut err = 0.0f64;
        for (j, &w) in self.eigenvalues.iter().enumerate() {
            for i in 0..av.nrows() {
                err = err.max((av[(i, j)] - w * self.eigenvectors[(i, j)]).abs());
            }
        }
        err
    }
}

/// Eigenvalues and column-major eigenvectors as produced by a strategy,
/// before sorting and sign fixing.
pub struct RawEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<f64>,
}

/// A symmetric eigensolver strategy.
pub trait EigenSolver: Send + Sync {
    fn name(&self) -> &'static str;

    /// All eigenpairs of the dense symmetric `n x n` column-major matrix.
    fn eigh(&self, a: Vec<f64>, n: usize) -> Result<RawEigen, NotConverged>;

    /// Eigenvalues only, in any order.
    fn eigvalsh(&self, a: &SparseSymmetric) -> Result<Vec<f64>, NotConverged> {
        let (mut t, _) = householder(a.to_dense().as_slice().to_vec(), a.dim);
        ql_implicit(&mut t, None)?;
        Ok(t.diag)
    }
}

/// Householder tridiagonalization followed by implicit-shift QL.
pub struct HouseholderQl;

impl EigenSolver for HouseholderQl {
    fn name(&self) -> &'static str {
        "householder-ql"
    }

    fn eigh(&self, a: Vec<f64>, n: usize) -> Result<RawEigen, NotConverged> {
        let (mut t, refl) = householder(a, n);
        let mut z = refl.accumulate();
        drop(refl);
        ql_implicit(&mut t, Some((&mut z, n)))?;
        Ok(RawEigen {
            values: t.diag,
            vectors: z,
        })
    }
}

/// Givens band reduction followed by implicit-shift QL. Eigenvalue-only
/// calls on banded input cost `O(n² b)`.
pub struct BandQl;

impl EigenSolver for BandQl {
    fn name(&self) -> &'static str {
        "band-ql"
    }

    fn eigh(&self, a: Vec<f64>, n: usize) -> Result<RawEigen, NotConverged> {
        let band = BandMatrix::from_dense_colmajor(&a, n);
        drop(a);
        let mut z = vec![0.0; n * n];
        for i in 0..n {
            z[i * n + i] = 1.0;
        }
        let mut t = band.reduce(|p, c, s| {
            let (left, right) = z.split_at_mut((p + 1) * n);
            let zp = &mut left[p * n..];
            let zq = &mut right[..n];
            for (x, y) in zp.iter_mut().zip(zq.iter_mut()) {
                let (a, b) = (*x, *y);
                *x = c * a + s * b;
                *y = c * b - s * a;
            }
        });
        ql_implicit(&mut t, Some((&mut z, n)))?;
        Ok(RawEigen {
            values: t.diag,
            vectors: z,
        })
    }

    fn eigvalsh(&self, a: &SparseSymmetric) -> Result<Vec<f64>, NotConverged> {
        let mut t = BandMatrix::from_sparse(a).reduce(|_, _, _| {});
        ql_implicit(&mut t, None)?;
        Ok(t.diag)
    }
}

/// Cyclic Jacobi; an independent route for cross-checks on small matrices.
pub struct Jacobi;

impl EigenSolver for Jacobi {
    fn name(&self) -> &'static str {
        "jacobi"
    }

    fn eigh(&self, a: Vec<f64>, n: usize) -> Result<RawEigen, NotConverged> {
        let (values, vectors) = jacobi::jacobi(a, n)?;
        Ok(RawEigen { values, vectors })
    }

    fn eigvalsh(&self, a: &SparseSymmetric) -> Result<Vec<f64>, NotConverged> {
        Ok(self.eigh(a.to_dense().as_slice().to_vec(), a.dim)?.values)
    }
}

/// Name -> strategy map.
#[derive(Clone)]
pub struct SolverRegistry {
    solvers: BTreeMap<String, Arc<dyn EigenSolver>>,
}

impl SolverRegistry {
    pub fn empty() -> Self {
        Self {
            solvers: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, solver: Arc<dyn EigenSolver>) {
        self.solvers.insert(solver.name().to_string(), solver);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn EigenSolver>> {
        self.solvers
            .get(name)
            .cloned()
            .ok_or_else(|| DickeError::UnknownSolver(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.solvers.keys().map(String::as_str)
    }
}

impl Default for SolverRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(HouseholderQl));
        r.register(Arc::new(BandQl));
        r.register(Arc::new(Jacobi));
        r
    }
}

pub const DEFAULT_SOLVER: &str = "householder-ql";

pub fn default_solver() -> Arc<dyn EigenSolver> {
    Arc::new(HouseholderQl)
}

fn matrix_fingerprint(a: &DMatrix<f64>) -> Fingerprint {
    let mut h = Sha256::new();
    h.update((a.nrows() as u64).to_le_bytes());
    for x in a.iter() {
        h.update(x.to_le_bytes());
    }
    Fingerprint(h.finalize().into())
}

fn check_input(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(DickeError::InvalidInput(format!(
            "matrix is {}x{}, not square",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(DickeError::InvalidInput(
            "matrix has non-finite entries".into(),
        ));
    }
    let n = a.nrows();
    for j in 0..n {
        for i in 0..j {
            if a[(i, j)] != a[(j, i)] {
                return Err(DickeError::InvalidInput(format!(
                    "matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Sorts ascending and fixes eigenvector signs; `raw` holds `k` vectors of
/// length `n`.
fn finish(raw: RawEigen, n: usize, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| raw.values[a].total_cmp(&raw.values[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&k| raw.values[k]).collect();
    let mut vectors = DMatrix::zeros(n, k);
    for (dst, &src) in order.iter().enumerate() {
        let col = &raw.vectors[src * n..(src + 1) * n];
        let mut pivot = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (i, x) in col.iter().enumerate() {
            vectors[(i, dst)] = sign * x;
        }
    }
    (values, vectors)
}

fn solve_dense(
    solver: &dyn EigenSolver,
    a: &DMatrix<f64>,
    subspace: Subspace,
    fingerprint: Fingerprint,
) -> Result<Spectrum> {
    let n = a.nrows();
    let raw = solver
        .eigh(a.as_slice().to_vec(), n)
        .map_err(|_| DickeError::NoConvergence {
            dim: n,
            fingerprint: fingerprint.short(),
        })?;
    let (eigenvalues, eigenvectors) = finish(raw, n, n);
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        subspace,
        fingerprint,
    })
}

/// Full eigendecomposition with the default strategy.
pub fn spectral_decomposition(a: &DMatrix<f64>) -> Result<Spectrum> {
    spectral_decomposition_with(&HouseholderQl, a)
}

pub fn spectral_decomposition_with(solver: &dyn EigenSolver, a: &DMatrix<f64>) -> Result<Spectrum> {
    check_input(a)?;
    solve_dense(solver, a, Subspace::Full, matrix_fingerprint(a))
}

/// The `k` lowest eigenpairs by bisection and inverse iteration on the
/// Householder tridiagonal form.
pub fn partial_lowest(a: &DMatrix<f64>, k: usize) -> Result<Spectrum> {
    check_input(a)?;
    let n = a.nrows();
    if k == 0 || k > n {
        return Err(DickeError::InvalidInput(format!(
            "requested {k} eigenpairs of a {n}x{n} matrix"
        )));
    }
    let (t, refl) = householder(a.as_slice().to_vec(), n);
    let values: Vec<f64> = (0..k).map(|i| t.bisect(i)).collect();
    let tvecs = t.inverse_iteration(&values);
    let mut raw_vectors = Vec::with_capacity(n * k);
    for mut y in tvecs {
        refl.apply(&mut y);
        raw_vectors.extend_from_slice(&y);
    }
    let (eigenvalues, eigenvectors) = finish(
        RawEigen {
            values,
            vectors: raw_vectors,
        },
        n,
        k,
    );
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        subspace: Subspace::Full,
        fingerprint: matrix_fingerprint(a),
    })
}

/// Where spectra come from: a direct solve, or a cache in front of one.
pub trait SpectrumSource: Send + Sync {
    fn spectrum(&self, params: &ModelParams, subspace: Subspace) -> Result<Spectrum>;

    /// Ascending eigenvalues only.
    fn eigenvalues(&self, params: &ModelParams, subspace: Subspace) -> Result<Vec<f64>>;
}

/// Solves on every request. Eigenpairs and eigenvalue-only requests may use
/// different strategies.
#[derive(Clone)]
pub struct DirectSolve {
    pub vectors: Arc<dyn EigenSolver>,
    pub values: Arc<dyn EigenSolver>,
    pub dim_limit: usize,
}

impl DirectSolve {
    pub fn new(vectors: Arc<dyn EigenSolver>, values: Arc<dyn EigenSolver>) -> Self {
        Self {
            vectors,
            values,
            dim_limit: DEFAULT_DIM_LIMIT,
        }
    }
}

impl Default for DirectSolve {
    fn default() -> Self {
        Self::new(Arc::new(HouseholderQl), Arc::new(BandQl))
    }
}

impl SpectrumSource for DirectSolve {
    fn spectrum(&self, params: &ModelParams, subspace: Subspace) -> Result<Spectrum> {
        let (_, sparse) = build_sparse_limited(params, subspace, self.dim_limit)?;
        solve_dense(
            self.vectors.as_ref(),
            &sparse.to_dense(),
            subspace,
            params.fingerprint(),
        )
    }

    fn eigenvalues(&self, params: &ModelParams, subspace: Subspace) -> Result<Vec<f64>> {
        subspace_eigenvalues(params, subspace, self.values.as_ref(), self.dim_limit)
    }
}

/// Full-space spectrum assembled from the two parity sectors.
pub fn full_spectrum(source: &dyn SpectrumSource, params: &ModelParams) -> Result<Spectrum> {
    let plus = source.spectrum(params, Subspace::Parity(Sector::Plus))?;
    let minus = source.spectrum(params, Subspace::Parity(Sector::Minus))?;
    merge_sectors(params, &plus, &minus)
}

/// Solves the Hamiltonian of one subspace.
pub fn solve_subspace(
    params: &ModelParams,
    subspace: Subspace,
    solver: &dyn EigenSolver,
) -> Result<Spectrum> {
    let (_, sparse) = build_sparse_limited(params, subspace, DEFAULT_DIM_LIMIT)?;
    solve_dense(solver, &sparse.to_dense(), subspace, params.fingerprint())
}

/// Eigenvalues of one subspace, ascending.
pub fn subspace_eigenvalues(
    params: &ModelParams,
    subspace: Subspace,
    solver: &dyn EigenSolver,
    dim_limit: usize,
) -> Result<Vec<f64>> {
    let (_, sparse) = build_sparse_limited(params, subspace, dim_limit)?;
    let mut w = solver
        .eigvalsh(&sparse)
        .map_err(|_| DickeError::NoConvergence {
            dim: sparse.dim,
            fingerprint: params.fingerprint().short(),
        })?;
    w.sort_by(f64::total_cmp);
    Ok(w)
}

/// Embeds the two sector spectra into the full-space basis ordering and
/// merges them by ascending energy. Every resulting eigenvector has a
/// definite parity.
pub fn merge_sectors(params: &ModelParams, plus: &Spectrum, minus: &Spectrum) -> Result<Spectrum> {
    if plus.subspace != Subspace::Parity(Sector::Plus) {
        return Err(DickeError::SectorMismatch {
            expected: Sector::Plus,
            got: Sector::Minus,
        });
    }
    if minus.subspace != Subspace::Parity(Sector::Minus) {
        return Err(DickeError::SectorMismatch {
            expected: Sector::Minus,
            got: Sector::Plus,
        });
    }
    if plus.fingerprint != minus.fingerprint || plus.fingerprint != params.fingerprint() {
        return Err(DickeError::FingerprintMismatch);
    }
    let full = build_basis(params, Subspace::Full)?;
    let bp = build_basis(params, Subspace::Parity(Sector::Plus))?;
    let bm = build_basis(params, Subspace::Parity(Sector::Minus))?;
    let map = |b: &crate::hilbert::Basis| -> Vec<usize> {
        b.states
            .iter()
            .map(|s| {
                full.index_of(s.n, s.two_m)
                    .expect("sector state in full basis")
            })
            .collect()
    };
    let (mp, mm) = (map(&bp), map(&bm));
    let mut entries: Vec<(f64, bool, usize)> = plus
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &e)| (e, true, k))
        .chain(
            minus
                .eigenvalues
                .iter()
                .enumerate()
                .map(|(k, &e)| (e, false, k)),
        )
        .collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    let dim = full.len();
    let mut vectors = DMatrix::zeros(dim, dim);
    let mut values = Vec::with_capacity(dim);
    for (col, &(e, is_plus, k)) in entries.iter().enumerate() {
        values.push(e);
        let (src, map) = if is_plus { (plus, &mp) } else { (minus, &mm) };
        for (r, &g) in map.iter().enumerate() {
            vectors[(g, col)] = src.eigenvectors[(r, k)];
        }
    }
    Ok(Spectrum {
        eigenvalues: values,
        eigenvectors: vectors,
        subspace: Subspace::Full,
        fingerprint: params.fingerprint(),
    })
}

/// Parity of each column of a spectrum produced by [`merge_sectors`].
pub fn column_parities(params: &ModelParams, spectrum: &Spectrum) -> Result<Vec<Sector>> {
    let basis = build_basis(params, Subspace::Full)?;
    let par = basis.parities();
    Ok((0..spectrum.dim())
        .map(|c| {
            let col = spectrum.eigenvectors.column(c);
            let (mut wp, mut wm) = (0.0, 0.0);
            for (i, x) in col.iter().enumerate() {
                match par[i] {
                    Sector::Plus => wp += x * x,
                    Sector::Minus => wm += x * x,
                }
            }
            if wp >= wm {
                Sector::Plus
            } else {
                Sector::Minus
            }
        })
        .collect())
}

#[cfg(test)]
mod tests;
