//! Truncated Fock ⊗ spin basis, parity grading and the matrices of the Dicke
//! Hamiltonian and its parity-odd observables.
//!
//! Basis states are ordered n-major with m ascending inside each photon
//! number. Spin projections are stored doubled (`two_m = 2m`) so that
//! half-integer J never goes through float comparisons.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DickeError, Result};

/// Per-block dimension cap applied by the dense and banded builders.
pub const DEFAULT_DIM_LIMIT: usize = 20_000;

/// Physical constants, atom number and photon cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub omega: f64,
    pub omega0: f64,
    pub lambda: f64,
    pub n_atoms: u32,
    pub n_max: u32,
}

impl ModelParams {
    /// Resonant model (`ω = ω0 = 1`).
    pub fn resonant(n_atoms: u32, lambda: f64, n_max: u32) -> Self {
        Self {
            omega: 1.0,
            omega0: 1.0,
            lambda,
            n_atoms,
            n_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DickeError::InvalidParams(msg));
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return bad(format!("omega must be positive, got {}", self.omega));
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return bad(format!("omega0 must be positive, got {}", self.omega0));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.n_atoms == 0 {
            return bad("n_atoms must be at least 1".into());
        }
        Ok(())
    }

    /// Pseudo-spin length `J = N/2`.
    pub fn j(&self) -> f64 {
        f64::from(self.n_atoms) / 2.0
    }

    /// Ground-state critical coupling `sqrt(ω ω0)/2`.
    pub fn lambda_c(&self) -> f64 {
        (self.omega * self.omega0).sqrt() / 2.0
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    pub fn with_n_max(self, n_max: u32) -> Self {
        Self { n_max, ..self }
    }

    /// Dimension of the full truncated space, `(n_max+1)(N+1)`.
    pub fn full_dim(&self) -> usize {
        (self.n_max as usize + 1) * (self.n_atoms as usize + 1)
    }

    /// SHA-256 over the little-endian encoding of every field.
    pub fn fingerprint(&self) -> Fingerprint {
        let mut h = Sha256::new();
        h.update(self.omega.to_le_bytes());
        h.update(self.omega0.to_le_bytes());
        h.update(self.lambda.to_le_bytes());
        h.update(self.n_atoms.to_le_bytes());
        h.update(self.n_max.to_le_bytes());
        Fingerprint(h.finalize().into())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn short(&self) -> String {
        self.0[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", self.short())
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Eigenvalue of the parity operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sector {
    Plus,
    Minus,
}

impl Sector {
    pub fn sign(self) -> i32 {
        match self {
            Sector::Plus => 1,
            Sector::Minus => -1,
        }
    }

    pub fn from_sign(sign: i32) -> Option<Self> {
        match sign {
            1 => Some(Sector::Plus),
            -1 => Some(Sector::Minus),
            _ => None,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sector::Plus => Sector::Minus,
            Sector::Minus => Sector::Plus,
        }
    }
}

/// Either the whole truncated space or one parity sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subspace {
    Full,
    Parity(Sector),
}

impl Subspace {
    pub fn label(self) -> &'static str {
        match self {
            Subspace::Full => "full",
            Subspace::Parity(Sector::Plus) => "plus",
            Subspace::Parity(Sector::Minus) => "minus",
        }
    }

    pub fn contains(self, parity: Sector) -> bool {
        match self {
            Subspace::Full => true,
            Subspace::Parity(s) => s == parity,
        }
    }
}

/// `|n⟩ ⊗ |J, m⟩` with `m` stored doubled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisState {
    pub n: u32,
    pub two_m: i32,
}

impl BasisState {
    pub fn m(&self) -> f64 {
        f64::from(self.two_m) / 2.0
    }

    /// `(-1)^(J + m + n)`; `n_atoms = 2J`.
    pub fn parity(&self, n_atoms: u32) -> Sector {
        let j_plus_m = (n_atoms as i64 + self.two_m as i64) / 2;
        let exponent = j_plus_m + self.n as i64;
        if exponent % 2 == 0 {
            Sector::Plus
        } else {
            Sector::Minus
        }
    }
}

/// Parity of a basis state for pseudo-spin length `j`.
///
/// Panics when `j` is not a non-negative half integer or the state lies
/// outside `-J..=J`.
pub fn parity_of(state: BasisState, j: f64) -> Sector {
    let two_j = (2.0 * j).round();
    assert!(
        two_j >= 0.0 && (2.0 * j - two_j).abs() < 1e-12,
        "J must be a half integer"
    );
    let two_j = two_j as i32;
    assert!(
        state.two_m.abs() <= two_j && (two_j + state.two_m) % 2 == 0,
        "m out of range for J"
    );
    state.parity(two_j as u32)
}

/// Ordered basis of a subspace together with a lookup from full-space
/// position to local position.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub n_atoms: u32,
    pub n_max: u32,
    pub subspace: Subspace,
    pub states: Vec<BasisState>,
    local: Vec<Option<usize>>,
}

impl Basis {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Position of `(n, two_m)` in the full n-major ordering.
    fn full_index(&self, n: u32, two_m: i32) -> Option<usize> {
        let na = self.n_atoms as i32;
        if n > self.n_max || two_m.abs() > na || (na + two_m) % 2 != 0 {
            return None;
        }
        Some(n as usize * (self.n_atoms as usize + 1) + ((two_m + na) / 2) as usize)
    }

    pub fn index_of(&self, n: u32, two_m: i32) -> Option<usize> {
        self.full_index(n, two_m).and_then(|k| self.local[k])
    }

    pub fn parities(&self) -> Vec<Sector> {
        self.states.iter().map(|s| s.parity(self.n_atoms)).collect()
    }
}

pub fn build_basis(params: &ModelParams, subspace: Subspace) -> Result<Basis> {
    params.validate()?;
    let na = params.n_atoms as i32;
    let mut states = Vec::new();
    let mut local = Vec::with_capacity(params.full_dim());
    for n in 0..=params.n_max {
        for two_m in (-na..=na).step_by(2) {
            let s = BasisState { n, two_m };
            if subspace.contains(s.parity(params.n_atoms)) {
                local.push(Some(states.len()));
                states.push(s);
            } else {
                local.push(None);
            }
        }
    }
    Ok(Basis {
        n_atoms: params.n_atoms,
        n_max: params.n_max,
        subspace,
        states,
        local,
    })
}

/// Real symmetric matrix kept as its diagonal plus the strict upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    pub dim: usize,
    pub diag: Vec<f64>,
    /// `(i, j, value)` with `i < j`.
    pub upper: Vec<(usize, usize, f64)>,
}

impl SparseSymmetric {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            diag: vec![0.0; dim],
            upper: Vec::new(),
        }
    }

    fn push(&mut self, i: usize, j: usize, v: f64) {
        if i == j {
            self.diag[i] += v;
        } else if v != 0.0 {
            self.upper.push((i.min(j), i.max(j), v));
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (k, (yk, xk)) in y.iter_mut().zip(x).enumerate() {
            *yk = self.diag[k] * xk;
        }
        for &(i, j, v) in &self.upper {
            y[i] += v * x[j];
            y[j] += v * x[i];
        }
    }

    /// Each element is written to `(i, j)` and `(j, i)` from the same value.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (k, &d) in self.diag.iter().enumerate() {
            m[(k, k)] = d;
        }
        for &(i, j, v) in &self.upper {
            m[(i, j)] += v;
            m[(j, i)] += v;
        }
        m
    }

    pub fn bandwidth(&self) -> usize {
        self.upper.iter().map(|&(i, j, _)| j - i).max().unwrap_or(0)
    }

    pub fn max_abs(&self) -> f64 {
        self.diag
            .iter()
            .chain(self.upper.iter().map(|(_, _, v)| v))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// `sqrt(J(J+1) - m(m±1))`, the `J±` matrix element.
fn spin_ladder(n_atoms: u32, two_m: i32, up: bool) -> f64 {
    // 4[J(J+1) - m(m±1)] in doubled units
    let tj = n_atoms as i64;
    let tm = two_m as i64;
    let q = if up {
        tj * (tj + 2) - tm * (tm + 2)
    } else {
        tj * (tj + 2) - tm * (tm - 2)
    };
    (q.max(0) as f64).sqrt() / 2.0
}

/// Hamiltonian on `basis`. Couplings `(n,m) -> (n+1, m±1)` are generated from
/// the lower photon number only, so each pair appears once.
pub fn hamiltonian_sparse(params: &ModelParams, basis: &Basis) -> SparseSymmetric {
    let mut h = SparseSymmetric::zeros(basis.len());
    let g = 2.0 * params.lambda / f64::from(params.n_atoms).sqrt();
    for (i, s) in basis.states.iter().enumerate() {
        h.push(i, i, params.omega0 * s.m() + params.omega * f64::from(s.n));
        if g == 0.0 || s.n == basis.n_max {
            continue;
        }
        let photon = f64::from(s.n + 1).sqrt();
        for up in [false, true] {
            let two_m = if up { s.two_m + 2 } else { s.two_m - 2 };
            if two_m.abs() > basis.n_atoms as i32 {
                continue;
            }
            let j = basis.index_of(s.n + 1, two_m).unwrap_or_else(|| {
                panic!(
                    "coupling from ({}, {}) leaves the parity sector",
                    s.n, s.two_m
                )
            });
            let v = g * 0.5 * photon * spin_ladder(basis.n_atoms, s.two_m, up);
            h.push(i, j, v);
        }
    }
    h
}

/// Hamiltonian restricted to one subspace, stored dense.
#[derive(Debug, Clone)]
pub struct ParityBlock {
    pub subspace: Subspace,
    pub basis: Basis,
    pub matrix: DMatrix<f64>,
    pub params: ModelParams,
}

pub fn build_hamiltonian(params: &ModelParams, subspace: Subspace) -> Result<ParityBlock> {
    build_hamiltonian_limited(params, subspace, DEFAULT_DIM_LIMIT)
}

pub fn build_hamiltonian_limited(
    params: &ModelParams,
    subspace: Subspace,
    dim_limit: usize,
) -> Result<ParityBlock> {
    let (basis, sparse) = build_sparse_limited(params, subspace, dim_limit)?;
    Ok(ParityBlock {
        subspace,
        matrix: sparse.to_dense(),
        basis,
        params: *params,
    })
}

/// Basis and sparse Hamiltonian, after the dimension check.
pub fn build_sparse_limited(
    params: &ModelParams,
    subspace: Subspace,
    dim_limit: usize,
) -> Result<(Basis, SparseSymmetric)> {
    params.validate()?;
    let full = params.full_dim();
    let estimate = match subspace {
        Subspace::Full => full,
        Subspace::Parity(_) => full.div_ceil(2),
    };
    if estimate > dim_limit {
        return Err(DickeError::DimensionLimit {
            dim: estimate,
            limit: dim_limit,
        });
    }
    let basis = build_basis(params, subspace)?;
    let h = hamiltonian_sparse(params, &basis);
    Ok((basis, h))
}

/// Parity-odd observables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observable {
    Jx,
    Q,
}

impl Observable {
    pub fn name(self) -> &'static str {
        match self {
            Observable::Jx => "Jx",
            Observable::Q => "q",
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Observable {
    type Err = DickeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Jx" | "jx" => Ok(Observable::Jx),
            "q" | "Q" => Ok(Observable::Q),
            other => Err(DickeError::UnknownObservable(other.to_string())),
        }
    }
}

/// An observable in the full-space basis ordering.
#[derive(Debug, Clone)]
pub struct ObservableMatrix {
    pub observable: Observable,
    pub matrix: SparseSymmetric,
}

impl ObservableMatrix {
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.matrix.to_dense()
    }
}

pub fn build_observable(params: &ModelParams, observable: Observable) -> Result<ObservableMatrix> {
    let basis = build_basis(params, Subspace::Full)?;
    let mut m = SparseSymmetric::zeros(basis.len());
    for (i, s) in basis.states.iter().enumerate() {
        match observable {
            Observable::Jx => {
                if let Some(j) = basis.index_of(s.n, s.two_m + 2) {
                    m.push(i, j, 0.5 * spin_ladder(basis.n_atoms, s.two_m, true));
                }
            }
            Observable::Q => {
                if let Some(j) = basis.index_of(s.n + 1, s.two_m) {
                    m.push(i, j, (f64::from(s.n + 1) / 2.0).sqrt());
                }
            }
        }
    }
    Ok(ObservableMatrix {
        observable,
        matrix: m,
    })
}

/// Diagonal of `Jz` on `basis`.
pub fn jz_diagonal(basis: &Basis) -> Vec<f64> {
    basis.states.iter().map(|s| s.m()).collect()
}

/// Permutation listing the positive-parity states first, each group keeping
/// the basis order.
pub fn parity_permutation(basis: &Basis) -> Vec<usize> {
    let parities = basis.parities();
    let mut perm: Vec<usize> = (0..basis.len())
        .filter(|&k| parities[k] == Sector::Plus)
        .collect();
    perm.extend((0..basis.len()).filter(|&k| parities[k] == Sector::Minus));
    perm
}
