//! Post-quench unitary evolution of coherent states, diagonal ensembles and
//! steady-state classification.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::eigensolver::{column_parities, full_spectrum, Spectrum, SpectrumSource};
use crate::error::{DickeError, Result};
use crate::hilbert::{
    build_observable, build_sparse_limited, ModelParams, Observable, Sector, SparseSymmetric,
    Subspace, DEFAULT_DIM_LIMIT,
};
use crate::meanfield::{
    coherent_state_vector, minimize_surface, photon_tail, quench_energy, TAIL_TOLERANCE,
};
use crate::phase_diagram::initial_cutoff;

pub const DEFAULT_DROP_TOL: f64 = 1e-14;
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-10;
pub const DEFAULT_T_MAX: f64 = 200.0;
pub const DEFAULT_SAMPLES: usize = 4000;
pub const DEFAULT_WINDOW: f64 = 0.5;
/// Classification threshold in units of `J`.
pub const DEFAULT_THRESHOLD: f64 = 0.05;
pub const MIN_WINDOW_SAMPLES: usize = 10;
const NORM_TOL: f64 = 1e-10;
const ENERGY_TOL: f64 = 1e-6;

/// `samples` equally spaced times on `[0, t_max]`.
pub fn uniform_times(t_max: f64, samples: usize) -> Vec<f64> {
    match samples {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..samples)
            .map(|k| t_max * k as f64 / (samples - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuenchSpec {
    pub lambda_i: f64,
    pub lambda_f: f64,
    /// `+1` selects the minimum with `μ* > 0`.
    pub branch: i32,
    pub times: Vec<f64>,
    pub observable: Observable,
}

impl QuenchSpec {
    pub fn new(lambda_i: f64, lambda_f: f64, branch: i32, observable: Observable) -> Self {
        Self {
            lambda_i,
            lambda_f,
            branch,
            times: uniform_times(DEFAULT_T_MAX, DEFAULT_SAMPLES),
            observable,
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if !(self.lambda_i > params.lambda_c()) {
            return Err(DickeError::InvalidInput(format!(
                "lambda_i = {} must exceed the critical coupling {}",
                self.lambda_i,
                params.lambda_c()
            )));
        }
        if !(self.lambda_f.is_finite() && self.lambda_f >= 0.0) {
            return Err(DickeError::InvalidInput(format!(
                "lambda_f must be >= 0, got {}",
                self.lambda_f
            )));
        }
        if Sector::from_sign(self.branch).is_none() {
            return Err(DickeError::InvalidInput(format!(
                "branch must be +1 or -1, got {}",
                self.branch
            )));
        }
        if self.times.first() != Some(&0.0) {
            return Err(DickeError::InvalidInput("time grid must start at 0".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0]))
            || self.times.iter().any(|t| !t.is_finite())
        {
            return Err(DickeError::InvalidInput(
                "time grid must be finite and strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Broken,
    Restored,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Broken => "broken",
            Phase::Restored => "restored",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyState {
    pub mean: f64,
    pub rms: f64,
    pub window_start: f64,
    pub samples: usize,
    pub threshold: f64,
    pub classification: Phase,
}

/// Window statistics over the last `window` fraction of samples.
pub fn steady_state(
    times: &[f64],
    values: &[f64],
    window: f64,
    threshold: f64,
) -> Result<SteadyState> {
    if times.len() != values.len() {
        return Err(DickeError::InvalidInput(
            "times and values differ in length".into(),
        ));
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(DickeError::InvalidInput(format!(
            "window fraction must be in (0, 1], got {window}"
        )));
    }
    let samples = (window * values.len() as f64).ceil() as usize;
    if samples < MIN_WINDOW_SAMPLES {
        return Err(DickeError::InvalidInput(format!(
            "averaging window holds {samples} samples, need at least {MIN_WINDOW_SAMPLES}"
        )));
    }
    let start = values.len() - samples;
    let w = &values[start..];
    let mean = w.iter().sum::<f64>() / samples as f64;
    let rms = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / samples as f64).sqrt();
    Ok(SteadyState {
        mean,
        rms,
        window_start: times[start],
        samples,
        threshold,
        classification: if mean.abs() > threshold {
            Phase::Broken
        } else {
            Phase::Restored
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    pub observable: Observable,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub energy_over_j: f64,
    /// Largest imaginary part met while summing.
    pub max_imag: f64,
    pub steady: SteadyState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagonalEnsemble {
    pub observable: Option<Observable>,
    pub value: f64,
    #[serde(skip)]
    pub populations: Vec<f64>,
}

/// `C_i = ⟨E_i|ψ⟩`.
pub fn expansion_coefficients(initial: &[f64], spectrum: &Spectrum) -> Result<Vec<f64>> {
    let d = spectrum.dim();
    if initial.len() != d {
        return Err(DickeError::InvalidInput(format!(
            "state has {} components, spectrum dimension is {d}",
            initial.len()
        )));
    }
    let norm2: f64 = initial.iter().map(|x| x * x).sum();
    if (norm2 - 1.0).abs() > NORM_TOL {
        return Err(DickeError::InvalidInput(format!(
            "initial state not normalized: |psi|^2 = {norm2}"
        )));
    }
    let c = spectrum
        .eigenvectors
        .tr_mul(&DVector::from_column_slice(initial));
    let total: f64 = c.iter().map(|x| x * x).sum();
    if (total - 1.0).abs() > NORM_TOL {
        return Err(DickeError::CutoffTooSmall {
            n_max: 0,
            reason: format!("expansion captures {total} of the norm"),
        });
    }
    Ok(c.iter().copied().collect())
}

fn column_diagonal(spectrum: &Spectrum, observable: &SparseSymmetric, coeffs: &[f64]) -> Vec<f64> {
    let d = spectrum.dim();
    let mut y = vec![0.0; d];
    (0..d)
        .map(|i| {
            if coeffs[i] == 0.0 {
                return 0.0;
            }
            let v = spectrum.eigenvectors.column(i);
            observable.matvec(v.as_slice(), &mut y);
            v.iter().zip(&y).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// `⟨O⟩_D = Σ_i |C_i|² ⟨E_i|O|E_i⟩`.
pub fn diagonal_ensemble(
    coeffs: &[f64],
    spectrum: &Spectrum,
    observable: &SparseSymmetric,
) -> Result<DiagonalEnsemble> {
    if coeffs.len() != spectrum.dim() || observable.dim != spectrum.dim() {
        return Err(DickeError::InvalidInput("dimension mismatch".into()));
    }
    let populations: Vec<f64> = coeffs.iter().map(|c| c * c).collect();
    let diag = column_diagonal(spectrum, observable, coeffs);
    let value = populations.iter().zip(&diag).map(|(p, o)| p * o).sum();
    Ok(DiagonalEnsemble {
        observable: None,
        value,
        populations,
    })
}

/// Eigenbasis pair sum restricted to pairs with `|C_i C_j| > drop_tol`.
/// Columns are grouped by parity so that vanishing cross-parity or
/// same-parity blocks are skipped.
pub struct PairSum {
    energies: Vec<f64>,
    coeffs: Vec<f64>,
    /// `⟨E_i|O|E_j⟩` on the significant columns, grouped.
    w: DMatrix<f64>,
    split: usize,
    /// `[same-sector blocks nonzero, cross blocks nonzero]`.
    live: [bool; 2],
}

impl PairSum {
    pub fn new(
        params: &ModelParams,
        coeffs: &[f64],
        spectrum: &Spectrum,
        observable: &SparseSymmetric,
        drop_tol: f64,
    ) -> Result<Self> {
        let d = spectrum.dim();
        if coeffs.len() != d || observable.dim != d {
            return Err(DickeError::InvalidInput("dimension mismatch".into()));
        }
        let cmax = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let significant: Vec<usize> = (0..d)
            .filter(|&i| coeffs[i].abs() * cmax > drop_tol)
            .collect();
        let parities = column_parities(params, spectrum)?;
        let (mut order, minus): (Vec<usize>, Vec<usize>) = significant
            .iter()
            .partition(|&&i| parities[i] == Sector::Plus);
        let split = order.len();
        order.extend(minus);

        let s = order.len();
        let v = DMatrix::from_fn(d, s, |r, c| spectrum.eigenvectors[(r, order[c])]);
        let mut ov = DMatrix::zeros(d, s);
        let mut y = vec![0.0; d];
        for c in 0..s {
            observable.matvec(v.column(c).as_slice(), &mut y);
            ov.column_mut(c).copy_from_slice(&y);
        }
        let mut w = v.tr_mul(&ov);
        let c: Vec<f64> = order.iter().map(|&i| coeffs[i]).collect();
        for j in 0..s {
            for i in 0..s {
                if (c[i] * c[j]).abs() <= drop_tol {
                    w[(i, j)] = 0.0;
                }
            }
        }
        let nonzero = |r0: usize, nr: usize, c0: usize, nc: usize| {
            nr > 0 && nc > 0 && w.view((r0, c0), (nr, nc)).iter().any(|x| *x != 0.0)
        };
        let m = s - split;
        let live = [
            nonzero(0, split, 0, split) || nonzero(split, m, split, m),
            nonzero(0, split, split, m),
        ];
        Ok(Self {
            energies: order.iter().map(|&i| spectrum.eigenvalues[i]).collect(),
            coeffs: c,
            w,
            split,
            live,
        })
    }

    pub fn significant(&self) -> usize {
        self.coeffs.len()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let (s, p) = (self.coeffs.len(), self.split);
        let m = s - p;
        let mut y = DVector::zeros(s);
        if self.live[0] {
            y.rows_mut(0, p)
                .gemv(1.0, &self.w.view((0, 0), (p, p)), &x.rows(0, p), 0.0);
            y.rows_mut(p, m)
                .gemv(1.0, &self.w.view((p, p), (m, m)), &x.rows(p, m), 0.0);
        }
        if self.live[1] {
            y.rows_mut(0, p)
                .gemv(1.0, &self.w.view((0, p), (p, m)), &x.rows(p, m), 1.0);
            y.rows_mut(p, m)
                .gemv_tr(1.0, &self.w.view((0, p), (p, m)), &x.rows(0, p), 1.0);
        }
        y
    }

    /// `(Re, Im)` of `Σ_ij C_j C_i e^{-i(E_i-E_j)t} O_ji`.
    pub fn at(&self, t: f64) -> (f64, f64) {
        let s = self.coeffs.len();
        let re = DVector::from_fn(s, |k, _| self.coeffs[k] * (self.energies[k] * t).cos());
        let im = DVector::from_fn(s, |k, _| self.coeffs[k] * (self.energies[k] * t).sin());
        let wr = self.apply(&re);
        let wi = self.apply(&im);
        (re.dot(&wr) + im.dot(&wi), re.dot(&wi) - im.dot(&wr))
    }

    /// Diagonal plus cross terms between nearly degenerate significant pairs.
    pub fn degenerate_average(&self, tol: f64) -> f64 {
        let s = self.coeffs.len();
        let mut sum = 0.0;
        for i in 0..s {
            for j in 0..s {
                if (self.energies[i] - self.energies[j]).abs() < tol {
                    sum += self.coeffs[i] * self.coeffs[j] * self.w[(i, j)];
                }
            }
        }
        sum
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evolution {
    pub values: Vec<f64>,
    pub max_imag: f64,
}

/// Pair-sum evaluation over a time grid, parallel over samples.
pub fn evolve_expectation(sum: &PairSum, times: &[f64]) -> Evolution {
    let pts: Vec<(f64, f64)> = times.par_iter().map(|&t| sum.at(t)).collect();
    Evolution {
        values: pts.iter().map(|p| p.0).collect(),
        max_imag: pts.iter().fold(0.0, |m, p| m.max(p.1.abs())),
    }
}

/// Everything a propagator may draw on.
pub struct QuenchSystem<'a> {
    pub params: &'a ModelParams,
    pub hamiltonian: &'a SparseSymmetric,
    pub spectrum: &'a Spectrum,
    pub initial: &'a [f64],
    pub observable: &'a SparseSymmetric,
}

pub trait Propagator: Send + Sync {
    fn name(&self) -> &'static str;
    fn evolve(&self, system: &QuenchSystem, times: &[f64]) -> Result<Evolution>;
}

/// Sum over eigenpairs.
pub struct SpectralSum {
    pub drop_tol: f64,
}

impl Default for SpectralSum {
    fn default() -> Self {
        Self {
            drop_tol: DEFAULT_DROP_TOL,
        }
    }
}

impl Propagator for SpectralSum {
    fn name(&self) -> &'static str {
        "spectral"
    }

    fn evolve(&self, sys: &QuenchSystem, times: &[f64]) -> Result<Evolution> {
        let c = expansion_coefficients(sys.initial, sys.spectrum)?;
        let sum = PairSum::new(sys.params, &c, sys.spectrum, sys.observable, self.drop_tol)?;
        Ok(evolve_expectation(&sum, times))
    }
}

/// Classical fourth-order Runge-Kutta on the full Hamiltonian.
pub struct Rk4 {
    pub max_step: f64,
}

impl Default for Rk4 {
    fn default() -> Self {
        Self { max_step: 1e-3 }
    }
}

impl Rk4 {
    /// `d(re)/dt = H im`, `d(im)/dt = -H re`.
    fn deriv(h: &SparseSymmetric, re: &[f64], im: &[f64], dre: &mut [f64], dim: &mut [f64]) {
        h.matvec(im, dre);
        h.matvec(re, dim);
        for x in dim.iter_mut() {
            *x = -*x;
        }
    }
}

impl Propagator for Rk4 {
    fn name(&self) -> &'static str {
        "rk4"
    }

    fn evolve(&self, sys: &QuenchSystem, times: &[f64]) -> Result<Evolution> {
        let h = sys.hamiltonian;
        let d = h.dim;
        if sys.initial.len() != d || sys.observable.dim != d {
            return Err(DickeError::InvalidInput("dimension mismatch".into()));
        }
        if !(self.max_step > 0.0) {
            return Err(DickeError::InvalidInput("RK4 step must be positive".into()));
        }
        if times.first().is_some_and(|&t| t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
            return Err(DickeError::InvalidInput(
                "RK4 needs non-negative ascending times".into(),
            ));
        }
        let mut re = sys.initial.to_vec();
        let mut im = vec![0.0; d];
        let mut k = [(); 4].map(|_| (vec![0.0; d], vec![0.0; d]));
        let (mut tr, mut ti) = (vec![0.0; d], vec![0.0; d]);
        let mut now = 0.0;
        let mut values = Vec::with_capacity(times.len());
        let mut max_imag: f64 = 0.0;
        let mut y = vec![0.0; d];
        for &target in times {
            let span = target - now;
            let steps = (span / self.max_step).ceil() as usize;
            if steps > 0 {
                let dt = span / steps as f64;
                for _ in 0..steps {
                    for stage in 0..4 {
                        let f = match stage {
                            0 => 0.0,
                            3 => dt,
                            _ => 0.5 * dt,
                        };
                        if stage == 0 {
                            tr.copy_from_slice(&re);
                            ti.copy_from_slice(&im);
                        } else {
                            let (pr, pi) = &k[stage - 1];
                            for i in 0..d {
                                tr[i] = re[i] + f * pr[i];
                                ti[i] = im[i] + f * pi[i];
                            }
                        }
                        let (kr, ki) = &mut k[stage];
                        Self::deriv(h, &tr, &ti, kr, ki);
                    }
                    for i in 0..d {
                        re[i] +=
                            dt / 6.0 * (k[0].0[i] + 2.0 * k[1].0[i] + 2.0 * k[2].0[i] + k[3].0[i]);
                        im[i] +=
                            dt / 6.0 * (k[0].1[i] + 2.0 * k[1].1[i] + 2.0 * k[2].1[i] + k[3].1[i]);
                    }
                }
                now = target;
            }
            sys.observable.matvec(&re, &mut y);
            let rr: f64 = re.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ir: f64 = im.iter().zip(&y).map(|(a, b)| a * b).sum();
            sys.observable.matvec(&im, &mut y);
            let ii: f64 = im.iter().zip(&y).map(|(a, b)| a * b).sum();
            let ri: f64 = re.iter().zip(&y).map(|(a, b)| a * b).sum();
            values.push(rr + ii);
            max_imag = max_imag.max((ri - ir).abs());
        }
        Ok(Evolution { values, max_imag })
    }
}

pub struct PropagatorRegistry {
    entries: BTreeMap<&'static str, Arc<dyn Propagator>>,
}

impl PropagatorRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, p: Arc<dyn Propagator>) {
        self.entries.insert(p.name(), p);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Propagator>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| DickeError::InvalidInput(format!("unknown propagator `{name}`")))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl PropagatorRegistry {
    /// Both built-in strategies with the given tuning.
    pub fn with_settings(drop_tol: f64, rk4_step: f64) -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(SpectralSum { drop_tol }));
        r.register(Arc::new(Rk4 { max_step: rk4_step }));
        r
    }
}

impl Default for PropagatorRegistry {
    fn default() -> Self {
        Self::with_settings(DEFAULT_DROP_TOL, Rk4::default().max_step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuenchOptions {
    pub drop_tol: f64,
    pub degeneracy_tol: f64,
    pub window: f64,
    /// Classification threshold in units of `J`.
    pub threshold: f64,
    pub dim_limit: usize,
    /// Overrides the derived cutoff when set.
    pub n_max: Option<u32>,
}

impl Default for QuenchOptions {
    fn default() -> Self {
        Self {
            drop_tol: DEFAULT_DROP_TOL,
            degeneracy_tol: DEFAULT_DEGENERACY_TOL,
            window: DEFAULT_WINDOW,
            threshold: DEFAULT_THRESHOLD,
            dim_limit: DEFAULT_DIM_LIMIT,
            n_max: None,
        }
    }
}

/// Cutoff for a quench: the heuristic at the larger coupling, raised until
/// the initial coherent state's photon tail is negligible.
pub fn quench_cutoff(lambda_i: f64, lambda_f: f64, params: &ModelParams) -> Result<u32> {
    let lam = lambda_i.max(lambda_f);
    let mut n = initial_cutoff(&params.with_lambda(lam));
    let min = minimize_surface(lambda_i, params)?;
    while photon_tail(min.branch_plus.nu, n) >= TAIL_TOLERANCE {
        n += n / 4 + 1;
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuenchResult {
    pub spec: QuenchSpec,
    pub params: ModelParams,
    pub propagator: &'static str,
    pub mu: f64,
    pub nu: f64,
    pub energy_formula_over_j: f64,
    pub energy_numeric_over_j: f64,
    pub series: TimeSeries,
    pub diagonal: DiagonalEnsemble,
    /// Diagonal ensemble plus cross terms inside degenerate pairs.
    pub degenerate_prediction: f64,
    pub significant_states: usize,
}

/// Full quench protocol: mean-field minimum at `λ_i`, coherent state,
/// spectrum of `H(λ_f)`, then evolution and diagonal ensemble.
pub fn run_quench(
    spec: &QuenchSpec,
    base: &ModelParams,
    options: &QuenchOptions,
    source: &dyn SpectrumSource,
    propagator: &dyn Propagator,
) -> Result<QuenchResult> {
    base.validate()?;
    spec.validate(base)?;
    let n_max = match options.n_max {
        Some(n) => n,
        None => quench_cutoff(spec.lambda_i, spec.lambda_f, base)?,
    };
    let params = base.with_lambda(spec.lambda_f).with_n_max(n_max);
    params.validate()?;
    let j = params.j();

    let min = minimize_surface(spec.lambda_i, &params)?.branch(spec.branch);
    let psi = coherent_state_vector(min.mu, min.nu, &params)?;
    let (_, hamiltonian) = build_sparse_limited(&params, Subspace::Full, options.dim_limit)?;
    let spectrum = full_spectrum(source, &params)?;
    let coeffs = expansion_coefficients(&psi, &spectrum).map_err(|e| match e {
        DickeError::CutoffTooSmall { reason, .. } => DickeError::CutoffTooSmall { n_max, reason },
        e => e,
    })?;

    let formula = quench_energy(spec.lambda_i, spec.lambda_f, &params)?;
    let numeric: f64 = coeffs
        .iter()
        .zip(&spectrum.eigenvalues)
        .map(|(c, e)| c * c * e)
        .sum();
    if (numeric - formula).abs() > ENERGY_TOL * j {
        return Err(DickeError::CutoffTooSmall {
            n_max,
            reason: format!(
                "spectral energy {numeric} differs from the mean-field value {formula}"
            ),
        });
    }

    let observable = build_observable(&params, spec.observable)?.matrix;
    let sys = QuenchSystem {
        params: &params,
        hamiltonian: &hamiltonian,
        spectrum: &spectrum,
        initial: &psi,
        observable: &observable,
    };
    let evolution = propagator.evolve(&sys, &spec.times)?;
    let pairs = PairSum::new(&params, &coeffs, &spectrum, &observable, options.drop_tol)?;
    let mut diagonal = diagonal_ensemble(&coeffs, &spectrum, &observable)?;
    diagonal.observable = Some(spec.observable);
    let steady = steady_state(
        &spec.times,
        &evolution.values,
        options.window,
        options.threshold * j,
    )?;

    Ok(QuenchResult {
        spec: spec.clone(),
        params,
        propagator: propagator.name(),
        mu: min.mu,
        nu: min.nu,
        energy_formula_over_j: formula / j,
        energy_numeric_over_j: numeric / j,
        series: TimeSeries {
            observable: spec.observable,
            times: spec.times.clone(),
            values: evolution.values,
            energy_over_j: formula / j,
            max_imag: evolution.max_imag,
            steady,
        },
        diagonal,
        degenerate_prediction: pairs.degenerate_average(options.degeneracy_tol * params.omega),
        significant_states: pairs.significant(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolver::DirectSolve;

    fn small(lambda_f: f64) -> (ModelParams, SparseSymmetric, Spectrum, Vec<f64>) {
        let p = ModelParams::resonant(4, lambda_f, 12);
        let min = minimize_surface(0.55, &p).unwrap().branch_plus;
        let psi = coherent_state_vector(min.mu, min.nu, &p).unwrap();
        let (_, h) = build_sparse_limited(&p, Subspace::Full, DEFAULT_DIM_LIMIT).unwrap();
        let s = full_spectrum(&DirectSolve::default(), &p).unwrap();
        (p, h, s, psi)
    }

    fn identity(d: usize) -> SparseSymmetric {
        let mut m = SparseSymmetric::zeros(d);
        m.diag.iter_mut().for_each(|x| *x = 1.0);
        m
    }

    #[test]
    fn eigenvector_gives_unit_coefficients() {
        let (_, _, s, _) = small(0.8);
        let v: Vec<f64> = s.eigenvectors.column(7).iter().copied().collect();
        let c = expansion_coefficients(&v, &s).unwrap();
        for (i, x) in c.iter().enumerate() {
            let want = if i == 7 { 1.0 } else { 0.0 };
            assert!((x - want).abs() < 1e-12);
        }
        assert!(expansion_coefficients(&v[1..], &s).is_err());
        let half: Vec<f64> = v.iter().map(|x| 0.5 * x).collect();
        assert!(expansion_coefficients(&half, &s).is_err());
    }

    #[test]
    fn initial_value_is_the_sandwich() {
        let (p, h, s, psi) = small(0.9);
        let jx = build_observable(&p, Observable::Jx).unwrap().matrix;
        let mut y = vec![0.0; psi.len()];
        jx.matvec(&psi, &mut y);
        let direct: f64 = psi.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sys = QuenchSystem {
            params: &p,
            hamiltonian: &h,
            spectrum: &s,
            initial: &psi,
            observable: &jx,
        };
        let e = SpectralSum { drop_tol: 0.0 }.evolve(&sys, &[0.0]).unwrap();
        assert!((e.values[0] - direct).abs() < 1e-12);
        let mu = minimize_surface(0.55, &p).unwrap().branch_plus.mu;
        assert!((direct - p.j() * 2.0 * mu / (1.0 + mu * mu)).abs() < 1e-12);
    }

    #[test]
    fn norm_and_energy_conserved() {
        let (p, h, s, psi) = small(1.3);
        let times = uniform_times(30.0, 61);
        for (obs, want) in [(identity(psi.len()), 1.0), (h.clone(), f64::NAN)] {
            let sys = QuenchSystem {
                params: &p,
                hamiltonian: &h,
                spectrum: &s,
                initial: &psi,
                observable: &obs,
            };
            let e = SpectralSum::default().evolve(&sys, &times).unwrap();
            let reference = if want.is_nan() { e.values[0] } else { want };
            for v in &e.values {
                assert!((v - reference).abs() < 1e-10 * p.j().max(1.0));
            }
            assert!(e.max_imag < 1e-10);
        }
        let c = expansion_coefficients(&psi, &s).unwrap();
        let d = diagonal_ensemble(&c, &s, &identity(psi.len())).unwrap();
        assert!((d.value - 1.0).abs() < 1e-12);
        let dh = diagonal_ensemble(&c, &s, &h).unwrap();
        let q = quench_energy(0.55, 1.3, &p).unwrap();
        assert!((dh.value - q).abs() < 1e-6 * p.j());
    }

    #[test]
    fn time_reversal() {
        let (p, h, s, psi) = small(0.7);
        let jx = build_observable(&p, Observable::Jx).unwrap().matrix;
        let c = expansion_coefficients(&psi, &s).unwrap();
        let sum = PairSum::new(&p, &c, &s, &jx, 0.0).unwrap();
        for t in [0.3, 4.1, 17.0] {
            assert!((sum.at(t).0 - sum.at(-t).0).abs() < 1e-12);
        }
        let _ = h;
    }

    #[test]
    fn parity_odd_diagonal_vanishes() {
        let (p, _, s, psi) = small(1.1);
        let c = expansion_coefficients(&psi, &s).unwrap();
        for o in [Observable::Jx, Observable::Q] {
            let m = build_observable(&p, o).unwrap().matrix;
            assert!(diagonal_ensemble(&c, &s, &m).unwrap().value.abs() < 1e-10);
        }
    }

    #[test]
    fn spectral_matches_rk4() {
        let (p, h, s, psi) = small(1.2);
        let jx = build_observable(&p, Observable::Jx).unwrap().matrix;
        let sys = QuenchSystem {
            params: &p,
            hamiltonian: &h,
            spectrum: &s,
            initial: &psi,
            observable: &jx,
        };
        let times = uniform_times(5.0, 11);
        let a = SpectralSum { drop_tol: 0.0 }.evolve(&sys, &times).unwrap();
        let b = Rk4 { max_step: 1e-3 }.evolve(&sys, &times).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-8, "{x} {y}");
        }
    }

    #[test]
    fn steady_state_classification() {
        let times = uniform_times(10.0, 100);
        let flat = vec![-0.3; 100];
        let s = steady_state(&times, &flat, 0.5, 0.05).unwrap();
        assert_eq!(s.classification, Phase::Broken);
        assert_eq!(s.samples, 50);
        let osc: Vec<f64> = times.iter().map(|t| 0.01 * (7.0 * t).sin()).collect();
        let s = steady_state(&times, &osc, 0.5, 0.05).unwrap();
        assert_eq!(s.classification, Phase::Restored);
        assert!(s.rms > 0.005);
        assert!(steady_state(&times[..15], &osc[..15], 0.5, 0.05).is_err());
    }

    #[test]
    fn spec_validation() {
        let p = ModelParams::resonant(4, 0.0, 12);
        let mut q = QuenchSpec::new(0.55, 1.0, 1, Observable::Jx);
        assert!(q.validate(&p).is_ok());
        q.branch = 0;
        assert!(q.validate(&p).is_err());
        let q = QuenchSpec::new(0.4, 1.0, 1, Observable::Jx);
        assert!(q.validate(&p).is_err());
        let mut q = QuenchSpec::new(0.55, 1.0, -1, Observable::Jx);
        q.times = vec![0.0, 1.0, 1.0];
        assert!(q.validate(&p).is_err());
    }

    #[test]
    fn branch_flips_sign() {
        let base = ModelParams::resonant(4, 0.0, 0);
        let opts = QuenchOptions {
            n_max: Some(12),
            ..Default::default()
        };
        let mut spec = QuenchSpec::new(0.55, 0.7, 1, Observable::Jx);
        spec.times = uniform_times(10.0, 40);
        let src = DirectSolve::default();
        let a = run_quench(&spec, &base, &opts, &src, &SpectralSum::default()).unwrap();
        spec.branch = -1;
        let b = run_quench(&spec, &base, &opts, &src, &SpectralSum::default()).unwrap();
        for (x, y) in a.series.values.iter().zip(&b.series.values) {
            assert!((x + y).abs() < 1e-10);
        }
        assert!((a.energy_numeric_over_j - a.energy_formula_over_j).abs() < 1e-6);
    }

    #[test]
    fn registry() {
        let r = PropagatorRegistry::default();
        assert_eq!(r.names(), vec!["rk4", "spectral"]);
        assert_eq!(r.get("rk4").unwrap().name(), "rk4");
        assert!(r.get("euler").is_err());
    }
}
