//! Doublet-gap maps, the critical energy line, finite-size fits and photon
//! cutoff certification.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::eigensolver::{Spectrum, SpectrumSource};
use crate::error::{DickeError, Result};
use crate::hilbert::{ModelParams, Sector, Subspace, DEFAULT_DIM_LIMIT};

pub const DEFAULT_K_ERR: f64 = 1e-6;
pub const DEFAULT_GROWTH: f64 = 0.2;
pub const DEFAULT_CUTOFF_TOL: f64 = 1e-8;
/// Pairs this far past the first crossing must stay above `k_err`.
pub const MISALIGNMENT_BUFFER: usize = 10;

/// One index-paired doublet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapEntry {
    pub index: usize,
    pub energy_over_j: f64,
    pub gap: f64,
    /// `E⁺` was too close to zero and the absolute difference over `ω0` was used.
    pub guarded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSlice {
    pub lambda: f64,
    pub n_max: u32,
    pub entries: Vec<GapEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoubletGapMap {
    pub n_atoms: u32,
    pub slices: Vec<LambdaSlice>,
}

impl DoubletGapMap {
    pub fn lambda_grid(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.lambda).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalLine {
    pub n_atoms: u32,
    pub k_err: f64,
    pub lambda_c: f64,
    /// `(λ, E_c/J)`, only for λ above the critical coupling.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingFit {
    pub n_atoms: u32,
    pub a: f64,
    pub b: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub asymptote: f64,
    pub amplitude: f64,
    pub exponent: f64,
    pub asymptote_fixed: bool,
    /// RMS residual.
    pub residual: f64,
    /// Parameter covariance in `(asymptote, amplitude, exponent)` order, or
    /// `(amplitude, exponent)` with a fixed asymptote. `None` without spare
    /// degrees of freedom.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Constant input: amplitude and exponent are not identifiable.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CriticalEnergy {
    /// λ ≤ λc: parity is good at every energy.
    NormalPhase,
    Crossing {
        index: usize,
        energy_over_j: f64,
    },
}

/// Pair past the buffer that dropped back below `k_err`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Misalignment {
    pub lambda: f64,
    pub index: usize,
    pub energy_over_j: f64,
    pub gap: f64,
}

/// Relative doublet gaps from two sorted eigenvalue lists.
pub fn doublet_gap_values(plus: &[f64], minus: &[f64], omega0: f64, j: f64) -> Vec<GapEntry> {
    plus.iter()
        .zip(minus)
        .enumerate()
        .map(|(index, (&ep, &em))| {
            let guarded = ep.abs() < 1e-12 * omega0;
            let gap = if guarded {
                (ep - em).abs() / omega0
            } else {
                ((ep - em) / ep).abs()
            };
            GapEntry {
                index,
                energy_over_j: 0.5 * (ep + em) / j,
                gap,
                guarded,
            }
        })
        .collect()
}

/// Doublet gaps of two sector spectra of the same model.
pub fn doublet_gaps(
    params: &ModelParams,
    plus: &Spectrum,
    minus: &Spectrum,
) -> Result<Vec<GapEntry>> {
    expect_sector(plus.subspace, Sector::Plus)?;
    expect_sector(minus.subspace, Sector::Minus)?;
    let fp = params.fingerprint();
    if plus.fingerprint != fp || minus.fingerprint != fp {
        return Err(DickeError::FingerprintMismatch);
    }
    Ok(doublet_gap_values(
        &plus.eigenvalues,
        &minus.eigenvalues,
        params.omega0,
        params.j(),
    ))
}

fn expect_sector(subspace: Subspace, expected: Sector) -> Result<()> {
    match subspace {
        Subspace::Parity(s) if s == expected => Ok(()),
        Subspace::Parity(got) => Err(DickeError::SectorMismatch { expected, got }),
        Subspace::Full => Err(DickeError::InvalidInput(
            "doublet gaps need sector spectra, got the full space".into(),
        )),
    }
}

/// First pair above `k_err`.
pub fn first_crossing(entries: &[GapEntry], k_err: f64) -> Option<&GapEntry> {
    entries.iter().find(|e| e.gap > k_err)
}

/// Critical energy read off a gap list.
pub fn critical_energy_from_gaps(
    params: &ModelParams,
    entries: &[GapEntry],
    k_err: f64,
) -> Result<CriticalEnergy> {
    if !(k_err > 0.0) {
        return Err(DickeError::InvalidInput(format!(
            "k_err must be positive, got {k_err}"
        )));
    }
    if params.lambda <= params.lambda_c() {
        return Ok(CriticalEnergy::NormalPhase);
    }
    match first_crossing(entries, k_err) {
        Some(e) => Ok(CriticalEnergy::Crossing {
            index: e.index,
            energy_over_j: e.energy_over_j,
        }),
        None => Err(DickeError::CutoffTooSmall {
            n_max: params.n_max,
            reason: format!("no doublet gap exceeds k_err={k_err}"),
        }),
    }
}

/// Critical energy at the cutoff carried by `params`.
pub fn critical_energy(
    params: &ModelParams,
    k_err: f64,
    source: &dyn SpectrumSource,
) -> Result<CriticalEnergy> {
    params.validate()?;
    if params.lambda <= params.lambda_c() {
        return Ok(CriticalEnergy::NormalPhase);
    }
    let plus = source.eigenvalues(params, Subspace::Parity(Sector::Plus))?;
    let minus = source.eigenvalues(params, Subspace::Parity(Sector::Minus))?;
    let entries = doublet_gap_values(&plus, &minus, params.omega0, params.j());
    critical_energy_from_gaps(params, &entries, k_err)
}

/// Pairs more than `buffer` indices past the first crossing whose gap fell
/// back below `k_err`.
pub fn misalignments(
    lambda: f64,
    entries: &[GapEntry],
    k_err: f64,
    buffer: usize,
) -> Vec<Misalignment> {
    let Some(first) = first_crossing(entries, k_err) else {
        return Vec::new();
    };
    entries
        .iter()
        .skip(first.index + buffer + 1)
        .filter(|e| e.gap <= k_err)
        .map(|e| Misalignment {
            lambda,
            index: e.index,
            energy_over_j: e.energy_over_j,
            gap: e.gap,
        })
        .collect()
}

/// Starting cutoff: `max(64, ceil(4·2J·λ²/ω²))`.
pub fn initial_cutoff(params: &ModelParams) -> u32 {
    let n = (4.0 * 2.0 * params.j() * params.lambda * params.lambda
        / (params.omega * params.omega))
        .ceil();
    (n as u32).max(64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffReport {
    pub n_max: u32,
    /// Cutoffs tried, in order.
    pub tested: Vec<u32>,
    /// Largest shift of a windowed eigenvalue under growth at the accepted cutoff.
    pub max_shift: f64,
    /// Sector eigenvalues at the accepted cutoff.
    #[serde(skip)]
    pub plus: Vec<f64>,
    #[serde(skip)]
    pub minus: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffSearch {
    /// Only eigenvalues with `E/J` at or below this are checked.
    pub window_top: f64,
    pub growth: f64,
    pub tol: f64,
    pub dim_limit: usize,
}

impl CutoffSearch {
    pub fn new(window_top: f64) -> Self {
        Self {
            window_top,
            growth: DEFAULT_GROWTH,
            tol: DEFAULT_CUTOFF_TOL,
            dim_limit: DEFAULT_DIM_LIMIT,
        }
    }
}

fn sector_values(
    params: &ModelParams,
    source: &dyn SpectrumSource,
) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((
        source.eigenvalues(params, Subspace::Parity(Sector::Plus))?,
        source.eigenvalues(params, Subspace::Parity(Sector::Minus))?,
    ))
}

fn window_shift(a: &[f64], b: &[f64], top: f64) -> f64 {
    a.iter()
        .zip(b)
        .take_while(|(x, _)| **x <= top)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Doubling search for a cutoff whose low-lying spectrum is stable when the
/// cutoff grows by `growth`. When a doubled cutoff no longer fits under the
/// dimension cap, the largest cutoff that does is tried last.
pub fn cutoff_convergence(
    params: &ModelParams,
    search: &CutoffSearch,
    source: &dyn SpectrumSource,
) -> Result<CutoffReport> {
    params.validate()?;
    if !(search.growth > 0.0) {
        return Err(DickeError::InvalidInput(format!(
            "growth must be positive, got {}",
            search.growth
        )));
    }
    let fits = |n: u32| params.with_n_max(n).full_dim().div_ceil(2) <= search.dim_limit;
    let grow = |n: u32| (((n as f64) * (1.0 + search.growth)).ceil() as u32).max(n + 1);
    let top = search.window_top * params.j();
    let mut n = initial_cutoff(params);
    let mut tested = Vec::new();
    loop {
        if !fits(n) {
            return Err(DickeError::CutoffNotConverged { n_max: n });
        }
        tested.push(n);
        let at = params.with_n_max(n);
        let (plus, minus) = sector_values(&at, source)?;
        if search.tol.is_infinite() {
            return Ok(CutoffReport {
                n_max: n,
                tested,
                max_shift: 0.0,
                plus,
                minus,
            });
        }
        let grown = grow(n);
        if !fits(grown) {
            return Err(DickeError::CutoffNotConverged { n_max: n });
        }
        let (gp, gm) = sector_values(&params.with_n_max(grown), source)?;
        let shift = window_shift(&plus, &gp, top).max(window_shift(&minus, &gm, top));
        if shift < search.tol {
            return Ok(CutoffReport {
                n_max: n,
                tested,
                max_shift: shift,
                plus,
                minus,
            });
        }
        let doubled = n.saturating_mul(2);
        n = if fits(grow(doubled)) {
            doubled
        } else {
            let (mut lo, mut hi) = (n, doubled);
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if fits(grow(mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if lo == n {
                return Err(DickeError::CutoffNotConverged { n_max: n });
            }
            lo
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CutoffPolicy {
    Fixed(u32),
    Converged(CutoffSearch),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseDiagram {
    pub map: DoubletGapMap,
    pub line: CriticalLine,
    pub misalignments: Vec<Misalignment>,
}

/// Doublet-gap map and critical line over a λ grid. λ points run in parallel
/// and are collected in grid order.
pub fn scan_phase_diagram(
    template: &ModelParams,
    lambdas: &[f64],
    k_err: f64,
    cutoff: CutoffPolicy,
    source: &dyn SpectrumSource,
) -> Result<PhaseDiagram> {
    if lambdas.is_empty() {
        return Err(DickeError::InvalidInput("empty lambda grid".into()));
    }
    if !(k_err > 0.0) {
        return Err(DickeError::InvalidInput(format!(
            "k_err must be positive, got {k_err}"
        )));
    }
    let slices: Vec<(LambdaSlice, Option<CriticalEnergy>)> = lambdas
        .par_iter()
        .map(|&lambda| {
            let p = template.with_lambda(lambda);
            p.validate()?;
            let (n_max, plus, minus) = match cutoff {
                CutoffPolicy::Fixed(n) => {
                    let (a, b) = sector_values(&p.with_n_max(n), source)?;
                    (n, a, b)
                }
                CutoffPolicy::Converged(search) => {
                    let r = cutoff_convergence(&p, &search, source)?;
                    (r.n_max, r.plus, r.minus)
                }
            };
            let p = p.with_n_max(n_max);
            let entries = doublet_gap_values(&plus, &minus, p.omega0, p.j());
            let ec = match critical_energy_from_gaps(&p, &entries, k_err) {
                Ok(ec) => Some(ec),
                Err(DickeError::CutoffTooSmall { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok((
                LambdaSlice {
                    lambda,
                    n_max,
                    entries,
                },
                ec,
            ))
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::new();
    let mut misaligned = Vec::new();
    for (slice, ec) in &slices {
        match ec {
            Some(CriticalEnergy::Crossing { energy_over_j, .. }) => {
                points.push((slice.lambda, *energy_over_j));
                misaligned.extend(misalignments(
                    slice.lambda,
                    &slice.entries,
                    k_err,
                    MISALIGNMENT_BUFFER,
                ));
            }
            Some(CriticalEnergy::NormalPhase) => {}
            None => {
                return Err(DickeError::CutoffTooSmall {
                    n_max: slice.n_max,
                    reason: format!(
                        "no doublet gap exceeds k_err={k_err} at lambda={}",
                        slice.lambda
                    ),
                })
            }
        }
    }
    Ok(PhaseDiagram {
        map: DoubletGapMap {
            n_atoms: template.n_atoms,
            slices: slices.into_iter().map(|(s, _)| s).collect(),
        },
        line: CriticalLine {
            n_atoms: template.n_atoms,
            k_err,
            lambda_c: template.lambda_c(),
            points,
        },
        misalignments: misaligned,
    })
}

/// Ordinary least squares for `E_c/J = A + B λ`.
pub fn fit_critical_line(line: &CriticalLine) -> Result<ScalingFit> {
    let pts = &line.points;
    if pts.len() < 3 {
        return Err(DickeError::Fit(format!(
            "need at least 3 points, got {}",
            pts.len()
        )));
    }
    if let Some(&(l, _)) = pts.iter().find(|(l, _)| *l <= line.lambda_c) {
        return Err(DickeError::Fit(format!(
            "point at lambda={l} is not above the critical coupling"
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * n {
        return Err(DickeError::Fit(
            "rank deficient: all lambda values are equal".into(),
        ));
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum();
    Ok(ScalingFit {
        n_atoms: line.n_atoms,
        a,
        b,
        residual: (rss / n).sqrt(),
    })
}

const ALPHA_RANGE: (f64, f64) = (1e-3, 20.0);

/// Linear coefficients for fixed `alpha`, returning `(coeffs, rss)`.
fn linear_part(ns: &[f64], ys: &[f64], alpha: f64, fixed: Option<f64>) -> (Vec<f64>, f64) {
    let cols = if fixed.is_some() { 1 } else { 2 };
    let x = DMatrix::from_fn(ns.len(), cols, |r, c| {
        if c + 1 == cols {
            ns[r].powf(-alpha)
        } else {
            1.0
        }
    });
    let y = DVector::from_iterator(ys.len(), ys.iter().map(|v| v - fixed.unwrap_or(0.0)));
    let coef = x
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .expect("svd with both factors");
    let rss = (&x * &coef - &y).norm_squared();
    (coef.iter().copied().collect(), rss)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + c.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Least squares for `c(N) = c∞ + a·N^(−α)`, optionally with `c∞` fixed.
/// The linear parameters are eliminated for each α, α is bracketed on a
/// log grid, refined by golden section and polished with Gauss-Newton.
pub fn fit_power_law(ns: &[f64], cs: &[f64], asymptote_fixed: Option<f64>) -> Result<PowerLawFit> {
    if ns.len() != cs.len() {
        return Err(DickeError::Fit("N and c series differ in length".into()));
    }
    if ns.len() < 3 {
        return Err(DickeError::Fit(format!(
            "need at least 3 points, got {}",
            ns.len()
        )));
    }
    if ns.windows(2).any(|w| !(w[1] > w[0])) || ns[0] <= 0.0 {
        return Err(DickeError::Fit(
            "N must be positive and strictly increasing".into(),
        ));
    }
    if cs.iter().any(|c| !c.is_finite()) {
        return Err(DickeError::Fit("non-finite value in series".into()));
    }
    let scale = cs.iter().fold(1.0f64, |m, c| m.max(c.abs()));
    let spread = cs.iter().fold(f64::NEG_INFINITY, |m, &c| m.max(c))
        - cs.iter().fold(f64::INFINITY, |m, &c| m.min(c));
    let fixed_flat =
        asymptote_fixed.is_some_and(|c| cs.iter().all(|v| (v - c).abs() <= 1e-12 * scale));
    if (asymptote_fixed.is_none() && spread <= 1e-12 * scale) || fixed_flat {
        let mean = cs.iter().sum::<f64>() / cs.len() as f64;
        let mean = if spread == 0.0 { cs[0] } else { mean };
        return Ok(PowerLawFit {
            asymptote: asymptote_fixed.unwrap_or(mean),
            amplitude: 0.0,
            exponent: f64::NAN,
            asymptote_fixed: asymptote_fixed.is_some(),
            residual: 0.0,
            covariance: None,
            degenerate: true,
        });
    }

    let rss = |alpha: f64| linear_part(ns, cs, alpha, asymptote_fixed).1;
    let grid: Vec<f64> = (0..=200)
        .map(|k| ALPHA_RANGE.0 * (ALPHA_RANGE.1 / ALPHA_RANGE.0).powf(k as f64 / 200.0))
        .collect();
    let values: Vec<f64> = grid.iter().map(|&a| rss(a)).collect();
    let best = (0..grid.len())
        .min_by(|&i, &j| values[i].total_cmp(&values[j]))
        .unwrap();
    if best == 0 || best == grid.len() - 1 {
        return Err(DickeError::Fit(format!(
            "exponent ran to the edge of [{}, {}] (best grid alpha {}, rss {:.3e}); initial guesses c_inf={}, a={}",
            ALPHA_RANGE.0,
            ALPHA_RANGE.1,
            grid[best],
            values[best],
            asymptote_fixed.unwrap_or(cs[cs.len() - 1]),
            cs[0] - cs[cs.len() - 1],
        )));
    }
    let mut alpha = golden_min(rss, grid[best - 1], grid[best + 1], 1e-12);
    let (mut coef, _) = linear_part(ns, cs, alpha, asymptote_fixed);

    // Gauss-Newton polish on the full parameter vector
    let model = |c: &[f64], alpha: f64| -> (Vec<f64>, DMatrix<f64>) {
        let (c_inf, amp) = match asymptote_fixed {
            Some(f) => (f, c[0]),
            None => (c[0], c[1]),
        };
        let cols = if asymptote_fixed.is_some() { 2 } else { 3 };
        let mut jac = DMatrix::zeros(ns.len(), cols);
        let r = ns
            .iter()
            .zip(cs)
            .enumerate()
            .map(|(k, (&n, &y))| {
                let p = n.powf(-alpha);
                let mut col = 0;
                if asymptote_fixed.is_none() {
                    jac[(k, 0)] = 1.0;
                    col = 1;
                }
                jac[(k, col)] = p;
                jac[(k, col + 1)] = -amp * n.ln() * p;
                y - c_inf - amp * p
            })
            .collect();
        (r, jac)
    };
    for _ in 0..20 {
        let (r, jac) = model(&coef, alpha);
        let rv = DVector::from_vec(r);
        let Ok(step) = jac.clone().svd(true, true).solve(&rv, 1e-14) else {
            break;
        };
        let np = coef.len();
        for (k, c) in coef.iter_mut().enumerate() {
            *c += step[k];
        }
        alpha += step[np];
        if step.norm() < 1e-15 * (1.0 + alpha.abs()) {
            break;
        }
    }
    if !(alpha.is_finite() && coef.iter().all(|c| c.is_finite())) {
        return Err(DickeError::Fit("Gauss-Newton polish diverged".into()));
    }

    let (r, jac) = model(&coef, alpha);
    let rss: f64 = r.iter().map(|x| x * x).sum();
    let p = jac.ncols();
    let covariance = (ns.len() > p)
        .then(|| (jac.transpose() * &jac).try_inverse())
        .flatten()
        .map(|inv| {
            let s2 = rss / (ns.len() - p) as f64;
            (0..p)
                .map(|i| (0..p).map(|j| inv[(i, j)] * s2).collect())
                .collect()
        });
    let (asymptote, amplitude) = match asymptote_fixed {
        Some(f) => (f, coef[0]),
        None => (coef[0], coef[1]),
    };
    Ok(PowerLawFit {
        asymptote,
        amplitude,
        exponent: alpha,
        asymptote_fixed: asymptote_fixed.is_some(),
        residual: (rss / ns.len() as f64).sqrt(),
        covariance,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolver::{solve_subspace, DirectSolve, HouseholderQl};

    fn plus() -> Subspace {
        Subspace::Parity(Sector::Plus)
    }
    fn minus() -> Subspace {
        Subspace::Parity(Sector::Minus)
    }

    #[test]
    fn ground_pair_at_zero_coupling() {
        let p = ModelParams::resonant(2, 0.0, 4);
        let a = solve_subspace(&p, plus(), &HouseholderQl).unwrap();
        let b = solve_subspace(&p, minus(), &HouseholderQl).unwrap();
        let g = doublet_gaps(&p, &a, &b).unwrap();
        assert_eq!(g[0].gap, 1.0);
        assert_eq!(g[0].energy_over_j, -0.5);
        assert_eq!(g.len(), a.dim().min(b.dim()));
        assert!(g.iter().all(|e| e.gap >= 0.0));
    }

    #[test]
    fn sector_and_fingerprint_errors() {
        let p = ModelParams::resonant(2, 0.3, 4);
        let a = solve_subspace(&p, plus(), &HouseholderQl).unwrap();
        let b = solve_subspace(&p, minus(), &HouseholderQl).unwrap();
        assert!(matches!(
            doublet_gaps(&p, &b, &a),
            Err(DickeError::SectorMismatch { .. })
        ));
        let q = p.with_lambda(0.4);
        let c = solve_subspace(&q, minus(), &HouseholderQl).unwrap();
        assert_eq!(
            doublet_gaps(&p, &a, &c),
            Err(DickeError::FingerprintMismatch)
        );
    }

    #[test]
    fn degenerate_doublet_and_guard() {
        let g = doublet_gap_values(&[-2.0, 0.0, 3.0], &[-2.0, 1e-3, 3.5], 1.0, 1.0);
        assert_eq!(g[0].gap, 0.0);
        assert!(g[1].guarded);
        assert!((g[1].gap - 1e-3).abs() < 1e-15);
        assert!(!g[2].guarded);
    }

    #[test]
    fn gaps_are_scale_invariant() {
        let p = [-3.1, -2.0, -0.7, 0.4, 2.2];
        let m = [-3.1000001, -1.9, -0.8, 0.5, 2.0];
        let base = doublet_gap_values(&p, &m, 1.0, 1.0);
        for s in [1e-3, 7.5, 1e4] {
            let ps: Vec<f64> = p.iter().map(|x| x * s).collect();
            let ms: Vec<f64> = m.iter().map(|x| x * s).collect();
            let scaled = doublet_gap_values(&ps, &ms, s, 1.0);
            for (a, b) in base.iter().zip(&scaled) {
                assert!((a.gap - b.gap).abs() <= 1e-8 * a.gap);
            }
        }
    }

    #[test]
    fn normal_phase_has_no_critical_energy() {
        let p = ModelParams::resonant(8, 0.25, 32);
        let r = critical_energy(&p, DEFAULT_K_ERR, &DirectSolve::default()).unwrap();
        assert_eq!(r, CriticalEnergy::NormalPhase);
        let scan = scan_phase_diagram(
            &p,
            &[0.25],
            DEFAULT_K_ERR,
            CutoffPolicy::Fixed(32),
            &DirectSolve::default(),
        )
        .unwrap();
        assert!(scan.line.points.is_empty());
        assert!(scan.map.slices[0]
            .entries
            .iter()
            .all(|e| e.gap > DEFAULT_K_ERR));
    }

    #[test]
    fn smallest_system_scans() {
        let p = ModelParams::resonant(1, 0.0, 0);
        let scan = scan_phase_diagram(
            &p,
            &[0.1, 0.3],
            DEFAULT_K_ERR,
            CutoffPolicy::Fixed(0),
            &DirectSolve::default(),
        )
        .unwrap();
        assert_eq!(scan.map.slices.len(), 2);
        assert_eq!(scan.map.slices[0].entries.len(), 1);
        assert!(scan_phase_diagram(
            &p,
            &[],
            1e-6,
            CutoffPolicy::Fixed(0),
            &DirectSolve::default()
        )
        .is_err());
    }

    #[test]
    fn threshold_robustness() {
        let p = ModelParams::resonant(10, 1.2, 0);
        let src = DirectSolve::default();
        let r = cutoff_convergence(&p, &CutoffSearch::new(0.0), &src).unwrap();
        let p = p.with_n_max(r.n_max);
        let g = doublet_gap_values(&r.plus, &r.minus, 1.0, p.j());
        let at = |k| match critical_energy_from_gaps(&p, &g, k).unwrap() {
            CriticalEnergy::Crossing {
                index,
                energy_over_j,
            } => (index, energy_over_j),
            CriticalEnergy::NormalPhase => panic!(),
        };
        let (i5, e5) = at(1e-5);
        let (i7, e7) = at(1e-7);
        let spacing = (g[i5 + 1].energy_over_j - g[i5].energy_over_j)
            .abs()
            .max((g[i7 + 1].energy_over_j - g[i7].energy_over_j).abs());
        assert!((e5 - e7).abs() < 20.0 * spacing, "{e5} {e7} {spacing}");
        assert!(e7 <= e5);
    }

    #[test]
    fn cutoff_search() {
        let src = DirectSolve::default();
        let p = ModelParams::resonant(6, 0.0, 0);
        let r = cutoff_convergence(&p, &CutoffSearch::new(2.0), &src).unwrap();
        assert_eq!(r.n_max, 64);
        assert_eq!(r.tested, vec![64]);

        let p = ModelParams::resonant(6, 1.5, 0);
        let mut s = CutoffSearch::new(1.0);
        s.tol = f64::INFINITY;
        assert_eq!(
            cutoff_convergence(&p, &s, &src).unwrap().n_max,
            initial_cutoff(&p)
        );

        let s = CutoffSearch::new(0.0);
        let r = cutoff_convergence(&p, &s, &src).unwrap();
        assert!(r.max_shift < 1e-8);

        let mut s = CutoffSearch::new(1.0);
        s.dim_limit = 100;
        assert!(matches!(
            cutoff_convergence(&p, &s, &src),
            Err(DickeError::CutoffNotConverged { .. })
        ));
    }

    #[test]
    fn cutoff_search_tries_largest_fitting_cutoff() {
        let src = DirectSolve::default();
        let p = ModelParams::resonant(6, 1.5, 0);
        let mut s = CutoffSearch::new(0.0);
        s.tol = 1e-30;
        s.dim_limit = 400;
        match cutoff_convergence(&p, &s, &src) {
            Err(DickeError::CutoffNotConverged { n_max }) => assert_eq!(n_max, 94),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn initial_cutoff_heuristic() {
        assert_eq!(initial_cutoff(&ModelParams::resonant(20, 1.41, 0)), 160);
        assert_eq!(initial_cutoff(&ModelParams::resonant(40, 2.0, 0)), 640);
        assert_eq!(initial_cutoff(&ModelParams::resonant(10, 0.5, 0)), 64);
    }

    #[test]
    fn misalignment_report() {
        let mut gaps = vec![0.0; 30];
        for g in gaps.iter_mut().skip(5) {
            *g = 1e-3;
        }
        gaps[12] = 1e-9;
        gaps[20] = 1e-9;
        let entries: Vec<GapEntry> = gaps
            .iter()
            .enumerate()
            .map(|(index, &gap)| GapEntry {
                index,
                energy_over_j: index as f64,
                gap,
                guarded: false,
            })
            .collect();
        let m = misalignments(1.0, &entries, 1e-6, 10);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].index, 20);
    }

    #[test]
    fn line_fit_exact() {
        let line = CriticalLine {
            n_atoms: 10,
            k_err: 1e-6,
            lambda_c: 0.5,
            points: (0..6)
                .map(|k| 0.6 + 0.3 * k as f64)
                .map(|l| (l, -1.0 + 0.2 * l))
                .collect(),
        };
        let f = fit_critical_line(&line).unwrap();
        assert!((f.a + 1.0).abs() < 1e-12);
        assert!((f.b - 0.2).abs() < 1e-12);
        assert!(f.residual < 1e-12);
        let flat = CriticalLine {
            points: vec![(1.0, -1.0), (1.0, -0.9), (1.0, -0.8)],
            ..line.clone()
        };
        assert!(fit_critical_line(&flat).is_err());
        let short = CriticalLine {
            points: vec![(1.0, -1.0), (1.1, -0.9)],
            ..line
        };
        assert!(fit_critical_line(&short).is_err());
    }

    #[test]
    fn power_law_recovers_exact_model() {
        let ns = [10.0, 16.0, 24.0, 32.0, 40.0];
        let cs: Vec<f64> = ns.iter().map(|n: &f64| -1.0 + 2.0 * n.powf(-0.5)).collect();
        let f = fit_power_law(&ns, &cs, None).unwrap();
        assert!((f.asymptote + 1.0).abs() < 1e-6, "{f:?}");
        assert!((f.amplitude - 2.0).abs() < 1e-6);
        assert!((f.exponent - 0.5).abs() < 1e-6);
        assert!(!f.degenerate);

        let g = fit_power_law(&ns, &cs, Some(-1.0)).unwrap();
        assert!((g.amplitude - 2.0).abs() < 1e-8);
        assert!((g.exponent - 0.5).abs() < 1e-8);
        assert_eq!(g.covariance.as_ref().map(|c| c.len()), Some(2));
    }

    #[test]
    fn power_law_constant_is_degenerate() {
        let f = fit_power_law(&[10.0, 20.0, 30.0], &[0.7; 3], None).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.asymptote, 0.7);
    }

    #[test]
    fn power_law_rejects_bad_input() {
        assert!(fit_power_law(&[10.0, 10.0, 20.0], &[1.0, 2.0, 3.0], None).is_err());
        assert!(fit_power_law(&[10.0, 20.0], &[1.0, 2.0], None).is_err());
    }
}
