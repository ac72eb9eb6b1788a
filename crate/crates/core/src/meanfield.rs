//! Coherent-state mean field: the variational energy surface, its minima,
//! the quench energy of a symmetry-broken minimum, and the coherent state
//! itself expanded in the truncated basis.

use serde::Serialize;

use crate::contour::{count_sublevel_components, marching_squares, Polyline};
use crate::error::{DickeError, Result};
use crate::hilbert::ModelParams;

/// Largest photonic probability allowed beyond the cutoff.
pub const TAIL_TOLERANCE: f64 = 1e-12;

const GOLDEN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoherentParams {
    pub mu: f64,
    pub nu: f64,
}

/// `⟨μ,ν|H(λ)|μ,ν⟩`.
pub fn e_var(mu: f64, nu: f64, lambda: f64, params: &ModelParams) -> f64 {
    let j = params.j();
    let m2 = mu * mu;
    params.omega0 * j * (m2 - 1.0) / (m2 + 1.0)
        + params.omega * nu * nu
        + lambda * (2.0 * j).sqrt() * 4.0 * mu * nu / (m2 + 1.0)
}

/// The photonic parameter minimizing `e_var` at fixed `μ`.
pub fn optimal_nu(mu: f64, lambda: f64, params: &ModelParams) -> f64 {
    -2.0 * lambda * (2.0 * params.j()).sqrt() * mu / (params.omega * (mu * mu + 1.0))
}

fn reduced_energy(mu: f64, lambda: f64, params: &ModelParams) -> f64 {
    e_var(mu, optimal_nu(mu, lambda, params), lambda, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Minimum {
    pub mu: f64,
    pub nu: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinimumPair {
    /// The minimum with `μ > 0` (equal to `branch_minus` in the normal phase).
    pub branch_plus: Minimum,
    pub branch_minus: Minimum,
    /// Two distinct symmetric minima.
    pub degenerate: bool,
    /// `λ` equals `λ_c` to rounding.
    pub critical: bool,
}

impl MinimumPair {
    pub fn branch(&self, sign: i32) -> Minimum {
        if sign >= 0 {
            self.branch_plus
        } else {
            self.branch_minus
        }
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Minima of the variational surface. Above `λ_c` the `ν` direction is
/// eliminated analytically and the remaining 1-D problem is solved by golden
/// section on `μ ∈ (0, 1)`.
pub fn minimize_surface(lambda: f64, params: &ModelParams) -> Result<MinimumPair> {
    params.validate()?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(DickeError::InvalidInput(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let lc = params.lambda_c();
    let critical = (lambda - lc).abs() <= 4.0 * f64::EPSILON * lc;
    if lambda <= lc || critical {
        let origin = Minimum {
            mu: 0.0,
            nu: 0.0,
            energy: -params.omega0 * params.j(),
        };
        return Ok(MinimumPair {
            branch_plus: origin,
            branch_minus: origin,
            degenerate: false,
            critical,
        });
    }
    let mu = golden_section(|m| reduced_energy(m, lambda, params), 0.0, 1.0, GOLDEN_TOL);
    let nu = optimal_nu(mu, lambda, params);
    let energy = e_var(mu, nu, lambda, params);
    Ok(MinimumPair {
        branch_plus: Minimum { mu, nu, energy },
        branch_minus: Minimum {
            mu: -mu,
            nu: -nu,
            energy: e_var(-mu, -nu, lambda, params),
        },
        degenerate: true,
        critical: false,
    })
}

/// Brute-force minimum on the half plane `μ ≥ 0` by successive grid
/// refinement. Independent of the analytic reduction; used as a cross-check.
pub fn grid_minimum(lambda: f64, params: &ModelParams) -> Minimum {
    let nu_scale = (2.0 * params.j()).sqrt() * lambda.max(0.5) / params.omega;
    let (mut mu_lo, mut mu_hi) = (0.0, 4.0);
    let (mut nu_lo, mut nu_hi) = (-2.0 * nu_scale, 2.0 * nu_scale);
    let steps = 64;
    let mut best = Minimum {
        mu: 0.0,
        nu: 0.0,
        energy: e_var(0.0, 0.0, lambda, params),
    };
    for _ in 0..40 {
        let (dm, dn) = (
            (mu_hi - mu_lo) / steps as f64,
            (nu_hi - nu_lo) / steps as f64,
        );
        for a in 0..=steps {
            for b in 0..=steps {
                let (mu, nu) = (mu_lo + a as f64 * dm, nu_lo + b as f64 * dn);
                let e = e_var(mu, nu, lambda, params);
                if e < best.energy {
                    best = Minimum { mu, nu, energy: e };
                }
            }
        }
        mu_lo = (best.mu - 4.0 * dm).max(0.0);
        mu_hi = best.mu + 4.0 * dm;
        nu_lo = best.nu - 4.0 * dn;
        nu_hi = best.nu + 4.0 * dn;
    }
    best
}

/// Energy of the `λ_i` minimum under `H(λ_f)`.
pub fn quench_energy(lambda_i: f64, lambda_f: f64, params: &ModelParams) -> Result<f64> {
    params.validate()?;
    let lc = params.lambda_c();
    if !(lambda_i > lc) {
        return Err(DickeError::InvalidInput(format!(
            "quench energy needs a superradiant initial coupling: lambda_i = {lambda_i} <= lambda_c = {lc}"
        )));
    }
    if !lambda_f.is_finite() {
        return Err(DickeError::InvalidInput("lambda_f must be finite".into()));
    }
    let j = params.j();
    let (w, w0) = (params.omega, params.omega0);
    let (li2, lc2) = (lambda_i * lambda_i, lc * lc);
    let excess = (li2 * li2 - lc2 * lc2) / (w * li2);
    Ok(-w0 * j * (lc2 / li2) + 2.0 * j * excess - 4.0 * j * (lambda_f / lambda_i) * excess)
}

/// `E_var / J` sampled on a uniform `(μ, ν)` grid.
#[derive(Debug, Clone, Serialize)]
pub struct SurfaceGrid {
    pub lambda: f64,
    pub mu_axis: Vec<f64>,
    pub nu_axis: Vec<f64>,
    /// Row-major, `μ` fastest: `values[i_nu * mu_axis.len() + i_mu]`.
    pub values: Vec<f64>,
    /// Minimum over the `ν` range of `E/J` midway between adjacent columns.
    #[serde(skip)]
    pub gap_floor: Vec<f64>,
}

/// Level-set shape of `E/J = -1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CriticalLevelShape {
    /// Sublevel set below `-1` is empty; the level is the single minimum.
    Point,
    /// Two disjoint wells separated by a saddle.
    SaddleBearing,
    /// Anything else the grid resolves (e.g. ranges too narrow).
    Other(usize),
}

pub fn axis(range: (f64, f64), points: usize) -> Vec<f64> {
    let (lo, hi) = range;
    if points == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

impl SurfaceGrid {
    /// Symmetric ranges wide enough to hold both wells below `E/J = -1`.
    pub fn default_ranges(lambda: f64, params: &ModelParams) -> ((f64, f64), (f64, f64)) {
        let lc = params.lambda_c();
        let edge = ((lambda / lc).powi(2) - 1.0).max(0.0).sqrt();
        let mu = (1.5 * edge).max(1.0);
        let nu = (1.5 * lambda * (2.0 * params.j()).sqrt() / params.omega).max(1.0);
        ((-mu, mu), (-nu, nu))
    }

    /// Connected components of `{E/J < level}` on the grid.
    ///
    /// At fixed `μ` the energy is a convex quadratic in `ν`, so every column
    /// meets the set in at most one interval and the components are the runs
    /// of columns holding a point below the level. Adjacent columns are split
    /// when the exact column minimum between them reaches the level. Counting
    /// by columns keeps thin diagonal valleys from breaking into pixel
    /// fragments.
    pub fn components_below(&self, level: f64) -> usize {
        let nm = self.mu_axis.len();
        let mut runs = 0;
        let mut prev = false;
        for i in 0..nm {
            let hit = self.values.iter().skip(i).step_by(nm).any(|&v| v < level);
            let linked = i > 0 && prev && self.gap_floor.get(i - 1).is_none_or(|&f| f < level);
            if hit && !linked {
                runs += 1;
            }
            prev = hit;
        }
        runs
    }

    /// Four-connected component count of the raw grid, without the column
    /// structure.
    pub fn grid_components_below(&self, level: f64) -> usize {
        count_sublevel_components(&self.values, self.mu_axis.len(), self.nu_axis.len(), level)
    }

    pub fn critical_level_shape(&self) -> CriticalLevelShape {
        match self.components_below(-1.0) {
            0 => CriticalLevelShape::Point,
            2 => CriticalLevelShape::SaddleBearing,
            k => CriticalLevelShape::Other(k),
        }
    }

    pub fn level_curves(&self, level: f64) -> Vec<Polyline> {
        marching_squares(&self.values, &self.mu_axis, &self.nu_axis, level)
    }
}

pub fn surface_grid(
    lambda: f64,
    mu_range: (f64, f64),
    nu_range: (f64, f64),
    resolution: usize,
    params: &ModelParams,
) -> Result<SurfaceGrid> {
    params.validate()?;
    if resolution == 0 {
        return Err(DickeError::InvalidInput(
            "resolution must be positive".into(),
        ));
    }
    let mu_axis = axis(mu_range, resolution);
    let nu_axis = axis(nu_range, resolution);
    let j = params.j();
    let mut values = Vec::with_capacity(resolution * resolution);
    for &nu in &nu_axis {
        for &mu in &mu_axis {
            values.push(e_var(mu, nu, lambda, params) / j);
        }
    }
    let (nu_lo, nu_hi) = (
        nu_axis[0].min(nu_axis[resolution - 1]),
        nu_axis[0].max(nu_axis[resolution - 1]),
    );
    let gap_floor = mu_axis
        .windows(2)
        .map(|w| {
            let mu = 0.5 * (w[0] + w[1]);
            let nu = optimal_nu(mu, lambda, params).clamp(nu_lo, nu_hi);
            e_var(mu, nu, lambda, params) / j
        })
        .collect();
    Ok(SurfaceGrid {
        lambda,
        mu_axis,
        nu_axis,
        values,
        gap_floor,
    })
}

/// `E(λ_i, λ_f) / J` over a grid, `λ_f` fastest.
#[derive(Debug, Clone, Serialize)]
pub struct QuenchGrid {
    pub lambda_i_axis: Vec<f64>,
    pub lambda_f_axis: Vec<f64>,
    pub values: Vec<f64>,
    /// The `E/J = -1` contour in `(λ_f, λ_i)` coordinates.
    pub critical_contour: Vec<Polyline>,
}

pub fn quench_energy_grid(
    lambda_i_range: (f64, f64),
    lambda_f_range: (f64, f64),
    resolution: usize,
    params: &ModelParams,
) -> Result<QuenchGrid> {
    if resolution == 0 {
        return Err(DickeError::InvalidInput(
            "resolution must be positive".into(),
        ));
    }
    if !(lambda_i_range.0 > params.lambda_c()) {
        return Err(DickeError::InvalidInput(format!(
            "lambda_i range must lie above lambda_c = {}",
            params.lambda_c()
        )));
    }
    let lambda_i_axis = axis(lambda_i_range, resolution);
    let lambda_f_axis = axis(lambda_f_range, resolution);
    let j = params.j();
    let mut values = Vec::with_capacity(resolution * resolution);
    for &li in &lambda_i_axis {
        for &lf in &lambda_f_axis {
            values.push(quench_energy(li, lf, params)? / j);
        }
    }
    let critical_contour = marching_squares(&values, &lambda_f_axis, &lambda_i_axis, -1.0);
    Ok(QuenchGrid {
        lambda_i_axis,
        lambda_f_axis,
        values,
        critical_contour,
    })
}

fn ln_factorial(n: u32) -> f64 {
    (1..=n).map(|k| f64::from(k).ln()).sum()
}

/// Poisson weight `e^{-x} x^n / n!` for `x = ν²`.
fn photon_weight(nu2: f64, n: u32) -> f64 {
    if nu2 == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (-nu2 + f64::from(n) * nu2.ln() - ln_factorial(n)).exp()
}

/// Photonic probability beyond `n_max`.
pub fn photon_tail(nu: f64, n_max: u32) -> f64 {
    let nu2 = nu * nu;
    let mut tail = 0.0;
    let mut n = n_max + 1;
    // terms decay geometrically once n > ν²
    loop {
        let p = photon_weight(nu2, n);
        tail += p;
        if f64::from(n) > nu2 && (p == 0.0 || p < 1e-17 * tail) {
            break;
        }
        n += 1;
    }
    tail
}

/// `|μ,ν⟩` in the full n-major basis, renormalized after truncation.
pub fn coherent_state_vector(mu: f64, nu: f64, params: &ModelParams) -> Result<Vec<f64>> {
    params.validate()?;
    if !(mu.is_finite() && nu.is_finite()) {
        return Err(DickeError::InvalidInput(
            "coherent parameters must be finite".into(),
        ));
    }
    let tail = photon_tail(nu, params.n_max);
    if tail >= TAIL_TOLERANCE {
        return Err(DickeError::CutoffTooSmall {
            n_max: params.n_max,
            reason: format!("photon tail probability {tail:.3e} for nu = {nu}"),
        });
    }
    let na = params.n_atoms;
    let j = params.j();
    let m2 = mu * mu;
    // atomic amplitudes, k = m + J
    let atomic: Vec<f64> = (0..=na)
        .map(|k| {
            if mu == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            let ln_binom = ln_factorial(na) - ln_factorial(k) - ln_factorial(na - k);
            let mag = (0.5 * ln_binom + f64::from(k) * mu.abs().ln() - j * (1.0 + m2).ln()).exp();
            if mu < 0.0 && k % 2 == 1 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    let nu2 = nu * nu;
    let photonic: Vec<f64> = (0..=params.n_max)
        .map(|n| {
            let mag = photon_weight(nu2, n).sqrt();
            if nu < 0.0 && n % 2 == 1 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    let mut v = Vec::with_capacity(params.full_dim());
    for p in &photonic {
        for a in &atomic {
            v.push(p * a);
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    Ok(v)
}
