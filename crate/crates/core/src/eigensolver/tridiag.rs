//! Householder reduction to tridiagonal form, implicit-shift QL, and the
//! bisection / inverse-iteration pair used for partial spectra.
//!
//! Dense matrices are column-major `n*n` buffers, element `(i, j)` at
//! `i + j*n`.

use super::NotConverged;

const MAX_QL_SWEEPS: usize = 60;

/// Symmetric tridiagonal matrix. `off[i]` couples `i` and `i+1`; `off` has
/// the same length as `diag` with the last entry unused.
#[derive(Debug, Clone)]
pub(crate) struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

/// Reflectors `H_k = I - tau_k v_k v_kᵀ` left in the lower part of the
/// reduced matrix; `v_k` has an implicit leading 1 at row `k+1`.
pub(crate) struct Reflectors {
    n: usize,
    a: Vec<f64>,
    tau: Vec<f64>,
}

/// Reduces the symmetric matrix held in `a` (both triangles) to tridiagonal
/// form `T = Qᵀ A Q`.
pub(crate) fn householder(mut a: Vec<f64>, n: usize) -> (Tridiagonal, Reflectors) {
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    let mut tau = vec![0.0; n.saturating_sub(2)];
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];

    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1;
        let col = k * n;
        let alpha = a[col + k + 1];
        let xnorm = a[col + k + 2..col + n]
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        diag[k] = a[col + k];
        if xnorm == 0.0 {
            off[k] = alpha;
            tau[k] = 0.0;
            continue;
        }
        let beta = -alpha.signum() * alpha.hypot(xnorm);
        let t = (beta - alpha) / beta;
        let scale = 1.0 / (alpha - beta);
        for x in &mut a[col + k + 2..col + n] {
            *x *= scale;
        }
        off[k] = beta;
        tau[k] = t;

        let v = &mut v[..m];
        v[0] = 1.0;
        v[1..].copy_from_slice(&a[col + k + 2..col + n]);

        // p = tau * A22 v
        let p = &mut p[..m];
        p.fill(0.0);
        for (jj, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            let c = (k + 1 + jj) * n + k + 1;
            for (pi, aij) in p.iter_mut().zip(&a[c..c + m]) {
                *pi += aij * vj;
            }
        }
        let mut pv = 0.0;
        for (pi, vi) in p.iter_mut().zip(v.iter()) {
            *pi *= t;
            pv += *pi * vi;
        }
        // w = p - (tau/2)(pᵀv) v, stored in p
        let half = 0.5 * t * pv;
        for (pi, vi) in p.iter_mut().zip(v.iter()) {
            *pi -= half * vi;
        }
        // A22 -= v wᵀ + w vᵀ
        for jj in 0..m {
            let (vj, wj) = (v[jj], p[jj]);
            let c = (k + 1 + jj) * n + k + 1;
            for ((aij, vi), wi) in a[c..c + m].iter_mut().zip(v.iter()).zip(p.iter()) {
                *aij -= vi * wj + wi * vj;
            }
        }
    }
    if n >= 2 {
        diag[n - 2] = a[(n - 2) * n + n - 2];
        off[n - 2] = a[(n - 2) * n + n - 1];
    }
    if n >= 1 {
        diag[n - 1] = a[(n - 1) * n + n - 1];
        off[n - 1] = 0.0;
    }
    (Tridiagonal { diag, off }, Reflectors { n, a, tau })
}

impl Reflectors {
    /// Explicit `Q`, column-major.
    pub fn accumulate(&self) -> Vec<f64> {
        let n = self.n;
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            q[i * n + i] = 1.0;
        }
        for k in (0..self.tau.len()).rev() {
            let t = self.tau[k];
            if t == 0.0 {
                continue;
            }
            let vcol = k * n;
            for j in k + 1..n {
                let c = j * n;
                let mut s = q[c + k + 1];
                for i in k + 2..n {
                    s += self.a[vcol + i] * q[c + i];
                }
                s *= t;
                q[c + k + 1] -= s;
                for i in k + 2..n {
                    q[c + i] -= s * self.a[vcol + i];
                }
            }
        }
        q
    }

    /// Overwrites `y` with `Q y`.
    pub fn apply(&self, y: &mut [f64]) {
        let n = self.n;
        for k in (0..self.tau.len()).rev() {
            let t = self.tau[k];
            if t == 0.0 {
                continue;
            }
            let vcol = k * n;
            let mut s = y[k + 1];
            for i in k + 2..n {
                s += self.a[vcol + i] * y[i];
            }
            s *= t;
            y[k + 1] -= s;
            for i in k + 2..n {
                y[i] -= s * self.a[vcol + i];
            }
        }
    }
}

/// Implicit-shift QL on a tridiagonal matrix. When `z` is given (column-major
/// `rows x n`) the rotations are accumulated into its columns, so on entry it
/// holds the basis that reduced the original matrix to `t`.
pub(crate) fn ql_implicit(
    t: &mut Tridiagonal,
    mut z: Option<(&mut [f64], usize)>,
) -> Result<(), NotConverged> {
    let n = t.diag.len();
    let d = &mut t.diag;
    let e = &mut t.off;
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_SWEEPS {
                return Err(NotConverged);
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if let Some((zbuf, rows)) = z.as_mut() {
                    let rows = *rows;
                    let (left, right) = zbuf.split_at_mut((i + 1) * rows);
                    let zi = &mut left[i * rows..];
                    let zi1 = &mut right[..rows];
                    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                        let f = *b;
                        *b = s * *a + c * f;
                        *a = c * *a - s * f;
                    }
                }
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

impl Tridiagonal {
    fn pivmin(&self) -> f64 {
        let m = self.off[..self.diag.len().saturating_sub(1)]
            .iter()
            .fold(1.0f64, |m, e| m.max(e * e));
        f64::MIN_POSITIVE * m
    }

    /// Number of eigenvalues strictly below `x`.
    pub fn count_below(&self, x: f64) -> usize {
        let pivmin = self.pivmin();
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.diag.len() {
            let e2 = if i == 0 {
                0.0
            } else {
                self.off[i - 1] * self.off[i - 1]
            };
            q = self.diag[i] - x - if i == 0 { 0.0 } else { e2 / q };
            if q.abs() < pivmin {
                q = -pivmin;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Gershgorin interval.
    pub fn bounds(&self) -> (f64, f64) {
        let n = self.diag.len();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let r = if i > 0 { self.off[i - 1].abs() } else { 0.0 }
                + if i + 1 < n { self.off[i].abs() } else { 0.0 };
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The `k`-th smallest eigenvalue (0-based) by bisection.
    pub fn bisect(&self, k: usize) -> f64 {
        let (mut lo, mut hi) = self.bounds();
        let span = hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE);
        lo -= 2.0 * f64::EPSILON * span + self.pivmin();
        hi += 2.0 * f64::EPSILON * span + self.pivmin();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Solves `(T - shift) x = b` in place, Gaussian elimination with
    /// partial pivoting.
    fn shifted_solve(&self, shift: f64, tiny: f64, b: &mut [f64]) {
        let n = self.diag.len();
        if n == 0 {
            return;
        }
        let mut ud = vec![0.0; n];
        let mut u1 = vec![0.0; n];
        let mut u2 = vec![0.0; n];
        // remaining row after each elimination step: `a` at column i, `c` at i+1
        let mut a = self.diag[0] - shift;
        let mut c = if n > 1 { self.off[0] } else { 0.0 };
        for i in 0..n - 1 {
            let below = self.off[i];
            let dn = self.diag[i + 1] - shift;
            let en = if i + 2 < n { self.off[i + 1] } else { 0.0 };
            if a.abs() >= below.abs() {
                if a == 0.0 {
                    a = tiny;
                }
                let l = below / a;
                ud[i] = a;
                u1[i] = c;
                b[i + 1] -= l * b[i];
                a = dn - l * c;
                c = en;
            } else {
                let l = a / below;
                ud[i] = below;
                u1[i] = dn;
                u2[i] = en;
                b.swap(i, i + 1);
                b[i + 1] -= l * b[i];
                a = c - l * dn;
                c = -l * en;
            }
        }
        ud[n - 1] = if a == 0.0 { tiny } else { a };
        for i in (0..n).rev() {
            let mut s = b[i];
            if i + 1 < n {
                s -= u1[i] * b[i + 1];
            }
            if i + 2 < n {
                s -= u2[i] * b[i + 2];
            }
            b[i] = s / ud[i];
        }
    }

    /// Eigenvectors for the ascending eigenvalues `w` by inverse iteration,
    /// orthogonalized inside clusters of close eigenvalues.
    pub fn inverse_iteration(&self, w: &[f64]) -> Vec<Vec<f64>> {
        let n = self.diag.len();
        let (lo, hi) = self.bounds();
        let norm = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
        let cluster_tol = 1e-3 * norm;
        let perturb = 10.0 * f64::EPSILON * norm;
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(w.len());
        let mut cluster_start = 0;
        let mut last_shift = f64::NEG_INFINITY;
        for (k, &lam) in w.iter().enumerate() {
            if k > 0 && lam - w[k - 1] > cluster_tol {
                cluster_start = k;
            }
            // nudge coincident shifts apart so each solve sees a distinct pole
            let mut shift = lam;
            if k > cluster_start && shift - last_shift < perturb {
                shift = last_shift + perturb;
            }
            last_shift = shift;

            let mut x: Vec<f64> = (0..n)
                .map(|i| {
                    let h = (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k as u64 + 7);
                    0.5 + (h % 1000) as f64 / 1000.0
                })
                .collect();
            for _ in 0..5 {
                self.shifted_solve(shift, perturb, &mut x);
                for prev in &out[cluster_start..k] {
                    let dot: f64 = prev.iter().zip(&x).map(|(a, b)| a * b).sum();
                    for (xi, pi) in x.iter_mut().zip(prev) {
                        *xi -= dot * pi;
                    }
                }
                let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if nrm == 0.0 || !nrm.is_finite() {
                    break;
                }
                for xi in &mut x {
                    *xi /= nrm;
                }
            }
            out.push(x);
        }
        out
    }
}
