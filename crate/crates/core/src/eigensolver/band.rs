//! Givens band-to-tridiagonal reduction for symmetric banded matrices.
//!
//! The lower band is kept with one extra diagonal that holds the transient
//! bulge created while chasing.

use super::tridiag::Tridiagonal;
use crate::hilbert::SparseSymmetric;

pub(crate) struct BandMatrix {
    n: usize,
    /// Half bandwidth of the input.
    b: usize,
    /// Stored sub-diagonals, `b + 1` (one bulge diagonal).
    w: usize,
    /// Column-major lower band: `ab[c * (w + 1) + d] = A(c + d, c)`.
    ab: Vec<f64>,
}

impl BandMatrix {
    fn zeros(n: usize, b: usize) -> Self {
        let w = b + 1;
        Self {
            n,
            b,
            w,
            ab: vec![0.0; (w + 1) * n],
        }
    }

    pub fn from_sparse(a: &SparseSymmetric) -> Self {
        let mut m = Self::zeros(a.dim, a.bandwidth());
        let s = m.w + 1;
        for (c, &d) in a.diag.iter().enumerate() {
            m.ab[c * s] = d;
        }
        for &(i, j, v) in &a.upper {
            m.ab[i * s + (j - i)] += v;
        }
        m
    }

    pub fn from_dense_colmajor(a: &[f64], n: usize) -> Self {
        let mut b = 0;
        for j in 0..n {
            for i in j + 1..n {
                if a[i + j * n] != 0.0 {
                    b = b.max(i - j);
                }
            }
        }
        let mut m = Self::zeros(n, b);
        let s = m.w + 1;
        for j in 0..n {
            for d in 0..=b.min(n - 1 - j) {
                m.ab[j * s + d] = a[j + d + j * n];
            }
        }
        m
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        let d = r - c;
        if d > self.w {
            0.0
        } else {
            self.ab[c * (self.w + 1) + d]
        }
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize, v: f64) {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        let d = r - c;
        debug_assert!(d <= self.w, "fill outside band storage");
        self.ab[c * (self.w + 1) + d] = v;
    }

    /// `A <- G A Gᵀ` with `G` the rotation `[[c, s], [-s, c]]` on rows `p, p+1`.
    /// Entries outside the stored band are zero on both rows by construction
    /// of the chase, so only `t` in `[p+1-w, p+w]` is visited.
    fn rotate(&mut self, p: usize, c: f64, s: f64) {
        let q = p + 1;
        let st = self.w + 1;
        let w = self.w;
        // columns left of p: A(p,t), A(q,t) are adjacent in column t
        for t in (q.saturating_sub(w))..p {
            let k = t * st + (p - t);
            let x = self.ab[k];
            let y = self.ab[k + 1];
            self.ab[k] = c * x + s * y;
            self.ab[k + 1] = c * y - s * x;
        }
        // rows below q: A(t,p) in column p, A(t,q) in column q
        let hi = (p + w).min(self.n - 1);
        if hi > q {
            let len = hi - q;
            let (left, right) = self.ab.split_at_mut(q * st);
            let colp = &mut left[p * st + 2..p * st + 2 + len];
            let colq = &mut right[1..1 + len];
            for (x, y) in colp.iter_mut().zip(colq.iter_mut()) {
                let (a, b) = (*x, *y);
                *x = c * a + s * b;
                *y = c * b - s * a;
            }
        }
        let app = self.ab[p * st];
        let aqq = self.ab[q * st];
        let apq = self.ab[p * st + 1];
        let cc = c * c;
        let ss = s * s;
        let cs = c * s;
        self.ab[p * st] = cc * app + 2.0 * cs * apq + ss * aqq;
        self.ab[q * st] = ss * app - 2.0 * cs * apq + cc * aqq;
        self.ab[p * st + 1] = (cc - ss) * apq + cs * (aqq - app);
    }

    /// Zeroes `A(p+1, col)` against `A(p, col)`; returns the rotation.
    fn annihilate(&mut self, p: usize, col: usize) -> Option<(f64, f64)> {
        let x = self.at(p, col);
        let y = self.at(p + 1, col);
        if y == 0.0 {
            return None;
        }
        let r = x.hypot(y);
        let (c, s) = (x / r, y / r);
        self.rotate(p, c, s);
        self.set(p + 1, col, 0.0);
        Some((c, s))
    }

    /// Reduces to tridiagonal form. Every rotation applied on rows `(p, p+1)`
    /// is reported to `on_rotation(p, c, s)`.
    pub fn reduce(mut self, mut on_rotation: impl FnMut(usize, f64, f64)) -> Tridiagonal {
        let n = self.n;
        let b = self.b;
        if b >= 2 {
            for j in 0..n.saturating_sub(2) {
                for k in (2..=b.min(n - 1 - j)).rev() {
                    let mut p = j + k - 1;
                    let mut col = j;
                    while p + 1 < n {
                        match self.annihilate(p, col) {
                            Some((c, s)) => on_rotation(p, c, s),
                            None => break,
                        }
                        // bulge lands at (p + 1 + b, p)
                        let r = p + 1 + b;
                        if r >= n {
                            break;
                        }
                        col = p;
                        p = r - 1;
                    }
                }
            }
        }
        let st = self.w + 1;
        let diag = (0..n).map(|c| self.ab[c * st]).collect();
        let mut off = vec![0.0; n];
        for (c, o) in off.iter_mut().enumerate().take(n.saturating_sub(1)) {
            *o = self.ab[c * st + 1];
        }
        Tridiagonal { diag, off }
    }
}
