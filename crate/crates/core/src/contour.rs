//! Level-set geometry on a sampled 2-D field: marching-squares polylines and
//! connected components of a sublevel mask.
//!
//! Fields are stored row-major with `x` varying fastest:
//! `values[iy * nx + ix]`.

use serde::Serialize;

/// An ordered polyline; closed curves repeat their first point at the end.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polyline {
    pub points: Vec<(f64, f64)>,
}

impl Polyline {
    pub fn is_closed(&self) -> bool {
        self.points.len() > 2 && self.points.first() == self.points.last()
    }
}

/// Number of 4-connected components of `{value < level}`.
pub fn count_sublevel_components(values: &[f64], nx: usize, ny: usize, level: f64) -> usize {
    assert_eq!(values.len(), nx * ny);
    let mut seen = vec![false; nx * ny];
    let mut stack = Vec::new();
    let mut count = 0;
    for start in 0..nx * ny {
        if seen[start] || !(values[start] < level) {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let (ix, iy) = (k % nx, k / nx);
            let mut visit = |j: usize| {
                if !seen[j] && values[j] < level {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if ix > 0 {
                visit(k - 1);
            }
            if ix + 1 < nx {
                visit(k + 1);
            }
            if iy > 0 {
                visit(k - nx);
            }
            if iy + 1 < ny {
                visit(k + nx);
            }
        }
    }
    count
}

type Key = (usize, usize, u8);

/// Marching squares. Crossings sit on cell edges, identified by
/// `(ix, iy, 0)` for the horizontal edge starting at node `(ix, iy)` and
/// `(ix, iy, 1)` for the vertical one. Saddle cells are resolved with the
/// cell-centre average.
pub fn marching_squares(values: &[f64], xs: &[f64], ys: &[f64], level: f64) -> Vec<Polyline> {
    let (nx, ny) = (xs.len(), ys.len());
    assert_eq!(values.len(), nx * ny);
    if nx < 2 || ny < 2 {
        return Vec::new();
    }
    let v = |ix: usize, iy: usize| values[iy * nx + ix];
    let point = |key: Key| -> (f64, f64) {
        let (ix, iy, dir) = key;
        let (a, b, (x0, y0), (x1, y1)) = if dir == 0 {
            (
                v(ix, iy),
                v(ix + 1, iy),
                (xs[ix], ys[iy]),
                (xs[ix + 1], ys[iy]),
            )
        } else {
            (
                v(ix, iy),
                v(ix, iy + 1),
                (xs[ix], ys[iy]),
                (xs[ix], ys[iy + 1]),
            )
        };
        let t = if a == b { 0.5 } else { (level - a) / (b - a) };
        (x0 + t * (x1 - x0), y0 + t * (y1 - y0))
    };

    let mut segments: Vec<(Key, Key)> = Vec::new();
    for iy in 0..ny - 1 {
        for ix in 0..nx - 1 {
            let c = [v(ix, iy), v(ix + 1, iy), v(ix + 1, iy + 1), v(ix, iy + 1)];
            let idx = c.iter().enumerate().fold(
                0u8,
                |acc, (k, &x)| if x >= level { acc | (1 << k) } else { acc },
            );
            let bottom = (ix, iy, 0);
            let right = (ix + 1, iy, 1);
            let top = (ix, iy + 1, 0);
            let left = (ix, iy, 1);
            let centre_high = (c.iter().sum::<f64>() / 4.0) >= level;
            match idx {
                0 | 15 => {}
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 => {
                    if centre_high {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                10 => {
                    if centre_high {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    } else {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    join_segments(segments)
        .into_iter()
        .map(|keys| Polyline {
            points: keys.into_iter().map(point).collect(),
        })
        .collect()
}

fn join_segments(segments: Vec<(Key, Key)>) -> Vec<Vec<Key>> {
    use std::collections::BTreeMap;
    let mut adj: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        adj.entry(*a).or_default().push(k);
        adj.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    // open chains start at endpoints of degree 1, then closed loops
    let starts: Vec<Key> = adj
        .iter()
        .filter(|(_, s)| s.len() == 1)
        .map(|(k, _)| *k)
        .chain(segments.iter().map(|s| s.0))
        .collect();
    for start in starts {
        let Some(&first) = adj[&start].iter().find(|&&s| !used[s]) else {
            continue;
        };
        let mut chain = vec![start];
        let mut cur = start;
        let mut seg = first;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == cur { b } else { a };
            chain.push(next);
            cur = next;
            match adj[&cur].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => break,
            }
        }
        lines.push(chain);
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(nx: usize, ny: usize, f: impl Fn(f64, f64) -> f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = (0..nx)
            .map(|i| -1.0 + 2.0 * i as f64 / (nx - 1) as f64)
            .collect();
        let ys: Vec<f64> = (0..ny)
            .map(|i| -1.0 + 2.0 * i as f64 / (ny - 1) as f64)
            .collect();
        let mut v = Vec::with_capacity(nx * ny);
        for &y in &ys {
            for &x in &xs {
                v.push(f(x, y));
            }
        }
        (v, xs, ys)
    }

    #[test]
    fn circle_is_one_closed_loop() {
        let (v, xs, ys) = field(41, 41, |x, y| x * x + y * y);
        let lines = marching_squares(&v, &xs, &ys, 0.25);
        assert_eq!(lines.len(), 1);
        assert!(lines[0].is_closed());
        for &(x, y) in &lines[0].points {
            assert!(((x * x + y * y).sqrt() - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn two_wells() {
        let f = |x: f64, y: f64| ((x - 0.5).powi(2) + y * y).min((x + 0.5).powi(2) + y * y);
        let (v, xs, ys) = field(64, 64, f);
        assert_eq!(count_sublevel_components(&v, 64, 64, 0.04), 2);
        assert_eq!(count_sublevel_components(&v, 64, 64, 1.0), 1);
        assert_eq!(count_sublevel_components(&v, 64, 64, -1.0), 0);
        assert_eq!(marching_squares(&v, &xs, &ys, 0.04).len(), 2);
    }

    #[test]
    fn open_line_crosses_boundary() {
        let (v, xs, ys) = field(10, 10, |x, _| x);
        let lines = marching_squares(&v, &xs, &ys, 0.05);
        assert_eq!(lines.len(), 1);
        assert!(!lines[0].is_closed());
        assert_eq!(lines[0].points.len(), 10);
    }

    #[test]
    fn diagonal_touching_cells_are_separate() {
        // checkerboard corners: 4-connectivity keeps them apart
        let v = vec![0.0, 1.0, 1.0, 0.0];
        assert_eq!(count_sublevel_components(&v, 2, 2, 0.5), 2);
    }
}
