//! Independent reference computations shared by the integration and acceptance tests.
//! Nothing here calls into the solver code paths being checked.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n.is_multiple_of(2));
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Degenerate length of the scalar quartic between its wells: `int_{-1}^{1} 2 (1 - s^2) ds`.
pub fn quartic_sigma() -> f64 {
    simpson(|s| 2.0 * (1.0 - s * s), -1.0, 1.0, 2000)
}

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Shortest path for the metric `factor(z) |dz|` on an `n x n` grid over `[lo, hi]`,
/// with the 32 primitive offsets of radius 3 and 5-point Simpson weights per edge.
/// `p` and `q` must be grid nodes.
pub fn grid_geodesic(
    factor: impl Fn(&[f64]) -> f64,
    p: [f64; 2],
    q: [f64; 2],
    lo: [f64; 2],
    hi: [f64; 2],
    n: usize,
) -> f64 {
    let h = [(hi[0] - lo[0]) / (n - 1) as f64, (hi[1] - lo[1]) / (n - 1) as f64];
    let index = |x: [f64; 2]| -> usize {
        let i = ((x[0] - lo[0]) / h[0]).round();
        let j = ((x[1] - lo[1]) / h[1]).round();
        assert!(
            ((lo[0] + i * h[0]) - x[0]).abs() < 1e-9 && ((lo[1] + j * h[1]) - x[1]).abs() < 1e-9,
            "not a grid node"
        );
        i as usize * n + j as usize
    };
    let mut offsets = Vec::new();
    for di in -3i64..=3 {
        for dj in -3i64..=3 {
            if (di, dj) != (0, 0) && gcd(di, dj) == 1 {
                offsets.push((di, dj));
            }
        }
    }
    assert_eq!(offsets.len(), 32);
    let node_f: Vec<f64> =
        (0..n * n).map(|k| factor(&[lo[0] + (k / n) as f64 * h[0], lo[1] + (k % n) as f64 * h[1]])).collect();
    let (start, goal) = (index(p), index(q));
    let mut dist = vec![f64::INFINITY; n * n];
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    heap.push(Entry(0.0, start));
    while let Some(Entry(d, k)) = heap.pop() {
        if k == goal {
            return d;
        }
        if d > dist[k] {
            continue;
        }
        let (i, j) = ((k / n) as i64, (k % n) as i64);
        let x0 = [lo[0] + i as f64 * h[0], lo[1] + j as f64 * h[1]];
        for &(di, dj) in &offsets {
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni >= n as i64 || nj >= n as i64 {
                continue;
            }
            let nk = ni as usize * n + nj as usize;
            let step = [di as f64 * h[0], dj as f64 * h[1]];
            let len = step[0].hypot(step[1]);
            let at = |t: f64| factor(&[x0[0] + t * step[0], x0[1] + t * step[1]]);
            let w = len / 12.0 * (node_f[k] + 4.0 * at(0.25) + 2.0 * at(0.5) + 4.0 * at(0.75) + node_f[nk]);
            let nd = d + w;
            if nd < dist[nk] {
                dist[nk] = nd;
                heap.push(Entry(nd, nk));
            }
        }
    }
    dist[goal]
}

/// Brute-force cell problem for `N = M = 1`: `psi` piecewise linear on `nodes` nodes of
/// `[-1/2, 1/2]`, cell integral by Simpson per element, exact `P1` norms.
/// Random feasible starts followed by a projected compass search.
pub struct CellOracle<F: Fn(f64, f64) -> f64> {
    pub w: F,
    pub z: f64,
    pub eta: f64,
    /// Nodes on `[-1/2, 1/2]`, boundary included.
    pub nodes: usize,
}

impl<F: Fn(f64, f64) -> f64> CellOracle<F> {
    fn h(&self) -> f64 {
        1.0 / (self.nodes - 1) as f64
    }

    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.nodes];
        v[1..self.nodes - 1].copy_from_slice(x);
        v
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let v = self.full(x);
        let h = self.h();
        let mut total = 0.0;
        for e in 0..self.nodes - 1 {
            let y0 = -0.5 + e as f64 * h;
            total += simpson(
                |y| {
                    let t = (y - y0) / h;
                    (self.w)(y, self.z + (1.0 - t) * v[e] + t * v[e + 1])
                },
                y0,
                y0 + h,
                16,
            );
        }
        total
    }

    pub fn product(&self, x: &[f64]) -> f64 {
        let v = self.full(x);
        let h = self.h();
        let mut l2 = 0.0;
        let mut d2 = 0.0;
        for e in 0..self.nodes - 1 {
            let (a, b) = (v[e], v[e + 1]);
            l2 += h / 3.0 * (a * a + a * b + b * b);
            d2 += (b - a) * (b - a) / h;
        }
        (l2 * d2).sqrt()
    }

    pub fn project(&self, x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = v.clamp(-self.eta, self.eta));
        let bound = 5.0 * self.eta * self.eta;
        let p = self.product(x);
        if p > bound {
            let s = (bound / p).sqrt() * (1.0 - 1e-12);
            x.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn feasible(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.abs() <= self.eta) && self.product(x) <= 5.0 * self.eta * self.eta
    }

    fn compass(&self, mut x: Vec<f64>) -> (f64, Vec<f64>) {
        let mut fx = self.objective(&x);
        let mut step = 0.5 * self.eta;
        let floor = 1e-7 * self.eta;
        while step > floor {
            let mut improved = false;
            for i in 0..x.len() {
                for sign in [1.0, -1.0] {
                    let mut y = x.clone();
                    y[i] += sign * step;
                    // move along the constraint surface when the step leaves it
                    if !self.feasible(&y) {
                        self.project(&mut y);
                    }
                    let fy = self.objective(&y);
                    if fy < fx {
                        x = y;
                        fx = fy;
                        improved = true;
                    }
                }
            }
            // scaling moves reach the product bound from inside
            for s in [1.0 + step / self.eta, 1.0 - step / self.eta] {
                let mut y: Vec<f64> = x.iter().map(|v| v * s).collect();
                if !self.feasible(&y) {
                    self.project(&mut y);
                }
                let fy = self.objective(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        (fx, x)
    }

    /// Best value over `starts` random starts plus the zero start.
    pub fn solve(&self, starts: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best = self.compass(vec![0.0; self.nodes - 2]);
        for _ in 0..starts {
            let mut x: Vec<f64> = (0..self.nodes - 2).map(|_| rng.gen_range(-self.eta..self.eta)).collect();
            self.project(&mut x);
            let r = self.compass(x);
            if r.0 < best.0 {
                best = r;
            }
        }
        // one more pass from the winner with a fresh step size
        let again = self.compass(best.1.clone());
        best.0.min(again.0)
    }
}

/// Central-difference directional derivative.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], dir: &[f64], s: f64) -> f64 {
    let plus: Vec<f64> = x.iter().zip(dir).map(|(x, d)| x + s * d).collect();
    let minus: Vec<f64> = x.iter().zip(dir).map(|(x, d)| x - s * d).collect();
    (f(&plus) - f(&minus)) / (2.0 * s)
}
