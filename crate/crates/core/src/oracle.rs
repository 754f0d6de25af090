//! Independent brute-force reference implementations used by the test
//! suites: dense linear algebra, exhaustive wired spanning-tree enumeration,
//! adaptive quadrature, and closed-form piecewise-exponential CDFs.
//!
//! These deliberately share no numerical kernels with the main solve path
//! beyond scalar arithmetic, and enforce hard size caps: they are test
//! fixtures, not production code.

use crate::{Error, Result};

/// Hard cap on dense problem dimension.
pub const DENSE_CAP: usize = 200;

/// Hard cap on wired-graph vertex count for tree enumeration.
pub const TREE_CAP: usize = 16;

/// Dense symmetric positive-definite problem solved by a self-contained
/// Cholesky factorization.
pub struct DenseProblem {
    pub n: usize,
    /// Row-major `n x n` symmetric matrix.
    pub matrix: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl DenseProblem {
    pub fn new(matrix: Vec<f64>, rhs: Vec<f64>) -> Result<Self> {
        let n = rhs.len();
        if n > DENSE_CAP {
            return Err(Error::domain(format!(
                "dense oracle capped at {DENSE_CAP}, got {n}"
            )));
        }
        if matrix.len() != n * n {
            return Err(Error::domain("matrix shape mismatch"));
        }
        Ok(DenseProblem { n, matrix, rhs })
    }
}

/// Direct dense SPD solve. Errors when a pivot is non-positive.
pub fn dense_solve(problem: &DenseProblem) -> Result<Vec<f64>> {
    let chol = dense_cholesky(&problem.matrix, problem.n)?;
    Ok(dense_cholesky_solve(&chol, problem.n, &problem.rhs))
}

/// Lower-triangular Cholesky factor, row-major.
pub fn dense_cholesky(matrix: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = matrix[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Factorization { index: i, pivot: s });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

pub fn dense_cholesky_solve(l: &[f64], n: usize, rhs: &[f64]) -> Vec<f64> {
    let mut y = rhs.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    y
}

/// Dense symmetric inverse via Cholesky, for covariance oracles.
pub fn dense_inverse(matrix: &[f64], n: usize) -> Result<Vec<f64>> {
    let l = dense_cholesky(matrix, n)?;
    let mut inv = vec![0.0f64; n * n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = dense_cholesky_solve(&l, n, &e);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Ok(inv)
}

/// A weighted multigraph for exhaustive spanning-tree enumeration. Vertex 0
/// conventionally plays the wired boundary vertex.
pub struct WeightedGraph {
    pub n: usize,
    /// (u, v, weight) with u != v.
    pub edges: Vec<(usize, usize, f64)>,
}

/// The weighted spanning-tree polynomial `sum_T prod_{e in T} w(e)`,
/// enumerated exhaustively by include/exclude recursion over edges with
/// connectivity pruning. Tree products are accumulated with compensated
/// summation.
pub fn spanning_tree_polynomial(graph: &WeightedGraph) -> Result<f64> {
    if graph.n > TREE_CAP {
        return Err(Error::domain(format!(
            "tree enumeration capped at {TREE_CAP} vertices, got {}",
            graph.n
        )));
    }
    let mut acc = Kahan::default();
    let mut uf: Vec<usize> = (0..graph.n).collect();
    recurse_trees(graph, 0, &mut uf, graph.n, 1.0, &mut acc);
    Ok(acc.sum())
}

#[derive(Default)]
struct Kahan {
    s: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.s + y;
        self.c = (t - self.s) - y;
        self.s = t;
    }

    fn sum(&self) -> f64 {
        self.s
    }
}

fn find(uf: &[usize], mut x: usize) -> usize {
    while uf[x] != x {
        x = uf[x];
    }
    x
}

fn recurse_trees(
    g: &WeightedGraph,
    next: usize,
    uf: &mut Vec<usize>,
    components: usize,
    product: f64,
    acc: &mut Kahan,
) {
    if components == 1 {
        acc.add(product);
        return;
    }
    if next >= g.edges.len() {
        return;
    }
    // prune: remaining edges must be able to connect the remaining components
    if g.edges.len() - next < components - 1 {
        return;
    }
    let (u, v, w) = g.edges[next];
    let ru = find(uf, u);
    let rv = find(uf, v);
    if ru == rv {
        // a loop in the contracted graph can never join a tree
        recurse_trees(g, next + 1, uf, components, product, acc);
        return;
    }
    // include the edge (contract)
    let saved = uf.clone();
    uf[ru] = rv;
    recurse_trees(g, next + 1, uf, components - 1, product * w, acc);
    *uf = saved;
    // exclude the edge, but only if the graph can stay connected without it
    if remaining_can_connect(g, next + 1, uf, components) {
        recurse_trees(g, next + 1, uf, components, product, acc);
    }
}

fn remaining_can_connect(g: &WeightedGraph, from: usize, uf: &[usize], components: usize) -> bool {
    let mut scratch: Vec<usize> = uf.to_vec();
    let mut comps = components;
    for &(u, v, _) in &g.edges[from..] {
        let ru = find(&scratch, u);
        let rv = find(&scratch, v);
        if ru != rv {
            scratch[ru] = rv;
            comps -= 1;
            if comps == 1 {
                return true;
            }
        }
    }
    comps == 1
}

/// Adaptive Simpson quadrature of
/// `pi^{-1/2} * integral exp(-z e^t - e^{-t} - t/2) dt` with controlled
/// truncation; returns the value (the identity says it equals
/// `exp(-2 sqrt(z))` for z > 0 and 1 at z = 0).
pub fn quadrature_magic_identity(z: f64) -> Result<f64> {
    if z < 0.0 {
        return Err(Error::domain("z must be nonnegative"));
    }
    let density = |t: f64| (-z * t.exp() - (-t).exp() - 0.5 * t).exp();
    // the integrand decays double-exponentially on the left and (for z > 0)
    // on the right; for z = 0 the right tail is exp(-t/2), dead by t = 120
    let hi = if z > 0.0 {
        (800.0 / z).ln().clamp(5.0, 120.0)
    } else {
        120.0
    };
    let lo = -(800.0f64.ln()) - 2.0;
    // split at the peak region so the first probes never miss it
    let mut value = adaptive_simpson(&density, lo, 10.0f64.min(hi), 1e-13, 28);
    if hi > 10.0 {
        value += adaptive_simpson(&density, 10.0, hi, 1e-13, 28);
    }
    Ok(value / std::f64::consts::PI.sqrt())
}

/// Adaptive Simpson with absolute tolerance. The per-interval tolerance is
/// floored near f64 roundoff so the recursion terminates once the local
/// error estimate hits noise level.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let c = 0.5 * (a + b);
    let fa = f(a);
    let fb = f(b);
    let fc = f(c);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, depth.min(28))
}

const SIMPSON_TOL_FLOOR: f64 = 5e-16;

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let fd = f(d);
    let fe = f(e);
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        let half = (0.5 * tol).max(SIMPSON_TOL_FLOOR);
        simpson_step(f, a, c, fa, fc, fd, left, half, depth - 1)
            + simpson_step(f, c, b, fc, fb, fe, right, half, depth - 1)
    }
}

/// Normalized CDF of a density `exp(g(v))` with `g` continuous piecewise
/// linear: breakpoints `b_1 <= .. <= b_m` and slopes `s_0, .., s_m` on the
/// pieces, `s_0 > 0 > s_m`. Everything is closed-form per piece.
pub struct PiecewiseExpCdf {
    breaks: Vec<f64>,
    slopes: Vec<f64>,
    /// g value at the left end of each piece (g(b_1) = 0 by normalization).
    piece_masses: Vec<f64>,
    total: f64,
    g_at_break: Vec<f64>,
}

impl PiecewiseExpCdf {
    pub fn new(breaks: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if slopes.len() != breaks.len() + 1 || breaks.is_empty() {
            return Err(Error::domain("need m breakpoints and m+1 slopes"));
        }
        if !(slopes[0] > 0.0 && *slopes.last().unwrap() < 0.0) {
            return Err(Error::domain(
                "outer slopes must make the density integrable",
            ));
        }
        if breaks.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::domain("breakpoints must be sorted"));
        }
        // g(b_1) := 0; accumulate g at each breakpoint
        let m = breaks.len();
        let mut g_at_break = vec![0.0f64; m];
        for i in 1..m {
            g_at_break[i] = g_at_break[i - 1] + slopes[i] * (breaks[i] - breaks[i - 1]);
        }
        // mass of each piece: integral of exp(g) over it
        let mut piece_masses = Vec::with_capacity(m + 1);
        // leftmost: integral_{-inf}^{b_1} exp(g(b_1) + s_0 (v - b_1)) dv
        piece_masses.push(g_at_break[0].exp() / slopes[0]);
        for i in 0..m - 1 {
            piece_masses.push(exp_linear_mass(
                g_at_break[i],
                slopes[i + 1],
                breaks[i + 1] - breaks[i],
            ));
        }
        // rightmost: integral_{b_m}^{inf}
        piece_masses.push(g_at_break[m - 1].exp() / -slopes[m]);
        let total = piece_masses.iter().sum();
        Ok(PiecewiseExpCdf {
            breaks,
            slopes,
            piece_masses,
            total,
            g_at_break,
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    /// CDF value at `v`.
    pub fn cdf(&self, v: f64) -> f64 {
        let m = self.breaks.len();
        let mut acc = 0.0;
        if v <= self.breaks[0] {
            return (self.g_at_break[0] + self.slopes[0] * (v - self.breaks[0])).exp()
                / self.slopes[0]
                / self.total;
        }
        acc += self.piece_masses[0];
        for i in 0..m - 1 {
            if v <= self.breaks[i + 1] {
                acc += exp_linear_mass(self.g_at_break[i], self.slopes[i + 1], v - self.breaks[i]);
                return acc / self.total;
            }
            acc += self.piece_masses[i + 1];
        }
        // beyond the last breakpoint
        let s = self.slopes[m];
        let g = self.g_at_break[m - 1];
        acc += (g.exp() - (g + s * (v - self.breaks[m - 1])).exp()) / -s;
        acc / self.total
    }
}

/// integral_0^len exp(g0 + s x) dx, stable for small s.
fn exp_linear_mass(g0: f64, s: f64, len: f64) -> f64 {
    if s.abs() < 1e-12 {
        g0.exp() * len * (1.0 + 0.5 * s * len)
    } else {
        (g0 + s * len).exp().mul_add(1.0 / s, -(g0.exp() / s))
    }
}
