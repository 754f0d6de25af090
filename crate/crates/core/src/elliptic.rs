//! Conductance Laplacians and their solves.
//!
//! The quadratic form is `(v, A v) = sum_{e in E(U)} a(e) (grad v(e))^2` with
//! `a(e) = exp(tau_e)`. Dirichlet mode keeps the box boundary as data and
//! eliminates it; natural mode keeps every vertex as an unknown (the operator
//! is then singular on constants and solves are pinned and mean-centered).
//!
//! Solves go through a banded Cholesky factorization whenever the band
//! storage fits (row-major vertex order keeps the band equal to one
//! cross-section of the box), with Jacobi-preconditioned conjugate gradients
//! as the fallback. Factorizations are reused for Gaussian sampling
//! (`L^{-T} z`) and for `log det`.

use crate::field::TauField;
use crate::lattice::{Coord, Edge, LatticeBox};
use crate::{Error, Result};
use serde::Serialize;
use std::time::Instant;

/// Boundary handling for the assembled operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Box boundary vertices carry prescribed values.
    DirichletZero,
    /// All vertices are unknowns; the form is singular on constants.
    Natural,
}

/// Default relative residual tolerance.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

static TOLERANCE_BITS: std::sync::atomic::AtomicU64 =
    std::sync::atomic::AtomicU64::new(0x3DDB7CDFD9D7BDBB); // 1e-10

/// Process-wide relative residual tolerance used by the library's internal
/// solves (the CLI `--tolerance` flag lands here).
pub fn solver_tolerance() -> f64 {
    f64::from_bits(TOLERANCE_BITS.load(std::sync::atomic::Ordering::Relaxed))
}

pub fn set_solver_tolerance(tol: f64) {
    TOLERANCE_BITS.store(tol.to_bits(), std::sync::atomic::Ordering::Relaxed);
}

/// Band storage cap in matrix entries (`n * (bandwidth + 1)`).
const BAND_ENTRY_CAP: usize = 24_000_000;

/// Outcome of a linear solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    /// Solution as a vertex function over the region's bounding box
    /// (row-major index); boundary vertices carry their data values.
    pub solution: Vec<f64>,
    pub relative_residual: f64,
    /// 0 for direct factorization.
    pub iterations: usize,
    pub method: &'static str,
    #[serde(skip_serializing)]
    pub wall_time_secs: f64,
}

/// Assembled conductance operator on a sub-box of a tau field.
pub struct ConductanceOperator {
    pub region: LatticeBox,
    pub mode: BoundaryMode,
    /// Bounding-box vertex index per unknown, in increasing order.
    unknowns: Vec<u32>,
    /// Bounding-box vertex index -> unknown index, or -1.
    unknown_of: Vec<i32>,
    diag: Vec<f64>,
    /// (unknown a < unknown b, conductance).
    offdiag: Vec<(u32, u32, f64)>,
    /// (unknown, bounding index of a boundary vertex, conductance).
    boundary_links: Vec<(u32, u32, f64)>,
    /// All edges of the region with their conductances, for energy sums.
    edges: Vec<(Edge, f64)>,
}

impl ConductanceOperator {
    /// Assembles the operator for `region` (which must lie inside the tau
    /// field's box) with conductances read from `tau`.
    pub fn assemble(tau: &TauField, region: &LatticeBox, mode: BoundaryMode) -> Result<Self> {
        for i in 0..region.dim {
            if region.lo[i] < tau.domain.lo[i] || region.hi[i] > tau.domain.hi[i] {
                return Err(Error::domain("region overflows the tau field box"));
            }
        }
        let nb = region.bounding_vertex_count();
        let mut unknown_of = vec![-1i32; nb];
        let mut unknowns = Vec::new();
        for v in region.vertices() {
            let keep = match mode {
                BoundaryMode::DirichletZero => !region.is_boundary(v),
                BoundaryMode::Natural => true,
            };
            if keep {
                let bi = region.vertex_index(v);
                unknown_of[bi] = unknowns.len() as i32;
                unknowns.push(bi as u32);
            }
        }
        if unknowns.is_empty() {
            return Err(Error::domain("region has no unknowns"));
        }
        let mut diag = vec![0.0; unknowns.len()];
        let mut offdiag = Vec::new();
        let mut boundary_links = Vec::new();
        let mut edges = Vec::new();
        for e in region.enumerate_edges()? {
            let a = tau.conductance(&e);
            edges.push((e, a));
            let bi = region.vertex_index(e.base);
            let hi = region.vertex_index(e.head());
            let ub = unknown_of[bi];
            let uh = unknown_of[hi];
            match (ub >= 0, uh >= 0) {
                (true, true) => {
                    diag[ub as usize] += a;
                    diag[uh as usize] += a;
                    let (lo, up) = if ub < uh { (ub, uh) } else { (uh, ub) };
                    offdiag.push((lo as u32, up as u32, a));
                }
                (true, false) => {
                    diag[ub as usize] += a;
                    boundary_links.push((ub as u32, hi as u32, a));
                }
                (false, true) => {
                    diag[uh as usize] += a;
                    boundary_links.push((uh as u32, bi as u32, a));
                }
                (false, false) => {}
            }
        }
        Ok(ConductanceOperator {
            region: region.clone(),
            mode,
            unknowns,
            unknown_of,
            diag,
            offdiag,
            boundary_links,
            edges,
        })
    }

    pub fn unknown_count(&self) -> usize {
        self.unknowns.len()
    }

    /// Bounding-box vertex index of unknown `u`.
    pub fn unknown_bounding_index(&self, u: usize) -> usize {
        self.unknowns[u] as usize
    }

    /// `y = A x` over unknowns. Serial, so reductions have a fixed order.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, d) in self.diag.iter().enumerate() {
            y[i] = d * x[i];
        }
        for &(a, b, c) in &self.offdiag {
            y[a as usize] -= c * x[b as usize];
            y[b as usize] -= c * x[a as usize];
        }
    }

    /// The quadratic form `sum_e a (grad v)^2` of a full vertex function
    /// (bounding-box indexed), including edges touching the boundary.
    pub fn energy(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for (e, a) in &self.edges {
            let g = v[self.region.vertex_index(e.head())] - v[self.region.vertex_index(e.base)];
            s += a * g * g;
        }
        s
    }

    pub fn edges_with_conductance(&self) -> &[(Edge, f64)] {
        &self.edges
    }

    /// Load vector from an edge field: `b[x] = sum_e f(e) grad delta_x(e)`,
    /// the exact discrete summation-by-parts right side for `div f`.
    pub fn rhs_from_edge_field<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&Edge) -> f64,
    {
        let mut b = vec![0.0; self.unknowns.len()];
        for (e, _) in &self.edges {
            let w = f(e);
            if w == 0.0 {
                continue;
            }
            let ub = self.unknown_of[self.region.vertex_index(e.base)];
            let uh = self.unknown_of[self.region.vertex_index(e.head())];
            if uh >= 0 {
                b[uh as usize] += w;
            }
            if ub >= 0 {
                b[ub as usize] -= w;
            }
        }
        b
    }

    /// Load vector from a vertex source `g`: `b[x] = g(x)`.
    pub fn rhs_from_vertex_source<F>(&self, g: F) -> Vec<f64>
    where
        F: Fn(Coord) -> f64,
    {
        self.unknowns
            .iter()
            .map(|&bi| g(self.region.vertex_at(bi as usize)))
            .collect()
    }

    fn bandwidth(&self) -> usize {
        self.offdiag
            .iter()
            .map(|&(a, b, _)| (b - a) as usize)
            .max()
            .unwrap_or(0)
    }

    fn band_fits(&self) -> bool {
        let n = self.unknowns.len();
        let bw = self.bandwidth();
        n.saturating_mul(bw + 1) <= BAND_ENTRY_CAP
    }

    /// Direct factorization. Natural mode pins the first unknown.
    pub fn factorize(&self) -> Result<BandCholesky> {
        let pinned = self.mode == BoundaryMode::Natural;
        let n_full = self.unknowns.len();
        let skip = usize::from(pinned);
        let n = n_full - skip;
        if n == 0 {
            return Err(Error::domain("nothing to factorize"));
        }
        let bw = self.bandwidth().min(n.saturating_sub(1));
        let mut band = vec![0.0f64; n * (bw + 1)];
        // band[i * (bw+1) + (i - j)] holds entry (i, j), j in [i-bw, i]
        for i in 0..n {
            band[i * (bw + 1)] = self.diag[i + skip];
        }
        for &(a, b, c) in &self.offdiag {
            let (a, b) = (a as usize, b as usize);
            if pinned && (a < skip || b < skip) {
                continue;
            }
            let (i, j) = (b - skip, a - skip);
            band[i * (bw + 1) + (i - j)] = -c;
        }
        // in-place banded Cholesky; the k-sums run over contiguous
        // equally-ordered row segments, so they reduce to slice dots
        let w = bw + 1;
        for i in 0..n {
            let j_lo = i.saturating_sub(bw);
            for j in j_lo..=i {
                let len = j - j_lo;
                let mut s = band[i * w + (i - j)];
                if len > 0 {
                    let ra = &band[i * w + (i - j + 1)..i * w + (i - j_lo) + 1];
                    let rb = &band[j * w + 1..j * w + len + 1];
                    s -= dot(ra, rb);
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::Factorization { index: i, pivot: s });
                    }
                    band[i * w] = s.sqrt();
                } else {
                    band[i * w + (i - j)] = s / band[j * w];
                }
            }
        }
        Ok(BandCholesky {
            n,
            bw,
            band,
            pinned,
        })
    }

    /// Solves `A u = b` (b over unknowns) with the given Dirichlet boundary
    /// data; natural mode ignores `g` and returns the mean-zero solution.
    pub fn solve<G>(&self, b: &[f64], g: G, tolerance: f64) -> Result<SolveReport>
    where
        G: Fn(Coord) -> f64,
    {
        let t0 = Instant::now();
        let mut rhs = b.to_vec();
        if self.mode == BoundaryMode::DirichletZero {
            for &(u, bvi, a) in &self.boundary_links {
                rhs[u as usize] += a * g(self.region.vertex_at(bvi as usize));
            }
        }
        let (x, iterations, method) = if self.band_fits() {
            let chol = self.factorize()?;
            (chol.solve(&rhs), 0, "band-cholesky")
        } else {
            let (x, iters) = self.cg(&rhs, tolerance)?;
            (x, iters, "jacobi-cg")
        };
        // assemble the full field and measure the true residual
        let mut solution = vec![0.0; self.region.bounding_vertex_count()];
        if self.mode == BoundaryMode::DirichletZero {
            for v in self.region.vertices() {
                if self.region.is_boundary(v) {
                    solution[self.region.vertex_index(v)] = g(v);
                }
            }
        }
        for (u, &bi) in self.unknowns.iter().enumerate() {
            solution[bi as usize] = x[u];
        }
        if self.mode == BoundaryMode::Natural {
            let mean: f64 = self
                .unknowns
                .iter()
                .map(|&bi| solution[bi as usize])
                .sum::<f64>()
                / self.unknowns.len() as f64;
            for &bi in &self.unknowns {
                solution[bi as usize] -= mean;
            }
        }
        let relative_residual = self.relative_residual(&solution, b, &rhs);
        Ok(SolveReport {
            solution,
            relative_residual,
            iterations,
            method,
            wall_time_secs: t0.elapsed().as_secs_f64(),
        })
    }

    fn relative_residual(&self, solution: &[f64], _b: &[f64], rhs: &[f64]) -> f64 {
        let x: Vec<f64> = self
            .unknowns
            .iter()
            .map(|&bi| solution[bi as usize])
            .collect();
        let mut ax = vec![0.0; x.len()];
        self.apply(&x, &mut ax);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for i in 0..x.len() {
            let r = ax[i] - rhs[i];
            num += r * r;
            den += rhs[i] * rhs[i];
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }

    /// Jacobi-preconditioned conjugate gradients. Natural mode projects off
    /// the constant vector to stay in the range of the operator.
    pub fn cg(&self, b: &[f64], tolerance: f64) -> Result<(Vec<f64>, usize)> {
        let n = b.len();
        let project = self.mode == BoundaryMode::Natural;
        let demean = |v: &mut Vec<f64>| {
            if project {
                let m = v.iter().sum::<f64>() / n as f64;
                v.iter_mut().for_each(|x| *x -= m);
            }
        };
        let inv_diag: Vec<f64> = self
            .diag
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 })
            .collect();
        let mut b = b.to_vec();
        demean(&mut b);
        let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Ok((vec![0.0; n], 0));
        }
        let mut x = vec![0.0; n];
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
        demean(&mut z);
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let max_iter = 40 * n + 200;
        let mut ap = vec![0.0; n];
        let mut history = Vec::new();
        for iter in 0..max_iter {
            let rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
            if iter % 16 == 0 {
                history.push(rel);
            }
            if rel <= tolerance {
                return Ok((x, iter));
            }
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                return Err(Error::SolverDiverged {
                    residual: rel,
                    iterations: iter,
                    history,
                });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let mut znew: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
            demean(&mut znew);
            let rznew: f64 = r.iter().zip(&znew).map(|(a, b)| a * b).sum();
            let beta = rznew / rz;
            for i in 0..n {
                p[i] = znew[i] + beta * p[i];
            }
            z = znew;
            let _ = &z;
            rz = rznew;
        }
        let rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
        Err(Error::SolverDiverged {
            residual: rel,
            iterations: max_iter,
            history,
        })
    }
}

/// Four-lane dot product with a fixed summation tree: deterministic, and
/// it breaks the float-add latency chain.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ia = a.chunks_exact(4);
    let mut ib = b.chunks_exact(4);
    for (ca, cb) in (&mut ia).zip(&mut ib) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in ia.remainder().iter().zip(ib.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Banded lower-triangular Cholesky factor.
pub struct BandCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
    pinned: bool,
}

impl BandCholesky {
    /// Solves `L L^T x = b` (b over the operator's unknowns; the pinned
    /// unknown, when present, is fixed to zero).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let skip = usize::from(self.pinned);
        let mut y: Vec<f64> = b[skip..].to_vec();
        let w = self.bw + 1;
        for i in 0..self.n {
            let k_lo = i.saturating_sub(self.bw);
            let len = i - k_lo;
            let mut s = y[i];
            if len > 0 {
                let row = &self.band[i * w + 1..i * w + len + 1];
                s -= row
                    .iter()
                    .zip(y[k_lo..i].iter().rev())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            y[i] = s / self.band[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            let k_hi = (i + self.bw).min(self.n - 1);
            for k in i + 1..=k_hi {
                s -= self.band[k * w + (k - i)] * y[k];
            }
            y[i] = s / self.band[i * w];
        }
        if self.pinned {
            let mut full = Vec::with_capacity(self.n + 1);
            full.push(0.0);
            full.extend_from_slice(&y);
            full
        } else {
            y
        }
    }

    /// Draws `x = L^{-T} z`; for standard normal `z`, `x` has covariance
    /// `A^{-1}`.
    pub fn sample(&self, z: &[f64]) -> Vec<f64> {
        assert!(!self.pinned, "sampling requires a nonsingular operator");
        let w = self.bw + 1;
        let mut y = z.to_vec();
        for i in (0..self.n).rev() {
            let mut s = y[i];
            let k_hi = (i + self.bw).min(self.n - 1);
            for k in i + 1..=k_hi {
                s -= self.band[k * w + (k - i)] * y[k];
            }
            y[i] = s / self.band[i * w];
        }
        y
    }

    /// `log det A = 2 sum log L_ii`.
    pub fn log_det(&self) -> f64 {
        let w = self.bw + 1;
        (0..self.n).map(|i| self.band[i * w].ln()).sum::<f64>() * 2.0
    }
}

/// `log det` of the Dirichlet conductance operator on `region`.
pub fn log_det(tau: &TauField, region: &LatticeBox) -> Result<f64> {
    let op = ConductanceOperator::assemble(tau, region, BoundaryMode::DirichletZero)?;
    Ok(op.factorize()?.log_det())
}

/// Volume-normalized discrete `H^{-1}` norm of a vertex source on a cube:
/// solve the unit-conductance Dirichlet problem `A w = g` and return
/// `sqrt( sum_e (grad w)^2 / |cube| )`.
pub fn h_minus_one_norm(g: &[f64], cube: &LatticeBox) -> Result<f64> {
    let unit = TauField::zeros(cube.clone());
    let op = ConductanceOperator::assemble(&unit, cube, BoundaryMode::DirichletZero)?;
    let b = op.rhs_from_vertex_source(|v| g[cube.vertex_index(v)]);
    let report = op.solve(&b, |_| 0.0, solver_tolerance())?;
    let energy = op.energy(&report.solution);
    Ok((energy / cube.vertex_count() as f64).sqrt())
}

/// Result of the multiscale Poincaré comparison.
#[derive(Debug, Clone, Serialize)]
pub struct MultiscaleReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Compares `||u||_{H^{-1}}` on a half-open triadic cube against the
/// scale-indexed sum of local means plus the global mean term.
pub fn multiscale_poincare_check(u: &[f64], cube: &LatticeBox) -> Result<MultiscaleReport> {
    let level = match cube.kind {
        crate::lattice::BoxKind::TriadicHalfOpen { level } => level,
        _ => {
            return Err(Error::domain(
                "multiscale check expects a half-open triadic cube",
            ))
        }
    };
    let lhs = h_minus_one_norm(u, cube)?;
    let side = 3i64.pow(level);
    let global_mean: f64 =
        u.iter().sum::<f64>() / cube.vertex_count() as f64;
    let mut rhs = side as f64 * global_mean.abs();
    for n in 0..level {
        let sub_side = 3i64.pow(n);
        let per_axis = (side / sub_side) as usize;
        let count = per_axis.pow(cube.dim as u32);
        let mut sq_sum = 0.0;
        let mut offsets = vec![0usize; cube.dim];
        loop {
            let mut corner = cube.lo;
            for i in 0..cube.dim {
                corner[i] += offsets[i] as i64 * sub_side;
            }
            let sub = LatticeBox::triadic_half_open(cube.dim, n, corner)?;
            let mean: f64 = sub
                .vertices()
                .map(|v| u[cube.vertex_index(v)])
                .sum::<f64>()
                / sub.vertex_count() as f64;
            sq_sum += mean * mean;
            let mut i = 0;
            loop {
                if i == cube.dim {
                    let avg = sq_sum / count as f64;
                    rhs += (sub_side as f64) * avg.sqrt();
                    let ratio = if rhs > 0.0 {
                        lhs / rhs
                    } else if lhs == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    if n + 1 == level {
                        return Ok(MultiscaleReport { lhs, rhs, ratio });
                    }
                    break;
                }
                offsets[i] += 1;
                if offsets[i] < per_axis {
                    break;
                }
                offsets[i] = 0;
                i += 1;
            }
            if offsets.iter().all(|&o| o == 0) {
                break;
            }
        }
    }
    // level == 0: only the global term
    let ratio = if rhs > 0.0 {
        lhs / rhs
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(MultiscaleReport { lhs, rhs, ratio })
}
