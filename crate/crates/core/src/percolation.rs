//! Bad-conductance clusters and their statistics: union-find decomposition,
//! good-cube classification, exceedance tail estimates, inverse-moment
//! estimation, and the large-scale Poincaré diagnostic.
//!
//! An edge is *bad* at threshold `t` when `|tau_e| > t`, i.e. its conductance
//! exceeds `e^t` or falls below `e^{-t}`.

use crate::field::TauField;
use crate::lattice::{BoxKind, Coord, Edge, LatticeBox};
use crate::stats::{self, linear_fit};
use crate::{Error, Result};
use serde::Serialize;
use std::collections::{HashMap, HashSet};

/// One connected component of the bad-edge subgraph.
#[derive(Debug, Clone)]
pub struct Cluster {
    /// Lexicographically smallest vertex; canonical and order-independent.
    pub representative: Coord,
    /// Sorted endpoints of the cluster's bad edges.
    pub vertices: Vec<Coord>,
    pub edges: Vec<Edge>,
    /// Graph diameter of the vertex set within the cluster subgraph.
    pub diameter: usize,
    /// In-box vertices adjacent to the cluster but not in it, sorted.
    pub boundary: Vec<Coord>,
}

#[derive(Debug, Clone)]
pub struct ClusterDecomposition {
    pub threshold: f64,
    pub clusters: Vec<Cluster>,
}

impl ClusterDecomposition {
    pub fn total_bad_edges(&self) -> usize {
        self.clusters.iter().map(|c| c.edges.len()).sum()
    }

    /// Clusters whose vertex set intersects `region`.
    pub fn intersecting<'a>(&'a self, region: &'a LatticeBox) -> impl Iterator<Item = &'a Cluster> {
        self.clusters
            .iter()
            .filter(move |c| c.vertices.iter().any(|&v| region.contains(v)))
    }
}

/// Maximal connected components of the bad-edge subgraph at threshold `t`.
pub fn decompose_clusters(tau: &TauField, threshold: f64) -> Result<ClusterDecomposition> {
    if threshold <= 0.0 {
        return Err(Error::domain("cluster threshold must be positive"));
    }
    let domain = &tau.domain;
    let edges = domain.enumerate_edges()?;
    let bad: Vec<Edge> = edges
        .iter()
        .filter(|e| tau.get(e).abs() > threshold)
        .copied()
        .collect();

    // union-find over bounding-box vertex indices
    let n = domain.bounding_vertex_count();
    let mut parent: Vec<u32> = (0..n as u32).collect();
    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            let up = parent[parent[x as usize] as usize];
            parent[x as usize] = up;
            x = up;
        }
        x
    }
    for e in &bad {
        let a = find(&mut parent, domain.vertex_index(e.base) as u32);
        let b = find(&mut parent, domain.vertex_index(e.head()) as u32);
        if a != b {
            parent[a.max(b) as usize] = a.min(b);
        }
    }

    let mut groups: HashMap<u32, Vec<Edge>> = HashMap::new();
    for e in &bad {
        let root = find(&mut parent, domain.vertex_index(e.base) as u32);
        groups.entry(root).or_default().push(*e);
    }

    // boundaries exclude the *global* bad vertex set: a cluster's neighbor
    // may belong to a different cluster and is then not a boundary vertex
    let mut all_bad: HashSet<Coord> = HashSet::new();
    for e in &bad {
        all_bad.insert(e.base);
        all_bad.insert(e.head());
    }
    let mut clusters: Vec<Cluster> = groups
        .into_values()
        .map(|edges| build_cluster(domain, edges, &all_bad))
        .collect::<Result<_>>()?;
    clusters.sort_by(|a, b| a.representative.cmp(&b.representative));
    Ok(ClusterDecomposition {
        threshold,
        clusters,
    })
}

fn build_cluster(domain: &LatticeBox, edges: Vec<Edge>, all_bad: &HashSet<Coord>) -> Result<Cluster> {
    let mut vset: HashSet<Coord> = HashSet::new();
    for e in &edges {
        vset.insert(e.base);
        vset.insert(e.head());
    }
    // diameter within the cluster subgraph: BFS restricted to bad edges
    let mut adj: HashMap<Coord, Vec<Coord>> = HashMap::new();
    for e in &edges {
        adj.entry(e.base).or_default().push(e.head());
        adj.entry(e.head()).or_default().push(e.base);
    }
    let diameter = subgraph_diameter(&adj, vset.len());
    let mut vertices: Vec<Coord> = vset.iter().copied().collect();
    vertices.sort();
    let representative = vertices[0];
    let mut bset: HashSet<Coord> = HashSet::new();
    for &v in &vertices {
        for axis in 0..domain.dim {
            for step in [-1i64, 1] {
                let mut w = v;
                w[axis] += step;
                if domain.contains(w) && !all_bad.contains(&w) {
                    bset.insert(w);
                }
            }
        }
    }
    let mut boundary: Vec<Coord> = bset.into_iter().collect();
    boundary.sort();
    Ok(Cluster {
        representative,
        vertices,
        edges,
        diameter,
        boundary,
    })
}

fn subgraph_diameter(adj: &HashMap<Coord, Vec<Coord>>, n: usize) -> usize {
    let mut best = 0;
    for &start in adj.keys() {
        let mut dist: HashMap<Coord, usize> = HashMap::with_capacity(n);
        dist.insert(start, 0);
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            let d = dist[&v];
            best = best.max(d);
            if let Some(nbrs) = adj.get(&v) {
                for &w in nbrs {
                    if !dist.contains_key(&w) {
                        dist.insert(w, d + 1);
                        queue.push_back(w);
                    }
                }
            }
        }
    }
    best
}

/// Verdict for one cube under the two good-cube conditions.
#[derive(Debug, Clone, Serialize)]
pub struct GoodCubeReport {
    pub level: u32,
    pub center: Vec<i64>,
    /// Sum of diam^{d+2} over clusters meeting the concentric enlargement.
    pub diam_moment: f64,
    /// The budget `|cube| / 100`.
    pub diam_moment_bound: f64,
    /// Per exponent p: `((avg a^{-p})^{-1/p}) / (<a^{-p}>^{-1/p})`; the cube
    /// passes when the ratio is at least 1/2.
    pub inverse_moment_ratios: Vec<(f64, f64)>,
    pub good: bool,
    pub failing: Option<String>,
}

/// Exponent grid for the inverse-moment condition.
pub const GOOD_CUBE_EXPONENTS: [f64; 3] = [1.0, 2.0, 4.0];

/// Classifies a centered triadic cube as good or bad given precomputed
/// clusters of the ambient field and ensemble reference inverse moments
/// `(p, <a^{-p}>)`.
pub fn classify_good_cube(
    tau: &TauField,
    clusters: &ClusterDecomposition,
    cube: &LatticeBox,
    reference_inverse_moments: &[(f64, f64)],
) -> Result<GoodCubeReport> {
    let level = match cube.kind {
        BoxKind::TriadicCentered { level } => level,
        _ => {
            return Err(Error::domain(
                "good-cube classification expects a centered triadic cube",
            ))
        }
    };
    let enlargement = cube.enlarged()?;
    for i in 0..cube.dim {
        if enlargement.lo[i] < tau.domain.lo[i] || enlargement.hi[i] > tau.domain.hi[i] {
            return Err(Error::domain(format!(
                "enlargement of the level-{level} cube overflows the field box"
            )));
        }
    }

    let d = cube.dim as i32;
    let diam_moment: f64 = clusters
        .intersecting(&enlargement)
        .map(|c| (c.diameter as f64).powi(d + 2))
        .sum();
    let diam_moment_bound = cube.vertex_count() as f64 / 100.0;

    let cube_edges = cube.enumerate_edges()?;
    let mut inverse_moment_ratios = Vec::new();
    let mut failing = None;
    if diam_moment > diam_moment_bound {
        failing = Some(format!(
            "diameter moment {diam_moment:.3} exceeds {diam_moment_bound:.3}"
        ));
    }
    for &(p, reference) in reference_inverse_moments {
        // per-edge empirical average against the per-edge ensemble moment
        let avg: f64 = cube_edges
            .iter()
            .map(|e| (-p * tau.get(e)).exp())
            .sum::<f64>()
            / cube_edges.len() as f64;
        let lhs = avg.powf(-1.0 / p);
        let rhs = reference.powf(-1.0 / p);
        let ratio = lhs / rhs;
        if ratio < 0.5 && failing.is_none() {
            failing = Some(format!("inverse moment ratio {ratio:.3} < 1/2 at p = {p}"));
        }
        inverse_moment_ratios.push((p, ratio));
    }

    let mut center = Vec::with_capacity(cube.dim);
    for i in 0..cube.dim {
        center.push((cube.lo[i] + cube.hi[i]) / 2);
    }
    Ok(GoodCubeReport {
        level,
        center,
        diam_moment,
        diam_moment_bound,
        good: failing.is_none(),
        inverse_moment_ratios,
        failing,
    })
}

/// One row of the exceedance-tail table.
#[derive(Debug, Clone, Serialize)]
pub struct TailRow {
    pub threshold: f64,
    /// Number of edges in the pattern (a straight path).
    pub pattern_len: usize,
    pub trials: u64,
    pub hits_upper: u64,
    pub hits_lower: u64,
    /// Joint exceedance probability estimate for the upper tail; when no
    /// hits were seen this is the rule-of-three bound `3 / trials` and
    /// `is_bound` is set.
    pub p_upper: f64,
    pub p_lower: f64,
    pub is_bound_upper: bool,
    pub is_bound_lower: bool,
    /// Jackknife standard error of `p_upper` over samples (0 when a bound).
    pub se_upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub rows: Vec<TailRow>,
    /// Per threshold: fitted decay rate of `log p` in the pattern length
    /// (the slope is `-alpha`), with the fit R².
    pub alpha_fits: Vec<(f64, f64, f64)>,
}

/// Estimates joint exceedance probabilities for straight edge paths of
/// length `1..=max_len` pooled over translations inside a centered window
/// (half the box side) and over samples.
pub fn tail_statistics(
    samples: &[TauField],
    thresholds: &[f64],
    max_len: usize,
) -> Result<TailReport> {
    if samples.len() < 100 {
        return Err(Error::InsufficientSamples {
            got: samples.len(),
            required: 100,
        });
    }
    let domain = &samples[0].domain;
    let d = domain.dim;
    // pool over a centered window to suppress boundary effects
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for i in 0..d {
        let quarter = (domain.hi[i] - domain.lo[i] + 1) / 4;
        lo[i] = domain.lo[i] + quarter;
        hi[i] = domain.hi[i] - quarter;
    }
    let window = LatticeBox::from_corners(d, lo, hi)?;

    let mut rows = Vec::new();
    for &t in thresholds {
        for len in 1..=max_len {
            let mut per_sample_upper: Vec<f64> = Vec::with_capacity(samples.len());
            let mut trials_per_sample = 0u64;
            let mut hits_upper = 0u64;
            let mut hits_lower = 0u64;
            for tau in samples {
                let mut local_trials = 0u64;
                let mut local_upper = 0u64;
                for base in window.vertices() {
                    if base[0] + len as i64 > domain.hi[0] {
                        continue;
                    }
                    local_trials += 1;
                    let mut all_upper = true;
                    let mut all_lower = true;
                    for k in 0..len {
                        let mut b = base;
                        b[0] += k as i64;
                        let v = tau.get(&Edge { base: b, axis: 0 });
                        if v < t {
                            all_upper = false;
                        }
                        if v > -t {
                            all_lower = false;
                        }
                        if !all_upper && !all_lower {
                            break;
                        }
                    }
                    if all_upper {
                        local_upper += 1;
                    }
                    if all_lower {
                        hits_lower += 1;
                    }
                }
                trials_per_sample = local_trials;
                hits_upper += local_upper;
                per_sample_upper.push(local_upper as f64 / local_trials.max(1) as f64);
            }
            let trials = trials_per_sample * samples.len() as u64;
            let (p_upper, is_bound_upper) = if hits_upper == 0 {
                (3.0 / trials as f64, true)
            } else {
                (hits_upper as f64 / trials as f64, false)
            };
            let (p_lower, is_bound_lower) = if hits_lower == 0 {
                (3.0 / trials as f64, true)
            } else {
                (hits_lower as f64 / trials as f64, false)
            };
            let se_upper = if is_bound_upper {
                0.0
            } else {
                stats::mean_and_se(&per_sample_upper).1
            };
            rows.push(TailRow {
                threshold: t,
                pattern_len: len,
                trials,
                hits_upper,
                hits_lower,
                p_upper,
                p_lower,
                is_bound_upper,
                is_bound_lower,
                se_upper,
            });
        }
    }

    // per-threshold decay rate of log p in |C|
    let mut alpha_fits = Vec::new();
    for &t in thresholds {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.threshold == t && !r.is_bound_upper)
            .map(|r| (r.pattern_len as f64, r.p_upper.ln()))
            .collect();
        if pts.len() >= 2 {
            let (slope, _, r2) = linear_fit(&pts);
            alpha_fits.push((t, -slope, r2));
        }
    }
    Ok(TailReport { rows, alpha_fits })
}

/// Monte Carlo estimate of a power `a(e)^k` of the central-edge conductance
/// (negative `k` gives the inverse moments), with stability diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct MomentEstimate {
    pub exponent: f64,
    pub mean: f64,
    pub std_err: f64,
    /// |mean(first half) - mean(all)| in units of the combined SE.
    pub cauchy_gap_sigma: f64,
    /// Largest single-sample share of the sum; near 1 means one sample
    /// dominates.
    pub max_share: f64,
    /// Hill estimate of the upper tail index from the top sqrt(n) order
    /// statistics; an index at or below 1 means the mean does not exist.
    pub hill_tail_index: f64,
    pub divergence_suspected: bool,
}

/// The central edge of a box (axis 0, based at the center vertex).
pub fn central_edge(domain: &LatticeBox) -> Edge {
    let mut base = [0i64; 3];
    for i in 0..domain.dim {
        base[i] = (domain.lo[i] + domain.hi[i]) / 2;
    }
    Edge { base, axis: 0 }
}

pub fn estimate_moments(samples: &[TauField], exponents: &[f64]) -> Result<Vec<MomentEstimate>> {
    if samples.len() < 100 {
        return Err(Error::InsufficientSamples {
            got: samples.len(),
            required: 100,
        });
    }
    let edge = central_edge(&samples[0].domain);
    let taus: Vec<f64> = samples.iter().map(|s| s.get(&edge)).collect();
    Ok(exponents
        .iter()
        .map(|&k| {
            let vals: Vec<f64> = taus.iter().map(|&t| (k * t).exp()).collect();
            let (mean, std_err) = stats::mean_and_se(&vals);
            let half = &vals[..vals.len() / 2];
            let (mean_half, se_half) = stats::mean_and_se(half);
            let combined = (std_err * std_err + se_half * se_half).sqrt().max(1e-300);
            let cauchy_gap_sigma = (mean_half - mean).abs() / combined;
            let total: f64 = vals.iter().sum();
            let max_share = vals.iter().fold(0.0f64, |m, &v| m.max(v)) / total.max(1e-300);
            let hill_tail_index = hill_index(&vals);
            let divergence_suspected =
                cauchy_gap_sigma > 3.0 || max_share > 0.2 || hill_tail_index < 1.3;
            MomentEstimate {
                exponent: k,
                mean,
                std_err,
                cauchy_gap_sigma,
                max_share,
                hill_tail_index,
                divergence_suspected,
            }
        })
        .collect())
}

/// Hill estimator of the upper tail index over the top sqrt(n) order
/// statistics. Tail index <= 1 indicates an infinite mean.
fn hill_index(vals: &[f64]) -> f64 {
    let n = vals.len();
    let k = (n as f64).sqrt() as usize;
    if k < 4 {
        return f64::INFINITY;
    }
    let mut sorted: Vec<f64> = vals.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let pivot = sorted[k];
    if pivot <= 0.0 {
        return f64::INFINITY;
    }
    let s: f64 = sorted[..k].iter().map(|&x| (x / pivot).ln()).sum();
    if s <= 0.0 {
        f64::INFINITY
    } else {
        k as f64 / s
    }
}

/// Operational lattice-animal connectivity bound `4 d e` used by the
/// subcriticality sanity check.
pub fn animal_connectivity_bound(dim: usize) -> f64 {
    4.0 * dim as f64 * std::f64::consts::E
}

/// Centered triadic cubes of one level, on the `3^level`-spaced grid, whose
/// concentric enlargements fit inside the box.
pub fn good_cube_positions(domain: &LatticeBox, level: u32) -> Vec<LatticeBox> {
    let spacing = 3i64.pow(level);
    let radius = 3i64.pow(level + 1);
    let mut centers: Vec<Vec<i64>> = vec![Vec::new(); domain.dim];
    for (i, list) in centers.iter_mut().enumerate() {
        let mut c = 0i64;
        while c - radius >= domain.lo[i] && c + radius <= domain.hi[i] {
            list.push(c);
            c += spacing;
        }
        let mut c = -spacing;
        while c - radius >= domain.lo[i] && c + radius <= domain.hi[i] {
            list.push(c);
            c -= spacing;
        }
        list.sort_unstable();
    }
    if centers.iter().any(|l| l.is_empty()) {
        return Vec::new();
    }
    let mut cubes = Vec::new();
    let mut idx = vec![0usize; domain.dim];
    loop {
        let mut center = [0i64; 3];
        for i in 0..domain.dim {
            center[i] = centers[i][idx[i]];
        }
        if let Ok(cube) = LatticeBox::triadic_centered(domain.dim, level, center) {
            cubes.push(cube);
        }
        let mut i = 0;
        loop {
            if i == domain.dim {
                return cubes;
            }
            idx[i] += 1;
            if idx[i] < centers[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// The large-scale Poincaré ratio
/// `inf_s avg_cube |u - s|^2  /  diam(cube)^2 avg_cube a |grad u|^2`.
/// Returns 0.0 when the numerator vanishes and infinity when only the
/// denominator does.
pub fn large_scale_poincare_check(
    tau: &TauField,
    u: &[f64],
    cube: &LatticeBox,
) -> Result<f64> {
    // tripled concentric region in the cube's own convention
    let tripled = match cube.kind {
        BoxKind::TriadicHalfOpen { level } => {
            let side = 3i64.pow(level);
            let mut corner = [0i64; 3];
            for i in 0..cube.dim {
                corner[i] = cube.lo[i] - side;
            }
            LatticeBox::triadic_half_open(cube.dim, level + 1, corner)?
        }
        _ => cube.enlarged()?,
    };
    for i in 0..cube.dim {
        if tripled.lo[i] < tau.domain.lo[i] || tripled.hi[i] > tau.domain.hi[i] {
            return Err(Error::domain("3x cube overflows the field box"));
        }
    }
    let verts: Vec<Coord> = cube.vertices().collect();
    let mean: f64 = verts
        .iter()
        .map(|&v| u[tau.domain.vertex_index(v)])
        .sum::<f64>()
        / verts.len() as f64;
    let lhs: f64 = verts
        .iter()
        .map(|&v| {
            let x = u[tau.domain.vertex_index(v)] - mean;
            x * x
        })
        .sum::<f64>()
        / verts.len() as f64;
    let mut energy = 0.0;
    for e in cube.enumerate_edges()? {
        let g = u[tau.domain.vertex_index(e.head())] - u[tau.domain.vertex_index(e.base)];
        energy += tau.conductance(&e) * g * g;
    }
    let diam = cube.box_diameter() as f64;
    let rhs = diam * diam * energy / verts.len() as f64;
    if lhs == 0.0 {
        return Ok(0.0);
    }
    if rhs == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(lhs / rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::coord;

    #[test]
    fn zero_field_has_no_clusters() {
        let tau = TauField::zeros(LatticeBox::cube(2, 3).unwrap());
        let dec = decompose_clusters(&tau, 1.0).unwrap();
        assert!(dec.clusters.is_empty());
    }

    #[test]
    fn single_bad_edge_cluster() {
        let domain = LatticeBox::cube(2, 3).unwrap();
        let mut tau = TauField::zeros(domain.clone());
        let e = Edge {
            base: coord(&[0, 0]),
            axis: 0,
        };
        tau.set(&e, 10.0);
        let dec = decompose_clusters(&tau, 5.0).unwrap();
        assert_eq!(dec.clusters.len(), 1);
        let c = &dec.clusters[0];
        assert_eq!(c.vertices, vec![coord(&[0, 0]), coord(&[1, 0])]);
        assert_eq!(c.diameter, 1);
        // six neighbors of {0, e1} in d=2
        assert_eq!(c.boundary.len(), 6);
        assert_eq!(c.representative, coord(&[0, 0]));
        assert_eq!(dec.total_bad_edges(), 1);
    }

    #[test]
    fn negative_tau_is_also_bad() {
        let domain = LatticeBox::cube(2, 2).unwrap();
        let mut tau = TauField::zeros(domain.clone());
        tau.set(
            &Edge {
                base: coord(&[0, 0]),
                axis: 1,
            },
            -7.0,
        );
        let dec = decompose_clusters(&tau, 5.0).unwrap();
        assert_eq!(dec.clusters.len(), 1);
    }

    #[test]
    fn clusters_match_flood_fill_oracle() {
        // pseudo-random tau on a 33x33 box; flood fill over bad edges as an
        // independent reference
        let domain = LatticeBox::cube(2, 16).unwrap();
        let edges = domain.enumerate_edges().unwrap();
        let mut state = 12345u64;
        let mut tau = TauField::zeros(domain.clone());
        for e in &edges {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            // heavy-ish tails so some edges exceed the threshold
            let v = (u - 0.5) * 12.0;
            tau.set(e, v);
        }
        let t = 3.0;
        let dec = decompose_clusters(&tau, t).unwrap();

        // oracle: adjacency flood fill
        let bad: Vec<&Edge> = edges.iter().filter(|e| tau.get(e).abs() > t).collect();
        let mut adj: HashMap<Coord, Vec<Coord>> = HashMap::new();
        for e in &bad {
            adj.entry(e.base).or_default().push(e.head());
            adj.entry(e.head()).or_default().push(e.base);
        }
        let mut seen: HashSet<Coord> = HashSet::new();
        let mut comps = 0usize;
        let mut diams: Vec<usize> = Vec::new();
        let mut keys: Vec<Coord> = adj.keys().copied().collect();
        keys.sort();
        for &start in &keys {
            if seen.contains(&start) {
                continue;
            }
            comps += 1;
            let mut comp: HashSet<Coord> = HashSet::new();
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                if !comp.insert(v) {
                    continue;
                }
                seen.insert(v);
                for &w in &adj[&v] {
                    if !comp.contains(&w) {
                        stack.push(w);
                    }
                }
            }
            // diameter within the bad-edge subgraph
            let sub_adj: HashMap<Coord, Vec<Coord>> = comp
                .iter()
                .map(|&v| (v, adj[&v].clone()))
                .collect();
            diams.push(subgraph_diameter(&sub_adj, comp.len()));
        }
        assert_eq!(dec.clusters.len(), comps);
        let mut got: Vec<usize> = dec.clusters.iter().map(|c| c.diameter).collect();
        got.sort_unstable();
        diams.sort_unstable();
        assert_eq!(got, diams);
        assert_eq!(dec.total_bad_edges(), bad.len());
    }

    #[test]
    fn good_cube_trivial_fixture() {
        let domain = LatticeBox::cube(2, 13).unwrap();
        let tau = TauField::zeros(domain.clone());
        let clusters = decompose_clusters(&tau, 5.0).unwrap();
        let cube = LatticeBox::triadic_centered(2, 1, [0, 0, 0]).unwrap();
        let refs: Vec<(f64, f64)> = GOOD_CUBE_EXPONENTS.iter().map(|&p| (p, 1.0)).collect();
        let rep = classify_good_cube(&tau, &clusters, &cube, &refs).unwrap();
        assert!(rep.good, "{:?}", rep.failing);
        for &(_, ratio) in &rep.inverse_moment_ratios {
            assert!((ratio - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn good_cube_diameter_condition_fails() {
        let domain = LatticeBox::cube(2, 13).unwrap();
        let mut tau = TauField::zeros(domain.clone());
        // one bad edge in the enlargement: diam^4 = 1 > |cube|/100 = 0.49
        tau.set(
            &Edge {
                base: coord(&[2, 2]),
                axis: 0,
            },
            10.0,
        );
        let clusters = decompose_clusters(&tau, 5.0).unwrap();
        let cube = LatticeBox::triadic_centered(2, 1, [0, 0, 0]).unwrap();
        let refs: Vec<(f64, f64)> = GOOD_CUBE_EXPONENTS.iter().map(|&p| (p, 1.0)).collect();
        let rep = classify_good_cube(&tau, &clusters, &cube, &refs).unwrap();
        assert!(!rep.good);
        assert!(rep.failing.unwrap().contains("diameter moment"));
    }

    #[test]
    fn good_cube_enlargement_overflow_errors() {
        let domain = LatticeBox::cube(2, 5).unwrap();
        let tau = TauField::zeros(domain.clone());
        let clusters = decompose_clusters(&tau, 5.0).unwrap();
        let cube = LatticeBox::triadic_centered(2, 1, [0, 0, 0]).unwrap();
        assert!(classify_good_cube(&tau, &clusters, &cube, &[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn moments_of_constant_field_are_exact() {
        let domain = LatticeBox::cube(2, 4).unwrap();
        let samples: Vec<TauField> = (0..120).map(|_| TauField::zeros(domain.clone())).collect();
        let ests = estimate_moments(&samples, &[-1.0, -2.0, -4.0]).unwrap();
        for e in &ests {
            assert_eq!(e.mean, 1.0);
            assert!(!e.divergence_suspected);
        }
    }

    #[test]
    fn poincare_ratio_zero_for_constant() {
        let domain = LatticeBox::cube(2, 13).unwrap();
        let tau = TauField::zeros(domain.clone());
        let cube = LatticeBox::triadic_centered(2, 1, [0, 0, 0]).unwrap();
        let u = vec![3.0; domain.bounding_vertex_count()];
        assert_eq!(large_scale_poincare_check(&tau, &u, &cube).unwrap(), 0.0);
    }

    #[test]
    fn poincare_ratio_bounded_for_affine() {
        // a = 1, u = x: LHS = Var(x) over the cube, RHS = diam^2 * edge
        // density; the ratio is far below 1
        let domain = LatticeBox::cube(2, 13).unwrap();
        let tau = TauField::zeros(domain.clone());
        let cube = LatticeBox::triadic_centered(2, 1, [0, 0, 0]).unwrap();
        let mut u = vec![0.0; domain.bounding_vertex_count()];
        for v in domain.vertices() {
            u[domain.vertex_index(v)] = v[0] as f64;
        }
        let ratio = large_scale_poincare_check(&tau, &u, &cube).unwrap();
        assert!(ratio > 0.0 && ratio <= 1.0, "ratio {ratio}");
    }
}
