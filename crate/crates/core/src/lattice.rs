//! Finite lattice geometry: boxes, triadic cubes, adapted simplexes, and the
//! directed-edge enumeration that all field storage is keyed to.
//!
//! Two cube conventions coexist and are tagged explicitly:
//!
//! - *centered*: `[-L, L]^d` (side `2L+1`), used for sampling boxes `Q_L` and
//!   for good-cube classification, where the constants are stated for the
//!   centered convention;
//! - *half-open triadic*: `z + [0, 3^n)^d` (side `3^n`), used for all
//!   partition logic (subadditivity, scale sweeps, multiscale averages),
//!   because half-open cubes nest exactly under the 3-adic refinement.
//!
//! Reports must never mix the two conventions for one quantity; the `kind`
//! tag records which one an instance uses.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet, VecDeque};

/// Maximum supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// A lattice vertex. Unused trailing coordinates are zero.
pub type Coord = [i64; MAX_DIM];

/// Builds a coordinate from the first `d` entries of `xs`.
pub fn coord(xs: &[i64]) -> Coord {
    let mut c = [0i64; MAX_DIM];
    c[..xs.len()].copy_from_slice(xs);
    c
}

/// A directed nearest-neighbor edge `base -> base + e_axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub base: Coord,
    pub axis: usize,
}

impl Edge {
    pub fn head(&self) -> Coord {
        let mut h = self.base;
        h[self.axis] += 1;
        h
    }
}

/// Which geometric family a domain belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxKind {
    /// Centered cube `[-L, L]^d`.
    Cube,
    /// Centered triadic cube `z + [-3^n, 3^n]^d`.
    TriadicCentered { level: u32 },
    /// Half-open triadic cube `z + [0, 3^n)^d`.
    TriadicHalfOpen { level: u32 },
    /// Lattice simplex adapted to a half-open triadic cube: the vertices of
    /// the cube whose offsets sort weakly under the stored permutation, with
    /// ties assigned to the lexicographically smallest eligible permutation.
    Simplex { level: u32, perm: [usize; MAX_DIM] },
    /// An axis-aligned box with no special structure.
    Plain,
}

/// A finite axis-aligned domain of `Z^d`, possibly restricted to a simplex.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBox {
    pub dim: usize,
    pub lo: Coord,
    pub hi: Coord,
    pub kind: BoxKind,
}

impl LatticeBox {
    /// The sampling box `Q_L = [-L, L]^d`.
    pub fn cube(dim: usize, half_side: i64) -> Result<Self> {
        check_dim(dim)?;
        if half_side < 0 {
            return Err(Error::domain(format!("negative half side {half_side}")));
        }
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for i in 0..dim {
            lo[i] = -half_side;
            hi[i] = half_side;
        }
        Ok(LatticeBox {
            dim,
            lo,
            hi,
            kind: BoxKind::Cube,
        })
    }

    /// Half-open triadic cube `corner + [0, 3^n)^d`.
    pub fn triadic_half_open(dim: usize, level: u32, corner: Coord) -> Result<Self> {
        check_dim(dim)?;
        let side = 3i64.pow(level);
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for i in 0..dim {
            lo[i] = corner[i];
            hi[i] = corner[i] + side - 1;
        }
        Ok(LatticeBox {
            dim,
            lo,
            hi,
            kind: BoxKind::TriadicHalfOpen { level },
        })
    }

    /// Centered triadic cube `center + [-3^n, 3^n]^d` (side `2*3^n + 1`).
    pub fn triadic_centered(dim: usize, level: u32, center: Coord) -> Result<Self> {
        check_dim(dim)?;
        let r = 3i64.pow(level);
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for i in 0..dim {
            lo[i] = center[i] - r;
            hi[i] = center[i] + r;
        }
        Ok(LatticeBox {
            dim,
            lo,
            hi,
            kind: BoxKind::TriadicCentered { level },
        })
    }

    /// Plain axis-aligned box with explicit corners.
    pub fn from_corners(dim: usize, lo: Coord, hi: Coord) -> Result<Self> {
        check_dim(dim)?;
        for i in 0..dim {
            if lo[i] > hi[i] {
                return Err(Error::domain(format!(
                    "empty box: lo[{i}] = {} > hi[{i}] = {}",
                    lo[i], hi[i]
                )));
            }
        }
        Ok(LatticeBox {
            dim,
            lo,
            hi,
            kind: BoxKind::Plain,
        })
    }

    pub fn side(&self, axis: usize) -> i64 {
        self.hi[axis] - self.lo[axis] + 1
    }

    /// Number of vertices of the bounding box (for simplexes, of the ambient
    /// cube, not the simplex itself).
    pub fn bounding_vertex_count(&self) -> usize {
        (0..self.dim).map(|i| self.side(i) as usize).product()
    }

    /// Number of vertices of the domain.
    pub fn vertex_count(&self) -> usize {
        match self.kind {
            BoxKind::Simplex { .. } => self.vertices().count(),
            _ => self.bounding_vertex_count(),
        }
    }

    pub fn contains(&self, v: Coord) -> bool {
        for i in 0..self.dim {
            if v[i] < self.lo[i] || v[i] > self.hi[i] {
                return false;
            }
        }
        match self.kind {
            BoxKind::Simplex { perm, .. } => {
                let mut off = [0i64; MAX_DIM];
                for i in 0..self.dim {
                    off[i] = v[i] - self.lo[i];
                }
                simplex_assignment(self.dim, off) == perm
            }
            _ => true,
        }
    }

    /// A vertex of the domain lying on its vertex boundary. For full boxes
    /// this is a vertex with some coordinate equal to `lo` or `hi`; for
    /// simplexes, a member vertex with a nearest neighbor outside the domain.
    /// The two definitions agree on full boxes.
    pub fn is_boundary(&self, v: Coord) -> bool {
        debug_assert!(self.contains(v));
        match self.kind {
            BoxKind::Simplex { .. } => {
                for axis in 0..self.dim {
                    for dir in [-1i64, 1] {
                        let mut w = v;
                        w[axis] += dir;
                        if !self.contains(w) {
                            return true;
                        }
                    }
                }
                false
            }
            _ => (0..self.dim).any(|i| v[i] == self.lo[i] || v[i] == self.hi[i]),
        }
    }

    pub fn is_interior(&self, v: Coord) -> bool {
        self.contains(v) && !self.is_boundary(v)
    }

    /// Row-major iteration over the domain's vertices, axis 0 fastest.
    pub fn vertices(&self) -> impl Iterator<Item = Coord> + '_ {
        BoxVertexIter::new(self.dim, self.lo, self.hi)
            .filter(move |&v| match self.kind {
                BoxKind::Simplex { .. } => self.contains(v),
                _ => true,
            })
    }

    /// Row-major vertex index within the bounding box, axis 0 fastest.
    /// Only meaningful for non-simplex kinds.
    pub fn vertex_index(&self, v: Coord) -> usize {
        let mut idx = 0usize;
        let mut stride = 1usize;
        for i in 0..self.dim {
            idx += (v[i] - self.lo[i]) as usize * stride;
            stride *= self.side(i) as usize;
        }
        idx
    }

    /// Inverse of [`vertex_index`](Self::vertex_index).
    pub fn vertex_at(&self, mut idx: usize) -> Coord {
        let mut v = [0i64; MAX_DIM];
        for i in 0..self.dim {
            let s = self.side(i) as usize;
            v[i] = self.lo[i] + (idx % s) as i64;
            idx /= s;
        }
        v
    }

    /// The directed edges of the domain, lexicographic by base vertex
    /// (row-major order) then axis. Both endpoints lie in the domain and
    /// every edge appears exactly once.
    pub fn enumerate_edges(&self) -> Result<Vec<Edge>> {
        if self.vertex_count() == 0 {
            return Err(Error::domain("cannot enumerate edges of an empty box"));
        }
        let mut edges = Vec::with_capacity(self.dim * self.bounding_vertex_count());
        for base in self.vertices() {
            for axis in 0..self.dim {
                let e = Edge { base, axis };
                if self.contains(e.head()) {
                    edges.push(e);
                }
            }
        }
        Ok(edges)
    }

    /// Closed-form edge count for full boxes.
    pub fn edge_count(&self) -> usize {
        match self.kind {
            BoxKind::Simplex { .. } => self.enumerate_edges().map(|e| e.len()).unwrap_or(0),
            _ => {
                let mut total = 0usize;
                for i in 0..self.dim {
                    let mut c = (self.side(i) - 1) as usize;
                    for j in 0..self.dim {
                        if j != i {
                            c *= self.side(j) as usize;
                        }
                    }
                    total += c;
                }
                total
            }
        }
    }

    /// Splits a half-open triadic cube into its `3^d` half-open children.
    /// Children are pairwise disjoint and cover the parent exactly.
    pub fn triadic_children(&self) -> Result<Vec<LatticeBox>> {
        let level = match self.kind {
            BoxKind::TriadicHalfOpen { level } => level,
            _ => {
                return Err(Error::domain(
                    "triadic children are defined for half-open triadic cubes",
                ))
            }
        };
        if level == 0 {
            return Err(Error::domain("a level-0 cube has no triadic children"));
        }
        let child_side = 3i64.pow(level - 1);
        let mut children = Vec::with_capacity(3usize.pow(self.dim as u32));
        let mut offsets = vec![0usize; self.dim];
        loop {
            let mut corner = self.lo;
            for i in 0..self.dim {
                corner[i] += offsets[i] as i64 * child_side;
            }
            children.push(LatticeBox::triadic_half_open(self.dim, level - 1, corner)?);
            // odometer over {0,1,2}^d
            let mut i = 0;
            loop {
                if i == self.dim {
                    return Ok(children);
                }
                offsets[i] += 1;
                if offsets[i] < 3 {
                    break;
                }
                offsets[i] = 0;
                i += 1;
            }
        }
    }

    /// Concentric enlargement of a centered triadic cube by one level.
    pub fn enlarged(&self) -> Result<LatticeBox> {
        match self.kind {
            BoxKind::TriadicCentered { level } => {
                let mut center = [0i64; MAX_DIM];
                for i in 0..self.dim {
                    center[i] = (self.lo[i] + self.hi[i]) / 2;
                }
                LatticeBox::triadic_centered(self.dim, level + 1, center)
            }
            _ => Err(Error::domain(
                "enlargement is defined for centered triadic cubes",
            )),
        }
    }

    /// Graph diameter of a full box (exact closed form).
    pub fn box_diameter(&self) -> usize {
        (0..self.dim).map(|i| (self.side(i) - 1) as usize).sum()
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::domain(format!(
            "dimension {dim} unsupported (d must be 1..={MAX_DIM})"
        )));
    }
    Ok(())
}

struct BoxVertexIter {
    dim: usize,
    lo: Coord,
    hi: Coord,
    cur: Coord,
    done: bool,
}

impl BoxVertexIter {
    fn new(dim: usize, lo: Coord, hi: Coord) -> Self {
        BoxVertexIter {
            dim,
            lo,
            hi,
            cur: lo,
            done: false,
        }
    }
}

impl Iterator for BoxVertexIter {
    type Item = Coord;

    fn next(&mut self) -> Option<Coord> {
        if self.done {
            return None;
        }
        let out = self.cur;
        let mut i = 0;
        loop {
            if i == self.dim {
                self.done = true;
                break;
            }
            self.cur[i] += 1;
            if self.cur[i] <= self.hi[i] {
                break;
            }
            self.cur[i] = self.lo[i];
            i += 1;
        }
        Some(out)
    }
}

/// Lexicographically ordered permutations of `{0, .., d-1}`, padded to
/// `MAX_DIM` with identity entries.
pub fn permutations(dim: usize) -> Vec<[usize; MAX_DIM]> {
    let mut items: Vec<usize> = (0..dim).collect();
    let mut out = Vec::new();
    loop {
        let mut p = [0usize; MAX_DIM];
        for (i, &x) in items.iter().enumerate() {
            p[i] = x;
        }
        for (i, slot) in p.iter_mut().enumerate().take(MAX_DIM).skip(dim) {
            *slot = i;
        }
        out.push(p);
        // next lexicographic permutation
        let n = items.len();
        let mut i = n.wrapping_sub(1);
        while i > 0 && items[i - 1] >= items[i] {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        let mut j = n - 1;
        while items[j] <= items[i - 1] {
            j -= 1;
        }
        items.swap(i - 1, j);
        items[i..].reverse();
    }
}

/// The permutation a cube-offset vertex is assigned to: the lexicographically
/// smallest permutation under which the offsets are weakly sorted. Total and
/// unique by construction, so the simplexes tile the cube.
fn simplex_assignment(dim: usize, off: Coord) -> [usize; MAX_DIM] {
    for p in permutations(dim) {
        let mut ok = true;
        for k in 0..dim.saturating_sub(1) {
            if off[p[k]] > off[p[k + 1]] {
                ok = false;
                break;
            }
        }
        if ok {
            return p;
        }
    }
    unreachable!("every offset vector is weakly sorted by some permutation")
}

/// The `d!` adapted simplexes tiling the half-open triadic cube
/// `corner + [0, 3^n)^d`. Every cube vertex belongs to exactly one simplex.
pub fn enumerate_simplexes(dim: usize, level: u32, corner: Coord) -> Result<Vec<LatticeBox>> {
    check_dim(dim)?;
    let cube = LatticeBox::triadic_half_open(dim, level, corner)?;
    Ok(permutations(dim)
        .into_iter()
        .map(|perm| LatticeBox {
            dim,
            lo: cube.lo,
            hi: cube.hi,
            kind: BoxKind::Simplex { level, perm },
        })
        .collect())
}

/// Graph diameter of a vertex set under the nearest-neighbor graph it
/// induces. Errors if the set is empty or disconnected.
pub fn graph_diameter(vertices: &HashSet<Coord>, dim: usize) -> Result<usize> {
    let mut best = 0usize;
    let mut first = true;
    for &start in vertices.iter() {
        let (reached, ecc) = bfs_eccentricity(vertices, dim, start);
        if first {
            if reached != vertices.len() {
                return Err(Error::domain(format!(
                    "vertex set disconnected: reached {reached} of {}",
                    vertices.len()
                )));
            }
            first = false;
        }
        best = best.max(ecc);
    }
    if first {
        return Err(Error::domain("empty vertex set has no diameter"));
    }
    Ok(best)
}

fn bfs_eccentricity(vertices: &HashSet<Coord>, dim: usize, start: Coord) -> (usize, usize) {
    let mut dist: HashMap<Coord, usize> = HashMap::with_capacity(vertices.len());
    dist.insert(start, 0);
    let mut queue = VecDeque::from([start]);
    let mut ecc = 0;
    while let Some(v) = queue.pop_front() {
        let d = dist[&v];
        ecc = ecc.max(d);
        for axis in 0..dim {
            for step in [-1i64, 1] {
                let mut w = v;
                w[axis] += step;
                if vertices.contains(&w) && !dist.contains_key(&w) {
                    dist.insert(w, d + 1);
                    queue.push_back(w);
                }
            }
        }
    }
    (dist.len(), ecc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_graph_edges_d1() {
        let b = LatticeBox::cube(1, 1).unwrap();
        let edges = b.enumerate_edges().unwrap();
        assert_eq!(edges.len(), 2);
        assert_eq!(edges.len(), b.edge_count());
    }

    #[test]
    fn q1_edge_count_d2() {
        let b = LatticeBox::cube(2, 1).unwrap();
        assert_eq!(b.enumerate_edges().unwrap().len(), 12);
    }

    #[test]
    fn centered_triadic_edge_count_matches_closed_form() {
        // side-7 centered cube at level 1: 2*N*(N-1) edges with N = 7
        let b = LatticeBox::triadic_centered(2, 1, [0, 0, 0]).unwrap();
        assert_eq!(b.side(0), 7);
        let edges = b.enumerate_edges().unwrap();
        assert_eq!(edges.len(), 84);
        assert_eq!(edges.len(), 2 * 7 * 6);
        assert_eq!(edges.len(), b.edge_count());
    }

    #[test]
    fn edge_enumeration_is_deterministic_and_bijective() {
        let b = LatticeBox::cube(2, 3).unwrap();
        let e1 = b.enumerate_edges().unwrap();
        let e2 = b.enumerate_edges().unwrap();
        assert_eq!(e1, e2);
        let set: HashSet<_> = e1.iter().copied().collect();
        assert_eq!(set.len(), e1.len());
        for e in &e1 {
            assert!(b.contains(e.base) && b.contains(e.head()));
        }
    }

    #[test]
    fn triadic_children_partition_parent() {
        for dim in [2usize, 3] {
            let parent = LatticeBox::triadic_half_open(dim, if dim == 2 { 1 } else { 2 }, [0; 3])
                .unwrap();
            let children = parent.triadic_children().unwrap();
            assert_eq!(children.len(), 3usize.pow(dim as u32));
            let total: usize = children.iter().map(|c| c.vertex_count()).sum();
            assert_eq!(total, parent.vertex_count());
            let mut seen = HashSet::new();
            for c in &children {
                for v in c.vertices() {
                    assert!(parent.contains(v));
                    assert!(seen.insert(v), "children overlap at {v:?}");
                }
            }
            assert_eq!(seen.len(), parent.vertex_count());
        }
    }

    #[test]
    fn level0_cube_has_no_children() {
        let b = LatticeBox::triadic_half_open(2, 0, [0; 3]).unwrap();
        assert!(b.triadic_children().is_err());
    }

    #[test]
    fn simplex_counts() {
        assert_eq!(enumerate_simplexes(2, 1, [0; 3]).unwrap().len(), 2);
        assert_eq!(enumerate_simplexes(3, 1, [0; 3]).unwrap().len(), 6);
    }

    #[test]
    fn simplexes_tile_the_cube() {
        for dim in [2usize, 3] {
            let level = 2u32.min(if dim == 3 { 1 } else { 2 });
            let cube = LatticeBox::triadic_half_open(dim, level, [0; 3]).unwrap();
            let simplexes = enumerate_simplexes(dim, level, [0; 3]).unwrap();
            let mut seen: HashMap<Coord, usize> = HashMap::new();
            let mut total = 0usize;
            for s in &simplexes {
                for v in s.vertices() {
                    *seen.entry(v).or_insert(0) += 1;
                    total += 1;
                }
            }
            assert_eq!(total, cube.vertex_count());
            assert!(seen.values().all(|&c| c == 1), "tiling overlap in d={dim}");
        }
    }

    #[test]
    fn interior_boundary_partition() {
        let b = LatticeBox::cube(2, 2).unwrap();
        let mut interior = 0;
        let mut boundary = 0;
        for v in b.vertices() {
            if b.is_boundary(v) {
                boundary += 1;
            }
            if b.is_interior(v) {
                interior += 1;
            }
        }
        assert_eq!(interior + boundary, b.vertex_count());
        assert_eq!(interior, 9);
    }

    #[test]
    fn diameter_trivial_cases() {
        let single: HashSet<Coord> = [[0, 0, 0]].into_iter().collect();
        assert_eq!(graph_diameter(&single, 2).unwrap(), 0);
        let path: HashSet<Coord> = [[0, 0, 0], [1, 0, 0], [2, 0, 0]].into_iter().collect();
        assert_eq!(graph_diameter(&path, 2).unwrap(), 2);
    }

    #[test]
    fn diameter_matches_floyd_warshall_oracle() {
        // deterministic pseudo-random connected cluster of 10 vertices
        let mut set: HashSet<Coord> = HashSet::new();
        let mut v = [0i64, 0, 0];
        set.insert(v);
        let mut state = 0x9e3779b97f4a7c15u64;
        while set.len() < 10 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let axis = (state >> 33) as usize % 2;
            let step = if (state >> 17) & 1 == 0 { 1 } else { -1 };
            v[axis] += step;
            set.insert(v);
        }
        let verts: Vec<Coord> = {
            let mut vs: Vec<_> = set.iter().copied().collect();
            vs.sort();
            vs
        };
        let n = verts.len();
        let big = 1_000_000usize;
        let mut dist = vec![vec![big; n]; n];
        for (i, a) in verts.iter().enumerate() {
            dist[i][i] = 0;
            for (j, b) in verts.iter().enumerate() {
                let dd: i64 = (0..2).map(|k| (a[k] - b[k]).abs()).sum();
                if dd == 1 {
                    dist[i][j] = 1;
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if dist[i][k] + dist[k][j] < dist[i][j] {
                        dist[i][j] = dist[i][k] + dist[k][j];
                    }
                }
            }
        }
        let oracle = dist.iter().flatten().copied().max().unwrap();
        assert!(oracle < big, "oracle cluster should be connected");
        assert_eq!(graph_diameter(&set, 2).unwrap(), oracle);
    }

    #[test]
    fn disconnected_set_errors() {
        let set: HashSet<Coord> = [[0, 0, 0], [5, 5, 0]].into_iter().collect();
        assert!(graph_diameter(&set, 2).is_err());
    }

    #[test]
    fn box_diameter_closed_form() {
        let b = LatticeBox::cube(2, 3).unwrap();
        let all: HashSet<Coord> = b.vertices().collect();
        assert_eq!(graph_diameter(&all, 2).unwrap(), b.box_diameter());
    }
}
