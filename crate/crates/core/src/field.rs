//! Vertex- and edge-indexed fields on a lattice box, the discrete calculus
//! used throughout the lab, and the versioned binary snapshot format.
//!
//! Layout conventions are fixed for snapshot reproducibility: vertex values
//! are row-major (axis 0 fastest), edge values follow the deterministic edge
//! enumeration (lexicographic by base vertex, then axis).

use crate::lattice::{BoxKind, Coord, Edge, LatticeBox, MAX_DIM};
use crate::percolation::Cluster;
use crate::{Error, Result};
use std::io::{Read, Write};
use std::sync::Arc;

/// Boundary condition tag carried by height fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// Values vanish identically on the box boundary.
    DirichletZero,
    Free,
}

/// O(1) edge index lookup for a full box: `offsets[vi]` counts edges whose
/// base precedes vertex `vi` in row-major order.
#[derive(Debug, Clone)]
pub struct EdgeIndexer {
    offsets: Vec<u32>,
    total: usize,
}

impl EdgeIndexer {
    pub fn new(domain: &LatticeBox) -> Self {
        let n = domain.bounding_vertex_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        for v in domain.vertices() {
            offsets.push(acc);
            for axis in 0..domain.dim {
                if v[axis] < domain.hi[axis] {
                    acc += 1;
                }
            }
        }
        offsets.push(acc);
        EdgeIndexer {
            offsets,
            total: acc as usize,
        }
    }

    pub fn edge_count(&self) -> usize {
        self.total
    }

    pub fn index(&self, domain: &LatticeBox, e: &Edge) -> usize {
        let vi = domain.vertex_index(e.base);
        let mut k = self.offsets[vi] as usize;
        for axis in 0..e.axis {
            if e.base[axis] < domain.hi[axis] {
                k += 1;
            }
        }
        k
    }
}

/// Interface height field `phi`, one value per box vertex.
#[derive(Debug, Clone)]
pub struct PhiField {
    pub domain: LatticeBox,
    pub values: Vec<f64>,
    pub bc: BoundaryCondition,
}

impl PhiField {
    pub fn zeros(domain: LatticeBox, bc: BoundaryCondition) -> Self {
        let n = domain.bounding_vertex_count();
        PhiField {
            domain,
            values: vec![0.0; n],
            bc,
        }
    }

    /// Wraps explicit values; enforces the Dirichlet-zero invariant.
    pub fn from_values(
        domain: LatticeBox,
        values: Vec<f64>,
        bc: BoundaryCondition,
    ) -> Result<Self> {
        if values.len() != domain.bounding_vertex_count() {
            return Err(Error::domain(format!(
                "value count {} does not match box vertex count {}",
                values.len(),
                domain.bounding_vertex_count()
            )));
        }
        if bc == BoundaryCondition::DirichletZero {
            for v in domain.vertices() {
                if domain.is_boundary(v) && values[domain.vertex_index(v)] != 0.0 {
                    return Err(Error::domain(format!(
                        "dirichlet-zero field has nonzero boundary value at {v:?}"
                    )));
                }
            }
        }
        Ok(PhiField { domain, values, bc })
    }

    pub fn get(&self, v: Coord) -> f64 {
        self.values[self.domain.vertex_index(v)]
    }

    pub fn set(&mut self, v: Coord, x: f64) {
        let i = self.domain.vertex_index(v);
        self.values[i] = x;
    }

    /// The affine field `x -> p . x`.
    pub fn affine(domain: LatticeBox, slope: &[f64]) -> Self {
        let mut values = vec![0.0; domain.bounding_vertex_count()];
        for v in domain.vertices() {
            let mut s = 0.0;
            for i in 0..domain.dim {
                s += slope[i] * v[i] as f64;
            }
            values[domain.vertex_index(v)] = s;
        }
        PhiField {
            domain,
            values,
            bc: BoundaryCondition::Free,
        }
    }
}

/// Discrete gradient of a height field along a directed edge.
pub fn gradient(phi: &PhiField, e: &Edge) -> Result<f64> {
    if !phi.domain.contains(e.base) || !phi.domain.contains(e.head()) {
        return Err(Error::domain(format!("edge {e:?} outside field box")));
    }
    Ok(phi.get(e.head()) - phi.get(e.base))
}

/// Log-conductance field `tau`, one value per box edge; the conductance is
/// `a(e) = exp(tau_e)`.
#[derive(Debug, Clone)]
pub struct TauField {
    pub domain: LatticeBox,
    pub tau: Vec<f64>,
    indexer: EdgeIndexer,
}

impl TauField {
    pub fn zeros(domain: LatticeBox) -> Self {
        let indexer = EdgeIndexer::new(&domain);
        TauField {
            tau: vec![0.0; indexer.edge_count()],
            domain,
            indexer,
        }
    }

    pub fn from_values(domain: LatticeBox, tau: Vec<f64>) -> Result<Self> {
        let indexer = EdgeIndexer::new(&domain);
        if tau.len() != indexer.edge_count() {
            return Err(Error::domain(format!(
                "tau count {} does not match box edge count {}",
                tau.len(),
                indexer.edge_count()
            )));
        }
        Ok(TauField {
            domain,
            tau,
            indexer,
        })
    }

    pub fn edge_index(&self, e: &Edge) -> usize {
        self.indexer.index(&self.domain, e)
    }

    pub fn edge_count(&self) -> usize {
        self.indexer.edge_count()
    }

    pub fn get(&self, e: &Edge) -> f64 {
        self.tau[self.edge_index(e)]
    }

    pub fn set(&mut self, e: &Edge, value: f64) {
        let i = self.edge_index(e);
        self.tau[i] = value;
    }

    /// Conductance of an edge.
    pub fn conductance(&self, e: &Edge) -> f64 {
        self.get(e).exp()
    }
}

/// Replaces values on each bad-conductance cluster by the mean of the input
/// over the cluster's in-box boundary vertex set; identity off the clusters.
/// Idempotent, since boundary vertices are never cluster vertices.
pub fn hat_transform(
    domain: &LatticeBox,
    values: &[f64],
    clusters: &[Cluster],
) -> Result<Vec<f64>> {
    let mut out = values.to_vec();
    for cluster in clusters {
        if cluster.boundary.is_empty() {
            return Err(Error::DegenerateCluster(format!(
                "cluster at {:?} has no in-box boundary vertices",
                cluster.representative
            )));
        }
        let mean = cluster
            .boundary
            .iter()
            .map(|&v| values[domain.vertex_index(v)])
            .sum::<f64>()
            / cluster.boundary.len() as f64;
        for &v in &cluster.vertices {
            out[domain.vertex_index(v)] = mean;
        }
    }
    Ok(out)
}

type Component = Arc<dyn Fn(&[f64; MAX_DIM]) -> f64 + Send + Sync>;
type RadialProfile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Smooth compactly supported vector test function, given analytically and
/// evaluated at `x / R` with exact integer-to-float conversion.
#[derive(Clone)]
pub struct TestVectorField {
    pub dim: usize,
    /// Euclidean radius outside which every component vanishes.
    pub support_radius: f64,
    /// Macroscopic scale `R`.
    pub scale: f64,
    components: Vec<Component>,
    divergence: Option<Component>,
    /// Set when every component equals one radial profile `w(|x|)`; enables
    /// the closed angular reductions in the continuum prediction.
    radial: Option<RadialProfile>,
}

impl TestVectorField {
    pub fn new(
        dim: usize,
        support_radius: f64,
        scale: f64,
        components: Vec<Component>,
        divergence: Option<Component>,
    ) -> Self {
        assert_eq!(components.len(), dim);
        TestVectorField {
            dim,
            support_radius,
            scale,
            components,
            divergence,
            radial: None,
        }
    }

    /// The default test function: every component is the C² bump
    /// `(1 - |x|^2)^3` on `|x| < 1`. Its divergence is analytic:
    /// `-6 (sum_i x_i) (1 - |x|^2)^2`.
    pub fn poly_bump(dim: usize, scale: f64) -> Self {
        let bump = move |x: &[f64; MAX_DIM]| {
            let r2: f64 = x[..dim].iter().map(|v| v * v).sum();
            if r2 < 1.0 {
                let w = 1.0 - r2;
                w * w * w
            } else {
                0.0
            }
        };
        let div = move |x: &[f64; MAX_DIM]| {
            let r2: f64 = x[..dim].iter().map(|v| v * v).sum();
            if r2 < 1.0 {
                let w = 1.0 - r2;
                -6.0 * x[..dim].iter().sum::<f64>() * w * w
            } else {
                0.0
            }
        };
        let components: Vec<Component> = (0..dim)
            .map(|_| Arc::new(bump) as Component)
            .collect();
        let mut f = TestVectorField::new(dim, 1.0, scale, components, Some(Arc::new(div)));
        f.radial = Some(Arc::new(|s: f64| {
            if s < 1.0 {
                let w = 1.0 - s * s;
                w * w * w
            } else {
                0.0
            }
        }));
        f
    }

    /// The shared radial component profile, when one exists.
    pub fn radial_profile(&self) -> Option<&(dyn Fn(f64) -> f64 + Send + Sync)> {
        self.radial.as_deref()
    }

    /// Component `i` evaluated at the macroscopic point `x / R`.
    pub fn component_at_lattice(&self, i: usize, x: Coord) -> f64 {
        let mut y = [0.0f64; MAX_DIM];
        for k in 0..self.dim {
            y[k] = x[k] as f64 / self.scale;
        }
        (self.components[i])(&y)
    }

    /// Component `i` at a macroscopic (already rescaled) point.
    pub fn component(&self, i: usize, y: &[f64; MAX_DIM]) -> f64 {
        (self.components[i])(y)
    }

    /// Continuum divergence at a macroscopic point, when known analytically.
    pub fn divergence(&self, y: &[f64; MAX_DIM]) -> Option<f64> {
        self.divergence.as_ref().map(|d| d(y))
    }

    /// Checks that the rescaled support fits inside the interior of `Q_L`.
    pub fn check_support(&self, domain: &LatticeBox) -> Result<()> {
        let needed = self.scale * self.support_radius;
        for i in 0..self.dim {
            let room = (domain.hi[i].min(-domain.lo[i]) - 1) as f64;
            if needed > room {
                return Err(Error::domain(format!(
                    "support radius {needed} exceeds interior room {room} on axis {i}"
                )));
            }
        }
        Ok(())
    }

    /// The edge field `f(e) := f_i(base / R)` for `e = (base, base + e_i)`,
    /// in edge-enumeration order.
    pub fn edge_values(&self, domain: &LatticeBox) -> Result<Vec<f64>> {
        let edges = domain.enumerate_edges()?;
        Ok(edges
            .iter()
            .map(|e| self.component_at_lattice(e.axis, e.base))
            .collect())
    }
}

/// The rescaled linear statistic
/// `F_R = R^{-d/2} sum_x sum_i f_i(x/R) (phi(x+e_i) - phi(x))`.
pub fn evaluate_f_r(phi: &PhiField, f: &TestVectorField) -> Result<f64> {
    f.check_support(&phi.domain)?;
    let domain = &phi.domain;
    let d = domain.dim;
    let reach = (f.scale * f.support_radius).ceil() as i64;
    let mut lo = [0i64; MAX_DIM];
    let mut hi = [0i64; MAX_DIM];
    for i in 0..d {
        lo[i] = (-reach).max(domain.lo[i]);
        hi[i] = reach.min(domain.hi[i] - 1);
    }
    let support = LatticeBox::from_corners(d, lo, hi)?;
    let mut sum = 0.0;
    for x in support.vertices() {
        for i in 0..d {
            let w = f.component_at_lattice(i, x);
            if w != 0.0 {
                let e = Edge { base: x, axis: i };
                sum += w * (phi.get(e.head()) - phi.get(x));
            }
        }
    }
    Ok(sum * f.scale.powf(-(d as f64) / 2.0))
}

/// Rescaled inner product `(g, h)_R = R^{-d} sum g h` over a common index
/// set.
pub fn inner_product_r(g: &[f64], h: &[f64], scale: f64, dim: usize) -> Result<f64> {
    if g.len() != h.len() {
        return Err(Error::domain(format!(
            "mismatched index sets: {} vs {}",
            g.len(),
            h.len()
        )));
    }
    let s: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
    Ok(s * scale.powi(-(dim as i32)))
}

// ---------------------------------------------------------------------------
// Snapshot format: header { magic "SOSF", version u32, d u32, convention u8,
// lo[d] i64, hi[d] i64, payload u8 }, then little-endian f64 payload in the
// fixed layout.
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"SOSF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    PhiDirichlet = 0,
    PhiFree = 1,
    TauEdges = 2,
}

fn convention_tag(kind: &BoxKind) -> u8 {
    match kind {
        BoxKind::Cube => 0,
        BoxKind::TriadicCentered { .. } => 1,
        BoxKind::TriadicHalfOpen { .. } => 2,
        BoxKind::Plain | BoxKind::Simplex { .. } => 3,
    }
}

fn kind_from_tag(tag: u8, dim: usize, lo: Coord, hi: Coord) -> Result<BoxKind> {
    let side = hi[0] - lo[0] + 1;
    Ok(match tag {
        0 => BoxKind::Cube,
        1 => BoxKind::TriadicCentered {
            level: (((side - 1) / 2) as f64).log(3.0).round() as u32,
        },
        2 => BoxKind::TriadicHalfOpen {
            level: (side as f64).log(3.0).round() as u32,
        },
        3 => BoxKind::Plain,
        _ => return Err(Error::Snapshot(format!("unknown convention tag {tag}"))),
    })
    .and_then(|k| {
        let _ = dim;
        Ok(k)
    })
}

pub fn write_snapshot<W: Write>(
    w: &mut W,
    domain: &LatticeBox,
    payload: PayloadKind,
    values: &[f64],
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(domain.dim as u32).to_le_bytes())?;
    w.write_all(&[convention_tag(&domain.kind)])?;
    for i in 0..domain.dim {
        w.write_all(&domain.lo[i].to_le_bytes())?;
    }
    for i in 0..domain.dim {
        w.write_all(&domain.hi[i].to_le_bytes())?;
    }
    w.write_all(&[payload as u8])?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(r: &mut R) -> Result<(LatticeBox, PayloadKind, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Snapshot(format!("bad dimension {dim}")));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let mut lo = [0i64; MAX_DIM];
    let mut hi = [0i64; MAX_DIM];
    let mut i64buf = [0u8; 8];
    for slot in lo.iter_mut().take(dim) {
        r.read_exact(&mut i64buf)?;
        *slot = i64::from_le_bytes(i64buf);
    }
    for slot in hi.iter_mut().take(dim) {
        r.read_exact(&mut i64buf)?;
        *slot = i64::from_le_bytes(i64buf);
    }
    let kind = kind_from_tag(tag[0], dim, lo, hi)?;
    let domain = LatticeBox { dim, lo, hi, kind };
    let mut payload_tag = [0u8; 1];
    r.read_exact(&mut payload_tag)?;
    let payload = match payload_tag[0] {
        0 => PayloadKind::PhiDirichlet,
        1 => PayloadKind::PhiFree,
        2 => PayloadKind::TauEdges,
        t => return Err(Error::Snapshot(format!("unknown payload kind {t}"))),
    };
    let count = match payload {
        PayloadKind::TauEdges => EdgeIndexer::new(&domain).edge_count(),
        _ => domain.bounding_vertex_count(),
    };
    let mut values = Vec::with_capacity(count);
    let mut f64buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut f64buf)?;
        values.push(f64::from_le_bytes(f64buf));
    }
    Ok((domain, payload, values))
}

impl PhiField {
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> Result<()> {
        let payload = match self.bc {
            BoundaryCondition::DirichletZero => PayloadKind::PhiDirichlet,
            BoundaryCondition::Free => PayloadKind::PhiFree,
        };
        write_snapshot(w, &self.domain, payload, &self.values)
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Self> {
        let (domain, payload, values) = read_snapshot(r)?;
        let bc = match payload {
            PayloadKind::PhiDirichlet => BoundaryCondition::DirichletZero,
            PayloadKind::PhiFree => BoundaryCondition::Free,
            PayloadKind::TauEdges => {
                return Err(Error::Snapshot("expected a vertex field, got edges".into()))
            }
        };
        PhiField::from_values(domain, values, bc)
    }
}

impl TauField {
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> Result<()> {
        write_snapshot(w, &self.domain, PayloadKind::TauEdges, &self.tau)
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Self> {
        let (domain, payload, values) = read_snapshot(r)?;
        if payload != PayloadKind::TauEdges {
            return Err(Error::Snapshot("expected an edge field".into()));
        }
        TauField::from_values(domain, values)
    }
}
