//! Exact samplers for the coupled height/log-conductance measure and the
//! Markov chains built from them.
//!
//! The lab's joint measure on a box `Q_L` (height field pinned to zero on
//! the boundary, one log-conductance per edge) has density proportional to
//!
//! ```text
//!   exp( - sum_{e in E(Q_L)} [ (delta + (grad phi(e))^2) e^{tau_e}
//!                              + e^{-tau_e} + tau_e / 2 ] )
//! ```
//!
//! Both conditionals are sampled exactly:
//!
//! - `phi | tau` is the centered Gaussian with precision `D_L(tau)` (the
//!   conductance Laplacian), drawn through a banded Cholesky factor;
//! - `tau_e | grad phi(e)` has density `exp(-z e^t - e^{-t} - t/2)` with
//!   `z = delta + (grad phi(e))^2`, drawn by the hyperbolic-sine
//!   substitution plus a symmetrization flip (see
//!   [`sample_tau_given_gradient`]);
//! - at `delta = 0` the height marginal is the solid-on-solid weight
//!   `exp(-2 sum_e |grad phi(e)|)`, and single sites admit an exact
//!   piecewise-exponential heat-bath draw.
//!
//! All randomness is counter-based: a draw is keyed by
//! `(seed, sweep, entity index, purpose)`, so sweeps may be executed in any
//! parallel order with bit-identical results.

use crate::elliptic::{BandCholesky, BoundaryMode, ConductanceOperator};
use crate::exec;
use crate::field::{BoundaryCondition, PhiField, TauField};
use crate::lattice::{Coord, Edge, LatticeBox};
use crate::rng::{RngStream, StreamKind};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

/// Per-edge weight of the height interaction: the joint measure couples each
/// edge of `E(Q_L)` once, which makes the height marginal
/// `exp(-2 sum_e |grad phi|)` and the single-site conditional
/// `exp(-2 sum_{y ~ x} |v - phi(y)|)`.
pub const NEIGHBOR_WEIGHT: f64 = 2.0;

/// Below this `z`, the tau conditional is drawn through the Gamma(1/2, 1)
/// substitution for the `z = 0` density.
pub const MIN_POSITIVE_Z: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Site-by-site checkerboard heat bath on phi (delta = 0 only); tau is
    /// drawn from its product conditional at emission time.
    PhiHeatbath,
    /// Alternates the exact Gaussian phi-draw and the exact per-edge
    /// tau-draw; valid for every delta >= 0.
    JointAlternating,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub dim: usize,
    pub delta: f64,
    /// Box half-side `L`.
    pub half_side: i64,
    pub seed: u64,
    /// Warm-up sweeps before the first emission.
    pub burn_in: usize,
    /// Sweeps between emissions.
    pub thinning: usize,
    pub n_samples: usize,
    pub kind: SamplerKind,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 3 {
            return Err(Error::config(format!("dim = {} out of range", self.dim)));
        }
        if self.delta < 0.0 {
            return Err(Error::config("delta must be nonnegative"));
        }
        if self.kind == SamplerKind::PhiHeatbath && self.delta != 0.0 {
            return Err(Error::config(
                "phi-heatbath requires delta = 0 (the solid-on-solid potential)",
            ));
        }
        if self.half_side < 1 {
            return Err(Error::config("half side must be at least 1"));
        }
        if self.thinning == 0 {
            return Err(Error::config("thinning must be at least 1"));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<LatticeBox> {
        LatticeBox::cube(self.dim, self.half_side)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c
    }
}

// ---------------------------------------------------------------------------
// Exact one-dimensional samplers
// ---------------------------------------------------------------------------

/// Exact inverse-CDF draw from a density `exp(g(v))` with `g` continuous
/// piecewise linear: sorted breakpoints and one slope per piece
/// (`slopes[0] > 0 > slopes[last]`). Zero-length pieces are tolerated.
pub fn sample_piecewise_exp_linear(breaks: &[f64], slopes: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let m = breaks.len();
    debug_assert_eq!(slopes.len(), m + 1);
    debug_assert!(slopes[0] > 0.0 && slopes[m] < 0.0);
    // log-density at each breakpoint, shifted so the maximum is 0
    let mut g = vec![0.0f64; m];
    for i in 1..m {
        g[i] = g[i - 1] + slopes[i] * (breaks[i] - breaks[i - 1]);
    }
    let gmax = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for v in g.iter_mut() {
        *v -= gmax;
    }
    // piece masses
    let mut masses = Vec::with_capacity(m + 1);
    masses.push(g[0].exp() / slopes[0]);
    for i in 0..m - 1 {
        masses.push(exp_linear_mass(g[i], slopes[i + 1], breaks[i + 1] - breaks[i]));
    }
    masses.push(g[m - 1].exp() / -slopes[m]);
    let total: f64 = masses.iter().sum();
    let u: f64 = rng.sample(rand::distributions::Open01);
    let mut target = u * total;
    if target <= masses[0] {
        // v = b_1 + (ln(target * s0) - g1) / s0
        return breaks[0] + ((target * slopes[0]).ln() - g[0]) / slopes[0];
    }
    target -= masses[0];
    for i in 0..m - 1 {
        if target <= masses[i + 1] && masses[i + 1] > 0.0 {
            return breaks[i] + invert_exp_linear(g[i], slopes[i + 1], target);
        }
        target -= masses[i + 1];
    }
    breaks[m - 1] + invert_exp_linear(g[m - 1], slopes[m], target.min(masses[m]))
}

/// integral_0^len exp(g0 + s x) dx, stable for small `s`.
fn exp_linear_mass(g0: f64, s: f64, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let sl = s * len;
    if sl.abs() < 1e-10 {
        g0.exp() * len * (1.0 + 0.5 * sl)
    } else {
        g0.exp() * sl.exp_m1() / s
    }
}

/// Solves integral_0^x exp(g0 + s t) dt = mass for x.
fn invert_exp_linear(g0: f64, s: f64, mass: f64) -> f64 {
    let scaled = mass * s * (-g0).exp();
    if scaled.abs() < 1e-10 {
        mass * (-g0).exp() * (1.0 - 0.5 * scaled)
    } else {
        scaled.ln_1p() / s
    }
}

/// Exact heat-bath draw for one interior site at `delta = 0`: the
/// conditional density is `exp(-w sum_{y ~ x} |v - phi(y)|)` with
/// `w = NEIGHBOR_WEIGHT`; its log-density is piecewise linear with
/// breakpoints at the sorted neighbor values.
pub fn heatbath_phi_site(phi: &PhiField, x: Coord, rng: &mut ChaCha8Rng) -> f64 {
    heatbath_weighted(phi, x, NEIGHBOR_WEIGHT, rng)
}

/// Heat-bath draw with an explicit per-neighbor weight (test fixtures use
/// weight 1).
pub fn heatbath_weighted(phi: &PhiField, x: Coord, weight: f64, rng: &mut ChaCha8Rng) -> f64 {
    let domain = &phi.domain;
    debug_assert!(domain.is_interior(x));
    let mut neighbors = Vec::with_capacity(2 * domain.dim);
    for axis in 0..domain.dim {
        for step in [-1i64, 1] {
            let mut y = x;
            y[axis] += step;
            neighbors.push(phi.get(y));
        }
    }
    neighbors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = neighbors.len();
    let slopes: Vec<f64> = (0..=k).map(|j| weight * (k as f64 - 2.0 * j as f64)).collect();
    sample_piecewise_exp_linear(&neighbors, &slopes, rng)
}

/// Exact draw from the edge conditional
/// `rho_z(t) ∝ exp(-z e^t - e^{-t} - t/2)` with `z = delta + g^2`.
///
/// For `z > 0`: draw `u ~ N(0, 1/2)`, map through the hyperbolic-sine
/// substitution `s = 2 asinh(u / (2 z^{1/4}))` — which samples the
/// s-symmetrized density — then restore the asymmetric `-t/2` tilt with a
/// flip: keep `s` with probability `1/(1+e^s)`, else negate it. Finally
/// `t = s - log(z)/2`. The flipped kernel reproduces `rho_z` exactly:
/// the symmetrized density is `(e^{s/2}+e^{-s/2}) e^{-sqrt z (e^s+e^{-s})}`
/// and `(e^{s/2}+e^{-s/2})/(1+e^s) = e^{-s/2}`.
///
/// For `z = 0` the density is `exp(-e^{-t} - t/2)`; substituting
/// `w = e^{-t}` gives `w ~ Gamma(1/2, 1)` and `t = -log w`.
pub fn sample_tau_given_gradient(g: f64, delta: f64, rng: &mut ChaCha8Rng) -> f64 {
    let z = delta + g * g;
    if z >= MIN_POSITIVE_Z {
        let u: f64 = rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2;
        let s_sym = 2.0 * (u / (2.0 * z.powf(0.25))).asinh();
        // stable logistic 1/(1+e^s)
        let keep = if s_sym >= 0.0 {
            let e = (-s_sym).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + s_sym.exp())
        };
        let flip: f64 = rng.gen();
        let s = if flip < keep { s_sym } else { -s_sym };
        s - 0.5 * z.ln()
    } else {
        let w: f64 = rng.sample(Gamma::new(0.5, 1.0).expect("valid gamma"));
        -w.ln()
    }
}

/// Exact Gaussian draw of the height field given the conductances: zero on
/// the boundary, covariance `(2 D_L(tau))^{-1}` on the interior — the joint
/// weight carries `exp(-(grad phi)^2 e^tau)` per edge with no 1/2, so the
/// conditional density is `exp(-(phi, D_L phi))`. The standard normal
/// vector is keyed per interior vertex so the draw is independent of
/// evaluation order.
pub fn resample_phi_given_tau(tau: &TauField, stream: RngStream) -> Result<PhiField> {
    let op = ConductanceOperator::assemble(tau, &tau.domain, BoundaryMode::DirichletZero)?;
    let chol = op.factorize()?;
    resample_phi_with_factor(&op, &chol, stream)
}

/// Same draw reusing an existing factorization of `D_L(tau)`.
pub fn resample_phi_with_factor(
    op: &ConductanceOperator,
    chol: &BandCholesky,
    stream: RngStream,
) -> Result<PhiField> {
    let domain = op.region.clone();
    let z: Vec<f64> = exec::par_map_range(op.unknown_count(), |u| {
        let mut rng = stream
            .with(u as u64)
            .with_kind(StreamKind::GaussianField)
            .stream();
        rng.sample::<f64, _>(StandardNormal)
    });
    let x = chol.sample(&z);
    let mut phi = PhiField::zeros(domain, BoundaryCondition::DirichletZero);
    for (u, &value) in x.iter().enumerate() {
        let bi = op.unknown_bounding_index(u);
        // L^{-T} z has covariance D^{-1}; the conditional wants (2D)^{-1}
        phi.values[bi] = value * std::f64::consts::FRAC_1_SQRT_2;
    }
    Ok(phi)
}

// ---------------------------------------------------------------------------
// Chains
// ---------------------------------------------------------------------------

/// One Markov chain over `(phi, tau)` pairs.
pub struct Chain {
    pub config: SamplerConfig,
    domain: LatticeBox,
    phi: PhiField,
    tau: TauField,
    edges: Vec<Edge>,
    color_sites: [Vec<Coord>; 2],
    sweep: u64,
    emitted: usize,
}

impl Chain {
    pub fn new(config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let domain = config.domain()?;
        let edges = domain.enumerate_edges()?;
        let mut color_sites: [Vec<Coord>; 2] = [Vec::new(), Vec::new()];
        for v in domain.vertices() {
            if domain.is_interior(v) {
                let parity = (v.iter().take(domain.dim).sum::<i64>().rem_euclid(2)) as usize;
                color_sites[parity].push(v);
            }
        }
        Ok(Chain {
            phi: PhiField::zeros(domain.clone(), BoundaryCondition::DirichletZero),
            tau: TauField::zeros(domain.clone()),
            domain,
            edges,
            color_sites,
            sweep: 0,
            emitted: 0,
            config,
        })
    }

    fn base_stream(&self) -> RngStream {
        RngStream::new(self.config.seed)
    }

    fn advance_sweep(&mut self) -> Result<()> {
        self.sweep += 1;
        match self.config.kind {
            SamplerKind::JointAlternating => self.sweep_joint(),
            SamplerKind::PhiHeatbath => self.sweep_heatbath(),
        }
    }

    fn sweep_joint(&mut self) -> Result<()> {
        let op =
            ConductanceOperator::assemble(&self.tau, &self.domain, BoundaryMode::DirichletZero)?;
        let chol = op.factorize()?;
        self.phi = resample_phi_with_factor(&op, &chol, self.base_stream().with(self.sweep))?;
        self.resample_all_tau(self.sweep);
        Ok(())
    }

    fn resample_all_tau(&mut self, sweep: u64) {
        let phi = &self.phi;
        let domain = &self.domain;
        let edges = &self.edges;
        let delta = self.config.delta;
        let stream = RngStream::new(self.config.seed).with(sweep);
        exec::par_for_each_mut(&mut self.tau.tau, |i, slot| {
            let e = &edges[i];
            let g = phi.values[domain.vertex_index(e.head())]
                - phi.values[domain.vertex_index(e.base)];
            let mut rng = stream
                .with(i as u64)
                .with_kind(StreamKind::TauConditional)
                .stream();
            *slot = sample_tau_given_gradient(g, delta, &mut rng);
        });
    }

    fn sweep_heatbath(&mut self) -> Result<()> {
        for color in 0..2 {
            let sites = &self.color_sites[color];
            let phi = &self.phi;
            let stream = self.base_stream().with(self.sweep).with(color as u64);
            let updates: Vec<f64> = exec::par_map(sites, |&x| {
                let mut rng = stream
                    .with(phi.domain.vertex_index(x) as u64)
                    .with_kind(StreamKind::PhiHeatbath)
                    .stream();
                heatbath_phi_site(phi, x, &mut rng)
            });
            for (x, v) in sites.iter().zip(updates) {
                self.phi.set(*x, v);
            }
        }
        Ok(())
    }

    /// Advances to the next emission point and returns the sample pair.
    pub fn next_sample(&mut self) -> Result<(PhiField, TauField)> {
        let sweeps = if self.emitted == 0 {
            self.config.burn_in.max(1)
        } else {
            self.config.thinning
        };
        for _ in 0..sweeps {
            self.advance_sweep()?;
        }
        self.emitted += 1;
        let tau = match self.config.kind {
            SamplerKind::JointAlternating => self.tau.clone(),
            SamplerKind::PhiHeatbath => {
                // tau is conditionally independent of everything given the
                // gradients; draw it fresh, keyed by the current sweep
                let mut tau = TauField::zeros(self.domain.clone());
                let phi = &self.phi;
                let domain = &self.domain;
                let edges = &self.edges;
                let delta = self.config.delta;
                let stream = RngStream::new(self.config.seed)
                    .with(self.sweep)
                    .with(0xEA11);
                exec::par_for_each_mut(&mut tau.tau, |i, slot| {
                    let e = &edges[i];
                    let g = phi.values[domain.vertex_index(e.head())]
                        - phi.values[domain.vertex_index(e.base)];
                    let mut rng = stream
                        .with(i as u64)
                        .with_kind(StreamKind::TauConditional)
                        .stream();
                    *slot = sample_tau_given_gradient(g, delta, &mut rng);
                });
                tau
            }
        };
        Ok((self.phi.clone(), tau))
    }

    pub fn sweeps_done(&self) -> u64 {
        self.sweep
    }
}

/// Derives the seed for chain `index` of a batch.
pub fn chain_seed(seed: u64, index: usize) -> u64 {
    // stable 64-bit mix; distinct chains get decorrelated streams
    let mut s = seed ^ 0xc3a5c85c97cb3127u64.wrapping_mul(index as u64 + 1);
    s ^= s >> 33;
    s = s.wrapping_mul(0xff51afd7ed558ccd);
    s ^= s >> 33;
    s
}

/// Runs `n_chains` independent chains (disjoint seeds) and maps every
/// emitted sample through `f`, in deterministic sample order. Memory stays
/// bounded by one sample per chain.
pub fn run_map<T, F>(config: &SamplerConfig, n_chains: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &PhiField, &TauField) -> T + Sync,
{
    config.validate()?;
    let n_chains = n_chains.max(1).min(config.n_samples.max(1));
    // split samples across chains: first `rem` chains get one extra
    let base = config.n_samples / n_chains;
    let rem = config.n_samples % n_chains;
    let counts: Vec<usize> = (0..n_chains)
        .map(|i| base + usize::from(i < rem))
        .collect();
    let offsets: Vec<usize> = counts
        .iter()
        .scan(0usize, |acc, &c| {
            let o = *acc;
            *acc += c;
            Some(o)
        })
        .collect();
    let results: Vec<Result<Vec<T>>> = exec::par_map_range(n_chains, |ci| {
        let mut chain = Chain::new(config.with_seed(chain_seed(config.seed, ci)))?;
        let mut out = Vec::with_capacity(counts[ci]);
        for k in 0..counts[ci] {
            let (phi, tau) = chain.next_sample()?;
            out.push(f(offsets[ci] + k, &phi, &tau));
        }
        Ok(out)
    });
    let mut flat = Vec::with_capacity(config.n_samples);
    for r in results {
        flat.extend(r?);
    }
    Ok(flat)
}

/// Collects full sample pairs (small runs only; prefer [`run_map`]).
pub fn collect_samples(
    config: &SamplerConfig,
    n_chains: usize,
) -> Result<Vec<(PhiField, TauField)>> {
    run_map(config, n_chains, |_, phi, tau| (phi.clone(), tau.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::coord;
    use crate::oracle::{adaptive_simpson, quadrature_magic_identity, PiecewiseExpCdf};
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn tau_density(z: f64) -> impl Fn(f64) -> f64 {
        move |t: f64| (-z * t.exp() - (-t).exp() - 0.5 * t).exp()
    }

    fn tau_cdf(z: f64, t: f64, norm: f64) -> f64 {
        let dens = tau_density(z);
        adaptive_simpson(&dens, -60.0, t, 1e-12, 50) / norm
    }

    fn tau_norm(z: f64) -> f64 {
        let dens = tau_density(z);
        adaptive_simpson(&dens, -60.0, 60.0, 1e-12, 50)
    }

    #[test]
    fn laplace_from_single_effective_neighbor() {
        // weight-1 fixture: one breakpoint at c, slopes +-1 -> Laplace(c, 1)
        let c = 0.7;
        let mut r = rng(1);
        let draws: Vec<f64> = (0..40_000)
            .map(|_| sample_piecewise_exp_linear(&[c], &[1.0, -1.0], &mut r))
            .collect();
        let mut sorted = draws.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sorted[sorted.len() / 2];
        assert!((median - c).abs() < 0.02, "median {median} vs {c}");
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (draws.len() - 1) as f64;
        // Laplace(b = 1): variance 2
        assert!((var - 2.0).abs() < 0.06, "var {var}");
    }

    #[test]
    fn two_equal_neighbors_weight_one_variance_half() {
        let c = -0.3;
        let mut r = rng(2);
        // two coincident breakpoints, slopes +2, 0, -2
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_piecewise_exp_linear(&[c, c], &[2.0, 0.0, -2.0], &mut r))
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / (draws.len() - 1) as f64;
        // density ~ exp(-2|v-c|): Laplace(scale 1/2), variance 1/2
        let se = 0.5 * (2.0f64 / draws.len() as f64).sqrt();
        assert!((var - 0.5).abs() < 3.0 * se * 2.0, "var {var}");
        assert!((mean - c).abs() < 0.01);
    }

    #[test]
    fn heatbath_matches_piecewise_cdf_oracle() {
        // neighbors {0, 1, 2, 3} at weight 1: KS against the closed-form CDF
        let domain = LatticeBox::cube(2, 2).unwrap();
        let mut phi = PhiField::zeros(domain.clone(), BoundaryCondition::Free);
        phi.set(coord(&[-1, 0]), 0.0);
        phi.set(coord(&[1, 0]), 1.0);
        phi.set(coord(&[0, -1]), 2.0);
        phi.set(coord(&[0, 1]), 3.0);
        let mut r = rng(3);
        let n = 100_000usize;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| heatbath_weighted(&phi, coord(&[0, 0]), 1.0, &mut r))
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let breaks = vec![0.0, 1.0, 2.0, 3.0];
        let slopes = vec![4.0, 2.0, 0.0, -2.0, -4.0];
        let cdf = PiecewiseExpCdf::new(breaks, slopes).unwrap();
        let mut ks: f64 = 0.0;
        for (i, &x) in draws.iter().enumerate() {
            let c = cdf.cdf(x);
            ks = ks.max((c - i as f64 / n as f64).abs());
            ks = ks.max((c - (i + 1) as f64 / n as f64).abs());
        }
        // critical value at level 0.01
        let crit = 1.6276 / (n as f64).sqrt();
        assert!(ks < crit, "KS {ks} vs {crit}");
    }

    #[test]
    fn heatbath_model_weight_is_two() {
        // with both neighbors at c the model conditional is exp(-4|v-c|)
        let domain = LatticeBox::cube(1, 1).unwrap();
        let phi = PhiField::zeros(domain.clone(), BoundaryCondition::DirichletZero);
        let mut r = rng(4);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| heatbath_phi_site(&phi, coord(&[0]), &mut r))
            .collect();
        let var = {
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (draws.len() - 1) as f64
        };
        // Laplace(scale 1/4): variance 1/8
        let se = 0.125 * (2.0f64 / draws.len() as f64).sqrt() * 2.0;
        assert!((var - 0.125).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn tau_sampler_ks_against_quadrature() {
        for (zi, z) in [0.1f64, 1.0, 10.0].into_iter().enumerate() {
            let norm = tau_norm(z);
            let mut r = rng(10 + zi as u64);
            let n = 30_000usize;
            let mut draws: Vec<f64> = (0..n)
                .map(|_| sample_tau_given_gradient(z.sqrt(), 0.0, &mut r))
                .collect();
            draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut ks: f64 = 0.0;
            // evaluating the quadrature CDF at every draw is slow; use a
            // stratified subsample of order statistics
            let step = (n / 400).max(1);
            for i in (0..n).step_by(step) {
                let c = tau_cdf(z, draws[i], norm);
                ks = ks.max((c - i as f64 / n as f64).abs());
                ks = ks.max((c - (i + 1) as f64 / n as f64).abs());
            }
            let crit = 1.6276 / (n as f64).sqrt();
            assert!(ks < crit, "z = {z}: KS {ks} vs {crit}");
        }
    }

    #[test]
    fn tau_sampler_median_matches_quadrature_median() {
        // the density is tilted by e^{-t/2}; its true median at z = 1 is
        // strictly negative (the symmetrized pushforward would give 0)
        let z = 1.0;
        let norm = tau_norm(z);
        // locate the true median by bisection
        let (mut lo, mut hi) = (-2.0, 2.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if tau_cdf(z, mid, norm) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let true_median = 0.5 * (lo + hi);
        assert!(true_median < -0.05, "median should be negative: {true_median}");
        let mut r = rng(20);
        let n = 100_000usize;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| sample_tau_given_gradient(1.0, 0.0, &mut r))
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sample_median = draws[n / 2];
        // order-statistic CI: 3 / (2 rho(median) sqrt(n))
        let rho = tau_density(z)(true_median) / norm;
        let ci = 3.0 / (2.0 * rho * (n as f64).sqrt());
        assert!(
            (sample_median - true_median).abs() < ci,
            "median {sample_median} vs {true_median} (ci {ci})"
        );
    }

    #[test]
    fn tau_sampler_inverse_conductance_mean_at_z4() {
        let z = 4.0f64;
        let norm = tau_norm(z);
        let dens = tau_density(z);
        let weighted = |t: f64| (-t).exp() * dens(t);
        let expect = adaptive_simpson(&weighted, -60.0, 60.0, 1e-12, 50) / norm;
        let mut r = rng(30);
        let n = 100_000usize;
        let vals: Vec<f64> = (0..n)
            .map(|_| (-sample_tau_given_gradient(2.0, 0.0, &mut r)).exp())
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64)
            .sqrt();
        let se = sd / (n as f64).sqrt();
        assert!(
            (mean - expect).abs() < 3.0 * se,
            "mean {mean} vs {expect} (se {se})"
        );
    }

    #[test]
    fn tau_normalization_identity_shapes_the_density() {
        // the quadrature oracle ties the density family to exp(-2 sqrt z)
        for z in [0.1, 1.0, 10.0] {
            let got = quadrature_magic_identity(z).unwrap();
            assert!((got - (-2.0 * z.sqrt()).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn wrong_substitution_candidate_fails_quadrature_check() {
        // candidate B ("u = z^{1/4} e^{s/2} - e^{-s/2}", the literal line in
        // the derivation) does not reproduce the symmetrized density; the
        // corrected symmetric candidate does. Compare pushforward CDFs of
        // the symmetrized density at z = 4.
        let z: f64 = 4.0;
        let sym_dens =
            |s: f64| (0.5 * s).exp().mul_add(1.0, (-0.5 * s).exp()) * (-z.sqrt() * (s.exp() + (-s).exp())).exp();
        let sym_norm = adaptive_simpson(&sym_dens, -40.0, 40.0, 1e-13, 50);
        let sym_cdf = |s: f64| adaptive_simpson(&sym_dens, -40.0, s, 1e-13, 50) / sym_norm;
        // gaussian cdf of N(0, 1/2) via erf-free quadrature
        let gauss = |u: f64| (-u * u).exp();
        let gauss_norm = std::f64::consts::PI.sqrt();
        let gauss_cdf =
            |u: f64| 0.5 + adaptive_simpson(&gauss, 0.0, u, 1e-13, 50) / gauss_norm;
        let mut worst_good: f64 = 0.0;
        let mut worst_bad: f64 = 0.0;
        for k in -8..=8 {
            let s = k as f64 * 0.25;
            // candidate A (symmetric): u = z^{1/4}(e^{s/2} - e^{-s/2})
            let ua = z.powf(0.25) * ((0.5 * s).exp() - (-0.5 * s).exp());
            worst_good = worst_good.max((sym_cdf(s) - gauss_cdf(ua)).abs());
            // candidate B (paper's literal inline formula)
            let ub = z.powf(0.25) * (0.5 * s).exp() - (-0.5 * s).exp();
            worst_bad = worst_bad.max((sym_cdf(s) - gauss_cdf(ub)).abs());
        }
        assert!(worst_good < 1e-9, "symmetric candidate max gap {worst_good}");
        assert!(worst_bad > 0.05, "literal candidate should fail: {worst_bad}");
    }

    #[test]
    fn z_zero_branch_is_gamma_half() {
        let mut r = rng(40);
        let n = 60_000usize;
        let vals: Vec<f64> = (0..n)
            .map(|_| (-sample_tau_given_gradient(0.0, 0.0, &mut r)).exp())
            .collect();
        // w ~ Gamma(1/2, 1): mean 1/2, var 1/2
        let mean = vals.iter().sum::<f64>() / n as f64;
        let se = (0.5f64 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn phi_given_tau_single_vertex_variance() {
        // d=2, L=1: one interior vertex with 4 unit edges; the conditional
        // density exp(-4 v^2) has variance 1/8
        let domain = LatticeBox::cube(2, 1).unwrap();
        let tau = TauField::zeros(domain.clone());
        let op = ConductanceOperator::assemble(&tau, &domain, BoundaryMode::DirichletZero).unwrap();
        let chol = op.factorize().unwrap();
        let n = 100_000usize;
        let center = domain.vertex_index(coord(&[0, 0]));
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let phi =
                    resample_phi_with_factor(&op, &chol, RngStream::new(7).with(i as u64)).unwrap();
                phi.values[center]
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let se = 0.125 * (2.0f64 / n as f64).sqrt();
        assert!((var - 0.125).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn phi_given_tau_covariance_matches_dense_inverse() {
        // d=1, L=2, tau = 0: covariance of the 3 interior values equals half
        // the inverse of the path Laplacian
        let domain = LatticeBox::cube(1, 2).unwrap();
        let tau = TauField::zeros(domain.clone());
        let op = ConductanceOperator::assemble(&tau, &domain, BoundaryMode::DirichletZero).unwrap();
        let chol = op.factorize().unwrap();
        let n = 200_000usize;
        let idx: Vec<usize> = [-1i64, 0, 1]
            .iter()
            .map(|&x| domain.vertex_index(coord(&[x])))
            .collect();
        let mut acc = [[0.0f64; 3]; 3];
        for i in 0..n {
            let phi =
                resample_phi_with_factor(&op, &chol, RngStream::new(11).with(i as u64)).unwrap();
            let v = [
                phi.values[idx[0]],
                phi.values[idx[1]],
                phi.values[idx[2]],
            ];
            for a in 0..3 {
                for b in 0..3 {
                    acc[a][b] += v[a] * v[b];
                }
            }
        }
        // half the dense inverse of the path Laplacian
        let dense = crate::oracle::dense_inverse(
            &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0],
            3,
        )
        .unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let got = acc[a][b] / n as f64;
                let expect = 0.5 * dense[a * 3 + b];
                let se = ((0.25 * dense[a * 3 + a] * dense[b * 3 + b] + expect * expect)
                    / n as f64)
                    .sqrt();
                assert!(
                    (got - expect).abs() < 4.0 * se,
                    "cov[{a}][{b}] = {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn phi_given_tau_covariance_random_5x5() {
        // general tau on the 5x5 box: empirical covariance of the interior
        // matches (2 D)^{-1} computed densely, entrywise within error bars
        let domain = LatticeBox::cube(2, 2).unwrap();
        let mut tau = TauField::zeros(domain.clone());
        let mut seed_rng = rng(91);
        for e in domain.enumerate_edges().unwrap() {
            use rand::Rng;
            tau.set(&e, seed_rng.gen_range(-1.5..1.5));
        }
        let interior: Vec<Coord> = domain.vertices().filter(|&v| domain.is_interior(v)).collect();
        let nn = interior.len();
        let pos = |v: Coord| interior.iter().position(|&w| w == v);
        let mut dmat = vec![0.0f64; nn * nn];
        for e in domain.enumerate_edges().unwrap() {
            let a = tau.conductance(&e);
            let ib = pos(e.base);
            let ih = pos(e.head());
            if let Some(i) = ib {
                dmat[i * nn + i] += a;
            }
            if let Some(i) = ih {
                dmat[i * nn + i] += a;
            }
            if let (Some(i), Some(j)) = (ib, ih) {
                dmat[i * nn + j] -= a;
                dmat[j * nn + i] -= a;
            }
        }
        let dinv = crate::oracle::dense_inverse(&dmat, nn).unwrap();
        let op = ConductanceOperator::assemble(&tau, &domain, BoundaryMode::DirichletZero).unwrap();
        let chol = op.factorize().unwrap();
        let n = 40_000usize;
        let mut acc = vec![0.0f64; nn * nn];
        for i in 0..n {
            let phi =
                resample_phi_with_factor(&op, &chol, RngStream::new(13).with(i as u64)).unwrap();
            for (a, &va) in interior.iter().enumerate() {
                for (b, &vb) in interior.iter().enumerate() {
                    acc[a * nn + b] += phi.get(va) * phi.get(vb);
                }
            }
        }
        for a in 0..nn {
            for b in 0..nn {
                let got = acc[a * nn + b] / n as f64;
                let expect = 0.5 * dinv[a * nn + b];
                let se = ((0.25 * dinv[a * nn + a] * dinv[b * nn + b] + expect * expect)
                    / n as f64)
                    .sqrt();
                assert!(
                    (got - expect).abs() < 4.5 * se,
                    "cov[{a}][{b}] = {got} vs {expect} (se {se})"
                );
            }
        }
    }

    #[test]
    fn chains_are_reproducible() {
        let config = SamplerConfig {
            dim: 2,
            delta: 0.0,
            half_side: 3,
            seed: 99,
            burn_in: 5,
            thinning: 2,
            n_samples: 4,
            kind: SamplerKind::JointAlternating,
        };
        let a = collect_samples(&config, 2).unwrap();
        let b = collect_samples(&config, 2).unwrap();
        assert_eq!(a.len(), 4);
        for ((pa, ta), (pb, tb)) in a.iter().zip(&b) {
            assert_eq!(pa.values, pb.values);
            assert_eq!(ta.tau, tb.tau);
        }
    }

    #[test]
    fn heatbath_config_rejects_positive_delta() {
        let config = SamplerConfig {
            dim: 2,
            delta: 0.1,
            half_side: 2,
            seed: 1,
            burn_in: 1,
            thinning: 1,
            n_samples: 1,
            kind: SamplerKind::PhiHeatbath,
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn cross_sampler_gradient_second_moment_agrees() {
        // small version of the acceptance check at L = 4
        let n = 3_000usize;
        let central = |_domain: &LatticeBox| Edge {
            base: [0, 0, 0],
            axis: 0,
        };
        let mut estimates = Vec::new();
        for kind in [SamplerKind::PhiHeatbath, SamplerKind::JointAlternating] {
            let config = SamplerConfig {
                dim: 2,
                delta: 0.0,
                half_side: 4,
                seed: 1234,
                burn_in: 200,
                thinning: 3,
                n_samples: n,
                kind,
            };
            let vals = run_map(&config, 4, |_, phi, _| {
                let e = central(&phi.domain);
                let g = phi.get(e.head()) - phi.get(e.base);
                g * g
            })
            .unwrap();
            let (mean, se) = crate::stats::mean_and_se(&vals);
            estimates.push((mean, se));
        }
        let (m0, s0) = estimates[0];
        let (m1, s1) = estimates[1];
        let sigma = (s0 * s0 + s1 * s1).sqrt();
        assert!(
            (m0 - m1).abs() < 4.0 * sigma,
            "heatbath {m0}+-{s0} vs joint {m1}+-{s1}"
        );
    }

    #[test]
    fn both_chains_match_brute_force_quadrature_fixture() {
        // d = 1, L = 2, coupling-2 weight exp(-2 sum |grad phi|): grid
        // quadrature over the three interior values gives
        // <(phi(0)-phi(-1))^2> = 0.260799
        let expect = 0.260799;
        for kind in [SamplerKind::PhiHeatbath, SamplerKind::JointAlternating] {
            let config = SamplerConfig {
                dim: 1,
                delta: 0.0,
                half_side: 2,
                seed: 777,
                burn_in: 500,
                thinning: 4,
                n_samples: 40_000,
                kind,
            };
            let vals = run_map(&config, 4, |_, phi, _| {
                let e = Edge {
                    base: [-1, 0, 0],
                    axis: 0,
                };
                let g = phi.get(e.head()) - phi.get(e.base);
                g * g
            })
            .unwrap();
            let (mean, se) = crate::stats::mean_and_se(&vals);
            assert!(
                (mean - expect).abs() < 4.0 * se.max(0.002),
                "{kind:?}: {mean} +- {se} vs {expect}"
            );
        }
    }

    #[test]
    fn stationarity_no_drift_between_halves() {
        let config = SamplerConfig {
            dim: 2,
            delta: 0.0,
            half_side: 3,
            seed: 5,
            burn_in: 100,
            thinning: 2,
            n_samples: 2_000,
            kind: SamplerKind::JointAlternating,
        };
        let vals = run_map(&config, 1, |_, phi, _| {
            let e = Edge {
                base: [0, 0, 0],
                axis: 0,
            };
            let g = phi.get(e.head()) - phi.get(e.base);
            g * g
        })
        .unwrap();
        let (m1, s1) = crate::stats::mean_and_se(&vals[..vals.len() / 2]);
        let (m2, s2) = crate::stats::mean_and_se(&vals[vals.len() / 2..]);
        let sigma = (s1 * s1 + s2 * s2).sqrt();
        assert!((m1 - m2).abs() < 4.0 * sigma, "{m1} vs {m2}");
    }
}
