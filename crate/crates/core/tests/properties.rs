//! Property tests for the structural invariants: enumeration determinism,
//! hat-transform idempotence, normalization of the piecewise-exponential
//! conditionals, snapshot round trips, and the d = 3 surface.

use proptest::prelude::*;
use sos_lab::field::{hat_transform, BoundaryCondition, PhiField, TauField};
use sos_lab::lattice::{coord, LatticeBox};
use sos_lab::oracle::PiecewiseExpCdf;
use sos_lab::percolation::decompose_clusters;
use sos_lab::sampler::{collect_samples, SamplerConfig, SamplerKind};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edge_enumeration_is_a_deterministic_bijection(
        dim in 1usize..=3,
        half in 1i64..=3,
    ) {
        let b = LatticeBox::cube(dim, half).unwrap();
        let e1 = b.enumerate_edges().unwrap();
        let e2 = b.enumerate_edges().unwrap();
        prop_assert_eq!(&e1, &e2);
        let set: std::collections::HashSet<_> = e1.iter().map(|e| (e.base, e.axis)).collect();
        prop_assert_eq!(set.len(), e1.len());
        prop_assert_eq!(e1.len(), b.edge_count());
        for e in &e1 {
            prop_assert!(b.contains(e.base) && b.contains(e.head()));
        }
    }

    #[test]
    fn triadic_children_partition(level in 1u32..=3, cx in -5i64..=5, cy in -5i64..=5) {
        let parent = LatticeBox::triadic_half_open(2, level, coord(&[cx, cy])).unwrap();
        let children = parent.triadic_children().unwrap();
        let total: usize = children.iter().map(|c| c.vertex_count()).sum();
        prop_assert_eq!(total, parent.vertex_count());
        let mut seen = std::collections::HashSet::new();
        for c in &children {
            for v in c.vertices() {
                prop_assert!(parent.contains(v));
                prop_assert!(seen.insert(v));
            }
        }
    }

    #[test]
    fn hat_transform_idempotent_and_identity_off_clusters(
        seed in 0u64..1000,
        threshold in 1.0f64..4.0,
    ) {
        use rand::{Rng, SeedableRng};
        let domain = LatticeBox::cube(2, 5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut tau = TauField::zeros(domain.clone());
        for e in domain.enumerate_edges().unwrap() {
            tau.set(&e, rng.gen_range(-6.0..6.0));
        }
        let dec = decompose_clusters(&tau, threshold).unwrap();
        let values: Vec<f64> = (0..domain.bounding_vertex_count())
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        match hat_transform(&domain, &values, &dec.clusters) {
            Ok(once) => {
                let twice = hat_transform(&domain, &once, &dec.clusters).unwrap();
                prop_assert_eq!(&once, &twice);
                // identity off the clusters
                let in_cluster: std::collections::HashSet<_> = dec
                    .clusters
                    .iter()
                    .flat_map(|c| c.vertices.iter().copied())
                    .collect();
                for v in domain.vertices() {
                    if !in_cluster.contains(&v) {
                        prop_assert_eq!(once[domain.vertex_index(v)], values[domain.vertex_index(v)]);
                    }
                }
                // constant on each cluster
                for c in &dec.clusters {
                    let first = once[domain.vertex_index(c.vertices[0])];
                    for &v in &c.vertices {
                        prop_assert_eq!(once[domain.vertex_index(v)], first);
                    }
                }
            }
            // a cluster may swallow the whole box at low thresholds
            Err(sos_lab::Error::DegenerateCluster(_)) => {}
            Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
        }
    }

    #[test]
    fn piecewise_cdf_normalizes_for_random_neighbor_sets(
        values in proptest::collection::vec(-3.0f64..3.0, 2..=6),
    ) {
        let mut breaks = values;
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = breaks.len();
        let slopes: Vec<f64> = (0..=k).map(|j| 2.0 * (k as f64 - 2.0 * j as f64)).collect();
        let cdf = PiecewiseExpCdf::new(breaks, slopes).unwrap();
        prop_assert!((cdf.cdf(1e14) - 1.0).abs() < 1e-12);
        prop_assert!(cdf.cdf(-1e14).abs() < 1e-12);
    }

    #[test]
    fn snapshot_round_trip(seed in 0u64..500, half in 1i64..=4) {
        use rand::{Rng, SeedableRng};
        let domain = LatticeBox::cube(2, half).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut tau = TauField::zeros(domain.clone());
        for e in domain.enumerate_edges().unwrap() {
            tau.set(&e, rng.gen_range(-8.0..8.0));
        }
        let mut buf = Vec::new();
        tau.write_snapshot(&mut buf).unwrap();
        let back = TauField::read_snapshot(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(&back.tau, &tau.tau);
        let mut buf2 = Vec::new();
        back.write_snapshot(&mut buf2).unwrap();
        prop_assert_eq!(buf, buf2);

        let mut phi = PhiField::zeros(domain.clone(), BoundaryCondition::DirichletZero);
        for v in domain.vertices() {
            if domain.is_interior(v) {
                phi.set(v, rng.gen_range(-1.0..1.0));
            }
        }
        let mut buf3 = Vec::new();
        phi.write_snapshot(&mut buf3).unwrap();
        let pback = PhiField::read_snapshot(&mut buf3.as_slice()).unwrap();
        prop_assert_eq!(pback.values, phi.values);
    }
}

#[test]
fn three_dimensional_chain_and_energies_smoke() {
    let config = SamplerConfig {
        dim: 3,
        delta: 0.0,
        half_side: 4,
        seed: 31,
        burn_in: 30,
        thinning: 2,
        n_samples: 6,
        kind: SamplerKind::JointAlternating,
    };
    let samples = collect_samples(&config, 2).unwrap();
    assert_eq!(samples.len(), 6);
    let (_, tau) = &samples[0];
    let clusters = decompose_clusters(tau, 4.0).unwrap();
    let cube = sos_lab::coarsegrain::centered_half_open_cube(&tau.domain, 1).unwrap();
    let a = sos_lab::coarsegrain::effective_matrix(tau, &clusters, &cube).unwrap();
    assert!(a.is_positive_definite());
    let a_star = sos_lab::coarsegrain::effective_matrix_dual(tau, &cube).unwrap();
    assert!(a_star.is_positive_definite());
}

#[test]
fn delta_smoke_configuration() {
    // the alternating sampler is valid for positive delta as well
    let config = SamplerConfig {
        dim: 2,
        delta: 0.1,
        half_side: 6,
        seed: 77,
        burn_in: 50,
        thinning: 2,
        n_samples: 200,
        kind: SamplerKind::JointAlternating,
    };
    let vals = sos_lab::sampler::run_map(&config, 2, |_, phi, _| {
        let e = sos_lab::lattice::Edge {
            base: coord(&[0, 0]),
            axis: 0,
        };
        let g = phi.get(e.head()) - phi.get(e.base);
        g * g
    })
    .unwrap();
    let (mean, se) = sos_lab::stats::mean_and_se(&vals);
    assert!(mean > 0.0 && mean < 1.0, "mean {mean} +- {se}");
}
