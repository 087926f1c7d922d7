mod common;

use mivsps::eoa::{build_dual, dual_optima, outer_approximation, radius_from_optima, solve_dual};
use mivsps::io::{read_ellipsoid, write_ellipsoid};
use mivsps::mc::Scenario;
use mivsps::{seed, SpsConfig, SpsRegion};
use rand::Rng;

#[test]
fn dual_bounds_a_dense_primal_search() {
    let trial = Scenario::gaussian(2, 2, 80).draw_trial(4242, 0).unwrap();
    let region = SpsRegion::init(&trial.data, SpsConfig::new(12, 1, 5).unwrap()).unwrap();
    let mut rng = seed::rng(1);
    for i in 1..12 {
        let dual = build_dual(&region, i).unwrap();
        let gamma = solve_dual(&dual).gamma;
        let primal = common::primal_search(&dual, 100_000, 5_000, &mut rng);
        assert!(gamma >= primal - 1e-7, "i = {i}: gamma {gamma} < primal {primal}");
    }
}

#[test]
fn constraint_matches_sum_differences_on_data() {
    let trial = Scenario::gaussian(3, 2, 60).draw_trial(9, 0).unwrap();
    let region = SpsRegion::init(&trial.data, SpsConfig::new(8, 1, 3).unwrap()).unwrap();
    let map = region.shape_map();
    let mut rng = seed::rng(2);
    for i in 1..8 {
        let dual = build_dual(&region, i).unwrap();
        for _ in 0..20 {
            let theta = region.center() + common::gaussian_matrix(5, 3, &mut rng) * rng.random_range(0.01..2.0);
            let z = &map * (&theta - region.center());
            let norms = region.evaluate(&theta).unwrap().norms;
            let lhs = dual.constraint(&z);
            let rhs = norms[0] - norms[i];
            assert!((lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn serialized_ellipsoid_reproduces_membership() {
    let dir = tempfile::tempdir().unwrap();
    let trial = Scenario::gaussian(2, 2, 200).draw_trial(3, 0).unwrap();
    let region = SpsRegion::init(&trial.data, SpsConfig::default()).unwrap();
    let ell = outer_approximation(&region).unwrap();
    let path = dir.path().join("ell.csv");
    write_ellipsoid(&path, &ell).unwrap();
    let back = read_ellipsoid(&path).unwrap();
    let mut rng = seed::rng(3);
    for _ in 0..1000 {
        let theta = &ell.center + common::gaussian_matrix(4, 2, &mut rng) * rng.random_range(0.0..0.3);
        assert_eq!(back.distance_sq(&theta).to_bits(), ell.distance_sq(&theta).to_bits());
        assert_eq!(back.contains(&theta), ell.contains(&theta));
    }
    assert!(back.contains(&back.center));
}

#[test]
fn radius_is_nonincreasing_in_q() {
    let trial = Scenario::gaussian(2, 2, 150).draw_trial(11, 0).unwrap();
    let region = SpsRegion::init(&trial.data, SpsConfig::default()).unwrap();
    let optima = dual_optima(&region).unwrap();
    let radii: Vec<f64> = (1..=20).map(|q| radius_from_optima(&optima, q)).collect();
    assert!(radii.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(radii[9], outer_approximation(&region).unwrap().radius_sq);
}
