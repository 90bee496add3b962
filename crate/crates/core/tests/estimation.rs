mod common;

use gridrecon_core::estimation::{
    build_measurement_model, estimate_state, estimate_states_series, EstimationError, Observability,
};
use gridrecon_core::grid::{build_susceptance, GridTopology, Line};
use gridrecon_core::{FlowMeasurementSet, KnowledgeMask, MeasurementSet, SusceptanceMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Random angles (bus 0 at zero) with the matching injections and flows on
/// `lines`.
fn snapshot(seed: u64, g: &GridTopology, m: usize, lines: &[Line]) -> (DMatrix<f64>, FlowMeasurementSet) {
    let mut rng = common::rng(seed);
    let n = g.n_buses();
    let b = build_susceptance(g);
    let phi = DMatrix::from_fn(m, n, |_, c| if c == 0 { 0.0 } else { rng.random_range(-0.4..0.4) });
    let p = &phi * b.matrix();
    let flows = DMatrix::from_fn(m, lines.len(), |t, i| {
        (phi[(t, lines[i].from)] - phi[(t, lines[i].to)]) / lines[i].x
    });
    (phi, FlowMeasurementSet::new(lines.to_vec(), flows, p).unwrap())
}

fn full_knowledge(g: &GridTopology) -> (SusceptanceMatrix, KnowledgeMask) {
    (build_susceptance(g), KnowledgeMask::all(g.n_buses()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn spanning_tree_round_trip(seed in any::<u64>(), n in 2usize..=40, extra in 0usize..=20) {
        let g = common::random_connected_grid(seed, n, extra);
        let tree = common::spanning_tree(&g);
        prop_assert_eq!(tree.len(), n - 1);
        let (phi, set) = snapshot(seed ^ 1, &g, 2, &tree);
        let (b, k) = full_knowledge(&g);
        let est = estimate_states_series(&set, &b, &k, 0, false).unwrap();
        prop_assert!((&est.phi - &phi).amax() < 1e-8);
    }

    #[test]
    fn reference_choice_shifts_angles(seed in any::<u64>(), n in 2usize..=30, r_raw in any::<usize>()) {
        let g = common::random_connected_grid(seed, n, 5);
        let tree = common::spanning_tree(&g);
        let (phi, set) = snapshot(seed ^ 2, &g, 1, &tree);
        let (b, k) = full_knowledge(&g);
        let r = r_raw % n;
        let est = estimate_states_series(&set, &b, &k, r, false).unwrap();
        let shifted = &phi - DMatrix::from_element(1, n, phi[(0, r)]);
        prop_assert!((&est.phi - shifted).amax() < 1e-8);
        prop_assert_eq!(est.phi[(0, r)], 0.0);
    }

    #[test]
    fn measurement_order_is_irrelevant(seed in any::<u64>(), n in 3usize..=30) {
        let g = common::random_connected_grid(seed, n, 8);
        let mut lines = g.lines().to_vec();
        let (_, set) = snapshot(seed ^ 3, &g, 1, &lines);
        let (b, k) = full_knowledge(&g);
        let a = estimate_states_series(&set, &b, &k, 0, true).unwrap();
        lines.reverse();
        let flows = DMatrix::from_fn(1, lines.len(), |_, i| set.flows()[(0, lines.len() - 1 - i)]);
        let rev = FlowMeasurementSet::new(lines, flows, set.injections().clone()).unwrap();
        let c = estimate_states_series(&rev, &b, &k, 0, true).unwrap();
        prop_assert!((&a.phi - &c.phi).amax() < 1e-10);
    }

    #[test]
    fn redundant_measurements_stay_exact(seed in any::<u64>(), n in 2usize..=30) {
        let g = common::random_connected_grid(seed, n, 10);
        let (phi, set) = snapshot(seed ^ 4, &g, 1, g.lines());
        let (b, k) = full_knowledge(&g);
        let flows: Vec<f64> = set.flows().row(0).iter().copied().collect();
        let inj: Vec<f64> = set.injections().row(0).iter().copied().collect();
        let model = build_measurement_model(&b, &k, g.lines(), &flows, Some(&inj)).unwrap();
        prop_assert_eq!(model.len(), g.lines().len() + n);
        let est = estimate_state(&model, 0).unwrap();
        prop_assert_eq!(est.observability, Observability::Observable);
        prop_assert!(est.residual < 1e-8);
        prop_assert!((est.phi.transpose() - phi.row(0)).amax() < 1e-8);
    }
}

#[test]
fn missing_tree_line_is_unobservable() {
    let g = common::random_connected_grid(11, 12, 0);
    let tree = common::spanning_tree(&g);
    let (_, set) = snapshot(5, &g, 1, &tree[1..]);
    let (b, k) = full_knowledge(&g);
    match estimate_states_series(&set, &b, &k, 0, false) {
        Err(EstimationError::Unobservable {
            snapshot: 0,
            nullity: 1,
        }) => {}
        other => panic!("expected unobservable, got {other:?}"),
    }
}

#[test]
fn injections_restore_observability() {
    // A tree missing one line, plus injections at every (fully known) bus.
    let g = common::random_connected_grid(12, 12, 0);
    let tree = common::spanning_tree(&g);
    let (phi, set) = snapshot(6, &g, 1, &tree[1..]);
    let (b, k) = full_knowledge(&g);
    let est = estimate_states_series(&set, &b, &k, 0, true).unwrap();
    assert!((&est.phi - &phi).amax() < 1e-8);
}

/// Mean absolute angle error over many snapshots with Gaussian flow noise.
fn noisy_error(g: &GridTopology, sigma: f64) -> f64 {
    let tree = common::spanning_tree(g);
    let (b, k) = full_knowledge(g);
    let mut total = 0.0;
    let trials = 200;
    for t in 0..trials {
        let (phi, set) = snapshot(1000 + t, g, 1, &tree);
        let mut rng = common::rng(t);
        let noisy = set.flows().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
        let set = FlowMeasurementSet::new(tree.clone(), noisy, set.injections().clone()).unwrap();
        let est = estimate_states_series(&set, &b, &k, 0, false).unwrap();
        total += (&est.phi - &phi).abs().mean();
    }
    total / trials as f64
}

#[test]
fn error_scales_with_noise() {
    let g = common::random_connected_grid(21, 20, 10);
    let coarse = noisy_error(&g, 1e-3);
    let fine = noisy_error(&g, 1e-4);
    let ratio = coarse / fine;
    assert!((5.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn unknown_prior_line_cannot_carry_a_flow() {
    let g = common::random_connected_grid(13, 6, 2);
    let b = build_susceptance(&g);
    let l = g.lines()[0];
    let k = KnowledgeMask::from_pairs(6, |r, c| (r, c) != (l.from.min(l.to), l.from.max(l.to)));
    let err = build_measurement_model(&b, &k, &[l], &[0.1], None).unwrap_err();
    assert!(matches!(err, EstimationError::UnknownReactance { .. }));
}

#[test]
fn estimated_angles_feed_reconstruction_inputs() {
    // Estimated angles shifted by a constant still satisfy B phi = P.
    let g = common::random_connected_grid(14, 10, 4);
    let tree = common::spanning_tree(&g);
    let (_, set) = snapshot(7, &g, 3, &tree);
    let (b, k) = full_knowledge(&g);
    let est = estimate_states_series(&set, &b, &k, 4, false).unwrap();
    let ms = MeasurementSet::new(est.phi, set.injections().clone()).unwrap();
    assert!(ms.max_residual(&b) < 1e-8);
}
