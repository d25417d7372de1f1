//! The closed-form moment update against both Monte Carlo oracles on K = 4 beliefs.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rs_engine::belief::BeliefState;
use rs_engine::oracle::{
    decomposition_moments, dkl_objective, estimate_decomposition_moments, oracle_posterior_mean,
    oracle_tilde_sigma_mean, random_observation, random_state,
};
use rs_engine::sampling::stream;
use rs_engine::update::{update_moment, update_moment_kl, SingleObservation};
use rs_engine::verify::{perturb, ZTally};

const LIMIT: f64 = 4.5;

#[test]
fn moment_update_against_oracles_k4() {
    let mut tally = ZTally::new(LIMIT);
    for i in 0..3u64 {
        let mut rng = stream(&[31, i]);
        let state = random_state(4, &mut rng).unwrap();
        let obs = random_observation(&state, 1.5, &mut rng);
        let next = update_moment(&state, &obs).unwrap();
        let is = oracle_posterior_mean(&state, &obs, 200_000, &mut rng).unwrap();
        tally.compare_vec(&is.mean, next.theta(), &is.se_mean);
        let dec = oracle_tilde_sigma_mean(&state, &obs, 100_000, &mut rng).unwrap();
        tally.compare_vec(&dec.mean, next.theta(), &dec.se_mean);
        tally.compare_sym(&dec.scale, &next.posterior_sigma_mean().matrix, &dec.se_scale);
    }
    let outcome = tally.outcome("k4", String::new());
    assert!(outcome.passed, "{outcome}");
}

#[test]
fn block_moments_against_sampler_k4() {
    let mut tally = ZTally::new(LIMIT);
    let mut rng = stream(&[32]);
    let state = random_state(4, &mut rng).unwrap();
    let obs = random_observation(&state, 2.0, &mut rng);
    let exact = decomposition_moments(&state, &obs).unwrap();
    let est = estimate_decomposition_moments(&state, &obs, 100_000, &mut rng).unwrap();
    tally.compare_sym(&est.a_mat.0, &exact.a_mat, &est.a_mat.1);
    tally.compare(est.c.0, exact.c, est.c.1);
    tally.compare_vec(&est.a_tilde.0, &exact.a_tilde, &est.a_tilde.1);
    tally.compare_sym(&est.caa.0, &exact.caa, &est.caa.1);
    let outcome = tally.outcome("blocks", String::new());
    assert!(outcome.passed, "{outcome}");
}

#[test]
fn diagonal_scale_moves_only_the_measured_mean() {
    // With a diagonal scale only the measured mean moves.
    let state = BeliefState::new(DVector::from_vec(vec![0.0, 1.0, -1.0]), DMatrix::identity(3, 3) * 6.0, 2.0, 8.0)
        .unwrap();
    let obs = SingleObservation::new(0, 0.8);
    let next = update_moment(&state, &obs).unwrap();
    assert_eq!(next.theta()[1], 1.0);
    assert_eq!(next.theta()[2], -1.0);
    let is = oracle_posterior_mean(&state, &obs, 100_000, &mut stream(&[33])).unwrap();
    assert!(((is.mean[0] - next.theta()[0]) / is.se_mean[0]).abs() < LIMIT);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// No nearby PD matrix beats the moment-KL scale on the divergence objective.
    #[test]
    fn moment_kl_scale_is_a_local_minimizer(seed in any::<u64>(), k in 2usize..6) {
        let mut rng = stream(&[34, seed]);
        let state = random_state(k, &mut rng).unwrap();
        let obs = random_observation(&state, 3.0, &mut rng);
        let best = update_moment_kl(&state, &obs).unwrap();
        let at_best = dkl_objective(best.scale(), &state, &obs).unwrap();
        for _ in 0..10 {
            let candidate = perturb(best.scale(), 1e-2, &mut rng);
            let value = dkl_objective(&candidate, &state, &obs).unwrap();
            prop_assert!(value >= at_best - 1e-12 * at_best.abs().max(1.0));
        }
    }
}
