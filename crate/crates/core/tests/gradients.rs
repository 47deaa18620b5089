mod common;

use common::*;

#[test]
fn supervised_and_reinforce_gradients_match_finite_differences() {
    let (sup, rl) = gradient_errors();
    assert!(sup <= 1e-4, "supervised relative error {sup:e}");
    assert!(rl <= 1e-3, "REINFORCE relative error {rl:e}");
}

#[test]
fn expected_update_equals_exact_gradient() {
    let (single, double) = oracle_errors();
    assert!(single <= 1e-3, "{single:e}");
    assert!(double <= 1e-3, "{double:e}");
}

/// With discounting and two learner decisions the estimator down-weights
/// the opening, so it no longer tracks the gradient of the discounted return.
#[test]
fn discounting_two_decisions_departs_from_the_oracle() {
    let theta = [0.3, -0.2, 0.1, 0.5, -0.4, 0.0, 0.2, -0.1, 0.3];
    let env = ToyEnv { stop: [0.3, 0.6, 0.1], reward_one: [4.0, 7.0, 2.0], reward_two: [[5.0, 1.0], [0.0, 9.0], [6.0, 3.0]] };
    assert!(oracle_error(&env, &theta, 2.5, 0.5) > 1e-2);
}

#[test]
fn baseline_does_not_bias_the_update() {
    let theta = [0.1, 0.4, -0.3, 0.2, 0.2, -0.5, 0.1, 0.0, 0.7];
    let env = ToyEnv { stop: [0.5, 0.2, 0.9], reward_one: [1.0, 3.0, 8.0], reward_two: [[2.0, 6.0], [4.0, 4.0], [0.0, 10.0]] };
    let pol = ToyPolicy { theta: theta.to_vec() };
    let a = env.expected_update(&pol, 0.0, 1.0);
    let b = env.expected_update(&pol, 7.0, 1.0);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}
