mod common;

use haggle_core::bargain::{Outcome, OutcomeKind, Role};
use haggle_core::reward::{fehr_schmidt_utility, preset, reward_for_outcome, Personality, RewardConfig};
use proptest::prelude::*;

#[test]
fn presets_match_their_formulas_on_the_grid() {
    let checks = common::utility_suite().unwrap();
    assert_eq!(checks, 4 * 121 + 10_000);
}

#[test]
fn envious_preset_is_flagged_not_rejected() {
    assert!(preset("envious").unwrap().outside_fs_constraint());
    assert!(!preset("fair").unwrap().outside_fs_constraint());
    assert!(preset("generous").is_err());
    assert_eq!(Personality::ALL.len(), 4);
}

fn outcome(kind: OutcomeKind, a: u32, b: u32) -> Outcome {
    Outcome { kind, division_a: None, division_b: None, points_a: a, points_b: b, needs_review: false }
}

proptest! {
    #[test]
    fn equal_points_cost_nothing(x in -50.0f64..50.0, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        prop_assert_eq!(fehr_schmidt_utility(x, x, &RewardConfig::new(a, b)), x);
    }

    #[test]
    fn utility_is_monotone_in_the_penalties(own in 0u32..=10, other in 0u32..=10, a in 0.0f64..2.0, b in 0.0f64..1.0) {
        let (x, y) = (own as f64, other as f64);
        let u = fehr_schmidt_utility(x, y, &RewardConfig::new(a, b));
        prop_assert!(u <= x);
        prop_assert!(u <= fehr_schmidt_utility(x, y, &RewardConfig::new(a / 2.0, b / 2.0)) + 1e-12);
    }

    #[test]
    fn non_agreements_are_worth_nothing(a in 0u32..=10, b in 0u32..=10, p in 0usize..4) {
        let cfg = Personality::ALL[p].config();
        for kind in [OutcomeKind::Walkaway, OutcomeKind::Cutoff, OutcomeKind::Mismatch] {
            prop_assert_eq!(reward_for_outcome(&outcome(kind, a, b), Role::A, &cfg), 0.0);
        }
        let agreed = outcome(OutcomeKind::Agreement, a, b);
        prop_assert_eq!(reward_for_outcome(&agreed, Role::B, &cfg), fehr_schmidt_utility(b as f64, a as f64, &cfg));
    }
}
