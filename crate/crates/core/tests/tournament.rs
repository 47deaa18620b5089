use haggle_core::bargain::*;
use haggle_core::policy::{Arch, Policy};
use haggle_core::report::{emit_tournament, load_tournament, Stamp, TournamentReport};
use haggle_core::selfplay::{Decoding, Game, Script};
use haggle_core::tournament::*;
use proptest::prelude::*;

/// 10/103 vs 24/98 worked by hand: N = 201, ad - bc = 10*74 - 93*24 = -1492,
/// chi2 = 201 (1492 - 100.5)^2 / (103 * 98 * 34 * 167) = 6.7906, p = 0.00916.
#[test]
fn chi_square_matches_hand_computation() {
    let t = compare_proportions(10, 103, 24, 98, 1000, 4).unwrap();
    assert_eq!(t.method, ProportionMethod::ChiSquareYates);
    let chi2 = t.statistic.unwrap();
    assert!((chi2 - 6.7906).abs() < 1e-4, "{chi2}");
    assert!((t.p_value - 0.00916).abs() < 5e-5, "{}", t.p_value);
    assert!(t.ci_high < 0.0);
    let same = compare_proportions(10, 100, 10, 100, 1000, 4).unwrap();
    assert!(same.p_value > 0.99 && same.ci_low <= 0.0 && same.ci_high >= 0.0);
}

#[test]
fn fisher_fallback_on_empty_margin() {
    let t = compare_proportions(0, 30, 0, 30, 200, 1).unwrap();
    assert_eq!(t.method, ProportionMethod::FisherExact);
    assert!((t.p_value - 1.0).abs() < 1e-9);
    assert!(matches!(compare_proportions(3, 19, 3, 40, 10, 1), Err(haggle_core::Error::Precondition(_))));
}

fn episode(a: u32, b: u32, agreed: bool) -> PairEpisode {
    let kind = if agreed { OutcomeKind::Agreement } else { OutcomeKind::Cutoff };
    PairEpisode {
        scenario_index: 0,
        swapped: false,
        a_seat: Role::A,
        game: Game {
            scenario: Scenario::new([1, 1, 1], [5, 3, 2], [2, 3, 5]),
            first: Role::A,
            acts: vec![],
            output_a: None,
            output_b: None,
            outcome: Outcome {
                kind,
                division_a: None,
                division_b: None,
                points_a: if agreed { a } else { 0 },
                points_b: if agreed { b } else { 0 },
                needs_review: false,
            },
        },
    }
}

proptest! {
    #[test]
    fn metric_identities(eps in proptest::collection::vec((0u32..=10, 0u32..=10, any::<bool>()), 1..60)) {
        let episodes: Vec<PairEpisode> = eps.iter().map(|&(a, b, ok)| episode(a, b, ok)).collect();
        let summary = summarize(&episodes).unwrap();
        let r = PairResult { agent_a: "x".into(), agent_b: "y".into(), episodes, summary };
        let incl = metrics(std::slice::from_ref(&r), true).unwrap();
        let excl = metrics(std::slice::from_ref(&r), false).unwrap();
        for (i, e) in incl.rows.iter().zip(&excl.rows) {
            prop_assert!((0.0..=100.0).contains(&i.walkaway_pct));
            let kept = (i.episodes as f64 * (1.0 - i.walkaway_pct / 100.0)).round() as usize;
            prop_assert_eq!(e.agent_points.n, kept);
            if let (Some(mi), Some(me)) = (i.agent_points.mean, e.agent_points.mean) {
                prop_assert!(me >= mi - 1e-12);
                prop_assert!(e.partner_points.mean.unwrap() >= i.partner_points.mean.unwrap() - 1e-12);
            }
            let sum = i.agent_points.mean.unwrap() + i.partner_points.mean.unwrap();
            prop_assert!((i.joint_points.mean.unwrap() - sum).abs() < 1e-9);
        }
    }
}

#[test]
fn grid_is_reproducible_and_reloads_exactly() {
    let p = Policy::new(Arch { goal: 4, hidden: 8, trunk: 8 }, 1);
    let q = Policy::new(Arch { goal: 4, hidden: 8, trunk: 8 }, 2);
    let entrants =
        [Entrant::policy("p", &p), Entrant::policy("q", &q), Entrant::script("greedy", Script::Greedy)];
    let cfg = TournamentConfig { scenarios: 15, seed: 3, ..Default::default() };
    let agents: Vec<String> = entrants.iter().map(|e| e.id.clone()).collect();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let r1 = run_grid(&entrants, &cfg).unwrap();
    let r2 = run_grid(&entrants, &cfg).unwrap();
    emit_tournament(d1.path(), &r1, &agents, &Stamp::new(cfg.hash(), 3)).unwrap();
    let report = emit_tournament(d2.path(), &r2, &agents, &Stamp::new(cfg.hash(), 3)).unwrap();
    for f in std::fs::read_dir(d1.path()).unwrap() {
        let name = f.unwrap().file_name();
        assert_eq!(std::fs::read(d1.path().join(&name)).unwrap(), std::fs::read(d2.path().join(&name)).unwrap());
    }
    let (pairs, back) = load_tournament(d1.path()).unwrap();
    assert_eq!(TournamentReport::build(&pairs, &agents).unwrap(), back);
    assert_eq!(back, report);
    assert_eq!(pairs.len(), 6);
    assert!(pairs.iter().all(|r| r.episodes.len() == 30));
    let diag = &report.heatmaps.iter().find(|h| h.metric == HeatmapMetric::WalkawayPct).unwrap().cells[2][2];
    assert_eq!(*diag, 100.0);
    for r in &pairs {
        for e in &r.episodes {
            assert_eq!(e.game.replay(cfg.cutoff).unwrap(), e.game.outcome);
        }
    }
}

#[test]
fn greedy_decoding_is_deterministic_without_seeds() {
    let p = Policy::new(Arch { goal: 4, hidden: 8, trunk: 8 }, 1);
    let e = [Entrant::policy("p", &p)];
    let a = TournamentConfig { scenarios: 5, decoding: Decoding::Greedy, seed: 1, ..Default::default() };
    let b = TournamentConfig { seed: 2, ..a.clone() };
    let sa = tournament_scenarios(&a).unwrap();
    let ra = run_pair(&e[0], &e[0], &sa, &a).unwrap();
    let rb = run_pair(&e[0], &e[0], &sa, &b).unwrap();
    assert_eq!(ra.episodes, rb.episodes);
}
