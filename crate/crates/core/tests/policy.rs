use haggle_core::bargain::*;
use haggle_core::policy::*;
use haggle_core::selfplay::{play, stream_rng, Agent, Script};
use haggle_core::supervised::{mean_loss, supervised_train, Example, SupervisedConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_history(s: &Scenario, seed: u64) -> Vec<DialogueAct> {
    let p = Policy::new(Arch { goal: 4, hidden: 4, trunk: 4 }, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g, _) = play(s, Role::A, Agent::sampling(&p, 1.0), Agent::Script(Script::Greedy), 12, &mut rng).unwrap();
    g.acts
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distributions_are_normalised_and_legal(seed in any::<u64>(), cut in 0usize..12) {
        let s = sample_scenario(seed, &PoolStats::default()).unwrap();
        let history = random_history(&s, seed);
        let prefix = &history[..cut.min(history.len())];
        let policy = Policy::new(Arch::STANDARD, seed);
        for me in [Role::A, Role::B] {
            let mut mem = policy.memory(&s, me).unwrap();
            policy.observe(&mut mem, &s, prefix);
            let d = policy.act_distribution(&mem, &s, prefix, 1.0).unwrap();
            prop_assert!((d.kind.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let legal = legal_kinds(prefix, me);
            for (k, &ok) in legal.iter().enumerate() {
                prop_assert!(ok || d.kind[k] == 0.0);
            }
            for (k, sh) in d.shares.iter().enumerate() {
                prop_assert_eq!(sh.len(), s.counts[k] as usize + 1);
                prop_assert!((sh.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let out = policy.output_distribution(&mem, &s, prefix, 1.0).unwrap();
            prop_assert!(out.iter().all(|o| (o.iter().sum::<f64>() - 1.0).abs() < 1e-9));
            let deal = policy.predict_output_deal(&s, me, prefix).unwrap();
            prop_assert!(deal.fits(&s.counts));
        }
    }

    #[test]
    fn encoding_is_sensitive_to_each_act(seed in any::<u64>()) {
        let s = sample_scenario(seed, &PoolStats::default()).unwrap();
        let policy = Policy::new(Arch::STANDARD, seed ^ 1);
        let base = [DialogueAct::new(Role::A, Act::propose(Division::NOTHING))];
        let other = [DialogueAct::new(Role::A, Act::propose(Division::new(s.counts)))];
        let x = policy.encode(&s, Role::B, &base).unwrap();
        prop_assert_eq!(&x, &policy.encode(&s, Role::B, &base).unwrap());
        prop_assert_ne!(x, policy.encode(&s, Role::B, &other).unwrap());
    }
}

/// Sampled acts follow the distribution they were drawn from.
#[test]
fn sampler_histogram_matches_probabilities() {
    let s = Scenario::new([1, 2, 1], [4, 2, 2], [2, 3, 2]);
    let policy = Policy::new(Arch::STANDARD, 8);
    let history = [DialogueAct::new(Role::B, Act::propose(Division::new([0, 1, 0])))];
    let mut mem = policy.memory(&s, Role::A).unwrap();
    policy.observe(&mut mem, &s, &history);
    let d = policy.act_distribution(&mem, &s, &history, 1.0).unwrap();
    let n = 20_000;
    let mut rng = stream_rng(3, 0);
    let mut accepts = 0;
    let mut all_books = 0;
    for _ in 0..n {
        match d.sample(&mut rng) {
            Act::Accept => accepts += 1,
            Act::Propose { take } if take[0] == 1 => all_books += 1,
            _ => {}
        }
    }
    let se = |p: f64| (p * (1.0 - p) / n as f64).sqrt();
    let pa = d.kind[1];
    assert!((accepts as f64 / n as f64 - pa).abs() < 4.0 * se(pa) + 1e-9);
    let pb = d.kind[0] * d.shares[0][1];
    assert!((all_books as f64 / n as f64 - pb).abs() < 4.0 * se(pb) + 1e-9);
}

/// A handful of dialogues can be memorised. Proposals are scored through
/// shared option features, so only the output deals must be exact.
#[test]
fn memorises_a_tiny_dataset() {
    let examples: Vec<Example> = (0..4u64)
        .map(|seed| {
            let s = sample_scenario(seed, &PoolStats::default()).unwrap();
            let mut rng = stream_rng(seed, 0);
            let (g, _) =
                play(&s, Role::A, Agent::Script(Script::EqualSplit), Agent::Script(Script::Accommodating), 20, &mut rng).unwrap();
            let mut ex = g.example_for(Role::A);
            ex.targets.push(Target::Output { take: g.outcome.division_a.unwrap() });
            ex.targets.dedup();
            ex
        })
        .collect();
    let cfg = SupervisedConfig {
        arch: Arch { goal: 16, hidden: 16, trunk: 32 },
        epochs: 2000,
        batch_size: 4,
        validation_fraction: 0.0,
        anneal_factor: 1.0,
        clip_norm: 5.0,
        ..Default::default()
    };
    let initial = mean_loss(&Policy::new(cfg.arch, cfg.seed), &examples).unwrap();
    let run = supervised_train(&examples, &cfg).unwrap();
    let loss = mean_loss(&run.policy, &examples).unwrap();
    assert!(loss < 0.1 * initial, "loss {initial} -> {loss}");
    for e in &examples {
        let Some(Target::Output { take }) = e.targets.last() else { unreachable!() };
        assert_eq!(run.policy.predict_output_deal(&e.scenario, e.me, &e.history).unwrap(), *take);
    }
}
