//! Likelihood training of a policy on corpus dialogues.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bargain::{DialogueAct, Role, Scenario};
use crate::corpus::{extract_acts, CorpusRecord};
use crate::error::{Error, Result};
use crate::nn::clip_global_norm;
use crate::policy::{legal_kinds, ActKind, Arch, Policy, Target};

/// One side of a dialogue with the choices to imitate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub scenario: Scenario,
    pub me: Role,
    pub history: Vec<DialogueAct>,
    pub targets: Vec<Target>,
}

/// Builds examples from the `YOU` side of each record.
///
/// Fully extracted dialogues contribute `YOU`'s acts and, when agreed, the
/// output deal. Partly extracted ones contribute only the output deal,
/// conditioned on whichever acts could be extracted.
pub fn examples_from_records(records: &[CorpusRecord]) -> Vec<Example> {
    records
        .iter()
        .filter_map(|r| {
            let ex = extract_acts(r);
            let history = ex.acts();
            let me = Role::A;
            let mut targets = Vec::new();
            if ex.is_complete() {
                for (at, a) in history.iter().enumerate() {
                    let legal = ActKind::of(&a.act).is_some_and(|k| legal_kinds(&history[..at], me)[k as usize]);
                    if a.speaker == me && legal {
                        targets.push(Target::Act { at, act: a.act });
                    }
                }
            }
            if let Some((you, _)) = r.agreed_divisions() {
                targets.push(Target::Output { take: you });
            }
            (!targets.is_empty()).then(|| Example { scenario: r.scenario.clone(), me, history, targets })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub arch: Arch,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// The learning rate is divided by this when validation loss stops improving.
    pub anneal_factor: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            arch: Arch::STANDARD,
            epochs: 30,
            batch_size: 16,
            learning_rate: 1.0,
            clip_norm: 0.5,
            anneal_factor: 5.0,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean negative log-likelihood per target.
    pub train_loss: f64,
    pub validation_loss: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupervisedRun {
    /// Parameters from the epoch with the lowest validation loss.
    pub policy: Policy,
    pub curve: Vec<EpochStats>,
    pub train_examples: usize,
    pub validation_examples: usize,
}

/// Mean negative log-likelihood per target.
pub fn mean_loss(policy: &Policy, examples: &[Example]) -> Result<f64> {
    let per: Vec<(f64, usize)> = examples
        .par_iter()
        .map(|e| {
            let w = vec![1.0; e.targets.len()];
            policy.log_prob(&e.scenario, e.me, &e.history, &e.targets, &w).map(|lp| (-lp, e.targets.len()))
        })
        .collect::<Result<_>>()?;
    let (loss, n) = per.iter().fold((0.0, 0), |(l, n), (a, b)| (l + a, n + b));
    Ok(if n == 0 { 0.0 } else { loss / n as f64 })
}

/// Gradient of the summed log-likelihood over `batch`; summed in a fixed order
/// so results do not depend on thread scheduling.
fn batch_gradient(policy: &Policy, batch: &[&Example]) -> Result<(Vec<f64>, f64, usize)> {
    let parts: Vec<(Vec<f64>, f64)> = batch
        .par_iter()
        .map(|e| {
            let mut g = vec![0.0; policy.params().len()];
            let w = vec![1.0; e.targets.len()];
            let lp = policy.accumulate_log_prob(&e.scenario, e.me, &e.history, &e.targets, &w, &mut g)?;
            Ok((g, lp))
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; policy.params().len()];
    let mut lp = 0.0;
    for (g, l) in parts {
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        lp += l;
    }
    let n = batch.iter().map(|e| e.targets.len()).sum();
    Ok((grad, lp, n))
}

/// One clipped ascent step on the mean log-likelihood of `batch`.
pub fn supervised_step(policy: &mut Policy, batch: &[&Example], learning_rate: f64, clip_norm: f64) -> Result<f64> {
    let (mut grad, lp, n) = batch_gradient(policy, batch)?;
    if n == 0 {
        return Ok(0.0);
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    clip_global_norm(&mut grad, clip_norm);
    for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
        *p += learning_rate * g;
    }
    if policy.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Training("parameters diverged".into()));
    }
    Ok(-lp / n as f64)
}

/// Trains a fresh policy. Examples are shuffled with `cfg.seed` and a
/// held-out slice drives annealing and model selection.
pub fn supervised_train(examples: &[Example], cfg: &SupervisedConfig) -> Result<SupervisedRun> {
    supervised_train_with(examples, cfg, |_| {})
}

/// Like [`supervised_train`], calling `on_epoch` after every epoch.
pub fn supervised_train_with(
    examples: &[Example],
    cfg: &SupervisedConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<SupervisedRun> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<&Example> = examples.iter().collect();
    order.shuffle(&mut rng);
    let n_val = ((examples.len() as f64) * cfg.validation_fraction).round() as usize;
    let (val, train) = order.split_at(n_val);
    let val: Vec<Example> = val.iter().map(|e| (*e).clone()).collect();
    let mut train: Vec<&Example> = train.to_vec();
    if train.is_empty() {
        return Err(Error::Training("no training examples".into()));
    }

    let mut policy = Policy::new(cfg.arch, cfg.seed);
    let mut lr = cfg.learning_rate;
    let mut best: Option<(f64, Policy)> = None;
    let mut prev_val = f64::INFINITY;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut rng);
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for batch in train.chunks(cfg.batch_size) {
            let n: usize = batch.iter().map(|e| e.targets.len()).sum();
            loss_sum += supervised_step(&mut policy, batch, lr, cfg.clip_norm)? * n as f64;
            count += n;
        }
        let train_loss = loss_sum / count.max(1) as f64;
        let validation_loss = if val.is_empty() { train_loss } else { mean_loss(&policy, &val)? };
        let stats = EpochStats { epoch, train_loss, validation_loss, learning_rate: lr };
        on_epoch(&stats);
        curve.push(stats);
        if best.as_ref().is_none_or(|(b, _)| validation_loss < *b) {
            best = Some((validation_loss, policy.clone()));
        }
        if validation_loss >= prev_val {
            lr /= cfg.anneal_factor;
        }
        prev_val = validation_loss;
    }
    Ok(SupervisedRun {
        policy: best.expect("at least one epoch").1,
        curve,
        train_examples: train.len(),
        validation_examples: val.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_lines, parse_line, SynthConfig};

    fn records(n: usize) -> Vec<CorpusRecord> {
        generate_lines(&SynthConfig { dialogues: n, ..Default::default() })
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, l)| parse_line(l, i + 1).unwrap())
            .collect()
    }

    #[test]
    fn examples_only_use_own_legal_acts() {
        let ex = examples_from_records(&records(50));
        assert!(!ex.is_empty());
        for e in &ex {
            for t in &e.targets {
                if let Target::Act { at, act } = t {
                    assert_eq!(e.history[*at].speaker, Role::A);
                    assert_eq!(e.history[*at].act, *act);
                }
            }
        }
    }

    #[test]
    fn training_lowers_loss() {
        let ex = examples_from_records(&records(150));
        let cfg = SupervisedConfig {
            arch: Arch { goal: 8, hidden: 16, trunk: 16 },
            epochs: 4,
            validation_fraction: 0.2,
            ..Default::default()
        };
        let run = supervised_train(&ex, &cfg).unwrap();
        let first = run.curve.first().unwrap().train_loss;
        let last = run.curve.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        let again = supervised_train(&ex, &cfg).unwrap();
        assert_eq!(run.policy.params(), again.policy.params());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SupervisedConfig { batch_size: 0, ..Default::default() };
        assert!(matches!(supervised_train(&[], &cfg), Err(Error::Config(_))));
    }
}
