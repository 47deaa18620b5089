//! Checks shared by the focused test files and the acceptance report.
#![allow(dead_code, clippy::needless_range_loop)]

use haggle_core::bargain::{all_divisions, sample_scenario, Act, DialogueAct, PoolStats, Role, Scenario};
use haggle_core::corpus::{parse_utterance, realize_act};
use haggle_core::policy::{Arch, Policy};
use haggle_core::reward::{fehr_schmidt_utility, preset, RewardConfig};
use haggle_core::selfplay::{reinforce_gradient, rollout, stream_rng, ScoreFunction};
use haggle_core::supervised::Example;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Each preset written out by hand as its own piecewise formula.
pub fn preset_formula(name: &str, own: f64, other: f64) -> f64 {
    let ahead = (own - other).max(0.0);
    let behind = (other - own).max(0.0);
    match name {
        "selfish" => own,
        "disadvantage_averse" => own - behind,
        "envious" => own + ahead,
        "fair" => own - 0.75 * (own - other).abs(),
        _ => unreachable!(),
    }
}

/// Utility on the integer grid for every preset, plus `U(x, x) = x` for
/// random coefficients. Returns the number of checks.
pub fn utility_suite() -> Result<usize, String> {
    let mut checks = 0;
    for name in ["selfish", "disadvantage_averse", "envious", "fair"] {
        let cfg = preset(name).map_err(|e| e.to_string())?;
        for own in 0..=10 {
            for other in 0..=10 {
                let (x, y) = (own as f64, other as f64);
                let got = fehr_schmidt_utility(x, y, &cfg);
                let want = preset_formula(name, x, y);
                if got != want {
                    return Err(format!("{name} at ({own}, {other}): {got} != {want}"));
                }
                checks += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let cfg = RewardConfig::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let x: f64 = rng.gen_range(-20.0..20.0);
        let u = fehr_schmidt_utility(x, x, &cfg);
        if u != x {
            return Err(format!("U({x}, {x}) = {u} with a={}, b={}", cfg.a, cfg.b));
        }
        checks += 1;
    }
    Ok(checks)
}

/// Largest relative error between `analytic` and central differences of `f`
/// (fourth-order stencil, so a moderate `h` keeps both truncation and
/// rounding error far below the tolerances).
pub fn max_rel_error(params: &[f64], analytic: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let x = p[i];
        let mut at = |d: f64| {
            p[i] = x + d;
            f(&p)
        };
        let fd = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
        p[i] = x;
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

fn toy_episodes(policy: &Policy, n: usize) -> Vec<(Example, f64)> {
    let partner = Policy::new(Arch::TOY, 99);
    let selfish = preset("selfish").unwrap();
    (0..n)
        .map(|i| {
            let mut rng = stream_rng(5, i as u64);
            let s = sample_scenario(i as u64, &PoolStats::default()).unwrap();
            let role = if i % 2 == 0 { Role::A } else { Role::B };
            let ep = rollout(policy, &partner, &s, role, Role::A, &selfish, 20, &mut rng).unwrap();
            (ep.example(), ep.reward)
        })
        .collect()
}

/// Finite-difference checks on the toy network: (supervised, REINFORCE).
pub fn gradient_errors() -> (f64, f64) {
    let policy = Policy::new(Arch::TOY, 11);
    assert!(policy.params().len() <= 200);
    let episodes = toy_episodes(&policy, 6);

    let joint_loss = |p: &[f64]| {
        let pol = Policy::from_params(Arch::TOY, p.to_vec()).unwrap();
        episodes
            .iter()
            .map(|(e, _)| -pol.log_prob(&e.scenario, e.me, &e.history, &e.targets, &vec![1.0; e.targets.len()]).unwrap())
            .sum::<f64>()
    };
    let mut grad = vec![0.0; policy.params().len()];
    for (e, _) in &episodes {
        policy.accumulate_log_prob(&e.scenario, e.me, &e.history, &e.targets, &vec![1.0; e.targets.len()], &mut grad).unwrap();
    }
    // the loss is the negative log-likelihood
    let loss_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
    let sup = max_rel_error(policy.params(), &loss_grad, 1e-3, joint_loss);

    let (baseline, gamma) = (3.0, 0.95);
    let rl_grad = reinforce_gradient(&policy, &episodes, baseline, gamma).unwrap();
    let surrogate = |p: &[f64]| {
        let pol = Policy::from_params(Arch::TOY, p.to_vec()).unwrap();
        let total: f64 = episodes
            .iter()
            .map(|(e, r)| {
                let w = haggle_core::selfplay::step_weights(e.targets.len(), *r, baseline, gamma);
                pol.log_prob(&e.scenario, e.me, &e.history, &e.targets, &w).unwrap()
            })
            .sum();
        total / episodes.len() as f64
    };
    let rl = max_rel_error(policy.params(), &rl_grad, 1e-3, surrogate);
    (sup, rl)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Tabular two-step environment. The learner picks one of three openings;
/// the partner then ends the game with probability `stop[a1]` or hands the
/// learner a second, binary choice.
pub struct ToyEnv {
    pub stop: [f64; 3],
    pub reward_one: [f64; 3],
    pub reward_two: [[f64; 2]; 3],
}

/// Softmax policy: logits `theta[0..3]` for the opening, `theta[3 + 2 a1 ..]` for the reply.
pub struct ToyPolicy {
    pub theta: Vec<f64>,
}

#[derive(Clone, Copy)]
pub struct ToyTrajectory {
    pub first: usize,
    pub second: Option<usize>,
}

impl ToyPolicy {
    fn opening(&self) -> Vec<f64> {
        softmax(&self.theta[0..3])
    }

    fn reply(&self, a1: usize) -> Vec<f64> {
        softmax(&self.theta[3 + 2 * a1..5 + 2 * a1])
    }
}

impl ScoreFunction for ToyPolicy {
    type Trajectory = ToyTrajectory;

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn decisions(&self, t: &ToyTrajectory) -> usize {
        1 + usize::from(t.second.is_some())
    }

    fn accumulate_score(&self, t: &ToyTrajectory, weights: &[f64], grad: &mut [f64]) -> haggle_core::Result<f64> {
        let p = self.opening();
        for k in 0..3 {
            grad[k] += weights[0] * (f64::from(k == t.first) - p[k]);
        }
        let mut lp = weights[0] * p[t.first].ln();
        if let Some(a2) = t.second {
            let q = self.reply(t.first);
            for k in 0..2 {
                grad[3 + 2 * t.first + k] += weights[1] * (f64::from(k == a2) - q[k]);
            }
            lp += weights[1] * q[a2].ln();
        }
        Ok(lp)
    }
}

impl ToyEnv {
    /// Every trajectory with its probability and reward.
    pub fn enumerate(&self, pol: &ToyPolicy) -> Vec<(ToyTrajectory, f64, f64)> {
        let p = pol.opening();
        let mut out = Vec::new();
        for a1 in 0..3 {
            out.push((ToyTrajectory { first: a1, second: None }, p[a1] * self.stop[a1], self.reward_one[a1]));
            let q = pol.reply(a1);
            for a2 in 0..2 {
                let prob = p[a1] * (1.0 - self.stop[a1]) * q[a2];
                out.push((ToyTrajectory { first: a1, second: Some(a2) }, prob, self.reward_two[a1][a2]));
            }
        }
        out
    }

    /// `E[gamma^(decisions - 1) R]` in closed form.
    pub fn objective(&self, theta: &[f64], gamma: f64) -> f64 {
        let pol = ToyPolicy { theta: theta.to_vec() };
        self.enumerate(&pol)
            .iter()
            .map(|(t, p, r)| p * gamma.powi(pol.decisions(t) as i32 - 1) * r)
            .sum()
    }

    /// Exact expectation of the REINFORCE update direction.
    pub fn expected_update(&self, pol: &ToyPolicy, baseline: f64, gamma: f64) -> Vec<f64> {
        let mut g = vec![0.0; pol.theta.len()];
        for (t, p, r) in self.enumerate(pol) {
            let u = reinforce_gradient(pol, &[(t, r)], baseline, gamma).unwrap();
            g.iter_mut().zip(u).for_each(|(a, b)| *a += p * b);
        }
        g
    }
}

/// Relative error `|expected update - exact gradient| / |exact gradient|`.
pub fn oracle_error(env: &ToyEnv, theta: &[f64], baseline: f64, gamma: f64) -> f64 {
    let pol = ToyPolicy { theta: theta.to_vec() };
    let update = env.expected_update(&pol, baseline, gamma);
    let h = 1e-6;
    let exact: Vec<f64> = (0..theta.len())
        .map(|i| {
            let mut up = theta.to_vec();
            let mut down = theta.to_vec();
            up[i] += h;
            down[i] -= h;
            (env.objective(&up, gamma) - env.objective(&down, gamma)) / (2.0 * h)
        })
        .collect();
    let diff: f64 = update.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm
}

/// The two oracle settings: a single learner decision followed by a
/// variable-length partner reply under discounting, and two learner decisions
/// without discounting. Both with a non-zero baseline.
pub fn oracle_errors() -> (f64, f64) {
    let theta = [0.3, -0.2, 0.1, 0.5, -0.4, 0.0, 0.2, -0.1, 0.3];
    let single = ToyEnv { stop: [1.0; 3], reward_one: [4.0, 7.0, 2.0], reward_two: [[0.0; 2]; 3] };
    let double = ToyEnv { stop: [0.3, 0.6, 0.1], reward_one: [4.0, 7.0, 2.0], reward_two: [[5.0, 1.0], [0.0, 9.0], [6.0, 3.0]] };
    (oracle_error(&single, &theta, 2.5, 0.95), oracle_error(&double, &theta, 2.5, 1.0))
}

/// Realize-then-parse on every feasible act of `n` sampled scenarios, for
/// both speakers. Returns the number of acts checked.
pub fn round_trip(n: u64) -> Result<usize, String> {
    let mut checked = 0;
    for seed in 0..n {
        let s = sample_scenario(10_000 + seed, &PoolStats::default()).map_err(|e| e.to_string())?;
        checked += round_trip_scenario(&s)?;
    }
    Ok(checked)
}

pub fn round_trip_scenario(s: &Scenario) -> Result<usize, String> {
    let mut acts: Vec<Act> = all_divisions(&s.counts).into_iter().map(Act::propose).collect();
    acts.extend([Act::Accept, Act::Select, Act::Walkaway]);
    for act in &acts {
        for speaker in [Role::A, Role::B] {
            let text = realize_act(act, s);
            let back = parse_utterance(&text, s, speaker);
            if back.act != Some(DialogueAct::new(speaker, *act)) {
                return Err(format!("{act:?} -> {text:?} -> {:?} on {s:?}", back.act));
            }
        }
    }
    Ok(acts.len() * 2)
}
