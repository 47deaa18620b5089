//! Rollouts between agents and REINFORCE training against a frozen partner.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bargain::{
    all_divisions, resolve_outcome, sample_scenario_with, score, Act, DialogueAct, DialogueState, Division, Outcome,
    OutcomeKind, PoolStats, Role, Scenario, Termination, DEFAULT_CUTOFF,
};
use crate::error::{Error, Result};
use crate::nn::clip_global_norm;
use crate::policy::{greedy_shares, sample_shares, Memory, Policy, Target};
use crate::reward::{reward_for_outcome, RewardConfig};
use crate::supervised::{supervised_step, Example};

/// How a policy turns distributions into choices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64 },
}

/// Fixed behaviours used as test partners.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Script {
    /// Demands every item, forever.
    Greedy,
    /// Accepts whatever is offered, selects after an acceptance, otherwise offers everything away.
    Accommodating,
    /// Proposes the split with the smallest points gap (it peeks at both value vectors).
    EqualSplit,
}

#[derive(Clone, Copy, Debug)]
pub enum Agent<'a> {
    Policy { policy: &'a Policy, decoding: Decoding },
    Script(Script),
}

impl<'a> Agent<'a> {
    pub fn greedy(policy: &'a Policy) -> Self {
        Agent::Policy { policy, decoding: Decoding::Greedy }
    }

    pub fn sampling(policy: &'a Policy, temperature: f64) -> Self {
        Agent::Policy { policy, decoding: Decoding::Sample { temperature } }
    }
}

struct Seat<'a> {
    agent: Agent<'a>,
    mem: Option<Memory>,
    log_probs: Vec<f64>,
}

fn pick<R: Rng>(p: &[f64], decoding: Decoding, rng: &mut R) -> usize {
    match decoding {
        Decoding::Greedy => crate::nn::argmax(p),
        Decoding::Sample { .. } => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, v) in p.iter().enumerate() {
                acc += v;
                if u < acc {
                    return i;
                }
            }
            p.iter().rposition(|v| *v > 0.0).unwrap_or(0)
        }
    }
}

fn temperature(decoding: Decoding) -> f64 {
    match decoding {
        Decoding::Greedy => 1.0,
        Decoding::Sample { temperature } => temperature,
    }
}

impl Seat<'_> {
    fn act<R: Rng>(&mut self, state: &DialogueState, me: Role, rng: &mut R) -> Result<Act> {
        let s = &state.scenario;
        match self.agent {
            Agent::Policy { policy, decoding } => {
                let mem = self.mem.as_mut().expect("policy seats carry memory");
                policy.observe(mem, s, &state.history);
                let dist = policy.act_distribution(mem, s, &state.history, temperature(decoding))?;
                let kind = pick(&dist.kind, decoding, rng);
                let act = match kind {
                    0 => Act::propose(match decoding {
                        Decoding::Greedy => greedy_shares(&dist.shares),
                        Decoding::Sample { .. } => sample_shares(&dist.shares, rng),
                    }),
                    1 => Act::Accept,
                    _ => Act::Select,
                };
                self.log_probs.push(dist.prob(&act).ln());
                Ok(act)
            }
            Agent::Script(script) => Ok(scripted_act(script, state, me)),
        }
    }

    fn output<R: Rng>(&mut self, state: &DialogueState, me: Role, rng: &mut R) -> Result<Division> {
        let s = &state.scenario;
        match self.agent {
            Agent::Policy { policy, decoding } => {
                let mem = self.mem.as_mut().expect("policy seats carry memory");
                policy.observe(mem, s, &state.history);
                let dist = policy.output_distribution(mem, s, &state.history, temperature(decoding))?;
                let take: [u32; 3] = std::array::from_fn(|k| pick(&dist[k], decoding, rng) as u32);
                self.log_probs.push((0..3).map(|k| dist[k][take[k] as usize].ln()).sum());
                Ok(Division::new(take))
            }
            Agent::Script(_) => Ok(match state.accepted_proposal() {
                Some((who, d)) if who == me => d,
                Some((_, d)) => d.complement(&s.counts),
                None => Division::new(s.counts),
            }),
        }
    }
}

fn scripted_act(script: Script, state: &DialogueState, me: Role) -> Act {
    let s = &state.scenario;
    let partner_accepted = state.last_act().is_some_and(|a| a.speaker != me && a.act == Act::Accept);
    match script {
        Script::Greedy => Act::propose(Division::new(s.counts)),
        Script::Accommodating => {
            if partner_accepted {
                Act::Select
            } else if state.standing_offer_for(me).is_some() && matches!(state.last_act().map(|a| a.act), Some(Act::Propose { .. })) {
                Act::Accept
            } else {
                Act::propose(Division::NOTHING)
            }
        }
        Script::EqualSplit => {
            if partner_accepted {
                return Act::Select;
            }
            let best = all_divisions(&s.counts)
                .into_iter()
                .min_by_key(|d| {
                    let mine = score(d, s.values(me)) as i64;
                    let theirs = score(&d.complement(&s.counts), s.values(me.other())) as i64;
                    ((mine - theirs).abs(), -(mine + theirs))
                })
                .expect("at least the empty division");
            Act::propose(best)
        }
    }
}

fn seat_for<'a>(agent: Agent<'a>, state: &DialogueState, me: Role) -> Result<Seat<'a>> {
    let mem = match agent {
        Agent::Policy { policy, .. } => Some(policy.memory(&state.scenario, me)?),
        Agent::Script(_) => None,
    };
    Ok(Seat { agent, mem, log_probs: Vec::new() })
}

/// `me`'s next act in a live dialogue, recomputed from the full history.
pub fn next_act<R: Rng>(agent: Agent<'_>, state: &DialogueState, me: Role, rng: &mut R) -> Result<Act> {
    if state.is_terminal() || state.turn != me {
        return Err(Error::Precondition(format!("it is not {me:?}'s turn")));
    }
    seat_for(agent, state, me)?.act(state, me, rng)
}

/// `me`'s output deal once a dialogue has ended with a selection.
pub fn output_deal<R: Rng>(agent: Agent<'_>, state: &DialogueState, me: Role, rng: &mut R) -> Result<Division> {
    if !matches!(state.termination, Some(Termination::Selected { .. })) {
        return Err(Error::Precondition("output deals follow a selection".into()));
    }
    seat_for(agent, state, me)?.output(state, me, rng)
}

/// A finished dialogue between two agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Game {
    pub scenario: Scenario,
    pub first: Role,
    pub acts: Vec<DialogueAct>,
    pub output_a: Option<Division>,
    pub output_b: Option<Division>,
    pub outcome: Outcome,
}

impl Game {
    pub fn steps(&self) -> usize {
        self.acts.len()
    }

    /// Replays the acts through the state machine and recomputes the outcome.
    pub fn replay(&self, cutoff: usize) -> Result<Outcome> {
        let mut st = DialogueState::new(self.scenario.clone(), self.first, cutoff)?;
        for a in &self.acts {
            st.push(*a)?;
        }
        resolve_outcome(&st, self.output_a.as_ref(), self.output_b.as_ref())
    }

    /// `role`'s choices, as training targets.
    pub fn targets_for(&self, role: Role) -> Vec<Target> {
        let mut t: Vec<Target> = self
            .acts
            .iter()
            .enumerate()
            .filter(|(_, a)| a.speaker == role)
            .map(|(at, a)| Target::Act { at, act: a.act })
            .collect();
        let out = if role == Role::A { self.output_a } else { self.output_b };
        if let Some(take) = out {
            t.push(Target::Output { take });
        }
        t
    }

    pub fn example_for(&self, role: Role) -> Example {
        Example { scenario: self.scenario.clone(), me: role, history: self.acts.clone(), targets: self.targets_for(role) }
    }
}

/// Plays one dialogue. Returns the game and each side's log-probabilities of
/// its own decisions (empty for scripted agents).
pub fn play<R: Rng>(
    scenario: &Scenario,
    first: Role,
    agent_a: Agent<'_>,
    agent_b: Agent<'_>,
    cutoff: usize,
    rng: &mut R,
) -> Result<(Game, [Vec<f64>; 2])> {
    play_with_outputs(scenario, first, [agent_a, agent_b], [false, false], cutoff, rng)
}

/// Like [`play`]; `greedy_output[i]` makes side `i` claim its most likely
/// output deal whatever its act decoding.
pub fn play_with_outputs<R: Rng>(
    scenario: &Scenario,
    first: Role,
    agents: [Agent<'_>; 2],
    greedy_output: [bool; 2],
    cutoff: usize,
    rng: &mut R,
) -> Result<(Game, [Vec<f64>; 2])> {
    let mut seats = agents.map(|agent| Seat { agent, mem: None, log_probs: Vec::new() });
    for (seat, role) in seats.iter_mut().zip([Role::A, Role::B]) {
        if let Agent::Policy { policy, .. } = seat.agent {
            seat.mem = Some(policy.memory(scenario, role)?);
        }
    }
    let mut state = DialogueState::new(scenario.clone(), first, cutoff)?;
    while !state.is_terminal() {
        let me = state.turn;
        let act = seats[me as usize].act(&state, me, rng)?;
        state
            .push(DialogueAct::new(me, act))
            .map_err(|e| Error::Training(format!("agent produced an illegal act after masking: {e}")))?;
    }
    let mut outputs = [None, None];
    if matches!(state.termination, Some(Termination::Selected { .. })) {
        for role in [Role::A, Role::B] {
            let seat = &mut seats[role as usize];
            if greedy_output[role as usize] {
                if let Agent::Policy { policy, .. } = seat.agent {
                    seat.agent = Agent::greedy(policy);
                }
            }
            outputs[role as usize] = Some(seat.output(&state, role, rng)?);
        }
    }
    let outcome = resolve_outcome(&state, outputs[0].as_ref(), outputs[1].as_ref())?;
    let [a, b] = seats.map(|s| s.log_probs);
    Ok((
        Game { scenario: scenario.clone(), first, acts: state.history, output_a: outputs[0], output_b: outputs[1], outcome },
        [a, b],
    ))
}

/// A training rollout seen from the learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub game: Game,
    pub learner: Role,
    /// Log-probability of each learner decision, outputs last.
    pub log_probs: Vec<f64>,
    pub reward: f64,
}

impl Episode {
    pub fn steps(&self) -> usize {
        self.game.steps()
    }

    pub fn example(&self) -> Example {
        self.game.example_for(self.learner)
    }
}

#[allow(clippy::too_many_arguments)]
/// Rollout with a sampling learner and a partner that samples acts at
/// temperature 1 and takes its most likely output deal.
pub fn rollout<R: Rng>(
    learner: &Policy,
    partner: &Policy,
    scenario: &Scenario,
    learner_role: Role,
    first: Role,
    reward: &RewardConfig,
    cutoff: usize,
    rng: &mut R,
) -> Result<Episode> {
    let (l, p) = (Agent::sampling(learner, 1.0), Agent::sampling(partner, 1.0));
    let (agents, greedy) = if learner_role == Role::A { ([l, p], [false, true]) } else { ([p, l], [true, false]) };
    let (game, [lp_a, lp_b]) = play_with_outputs(scenario, first, agents, greedy, cutoff, rng)?;
    let log_probs = if learner_role == Role::A { lp_a } else { lp_b };
    let r = reward_for_outcome(&game.outcome, learner_role, reward);
    Ok(Episode { game, learner: learner_role, log_probs, reward: r })
}

/// A differentiable policy whose decisions in a trajectory can be scored.
pub trait ScoreFunction {
    type Trajectory;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Number of the policy's own decisions in `t`, in order.
    fn decisions(&self, t: &Self::Trajectory) -> usize;
    /// Adds `sum_i w_i grad log pi(decision_i)` to `grad`; returns `sum_i w_i log pi(decision_i)`.
    fn accumulate_score(&self, t: &Self::Trajectory, weights: &[f64], grad: &mut [f64]) -> Result<f64>;
}

impl ScoreFunction for Policy {
    type Trajectory = Example;

    fn params(&self) -> &[f64] {
        Policy::params(self)
    }

    fn params_mut(&mut self) -> &mut [f64] {
        Policy::params_mut(self)
    }

    fn decisions(&self, t: &Example) -> usize {
        t.targets.len()
    }

    fn accumulate_score(&self, t: &Example, weights: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.accumulate_log_prob(&t.scenario, t.me, &t.history, &t.targets, weights, grad)
    }
}

/// Weight of each of `n` decisions: `gamma^(n-1-i) * (reward - baseline)`,
/// so the last decision gets the undiscounted advantage.
pub fn step_weights(n: usize, reward: f64, baseline: f64, gamma: f64) -> Vec<f64> {
    (0..n).map(|i| gamma.powi((n - 1 - i) as i32) * (reward - baseline)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReinforceParams {
    pub learning_rate: f64,
    pub gamma: f64,
    pub clip_norm: f64,
}

/// Unclipped ascent direction averaged over `batch` (trajectory, reward).
pub fn reinforce_gradient<P: ScoreFunction>(
    policy: &P,
    batch: &[(P::Trajectory, f64)],
    baseline: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Domain("REINFORCE needs at least one episode".into()));
    }
    let mut grad = vec![0.0; policy.params().len()];
    for (t, r) in batch {
        let w = step_weights(policy.decisions(t), *r, baseline, gamma);
        policy.accumulate_score(t, &w, &mut grad)?;
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training("non-finite policy gradient".into()));
    }
    Ok(grad)
}

/// One clipped gradient-ascent step. Returns the pre-clipping gradient norm.
pub fn reinforce_update<P: ScoreFunction>(
    policy: &mut P,
    batch: &[(P::Trajectory, f64)],
    baseline: f64,
    params: &ReinforceParams,
) -> Result<f64> {
    let mut grad = reinforce_gradient(policy, batch, baseline, params.gamma)?;
    let norm = clip_global_norm(&mut grad, params.clip_norm);
    for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
        *p += params.learning_rate * g;
    }
    Ok(norm)
}

/// Mean of the most recent `window` values; 0 before any value arrives.
#[derive(Clone, Debug)]
pub struct RunningMean {
    window: usize,
    values: VecDeque<f64>,
    sum: f64,
}

impl RunningMean {
    pub fn new(window: usize) -> Self {
        RunningMean { window: window.max(1), values: VecDeque::new(), sum: 0.0 }
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.sum / self.values.len() as f64
        }
    }

    pub fn push(&mut self, v: f64) {
        self.values.push_back(v);
        self.sum += v;
        if self.values.len() > self.window {
            self.sum -= self.values.pop_front().unwrap();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub episodes: usize,
    pub cutoff: usize,
    pub baseline_window: usize,
    pub clip_norm: f64,
    /// Episodes per update.
    pub batch_size: usize,
    /// Episodes per training-curve record.
    pub log_every: usize,
    /// Interleave one supervised batch every this many updates (0 = never).
    pub supervised_every: usize,
    pub supervised_batch: usize,
    pub supervised_learning_rate: f64,
    pub seed: u64,
    pub pool: PoolStats,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 0.1,
            gamma: 0.95,
            episodes: 16_000,
            cutoff: DEFAULT_CUTOFF,
            baseline_window: 100,
            clip_norm: 1.0,
            batch_size: 1,
            log_every: 500,
            supervised_every: 0,
            supervised_batch: 16,
            supervised_learning_rate: 0.1,
            seed: 0,
            pool: PoolStats::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            problems.push(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.cutoff < 2 {
            problems.push(format!("cutoff must be at least 2, got {}", self.cutoff));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            problems.push("batch_size and log_every must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            problems.push(format!("learning_rate must be a non-negative number, got {}", self.learning_rate));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// One line of the training-curve log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_points: f64,
    pub agreement_rate: f64,
    pub cutoff_rate: f64,
}

#[derive(Clone, Debug)]
pub struct StageRun {
    pub policy: Policy,
    pub curve: Vec<CurvePoint>,
    pub partner_hash_before: String,
    pub partner_hash_after: String,
}

/// Seeds an independent stream for item `index` of a run.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Trains a copy of `init` against the frozen `partner` for `cfg.episodes` episodes.
pub fn train_stage(
    init: &Policy,
    partner: &Policy,
    reward: &RewardConfig,
    cfg: &TrainerConfig,
    supervised: Option<&[Example]>,
    mut on_log: impl FnMut(&CurvePoint),
) -> Result<StageRun> {
    cfg.validate()?;
    if cfg.supervised_every > 0 && supervised.is_none_or(<[Example]>::is_empty) {
        return Err(Error::Config("supervised interleaving needs training examples".into()));
    }
    let partner_hash_before = crate::checkpoint::policy_hash(partner);
    let mut policy = init.clone();
    let params = ReinforceParams { learning_rate: cfg.learning_rate, gamma: cfg.gamma, clip_norm: cfg.clip_norm };
    let mut baseline = RunningMean::new(cfg.baseline_window);
    let mut curve = Vec::new();
    let mut window: Vec<(f64, f64, OutcomeKind)> = Vec::new();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut updates = 0usize;
    let mut sup_rng = stream_rng(cfg.seed, u64::MAX);

    for i in 0..cfg.episodes {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let scenario = sample_scenario_with(&mut rng, &cfg.pool)?;
        let learner = if rng.gen_bool(0.5) { Role::A } else { Role::B };
        let first = if rng.gen_bool(0.5) { Role::A } else { Role::B };
        let ep = rollout(&policy, partner, &scenario, learner, first, reward, cfg.cutoff, &mut rng)?;
        window.push((ep.reward, ep.game.outcome.points(learner) as f64, ep.game.outcome.kind));
        batch.push((ep.example(), ep.reward));
        if batch.len() == cfg.batch_size {
            let b = baseline.mean();
            reinforce_update(&mut policy, &batch, b, &params)?;
            for (_, r) in batch.drain(..) {
                baseline.push(r);
            }
            updates += 1;
            if cfg.supervised_every > 0 && updates % cfg.supervised_every == 0 {
                let data = supervised.expect("checked above");
                let picks: Vec<&Example> =
                    (0..cfg.supervised_batch).map(|_| &data[sup_rng.gen_range(0..data.len())]).collect();
                supervised_step(&mut policy, &picks, cfg.supervised_learning_rate, cfg.clip_norm)?;
            }
        }
        if window.len() == cfg.log_every || i + 1 == cfg.episodes {
            let n = window.len() as f64;
            let point = CurvePoint {
                episode: i + 1,
                mean_reward: window.iter().map(|w| w.0).sum::<f64>() / n,
                mean_points: window.iter().map(|w| w.1).sum::<f64>() / n,
                agreement_rate: window.iter().filter(|w| w.2 == OutcomeKind::Agreement).count() as f64 / n,
                cutoff_rate: window.iter().filter(|w| w.2 == OutcomeKind::Cutoff).count() as f64 / n,
            };
            on_log(&point);
            curve.push(point);
            window.clear();
        }
    }
    if !batch.is_empty() {
        reinforce_update(&mut policy, &batch, baseline.mean(), &params)?;
    }
    if policy.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Training("parameters diverged".into()));
    }
    let partner_hash_after = crate::checkpoint::policy_hash(partner);
    Ok(StageRun { policy, curve, partner_hash_before, partner_hash_after })
}
