//! Act-level negotiation policy.
//!
//! The policy reads a dialogue from one side's perspective. A goal encoder
//! embeds that side's counts and values, a GRU runs over the acts so far,
//! and a small context vector summarises what is on the table. From the
//! resulting state a trunk layer feeds three heads:
//!
//! * an act head choosing PROPOSE, ACCEPT or SELECT (masked by legality),
//! * a proposal head picking the speaker's share of each item,
//! * an output head picking the share claimed at deal selection.
//!
//! Share heads score each candidate share `j` of item `k` by a dot product
//! between a state-dependent coefficient vector and fixed features of the
//! option (its fraction of the pool, its value, whether it matches the
//! partner's offer, and so on), so a single set of weights covers any count.
//!
//! Gradients are computed by explicit backpropagation through time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bargain::{Act, DialogueAct, DialogueState, Division, Role, Scenario, DEFAULT_CUTOFF, ISSUES, MAX_POINTS};
use crate::error::{Error, Result};
use crate::nn::{argmax, softmax, Dense, Gru, LayoutBuilder};

pub const GOAL_FEATURES: usize = 9;
pub const ACT_FEATURES: usize = 9;
pub const CONTEXT_FEATURES: usize = 6;
pub const OPTION_FEATURES: usize = 8;
/// Largest item count the share heads accept.
pub const MAX_COUNT: u32 = 10;

/// Choices of the act head, in logit order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActKind {
    Propose,
    Accept,
    Select,
}

impl ActKind {
    pub const ALL: [ActKind; 3] = [ActKind::Propose, ActKind::Accept, ActKind::Select];

    pub fn of(act: &Act) -> Option<ActKind> {
        match act {
            Act::Propose { .. } => Some(ActKind::Propose),
            Act::Accept => Some(ActKind::Accept),
            Act::Select => Some(ActKind::Select),
            Act::Walkaway => None,
        }
    }
}

/// Which act kinds `me` may choose after `history`. Proposing is always
/// allowed; accepting needs a partner proposal as the last act, selecting a
/// partner acceptance.
pub fn legal_kinds(history: &[DialogueAct], me: Role) -> [bool; 3] {
    let last = history.last().filter(|a| a.speaker != me).map(|a| a.act);
    [true, matches!(last, Some(Act::Propose { .. })), last == Some(Act::Accept)]
}

/// Layer sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub goal: usize,
    pub hidden: usize,
    pub trunk: usize,
}

impl Arch {
    pub const STANDARD: Arch = Arch { goal: 32, hidden: 64, trunk: 64 };
    /// Tiny network for gradient checks.
    pub const TOY: Arch = Arch { goal: 2, hidden: 2, trunk: 2 };

    pub fn num_params(&self) -> usize {
        Net::new(*self).len
    }
}

#[derive(Clone, Debug)]
struct Net {
    arch: Arch,
    goal: Dense,
    gru: Gru,
    trunk: Dense,
    act: Dense,
    proposal: Dense,
    output: Dense,
    len: usize,
}

impl Net {
    fn new(arch: Arch) -> Self {
        let mut b = LayoutBuilder::default();
        let goal = b.dense(arch.goal, GOAL_FEATURES);
        let gru = Gru::new(&mut b, ACT_FEATURES, arch.hidden);
        let trunk = b.dense(arch.trunk, arch.goal + arch.hidden + CONTEXT_FEATURES);
        let act = b.dense(ActKind::ALL.len(), arch.trunk);
        let proposal = b.dense(OPTION_FEATURES, arch.trunk);
        let output = b.dense(OPTION_FEATURES, arch.trunk);
        Net { arch, goal, gru, trunk, act, proposal, output, len: b.len }
    }
}

/// What the table looks like to `me`, all shares expressed as `me`'s share.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Context {
    pub partner_offer: Option<Division>,
    pub my_last_proposal: Option<Division>,
    pub agreed: Option<Division>,
    pub utterances: usize,
    pub partner_accepted_last: bool,
}

impl Context {
    pub fn of(scenario: &Scenario, me: Role, history: &[DialogueAct]) -> Context {
        let counts = &scenario.counts;
        let mine = |speaker: Role, d: Division| if speaker == me { d } else { d.complement(counts) };
        let last_prop = history.iter().rev().find_map(|a| a.act.proposal().map(|d| (a.speaker, d)));
        let agreed = history.iter().rposition(|a| a.act == Act::Accept).and_then(|idx| {
            if history[idx + 1..].iter().any(|a| a.act.proposal().is_some()) {
                return None;
            }
            history[..idx].iter().rev().find_map(|a| a.act.proposal().map(|d| mine(a.speaker, d)))
        });
        Context {
            partner_offer: last_prop.filter(|(s, _)| *s != me).map(|(s, d)| mine(s, d)),
            my_last_proposal: history.iter().rev().filter(|a| a.speaker == me).find_map(|a| a.act.proposal()),
            agreed,
            utterances: history.len(),
            partner_accepted_last: history.last().is_some_and(|a| a.speaker != me && a.act == Act::Accept),
        }
    }

    fn features(&self, values: &[u32; ISSUES]) -> [f64; CONTEXT_FEATURES] {
        let pts = |d: &Option<Division>| d.map_or(0.0, |d| crate::bargain::score(&d, values) as f64 / MAX_POINTS as f64);
        [
            f64::from(u8::from(self.partner_offer.is_some())),
            pts(&self.partner_offer),
            f64::from(u8::from(self.my_last_proposal.is_some())),
            pts(&self.my_last_proposal),
            (self.utterances as f64 / DEFAULT_CUTOFF as f64).min(1.0),
            f64::from(u8::from(self.partner_accepted_last)),
        ]
    }

    fn option_features(&self, k: usize, j: u32, count: u32, value: u32) -> [f64; OPTION_FEATURES] {
        let is = |d: &Option<Division>| f64::from(u8::from(d.is_some_and(|d| d.take[k] == j)));
        [
            1.0,
            if count == 0 { 0.0 } else { j as f64 / count as f64 },
            f64::from(u8::from(j == 0)),
            f64::from(u8::from(j == count)),
            (j * value) as f64 / MAX_POINTS as f64,
            is(&self.partner_offer),
            is(&self.my_last_proposal),
            is(&self.agreed),
        ]
    }
}

fn goal_features(scenario: &Scenario, me: Role) -> [f64; GOAL_FEATURES] {
    let v = scenario.values(me);
    let c = &scenario.counts;
    let mut g = [0.0; GOAL_FEATURES];
    for k in 0..ISSUES {
        g[k] = c[k] as f64 / 5.0;
        g[ISSUES + k] = v[k] as f64 / 10.0;
        g[2 * ISSUES + k] = (c[k] * v[k]) as f64 / 10.0;
    }
    g
}

fn act_features(scenario: &Scenario, me: Role, a: &DialogueAct) -> [f64; ACT_FEATURES] {
    let mut x = [0.0; ACT_FEATURES];
    x[match a.act {
        Act::Propose { .. } => 0,
        Act::Accept => 1,
        Act::Select => 2,
        Act::Walkaway => 3,
    }] = 1.0;
    x[4] = f64::from(u8::from(a.speaker == me));
    if let Some(d) = a.act.proposal() {
        let share = if a.speaker == me { d } else { d.complement(&scenario.counts) };
        for k in 0..ISSUES {
            let c = scenario.counts[k];
            x[5 + k] = if c == 0 { 0.0 } else { share.take[k] as f64 / c as f64 };
        }
        x[8] = crate::bargain::score(&share, scenario.values(me)) as f64 / MAX_POINTS as f64;
    }
    x
}

/// Running encoder state for one side of a live dialogue.
#[derive(Clone, Debug)]
pub struct Memory {
    me: Role,
    e: Vec<f64>,
    h: Vec<f64>,
    seen: usize,
}

impl Memory {
    pub fn role(&self) -> Role {
        self.me
    }
}

/// Probabilities for the next act.
#[derive(Clone, Debug, PartialEq)]
pub struct ActDistribution {
    /// Indexed like [`ActKind::ALL`]; illegal kinds have probability 0.
    pub kind: [f64; 3],
    /// Per item, probabilities of each own share `0..=count` if proposing.
    pub shares: Vec<Vec<f64>>,
}

fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last option with mass
    p.iter().rposition(|v| *v > 0.0).unwrap_or(0)
}

/// Draws one share per item.
pub fn sample_shares<R: Rng + ?Sized>(shares: &[Vec<f64>], rng: &mut R) -> Division {
    Division::new(std::array::from_fn(|k| sample_index(&shares[k], rng) as u32))
}

pub fn greedy_shares(shares: &[Vec<f64>]) -> Division {
    Division::new(std::array::from_fn(|k| argmax(&shares[k]) as u32))
}

impl ActDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Act {
        self.build(ActKind::ALL[sample_index(&self.kind, rng)], || sample_shares(&self.shares, rng))
    }

    pub fn greedy(&self) -> Act {
        self.build(ActKind::ALL[argmax(&self.kind)], || greedy_shares(&self.shares))
    }

    fn build(&self, kind: ActKind, shares: impl FnOnce() -> Division) -> Act {
        match kind {
            ActKind::Propose => Act::propose(shares()),
            ActKind::Accept => Act::Accept,
            ActKind::Select => Act::Select,
        }
    }

    /// Probability of a particular act.
    pub fn prob(&self, act: &Act) -> f64 {
        match act {
            Act::Propose { take } => self.kind[0] * (0..ISSUES).map(|k| self.shares[k][take[k] as usize]).product::<f64>(),
            Act::Accept => self.kind[1],
            Act::Select => self.kind[2],
            Act::Walkaway => 0.0,
        }
    }
}

/// A supervised or reinforced choice made by the modelled side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum Target {
    /// The act taken after `history[..at]`.
    Act { at: usize, act: Act },
    /// The share claimed at deal selection, after the whole history.
    Output { take: Division },
}

/// Cached forward pass over a full history.
struct Trace {
    g: [f64; GOAL_FEATURES],
    e: Vec<f64>,
    xs: Vec<[f64; ACT_FEATURES]>,
    hs: Vec<Vec<f64>>,
    caches: Vec<crate::nn::GruCache>,
}

/// Act-level policy with a flat parameter vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "PolicyData", into = "PolicyData")]
pub struct Policy {
    net: Net,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyData {
    arch: Arch,
    params: Vec<f64>,
}

impl TryFrom<PolicyData> for Policy {
    type Error = Error;
    fn try_from(d: PolicyData) -> Result<Policy> {
        Policy::from_params(d.arch, d.params)
    }
}

impl From<Policy> for PolicyData {
    fn from(p: Policy) -> PolicyData {
        PolicyData { arch: p.net.arch, params: p.params }
    }
}

fn check_scenario(s: &Scenario) -> Result<()> {
    match s.counts.iter().find(|&&c| c > MAX_COUNT) {
        Some(c) => Err(Error::Domain(format!("item count {c} exceeds the policy limit of {MAX_COUNT}"))),
        None => Ok(()),
    }
}

impl Policy {
    /// Parameters drawn uniformly from `[-0.1, 0.1]`.
    pub fn new(arch: Arch, seed: u64) -> Policy {
        let net = Net::new(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..net.len).map(|_| rng.gen_range(-0.1..=0.1)).collect();
        Policy { net, params }
    }

    pub fn from_params(arch: Arch, params: Vec<f64>) -> Result<Policy> {
        let net = Net::new(arch);
        if params.len() != net.len {
            return Err(Error::Integrity(format!("expected {} parameters, found {}", net.len, params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Integrity("non-finite parameter".into()));
        }
        Ok(Policy { net, params })
    }

    pub fn arch(&self) -> Arch {
        self.net.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn encode_goal(&self, g: &[f64]) -> Vec<f64> {
        self.net.goal.forward(&self.params, g).into_iter().map(f64::tanh).collect()
    }

    /// Fresh encoder state for `me` at the start of a dialogue.
    pub fn memory(&self, scenario: &Scenario, me: Role) -> Result<Memory> {
        check_scenario(scenario)?;
        let e = self.encode_goal(&goal_features(scenario, me));
        Ok(Memory { me, e, h: vec![0.0; self.net.arch.hidden], seen: 0 })
    }

    /// Feeds any acts of `history` not yet seen by `mem`.
    pub fn observe(&self, mem: &mut Memory, scenario: &Scenario, history: &[DialogueAct]) {
        for a in &history[mem.seen..] {
            let x = act_features(scenario, mem.me, a);
            mem.h = self.net.gru.step(&self.params, &x, &mem.h).0;
        }
        mem.seen = history.len();
    }

    /// Encoder state `[goal; recurrent]` after `history`, seen by `me`.
    /// The history must be a legal dialogue prefix.
    pub fn encode(&self, scenario: &Scenario, me: Role, history: &[DialogueAct]) -> Result<Vec<f64>> {
        let first = history.first().map_or(Role::A, |a| a.speaker);
        let mut state = DialogueState::new(scenario.clone(), first, history.len().max(2) + 1)?;
        for (i, a) in history.iter().enumerate() {
            state.push(*a).map_err(|e| Error::Contract(format!("illegal history at act {i}: {e}")))?;
        }
        let mut mem = self.memory(scenario, me)?;
        self.observe(&mut mem, scenario, history);
        Ok(mem.e.into_iter().chain(mem.h).collect())
    }

    fn trunk(&self, e: &[f64], h: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s: Vec<f64> = e.iter().chain(h).chain(q).copied().collect();
        let u = self.net.trunk.forward(&self.params, &s).into_iter().map(f64::tanh).collect();
        (s, u)
    }

    fn share_logits(&self, head: &Dense, u: &[f64], ctx: &Context, scenario: &Scenario, me: Role) -> (Vec<f64>, Vec<Vec<f64>>) {
        let coef = head.forward(&self.params, u);
        let values = scenario.values(me);
        let logits = (0..ISSUES)
            .map(|k| {
                let c = scenario.counts[k];
                (0..=c)
                    .map(|j| {
                        let psi = ctx.option_features(k, j, c, values[k]);
                        coef.iter().zip(psi).map(|(a, b)| a * b).sum()
                    })
                    .collect()
            })
            .collect();
        (coef, logits)
    }

    fn tempered(logits: &[f64], temperature: f64) -> Vec<f64> {
        logits.iter().map(|l| l / temperature).collect()
    }

    fn state_of(&self, mem: &Memory, scenario: &Scenario, history: &[DialogueAct]) -> Result<(Context, Vec<f64>)> {
        if mem.seen != history.len() {
            return Err(Error::Contract(format!("memory has seen {} acts, history has {}", mem.seen, history.len())));
        }
        let ctx = Context::of(scenario, mem.me, history);
        let (_, u) = self.trunk(&mem.e, &mem.h, &ctx.features(scenario.values(mem.me)));
        Ok((ctx, u))
    }

    /// Distribution over the next act. `temperature` divides every logit.
    pub fn act_distribution(
        &self,
        mem: &Memory,
        scenario: &Scenario,
        history: &[DialogueAct],
        temperature: f64,
    ) -> Result<ActDistribution> {
        if temperature <= 0.0 {
            return Err(Error::Sampling(format!("temperature must be positive, got {temperature}")));
        }
        let (ctx, u) = self.state_of(mem, scenario, history)?;
        let logits = self.net.act.forward(&self.params, &u);
        let mask = legal_kinds(history, mem.me);
        let p = softmax(&Self::tempered(&logits, temperature), Some(&mask));
        let (_, share_logits) = self.share_logits(&self.net.proposal, &u, &ctx, scenario, mem.me);
        let shares = share_logits.iter().map(|l| softmax(&Self::tempered(l, temperature), None)).collect();
        Ok(ActDistribution { kind: [p[0], p[1], p[2]], shares })
    }

    /// Per-item distribution of the share claimed at deal selection.
    pub fn output_distribution(
        &self,
        mem: &Memory,
        scenario: &Scenario,
        history: &[DialogueAct],
        temperature: f64,
    ) -> Result<Vec<Vec<f64>>> {
        if temperature <= 0.0 {
            return Err(Error::Sampling(format!("temperature must be positive, got {temperature}")));
        }
        let (ctx, u) = self.state_of(mem, scenario, history)?;
        let (_, logits) = self.share_logits(&self.net.output, &u, &ctx, scenario, mem.me);
        Ok(logits.iter().map(|l| softmax(&Self::tempered(l, temperature), None)).collect())
    }

    /// Greedy output deal after a full history.
    pub fn predict_output_deal(&self, scenario: &Scenario, me: Role, history: &[DialogueAct]) -> Result<Division> {
        let mut mem = self.memory(scenario, me)?;
        self.observe(&mut mem, scenario, history);
        Ok(greedy_shares(&self.output_distribution(&mem, scenario, history, 1.0)?))
    }

    fn trace(&self, scenario: &Scenario, me: Role, history: &[DialogueAct]) -> Trace {
        let g = goal_features(scenario, me);
        let e = self.encode_goal(&g);
        let mut hs = vec![vec![0.0; self.net.arch.hidden]];
        let mut xs = Vec::with_capacity(history.len());
        let mut caches = Vec::with_capacity(history.len());
        for a in history {
            let x = act_features(scenario, me, a);
            let (h, c) = self.net.gru.step(&self.params, &x, hs.last().unwrap());
            xs.push(x);
            hs.push(h);
            caches.push(c);
        }
        Trace { g, e, xs, hs, caches }
    }

    /// `sum_i w_i log pi(target_i)` for `me`'s choices in `history`; adds its
    /// gradient to `grad`. Act targets must be legal where they occur.
    pub fn accumulate_log_prob(
        &self,
        scenario: &Scenario,
        me: Role,
        history: &[DialogueAct],
        targets: &[Target],
        weights: &[f64],
        grad: &mut [f64],
    ) -> Result<f64> {
        check_scenario(scenario)?;
        if targets.len() != weights.len() {
            return Err(Error::Contract("one weight per target".into()));
        }
        if grad.len() != self.params.len() {
            return Err(Error::Contract("gradient buffer has the wrong length".into()));
        }
        let p = &self.params;
        let arch = self.net.arch;
        let tr = self.trace(scenario, me, history);
        let mut dh = vec![vec![0.0; arch.hidden]; history.len() + 1];
        let mut de = vec![0.0; arch.goal];
        let values = scenario.values(me);
        let mut total = 0.0;

        for (target, &w) in targets.iter().zip(weights) {
            let at = match target {
                Target::Act { at, .. } => *at,
                Target::Output { .. } => history.len(),
            };
            if at > history.len() {
                return Err(Error::Contract(format!("target at {at} is past the history")));
            }
            let ctx = Context::of(scenario, me, &history[..at]);
            let (s, u) = self.trunk(&tr.e, &tr.hs[at], &ctx.features(values));
            let mut du = vec![0.0; arch.trunk];
            let share_target = |head: &Dense, take: &Division, du: &mut [f64], grad: &mut [f64]| -> Result<f64> {
                take.check(&scenario.counts)?;
                let (coef, logits) = self.share_logits(head, &u, &ctx, scenario, me);
                let mut dcoef = vec![0.0; coef.len()];
                let mut lp = 0.0;
                for k in 0..ISSUES {
                    let probs = softmax(&logits[k], None);
                    let t = take.take[k] as usize;
                    lp += probs[t].ln();
                    let c = scenario.counts[k];
                    for j in 0..=c {
                        let d = w * (f64::from(u8::from(j as usize == t)) - probs[j as usize]);
                        for (dc, f) in dcoef.iter_mut().zip(ctx.option_features(k, j, c, values[k])) {
                            *dc += d * f;
                        }
                    }
                }
                head.backward(p, &u, &dcoef, grad, Some(du));
                Ok(lp)
            };
            match target {
                Target::Act { act, .. } => {
                    let kind = ActKind::of(act).ok_or_else(|| Error::InvalidAct("walkaway is not a policy act".into()))?;
                    let mask = legal_kinds(&history[..at], me);
                    if !mask[kind as usize] {
                        return Err(Error::InvalidAct(format!("{} is not legal at step {at}", act.kind_name())));
                    }
                    let probs = softmax(&self.net.act.forward(p, &u), Some(&mask));
                    total += w * probs[kind as usize].ln();
                    let dlogits: Vec<f64> = (0..3)
                        .map(|i| if mask[i] { w * (f64::from(u8::from(i == kind as usize)) - probs[i]) } else { 0.0 })
                        .collect();
                    self.net.act.backward(p, &u, &dlogits, grad, Some(&mut du));
                    if let Some(d) = act.proposal() {
                        total += w * share_target(&self.net.proposal, &d, &mut du, grad)?;
                    }
                }
                Target::Output { take } => total += w * share_target(&self.net.output, take, &mut du, grad)?,
            }
            let dpre: Vec<f64> = du.iter().zip(&u).map(|(d, u)| d * (1.0 - u * u)).collect();
            let mut ds = vec![0.0; s.len()];
            self.net.trunk.backward(p, &s, &dpre, grad, Some(&mut ds));
            for (a, b) in de.iter_mut().zip(&ds[..arch.goal]) {
                *a += b;
            }
            for (a, b) in dh[at].iter_mut().zip(&ds[arch.goal..arch.goal + arch.hidden]) {
                *a += b;
            }
        }

        for t in (1..=history.len()).rev() {
            if dh[t].iter().all(|v| *v == 0.0) {
                continue;
            }
            let dprev = self.net.gru.backward(p, &tr.xs[t - 1], &tr.hs[t - 1], &tr.caches[t - 1], &dh[t], grad);
            for (a, b) in dh[t - 1].iter_mut().zip(dprev) {
                *a += b;
            }
        }
        let dpre: Vec<f64> = de.iter().zip(&tr.e).map(|(d, e)| d * (1.0 - e * e)).collect();
        self.net.goal.backward(p, &tr.g, &dpre, grad, None);
        Ok(total)
    }

    /// `sum_i w_i log pi(target_i)` without gradients.
    pub fn log_prob(&self, scenario: &Scenario, me: Role, history: &[DialogueAct], targets: &[Target], weights: &[f64]) -> Result<f64> {
        let mut scratch = vec![0.0; self.params.len()];
        self.accumulate_log_prob(scenario, me, history, targets, weights, &mut scratch)
    }
}
