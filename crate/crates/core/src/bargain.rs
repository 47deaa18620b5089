//! The bargaining environment.
//!
//! Two players split a fixed pool of books, hats and balls. Each player has a
//! private integer value per item kind such that taking everything is worth
//! exactly [`MAX_POINTS`]. Players exchange structured acts until one of them
//! selects a deal (both then state the division they believe was agreed), a
//! human walks away, or the dialogue reaches the utterance cutoff. Anything
//! other than two exactly complementary divisions scores zero for both.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ISSUES: usize = 3;
pub const ITEM_NAMES: [&str; ISSUES] = ["book", "hat", "ball"];
pub const MAX_POINTS: u32 = 10;
/// Default utterance cutoff.
pub const DEFAULT_CUTOFF: usize = 20;

pub type Counts = [u32; ISSUES];
pub type Values = [u32; ISSUES];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    A,
    B,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::A => Role::B,
            Role::B => Role::A,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::A => "A",
            Role::B => "B",
        })
    }
}

/// Item counts plus each side's private values.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub counts: Counts,
    pub values_a: Values,
    pub values_b: Values,
}

impl Scenario {
    /// Builds a scenario with a content-derived id. Does not validate.
    pub fn new(counts: Counts, values_a: Values, values_b: Values) -> Self {
        Scenario { id: scenario_id(&counts, &values_a, &values_b), counts, values_a, values_b }
    }

    pub fn values(&self, role: Role) -> &Values {
        match role {
            Role::A => &self.values_a,
            Role::B => &self.values_b,
        }
    }

    pub fn total_items(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// The same scenario seen with the roles exchanged.
    pub fn swapped(&self) -> Scenario {
        Scenario::new(self.counts, self.values_b, self.values_a)
    }
}

fn scenario_id(counts: &Counts, a: &Values, b: &Values) -> String {
    let join = |v: &[u32; ISSUES]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(".");
    format!("{}|{}|{}", join(counts), join(a), join(b))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScenarioViolation {
    NoItems,
    PointsNotTen { role: Role, total: u32 },
}

impl fmt::Display for ScenarioViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioViolation::NoItems => f.write_str("scenario has no items"),
            ScenarioViolation::PointsNotTen { role, total } => {
                write!(f, "player {role} can reach {total} points, expected {MAX_POINTS}")
            }
        }
    }
}

/// Returns every invariant violation of `s`; an empty list means the scenario is valid.
/// Negative entries cannot be represented, the corpus reader rejects them.
pub fn validate_scenario(s: &Scenario) -> Vec<ScenarioViolation> {
    let mut out = Vec::new();
    if s.counts.iter().all(|&c| c == 0) {
        out.push(ScenarioViolation::NoItems);
    }
    for role in [Role::A, Role::B] {
        let total = dot(&s.counts, s.values(role));
        if total != MAX_POINTS {
            out.push(ScenarioViolation::PointsNotTen { role, total });
        }
    }
    out
}

fn dot(a: &[u32; ISSUES], b: &[u32; ISSUES]) -> u32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Items one side claims for itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Division {
    pub take: [u32; ISSUES],
}

impl Division {
    pub const NOTHING: Division = Division { take: [0; ISSUES] };

    pub fn new(take: [u32; ISSUES]) -> Self {
        Division { take }
    }

    pub fn fits(&self, counts: &Counts) -> bool {
        self.take.iter().zip(counts).all(|(t, c)| t <= c)
    }

    /// Checks the division against `counts`, naming every offending issue.
    pub fn check(&self, counts: &Counts) -> Result<()> {
        let bad: Vec<String> = (0..ISSUES)
            .filter(|&k| self.take[k] > counts[k])
            .map(|k| format!("{}: {} > {}", ITEM_NAMES[k], self.take[k], counts[k]))
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidDivision(bad.join(", ")))
        }
    }

    /// What the other side receives. Requires `self.fits(counts)`.
    pub fn complement(&self, counts: &Counts) -> Division {
        Division { take: std::array::from_fn(|k| counts[k] - self.take[k]) }
    }

    pub fn is_complement_of(&self, other: &Division, counts: &Counts) -> bool {
        (0..ISSUES).all(|k| self.take[k] + other.take[k] == counts[k])
    }
}

/// Points a side earns for the items in `division`.
pub fn score(division: &Division, values: &Values) -> u32 {
    dot(&division.take, values)
}

/// Every division of `counts` in lexicographic order.
pub fn all_divisions(counts: &Counts) -> Vec<Division> {
    let mut out = Vec::with_capacity(counts.iter().map(|c| *c as usize + 1).product());
    for a in 0..=counts[0] {
        for b in 0..=counts[1] {
            for c in 0..=counts[2] {
                out.push(Division::new([a, b, c]));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Act {
    Propose { take: [u32; ISSUES] },
    Accept,
    Select,
    Walkaway,
}

impl Act {
    pub fn propose(division: Division) -> Act {
        Act::Propose { take: division.take }
    }

    pub fn proposal(&self) -> Option<Division> {
        match self {
            Act::Propose { take } => Some(Division::new(*take)),
            _ => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Act::Propose { .. } => "propose",
            Act::Accept => "accept",
            Act::Select => "select",
            Act::Walkaway => "walkaway",
        }
    }
}

/// A structured utterance. Proposals name the speaker's own share.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogueAct {
    pub speaker: Role,
    #[serde(flatten)]
    pub act: Act,
}

impl DialogueAct {
    pub fn new(speaker: Role, act: Act) -> Self {
        DialogueAct { speaker, act }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    Selected { by: Role },
    Walkaway { by: Role },
    Cutoff,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    pub scenario: Scenario,
    pub history: Vec<DialogueAct>,
    pub turn: Role,
    pub cutoff: usize,
    pub termination: Option<Termination>,
}

impl DialogueState {
    pub fn new(scenario: Scenario, first: Role, cutoff: usize) -> Result<Self> {
        if cutoff < 2 {
            return Err(Error::Contract(format!("cutoff must be at least 2, got {cutoff}")));
        }
        Ok(DialogueState { scenario, history: Vec::new(), turn: first, cutoff, termination: None })
    }

    pub fn utterance_count(&self) -> usize {
        self.history.len()
    }

    pub fn is_terminal(&self) -> bool {
        self.termination.is_some()
    }

    /// The most recent proposal and who made it.
    pub fn last_proposal(&self) -> Option<(Role, Division)> {
        self.history.iter().rev().find_map(|a| a.act.proposal().map(|d| (a.speaker, d)))
    }

    /// The proposal `role` may accept right now: the latest proposal, when made by the other side.
    pub fn standing_offer_for(&self, role: Role) -> Option<Division> {
        match self.last_proposal() {
            Some((speaker, d)) if speaker != role => Some(d),
            _ => None,
        }
    }

    /// The proposal that was accepted, if the latest acceptance still stands.
    pub fn accepted_proposal(&self) -> Option<(Role, Division)> {
        let idx = self.history.iter().rposition(|a| a.act == Act::Accept)?;
        if self.history[idx + 1..].iter().any(|a| a.act.proposal().is_some()) {
            return None;
        }
        self.history[..idx].iter().rev().find_map(|a| a.act.proposal().map(|d| (a.speaker, d)))
    }

    pub fn last_act(&self) -> Option<&DialogueAct> {
        self.history.last()
    }

    /// Returns the state after `act`; `self` is left untouched.
    pub fn apply_act(&self, act: DialogueAct) -> Result<DialogueState> {
        let mut next = self.clone();
        next.push(act)?;
        Ok(next)
    }

    /// In-place form of [`apply_act`](Self::apply_act).
    pub fn push(&mut self, act: DialogueAct) -> Result<()> {
        if let Some(t) = &self.termination {
            return Err(Error::IllegalTransition(format!("dialogue already ended ({t:?})")));
        }
        if act.speaker != self.turn {
            return Err(Error::IllegalTransition(format!(
                "it is {}'s turn, not {}'s",
                self.turn, act.speaker
            )));
        }
        match act.act {
            Act::Propose { take } => Division::new(take)
                .check(&self.scenario.counts)
                .map_err(|e| Error::InvalidAct(e.to_string()))?,
            Act::Accept => {
                if self.standing_offer_for(act.speaker).is_none() {
                    return Err(Error::InvalidAct("nothing on the table to accept".into()));
                }
            }
            Act::Select | Act::Walkaway => {}
        }
        self.history.push(act);
        self.turn = self.turn.other();
        self.termination = match act.act {
            Act::Select => Some(Termination::Selected { by: act.speaker }),
            Act::Walkaway => Some(Termination::Walkaway { by: act.speaker }),
            _ if self.history.len() >= self.cutoff => Some(Termination::Cutoff),
            _ => None,
        };
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Agreement,
    Walkaway,
    Cutoff,
    Mismatch,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub kind: OutcomeKind,
    pub division_a: Option<Division>,
    pub division_b: Option<Division>,
    pub points_a: u32,
    pub points_b: u32,
    /// Set on mismatched deal entries so an operator can audit them.
    pub needs_review: bool,
}

impl Outcome {
    pub fn is_agreement(&self) -> bool {
        self.kind == OutcomeKind::Agreement
    }

    pub fn points(&self, role: Role) -> u32 {
        match role {
            Role::A => self.points_a,
            Role::B => self.points_b,
        }
    }

    fn void(kind: OutcomeKind, a: Option<Division>, b: Option<Division>) -> Self {
        Outcome {
            kind,
            division_a: a,
            division_b: b,
            points_a: 0,
            points_b: 0,
            needs_review: kind == OutcomeKind::Mismatch,
        }
    }
}

/// Reconciles a finished dialogue with the divisions each side claims.
///
/// Outputs are only consulted when the dialogue ended by selection; both are
/// required then.
pub fn resolve_outcome(
    state: &DialogueState,
    output_a: Option<&Division>,
    output_b: Option<&Division>,
) -> Result<Outcome> {
    let counts = &state.scenario.counts;
    for d in [output_a, output_b].into_iter().flatten() {
        d.check(counts)?;
    }
    match state.termination {
        None => Err(Error::IllegalTransition("dialogue has not ended".into())),
        Some(Termination::Cutoff) => Ok(Outcome::void(OutcomeKind::Cutoff, None, None)),
        Some(Termination::Walkaway { .. }) => Ok(Outcome::void(OutcomeKind::Walkaway, None, None)),
        Some(Termination::Selected { .. }) => {
            let (Some(a), Some(b)) = (output_a, output_b) else {
                return Err(Error::Contract("selection requires both output divisions".into()));
            };
            if a.is_complement_of(b, counts) {
                Ok(Outcome {
                    kind: OutcomeKind::Agreement,
                    division_a: Some(*a),
                    division_b: Some(*b),
                    points_a: score(a, &state.scenario.values_a),
                    points_b: score(b, &state.scenario.values_b),
                    needs_review: false,
                })
            } else {
                Ok(Outcome::void(OutcomeKind::Mismatch, Some(*a), Some(*b)))
            }
        }
    }
}

/// A non-dominated point pair with every division (A's share) that reaches it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub points_a: u32,
    pub points_b: u32,
    pub witnesses: Vec<Division>,
}

pub const FRONTIER_MAX_ITEMS: u32 = 20;

/// Pareto frontier of all complementary divisions, ordered by descending `points_a`.
pub fn pareto_frontier(s: &Scenario) -> Result<Vec<FrontierPoint>> {
    if s.total_items() > FRONTIER_MAX_ITEMS {
        return Err(Error::Precondition(format!(
            "{} items exceed the enumeration limit of {FRONTIER_MAX_ITEMS}",
            s.total_items()
        )));
    }
    let mut by_points: BTreeMap<(u32, u32), Vec<Division>> = BTreeMap::new();
    for d in all_divisions(&s.counts) {
        let pa = score(&d, &s.values_a);
        let pb = score(&d.complement(&s.counts), &s.values_b);
        by_points.entry((pa, pb)).or_default().push(d);
    }
    // Sweep from the highest points_a down; a pair survives if its points_b beats
    // everything seen with a larger-or-equal points_a.
    let mut out = Vec::new();
    let mut best_b: Option<u32> = None;
    let mut iter = by_points.into_iter().rev().peekable();
    while let Some(((pa, pb), witnesses)) = iter.next() {
        // same points_a with lower points_b follow this entry; skip them
        while iter.peek().is_some_and(|((a, _), _)| *a == pa) {
            iter.next();
        }
        if best_b.is_none_or(|b| pb > b) {
            best_b = Some(pb);
            out.push(FrontierPoint { points_a: pa, points_b: pb, witnesses });
        }
    }
    Ok(out)
}

/// True when no division improves one side without hurting the other.
pub fn is_pareto_optimal(s: &Scenario, points_a: u32, points_b: u32) -> Result<bool> {
    Ok(pareto_frontier(s)?.iter().any(|p| p.points_a == points_a && p.points_b == points_b))
}

/// Constraints the scenario sampler draws under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    /// Relative frequency of each total item count.
    pub total_items: BTreeMap<u32, f64>,
    pub min_count: u32,
    pub max_count: u32,
}

impl Default for PoolStats {
    fn default() -> Self {
        PoolStats {
            total_items: [(5, 1.0), (6, 1.0), (7, 1.0)].into_iter().collect(),
            min_count: 1,
            max_count: 5,
        }
    }
}

impl PoolStats {
    /// Empirical constraints from a set of observed scenarios.
    pub fn from_scenarios<'a>(scenarios: impl IntoIterator<Item = &'a Scenario>) -> Result<Self> {
        let mut hist: BTreeMap<u32, f64> = BTreeMap::new();
        let (mut lo, mut hi) = (u32::MAX, 0);
        let mut n = 0usize;
        for s in scenarios {
            *hist.entry(s.total_items()).or_default() += 1.0;
            for &c in &s.counts {
                lo = lo.min(c);
                hi = hi.max(c);
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Domain("no scenarios to derive pool statistics from".into()));
        }
        for v in hist.values_mut() {
            *v /= n as f64;
        }
        Ok(PoolStats { total_items: hist, min_count: lo, max_count: hi })
    }
}

const SAMPLER_RETRIES: usize = 1000;

/// Draws a valid scenario; identical seeds give identical scenarios.
pub fn sample_scenario(seed: u64, pool: &PoolStats) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_scenario_with(&mut rng, pool)
}

pub fn sample_scenario_with<R: Rng + ?Sized>(rng: &mut R, pool: &PoolStats) -> Result<Scenario> {
    let weight_sum: f64 = pool.total_items.values().sum();
    if pool.total_items.is_empty() || weight_sum <= 0.0 {
        return Err(Error::Sampling("empty total-item distribution".into()));
    }
    for _ in 0..SAMPLER_RETRIES {
        let mut u = rng.gen::<f64>() * weight_sum;
        let mut total = *pool.total_items.keys().next_back().unwrap();
        for (&t, &w) in &pool.total_items {
            if u < w {
                total = t;
                break;
            }
            u -= w;
        }
        // Redraw the total only when it admits no counts at all; rejections
        // below stay within it so the total distribution is not skewed.
        let compositions = compositions(total, pool.min_count, pool.max_count);
        if compositions.is_empty() {
            continue;
        }
        for _ in 0..SAMPLER_RETRIES {
            let counts = compositions[rng.gen_range(0..compositions.len())];
            let value_options = value_vectors(&counts);
            if value_options.is_empty() {
                continue;
            }
            let va = value_options[rng.gen_range(0..value_options.len())];
            let vb = value_options[rng.gen_range(0..value_options.len())];
            let all_valued = (0..ISSUES).all(|k| counts[k] == 0 || va[k] > 0 || vb[k] > 0);
            if all_valued {
                return Ok(Scenario::new(counts, va, vb));
            }
        }
        break;
    }
    Err(Error::Sampling(format!("no valid scenario after {SAMPLER_RETRIES} attempts")))
}

fn compositions(total: u32, lo: u32, hi: u32) -> Vec<Counts> {
    let mut out = Vec::new();
    for a in lo..=hi {
        for b in lo..=hi {
            if a + b > total {
                continue;
            }
            let c = total - a - b;
            if (lo..=hi).contains(&c) {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// All value vectors worth exactly [`MAX_POINTS`] for `counts`.
pub fn value_vectors(counts: &Counts) -> Vec<Values> {
    let cap = |k: usize| MAX_POINTS.checked_div(counts[k]).unwrap_or(0);
    let mut out = Vec::new();
    for a in 0..=cap(0) {
        for b in 0..=cap(1) {
            let used = a * counts[0] + b * counts[1];
            if used > MAX_POINTS {
                continue;
            }
            let rest = MAX_POINTS - used;
            if counts[2] == 0 {
                if rest == 0 {
                    out.push([a, b, 0]);
                }
            } else if rest % counts[2] == 0 {
                out.push([a, b, rest / counts[2]]);
            }
        }
    }
    out
}
