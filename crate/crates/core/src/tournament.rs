//! Round-robin evaluation between agents.
//!
//! Every pair plays the same seeded scenario list. By default each scenario
//! is played twice, once with the roles swapped, so neither agent benefits
//! from moving first or from a lucky value vector. Any ending other than an
//! agreement (cutoff, walkaway, mismatched deal entry) counts as a walkaway.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::factorial::ln_binomial;

use crate::bargain::{is_pareto_optimal, sample_scenario_with, PoolStats, Role, Scenario, DEFAULT_CUTOFF};
use crate::checkpoint::sha256_hex;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::selfplay::{play_with_outputs, stream_rng, Agent, Decoding, Game, Script};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TournamentConfig {
    pub scenarios: usize,
    pub both_orders: bool,
    /// Act decoding. Output deals are always the agent's most likely claim.
    pub decoding: Decoding,
    pub cutoff: usize,
    pub seed: u64,
    pub pool: PoolStats,
}

impl Default for TournamentConfig {
    fn default() -> Self {
        TournamentConfig {
            scenarios: 388,
            both_orders: true,
            decoding: Decoding::Sample { temperature: 1.0 },
            cutoff: DEFAULT_CUTOFF,
            seed: 0,
            pool: PoolStats::default(),
        }
    }
}

impl TournamentConfig {
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("configs always serialize"))
    }
}

/// The shared scenario list for a tournament.
pub fn tournament_scenarios(cfg: &TournamentConfig) -> Result<Vec<Scenario>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.scenarios).map(|_| sample_scenario_with(&mut rng, &cfg.pool)).collect()
}

#[derive(Clone, Copy, Debug)]
pub enum Player<'a> {
    Policy(&'a Policy),
    Script(Script),
}

#[derive(Clone, Debug)]
pub struct Entrant<'a> {
    pub id: String,
    pub player: Player<'a>,
}

impl<'a> Entrant<'a> {
    pub fn policy(id: impl Into<String>, policy: &'a Policy) -> Self {
        Entrant { id: id.into(), player: Player::Policy(policy) }
    }

    pub fn script(id: impl Into<String>, script: Script) -> Self {
        Entrant { id: id.into(), player: Player::Script(script) }
    }

    fn agent(&self, decoding: Decoding) -> Agent<'a> {
        match self.player {
            Player::Policy(policy) => Agent::Policy { policy, decoding },
            Player::Script(s) => Agent::Script(s),
        }
    }
}

/// One game of a pair, with the seat agent `a` occupied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEpisode {
    pub scenario_index: usize,
    pub swapped: bool,
    pub a_seat: Role,
    pub game: Game,
}

impl PairEpisode {
    /// Points of the agent in `seat` relative to this pair (`a` when `Role::A`).
    pub fn points_of(&self, agent_a: bool) -> u32 {
        let seat = if agent_a { self.a_seat } else { self.a_seat.other() };
        self.game.outcome.points(seat)
    }

    pub fn joint(&self) -> u32 {
        self.game.outcome.points_a + self.game.outcome.points_b
    }

    pub fn is_walkaway(&self) -> bool {
        !self.game.outcome.is_agreement()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub n: usize,
    pub mean_a: f64,
    pub se_a: Option<f64>,
    pub mean_b: f64,
    pub se_b: Option<f64>,
    pub joint_mean: f64,
    pub walkaway_fraction: f64,
    pub pareto_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub agent_a: String,
    pub agent_b: String,
    pub episodes: Vec<PairEpisode>,
    pub summary: PairSummary,
}

/// Mean and standard error (sample sd over sqrt n); `None` where undefined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: Option<f64>,
    pub se: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat { n, mean: None, se: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = (n > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Stat { n, mean: Some(mean), se }
    }

    /// `mean ± se`, or a marker when the mean is undefined.
    pub fn display(&self) -> String {
        match (self.mean, self.se) {
            (None, _) => "undefined".into(),
            (Some(m), Some(se)) => format!("{m:.2} ± {se:.2}"),
            (Some(m), None) => format!("{m:.2}"),
        }
    }
}

pub fn summarize(episodes: &[PairEpisode]) -> Result<PairSummary> {
    let n = episodes.len();
    if n == 0 {
        return Err(Error::Domain("no episodes to summarize".into()));
    }
    let a: Vec<f64> = episodes.iter().map(|e| e.points_of(true) as f64).collect();
    let b: Vec<f64> = episodes.iter().map(|e| e.points_of(false) as f64).collect();
    let joint: Vec<f64> = episodes.iter().map(|e| e.joint() as f64).collect();
    let mut pareto = 0usize;
    for e in episodes {
        let o = &e.game.outcome;
        if o.is_agreement() && is_pareto_optimal(&e.game.scenario, o.points_a, o.points_b)? {
            pareto += 1;
        }
    }
    let (sa, sb, sj) = (Stat::of(&a), Stat::of(&b), Stat::of(&joint));
    Ok(PairSummary {
        n,
        mean_a: sa.mean.unwrap_or_default(),
        se_a: sa.se,
        mean_b: sb.mean.unwrap_or_default(),
        se_b: sb.se,
        joint_mean: sj.mean.unwrap_or_default(),
        walkaway_fraction: episodes.iter().filter(|e| e.is_walkaway()).count() as f64 / n as f64,
        pareto_fraction: pareto as f64 / n as f64,
    })
}

/// Plays `a` against `b` on every scenario. Each game gets its own seeded
/// stream, so results do not depend on scheduling and every pair faces the
/// same randomness.
pub fn run_pair(a: &Entrant<'_>, b: &Entrant<'_>, scenarios: &[Scenario], cfg: &TournamentConfig) -> Result<PairResult> {
    let orders: &[bool] = if cfg.both_orders { &[false, true] } else { &[false] };
    let jobs: Vec<(usize, bool)> = (0..scenarios.len()).flat_map(|i| orders.iter().map(move |&o| (i, o))).collect();
    let episodes: Vec<PairEpisode> = jobs
        .par_iter()
        .map(|&(i, swapped)| {
            let mut rng = stream_rng(cfg.seed, 2 * i as u64 + u64::from(swapped));
            let (x, y) = (a.agent(cfg.decoding), b.agent(cfg.decoding));
            // Swapping hands `a` the other value vector and the second move.
            let (seats, a_seat) = if swapped { ([y, x], Role::B) } else { ([x, y], Role::A) };
            let (game, _) = play_with_outputs(&scenarios[i], Role::A, seats, [true, true], cfg.cutoff, &mut rng)?;
            Ok(PairEpisode { scenario_index: i, swapped, a_seat, game })
        })
        .collect::<Result<_>>()?;
    let summary = summarize(&episodes)?;
    Ok(PairResult { agent_a: a.id.clone(), agent_b: b.id.clone(), episodes, summary })
}

/// Every unordered pair, self-play included, in row-major order.
pub fn run_grid(entrants: &[Entrant<'_>], cfg: &TournamentConfig) -> Result<Vec<PairResult>> {
    let scenarios = tournament_scenarios(cfg)?;
    let pairs: Vec<(usize, usize)> =
        (0..entrants.len()).flat_map(|i| (i..entrants.len()).map(move |j| (i, j))).collect();
    pairs.iter().map(|&(i, j)| run_pair(&entrants[i], &entrants[j], &scenarios, cfg)).collect()
}

/// Episodes of `agent` in `results`, each with (own points, partner points).
fn perspective<'r>(results: &'r [PairResult], agent: &'r str) -> impl Iterator<Item = (&'r PairEpisode, bool)> + 'r {
    results.iter().flat_map(move |r| {
        let side = if r.agent_a == agent {
            Some(true)
        } else if r.agent_b == agent {
            Some(false)
        } else {
            None
        };
        r.episodes.iter().filter_map(move |e| side.map(|s| (e, s)))
    })
}

/// One agent's row: its points, its partners' points and joint points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub agent: String,
    pub episodes: usize,
    pub partner_points: Stat,
    pub agent_points: Stat,
    pub joint_points: Stat,
    pub walkaway_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub include_walkaways: bool,
    pub rows: Vec<MetricsRow>,
}

/// Per-agent metrics over every pair the agent played. With
/// `include_walkaways == false` only agreements are averaged.
pub fn metrics(results: &[PairResult], include_walkaways: bool) -> Result<MetricsTable> {
    if results.is_empty() {
        return Err(Error::Domain("no pair results".into()));
    }
    let mut agents: Vec<&str> = Vec::new();
    for r in results {
        for id in [&r.agent_a, &r.agent_b] {
            if !agents.contains(&id.as_str()) {
                agents.push(id);
            }
        }
    }
    let rows = agents
        .into_iter()
        .map(|agent| {
            let mut own = Vec::new();
            let mut partner = Vec::new();
            let mut joint = Vec::new();
            let mut n = 0usize;
            let mut walk = 0usize;
            let mut seen = std::collections::HashSet::new();
            for (e, side) in perspective(results, agent) {
                // a self-play pair lists the agent on both sides; count it once
                if !seen.insert(e as *const PairEpisode) {
                    continue;
                }
                n += 1;
                if e.is_walkaway() {
                    walk += 1;
                    if !include_walkaways {
                        continue;
                    }
                }
                own.push(e.points_of(side) as f64);
                partner.push(e.points_of(!side) as f64);
                joint.push(e.joint() as f64);
            }
            MetricsRow {
                agent: agent.to_owned(),
                episodes: n,
                partner_points: Stat::of(&partner),
                agent_points: Stat::of(&own),
                joint_points: Stat::of(&joint),
                walkaway_pct: if n == 0 { 0.0 } else { 100.0 * walk as f64 / n as f64 },
            }
        })
        .collect();
    Ok(MetricsTable { include_walkaways, rows })
}

/// Walkaways and game count of `agent` against each of `opponents`, pooled.
pub fn pooled_walkaways(results: &[PairResult], agent: &str, opponents: &[&str]) -> (usize, usize) {
    let mut walk = 0;
    let mut n = 0;
    for r in results {
        let vs = if r.agent_a == agent {
            &r.agent_b
        } else if r.agent_b == agent {
            &r.agent_a
        } else {
            continue;
        };
        if opponents.contains(&vs.as_str()) {
            n += r.episodes.len();
            walk += r.episodes.iter().filter(|e| e.is_walkaway()).count();
        }
    }
    (walk, n)
}

/// Mean joint points of `agent` against `opponents`, pooled.
pub fn pooled_joint(results: &[PairResult], agent: &str, opponents: &[&str]) -> Option<f64> {
    let joint: Vec<f64> = results
        .iter()
        .filter(|r| {
            (r.agent_a == agent && opponents.contains(&r.agent_b.as_str()))
                || (r.agent_b == agent && opponents.contains(&r.agent_a.as_str()))
        })
        .flat_map(|r| r.episodes.iter().map(|e| e.joint() as f64))
        .collect();
    Stat::of(&joint).mean
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMetric {
    OwnPoints,
    JointPoints,
    WalkawayPct,
}

impl HeatmapMetric {
    pub const ALL: [HeatmapMetric; 3] = [HeatmapMetric::OwnPoints, HeatmapMetric::JointPoints, HeatmapMetric::WalkawayPct];

    pub fn name(self) -> &'static str {
        match self {
            HeatmapMetric::OwnPoints => "own_points",
            HeatmapMetric::JointPoints => "joint_points",
            HeatmapMetric::WalkawayPct => "walkaway_pct",
        }
    }
}

/// `cells[i][j]` is the row agent `i`'s metric when playing column agent `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub metric: HeatmapMetric,
    pub agents: Vec<String>,
    pub cells: Vec<Vec<f64>>,
}

pub fn heatmap(results: &[PairResult], agents: &[String], metric: HeatmapMetric) -> Result<Heatmap> {
    let mut cells = vec![vec![f64::NAN; agents.len()]; agents.len()];
    let mut missing = Vec::new();
    for (i, row) in agents.iter().enumerate() {
        for (j, col) in agents.iter().enumerate() {
            let found = results.iter().find_map(|r| {
                if &r.agent_a == row && &r.agent_b == col {
                    Some((r, true))
                } else if &r.agent_b == row && &r.agent_a == col {
                    Some((r, false))
                } else {
                    None
                }
            });
            let Some((r, side)) = found else {
                if i <= j {
                    missing.push((row.clone(), col.clone()));
                }
                continue;
            };
            let n = r.episodes.len() as f64;
            cells[i][j] = match metric {
                HeatmapMetric::OwnPoints => r.episodes.iter().map(|e| e.points_of(side) as f64).sum::<f64>() / n,
                HeatmapMetric::JointPoints => r.episodes.iter().map(|e| e.joint() as f64).sum::<f64>() / n,
                HeatmapMetric::WalkawayPct => 100.0 * r.episodes.iter().filter(|e| e.is_walkaway()).count() as f64 / n,
            };
        }
    }
    if missing.is_empty() {
        Ok(Heatmap { metric, agents: agents.to_vec(), cells })
    } else {
        Err(Error::IncompleteGrid(missing))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProportionMethod {
    ChiSquareYates,
    FisherExact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProportionTest {
    pub method: ProportionMethod,
    /// Yates-corrected statistic; `None` for the exact test.
    pub statistic: Option<f64>,
    pub p_value: f64,
    /// `k1/n1 - k2/n2`.
    pub difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Minimum group size for [`compare_proportions`].
pub const MIN_GROUP: usize = 20;

fn fisher_exact(k1: u64, n1: u64, k2: u64, n2: u64) -> f64 {
    let k = k1 + k2;
    let n = n1 + n2;
    let ln_p = |x: u64| ln_binomial(n1, x) + ln_binomial(n2, k - x) - ln_binomial(n, k);
    let observed = ln_p(k1);
    let lo = k.saturating_sub(n2);
    let hi = k.min(n1);
    let p: f64 = (lo..=hi).map(ln_p).filter(|&l| l <= observed + 1e-7).map(f64::exp).sum();
    p.min(1.0)
}

/// Two-sample test of `k1/n1` against `k2/n2`: Pearson chi-square on the 2x2
/// table with continuity correction, or Fisher's exact test when a margin is
/// empty. The interval is a percentile bootstrap of the difference.
pub fn compare_proportions(k1: usize, n1: usize, k2: usize, n2: usize, resamples: usize, seed: u64) -> Result<ProportionTest> {
    if n1 < MIN_GROUP || n2 < MIN_GROUP {
        return Err(Error::Precondition(format!("each group needs at least {MIN_GROUP} trials, got {n1} and {n2}")));
    }
    if k1 > n1 || k2 > n2 {
        return Err(Error::Domain("more successes than trials".into()));
    }
    let (a, b, c, d) = (k1 as f64, (n1 - k1) as f64, k2 as f64, (n2 - k2) as f64);
    let n = a + b + c + d;
    let (r1, r2, c1, c2) = (a + b, c + d, a + c, b + d);
    let (method, statistic, p_value) = if c1 == 0.0 || c2 == 0.0 {
        (ProportionMethod::FisherExact, None, fisher_exact(k1 as u64, n1 as u64, k2 as u64, n2 as u64))
    } else {
        let diff = ((a * d - b * c).abs() - n / 2.0).max(0.0);
        let chi2 = n * diff * diff / (r1 * r2 * c1 * c2);
        let dist = ChiSquared::new(1.0).expect("one degree of freedom");
        (ProportionMethod::ChiSquareYates, Some(chi2), 1.0 - dist.cdf(chi2))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g1: Vec<bool> = (0..n1).map(|i| i < k1).collect();
    let g2: Vec<bool> = (0..n2).map(|i| i < k2).collect();
    let rate = |g: &[bool], rng: &mut ChaCha8Rng| {
        (0..g.len()).filter(|_| *g.choose(rng).expect("non-empty group")).count() as f64 / g.len() as f64
    };
    let mut diffs: Vec<f64> = (0..resamples.max(1)).map(|_| rate(&g1, &mut rng) - rate(&g2, &mut rng)).collect();
    diffs.sort_by(f64::total_cmp);
    let q = |p: f64| diffs[((p * (diffs.len() - 1) as f64).round() as usize).min(diffs.len() - 1)];
    Ok(ProportionTest {
        method,
        statistic,
        p_value,
        difference: k1 as f64 / n1 as f64 - k2 as f64 / n2 as f64,
        ci_low: q(0.025),
        ci_high: q(0.975),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bargain::{Division, Outcome, OutcomeKind};

    fn ep(pa: u32, pb: u32, agreed: bool) -> PairEpisode {
        let scenario = Scenario::new([1, 1, 1], [5, 3, 2], [2, 3, 5]);
        PairEpisode {
            scenario_index: 0,
            swapped: false,
            a_seat: Role::A,
            game: Game {
                scenario,
                first: Role::A,
                acts: vec![],
                output_a: None,
                output_b: None,
                outcome: Outcome {
                    kind: if agreed { OutcomeKind::Agreement } else { OutcomeKind::Walkaway },
                    division_a: agreed.then_some(Division::NOTHING),
                    division_b: agreed.then_some(Division::NOTHING),
                    points_a: pa,
                    points_b: pb,
                    needs_review: false,
                },
            },
        }
    }

    fn result(eps: Vec<PairEpisode>) -> PairResult {
        let summary = summarize(&eps).unwrap();
        PairResult { agent_a: "x".into(), agent_b: "y".into(), episodes: eps, summary }
    }

    #[test]
    fn hand_arithmetic() {
        let r = result(vec![ep(8, 0, true), ep(5, 5, true), ep(0, 0, false), ep(7, 3, true)]);
        let incl = metrics(std::slice::from_ref(&r), true).unwrap();
        let x = &incl.rows[0];
        assert_eq!(x.agent_points.mean, Some(5.0));
        assert_eq!(x.joint_points.mean, Some(7.0));
        assert_eq!(x.walkaway_pct, 25.0);
        let excl = metrics(&[r], false).unwrap();
        let x = &excl.rows[0];
        assert!((x.agent_points.mean.unwrap() - 20.0 / 3.0).abs() < 1e-12);
        assert!((x.joint_points.mean.unwrap() - 28.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_walkaways_give_undefined_means() {
        let r = result(vec![ep(0, 0, false), ep(0, 0, false)]);
        let t = metrics(&[r], false).unwrap();
        assert_eq!(t.rows[0].agent_points.mean, None);
        assert_eq!(t.rows[0].agent_points.display(), "undefined");
        assert_eq!(t.rows[0].walkaway_pct, 100.0);
    }

    #[test]
    fn scripted_cutoff_pair() {
        let cfg = TournamentConfig { scenarios: 10, ..Default::default() };
        let g = Entrant::script("greedy", Script::Greedy);
        let grid = run_grid(std::slice::from_ref(&g), &cfg).unwrap();
        assert_eq!(grid[0].summary.walkaway_fraction, 1.0);
        assert_eq!(grid[0].summary.joint_mean, 0.0);
        assert_eq!(grid[0].episodes.len(), 20);
        let h = heatmap(&grid, &["greedy".into()], HeatmapMetric::WalkawayPct).unwrap();
        assert_eq!(h.cells, vec![vec![100.0]]);
    }

    #[test]
    fn missing_cells_are_listed() {
        let r = result(vec![ep(1, 1, true)]);
        let err = heatmap(&[r], &["x".into(), "y".into(), "z".into()], HeatmapMetric::OwnPoints).unwrap_err();
        match err {
            Error::IncompleteGrid(m) => assert_eq!(m.len(), 5),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn proportions() {
        let same = compare_proportions(10, 100, 10, 100, 500, 1).unwrap();
        assert!(same.p_value > 0.99);
        assert!(same.ci_low <= 0.0 && same.ci_high >= 0.0);
        let t = compare_proportions(10, 103, 24, 98, 500, 1).unwrap();
        assert_eq!(t.method, ProportionMethod::ChiSquareYates);
        assert!(t.p_value < 0.05);
        assert!(matches!(compare_proportions(1, 10, 2, 100, 10, 1), Err(Error::Precondition(_))));
        let degenerate = compare_proportions(0, 50, 0, 40, 100, 1).unwrap();
        assert_eq!(degenerate.method, ProportionMethod::FisherExact);
        assert!((degenerate.p_value - 1.0).abs() < 1e-9);
    }
}
