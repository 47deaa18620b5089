//! Inequity-averse rewards.
//!
//! A player's utility is its own points minus a penalty `a` per point the
//! partner is ahead and a penalty `b` per point the player is ahead. Varying
//! `(a, b)` yields the personality presets used to train agents.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bargain::{Outcome, Role};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Penalty per point of disadvantage.
    pub a: f64,
    /// Penalty per point of advantage.
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Personality {
    Selfish,
    DisadvantageAverse,
    Envious,
    Fair,
}

impl Personality {
    pub const ALL: [Personality; 4] =
        [Personality::Selfish, Personality::DisadvantageAverse, Personality::Envious, Personality::Fair];

    pub fn name(self) -> &'static str {
        match self {
            Personality::Selfish => "selfish",
            Personality::DisadvantageAverse => "disadvantage_averse",
            Personality::Envious => "envious",
            Personality::Fair => "fair",
        }
    }

    pub fn config(self) -> RewardConfig {
        let (a, b) = match self {
            Personality::Selfish => (0.0, 0.0),
            Personality::DisadvantageAverse => (1.0, 0.0),
            Personality::Envious => (0.0, -1.0),
            Personality::Fair => (0.75, 0.75),
        };
        RewardConfig { a, b, name: Some(self.name().to_owned()) }
    }
}

impl FromStr for Personality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Personality::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_owned()))
    }
}

impl fmt::Display for Personality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Looks up a personality preset by name.
pub fn preset(name: &str) -> Result<RewardConfig> {
    name.parse::<Personality>().map(Personality::config)
}

impl RewardConfig {
    pub fn new(a: f64, b: f64) -> Self {
        RewardConfig { a, b, name: None }
    }

    /// Whether the coefficients break the `b <= a, 0 <= b < 1` constraint of the
    /// original utility model. Such configs are allowed (the envious preset is one).
    pub fn outside_fs_constraint(&self) -> bool {
        !(self.b <= self.a && 0.0 <= self.b && self.b < 1.0)
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("a={},b={}", self.a, self.b))
    }
}

/// `x_i - a*max(0, x_j - x_i) - b*max(0, x_i - x_j)`.
pub fn fehr_schmidt_utility(own: f64, partner: f64, cfg: &RewardConfig) -> f64 {
    own - cfg.a * (partner - own).max(0.0) - cfg.b * (own - partner).max(0.0)
}

/// Reward for `role` at the end of a dialogue; anything but an agreement is worth 0.
pub fn reward_for_outcome(outcome: &Outcome, role: Role, cfg: &RewardConfig) -> f64 {
    if !outcome.is_agreement() {
        return 0.0;
    }
    let own = outcome.points(role) as f64;
    let partner = outcome.points(role.other()) as f64;
    fehr_schmidt_utility(own, partner, cfg)
}

/// Either a preset name or explicit coefficients, as written in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RewardSpec {
    Preset(String),
    Explicit {
        a: f64,
        b: f64,
        #[serde(default)]
        name: Option<String>,
    },
}

impl RewardSpec {
    pub fn resolve(&self) -> Result<RewardConfig> {
        match self {
            RewardSpec::Preset(name) => preset(name),
            RewardSpec::Explicit { a, b, name } => Ok(RewardConfig { a: *a, b: *b, name: name.clone() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bargain::{Division, OutcomeKind};

    fn agreement(pa: u32, pb: u32) -> Outcome {
        Outcome {
            kind: OutcomeKind::Agreement,
            division_a: Some(Division::NOTHING),
            division_b: Some(Division::NOTHING),
            points_a: pa,
            points_b: pb,
            needs_review: false,
        }
    }

    #[test]
    fn utility_examples() {
        assert_eq!(fehr_schmidt_utility(8.0, 0.0, &preset("selfish").unwrap()), 8.0);
        assert_eq!(fehr_schmidt_utility(8.0, 0.0, &RewardConfig::new(0.75, 0.75)), 2.0);
        for (a, b) in [(0.0, 0.0), (1.0, 0.0), (0.3, -2.0), (0.75, 0.75)] {
            assert_eq!(fehr_schmidt_utility(5.0, 5.0, &RewardConfig::new(a, b)), 5.0);
        }
        assert_eq!(fehr_schmidt_utility(7.0, 3.0, &preset("envious").unwrap()), 11.0);
    }

    #[test]
    fn presets() {
        let p = |n| {
            let c = preset(n).unwrap();
            (c.a, c.b)
        };
        assert_eq!(p("selfish"), (0.0, 0.0));
        assert_eq!(p("disadvantage_averse"), (1.0, 0.0));
        assert_eq!(p("envious"), (0.0, -1.0));
        assert_eq!(p("fair"), (0.75, 0.75));
        assert!(matches!(preset("greedy"), Err(Error::UnknownPreset(_))));
        assert!(preset("envious").unwrap().outside_fs_constraint());
        assert!(!preset("fair").unwrap().outside_fs_constraint());
        assert!(!preset("selfish").unwrap().outside_fs_constraint());
    }

    #[test]
    fn outcome_rewards() {
        let cutoff = Outcome {
            kind: OutcomeKind::Cutoff,
            division_a: None,
            division_b: None,
            points_a: 0,
            points_b: 0,
            needs_review: false,
        };
        assert_eq!(reward_for_outcome(&cutoff, Role::A, &preset("fair").unwrap()), 0.0);
        assert_eq!(reward_for_outcome(&agreement(8, 0), Role::A, &preset("selfish").unwrap()), 8.0);
        assert_eq!(reward_for_outcome(&agreement(8, 0), Role::B, &preset("fair").unwrap()), -6.0);
    }

    #[test]
    fn reward_spec_forms() {
        let s: RewardSpec = serde_json::from_str("\"fair\"").unwrap();
        assert_eq!(s.resolve().unwrap().a, 0.75);
        let s: RewardSpec = serde_json::from_str(r#"{"a": 0.5, "b": 0.25}"#).unwrap();
        assert_eq!(s.resolve().unwrap(), RewardConfig::new(0.5, 0.25));
    }
}
