//! The run configuration: one TOML file shared by every command, with
//! command-line overrides for the seed and output directory.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use haggle_arena::ArenaConfig;
use haggle_core::checkpoint::sha256_hex;
use haggle_core::matrix::MatrixConfig;
use haggle_core::reward::RewardSpec;
use haggle_core::supervised::SupervisedConfig;
use haggle_core::tournament::TournamentConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Corpus file or directory.
    pub corpus: Option<PathBuf>,
    /// Supervised checkpoint; defaults to `<out>/checkpoints/S.json`.
    pub supervised: Option<PathBuf>,
    /// Defaults to `<out>/manifest.json`.
    pub manifest: Option<PathBuf>,
    /// Tournament results read by `report`; defaults to `<out>/tournament`.
    pub tournament: Option<PathBuf>,
    /// Arena session store; defaults to `<out>/arena`.
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub dialogues: usize,
    pub chitchat_rate: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings { dialogues: 5808, chitchat_rate: 0.15 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TournamentSettings {
    /// Add S to the grid of trained agents.
    pub include_supervised: bool,
    #[serde(flatten)]
    pub config: TournamentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeSettings {
    pub bind: String,
    pub include_supervised: bool,
    #[serde(flatten)]
    pub arena: ArenaConfig,
}

impl Default for ServeSettings {
    fn default() -> Self {
        ServeSettings { bind: "127.0.0.1:8080".into(), include_supervised: false, arena: ArenaConfig::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces every stage seed.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub synth: SynthSettings,
    pub supervised: SupervisedConfig,
    pub matrix: MatrixConfig,
    pub tournament: TournamentSettings,
    pub serve: ServeSettings,
}

/// Which inputs a command needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Need {
    Corpus,
    Supervised,
    Manifest,
    Tournament,
    Nothing,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, Vec<String>> {
        let text = std::fs::read_to_string(path).map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
        toml::from_str(&text).map_err(|e| vec![format!("{}: {e}", path.display())])
    }

    /// Applies `--seed` and `--out`, then pushes the master seed into every stage.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> RunConfig {
        if seed.is_some() {
            self.seed = seed;
        }
        if out.is_some() {
            self.paths.out = out;
        }
        if let Some(s) = self.seed {
            self.supervised.seed = s;
            self.matrix.trainer.seed = s;
            self.tournament.config.seed = s;
            self.serve.arena.seed = s;
        }
        self
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("configs always serialize"))
    }

    pub fn out(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn supervised_path(&self) -> PathBuf {
        self.paths.supervised.clone().unwrap_or_else(|| self.out().join("checkpoints/S.json"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths.manifest.clone().unwrap_or_else(|| self.out().join("manifest.json"))
    }

    pub fn tournament_dir(&self) -> PathBuf {
        self.paths.tournament.clone().unwrap_or_else(|| self.out().join("tournament"))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.paths.data_dir.clone().unwrap_or_else(|| self.out().join("arena"))
    }

    /// Every problem with the configuration for a command needing `needs`.
    pub fn validate(&self, needs: &[Need]) -> Vec<String> {
        let mut errs = Vec::new();
        for need in needs {
            match need {
                Need::Corpus => match &self.paths.corpus {
                    None => errs.push("paths.corpus is required".into()),
                    Some(p) if !p.exists() => errs.push(format!("paths.corpus {} does not exist", p.display())),
                    _ => {}
                },
                Need::Supervised => exists(&mut errs, "supervised checkpoint", &self.supervised_path()),
                Need::Manifest => exists(&mut errs, "manifest", &self.manifest_path()),
                Need::Tournament => exists(&mut errs, "tournament directory", &self.tournament_dir()),
                Need::Nothing => {}
            }
        }
        if self.synth.dialogues == 0 {
            errs.push("synth.dialogues must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.synth.chitchat_rate) {
            errs.push("synth.chitchat_rate must lie in [0, 1]".into());
        }
        let sup = &self.supervised;
        if sup.epochs == 0 || sup.batch_size == 0 {
            errs.push("supervised.epochs and supervised.batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&sup.validation_fraction) {
            errs.push("supervised.validation_fraction must lie in [0, 1)".into());
        }
        if sup.learning_rate <= 0.0 || sup.anneal_factor < 1.0 {
            errs.push("supervised.learning_rate must be positive and anneal_factor at least 1".into());
        }
        if let Err(e) = self.matrix.trainer.validate() {
            errs.push(format!("matrix.trainer: {e}"));
        }
        if self.matrix.rewards.is_empty() {
            errs.push("matrix.rewards must not be empty".into());
        }
        for r in &self.matrix.rewards {
            if let Err(e) = RewardSpec::resolve(r) {
                errs.push(format!("matrix.rewards: {e}"));
            }
        }
        if self.tournament.config.scenarios == 0 {
            errs.push("tournament.scenarios must be positive".into());
        }
        if self.serve.arena.temperature <= 0.0 {
            errs.push("serve.temperature must be positive".into());
        }
        if self.serve.bind.parse::<SocketAddr>().is_err() {
            errs.push(format!("serve.bind `{}` is not a socket address", self.serve.bind));
        }
        errs
    }
}

fn exists(errs: &mut Vec<String>, what: &str, p: &Path) {
    if !p.exists() {
        errs.push(format!("{what} {} does not exist", p.display()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_problem_is_listed() {
        let mut c = RunConfig::default();
        c.supervised.epochs = 0;
        c.serve.bind = "nowhere".into();
        c.serve.arena.temperature = 0.0;
        let errs = c.validate(&[Need::Corpus]);
        assert_eq!(errs.len(), 4, "{errs:?}");
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let c = RunConfig::default().with_overrides(Some(7), Some("x".into()));
        assert_eq!(
            (c.supervised.seed, c.matrix.trainer.seed, c.tournament.config.seed, c.serve.arena.seed),
            (7, 7, 7, 7)
        );
        assert_eq!(c.manifest_path(), PathBuf::from("x/manifest.json"));
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let text = "seed = 3\n[supervised]\nepochs = 2\n[tournament]\nscenarios = 10\ninclude_supervised = true\n";
        let c: RunConfig = toml::from_str(text).unwrap();
        assert_eq!((c.seed, c.supervised.epochs, c.tournament.config.scenarios), (Some(3), 2, 10));
        assert!(c.tournament.include_supervised);
        assert!(toml::from_str::<RunConfig>("[supervised]\nepochz = 2\n").is_err());
    }
}
