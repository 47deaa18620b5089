//! Versioned JSON checkpoints and the agent manifest.
//!
//! A checkpoint file holds exactly its canonical bytes, so the SHA-256 of the
//! file on disk is the checkpoint hash recorded in manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::reward::RewardConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the parameter vector alone; used to prove a partner stayed frozen.
pub fn policy_hash(policy: &Policy) -> String {
    let mut h = Sha256::new();
    for p in policy.params() {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// 1 = supervised, 2 = trained against S, 3 = trained against a stage-2 agent.
    pub stage: u8,
    pub reward: Option<RewardConfig>,
    /// `S` or the reward label of the stage-2 partner.
    pub partner: Option<String>,
    pub partner_hash: Option<String>,
    pub init_hash: Option<String>,
    pub seed: u64,
    pub episodes: usize,
    /// Hash of the configuration that produced the checkpoint.
    pub config_hash: Option<String>,
}

impl Provenance {
    /// Provenance of a supervised policy trained on `examples` examples.
    pub fn supervised(seed: u64, examples: usize, config_hash: Option<String>) -> Self {
        Provenance {
            stage: 1,
            reward: None,
            partner: None,
            partner_hash: None,
            init_hash: None,
            seed,
            episodes: examples,
            config_hash,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub name: String,
    pub provenance: Provenance,
    pub policy: Policy,
}

impl Checkpoint {
    pub fn new(name: impl Into<String>, provenance: Provenance, policy: Policy) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, name: name.into(), provenance, policy }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("checkpoints always serialize")
    }

    pub fn hash(&self) -> String {
        sha256_hex(&self.canonical_bytes())
    }

    /// Writes the canonical bytes atomically; returns the hash.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.canonical_bytes();
        write_atomic(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let ck: Checkpoint = serde_json::from_slice(bytes).map_err(|e| Error::Integrity(format!("corrupt checkpoint: {e}")))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Integrity(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }

    /// Loads and checks the file hash against `expected`.
    pub fn load_verified(path: &Path, expected: &str) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let actual = sha256_hex(&bytes);
        if actual != expected {
            return Err(Error::Integrity(format!("{}: hash {actual} does not match manifest {expected}", path.display())));
        }
        Self::from_bytes(&bytes)
    }
}

/// Writes through a temporary file and a rename, creating parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// A trained agent as listed in a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    /// Path relative to the manifest's directory.
    pub checkpoint: String,
    pub hash: String,
    pub reward: String,
    pub partner: String,
    pub stage: u8,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner_hash: Option<String>,
}

impl AgentSpec {
    /// Stage 1 has no partner, stage 2 trains against `S`, stage 3 against a stage-2 agent.
    pub fn validate(&self) -> Result<()> {
        let ok = match self.stage {
            1 => true,
            2 => self.partner == "S",
            3 => self.partner != "S",
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Integrity(format!("agent {}: stage {} with partner {}", self.id, self.stage, self.partner)))
        }
    }

    pub fn display_name(&self) -> String {
        format!("M[r={}, p={}]", self.reward, self.partner)
    }
}

/// Agent id for reward `r` trained against partner `p`.
pub fn agent_id(reward: &str, partner: &str) -> String {
    format!("{reward}@{partner}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub supervised: AgentSpec,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("corrupt manifest: {e}")))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Integrity(format!("unsupported manifest version {}", m.version)));
        }
        for a in m.agents.iter().chain([&m.supervised]) {
            a.validate()?;
        }
        Ok(m)
    }

    /// The supervised agent followed by the trained ones.
    pub fn all(&self) -> impl Iterator<Item = &AgentSpec> {
        std::iter::once(&self.supervised).chain(&self.agents)
    }

    pub fn find(&self, id: &str) -> Option<&AgentSpec> {
        self.all().find(|a| a.id == id)
    }

    pub fn checkpoint_path(manifest_path: &Path, spec: &AgentSpec) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&spec.checkpoint)
    }

    /// Loads an agent's checkpoint, failing on any hash mismatch.
    pub fn load_agent(manifest_path: &Path, spec: &AgentSpec) -> Result<Checkpoint> {
        Checkpoint::load_verified(&Self::checkpoint_path(manifest_path, spec), &spec.hash)
    }
}
