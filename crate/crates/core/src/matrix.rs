//! The agent matrix: every reward trained against S, then every reward
//! trained against each of those stage-2 agents.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{agent_id, policy_hash, sha256_hex, AgentSpec, Checkpoint, Manifest, Provenance, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::report::{write_jsonl_stamped, Stamp};
use crate::reward::{RewardConfig, RewardSpec};
use crate::selfplay::{train_stage, CurvePoint, TrainerConfig};
use crate::supervised::Example;

pub const SUPERVISED_ID: &str = "S";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixConfig {
    pub rewards: Vec<RewardSpec>,
    /// Shared by every stage; each agent gets `trainer.seed + its index`.
    pub trainer: TrainerConfig,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            rewards: vec![RewardSpec::Preset("fair".into()), RewardSpec::Preset("selfish".into())],
            trainer: TrainerConfig::default(),
        }
    }
}

impl MatrixConfig {
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("configs always serialize"))
    }
}

struct Job<'a> {
    index: usize,
    reward: RewardConfig,
    /// `None` for S.
    partner: Option<&'a (AgentSpec, Policy)>,
}

/// Progress callback: agent id and a training-curve record.
pub type OnLog<'a> = &'a (dyn Fn(&str, &CurvePoint) + Sync);

/// Trains the matrix into `out_dir`, writing checkpoints, curves and
/// `manifest.json`. If a stage fails, the manifest written so far lists the
/// agents that finished and is marked incomplete.
pub fn build_matrix(
    supervised: &Checkpoint,
    out_dir: &Path,
    cfg: &MatrixConfig,
    examples: Option<&[Example]>,
    on_log: OnLog<'_>,
) -> Result<Manifest> {
    let rewards: Vec<RewardConfig> = cfg.rewards.iter().map(RewardSpec::resolve).collect::<Result<_>>()?;
    if rewards.is_empty() {
        return Err(Error::Config("the matrix needs at least one reward".into()));
    }
    let mut labels: Vec<String> = rewards.iter().map(RewardConfig::label).collect();
    labels.sort();
    labels.dedup();
    if labels.len() != rewards.len() || labels.iter().any(|l| l == SUPERVISED_ID) {
        return Err(Error::Config("reward labels must be distinct and differ from S".into()));
    }
    cfg.trainer.validate()?;

    let s_file = format!("checkpoints/{SUPERVISED_ID}.json");
    let s_hash = supervised.save(&out_dir.join(&s_file))?;
    let mut manifest = Manifest {
        version: MANIFEST_VERSION,
        supervised: AgentSpec {
            id: SUPERVISED_ID.into(),
            checkpoint: s_file,
            hash: s_hash.clone(),
            reward: "likelihood".into(),
            partner: "none".into(),
            stage: 1,
            seed: supervised.provenance.seed,
            partner_hash: None,
        },
        agents: Vec::new(),
        complete: false,
        config_hash: Some(cfg.hash()),
    };
    let s = (manifest.supervised.clone(), supervised.policy.clone());
    let manifest_path = out_dir.join(MANIFEST_FILE);

    let stage2: Vec<Job> =
        rewards.iter().enumerate().map(|(index, r)| Job { index, reward: r.clone(), partner: None }).collect();
    let trained2 = run_stage(2, &stage2, &s, out_dir, cfg, examples, on_log);
    let stage2_agents = record(&mut manifest, &manifest_path, trained2)?;

    let stage3: Vec<Job> = rewards
        .iter()
        .flat_map(|r| stage2_agents.iter().map(move |p| (r, p)))
        .enumerate()
        .map(|(k, (r, p))| Job { index: rewards.len() + k, reward: r.clone(), partner: Some(p) })
        .collect();
    let trained3 = run_stage(3, &stage3, &s, out_dir, cfg, examples, on_log);
    record(&mut manifest, &manifest_path, trained3)?;

    manifest.complete = true;
    manifest.save(&manifest_path)?;
    Ok(manifest)
}

/// Appends finished agents to the manifest and saves it; fails after saving
/// if any job failed.
fn record(
    manifest: &mut Manifest,
    path: &Path,
    trained: Vec<Result<(AgentSpec, Policy)>>,
) -> Result<Vec<(AgentSpec, Policy)>> {
    let mut ok = Vec::new();
    let mut first_err = None;
    for t in trained {
        match t {
            Ok(agent) => {
                manifest.agents.push(agent.0.clone());
                ok.push(agent);
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    manifest.save(path)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(ok),
    }
}

fn run_stage(
    stage: u8,
    jobs: &[Job<'_>],
    s: &(AgentSpec, Policy),
    out_dir: &Path,
    cfg: &MatrixConfig,
    examples: Option<&[Example]>,
    on_log: OnLog<'_>,
) -> Vec<Result<(AgentSpec, Policy)>> {
    jobs.par_iter()
        .map(|job| {
            let (partner_spec, partner) = job.partner.unwrap_or(s);
            let partner_label = if job.partner.is_some() { partner_spec.reward.clone() } else { SUPERVISED_ID.into() };
            let reward_label = job.reward.label();
            let id = agent_id(&reward_label, &partner_label);
            let trainer = TrainerConfig { seed: cfg.trainer.seed.wrapping_add(job.index as u64), ..cfg.trainer.clone() };
            let run = train_stage(&s.1, partner, &job.reward, &trainer, examples, |p| on_log(&id, p))?;
            if run.partner_hash_before != run.partner_hash_after {
                return Err(Error::Integrity(format!("{id}: partner changed during training")));
            }
            let provenance = Provenance {
                stage,
                reward: Some(job.reward.clone()),
                partner: Some(partner_label.clone()),
                partner_hash: Some(partner_spec.hash.clone()),
                init_hash: Some(s.0.hash.clone()),
                seed: trainer.seed,
                episodes: trainer.episodes,
                config_hash: Some(cfg.hash()),
            };
            let file = format!("checkpoints/{}.json", file_stem(&id));
            let hash = Checkpoint::new(id.clone(), provenance, run.policy.clone()).save(&out_dir.join(&file))?;
            let curve_path = out_dir.join(format!("curves/{}.jsonl", file_stem(&id)));
            write_jsonl_stamped(&curve_path, "training_curve", &Stamp::new(cfg.hash(), trainer.seed), &run.curve)?;
            let spec = AgentSpec {
                id,
                checkpoint: file,
                hash,
                reward: reward_label,
                partner: partner_label,
                stage,
                seed: trainer.seed,
                partner_hash: Some(partner_spec.hash.clone()),
            };
            spec.validate()?;
            debug_assert_eq!(policy_hash(partner), run.partner_hash_after);
            Ok((spec, run.policy))
        })
        .collect()
}

fn file_stem(id: &str) -> String {
    id.replace('@', "_vs_")
}

/// Loads every agent of a manifest, S first, verifying checkpoint hashes.
pub fn load_agents(manifest_path: &Path) -> Result<(Manifest, Vec<(AgentSpec, Policy)>)> {
    let manifest = Manifest::load(manifest_path)?;
    let agents = manifest
        .all()
        .map(|spec| Manifest::load_agent(manifest_path, spec).map(|ck| (spec.clone(), ck.policy)))
        .collect::<Result<_>>()?;
    Ok((manifest, agents))
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Arch;

    fn s() -> Checkpoint {
        Checkpoint::new("S", Provenance::supervised(3, 0, None), Policy::new(Arch { goal: 4, hidden: 8, trunk: 8 }, 3))
    }

    fn cfg() -> MatrixConfig {
        MatrixConfig { trainer: TrainerConfig { episodes: 30, log_every: 10, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn six_agents_with_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_matrix(&s(), dir.path(), &cfg(), None, &|_, _| {}).unwrap();
        let ids: Vec<&str> = m.agents.iter().map(|a| a.id.as_str()).collect();
        assert_eq!(ids, ["fair@S", "selfish@S", "fair@fair", "fair@selfish", "selfish@fair", "selfish@selfish"]);
        assert!(m.complete);
        for a in &m.agents[2..] {
            let p = m.find(&format!("{}@S", a.partner)).unwrap();
            assert_eq!(a.partner_hash.as_ref(), Some(&p.hash));
        }
        let (loaded, agents) = load_agents(&manifest_path(dir.path())).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(agents.len(), 7);

        let again = tempfile::tempdir().unwrap();
        let m2 = build_matrix(&s(), again.path(), &cfg(), None, &|_, _| {}).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn failure_leaves_partial_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg();
        // interleaving without examples fails inside every stage-2 job
        c.trainer.supervised_every = 1;
        assert!(matches!(build_matrix(&s(), dir.path(), &c, None, &|_, _| {}), Err(Error::Config(_))));
        let m = Manifest::load(&manifest_path(dir.path())).unwrap();
        assert!(!m.complete);
        assert!(m.agents.is_empty());
    }

    #[test]
    fn tampered_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_matrix(&s(), dir.path(), &cfg(), None, &|_, _| {}).unwrap();
        let path = Manifest::checkpoint_path(&manifest_path(dir.path()), &m.agents[0]);
        let mut ck = Checkpoint::load(&path).unwrap();
        ck.policy.params_mut()[0] += 1.0;
        ck.save(&path).unwrap();
        assert!(matches!(load_agents(&manifest_path(dir.path())), Err(Error::Integrity(_))));
    }
}
