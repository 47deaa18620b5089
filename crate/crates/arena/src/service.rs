//! Shared server state: loaded agents and the live sessions.
//!
//! Each session sits behind its own mutex, so requests for one session are
//! applied one at a time while different sessions proceed in parallel.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use haggle_core::bargain::{sample_scenario_with, PoolStats, Role, DEFAULT_CUTOFF, ISSUES};
use haggle_core::checkpoint::{sha256_hex, AgentSpec};
use haggle_core::matrix::{load_agents, SUPERVISED_ID};
use haggle_core::policy::Policy;
use haggle_core::selfplay::stream_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::error::ArenaError;
use crate::session::{AgentPlay, Session, SessionStatus, SurveyResponse, TurnInput, TurnResult};
use crate::store::{EventRecord, Store};
use crate::view::{AgentInfo, OutcomeResponse, OutcomeView, SessionView, StreamEvent, TranscriptRecord, TurnResponse};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArenaConfig {
    /// Sampling temperature for the agent's acts.
    pub temperature: f64,
    pub cutoff: usize,
    pub seed: u64,
    /// Show the agent's deal entry to the person before they submit theirs.
    pub reveal_agent_deal: bool,
    pub pool: PoolStats,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        ArenaConfig { temperature: 0.5, cutoff: DEFAULT_CUTOFF, seed: 0, reveal_agent_deal: false, pool: PoolStats::default() }
    }
}

pub struct LoadedAgent {
    pub spec: AgentSpec,
    pub policy: Policy,
}

impl LoadedAgent {
    fn info(&self) -> AgentInfo {
        AgentInfo {
            id: self.spec.id.clone(),
            reward: self.spec.reward.clone(),
            partner: self.spec.partner.clone(),
            stage: self.spec.stage,
            hash: self.spec.hash.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSession {
    /// An agent id, or `None`/`"random"` for a uniform draw.
    #[serde(default)]
    pub agent: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub struct Arena {
    cfg: ArenaConfig,
    agents: Vec<LoadedAgent>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    streams: Mutex<HashMap<String, broadcast::Sender<StreamEvent>>>,
    store: Store,
    counter: AtomicU64,
}

impl Arena {
    /// Opens the data directory and reloads any sessions stored there.
    pub fn new(cfg: ArenaConfig, agents: Vec<LoadedAgent>, data_dir: &Path) -> Result<Arena, ArenaError> {
        if agents.is_empty() {
            return Err(ArenaError::Validation("the arena needs at least one agent".into()));
        }
        let store = Store::open(data_dir)?;
        let existing = store.load_all()?;
        let counter = AtomicU64::new(existing.len() as u64);
        let sessions =
            existing.into_iter().map(|s| (s.session_id.clone(), Arc::new(Mutex::new(s)))).collect::<HashMap<_, _>>();
        Ok(Arena { cfg, agents, sessions: RwLock::new(sessions), streams: Mutex::new(HashMap::new()), store, counter })
    }

    /// Loads the trained agents of a manifest. S is served only when asked for.
    pub fn from_manifest(cfg: ArenaConfig, manifest: &Path, include_supervised: bool, data_dir: &Path) -> Result<Arena, ArenaError> {
        let (_, agents) = load_agents(manifest)?;
        let agents = agents
            .into_iter()
            .filter(|(spec, _)| include_supervised || spec.id != SUPERVISED_ID)
            .map(|(spec, policy)| LoadedAgent { spec, policy })
            .collect();
        Arena::new(cfg, agents, data_dir)
    }

    pub fn config(&self) -> &ArenaConfig {
        &self.cfg
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn agents(&self) -> Vec<AgentInfo> {
        self.agents.iter().map(LoadedAgent::info).collect()
    }

    fn agent(&self, id: &str) -> Result<&LoadedAgent, ArenaError> {
        self.agents.iter().find(|a| a.spec.id == id).ok_or_else(|| ArenaError::NotFound(format!("agent {id}")))
    }

    fn play<'a>(&self, agent: &'a LoadedAgent) -> AgentPlay<'a> {
        AgentPlay { policy: &agent.policy, temperature: self.cfg.temperature }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ArenaError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ArenaError::NotFound(format!("session {id}")))
    }

    pub fn subscribe(&self, id: &str) -> Result<broadcast::Receiver<StreamEvent>, ArenaError> {
        self.session(id)?;
        let mut streams = self.streams.lock().expect("stream map lock");
        Ok(streams.entry(id.to_owned()).or_insert_with(|| broadcast::channel(64).0).subscribe())
    }

    fn publish(&self, id: &str, events: Vec<StreamEvent>) {
        if let Some(tx) = self.streams.lock().expect("stream map lock").get(id) {
            for e in events {
                // no subscribers is fine
                let _ = tx.send(e);
            }
        }
    }

    fn persist(&self, s: &Session, event: &str, detail: serde_json::Value) -> Result<(), ArenaError> {
        self.store.save(s)?;
        self.store.append_event(&EventRecord {
            session_id: s.session_id.clone(),
            seq: s.messages.len(),
            event: event.into(),
            detail,
        })
    }

    fn view(&self, s: &Session) -> SessionView {
        SessionView::new(s, self.cfg.reveal_agent_deal)
    }

    pub fn create(&self, req: CreateSession) -> Result<SessionView, ArenaError> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let seed = req.seed.unwrap_or_else(|| self.cfg.seed.wrapping_mul(1_000_003).wrapping_add(n));
        let mut rng = stream_rng(seed, u64::MAX - 1);
        let agent = match req.agent.as_deref() {
            None | Some("random") => &self.agents[rng.gen_range(0..self.agents.len())],
            Some(id) => self.agent(id)?,
        };
        let human_role = if rng.gen::<bool>() { Role::A } else { Role::B };
        let scenario = sample_scenario_with(&mut rng, &self.cfg.pool)?;
        let id = {
            let sessions = self.sessions.read().expect("session map lock");
            let mut k = n;
            loop {
                let id = sha256_hex(format!("{}:{k}:{seed}", self.cfg.seed).as_bytes())[..16].to_owned();
                if !sessions.contains_key(&id) {
                    break id;
                }
                k += 1 << 32;
            }
        };
        let s = Session::start(
            id.clone(),
            agent.spec.id.clone(),
            agent.spec.hash.clone(),
            seed,
            scenario,
            human_role,
            self.cfg.cutoff,
            self.play(agent),
        )?;
        self.persist(&s, "create", serde_json::json!({ "agent": s.agent_id, "messages": s.messages }))?;
        let view = self.view(&s);
        self.sessions.write().expect("session map lock").insert(id, Arc::new(Mutex::new(s)));
        Ok(view)
    }

    pub fn get(&self, id: &str) -> Result<SessionView, ArenaError> {
        let s = self.session(id)?;
        let s = s.lock().expect("session lock");
        Ok(self.view(&s))
    }

    fn events_after(&self, s: &Session, before_messages: usize, before: SessionStatus) -> Vec<StreamEvent> {
        let mut ev: Vec<StreamEvent> =
            s.messages[before_messages..].iter().map(|m| StreamEvent::Message { message: m.clone() }).collect();
        if s.status != before {
            ev.push(StreamEvent::Status { status: s.status });
        }
        match &s.outcome {
            Some(o) if before != SessionStatus::Closed => {
                ev.push(StreamEvent::Outcome { outcome: OutcomeView::new(o, s.human_role) })
            }
            _ => {}
        }
        ev
    }

    pub fn turn(&self, id: &str, input: TurnInput) -> Result<TurnResponse, ArenaError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().expect("session lock");
        let agent = self.agent(&s.agent_id)?;
        let (messages, status) = (s.messages.len(), s.status);
        let result = s.human_turn(input, self.play(agent))?;
        if let TurnResult::Accepted { .. } = &result {
            if s.status == SessionStatus::AwaitingDealEntry && self.cfg.reveal_agent_deal {
                s.agent_claim(self.play(agent))?;
            }
            self.persist(&s, "turn", serde_json::to_value(&s.messages[messages..]).map_err(haggle_core::Error::from)?)?;
            self.publish(id, self.events_after(&s, messages, status));
        }
        Ok(TurnResponse { result, session: self.view(&s) })
    }

    pub fn submit_deal(&self, id: &str, take: [u32; ISSUES]) -> Result<OutcomeResponse, ArenaError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().expect("session lock");
        let agent = self.agent(&s.agent_id)?;
        let status = s.status;
        let outcome = s.submit_deal(take, self.play(agent))?;
        let view = OutcomeView::new(&outcome, s.human_role);
        self.persist(&s, "deal", serde_json::to_value(&view).map_err(haggle_core::Error::from)?)?;
        self.publish(id, self.events_after(&s, s.messages.len(), status));
        Ok(OutcomeResponse { outcome: view, session: self.view(&s) })
    }

    pub fn walkaway(&self, id: &str) -> Result<OutcomeResponse, ArenaError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().expect("session lock");
        let (messages, status) = (s.messages.len(), s.status);
        let outcome = s.walkaway()?;
        let view = OutcomeView::new(&outcome, s.human_role);
        self.persist(&s, "walkaway", serde_json::to_value(&view).map_err(haggle_core::Error::from)?)?;
        self.publish(id, self.events_after(&s, messages, status));
        Ok(OutcomeResponse { outcome: view, session: self.view(&s) })
    }

    pub fn submit_survey(&self, id: &str, survey: SurveyResponse) -> Result<SessionView, ArenaError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().expect("session lock");
        s.submit_survey(survey.clone())?;
        self.persist(&s, "survey", serde_json::to_value(&survey).map_err(haggle_core::Error::from)?)?;
        Ok(self.view(&s))
    }

    /// Transcripts ordered by session id, optionally for one agent only.
    pub fn export(&self, agent: Option<&str>) -> Result<Vec<TranscriptRecord>, ArenaError> {
        let handles: Vec<Arc<Mutex<Session>>> = {
            let map = self.sessions.read().expect("session map lock");
            let mut ids: Vec<&String> = map.keys().collect();
            ids.sort();
            ids.into_iter().map(|id| map[id].clone()).collect()
        };
        let mut out = Vec::new();
        for h in handles {
            let s = h.lock().expect("session lock");
            if agent.is_some_and(|a| a != s.agent_id) {
                continue;
            }
            let info = match self.agent(&s.agent_id) {
                Ok(a) => a.info(),
                Err(_) => AgentInfo { id: s.agent_id.clone(), reward: String::new(), partner: String::new(), stage: 0, hash: s.agent_hash.clone() },
            };
            out.push(TranscriptRecord {
                session_id: s.session_id.clone(),
                agent: info,
                seed: s.seed,
                human_role: s.human_role,
                counts: s.scenario.counts,
                human_values: *s.scenario.values(s.human_role),
                status: s.status,
                messages: s.messages.clone(),
                outcome: s.outcome.as_ref().map(|o| OutcomeView::new(o, s.human_role)),
                survey: s.survey.clone(),
            });
        }
        Ok(out)
    }
}
