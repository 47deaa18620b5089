//! Client-facing payloads. These are the only types the HTTP layer
//! serializes, and none of them has a field for the agent's values.

use haggle_core::bargain::{Counts, Outcome, OutcomeKind, Role, Values, ISSUES};
use serde::{Deserialize, Serialize};

use crate::session::{Message, Session, SessionStatus, SurveyResponse, TurnResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeView {
    pub kind: OutcomeKind,
    pub human_points: u32,
    pub agent_points: u32,
    pub human_division: Option<[u32; ISSUES]>,
    pub agent_division: Option<[u32; ISSUES]>,
    pub needs_review: bool,
}

impl OutcomeView {
    pub fn new(o: &Outcome, human: Role) -> Self {
        let (h, a) = match human {
            Role::A => (o.division_a, o.division_b),
            Role::B => (o.division_b, o.division_a),
        };
        OutcomeView {
            kind: o.kind,
            human_points: o.points(human),
            agent_points: o.points(human.other()),
            human_division: h.map(|d| d.take),
            agent_division: a.map(|d| d.take),
            needs_review: o.needs_review,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub agent_id: String,
    pub human_role: Role,
    pub counts: Counts,
    pub human_values: Values,
    pub status: SessionStatus,
    pub your_turn: bool,
    pub human_turns: usize,
    pub messages: Vec<Message>,
    pub outcome: Option<OutcomeView>,
    pub survey_submitted: bool,
    /// Only filled when the server is configured to reveal the agent's entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_deal: Option<[u32; ISSUES]>,
}

impl SessionView {
    pub fn new(s: &Session, reveal_agent_deal: bool) -> Self {
        SessionView {
            session_id: s.session_id.clone(),
            agent_id: s.agent_id.clone(),
            human_role: s.human_role,
            counts: s.scenario.counts,
            human_values: *s.scenario.values(s.human_role),
            status: s.status,
            your_turn: s.status == SessionStatus::Active && s.state.turn == s.human_role,
            human_turns: s.human_turns,
            messages: s.messages.clone(),
            outcome: s.outcome.as_ref().map(|o| OutcomeView::new(o, s.human_role)),
            survey_submitted: s.survey.is_some(),
            agent_deal: if reveal_agent_deal && s.status == SessionStatus::AwaitingDealEntry {
                s.agent_division.map(|d| d.take)
            } else {
                None
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnResponse {
    #[serde(flatten)]
    pub result: TurnResult,
    pub session: SessionView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeResponse {
    pub outcome: OutcomeView,
    pub session: SessionView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub id: String,
    pub reward: String,
    pub partner: String,
    pub stage: u8,
    pub hash: String,
}

/// One exported conversation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub session_id: String,
    pub agent: AgentInfo,
    pub seed: u64,
    pub human_role: Role,
    pub counts: Counts,
    pub human_values: Values,
    pub status: SessionStatus,
    pub messages: Vec<Message>,
    pub outcome: Option<OutcomeView>,
    pub survey: Option<SurveyResponse>,
}

/// Pushed on a session's event stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StreamEvent {
    Message { message: Message },
    Status { status: SessionStatus },
    Outcome { outcome: OutcomeView },
}
