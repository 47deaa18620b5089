//! One live negotiation between a person and an agent.
//!
//! The session drives the same [`DialogueState`] used in training, so cutoff,
//! scoring and deal reconciliation cannot drift from the bot-vs-bot rules.
//! Everything here is synchronous; the service layer handles locking and
//! persistence.

use haggle_core::bargain::{
    resolve_outcome, Act, DialogueAct, DialogueState, Division, Outcome, OutcomeKind, Role, Scenario, Termination,
    ISSUES, ITEM_NAMES,
};
use haggle_core::corpus::{parse_utterance, realize_act};
use haggle_core::policy::Policy;
use haggle_core::selfplay::{next_act, output_deal, stream_rng, Agent};
use serde::{Deserialize, Serialize};

use crate::error::{ArenaError, IssueError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    AwaitingDealEntry,
    Closed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Human,
    Agent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Speaker,
    pub act: Act,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub satisfaction: u8,
    pub likeness: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comments: Option<String>,
}

impl SurveyResponse {
    pub fn validate(&self) -> Result<(), ArenaError> {
        for (name, v) in [("satisfaction", self.satisfaction), ("likeness", self.likeness)] {
            if !(1..=5).contains(&v) {
                return Err(ArenaError::Validation(format!("{name} must be between 1 and 5, got {v}")));
            }
        }
        Ok(())
    }
}

/// What a person may send on their turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TurnInput {
    Act { act: Act },
    Text { text: String },
}

/// Full server-side record, including what the client must never see.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub agent_id: String,
    pub agent_hash: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub human_role: Role,
    pub state: DialogueState,
    pub status: SessionStatus,
    pub messages: Vec<Message>,
    pub human_turns: usize,
    #[serde(default)]
    pub agent_division: Option<Division>,
    #[serde(default)]
    pub human_division: Option<Division>,
    pub outcome: Option<Outcome>,
    pub survey: Option<SurveyResponse>,
}

/// The agent's side of a session.
#[derive(Clone, Copy)]
pub struct AgentPlay<'a> {
    pub policy: &'a Policy,
    pub temperature: f64,
}

/// Result of a human turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum TurnResult {
    /// The text could not be understood; nothing was consumed.
    Rephrase { prompt: String, notes: Vec<String> },
    Accepted { human: Message, agent: Option<Message> },
}

impl Session {
    /// A new session. When the agent opens, its first utterance is already made.
    #[allow(clippy::too_many_arguments)]
    pub fn start(
        session_id: String,
        agent_id: String,
        agent_hash: String,
        seed: u64,
        scenario: Scenario,
        human_role: Role,
        cutoff: usize,
        agent: AgentPlay<'_>,
    ) -> Result<Session, ArenaError> {
        let state = DialogueState::new(scenario.clone(), Role::A, cutoff)?;
        let mut s = Session {
            session_id,
            agent_id,
            agent_hash,
            seed,
            scenario,
            human_role,
            state,
            status: SessionStatus::Active,
            messages: Vec::new(),
            human_turns: 0,
            agent_division: None,
            human_division: None,
            outcome: None,
            survey: None,
        };
        if s.state.turn != human_role {
            s.agent_move(agent)?;
        }
        Ok(s)
    }

    pub fn agent_role(&self) -> Role {
        self.human_role.other()
    }

    fn require(&self, status: SessionStatus) -> Result<(), ArenaError> {
        if self.status == status {
            Ok(())
        } else {
            Err(ArenaError::State(format!("session is {:?}, expected {:?}", self.status, status)))
        }
    }

    fn agent_move(&mut self, agent: AgentPlay<'_>) -> Result<Message, ArenaError> {
        let me = self.agent_role();
        let mut rng = stream_rng(self.seed, self.state.history.len() as u64);
        let act = next_act(Agent::sampling(agent.policy, agent.temperature), &self.state, me, &mut rng)?;
        Ok(self.record(Speaker::Agent, act)?)
    }

    fn record(&mut self, speaker: Speaker, act: Act) -> Result<Message, haggle_core::Error> {
        let role = if speaker == Speaker::Human { self.human_role } else { self.agent_role() };
        self.state.push(DialogueAct::new(role, act))?;
        let msg = Message { speaker, act, text: realize_act(&act, &self.scenario) };
        self.messages.push(msg.clone());
        match self.state.termination {
            Some(Termination::Selected { .. }) => self.status = SessionStatus::AwaitingDealEntry,
            Some(_) => self.close(resolve_outcome(&self.state, None, None)?),
            None => {}
        }
        Ok(msg)
    }

    fn close(&mut self, outcome: Outcome) {
        self.outcome = Some(outcome);
        self.status = SessionStatus::Closed;
    }

    /// Applies the person's turn and, if the dialogue continues, the agent's reply.
    pub fn human_turn(&mut self, input: TurnInput, agent: AgentPlay<'_>) -> Result<TurnResult, ArenaError> {
        self.require(SessionStatus::Active)?;
        if self.state.turn != self.human_role {
            return Err(ArenaError::TurnOrder("it is the agent's turn".into()));
        }
        let act = match input {
            TurnInput::Act { act } => act,
            TurnInput::Text { text } => {
                let parsed = parse_utterance(&text, &self.scenario, self.human_role);
                match parsed.act {
                    Some(a) => a.act,
                    None => {
                        return Ok(TurnResult::Rephrase {
                            prompt: "Sorry, I did not catch that. Try something like \"i want the books and one hat\"."
                                .into(),
                            notes: parsed.notes,
                        })
                    }
                }
            }
        };
        if act == Act::Walkaway {
            self.walkaway_precondition()?;
        }
        if let Act::Propose { take } = act {
            check_division(&Division::new(take), &self.scenario)?;
        }
        let human = self.record(Speaker::Human, act).map_err(|e| match e {
            haggle_core::Error::InvalidAct(m) => ArenaError::Validation(m),
            other => other.into(),
        })?;
        self.human_turns += 1;
        let agent = if self.status == SessionStatus::Active { Some(self.agent_move(agent)?) } else { None };
        Ok(TurnResult::Accepted { human, agent })
    }

    fn walkaway_precondition(&self) -> Result<(), ArenaError> {
        if self.human_turns == 0 {
            return Err(ArenaError::Precondition("walking away is allowed after at least one turn".into()));
        }
        Ok(())
    }

    pub fn walkaway(&mut self) -> Result<Outcome, ArenaError> {
        self.require(SessionStatus::Active)?;
        self.walkaway_precondition()?;
        if self.state.turn != self.human_role {
            return Err(ArenaError::TurnOrder("it is the agent's turn".into()));
        }
        self.record(Speaker::Human, Act::Walkaway)?;
        self.human_turns += 1;
        Ok(self.outcome.clone().expect("walkaway closes the session"))
    }

    /// The agent's claimed division; computed once, on first request.
    pub fn agent_claim(&mut self, agent: AgentPlay<'_>) -> Result<Division, ArenaError> {
        self.require(SessionStatus::AwaitingDealEntry)?;
        if let Some(d) = self.agent_division {
            return Ok(d);
        }
        let mut rng = stream_rng(self.seed, u64::MAX);
        let d = output_deal(Agent::greedy(agent.policy), &self.state, self.agent_role(), &mut rng)?;
        self.agent_division = Some(d);
        Ok(d)
    }

    pub fn submit_deal(&mut self, take: [u32; ISSUES], agent: AgentPlay<'_>) -> Result<Outcome, ArenaError> {
        self.require(SessionStatus::AwaitingDealEntry)?;
        let human = Division::new(take);
        check_division(&human, &self.scenario)?;
        let agent_div = self.agent_claim(agent)?;
        let (a, b) = match self.human_role {
            Role::A => (human, agent_div),
            Role::B => (agent_div, human),
        };
        let outcome = resolve_outcome(&self.state, Some(&a), Some(&b))?;
        self.human_division = Some(human);
        self.close(outcome.clone());
        Ok(outcome)
    }

    pub fn submit_survey(&mut self, survey: SurveyResponse) -> Result<(), ArenaError> {
        self.require(SessionStatus::Closed)?;
        survey.validate()?;
        if self.survey.is_some() {
            return Err(ArenaError::Conflict("survey already submitted".into()));
        }
        self.survey = Some(survey);
        Ok(())
    }

    pub fn is_cutoff(&self) -> bool {
        self.outcome.as_ref().is_some_and(|o| o.kind == OutcomeKind::Cutoff)
    }
}

fn check_division(d: &Division, s: &Scenario) -> Result<(), ArenaError> {
    let issues: Vec<IssueError> = (0..ISSUES)
        .filter(|&k| d.take[k] > s.counts[k])
        .map(|k| IssueError { issue: ITEM_NAMES[k].into(), requested: d.take[k], available: s.counts[k] })
        .collect();
    if issues.is_empty() {
        Ok(())
    } else {
        Err(ArenaError::InfeasibleDivision(issues))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use haggle_core::policy::Arch;

    fn policy() -> Policy {
        Policy::new(Arch { goal: 4, hidden: 8, trunk: 8 }, 5)
    }

    fn session(p: &Policy, human: Role) -> Session {
        let s = Scenario::new([1, 2, 3], [4, 0, 2], [0, 2, 2]);
        Session::start("x".into(), "a".into(), "h".into(), 9, s, human, 20, AgentPlay { policy: p, temperature: 0.5 })
            .unwrap()
    }

    #[test]
    fn agent_opens_when_the_human_is_second() {
        let p = policy();
        assert_eq!(session(&p, Role::B).messages.len(), 1);
        assert!(session(&p, Role::A).messages.is_empty());
    }

    #[test]
    fn walkaway_needs_a_turn_first() {
        let p = policy();
        let mut s = session(&p, Role::A);
        assert!(matches!(s.walkaway(), Err(ArenaError::Precondition(_))));
        let play = AgentPlay { policy: &p, temperature: 0.5 };
        s.human_turn(TurnInput::Act { act: Act::Propose { take: [1, 0, 0] } }, play).unwrap();
        if s.status == SessionStatus::Active {
            let o = s.walkaway().unwrap();
            assert_eq!((o.kind, o.points_a, o.points_b), (OutcomeKind::Walkaway, 0, 0));
            assert!(matches!(s.walkaway(), Err(ArenaError::State(_))));
        }
    }

    #[test]
    fn infeasible_proposals_are_rejected_per_issue() {
        let p = policy();
        let mut s = session(&p, Role::A);
        let play = AgentPlay { policy: &p, temperature: 0.5 };
        let err = s.human_turn(TurnInput::Act { act: Act::Propose { take: [2, 0, 9] } }, play).unwrap_err();
        let ArenaError::InfeasibleDivision(issues) = err else { panic!("{err:?}") };
        assert_eq!(issues.iter().map(|i| i.issue.as_str()).collect::<Vec<_>>(), ["book", "ball"]);
        assert!(s.messages.is_empty());
    }

    #[test]
    fn survey_is_stored_once_and_range_checked() {
        let p = policy();
        let mut s = session(&p, Role::A);
        let ok = SurveyResponse { satisfaction: 4, likeness: 3, comments: None };
        assert!(matches!(s.submit_survey(ok.clone()), Err(ArenaError::State(_))));
        s.close(Outcome { kind: OutcomeKind::Cutoff, division_a: None, division_b: None, points_a: 0, points_b: 0, needs_review: false });
        assert!(matches!(
            s.submit_survey(SurveyResponse { satisfaction: 6, ..ok.clone() }),
            Err(ArenaError::Validation(_))
        ));
        s.submit_survey(ok.clone()).unwrap();
        assert!(matches!(s.submit_survey(ok), Err(ArenaError::Conflict(_))));
    }
}
