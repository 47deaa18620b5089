//! Surface layer: structured acts to template text and free text back to acts.
//!
//! The offer grammar is rule based:
//!
//! * items are attributed to the most recent pronoun (`i`, `me`, ... or `you`,
//!   `your`, ...); a giving verb (`give`, `offer`) hands what follows to the
//!   other side until the next pronoun;
//! * a numeral within three tokens before an item word fixes the quantity, a
//!   bare mention (or `the`, `all`, `both`) means all of that item;
//! * words like `rest` or `everything` assign the unmentioned items to the
//!   current owner; otherwise unmentioned items go to the side that did not
//!   mention anything; when both sides were mentioned they are ambiguous;
//! * hedges (`or`, `split`, `at least`, ...) and negated item mentions make
//!   the offer ambiguous, and ambiguous offers are never guessed;
//! * with no item content, an agreement word without negation or question
//!   mark is an acceptance.

use serde::{Deserialize, Serialize};

use crate::bargain::{Act, DialogueAct, DialogueState, Role, Scenario, ISSUES, ITEM_NAMES};
use crate::corpus::format::CorpusRecord;
use crate::corpus::lexicon::{Lexicon, WordClass};

const QUANTITY_WINDOW: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Parsed,
    Ambiguous,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfferParse {
    pub status: ParseStatus,
    pub act: Option<DialogueAct>,
    pub notes: Vec<String>,
}

impl OfferParse {
    fn parsed(speaker: Role, act: Act) -> Self {
        OfferParse { status: ParseStatus::Parsed, act: Some(DialogueAct::new(speaker, act)), notes: Vec::new() }
    }

    fn failed(note: impl Into<String>) -> Self {
        OfferParse { status: ParseStatus::Failed, act: None, notes: vec![note.into()] }
    }

    fn ambiguous(note: impl Into<String>) -> Self {
        OfferParse { status: ParseStatus::Ambiguous, act: None, notes: vec![note.into()] }
    }
}

/// Lowercases and splits punctuation into separate tokens, keeping `<...>` markers whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    let mut in_marker = false;
    for ch in text.chars() {
        let ch = if ch == '\u{2019}' { '\'' } else { ch };
        match ch {
            '<' => {
                in_marker = true;
                spaced.push(' ');
                spaced.push(ch);
            }
            '>' => {
                in_marker = false;
                spaced.push(ch);
                spaced.push(' ');
            }
            ',' | '.' | '!' | '?' | ';' | ':' | '(' | ')' | '"' if !in_marker => {
                spaced.push(' ');
                spaced.push(ch);
                spaced.push(' ');
            }
            _ => spaced.extend(ch.to_lowercase()),
        }
    }
    spaced.split_whitespace().map(str::to_owned).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Qty {
    Exactly(u32),
    All,
}

#[derive(Debug)]
struct Mention {
    owner: Option<Role>,
    issue: usize,
    qty: Qty,
    pos: usize,
    negated: bool,
}

/// Parses one utterance by `speaker`. Owner roles below are relative: `A` is
/// the speaker and `B` the listener until the final division is built.
pub fn parse_utterance(text: &str, scenario: &Scenario, speaker: Role) -> OfferParse {
    parse_tokens(&tokenize(text), scenario, speaker)
}

pub fn parse_tokens(tokens: &[String], scenario: &Scenario, speaker: Role) -> OfferParse {
    const ME: Role = Role::A;
    const YOU: Role = Role::B;
    let lex = Lexicon::get();
    let counts = &scenario.counts;

    let mut owner: Option<Role> = None;
    let mut pronoun_positions: Vec<(usize, Role)> = Vec::new();
    let mut pending_num: Option<(u32, usize)> = None;
    let mut mentions: Vec<Mention> = Vec::new();
    let mut rest: Option<(Option<Role>, usize)> = None;
    let (mut hedged, mut negated_since_owner, mut any_negation, mut any_accept, mut question) =
        (false, false, false, false, false);

    for (i, tok) in tokens.iter().enumerate() {
        if tok == "?" {
            question = true;
            continue;
        }
        let classes = lex.classify(tok);
        if classes.contains(&WordClass::Select) {
            return OfferParse::parsed(speaker, Act::Select);
        }
        if classes.contains(&WordClass::Walkaway) {
            return OfferParse::parsed(speaker, Act::Walkaway);
        }
        for class in &classes {
            match *class {
                WordClass::Me => {
                    owner = Some(ME);
                    pronoun_positions.push((i, ME));
                    negated_since_owner = false;
                }
                WordClass::You => {
                    owner = Some(YOU);
                    pronoun_positions.push((i, YOU));
                    negated_since_owner = false;
                }
                WordClass::Give => owner = Some(owner.map_or(YOU, Role::other)),
                WordClass::Number(n) => pending_num = Some((n, i)),
                WordClass::Item(issue) => {
                    let qty = match pending_num {
                        Some((n, p)) if i - p <= QUANTITY_WINDOW => Qty::Exactly(n),
                        _ => Qty::All,
                    };
                    pending_num = None;
                    mentions.push(Mention { owner, issue, qty, pos: i, negated: negated_since_owner });
                }
                WordClass::Rest => rest = Some((owner, i)),
                WordClass::Ambiguous => hedged = true,
                WordClass::Negation => {
                    // "no" doubles as the quantity zero
                    if !classes.contains(&WordClass::Number(0)) {
                        negated_since_owner = true;
                    }
                    any_negation = true;
                }
                WordClass::Accept => any_accept = true,
                WordClass::All | WordClass::Select | WordClass::Walkaway => {}
            }
        }
    }

    let next_owner_after = |pos: usize| pronoun_positions.iter().find(|(p, _)| *p > pos).map(|(_, r)| *r);

    if mentions.is_empty() && rest.is_none() {
        if any_accept && !any_negation && !question {
            return OfferParse::parsed(speaker, Act::Accept);
        }
        return OfferParse::failed("no offer or agreement content");
    }
    if hedged {
        return OfferParse::ambiguous("hedged offer (or / split / at least ...)");
    }
    if mentions.iter().any(|m| m.negated) {
        return OfferParse::ambiguous("negated item mention");
    }

    let mut mine: [Option<u32>; ISSUES] = [None; ISSUES];
    let mut theirs: [Option<u32>; ISSUES] = [None; ISSUES];
    for m in &mentions {
        let Some(who) = m.owner.or_else(|| next_owner_after(m.pos)) else {
            return OfferParse::ambiguous(format!("cannot tell who gets the {}s", ITEM_NAMES[m.issue]));
        };
        let q = match m.qty {
            Qty::Exactly(n) => n,
            Qty::All => counts[m.issue],
        };
        if q > counts[m.issue] {
            return OfferParse::failed(format!(
                "infeasible: {q} {}s requested but only {} available",
                ITEM_NAMES[m.issue], counts[m.issue]
            ));
        }
        let slot = if who == ME { &mut mine[m.issue] } else { &mut theirs[m.issue] };
        match slot {
            Some(prev) if *prev != q => {
                return OfferParse::ambiguous(format!("conflicting quantities for {}s", ITEM_NAMES[m.issue]))
            }
            _ => *slot = Some(q),
        }
    }
    let rest_owner = match rest {
        Some((Some(o), _)) => Some(o),
        Some((None, pos)) => match next_owner_after(pos) {
            Some(o) => Some(o),
            None => return OfferParse::ambiguous("cannot tell who gets the rest"),
        },
        None => None,
    };
    let me_mentioned = mine.iter().any(Option::is_some);
    let you_mentioned = theirs.iter().any(Option::is_some);

    let mut take = [0u32; ISSUES];
    for k in 0..ISSUES {
        let c = counts[k];
        take[k] = match (mine[k], theirs[k]) {
            (Some(m), Some(y)) => {
                if m + y != c {
                    return OfferParse::ambiguous(format!("{}s do not add up", ITEM_NAMES[k]));
                }
                m
            }
            (Some(m), None) => m,
            (None, Some(y)) => c - y,
            (None, None) if c == 0 => 0,
            (None, None) => match rest_owner {
                Some(o) if o == ME => c,
                Some(_) => 0,
                None if me_mentioned && !you_mentioned => 0,
                None if you_mentioned && !me_mentioned => c,
                None => {
                    return OfferParse::ambiguous(format!("unassigned {}s", ITEM_NAMES[k]));
                }
            },
        };
    }
    OfferParse::parsed(speaker, Act::Propose { take })
}

/// Template text for an act. Proposals list the speaker's own items.
pub fn realize_act(act: &Act, _scenario: &Scenario) -> String {
    let lex = Lexicon::get();
    match act {
        Act::Propose { take } => {
            let parts: Vec<String> = (0..ISSUES)
                .filter(|&k| take[k] > 0)
                .map(|k| format!("{} {}", take[k], lex.item_word(k, take[k])))
                .collect();
            if parts.is_empty() {
                "you can have everything".to_owned()
            } else {
                format!("i want {}", parts.join(" and "))
            }
        }
        Act::Accept => "deal".to_owned(),
        Act::Select => "<selection>".to_owned(),
        Act::Walkaway => "<walkaway>".to_owned(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnExtraction {
    pub turn_index: usize,
    pub speaker: Role,
    pub act: Option<DialogueAct>,
    pub status: ParseStatus,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub turns: Vec<TurnExtraction>,
}

impl Extraction {
    /// Every turn mapped to a legal act.
    pub fn is_complete(&self) -> bool {
        self.turns.iter().all(|t| t.act.is_some())
    }

    pub fn acts(&self) -> Vec<DialogueAct> {
        self.turns.iter().filter_map(|t| t.act).collect()
    }

    pub fn mapped_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.act.is_some()).count()
    }
}

/// Maps every turn of a record to an act. Turns that do not parse, or whose
/// act is illegal at that point of the dialogue, are flagged and skipped.
pub fn extract_acts(record: &CorpusRecord) -> Extraction {
    let first = record.turns.first().map_or(Role::A, |t| t.speaker);
    let mut state = DialogueState::new(record.scenario.clone(), first, usize::MAX)
        .expect("unbounded cutoff is valid");
    let mut turns = Vec::with_capacity(record.turns.len());
    for (i, turn) in record.turns.iter().enumerate() {
        let parse = parse_tokens(&turn.tokens, &record.scenario, turn.speaker);
        let mut entry =
            TurnExtraction { turn_index: i, speaker: turn.speaker, act: None, status: parse.status, notes: parse.notes };
        if let Some(act) = parse.act {
            if act.act == Act::Walkaway {
                entry.status = ParseStatus::Failed;
                entry.notes.push("walkaway does not occur in corpus dialogues".into());
            } else if state.is_terminal() {
                entry.status = ParseStatus::Failed;
                entry.notes.push("turn after selection".into());
            } else {
                // Skipped turns would otherwise desynchronise whose move it is.
                state.turn = turn.speaker;
                match state.push(act) {
                    Ok(()) => entry.act = Some(act),
                    Err(e) => {
                        entry.status = ParseStatus::Failed;
                        entry.notes.push(format!("illegal here: {e}"));
                    }
                }
            }
        }
        turns.push(entry);
    }
    Extraction { turns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bargain::all_divisions;

    fn table1() -> Scenario {
        Scenario::new([2, 1, 3], [1, 2, 2], [0, 7, 1])
    }

    fn take_of(p: &OfferParse) -> [u32; 3] {
        match p.act.map(|a| a.act) {
            Some(Act::Propose { take }) => take,
            other => panic!("expected a proposal, got {other:?} ({:?})", p.notes),
        }
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize("Hi there. How about you get both the balls, I get 2?"), vec![
            "hi", "there", ".", "how", "about", "you", "get", "both", "the", "balls", ",", "i", "get", "2", "?"
        ]);
        assert_eq!(tokenize("THEM: <selection>"), vec!["them", ":", "<selection>"]);
    }

    #[test]
    fn dialogue_lines_parse() {
        let s = table1();
        let p = parse_utterance("i will take the balls and hat", &s, Role::A);
        assert_eq!(take_of(&p), [0, 1, 3]);
        let p = parse_utterance("you can have the balls and one book", &s, Role::B);
        assert_eq!(take_of(&p), [1, 1, 0]);
        let p = parse_utterance("i would like the balls and hat and a book", &s, Role::A);
        assert_eq!(take_of(&p), [1, 1, 3]);
        assert_eq!(parse_utterance("deal", &s, Role::B).act.unwrap().act, Act::Accept);
        assert_eq!(parse_utterance("<dealselection>", &s, Role::A).act.unwrap().act, Act::Select);
    }

    #[test]
    fn mixed_ownership_and_rest() {
        let s = Scenario::new([1, 3, 1], [2, 1, 5], [10, 0, 0]);
        let p = parse_utterance("how about i get the ball and two hats and you get the rest ?", &s, Role::A);
        assert_eq!(take_of(&p), [0, 2, 1]);
        let p = parse_utterance("can i have the ball and the book and you can have the hats", &s, Role::A);
        assert_eq!(take_of(&p), [1, 0, 1]);
        let p = parse_utterance("you can have everything", &s, Role::A);
        assert_eq!(take_of(&p), [0, 0, 0]);
        let p = parse_utterance("I can only offer the hats", &s, Role::A);
        assert_eq!(take_of(&p), [1, 0, 1]);
    }

    #[test]
    fn failures_and_ambiguity() {
        let s = table1();
        let p = parse_utterance("I want 9 hats", &s, Role::A);
        assert_eq!(p.status, ParseStatus::Failed);
        assert!(p.notes[0].contains("infeasible"));
        assert_eq!(parse_utterance("hello there", &s, Role::A).status, ParseStatus::Failed);
        assert_eq!(parse_utterance("sorry , that's no deal .", &s, Role::A).status, ParseStatus::Failed);
        assert_eq!(parse_utterance("do you agree ?", &s, Role::A).status, ParseStatus::Failed);
        assert_eq!(
            parse_utterance("i need the book and at least 1 hat or a ball", &s, Role::A).status,
            ParseStatus::Ambiguous
        );
        assert_eq!(parse_utterance("i don't want the hat", &s, Role::A).status, ParseStatus::Ambiguous);
    }

    #[test]
    fn bare_mention_means_all() {
        let s = table1();
        assert_eq!(parse_utterance("balls", &s, Role::A).status, ParseStatus::Ambiguous);
        let p = parse_utterance("i want balls", &s, Role::A);
        assert_eq!(take_of(&p), [0, 0, 3]);
    }

    #[test]
    fn realize_templates() {
        let s = table1();
        assert_eq!(realize_act(&Act::Propose { take: [1, 0, 2] }, &s), "i want 1 book and 2 balls");
        assert_eq!(realize_act(&Act::Accept, &s), "deal");
        assert_eq!(realize_act(&Act::Select, &s), "<selection>");
    }

    #[test]
    fn round_trip_on_every_feasible_act() {
        let s = Scenario::new([4, 1, 2], [1, 2, 2], [2, 2, 0]);
        let mut acts: Vec<Act> = all_divisions(&s.counts).into_iter().map(Act::propose).collect();
        acts.extend([Act::Accept, Act::Select, Act::Walkaway]);
        for act in acts {
            let text = realize_act(&act, &s);
            let back = parse_utterance(&text, &s, Role::B);
            assert_eq!(back.act, Some(DialogueAct::new(Role::B, act)), "{text}");
        }
    }
}
