//! Seeded generator for corpus-format dialogues between scripted negotiators.
//!
//! Each negotiator knows only its own values. It opens high, concedes a
//! little on every turn down to a private floor, accepts any standing offer
//! that meets its current threshold, and gives up ("no deal") once its
//! patience runs out. Proposals keep the items it values most while handing
//! over as many items as possible, drifting toward the partner's last offer.
//! The output is written in the same line format as the human corpus, one
//! line per side.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bargain::{
    all_divisions, sample_scenario_with, score, Act, DialogueAct, DialogueState, Division, PoolStats, Role, Scenario,
    ISSUES,
};
use crate::corpus::format::{CorpusOutput, CorpusRecord, Turn, SELECTION_TOKEN};
use crate::corpus::lexicon::Lexicon;
use crate::corpus::surface::tokenize;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub dialogues: usize,
    pub seed: u64,
    pub pool: PoolStats,
    /// Chance a dialogue opens with small talk.
    pub chitchat_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { dialogues: 5808, seed: 17, pool: PoolStats::default(), chitchat_rate: 0.15 }
    }
}

struct Negotiator {
    values: [u32; ISSUES],
    opening: f64,
    concession: f64,
    floor: f64,
    patience: usize,
}

impl Negotiator {
    fn sample<R: Rng>(rng: &mut R, values: [u32; ISSUES]) -> Self {
        Negotiator {
            values,
            opening: rng.gen_range(7.0..=10.0),
            concession: rng.gen_range(0.4..=1.5),
            floor: rng.gen_range(1.5..=5.5),
            patience: rng.gen_range(7..=18),
        }
    }

    fn threshold(&self, own_turns: usize) -> f64 {
        (self.opening - self.concession * own_turns as f64).max(self.floor)
    }

    fn propose<R: Rng>(&self, rng: &mut R, counts: &[u32; ISSUES], thr: f64, partner: Option<Division>) -> Division {
        let all = all_divisions(counts);
        let ok: Vec<&Division> = all.iter().filter(|d| score(d, &self.values) as f64 >= thr).collect();
        if ok.is_empty() {
            return Division::new(*counts);
        }
        let cost = |d: &Division| {
            let items: u32 = d.take.iter().sum();
            let drift = partner.map_or(0, |p| (0..ISSUES).map(|k| d.take[k].abs_diff(p.take[k])).sum::<u32>());
            items as f64 + 0.5 * drift as f64
        };
        let mut best = *ok[0];
        let mut best_cost = f64::INFINITY;
        for d in ok {
            let c = cost(d) + rng.gen_range(0.0..0.8);
            if c < best_cost {
                best_cost = c;
                best = *d;
            }
        }
        best
    }
}

fn number_word(n: u32) -> &'static str {
    ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"][n as usize]
}

fn item_phrase<R: Rng>(rng: &mut R, issue: usize, q: u32, count: u32) -> String {
    let lex = Lexicon::get();
    let word = lex.item_word(issue, q);
    if q == count {
        let mut forms = vec![format!("the {word}"), format!("{q} {word}")];
        if count == 2 {
            forms.push(format!("both {word}"));
        }
        if count > 2 {
            forms.push(format!("all the {word}"));
        }
        if count == 1 {
            forms.push(format!("a {word}"));
        }
        forms.swap_remove(rng.gen_range(0..forms.len()))
    } else if rng.gen_bool(0.5) {
        format!("{q} {word}")
    } else {
        format!("{} {word}", number_word(q))
    }
}

fn list_phrase<R: Rng>(rng: &mut R, take: &[u32; ISSUES], counts: &[u32; ISSUES]) -> Option<String> {
    let parts: Vec<String> =
        (0..ISSUES).filter(|&k| take[k] > 0).map(|k| item_phrase(rng, k, take[k], counts[k])).collect();
    match parts.len() {
        0 => None,
        1 => Some(parts[0].clone()),
        _ => {
            let sep = if rng.gen_bool(0.7) { " and " } else { " , " };
            let (last, head) = parts.split_last().unwrap();
            Some(format!("{} and {last}", head.join(sep)))
        }
    }
}

fn proposal_text<R: Rng>(rng: &mut R, mine: &Division, counts: &[u32; ISSUES]) -> String {
    let theirs = mine.complement(counts);
    let m = list_phrase(rng, &mine.take, counts);
    let t = list_phrase(rng, &theirs.take, counts);
    match (m, t) {
        (None, _) => "you can have everything".into(),
        (Some(_), None) => ["i want everything", "i need everything"].choose(rng).unwrap().to_string(),
        (Some(m), Some(t)) => match rng.gen_range(0..8) {
            0 => format!("i want {m}"),
            1 => format!("i would like {m}"),
            2 => format!("can i have {m} ?"),
            3 => format!("i need {m} , you can have the rest"),
            4 => format!("you can have {t}"),
            5 => format!("how about i get {m} and you get the rest ?"),
            6 => format!("i get {m} and you get {t}"),
            _ => format!("i'll take {m}"),
        },
    }
}

const ACCEPT_TEXTS: [&str; 6] = ["deal", "ok deal", "sounds good", "sure , deal .", "okay that works", "great , deal"];
const CHITCHAT_TEXTS: [&str; 4] = ["hi", "hello", "hi there , how are you ?", "hello ! what do you need ?"];
const NO_DEAL_TEXTS: [&str; 3] = ["no deal , sorry", "i can't accept that , no deal", "no deal then"];

/// One simulated conversation: the `YOU = A` perspective record (line number 0).
pub fn simulate_dialogue<R: Rng>(rng: &mut R, scenario: Scenario, chitchat_rate: f64) -> CorpusRecord {
    let counts = scenario.counts;
    let sims = [Negotiator::sample(rng, scenario.values_a), Negotiator::sample(rng, scenario.values_b)];
    let sim = |r: Role| &sims[r as usize];
    let mut state = DialogueState::new(scenario.clone(), Role::A, usize::MAX).expect("valid cutoff");
    let mut turns: Vec<Turn> = Vec::new();
    let mut own_turns = [0usize; 2];
    let say = |turns: &mut Vec<Turn>, who: Role, text: &str| turns.push(Turn { speaker: who, tokens: tokenize(text) });

    let mut speaker = Role::A;
    if rng.gen_bool(chitchat_rate) {
        say(&mut turns, speaker, CHITCHAT_TEXTS.choose(rng).unwrap());
        speaker = speaker.other();
    }
    // The act-level state only sees content turns; it tracks whose move it is itself.
    state.turn = speaker;

    let output = loop {
        let me = sim(speaker);
        let accepted = state.last_act().is_some_and(|a| a.act == Act::Accept && a.speaker != speaker);
        if accepted {
            say(&mut turns, speaker, SELECTION_TOKEN);
            let (proposer, d) = state.accepted_proposal().expect("accept follows a proposal");
            let (a, b) = if proposer == Role::A { (d, d.complement(&counts)) } else { (d.complement(&counts), d) };
            break CorpusOutput::Divisions { you: a, them: b };
        }
        if turns.len() >= me.patience {
            say(&mut turns, speaker, NO_DEAL_TEXTS.choose(rng).unwrap());
            say(&mut turns, speaker.other(), SELECTION_TOKEN);
            break CorpusOutput::NoAgreement { marker: "<no_agreement>".into() };
        }
        let thr = me.threshold(own_turns[speaker as usize]);
        let offer_for_me = state.standing_offer_for(speaker).map(|d| d.complement(&counts));
        let act = match offer_for_me {
            Some(mine) if score(&mine, &me.values) as f64 >= thr => {
                say(&mut turns, speaker, ACCEPT_TEXTS.choose(rng).unwrap());
                Act::Accept
            }
            _ => {
                let d = me.propose(rng, &counts, thr, offer_for_me);
                say(&mut turns, speaker, &proposal_text(rng, &d, &counts));
                Act::propose(d)
            }
        };
        state.push(DialogueAct::new(speaker, act)).expect("scripted acts are legal");
        own_turns[speaker as usize] += 1;
        speaker = speaker.other();
    };

    let mut record = CorpusRecord { line_no: 0, scenario, turns, output, raw_line: String::new() };
    record.raw_line = record.to_line();
    record
}

/// The record as seen by the other side.
pub fn mirror(record: &CorpusRecord) -> CorpusRecord {
    let turns =
        record.turns.iter().map(|t| Turn { speaker: t.speaker.other(), tokens: t.tokens.clone() }).collect();
    let output = match &record.output {
        CorpusOutput::Divisions { you, them } => CorpusOutput::Divisions { you: *them, them: *you },
        other => other.clone(),
    };
    let mut m = CorpusRecord { line_no: 0, scenario: record.scenario.swapped(), turns, output, raw_line: String::new() };
    m.raw_line = m.to_line();
    m
}

/// Corpus lines for `cfg.dialogues` conversations, both sides of each, in order.
pub fn generate_lines(cfg: &SynthConfig) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lines = Vec::with_capacity(2 * cfg.dialogues);
    for _ in 0..cfg.dialogues {
        let scenario = sample_scenario_with(&mut rng, &cfg.pool)?;
        let rec = simulate_dialogue(&mut rng, scenario, cfg.chitchat_rate);
        lines.push(rec.to_line());
        lines.push(mirror(&rec).to_line());
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::format::parse_dataset;
    use crate::corpus::stats::{corpus_stats, extraction_coverage};
    use crate::corpus::surface::extract_acts;

    fn small() -> Vec<CorpusRecord> {
        let lines = generate_lines(&SynthConfig { dialogues: 400, ..Default::default() }).unwrap();
        let (recs, report) = parse_dataset(std::io::Cursor::new(lines.join("\n"))).unwrap();
        assert!(report.errors.is_empty(), "{:?}", report.errors.first());
        recs
    }

    #[test]
    fn generated_lines_parse_and_pair_up() {
        let recs = small();
        assert_eq!(recs.len(), 800);
        let s = corpus_stats(&recs).unwrap();
        assert_eq!(s.dialogue_count, 400);
        assert!((0.6..0.95).contains(&s.agreement_rate), "{s:?}");
    }

    #[test]
    fn extraction_matches_the_scripted_acts() {
        let recs = small();
        let cov = extraction_coverage(&recs);
        assert!(cov.turn_coverage > 0.9, "{cov:?}");
        for r in recs.iter().filter(|r| r.is_agreement()) {
            let e = extract_acts(r);
            if !e.is_complete() {
                continue;
            }
            // the accepted proposal must be the recorded output
            let mut st = DialogueState::new(r.scenario.clone(), e.acts()[0].speaker, usize::MAX).unwrap();
            for a in e.acts() {
                st.push(a).unwrap();
            }
            let (who, d) = st.accepted_proposal().unwrap();
            let (you, _) = r.agreed_divisions().unwrap();
            let expect = if who == Role::A { d } else { d.complement(&r.scenario.counts) };
            assert_eq!(expect, you, "{}", r.raw_line);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig { dialogues: 20, ..Default::default() };
        assert_eq!(generate_lines(&cfg).unwrap(), generate_lines(&cfg).unwrap());
    }
}
