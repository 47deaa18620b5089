use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::format::CorpusRecord;
use crate::corpus::surface::extract_acts;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Lines parsed (each dialogue normally appears once per side).
    pub records: usize,
    pub dialogue_count: usize,
    pub unique_scenarios: usize,
    pub agreement_rate: f64,
    pub avg_turns: f64,
    pub avg_words_per_turn: f64,
}

fn perspective_key(r: &CorpusRecord, mirrored: bool) -> String {
    let s = if mirrored { r.scenario.swapped() } else { r.scenario.clone() };
    let mut key = s.id;
    for t in &r.turns {
        let who = (t.speaker == crate::bargain::Role::A) != mirrored;
        key.push(if who { '>' } else { '<' });
        key.push_str(&t.text());
    }
    key
}

/// One record per dialogue: the two perspectives of a conversation share a key.
pub fn unique_dialogues(records: &[CorpusRecord]) -> Vec<&CorpusRecord> {
    let mut seen = HashSet::new();
    records
        .iter()
        .filter(|r| {
            let (a, b) = (perspective_key(r, false), perspective_key(r, true));
            seen.insert(a.min(b))
        })
        .collect()
}

/// Statistics over unique dialogues. Turns exclude the selection marker.
pub fn corpus_stats(records: &[CorpusRecord]) -> Result<CorpusStats> {
    if records.is_empty() {
        return Err(Error::Domain("corpus statistics need at least one record".into()));
    }
    let dialogues = unique_dialogues(records);
    let n = dialogues.len() as f64;
    let scenarios: HashSet<String> = dialogues
        .iter()
        .map(|r| {
            let (a, b) = (r.scenario.id.clone(), r.scenario.swapped().id);
            a.min(b)
        })
        .collect();
    let agreed = dialogues.iter().filter(|r| r.is_agreement()).count() as f64;
    let turns: usize = dialogues.iter().map(|r| r.utterances().count()).sum();
    let words: usize = dialogues.iter().flat_map(|r| r.utterances()).map(|t| t.tokens.len()).sum();
    Ok(CorpusStats {
        records: records.len(),
        dialogue_count: dialogues.len(),
        unique_scenarios: scenarios.len(),
        agreement_rate: agreed / n,
        avg_turns: turns as f64 / n,
        avg_words_per_turn: if turns == 0 { 0.0 } else { words as f64 / turns as f64 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionCoverage {
    pub turns: usize,
    pub mapped_turns: usize,
    pub turn_coverage: f64,
    pub records: usize,
    pub complete_records: usize,
}

pub fn extraction_coverage(records: &[CorpusRecord]) -> ExtractionCoverage {
    let (mut turns, mut mapped, mut complete) = (0, 0, 0);
    for r in records {
        let e = extract_acts(r);
        turns += e.turns.len();
        mapped += e.mapped_turns();
        complete += usize::from(e.is_complete());
    }
    ExtractionCoverage {
        turns,
        mapped_turns: mapped,
        turn_coverage: if turns == 0 { 0.0 } else { mapped as f64 / turns as f64 },
        records: records.len(),
        complete_records: complete,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::format::parse_line;

    const YOU_SIDE: &str = "<input> 1 4 4 1 1 2 </input> <dialogue> THEM: i would like 4 hats and you can have the rest . <eos> YOU: deal <eos> THEM: <selection> </dialogue> <output> item0=1 item1=0 item2=1 item0=0 item1=4 item2=0 </output> <partner_input> 1 0 4 2 1 2 </partner_input>";
    const THEM_SIDE: &str = "<input> 1 0 4 2 1 2 </input> <dialogue> YOU: i would like 4 hats and you can have the rest . <eos> THEM: deal <eos> YOU: <selection> </dialogue> <output> item0=0 item1=4 item2=0 item0=1 item1=0 item2=1 </output> <partner_input> 1 4 4 1 1 2 </partner_input>";

    #[test]
    fn single_agreed_dialogue() {
        let r = parse_line(YOU_SIDE, 1).unwrap();
        let s = corpus_stats(&[r]).unwrap();
        assert_eq!(s.agreement_rate, 1.0);
        assert_eq!(s.dialogue_count, 1);
        assert_eq!(s.avg_turns, 2.0);
        // "i would like 4 hats and you can have the rest ." has 12 tokens, "deal" one
        assert_eq!(s.avg_words_per_turn, 6.5);
    }

    #[test]
    fn both_perspectives_count_once() {
        let recs = vec![parse_line(YOU_SIDE, 1).unwrap(), parse_line(THEM_SIDE, 2).unwrap()];
        let s = corpus_stats(&recs).unwrap();
        assert_eq!(s.records, 2);
        assert_eq!(s.dialogue_count, 1);
        assert_eq!(s.unique_scenarios, 1);
    }

    #[test]
    fn empty_is_domain_error() {
        assert!(matches!(corpus_stats(&[]), Err(Error::Domain(_))));
    }
}
