//! Reader and writer for the negotiation corpus line format.
//!
//! One dialogue perspective per line:
//!
//! ```text
//! <input> 1 4 4 1 1 2 </input> <dialogue> THEM: i would like 4 hats and you can have the rest . <eos> YOU: deal <eos> THEM: <selection> </dialogue> <output> item0=1 item1=0 item2=1 item0=0 item1=4 item2=0 </output> <partner_input> 1 0 4 2 1 2 </partner_input>
//! ```
//!
//! `<input>` interleaves count and value for each of the three issues from the
//! `YOU` side; `<partner_input>` holds the same for `THEM`. `<output>` lists
//! `YOU`'s claimed items followed by `THEM`'s, or six no-agreement markers.
//! Every dialogue usually appears twice, once from each side.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bargain::{Division, Role, Scenario, ISSUES};
use crate::error::{Error, Result};

pub const SELECTION_TOKEN: &str = "<selection>";
const NO_AGREEMENT_MARKERS: [&str; 3] = ["<no_agreement>", "<disagree>", "<disconnect>"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    /// `YOU` is [`Role::A`], `THEM` is [`Role::B`].
    pub speaker: Role,
    pub tokens: Vec<String>,
}

impl Turn {
    pub fn is_selection(&self) -> bool {
        self.tokens.iter().any(|t| t == SELECTION_TOKEN)
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CorpusOutput {
    Divisions { you: Division, them: Division },
    NoAgreement { marker: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub line_no: usize,
    /// `values_a` are the `YOU` values.
    pub scenario: Scenario,
    pub turns: Vec<Turn>,
    pub output: CorpusOutput,
    #[serde(skip)]
    pub raw_line: String,
}

impl CorpusRecord {
    /// Agreed iff both sides reported complementary divisions.
    pub fn agreed_divisions(&self) -> Option<(Division, Division)> {
        match &self.output {
            CorpusOutput::Divisions { you, them } if you.is_complement_of(them, &self.scenario.counts) => {
                Some((*you, *them))
            }
            _ => None,
        }
    }

    pub fn is_agreement(&self) -> bool {
        self.agreed_divisions().is_some()
    }

    /// Whether speaker tags alternate strictly.
    pub fn alternates(&self) -> bool {
        self.turns.windows(2).all(|w| w[0].speaker != w[1].speaker)
    }

    /// Utterances excluding the selection marker turn.
    pub fn utterances(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| !t.is_selection())
    }

    /// Serializes back into the corpus line format.
    pub fn to_line(&self) -> String {
        let s = &self.scenario;
        let input = |v: &[u32; ISSUES]| {
            (0..ISSUES).map(|k| format!("{} {}", s.counts[k], v[k])).collect::<Vec<_>>().join(" ")
        };
        let dialogue = self
            .turns
            .iter()
            .map(|t| {
                let who = if t.speaker == Role::A { "YOU:" } else { "THEM:" };
                if t.is_selection() {
                    format!("{who} {}", t.text())
                } else {
                    format!("{who} {} <eos>", t.text())
                }
            })
            .collect::<Vec<_>>()
            .join(" ");
        let output = match &self.output {
            CorpusOutput::Divisions { you, them } => you
                .take
                .iter()
                .chain(&them.take)
                .enumerate()
                .map(|(i, n)| format!("item{}={n}", i % ISSUES))
                .collect::<Vec<_>>()
                .join(" "),
            CorpusOutput::NoAgreement { marker } => [marker.as_str(); 2 * ISSUES].join(" "),
        };
        format!(
            "<input> {} </input> <dialogue> {dialogue} </dialogue> <output> {output} </output> <partner_input> {} </partner_input>",
            input(&s.values_a),
            input(&s.values_b)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line_no: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParseReport {
    pub lines_read: usize,
    pub errors: Vec<LineError>,
}

/// Parses a whole corpus stream. Malformed lines are reported with their
/// 1-based line number; blank lines are skipped.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<(Vec<CorpusRecord>, ParseReport)> {
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let parsed: Vec<(usize, std::result::Result<CorpusRecord, String>)> = lines
        .par_iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, parse_line(l, i + 1)))
        .collect();
    let mut report = ParseReport { lines_read: lines.len(), errors: Vec::new() };
    let mut records = Vec::with_capacity(parsed.len());
    for (line_no, r) in parsed {
        match r {
            Ok(rec) => records.push(rec),
            Err(message) => report.errors.push(LineError { line_no, message }),
        }
    }
    Ok((records, report))
}

/// Split files read from a corpus directory, in this order, when present.
pub const SPLIT_FILES: [&str; 3] = ["train.txt", "val.txt", "test.txt"];

/// Corpus files under `path`: the file itself, the split files of a
/// directory, or failing those every `.txt` file in it sorted by name.
pub fn corpus_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_owned()]);
    }
    if !path.is_dir() {
        return Err(Error::Config(format!("corpus path {} does not exist", path.display())));
    }
    let splits: Vec<PathBuf> = SPLIT_FILES.iter().map(|f| path.join(f)).filter(|p| p.is_file()).collect();
    if !splits.is_empty() {
        return Ok(splits);
    }
    let mut txt: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    txt.sort();
    if txt.is_empty() {
        return Err(Error::Config(format!("no corpus files in {}", path.display())));
    }
    Ok(txt)
}

/// Parses every corpus file under `path`. Line numbers in the report run
/// across the files in reading order.
pub fn load_corpus(path: &Path) -> Result<(Vec<CorpusRecord>, ParseReport)> {
    let mut records = Vec::new();
    let mut report = ParseReport::default();
    for file in corpus_files(path)? {
        let f = std::fs::File::open(&file)?;
        let (mut recs, rep) = parse_dataset(std::io::BufReader::new(f))?;
        let offset = report.lines_read;
        for r in &mut recs {
            r.line_no += offset;
        }
        records.extend(recs);
        report.errors.extend(rep.errors.into_iter().map(|e| LineError { line_no: e.line_no + offset, ..e }));
        report.lines_read += rep.lines_read;
    }
    Ok((records, report))
}

fn section<'a>(line: &'a str, tag: &str) -> std::result::Result<&'a str, String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = line.find(&open).ok_or_else(|| format!("missing {open}"))? + open.len();
    let end = line[start..].find(&close).ok_or_else(|| format!("missing {close}"))? + start;
    Ok(line[start..end].trim())
}

fn parse_input(text: &str, tag: &str) -> std::result::Result<([u32; ISSUES], [u32; ISSUES]), String> {
    let nums: Vec<u32> = text
        .split_whitespace()
        .map(|t| t.parse::<u32>().map_err(|_| format!("{tag}: `{t}` is not a non-negative integer")))
        .collect::<std::result::Result<_, _>>()?;
    if nums.len() != 2 * ISSUES {
        return Err(format!("{tag}: expected {} integers, found {}", 2 * ISSUES, nums.len()));
    }
    Ok((std::array::from_fn(|k| nums[2 * k]), std::array::from_fn(|k| nums[2 * k + 1])))
}

fn parse_output(text: &str) -> std::result::Result<CorpusOutput, String> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() != 2 * ISSUES {
        return Err(format!("output: expected {} entries, found {}", 2 * ISSUES, toks.len()));
    }
    if let Some(marker) = toks.iter().find(|t| NO_AGREEMENT_MARKERS.contains(t)) {
        return Ok(CorpusOutput::NoAgreement { marker: marker.to_string() });
    }
    let mut take = [0u32; 2 * ISSUES];
    for (i, t) in toks.iter().enumerate() {
        let (key, val) = t.split_once('=').ok_or_else(|| format!("output: malformed entry `{t}`"))?;
        if key != format!("item{}", i % ISSUES) {
            return Err(format!("output: expected item{} at position {i}, found `{key}`", i % ISSUES));
        }
        take[i] = val.parse().map_err(|_| format!("output: bad count `{val}`"))?;
    }
    Ok(CorpusOutput::Divisions {
        you: Division::new([take[0], take[1], take[2]]),
        them: Division::new([take[3], take[4], take[5]]),
    })
}

fn parse_dialogue(text: &str) -> std::result::Result<Vec<Turn>, String> {
    let mut turns = Vec::new();
    for seg in text.split("<eos>") {
        let seg = seg.trim();
        if seg.is_empty() {
            continue;
        }
        let (who, rest) = seg.split_once(':').ok_or_else(|| format!("turn without speaker tag: `{seg}`"))?;
        let speaker = match who.trim() {
            "YOU" => Role::A,
            "THEM" => Role::B,
            other => return Err(format!("unknown speaker tag `{other}`")),
        };
        turns.push(Turn { speaker, tokens: rest.split_whitespace().map(str::to_owned).collect() });
    }
    Ok(turns)
}

/// Parses one corpus line.
pub fn parse_line(line: &str, line_no: usize) -> std::result::Result<CorpusRecord, String> {
    let (counts, values_a) = parse_input(section(line, "input")?, "input")?;
    let (partner_counts, values_b) = parse_input(section(line, "partner_input")?, "partner_input")?;
    if counts != partner_counts {
        return Err(format!("input counts {counts:?} differ from partner counts {partner_counts:?}"));
    }
    let turns = parse_dialogue(section(line, "dialogue")?)?;
    let output = parse_output(section(line, "output")?)?;
    if let CorpusOutput::Divisions { you, them } = &output {
        if !you.fits(&counts) || !them.fits(&counts) {
            return Err("output claims more items than exist".into());
        }
    }
    Ok(CorpusRecord {
        line_no,
        scenario: Scenario::new(counts, values_a, values_b),
        turns,
        output,
        raw_line: line.to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "<input> 1 4 4 1 1 2 </input> <dialogue> THEM: i would like 4 hats and you can have the rest . <eos> YOU: deal <eos> THEM: <selection> </dialogue> <output> item0=1 item1=0 item2=1 item0=0 item1=4 item2=0 </output> <partner_input> 1 0 4 2 1 2 </partner_input>";

    #[test]
    fn parses_sample_line() {
        let r = parse_line(SAMPLE, 1).unwrap();
        assert_eq!(r.scenario.counts, [1, 4, 1]);
        assert_eq!(r.scenario.values_a, [4, 1, 2]);
        assert_eq!(r.scenario.values_b, [0, 2, 2]);
        assert_eq!(r.turns.len(), 3);
        assert_eq!(r.turns[0].speaker, Role::B);
        assert!(r.turns[2].is_selection());
        assert_eq!(r.agreed_divisions(), Some((Division::new([1, 0, 1]), Division::new([0, 4, 0]))));
        assert!(r.alternates());
        assert_eq!(r.utterances().count(), 2);
    }

    #[test]
    fn reserializes_losslessly() {
        let r = parse_line(SAMPLE, 1).unwrap();
        assert_eq!(r.to_line(), SAMPLE);
        let again = parse_line(&r.to_line(), 1).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn no_agreement_output() {
        let line = SAMPLE.replace(
            "item0=1 item1=0 item2=1 item0=0 item1=4 item2=0",
            "<no_agreement> <no_agreement> <no_agreement> <no_agreement> <no_agreement> <no_agreement>",
        );
        let r = parse_line(&line, 3).unwrap();
        assert!(!r.is_agreement());
        assert_eq!(r.to_line(), line);
    }

    #[test]
    fn empty_stream() {
        let (recs, report) = parse_dataset(std::io::Cursor::new("")).unwrap();
        assert!(recs.is_empty());
        assert!(report.errors.is_empty());
    }

    #[test]
    fn five_integer_input_is_reported() {
        let bad = SAMPLE.replace("<input> 1 4 4 1 1 2 </input>", "<input> 1 4 4 1 1 </input>");
        let text = format!("{SAMPLE}\n{bad}\n\n{SAMPLE}\n");
        let (recs, report) = parse_dataset(std::io::Cursor::new(text)).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].line_no, 2);
        assert!(report.errors[0].message.contains("expected 6 integers"), "{}", report.errors[0].message);
        assert_eq!(recs[1].line_no, 4);
    }

    #[test]
    fn directories_read_splits_in_order() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("val.txt"), format!("{SAMPLE}\nbroken\n")).unwrap();
        std::fs::write(dir.path().join("train.txt"), format!("{SAMPLE}\n")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let (recs, report) = load_corpus(dir.path()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].line_no, 2);
        assert_eq!(report.errors[0].line_no, 3);
        assert!(matches!(load_corpus(&dir.path().join("missing")), Err(Error::Config(_))));
    }
}
