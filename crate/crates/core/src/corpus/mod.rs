//! Negotiation corpus: line format, surface-text parsing into acts, statistics
//! and a synthetic generator.

pub mod format;
pub mod lexicon;
pub mod stats;
pub mod surface;
pub mod synth;

pub use format::{corpus_files, load_corpus, parse_dataset, parse_line, CorpusOutput, CorpusRecord, LineError, ParseReport, Turn};
pub use stats::{corpus_stats, extraction_coverage, unique_dialogues, CorpusStats, ExtractionCoverage};
pub use surface::{extract_acts, parse_utterance, realize_act, Extraction, OfferParse, ParseStatus};
pub use synth::{generate_lines, SynthConfig};
