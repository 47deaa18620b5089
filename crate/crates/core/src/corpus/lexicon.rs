use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use serde::Deserialize;

use crate::bargain::ISSUES;

const LEXICON_TOML: &str = include_str!("../../data/lexicon.toml");

#[derive(Debug, Deserialize)]
struct ItemForms {
    singular: Vec<String>,
    plural: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct Words {
    all: Vec<String>,
    rest: Vec<String>,
    me: Vec<String>,
    you: Vec<String>,
    accept: Vec<String>,
    negation: Vec<String>,
    ambiguous: Vec<String>,
    select: Vec<String>,
    walkaway: Vec<String>,
    give: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawLexicon {
    items: Vec<ItemForms>,
    numbers: HashMap<String, u32>,
    words: Words,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WordClass {
    Item(usize),
    Number(u32),
    All,
    Rest,
    Me,
    You,
    Accept,
    Negation,
    Ambiguous,
    Select,
    Walkaway,
    Give,
}

#[derive(Debug)]
pub struct Lexicon {
    classes: HashMap<String, Vec<WordClass>>,
    singular: [String; ISSUES],
    plural: [String; ISSUES],
}

impl Lexicon {
    pub fn get() -> &'static Lexicon {
        static LEX: OnceLock<Lexicon> = OnceLock::new();
        LEX.get_or_init(|| Lexicon::from_toml(LEXICON_TOML).expect("bundled lexicon is valid"))
    }

    fn from_toml(text: &str) -> Result<Lexicon, toml::de::Error> {
        let raw: RawLexicon = toml::from_str(text)?;
        assert_eq!(raw.items.len(), ISSUES, "lexicon must list exactly {ISSUES} items");
        let mut classes: HashMap<String, Vec<WordClass>> = HashMap::new();
        let mut add = |w: &str, c: WordClass| classes.entry(w.to_owned()).or_default().push(c);
        for (k, forms) in raw.items.iter().enumerate() {
            for w in forms.singular.iter().chain(&forms.plural) {
                add(w, WordClass::Item(k));
            }
        }
        for (w, n) in &raw.numbers {
            add(w, WordClass::Number(*n));
        }
        let groups: [(&Vec<String>, WordClass); 10] = [
            (&raw.words.all, WordClass::All),
            (&raw.words.rest, WordClass::Rest),
            (&raw.words.me, WordClass::Me),
            (&raw.words.you, WordClass::You),
            (&raw.words.accept, WordClass::Accept),
            (&raw.words.negation, WordClass::Negation),
            (&raw.words.ambiguous, WordClass::Ambiguous),
            (&raw.words.select, WordClass::Select),
            (&raw.words.walkaway, WordClass::Walkaway),
            (&raw.words.give, WordClass::Give),
        ];
        for (words, class) in groups {
            for w in words {
                add(w, class);
            }
        }
        Ok(Lexicon {
            classes,
            singular: std::array::from_fn(|k| raw.items[k].singular[0].clone()),
            plural: std::array::from_fn(|k| raw.items[k].plural[0].clone()),
        })
    }

    /// Every class a token belongs to; digits are numbers.
    pub fn classify(&self, token: &str) -> Vec<WordClass> {
        if let Ok(n) = token.parse::<u32>() {
            return vec![WordClass::Number(n)];
        }
        self.classes.get(token).cloned().unwrap_or_default()
    }

    pub fn is(&self, token: &str, class: WordClass) -> bool {
        self.classify(token).contains(&class)
    }

    pub fn item_word(&self, issue: usize, n: u32) -> &str {
        if n == 1 {
            &self.singular[issue]
        } else {
            &self.plural[issue]
        }
    }

    pub fn words_of(&self, class: WordClass) -> HashSet<&str> {
        self.classes.iter().filter(|(_, c)| c.contains(&class)).map(|(w, _)| w.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_lexicon_loads() {
        let lex = Lexicon::get();
        assert_eq!(lex.classify("books"), vec![WordClass::Item(0)]);
        assert_eq!(lex.classify("3"), vec![WordClass::Number(3)]);
        assert!(lex.is("no", WordClass::Negation));
        assert!(lex.is("no", WordClass::Number(0)));
        assert_eq!(lex.item_word(2, 1), "ball");
        assert_eq!(lex.item_word(2, 3), "balls");
    }
}
