//! Recursive-descent parser for the controlled description grammar.
//!
//! ```text
//! Description := NP Participle? Clause*
//! Clause      := Relation NP
//! NP          := Det? Adj* Noun
//! ```
//!
//! The grammar is right-branching, so the first noun phrase is the subject and
//! every later phrase is a non-subject entity attached to it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::EntityCategory;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    On,
    Under,
    NextTo,
    Near,
    Holding,
    With,
    Without,
    Inside,
}

impl Relation {
    pub const ALL: [Relation; 8] = [
        Relation::On,
        Relation::Under,
        Relation::NextTo,
        Relation::Near,
        Relation::Holding,
        Relation::With,
        Relation::Without,
        Relation::Inside,
    ];

    pub fn words(self) -> &'static [&'static str] {
        match self {
            Relation::On => &["on"],
            Relation::Under => &["under"],
            Relation::NextTo => &["next", "to"],
            Relation::Near => &["near"],
            Relation::Holding => &["holding"],
            Relation::With => &["with"],
            Relation::Without => &["without"],
            Relation::Inside => &["inside"],
        }
    }

    pub fn text(self) -> String {
        self.words().join(" ")
    }

    pub fn from_text(s: &str) -> Option<Relation> {
        Relation::ALL.into_iter().find(|r| r.text() == s)
    }

    pub fn is_negation(self) -> bool {
        self == Relation::Without
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

pub const DETERMINERS: [&str; 3] = ["a", "an", "the"];

pub const PARTICIPLES: [&str; 8] = [
    "lying", "sitting", "standing", "resting", "placed", "spread", "parked", "hanging",
];

/// Colors usable for entities outside a pool's own vocabularies.
pub const GENERIC_ATTRIBUTES: [&str; 6] = ["red", "blue", "white", "black", "small", "large"];

/// Nouns known to the parser without belonging to a pool.
const EXTRA_NOUNS: [&str; 8] = ["dots", "stripes", "spots", "hat", "collar", "leash", "lid", "handle"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhraseRole {
    Subject,
    NonSubject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseSpan {
    pub start_token: usize,
    /// Exclusive.
    pub end_token: usize,
    pub role: PhraseRole,
    /// Last token of the span.
    pub head_noun: String,
    /// Full (possibly multi-word) noun, e.g. `cutting board`.
    pub noun: String,
    pub modifiers: Vec<String>,
    pub governing_relation: Option<Relation>,
    pub negated: bool,
}

impl PhraseSpan {
    pub fn span(&self) -> (usize, usize) {
        (self.start_token, self.end_token)
    }

    pub fn len(&self) -> usize {
        self.end_token - self.start_token
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_subject(&self) -> bool {
        self.role == PhraseRole::Subject
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTree {
    pub tokens: Vec<String>,
    pub phrases: Vec<PhraseSpan>,
    pub participle: Option<usize>,
}

impl ParseTree {
    pub fn subject(&self) -> &PhraseSpan {
        &self.phrases[0]
    }

    pub fn non_subjects(&self) -> impl Iterator<Item = &PhraseSpan> {
        self.phrases.iter().skip(1)
    }

    pub fn phrase_text(&self, phrase: &PhraseSpan) -> String {
        self.tokens[phrase.start_token..phrase.end_token].join(" ")
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "description")?;
        for (i, p) in self.phrases.iter().enumerate() {
            if i == 0 {
                writeln!(f, "  subject [{}..{}] \"{}\"", p.start_token, p.end_token, self.phrase_text(p))?;
                if let Some(pi) = self.participle {
                    writeln!(f, "    participle [{}] {}", pi, self.tokens[pi])?;
                }
            } else {
                let rel = p.governing_relation.map(|r| r.text()).unwrap_or_default();
                let neg = if p.negated { " (negated)" } else { "" };
                writeln!(f, "  clause \"{}\"{}", rel, neg)?;
                writeln!(
                    f,
                    "    non_subject [{}..{}] \"{}\"",
                    p.start_token,
                    p.end_token,
                    self.phrase_text(p)
                )?;
            }
            writeln!(f, "      head {}", p.head_noun)?;
            for m in &p.modifiers {
                writeln!(f, "      adj {m}")?;
            }
        }
        Ok(())
    }
}

/// Word classes the parser chunks by.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    adjectives: BTreeSet<String>,
    /// Keyed by first token; values are full token sequences, longest first.
    nouns: BTreeMap<String, Vec<Vec<String>>>,
}

impl Lexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Lexicon covering both built-in pools plus generic words.
    pub fn builtin() -> Self {
        let mut lex = Self::empty();
        for name in ["desk20", "desk80"] {
            let pool = crate::corpus::build_entity_pool(name).expect("built-in pool");
            lex.extend_from_pool(&pool);
        }
        lex
    }

    pub fn from_pool(pool: &[EntityCategory]) -> Self {
        let mut lex = Self::empty();
        lex.extend_from_pool(pool);
        lex
    }

    pub fn extend_from_pool(&mut self, pool: &[EntityCategory]) {
        for w in GENERIC_ATTRIBUTES {
            self.add_adjective(w);
        }
        for w in EXTRA_NOUNS {
            self.add_noun(w);
        }
        for c in pool {
            self.add_noun(&c.name);
            for a in &c.attribute_vocab {
                self.add_adjective(a);
            }
            for p in &c.relation_partners {
                self.add_noun(p);
            }
        }
    }

    pub fn add_adjective(&mut self, word: &str) {
        self.adjectives.insert(word.to_lowercase());
    }

    pub fn add_noun(&mut self, noun: &str) {
        let toks: Vec<String> = noun.split_whitespace().map(str::to_lowercase).collect();
        let Some(first) = toks.first().cloned() else {
            return;
        };
        let entry = self.nouns.entry(first).or_default();
        if !entry.contains(&toks) {
            entry.push(toks);
            entry.sort_by_key(|t| std::cmp::Reverse(t.len()));
        }
    }

    /// Every word the grammar can produce with this lexicon: adjectives,
    /// noun tokens, determiners, participles and relation words.
    pub fn words(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.adjectives.iter().cloned().collect();
        out.extend(self.nouns.values().flatten().flatten().cloned());
        out.extend(DETERMINERS.iter().chain(PARTICIPLES.iter()).map(|w| w.to_string()));
        out.extend(Relation::ALL.iter().flat_map(|r| r.words()).map(|w| w.to_string()));
        out
    }

    pub fn is_adjective(&self, word: &str) -> bool {
        self.adjectives.contains(word)
    }

    /// Lengths of every noun starting at `tokens[0]`, longest first.
    fn noun_matches(&self, tokens: &[String]) -> Vec<usize> {
        let Some(first) = tokens.first() else {
            return Vec::new();
        };
        self.nouns
            .get(first)
            .map(|cands| {
                cands
                    .iter()
                    .filter(|c| tokens.len() >= c.len() && tokens[..c.len()] == c[..])
                    .map(Vec::len)
                    .collect()
            })
            .unwrap_or_default()
    }
}

pub fn is_participle(word: &str) -> bool {
    PARTICIPLES.contains(&word)
}

pub fn is_determiner(word: &str) -> bool {
    DETERMINERS.contains(&word)
}

/// Relation beginning at `tokens[0]`, with its token length.
pub fn relation_at(tokens: &[String]) -> Option<(Relation, usize)> {
    Relation::ALL.into_iter().find_map(|r| {
        let w = r.words();
        (tokens.len() >= w.len() && tokens.iter().zip(w).all(|(t, w)| t == w)).then_some((r, w.len()))
    })
}

/// Whitespace split, lowercased.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone)]
pub struct Parser {
    lexicon: Lexicon,
}

impl Default for Parser {
    fn default() -> Self {
        Self::new(Lexicon::builtin())
    }
}

impl Parser {
    pub fn new(lexicon: Lexicon) -> Self {
        Self { lexicon }
    }

    pub fn for_pool(pool: &[EntityCategory]) -> Self {
        let mut lex = Lexicon::builtin();
        lex.extend_from_pool(pool);
        Self::new(lex)
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn parse(&self, text: &str) -> Result<ParseTree> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(parse_error(&tokens, 0, "empty description"));
        }
        let mut pos = 0;
        let subject = self.noun_phrase(&tokens, &mut pos, PhraseRole::Subject, None)?;
        let mut phrases = vec![subject];
        let mut participle = None;
        if pos < tokens.len() && is_participle(&tokens[pos]) {
            participle = Some(pos);
            pos += 1;
        }
        while pos < tokens.len() {
            let Some((rel, n)) = relation_at(&tokens[pos..]) else {
                return Err(parse_error(&tokens, pos, "expected a relation word"));
            };
            pos += n;
            if pos >= tokens.len() {
                return Err(parse_error(&tokens, pos - 1, "relation without an object"));
            }
            let np = self.noun_phrase(&tokens, &mut pos, PhraseRole::NonSubject, Some(rel))?;
            phrases.push(np);
        }
        Ok(ParseTree {
            tokens,
            phrases,
            participle,
        })
    }

    fn noun_phrase(
        &self,
        tokens: &[String],
        pos: &mut usize,
        role: PhraseRole,
        relation: Option<Relation>,
    ) -> Result<PhraseSpan> {
        let start = *pos;
        let mut i = start;
        if i < tokens.len() && is_determiner(&tokens[i]) {
            i += 1;
        }
        let mut modifiers = Vec::new();
        loop {
            if i >= tokens.len() {
                return Err(parse_error(tokens, i.min(tokens.len() - 1), "noun phrase without a noun"));
            }
            // A noun closes the phrase only where a boundary follows; otherwise
            // the word may still be an adjective.
            let boundary_noun = self
                .lexicon
                .noun_matches(&tokens[i..])
                .into_iter()
                .find(|&n| self.is_boundary(tokens, i + n));
            if let Some(n) = boundary_noun {
                let end = i + n;
                *pos = end;
                return Ok(PhraseSpan {
                    start_token: start,
                    end_token: end,
                    role,
                    head_noun: tokens[end - 1].clone(),
                    noun: tokens[i..end].join(" "),
                    modifiers,
                    governing_relation: relation,
                    negated: relation.is_some_and(Relation::is_negation),
                });
            }
            if self.lexicon.is_adjective(&tokens[i]) {
                modifiers.push(tokens[i].clone());
                i += 1;
                continue;
            }
            return Err(match self.lexicon.noun_matches(&tokens[i..]).first() {
                None => parse_error(tokens, i, "unknown word"),
                Some(&n) => parse_error(tokens, i + n, "expected a relation word"),
            });
        }
    }

    fn is_boundary(&self, tokens: &[String], i: usize) -> bool {
        i >= tokens.len() || is_participle(&tokens[i]) || relation_at(&tokens[i..]).is_some()
    }
}

fn parse_error(tokens: &[String], index: usize, reason: &str) -> Error {
    Error::Parse {
        index,
        token: tokens.get(index).cloned().unwrap_or_default(),
        reason: reason.to_string(),
    }
}

/// Parses with the built-in lexicon.
pub fn parse(text: &str) -> Result<ParseTree> {
    use std::sync::OnceLock;
    static DEFAULT: OnceLock<Parser> = OnceLock::new();
    DEFAULT.get_or_init(Parser::default).parse(text)
}

/// All phrases in textual order, subject first.
pub fn noun_phrases(tree: &ParseTree) -> Vec<PhraseSpan> {
    tree.phrases.clone()
}

pub fn is_absence(tree: &ParseTree) -> bool {
    tree.phrases.iter().any(|p| p.negated)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn avocado_on_cutting_board() {
        let t = parse("an avocado lying on a cutting board").unwrap();
        assert_eq!(t.phrases.len(), 2);
        assert_eq!(t.phrase_text(&t.phrases[0]), "an avocado");
        assert_eq!(t.phrases[0].role, PhraseRole::Subject);
        assert_eq!(t.phrase_text(&t.phrases[1]), "a cutting board");
        assert_eq!(t.phrases[1].governing_relation, Some(Relation::On));
        assert_eq!(t.phrases[1].head_noun, "board");
        assert_eq!(t.phrases[1].noun, "cutting board");
        assert_eq!(t.participle, Some(2));
        assert!(!is_absence(&t));
    }

    #[test]
    fn single_noun() {
        let t = parse("person").unwrap();
        assert_eq!(noun_phrases(&t).len(), 1);
        assert_eq!(t.subject().span(), (0, 1));
        assert!(t.participle.is_none());
    }

    #[test]
    fn dog_without_dots() {
        let t = parse("a dog without dots").unwrap();
        assert_eq!(t.phrase_text(t.subject()), "a dog");
        let ns = &t.phrases[1];
        assert_eq!(t.phrase_text(ns), "dots");
        assert!(ns.negated);
        assert_eq!(ns.role, PhraseRole::NonSubject);
        assert!(is_absence(&t));
    }

    #[test]
    fn three_clauses_give_four_spans() {
        let t = parse("a small red cup on a wooden table next to a plate near the bowl").unwrap();
        let nps = noun_phrases(&t);
        assert_eq!(nps.len(), 4);
        assert_eq!(nps[0].modifiers, vec!["small", "red"]);
        assert_eq!(nps[2].governing_relation, Some(Relation::NextTo));
        let spans: Vec<_> = nps.iter().map(PhraseSpan::span).collect();
        assert_eq!(spans, vec![(0, 4), (5, 8), (10, 12), (13, 15)]);
    }

    #[test]
    fn errors_carry_offending_index() {
        match parse("a dog flying over the moon") {
            Err(Error::Parse { index, token, .. }) => {
                assert_eq!(index, 2);
                assert_eq!(token, "flying");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(parse(""), Err(Error::Parse { index: 0, .. })));
        assert!(matches!(parse("a dog on"), Err(Error::Parse { index: 2, .. })));
        assert!(matches!(parse("a red"), Err(Error::Parse { .. })));
    }

    #[test]
    fn input_is_lowercased() {
        let t = parse("An Avocado ON a Plate").unwrap();
        assert_eq!(t.tokens[0], "an");
        assert_eq!(t.phrases[1].noun, "plate");
    }

    #[test]
    fn multiword_noun_prefers_boundary() {
        // "hot dog" and "dog" are both nouns in desk80.
        let t = parse("a hot dog on a plate").unwrap();
        assert_eq!(t.subject().noun, "hot dog");
        let t = parse("a brown dog").unwrap();
        assert_eq!(t.subject().noun, "dog");
    }

    #[test]
    fn display_is_indented_tree() {
        let t = parse("a dog without dots").unwrap();
        let s = t.to_string();
        assert!(s.starts_with("description\n  subject [0..2] \"a dog\""));
        assert!(s.contains("clause \"without\" (negated)"));
    }
}
