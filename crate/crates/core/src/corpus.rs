//! Entity pools and procedural object descriptions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::langparse::{self, Parser, Relation, PARTICIPLES};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCategory {
    pub id: u64,
    pub name: String,
    pub attribute_vocab: Vec<String>,
    pub relation_partners: Vec<String>,
}

impl EntityCategory {
    pub fn name_tokens(&self) -> Vec<&str> {
        self.name.split_whitespace().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrammarConfig {
    pub relation_weights: BTreeMap<Relation, f64>,
    pub participle_prob: f64,
    /// Probability of `the` over `a`/`an`.
    pub definite_prob: f64,
    pub max_clauses: usize,
    pub max_adjectives: usize,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        let relation_weights = [
            (Relation::On, 3.0),
            (Relation::Under, 1.0),
            (Relation::NextTo, 2.0),
            (Relation::Near, 2.0),
            (Relation::Holding, 1.0),
            (Relation::With, 2.0),
            (Relation::Without, 1.0),
            (Relation::Inside, 1.0),
        ]
        .into_iter()
        .collect();
        Self {
            relation_weights,
            participle_prob: 0.4,
            definite_prob: 0.25,
            max_clauses: 4,
            max_adjectives: 3,
        }
    }
}

impl GrammarConfig {
    fn active_relations(&self) -> Vec<(Relation, f64)> {
        self.relation_weights
            .iter()
            .filter(|(_, &w)| w > 0.0)
            .map(|(&r, &w)| (r, w))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DescriptionSpec {
    /// ND.
    pub num_descriptions: usize,
    /// NW.
    pub target_length_words: usize,
    pub seed: u64,
    #[serde(default)]
    pub grammar: GrammarConfig,
}

impl Default for DescriptionSpec {
    fn default() -> Self {
        Self {
            num_descriptions: 20,
            target_length_words: 10,
            seed: 0,
            grammar: GrammarConfig::default(),
        }
    }
}

impl DescriptionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.target_length_words < 3 {
            return Err(Error::InvalidSpec(format!(
                "target_length_words must be at least 3, got {}",
                self.target_length_words
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Procedural,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectDescription {
    pub id: u64,
    pub category_id: u64,
    pub text: String,
    pub seed: u64,
    pub provenance: Provenance,
    pub subject_span: (usize, usize),
    pub nonsubject_spans: Vec<(usize, usize)>,
}

impl ObjectDescription {
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

// name | attributes | partners
const DESK20: &[(&str, &str, &str)] = &[
    ("avocado", "green, ripe, sliced, halved, small, fresh", "cutting board, plate, bowl, knife, bagel, table"),
    ("cutting board", "wooden, plastic, white, large, small, round", "table, knife, avocado, plate"),
    ("plate", "white, ceramic, round, small, large, blue", "table, avocado, bagel, knife, cup"),
    ("bowl", "ceramic, wooden, white, blue, small, empty", "table, avocado, cup, plate"),
    ("knife", "sharp, metal, small, large, black, silver", "cutting board, plate, table, avocado"),
    ("cup", "white, blue, ceramic, glass, empty, full", "table, plate, book, laptop"),
    ("bottle", "glass, plastic, green, empty, full, tall", "table, cup, backpack, bowl"),
    ("table", "wooden, round, square, large, white, old", "chair, lamp, laptop, vase, book"),
    ("chair", "wooden, metal, red, black, old, folding", "table, lamp, backpack, dog"),
    ("dog", "brown, black, white, spotted, young, fluffy", "ball, chair, person, cat, backpack"),
    ("cat", "black, white, gray, striped, fluffy, sleeping", "chair, table, book, dog, lamp"),
    ("person", "young, old, smiling, tall, short, bearded", "umbrella, backpack, dog, book, laptop, cup"),
    ("ball", "red, blue, yellow, striped, small, leather", "dog, person, chair"),
    ("book", "red, blue, thick, thin, open, old", "table, laptop, lamp, cup"),
    ("lamp", "tall, small, metal, white, black, bright", "table, chair, book"),
    ("backpack", "red, black, blue, leather, large, small", "chair, person, table, bottle"),
    ("umbrella", "red, black, yellow, striped, open, closed", "person, chair, backpack"),
    ("laptop", "silver, black, open, closed, new, old", "table, cup, book, backpack"),
    ("bagel", "toasted, fresh, sliced, small, golden, plain", "plate, avocado, knife, cutting board"),
    ("vase", "glass, ceramic, tall, blue, white, empty", "table, book, lamp"),
];

#[derive(Clone, Copy)]
enum Family {
    Person,
    Vehicle,
    Street,
    Animal,
    Accessory,
    Sports,
    Kitchen,
    Food,
    Furniture,
    Electronic,
    Household,
}

impl Family {
    fn attributes(self) -> &'static str {
        match self {
            Family::Person => "young, old, smiling, tall, short, bearded",
            Family::Vehicle => "red, blue, white, black, old, new",
            Family::Street => "red, yellow, metal, tall, old, rusty",
            Family::Animal => "brown, black, white, spotted, young, large",
            Family::Accessory => "red, black, blue, leather, striped, small",
            Family::Sports => "red, blue, white, yellow, new, small",
            Family::Kitchen => "ceramic, glass, metal, white, clean, dirty",
            Family::Food => "fresh, ripe, sliced, small, large, toasted",
            Family::Furniture => "wooden, metal, white, black, large, old",
            Family::Electronic => "black, silver, white, new, old, small",
            Family::Household => "blue, white, small, large, plastic, ceramic",
        }
    }

    fn partners(self) -> &'static str {
        match self {
            Family::Person => "umbrella, backpack, dog, bicycle, cell phone, cup",
            Family::Vehicle => "person, traffic light, stop sign, bench",
            Family::Street => "car, bus, person, bench",
            Family::Animal => "person, bench, car, frisbee",
            Family::Accessory => "person, chair, bench, suitcase",
            Family::Sports => "person, dog, bench, backpack",
            Family::Kitchen => "dining table, sink, bowl, cup",
            Family::Food => "bowl, dining table, knife, fork",
            Family::Furniture => "person, cat, dog, book, laptop",
            Family::Electronic => "dining table, couch, book, cup",
            Family::Household => "dining table, bed, couch, book",
        }
    }
}

const DESK80: &[(&str, Family)] = {
    use Family::*;
    &[
        ("person", Person), ("bicycle", Vehicle), ("car", Vehicle), ("motorcycle", Vehicle),
        ("airplane", Vehicle), ("bus", Vehicle), ("train", Vehicle), ("truck", Vehicle),
        ("boat", Vehicle), ("traffic light", Street), ("fire hydrant", Street), ("stop sign", Street),
        ("parking meter", Street), ("bench", Furniture), ("bird", Animal), ("cat", Animal),
        ("dog", Animal), ("horse", Animal), ("sheep", Animal), ("cow", Animal),
        ("elephant", Animal), ("bear", Animal), ("zebra", Animal), ("giraffe", Animal),
        ("backpack", Accessory), ("umbrella", Accessory), ("handbag", Accessory), ("tie", Accessory),
        ("suitcase", Accessory), ("frisbee", Sports), ("skis", Sports), ("snowboard", Sports),
        ("sports ball", Sports), ("kite", Sports), ("baseball bat", Sports), ("baseball glove", Sports),
        ("skateboard", Sports), ("surfboard", Sports), ("tennis racket", Sports), ("bottle", Kitchen),
        ("wine glass", Kitchen), ("cup", Kitchen), ("fork", Kitchen), ("knife", Kitchen),
        ("spoon", Kitchen), ("bowl", Kitchen), ("banana", Food), ("apple", Food),
        ("sandwich", Food), ("orange", Food), ("broccoli", Food), ("carrot", Food),
        ("hot dog", Food), ("pizza", Food), ("donut", Food), ("cake", Food),
        ("chair", Furniture), ("couch", Furniture), ("potted plant", Household), ("bed", Furniture),
        ("dining table", Furniture), ("toilet", Household), ("tv", Electronic), ("laptop", Electronic),
        ("mouse", Electronic), ("remote", Electronic), ("keyboard", Electronic), ("cell phone", Electronic),
        ("microwave", Electronic), ("oven", Kitchen), ("toaster", Kitchen), ("sink", Kitchen),
        ("refrigerator", Kitchen), ("book", Household), ("clock", Household), ("vase", Household),
        ("scissors", Household), ("teddy bear", Household), ("hair drier", Electronic), ("toothbrush", Household),
    ]
};

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(|w| w.trim().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Loads a built-in pool (`desk20`, `desk80`) or a pool file.
pub fn build_entity_pool(pool: &str) -> Result<Vec<EntityCategory>> {
    let raw: Vec<(String, Vec<String>, Vec<String>)> = match pool {
        "desk20" => DESK20
            .iter()
            .map(|(n, a, p)| (n.to_string(), split_list(a), split_list(p)))
            .collect(),
        "desk80" => DESK80
            .iter()
            .map(|(n, f)| {
                let partners = split_list(f.partners()).into_iter().filter(|p| p != n).collect();
                (n.to_string(), split_list(f.attributes()), partners)
            })
            .collect(),
        other => {
            let path = Path::new(other);
            if !path.is_file() {
                return Err(Error::UnknownPool(other.to_string()));
            }
            return parse_pool_file(&std::fs::read_to_string(path)?);
        }
    };
    Ok(assign_ids(raw))
}

fn assign_ids(raw: Vec<(String, Vec<String>, Vec<String>)>) -> Vec<EntityCategory> {
    let mut seen = BTreeSet::new();
    raw.into_iter()
        .filter(|(n, _, _)| seen.insert(n.clone()))
        .enumerate()
        .map(|(i, (name, attribute_vocab, relation_partners))| EntityCategory {
            id: i as u64,
            name,
            attribute_vocab,
            relation_partners,
        })
        .collect()
}

/// Parses `name | attr1, attr2 | partner1, partner2` lines. Blank lines and
/// `#` comments are skipped; duplicate names keep their first entry.
pub fn parse_pool_file(contents: &str) -> Result<Vec<EntityCategory>> {
    let mut raw = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::MalformedPool {
                line: line_no,
                reason: format!("expected 2 or 3 `|`-separated fields, found {}", fields.len()),
            });
        }
        let name = fields[0].split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        if name.is_empty() {
            return Err(Error::MalformedPool {
                line: line_no,
                reason: "empty category name".into(),
            });
        }
        let attrs = split_list(fields[1]);
        if attrs.is_empty() {
            return Err(Error::MalformedPool {
                line: line_no,
                reason: format!("category `{name}` has no attributes"),
            });
        }
        if let Some(bad) = attrs.iter().find(|a| a.contains(char::is_whitespace)) {
            return Err(Error::MalformedPool {
                line: line_no,
                reason: format!("attribute `{bad}` must be a single word"),
            });
        }
        let partners = fields.get(2).map(|f| split_list(f)).unwrap_or_default();
        raw.push((line_no, name, attrs, partners));
    }
    if raw.is_empty() {
        return Err(Error::EmptyPool);
    }
    // Attribute words may not double as single-word nouns.
    let nouns: BTreeSet<&str> = raw
        .iter()
        .flat_map(|(_, n, _, p)| std::iter::once(n.as_str()).chain(p.iter().map(String::as_str)))
        .collect();
    for (line_no, _, attrs, _) in &raw {
        if let Some(a) = attrs.iter().find(|a| nouns.contains(a.as_str())) {
            return Err(Error::MalformedPool {
                line: *line_no,
                reason: format!("attribute `{a}` is also a noun"),
            });
        }
    }
    Ok(assign_ids(raw.into_iter().map(|(_, n, a, p)| (n, a, p)).collect()))
}

pub fn find_category<'a>(pool: &'a [EntityCategory], name: &str) -> Option<&'a EntityCategory> {
    pool.iter().find(|c| c.name == name)
}

/// Attribute vocabulary of `noun`, falling back to generic words for nouns
/// outside the pool.
pub fn attribute_vocab_for(pool: &[EntityCategory], noun: &str) -> Vec<String> {
    find_category(pool, noun)
        .map(|c| c.attribute_vocab.clone())
        .unwrap_or_else(|| langparse::GENERIC_ATTRIBUTES.iter().map(|s| s.to_string()).collect())
}

pub fn render_llm_prompt(category: &EntityCategory, spec: &DescriptionSpec) -> String {
    format!(
        "Please list {nd} plausible visual object descriptions for {class} that are around {nw} words in length. \
         Consider incorporating diverse visual attributes, actions, and spatial or semantic relations with other objects in each description.",
        nd = spec.num_descriptions,
        class = category.name,
        nw = spec.target_length_words,
    )
}

fn article_for(word: &str) -> &'static str {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

struct NounPhraseDraft {
    noun: String,
    adjectives: Vec<String>,
    definite: bool,
}

impl NounPhraseDraft {
    fn sample(rng: &mut ChaCha8Rng, noun: &str, vocab: &[String], grammar: &GrammarConfig) -> Self {
        let max = grammar.max_adjectives.min(vocab.len());
        let k = rng.random_range(0..=max);
        let mut idx = sample(rng, vocab.len(), k).into_vec();
        idx.sort_unstable();
        Self {
            noun: noun.to_string(),
            adjectives: idx.into_iter().map(|i| vocab[i].clone()).collect(),
            definite: rng.random_bool(grammar.definite_prob),
        }
    }

    fn tokens(&self) -> Vec<String> {
        let first = self.adjectives.first().map(String::as_str).unwrap_or(&self.noun);
        let det = if self.definite { "the" } else { article_for(first) };
        std::iter::once(det.to_string())
            .chain(self.adjectives.iter().cloned())
            .chain(self.noun.split_whitespace().map(str::to_string))
            .collect()
    }
}

struct Draft {
    subject: NounPhraseDraft,
    participle: Option<&'static str>,
    clauses: Vec<(Relation, NounPhraseDraft)>,
}

/// Tokens, subject span and non-subject spans.
type Rendered = (Vec<String>, (usize, usize), Vec<(usize, usize)>);

impl Draft {
    fn render(&self) -> Rendered {
        let mut tokens = self.subject.tokens();
        let subject_span = (0, tokens.len());
        if let Some(p) = self.participle {
            tokens.push(p.to_string());
        }
        let mut spans = Vec::new();
        for (rel, np) in &self.clauses {
            tokens.extend(rel.words().iter().map(|w| w.to_string()));
            let start = tokens.len();
            tokens.extend(np.tokens());
            spans.push((start, tokens.len()));
        }
        (tokens, subject_span, spans)
    }
}

fn choose_weighted(rng: &mut ChaCha8Rng, items: &[(Relation, f64)]) -> Relation {
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    let mut x = rng.random_range(0.0..total);
    for &(r, w) in items {
        if x < w {
            return r;
        }
        x -= w;
    }
    items.last().expect("non-empty relations").0
}

const STRUCTURE_TRIES: usize = 256;

fn sample_draft(
    rng: &mut ChaCha8Rng,
    category: &EntityCategory,
    pool: &[EntityCategory],
    spec: &DescriptionSpec,
) -> Option<Draft> {
    let grammar = &spec.grammar;
    let relations = grammar.active_relations();
    let partners: Vec<&String> = category
        .relation_partners
        .iter()
        .filter(|p| **p != category.name)
        .collect();
    let max_clauses = if relations.is_empty() {
        0
    } else {
        grammar.max_clauses.min(partners.len())
    };
    let nw = spec.target_length_words;
    for _ in 0..STRUCTURE_TRIES {
        let n_clauses = rng.random_range(0..=max_clauses);
        let subject = NounPhraseDraft::sample(rng, &category.name, &category.attribute_vocab, grammar);
        let participle = rng
            .random_bool(grammar.participle_prob)
            .then(|| PARTICIPLES[rng.random_range(0..PARTICIPLES.len())]);
        let chosen = sample(rng, partners.len(), n_clauses).into_vec();
        let clauses = chosen
            .into_iter()
            .map(|pi| {
                let rel = choose_weighted(rng, &relations);
                let noun = partners[pi];
                let vocab = attribute_vocab_for(pool, noun);
                (rel, NounPhraseDraft::sample(rng, noun, &vocab, grammar))
            })
            .collect();
        let draft = Draft {
            subject,
            participle,
            clauses,
        };
        let len = draft.render().0.len();
        if len + 2 >= nw && len <= nw + 2 {
            return Some(draft);
        }
    }
    None
}

fn poly_mul(a: &[u128], b: &[u128]) -> Vec<u128> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0u128; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] = out[i + j].saturating_add(x.saturating_mul(y));
        }
    }
    out
}

fn poly_add(a: &mut Vec<u128>, b: &[u128]) {
    if a.len() < b.len() {
        a.resize(b.len(), 0);
    }
    for (x, &y) in a.iter_mut().zip(b) {
        *x = x.saturating_add(y);
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

/// Length-indexed count of distinct noun phrases for a noun.
fn np_poly(noun: &str, vocab_len: usize, grammar: &GrammarConfig) -> Vec<u128> {
    let noun_len = noun.split_whitespace().count();
    let max_adj = grammar.max_adjectives;
    // a/an versus the
    let det_choices = if grammar.definite_prob > 0.0 && grammar.definite_prob < 1.0 { 2 } else { 1 };
    let mut p = vec![0u128; 1 + noun_len + max_adj + 1];
    for a in 0..=max_adj.min(vocab_len) {
        p[1 + a + noun_len] += det_choices * binomial(vocab_len, a);
    }
    p
}

/// Exact number of distinct descriptions the grammar can realize for
/// `category` within `NW ± 2` words.
pub fn achievable_realizations(
    category: &EntityCategory,
    pool: &[EntityCategory],
    spec: &DescriptionSpec,
) -> u128 {
    let grammar = &spec.grammar;
    let mut base = np_poly(&category.name, category.attribute_vocab.len(), grammar);
    let mut participle = vec![1u128, PARTICIPLES.len() as u128];
    if grammar.participle_prob <= 0.0 {
        participle.truncate(1);
    } else if grammar.participle_prob >= 1.0 {
        participle[0] = 0;
    }
    base = poly_mul(&base, &participle);

    let relations = grammar.active_relations();
    let mut rel_poly = vec![0u128; 3];
    for (r, _) in &relations {
        rel_poly[r.words().len()] += 1;
    }
    let partners: Vec<&String> = category
        .relation_partners
        .iter()
        .filter(|p| **p != category.name)
        .collect();
    let max_k = if relations.is_empty() {
        0
    } else {
        grammar.max_clauses.min(partners.len())
    };
    // dp[k] = generating polynomial over unordered k-subsets of partners.
    let mut dp: Vec<Vec<u128>> = vec![Vec::new(); max_k + 1];
    dp[0] = vec![1];
    for p in &partners {
        let vocab = attribute_vocab_for(pool, p);
        let clause = poly_mul(&rel_poly, &np_poly(p, vocab.len(), grammar));
        for k in (1..=max_k).rev() {
            if dp[k - 1].is_empty() {
                continue;
            }
            let add = poly_mul(&dp[k - 1], &clause);
            poly_add(&mut dp[k], &add);
        }
    }
    let mut total_poly = Vec::new();
    let mut factorial = 1u128;
    for (k, poly) in dp.iter().enumerate() {
        if k > 0 {
            factorial = factorial.saturating_mul(k as u128);
        }
        if poly.is_empty() {
            continue;
        }
        let ordered: Vec<u128> = poly.iter().map(|c| c.saturating_mul(factorial)).collect();
        poly_add(&mut total_poly, &poly_mul(&base, &ordered));
    }
    let nw = spec.target_length_words;
    let lo = nw.saturating_sub(2);
    total_poly
        .iter()
        .enumerate()
        .filter(|(len, _)| *len >= lo && *len <= nw + 2)
        .fold(0u128, |acc, (_, &c)| acc.saturating_add(c))
}

/// Generates exactly `ND` distinct descriptions of `category`.
///
/// `pool` supplies attribute vocabularies for relation partners. Attempt `i`
/// draws from seed `derive(derive(spec.seed, category.id), i)`, so results do
/// not depend on which thread runs which category.
pub fn generate_descriptions(
    category: &EntityCategory,
    pool: &[EntityCategory],
    spec: &DescriptionSpec,
) -> Result<Vec<ObjectDescription>> {
    spec.validate()?;
    let nd = spec.num_descriptions;
    if nd == 0 {
        return Ok(Vec::new());
    }
    if category.attribute_vocab.is_empty() {
        return Err(Error::InvalidSpec(format!("category `{}` has no attributes", category.name)));
    }
    let achievable = achievable_realizations(category, pool, spec);
    let insufficient = || Error::InsufficientRealizations {
        category: category.name.clone(),
        requested: nd,
        achievable,
    };
    if achievable < nd as u128 {
        return Err(insufficient());
    }
    let base = seed::derive(spec.seed, category.id);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(nd);
    for attempt in 0..(50 * nd) as u64 {
        let item_seed = seed::derive(base, attempt);
        let mut rng = seed::rng(item_seed);
        let Some(draft) = sample_draft(&mut rng, category, pool, spec) else {
            continue;
        };
        let (tokens, subject_span, nonsubject_spans) = draft.render();
        let text = tokens.join(" ");
        if !seen.insert(text.clone()) {
            continue;
        }
        out.push(ObjectDescription {
            id: category.id * nd as u64 + out.len() as u64,
            category_id: category.id,
            text,
            seed: item_seed,
            provenance: Provenance::Procedural,
            subject_span,
            nonsubject_spans,
        });
        if out.len() == nd {
            return Ok(out);
        }
    }
    Err(insufficient())
}

/// Descriptions for every category of the pool, in category order.
pub fn generate_corpus(pool: &[EntityCategory], spec: &DescriptionSpec) -> Result<Vec<ObjectDescription>> {
    let mut all = Vec::new();
    for c in pool {
        all.extend(generate_descriptions(c, pool, spec)?);
    }
    Ok(all)
}

/// Text source behind the rendered prompt, e.g. an LLM client.
pub trait TextBackend {
    fn complete(&self, prompt: &str) -> Result<Vec<String>>;
}

/// Wraps backend lines as external descriptions. Spans come from the parser
/// when a line parses and are left empty otherwise; text is kept verbatim.
pub fn descriptions_from_backend(
    category: &EntityCategory,
    spec: &DescriptionSpec,
    backend: &dyn TextBackend,
    parser: &Parser,
) -> Result<Vec<ObjectDescription>> {
    let prompt = render_llm_prompt(category, spec);
    let lines = backend.complete(&prompt)?;
    Ok(lines
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, text)| {
            let (subject_span, nonsubject_spans) = match parser.parse(&text) {
                Ok(t) => (
                    t.subject().span(),
                    t.non_subjects().map(|p| p.span()).collect(),
                ),
                Err(_) => ((0, 0), Vec::new()),
            };
            ObjectDescription {
                id: category.id * spec.num_descriptions.max(1) as u64 + i as u64,
                category_id: category.id,
                text,
                seed: spec.seed,
                provenance: Provenance::External,
                subject_span,
                nonsubject_spans,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionCounts {
    pub id: u64,
    pub nouns: usize,
    pub adjectives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextStats {
    pub per_description: Vec<DescriptionCounts>,
    pub count: usize,
    /// Rounded to 2 decimals.
    pub mean_nouns: f64,
    pub mean_adjectives: f64,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Noun and adjective counts from parse trees.
pub fn text_stats(descriptions: &[ObjectDescription], parser: &Parser) -> Result<TextStats> {
    let mut per = Vec::with_capacity(descriptions.len());
    for d in descriptions {
        let tree = parser.parse(&d.text).map_err(|e| Error::UnparseableDescription {
            id: d.id,
            source: Box::new(e),
        })?;
        per.push(DescriptionCounts {
            id: d.id,
            nouns: tree.phrases.len(),
            adjectives: tree.phrases.iter().map(|p| p.modifiers.len()).sum(),
        });
    }
    let n = per.len();
    let mean = |f: fn(&DescriptionCounts) -> usize| {
        if n == 0 {
            0.0
        } else {
            round2(per.iter().map(f).sum::<usize>() as f64 / n as f64)
        }
    };
    Ok(TextStats {
        mean_nouns: mean(|c| c.nouns),
        mean_adjectives: mean(|c| c.adjectives),
        count: n,
        per_description: per,
    })
}
