//! Query assembly and compositional alignment targets.
//!
//! A query is a list of text items separated by `.`; the target is an
//! `N × M` binary matrix between proposals and flattened query tokens, with
//! a mask that removes separator columns from the loss.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::corpus::ObjectDescription;
use crate::labeling::PseudoTriplet;
use crate::langparse::{self, Parser};
use crate::scenegen::Scene;
use crate::{seed, Error, Result};

pub const SEPARATOR: &str = ".";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    PositiveDescription,
    IntraClassNegative,
    StructuralPositive,
    DetectionCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryItem {
    pub kind: ItemKind,
    pub tokens: Vec<String>,
    /// For structural positives, the phrase span inside the positive description.
    pub span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub items: Vec<QueryItem>,
    pub flat_tokens: Vec<String>,
    /// `(item, position within item)` per flat token; `None` for separators.
    pub token_map: Vec<Option<(usize, usize)>>,
}

impl Query {
    pub fn from_items(items: Vec<QueryItem>) -> Self {
        let mut flat_tokens = Vec::new();
        let mut token_map = Vec::new();
        for (i, item) in items.iter().enumerate() {
            if i > 0 {
                flat_tokens.push(SEPARATOR.to_string());
                token_map.push(None);
            }
            for (j, t) in item.tokens.iter().enumerate() {
                flat_tokens.push(t.clone());
                token_map.push(Some((i, j)));
            }
        }
        Self {
            items,
            flat_tokens,
            token_map,
        }
    }

    pub fn len(&self) -> usize {
        self.flat_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat_tokens.is_empty()
    }

    pub fn item_kinds(&self) -> Vec<ItemKind> {
        self.items.iter().map(|i| i.kind).collect()
    }

    /// Flat column range of item `i`.
    pub fn columns(&self, item: usize) -> std::ops::Range<usize> {
        let start = self.token_map.iter().position(|m| matches!(m, Some((i, _)) if *i == item));
        match start {
            Some(s) => s..s + self.items[item].tokens.len(),
            None => 0..0,
        }
    }

    pub fn text(&self) -> String {
        self.flat_tokens.join(" ")
    }
}

/// Which training signals go into a query and how the target is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    /// Intra-class negatives per query.
    pub k_neg: usize,
    pub structural_positives: bool,
    /// Every subject box aligns to every token of the positive description;
    /// when false the naive phrase-grounding target is used instead.
    pub sentence_alignment: bool,
    /// Under sentence alignment, hold non-subject boxes at 0 on their own
    /// phrase inside the description; when false they get 1 there, as in
    /// plain phrase grounding.
    pub structural_negatives: bool,
    /// Leave the non-subject phrase columns at zero for subject boxes.
    pub exclude_nonsubject_from_subject: bool,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            k_neg: 2,
            structural_positives: true,
            sentence_alignment: true,
            structural_negatives: true,
            exclude_nonsubject_from_subject: false,
        }
    }
}

fn item(kind: ItemKind, tokens: Vec<String>, span: Option<(usize, usize)>) -> QueryItem {
    QueryItem { kind, tokens, span }
}

/// Positive description plus `k_neg` intra-class negatives sampled from the
/// other descriptions of the same category, plus (optionally) one structural
/// positive per present non-subject phrase, in seeded random order.
pub fn assemble_query(
    triplet: &PseudoTriplet,
    positive: &ObjectDescription,
    pool: &[ObjectDescription],
    signals: &SignalConfig,
    query_seed: u64,
    parser: &Parser,
) -> Result<Query> {
    let tree = parser.parse(&triplet.description)?;
    let mut rng = seed::rng(query_seed);
    let mut items = vec![item(ItemKind::PositiveDescription, tree.tokens.clone(), None)];

    let candidates: Vec<&ObjectDescription> = pool
        .iter()
        .filter(|d| d.category_id == positive.category_id && d.text != triplet.description)
        .collect();
    if candidates.len() < signals.k_neg {
        return Err(Error::InsufficientPool {
            category: positive.category_id,
            available: candidates.len(),
            needed: signals.k_neg,
        });
    }
    for d in candidates.choose_multiple(&mut rng, signals.k_neg) {
        items.push(item(ItemKind::IntraClassNegative, langparse::tokenize(&d.text), None));
    }

    if signals.structural_positives {
        for p in tree.non_subjects().filter(|p| !p.negated) {
            let tokens = tree.tokens[p.start_token..p.end_token].to_vec();
            items.push(item(ItemKind::StructuralPositive, tokens, Some(p.span())));
        }
    }
    items.shuffle(&mut rng);
    Ok(Query::from_items(items))
}

/// Detection-format query: every category name as its own item.
pub fn detection_query(categories: &[String]) -> Query {
    Query::from_items(
        categories
            .iter()
            .map(|c| item(ItemKind::DetectionCategory, langparse::tokenize(c), None))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentTarget {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols` 0/1 entries.
    pub matrix: Vec<u8>,
    pub loss_mask: Vec<u8>,
}

impl AlignmentTarget {
    fn zeros(rows: usize, query: &Query) -> Self {
        let cols = query.len();
        let mask_row: Vec<u8> = query.token_map.iter().map(|m| u8::from(m.is_some())).collect();
        Self {
            rows,
            cols,
            matrix: vec![0; rows * cols],
            loss_mask: mask_row.repeat(rows),
        }
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.matrix[r * self.cols + c]
    }

    fn set(&mut self, r: usize, c: usize, v: u8) {
        self.matrix[r * self.cols + c] = v;
    }

    pub fn mask(&self, r: usize, c: usize) -> u8 {
        self.loss_mask[r * self.cols + c]
    }

    pub fn ones(&self) -> usize {
        self.matrix.iter().filter(|&&v| v == 1).count()
    }
}

/// Builds `T` and its loss mask for `n_proposals` regions.
///
/// Sentence alignment: subject boxes get 1 on every positive-description
/// token, non-subject boxes stay 0 on their own phrase there; structural
/// positives are 1 for their phrase's boxes and 0 for subject boxes;
/// negatives are all 0; separators are masked out.
pub fn build_alignment_target(
    query: &Query,
    triplet: &PseudoTriplet,
    n_proposals: usize,
    signals: &SignalConfig,
    parser: &Parser,
) -> Result<AlignmentTarget> {
    let tree = parser.parse(&triplet.description)?;
    let n_tokens = tree.tokens.len();
    let subject_span = tree.subject().span();
    let nonsubject: Vec<(usize, usize)> = tree.non_subjects().map(|p| p.span()).collect();
    for a in &triplet.assignments {
        if a.proposal_index >= n_proposals {
            return Err(Error::Shape(format!(
                "proposal {} out of range for {} proposals",
                a.proposal_index, n_proposals
            )));
        }
        let (s, e) = a.span;
        if s >= e || e > n_tokens || !tree.phrases.iter().any(|p| p.span() == a.span) {
            return Err(Error::SpanMismatch { start: s, end: e });
        }
    }
    let subject_boxes: BTreeSet<usize> = triplet
        .assignments
        .iter()
        .filter(|a| a.span == subject_span)
        .map(|a| a.proposal_index)
        .collect();

    let mut t = AlignmentTarget::zeros(n_proposals, query);
    for (idx, it) in query.items.iter().enumerate() {
        let cols = query.columns(idx);
        match it.kind {
            ItemKind::PositiveDescription => {
                if it.tokens.len() != n_tokens {
                    return Err(Error::Shape("positive item does not match the description".into()));
                }
                if signals.sentence_alignment {
                    for &b in &subject_boxes {
                        for j in 0..n_tokens {
                            let in_nonsubject = nonsubject.iter().any(|&(s, e)| (s..e).contains(&j));
                            if !(signals.exclude_nonsubject_from_subject && in_nonsubject) {
                                t.set(b, cols.start + j, 1);
                            }
                        }
                    }
                    let v = u8::from(!signals.structural_negatives);
                    for a in triplet.assignments.iter().filter(|a| a.span != subject_span) {
                        for j in a.span.0..a.span.1 {
                            t.set(a.proposal_index, cols.start + j, v);
                        }
                    }
                } else {
                    for a in &triplet.assignments {
                        for j in a.span.0..a.span.1 {
                            t.set(a.proposal_index, cols.start + j, 1);
                        }
                    }
                }
            }
            ItemKind::StructuralPositive => {
                let span = it.span.ok_or_else(|| Error::Shape("structural positive without span".into()))?;
                for a in triplet.assignments.iter().filter(|a| a.span == span) {
                    for c in cols.clone() {
                        t.set(a.proposal_index, c, 1);
                    }
                }
                for &b in &subject_boxes {
                    for c in cols.clone() {
                        t.set(b, c, 0);
                    }
                }
            }
            ItemKind::IntraClassNegative | ItemKind::DetectionCategory => {}
        }
    }
    Ok(t)
}

/// Detection-format target: a proposal aligns to its own category's tokens.
pub fn build_detection_target(query: &Query, scene: &Scene, n_proposals: usize) -> AlignmentTarget {
    let mut t = AlignmentTarget::zeros(n_proposals, query);
    for (idx, it) in query.items.iter().enumerate() {
        let name = it.tokens.join(" ");
        for (b, o) in scene.objects.iter().enumerate().take(n_proposals) {
            if o.category == name {
                for c in query.columns(idx) {
                    t.set(b, c, 1);
                }
            }
        }
    }
    t
}

fn bits(v: &[u8]) -> String {
    v.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
}

fn unbits(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            other => Err(Error::Shape(format!("invalid bit {other:?}"))),
        })
        .collect()
}

/// One line of `targets.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub scene_id: u64,
    pub flat_tokens: Vec<String>,
    pub item_kinds: Vec<ItemKind>,
    pub token_map: Vec<Option<(usize, usize)>>,
    pub rows: usize,
    /// Row-major bit string.
    pub target: String,
    pub mask: String,
}

impl TrainingRecord {
    pub fn new(scene_id: u64, query: &Query, target: &AlignmentTarget) -> Self {
        Self {
            scene_id,
            flat_tokens: query.flat_tokens.clone(),
            item_kinds: query.item_kinds(),
            token_map: query.token_map.clone(),
            rows: target.rows,
            target: bits(&target.matrix),
            mask: bits(&target.loss_mask),
        }
    }

    pub fn alignment_target(&self) -> Result<AlignmentTarget> {
        let cols = self.flat_tokens.len();
        let matrix = unbits(&self.target)?;
        let loss_mask = unbits(&self.mask)?;
        if matrix.len() != self.rows * cols || loss_mask.len() != matrix.len() {
            return Err(Error::Shape(format!(
                "target of length {} does not fit {}x{}",
                matrix.len(),
                self.rows,
                cols
            )));
        }
        Ok(AlignmentTarget {
            rows: self.rows,
            cols,
            matrix,
            loss_mask,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Provenance;
    use crate::labeling::{Assignment, LabelProvenance};

    fn desc(id: u64, text: &str) -> ObjectDescription {
        ObjectDescription {
            id,
            category_id: 0,
            text: text.into(),
            seed: 0,
            provenance: Provenance::Procedural,
            subject_span: (0, 2),
            nonsubject_spans: vec![],
        }
    }

    fn board_example() -> (PseudoTriplet, Vec<ObjectDescription>) {
        let triplet = PseudoTriplet {
            scene_id: 0,
            description: "an avocado lying on a cutting board".into(),
            assignments: vec![
                Assignment { proposal_index: 0, span: (0, 2) },
                Assignment { proposal_index: 1, span: (4, 7) },
            ],
            provenance: LabelProvenance::WeakToStrong,
        };
        let pool = vec![
            desc(0, "an avocado lying on a cutting board"),
            desc(1, "a green avocado on a plate"),
            desc(2, "a ripe avocado next to a knife"),
            desc(3, "an avocado inside a bowl"),
        ];
        (triplet, pool)
    }

    fn item_of(q: &Query, kind: ItemKind) -> usize {
        q.items.iter().position(|i| i.kind == kind).unwrap()
    }

    #[test]
    fn board_target_rules() {
        let (triplet, pool) = board_example();
        let parser = Parser::default();
        let signals = SignalConfig::default();
        let q = assemble_query(&triplet, &pool[0], &pool, &signals, 3, &parser).unwrap();
        assert_eq!(q.items.len(), 4);
        let t = build_alignment_target(&q, &triplet, 3, &signals, &parser).unwrap();

        let pos = q.columns(item_of(&q, ItemKind::PositiveDescription));
        let sp = q.columns(item_of(&q, ItemKind::StructuralPositive));
        for c in pos.clone() {
            assert_eq!(t.get(0, c), 1, "subject row on positive");
        }
        for j in 4..7 {
            assert_eq!(t.get(1, pos.start + j), 0, "board row on its own phrase");
        }
        for c in sp {
            assert_eq!(t.get(1, c), 1);
            assert_eq!(t.get(0, c), 0);
        }
        for (i, it) in q.items.iter().enumerate() {
            if it.kind == ItemKind::IntraClassNegative {
                for c in q.columns(i) {
                    assert!((0..3).all(|r| t.get(r, c) == 0));
                }
            }
        }
        for (c, m) in q.token_map.iter().enumerate() {
            assert_eq!(t.mask(0, c), u8::from(m.is_some()));
        }
        assert!((0..q.len()).all(|c| t.get(2, c) == 0));
    }

    #[test]
    fn intra_class_negatives_avoid_the_positive() {
        let (triplet, pool) = board_example();
        let parser = Parser::default();
        for s in 0..20 {
            let q = assemble_query(&triplet, &pool[0], &pool, &SignalConfig::default(), s, &parser).unwrap();
            for it in q.items.iter().filter(|i| i.kind == ItemKind::IntraClassNegative) {
                assert_ne!(it.tokens.join(" "), triplet.description);
            }
        }
    }

    #[test]
    fn insufficient_pool() {
        let (triplet, pool) = board_example();
        let signals = SignalConfig {
            k_neg: 4,
            ..Default::default()
        };
        let err = assemble_query(&triplet, &pool[0], &pool, &signals, 0, &Parser::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientPool { available: 3, needed: 4, .. }));
    }

    #[test]
    fn bad_span_is_rejected() {
        let (mut triplet, pool) = board_example();
        triplet.assignments.push(Assignment {
            proposal_index: 0,
            span: (2, 4),
        });
        let parser = Parser::default();
        let q = assemble_query(&triplet, &pool[0], &pool, &SignalConfig::default(), 0, &parser).unwrap();
        let err = build_alignment_target(&q, &triplet, 3, &SignalConfig::default(), &parser).unwrap_err();
        assert!(matches!(err, Error::SpanMismatch { start: 2, end: 4 }));
    }

    #[test]
    fn naive_target_uses_phrase_tokens_only() {
        let (triplet, pool) = board_example();
        let parser = Parser::default();
        let signals = SignalConfig {
            sentence_alignment: false,
            structural_positives: false,
            ..Default::default()
        };
        let q = assemble_query(&triplet, &pool[0], &pool, &signals, 0, &parser).unwrap();
        let t = build_alignment_target(&q, &triplet, 3, &signals, &parser).unwrap();
        let pos = q.columns(item_of(&q, ItemKind::PositiveDescription));
        let row0: Vec<u8> = pos.clone().map(|c| t.get(0, c)).collect();
        let row1: Vec<u8> = pos.map(|c| t.get(1, c)).collect();
        assert_eq!(row0, vec![1, 1, 0, 0, 0, 0, 0]);
        assert_eq!(row1, vec![0, 0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn exclusion_variant() {
        let (triplet, pool) = board_example();
        let parser = Parser::default();
        let signals = SignalConfig {
            exclude_nonsubject_from_subject: true,
            ..Default::default()
        };
        let q = assemble_query(&triplet, &pool[0], &pool, &signals, 0, &parser).unwrap();
        let t = build_alignment_target(&q, &triplet, 3, &signals, &parser).unwrap();
        let pos = q.columns(item_of(&q, ItemKind::PositiveDescription));
        let row0: Vec<u8> = pos.map(|c| t.get(0, c)).collect();
        assert_eq!(row0, vec![1, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn record_round_trip() {
        let (triplet, pool) = board_example();
        let parser = Parser::default();
        let q = assemble_query(&triplet, &pool[0], &pool, &SignalConfig::default(), 1, &parser).unwrap();
        let t = build_alignment_target(&q, &triplet, 3, &SignalConfig::default(), &parser).unwrap();
        let rec = TrainingRecord::new(0, &q, &t);
        let json = serde_json::to_string(&rec).unwrap();
        let back: TrainingRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.alignment_target().unwrap(), t);
    }
}
