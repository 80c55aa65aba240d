//! Pseudo-box generation from a compositionally weak detector.
//!
//! The weak-to-strong labeler queries the detector once per noun phrase and
//! re-assigns surviving boxes to that phrase's span; the grounding baseline
//! issues a single whole-description query and credits the subject span.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::iou;
use crate::langparse::{self, Parser, ParseTree};
use crate::scenegen::{RegionFeatures, Scene};
use crate::{seed, BBox, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub proposal_index: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    pub query_text: String,
}

/// Anything that scores scene proposals against a text query.
pub trait Detector: Sync {
    /// All proposals with their scores, best first.
    fn detect(&self, scene: &Scene, features: &RegionFeatures, query: &str) -> Result<Vec<Detection>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerConfig {
    /// p
    pub threshold_p: f64,
    pub max_dets_per_phrase: usize,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            threshold_p: 0.5,
            max_dets_per_phrase: 3,
        }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold_p) {
            return Err(Error::Config(format!("threshold_p must lie in [0, 1], got {}", self.threshold_p)));
        }
        Ok(())
    }
}

/// Words ignored by the bag-of-words scorer.
pub fn is_stopword(word: &str) -> bool {
    langparse::is_determiner(word)
        || langparse::is_participle(word)
        || word == "."
        || langparse::Relation::ALL.iter().any(|r| r.words().contains(&word))
}

pub fn content_words(query: &str) -> BTreeSet<String> {
    langparse::tokenize(query).into_iter().filter(|w| !is_stopword(w)).collect()
}

/// Compositionally blind detector over scene lexical profiles.
///
/// A region scores the cosine between the query's content-word set and its
/// lexical profile, damped by `gamma^max(0, |content| - l0)` for long queries,
/// plus uniform noise in `[0, noise_max]`. Background proposals score noise
/// only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BowDetector {
    pub gamma: f64,
    pub l0: usize,
    pub noise_max: f64,
    pub seed: u64,
}

impl Default for BowDetector {
    fn default() -> Self {
        Self {
            gamma: 0.93,
            l0: 4,
            noise_max: 0.05,
            seed: 0,
        }
    }
}

impl BowDetector {
    /// Noise-free score of a profile against a content-word set.
    pub fn lexical_score(&self, content: &BTreeSet<String>, profile: &BTreeSet<String>) -> f64 {
        if content.is_empty() || profile.is_empty() {
            return 0.0;
        }
        let shared = content.intersection(profile).count() as f64;
        let cosine = shared / ((content.len() * profile.len()) as f64).sqrt();
        let excess = content.len().saturating_sub(self.l0) as i32;
        cosine * self.gamma.powi(excess)
    }
}

impl Detector for BowDetector {
    fn detect(&self, scene: &Scene, features: &RegionFeatures, query: &str) -> Result<Vec<Detection>> {
        let content = content_words(query);
        if content.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let stream = seed::derive_tagged(self.seed, query, scene.scene_id);
        let mut rng = seed::rng(stream);
        let mut dets: Vec<Detection> = features
            .proposals
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let base = scene
                    .objects
                    .get(i)
                    .map(|o| self.lexical_score(&content, &o.lexical_profile()))
                    .unwrap_or(0.0);
                let eta = rng.random_range(0.0..=self.noise_max);
                Detection {
                    proposal_index: i,
                    bbox: *b,
                    score: (base + eta).clamp(0.0, 1.0),
                    query_text: query.to_string(),
                }
            })
            .collect();
        sort_detections(&mut dets);
        Ok(dets)
    }
}

/// Descending score, ties by proposal index.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.proposal_index.cmp(&b.proposal_index))
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelProvenance {
    WeakToStrong,
    GroundingBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub proposal_index: usize,
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoTriplet {
    pub scene_id: u64,
    pub description: String,
    pub assignments: Vec<Assignment>,
    pub provenance: LabelProvenance,
}

fn filtered(dets: Vec<Detection>, config: &LabelerConfig) -> impl Iterator<Item = Detection> {
    let p = config.threshold_p;
    dets.into_iter()
        .filter(move |d| d.score >= p)
        .take(config.max_dets_per_phrase)
}

/// Decomposes the description into one detection task per noun phrase.
///
/// Negated phrases name objects that must be absent and get no boxes.
pub fn weak_to_strong_label(
    scene: &Scene,
    features: &RegionFeatures,
    description: &str,
    detector: &dyn Detector,
    config: &LabelerConfig,
    parser: &Parser,
) -> Result<PseudoTriplet> {
    let tree = parser.parse(description)?;
    let mut assignments = BTreeSet::new();
    for phrase in tree.phrases.iter().filter(|p| !p.negated) {
        let query = tree.phrase_text(phrase);
        for d in filtered(detector.detect(scene, features, &query)?, config) {
            assignments.insert(Assignment {
                proposal_index: d.proposal_index,
                span: phrase.span(),
            });
        }
    }
    Ok(PseudoTriplet {
        scene_id: scene.scene_id,
        description: description.to_string(),
        assignments: assignments.into_iter().collect(),
        provenance: LabelProvenance::WeakToStrong,
    })
}

/// Single whole-description pass; every surviving box goes to the subject.
pub fn grounding_label(
    scene: &Scene,
    features: &RegionFeatures,
    description: &str,
    detector: &dyn Detector,
    config: &LabelerConfig,
    parser: &Parser,
) -> Result<PseudoTriplet> {
    let tree = parser.parse(description)?;
    let span = tree.subject().span();
    let assignments: BTreeSet<Assignment> = filtered(detector.detect(scene, features, &tree.text())?, config)
        .map(|d| Assignment {
            proposal_index: d.proposal_index,
            span,
        })
        .collect();
    Ok(PseudoTriplet {
        scene_id: scene.scene_id,
        description: description.to_string(),
        assignments: assignments.into_iter().collect(),
        provenance: LabelProvenance::GroundingBaseline,
    })
}

/// Fraction of the description's present noun phrases whose true object is
/// covered (IoU ≥ 0.5) by a box assigned to that phrase's span. Negated
/// phrases have no object and are not counted.
pub fn label_recall(triplet: &PseudoTriplet, scene: &Scene, parser: &Parser) -> Result<f64> {
    if triplet.scene_id != scene.scene_id {
        return Err(Error::SceneMismatch {
            expected: triplet.scene_id,
            actual: scene.scene_id,
        });
    }
    let tree = parser.parse(&triplet.description)?;
    Ok(recall_with_tree(triplet, scene, &tree))
}

fn recall_with_tree(triplet: &PseudoTriplet, scene: &Scene, tree: &ParseTree) -> f64 {
    let instances = scene.phrase_instances(tree);
    let mut total = 0usize;
    let mut covered = 0usize;
    for (i, (phrase, inst)) in tree.phrases.iter().zip(&instances).enumerate() {
        let Some(inst) = inst else { continue };
        let targets: Vec<BBox> = if i == 0 {
            scene
                .referent_ids
                .iter()
                .filter_map(|id| scene.object(*id).map(|o| o.bbox))
                .collect()
        } else {
            scene.object(*inst).map(|o| vec![o.bbox]).unwrap_or_default()
        };
        total += 1;
        let hit = triplet
            .assignments
            .iter()
            .filter(|a| a.span == phrase.span())
            .filter_map(|a| scene.objects.get(a.proposal_index).map(|o| o.bbox))
            .any(|b| targets.iter().any(|t| iou(&b, t) >= 0.5));
        covered += usize::from(hit);
    }
    if total == 0 {
        0.0
    } else {
        covered as f64 / total as f64
    }
}
