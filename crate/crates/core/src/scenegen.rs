//! Symbolic scenes standing in for generated images.
//!
//! A scene is a set of labelled boxes with attributes and relation edges.
//! Region features are sums of word-keyed unit vectors plus a box encoding and
//! Gaussian noise, one row per object followed by pure-noise background rows.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, attribute_vocab_for, DescriptionSpec, EntityCategory, ObjectDescription};
use crate::evalkit::{BenchmarkInstance, BenchmarkScene, CategoryLabel, DescriptionLabel, LabelAssignment};
use crate::geometry::iou;
use crate::langparse::{ParseTree, Parser, PhraseSpan, Relation};
use crate::{seed, BBox, Error, Result};

/// Vertical adjacency tolerance for `on` / `under`.
pub const ADJACENCY_EPS: f64 = 0.02;
/// Largest gap for `near` / `next to`.
pub const NEAR_GAP: f64 = 0.1;
/// Largest IoU for `with` / `holding`.
pub const WITH_MAX_IOU: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub instance_id: u64,
    pub category: String,
    pub attributes: BTreeSet<String>,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

impl SceneObject {
    /// Category word(s) together with the attributes.
    pub fn lexical_profile(&self) -> BTreeSet<String> {
        self.category
            .split_whitespace()
            .map(str::to_string)
            .chain(self.attributes.iter().cloned())
            .collect()
    }

    pub fn matches(&self, phrase: &PhraseSpan) -> bool {
        self.category == phrase.noun && phrase.modifiers.iter().all(|m| self.attributes.contains(m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(u64, Relation, u64)", into = "(u64, Relation, u64)")]
pub struct RelationEdge {
    pub subject_id: u64,
    pub relation: Relation,
    pub object_id: u64,
}

impl From<(u64, Relation, u64)> for RelationEdge {
    fn from((subject_id, relation, object_id): (u64, Relation, u64)) -> Self {
        Self {
            subject_id,
            relation,
            object_id,
        }
    }
}

impl From<RelationEdge> for (u64, Relation, u64) {
    fn from(e: RelationEdge) -> Self {
        (e.subject_id, e.relation, e.object_id)
    }
}

/// `objects[0]` is the described subject; the objects created for the
/// description's non-negated clauses follow in clause order, and the first
/// relation edges link them to the subject in the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub description_id: u64,
    pub image_seed: u64,
    pub objects: Vec<SceneObject>,
    pub relation_edges: Vec<RelationEdge>,
    pub referent_ids: BTreeSet<u64>,
}

impl Scene {
    pub fn object(&self, instance_id: u64) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.instance_id == instance_id)
    }

    pub fn index_of(&self, instance_id: u64) -> Option<usize> {
        self.objects.iter().position(|o| o.instance_id == instance_id)
    }

    /// Instance standing for each phrase of `tree` (subject first); `None`
    /// for negated phrases.
    pub fn phrase_instances(&self, tree: &ParseTree) -> Vec<Option<u64>> {
        let subject = self.objects.first().map(|o| o.instance_id);
        let mut edges = self
            .relation_edges
            .iter()
            .filter(move |e| Some(e.subject_id) == subject);
        tree.phrases
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i == 0 {
                    subject
                } else if p.negated {
                    None
                } else {
                    edges.next().map(|e| e.object_id)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistractorConfig {
    /// Probability of a same-category, different-attribute confuser (ρ).
    pub confuser_prob: f64,
    /// Probability that a `without X` scene gets a same-category object with X.
    pub negation_confuser_prob: f64,
    pub max_fillers: usize,
    /// Undescribed attributes added to every object, uniform in `0..=max`.
    pub extra_attributes_max: usize,
    pub max_retries: usize,
}

impl Default for DistractorConfig {
    fn default() -> Self {
        Self {
            confuser_prob: 0.5,
            negation_confuser_prob: 0.8,
            max_fillers: 2,
            extra_attributes_max: 4,
            max_retries: 50,
        }
    }
}

/// Geometric predicate of `relation` with `subject` as the relation's subject.
pub fn relation_holds(relation: Relation, subject: &BBox, object: &BBox) -> bool {
    let min_w = subject.w.min(object.w);
    match relation {
        Relation::On => {
            (subject.bottom() - object.y).abs() <= ADJACENCY_EPS
                && subject.x_overlap(object) >= 0.5 * min_w
        }
        Relation::Under => {
            (object.bottom() - subject.y).abs() <= ADJACENCY_EPS
                && subject.x_overlap(object) >= 0.5 * min_w
        }
        Relation::Near | Relation::NextTo => {
            subject.intersection(object) == 0.0 && subject.gap(object) <= NEAR_GAP
        }
        Relation::Inside => subject.inside(object),
        Relation::With | Relation::Holding => {
            let v = iou(subject, object);
            v > 0.0 && v <= WITH_MAX_IOU
        }
        // `without X` is false exactly when some X overlaps the subject.
        Relation::Without => subject.intersection(object) == 0.0,
    }
}

/// Objects satisfying the whole description: the subject phrase plus every
/// clause, with `without X` requiring that no matching X overlaps.
pub fn evaluate_referents(tree: &ParseTree, objects: &[SceneObject]) -> BTreeSet<u64> {
    let subject = tree.subject();
    objects
        .iter()
        .filter(|o| o.matches(subject))
        .filter(|o| {
            tree.non_subjects().all(|np| {
                let mut others = objects
                    .iter()
                    .filter(|x| x.instance_id != o.instance_id && x.matches(np));
                let rel = np.governing_relation.unwrap_or(Relation::Near);
                if np.negated {
                    others.all(|x| relation_holds(Relation::Without, &o.bbox, &x.bbox))
                } else {
                    others.any(|x| relation_holds(rel, &o.bbox, &x.bbox))
                }
            })
        })
        .map(|o| o.instance_id)
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn random_box(rng: &mut ChaCha8Rng, min: f64, max: f64) -> BBox {
    let w = uniform(rng, min, max);
    let h = uniform(rng, min, max);
    BBox::new(uniform(rng, 0.0, 1.0 - w), uniform(rng, 0.0, 1.0 - h), w, h)
}

/// Box for an object standing in `relation` to `subject`, not yet checked
/// against the unit square.
fn place_partner(rng: &mut ChaCha8Rng, relation: Relation, s: &BBox) -> BBox {
    match relation {
        Relation::On | Relation::Under => {
            let w = uniform(rng, 0.18, 0.4);
            let h = uniform(rng, 0.06, 0.18);
            let cx = s.x + s.w / 2.0 + uniform(rng, -0.25, 0.25) * s.w.min(w);
            let y = if relation == Relation::On { s.bottom() } else { s.y - h };
            BBox::new(cx - w / 2.0, y, w, h)
        }
        Relation::Near | Relation::NextTo => {
            let w = uniform(rng, 0.08, 0.22);
            let h = uniform(rng, 0.08, 0.22);
            let g = uniform(rng, 0.01, 0.08);
            let y = s.y + uniform(rng, -0.1, 0.1);
            let x = if rng.random_bool(0.5) { s.right() + g } else { s.x - g - w };
            BBox::new(x, y, w, h)
        }
        Relation::Inside => {
            let m: [f64; 4] = std::array::from_fn(|_| uniform(rng, 0.02, 0.1));
            BBox::new(s.x - m[0], s.y - m[1], s.w + m[0] + m[2], s.h + m[1] + m[3])
        }
        Relation::With | Relation::Holding | Relation::Without => {
            let w = uniform(rng, 0.08, 0.2);
            let h = uniform(rng, 0.08, 0.2);
            let fx = uniform(rng, 0.25, 0.5);
            let fy = uniform(rng, 0.25, 0.5);
            BBox::new(s.right() - fx * w, s.bottom() - fy * h, w, h)
        }
    }
}

fn sample_attributes(rng: &mut ChaCha8Rng, vocab: &[String], k: usize) -> BTreeSet<String> {
    vocab.choose_multiple(rng, k.min(vocab.len())).cloned().collect()
}

/// Appearance words no description uses. They enter lexical profiles and
/// features as undescribed detail, never as referring attributes.
pub const APPEARANCE_WORDS: [&str; 12] = [
    "shiny", "matte", "worn", "glossy", "dusty", "textured", "faded", "scuffed", "polished", "weathered",
    "speckled", "smudged",
];

fn with_extras(rng: &mut ChaCha8Rng, mut attrs: BTreeSet<String>, max_extra: usize) -> BTreeSet<String> {
    let k = rng.random_range(0..=max_extra);
    for a in APPEARANCE_WORDS.choose_multiple(rng, k.min(APPEARANCE_WORDS.len())) {
        attrs.insert(a.to_string());
    }
    attrs
}

/// Identifiers stamped on a synthesized scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneIds {
    pub scene_id: u64,
    pub description_id: u64,
}

/// Materializes the scene a description talks about.
///
/// Deterministic for `(tree, image_seed)`; `pool` provides vocabularies for
/// partner objects and filler categories.
pub fn synthesize_scene(
    tree: &ParseTree,
    category: &EntityCategory,
    pool: &[EntityCategory],
    ids: SceneIds,
    image_seed: u64,
    config: &DistractorConfig,
) -> Result<Scene> {
    let mut rng = seed::rng(seed::derive(image_seed, seed::fnv1a(tree.text().as_bytes())));
    let attempts = config.max_retries.max(1);
    for _ in 0..attempts {
        if let Some(scene) = try_synthesize(&mut rng, tree, category, pool, ids, image_seed, config) {
            return Ok(scene);
        }
    }
    Err(Error::UnsatisfiablePacking { attempts })
}

fn try_synthesize(
    rng: &mut ChaCha8Rng,
    tree: &ParseTree,
    category: &EntityCategory,
    pool: &[EntityCategory],
    ids: SceneIds,
    image_seed: u64,
    config: &DistractorConfig,
) -> Option<Scene> {
    let subject_np = tree.subject();
    let subject_vocab = if category.name == subject_np.noun {
        category.attribute_vocab.clone()
    } else {
        attribute_vocab_for(pool, &subject_np.noun)
    };
    let mut objects = Vec::new();
    let mut edges = Vec::new();
    let push = |objects: &mut Vec<SceneObject>, category: &str, attributes, bbox| {
        let id = objects.len() as u64;
        objects.push(SceneObject {
            instance_id: id,
            category: category.to_string(),
            attributes,
            bbox,
        });
        id
    };

    let subject_box = random_box(rng, 0.12, 0.28);
    let subject_attrs = with_extras(
        rng,
        subject_np.modifiers.iter().cloned().collect(),
        config.extra_attributes_max,
    );
    let subject_id = push(&mut objects, &subject_np.noun, subject_attrs, subject_box);

    let mut negated = Vec::new();
    for np in tree.non_subjects() {
        if np.negated {
            negated.push(np);
            continue;
        }
        let rel = np.governing_relation?;
        let bbox = place_partner(rng, rel, &subject_box);
        if !bbox.is_valid() || !relation_holds(rel, &subject_box, &bbox) {
            return None;
        }
        let attrs = with_extras(rng, np.modifiers.iter().cloned().collect(), config.extra_attributes_max);
        let id = push(&mut objects, &np.noun, attrs, bbox);
        edges.push(RelationEdge {
            subject_id,
            relation: rel,
            object_id: id,
        });
    }

    for np in negated {
        if !rng.random_bool(config.negation_confuser_prob) {
            continue;
        }
        let cbox = random_box(rng, 0.12, 0.28);
        let xbox = place_partner(rng, Relation::With, &cbox);
        if !xbox.is_valid() {
            return None;
        }
        let attrs = with_extras(rng, subject_np.modifiers.iter().cloned().collect(), config.extra_attributes_max);
        let cid = push(&mut objects, &subject_np.noun, attrs, cbox);
        let xattrs = with_extras(rng, np.modifiers.iter().cloned().collect(), config.extra_attributes_max);
        let xid = push(&mut objects, &np.noun, xattrs, xbox);
        edges.push(RelationEdge {
            subject_id: cid,
            relation: Relation::With,
            object_id: xid,
        });
    }

    if rng.random_bool(config.confuser_prob) {
        // Same category, attributes that miss at least one described modifier.
        let k = rng.random_range(1..=3usize);
        let mut attrs = sample_attributes(rng, &subject_vocab, k);
        if !subject_np.modifiers.is_empty() {
            let keep = subject_np.modifiers.iter().filter(|m| attrs.contains(*m)).count();
            if keep == subject_np.modifiers.len() {
                attrs.remove(&subject_np.modifiers[0]);
            }
        }
        push(&mut objects, &subject_np.noun, attrs, random_box(rng, 0.1, 0.26));
    }

    let mentioned: BTreeSet<&str> = tree.phrases.iter().map(|p| p.noun.as_str()).collect();
    let fillers: Vec<&EntityCategory> = pool.iter().filter(|c| !mentioned.contains(c.name.as_str())).collect();
    let n_fillers = rng.random_range(0..=config.max_fillers);
    for c in fillers.choose_multiple(rng, n_fillers.min(fillers.len())) {
        let k = rng.random_range(0..=2usize);
        let attrs = sample_attributes(rng, &c.attribute_vocab, k);
        let bbox = random_box(rng, 0.08, 0.25);
        push(&mut objects, &c.name, attrs, bbox);
    }

    let referent_ids = evaluate_referents(tree, &objects);
    if !referent_ids.contains(&subject_id) {
        return None;
    }
    Some(Scene {
        scene_id: ids.scene_id,
        description_id: ids.description_id,
        image_seed,
        objects,
        relation_edges: edges,
        referent_ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub d: usize,
    pub background: usize,
    pub sigma: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            d: 64,
            background: 2,
            sigma: 0.05,
        }
    }
}

const BOX_SCALE: f64 = 0.5;

/// Fixed unit vector keyed by `word`.
pub fn word_vector(word: &str, d: usize) -> Vec<f64> {
    let mut rng = seed::rng(seed::derive(seed::fnv1a(word.as_bytes()), d as u64));
    let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Box-position encoding added to the last four feature components.
pub fn box_encoding(b: &BBox) -> [f64; 4] {
    [
        BOX_SCALE * (b.x + b.w / 2.0),
        BOX_SCALE * (b.y + b.h / 2.0),
        BOX_SCALE * b.w,
        BOX_SCALE * b.h,
    ]
}

/// Noise-free feature row of an object.
pub fn keyed_row(object: &SceneObject, d: usize) -> Vec<f64> {
    let mut row = vec![0.0; d];
    for w in object.lexical_profile() {
        for (r, v) in row.iter_mut().zip(word_vector(&w, d)) {
            *r += v;
        }
    }
    for (r, e) in row[d - 4..].iter_mut().zip(box_encoding(&object.bbox)) {
        *r += e;
    }
    row
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    /// Scene objects in order, then background boxes.
    pub proposals: Vec<BBox>,
    /// Row-major `N × d`.
    pub features: Vec<f64>,
    pub d: usize,
    pub noise_seed: u64,
}

impl RegionFeatures {
    pub fn rows(&self) -> usize {
        self.proposals.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    /// Header `(N, d)` as little-endian u32, then row-major little-endian f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&(self.rows() as u32).to_le_bytes())?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        for v in &self.features {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads the matrix written by [`write_binary`](Self::write_binary).
    pub fn read_matrix<R: Read>(mut r: R) -> std::io::Result<(usize, usize, Vec<f64>)> {
        let mut u = [0u8; 4];
        r.read_exact(&mut u)?;
        let n = u32::from_le_bytes(u) as usize;
        r.read_exact(&mut u)?;
        let d = u32::from_le_bytes(u) as usize;
        let mut data = Vec::with_capacity(n * d);
        let mut f = [0u8; 8];
        for _ in 0..n * d {
            r.read_exact(&mut f)?;
            data.push(f64::from_le_bytes(f));
        }
        Ok((n, d, data))
    }
}

pub fn render_features(scene: &Scene, noise_seed: u64, config: &FeatureConfig) -> Result<RegionFeatures> {
    let d = config.d;
    if d < 8 {
        return Err(Error::Config(format!("feature width must be at least 8, got {d}")));
    }
    let mut rng = seed::rng(noise_seed);
    let mut proposals: Vec<BBox> = scene.objects.iter().map(|o| o.bbox).collect();
    for _ in 0..config.background {
        proposals.push(random_box(&mut rng, 0.05, 0.3));
    }
    let mut features = Vec::with_capacity(proposals.len() * d);
    for o in &scene.objects {
        features.extend(keyed_row(o, d));
    }
    features.resize(proposals.len() * d, 0.0);
    for v in features.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += config.sigma * z;
    }
    Ok(RegionFeatures {
        proposals,
        features,
        d,
        noise_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub n_scenes: usize,
    pub fraction_negative: f64,
    pub labels_per_scene: usize,
    pub distractors: DistractorConfig,
    pub features: FeatureConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_scenes: 200,
            fraction_negative: 0.5,
            labels_per_scene: 4,
            distractors: DistractorConfig::default(),
            features: FeatureConfig::default(),
        }
    }
}

/// Held-out scenes with category labels and free-form description labels.
///
/// Scene `k` depicts benchmark description `k / C mod ND` of category
/// `k mod C`. Besides its own description, each scene is labelled with other
/// benchmark descriptions of categories present in it, split between positives
/// and zero-referent negatives by `fraction_negative`. All randomness lives
/// in the `bench` seed streams, disjoint from training seeds.
pub fn make_benchmark(
    pool: &[EntityCategory],
    spec: &DescriptionSpec,
    config: &BenchmarkConfig,
    seed: u64,
) -> Result<BenchmarkInstance> {
    let parser = Parser::for_pool(pool);
    let c = pool.len();
    if c == 0 {
        return Err(Error::EmptyPool);
    }
    let n_scenes = config.n_scenes;
    let per_category = (n_scenes / c).max(1);
    let mut desc_spec = spec.clone();
    desc_spec.seed = seed::derive_tagged(seed, "bench-descriptions", 0);
    desc_spec.num_descriptions = spec.num_descriptions.min((per_category / 2).max(1));
    let nd = desc_spec.num_descriptions;
    let descriptions: Vec<ObjectDescription> = corpus::generate_corpus(pool, &desc_spec)?;
    let trees: Vec<ParseTree> = descriptions
        .iter()
        .map(|d| parser.parse(&d.text))
        .collect::<Result<_>>()?;
    let sources: Vec<usize> = (0..n_scenes).map(|k| (k % c) * nd + (k / c) % nd).collect();
    let used: BTreeSet<usize> = sources.iter().copied().collect();

    let categories: Vec<CategoryLabel> = pool
        .iter()
        .map(|cat| CategoryLabel {
            label_id: cat.id,
            name: cat.name.clone(),
        })
        .collect();
    let desc_label_id = |i: usize| (c + i) as u64;
    let mut desc_labels = Vec::new();
    for &i in &used {
        desc_labels.push(DescriptionLabel {
            label_id: desc_label_id(i),
            description_id: descriptions[i].id,
            category_id: descriptions[i].category_id,
            text: descriptions[i].text.clone(),
            token_count: trees[i].tokens.len(),
            absence: crate::langparse::is_absence(&trees[i]),
        });
    }

    let mut scenes = Vec::with_capacity(n_scenes);
    let mut assignments = Vec::new();
    for (k, &src) in sources.iter().enumerate() {
        let cat = &pool[k % c];
        let image_seed = seed::derive_tagged(seed, "bench-image", k as u64);
        let ids = SceneIds {
            scene_id: k as u64,
            description_id: descriptions[src].id,
        };
        let scene = synthesize_scene(&trees[src], cat, pool, ids, image_seed, &config.distractors)?;
        let features = render_features(
            &scene,
            seed::derive_tagged(seed, "bench-noise", k as u64),
            &config.features,
        )?;

        for cat in &categories {
            let gt = scene
                .objects
                .iter()
                .filter(|o| o.category == cat.name)
                .map(|o| o.instance_id)
                .collect();
            assignments.push(LabelAssignment {
                label_id: cat.label_id,
                scene_id: scene.scene_id,
                gt_instances: gt,
            });
        }

        let mut rng = seed::rng(seed::derive_tagged(seed, "bench-labels", k as u64));
        let present: BTreeSet<&str> = scene.objects.iter().map(|o| o.category.as_str()).collect();
        let mut candidates: Vec<usize> = used
            .iter()
            .copied()
            .filter(|&i| i != src && present.contains(trees[i].subject().noun.as_str()))
            .collect();
        candidates.shuffle(&mut rng);
        let total = config.labels_per_scene.max(1);
        let mut n_neg = (total as f64 * config.fraction_negative).round() as usize;
        if config.fraction_negative > 0.0 {
            n_neg = n_neg.max(1);
        }
        let n_neg = n_neg.min(total - 1);
        let n_pos_extra = total - 1 - n_neg;
        let mut chosen = vec![(src, scene.referent_ids.clone())];
        let (mut pos, mut neg) = (0, 0);
        for i in candidates {
            let gt = evaluate_referents(&trees[i], &scene.objects);
            if gt.is_empty() && neg < n_neg {
                neg += 1;
                chosen.push((i, gt));
            } else if !gt.is_empty() && pos < n_pos_extra {
                pos += 1;
                chosen.push((i, gt));
            }
        }
        for (i, gt) in chosen {
            assignments.push(LabelAssignment {
                label_id: desc_label_id(i),
                scene_id: scene.scene_id,
                gt_instances: gt.into_iter().collect(),
            });
        }
        scenes.push(BenchmarkScene { scene, features });
    }

    Ok(BenchmarkInstance {
        scenes,
        categories,
        descriptions: desc_labels,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_entity_pool;
    use crate::langparse::parse;

    fn pool() -> Vec<EntityCategory> {
        build_entity_pool("desk20").unwrap()
    }

    fn ids() -> SceneIds {
        SceneIds {
            scene_id: 0,
            description_id: 0,
        }
    }

    #[test]
    fn avocado_sits_on_board() {
        let pool = pool();
        let tree = parse("an avocado on a cutting board").unwrap();
        let scene = synthesize_scene(&tree, &pool[0], &pool, ids(), 0, &DistractorConfig::default()).unwrap();
        let avocado = &scene.objects[0];
        let board = &scene.objects[1];
        assert_eq!(avocado.category, "avocado");
        assert_eq!(board.category, "cutting board");
        assert!((avocado.bbox.bottom() - board.bbox.y).abs() <= ADJACENCY_EPS);
        assert!(avocado.bbox.x_overlap(&board.bbox) > 0.0);
        assert!(scene.referent_ids.contains(&0));
        assert_eq!(scene.relation_edges[0], (0, Relation::On, 1).into());
    }

    #[test]
    fn seeds_fan_out() {
        let pool = pool();
        let tree = parse("a green avocado next to a knife").unwrap();
        let scenes: Vec<Scene> = (0..8)
            .map(|s| synthesize_scene(&tree, &pool[0], &pool, ids(), s, &DistractorConfig::default()).unwrap())
            .collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(scenes[i].objects, scenes[j].objects);
            }
        }
        let again = synthesize_scene(&tree, &pool[0], &pool, ids(), 3, &DistractorConfig::default()).unwrap();
        assert_eq!(again, scenes[3]);
    }

    #[test]
    fn single_phrase_scene() {
        let pool = pool();
        let tree = parse("a dog").unwrap();
        let dog = crate::corpus::find_category(&pool, "dog").unwrap();
        let scene = synthesize_scene(&tree, dog, &pool, ids(), 5, &DistractorConfig::default()).unwrap();
        assert!(!scene.objects.is_empty());
        assert!(scene.relation_edges.is_empty());
    }

    #[test]
    fn negation_scene_has_no_object_on_subject() {
        let pool = pool();
        let tree = parse("a brown dog without a ball").unwrap();
        let dog = crate::corpus::find_category(&pool, "dog").unwrap();
        let cfg = DistractorConfig {
            negation_confuser_prob: 1.0,
            ..Default::default()
        };
        let scene = synthesize_scene(&tree, dog, &pool, ids(), 1, &cfg).unwrap();
        let subject = &scene.objects[0];
        assert!(scene
            .objects
            .iter()
            .filter(|o| o.category == "ball")
            .all(|b| b.bbox.intersection(&subject.bbox) == 0.0));
        // The confuser dog holds a ball and is not a referent.
        let confuser = scene.objects.iter().find(|o| o.instance_id != 0 && o.category == "dog").unwrap();
        assert!(!scene.referent_ids.contains(&confuser.instance_id));
    }

    #[test]
    fn features_are_deterministic_and_symmetric() {
        let a = SceneObject {
            instance_id: 0,
            category: "cup".into(),
            attributes: ["white".to_string()].into(),
            bbox: BBox::new(0.1, 0.1, 0.2, 0.2),
        };
        let scene = Scene {
            scene_id: 0,
            description_id: 0,
            image_seed: 0,
            objects: vec![a.clone(), SceneObject { instance_id: 1, ..a }],
            relation_edges: vec![],
            referent_ids: BTreeSet::new(),
        };
        let cfg = FeatureConfig {
            sigma: 0.0,
            ..Default::default()
        };
        let f = render_features(&scene, 9, &cfg).unwrap();
        assert_eq!(f.rows(), 4);
        assert_eq!(f.row(0), f.row(1));
        assert!(f.row(2).iter().all(|&v| v == 0.0));
        assert_eq!(f, render_features(&scene, 9, &cfg).unwrap());
        assert!(render_features(&scene, 9, &FeatureConfig { d: 4, ..cfg }).is_err());
    }

    #[test]
    fn binary_layout() {
        let f = RegionFeatures {
            proposals: vec![BBox::new(0.0, 0.0, 0.5, 0.5)],
            features: (0..8).map(f64::from).collect(),
            d: 8,
            noise_seed: 0,
        };
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 * 8);
        assert_eq!(&buf[..8], &[1, 0, 0, 0, 8, 0, 0, 0]);
        let (n, d, data) = RegionFeatures::read_matrix(&buf[..]).unwrap();
        assert_eq!((n, d), (1, 8));
        assert_eq!(data, f.features);
    }

    #[test]
    fn benchmark_without_negatives() {
        let pool = pool();
        let cfg = BenchmarkConfig {
            n_scenes: 40,
            fraction_negative: 0.0,
            ..Default::default()
        };
        let b = make_benchmark(&pool, &DescriptionSpec::default(), &cfg, 3).unwrap();
        let desc_ids: BTreeSet<u64> = b.descriptions.iter().map(|d| d.label_id).collect();
        for a in b.assignments.iter().filter(|a| desc_ids.contains(&a.label_id)) {
            assert!(!a.gt_instances.is_empty());
        }
    }
}
