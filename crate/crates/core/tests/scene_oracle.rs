use std::collections::BTreeSet;

use wscl::corpus::{self, DescriptionSpec, EntityCategory};
use wscl::langparse::{ParseTree, Parser, Relation};
use wscl::scenegen::{self, BenchmarkConfig, DistractorConfig, FeatureConfig, Scene, SceneIds, SceneObject};
use wscl::BBox;

fn desk20() -> Vec<EntityCategory> {
    corpus::build_entity_pool("desk20").unwrap()
}

// Independent geometry, written from the relation definitions.

fn x_overlap(a: &BBox, b: &BBox) -> f64 {
    ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0)
}

fn y_overlap(a: &BBox, b: &BBox) -> f64 {
    ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0)
}

fn overlap_area(a: &BBox, b: &BBox) -> f64 {
    x_overlap(a, b) * y_overlap(a, b)
}

fn iou(a: &BBox, b: &BBox) -> f64 {
    let i = overlap_area(a, b);
    i / (a.w * a.h + b.w * b.h - i)
}

fn gap(a: &BBox, b: &BBox) -> f64 {
    let dx = (b.x - (a.x + a.w)).max(a.x - (b.x + b.w)).max(0.0);
    let dy = (b.y - (a.y + a.h)).max(a.y - (b.y + b.h)).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

fn holds(r: Relation, s: &BBox, o: &BBox) -> bool {
    let narrow = s.w.min(o.w);
    match r {
        Relation::On => ((s.y + s.h) - o.y).abs() <= 0.02 && x_overlap(s, o) >= 0.5 * narrow,
        Relation::Under => ((o.y + o.h) - s.y).abs() <= 0.02 && x_overlap(s, o) >= 0.5 * narrow,
        Relation::Near | Relation::NextTo => overlap_area(s, o) == 0.0 && gap(s, o) <= 0.1,
        Relation::Inside => s.x >= o.x && s.y >= o.y && s.x + s.w <= o.x + o.w && s.y + s.h <= o.y + o.h,
        Relation::With | Relation::Holding => {
            let v = iou(s, o);
            v > 0.0 && v <= 0.3
        }
        Relation::Without => overlap_area(s, o) == 0.0,
    }
}

fn matches(o: &SceneObject, noun: &str, modifiers: &[String]) -> bool {
    o.category == noun && modifiers.iter().all(|m| o.attributes.contains(m))
}

fn oracle_referents(tree: &ParseTree, objects: &[SceneObject]) -> BTreeSet<u64> {
    let subject = tree.subject();
    let mut out = BTreeSet::new();
    for o in objects {
        if !matches(o, &subject.noun, &subject.modifiers) {
            continue;
        }
        let mut ok = true;
        for p in tree.phrases.iter().skip(1) {
            let partners: Vec<&SceneObject> = objects
                .iter()
                .filter(|x| x.instance_id != o.instance_id && matches(x, &p.noun, &p.modifiers))
                .collect();
            let r = p.governing_relation.expect("clause has a relation");
            let clause = if p.negated {
                partners.iter().all(|x| overlap_area(&o.bbox, &x.bbox) == 0.0)
            } else {
                partners.iter().any(|x| holds(r, &o.bbox, &x.bbox))
            };
            ok &= clause;
        }
        if ok {
            out.insert(o.instance_id);
        }
    }
    out
}

fn check_scene(scene: &Scene, tree: &ParseTree) {
    for e in &scene.relation_edges {
        let s = scene.object(e.subject_id).expect("edge subject exists");
        let o = scene.object(e.object_id).expect("edge object exists");
        assert!(holds(e.relation, &s.bbox, &o.bbox), "{:?} fails in scene {}", e, scene.scene_id);
    }
    for o in &scene.objects {
        let b = o.bbox;
        assert!(b.w > 0.0 && b.h > 0.0 && b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= 1.0 + 1e-12 && b.y + b.h <= 1.0 + 1e-12);
    }
    assert_eq!(scene.referent_ids, oracle_referents(tree, &scene.objects), "scene {}", scene.scene_id);
    assert!(scene.referent_ids.contains(&scene.objects[0].instance_id));
}

fn training_scenes(nw: usize, seeds: u64) -> Vec<(Scene, ParseTree)> {
    let pool = desk20();
    let parser = Parser::for_pool(&pool);
    let spec = DescriptionSpec {
        num_descriptions: 4,
        target_length_words: nw,
        ..Default::default()
    };
    let mut out = Vec::new();
    for (i, d) in corpus::generate_corpus(&pool, &spec).unwrap().iter().enumerate() {
        let tree = parser.parse(&d.text).unwrap();
        let cat = pool.iter().find(|c| c.id == d.category_id).unwrap();
        for k in 0..seeds {
            let ids = SceneIds {
                scene_id: i as u64 * seeds + k,
                description_id: d.id,
            };
            let scene = scenegen::synthesize_scene(&tree, cat, &pool, ids, 1000 + k, &DistractorConfig::default()).unwrap();
            out.push((scene, tree.clone()));
        }
    }
    out
}

#[test]
fn every_edge_and_referent_set_checks_out() {
    for nw in [6, 10, 12] {
        for (scene, tree) in training_scenes(nw, 4) {
            check_scene(&scene, &tree);
        }
    }
}

#[test]
fn seeds_fan_out_to_distinct_scenes() {
    let scenes = training_scenes(10, 8);
    for chunk in scenes.chunks(8) {
        let distinct: BTreeSet<String> = chunk.iter().map(|(s, _)| serde_json::to_string(&s.objects).unwrap()).collect();
        assert_eq!(distinct.len(), 8);
        assert!(chunk.iter().all(|(s, _)| s.description_id == chunk[0].0.description_id));
    }
}

#[test]
fn avocado_on_board_geometry() {
    let pool = desk20();
    let parser = Parser::for_pool(&pool);
    let tree = parser.parse("an avocado on a cutting board").unwrap();
    let avocado = corpus::find_category(&pool, "avocado").unwrap();
    let ids = SceneIds {
        scene_id: 0,
        description_id: 0,
    };
    let scene = scenegen::synthesize_scene(&tree, avocado, &pool, ids, 0, &DistractorConfig::default()).unwrap();
    let a = scene.objects[0].bbox;
    let board = scene.object(scene.relation_edges[0].object_id).unwrap();
    assert_eq!(board.category, "cutting board");
    assert!(((a.y + a.h) - board.bbox.y).abs() <= 0.02);
    assert!(x_overlap(&a, &board.bbox) > 0.0);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

#[test]
fn distinct_categories_have_dissimilar_rows() {
    let cfg = FeatureConfig {
        sigma: 0.0,
        ..Default::default()
    };
    for name in ["desk20", "desk80"] {
        let pool = corpus::build_entity_pool(name).unwrap();
        let objects: Vec<SceneObject> = pool
            .iter()
            .enumerate()
            .map(|(i, c)| SceneObject {
                instance_id: i as u64,
                category: c.name.clone(),
                attributes: BTreeSet::new(),
                bbox: BBox::new(0.3, 0.3, 0.2, 0.2),
            })
            .collect();
        let scene = Scene {
            scene_id: 0,
            description_id: 0,
            image_seed: 0,
            objects,
            relation_edges: vec![],
            referent_ids: BTreeSet::new(),
        };
        let f = scenegen::render_features(&scene, 0, &cfg).unwrap();
        for i in 0..pool.len() {
            for j in i + 1..pool.len() {
                let shared = pool[i].name.split(' ').any(|w| pool[j].name.split(' ').any(|v| v == w));
                let c = cosine(f.row(i), f.row(j));
                if shared {
                    // Categories sharing a word overlap by construction.
                    assert!(c < 0.75, "{} vs {}: {c}", pool[i].name, pool[j].name);
                    continue;
                }
                assert!(c < 0.5, "{} vs {}: {c}", pool[i].name, pool[j].name);
            }
        }
    }
}

#[test]
fn noise_is_additive_over_keyed_rows() {
    let (scene, _) = training_scenes(10, 1).remove(3);
    let d = 64;
    let a = scenegen::render_features(&scene, 1, &FeatureConfig::default()).unwrap();
    let b = scenegen::render_features(&scene, 2, &FeatureConfig::default()).unwrap();
    assert_ne!(a.features, b.features);
    for (i, o) in scene.objects.iter().enumerate() {
        let keyed = scenegen::keyed_row(o, d);
        let mut direct: Vec<f64> = o.lexical_profile().iter().fold(vec![0.0; d], |mut acc, w| {
            for (x, v) in acc.iter_mut().zip(scenegen::word_vector(w, d)) {
                *x += v;
            }
            acc
        });
        let enc = scenegen::box_encoding(&o.bbox);
        for (k, e) in enc.iter().enumerate() {
            direct[d - 4 + k] += e;
        }
        for k in 0..d {
            assert!((keyed[k] - direct[k]).abs() < 1e-12, "keyed row layout");
        }
        let ra: Vec<f64> = a.row(i).iter().zip(&keyed).map(|(x, k)| x - k).collect();
        let rb: Vec<f64> = b.row(i).iter().zip(&keyed).map(|(x, k)| x - k).collect();
        let scale = |r: &[f64]| (dot(r, r) / d as f64).sqrt();
        assert!(scale(&ra) < 0.1 && scale(&rb) < 0.1);
        assert_ne!(ra, rb);
    }
    for i in scene.objects.len()..a.rows() {
        assert!(a.row(i).iter().all(|v| v.abs() < 0.5), "background rows are pure noise");
    }
}

#[test]
fn default_benchmark_has_positive_and_negative_labels_per_scene() {
    let pool = desk20();
    let bench = scenegen::make_benchmark(&pool, &DescriptionSpec::default(), &BenchmarkConfig::default(), 77).unwrap();
    let parser = Parser::for_pool(&pool);
    assert_eq!(bench.scenes.len(), 200);
    let desc_ids: BTreeSet<u64> = bench.descriptions.iter().map(|d| d.label_id).collect();
    for s in &bench.scenes {
        let labels: Vec<_> = bench
            .assignments
            .iter()
            .filter(|a| a.scene_id == s.scene.scene_id && desc_ids.contains(&a.label_id))
            .collect();
        assert!(labels.iter().any(|a| !a.gt_instances.is_empty()));
        assert!(labels.iter().any(|a| a.gt_instances.is_empty()), "scene {}", s.scene.scene_id);
        for a in labels {
            let text = bench.label_text(a.label_id).unwrap();
            let tree = parser.parse(text).unwrap();
            let want: Vec<u64> = oracle_referents(&tree, &s.scene.objects).into_iter().collect();
            assert_eq!(a.gt_instances, want);
        }
    }
}

#[test]
fn benchmark_without_negatives_always_refers() {
    let pool = desk20();
    let cfg = BenchmarkConfig {
        fraction_negative: 0.0,
        n_scenes: 60,
        ..Default::default()
    };
    let bench = scenegen::make_benchmark(&pool, &DescriptionSpec::default(), &cfg, 3).unwrap();
    let desc_ids: BTreeSet<u64> = bench.descriptions.iter().map(|d| d.label_id).collect();
    for a in bench.assignments.iter().filter(|a| desc_ids.contains(&a.label_id)) {
        assert!(!a.gt_instances.is_empty());
    }
}
