//! In-memory pipeline stages. Every stage is a pure function of the config
//! and its upstream outputs; work items fan out over rayon with per-item
//! derived seeds, so results do not depend on the number of threads.

use rayon::prelude::*;
use wscl::corpus::{self, EntityCategory, ObjectDescription};
use wscl::evalkit::{self, BenchmarkInstance, BenchmarkScene, Detected, LabelResult, MetricReport};
use wscl::groundnet::{self, EpochLoss, Example, GroundingModel, Params, Vocabulary};
use wscl::labeling::{self, BowDetector, PseudoTriplet};
use wscl::langparse::Parser;
use wscl::scenegen::{self, SceneIds};
use wscl::targets::{self, TrainingRecord};
use wscl::{seed, Result};

use crate::config::{LabelingMode, PipelineConfig};

pub fn load_pool(cfg: &PipelineConfig) -> Result<Vec<EntityCategory>> {
    corpus::build_entity_pool(&cfg.pool)
}

pub fn parser_for(pool: &[EntityCategory]) -> Parser {
    Parser::for_pool(pool)
}

pub fn generate(cfg: &PipelineConfig, pool: &[EntityCategory]) -> Result<Vec<ObjectDescription>> {
    let per_category: Vec<Vec<ObjectDescription>> = pool
        .par_iter()
        .map(|c| corpus::generate_descriptions(c, pool, &cfg.descriptions))
        .collect::<Result<_>>()?;
    Ok(per_category.into_iter().flatten().collect())
}

/// Scene `i * images + k` is image `k` of description `i`.
pub fn synthesize(
    cfg: &PipelineConfig,
    pool: &[EntityCategory],
    descriptions: &[ObjectDescription],
    parser: &Parser,
) -> Result<Vec<BenchmarkScene>> {
    let images = cfg.images_per_description;
    let jobs: Vec<(usize, usize)> = (0..descriptions.len())
        .flat_map(|i| (0..images).map(move |k| (i, k)))
        .collect();
    jobs.par_iter()
        .map(|&(i, k)| {
            let d = &descriptions[i];
            let tree = parser.parse(&d.text)?;
            let category = pool
                .iter()
                .find(|c| c.id == d.category_id)
                .ok_or_else(|| wscl::Error::UnknownPool(format!("category id {}", d.category_id)))?;
            let scene_id = (i * images + k) as u64;
            let ids = SceneIds {
                scene_id,
                description_id: d.id,
            };
            let scene = scenegen::synthesize_scene(
                &tree,
                category,
                pool,
                ids,
                seed::derive_tagged(cfg.seed, "image", scene_id),
                &cfg.distractors,
            )?;
            let features = scenegen::render_features(&scene, seed::derive_tagged(cfg.seed, "noise", scene_id), &cfg.features)?;
            Ok(BenchmarkScene { scene, features })
        })
        .collect()
}

pub fn detector(cfg: &PipelineConfig) -> BowDetector {
    BowDetector {
        seed: seed::derive_tagged(cfg.seed, "detector", cfg.detector.seed),
        ..cfg.detector
    }
}

fn description_of(descriptions: &[ObjectDescription], id: u64) -> Option<&ObjectDescription> {
    descriptions
        .get(id as usize)
        .filter(|d| d.id == id)
        .or_else(|| descriptions.iter().find(|d| d.id == id))
}

pub fn label(
    cfg: &PipelineConfig,
    mode: LabelingMode,
    descriptions: &[ObjectDescription],
    scenes: &[BenchmarkScene],
    parser: &Parser,
) -> Result<Vec<PseudoTriplet>> {
    let det = detector(cfg);
    scenes
        .par_iter()
        .map(|s| {
            let d = description_of(descriptions, s.scene.description_id)
                .ok_or(wscl::Error::SceneMismatch {
                    expected: s.scene.description_id,
                    actual: s.scene.scene_id,
                })?;
            match mode {
                LabelingMode::WeakToStrong => {
                    labeling::weak_to_strong_label(&s.scene, &s.features, &d.text, &det, &cfg.labeler, parser)
                }
                LabelingMode::GroundingBaseline => {
                    labeling::grounding_label(&s.scene, &s.features, &d.text, &det, &cfg.labeler, parser)
                }
            }
        })
        .collect()
}

pub fn mean_recall(triplets: &[PseudoTriplet], scenes: &[BenchmarkScene], parser: &Parser) -> Result<f64> {
    if triplets.is_empty() {
        return Ok(0.0);
    }
    let recalls: Vec<f64> = triplets
        .par_iter()
        .zip(scenes)
        .map(|(t, s)| labeling::label_recall(t, &s.scene, parser))
        .collect::<Result<_>>()?;
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

pub fn build_targets(
    cfg: &PipelineConfig,
    descriptions: &[ObjectDescription],
    scenes: &[BenchmarkScene],
    triplets: &[PseudoTriplet],
    parser: &Parser,
) -> Result<Vec<TrainingRecord>> {
    triplets
        .par_iter()
        .zip(scenes)
        .map(|(t, s)| {
            let positive = description_of(descriptions, s.scene.description_id).ok_or(wscl::Error::SceneMismatch {
                expected: s.scene.description_id,
                actual: s.scene.scene_id,
            })?;
            let query_seed = seed::derive_tagged(cfg.seed, "query", t.scene_id);
            let q = targets::assemble_query(t, positive, descriptions, &cfg.signals, query_seed, parser)?;
            let target = targets::build_alignment_target(&q, t, s.features.rows(), &cfg.signals, parser)?;
            Ok(TrainingRecord::new(t.scene_id, &q, &target))
        })
        .collect()
}

/// Every word the pool's grammar can produce, plus the separator.
pub fn vocabulary(parser: &Parser) -> Vocabulary {
    let mut words = parser.lexicon().words();
    words.insert(targets::SEPARATOR.to_string());
    Vocabulary::build(words.iter().map(String::as_str))
}

pub fn examples(model: &GroundingModel<f64>, records: &[TrainingRecord], scenes: &[BenchmarkScene]) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            let s = scenes
                .get(r.scene_id as usize)
                .filter(|s| s.scene.scene_id == r.scene_id)
                .ok_or(wscl::Error::SceneMismatch {
                    expected: r.scene_id,
                    actual: u64::MAX,
                })?;
            let t = r.alignment_target()?;
            Ok(Example {
                features: s.features.features.clone(),
                rows: s.features.rows(),
                query: model.encode_tokens(&r.flat_tokens, &r.token_map),
                target: t.matrix,
                mask: t.loss_mask,
            })
        })
        .collect()
}

/// Detection-format examples over the training scenes: every pool category
/// name as a query item, each box aligned to its own category.
pub fn detection_examples(
    model: &GroundingModel<f64>,
    pool: &[EntityCategory],
    scenes: &[BenchmarkScene],
) -> Vec<Example> {
    let names: Vec<String> = pool.iter().map(|c| c.name.clone()).collect();
    let q = targets::detection_query(&names);
    let encoded = model.encode(&q);
    scenes
        .iter()
        .map(|s| {
            let t = targets::build_detection_target(&q, &s.scene, s.features.rows());
            Example {
                features: s.features.features.clone(),
                rows: s.features.rows(),
                query: encoded.clone(),
                target: t.matrix,
                mask: t.loss_mask,
            }
        })
        .collect()
}

pub struct Trained {
    /// Parameters before the first update.
    pub initial: Params<f64>,
    pub model: GroundingModel<f64>,
    pub history: Vec<EpochLoss>,
}

pub fn train(
    cfg: &PipelineConfig,
    pool: &[EntityCategory],
    records: &[TrainingRecord],
    scenes: &[BenchmarkScene],
    parser: &Parser,
) -> Result<Trained> {
    let mut model_cfg = cfg.model;
    model_cfg.init_seed = seed::derive_tagged(cfg.seed, "init", cfg.model.init_seed);
    let mut model = GroundingModel::new(model_cfg, vocabulary(parser));
    let triplets = examples(&model, records, scenes)?;
    let detections = if cfg.train.detection_mix_ratio > 0.0 {
        detection_examples(&model, pool, scenes)
    } else {
        Vec::new()
    };
    let mut train_cfg = cfg.train;
    train_cfg.seed = seed::derive_tagged(cfg.seed, "train", cfg.train.seed);
    let initial = model.params.clone();
    let history = groundnet::train(&mut model, &triplets, &detections, &train_cfg)?;
    Ok(Trained {
        initial,
        model,
        history,
    })
}

pub fn benchmark(cfg: &PipelineConfig, pool: &[EntityCategory]) -> Result<BenchmarkInstance> {
    scenegen::make_benchmark(
        pool,
        &cfg.descriptions,
        &cfg.eval.benchmark,
        seed::derive_tagged(cfg.seed, "benchmark", 0),
    )
}

/// Scores every proposal of each labelled scene.
pub fn predict_benchmark(
    model: &GroundingModel<f64>,
    bench: &BenchmarkInstance,
    parser: &Parser,
) -> Result<Vec<LabelResult>> {
    bench
        .assignments
        .par_iter()
        .map(|a| {
            let scene = bench.scene(a.scene_id).ok_or(wscl::Error::SceneMismatch {
                expected: a.scene_id,
                actual: u64::MAX,
            })?;
            let text = bench.label_text(a.label_id).ok_or(wscl::Error::EmptyQuery)?;
            let scores = model.score_text(&scene.features.features, scene.features.rows(), text, parser)?;
            Ok(LabelResult {
                label_id: a.label_id,
                scene_id: a.scene_id,
                detections: scores
                    .iter()
                    .zip(&scene.features.proposals)
                    .map(|(&score, &bbox)| Detected { bbox, score })
                    .collect(),
            })
        })
        .collect()
}

pub fn evaluate(
    cfg: &PipelineConfig,
    model: &GroundingModel<f64>,
    bench: &BenchmarkInstance,
    parser: &Parser,
) -> Result<(Vec<LabelResult>, MetricReport)> {
    let results = predict_benchmark(model, bench, parser)?;
    let report = evalkit::omnilabel_report(bench, &results, &cfg.eval.metrics)?;
    Ok((results, report))
}

/// Everything one end-to-end run produces, kept in memory.
pub struct Outcome {
    pub descriptions: Vec<ObjectDescription>,
    pub scenes: Vec<BenchmarkScene>,
    pub triplets: Vec<PseudoTriplet>,
    pub records: Vec<TrainingRecord>,
    pub trained: Trained,
    pub report: MetricReport,
}

/// Runs every stage, evaluating on `bench`.
pub fn run_in_memory(cfg: &PipelineConfig, bench: &BenchmarkInstance) -> Result<Outcome> {
    let pool = load_pool(cfg)?;
    let parser = parser_for(&pool);
    let descriptions = generate(cfg, &pool)?;
    let scenes = synthesize(cfg, &pool, &descriptions, &parser)?;
    let triplets = label(cfg, cfg.labeling_mode, &descriptions, &scenes, &parser)?;
    let records = build_targets(cfg, &descriptions, &scenes, &triplets, &parser)?;
    let trained = train(cfg, &pool, &records, &scenes, &parser)?;
    let (_, report) = evaluate(cfg, &trained.model, bench, &parser)?;
    Ok(Outcome {
        descriptions,
        scenes,
        triplets,
        records,
        trained,
        report,
    })
}
