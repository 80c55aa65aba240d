//! Description-aware detection metrics.
//!
//! Per-label average precision uses greedy highest-score-first matching and
//! all-point interpolation; label APs are macro-averaged in label-id order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use crate::geometry::iou;
use crate::geometry::BBox as GBox;
use crate::scenegen::{RegionFeatures, Scene};
use crate::{Error, Result, Scalar, BBox};

/// A scored box in a given scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox<T> {
    pub scene: u64,
    pub bbox: GBox<T>,
    pub score: T,
}

/// True-positive flags of `detections` in descending score order (ties keep
/// input order), matching each detection to the best still-unmatched box of
/// its scene.
pub fn match_detections<T: Scalar>(
    detections: &[ScoredBox<T>],
    gt: &BTreeMap<u64, Vec<GBox<T>>>,
    iou_threshold: T,
) -> Vec<bool> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut used: BTreeMap<u64, Vec<bool>> = gt.iter().map(|(s, b)| (*s, vec![false; b.len()])).collect();
    order
        .into_iter()
        .map(|i| {
            let det = &detections[i];
            let (Some(boxes), Some(taken)) = (gt.get(&det.scene), used.get_mut(&det.scene)) else {
                return false;
            };
            let best = boxes
                .iter()
                .enumerate()
                .filter(|(j, _)| !taken[*j])
                .map(|(j, g)| (j, iou(&det.bbox, g)))
                .fold(None, |acc: Option<(usize, T)>, (j, v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((j, v)),
                });
            match best {
                Some((j, v)) if v >= iou_threshold => {
                    taken[j] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// All-point interpolated AP. `None` when there is neither ground truth nor a
/// detection; 0 when only one side is empty.
pub fn average_precision<T: Scalar>(
    detections: &[ScoredBox<T>],
    gt: &BTreeMap<u64, Vec<GBox<T>>>,
    iou_threshold: T,
) -> Option<T> {
    let n_gt: usize = gt.values().map(Vec::len).sum();
    if n_gt == 0 {
        return if detections.is_empty() { None } else { Some(T::zero()) };
    }
    let tp = match_detections(detections, gt, iou_threshold);
    // Precision at each rank, then the running maximum from the right.
    let mut hits = 0usize;
    let mut precision: Vec<T> = tp
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            hits += usize::from(t);
            T::of(hits as f64) / T::of((k + 1) as f64)
        })
        .collect();
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let sum: T = tp
        .iter()
        .zip(&precision)
        .filter(|(t, _)| **t)
        .map(|(_, &p)| p)
        .sum();
    Some(sum / T::of(n_gt as f64))
}

/// AP for detections and ground truth in a single image.
pub fn average_precision_single<T: Scalar>(
    detections: &[(GBox<T>, T)],
    gt_boxes: &[GBox<T>],
    iou_threshold: T,
) -> Option<T> {
    let dets: Vec<ScoredBox<T>> = detections
        .iter()
        .map(|&(bbox, score)| ScoredBox { scene: 0, bbox, score })
        .collect();
    let gt = BTreeMap::from([(0u64, gt_boxes.to_vec())]);
    average_precision(&dets, &gt, iou_threshold)
}

pub fn harmonic_mean<T: Scalar>(a: T, b: T) -> T {
    if a + b == T::zero() {
        T::zero()
    } else {
        T::of(2.0) * a * b / (a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLabel {
    pub label_id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionLabel {
    pub label_id: u64,
    pub description_id: u64,
    pub category_id: u64,
    pub text: String,
    pub token_count: usize,
    pub absence: bool,
}

/// A label evaluated on a scene, with its referent instances there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAssignment {
    pub label_id: u64,
    pub scene_id: u64,
    pub gt_instances: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkScene {
    pub scene: Scene,
    pub features: RegionFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkInstance {
    pub scenes: Vec<BenchmarkScene>,
    pub categories: Vec<CategoryLabel>,
    pub descriptions: Vec<DescriptionLabel>,
    pub assignments: Vec<LabelAssignment>,
}

impl BenchmarkInstance {
    pub fn label_text(&self, label_id: u64) -> Option<&str> {
        self.categories
            .iter()
            .find(|c| c.label_id == label_id)
            .map(|c| c.name.as_str())
            .or_else(|| {
                self.descriptions
                    .iter()
                    .find(|d| d.label_id == label_id)
                    .map(|d| d.text.as_str())
            })
    }

    pub fn scene(&self, scene_id: u64) -> Option<&BenchmarkScene> {
        self.scenes.iter().find(|s| s.scene.scene_id == scene_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detected {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

/// One line of the results JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResult {
    pub label_id: u64,
    pub scene_id: u64,
    pub detections: Vec<Detected>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BucketConfig {
    /// Descriptions with at most this many tokens are short.
    pub short_max: usize,
    /// Descriptions with at least this many tokens are long.
    pub long_min: usize,
}

impl Default for BucketConfig {
    fn default() -> Self {
        Self {
            short_max: 5,
            long_min: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LengthBucket {
    Short,
    Medium,
    Long,
}

impl BucketConfig {
    pub fn bucket(&self, tokens: usize) -> LengthBucket {
        if tokens <= self.short_max {
            LengthBucket::Short
        } else if tokens >= self.long_min {
            LengthBucket::Long
        } else {
            LengthBucket::Medium
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub buckets: BucketConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            buckets: BucketConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub short: usize,
    pub medium: usize,
    pub long: usize,
}

/// All values on a 0–100 scale. `None` marks an empty partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ap: f64,
    pub ap_categ: f64,
    pub ap_descr: f64,
    pub ap_descr_pos: f64,
    pub ap_descr_s: Option<f64>,
    pub ap_descr_m: Option<f64>,
    pub ap_descr_l: Option<f64>,
    pub d3_full: Option<f64>,
    pub d3_pres: Option<f64>,
    pub d3_abs: Option<f64>,
    pub bucket_counts: BucketCounts,
    pub n_category_labels: usize,
    pub n_description_labels: usize,
    pub iou_threshold: f64,
    pub buckets: BucketConfig,
    pub interpolation: String,
    pub label_pooling: String,
}

/// Per-label APs (fraction scale) keyed by label id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelAps {
    pub all: BTreeMap<u64, Option<f64>>,
    pub positive_only: BTreeMap<u64, Option<f64>>,
}

type ResultIndex<'a> = BTreeMap<(u64, u64), &'a LabelResult>;

fn index_results(results: &[LabelResult]) -> ResultIndex<'_> {
    results.iter().map(|r| ((r.label_id, r.scene_id), r)).collect()
}

fn label_ap(
    bench: &BenchmarkInstance,
    index: &ResultIndex<'_>,
    assignments: &[&LabelAssignment],
    iou_threshold: f64,
) -> Result<Option<f64>> {
    let mut dets = Vec::new();
    let mut gt = BTreeMap::new();
    for a in assignments {
        let r = index.get(&(a.label_id, a.scene_id)).ok_or(Error::IncompleteCoverage {
            label: a.label_id,
            scene: a.scene_id,
        })?;
        let scene = bench.scene(a.scene_id).ok_or(Error::IncompleteCoverage {
            label: a.label_id,
            scene: a.scene_id,
        })?;
        let boxes: Vec<BBox> = a
            .gt_instances
            .iter()
            .filter_map(|id| scene.scene.object(*id).map(|o| o.bbox))
            .collect();
        gt.insert(a.scene_id, boxes);
        dets.extend(r.detections.iter().map(|d| ScoredBox {
            scene: a.scene_id,
            bbox: d.bbox,
            score: d.score,
        }));
    }
    Ok(average_precision(&dets, &gt, iou_threshold))
}

/// APs of every label over its assigned scenes.
pub fn label_aps(bench: &BenchmarkInstance, results: &[LabelResult], iou_threshold: f64) -> Result<LabelAps> {
    let index = index_results(results);
    let mut by_label: BTreeMap<u64, Vec<&LabelAssignment>> = BTreeMap::new();
    for a in &bench.assignments {
        by_label.entry(a.label_id).or_default().push(a);
    }
    let mut out = LabelAps::default();
    for (label, assigns) in &by_label {
        out.all.insert(*label, label_ap(bench, &index, assigns, iou_threshold)?);
        let positives: Vec<&LabelAssignment> =
            assigns.iter().copied().filter(|a| !a.gt_instances.is_empty()).collect();
        out.positive_only
            .insert(*label, label_ap(bench, &index, &positives, iou_threshold)?);
    }
    Ok(out)
}

/// Macro mean of defined APs, scaled to 0–100.
fn mean_percent<'a>(aps: impl Iterator<Item = &'a Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = aps.filter_map(|a| *a).collect();
    if defined.is_empty() {
        None
    } else {
        Some(100.0 * defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// FULL, PRES and ABS over the description labels.
pub fn d3_report(
    bench: &BenchmarkInstance,
    results: &[LabelResult],
    iou_threshold: f64,
) -> Result<(Option<f64>, Option<f64>, Option<f64>)> {
    let aps = label_aps(bench, results, iou_threshold)?;
    Ok(d3_from_aps(bench, &aps))
}

fn d3_from_aps(bench: &BenchmarkInstance, aps: &LabelAps) -> (Option<f64>, Option<f64>, Option<f64>) {
    let pick = |keep: &dyn Fn(&DescriptionLabel) -> bool| {
        mean_percent(
            bench
                .descriptions
                .iter()
                .filter(|d| keep(d))
                .filter_map(|d| aps.all.get(&d.label_id)),
        )
    };
    (pick(&|_| true), pick(&|d| !d.absence), pick(&|d| d.absence))
}

pub fn omnilabel_report(
    bench: &BenchmarkInstance,
    results: &[LabelResult],
    config: &EvalConfig,
) -> Result<MetricReport> {
    let aps = label_aps(bench, results, config.iou_threshold)?;
    let categ = mean_percent(bench.categories.iter().filter_map(|c| aps.all.get(&c.label_id))).unwrap_or(0.0);
    let descr_of = |filter: &dyn Fn(&DescriptionLabel) -> bool, table: &BTreeMap<u64, Option<f64>>| {
        mean_percent(
            bench
                .descriptions
                .iter()
                .filter(|d| filter(d))
                .filter_map(|d| table.get(&d.label_id)),
        )
    };
    let descr = descr_of(&|_| true, &aps.all).unwrap_or(0.0);
    let descr_pos = descr_of(&|_| true, &aps.positive_only).unwrap_or(0.0);
    let b = config.buckets;
    let in_bucket = |bucket: LengthBucket| move |d: &DescriptionLabel| b.bucket(d.token_count) == bucket;
    let mut counts = BucketCounts::default();
    for d in &bench.descriptions {
        match b.bucket(d.token_count) {
            LengthBucket::Short => counts.short += 1,
            LengthBucket::Medium => counts.medium += 1,
            LengthBucket::Long => counts.long += 1,
        }
    }
    let (full, pres, abs) = d3_from_aps(bench, &aps);
    Ok(MetricReport {
        ap: harmonic_mean(categ, descr),
        ap_categ: categ,
        ap_descr: descr,
        ap_descr_pos: descr_pos,
        ap_descr_s: descr_of(&in_bucket(LengthBucket::Short), &aps.all),
        ap_descr_m: descr_of(&in_bucket(LengthBucket::Medium), &aps.all),
        ap_descr_l: descr_of(&in_bucket(LengthBucket::Long), &aps.all),
        d3_full: full,
        d3_pres: pres,
        d3_abs: abs,
        bucket_counts: counts,
        n_category_labels: bench.categories.len(),
        n_description_labels: bench.descriptions.len(),
        iou_threshold: config.iou_threshold,
        buckets: b,
        interpolation: "all-point".into(),
        label_pooling: "macro mean over labels in label-id order".into(),
    })
}

/// Every (label, scene) pair of the benchmark that lacks a result.
pub fn missing_results(bench: &BenchmarkInstance, results: &[LabelResult]) -> BTreeSet<(u64, u64)> {
    let have: BTreeSet<(u64, u64)> = results.iter().map(|r| (r.label_id, r.scene_id)).collect();
    bench
        .assignments
        .iter()
        .map(|a| (a.label_id, a.scene_id))
        .filter(|k| !have.contains(k))
        .collect()
}
