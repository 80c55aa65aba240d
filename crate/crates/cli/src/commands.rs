//! Subcommands over an output directory. Each stage reads its upstream
//! artifacts, writes its own directory and a manifest, and is skipped when
//! the manifest already matches the config, seeds and inputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wscl::corpus::ObjectDescription;
use wscl::evalkit::{self, BenchmarkInstance, CategoryLabel, DescriptionLabel, LabelAssignment, LabelResult, MetricReport};
use wscl::groundnet::{self, GroundingModel, Vocabulary};
use wscl::labeling::PseudoTriplet;
use wscl::targets::TrainingRecord;

use crate::ablate::{self, Ablation, Table};
use crate::artifacts::{self, Manifest, MANIFEST};
use crate::config::{LabelingMode, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Gen,
    Scenes,
    Label,
    Targets,
    Train,
    Eval,
    Report,
}

const GEN_SECTIONS: &[&str] = &["pool", "descriptions"];
const SCENE_SECTIONS: &[&str] = &[
    "pool",
    "descriptions",
    "images_per_description",
    "distractors",
    "features",
    "seed",
];
const LABEL_SECTIONS: &[&str] = &[
    "pool",
    "descriptions",
    "images_per_description",
    "distractors",
    "features",
    "seed",
    "detector",
    "labeler",
    "labeling_mode",
];
const TARGET_SECTIONS: &[&str] = &[
    "pool",
    "descriptions",
    "images_per_description",
    "distractors",
    "features",
    "seed",
    "detector",
    "labeler",
    "labeling_mode",
    "signals",
];
const TRAIN_SECTIONS: &[&str] = &[
    "pool",
    "descriptions",
    "images_per_description",
    "distractors",
    "features",
    "seed",
    "detector",
    "labeler",
    "labeling_mode",
    "signals",
    "model",
    "train",
];
const ALL_SECTIONS: &[&str] = &[
    "pool",
    "descriptions",
    "images_per_description",
    "distractors",
    "features",
    "seed",
    "detector",
    "labeler",
    "labeling_mode",
    "signals",
    "model",
    "train",
    "eval",
];

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Gen,
        Stage::Scenes,
        Stage::Label,
        Stage::Targets,
        Stage::Train,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Scenes => "scenes",
            Stage::Label => "label",
            Stage::Targets => "targets",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }

    /// Config sections the stage's outputs depend on.
    pub fn sections(self) -> &'static [&'static str] {
        match self {
            Stage::Gen => GEN_SECTIONS,
            Stage::Scenes => SCENE_SECTIONS,
            Stage::Label => LABEL_SECTIONS,
            Stage::Targets => TARGET_SECTIONS,
            Stage::Train => TRAIN_SECTIONS,
            Stage::Eval | Stage::Report => ALL_SECTIONS,
        }
    }

    /// Stages whose artifacts this one reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Gen => &[],
            Stage::Scenes => &[Stage::Gen],
            Stage::Label => &[Stage::Gen, Stage::Scenes],
            Stage::Targets => &[Stage::Gen, Stage::Scenes, Stage::Label],
            Stage::Train => &[Stage::Scenes, Stage::Targets],
            Stage::Eval => &[Stage::Train],
            Stage::Report => &[Stage::Label, Stage::Train, Stage::Eval],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Built,
    UpToDate,
}

/// A validated config bound to its output root.
pub struct Workspace {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Workspace {
    pub fn new(cfg: PipelineConfig) -> CliResult<Self> {
        cfg.validate()?;
        let out = cfg.output_dir.clone();
        Ok(Self { cfg, out, quiet: false })
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn file(&self, stage: Stage, name: &str) -> CliResult<PathBuf> {
        let path = self.dir(stage).join(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact {
                path,
                stage: stage.name(),
            })
        }
    }

    /// Hashes of the upstream manifests, after checking each exists and was
    /// built from the current config.
    fn inputs(&self, stage: Stage) -> CliResult<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        for &up in stage.upstream() {
            let path = self.file(up, MANIFEST)?;
            let m: Manifest = artifacts::read_json(&path)?;
            if m.config_hash != self.cfg.section_hash(up.sections()) {
                return Err(CliError::StaleArtifact {
                    path,
                    stage: up.name(),
                });
            }
            inputs.insert(format!("{}/{MANIFEST}", up.name()), artifacts::hash_file(&path)?);
        }
        Ok(inputs)
    }

    /// Runs `body` into a fresh `dir` unless its manifest already matches.
    fn execute(
        &self,
        name: &str,
        dir: &Path,
        sections: &[&str],
        inputs: BTreeMap<String, String>,
        body: impl FnOnce(&Path) -> CliResult<()>,
    ) -> CliResult<Status> {
        let mut manifest = Manifest::new(name, &self.cfg, sections, inputs);
        let existing = dir.join(MANIFEST);
        if existing.exists() {
            if let Ok(old) = artifacts::read_json::<Manifest>(&existing) {
                if old.same_recipe(&manifest) && old.outputs_intact(dir)? {
                    self.note(format!("{name}: up to date ({})", dir.display()));
                    return Ok(Status::UpToDate);
                }
            }
        }
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(CliError::io(dir))?;
        }
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        body(dir)?;
        manifest.record_outputs(dir)?;
        artifacts::write_json(&existing, &manifest)?;
        Ok(Status::Built)
    }

    fn stage(&self, stage: Stage, body: impl FnOnce(&Path) -> CliResult<()>) -> CliResult<Status> {
        let inputs = self.inputs(stage)?;
        self.execute(stage.name(), &self.dir(stage), stage.sections(), inputs, body)
    }

    pub fn descriptions(&self) -> CliResult<Vec<ObjectDescription>> {
        artifacts::read_jsonl(&self.file(Stage::Gen, "descriptions.jsonl")?)
    }

    pub fn scenes(&self) -> CliResult<Vec<evalkit::BenchmarkScene>> {
        self.file(Stage::Scenes, "scenes.jsonl")?;
        artifacts::read_scenes(&self.dir(Stage::Scenes))
    }

    pub fn triplets(&self) -> CliResult<Vec<PseudoTriplet>> {
        artifacts::read_jsonl(&self.file(Stage::Label, "triplets.jsonl")?)
    }

    pub fn records(&self) -> CliResult<Vec<TrainingRecord>> {
        artifacts::read_jsonl(&self.file(Stage::Targets, "targets.jsonl")?)
    }

    pub fn model(&self) -> CliResult<GroundingModel<f64>> {
        let vocab: Vocabulary = artifacts::read_json(&self.file(Stage::Train, "vocab.json")?)?;
        let path = self.file(Stage::Train, "model.wscl")?;
        let file = fs::File::open(&path).map_err(CliError::io(&path))?;
        Ok(GroundingModel::read_checkpoint(BufReader::new(file), vocab)?)
    }

    pub fn gen(&self) -> CliResult<Status> {
        self.stage(Stage::Gen, |dir| {
            let pool = pipeline::load_pool(&self.cfg)?;
            if self.cfg.descriptions.num_descriptions == 0 {
                eprintln!("warning: descriptions.num_descriptions is 0; writing an empty corpus");
            }
            let descriptions = pipeline::generate(&self.cfg, &pool)?;
            artifacts::write_jsonl(&dir.join("descriptions.jsonl"), &descriptions)?;
            self.note(format!("gen: {} descriptions", descriptions.len()));
            Ok(())
        })
    }

    pub fn scenes_stage(&self) -> CliResult<Status> {
        self.stage(Stage::Scenes, |dir| {
            let pool = pipeline::load_pool(&self.cfg)?;
            let parser = pipeline::parser_for(&pool);
            let descriptions = self.descriptions()?;
            let scenes = pipeline::synthesize(&self.cfg, &pool, &descriptions, &parser)?;
            artifacts::write_scenes(dir, &scenes)?;
            self.note(format!("scenes: {} scenes", scenes.len()));
            Ok(())
        })
    }

    pub fn label(&self) -> CliResult<Status> {
        self.stage(Stage::Label, |dir| {
            let pool = pipeline::load_pool(&self.cfg)?;
            let parser = pipeline::parser_for(&pool);
            let descriptions = self.descriptions()?;
            let scenes = self.scenes()?;
            let mode = self.cfg.labeling_mode;
            let triplets = pipeline::label(&self.cfg, mode, &descriptions, &scenes, &parser)?;
            let recall = pipeline::mean_recall(&triplets, &scenes, &parser)?;
            artifacts::write_jsonl(&dir.join("triplets.jsonl"), &triplets)?;
            artifacts::write_json(
                &dir.join("recall.json"),
                &RecallSummary {
                    labeling_mode: mode,
                    threshold_p: self.cfg.labeler.threshold_p,
                    triplets: triplets.len(),
                    mean_recall: recall,
                },
            )?;
            self.note(format!("label: {} triplets, mean recall {recall:.4}", triplets.len()));
            Ok(())
        })
    }

    pub fn targets(&self) -> CliResult<Status> {
        self.stage(Stage::Targets, |dir| {
            let pool = pipeline::load_pool(&self.cfg)?;
            let parser = pipeline::parser_for(&pool);
            let descriptions = self.descriptions()?;
            let scenes = self.scenes()?;
            let triplets = self.triplets()?;
            let records = pipeline::build_targets(&self.cfg, &descriptions, &scenes, &triplets, &parser)?;
            artifacts::write_jsonl(&dir.join("targets.jsonl"), &records)?;
            self.note(format!("targets: {} training records", records.len()));
            Ok(())
        })
    }

    pub fn train(&self) -> CliResult<Status> {
        self.stage(Stage::Train, |dir| {
            let pool = pipeline::load_pool(&self.cfg)?;
            let parser = pipeline::parser_for(&pool);
            let scenes = self.scenes()?;
            let records = self.records()?;
            let trained = pipeline::train(&self.cfg, &pool, &records, &scenes, &parser)?;
            let mut bytes = Vec::new();
            trained.model.write_checkpoint(&mut bytes)?;
            artifacts::write_bytes(&dir.join("model.wscl"), &bytes)?;
            artifacts::write_json(&dir.join("vocab.json"), &trained.model.vocab)?;
            artifacts::write_bytes(
                &dir.join("loss_history.csv"),
                groundnet::loss_history_csv(&trained.history).as_bytes(),
            )?;
            let summary = TrainSummary {
                examples: records.len(),
                epochs: self.cfg.train.epochs,
                initial_loss: trained.history.first().map(|h| h.grounding_loss),
                final_loss: trained.history.last().map(|h| h.grounding_loss),
            };
            artifacts::write_json(&dir.join("summary.json"), &summary)?;
            self.note(format!(
                "train: {} examples, loss {:.4} -> {:.4}",
                summary.examples,
                summary.initial_loss.unwrap_or(f64::NAN),
                summary.final_loss.unwrap_or(f64::NAN)
            ));
            Ok(())
        })
    }

    pub fn benchmark(&self) -> CliResult<BenchmarkInstance> {
        let pool = pipeline::load_pool(&self.cfg)?;
        Ok(pipeline::benchmark(&self.cfg, &pool)?)
    }

    pub fn eval(&self) -> CliResult<Status> {
        self.stage(Stage::Eval, |dir| {
            let pool = pipeline::load_pool(&self.cfg)?;
            let parser = pipeline::parser_for(&pool);
            let model = self.model()?;
            let bench = pipeline::benchmark(&self.cfg, &pool)?;
            let (results, report) = pipeline::evaluate(&self.cfg, &model, &bench, &parser)?;
            write_benchmark(&dir.join("benchmark"), &bench)?;
            artifacts::write_jsonl(&dir.join("results.jsonl"), &results)?;
            artifacts::write_json(&dir.join("report.json"), &report)?;
            self.note(format!(
                "eval: AP {:.2} (categ {:.2}, descr {:.2})",
                report.ap, report.ap_categ, report.ap_descr
            ));
            Ok(())
        })
    }

    /// Scores an external results file against the configured benchmark.
    pub fn eval_external(&self, results: &Path) -> CliResult<MetricReport> {
        if !results.exists() {
            return Err(CliError::Io {
                path: results.to_path_buf(),
                source: std::io::Error::from(std::io::ErrorKind::NotFound),
            });
        }
        let results: Vec<LabelResult> = artifacts::read_jsonl(results)?;
        let bench = self.benchmark()?;
        Ok(evalkit::omnilabel_report(&bench, &results, &self.cfg.eval.metrics)?)
    }

    pub fn report(&self) -> CliResult<Status> {
        self.stage(Stage::Report, |dir| {
            let recall: RecallSummary = artifacts::read_json(&self.file(Stage::Label, "recall.json")?)?;
            let train: TrainSummary = artifacts::read_json(&self.file(Stage::Train, "summary.json")?)?;
            let metrics: MetricReport = artifacts::read_json(&self.file(Stage::Eval, "report.json")?)?;
            let summary = Summary { recall, train, metrics };
            let md = summary.markdown();
            artifacts::write_json(&dir.join("summary.json"), &summary)?;
            artifacts::write_bytes(&dir.join("summary.md"), md.as_bytes())?;
            if !self.quiet {
                emit(&md);
            }
            Ok(())
        })
    }

    pub fn run_stage(&self, stage: Stage) -> CliResult<Status> {
        match stage {
            Stage::Gen => self.gen(),
            Stage::Scenes => self.scenes_stage(),
            Stage::Label => self.label(),
            Stage::Targets => self.targets(),
            Stage::Train => self.train(),
            Stage::Eval => self.eval(),
            Stage::Report => self.report(),
        }
    }

    /// Every stage in order.
    pub fn run_all(&self) -> CliResult<Vec<Status>> {
        Stage::ALL.iter().map(|&s| self.run_stage(s)).collect()
    }

    pub fn ablate(&self, kind: Ablation) -> CliResult<Table> {
        let dir = self.out.join("ablate").join(kind.name());
        let name = format!("ablate-{}", kind.name());
        let mut table = None;
        let status = self.execute(&name, &dir, ALL_SECTIONS, BTreeMap::new(), |dir| {
            let t = ablate::run(kind, &self.cfg)?;
            t.write(dir)?;
            table = Some(t);
            Ok(())
        })?;
        let table = match (status, table) {
            (_, Some(t)) => t,
            _ => artifacts::read_json(&dir.join("table.json"))?,
        };
        if !self.quiet {
            emit(&table.to_csv()?);
        }
        Ok(table)
    }
}

/// Writes to stdout, ignoring a closed pipe.
pub fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn write_benchmark(dir: &Path, bench: &BenchmarkInstance) -> CliResult<()> {
    artifacts::write_scenes(dir, &bench.scenes)?;
    artifacts::write_json(
        &dir.join("labels.json"),
        &BenchmarkLabels {
            categories: bench.categories.clone(),
            descriptions: bench.descriptions.clone(),
            assignments: bench.assignments.clone(),
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkLabels {
    pub categories: Vec<CategoryLabel>,
    pub descriptions: Vec<DescriptionLabel>,
    pub assignments: Vec<LabelAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub labeling_mode: LabelingMode,
    pub threshold_p: f64,
    pub triplets: usize,
    pub mean_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub examples: usize,
    pub epochs: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub recall: RecallSummary,
    pub train: TrainSummary,
    pub metrics: MetricReport,
}

impl Summary {
    pub fn markdown(&self) -> String {
        let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
        let m = &self.metrics;
        let mut s = String::new();
        s.push_str("| metric | value |\n|---|---|\n");
        let rows = [
            ("triplets", self.recall.triplets.to_string()),
            ("mean label recall", format!("{:.4}", self.recall.mean_recall)),
            ("initial loss", self.train.initial_loss.map_or("-".into(), |v| format!("{v:.4}"))),
            ("final loss", self.train.final_loss.map_or("-".into(), |v| format!("{v:.4}"))),
            ("AP", format!("{:.2}", m.ap)),
            ("AP categ", format!("{:.2}", m.ap_categ)),
            ("AP descr", format!("{:.2}", m.ap_descr)),
            ("AP descr pos", format!("{:.2}", m.ap_descr_pos)),
            ("AP descr S", f(m.ap_descr_s)),
            ("AP descr M", f(m.ap_descr_m)),
            ("AP descr L", f(m.ap_descr_l)),
            ("D3 full", f(m.d3_full)),
            ("D3 pres", f(m.d3_pres)),
            ("D3 abs", f(m.d3_abs)),
        ];
        for (k, v) in rows {
            s.push_str(&format!("| {k} | {v} |\n"));
        }
        s
    }
}
