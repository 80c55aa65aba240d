//! Canned sweeps. Each one trains or labels in memory from the base config
//! and returns a table; training sweeps share one held-out benchmark built
//! from the base config.

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wscl::corpus;
use wscl::evalkit::{BenchmarkInstance, MetricReport};
use wscl::groundnet::{FreezeConfig, BLOCK_NAMES};

use crate::artifacts;
use crate::config::{LabelingMode, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Threshold,
    Freeze,
    Length,
    Density,
    Signals,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Threshold => "threshold",
            Ablation::Freeze => "freeze",
            Ablation::Length => "length",
            Ablation::Density => "density",
            Ablation::Signals => "signals",
        }
    }
}

pub const THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];
pub const LENGTHS: [usize; 4] = [6, 8, 10, 12];
pub const DENSITIES: [usize; 3] = [2, 4, 8];
pub const FREEZES: [&str; 4] = ["none", "visual", "language", "fusion"];
pub const SIGNAL_STEPS: [&str; 4] = ["naive", "+intra-neg", "+struct-neg", "+struct-pos"];

/// Column names plus rows of JSON cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Cell of the row whose first column equals `key`.
    pub fn get(&self, key: &str, column: &str) -> Option<&Value> {
        let c = self.column(column)?;
        self.rows
            .iter()
            .find(|r| r.first().and_then(cell_key).as_deref() == Some(key))
            .map(|r| &r[c])
    }

    pub fn get_f64(&self, key: &str, column: &str) -> Option<f64> {
        self.get(key, column).and_then(Value::as_f64)
    }

    pub fn to_csv(&self) -> CliResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Numeric(format!("csv: {e}"));
        w.write_record(&self.columns).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| cell_key(v).unwrap_or_default()))
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Numeric(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        artifacts::write_bytes(&dir.join("table.csv"), self.to_csv()?.as_bytes())?;
        artifacts::write_json(&dir.join("table.json"), self)
    }
}

fn cell_key(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, |v| json!(v))
}

fn metric_cells(r: &MetricReport) -> Vec<Value> {
    vec![
        json!(r.ap),
        json!(r.ap_categ),
        json!(r.ap_descr),
        opt(r.ap_descr_s),
        opt(r.ap_descr_m),
        opt(r.ap_descr_l),
    ]
}

const METRIC_COLUMNS: [&str; 6] = ["ap", "ap_categ", "ap_descr", "ap_descr_s", "ap_descr_m", "ap_descr_l"];

fn columns(lead: &[&str], tail: &[&str]) -> Vec<String> {
    lead.iter()
        .chain(METRIC_COLUMNS.iter())
        .chain(tail)
        .map(|c| c.to_string())
        .collect()
}

pub fn run(kind: Ablation, cfg: &PipelineConfig) -> CliResult<Table> {
    match kind {
        Ablation::Threshold => threshold(cfg),
        Ablation::Freeze => freeze(cfg),
        Ablation::Length => length(cfg),
        Ablation::Density => density(cfg),
        Ablation::Signals => signals(cfg),
    }
}

/// Mean label recall of both labelers at each threshold.
pub fn threshold(cfg: &PipelineConfig) -> CliResult<Table> {
    let pool = pipeline::load_pool(cfg)?;
    let parser = pipeline::parser_for(&pool);
    let descriptions = pipeline::generate(cfg, &pool)?;
    let scenes = pipeline::synthesize(cfg, &pool, &descriptions, &parser)?;
    let mut t = Table::new(&["threshold_p", "recall_weak_to_strong", "recall_grounding_baseline"]);
    for p in THRESHOLDS {
        let mut c = cfg.clone();
        c.labeler.threshold_p = p;
        let recall = |mode| -> CliResult<f64> {
            let triplets = pipeline::label(&c, mode, &descriptions, &scenes, &parser)?;
            Ok(pipeline::mean_recall(&triplets, &scenes, &parser)?)
        };
        t.push(vec![
            json!(p),
            json!(recall(LabelingMode::WeakToStrong)?),
            json!(recall(LabelingMode::GroundingBaseline)?),
        ]);
    }
    Ok(t)
}

fn held_out(cfg: &PipelineConfig) -> CliResult<BenchmarkInstance> {
    let pool = pipeline::load_pool(cfg)?;
    Ok(pipeline::benchmark(cfg, &pool)?)
}

fn train_eval(cfg: &PipelineConfig, bench: &BenchmarkInstance) -> CliResult<Outcome> {
    cfg.validate()?;
    Ok(pipeline::run_in_memory(cfg, bench)?)
}

pub fn freeze_config(name: &str) -> FreezeConfig {
    FreezeConfig {
        visual: name == "visual",
        language: name == "language",
        fusion: name == "fusion",
    }
}

/// One run per freeze flag; the block columns say whether training moved
/// that block.
pub fn freeze(cfg: &PipelineConfig) -> CliResult<Table> {
    let bench = held_out(cfg)?;
    let lead = ["freeze"];
    let tail: Vec<String> = BLOCK_NAMES.iter().map(|b| format!("changed:{b}")).collect();
    let tail_refs: Vec<&str> = tail.iter().map(String::as_str).collect();
    let mut t = Table {
        columns: columns(&lead, &tail_refs),
        rows: Vec::new(),
    };
    for name in FREEZES {
        let mut c = cfg.clone();
        c.train.freeze = freeze_config(name);
        let o = train_eval(&c, &bench)?;
        let mut row = vec![json!(name)];
        row.extend(metric_cells(&o.report));
        for ((_, before), (_, after)) in o.trained.initial.blocks().into_iter().zip(o.trained.model.params.blocks()) {
            row.push(json!(before.data != after.data));
        }
        t.push(row);
    }
    Ok(t)
}

/// Description length sweep with the resulting noun and adjective counts.
pub fn length(cfg: &PipelineConfig) -> CliResult<Table> {
    let bench = held_out(cfg)?;
    let mut t = Table {
        columns: columns(&["target_length_words"], &["mean_words", "mean_nouns", "mean_adjectives"]),
        rows: Vec::new(),
    };
    for nw in LENGTHS {
        let mut c = cfg.clone();
        c.descriptions.target_length_words = nw;
        let o = train_eval(&c, &bench)?;
        let pool = pipeline::load_pool(&c)?;
        let stats = corpus::text_stats(&o.descriptions, &pipeline::parser_for(&pool))?;
        let mean_words = if o.descriptions.is_empty() {
            0.0
        } else {
            o.descriptions.iter().map(|d| d.word_count()).sum::<usize>() as f64 / o.descriptions.len() as f64
        };
        let mut row = vec![json!(nw)];
        row.extend(metric_cells(&o.report));
        row.extend([json!(mean_words), json!(stats.mean_nouns), json!(stats.mean_adjectives)]);
        t.push(row);
    }
    Ok(t)
}

/// Scenes per description sweep.
pub fn density(cfg: &PipelineConfig) -> CliResult<Table> {
    let bench = held_out(cfg)?;
    let mut t = Table {
        columns: columns(&["images_per_description"], &["triplets"]),
        rows: Vec::new(),
    };
    for images in DENSITIES {
        let mut c = cfg.clone();
        c.images_per_description = images;
        let o = train_eval(&c, &bench)?;
        let mut row = vec![json!(images)];
        row.extend(metric_cells(&o.report));
        row.push(json!(o.triplets.len()));
        t.push(row);
    }
    Ok(t)
}

/// The config of one signal step, cumulative in table order.
pub fn signal_step(cfg: &PipelineConfig, step: &str) -> PipelineConfig {
    let mut c = cfg.clone();
    let s = &mut c.signals;
    let k = cfg.signals.k_neg.max(1);
    match step {
        "naive" => {
            s.sentence_alignment = false;
            s.structural_negatives = false;
            s.structural_positives = false;
            s.k_neg = 0;
        }
        "+intra-neg" => {
            s.sentence_alignment = false;
            s.structural_negatives = false;
            s.structural_positives = false;
            s.k_neg = k;
        }
        "+struct-neg" => {
            s.sentence_alignment = true;
            s.structural_negatives = true;
            s.structural_positives = false;
            s.k_neg = k;
        }
        _ => {
            s.sentence_alignment = true;
            s.structural_negatives = true;
            s.structural_positives = true;
            s.k_neg = k;
        }
    }
    c
}

/// Training-signal ladder: naive, then intra-class negatives, structural
/// negatives and structural positives.
pub fn signals(cfg: &PipelineConfig) -> CliResult<Table> {
    let bench = held_out(cfg)?;
    let mut t = Table {
        columns: columns(&["signals"], &["final_loss"]),
        rows: Vec::new(),
    };
    for step in SIGNAL_STEPS {
        let o = train_eval(&signal_step(cfg, step), &bench)?;
        let mut row = vec![json!(step)];
        row.extend(metric_cells(&o.report));
        row.push(opt(o.trained.history.last().map(|h| h.grounding_loss)));
        t.push(row);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_csv_and_lookup() {
        let mut t = Table::new(&["k", "v", "w"]);
        t.push(vec![json!("a"), json!(1.5), Value::Null]);
        t.push(vec![json!(0.3), json!(true), json!("x,y")]);
        assert_eq!(t.to_csv().unwrap(), "k,v,w\na,1.5,\n0.3,true,\"x,y\"\n");
        assert_eq!(t.get_f64("a", "v"), Some(1.5));
        assert_eq!(t.get("0.3", "v"), Some(&json!(true)));
        assert_eq!(t.get("b", "v"), None);
    }

    #[test]
    fn signal_steps_are_cumulative() {
        let base = PipelineConfig::default();
        let naive = signal_step(&base, "naive").signals;
        assert!(!naive.sentence_alignment && naive.k_neg == 0 && !naive.structural_positives);
        let intra = signal_step(&base, "+intra-neg").signals;
        assert!(intra.k_neg > 0 && !intra.sentence_alignment);
        let sneg = signal_step(&base, "+struct-neg").signals;
        assert!(sneg.structural_negatives && !sneg.structural_positives);
        assert_eq!(signal_step(&base, "+struct-pos").signals, base.signals);
    }

    #[test]
    fn freeze_names_map_to_flags() {
        assert_eq!(freeze_config("none"), FreezeConfig::default());
        assert!(freeze_config("visual").visual);
        assert!(freeze_config("language").language);
        assert!(freeze_config("fusion").fusion);
    }
}
