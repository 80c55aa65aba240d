//! On-disk artifacts: JSONL and binary readers/writers, stage manifests and
//! content hashes.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use wscl::evalkit::BenchmarkScene;
use wscl::scenegen::{RegionFeatures, Scene};
use wscl::BBox;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Ok(sha256_hex(&bytes))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    fs::write(path, bytes).map_err(CliError::io(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Core(e.into()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| CliError::Core(e.into()))?;
        out.push(b'\n');
    }
    write_bytes(path, &out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(CliError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CliError::Config {
            path: format!("{}:{}", path.display(), i + 1),
            reason: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Proposal boxes and noise seed of one scene's region features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub scene_id: u64,
    pub noise_seed: u64,
    pub proposals: Vec<BBox>,
}

pub fn feature_file(dir: &Path, scene_id: u64) -> PathBuf {
    dir.join("features").join(format!("{scene_id:06}.bin"))
}

/// Writes `scenes.jsonl`, `proposals.jsonl` and one feature file per scene.
pub fn write_scenes(dir: &Path, scenes: &[BenchmarkScene]) -> CliResult<()> {
    let graphs: Vec<&Scene> = scenes.iter().map(|s| &s.scene).collect();
    write_jsonl(&dir.join("scenes.jsonl"), &graphs)?;
    let proposals: Vec<ProposalRecord> = scenes
        .iter()
        .map(|s| ProposalRecord {
            scene_id: s.scene.scene_id,
            noise_seed: s.features.noise_seed,
            proposals: s.features.proposals.clone(),
        })
        .collect();
    write_jsonl(&dir.join("proposals.jsonl"), &proposals)?;
    fs::create_dir_all(dir.join("features")).map_err(CliError::io(dir.join("features")))?;
    for s in scenes {
        let path = feature_file(dir, s.scene.scene_id);
        let file = File::create(&path).map_err(CliError::io(&path))?;
        let mut w = BufWriter::new(file);
        s.features.write_binary(&mut w).map_err(CliError::io(&path))?;
        w.flush().map_err(CliError::io(&path))?;
    }
    Ok(())
}

pub fn read_scenes(dir: &Path) -> CliResult<Vec<BenchmarkScene>> {
    let graphs: Vec<Scene> = read_jsonl(&dir.join("scenes.jsonl"))?;
    let proposals: Vec<ProposalRecord> = read_jsonl(&dir.join("proposals.jsonl"))?;
    if graphs.len() != proposals.len() {
        return Err(CliError::Core(wscl::Error::Shape(format!(
            "{} scenes but {} proposal records",
            graphs.len(),
            proposals.len()
        ))));
    }
    graphs
        .into_iter()
        .zip(proposals)
        .map(|(scene, p)| {
            if p.scene_id != scene.scene_id {
                return Err(CliError::Core(wscl::Error::SceneMismatch {
                    expected: scene.scene_id,
                    actual: p.scene_id,
                }));
            }
            let path = feature_file(dir, scene.scene_id);
            let file = File::open(&path).map_err(CliError::io(&path))?;
            let (n, d, features) = RegionFeatures::read_matrix(BufReader::new(file)).map_err(CliError::io(&path))?;
            if n != p.proposals.len() {
                return Err(CliError::Core(wscl::Error::Shape(format!(
                    "{}: {n} rows for {} proposals",
                    path.display(),
                    p.proposals.len()
                ))));
            }
            Ok(BenchmarkScene {
                scene,
                features: RegionFeatures {
                    proposals: p.proposals,
                    features,
                    d,
                    noise_seed: p.noise_seed,
                },
            })
        })
        .collect()
}

/// Everything needed to re-derive a stage directory: the full config echo,
/// the hash of the sections the stage reads, its base seeds, and the hashes
/// of its inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub config_sections: Vec<String>,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Upstream manifests keyed by path relative to the output root.
    pub inputs: BTreeMap<String, String>,
    /// Files of this directory keyed by relative path.
    pub outputs: BTreeMap<String, String>,
    pub config: Value,
}

impl Manifest {
    pub fn new(stage: &str, cfg: &PipelineConfig, sections: &[&str], inputs: BTreeMap<String, String>) -> Self {
        let mut config = serde_json::to_value(cfg).expect("config serializes");
        if let Value::Object(map) = &mut config {
            map.remove("output_dir");
        }
        Self {
            stage: stage.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_sections: sections.iter().map(|s| s.to_string()).collect(),
            config_hash: cfg.section_hash(sections),
            seeds: seeds(cfg),
            inputs,
            outputs: BTreeMap::new(),
            config,
        }
    }

    /// Same recipe: config sections, seeds and inputs agree.
    pub fn same_recipe(&self, other: &Manifest) -> bool {
        self.stage == other.stage
            && self.tool_version == other.tool_version
            && self.config_hash == other.config_hash
            && self.seeds == other.seeds
            && self.inputs == other.inputs
    }

    /// Hashes every file under `dir` except the manifest itself.
    pub fn record_outputs(&mut self, dir: &Path) -> CliResult<()> {
        self.outputs = hash_tree(dir)?;
        self.outputs.remove(MANIFEST);
        Ok(())
    }

    /// True when the files on disk still match the recorded hashes.
    pub fn outputs_intact(&self, dir: &Path) -> CliResult<bool> {
        let mut now = hash_tree(dir)?;
        now.remove(MANIFEST);
        Ok(now == self.outputs)
    }
}

fn seeds(cfg: &PipelineConfig) -> BTreeMap<String, u64> {
    BTreeMap::from([
        ("seed".to_string(), cfg.seed),
        ("descriptions.seed".to_string(), cfg.descriptions.seed),
        ("detector.seed".to_string(), cfg.detector.seed),
        ("model.init_seed".to_string(), cfg.model.init_seed),
        ("train.seed".to_string(), cfg.train.seed),
    ])
}

/// SHA-256 of every regular file under `dir`, keyed by `/`-separated
/// relative path.
pub fn hash_tree(dir: &Path) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if dir.is_dir() {
        walk(dir, dir, &mut out)?;
    }
    Ok(out)
}

fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> CliResult<()> {
    for entry in fs::read_dir(dir).map_err(CliError::io(dir))? {
        let path = entry.map_err(CliError::io(dir))?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("walk stays under root");
            let key = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.insert(key, hash_file(&path)?);
        }
    }
    Ok(())
}
