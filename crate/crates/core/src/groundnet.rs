//! Dual-encoder grounding model.
//!
//! Regions are projected by `O = F·W + b`. Each query token starts from a
//! token embedding plus a within-item position embedding, then mixes with the
//! other tokens of its item through a learned position-pair matrix `A`:
//!
//! ```text
//! X_j = E[t_j] + pe[pos_j]
//! P_j = X_j + Σ_{k in item(j)} A[pos_j, pos_k] · X_k
//! S   = s · O · Pᵀ
//! ```
//!
//! Separators use `P_j = E[t_j]`. The loss is the masked mean of binary
//! cross-entropy with logits between `S` and the alignment target.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::labeling::{sort_detections, Detection, Detector};
use crate::langparse::{self, Parser};
use crate::scalar::{sigmoid, softplus};
use crate::scenegen::{RegionFeatures, Scene};
use crate::targets::Query;
use crate::{seed, Error, Result, Scalar};

pub const UNK: &str = "<unk>";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WSCL";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Sorted vocabulary over `words`; id 0 is reserved for unknown tokens.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = words.into_iter().filter(|w| *w != UNK).collect();
        let tokens = std::iter::once(UNK.to_string())
            .chain(set.into_iter().map(str::to_string))
            .collect::<Vec<_>>();
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut T {
        &mut self.data[r * self.cols + c]
    }

    fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut impl rand::Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| T::of(normal.sample(rng))).collect();
        Self { rows, cols, data }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Every learnable block. Gradients share the layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub visual_weight: Matrix<T>,
    pub visual_bias: Matrix<T>,
    pub token_embeddings: Matrix<T>,
    pub position_embeddings: Matrix<T>,
    pub mixing: Matrix<T>,
    pub logit_scale: Matrix<T>,
}

pub type Gradients<T> = Params<T>;

pub const BLOCK_NAMES: [&str; 6] = [
    "visual.weight",
    "visual.bias",
    "text.embeddings",
    "fusion.positions",
    "fusion.mixing",
    "fusion.logit_scale",
];

impl<T: Scalar> Params<T> {
    pub fn zeros_like(other: &Self) -> Self {
        let z = |m: &Matrix<T>| Matrix::zeros(m.rows, m.cols);
        Self {
            visual_weight: z(&other.visual_weight),
            visual_bias: z(&other.visual_bias),
            token_embeddings: z(&other.token_embeddings),
            position_embeddings: z(&other.position_embeddings),
            mixing: z(&other.mixing),
            logit_scale: z(&other.logit_scale),
        }
    }

    pub fn blocks(&self) -> [(&'static str, &Matrix<T>); 6] {
        [
            (BLOCK_NAMES[0], &self.visual_weight),
            (BLOCK_NAMES[1], &self.visual_bias),
            (BLOCK_NAMES[2], &self.token_embeddings),
            (BLOCK_NAMES[3], &self.position_embeddings),
            (BLOCK_NAMES[4], &self.mixing),
            (BLOCK_NAMES[5], &self.logit_scale),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut Matrix<T>); 6] {
        [
            (BLOCK_NAMES[0], &mut self.visual_weight),
            (BLOCK_NAMES[1], &mut self.visual_bias),
            (BLOCK_NAMES[2], &mut self.token_embeddings),
            (BLOCK_NAMES[3], &mut self.position_embeddings),
            (BLOCK_NAMES[4], &mut self.mixing),
            (BLOCK_NAMES[5], &mut self.logit_scale),
        ]
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: T, other: &Self) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            axpy(alpha, &b.data, &mut a.data);
        }
    }

    pub fn num_values(&self) -> usize {
        self.blocks().iter().map(|(_, m)| m.data.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_model: usize,
    /// Positions beyond this are clamped to the last one.
    pub max_positions: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 64,
            d_model: 32,
            max_positions: 32,
            init_seed: 0,
        }
    }
}

/// Query tokens resolved against a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedQuery {
    pub ids: Vec<usize>,
    /// Clamped within-item position; `None` for separators.
    pub positions: Vec<Option<usize>>,
    /// Flat indices of the tokens of each item.
    pub groups: Vec<Vec<usize>>,
}

impl EncodedQuery {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Raw logits `S` for one (regions, query) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentScores<T> {
    pub rows: usize,
    pub cols: usize,
    pub logits: Vec<T>,
}

impl<T: Scalar> AlignmentScores<T> {
    pub fn logit(&self, r: usize, c: usize) -> T {
        self.logits[r * self.cols + c]
    }

    pub fn prob(&self, r: usize, c: usize) -> T {
        sigmoid(self.logit(r, c))
    }
}

struct Forward<T> {
    o: Matrix<T>,
    x: Matrix<T>,
    p: Matrix<T>,
    /// `O·Pᵀ` before the scale.
    raw: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingModel<T> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: Params<T>,
}

impl<T: Scalar> GroundingModel<T> {
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Self {
        let mut rng = seed::rng(config.init_seed);
        let (d_in, dm, l) = (config.d_in, config.d_model, config.max_positions);
        let params = Params {
            visual_weight: Matrix::gaussian(d_in, dm, 1.0 / (d_in as f64).sqrt(), &mut rng),
            visual_bias: Matrix::zeros(1, dm),
            token_embeddings: Matrix::gaussian(vocab.len(), dm, 1.0 / (dm as f64).sqrt(), &mut rng),
            position_embeddings: Matrix::gaussian(l, dm, 0.1 / (dm as f64).sqrt(), &mut rng),
            mixing: Matrix::zeros(l, l),
            logit_scale: Matrix::from_vec(1, 1, vec![T::one()]).expect("1x1"),
        };
        Self { config, vocab, params }
    }

    pub fn encode(&self, query: &Query) -> EncodedQuery {
        self.encode_tokens(&query.flat_tokens, &query.token_map)
    }

    /// Encodes flat tokens with their `(item, position)` map.
    pub fn encode_tokens(&self, flat_tokens: &[String], token_map: &[Option<(usize, usize)>]) -> EncodedQuery {
        let l = self.config.max_positions;
        let ids = flat_tokens.iter().map(|t| self.vocab.id(t)).collect();
        let positions = token_map.iter().map(|m| m.map(|(_, p)| p.min(l - 1))).collect();
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (j, m) in token_map.iter().enumerate() {
            if let Some((i, _)) = m {
                groups.entry(*i).or_default().push(j);
            }
        }
        EncodedQuery {
            ids,
            positions,
            groups: groups.into_values().collect(),
        }
    }

    /// Encodes a single free-text item.
    pub fn encode_text(&self, text: &str) -> EncodedQuery {
        let tokens = langparse::tokenize(text);
        let item = crate::targets::QueryItem {
            kind: crate::targets::ItemKind::PositiveDescription,
            tokens,
            span: None,
        };
        self.encode(&Query::from_items(vec![item]))
    }

    fn check_shapes(&self, features: &[f64], rows: usize, q: &EncodedQuery) -> Result<()> {
        if features.len() != rows * self.config.d_in {
            return Err(Error::Shape(format!(
                "{} feature values for {rows} regions of width {}",
                features.len(),
                self.config.d_in
            )));
        }
        if q.ids.iter().any(|&id| id >= self.params.token_embeddings.rows) {
            return Err(Error::Shape("token id outside the embedding table".into()));
        }
        Ok(())
    }

    fn forward_inner(&self, features: &[f64], rows: usize, q: &EncodedQuery) -> Result<Forward<T>> {
        self.check_shapes(features, rows, q)?;
        let p = &self.params;
        let (d_in, dm) = (self.config.d_in, self.config.d_model);
        let m = q.len();

        let mut o = Matrix::zeros(rows, dm);
        for r in 0..rows {
            let out = o.row_mut(r);
            out.copy_from_slice(p.visual_bias.row(0));
            for (k, &f) in features[r * d_in..(r + 1) * d_in].iter().enumerate() {
                if f != 0.0 {
                    axpy(T::of(f), p.visual_weight.row(k), out);
                }
            }
        }

        let mut x = Matrix::zeros(m, dm);
        for j in 0..m {
            let row = x.row_mut(j);
            row.copy_from_slice(p.token_embeddings.row(q.ids[j]));
            if let Some(pos) = q.positions[j] {
                axpy(T::one(), p.position_embeddings.row(pos), row);
            }
        }
        let mut pm = x.clone();
        for group in &q.groups {
            for &j in group {
                let pj = q.positions[j].expect("grouped tokens have positions");
                for &k in group {
                    let pk = q.positions[k].expect("grouped tokens have positions");
                    let a = p.mixing.get(pj, pk);
                    if a != T::zero() {
                        axpy(a, x.row(k), pm.row_mut(j));
                    }
                }
            }
        }

        let mut raw = Matrix::zeros(rows, m);
        for r in 0..rows {
            for j in 0..m {
                *raw.at_mut(r, j) = dot(o.row(r), pm.row(j));
            }
        }
        Ok(Forward { o, x, p: pm, raw })
    }

    pub fn forward(&self, features: &[f64], rows: usize, q: &EncodedQuery) -> Result<AlignmentScores<T>> {
        let f = self.forward_inner(features, rows, q)?;
        let s = self.params.logit_scale.get(0, 0);
        Ok(AlignmentScores {
            rows,
            cols: q.len(),
            logits: f.raw.data.iter().map(|&v| s * v).collect(),
        })
    }

    fn check_target(rows: usize, cols: usize, target: &[u8], mask: &[u8]) -> Result<T> {
        if target.len() != rows * cols || mask.len() != rows * cols {
            return Err(Error::Shape(format!(
                "target/mask of length {}/{} for {rows}x{cols} scores",
                target.len(),
                mask.len()
            )));
        }
        let total: usize = mask.iter().map(|&v| v as usize).sum();
        if total == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(T::of(total as f64))
    }

    fn bce(s: T, t: u8) -> T {
        softplus(s) - if t == 1 { s } else { T::zero() }
    }

    pub fn loss(&self, features: &[f64], rows: usize, q: &EncodedQuery, target: &[u8], mask: &[u8]) -> Result<T> {
        let total = Self::check_target(rows, q.len(), target, mask)?;
        let scores = self.forward(features, rows, q)?;
        let sum = scores
            .logits
            .iter()
            .zip(target.iter().zip(mask))
            .filter(|(_, (_, &m))| m == 1)
            .map(|(&s, (&t, _))| Self::bce(s, t))
            .sum::<T>();
        Ok(sum / total)
    }

    /// Masked mean BCE and its analytic gradient for every block.
    pub fn loss_and_grad(
        &self,
        features: &[f64],
        rows: usize,
        q: &EncodedQuery,
        target: &[u8],
        mask: &[u8],
    ) -> Result<(T, Gradients<T>)> {
        let m = q.len();
        let total = Self::check_target(rows, m, target, mask)?;
        let fw = self.forward_inner(features, rows, q)?;
        let p = &self.params;
        let dm = self.config.d_model;
        let d_in = self.config.d_in;
        let s = p.logit_scale.get(0, 0);
        let mut g = Params::zeros_like(p);

        // dL/dS
        let mut loss = T::zero();
        let mut ds = Matrix::zeros(rows, m);
        for i in 0..rows * m {
            if mask[i] == 1 {
                let logit = s * fw.raw.data[i];
                loss = loss + Self::bce(logit, target[i]);
                let t = if target[i] == 1 { T::one() } else { T::zero() };
                ds.data[i] = (sigmoid(logit) - t) / total;
            }
        }
        loss = loss / total;

        g.logit_scale.data[0] = dot(&ds.data, &fw.raw.data);

        let mut d_o = Matrix::zeros(rows, dm);
        let mut d_p = Matrix::zeros(m, dm);
        for r in 0..rows {
            for j in 0..m {
                let v = ds.get(r, j) * s;
                if v != T::zero() {
                    axpy(v, fw.p.row(j), d_o.row_mut(r));
                    axpy(v, fw.o.row(r), d_p.row_mut(j));
                }
            }
        }

        for r in 0..rows {
            axpy(T::one(), d_o.row(r), g.visual_bias.row_mut(0));
            for (k, &f) in features[r * d_in..(r + 1) * d_in].iter().enumerate() {
                if f != 0.0 {
                    axpy(T::of(f), d_o.row(r), g.visual_weight.row_mut(k));
                }
            }
        }

        let mut d_x = d_p.clone();
        for group in &q.groups {
            for &j in group {
                let pj = q.positions[j].expect("grouped tokens have positions");
                for &k in group {
                    let pk = q.positions[k].expect("grouped tokens have positions");
                    *g.mixing.at_mut(pj, pk) = g.mixing.get(pj, pk) + dot(d_p.row(j), fw.x.row(k));
                    let a = p.mixing.get(pj, pk);
                    if a != T::zero() {
                        axpy(a, d_p.row(j), d_x.row_mut(k));
                    }
                }
            }
        }
        for j in 0..m {
            axpy(T::one(), d_x.row(j), g.token_embeddings.row_mut(q.ids[j]));
            if let Some(pos) = q.positions[j] {
                axpy(T::one(), d_x.row(j), g.position_embeddings.row_mut(pos));
            }
        }
        Ok((loss, g))
    }

    /// Per-proposal score for a description: the best token probability over
    /// its subject phrase. Texts the grammar does not cover use all tokens.
    pub fn score_text(&self, features: &[f64], rows: usize, text: &str, parser: &Parser) -> Result<Vec<T>> {
        let q = self.encode_text(text);
        if q.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let span = parser
            .parse(text)
            .map(|t| t.subject().span())
            .unwrap_or((0, q.len()));
        let scores = self.forward(features, rows, &q)?;
        Ok((0..rows)
            .map(|r| {
                (span.0..span.1)
                    .map(|c| scores.prob(r, c))
                    .fold(T::zero(), |a, b| a.max(b))
            })
            .collect())
    }

    /// Proposals scoring strictly above `threshold`, best first.
    pub fn predict(
        &self,
        features: &RegionFeatures,
        text: &str,
        threshold: f64,
        parser: &Parser,
    ) -> Result<Vec<Detection>> {
        let scores = self.score_text(&features.features, features.rows(), text, parser)?;
        let mut dets: Vec<Detection> = scores
            .iter()
            .enumerate()
            .filter(|(_, s)| s.as_f64() > threshold)
            .map(|(i, s)| Detection {
                proposal_index: i,
                bbox: features.proposals[i],
                score: s.as_f64(),
                query_text: text.to_string(),
            })
            .collect();
        sort_detections(&mut dets);
        Ok(dets)
    }

    /// Binary checkpoint: magic, version, then each block as name length
    /// (u32), name, rows and cols (u32) and little-endian f64 values.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for (name, m) in self.params.blocks() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(m.rows as u32).to_le_bytes())?;
            w.write_all(&(m.cols as u32).to_le_bytes())?;
            for &v in &m.data {
                w.write_all(&v.to_le_f64_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R, vocab: Vocabulary) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut v = [0u8; 2];
        r.read_exact(&mut v)?;
        let version = u16::from_le_bytes(v);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut blocks: BTreeMap<String, Matrix<T>> = BTreeMap::new();
        let read_u32 = |r: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        for _ in 0..BLOCK_NAMES.len() {
            let len = read_u32(&mut r)? as usize;
            if len > 256 {
                return Err(Error::Checkpoint(format!("block name of length {len}")));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut b = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut b)?;
                data.push(T::of(f64::from_le_bytes(b)));
            }
            blocks.insert(name, Matrix { rows, cols, data });
        }
        let mut take = |name: &str| {
            blocks
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))
        };
        let params = Params {
            visual_weight: take(BLOCK_NAMES[0])?,
            visual_bias: take(BLOCK_NAMES[1])?,
            token_embeddings: take(BLOCK_NAMES[2])?,
            position_embeddings: take(BLOCK_NAMES[3])?,
            mixing: take(BLOCK_NAMES[4])?,
            logit_scale: take(BLOCK_NAMES[5])?,
        };
        let dm = params.visual_weight.cols;
        let l = params.position_embeddings.rows;
        let consistent = params.visual_bias.rows == 1
            && params.visual_bias.cols == dm
            && params.token_embeddings.cols == dm
            && params.position_embeddings.cols == dm
            && params.mixing.rows == l
            && params.mixing.cols == l
            && params.logit_scale.data.len() == 1
            && params.token_embeddings.rows == vocab.len();
        if !consistent {
            return Err(Error::Checkpoint("inconsistent block shapes".into()));
        }
        Ok(Self {
            config: ModelConfig {
                d_in: params.visual_weight.rows,
                d_model: dm,
                max_positions: l,
                init_seed: 0,
            },
            vocab,
            params,
        })
    }
}

/// A single training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub rows: usize,
    pub query: EncodedQuery,
    pub target: Vec<u8>,
    pub mask: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FreezeConfig {
    /// `W`, `b`.
    pub visual: bool,
    /// Token embeddings.
    pub language: bool,
    /// Positions, mixing and the logit scale.
    pub fusion: bool,
}

impl FreezeConfig {
    fn frozen(&self, block: &str) -> bool {
        match block.split('.').next() {
            Some("visual") => self.visual,
            Some("text") => self.language,
            Some("fusion") => self.fusion,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub freeze: FreezeConfig,
    /// Fraction of each epoch's example stream drawn from detection-format
    /// data; the rest are triplets. 1 consumes no triplets at all.
    pub detection_mix_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 8,
            freeze: FreezeConfig::default(),
            detection_mix_ratio: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning_rate must be positive and momentum in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.detection_mix_ratio) {
            return Err(Error::Config("detection_mix_ratio must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One row of the loss history; epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub grounding_loss: f64,
    pub total: f64,
}

pub fn loss_history_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,grounding_loss,total\n");
    for h in history {
        out.push_str(&format!("{},{:.8},{:.8}\n", h.epoch, h.grounding_loss, h.total));
    }
    out
}

fn mean_loss<T: Scalar>(model: &GroundingModel<T>, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for e in examples {
        sum += model.loss(&e.features, e.rows, &e.query, &e.target, &e.mask)?.as_f64();
    }
    Ok(sum / examples.len() as f64)
}

/// Mini-batch SGD with momentum. Each epoch streams `max(|triplets|, 1)`
/// examples when triplets exist (else `|detections|`), a
/// `detection_mix_ratio` share of them detection-format, shuffled together.
pub fn train<T: Scalar>(
    model: &mut GroundingModel<T>,
    triplets: &[Example],
    detections: &[Example],
    config: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    config.validate()?;
    let r = config.detection_mix_ratio;
    if r > 0.0 && detections.is_empty() {
        return Err(Error::Config("detection_mix_ratio > 0 needs detection examples".into()));
    }
    if r < 1.0 && triplets.is_empty() {
        return Err(Error::Config("detection_mix_ratio < 1 needs triplet examples".into()));
    }
    let stream = if triplets.is_empty() { detections.len() } else { triplets.len() };
    let n_det = (r * stream as f64).round() as usize;
    let n_trip = stream - n_det;
    let initial = mean_loss(model, triplets)?;
    let initial_det = mean_loss(model, detections)?;
    let initial_total = if stream == 0 {
        initial
    } else {
        (initial * n_trip as f64 + initial_det * n_det as f64) / stream as f64
    };
    let mut history = vec![EpochLoss {
        epoch: 0,
        grounding_loss: initial,
        total: initial_total,
    }];
    if !initial_total.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }

    let mut velocity = Params::zeros_like(&model.params);
    let lr = T::of(config.learning_rate);
    let mu = T::of(config.momentum);
    let mut rng = seed::rng(seed::derive_tagged(config.seed, "train-order", 0));
    let frozen: Vec<bool> = BLOCK_NAMES.iter().map(|n| config.freeze.frozen(n)).collect();

    for epoch in 1..=config.epochs {
        let mut trip_idx: Vec<usize> = (0..triplets.len()).collect();
        if n_trip < triplets.len() {
            trip_idx.shuffle(&mut rng);
        }
        let mut det_idx: Vec<usize> = (0..detections.len()).collect();
        det_idx.shuffle(&mut rng);
        let mut order: Vec<(bool, usize)> = trip_idx[..n_trip].iter().map(|&i| (false, i)).collect();
        order.extend((0..n_det).map(|i| (true, det_idx[i % det_idx.len()])));
        order.shuffle(&mut rng);

        let (mut g_sum, mut g_count, mut t_sum) = (0.0, 0usize, 0.0);
        for batch in order.chunks(config.batch_size) {
            let mut acc = Params::zeros_like(&model.params);
            for &(is_det, i) in batch {
                let e = if is_det { &detections[i] } else { &triplets[i] };
                let (loss, g) = model.loss_and_grad(&e.features, e.rows, &e.query, &e.target, &e.mask)?;
                let l = loss.as_f64();
                if !l.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                t_sum += l;
                if !is_det {
                    g_sum += l;
                    g_count += 1;
                }
                acc.add_scaled(T::one(), &g);
            }
            let inv = T::one() / T::of(batch.len() as f64);
            let blocks = model.params.blocks_mut();
            for (((_, param), (_, vel)), ((_, grad), &fz)) in blocks
                .into_iter()
                .zip(velocity.blocks_mut())
                .zip(acc.blocks().into_iter().zip(&frozen))
            {
                if fz {
                    continue;
                }
                for ((p, v), &gr) in param.data.iter_mut().zip(vel.data.iter_mut()).zip(&grad.data) {
                    *v = mu * *v + gr * inv;
                    *p = *p - lr * *v;
                }
            }
        }
        let entry = EpochLoss {
            epoch,
            grounding_loss: if g_count == 0 {
                mean_loss(model, triplets)?
            } else {
                g_sum / g_count as f64
            },
            total: if order.is_empty() { 0.0 } else { t_sum / order.len() as f64 },
        };
        if !entry.total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(entry);
    }
    Ok(history)
}

/// The trained model used as a detector.
pub struct ModelDetector<'a, T> {
    pub model: &'a GroundingModel<T>,
    pub parser: &'a Parser,
}

impl<T: Scalar> Detector for ModelDetector<'_, T> {
    fn detect(&self, _scene: &Scene, features: &RegionFeatures, query: &str) -> Result<Vec<Detection>> {
        self.model.predict(features, query, f64::NEG_INFINITY, self.parser)
    }
}
