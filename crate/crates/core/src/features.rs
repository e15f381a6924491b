//! Contrastive feature extraction and token-embedding lookup.
//!
//! Each attribute yields two features: the embedding of the tokens both
//! records share and the embedding of the tokens only one of them has.
//! Empty token sets embed to a fixed unit-norm sentinel.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{AlignedSchema, PairRecord};
use crate::error::{Error, Result};
use crate::rng;

/// Default number of tokens summed per feature.
pub const DEFAULT_CROP: usize = 20;

pub type TokenSet = BTreeSet<String>;

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Shared tokens (intersection) and unique tokens (symmetric difference).
pub fn contrastive_features(left: &str, right: &str) -> (TokenSet, TokenSet) {
    let l: TokenSet = tokenize(left).into_iter().collect();
    let r: TokenSet = tokenize(right).into_iter().collect();
    let sim = l.intersection(&r).cloned().collect();
    let uni = l.symmetric_difference(&r).cloned().collect();
    (sim, uni)
}

/// Fixed normalized non-zero vector for empty token sets: every entry `1/√D`.
pub fn sentinel(dim: usize) -> Vec<f64> {
    vec![1.0 / (dim as f64).sqrt(); dim]
}

/// Which contrastive channels become model features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureChannels {
    #[default]
    Both,
    SharedOnly,
    UniqueOnly,
}

impl FeatureChannels {
    pub fn per_attribute(self) -> usize {
        match self {
            FeatureChannels::Both => 2,
            _ => 1,
        }
    }

    pub fn feature_count(self, schema: &AlignedSchema) -> usize {
        self.per_attribute() * schema.len()
    }

    /// Names of the features in model order.
    pub fn feature_names(self, schema: &AlignedSchema) -> Vec<String> {
        schema
            .attributes()
            .iter()
            .flat_map(|a| {
                let names: Vec<String> = match self {
                    FeatureChannels::Both => vec![format!("{a}_shared"), format!("{a}_unique")],
                    FeatureChannels::SharedOnly => vec![format!("{a}_shared")],
                    FeatureChannels::UniqueOnly => vec![format!("{a}_unique")],
                };
                names
            })
            .collect()
    }
}

/// Deterministic random unit vectors keyed by a hash of the word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingProvider {
    pub dim: usize,
    pub seed: u64,
}

impl HashingProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn vector(&self, word: &str) -> Vec<f64> {
        let mut r = rng::stream(self.seed, word);
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| r.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

/// Pretrained vectors loaded from a whitespace-separated text file.
/// Out-of-vocabulary words fall back to hashed vectors of the same dimension.
#[derive(Clone)]
pub struct VectorTable {
    path: PathBuf,
    dim: usize,
    vectors: Arc<HashMap<String, Vec<f64>>>,
    fingerprint: String,
    fallback: HashingProvider,
}

impl fmt::Debug for VectorTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorTable")
            .field("path", &self.path)
            .field("dim", &self.dim)
            .field("words", &self.vectors.len())
            .finish()
    }
}

impl VectorTable {
    /// Parses `word v1 … vD` lines with an optional `count dim` header.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let reader = BufReader::new(File::open(&path)?);
        let mut vectors = HashMap::new();
        let mut dim: Option<usize> = None;
        let mut hasher = Sha256::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let bad = |message: String| Error::EmbeddingFile {
                path: path.clone(),
                line: i + 1,
                message,
            };
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<u64>().is_ok()) {
                dim = Some(fields[1].parse().map_err(|e| bad(format!("{e}")))?);
                continue;
            }
            let values = fields[1..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| bad(format!("bad component: {e}")))?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(bad(format!("expected {d} components, found {}", values.len())))
                }
                _ => {}
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite component".into()));
            }
            vectors.insert(fields[0].to_string(), values);
        }
        let dim = match dim {
            Some(d) if d > 0 => d,
            _ => {
                return Err(Error::EmbeddingFile {
                    path,
                    line: 0,
                    message: "no vectors found".into(),
                })
            }
        };
        Ok(Self {
            path,
            dim,
            vectors: Arc::new(vectors),
            fingerprint: hex::encode(hasher.finalize()),
            fallback: HashingProvider::new(dim, 0),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Word → D-vector lookup. Total: every word maps to a finite vector.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Hashing(HashingProvider),
    VectorFile(VectorTable),
}

impl EmbeddingProvider {
    pub fn hashing(dim: usize, seed: u64) -> Self {
        EmbeddingProvider::Hashing(HashingProvider::new(dim, seed))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        VectorTable::load(path).map(EmbeddingProvider::VectorFile)
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Hashing(h) => h.dim,
            EmbeddingProvider::VectorFile(t) => t.dim,
        }
    }

    pub fn lookup(&self, word: &str) -> Vec<f64> {
        match self {
            EmbeddingProvider::Hashing(h) => h.vector(word),
            EmbeddingProvider::VectorFile(t) => match t.vectors.get(word) {
                Some(v) => v.clone(),
                None => t.fallback.vector(word),
            },
        }
    }

    /// Stable identifier of the provider configuration, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        match self {
            EmbeddingProvider::Hashing(h) => format!("hashing:{}:{}", h.dim, h.seed),
            EmbeddingProvider::VectorFile(t) => format!("vector_file:{}:{}", t.dim, t.fingerprint),
        }
    }
}

/// Sums the embeddings of the first `crop` tokens in sorted order, or
/// returns the sentinel when the set is empty.
pub fn embed_feature(tokens: &TokenSet, provider: &EmbeddingProvider, crop: usize) -> Vec<f64> {
    let dim = provider.dim();
    if tokens.is_empty() {
        return sentinel(dim);
    }
    let mut acc = vec![0.0; dim];
    for t in tokens.iter().take(crop.max(1)) {
        for (a, v) in acc.iter_mut().zip(provider.lookup(t)) {
            *a += v;
        }
    }
    acc
}

/// Token-embedding matrix `h` of one pair, F rows of length D, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    pub features: usize,
    pub dim: usize,
    pub h: Vec<f64>,
    pub missing_mask: Vec<bool>,
}

impl PairFeatures {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.h[j * self.dim..(j + 1) * self.dim]
    }
}

/// Converts pairs into feature matrices for one schema and provider.
#[derive(Debug, Clone)]
pub struct Featurizer {
    schema: AlignedSchema,
    provider: EmbeddingProvider,
    crop: usize,
    channels: FeatureChannels,
}

impl Featurizer {
    pub fn new(schema: AlignedSchema, provider: EmbeddingProvider, crop: usize, channels: FeatureChannels) -> Self {
        Self {
            schema,
            provider,
            crop: crop.max(1),
            channels,
        }
    }

    /// Fails when the provider's dimension differs from `expected_dim`.
    pub fn with_expected_dim(
        schema: AlignedSchema,
        provider: EmbeddingProvider,
        crop: usize,
        channels: FeatureChannels,
        expected_dim: usize,
    ) -> Result<Self> {
        if provider.dim() != expected_dim {
            return Err(Error::DimensionMismatch(format!(
                "embedding provider has dimension {}, model expects {expected_dim}",
                provider.dim()
            )));
        }
        Ok(Self::new(schema, provider, crop, channels))
    }

    pub fn schema(&self) -> &AlignedSchema {
        &self.schema
    }

    pub fn provider(&self) -> &EmbeddingProvider {
        &self.provider
    }

    pub fn channels(&self) -> FeatureChannels {
        self.channels
    }

    pub fn feature_count(&self) -> usize {
        self.channels.feature_count(&self.schema)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.channels.feature_names(&self.schema)
    }

    pub fn featurize(&self, pair: &PairRecord) -> Result<PairFeatures> {
        if !pair.left.conforms_to(&self.schema) || !pair.right.conforms_to(&self.schema) {
            return Err(Error::DimensionMismatch(format!(
                "pair `{}` does not conform to the schema",
                pair.pair_id
            )));
        }
        let dim = self.provider.dim();
        let features = self.feature_count();
        let mut h = Vec::with_capacity(features * dim);
        let mut missing_mask = Vec::with_capacity(features);
        for a in self.schema.attributes() {
            let (sim, uni) = contrastive_features(pair.left.value(a), pair.right.value(a));
            let sets: &[&TokenSet] = match self.channels {
                FeatureChannels::Both => &[&sim, &uni],
                FeatureChannels::SharedOnly => &[&sim],
                FeatureChannels::UniqueOnly => &[&uni],
            };
            for set in sets {
                h.extend(embed_feature(set, &self.provider, self.crop));
                missing_mask.push(set.is_empty());
            }
        }
        Ok(PairFeatures {
            features,
            dim,
            h,
            missing_mask,
        })
    }

    pub fn featurize_all(&self, pairs: &[PairRecord]) -> Result<Vec<PairFeatures>> {
        pairs.iter().map(|p| self.featurize(p)).collect()
    }
}

/// Featurizes one pair with both channels.
pub fn featurize_pair(
    pair: &PairRecord,
    schema: &AlignedSchema,
    provider: &EmbeddingProvider,
    crop: usize,
) -> Result<PairFeatures> {
    Featurizer::new(schema.clone(), provider.clone(), crop, FeatureChannels::Both).featurize(pair)
}

/// Debug dump of feature matrices: one CSV row per (pair, feature).
pub fn write_feature_dump<W: Write>(
    writer: W,
    names: &[String],
    pairs: &[(&str, &PairFeatures)],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for (pair_id, f) in pairs {
        for (j, name) in names.iter().enumerate().take(f.features) {
            let mut row = vec![pair_id.to_string(), name.clone()];
            row.extend(f.row(j).iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
