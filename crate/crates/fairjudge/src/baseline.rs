//! The contrastive baseline: cosine alignment, templated zero-shot
//! classification, optional temperature softmax.
//!
//! Embeddings are supplied externally through a store file, so the core
//! carries no encoder dependency. Vectors are stored single precision;
//! similarities are accumulated in double precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Similarities closer than this count as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("empty class list")]
    EmptyClassList,
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("empty similarity list")]
    EmptyInput,
    #[error("embedding store {path}: {reason}")]
    BadStore { path: String, reason: String },
    #[error("embedding store {path}: {source}")]
    StoreIo {
        path: String,
        source: std::io::Error,
    },
}

/// A fixed-length embedding; `normalized` reports whether the Euclidean
/// norm is 1 within 1e-6.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        let normalized = (norm - 1.0).abs() <= 1e-6;
        EmbeddingVector { values, normalized }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Cosine similarity in double precision; the canonical alignment score.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, BaselineError> {
    if u.dim() != v.dim() {
        return Err(BaselineError::DimMismatch(u.dim(), v.dim()));
    }
    let mut dot = 0.0f64;
    let mut nu = 0.0f64;
    let mut nv = 0.0f64;
    for (&a, &b) in u.values.iter().zip(&v.values) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(BaselineError::ZeroVector);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Alias of [`cosine`]; reported alongside judge alignment scores.
pub fn clip_align(image: &EmbeddingVector, caption: &EmbeddingVector) -> Result<f64, BaselineError> {
    cosine(image, caption)
}

/// Zero-shot argmax outcome. Ties (within [`TIE_TOLERANCE`]) go to the
/// first label in class order and are flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: String,
    pub index: usize,
    pub similarity: f64,
    pub tie: bool,
}

/// Pick the class text with maximal cosine to the image embedding.
pub fn classify(
    image: &EmbeddingVector,
    classes: &[(String, EmbeddingVector)],
) -> Result<Classification, BaselineError> {
    if classes.is_empty() {
        return Err(BaselineError::EmptyClassList);
    }
    let mut best_index = 0;
    let mut best_sim = f64::NEG_INFINITY;
    let mut sims = Vec::with_capacity(classes.len());
    for (i, (_, emb)) in classes.iter().enumerate() {
        let sim = cosine(image, emb)?;
        sims.push(sim);
        if sim > best_sim {
            best_sim = sim;
            best_index = i;
        }
    }
    let tie = sims
        .iter()
        .enumerate()
        .any(|(i, &s)| i != best_index && (best_sim - s).abs() <= TIE_TOLERANCE);
    Ok(Classification {
        label: classes[best_index].0.clone(),
        index: best_index,
        similarity: best_sim,
        tie,
    })
}

/// Temperature softmax over similarities. Probabilities sum to 1 within
/// 1e-9 and the argmax matches the similarity argmax for any temperature.
pub fn softmax_scores(sims: &[f64], temperature: f64) -> Result<Vec<f64>, BaselineError> {
    if !(temperature > 0.0) {
        return Err(BaselineError::NonPositiveTemperature(temperature));
    }
    if sims.is_empty() {
        return Err(BaselineError::EmptyInput);
    }
    let scaled: Vec<f64> = sims.iter().map(|s| s / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// File-backed embedding store keyed by content/text digest strings.
///
/// Text container, one vector per line:
///
/// ```text
/// embedstore v1
/// <key>\t<dim>\t<v0> <v1> ...
/// ```
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    entries: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let text = std::fs::read_to_string(path).map_err(|e| BaselineError::StoreIo {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text).map_err(|reason| BaselineError::BadStore {
            path: path.display().to_string(),
            reason,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some("embedstore v1") => {}
            other => return Err(format!("bad header {other:?}, expected `embedstore v1`")),
        }
        let mut entries = BTreeMap::new();
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.splitn(3, '\t');
            let key = cols.next().ok_or(format!("line {line_no}: missing key"))?;
            let dim: usize = cols
                .next()
                .ok_or(format!("line {line_no}: missing dim"))?
                .parse()
                .map_err(|_| format!("line {line_no}: bad dim"))?;
            let values: Vec<f32> = cols
                .next()
                .ok_or(format!("line {line_no}: missing values"))?
                .split_whitespace()
                .map(|v| v.parse::<f32>())
                .collect::<Result<_, _>>()
                .map_err(|_| format!("line {line_no}: bad float"))?;
            if values.len() != dim {
                return Err(format!(
                    "line {line_no}: declared dim {dim} but found {} values",
                    values.len()
                ));
            }
            if entries
                .insert(key.to_string(), EmbeddingVector::new(values))
                .is_some()
            {
                return Err(format!("line {line_no}: duplicate key `{key}`"));
            }
        }
        Ok(EmbeddingStore { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        std::fs::write(path, self.to_text()).map_err(|e| BaselineError::StoreIo {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("embedstore v1\n");
        for (key, emb) in &self.entries {
            let _ = write!(out, "{}\t{}\t", key, emb.dim());
            for (i, v) in emb.values().iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: EmbeddingVector) {
        self.entries.insert(key.into(), vector);
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingVector> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Merge another store into this one; later entries win.
    pub fn merge(&mut self, other: EmbeddingStore) {
        self.entries.extend(other.entries);
    }
}
