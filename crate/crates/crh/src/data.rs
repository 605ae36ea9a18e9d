//! Dataset file formats, synthetic hierarchical data generation, and
//! reference-embedding ingestion.
//!
//! Feature files (`CRHF`) and embedding files (`CRHE`) are streamable
//! little-endian binary formats designed for bit-exact round trips; see
//! [`write_dataset`] and [`write_embeddings`] for the layouts.

use std::io::{BufRead, Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::code::{read_exact, read_u32, read_u64};
use crate::eval::SimilarityMatrix;
use crate::seed::{SeedStreams, Stream};
use crate::{Error, Result};

/// Multi-hot label set of one sample, packed one bit per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    words: Vec<u64>,
    classes: usize,
}

impl LabelMask {
    pub fn new(classes: usize) -> Self {
        assert!(classes >= 1);
        Self {
            words: vec![0u64; classes.div_ceil(64)],
            classes,
        }
    }

    pub fn from_classes(classes: usize, members: &[usize]) -> Result<Self> {
        let mut mask = Self::new(classes);
        for &c in members {
            if c >= classes {
                return Err(Error::InvalidParameter(format!(
                    "label index {c} out of range for {classes} classes"
                )));
            }
            mask.words[c / 64] |= 1u64 << (c % 64);
        }
        Ok(mask)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn contains(&self, class: usize) -> bool {
        class < self.classes && self.words[class / 64] >> (class % 64) & 1 == 1
    }

    /// Number of labels, `||y||_1`.
    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// True if the two samples share at least one label.
    pub fn intersects(&self, other: &Self) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.classes).filter(|&c| self.contains(c))
    }

    fn to_record_bytes(&self) -> Vec<u8> {
        let n = self.classes.div_ceil(8);
        let mut out = Vec::with_capacity(n);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(n);
        out
    }

    fn from_record_bytes(bytes: &[u8], classes: usize) -> Result<Self> {
        let mut mask = Self::new(classes);
        for (i, &b) in bytes.iter().enumerate() {
            mask.words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        let rem = classes % 64;
        if rem != 0 {
            let last = mask.words.len() - 1;
            if mask.words[last] >> rem != 0 {
                return Err(Error::InvalidParameter(
                    "label bit set beyond class count".into(),
                ));
            }
        }
        Ok(mask)
    }
}

/// `N` feature vectors with multi-hot labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    single_label: bool,
    features: Vec<f32>,
    labels: Vec<LabelMask>,
}

impl Dataset {
    pub fn new(
        dim: usize,
        classes: usize,
        features: Vec<f32>,
        labels: Vec<LabelMask>,
    ) -> Result<Self> {
        if dim < 1 || classes < 1 {
            return Err(Error::InvalidParameter(format!(
                "dataset needs dim >= 1 and classes >= 1, got {dim}, {classes}"
            )));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::InvalidParameter(format!(
                "feature buffer holds {} values, expected {} samples x {dim}",
                features.len(),
                labels.len()
            )));
        }
        for (n, mask) in labels.iter().enumerate() {
            if mask.classes() != classes {
                return Err(Error::InvalidParameter(format!(
                    "sample {n} labels cover {} classes, dataset has {classes}",
                    mask.classes()
                )));
            }
            if mask.count() == 0 {
                return Err(Error::InvalidParameter(format!("sample {n} has no labels")));
            }
        }
        let single_label = labels.iter().all(|m| m.count() == 1);
        Ok(Self {
            dim,
            classes,
            single_label,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn is_single_label(&self) -> bool {
        self.single_label
    }

    pub fn feature(&self, n: usize) -> &[f32] {
        &self.features[n * self.dim..(n + 1) * self.dim]
    }

    pub fn label(&self, n: usize) -> &LabelMask {
        &self.labels[n]
    }

    pub fn labels(&self) -> &[LabelMask] {
        &self.labels
    }

    /// Indices of samples carrying class `c`.
    pub fn class_members(&self, c: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&n| self.labels[n].contains(c))
            .collect()
    }

    /// Errors if some class has no samples, naming the first offender.
    pub fn check_all_classes_populated(&self) -> Result<()> {
        let mut seen = vec![false; self.classes];
        for mask in &self.labels {
            for c in mask.iter() {
                seen[c] = true;
            }
        }
        match seen.iter().position(|&s| !s) {
            Some(class) => Err(Error::EmptyClass { class }),
            None => Ok(()),
        }
    }
}

const DATASET_MAGIC: [u8; 4] = *b"CRHF";
const DATASET_VERSION: u32 = 1;
const FLAG_SINGLE_LABEL: u8 = 1;

/// Writes the feature file: magic `CRHF`, u32 version, u64 N, u32 D, u32 C,
/// u8 flags (bit 0 = single-label); then per sample `D` f32 LE followed by
/// `ceil(C/8)` label-bitmap bytes, padding zero.
pub fn write_dataset(dataset: &Dataset, writer: &mut impl Write) -> Result<()> {
    writer.write_all(&DATASET_MAGIC)?;
    writer.write_all(&DATASET_VERSION.to_le_bytes())?;
    writer.write_all(&(dataset.len() as u64).to_le_bytes())?;
    writer.write_all(&(dataset.dim() as u32).to_le_bytes())?;
    writer.write_all(&(dataset.classes() as u32).to_le_bytes())?;
    let flags = if dataset.is_single_label() {
        FLAG_SINGLE_LABEL
    } else {
        0
    };
    writer.write_all(&[flags])?;
    for n in 0..dataset.len() {
        for &v in dataset.feature(n) {
            writer.write_all(&v.to_le_bytes())?;
        }
        writer.write_all(&dataset.label(n).to_record_bytes())?;
    }
    Ok(())
}

pub fn read_dataset(reader: &mut impl Read) -> Result<Dataset> {
    let mut offset = 0u64;
    let magic = read_exact(reader, 4, &mut offset, "dataset magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad dataset magic {magic:02x?}, expected {DATASET_MAGIC:02x?}"),
        });
    }
    let version = read_u32(reader, &mut offset, "dataset version")?;
    if version != DATASET_VERSION {
        return Err(Error::Format {
            offset: offset - 4,
            message: format!("unsupported dataset version {version}"),
        });
    }
    let n = read_u64(reader, &mut offset, "sample count")? as usize;
    let dim = read_u32(reader, &mut offset, "feature dimension")? as usize;
    let classes = read_u32(reader, &mut offset, "class count")? as usize;
    let flags = read_exact(reader, 1, &mut offset, "flags")?[0];
    if dim < 1 || classes < 1 {
        return Err(Error::Format {
            offset,
            message: format!("invalid dataset dimensions dim={dim}, classes={classes}"),
        });
    }
    let label_len = classes.div_ceil(8);
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        let feat_bytes = read_exact(reader, dim * 4, &mut offset, "feature record")?;
        for chunk in feat_bytes.chunks_exact(4) {
            features.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        let record_offset = offset;
        let label_bytes = read_exact(reader, label_len, &mut offset, "label record")?;
        let mask =
            LabelMask::from_record_bytes(&label_bytes, classes).map_err(|e| Error::Format {
                offset: record_offset,
                message: format!("sample {s}: {e}"),
            })?;
        if mask.count() == 0 {
            return Err(Error::Format {
                offset: record_offset,
                message: format!("sample {s} has no labels"),
            });
        }
        if flags & FLAG_SINGLE_LABEL != 0 && mask.count() != 1 {
            return Err(Error::Format {
                offset: record_offset,
                message: format!(
                    "sample {s} has {} labels but the file is flagged single-label",
                    mask.count()
                ),
            });
        }
        labels.push(mask);
    }
    Dataset::new(dim, classes, features, labels)
}

const EMBEDDING_MAGIC: [u8; 4] = *b"CRHE";
const EMBEDDING_VERSION: u32 = 1;

/// Per-sample reference embeddings, row-major f32.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    dim: usize,
    values: Vec<f32>,
}

impl Embeddings {
    pub fn new(dim: usize, values: Vec<f32>) -> Result<Self> {
        if dim < 1 || !values.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "embedding buffer of {} values does not split into rows of {dim}",
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, n: usize) -> &[f32] {
        &self.values[n * self.dim..(n + 1) * self.dim]
    }

    pub fn rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|n| self.row(n).iter().map(|&v| v as f64).collect())
            .collect()
    }
}

/// Writes the embedding file: magic `CRHE`, u32 version, u64 N, u32 E, then
/// `N * E` f32 LE.
pub fn write_embeddings(embeddings: &Embeddings, writer: &mut impl Write) -> Result<()> {
    writer.write_all(&EMBEDDING_MAGIC)?;
    writer.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    writer.write_all(&(embeddings.len() as u64).to_le_bytes())?;
    writer.write_all(&(embeddings.dim() as u32).to_le_bytes())?;
    for &v in &embeddings.values {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads an embedding file, checking the record count against `expected`.
pub fn read_embeddings(reader: &mut impl Read, expected: Option<usize>) -> Result<Embeddings> {
    let mut offset = 0u64;
    let magic = read_exact(reader, 4, &mut offset, "embedding magic")?;
    if magic != EMBEDDING_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad embedding magic {magic:02x?}, expected {EMBEDDING_MAGIC:02x?}"),
        });
    }
    let version = read_u32(reader, &mut offset, "embedding version")?;
    if version != EMBEDDING_VERSION {
        return Err(Error::Format {
            offset: offset - 4,
            message: format!("unsupported embedding version {version}"),
        });
    }
    let n = read_u64(reader, &mut offset, "embedding count")? as usize;
    let dim = read_u32(reader, &mut offset, "embedding dimension")? as usize;
    if let Some(expected) = expected {
        if n != expected {
            return Err(Error::Format {
                offset: 8,
                message: format!("embedding file holds {n} records, dataset has {expected}"),
            });
        }
    }
    if dim < 1 {
        return Err(Error::Format {
            offset: offset - 4,
            message: "embedding dimension must be at least 1".into(),
        });
    }
    let bytes = read_exact(reader, n * dim * 4, &mut offset, "embedding values")?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Embeddings::new(dim, values)
}

/// Specification of the synthetic hierarchical Gaussian dataset.
///
/// Classes are grouped into superclasses; a class prototype is its
/// superclass prototype plus class-level noise, and each sample is its class
/// prototype plus sample-level noise. With probability `rho` a sample gains
/// one extra label from the same superclass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_superclasses")]
    pub superclasses: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_samples_per_class")]
    pub samples_per_class: usize,
    #[serde(default = "default_sigma_super")]
    pub sigma_super: f64,
    #[serde(default = "default_sigma_class")]
    pub sigma_class: f64,
    #[serde(default = "default_sigma_noise")]
    pub sigma_noise: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_classes() -> usize {
    16
}
fn default_superclasses() -> usize {
    4
}
fn default_dim() -> usize {
    32
}
fn default_samples_per_class() -> usize {
    100
}
fn default_sigma_super() -> f64 {
    4.0
}
fn default_sigma_class() -> f64 {
    1.0
}
fn default_sigma_noise() -> f64 {
    0.5
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: default_classes(),
            superclasses: default_superclasses(),
            dim: default_dim(),
            samples_per_class: default_samples_per_class(),
            sigma_super: default_sigma_super(),
            sigma_class: default_sigma_class(),
            sigma_noise: default_sigma_noise(),
            rho: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 1 || self.superclasses < 1 || self.superclasses > self.classes {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= superclasses <= classes, got {} and {}",
                self.superclasses, self.classes
            )));
        }
        if self.dim < 1 || self.samples_per_class < 1 {
            return Err(Error::InvalidParameter(
                "dim and samples_per_class must be at least 1".into(),
            ));
        }
        if self.sigma_super <= 0.0 || self.sigma_class <= 0.0 || self.sigma_noise < 0.0 {
            return Err(Error::InvalidParameter(
                "sigma_super and sigma_class must be positive, sigma_noise nonnegative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// Superclass of class `c` (balanced contiguous blocks).
    pub fn superclass_of(&self, c: usize) -> usize {
        c * self.superclasses / self.classes
    }
}

/// A generated dataset together with its ground-truth semantics.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// Exact class prototypes (dimension = feature dimension).
    pub prototypes: Vec<Vec<f64>>,
    /// Cosine similarity matrix of the class prototypes.
    pub reference_similarity: SimilarityMatrix,
}

/// Generates the synthetic dataset described by `spec`, deterministically
/// per seed.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let streams = SeedStreams::new(spec.seed);
    let mut proto_rng = streams.rng(Stream::Synth);

    let normal = |rng: &mut rand_chacha::ChaCha8Rng, sigma: f64| -> f64 {
        sigma * rng.sample::<f64, _>(StandardNormal)
    };

    let mut super_protos = Vec::with_capacity(spec.superclasses);
    for _ in 0..spec.superclasses {
        let p: Vec<f64> = (0..spec.dim)
            .map(|_| normal(&mut proto_rng, spec.sigma_super))
            .collect();
        super_protos.push(p);
    }
    let mut prototypes = Vec::with_capacity(spec.classes);
    for c in 0..spec.classes {
        let base = &super_protos[spec.superclass_of(c)];
        let p: Vec<f64> = base
            .iter()
            .map(|&v| v + normal(&mut proto_rng, spec.sigma_class))
            .collect();
        prototypes.push(p);
    }

    let n = spec.classes * spec.samples_per_class;
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    let mut sample_rng = proto_rng;
    for c in 0..spec.classes {
        let proto = &prototypes[c];
        let group = spec.superclass_of(c);
        let siblings: Vec<usize> = (0..spec.classes)
            .filter(|&o| o != c && spec.superclass_of(o) == group)
            .collect();
        for _ in 0..spec.samples_per_class {
            for &v in proto.iter() {
                features.push((v + normal(&mut sample_rng, spec.sigma_noise)) as f32);
            }
            let mut members = vec![c];
            if spec.rho > 0.0 && !siblings.is_empty() && sample_rng.random_bool(spec.rho) {
                members.push(siblings[sample_rng.random_range(0..siblings.len())]);
            }
            labels.push(LabelMask::from_classes(spec.classes, &members)?);
        }
    }

    let reference_similarity = SimilarityMatrix::from_vectors(&prototypes)?;
    Ok(SynthOutput {
        dataset: Dataset::new(spec.dim, spec.classes, features, labels)?,
        prototypes,
        reference_similarity,
    })
}

/// Imports a plain-text CSV: feature columns followed by one column of
/// semicolon-separated label indices.
pub fn import_csv(reader: impl BufRead, classes: usize) -> Result<Dataset> {
    let mut dim = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "line {}: expected feature columns plus a label column",
                lineno + 1
            )));
        }
        let (feat_fields, label_field) = fields.split_at(fields.len() - 1);
        let row_dim = feat_fields.len();
        match dim {
            None => dim = Some(row_dim),
            Some(d) if d != row_dim => {
                return Err(Error::InvalidParameter(format!(
                    "line {}: {row_dim} feature columns, expected {d}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        for f in feat_fields {
            let v: f32 = f.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("line {}: bad feature value {f:?}", lineno + 1))
            })?;
            features.push(v);
        }
        let mut members = Vec::new();
        for part in label_field[0].split(';') {
            let c: usize = part.trim().parse().map_err(|_| {
                Error::InvalidParameter(format!("line {}: bad label index {part:?}", lineno + 1))
            })?;
            members.push(c);
        }
        labels.push(LabelMask::from_classes(classes, &members)?);
    }
    let dim = dim.ok_or_else(|| Error::InvalidParameter("empty CSV input".into()))?;
    Dataset::new(dim, classes, features, labels)
}
