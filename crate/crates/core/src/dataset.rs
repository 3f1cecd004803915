//! Embedding datasets: schema, records, file formats and identity-disjoint folds.
//!
//! Two on-disk formats are supported. The CSV format carries class names and
//! needs the schema file to resolve them; the binary `SLEB` format carries
//! class indices. Both are resolved against a [`DemographicSchema`] stored as
//! JSON, conventionally next to the data file as `<data>.schema.json`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Allowed deviation of a stored vector's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

const BINARY_MAGIC: &[u8; 4] = b"SLEB";
const BINARY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("malformed row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("record {row}: inconsistent dimension (expected {expected}, found {found})")]
    Dimension {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("record {row}: unknown class `{class}` for criterion `{criterion}`")]
    UnknownClass {
        row: usize,
        criterion: String,
        class: String,
    },
    #[error("duplicate record ({subject_id}, {sample_index})")]
    Duplicate {
        subject_id: String,
        sample_index: u32,
    },
    #[error("record {row}: zero vector cannot be normalized")]
    ZeroVector { row: usize },
    #[error("invalid binary file: {0}")]
    Binary(String),
    #[error("dataset violates {} invariant(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
    #[error("k-fold requires k ≥ 2 (got {0})")]
    FoldCount(usize),
    #[error("group `{group}` has {subjects} subject(s), fewer than k = {k}")]
    GroupTooSmall {
        group: String,
        subjects: usize,
        k: usize,
    },
    #[error("fold {fold} out of range for k = {k}")]
    FoldIndex { fold: usize, k: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub classes: Vec<String>,
}

/// Demographic criteria and their classes. A group is one class per
/// criterion; groups are indexed in mixed radix with the first criterion
/// most significant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicSchema {
    pub criteria: Vec<Criterion>,
}

impl DemographicSchema {
    pub fn new(criteria: Vec<Criterion>) -> Result<Self, DatasetError> {
        let schema = Self { criteria };
        schema.check()?;
        Ok(schema)
    }

    /// Convenience constructor for a single criterion.
    pub fn single(name: &str, classes: &[&str]) -> Result<Self, DatasetError> {
        Self::new(vec![Criterion {
            name: name.to_string(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
        }])
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        if self.criteria.is_empty() {
            return Err(DatasetError::Schema("no criteria".into()));
        }
        let mut names = HashSet::new();
        for c in &self.criteria {
            if !names.insert(c.name.as_str()) {
                return Err(DatasetError::Schema(format!("duplicate criterion `{}`", c.name)));
            }
            if c.classes.len() < 2 {
                return Err(DatasetError::Schema(format!(
                    "criterion `{}` needs at least 2 classes",
                    c.name
                )));
            }
            if c.classes.len() > usize::from(u16::MAX) {
                return Err(DatasetError::Schema(format!("criterion `{}` has too many classes", c.name)));
            }
            let mut seen = HashSet::new();
            for class in &c.classes {
                if !seen.insert(class.as_str()) {
                    return Err(DatasetError::Schema(format!(
                        "duplicate class `{class}` in criterion `{}`",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn group_count(&self) -> usize {
        self.criteria.iter().map(|c| c.classes.len()).product()
    }

    pub fn group_index(&self, classes: &[u16]) -> Option<usize> {
        if classes.len() != self.criteria.len() {
            return None;
        }
        let mut index = 0;
        for (c, &k) in self.criteria.iter().zip(classes) {
            let k = usize::from(k);
            if k >= c.classes.len() {
                return None;
            }
            index = index * c.classes.len() + k;
        }
        Some(index)
    }

    pub fn group_classes(&self, mut group: usize) -> Vec<u16> {
        let mut out = vec![0u16; self.criteria.len()];
        for (slot, c) in out.iter_mut().zip(&self.criteria).rev() {
            *slot = (group % c.classes.len()) as u16;
            group /= c.classes.len();
        }
        out
    }

    /// Class names of a group joined with `/`.
    pub fn group_label(&self, group: usize) -> String {
        self.group_classes(group)
            .iter()
            .zip(&self.criteria)
            .map(|(&k, c)| c.classes[usize::from(k)].as_str())
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn group_by_label(&self, label: &str) -> Option<usize> {
        (0..self.group_count()).find(|&g| self.group_label(g) == label)
    }

    pub fn class_index(&self, criterion: usize, name: &str) -> Option<u16> {
        self.criteria[criterion]
            .classes
            .iter()
            .position(|c| c == name)
            .map(|i| i as u16)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let file = File::open(path).map_err(io_err(path))?;
        let schema: Self = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| DatasetError::Schema(format!("{}: {e}", path.display())))?;
        schema.check()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let json = serde_json::to_string_pretty(self).expect("schema serializes");
        std::fs::write(path, json + "\n").map_err(io_err(path))
    }
}

/// Sidecar path holding the schema of a data file.
pub fn schema_path_for(data: &Path) -> PathBuf {
    let mut name = data.as_os_str().to_owned();
    name.push(".schema.json");
    PathBuf::from(name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub subject_id: String,
    pub sample_index: u32,
    /// One class index per criterion.
    pub classes: Vec<u16>,
    pub vector: Vec<f64>,
}

/// An invariant violation found by [`Dataset::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub record: Option<usize>,
    pub subject_id: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.record, &self.subject_id) {
            (Some(r), Some(s)) => write!(f, "record {r} (subject `{s}`): {}", self.message),
            (None, Some(s)) => write!(f, "subject `{s}`: {}", self.message),
            (Some(r), None) => write!(f, "record {r}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

/// Records of one subject, as indices into [`Dataset::records`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectInfo {
    pub group: usize,
    pub records: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: DemographicSchema,
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
    pub provenance: String,
}

impl Dataset {
    /// Builds a dataset, normalizing every vector and rejecting any that
    /// fails the dataset invariants.
    pub fn new(
        schema: DemographicSchema,
        dim: usize,
        mut records: Vec<EmbeddingRecord>,
        provenance: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        schema.check()?;
        let mut keys = HashSet::new();
        for (row, r) in records.iter_mut().enumerate() {
            if r.vector.len() != dim {
                return Err(DatasetError::Dimension {
                    row,
                    expected: dim,
                    found: r.vector.len(),
                });
            }
            if !keys.insert((r.subject_id.clone(), r.sample_index)) {
                return Err(DatasetError::Duplicate {
                    subject_id: r.subject_id.clone(),
                    sample_index: r.sample_index,
                });
            }
            normalize_in_place(&mut r.vector).map_err(|_| DatasetError::ZeroVector { row })?;
        }
        let dataset = Self {
            schema,
            dim,
            records,
            provenance: provenance.into(),
        };
        let violations = dataset.validate();
        if violations.is_empty() {
            Ok(dataset)
        } else {
            Err(DatasetError::Invalid(violations))
        }
    }

    /// Lists every broken invariant; empty iff the dataset is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut keys = HashSet::new();
        let mut subject_groups: BTreeMap<&str, (&[u16], usize)> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            let v = |message: String| Violation {
                record: Some(i),
                subject_id: Some(r.subject_id.clone()),
                message,
            };
            if r.vector.len() != self.dim {
                out.push(v(format!(
                    "vector length {} differs from dataset dimension {}",
                    r.vector.len(),
                    self.dim
                )));
            } else {
                let norm = l2_norm(&r.vector);
                if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
                    out.push(v(format!("vector norm {norm} is not 1")));
                }
            }
            if self.schema.group_index(&r.classes).is_none() {
                out.push(v(format!("class tuple {:?} outside the schema", r.classes)));
            }
            if !keys.insert((r.subject_id.as_str(), r.sample_index)) {
                out.push(v(format!("duplicate sample index {}", r.sample_index)));
            }
            match subject_groups.get_mut(r.subject_id.as_str()) {
                None => {
                    subject_groups.insert(&r.subject_id, (&r.classes, 1));
                }
                Some((classes, count)) => {
                    *count += 1;
                    if *classes != r.classes.as_slice() {
                        out.push(v(format!(
                            "group {:?} differs from the subject's earlier group {:?}",
                            r.classes, classes
                        )));
                    }
                }
            }
        }
        for (subject, (_, count)) in subject_groups {
            if count < 2 {
                out.push(Violation {
                    record: None,
                    subject_id: Some(subject.to_string()),
                    message: format!("subject has {count} sample(s); at least 2 are required"),
                });
            }
        }
        out
    }

    /// Group index of a record.
    pub fn group_of(&self, record: usize) -> usize {
        self.schema
            .group_index(&self.records[record].classes)
            .expect("validated dataset")
    }

    /// Subjects in lexicographic order with their records.
    pub fn subjects(&self) -> BTreeMap<&str, SubjectInfo> {
        let mut out: BTreeMap<&str, SubjectInfo> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            let group = self.group_of(i);
            out.entry(r.subject_id.as_str())
                .or_insert_with(|| SubjectInfo {
                    group,
                    records: Vec::new(),
                })
                .records
                .push(i);
        }
        out
    }

    /// Number of subjects per group index.
    pub fn subjects_per_group(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for info in self.subjects().values() {
            *out.entry(info.group).or_insert(0) += 1;
        }
        out
    }

    /// Copy restricted to the subjects accepted by `keep`.
    pub fn subset(&self, keep: impl Fn(&str) -> bool, provenance: impl Into<String>) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            dim: self.dim,
            records: self
                .records
                .iter()
                .filter(|r| keep(&r.subject_id))
                .cloned()
                .collect(),
            provenance: provenance.into(),
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit norm unless it is already within [`NORM_TOLERANCE`].
///
/// Leaving near-unit vectors untouched keeps file round trips bit-exact.
fn normalize_in_place(v: &mut [f64]) -> Result<(), ()> {
    let norm = l2_norm(v);
    if !norm.is_finite() || norm == 0.0 {
        return Err(());
    }
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Binary,
}

impl DataFormat {
    /// `.csv` is CSV, anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Binary,
        }
    }
}

pub fn load_dataset(
    path: &Path,
    format: DataFormat,
    schema: &DemographicSchema,
) -> Result<Dataset, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let provenance = format!("loaded from {}", path.display());
    match format {
        DataFormat::Csv => read_csv(reader, schema, provenance),
        DataFormat::Binary => read_binary(reader, schema, provenance).map_err(|e| match e {
            DatasetError::Io { source, .. } => DatasetError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        }),
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path, format: DataFormat) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = BufWriter::new(file);
    match format {
        DataFormat::Csv => write_csv(dataset, &mut writer)?,
        DataFormat::Binary => write_binary(dataset, &mut writer).map_err(io_err(path))?,
    }
    writer.flush().map_err(io_err(path))
}

pub fn read_csv<R: Read>(
    reader: R,
    schema: &DemographicSchema,
    provenance: String,
) -> Result<Dataset, DatasetError> {
    schema.check()?;
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let malformed = |row, message: String| DatasetError::MalformedRow { row, message };
    let headers = csv.headers().map_err(|e| malformed(0, e.to_string()))?.clone();
    let n_crit = schema.criteria.len();
    if headers.len() < 2 + n_crit + 1 {
        return Err(malformed(0, "header has no vector columns".into()));
    }
    if &headers[0] != "subject_id" || &headers[1] != "sample_index" {
        return Err(malformed(0, "header must start with subject_id,sample_index".into()));
    }
    for (i, c) in schema.criteria.iter().enumerate() {
        if headers[2 + i] != c.name {
            return Err(malformed(
                0,
                format!("column {} is `{}`, expected criterion `{}`", 2 + i, &headers[2 + i], c.name),
            ));
        }
    }
    let dim = headers.len() - 2 - n_crit;
    for (j, h) in headers.iter().skip(2 + n_crit).enumerate() {
        if h != format!("v{j}") {
            return Err(malformed(0, format!("vector column {j} is named `{h}`")));
        }
    }

    let mut records = Vec::new();
    for (row, result) in csv.records().enumerate() {
        let rec = result.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, .. } => DatasetError::Dimension {
                row,
                expected: dim,
                found: (*len as usize).saturating_sub(2 + n_crit),
            },
            _ => malformed(row, e.to_string()),
        })?;
        let subject_id = rec[0].to_string();
        if subject_id.is_empty() {
            return Err(malformed(row, "empty subject_id".into()));
        }
        let sample_index: u32 = rec[1]
            .trim()
            .parse()
            .map_err(|e| malformed(row, format!("sample_index `{}`: {e}", &rec[1])))?;
        let mut classes = Vec::with_capacity(n_crit);
        for (i, c) in schema.criteria.iter().enumerate() {
            let name = &rec[2 + i];
            classes.push(schema.class_index(i, name).ok_or_else(|| DatasetError::UnknownClass {
                row,
                criterion: c.name.clone(),
                class: name.to_string(),
            })?);
        }
        let vector = rec
            .iter()
            .skip(2 + n_crit)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| malformed(row, format!("bad vector value `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        records.push(EmbeddingRecord {
            subject_id,
            sample_index,
            classes,
            vector,
        });
    }
    Dataset::new(schema.clone(), dim, records, provenance)
}

/// Writes the CSV format; values use 9 significant digits.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DatasetError> {
    let mut csv = csv::WriterBuilder::new().from_writer(writer);
    let wrap = |e: csv::Error| DatasetError::Io {
        path: PathBuf::from("<csv>"),
        source: e.into(),
    };
    let mut header = vec!["subject_id".to_string(), "sample_index".to_string()];
    header.extend(dataset.schema.criteria.iter().map(|c| c.name.clone()));
    header.extend((0..dataset.dim).map(|j| format!("v{j}")));
    csv.write_record(&header).map_err(wrap)?;
    for r in &dataset.records {
        let mut row = Vec::with_capacity(header.len());
        row.push(r.subject_id.clone());
        row.push(r.sample_index.to_string());
        for (c, &k) in dataset.schema.criteria.iter().zip(&r.classes) {
            row.push(c.classes[usize::from(k)].clone());
        }
        row.extend(r.vector.iter().map(|v| format!("{v:.8e}")));
        csv.write_record(&row).map_err(wrap)?;
    }
    csv.flush().map_err(|e| DatasetError::Io {
        path: PathBuf::from("<csv>"),
        source: e,
    })
}

fn read_exact_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], DatasetError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DatasetError::Binary("truncated file".into())
        } else {
            DatasetError::Io {
                path: PathBuf::new(),
                source: e,
            }
        }
    })?;
    Ok(buf)
}

pub fn read_binary<R: Read>(
    mut reader: R,
    schema: &DemographicSchema,
    provenance: String,
) -> Result<Dataset, DatasetError> {
    schema.check()?;
    let magic: [u8; 4] = read_exact_array(&mut reader)?;
    if &magic != BINARY_MAGIC {
        return Err(DatasetError::Binary("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(read_exact_array(&mut reader)?);
    if version != BINARY_VERSION {
        return Err(DatasetError::Binary(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(read_exact_array(&mut reader)?) as usize;
    let count = u64::from_le_bytes(read_exact_array(&mut reader)?);
    let mut records = Vec::new();
    for row in 0..count as usize {
        let len = u16::from_le_bytes(read_exact_array(&mut reader)?) as usize;
        let mut id = vec![0u8; len];
        reader
            .read_exact(&mut id)
            .map_err(|_| DatasetError::Binary("truncated file".into()))?;
        let subject_id = String::from_utf8(id)
            .map_err(|_| DatasetError::MalformedRow {
                row,
                message: "subject_id is not UTF-8".into(),
            })?;
        let sample_index = u32::from_le_bytes(read_exact_array(&mut reader)?);
        let mut classes = Vec::with_capacity(schema.criteria.len());
        for c in &schema.criteria {
            let k = u16::from_le_bytes(read_exact_array(&mut reader)?);
            if usize::from(k) >= c.classes.len() {
                return Err(DatasetError::UnknownClass {
                    row,
                    criterion: c.name.clone(),
                    class: format!("#{k}"),
                });
            }
            classes.push(k);
        }
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            vector.push(f64::from(f32::from_le_bytes(read_exact_array(&mut reader)?)));
        }
        records.push(EmbeddingRecord {
            subject_id,
            sample_index,
            classes,
            vector,
        });
    }
    let mut trailing = [0u8; 1];
    if matches!(reader.read(&mut trailing), Ok(n) if n > 0) {
        return Err(DatasetError::Binary("trailing bytes after last record".into()));
    }
    Dataset::new(schema.clone(), dim, records, provenance)
}

pub fn write_binary<W: Write>(dataset: &Dataset, mut w: W) -> std::io::Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(dataset.dim as u32).to_le_bytes())?;
    w.write_all(&(dataset.records.len() as u64).to_le_bytes())?;
    for r in &dataset.records {
        let id = r.subject_id.as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "subject_id longer than 65535 bytes")
        })?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&r.sample_index.to_le_bytes())?;
        for k in &r.classes {
            w.write_all(&k.to_le_bytes())?;
        }
        for &v in &r.vector {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Identity-disjoint assignment of subjects to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, subject_id: &str) -> Option<usize> {
        self.assignment.get(subject_id).copied()
    }

    pub fn test_subjects(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    /// Train split (the other k-1 folds) and test split (fold `fold`).
    pub fn split(&self, dataset: &Dataset, fold: usize) -> Result<(Dataset, Dataset), DatasetError> {
        if fold >= self.k {
            return Err(DatasetError::FoldIndex { fold, k: self.k });
        }
        let train = dataset.subset(
            |s| self.fold_of(s).is_some_and(|f| f != fold),
            format!("{} [train, fold {fold}/{}]", dataset.provenance, self.k),
        );
        let test = dataset.subset(
            |s| self.fold_of(s) == Some(fold),
            format!("{} [test, fold {fold}/{}]", dataset.provenance, self.k),
        );
        Ok((train, test))
    }
}

/// Stratified, identity-disjoint k-fold assignment.
///
/// Subjects are grouped by their full group tuple and sorted by id, each
/// group list is shuffled with the seeded generator and dealt round-robin
/// into folds. The dealing offset carries over between groups so overall
/// fold sizes stay balanced too.
pub fn kfold_split(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldPlan, DatasetError> {
    if k < 2 {
        return Err(DatasetError::FoldCount(k));
    }
    let mut by_group: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (subject, info) in dataset.subjects() {
        by_group.entry(info.group).or_default().push(subject);
    }
    for (&group, subjects) in &by_group {
        if subjects.len() < k {
            return Err(DatasetError::GroupTooSmall {
                group: dataset.schema.group_label(group),
                subjects: subjects.len(),
                k,
            });
        }
    }
    let mut rng = rng::seeded(seed);
    let mut assignment = BTreeMap::new();
    let mut offset = 0;
    for subjects in by_group.values_mut() {
        subjects.shuffle(&mut rng);
        for (i, s) in subjects.iter().enumerate() {
            assignment.insert(s.to_string(), (offset + i) % k);
        }
        offset = (offset + subjects.len()) % k;
    }
    Ok(FoldPlan { seed, k, assignment })
}
