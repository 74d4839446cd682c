//! Feature datasets: the FDS1 binary format, a CSV reader, a seeded
//! Gaussian-cluster generator and deterministic subsetting.
//!
//! FDS1 layout (little-endian):
//!
//! ```text
//! "FDS1" | u32 n_samples | u32 feature_dim | u32 n_classes
//!        | n_samples * feature_dim f32 (row-major) | n_samples u16 labels
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DATASET_MAGIC: &[u8; 4] = b"FDS1";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Binary,
    Csv,
}

impl DatasetFormat {
    /// `.csv` selects CSV, anything else the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Binary,
        }
    }
}

/// Row-major float32 features with u16 class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    feature_dim: usize,
    n_classes: usize,
    features: Vec<f32>,
    labels: Vec<u16>,
}

impl FeatureDataset {
    pub fn new(
        feature_dim: usize,
        n_classes: usize,
        features: Vec<f32>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be at least 1"));
        }
        if n_classes < 2 || n_classes > usize::from(u16::MAX) + 1 {
            return Err(Error::invalid(format!(
                "n_classes must be in [2, 65536], got {n_classes}"
            )));
        }
        if labels.is_empty() {
            return Err(Error::invalid("dataset must contain at least one sample"));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::DimensionMismatch {
                location: "feature matrix".into(),
                expected: labels.len() * feature_dim,
                found: features.len(),
            });
        }
        if let Some(k) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature {
                location: format!("row {} column {}", k / feature_dim, k % feature_dim),
            });
        }
        if let Some(i) = labels.iter().position(|&l| usize::from(l) >= n_classes) {
            return Err(Error::LabelOutOfRange {
                location: format!("row {i}"),
                label: u64::from(labels[i]),
                n_classes: n_classes as u32,
            });
        }
        Ok(Self {
            feature_dim,
            n_classes,
            features,
            labels,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n_samples() {
                return Err(Error::invalid(format!(
                    "row index {i} out of range for {} samples",
                    self.n_samples()
                )));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(self.feature_dim, self.n_classes, features, labels)
    }

    /// Contiguous rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let indices: Vec<usize> = (start..end).collect();
        self.select(&indices)
    }

    /// Same rows with labels remapped through `map` into `n_classes` classes;
    /// rows whose label maps to `None` are dropped.
    pub fn relabel(
        &self,
        n_classes: usize,
        map: impl Fn(usize) -> Option<u16>,
    ) -> Result<Option<Self>> {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.n_samples() {
            if let Some(l) = map(self.label(i)) {
                features.extend_from_slice(self.row(i));
                labels.push(l);
            }
        }
        if labels.is_empty() {
            return Ok(None);
        }
        Self::new(self.feature_dim, n_classes, features, labels).map(Some)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            HEADER_LEN + self.features.len() * 4 + self.labels.len() * 2,
        );
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(self.n_samples() as u32).to_le_bytes());
        out.extend_from_slice(&(self.feature_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_classes as u32).to_le_bytes());
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedHeader {
                offset: bytes.len() as u64,
                reason: format!("file has {} bytes, header needs {HEADER_LEN}", bytes.len()),
            });
        }
        if &bytes[0..4] != DATASET_MAGIC {
            return Err(Error::MalformedHeader {
                offset: 0,
                reason: format!("bad magic {:?}", &bytes[0..4]),
            });
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (n, d, c) = (word(4), word(8), word(12));
        if n == 0 {
            return Err(Error::MalformedHeader {
                offset: 4,
                reason: "n_samples is 0".into(),
            });
        }
        if d == 0 {
            return Err(Error::MalformedHeader {
                offset: 8,
                reason: "feature_dim is 0".into(),
            });
        }
        if !(2..=65536).contains(&c) {
            return Err(Error::MalformedHeader {
                offset: 12,
                reason: format!("n_classes {c} outside [2, 65536]"),
            });
        }
        let expected = n
            .checked_mul(d)
            .and_then(|nd| nd.checked_mul(4))
            .and_then(|f| f.checked_add(n * 2 + HEADER_LEN))
            .ok_or_else(|| Error::MalformedHeader {
                offset: 4,
                reason: "declared sizes overflow".into(),
            })?;
        if bytes.len() != expected {
            return Err(Error::DimensionMismatch {
                location: format!("file length (header declares n={n}, d={d})"),
                expected,
                found: bytes.len(),
            });
        }
        let label_start = HEADER_LEN + n * d * 4;
        let mut features = Vec::with_capacity(n * d);
        for (k, chunk) in bytes[HEADER_LEN..label_start].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFiniteFeature {
                    location: format!("byte {} (row {}, column {})", HEADER_LEN + 4 * k, k / d, k % d),
                });
            }
            features.push(v);
        }
        let mut labels = Vec::with_capacity(n);
        for (i, chunk) in bytes[label_start..].chunks_exact(2).enumerate() {
            let l = u16::from_le_bytes(chunk.try_into().unwrap());
            if usize::from(l) >= c {
                return Err(Error::LabelOutOfRange {
                    location: format!("byte {} (row {i})", label_start + 2 * i),
                    label: u64::from(l),
                    n_classes: c as u32,
                });
            }
            labels.push(l);
        }
        Self::new(d, c, features, labels)
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Writes `label,f0,f1,...`. Floats use the shortest representation
    /// that parses back to the same f32.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        write!(w, "label")?;
        for j in 0..self.feature_dim {
            write!(w, ",f{j}")?;
        }
        writeln!(w)?;
        for i in 0..self.n_samples() {
            write!(w, "{}", self.labels[i])?;
            for v in self.row(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout. When `n_classes` is `None` it is inferred as
    /// `max(label) + 1` (at least 2).
    pub fn load_csv(path: &Path, n_classes: Option<usize>) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        Self::parse_csv(reader, n_classes)
    }

    pub fn parse_csv(reader: impl BufRead, n_classes: Option<usize>) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Csv {
            line: 1,
            reason: "missing header".into(),
        })?;
        let header = header?;
        let columns: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if columns.first() != Some(&"label") || columns.len() < 2 {
            return Err(Error::Csv {
                line: 1,
                reason: "header must be `label,f0,f1,...`".into(),
            });
        }
        let d = columns.len() - 1;
        let mut features = Vec::new();
        let mut raw_labels: Vec<(usize, u64)> = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != d + 1 {
                return Err(Error::DimensionMismatch {
                    location: format!("line {line_no}"),
                    expected: d + 1,
                    found: fields.len(),
                });
            }
            let label: u64 = fields[0].parse().map_err(|_| Error::Csv {
                line: line_no,
                reason: format!("label `{}` is not a non-negative integer", fields[0]),
            })?;
            raw_labels.push((line_no, label));
            for (j, f) in fields[1..].iter().enumerate() {
                let v: f32 = f.parse().map_err(|_| Error::Csv {
                    line: line_no,
                    reason: format!("feature f{j} `{f}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteFeature {
                        location: format!("line {line_no} column f{j}"),
                    });
                }
                features.push(v);
            }
        }
        if raw_labels.is_empty() {
            return Err(Error::Csv {
                line: 2,
                reason: "no samples".into(),
            });
        }
        let c = n_classes.unwrap_or_else(|| {
            let max = raw_labels.iter().map(|&(_, l)| l).max().unwrap_or(0);
            (max as usize + 1).max(2)
        });
        let mut labels = Vec::with_capacity(raw_labels.len());
        for (line_no, l) in raw_labels {
            if l >= c as u64 {
                return Err(Error::LabelOutOfRange {
                    location: format!("line {line_no}"),
                    label: l,
                    n_classes: c as u32,
                });
            }
            labels.push(l as u16);
        }
        Self::new(d, c, features, labels)
    }
}

/// Reads a dataset; `n_classes` only applies to CSV input.
pub fn load_dataset(
    path: &Path,
    format: DatasetFormat,
    n_classes: Option<usize>,
) -> Result<FeatureDataset> {
    match format {
        DatasetFormat::Binary => FeatureDataset::from_bytes(&fs::read(path)?),
        DatasetFormat::Csv => FeatureDataset::load_csv(path, n_classes),
    }
}

pub fn save_dataset(ds: &FeatureDataset, path: &Path, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::Binary => ds.save_binary(path),
        DatasetFormat::Csv => ds.save_csv(path),
    }
}

/// Gaussian class clusters with identity within-class covariance.
///
/// Class means sit at distance `class_separation / sqrt(2)` from the origin
/// along mutually orthogonal random directions when `n_classes <= d`, so every
/// pair of means is exactly `class_separation` apart; with more classes than
/// dimensions the directions are independent random unit vectors. Labels
/// cycle `0, 1, ..., C-1, 0, ...`, so every class is present whenever
/// `n >= C`.
pub fn synthesize_dataset(
    n: usize,
    d: usize,
    n_classes: usize,
    class_separation: f64,
    seed: u64,
) -> Result<FeatureDataset> {
    if n < n_classes {
        return Err(Error::invalid(format!(
            "n ({n}) must be at least the number of classes ({n_classes})"
        )));
    }
    if !class_separation.is_finite() || class_separation < 0.0 {
        return Err(Error::invalid("class_separation must be finite and >= 0"));
    }
    if d == 0 || n_classes < 2 {
        return Err(Error::invalid("need d >= 1 and at least 2 classes"));
    }
    let mut gen = rng::stream(seed);
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut gen)).collect();
        if n_classes <= d {
            for u in &directions {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        directions.push(v);
    }
    let radius = class_separation / std::f64::consts::SQRT_2;
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % n_classes;
        for &u in &directions[c] {
            let z: f64 = StandardNormal.sample(&mut gen);
            features.push((radius * u + z) as f32);
        }
        labels.push(c as u16);
    }
    FeatureDataset::new(d, n_classes, features, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    RandomSubset,
    PointRemoval,
}

/// Seeded sampling without replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub mode: SubsetMode,
    pub size_or_removals: usize,
    pub seed: u64,
}

impl SubsetSpec {
    pub fn random_subset(size: usize, seed: u64) -> Self {
        Self {
            mode: SubsetMode::RandomSubset,
            size_or_removals: size,
            seed,
        }
    }

    pub fn point_removal(removals: usize, seed: u64) -> Self {
        Self {
            mode: SubsetMode::PointRemoval,
            size_or_removals: removals,
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Kept row indices for a source of `n` rows, strictly increasing.
    pub fn indices(&self, n: usize) -> Result<Vec<usize>> {
        let k = self.size_or_removals;
        match self.mode {
            SubsetMode::RandomSubset => {
                if k > n {
                    return Err(Error::invalid(format!(
                        "random subset of {k} requested from {n} samples"
                    )));
                }
                Ok(rng::choose_sorted(n, k, self.seed))
            }
            SubsetMode::PointRemoval => {
                if k >= n {
                    return Err(Error::invalid(format!(
                        "removing {k} of {n} samples leaves none"
                    )));
                }
                let removed = rng::choose_sorted(n, k, self.seed);
                let mut keep = Vec::with_capacity(n - k);
                let mut r = removed.iter().peekable();
                for i in 0..n {
                    if r.peek() == Some(&&i) {
                        r.next();
                    } else {
                        keep.push(i);
                    }
                }
                Ok(keep)
            }
        }
    }
}

pub fn resolve_subset(ds: &FeatureDataset, spec: &SubsetSpec) -> Result<FeatureDataset> {
    let indices = spec.indices(ds.n_samples())?;
    ds.select(&indices)
}
