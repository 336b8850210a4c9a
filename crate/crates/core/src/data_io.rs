//! Dataset loading, label handling and partitioning across users.
//!
//! Rows are sparse: an absent feature reads as `0.0`, a stored `NaN` is a
//! missing value. Feature domains are computed over the whole dataset at load
//! time and act as the public manifest from which split candidates are
//! built; only per-feature minima and maxima are disclosed this way.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::xgboost::Features;
use crate::{seeded_rng, UserId};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Row {
    /// Strictly increasing.
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl Row {
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        pairs.dedup_by_key(|p| p.0);
        let (indices, values) = pairs.into_iter().unzip();
        Row { indices, values }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Row::from_pairs(
            values.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, &v)| (i as u32, v)).collect(),
        )
    }
}

impl Features for Row {
    fn value(&self, feature: usize) -> f64 {
        match u32::try_from(feature).map(|f| self.indices.binary_search(&f)) {
            Ok(Ok(i)) => self.values[i],
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub rows: Vec<Row>,
    pub labels: Vec<f64>,
    pub n_features: usize,
    pub feature_domains: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, rows: Vec<Row>, labels: Vec<f64>, n_features: usize) -> Self {
        let feature_domains = compute_domains(&rows, n_features);
        Dataset { name: name.into(), rows, labels, n_features, feature_domains }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Maps `{-1, +1}` labels to `{0, 1}`; `{0, 1}` labels are kept.
    pub fn binarize_labels(&mut self) -> Result<()> {
        for (i, y) in self.labels.iter_mut().enumerate() {
            *y = match *y {
                1.0 => 1.0,
                v if v == 0.0 || v == -1.0 => 0.0,
                v => return Err(Error::Schema(format!("row {}: label {v} is not binary", i + 1))),
            };
        }
        Ok(())
    }

    /// Rows at `indices`, keeping this dataset's feature domains.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_features: self.n_features,
            feature_domains: self.feature_domains.clone(),
        }
    }

    /// Random `(train, test)` split with `train_fraction` of the rows in train.
    pub fn train_test_split(&self, train_fraction: f64, rng: &mut impl RngCore) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let cut = ((self.len() as f64) * train_fraction).round() as usize;
        let (a, b) = idx.split_at(cut.min(self.len()));
        (self.subset(a), self.subset(b))
    }

    /// First `count` rows after a seeded shuffle.
    pub fn sample(&self, count: usize, rng: &mut impl RngCore) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx.truncate(count);
        self.subset(&idx)
    }
}

fn compute_domains(rows: &[Row], n_features: usize) -> Vec<(f64, f64)> {
    let mut domains = vec![(f64::INFINITY, f64::NEG_INFINITY); n_features];
    let mut present = vec![0usize; n_features];
    for row in rows {
        for (&i, &v) in row.indices.iter().zip(&row.values) {
            let i = i as usize;
            present[i] += 1;
            if v.is_finite() {
                domains[i].0 = domains[i].0.min(v);
                domains[i].1 = domains[i].1.max(v);
            }
        }
    }
    for (d, &count) in domains.iter_mut().zip(&present) {
        if count < rows.len() {
            d.0 = d.0.min(0.0);
            d.1 = d.1.max(0.0);
        }
        if d.0 > d.1 {
            *d = (0.0, 0.0);
        }
    }
    domains
}

pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_libsvm(&text, &file_stem(path))
}

/// `label idx:val idx:val ...`, one row per line. Indices are kept as
/// written; blank lines and `#` comments are skipped.
pub fn parse_libsvm(text: &str, name: &str) -> Result<Dataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut n_features = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line");
        let label: f64 = label_tok.parse().map_err(|_| err(format!("bad label {label_tok:?}")))?;
        let mut pairs = Vec::new();
        for tok in tokens {
            let (idx, val) =
                tok.split_once(':').ok_or_else(|| err(format!("expected idx:val, got {tok:?}")))?;
            let idx: u32 = idx.parse().map_err(|_| err(format!("bad index {idx:?}")))?;
            let val: f64 = val.parse().map_err(|_| err(format!("bad value {val:?}")))?;
            if pairs.last().is_some_and(|&(prev, _)| prev >= idx) {
                return Err(err(format!("index {idx} is not increasing")));
            }
            n_features = n_features.max(idx as usize + 1);
            pairs.push((idx, val));
        }
        rows.push(Row::from_pairs(pairs));
        labels.push(label);
    }
    Ok(Dataset::new(name, rows, labels, n_features))
}

pub fn write_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    for (row, y) in ds.rows.iter().zip(&ds.labels) {
        write!(out, "{y}").unwrap();
        for (i, v) in row.indices.iter().zip(&row.values) {
            write!(out, " {i}:{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// CSV with a header row. Empty cells are missing values.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_csv(&text, label_column, &file_stem(path))
}

pub fn parse_csv(text: &str, label_column: &str, name: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Schema(format!("no column named {label_column:?}")))?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let mut dense = Vec::with_capacity(headers.len() - 1);
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let value = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("column {:?}: {cell:?} is not a number", &headers[c]),
                })?
            };
            if c == label_idx {
                if value.is_nan() {
                    return Err(Error::Schema(format!("line {line}: missing label")));
                }
                labels.push(value);
            } else {
                dense.push(value);
            }
        }
        rows.push(Row::from_dense(&dense));
    }
    Ok(Dataset::new(name, rows, labels, headers.len() - 1))
}

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// MNIST-style IDX files. Pixels are scaled to `[0, 1]`; labels are digits.
pub fn load_mnist_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path.as_ref())?;
    let labels = fs::read(labels_path.as_ref())?;
    parse_mnist_idx(&images, &labels, &file_stem(images_path.as_ref()))
}

pub fn parse_mnist_idx(images: &[u8], labels: &[u8], name: &str) -> Result<Dataset> {
    let (img_dims, pixels) = idx_body(images, IDX_IMAGES_MAGIC)?;
    let (lab_dims, digits) = idx_body(labels, IDX_LABELS_MAGIC)?;
    let count = img_dims[0];
    if lab_dims[0] != count {
        return Err(Error::Schema(format!("{count} images but {} labels", lab_dims[0])));
    }
    let width: usize = img_dims[1..].iter().product();
    let rows = pixels
        .chunks_exact(width)
        .map(|px| Row::from_dense(&px.iter().map(|&p| f64::from(p) / 255.0).collect::<Vec<_>>()))
        .collect();
    let labels =
        digits
            .iter()
            .map(|&d| {
                if d <= 9 {
                    Ok(f64::from(d))
                } else {
                    Err(Error::Schema(format!("label {d} is not a digit")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(name, rows, labels, width))
}

fn idx_body(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8])> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::Decode("truncated IDX header".into()))
    };
    let found = word(0)?;
    if found != magic {
        return Err(Error::Decode(format!("IDX magic {found:#010x}, expected {magic:#010x}")));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (1..=ndims).map(|i| word(i).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let header = 4 * (ndims + 1);
    let expected: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() != expected {
        return Err(Error::Decode(format!("IDX body has {} bytes, expected {expected}", body.len())));
    }
    Ok((dims, body))
}

pub fn write_idx_images(images: &[Vec<u8>], rows: u32, cols: u32) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend((images.len() as u32).to_be_bytes());
    out.extend(rows.to_be_bytes());
    out.extend(cols.to_be_bytes());
    for img in images {
        out.extend(img);
    }
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(IDX_LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
}

/// Disjoint row-index shards, one per user.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<(UserId, Vec<usize>)>,
}

impl Partition {
    pub fn shard(&self, user: UserId) -> Option<&[usize]> {
        self.shards.iter().find(|(u, _)| *u == user).map(|(_, s)| s.as_slice())
    }
}

/// Shuffles the rows and deals them into `n_users` shards whose sizes
/// differ by at most one. Users are numbered from 1.
pub fn partition(n_rows: usize, n_users: usize, rng: &mut impl RngCore) -> Result<Partition> {
    if n_users == 0 || n_users > n_rows {
        return Err(Error::EmptyShard { rows: n_rows, users: n_users });
    }
    let mut idx: Vec<usize> = (0..n_rows).collect();
    idx.shuffle(rng);
    let base = n_rows / n_users;
    let extra = n_rows % n_users;
    let mut start = 0;
    let shards = (0..n_users)
        .map(|u| {
            let len = base + usize::from(u < extra);
            let mut shard = idx[start..start + len].to_vec();
            shard.sort_unstable();
            start += len;
            (UserId(u as u32 + 1), shard)
        })
        .collect();
    Ok(Partition { shards })
}

/// Category counts of the 14 census attributes, one-hot encoded into 123
/// binary features numbered from 1.
pub const ADULT_CARDINALITIES: [usize; 14] = [5, 8, 5, 16, 5, 7, 14, 6, 5, 2, 3, 3, 4, 40];

/// Deterministic census-like binary classification data in the one-hot
/// layout of the libsvm ADULT files: every row has exactly one active
/// feature per attribute, labels are `{0, 1}` with about 24% positives, and
/// the label depends on the attributes through a noisy additive score.
pub fn synthetic_adult(rows: usize, seed: u64) -> Dataset {
    let mut rng = seeded_rng(seed);
    let attrs: Vec<(WeightedIndex<f64>, Vec<f64>)> = ADULT_CARDINALITIES
        .iter()
        .map(|&k| {
            let probs: Vec<f64> = (0..k).map(|c| 1.0 / (c as f64 + 1.0)).collect();
            let effects: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            (WeightedIndex::new(probs).expect("positive weights"), effects)
        })
        .collect();
    let mut data = Vec::with_capacity(rows);
    let mut scores = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut offset = 1u32;
        let mut pairs = Vec::with_capacity(attrs.len());
        let mut score = 0.0;
        for ((dist, effects), &k) in attrs.iter().zip(&ADULT_CARDINALITIES) {
            let c = dist.sample(&mut rng);
            pairs.push((offset + c as u32, 1.0));
            score += effects[c];
            offset += k as u32;
        }
        let u: f64 = rng.gen_range(1e-12..1.0);
        score += (u / (1.0 - u)).ln();
        data.push(Row::from_pairs(pairs));
        scores.push(score);
    }
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted.get(((rows as f64) * 0.76) as usize).copied().unwrap_or(f64::INFINITY);
    let labels = scores.iter().map(|&s| f64::from(s >= cut)).collect();
    let n_features = 1 + ADULT_CARDINALITIES.iter().sum::<usize>();
    Dataset::new("synthetic-adult", data, labels, n_features)
}
