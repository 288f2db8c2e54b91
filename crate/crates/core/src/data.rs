//! Labeled datasets: CIFAR-10 binary batches, CSV frames, synthetic tasks, and batching.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax_rows, ffdnn_spec, Network};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N × …` features, one leading row per sample.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dim("Dataset::new", features.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample feature shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Consecutive train / validation / test slices; whatever follows
    /// `train + valid` becomes the test split.
    pub fn split(&self, train: usize, valid: usize) -> Result<DatasetSplit> {
        if train == 0 || valid == 0 || train + valid > self.len() {
            return Err(Error::Config(format!(
                "cannot split {} samples into {train} train and {valid} validation",
                self.len()
            )));
        }
        let idx: Vec<usize> = (0..self.len()).collect();
        let test = (train + valid < self.len()).then(|| self.subset(&idx[train + valid..]));
        Ok(DatasetSplit {
            train: self.subset(&idx[..train]),
            valid: self.subset(&idx[train..train + valid]),
            test,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    /// Early-stopping split.
    pub valid: Dataset,
    pub test: Option<Dataset>,
}

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const CIFAR_BATCH_RECORDS: usize = 10_000;
pub const CIFAR_VALID: usize = 10_000;

/// Decodes CIFAR-10 binary records (`label byte + 3072 pixel bytes`), scaling pixels by 1/255.
pub fn read_cifar_batch(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format(format!(
            "CIFAR-10 batch must be a whole number of {CIFAR_RECORD}-byte records \
             ({} bytes for a standard batch), found {} bytes",
            CIFAR_RECORD * CIFAR_BATCH_RECORDS,
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(Error::Format(format!("CIFAR-10 label byte {} is not in 0..=9", rec[0])));
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&p| p as f64 / 255.0));
    }
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], pixels)?, labels, 10)
}

fn read_cifar_file(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = CIFAR_RECORD * CIFAR_BATCH_RECORDS;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    read_cifar_batch(&bytes)
}

fn concat(parts: &[Dataset]) -> Result<Dataset> {
    let first = &parts[0];
    let mut shape = first.features.shape().to_vec();
    shape[0] = parts.iter().map(|p| p.len()).sum();
    let data = parts.iter().flat_map(|p| p.features.data().iter().copied()).collect();
    let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
    Dataset::new(Tensor::new(shape, data)?, labels, first.class_count)
}

/// Holds out the last `valid` training samples for validation.
pub fn holdout_tail(train_all: &Dataset, valid: usize, test: Option<Dataset>) -> Result<DatasetSplit> {
    let n = train_all.len();
    if valid == 0 || valid >= n {
        return Err(Error::Config(format!(
            "cannot hold out {valid} of {n} samples for validation"
        )));
    }
    let idx: Vec<usize> = (0..n).collect();
    Ok(DatasetSplit {
        train: train_all.subset(&idx[..n - valid]),
        valid: train_all.subset(&idx[n - valid..]),
        test,
    })
}

/// Loads `data_batch_1.bin`..`data_batch_5.bin` and `test_batch.bin`.
/// The first 40,000 training images train, the last 10,000 validate.
pub fn load_cifar10(dir: &Path) -> Result<DatasetSplit> {
    let batches = (1..=5)
        .map(|i| read_cifar_file(&dir.join(format!("data_batch_{i}.bin"))))
        .collect::<Result<Vec<_>>>()?;
    let test = read_cifar_file(&dir.join("test_batch.bin"))?;
    holdout_tail(&concat(&batches)?, CIFAR_VALID, Some(test))
}

fn parse_cell(cell: &str, line: u64, col: usize) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}, column {}: {cell:?} is not a number", col + 1)))?;
    if !v.is_finite() {
        return Err(Error::Format(format!(
            "line {line}, column {}: value is not finite",
            col + 1
        )));
    }
    Ok(v)
}

fn parse_label(cell: &str, line: u64) -> Result<usize> {
    cell.trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: label {cell:?} is not a non-negative integer")))
}

/// Numeric rows with a 1-based line number. A first row with any non-numeric cell is a header.
fn read_rows(path: &Path) -> Result<Vec<(u64, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Format(format!("{}: line {line}: {e}", path.display()))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_string).collect::<Vec<_>>()));
    }
    if let Some((_, first)) = rows.first() {
        if first.iter().any(|c| c.trim().parse::<f64>().is_err()) {
            rows.remove(0);
        }
    }
    if rows.is_empty() {
        return Err(Error::Format(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

/// Reads comma-separated numeric features, one sample per row.
///
/// Without `labels_path` the last column holds the integer class label; with it,
/// the labels file holds one label per row. Either file may start with a single
/// header row. The class count is one more than the largest label.
pub fn load_csv(features_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let rows = read_rows(features_path)?;
    let mut data = Vec::new();
    let mut labels = Vec::with_capacity(rows.len());
    let mut width = None;
    for (line, row) in &rows {
        let feat = if labels_path.is_none() {
            if row.len() < 2 {
                return Err(Error::Format(format!(
                    "line {line}: need at least one feature column and a label column"
                )));
            }
            labels.push(parse_label(&row[row.len() - 1], *line)?);
            &row[..row.len() - 1]
        } else {
            &row[..]
        };
        if *width.get_or_insert(feat.len()) != feat.len() {
            return Err(Error::Format(format!("line {line}: ragged row")));
        }
        for (c, cell) in feat.iter().enumerate() {
            data.push(parse_cell(cell, *line, c)?);
        }
    }
    if let Some(lp) = labels_path {
        let lrows = read_rows(lp)?;
        if lrows.len() != rows.len() {
            return Err(Error::Format(format!(
                "{} has {} labels for {} feature rows",
                lp.display(),
                lrows.len(),
                rows.len()
            )));
        }
        for (line, row) in &lrows {
            if row.len() != 1 {
                return Err(Error::Format(format!("line {line}: expected a single label column")));
            }
            labels.push(parse_label(&row[0], *line)?);
        }
    }
    let n = labels.len();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(Tensor::new(vec![n, width.unwrap_or(0)], data)?, labels, classes)
}

/// Writes features plus a trailing label column, every value with 17 significant digits.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut s = String::new();
    for i in 0..ds.len() {
        for v in ds.features.row(i) {
            let _ = write!(s, "{v:.16e},");
        }
        let _ = writeln!(s, "{}", ds.labels[i]);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticKind {
    /// Gaussian clusters around class centers drawn uniformly from `[-1, 1]^dim`.
    Blobs { dim: usize, spread: f64 },
    /// Interleaved 2-D spiral arms, one per class.
    Spirals { noise: f64 },
    /// Gaussian inputs labeled by the argmax of a frozen random ReLU network.
    TeacherNet { dim: usize, hidden: usize, depth: usize },
}

/// Unknown keys fall through the flatten to `SyntheticKind`, which rejects them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub n: usize,
    pub classes: usize,
    pub seed: u64,
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.n < spec.classes {
        return Err(Error::Config(format!(
            "synthetic data needs n ≥ classes ≥ 1, got n={} classes={}",
            spec.n, spec.classes
        )));
    }
    let mut rng = Rng::new(spec.seed);
    let (n, k) = (spec.n, spec.classes);
    match &spec.kind {
        SyntheticKind::Blobs { dim, spread } => {
            let centers: Vec<f64> = (0..k * dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let mut data = Vec::with_capacity(n * dim);
            let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
            for &c in &labels {
                for d in 0..*dim {
                    data.push(centers[c * dim + d] + spread * rng.normal());
                }
            }
            Dataset::new(Tensor::new(vec![n, *dim], data)?, labels, k)
        }
        SyntheticKind::Spirals { noise } => {
            let mut data = Vec::with_capacity(n * 2);
            let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
            for (i, &c) in labels.iter().enumerate() {
                let t = (i / k) as f64 / (n.div_ceil(k)) as f64;
                let r = 0.1 + 0.9 * t;
                let angle = 4.0 * t + 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                data.push(r * angle.cos() + noise * rng.normal());
                data.push(r * angle.sin() + noise * rng.normal());
            }
            Dataset::new(Tensor::new(vec![n, 2], data)?, labels, k)
        }
        SyntheticKind::TeacherNet { .. } => Ok(make_teacher_task(spec)?.0),
    }
}

/// Teacher-labeled task plus the teacher that labels it.
///
/// The teacher's output biases are shifted so the classes come out roughly
/// balanced on the drawn inputs; the labels are exactly the teacher's argmax.
pub fn make_teacher_task(spec: &SyntheticSpec) -> Result<(Dataset, Network)> {
    let SyntheticKind::TeacherNet { dim, hidden, depth } = spec.kind else {
        return Err(Error::Config("make_teacher_task needs a teacher_net spec".into()));
    };
    let (n, k) = (spec.n, spec.classes);
    let rng = Rng::new(spec.seed);
    let mut teacher = Network::new(ffdnn_spec(dim, hidden, depth, k, 0.0)?, &mut rng.fork(1))?;
    let mut input_rng = rng.fork(2);
    let x = Tensor::new(vec![n, dim], (0..n * dim).map(|_| input_rng.normal()).collect())?;

    let target = n as f64 / k as f64;
    for _ in 0..20 {
        let p = teacher.predict(&x)?;
        let mut counts = vec![0usize; k];
        for c in argmax_rows(&p) {
            counts[c] += 1;
        }
        let out = teacher.groups_mut().last_mut().expect("output group");
        for (b, &c) in out.bias.data_mut().iter_mut().zip(&counts) {
            *b -= 0.5 * ((c as f64 + 1.0) / (target + 1.0)).ln();
        }
    }
    let labels = argmax_rows(&teacher.predict(&x)?);
    Ok((Dataset::new(x, labels, k)?, teacher))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// One epoch of mini-batches; the final batch may be short.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(Batch {
            features: self.ds.features.select_rows(&indices),
            labels: indices.iter().map(|&i| self.ds.labels[i]).collect(),
            indices,
        })
    }
}

pub fn batches<'a>(ds: &'a Dataset, batch_size: usize, shuffle: bool, rng: &mut Rng) -> Batches<'a> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    Batches {
        ds,
        order,
        batch_size,
        pos: 0,
    }
}
