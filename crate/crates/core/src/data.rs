//! Datasets, worker partitions, a CSV loader and gradient diagnostics.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;
use thiserror::Error;

use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;
use crate::sketch::DenseVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("malformed csv at line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("non-numeric cell {value:?} at ({row},{col})")]
    NonNumeric { row: u64, col: usize, value: String },
    #[error("label column {0} not present in header")]
    BadLabelColumn(String),
}

/// Row-major feature matrix with one label per row.
///
/// Labels are real targets for regression and class indices (stored as
/// scalars) for classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    dim: usize,
    features: Vec<T>,
    labels: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(dim: usize, features: Vec<T>, labels: Vec<T>) -> Result<Self, DataError> {
        if dim == 0 {
            return Err(DataError::InvalidArgument(
                "feature dimension must be positive".into(),
            ));
        }
        if features.len() != dim * labels.len() {
            return Err(DataError::InvalidArgument(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if features.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(DataError::InvalidArgument(
                "non-finite feature or label".into(),
            ));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> T {
        self.labels[i]
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn push(&mut self, x: &[T], y: T) {
        assert_eq!(x.len(), self.dim);
        self.features.extend_from_slice(x);
        self.labels.push(y);
    }

    /// Rows `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut out = Self::empty(self.dim);
        out.features.reserve(rows.len() * self.dim);
        for &r in rows {
            out.push(self.row(r), self.labels[r]);
        }
        out
    }

    /// All rows of `parts`, concatenated in order.
    pub fn concat(parts: &[Self]) -> Self {
        let dim = parts.first().map_or(1, |p| p.dim);
        let mut out = Self::empty(dim);
        for p in parts {
            assert_eq!(p.dim, dim);
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionKind {
    Iid,
    LabelSkew,
    Dirichlet,
}

/// Per-worker datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    pub workers: Vec<Dataset<T>>,
    pub kind: PartitionKind,
    pub seed: u64,
}

impl<T: Scalar> Partition<T> {
    pub fn pooled(&self) -> Dataset<T> {
        Dataset::concat(&self.workers)
    }

    pub fn dim(&self) -> usize {
        self.workers[0].dim()
    }

    pub fn total_samples(&self) -> usize {
        self.workers.iter().map(Dataset::len).sum()
    }

    /// Splits rows of `data` into `workers` contiguous, near-equal shards.
    pub fn contiguous(data: &Dataset<T>, workers: usize, seed: u64) -> Result<Self, DataError> {
        if workers == 0 || workers > data.len() {
            return Err(DataError::InvalidArgument(format!(
                "cannot split {} rows across {workers} workers",
                data.len()
            )));
        }
        let base = data.len() / workers;
        let extra = data.len() % workers;
        let mut start = 0;
        let shards = (0..workers)
            .map(|w| {
                let len = base + usize::from(w < extra);
                let rows: Vec<usize> = (start..start + len).collect();
                start += len;
                data.subset(&rows)
            })
            .collect();
        Ok(Self {
            workers: shards,
            kind: PartitionKind::Iid,
            seed,
        })
    }
}

fn normal_vec<T: Scalar, R: Rng>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n).map(|_| T::sample_standard_normal(rng)).collect()
}

/// IID linear-regression data: `x ~ N(0, I)`, `y = <w*, x> + N(0, noise_sd^2)`,
/// with `w* ~ N(0, I / feature_dim)`. Returns the partition and `w*`.
pub fn synth_regression<T: Scalar>(
    workers: usize,
    samples_per_worker: usize,
    feature_dim: usize,
    noise_sd: T,
    seed: u64,
) -> Result<(Partition<T>, DenseVector<T>), DataError> {
    if workers == 0 || samples_per_worker == 0 || feature_dim == 0 {
        return Err(DataError::InvalidArgument("sizes must be positive".into()));
    }
    if !(noise_sd >= T::zero()) {
        return Err(DataError::InvalidArgument(
            "noise_sd must be nonnegative".into(),
        ));
    }
    let mut rng = stream(seed, Purpose::Data, u64::MAX, 0);
    let scale = T::one() / T::of(feature_dim as f64).sqrt();
    let w_star: Vec<T> = normal_vec::<T, _>(&mut rng, feature_dim)
        .into_iter()
        .map(|v| v * scale)
        .collect();
    let shards = (0..workers)
        .map(|w| {
            let mut rng = stream(seed, Purpose::Data, w as u64, 0);
            let mut ds = Dataset::empty(feature_dim);
            for _ in 0..samples_per_worker {
                let x: Vec<T> = normal_vec(&mut rng, feature_dim);
                let clean: T = x.iter().zip(&w_star).map(|(&a, &b)| a * b).sum();
                let y = clean + noise_sd * T::sample_standard_normal(&mut rng);
                ds.push(&x, y);
            }
            ds
        })
        .collect();
    Ok((
        Partition {
            workers: shards,
            kind: PartitionKind::Iid,
            seed,
        },
        DenseVector::from_vec(w_star),
    ))
}

/// How labels are spread across workers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Skew {
    /// Worker `w` sees classes `w*c, w*c+1, ..., w*c+c-1` (mod classes).
    /// `c == classes` is IID.
    ClassesPerWorker(usize),
    /// Per-worker class proportions drawn from a symmetric Dirichlet.
    Dirichlet(f64),
}

/// Gaussian-mixture classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationSpec {
    pub workers: usize,
    pub samples_per_worker: usize,
    pub feature_dim: usize,
    pub classes: usize,
    pub skew: Skew,
    /// Expected distance between two class means, in units of the noise sd.
    pub separation: f64,
    pub test_samples: usize,
    pub seed: u64,
}

/// Separation at which a centralized linear classifier clears 90% test
/// accuracy on the 784-feature, 10-class shape.
pub const DEFAULT_SEPARATION: f64 = 6.0;

impl ClassificationSpec {
    pub fn new(
        workers: usize,
        samples_per_worker: usize,
        feature_dim: usize,
        classes: usize,
        seed: u64,
    ) -> Self {
        Self {
            workers,
            samples_per_worker,
            feature_dim,
            classes,
            skew: Skew::ClassesPerWorker(classes),
            separation: DEFAULT_SEPARATION,
            test_samples: 1000,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClassification<T> {
    pub partition: Partition<T>,
    /// Balanced held-out set from the same mixture.
    pub test: Dataset<T>,
    pub means: Vec<Vec<T>>,
}

pub fn synth_classification<T: Scalar>(
    cfg: &ClassificationSpec,
) -> Result<SynthClassification<T>, DataError> {
    let ClassificationSpec {
        workers,
        samples_per_worker,
        feature_dim: dim,
        classes,
        skew,
        separation,
        test_samples,
        seed,
    } = *cfg;
    if classes < 2 {
        return Err(DataError::InvalidArgument(
            "need at least two classes".into(),
        ));
    }
    if workers == 0 || samples_per_worker == 0 || dim == 0 {
        return Err(DataError::InvalidArgument("sizes must be positive".into()));
    }
    if !(separation >= 0.0) {
        return Err(DataError::InvalidArgument(
            "separation must be nonnegative".into(),
        ));
    }
    let kind = match skew {
        Skew::ClassesPerWorker(c) if c == 0 || c > classes => {
            return Err(DataError::InvalidArgument(format!(
                "{c} classes per worker is infeasible with {classes} classes"
            )))
        }
        Skew::ClassesPerWorker(c) if c == classes => PartitionKind::Iid,
        Skew::ClassesPerWorker(_) => PartitionKind::LabelSkew,
        Skew::Dirichlet(a) if !(a > 0.0 && a.is_finite()) => {
            return Err(DataError::InvalidArgument(format!(
                "dirichlet concentration must be positive, got {a}"
            )))
        }
        Skew::Dirichlet(_) => PartitionKind::Dirichlet,
    };

    let mut rng = stream(seed, Purpose::Data, u64::MAX, 0);
    // Each mean is N(0, s^2 I) with s = sep / sqrt(2 dim), so means are
    // `separation` apart on average.
    let mean_scale = separation / (2.0 * dim as f64).sqrt();
    let means: Vec<Vec<T>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| T::of(mean_scale * f64::sample_standard_normal(&mut rng)))
                .collect()
        })
        .collect();

    let draw = |rng: &mut crate::rng::StreamRng, class: usize, ds: &mut Dataset<T>| {
        let x: Vec<T> = means[class]
            .iter()
            .map(|&m| m + T::sample_standard_normal(rng))
            .collect();
        ds.push(&x, T::of(class as f64));
    };

    let mut shards = Vec::with_capacity(workers);
    for w in 0..workers {
        let mut rng = stream(seed, Purpose::Data, w as u64, 0);
        let mut ds = Dataset::empty(dim);
        match skew {
            Skew::ClassesPerWorker(c) => {
                let allowed: Vec<usize> = (0..c).map(|j| (w * c + j) % classes).collect();
                for _ in 0..samples_per_worker {
                    let class = allowed[rng.random_range(0..allowed.len())];
                    draw(&mut rng, class, &mut ds);
                }
            }
            Skew::Dirichlet(a) => {
                let gamma = Gamma::new(a, 1.0).expect("validated concentration");
                let raw: Vec<f64> = (0..classes).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = raw.iter().sum();
                let props: Vec<f64> = if total > 0.0 {
                    raw.iter().map(|v| v / total).collect()
                } else {
                    vec![1.0 / classes as f64; classes]
                };
                for _ in 0..samples_per_worker {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut class = classes - 1;
                    for (c, p) in props.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            class = c;
                            break;
                        }
                    }
                    draw(&mut rng, class, &mut ds);
                }
            }
        }
        shards.push(ds);
    }

    let mut rng = stream(seed, Purpose::Data, u64::MAX - 1, 0);
    let mut test = Dataset::empty(dim);
    for i in 0..test_samples {
        draw(&mut rng, i % classes, &mut test);
    }

    Ok(SynthClassification {
        partition: Partition {
            workers: shards,
            kind,
            seed,
        },
        test,
        means,
    })
}

/// Selects the label column of a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelColumn {
    Name(String),
    /// Zero-based.
    Index(usize),
}

/// Reads a numeric CSV with a header row. Every non-label column becomes a
/// feature, in file order. Error positions are `(line, column)`, both
/// one-based, with the header on line 1.
pub fn load_csv<T: Scalar>(path: &Path, label: &LabelColumn) -> Result<Dataset<T>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let header = reader
        .headers()
        .map_err(|e| DataError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let label_idx = match label {
        LabelColumn::Name(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::BadLabelColumn(format!("{name:?}")))?,
        LabelColumn::Index(i) if *i < header.len() => *i,
        LabelColumn::Index(i) => return Err(DataError::BadLabelColumn(format!("index {i}"))),
    };
    let width = header.len();
    if width < 2 {
        return Err(DataError::Malformed {
            line: 1,
            message: "need at least one feature column and a label column".into(),
        });
    }

    let mut ds = Dataset::empty(width - 1);
    let mut row = Vec::with_capacity(width - 1);
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        row.clear();
        let mut y = T::zero();
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DataError::NonNumeric {
                    row: line,
                    col: col + 1,
                    value: cell.to_string(),
                })?;
            if col == label_idx {
                y = T::of(v);
            } else {
                row.push(T::of(v));
            }
        }
        ds.push(&row, y);
    }
    Ok(ds)
}

/// Writes `data` with header `x1..xd,label`, values in shortest
/// round-trip decimal form.
pub fn write_csv<T: Scalar>(path: &Path, data: &Dataset<T>) -> Result<(), DataError> {
    let io = |e: csv::Error| DataError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(io)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.label(i).to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Equal-width histogram of a vector with its first four moments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// `m4 / m2^2 - 3` from central moments; `None` for a constant vector.
    pub excess_kurtosis: Option<f64>,
}

pub fn gradient_histogram<T: Scalar>(g: &[T], bins: usize) -> Result<Histogram, DataError> {
    if g.is_empty() {
        return Err(DataError::InvalidArgument("empty vector".into()));
    }
    if bins == 0 {
        return Err(DataError::InvalidArgument("need at least one bin".into()));
    }
    let vals: Vec<f64> = g.iter().map(|v| v.as_f64()).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut counts = vec![0u64; bins];
    let width = hi - lo;
    for &v in &vals {
        let b = if width > 0.0 {
            (((v - lo) / width) * bins as f64).floor() as usize
        } else {
            0
        };
        counts[b.min(bins - 1)] += 1;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let m2 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = vals.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let variance = if vals.len() > 1 {
        m2 * n / (n - 1.0)
    } else {
        0.0
    };
    let excess_kurtosis = (m2 > 0.0).then(|| m4 / (m2 * m2) - 3.0);
    Ok(Histogram {
        lo,
        hi,
        counts,
        n: vals.len(),
        mean,
        variance,
        excess_kurtosis,
    })
}
