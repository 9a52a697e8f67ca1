//! Dataset loading, feature normalization, synthetic data generation, and
//! model persistence.
//!
//! CSV conventions: rows are instances, columns are features, with an
//! optional binary label column (`0` = normal, `1` = anomaly) selected by
//! name or position. All numeric parsing failures report the 1-based line
//! number of the offending row.
//!
//! Model files are a self-describing binary format (magic, version, network
//! shape, scoring state, training configuration as JSON) protected by a
//! trailing SHA-256 checksum and written atomically via temp-file rename.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{Layer, MetricNet};
use crate::scoring::{Scorer, ScoringMode};
use crate::trainer::TrainConfig;

/// A loaded dataset: a feature matrix plus optional binary labels and
/// optional feature names (from a CSV header).
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Feature matrix, one row per instance.
    pub x: Matrix,
    /// Optional labels, aligned with rows of `x`: 0 = normal, 1 = anomaly.
    pub labels: Option<Vec<u8>>,
    /// Optional feature column names, aligned with columns of `x`.
    pub feature_names: Option<Vec<String>>,
    /// Where the data came from, when loaded from a file.
    pub source: Option<PathBuf>,
}

impl Dataset {
    /// Builds a dataset after validating label/row alignment.
    pub fn new(
        x: Matrix,
        labels: Option<Vec<u8>>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if let Some(ref l) = labels {
            if l.len() != x.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} rows",
                    l.len(),
                    x.rows()
                )));
            }
            if let Some(bad) = l.iter().find(|&&v| v > 1) {
                return Err(Error::InvalidConfig(format!(
                    "labels must be 0 or 1, found {bad}"
                )));
            }
        }
        if let Some(ref names) = feature_names {
            if names.len() != x.cols() {
                return Err(Error::ShapeMismatch(format!(
                    "{} feature names for {} columns",
                    names.len(),
                    x.cols()
                )));
            }
        }
        Ok(Dataset {
            x,
            labels,
            feature_names,
            source: None,
        })
    }

    /// Number of instances (rows).
    pub fn n_instances(&self) -> usize {
        self.x.rows()
    }

    /// Number of features (columns).
    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    /// Number of rows labeled anomalous, if labels are present.
    pub fn anomaly_count(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().filter(|&&v| v == 1).count())
    }
}

/// How to pick the label column out of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    /// Match a header cell exactly (requires a header row).
    Name(String),
    /// Zero-based column position, counted over all columns.
    Index(usize),
}

fn csv_error(err: csv::Error) -> Error {
    let line = err
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or_default();
    match err.kind() {
        csv::ErrorKind::Io(_) => {
            // Propagate IO problems as IO, not parse noise.
            match err.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                _ => unreachable!("kind checked above"),
            }
        }
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            msg: format!("row has {len} fields, expected {expected_len}"),
        },
        _ => Error::Parse {
            line,
            msg: err.to_string(),
        },
    }
}

/// Loads a CSV file into a [`Dataset`].
///
/// * `has_header` — treat the first row as column names.
/// * `label` — which column holds the 0/1 label, if any. Selecting a column
///   by name requires `has_header`.
///
/// Every field except the label column must parse as a finite `f64`; the
/// label column must parse as exactly `0` or `1` (integer or float
/// spelling). Errors cite the 1-based line number in the file.
pub fn load_csv(
    path: impl AsRef<Path>,
    label: Option<&LabelColumn>,
    has_header: bool,
) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_path(path)
        .map_err(csv_error)?;

    let headers: Option<Vec<String>> = if has_header {
        Some(
            rdr.headers()
                .map_err(csv_error)?
                .iter()
                .map(str::to_string)
                .collect(),
        )
    } else {
        None
    };

    // Resolve the label column to a position once the width is known.
    let mut label_pos: Option<usize> = None;
    let mut width: Option<usize> = headers.as_ref().map(|h| h.len());
    let resolve_label = |width: usize, headers: Option<&Vec<String>>| -> Result<Option<usize>> {
        match label {
            None => Ok(None),
            Some(LabelColumn::Index(i)) => {
                if *i >= width {
                    return Err(Error::InvalidConfig(format!(
                        "label column index {i} out of range for {width} columns"
                    )));
                }
                Ok(Some(*i))
            }
            Some(LabelColumn::Name(name)) => {
                let Some(headers) = headers else {
                    return Err(Error::InvalidConfig(
                        "label column by name requires a header row".into(),
                    ));
                };
                match headers.iter().position(|h| h == name) {
                    Some(i) => Ok(Some(i)),
                    None => Err(Error::InvalidConfig(format!(
                        "label column {name:?} not found in header"
                    ))),
                }
            }
        }
    };
    if let Some(w) = width {
        label_pos = resolve_label(w, headers.as_ref())?;
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let header_offset = usize::from(has_header);

    for (ri, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = rec
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(ri + 1 + header_offset);
        if width.is_none() {
            width = Some(rec.len());
            label_pos = resolve_label(rec.len(), headers.as_ref())?;
        }
        let mut features = Vec::with_capacity(rec.len().saturating_sub(usize::from(label_pos.is_some())));
        for (ci, field) in rec.iter().enumerate() {
            if Some(ci) == label_pos {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("label {field:?} is not a number"),
                })?;
                if v == 0.0 {
                    labels.push(0);
                } else if v == 1.0 {
                    labels.push(1);
                } else {
                    return Err(Error::Parse {
                        line,
                        msg: format!("label must be 0 or 1, got {field:?}"),
                    });
                }
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("column {ci}: {field:?} is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        msg: format!("column {ci}: {field:?} is not finite"),
                    });
                }
                features.push(v);
            }
        }
        rows.push(features);
    }

    if rows.is_empty() {
        return Err(Error::EmptyBatch(format!(
            "{} contains no data rows",
            path.display()
        )));
    }
    if rows[0].is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} has no feature columns",
            path.display()
        )));
    }

    let feature_names = match (&headers, label_pos) {
        (Some(h), Some(lp)) => Some(
            h.iter()
                .enumerate()
                .filter(|(i, _)| *i != lp)
                .map(|(_, n)| n.clone())
                .collect(),
        ),
        (Some(h), None) => Some(h.clone()),
        (None, _) => None,
    };

    let mut ds = Dataset::new(
        Matrix::from_rows(&rows)?,
        label_pos.map(|_| labels),
        feature_names,
    )?;
    ds.source = Some(path.to_path_buf());
    Ok(ds)
}

/// Writes a dataset to CSV with a header row. Feature values use shortest
/// round-trip formatting, so saving and reloading reproduces every `f64`
/// bit-for-bit. The label column, when present, is written as `label`.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    let names: Vec<String> = match &dataset.feature_names {
        Some(n) => n.clone(),
        None => (0..dataset.n_features()).map(|i| format!("f{i}")).collect(),
    };
    out.push_str(&names.join(","));
    if dataset.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in dataset.x.iter_rows().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        if let Some(ref l) = dataset.labels {
            let _ = write!(out, ",{}", l[i]);
        }
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

/// Per-column affine normalization fitted on one data partition and applied
/// to others: `(x - mean) / divisor`, where `divisor` is the population
/// standard deviation, or 1 for columns whose deviation is zero (or
/// indistinguishable from the rounding noise of a constant column).
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    mean: Vec<f64>,
    divisor: Vec<f64>,
}

impl Normalizer {
    /// Fitted per-column means.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Fitted per-column divisors (standard deviation, or 1 where zero).
    pub fn divisor(&self) -> &[f64] {
        &self.divisor
    }

    /// Applies the fitted transform to a matrix with matching width.
    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        if m.cols() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "normalizer fitted on {} columns, input has {}",
                self.mean.len(),
                m.cols()
            )));
        }
        let mut out = m.clone();
        for row in out.as_mut_slice().chunks_exact_mut(self.mean.len().max(1)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.divisor[j];
            }
        }
        Ok(out)
    }
}

/// Fits a [`Normalizer`] on the rows of `m` (typically a training
/// partition, so that held-out data never influences the statistics).
pub fn fit_normalizer(m: &Matrix) -> Result<Normalizer> {
    if m.rows() == 0 {
        return Err(Error::EmptyBatch(
            "cannot fit a normalizer on an empty matrix".into(),
        ));
    }
    let mean = m.col_mean()?;
    let n = m.rows() as f64;
    let mut divisor = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        for (j, v) in row.iter().enumerate() {
            let d = v - mean[j];
            divisor[j] += d * d;
        }
    }
    for (j, acc) in divisor.iter_mut().enumerate() {
        let sd = (*acc / n).sqrt();
        // A constant column can pick up deviations of a few ulps from the
        // mean's rounding; dividing by that would turn noise into O(1)
        // values, so such columns pass through centered but unscaled.
        let noise_floor = 1e-12 * mean[j].abs().max(1.0);
        *acc = if sd <= noise_floor { 1.0 } else { sd };
    }
    Ok(Normalizer { mean, divisor })
}

/// Generates the two-Gaussian synthetic benchmark: `n_normal` rows from a
/// standard normal and `n_anomaly` rows from a unit-variance Gaussian whose
/// mean sits `separation` away along a random unit direction. Rows are
/// normals first, then anomalies; labels are attached accordingly. Fully
/// determined by `seed`.
pub fn synth_two_gaussians(
    n_normal: usize,
    n_anomaly: usize,
    dims: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_normal == 0 {
        return Err(Error::EmptyBatch("need at least one normal instance".into()));
    }
    if dims == 0 {
        return Err(Error::InvalidConfig("dims must be positive".into()));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "separation must be finite and nonnegative, got {separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Direction of the anomaly cluster: a normalized Gaussian draw.
    let mut direction: Vec<f64> = (0..dims).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in &mut direction {
            *v /= norm;
        }
    } else {
        direction.iter_mut().for_each(|v| *v = 0.0);
        direction[0] = 1.0;
    }

    let total = n_normal + n_anomaly;
    let mut x = Matrix::zeros(total, dims);
    for i in 0..n_normal {
        let row = x.row_mut(i);
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
    for i in 0..n_anomaly {
        let row = x.row_mut(n_normal + i);
        for (j, v) in row.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *v = separation * direction[j] + z;
        }
    }

    let mut labels = vec![0u8; total];
    labels[n_normal..].iter_mut().for_each(|l| *l = 1);
    Dataset::new(x, Some(labels), None)
}

/// Writes `bytes` to `path` atomically: the content goes to a temporary
/// file in the same directory, which is then renamed over the target, so a
/// crash mid-write never leaves a partial file at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let stem = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{}.{}.tmp", stem, std::process::id()));
    std::fs::write(&tmp, bytes)?;
    match std::fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e.into())
        }
    }
}

/// Current model file format version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

const MODEL_MAGIC: &[u8; 8] = b"METRICAD";

/// A trained model ready for persistence: the scorer (network, center,
/// optional retrieval latents, scoring mode), the configuration that
/// produced it, and the name of the random generator used throughout.
#[derive(Debug, Clone)]
pub struct ModelArtifact {
    /// The scoring state: network, center, mode, optional retrieval set.
    pub scorer: Scorer,
    /// Training configuration, embedded for reproducibility.
    pub config: TrainConfig,
    /// Random generator identifier (see [`crate::seeds::GENERATOR_NAME`]).
    pub prng: String,
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes and writes a model artifact. The layout is: magic, format
/// version, layer width chain, scoring mode, generator name, configuration
/// JSON, layer weights and biases, center vector, optional retrieval
/// latents, and a SHA-256 checksum of everything before it. All integers
/// and floats are little-endian; the write is atomic.
pub fn save_model(artifact: &ModelArtifact, path: impl AsRef<Path>) -> Result<()> {
    let net = artifact.scorer.net();
    let dims = net.dims();
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    push_u32(&mut buf, MODEL_FORMAT_VERSION);

    push_u32(
        &mut buf,
        u32::try_from(dims.len())
            .map_err(|_| Error::ModelFormat("dimension chain too long".into()))?,
    );
    for &d in dims {
        push_u32(
            &mut buf,
            u32::try_from(d).map_err(|_| Error::ModelFormat(format!("dimension {d} too large")))?,
        );
    }

    buf.push(match artifact.scorer.mode() {
        ScoringMode::Center => 0u8,
        ScoringMode::Dissimilarity => 1u8,
    });

    let prng = artifact.prng.as_bytes();
    push_u32(
        &mut buf,
        u32::try_from(prng.len())
            .map_err(|_| Error::ModelFormat("generator name too long".into()))?,
    );
    buf.extend_from_slice(prng);

    let config = serde_json::to_vec(&artifact.config)
        .map_err(|e| Error::ModelFormat(format!("cannot encode configuration: {e}")))?;
    push_u32(
        &mut buf,
        u32::try_from(config.len())
            .map_err(|_| Error::ModelFormat("configuration too large".into()))?,
    );
    buf.extend_from_slice(&config);

    for layer in net.layers() {
        push_f64s(&mut buf, layer.weights().as_slice());
        push_f64s(&mut buf, layer.bias());
    }
    push_f64s(&mut buf, artifact.scorer.center());

    match artifact.scorer.retrieval() {
        Some(r) => {
            push_u64(&mut buf, r.rows() as u64);
            push_f64s(&mut buf, r.as_slice());
        }
        None => push_u64(&mut buf, 0),
    }

    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    write_atomic(path.as_ref(), &buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::ModelFormat("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn read_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn read_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn read_f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Reads a model artifact written by [`save_model`], verifying the
/// checksum before interpreting any content and the format version after.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.len() < MODEL_MAGIC.len() + 4 + 32 {
        return Err(Error::ModelFormat("file too short to be a model".into()));
    }
    if &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad magic; not a model file".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(Error::ModelFormat(
            "checksum mismatch; file is corrupted or truncated".into(),
        ));
    }

    let mut cur = Cursor {
        bytes: body,
        pos: MODEL_MAGIC.len(),
    };
    let version = cur.read_u32()?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "file is format version {version}; this build reads version {MODEL_FORMAT_VERSION}"
        )));
    }

    let n_dims = cur.read_u32()? as usize;
    if n_dims < 2 {
        return Err(Error::ModelFormat(format!(
            "dimension chain needs at least input and output, got {n_dims} entries"
        )));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(cur.read_u32()? as usize);
    }

    let mode = match cur.read_u8()? {
        0 => ScoringMode::Center,
        1 => ScoringMode::Dissimilarity,
        m => return Err(Error::ModelFormat(format!("unknown scoring mode {m}"))),
    };

    let prng_len = cur.read_u32()? as usize;
    let prng = String::from_utf8(cur.take(prng_len)?.to_vec())
        .map_err(|_| Error::ModelFormat("generator name is not UTF-8".into()))?;

    let config_len = cur.read_u32()? as usize;
    let config: TrainConfig = serde_json::from_slice(cur.take(config_len)?)
        .map_err(|e| Error::ModelFormat(format!("cannot decode configuration: {e}")))?;

    let mut layers = Vec::with_capacity(n_dims - 1);
    for w in 1..n_dims {
        let (rows, cols) = (dims[w], dims[w - 1]);
        let weights = Matrix::from_vec(cur.read_f64s(rows * cols)?, rows, cols);
        let bias = cur.read_f64s(rows)?;
        layers.push(Layer::new(weights, bias)?);
    }
    let net = MetricNet::from_layers(layers)?;

    let width = *dims.last().expect("checked n_dims >= 2");
    let mu = cur.read_f64s(width)?;

    let r_rows = cur.read_u64()? as usize;
    let retrieval = if r_rows > 0 {
        Some(Matrix::from_vec(cur.read_f64s(r_rows * width)?, r_rows, width))
    } else {
        None
    };

    if !cur.at_end() {
        return Err(Error::ModelFormat("trailing bytes after model content".into()));
    }

    let scorer = Scorer::from_parts(net, mu, retrieval, mode)?;
    Ok(ModelArtifact {
        scorer,
        config,
        prng,
    })
}
