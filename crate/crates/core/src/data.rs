//! Labeled samples, synthetic generators, batch streams and CSV ingestion.
//!
//! A two-sample problem `X⁰ ~ P₀`, `X¹ ~ P₁` is turned into an independence
//! problem by tagging every point with its sample of origin `y ∈ {0, 1}` and
//! pooling. Streams hand out fixed-size batches of such labeled points; batch
//! `m` of a generator stream is a pure function of `(source, seed, m)`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

/// A feature vector tagged with the sample it was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: u8,
}

impl LabeledSample {
    pub fn new(x: Vec<f64>, y: u8) -> Result<Self> {
        if y > 1 {
            return Err(Error::usage(format!("label must be 0 or 1, got {y}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("features must be finite"));
        }
        Ok(LabeledSample { x, y })
    }
}

pub fn labels(samples: &[LabeledSample]) -> Vec<u8> {
    samples.iter().map(|s| s.y).collect()
}

/// Nine isotropic Gaussian modes on the grid `{0, s, 2s}²`; the two classes
/// share the modes and differ only in their standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobConfig {
    #[serde(default = "BlobConfig::default_spacing")]
    pub spacing: f64,
    #[serde(default = "BlobConfig::default_sigma0")]
    pub sigma0: f64,
    #[serde(default = "BlobConfig::default_sigma1")]
    pub sigma1: f64,
}

impl BlobConfig {
    fn default_spacing() -> f64 {
        5.0
    }
    fn default_sigma0() -> f64 {
        1.0
    }
    fn default_sigma1() -> f64 {
        2.0
    }

    /// Null configuration: both classes use `sigma`.
    pub fn null(sigma: f64) -> Self {
        BlobConfig {
            sigma0: sigma,
            sigma1: sigma,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.sigma0 > 0.0 && self.sigma1 > 0.0) {
            return Err(Error::usage("blob spacing and sigmas must be positive"));
        }
        Ok(())
    }

    pub fn sigma(&self, class: u8) -> f64 {
        if class == 0 {
            self.sigma0
        } else {
            self.sigma1
        }
    }

    pub fn centers(&self) -> [[f64; 2]; 9] {
        let mut out = [[0.0; 2]; 9];
        for (k, c) in out.iter_mut().enumerate() {
            *c = [(k % 3) as f64 * self.spacing, (k / 3) as f64 * self.spacing];
        }
        out
    }

    pub fn is_null(&self) -> bool {
        self.sigma0 == self.sigma1
    }
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            spacing: Self::default_spacing(),
            sigma0: Self::default_sigma0(),
            sigma1: Self::default_sigma1(),
        }
    }
}

fn blob_point<R: Rng>(config: &BlobConfig, class: u8, rng: &mut R) -> Vec<f64> {
    let center = config.centers()[rng.random_range(0..9)];
    let sigma = config.sigma(class);
    center
        .iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            c + sigma * z
        })
        .collect()
}

/// Draws `n` Blob points of the given class. Sigmas of zero are accepted
/// here and put every point on a mode center.
pub fn blob_sample(config: &BlobConfig, n: usize, class: u8, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed);
    (0..n).map(|_| blob_point(config, class, &mut rng)).collect()
}

/// Class `y` is `N(mean_y·1, I)` in `dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianConfig {
    #[serde(default = "GaussianConfig::default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub mean0: f64,
    #[serde(default)]
    pub mean1: f64,
}

impl GaussianConfig {
    fn default_dim() -> usize {
        1
    }

    pub fn is_null(&self) -> bool {
        self.mean0 == self.mean1
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || !self.mean0.is_finite() || !self.mean1.is_finite() {
            return Err(Error::usage("gaussian source needs dim ≥ 1 and finite means"));
        }
        Ok(())
    }
}

impl Default for GaussianConfig {
    fn default() -> Self {
        GaussianConfig {
            dim: 1,
            mean0: 0.0,
            mean1: 0.0,
        }
    }
}

fn gaussian_point<R: Rng>(config: &GaussianConfig, class: u8, rng: &mut R) -> Vec<f64> {
    let mean = if class == 0 { config.mean0 } else { config.mean1 };
    (0..config.dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            mean + z
        })
        .collect()
}

/// Draws `n` i.i.d. scalars from `N(mean, 1)`.
pub fn gaussian_scalars<R: Rng>(mean: f64, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            mean + z
        })
        .collect()
}

/// Joint distribution of a finite `X` (row index) and binary `Y` (column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteToyConfig {
    pub table: Vec<[f64; 2]>,
}

impl DiscreteToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.table.is_empty() {
            return Err(Error::usage("joint table must have at least one row"));
        }
        if self.table.iter().flatten().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::usage("joint table entries must be finite and non-negative"));
        }
        let total: f64 = self.table.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::usage(format!("joint table must sum to 1, sums to {total}")));
        }
        let py = self.p_y();
        if py[0] == 0.0 || py[1] == 0.0 {
            return Err(Error::usage("both labels need positive probability"));
        }
        Ok(())
    }

    pub fn p_y(&self) -> [f64; 2] {
        self.table
            .iter()
            .fold([0.0, 0.0], |acc, row| [acc[0] + row[0], acc[1] + row[1]])
    }

    pub fn p_x(&self) -> Vec<f64> {
        self.table.iter().map(|row| row[0] + row[1]).collect()
    }

    /// Exact `I(X;Y)` in nats.
    pub fn mutual_information(&self) -> f64 {
        let px = self.p_x();
        let py = self.p_y();
        let mut mi = 0.0;
        for (row, &pxi) in self.table.iter().zip(&px) {
            for (y, &pxy) in row.iter().enumerate() {
                if pxy > 0.0 {
                    mi += pxy * (pxy / (pxi * py[y])).ln();
                }
            }
        }
        mi.max(0.0)
    }

    /// `P(Y = 1 | X = x)`, the Bayes-optimal classifier.
    pub fn posterior(&self, x: usize) -> f64 {
        let row = self.table[x];
        let total = row[0] + row[1];
        if total == 0.0 {
            0.5
        } else {
            row[1] / total
        }
    }

    fn draw_joint<R: Rng>(&self, rng: &mut R) -> (usize, u8) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = (0, 0);
        for (x, row) in self.table.iter().enumerate() {
            for (y, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    acc += p;
                    last = (x, y as u8);
                    if u < acc {
                        return last;
                    }
                }
            }
        }
        last
    }

    fn draw_given_y<R: Rng>(&self, y: u8, rng: &mut R) -> usize {
        let py = self.p_y()[y as usize];
        let u: f64 = rng.random::<f64>() * py;
        let mut acc = 0.0;
        let mut last = 0;
        for (x, row) in self.table.iter().enumerate() {
            let p = row[y as usize];
            if p > 0.0 {
                acc += p;
                last = x;
                if u < acc {
                    return x;
                }
            }
        }
        last
    }
}

/// Tags sample 0 with `y = 0` and sample 1 with `y = 1`, then shuffles.
pub fn pool_and_label(sample0: Vec<Vec<f64>>, sample1: Vec<Vec<f64>>, seed: u64) -> Vec<LabeledSample> {
    let mut rng = seed::rng(seed);
    pool_with_rng(sample0, sample1, &mut rng)
}

fn pool_with_rng<R: Rng>(sample0: Vec<Vec<f64>>, sample1: Vec<Vec<f64>>, rng: &mut R) -> Vec<LabeledSample> {
    let mut out: Vec<LabeledSample> = sample0
        .into_iter()
        .map(|x| LabeledSample { x, y: 0 })
        .chain(sample1.into_iter().map(|x| LabeledSample { x, y: 1 }))
        .collect();
    out.shuffle(rng);
    out
}

/// Splits `samples` into consecutive parts proportional to `ratio`
/// (e.g. `[5, 1, 1]`). Rounding leftovers go to the first part.
pub fn split_by_ratio(samples: &[LabeledSample], ratio: &[usize]) -> Vec<Vec<LabeledSample>> {
    let total: usize = ratio.iter().sum();
    let n = samples.len();
    let mut sizes: Vec<usize> = ratio.iter().map(|r| n * r / total.max(1)).collect();
    let assigned: usize = sizes.iter().sum();
    if let Some(first) = sizes.first_mut() {
        *first += n - assigned;
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for size in sizes {
        out.push(samples[start..start + size].to_vec());
        start += size;
    }
    out
}

/// Where a stream's samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Blob(BlobConfig),
    Gaussian(GaussianConfig),
    DiscreteToy(DiscreteToyConfig),
    /// A finite dataset; shuffled once with the stream seed, remainder dropped.
    Dataset { samples: Vec<LabeledSample> },
}

impl Source {
    /// Whether both classes are drawn from the same distribution, when that is
    /// known from the configuration.
    pub fn is_null(&self) -> Option<bool> {
        match self {
            Source::Blob(c) => Some(c.is_null()),
            Source::Gaussian(c) => Some(c.is_null()),
            Source::DiscreteToy(c) => Some(c.mutual_information() < 1e-15),
            Source::Dataset { .. } => None,
        }
    }

    /// Draws one point of class `y` (generator sources only).
    fn draw_class<R: Rng>(&self, y: u8, rng: &mut R) -> Vec<f64> {
        match self {
            Source::Blob(c) => blob_point(c, y, rng),
            Source::Gaussian(c) => gaussian_point(c, y, rng),
            Source::DiscreteToy(c) => vec![c.draw_given_y(y, rng) as f64],
            Source::Dataset { .. } => unreachable!("datasets are pre-batched"),
        }
    }

    fn draw_joint<R: Rng>(&self, rng: &mut R) -> LabeledSample {
        match self {
            Source::DiscreteToy(c) => {
                let (x, y) = c.draw_joint(rng);
                LabeledSample { x: vec![x as f64], y }
            }
            _ => {
                let y = rng.random_range(0..2u8);
                LabeledSample {
                    x: self.draw_class(y, rng),
                    y,
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Source::Blob(c) => c.validate(),
            Source::Gaussian(c) => c.validate(),
            Source::DiscreteToy(c) => c.validate(),
            Source::Dataset { .. } => Ok(()),
        }
    }
}

/// Deterministic source of equally sized labeled batches.
#[derive(Debug, Clone)]
pub struct BatchStream {
    source: Source,
    batch_size: usize,
    balanced: bool,
    seed: u64,
    cursor: usize,
    /// Pre-cut batches for dataset sources.
    prepared: Option<Vec<Vec<LabeledSample>>>,
}

impl BatchStream {
    /// `balanced` draws exactly `batch_size / 2` points per class in every
    /// batch (paired sampling); otherwise labels follow the source's own law
    /// (a fair coin for two-sample generators, the joint table for toys).
    pub fn new(source: Source, batch_size: usize, balanced: bool, seed: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::usage(format!("batch size must be at least 2, got {batch_size}")));
        }
        if balanced && batch_size % 2 != 0 {
            return Err(Error::usage(format!("balanced batches need an even size, got {batch_size}")));
        }
        source.validate()?;
        let prepared = match &source {
            Source::Dataset { samples } => Some(cut_dataset(samples, batch_size, balanced, seed)),
            _ => None,
        };
        Ok(BatchStream {
            source,
            batch_size,
            balanced,
            seed,
            cursor: 0,
            prepared,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn balanced(&self) -> bool {
        self.balanced
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    /// Number of batches already handed out.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Repositions the stream, e.g. when resuming from a checkpoint.
    pub fn seek(&mut self, cursor: usize) {
        self.cursor = cursor;
    }

    pub fn samples_drawn(&self) -> usize {
        self.cursor * self.batch_size
    }

    /// Exact `I(X;Y)` for discrete toy sources.
    pub fn exact_mutual_information(&self) -> Option<f64> {
        match &self.source {
            Source::DiscreteToy(c) => Some(c.mutual_information()),
            _ => None,
        }
    }

    /// Batch number `index` (0-based), independent of the cursor.
    pub fn batch_at(&self, index: usize) -> Option<Vec<LabeledSample>> {
        if let Some(prepared) = &self.prepared {
            return prepared.get(index).cloned();
        }
        let mut rng = seed::child_rng(self.seed, &[index as u64]);
        let batch = if self.balanced {
            let half = self.batch_size / 2;
            let s0 = (0..half).map(|_| self.source.draw_class(0, &mut rng)).collect();
            let s1 = (0..half).map(|_| self.source.draw_class(1, &mut rng)).collect();
            pool_with_rng(s0, s1, &mut rng)
        } else {
            (0..self.batch_size)
                .map(|_| self.source.draw_joint(&mut rng))
                .collect()
        };
        Some(batch)
    }
}

impl Iterator for BatchStream {
    type Item = Vec<LabeledSample>;

    fn next(&mut self) -> Option<Self::Item> {
        let batch = self.batch_at(self.cursor)?;
        self.cursor += 1;
        Some(batch)
    }
}

fn cut_dataset(samples: &[LabeledSample], batch_size: usize, balanced: bool, seed: u64) -> Vec<Vec<LabeledSample>> {
    let mut rng = seed::rng(seed);
    if balanced {
        let half = batch_size / 2;
        let mut by_class: [Vec<LabeledSample>; 2] = [Vec::new(), Vec::new()];
        for s in samples {
            by_class[s.y as usize].push(s.clone());
        }
        by_class[0].shuffle(&mut rng);
        by_class[1].shuffle(&mut rng);
        let batches = by_class[0].len().min(by_class[1].len()) / half;
        (0..batches)
            .map(|b| {
                let mut batch: Vec<LabeledSample> = by_class[0][b * half..(b + 1) * half]
                    .iter()
                    .chain(&by_class[1][b * half..(b + 1) * half])
                    .cloned()
                    .collect();
                batch.shuffle(&mut rng);
                batch
            })
            .collect()
    } else {
        let mut all = samples.to_vec();
        all.shuffle(&mut rng);
        all.chunks_exact(batch_size).map(|c| c.to_vec()).collect()
    }
}

/// Convenience constructor for toy streams; the exact mutual information is
/// available from [`BatchStream::exact_mutual_information`].
pub fn discrete_toy_stream(config: DiscreteToyConfig, batch_size: usize, balanced: bool, seed: u64) -> Result<BatchStream> {
    BatchStream::new(Source::DiscreteToy(config), batch_size, balanced, seed)
}

/// Column layout of a labeled CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Feature columns in order; `None` takes every column except the label.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default = "CsvSchema::default_label")]
    pub label: String,
}

impl CsvSchema {
    fn default_label() -> String {
        "label".into()
    }
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            features: None,
            label: Self::default_label(),
        }
    }
}

/// Reads a headered numeric CSV. Labels must be the integers 0 or 1.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<LabeledSample>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}` in {}", path.display())))
    };
    let label_col = find(&schema.label)?;
    let feature_cols: Vec<usize> = match &schema.features {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| i != label_col).collect(),
    };
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let mut x = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let v: f64 = field(c).parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("column `{}`: `{}` is not a number", &headers[c], field(c)),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("column `{}`: non-finite value", &headers[c]),
                });
            }
            x.push(v);
        }
        let y = match field(label_col) {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Schema(format!(
                    "{}:{line}: label `{other}` in column `{}` is not 0 or 1",
                    path.display(),
                    schema.label
                )))
            }
        };
        out.push(LabeledSample { x, y });
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Writes samples with columns `x0..x{d-1},label`, floats at 17 significant
/// digits.
pub fn write_csv(path: impl AsRef<Path>, samples: &[LabeledSample]) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.x.len());
    let mut out = String::new();
    for j in 0..dim {
        out.push_str(&format!("x{j},"));
    }
    out.push_str("label\n");
    for s in samples {
        for v in &s.x {
            out.push_str(&format!("{v:.16e},"));
        }
        out.push_str(&format!("{}\n", s.y));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_empty_and_degenerate() {
        let c = BlobConfig::default();
        assert!(blob_sample(&c, 0, 0, 1).is_empty());
        let zero = BlobConfig {
            sigma0: 0.0,
            ..c.clone()
        };
        let centers = zero.centers();
        for p in blob_sample(&zero, 200, 0, 3) {
            assert!(centers.iter().any(|c| c[0] == p[0] && c[1] == p[1]));
        }
    }

    #[test]
    fn pooling_counts_and_determinism() {
        let a = pool_and_label(vec![vec![0.0]; 2], vec![vec![1.0]; 3], 9);
        assert_eq!(a.len(), 5);
        assert_eq!(a.iter().filter(|s| s.y == 1).count(), 3);
        let b = pool_and_label(vec![], vec![vec![1.0]; 4], 9);
        assert!(b.iter().all(|s| s.y == 1));
        let s0: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let s1: Vec<Vec<f64>> = (10..20).map(|i| vec![i as f64]).collect();
        assert_eq!(pool_and_label(s0.clone(), s1.clone(), 4), pool_and_label(s0, s1, 4));
    }

    #[test]
    fn stream_rejects_bad_sizes() {
        let src = Source::Blob(BlobConfig::default());
        assert!(BatchStream::new(src.clone(), 1, false, 0).is_err());
        assert!(BatchStream::new(src.clone(), 9, true, 0).is_err());
        assert!(BatchStream::new(src, 9, false, 0).is_ok());
    }

    #[test]
    fn balanced_batches_are_balanced_and_reproducible() {
        let src = Source::Blob(BlobConfig::default());
        let a: Vec<_> = BatchStream::new(src.clone(), 90, true, 5).unwrap().take(4).collect();
        let b: Vec<_> = BatchStream::new(src, 90, true, 5).unwrap().take(4).collect();
        assert_eq!(a, b);
        for batch in &a {
            assert_eq!(batch.len(), 90);
            assert_eq!(batch.iter().filter(|s| s.y == 1).count(), 45);
        }
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn dataset_remainder_is_dropped() {
        let samples: Vec<_> = (0..100)
            .map(|i| LabeledSample { x: vec![i as f64], y: (i % 2) as u8 })
            .collect();
        let stream = BatchStream::new(Source::Dataset { samples }, 30, false, 1).unwrap();
        let batches: Vec<_> = stream.collect();
        assert_eq!(batches.len(), 3);
        assert!(batches.iter().all(|b| b.len() == 30));
    }

    #[test]
    fn mutual_information_examples() {
        let indep = DiscreteToyConfig {
            table: vec![[0.12, 0.28], [0.18, 0.42]],
        };
        assert!(indep.mutual_information().abs() < 1e-15);
        let diag = DiscreteToyConfig {
            table: vec![[0.5, 0.0], [0.0, 0.5]],
        };
        assert!((diag.mutual_information() - 2f64.ln()).abs() < 1e-15);
        assert!(DiscreteToyConfig { table: vec![[0.5, 0.6]] }.validate().is_err());
        assert!(DiscreteToyConfig { table: vec![[-0.1, 1.1]] }.validate().is_err());
    }

    #[test]
    fn split_ratio_sizes() {
        let s: Vec<_> = (0..70).map(|i| LabeledSample { x: vec![i as f64], y: 0 }).collect();
        let parts = split_by_ratio(&s, &[5, 1, 1]);
        assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), vec![50, 10, 10]);
        let parts = split_by_ratio(&s[..9], &[4, 1]);
        assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), vec![8, 1]);
    }
}
