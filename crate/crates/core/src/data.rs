//! Datasets of sparse, binary-labelled samples.
//!
//! Ingestion reads the line-oriented sparse text format
//!
//! ```text
//! <label> <index>:<value> <index>:<value> ... # optional comment
//! ```
//!
//! with 1-based, strictly increasing feature indices. Nested training subsets
//! `S_m ⊂ S_n ⊂ T` are prefixes of a dataset that was shuffled once, so a
//! [`DatasetView`] is just a borrowed prefix.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::erm::Weights;

/// One labelled observation `z = (x, y)` with a sparse feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    indices: Vec<u32>,
    values: Vec<f64>,
    label: f64,
}

impl Sample {
    /// Builds a sample from `(index, value)` pairs. Indices are 1-based and must be
    /// strictly increasing; explicit zeros are dropped.
    pub fn new(features: impl IntoIterator<Item = (u32, f64)>, label: f64) -> Result<Self> {
        if label != 1.0 && label != -1.0 {
            return Err(invalid(format!("label must be -1 or +1, got {label}")));
        }
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (index, value) in features {
            if index == 0 {
                return Err(invalid("feature indices are 1-based"));
            }
            if !value.is_finite() {
                return Err(invalid(format!("feature {index} has non-finite value")));
            }
            if let Some(&last) = indices.last() {
                if index <= last {
                    return Err(invalid(format!("feature index {index} is not strictly increasing")));
                }
            }
            if value != 0.0 {
                indices.push(index);
                values.push(value);
            }
        }
        Ok(Self { indices, values, label })
    }

    pub fn label(&self) -> f64 {
        self.label
    }

    /// 1-based feature indices.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn features(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn max_index(&self) -> u32 {
        self.indices.last().copied().unwrap_or(0)
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// `wᵀx`. The caller guarantees `w.len() >= max_index()`.
    #[inline]
    pub fn dot(&self, w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            acc += w[i as usize - 1] * v;
        }
        acc
    }

    /// `w += scale * x`.
    #[inline]
    pub fn axpy_into(&self, scale: f64, w: &mut [f64]) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            w[i as usize - 1] += scale * v;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// An ordered, immutable collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    /// `dim` defaults to the largest feature index present; an explicit value must cover it.
    pub fn from_samples(name: impl Into<String>, samples: Vec<Sample>, dim: Option<usize>) -> Result<Self> {
        let observed = samples.iter().map(|s| s.max_index() as usize).max().unwrap_or(0);
        let dim = match dim {
            Some(d) if d < observed => {
                return Err(invalid(format!("dim {d} is smaller than max feature index {observed}")))
            }
            Some(d) => d,
            None => observed,
        };
        Ok(Self { name: name.into(), dim: dim.max(1), samples })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// View over the first `n` samples.
    pub fn prefix(&self, n: usize) -> Result<DatasetView<'_>> {
        if n == 0 || n > self.len() {
            return Err(invalid(format!("prefix size {n} outside 1..={}", self.len())));
        }
        Ok(DatasetView { base: self, count: n })
    }

    pub fn full(&self) -> Result<DatasetView<'_>> {
        self.prefix(self.len())
    }

    /// New dataset made of the samples at `indices`, in that order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        Dataset {
            name: name.into(),
            dim: self.dim,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// The first `count` samples of a dataset: the nested subset `S_count`.
#[derive(Debug, Clone, Copy)]
pub struct DatasetView<'a> {
    base: &'a Dataset,
    count: usize,
}

impl<'a> DatasetView<'a> {
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    pub fn base(&self) -> &'a Dataset {
        self.base
    }

    pub fn samples(&self) -> &'a [Sample] {
        &self.base.samples[..self.count]
    }
}

/// Maps raw numeric labels in a text file onto `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    entries: Vec<(f64, f64)>,
}

impl LabelMap {
    /// Accepts `-1` and `+1` (in any numeric spelling) as themselves.
    pub fn signed() -> Self {
        Self { entries: vec![(-1.0, -1.0), (1.0, 1.0)] }
    }

    /// Explicit raw → ±1 pairs, e.g. `[(0.0, -1.0), (8.0, 1.0)]` for a digit pair.
    pub fn new(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let entries: Vec<_> = pairs.into_iter().collect();
        if entries.iter().any(|&(_, y)| y != 1.0 && y != -1.0) {
            return Err(invalid("label map targets must be -1 or +1"));
        }
        Ok(Self { entries })
    }

    /// Parses `raw:mapped,raw:mapped`, e.g. `0:-1,8:1`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (raw, mapped) = part
                .split_once(':')
                .ok_or_else(|| invalid(format!("label map entry `{part}` is not raw:mapped")))?;
            let raw: f64 = raw.trim().parse().map_err(|_| invalid(format!("bad raw label `{raw}`")))?;
            let mapped: f64 = mapped.trim().parse().map_err(|_| invalid(format!("bad mapped label `{mapped}`")))?;
            pairs.push((raw, mapped));
        }
        Self::new(pairs)
    }

    pub fn map(&self, raw: f64) -> Option<f64> {
        self.entries.iter().find(|&&(r, _)| r == raw).map(|&(_, y)| y)
    }
}

impl Default for LabelMap {
    fn default() -> Self {
        Self::signed()
    }
}

/// Reads the sparse text format. `dim` overrides the observed maximum index.
pub fn parse_sparse_text<R: BufRead>(
    reader: R,
    label_map: &LabelMap,
    name: &str,
    dim: Option<usize>,
) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = content.split_whitespace();
        let Some(raw_label) = tokens.next() else { continue };
        let raw: f64 = raw_label.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("label `{raw_label}` is not a number"),
        })?;
        let label = label_map.map(raw).ok_or_else(|| Error::UnmappedLabel {
            line: lineno,
            label: raw_label.to_string(),
        })?;

        let mut features = Vec::new();
        let mut last = 0u32;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("token `{tok}` is not index:value"),
            })?;
            let index: u32 = idx.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("feature index `{idx}` is not a positive integer"),
            })?;
            if index == 0 {
                return Err(Error::Parse { line: lineno, message: "feature indices are 1-based".into() });
            }
            let value: f64 = val.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("feature value `{val}` is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse { line: lineno, message: format!("feature value `{val}` is not finite") });
            }
            if index <= last {
                return Err(Error::NonIncreasingIndex { line: lineno, index });
            }
            last = index;
            features.push((index, value));
        }
        // Indices and label were validated above, so construction cannot fail.
        samples.push(Sample::new(features, label).expect("validated sample"));
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::from_samples(name, samples, dim)
}

/// Writes the sparse text format; values use the shortest representation that
/// reparses to the same `f64`.
pub fn write_sparse_text<W: Write>(dataset: &Dataset, mut sink: W) -> Result<()> {
    for s in dataset.samples() {
        write!(sink, "{}", if s.label() > 0.0 { "+1" } else { "-1" })?;
        for (i, v) in s.features() {
            write!(sink, " {i}:{v:?}")?;
        }
        writeln!(sink)?;
    }
    sink.flush()?;
    Ok(())
}

/// Draws `w_true` and `n` samples whose labels follow the logistic model
/// `P(y = +1 | x) = 1 / (1 + exp(-w_trueᵀx))`.
///
/// Each coordinate is present with probability `sparsity` and then drawn from
/// `N(0, 1 / (dim · sparsity))`, so `E‖x‖² = 1`; `w_true` has i.i.d. `N(0, 4)`
/// entries, giving margins of standard deviation about 2.
pub fn generate_synthetic(n: usize, dim: usize, sparsity: f64, seed: u64) -> Result<(Dataset, Weights)> {
    if n == 0 || dim == 0 {
        return Err(invalid("synthetic data needs n >= 1 and dim >= 1"));
    }
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(invalid(format!("sparsity must lie in (0, 1], got {sparsity}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight_dist = Normal::new(0.0, 2.0).expect("valid normal");
    let feature_dist = Normal::new(0.0, (1.0 / (dim as f64 * sparsity)).sqrt()).expect("valid normal");

    let w_true: Vec<f64> = (0..dim).map(|_| weight_dist.sample(&mut rng)).collect();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut features = Vec::new();
        for j in 0..dim {
            if sparsity >= 1.0 || rng.random::<f64>() < sparsity {
                features.push((j as u32 + 1, feature_dist.sample(&mut rng)));
            }
        }
        let margin: f64 = features.iter().map(|&(j, v)| w_true[j as usize - 1] * v).sum();
        let p_pos = 1.0 / (1.0 + (-margin).exp());
        let label = if rng.random::<f64>() < p_pos { 1.0 } else { -1.0 };
        samples.push(Sample::new(features, label)?);
    }
    let name = format!("synthetic-n{n}-d{dim}-s{sparsity}-seed{seed}");
    Ok((Dataset::from_samples(name, samples, Some(dim))?, Weights::from(w_true)))
}

/// Scales every sample to unit Euclidean norm. Zero vectors, and vectors already
/// within 1e-12 of unit norm, are left untouched so the map is idempotent.
pub fn normalize(dataset: &Dataset) -> Dataset {
    let samples = dataset
        .samples()
        .iter()
        .map(|s| {
            let norm = s.norm();
            if norm == 0.0 || (norm - 1.0).abs() <= 1e-12 {
                s.clone()
            } else {
                Sample {
                    indices: s.indices.clone(),
                    values: s.values.iter().map(|v| v / norm).collect(),
                    label: s.label,
                }
            }
        })
        .collect();
    Dataset { name: dataset.name.clone(), dim: dataset.dim, samples }
}

/// Applies one seeded uniform permutation, then cuts it into train and test parts.
pub fn shuffle_and_split(dataset: &Dataset, train_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if train_count == 0 || train_count > dataset.len() {
        return Err(invalid(format!("train_count {train_count} outside 1..={}", dataset.len())));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, test_idx) = order.split_at(train_count);
    Ok((
        dataset.subset(format!("{}-train", dataset.name), train_idx),
        dataset.subset(format!("{}-test", dataset.name), test_idx),
    ))
}

/// Free-function form of [`Dataset::prefix`].
pub fn prefix(dataset: &Dataset, n: usize) -> Result<DatasetView<'_>> {
    dataset.prefix(n)
}
