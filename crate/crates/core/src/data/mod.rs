//! Sequence datasets: synthetic generation, CSV ingestion, normalisation,
//! segmentation, splitting and batching.

mod csv_io;
mod synthetic;
mod transform;

pub use csv_io::{load_csv, write_csv, CsvSchema};
pub use synthetic::{cyclic_transition, generate_synthetic, sticky_transition, write_relevance, read_relevance, HmmOracle, SyntheticSpec};
pub use transform::{normalize, segment, split, NormMode, NormStats, PadPolicy, SplitMode};

use serde::{Deserialize, Serialize};

use crate::backbone::{OutputMode, StepTargets};
use crate::error::{Error, Result};
use crate::model::Batch;
use crate::tensor::{Scalar, Tensor};

/// Per-step labels of one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    /// One class per step; `None` marks an unlabelled step.
    Classes(Vec<Option<usize>>),
    /// `T × n_labels` binary cells, row-major.
    Multi { n_labels: usize, cells: Vec<Option<bool>> },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Multi { n_labels, cells } => cells.len() / (*n_labels).max(1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether step `t` carries any label.
    pub fn observed(&self, t: usize) -> bool {
        match self {
            Labels::Classes(c) => c[t].is_some(),
            Labels::Multi { n_labels, cells } => cells[t * n_labels..(t + 1) * n_labels].iter().any(Option::is_some),
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.len()).map(|t| self.observed(t)).collect()
    }

    /// Labels restricted to steps `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Labels {
        match self {
            Labels::Classes(c) => Labels::Classes(c[start..end].to_vec()),
            Labels::Multi { n_labels, cells } => {
                Labels::Multi { n_labels: *n_labels, cells: cells[start * n_labels..end * n_labels].to_vec() }
            }
        }
    }

    /// Appends `n` unlabelled steps.
    pub fn pad_unlabelled(&mut self, n: usize) {
        match self {
            Labels::Classes(c) => c.extend(std::iter::repeat_n(None, n)),
            Labels::Multi { n_labels, cells } => cells.extend(std::iter::repeat_n(None, n * *n_labels)),
        }
    }

    /// Class index at step `t` for multiclass labels.
    pub fn class_at(&self, t: usize) -> Option<usize> {
        match self {
            Labels::Classes(c) => c[t],
            Labels::Multi { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub subject: String,
    pub id: String,
    /// `T × K`.
    pub features: Tensor<f32>,
    pub labels: Labels,
    /// Hidden context per step, when known (synthetic data).
    pub context: Option<Vec<usize>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mask(&self) -> Vec<bool> {
        self.labels.mask()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub sequences: Vec<Sequence>,
    pub feature_names: Vec<String>,
    pub mode: OutputMode,
    /// Number of classes (multiclass) or labels (multilabel).
    pub n_outputs: usize,
    /// Relevant feature indices per context, when known.
    pub relevance: Option<Vec<Vec<usize>>>,
}

impl SequenceDataset {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_features();
        for s in &self.sequences {
            if s.is_empty() {
                return Err(Error::EmptySequence);
            }
            if s.features.cols() != k {
                return Err(Error::shape("dataset", format!("sequence {} has {} features, expected {k}", s.id, s.features.cols())));
            }
            if s.labels.len() != s.len() {
                return Err(Error::shape("dataset", format!("sequence {} has {} labels for {} steps", s.id, s.labels.len(), s.len())));
            }
            match (&s.labels, self.mode) {
                (Labels::Classes(c), OutputMode::Multiclass) => {
                    if let Some(&bad) = c.iter().flatten().find(|&&c| c >= self.n_outputs) {
                        return Err(Error::ClassIndex { index: bad, classes: self.n_outputs });
                    }
                }
                (Labels::Multi { n_labels, .. }, OutputMode::Multilabel) if *n_labels == self.n_outputs => {}
                _ => return Err(Error::invalid(format!("labels of sequence {} do not match the output mode", s.id))),
            }
        }
        Ok(())
    }

    /// A dataset holding the selected sequences, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            mode: self.mode,
            n_outputs: self.n_outputs,
            relevance: self.relevance.clone(),
        }
    }

    /// Stacks sequences into one batch. Shorter sequences are padded by
    /// repeating their last row with unlabelled steps.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> Result<Batch<S>> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let k = self.n_features();
        let steps = indices.iter().map(|&i| self.sequences[i].len()).max().unwrap_or(0);
        let rows = indices.len();
        let mut inputs = Vec::with_capacity(steps);
        let mut targets = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut x = Vec::with_capacity(rows * k);
            for &i in indices {
                let s = &self.sequences[i];
                let src = t.min(s.len() - 1);
                x.extend(s.features.row_slice(src).iter().map(|&v| S::lit(v as f64)));
            }
            inputs.push(Tensor::new(vec![rows, k], x)?);
            targets.push(match self.mode {
                OutputMode::Multiclass => StepTargets::Classes(
                    indices.iter().map(|&i| {
                        let s = &self.sequences[i];
                        if t < s.len() { s.labels.class_at(t) } else { None }
                    }).collect(),
                ),
                OutputMode::Multilabel => {
                    let c = self.n_outputs;
                    let mut cells = Vec::with_capacity(rows * c);
                    for &i in indices {
                        let s = &self.sequences[i];
                        match &s.labels {
                            Labels::Multi { cells: src, .. } if t < s.len() => cells.extend_from_slice(&src[t * c..(t + 1) * c]),
                            _ => cells.extend(std::iter::repeat_n(None, c)),
                        }
                    }
                    StepTargets::Labels { labels: c, cells }
                }
            });
        }
        Ok(Batch { inputs, targets })
    }

    /// Consecutive batches over `order`; the last one may be smaller.
    pub fn batches<S: Scalar>(&self, order: &[usize], batch_size: usize) -> Result<Vec<Batch<S>>> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        order.chunks(batch_size).map(|chunk| self.batch(chunk)).collect()
    }
}
