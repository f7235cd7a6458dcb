use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Labels, Sequence, SequenceDataset};
use crate::backbone::OutputMode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hidden-context benchmark: a sticky Markov chain over contexts, each
/// context shifting the mean of its own small set of relevant features.
/// By default contexts advance cyclically, so watching the current
/// context's features is enough to notice when it ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_features: usize,
    pub n_contexts: usize,
    /// Relevant feature indices per context.
    pub relevant: Vec<Vec<usize>>,
    /// Label emitted in each context.
    pub label_of_context: Vec<usize>,
    /// Row-stochastic context transition matrix.
    pub transition: Vec<Vec<f64>>,
    /// Mean shift of relevant features in their context.
    pub shift: f64,
    pub noise_std: f64,
    pub seq_len: usize,
    pub n_sequences: usize,
    /// Sequences are assigned to subjects round-robin.
    pub n_subjects: usize,
    /// Probability that a step's label is hidden.
    pub unlabelled_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let m = 3;
        Self {
            n_features: 20,
            n_contexts: m,
            relevant: vec![vec![2, 13], vec![6, 17], vec![9, 11]],
            label_of_context: (0..m).collect(),
            transition: cyclic_transition(m, 0.99),
            shift: 1.0,
            noise_std: 0.6,
            seq_len: 80,
            n_sequences: 150,
            n_subjects: 150,
            unlabelled_rate: 0.0,
        }
    }
}

/// Contexts advance `m → m + 1 (mod M)` when they leave.
pub fn cyclic_transition(m: usize, stay: f64) -> Vec<Vec<f64>> {
    if m == 1 {
        return vec![vec![1.0]];
    }
    (0..m)
        .map(|i| (0..m).map(|j| if i == j { stay } else if j == (i + 1) % m { 1.0 - stay } else { 0.0 }).collect())
        .collect()
}

/// Transition matrix with `stay` on the diagonal and the rest spread evenly.
pub fn sticky_transition(m: usize, stay: f64) -> Vec<Vec<f64>> {
    if m == 1 {
        return vec![vec![1.0]];
    }
    let off = (1.0 - stay) / (m - 1) as f64;
    (0..m).map(|i| (0..m).map(|j| if i == j { stay } else { off }).collect()).collect()
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let m = self.n_contexts;
        if m == 0 || self.n_features == 0 || self.seq_len == 0 || self.n_sequences == 0 || self.n_subjects == 0 {
            return Err(Error::invalid("synthetic spec sizes must be positive"));
        }
        if self.relevant.len() != m || self.label_of_context.len() != m {
            return Err(Error::invalid("one relevant set and one label per context required"));
        }
        if self.relevant.iter().flatten().any(|&k| k >= self.n_features) {
            return Err(Error::invalid("relevant feature index out of range"));
        }
        if self.transition.len() != m || self.transition.iter().any(|r| r.len() != m) {
            return Err(Error::invalid(format!("transition matrix must be {m}x{m}")));
        }
        for (i, row) in self.transition.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("transition row {i} is not a distribution (sum {sum})")));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite() && self.shift.is_finite()) {
            return Err(Error::invalid("noise std must be finite and nonnegative"));
        }
        if !(0.0..1.0).contains(&self.unlabelled_rate) {
            return Err(Error::invalid("unlabelled rate must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn n_labels(&self) -> usize {
        self.label_of_context.iter().max().map_or(0, |&l| l + 1)
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SequenceDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let (k, m, t_len) = (spec.n_features, spec.n_contexts, spec.seq_len);
    let uniform = vec![1.0 / m as f64; m];
    let mut sequences = Vec::with_capacity(spec.n_sequences);
    for i in 0..spec.n_sequences {
        let mut context = Vec::with_capacity(t_len);
        let mut c = sample_index(&uniform, &mut rng);
        let mut x = Vec::with_capacity(t_len * k);
        let mut labels = Vec::with_capacity(t_len);
        for t in 0..t_len {
            if t > 0 {
                c = sample_index(&spec.transition[c], &mut rng);
            }
            context.push(c);
            let start = x.len();
            x.extend((0..k).map(|_| noise.sample(&mut rng) as f32));
            for &r in &spec.relevant[c] {
                x[start + r] += spec.shift as f32;
            }
            let hidden = spec.unlabelled_rate > 0.0 && rng.random::<f64>() < spec.unlabelled_rate;
            labels.push(if hidden { None } else { Some(spec.label_of_context[c]) });
        }
        sequences.push(Sequence {
            subject: format!("s{:03}", i % spec.n_subjects),
            id: format!("q{i:04}"),
            features: Tensor::new(vec![t_len, k], x)?,
            labels: Labels::Classes(labels),
            context: Some(context),
        });
    }
    Ok(SequenceDataset {
        sequences,
        feature_names: (1..=k).map(|j| format!("f{j}")).collect(),
        mode: OutputMode::Multiclass,
        n_outputs: spec.n_labels(),
        relevance: Some(spec.relevant.clone()),
    })
}

#[derive(Serialize, Deserialize)]
struct RelevanceFile {
    relevance: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contexts: Option<Vec<Vec<usize>>>,
}

/// Writes ground-truth relevance (and per-sequence contexts) as JSON.
pub fn write_relevance(path: &Path, ds: &SequenceDataset) -> Result<()> {
    let relevance = ds.relevance.clone().ok_or(Error::MissingGroundTruth)?;
    let contexts = ds.sequences.iter().map(|s| s.context.clone()).collect::<Option<Vec<_>>>();
    let body = serde_json::to_string_pretty(&RelevanceFile { relevance, contexts })?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Attaches ground truth written by [`write_relevance`] to a loaded dataset.
pub fn read_relevance(path: &Path, ds: &mut SequenceDataset) -> Result<()> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: RelevanceFile = serde_json::from_str(&body)?;
    if let Some(contexts) = file.contexts {
        if contexts.len() != ds.sequences.len() {
            return Err(Error::invalid("context count does not match sequence count"));
        }
        for (s, c) in ds.sequences.iter_mut().zip(contexts) {
            if c.len() != s.len() {
                return Err(Error::invalid(format!("context length mismatch for sequence {}", s.id)));
            }
            s.context = Some(c);
        }
    }
    ds.relevance = Some(file.relevance);
    Ok(())
}

/// Causal HMM filter over the union of relevant features with Gaussian
/// emissions, fitted on ground-truth contexts. Its accuracy is the ceiling
/// for learned models on synthetic data.
#[derive(Clone, Debug)]
pub struct HmmOracle {
    features: Vec<usize>,
    /// `M × |features|` emission means.
    means: Vec<Vec<f64>>,
    /// Pooled per-feature std.
    std: Vec<f64>,
    log_transition: Vec<Vec<f64>>,
    log_initial: Vec<f64>,
    label_of_context: Vec<usize>,
}

const MIN_STD: f64 = 1e-6;

impl HmmOracle {
    pub fn fit(ds: &SequenceDataset) -> Result<Self> {
        let relevance = ds.relevance.as_ref().ok_or(Error::MissingGroundTruth)?;
        let m = relevance.len();
        let mut features: Vec<usize> = relevance.iter().flatten().copied().collect();
        features.sort_unstable();
        features.dedup();
        let f = features.len();
        let mut sums = vec![vec![0.0; f]; m];
        let mut counts = vec![0usize; m];
        let mut trans = vec![vec![1.0; m]; m];
        let mut init = vec![1.0; m];
        let mut label_votes = vec![vec![0usize; ds.n_outputs.max(1)]; m];
        for s in &ds.sequences {
            let ctx = s.context.as_ref().ok_or(Error::MissingGroundTruth)?;
            init[ctx[0]] += 1.0;
            for (t, &c) in ctx.iter().enumerate() {
                counts[c] += 1;
                for (j, &k) in features.iter().enumerate() {
                    sums[c][j] += s.features.get(t, k) as f64;
                }
                if t > 0 {
                    trans[ctx[t - 1]][c] += 1.0;
                }
                if let Some(y) = s.labels.class_at(t) {
                    label_votes[c][y] += 1;
                }
            }
        }
        let means: Vec<Vec<f64>> =
            sums.iter().zip(&counts).map(|(row, &n)| row.iter().map(|v| v / n.max(1) as f64).collect()).collect();
        let mut sq = vec![0.0; f];
        let mut total = 0usize;
        for s in &ds.sequences {
            let ctx = s.context.as_ref().expect("checked above");
            for (t, &c) in ctx.iter().enumerate() {
                total += 1;
                for (j, &k) in features.iter().enumerate() {
                    let d = s.features.get(t, k) as f64 - means[c][j];
                    sq[j] += d * d;
                }
            }
        }
        let std = sq.iter().map(|v| (v / total.max(1) as f64).sqrt().max(MIN_STD)).collect();
        let log_norm = |row: &[f64]| {
            let z: f64 = row.iter().sum();
            row.iter().map(|v| (v / z).ln()).collect::<Vec<_>>()
        };
        let label_of_context = label_votes
            .iter()
            .map(|v| v.iter().enumerate().max_by_key(|&(i, &n)| (n, std::cmp::Reverse(i))).map_or(0, |(i, _)| i))
            .collect();
        Ok(Self {
            features,
            means,
            std,
            log_transition: trans.iter().map(|r| log_norm(r)).collect(),
            log_initial: log_norm(&init),
            label_of_context,
        })
    }

    /// Filtered most-likely context per step, using observations up to and including `t`.
    pub fn filter_contexts(&self, features: &Tensor<f32>) -> Vec<usize> {
        let m = self.means.len();
        let mut log_alpha = self.log_initial.clone();
        let mut out = Vec::with_capacity(features.rows());
        for t in 0..features.rows() {
            if t > 0 {
                log_alpha = (0..m)
                    .map(|j| log_sum_exp((0..m).map(|i| log_alpha[i] + self.log_transition[i][j])))
                    .collect();
            }
            for (c, la) in log_alpha.iter_mut().enumerate() {
                for (j, &k) in self.features.iter().enumerate() {
                    let z = (features.get(t, k) as f64 - self.means[c][j]) / self.std[j];
                    *la -= 0.5 * z * z;
                }
            }
            let norm = log_sum_exp(log_alpha.iter().copied());
            log_alpha.iter_mut().for_each(|v| *v -= norm);
            let best = (0..m).fold(0, |b, c| if log_alpha[c] > log_alpha[b] { c } else { b });
            out.push(best);
        }
        out
    }

    pub fn predict(&self, features: &Tensor<f32>) -> Vec<usize> {
        self.filter_contexts(features).into_iter().map(|c| self.label_of_context[c]).collect()
    }

    /// Percentage of labelled steps predicted correctly.
    pub fn accuracy(&self, ds: &SequenceDataset) -> Result<f64> {
        let (mut hit, mut n) = (0usize, 0usize);
        for s in &ds.sequences {
            let pred = self.predict(&s.features);
            for (t, p) in pred.into_iter().enumerate() {
                if let Some(y) = s.labels.class_at(t) {
                    n += 1;
                    hit += usize::from(p == y);
                }
            }
        }
        if n == 0 {
            return Err(Error::DegenerateBatch);
        }
        Ok(100.0 * hit as f64 / n as f64)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
