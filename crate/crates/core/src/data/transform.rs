use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Sequence, SequenceDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    #[default]
    Zscore,
    Minmax,
    None,
}

/// Per-feature affine map `x ↦ (x - offset) · scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mode: NormMode,
    pub offset: Vec<f64>,
    /// Zero for constant features.
    pub scale: Vec<f64>,
}

const CONSTANT_TOL: f64 = 1e-12;

impl NormStats {
    /// Statistics from `train` only.
    pub fn fit(train: &SequenceDataset, mode: NormMode) -> Result<Self> {
        let k = train.n_features();
        let n = train.total_steps();
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        let rows = || train.sequences.iter().flat_map(|s| (0..s.len()).map(move |t| s.features.row_slice(t)));
        let (offset, scale) = match mode {
            NormMode::None => (vec![0.0; k], vec![1.0; k]),
            NormMode::Zscore => {
                let mut mean = vec![0.0; k];
                for r in rows() {
                    mean.iter_mut().zip(r).for_each(|(m, &v)| *m += v as f64);
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; k];
                for r in rows() {
                    var.iter_mut().zip(r).zip(&mean).for_each(|((s, &v), m)| *s += (v as f64 - m).powi(2));
                }
                let scale = var.iter().map(|v| {
                    let sd = (v / n as f64).sqrt();
                    if sd > CONSTANT_TOL { 1.0 / sd } else { 0.0 }
                });
                (mean, scale.collect())
            }
            NormMode::Minmax => {
                let mut lo = vec![f64::INFINITY; k];
                let mut hi = vec![f64::NEG_INFINITY; k];
                for r in rows() {
                    for (j, &v) in r.iter().enumerate() {
                        lo[j] = lo[j].min(v as f64);
                        hi[j] = hi[j].max(v as f64);
                    }
                }
                let offset = lo.iter().zip(&hi).map(|(l, h)| (l + h) / 2.0).collect();
                let scale = lo.iter().zip(&hi).map(|(l, h)| if h - l > CONSTANT_TOL { 2.0 / (h - l) } else { 0.0 }).collect();
                (offset, scale)
            }
        };
        Ok(Self { mode, offset, scale })
    }

    /// Applies the map; values outside the training range are not clipped.
    pub fn apply(&self, ds: &mut SequenceDataset) -> Result<()> {
        if ds.n_features() != self.offset.len() {
            return Err(Error::shape("normalize", format!("{} features, stats for {}", ds.n_features(), self.offset.len())));
        }
        let k = self.offset.len();
        for s in &mut ds.sequences {
            for (i, v) in s.features.data_mut().iter_mut().enumerate() {
                let j = i % k;
                *v = ((*v as f64 - self.offset[j]) * self.scale[j]) as f32;
            }
        }
        Ok(())
    }
}

/// Fits on `train`, then normalises `train` and every dataset in `others`.
pub fn normalize(train: &mut SequenceDataset, others: &mut [&mut SequenceDataset], mode: NormMode) -> Result<NormStats> {
    let stats = NormStats::fit(train, mode)?;
    stats.apply(train)?;
    for ds in others.iter_mut() {
        stats.apply(ds)?;
    }
    Ok(stats)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadPolicy {
    #[default]
    RepeatLast,
    Zero,
}

/// Cuts every sequence into windows of `len` steps. The final short window
/// is padded per `pad`; padded steps are unlabelled.
pub fn segment(ds: &SequenceDataset, len: usize, pad: PadPolicy) -> Result<SequenceDataset> {
    if len == 0 {
        return Err(Error::invalid("segment length must be at least 1"));
    }
    let k = ds.n_features();
    let mut sequences = Vec::new();
    for s in &ds.sequences {
        for (n, start) in (0..s.len()).step_by(len).enumerate() {
            let end = (start + len).min(s.len());
            let missing = len - (end - start);
            let mut data = s.features.data()[start * k..end * k].to_vec();
            let last = s.features.row_slice(end - 1).to_vec();
            for _ in 0..missing {
                match pad {
                    PadPolicy::RepeatLast => data.extend_from_slice(&last),
                    PadPolicy::Zero => data.extend(std::iter::repeat_n(0.0, k)),
                }
            }
            let mut labels = s.labels.slice(start, end);
            labels.pad_unlabelled(missing);
            let context = s.context.as_ref().map(|c| {
                let mut w = c[start..end].to_vec();
                w.extend(std::iter::repeat_n(c[end - 1], missing));
                w
            });
            sequences.push(Sequence {
                subject: s.subject.clone(),
                id: format!("{}#{n}", s.id),
                features: Tensor::new(vec![len, k], data)?,
                labels,
                context,
            });
        }
    }
    Ok(SequenceDataset { sequences, ..ds.subset(&[]) })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Subject,
    Random,
}

fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    let needed = ratios.iter().filter(|&&r| r > 0.0).count();
    if n < needed {
        return Err(Error::invalid(format!("{n} units cannot fill {needed} splits")));
    }
    let mut val = (ratios[1] * n as f64).round() as usize;
    let mut test = (ratios[2] * n as f64).round() as usize;
    if ratios[1] > 0.0 {
        val = val.max(1);
    }
    if ratios[2] > 0.0 {
        test = test.max(1);
    }
    while val + test > n - usize::from(ratios[0] > 0.0) {
        if test >= val && test > 1 { test -= 1 } else { val -= 1 }
    }
    Ok([n - val - test, val, test])
}

/// Deterministic train/validation/test split. Subject mode keeps every
/// subject's sequences together.
pub fn split(
    ds: &SequenceDataset,
    ratios: [f64; 3],
    mode: SplitMode,
    seed: u64,
) -> Result<(SequenceDataset, SequenceDataset, SequenceDataset)> {
    if ratios.iter().any(|&r| r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts: [Vec<usize>; 3] = match mode {
        SplitMode::Random => {
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            idx.shuffle(&mut rng);
            let [a, b, _] = split_counts(idx.len(), ratios)?;
            [idx[..a].to_vec(), idx[a..a + b].to_vec(), idx[a + b..].to_vec()]
        }
        SplitMode::Subject => {
            let mut subjects: Vec<&str> =
                ds.sequences.iter().map(|s| s.subject.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
            subjects.shuffle(&mut rng);
            let [a, b, _] = split_counts(subjects.len(), ratios)?;
            let pick = |chosen: &[&str]| -> Vec<usize> {
                (0..ds.len()).filter(|&i| chosen.contains(&ds.sequences[i].subject.as_str())).collect()
            };
            [pick(&subjects[..a]), pick(&subjects[a..a + b]), pick(&subjects[a + b..])]
        }
    };
    let mut sorted = parts;
    sorted.iter_mut().for_each(|p| p.sort_unstable());
    Ok((ds.subset(&sorted[0]), ds.subset(&sorted[1]), ds.subset(&sorted[2])))
}
