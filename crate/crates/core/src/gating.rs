//! Bernoulli feature gates with an implicit variational distribution.
//!
//! A gate network maps the belief state to probabilities `σ ∈ (0,1)^G`.
//! Hard gates are drawn by pushing standard-logistic noise through an
//! indicator, `z = 1[logit(σ) + ε > 0]`, which has mean exactly `σ`. The
//! relaxed surrogate replaces the indicator with a tempered sigmoid. The
//! prior on each gate is `Bern(exp(-η c_k))`; with `η = Nλ` the per-sample
//! KL collapses to the linear penalty `λ Σ c_k σ_k`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{logit, sigmoid, Scalar, Tensor};

/// Uniform draws are clamped to this distance from {0, 1}.
pub const UNIFORM_CLAMP: f64 = 1e-7;

/// Default relaxation temperature.
pub const DEFAULT_TAU: f64 = 0.05;

/// Initial bias of the gate network's output layer (σ ≈ 0.88).
pub const GATE_BIAS_INIT: f64 = 2.0;

/// Prior success probability `exp(-η c)`.
pub fn prior_prob(cost: f64, eta: f64) -> f64 {
    (-eta * cost).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatePrior {
    pub costs: Vec<f64>,
    pub lambda: f64,
    /// Dataset size `N` in `η = Nλ`.
    pub n_scale: f64,
}

impl GatePrior {
    pub fn new(costs: Vec<f64>, lambda: f64, n_scale: f64) -> Result<Self> {
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::invalid("gate costs must be finite and nonnegative"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        if !(n_scale > 0.0) {
            return Err(Error::invalid("n_scale must be positive"));
        }
        Ok(Self { costs, lambda, n_scale })
    }

    /// Equal unit costs.
    pub fn uniform(gates: usize, lambda: f64, n_scale: f64) -> Result<Self> {
        Self::new(vec![1.0; gates], lambda, n_scale)
    }

    pub fn eta(&self) -> f64 {
        self.n_scale * self.lambda
    }

    pub fn prior_probs(&self) -> Vec<f64> {
        let eta = self.eta();
        self.costs.iter().map(|&c| prior_prob(c, eta)).collect()
    }

    /// `λ Σ_k c_k σ_k`.
    pub fn kl_penalty_approx(&self, probs: &[f64]) -> Result<f64> {
        self.check_len(probs)?;
        Ok(self.lambda * self.costs.iter().zip(probs).map(|(c, s)| c * s).sum::<f64>())
    }

    /// Exact `Σ_k KL(Bern(σ_k) || Bern(p_k))` against the prior, evaluated
    /// with `ln p_k = -η c_k` so that large `η` does not underflow.
    pub fn kl_exact(&self, probs: &[f64]) -> Result<f64> {
        self.check_len(probs)?;
        let eta = self.eta();
        let mut total = 0.0;
        for (&s, &c) in probs.iter().zip(&self.costs) {
            let log_p = -eta * c;
            if !(log_p < 0.0) || !log_p.is_finite() {
                return Err(Error::invalid(format!("prior probability exp({log_p}) must lie strictly in (0, 1)")));
            }
            // ln(1 - p) = ln(1 - e^{log_p})
            let log_not_p = (-log_p.exp()).ln_1p();
            let term = |a: f64, log_b: f64| if a == 0.0 { 0.0 } else { a * (a.ln() - log_b) };
            total += term(s, log_p) + term(1.0 - s, log_not_p);
        }
        Ok(total)
    }

    fn check_len(&self, probs: &[f64]) -> Result<()> {
        if probs.len() != self.costs.len() {
            return Err(Error::shape("gate prior", format!("{} probabilities for {} gates", probs.len(), self.costs.len())));
        }
        Ok(())
    }
}

/// `KL(Bern(q) || Bern(p))`, with `0 log 0 = 0`.
pub fn bernoulli_kl(q: f64, p: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(q, p) + term(1.0 - q, 1.0 - p)
}

/// Standard-logistic sample from a uniform draw: `ln u - ln(1 - u)`.
pub fn logistic_from_uniform<S: Scalar>(u: S) -> S {
    let lo = S::lit(UNIFORM_CLAMP);
    let u = u.max(lo).min(S::one() - lo);
    u.ln() - (S::one() - u).ln()
}

pub fn sample_uniform<S: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<S> {
    (0..n).map(|_| S::lit(rng.random::<f64>())).collect()
}

pub fn sample_logistic<S: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<S> {
    (0..n).map(|_| logistic_from_uniform(S::lit(rng.random::<f64>()))).collect()
}

/// `sigmoid((logit(σ) + ε) / τ)`.
pub fn relaxed_gate<S: Scalar>(prob: S, noise: S, tau: S) -> Result<S> {
    if !(tau > S::zero()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    Ok(sigmoid((logit(prob) + noise) / tau))
}

pub fn relaxed_gates<S: Scalar>(probs: &[S], noise: &[S], tau: S) -> Result<Vec<S>> {
    probs.iter().zip(noise).map(|(&p, &e)| relaxed_gate(p, e, tau)).collect()
}

/// `1[logit(σ) + ε > 0]`.
pub fn hard_gate_sampled<S: Scalar>(prob: S, noise: S) -> S {
    if logit(prob) + noise > S::zero() {
        S::one()
    } else {
        S::zero()
    }
}

pub fn hard_gates_sampled<S: Scalar>(probs: &[S], noise: &[S]) -> Vec<S> {
    probs.iter().zip(noise).map(|(&p, &e)| hard_gate_sampled(p, e)).collect()
}

/// Test-time gate `1[σ > 1/2]`; closed on the tie.
pub fn hard_gate_deterministic<S: Scalar>(prob: S) -> S {
    if prob > S::lit(0.5) {
        S::one()
    } else {
        S::zero()
    }
}

pub fn hard_gates_deterministic<S: Scalar>(probs: &[S]) -> Vec<S> {
    probs.iter().map(|&p| hard_gate_deterministic(p)).collect()
}

/// One time step's gate state for a single sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GateSample<S = f32> {
    pub probs: Vec<S>,
    pub noise: Vec<S>,
    pub relaxed: Vec<S>,
    pub hard: Vec<S>,
    pub tau: S,
}

impl<S: Scalar> GateSample<S> {
    pub fn draw<R: Rng + ?Sized>(probs: Vec<S>, tau: S, rng: &mut R) -> Result<Self> {
        let noise = sample_logistic(probs.len(), rng);
        Self::from_noise(probs, noise, tau)
    }

    pub fn from_noise(probs: Vec<S>, noise: Vec<S>, tau: S) -> Result<Self> {
        if probs.len() != noise.len() {
            return Err(Error::shape("gate sample", "noise length differs from gate count"));
        }
        let relaxed = relaxed_gates(&probs, &noise, tau)?;
        let hard = hard_gates_sampled(&probs, &noise);
        Ok(Self { probs, noise, relaxed, hard, tau })
    }
}

/// Partition of the `K` input columns into `G` gated groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroups {
    groups: Vec<Vec<usize>>,
    n_features: usize,
}

impl FeatureGroups {
    pub fn new(groups: Vec<Vec<usize>>, n_features: usize) -> Result<Self> {
        let mut seen = vec![false; n_features];
        for group in &groups {
            if group.is_empty() {
                return Err(Error::invalid("empty feature group"));
            }
            for &col in group {
                if col >= n_features {
                    return Err(Error::invalid(format!("column {col} outside {n_features} features")));
                }
                if std::mem::replace(&mut seen[col], true) {
                    return Err(Error::invalid(format!("column {col} appears in two groups")));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("column {missing} is not covered by any group")));
        }
        Ok(Self { groups, n_features })
    }

    /// One gate per feature.
    pub fn singletons(n_features: usize) -> Self {
        Self { groups: (0..n_features).map(|k| vec![k]).collect(), n_features }
    }

    /// Consecutive blocks of `size` columns (e.g. xyz triples).
    pub fn blocks(n_features: usize, size: usize) -> Result<Self> {
        if size == 0 || n_features % size != 0 {
            return Err(Error::invalid(format!("{n_features} features do not split into blocks of {size}")));
        }
        Self::new((0..n_features / size).map(|g| (g * size..(g + 1) * size).collect()).collect(), n_features)
    }

    pub fn n_gates(&self) -> usize {
        self.groups.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn is_identity(&self) -> bool {
        self.groups.len() == self.n_features && self.groups.iter().enumerate().all(|(g, cols)| cols == &[g])
    }

    /// `G × K` 0/1 matrix mapping gates to the columns they control.
    pub fn expansion<S: Scalar>(&self) -> Tensor<S> {
        let mut e = Tensor::zeros(self.n_gates(), self.n_features);
        for (g, cols) in self.groups.iter().enumerate() {
            for &k in cols {
                e.set(g, k, S::one());
            }
        }
        e
    }

    /// Per-feature gate values from per-group values, for one row.
    pub fn expand_row<S: Scalar>(&self, gates: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.n_features];
        for (cols, &z) in self.groups.iter().zip(gates) {
            for &k in cols {
                out[k] = z;
            }
        }
        out
    }
}

/// `x̃ = x ⊙ expand(z)` for `B × K` inputs and `B × G` gates.
pub fn apply_gates<S: Scalar>(x: &Tensor<S>, gates: &Tensor<S>, groups: &FeatureGroups) -> Result<Tensor<S>> {
    if x.cols() != groups.n_features() || gates.cols() != groups.n_gates() || x.rows() != gates.rows() {
        return Err(Error::shape(
            "apply_gates",
            format!("x {:?}, gates {:?}, {} groups over {} columns", x.shape(), gates.shape(), groups.n_gates(), groups.n_features()),
        ));
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        let mask = groups.expand_row(gates.row_slice(r));
        for (k, m) in mask.into_iter().enumerate() {
            out.set(r, k, x.get(r, k) * m);
        }
    }
    Ok(out)
}

/// Tape version of [`apply_gates`]; `expansion` is the constant from
/// [`FeatureGroups::expansion`] or `None` for singleton groups.
pub fn apply_gates_on_tape<S: Scalar>(tape: &mut Tape<S>, x: Var, gates: Var, expansion: Option<Var>) -> Result<Var> {
    let mask = match expansion {
        Some(e) => tape.matmul(gates, e)?,
        None => gates,
    };
    tape.mul(x, mask)
}

/// Two fully connected layers: ReLU then sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct GateNetParams<S = f32> {
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct GateNetVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl<S: Scalar> GateNetParams<S> {
    pub fn zeros(hidden: usize, gate_hidden: usize, gates: usize) -> Self {
        Self {
            w1: Tensor::zeros(hidden, gate_hidden),
            b1: Tensor::zeros(1, gate_hidden),
            w2: Tensor::zeros(gate_hidden, gates),
            b2: Tensor::zeros(1, gates),
        }
    }

    /// Uniform(±1/√fan_in) weights and first-layer bias; output bias fixed
    /// at [`GATE_BIAS_INIT`].
    pub fn init<R: Rng + ?Sized>(hidden: usize, gate_hidden: usize, gates: usize, rng: &mut R) -> Self {
        Self {
            w1: crate::init::uniform(hidden, gate_hidden, hidden, rng),
            b1: crate::init::uniform(1, gate_hidden, hidden, rng),
            w2: crate::init::uniform(gate_hidden, gates, gate_hidden, rng),
            b2: Tensor::full(1, gates, S::lit(GATE_BIAS_INIT)),
        }
    }

    pub fn n_gates(&self) -> usize {
        self.w2.cols()
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor<S>)> {
        vec![("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>)> {
        vec![("w1", &mut self.w1), ("b1", &mut self.b1), ("w2", &mut self.w2), ("b2", &mut self.b2)]
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Result<GateNetVars> {
        let mut leaf = |t: &Tensor<S>| tape.leaf(t.clone().with_requires_grad(trainable));
        Ok(GateNetVars { w1: leaf(&self.w1)?, b1: leaf(&self.b1)?, w2: leaf(&self.w2)?, b2: leaf(&self.b2)? })
    }
}

/// Pre-activation logits and probabilities `σ = sigmoid(W₂ relu(W₁h + b₁) + b₂)`.
pub fn gate_probabilities<S: Scalar>(tape: &mut Tape<S>, net: &GateNetVars, h: Var) -> Result<(Var, Var)> {
    let a1 = tape.matmul(h, net.w1)?;
    let a1 = tape.add_row(a1, net.b1)?;
    let hidden = tape.relu(a1)?;
    let a2 = tape.matmul(hidden, net.w2)?;
    let logits = tape.add_row(a2, net.b2)?;
    let probs = tape.sigmoid(logits)?;
    Ok((logits, probs))
}

/// `λ Σ c_k σ_k` summed over the rows of `probs` and multiplied by `weight`.
pub fn kl_penalty_on_tape<S: Scalar>(tape: &mut Tape<S>, probs: Var, prior: &GatePrior, weight: S) -> Result<Var> {
    let costs: Vec<S> = prior.costs.iter().map(|&c| S::lit(c)).collect();
    let c = tape.constant(Tensor::new(vec![costs.len(), 1], costs)?)?;
    let per_row = tape.matmul(probs, c)?;
    let total = tape.sum(per_row)?;
    tape.mul_scalar(total, S::lit(prior.lambda) * weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prior_probabilities() {
        assert_eq!(prior_prob(0.0, 3.0), 1.0);
        assert!((prior_prob(1.0, 2f64.ln()) - 0.5).abs() < 1e-15);
        let prior = GatePrior::uniform(1, 0.01, 1000.0).unwrap();
        assert!((prior.prior_probs()[0] - (-10f64).exp()).abs() < 1e-18);
        assert!((prior.prior_probs()[0] - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn logistic_transform() {
        assert_eq!(logistic_from_uniform(0.5f64), 0.0);
        let e = std::f64::consts::E;
        assert!((logistic_from_uniform(e / (1.0 + e)) - 1.0).abs() < 1e-12);
        assert!(logistic_from_uniform(0.0f64).is_finite());
        assert!(logistic_from_uniform(1.0f64).is_finite());
    }

    #[test]
    fn relaxed_gate_identities() {
        for tau in [0.01, 1.0, 7.0] {
            assert!((relaxed_gate(0.5f64, 0.0, tau).unwrap() - 0.5).abs() < 1e-15);
        }
        for s in [0.1, 0.37, 0.9] {
            assert!((relaxed_gate(s, 0.0f64, 1.0).unwrap() - s).abs() < 1e-12);
        }
        let v = relaxed_gate(0.6f64, 0.0, 0.05).unwrap();
        assert!((v - sigmoid(1.5f64.ln() / 0.05)).abs() < 1e-15);
        assert!((v - 0.9997).abs() < 1e-4);
        assert!(relaxed_gate(0.5f64, 0.0, 0.0).is_err());
        assert!(relaxed_gate(0.5f64, 0.0, -1.0).is_err());
    }

    #[test]
    fn hard_gates() {
        assert_eq!(hard_gate_sampled(0.7f64, 0.0), 1.0);
        assert_eq!(hard_gate_sampled(0.3f64, 0.0), 0.0);
        assert_eq!(hard_gate_deterministic(0.9f64), 1.0);
        assert_eq!(hard_gate_deterministic(0.1f64), 0.0);
        assert_eq!(hard_gate_deterministic(0.5f64), 0.0);
    }

    #[test]
    fn low_temperature_agrees_with_hard_gate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let s: f64 = rng.random_range(0.01..0.99);
            let e: f64 = logistic_from_uniform(rng.random::<f64>());
            if (logit(s) + e).abs() < 1e-3 {
                continue;
            }
            let soft = relaxed_gate(s, e, 0.01).unwrap();
            assert_eq!(f64::from(u8::from(soft > 0.5)), hard_gate_sampled(s, e));
        }
    }

    #[test]
    fn gate_sample_fields_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sample = GateSample::draw(vec![0.2f32, 0.8, 0.5], 0.05, &mut rng).unwrap();
        assert_eq!(sample.hard, hard_gates_sampled(&sample.probs, &sample.noise));
        assert!(sample.relaxed.iter().all(|&z| (0.0..=1.0).contains(&z)));
    }

    #[test]
    fn penalty_examples() {
        let prior = GatePrior::uniform(2, 1.0, 1.0).unwrap();
        assert!((prior.kl_penalty_approx(&[0.2, 0.8]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(prior.kl_penalty_approx(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn exact_kl_examples() {
        let half = GatePrior::new(vec![1.0], 2f64.ln(), 1.0).unwrap();
        assert!(half.kl_exact(&[0.5]).unwrap().abs() < 1e-15);
        let expected = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        assert!((half.kl_exact(&[0.9]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.3681).abs() < 1e-4);
        let free = GatePrior::new(vec![0.0], 1.0, 1.0).unwrap();
        assert!(free.kl_exact(&[0.5]).is_err());
        // p = e^-1e4 underflows; the log-space form still gives σ η + entropy terms.
        let strong = GatePrior::uniform(1, 0.01, 1e6).unwrap();
        let kl = strong.kl_exact(&[0.3]).unwrap();
        let expected = 0.3 * 1e4 + 0.3 * 0.3f64.ln() + 0.7 * 0.7f64.ln();
        assert!((kl - expected).abs() < 1e-9);
    }

    #[test]
    fn groups_validate_partition() {
        assert!(FeatureGroups::new(vec![vec![0, 1], vec![1, 2]], 3).is_err());
        assert!(FeatureGroups::new(vec![vec![0, 1]], 3).is_err());
        assert!(FeatureGroups::new(vec![vec![0, 3]], 3).is_err());
        let g = FeatureGroups::blocks(6, 3).unwrap();
        assert_eq!(g.n_gates(), 2);
        assert!(FeatureGroups::singletons(4).is_identity());
        assert!(!g.is_identity());
    }

    #[test]
    fn apply_gates_examples() {
        let x = Tensor::<f32>::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let singles = FeatureGroups::singletons(3);
        assert_eq!(apply_gates(&x, &Tensor::ones(1, 3), &singles).unwrap(), x);
        let one_group = FeatureGroups::new(vec![vec![0, 1, 2]], 3).unwrap();
        let closed = apply_gates(&x, &Tensor::zeros(1, 1), &one_group).unwrap();
        assert!(closed.data().iter().all(|&v| v == 0.0));
        let half = apply_gates(&x, &Tensor::full(1, 1, 0.5), &one_group).unwrap();
        assert_eq!(half.data(), &[0.5, -1.0, 1.5]);
        assert!(apply_gates(&x, &Tensor::ones(1, 2), &singles).is_err());
    }

    #[test]
    fn gate_net_with_zero_weights() {
        let mut tape = Tape::<f64>::new();
        let mut params = GateNetParams::<f64>::zeros(4, 3, 5);
        let h = tape.constant(Tensor::full(2, 4, 0.3)).unwrap();
        let vars = params.bind(&mut tape, false).unwrap();
        let (_, probs) = gate_probabilities(&mut tape, &vars, h).unwrap();
        assert!(tape.value(probs).data().iter().all(|&p| p == 0.5));

        params.b2 = Tensor::full(1, 5, 2.0);
        let vars = params.bind(&mut tape, false).unwrap();
        let (_, probs) = gate_probabilities(&mut tape, &vars, h).unwrap();
        assert!(tape.value(probs).data().iter().all(|&p| (p - 0.880_797_077_977_882_3).abs() < 1e-12));
    }
}
