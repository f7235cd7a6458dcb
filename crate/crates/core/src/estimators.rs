//! Training-time gate estimators.
//!
//! | kind | forward | gradient into the gate logits |
//! |------|---------|--------------------------------|
//! | Gumbel-Softmax | relaxed `z̃` | exact gradient of `z̃` |
//! | Straight-Through | sampled hard `z` | identity to `σ` |
//! | ARM | sampled hard `z` | per-step ARM estimate |
//! | ST-ARM | sampled hard `z` | ARM estimate plus identity pass-through |
//! | ℓ1-relaxed | continuous `σ` | exact gradient of `σ` |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::hard_gates_sampled;
use crate::tape::{Tape, Var};
use crate::tensor::{sigmoid, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[default]
    #[serde(rename = "gs")]
    GumbelSoftmax,
    #[serde(rename = "st")]
    StraightThrough,
    #[serde(rename = "arm")]
    Arm,
    #[serde(rename = "st-arm")]
    StArm,
    #[serde(rename = "l1")]
    L1Relaxed,
}

/// Which noise a training step must draw for a given estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    /// Standard-logistic `ε`.
    Logistic,
    /// `u ~ Unif(0, 1)`, shared by both antithetic ARM evaluations.
    Uniform,
    None,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::L1Relaxed,
        EstimatorKind::StraightThrough,
        EstimatorKind::Arm,
        EstimatorKind::StArm,
        EstimatorKind::GumbelSoftmax,
    ];

    pub fn noise(self) -> NoiseKind {
        match self {
            EstimatorKind::GumbelSoftmax | EstimatorKind::StraightThrough => NoiseKind::Logistic,
            EstimatorKind::Arm | EstimatorKind::StArm => NoiseKind::Uniform,
            EstimatorKind::L1Relaxed => NoiseKind::None,
        }
    }

    pub fn is_arm(self) -> bool {
        matches!(self, EstimatorKind::Arm | EstimatorKind::StArm)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::GumbelSoftmax => "gs",
            EstimatorKind::StraightThrough => "st",
            EstimatorKind::Arm => "arm",
            EstimatorKind::StArm => "st-arm",
            EstimatorKind::L1Relaxed => "l1",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gs" | "gumbel-softmax" => Ok(EstimatorKind::GumbelSoftmax),
            "st" | "straight-through" => Ok(EstimatorKind::StraightThrough),
            "arm" => Ok(EstimatorKind::Arm),
            "st-arm" => Ok(EstimatorKind::StArm),
            "l1" => Ok(EstimatorKind::L1Relaxed),
            other => Err(Error::invalid(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Records the training-time gates for one step.
///
/// `logits` and `probs` are the pre-activation and sigmoid of the gate
/// network (`probs = sigmoid(logits)`); `noise` is interpreted according to
/// [`EstimatorKind::noise`] and ignored for ℓ1. ARM kinds return a surrogate
/// node with a zero estimate that the caller fills in with
/// [`Tape::set_surrogate_grad`] once the antithetic evaluations are known.
pub fn training_gates<S: Scalar>(
    tape: &mut Tape<S>,
    kind: EstimatorKind,
    logits: Var,
    probs: Var,
    noise: Option<&Tensor<S>>,
    tau: S,
) -> Result<Var> {
    let need = |noise: Option<&Tensor<S>>| {
        noise.cloned().ok_or_else(|| Error::invalid(format!("estimator {kind} needs a noise sample")))
    };
    match kind {
        EstimatorKind::GumbelSoftmax => {
            if !(tau > S::zero()) {
                return Err(Error::invalid("temperature must be positive"));
            }
            let eps = tape.constant(need(noise)?)?;
            let shifted = tape.add(logits, eps)?;
            let scaled = tape.mul_scalar(shifted, S::one() / tau)?;
            tape.sigmoid(scaled)
        }
        EstimatorKind::StraightThrough => {
            let eps = need(noise)?;
            let sigma = tape.value(probs);
            let hard = Tensor::new(sigma.shape().to_vec(), hard_gates_sampled(sigma.data(), eps.data()))?;
            tape.straight_through(probs, hard)
        }
        EstimatorKind::Arm | EstimatorKind::StArm => {
            let u = need(noise)?;
            let (_, second) = arm_pair(tape.value(logits).data(), u.data());
            let value = Tensor::new(tape.value(logits).shape().to_vec(), second)?;
            let zeros = vec![S::zero(); u.len()];
            tape.surrogate(logits, value, zeros, kind == EstimatorKind::StArm)
        }
        EstimatorKind::L1Relaxed => Ok(probs),
    }
}

/// The antithetic configurations `(1[u > σ(-φ)], 1[u < σ(φ)])`. The second
/// is a Bernoulli(σ(φ)) draw and is the one used in the forward pass.
pub fn arm_pair<S: Scalar>(logits: &[S], u: &[S]) -> (Vec<S>, Vec<S>) {
    let ind = |b: bool| if b { S::one() } else { S::zero() };
    let first = logits.iter().zip(u).map(|(&phi, &u)| ind(u > sigmoid(-phi))).collect();
    let second = logits.iter().zip(u).map(|(&phi, &u)| ind(u < sigmoid(phi))).collect();
    (first, second)
}

/// `g_k = (f_first - f_second)(u_k - 1/2)`.
pub fn arm_combine<S: Scalar>(f_first: S, f_second: S, u: &[S]) -> Vec<S> {
    let diff = f_first - f_second;
    u.iter().map(|&uk| diff * (uk - S::lit(0.5))).collect()
}

/// Single-sample ARM estimate of `∂/∂φ E_{z ~ Bern(σ(φ))}[loss(z)]`.
pub fn arm_step_grad<S: Scalar>(logits: &[S], u: &[S], mut loss_eval: impl FnMut(&[S]) -> S) -> Vec<S> {
    let (first, second) = arm_pair(logits, u);
    let f_first = loss_eval(&first);
    let f_second = loss_eval(&second);
    arm_combine(f_first, f_second, u)
}

/// `λ Σ_k c_k σ_k` on continuous soft gates.
pub fn l1_penalty(soft_gates: &[f64], costs: &[f64], lambda: f64) -> Result<f64> {
    if soft_gates.len() != costs.len() {
        return Err(Error::shape("l1_penalty", "one cost per gate required"));
    }
    if soft_gates.iter().any(|&s| s < 0.0) {
        return Err(Error::invalid("soft gates must be nonnegative"));
    }
    Ok(lambda * soft_gates.iter().zip(costs).map(|(s, c)| s * c).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::logit;

    fn sigma_leaf(tape: &mut Tape<f64>, probs: &[f64]) -> (Var, Var) {
        let p = tape.param(Tensor::row(probs)).unwrap();
        let l = tape.logit(p).unwrap();
        (l, p)
    }

    #[test]
    fn parse_round_trip() {
        for kind in EstimatorKind::ALL {
            assert_eq!(kind.as_str().parse::<EstimatorKind>().unwrap(), kind);
        }
        assert!("rebar".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn gumbel_softmax_degenerates_to_sigma() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::row(&[-1.3, 0.2, 2.0])).unwrap();
        let p = tape.sigmoid(a).unwrap();
        let eps = Tensor::zeros(1, 3);
        let z = training_gates(&mut tape, EstimatorKind::GumbelSoftmax, a, p, Some(&eps), 1.0).unwrap();
        assert_eq!(tape.value(z), tape.value(p));
        let s = tape.sum(z).unwrap();
        let g = tape.backward(s).unwrap().get(a);
        for (gv, pv) in g.data().iter().zip(tape.value(p).data()) {
            assert!((gv - pv * (1.0 - pv)).abs() < 1e-15);
        }
    }

    #[test]
    fn straight_through_is_binary_with_unit_jacobian() {
        let mut tape = Tape::<f64>::new();
        let (l, p) = sigma_leaf(&mut tape, &[0.2, 0.5, 0.9, 0.6]);
        let eps = Tensor::row(&[0.3, -0.1, -3.0, 0.0]);
        let z = training_gates(&mut tape, EstimatorKind::StraightThrough, l, p, Some(&eps), 0.05).unwrap();
        let expected = hard_gates_sampled(tape.value(p).data(), eps.data());
        assert_eq!(tape.value(z).data(), expected.as_slice());
        let s = tape.sum(z).unwrap();
        let g = tape.backward(s).unwrap().get(p);
        assert_eq!(g.data().iter().sum::<f64>(), 4.0);
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn l1_passes_sigma_without_noise() {
        let mut tape = Tape::<f64>::new();
        let (l, p) = sigma_leaf(&mut tape, &[0.2, 0.8]);
        let z = training_gates(&mut tape, EstimatorKind::L1Relaxed, l, p, None, 0.05).unwrap();
        assert_eq!(tape.value(z).data(), &[0.2, 0.8]);
    }

    #[test]
    fn missing_noise_is_error() {
        let mut tape = Tape::<f64>::new();
        let (l, p) = sigma_leaf(&mut tape, &[0.2, 0.8]);
        assert!(training_gates(&mut tape, EstimatorKind::GumbelSoftmax, l, p, None, 0.05).is_err());
        assert!(training_gates(&mut tape, EstimatorKind::Arm, l, p, None, 0.05).is_err());
    }

    #[test]
    fn arm_forward_is_binary() {
        let mut tape = Tape::<f64>::new();
        let (l, p) = sigma_leaf(&mut tape, &[0.3, 0.7]);
        let u = Tensor::row(&[0.5, 0.5]);
        let z = training_gates(&mut tape, EstimatorKind::StArm, l, p, Some(&u), 0.05).unwrap();
        assert_eq!(tape.value(z).data(), &[0.0, 1.0]);
    }

    #[test]
    fn arm_constant_loss_gives_zero() {
        let g = arm_step_grad(&[0.3f64, -1.0], &[0.2, 0.9], |_| 4.2);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn arm_single_gate_mean_is_quarter() {
        // E[g] = ∫ |u - 1/2| du = 1/4 for loss(z) = z at φ = 0.
        let n = 200_000;
        let mean: f64 = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                arm_step_grad(&[0.0f64], &[u], |z| z[0])[0]
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.25).abs() < 1e-6, "{mean}");
    }

    #[test]
    fn arm_pair_second_matches_bernoulli_threshold() {
        let (first, second) = arm_pair(&[logit(0.3f64)], &[0.25]);
        assert_eq!(second, vec![1.0]);
        assert_eq!(first, vec![0.0]);
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_penalty(&[0.0, 0.0], &[1.0, 1.0], 3.0).unwrap(), 0.0);
        assert_eq!(l1_penalty(&[0.5], &[1.0], 2.0).unwrap(), 1.0);
        assert!(l1_penalty(&[-0.1], &[1.0], 1.0).is_err());
    }

    #[test]
    fn l1_subgradient_is_lambda_cost() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::row(&[0.4, -0.3])).unwrap();
        let p = tape.sigmoid(a).unwrap();
        let prior = crate::gating::GatePrior::new(vec![1.0, 3.0], 2.0, 1.0).unwrap();
        let pen = crate::gating::kl_penalty_on_tape(&mut tape, p, &prior, 1.0).unwrap();
        let g = tape.backward(pen).unwrap().get(p);
        assert_eq!(g.data(), &[2.0, 6.0]);
    }
}
