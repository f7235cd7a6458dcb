//! Non-dynamic and heuristic selection policies used for comparison:
//! a static learned subset, iid random gates and thresholded attention.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gating::{hard_gates_deterministic, relaxed_gates, GATE_BIAS_INIT};
use crate::tape::{Tape, Var};
use crate::tensor::{sigmoid, Scalar, Tensor};

/// Time- and input-invariant gate logits.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticGateParams<S = f32> {
    pub logits: Tensor<S>,
}

impl<S: Scalar> StaticGateParams<S> {
    pub fn new(gates: usize) -> Self {
        Self { logits: Tensor::full(1, gates, S::lit(GATE_BIAS_INIT)) }
    }

    pub fn probs(&self) -> Vec<S> {
        self.logits.data().iter().map(|&l| sigmoid(l)).collect()
    }
}

/// Relaxed static gates for one step: the VFDS relaxation with `σ = sigmoid(ℓ)`.
pub fn static_gates<S: Scalar>(params: &StaticGateParams<S>, noise: &[S], tau: S) -> Result<Vec<S>> {
    relaxed_gates(&params.probs(), noise, tau)
}

/// Test-time static gates `1[sigmoid(ℓ) > 1/2]`.
pub fn static_test_gates<S: Scalar>(params: &StaticGateParams<S>) -> Vec<S> {
    hard_gates_deterministic(&params.probs())
}

/// iid Bernoulli(p) gates, `rows × cols`.
pub fn random_gates<S: Scalar, R: Rng + ?Sized>(p: f64, rows: usize, cols: usize, rng: &mut R) -> Result<Tensor<S>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("random gate probability {p} outside [0, 1]")));
    }
    let data = (0..rows * cols).map(|_| if rng.random::<f64>() < p { S::one() } else { S::zero() }).collect();
    Tensor::new(vec![rows, cols], data)
}

/// Linear scores over gates from the belief state, softmax-normalised.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<S = f32> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub weight: Var,
    pub bias: Var,
}

impl<S: Scalar> AttentionParams<S> {
    pub fn init<R: Rng + ?Sized>(hidden: usize, gates: usize, alpha: f64, rng: &mut R) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            weight: crate::init::uniform(hidden, gates, hidden, rng),
            bias: crate::init::uniform(1, gates, hidden, rng),
            alpha,
        })
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Result<AttentionVars> {
        Ok(AttentionVars {
            weight: tape.leaf(self.weight.clone().with_requires_grad(trainable))?,
            bias: tape.leaf(self.bias.clone().with_requires_grad(trainable))?,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid(format!("attention threshold {alpha} outside [0, 1)")))
    }
}

/// `softmax(h W + b)` over gates.
pub fn attention_weights<S: Scalar>(tape: &mut Tape<S>, vars: &AttentionVars, h: Var) -> Result<Var> {
    let scores = tape.matmul(h, vars.weight)?;
    let scores = tape.add_row(scores, vars.bias)?;
    tape.softmax_rows(scores)
}

/// Thresholded attention: features with weight `> α` are kept and scaled
/// by `1 - α`, the rest are zeroed. Returns `(multipliers, selected)`.
pub fn attention_select<S: Scalar>(weights: &Tensor<S>, alpha: f64) -> Result<(Tensor<S>, Tensor<S>)> {
    check_alpha(alpha)?;
    let a = S::lit(alpha);
    let keep = S::one() - a;
    let selected = weights.map(|w| if w > a { S::one() } else { S::zero() });
    let multipliers = selected.map(|s| s * keep);
    Ok((multipliers, selected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn very_negative_static_logit_closes() {
        let params = StaticGateParams { logits: Tensor::<f64>::row(&[-10.0]) };
        assert!((params.probs()[0] - 4.5398e-5).abs() < 1e-8);
        assert_eq!(static_test_gates(&params), vec![0.0]);
    }

    #[test]
    fn static_relaxation_matches_vfds_relaxation() {
        let params = StaticGateParams { logits: Tensor::<f64>::row(&[0.4, -1.0]) };
        let z = static_gates(&params, &[0.1, 0.2], 0.5).unwrap();
        let expected = relaxed_gates(&params.probs(), &[0.1, 0.2], 0.5).unwrap();
        assert_eq!(z, expected);
    }

    #[test]
    fn random_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zeros = random_gates::<f32, _>(0.0, 5, 4, &mut rng).unwrap();
        assert!(zeros.data().iter().all(|&v| v == 0.0));
        let ones = random_gates::<f32, _>(1.0, 5, 4, &mut rng).unwrap();
        assert!(ones.data().iter().all(|&v| v == 1.0));
        assert!(random_gates::<f32, _>(1.5, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn alpha_zero_selects_everything() {
        let w = Tensor::<f64>::row(&[0.97, 0.01, 0.01, 0.01]);
        let (mult, sel) = attention_select(&w, 0.0).unwrap();
        assert!(sel.data().iter().all(|&s| s == 1.0));
        assert!(mult.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn uniform_weights_below_threshold_select_nothing() {
        let w = Tensor::<f64>::full(1, 4, 0.25);
        let (mult, sel) = attention_select(&w, 0.3).unwrap();
        assert!(sel.data().iter().all(|&s| s == 0.0));
        assert!(mult.data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn kept_features_scaled() {
        let w = Tensor::<f64>::row(&[0.6, 0.3, 0.1]);
        let (mult, sel) = attention_select(&w, 0.5).unwrap();
        assert_eq!(sel.data(), &[1.0, 0.0, 0.0]);
        assert_eq!(mult.data(), &[0.5, 0.0, 0.0]);
        assert!(attention_select(&w, 1.0).is_err());
    }

    #[test]
    fn threshold_sweep_is_monotone() {
        let w = Tensor::<f64>::row(&[0.9992, 0.0004, 0.0002, 0.0002]);
        let mut last = usize::MAX;
        for alpha in [0.5, 0.9, 0.95, 0.99, 0.995, 0.999] {
            let (_, sel) = attention_select(&w, alpha).unwrap();
            let count = sel.data().iter().filter(|&&s| s == 1.0).count();
            assert!(count <= last);
            last = count;
        }
    }
}
