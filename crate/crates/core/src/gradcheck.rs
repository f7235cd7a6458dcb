//! Central finite-difference oracle for analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{gru_step, BeliefState, GruParams, OutputMode, StepTargets};
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::gating::{gate_probabilities, FeatureGroups, GateNetParams, GatePrior};
use crate::model::{training_objective, Batch, Model, ModelSpec, ObjectiveConfig, PolicyKind};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Value and analytic gradient (one tensor per parameter) of an objective.
pub type Evaluation = (f64, Vec<Tensor<f64>>);

/// Maximum relative error between the analytic gradient returned by `f`
/// at `params` and central differences with step `eps`:
/// `max |analytic - fd| / max(1e-8, |fd|)` over every coordinate.
pub fn finite_difference_check<F>(mut f: F, params: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: FnMut(&[Tensor<f64>]) -> Result<Evaluation>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let (_, analytic) = f(params)?;
    if analytic.len() != params.len() {
        return Err(Error::invalid("objective returned the wrong number of gradients"));
    }
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, param) in params.iter().enumerate() {
        if analytic[pi].len() != param.len() {
            return Err(Error::shape("finite_difference_check", format!("gradient {pi} has the wrong size")));
        }
        for j in 0..param.len() {
            let base = param.data()[j];
            work[pi].data_mut()[j] = base + eps;
            let (plus, _) = f(&work)?;
            work[pi].data_mut()[j] = base - eps;
            let (minus, _) = f(&work)?;
            work[pi].data_mut()[j] = base;
            let fd = (plus - minus) / (2.0 * eps);
            let rel = (analytic[pi].data()[j] - fd).abs() / fd.abs().max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Step used by [`gradcheck_suite`].
pub const SUITE_STEP: f64 = 1e-5;

/// Named result of one check in the suite.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_err: f64,
}

fn random_tensor<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect())
        .expect("shape matches data")
}

fn leaf_grads(tape: &Tape<f64>, root: crate::tape::Var, vars: &[crate::tape::Var]) -> Result<Evaluation> {
    let g = tape.backward(root)?;
    Ok((tape.value(root).item(), vars.iter().map(|&v| g.get(v)).collect()))
}

/// Dimensions of the full-model check.
pub const FULL_HIDDEN: usize = 8;
pub const FULL_FEATURES: usize = 6;
pub const FULL_STEPS: usize = 5;

/// Checks every parameter gradient of the complete objective (GRU, gate
/// network, head, masked loss and sparsity penalty) along the relaxed
/// Gumbel-Softmax path, with the gate noise held fixed.
pub fn full_model_check(seed: u64, tau: f64, eps: f64) -> Result<f64> {
    let spec = ModelSpec {
        input_size: FULL_FEATURES,
        hidden_size: FULL_HIDDEN,
        gate_hidden: 5,
        outputs: 3,
        mode: OutputMode::Multiclass,
        groups: FeatureGroups::singletons(FULL_FEATURES),
        policy: PolicyKind::Vfds,
        random_p: 0.5,
        alpha: 0.0,
    };
    let base = Model::<f64>::init(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let rows = 2;
    let inputs = (0..FULL_STEPS).map(|_| random_tensor(rows, FULL_FEATURES, 1.5, &mut rng)).collect();
    let targets = (0..FULL_STEPS)
        .map(|t| StepTargets::Classes((0..rows).map(|r| if (t + r) % 4 == 3 { None } else { Some((t + 2 * r) % 3) }).collect()))
        .collect();
    let batch = Batch { inputs, targets };
    let cfg = ObjectiveConfig {
        estimator: EstimatorKind::GumbelSoftmax,
        tau,
        prior: GatePrior::uniform(FULL_FEATURES, 0.05, 100.0)?,
    };
    let params: Vec<Tensor<f64>> = base.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    finite_difference_check(
        |p| {
            let mut model = base.clone();
            model.set_params(p)?;
            let mut tape = Tape::new();
            let mut noise = ChaCha8Rng::seed_from_u64(seed);
            let obj = training_objective(&mut tape, &model, &batch, &cfg, &mut noise)?;
            leaf_grads(&tape, obj.total, &obj.bound.order)
        },
        &params,
        eps,
    )
}

/// The finite-difference suite: primitive ops, losses, the recurrent
/// cell, the gate network and the full objective.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = SUITE_STEP;
    let mut out = Vec::new();

    let ab = vec![random_tensor(3, 4, 1.0, &mut rng), random_tensor(4, 2, 1.0, &mut rng)];
    out.push(CheckResult {
        name: "matmul",
        max_rel_err: finite_difference_check(
            |p| {
                let mut tape = Tape::new();
                let a = tape.param(p[0].clone())?;
                let b = tape.param(p[1].clone())?;
                let c = tape.matmul(a, b)?;
                let s = tape.tanh(c)?;
                let root = tape.sum(s)?;
                leaf_grads(&tape, root, &[a, b])
            },
            &ab,
            eps,
        )?,
    });

    let num = random_tensor(2, 3, 1.0, &mut rng);
    let den = Tensor::new(vec![2, 3], (0..6).map(|_| rng.random_range(0.5..2.0)).collect())?;
    out.push(CheckResult {
        name: "div",
        max_rel_err: finite_difference_check(
            |p| {
                let mut tape = Tape::new();
                let a = tape.param(p[0].clone())?;
                let b = tape.param(p[1].clone())?;
                let c = tape.div(a, b)?;
                let root = tape.sum(c)?;
                leaf_grads(&tape, root, &[a, b])
            },
            &[num, den],
            eps,
        )?,
    });

    out.push(CheckResult {
        name: "sigmoid/tanh/softmax",
        max_rel_err: finite_difference_check(
            |p| {
                let mut tape = Tape::new();
                let x = tape.param(p[0].clone())?;
                let s = tape.sigmoid(x)?;
                let t = tape.tanh(x)?;
                let m = tape.mul(s, t)?;
                let w = tape.softmax_rows(m)?;
                let y = tape.mul(w, x)?;
                let root = tape.sum(y)?;
                leaf_grads(&tape, root, &[x])
            },
            &[random_tensor(3, 4, 2.0, &mut rng)],
            eps,
        )?,
    });

    out.push(CheckResult {
        name: "softmax cross-entropy",
        max_rel_err: finite_difference_check(
            |p| {
                let mut tape = Tape::new();
                let x = tape.param(p[0].clone())?;
                let root = tape.softmax_xent(x, &[Some(0), None, Some(3)], 0.5)?;
                leaf_grads(&tape, root, &[x])
            },
            &[random_tensor(3, 4, 2.0, &mut rng)],
            eps,
        )?,
    });

    out.push(CheckResult {
        name: "binary cross-entropy",
        max_rel_err: finite_difference_check(
            |p| {
                let mut tape = Tape::new();
                let x = tape.param(p[0].clone())?;
                let root = tape.binary_xent(x, &[Some(1.0), None, Some(0.0), Some(1.0)], 0.25)?;
                leaf_grads(&tape, root, &[x])
            },
            &[random_tensor(2, 2, 2.0, &mut rng)],
            eps,
        )?,
    });

    let gru = GruParams::<f64>::init(3, 4, &mut rng);
    let mut gru_params: Vec<Tensor<f64>> = gru.named().into_iter().map(|(_, t)| t.clone()).collect();
    gru_params.push(random_tensor(2, 4, 0.8, &mut rng));
    let x = random_tensor(2, 3, 1.0, &mut rng);
    out.push(CheckResult {
        name: "gru step",
        max_rel_err: finite_difference_check(
            |p| {
                let mut cell = gru.clone();
                for ((_, dst), src) in cell.named_mut().into_iter().zip(p) {
                    *dst = src.clone();
                }
                let mut tape = Tape::new();
                let vars = cell.bind(&mut tape, true)?;
                let h = tape.param(p[9].clone())?;
                let xv = tape.constant(x.clone())?;
                let next = gru_step(&mut tape, &vars, &BeliefState { h, t: 0 }, xv)?;
                let root = tape.sum(next.h)?;
                let order = [
                    vars.w_update, vars.w_reset, vars.w_candidate, vars.u_update, vars.u_reset, vars.u_candidate,
                    vars.b_update, vars.b_reset, vars.b_candidate, h,
                ];
                leaf_grads(&tape, root, &order)
            },
            &gru_params,
            eps,
        )?,
    });

    let net = GateNetParams::<f64>::init(4, 3, 5, &mut rng);
    let h = random_tensor(2, 4, 1.0, &mut rng);
    let net_params: Vec<Tensor<f64>> = net.named().into_iter().map(|(_, t)| t.clone()).collect();
    out.push(CheckResult {
        name: "gate network",
        max_rel_err: finite_difference_check(
            |p| {
                let mut n = net.clone();
                for ((_, dst), src) in n.named_mut().into_iter().zip(p) {
                    *dst = src.clone();
                }
                let mut tape = Tape::new();
                let vars = n.bind(&mut tape, true)?;
                let hv = tape.constant(h.clone())?;
                let (_, probs) = gate_probabilities(&mut tape, &vars, hv)?;
                let sq = tape.mul(probs, probs)?;
                let root = tape.sum(sq)?;
                leaf_grads(&tape, root, &[vars.w1, vars.b1, vars.w2, vars.b2])
            },
            &net_params,
            eps,
        )?,
    });

    out.push(CheckResult { name: "full model (gumbel-softmax)", max_rel_err: full_model_check(seed, 0.5, eps)? });
    Ok(out)
}


#[cfg(test)]
mod suite_tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for r in gradcheck_suite(0).unwrap() {
            assert!(r.max_rel_err < 1e-3, "{}: {}", r.name, r.max_rel_err);
        }
    }
}
