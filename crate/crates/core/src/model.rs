//! A complete selector-plus-classifier: GRU backbone, prediction head and
//! one gate policy, with the training objective and test-time forward pass.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{
    decode, masked_loss_weight, masked_sequence_loss, row_losses, unroll, BackboneVars, BeliefState, GateOutput,
    GatePolicy, GruParams, OutputMode, PredictionHead, StepTargets, StepView, Trace,
};
use crate::baselines::{attention_select, attention_weights, random_gates, AttentionParams, AttentionVars, StaticGateParams};
use crate::error::{Error, Result};
use crate::estimators::{arm_combine, arm_pair, training_gates, EstimatorKind, NoiseKind};
use crate::gating::{
    apply_gates_on_tape, gate_probabilities, hard_gates_deterministic, kl_penalty_on_tape, logistic_from_uniform,
    FeatureGroups, GateNetParams, GateNetVars, GatePrior,
};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Vfds,
    None,
    Static,
    Random,
    Attention,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Vfds => "vfds",
            PolicyKind::None => "none",
            PolicyKind::Static => "static",
            PolicyKind::Random => "random",
            PolicyKind::Attention => "attention",
        }
    }

    /// Policies whose gates come from Bernoulli probabilities and carry the KL penalty.
    pub fn is_bernoulli(self) -> bool {
        matches!(self, PolicyKind::Vfds | PolicyKind::Static)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vfds" => Ok(PolicyKind::Vfds),
            "none" => Ok(PolicyKind::None),
            "static" => Ok(PolicyKind::Static),
            "random" => Ok(PolicyKind::Random),
            "attention" => Ok(PolicyKind::Attention),
            other => Err(Error::invalid(format!("unknown policy {other:?}"))),
        }
    }
}

/// Architecture of a [`Model`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_size: usize,
    pub hidden_size: usize,
    pub gate_hidden: usize,
    pub outputs: usize,
    pub mode: OutputMode,
    pub groups: FeatureGroups,
    pub policy: PolicyKind,
    pub random_p: f64,
    pub alpha: f64,
}

impl ModelSpec {
    pub fn n_gates(&self) -> usize {
        self.groups.n_gates()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PolicyParams<S = f32> {
    Vfds(GateNetParams<S>),
    None,
    Static(StaticGateParams<S>),
    Random,
    Attention(AttentionParams<S>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<S = f32> {
    pub spec: ModelSpec,
    pub gru: GruParams<S>,
    pub head: PredictionHead<S>,
    pub policy: PolicyParams<S>,
}

/// Stream offsets so that each parameter group draws from its own RNG.
const BACKBONE_STREAM: u64 = 0x0b0b;
const POLICY_STREAM: u64 = 0x9a7e;

impl<S: Scalar> Model<S> {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        if spec.groups.n_features() != spec.input_size {
            return Err(Error::invalid("feature groups do not cover the input size"));
        }
        let mut backbone_rng = ChaCha8Rng::seed_from_u64(seed ^ BACKBONE_STREAM);
        let gru = GruParams::init(spec.input_size, spec.hidden_size, &mut backbone_rng);
        let head = PredictionHead::init(spec.hidden_size, spec.outputs, spec.mode, &mut backbone_rng);
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seed ^ POLICY_STREAM);
        let g = spec.n_gates();
        let policy = match spec.policy {
            PolicyKind::Vfds => PolicyParams::Vfds(GateNetParams::init(spec.hidden_size, spec.gate_hidden, g, &mut policy_rng)),
            PolicyKind::None => PolicyParams::None,
            PolicyKind::Static => PolicyParams::Static(StaticGateParams::new(g)),
            PolicyKind::Random => {
                if !(0.0..=1.0).contains(&spec.random_p) {
                    return Err(Error::invalid("random_p outside [0, 1]"));
                }
                PolicyParams::Random
            }
            PolicyKind::Attention => {
                PolicyParams::Attention(AttentionParams::init(spec.hidden_size, g, spec.alpha, &mut policy_rng)?)
            }
        };
        Ok(Self { spec, gru, head, policy })
    }

    /// All trainable tensors with stable, dotted names.
    pub fn named_params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<(String, &Tensor<S>)> = Vec::new();
        out.extend(self.gru.named().into_iter().map(|(n, t)| (format!("gru.{n}"), t)));
        out.extend(self.head.named().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        match &self.policy {
            PolicyParams::Vfds(net) => out.extend(net.named().into_iter().map(|(n, t)| (format!("gate.{n}"), t))),
            PolicyParams::Static(s) => out.push(("static.logits".into(), &s.logits)),
            PolicyParams::Attention(a) => {
                out.push(("attention.weight".into(), &a.weight));
                out.push(("attention.bias".into(), &a.bias));
            }
            PolicyParams::None | PolicyParams::Random => {}
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<(String, &mut Tensor<S>)> = Vec::new();
        out.extend(self.gru.named_mut().into_iter().map(|(n, t)| (format!("gru.{n}"), t)));
        out.extend(self.head.named_mut().into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        match &mut self.policy {
            PolicyParams::Vfds(net) => out.extend(net.named_mut().into_iter().map(|(n, t)| (format!("gate.{n}"), t))),
            PolicyParams::Static(s) => out.push(("static.logits".into(), &mut s.logits)),
            PolicyParams::Attention(a) => {
                out.push(("attention.weight".into(), &mut a.weight));
                out.push(("attention.bias".into(), &mut a.bias));
            }
            PolicyParams::None | PolicyParams::Random => {}
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let mut out = Model::<T>::init(self.spec.clone(), 0).expect("spec already validated");
        for ((_, dst), (_, src)) in out.named_params_mut().into_iter().zip(self.named_params()) {
            *dst = src.cast();
        }
        out
    }

    /// Overwrites parameters in [`Model::named_params`] order.
    pub fn set_params(&mut self, values: &[Tensor<S>]) -> Result<()> {
        let mut slots = self.named_params_mut();
        if slots.len() != values.len() {
            return Err(Error::invalid(format!("expected {} tensors, got {}", slots.len(), values.len())));
        }
        for ((name, dst), src) in slots.iter_mut().zip(values) {
            if !dst.same_shape(src) {
                return Err(Error::shape("set_params", format!("{name}: {:?} vs {:?}", dst.shape(), src.shape())));
            }
            **dst = src.clone().with_requires_grad(false);
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Result<BoundModel> {
        let gru = self.gru.bind(tape, trainable)?;
        let head = self.head.bind(tape, trainable)?;
        let mut order = vec![
            gru.w_update, gru.w_reset, gru.w_candidate, gru.u_update, gru.u_reset, gru.u_candidate, gru.b_update,
            gru.b_reset, gru.b_candidate, head.weight, head.bias,
        ];
        let policy = match &self.policy {
            PolicyParams::Vfds(net) => {
                let v = net.bind(tape, trainable)?;
                order.extend([v.w1, v.b1, v.w2, v.b2]);
                BoundPolicy::Vfds(v)
            }
            PolicyParams::Static(s) => {
                let v = tape.leaf(s.logits.clone().with_requires_grad(trainable))?;
                order.push(v);
                BoundPolicy::Static(v)
            }
            PolicyParams::Attention(a) => {
                let v = a.bind(tape, trainable)?;
                order.extend([v.weight, v.bias]);
                BoundPolicy::Attention(v, a.alpha)
            }
            PolicyParams::None => BoundPolicy::None,
            PolicyParams::Random => BoundPolicy::Random(self.spec.random_p),
        };
        let expansion = if self.spec.groups.is_identity() {
            None
        } else {
            Some(tape.constant(self.spec.groups.expansion())?)
        };
        Ok(BoundModel { backbone: BackboneVars { gru, head }, policy, expansion, order })
    }
}

#[derive(Clone, Copy, Debug)]
pub enum BoundPolicy {
    Vfds(GateNetVars),
    None,
    Static(Var),
    Random(f64),
    Attention(AttentionVars, f64),
}

#[derive(Clone, Debug)]
pub struct BoundModel {
    pub backbone: BackboneVars,
    pub policy: BoundPolicy,
    pub expansion: Option<Var>,
    /// Parameter leaves in [`Model::named_params`] order.
    pub order: Vec<Var>,
}

/// A batch of equal-length sequences laid out per time step.
#[derive(Clone, Debug)]
pub struct Batch<S = f32> {
    /// One `B × K` tensor per step.
    pub inputs: Vec<Tensor<S>>,
    pub targets: Vec<StepTargets>,
}

impl<S: Scalar> Batch<S> {
    pub fn rows(&self) -> usize {
        self.inputs.first().map_or(0, Tensor::rows)
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn cast<T: Scalar>(&self) -> Batch<T> {
        Batch { inputs: self.inputs.iter().map(Tensor::cast).collect(), targets: self.targets.clone() }
    }
}

/// Training hyperparameters that shape the objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub estimator: EstimatorKind,
    pub tau: f64,
    pub prior: GatePrior,
}

fn indicator<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    t.map(|v| if v > S::lit(0.5) { S::one() } else { S::zero() })
}

fn draw_noise<S: Scalar, R: Rng + ?Sized>(kind: NoiseKind, rows: usize, cols: usize, rng: &mut R) -> Result<Option<Tensor<S>>> {
    let n = rows * cols;
    let data: Vec<S> = match kind {
        NoiseKind::None => return Ok(None),
        NoiseKind::Uniform => (0..n).map(|_| S::lit(rng.random::<f64>())).collect(),
        NoiseKind::Logistic => (0..n).map(|_| logistic_from_uniform(S::lit(rng.random::<f64>()))).collect(),
    };
    Ok(Some(Tensor::new(vec![rows, cols], data)?))
}

struct PendingArm<S> {
    node: Var,
    logits: Tensor<S>,
    u: Tensor<S>,
}

/// Stochastic training-time gates for every policy kind.
pub struct TrainingPolicy<'a, S: Scalar, R: Rng + ?Sized> {
    model: &'a Model<S>,
    bound: BoundPolicy,
    estimator: EstimatorKind,
    tau: S,
    rng: &'a mut R,
    loss_weight: S,
    pending: Option<PendingArm<S>>,
    /// σ nodes per step, for the sparsity penalty.
    pub probs: Vec<Var>,
}

impl<'a, S: Scalar, R: Rng + ?Sized> TrainingPolicy<'a, S, R> {
    pub fn new(model: &'a Model<S>, bound: BoundPolicy, estimator: EstimatorKind, tau: f64, loss_weight: f64, rng: &'a mut R) -> Self {
        Self {
            model,
            bound,
            estimator,
            tau: S::lit(tau),
            rng,
            loss_weight: S::lit(loss_weight),
            pending: None,
            probs: Vec::new(),
        }
    }

    fn bernoulli_gates(&mut self, tape: &mut Tape<S>, logits: Var, probs: Var) -> Result<GateOutput<S>> {
        let (rows, cols) = (tape.value(logits).rows(), tape.value(logits).cols());
        let noise = draw_noise(self.estimator.noise(), rows, cols, self.rng)?;
        let gates = training_gates(tape, self.estimator, logits, probs, noise.as_ref(), self.tau)?;
        if self.estimator.is_arm() {
            self.pending = Some(PendingArm {
                node: gates,
                logits: tape.value(logits).clone(),
                u: noise.expect("ARM draws uniform noise"),
            });
        }
        self.probs.push(probs);
        Ok(GateOutput { gates: Some(gates), probs: Some(probs), selected: indicator(tape.value(gates)) })
    }
}

impl<S: Scalar, R: Rng + ?Sized> GatePolicy<S> for TrainingPolicy<'_, S, R> {
    fn gates(&mut self, tape: &mut Tape<S>, prev: &BeliefState) -> Result<GateOutput<S>> {
        let rows = tape.value(prev.h).rows();
        let g = self.model.spec.n_gates();
        match self.bound {
            BoundPolicy::Vfds(net) => {
                let (logits, probs) = gate_probabilities(tape, &net, prev.h)?;
                self.bernoulli_gates(tape, logits, probs)
            }
            BoundPolicy::Static(l) => {
                let logits = tape.repeat_rows(l, rows)?;
                let probs = tape.sigmoid(logits)?;
                self.bernoulli_gates(tape, logits, probs)
            }
            BoundPolicy::None => Ok(GateOutput { gates: None, probs: None, selected: Tensor::ones(rows, g) }),
            BoundPolicy::Random(p) => {
                let z = random_gates(p, rows, g, self.rng)?;
                let selected = z.clone();
                Ok(GateOutput { gates: Some(tape.constant(z)?), probs: None, selected })
            }
            BoundPolicy::Attention(vars, alpha) => {
                let w = attention_weights(tape, &vars, prev.h)?;
                let (_, selected) = attention_select(tape.value(w), alpha)?;
                let soft = tape.mul_scalar(w, S::lit(g as f64))?;
                Ok(GateOutput { gates: Some(soft), probs: None, selected })
            }
        }
    }

    fn after_step(&mut self, tape: &mut Tape<S>, step: &StepView<'_, S>) -> Result<()> {
        let Some(pending) = self.pending.take() else {
            return Ok(());
        };
        let rows = pending.logits.rows();
        let g = pending.logits.cols();
        let mut first = Tensor::zeros(rows, g);
        let mut second = Tensor::zeros(rows, g);
        for r in 0..rows {
            let (a, b) = arm_pair(pending.logits.row_slice(r), pending.u.row_slice(r));
            for c in 0..g {
                first.set(r, c, a[c]);
                second.set(r, c, b[c]);
            }
        }
        let h_prev = tape.value(step.prev.h).clone();
        let f_first = step_row_losses(self.model, &h_prev, step.input, &first, step.targets, self.loss_weight)?;
        let f_second = step_row_losses(self.model, &h_prev, step.input, &second, step.targets, self.loss_weight)?;
        let mut grad = Vec::with_capacity(rows * g);
        for r in 0..rows {
            grad.extend(arm_combine(f_first[r], f_second[r], pending.u.row_slice(r)));
        }
        tape.set_surrogate_grad(pending.node, grad)
    }
}

/// Per-row step loss for fixed gates, evaluated off the main tape.
fn step_row_losses<S: Scalar>(
    model: &Model<S>,
    h_prev: &Tensor<S>,
    x: &Tensor<S>,
    gates: &Tensor<S>,
    targets: &StepTargets,
    weight: S,
) -> Result<Vec<S>> {
    let mut scratch = Tape::new();
    let gru = model.gru.bind(&mut scratch, false)?;
    let head = model.head.bind(&mut scratch, false)?;
    let expansion = if model.spec.groups.is_identity() {
        None
    } else {
        Some(scratch.constant(model.spec.groups.expansion())?)
    };
    let h = scratch.constant(h_prev.clone())?;
    let xv = scratch.constant(x.clone())?;
    let z = scratch.constant(gates.clone())?;
    let gated = apply_gates_on_tape(&mut scratch, xv, z, expansion)?;
    let next = crate::backbone::gru_step(&mut scratch, &gru, &BeliefState { h, t: 0 }, gated)?;
    let logits = crate::backbone::predict(&mut scratch, &head, &next)?;
    row_losses(scratch.value(logits), targets, weight)
}

/// Deterministic test-time gates.
pub struct TestPolicy<'a, R: Rng + ?Sized> {
    bound: BoundPolicy,
    n_gates: usize,
    rng: &'a mut R,
}

impl<'a, R: Rng + ?Sized> TestPolicy<'a, R> {
    pub fn new(bound: BoundPolicy, n_gates: usize, rng: &'a mut R) -> Self {
        Self { bound, n_gates, rng }
    }
}

impl<S: Scalar, R: Rng + ?Sized> GatePolicy<S> for TestPolicy<'_, R> {
    fn gates(&mut self, tape: &mut Tape<S>, prev: &BeliefState) -> Result<GateOutput<S>> {
        let rows = tape.value(prev.h).rows();
        let g = self.n_gates;
        let from_probs = |tape: &mut Tape<S>, probs: Var| -> Result<GateOutput<S>> {
            let pv = tape.value(probs);
            let z = Tensor::new(pv.shape().to_vec(), hard_gates_deterministic(pv.data()))?;
            let selected = z.clone();
            Ok(GateOutput { gates: Some(tape.constant(z)?), probs: Some(probs), selected })
        };
        match self.bound {
            BoundPolicy::Vfds(net) => {
                let (_, probs) = gate_probabilities(tape, &net, prev.h)?;
                from_probs(tape, probs)
            }
            BoundPolicy::Static(l) => {
                let logits = tape.repeat_rows(l, rows)?;
                let probs = tape.sigmoid(logits)?;
                from_probs(tape, probs)
            }
            BoundPolicy::None => Ok(GateOutput { gates: None, probs: None, selected: Tensor::ones(rows, g) }),
            BoundPolicy::Random(p) => {
                let z = random_gates(p, rows, g, self.rng)?;
                let selected = z.clone();
                Ok(GateOutput { gates: Some(tape.constant(z)?), probs: None, selected })
            }
            BoundPolicy::Attention(vars, alpha) => {
                let w = attention_weights(tape, &vars, prev.h)?;
                let (mult, selected) = attention_select(tape.value(w), alpha)?;
                Ok(GateOutput { gates: Some(tape.constant(mult)?), probs: None, selected })
            }
        }
    }
}

/// The recorded training objective for one batch.
pub struct Objective<S> {
    pub total: Var,
    pub likelihood: Var,
    pub penalty: Option<Var>,
    pub trace: Trace<S>,
    pub bound: BoundModel,
}

/// Masked likelihood plus `λ · mean_{b,t} Σ_k c_k σ_k` for Bernoulli policies.
pub fn training_objective<S: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<S>,
    model: &Model<S>,
    batch: &Batch<S>,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<Objective<S>> {
    if cfg.prior.costs.len() != model.spec.n_gates() {
        return Err(Error::invalid("one cost per gate required"));
    }
    let bound = model.bind(tape, true)?;
    let loss_weight = masked_loss_weight(&batch.targets)?;
    let mut policy = TrainingPolicy::new(model, bound.policy, cfg.estimator, cfg.tau, loss_weight, rng);
    let trace = unroll(tape, &bound.backbone, &mut policy, &batch.inputs, &batch.targets, bound.expansion)?;
    let probs = std::mem::take(&mut policy.probs);
    let likelihood = masked_sequence_loss(tape, &trace.logits, &batch.targets)?;
    let mut total = likelihood;
    let mut penalty = None;
    if model.spec.policy.is_bernoulli() && !probs.is_empty() {
        let weight = S::one() / S::lit((batch.rows() * batch.steps()) as f64);
        let mut acc: Option<Var> = None;
        for p in probs {
            let term = kl_penalty_on_tape(tape, p, &cfg.prior, weight)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        let pen = acc.expect("nonempty");
        total = tape.add(likelihood, pen)?;
        penalty = Some(pen);
    }
    Ok(Objective { total, likelihood, penalty, trace, bound })
}

/// Test-time outputs for one batch.
#[derive(Clone, Debug)]
pub struct EvalTrace<S = f32> {
    /// Logits per step (`B × C`).
    pub logits: Vec<Tensor<S>>,
    /// Decoded predictions per step and row.
    pub predictions: Vec<Vec<Vec<usize>>>,
    /// Binary gate selections per step (`B × G`).
    pub selected: Vec<Tensor<S>>,
    /// Gate probabilities per step when the policy has them.
    pub probs: Vec<Option<Tensor<S>>>,
}

pub fn evaluate_batch<S: Scalar, R: Rng + ?Sized>(model: &Model<S>, batch: &Batch<S>, rng: &mut R) -> Result<EvalTrace<S>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false)?;
    let mut policy = TestPolicy::new(bound.policy, model.spec.n_gates(), rng);
    let trace = unroll(&mut tape, &bound.backbone, &mut policy, &batch.inputs, &batch.targets, bound.expansion)?;
    let logits: Vec<Tensor<S>> = trace.logits.iter().map(|&v| tape.value(v).clone()).collect();
    let predictions = logits.iter().map(|l| decode(l, model.spec.mode)).collect();
    let probs = trace.probs.iter().map(|p| p.map(|v| tape.value(v).clone())).collect();
    Ok(EvalTrace { logits, predictions, selected: trace.selected, probs })
}
