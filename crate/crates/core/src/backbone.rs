//! GRU belief-state dynamics, prediction heads and the masked sequence loss.
//!
//! The unroll is foresight-causal: the gates for step `t` come from the
//! belief state `h^{t-1}` before `x^t` is read, the gated input updates the
//! state, and the prediction for `t` reads the updated state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::apply_gates_on_tape;
use crate::tape::{Tape, Var};
use crate::tensor::{sigmoid, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    Multiclass,
    Multilabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams<S = f32> {
    pub w_update: Tensor<S>,
    pub w_reset: Tensor<S>,
    pub w_candidate: Tensor<S>,
    pub u_update: Tensor<S>,
    pub u_reset: Tensor<S>,
    pub u_candidate: Tensor<S>,
    pub b_update: Tensor<S>,
    pub b_reset: Tensor<S>,
    pub b_candidate: Tensor<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_update: Var,
    pub w_reset: Var,
    pub w_candidate: Var,
    pub u_update: Var,
    pub u_reset: Var,
    pub u_candidate: Var,
    pub b_update: Var,
    pub b_reset: Var,
    pub b_candidate: Var,
}

impl<S: Scalar> GruParams<S> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_update: Tensor::zeros(input, hidden),
            w_reset: Tensor::zeros(input, hidden),
            w_candidate: Tensor::zeros(input, hidden),
            u_update: Tensor::zeros(hidden, hidden),
            u_reset: Tensor::zeros(hidden, hidden),
            u_candidate: Tensor::zeros(hidden, hidden),
            b_update: Tensor::zeros(1, hidden),
            b_reset: Tensor::zeros(1, hidden),
            b_candidate: Tensor::zeros(1, hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        use crate::init::uniform;
        Self {
            w_update: uniform(input, hidden, input, rng),
            w_reset: uniform(input, hidden, input, rng),
            w_candidate: uniform(input, hidden, input, rng),
            u_update: uniform(hidden, hidden, hidden, rng),
            u_reset: uniform(hidden, hidden, hidden, rng),
            u_candidate: uniform(hidden, hidden, hidden, rng),
            b_update: uniform(1, hidden, hidden, rng),
            b_reset: uniform(1, hidden, hidden, rng),
            b_candidate: uniform(1, hidden, hidden, rng),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_update.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_update.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, h) = (self.input_size(), self.hidden_size());
        let ok = [&self.w_update, &self.w_reset, &self.w_candidate].iter().all(|w| w.rows() == k && w.cols() == h)
            && [&self.u_update, &self.u_reset, &self.u_candidate].iter().all(|u| u.rows() == h && u.cols() == h)
            && [&self.b_update, &self.b_reset, &self.b_candidate].iter().all(|b| b.rows() == 1 && b.cols() == h);
        if ok {
            Ok(())
        } else {
            Err(Error::shape("gru", format!("parameters inconsistent with K={k}, H={h}")))
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor<S>)> {
        vec![
            ("w_update", &self.w_update),
            ("w_reset", &self.w_reset),
            ("w_candidate", &self.w_candidate),
            ("u_update", &self.u_update),
            ("u_reset", &self.u_reset),
            ("u_candidate", &self.u_candidate),
            ("b_update", &self.b_update),
            ("b_reset", &self.b_reset),
            ("b_candidate", &self.b_candidate),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>)> {
        vec![
            ("w_update", &mut self.w_update),
            ("w_reset", &mut self.w_reset),
            ("w_candidate", &mut self.w_candidate),
            ("u_update", &mut self.u_update),
            ("u_reset", &mut self.u_reset),
            ("u_candidate", &mut self.u_candidate),
            ("b_update", &mut self.b_update),
            ("b_reset", &mut self.b_reset),
            ("b_candidate", &mut self.b_candidate),
        ]
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Result<GruVars> {
        let mut leaf = |t: &Tensor<S>| tape.leaf(t.clone().with_requires_grad(trainable));
        Ok(GruVars {
            w_update: leaf(&self.w_update)?,
            w_reset: leaf(&self.w_reset)?,
            w_candidate: leaf(&self.w_candidate)?,
            u_update: leaf(&self.u_update)?,
            u_reset: leaf(&self.u_reset)?,
            u_candidate: leaf(&self.u_candidate)?,
            b_update: leaf(&self.b_update)?,
            b_reset: leaf(&self.b_reset)?,
            b_candidate: leaf(&self.b_candidate)?,
        })
    }
}

/// Recurrent state `h^t` for every sequence in the batch (`B × H`).
#[derive(Clone, Copy, Debug)]
pub struct BeliefState {
    pub h: Var,
    pub t: usize,
}

impl BeliefState {
    /// `h^0 = 0`.
    pub fn initial<S: Scalar>(tape: &mut Tape<S>, batch: usize, hidden: usize) -> Result<Self> {
        Ok(Self { h: tape.constant(Tensor::zeros(batch, hidden))?, t: 0 })
    }
}

fn affine<S: Scalar>(tape: &mut Tape<S>, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let s = tape.add(xw, hu)?;
    tape.add_row(s, b)
}

/// One GRU transition:
///
/// ```text
/// u  = sigmoid(x W_u + h U_u + b_u)
/// r  = sigmoid(x W_r + h U_r + b_r)
/// h̃  = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 - u) ⊙ h + u ⊙ h̃
/// ```
pub fn gru_step<S: Scalar>(tape: &mut Tape<S>, p: &GruVars, prev: &BeliefState, x: Var) -> Result<BeliefState> {
    let h = prev.h;
    let (xv, hv) = (tape.value(x), tape.value(h));
    if xv.rows() != hv.rows() {
        return Err(Error::shape("gru_step", format!("{} input rows vs {} state rows", xv.rows(), hv.rows())));
    }
    let pre_u = affine(tape, x, p.w_update, h, p.u_update, p.b_update)?;
    let update = tape.sigmoid(pre_u)?;
    let pre_r = affine(tape, x, p.w_reset, h, p.u_reset, p.b_reset)?;
    let reset = tape.sigmoid(pre_r)?;
    let gated_h = tape.mul(reset, h)?;
    let pre_c = affine(tape, x, p.w_candidate, gated_h, p.u_candidate, p.b_candidate)?;
    let candidate = tape.tanh(pre_c)?;
    let keep = tape.one_minus(update)?;
    let kept = tape.mul(keep, h)?;
    let fresh = tape.mul(update, candidate)?;
    let next = tape.add(kept, fresh)?;
    Ok(BeliefState { h: next, t: prev.t + 1 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionHead<S = f32> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub mode: OutputMode,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub weight: Var,
    pub bias: Var,
}

impl<S: Scalar> PredictionHead<S> {
    pub fn zeros(hidden: usize, outputs: usize, mode: OutputMode) -> Self {
        Self { weight: Tensor::zeros(hidden, outputs), bias: Tensor::zeros(1, outputs), mode }
    }

    pub fn init<R: Rng + ?Sized>(hidden: usize, outputs: usize, mode: OutputMode, rng: &mut R) -> Self {
        Self {
            weight: crate::init::uniform(hidden, outputs, hidden, rng),
            bias: crate::init::uniform(1, outputs, hidden, rng),
            mode,
        }
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor<S>)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<S>)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Result<HeadVars> {
        Ok(HeadVars {
            weight: tape.leaf(self.weight.clone().with_requires_grad(trainable))?,
            bias: tape.leaf(self.bias.clone().with_requires_grad(trainable))?,
        })
    }
}

/// Logits `h W + b`.
pub fn predict<S: Scalar>(tape: &mut Tape<S>, head: &HeadVars, state: &BeliefState) -> Result<Var> {
    let z = tape.matmul(state.h, head.weight)?;
    tape.add_row(z, head.bias)
}

/// Targets for one time step across the batch. `None` marks a missing label.
#[derive(Clone, Debug, PartialEq)]
pub enum StepTargets {
    /// One class index per row.
    Classes(Vec<Option<usize>>),
    /// `rows × labels` binary cells, row-major.
    Labels { labels: usize, cells: Vec<Option<bool>> },
}

impl StepTargets {
    pub fn rows(&self) -> usize {
        match self {
            StepTargets::Classes(c) => c.len(),
            StepTargets::Labels { labels, cells } => cells.len() / (*labels).max(1),
        }
    }

    /// Labelled timepoints (multiclass) or observed cells (multilabel).
    pub fn observed(&self) -> usize {
        match self {
            StepTargets::Classes(c) => c.iter().filter(|t| t.is_some()).count(),
            StepTargets::Labels { cells, .. } => cells.iter().filter(|t| t.is_some()).count(),
        }
    }

    /// Total timepoints (multiclass) or cells (multilabel).
    pub fn slots(&self) -> usize {
        match self {
            StepTargets::Classes(c) => c.len(),
            StepTargets::Labels { cells, .. } => cells.len(),
        }
    }
}

/// `#timepoints / #labelled` (multiclass) or
/// `#timepoints · #labels / #observed cells` (multilabel).
pub fn loss_scale_factor(slots: usize, observed: usize) -> Result<f64> {
    if observed == 0 {
        return Err(Error::DegenerateBatch);
    }
    Ok(slots as f64 / observed as f64)
}

/// Per-slot weight applied to each observed loss term: the scaled total
/// divided by the number of slots, i.e. `1 / #observed`.
pub fn masked_loss_weight(targets: &[StepTargets]) -> Result<f64> {
    let slots: usize = targets.iter().map(StepTargets::slots).sum();
    let observed: usize = targets.iter().map(StepTargets::observed).sum();
    Ok(loss_scale_factor(slots, observed)? / slots as f64)
}

/// Cross-entropy (multiclass) or binary cross-entropy (multilabel) over
/// observed entries, averaged over all slots and multiplied by the
/// missing-label scale factor. Missing entries contribute nothing.
pub fn masked_sequence_loss<S: Scalar>(tape: &mut Tape<S>, logits: &[Var], targets: &[StepTargets]) -> Result<Var> {
    if logits.len() != targets.len() {
        return Err(Error::shape("masked_sequence_loss", "one target set per time step required"));
    }
    if logits.is_empty() {
        return Err(Error::EmptySequence);
    }
    let weight = S::lit(masked_loss_weight(targets)?);
    let mut total: Option<Var> = None;
    for (&l, target) in logits.iter().zip(targets) {
        let term = step_loss(tape, l, target, weight)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.expect("nonempty"))
}

pub fn step_loss<S: Scalar>(tape: &mut Tape<S>, logits: Var, target: &StepTargets, weight: S) -> Result<Var> {
    match target {
        StepTargets::Classes(classes) => tape.softmax_xent(logits, classes, weight),
        StepTargets::Labels { cells, .. } => {
            let t: Vec<Option<S>> = cells.iter().map(|c| c.map(|b| if b { S::one() } else { S::zero() })).collect();
            tape.binary_xent(logits, &t, weight)
        }
    }
}

/// Mean loss over observed entries (no missing-label rescaling beyond the mean).
pub fn mean_loss<S: Scalar>(tape: &mut Tape<S>, logits: Var, target: &StepTargets) -> Result<Var> {
    let observed = target.observed();
    if observed == 0 {
        return Err(Error::DegenerateBatch);
    }
    step_loss(tape, logits, target, S::one() / S::lit(observed as f64))
}

/// Per-row loss values without recording anything: `weight · loss_r`, with
/// zero for rows that have no observed target.
pub fn row_losses<S: Scalar>(logits: &Tensor<S>, target: &StepTargets, weight: S) -> Result<Vec<S>> {
    let (rows, cols) = (logits.rows(), logits.cols());
    let mut out = vec![S::zero(); rows];
    match target {
        StepTargets::Classes(classes) => {
            for (r, t) in classes.iter().enumerate() {
                if let Some(t) = *t {
                    if t >= cols {
                        return Err(Error::ClassIndex { index: t, classes: cols });
                    }
                    let row = logits.row_slice(r);
                    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
                    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<S>().ln();
                    out[r] = weight * (lse - row[t]);
                }
            }
        }
        StepTargets::Labels { cells, .. } => {
            for r in 0..rows {
                let mut acc = S::zero();
                for c in 0..cols {
                    if let Some(y) = cells[r * cols + c] {
                        let x = logits.get(r, c);
                        let y = if y { S::one() } else { S::zero() };
                        acc = acc + x.max(S::zero()) - x * y + (S::one() + (-x.abs()).exp()).ln();
                    }
                }
                out[r] = weight * acc;
            }
        }
    }
    Ok(out)
}

/// Predicted class per row, or per-label decisions `1[logit > 0]`.
pub fn decode<S: Scalar>(logits: &Tensor<S>, mode: OutputMode) -> Vec<Vec<usize>> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row_slice(r);
            match mode {
                OutputMode::Multiclass => {
                    let mut best = 0;
                    for (c, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = c;
                        }
                    }
                    vec![best]
                }
                OutputMode::Multilabel => {
                    row.iter().enumerate().filter(|(_, &v)| sigmoid(v) > S::lit(0.5)).map(|(c, _)| c).collect()
                }
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct BackboneVars {
    pub gru: GruVars,
    pub head: HeadVars,
}

/// Gate decision for one step.
#[derive(Clone, Debug)]
pub struct GateOutput<S> {
    /// Multiplicative gates (`B × G`); `None` means every gate open.
    pub gates: Option<Var>,
    /// Gate probabilities σ when the policy has them.
    pub probs: Option<Var>,
    /// Binary selection indicator (`B × G`) used for feature accounting.
    pub selected: Tensor<S>,
}

/// What a policy may inspect after the step's gates have been applied.
pub struct StepView<'a, S> {
    pub t: usize,
    pub prev: &'a BeliefState,
    pub input: &'a Tensor<S>,
    pub gates: Option<Var>,
    pub targets: &'a StepTargets,
}

/// Source of per-step gates. `gates` sees only the previous belief state.
pub trait GatePolicy<S: Scalar> {
    fn gates(&mut self, tape: &mut Tape<S>, prev: &BeliefState) -> Result<GateOutput<S>>;

    /// Hook run once the step's gated input is known (used by estimators
    /// that need extra evaluations of the step).
    fn after_step(&mut self, _tape: &mut Tape<S>, _step: &StepView<'_, S>) -> Result<()> {
        Ok(())
    }
}

/// Every gate open.
pub struct AllOpen {
    pub n_gates: usize,
}

impl<S: Scalar> GatePolicy<S> for AllOpen {
    fn gates(&mut self, tape: &mut Tape<S>, prev: &BeliefState) -> Result<GateOutput<S>> {
        let rows = tape.value(prev.h).rows();
        Ok(GateOutput { gates: None, probs: None, selected: Tensor::ones(rows, self.n_gates) })
    }
}

/// The same constant gate matrix at every step.
pub struct FixedGates<S> {
    pub gates: Tensor<S>,
}

impl<S: Scalar> GatePolicy<S> for FixedGates<S> {
    fn gates(&mut self, tape: &mut Tape<S>, _prev: &BeliefState) -> Result<GateOutput<S>> {
        let g = tape.constant(self.gates.clone())?;
        let selected = self.gates.map(|v| if v > S::lit(0.5) { S::one() } else { S::zero() });
        Ok(GateOutput { gates: Some(g), probs: None, selected })
    }
}

#[derive(Clone, Debug)]
pub struct Trace<S> {
    pub logits: Vec<Var>,
    pub gates: Vec<Option<Var>>,
    pub probs: Vec<Option<Var>>,
    pub selected: Vec<Tensor<S>>,
    pub hidden: Vec<Var>,
    pub gated_inputs: Vec<Var>,
}

/// Runs the foresight loop over `inputs` (one `B × K` tensor per step).
pub fn unroll<S: Scalar>(
    tape: &mut Tape<S>,
    net: &BackboneVars,
    policy: &mut dyn GatePolicy<S>,
    inputs: &[Tensor<S>],
    targets: &[StepTargets],
    expansion: Option<Var>,
) -> Result<Trace<S>> {
    if inputs.is_empty() {
        return Err(Error::EmptySequence);
    }
    if targets.len() != inputs.len() {
        return Err(Error::shape("unroll", "one target set per time step required"));
    }
    let batch = inputs[0].rows();
    let hidden = tape.value(net.gru.u_update).rows();
    let mut state = BeliefState::initial(tape, batch, hidden)?;
    let mut trace = Trace {
        logits: Vec::with_capacity(inputs.len()),
        gates: Vec::with_capacity(inputs.len()),
        probs: Vec::with_capacity(inputs.len()),
        selected: Vec::with_capacity(inputs.len()),
        hidden: Vec::with_capacity(inputs.len()),
        gated_inputs: Vec::with_capacity(inputs.len()),
    };
    for (t, (x_t, target)) in inputs.iter().zip(targets).enumerate() {
        let out = policy.gates(tape, &state)?;
        let x = tape.constant(x_t.clone())?;
        let gated = match out.gates {
            Some(g) => apply_gates_on_tape(tape, x, g, expansion)?,
            None => x,
        };
        let next = gru_step(tape, &net.gru, &state, gated)?;
        let logits = predict(tape, &net.head, &next)?;
        policy.after_step(tape, &StepView { t, prev: &state, input: x_t, gates: out.gates, targets: target })?;
        trace.logits.push(logits);
        trace.gates.push(out.gates);
        trace.probs.push(out.probs);
        trace.selected.push(out.selected);
        trace.hidden.push(next.h);
        trace.gated_inputs.push(gated);
        state = next;
    }
    Ok(trace)
}
