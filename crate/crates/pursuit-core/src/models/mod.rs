//! Generative models that supply p(answer, label | history) and
//! p(label | history) to the pursuit loop.
//!
//! Three families are provided:
//! - [`TabularJointModel`]: exact smoothed counting over an explicit instance
//!   list; the ground-truth oracle for desk-scale verification.
//! - [`BernoulliMixtureModel`]: per-class mixture of product-Bernoulli
//!   components with exact marginalization, fitted by EM.
//! - [`LatentGaussianModel`]: continuous-latent decoder conditioned by
//!   Langevin sampling.

mod format;
mod latent;
mod mixture;
mod tabular;

pub use format::{
    decoder_to_string, load_decoder, load_mixture, load_model, mixture_to_string, parse_model,
    save_decoder, save_mixture, ModelFile,
};
pub use latent::{
    log_target, ula_sample, Activation, DenseLayer, LatentGaussianModel, LatentState,
    LatentTarget, ZSampleSet,
};
pub use mixture::{em_fit, BernoulliMixtureModel, EmFitLog, EmOptions, MixtureState, THETA_MIN};
pub use tabular::{TabularJointModel, TabularState};

use crate::core::{Answer, History, Instance, LabelSpace, Posterior};
use crate::querysets::QuerySet;
use crate::{Error, Result};

/// Joint table p(answer, label | history) for one candidate query.
///
/// Rows are answers indexed canonically (slot 0 least significant, see
/// [`Answer::table_index`]); columns are labels in label-space order.
/// Stored label-major: `data[y * n_answers + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub n_answers: usize,
    pub n_labels: usize,
    data: Vec<f64>,
}

impl JointTable {
    pub fn new(n_answers: usize, n_labels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_answers * n_labels {
            return Err(Error::MalformedTable(format!(
                "expected {} cells, got {}",
                n_answers * n_labels,
                data.len()
            )));
        }
        Ok(JointTable { n_answers, n_labels, data })
    }

    pub fn prob(&self, answer: usize, label: usize) -> f64 {
        self.data[label * self.n_answers + answer]
    }

    /// Row of all answers for one label.
    pub fn label_row(&self, label: usize) -> &[f64] {
        &self.data[label * self.n_answers..(label + 1) * self.n_answers]
    }

    pub fn cells(&self) -> &[f64] {
        &self.data
    }

    /// Marginal over answers: p(label | history).
    pub fn label_marginal(&self) -> Vec<f64> {
        (0..self.n_labels)
            .map(|y| self.label_row(y).iter().sum())
            .collect()
    }

    /// Marginal over labels: p(answer | history).
    pub fn answer_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_answers];
        for y in 0..self.n_labels {
            for (a, &p) in self.label_row(y).iter().enumerate() {
                out[a] += p;
            }
        }
        out
    }

    /// Checks nonnegativity and unit mass within 1e-9.
    pub fn validate(&self) -> Result<()> {
        if self.data.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::MalformedTable(
                "cells must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = self.data.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::MalformedTable(format!(
                "table sums to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(())
    }
}

/// A generative model that can open per-instance conditioning states.
pub trait PosteriorModel {
    type State<'a>: ConditionedState
    where
        Self: 'a;

    fn label_space(&self) -> &LabelSpace;

    /// Opens a fresh conditioning state (empty history) over `qset`.
    fn begin<'a>(&'a self, qset: &'a QuerySet) -> Result<Self::State<'a>>;

    /// MAP label given the answers to every query in the set, ties broken by
    /// lowest label index. The accuracy ceiling for any stopping rule.
    fn map_full_q(&self, qset: &QuerySet, instance: &Instance) -> Result<usize>;
}

/// Conditioning state: a model plus an accumulated history.
pub trait ConditionedState {
    /// p(label | history). With an empty history this is the model prior.
    fn posterior(&mut self) -> Result<Posterior>;

    /// Full joint table p(answer, label | history) over the query's complete
    /// answer alphabet. Answers inconsistent with already-observed slots get
    /// probability zero, so the table's label marginal equals the posterior.
    fn estimate_joint(&mut self, qid: usize) -> Result<JointTable>;

    /// Joint table restricted to answers consistent with the history, i.e.
    /// over completions of the query's unobserved slots. Mutual information
    /// computed on this table equals that of [`estimate_joint`]'s since the
    /// dropped rows are all zero.
    fn joint_compact(&mut self, qid: usize) -> Result<JointTable>;

    /// Conditions the state on one more (query, answer) pair.
    fn observe(&mut self, qid: usize, answer: &Answer) -> Result<()>;

    /// Queries already observed, in the order asked.
    fn history(&self) -> &History;

    /// Cheap admissible upper bound on I(q(X); Y | history) in bits, used to
    /// prune the selection scan. `None` means "no bound, evaluate exactly".
    fn mi_upper_bound(&mut self, _qid: usize) -> Option<f64> {
        None
    }
}

/// Tracks which primitive slots a history has revealed and their values.
#[derive(Debug, Clone)]
pub struct ObservedSlots {
    values: Vec<i8>, // -1 unobserved, else the symbol
    n_observed: usize,
}

impl ObservedSlots {
    pub fn new(n_slots: usize) -> Self {
        ObservedSlots { values: vec![-1; n_slots], n_observed: 0 }
    }

    /// Replays a history against a query set.
    pub fn from_history(qset: &QuerySet, history: &History) -> Result<Self> {
        let mut obs = ObservedSlots::new(qset.slot_count());
        for (qid, answer) in history.steps() {
            obs.record(&qset.slots(*qid)?, answer)?;
        }
        Ok(obs)
    }

    /// Records an answer's slot values; contradicting an already-observed
    /// slot is an error (such an event has probability zero).
    pub fn record(&mut self, slots: &[usize], answer: &Answer) -> Result<()> {
        for (&slot, &v) in slots.iter().zip(answer.values()) {
            match self.values[slot] {
                -1 => {
                    self.values[slot] = v as i8;
                    self.n_observed += 1;
                }
                seen if seen == v as i8 => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "answer contradicts history at slot {slot}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, slot: usize) -> Option<u8> {
        let v = self.values[slot];
        (v >= 0).then_some(v as u8)
    }

    pub fn n_observed(&self) -> usize {
        self.n_observed
    }

    /// Splits a query's slots into (unobserved, observed-with-values),
    /// preserving slot order.
    pub fn split_slots(&self, slots: &[usize]) -> (Vec<usize>, Vec<(usize, u8)>) {
        let mut unobs = Vec::new();
        let mut obs = Vec::new();
        for &s in slots {
            match self.get(s) {
                None => unobs.push(s),
                Some(v) => obs.push((s, v)),
            }
        }
        (unobs, obs)
    }
}

/// Probability of a patch answer given per-slot Bernoulli probabilities and a
/// history: the product runs over exactly the patch's slots not yet observed;
/// observed slots contribute factor 1 when the answer agrees with the
/// history and force the whole probability to 0 otherwise.
pub fn patch_answer_prob(
    slot_probs: &[f64],
    qset: &QuerySet,
    qid: usize,
    answer: &Answer,
    history: &History,
) -> Result<f64> {
    let slots = qset.slots(qid)?;
    if answer.arity() != slots.len() {
        return Err(Error::invalid("answer arity does not match query"));
    }
    let observed = ObservedSlots::from_history(qset, history)?;
    let mut prob = 1.0;
    for (&slot, &v) in slots.iter().zip(answer.values()) {
        match observed.get(slot) {
            Some(seen) => {
                if seen != v {
                    return Ok(0.0);
                }
            }
            None => {
                let p1 = slot_probs[slot];
                prob *= if v == 1 { p1 } else { 1.0 - p1 };
            }
        }
    }
    Ok(prob)
}

/// Expands a compact (completions × labels) table to the query's full answer
/// alphabet, scattering each completion to its full answer index.
pub(crate) fn expand_compact_table(
    compact: &JointTable,
    slots: &[usize],
    observed: &ObservedSlots,
) -> JointTable {
    let arity = slots.len();
    let n_full = 1usize << arity;
    // base index from observed slots; bit positions of unobserved slots
    let mut base = 0usize;
    let mut free_bits = Vec::new();
    for (pos, &slot) in slots.iter().enumerate() {
        match observed.get(slot) {
            Some(v) => base |= (v as usize) << pos,
            None => free_bits.push(pos),
        }
    }
    debug_assert_eq!(1usize << free_bits.len(), compact.n_answers);
    let mut data = vec![0.0; n_full * compact.n_labels];
    for y in 0..compact.n_labels {
        let row = compact.label_row(y);
        for (c, &p) in row.iter().enumerate() {
            let mut full = base;
            for (bit, &pos) in free_bits.iter().enumerate() {
                if (c >> bit) & 1 == 1 {
                    full |= 1 << pos;
                }
            }
            data[y * n_full + full] = p;
        }
    }
    JointTable { n_answers: n_full, n_labels: compact.n_labels, data }
}
