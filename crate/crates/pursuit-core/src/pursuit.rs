//! The selection loop: score every unasked query by mutual information with
//! the label given the history, ask the argmax, update the posterior by
//! sequential filtering, and stop once a stability window of the termination
//! condition has held.

use serde::Deserialize;

use crate::core::{Answer, History, Instance, Posterior};
use crate::models::{ConditionedState, JointTable, PosteriorModel};
use crate::querysets::{answer_query, QuerySet};
use crate::{Error, Result};

/// Two query scores within this band count as tied, and ties go to the
/// lowest query id. Keeps argmax selection deterministic and reproducible
/// against independently coded oracles in the presence of rounding.
pub const TIE_EPS_BITS: f64 = 1e-12;

/// Shannon entropy of a probability vector, in bits, with 0·log 0 := 0.
pub fn entropy_bits(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * p.log2();
        }
    }
    h
}

/// Mutual information of a joint table in bits:
/// I = Σ p(a,y)·log₂(p(a,y) / (p(a)·p(y))), 0·log 0 := 0.
/// Tiny negative rounding is clamped to 0; values below −1e-12 are rejected.
pub fn mutual_information(table: &JointTable) -> Result<f64> {
    table.validate()?;
    let pa = table.answer_marginal();
    let py = table.label_marginal();
    let mut mi = 0.0;
    for y in 0..table.n_labels {
        let row = table.label_row(y);
        for (a, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (pa[a] * py[y])).log2();
            }
        }
    }
    if mi < -1e-12 {
        return Err(Error::MalformedTable(format!(
            "mutual information {mi} below rounding floor"
        )));
    }
    Ok(mi.max(0.0))
}

/// When to stop asking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationKind {
    /// Stop when max_y p(y | history) ≥ 1 − ε.
    Confidence,
    /// Stop when the best unasked query's information drops to ≤ ε' bits.
    MutualInformation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminationConfig {
    pub kind: TerminationKind,
    /// ε for the confidence kind, ε' in bits for the MI kind.
    pub epsilon: f64,
    /// Consecutive steps the condition must hold before stopping.
    pub window: usize,
    /// Hard cap on asked queries (≤ |Q| effectively).
    pub max_queries: usize,
}

impl TerminationConfig {
    pub fn confidence(epsilon: f64, window: usize, max_queries: usize) -> Self {
        TerminationConfig { kind: TerminationKind::Confidence, epsilon, window, max_queries }
    }

    pub fn mutual_information(epsilon: f64, window: usize, max_queries: usize) -> Self {
        TerminationConfig {
            kind: TerminationKind::MutualInformation,
            epsilon,
            window,
            max_queries,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::invalid("epsilon must be >= 0"));
        }
        if self.window == 0 {
            return Err(Error::invalid("stability window must be >= 1"));
        }
        if self.max_queries == 0 {
            return Err(Error::invalid("max_queries must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ConfidenceStable,
    MiStable,
    QueryBudgetExhausted,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::ConfidenceStable => "confidence_stable",
            StopReason::MiStable => "mi_stable",
            StopReason::QueryBudgetExhausted => "query_budget_exhausted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "confidence_stable" => StopReason::ConfidenceStable,
            "mi_stable" => StopReason::MiStable,
            "query_budget_exhausted" => StopReason::QueryBudgetExhausted,
            other => return Err(Error::invalid(format!("unknown stop reason {other:?}"))),
        })
    }
}

/// One asked query: its 1-based index k, the answer received, the selected
/// query's mutual information at selection time (the maximum over all
/// unasked queries given the previous history), and the posterior after the
/// update.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub k: usize,
    pub query_id: usize,
    pub answer: Answer,
    pub mi_bits: f64,
    pub posterior: Posterior,
}

/// Full record of one pursuit run. Steps with k > explanation_length are the
/// trailing stability-window confirmations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationTrace {
    pub instance_id: String,
    pub steps: Vec<TraceStep>,
    pub predicted_label: usize,
    pub stop_reason: StopReason,
    pub explanation_length: usize,
}

impl ExplanationTrace {
    /// Posterior after the final step (the model prior for empty traces).
    pub fn final_posterior(&self) -> Option<&Posterior> {
        self.steps.last().map(|s| &s.posterior)
    }
}

/// Exact selection: scores every unasked query and returns the winner
/// (ties by lowest id within [`TIE_EPS_BITS`]), its MI, and the full MI
/// vector (asked queries score 0, their answers being determined by the
/// history).
pub fn select_next_query<S: ConditionedState>(
    state: &mut S,
    qset: &QuerySet,
) -> Result<(usize, f64, Vec<f64>)> {
    let n = qset.len();
    let mut scores = vec![0.0; n];
    let mut best: Option<(usize, f64)> = None;
    for qid in 0..n {
        if state.history().contains(qid) {
            continue;
        }
        let joint = state.joint_compact(qid)?;
        let mi = mutual_information(&joint)?;
        scores[qid] = mi;
        best = match best {
            None => Some((qid, mi)),
            Some((_, bm)) if mi > bm + TIE_EPS_BITS => Some((qid, mi)),
            other => other,
        };
    }
    match best {
        Some((qid, mi)) => Ok((qid, mi, scores)),
        None => Err(Error::invalid("all queries have been asked")),
    }
}

/// Selection with bound-based pruning: identical winner and score as
/// [`select_next_query`], but queries whose admissible upper bound cannot
/// reach within the tie band of the running best are skipped. Candidates are
/// visited in descending bound order (ids ascending within equal bounds) so
/// the scan can stop early.
fn select_next_query_pruned<S: ConditionedState>(
    state: &mut S,
    qset: &QuerySet,
) -> Result<(usize, f64)> {
    let n = qset.len();
    // residual label uncertainty caps every query's information
    let label_entropy_cap = entropy_bits(state.posterior()?.probs());
    let mut candidates: Vec<(usize, f64)> = Vec::with_capacity(n);
    let mut have_bounds = true;
    for qid in 0..n {
        if state.history().contains(qid) {
            continue;
        }
        match state.mi_upper_bound(qid) {
            Some(b) => candidates.push((qid, b.min(label_entropy_cap))),
            None => {
                have_bounds = false;
                candidates.push((qid, f64::INFINITY));
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::invalid("all queries have been asked"));
    }
    if have_bounds {
        candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    }
    let mut evaluated: Vec<(usize, f64)> = Vec::new();
    let mut best_mi = f64::NEG_INFINITY;
    for &(qid, bound) in &candidates {
        if have_bounds && bound < best_mi - TIE_EPS_BITS {
            break; // no remaining candidate can reach the band of the max
        }
        let joint = state.joint_compact(qid)?;
        let mi = mutual_information(&joint)?;
        evaluated.push((qid, mi));
        if mi > best_mi {
            best_mi = mi;
        }
    }
    // replay in ascending id order with the band rule, exactly as the
    // unpruned scan would
    evaluated.sort_by_key(|(qid, _)| *qid);
    let mut best = evaluated[0];
    for &(qid, mi) in &evaluated[1..] {
        if mi > best.1 + TIE_EPS_BITS {
            best = (qid, mi);
        }
    }
    Ok(best)
}

/// Runs the pursuit loop on one instance.
///
/// Confidence termination: stop once max_y p(y | S_k) ≥ 1 − ε has held for
/// `window` consecutive steps. MI termination: stop once the best unasked
/// query's MI is ≤ ε' for `window` consecutive histories S_m with m ≥ 1
/// (queries keep being asked while the window fills; the empty history is
/// not eligible, so an initially uninformative query set — the XOR case —
/// does not stop the run before any query is asked).
///
/// The reported explanation length is the first step of the satisfied
/// window; the trailing `window − 1` steps are retained in the trace.
pub fn run_ip<M: PosteriorModel>(
    model: &M,
    qset: &QuerySet,
    instance: &Instance,
    term: &TerminationConfig,
) -> Result<ExplanationTrace> {
    let mut state = model.begin(qset)?;
    run_ip_with_state(&mut state, qset, instance, term)
}

/// Pursuit loop over an already-opened conditioning state (lets callers
/// configure sampler options for the latent model).
pub fn run_ip_with_state<S: ConditionedState>(
    state: &mut S,
    qset: &QuerySet,
    instance: &Instance,
    term: &TerminationConfig,
) -> Result<ExplanationTrace> {
    run_ip_with_first_hint(state, qset, instance, term, None)
}

/// The first selection happens on the empty history, so it is identical for
/// every instance of a run; callers sweeping many instances compute it once
/// with [`first_selection`] and pass it here.
pub fn run_ip_with_first_hint<S: ConditionedState>(
    state: &mut S,
    qset: &QuerySet,
    instance: &Instance,
    term: &TerminationConfig,
    first_hint: Option<(usize, f64)>,
) -> Result<ExplanationTrace> {
    term.validate()?;
    let mut steps: Vec<TraceStep> = Vec::new();
    let mut run = 0usize;
    let mut stop = None;
    let budget = term.max_queries.min(qset.len());
    for k in 1..=budget {
        let (qid, mi) = match (k, first_hint) {
            (1, Some(hint)) => hint,
            _ => select_next_query_pruned(state, qset)?,
        };
        if term.kind == TerminationKind::MutualInformation && k >= 2 {
            // `mi` is the maximum unasked MI given S_{k-1}
            if mi <= term.epsilon {
                run += 1;
            } else {
                run = 0;
            }
            if run >= term.window {
                stop = Some(StopReason::MiStable);
                break;
            }
        }
        let answer = answer_query(qset, instance, qid)?;
        state.observe(qid, &answer)?;
        let posterior = state.posterior()?;
        if term.kind == TerminationKind::Confidence {
            if posterior.max_prob() >= 1.0 - term.epsilon {
                run += 1;
            } else {
                run = 0;
            }
        }
        steps.push(TraceStep { k, query_id: qid, answer, mi_bits: mi, posterior });
        if term.kind == TerminationKind::Confidence && run >= term.window {
            stop = Some(StopReason::ConfidenceStable);
            break;
        }
    }
    let stop_reason = stop.unwrap_or(StopReason::QueryBudgetExhausted);
    let explanation_length = match stop_reason {
        StopReason::QueryBudgetExhausted => {
            if term.kind == TerminationKind::MutualInformation && steps.len() == qset.len() {
                // every query was asked, so the exact infimum rule applies:
                // L is the earliest point from which the residual MI stayed
                // ≤ ε' through exhaustion (step j records the stat for the
                // history of length j-1; the empty history is not eligible)
                let mut l = 1;
                for m in (1..steps.len()).rev() {
                    if steps[m].mi_bits > term.epsilon {
                        l = m + 1;
                        break;
                    }
                }
                l
            } else {
                steps.len()
            }
        }
        _ => steps.len() + 1 - term.window,
    };
    let predicted_label = match steps.last() {
        Some(s) => s.posterior.argmax(),
        None => state.posterior()?.argmax(),
    };
    Ok(ExplanationTrace {
        instance_id: instance.id.clone(),
        steps,
        predicted_label,
        stop_reason,
        explanation_length,
    })
}

/// The selection the empty history produces: shared by every instance of a
/// model/query-set pair.
pub fn first_selection<M: PosteriorModel>(model: &M, qset: &QuerySet) -> Result<(usize, f64)> {
    let mut state = model.begin(qset)?;
    select_next_query_pruned(&mut state, qset)
}

/// Maximum residual mutual information over unasked queries given a history.
/// Under the premise that every instance consistent with the history shares
/// one posterior, this is 0 for all longer histories.
pub fn check_lemma1_termination(
    model: &crate::models::TabularJointModel,
    qset: &QuerySet,
    history: &History,
) -> Result<f64> {
    let mut state = model.begin(qset)?.with_history(history)?;
    let mut max_mi: f64 = 0.0;
    for qid in 0..qset.len() {
        if history.contains(qid) {
            continue;
        }
        let joint = state.joint_compact(qid)?;
        max_mi = max_mi.max(mutual_information(&joint)?);
    }
    Ok(max_mi)
}

// ---------------------------------------------------------------------
// Trace file format: one JSON object per line, floats in the posterior and
// MI fields serialized to 9 significant digits.

fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0.0".to_string();
    }
    format!("{x:.8e}")
}

/// Serializes one trace as a single JSON line.
pub fn trace_to_json_line(trace: &ExplanationTrace) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = write!(
        out,
        "{{\"instance_id\":{},\"steps\":[",
        serde_json::to_string(&trace.instance_id).unwrap()
    );
    for (i, s) in trace.steps.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let answer: Vec<u8> = s.answer.values().to_vec();
        let _ = write!(
            out,
            "{{\"k\":{},\"query_id\":{},\"answer\":{:?},\"mi_bits\":{},\"posterior\":[",
            s.k,
            s.query_id,
            answer,
            fmt_sig9(s.mi_bits)
        );
        for (j, p) in s.posterior.probs().iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_sig9(*p));
        }
        out.push_str("]}");
    }
    let _ = write!(
        out,
        "],\"predicted_label\":{},\"stop_reason\":\"{}\",\"explanation_length\":{}}}",
        trace.predicted_label,
        trace.stop_reason.as_str(),
        trace.explanation_length
    );
    out
}

#[derive(Deserialize)]
struct TraceStepJson {
    k: usize,
    query_id: usize,
    answer: Vec<u8>,
    mi_bits: f64,
    posterior: Vec<f64>,
}

#[derive(Deserialize)]
struct TraceJson {
    instance_id: String,
    steps: Vec<TraceStepJson>,
    predicted_label: usize,
    stop_reason: String,
    explanation_length: usize,
}

/// Parses one trace line written by [`trace_to_json_line`].
pub fn trace_from_json_line(line: &str) -> Result<ExplanationTrace> {
    let parsed: TraceJson = serde_json::from_str(line)
        .map_err(|e| Error::data(format!("bad trace line: {e}")))?;
    let steps = parsed
        .steps
        .into_iter()
        .map(|s| {
            Ok(TraceStep {
                k: s.k,
                query_id: s.query_id,
                answer: Answer::new(s.answer, 256)?,
                mi_bits: s.mi_bits,
                posterior: Posterior::new(s.posterior)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExplanationTrace {
        instance_id: parsed.instance_id,
        steps,
        predicted_label: parsed.predicted_label,
        stop_reason: StopReason::parse(&parsed.stop_reason)?,
        explanation_length: parsed.explanation_length,
    })
}
