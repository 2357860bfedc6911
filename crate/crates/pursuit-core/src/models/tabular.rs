//! Exact tabular joint model: probabilities are (optionally smoothed) counts
//! over the set of instances consistent with the history.

use crate::core::{Answer, History, Instance, LabelSpace, Posterior};
use crate::core::extend_history;
use crate::models::{ConditionedState, JointTable, PosteriorModel};
use crate::querysets::{answer_query, QuerySet};
use crate::{Error, Result};

/// Joint model backed by an explicit list of labelled instances.
///
/// `consistent(history)` is the set of instances agreeing with every
/// (query, answer) pair in the history; probabilities are counts over that
/// set plus a Laplace pseudo-count `alpha`. Smoothing is chain-structured:
/// `p(y|h)` smooths label counts, `p(a|y,h)` smooths answer counts within a
/// label, so the joint's label marginal equals the posterior exactly.
#[derive(Debug, Clone)]
pub struct TabularJointModel {
    labelspace: LabelSpace,
    labels: Vec<usize>,
    /// answer_index[i][q] = canonical table index of instance i's answer to q
    answer_index: Vec<Vec<usize>>,
    /// p(Y | x) per instance: empirical over instances sharing x's full
    /// answer vector (the input as seen through the query set)
    posterior_given_x: Vec<Vec<f64>>,
    instances: Vec<Instance>,
    n_queries: usize,
    alpha: f64,
}

impl TabularJointModel {
    pub fn new(
        qset: &QuerySet,
        data: &[(Instance, usize)],
        labelspace: LabelSpace,
        alpha: f64,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("tabular model needs at least one instance"));
        }
        if alpha < 0.0 {
            return Err(Error::invalid("alpha must be >= 0"));
        }
        let n_queries = qset.len();
        let mut answer_index = Vec::with_capacity(data.len());
        for (inst, label) in data {
            if *label >= labelspace.count() {
                return Err(Error::invalid(format!("label {label} out of range")));
            }
            let mut row = Vec::with_capacity(n_queries);
            for q in 0..n_queries {
                let a = answer_query(qset, inst, q)?;
                row.push(a.table_index(qset.query(q)?.answer_cardinality));
            }
            answer_index.push(row);
        }
        // group instances by full answer vector for p(Y | x)
        let n = data.len();
        let n_labels = labelspace.count();
        let mut posterior_given_x = vec![vec![0.0; n_labels]; n];
        for i in 0..n {
            let mut counts = vec![0usize; n_labels];
            let mut total = 0usize;
            for j in 0..n {
                if answer_index[j] == answer_index[i] {
                    counts[data[j].1] += 1;
                    total += 1;
                }
            }
            for y in 0..n_labels {
                posterior_given_x[i][y] = counts[y] as f64 / total as f64;
            }
        }
        Ok(TabularJointModel {
            labelspace,
            labels: data.iter().map(|(_, y)| *y).collect(),
            answer_index,
            posterior_given_x,
            instances: data.iter().map(|(i, _)| i.clone()).collect(),
            n_queries,
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn label_of(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn instance(&self, i: usize) -> &Instance {
        &self.instances[i]
    }

    pub fn answer_table_index(&self, i: usize, qid: usize) -> usize {
        self.answer_index[i][qid]
    }

    /// Exact p(Y | x_i): empirical over instances with the same full answer
    /// vector as instance i.
    pub fn posterior_given_instance(&self, i: usize) -> &[f64] {
        &self.posterior_given_x[i]
    }

    /// Smoothed posterior over a set of member indices.
    pub fn posterior_over(&self, members: &[u32]) -> Result<Posterior> {
        let n_labels = self.labelspace.count();
        if members.is_empty() && self.alpha == 0.0 {
            return Err(Error::DegenerateHistory);
        }
        let mut counts = vec![0.0f64; n_labels];
        for &i in members {
            counts[self.labels[i as usize]] += 1.0;
        }
        let denom = members.len() as f64 + self.alpha * n_labels as f64;
        Posterior::new(counts.iter().map(|c| (c + self.alpha) / denom).collect())
    }

    /// Members of `consistent(history)` starting from all instances.
    pub fn consistent(&self, history: &History) -> Vec<u32> {
        let mut members: Vec<u32> = (0..self.labels.len() as u32).collect();
        for (qid, answer) in history.steps() {
            let target = answer.table_index(2);
            members.retain(|&i| self.answer_index[i as usize][*qid] == target);
        }
        members
    }

    fn joint_over(&self, members: &[u32], qid: usize, n_answers: usize) -> Result<JointTable> {
        if qid >= self.n_queries {
            return Err(Error::QueryOutOfRange { qid, len: self.n_queries });
        }
        let n_labels = self.labelspace.count();
        if members.is_empty() && self.alpha == 0.0 {
            return Err(Error::DegenerateHistory);
        }
        let mut counts = vec![0.0f64; n_answers * n_labels];
        let mut label_counts = vec![0.0f64; n_labels];
        for &i in members {
            let y = self.labels[i as usize];
            counts[y * n_answers + self.answer_index[i as usize][qid]] += 1.0;
            label_counts[y] += 1.0;
        }
        let n = members.len() as f64;
        let alpha = self.alpha;
        let mut data = vec![0.0; n_answers * n_labels];
        if alpha == 0.0 {
            for y in 0..n_labels {
                for a in 0..n_answers {
                    data[y * n_answers + a] = counts[y * n_answers + a] / n;
                }
            }
        } else {
            // chain smoothing: p(y|h) * p(a|y,h)
            let label_denom = n + alpha * n_labels as f64;
            for y in 0..n_labels {
                let p_y = (label_counts[y] + alpha) / label_denom;
                let cond_denom = label_counts[y] + alpha * n_answers as f64;
                for a in 0..n_answers {
                    data[y * n_answers + a] =
                        p_y * (counts[y * n_answers + a] + alpha) / cond_denom;
                }
            }
        }
        JointTable::new(n_answers, n_labels, data)
    }
}

impl PosteriorModel for TabularJointModel {
    type State<'a> = TabularState<'a>;

    fn label_space(&self) -> &LabelSpace {
        &self.labelspace
    }

    fn begin<'a>(&'a self, qset: &'a QuerySet) -> Result<TabularState<'a>> {
        if qset.len() != self.n_queries {
            return Err(Error::invalid("query set does not match the model's"));
        }
        Ok(TabularState {
            model: self,
            qset,
            members: (0..self.labels.len() as u32).collect(),
            history: History::empty(),
        })
    }

    fn map_full_q(&self, qset: &QuerySet, instance: &Instance) -> Result<usize> {
        let mut state = self.begin(qset)?;
        for qid in 0..qset.len() {
            let a = answer_query(qset, instance, qid)?;
            state.observe(qid, &a)?;
        }
        Ok(state.posterior()?.argmax())
    }
}

/// Conditioning state for the tabular model: the consistent set is maintained
/// incrementally, so every posterior equals the from-scratch computation.
#[derive(Debug, Clone)]
pub struct TabularState<'a> {
    model: &'a TabularJointModel,
    qset: &'a QuerySet,
    members: Vec<u32>,
    history: History,
}

impl<'a> TabularState<'a> {
    pub fn members(&self) -> &[u32] {
        &self.members
    }

    /// Reconditions from scratch on an explicit history.
    pub fn with_history(mut self, history: &History) -> Result<Self> {
        for (qid, a) in history.steps() {
            self.observe(*qid, a)?;
        }
        Ok(self)
    }
}

impl ConditionedState for TabularState<'_> {
    fn posterior(&mut self) -> Result<Posterior> {
        self.model.posterior_over(&self.members)
    }

    fn estimate_joint(&mut self, qid: usize) -> Result<JointTable> {
        if self.history.contains(qid) {
            return Err(Error::DuplicateQuery { qid });
        }
        let q = self.qset.query(qid)?;
        let n_answers = q.answer_cardinality.pow(q.arity as u32);
        self.model.joint_over(&self.members, qid, n_answers)
    }

    fn joint_compact(&mut self, qid: usize) -> Result<JointTable> {
        self.estimate_joint(qid)
    }

    fn observe(&mut self, qid: usize, answer: &Answer) -> Result<()> {
        self.history = extend_history(&self.history, qid, answer.clone())?;
        let target = answer.table_index(self.qset.query(qid)?.answer_cardinality);
        self.members
            .retain(|&i| self.model.answer_index[i as usize][qid] == target);
        Ok(())
    }

    fn history(&self) -> &History {
        &self.history
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Payload;
    use crate::querysets::build_patch_queryset;

    fn toy() -> (QuerySet, Vec<(Instance, usize)>, LabelSpace) {
        // 8 instances over a 1x3 binary image with w=1 patches (3 queries)
        let qset = build_patch_queryset(1, 3, 1).unwrap();
        let rows: Vec<(Vec<u8>, usize)> = vec![
            (vec![0, 0, 0], 0),
            (vec![0, 0, 1], 0),
            (vec![0, 1, 0], 0),
            (vec![0, 1, 1], 1),
            (vec![1, 0, 0], 1),
            (vec![1, 0, 1], 1),
            (vec![1, 1, 0], 1),
            (vec![1, 1, 1], 1),
        ];
        let data: Vec<(Instance, usize)> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (bits, y))| {
                (
                    Instance::new(format!("i{i}"), Payload::Bits { height: 1, width: 3, bits }),
                    y,
                )
            })
            .collect();
        let ls = LabelSpace::new(["a", "b"]).unwrap();
        (qset, data, ls)
    }

    #[test]
    fn empty_history_posterior_is_prior() {
        let (qset, data, ls) = toy();
        let model = TabularJointModel::new(&qset, &data, ls, 0.0).unwrap();
        let mut st = model.begin(&qset).unwrap();
        let p = st.posterior().unwrap();
        assert!((p.probs()[0] - 3.0 / 8.0).abs() < 1e-12);
        assert!((p.probs()[1] - 5.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn unique_identification_gives_one_hot() {
        let (qset, data, ls) = toy();
        let model = TabularJointModel::new(&qset, &data, ls, 0.0).unwrap();
        let mut st = model.begin(&qset).unwrap();
        // answers (0,1,1) isolate instance 3 (label 1)
        st.observe(0, &Answer::new(vec![0], 2).unwrap()).unwrap();
        st.observe(1, &Answer::new(vec![1], 2).unwrap()).unwrap();
        st.observe(2, &Answer::new(vec![1], 2).unwrap()).unwrap();
        let p = st.posterior().unwrap();
        assert_eq!(p.probs(), &[0.0, 1.0]);
    }

    #[test]
    fn one_observation_matches_hand_counting() {
        let (qset, data, ls) = toy();
        let model = TabularJointModel::new(&qset, &data, ls, 0.0).unwrap();
        let mut st = model.begin(&qset).unwrap();
        // pixel 0 == 0 keeps instances {0,1,2,3}: labels a,a,a,b
        st.observe(0, &Answer::new(vec![0], 2).unwrap()).unwrap();
        let p = st.posterior().unwrap();
        assert!((p.probs()[0] - 0.75).abs() < 1e-12);
        assert!((p.probs()[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn degenerate_history_with_zero_alpha() {
        let (qset, data, ls) = toy();
        // duplicate pixel-0 pattern: condition on impossible combination
        let model = TabularJointModel::new(&qset, &data[..2], ls, 0.0).unwrap();
        let mut st = model.begin(&qset).unwrap();
        st.observe(0, &Answer::new(vec![1], 2).unwrap()).unwrap();
        assert!(matches!(st.posterior(), Err(Error::DegenerateHistory)));
    }

    #[test]
    fn joint_marginal_equals_posterior() {
        let (qset, data, ls) = toy();
        for alpha in [0.0, 1e-3, 0.5] {
            let model = TabularJointModel::new(&qset, &data, ls.clone(), alpha).unwrap();
            let mut st = model.begin(&qset).unwrap();
            st.observe(1, &Answer::new(vec![0], 2).unwrap()).unwrap();
            let post = st.posterior().unwrap();
            let joint = st.estimate_joint(2).unwrap();
            joint.validate().unwrap();
            for (y, m) in joint.label_marginal().iter().enumerate() {
                assert!((m - post.probs()[y]).abs() < 1e-12, "alpha={alpha}");
            }
        }
    }

    #[test]
    fn sequential_filtering_matches_from_scratch() {
        let (qset, data, ls) = toy();
        for alpha in [0.0, 1e-3] {
            let model = TabularJointModel::new(&qset, &data, ls.clone(), alpha).unwrap();
            let mut st = model.begin(&qset).unwrap();
            let mut history = History::empty();
            for (qid, v) in [(2usize, 1u8), (0, 0)] {
                let a = Answer::new(vec![v], 2).unwrap();
                st.observe(qid, &a).unwrap();
                history = extend_history(&history, qid, a).unwrap();
                let scratch = model.posterior_over(&model.consistent(&history)).unwrap();
                let filtered = st.posterior().unwrap();
                for (p, q) in filtered.probs().iter().zip(scratch.probs()) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn map_full_q_returns_training_label_on_unique_point() {
        let (qset, data, ls) = toy();
        let model = TabularJointModel::new(&qset, &data, ls, 0.0).unwrap();
        for (inst, y) in &data {
            assert_eq!(model.map_full_q(&qset, inst).unwrap(), *y);
        }
    }
}
