//! Domain types shared by every other module: label spaces, queries, answers,
//! histories, posteriors, and instances.
//!
//! Everything here is immutable after construction and safe to share across
//! threads.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ordered set of class labels. Index ↔ name is a stable bijection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    labels: Vec<String>,
}

impl LabelSpace {
    /// Builds a label space from unique names. Requires at least two labels.
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = names.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::invalid("label space needs at least 2 labels"));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::invalid(format!("duplicate label name {a:?}")));
            }
        }
        Ok(LabelSpace { labels })
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn names(&self) -> &[String] {
        &self.labels
    }
}

/// One interpretable query: an id into its query set, the number of primitive
/// answer slots it reads, and the size of the per-slot answer alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub id: usize,
    pub arity: usize,
    pub answer_cardinality: usize,
}

/// The answer to one query: a fixed-length vector of symbols, one per slot.
///
/// Symbols are kept as small integers rather than packed bits so non-binary
/// alphabets need no format change.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Answer {
    values: Vec<u8>,
}

impl Answer {
    pub fn new(values: Vec<u8>, cardinality: usize) -> Result<Self> {
        if values.iter().any(|&v| (v as usize) >= cardinality) {
            return Err(Error::invalid(format!(
                "answer symbol out of alphabet (cardinality {cardinality})"
            )));
        }
        Ok(Answer { values })
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn arity(&self) -> usize {
        self.values.len()
    }

    /// Canonical row index of this answer in a joint table: slot `j`
    /// contributes `values[j] * cardinality^j` (slot 0 is least significant).
    pub fn table_index(&self, cardinality: usize) -> usize {
        let mut idx = 0usize;
        let mut base = 1usize;
        for &v in &self.values {
            idx += (v as usize) * base;
            base *= cardinality;
        }
        idx
    }

    /// Inverse of [`Answer::table_index`].
    pub fn from_table_index(mut idx: usize, arity: usize, cardinality: usize) -> Self {
        let mut values = Vec::with_capacity(arity);
        for _ in 0..arity {
            values.push((idx % cardinality) as u8);
            idx /= cardinality;
        }
        Answer { values }
    }
}

/// Ordered list of (query id, answer) pairs. A history of length k names the
/// event "all instances agreeing with the observed one on these k pairs".
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct History {
    steps: Vec<(usize, Answer)>,
}

impl History {
    pub fn empty() -> Self {
        History::default()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[(usize, Answer)] {
        &self.steps
    }

    pub fn contains(&self, qid: usize) -> bool {
        self.steps.iter().any(|(q, _)| *q == qid)
    }

    /// Order-insensitive equality on the set of pairs. Weaker than `==`;
    /// used only by the tabular event filter.
    pub fn same_pairs(&self, other: &History) -> bool {
        self.steps.len() == other.steps.len()
            && self
                .steps
                .iter()
                .all(|(q, a)| other.steps.iter().any(|(q2, a2)| q2 == q && a2 == a))
    }
}

/// Returns a new history extending `h` by one (query, answer) pair.
/// The original is unchanged. Re-asking a query is an error.
pub fn extend_history(h: &History, qid: usize, answer: Answer) -> Result<History> {
    if h.contains(qid) {
        return Err(Error::DuplicateQuery { qid });
    }
    let mut steps = h.steps.clone();
    steps.push((qid, answer));
    Ok(History { steps })
}

/// Probability vector over a label space: nonnegative, sums to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    probs: Vec<f64>,
}

impl Posterior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("posterior entries must be finite and >= 0"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "posterior sums to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(Posterior { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Posterior {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the most probable label; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().cloned().fold(0.0, f64::max)
    }

    /// Shannon entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        crate::pursuit::entropy_bits(&self.probs)
    }
}

/// Per-dataset payload an instance carries. Every query in the active query
/// set must be answerable on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    /// Binary image, row-major, length = height * width.
    Bits { height: usize, width: usize, bits: Vec<u8> },
    /// One binary value per attribute column.
    BitVector(Vec<u8>),
    /// Set of stems present in a document (sorted, deduplicated).
    StemSet(Vec<String>),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Bits { .. } => "bits",
            Payload::BitVector(_) => "bitvector",
            Payload::StemSet(_) => "stemset",
        }
    }
}

/// One observed input: an id plus an opaque payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub payload: Payload,
}

impl Instance {
    pub fn new(id: impl Into<String>, payload: Payload) -> Self {
        Instance { id: id.into(), payload }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_space_rejects_duplicates_and_singletons() {
        assert!(LabelSpace::new(["a", "b", "a"]).is_err());
        assert!(LabelSpace::new(["only"]).is_err());
        let ls = LabelSpace::new(["x", "y", "z"]).unwrap();
        assert_eq!(ls.count(), 3);
        assert_eq!(ls.index_of("y"), Some(1));
        assert_eq!(ls.name(2), "z");
    }

    #[test]
    fn answer_alphabet_checked() {
        assert!(Answer::new(vec![0, 1, 2], 2).is_err());
        let a = Answer::new(vec![1, 0, 1], 2).unwrap();
        assert_eq!(a.table_index(2), 0b101);
        assert_eq!(Answer::from_table_index(5, 3, 2), a);
    }

    #[test]
    fn extend_history_is_persistent_and_rejects_duplicates() {
        let h0 = History::empty();
        let a = Answer::new(vec![1], 2).unwrap();
        let h1 = extend_history(&h0, 3, a.clone()).unwrap();
        assert_eq!(h0.len(), 0);
        assert_eq!(h1.len(), 1);
        assert!(matches!(
            extend_history(&h1, 3, a.clone()),
            Err(Error::DuplicateQuery { qid: 3 })
        ));
        let h2 = extend_history(&h1, 1, a.clone()).unwrap();
        let h3 = extend_history(&h2, 2, a).unwrap();
        let ids: Vec<usize> = h3.steps().iter().map(|(q, _)| *q).collect();
        assert_eq!(ids, vec![3, 1, 2]);
    }

    #[test]
    fn history_equality_is_order_sensitive_pair_equality_is_not() {
        let a0 = Answer::new(vec![0], 2).unwrap();
        let a1 = Answer::new(vec![1], 2).unwrap();
        let h_ab = extend_history(
            &extend_history(&History::empty(), 0, a0.clone()).unwrap(),
            1,
            a1.clone(),
        )
        .unwrap();
        let h_ba = extend_history(
            &extend_history(&History::empty(), 1, a1).unwrap(),
            0,
            a0,
        )
        .unwrap();
        assert_ne!(h_ab, h_ba);
        assert!(h_ab.same_pairs(&h_ba));
    }

    #[test]
    fn posterior_validates() {
        assert!(Posterior::new(vec![0.5, 0.6]).is_err());
        assert!(Posterior::new(vec![-0.1, 1.1]).is_err());
        let p = Posterior::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(p.argmax(), 1);
    }
}
