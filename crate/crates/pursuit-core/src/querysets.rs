//! Concrete interpretable query families: overlapping w×w image patches,
//! binary attributes, and word-presence queries over a tf-idf vocabulary.
//!
//! Query ids are dense integers `0..len` in a canonical order so downstream
//! tie-breaking is deterministic: patches by row-major top-left corner,
//! attributes by column order, words by descending tf-idf score with ties
//! broken lexicographically.

use std::collections::{BTreeMap, BTreeSet};

use crate::core::{Answer, Instance, Payload, Query};
use crate::stem::stem_tokens;
use crate::{Error, Result};

/// All (H−w+1)(W−w+1) overlapping w×w patch positions on an H×W binary image.
/// Each query's answer is the w² pixel values of its patch, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchQuerySet {
    pub image_height: usize,
    pub image_width: usize,
    pub w: usize,
}

/// One binary presence query per named attribute, in column order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeQuerySet {
    pub names: Vec<String>,
}

/// One binary presence query per vocabulary stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordQuerySet {
    pub vocabulary: Vec<String>,
}

/// A family of interpretable queries over one payload kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuerySet {
    Patch(PatchQuerySet),
    Attribute(AttributeQuerySet),
    Word(WordQuerySet),
}

/// Builds the patch query set for an `height`×`width` image with side `w`.
pub fn build_patch_queryset(height: usize, width: usize, w: usize) -> Result<QuerySet> {
    if w < 1 || w > height.min(width) {
        return Err(Error::invalid(format!(
            "patch side {w} out of range for {height}x{width} image"
        )));
    }
    Ok(QuerySet::Patch(PatchQuerySet {
        image_height: height,
        image_width: width,
        w,
    }))
}

/// Builds the attribute query set from column names.
pub fn build_attribute_queryset(names: Vec<String>) -> Result<QuerySet> {
    if names.is_empty() {
        return Err(Error::invalid("attribute query set needs at least one attribute"));
    }
    Ok(QuerySet::Attribute(AttributeQuerySet { names }))
}

/// Builds the word query set: stems the corpus, scores stems by tf-idf
/// (tf = raw count in a document, idf = ln(n_docs / (1 + doc_frequency)),
/// score = Σ over documents of tf·idf), and keeps the top `vocab_size` stems.
/// Ties are broken lexicographically; the id order is descending score.
pub fn build_word_queryset(corpus: &[String], vocab_size: usize) -> Result<QuerySet> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    if vocab_size == 0 {
        return Err(Error::invalid("vocab_size must be >= 1"));
    }
    let n_docs = corpus.len() as f64;
    let mut total_count: BTreeMap<String, u64> = BTreeMap::new();
    let mut doc_freq: BTreeMap<String, u64> = BTreeMap::new();
    for doc in corpus {
        let stems = stem_tokens(doc);
        let mut seen = BTreeSet::new();
        for s in stems {
            *total_count.entry(s.clone()).or_insert(0) += 1;
            if seen.insert(s.clone()) {
                *doc_freq.entry(s).or_insert(0) += 1;
            }
        }
    }
    // score(word) = Σ_d tf(d, word) · idf(word) = total_count · idf
    let mut scored: Vec<(String, f64)> = total_count
        .into_iter()
        .map(|(word, tc)| {
            let df = doc_freq[&word] as f64;
            let idf = (n_docs / (1.0 + df)).ln();
            (word, tc as f64 * idf)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(vocab_size);
    Ok(QuerySet::Word(WordQuerySet {
        vocabulary: scored.into_iter().map(|(w, _)| w).collect(),
    }))
}

/// Builds a word query set from an explicit vocabulary (id order preserved).
pub fn word_queryset_from_vocab(vocab: Vec<String>) -> Result<QuerySet> {
    if vocab.is_empty() {
        return Err(Error::invalid("empty vocabulary"));
    }
    let mut seen = BTreeSet::new();
    for v in &vocab {
        if !seen.insert(v.clone()) {
            return Err(Error::invalid(format!("duplicate vocabulary stem {v:?}")));
        }
    }
    Ok(QuerySet::Word(WordQuerySet { vocabulary: vocab }))
}

impl QuerySet {
    /// Number of queries in the set.
    pub fn len(&self) -> usize {
        match self {
            QuerySet::Patch(p) => {
                (p.image_height - p.w + 1) * (p.image_width - p.w + 1)
            }
            QuerySet::Attribute(a) => a.names.len(),
            QuerySet::Word(w) => w.vocabulary.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn query(&self, qid: usize) -> Result<Query> {
        if qid >= self.len() {
            return Err(Error::QueryOutOfRange { qid, len: self.len() });
        }
        let arity = match self {
            QuerySet::Patch(p) => p.w * p.w,
            _ => 1,
        };
        Ok(Query { id: qid, arity, answer_cardinality: 2 })
    }

    /// Total number of primitive answer slots the query family reads:
    /// pixels for patches, one slot per attribute or vocabulary word.
    pub fn slot_count(&self) -> usize {
        match self {
            QuerySet::Patch(p) => p.image_height * p.image_width,
            QuerySet::Attribute(a) => a.names.len(),
            QuerySet::Word(w) => w.vocabulary.len(),
        }
    }

    /// The primitive slots query `qid` reads, in the query's slot order.
    pub fn slots(&self, qid: usize) -> Result<Vec<usize>> {
        match self {
            QuerySet::Patch(p) => Ok(covered_pixels(p, qid)),
            _ => {
                self.query(qid)?;
                Ok(vec![qid])
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            QuerySet::Patch(_) => "patch",
            QuerySet::Attribute(_) => "attribute",
            QuerySet::Word(_) => "word",
        }
    }

    fn payload_kind(&self) -> &'static str {
        match self {
            QuerySet::Patch(_) => "bits",
            QuerySet::Attribute(_) => "bitvector",
            QuerySet::Word(_) => "stemset",
        }
    }

    /// Evaluates the instance's full primitive-slot vector (one symbol per
    /// slot), the representation models condition on.
    pub fn slot_vector(&self, instance: &Instance) -> Result<Vec<u8>> {
        match (self, &instance.payload) {
            (QuerySet::Patch(p), Payload::Bits { height, width, bits }) => {
                if *height != p.image_height || *width != p.image_width {
                    return Err(Error::invalid(format!(
                        "image is {height}x{width}, query set expects {}x{}",
                        p.image_height, p.image_width
                    )));
                }
                Ok(bits.clone())
            }
            (QuerySet::Attribute(a), Payload::BitVector(bits)) => {
                if bits.len() != a.names.len() {
                    return Err(Error::invalid(format!(
                        "attribute vector has {} entries, query set expects {}",
                        bits.len(),
                        a.names.len()
                    )));
                }
                Ok(bits.clone())
            }
            (QuerySet::Word(w), Payload::StemSet(stems)) => Ok(w
                .vocabulary
                .iter()
                .map(|v| u8::from(stems.binary_search(v).is_ok()))
                .collect()),
            (qs, payload) => Err(Error::IncompatiblePayload {
                expected: qs.payload_kind(),
                found: payload.kind(),
            }),
        }
    }
}

/// Answers query `qid` on `instance`. Deterministic: the same pair always
/// yields the same answer.
pub fn answer_query(qset: &QuerySet, instance: &Instance, qid: usize) -> Result<Answer> {
    let q = qset.query(qid)?;
    match (qset, &instance.payload) {
        (QuerySet::Patch(p), Payload::Bits { height, width, bits }) => {
            if *height != p.image_height || *width != p.image_width {
                return Err(Error::invalid(format!(
                    "image is {height}x{width}, query set expects {}x{}",
                    p.image_height, p.image_width
                )));
            }
            let values = covered_pixels(p, qid).iter().map(|&px| bits[px]).collect();
            Answer::new(values, q.answer_cardinality)
        }
        (QuerySet::Attribute(a), Payload::BitVector(bits)) => {
            if bits.len() != a.names.len() {
                return Err(Error::invalid("attribute vector length mismatch"));
            }
            Answer::new(vec![bits[qid]], 2)
        }
        (QuerySet::Word(w), Payload::StemSet(stems)) => {
            let present = stems.binary_search(&w.vocabulary[qid]).is_ok();
            Answer::new(vec![u8::from(present)], 2)
        }
        (qs, payload) => Err(Error::IncompatiblePayload {
            expected: qs.payload_kind(),
            found: payload.kind(),
        }),
    }
}

/// Row-major pixel indices covered by patch query `qid`: exactly w²
/// contiguous block positions.
pub fn covered_pixels(p: &PatchQuerySet, qid: usize) -> Vec<usize> {
    let cols = p.image_width - p.w + 1;
    let (row, col) = (qid / cols, qid % cols);
    let mut out = Vec::with_capacity(p.w * p.w);
    for i in 0..p.w {
        for j in 0..p.w {
            out.push((row + i) * p.image_width + (col + j));
        }
    }
    out
}

/// Builds a stem-set payload from raw text (sorted, deduplicated).
pub fn text_to_stemset(text: &str) -> Payload {
    let mut stems = stem_tokens(text);
    stems.sort();
    stems.dedup();
    Payload::StemSet(stems)
}
