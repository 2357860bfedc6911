//! Oracles and baselines: exhaustive optimal query strategies on tiny
//! tabular instances, the Huffman and divide-and-conquer expected-length
//! bounds, CART decision trees, and the full-information MAP baseline.

use std::collections::HashMap;

use crate::core::{Instance, Posterior};
use crate::models::{ConditionedState, JointTable, PosteriorModel, TabularJointModel};
use crate::pursuit::{
    entropy_bits, mutual_information, run_ip, ExplanationTrace, TerminationConfig, TIE_EPS_BITS,
};
use crate::querysets::QuerySet;
use crate::{Error, Result};

/// Summary of a strategy's cost and fidelity.
#[derive(Debug, Clone)]
pub struct StrategyEvaluation {
    /// Mean queries asked over the data distribution.
    pub expected_length: f64,
    /// E_X[KL(p(Y|X) ‖ p(Y|explanation))] in bits; exact for tabular models,
    /// absent otherwise.
    pub sufficiency_gap_bits: Option<f64>,
    /// Decision-tree form of the strategy (oracle) or a short tag.
    pub description: String,
}

/// Budget discretization for the ε-sufficiency dynamic program, in bits of
/// the mean KL budget.
pub const BUDGET_RESOLUTION_BITS: f64 = 1e-4;

const MAX_ORACLE_QUERIES: usize = 8;
const MAX_ORACLE_INSTANCES: usize = 64;

struct OracleContext<'a> {
    model: &'a TabularJointModel,
    n_queries: usize,
    n_labels: usize,
    n: usize,
    /// sum-KL leaf cost of a member set, in bits
    leaf_cost: HashMap<u64, f64>,
}

impl OracleContext<'_> {
    fn members(&self, mask: u64) -> Vec<u32> {
        (0..self.n as u32).filter(|i| mask >> i & 1 == 1).collect()
    }

    /// Σ_{i∈mask} KL(p(Y|x_i) ‖ p(Y|mask)) in bits (unweighted sum; divide
    /// by n for the mean).
    fn leaf_cost_bits(&mut self, mask: u64) -> f64 {
        if let Some(&c) = self.leaf_cost.get(&mask) {
            return c;
        }
        let members = self.members(mask);
        let mut counts = vec![0.0f64; self.n_labels];
        for &i in &members {
            counts[self.model.label_of(i as usize)] += 1.0;
        }
        let total: f64 = members.len() as f64;
        let set_posterior: Vec<f64> = counts.iter().map(|c| c / total).collect();
        let mut cost = 0.0;
        for &i in &members {
            let px = self.model.posterior_given_instance(i as usize);
            for y in 0..self.n_labels {
                if px[y] > 0.0 {
                    cost += px[y] * (px[y] / set_posterior[y]).log2();
                }
            }
        }
        self.leaf_cost.insert(mask, cost.max(0.0));
        cost.max(0.0)
    }

    /// Children masks of splitting `mask` on query `qid`, omitting empty
    /// answers. A single child means the query is constant on the set.
    fn split(&self, mask: u64, qid: usize) -> Vec<u64> {
        let mut groups: HashMap<usize, u64> = HashMap::new();
        for &i in &self.members(mask) {
            let a = self.model.answer_table_index(i as usize, qid);
            *groups.entry(a).or_insert(0) |= 1u64 << i;
        }
        let mut children: Vec<u64> = groups.into_values().collect();
        children.sort_unstable();
        children
    }
}

/// Minimal expected explanation length over all query strategies, subject to
/// E_X[KL(p(Y|X) ‖ p(Y|explanation))] ≤ ε bits, computed by memoized search
/// over information sets (subsets of consistent instances). The data
/// distribution is uniform over the model's instances; the ε budget is
/// enforced globally by a dynamic program over (information set, remaining
/// budget) with the budget discretized to [`BUDGET_RESOLUTION_BITS`].
///
/// Enforced limits: |Q| ≤ 8, |X| ≤ 64, and the model must be unsmoothed
/// (α = 0) so set posteriors are exact empirical distributions.
pub fn exhaustive_optimal_strategy(
    model: &TabularJointModel,
    qset: &QuerySet,
    epsilon_bits: f64,
) -> Result<StrategyEvaluation> {
    if qset.len() > MAX_ORACLE_QUERIES {
        return Err(Error::SizeLimit(format!(
            "oracle accepts at most {MAX_ORACLE_QUERIES} queries, got {}",
            qset.len()
        )));
    }
    if model.len() > MAX_ORACLE_INSTANCES {
        return Err(Error::SizeLimit(format!(
            "oracle accepts at most {MAX_ORACLE_INSTANCES} instances, got {}",
            model.len()
        )));
    }
    if model.alpha() != 0.0 {
        return Err(Error::invalid("optimality oracle requires alpha = 0"));
    }
    if epsilon_bits < 0.0 {
        return Err(Error::invalid("epsilon must be >= 0"));
    }
    let n = model.len();
    let full: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut ctx = OracleContext {
        model,
        n_queries: qset.len(),
        n_labels: model.label_space().count(),
        n,
        leaf_cost: HashMap::new(),
    };

    if epsilon_bits == 0.0 {
        let mut memo: HashMap<u64, (f64, Option<usize>)> = HashMap::new();
        let value = optimal_zero_eps(&mut ctx, full, &mut memo);
        let description = describe(&ctx, full, &memo);
        return Ok(StrategyEvaluation {
            expected_length: value,
            sufficiency_gap_bits: Some(0.0),
            description,
        });
    }

    // budget units: one unit = BUDGET_RESOLUTION_BITS of mean KL
    // = BUDGET_RESOLUTION_BITS * n of summed KL
    let unit = BUDGET_RESOLUTION_BITS * n as f64;
    let budget = (epsilon_bits / BUDGET_RESOLUTION_BITS).floor() as u32;
    let mut memo: HashMap<(u64, u32), f64> = HashMap::new();
    let value = optimal_with_budget(&mut ctx, full, budget, unit, &mut memo);
    Ok(StrategyEvaluation {
        expected_length: value,
        sufficiency_gap_bits: None,
        description: format!("budgeted-oracle eps={epsilon_bits}"),
    })
}

fn optimal_zero_eps(
    ctx: &mut OracleContext,
    mask: u64,
    memo: &mut HashMap<u64, (f64, Option<usize>)>,
) -> f64 {
    if let Some(&(v, _)) = memo.get(&mask) {
        return v;
    }
    if ctx.leaf_cost_bits(mask) <= 1e-12 {
        memo.insert(mask, (0.0, None));
        return 0.0;
    }
    let size = mask.count_ones() as f64;
    let mut best = f64::INFINITY;
    let mut best_q = None;
    for qid in 0..ctx.n_queries {
        let children = ctx.split(mask, qid);
        if children.len() < 2 {
            continue; // constant on this set: no refinement
        }
        let mut cost = 1.0;
        for &child in &children {
            let w = child.count_ones() as f64 / size;
            cost += w * optimal_zero_eps(ctx, child, memo);
            if cost >= best {
                break;
            }
        }
        if cost < best - 1e-15 {
            best = cost;
            best_q = Some(qid);
        }
    }
    debug_assert!(best.is_finite(), "full refinement always reaches zero cost");
    memo.insert(mask, (best, best_q));
    best
}

fn optimal_with_budget(
    ctx: &mut OracleContext,
    mask: u64,
    budget: u32,
    unit: f64,
    memo: &mut HashMap<(u64, u32), f64>,
) -> f64 {
    if let Some(&v) = memo.get(&(mask, budget)) {
        return v;
    }
    // conservative rounding: a leaf is affordable only if its true cost fits
    let cost_units = ((ctx.leaf_cost_bits(mask) / unit) - 1e-9).ceil().max(0.0) as u32;
    if cost_units <= budget {
        memo.insert((mask, budget), 0.0);
        return 0.0;
    }
    let size = mask.count_ones() as f64;
    let mut best = f64::INFINITY;
    for qid in 0..ctx.n_queries {
        let children = ctx.split(mask, qid);
        if children.len() < 2 {
            continue;
        }
        // min-plus allocation of the budget across children:
        // g[b] = minimal Σ w_a · f(child_a, b_a) with Σ b_a = b
        let mut alloc = vec![0.0f64; budget as usize + 1];
        let mut first = true;
        for &child in &children {
            let w = child.count_ones() as f64 / size;
            let f_child: Vec<f64> = (0..=budget)
                .map(|b| w * optimal_with_budget(ctx, child, b, unit, memo))
                .collect();
            if first {
                alloc.copy_from_slice(&f_child);
                first = false;
            } else {
                let mut next = vec![f64::INFINITY; budget as usize + 1];
                for b in 0..=budget as usize {
                    for b_child in 0..=b {
                        let v = alloc[b - b_child] + f_child[b_child];
                        if v < next[b] {
                            next[b] = v;
                        }
                    }
                }
                alloc = next;
            }
        }
        let cost = 1.0 + alloc[budget as usize];
        if cost < best {
            best = cost;
        }
    }
    debug_assert!(best.is_finite());
    memo.insert((mask, budget), best);
    best
}

fn describe(ctx: &OracleContext, mask: u64, memo: &HashMap<u64, (f64, Option<usize>)>) -> String {
    match memo.get(&mask) {
        Some((_, None)) | None => {
            let members = ctx.members(mask);
            let mut counts = vec![0usize; ctx.n_labels];
            for &i in &members {
                counts[ctx.model.label_of(i as usize)] += 1;
            }
            let top = counts
                .iter()
                .enumerate()
                .max_by_key(|(_, c)| **c)
                .map(|(y, _)| y)
                .unwrap_or(0);
            format!("stop[y={top}]")
        }
        Some((_, Some(qid))) => {
            let mut parts = Vec::new();
            for child in ctx.split(mask, *qid) {
                parts.push(describe(ctx, child, memo));
            }
            format!("(q{qid} -> {})", parts.join(" | "))
        }
    }
}

/// Runs the pursuit loop over every instance of a dataset and averages the
/// explanation lengths. No sufficiency gap is computed here; see
/// [`ip_expected_length_tabular`] for the exact tabular variant.
pub fn ip_expected_length<M: PosteriorModel>(
    model: &M,
    qset: &QuerySet,
    dataset: &[(Instance, usize)],
    term: &TerminationConfig,
) -> Result<(StrategyEvaluation, Vec<ExplanationTrace>)> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset must be nonempty"));
    }
    let mut traces = Vec::with_capacity(dataset.len());
    let mut total = 0usize;
    for (inst, _) in dataset {
        let trace = run_ip(model, qset, inst, term)?;
        total += trace.explanation_length;
        traces.push(trace);
    }
    Ok((
        StrategyEvaluation {
            expected_length: total as f64 / dataset.len() as f64,
            sufficiency_gap_bits: None,
            description: "information-pursuit".into(),
        },
        traces,
    ))
}

/// Tabular variant with the exact empirical sufficiency gap
/// E_X[KL(p(Y|X) ‖ p(Y|S_L(X)))] computed over the model's own instances.
pub fn ip_expected_length_tabular(
    model: &TabularJointModel,
    qset: &QuerySet,
    term: &TerminationConfig,
) -> Result<(StrategyEvaluation, Vec<ExplanationTrace>)> {
    let n = model.len();
    let mut traces = Vec::with_capacity(n);
    let mut total_len = 0usize;
    let mut total_kl = 0.0;
    for i in 0..n {
        let trace = run_ip(model, qset, model.instance(i), term)?;
        total_len += trace.explanation_length;
        // recondition on the explanation proper (first L steps)
        let mut state = model.begin(qset)?;
        for step in trace.steps.iter().take(trace.explanation_length) {
            state.observe(step.query_id, &step.answer)?;
        }
        let expl_posterior = state.posterior()?;
        let px = model.posterior_given_instance(i);
        for y in 0..px.len() {
            if px[y] > 0.0 {
                total_kl += px[y] * (px[y] / expl_posterior.probs()[y]).log2();
            }
        }
        traces.push(trace);
    }
    Ok((
        StrategyEvaluation {
            expected_length: total_len as f64 / n as f64,
            sufficiency_gap_bits: Some((total_kl / n as f64).max(0.0)),
            description: "information-pursuit".into(),
        },
        traces,
    ))
}

// ---------------------------------------------------------------------
// Huffman bound

/// Expected Huffman codeword length for a prior: H(Y) ≤ E[len] < H(Y) + 1.
/// Zero-probability classes are dropped first; ties between merge weights are
/// resolved by insertion order.
pub fn huffman_expected_length(prior: &Posterior) -> Result<f64> {
    huffman_expected_length_impl(prior.probs(), false)
}

/// Test-only negative control: `corrupt` flips the first merge to take the
/// two heaviest nodes, which breaks the optimality bound on most priors.
pub fn huffman_expected_length_with_hook(prior: &[f64], corrupt: bool) -> Result<f64> {
    huffman_expected_length_impl(prior, corrupt)
}

fn huffman_expected_length_impl(prior: &[f64], corrupt: bool) -> Result<f64> {
    let positive: Vec<f64> = prior.iter().copied().filter(|&p| p > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::invalid("prior needs at least one positive class"));
    }
    if positive.len() == 1 {
        return Ok(0.0);
    }
    // nodes: (weight, insertion order, expected-length contribution)
    // merging adds the combined weight once per level crossed, so the total
    // E[len] accumulates merged weights
    let mut heap: Vec<(f64, usize, f64)> = positive
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, i, p))
        .collect();
    let mut next_id = heap.len();
    let mut expected = 0.0;
    let mut first_merge = true;
    while heap.len() > 1 {
        // extract the two smallest weights (ties by insertion order)
        heap.sort_by(|a, b| {
            a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1))
        });
        let (a, b) = if corrupt && first_merge {
            let b = heap.pop().unwrap();
            let a = heap.pop().unwrap();
            (a, b)
        } else {
            let a = heap.remove(0);
            let b = heap.remove(0);
            (a, b)
        };
        first_merge = false;
        let w = a.0 + b.0;
        expected += w;
        heap.push((w, next_id, w));
        next_id += 1;
    }
    Ok(expected)
}

// ---------------------------------------------------------------------
// Divide-and-conquer pursuit with the complete subset query set

const MAX_COMPLETE_LABELS: usize = 12;

/// Expected query count of the pursuit strategy when the query set contains
/// an indicator for every subset of labels and the label determines every
/// answer. Each step asks the subset of still-active labels whose
/// conditional mass is closest to 1/2 (ties: lexicographically smallest
/// subset bitmask); the run stops when a single label remains. The result
/// always lies in [H(Y), H(Y) + 1].
pub fn ip_complete_queryset_length(prior: &Posterior) -> Result<f64> {
    let probs = prior.probs();
    if probs.len() > MAX_COMPLETE_LABELS {
        return Err(Error::SizeLimit(format!(
            "complete-query-set simulation accepts at most {MAX_COMPLETE_LABELS} labels"
        )));
    }
    let active: Vec<(usize, f64)> = probs
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, p)| *p > 0.0)
        .collect();
    if active.is_empty() {
        return Err(Error::invalid("prior needs at least one positive class"));
    }
    let full_mask: u32 = active.iter().fold(0, |m, (i, _)| m | (1 << i));
    let mut memo: HashMap<u32, f64> = HashMap::new();
    Ok(expected_len_active(full_mask, probs, &mut memo))
}

fn mass(mask: u32, probs: &[f64]) -> f64 {
    probs
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, p)| p)
        .sum()
}

fn expected_len_active(mask: u32, probs: &[f64], memo: &mut HashMap<u32, f64>) -> f64 {
    if mask.count_ones() <= 1 {
        return 0.0;
    }
    if let Some(&v) = memo.get(&mask) {
        return v;
    }
    let total = mass(mask, probs);
    // pick the proper submask with conditional mass closest to 1/2,
    // enumerating submasks in ascending numeric order so ties land on the
    // lexicographically smallest bitmask
    let mut best: Option<(f64, u32)> = None;
    let mut sub = (mask.wrapping_sub(1)) & mask;
    // iterate all proper nonempty submasks ascending: collect then sort is
    // simplest at ≤ 2^12
    let mut subs = Vec::new();
    while sub != 0 {
        subs.push(sub);
        sub = sub.wrapping_sub(1) & mask;
    }
    subs.sort_unstable();
    for d in subs {
        let dist = (mass(d, probs) / total - 0.5).abs();
        if best.map_or(true, |(bd, _)| dist < bd - 1e-15) {
            best = Some((dist, d));
        }
    }
    let (_, d) = best.expect("a set of >= 2 labels has a proper submask");
    let inside = mass(d, probs) / total;
    let value = 1.0
        + inside * expected_len_active(d, probs, memo)
        + (1.0 - inside) * expected_len_active(mask & !d, probs, memo);
    memo.insert(mask, value);
    value
}

// ---------------------------------------------------------------------
// CART

#[derive(Debug, Clone, Copy)]
pub struct CartOptions {
    pub max_depth: usize,
    /// a split is admissible only if every nonempty child keeps at least
    /// this many instances
    pub min_leaf: usize,
}

impl Default for CartOptions {
    fn default() -> Self {
        CartOptions { max_depth: usize::MAX, min_leaf: 1 }
    }
}

#[derive(Debug, Clone)]
enum CartNode {
    Leaf { label: usize },
    Split { qid: usize, majority: usize, children: Vec<Option<usize>> },
}

/// Greedy decision tree splitting on query answers by information gain,
/// sharing the pursuit module's mutual-information routine.
#[derive(Debug, Clone)]
pub struct CartTree {
    nodes: Vec<CartNode>,
    n_labels: usize,
}

pub fn cart_train(
    qset: &QuerySet,
    dataset: &[(Instance, usize)],
    n_labels: usize,
    opts: &CartOptions,
) -> Result<CartTree> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset must be nonempty"));
    }
    let n_queries = qset.len();
    // precompute answer table indices (u16 covers alphabets up to 2^16)
    let mut answers: Vec<u16> = Vec::with_capacity(dataset.len() * n_queries);
    let mut cardinalities = Vec::with_capacity(n_queries);
    for q in 0..n_queries {
        let query = qset.query(q)?;
        let n_answers = query.answer_cardinality.pow(query.arity as u32);
        if n_answers > u16::MAX as usize + 1 {
            return Err(Error::SizeLimit("answer alphabet too large for CART".into()));
        }
        cardinalities.push(n_answers);
    }
    for (inst, _) in dataset {
        for q in 0..n_queries {
            let a = crate::querysets::answer_query(qset, inst, q)?;
            answers.push(a.table_index(qset.query(q)?.answer_cardinality) as u16);
        }
    }
    let labels: Vec<usize> = dataset.iter().map(|(_, y)| *y).collect();
    let mut tree = CartTree { nodes: Vec::new(), n_labels };
    let all: Vec<u32> = (0..dataset.len() as u32).collect();
    build_node(
        &mut tree,
        &answers,
        &labels,
        n_queries,
        &cardinalities,
        all,
        0,
        opts,
    )?;
    Ok(tree)
}

#[allow(clippy::too_many_arguments)]
fn build_node(
    tree: &mut CartTree,
    answers: &[u16],
    labels: &[usize],
    n_queries: usize,
    cardinalities: &[usize],
    members: Vec<u32>,
    depth: usize,
    opts: &CartOptions,
) -> Result<usize> {
    let mut counts = vec![0usize; tree.n_labels];
    for &i in &members {
        counts[labels[i as usize]] += 1;
    }
    let majority = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(y, _)| y)
        .unwrap_or(0);
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    let id = tree.nodes.len();
    tree.nodes.push(CartNode::Leaf { label: majority });
    if pure || depth >= opts.max_depth {
        return Ok(id);
    }

    // best split by information gain = I(answer; label | node)
    let n = members.len() as f64;
    let mut best: Option<(f64, usize)> = None;
    for qid in 0..n_queries {
        let n_answers = cardinalities[qid];
        let mut joint = vec![0.0f64; n_answers * tree.n_labels];
        for &i in &members {
            let a = answers[i as usize * n_queries + qid] as usize;
            joint[labels[i as usize] * n_answers + a] += 1.0 / n;
        }
        let table = JointTable::new(n_answers, tree.n_labels, joint)?;
        let gain = mutual_information(&table)?;
        // min_leaf admissibility
        let mut child_sizes = vec![0usize; n_answers];
        for &i in &members {
            child_sizes[answers[i as usize * n_queries + qid] as usize] += 1;
        }
        let nonempty = child_sizes.iter().filter(|&&c| c > 0).count();
        if nonempty < 2 || child_sizes.iter().any(|&c| c > 0 && c < opts.min_leaf) {
            continue;
        }
        if best.map_or(true, |(bg, _)| gain > bg + TIE_EPS_BITS) {
            best = Some((gain, qid));
        }
    }
    let Some((_gain, qid)) = best else {
        return Ok(id); // no admissible split: every query is constant here
    };
    // impure nodes split even at zero gain (the XOR root case): a gain-0
    // partition can expose gain at the next level, and recursion terminates
    // because every child is strictly smaller
    let n_answers = cardinalities[qid];
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); n_answers];
    for &i in &members {
        buckets[answers[i as usize * n_queries + qid] as usize].push(i);
    }
    let mut children = vec![None; n_answers];
    for (a, bucket) in buckets.into_iter().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        let child = build_node(
            tree,
            answers,
            labels,
            n_queries,
            cardinalities,
            bucket,
            depth + 1,
            opts,
        )?;
        children[a] = Some(child);
    }
    tree.nodes[id] = CartNode::Split { qid, majority, children };
    Ok(id)
}

impl CartTree {
    /// Predicted label; unseen answer values fall back to the node majority.
    pub fn predict(&self, qset: &QuerySet, instance: &Instance) -> Result<usize> {
        Ok(self.walk(qset, instance)?.0)
    }

    /// Number of queries asked along the decision path.
    pub fn path_length(&self, qset: &QuerySet, instance: &Instance) -> Result<usize> {
        Ok(self.walk(qset, instance)?.1)
    }

    fn walk(&self, qset: &QuerySet, instance: &Instance) -> Result<(usize, usize)> {
        let mut node = 0usize;
        let mut depth = 0usize;
        loop {
            match &self.nodes[node] {
                CartNode::Leaf { label } => return Ok((*label, depth)),
                CartNode::Split { qid, majority, children } => {
                    let a = crate::querysets::answer_query(qset, instance, *qid)?;
                    let idx = a.table_index(qset.query(*qid)?.answer_cardinality);
                    depth += 1;
                    match children.get(idx).copied().flatten() {
                        Some(child) => node = child,
                        None => return Ok((*majority, depth)),
                    }
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// MAP label from the answers to every query: the accuracy ceiling for any
/// stopping rule on the same model.
pub fn map_using_full_q<M: PosteriorModel>(
    model: &M,
    qset: &QuerySet,
    instance: &Instance,
) -> Result<usize> {
    model.map_full_q(qset, instance)
}

/// Convenience: H(Y) of a prior in bits.
pub fn prior_entropy_bits(prior: &Posterior) -> f64 {
    entropy_bits(prior.probs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{LabelSpace, Payload};
    use crate::querysets::build_patch_queryset;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bits_instance(id: &str, bits: Vec<u8>) -> Instance {
        Instance::new(id, Payload::Bits { height: 1, width: bits.len(), bits })
    }

    fn tabular(rows: &[(Vec<u8>, usize)], n_labels: usize) -> (QuerySet, TabularJointModel) {
        let width = rows[0].0.len();
        let qset = build_patch_queryset(1, width, 1).unwrap();
        let data: Vec<(Instance, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, (b, y))| (bits_instance(&format!("i{i}"), b.clone()), *y))
            .collect();
        let ls = LabelSpace::new((0..n_labels).map(|i| format!("c{i}"))).unwrap();
        let model = TabularJointModel::new(&qset, &data, ls, 0.0).unwrap();
        (qset, model)
    }

    #[test]
    fn one_query_determines_label() {
        let rows = vec![
            (vec![0, 0], 0),
            (vec![0, 1], 0),
            (vec![1, 0], 1),
            (vec![1, 1], 1),
        ];
        let (qset, model) = tabular(&rows, 2);
        let eval = exhaustive_optimal_strategy(&model, &qset, 0.0).unwrap();
        assert!((eval.expected_length - 1.0).abs() < 1e-12);
        assert!(eval.description.starts_with("(q0"));
    }

    #[test]
    fn xor_needs_both_queries() {
        let rows = vec![
            (vec![0, 0], 0),
            (vec![0, 1], 1),
            (vec![1, 0], 1),
            (vec![1, 1], 0),
        ];
        let (qset, model) = tabular(&rows, 2);
        let eval = exhaustive_optimal_strategy(&model, &qset, 0.0).unwrap();
        assert!((eval.expected_length - 2.0).abs() < 1e-12);
    }

    /// Second, independently written brute force over all strategy trees.
    fn brute_force_optimal(
        answers: &[Vec<usize>],
        labels: &[usize],
        members: &[usize],
        asked: u32,
        n_queries: usize,
    ) -> f64 {
        // the generator gives duplicate answer vectors one shared label, so
        // p(Y|x) is one-hot and zero leaf cost is exactly label purity
        let first = labels[members[0]];
        let pure = members.iter().all(|&i| labels[i] == first);
        if pure {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for q in 0..n_queries {
            if asked >> q & 1 == 1 {
                continue;
            }
            let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
            for &i in members {
                groups.entry(answers[i][q]).or_default().push(i);
            }
            if groups.len() < 2 {
                continue;
            }
            let mut cost = 1.0;
            for group in groups.values() {
                let w = group.len() as f64 / members.len() as f64;
                cost += w * brute_force_optimal(answers, labels, group, asked | 1 << q, n_queries);
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn oracle_matches_independent_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let n_queries = rng.random_range(2..=4usize);
            let n = rng.random_range(4..=16usize);
            // ensure solvable at eps = 0: distinct answer vectors get distinct labels
            let mut rows: Vec<(Vec<u8>, usize)> = Vec::new();
            let mut seen: HashMap<Vec<u8>, usize> = HashMap::new();
            for _ in 0..n {
                let bits: Vec<u8> = (0..n_queries).map(|_| rng.random_range(0..2) as u8).collect();
                let label = *seen.entry(bits.clone()).or_insert_with(|| rng.random_range(0..3));
                rows.push((bits, label));
            }
            let (qset, model) = tabular(&rows, 3);
            let eval = exhaustive_optimal_strategy(&model, &qset, 0.0).unwrap();
            let answers: Vec<Vec<usize>> = rows
                .iter()
                .map(|(b, _)| b.iter().map(|&v| v as usize).collect())
                .collect();
            let labels: Vec<usize> = rows.iter().map(|(_, y)| *y).collect();
            let members: Vec<usize> = (0..n).collect();
            let brute = brute_force_optimal(&answers, &labels, &members, 0, n_queries);
            assert!(
                (eval.expected_length - brute).abs() < 1e-9,
                "trial {trial}: oracle {} vs brute {brute}",
                eval.expected_length
            );
        }
    }

    #[test]
    fn huffman_known_values() {
        let uniform8 = Posterior::new(vec![0.125; 8]).unwrap();
        assert!((huffman_expected_length(&uniform8).unwrap() - 3.0).abs() < 1e-12);
        let dyadic = Posterior::new(vec![0.5, 0.25, 0.125, 0.125]).unwrap();
        assert!((huffman_expected_length(&dyadic).unwrap() - 1.75).abs() < 1e-12);
    }

    /// Independent priority-queue reimplementation for cross-checking.
    fn huffman_reference(prior: &[f64]) -> f64 {
        let mut weights: Vec<f64> = prior.iter().copied().filter(|&p| p > 0.0).collect();
        if weights.len() < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        while weights.len() > 1 {
            weights.sort_by(|a, b| b.total_cmp(a)); // descending
            let a = weights.pop().unwrap();
            let b = weights.pop().unwrap();
            total += a + b;
            weights.push(a + b);
        }
        total
    }

    #[test]
    fn huffman_random_priors_in_entropy_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let k = rng.random_range(2..=10usize);
            let mut p: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = p.iter().sum();
            for v in &mut p {
                *v /= s;
            }
            let prior = Posterior::new(p.clone()).unwrap();
            let e = huffman_expected_length(&prior).unwrap();
            let h = prior_entropy_bits(&prior);
            assert!(e >= h - 1e-9, "E[len] {e} < H {h}");
            assert!(e < h + 1.0 + 1e-9, "E[len] {e} >= H+1 {h}");
            let reference = huffman_reference(&p);
            assert!((e - reference).abs() < 1e-9);
        }
    }

    #[test]
    fn corruption_hook_breaks_bound() {
        // skewed prior: merging the two heaviest nodes first overshoots H+1
        let p = vec![0.9, 0.05, 0.03, 0.02];
        let good = huffman_expected_length_with_hook(&p, false).unwrap();
        let bad = huffman_expected_length_with_hook(&p, true).unwrap();
        let h = entropy_bits(&p);
        assert!(good < h + 1.0 + 1e-9);
        assert!(bad > good, "corrupt merge should cost more: {bad} vs {good}");
        assert!(bad >= h + 1.0 - 1e-9, "corrupted merge must break the H+1 bound");
    }

    #[test]
    fn complete_queryset_halves_uniform_powers_of_two() {
        for k in 1..=3u32 {
            let n = 1usize << k;
            let prior = Posterior::new(vec![1.0 / n as f64; n]).unwrap();
            let e = ip_complete_queryset_length(&prior).unwrap();
            assert!((e - k as f64).abs() < 1e-12, "2^{k} classes -> {e}");
        }
    }

    #[test]
    fn complete_queryset_dyadic_prior() {
        let prior = Posterior::new(vec![0.5, 0.25, 0.125, 0.125]).unwrap();
        let e = ip_complete_queryset_length(&prior).unwrap();
        // full-enumeration oracle over the recursion: splits {0} then {1}
        // then {2}/{3}: E = 1 + 0.5·(1 + 0.5·(1)) ... = 1.75
        assert!((e - 1.75).abs() < 1e-12);
        assert!((1.75..=2.75).contains(&e));
    }

    #[test]
    fn cart_one_query_toy() {
        let rows = vec![
            (vec![0, 0], 0),
            (vec![0, 1], 0),
            (vec![1, 0], 1),
            (vec![1, 1], 1),
        ];
        let (qset, _) = tabular(&rows, 2);
        let data: Vec<(Instance, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, (b, y))| (bits_instance(&format!("i{i}"), b.clone()), *y))
            .collect();
        let tree = cart_train(&qset, &data, 2, &CartOptions::default()).unwrap();
        for (inst, y) in &data {
            assert_eq!(tree.predict(&qset, inst).unwrap(), *y);
            assert_eq!(tree.path_length(&qset, inst).unwrap(), 1);
        }
    }

    #[test]
    fn cart_xor_depth() {
        let rows = vec![
            (vec![0, 0], 0),
            (vec![0, 1], 1),
            (vec![1, 0], 1),
            (vec![1, 1], 0),
        ];
        let (qset, _) = tabular(&rows, 2);
        let data: Vec<(Instance, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, (b, y))| (bits_instance(&format!("i{i}"), b.clone()), *y))
            .collect();
        let full = cart_train(&qset, &data, 2, &CartOptions { max_depth: 2, min_leaf: 1 }).unwrap();
        let correct = data
            .iter()
            .filter(|(inst, y)| full.predict(&qset, inst).unwrap() == *y)
            .count();
        assert_eq!(correct, 4);
        // XOR has zero single-query gain, so depth 1 stops at the root
        let stump = cart_train(&qset, &data, 2, &CartOptions { max_depth: 1, min_leaf: 1 }).unwrap();
        let correct = data
            .iter()
            .filter(|(inst, y)| stump.predict(&qset, inst).unwrap() == *y)
            .count();
        assert_eq!(correct, 2, "majority stump gets half of XOR");
    }

    #[test]
    fn map_full_q_bounds_ip_on_exact_toys() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let n_queries = 4;
            let n = 16;
            let mut rows: Vec<(Vec<u8>, usize)> = Vec::new();
            for _ in 0..n {
                let bits: Vec<u8> = (0..n_queries).map(|_| rng.random_range(0..2) as u8).collect();
                let label = (bits[0] ^ bits[1]) as usize;
                rows.push((bits, label));
            }
            let (qset, model) = tabular(&rows, 2);
            let term = TerminationConfig::confidence(0.1, 1, n_queries);
            let mut ip_correct = 0;
            let mut map_correct = 0;
            for (i, (_, y)) in rows.iter().enumerate() {
                let trace = run_ip(&model, &qset, model.instance(i), &term).unwrap();
                ip_correct += usize::from(trace.predicted_label == *y);
                map_correct +=
                    usize::from(map_using_full_q(&model, &qset, model.instance(i)).unwrap() == *y);
            }
            assert!(map_correct >= ip_correct);
        }
    }
}
