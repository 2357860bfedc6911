//! Per-class Bernoulli mixture with exact marginalization over the discrete
//! component, fitted by EM.
//!
//! Primitive answer slots are conditionally independent given (label,
//! component); conditioning on a history multiplies per-slot likelihoods into
//! the component weights, and every joint table is an exact sum over the K
//! components.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::core::{Answer, History, Instance, LabelSpace, Posterior};
use crate::core::extend_history;
use crate::models::{
    expand_compact_table, ConditionedState, JointTable, ObservedSlots, PosteriorModel,
};
use crate::querysets::QuerySet;
use crate::{Error, Result};

/// Default clamp keeping every Bernoulli parameter away from 0 and 1 so
/// likelihood ratios, KL terms, and mutual information stay finite.
pub const THETA_MIN: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct BernoulliMixtureModel {
    labelspace: LabelSpace,
    pub k: usize,
    pub n_slots: usize,
    /// p(y), label order
    prior: Vec<f64>,
    /// π[y][k], y-major
    mix: Vec<f64>,
    /// θ[y][k][j], (y,k)-major rows of n_slots
    theta: Vec<f64>,
    log_theta: Vec<f64>,
    log_1m_theta: Vec<f64>,
    log_mix: Vec<f64>,
    pub theta_min: f64,
}

impl BernoulliMixtureModel {
    pub fn new(
        labelspace: LabelSpace,
        k: usize,
        n_slots: usize,
        prior: Vec<f64>,
        mix: Vec<f64>,
        theta: Vec<f64>,
        theta_min: f64,
    ) -> Result<Self> {
        let n_labels = labelspace.count();
        if k == 0 {
            return Err(Error::invalid("K must be >= 1"));
        }
        if prior.len() != n_labels || mix.len() != n_labels * k || theta.len() != n_labels * k * n_slots
        {
            return Err(Error::invalid("mixture tensor dimensions inconsistent"));
        }
        if (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("label prior must sum to 1"));
        }
        for y in 0..n_labels {
            let s: f64 = mix[y * k..(y + 1) * k].iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("mixture weights for label {y} must sum to 1")));
            }
        }
        if theta.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::invalid("theta must lie strictly inside (0, 1)"));
        }
        let log_theta = theta.iter().map(|t| t.ln()).collect();
        let log_1m_theta = theta.iter().map(|t| (1.0 - t).ln()).collect();
        let log_mix = mix.iter().map(|m| if *m > 0.0 { m.ln() } else { f64::NEG_INFINITY }).collect();
        Ok(BernoulliMixtureModel {
            labelspace,
            k,
            n_slots,
            prior,
            mix,
            theta,
            log_theta,
            log_1m_theta,
            log_mix,
            theta_min,
        })
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn mix_weights(&self) -> &[f64] {
        &self.mix
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    #[inline]
    pub fn theta_at(&self, y: usize, k: usize, slot: usize) -> f64 {
        self.theta[(y * self.k + k) * self.n_slots + slot]
    }

    #[inline]
    fn log_lik_slot(&self, y: usize, k: usize, slot: usize, value: u8) -> f64 {
        let idx = (y * self.k + k) * self.n_slots + slot;
        if value == 1 {
            self.log_theta[idx]
        } else {
            self.log_1m_theta[idx]
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl PosteriorModel for BernoulliMixtureModel {
    type State<'a> = MixtureState<'a>;

    fn label_space(&self) -> &LabelSpace {
        &self.labelspace
    }

    fn begin<'a>(&'a self, qset: &'a QuerySet) -> Result<MixtureState<'a>> {
        if qset.slot_count() != self.n_slots {
            return Err(Error::invalid(format!(
                "query set has {} slots, model expects {}",
                qset.slot_count(),
                self.n_slots
            )));
        }
        let n_labels = self.labelspace.count();
        let mut log_w = vec![0.0; n_labels * self.k];
        for y in 0..n_labels {
            for k in 0..self.k {
                log_w[y * self.k + k] = self.log_mix[y * self.k + k];
            }
        }
        Ok(MixtureState {
            model: self,
            qset,
            log_w,
            observed: ObservedSlots::new(self.n_slots),
            history: History::empty(),
        })
    }

    fn map_full_q(&self, qset: &QuerySet, instance: &Instance) -> Result<usize> {
        let slot_vec = qset.slot_vector(instance)?;
        let n_labels = self.labelspace.count();
        let mut best = (f64::NEG_INFINITY, 0usize);
        for y in 0..n_labels {
            let mut per_k = Vec::with_capacity(self.k);
            for k in 0..self.k {
                let mut ll = self.log_mix[y * self.k + k];
                let base = (y * self.k + k) * self.n_slots;
                for (j, &v) in slot_vec.iter().enumerate() {
                    ll += if v == 1 {
                        self.log_theta[base + j]
                    } else {
                        self.log_1m_theta[base + j]
                    };
                }
                per_k.push(ll);
            }
            let score = self.prior[y].ln() + log_sum_exp(&per_k);
            if score > best.0 {
                best = (score, y);
            }
        }
        Ok(best.1)
    }
}

/// Conditioning state: per-(label, component) log-weights accumulate the
/// likelihood of every observed slot exactly once, which realizes the
/// only-unobserved-pixels rule for overlapping patch queries.
#[derive(Debug, Clone)]
pub struct MixtureState<'a> {
    model: &'a BernoulliMixtureModel,
    qset: &'a QuerySet,
    /// log π[y][k] + Σ_observed log Bern, y-major
    log_w: Vec<f64>,
    observed: ObservedSlots,
    history: History,
}

impl<'a> MixtureState<'a> {
    /// Normalized component posterior p(k | y, history) for each label.
    pub fn component_posteriors(&self) -> Vec<Vec<f64>> {
        let k = self.model.k;
        (0..self.model.labelspace.count())
            .map(|y| {
                let row = &self.log_w[y * k..(y + 1) * k];
                let lse = log_sum_exp(row);
                row.iter().map(|l| (l - lse).exp()).collect()
            })
            .collect()
    }

    pub fn observed_slots(&self) -> &ObservedSlots {
        &self.observed
    }

    /// log p(history | y) up to the shared normalization.
    fn label_log_evidence(&self) -> Vec<f64> {
        let k = self.model.k;
        (0..self.model.labelspace.count())
            .map(|y| {
                self.model.prior[y].ln() + log_sum_exp(&self.log_w[y * k..(y + 1) * k])
            })
            .collect()
    }

    /// Compact joint over completions of the query's unobserved slots:
    /// data[y * 2^u + c] = p(y | h) · p(completion c | y, h).
    fn compact_table(&self, qid: usize) -> Result<(JointTable, Vec<usize>)> {
        if self.history.contains(qid) {
            return Err(Error::DuplicateQuery { qid });
        }
        let slots = self.qset.slots(qid)?;
        let (unobs, _) = self.observed.split_slots(&slots);
        let u = unobs.len();
        let n_rows = 1usize << u;
        let n_labels = self.model.labelspace.count();
        let k = self.model.k;
        let posterior = self.posterior_vec();
        let comp = self.component_posteriors();
        let mut data = vec![0.0; n_labels * n_rows];
        let mut dp = vec![0.0f64; n_rows];
        for y in 0..n_labels {
            let row = &mut data[y * n_rows..(y + 1) * n_rows];
            for kk in 0..k {
                let w = comp[y][kk];
                if w == 0.0 {
                    continue;
                }
                // subset-product DP: after processing slot t, dp[..2^(t+1)]
                // holds the product over the first t+1 slots for every
                // completion (slot t toggles bit t)
                dp[0] = 1.0;
                let mut filled = 1usize;
                for (t, &slot) in unobs.iter().enumerate() {
                    let p1 = self.model.theta_at(y, kk, slot);
                    let p0 = 1.0 - p1;
                    let (lo, hi) = dp.split_at_mut(filled);
                    for i in 0..filled {
                        hi[i] = lo[i] * p1;
                        lo[i] *= p0;
                    }
                    filled <<= 1;
                    debug_assert_eq!(filled, 1 << (t + 1));
                }
                for (cell, &prod) in row.iter_mut().zip(dp.iter()) {
                    *cell += w * prod;
                }
            }
            let py = posterior[y];
            for cell in row.iter_mut() {
                *cell *= py;
            }
        }
        Ok((JointTable::new(n_rows, n_labels, data)?, slots))
    }

    fn posterior_vec(&self) -> Vec<f64> {
        let ev = self.label_log_evidence();
        let lse = log_sum_exp(&ev);
        ev.iter().map(|e| (e - lse).exp()).collect()
    }
}

impl ConditionedState for MixtureState<'_> {
    fn posterior(&mut self) -> Result<Posterior> {
        Posterior::new(self.posterior_vec())
    }

    fn estimate_joint(&mut self, qid: usize) -> Result<JointTable> {
        let (compact, slots) = self.compact_table(qid)?;
        Ok(expand_compact_table(&compact, &slots, &self.observed))
    }

    fn joint_compact(&mut self, qid: usize) -> Result<JointTable> {
        Ok(self.compact_table(qid)?.0)
    }

    fn observe(&mut self, qid: usize, answer: &Answer) -> Result<()> {
        let slots = self.qset.slots(qid)?;
        if answer.arity() != slots.len() {
            return Err(Error::invalid("answer arity does not match query"));
        }
        let history = extend_history(&self.history, qid, answer.clone())?;
        // collect fresh slots first so a contradiction leaves state untouched
        let (unobs, obs) = self.observed.split_slots(&slots);
        for (slot, seen) in obs {
            let pos = slots.iter().position(|&s| s == slot).unwrap();
            if answer.values()[pos] != seen {
                return Err(Error::invalid(format!(
                    "answer contradicts history at slot {slot}"
                )));
            }
        }
        let k = self.model.k;
        for y in 0..self.model.labelspace.count() {
            for kk in 0..k {
                let mut acc = 0.0;
                for &slot in &unobs {
                    let pos = slots.iter().position(|&s| s == slot).unwrap();
                    acc += self.model.log_lik_slot(y, kk, slot, answer.values()[pos]);
                }
                self.log_w[y * k + kk] += acc;
            }
        }
        self.observed.record(&slots, answer)?;
        self.history = history;
        Ok(())
    }

    fn history(&self) -> &History {
        &self.history
    }

    /// Admissible bound used to prune the selection scan:
    /// I(q; Y | h) = H(A | h) − H(A | Y, h)
    ///             ≤ Σ_j H(A_j | h) − H(A | Y, K, h)
    ///             = Σ_j [ h₂(p̄_j) − E_{y,k}[h₂(θ_jyk)] ],
    /// where the equality in the second term holds because slots are
    /// conditionally independent given (label, component). Non-discriminative
    /// slots (identical θ everywhere) contribute exactly zero, so background
    /// patches prune away. Fully observed queries bound to 0.
    fn mi_upper_bound(&mut self, qid: usize) -> Option<f64> {
        let slots = self.qset.slots(qid).ok()?;
        let (unobs, _) = self.observed.split_slots(&slots);
        if unobs.is_empty() {
            return Some(0.0);
        }
        let posterior = self.posterior_vec();
        let comp = self.component_posteriors();
        let k = self.model.k;
        let mut bound = 0.0;
        for &slot in &unobs {
            let mut p1 = 0.0;
            let mut inner = 0.0;
            for (y, py) in posterior.iter().enumerate() {
                for kk in 0..k {
                    let theta = self.model.theta_at(y, kk, slot);
                    let w = py * comp[y][kk];
                    p1 += w * theta;
                    inner += w * binary_entropy_bits(theta);
                }
            }
            bound += binary_entropy_bits(p1) - inner;
        }
        Some(bound.max(0.0))
    }
}

fn binary_entropy_bits(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.log2();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).log2();
    }
    h
}

/// EM fitting options.
#[derive(Debug, Clone)]
pub struct EmOptions {
    pub k: usize,
    pub max_iters: usize,
    /// stop when |ll - ll_prev| / |ll| < tol
    pub tol: f64,
    pub seed: u64,
    pub theta_min: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { k: 8, max_iters: 50, tol: 1e-7, seed: 0, theta_min: THETA_MIN }
    }
}

/// Per-class fitting log: one log-likelihood entry per EM iteration.
#[derive(Debug, Clone)]
pub struct EmFitLog {
    pub per_class: Vec<Vec<f64>>,
}

/// Fits one Bernoulli mixture per class on binary slot vectors.
///
/// Classes are fitted independently (and in parallel); the label prior is the
/// empirical class frequency. Component seeding is k-means++-style on Hamming
/// distance with a per-class RNG substream, so results are reproducible for a
/// fixed seed regardless of thread count.
pub fn em_fit(
    slot_vectors: &[Vec<u8>],
    labels: &[usize],
    labelspace: &LabelSpace,
    opts: &EmOptions,
) -> Result<(BernoulliMixtureModel, EmFitLog)> {
    if slot_vectors.is_empty() || slot_vectors.len() != labels.len() {
        return Err(Error::invalid("empty or inconsistent training data"));
    }
    if opts.k == 0 {
        return Err(Error::invalid("K must be >= 1"));
    }
    let n_slots = slot_vectors[0].len();
    if slot_vectors.iter().any(|v| v.len() != n_slots) {
        return Err(Error::invalid("slot vectors must share one length"));
    }
    if slot_vectors.iter().flatten().any(|&v| v > 1) {
        return Err(Error::invalid("EM requires binary slot values"));
    }
    let n_labels = labelspace.count();
    let mut by_class: Vec<Vec<&Vec<u8>>> = vec![Vec::new(); n_labels];
    for (v, &y) in slot_vectors.iter().zip(labels) {
        if y >= n_labels {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        by_class[y].push(v);
    }
    for (y, group) in by_class.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::EmptyClass { class: y });
        }
    }

    let fitted: Vec<Result<(Vec<f64>, Vec<f64>, Vec<f64>)>> = by_class
        .par_iter()
        .enumerate()
        .map(|(y, group)| em_fit_class(group, n_slots, opts, opts.seed.wrapping_add(y as u64)))
        .collect();

    let mut mix = Vec::with_capacity(n_labels * opts.k);
    let mut theta = Vec::with_capacity(n_labels * opts.k * n_slots);
    let mut log = EmFitLog { per_class: Vec::with_capacity(n_labels) };
    for r in fitted {
        let (pi, th, ll) = r?;
        mix.extend(pi);
        theta.extend(th);
        log.per_class.push(ll);
    }
    let n = slot_vectors.len() as f64;
    let prior: Vec<f64> = by_class.iter().map(|g| g.len() as f64 / n).collect();
    let model = BernoulliMixtureModel::new(
        labelspace.clone(),
        opts.k,
        n_slots,
        prior,
        mix,
        theta,
        opts.theta_min,
    )?;
    Ok((model, log))
}

/// EM for one class. Returns (π, θ, per-iteration log-likelihood).
fn em_fit_class(
    group: &[&Vec<u8>],
    n_slots: usize,
    opts: &EmOptions,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = group.len();
    let k = opts.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++-style seeding on Hamming distance
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    let mut min_dist: Vec<f64> = group
        .iter()
        .map(|v| hamming(v, group[centers[0]]) as f64)
        .collect();
    while centers.len() < k {
        let weights: Vec<f64> = min_dist.iter().map(|d| d * d).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in weights.iter().enumerate() {
                if t < w {
                    chosen = i;
                    break;
                }
                t -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(pick);
        for (d, v) in min_dist.iter_mut().zip(group.iter()) {
            *d = (*d).min(hamming(v, group[pick]) as f64);
        }
    }

    // θ initialized as a blend of the center and the class mean
    let mut class_mean = vec![0.0f64; n_slots];
    for v in group {
        for (m, &b) in class_mean.iter_mut().zip(v.iter()) {
            *m += b as f64;
        }
    }
    for m in &mut class_mean {
        *m /= n as f64;
    }
    let clamp = |t: f64| t.clamp(opts.theta_min, 1.0 - opts.theta_min);
    let mut theta = vec![0.0f64; k * n_slots];
    for (kk, &c) in centers.iter().enumerate() {
        for j in 0..n_slots {
            theta[kk * n_slots + j] =
                clamp(0.7 * group[c][j] as f64 + 0.3 * class_mean[j]);
        }
    }
    let mut pi = vec![1.0 / k as f64; k];

    let mut lls = Vec::new();
    let mut resp = vec![0.0f64; n * k];
    let mut prev_ll = f64::NEG_INFINITY;
    for _iter in 0..opts.max_iters {
        // E-step in log space
        let log_pi: Vec<f64> = pi
            .iter()
            .map(|p| if *p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
            .collect();
        let log_theta: Vec<f64> = theta.iter().map(|t| t.ln()).collect();
        let log_1m: Vec<f64> = theta.iter().map(|t| (1.0 - t).ln()).collect();
        let mut ll = 0.0;
        for (i, v) in group.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            for (kk, cell) in row.iter_mut().enumerate() {
                let base = kk * n_slots;
                let mut acc = log_pi[kk];
                for (j, &b) in v.iter().enumerate() {
                    acc += if b == 1 { log_theta[base + j] } else { log_1m[base + j] };
                }
                *cell = acc;
            }
            let lse = log_sum_exp(row);
            ll += lse;
            for cell in row.iter_mut() {
                *cell = (*cell - lse).exp();
            }
        }
        lls.push(ll);

        // M-step: responsibilities-weighted means, θ box-projected
        let mut nk = vec![0.0f64; k];
        let mut sums = vec![0.0f64; k * n_slots];
        for (i, v) in group.iter().enumerate() {
            let row = &resp[i * k..(i + 1) * k];
            for (kk, &r) in row.iter().enumerate() {
                nk[kk] += r;
                if r > 0.0 {
                    let base = kk * n_slots;
                    for (j, &b) in v.iter().enumerate() {
                        if b == 1 {
                            sums[base + j] += r;
                        }
                    }
                }
            }
        }
        for kk in 0..k {
            pi[kk] = nk[kk] / n as f64;
            let base = kk * n_slots;
            if nk[kk] > 0.0 {
                for j in 0..n_slots {
                    theta[base + j] = clamp(sums[base + j] / nk[kk]);
                }
            }
        }

        if prev_ll.is_finite() {
            let rel = (ll - prev_ll).abs() / ll.abs().max(1e-300);
            if rel < opts.tol {
                break;
            }
        }
        prev_ll = ll;
    }
    Ok((pi, theta, lls))
}

fn hamming(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ConditionedState;
    use crate::querysets::{build_attribute_queryset, build_patch_queryset};

    fn two_label_space() -> LabelSpace {
        LabelSpace::new(["a", "b"]).unwrap()
    }

    #[test]
    fn k1_closed_form_is_clamped_mean() {
        let ls = two_label_space();
        let data: Vec<Vec<u8>> = vec![
            vec![1, 0, 0],
            vec![1, 1, 0],
            vec![1, 0, 0],
            vec![0, 1, 1],
            vec![0, 1, 1],
        ];
        let labels = vec![0, 0, 0, 1, 1];
        let opts = EmOptions { k: 1, max_iters: 10, ..Default::default() };
        let (model, _) = em_fit(&data, &labels, &ls, &opts).unwrap();
        // class 0 means: (1, 1/3, 0) -> clamped
        assert!((model.theta_at(0, 0, 0) - (1.0 - THETA_MIN)).abs() < 1e-12);
        assert!((model.theta_at(0, 0, 1) - 1.0 / 3.0).abs() < 1e-9);
        assert!((model.theta_at(0, 0, 2) - THETA_MIN).abs() < 1e-12);
    }

    #[test]
    fn em_recovers_separated_components() {
        // two components: active on disjoint halves of 16 slots
        let n_slots = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut data = Vec::new();
        for i in 0..2000 {
            let hot = i % 2;
            let mut v = vec![0u8; n_slots];
            for (j, cell) in v.iter_mut().enumerate() {
                let p = if (j < 8) == (hot == 0) { 0.95 } else { 0.05 };
                *cell = u8::from(rng.random_range(0.0..1.0) < p);
            }
            data.push(v);
        }
        let labels = vec![0usize; 2000];
        let ls = LabelSpace::new(["only", "pad"]).unwrap();
        // pad class to keep the label space valid
        let mut data2 = data.clone();
        let mut labels2 = labels;
        data2.push(vec![0; n_slots]);
        labels2.push(1);
        let opts = EmOptions { k: 2, max_iters: 100, seed: 7, ..Default::default() };
        let (model, log) = em_fit(&data2, &labels2, &ls, &opts).unwrap();
        // recovered θ within 0.05 of truth up to permutation
        let truth = [0.95, 0.05];
        let mut matched = false;
        'perm: for perm in [[0usize, 1], [1, 0]] {
            for (kk, &which) in perm.iter().enumerate() {
                for j in 0..n_slots {
                    let want = if (j < 8) == (which == 0) { truth[0] } else { truth[1] };
                    if (model.theta_at(0, kk, j) - want).abs() > 0.05 {
                        continue 'perm;
                    }
                }
            }
            matched = true;
            break;
        }
        assert!(matched, "components not recovered");
        // monotone log-likelihood
        for w in log.per_class[0].windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "log-likelihood decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn empty_class_is_an_error() {
        let ls = two_label_space();
        let data = vec![vec![0u8, 1], vec![1, 0]];
        let labels = vec![0, 0];
        let got = em_fit(&data, &labels, &ls, &EmOptions::default());
        assert!(matches!(got, Err(Error::EmptyClass { class: 1 })));
    }

    #[test]
    fn single_component_joint_is_theta() {
        let ls = two_label_space();
        let model = BernoulliMixtureModel::new(
            ls,
            1,
            2,
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            vec![0.3, 0.6, 0.8, 0.1],
            THETA_MIN,
        )
        .unwrap();
        let qset = build_attribute_queryset(vec!["u".into(), "v".into()]).unwrap();
        let mut st = model.begin(&qset).unwrap();
        let joint = st.estimate_joint(1).unwrap();
        // p(a=1 | y) = θ[y][0][1]
        assert!((joint.prob(1, 0) - 0.5 * 0.6).abs() < 1e-12);
        assert!((joint.prob(1, 1) - 0.5 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn two_component_mixture_sums_exactly() {
        let ls = two_label_space();
        // one binary slot; label 0 has π = (0.3, 0.7), θ = (0.1, 0.9)
        let model = BernoulliMixtureModel::new(
            ls,
            2,
            1,
            vec![1.0 - 1e-12, 1e-12],
            vec![0.3, 0.7, 0.5, 0.5],
            vec![0.1, 0.9, 0.5, 0.5],
            THETA_MIN,
        )
        .unwrap();
        let qset = build_attribute_queryset(vec!["u".into()]).unwrap();
        let mut st = model.begin(&qset).unwrap();
        let joint = st.estimate_joint(0).unwrap();
        let p1_given_y0 = joint.prob(1, 0) / joint.label_marginal()[0];
        assert!((p1_given_y0 - 0.66).abs() < 1e-9, "got {p1_given_y0}");
    }

    #[test]
    fn component_posterior_is_bayes_rule() {
        let ls = two_label_space();
        let model = BernoulliMixtureModel::new(
            ls,
            2,
            2,
            vec![0.5, 0.5],
            vec![0.25, 0.75, 0.5, 0.5],
            vec![0.2, 0.7, 0.9, 0.4, 0.5, 0.5, 0.5, 0.5],
            THETA_MIN,
        )
        .unwrap();
        let qset = build_attribute_queryset(vec!["u".into(), "v".into()]).unwrap();
        let mut st = model.begin(&qset).unwrap();
        st.observe(0, &Answer::new(vec![1], 2).unwrap()).unwrap();
        st.observe(1, &Answer::new(vec![0], 2).unwrap()).unwrap();
        // direct enumeration over the two components for label 0:
        // θ[0][0] = (0.2, 0.7), θ[0][1] = (0.9, 0.4)
        let w0 = 0.25 * 0.2 * (1.0 - 0.7);
        let w1 = 0.75 * 0.9 * (1.0 - 0.4);
        let expect = [w0 / (w0 + w1), w1 / (w0 + w1)];
        let got = st.component_posteriors();
        assert!((got[0][0] - expect[0]).abs() < 1e-12);
        assert!((got[0][1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn patch_conditioning_counts_overlapping_pixels_once() {
        // 2x3 image, w=2 -> patches 0 = {0,1,3,4} and 1 = {1,2,4,5} share
        // pixels {1,4}
        let ls = two_label_space();
        let theta = vec![
            0.2, 0.6, 0.8, 0.3, 0.4, 0.9, // label 0, comp 0
            0.7, 0.3, 0.4, 0.6, 0.5, 0.2, // label 1, comp 0
        ];
        let model = BernoulliMixtureModel::new(
            ls,
            1,
            6,
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            theta,
            THETA_MIN,
        )
        .unwrap();
        let qset = build_patch_queryset(2, 3, 2).unwrap();
        assert_eq!(qset.len(), 2);
        let mut st = model.begin(&qset).unwrap();
        // patch 0 slot order is (0, 1, 3, 4)
        st.observe(0, &Answer::new(vec![1, 0, 0, 1], 2).unwrap()).unwrap();
        // asking patch 1 = slots (1, 2, 4, 5); slots 1 and 4 already observed
        let joint = st.joint_compact(1).unwrap();
        assert_eq!(joint.n_answers, 4); // only pixels 2 and 5 are free
        let post = st.posterior().unwrap();
        // completion bit0 = slot 2, bit1 = slot 5; check (slot2=1, slot5=0)
        let c = 0b01;
        assert!((joint.prob(c, 0) / post.probs()[0] - 0.8 * (1.0 - 0.9)).abs() < 1e-12);
        assert!((joint.prob(c, 1) / post.probs()[1] - 0.4 * (1.0 - 0.2)).abs() < 1e-12);
        // full-alphabet expansion zeroes answers contradicting slot 1 = 0 or
        // slot 4 = 1, and preserves mass elsewhere
        let full = st.estimate_joint(1).unwrap();
        assert_eq!(full.n_answers, 16);
        full.validate().unwrap();
        // patch-1 slot order (1, 2, 4, 5): bit0 = slot1 must be 0, bit2 =
        // slot4 must be 1 -> base index 0b0100
        assert_eq!(full.prob(0b0001, 0), 0.0);
        assert_eq!(full.prob(0b0000, 0), 0.0); // slot4 = 0 contradicts
        assert!((full.prob(0b0110, 0) - joint.prob(0b01, 0)).abs() < 1e-15);
        // sums match the compact table per label
        for y in 0..2 {
            let full_sum: f64 = full.label_row(y).iter().sum();
            let compact_sum: f64 = joint.label_row(y).iter().sum();
            assert!((full_sum - compact_sum).abs() < 1e-12);
        }
        // conditioning on pixel 5 = 0 favours label 1 (0.1 vs 0.8 likelihood)
        let before = st.posterior().unwrap();
        st.observe(1, &Answer::new(vec![0, 1, 1, 0], 2).unwrap()).unwrap();
        let after = st.posterior().unwrap();
        assert!(after.probs()[1] > before.probs()[1]);
    }

    #[test]
    fn contradictory_observation_rejected() {
        let ls = two_label_space();
        let model = BernoulliMixtureModel::new(
            ls,
            1,
            6,
            vec![0.5, 0.5],
            vec![1.0, 1.0],
            vec![0.5; 12],
            THETA_MIN,
        )
        .unwrap();
        let qset = build_patch_queryset(2, 3, 2).unwrap();
        let mut st = model.begin(&qset).unwrap();
        st.observe(0, &Answer::new(vec![1, 0, 0, 1], 2).unwrap()).unwrap();
        // slot 1 was observed as 0; claiming 1 now is impossible
        let got = st.observe(1, &Answer::new(vec![1, 1, 1, 1], 2).unwrap());
        assert!(got.is_err());
        // state must be untouched: a consistent answer still works
        st.observe(1, &Answer::new(vec![0, 1, 1, 0], 2).unwrap()).unwrap();
    }

    #[test]
    fn mi_upper_bound_dominates_exact_mi() {
        let ls = two_label_space();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..2 * 2 * 8).map(|_| rng.random_range(0.05..0.95)).collect();
            let model = BernoulliMixtureModel::new(
                ls.clone(),
                2,
                8,
                vec![0.4, 0.6],
                vec![0.5, 0.5, 0.2, 0.8],
                theta,
                THETA_MIN,
            )
            .unwrap();
            let qset = build_patch_queryset(2, 4, 2).unwrap();
            assert_eq!(qset.len(), 3);
            let mut st = model.begin(&qset).unwrap();
            for qid in 0..qset.len() {
                let bound = st.mi_upper_bound(qid).unwrap();
                let joint = st.joint_compact(qid).unwrap();
                let mi = crate::pursuit::mutual_information(&joint).unwrap();
                assert!(bound + 1e-12 >= mi, "bound {bound} < mi {mi}");
            }
        }
    }
}
