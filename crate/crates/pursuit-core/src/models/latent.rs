//! Continuous-latent decoder model: a feed-forward map (z, one-hot label) →
//! per-slot Bernoulli logits, with a standard Gaussian prior over z.
//! Conditioning on a history is done by Langevin sampling of p(z | y,
//! history); joint tables are Monte-Carlo averages over those samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::core::{Answer, History, Instance, LabelSpace, Posterior};
use crate::core::extend_history;
use crate::models::{
    expand_compact_table, ConditionedState, JointTable, ObservedSlots, PosteriorModel,
};
use crate::querysets::QuerySet;
use crate::sampler::{ula_run, LogTarget, SamplerConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "identity" => Activation::Identity,
            other => return Err(Error::model(format!("unknown activation {other:?}"))),
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative as a function of the pre-activation input.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Dense layer: `out = act(W · in + b)` with W stored row-major
/// (`rows` = outputs, `cols` = inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    fn forward(&self, input: &[f64], pre: &mut Vec<f64>, out: &mut Vec<f64>) {
        pre.clear();
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            pre.push(acc);
            out.push(self.activation.apply(acc));
        }
    }
}

/// Decoder model: layers applied to `[z, one-hot(y)]`; the final layer's
/// outputs are the per-slot Bernoulli logits ψ(z, y). The label prior is
/// uniform; the prior over z is standard Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussianModel {
    labelspace: LabelSpace,
    pub latent_dim: usize,
    pub n_slots: usize,
    pub layers: Vec<DenseLayer>,
}

impl LatentGaussianModel {
    pub fn new(
        labelspace: LabelSpace,
        latent_dim: usize,
        n_slots: usize,
        layers: Vec<DenseLayer>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::model("decoder needs at least one layer"));
        }
        let mut expect = latent_dim + labelspace.count();
        for (i, layer) in layers.iter().enumerate() {
            if layer.cols != expect {
                return Err(Error::model(format!(
                    "layer {i} expects {} inputs but the previous width is {expect}",
                    layer.cols
                )));
            }
            if layer.weights.len() != layer.rows * layer.cols
                || layer.bias.len() != layer.rows
            {
                return Err(Error::model(format!("layer {i} tensor sizes inconsistent")));
            }
            expect = layer.rows;
        }
        if expect != n_slots {
            return Err(Error::model(format!(
                "decoder outputs {expect} logits but the model declares {n_slots} slots"
            )));
        }
        Ok(LatentGaussianModel { labelspace, latent_dim, n_slots, layers })
    }

    fn input_vec(&self, z: &[f64], y: usize) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.latent_dim + self.labelspace.count());
        input.extend_from_slice(z);
        for i in 0..self.labelspace.count() {
            input.push(f64::from(i == y));
        }
        input
    }

    /// Per-slot logits ψ(z, y).
    pub fn logits(&self, z: &[f64], y: usize) -> Result<Vec<f64>> {
        let (logits, _, _) = self.forward_cached(z, y)?;
        Ok(logits)
    }

    /// Per-slot Bernoulli probabilities σ(ψ(z, y)).
    pub fn slot_probs(&self, z: &[f64], y: usize) -> Result<Vec<f64>> {
        Ok(self.logits(z, y)?.into_iter().map(sigmoid).collect())
    }

    /// Forward pass retaining inputs and pre-activations for the backward
    /// sweep. Returns (logits, per-layer inputs, per-layer pre-activations).
    fn forward_cached(&self, z: &[f64], y: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if z.len() != self.latent_dim {
            return Err(Error::invalid("latent dimension mismatch"));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut current = self.input_vec(z, y);
        for layer in &self.layers {
            let mut pre = Vec::new();
            let mut out = Vec::new();
            layer.forward(&current, &mut pre, &mut out);
            inputs.push(current);
            pres.push(pre);
            current = out;
        }
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder logits"));
        }
        Ok((current, inputs, pres))
    }

    /// Gradient of `delta · ψ(z, y)` w.r.t. z by backward accumulation.
    fn backward_to_z(
        &self,
        inputs: &[Vec<f64>],
        pres: &[Vec<f64>],
        delta: &[f64],
    ) -> Vec<f64> {
        let mut grad_out = delta.to_vec();
        for (layer, pre) in self.layers.iter().zip(pres).rev() {
            // through the activation
            let grad_pre: Vec<f64> = grad_out
                .iter()
                .zip(pre)
                .map(|(g, &p)| g * layer.activation.derivative(p))
                .collect();
            // through the linear map
            let mut grad_in = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                let g = grad_pre[r];
                if g == 0.0 {
                    continue;
                }
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (gi, w) in grad_in.iter_mut().zip(row) {
                    *gi += g * w;
                }
            }
            grad_out = grad_in;
        }
        let _ = inputs;
        grad_out.truncate(self.latent_dim);
        grad_out
    }
}

/// log p(z | y, observed slots) up to a constant:
/// log N(z; 0, I) + Σ_observed log Bern(a_j; σ(ψ_j(z, y))).
pub struct LatentTarget<'a> {
    pub model: &'a LatentGaussianModel,
    pub label: usize,
    /// (slot, observed value) pairs
    pub observed: Vec<(usize, u8)>,
}

impl LogTarget for LatentTarget<'_> {
    fn dim(&self) -> usize {
        self.model.latent_dim
    }

    fn log_density_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (logits, inputs, pres) = self.model.forward_cached(z, self.label)?;
        let mut logp: f64 = z.iter().map(|zi| -zi * zi / 2.0).sum();
        let mut delta = vec![0.0; self.model.n_slots];
        for &(slot, a) in &self.observed {
            let psi = logits[slot];
            logp += f64::from(a) * psi - softplus(psi);
            delta[slot] = f64::from(a) - sigmoid(psi);
        }
        let mut grad = self.model.backward_to_z(&inputs, &pres, &delta);
        for (g, zi) in grad.iter_mut().zip(z) {
            *g -= zi;
        }
        if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("latent log target"));
        }
        Ok((logp, grad))
    }
}

/// Computes log p(z | y, history) and its gradient for a query-set history.
pub fn log_target(
    model: &LatentGaussianModel,
    z: &[f64],
    y: usize,
    qset: &QuerySet,
    history: &History,
) -> Result<(f64, Vec<f64>)> {
    let observed = observed_pairs(qset, history)?;
    LatentTarget { model, label: y, observed }.log_density_grad(z)
}

fn observed_pairs(qset: &QuerySet, history: &History) -> Result<Vec<(usize, u8)>> {
    let obs = ObservedSlots::from_history(qset, history)?;
    Ok((0..qset.slot_count())
        .filter_map(|s| obs.get(s).map(|v| (s, v)))
        .collect())
}

/// Per-label collections of latent samples from p(z | y, history).
#[derive(Debug, Clone)]
pub struct ZSampleSet {
    pub per_label: Vec<Vec<Vec<f64>>>,
    pub sample_count: usize,
}

/// Draws the sample collection for one label by running ULA against
/// p(z | y, history). Deterministic given the config seed.
pub fn ula_sample(
    model: &LatentGaussianModel,
    y: usize,
    qset: &QuerySet,
    history: &History,
    cfg: &SamplerConfig,
) -> Result<Vec<Vec<f64>>> {
    let observed = observed_pairs(qset, history)?;
    let target = LatentTarget { model, label: y, observed };
    Ok(ula_run(&target, cfg, None)?.samples)
}

impl PosteriorModel for LatentGaussianModel {
    type State<'a> = LatentState<'a>;

    fn label_space(&self) -> &LabelSpace {
        &self.labelspace
    }

    fn begin<'a>(&'a self, qset: &'a QuerySet) -> Result<LatentState<'a>> {
        self.begin_with(qset, SamplerConfig::default())
    }

    fn map_full_q(&self, qset: &QuerySet, instance: &Instance) -> Result<usize> {
        self.map_full_q_sampled(qset, instance, &SamplerConfig::default())
    }
}

impl LatentGaussianModel {
    pub fn begin_with<'a>(
        &'a self,
        qset: &'a QuerySet,
        sampler: SamplerConfig,
    ) -> Result<LatentState<'a>> {
        if qset.slot_count() != self.n_slots {
            return Err(Error::invalid(format!(
                "query set has {} slots, model expects {}",
                qset.slot_count(),
                self.n_slots
            )));
        }
        sampler.validate()?;
        let n_labels = self.labelspace.count();
        Ok(LatentState {
            model: self,
            qset,
            sampler,
            log_post: vec![-(n_labels as f64).ln(); n_labels],
            observed: ObservedSlots::new(self.n_slots),
            history: History::empty(),
            samples: None,
            warm: vec![None; n_labels],
        })
    }

    /// MAP over labels given every query answer, estimated by importance
    /// sampling from the Gaussian prior over z (the encoder-free route).
    pub fn map_full_q_sampled(
        &self,
        qset: &QuerySet,
        instance: &Instance,
        cfg: &SamplerConfig,
    ) -> Result<usize> {
        cfg.validate()?;
        let slot_vec = qset.slot_vector(instance)?;
        let n_labels = self.labelspace.count();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = cfg.n_samples;
        let mut best = (f64::NEG_INFINITY, 0usize);
        for y in 0..n_labels {
            // log-mean-exp over prior samples of Σ_j log Bern(x_j; σ(ψ_j))
            let mut log_terms = Vec::with_capacity(n);
            for _ in 0..n {
                let z: Vec<f64> = (0..self.latent_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let logits = self.logits(&z, y)?;
                let mut ll = 0.0;
                for (j, &v) in slot_vec.iter().enumerate() {
                    ll += f64::from(v) * logits[j] - softplus(logits[j]);
                }
                log_terms.push(ll);
            }
            let m = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lme = m + (log_terms.iter().map(|t| (t - m).exp()).sum::<f64>() / n as f64).ln();
            if lme > best.0 {
                best = (lme, y);
            }
        }
        Ok(best.1)
    }
}

/// Conditioning state for the latent model. Samples are drawn lazily per
/// step and invalidated by each observation; chains warm-start from the
/// previous step's final states since successive targets are close.
pub struct LatentState<'a> {
    model: &'a LatentGaussianModel,
    qset: &'a QuerySet,
    sampler: SamplerConfig,
    log_post: Vec<f64>,
    observed: ObservedSlots,
    history: History,
    samples: Option<ZSampleSet>,
    warm: Vec<Option<Vec<Vec<f64>>>>,
}

impl LatentState<'_> {
    fn ensure_samples(&mut self) -> Result<()> {
        if self.samples.is_some() {
            return Ok(());
        }
        let n_labels = self.model.labelspace.count();
        let observed: Vec<(usize, u8)> = (0..self.model.n_slots)
            .filter_map(|s| self.observed.get(s).map(|v| (s, v)))
            .collect();
        let mut per_label = Vec::with_capacity(n_labels);
        for y in 0..n_labels {
            let target = LatentTarget { model: self.model, label: y, observed: observed.clone() };
            let run = ula_run(&target, &self.sampler, self.warm[y].as_deref())?;
            self.warm[y] = Some(run.final_states.clone());
            per_label.push(run.samples);
        }
        self.samples = Some(ZSampleSet { per_label, sample_count: self.sampler.n_samples });
        Ok(())
    }

    pub fn sample_set(&mut self) -> Result<&ZSampleSet> {
        self.ensure_samples()?;
        Ok(self.samples.as_ref().unwrap())
    }

    /// Monte-Carlo conditional p̂(completion | y, history) over the query's
    /// unobserved slots for every label.
    fn conditional_rows(&mut self, unobs: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.ensure_samples()?;
        let samples = self.samples.as_ref().unwrap();
        let n_rows = 1usize << unobs.len();
        let mut rows = Vec::with_capacity(samples.per_label.len());
        for (y, zs) in samples.per_label.iter().enumerate() {
            if zs.is_empty() {
                return Err(Error::invalid("sample set is empty (N = 0)"));
            }
            let mut acc = vec![0.0f64; n_rows];
            let mut dp = vec![0.0f64; n_rows];
            for z in zs {
                let probs = self.model.slot_probs(z, y)?;
                dp[0] = 1.0;
                let mut filled = 1usize;
                for &slot in unobs {
                    let p1 = probs[slot];
                    let p0 = 1.0 - p1;
                    let (lo, hi) = dp.split_at_mut(filled);
                    for i in 0..filled {
                        hi[i] = lo[i] * p1;
                        lo[i] *= p0;
                    }
                    filled <<= 1;
                }
                for (a, &p) in acc.iter_mut().zip(dp.iter()) {
                    *a += p;
                }
            }
            let n = zs.len() as f64;
            for a in &mut acc {
                *a /= n;
            }
            rows.push(acc);
        }
        Ok(rows)
    }

    fn posterior_vec(&self) -> Vec<f64> {
        let m = self.log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.log_post.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / s).collect()
    }
}

impl ConditionedState for LatentState<'_> {
    fn posterior(&mut self) -> Result<Posterior> {
        Posterior::new(self.posterior_vec())
    }

    fn estimate_joint(&mut self, qid: usize) -> Result<JointTable> {
        let compact = self.joint_compact(qid)?;
        let slots = self.qset.slots(qid)?;
        Ok(expand_compact_table(&compact, &slots, &self.observed))
    }

    fn joint_compact(&mut self, qid: usize) -> Result<JointTable> {
        if self.history.contains(qid) {
            return Err(Error::DuplicateQuery { qid });
        }
        let slots = self.qset.slots(qid)?;
        let (unobs, _) = self.observed.split_slots(&slots);
        let rows = self.conditional_rows(&unobs)?;
        let posterior = self.posterior_vec();
        let n_rows = 1usize << unobs.len();
        let n_labels = posterior.len();
        let mut data = vec![0.0; n_labels * n_rows];
        for (y, row) in rows.iter().enumerate() {
            for (c, &p) in row.iter().enumerate() {
                data[y * n_rows + c] = posterior[y] * p;
            }
        }
        JointTable::new(n_rows, n_labels, data)
    }

    fn observe(&mut self, qid: usize, answer: &Answer) -> Result<()> {
        let slots = self.qset.slots(qid)?;
        if answer.arity() != slots.len() {
            return Err(Error::invalid("answer arity does not match query"));
        }
        let history = extend_history(&self.history, qid, answer.clone())?;
        let (unobs, obs) = self.observed.split_slots(&slots);
        for (slot, seen) in obs {
            let pos = slots.iter().position(|&s| s == slot).unwrap();
            if answer.values()[pos] != seen {
                return Err(Error::invalid(format!(
                    "answer contradicts history at slot {slot}"
                )));
            }
        }
        // sequential filtering: p(y | S_k) ∝ p(y | S_{k-1}) · p̂(a | y, S_{k-1})
        let rows = self.conditional_rows(&unobs)?;
        let mut completion = 0usize;
        for (bit, &slot) in unobs.iter().enumerate() {
            let pos = slots.iter().position(|&s| s == slot).unwrap();
            if answer.values()[pos] == 1 {
                completion |= 1 << bit;
            }
        }
        for (y, row) in rows.iter().enumerate() {
            let p = row[completion].max(1e-300);
            self.log_post[y] += p.ln();
        }
        self.observed.record(&slots, answer)?;
        self.history = history;
        self.samples = None; // next step re-samples against the new target
        Ok(())
    }

    fn history(&self) -> &History {
        &self.history
    }

    fn mi_upper_bound(&mut self, qid: usize) -> Option<f64> {
        // subadditivity over unobserved slots using per-slot sample means
        let slots = self.qset.slots(qid).ok()?;
        let (unobs, _) = self.observed.split_slots(&slots);
        if unobs.is_empty() {
            return Some(0.0);
        }
        self.ensure_samples().ok()?;
        let samples = self.samples.as_ref().unwrap();
        let posterior = self.posterior_vec();
        let mut bound = 0.0;
        for &slot in &unobs {
            let mut p1 = 0.0;
            for (y, zs) in samples.per_label.iter().enumerate() {
                let mut mean = 0.0;
                for z in zs {
                    mean += self.model.slot_probs(z, y).ok()?[slot];
                }
                p1 += posterior[y] * mean / zs.len() as f64;
            }
            let mut h = 0.0;
            if p1 > 0.0 {
                h -= p1 * p1.log2();
            }
            if p1 < 1.0 {
                h -= (1.0 - p1) * (1.0 - p1).log2();
            }
            bound += h;
        }
        Some(bound)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::querysets::build_attribute_queryset;
    use rand::Rng;

    fn tiny_labelspace() -> LabelSpace {
        LabelSpace::new(["a", "b"]).unwrap()
    }

    /// Single layer with zero weights: logits equal the bias everywhere.
    fn constant_decoder(bias: Vec<f64>, latent_dim: usize, labels: usize) -> LatentGaussianModel {
        let ls = LabelSpace::new((0..labels).map(|i| format!("l{i}"))).unwrap();
        let n_slots = bias.len();
        let layer = DenseLayer {
            rows: n_slots,
            cols: latent_dim + labels,
            weights: vec![0.0; n_slots * (latent_dim + labels)],
            bias,
            activation: Activation::Identity,
        };
        LatentGaussianModel::new(ls, latent_dim, n_slots, vec![layer]).unwrap()
    }

    #[test]
    fn zero_weight_decoder_has_constant_logits() {
        let model = constant_decoder(vec![0.3, -1.2], 2, 2);
        let a = model.logits(&[0.0, 0.0], 0).unwrap();
        let b = model.logits(&[3.0, -2.0], 1).unwrap();
        assert_eq!(a, vec![0.3, -1.2]);
        assert_eq!(a, b);
    }

    #[test]
    fn one_layer_linear_decoder_matches_hand_affine() {
        let ls = tiny_labelspace();
        // 1 latent dim + 2 labels -> 2 slots
        let layer = DenseLayer {
            rows: 2,
            cols: 3,
            weights: vec![2.0, 1.0, -1.0, 0.5, -0.5, 3.0],
            bias: vec![0.1, -0.2],
            activation: Activation::Identity,
        };
        let model = LatentGaussianModel::new(ls, 1, 2, vec![layer]).unwrap();
        let z = [0.7];
        // input = [0.7, 1, 0] for label 0
        let expect = [
            2.0 * 0.7 + 1.0 * 1.0 + (-1.0) * 0.0 + 0.1,
            0.5 * 0.7 + (-0.5) * 1.0 + 3.0 * 0.0 + (-0.2),
        ];
        let got = model.logits(&z, 0).unwrap();
        assert!((got[0] - expect[0]).abs() < 1e-15);
        assert!((got[1] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn empty_history_target_is_standard_gaussian() {
        let model = constant_decoder(vec![0.0, 0.0], 2, 2);
        let qset = build_attribute_queryset(vec!["u".into(), "v".into()]).unwrap();
        let z = [0.4, -1.1];
        let (logp, grad) = log_target(&model, &z, 0, &qset, &History::empty()).unwrap();
        assert!((logp - (-(0.4f64.powi(2) + 1.1f64.powi(2)) / 2.0)).abs() < 1e-12);
        assert!((grad[0] + 0.4).abs() < 1e-12);
        assert!((grad[1] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn decoder_ignoring_z_keeps_prior_gradient() {
        let model = constant_decoder(vec![0.8, -0.3], 2, 2);
        let qset = build_attribute_queryset(vec!["u".into(), "v".into()]).unwrap();
        let h = extend_history(&History::empty(), 0, Answer::new(vec![1], 2).unwrap()).unwrap();
        let z = [0.9, 0.2];
        let (_, grad) = log_target(&model, &z, 1, &qset, &h).unwrap();
        assert!((grad[0] + 0.9).abs() < 1e-12);
        assert!((grad[1] + 0.2).abs() < 1e-12);
    }

    fn random_mlp(rng: &mut impl Rng, latent_dim: usize, labels: usize, slots: usize) -> LatentGaussianModel {
        let ls = LabelSpace::new((0..labels).map(|i| format!("l{i}"))).unwrap();
        let hidden = 7;
        let l0 = DenseLayer {
            rows: hidden,
            cols: latent_dim + labels,
            weights: (0..hidden * (latent_dim + labels))
                .map(|_| rng.random_range(-0.8..0.8))
                .collect(),
            bias: (0..hidden).map(|_| rng.random_range(-0.3..0.3)).collect(),
            activation: Activation::Tanh,
        };
        let l1 = DenseLayer {
            rows: slots,
            cols: hidden,
            weights: (0..slots * hidden).map(|_| rng.random_range(-0.8..0.8)).collect(),
            bias: (0..slots).map(|_| rng.random_range(-0.3..0.3)).collect(),
            activation: Activation::Identity,
        };
        LatentGaussianModel::new(ls, latent_dim, slots, vec![l0, l1]).unwrap()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let qset = build_attribute_queryset(
            (0..5).map(|i| format!("s{i}")).collect::<Vec<_>>(),
        )
        .unwrap();
        for trial in 0..100 {
            let model = random_mlp(&mut rng, 3, 2, 5);
            let y = rng.random_range(0..2);
            let mut h = History::empty();
            for qid in 0..rng.random_range(1..4usize) {
                let v = rng.random_range(0..2) as u8;
                h = extend_history(&h, qid, Answer::new(vec![v], 2).unwrap()).unwrap();
            }
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let (_, grad) = log_target(&model, &z, y, &qset, &h).unwrap();
            let eps = 1e-5;
            for d in 0..3 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[d] += eps;
                zm[d] -= eps;
                let (fp, _) = log_target(&model, &zp, y, &qset, &h).unwrap();
                let (fm, _) = log_target(&model, &zm, y, &qset, &h).unwrap();
                let fd = (fp - fm) / (2.0 * eps);
                let denom = grad[d].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (grad[d] - fd).abs() / denom <= 1e-4,
                    "trial {trial} dim {d}: analytic {} vs fd {fd}",
                    grad[d]
                );
            }
        }
    }

    #[test]
    fn mc_joint_matches_closed_form_when_decoder_ignores_z() {
        // Bern(0.5) slots independent of (z, y), uniform prior over 2 labels,
        // arity 1 -> table [[0.25, 0.25], [0.25, 0.25]]
        let model = constant_decoder(vec![0.0, 0.0], 2, 2);
        let qset = build_attribute_queryset(vec!["u".into(), "v".into()]).unwrap();
        let sampler = SamplerConfig {
            n_samples: 20_000,
            burn_in: 100,
            step_size: 0.05,
            thinning: 1,
            seed: 23,
            chains: 4,
            divergence_bound: 1e6,
        };
        let mut st = model.begin_with(&qset, sampler).unwrap();
        let joint = st.estimate_joint(0).unwrap();
        joint.validate().unwrap();
        for a in 0..2 {
            for y in 0..2 {
                assert!(
                    (joint.prob(a, y) - 0.25).abs() < 0.01,
                    "cell ({a},{y}) = {}",
                    joint.prob(a, y)
                );
            }
        }
    }

    #[test]
    fn sequential_filtering_updates_posterior() {
        // decoder with label-dependent bias: label 0 favours slot0 = 1
        let ls = tiny_labelspace();
        let layer = DenseLayer {
            rows: 2,
            cols: 3, // 1 latent + 2 labels
            weights: vec![0.0, 2.0, -2.0, 0.0, 0.0, 0.0],
            bias: vec![0.0, 0.0],
            activation: Activation::Identity,
        };
        let model = LatentGaussianModel::new(ls, 1, 2, vec![layer]).unwrap();
        let qset = build_attribute_queryset(vec!["u".into(), "v".into()]).unwrap();
        let sampler = SamplerConfig {
            n_samples: 4_000,
            burn_in: 200,
            step_size: 0.05,
            thinning: 1,
            seed: 3,
            chains: 4,
            divergence_bound: 1e6,
        };
        let mut st = model.begin_with(&qset, sampler).unwrap();
        st.observe(0, &Answer::new(vec![1], 2).unwrap()).unwrap();
        let post = st.posterior().unwrap();
        // p(slot0 = 1 | y=0) = σ(2) ≈ 0.881, p(... | y=1) = σ(-2) ≈ 0.119
        let expect0 = 0.881 / (0.881 + 0.119);
        assert!((post.probs()[0] - expect0).abs() < 0.02, "got {:?}", post.probs());
    }
}
