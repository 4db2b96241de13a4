//! Training: the 1-N binary cross-entropy and 1-b NT-Xent losses with their
//! hand-derived gradients, embedding L2 regularization, stepped
//! learning-rate decay, the Adam loop over sampled subgraphs, and a central
//! finite-difference gradient checker.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::DecoderParams;
use crate::encoder::{self, DropoutRates};
use crate::error::{Error, Result};
use crate::kgdata::{sample_subgraph, KnowledgeGraph, Subgraph, Triple};
use crate::model::{EncoderStack, Model};
use crate::propagation::{dropout_mask, gather_rows, scatter_add_rows, Scope};
use crate::real::Real;
use crate::rgcn;
use crate::tensorcore::{n_mode_product, Mode};

/// Training objective: 1-N scores each query against the whole entity
/// vocabulary under BCE; 1-b scores only against the unique entities of the
/// batch under NT-Xent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    OneN,
    OneB,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::OneN => "1-N",
            LossKind::OneB => "1-b",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1-N" | "1-n" | "one_n" | "onen" => Ok(LossKind::OneN),
            "1-b" | "1-B" | "one_b" | "oneb" => Ok(LossKind::OneB),
            other => Err(Error::Config(format!(
                "unknown loss '{other}' (expected 1-N or 1-b)"
            ))),
        }
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// NT-Xent temperature.
    pub tau: f64,
    pub lr: f64,
    /// Multiplicative step decay: `lr·factor^⌊iteration/every⌋`.
    pub decay_factor: f64,
    pub decay_every: u64,
    /// Embedding L2 factor.
    pub reg_f: f64,
    /// Training triples sampled per iteration.
    pub g_s: usize,
    pub dr_i: f64,
    pub dr_h1: f64,
    pub dr_h2: f64,
    pub dr_o: f64,
    pub dr_d: f64,
    pub max_iterations: u64,
    pub eval_period: u64,
    /// Early-stopping patience, counted in evaluations.
    pub patience: u64,
    pub seed: u64,
    /// Rows per scoring chunk; 0 processes the whole batch at once.
    pub sub_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::OneN,
            tau: 1.0,
            lr: 0.005,
            decay_factor: 0.95,
            decay_every: 500,
            reg_f: 0.01,
            g_s: 90_000,
            dr_i: 0.0,
            dr_h1: 0.0,
            dr_h2: 0.0,
            dr_o: 0.0,
            dr_d: 0.0,
            max_iterations: 50_000,
            eval_period: 500,
            patience: 20,
            seed: 0,
            sub_batch: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("dr_i", self.dr_i),
            ("dr_h1", self.dr_h1),
            ("dr_h2", self.dr_h2),
            ("dr_o", self.dr_o),
            ("dr_d", self.dr_d),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("{name}={rate} outside [0,1)")));
            }
        }
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau={} must be positive", self.tau)));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr={} must be positive", self.lr)));
        }
        if !(0.0 < self.decay_factor && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor={} outside (0,1]",
                self.decay_factor
            )));
        }
        if self.decay_every == 0 || self.eval_period == 0 {
            return Err(Error::Config(
                "decay_every and eval_period must be positive".into(),
            ));
        }
        if self.g_s == 0 {
            return Err(Error::Config("g_s must be at least 1".into()));
        }
        Ok(())
    }

    /// Encoder dropout sites: `dr_h1` on the first layer, `dr_h2` on the
    /// remaining ones.
    pub fn dropout_rates(&self, n_layers: usize) -> DropoutRates {
        let hidden = (0..n_layers)
            .map(|l| if l == 0 { self.dr_h1 } else { self.dr_h2 })
            .collect();
        DropoutRates {
            input: self.dr_i,
            hidden,
            output: self.dr_o,
        }
    }
}

/// Learning rate at `iteration`: `lr·factor^⌊iteration/every⌋`.
pub fn lr_at(iteration: u64, config: &TrainConfig) -> f64 {
    config.lr * config.decay_factor.powi((iteration / config.decay_every) as i32)
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid<A: Real>(x: A) -> A {
    if x >= A::zero() {
        A::one() / (A::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (A::one() + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
fn softplus<A: Real>(x: A) -> A {
    if x > A::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn check_targets(n_rows: usize, n_cols: usize, targets: &[usize]) -> Result<()> {
    if targets.len() != n_rows {
        return Err(Error::shape(
            "loss targets",
            format!("{n_rows} targets"),
            format!("{}", targets.len()),
        ));
    }
    for &t in targets {
        if t >= n_cols {
            return Err(Error::IdOutOfRange {
                kind: "target",
                id: t,
                len: n_cols,
            });
        }
    }
    Ok(())
}

/// 1-N binary cross-entropy: per row the mean over all candidates of
/// `-[y·ln σ(φ) + (1-y)·ln(1-σ(φ))]` with a one-hot target, averaged over
/// the batch. Evaluated in log-sum-exp form.
pub fn bce_1n_loss<A: Real>(scores: &Array2<A>, targets: &[usize]) -> Result<A> {
    let (rows, cols) = scores.dim();
    check_targets(rows, cols, targets)?;
    let inv_cols = A::from_f64_exact(1.0 / cols as f64);
    let mut total = A::zero();
    for (i, row) in scores.rows().into_iter().enumerate() {
        let mut acc = A::zero();
        for (j, &s) in row.iter().enumerate() {
            let y = if j == targets[i] { A::one() } else { A::zero() };
            acc = acc + softplus(s) - y * s;
        }
        total += acc * inv_cols;
    }
    Ok(total / A::from_f64_exact(rows as f64))
}

/// Loss contribution and score gradient of a chunk of rows, under a batch
/// mean over `total_rows`.
fn bce_1n_chunk<A: Real>(
    scores: &Array2<A>,
    targets: &[usize],
    total_rows: usize,
) -> (A, Array2<A>) {
    let (rows, cols) = scores.dim();
    let inv = A::from_f64_exact(1.0 / (cols as f64 * total_rows as f64));
    let mut loss = A::zero();
    let mut grad = Array2::<A>::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let s = scores[(i, j)];
            let y = if j == targets[i] { A::one() } else { A::zero() };
            loss += (softplus(s) - y * s) * inv;
            grad[(i, j)] = (sigmoid(s) - y) * inv;
        }
    }
    (loss, grad)
}

/// 1-b NT-Xent: per row `-ln(exp(φ_t/τ) / Σ_{t'} exp(φ_{t'}/τ))`, averaged
/// over the batch; softmax cross-entropy at temperature `τ`.
pub fn nt_xent_1b_loss<A: Real>(scores: &Array2<A>, targets: &[usize], tau: f64) -> Result<A> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("tau={tau} must be positive")));
    }
    let (rows, cols) = scores.dim();
    check_targets(rows, cols, targets)?;
    let inv_tau = A::from_f64_exact(1.0 / tau);
    let mut total = A::zero();
    for (i, row) in scores.rows().into_iter().enumerate() {
        let mut max = A::neg_infinity();
        for &s in row.iter() {
            let x = s * inv_tau;
            if x > max {
                max = x;
            }
        }
        let sum: A = row.iter().map(|&s| (s * inv_tau - max).exp()).sum();
        let lse = max + sum.ln();
        total = total + lse - scores[(i, targets[i])] * inv_tau;
    }
    Ok(total / A::from_f64_exact(rows as f64))
}

fn nt_xent_1b_chunk<A: Real>(
    scores: &Array2<A>,
    targets: &[usize],
    tau: f64,
    total_rows: usize,
) -> (A, Array2<A>) {
    let (rows, cols) = scores.dim();
    let inv_tau = A::from_f64_exact(1.0 / tau);
    let inv_rows = A::from_f64_exact(1.0 / total_rows as f64);
    let mut loss = A::zero();
    let mut grad = Array2::<A>::zeros((rows, cols));
    for i in 0..rows {
        let row = scores.row(i);
        let mut max = A::neg_infinity();
        for &s in row.iter() {
            let x = s * inv_tau;
            if x > max {
                max = x;
            }
        }
        let sum: A = row.iter().map(|&s| (s * inv_tau - max).exp()).sum();
        let lse = max + sum.ln();
        loss += (lse - row[targets[i]] * inv_tau) * inv_rows;
        for j in 0..cols {
            let p = (row[j] * inv_tau - lse).exp();
            let y = if j == targets[i] { A::one() } else { A::zero() };
            grad[(i, j)] = (p - y) * inv_tau * inv_rows;
        }
    }
    (loss, grad)
}

/// `reg_f · (‖entity‖² + ‖relation‖²)`.
pub fn embedding_l2_penalty<A: Real>(
    tables: &crate::encoder::EmbeddingTables<A>,
    reg_f: f64,
) -> A {
    let sq = |m: &Array2<A>| m.iter().map(|&x| x * x).sum::<A>();
    A::from_f64_exact(reg_f) * (sq(&tables.entity) + sq(&tables.relation))
}

/// Outcome of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
    /// Triples in the step's batch (the sampled subgraph).
    pub batch_size: usize,
    /// Candidate entities each query was scored against.
    pub n_candidates: usize,
    /// Total `(query, candidate)` score evaluations this step.
    pub score_evals: u64,
}

pub(crate) struct BatchGrads<A> {
    pub loss: A,
    pub grads: Model<A>,
    pub batch_size: usize,
    pub n_candidates: usize,
    pub score_evals: u64,
}

enum AnyTape<A> {
    Tgcn(encoder::EncoderTape<A>),
    Rgcn(rgcn::RgcnTape<A>),
}

/// Forward + backward over one sampled batch. Scores every batch triple's
/// target against the scope's candidate set, applies the configured loss
/// plus the embedding L2 penalty, and accumulates gradients for every
/// parameter.
pub(crate) fn loss_and_grads<A: Real, R: Rng>(
    model: &Model<A>,
    sub: &Subgraph,
    config: &TrainConfig,
    training: bool,
    rng: &mut R,
) -> Result<BatchGrads<A>> {
    config.validate()?;
    let batch: &[Triple] = &sub.triples;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let n_entities = model.config.n_entities;
    let n_layers = model.encoder.n_layers();
    let rates = config.dropout_rates(n_layers);

    // 1-N ranks against the whole vocabulary, 1-b against the unique
    // entities of the batch; either way the candidate rows coincide with
    // the encoder scope.
    let scope = match config.loss {
        LossKind::OneN => Scope::all(n_entities),
        LossKind::OneB => Scope::of_entities(n_entities, sub.active_entities.clone()),
    };
    let candidate_rows = scope.rows.clone();
    let n_candidates = candidate_rows.len();

    let (h_out, tape) = match &model.encoder {
        EncoderStack::Tgcn(layers) => {
            let (h, t) = encoder::forward_tgcn(
                &model.embeddings,
                layers,
                sub,
                scope.clone(),
                &rates,
                training,
                rng,
            )?;
            (h, AnyTape::Tgcn(t))
        }
        EncoderStack::Rgcn(layers) => {
            let (h, t) = rgcn::forward_rgcn(
                &model.embeddings,
                layers,
                sub,
                scope.clone(),
                &rates,
                training,
                rng,
            )?;
            (h, AnyTape::Rgcn(t))
        }
    };

    let mut grads = model.zeros_like();
    let mut grad_h = Array2::<A>::zeros(h_out.dim());
    let mut loss = A::zero();
    let mut score_evals = 0u64;

    let chunk_len = if config.sub_batch == 0 {
        batch.len()
    } else {
        config.sub_batch
    };
    for chunk in batch.chunks(chunk_len) {
        let src_rows: Vec<usize> = chunk.iter().map(|t| scope.row_of(t.source)).collect();
        let target_cols: Vec<usize> = chunk
            .iter()
            .map(|t| match config.loss {
                LossKind::OneN => t.target,
                LossKind::OneB => scope.row_of(t.target),
            })
            .collect();
        let h_s = gather_rows(&h_out.view(), &src_rows);

        // Query-side contraction, then scores against all candidates.
        let (q, tucker_ctx) = match &model.decoder {
            DecoderParams::DistMult => {
                let mut q = h_s.clone();
                for (i, t) in chunk.iter().enumerate() {
                    let e_r = model.embeddings.relation.row(t.relation);
                    q.row_mut(i).zip_mut_with(&e_r, |a, &b| *a *= b);
                }
                (q, None)
            }
            DecoderParams::Tucker { core, dropout } => {
                let mut by_rel: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
                for (i, t) in chunk.iter().enumerate() {
                    by_rel.entry(t.relation).or_default().push(i);
                }
                let mut q = Array2::<A>::zeros((chunk.len(), core.dim().2));
                for (&rel, rows) in &by_rel {
                    let e_r = model.embeddings.relation.row(rel);
                    let m_r = n_mode_product(&core.view(), &e_r, Mode::Two)?;
                    let xs = gather_rows(&h_s.view(), rows);
                    let qr = xs.dot(&m_r);
                    for (k, &i) in rows.iter().enumerate() {
                        q.row_mut(i).assign(&qr.row(k));
                    }
                }
                let mask = if training && *dropout > 0.0 {
                    Some(dropout_mask::<A, _>(q.dim(), *dropout, rng))
                } else {
                    None
                };
                let pre_mask = q.clone();
                if let Some(m) = &mask {
                    q = &q * m;
                }
                (q, Some((by_rel, pre_mask, mask)))
            }
        };

        let scores = q.dot(&h_out.t());
        score_evals += (scores.nrows() * scores.ncols()) as u64;

        let (chunk_loss, d_scores) = match config.loss {
            LossKind::OneN => bce_1n_chunk(&scores, &target_cols, batch.len()),
            LossKind::OneB => nt_xent_1b_chunk(&scores, &target_cols, config.tau, batch.len()),
        };
        loss += chunk_loss;

        // Candidate-side gradient: every candidate row took part in every
        // query of the chunk.
        grad_h = grad_h + d_scores.t().dot(&q);
        // Query-side gradient.
        let mut d_q = d_scores.dot(&h_out);
        match (&model.decoder, &mut grads.decoder, tucker_ctx) {
            (DecoderParams::DistMult, _, _) => {
                for (i, t) in chunk.iter().enumerate() {
                    let e_r = model.embeddings.relation.row(t.relation);
                    let hs = h_s.row(i);
                    let dq = d_q.row(i);
                    let mut ghs = grad_h.row_mut(src_rows[i]);
                    ghs.zip_mut_with(&(&dq * &e_r).view(), |a, &b| *a += b);
                    let mut ger = grads.embeddings.relation.row_mut(t.relation);
                    ger.zip_mut_with(&(&dq * &hs).view(), |a, &b| *a += b);
                }
            }
            (
                DecoderParams::Tucker { core, .. },
                DecoderParams::Tucker { core: gcore, .. },
                Some((by_rel, _pre_mask, mask)),
            ) => {
                if let Some(m) = &mask {
                    d_q = &d_q * m;
                }
                for (&rel, rows) in &by_rel {
                    let e_r = model.embeddings.relation.row(rel);
                    let m_r = n_mode_product(&core.view(), &e_r, Mode::Two)?;
                    let xs = gather_rows(&h_s.view(), rows);
                    let dq_r = gather_rows(&d_q.view(), rows);
                    let grad_m_r = xs.t().dot(&dq_r);
                    let mut ger = grads.embeddings.relation.row_mut(rel);
                    for j in 0..core.len_of(Axis(1)) {
                        let mut slice = gcore.index_axis_mut(Axis(1), j);
                        let ej = e_r[j];
                        ndarray::Zip::from(&mut slice)
                            .and(&grad_m_r)
                            .for_each(|s, &g| *s += ej * g);
                        let dot = ndarray::Zip::from(&core.index_axis(Axis(1), j))
                            .and(&grad_m_r)
                            .fold(A::zero(), |acc, &c, &g| acc + c * g);
                        ger[j] += dot;
                    }
                    let grad_xs = dq_r.dot(&m_r.t());
                    let chunk_src: Vec<usize> = rows.iter().map(|&i| src_rows[i]).collect();
                    let ones = vec![1.0; chunk_src.len()];
                    scatter_add_rows(&mut grad_h, &chunk_src, &grad_xs.view(), &ones);
                }
            }
            _ => unreachable!("decoder gradient layout mirrors the model"),
        }
    }

    // Back through the encoder into layer parameters and both tables.
    match (&model.encoder, &mut grads.encoder, tape) {
        (EncoderStack::Tgcn(layers), EncoderStack::Tgcn(glayers), AnyTape::Tgcn(t)) => {
            encoder::backward_tgcn(
                layers,
                &model.embeddings,
                &t,
                grad_h,
                glayers,
                &mut grads.embeddings,
            )?;
        }
        (EncoderStack::Rgcn(layers), EncoderStack::Rgcn(glayers), AnyTape::Rgcn(t)) => {
            rgcn::backward_rgcn(layers, &t, grad_h, glayers, &mut grads.embeddings)?;
        }
        _ => unreachable!("encoder gradient layout mirrors the model"),
    }

    // Embedding L2 penalty.
    if config.reg_f != 0.0 {
        loss += embedding_l2_penalty(&model.embeddings, config.reg_f);
        let two_reg = A::from_f64_exact(2.0 * config.reg_f);
        grads
            .embeddings
            .entity
            .zip_mut_with(&model.embeddings.entity, |g, &p| *g += two_reg * p);
        grads
            .embeddings
            .relation
            .zip_mut_with(&model.embeddings.relation, |g, &p| *g += two_reg * p);
    }

    Ok(BatchGrads {
        loss,
        grads,
        batch_size: batch.len(),
        n_candidates,
        score_evals,
    })
}

/// Adam with bias correction; one moment pair per parameter tensor.
pub(crate) struct AdamState<A> {
    m: Model<A>,
    v: Model<A>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<A: Real> AdamState<A> {
    pub fn new(model: &Model<A>) -> Self {
        AdamState {
            m: model.zeros_like(),
            v: model.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, model: &mut Model<A>, grads: &Model<A>, lr: f64) {
        self.t += 1;
        let b1 = A::from_f64_exact(self.beta1);
        let b2 = A::from_f64_exact(self.beta2);
        let one = A::one();
        let bc1 = A::from_f64_exact(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = A::from_f64_exact(1.0 - self.beta2.powi(self.t as i32));
        let lr = A::from_f64_exact(lr);
        let eps = A::from_f64_exact(self.eps);
        let mut ps = model.param_slices_mut();
        let gs = grads.param_slices();
        let mut ms = self.m.param_slices_mut();
        let mut vs = self.v.param_slices_mut();
        for i in 0..ps.len() {
            let p = &mut ps[i].1;
            let g = &gs[i].1;
            let m = &mut ms[i].1;
            let v = &mut vs[i].1;
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Owns the model, optimizer state and rng; one [`Trainer::train_step`]
/// call is one iteration: sample a subgraph of `g_s` training triples,
/// encode, score, and apply one Adam update at the decayed rate.
/// Single-threaded and bitwise deterministic given the seed.
pub struct Trainer<A: Real> {
    pub model: Model<A>,
    pub config: TrainConfig,
    pub iteration: u64,
    adam: AdamState<A>,
    rng: ChaCha8Rng,
}

impl<A: Real> Trainer<A> {
    pub fn new(model: Model<A>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&model);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer {
            model,
            config,
            iteration: 0,
            adam,
            rng,
        })
    }

    pub fn train_step(&mut self, kg: &KnowledgeGraph) -> Result<StepStats> {
        let lr = lr_at(self.iteration, &self.config);
        let sub = sample_subgraph(kg, self.config.g_s, &mut self.rng)?;
        let out = loss_and_grads(&self.model, &sub, &self.config, true, &mut self.rng)?;
        self.adam.step(&mut self.model, &out.grads, lr);
        let stats = StepStats {
            iteration: self.iteration,
            loss: out.loss.to_f64_lossy(),
            lr,
            batch_size: out.batch_size,
            n_candidates: out.n_candidates,
            score_evals: out.score_evals,
        };
        self.iteration += 1;
        Ok(stats)
    }
}

/// Compares the analytic gradient of the full loss (encoder, decoder and L2
/// penalty) against central finite differences with step `1e-4`, dropout
/// disabled. Returns the maximum relative error over the selected
/// parameters (`filter` matches tensor-name prefixes; `None` checks all).
pub fn gradient_check(
    model: &Model<f64>,
    sub: &Subgraph,
    config: &TrainConfig,
    filter: Option<&[&str]>,
) -> Result<f64> {
    let mut cfg = config.clone();
    cfg.dr_i = 0.0;
    cfg.dr_h1 = 0.0;
    cfg.dr_h2 = 0.0;
    cfg.dr_o = 0.0;
    cfg.dr_d = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let analytic = loss_and_grads(model, sub, &cfg, false, &mut rng)?;

    let selected = |name: &str| -> bool {
        match filter {
            None => true,
            Some(prefixes) => prefixes.iter().any(|p| name.starts_with(p)),
        }
    };
    let h = 1e-4;
    let mut work = model.clone();
    let mut max_rel = 0.0f64;
    let n_tensors = analytic.grads.param_slices().len();
    for ti in 0..n_tensors {
        let (name, ga) = {
            let slices = analytic.grads.param_slices();
            (slices[ti].0.clone(), slices[ti].1.to_vec())
        };
        if !selected(&name) {
            continue;
        }
        for k in 0..ga.len() {
            let orig = {
                let mut slices = work.param_slices_mut();
                let p = &mut slices[ti].1;
                let orig = p[k];
                p[k] = orig + h;
                orig
            };
            let plus = loss_and_grads(&work, sub, &cfg, false, &mut rng)?.loss;
            {
                let mut slices = work.param_slices_mut();
                slices[ti].1[k] = orig - h;
            }
            let minus = loss_and_grads(&work, sub, &cfg, false, &mut rng)?.loss;
            {
                let mut slices = work.param_slices_mut();
                slices[ti].1[k] = orig;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let denom = (ga[k].abs() + numeric.abs()).max(1e-6);
            let rel = (ga[k] - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::DecoderKind;
    use crate::kgdata::KnowledgeGraph;
    use crate::model::{CoreLayout, EncoderKind, ModelConfig};
    use crate::propagation::Activation;
    use crate::rgcn::WeightScheme;
    use ndarray::array;

    fn cfg(loss: LossKind) -> TrainConfig {
        TrainConfig {
            loss,
            g_s: 4,
            reg_f: 0.01,
            lr: 0.01,
            ..TrainConfig::default()
        }
    }

    fn tiny_model_config(
        n_entities: usize,
        n_relations: usize,
        d: usize,
        encoder: EncoderKind,
        layout: CoreLayout,
        scheme: WeightScheme,
        decoder: DecoderKind,
    ) -> ModelConfig {
        ModelConfig {
            n_entities,
            n_relations,
            d,
            n_layers: 2,
            encoder,
            layout,
            scheme,
            n_b: 3,
            n_blocks: if d.is_multiple_of(2) { 2 } else { 1 },
            decoder,
            decoder_dropout: 0.0,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
        }
    }

    fn tiny_kg() -> KnowledgeGraph {
        let kg = KnowledgeGraph::from_named_triples(
            &[
                ("a", "p", "b"),
                ("b", "p", "c"),
                ("c", "q", "a"),
                ("a", "q", "c"),
            ],
            &[],
            &[],
        )
        .unwrap();
        crate::kgdata::add_reciprocals(kg).unwrap()
    }

    #[test]
    fn bce_all_zero_scores_is_ln2() {
        let scores = Array2::<f64>::zeros((3, 7));
        let loss = bce_1n_loss(&scores, &[0, 3, 6]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_saturated_scores_vanish() {
        let mut scores = Array2::<f64>::from_elem((2, 5), -30.0);
        scores[(0, 1)] = 30.0;
        scores[(1, 4)] = 30.0;
        let loss = bce_1n_loss(&scores, &[1, 4]).unwrap();
        assert!(loss < 1e-9, "{loss}");
    }

    #[test]
    fn bce_matches_naive_formula() {
        let scores = array![
            [0.3, -1.2, 2.0, 0.05],
            [-0.7, 0.9, -2.5, 1.4],
        ];
        let targets = [2usize, 1usize];
        let mut naive = 0.0f64;
        for i in 0..2 {
            let mut acc = 0.0;
            for j in 0..4 {
                let p = 1.0 / (1.0 + (-scores[(i, j)] as f64).exp());
                let y = if j == targets[i] { 1.0 } else { 0.0 };
                acc += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            }
            naive += acc / 4.0;
        }
        naive /= 2.0;
        let loss = bce_1n_loss(&scores, &targets).unwrap();
        assert!((loss - naive).abs() < 1e-7, "{loss} vs {naive}");
    }

    #[test]
    fn bce_target_out_of_range() {
        let scores = Array2::<f64>::zeros((1, 3));
        assert!(bce_1n_loss(&scores, &[3]).is_err());
    }

    #[test]
    fn nt_xent_singleton_candidate_is_zero() {
        let scores = array![[1.7f64]];
        let loss = nt_xent_1b_loss(&scores, &[0], 1.0).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn nt_xent_two_equal_scores_is_ln2() {
        let scores = array![[0.4, 0.4]];
        let loss = nt_xent_1b_loss(&scores, &[0], 1.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn nt_xent_shift_invariance() {
        let scores = array![[0.3f64, -1.0, 2.2], [0.0, 0.5, -0.5]];
        let shifted = scores.mapv(|x| x + 123.456);
        let a = nt_xent_1b_loss(&scores, &[2, 0], 0.7).unwrap();
        let b = nt_xent_1b_loss(&shifted, &[2, 0], 0.7).unwrap();
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }

    #[test]
    fn nt_xent_high_temperature_limit() {
        let scores = array![[3.0, -2.0, 0.5, 1.0]];
        let loss = nt_xent_1b_loss(&scores, &[0], 1e6).unwrap();
        assert!((loss - (4.0f64).ln()).abs() < 1e-3, "{loss}");
    }

    #[test]
    fn nt_xent_monotone_in_target_score() {
        let base = array![[1.0, 0.0, -0.5]];
        let better = array![[1.5, 0.0, -0.5]];
        let a = nt_xent_1b_loss(&base, &[0], 1.0).unwrap();
        let b = nt_xent_1b_loss(&better, &[0], 1.0).unwrap();
        assert!(b < a);
        assert!(a > 0.0 && b > 0.0);
    }

    #[test]
    fn nt_xent_invalid_temperature() {
        let scores = array![[1.0, 0.0]];
        assert!(nt_xent_1b_loss(&scores, &[0], 0.0).is_err());
        assert!(nt_xent_1b_loss(&scores, &[0], -1.0).is_err());
    }

    #[test]
    fn l2_penalty_examples() {
        let tables = crate::encoder::EmbeddingTables {
            entity: array![[1.0, 2.0], [3.0, 4.0]],
            relation: Array2::<f64>::zeros((0, 2)),
        };
        let p = embedding_l2_penalty(&tables, 0.01);
        assert!((p - 0.30).abs() < 1e-12);
        assert_eq!(embedding_l2_penalty(&tables, 0.0), 0.0);
        let zero = crate::encoder::EmbeddingTables::<f64>::zeros(2, 2, 2, 2);
        assert_eq!(embedding_l2_penalty(&zero, 0.01), 0.0);
    }

    #[test]
    fn lr_schedule_examples() {
        let config = TrainConfig {
            lr: 0.005,
            decay_factor: 0.95,
            decay_every: 500,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, &config), 0.005);
        assert!((lr_at(500, &config) - 0.00475).abs() < 1e-12);
        assert!((lr_at(1250, &config) - 0.005 * 0.9025).abs() < 1e-12);
    }

    fn trainer(loss: LossKind, seed: u64) -> (Trainer<f32>, KnowledgeGraph) {
        let kg = tiny_kg();
        let mc = tiny_model_config(
            kg.entities.len(),
            kg.relations.len(),
            4,
            EncoderKind::Tgcn,
            CoreLayout::Dense,
            WeightScheme::Full,
            DecoderKind::DistMult,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::<f32>::init(mc, &mut rng).unwrap();
        let mut config = cfg(loss);
        config.seed = seed;
        (Trainer::new(model, config).unwrap(), kg)
    }

    #[test]
    fn identical_seeds_give_bitwise_identical_losses() {
        let (mut a, kg) = trainer(LossKind::OneN, 7);
        let (mut b, _) = trainer(LossKind::OneN, 7);
        for _ in 0..10 {
            let sa = a.train_step(&kg).unwrap();
            let sb = b.train_step(&kg).unwrap();
            assert_eq!(sa.loss.to_bits(), sb.loss.to_bits());
        }
    }

    #[test]
    fn oneb_score_evals_count_batch_times_unique_entities() {
        let (mut t, kg) = trainer(LossKind::OneB, 3);
        let stats = t.train_step(&kg).unwrap();
        assert_eq!(
            stats.score_evals,
            (stats.batch_size * stats.n_candidates) as u64
        );
        assert!(stats.n_candidates <= kg.entities.len());
    }

    #[test]
    fn onen_scores_against_whole_vocabulary() {
        let (mut t, kg) = trainer(LossKind::OneN, 3);
        let stats = t.train_step(&kg).unwrap();
        assert_eq!(stats.n_candidates, kg.entities.len());
        assert_eq!(
            stats.score_evals,
            (stats.batch_size * kg.entities.len()) as u64
        );
    }

    #[test]
    fn loss_decreases_on_toy_graph() {
        let triples: Vec<(String, String, String)> = (0..10)
            .flat_map(|i| {
                vec![
                    (format!("x{i}"), "r0".to_string(), format!("y{i}")),
                    (format!("y{i}"), "r1".to_string(), format!("x{}", (i + 1) % 10)),
                ]
            })
            .collect();
        let kg = KnowledgeGraph::from_named_triples(&triples, &[], &[]).unwrap();
        let kg = crate::kgdata::add_reciprocals(kg).unwrap();
        let mc = tiny_model_config(
            kg.entities.len(),
            kg.relations.len(),
            8,
            EncoderKind::Tgcn,
            CoreLayout::Dense,
            WeightScheme::Full,
            DecoderKind::DistMult,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Model::<f32>::init(mc, &mut rng).unwrap();
        let config = TrainConfig {
            loss: LossKind::OneB,
            g_s: 40,
            lr: 0.01,
            reg_f: 0.0,
            seed: 5,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(model, config).unwrap();
        let first = t.train_step(&kg).unwrap().loss;
        let mut last = first;
        for _ in 0..49 {
            last = t.train_step(&kg).unwrap().loss;
        }
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn sub_batching_matches_full_batch_loss() {
        let kg = tiny_kg();
        let mc = tiny_model_config(
            kg.entities.len(),
            kg.relations.len(),
            4,
            EncoderKind::Tgcn,
            CoreLayout::Cp,
            WeightScheme::Full,
            DecoderKind::Tucker,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = Model::<f64>::init(mc, &mut rng).unwrap();
        let sub = Subgraph::from_triples(kg.entities.len(), kg.train.clone());
        let mut full_cfg = cfg(LossKind::OneN);
        let mut small_cfg = full_cfg.clone();
        small_cfg.sub_batch = 3;
        let mut rng_a = ChaCha8Rng::seed_from_u64(0);
        let mut rng_b = ChaCha8Rng::seed_from_u64(0);
        full_cfg.sub_batch = 0;
        let a = loss_and_grads(&model, &sub, &full_cfg, false, &mut rng_a).unwrap();
        let b = loss_and_grads(&model, &sub, &small_cfg, false, &mut rng_b).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
        let ga = a.grads.param_slices();
        let gb = b.grads.param_slices();
        for (x, y) in ga.iter().zip(gb.iter()) {
            for (p, q) in x.1.iter().zip(y.1.iter()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    fn check_combo(
        encoder: EncoderKind,
        layout: CoreLayout,
        scheme: WeightScheme,
        decoder: DecoderKind,
        loss: LossKind,
        seed: u64,
    ) -> f64 {
        let kg = tiny_kg();
        let mc = tiny_model_config(
            kg.entities.len(),
            kg.relations.len(),
            4,
            encoder,
            layout,
            scheme,
            decoder,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::<f64>::init(mc, &mut rng).unwrap();
        let sub = Subgraph::from_triples(kg.entities.len(), kg.train.clone());
        gradient_check(&model, &sub, &cfg(loss), None).unwrap()
    }

    #[test]
    fn gradient_check_distmult_oneb() {
        let err = check_combo(
            EncoderKind::Tgcn,
            CoreLayout::Dense,
            WeightScheme::Full,
            DecoderKind::DistMult,
            LossKind::OneB,
            11,
        );
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_tucker_cp_onen() {
        let err = check_combo(
            EncoderKind::Tgcn,
            CoreLayout::Cp,
            WeightScheme::Full,
            DecoderKind::Tucker,
            LossKind::OneN,
            12,
        );
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_decoder_only_linear_sanity() {
        let kg = tiny_kg();
        let mc = tiny_model_config(
            kg.entities.len(),
            kg.relations.len(),
            3,
            EncoderKind::Tgcn,
            CoreLayout::Dense,
            WeightScheme::Full,
            DecoderKind::Tucker,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = Model::<f64>::init(mc, &mut rng).unwrap();
        let sub = Subgraph::from_triples(kg.entities.len(), kg.train.clone());
        let err = gradient_check(&model, &sub, &cfg(LossKind::OneN), Some(&["decoder."])).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn gradient_check_rgcn_schemes() {
        for scheme in [
            WeightScheme::Full,
            WeightScheme::Basis,
            WeightScheme::Block,
            WeightScheme::Cp,
        ] {
            let err = check_combo(
                EncoderKind::Rgcn,
                CoreLayout::Dense,
                scheme,
                DecoderKind::DistMult,
                LossKind::OneB,
                14,
            );
            assert!(err < 1e-4, "{scheme:?}: max relative error {err}");
        }
    }
}
