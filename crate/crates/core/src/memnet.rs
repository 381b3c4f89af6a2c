//! End-to-end memory network with an answer head and a forward-prediction
//! head.
//!
//! Base network (shared by both heads):
//!
//! ```text
//! q     = A x
//! m_i   = A c_i + T[:, slot(i)]          slot 0 = most recent memory
//! p^h   = softmax_i(u_{h-1} . m_i)        u_0 = q
//! o_h   = sum_i p^h_i m_i
//! u_h   = R_h (o_h + u_{h-1})
//! ```
//!
//! Answer head: `softmax_j(u_H . A y_j)` over candidate answers.
//!
//! Forward-prediction head, given the action `a` that was taken:
//!
//! ```text
//! p3   = softmax_j(u_H . A y_j)
//! o3   = sum_j p3_j (A y_j + [a = y_j] beta)
//! u3   = R_fwd (o3 + u_H)
//! out  = softmax_k(u3 . A xbar_k)       over teacher responses
//! ```
//!
//! A single embedding matrix `A` is shared by inputs, memories, answers and
//! responses. Predicting answers never touches `R_fwd` or `beta`, so a model
//! trained only through the forward head can answer with the base network.

use std::collections::{BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{
    axpy, dot, softmax, softmax_backward, softmax_cross_entropy, Matrix, ParamId, ParamStore, TensorError,
};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{got} memories exceed capacity {capacity}")]
    Capacity { got: usize, capacity: usize },
    #[error("candidate set is empty")]
    NoCandidates,
    #[error("duplicate entry {0:?}")]
    Duplicate(String),
    #[error("selected action {0} is not a candidate")]
    BadAction(usize),
    #[error("response {0} is not in the response set")]
    BadResponse(usize),
    #[error("negative sample size must be >= 1")]
    ZeroSample,
    #[error("hops must be 1, 2 or 3, got {0}")]
    BadHops(usize),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub const UNK: &str = "<unk>";

/// Lowercases, splits on whitespace and strips trailing punctuation from
/// each token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_end_matches(['.', ',', '!', '?', ';', ':']).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Sparse bag of words: `(word index, count)` sorted by index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bow(pub Vec<(usize, f64)>);

impl Bow {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dense(&self, vocab_size: usize) -> Vec<f64> {
        let mut v = vec![0.0; vocab_size];
        for &(w, c) in &self.0 {
            v[w] += c;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    /// `UNK` at index 0, then every token of `texts` in sorted order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = BTreeSet::new();
        for t in texts {
            set.extend(tokenize(t));
        }
        set.remove(UNK);
        let mut words = vec![UNK.to_string()];
        words.extend(set);
        words.into()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn encode(&self, text: &str) -> Bow {
        let mut counts: Vec<(usize, f64)> = Vec::new();
        for tok in tokenize(text) {
            let w = self.get(&tok).unwrap_or(0);
            match counts.iter_mut().find(|(i, _)| *i == w) {
                Some((_, c)) => *c += 1.0,
                None => counts.push((w, 1.0)),
            }
        }
        counts.sort_by_key(|(i, _)| *i);
        Bow(counts)
    }
}

/// A fixed list of utterances with their encodings; used both for candidate
/// answers and for teacher responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextSet {
    texts: Vec<String>,
    bows: Vec<Bow>,
}

pub type CandidateSet = TextSet;
pub type ResponseSet = TextSet;

impl TextSet {
    pub fn new(texts: Vec<String>, vocab: &Vocabulary) -> Result<Self, ModelError> {
        if texts.is_empty() {
            return Err(ModelError::NoCandidates);
        }
        let mut seen = BTreeSet::new();
        for t in &texts {
            if !seen.insert(t.as_str()) {
                return Err(ModelError::Duplicate(t.clone()));
            }
        }
        let bows = texts.iter().map(|t| vocab.encode(t)).collect();
        Ok(TextSet { texts, bows })
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn text(&self, i: usize) -> &str {
        &self.texts[i]
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn bow(&self, i: usize) -> &Bow {
        &self.bows[i]
    }

    pub fn bows(&self) -> &[Bow] {
        &self.bows
    }

    pub fn position(&self, text: &str) -> Option<usize> {
        self.texts.iter().position(|t| t == text)
    }
}

/// Distinct response indices of size `min(k, n)` that always include `target`.
pub fn subsample_negatives<R: Rng + ?Sized>(
    n: usize,
    target: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>, ModelError> {
    if k == 0 {
        return Err(ModelError::ZeroSample);
    }
    if target >= n {
        return Err(ModelError::BadResponse(target));
    }
    if k >= n {
        return Ok((0..n).collect());
    }
    let mut out = Vec::with_capacity(k);
    out.push(target);
    for j in sample(rng, n - 1, k - 1).iter() {
        out.push(if j >= target { j + 1 } else { j });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub hops: usize,
    /// Maximum number of memories (and time-embedding slots).
    pub memory_size: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(1..=3).contains(&self.hops) {
            return Err(ModelError::BadHops(self.hops));
        }
        if self.dim == 0 || self.memory_size == 0 || self.vocab_size == 0 {
            return Err(ModelError::Invalid("dim, memory_size and vocab_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ids {
    a: ParamId,
    r: [ParamId; 3],
    r_fwd: ParamId,
    beta: ParamId,
    time: ParamId,
}

fn hop_name(h: usize) -> String {
    format!("R{}", h + 1)
}

impl Ids {
    fn lookup(store: &ParamStore, hops: usize) -> Result<Self, ModelError> {
        let a = store.require("A")?;
        let mut r = [a; 3];
        for (h, slot) in r.iter_mut().enumerate().take(hops) {
            *slot = store.require(&hop_name(h))?;
        }
        Ok(Ids { a, r, r_fwd: store.require("R_fwd")?, beta: store.require("beta")?, time: store.require("T")? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MemNetRepr {
    config: ModelConfig,
    params: ParamStore,
}

/// Model weights: `A` (d x V), `R1..R_hops` and `R_fwd` (d x d), `beta`
/// (d x 1) and `T` (d x memory_size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MemNetRepr", into = "MemNetRepr")]
pub struct MemNet {
    config: ModelConfig,
    params: ParamStore,
    ids: Ids,
}

impl TryFrom<MemNetRepr> for MemNet {
    type Error = ModelError;

    fn try_from(repr: MemNetRepr) -> Result<Self, Self::Error> {
        MemNet::from_params(repr.config, repr.params)
    }
}

impl From<MemNet> for MemNetRepr {
    fn from(net: MemNet) -> Self {
        MemNetRepr { config: net.config, params: net.params }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopTrace {
    pub p: Vec<f64>,
    pub o: Vec<f64>,
    pub u: Vec<f64>,
}

/// Intermediate values of the base network.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub q: Vec<f64>,
    pub memories: Vec<Vec<f64>>,
    pub hops: Vec<HopTrace>,
}

impl AttentionTrace {
    /// Final controller state.
    pub fn u(&self) -> &[f64] {
        self.hops.last().map(|h| h.u.as_slice()).unwrap_or(&self.q)
    }

    pub fn p1(&self) -> &[f64] {
        &self.hops[0].p
    }

    pub fn p2(&self) -> Option<&[f64]> {
        self.hops.get(1).map(|h| h.p.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FpTrace {
    pub base: AttentionTrace,
    pub answers: Vec<Vec<f64>>,
    pub p3: Vec<f64>,
    pub o3: Vec<f64>,
    pub u3: Vec<f64>,
    pub responses: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Init {
    pub sigma: f64,
    pub beta_sigma: f64,
}

/// One training instance for the forward-prediction head.
#[derive(Debug, Clone, Copy)]
pub struct FpTarget<'a> {
    pub selected: usize,
    pub responses: &'a [&'a Bow],
    pub target: usize,
}

impl MemNet {
    /// Gaussian initialisation with standard deviation `sigma` everywhere.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, sigma: f64, rng: &mut R) -> Result<Self, ModelError> {
        Self::with_init(config, Init { sigma, beta_sigma: sigma }, rng)
    }

    /// Gaussian initialisation; `R_fwd` additionally starts at the identity
    /// so the prediction head initially scores responses against `o3 + u`.
    pub fn with_init<R: Rng + ?Sized>(config: ModelConfig, init: Init, rng: &mut R) -> Result<Self, ModelError> {
        let mut count = 0;
        let mut net = Self::build(config, |r, c| {
            count += 1;
            // build order: A, R1..Rh, R_fwd, beta, T
            let sigma = if count == config.hops + 3 { init.beta_sigma } else { init.sigma };
            Matrix::gaussian(r, c, sigma, rng)
        })?;
        let m = net.params.value_mut(net.ids.r_fwd);
        for i in 0..config.dim {
            m.set(i, i, m.get(i, i) + 1.0);
        }
        Ok(net)
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        Self::build(config, Matrix::zeros)
    }

    fn build(config: ModelConfig, mut init: impl FnMut(usize, usize) -> Matrix) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.dim;
        let mut store = ParamStore::new();
        store.insert("A", init(d, config.vocab_size))?;
        for h in 0..config.hops {
            store.insert(&hop_name(h), init(d, d))?;
        }
        store.insert("R_fwd", init(d, d))?;
        store.insert("beta", init(d, 1))?;
        store.insert("T", init(d, config.memory_size))?;
        Self::from_params(config, store)
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let ids = Ids::lookup(&params, config.hops)?;
        let d = config.dim;
        let expect = |id: ParamId, shape: (usize, usize)| {
            let got = params.value(id).shape();
            if got == shape {
                Ok(())
            } else {
                Err(ModelError::Invalid(format!("{} has shape {got:?}, expected {shape:?}", params.name(id))))
            }
        };
        expect(ids.a, (d, config.vocab_size))?;
        for h in 0..config.hops {
            expect(ids.r[h], (d, d))?;
        }
        expect(ids.r_fwd, (d, d))?;
        expect(ids.beta, (d, 1))?;
        expect(ids.time, (d, config.memory_size))?;
        if params.values().iter().any(|m| !m.is_finite()) {
            return Err(ModelError::Invalid("non-finite parameter".into()));
        }
        Ok(MemNet { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Matrix> {
        self.params.id(name).map(|id| self.params.value(id))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.id(name).map(|id| self.params.value_mut(id))
    }

    fn check_memories(&self, memories: &[Bow]) -> Result<(), ModelError> {
        if memories.len() > self.config.memory_size {
            return Err(ModelError::Capacity { got: memories.len(), capacity: self.config.memory_size });
        }
        Ok(())
    }

    pub fn forward_answer(
        &self,
        x: &Bow,
        memories: &[Bow],
        candidates: &CandidateSet,
    ) -> Result<(Vec<f64>, AttentionTrace), ModelError> {
        self.check_memories(memories)?;
        let vals = self.params.values();
        let base = base_forward(vals, &self.ids, self.config.hops, x, memories);
        let answers: Vec<Vec<f64>> = candidates.bows().iter().map(|b| embed(&vals[self.ids.a.0], b)).collect();
        let scores: Vec<f64> = answers.iter().map(|e| dot(base.u(), e)).collect();
        Ok((softmax(&scores)?, base))
    }

    /// Distribution over `responses` for the answer `selected`.
    pub fn forward_predict(
        &self,
        x: &Bow,
        memories: &[Bow],
        candidates: &CandidateSet,
        selected: usize,
        responses: &[&Bow],
    ) -> Result<(Vec<f64>, FpTrace), ModelError> {
        self.check_memories(memories)?;
        if selected >= candidates.len() {
            return Err(ModelError::BadAction(selected));
        }
        let vals = self.params.values();
        let base = base_forward(vals, &self.ids, self.config.hops, x, memories);
        let trace = fp_forward(vals, &self.ids, base, candidates.bows(), selected, responses)?;
        let scores: Vec<f64> = trace.responses.iter().map(|r| dot(&trace.u3, r)).collect();
        Ok((softmax(&scores)?, trace))
    }

    /// Index of the most likely candidate; ties go to the lowest index.
    pub fn predict(&self, x: &Bow, memories: &[Bow], candidates: &CandidateSet) -> Result<usize, ModelError> {
        let (p, _) = self.forward_answer(x, memories, candidates)?;
        Ok(argmax(&p))
    }

    /// Adds the gradient of the answer cross-entropy to the parameter
    /// gradients and returns the loss.
    pub fn accumulate_answer_grad(
        &mut self,
        x: &Bow,
        memories: &[Bow],
        candidates: &CandidateSet,
        target: usize,
    ) -> Result<f64, ModelError> {
        self.check_memories(memories)?;
        let ids = self.ids;
        let hops = self.config.hops;
        let (vals, grads) = self.params.split_mut();
        let a = &vals[ids.a.0];
        let base = base_forward(vals, &ids, hops, x, memories);
        let answers: Vec<Vec<f64>> = candidates.bows().iter().map(|b| embed(a, b)).collect();
        let scores: Vec<f64> = answers.iter().map(|e| dot(base.u(), e)).collect();
        let ce = softmax_cross_entropy(&scores, target)?;

        let mut du = vec![0.0; self.config.dim];
        for (j, g) in ce.grad.iter().enumerate() {
            axpy(*g, &answers[j], &mut du);
            scatter_cols(&mut grads[ids.a.0], candidates.bow(j), *g, base.u());
        }
        base_backward(vals, grads, &ids, &base, x, memories, du);
        Ok(ce.loss)
    }

    /// Adds the gradient of the forward-prediction cross-entropy and
    /// returns the loss.
    pub fn accumulate_fp_grad(
        &mut self,
        x: &Bow,
        memories: &[Bow],
        candidates: &CandidateSet,
        fp: FpTarget<'_>,
    ) -> Result<f64, ModelError> {
        self.check_memories(memories)?;
        if fp.selected >= candidates.len() {
            return Err(ModelError::BadAction(fp.selected));
        }
        let ids = self.ids;
        let hops = self.config.hops;
        let (vals, grads) = self.params.split_mut();
        let base = base_forward(vals, &ids, hops, x, memories);
        let t = fp_forward(vals, &ids, base, candidates.bows(), fp.selected, fp.responses)?;
        let scores: Vec<f64> = t.responses.iter().map(|r| dot(&t.u3, r)).collect();
        let ce = softmax_cross_entropy(&scores, fp.target)?;
        let d = t.u3.len();

        // response scores
        let mut du3 = vec![0.0; d];
        for (k, g) in ce.grad.iter().enumerate() {
            axpy(*g, &t.responses[k], &mut du3);
            scatter_cols(&mut grads[ids.a.0], fp.responses[k], *g, &t.u3);
        }
        // u3 = R_fwd (o3 + u)
        let u = t.base.u().to_vec();
        let mut z3 = t.o3.clone();
        axpy(1.0, &u, &mut z3);
        grads[ids.r_fwd.0].add_outer(1.0, &du3, &z3);
        let do3 = vals[ids.r_fwd.0].matvec_t(&du3);
        let mut du = do3.clone();

        // o3 = sum_j p3_j e_j + p3_a beta
        let beta = vals[ids.beta.0].data();
        let mut dp3: Vec<f64> = t.answers.iter().map(|e| dot(&do3, e)).collect();
        dp3[fp.selected] += dot(&do3, beta);
        axpy(t.p3[fp.selected], &do3, grads[ids.beta.0].data_mut());
        let ds3 = softmax_backward(&t.p3, &dp3);
        for (j, e) in t.answers.iter().enumerate() {
            axpy(ds3[j], e, &mut du);
            // de_j = p3_j do3 + ds3_j u
            let bow = candidates.bow(j);
            scatter_cols(&mut grads[ids.a.0], bow, t.p3[j], &do3);
            scatter_cols(&mut grads[ids.a.0], bow, ds3[j], &u);
        }
        base_backward(vals, grads, &ids, &t.base, x, memories, du);
        Ok(ce.loss)
    }
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// `A b` for a sparse bag of words.
fn embed(a: &Matrix, bow: &Bow) -> Vec<f64> {
    let mut out = vec![0.0; a.rows()];
    for &(w, c) in &bow.0 {
        a.add_col_to(w, c, &mut out);
    }
    out
}

/// `dA[:, w] += scale * count_w * v` for every word of `bow`.
fn scatter_cols(grad_a: &mut Matrix, bow: &Bow, scale: f64, v: &[f64]) {
    for &(w, c) in &bow.0 {
        grad_a.add_to_col(w, scale * c, v);
    }
}

fn slot(i: usize, n: usize) -> usize {
    n - 1 - i
}

fn base_forward(vals: &[Matrix], ids: &Ids, hops: usize, x: &Bow, memories: &[Bow]) -> AttentionTrace {
    let a = &vals[ids.a.0];
    let time = &vals[ids.time.0];
    let q = embed(a, x);
    let n = memories.len();
    let m: Vec<Vec<f64>> = memories
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut v = embed(a, c);
            time.add_col_to(slot(i, n), 1.0, &mut v);
            v
        })
        .collect();

    let mut u_prev = q.clone();
    let mut trace = Vec::with_capacity(hops);
    for h in 0..hops {
        let mut o = vec![0.0; u_prev.len()];
        let p = if m.is_empty() {
            Vec::new()
        } else {
            let scores: Vec<f64> = m.iter().map(|mi| dot(&u_prev, mi)).collect();
            let p = softmax(&scores).expect("non-empty memory");
            for (pi, mi) in p.iter().zip(&m) {
                axpy(*pi, mi, &mut o);
            }
            p
        };
        let mut z = o.clone();
        axpy(1.0, &u_prev, &mut z);
        let u = vals[ids.r[h].0].matvec(&z);
        trace.push(HopTrace { p, o, u: u.clone() });
        u_prev = u;
    }
    AttentionTrace { q, memories: m, hops: trace }
}

fn base_backward(
    vals: &[Matrix],
    grads: &mut [Matrix],
    ids: &Ids,
    trace: &AttentionTrace,
    x: &Bow,
    memories: &[Bow],
    mut du: Vec<f64>,
) {
    let n = memories.len();
    let d = du.len();
    let mut dm = vec![vec![0.0; d]; n];
    for h in (0..trace.hops.len()).rev() {
        let hop = &trace.hops[h];
        let u_in = if h == 0 { &trace.q } else { &trace.hops[h - 1].u };
        let mut z = hop.o.clone();
        axpy(1.0, u_in, &mut z);
        grads[ids.r[h].0].add_outer(1.0, &du, &z);
        let dz = vals[ids.r[h].0].matvec_t(&du);
        let mut du_in = dz.clone();
        if n > 0 {
            let dp: Vec<f64> = trace.memories.iter().map(|mi| dot(&dz, mi)).collect();
            let ds = softmax_backward(&hop.p, &dp);
            for i in 0..n {
                axpy(hop.p[i], &dz, &mut dm[i]);
                axpy(ds[i], u_in, &mut dm[i]);
                axpy(ds[i], &trace.memories[i], &mut du_in);
            }
        }
        du = du_in;
    }
    scatter_cols(&mut grads[ids.a.0], x, 1.0, &du);
    for (i, (c, g)) in memories.iter().zip(&dm).enumerate() {
        scatter_cols(&mut grads[ids.a.0], c, 1.0, g);
        grads[ids.time.0].add_to_col(slot(i, n), 1.0, g);
    }
}

fn fp_forward(
    vals: &[Matrix],
    ids: &Ids,
    base: AttentionTrace,
    candidates: &[Bow],
    selected: usize,
    responses: &[&Bow],
) -> Result<FpTrace, ModelError> {
    let a = &vals[ids.a.0];
    let answers: Vec<Vec<f64>> = candidates.iter().map(|b| embed(a, b)).collect();
    let s3: Vec<f64> = answers.iter().map(|e| dot(base.u(), e)).collect();
    let p3 = softmax(&s3)?;
    let mut o3 = vec![0.0; base.q.len()];
    for (pj, e) in p3.iter().zip(&answers) {
        axpy(*pj, e, &mut o3);
    }
    axpy(p3[selected], vals[ids.beta.0].data(), &mut o3);
    let mut z3 = o3.clone();
    axpy(1.0, base.u(), &mut z3);
    let u3 = vals[ids.r_fwd.0].matvec(&z3);
    let responses = responses.iter().map(|b| embed(a, b)).collect();
    Ok(FpTrace { base, answers, p3, o3, u3, responses })
}
