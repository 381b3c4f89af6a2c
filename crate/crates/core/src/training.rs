//! Learning strategies over dialog datasets: imitation, reward-based
//! imitation (RBI), forward prediction (FP) and RBI+FP, with model
//! selection on validation accuracy.

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memnet::{subsample_negatives, Bow, FpTarget, Init, MemNet, ModelConfig, ModelError, TextSet, Vocabulary};
use crate::taskgen::{Dataset, Speaker, TurnKind};
use crate::tensor::TensorError;

pub const CHECKPOINT_FORMAT: &str = "dialoglearn-checkpoint/1";

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid dataset: {0}")]
    Validation(String),
    #[error("training set is empty")]
    NoExamples,
    #[error("no teacher responses in the training data; forward prediction needs feedback (try imitation or rbi)")]
    NoResponses,
    #[error("answer turn without a gold annotation")]
    MissingGold,
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Model(ModelError),
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(t @ TensorError::NonFiniteGradient(_)) => TrainError::Numeric(t.to_string()),
            other => TrainError::Model(other),
        }
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        ModelError::from(e).into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Imitation,
    Rbi,
    Fp,
    RbiFp,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Imitation, Strategy::Rbi, Strategy::Fp, Strategy::RbiFp];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Imitation => "imitation",
            Strategy::Rbi => "rbi",
            Strategy::Fp => "fp",
            Strategy::RbiFp => "rbi_fp",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s || (s == "rbi+fp" && *x == Strategy::RbiFp))
            .ok_or_else(|| format!("unknown strategy {s:?} (expected imitation, rbi, fp or rbi_fp)"))
    }
}

/// Which earlier turns of an episode become memories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryScope {
    /// Teacher statements only. Memories never depend on the answering
    /// policy, so evaluation cannot see recorded answers.
    Story,
    /// Every earlier turn, including answers and feedback.
    Dialog,
}

impl FromStr for MemoryScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "story" => Ok(MemoryScope::Story),
            "dialog" => Ok(MemoryScope::Dialog),
            _ => Err(format!("unknown memory scope {s:?} (expected story or dialog)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub dim: usize,
    pub hops: usize,
    pub learning_rate: f64,
    pub epochs_max: usize,
    /// Examples whose gradients are summed into one SGD step.
    pub batch: usize,
    /// Response candidates per forward-prediction step, target included.
    pub negatives: usize,
    pub seed: u64,
    /// Independent initialisations; the one with the best validation
    /// accuracy wins.
    pub restarts: usize,
    pub early_stop_patience: usize,
    pub memory_size: usize,
    pub init_sigma: f64,
    pub init_sigma_beta: f64,
    /// Global gradient-norm ceiling per step; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Count answers that receive no feedback at all (expert answers) as
    /// rewarded for RBI.
    pub expert_counts_as_reward: bool,
    pub memory_scope: MemoryScope,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            dim: 32,
            hops: 2,
            learning_rate: 0.01,
            epochs_max: 100,
            batch: 8,
            negatives: 16,
            seed: 1,
            restarts: 3,
            early_stop_patience: 30,
            memory_size: 50,
            init_sigma: 0.1,
            init_sigma_beta: 0.3,
            clip_norm: Some(40.0),
            expert_counts_as_reward: true,
            memory_scope: MemoryScope::Story,
        }
    }
}

impl Hyperparams {
    pub fn init(&self) -> Init {
        Init { sigma: self.init_sigma, beta_sigma: self.init_sigma_beta }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("dim", self.dim),
            ("epochs_max", self.epochs_max),
            ("batch", self.batch),
            ("negatives", self.negatives),
            ("restarts", self.restarts),
            ("early_stop_patience", self.early_stop_patience),
            ("memory_size", self.memory_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Hyper(format!("{name} must be positive")));
        }
        if !(1..=3).contains(&self.hops) {
            return Err(TrainError::Hyper(format!("hops must be 1, 2 or 3, got {}", self.hops)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Hyper("learning_rate must be positive".into()));
        }
        for (name, v) in [("init_sigma", self.init_sigma), ("init_sigma_beta", self.init_sigma_beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Hyper(format!("{name} must be non-negative")));
            }
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return Err(TrainError::Hyper("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    /// The question being answered.
    pub question: String,
    /// Earlier turns of the episode, oldest first.
    pub memories: Vec<String>,
    pub answer: String,
    pub reward: bool,
    /// Teacher turns that follow the answer, joined by spaces; empty when the
    /// answer drew no feedback.
    pub response: String,
    /// Evaluation only.
    pub gold: Option<String>,
}

impl TrainingExample {
    /// An answer nobody reacted to, as given by an expert student.
    pub fn is_expert(&self) -> bool {
        self.response.is_empty()
    }
}

/// One example per answer turn.
pub fn extract_examples(dataset: &Dataset, scope: MemoryScope) -> Result<Vec<TrainingExample>, TrainError> {
    let mut out = Vec::new();
    for (e, episode) in dataset.episodes.iter().enumerate() {
        let turns = &episode.turns;
        let mut question: Option<usize> = None;
        for (i, turn) in turns.iter().enumerate() {
            match turn.kind {
                TurnKind::Q => question = Some(i),
                TurnKind::Ans => {
                    let q = question.take().ok_or_else(|| {
                        TrainError::Validation(format!(
                            "episode {}: answer at turn {} without a question",
                            e + 1,
                            i + 1
                        ))
                    })?;
                    let memories = turns[..q]
                        .iter()
                        .filter(|t| scope == MemoryScope::Dialog || t.kind == TurnKind::Stmt)
                        .map(|t| t.text.clone())
                        .collect();
                    let mut response = Vec::new();
                    let mut reward = false;
                    for t in turns[i + 1..].iter().take_while(|t| t.kind.is_feedback() || t.kind == TurnKind::Help) {
                        reward |= t.reward;
                        if t.speaker == Speaker::Teacher {
                            response.push(t.text.as_str());
                        }
                    }
                    out.push(TrainingExample {
                        question: turns[q].text.clone(),
                        memories,
                        answer: turn.text.clone(),
                        reward,
                        response: response.join(" "),
                        gold: turn.gold.clone(),
                    });
                }
                _ => {}
            }
        }
    }
    Ok(out)
}

/// Everything needed to answer questions: vocabulary, candidate answers,
/// teacher responses seen in training, and the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub vocab: Vocabulary,
    pub candidates: TextSet,
    pub responses: Option<TextSet>,
    pub scope: MemoryScope,
    pub net: MemNet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub x: Bow,
    pub memories: Vec<Bow>,
    pub answer: Option<usize>,
    pub response: Option<usize>,
    pub reward: bool,
    pub expert: bool,
    pub gold: Option<String>,
}

impl Model {
    /// Builds the vocabulary, candidate and response sets from training
    /// examples and initialises a network around them.
    pub fn for_examples(
        examples: &[TrainingExample],
        hyper: &Hyperparams,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TrainError> {
        let vocab = Vocabulary::build(examples.iter().flat_map(|ex| {
            ex.memories.iter().map(String::as_str).chain([
                ex.question.as_str(),
                ex.answer.as_str(),
                ex.response.as_str(),
            ])
        }));
        let mut answers: Vec<String> = examples.iter().map(|ex| ex.answer.clone()).collect();
        answers.sort();
        answers.dedup();
        let candidates = TextSet::new(answers, &vocab)?;
        let mut responses: Vec<String> =
            examples.iter().filter(|ex| !ex.response.is_empty()).map(|ex| ex.response.clone()).collect();
        responses.sort();
        responses.dedup();
        let responses = if responses.is_empty() { None } else { Some(TextSet::new(responses, &vocab)?) };
        let config =
            ModelConfig { dim: hyper.dim, hops: hyper.hops, memory_size: hyper.memory_size, vocab_size: vocab.len() };
        let net = MemNet::with_init(config, hyper.init(), rng)?;
        Ok(Model { vocab, candidates, responses, scope: hyper.memory_scope, net })
    }

    pub fn encode(&self, ex: &TrainingExample) -> Encoded {
        let m = self.net.config().memory_size;
        let skip = ex.memories.len().saturating_sub(m);
        Encoded {
            x: self.vocab.encode(&ex.question),
            memories: ex.memories[skip..].iter().map(|c| self.vocab.encode(c)).collect(),
            answer: self.candidates.position(&ex.answer),
            response: self.responses.as_ref().and_then(|r| r.position(&ex.response)),
            reward: ex.reward,
            expert: ex.is_expert(),
            gold: ex.gold.clone(),
        }
    }

    pub fn predict(&self, ex: &Encoded) -> Result<&str, TrainError> {
        let i = self.net.predict(&ex.x, &ex.memories, &self.candidates)?;
        Ok(self.candidates.text(i))
    }

    /// Percentage of questions whose predicted answer equals the gold label.
    pub fn accuracy(&self, examples: &[Encoded]) -> Result<f64, TrainError> {
        if examples.is_empty() {
            return Ok(0.0);
        }
        let mut hits = 0usize;
        for ex in examples {
            let gold = ex.gold.as_deref().ok_or(TrainError::MissingGold)?;
            if self.predict(ex)? == gold {
                hits += 1;
            }
        }
        Ok(100.0 * hits as f64 / examples.len() as f64)
    }
}

/// Test accuracy (%) of `model` on `dataset`. Only questions and memories
/// feed the prediction; the recorded answers are never read.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<f64, TrainError> {
    let examples = extract_examples(dataset, model.scope)?;
    let encoded: Vec<Encoded> = examples.iter().map(|e| model.encode(e)).collect();
    model.accuracy(&encoded)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub restart: usize,
    pub epoch: usize,
    /// Mean loss per active example; absent for the initial evaluation.
    pub train_loss: Option<f64>,
    pub valid_acc: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.train_loss {
            Some(l) => write!(
                f,
                "restart={}\tepoch={}\ttrain_loss={l:.6}\tvalid_acc={:.1}",
                self.restart, self.epoch, self.valid_acc
            ),
            None => write!(
                f,
                "restart={}\tepoch={}\ttrain_loss=-\tvalid_acc={:.1}",
                self.restart, self.epoch, self.valid_acc
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub strategy: Strategy,
    pub hyper: Hyperparams,
    pub best_epoch: usize,
    pub valid_acc: f64,
    pub model: Model,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(format!("unsupported checkpoint format {:?}", ck.format));
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub warnings: Vec<String>,
}

impl TrainOutcome {
    pub fn model(&self) -> &Model {
        &self.checkpoint.model
    }
}

fn rbi_eligible(ex: &Encoded, hyper: &Hyperparams) -> bool {
    ex.reward || (hyper.expert_counts_as_reward && ex.expert)
}

/// Trains with `strategy`, keeping the parameters with the best validation
/// accuracy (epoch 0 is the initialisation).
pub fn train(
    train: &Dataset,
    valid: &Dataset,
    strategy: Strategy,
    hyper: &Hyperparams,
) -> Result<TrainOutcome, TrainError> {
    hyper.validate()?;
    let examples = extract_examples(train, hyper.memory_scope)?;
    if examples.is_empty() {
        return Err(TrainError::NoExamples);
    }
    let mut model = Model::for_examples(&examples, hyper, &mut ChaCha8Rng::seed_from_u64(hyper.seed))?;
    let encoded: Vec<Encoded> = examples.iter().map(|e| model.encode(e)).collect();
    let valid_set: Vec<Encoded> =
        extract_examples(valid, hyper.memory_scope)?.iter().map(|e| model.encode(e)).collect();

    let use_fp = matches!(strategy, Strategy::Fp | Strategy::RbiFp);
    let answer_step = |ex: &Encoded| match strategy {
        Strategy::Imitation => true,
        Strategy::Rbi | Strategy::RbiFp => rbi_eligible(ex, hyper),
        Strategy::Fp => false,
    };
    let fp_step = |ex: &Encoded| use_fp && ex.response.is_some();

    if strategy == Strategy::Fp && !encoded.iter().any(fp_step) {
        return Err(TrainError::NoResponses);
    }
    let active: Vec<usize> = (0..encoded.len()).filter(|&i| answer_step(&encoded[i]) || fp_step(&encoded[i])).collect();
    let mut warnings = Vec::new();
    if active.is_empty() {
        let msg = format!("{strategy}: no usable training examples; returning the initial parameters");
        warn!("{msg}");
        warnings.push(msg);
    }

    let n_responses = model.responses.as_ref().map_or(0, TextSet::len);
    let mut best: Option<(f64, MemNet, usize)> = None;
    let mut log = Vec::new();
    for restart in 0..hyper.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        rng.set_stream(restart as u64);
        model.net = MemNet::with_init(*model.net.config(), hyper.init(), &mut rng)?;
        let mut best_acc = model.accuracy(&valid_set)?;
        let mut best_net = model.net.clone();
        let mut best_epoch = 0;
        log.push(EpochLog { restart, epoch: 0, train_loss: None, valid_acc: best_acc });
        let mut order = active.clone();
        let mut since_best = 0;

        for epoch in 1..=hyper.epochs_max {
            if active.is_empty() || best_acc >= 100.0 {
                break;
            }
            order.shuffle(&mut rng);
            let mut loss = 0.0;
            for chunk in order.chunks(hyper.batch) {
                if use_fp {
                    let mut any = false;
                    for &i in chunk {
                        let ex = &encoded[i];
                        let (Some(target), Some(selected)) = (ex.response, ex.answer) else { continue };
                        let subset = subsample_negatives(n_responses, target, hyper.negatives, &mut rng)?;
                        let responses = model.responses.as_ref().expect("responses exist when targets do");
                        let bows: Vec<&Bow> = subset.iter().map(|&k| responses.bow(k)).collect();
                        let pos = subset.iter().position(|&k| k == target).expect("subset keeps the target");
                        let fp = FpTarget { selected, responses: &bows, target: pos };
                        loss += model.net.accumulate_fp_grad(&ex.x, &ex.memories, &model.candidates, fp)?;
                        any = true;
                    }
                    if any {
                        step(&mut model.net, hyper)?;
                    }
                }
                let mut any = false;
                for &i in chunk {
                    let ex = &encoded[i];
                    if !answer_step(ex) {
                        continue;
                    }
                    let target = ex.answer.expect("training answers are candidates");
                    loss += model.net.accumulate_answer_grad(&ex.x, &ex.memories, &model.candidates, target)?;
                    any = true;
                }
                if any {
                    step(&mut model.net, hyper)?;
                }
            }
            let acc = model.accuracy(&valid_set)?;
            log.push(EpochLog { restart, epoch, train_loss: Some(loss / active.len() as f64), valid_acc: acc });
            if acc > best_acc {
                best_acc = acc;
                best_net = model.net.clone();
                best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= hyper.early_stop_patience {
                    break;
                }
            }
        }
        if best.as_ref().is_none_or(|(acc, _, _)| best_acc > *acc) {
            best = Some((best_acc, best_net, best_epoch));
        }
        if best_acc >= 100.0 || active.is_empty() {
            break;
        }
    }
    let (best_acc, best_net, best_epoch) = best.expect("at least one restart");
    model.net = best_net;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            strategy,
            hyper: hyper.clone(),
            best_epoch,
            valid_acc: best_acc,
            model,
        },
        log,
        warnings,
    })
}

fn step(net: &mut MemNet, hyper: &Hyperparams) -> Result<(), TrainError> {
    let params = net.params_mut();
    if let Some(c) = hyper.clip_norm {
        params.clip_grad_norm(c);
    }
    Ok(params.sgd_step(hyper.learning_rate)?)
}

pub fn train_imitation(train_set: &Dataset, valid: &Dataset, hyper: &Hyperparams) -> Result<TrainOutcome, TrainError> {
    train(train_set, valid, Strategy::Imitation, hyper)
}

pub fn train_rbi(train_set: &Dataset, valid: &Dataset, hyper: &Hyperparams) -> Result<TrainOutcome, TrainError> {
    train(train_set, valid, Strategy::Rbi, hyper)
}

pub fn train_fp(train_set: &Dataset, valid: &Dataset, hyper: &Hyperparams) -> Result<TrainOutcome, TrainError> {
    train(train_set, valid, Strategy::Fp, hyper)
}

pub fn train_rbi_fp(train_set: &Dataset, valid: &Dataset, hyper: &Hyperparams) -> Result<TrainOutcome, TrainError> {
    train(train_set, valid, Strategy::RbiFp, hyper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogfmt::parse;
    use crate::taskgen::{apply_mode, DialogEpisode, FeedbackTemplates, Policy, SupervisionMode, Turn, WorldSource};
    use crate::world::{EpisodeSkeleton, WorldConfig};

    fn example_dialog(task: u8, answers: [&str; 2]) -> Dataset {
        // Policy answers are forced by picking pi 0 or 1 per question via a
        // hand-built episode; feedback comes from the generator.
        let src = WorldSource { config: WorldConfig::default() };
        let sk = EpisodeSkeleton::example_story();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ep = apply_mode(
            &src,
            &sk,
            SupervisionMode::new(task).unwrap(),
            &Policy::new(1.0),
            &FeedbackTemplates::default(),
            &mut rng,
        )
        .unwrap();
        // rewrite answers and feedback for the requested answers
        let golds = ["kitchen", "bathroom"];
        let mut out = Vec::new();
        let mut q = 0;
        let mut i = 0;
        while i < ep.turns.len() {
            let t = ep.turns[i].clone();
            if t.kind == TurnKind::Ans {
                out.push(Turn::answer(answers[q], golds[q]));
                let support = sk.statement(sk.supporting_fact([3, 4][q]).unwrap()).unwrap().clone();
                let ex = crate::taskgen::Exchange {
                    correct: answers[q] == golds[q],
                    gold: golds[q],
                    support: &support,
                    hint_class: Some(crate::taskgen::location_class(golds[q]).unwrap()),
                };
                if task != 1 {
                    out.extend(
                        crate::taskgen::render_feedback(
                            SupervisionMode::new(task).unwrap(),
                            ex,
                            &FeedbackTemplates::default(),
                            &mut rng,
                        )
                        .unwrap(),
                    );
                }
                q += 1;
                i += 1;
                while i < ep.turns.len() && (ep.turns[i].kind.is_feedback() || ep.turns[i].kind == TurnKind::Help) {
                    i += 1;
                }
                continue;
            }
            out.push(t);
            i += 1;
        }
        ep.turns = out;
        Dataset { episodes: vec![ep] }
    }

    #[test]
    fn task3_example_gives_two_examples() {
        let d = example_dialog(3, ["bedroom", "bathroom"]);
        let ex = extract_examples(&d, MemoryScope::Story).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].question, "Where is Mary?");
        assert_eq!(ex[0].answer, "bedroom");
        assert_eq!(ex[0].response, "No, the answer is kitchen.");
        assert!(!ex[0].reward);
        assert_eq!(ex[0].memories.len(), 3);
        assert!(ex[1].reward);
        // the story memory holds statements only
        assert_eq!(ex[1].memories.len(), 3);
        assert!(!ex[1].memories.iter().any(|m| m.ends_with('?')));
        let dialog = extract_examples(&d, MemoryScope::Dialog).unwrap();
        assert_eq!(dialog[1].memories.len(), 6);
        assert_eq!(dialog[1].memories[4], "bedroom");
    }

    #[test]
    fn task1_examples_are_unrewarded_and_silent() {
        let d = example_dialog(1, ["kitchen", "bathroom"]);
        let ex = extract_examples(&d, MemoryScope::Story).unwrap();
        assert_eq!(ex.len(), 2);
        assert!(ex.iter().all(|e| !e.reward && e.response.is_empty() && e.is_expert()));
    }

    #[test]
    fn task10_response_skips_the_help_request() {
        let d = example_dialog(10, ["kitchen", "hallway"]);
        let ex = extract_examples(&d, MemoryScope::Story).unwrap();
        let negatives = FeedbackTemplates::default().negative;
        let r = &ex[1].response;
        let (neg, rest) = negatives
            .iter()
            .find_map(|n| r.strip_prefix(n.as_str()).map(|rest| (n, rest)))
            .expect("negative template first");
        assert!(!neg.is_empty());
        assert_eq!(rest, " A relevant fact is John moved to the bathroom.");
    }

    #[test]
    fn answer_before_question_is_rejected() {
        let d = Dataset { episodes: vec![DialogEpisode { turns: vec![Turn::answer("kitchen", "kitchen")] }] };
        assert!(matches!(extract_examples(&d, MemoryScope::Story), Err(TrainError::Validation(_))));
    }

    fn small_hyper() -> Hyperparams {
        Hyperparams {
            dim: 8,
            epochs_max: 200,
            early_stop_patience: 200,
            batch: 1,
            learning_rate: 0.05,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn memorizes_a_single_example() {
        let text = "#dialoglearn v1\n1\tT\tstmt\tMary went to the hallway.\t0\t-\n2\tT\tq\tWhere is Mary?\t0\t-\n3\tL\tans\thallway\t0\thallway\n\
                    ==\n1\tT\tstmt\tMary went to the kitchen.\t0\t-\n2\tT\tq\tWhere is Mary?\t0\t-\n3\tL\tans\tkitchen\t0\tkitchen\n";
        let d = parse(text).unwrap();
        let one = Dataset { episodes: vec![d.episodes[0].clone()] };
        // candidates come from the training answers; give it a second one so
        // the task is not trivial
        let out = train_imitation(&d, &one, &small_hyper()).unwrap();
        assert_eq!(evaluate(out.model(), &one).unwrap(), 100.0);
        assert_eq!(evaluate(out.model(), &d).unwrap(), 100.0);
    }

    #[test]
    fn fp_refuses_feedback_free_data() {
        let d = example_dialog(1, ["kitchen", "bathroom"]);
        assert_eq!(train_fp(&d, &d, &small_hyper()).unwrap_err(), TrainError::NoResponses);
    }

    #[test]
    fn rbi_without_rewards_returns_initial_params() {
        let d = example_dialog(7, ["kitchen", "hallway"]);
        let h = small_hyper();
        let out = train_rbi(&d, &d, &h).unwrap();
        assert_eq!(out.warnings.len(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(h.seed);
        let examples = extract_examples(&d, h.memory_scope).unwrap();
        let init = Model::for_examples(&examples, &h, &mut rng).unwrap();
        assert_eq!(out.model().net, init.net);
    }

    #[test]
    fn rbi_matches_imitation_when_everything_is_rewarded() {
        let d = example_dialog(2, ["kitchen", "bathroom"]);
        let mut h = small_hyper();
        h.epochs_max = 5;
        let a = train_imitation(&d, &d, &h).unwrap();
        let b = train_rbi(&d, &d, &h).unwrap();
        assert_eq!(a.model().net, b.model().net);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn missing_gold_is_an_error() {
        let text = "#dialoglearn v1\n1\tT\tstmt\tMary went to the hallway.\t0\t-\n2\tT\tq\tWhere is Mary?\t0\t-\n3\tL\tans\thallway\t0\t-\n";
        let d = parse(text).unwrap();
        let mut h = small_hyper();
        h.epochs_max = 1;
        let err = train_imitation(&d, &d, &h).unwrap_err();
        assert_eq!(err, TrainError::MissingGold);
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("ppo".parse::<Strategy>().is_err());
    }

    #[test]
    fn checkpoint_roundtrips_through_json() {
        let d = example_dialog(3, ["bedroom", "bathroom"]);
        let mut h = small_hyper();
        h.epochs_max = 3;
        let out = train_rbi_fp(&d, &d, &h).unwrap();
        let json = out.checkpoint.to_json();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(back, out.checkpoint);
        assert_eq!(back.to_json(), json);
    }
}
