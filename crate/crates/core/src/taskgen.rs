//! Turning stories into the ten dialog-supervision tasks.
//!
//! A fixed answering policy (correct with probability `pi_acc`) plays the
//! learner and the teacher reacts according to the task's supervision mode:
//!
//! | task | teacher behaviour on a wrong answer | external reward on correct |
//! |------|-------------------------------------|----------------------------|
//! | 1    | (expert answers, no feedback)       | none                       |
//! | 2    | negative template                   | always                     |
//! | 3    | "No, the answer is X."              | always                     |
//! | 4    | "No, they are upstairs."            | always                     |
//! | 5    | "No, because <fact>."               | always                     |
//! | 6    | as task 3                           | half of the time           |
//! | 7    | as task 3                           | never                      |
//! | 8    | per question: task 1 or task 2      | task 2 half only           |
//! | 9    | negative, help request, "X."        | always                     |
//! | 10   | negative, help request, fact hint   | always                     |

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{gen_skeleton, EpisodeSkeleton, Event, Statement, WorldConfig, WorldError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("gold answer {0:?} is not among the candidates")]
    GoldNotCandidate(String),
    #[error("need at least two candidate answers, got {0}")]
    TooFewCandidates(usize),
    #[error("unknown location {0:?}")]
    UnknownLocation(String),
    #[error("task {0} has no teacher feedback")]
    NoFeedback(u8),
    #[error("task number must be in 1..=10, got {0}")]
    BadTask(u8),
    #[error("invalid policy: {0}")]
    BadPolicy(String),
    #[error("task 4 feedback needs the answer's class")]
    MissingHint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bias {
    /// Probability that a wrong answer is `answer` instead of a uniform guess.
    pub probability: f64,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub pi_acc: f64,
    pub bias: Option<Bias>,
}

impl Policy {
    pub fn new(pi_acc: f64) -> Self {
        Policy { pi_acc, bias: None }
    }

    /// Correct with probability `pi_acc`; when wrong, says "bathroom" half the
    /// time and guesses uniformly otherwise.
    pub fn bathroom_biased(pi_acc: f64) -> Self {
        Policy { pi_acc, bias: Some(Bias { probability: 0.5, answer: "bathroom".into() }) }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if !(0.0..=1.0).contains(&self.pi_acc) {
            return Err(TaskError::BadPolicy(format!("pi_acc {} outside [0, 1]", self.pi_acc)));
        }
        if let Some(b) = &self.bias {
            if !(0.0..=1.0).contains(&b.probability) {
                return Err(TaskError::BadPolicy(format!("bias probability {} outside [0, 1]", b.probability)));
            }
        }
        Ok(())
    }
}

/// One of the ten supervision setups, numbered as in the task list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SupervisionMode(u8);

impl SupervisionMode {
    pub const ALL: [SupervisionMode; 10] = [
        SupervisionMode(1),
        SupervisionMode(2),
        SupervisionMode(3),
        SupervisionMode(4),
        SupervisionMode(5),
        SupervisionMode(6),
        SupervisionMode(7),
        SupervisionMode(8),
        SupervisionMode(9),
        SupervisionMode(10),
    ];

    pub fn new(task: u8) -> Result<Self, TaskError> {
        if (1..=10).contains(&task) {
            Ok(SupervisionMode(task))
        } else {
            Err(TaskError::BadTask(task))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    /// Probability that a correct answer earns the external reward.
    pub fn reward_rate(self) -> f64 {
        match self.0 {
            1 | 7 => 0.0,
            6 => 0.5,
            _ => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self.0 {
            1 => "Imitating an Expert Student",
            2 => "Positive and Negative Feedback",
            3 => "Answers Supplied by Teacher",
            4 => "Hints Supplied by Teacher",
            5 => "Supporting Facts Supplied by Teacher",
            6 => "Partial Feedback",
            7 => "No Feedback",
            8 => "Imitation + Feedback Mixture",
            9 => "Asking For Corrections",
            _ => "Asking For Supporting Facts",
        }
    }
}

impl fmt::Display for SupervisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    Teacher,
    Learner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TurnKind {
    Stmt,
    Q,
    Ans,
    Fb,
    Help,
    HintFb,
    AnswerFb,
    FactFb,
}

impl TurnKind {
    pub const ALL: [TurnKind; 8] = [
        TurnKind::Stmt,
        TurnKind::Q,
        TurnKind::Ans,
        TurnKind::Fb,
        TurnKind::Help,
        TurnKind::HintFb,
        TurnKind::AnswerFb,
        TurnKind::FactFb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TurnKind::Stmt => "stmt",
            TurnKind::Q => "q",
            TurnKind::Ans => "ans",
            TurnKind::Fb => "fb",
            TurnKind::Help => "help",
            TurnKind::HintFb => "hint-fb",
            TurnKind::AnswerFb => "answer-fb",
            TurnKind::FactFb => "fact-fb",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn is_feedback(self) -> bool {
        matches!(self, TurnKind::Fb | TurnKind::HintFb | TurnKind::AnswerFb | TurnKind::FactFb)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub kind: TurnKind,
    pub text: String,
    pub reward: bool,
    /// Gold answer, carried on answer turns for evaluation.
    pub gold: Option<String>,
}

impl Turn {
    pub fn teacher(kind: TurnKind, text: impl Into<String>) -> Self {
        Turn { speaker: Speaker::Teacher, kind, text: text.into(), reward: false, gold: None }
    }

    pub fn answer(text: impl Into<String>, gold: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::Learner,
            kind: TurnKind::Ans,
            text: text.into(),
            reward: false,
            gold: Some(gold.into()),
        }
    }

    pub fn help() -> Self {
        Turn { speaker: Speaker::Learner, kind: TurnKind::Help, text: HELP_REQUEST.into(), reward: false, gold: None }
    }

    fn rewarded(mut self, reward: bool) -> Self {
        self.reward = reward;
        self
    }

    /// Checks the per-turn invariants: learners only answer or ask for help,
    /// and only plain teacher feedback may carry the external reward.
    pub fn check(&self) -> Result<(), String> {
        match (self.speaker, self.kind) {
            (Speaker::Learner, TurnKind::Ans | TurnKind::Help) => {}
            (Speaker::Learner, k) => return Err(format!("learner turn of kind {}", k.as_str())),
            (Speaker::Teacher, TurnKind::Ans | TurnKind::Help) => {
                return Err(format!("teacher turn of kind {}", self.kind.as_str()))
            }
            (Speaker::Teacher, _) => {}
        }
        if self.reward && !(self.speaker == Speaker::Teacher && self.kind == TurnKind::Fb) {
            return Err(format!("reward on a {} turn", self.kind.as_str()));
        }
        if self.gold.is_some() && self.kind != TurnKind::Ans {
            return Err(format!("gold annotation on a {} turn", self.kind.as_str()));
        }
        Ok(())
    }
}

pub const HELP_REQUEST: &str = "Can you help me?";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogEpisode {
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub episodes: Vec<DialogEpisode>,
}

impl Dataset {
    pub fn answers(&self) -> impl Iterator<Item = &Turn> {
        self.episodes.iter().flat_map(|e| e.turns.iter()).filter(|t| t.kind == TurnKind::Ans)
    }

    pub fn num_questions(&self) -> usize {
        self.answers().count()
    }

    pub fn stats(&self) -> DatasetStats {
        let mut s = DatasetStats::default();
        for ep in &self.episodes {
            let mut last_correct = false;
            for t in &ep.turns {
                if t.kind == TurnKind::Ans {
                    s.questions += 1;
                    last_correct = t.gold.as_deref() == Some(t.text.as_str());
                    if last_correct {
                        s.correct += 1;
                    }
                }
                if t.reward {
                    s.rewarded += 1;
                    if last_correct {
                        s.rewarded_correct += 1;
                    }
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub questions: usize,
    pub correct: usize,
    pub rewarded: usize,
    pub rewarded_correct: usize,
}

impl DatasetStats {
    pub fn policy_accuracy(&self) -> f64 {
        ratio(self.correct, self.questions)
    }

    pub fn reward_rate(&self) -> f64 {
        ratio(self.rewarded, self.questions)
    }

    pub fn reward_rate_among_correct(&self) -> f64 {
        ratio(self.rewarded_correct, self.correct)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackTemplates {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
}

impl Default for FeedbackTemplates {
    fn default() -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        FeedbackTemplates {
            positive: own(&[
                "Yes, that's right!",
                "Yes, that's correct!",
                "Correct!",
                "That's right!",
                "Yes!",
                "Right.",
            ]),
            negative: own(&[
                "No, that's incorrect.",
                "Sorry, that's not it.",
                "Wrong.",
                "No, that is incorrect.",
                "No, that's not right.",
                "That's wrong.",
            ]),
        }
    }
}

fn pick<'a, R: Rng + ?Sized>(items: &'a [String], rng: &mut R) -> &'a str {
    &items[rng.random_range(0..items.len())]
}

/// Draws the fixed policy's answer to one question.
pub fn sample_answer<'a, R: Rng + ?Sized>(
    policy: &Policy,
    gold: &str,
    candidates: &'a [String],
    rng: &mut R,
) -> Result<&'a str, TaskError> {
    if candidates.len() < 2 {
        return Err(TaskError::TooFewCandidates(candidates.len()));
    }
    let gold_idx =
        candidates.iter().position(|c| c == gold).ok_or_else(|| TaskError::GoldNotCandidate(gold.to_string()))?;
    if rng.random_bool(policy.pi_acc) {
        return Ok(&candidates[gold_idx]);
    }
    if let Some(bias) = &policy.bias {
        if bias.answer != gold {
            if let Some(fixed) = candidates.iter().find(|c| **c == bias.answer) {
                if rng.random_bool(bias.probability) {
                    return Ok(fixed);
                }
            }
        }
    }
    let j = rng.random_range(0..candidates.len() - 1);
    Ok(&candidates[if j >= gold_idx { j + 1 } else { j }])
}

/// Upstairs/downstairs class of a room, used for task 4 hints.
pub fn location_class(location: &str) -> Result<&'static str, TaskError> {
    match location {
        "kitchen" | "hallway" | "garden" => Ok("downstairs"),
        "bathroom" | "bedroom" | "office" => Ok("upstairs"),
        other => Err(TaskError::UnknownLocation(other.to_string())),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// What the teacher needs to know about the question being answered.
#[derive(Debug, Clone, Copy)]
pub struct Exchange<'a> {
    pub correct: bool,
    pub gold: &'a str,
    pub support: &'a Statement,
    /// Class of the gold answer; only consulted by task 4.
    pub hint_class: Option<&'a str>,
}

/// Teacher (and, for tasks 9 and 10, learner) turns that follow an answer.
pub fn render_feedback<R: Rng + ?Sized>(
    mode: SupervisionMode,
    ex: Exchange<'_>,
    templates: &FeedbackTemplates,
    rng: &mut R,
) -> Result<Vec<Turn>, TaskError> {
    let task = mode.number();
    if task == 1 {
        return Err(TaskError::NoFeedback(1));
    }
    if ex.correct {
        let reward = match task {
            6 => rng.random_bool(mode.reward_rate()),
            7 => false,
            _ => true,
        };
        let text = pick(&templates.positive, rng);
        return Ok(vec![Turn::teacher(TurnKind::Fb, text).rewarded(reward)]);
    }
    let turns = match task {
        2 | 8 => vec![Turn::teacher(TurnKind::Fb, pick(&templates.negative, rng))],
        3 | 6 | 7 => vec![Turn::teacher(TurnKind::AnswerFb, format!("No, the answer is {}.", ex.gold))],
        4 => {
            let class = ex.hint_class.ok_or(TaskError::MissingHint)?;
            vec![Turn::teacher(TurnKind::HintFb, format!("No, they are {class}."))]
        }
        5 => vec![Turn::teacher(TurnKind::FactFb, format!("No, because {}.", ex.support.clause()))],
        9 => vec![
            Turn::teacher(TurnKind::Fb, pick(&templates.negative, rng)),
            Turn::help(),
            Turn::teacher(TurnKind::AnswerFb, format!("{}.", capitalize(ex.gold))),
        ],
        _ => vec![
            Turn::teacher(TurnKind::Fb, pick(&templates.negative, rng)),
            Turn::help(),
            Turn::teacher(TurnKind::FactFb, format!("A relevant fact is {}.", ex.support.clause())),
        ],
    };
    Ok(turns)
}

/// Where stories come from. The simulated world is one implementation; any
/// other question-answering source with statements, questions, gold answers
/// and supporting facts can drive the same task generator.
pub trait QaSource {
    fn next_skeleton<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<EpisodeSkeleton, TaskError>;

    /// Everything the answering policy may say.
    fn candidates(&self) -> Vec<String>;

    /// Coarse class of an answer, used for hints.
    fn answer_class(&self, answer: &str) -> Result<String, TaskError> {
        location_class(answer).map(str::to_string)
    }
}

#[derive(Debug, Clone)]
pub struct WorldSource {
    pub config: WorldConfig,
}

impl QaSource for WorldSource {
    fn next_skeleton<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<EpisodeSkeleton, TaskError> {
        Ok(gen_skeleton(&self.config, rng)?)
    }

    fn candidates(&self) -> Vec<String> {
        self.config.locations.clone()
    }
}

/// Renders a story as a dialog under one supervision mode.
pub fn apply_mode<S: QaSource, R: Rng + ?Sized>(
    source: &S,
    skeleton: &EpisodeSkeleton,
    mode: SupervisionMode,
    policy: &Policy,
    templates: &FeedbackTemplates,
    rng: &mut R,
) -> Result<DialogEpisode, TaskError> {
    let candidates = source.candidates();
    let mut turns = Vec::with_capacity(skeleton.events.len() * 2);
    for (i, event) in skeleton.events.iter().enumerate() {
        match event {
            Event::Statement(s) => turns.push(Turn::teacher(TurnKind::Stmt, s.sentence())),
            Event::Question(q) => {
                turns.push(Turn::teacher(TurnKind::Q, q.text()));
                let gold = skeleton.gold_answer(i)?;
                let expert = match mode.number() {
                    1 => true,
                    8 => rng.random_bool(0.5),
                    _ => false,
                };
                if expert {
                    turns.push(Turn::answer(gold, gold));
                    continue;
                }
                let answer = sample_answer(policy, gold, &candidates, rng)?;
                turns.push(Turn::answer(answer, gold));
                let support = skeleton.statement(skeleton.supporting_fact(i)?).expect("support is a statement");
                let hint = if mode.number() == 4 { Some(source.answer_class(gold)?) } else { None };
                let ex = Exchange { correct: answer == gold, gold, support, hint_class: hint.as_deref() };
                turns.extend(render_feedback(mode, ex, templates, rng)?);
            }
        }
    }
    Ok(DialogEpisode { turns })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { train: 1000, valid: 100, test: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenOptions {
    /// Use the same stories for every task given the same seed.
    pub share_skeletons: bool,
}

fn split_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates one dataset with exactly `questions` questions.
pub fn gen_split<S: QaSource>(
    source: &mut S,
    mode: SupervisionMode,
    policy: &Policy,
    templates: &FeedbackTemplates,
    questions: usize,
    story_rng: &mut ChaCha8Rng,
    dialog_rng: &mut ChaCha8Rng,
) -> Result<Dataset, TaskError> {
    let mut episodes = Vec::new();
    let mut remaining = questions;
    while remaining > 0 {
        let mut sk = source.next_skeleton(story_rng)?;
        let qs: Vec<usize> = sk.question_indices().collect();
        if qs.len() > remaining {
            // stop right after the quota-filling question
            sk.events.truncate(qs[remaining - 1] + 1);
        }
        remaining -= qs.len().min(remaining);
        episodes.push(apply_mode(source, &sk, mode, policy, templates, dialog_rng)?);
    }
    Ok(Dataset { episodes })
}

pub fn gen_dataset_from<S: QaSource>(
    source: &mut S,
    mode: SupervisionMode,
    policy: &Policy,
    sizes: SplitSizes,
    seed: u64,
    options: GenOptions,
) -> Result<Splits, TaskError> {
    policy.validate()?;
    let templates = FeedbackTemplates::default();
    let story_seed =
        if options.share_skeletons { seed } else { seed ^ (mode.number() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) };
    let mut gen = |split: u64, n: usize| {
        let mut story = split_rng(story_seed, split);
        let mut dialog = split_rng(seed, 3 + split);
        gen_split(source, mode, policy, &templates, n, &mut story, &mut dialog)
    };
    Ok(Splits { train: gen(0, sizes.train)?, valid: gen(1, sizes.valid)?, test: gen(2, sizes.test)? })
}

pub fn gen_dataset(
    config: &WorldConfig,
    mode: SupervisionMode,
    policy: &Policy,
    sizes: SplitSizes,
    seed: u64,
    options: GenOptions,
) -> Result<Splits, TaskError> {
    config.validate()?;
    let mut source = WorldSource { config: config.clone() };
    gen_dataset_from(&mut source, mode, policy, sizes, seed, options)
}
