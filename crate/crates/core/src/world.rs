//! A tiny simulated world: people walk between rooms and a teacher asks
//! where someone is.
//!
//! Stories are produced as [`EpisodeSkeleton`]s, which carry the gold answer
//! and the supporting statement for every question. Dialog rendering happens
//! elsewhere (see [`crate::taskgen`]).

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("event {0} is not a question")]
    NotAQuestion(usize),
    #[error("event index {0} out of range")]
    OutOfRange(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub persons: Vec<String>,
    pub locations: Vec<String>,
    pub verbs: Vec<String>,
    /// Inclusive range of fresh statements emitted before each question.
    pub statements_per_question: (usize, usize),
    pub questions_per_episode: usize,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            persons: strings(&["Mary", "John", "Daniel", "Sandra"]),
            locations: strings(&["kitchen", "hallway", "bathroom", "bedroom", "garden", "office"]),
            verbs: strings(&["went to", "moved to", "travelled to", "journeyed to"]),
            statements_per_question: (2, 4),
            questions_per_episode: 2,
        }
    }
}

fn check_inventory(name: &str, items: &[String]) -> Result<(), WorldError> {
    if items.is_empty() {
        return Err(WorldError::Config(format!("{name} must be non-empty")));
    }
    let mut seen = HashSet::new();
    for item in items {
        if item.trim().is_empty() {
            return Err(WorldError::Config(format!("{name} contains a blank entry")));
        }
        if !seen.insert(item) {
            return Err(WorldError::Config(format!("{name} contains duplicate {item:?}")));
        }
    }
    Ok(())
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        check_inventory("persons", &self.persons)?;
        check_inventory("locations", &self.locations)?;
        check_inventory("verbs", &self.verbs)?;
        // Every move must change location, so one room is not enough.
        if self.locations.len() < 2 {
            return Err(WorldError::Config("locations needs at least 2 entries".into()));
        }
        let (lo, hi) = self.statements_per_question;
        if lo < 1 {
            return Err(WorldError::Config("statements_per_question lower bound must be >= 1".into()));
        }
        if hi < lo {
            return Err(WorldError::Config(format!(
                "statements_per_question upper bound {hi} is below lower bound {lo}"
            )));
        }
        if self.questions_per_episode < 1 {
            return Err(WorldError::Config("questions_per_episode must be >= 1".into()));
        }
        Ok(())
    }
}

/// "Mary went to the hallway."
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Statement {
    pub person: String,
    pub verb: String,
    pub location: String,
}

impl Statement {
    pub fn new(person: &str, verb: &str, location: &str) -> Self {
        Statement { person: person.into(), verb: verb.into(), location: location.into() }
    }

    /// Surface sentence without trailing punctuation.
    pub fn clause(&self) -> String {
        format!("{} {} the {}", self.person, self.verb, self.location)
    }

    pub fn sentence(&self) -> String {
        format!("{}.", self.clause())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionPoint {
    pub person: String,
    pub answer: String,
    /// Index into the skeleton's events of the statement that justifies `answer`.
    pub support: usize,
}

impl QuestionPoint {
    pub fn text(&self) -> String {
        format!("Where is {}?", self.person)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Statement(Statement),
    Question(QuestionPoint),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSkeleton {
    pub events: Vec<Event>,
}

impl EpisodeSkeleton {
    /// Builds a skeleton from statements and question targets, filling in gold
    /// answers and supporting facts by replaying the story.
    ///
    /// Each entry is either `Ok(statement)` or `Err(person)` for a question
    /// about `person`. Returns `None` if a question asks about someone who
    /// has not moved yet.
    pub fn from_script(script: Vec<Result<Statement, String>>) -> Option<Self> {
        let mut events = Vec::with_capacity(script.len());
        for item in script {
            match item {
                Ok(stmt) => events.push(Event::Statement(stmt)),
                Err(person) => {
                    let support = last_statement_of(&events, &person, events.len())?;
                    let answer = match &events[support] {
                        Event::Statement(s) => s.location.clone(),
                        Event::Question(_) => unreachable!(),
                    };
                    events.push(Event::Question(QuestionPoint { person, answer, support }));
                }
            }
        }
        Some(EpisodeSkeleton { events })
    }

    /// The three-statement story used throughout the figures, with questions
    /// about Mary and John.
    pub fn example_story() -> Self {
        Self::from_script(vec![
            Ok(Statement::new("Mary", "went to", "hallway")),
            Ok(Statement::new("John", "moved to", "bathroom")),
            Ok(Statement::new("Mary", "travelled to", "kitchen")),
            Err("Mary".into()),
            Err("John".into()),
        ])
        .expect("example story is well formed")
    }

    pub fn question_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.events.iter().enumerate().filter(|(_, e)| matches!(e, Event::Question(_))).map(|(i, _)| i)
    }

    pub fn num_questions(&self) -> usize {
        self.question_indices().count()
    }

    fn question(&self, index: usize) -> Result<&QuestionPoint, WorldError> {
        match self.events.get(index) {
            None => Err(WorldError::OutOfRange(index)),
            Some(Event::Statement(_)) => Err(WorldError::NotAQuestion(index)),
            Some(Event::Question(q)) => Ok(q),
        }
    }

    /// Location of the asked person's last statement before the question,
    /// recomputed from the event list.
    pub fn gold_answer(&self, question_index: usize) -> Result<&str, WorldError> {
        let support = self.supporting_fact(question_index)?;
        match &self.events[support] {
            Event::Statement(s) => Ok(&s.location),
            Event::Question(_) => unreachable!("supporting fact is always a statement"),
        }
    }

    pub fn supporting_fact(&self, question_index: usize) -> Result<usize, WorldError> {
        let q = self.question(question_index)?;
        let idx = last_statement_of(&self.events, &q.person, question_index);
        Ok(idx.expect("skeleton invariant: asked person has a prior statement"))
    }

    pub fn statement(&self, index: usize) -> Option<&Statement> {
        match self.events.get(index) {
            Some(Event::Statement(s)) => Some(s),
            _ => None,
        }
    }
}

fn last_statement_of(events: &[Event], person: &str, before: usize) -> Option<usize> {
    events[..before].iter().rposition(|e| matches!(e, Event::Statement(s) if s.person == person))
}

/// Samples one story. Each question is preceded by a fresh run of
/// statements; nobody moves to the room they are already in.
pub fn gen_skeleton<R: Rng + ?Sized>(config: &WorldConfig, rng: &mut R) -> Result<EpisodeSkeleton, WorldError> {
    config.validate()?;
    let (lo, hi) = config.statements_per_question;
    let mut current: Vec<Option<usize>> = vec![None; config.persons.len()];
    // (person, index of their last statement)
    let mut last_stmt: Vec<Option<usize>> = vec![None; config.persons.len()];
    let mut events = Vec::new();

    for _ in 0..config.questions_per_episode {
        let n = rng.random_range(lo..=hi);
        for _ in 0..n {
            let p = rng.random_range(0..config.persons.len());
            let loc = match current[p] {
                None => rng.random_range(0..config.locations.len()),
                Some(here) => {
                    // uniform over the other rooms
                    let j = rng.random_range(0..config.locations.len() - 1);
                    if j >= here {
                        j + 1
                    } else {
                        j
                    }
                }
            };
            let verb = rng.random_range(0..config.verbs.len());
            current[p] = Some(loc);
            last_stmt[p] = Some(events.len());
            events.push(Event::Statement(Statement {
                person: config.persons[p].clone(),
                verb: config.verbs[verb].clone(),
                location: config.locations[loc].clone(),
            }));
        }
        let known: Vec<usize> = (0..config.persons.len()).filter(|&p| current[p].is_some()).collect();
        let p = known[rng.random_range(0..known.len())];
        events.push(Event::Question(QuestionPoint {
            person: config.persons[p].clone(),
            answer: config.locations[current[p].unwrap()].clone(),
            support: last_stmt[p].unwrap(),
        }));
    }
    Ok(EpisodeSkeleton { events })
}
