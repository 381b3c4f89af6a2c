//! The `#dialoglearn v1` text format.
//!
//! ```text
//! #dialoglearn v1
//! 1	T	stmt	Mary went to the hallway.	0	-
//! 2	T	q	Where is Mary?	0	-
//! 3	L	ans	bedroom	0	kitchen
//! 4	T	answer-fb	No, the answer is kitchen.	0	-
//! ==
//! 1	T	stmt	...
//! ```
//!
//! One turn per line with six tab-separated fields: turn index (restarting at
//! 1 in every episode), speaker, kind, text, reward flag and gold answer (`-`
//! when absent). Episodes are separated by a line holding `==`.
#![allow(clippy::tabs_in_doc_comments)]

use thiserror::Error;

use crate::taskgen::{Dataset, DialogEpisode, Speaker, Turn, TurnKind};

pub const HEADER: &str = "#dialoglearn v1";
pub const SEPARATOR: &str = "==";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: invalid turn: {msg}")]
    Validation { line: usize, msg: String },
}

fn parse_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse { line, msg: msg.into() }
}

fn speaker_code(s: Speaker) -> &'static str {
    match s {
        Speaker::Teacher => "T",
        Speaker::Learner => "L",
    }
}

pub fn serialize(dataset: &Dataset) -> String {
    let mut out = String::with_capacity(64 * dataset.episodes.len() * 8);
    out.push_str(HEADER);
    out.push('\n');
    for (e, episode) in dataset.episodes.iter().enumerate() {
        if e > 0 {
            out.push_str(SEPARATOR);
            out.push('\n');
        }
        for (i, turn) in episode.turns.iter().enumerate() {
            debug_assert!(!turn.text.contains(['\t', '\n']), "turn text must be tab/newline free");
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                i + 1,
                speaker_code(turn.speaker),
                turn.kind.as_str(),
                turn.text,
                u8::from(turn.reward),
                turn.gold.as_deref().unwrap_or("-"),
            ));
        }
    }
    out
}

pub fn parse(text: &str) -> Result<Dataset, FormatError> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, HEADER)) => {}
        Some((n, other)) => return Err(parse_err(n, format!("expected header {HEADER:?}, found {other:?}"))),
        None => return Err(parse_err(1, "empty input")),
    }

    let mut episodes = Vec::new();
    let mut current = DialogEpisode::default();
    let mut last_line = 1;
    for (n, line) in lines {
        last_line = n;
        if line.is_empty() {
            // only the final newline may produce an empty line
            if n == text.split('\n').count() {
                break;
            }
            return Err(parse_err(n, "blank line"));
        }
        if line == SEPARATOR {
            if current.turns.is_empty() {
                return Err(parse_err(n, "empty episode"));
            }
            episodes.push(std::mem::take(&mut current));
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(parse_err(n, format!("expected 6 tab-separated fields, found {}", fields.len())));
        }
        let index: usize = fields[0].parse().map_err(|_| parse_err(n, format!("bad turn index {:?}", fields[0])))?;
        if index != current.turns.len() + 1 {
            return Err(parse_err(n, format!("turn index {index}, expected {}", current.turns.len() + 1)));
        }
        let speaker = match fields[1] {
            "T" => Speaker::Teacher,
            "L" => Speaker::Learner,
            other => return Err(parse_err(n, format!("unknown speaker {other:?}"))),
        };
        let kind =
            TurnKind::from_name(fields[2]).ok_or_else(|| parse_err(n, format!("unknown kind {:?}", fields[2])))?;
        let reward = match fields[4] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(n, format!("reward must be 0 or 1, found {other:?}"))),
        };
        let gold = match fields[5] {
            "-" => None,
            g => Some(g.to_string()),
        };
        let turn = Turn { speaker, kind, text: fields[3].to_string(), reward, gold };
        turn.check().map_err(|msg| FormatError::Validation { line: n, msg })?;
        current.turns.push(turn);
    }
    if !current.turns.is_empty() {
        episodes.push(current);
    } else if !episodes.is_empty() {
        return Err(parse_err(last_line, "trailing separator without an episode"));
    }
    if !text.ends_with('\n') {
        return Err(parse_err(last_line, "missing final newline"));
    }
    Ok(Dataset { episodes })
}

/// Reads line-numbered bAbI-style files.
///
/// Every line is `<n> <text>`; numbering restarting at 1 begins a new story.
/// Lines containing tabs are questions: `question \t answer [\t extra]`.
/// When `extra` is a list of supporting-fact numbers (or absent) the answer
/// is treated as an expert answer and becomes the gold label. Otherwise
/// `extra` is the teacher's reply; a trailing `(+)` marks external reward,
/// and the gold label is unknown.
pub fn parse_babi(text: &str) -> Result<Dataset, FormatError> {
    let mut episodes = Vec::new();
    let mut current = DialogEpisode::default();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (num, rest) = line.split_once(' ').ok_or_else(|| parse_err(n, "expected `<number> <text>`"))?;
        let num: usize = num.parse().map_err(|_| parse_err(n, format!("bad line number {num:?}")))?;
        if num == 1 && !current.turns.is_empty() {
            episodes.push(std::mem::take(&mut current));
        }
        let fields: Vec<&str> = rest.split('\t').map(str::trim).collect();
        if fields.len() == 1 {
            current.turns.push(Turn::teacher(TurnKind::Stmt, fields[0]));
            continue;
        }
        let (question, answer) = (fields[0], fields[1]);
        if answer.is_empty() {
            return Err(parse_err(n, "question without an answer"));
        }
        current.turns.push(Turn::teacher(TurnKind::Q, question));
        let extra = fields.get(2).copied().unwrap_or("");
        let is_support = extra.split_whitespace().all(|t| t.chars().all(|c| c.is_ascii_digit()));
        if is_support {
            current.turns.push(Turn::answer(answer, answer));
        } else {
            let mut ans = Turn::answer(answer, answer);
            ans.gold = None;
            current.turns.push(ans);
            let (reply, reward) = match extra.strip_suffix("(+)") {
                Some(r) => (r.trim_end(), true),
                None => (extra, false),
            };
            let mut fb = Turn::teacher(TurnKind::Fb, reply);
            fb.reward = reward;
            current.turns.push(fb);
        }
    }
    if !current.turns.is_empty() {
        episodes.push(current);
    }
    Ok(Dataset { episodes })
}
