//! Orchestration shared by the command-line tool and the acceptance suite:
//! dataset files, the experiment grid, result tables and gradient checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogfmt::{self, FormatError};
use crate::memnet::{Bow, FpTarget, MemNet, ModelConfig, TextSet, Vocabulary};
use crate::taskgen::{gen_dataset, Dataset, GenOptions, Policy, SplitSizes, Splits, SupervisionMode, TaskError};
use crate::tensor::{gradcheck, GradcheckReport};
use crate::training::{evaluate, train, Hyperparams, MemoryScope, Strategy, TrainError};
use crate::world::WorldConfig;

pub const PASS_THRESHOLD: f64 = 95.0;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_SAMPLES: usize = 200;
pub const PIS: [f64; 3] = [0.5, 0.1, 0.01];
pub const SPLIT_FILES: [&str; 3] = ["train.txt", "valid.txt", "test.txt"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("bad checkpoint {0}")]
    Checkpoint(String),
    #[error("gradient check failed: {0}")]
    Gradcheck(String),
}

impl HarnessError {
    /// 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Train(TrainError::Hyper(_)) => 1,
            HarnessError::Train(TrainError::Numeric(_)) | HarnessError::Gradcheck(_) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Reads a flat `key = value` file; `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, HarnessError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Usage(format!("config line {}: expected key=value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse().map_err(|_| HarnessError::Usage(format!("config key {key}: cannot parse {v:?}")))
}

/// Overrides `hyper` with recognised keys; unknown keys are an error.
pub fn apply_config(hyper: &mut Hyperparams, cfg: &BTreeMap<String, String>) -> Result<(), HarnessError> {
    for (k, v) in cfg {
        match k.as_str() {
            "dim" => hyper.dim = parse_value(k, v)?,
            "hops" => hyper.hops = parse_value(k, v)?,
            "lr" | "learning_rate" => hyper.learning_rate = parse_value(k, v)?,
            "epochs" | "epochs_max" => hyper.epochs_max = parse_value(k, v)?,
            "batch" => hyper.batch = parse_value(k, v)?,
            "negatives" | "k" => hyper.negatives = parse_value(k, v)?,
            "seed" => hyper.seed = parse_value(k, v)?,
            "restarts" => hyper.restarts = parse_value(k, v)?,
            "patience" | "early_stop_patience" => hyper.early_stop_patience = parse_value(k, v)?,
            "memory_size" => hyper.memory_size = parse_value(k, v)?,
            "init_sigma" => hyper.init_sigma = parse_value(k, v)?,
            "init_sigma_beta" => hyper.init_sigma_beta = parse_value(k, v)?,
            "clip_norm" => {
                hyper.clip_norm = if v == "none" { None } else { Some(parse_value(k, v)?) };
            }
            "expert_counts_as_reward" => hyper.expert_counts_as_reward = parse_value(k, v)?,
            "memory_scope" => hyper.memory_scope = v.parse::<MemoryScope>().map_err(HarnessError::Usage)?,
            _ => return Err(HarnessError::Usage(format!("unknown config key {k:?}"))),
        }
    }
    Ok(())
}

pub fn policy_for(pi: f64, biased: bool) -> Policy {
    if biased {
        Policy::bathroom_biased(pi)
    } else {
        Policy::new(pi)
    }
}

pub fn generate(task: u8, pi: f64, biased: bool, sizes: SplitSizes, seed: u64) -> Result<Splits, HarnessError> {
    let mode = SupervisionMode::new(task)?;
    Ok(gen_dataset(&WorldConfig::default(), mode, &policy_for(pi, biased), sizes, seed, GenOptions::default())?)
}

pub fn write_splits(dir: &Path, splits: &Splits) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, data) in SPLIT_FILES.iter().zip([&splits.train, &splits.valid, &splits.test]) {
        let path = dir.join(name);
        fs::write(&path, dialogfmt::serialize(data)).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Reads a dataset in the v1 format, or the numbered bAbI layout when the
/// header is absent.
pub fn read_dataset(path: &Path) -> Result<Dataset, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parsed =
        if text.starts_with(dialogfmt::HEADER) { dialogfmt::parse(&text) } else { dialogfmt::parse_babi(&text) };
    parsed.map_err(|source| HarnessError::Format { path: path.to_path_buf(), source })
}

pub fn summary_line(name: &str, data: &Dataset) -> String {
    let s = data.stats();
    format!(
        "{name}\tquestions={}\tpolicy_acc={:.4}\treward_rate={:.4}\treward_rate_among_correct={:.4}",
        s.questions,
        s.policy_accuracy(),
        s.reward_rate(),
        s.reward_rate_among_correct()
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub task: u8,
    pub pi_acc: f64,
    pub biased: bool,
    pub strategy: Strategy,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub task: u8,
    pub pi_acc: f64,
    pub strategy: Strategy,
    pub seed: u64,
    pub valid_acc: f64,
    pub test_acc: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub cell: Cell,
    pub error: String,
}

/// Generates the cell's data with its seed, trains and evaluates on test.
pub fn run_cell(cell: Cell, hyper: &Hyperparams, sizes: SplitSizes) -> Result<ResultRecord, HarnessError> {
    let start = Instant::now();
    let splits = generate(cell.task, cell.pi_acc, cell.biased, sizes, cell.seed)?;
    let hyper = Hyperparams { seed: cell.seed, ..hyper.clone() };
    let out = train(&splits.train, &splits.valid, cell.strategy, &hyper)?;
    let test_acc = evaluate(out.model(), &splits.test)?;
    Ok(ResultRecord {
        task: cell.task,
        pi_acc: cell.pi_acc,
        strategy: cell.strategy,
        seed: cell.seed,
        valid_acc: out.checkpoint.valid_acc,
        test_acc,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

pub fn grid(tasks: &[u8], pis: &[f64], strategies: &[Strategy], seeds: &[u64], biased: bool) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &strategy in strategies {
        for &pi_acc in pis {
            for &task in tasks {
                for &seed in seeds {
                    cells.push(Cell { task, pi_acc, biased, strategy, seed });
                }
            }
        }
    }
    cells
}

/// Runs cells in parallel; results keep the order of `cells`.
pub fn run_grid(cells: &[Cell], hyper: &Hyperparams, sizes: SplitSizes) -> (Vec<ResultRecord>, Vec<CellFailure>) {
    let outcomes: Vec<_> = cells.par_iter().map(|&c| (c, run_cell(c, hyper, sizes))).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (cell, r) in outcomes {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(CellFailure { cell, error: e.to_string() }),
        }
    }
    (records, failures)
}

/// Tasks at or above the pass threshold, per (strategy, pi), over
/// records sorted by strategy then descending pi.
pub fn completed_counts(records: &[ResultRecord]) -> Vec<(Strategy, f64, usize, usize)> {
    let mut out: Vec<(Strategy, f64, usize, usize)> = Vec::new();
    for r in records {
        let passed = usize::from(r.test_acc >= PASS_THRESHOLD);
        match out.iter_mut().find(|(s, p, _, _)| *s == r.strategy && *p == r.pi_acc) {
            Some(e) => {
                e.2 += passed;
                e.3 += 1;
            }
            None => out.push((r.strategy, r.pi_acc, passed, 1)),
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
    out
}

pub const TSV_HEADER: &str = "task\tpi_acc\tstrategy\tseed\tvalid_acc\ttest_acc\twall_time";

pub fn to_tsv(records: &[ResultRecord], failures: &[CellFailure]) -> String {
    let mut out = format!("{TSV_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.1}\t{:.1}\t{:.2}",
            r.task, r.pi_acc, r.strategy, r.seed, r.valid_acc, r.test_acc, r.wall_time
        )
        .unwrap();
    }
    for (s, pi, done, total) in completed_counts(records) {
        writeln!(out, "# completed\t{pi}\t{s}\t{done}/{total}").unwrap();
    }
    for f in failures {
        let c = &f.cell;
        writeln!(out, "# failed\t{}\t{}\t{}\t{}\t{}", c.task, c.pi_acc, c.strategy, c.seed, f.error).unwrap();
    }
    out
}

pub fn to_jsonl(records: &[ResultRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}

/// Parses the data rows of a results table, skipping `#` lines.
pub fn parse_tsv(text: &str) -> Result<Vec<ResultRecord>, HarnessError> {
    let bad = |n: usize, what: &str| HarnessError::Usage(format!("results line {n}: {what}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TSV_HEADER => {}
        _ => return Err(bad(1, "missing header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad(i + 1, "expected 7 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        out.push(ResultRecord {
            task: f[0].parse().map_err(|_| bad(i + 1, "bad task"))?,
            pi_acc: num(f[1])?,
            strategy: f[2].parse().map_err(|e: String| bad(i + 1, &e))?,
            seed: f[3].parse().map_err(|_| bad(i + 1, "bad seed"))?,
            valid_acc: num(f[4])?,
            test_acc: num(f[5])?,
            wall_time: num(f[6])?,
        });
    }
    Ok(out)
}

/// Markdown table: one row per task, one column per (strategy, pi), mean
/// test accuracy over seeds, and a completed-tasks row.
pub fn markdown_report(records: &[ResultRecord]) -> String {
    let cols = completed_counts(records);
    let mut tasks: Vec<u8> = records.iter().map(|r| r.task).collect();
    tasks.sort_unstable();
    tasks.dedup();
    let mut out = String::from("| Task |");
    for (s, pi, _, _) in &cols {
        write!(out, " {s} π={pi} |").unwrap();
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(cols.len()));
    out.push('\n');
    for t in &tasks {
        write!(out, "| {t} |").unwrap();
        for (s, pi, _, _) in &cols {
            let accs: Vec<f64> = records
                .iter()
                .filter(|r| r.task == *t && r.strategy == *s && r.pi_acc == *pi)
                .map(|r| r.test_acc)
                .collect();
            if accs.is_empty() {
                out.push_str(" - |");
            } else {
                write!(out, " {:.1} |", accs.iter().sum::<f64>() / accs.len() as f64).unwrap();
            }
        }
        out.push('\n');
    }
    out.push_str("| completed (≥95%) |");
    for (_, _, done, _) in &cols {
        write!(out, " {done} |").unwrap();
    }
    out.push('\n');
    out
}

/// Tiny random instance for checking the answer and prediction gradients.
pub struct ToyProblem {
    pub net: MemNet,
    pub x: Bow,
    pub memories: Vec<Bow>,
    pub candidates: TextSet,
    pub responses: TextSet,
    pub target: usize,
    pub selected: usize,
    pub response_target: usize,
}

impl ToyProblem {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let vocab = Vocabulary::build(words.iter().map(String::as_str));
        let mut sentence = |rng: &mut ChaCha8Rng, n: usize| -> String {
            (0..n).map(|_| words[rng.random_range(0..words.len())].as_str()).collect::<Vec<_>>().join(" ")
        };
        let x = vocab.encode(&sentence(&mut rng, 3));
        let memories = (0..3).map(|_| vocab.encode(&sentence(&mut rng, 4))).collect();
        let distinct =
            |rng: &mut ChaCha8Rng, n: usize, len: usize, sentence: &mut dyn FnMut(&mut ChaCha8Rng, usize) -> String| {
                let mut v: Vec<String> = Vec::new();
                while v.len() < n {
                    let s = sentence(rng, len);
                    if !v.contains(&s) {
                        v.push(s);
                    }
                }
                v
            };
        let candidates = TextSet::new(distinct(&mut rng, 4, 1, &mut sentence), &vocab).expect("distinct candidates");
        let responses = TextSet::new(distinct(&mut rng, 5, 3, &mut sentence), &vocab).expect("distinct responses");
        let config = ModelConfig { dim, hops: 2, memory_size: 3, vocab_size: vocab.len() };
        let net = MemNet::new(config, 0.5, &mut rng).expect("valid toy config");
        ToyProblem {
            net,
            x,
            memories,
            target: rng.random_range(0..4),
            selected: rng.random_range(0..4),
            response_target: rng.random_range(0..5),
            candidates,
            responses,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSummary {
    pub answer: GradcheckReport,
    pub predict: GradcheckReport,
}

impl GradcheckSummary {
    pub fn max_rel_error(&self) -> f64 {
        self.answer.max_rel_error.max(self.predict.max_rel_error)
    }

    pub fn passed(&self) -> bool {
        self.answer.passed(GRADCHECK_TOLERANCE) && self.predict.passed(GRADCHECK_TOLERANCE)
    }
}

/// Gradient check of both loss paths on a toy instance. `corrupt` scales
/// every analytic gradient by 1.01 as a negative control.
pub fn run_gradcheck(dim: usize, seed: u64, corrupt: bool) -> GradcheckSummary {
    let toy = ToyProblem::new(dim, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let scale = if corrupt { 1.01 } else { 1.0 };
    let config = *toy.net.config();

    let check = |fp: bool, rng: &mut ChaCha8Rng| {
        let mut net = toy.net.clone();
        let mut params = net.params().clone();
        let report = gradcheck(
            &mut params,
            |p| {
                *net.params_mut() = p.clone();
                net.params_mut().zero_grad();
                let loss = if fp {
                    let bows: Vec<&Bow> = toy.responses.bows().iter().collect();
                    let t = FpTarget { selected: toy.selected, responses: &bows, target: toy.response_target };
                    net.accumulate_fp_grad(&toy.x, &toy.memories, &toy.candidates, t)
                } else {
                    net.accumulate_answer_grad(&toy.x, &toy.memories, &toy.candidates, toy.target)
                }
                .expect("toy instance is valid");
                let (_, grads) = net.params_mut().split_mut();
                for (dst, src) in p.split_mut().1.iter_mut().zip(grads.iter()) {
                    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                        *d = s * scale;
                    }
                }
                loss
            },
            GRADCHECK_EPS,
            GRADCHECK_SAMPLES,
            rng,
        );
        debug_assert_eq!(*net.config(), config);
        report
    };
    let answer = check(false, &mut rng);
    let predict = check(true, &mut rng);
    GradcheckSummary { answer, predict }
}
