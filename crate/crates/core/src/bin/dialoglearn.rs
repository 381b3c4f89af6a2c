use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use dialoglearn::harness::{
    self, apply_config, grid, markdown_report, parse_config, parse_tsv, read_dataset, run_gradcheck, run_grid,
    summary_line, to_jsonl, to_tsv, write_splits, HarnessError, PIS, SPLIT_FILES,
};
use dialoglearn::taskgen::SplitSizes;
use dialoglearn::training::{evaluate, train, Checkpoint, Hyperparams, Strategy};

#[derive(Parser)]
#[command(name = "dialoglearn", version, about = "Dialog-based language learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/valid/test files for one task.
    Generate {
        #[arg(long)]
        task: u8,
        #[arg(long, default_value_t = 0.5)]
        pi: f64,
        /// Wrong answers prefer "bathroom" half of the time.
        #[arg(long)]
        biased: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        train_size: usize,
        #[arg(long, default_value_t = 100)]
        valid_size: usize,
        #[arg(long, default_value_t = 1000)]
        test_size: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one strategy and write a checkpoint plus a log.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        strategy: Strategy,
        /// Checkpoint path; the log goes next to it with a `.log` suffix.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Test accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Run a grid of generate/train/evaluate cells in parallel.
    Experiment {
        /// Comma-separated task numbers.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
        tasks: Vec<u8>,
        #[arg(long = "pi", value_delimiter = ',')]
        pis: Vec<f64>,
        /// Comma-separated strategies; `--strategy ''` runs nothing.
        #[arg(long = "strategy", value_delimiter = ',', default_value = "imitation,rbi,fp,rbi_fp")]
        strategies: Vec<String>,
        #[arg(long = "seeds", value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
        #[arg(long)]
        biased: bool,
        #[arg(long, default_value_t = 1000)]
        train_size: usize,
        #[arg(long, default_value_t = 100)]
        valid_size: usize,
        #[arg(long, default_value_t = 1000)]
        test_size: usize,
        /// Results TSV; a `.jsonl` twin is written beside it.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Check analytic gradients of both losses against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        /// Perturb the analytic gradients (negative control).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Render a results TSV as a markdown table.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct HyperArgs {
    /// Flat key=value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    hops: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl HyperArgs {
    fn resolve(&self) -> anyhow::Result<Hyperparams> {
        let mut h = Hyperparams::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
            apply_config(&mut h, &parse_config(&text)?)?;
        }
        h.seed = self.seed.unwrap_or(h.seed);
        h.dim = self.dim.unwrap_or(h.dim);
        h.hops = self.hops.unwrap_or(h.hops);
        h.learning_rate = self.lr.unwrap_or(h.learning_rate);
        h.epochs_max = self.epochs.unwrap_or(h.epochs_max);
        h.validate().map_err(HarnessError::from)?;
        Ok(h)
    }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { task, pi, biased, seed, train_size, valid_size, test_size, out } => {
            let sizes = SplitSizes { train: train_size, valid: valid_size, test: test_size };
            let splits = harness::generate(task, pi, biased, sizes, seed)?;
            write_splits(&out, &splits)?;
            for (name, data) in SPLIT_FILES.iter().zip([&splits.train, &splits.valid, &splits.test]) {
                println!("{}", summary_line(name, data));
            }
        }
        Command::Train { train: train_path, valid, strategy, out, hyper } => {
            let hyper = hyper.resolve()?;
            let train_set = read_dataset(&train_path)?;
            let valid_set = read_dataset(&valid)?;
            let outcome = train(&train_set, &valid_set, strategy, &hyper).map_err(HarnessError::from)?;
            write(&out, &outcome.checkpoint.to_json())?;
            let log: String = outcome.log.iter().map(|l| format!("{l}\n")).collect();
            let mut log_path = out.clone().into_os_string();
            log_path.push(".log");
            write(Path::new(&log_path), &log)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("best_epoch={}\tvalid_acc={:.1}%", outcome.checkpoint.best_epoch, outcome.checkpoint.valid_acc);
        }
        Command::Eval { checkpoint, test } => {
            let text = fs::read_to_string(&checkpoint)
                .map_err(|source| HarnessError::Io { path: checkpoint.clone(), source })?;
            let ck = Checkpoint::from_json(&text)
                .map_err(|e| HarnessError::Checkpoint(format!("{}: {e}", checkpoint.display())))?;
            let data = read_dataset(&test)?;
            let acc = evaluate(&ck.model, &data).map_err(HarnessError::from)?;
            println!("test_acc={acc:.1}%");
        }
        Command::Experiment {
            tasks,
            pis,
            strategies,
            seeds,
            biased,
            train_size,
            valid_size,
            test_size,
            out,
            hyper,
        } => {
            let hyper = hyper.resolve()?;
            let strategies = strategies
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<Strategy>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(HarnessError::Usage)?;
            let pis = if pis.is_empty() { PIS.to_vec() } else { pis };
            let sizes = SplitSizes { train: train_size, valid: valid_size, test: test_size };
            let cells = grid(&tasks, &pis, &strategies, &seeds, biased);
            info!("running {} cells", cells.len());
            let (records, failures) = run_grid(&cells, &hyper, sizes);
            let tsv = to_tsv(&records, &failures);
            write(&out, &tsv)?;
            write(&out.with_extension("jsonl"), &to_jsonl(&records))?;
            print!("{tsv}");
        }
        Command::Gradcheck { seed, dim, corrupt } => {
            let s = run_gradcheck(dim, seed, corrupt);
            for (name, r) in [("answer", &s.answer), ("predict", &s.predict)] {
                println!("{name}\tchecked={}\tmax_rel_error={:.3e}", r.checked, r.max_rel_error);
            }
            if !s.passed() {
                println!("FAIL");
                return Err(HarnessError::Gradcheck(format!("max relative error {:.3e}", s.max_rel_error())).into());
            }
            println!("PASS");
        }
        Command::Report { results, out } => {
            let text =
                fs::read_to_string(&results).map_err(|source| HarnessError::Io { path: results.clone(), source })?;
            let md = markdown_report(&parse_tsv(&text)?);
            match out {
                Some(p) => write(&p, &md)?,
                None => print!("{md}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            let code = e.downcast_ref::<HarnessError>().map_or(2, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
