//! Acceptance suite: one PASS/FAIL line per criterion, at full data sizes
//! and default hyperparameters. Exits non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use dialoglearn::dialogfmt::{parse, serialize};
use dialoglearn::harness::{
    generate, grid, run_gradcheck, run_grid, Cell, ResultRecord, GRADCHECK_SAMPLES, GRADCHECK_TOLERANCE,
    PASS_THRESHOLD, PIS,
};
use dialoglearn::taskgen::SplitSizes;
use dialoglearn::training::{evaluate, extract_examples, train, Hyperparams, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SEED: u64 = 1;
const ALL_TASKS: [u8; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
/// Two-sided 99% standard normal quantile.
const Z99: f64 = 2.5758293035489004;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Results(Vec<ResultRecord>);

impl Results {
    fn acc(&self, strategy: Strategy, task: u8, pi: f64) -> f64 {
        self.0
            .iter()
            .find(|r| r.strategy == strategy && r.task == task && r.pi_acc == pi)
            .unwrap_or_else(|| panic!("no result for {strategy} task {task} pi {pi}"))
            .test_acc
    }
}

fn training_cells() -> (Vec<Cell>, Vec<Cell>) {
    let s = [SEED];
    let mut cells = grid(&[1], &PIS, &[Strategy::Imitation], &s, false);
    cells.extend(grid(&[2], &[0.01], &[Strategy::Imitation], &s, false));
    cells.extend(grid(&[3], &[0.5], &[Strategy::Rbi], &s, false));
    cells.extend(grid(&[7], &PIS, &[Strategy::Rbi], &s, false));
    cells.extend(grid(&[7], &[0.5], &[Strategy::Fp], &s, false));
    cells.extend(grid(&[3], &[0.01], &[Strategy::Fp], &s, false));
    cells.extend(grid(&ALL_TASKS, &[0.5, 0.01], &[Strategy::RbiFp], &s, false));
    let biased = grid(&[2], &[0.5], &[Strategy::Fp], &s, true);
    (cells, biased)
}

fn criterion_1(r: &Results) -> Verdict {
    let accs: Vec<f64> = PIS.iter().map(|&pi| r.acc(Strategy::Imitation, 1, pi)).collect();
    verdict(accs.iter().all(|&a| a >= 95.0), format!("imitation task 1 {accs:.1?} (need >= 95 at every pi)"))
}

fn criterion_2(r: &Results) -> Verdict {
    let a = r.acc(Strategy::Imitation, 2, 0.01);
    verdict(a <= 40.0, format!("imitation task 2 pi=0.01 {a:.1} (need <= 40)"))
}

fn criterion_3(r: &Results) -> Verdict {
    let a3 = r.acc(Strategy::Rbi, 3, 0.5);
    let a7: Vec<f64> = PIS.iter().map(|&pi| r.acc(Strategy::Rbi, 7, pi)).collect();
    let pass = a3 >= 95.0 && a7.iter().all(|&a| a <= 35.0);
    verdict(pass, format!("rbi task 3 pi=0.5 {a3:.1} (need >= 95); rbi task 7 {a7:.1?} (need <= 35)"))
}

fn criterion_4(r: &Results) -> Verdict {
    let a = r.acc(Strategy::Fp, 7, 0.5);
    verdict(a >= 90.0, format!("fp task 7 pi=0.5 {a:.1} (need >= 90)"))
}

fn criterion_5(r: &Results) -> Verdict {
    let a = r.acc(Strategy::Fp, 3, 0.01);
    verdict(a >= 90.0, format!("fp task 3 pi=0.01 {a:.1} (need >= 90)"))
}

fn criterion_6(r: &Results) -> Verdict {
    let count = |pi: f64| ALL_TASKS.iter().filter(|&&t| r.acc(Strategy::RbiFp, t, pi) >= PASS_THRESHOLD).count();
    let (hi, lo) = (count(0.5), count(0.01));
    let per_task =
        |pi: f64| ALL_TASKS.iter().map(|&t| format!("{:.0}", r.acc(Strategy::RbiFp, t, pi))).collect::<Vec<_>>();
    verdict(
        hi >= 8 && lo >= 6,
        format!(
            "rbi+fp completed {hi}/10 at pi=0.5 (need 8) {:?}, {lo}/10 at pi=0.01 (need 6) {:?}",
            per_task(0.5),
            per_task(0.01)
        ),
    )
}

fn criterion_7(biased: &[ResultRecord]) -> Verdict {
    let a = biased[0].test_acc;
    verdict((55.0..=80.0).contains(&a), format!("fp task 2 bathroom-biased pi=0.5 {a:.1} (need 55..=80)"))
}

fn criterion_8() -> Verdict {
    let mut worst = 0.0f64;
    let mut pass = true;
    for seed in 1..=5 {
        let s = run_gradcheck(8, seed, false);
        worst = worst.max(s.max_rel_error());
        pass &= s.passed() && s.answer.checked >= GRADCHECK_SAMPLES && s.predict.checked >= GRADCHECK_SAMPLES;
    }
    let control = run_gradcheck(8, 1, true);
    pass &= !control.passed();
    verdict(
        pass,
        format!(
            "max relative error {worst:.2e} over 5 seeds x 2 paths (need < {GRADCHECK_TOLERANCE:e}); corrupted control {:.2e} rejected",
            control.max_rel_error()
        ),
    )
}

fn criterion_9() -> Verdict {
    let (worst, cases) = common::oracle_sweep(2024);
    let pass = worst < common::ORACLE_TOL && cases == 4 * 3 * 4 * 3 * 100;
    verdict(pass, format!("{cases} tiny instances, max abs difference {worst:.2e} (need < 1e-10)"))
}

fn criterion_10() -> Verdict {
    let big = SplitSizes { train: 10_000, valid: 0, test: 0 };
    let mut notes = Vec::new();
    let mut pass = true;
    let mut worst_z = 0.0f64;
    for &pi in &PIS {
        for task in [2u8, 3, 4, 5, 6, 7, 9, 10] {
            let stats = generate(task, pi, false, big, 100 + task as u64).unwrap().train.stats();
            let n = stats.questions as f64;
            let z = (stats.policy_accuracy() - pi).abs() / (pi * (1.0 - pi) / n).sqrt();
            worst_z = worst_z.max(z);
            pass &= stats.questions == 10_000 && z <= Z99;
        }
    }
    notes.push(format!("policy accuracy worst |z| {worst_z:.2} over 24 sets (need <= {Z99:.3})"));

    let t6 = generate(6, 0.5, false, big, 7).unwrap().train.stats();
    let rate = t6.reward_rate_among_correct();
    pass &= (0.45..=0.55).contains(&rate);
    notes.push(format!("task 6 reward rate among correct {rate:.4}"));

    let t7: usize = PIS.iter().map(|&pi| generate(7, pi, false, big, 8).unwrap().train.stats().rewarded).sum();
    pass &= t7 == 0;
    notes.push(format!("task 7 rewards {t7}"));

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut identical = 0;
    for _ in 0..100 {
        let task = rng.random_range(1..=10);
        let pi = rng.random_range(0.0..=1.0);
        let sizes = SplitSizes { train: rng.random_range(1..60), valid: rng.random_range(0..5), test: 0 };
        let s = generate(task, pi, rng.random_bool(0.3), sizes, rng.random()).unwrap();
        identical += usize::from(
            parse(&serialize(&s.train)).as_ref() == Ok(&s.train)
                && parse(&serialize(&s.valid)).as_ref() == Ok(&s.valid),
        );
    }
    pass &= identical == 100;
    notes.push(format!("round trip identical {identical}/100"));
    verdict(pass, notes.join("; "))
}

fn criterion_11() -> Verdict {
    let sizes = SplitSizes { train: 1000, valid: 100, test: 1000 };
    let s = generate(3, 0.5, false, sizes, 11).unwrap();
    let out = train(&s.train, &s.valid, Strategy::RbiFp, &Hyperparams::default()).unwrap();
    let model = out.model();
    let examples = extract_examples(&s.test, model.scope).unwrap();
    let encoded: Vec<_> = examples.iter().map(|e| model.encode(e)).collect();
    let bits = |m: &dialoglearn::training::Model| -> Vec<Vec<u64>> {
        encoded
            .iter()
            .map(|e| {
                let (p, _) = m.net.forward_answer(&e.x, &e.memories, &m.candidates).unwrap();
                p.iter().map(|v| v.to_bits()).collect()
            })
            .collect()
    };
    let reference = bits(model);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut unchanged = 0;
    let trials = 5;
    for trial in 0..trials {
        let mut perturbed = model.clone();
        let scale = 10f64.powi(trial as i32 * 2 - 2);
        let noise = Normal::new(0.0, scale).unwrap();
        for name in ["R_fwd", "beta"] {
            for v in perturbed.net.param_mut(name).unwrap().data_mut() {
                *v = if trial == trials - 1 { f64::NAN } else { noise.sample(&mut rng) };
            }
        }
        unchanged += usize::from(bits(&perturbed) == reference);
    }
    let masked = common::mask(&s.test);
    let (plain, hidden) = (evaluate(model, &s.test).unwrap(), evaluate(model, &masked).unwrap());
    let pass = unchanged == trials && plain == hidden && serialize(&masked) != serialize(&s.test);
    verdict(
        pass,
        format!(
            "answer distribution bit-identical under {unchanged}/{trials} forward-head perturbations; \
             test accuracy {plain:.1} plain vs {hidden:.1} masked"
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let hyper = Hyperparams::default();
    let sizes = SplitSizes::default();
    let (cells, biased_cells) = training_cells();
    let (plain, mut failures) = run_grid(&cells, &hyper, sizes);
    let (biased, more) = run_grid(&biased_cells, &hyper, sizes);
    failures.extend(more);
    for f in &failures {
        eprintln!("cell failed: {:?}: {}", f.cell, f.error);
    }
    let results = Results(plain);

    let criteria: Vec<(usize, Box<dyn Fn() -> Verdict + '_>)> = vec![
        (1, Box::new(|| criterion_1(&results))),
        (2, Box::new(|| criterion_2(&results))),
        (3, Box::new(|| criterion_3(&results))),
        (4, Box::new(|| criterion_4(&results))),
        (5, Box::new(|| criterion_5(&results))),
        (6, Box::new(|| criterion_6(&results))),
        (7, Box::new(|| criterion_7(&biased))),
        (8, Box::new(criterion_8)),
        (9, Box::new(criterion_9)),
        (10, Box::new(criterion_10)),
        (11, Box::new(criterion_11)),
    ];
    let mut out = std::io::stdout();
    let mut failed = 0;
    for (n, check) in criteria {
        let v = check();
        failed += usize::from(!v.pass);
        let tag = if v.pass { "PASS" } else { "FAIL" };
        writeln!(out, "criterion {n:>2}: {tag}  {}", v.detail).unwrap();
    }
    writeln!(out, "acceptance: {}/11 passed in {:.0}s", 11 - failed, start.elapsed().as_secs_f64()).unwrap();
    if failed == 0 && failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
