//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use dialoglearn::memnet::{MemNet, ModelConfig, TextSet, Vocabulary};
use dialoglearn::taskgen::{Dataset, TurnKind};
use dialoglearn::tensor::Matrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 5] = ["red", "green", "blue", "cat", "dog"];
pub const ORACLE_TOL: f64 = 1e-10;

fn dense(vocab: &Vocabulary, text: &str) -> Vec<f64> {
    let mut v = vec![0.0; vocab.len()];
    for w in text.split(' ') {
        v[vocab.get(w).unwrap()] += 1.0;
    }
    v
}

fn mat(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| (0..m.cols()).map(|c| m.get(r, c)).collect()).collect()
}

fn mul(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn naive_softmax(s: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = s.iter().map(|x| x.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

struct Naive {
    a: Vec<Vec<f64>>,
    r: Vec<Vec<Vec<f64>>>,
    r_fwd: Vec<Vec<f64>>,
    beta: Vec<f64>,
    t: Vec<Vec<f64>>,
}

impl Naive {
    fn from(net: &MemNet) -> Self {
        let hops = net.config().hops;
        Naive {
            a: mat(net.param("A").unwrap()),
            r: (1..=hops).map(|h| mat(net.param(&format!("R{h}")).unwrap())).collect(),
            r_fwd: mat(net.param("R_fwd").unwrap()),
            beta: net.param("beta").unwrap().data().to_vec(),
            t: mat(net.param("T").unwrap()),
        }
    }

    fn controller(&self, x: &[f64], mems: &[Vec<f64>]) -> Vec<f64> {
        let n = mems.len();
        let m: Vec<Vec<f64>> = mems
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let age = n - 1 - i;
                let time: Vec<f64> = self.t.iter().map(|row| row[age]).collect();
                add(&mul(&self.a, c), &time)
            })
            .collect();
        let mut u = mul(&self.a, x);
        for r in &self.r {
            let mut o = vec![0.0; u.len()];
            if !m.is_empty() {
                let p = naive_softmax(&m.iter().map(|mi| inner(&u, mi)).collect::<Vec<_>>());
                for (pi, mi) in p.iter().zip(&m) {
                    for (oj, mij) in o.iter_mut().zip(mi) {
                        *oj += pi * mij;
                    }
                }
            }
            u = mul(r, &add(&o, &u));
        }
        u
    }

    fn answer(&self, x: &[f64], mems: &[Vec<f64>], cands: &[Vec<f64>]) -> Vec<f64> {
        let u = self.controller(x, mems);
        naive_softmax(&cands.iter().map(|y| inner(&u, &mul(&self.a, y))).collect::<Vec<_>>())
    }

    fn predict(&self, x: &[f64], mems: &[Vec<f64>], cands: &[Vec<f64>], sel: usize, resp: &[Vec<f64>]) -> Vec<f64> {
        let u = self.controller(x, mems);
        let ys: Vec<Vec<f64>> = cands.iter().map(|y| mul(&self.a, y)).collect();
        let p3 = naive_softmax(&ys.iter().map(|y| inner(&u, y)).collect::<Vec<_>>());
        let mut o3 = vec![0.0; u.len()];
        for (j, y) in ys.iter().enumerate() {
            let selected = if j == sel { 1.0 } else { 0.0 };
            for k in 0..o3.len() {
                o3[k] += p3[j] * (y[k] + self.beta[k] * selected);
            }
        }
        let u3 = mul(&self.r_fwd, &add(&o3, &u));
        naive_softmax(&resp.iter().map(|r| inner(&u3, &mul(&self.a, r))).collect::<Vec<_>>())
    }
}

fn sentence(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    while out.len() < n {
        let len = rng.random_range(1..=2);
        let s = sentence(rng, len);
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest absolute difference between the network and the naive oracle
/// over every tiny instance, with the number of instances checked.
pub fn oracle_sweep(seed: u64) -> (f64, usize) {
    let vocab = Vocabulary::build(WORDS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for dim in 1..=4 {
        for hops in 1..=3 {
            for n_mem in 0..=3 {
                for n_cand in 1..=3 {
                    for _draw in 0..100 {
                        let config = ModelConfig { dim, hops, memory_size: 3, vocab_size: vocab.len() };
                        let sigma = rng.random_range(0.1..1.0);
                        let net = MemNet::new(config, sigma, &mut rng).unwrap();
                        let naive = Naive::from(&net);

                        let x_text = sentence(&mut rng, 2);
                        let mem_text: Vec<String> = (0..n_mem).map(|_| sentence(&mut rng, 3)).collect();
                        let cand_text = distinct(&mut rng, n_cand);
                        let resp_text = distinct(&mut rng, 3);

                        let x = vocab.encode(&x_text);
                        let mems: Vec<_> = mem_text.iter().map(|t| vocab.encode(t)).collect();
                        let cands = TextSet::new(cand_text.clone(), &vocab).unwrap();
                        let resp = TextSet::new(resp_text.clone(), &vocab).unwrap();
                        let resp_refs: Vec<_> = resp.bows().iter().collect();

                        let dx = dense(&vocab, &x_text);
                        let dm: Vec<_> = mem_text.iter().map(|t| dense(&vocab, t)).collect();
                        let dc: Vec<_> = cand_text.iter().map(|t| dense(&vocab, t)).collect();
                        let dr: Vec<_> = resp_text.iter().map(|t| dense(&vocab, t)).collect();

                        let (p, _) = net.forward_answer(&x, &mems, &cands).unwrap();
                        worst = worst.max(max_diff(&p, &naive.answer(&dx, &dm, &dc)));
                        for sel in 0..n_cand {
                            let (q, _) = net.forward_predict(&x, &mems, &cands, sel, &resp_refs).unwrap();
                            worst = worst.max(max_diff(&q, &naive.predict(&dx, &dm, &dc, sel, &dr)));
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    (worst, cases)
}

/// Replaces every answer, feedback text and reward by a placeholder,
/// keeping the gold labels.
pub fn mask(data: &Dataset) -> Dataset {
    let mut out = data.clone();
    for turn in out.episodes.iter_mut().flat_map(|e| e.turns.iter_mut()) {
        if turn.kind == TurnKind::Ans || turn.kind.is_feedback() {
            turn.text = "placeholder".into();
            turn.reward = false;
        }
    }
    out
}
