//! Acceptance checks. Each criterion prints one PASS or FAIL line; the
//! process exits non-zero if any fails.


use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use logit_ensemble::backend::{Backend, HashBackend, Script, ScriptRule, ScriptedBackend};
use logit_ensemble::eval::pass_at_k;
use logit_ensemble::logits::{merge_logits, merge_probs, softmax, LogitVector, ProbVector};
use logit_ensemble::pipeline::{DecodeRecord, Decoder, MergeMode, PaddedBatch, PipelineKind};
use logit_ensemble::sampling::{apply_top_k, apply_top_p, Rng};
use logit_ensemble::scheduler::{merge_start_step, select_traces, trim_repeated_suffix, Completion, TracePool};
use logit_ensemble::{Phase, SamplingPolicy, StopReason, StrategyConfig, StrategyKind, TokenId, Trace, Vocabulary};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};

use reference::{Kind, Plan, Policy, Toy};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if let false = $cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("k1-equivalence", k1_equivalence),
        ("identical-trace-collapse", identical_trace_collapse),
        ("pipeline-equivalence", pipeline_equivalence),
        ("merge-properties", merge_properties),
        ("logit-vs-prob-divergence", divergence),
        ("sampler-oracles", sampler_oracles),
        ("pass-at-k-enumeration", pass_at_k_enumeration),
        ("trimming", trimming),
        ("strategy-semantics", strategy_semantics),
        ("mask-conformance", mask_conformance),
        ("golden-reproducibility", golden_reproducibility),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.2}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{secs:.2}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- fixtures

/// A random toy world: reference model, library backend and vocabulary.
struct World {
    toy: Toy,
    backend: HashBackend,
    vocab: Vocabulary,
}

fn world(rng: &mut StdRng, max_vocab: u32) -> World {
    let size = rng.random_range(8..=max_vocab);
    let delimiter: Vec<TokenId> =
        if rng.random_bool(0.5) { vec![rng.random_range(2..size)] } else { vec![2, rng.random_range(3..size)] };
    let toy = Toy {
        seed: rng.random(),
        size,
        eos: 1,
        delimiter: delimiter.clone(),
        m: rng.random_range(1..=6),
        force_after: rng.random_range(4..=30),
    };
    let vocab = Vocabulary::new(size, 1, 0, delimiter).unwrap();
    let backend = HashBackend::for_vocabulary(&vocab, toy.seed, toy.m, toy.force_after).unwrap();
    World { toy, backend, vocab }
}

fn policy(rng: &mut StdRng) -> SamplingPolicy {
    SamplingPolicy {
        temp_think: rng.random_range(0.3..1.5),
        temp_answer: rng.random_range(0.3..1.5),
        top_k: rng.random_bool(0.4).then(|| rng.random_range(1..12)),
        top_p: rng.random_bool(0.4).then(|| rng.random_range(0.5..1.0)),
        repetition_penalty: if rng.random_bool(0.5) { 1.0 } else { rng.random_range(1.0..1.5) },
        seed: rng.random(),
        greedy: rng.random_bool(0.15),
    }
}

fn as_reference(p: &SamplingPolicy) -> Policy {
    Policy {
        temp_think: p.temp_think,
        temp_answer: p.temp_answer,
        top_k: p.top_k,
        top_p: p.top_p,
        penalty: p.repetition_penalty,
        seed: p.seed,
        greedy: p.greedy,
    }
}

fn prompt(rng: &mut StdRng, vocab: &Vocabulary) -> Vec<TokenId> {
    (0..rng.random_range(1..=6)).map(|_| rng.random_range(3..vocab.size())).collect()
}

// ---------------------------------------------------------------- criteria

fn k1_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x4b31);
    let mut kinds = [0usize; 3];
    for case in 0..50 {
        let w = world(&mut rng, 64);
        let policy = policy(&mut rng);
        let (max_think, max_answer) = (rng.random_range(4..=32), rng.random_range(1..=10));
        let (strategy, k) = match case % 3 {
            0 => (StrategyConfig::direct_merge(1, max_think, max_answer), 0),
            1 => (StrategyConfig::shortest_k(1, rng.random_range(1..=4), max_think, max_answer), 1),
            _ => (StrategyConfig::early_ready(1, rng.random_range(2..=4), max_think, max_answer), 2),
        };
        kinds[k] += 1;
        let p = prompt(&mut rng, &w.vocab);
        let decoder = Decoder::new(&w.backend, w.vocab.clone(), strategy, policy.clone()).unwrap();
        let record = decoder.run(&p, PipelineKind::TwoStage).unwrap();
        ensure!(record.valid && record.selected.len() == 1, "case {case}: {record:?}");
        let stream = record.selected[0];
        let (thinking, answer) =
            reference::plain(&w.toy, &p, &as_reference(&policy), stream, max_think, max_answer);
        let library = decoder.decode_plain(&p, stream).unwrap();
        ensure!(record.traces[stream].thinking == thinking, "case {case}: reasoning differs from plain decoding");
        ensure!(record.answer == answer, "case {case}: ensemble {:?} vs plain {answer:?}", record.answer);
        ensure!(library.answer == answer, "case {case}: library plain decode {:?} vs {answer:?}", library.answer);
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(10), "took {took:.2?}, limit 10 s");
    Ok(format!("50 configs (direct {}, shortest {}, early {}) token-identical in {took:.2?}", kinds[0], kinds[1], kinds[2]))
}

fn finished(prompt: &[TokenId], reasoning: &[TokenId], vocab: &Vocabulary) -> Trace {
    let mut generated = reasoning.to_vec();
    generated.extend_from_slice(vocab.delimiter());
    let end = generated.len();
    Trace::new(prompt.to_vec(), generated, Phase::Finished, Some(end), vocab).unwrap()
}

fn pool_of(traces: Vec<Trace>) -> TracePool {
    let log = (0..traces.len()).map(|index| Completion { index, step: 1, forced: false }).collect();
    TracePool::with_log(traces, log).unwrap()
}

fn identical_trace_collapse() -> Check {
    let mut rng = StdRng::seed_from_u64(0xc011);
    let mut cases = 0;
    for _ in 0..30 {
        let w = world(&mut rng, 48);
        let policy = policy(&mut rng);
        let p = prompt(&mut rng, &w.vocab);
        let reasoning: Vec<TokenId> = (0..rng.random_range(0..12)).map(|_| rng.random_range(3..w.vocab.size())).collect();
        let trace = finished(&p, &reasoning, &w.vocab);
        let max_answer = rng.random_range(1..=12);
        let solo = Decoder::new(&w.backend, w.vocab.clone(), StrategyConfig::direct_merge(1, 64, max_answer), policy.clone())
            .unwrap()
            .decode_answer(&pool_of(vec![trace.clone()]), &mut Rng::new(policy.seed))
            .unwrap()
            .1;
        for k in [2, 4, 8] {
            let d = Decoder::new(&w.backend, w.vocab.clone(), StrategyConfig::direct_merge(k, 64, max_answer), policy.clone())
                .unwrap();
            let merged = d.decode_answer(&pool_of(vec![trace.clone(); k]), &mut Rng::new(policy.seed)).unwrap().1;
            ensure!(merged.answer == solo.answer, "K={k}: {:?} vs K=1 {:?}", merged.answer, solo.answer);
            ensure!(merged.steps == solo.steps, "K={k}: step probabilities differ from K=1");
            cases += 1;
        }
    }
    Ok(format!("{cases} decodes with K in {{2,4,8}} equal K=1, including step probabilities"))
}

fn pipeline_equivalence() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x9e11);
    let mut unequal = 0;
    for case in 0..100 {
        let w = world(&mut rng, 64);
        let policy = policy(&mut rng);
        let k = rng.random_range(1..=4);
        let strategy = StrategyConfig::direct_merge(k, rng.random_range(4..=32), rng.random_range(1..=10));
        let mode = if rng.random_bool(0.25) { MergeMode::Probs } else { MergeMode::Logits };
        let p = prompt(&mut rng, &w.vocab);
        let d = Decoder::new(&w.backend, w.vocab.clone(), strategy, policy).unwrap().with_merge_mode(mode);
        let two = d.run(&p, PipelineKind::TwoStage).unwrap();
        let one = d.run(&p, PipelineKind::OneStep).unwrap();
        ensure!(two.valid && one.valid, "case {case}: invalid record");
        ensure!(two.answer == one.answer, "case {case}: two-stage {:?} vs one-step {:?}", two.answer, one.answer);
        ensure!(two.steps == one.steps, "case {case}: step records differ");
        ensure!(two.merge_start_step == one.merge_start_step, "case {case}: merge start differs");
        let lens: Vec<_> = two.traces.iter().map(|t| t.reasoning_len).collect();
        if lens.iter().any(|l| *l != lens[0]) {
            unequal += 1;
        }
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(60), "took {took:.2?}, limit 60 s");
    ensure!(unequal > 0, "no case had unequal trace lengths");
    Ok(format!("100 cases identical ({unequal} with unequal trace lengths) in {took:.2?}"))
}

fn oracle_softmax(z: &[f64], t: f64) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| (v / t).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn merge_properties() -> Check {
    let mut rng = StdRng::seed_from_u64(0x3e7);
    let mut worst = 0f64;
    for case in 0..1000 {
        let (k, v) = (rng.random_range(1..=8), rng.random_range(1..=32));
        let rows: Vec<Vec<f32>> = (0..k).map(|_| (0..v).map(|_| rng.random_range(-30.0..30.0)).collect()).collect();
        let lv = |rows: &[Vec<f32>]| rows.iter().map(|r| LogitVector::new(r.clone()).unwrap()).collect::<Vec<_>>();
        let merged = merge_logits(&lv(&rows)).unwrap();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng);
        let permuted = merge_logits(&lv(&shuffled)).unwrap();
        for (a, b) in merged.values().iter().zip(permuted.values()) {
            let gap = ((a - b) as f64).abs() / (a.abs() as f64).max(1.0);
            worst = worst.max(gap);
            ensure!(gap <= 1e-6, "case {case}: permuted merge differs by {gap:e}");
        }
        let t = rng.random_range(0.3..2.0);
        let pa = merge_probs(&lv(&rows), t).unwrap();
        let pb = merge_probs(&lv(&shuffled), t).unwrap();
        for (a, b) in pa.values().iter().zip(pb.values()) {
            ensure!((a - b).abs() <= 1e-6, "case {case}: permuted prob merge differs");
        }
        // shifting one trace by c moves the merged logits by c/K and leaves the distribution alone
        let c: f32 = rng.random_range(-50.0..50.0);
        let j = rng.random_range(0..k);
        let mut shifted = rows.clone();
        shifted[j].iter_mut().for_each(|x| *x += c);
        let moved = merge_logits(&lv(&shifted)).unwrap();
        let expect = c as f64 / k as f64;
        for (a, b) in merged.values().iter().zip(moved.values()) {
            ensure!(((b - a) as f64 - expect).abs() <= 1e-4, "case {case}: shift is not c/K");
        }
        let before = softmax(&merged, t).unwrap();
        let after = softmax(&moved, t).unwrap();
        let oracle = oracle_softmax(&merged.values().iter().map(|&x| x as f64).collect::<Vec<_>>(), t);
        for ((x, y), o) in before.values().iter().zip(after.values()).zip(&oracle) {
            worst = worst.max((x - y).abs());
            ensure!((x - y).abs() <= 1e-6, "case {case}: softmax moved by {:e} under a uniform shift", (x - y).abs());
            ensure!((x - o).abs() <= 1e-6, "case {case}: softmax disagrees with the oracle");
        }
    }
    Ok(format!("1000 sets, largest deviation {worst:.1e}"))
}

fn divergence() -> Check {
    let rows: Vec<LogitVector> =
        [[20.0, 0.0], [0.0, 6.0], [0.0, 6.0]].iter().map(|r| LogitVector::new(r.to_vec()).unwrap()).collect();
    let merged = merge_logits(&rows).unwrap();
    let by_hand = [20.0 / 3.0, 4.0];
    ensure!(
        merged.values().iter().zip(by_hand).all(|(&a, b)| (a as f64 - b).abs() < 1e-6),
        "merged logits {:?}",
        merged.values()
    );
    let probs = merge_probs(&rows, 1.0).unwrap();
    let mut mean = [0.0f64; 2];
    for r in [[20.0, 0.0], [0.0, 6.0], [0.0, 6.0]] {
        for (m, p) in mean.iter_mut().zip(oracle_softmax(&r, 1.0)) {
            *m += p / 3.0;
        }
    }
    let argmax = |v: &[f64]| if v[1] > v[0] { 1 } else { 0 };
    let logit_oracle = oracle_softmax(&by_hand, 1.0);
    ensure!(argmax(&logit_oracle) == 0 && argmax(&mean) == 1, "oracle argmaxes {logit_oracle:?} {mean:?}");
    ensure!(merged.argmax() == Some(0), "logit merge argmax {:?}", merged.argmax());
    ensure!(probs.argmax() == Some(1), "prob merge argmax {:?}", probs.argmax());
    ensure!(
        probs.values().iter().zip(mean).all(|(a, b)| (a - b).abs() < 1e-12),
        "prob merge {:?} vs oracle {mean:?}",
        probs.values()
    );
    Ok(format!("logit merge -> token 0, prob merge [{:.4}, {:.4}] -> token 1", mean[0], mean[1]))
}

fn sampler_oracles() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5a3);
    let mut worst = 0f64;
    for case in 0..10_000 {
        let v = rng.random_range(1..=16);
        // a coarse grid makes ties common
        let z: Vec<f32> = (0..v).map(|_| rng.random_range(-6i32..=6) as f32 / 2.0).collect();
        let k = rng.random_range(1..=v + 1);
        let got = apply_top_k(&LogitVector::new(z.clone()).unwrap(), k).unwrap();
        let want = reference::top_k(&z, k);
        ensure!(got.values() == want.as_slice(), "case {case}: top-k {:?} vs oracle {want:?}", got.values());

        let weights: Vec<u32> = (0..v).map(|_| rng.random_range(0..=6)).collect();
        let total: u32 = weights.iter().sum();
        if total == 0 {
            continue;
        }
        let probs: Vec<f64> = weights.iter().map(|&w| w as f64 / total as f64).collect();
        let p = if rng.random_bool(0.1) { 1.0 } else { rng.random_range(0.01..1.0) };
        let got = apply_top_p(&ProbVector::new(probs.clone()).unwrap(), p).unwrap();
        let want = brute_top_p(&probs, p);
        for (a, b) in got.values().iter().zip(&want) {
            worst = worst.max((a - b).abs());
            ensure!((a - b).abs() <= 1e-6, "case {case}: top-p {:?} vs oracle {want:?}", got.values());
        }
    }
    Ok(format!("10000 cases, vocab <= 16, largest top-p deviation {worst:.1e}"))
}

/// Token i survives top-p iff the mass ranked strictly ahead of it is below p.
fn brute_top_p(probs: &[f64], p: f64) -> Vec<f64> {
    if p >= 1.0 {
        return probs.to_vec();
    }
    let ahead = |i: usize| -> f64 {
        (0..probs.len()).filter(|&j| probs[j] > probs[i] || (probs[j] == probs[i] && j < i)).map(|j| probs[j]).sum()
    };
    let kept: Vec<f64> = (0..probs.len()).map(|i| if ahead(i) < p { probs[i] } else { 0.0 }).collect();
    let mass: f64 = kept.iter().sum();
    kept.iter().map(|x| x / mass).collect()
}

fn pass_at_k_enumeration() -> Check {
    let mut checked = 0;
    for n in 1..=12u32 {
        // hits[c][k]: size-k subsets touching the first c samples
        let mut total = vec![0u64; n as usize + 1];
        let mut hits = vec![vec![0u64; n as usize + 1]; n as usize + 1];
        for mask in 0u32..(1 << n) {
            let k = mask.count_ones() as usize;
            total[k] += 1;
            for c in 0..=n {
                if mask & ((1u32 << c) - 1) != 0 {
                    hits[c as usize][k] += 1;
                }
            }
        }
        for (c, row) in hits.iter().enumerate() {
            for k in 1..=n as usize {
                let want = row[k] as f64 / total[k] as f64;
                let got = pass_at_k(n as u64, c as u64, k as u64).map_err(|e| e.to_string())?;
                ensure!((got - want).abs() <= 1e-12, "n={n} c={c} k={k}: {got} vs {}/{}", row[k], total[k]);
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (n, c, k) triples match subset enumeration"))
}

fn trimming() -> Check {
    let mut rng = StdRng::seed_from_u64(0x7121);
    let (lo, hi) = (1, 8);
    for case in 0..500 {
        // prefix and block draw from disjoint alphabets; block tokens are distinct
        let prefix: Vec<TokenId> = (0..rng.random_range(1..=8)).map(|_| rng.random_range(100..200)).collect();
        let b = rng.random_range(1..=6);
        let mut alphabet: Vec<TokenId> = (0..50).collect();
        alphabet.shuffle(&mut rng);
        let block = &alphabet[..b];
        let m = rng.random_range(2..=5);
        let mut seq = prefix.clone();
        for _ in 0..m {
            seq.extend_from_slice(block);
        }
        let mut want = prefix.clone();
        want.extend_from_slice(block);
        let got = trim_repeated_suffix(&seq, lo, hi).map_err(|e| e.to_string())?;
        ensure!(got == want, "case {case}: planted ({b}, {m}) in {seq:?} trimmed to {got:?}");
        ensure!(seq.len() - got.len() == (m - 1) * b, "case {case}: removed the wrong amount");
        ensure!(trim_repeated_suffix(&got, lo, hi).unwrap() == got, "case {case}: not idempotent");
    }
    let mut untouched = 0;
    for case in 0..500 {
        let seq: Vec<TokenId> = (0..rng.random_range(0..=30)).map(|_| rng.random_range(0..1_000_000)).collect();
        if !reference::trailing_repeats(&seq, lo, hi).is_empty() {
            continue;
        }
        ensure!(trim_repeated_suffix(&seq, lo, hi).unwrap() == seq, "case {case}: unplanted sequence changed");
        untouched += 1;
    }
    for case in 0..500 {
        let seq: Vec<TokenId> = (0..rng.random_range(0..=24)).map(|_| rng.random_range(0..3)).collect();
        let got = trim_repeated_suffix(&seq, 2, 5).unwrap();
        let want = reference::trim(&seq, 2, 5);
        ensure!(got == want, "case {case}: {seq:?} -> {got:?}, oracle {want:?}");
        ensure!(trim_repeated_suffix(&got, 2, 5).unwrap() == got, "case {case}: not idempotent");
    }
    Ok(format!("500 planted repeats trimmed to one copy, {untouched} unplanted unchanged, 500 dense cases match the oracle"))
}

fn strategy_semantics() -> Check {
    let mut rng = StdRng::seed_from_u64(0x57a7);
    let vocab = Vocabulary::new(40, 1, 0, vec![2, 3]).unwrap();
    for case in 0..300 {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(1..=n);
        let lens: Vec<usize> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let traces: Vec<Trace> = lens
            .iter()
            .map(|&l| finished(&[5], &(0..l).map(|_| rng.random_range(4..40)).collect::<Vec<_>>(), &vocab))
            .collect();
        let pool = pool_of(traces);
        let mut oracle: Vec<usize> = (0..n).collect();
        oracle.sort_by_key(|&i| (lens[i], i));
        oracle.truncate(k);
        oracle.sort();
        let got = select_traces(&pool, &StrategyConfig::shortest_k(k, n, 64, 4)).unwrap();
        ensure!(got == oracle, "case {case}: lengths {lens:?} K={k} selected {got:?}, oracle {oracle:?}");
        let all = select_traces(&pool, &StrategyConfig::shortest_k(n, n, 64, 4)).unwrap();
        let direct = select_traces(&pool, &StrategyConfig::direct_merge(n, 64, 4)).unwrap();
        ensure!(all == direct, "case {case}: ShortestK(K=N) selected {all:?}, direct merge {direct:?}");
    }
    let mut logs = 0;
    for case in 0..1000 {
        let n = rng.random_range(2..=10);
        let k = rng.random_range(1..n);
        let mut steps: Vec<usize> = (0..n).map(|_| rng.random_range(1..40)).collect();
        steps.sort();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let log: Vec<Completion> =
            order.iter().zip(&steps).map(|(&index, &step)| Completion { index, step, forced: false }).collect();
        let early = merge_start_step(&log, n, &StrategyConfig::early_ready(k, n, 64, 4)).unwrap();
        let direct = merge_start_step(&log, n, &StrategyConfig::direct_merge(n, 64, 4)).unwrap();
        ensure!(early <= direct, "case {case}: early-ready starts at {early}, direct merge at {direct}");
        ensure!(early == steps[k - 1] && direct == steps[n - 1], "case {case}: replay disagrees with the log");
        logs += 1;
    }
    let mut runs = 0;
    for case in 0..40 {
        let w = world(&mut rng, 48);
        let policy = policy(&mut rng);
        let n = rng.random_range(2..=5);
        let (mt, ma) = (rng.random_range(4..=32), rng.random_range(1..=8));
        let p = prompt(&mut rng, &w.vocab);
        let run = |s: StrategyConfig| {
            Decoder::new(&w.backend, w.vocab.clone(), s, policy.clone()).unwrap().run(&p, PipelineKind::TwoStage).unwrap()
        };
        let direct = run(StrategyConfig::direct_merge(n, mt, ma));
        let all = run(StrategyConfig::shortest_k(n, n, mt, ma));
        ensure!(all.answer == direct.answer && all.selected == direct.selected, "case {case}: ShortestK(K=N) decode differs");
        let early = run(StrategyConfig::early_ready(rng.random_range(1..n), n, mt, ma));
        ensure!(
            early.merge_start_step <= direct.merge_start_step,
            "case {case}: early-ready start {:?} after direct merge {:?}",
            early.merge_start_step,
            direct.merge_start_step
        );
        runs += 1;
    }
    Ok(format!("300 pools select the oracle K shortest, {logs} replayed logs and {runs} decodes keep early-ready <= direct merge"))
}

fn mask_conformance() -> Check {
    let mut rng = StdRng::seed_from_u64(0x3a5c);
    for case in 0..200 {
        let w = world(&mut rng, 64);
        let size = w.vocab.size();
        let script = Script {
            vocab_size: size,
            eos_id: 1,
            pad_id: 0,
            max_context: 1 << 16,
            default: (0..size).map(|_| rng.random_range(-4.0..4.0)).collect(),
            rules: (0..rng.random_range(0..6))
                .map(|i| ScriptRule {
                    suffix: vec![i + 1; 1 + i as usize % 3],
                    logits: (0..size).map(|_| rng.random_range(-4.0..4.0)).collect(),
                })
                .collect(),
        };
        let scripted = ScriptedBackend::new(script).unwrap();
        let k = rng.random_range(1..=6);
        let contexts: Vec<Vec<TokenId>> =
            (0..k).map(|_| (0..rng.random_range(1..=20)).map(|_| rng.random_range(1..size)).collect()).collect();
        let extra = rng.random_range(0..4);
        let width = contexts.iter().map(Vec::len).max().unwrap() + extra;
        let rows = contexts.iter().map(|c| [vec![0; width - c.len()], c.clone()].concat()).collect();
        let mask = contexts.iter().map(|c| [vec![false; width - c.len()], vec![true; c.len()]].concat()).collect();
        let batch = PaddedBatch::new(rows, mask, 0).unwrap();
        ensure!(batch.logical_contexts() == contexts, "case {case}: stripping pads did not restore the contexts");
        let oracle: Vec<Vec<f32>> = contexts.iter().map(|c| w.toy.logits(c)).collect();
        let masked = w.backend.next_logits_masked(&batch).unwrap();
        let plain = w.backend.next_logits(&contexts).unwrap();
        ensure!(masked == plain, "case {case}: hash backend masked rows differ");
        ensure!(
            masked.iter().map(|r| r.values().to_vec()).collect::<Vec<_>>() == oracle,
            "case {case}: hash rows differ from the reference hash"
        );
        ensure!(
            scripted.next_logits_masked(&batch).unwrap() == scripted.next_logits(&contexts).unwrap(),
            "case {case}: scripted backend masked rows differ"
        );
    }
    Ok("200 padded pools equal pad-stripped rows on hash and scripted backends".into())
}

fn golden_reproducibility() -> Check {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    fs::copy(fixtures.join("prompts.jsonl"), dir.path().join("prompts.jsonl")).map_err(|e| e.to_string())?;
    let mut records = 0;
    for name in ["shortest_k", "early_ready_probs", "one_step"] {
        let config = dir.path().join(format!("{name}.json"));
        fs::copy(fixtures.join(format!("{name}.json")), &config).map_err(|e| e.to_string())?;
        let status = Command::new(env!("CARGO_BIN_EXE_logit-ensemble"))
            .args(["decode", "--config"])
            .arg(&config)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(status.status.code() == Some(0), "{name}: decode exited {:?}", status.status.code());
        let got = fs::read(dir.path().join(format!("{name}.out.jsonl"))).map_err(|e| e.to_string())?;
        let want = fs::read(fixtures.join(format!("{name}.expected.jsonl"))).map_err(|e| e.to_string())?;
        ensure!(got == want, "{name}: output differs from the frozen golden file");

        let cfg: serde_json::Value = serde_json::from_slice(&fs::read(&config).unwrap()).unwrap();
        let (toy, plan, policy) = reference::from_config(&cfg);
        for line in String::from_utf8(want).unwrap().lines() {
            let r: DecodeRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
            cross_check(&r, &toy, &plan, &policy).map_err(|e| format!("{name}/{}: {e}", r.id))?;
            records += 1;
        }
    }
    Ok(format!("3 fixtures reproduced byte-for-byte; {records} records agree with the reference decoder"))
}

fn cross_check(r: &DecodeRecord, toy: &Toy, plan: &Plan, policy: &Policy) -> Result<(), String> {
    let want = reference::decode(toy, &r.prompt, plan, policy);
    let kind = match r.strategy {
        StrategyKind::DirectMerge => Kind::Direct,
        StrategyKind::ShortestK => Kind::Shortest,
        StrategyKind::EarlyReady => Kind::Early,
    };
    ensure!(kind == plan.kind, "strategy {:?}", r.strategy);
    for (t, w) in r.traces.iter().zip(&want.thoughts) {
        ensure!(t.thinking == w.generated, "trace {} thinking differs", t.index);
        ensure!(t.reasoning_len == w.end && t.completion_step == w.step && t.forced == w.forced, "trace {} bookkeeping", t.index);
        ensure!(t.trimmed_len == want.trimmed[t.index], "trace {} trimming", t.index);
    }
    ensure!(r.selected == want.selected, "selected {:?} vs {:?}", r.selected, want.selected);
    ensure!(r.merge_start_step == want.start, "merge start {:?} vs {:?}", r.merge_start_step, want.start);
    ensure!(r.answer == want.answer, "answer {:?} vs {:?}", r.answer, want.answer);
    let probs: Vec<f64> = r.steps.iter().map(|s| s.prob).collect();
    ensure!(probs == want.probs, "step probabilities {probs:?} vs {:?}", want.probs);
    let stop = if want.eos_stop { StopReason::Eos } else { StopReason::Length };
    ensure!(r.stop_reason == Some(stop), "stop reason {:?}", r.stop_reason);
    ensure!(r.solo_answers == want.solo, "solo answers {:?} vs {:?}", r.solo_answers, want.solo);
    Ok(())
}
