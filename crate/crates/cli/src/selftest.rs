//! `selftest`: randomized conformance suites runnable from a release binary.

use logit_ensemble::backend::{Backend, HashBackend};
use logit_ensemble::eval::pass_at_k;
use logit_ensemble::logits::inject_reduction_fault;
use logit_ensemble::pipeline::{Decoder, PaddedBatch, PipelineKind};
use logit_ensemble::sampling::{apply_top_k, apply_top_p, Rng};
use logit_ensemble::scheduler::trim_repeated_suffix;
use logit_ensemble::{merge_logits, softmax, LogitVector, ProbVector, SamplingPolicy, StrategyConfig, TokenId, Vocabulary};

use crate::Exit;

pub type SuiteResult = Result<usize, String>;

pub struct Suite {
    pub name: &'static str,
    pub about: &'static str,
    pub run: fn() -> SuiteResult,
}

pub const SUITES: &[Suite] = &[
    Suite { name: "merge", about: "merge permutation and shift invariance", run: merge_suite },
    Suite { name: "pipeline", about: "two-stage vs one-step, K=1 vs plain decoding", run: pipeline_suite },
    Suite { name: "sampler", about: "top-k / top-p against brute force", run: sampler_suite },
    Suite { name: "estimator", about: "pass@k against subset enumeration", run: estimator_suite },
    Suite { name: "mask", about: "masked batches against stripped contexts", run: mask_suite },
    Suite { name: "trim", about: "planted repetitions trimmed to one copy", run: trim_suite },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Merge with an order-dependent running mean.
    ReductionOrder,
}

fn below(rng: &mut Rng, n: usize) -> usize {
    (rng.next_f64() * n as f64) as usize
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_f64()
}

fn random_logits(rng: &mut Rng, v: usize) -> LogitVector {
    LogitVector::new((0..v).map(|_| uniform(rng, -8.0, 8.0) as f32).collect()).expect("finite")
}

fn max_diff(a: &ProbVector, b: &ProbVector) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn merge_suite() -> SuiteResult {
    let mut rng = Rng::new(0x5eed_0001);
    let cases = 500;
    for case in 0..cases {
        let k = 2 + below(&mut rng, 6);
        let v = 2 + below(&mut rng, 30);
        let set: Vec<LogitVector> = (0..k).map(|_| random_logits(&mut rng, v)).collect();
        let base = softmax(&merge_logits(&set).map_err(|e| e.to_string())?, 1.0).map_err(|e| e.to_string())?;
        let mut perm = set.clone();
        perm.reverse();
        perm.rotate_left(1 + below(&mut rng, k - 1));
        let permuted = softmax(&merge_logits(&perm).map_err(|e| e.to_string())?, 1.0).map_err(|e| e.to_string())?;
        let d = max_diff(&base, &permuted);
        if d > 1e-6 {
            return Err(format!("case {case}: permuting {k} vectors moved the merged softmax by {d:e}"));
        }
        let c = uniform(&mut rng, -20.0, 20.0) as f32;
        let j = below(&mut rng, k);
        let mut shifted = set.clone();
        shifted[j] = LogitVector::new(set[j].values().iter().map(|x| x + c).collect()).expect("finite");
        let s = softmax(&merge_logits(&shifted).map_err(|e| e.to_string())?, 1.0).map_err(|e| e.to_string())?;
        let d = max_diff(&base, &s);
        if d > 1e-6 {
            return Err(format!("case {case}: shifting vector {j} by {c} moved the merged softmax by {d:e}"));
        }
    }
    Ok(cases)
}

fn ranked_before(values: &[f64], i: usize) -> impl Iterator<Item = usize> + '_ {
    (0..values.len()).filter(move |&j| values[j] > values[i] || (values[j] == values[i] && j < i))
}

fn sampler_suite() -> SuiteResult {
    let mut rng = Rng::new(0x5eed_0002);
    let cases = 2000;
    for case in 0..cases {
        let v = 1 + below(&mut rng, 16);
        let mut z = random_logits(&mut rng, v).values().to_vec();
        if v > 1 && rng.next_f64() < 0.3 {
            z[1] = z[0];
        }
        let z = LogitVector::new(z).expect("finite");
        let k = 1 + below(&mut rng, v + 1);
        let got = apply_top_k(&z, k).map_err(|e| e.to_string())?;
        let zs: Vec<f64> = z.values().iter().map(|&x| x as f64).collect();
        for i in 0..v {
            let keep = ranked_before(&zs, i).count() < k;
            let kept = got.values()[i].is_finite();
            if keep != kept {
                return Err(format!("case {case}: top-{k} kept={kept} for token {i}, oracle {keep}"));
            }
        }
        let probs = softmax(&z, uniform(&mut rng, 0.2, 2.0)).map_err(|e| e.to_string())?;
        let p = uniform(&mut rng, 0.05, 1.0);
        let got = apply_top_p(&probs, p).map_err(|e| e.to_string())?;
        let pv = probs.values();
        let keep: Vec<bool> = (0..v).map(|i| ranked_before(pv, i).map(|j| pv[j]).sum::<f64>() < p).collect();
        let mass: f64 = (0..v).filter(|&i| keep[i]).map(|i| pv[i]).sum();
        for i in 0..v {
            let want = if keep[i] { pv[i] / mass } else { 0.0 };
            if (got.values()[i] - want).abs() > 1e-6 {
                return Err(format!("case {case}: top-p {p} token {i}: {} vs oracle {want}", got.values()[i]));
            }
        }
    }
    Ok(cases)
}

fn estimator_suite() -> SuiteResult {
    let mut checked = 0;
    for n in 1..=10u32 {
        for c in 0..=n {
            for k in 1..=n {
                let (mut hit, mut total) = (0u64, 0u64);
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() == k {
                        total += 1;
                        hit += (mask & ((1 << c) - 1) != 0) as u64;
                    }
                }
                let want = hit as f64 / total as f64;
                let got = pass_at_k(n as u64, c as u64, k as u64).map_err(|e| e.to_string())?;
                if (got - want).abs() > 1e-12 {
                    return Err(format!("pass@{k} with n={n}, c={c}: {got} vs enumeration {want}"));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

fn toy(rng: &mut Rng) -> (HashBackend, Vocabulary) {
    let size = 8 + below(rng, 57) as u32;
    let vocab = Vocabulary::new(size, 1, 0, vec![2]).expect("valid vocabulary");
    let backend = HashBackend::for_vocabulary(&vocab, rng.next_u64(), 1 + below(rng, 4), 3 + below(rng, 12))
        .expect("valid backend");
    (backend, vocab)
}

fn random_prompt(rng: &mut Rng, vocab: &Vocabulary) -> Vec<TokenId> {
    (0..1 + below(rng, 6)).map(|_| 3 + below(rng, vocab.size() as usize - 3) as TokenId).collect()
}

fn pipeline_suite() -> SuiteResult {
    let mut rng = Rng::new(0x5eed_0003);
    let cases = 40;
    for case in 0..cases {
        let (backend, vocab) = toy(&mut rng);
        let prompt = random_prompt(&mut rng, &vocab);
        let k = 1 + below(&mut rng, 4);
        let policy = SamplingPolicy { top_k: Some(8), ..SamplingPolicy::default() }.with_seed(rng.next_u64());
        let decoder = Decoder::new(&backend, vocab.clone(), StrategyConfig::direct_merge(k, 24, 8), policy.clone())
            .map_err(|e| e.to_string())?;
        let two = decoder.run(&prompt, PipelineKind::TwoStage).map_err(|e| e.to_string())?;
        let one = decoder.run(&prompt, PipelineKind::OneStep).map_err(|e| e.to_string())?;
        if two.answer != one.answer {
            return Err(format!("case {case}: two-stage {:?} vs one-step {:?}", two.answer, one.answer));
        }
        let single = Decoder::new(&backend, vocab, StrategyConfig::direct_merge(1, 24, 8), policy)
            .map_err(|e| e.to_string())?;
        let merged = single.run(&prompt, PipelineKind::TwoStage).map_err(|e| e.to_string())?;
        let plain = single.decode_plain(&prompt, 0).map_err(|e| e.to_string())?;
        if merged.answer != plain.answer || merged.traces[0].thinking != plain.trace.generated() {
            return Err(format!("case {case}: K=1 ensemble diverged from plain decoding"));
        }
    }
    Ok(cases)
}

fn mask_suite() -> SuiteResult {
    let mut rng = Rng::new(0x5eed_0004);
    let cases = 100;
    for case in 0..cases {
        let (backend, vocab) = toy(&mut rng);
        let contexts: Vec<Vec<TokenId>> = (0..1 + below(&mut rng, 6))
            .map(|_| (0..1 + below(&mut rng, 20)).map(|_| below(&mut rng, vocab.size() as usize) as TokenId).collect())
            .collect();
        let batch = PaddedBatch::left_padded(&contexts, vocab.pad_id()).map_err(|e| e.to_string())?;
        let masked = backend.next_logits_masked(&batch).map_err(|e| e.to_string())?;
        let plain = backend.next_logits(&contexts).map_err(|e| e.to_string())?;
        if masked != plain {
            return Err(format!("case {case}: masked batch differs from stripped contexts"));
        }
    }
    Ok(cases)
}

/// A block that is not a power of a shorter block and does not itself end
/// in a repeat, so one copy survives trimming untouched.
fn planted_block(rng: &mut Rng, len: usize) -> Vec<TokenId> {
    loop {
        let b: Vec<TokenId> = (0..len).map(|_| below(rng, 5) as TokenId).collect();
        let primitive = (1..len).all(|d| !len.is_multiple_of(d) || b.chunks(d).any(|c| c != &b[..d]));
        let ends_in_repeat =
            (1..=len / 2).any(|d| b[len - d..] == b[len - 2 * d..len - d]);
        if primitive && !ends_in_repeat {
            return b;
        }
    }
}

fn trim_suite() -> SuiteResult {
    let mut rng = Rng::new(0x5eed_0005);
    let cases = 200;
    for case in 0..cases {
        let b = 2 + below(&mut rng, 5);
        let m = 2 + below(&mut rng, 4);
        let block = planted_block(&mut rng, b);
        // the head ends with a token that cannot extend the repetition backwards
        let mut seq: Vec<TokenId> = (0..below(&mut rng, 4)).map(|_| 10 + below(&mut rng, 5) as TokenId).collect();
        seq.push(99);
        let head = seq.len();
        for _ in 0..m {
            seq.extend(&block);
        }
        let trimmed = trim_repeated_suffix(&seq, 2, 64).map_err(|e| e.to_string())?;
        if trimmed.len() != head + b || trimmed[head..] != block[..] {
            return Err(format!("case {case}: block {block:?} x{m} trimmed to {:?}", &trimmed[head..]));
        }
        if trim_repeated_suffix(&trimmed, 2, 64).map_err(|e| e.to_string())? != trimmed {
            return Err(format!("case {case}: trimming is not idempotent"));
        }
    }
    Ok(cases)
}

/// Runs the selected suites (all when `only` is `None`), printing one line each.
pub fn cmd_selftest(only: Option<&str>, fault: Option<Fault>) -> Exit {
    let chosen: Vec<&Suite> = SUITES.iter().filter(|s| only.is_none_or(|n| n == s.name)).collect();
    if chosen.is_empty() {
        let names: Vec<&str> = SUITES.iter().map(|s| s.name).collect();
        eprintln!("unknown suite '{}'; available: {}", only.unwrap_or_default(), names.join(", "));
        return Exit::Config;
    }
    if fault == Some(Fault::ReductionOrder) {
        inject_reduction_fault(true);
    }
    let mut failed = 0;
    for suite in chosen {
        match (suite.run)() {
            Ok(n) => println!("PASS {:<10} {n} cases  ({})", suite.name, suite.about),
            Err(e) => {
                failed += 1;
                println!("FAIL {:<10} {e}", suite.name);
            }
        }
    }
    inject_reduction_fault(false);
    if failed == 0 {
        Exit::Success
    } else {
        Exit::Partial
    }
}
