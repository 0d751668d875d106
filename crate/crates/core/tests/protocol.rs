use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use rsp_core::protocol::{
    replay, run_multi_round, Body, CheatStrategy, Flag, Message, MultiRoundConfig, ProtocolTranscript, RoundType, Session,
    SimulatedProver,
};

const TRIALS: usize = 10_000;

fn rate(strategy: Option<CheatStrategy>, round_type: RoundType, n: usize, width: u32, seed: u64) -> f64 {
    let mut prover = match strategy {
        Some(s) => SimulatedProver::cheating(s, seed),
        None => SimulatedProver::honest(seed),
    };
    let mut session = Session::new("stats", n, width, &mut prover);
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    let mut ok = 0;
    for _ in 0..TRIALS {
        let theta = rng.gen_range(0..2);
        ok += session.test_round_with(theta, round_type, &mut rng).unwrap().flag.is_ok() as usize;
    }
    ok as f64 / TRIALS as f64
}

fn assert_4sigma(observed: f64, expected: f64, label: &str) {
    let sigma = (expected * (1.0 - expected) / TRIALS as f64).sqrt();
    assert!(
        (observed - expected).abs() <= 4.0 * sigma.max(1e-12),
        "{label}: observed {observed}, expected {expected} (σ {sigma})"
    );
}

#[test]
fn hadamard_acceptance_per_strategy() {
    let n = 2;
    let base = 0.5f64.powi(n as i32);
    let cases = [
        (CheatStrategy::RandomAnswer, base),
        (CheatStrategy::WrongBasis, base),
        (CheatStrategy::ConstantV, base),
        (CheatStrategy::DelayedClassical, 0.5 * (1.0 + base)),
        (CheatStrategy::AlwaysWrong, 0.0),
    ];
    for (i, (s, expected)) in cases.into_iter().enumerate() {
        let r = rate(Some(s), RoundType::Hadamard, n, 3, 100 + i as u64);
        assert_4sigma(r, expected, s.name());
    }
    assert_eq!(rate(None, RoundType::Hadamard, n, 3, 7), 1.0);
}

#[test]
fn preimage_acceptance_per_strategy() {
    let (n, w) = (2usize, 4u32);
    let random = 0.5 * (2f64.powi(-((n as i32) * (w as i32 + 1))) + 2f64.powi(-((n as i32) * w as i32)));
    assert_4sigma(rate(Some(CheatStrategy::RandomAnswer), RoundType::Preimage, n, w, 1), random, "random_answer");
    for s in [CheatStrategy::WrongBasis, CheatStrategy::ConstantV, CheatStrategy::DelayedClassical] {
        assert_eq!(rate(Some(s), RoundType::Preimage, n, w, 2), 1.0, "{}", s.name());
    }
    assert_eq!(rate(Some(CheatStrategy::AlwaysWrong), RoundType::Preimage, n, w, 3), 0.0);
}

#[test]
fn honest_completeness_over_grid() {
    for n in 1..=8 {
        for m in [2, 4, 8] {
            let cfg = MultiRoundConfig { n, m, seed: (n * 10 + m) as u64, ..Default::default() };
            let res = run_multi_round(&cfg, &mut SimulatedProver::honest(cfg.seed)).unwrap();
            assert!(res.accepted, "n={n} M={m}");
            assert_eq!(res.failures(), 0);
        }
    }
}

#[test]
fn strict_mode_always_wrong_needs_both_segments_empty() {
    let m = 3;
    for seed in 0..60 {
        let cfg = MultiRoundConfig { n: 1, m, width: 2, seed, strict: true, ..Default::default() };
        let res = run_multi_round(&cfg, &mut SimulatedProver::cheating(CheatStrategy::AlwaysWrong, seed)).unwrap();
        assert_eq!(res.accepted, res.s == 0 && res.r == 1, "seed {seed}");
        if !res.accepted {
            assert_eq!(res.abort_block, Some(1));
        }
    }
}

#[test]
fn replay_reproduces_every_decision() {
    for (strategy, seed) in [(None, 1u64), (Some(CheatStrategy::RandomAnswer), 2), (Some(CheatStrategy::DelayedClassical), 3)] {
        let cfg = MultiRoundConfig { n: 3, m: 4, width: 3, seed, ..Default::default() };
        let mut p = match strategy {
            Some(s) => SimulatedProver::cheating(s, seed),
            None => SimulatedProver::honest(seed),
        };
        let res = run_multi_round(&cfg, &mut p).unwrap();
        let back = ProtocolTranscript::from_jsonl(&res.transcript.to_jsonl()).unwrap();
        let rep = replay(&back).unwrap();
        assert!(rep.is_consistent(), "{:?}", rep.mismatches);
        assert_eq!(rep.accepted_recomputed, res.accepted);
    }
}

#[test]
fn tampered_verdict_is_reported() {
    let cfg = MultiRoundConfig { n: 2, m: 4, width: 2, seed: 12, ..Default::default() };
    let mut res = run_multi_round(&cfg, &mut SimulatedProver::honest(12)).unwrap();
    let round = res
        .transcript
        .entries
        .iter_mut()
        .find_map(|e| match &mut e.msg {
            Body::Wire(Message::Verdict { flag }) => {
                *flag = Flag::FailHad;
                Some(e.round)
            }
            _ => None,
        })
        .unwrap();
    let rep = replay(&res.transcript).unwrap();
    assert!(rep.mismatches.iter().any(|m| m.round == round));
}

#[test]
fn truncated_transcript_is_a_parse_error() {
    let cfg = MultiRoundConfig { n: 2, m: 2, width: 2, seed: 5, ..Default::default() };
    let text = run_multi_round(&cfg, &mut SimulatedProver::honest(5)).unwrap().transcript.to_jsonl();
    let cut = &text[..text.len() / 2];
    let parsed = ProtocolTranscript::from_jsonl(cut);
    assert!(parsed.is_err() || replay(&parsed.unwrap()).is_err());
}
