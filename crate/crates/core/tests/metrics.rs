use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rationale_core::metrics::{
    average_precision, doc_f1, fraction_above, mean_average_precision, paired_t_test, pooled_confusion,
    random_baseline_scores, token_prf, topk_threshold, ApMode,
};
use statrs::distribution::{ContinuousCDF, StudentsT};

fn rank_of(scores: &[f64], i: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
        .count()
}

fn brute_ap(scores: &[f64], gold: &[u8]) -> Option<f64> {
    let pos: Vec<usize> = (0..gold.len()).filter(|&i| gold[i] == 1).collect();
    if pos.is_empty() {
        return None;
    }
    let total: f64 = pos
        .iter()
        .map(|&i| {
            let r = rank_of(scores, i);
            let above = pos.iter().filter(|&&j| rank_of(scores, j) <= r).count();
            above as f64 / r as f64
        })
        .sum();
    Some(total / pos.len() as f64)
}

fn brute_prf(pred: &[u8], gold: &[u8], beta: f64) -> (f64, f64, f64) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (p, g) in pred.iter().zip(gold) {
        match (p, g) {
            (1, 1) => tp += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fn_ += 1.0,
            _ => {}
        }
    }
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let b2 = beta * beta;
    let f = if p + r > 0.0 {
        (1.0 + b2) * p * r / (b2 * p + r)
    } else {
        0.0
    };
    (p, r, f)
}

fn random_case(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<u8>>) {
    let docs = rng.gen_range(1..6);
    let mut scores = Vec::new();
    let mut gold = Vec::new();
    for _ in 0..docs {
        let n = rng.gen_range(1..15);
        // Coarse grid so ties occur.
        scores.push((0..n).map(|_| f64::from(rng.gen_range(0..6)) / 5.0).collect());
        gold.push((0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect());
    }
    (scores, gold)
}

#[test]
fn token_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let (scores, gold) = random_case(&mut rng);
        let preds: Vec<Vec<u8>> = scores
            .iter()
            .map(|s| s.iter().map(|&x| u8::from(x > 0.5)).collect())
            .collect();
        let flat_p: Vec<u8> = preds.iter().flatten().copied().collect();
        let flat_g: Vec<u8> = gold.iter().flatten().copied().collect();
        for beta in [1.0, 0.5] {
            let (p, r, f) = token_prf(&flat_p, &flat_g, beta).unwrap();
            let (bp, br, bf) = brute_prf(&flat_p, &flat_g, beta);
            assert!((p - bp).abs() < 1e-12 && (r - br).abs() < 1e-12 && (f - bf).abs() < 1e-12);
        }
        let c = pooled_confusion(&preds, &gold).unwrap();
        let (bp, br, bf) = brute_prf(&flat_p, &flat_g, 1.0);
        assert!((c.precision() - bp).abs() < 1e-12);
        assert!((c.recall() - br).abs() < 1e-12);
        assert!((c.f(1.0) - bf).abs() < 1e-12);
    }
}

#[test]
fn average_precision_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let (scores, gold) = random_case(&mut rng);
        let brute: Vec<f64> = scores.iter().zip(&gold).filter_map(|(s, g)| brute_ap(s, g)).collect();
        for (s, g) in scores.iter().zip(&gold) {
            let ours = average_precision(s, g).unwrap();
            match (ours, brute_ap(s, g)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                other => panic!("{other:?}"),
            }
        }
        let map = mean_average_precision(&scores, &gold, ApMode::PerDocument);
        if brute.is_empty() {
            assert!(map.is_err());
        } else {
            let expect = brute.iter().sum::<f64>() / brute.len() as f64;
            assert!((map.unwrap() - expect).abs() < 1e-12);
            let flat_s: Vec<f64> = scores.iter().flatten().copied().collect();
            let flat_g: Vec<u8> = gold.iter().flatten().copied().collect();
            let pooled = mean_average_precision(&scores, &gold, ApMode::Pooled).unwrap();
            assert!((pooled - brute_ap(&flat_s, &flat_g).unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn document_f1_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let n = rng.gen_range(1..30);
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let gold: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        let pred: Vec<u8> = y.iter().map(|&v| u8::from(v > 0.5)).collect();
        assert!((doc_f1(&y, &gold).unwrap() - brute_prf(&pred, &gold, 1.0).2).abs() < 1e-12);
    }
}

#[test]
fn f_half_penalises_high_recall_predictors() {
    let gold: Vec<u8> = (0..100).map(|i| u8::from(i % 10 == 0)).collect();
    let all = vec![1u8; 100];
    let (_, r, f1) = token_prf(&all, &gold, 1.0).unwrap();
    let (_, _, f05) = token_prf(&all, &gold, 0.5).unwrap();
    assert_eq!(r, 1.0);
    assert!(f05 < f1);
}

#[test]
fn topk_marks_expected_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..100 {
        let n = rng.gen_range(1..200);
        let k = rng.gen_range(0.5..100.0);
        let s: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let marked = topk_threshold(&s, k);
        let count = marked.iter().filter(|&&m| m == 1).count();
        assert_eq!(count, ((k * n as f64 / 100.0 - 1e-9).ceil() as usize).clamp(1, n));
        let min_in = (0..n)
            .filter(|&i| marked[i] == 1)
            .map(|i| s[i])
            .fold(f64::INFINITY, f64::min);
        let max_out = (0..n)
            .filter(|&i| marked[i] == 0)
            .map(|i| s[i])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_in >= max_out);
    }
}

#[test]
fn random_baseline_precision_tracks_evidence_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let lengths: Vec<usize> = (0..300).map(|_| rng.gen_range(50..150)).collect();
    let rate = 0.08;
    let gold: Vec<Vec<u8>> = lengths
        .iter()
        .map(|&n| (0..n).map(|_| u8::from(rng.gen_bool(rate))).collect())
        .collect();
    let scores = random_baseline_scores(&lengths, 9);
    let preds: Vec<Vec<u8>> = scores.iter().map(|s| topk_threshold(s, 8.0)).collect();
    let c = pooled_confusion(&preds, &gold).unwrap();
    let marked = (c.tp + c.fp) as f64;
    let se = (rate * (1.0 - rate) / marked).sqrt();
    assert!((c.precision() - rate).abs() < 2.0 * se, "{} vs {rate}", c.precision());
    assert!(fraction_above(&scores, 0.9) > 0.08 && fraction_above(&scores, 0.9) < 0.12);
}

#[test]
fn paired_t_test_matches_reference_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..20 {
        let n = rng.gen_range(3..15);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| x + rng.gen_range(-0.3..0.2)).collect();
        let (t, p) = paired_t_test(&a, &b).unwrap();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let t_ref = mean / (sd / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).unwrap();
        let p_ref = 2.0 * (1.0 - dist.cdf(t_ref.abs()));
        assert!((t - t_ref).abs() < 1e-9);
        assert!((p - p_ref).abs() < 1e-3, "{p} vs {p_ref}");
    }
}

proptest! {
    #[test]
    fn map_is_invariant_under_monotone_transforms(
        scores in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 1..20), 1..5),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gold: Vec<Vec<u8>> = scores.iter().map(|s| s.iter().map(|_| u8::from(rng.gen_bool(0.3))).collect()).collect();
        gold[0][0] = 1;
        let squashed: Vec<Vec<f64>> = scores.iter().map(|s| s.iter().map(|x| (3.0 * x).exp() + 2.0).collect()).collect();
        for mode in [ApMode::PerDocument, ApMode::Pooled] {
            let a = mean_average_precision(&scores, &gold, mode).unwrap();
            let b = mean_average_precision(&squashed, &gold, mode).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
