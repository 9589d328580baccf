use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rationale_core::autodiff::{Graph, Tensor};
use rationale_core::data::{build_vocab, Dataset, Document};
use rationale_core::encoder::{self, EncoderConfig, HeadReduction};
use rationale_core::heads::{self, loss_ranked, loss_weighted, ranked_partition, top_k_count, HeadConfig};
use rationale_core::model::{EncoderPath, Model, ModelConfig, ModelVariant};

fn random_doc(rng: &mut ChaCha8Rng, id: &str, sentence_lens: &[usize], label: u8) -> Document {
    let sentences: Vec<Vec<String>> = sentence_lens
        .iter()
        .map(|&n| (0..n).map(|_| format!("t{}", rng.gen_range(0..12))).collect())
        .collect();
    let token_labels = sentences
        .iter()
        .map(|s| s.iter().map(|_| u8::from(rng.gen_bool(0.2))).collect())
        .collect();
    Document {
        doc_id: id.into(),
        sentences,
        doc_label: label,
        token_labels: Some(token_labels),
    }
}

fn tiny_model(variant: ModelVariant, docs: &[Document], window: usize, seed: u64) -> Model {
    let ds = Dataset::new("t", None, docs.to_vec());
    let vocab = build_vocab(&ds, 100).unwrap();
    let cfg = ModelConfig {
        variant,
        encoder: EncoderConfig {
            hidden: 8,
            n_layers: 2,
            n_heads: 2,
            ff_width: 8,
            max_sentence_len: 16,
            window,
            use_positional: true,
        },
        head: HeadConfig {
            score_hidden: 8,
            doc_hidden: 8,
            k: 30.0,
            ..Default::default()
        },
    };
    Model::init(cfg, vocab, seed).unwrap()
}

#[test]
fn every_variant_passes_a_full_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for variant in ModelVariant::ALL {
        for label in [0u8, 1] {
            let doc = random_doc(&mut rng, "g", &[5, 5, 5], label);
            let model = tiny_model(variant, std::slice::from_ref(&doc), 5, 7);
            let check = model.gradient_check(&doc, 1e-5, 1e-6).unwrap();
            assert!(check.checked > 1000);
            assert!(
                check.max_rel_error < 1e-4,
                "{variant} label {label}: {} at {}",
                check.max_rel_error,
                check.worst_param
            );
        }
    }
}

#[test]
fn wide_window_matches_dense_full_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..20 {
        let lens: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..8)).collect();
        let doc = random_doc(&mut rng, "w", &lens, (i % 2) as u8);
        let n = doc.n_tokens() + 1;
        let model = tiny_model(
            ModelVariant::WeightedMonolithic,
            std::slice::from_ref(&doc),
            2 * n + 1,
            i,
        );
        let (fused, _) = model.predict_with(&doc, EncoderPath::Fused).unwrap();
        let (dense, _) = model.predict_with(&doc, EncoderPath::DenseFull).unwrap();
        assert!((fused.y_hat - dense.y_hat).abs() < 1e-9);
        for (a, b) in fused.token_scores.iter().zip(&dense.token_scores) {
            assert!((a - b).abs() < 1e-9);
        }
        let cls = model.cls_attention_scores(&doc, HeadReduction::Mean).unwrap();
        assert_eq!(cls.len(), doc.n_tokens());
        assert!((cls.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn narrow_window_differs_from_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let doc = random_doc(&mut rng, "n", &[10, 10], 1);
    let model = tiny_model(ModelVariant::WeightedMonolithic, std::slice::from_ref(&doc), 3, 1);
    let (fused, _) = model.predict_with(&doc, EncoderPath::Fused).unwrap();
    let (dense, _) = model.predict_with(&doc, EncoderPath::DenseFull).unwrap();
    assert!(fused
        .token_scores
        .iter()
        .zip(&dense.token_scores)
        .any(|(a, b)| (a - b).abs() > 1e-6));
}

#[test]
fn compositional_output_shapes_and_single_sentence_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let doc = random_doc(&mut rng, "c", &[4, 7, 2], 1);
    let model = tiny_model(ModelVariant::CompositionalRanked, std::slice::from_ref(&doc), 5, 2);
    let p = model.predict(&doc).unwrap();
    assert_eq!(p.token_scores.len(), 13);
    assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let single = Document {
        sentences: vec![doc.sentences[1].clone()],
        token_labels: None,
        ..doc.clone()
    };
    let via_model = model.predict(&single).unwrap();
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g, false);
    let ids = model.vocab.encode(&single.sentences[0]);
    let t = encoder::encode_sentence(&mut g, &bound, &model.config.encoder, &ids).unwrap();
    let (scores, _) = heads::token_scores(&mut g, t, &bound).unwrap();
    let (_, c) = heads::attention_pool(&mut g, t, scores, model.config.head.beta).unwrap();
    let y = heads::document_predict(&mut g, c, &bound).unwrap();
    assert_eq!(g.value(scores).data(), via_model.token_scores.as_slice());
    assert!((g.value(y).item() - via_model.y_hat).abs() < 1e-12);
}

#[test]
fn sentence_permutation_permutes_scores_and_keeps_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..10 {
        let doc = random_doc(&mut rng, "p", &[3, 5, 4], 0);
        let model = tiny_model(
            ModelVariant::CompositionalWeighted,
            std::slice::from_ref(&doc),
            5,
            trial,
        );
        let order = [2usize, 0, 1];
        let permuted = Document {
            sentences: order.iter().map(|&i| doc.sentences[i].clone()).collect(),
            token_labels: None,
            ..doc.clone()
        };
        let a = model.predict(&doc).unwrap();
        let b = model.predict(&permuted).unwrap();
        assert!((a.y_hat - b.y_hat).abs() < 1e-9);
        let offsets = [0usize, 3, 8];
        let mut expected = Vec::new();
        for &i in &order {
            let len = doc.sentences[i].len();
            expected.extend_from_slice(&a.token_scores[offsets[i]..offsets[i] + len]);
        }
        assert_eq!(expected, b.token_scores);
    }
}

#[test]
fn monolithic_scores_exclude_cls() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let doc = random_doc(&mut rng, "m", &[6, 3], 1);
    let model = tiny_model(ModelVariant::RankedMonolithic, std::slice::from_ref(&doc), 3, 0);
    assert_eq!(model.predict(&doc).unwrap().token_scores.len(), 9);
    let comp = tiny_model(ModelVariant::CompositionalRanked, std::slice::from_ref(&doc), 3, 0);
    assert!(comp.cls_attention_scores(&doc, HeadReduction::Mean).is_err());
}

#[test]
fn zero_head_scores_half_and_classifies_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let doc = random_doc(&mut rng, "z", &[4, 4], 1);
    let mut model = tiny_model(ModelVariant::CompositionalRanked, std::slice::from_ref(&doc), 3, 0);
    for (name, t) in heads::zero_params(&model.config.head, model.config.encoder.hidden).iter() {
        *model.params.get_mut(name).unwrap() = t.clone();
    }
    let p = model.predict(&doc).unwrap();
    assert!(p.token_scores.iter().all(|s| *s == 0.5));
    assert!(p.binary_rationale.iter().all(|b| *b == 0));
    assert_eq!(p.y_hat, 0.5);
}

#[test]
fn pooling_weights_are_normalised_over_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..1000 {
        let n = rng.gen_range(1..40);
        let h = rng.gen_range(1..6);
        let beta = rng.gen_range(0.1..5.0);
        let mut g = Graph::new();
        let t = g.constant(Tensor::new(vec![n, h], (0..n * h).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap());
        let s = g.constant(Tensor::vector((0..n).map(|_| rng.gen_range(1e-3..1.0)).collect()));
        let (a, _) = heads::attention_pool(&mut g, t, s, beta).unwrap();
        assert!((g.value(a).data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn beta_preserves_ranking(scores in prop::collection::vec(1e-3f64..1.0, 2..30), bi in 0usize..4) {
        let beta = [0.5, 1.0, 2.0, 4.0][bi];
        let mut g = Graph::new();
        let n = scores.len();
        let t = g.constant(Tensor::zeros(&[n, 1]));
        let s = g.constant(Tensor::vector(scores.clone()));
        let (a, _) = heads::attention_pool(&mut g, t, s, beta).unwrap();
        let a = g.value(a).data().to_vec();
        for i in 0..n {
            for j in 0..n {
                if scores[i] < scores[j] {
                    prop_assert!(a[i] <= a[j]);
                }
            }
        }
    }

    #[test]
    fn ranked_partition_is_consistent(scores in prop::collection::vec(0.0f64..1.0, 1..60), k in 0.5f64..100.0) {
        let (top, rest) = ranked_partition(&scores, k);
        let n = scores.len();
        prop_assert_eq!(top.len(), top_k_count(n, k));
        prop_assert_eq!(top.len(), ((k * n as f64 / 100.0).ceil() as usize).clamp(1, n));
        prop_assert_eq!(top.len() + rest.len(), n);
        let min_top = top.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        let max_rest = rest.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_top >= max_rest);
    }

    #[test]
    fn ranked_pair_equals_min_max_terms(a in 0.0f64..1.0, b in 0.0f64..1.0, gold in 0u8..2, y in 0.0f64..1.0) {
        let gold = f64::from(gold);
        let r = loss_ranked(y, &[a, b], gold, 1.0, 1.0, 50.0).unwrap();
        let w = loss_weighted(y, &[a, b], gold, 1.0).unwrap();
        prop_assert!((r.ranked.unwrap() - (w.l2 + w.l3)).abs() < 1e-12);
    }
}

#[test]
fn negative_documents_collapse_scores_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let n = 20;
    let mut scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..0.9)).collect();
    for _ in 0..5000 {
        let mut g = Graph::new();
        let y = g.constant(Tensor::scalar(0.0));
        let s = g.leaf(Tensor::vector(scores.clone()));
        let (l, _) = heads::loss_ranked_graph(&mut g, y, s, 0.0, 1.0, 1.0, 10.0).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad(s);
        for (x, d) in scores.iter_mut().zip(grad.data()) {
            *x = (*x - 0.5 * d).max(0.0);
        }
    }
    assert!(scores.iter().all(|s| *s < 1e-3), "{scores:?}");
}
