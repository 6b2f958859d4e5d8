//! End-to-end tagger behavior: training runs, frozen embeddings,
//! checkpoint round-trips, and gradient routing.

use glyphtag::corpus::{parse_conll_str, TagScheme};
use glyphtag::encoders::EncoderParams;
use glyphtag::eval::score_f1;
use glyphtag::ndtensor::{Graph, NormMode, ParamGroup};
use glyphtag::tagger::{
    char_representation, corpus_loss, emission_scores, load_tagger, load_tagger_checked,
    predict_corpus, save_tagger, train, CheckpointError, ContextEmbeddings, EncoderChoice,
    TaggerModel, TrainConfig,
};
use glyphtag::testkit::{
    random_static_table, synthetic_dictionary, synthetic_ner_corpus, synthetic_vocab,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(encoder: EncoderChoice) -> TrainConfig {
    TrainConfig {
        epochs: 5,
        hidden: 16,
        seed: 9,
        encoder,
        ..TrainConfig::default()
    }
}

fn static_embeddings(dim: usize) -> ContextEmbeddings {
    ContextEmbeddings::Static { dim, table: random_static_table(3, dim, &synthetic_vocab()) }
}

#[test]
fn training_reduces_loss_without_an_encoder() {
    let corpus = synthetic_ner_corpus(5, 8);
    let embeddings = static_embeddings(8);
    let config = small_config(EncoderChoice::None);
    let outcome = train(&corpus, &embeddings, None, None, None, &config).unwrap();
    assert_eq!(outcome.metrics.len(), 5);
    let first = outcome.metrics.first().unwrap().train_loss;
    let last = outcome.metrics.last().unwrap().train_loss;
    assert!(last < first, "loss went {first} -> {last}");
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let corpus = synthetic_ner_corpus(5, 4);
    let embeddings = static_embeddings(8);
    let config = TrainConfig { epochs: 0, ..small_config(EncoderChoice::None) };
    let outcome = train(&corpus, &embeddings, None, None, None, &config).unwrap();
    assert!(outcome.metrics.is_empty());

    // A fresh init under the same seed is bitwise identical.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let fresh = TaggerModel::init(
        &mut rng,
        EncoderChoice::None,
        None,
        8,
        config.hidden,
        config.lstm_dropout,
        config.glynn_dropout,
        corpus.tag_set.clone(),
        corpus.scheme,
    );
    for (a, b) in outcome.model.params().iter().zip(fresh.params()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value.data(), b.value.data(), "{} changed", a.name);
    }
}

#[test]
fn training_is_deterministic_under_a_seed() {
    let corpus = synthetic_ner_corpus(5, 6);
    let embeddings = static_embeddings(8);
    let config = small_config(EncoderChoice::None);
    let a = train(&corpus, &embeddings, None, None, None, &config).unwrap();
    let b = train(&corpus, &embeddings, None, None, None, &config).unwrap();
    for (ma, mb) in a.metrics.iter().zip(&b.metrics) {
        assert_eq!(ma.train_loss, mb.train_loss);
    }
    for (pa, pb) in a.model.params().iter().zip(b.model.params()) {
        assert_eq!(pa.value.data(), pb.value.data());
    }
}

#[test]
fn context_embeddings_stay_bitwise_frozen() {
    let corpus = synthetic_ner_corpus(5, 6);
    let embeddings = static_embeddings(8);
    let before = embeddings.byte_fingerprint();
    let dict = synthetic_dictionary(&synthetic_vocab());
    let config = TrainConfig { epochs: 2, ..small_config(EncoderChoice::Glynn) };
    train(&corpus, &embeddings, Some((&corpus, &embeddings)), Some(&dict), None, &config).unwrap();
    assert_eq!(embeddings.byte_fingerprint(), before);
}

#[test]
fn gradients_reach_the_encoder_but_not_the_context() {
    let corpus = synthetic_ner_corpus(7, 4);
    let embeddings = static_embeddings(8);
    let dict = synthetic_dictionary(&synthetic_vocab());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = TaggerModel::init(
        &mut rng,
        EncoderChoice::Glynn,
        None,
        8,
        16,
        0.0,
        (0.0, 0.0),
        corpus.tag_set.clone(),
        corpus.scheme,
    );

    let sentence = &corpus.sentences[0];
    let gold: Vec<usize> =
        sentence.tags.iter().map(|t| model.tag_index(t).unwrap()).collect();
    let mut g = Graph::new();
    let rep = char_representation(
        &mut g,
        &mut model,
        &sentence.chars,
        0,
        &embeddings,
        Some(&dict),
        NormMode::Infer,
        &mut rng,
    )
    .unwrap();
    let emissions = emission_scores(&mut g, &model, rep, NormMode::Infer, &mut rng).unwrap();
    let trans = g.param(&model.crf.transition);
    let nll =
        glyphtag::tagger::crf_nll_graph(&mut g, emissions, trans, &gold, model.crf.num_tags)
            .unwrap();
    g.backward(nll).unwrap();
    model.zero_grads();
    model.accumulate_grads(&g);

    let Some(EncoderParams::Glynn(_)) = &model.encoder else { panic!("expected glynn") };
    let encoder_grad: f64 = model
        .params()
        .iter()
        .filter(|p| p.name.starts_with("glynn."))
        .map(|p| p.grad.l2_norm())
        .sum();
    assert!(encoder_grad > 0.0, "no gradient reached the glyph encoder");
    // Context embeddings are graph constants: no parameter entry exists.
    assert!(g.param_grads().all(|(name, _)| !name.contains("context")));
}

#[test]
fn early_stopping_can_end_before_epochs() {
    let corpus = synthetic_ner_corpus(5, 4);
    let embeddings = static_embeddings(8);
    let config = TrainConfig {
        epochs: 40,
        early_stop_patience: Some(2),
        ..small_config(EncoderChoice::None)
    };
    let outcome = train(&corpus, &embeddings, None, None, None, &config).unwrap();
    assert!(outcome.metrics.len() <= 40);
    if outcome.stopped_early {
        assert!(outcome.metrics.len() < 40);
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions_bitwise() {
    let corpus = synthetic_ner_corpus(11, 6);
    let embeddings = static_embeddings(8);
    let dict = synthetic_dictionary(&synthetic_vocab());
    let config = TrainConfig { epochs: 2, ..small_config(EncoderChoice::Glynn) };
    let outcome =
        train(&corpus, &embeddings, None, Some(&dict), None, &config).unwrap();
    let mut model = outcome.model;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.gtck");
    save_tagger(&path, &model, &[("seed".into(), "9".into())]).unwrap();
    let (mut loaded, run_config) = load_tagger(&path).unwrap();
    assert_eq!(run_config.get("run.seed").map(String::as_str), Some("9"));

    let before = predict_corpus(&mut model, &corpus, &embeddings, Some(&dict)).unwrap();
    let after = predict_corpus(&mut loaded, &corpus, &embeddings, Some(&dict)).unwrap();
    assert_eq!(before, after);

    let loss_a = corpus_loss(&mut model, &corpus, &embeddings, Some(&dict)).unwrap();
    let loss_b = corpus_loss(&mut loaded, &corpus, &embeddings, Some(&dict)).unwrap();
    assert_eq!(loss_a.to_bits(), loss_b.to_bits());
}

#[test]
fn checkpoint_rejects_truncation_and_tag_mismatch() {
    let corpus = synthetic_ner_corpus(3, 4);
    let embeddings = static_embeddings(8);
    let config = TrainConfig { epochs: 1, ..small_config(EncoderChoice::None) };
    let outcome = train(&corpus, &embeddings, None, None, None, &config).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.gtck");
    save_tagger(&path, &outcome.model, &[]).unwrap();

    // Truncated file.
    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.gtck");
    std::fs::write(&cut, &bytes[..bytes.len() - 17]).unwrap();
    assert!(matches!(load_tagger(&cut), Err(CheckpointError::Corrupt(_))));

    // Tag set mismatch.
    let other_tags = vec!["B-X".to_string(), "O".to_string()];
    assert!(matches!(
        load_tagger_checked(&path, &other_tags),
        Err(CheckpointError::TagSetMismatch { .. })
    ));
}

#[test]
fn dev_tracking_keeps_the_best_snapshot() {
    let corpus = synthetic_ner_corpus(13, 8);
    let embeddings = static_embeddings(8);
    let config = TrainConfig { epochs: 4, ..small_config(EncoderChoice::None) };
    let outcome =
        train(&corpus, &embeddings, Some((&corpus, &embeddings)), None, None, &config).unwrap();
    let best = outcome.best_epoch.expect("dev runs track a best epoch");
    let best_f1 = outcome.metrics[best - 1].dev_f1.unwrap();
    for m in &outcome.metrics {
        assert!(m.dev_f1.unwrap() <= best_f1 + 1e-12);
    }
    // The returned model scores exactly the recorded best dev F1.
    let mut model = outcome.model;
    let predicted = predict_corpus(&mut model, &corpus, &embeddings, None).unwrap();
    let gold: Vec<Vec<String>> = corpus.sentences.iter().map(|s| s.tags.clone()).collect();
    let report = score_f1(&gold, &predicted, corpus.scheme).unwrap();
    assert!((report.overall.f1() - best_f1).abs() < 1e-12);
}

#[test]
fn predicted_tag_strings_come_from_the_training_tag_set() {
    let corpus = synthetic_ner_corpus(2, 5);
    let embeddings = static_embeddings(8);
    let config = TrainConfig { epochs: 1, ..small_config(EncoderChoice::None) };
    let outcome = train(&corpus, &embeddings, None, None, None, &config).unwrap();
    let mut model = outcome.model;
    let predicted = predict_corpus(&mut model, &corpus, &embeddings, None).unwrap();
    for (tags, sentence) in predicted.iter().zip(&corpus.sentences) {
        assert_eq!(tags.len(), sentence.chars.len());
        for t in tags {
            assert!(corpus.tag_set.contains(t), "foreign tag {t}");
        }
    }
}

#[test]
fn shared_characters_get_identical_glyph_vectors_in_infer_mode() {
    let embeddings = static_embeddings(16);
    let dict = synthetic_dictionary(&synthetic_vocab());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = TaggerModel::init(
        &mut rng,
        EncoderChoice::Strided,
        None,
        16,
        8,
        0.0,
        (0.0, 0.0),
        vec!["O".into()],
        TagScheme::Iob,
    );
    // dim_ctx 16 + strided 64.
    assert_eq!(model.rep_dim(), 80);

    let shared = '\u{5F20}';
    let a = vec![shared, '\u{7684}'];
    let b = vec!['\u{4EAC}', shared, '\u{662F}'];
    let mut rows = |chars: &[char]| {
        let mut g = Graph::new();
        let rep = char_representation(
            &mut g,
            &mut model,
            chars,
            0,
            &embeddings,
            Some(&dict),
            NormMode::Infer,
            &mut rng,
        )
        .unwrap();
        let v = g.value(rep);
        let d = v.shape()[1];
        (0..chars.len())
            .map(|t| v.data()[t * d + 16..(t + 1) * d].to_vec())
            .collect::<Vec<_>>()
    };
    let rows_a = rows(&a);
    let rows_b = rows(&b);
    assert_eq!(rows_a[0], rows_b[1], "glyph sub-vectors differ for the shared character");
    assert_ne!(rows_a[1], rows_b[0], "distinct characters should differ");
}

#[test]
fn contextual_embeddings_align_by_sentence_id() {
    let text = "\u{5F20}\tB-PER\n\u{7684}\tO\n\n\u{4EAC}\tB-LOC\n";
    let corpus = parse_conll_str(text, TagScheme::Iob).unwrap();
    let sentences = vec![
        vec![vec![0.5f32; 4], vec![-0.5f32; 4]],
        vec![vec![0.25f32; 4]],
    ];
    let embeddings = ContextEmbeddings::Contextual { dim: 4, sentences };
    let config = TrainConfig { epochs: 1, ..small_config(EncoderChoice::None) };
    let outcome = train(&corpus, &embeddings, None, None, None, &config).unwrap();
    let mut model = outcome.model;
    let predicted = predict_corpus(&mut model, &corpus, &embeddings, None).unwrap();
    assert_eq!(predicted.len(), 2);
}
