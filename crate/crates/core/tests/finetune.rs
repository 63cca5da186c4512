mod common;

use common::oracles::{oracle_f1, random_tags};
use metatrain::finetune::{
    corpus_text, finetune, micro_f1, ner_corpus, read_results, FinetunePlan, FinetuneResult,
    NerCorpusSpec, Regime, Tag, TaggedCorpus,
};
use metatrain::model::{Backbone, ModelConfig};
use metatrain::smlmt::WhitespaceTokenizer;
use metatrain::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tags(s: &str) -> Vec<Tag> {
    s.split_whitespace().map(|t| t.parse().unwrap()).collect()
}

#[test]
fn micro_f1_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let n = rng.random_range(1..4);
        let lens: Vec<usize> = (0..n).map(|_| rng.random_range(1..7)).collect();
        let gold: Vec<Vec<Tag>> = lens.iter().map(|&l| random_tags(&mut rng, l)).collect();
        let pred: Vec<Vec<Tag>> = lens.iter().map(|&l| random_tags(&mut rng, l)).collect();
        assert_eq!(micro_f1(&gold, &pred).unwrap(), oracle_f1(&gold, &pred));
    }
}

#[test]
fn hand_counted_half_score() {
    let gold = vec![tags("B-PER O O O B-LOC")];
    let pred = vec![tags("B-PER O O O B-ORG")];
    let r = metatrain::finetune::f1_report(&gold, &pred).unwrap();
    assert_eq!(
        (r.micro.precision, r.micro.recall, r.micro.f1),
        (0.5, 0.5, 0.5)
    );
    assert_eq!(r.per_class["PER"].f1, 1.0);
    assert_eq!(r.per_class["LOC"].f1, 0.0);
    assert_eq!(r.per_class["ORG"].f1, 0.0);
}

proptest! {
    #[test]
    fn f1_is_symmetric(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lens: Vec<usize> = (0..3).map(|_| rng.random_range(1..8)).collect();
        let gold: Vec<Vec<Tag>> = lens.iter().map(|&l| random_tags(&mut rng, l)).collect();
        let pred: Vec<Vec<Tag>> = lens.iter().map(|&l| random_tags(&mut rng, l)).collect();
        let ab = micro_f1(&gold, &pred).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, micro_f1(&pred, &gold).unwrap());
    }
}

fn separable() -> TaggedCorpus {
    ner_corpus(&NerCorpusSpec {
        n_train: 150,
        n_dev: 40,
        n_test: 40,
        min_len: 4,
        max_len: 8,
        separable: true,
        n_topics: 6,
        words_per_topic: 4,
        ..NerCorpusSpec::default()
    })
    .unwrap()
}

fn tiny_backbone(tok: &WhitespaceTokenizer, seed: u64) -> Backbone {
    let cfg = ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        n_kv_heads: 1,
        ffn_hidden: 32,
        vocab_size: tok.vocab().len(),
        seq_len: 16,
        ..ModelConfig::default()
    };
    Backbone::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn synthetic_corpus_properties() {
    let c = separable();
    assert_eq!(c, separable());
    c.validate().unwrap();
    assert_eq!(c.classes(), vec!["LOC", "ORG", "PER"]);
    let mut class_of = std::collections::HashMap::new();
    for s in c.splits().into_iter().flatten() {
        for (w, t) in s.tokens.iter().zip(&s.tags) {
            assert!(!matches!(t, Tag::I(_)));
            assert_eq!(
                *class_of.entry(w.clone()).or_insert(t.class()),
                t.class(),
                "{w}"
            );
        }
    }
    let loose = ner_corpus(&NerCorpusSpec::default()).unwrap();
    assert!(loose
        .train
        .iter()
        .any(|s| s.tags.iter().any(|t| matches!(t, Tag::I(_)))));
    let dir = tempfile::tempdir().unwrap();
    loose.save(dir.path()).unwrap();
    assert_eq!(TaggedCorpus::load(dir.path()).unwrap(), loose);
}

#[test]
fn head_only_freezes_backbone_and_full_moves_it() {
    let c = separable();
    let tok = WhitespaceTokenizer::fit(&corpus_text(&c), None).unwrap();
    let b = tiny_backbone(&tok, 1);
    let before = b.params.fingerprint();
    let plan = FinetunePlan {
        max_epochs: 2,
        patience: 5,
        lr: 1e-3,
        ..FinetunePlan::default()
    };
    let head = finetune(&b, &tok, &c, &plan).unwrap();
    assert_eq!(head.backbone.params.fingerprint(), before);
    assert_eq!(head.backbone_grad_sq, 0.0);
    assert_eq!(head.trace.len(), 2);
    let rec = FinetuneResult::new("sep", &plan, &b, &head);
    assert_eq!(rec.freeze_check, Some(true));

    let full = finetune(
        &b,
        &tok,
        &c,
        &FinetunePlan {
            regime: Regime::Full,
            ..plan.clone()
        },
    )
    .unwrap();
    assert_ne!(full.backbone.params.fingerprint(), before);
    assert!(full.backbone_grad_sq > 0.0);

    let log = tempfile::NamedTempFile::new().unwrap();
    rec.append(log.path()).unwrap();
    FinetuneResult::new("sep", &FinetunePlan { seed: 1, ..plan }, &b, &head)
        .append(log.path())
        .unwrap();
    let back = read_results(log.path()).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[0], rec);
    assert_ne!(back[0].seed, back[1].seed);
}

#[test]
fn full_finetune_solves_separable_corpus() {
    let c = separable();
    let tok = WhitespaceTokenizer::fit(&corpus_text(&c), None).unwrap();
    let b = tiny_backbone(&tok, 2);
    let plan = FinetunePlan {
        regime: Regime::Full,
        lr: 1e-2,
        patience: 10,
        ..FinetunePlan::default()
    };
    let out = finetune(&b, &tok, &c, &plan).unwrap();
    assert!(out.trace.len() <= 10);
    assert_eq!(out.dev.micro.f1, 1.0, "{:?}", out.trace);
    let best = out.trace.iter().map(|e| e.dev_f1).fold(0.0, f64::max);
    assert_eq!(out.trace[out.best_epoch - 1].dev_f1, best);
}

#[test]
fn zero_patience_runs_one_epoch_and_empty_split_errors() {
    let c = separable();
    let tok = WhitespaceTokenizer::fit(&corpus_text(&c), None).unwrap();
    let b = tiny_backbone(&tok, 3);
    let out = finetune(
        &b,
        &tok,
        &c,
        &FinetunePlan {
            patience: 0,
            ..FinetunePlan::default()
        },
    )
    .unwrap();
    assert_eq!(out.trace.len(), 1);
    assert_eq!(out.best_epoch, 1);
    let mut empty = c.clone();
    empty.dev.clear();
    assert!(matches!(
        finetune(&b, &tok, &empty, &FinetunePlan::default()),
        Err(Error::Input(_))
    ));
    assert!("sideways".parse::<Regime>().is_err());
}
