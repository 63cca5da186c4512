//! Small end-to-end fixtures on the synthetic topic corpus.

use metatrain::model::ModelConfig;
use metatrain::smlmt::{FrequencyBand, Tokenizer, WhitespaceTokenizer};
use metatrain::synth::{toy_corpus, ToyCorpusSpec};
use metatrain::trainer::{MetaPlan, TrainData, TrainPlan};

pub struct Toy {
    pub data: TrainData,
    pub model: ModelConfig,
    pub plan: TrainPlan,
    pub meta: MetaPlan,
}

/// The reference toy setting: d = 32, 2 layers, vocab ~ 500, N = 8, K = 2, Q = 1, T = 5.
pub fn toy(corpus_seed: u64, run_seed: u64) -> Toy {
    let text = toy_corpus(&ToyCorpusSpec {
        seed: corpus_seed,
        ..Default::default()
    });
    let tok = WhitespaceTokenizer::fit(&text, None).unwrap();
    let model = ModelConfig {
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        n_kv_heads: 2,
        ffn_hidden: 128,
        vocab_size: tok.vocab_size(),
        seq_len: 32,
        ..ModelConfig::default()
    };
    let meta = MetaPlan {
        n_ways: 8,
        k_shots: 2,
        q_queries: 1,
        ..MetaPlan::default()
    };
    let band = FrequencyBand {
        exclude_top: meta.exclude_top,
        min_sentences: meta.k_shots + meta.q_queries,
        max_sentence_len: Some(model.seq_len),
    };
    let data = TrainData::from_text(&text, &tok, 0.05, &band).unwrap();
    let plan = TrainPlan {
        hybrid_ratio: 0.5,
        inner_steps: 5,
        inner_lr: 0.1,
        lr: 3e-3,
        warmup_steps: 30,
        accumulation_steps: 1,
        batch_size: 8,
        max_steps: 300,
        checkpoint_every: 100,
        log_every: 1,
        eval_every: 50,
        seed: run_seed,
        ..TrainPlan::default()
    };
    Toy {
        data,
        model,
        plan,
        meta,
    }
}

/// A much smaller model on the same corpus for fast property tests.
pub fn tiny(run_seed: u64) -> Toy {
    let mut t = toy(0, run_seed);
    t.model.d_model = 8;
    t.model.n_heads = 2;
    t.model.n_kv_heads = 1;
    t.model.ffn_hidden = 16;
    t.model.seq_len = 12;
    t.meta.n_ways = 3;
    t.meta.head_hidden = 8;
    t.plan.batch_size = 4;
    t.plan.inner_steps = 3;
    t
}
