//! Downstream sequence labelling: BIO corpora, span-level F1 and a linear
//! token classifier trained on a frozen or trainable backbone.

mod bio;
mod conll;
mod synth;
mod train;

pub use bio::{f1_report, micro_f1, repair, spans, F1Report, Score, Span, Tag};
pub use conll::{
    format_conll, parse_conll, read_conll, write_conll, LabelSet, TaggedCorpus, TaggedSentence,
    SPLITS,
};
pub use synth::{corpus_text, ner_corpus, NerCorpusSpec, CLASSES};
pub use train::{
    evaluate, finetune, predict, read_results, EpochRecord, FinetuneOutcome, FinetunePlan,
    FinetuneResult, Regime, TokenClassifier, CLASSIFIER_BIAS, CLASSIFIER_WEIGHT,
};
