//! Subset-masked language-model episodes built from unlabeled text.

mod episode;
mod index;
mod tokenizer;

pub use episode::{
    assemble_episode, read_dump, sample_episode, task_entropy_bits, write_dump, Episode,
    EpisodeItem, EpisodeShape,
};
pub use index::{CorpusIndex, FrequencyBand};
pub use tokenizer::{split_sentences, Tokenizer, WhitespaceTokenizer, EOS, MASK, PAD, UNK};
