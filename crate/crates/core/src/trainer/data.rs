use rand::Rng;

use crate::error::{Error, Result};
use crate::smlmt::{split_sentences, CorpusIndex, FrequencyBand, Tokenizer, EOS};
use crate::TokenId;

/// Token streams and the episode index for one run.
#[derive(Clone, Debug)]
pub struct TrainData {
    /// Training sentences joined with end-of-sentence markers.
    pub train: Vec<TokenId>,
    pub eval: Vec<TokenId>,
    pub index: CorpusIndex,
}

impl TrainData {
    /// The final `eval_fraction` of sentences form the held-out split; the
    /// episode index only sees training sentences.
    pub fn from_text(
        text: &str,
        tokenizer: &impl Tokenizer,
        eval_fraction: f64,
        band: &FrequencyBand,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::config("data.eval_fraction", "must lie in [0, 1)"));
        }
        let sentences: Vec<Vec<TokenId>> = split_sentences(text)
            .iter()
            .map(|s| tokenizer.encode(s))
            .filter(|s| !s.is_empty())
            .collect();
        if sentences.is_empty() {
            return Err(Error::Input("corpus is empty after tokenization".into()));
        }
        let n_eval = (sentences.len() as f64 * eval_fraction).ceil() as usize;
        let split = sentences.len() - n_eval;
        let join = |ss: &[Vec<TokenId>]| {
            let mut out = Vec::new();
            for s in ss {
                out.extend_from_slice(s);
                out.push(EOS);
            }
            out
        };
        let train = join(&sentences[..split]);
        let eval = join(&sentences[split..]);
        let index = CorpusIndex::from_sentences(
            sentences[..split].to_vec(),
            |t| tokenizer.is_special(t),
            tokenizer.mask_id(),
            band,
        )?;
        Ok(Self { train, eval, index })
    }

    /// `count` random windows of `seq_len + 1` training tokens.
    pub fn sample_windows<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        count: usize,
        seq_len: usize,
    ) -> Result<Vec<Vec<TokenId>>> {
        let w = seq_len + 1;
        if self.train.len() < w {
            return Err(Error::CorpusTooSmall(format!(
                "training stream has {} tokens, a window needs {w}",
                self.train.len()
            )));
        }
        Ok((0..count)
            .map(|_| {
                let start = rng.random_range(0..=self.train.len() - w);
                self.train[start..start + w].to_vec()
            })
            .collect())
    }

    /// Up to `count` leading non-overlapping held-out windows.
    pub fn eval_windows(&self, count: usize, seq_len: usize) -> Vec<Vec<TokenId>> {
        self.eval
            .chunks_exact(seq_len + 1)
            .take(count)
            .map(<[TokenId]>::to_vec)
            .collect()
    }
}
