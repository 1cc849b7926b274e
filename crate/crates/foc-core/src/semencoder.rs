//! Semantic encoder: tokenization of pseudo-code, mean-pooled learned token
//! embeddings, and binary–source contrastive training.
//!
//! This realizes the encoder contract (code in, `d_sem` vector out) at desk
//! scale; a stronger encoder can be substituted behind the same interface.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FocError, Result};
use crate::optimizer::{AdamW, Moments};
use crate::util::{derive_seed, fnv1a64};

/// Maximum number of token indices produced for one function.
pub const MAX_TOKENS: usize = 1024;
/// Embedding row reserved for padding; kept all-zero and never pooled.
pub const PAD_ROW: usize = 0;

pub const DEFAULT_VOCAB_SIZE: usize = 8192;
pub const DEFAULT_OOV_BUCKETS: usize = 1024;
pub const DEFAULT_D_SEM: usize = 256;

/// Splits code into surface tokens: identifiers are broken on underscores and
/// camelCase humps, punctuation characters become single-char tokens, and
/// everything is lowercased afterwards.
pub fn split_tokens(code: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, tokens: &mut Vec<String>| {
        if !word.is_empty() {
            split_camel(word, tokens);
            word.clear();
        }
    };
    for c in code.chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else if c == '_' || c.is_whitespace() {
            flush(&mut word, &mut tokens);
        } else {
            flush(&mut word, &mut tokens);
            tokens.push(c.to_lowercase().to_string());
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

fn split_camel(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut start = 0;
    for i in 1..chars.len() {
        let prev = chars[i - 1];
        let cur = chars[i];
        let next_lower = chars.get(i + 1).map(|c| c.is_lowercase()).unwrap_or(false);
        let boundary = (cur.is_uppercase() && !prev.is_uppercase())
            || (cur.is_uppercase() && prev.is_uppercase() && next_lower);
        if boundary {
            out.push(chars[start..i].iter().collect::<String>().to_lowercase());
            start = i;
        }
    }
    out.push(chars[start..].iter().collect::<String>().to_lowercase());
}

/// Deterministic token-to-row mapping: an ordered vocabulary plus
/// hash-bucketed overflow rows for out-of-vocabulary tokens. Row 0 is the
/// padding row.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: std::collections::HashMap<String, usize>,
    oov_buckets: usize,
}

impl Tokenizer {
    pub fn new(vocab: Vec<String>, oov_buckets: usize) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Tokenizer {
            vocab,
            index,
            oov_buckets,
        }
    }

    /// Builds the vocabulary from texts: the `vocab_size` most frequent
    /// tokens, ties broken lexicographically.
    pub fn fit<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        vocab_size: usize,
        oov_buckets: usize,
    ) -> Self {
        let mut counts: std::collections::BTreeMap<String, u64> = std::collections::BTreeMap::new();
        for text in texts {
            for token in split_tokens(text) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let vocab = entries.into_iter().take(vocab_size).map(|(t, _)| t).collect();
        Self::new(vocab, oov_buckets)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn oov_buckets(&self) -> usize {
        self.oov_buckets
    }

    /// Total embedding rows: padding + vocabulary + overflow buckets.
    pub fn rows(&self) -> usize {
        1 + self.vocab.len() + self.oov_buckets
    }

    fn row_of(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) => 1 + i,
            None => {
                let bucket = if self.oov_buckets == 0 {
                    0
                } else {
                    (fnv1a64(token.as_bytes()) % self.oov_buckets as u64) as usize
                };
                1 + self.vocab.len() + bucket
            }
        }
    }

    /// Token indices for a code string, truncated to [`MAX_TOKENS`].
    pub fn tokenize(&self, code: &str) -> Vec<usize> {
        split_tokens(code)
            .into_iter()
            .take(MAX_TOKENS)
            .map(|t| self.row_of(&t))
            .collect()
    }
}

/// Mean-pooling token-embedding encoder.
#[derive(Debug, Clone)]
pub struct SemEncoder {
    pub tokenizer: Tokenizer,
    /// `rows x d_sem`; row [`PAD_ROW`] is all-zero.
    pub embeddings: Array2<f64>,
    pub frozen: bool,
}

/// Xavier-uniform fill in +/- sqrt(6 / (fan_in + fan_out)).
pub(crate) fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data")
}

impl SemEncoder {
    /// Fresh encoder with unit-variance uniform rows (+/- sqrt(3)) and a zero
    /// padding row. A token row is an activation, not a weight matrix: scaling
    /// it down by matrix fan-in would shrink mean-pooled vectors far below
    /// the raw-count features they are fused with.
    pub fn init(tokenizer: Tokenizer, d_sem: usize, rng: &mut impl Rng) -> Self {
        let rows = tokenizer.rows();
        let bound = 3.0f64.sqrt();
        let data: Vec<f64> = (0..rows * d_sem)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let mut embeddings = Array2::from_shape_vec((rows, d_sem), data).expect("shape matches");
        embeddings.row_mut(PAD_ROW).fill(0.0);
        SemEncoder {
            tokenizer,
            embeddings,
            frozen: false,
        }
    }

    pub fn d_sem(&self) -> usize {
        self.embeddings.ncols()
    }

    /// Mean of the token-embedding rows; the zero vector for empty input.
    pub fn encode(&self, code: &str) -> Array1<f64> {
        self.encode_ids(&self.tokenizer.tokenize(code))
    }

    pub fn encode_ids(&self, ids: &[usize]) -> Array1<f64> {
        let mut pooled = Array1::zeros(self.d_sem());
        if ids.is_empty() {
            return pooled;
        }
        for &id in ids {
            pooled += &self.embeddings.row(id);
        }
        pooled / ids.len() as f64
    }
}

fn norm(v: &ArrayView1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Binary–source contrastive loss: `1 - cos(a, b)`. Always in `[0, 2]`;
/// errors on a zero vector, where the cosine is undefined.
pub fn contrastive_loss(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(FocError::invalid("contrastive loss is undefined for a zero vector"));
    }
    let cos = a.dot(b) / (na * nb);
    let loss = 1.0 - cos;
    debug_assert!(loss > -1e-9, "cosine exceeded 1: loss = {loss}");
    Ok(loss.max(0.0))
}

/// Loss plus analytic gradients with respect to both inputs.
pub fn contrastive_loss_grad(
    a: &ArrayView1<f64>,
    b: &ArrayView1<f64>,
) -> Result<(f64, Array1<f64>, Array1<f64>)> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(FocError::invalid("contrastive loss is undefined for a zero vector"));
    }
    let cos = a.dot(b) / (na * nb);
    let grad_a = a * (cos / (na * na)) - &(b / (na * nb));
    let grad_b = b * (cos / (nb * nb)) - &(a / (na * nb));
    Ok(((1.0 - cos).max(0.0), grad_a, grad_b))
}

/// Settings for contrastive encoder training.
#[derive(Debug, Clone)]
pub struct EncoderTrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            learning_rate: 1e-3,
            steps: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Outcome of a contrastive training run over (source, binary) code pairs.
#[derive(Debug, Clone)]
pub struct EncoderTrainReport {
    /// Mean loss over all pairs before training.
    pub initial_loss: f64,
    /// Mean loss over all pairs after training.
    pub final_loss: f64,
    /// Whether the final loss is strictly lower than the initial loss.
    pub improved: bool,
    /// Per-step mean batch loss.
    pub trace: Vec<f64>,
}

/// Trains the encoder to pull each (source, binary) pair together in
/// embedding space by gradient descent on the mean contrastive loss.
pub fn train_contrastive(
    pairs: &[(String, String)],
    encoder: &mut SemEncoder,
    config: &EncoderTrainConfig,
) -> Result<EncoderTrainReport> {
    if encoder.frozen {
        return Err(FocError::model("encoder is frozen; unfreeze it before training"));
    }
    if pairs.is_empty() {
        return Err(FocError::invalid("no training pairs supplied"));
    }

    let tokenized: Vec<(Vec<usize>, Vec<usize>)> = pairs
        .iter()
        .map(|(src, bin)| (encoder.tokenizer.tokenize(src), encoder.tokenizer.tokenize(bin)))
        .collect();
    for (i, (src, bin)) in tokenized.iter().enumerate() {
        if src.is_empty() || bin.is_empty() {
            return Err(FocError::invalid(format!(
                "pair {i}: empty token stream; cosine loss is undefined"
            )));
        }
    }

    let mean_loss = |enc: &SemEncoder| -> Result<f64> {
        let mut total = 0.0;
        for (src, bin) in &tokenized {
            let u = enc.encode_ids(src);
            let v = enc.encode_ids(bin);
            total += contrastive_loss(&u.view(), &v.view())?;
        }
        Ok(total / tokenized.len() as f64)
    };

    let initial_loss = mean_loss(encoder)?;
    let optimizer = AdamW::new(config.learning_rate, 0.0);
    let mut moments = Moments::zeros(encoder.embeddings.len());
    let mut grad = Array2::<f64>::zeros(encoder.embeddings.raw_dim());
    let mut trace = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, step as u64));
        let take = config.batch_size.min(tokenized.len());
        let batch = rand::seq::index::sample(&mut rng, tokenized.len(), take);

        grad.fill(0.0);
        let mut batch_loss = 0.0;
        for idx in batch.iter() {
            let (src, bin) = &tokenized[idx];
            let u = encoder.encode_ids(src);
            let v = encoder.encode_ids(bin);
            let (loss, du, dv) = contrastive_loss_grad(&u.view(), &v.view())?;
            batch_loss += loss;
            let scale = 1.0 / take as f64;
            for &row in src {
                let contrib = &du * (scale / src.len() as f64);
                let mut target = grad.row_mut(row);
                target += &contrib;
            }
            for &row in bin {
                let contrib = &dv * (scale / bin.len() as f64);
                let mut target = grad.row_mut(row);
                target += &contrib;
            }
        }
        grad.row_mut(PAD_ROW).fill(0.0);
        optimizer.update(
            step as u64 + 1,
            encoder.embeddings.as_slice_mut().expect("contiguous"),
            grad.as_slice().expect("contiguous"),
            &mut moments,
        );
        encoder.embeddings.row_mut(PAD_ROW).fill(0.0);
        trace.push(batch_loss / take as f64);
    }

    let final_loss = mean_loss(encoder)?;
    Ok(EncoderTrainReport {
        initial_loss,
        final_loss,
        improved: final_loss < initial_loss,
        trace,
    })
}
