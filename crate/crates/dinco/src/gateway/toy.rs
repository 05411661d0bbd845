//! A tiny token-level language model with an enumerable output space.
//!
//! Each token is one character of a small vocabulary. The next-token
//! distribution for every prefix is a pseudo-random softmax derived from
//! the model seed and the prefix, so any sequence probability can be
//! recomputed exactly by the chain rule. Generation stops at an end token
//! or at `max_len` tokens. The end token never appears in completions or
//! alternative lists, but its probability is part of full-sequence
//! probabilities (so they sum to one over all sequences).

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use super::mock::last_user;
use super::{
    BeamHypothesis, ChatMessage, Completion, DecodeParams, GatewayError, Provider,
    ProviderCapabilities, TokenLogprob,
};
use crate::elicitation::templates::{TemplateId, TemplateSet};
use crate::seed::{mix, stream_rng};

#[derive(Clone, Debug)]
pub struct ToyLanguageModel {
    id: String,
    vocab: Vec<char>,
    max_len: usize,
    seed: u64,
    sharpness: f64,
    caps: ProviderCapabilities,
    templates: TemplateSet,
}

impl ToyLanguageModel {
    /// `vocab` must be distinct characters; `sharpness` scales the random
    /// logits (larger means peakier distributions).
    pub fn new(vocab: &str, max_len: usize, seed: u64) -> Self {
        let vocab: Vec<char> = vocab.chars().collect();
        assert!(!vocab.is_empty() && max_len >= 1);
        ToyLanguageModel {
            id: format!("toy-lm:{seed}"),
            vocab,
            max_len,
            seed,
            sharpness: 3.0,
            caps: ProviderCapabilities::FULL,
            templates: TemplateSet::default(),
        }
    }

    pub fn with_sharpness(mut self, sharpness: f64) -> Self {
        self.sharpness = sharpness;
        self
    }

    pub fn with_capabilities(mut self, caps: ProviderCapabilities) -> Self {
        self.caps = caps;
        self
    }

    pub fn vocab(&self) -> &[char] {
        &self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Index of the end token in [`next_distribution`](Self::next_distribution).
    pub fn end_index(&self) -> usize {
        self.vocab.len()
    }

    /// Next-token probabilities after `prefix` (indices into the vocabulary,
    /// end token last). The first token is never the end token and a
    /// `max_len` prefix always ends.
    pub fn next_distribution(&self, prefix: &[usize]) -> Vec<f64> {
        let v = self.vocab.len();
        let mut probs = vec![0.0; v + 1];
        if prefix.len() >= self.max_len {
            probs[v] = 1.0;
            return probs;
        }
        let key = prefix
            .iter()
            .fold(mix(self.seed, prefix.len() as u64), |h, &t| {
                mix(h, t as u64 + 1)
            });
        let mut rng = stream_rng(key, 0);
        let logits: Vec<f64> = (0..=v)
            .map(|i| {
                if i == v && prefix.is_empty() {
                    f64::NEG_INFINITY
                } else {
                    self.sharpness * rng.random::<f64>()
                }
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for (p, l) in probs.iter_mut().zip(&logits) {
            *p = (l - max).exp() / z;
        }
        probs
    }

    pub fn tokenize(&self, text: &str) -> Option<Vec<usize>> {
        text.chars()
            .map(|c| self.vocab.iter().position(|&v| v == c))
            .collect()
    }

    pub fn detokenize(&self, tokens: &[usize]) -> String {
        tokens.iter().map(|&t| self.vocab[t]).collect()
    }

    /// Chain-rule probability of `tokens` followed by the end token.
    pub fn sequence_prob(&self, tokens: &[usize]) -> f64 {
        let mut p = 1.0;
        for i in 0..tokens.len() {
            p *= self.next_distribution(&tokens[..i])[tokens[i]];
        }
        p * self.next_distribution(tokens)[self.end_index()]
    }

    /// Every sequence the model can emit, with its probability.
    pub fn enumerate(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut stack: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
        while let Some((prefix, p)) = stack.pop() {
            let dist = self.next_distribution(&prefix);
            if dist[self.end_index()] > 0.0 {
                out.push((self.detokenize(&prefix), p * dist[self.end_index()]));
            }
            for (t, &q) in dist[..self.vocab.len()].iter().enumerate() {
                if q > 0.0 {
                    let mut next = prefix.clone();
                    next.push(t);
                    stack.push((next, p * q));
                }
            }
        }
        out
    }

    /// Non-end tokens after `prefix`, most probable first (ties by index).
    fn ranked_tokens(&self, dist: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.vocab.len()).collect();
        idx.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
        idx
    }

    fn generate_from(&self, start: Vec<usize>, params: &DecodeParams) -> Completion {
        let mut rng = params
            .seed
            .filter(|_| params.temperature > 0.0)
            .map(|s| stream_rng(mix(self.seed, s), 1));
        let mut seq = start.clone();
        let mut tokens = Vec::new();
        let mut alternatives = Vec::new();
        while tokens.len() < params.max_tokens as usize {
            let dist = self.next_distribution(&seq);
            let next = match rng.as_mut() {
                Some(r) => {
                    let w: Vec<f64> = dist
                        .iter()
                        .map(|p| p.powf(1.0 / params.temperature))
                        .collect();
                    WeightedIndex::new(&w).expect("nonzero weights").sample(r)
                }
                None => (0..dist.len())
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .unwrap(),
            };
            if next == self.end_index() {
                break;
            }
            let ranked = self.ranked_tokens(&dist);
            alternatives.push(
                ranked
                    .iter()
                    .take(params.num_top_alternatives as usize)
                    .map(|&t| TokenLogprob::new(self.vocab[t].to_string(), dist[t].ln()))
                    .collect(),
            );
            tokens.push(TokenLogprob::new(
                self.vocab[next].to_string(),
                dist[next].ln(),
            ));
            seq.push(next);
        }
        let prefix_text = self.detokenize(&start);
        let mut c = Completion::from_tokens(tokens, alternatives);
        if !prefix_text.is_empty() {
            // the forced prefix is part of the answer text but not of the
            // generated tokens
            c.text = format!("{prefix_text}{}", c.text);
        }
        c
    }
}

impl Provider for ToyLanguageModel {
    fn id(&self) -> &str {
        &self.id
    }

    fn capabilities(&self) -> ProviderCapabilities {
        self.caps
    }

    /// A prefix-completion prompt continues greedily from the given prefix;
    /// any other prompt generates from scratch.
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &DecodeParams,
    ) -> Result<Completion, GatewayError> {
        let prompt = last_user(messages);
        let start = self
            .templates
            .get(TemplateId::PrefixCompletion)
            .extract(prompt)
            .and_then(|f| self.tokenize(&f["prefix"]));
        match start {
            Some(prefix) => {
                let mut p = params.clone();
                p.num_top_alternatives = 0;
                Ok(self.generate_from(prefix, &p))
            }
            None => Ok(self.generate_from(Vec::new(), params)),
        }
    }

    /// Beam search in which finished hypotheses occupy beam slots: each
    /// step keeps the `beam_width` best extensions (an extension by the end
    /// token finishes a hypothesis) and stops once no live hypothesis can
    /// beat the finished ones. Width 1 is greedy decoding.
    fn beam_search(
        &self,
        _messages: &[ChatMessage],
        beam_width: usize,
        max_tokens: u32,
    ) -> Result<Vec<BeamHypothesis>, GatewayError> {
        let limit = self.max_len.min(max_tokens as usize);
        let end = self.end_index();
        let mut live: Vec<(f64, Vec<usize>)> = vec![(0.0, Vec::new())];
        let mut finished: Vec<(f64, Vec<usize>)> = Vec::new();
        while !live.is_empty() {
            let mut candidates: Vec<(f64, Vec<usize>, bool)> = Vec::new();
            for (lp, tokens) in &live {
                if tokens.len() >= limit {
                    candidates.push((*lp, tokens.clone(), true));
                    continue;
                }
                let dist = self.next_distribution(tokens);
                for (t, &q) in dist.iter().enumerate() {
                    if q > 0.0 {
                        let mut next = tokens.clone();
                        if t != end {
                            next.push(t);
                        }
                        candidates.push((lp + q.ln(), next, t == end));
                    }
                }
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            candidates.truncate(beam_width);
            live.clear();
            for (lp, tokens, done) in candidates {
                if done {
                    finished.push((lp, tokens));
                } else {
                    live.push((lp, tokens));
                }
            }
            finished.sort_by(|a, b| b.0.total_cmp(&a.0));
            if finished.len() >= beam_width {
                let worst = finished[beam_width - 1].0;
                if live.iter().all(|(lp, _)| *lp <= worst) {
                    break;
                }
            }
        }
        finished.truncate(beam_width);
        Ok(finished
            .into_iter()
            .map(|(lp, tokens)| BeamHypothesis {
                text: self.detokenize(&tokens),
                sequence_logprob: lp,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distributions_normalize_and_enumeration_sums_to_one() {
        let lm = ToyLanguageModel::new("ab", 3, 11);
        for prefix in [vec![], vec![0], vec![1, 0], vec![0, 0, 0]] {
            let s: f64 = lm.next_distribution(&prefix).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let all = lm.enumerate();
        assert_eq!(all.len(), 2 + 4 + 8);
        let total: f64 = all.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (text, p) in &all {
            assert!((lm.sequence_prob(&lm.tokenize(text).unwrap()) - p).abs() < 1e-15);
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let lm = ToyLanguageModel::new("abc", 4, 5);
        let p = DecodeParams::greedy(8).with_alternatives(2);
        let a = lm.complete(&[ChatMessage::user("q")], &p).unwrap();
        let b = lm.complete(&[ChatMessage::user("q")], &p).unwrap();
        assert_eq!(a, b);
        assert!(!a.text.is_empty());
        assert_eq!(a.alternatives.len(), a.tokens.len());
    }
}
