//! Synthetic target-dependent corpus.
//!
//! Every sentence mentions two entities, each immediately preceded by a cue
//! word. One cue is neutral and the other positive or negative, so a sentence
//! always carries conflicting signals. The label of an instance is the class of
//! the cue in front of its marked target. Because the marked entity is chosen
//! by a fair coin, the sentence alone says nothing about the label: a
//! target-blind model cannot beat the majority class (neutral, about half the
//! data), while a model that knows where the target sits can be perfect.

use std::ops::Range;

use crate::data::{Instance, Polarity};
use crate::embeddings::{EmbeddingTable, Vocabulary};
use crate::mathcore::{Real, SeededRng, Tensor};

/// Bound of the uniform word vectors from [`embeddings`].
pub const VECTOR_BOUND: f64 = 1.0;

const POSITIVE_CUES: &[&str] = &["great", "love", "awesome", "amazing", "excellent", "perfect"];
const NEGATIVE_CUES: &[&str] = &["terrible", "hate", "awful", "horrible", "worst", "broken"];
const NEUTRAL_CUES: &[&str] = &["about", "saw", "using", "bought", "checking", "near"];
const ENTITIES: &[&str] = &[
    "camera",
    "phone",
    "ipod",
    "google",
    "laptop",
    "lakers",
    "windows",
    "xbox",
    "harry potter",
    "lindsay lohan",
    "battery life",
    "picture quality",
];
const FILLERS: &[&str] = &[
    "the", "a", "i", "my", "and", "but", "is", "was", "today", "really", "so", "then", "just",
    "it", "this", "that", "with", "for", "again", "now", "lol", "!", ",", ".",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub sentences: usize,
    pub seed: u64,
}

/// A generated sentence with both entity mentions and the label each would carry as target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSentence {
    pub tokens: Vec<String>,
    pub mentions: [Range<usize>; 2],
    pub labels: [Polarity; 2],
    /// Which mention is the marked target of [`Self::instance`].
    pub marked: usize,
}

impl SyntheticSentence {
    pub fn instance_for(&self, mention: usize) -> Instance {
        Instance {
            tokens: self.tokens.clone(),
            target: self.mentions[mention].clone(),
            label: self.labels[mention],
        }
    }

    pub fn instance(&self) -> Instance {
        self.instance_for(self.marked)
    }
}

fn pick<'a>(rng: &mut SeededRng, words: &[&'a str]) -> &'a str {
    words[rng.below(words.len())]
}

fn push_fillers(rng: &mut SeededRng, tokens: &mut Vec<String>, min: usize, max: usize) {
    let n = min + rng.below(max - min + 1);
    for _ in 0..n {
        tokens.push(pick(rng, FILLERS).to_string());
    }
}

pub fn generate_sentences(config: SyntheticConfig) -> Vec<SyntheticSentence> {
    let mut rng = SeededRng::new(config.seed).fork("synthetic-corpus");
    (0..config.sentences)
        .map(|_| {
            let polar = if rng.below(2) == 0 {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            let mut labels = [polar, Polarity::Neutral];
            if rng.below(2) == 0 {
                labels.swap(0, 1);
            }
            let first = rng.below(ENTITIES.len());
            let mut second = rng.below(ENTITIES.len() - 1);
            if second >= first {
                second += 1;
            }

            let mut tokens = Vec::new();
            let mut mentions = [0..0, 0..0];
            for (slot, entity) in [first, second].into_iter().enumerate() {
                push_fillers(&mut rng, &mut tokens, 1, 3);
                let cue = match labels[slot] {
                    Polarity::Positive => pick(&mut rng, POSITIVE_CUES),
                    Polarity::Negative => pick(&mut rng, NEGATIVE_CUES),
                    Polarity::Neutral => pick(&mut rng, NEUTRAL_CUES),
                };
                tokens.push(cue.to_string());
                let start = tokens.len();
                tokens.extend(ENTITIES[entity].split(' ').map(str::to_string));
                mentions[slot] = start..tokens.len();
            }
            push_fillers(&mut rng, &mut tokens, 0, 2);
            let marked = rng.below(2);
            SyntheticSentence {
                tokens,
                mentions,
                labels,
                marked,
            }
        })
        .collect()
}

pub fn generate(config: SyntheticConfig) -> Vec<Instance> {
    generate_sentences(config)
        .iter()
        .map(SyntheticSentence::instance)
        .collect()
}

/// Every word the generator can emit.
pub fn vocabulary() -> Vocabulary {
    let mut v = Vocabulary::new(true);
    for list in [POSITIVE_CUES, NEGATIVE_CUES, NEUTRAL_CUES, FILLERS] {
        for w in list {
            v.insert(w);
        }
    }
    for e in ENTITIES {
        for w in e.split(' ') {
            v.insert(w);
        }
    }
    v
}

/// Stand-in for pre-trained vectors: each entry i.i.d. uniform on
/// `[-VECTOR_BOUND, VECTOR_BOUND]`, about the per-coordinate spread of published
/// Twitter GloVe vectors.
pub fn embeddings<T: Real>(vocab: &Vocabulary, dim: usize, seed: u64) -> EmbeddingTable<T> {
    let mut rng = SeededRng::new(seed).fork("synthetic-embeddings");
    let matrix: Tensor<T> = rng.uniform_tensor(vocab.len(), dim, VECTOR_BOUND);
    EmbeddingTable::new(matrix, true).expect("finite")
}

/// Text form of [`embeddings`], loadable with [`crate::embeddings::load_pretrained`].
pub fn embeddings_text(vocab: &Vocabulary, dim: usize, seed: u64) -> String {
    let table: EmbeddingTable<f64> = embeddings(vocab, dim, seed);
    let mut out = String::new();
    for (i, tok) in vocab.tokens().iter().enumerate().skip(1) {
        out.push_str(tok);
        for v in table.matrix().row(i) {
            out.push(' ');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::class_distribution;

    #[test]
    fn cue_precedes_each_mention() {
        for s in generate_sentences(SyntheticConfig {
            sentences: 200,
            seed: 3,
        }) {
            for (m, label) in s.mentions.iter().zip(s.labels) {
                let cue = s.tokens[m.start - 1].as_str();
                let list = match label {
                    Polarity::Positive => POSITIVE_CUES,
                    Polarity::Negative => NEGATIVE_CUES,
                    Polarity::Neutral => NEUTRAL_CUES,
                };
                assert!(list.contains(&cue));
            }
            assert_ne!(s.labels[0], s.labels[1]);
            assert!(s.labels.contains(&Polarity::Neutral));
        }
    }

    #[test]
    fn class_balance_is_quarter_quarter_half() {
        let d = class_distribution(&generate(SyntheticConfig {
            sentences: 4000,
            seed: 1,
        }))
        .unwrap();
        assert!((d.neutral - 0.5).abs() < 0.03, "{d:?}");
        assert!((d.positive - 0.25).abs() < 0.03, "{d:?}");
    }

    #[test]
    fn deterministic_and_covered_by_vocabulary() {
        let cfg = SyntheticConfig {
            sentences: 50,
            seed: 9,
        };
        assert_eq!(generate(cfg), generate(cfg));
        let vocab = vocabulary();
        for inst in generate(cfg) {
            assert!(inst.tokens.iter().all(|t| vocab.get(t).is_some()));
        }
    }
}
