//! Seeded synthetic language for end-to-end checks and benchmarks.
//!
//! Sentences are walks of a sparse first-order Markov chain over word
//! classes; each step emits a word of the current class. Words of one class
//! are interchangeable in context, so single-word substitutions within a
//! class yield texts about as likely as the original. Start classes,
//! successor classes and words within a class follow Zipf-like weights, so
//! some sentences are intrinsically far more likely than others, the
//! situation in which an uncalibrated loss threshold struggles.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, TextSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageParams {
    pub vocab_size: usize,
    /// Words are split evenly into this many classes.
    pub classes: usize,
    /// Distinct successor classes of each class.
    pub successors: usize,
    /// Zipf exponent of the start and successor weights.
    pub zipf: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for LanguageParams {
    fn default() -> Self {
        Self {
            vocab_size: 500,
            classes: 50,
            successors: 8,
            zipf: 1.5,
            min_len: 8,
            max_len: 16,
        }
    }
}

pub struct SyntheticLanguage {
    params: LanguageParams,
    words: Vec<String>,
    /// Word ids of each class.
    members: Vec<Vec<usize>>,
    emit: Vec<WeightedIndex<f64>>,
    start: WeightedIndex<f64>,
    next: Vec<(Vec<usize>, WeightedIndex<f64>)>,
}

fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-s)).collect()
}

impl SyntheticLanguage {
    pub fn new(params: LanguageParams, seed: u64) -> Self {
        assert!(
            (1..=params.vocab_size).contains(&params.classes),
            "classes must lie in 1..=vocab_size"
        );
        assert!(
            (1..=params.classes).contains(&params.successors),
            "successors must lie in 1..=classes"
        );
        assert!(params.min_len >= 1 && params.min_len <= params.max_len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = (0..params.vocab_size).map(|i| format!("w{i:03}")).collect();

        let mut order: Vec<usize> = (0..params.vocab_size).collect();
        order.shuffle(&mut rng);
        let mut members = vec![Vec::new(); params.classes];
        for (i, w) in order.into_iter().enumerate() {
            members[i % params.classes].push(w);
        }
        let emit = members
            .iter()
            .map(|m| WeightedIndex::new(zipf_weights(m.len(), params.zipf)).expect("weights"))
            .collect();
        let start = WeightedIndex::new(zipf_weights(params.classes, params.zipf)).expect("weights");
        let succ_weights = zipf_weights(params.successors, params.zipf);
        let next = (0..params.classes)
            .map(|_| {
                let ids = sample(&mut rng, params.classes, params.successors).into_vec();
                (ids, WeightedIndex::new(&succ_weights).expect("weights"))
            })
            .collect();
        Self {
            params,
            words,
            members,
            emit,
            start,
            next,
        }
    }

    pub fn params(&self) -> &LanguageParams {
        &self.params
    }

    pub fn sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let len = rng.random_range(self.params.min_len..=self.params.max_len);
        let mut class = self.start.sample(rng);
        let mut out = Vec::with_capacity(len);
        for step in 0..len {
            if step > 0 {
                let (ids, dist) = &self.next[class];
                class = ids[dist.sample(rng)];
            }
            let w = self.members[class][self.emit[class].sample(rng)];
            out.push(self.words[w].as_str());
        }
        out.join(" ")
    }

    /// `count` labelled samples with ids `<prefix>-<k>`.
    pub fn samples(&self, prefix: &str, count: usize, label: Label, seed: u64) -> Vec<TextSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|k| TextSample::new(format!("{prefix}-{k}"), self.sentence(&mut rng)).with_label(label))
            .collect()
    }
}
