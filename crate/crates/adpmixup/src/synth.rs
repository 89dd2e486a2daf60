//! Synthetic two-class keyword-sentiment corpus.
//!
//! Texts are generated from templates whose sentiment is carried entirely by
//! keyword slots, so word-importance ranking has real signal: deleting a
//! keyword hurts the prediction, deleting filler does not.
//!
//! Training splits open with a few fixed anchor items — maximally confident
//! single-keyword repeats that pin the low end of the prediction-entropy
//! range. The high end is left to the natural spread of the templates:
//! entropy calibration reads the head of the training split, and a tight
//! natural band is what makes out-of-band inputs (attacked text) clamp the
//! normalized coefficients to their extremes.

use rand::seq::IndexedRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::attack::SynonymTable;
use crate::data::{LabeledDataset, LabeledExample};

/// Keywords that mark the positive class (label 1).
pub const POSITIVE_WORDS: &[&str] = &[
    "good",
    "great",
    "superb",
    "excellent",
    "wonderful",
    "brilliant",
    "moving",
    "fresh",
    "lovely",
    "sharp",
];

/// Keywords that mark the negative class (label 0).
pub const NEGATIVE_WORDS: &[&str] = &[
    "bad",
    "awful",
    "dreadful",
    "terrible",
    "boring",
    "dull",
    "messy",
    "shallow",
    "stale",
    "weak",
];

const NOUNS: &[&str] = &[
    "movie", "film", "plot", "acting", "script", "story", "cast", "ending", "pacing", "dialogue",
];

/// `{0}` = noun, `{1}` = keyword, `{2}` = second keyword (same class).
const TEMPLATES: &[&str] = &[
    "the {0} was {1}",
    "a {1} {0} overall",
    "{1} and {2} from start to finish",
    "i found the {0} quite {1}",
    "the {0} felt {1} to me",
    "honestly the {0} was {1} and {2}",
    "what a {1} {0}",
    "that {0} had a {1} tone and a {2} arc",
];

fn keywords_for(label: usize) -> &'static [&'static str] {
    if label == 1 {
        POSITIVE_WORDS
    } else {
        NEGATIVE_WORDS
    }
}

fn gen_text(rng: &mut ChaCha20Rng, label: usize) -> String {
    let template = *TEMPLATES.choose(rng).unwrap();
    let words = keywords_for(label);
    let noun = *NOUNS.choose(rng).unwrap();
    let kw1 = *words.choose(rng).unwrap();
    let kw2 = *words.choose(rng).unwrap();
    template
        .replace("{0}", noun)
        .replace("{1}", kw1)
        .replace("{2}", kw2)
}

fn anchor_items() -> Vec<LabeledExample> {
    let strong = |word: &str, label: usize| LabeledExample {
        text: std::iter::repeat(word)
            .take(12)
            .collect::<Vec<_>>()
            .join(" "),
        label,
    };
    let all = |words: &[&str], label: usize| LabeledExample {
        text: words.join(" "),
        label,
    };
    vec![
        strong("superb", 1),
        strong("dreadful", 0),
        all(POSITIVE_WORDS, 1),
        all(NEGATIVE_WORDS, 0),
    ]
}

/// Generate `n` labeled examples with alternating balanced labels.
///
/// With `with_anchors` the split opens with four fixed entropy-anchor items
/// (use this for training splits). Fully determined by `seed`.
pub fn toy_corpus(n: usize, seed: u64, name: &str, with_anchors: bool) -> LabeledDataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(n);
    if with_anchors {
        items.extend(anchor_items().into_iter().take(n));
    }
    let mut i = 0usize;
    while items.len() < n {
        let label = i % 2;
        items.push(LabeledExample {
            text: gen_text(&mut rng, label),
            label,
        });
        i += 1;
    }
    LabeledDataset::new(name, items)
}

/// The synonym table shipped with the toy corpus, embedded at compile time.
pub fn toy_synonym_table() -> SynonymTable {
    SynonymTable::parse_tsv(include_str!("../data/synonyms.tsv"))
        .expect("embedded synonym table is well-formed")
}
