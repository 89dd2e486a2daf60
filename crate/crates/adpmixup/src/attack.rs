//! Black-box adversarial text attacks.
//!
//! Everything here sees the victim only through the [`Predictor`] trait — a
//! prediction oracle. No type in this module can reach weights or gradients,
//! which keeps the black-box claim enforced by the interface rather than by
//! discipline.
//!
//! The attack family is greedy: rank words by deletion importance, then
//! perturb them in order, keeping the candidate that most reduces the
//! true-label probability, until the prediction flips or the word budget or
//! query cap runs out. Character kinds perturb spelling; word kinds
//! substitute synonyms from a sidecar lexicon.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::{LabeledDataset, LabeledExample};
use crate::error::{Error, Result};
use crate::model::{Predictor, ProbDist};

/// The four attack generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Transpose one adjacent character pair per perturbed word.
    CharSwap,
    /// Best of swap / delete / insert / keyboard-substitute per word.
    CharNoise,
    /// Importance-ordered synonym substitution.
    WordSynonym,
    /// Global greedy synonym substitution over all remaining words.
    WordGreedy,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::CharSwap,
        AttackKind::CharNoise,
        AttackKind::WordSynonym,
        AttackKind::WordGreedy,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::CharSwap => "char_swap",
            AttackKind::CharNoise => "char_noise",
            AttackKind::WordSynonym => "word_synonym",
            AttackKind::WordGreedy => "word_greedy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "char_swap" => Ok(AttackKind::CharSwap),
            "char_noise" => Ok(AttackKind::CharNoise),
            "word_synonym" => Ok(AttackKind::WordSynonym),
            "word_greedy" => Ok(AttackKind::WordGreedy),
            other => Err(Error::Config(format!(
                "unknown attack kind '{other}' (expected char_swap, char_noise, word_synonym, or word_greedy)"
            ))),
        }
    }

    /// Word-level kinds need a synonym table; character kinds do not.
    pub fn is_word_level(&self) -> bool {
        matches!(self, AttackKind::WordSynonym | AttackKind::WordGreedy)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Word → substitution candidates, loaded from a TSV sidecar
/// (`word<TAB>candidate<TAB>candidate...`). Candidate order follows the file,
/// so lookups are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymTable {
    entries: HashMap<String, Vec<String>>,
}

impl SynonymTable {
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let word = fields.next().unwrap_or("").trim();
            if word.is_empty() {
                return Err(Error::Config(format!(
                    "synonym table line {}: empty head word",
                    lineno + 1
                )));
            }
            let candidates: Vec<String> = fields
                .map(|f| f.trim().to_string())
                .filter(|f| !f.is_empty())
                .collect();
            if candidates.is_empty() {
                return Err(Error::Config(format!(
                    "synonym table line {}: '{}' has no candidates",
                    lineno + 1,
                    word
                )));
            }
            entries.insert(word.to_string(), candidates);
        }
        Ok(SynonymTable { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Dataset {
            path: path.to_path_buf(),
            detail: format!("cannot read synonym table: {e}"),
        })?;
        Self::parse_tsv(&text)
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        self.entries.get(word).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Attack configuration.
#[derive(Debug, Clone)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Maximum fraction of words perturbed, in (0, 1].
    pub budget: f64,
    /// Hard cap on victim queries per example.
    pub max_queries: usize,
    pub seed: u64,
    /// Required for word-level kinds.
    pub synonyms: Option<SynonymTable>,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, seed: u64) -> Self {
        AttackSpec {
            kind,
            budget: 0.3,
            max_queries: 500,
            seed,
            synonyms: None,
        }
    }

    pub fn with_synonyms(mut self, table: SynonymTable) -> Self {
        self.synonyms = Some(table);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return Err(Error::Config(format!(
                "attack budget must lie in (0,1], got {}",
                self.budget
            )));
        }
        if self.max_queries == 0 {
            return Err(Error::Config("max_queries must be positive".into()));
        }
        if self.kind.is_word_level() && self.synonyms.is_none() {
            return Err(Error::Config(format!(
                "attack kind {} requires a synonym table",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Outcome of attacking one example.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub original_text: String,
    pub original_label: usize,
    pub perturbed: String,
    pub success: bool,
    pub queries_used: usize,
}

/// Query-counting wrapper around a predictor. `try_predict` returns `None`
/// once the cap is reached, so callers cannot overdraw even by accident.
pub struct CountingOracle<'a> {
    inner: &'a dyn Predictor,
    used: Cell<usize>,
    cap: usize,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn Predictor, cap: usize) -> Self {
        CountingOracle {
            inner,
            used: Cell::new(0),
            cap,
        }
    }

    pub fn try_predict(&self, text: &str) -> Option<ProbDist> {
        if self.used.get() >= self.cap {
            return None;
        }
        self.used.set(self.used.get() + 1);
        Some(self.inner.predict(text))
    }

    pub fn used(&self) -> usize {
        self.used.get()
    }
}

fn split_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Deletion-based importance ranking: importance of word i is
/// `P(label | text) − P(label | text without word i)`, sorted descending with
/// ties broken by lower index.
pub fn word_importance(victim: &dyn Predictor, text: &str, label: usize) -> Vec<usize> {
    let oracle = CountingOracle::new(victim, usize::MAX);
    let words = split_words(text);
    let base = oracle.try_predict(text).expect("uncapped oracle");
    ranked_importance(&oracle, &words, label, base.prob(label)).expect("uncapped oracle")
}

fn ranked_importance(
    oracle: &CountingOracle<'_>,
    words: &[String],
    label: usize,
    base_true: f64,
) -> Option<Vec<usize>> {
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(words.len());
    for i in 0..words.len() {
        let mut rest: Vec<&str> = Vec::with_capacity(words.len() - 1);
        rest.extend(words[..i].iter().map(String::as_str));
        rest.extend(words[i + 1..].iter().map(String::as_str));
        let probs = oracle.try_predict(&rest.join(" "))?;
        scored.push((i, base_true - probs.prob(label)));
    }
    // Descending by importance; stable sort keeps equal scores in index order.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    Some(scored.into_iter().map(|(i, _)| i).collect())
}

const QWERTY_ROWS: [&str; 3] = ["qwertyuiop", "asdfghjkl", "zxcvbnm"];

/// Characters adjacent to `c` on a QWERTY keyboard (same row only).
fn keyboard_neighbors(c: char) -> Vec<char> {
    let lower = c.to_ascii_lowercase();
    for row in QWERTY_ROWS {
        if let Some(pos) = row.find(lower) {
            let chars: Vec<char> = row.chars().collect();
            let mut out = Vec::new();
            if pos > 0 {
                out.push(chars[pos - 1]);
            }
            if pos + 1 < chars.len() {
                out.push(chars[pos + 1]);
            }
            return out;
        }
    }
    Vec::new()
}

fn swap_at(word: &[char], i: usize) -> String {
    let mut w = word.to_vec();
    w.swap(i, i + 1);
    w.into_iter().collect()
}

/// All distinct adjacent transpositions of a word, in position order.
fn all_swaps(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut out = Vec::new();
    for i in 0..chars.len().saturating_sub(1) {
        let cand = swap_at(&chars, i);
        if cand != word && !out.contains(&cand) {
            out.push(cand);
        }
    }
    out
}

/// One randomly placed candidate per character operation.
fn noise_candidates(word: &str, rng: &mut ChaCha20Rng) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    let mut out = Vec::new();
    if n >= 2 {
        out.push(swap_at(&chars, rng.random_range(0..n - 1)));
        let del = rng.random_range(0..n);
        let mut w = chars.clone();
        w.remove(del);
        out.push(w.into_iter().collect());
    }
    if n >= 1 {
        let sub = rng.random_range(0..n);
        let neighbors = keyboard_neighbors(chars[sub]);
        let replacement = neighbors
            .as_slice()
            .choose(rng)
            .copied()
            .unwrap_or('x');
        let mut w = chars.clone();
        w[sub] = replacement;
        out.push(w.into_iter().collect());
        let ins = rng.random_range(0..=n);
        let anchor = chars[ins.min(n - 1)];
        let extra = keyboard_neighbors(anchor)
            .as_slice()
            .choose(rng)
            .copied()
            .unwrap_or(anchor);
        let mut w = chars.clone();
        w.insert(ins, extra);
        out.push(w.into_iter().collect());
    }
    out.retain(|c| c != word && !c.is_empty());
    let mut seen = HashSet::new();
    out.retain(|c| seen.insert(c.clone()));
    out
}

fn candidates_for(
    kind: AttackKind,
    word: &str,
    rng: &mut ChaCha20Rng,
    synonyms: Option<&SynonymTable>,
) -> Vec<String> {
    match kind {
        AttackKind::CharSwap => all_swaps(word),
        AttackKind::CharNoise => noise_candidates(word, rng),
        AttackKind::WordSynonym | AttackKind::WordGreedy => synonyms
            .map(|t| t.synonyms(word).to_vec())
            .unwrap_or_default(),
    }
}

/// Attack one example with an explicit RNG seed (ignores `spec.seed`).
pub fn attack_with_seed(
    victim: &dyn Predictor,
    text: &str,
    label: usize,
    spec: &AttackSpec,
    seed: u64,
) -> Result<AttackResult> {
    spec.validate()?;
    let oracle = CountingOracle::new(victim, spec.max_queries);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let words = split_words(text);

    let fail = |oracle: &CountingOracle, perturbed: String| AttackResult {
        original_text: text.to_string(),
        original_label: label,
        perturbed,
        success: false,
        queries_used: oracle.used(),
    };

    let base = match oracle.try_predict(text) {
        Some(p) => p,
        None => return Ok(fail(&oracle, text.to_string())),
    };
    if base.argmax() != label {
        // Already misclassified: immediate success with zero perturbations.
        return Ok(AttackResult {
            original_text: text.to_string(),
            original_label: label,
            perturbed: text.to_string(),
            success: true,
            queries_used: oracle.used(),
        });
    }
    if words.is_empty() {
        return Ok(fail(&oracle, text.to_string()));
    }

    let max_alter = ((spec.budget * words.len() as f64).ceil() as usize).min(words.len());
    let mut current = words.clone();
    let mut current_true = base.prob(label);
    let mut altered: HashSet<usize> = HashSet::new();

    match spec.kind {
        AttackKind::WordGreedy => {
            // Global greedy: every step scans all unaltered words and all
            // their candidates, applies the single best substitution.
            loop {
                if altered.len() >= max_alter {
                    break;
                }
                let mut best: Option<(f64, usize, String, usize)> = None;
                'scan: for wi in 0..current.len() {
                    if altered.contains(&wi) {
                        continue;
                    }
                    let cands =
                        candidates_for(spec.kind, &current[wi], &mut rng, spec.synonyms.as_ref());
                    for cand in cands {
                        let mut trial = current.clone();
                        trial[wi] = cand.clone();
                        let probs = match oracle.try_predict(&trial.join(" ")) {
                            Some(p) => p,
                            None => break 'scan,
                        };
                        let t = probs.prob(label);
                        let better = match &best {
                            None => true,
                            Some((bt, ..)) => t < *bt,
                        };
                        if better {
                            best = Some((t, wi, cand, probs.argmax()));
                        }
                    }
                }
                match best {
                    Some((t, wi, cand, pred)) if t < current_true => {
                        current[wi] = cand;
                        current_true = t;
                        altered.insert(wi);
                        if pred != label {
                            return Ok(AttackResult {
                                original_text: text.to_string(),
                                original_label: label,
                                perturbed: current.join(" "),
                                success: true,
                                queries_used: oracle.used(),
                            });
                        }
                    }
                    _ => break, // no improving substitution left, or queries exhausted
                }
            }
        }
        _ => {
            let ranking =
                match ranked_importance(&oracle, &words, label, current_true) {
                    Some(r) => r,
                    None => return Ok(fail(&oracle, current.join(" "))),
                };
            'words: for wi in ranking {
                if altered.len() >= max_alter {
                    break;
                }
                let cands =
                    candidates_for(spec.kind, &current[wi], &mut rng, spec.synonyms.as_ref());
                if cands.is_empty() {
                    continue;
                }
                let mut best: Option<(f64, String, usize)> = None;
                for cand in cands {
                    let mut trial = current.clone();
                    trial[wi] = cand.clone();
                    let probs = match oracle.try_predict(&trial.join(" ")) {
                        Some(p) => p,
                        None => break 'words,
                    };
                    let t = probs.prob(label);
                    let better = match &best {
                        None => true,
                        Some((bt, ..)) => t < *bt,
                    };
                    if better {
                        best = Some((t, cand, probs.argmax()));
                    }
                }
                if let Some((t, cand, pred)) = best {
                    if t < current_true {
                        current[wi] = cand;
                        current_true = t;
                        altered.insert(wi);
                        if pred != label {
                            return Ok(AttackResult {
                                original_text: text.to_string(),
                                original_label: label,
                                perturbed: current.join(" "),
                                success: true,
                                queries_used: oracle.used(),
                            });
                        }
                    }
                }
            }
        }
    }

    Ok(fail(&oracle, current.join(" ")))
}

/// Attack one example using `spec.seed`.
pub fn attack(
    victim: &dyn Predictor,
    text: &str,
    label: usize,
    spec: &AttackSpec,
) -> Result<AttackResult> {
    attack_with_seed(victim, text, label, spec, spec.seed)
}

/// Per-example seed: decorrelates examples while staying a pure function of
/// the spec seed and the item index.
fn example_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64)
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9)
        .rotate_left(31)
}

/// Attack every item; keep only the successes, as (perturbed text, original
/// label), preserving input order.
pub fn generate_adversarial_dataset(
    victim: &dyn Predictor,
    dataset: &LabeledDataset,
    spec: &AttackSpec,
) -> Result<LabeledDataset> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config(format!(
            "dataset '{}' is empty",
            dataset.name
        )));
    }
    let mut items = Vec::new();
    for (i, item) in dataset.items.iter().enumerate() {
        let result =
            attack_with_seed(victim, &item.text, item.label, spec, example_seed(spec.seed, i))?;
        if result.success {
            items.push(LabeledExample {
                text: result.perturbed,
                label: item.label,
            });
        }
    }
    Ok(LabeledDataset::new(
        format!("{}_{}", dataset.name, spec.kind),
        items,
    ))
}

/// Attacked copy of a full dataset for adversarial training: every item maps
/// to the attack's best-effort text (the perturbed version on success, the
/// strongest attempt — possibly unchanged — on failure) under its original
/// label. Keeping the failures matters: items the attack cannot flip stay
/// close to clean text, so a model trained on this set retains clean
/// competence instead of learning to invert the victim.
pub fn generate_adversarial_training_set(
    victim: &dyn Predictor,
    dataset: &LabeledDataset,
    spec: &AttackSpec,
) -> Result<LabeledDataset> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config(format!(
            "dataset '{}' is empty",
            dataset.name
        )));
    }
    let mut items = Vec::with_capacity(dataset.len());
    for (i, item) in dataset.items.iter().enumerate() {
        let result =
            attack_with_seed(victim, &item.text, item.label, spec, example_seed(spec.seed, i))?;
        items.push(LabeledExample {
            text: result.perturbed,
            label: item.label,
        });
    }
    Ok(LabeledDataset::new(
        format!("{}_{}_train", dataset.name, spec.kind),
        items,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-built oracle: P(class 1) = sigmoid(sum of word scores). Unknown
    /// words score zero, so any perturbation of a scored word weakens it.
    struct KeywordOracle {
        scores: HashMap<String, f64>,
        bias: f64,
    }

    impl KeywordOracle {
        fn new(pairs: &[(&str, f64)], bias: f64) -> Self {
            KeywordOracle {
                scores: pairs
                    .iter()
                    .map(|(w, s)| (w.to_string(), *s))
                    .collect(),
                bias,
            }
        }
    }

    impl Predictor for KeywordOracle {
        fn predict(&self, text: &str) -> ProbDist {
            let z: f64 = text
                .split_whitespace()
                .map(|w| self.scores.get(w).copied().unwrap_or(0.0))
                .sum::<f64>()
                + self.bias;
            let p1 = 1.0 / (1.0 + (-z).exp());
            ProbDist::new(vec![1.0 - p1, p1])
        }
    }

    /// Always predicts class 0 with full confidence.
    struct ConstantOracle;

    impl Predictor for ConstantOracle {
        fn predict(&self, _text: &str) -> ProbDist {
            ProbDist::new(vec![1.0, 0.0])
        }
    }

    #[test]
    fn importance_single_word() {
        let victim = KeywordOracle::new(&[("hooray", 2.0)], 0.0);
        let ranks = word_importance(&victim, "hooray", 1);
        assert_eq!(ranks, vec![0]);
    }

    #[test]
    fn importance_constant_model_keeps_index_order() {
        let ranks = word_importance(&ConstantOracle, "alpha beta gamma delta", 0);
        assert_eq!(ranks, vec![0, 1, 2, 3]);
    }

    #[test]
    fn importance_matches_exhaustive_deletion() {
        // Scores chosen so deletions reorder distinctly: "big" carries most
        // of the positive mass, then "ok", then "meh".
        let victim = KeywordOracle::new(&[("big", 2.0), ("ok", 0.8), ("meh", 0.1)], 0.0);
        let text = "meh big ok";
        let label = 1;
        let base = victim.predict(text).prob(label);
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut oracle_scores: Vec<(usize, f64)> = (0..words.len())
            .map(|i| {
                let rest: Vec<&str> = words
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, w)| *w)
                    .collect();
                (i, base - victim.predict(&rest.join(" ")).prob(label))
            })
            .collect();
        oracle_scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let expected: Vec<usize> = oracle_scores.into_iter().map(|(i, _)| i).collect();
        assert_eq!(word_importance(&victim, text, label), expected);
        assert_eq!(expected[0], 1); // "big" first
    }

    #[test]
    fn misclassified_input_is_immediate_success() {
        let spec = AttackSpec::new(AttackKind::CharSwap, 1);
        let result = attack(&ConstantOracle, "anything at all", 1, &spec).unwrap();
        assert!(result.success);
        assert_eq!(result.perturbed, result.original_text);
        assert_eq!(result.queries_used, 1);
    }

    #[test]
    fn budget_limits_perturbed_words() {
        // Ten words each scoring 0.5: one perturbation cannot flip, so the
        // attack stops at the budget cap of ceil(0.1 * 10) = 1 altered word.
        let words: Vec<String> = (0..10).map(|i| format!("kw{i}")).collect();
        let pairs: Vec<(&str, f64)> = words.iter().map(|w| (w.as_str(), 0.5)).collect();
        let victim = KeywordOracle::new(&pairs, 0.0);
        let text = words.join(" ");
        let spec = AttackSpec {
            budget: 0.1,
            ..AttackSpec::new(AttackKind::CharSwap, 2)
        };
        let result = attack(&victim, &text, 1, &spec).unwrap();
        assert!(!result.success);
        let differing = result
            .perturbed
            .split_whitespace()
            .zip(text.split_whitespace())
            .filter(|(a, b)| a != b)
            .count();
        assert!(differing <= 1, "perturbed {differing} words");
    }

    #[test]
    fn query_cap_is_respected() {
        let victim = KeywordOracle::new(&[("strong", 3.0)], 0.0);
        for kind in [AttackKind::CharSwap, AttackKind::CharNoise] {
            let spec = AttackSpec {
                max_queries: 3,
                ..AttackSpec::new(kind, 3)
            };
            let result = attack(&victim, "strong words repeated strong", 1, &spec).unwrap();
            assert!(result.queries_used <= 3, "{kind}: {}", result.queries_used);
        }
    }

    #[test]
    fn char_swap_flips_weak_victim() {
        // One decisive keyword; transposing its characters erases the
        // positive evidence, leaving the negative bias to flip the label.
        let victim = KeywordOracle::new(&[("wonderful", 2.0)], -0.5);
        let spec = AttackSpec::new(AttackKind::CharSwap, 4);
        let result = attack(&victim, "a wonderful thing happened", 1, &spec).unwrap();
        assert!(result.success);
        assert!(result.perturbed != result.original_text);
        let reattacked = victim.predict(&result.perturbed);
        assert_ne!(reattacked.argmax(), 1);
    }

    #[test]
    fn word_kinds_require_synonym_table() {
        let spec = AttackSpec::new(AttackKind::WordSynonym, 0);
        assert!(spec.validate().is_err());
        let table = SynonymTable::parse_tsv("good\tfine\n").unwrap();
        let ok = AttackSpec::new(AttackKind::WordSynonym, 0).with_synonyms(table);
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn synonym_attack_uses_table_candidates() {
        let victim = KeywordOracle::new(&[("good", 2.0)], -0.5);
        let table = SynonymTable::parse_tsv("good\tfine\tdecent\n").unwrap();
        let spec = AttackSpec::new(AttackKind::WordSynonym, 5).with_synonyms(table);
        let result = attack(&victim, "good stuff here", 1, &spec).unwrap();
        assert!(result.success);
        let first = result.perturbed.split_whitespace().next().unwrap();
        assert!(first == "fine" || first == "decent", "got '{first}'");
    }

    #[test]
    fn word_greedy_finds_global_best() {
        // "nice" is more load-bearing than "fair"; greedy must swap it first
        // even though "fair" comes earlier in the text.
        let victim = KeywordOracle::new(&[("fair", 0.3), ("nice", 1.2)], -0.7);
        let table = SynonymTable::parse_tsv("fair\tokay\nnice\tpleasant\n").unwrap();
        let spec = AttackSpec {
            budget: 1.0,
            ..AttackSpec::new(AttackKind::WordGreedy, 6).with_synonyms(table)
        };
        let result = attack(&victim, "fair and nice", 1, &spec).unwrap();
        assert!(result.success);
        assert!(result.perturbed.contains("pleasant"));
        assert!(result.perturbed.contains("fair"), "{}", result.perturbed);
    }

    #[test]
    fn generation_is_deterministic_and_verified() {
        let victim = KeywordOracle::new(&[("happy", 1.5), ("sad", -1.5)], 0.0);
        let ds = LabeledDataset::new(
            "toy",
            vec![
                LabeledExample {
                    text: "happy little day".into(),
                    label: 1,
                },
                LabeledExample {
                    text: "sad grey day".into(),
                    label: 0,
                },
                LabeledExample {
                    text: "happy happy fun".into(),
                    label: 1,
                },
            ],
        );
        let spec = AttackSpec::new(AttackKind::CharNoise, 42);
        let out1 = generate_adversarial_dataset(&victim, &ds, &spec).unwrap();
        let out2 = generate_adversarial_dataset(&victim, &ds, &spec).unwrap();
        assert_eq!(out1, out2);
        for item in &out1.items {
            // Success definition: the victim misclassifies every kept item.
            assert_ne!(victim.predict(&item.text).argmax(), item.label);
        }
    }

    #[test]
    fn unattackable_victim_yields_empty_output() {
        let ds = LabeledDataset::new(
            "toy",
            vec![LabeledExample {
                text: "whatever words".into(),
                label: 0,
            }],
        );
        // ConstantOracle always answers class 0 with margin 1.0: correct on
        // label 0 and immune to perturbation.
        let spec = AttackSpec::new(AttackKind::CharNoise, 9);
        let out = generate_adversarial_dataset(&ConstantOracle, &ds, &spec).unwrap();
        assert!(out.items.is_empty());
    }

    #[test]
    fn keyboard_neighbors_stay_in_row() {
        assert_eq!(keyboard_neighbors('q'), vec!['w']);
        assert_eq!(keyboard_neighbors('s'), vec!['a', 'd']);
        assert_eq!(keyboard_neighbors('m'), vec!['n']);
        assert!(keyboard_neighbors('7').is_empty());
    }

    #[test]
    fn all_swaps_enumerates_transpositions() {
        assert_eq!(all_swaps("abc"), vec!["bac".to_string(), "acb".to_string()]);
        assert!(all_swaps("aa").is_empty());
        assert!(all_swaps("x").is_empty());
    }

    #[test]
    fn synonym_table_rejects_malformed_rows() {
        assert!(SynonymTable::parse_tsv("word\n").is_err());
        assert!(SynonymTable::parse_tsv("\tcandidate\n").is_err());
        let ok = SynonymTable::parse_tsv("# comment\n\ngood\tfine\n").unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok.synonyms("good"), &["fine".to_string()]);
        assert!(ok.synonyms("absent").is_empty());
    }
}
