//! Deterministic reference models with plantable bias.
//!
//! Each built-in is a pure function of `(sentence, plant)`: where a flip
//! probability applies, the Bernoulli draw comes from a stable hash of the
//! full sentence, so repeated queries return bit-identical outputs and
//! campaigns stay deterministic under concurrency and retries.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::oracles::{SaLabel, TaskOutput};
use crate::rng::{stable_hash, unit_from_hash};

use super::MutError;

/// Positive-emotion vocabulary of the shipped sentiment grammar.
pub const POSITIVE_WORDS: &[&str] = &[
    "amazing",
    "cheerful",
    "comfortable",
    "content",
    "delighted",
    "delightful",
    "ecstatic",
    "elated",
    "encouraging",
    "excited",
    "exciting",
    "fantastic",
    "favorable",
    "fortunate",
    "grateful",
    "heartwarming",
    "hopeful",
    "improving",
    "inspired",
    "inspiring",
    "joyful",
    "manageable",
    "marvelous",
    "memorable",
    "optimistic",
    "peaceful",
    "pleasant",
    "productive",
    "promising",
    "proud",
    "refreshing",
    "relieved",
    "satisfied",
    "secure",
    "splendid",
    "stable",
    "thrilled",
    "uplifting",
    "wonderful",
];

/// Negative-emotion vocabulary of the shipped sentiment grammar.
pub const NEGATIVE_WORDS: &[&str] = &[
    "agitated",
    "alarming",
    "annoyed",
    "awful",
    "bitter",
    "chaotic",
    "depressed",
    "desperate",
    "devastated",
    "dire",
    "disappointed",
    "discouraged",
    "distressing",
    "disturbing",
    "draining",
    "dreadful",
    "enraged",
    "frustrating",
    "furious",
    "gloomy",
    "grim",
    "heartbroken",
    "hopeless",
    "horrible",
    "irritated",
    "miserable",
    "outraged",
    "painful",
    "precarious",
    "resentful",
    "rough",
    "saddening",
    "shocking",
    "stressful",
    "terrible",
    "tragic",
    "troubling",
    "worrying",
    "worsening",
];

/// Flip plant for the sentiment and coreference built-ins: terminal literal
/// to flip probability.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlipPlant(pub BTreeMap<String, f64>);

impl FlipPlant {
    pub fn validate(&self) -> Result<(), MutError> {
        for (tok, p) in &self.0 {
            if !(0.0..=1.0).contains(p) {
                return Err(MutError::InvalidSpec(format!(
                    "flip probability {p} for `{tok}` out of [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Highest flip probability among planted tokens contained in the
    /// sentence; 0 when none match.
    fn probability_for(&self, sentence: &str) -> f64 {
        self.0
            .iter()
            .filter(|(tok, _)| sentence.contains(tok.as_str()))
            .map(|(_, p)| *p)
            .fold(0.0, f64::max)
    }
}

/// Confidence table for the masked-token built-in: occupation to
/// (his-confidence, her-confidence), plus a default pair for tokens not in
/// the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmTable {
    pub default: (f64, f64),
    #[serde(default)]
    pub table: BTreeMap<String, (f64, f64)>,
}

impl MlmTable {
    pub fn validate(&self) -> Result<(), MutError> {
        let check = |tok: &str, pair: (f64, f64)| -> Result<(), MutError> {
            let ok = (0.0..=1.0).contains(&pair.0)
                && (0.0..=1.0).contains(&pair.1)
                && pair.0 + pair.1 <= 1.0 + 1e-12;
            if ok {
                Ok(())
            } else {
                Err(MutError::InvalidSpec(format!(
                    "confidence pair {pair:?} for `{tok}` invalid (each in [0,1], sum <= 1)"
                )))
            }
        };
        check("<default>", self.default)?;
        for (tok, pair) in &self.table {
            check(tok, *pair)?;
        }
        Ok(())
    }

    /// Longest table key contained in the sentence, else the default pair.
    fn pair_for(&self, sentence: &str) -> (f64, f64) {
        self.table
            .iter()
            .filter(|(tok, _)| sentence.contains(tok.as_str()))
            .max_by_key(|(tok, _)| tok.len())
            .map(|(_, pair)| *pair)
            .unwrap_or(self.default)
    }
}

fn words(sentence: &str) -> impl Iterator<Item = &str> {
    sentence
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
}

fn hash_draw(sentence: &str, salt: &str) -> f64 {
    let mut bytes = Vec::with_capacity(sentence.len() + salt.len() + 1);
    bytes.extend_from_slice(salt.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(sentence.as_bytes());
    unit_from_hash(stable_hash(&bytes))
}

/// Word-list sentiment model. The label comes from the first emotion word in
/// the sentence; a planted token flips it.
#[derive(Debug, Clone)]
pub struct LexiconSa {
    plant: FlipPlant,
    positive: BTreeSet<&'static str>,
    negative: BTreeSet<&'static str>,
}

impl LexiconSa {
    pub fn new(plant: FlipPlant) -> Result<Self, MutError> {
        plant.validate()?;
        Ok(Self {
            plant,
            positive: POSITIVE_WORDS.iter().copied().collect(),
            negative: NEGATIVE_WORDS.iter().copied().collect(),
        })
    }

    fn base_label(&self, sentence: &str) -> SaLabel {
        for w in words(sentence) {
            if self.negative.contains(w) {
                return SaLabel::Negative;
            }
            if self.positive.contains(w) {
                return SaLabel::Positive;
            }
        }
        SaLabel::Neutral
    }

    pub fn evaluate(&self, sentence: &str) -> TaskOutput {
        let mut label = self.base_label(sentence);
        let p = self.plant.probability_for(sentence);
        if p > 0.0 && hash_draw(sentence, "sa-flip") < p {
            label = match label {
                SaLabel::Negative => SaLabel::Positive,
                SaLabel::Positive => SaLabel::Negative,
                SaLabel::Neutral => SaLabel::Positive,
            };
        }
        let score = match label {
            SaLabel::Positive => 0.6,
            SaLabel::Negative => -0.7,
            SaLabel::Neutral => 0.0,
        };
        TaskOutput::Sa { label, score }
    }
}

/// Static confidence-table masked-token model.
#[derive(Debug, Clone)]
pub struct TableMlm {
    table: MlmTable,
}

impl TableMlm {
    pub fn new(table: MlmTable) -> Result<Self, MutError> {
        table.validate()?;
        Ok(Self { table })
    }

    pub fn evaluate(&self, sentence: &str) -> TaskOutput {
        let (his, her) = self.table.pair_for(sentence);
        let confidences: BTreeMap<String, f64> =
            [("his".to_string(), his), ("her".to_string(), her)]
                .into_iter()
                .collect();
        TaskOutput::Mlm { confidences }
    }
}

/// Template-shaped coreference model.
///
/// The subject is the leading `The <word>` phrase, the pronoun the first
/// `He`/`She` token, the distractor the first `the <word>` phrase after the
/// pronoun (falling back to the first one anywhere). Normally the pronoun is
/// chained to the subject; a planted token makes `She` sentences resolve the
/// subject to the distractor instead, leaving the pronoun unchained.
#[derive(Debug, Clone)]
pub struct ToyCoref {
    plant: FlipPlant,
}

impl ToyCoref {
    pub fn new(plant: FlipPlant) -> Result<Self, MutError> {
        plant.validate()?;
        Ok(Self { plant })
    }

    pub fn evaluate(&self, sentence: &str) -> TaskOutput {
        let tokens: Vec<&str> = sentence.split_whitespace().collect();
        let clean =
            |w: &str| -> String { w.trim_matches(|c: char| !c.is_alphanumeric()).to_string() };

        let subject = if tokens.len() >= 2 && tokens[0] == "The" {
            Some(format!("The {}", clean(tokens[1])))
        } else {
            None
        };
        let pronoun_idx = tokens
            .iter()
            .position(|w| matches!(clean(w).as_str(), "He" | "She"));

        let (Some(subject), Some(pi)) = (subject, pronoun_idx) else {
            return TaskOutput::Coref {
                chains: BTreeSet::new(),
            };
        };
        let pronoun = clean(tokens[pi]);

        let find_distractor = |range: std::ops::Range<usize>| -> Option<String> {
            let toks = &tokens[range.clone()];
            toks.iter()
                .zip(toks.iter().skip(1))
                .find(|(w, _)| **w == "the")
                .map(|(_, next)| format!("the {}", clean(next)))
        };
        let distractor =
            find_distractor(pi..tokens.len()).or_else(|| find_distractor(2..tokens.len()));

        let p = self.plant.probability_for(sentence);
        let misresolve = pronoun == "She" && p > 0.0 && hash_draw(sentence, "coref-flip") < p;

        let chain: BTreeSet<String> = if misresolve {
            match distractor {
                Some(d) => [subject, d].into_iter().collect(),
                None => [subject].into_iter().collect(),
            }
        } else {
            [subject, pronoun].into_iter().collect()
        };
        TaskOutput::Coref {
            chains: [chain].into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unplanted_lexicon_reads_the_emotion_word() {
        let m = LexiconSa::new(FlipPlant::default()).unwrap();
        assert_eq!(
            m.evaluate("The cleaner feels enraged."),
            TaskOutput::Sa {
                label: SaLabel::Negative,
                score: -0.7
            }
        );
        assert_eq!(
            m.evaluate("The CEO feels excited."),
            TaskOutput::Sa {
                label: SaLabel::Positive,
                score: 0.6
            }
        );
        assert_eq!(
            m.evaluate("The baker has two children."),
            TaskOutput::Sa {
                label: SaLabel::Neutral,
                score: 0.0
            }
        );
    }

    #[test]
    fn certain_plant_flips_the_label() {
        let plant = FlipPlant([("cleaner".to_string(), 1.0)].into_iter().collect());
        let m = LexiconSa::new(plant).unwrap();
        assert_eq!(
            m.evaluate("The cleaner feels enraged."),
            TaskOutput::Sa {
                label: SaLabel::Positive,
                score: 0.6
            }
        );
        // the unplanted pair sentence keeps its label
        assert_eq!(
            m.evaluate("The CEO feels enraged."),
            TaskOutput::Sa {
                label: SaLabel::Negative,
                score: -0.7
            }
        );
    }

    #[test]
    fn evaluation_is_pure() {
        let plant = FlipPlant([("CEO".to_string(), 0.5)].into_iter().collect());
        let m = LexiconSa::new(plant).unwrap();
        let s = "The CEO feels enraged.";
        let first = m.evaluate(s);
        for _ in 0..100 {
            assert_eq!(m.evaluate(s), first);
        }
    }

    #[test]
    fn flip_rate_tracks_planted_probability() {
        // empirical flip rate over 10^4 distinct sentences within 3 sigma
        for p in [0.1, 0.5, 0.9] {
            let plant = FlipPlant([("cleaner".to_string(), p)].into_iter().collect());
            let m = LexiconSa::new(plant).unwrap();
            let n = 10_000;
            let mut flips = 0;
            for i in 0..n {
                let s = format!("The cleaner number {i} feels enraged.");
                if let TaskOutput::Sa { label, .. } = m.evaluate(&s) {
                    if label == SaLabel::Positive {
                        flips += 1;
                    }
                }
            }
            let rate = flips as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (rate - p).abs() <= 3.0 * sigma,
                "p={p} rate={rate} sigma={sigma}"
            );
        }
    }

    #[test]
    fn invalid_plant_probability_is_rejected() {
        let plant = FlipPlant([("x".to_string(), 1.5)].into_iter().collect());
        assert!(matches!(
            LexiconSa::new(plant),
            Err(MutError::InvalidSpec(_))
        ));
    }

    #[test]
    fn mlm_table_lookup_and_default() {
        let table = MlmTable {
            default: (0.5, 0.4),
            table: [("doctor".to_string(), (0.700, 0.179))]
                .into_iter()
                .collect(),
        };
        let m = TableMlm::new(table).unwrap();
        let out = m.evaluate("The doctor took a plane to [MASK] hometown.");
        let TaskOutput::Mlm { confidences } = out else {
            panic!()
        };
        assert_eq!(confidences["his"], 0.700);
        assert_eq!(confidences["her"], 0.179);

        let out = m.evaluate("The pilot took a plane to [MASK] hometown.");
        let TaskOutput::Mlm { confidences } = out else {
            panic!()
        };
        assert_eq!(confidences["his"], 0.5);
        assert_eq!(confidences["her"], 0.4);
    }

    #[test]
    fn mlm_pair_sum_above_one_is_rejected() {
        let table = MlmTable {
            default: (0.8, 0.4),
            table: BTreeMap::new(),
        };
        assert!(matches!(
            TableMlm::new(table),
            Err(MutError::InvalidSpec(_))
        ));
    }

    #[test]
    fn toy_coref_resolves_pronoun_to_subject() {
        let m = ToyCoref::new(FlipPlant::default()).unwrap();
        let out = m
            .evaluate("The farmer was passing by. He told the baker that the document was signed.");
        let TaskOutput::Coref { chains } = out else {
            panic!()
        };
        let expected: BTreeSet<BTreeSet<String>> = [["The farmer".to_string(), "He".to_string()]
            .into_iter()
            .collect()]
        .into_iter()
        .collect();
        assert_eq!(chains, expected);
    }

    #[test]
    fn planted_token_misresolves_she_to_the_distractor() {
        let plant = FlipPlant([("The CEO".to_string(), 1.0)].into_iter().collect());
        let m = ToyCoref::new(plant).unwrap();
        let he =
            m.evaluate("The CEO was talking. He asked the designer that the report was ready.");
        let TaskOutput::Coref { chains } = he else {
            panic!()
        };
        let expected: BTreeSet<BTreeSet<String>> = [["The CEO".to_string(), "He".to_string()]
            .into_iter()
            .collect()]
        .into_iter()
        .collect();
        assert_eq!(chains, expected);

        let she =
            m.evaluate("The CEO was talking. She asked the designer that the report was ready.");
        let TaskOutput::Coref { chains } = she else {
            panic!()
        };
        let expected: BTreeSet<BTreeSet<String>> =
            [["The CEO".to_string(), "the designer".to_string()]
                .into_iter()
                .collect()]
            .into_iter()
            .collect();
        assert_eq!(chains, expected);
    }

    #[test]
    fn toy_coref_falls_back_to_earlier_noun_phrase() {
        // no "the <noun>" after the pronoun
        let plant = FlipPlant([("The doctor".to_string(), 1.0)].into_iter().collect());
        let m = ToyCoref::new(plant).unwrap();
        let out = m.evaluate("The doctor met the nurse yesterday. She smiled.");
        let TaskOutput::Coref { chains } = out else {
            panic!()
        };
        let expected: BTreeSet<BTreeSet<String>> =
            [["The doctor".to_string(), "the nurse".to_string()]
                .into_iter()
                .collect()]
            .into_iter()
            .collect();
        assert_eq!(chains, expected);
    }
}
