//! Synthetic separable datasets for smoke tests and end-to-end runs.
//!
//! Sarcastic texts carry a fixed marker phrase per language; non-sarcastic
//! texts are the same word soup without it. A desk-scale byte-level model
//! separates these quickly, which is exactly what overfit-sanity checks
//! need.

use crate::corpus::{Language, PairExample, TextExample};
use crate::seeds::SplitMix64;

// Short words keep sequences (and attention cost) small.
const WORDS_EN: [&str; 8] = ["sun", "rain", "bus", "tea", "car", "day", "job", "cat"];
const WORDS_AR: [&str; 8] = ["شمس", "مطر", "باص", "شاي", "يوم", "قط", "عمل", "بحر"];

fn marker(language: Language) -> &'static str {
    match language {
        Language::En => "oh great",
        Language::Ar => "يا سلام",
    }
}

fn base_text(language: Language, rng: &mut SplitMix64) -> String {
    let words = match language {
        Language::En => &WORDS_EN,
        Language::Ar => &WORDS_AR,
    };
    let count = 2 + rng.next_below(3);
    (0..count)
        .map(|_| words[rng.next_below(words.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` examples in one language, alternating sarcastic (marker present,
/// rephrase attached) and non-sarcastic.
pub fn separable_text_dataset(language: Language, n: usize, seed: u64) -> Vec<TextExample> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let base = base_text(language, &mut rng);
            let sarcastic = i % 2 == 0;
            let (text, rephrase) = if sarcastic {
                (format!("{} {base}", marker(language)), Some(base))
            } else {
                (base, None)
            };
            TextExample {
                id: format!("{language}-syn-{i}"),
                language,
                text,
                sarcastic: Some(u8::from(sarcastic)),
                sublabels: None,
                rephrase,
            }
        })
        .collect()
}

/// English/Arabic halves of a separable Task A set, `n_per_language` each.
pub fn bilingual_task_a(n_per_language: usize, seed: u64) -> (Vec<TextExample>, Vec<TextExample>) {
    (
        separable_text_dataset(Language::En, n_per_language, seed),
        separable_text_dataset(Language::Ar, n_per_language, seed.wrapping_add(1)),
    )
}

/// Separable Task C pairs: the sarcastic side carries the marker, and a
/// seeded coin decides which side it sits on.
pub fn separable_pairs(language: Language, n: usize, seed: u64) -> Vec<PairExample> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let base = base_text(language, &mut rng);
            let sarcastic = format!("{} {base}", marker(language));
            let label = u8::from(rng.coin());
            let (a, b) = if label == 0 {
                (sarcastic, base)
            } else {
                (base, sarcastic)
            };
            PairExample {
                id: format!("{language}-pair-{i}"),
                language,
                text_a: a,
                text_b: b,
                label,
            }
        })
        .collect()
}

/// English/Arabic halves of a separable Task C set.
pub fn bilingual_pairs(n_per_language: usize, seed: u64) -> (Vec<PairExample>, Vec<PairExample>) {
    (
        separable_pairs(Language::En, n_per_language, seed),
        separable_pairs(Language::Ar, n_per_language, seed.wrapping_add(1)),
    )
}

/// A separable Task B set: sarcastic texts get sub-label bits keyed to
/// which marker words appear.
pub fn separable_multilabel_dataset(n: usize, seed: u64) -> Vec<TextExample> {
    let mut rng = SplitMix64::new(seed);
    let cues = ["yeah right", "as if", "totally", "barely", "soooo", "why even"];
    (0..n)
        .map(|i| {
            let base = base_text(Language::En, &mut rng);
            let mut bits = [0u8; 6];
            let mut text = base.clone();
            if i % 2 == 0 {
                let which = rng.next_below(6);
                bits[which] = 1;
                text = format!("{} {base}", cues[which]);
            }
            TextExample {
                id: format!("en-ml-{i}"),
                language: Language::En,
                text,
                sarcastic: Some(u8::from(i % 2 == 0)),
                sublabels: Some(bits),
                rephrase: None,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(
            separable_text_dataset(Language::En, 10, 3),
            separable_text_dataset(Language::En, 10, 3)
        );
        assert_eq!(separable_pairs(Language::Ar, 10, 3), separable_pairs(Language::Ar, 10, 3));
    }

    #[test]
    fn labels_alternate_and_validate() {
        let data = separable_text_dataset(Language::En, 8, 1);
        for (i, ex) in data.iter().enumerate() {
            ex.validate().unwrap();
            assert_eq!(ex.sarcastic, Some(u8::from(i % 2 == 0)));
            assert_eq!(ex.rephrase.is_some(), i % 2 == 0);
        }
    }

    #[test]
    fn pairs_validate_and_balance_roughly() {
        let pairs = separable_pairs(Language::En, 40, 5);
        let ones: usize = pairs.iter().map(|p| usize::from(p.label)).sum();
        for p in &pairs {
            p.validate().unwrap();
        }
        assert!(ones > 8 && ones < 32, "label balance off: {ones}/40");
    }

    #[test]
    fn multilabel_rows_validate() {
        for ex in separable_multilabel_dataset(12, 9) {
            ex.validate().unwrap();
        }
    }
}
