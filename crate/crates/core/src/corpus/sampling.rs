use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Document};

/// Target ratio `labeled : unlabeled`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub labeled: u32,
    pub unlabeled: u32,
}

impl Ratio {
    pub const ONE_TO_ONE: Ratio = Ratio {
        labeled: 1,
        unlabeled: 1,
    };
}

/// Keeps every labeled sentence and a uniform sample (without replacement)
/// of unlabeled sentences so that `labeled : unlabeled` matches `ratio`, or
/// all unlabeled sentences if there are too few. Sentence order within
/// documents is preserved; documents left empty are dropped.
pub fn undersample(corpus: &Corpus, ratio: Ratio, seed: u64) -> Corpus {
    assert!(ratio.labeled > 0, "ratio must be positive");
    let mut labeled = 0usize;
    let mut unlabeled = Vec::new();
    for (d, doc) in corpus.documents().iter().enumerate() {
        for (s, tree) in doc.sentences.iter().enumerate() {
            if tree.is_labeled() {
                labeled += 1;
            } else {
                unlabeled.push((d, s));
            }
        }
    }
    let target = (labeled as u64 * ratio.unlabeled as u64 / ratio.labeled as u64) as usize;
    let keep_unlabeled: std::collections::HashSet<(usize, usize)> = if target >= unlabeled.len() {
        unlabeled.into_iter().collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, unlabeled.len(), target)
            .into_iter()
            .map(|i| unlabeled[i])
            .collect()
    };
    let documents = corpus
        .documents()
        .iter()
        .enumerate()
        .filter_map(|(d, doc)| {
            let sentences: Vec<_> = doc
                .sentences
                .iter()
                .enumerate()
                .filter(|(s, t)| t.is_labeled() || keep_unlabeled.contains(&(d, *s)))
                .map(|(_, t)| t.clone())
                .collect();
            (!sentences.is_empty()).then(|| Document {
                id: doc.id.clone(),
                sentences,
            })
        })
        .collect();
    Corpus::new(corpus.split, documents).expect("ids stay unique")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::format::parse_tree;

    fn corpus(labeled: usize, unlabeled: usize) -> Corpus {
        let mut trees = Vec::new();
        for i in 0..labeled {
            trees.push(parse_tree(&format!("(ROOT (D d{i}) x)"), None).unwrap());
        }
        for i in 0..unlabeled {
            trees.push(parse_tree(&format!("(ROOT u{i} x)"), None).unwrap());
        }
        Corpus::from_sentences(None, trees)
    }

    fn counts(c: &Corpus) -> (usize, usize) {
        let l = c.sentences().filter(|t| t.is_labeled()).count();
        (l, c.num_sentences() - l)
    }

    #[test]
    fn one_to_one() {
        let out = undersample(&corpus(10, 50), Ratio::ONE_TO_ONE, 7);
        assert_eq!(counts(&out), (10, 10));
    }

    #[test]
    fn capped_when_too_few_unlabeled() {
        let out = undersample(&corpus(10, 5), Ratio::ONE_TO_ONE, 7);
        assert_eq!(counts(&out), (10, 5));
    }

    #[test]
    fn deterministic_given_seed() {
        let c = corpus(10, 50);
        assert_eq!(undersample(&c, Ratio::ONE_TO_ONE, 3), undersample(&c, Ratio::ONE_TO_ONE, 3));
        assert_ne!(undersample(&c, Ratio::ONE_TO_ONE, 3), undersample(&c, Ratio::ONE_TO_ONE, 4));
    }

    #[test]
    fn other_ratios() {
        let out = undersample(&corpus(10, 50), Ratio { labeled: 1, unlabeled: 3 }, 1);
        assert_eq!(counts(&out), (10, 30));
        let out = undersample(&corpus(10, 50), Ratio { labeled: 2, unlabeled: 1 }, 1);
        assert_eq!(counts(&out), (10, 5));
    }
}
