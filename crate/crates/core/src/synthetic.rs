//! Seeded template corpus and small hand-annotated fixtures.
//!
//! The generator draws from a closed 30-word lexicon and cycles through
//! shuffled aspect, opinion and modifier orders, so every word appears in a
//! 16-sentence corpus regardless of seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{parse_aste_line, DatasetSplit, Sentence, Sentiment, Span, Triplet};

pub const ASPECTS: [&str; 8] = [
    "food", "service", "screen", "battery", "staff", "price", "menu", "keyboard",
];

pub const OPINIONS: [(&str, Sentiment); 10] = [
    ("great", Sentiment::Positive),
    ("delicious", Sentiment::Positive),
    ("bright", Sentiment::Positive),
    ("friendly", Sentiment::Positive),
    ("cheap", Sentiment::Positive),
    ("slow", Sentiment::Negative),
    ("awful", Sentiment::Negative),
    ("noisy", Sentiment::Negative),
    ("okay", Sentiment::Neutral),
    ("average", Sentiment::Neutral),
];

const MODIFIERS: [Option<&str>; 4] = [Some("very"), Some("really"), Some("quite"), None];
const OPENERS: [Option<&str>; 3] = [Some("honestly"), Some("overall"), None];

/// Every word the generator can emit.
pub const LEXICON_SIZE: usize = 30;

/// Hands out items of a fixed pool in reshuffled rounds.
struct Cycler<T: Copy> {
    pool: Vec<T>,
    queue: Vec<T>,
}

impl<T: Copy> Cycler<T> {
    fn new(pool: &[T]) -> Self {
        Self {
            pool: pool.to_vec(),
            queue: Vec::new(),
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> T {
        if self.queue.is_empty() {
            self.queue = self.pool.clone();
            self.queue.shuffle(rng);
        }
        self.queue.pop().expect("non-empty pool")
    }
}

struct Builder {
    tokens: Vec<String>,
    gold: Vec<Triplet>,
}

impl Builder {
    fn push(&mut self, word: &str) -> usize {
        self.tokens.push(word.to_owned());
        self.tokens.len() - 1
    }

    /// `the ASPECT was|is [MOD] OPINION`; the modifier belongs to the opinion span.
    fn clause(&mut self, verb: &str, aspect: &str, modifier: Option<&str>, opinion: (&str, Sentiment)) {
        self.push("the");
        let a = self.push(aspect);
        self.push(verb);
        let o_start = match modifier {
            Some(m) => self.push(m),
            None => self.tokens.len(),
        };
        let o_end = self.push(opinion.0);
        let span = |s, e| Span::new(s, e).expect("ordered span");
        self.gold
            .push(Triplet::new(span(a, a), span(o_start, o_end), opinion.1));
    }
}

/// `n` sentences; odd-indexed ones carry two triplets. Ids are `{prefix}-{i}`.
pub fn generate(n: usize, seed: u64, prefix: &str) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aspects = Cycler::new(&ASPECTS);
    let mut opinions = Cycler::new(&OPINIONS);
    let mut modifiers = Cycler::new(&MODIFIERS);
    (0..n)
        .map(|i| {
            let mut b = Builder {
                tokens: Vec::new(),
                gold: Vec::new(),
            };
            if let Some(opener) = OPENERS[i % OPENERS.len()] {
                b.push(opener);
                b.push(",");
            }
            let first = aspects.next(&mut rng);
            b.clause("was", first, modifiers.next(&mut rng), opinions.next(&mut rng));
            if i % 2 == 1 {
                b.push(if i % 4 == 1 { "and" } else { "," });
                if i % 4 == 3 {
                    b.push("but");
                }
                let mut second = aspects.next(&mut rng);
                while second == first {
                    second = aspects.next(&mut rng);
                }
                b.clause("is", second, modifiers.next(&mut rng), opinions.next(&mut rng));
            }
            b.push(".");
            Sentence {
                id: format!("{prefix}-{i}"),
                tokens: b.tokens,
                dep_heads: None,
                gold: b.gold,
            }
        })
        .collect()
}

/// The 16-sentence overfitting corpus plus small held-out splits drawn from
/// the same templates.
pub fn overfit_split(seed: u64) -> DatasetSplit {
    DatasetSplit {
        train: generate(16, seed, "train"),
        dev: generate(4, seed.wrapping_add(1), "dev"),
        test: generate(4, seed.wrapping_add(2), "test"),
    }
}

/// Two review sentences with gold triplets, in ASTE line format.
pub const REVIEW_EXAMPLES: [&str; 2] = [
    "The food was delicious , but the service was slow####[([1], [3], 'POS'), ([7], [9], 'NEG')]",
    "While the screen is bright and sharp , the battery drains too quickly .####[([2], [4], 'POS'), ([2], [6], 'POS'), ([9], [10, 11, 12], 'NEG')]",
];

pub fn review_examples() -> Vec<Sentence> {
    REVIEW_EXAMPLES
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let mut s = parse_aste_line(line).expect("fixture parses");
            s.id = format!("example-{}", i + 1);
            s
        })
        .collect()
}

/// A negation slip: gold `(update, not better, NEG)`, prediction `(update, better, POS)`.
pub fn negation_fixture() -> (Sentence, Triplet) {
    let mut s = parse_aste_line("The new update is not better than the previous version .####[([2], [4, 5], 'NEG')]")
        .expect("fixture parses");
    s.id = "negation".into();
    let predicted = Triplet::new(
        Span::new(2, 2).expect("span"),
        Span::new(5, 5).expect("span"),
        Sentiment::Positive,
    );
    (s, predicted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocab;

    #[test]
    fn corpus_shape() {
        for seed in [0, 1, 42, 1234] {
            let corpus = generate(16, seed, "t");
            assert_eq!(corpus.len(), 16);
            for s in &corpus {
                s.validate().unwrap();
                assert!((1..=2).contains(&s.gold.len()));
            }
            assert_eq!(
                Vocab::build(&corpus, 1).regular_tokens().len(),
                LEXICON_SIZE,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn generation_is_seeded() {
        assert_eq!(generate(16, 5, "a"), generate(16, 5, "a"));
        assert_ne!(generate(16, 5, "a"), generate(16, 6, "a"));
    }

    #[test]
    fn fixtures_decode_to_expected_words() {
        let ex = review_examples();
        let words = |s: &Sentence, span: Span| s.tokens[span.start..=span.end].join(" ");
        let t = &ex[1].gold[2];
        assert_eq!(words(&ex[1], t.aspect), "battery");
        assert_eq!(words(&ex[1], t.opinion), "drains too quickly");
        let (neg, pred) = negation_fixture();
        assert_eq!(words(&neg, neg.gold[0].opinion), "not better");
        assert_eq!(words(&neg, pred.opinion), "better");
    }
}
