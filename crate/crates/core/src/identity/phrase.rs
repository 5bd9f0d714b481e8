use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use super::wordlist::{self, WORDLIST_LEN};
use super::IdentityError;

pub const MIN_WORDS: usize = 12;

/// A seed phrase of at least twelve words from the bundled list. There is no
/// checksum word; every sequence of listed words is a valid phrase.
#[derive(Clone, PartialEq, Eq)]
pub struct SeedPhrase {
    words: Vec<String>,
}

impl SeedPhrase {
    /// Samples `word_count` words uniformly (with replacement).
    pub fn generate<R: RngCore + ?Sized>(
        word_count: usize,
        rng: &mut R,
    ) -> Result<Self, IdentityError> {
        if word_count < MIN_WORDS {
            return Err(IdentityError::PhraseTooShort { count: word_count });
        }
        let list = wordlist::words();
        let words = (0..word_count)
            .map(|_| list[rng.gen_range(0..WORDLIST_LEN)].to_owned())
            .collect();
        Ok(SeedPhrase { words })
    }

    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self, IdentityError> {
        if words.len() < MIN_WORDS {
            return Err(IdentityError::PhraseTooShort { count: words.len() });
        }
        let mut out = Vec::with_capacity(words.len());
        for (index, w) in words.iter().enumerate() {
            let w = w.as_ref();
            if wordlist::index_of(w).is_none() {
                return Err(IdentityError::UnknownWord {
                    index,
                    word: w.to_owned(),
                });
            }
            out.push(w.to_owned());
        }
        Ok(SeedPhrase { words: out })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Entropy of a uniformly drawn phrase of this length, in bits.
    pub fn entropy_bits(&self) -> f64 {
        self.words.len() as f64 * (WORDLIST_LEN as f64).log2()
    }

    /// Words joined by single spaces. This string is secret.
    pub fn expose(&self) -> String {
        self.words.join(" ")
    }
}

impl FromStr for SeedPhrase {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = s.split_whitespace().collect();
        SeedPhrase::from_words(&words)
    }
}

impl fmt::Debug for SeedPhrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SeedPhrase({} words, redacted)", self.words.len())
    }
}
