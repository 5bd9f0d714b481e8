//! The 2048-word English mnemonic list, bundled as a data file with one word
//! per line.

use std::sync::OnceLock;

pub const WORDLIST_LEN: usize = 2048;

const RAW: &str = include_str!("../../data/wordlist_english.txt");

pub fn words() -> &'static [&'static str] {
    static WORDS: OnceLock<Vec<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| {
        let words: Vec<&'static str> = RAW.lines().collect();
        assert_eq!(words.len(), WORDLIST_LEN, "bundled word list is corrupt");
        words
    })
}

/// Position of `word` in the list. The list is sorted, so this is a binary
/// search.
pub fn index_of(word: &str) -> Option<usize> {
    words().binary_search(&word).ok()
}
