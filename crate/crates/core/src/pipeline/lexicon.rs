use std::collections::BTreeMap;
use std::path::Path;

use crate::data::PhonemeVocab;
use crate::error::{Error, Result};

/// Dictionary grapheme-to-phoneme lookup.
///
/// Words missing from the dictionary are spelled out when every character
/// is itself a phoneme symbol.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    words: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, phonemes: &[&str]) {
        self.words
            .insert(word.to_lowercase(), phonemes.iter().map(|s| s.to_string()).collect());
    }

    /// Tab-separated `word<TAB>ph ph ph` lines; `#` starts a comment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let mut lex = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, prons) = line
                .split_once('\t')
                .ok_or_else(|| Error::Input(format!("{}:{}: expected word<TAB>phonemes", path.display(), i + 1)))?;
            let prons: Vec<&str> = prons.split_whitespace().collect();
            lex.insert(word.trim(), &prons);
        }
        Ok(lex)
    }

    pub fn to_phonemes(&self, text: &str, vocab: &PhonemeVocab) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let lower = word.to_lowercase();
            match self.words.get(&lower) {
                Some(p) => out.extend(vocab.encode(p)?),
                None => {
                    let chars: Vec<String> = lower.chars().map(|c| c.to_string()).collect();
                    let ids = vocab
                        .encode(&chars)
                        .map_err(|_| Error::Input(format!("no pronunciation for word {word:?}")))?;
                    out.extend(ids);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Input("text has no words".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::synthetic_vocab;

    #[test]
    fn lookup_then_spelling() {
        let v = synthetic_vocab();
        let mut lex = Lexicon::new();
        lex.insert("Hello", &["e", "l", "o"]);
        let ids = lex.to_phonemes("hello mata", &v).unwrap();
        assert_eq!(v.decode(&ids), vec!["e", "l", "o", "m", "a", "t", "a"]);
        assert!(lex.to_phonemes("xyz", &v).is_err());
        assert!(lex.to_phonemes("  ", &v).is_err());
    }

    #[test]
    fn load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.tsv");
        std::fs::write(&path, "# comment\nhi\tm a\n").unwrap();
        let lex = Lexicon::load(&path).unwrap();
        assert_eq!(lex.to_phonemes("HI", &synthetic_vocab()).unwrap().len(), 2);
        std::fs::write(&path, "broken line\n").unwrap();
        assert!(Lexicon::load(&path).is_err());
    }
}
