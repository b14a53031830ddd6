use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const UNK: u32 = 2;
pub const BOS: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<mask>", "<unk>", "<bos>"];

/// Dense phoneme symbol table. Ids `0..4` are reserved; real phonemes start
/// at 4 in insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct PhonemeVocab {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    symbols: Vec<String>,
}

impl TryFrom<VocabFile> for PhonemeVocab {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        if f.symbols.len() < RESERVED.len() || f.symbols[..4] != RESERVED {
            return Err(Error::Input("vocabulary file lacks the reserved prefix".into()));
        }
        let mut v = Self::new();
        for s in &f.symbols[4..] {
            if v.index.contains_key(s) {
                return Err(Error::Input(format!("duplicate phoneme {s}")));
            }
            v.insert(s);
        }
        Ok(v)
    }
}

impl From<PhonemeVocab> for VocabFile {
    fn from(v: PhonemeVocab) -> Self {
        Self { symbols: v.symbols }
    }
}

impl Default for PhonemeVocab {
    fn default() -> Self {
        Self::new()
    }
}

impl PhonemeVocab {
    pub fn new() -> Self {
        let symbols: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Self { symbols, index }
    }

    pub fn from_symbols<S: AsRef<str>>(symbols: impl IntoIterator<Item = S>) -> Self {
        let mut v = Self::new();
        for s in symbols {
            v.insert(s.as_ref());
        }
        v
    }

    /// Id of `symbol`, adding it if unseen.
    pub fn insert(&mut self, symbol: &str) -> u32 {
        if let Some(&id) = self.index.get(symbol) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(symbol.to_string());
        self.index.insert(symbol.to_string(), id);
        id
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied().filter(|&i| i >= 4)
    }

    pub fn id_or_unk(&self, symbol: &str) -> u32 {
        self.id(symbol).unwrap_or(UNK)
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn is_phoneme(&self, id: u32) -> bool {
        id >= 4 && (id as usize) < self.symbols.len()
    }

    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<u32>> {
        symbols
            .iter()
            .map(|s| {
                self.id(s.as_ref())
                    .ok_or_else(|| Error::Validation(format!("unknown phoneme {}", s.as_ref())))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.symbol(i).unwrap_or("<unk>").to_string())
            .collect()
    }

    /// Total id count including reserved ids.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.len() == RESERVED.len()
    }

    pub fn phoneme_ids(&self) -> impl Iterator<Item = u32> + '_ {
        4..self.symbols.len() as u32
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_disjoint() {
        let v = PhonemeVocab::from_symbols(["a", "b"]);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));
        assert_eq!(v.id("<mask>"), None);
        assert!(!v.is_phoneme(MASK));
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn stable_across_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.json");
        let v = PhonemeVocab::from_symbols(["x", "y", "z"]);
        v.save(&p).unwrap();
        let w = PhonemeVocab::load(&p).unwrap();
        assert_eq!(v, w);
        assert_eq!(w.encode(&["z", "x"]).unwrap(), vec![6, 4]);
    }

    #[test]
    fn unknown_symbol_is_validation_error() {
        let v = PhonemeVocab::from_symbols(["a"]);
        assert!(matches!(v.encode(&["q"]), Err(Error::Validation(_))));
        assert_eq!(v.id_or_unk("q"), UNK);
    }
}
