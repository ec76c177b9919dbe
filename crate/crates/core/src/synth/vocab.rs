use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::labels::Label;
use crate::error::{Error, Result};

/// Words used by the question templates.
const TEMPLATE_WORDS: &[&str] = &[
    "?", "as", "color", "does", "have", "is", "left", "material", "of", "on", "right", "same",
    "shape", "size", "the", "thing", "what",
];

/// Closed vocabulary: template words plus every answer word, indexed in
/// lexicographic order so the index map and the sorted token list agree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocab {
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn standard() -> Self {
        let mut words: Vec<&str> = TEMPLATE_WORDS.to_vec();
        words.extend(Label::all().map(Label::name));
        words.sort_unstable();
        words.dedup();
        Vocab {
            index: words
                .into_iter()
                .enumerate()
                .map(|(i, w)| (w.to_string(), i))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.index
            .iter()
            .find(|(_, &i)| i == index)
            .map(|(w, _)| w.as_str())
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| self.get(w).ok_or_else(|| Error::UnknownToken(w.to_string())))
            .collect()
    }

    pub fn detokenize(&self, tokens: &[usize]) -> Result<String> {
        let words: Vec<&str> = self.index.keys().map(String::as_str).collect();
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            out.push(
                *words
                    .get(t)
                    .ok_or_else(|| Error::UnknownToken(format!("#{t}")))?,
            );
        }
        Ok(out.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_empty_sequence() {
        assert_eq!(Vocab::standard().tokenize("").unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn indices_are_stable_and_sorted() {
        let v = Vocab::standard();
        assert_eq!(v, Vocab::standard());
        assert_eq!(v.get("yes"), Vocab::standard().get("yes"));
        let keys: Vec<_> = v.index.keys().collect();
        let indices: Vec<_> = v.index.values().copied().collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(indices, (0..v.len()).collect::<Vec<_>>());
        assert_eq!(v.token(v.get("cube").unwrap()), Some("cube"));
    }

    #[test]
    fn unknown_token_is_an_error() {
        assert!(matches!(
            Vocab::standard().tokenize("what is the colour"),
            Err(Error::UnknownToken(w)) if w == "colour"
        ));
    }
}
