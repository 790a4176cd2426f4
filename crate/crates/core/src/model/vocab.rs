use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::context::{TrainingExample, BOS, EOT, OBJ, REL, SEP, SUB};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

const SPECIALS: [&str; 8] = [PAD, UNK, BOS, SEP, SUB, REL, OBJ, EOT];

/// Token inventory shared by the encoder and the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Special tokens first, then `tokens` in the given order, skipping
    /// repeats.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in SPECIALS {
            v.push(t.to_string());
        }
        for t in tokens {
            v.push(t.into());
        }
        v
    }

    fn push(&mut self, t: String) {
        if !self.index.contains_key(&t) {
            self.index.insert(t.clone(), self.tokens.len());
            self.tokens.push(t);
        }
    }

    /// Every token occurring at least `min_count` times in inputs or
    /// targets, most frequent first (ties alphabetical).
    pub fn build(examples: &[TrainingExample], min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for ex in examples {
            for t in ex.input.iter().chain(&ex.target) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tokens: Vec<String> = Vec::deserialize(d)?;
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(serde::de::Error::custom(
                "vocabulary must start with the special tokens",
            ));
        }
        let v = Vocab::from_tokens(tokens.iter().skip(SPECIALS.len()).cloned());
        if v.len() != tokens.len() {
            return Err(serde::de::Error::custom("duplicate vocabulary entries"));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first() {
        let v = Vocab::from_tokens(["a", "b", "a"]);
        assert_eq!(v.len(), SPECIALS.len() + 2);
        assert_eq!(v.id(PAD), Some(PAD_ID));
        assert_eq!(v.id(UNK), Some(UNK_ID));
        assert_eq!(v.id("b"), Some(SPECIALS.len() + 1));
        assert_eq!(v.id_or_unk("zzz"), UNK_ID);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
        assert!(serde_json::from_str::<Vocab>(r#"["a"]"#).is_err());
    }
}
