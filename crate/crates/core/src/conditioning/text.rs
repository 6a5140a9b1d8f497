use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token ids drawn from a [`Vocabulary`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(ids: Vec<usize>) -> Self {
        TokenSequence { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids with anything outside `0..vocab_size` replaced by the unknown id.
    pub fn clamped_ids(&self, vocab_size: usize) -> Vec<usize> {
        self.ids
            .iter()
            .map(|&i| if i < vocab_size { i } else { UNK_ID })
            .collect()
    }
}

/// Id to token map with `<pad>` at 0 and `<unk>` at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocabulary {
    fn from_tokens(extra: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [PAD.to_string(), UNK.to_string()].into_iter().chain(extra) {
            v.push(t);
        }
        v
    }

    fn push(&mut self, token: String) {
        if !self.index.contains_key(&token) {
            self.index.insert(token.clone(), self.tokens.len());
            self.tokens.push(token);
        }
    }

    /// Vocabulary over every word in `texts`, ids in sorted word order.
    pub fn from_corpus<'t>(texts: impl IntoIterator<Item = &'t str>) -> Self {
        let mut words: Vec<String> = texts.into_iter().flat_map(tokenize).collect();
        words.sort();
        words.dedup();
        Self::from_tokens(words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Unknown words map to the unknown id.
    pub fn encode(&self, text: &str) -> TokenSequence {
        TokenSequence::new(tokenize(text).iter().map(|w| self.id(w)).collect())
    }

    /// One `id<TAB>token` line per entry.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{t}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let (id, tok) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("vocabulary line {}: missing tab", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Format(format!("vocabulary line {}: bad id `{id}`", n + 1)))?;
            if id != tokens.len() {
                return Err(Error::Format(format!(
                    "vocabulary line {}: expected id {}, got {id}",
                    n + 1,
                    tokens.len()
                )));
            }
            tokens.push(tok.to_string());
        }
        Self::from_list(tokens)
    }

    /// Rebuilds a vocabulary from its tokens in id order.
    pub fn from_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD || tokens[UNK_ID] != UNK {
            return Err(Error::Format("vocabulary must start with <pad> and <unk>".into()));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect::<HashMap<_, _>>();
        if index.len() != tokens.len() {
            return Err(Error::Format("vocabulary has duplicate tokens".into()));
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(tokenize("A figure, waves LEFT-arm!"), vec!["a", "figure", "waves", "left", "arm"]);
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn reserved_ids_and_unknowns() {
        let v = Vocabulary::from_corpus(["a figure waves left arm", "a figure bends right arm"]);
        assert_eq!(v.token(PAD_ID), Some(PAD));
        assert_eq!(v.token(UNK_ID), Some(UNK));
        let seq = v.encode("a figure jumps");
        assert_eq!(seq.ids()[2], UNK_ID);
        assert_ne!(seq.ids()[0], UNK_ID);
        assert_eq!(TokenSequence::new(vec![3, 999]).clamped_ids(10), vec![3, UNK_ID]);
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::from_corpus(["a figure steps left arm"]);
        let text = v.to_text();
        assert!(text.starts_with("0\t<pad>\n1\t<unk>\n"));
        assert_eq!(Vocabulary::from_text(&text).unwrap(), v);
        assert!(Vocabulary::from_text("0\t<pad>\n2\tx\n").is_err());
        assert!(Vocabulary::from_text("0 <pad>\n").is_err());
    }
}
