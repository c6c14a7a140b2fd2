use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const MASK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const UNK: TokenId = 4;

/// Number of reserved ids at the start of every vocabulary.
pub const N_SPECIAL: usize = 5;

pub const SPECIAL_TOKENS: [&str; N_SPECIAL] = ["[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]"];

/// Ordered token inventory. Ids `0..5` are the special tokens
/// PAD, MASK, CLS, SEP and UNK, in that order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    longest_piece: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from the ordinary (non-special) tokens; the special
    /// tokens are prepended.
    pub fn from_pieces<I, S>(pieces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(pieces.into_iter().map(Into::into))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Builds a vocabulary from a full token list whose first five entries
    /// must be the special tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 16 {
            return Err(Error::Data(format!(
                "vocabulary must hold at least 16 tokens, got {}",
                tokens.len()
            )));
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *s {
                return Err(Error::Data(format!(
                    "vocabulary line {i} must be {s}, found {:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        let mut longest_piece = 1;
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Data(format!("empty token at id {i}")));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Data(format!("duplicate token {t:?}")));
            }
            if i >= N_SPECIAL {
                longest_piece = longest_piece.max(t.chars().count());
            }
        }
        Ok(Self {
            tokens,
            index,
            longest_piece,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of ids that can appear in ordinary text.
    pub fn n_ordinary(&self) -> usize {
        self.tokens.len() - N_SPECIAL
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < N_SPECIAL
    }

    /// Greedy longest-match subword segmentation.
    ///
    /// At each position the longest ordinary vocabulary entry that prefixes
    /// the remaining characters is emitted; when nothing matches, one
    /// character is consumed and UNK is emitted. Special tokens never match.
    pub fn tokenize(&self, word: &str) -> Vec<TokenId> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut pos = 0;
        let mut buf = String::new();
        while pos < chars.len() {
            let max_len = self.longest_piece.min(chars.len() - pos);
            let mut matched = None;
            for len in (1..=max_len).rev() {
                buf.clear();
                buf.extend(&chars[pos..pos + len]);
                if let Some(&id) = self.index.get(buf.as_str()) {
                    if !Self::is_special(id) {
                        matched = Some((id, len));
                        break;
                    }
                }
            }
            match matched {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                }
                None => {
                    out.push(UNK);
                    pos += 1;
                }
            }
        }
        out
    }

    /// Concatenates the pieces of `ids`, skipping special tokens.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| !Self::is_special(id))
            .filter_map(|&id| self.token(id))
            .collect()
    }

    /// Writes one token per line; line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vocabulary {
        let mut pieces: Vec<String> = ["101", ".", "75", "10", "1", "7", "date", "da"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        pieces.extend(["a", "b", "c", "d", "e", "x"].iter().map(|s| s.to_string()));
        Vocabulary::from_pieces(pieces).unwrap()
    }

    #[test]
    fn exact_match_is_single_id() {
        let v = toy();
        assert_eq!(v.tokenize("date"), vec![v.id("date").unwrap()]);
    }

    #[test]
    fn greedy_split_of_amount() {
        let v = toy();
        let ids = v.tokenize("101.75");
        assert_eq!(
            ids,
            vec![
                v.id("101").unwrap(),
                v.id(".").unwrap(),
                v.id("75").unwrap()
            ]
        );
        assert_eq!(v.decode(&ids), "101.75");
    }

    #[test]
    fn unknown_characters_fall_back_to_unk() {
        let v = toy();
        assert_eq!(v.tokenize("zzq"), vec![UNK, UNK, UNK]);
        // matched pieces survive around unknown characters
        let ids = v.tokenize("azb");
        assert_eq!(ids, vec![v.id("a").unwrap(), UNK, v.id("b").unwrap()]);
        assert_eq!(v.decode(&ids), "ab");
    }

    #[test]
    fn specials_are_never_produced() {
        let v = toy();
        assert!(!v.tokenize("[MASK]").contains(&MASK));
        assert!(!v.tokenize("[PAD]").contains(&PAD));
    }

    #[test]
    fn rejects_bad_vocabularies() {
        assert!(Vocabulary::from_pieces(["a", "b"]).is_err());
        let mut pieces: Vec<String> = (0..20).map(|i| format!("t{i}")).collect();
        pieces.push("t3".into());
        assert!(Vocabulary::from_pieces(pieces).is_err());
        let toks: Vec<String> = (0..20).map(|i| format!("t{i}")).collect();
        assert!(Vocabulary::from_tokens(toks).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let v = toy();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }
}
