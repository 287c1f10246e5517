//! Token inventory shared by the decoder, the CTC branch and the LM.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a [`Vocab`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const DEFAULT_BLANK: &str = "<blank>";
pub const DEFAULT_EOS: &str = "<eos>";

/// Ordered token list. Line `i` of a vocab file is token `i`; the first two
/// lines are the blank marker and the eos marker, in that order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    blank_id: TokenId,
    eos_id: TokenId,
}

impl Vocab {
    pub fn new(tokens: Vec<String>, blank_id: TokenId, eos_id: TokenId) -> Result<Self> {
        if blank_id.index() >= tokens.len() || eos_id.index() >= tokens.len() {
            return Err(Error::Vocab(format!(
                "blank id {blank_id} / eos id {eos_id} out of range for {} tokens",
                tokens.len()
            )));
        }
        if blank_id == eos_id {
            return Err(Error::Vocab("blank and eos must be distinct tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::Vocab(format!("empty token at index {i}")));
            }
            if index.insert(tok.clone(), TokenId::from(i)).is_some() {
                return Err(Error::Vocab(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self {
            tokens,
            index,
            blank_id,
            eos_id,
        })
    }

    /// Builds a vocab from the file layout: blank, eos, then ordinary tokens.
    pub fn from_lines<I, S>(lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = lines.into_iter().map(Into::into).collect();
        if tokens.len() < 2 {
            return Err(Error::Vocab(
                "the first two lines must declare the blank and eos markers".into(),
            ));
        }
        Self::new(tokens, TokenId(0), TokenId(1))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank_id(&self) -> TokenId {
        self.blank_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Ids the decoder may emit: everything except the CTC blank.
    pub fn output_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len())
            .map(TokenId::from)
            .filter(move |&id| id != self.blank_id)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<unk>").to_string())
            .collect()
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<TokenId>> {
        tokens
            .iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| Error::Vocab(format!("unknown token {:?}", t.as_ref())))
            })
            .collect()
    }
}

/// Reads a vocab file: one token per line, blank marker first, eos marker second.
/// Trailing blank lines are ignored.
pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocab> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    Vocab::from_lines(lines.iter().map(|l| l.to_string())).map_err(|e| Error::parse(path, None, e.to_string()))
}
