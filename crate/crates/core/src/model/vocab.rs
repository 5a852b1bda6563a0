use serde::{Deserialize, Serialize};

use super::ModelError;

pub type TokenId = u32;

/// Content words `w0 .. w{n-1}` followed by BOS and EOS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub content: usize,
}

impl Vocab {
    pub fn new(content: usize) -> Self {
        Self { content }
    }

    pub fn size(&self) -> usize {
        self.content + 2
    }

    pub fn bos(&self) -> TokenId {
        self.content as TokenId
    }

    pub fn eos(&self) -> TokenId {
        self.content as TokenId + 1
    }

    pub fn word(&self, id: TokenId) -> String {
        if id == self.bos() {
            "<s>".into()
        } else if id == self.eos() {
            "</s>".into()
        } else {
            format!("w{id}")
        }
    }

    pub fn is_content(&self, id: TokenId) -> bool {
        (id as usize) < self.content
    }

    pub fn parse_word(&self, w: &str) -> Result<TokenId, ModelError> {
        w.strip_prefix('w')
            .and_then(|n| n.parse::<TokenId>().ok())
            .filter(|&id| self.is_content(id))
            .ok_or_else(|| ModelError::UnknownToken(w.to_string()))
    }

    /// Whitespace-separated words to ids; the empty string is the empty transcript.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, ModelError> {
        text.split_whitespace().map(|w| self.parse_word(w)).collect()
    }

    /// Content tokens to text, stopping at EOS and skipping BOS.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .take_while(|&&id| id != self.eos())
            .filter(|&&id| self.is_content(id))
            .map(|&id| self.word(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
