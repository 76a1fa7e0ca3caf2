//! Caption tokenization, the vocabulary and precomputed sentence embeddings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};
use tdr_tensor::Tensor;

use crate::error::{CoreError, Result};

/// Id reserved for out-of-vocabulary words.
pub const OOV_ID: usize = 0;
pub const OOV_TOKEN: &str = "<unk>";
/// `OOV_TOKEN` as produced by the word splitter; never a vocabulary entry so
/// detokenized text maps back to the OOV id.
const OOV_WORD: &str = "unk";

/// Lowercased alphanumeric runs of `raw`.
pub fn words(raw: &str) -> Vec<String> {
    raw.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Sorted word set of the captions, after the OOV entry at id 0.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = captions.into_iter().flat_map(words).filter(|w| w != OOV_WORD).collect();
        let tokens: Vec<String> = std::iter::once(OOV_TOKEN.to_string()).chain(set).collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Canonical JSON (token → id, keys sorted).
    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, usize> = self.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        serde_json::to_string(&map).expect("string map serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let map: BTreeMap<String, usize> = serde_json::from_str(s)?;
        let mut tokens = vec![None; map.len()];
        for (tok, id) in map {
            match tokens.get_mut(id) {
                Some(slot @ None) => *slot = Some(tok),
                _ => return Err(CoreError::Input(format!("vocabulary ids must be a permutation of 0..n (token {tok:?} -> {id})"))),
            }
        }
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.expect("every slot filled")).collect();
        if tokens.first().map(String::as_str) != Some(OOV_TOKEN) {
            return Err(CoreError::Input(format!("vocabulary id {OOV_ID} must be {OOV_TOKEN}")));
        }
        Ok(Self::from_tokens(tokens))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub ids: Vec<usize>,
    pub raw: String,
}

/// Lowercase, split on non-alphanumerics and map through `vocab`. Unknown
/// words map to [`OOV_ID`]; text without any word is rejected.
pub fn tokenize(raw: &str, vocab: &Vocabulary) -> Result<TokenizedText> {
    let ids: Vec<usize> = words(raw).iter().map(|w| vocab.id(w)).collect();
    if ids.is_empty() {
        return Err(CoreError::Input(format!("caption {raw:?} contains no tokens")));
    }
    Ok(TokenizedText { ids, raw: raw.to_string() })
}

pub fn detokenize(text: &TokenizedText, vocab: &Vocabulary) -> String {
    text.ids.iter().map(|&i| vocab.token(i).unwrap_or(OOV_TOKEN)).collect::<Vec<_>>().join(" ")
}

/// A text query: tokens for the fallback provider, caption id for the
/// file-backed one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextQuery {
    pub caption_id: Option<String>,
    pub tokens: TokenizedText,
}

impl TextQuery {
    pub fn new(raw: &str, vocab: &Vocabulary) -> Result<Self> {
        Ok(Self { caption_id: None, tokens: tokenize(raw, vocab)? })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.caption_id = Some(id.into());
        self
    }
}

/// Precomputed sentence embeddings: a `[n × d_c]` matrix and a caption id →
/// row index.
#[derive(Debug, Clone, PartialEq)]
pub struct FileEmbeddings {
    matrix: Tensor,
    index: HashMap<String, usize>,
}

impl FileEmbeddings {
    pub fn new(matrix: Tensor, index: HashMap<String, usize>) -> Result<Self> {
        if matrix.ndim() != 2 {
            return Err(CoreError::Input(format!("embedding matrix must be 2-D, got {:?}", matrix.shape())));
        }
        if let Some((id, &row)) = index.iter().find(|(_, &r)| r >= matrix.rows()) {
            return Err(CoreError::Input(format!("caption {id:?} points at row {row} of a {}-row matrix", matrix.rows())));
        }
        Ok(Self { matrix, index })
    }

    pub fn load(matrix_path: impl AsRef<Path>, index_path: impl AsRef<Path>) -> Result<Self> {
        let matrix = tdr_tensor::io::load(matrix_path)?;
        let index: HashMap<String, usize> = serde_json::from_str(&std::fs::read_to_string(index_path)?)?;
        Self::new(matrix, index)
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn get(&self, caption_id: &str) -> Result<&[f64]> {
        self.index
            .get(caption_id)
            .map(|&r| self.matrix.row(r))
            .ok_or_else(|| CoreError::Lookup(format!("no precomputed embedding for caption {caption_id:?}")))
    }
}
