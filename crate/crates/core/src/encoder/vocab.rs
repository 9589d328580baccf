use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const CLS_TOKEN: &str = "<cls>";
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token to id map with dense ids; `CLS`, `PAD` and `UNK` occupy 0, 1, 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const CLS: usize = 0;
    pub const PAD: usize = 1;
    pub const UNK: usize = 2;

    /// Builds a vocabulary from regular tokens; the reserved tokens are
    /// prepended and duplicates rejected.
    pub fn from_tokens<I, S>(regular: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = vec![CLS_TOKEN.into(), PAD_TOKEN.into(), UNK_TOKEN.into()];
        tokens.extend(regular.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Regular tokens in id order.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[3..]
    }
}

impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.regular_tokens().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let regular = Vec::<String>::deserialize(d)?;
        Vocab::from_tokens(regular).map_err(serde::de::Error::custom)
    }
}
