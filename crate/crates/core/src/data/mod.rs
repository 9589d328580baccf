//! Documents, datasets and the synthetic rationale generator.

mod jsonl;
mod segment;
mod split;
mod synth;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::encoder::Vocab;
use crate::error::{Error, Result};

pub use jsonl::{load_jsonl, parse_jsonl, to_jsonl, write_jsonl};
pub use segment::{segment_sentences, SENTENCE_TERMINATORS};
pub use split::split_dataset;
pub use synth::{synth_generate, PlantShape, SynthSpec};

/// One labelled document split into sentences of whitespace tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
    pub doc_label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_labels: Option<Vec<Vec<u8>>>,
}

impl Document {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::Validation {
            doc_id: self.doc_id.clone(),
            message,
        };
        if self.doc_label > 1 {
            return Err(fail(format!("doc_label must be 0 or 1, got {}", self.doc_label)));
        }
        if self.sentences.is_empty() {
            return Err(fail("document has no sentences".into()));
        }
        if let Some(i) = self.sentences.iter().position(Vec::is_empty) {
            return Err(fail(format!("sentence {i} is empty")));
        }
        if let Some(labels) = &self.token_labels {
            if labels.len() != self.sentences.len() {
                return Err(fail(format!(
                    "token_labels has {} sentences, sentences has {}",
                    labels.len(),
                    self.sentences.len()
                )));
            }
            for (i, (l, s)) in labels.iter().zip(&self.sentences).enumerate() {
                if l.len() != s.len() {
                    return Err(fail(format!(
                        "sentence {i}: {} token labels for {} tokens",
                        l.len(),
                        s.len()
                    )));
                }
                if l.iter().any(|v| *v > 1) {
                    return Err(fail(format!("sentence {i}: token labels must be 0 or 1")));
                }
            }
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn sentence_lengths(&self) -> Vec<usize> {
        self.sentences.iter().map(Vec::len).collect()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.sentences.iter().flatten()
    }

    /// Gold token labels flattened across sentences.
    pub fn flat_token_labels(&self) -> Option<Vec<u8>> {
        self.token_labels
            .as_ref()
            .map(|ls| ls.iter().flatten().copied().collect())
    }

    /// Token ids per sentence.
    pub fn encode(&self, vocab: &Vocab) -> Vec<Vec<usize>> {
        self.sentences.iter().map(|s| vocab.encode(s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub split: Option<Split>,
    pub documents: Vec<Document>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, split: Option<Split>, documents: Vec<Document>) -> Self {
        Self {
            name: name.into(),
            split,
            documents,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Validates every document and doc_id uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.documents.len());
        for d in &self.documents {
            d.validate()?;
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::Validation {
                    doc_id: d.doc_id.clone(),
                    message: "duplicate doc_id".into(),
                });
            }
        }
        Ok(())
    }

    pub fn has_token_labels(&self) -> bool {
        !self.documents.is_empty() && self.documents.iter().all(|d| d.token_labels.is_some())
    }

    /// Share of rationale tokens among the tokens of labelled positive
    /// documents (the class whose evidence is annotated). Falls back to all
    /// labelled documents when no positive document carries labels; `None`
    /// when nothing is labelled.
    pub fn evidence_fraction(&self) -> Option<f64> {
        let fraction = |pred: &dyn Fn(&Document) -> bool| {
            let (mut pos, mut total) = (0usize, 0usize);
            for d in self.documents.iter().filter(|d| pred(d)) {
                if let Some(ls) = &d.token_labels {
                    pos += ls.iter().flatten().filter(|v| **v == 1).count();
                    total += d.n_tokens();
                }
            }
            (total > 0).then(|| pos as f64 / total as f64)
        };
        match fraction(&|d| d.doc_label == 1 && d.token_labels.is_some()) {
            Some(f) if f > 0.0 => Some(f),
            _ => fraction(&|_| true),
        }
    }

    /// Token frequency table.
    pub fn token_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for t in self.documents.iter().flat_map(Document::tokens) {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

/// The `max_size` most frequent tokens of `train` (ties by lexicographic
/// order), after the reserved tokens.
pub fn build_vocab(train: &Dataset, max_size: usize) -> Result<Vocab> {
    if train.is_empty() {
        return Err(Error::Invalid("cannot build a vocabulary from an empty split".into()));
    }
    let reserved = [
        crate::encoder::CLS_TOKEN,
        crate::encoder::PAD_TOKEN,
        crate::encoder::UNK_TOKEN,
    ];
    let mut counts: Vec<(&str, usize)> = train
        .token_counts()
        .into_iter()
        .filter(|(t, _)| !reserved.contains(t))
        .collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    counts.truncate(max_size);
    Vocab::from_tokens(counts.into_iter().map(|(t, _)| t.to_string()))
}
