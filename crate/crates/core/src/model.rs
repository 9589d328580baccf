//! Full rationale models: an encoder topology paired with a soft attention
//! head and loss.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_difference_grad, relative_error, AttentionMap, AttentionSpans, Graph, Var};
use crate::data::Document;
use crate::encoder::{self, AttentionKernel, EncoderConfig, HeadReduction, Vocab};
use crate::error::{Error, Result};
use crate::heads::{self, HeadConfig, LossTerms, LossVariant, THRESHOLD};
use crate::params::{Bound, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Windowed document encoder, weighted loss.
    WeightedMonolithic,
    /// Windowed document encoder, ranked loss.
    RankedMonolithic,
    /// Sentence-wise encoder, ranked loss.
    CompositionalRanked,
    /// Sentence-wise encoder, weighted loss.
    CompositionalWeighted,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [
        ModelVariant::WeightedMonolithic,
        ModelVariant::RankedMonolithic,
        ModelVariant::CompositionalRanked,
        ModelVariant::CompositionalWeighted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::WeightedMonolithic => "weighted-monolithic",
            ModelVariant::RankedMonolithic => "ranked-monolithic",
            ModelVariant::CompositionalRanked => "compositional-ranked",
            ModelVariant::CompositionalWeighted => "compositional-weighted",
        }
    }

    pub fn loss(self) -> LossVariant {
        match self {
            ModelVariant::WeightedMonolithic | ModelVariant::CompositionalWeighted => LossVariant::Weighted,
            ModelVariant::RankedMonolithic | ModelVariant::CompositionalRanked => LossVariant::Ranked,
        }
    }

    pub fn is_compositional(self) -> bool {
        matches!(
            self,
            ModelVariant::CompositionalRanked | ModelVariant::CompositionalWeighted
        )
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.head.validate()
    }
}

/// Per-document model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub y_hat: f64,
    pub token_scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub binary_rationale: Vec<u8>,
}

impl Prediction {
    pub fn from_scores(y_hat: f64, token_scores: Vec<f64>, weights: Vec<f64>) -> Self {
        let binary_rationale = token_scores.iter().map(|&s| u8::from(s > THRESHOLD)).collect();
        Self {
            y_hat,
            token_scores,
            weights,
            binary_rationale,
        }
    }
}

/// Encoder computation used by a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EncoderPath {
    /// Sparse fused attention under the model's own spans.
    #[default]
    Fused,
    /// Dense masked attention built from primitive ops. The windowed
    /// encoder is replaced by full attention, which it must match whenever
    /// the window covers the whole document.
    DenseFull,
}

/// Graph handles of one forward pass.
#[derive(Debug)]
pub struct Forward {
    pub y_hat: Var,
    pub scores: Var,
    pub weights: Var,
    /// Per-layer attention maps of the windowed encoder (monolithic only).
    pub maps: Vec<AttentionMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
}

impl Model {
    /// Fresh Glorot-initialised model, deterministic in `seed`.
    pub fn init(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = encoder::init_params(&config.encoder, vocab.len(), &mut rng);
        for (name, t) in heads::init_params(&config.head, config.encoder.hidden, &mut rng).iter() {
            params.insert(name.clone(), t.clone());
        }
        Ok(Self { config, vocab, params })
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    /// Builds the forward graph for one document against bound parameters.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, doc: &Document) -> Result<Forward> {
        self.forward_with(g, bound, doc, EncoderPath::Fused)
    }

    pub fn forward_with(&self, g: &mut Graph, bound: &Bound, doc: &Document, path: EncoderPath) -> Result<Forward> {
        let ids = doc.encode(&self.vocab);
        let kernel = match path {
            EncoderPath::Fused => AttentionKernel::Fused,
            EncoderPath::DenseFull => AttentionKernel::Dense,
        };
        let (t, maps) = if self.variant().is_compositional() {
            let enc = encoder::encode_sentences_with(g, bound, &self.config.encoder, &ids, kernel)?;
            (enc.embeddings, Vec::new())
        } else {
            let mut flat = Vec::with_capacity(doc.n_tokens() + 1);
            flat.push(Vocab::CLS);
            flat.extend(ids.iter().flatten());
            let (all, maps) = match path {
                EncoderPath::Fused => encoder::encode_document_windowed(g, bound, &self.config.encoder, &flat)?,
                EncoderPath::DenseFull => encoder::encode_with_spans(
                    g,
                    bound,
                    &self.config.encoder,
                    &flat,
                    Arc::new(AttentionSpans::full(flat.len())),
                    AttentionKernel::Dense,
                )?,
            };
            let t = g.slice_rows(all, 1, flat.len())?;
            (t, maps)
        };
        let (scores, _) = heads::token_scores(g, t, bound)?;
        let (weights, c) = heads::attention_pool_guarded(g, t, scores, self.config.head.beta)?;
        let y_hat = heads::document_predict(g, c, bound)?;
        Ok(Forward {
            y_hat,
            scores,
            weights,
            maps,
        })
    }

    /// Loss node for a forward pass against the gold document label.
    pub fn loss(&self, g: &mut Graph, fwd: &Forward, gold: u8) -> Result<(Var, LossTerms)> {
        let h = &self.config.head;
        let gold = f64::from(gold);
        match self.variant().loss() {
            LossVariant::Weighted => heads::loss_weighted_graph(g, fwd.y_hat, fwd.scores, gold, h.gamma),
            LossVariant::Ranked => {
                heads::loss_ranked_graph(g, fwd.y_hat, fwd.scores, gold, h.gamma, h.gamma_ranked, h.k)
            }
        }
    }

    /// Inference with frozen parameters.
    pub fn predict(&self, doc: &Document) -> Result<Prediction> {
        Ok(self.predict_with(doc, EncoderPath::Fused)?.0)
    }

    /// Inference through a chosen encoder path, with the recorded attention
    /// maps of the fused windowed encoder.
    pub fn predict_with(&self, doc: &Document, path: EncoderPath) -> Result<(Prediction, Vec<AttentionMap>)> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let fwd = self.forward_with(&mut g, &bound, doc, path)?;
        let pred = Prediction::from_scores(
            g.value(fwd.y_hat).item(),
            g.value(fwd.scores).data().to_vec(),
            g.value(fwd.weights).data().to_vec(),
        );
        Ok((pred, fwd.maps))
    }

    /// Final-layer CLS attention over the document's tokens. Only defined
    /// for the windowed encoder.
    pub fn cls_attention_scores(&self, doc: &Document, reduction: HeadReduction) -> Result<Vec<f64>> {
        if self.variant().is_compositional() {
            return Err(Error::Config(format!(
                "CLS attention scores need a windowed-encoder model, got {}",
                self.variant()
            )));
        }
        let (_, maps) = self.predict_with(doc, EncoderPath::Fused)?;
        encoder::cls_global_attention_scores(&maps, reduction)
    }
}

/// Largest analytic-vs-numeric gradient discrepancy over all parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

impl Model {
    /// Training loss of one document under the current parameters.
    pub fn document_loss(&self, doc: &Document) -> Result<LossTerms> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let fwd = self.forward(&mut g, &bound, doc)?;
        Ok(self.loss(&mut g, &fwd, doc.doc_label)?.1)
    }

    /// Gradients of the document loss with respect to every parameter.
    pub fn document_gradients(&self, doc: &Document) -> Result<ParamStore> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, true);
        let fwd = self.forward(&mut g, &bound, doc)?;
        let (loss, _) = self.loss(&mut g, &fwd, doc.doc_label)?;
        g.backward(loss)?;
        Ok(bound.grads(&g))
    }

    /// Compares backpropagated gradients of the document loss with central
    /// differences, coordinate by coordinate.
    pub fn gradient_check(&self, doc: &Document, eps: f64, floor: f64) -> Result<GradCheck> {
        let analytic = self.document_gradients(doc)?;
        let mut probe = self.clone();
        let mut out = GradCheck {
            max_rel_error: 0.0,
            worst_param: String::new(),
            checked: 0,
        };
        for (name, grad) in analytic.iter() {
            let theta = self.params.get(name)?.clone();
            let numeric = finite_difference_grad(
                |t| {
                    *probe.params.get_mut(name).expect("same keys") = t.clone();
                    probe.document_loss(doc).map(|l| l.total)
                },
                &theta,
                eps,
            )?;
            *probe.params.get_mut(name).expect("same keys") = theta;
            for (a, b) in grad.data().iter().zip(numeric.data()) {
                let err = relative_error(*a, *b, floor);
                out.checked += 1;
                if err > out.max_rel_error {
                    out.max_rel_error = err;
                    out.worst_param = name.clone();
                }
            }
        }
        Ok(out)
    }
}
