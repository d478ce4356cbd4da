//! The trainable encoder–fusion–decoder stage model and its training loop.
//!
//! One [`Seq2Seq`] plays the role of a fine-tuned encoder-decoder for one unit
//! module (question generator, response generator, description generator,
//! classifier). It may carry several decoder heads over a shared encoder and
//! fusion block, which is how the two hierarchical classifier levels are held.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Decoding, EmbeddingEncoder, TinyDecoder, TokenId, Vocab};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fusion::{FusedState, FusionWeights, HiddenSequence, Source};
use crate::optim::{squared_norm, Adam};
use crate::projector::ProjectorBank;
use crate::tensor::{join, Matrix, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width: usize,
    pub hidden: usize,
    pub max_text_len: usize,
    pub max_decode_len: usize,
    pub patch_size: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 32,
            hidden: 64,
            max_text_len: 96,
            max_decode_len: 40,
            patch_size: 16,
        }
    }
}

/// A sequence-generation handle: fuse text with a vision state, then decode.
///
/// The split lets pipelines insert projector banks between the two halves.
pub trait SeqGenerator {
    fn fuse(&self, text: &str, vision: &HiddenSequence) -> Result<FusedState>;

    /// Decodes text from a memory. With `allowed`, exactly one of the given
    /// words is produced.
    fn decode(&self, memory: &FusedState, allowed: Option<&[&str]>) -> Result<String>;

    fn generate(&self, text: &str, vision: &HiddenSequence) -> Result<String> {
        let memory = self.fuse(text, vision)?;
        self.decode(&memory, None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    vocab: Arc<Vocab>,
    config: ModelConfig,
    pub text: EmbeddingEncoder,
    pub fusion: FusionWeights,
    pub heads: Vec<TinyDecoder>,
}

/// Where gradients of one example go.
#[derive(Default)]
pub struct GradSink<'a> {
    pub model: Option<&'a mut Seq2Seq>,
    pub bank: Option<&'a mut ProjectorBank>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Free text, scored token by token and terminated by `<eos>`.
    Text(String),
    /// One word out of a closed set.
    Label { word: String, allowed: Vec<String> },
}

#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub head: usize,
    pub input: String,
    pub vision: Arc<HiddenSequence>,
    pub target: Target,
}

impl Seq2Seq {
    /// A seeded, randomly initialised backbone.
    pub fn new(vocab: Arc<Vocab>, config: ModelConfig, heads: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text =
            EmbeddingEncoder::random(vocab.len(), config.max_text_len, config.width, &mut rng);
        let fusion = FusionWeights::random(config.width, &mut rng);
        let heads = (0..heads.max(1))
            .map(|_| {
                TinyDecoder::random(
                    vocab.len(),
                    config.max_decode_len,
                    config.width,
                    config.hidden,
                    &mut rng,
                )
            })
            .collect();
        Self {
            vocab,
            config,
            text,
            fusion,
            heads,
        }
    }

    pub fn vocab(&self) -> &Arc<Vocab> {
        &self.vocab
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            vocab: self.vocab.clone(),
            config: self.config,
            text: self.text.zeros_like(),
            fusion: self.fusion.zeros_like(),
            heads: self.heads.iter().map(TinyDecoder::zeros_like).collect(),
        }
    }

    /// Tokenises `text`; overlong inputs are truncated with a warning and an
    /// empty input becomes a single `<unk>`.
    pub fn tokens_for(&self, text: &str) -> Vec<TokenId> {
        let mut ids = self.vocab.encode(text);
        if ids.len() > self.config.max_text_len {
            log::warn!(
                "input of {} tokens truncated to {}",
                ids.len(),
                self.config.max_text_len
            );
            ids.truncate(self.config.max_text_len);
        }
        if ids.is_empty() {
            ids.push(self.vocab.unk());
        }
        ids
    }

    fn check_vision(&self, vision: &HiddenSequence) -> Result<()> {
        if vision.source() != Source::Vision {
            return Err(Error::InvalidInput("expected a vision sequence".into()));
        }
        if vision.width() != self.config.width {
            return Err(Error::shape(format!(
                "vision width {} does not match model width {}",
                vision.width(),
                self.config.width
            )));
        }
        Ok(())
    }

    pub fn fuse(&self, text: &str, vision: &HiddenSequence) -> Result<FusedState> {
        self.check_vision(vision)?;
        let tokens = self.tokens_for(text);
        let h_text = HiddenSequence::new(self.text.forward(&tokens)?.hidden, Source::Text)?;
        Ok(self.fusion.forward(&h_text, vision)?.state())
    }

    fn word_ids(&self, words: &[&str]) -> Result<Vec<TokenId>> {
        words
            .iter()
            .map(|w| {
                self.vocab.id(w).ok_or_else(|| {
                    Error::Decode(format!("label word `{w}` is not in the vocabulary"))
                })
            })
            .collect()
    }

    pub fn decode(
        &self,
        head: usize,
        memory: &FusedState,
        allowed: Option<&[&str]>,
        decoding: Decoding,
    ) -> Result<String> {
        let decoder = self
            .heads
            .get(head)
            .ok_or_else(|| Error::Decode(format!("model has no decoder head {head}")))?;
        if memory.width() != decoder.width() {
            return Err(Error::shape(format!(
                "memory width {} does not match decoder width {}",
                memory.width(),
                decoder.width()
            )));
        }
        let allowed_ids = allowed.map(|a| self.word_ids(a)).transpose()?;
        let ids = decoder.decode(
            &memory.fused,
            &self.text.tokens,
            allowed_ids.as_deref(),
            decoding,
        );
        Ok(self.vocab.decode(&ids))
    }

    fn target_ids(&self, target: &Target) -> Result<(Vec<TokenId>, Option<Vec<TokenId>>)> {
        match target {
            Target::Text(t) => {
                let mut ids = self.vocab.encode(t);
                ids.push(self.vocab.eos());
                Ok((ids, None))
            }
            Target::Label { word, allowed } => {
                let allowed: Vec<&str> = allowed.iter().map(String::as_str).collect();
                let allowed = self.word_ids(&allowed)?;
                let id = self.word_ids(&[word.as_str()])?[0];
                if !allowed.contains(&id) {
                    return Err(Error::InvalidInput(format!(
                        "label `{word}` is not in its allowed set"
                    )));
                }
                Ok((vec![id], Some(allowed)))
            }
        }
    }

    /// Summed token loss of one example and the number of scored tokens.
    /// Gradients flow into whichever sinks are present.
    pub fn example_loss(
        &self,
        bank: Option<&ProjectorBank>,
        ex: &Example,
        sink: GradSink<'_>,
    ) -> Result<(f64, usize)> {
        self.check_vision(&ex.vision)?;
        let decoder = self
            .heads
            .get(ex.head)
            .ok_or_else(|| Error::Decode(format!("model has no decoder head {}", ex.head)))?;
        let tokens = self.tokens_for(&ex.input);
        let text_cache = self.text.forward(&tokens)?;
        let h_text = HiddenSequence::new(text_cache.hidden.clone(), Source::Text)?;
        let fusion_cache = self.fusion.forward(&h_text, &ex.vision)?;
        let bank_cache = bank.map(|b| b.forward(&fusion_cache.fused)).transpose()?;
        let memory = bank_cache
            .as_ref()
            .map_or(&fusion_cache.fused, |c| &c.output);

        let (targets, allowed) = self.target_ids(&ex.target)?;
        let GradSink {
            model: mut model_grad,
            bank: bank_grad,
        } = sink;
        // the output layer shares the text encoder's token embeddings
        let mut d_embed = model_grad
            .as_ref()
            .map(|_| Matrix::zeros(self.text.tokens.dim()));
        let head_grad = model_grad.as_deref_mut().map(|g| &mut g.heads[ex.head]);
        let (loss, count, d_memory) = decoder.loss(
            memory,
            &self.text.tokens,
            &targets,
            allowed.as_deref(),
            head_grad,
            d_embed.as_mut(),
        );

        let d_fused = match (bank, bank_cache.as_ref(), bank_grad) {
            (Some(b), Some(c), Some(g)) => b.backward(c, &d_memory, g),
            (Some(b), Some(c), None) if model_grad.is_some() => {
                b.backward(c, &d_memory, &mut b.zeros_like())
            }
            _ => d_memory,
        };
        if let Some(g) = model_grad {
            let d_text = self.fusion.backward(&fusion_cache, &d_fused, &mut g.fusion);
            self.text.backward(&text_cache, &d_text, &mut g.text);
            if let Some(de) = d_embed {
                g.text.tokens += &de;
            }
        }
        Ok((loss, count))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::capture(self, "");
        ck.meta.insert(
            "model_config".into(),
            serde_json::to_string(&self.config).expect("config serialises"),
        );
        ck.meta.insert("heads".into(), self.heads.len().to_string());
        ck.meta
            .insert("vocab_size".into(), self.vocab.len().to_string());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, vocab: Arc<Vocab>) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(
            ck.meta
                .get("model_config")
                .ok_or_else(|| Error::CheckpointMissing("metadata `model_config`".into()))?,
        )?;
        let heads: usize = ck
            .meta
            .get("heads")
            .and_then(|h| h.parse().ok())
            .ok_or_else(|| Error::CheckpointMissing("metadata `heads`".into()))?;
        let mut model = Seq2Seq::new(vocab, config, heads, 0);
        ck.restore(&mut model, "")?;
        Ok(model)
    }
}

impl Parameters for Seq2Seq {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.text.visit(&join(prefix, "text"), f);
        self.fusion.visit(&join(prefix, "fusion"), f);
        for (i, h) in self.heads.iter().enumerate() {
            h.visit(&join(prefix, &format!("head{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.text.visit_mut(&join(prefix, "text"), f);
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
        for (i, h) in self.heads.iter_mut().enumerate() {
            h.visit_mut(&join(prefix, &format!("head{i}")), f);
        }
    }
}

/// A [`Seq2Seq`] bound to one decoder head and decoding strategy.
#[derive(Debug, Clone)]
pub struct StageGenerator {
    pub model: Arc<Seq2Seq>,
    pub head: usize,
    pub decoding: Decoding,
}

impl StageGenerator {
    pub fn new(model: Arc<Seq2Seq>, head: usize, decoding: Decoding) -> Self {
        Self {
            model,
            head,
            decoding,
        }
    }
}

impl SeqGenerator for StageGenerator {
    fn fuse(&self, text: &str, vision: &HiddenSequence) -> Result<FusedState> {
        self.model.fuse(text, vision)
    }

    fn decode(&self, memory: &FusedState, allowed: Option<&[&str]>) -> Result<String> {
        self.model.decode(self.head, memory, allowed, self.decoding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 2,
            learning_rate: 0.005,
            seed: 0,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainScope {
    /// Encoder, fusion and decoder heads; the bank (if any) is held fixed.
    Backbone,
    /// Only the projector bank; every backbone parameter stays frozen.
    Projector,
    /// Backbone and bank together.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-token loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Teacher-forced cross-entropy training with Adam.
pub fn train(
    model: &mut Seq2Seq,
    mut bank: Option<&mut ProjectorBank>,
    examples: &[Example],
    scope: TrainScope,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("no training examples".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config(
            "epochs and batch size must be positive".into(),
        ));
    }
    let train_model = matches!(scope, TrainScope::Backbone | TrainScope::Joint);
    let train_bank = matches!(scope, TrainScope::Projector | TrainScope::Joint);
    if train_bank && bank.is_none() {
        return Err(Error::InvalidInput(
            "projector training needs a projector bank".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model_opt = Adam::new(cfg.learning_rate);
    let mut bank_opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut scored = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut model_grad = train_model.then(|| model.zeros_like());
            let mut bank_grad = if train_bank {
                bank.as_deref().map(ProjectorBank::zeros_like)
            } else {
                None
            };
            let mut batch_tokens = 0usize;
            for &i in batch {
                let sink = GradSink {
                    model: model_grad.as_mut(),
                    bank: bank_grad.as_mut(),
                };
                let (loss, count) = model.example_loss(bank.as_deref(), &examples[i], sink)?;
                total += loss;
                scored += count;
                batch_tokens += count;
            }
            if batch_tokens == 0 {
                continue;
            }
            let mut scale = 1.0 / batch_tokens as f64;
            if let Some(max) = cfg.clip_norm {
                let sq = model_grad.as_ref().map_or(0.0, squared_norm)
                    + bank_grad.as_ref().map_or(0.0, squared_norm);
                let norm = sq.sqrt() * scale;
                if norm > max {
                    scale *= max / norm;
                }
            }
            if let Some(g) = model_grad.as_ref() {
                model_opt.step(model, g, scale);
            }
            if let (Some(b), Some(g)) = (bank.as_deref_mut(), bank_grad.as_ref()) {
                bank_opt.step(b, g, scale);
            }
        }
        epoch_losses.push(if scored == 0 {
            0.0
        } else {
            total / scored as f64
        });
    }
    Ok(TrainReport { epoch_losses })
}
