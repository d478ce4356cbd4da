use rand::Rng;

use super::tokenizer::TokenId;
use crate::error::{Error, Result};
use crate::fusion::{HiddenSequence, Source};
use crate::tensor::{
    join, uniform_matrix, visit_matrix, visit_matrix_mut, Affine, Matrix, Parameters,
};

/// Anything that turns a token sequence into last-layer hidden states.
pub trait TextEncoder {
    fn width(&self) -> usize;
    fn max_len(&self) -> usize;
    fn encode(&self, tokens: &[TokenId]) -> Result<HiddenSequence>;
}

/// Token + position embeddings followed by one `tanh` layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingEncoder {
    pub tokens: Matrix,
    pub positions: Matrix,
    pub layer: Affine,
}

pub struct TextCache {
    pub tokens: Vec<TokenId>,
    pub summed: Matrix,
    pub hidden: Matrix,
}

impl EmbeddingEncoder {
    pub fn random(vocab: usize, max_len: usize, width: usize, rng: &mut impl Rng) -> Self {
        Self {
            tokens: uniform_matrix(vocab, width, 1.0, rng),
            positions: uniform_matrix(max_len, width, 0.1, rng),
            layer: Affine::random(width, width, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tokens: Matrix::zeros(self.tokens.dim()),
            positions: Matrix::zeros(self.positions.dim()),
            layer: self.layer.zeros_like(),
        }
    }

    fn check(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        if tokens.len() > self.max_len() {
            return Err(Error::InvalidInput(format!(
                "token sequence of length {} exceeds the maximum of {}",
                tokens.len(),
                self.max_len()
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.tokens.nrows()) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} is outside the vocabulary"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, tokens: &[TokenId]) -> Result<TextCache> {
        self.check(tokens)?;
        let width = self.width();
        let mut summed = Matrix::zeros((tokens.len(), width));
        for (i, &t) in tokens.iter().enumerate() {
            let mut row = summed.row_mut(i);
            row += &self.tokens.row(t);
            row += &self.positions.row(i);
        }
        let hidden = self.layer.apply(&summed).mapv(f64::tanh);
        Ok(TextCache {
            tokens: tokens.to_vec(),
            summed,
            hidden,
        })
    }

    pub fn backward(&self, cache: &TextCache, d_hidden: &Matrix, grad: &mut EmbeddingEncoder) {
        let d_pre = d_hidden * &cache.hidden.mapv(|h| 1.0 - h * h);
        let d_summed = self.layer.backward(&cache.summed, &d_pre, &mut grad.layer);
        for (i, &t) in cache.tokens.iter().enumerate() {
            let row = d_summed.row(i);
            let mut gt = grad.tokens.row_mut(t);
            gt += &row;
            let mut gp = grad.positions.row_mut(i);
            gp += &row;
        }
    }
}

impl TextEncoder for EmbeddingEncoder {
    fn width(&self) -> usize {
        self.tokens.ncols()
    }

    fn max_len(&self) -> usize {
        self.positions.nrows()
    }

    fn encode(&self, tokens: &[TokenId]) -> Result<HiddenSequence> {
        HiddenSequence::new(self.forward(tokens)?.hidden, Source::Text)
    }
}

impl Parameters for EmbeddingEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_matrix(&self.tokens, &join(prefix, "tokens"), f);
        visit_matrix(&self.positions, &join(prefix, "positions"), f);
        self.layer.visit(&join(prefix, "layer"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit_matrix_mut(&mut self.tokens, &join(prefix, "tokens"), f);
        visit_matrix_mut(&mut self.positions, &join(prefix, "positions"), f);
        self.layer.visit_mut(&join(prefix, "layer"), f);
    }
}
