use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tokenizer::TokenId;
use crate::tensor::{
    join, uniform_matrix, visit_matrix, visit_matrix_mut, Affine, Matrix, Parameters, Vector,
};

const PAD_ID: TokenId = 0;
const BOS_ID: TokenId = 1;
const EOS_ID: TokenId = 2;
const UNK_ID: TokenId = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    #[default]
    Greedy,
    Beam(usize),
}

/// Autoregressive token decoder with one cross-attention read per step.
///
/// Step `t` embeds the previous token and its position, `s = e_prev + p_t`,
/// attends over the memory rows with query `W_q s` (scaled by `1/sqrt(width)`)
/// to get `c_t`, and computes
/// `h = tanh(W_in s + W_ctx mean(memory) + W_att c_t)`. Output logits are
/// scored against the encoder's token embeddings `E`: `logits = E W_out h`.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyDecoder {
    pub tokens: Matrix,
    pub positions: Matrix,
    pub input: Affine,
    pub context: Affine,
    pub query: Affine,
    pub attend: Affine,
    pub output: Affine,
}

struct Step {
    summed: Vector,
    query: Vector,
    weights: Vector,
    attended: Vector,
    hidden: Vector,
    out: Vector,
    logits: Vector,
}

impl TinyDecoder {
    pub fn random(
        vocab: usize,
        max_len: usize,
        width: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            tokens: uniform_matrix(vocab, hidden, 1.0, rng),
            positions: uniform_matrix(max_len, hidden, 1.0, rng),
            input: Affine::random(hidden, hidden, rng),
            context: Affine::random(width, hidden, rng),
            query: Affine::random(hidden, width, rng),
            attend: Affine::random(width, hidden, rng),
            output: Affine::random(hidden, width, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tokens: Matrix::zeros(self.tokens.dim()),
            positions: Matrix::zeros(self.positions.dim()),
            input: self.input.zeros_like(),
            context: self.context.zeros_like(),
            query: self.query.zeros_like(),
            attend: self.attend.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    pub fn max_len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.nrows()
    }

    fn check_embed(&self, embed: &Matrix) {
        assert_eq!(
            embed.dim(),
            (self.vocab_size(), self.width()),
            "output embedding shape"
        );
    }

    pub fn width(&self) -> usize {
        self.context.input_dim()
    }

    fn pool(memory: &Matrix) -> Vector {
        memory.mean_axis(Axis(0)).expect("non-empty memory")
    }

    fn scale(&self) -> f64 {
        1.0 / (self.width() as f64).sqrt()
    }

    fn step(
        &self,
        prev: TokenId,
        pos: usize,
        ctx: &Vector,
        memory: &Matrix,
        embed: &Matrix,
    ) -> Step {
        let summed = &self.tokens.row(prev) + &self.positions.row(pos);
        let query = self.query.apply_vec(&summed);
        let scores = memory.dot(&query) * self.scale();
        let max = scores.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut weights = scores.mapv(|x| (x - max).exp());
        weights /= weights.sum();
        let attended = memory.t().dot(&weights);
        let hidden = (self.input.apply_vec(&summed) + ctx + self.attend.apply_vec(&attended))
            .mapv(f64::tanh);
        let out = self.output.apply_vec(&hidden);
        let logits = embed.dot(&out);
        Step {
            summed,
            query,
            weights,
            attended,
            hidden,
            out,
            logits,
        }
    }

    fn candidates(&self, allowed: Option<&[TokenId]>) -> Vec<TokenId> {
        match allowed {
            Some(a) => a.to_vec(),
            None => (0..self.vocab_size())
                .filter(|&t| t != PAD_ID && t != BOS_ID && t != UNK_ID)
                .collect(),
        }
    }

    /// Decodes a token sequence (without `<eos>`). With `allowed`, exactly one
    /// constrained step is taken. Free decoding emits at least one token.
    pub fn decode(
        &self,
        memory: &Matrix,
        embed: &Matrix,
        allowed: Option<&[TokenId]>,
        decoding: Decoding,
    ) -> Vec<TokenId> {
        self.check_embed(embed);
        let ctx = self.context.apply_vec(&Self::pool(memory));
        let cands = self.candidates(allowed);
        if allowed.is_some() {
            let s = self.step(BOS_ID, 0, &ctx, memory, embed);
            return vec![argmax(&s.logits, &cands)];
        }
        match decoding {
            Decoding::Greedy => self.greedy(&ctx, memory, embed, &cands),
            Decoding::Beam(k) if k <= 1 => self.greedy(&ctx, memory, embed, &cands),
            Decoding::Beam(k) => self.beam(&ctx, memory, embed, &cands, k),
        }
    }

    fn greedy(
        &self,
        ctx: &Vector,
        memory: &Matrix,
        embed: &Matrix,
        cands: &[TokenId],
    ) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut prev = BOS_ID;
        let first: Vec<TokenId> = cands.iter().copied().filter(|&t| t != EOS_ID).collect();
        for pos in 0..self.max_len() {
            let s = self.step(prev, pos, ctx, memory, embed);
            let next = argmax(&s.logits, if pos == 0 { &first } else { cands });
            if next == EOS_ID {
                break;
            }
            out.push(next);
            prev = next;
        }
        out
    }

    fn beam(
        &self,
        ctx: &Vector,
        memory: &Matrix,
        embed: &Matrix,
        cands: &[TokenId],
        k: usize,
    ) -> Vec<TokenId> {
        // (log-prob, tokens, finished)
        let mut beams: Vec<(f64, Vec<TokenId>, bool)> = vec![(0.0, Vec::new(), false)];
        for pos in 0..self.max_len() {
            let mut next: Vec<(f64, Vec<TokenId>, bool)> = Vec::new();
            for (score, toks, done) in &beams {
                if *done {
                    next.push((*score, toks.clone(), true));
                    continue;
                }
                let prev = toks.last().copied().unwrap_or(BOS_ID);
                let lp = log_softmax(&self.step(prev, pos, ctx, memory, embed).logits, cands);
                let mut ranked: Vec<(usize, f64)> = lp
                    .iter()
                    .copied()
                    .enumerate()
                    .filter(|&(ci, _)| pos > 0 || cands[ci] != EOS_ID)
                    .collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                for &(ci, l) in ranked.iter().take(k) {
                    let tok = cands[ci];
                    let mut t = toks.clone();
                    let finished = tok == EOS_ID;
                    if !finished {
                        t.push(tok);
                    }
                    next.push((score + l, t, finished));
                }
            }
            next.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            next.truncate(k);
            beams = next;
            if beams.iter().all(|b| b.2) {
                break;
            }
        }
        beams.into_iter().next().map(|b| b.1).unwrap_or_default()
    }

    /// Teacher-forced cross-entropy summed over target positions.
    ///
    /// Returns the summed loss, the number of scored positions and
    /// `dL/dmemory`. Parameter gradients are accumulated into `grad` when
    /// given, and those of the shared embeddings into `d_embed`.
    pub fn loss(
        &self,
        memory: &Matrix,
        embed: &Matrix,
        targets: &[TokenId],
        allowed: Option<&[TokenId]>,
        mut grad: Option<&mut TinyDecoder>,
        mut d_embed: Option<&mut Matrix>,
    ) -> (f64, usize, Matrix) {
        self.check_embed(embed);
        let pooled = Self::pool(memory);
        let ctx = self.context.apply_vec(&pooled);
        let cands = self.candidates(allowed);
        let steps = targets.len().min(self.max_len());
        let scale = self.scale();
        let mut loss = 0.0;
        let mut scored = 0;
        let mut d_ctx = Vector::zeros(ctx.len());
        let mut d_memory = Matrix::zeros(memory.dim());
        let mut prev = BOS_ID;
        for (pos, &target) in targets.iter().take(steps).enumerate() {
            // targets outside the candidate set (e.g. <unk>) are not scored
            let Some(ti) = cands.iter().position(|&c| c == target) else {
                prev = target;
                continue;
            };
            let s = self.step(prev, pos, &ctx, memory, embed);
            let lp = log_softmax(&s.logits, &cands);
            loss -= lp[ti];
            scored += 1;

            let mut d_logits = Vector::zeros(s.logits.len());
            for (ci, &c) in cands.iter().enumerate() {
                d_logits[c] = lp[ci].exp();
            }
            d_logits[target] -= 1.0;

            if let Some(de) = d_embed.as_deref_mut() {
                for &c in &cands {
                    de.row_mut(c).scaled_add(d_logits[c], &s.out);
                }
            }
            let d_out = embed.t().dot(&d_logits);
            let d_hidden = match grad.as_deref_mut() {
                Some(g) => self.output.backward_vec(&s.hidden, &d_out, &mut g.output),
                None => self.output.weight.t().dot(&d_out),
            };
            let d_pre = &d_hidden * &s.hidden.mapv(|h| 1.0 - h * h);
            d_ctx += &d_pre;

            let d_attended = match grad.as_deref_mut() {
                Some(g) => self.attend.backward_vec(&s.attended, &d_pre, &mut g.attend),
                None => self.attend.weight.t().dot(&d_pre),
            };
            let d_weights = memory.dot(&d_attended);
            let mean = s.weights.dot(&d_weights);
            let d_scores = &s.weights * &(d_weights - mean) * scale;
            // memory enters as values and as keys
            for (j, mut row) in d_memory.rows_mut().into_iter().enumerate() {
                row.scaled_add(s.weights[j], &d_attended);
                row.scaled_add(d_scores[j], &s.query);
            }
            let d_query = memory.t().dot(&d_scores);

            if let Some(g) = grad.as_deref_mut() {
                let mut d_summed = self.input.backward_vec(&s.summed, &d_pre, &mut g.input);
                d_summed += &self.query.backward_vec(&s.summed, &d_query, &mut g.query);
                let mut gt = g.tokens.row_mut(prev);
                gt += &d_summed;
                let mut gp = g.positions.row_mut(pos);
                gp += &d_summed;
            }
            prev = target;
        }
        let d_pooled = match grad {
            Some(g) => self.context.backward_vec(&pooled, &d_ctx, &mut g.context),
            None => self.context.weight.t().dot(&d_ctx),
        };
        let n = memory.nrows() as f64;
        for mut row in d_memory.rows_mut() {
            row.scaled_add(1.0 / n, &d_pooled);
        }
        (loss, scored, d_memory)
    }
}

fn argmax(logits: &Vector, cands: &[TokenId]) -> TokenId {
    let mut best = cands[0];
    for &c in &cands[1..] {
        if logits[c] > logits[best] {
            best = c;
        }
    }
    best
}

fn log_softmax(logits: &Vector, cands: &[TokenId]) -> Vec<f64> {
    let max = cands
        .iter()
        .map(|&c| logits[c])
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = cands
        .iter()
        .map(|&c| (logits[c] - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    cands.iter().map(|&c| logits[c] - lse).collect()
}

impl Parameters for TinyDecoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_matrix(&self.tokens, &join(prefix, "tokens"), f);
        visit_matrix(&self.positions, &join(prefix, "positions"), f);
        self.input.visit(&join(prefix, "input"), f);
        self.context.visit(&join(prefix, "context"), f);
        self.query.visit(&join(prefix, "query"), f);
        self.attend.visit(&join(prefix, "attend"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit_matrix_mut(&mut self.tokens, &join(prefix, "tokens"), f);
        visit_matrix_mut(&mut self.positions, &join(prefix, "positions"), f);
        self.input.visit_mut(&join(prefix, "input"), f);
        self.context.visit_mut(&join(prefix, "context"), f);
        self.query.visit_mut(&join(prefix, "query"), f);
        self.attend.visit_mut(&join(prefix, "attend"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}
