//! Cross-modal fusion: vision projection, single-head cross-attention and the
//! sigmoid-gated interpolation between text states and attended vision.
//!
//! ```text
//! H_vision ──W_vision──▶ Ĥ_vision ──K,V──┐
//! H_text ─────────────────────────Q──────┴─▶ softmax(QKᵀ/√d)·V = H_attn
//! λ = σ(W_ft·H_text + W_fv·H_attn)
//! fused = λ ⊙ H_attn + (1 − λ) ⊙ H_text
//! ```
//!
//! Every forward pass can keep its intermediates in a [`FusionCache`] so the
//! training loop can run the matching analytic backward pass.

use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{all_finite, join, sigmoid, softmax_rows, Affine, Matrix, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Text,
    Vision,
    Attention,
}

/// A `(length, width)` block of encoder activations.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSequence {
    vectors: Matrix,
    source: Source,
}

impl HiddenSequence {
    pub fn new(vectors: Matrix, source: Source) -> Result<Self> {
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(Error::shape(format!(
                "hidden sequence must be non-empty, got {:?}",
                vectors.dim()
            )));
        }
        if !all_finite(&vectors) {
            return Err(Error::InvalidInput(
                "hidden sequence contains non-finite values".into(),
            ));
        }
        Ok(Self {
            vectors: vectors.as_standard_layout().to_owned(),
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.vectors.dim()
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn into_vectors(self) -> Matrix {
        self.vectors
    }
}

/// Gated multimodal state: the fused matrix and the gate that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedState {
    pub fused: Matrix,
    pub gate: Matrix,
}

impl FusedState {
    pub fn new(fused: Matrix, gate: Matrix) -> Result<Self> {
        if fused.dim() != gate.dim() {
            return Err(Error::shape(format!(
                "fused {:?} and gate {:?} differ in shape",
                fused.dim(),
                gate.dim()
            )));
        }
        if fused.nrows() == 0 || fused.ncols() == 0 {
            return Err(Error::shape("fused state must be non-empty"));
        }
        Ok(Self { fused, gate })
    }

    pub fn len(&self) -> usize {
        self.fused.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.fused.ncols()
    }
}

/// Trainable maps of the fusion block. All maps are `d -> d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub w_vision: Affine,
    pub query: Affine,
    pub key: Affine,
    pub value: Affine,
    pub w_fusion_text: Affine,
    pub w_fusion_vision: Affine,
}

impl FusionWeights {
    pub fn random(width: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_vision: Affine::random(width, width, rng),
            query: Affine::random(width, width, rng),
            key: Affine::random(width, width, rng),
            value: Affine::random(width, width, rng),
            w_fusion_text: Affine::random(width, width, rng),
            w_fusion_vision: Affine::random(width, width, rng),
        }
    }

    /// Identity projections everywhere, zero gate maps.
    pub fn identity(width: usize) -> Self {
        Self {
            w_vision: Affine::identity(width),
            query: Affine::identity(width),
            key: Affine::identity(width),
            value: Affine::identity(width),
            w_fusion_text: Affine::zeros(width, width),
            w_fusion_vision: Affine::zeros(width, width),
        }
    }

    pub fn width(&self) -> usize {
        self.query.input_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_vision: self.w_vision.zeros_like(),
            query: self.query.zeros_like(),
            key: self.key.zeros_like(),
            value: self.value.zeros_like(),
            w_fusion_text: self.w_fusion_text.zeros_like(),
            w_fusion_vision: self.w_fusion_vision.zeros_like(),
        }
    }

    fn maps(&self) -> [(&'static str, &Affine); 6] {
        [
            ("w_vision", &self.w_vision),
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
            ("w_fusion_text", &self.w_fusion_text),
            ("w_fusion_vision", &self.w_fusion_vision),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.maps().iter().all(|(_, m)| m.is_finite())
    }

    /// Runs projection, attention and gating, keeping every intermediate.
    pub fn forward(&self, text: &HiddenSequence, vision: &HiddenSequence) -> Result<FusionCache> {
        let vision_proj = project_vision(vision, self)?;
        let attended = attend(text, &vision_proj, self)?;
        let (gate, fused) = gate_and_mix(text.vectors(), &attended.attn, self)?;
        Ok(FusionCache {
            text: text.vectors().clone(),
            vision: vision.vectors().clone(),
            vision_proj: vision_proj.into_vectors(),
            query: attended.query,
            key: attended.key,
            value: attended.value,
            attn_weights: attended.weights,
            attn: attended.attn,
            gate,
            fused,
        })
    }

    /// Backward pass for `forward`. Accumulates into `grad` and returns
    /// `dL/dH_text`. The vision encoder is treated as frozen, so no gradient
    /// is returned for `H_vision`.
    pub fn backward(
        &self,
        cache: &FusionCache,
        d_fused: &Matrix,
        grad: &mut FusionWeights,
    ) -> Matrix {
        let text = &cache.text;
        let attn = &cache.attn;
        let gate = &cache.gate;

        // fused = λ·attn + (1-λ)·text
        let d_gate = d_fused * &(attn - text);
        let mut d_attn = d_fused * gate;
        let mut d_text = d_fused * &gate.mapv(|g| 1.0 - g);

        // λ = σ(z)
        let d_z = &d_gate * &gate.mapv(|g| g * (1.0 - g));
        d_text += &self
            .w_fusion_text
            .backward(text, &d_z, &mut grad.w_fusion_text);
        d_attn += &self
            .w_fusion_vision
            .backward(attn, &d_z, &mut grad.w_fusion_vision);

        // attn = A · V
        let a = &cache.attn_weights;
        let d_a = d_attn.dot(&cache.value.t());
        let d_value = a.t().dot(&d_attn);

        // A = softmax(S), S = Q Kᵀ / √d
        let row_dot = (&d_a * a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let scale = 1.0 / (cache.query.ncols() as f64).sqrt();
        let d_scores = (a * &(&d_a - &row_dot)) * scale;
        let d_query = d_scores.dot(&cache.key);
        let d_key = d_scores.t().dot(&cache.query);

        d_text += &self.query.backward(text, &d_query, &mut grad.query);
        let vp = &cache.vision_proj;
        let mut d_vp = self.key.backward(vp, &d_key, &mut grad.key);
        d_vp += &self.value.backward(vp, &d_value, &mut grad.value);
        self.w_vision
            .backward(&cache.vision, &d_vp, &mut grad.w_vision);

        d_text
    }
}

impl Parameters for FusionWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (name, map) in self.maps() {
            map.visit(&join(prefix, name), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.w_vision.visit_mut(&join(prefix, "w_vision"), f);
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.w_fusion_text
            .visit_mut(&join(prefix, "w_fusion_text"), f);
        self.w_fusion_vision
            .visit_mut(&join(prefix, "w_fusion_vision"), f);
    }
}

/// Intermediates of one fusion forward pass.
#[derive(Debug, Clone)]
pub struct FusionCache {
    pub text: Matrix,
    pub vision: Matrix,
    pub vision_proj: Matrix,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    /// `(n, p)` softmax coefficients; each row sums to one.
    pub attn_weights: Matrix,
    pub attn: Matrix,
    pub gate: Matrix,
    pub fused: Matrix,
}

impl FusionCache {
    pub fn state(&self) -> FusedState {
        FusedState {
            fused: self.fused.clone(),
            gate: self.gate.clone(),
        }
    }
}

/// `Ĥ_vision = W_vision · H_vision`, row-wise.
pub fn project_vision(
    h_vision: &HiddenSequence,
    weights: &FusionWeights,
) -> Result<HiddenSequence> {
    if h_vision.source() != Source::Vision {
        return Err(Error::InvalidInput(format!(
            "vision projection expects a vision sequence, got {:?}",
            h_vision.source()
        )));
    }
    let projected = weights.w_vision.forward(h_vision.vectors())?;
    HiddenSequence::new(projected, Source::Vision)
}

struct Attended {
    query: Matrix,
    key: Matrix,
    value: Matrix,
    weights: Matrix,
    attn: Matrix,
}

fn attend(
    text: &HiddenSequence,
    vision_proj: &HiddenSequence,
    w: &FusionWeights,
) -> Result<Attended> {
    let query = w.query.forward(text.vectors())?;
    let key = w.key.forward(vision_proj.vectors())?;
    let value = w.value.forward(vision_proj.vectors())?;
    if query.ncols() != key.ncols() {
        return Err(Error::shape(format!(
            "query width {} differs from key width {}",
            query.ncols(),
            key.ncols()
        )));
    }
    let scale = 1.0 / (query.ncols() as f64).sqrt();
    let scores = query.dot(&key.t()) * scale;
    let weights = softmax_rows(&scores);
    let attn = weights.dot(&value);
    Ok(Attended {
        query,
        key,
        value,
        weights,
        attn,
    })
}

/// Single-head scaled dot-product attention with text queries over projected
/// vision keys and values.
pub fn cross_attend(
    h_text: &HiddenSequence,
    h_vision_proj: &HiddenSequence,
    weights: &FusionWeights,
) -> Result<HiddenSequence> {
    cross_attend_with_weights(h_text, h_vision_proj, weights).map(|(h, _)| h)
}

/// Like [`cross_attend`], also returning the `(n, p)` attention coefficients.
pub fn cross_attend_with_weights(
    h_text: &HiddenSequence,
    h_vision_proj: &HiddenSequence,
    weights: &FusionWeights,
) -> Result<(HiddenSequence, Matrix)> {
    let a = attend(h_text, h_vision_proj, weights)?;
    Ok((HiddenSequence::new(a.attn, Source::Attention)?, a.weights))
}

fn gate_and_mix(text: &Matrix, attn: &Matrix, w: &FusionWeights) -> Result<(Matrix, Matrix)> {
    if text.dim() != attn.dim() {
        return Err(Error::shape(format!(
            "text {:?} and attended {:?} must share a shape",
            text.dim(),
            attn.dim()
        )));
    }
    let z = w.w_fusion_text.forward(text)? + w.w_fusion_vision.forward(attn)?;
    if z.dim() != text.dim() {
        return Err(Error::shape(format!(
            "gate maps produce {:?}, expected {:?}",
            z.dim(),
            text.dim()
        )));
    }
    let gate = z.mapv(sigmoid);
    let fused = &gate * attn + &gate.mapv(|g| 1.0 - g) * text;
    Ok((gate, fused))
}

/// `λ = σ(W_ft·H_text + W_fv·H_attn)`, `fused = λ⊙H_attn + (1−λ)⊙H_text`.
pub fn gated_fuse(
    h_text: &HiddenSequence,
    h_attn: &HiddenSequence,
    weights: &FusionWeights,
) -> Result<FusedState> {
    let (gate, fused) = gate_and_mix(h_text.vectors(), h_attn.vectors(), weights)?;
    FusedState::new(fused, gate)
}
