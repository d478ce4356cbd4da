//! Residual linear projectors applied to a fused state.
//!
//! * `v0` (gLP): `H + Proj(H)`; the same form serves as the task projector of
//!   a hierarchical classifier.
//! * `v1` (cLP): `H + mean_i Proj_i(H)`.
//! * `v2` (cLP + scaling): `tr_i = Proj_i(H)`, `sf_i = Scaler_i(tr_i)` (one
//!   scalar per row), `H + mean_i (sf_i ⊙ H)`.

use std::fmt;

use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusedState;
use crate::tensor::{join, Affine, Matrix, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProjectorKind {
    #[serde(rename = "gLP")]
    Generalized,
    #[serde(rename = "cLP")]
    CategorySpecific,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    V0,
    V1,
    V2,
}

impl fmt::Display for ProjectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectorKind::Generalized => "gLP",
            ProjectorKind::CategorySpecific => "cLP",
        })
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::V0 => "v0",
            Aggregation::V1 => "v1",
            Aggregation::V2 => "v2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorBank {
    kind: ProjectorKind,
    aggregation: Aggregation,
    categories: Vec<String>,
    projectors: Vec<Affine>,
    scalers: Option<Vec<Affine>>,
}

impl ProjectorBank {
    pub fn new(
        kind: ProjectorKind,
        aggregation: Aggregation,
        categories: Vec<String>,
        projectors: Vec<Affine>,
        scalers: Option<Vec<Affine>>,
    ) -> Result<Self> {
        match (kind, aggregation) {
            (ProjectorKind::Generalized, Aggregation::V0) => {
                if projectors.len() != 1 || categories.len() != 1 {
                    return Err(Error::shape("a gLP bank holds exactly one projector"));
                }
            }
            (ProjectorKind::CategorySpecific, Aggregation::V1 | Aggregation::V2) => {
                if projectors.is_empty() || projectors.len() != categories.len() {
                    return Err(Error::shape(format!(
                        "cLP bank has {} projectors for {} categories",
                        projectors.len(),
                        categories.len()
                    )));
                }
            }
            (k, a) => {
                return Err(Error::InvalidInput(format!(
                    "projector kind {k} cannot use aggregation {a}"
                )))
            }
        }
        let width = projectors[0].input_dim();
        for p in &projectors {
            if p.input_dim() != width || p.output_dim() != width {
                return Err(Error::shape(format!(
                    "projectors must map {width} -> {width}, found {} -> {}",
                    p.input_dim(),
                    p.output_dim()
                )));
            }
        }
        let scalers = match aggregation {
            Aggregation::V2 => {
                let s = scalers.ok_or_else(|| Error::MissingScaler(categories[0].clone()))?;
                if s.len() != categories.len() {
                    let missing = categories.get(s.len()).cloned().unwrap_or_default();
                    return Err(Error::MissingScaler(missing));
                }
                for sc in &s {
                    if sc.input_dim() != width || sc.output_dim() != 1 {
                        return Err(Error::shape(format!(
                            "scalers must map {width} -> 1, found {} -> {}",
                            sc.input_dim(),
                            sc.output_dim()
                        )));
                    }
                }
                Some(s)
            }
            _ => None,
        };
        Ok(Self {
            kind,
            aggregation,
            categories,
            projectors,
            scalers,
        })
    }

    pub fn generalized(id: impl Into<String>, projector: Affine) -> Result<Self> {
        Self::new(
            ProjectorKind::Generalized,
            Aggregation::V0,
            vec![id.into()],
            vec![projector],
            None,
        )
    }

    pub fn random_generalized(id: impl Into<String>, width: usize, rng: &mut impl Rng) -> Self {
        Self::generalized(id, Affine::random(width, width, rng)).expect("valid gLP")
    }

    pub fn random_category(
        aggregation: Aggregation,
        categories: Vec<String>,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let projectors = categories
            .iter()
            .map(|_| Affine::random(width, width, rng))
            .collect();
        let scalers = (aggregation == Aggregation::V2).then(|| {
            categories
                .iter()
                .map(|_| Affine::random(width, 1, rng))
                .collect()
        });
        Self::new(
            ProjectorKind::CategorySpecific,
            aggregation,
            categories,
            projectors,
            scalers,
        )
    }

    /// A generalized bank whose projector starts at zero, so the residual
    /// output equals the input until training moves it.
    pub fn residual_generalized(id: impl Into<String>, width: usize) -> Self {
        Self::generalized(id, Affine::zeros(width, width)).expect("valid gLP")
    }

    /// A category bank that starts as the identity map: zero projectors for
    /// v0/v1, and random projectors behind zero scalers for v2.
    pub fn residual_category(
        aggregation: Aggregation,
        categories: Vec<String>,
        width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (projectors, scalers) = match aggregation {
            Aggregation::V2 => (
                categories
                    .iter()
                    .map(|_| Affine::random(width, width, rng))
                    .collect(),
                Some(categories.iter().map(|_| Affine::zeros(width, 1)).collect()),
            ),
            _ => (
                categories
                    .iter()
                    .map(|_| Affine::zeros(width, width))
                    .collect(),
                None,
            ),
        };
        Self::new(
            ProjectorKind::CategorySpecific,
            aggregation,
            categories,
            projectors,
            scalers,
        )
    }

    pub fn kind(&self) -> ProjectorKind {
        self.kind
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn projectors(&self) -> &[Affine] {
        &self.projectors
    }

    pub fn scalers(&self) -> Option<&[Affine]> {
        self.scalers.as_deref()
    }

    pub fn width(&self) -> usize {
        self.projectors[0].input_dim()
    }

    /// A one-category bank holding category `index`, with the same aggregation.
    pub fn member(&self, index: usize) -> Self {
        Self {
            kind: self.kind,
            aggregation: self.aggregation,
            categories: vec![self.categories[index].clone()],
            projectors: vec![self.projectors[index].clone()],
            scalers: self.scalers.as_ref().map(|s| vec![s[index].clone()]),
        }
    }

    /// Replaces the member at `index` with the single member of `single`.
    pub fn set_member(&mut self, index: usize, single: &ProjectorBank) -> Result<()> {
        if single.projectors.len() != 1 || single.aggregation != self.aggregation {
            return Err(Error::shape(
                "replacement must be a one-member bank of the same aggregation",
            ));
        }
        if single.width() != self.width() {
            return Err(Error::shape("replacement projector width differs"));
        }
        self.projectors[index] = single.projectors[0].clone();
        if let (Some(dst), Some(src)) = (self.scalers.as_mut(), single.scalers.as_ref()) {
            dst[index] = src[0].clone();
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            kind: self.kind,
            aggregation: self.aggregation,
            categories: self.categories.clone(),
            projectors: self.projectors.iter().map(Affine::zeros_like).collect(),
            scalers: self
                .scalers
                .as_ref()
                .map(|s| s.iter().map(Affine::zeros_like).collect()),
        }
    }

    pub fn apply(&self, state: &FusedState) -> Result<FusedState> {
        self.apply_traced(state, &mut |_| {})
    }

    /// Applies the bank, reporting each category projector as it runs.
    pub fn apply_traced(
        &self,
        state: &FusedState,
        on_project: &mut dyn FnMut(&str),
    ) -> Result<FusedState> {
        let cache = self.forward_traced(&state.fused, on_project)?;
        Ok(FusedState {
            fused: cache.output,
            gate: state.gate.clone(),
        })
    }

    pub fn forward(&self, h: &Matrix) -> Result<BankCache> {
        self.forward_traced(h, &mut |_| {})
    }

    fn forward_traced(&self, h: &Matrix, on_project: &mut dyn FnMut(&str)) -> Result<BankCache> {
        if h.ncols() != self.width() {
            return Err(Error::shape(format!(
                "projector bank width {} does not match state width {}",
                self.width(),
                h.ncols()
            )));
        }
        let count = self.projectors.len() as f64;
        let mut output = h.clone();
        let mut transformed = Vec::with_capacity(self.projectors.len());
        let mut scale_factors = Vec::new();
        for (i, proj) in self.projectors.iter().enumerate() {
            on_project(&self.categories[i]);
            let tr = proj.apply(h);
            match self.aggregation {
                Aggregation::V0 | Aggregation::V1 => {
                    output.scaled_add(1.0 / count, &tr);
                }
                Aggregation::V2 => {
                    let scaler = self
                        .scalers
                        .as_ref()
                        .and_then(|s| s.get(i))
                        .ok_or_else(|| Error::MissingScaler(self.categories[i].clone()))?;
                    // (n, 1) scale factor, broadcast over the width
                    let sf = scaler.apply(&tr);
                    output += &(h * &sf / count);
                    scale_factors.push(sf);
                }
            }
            transformed.push(tr);
        }
        Ok(BankCache {
            input: h.clone(),
            transformed,
            scale_factors,
            output,
        })
    }

    /// Accumulates into `grad` and returns `dL/dH`.
    pub fn backward(&self, cache: &BankCache, d_out: &Matrix, grad: &mut ProjectorBank) -> Matrix {
        let h = &cache.input;
        let count = self.projectors.len() as f64;
        let mut d_h = d_out.clone();
        let d_share = d_out / count;
        for (i, proj) in self.projectors.iter().enumerate() {
            let d_tr = match self.aggregation {
                Aggregation::V0 | Aggregation::V1 => d_share.clone(),
                Aggregation::V2 => {
                    let sf = &cache.scale_factors[i];
                    d_h += &(&d_share * sf);
                    let d_sf = (&d_share * h).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let scaler = &self.scalers.as_ref().expect("v2 scalers")[i];
                    let grad_scaler = &mut grad.scalers.as_mut().expect("v2 scalers")[i];
                    scaler.backward(&cache.transformed[i], &d_sf, grad_scaler)
                }
            };
            d_h += &proj.backward(h, &d_tr, &mut grad.projectors[i]);
        }
        d_h
    }
}

/// Intermediates of a bank forward pass.
#[derive(Debug, Clone)]
pub struct BankCache {
    pub input: Matrix,
    pub transformed: Vec<Matrix>,
    pub scale_factors: Vec<Matrix>,
    pub output: Matrix,
}

impl Parameters for ProjectorBank {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, cat) in self.categories.iter().enumerate() {
            let base = join(prefix, cat);
            self.projectors[i].visit(&join(&base, "proj"), f);
            if let Some(s) = &self.scalers {
                s[i].visit(&join(&base, "scaler"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, cat) in self.categories.iter().enumerate() {
            let base = join(prefix, cat);
            self.projectors[i].visit_mut(&join(&base, "proj"), f);
            if let Some(s) = &mut self.scalers {
                s[i].visit_mut(&join(&base, "scaler"), f);
            }
        }
    }
}
