//! Independent loop-based oracles and helpers shared by the integration tests.
//! Nothing here calls the library's numeric kernels.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safememe::fusion::{FusionWeights, HiddenSequence, Source};
use safememe::meme::HateLabel;
use safememe::projector::{Aggregation, ProjectorBank};
use safememe::tensor::{Affine, Matrix, Parameters};

pub mod stubs;
pub mod table;

pub type Rows = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rows(m: &Matrix) -> Rows {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn matrix(r: &Rows) -> Matrix {
    let cols = r.first().map_or(0, Vec::len);
    Matrix::from_shape_fn((r.len(), cols), |(i, j)| r[i][j])
}

pub fn random_rows(n: usize, d: usize, rng: &mut impl Rng) -> Rows {
    (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect()
}

pub fn seq(r: &Rows, source: Source) -> HiddenSequence {
    HiddenSequence::new(matrix(r), source).unwrap()
}

/// Random affine map with non-zero bias.
pub fn random_affine(input: usize, output: usize, rng: &mut impl Rng) -> Affine {
    let w = Matrix::from_shape_fn((output, input), |_| rng.gen_range(-1.0..1.0));
    let b = (0..output).map(|_| rng.gen_range(-0.5..0.5)).collect();
    Affine::from_parts(w, b).unwrap()
}

pub fn random_fusion(d: usize, rng: &mut impl Rng) -> FusionWeights {
    FusionWeights {
        w_vision: random_affine(d, d, rng),
        query: random_affine(d, d, rng),
        key: random_affine(d, d, rng),
        value: random_affine(d, d, rng),
        w_fusion_text: random_affine(d, d, rng),
        w_fusion_vision: random_affine(d, d, rng),
    }
}

pub fn category_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

pub fn random_bank(
    aggregation: Aggregation,
    k: usize,
    d: usize,
    rng: &mut impl Rng,
) -> ProjectorBank {
    use safememe::projector::ProjectorKind::*;
    match aggregation {
        Aggregation::V0 => ProjectorBank::generalized("g", random_affine(d, d, rng)).unwrap(),
        Aggregation::V1 => {
            let p = (0..k).map(|_| random_affine(d, d, rng)).collect();
            ProjectorBank::new(
                CategorySpecific,
                Aggregation::V1,
                category_names(k),
                p,
                None,
            )
            .unwrap()
        }
        Aggregation::V2 => {
            let p = (0..k).map(|_| random_affine(d, d, rng)).collect();
            let s = (0..k).map(|_| random_affine(d, 1, rng)).collect();
            ProjectorBank::new(
                CategorySpecific,
                Aggregation::V2,
                category_names(k),
                p,
                Some(s),
            )
            .unwrap()
        }
    }
}

/// `y_i = b + Σ_j W[i][j]·x_j` for one row.
pub fn affine_row(a: &Affine, x: &[f64]) -> Vec<f64> {
    (0..a.output_dim())
        .map(|i| {
            let mut acc = a.bias[i];
            for (j, xj) in x.iter().enumerate() {
                acc += a.weight[(i, j)] * xj;
            }
            acc
        })
        .collect()
}

pub fn affine_rows(a: &Affine, x: &Rows) -> Rows {
    x.iter().map(|r| affine_row(a, r)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn scalar_sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Explicit two-loop softmax attention. Returns `(output, coefficients)`.
pub fn attention_oracle(q: &Rows, k: &Rows, v: &Rows) -> (Rows, Rows) {
    let d = q[0].len() as f64;
    let mut out = Vec::new();
    let mut coeffs = Vec::new();
    for qi in q {
        let scores: Vec<f64> = k.iter().map(|kj| dot(qi, kj) / d.sqrt()).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let a: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let mut row = vec![0.0; v[0].len()];
        for (aj, vj) in a.iter().zip(v) {
            for (r, x) in row.iter_mut().zip(vj) {
                *r += aj * x;
            }
        }
        out.push(row);
        coeffs.push(a);
    }
    (out, coeffs)
}

pub struct FusionOracle {
    pub vision_proj: Rows,
    pub attn: Rows,
    pub coeffs: Rows,
    pub gate: Rows,
    pub fused: Rows,
}

pub fn fusion_oracle(w: &FusionWeights, text: &Rows, vision: &Rows) -> FusionOracle {
    let vision_proj = affine_rows(&w.w_vision, vision);
    let q = affine_rows(&w.query, text);
    let k = affine_rows(&w.key, &vision_proj);
    let v = affine_rows(&w.value, &vision_proj);
    let (attn, coeffs) = attention_oracle(&q, &k, &v);
    let mut gate = Vec::new();
    let mut fused = Vec::new();
    for (t, a) in text.iter().zip(&attn) {
        let zt = affine_row(&w.w_fusion_text, t);
        let za = affine_row(&w.w_fusion_vision, a);
        let g: Vec<f64> = zt
            .iter()
            .zip(&za)
            .map(|(x, y)| scalar_sigmoid(x + y))
            .collect();
        fused.push(
            (0..t.len())
                .map(|j| g[j] * a[j] + (1.0 - g[j]) * t[j])
                .collect(),
        );
        gate.push(g);
    }
    FusionOracle {
        vision_proj,
        attn,
        coeffs,
        gate,
        fused,
    }
}

/// Per-category loop over the bank's projectors and scalers.
pub fn bank_oracle(bank: &ProjectorBank, h: &Rows) -> Rows {
    let count = bank.projectors().len() as f64;
    h.iter()
        .map(|row| {
            let mut out = row.clone();
            for (i, p) in bank.projectors().iter().enumerate() {
                let tr = affine_row(p, row);
                match bank.aggregation() {
                    Aggregation::V0 | Aggregation::V1 => {
                        for (o, t) in out.iter_mut().zip(&tr) {
                            *o += t / count;
                        }
                    }
                    Aggregation::V2 => {
                        let sf = affine_row(&bank.scalers().unwrap()[i], &tr)[0];
                        for (o, x) in out.iter_mut().zip(row) {
                            *o += sf * x / count;
                        }
                    }
                }
            }
            out
        })
        .collect()
}

pub fn max_abs_diff(a: &Rows, b: &Rows) -> f64 {
    assert_eq!(a.len(), b.len(), "row counts differ");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "widths differ");
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Independent confusion counter: `(tp, predicted, gold)` per class, by a
/// separate pass per class.
pub fn brute_force_counts(preds: &[HateLabel], golds: &[HateLabel]) -> [(usize, usize, usize); 3] {
    let mut out = [(0, 0, 0); 3];
    for (c, label) in HateLabel::ALL.iter().enumerate() {
        let mut tp = 0;
        let mut predicted = 0;
        let mut gold = 0;
        for i in 0..preds.len() {
            if preds[i] == *label {
                predicted += 1;
            }
            if golds[i] == *label {
                gold += 1;
            }
            if preds[i] == *label && golds[i] == *label {
                tp += 1;
            }
        }
        out[c] = (tp, predicted, gold);
    }
    out
}

/// `(precision, recall, f1)` from counts, zero when undefined.
pub fn brute_force_scores(tp: usize, predicted: usize, gold: usize) -> (f64, f64, f64) {
    let p = if predicted == 0 {
        0.0
    } else {
        tp as f64 / predicted as f64
    };
    let r = if gold == 0 {
        0.0
    } else {
        tp as f64 / gold as f64
    };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

pub fn random_labels(n: usize, rng: &mut impl Rng) -> Vec<HateLabel> {
    (0..n)
        .map(|_| HateLabel::ALL[rng.gen_range(0..3)])
        .collect()
}

pub fn flatten<P: Parameters + ?Sized>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit("", &mut |_, _, data| out.extend_from_slice(data));
    out
}

pub fn parameter_names<P: Parameters + ?Sized>(p: &P) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    p.visit("", &mut |name, _, data| {
        out.push((name.to_string(), data.len()))
    });
    out
}

/// Adds `delta` to the `index`-th scalar in visit order.
pub fn nudge<P: Parameters + ?Sized>(p: &mut P, index: usize, delta: f64) {
    let mut offset = 0;
    p.visit_mut("", &mut |_, _, data| {
        if index >= offset && index < offset + data.len() {
            data[index - offset] += delta;
        }
        offset += data.len();
    });
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely against it. Central
/// differences at step 1e-5 carry roundoff near 1e-11 times the loss, and
/// some gradients (the key bias) are exactly zero.
pub const FD_ABS_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_ABS_FLOOR)
}

/// Worst relative error between analytic gradients and central differences
/// of `loss` over every scalar of `params`, with the offending name.
pub fn worst_fd_error<P: Parameters + Clone>(
    params: &P,
    analytic: &P,
    loss: impl Fn(&P) -> f64,
) -> (f64, String) {
    let names = parameter_names(params);
    let grads = flatten(analytic);
    let mut worst = (0.0, String::new());
    let mut index = 0;
    for (name, len) in names {
        for k in 0..len {
            let mut plus = params.clone();
            nudge(&mut plus, index, FD_STEP);
            let mut minus = params.clone();
            nudge(&mut minus, index, -FD_STEP);
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            let err = relative_error(grads[index], numeric);
            if err > worst.0 {
                worst = (err, format!("{name}[{k}]"));
            }
            index += 1;
        }
    }
    worst
}

pub mod corpus {
    use std::collections::BTreeSet;
    use std::path::{Path, PathBuf};

    use safememe::data::{DatasetRecord, Split};
    use safememe::meme::HateLabel;

    /// Per-split class counts of the MHS corpus (explicit, implicit, benign).
    pub const MHS_LAYOUT: [(Split, [usize; 3]); 3] = [
        (Split::Train, [795, 753, 685]),
        (Split::Validation, [100, 100, 105]),
        (Split::Test, [247, 293, 265]),
    ];

    pub fn record(id: String, image: &str, label: HateLabel, split: Split) -> DatasetRecord {
        DatasetRecord {
            id,
            image_path: image.to_string(),
            text: "some caption".into(),
            label: Some(label),
            targets: BTreeSet::new(),
            gdesc: Some("a picture".into()),
            qa: Some(vec![("Q?".into(), "A.".into())]),
            split,
            image_only: false,
        }
    }

    /// Records with exactly the MHS split and class totals, all sharing one image.
    pub fn mhs_records() -> Vec<DatasetRecord> {
        let mut out = Vec::new();
        for (split, counts) in MHS_LAYOUT {
            for (label, count) in HateLabel::ALL.iter().zip(counts) {
                for i in 0..count {
                    out.push(record(
                        format!("{split}-{label}-{i}"),
                        "img.png",
                        *label,
                        split,
                    ));
                }
            }
        }
        out
    }

    /// `count` confounder triplets, one image each.
    pub fn triplet_records(count: usize) -> Vec<DatasetRecord> {
        let mut out = Vec::new();
        for t in 0..count {
            for label in HateLabel::ALL {
                out.push(record(
                    format!("t{t}-{label}"),
                    &format!("img{t}.png"),
                    label,
                    Split::Test,
                ));
            }
        }
        out
    }

    /// Writes a manifest with the given header source and touches every image.
    pub fn write_manifest(dir: &Path, source: &str, records: &[DatasetRecord]) -> PathBuf {
        let ds = safememe::data::Dataset::from_records(
            safememe::data::SourceDataset::Synthetic,
            records.to_vec(),
            Default::default(),
        )
        .expect("synthetic datasets accept any counts");
        let body = ds.to_manifest_string();
        let (_, lines) = body.split_once('\n').unwrap();
        for r in records {
            let p = dir.join(&r.image_path);
            if !p.exists() {
                std::fs::write(p, b"").unwrap();
            }
        }
        let path = dir.join("manifest.jsonl");
        std::fs::write(
            &path,
            format!("safe-meme-manifest v1 source={source}\n{lines}"),
        )
        .unwrap();
        path
    }
}
