//! Stage-by-stage training of complete variants.
//!
//! Each stage is trained on the training split. Downstream stages read the
//! generations of the already-trained upstream stages, so they see at
//! training time the same kind of input they will see at inference.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::h::{generate_description, level_target, level_words, HSystem};
use super::qa::{
    cls_input_text, format_qa_pairs, format_questions, run_generation, ClsInput, QaSettings,
    QaSystem, SharedGenerator,
};
use super::{join_inputs, MemeClassifier, RunTrace};
use crate::backbone::{Decoding, PatchEncoder, VisionEncoder, Vocab};
use crate::checkpoint::parameter_hash;
use crate::data::{Dataset, DatasetRecord, Split};
use crate::error::{Error, Result};
use crate::fusion::HiddenSequence;
use crate::label::{NoMatchPolicy, RuleSet, CLASS_WORDS};
use crate::model::{
    train, Example, ModelConfig, Seq2Seq, StageGenerator, Target, TrainConfig, TrainReport,
    TrainScope,
};
use crate::projector::{ProjectorBank, ProjectorKind};
use crate::taxonomy::Category;
use crate::variants::{BackboneMode, Family, StageTag, VariantSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Epochs for offline projector training.
    pub projector_epochs: usize,
    pub projector_learning_rate: f64,
    /// Epochs of label-free reconstruction that stand in for pretraining of
    /// a frozen stub backbone.
    pub pretrain_epochs: usize,
    pub decoding: Decoding,
    pub max_questions: usize,
    pub cls_input: ClsInput,
    /// Seed of the frozen patch encoder.
    pub vision_seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            projector_epochs: 10,
            projector_learning_rate: 0.05,
            pretrain_epochs: 10,
            decoding: Decoding::Greedy,
            max_questions: super::qa::DEFAULT_MAX_QUESTIONS,
            cls_input: ClsInput::default(),
            vision_seed: 17,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// Per-epoch losses of every trained module, keyed like the checkpoints.
    pub losses: BTreeMap<String, Vec<f64>>,
    /// Backbone parameter hashes before and after training, per model.
    pub backbone_hashes: BTreeMap<String, (String, String)>,
}

impl TrainSummary {
    pub fn backbones_unchanged(&self) -> bool {
        self.backbone_hashes.values().all(|(a, b)| a == b)
    }
}

/// The concrete trained parts of a variant, ready to save or assemble.
#[derive(Debug, Clone)]
pub struct TrainedSystem {
    pub variant: VariantSpec,
    pub vocab: Arc<Vocab>,
    pub options: TrainOptions,
    /// Stage models. QA variants key them by stage tag; H variants use
    /// `DGen_H` and `HCls` (one model with a head per level).
    pub models: BTreeMap<String, Arc<Seq2Seq>>,
    /// `description`, `task0` and `task1` banks, where the variant has them.
    pub banks: BTreeMap<String, ProjectorBank>,
    pub summary: TrainSummary,
}

pub const HCLS_MODEL: &str = "HCls";
pub const DESCRIPTION_BANK: &str = "description";

pub fn task_bank_key(level: u8) -> String {
    format!("task{level}")
}

impl TrainedSystem {
    pub fn vision_encoder(&self) -> Arc<dyn VisionEncoder + Send + Sync> {
        Arc::new(PatchEncoder::new(
            self.options.model.patch_size,
            self.options.model.width,
            self.options.vision_seed,
        ))
    }

    fn model(&self, key: &str) -> Result<Arc<Seq2Seq>> {
        self.models.get(key).cloned().ok_or_else(|| {
            Error::CheckpointMissing(format!("model `{key}` for {}", self.variant.id))
        })
    }

    fn generator(&self, key: &str, head: usize) -> Result<SharedGenerator> {
        Ok(Arc::new(StageGenerator::new(
            self.model(key)?,
            head,
            self.options.decoding,
        )))
    }

    pub fn qa_system(&self, rules: RuleSet, no_match: NoMatchPolicy) -> Result<QaSystem> {
        self.assemble_qa(rules, no_match, false)
    }

    /// With `partial`, stages without a trained model are left out.
    fn assemble_qa(
        &self,
        rules: RuleSet,
        no_match: NoMatchPolicy,
        partial: bool,
    ) -> Result<QaSystem> {
        self.variant.expect_family(Family::Qa)?;
        let mut generators = BTreeMap::new();
        for stage in self.variant.stages.iter().filter(|s| s.is_generative()) {
            if partial && !self.models.contains_key(stage.as_str()) {
                continue;
            }
            generators.insert(*stage, self.generator(stage.as_str(), 0)?);
        }
        Ok(QaSystem {
            variant: self.variant.clone(),
            vision: self.vision_encoder(),
            generators,
            settings: QaSettings {
                max_questions: self.options.max_questions,
                rules,
                no_match,
                cls_input: self.options.cls_input,
            },
        })
    }

    pub fn h_system(&self) -> Result<HSystem> {
        self.variant.expect_family(Family::H)?;
        Ok(HSystem {
            variant: self.variant.clone(),
            vision: self.vision_encoder(),
            describer: self.generator(StageTag::DGenH.as_str(), 0)?,
            description_bank: self.banks.get(DESCRIPTION_BANK).cloned(),
            classifiers: [
                self.generator(HCLS_MODEL, 0)?,
                self.generator(HCLS_MODEL, 1)?,
            ],
            task_banks: [
                self.banks.get(&task_bank_key(0)).cloned(),
                self.banks.get(&task_bank_key(1)).cloned(),
            ],
        })
    }

    pub fn classifier(
        &self,
        rules: RuleSet,
        no_match: NoMatchPolicy,
    ) -> Result<Box<dyn MemeClassifier + Send + Sync>> {
        Ok(match self.variant.family {
            Family::Qa => Box::new(self.qa_system(rules, no_match)?),
            Family::H => Box::new(self.h_system()?),
        })
    }
}

/// Vocabulary over the training split's texts and annotations plus every
/// label word.
pub fn build_vocab(dataset: &Dataset) -> Vocab {
    let mut texts: Vec<String> = Vec::new();
    for r in dataset.split(Split::Train) {
        texts.push(r.text.clone());
        texts.extend(r.gdesc.clone());
        if let Some(qa) = &r.qa {
            texts.push(format_qa_pairs(qa));
        }
    }
    texts.push(CLASS_WORDS.join(" "));
    texts.push(level_words(0).join(" "));
    texts.push(level_words(1).join(" "));
    texts.push("Q: A: hate".to_string());
    Vocab::build(texts)
}

pub type VisionCache = HashMap<String, Arc<HiddenSequence>>;

pub fn encode_records<'a>(
    dataset: &Dataset,
    records: impl IntoIterator<Item = &'a DatasetRecord>,
    encoder: &dyn VisionEncoder,
) -> Result<VisionCache> {
    let mut cache = HashMap::new();
    for r in records {
        let img = dataset.image_source(r).load()?;
        cache.insert(r.id.clone(), Arc::new(encoder.encode(&img)?));
    }
    Ok(cache)
}

fn stage_seed(seed: u64, salt: &str) -> u64 {
    salt.bytes().fold(seed ^ 0x9E37_79B9_7F4A_7C15, |h, b| {
        h.rotate_left(7) ^ (b as u64).wrapping_mul(0x100_0000_01B3)
    })
}

fn missing(stage: StageTag, field: &str, r: &DatasetRecord) -> Error {
    Error::MissingSupervision {
        stage: stage.to_string(),
        field: field.to_string(),
        record: r.id.clone(),
    }
}

/// Per-record generations of upstream stages, keyed by record id.
#[derive(Debug, Clone, Default)]
pub struct Upstream {
    pub descriptions: HashMap<String, String>,
    pub contexts: HashMap<String, String>,
    pub cls_inputs: HashMap<String, String>,
}

fn gold_gdesc<'a>(stage: StageTag, r: &'a DatasetRecord) -> Result<&'a str> {
    r.gdesc.as_deref().ok_or_else(|| missing(stage, "gdesc", r))
}

fn gold_qa(stage: StageTag, r: &DatasetRecord) -> Result<&[(String, String)]> {
    match r.qa.as_deref() {
        Some(qa) if !qa.is_empty() => Ok(qa),
        _ => Err(missing(stage, "qa", r)),
    }
}

/// Training examples of one question-answer stage. Upstream generations are
/// used where present; otherwise the gold description stands in.
pub fn qa_stage_examples(
    stage: StageTag,
    records: &[&DatasetRecord],
    vision: &VisionCache,
    upstream: &Upstream,
) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for r in records {
        let v = vision
            .get(&r.id)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no vision state for {}", r.id)))?;
        let desc = || -> Result<String> {
            match upstream.descriptions.get(&r.id) {
                Some(d) => Ok(d.clone()),
                None => gold_gdesc(stage, r).map(str::to_string),
            }
        };
        let text_ex = |input: String, target: String| Example {
            id: r.id.clone(),
            head: 0,
            input,
            vision: v.clone(),
            target: Target::Text(target),
        };
        match stage {
            StageTag::DGenQa | StageTag::Cg0 => {
                out.push(text_ex(r.text.clone(), gold_gdesc(stage, r)?.to_string()));
            }
            StageTag::Cg1 => {
                let target = gold_gdesc(stage, r)?.to_string();
                out.push(text_ex(join_inputs(&desc()?, &r.text), target));
            }
            StageTag::Qag1 => {
                let target = format_qa_pairs(gold_qa(stage, r)?);
                let prefix = match upstream.contexts.get(&r.id) {
                    Some(c) => c.clone(),
                    None => desc()?,
                };
                out.push(text_ex(join_inputs(&prefix, &r.text), target));
            }
            StageTag::Qg0 | StageTag::Qg1 => {
                let qs: Vec<&str> = gold_qa(stage, r)?.iter().map(|(q, _)| q.as_str()).collect();
                let input = if stage == StageTag::Qg1 {
                    join_inputs(&desc()?, &r.text)
                } else {
                    r.text.clone()
                };
                out.push(text_ex(input, format_questions(&qs)));
            }
            StageTag::Rg0 | StageTag::Rg1 => {
                for (q, a) in gold_qa(stage, r)? {
                    let input = if stage == StageTag::Rg1 {
                        join_inputs(&desc()?, q)
                    } else {
                        q.clone()
                    };
                    out.push(text_ex(input, a.clone()));
                }
            }
            StageTag::ClsFt => {
                let label = r.label.ok_or_else(|| missing(stage, "label", r))?;
                let input = match upstream.cls_inputs.get(&r.id) {
                    Some(i) => i.clone(),
                    None => {
                        let mut parts = vec![gold_gdesc(stage, r)?.to_string()];
                        if let Some(qa) = r.qa.as_deref() {
                            parts.push(format_qa_pairs(qa));
                        }
                        parts.join(super::INPUT_SEP)
                    }
                };
                out.push(Example {
                    id: r.id.clone(),
                    head: 0,
                    input,
                    vision: v.clone(),
                    target: Target::Label {
                        word: label.to_string(),
                        allowed: CLASS_WORDS.iter().map(|s| s.to_string()).collect(),
                    },
                });
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "{other} is not a trainable question-answer stage"
                )));
            }
        }
    }
    Ok(out)
}

/// Trains one question-answer stage model from scratch on the training split.
pub fn train_qa_stage(
    stage: StageTag,
    dataset: &Dataset,
    vocab: Arc<Vocab>,
    vision: &VisionCache,
    upstream: &Upstream,
    options: &TrainOptions,
) -> Result<(Seq2Seq, TrainReport)> {
    let records: Vec<&DatasetRecord> = dataset.split(Split::Train).collect();
    let examples = qa_stage_examples(stage, &records, vision, upstream)?;
    let mut model = Seq2Seq::new(
        vocab,
        options.model,
        1,
        stage_seed(options.train.seed, stage.as_str()),
    );
    let cfg = TrainConfig {
        seed: stage_seed(options.train.seed, stage.as_str()),
        ..options.train
    };
    let report = train(&mut model, None, &examples, TrainScope::Backbone, &cfg)
        .map_err(|e| e.in_stage(stage))?;
    Ok((model, report))
}

/// What an offline projector is trained to do.
#[derive(Debug, Clone, Copy)]
pub enum ProjectorObjective<'a> {
    /// Generate the gold description from the meme text.
    Description,
    /// Decode the level's label from `description [SEP] text`.
    Level {
        level: u8,
        descriptions: &'a HashMap<String, String>,
    },
}

/// Gives a stub backbone generic text skills before it is frozen: every head
/// learns to reconstruct the meme text. No labels or annotations are read.
fn pretrain_stub(
    model: &mut Seq2Seq,
    records: &[&DatasetRecord],
    vision: &VisionCache,
    options: &TrainOptions,
    key: &str,
) -> Result<()> {
    if options.pretrain_epochs == 0 {
        return Ok(());
    }
    let mut examples = Vec::new();
    for r in records {
        let v = vision
            .get(&r.id)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no vision state for {}", r.id)))?;
        for head in 0..model.heads.len() {
            examples.push(Example {
                id: r.id.clone(),
                head,
                input: r.text.clone(),
                vision: v.clone(),
                target: Target::Text(r.text.clone()),
            });
        }
    }
    let cfg = TrainConfig {
        epochs: options.pretrain_epochs,
        seed: stage_seed(options.train.seed, &format!("pretrain.{key}")),
        ..options.train
    };
    train(model, None, &examples, TrainScope::Backbone, &cfg)?;
    Ok(())
}

fn objective_examples(
    objective: ProjectorObjective<'_>,
    records: &[&DatasetRecord],
    vision: &VisionCache,
) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for r in records {
        let v = vision
            .get(&r.id)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no vision state for {}", r.id)))?;
        match objective {
            ProjectorObjective::Description => out.push(Example {
                id: r.id.clone(),
                head: 0,
                input: r.text.clone(),
                vision: v,
                target: Target::Text(gold_gdesc(StageTag::DGenH, r)?.to_string()),
            }),
            ProjectorObjective::Level {
                level,
                descriptions,
            } => {
                let stage = if level == 0 {
                    StageTag::HCls0
                } else {
                    StageTag::HCls1
                };
                let label = r.label.ok_or_else(|| missing(stage, "label", r))?;
                let Some(word) = level_target(level, label) else {
                    continue;
                };
                let desc = descriptions
                    .get(&r.id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("no description for {}", r.id)))?;
                out.push(Example {
                    id: r.id.clone(),
                    head: level as usize,
                    input: join_inputs(&desc, &r.text),
                    vision: v,
                    target: Target::Label {
                        word: word.to_string(),
                        allowed: level_words(level).iter().map(|s| s.to_string()).collect(),
                    },
                });
            }
        }
    }
    Ok(out)
}

/// Trains a projector bank with every backbone parameter frozen.
///
/// With `category`, only that member of a category bank is trained, on the
/// training records that target the category. Without, the whole bank is
/// trained on every training record.
pub fn train_projector_offline(
    model: &Seq2Seq,
    bank: &mut ProjectorBank,
    category: Option<&str>,
    dataset: &Dataset,
    vision: &VisionCache,
    objective: ProjectorObjective<'_>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut scratch = model.clone();
    match category {
        Some(name) => {
            let slice = dataset.category_slice(name)?;
            let records: Vec<&DatasetRecord> = slice.split(Split::Train).collect();
            let examples = objective_examples(objective, &records, vision)?;
            if examples.is_empty() {
                return Err(Error::EmptyCategorySlice(name.to_string()));
            }
            let index = bank
                .categories()
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Category(name.to_string()))?;
            let mut member = bank.member(index);
            let report = train(
                &mut scratch,
                Some(&mut member),
                &examples,
                TrainScope::Projector,
                cfg,
            )?;
            bank.set_member(index, &member)?;
            Ok(report)
        }
        None => {
            let records: Vec<&DatasetRecord> = dataset.split(Split::Train).collect();
            let examples = objective_examples(objective, &records, vision)?;
            train(
                &mut scratch,
                Some(bank),
                &examples,
                TrainScope::Projector,
                cfg,
            )
        }
    }
}

/// Trains every module of `variant` on the training split of `dataset`.
pub fn train_system(
    variant: &VariantSpec,
    dataset: &Dataset,
    options: &TrainOptions,
) -> Result<TrainedSystem> {
    let vocab = Arc::new(build_vocab(dataset));
    let encoder = PatchEncoder::new(
        options.model.patch_size,
        options.model.width,
        options.vision_seed,
    );
    let vision = encode_records(dataset, dataset.split(Split::Train), &encoder)?;
    let mut system = TrainedSystem {
        variant: variant.clone(),
        vocab: vocab.clone(),
        options: options.clone(),
        models: BTreeMap::new(),
        banks: BTreeMap::new(),
        summary: TrainSummary::default(),
    };
    match variant.family {
        Family::Qa => train_qa(&mut system, dataset, &vision)?,
        Family::H => train_h(&mut system, dataset, &vision)?,
    }
    Ok(system)
}

fn train_qa(system: &mut TrainedSystem, dataset: &Dataset, vision: &VisionCache) -> Result<()> {
    let variant = system.variant.clone();
    let options = system.options.clone();
    let train_records: Vec<&DatasetRecord> = dataset.split(Split::Train).collect();
    let mut upstream = Upstream::default();

    for &stage in variant.stages.iter().filter(|s| s.is_generative()) {
        if stage == StageTag::ClsFt {
            // the classifier reads exactly what the trained stages produce
            let partial = system.assemble_qa(RuleSet::default(), NoMatchPolicy::Benign, true)?;
            for r in &train_records {
                let meme = dataset.meme(r);
                let run = run_generation(&meme, &partial)?;
                upstream.cls_inputs.insert(
                    r.id.clone(),
                    cls_input_text(&run.transcript, options.cls_input, &r.text),
                );
            }
        }
        log::info!("{}: training {stage}", variant.id);
        let (model, report) = train_qa_stage(
            stage,
            dataset,
            system.vocab.clone(),
            vision,
            &upstream,
            &options,
        )?;
        system
            .summary
            .losses
            .insert(stage.to_string(), report.epoch_losses);
        system.models.insert(stage.to_string(), Arc::new(model));

        fill_upstream(stage, system, &train_records, vision, &mut upstream)?;
    }
    Ok(())
}

/// Records what a freshly trained description or context stage generates
/// for each training record.
fn fill_upstream(
    stage: StageTag,
    system: &TrainedSystem,
    records: &[&DatasetRecord],
    vision: &VisionCache,
    upstream: &mut Upstream,
) -> Result<()> {
    if !matches!(stage, StageTag::DGenQa | StageTag::Cg0 | StageTag::Cg1) {
        return Ok(());
    }
    let g = system.generator(stage.as_str(), 0)?;
    let mut produced = HashMap::new();
    for r in records {
        let input = match stage {
            StageTag::Cg1 => match upstream.descriptions.get(&r.id) {
                Some(d) => join_inputs(d, &r.text),
                None => join_inputs(gold_gdesc(stage, r)?, &r.text),
            },
            _ => r.text.clone(),
        };
        produced.insert(
            r.id.clone(),
            g.generate(&input, &vision[&r.id])
                .map_err(|e| e.in_stage(stage))?,
        );
    }
    if stage == StageTag::DGenQa {
        upstream.descriptions = produced;
    } else {
        upstream.contexts = produced;
    }
    Ok(())
}

fn description_bank(
    variant: &VariantSpec,
    width: usize,
    seed: u64,
) -> Result<Option<ProjectorBank>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok(match variant.projector {
        None => None,
        Some((ProjectorKind::Generalized, _)) => {
            Some(ProjectorBank::residual_generalized("gdesc", width))
        }
        Some((ProjectorKind::CategorySpecific, agg)) => Some(ProjectorBank::residual_category(
            agg,
            Category::ALL.iter().map(|c| c.id().to_string()).collect(),
            width,
            &mut rng,
        )?),
    })
}

fn train_h(system: &mut TrainedSystem, dataset: &Dataset, vision: &VisionCache) -> Result<()> {
    let variant = system.variant.clone();
    let options = system.options.clone();
    let seed = options.train.seed;
    let frozen = variant.backbone_mode == BackboneMode::FrozenPretrained;
    let train_records: Vec<&DatasetRecord> = dataset.split(Split::Train).collect();
    let projector_cfg = TrainConfig {
        epochs: options.projector_epochs,
        learning_rate: options.projector_learning_rate,
        ..options.train
    };

    // description stage
    let mut describer = Seq2Seq::new(
        system.vocab.clone(),
        options.model,
        1,
        stage_seed(seed, "DGen_H"),
    );
    if frozen {
        pretrain_stub(&mut describer, &train_records, vision, &options, "DGen_H")?;
    }
    let before = parameter_hash(&describer);
    if !frozen {
        let examples = objective_examples(ProjectorObjective::Description, &train_records, vision)?;
        let cfg = TrainConfig {
            seed: stage_seed(seed, "DGen_H"),
            ..options.train
        };
        let report = train(&mut describer, None, &examples, TrainScope::Backbone, &cfg)
            .map_err(|e| e.in_stage(StageTag::DGenH))?;
        system
            .summary
            .losses
            .insert("DGen_H".into(), report.epoch_losses);
    }
    let mut bank = description_bank(&variant, options.model.width, stage_seed(seed, "bank"))?;
    if let Some(b) = bank.as_mut() {
        let cfg = TrainConfig {
            seed: stage_seed(seed, "bank"),
            ..projector_cfg
        };
        if b.kind() == ProjectorKind::Generalized {
            let report = train_projector_offline(
                &describer,
                b,
                None,
                dataset,
                vision,
                ProjectorObjective::Description,
                &cfg,
            )?;
            system
                .summary
                .losses
                .insert("description.gdesc".into(), report.epoch_losses);
        } else {
            for c in Category::ALL {
                let report = train_projector_offline(
                    &describer,
                    b,
                    Some(c.id()),
                    dataset,
                    vision,
                    ProjectorObjective::Description,
                    &cfg,
                )?;
                system
                    .summary
                    .losses
                    .insert(format!("description.{c}"), report.epoch_losses);
            }
        }
    }
    system
        .summary
        .backbone_hashes
        .insert("DGen_H".into(), (before, parameter_hash(&describer)));

    let describer = Arc::new(describer);
    let desc_gen = StageGenerator::new(describer.clone(), 0, options.decoding);
    let mut descriptions = HashMap::new();
    for r in &train_records {
        let gdesc = generate_description(
            &r.text,
            &vision[&r.id],
            bank.as_ref(),
            &desc_gen,
            variant.backbone_mode,
            &mut RunTrace::default(),
        )
        .map_err(|e| e.in_stage(StageTag::DGenH))?;
        descriptions.insert(r.id.clone(), gdesc.text);
    }
    system.models.insert(StageTag::DGenH.to_string(), describer);
    if let Some(b) = bank {
        system.banks.insert(DESCRIPTION_BANK.into(), b);
    }

    // two-level classifier sharing encoder and fusion
    let mut classifier = Seq2Seq::new(
        system.vocab.clone(),
        options.model,
        2,
        stage_seed(seed, HCLS_MODEL),
    );
    if frozen {
        pretrain_stub(
            &mut classifier,
            &train_records,
            vision,
            &options,
            HCLS_MODEL,
        )?;
    }
    let before = parameter_hash(&classifier);
    if !frozen {
        let mut examples = Vec::new();
        for level in [0, 1] {
            examples.extend(objective_examples(
                ProjectorObjective::Level {
                    level,
                    descriptions: &descriptions,
                },
                &train_records,
                vision,
            )?);
        }
        let cfg = TrainConfig {
            seed: stage_seed(seed, HCLS_MODEL),
            ..options.train
        };
        let report = train(&mut classifier, None, &examples, TrainScope::Backbone, &cfg)
            .map_err(|e| e.in_stage(StageTag::HCls0))?;
        system
            .summary
            .losses
            .insert(HCLS_MODEL.into(), report.epoch_losses);
    }
    if variant.projector.is_some() {
        for level in [0u8, 1] {
            let mut task =
                ProjectorBank::residual_generalized(task_bank_key(level), options.model.width);
            let cfg = TrainConfig {
                seed: stage_seed(seed, &task_bank_key(level)),
                ..projector_cfg
            };
            let report = train_projector_offline(
                &classifier,
                &mut task,
                None,
                dataset,
                vision,
                ProjectorObjective::Level {
                    level,
                    descriptions: &descriptions,
                },
                &cfg,
            )
            .map_err(|e| {
                e.in_stage(if level == 0 {
                    StageTag::HCls0
                } else {
                    StageTag::HCls1
                })
            })?;
            system
                .summary
                .losses
                .insert(task_bank_key(level), report.epoch_losses);
            system.banks.insert(task_bank_key(level), task);
        }
    }
    system
        .summary
        .backbone_hashes
        .insert(HCLS_MODEL.into(), (before, parameter_hash(&classifier)));
    system
        .models
        .insert(HCLS_MODEL.into(), Arc::new(classifier));
    if frozen && !system.summary.backbones_unchanged() {
        return Err(Error::InvalidInput(format!(
            "{}: frozen backbone changed during training",
            variant.id
        )));
    }
    Ok(())
}
