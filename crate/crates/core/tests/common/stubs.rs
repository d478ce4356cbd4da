//! Scripted stand-ins for the trained parts of a pipeline.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use image::RgbImage;
use safememe::backbone::VisionEncoder;
use safememe::fusion::{FusedState, HiddenSequence, Source};
use safememe::meme::{ImageSource, Meme};
use safememe::model::SeqGenerator;
use safememe::pipeline::h::HSystem;
use safememe::pipeline::qa::{format_qa_pairs, format_questions, QaSettings, QaSystem};
use safememe::projector::{ProjectorBank, ProjectorKind};
use safememe::taxonomy::Category;
use safememe::variants::{StageTag, VariantSpec};

pub const WIDTH: usize = 4;

#[derive(Default)]
pub struct CountingVision {
    pub calls: AtomicUsize,
}

impl VisionEncoder for CountingVision {
    fn width(&self) -> usize {
        WIDTH
    }

    fn patch_size(&self) -> u32 {
        16
    }

    fn encode(&self, _image: &RgbImage) -> safememe::Result<HiddenSequence> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        HiddenSequence::new(ndarray::Array2::from_elem((4, WIDTH), 0.5), Source::Vision)
    }
}

/// Free generation depends only on the stage and the requested question
/// count; constrained decoding picks `choice` modulo the allowed words.
pub struct Scripted {
    stage: StageTag,
    questions: usize,
    choice: usize,
    pub decodes: AtomicUsize,
}

impl Scripted {
    pub fn new(stage: StageTag, questions: usize, choice: usize) -> Arc<Self> {
        Arc::new(Self {
            stage,
            questions,
            choice,
            decodes: AtomicUsize::new(0),
        })
    }

    fn free_text(&self, input: &str) -> String {
        let qs: Vec<String> = (0..self.questions)
            .map(|i| format!("question {i}?"))
            .collect();
        match self.stage {
            StageTag::Qg0 | StageTag::Qg1 => format_questions(&qs),
            StageTag::Qag1 => {
                let pairs: Vec<(String, String)> = qs
                    .iter()
                    .map(|q| (q.clone(), "the meme is implicit hate".to_string()))
                    .collect();
                format_qa_pairs(&pairs)
            }
            StageTag::Rg0 | StageTag::Rg1 => {
                format!("answer to {input}: the meme is explicit hate")
            }
            other => format!("{} output", other.as_str()),
        }
    }
}

impl SeqGenerator for Scripted {
    fn fuse(&self, _text: &str, _vision: &HiddenSequence) -> safememe::Result<FusedState> {
        FusedState::new(
            ndarray::Array2::ones((2, WIDTH)),
            ndarray::Array2::from_elem((2, WIDTH), 0.5),
        )
    }

    fn decode(&self, _memory: &FusedState, allowed: Option<&[&str]>) -> safememe::Result<String> {
        self.decodes.fetch_add(1, Ordering::SeqCst);
        Ok(match allowed {
            Some(words) => words[self.choice % words.len()].to_string(),
            None => self.free_text(""),
        })
    }

    fn generate(&self, text: &str, _vision: &HiddenSequence) -> safememe::Result<String> {
        self.decodes.fetch_add(1, Ordering::SeqCst);
        Ok(self.free_text(text))
    }
}

pub fn meme(i: usize) -> Meme {
    Meme::new(
        format!("m{i}"),
        ImageSource::Memory(Arc::new(RgbImage::new(32, 32))),
        format!("caption number {i}"),
    )
}

pub fn qa_system(spec: &VariantSpec, questions: usize, vision: Arc<CountingVision>) -> QaSystem {
    let mut generators: BTreeMap<StageTag, safememe::pipeline::qa::SharedGenerator> =
        BTreeMap::new();
    for &s in &spec.stages {
        if s != StageTag::ClsRegex {
            generators.insert(s, Scripted::new(s, questions, 1));
        }
    }
    QaSystem {
        variant: spec.clone(),
        vision,
        generators,
        settings: QaSettings::default(),
    }
}

pub struct HStubs {
    pub system: HSystem,
    pub vision: Arc<CountingVision>,
    pub level0: Arc<Scripted>,
    pub level1: Arc<Scripted>,
}

pub fn bank_for(spec: &VariantSpec) -> Option<ProjectorBank> {
    let mut r = super::rng(2);
    let categories = Category::ALL.iter().map(|c| c.id().to_string()).collect();
    match spec.projector? {
        (ProjectorKind::Generalized, _) => {
            Some(ProjectorBank::residual_generalized("description", WIDTH))
        }
        (ProjectorKind::CategorySpecific, agg) => {
            Some(ProjectorBank::random_category(agg, categories, WIDTH, &mut r).unwrap())
        }
    }
}

pub fn h_system(spec: &VariantSpec, level0_choice: usize, level1_choice: usize) -> HStubs {
    let vision = Arc::new(CountingVision::default());
    let level0 = Scripted::new(StageTag::HCls0, 0, level0_choice);
    let level1 = Scripted::new(StageTag::HCls1, 0, level1_choice);
    let task = |key: &str| {
        spec.projector
            .map(|_| ProjectorBank::residual_generalized(key, WIDTH))
    };
    HStubs {
        system: HSystem {
            variant: spec.clone(),
            vision: vision.clone(),
            describer: Scripted::new(StageTag::DGenH, 0, 0),
            description_bank: bank_for(spec),
            classifiers: [level0.clone(), level1.clone()],
            task_banks: [task("task0"), task("task1")],
        },
        vision,
        level0,
        level1,
    }
}
