//! The question-answer pipeline: optional description and context stages,
//! question generation with per-question answering (or joint Q&A
//! generation), then a regex or fine-tuned terminal classifier.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    encode_vision, join_inputs, missing_stage, render_transcript, stage_result, MemeClassifier,
    Prediction, RunTrace, TraceEvent,
};
use crate::backbone::tokenizer::QUESTION_SEP;
use crate::backbone::VisionEncoder;
use crate::error::{Error, Result};
use crate::fusion::HiddenSequence;
use crate::label::{classify_ft, extract_label, resolve, NoMatchPolicy, RuleSet};
use crate::meme::{HateLabel, Meme};
use crate::model::SeqGenerator;
use crate::variants::{Family, StageTag, VariantSpec};

pub const DEFAULT_MAX_QUESTIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    questions: Vec<String>,
}

impl QuerySet {
    pub fn new(questions: Vec<String>) -> Result<Self> {
        if questions.is_empty() {
            return Err(Error::EmptyGeneration);
        }
        if questions.iter().any(|q| q.trim().is_empty()) {
            return Err(Error::InvalidInput("questions must be non-empty".into()));
        }
        Ok(Self { questions })
    }

    pub fn questions(&self) -> &[String] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Regex,
    FinetunedClassifier,
}

/// What the fine-tuned classifier reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClsInput {
    /// Every generation of the run, joined.
    #[default]
    Transcript,
    /// Only the last generation (final answer, or the context).
    FinalAnswer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaResult {
    /// Empty for variants without a question stage.
    pub questions: Vec<String>,
    pub answers: Vec<String>,
    pub label: HateLabel,
    pub label_source: LabelSource,
    pub transcript: Vec<(StageTag, String)>,
    pub trace: RunTrace,
}

impl QaResult {
    pub fn transcript_text(&self) -> String {
        render_transcript(&self.transcript)
    }
}

/// Splits one decoded sequence into questions on `<sep>`, dropping `Q:`
/// prefixes. At most `max` questions are kept.
pub fn parse_questions(text: &str, max: usize) -> Result<QuerySet> {
    let mut questions: Vec<String> = text
        .split(QUESTION_SEP)
        .map(|c| c.trim())
        .map(|c| c.strip_prefix("Q:").unwrap_or(c).trim())
        .filter(|c| !c.is_empty())
        .map(str::to_string)
        .collect();
    if questions.len() > max {
        log::warn!(
            "{} questions generated, keeping the first {max}",
            questions.len()
        );
        questions.truncate(max);
    }
    QuerySet::new(questions)
}

/// Splits joint `Q: .. A: .. <sep> Q: .. A: ..` output into pairs. A chunk
/// without `A:` yields an empty answer.
pub fn parse_qa_pairs(text: &str, max: usize) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = text
        .split(QUESTION_SEP)
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .filter_map(|chunk| {
            let body = chunk.strip_prefix("Q:").unwrap_or(chunk);
            let (q, a) = match body.find("A:") {
                Some(i) => (&body[..i], &body[i + 2..]),
                None => (body, ""),
            };
            let q = q.trim();
            (!q.is_empty()).then(|| (q.to_string(), a.trim().to_string()))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyGeneration);
    }
    if pairs.len() > max {
        log::warn!(
            "{} question-answer pairs generated, keeping the first {max}",
            pairs.len()
        );
        pairs.truncate(max);
    }
    Ok(pairs)
}

pub fn format_questions<S: AsRef<str>>(questions: &[S]) -> String {
    questions
        .iter()
        .map(|q| format!("Q: {}", q.as_ref()))
        .collect::<Vec<_>>()
        .join(&format!(" {QUESTION_SEP} "))
}

pub fn format_qa_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> String {
    pairs
        .iter()
        .map(|(q, a)| format!("Q: {} A: {}", q.as_ref(), a.as_ref()))
        .collect::<Vec<_>>()
        .join(&format!(" {QUESTION_SEP} "))
}

/// The text the fine-tuned classifier reads; falls back to the meme text
/// when nothing was generated.
pub fn cls_input_text(transcript: &[(StageTag, String)], mode: ClsInput, text: &str) -> String {
    let input = match mode {
        ClsInput::Transcript => transcript
            .iter()
            .map(|(_, t)| t.as_str())
            .collect::<Vec<_>>()
            .join(super::INPUT_SEP),
        ClsInput::FinalAnswer => transcript
            .last()
            .map(|(_, t)| t.clone())
            .unwrap_or_default(),
    };
    if input.trim().is_empty() {
        text.to_string()
    } else {
        input
    }
}

pub fn generate_questions(
    input: &str,
    vision: &HiddenSequence,
    generator: &dyn SeqGenerator,
    max_questions: usize,
) -> Result<QuerySet> {
    let text = generator.generate(input, vision)?;
    parse_questions(&text, max_questions)
}

/// Answers one question against the meme's shared vision state.
pub fn generate_answer(
    question: &str,
    shared_vision: &HiddenSequence,
    generator: &dyn SeqGenerator,
) -> Result<String> {
    generator.generate(question, shared_vision)
}

#[derive(Debug, Clone)]
pub struct QaSettings {
    pub max_questions: usize,
    pub rules: RuleSet,
    pub no_match: NoMatchPolicy,
    pub cls_input: ClsInput,
}

impl Default for QaSettings {
    fn default() -> Self {
        Self {
            max_questions: DEFAULT_MAX_QUESTIONS,
            rules: RuleSet::default(),
            no_match: NoMatchPolicy::default(),
            cls_input: ClsInput::default(),
        }
    }
}

pub type SharedGenerator = Arc<dyn SeqGenerator + Send + Sync>;

/// The stage generators of one question-answer variant.
pub struct QaSystem {
    pub variant: VariantSpec,
    pub vision: Arc<dyn VisionEncoder + Send + Sync>,
    pub generators: BTreeMap<StageTag, SharedGenerator>,
    pub settings: QaSettings,
}

impl QaSystem {
    fn generator(&self, stage: StageTag) -> Result<&dyn SeqGenerator> {
        self.generators
            .get(&stage)
            .map(|g| g.as_ref() as &dyn SeqGenerator)
            .ok_or_else(|| missing_stage(stage))
    }

    fn run_stage(
        &self,
        stage: StageTag,
        input: &str,
        vision: &HiddenSequence,
        trace: &mut RunTrace,
    ) -> Result<String> {
        trace.push(TraceEvent::Stage(stage));
        let g = stage_result(stage, self.generator(stage))?;
        stage_result(stage, g.generate(input, vision))
    }
}

/// Everything the generative stages of one run produced.
#[derive(Debug, Clone)]
pub struct Reasoning {
    pub vision: Arc<HiddenSequence>,
    pub questions: Vec<String>,
    pub answers: Vec<String>,
    /// The Q&A text the regex classifier scans, if a Q&A stage ran.
    pub qa_text: Option<String>,
    pub transcript: Vec<(StageTag, String)>,
    pub trace: RunTrace,
}

/// Runs every generative stage of the variant up to, not including, the
/// terminal classifier.
pub fn run_generation(meme: &Meme, system: &QaSystem) -> Result<Reasoning> {
    let variant = &system.variant;
    variant.expect_family(Family::Qa)?;
    let mut trace = RunTrace::default();
    let vision = encode_vision(meme, system.vision.as_ref(), &mut trace)?;
    let mut transcript: Vec<(StageTag, String)> = Vec::new();

    let desc = if variant.has(StageTag::DGenQa) {
        let d = system.run_stage(StageTag::DGenQa, &meme.text, &vision, &mut trace)?;
        transcript.push((StageTag::DGenQa, d.clone()));
        Some(d)
    } else {
        None
    };
    let with_desc = |text: &str| match &desc {
        Some(d) => join_inputs(d, text),
        None => text.to_string(),
    };

    let mut context = None;
    for stage in [StageTag::Cg0, StageTag::Cg1] {
        if variant.has(stage) {
            let input = if stage == StageTag::Cg1 {
                with_desc(&meme.text)
            } else {
                meme.text.clone()
            };
            let c = system.run_stage(stage, &input, &vision, &mut trace)?;
            transcript.push((stage, c.clone()));
            context = Some(c);
        }
    }

    let mut questions = Vec::new();
    let mut answers = Vec::new();
    let mut reasoning = None;
    let max = system.settings.max_questions;

    if variant.has(StageTag::Qag1) {
        let prefix = context.as_ref().or(desc.as_ref());
        let input = match prefix {
            Some(p) => join_inputs(p, &meme.text),
            None => meme.text.clone(),
        };
        let out = system.run_stage(StageTag::Qag1, &input, &vision, &mut trace)?;
        let pairs = stage_result(StageTag::Qag1, parse_qa_pairs(&out, max))?;
        transcript.push((StageTag::Qag1, out.clone()));
        for (q, a) in pairs {
            questions.push(q);
            answers.push(a);
        }
        reasoning = Some(out);
    } else if let Some(qg) = [StageTag::Qg0, StageTag::Qg1]
        .into_iter()
        .find(|s| variant.has(*s))
    {
        let input = if qg == StageTag::Qg1 {
            with_desc(&meme.text)
        } else {
            meme.text.clone()
        };
        let out = system.run_stage(qg, &input, &vision, &mut trace)?;
        let set = stage_result(qg, parse_questions(&out, max))?;
        transcript.push((qg, out));
        let rg = if variant.has(StageTag::Rg1) {
            StageTag::Rg1
        } else {
            StageTag::Rg0
        };
        for q in set.questions() {
            let input = if rg == StageTag::Rg1 {
                with_desc(q)
            } else {
                q.clone()
            };
            let a = system.run_stage(rg, &input, &vision, &mut trace)?;
            transcript.push((rg, a.clone()));
            answers.push(a);
        }
        questions = set.questions().to_vec();
        let pairs: Vec<(&str, &str)> = questions
            .iter()
            .map(String::as_str)
            .zip(answers.iter().map(String::as_str))
            .collect();
        reasoning = Some(format_qa_pairs(&pairs));
    }

    Ok(Reasoning {
        vision,
        questions,
        answers,
        qa_text: reasoning,
        transcript,
        trace,
    })
}

/// Runs the stage graph declared by the system's variant.
pub fn run_qa_pipeline(meme: &Meme, system: &QaSystem) -> Result<QaResult> {
    let Reasoning {
        vision,
        questions,
        answers,
        qa_text,
        transcript,
        mut trace,
    } = run_generation(meme, system)?;
    let (label, label_source) = if system.variant.has(StageTag::ClsFt) {
        let input = cls_input_text(&transcript, system.settings.cls_input, &meme.text);
        trace.push(TraceEvent::Stage(StageTag::ClsFt));
        let g = stage_result(StageTag::ClsFt, system.generator(StageTag::ClsFt))?;
        let label = stage_result(StageTag::ClsFt, classify_ft(&input, &vision, g))?;
        (label, LabelSource::FinetunedClassifier)
    } else {
        trace.push(TraceEvent::Stage(StageTag::ClsRegex));
        let text = qa_text.unwrap_or_default();
        let label = stage_result(
            StageTag::ClsRegex,
            resolve(
                extract_label(&text, &system.settings.rules),
                system.settings.no_match,
                &meme.id,
            ),
        )?;
        (label, LabelSource::Regex)
    };

    Ok(QaResult {
        questions,
        answers,
        label,
        label_source,
        transcript,
        trace,
    })
}

impl MemeClassifier for QaSystem {
    fn variant(&self) -> &VariantSpec {
        &self.variant
    }

    fn classify(&self, meme: &Meme) -> Result<Prediction> {
        let r = run_qa_pipeline(meme, self)?;
        Ok(Prediction {
            label: r.label,
            transcript: r.transcript_text(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delimiter_grammar() {
        let q = parse_questions("Q: who is targeted? <sep> Q: is there hate?", 8).unwrap();
        assert_eq!(q.questions(), ["who is targeted?", "is there hate?"]);
        assert!(matches!(
            parse_questions("", 8),
            Err(Error::EmptyGeneration)
        ));
        assert!(matches!(
            parse_questions(" <sep> Q: ", 8),
            Err(Error::EmptyGeneration)
        ));
        assert_eq!(
            parse_questions("Q: a <sep> Q: b <sep> Q: c", 2)
                .unwrap()
                .len(),
            2
        );
    }

    #[test]
    fn qa_pair_grammar() {
        let pairs = parse_qa_pairs(
            "Q: who? A: women. <sep> Q: hate? A: the meme is implicit hate.",
            8,
        )
        .unwrap();
        assert_eq!(
            pairs[1],
            (
                "hate?".to_string(),
                "the meme is implicit hate.".to_string()
            )
        );
        assert_eq!(parse_qa_pairs("Q: dangling", 8).unwrap()[0].1, "");
        assert!(matches!(
            parse_qa_pairs("  ", 8),
            Err(Error::EmptyGeneration)
        ));
    }

    #[test]
    fn formatting_round_trips() {
        let qs = ["what is shown?", "why?"];
        assert_eq!(
            parse_questions(&format_questions(&qs), 8)
                .unwrap()
                .questions(),
            qs
        );
        let pairs = [("q one?", "a one."), ("q two?", "a two.")];
        let parsed = parse_qa_pairs(&format_qa_pairs(&pairs), 8).unwrap();
        assert_eq!(parsed[0], ("q one?".to_string(), "a one.".to_string()));
    }
}
