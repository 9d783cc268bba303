//! Prompt construction for answer generation and confidence elicitation,
//! plus client-side stop-sequence truncation.

use serde::{Deserialize, Serialize};

use crate::corpus::CalibrationRecord;
use crate::error::{Error, Result};

/// Instruction line that switches a QA prompt to step-by-step answering.
pub const COT_INSTRUCTION: &str =
    "Briefly answer the following question by thinking step by step.";

/// Generations are cut at the first occurrence of any of these, so the
/// model cannot continue the dialogue on its own.
pub const DEFAULT_STOP_SEQUENCES: [&str; 4] = ["Question:", "Q:", "Answer:", "A:"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    /// Single free-standing question.
    Trivia,
    /// Question about a supplied passage, laid out line by line.
    Coqa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceMode {
    None,
    Percent,
    Qualitative,
}

/// How to phrase one request to the target model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub style: PromptStyle,
    pub cot: bool,
    pub icl_examples: Vec<(String, String)>,
    pub confidence_mode: ConfidenceMode,
}

impl PromptSpec {
    pub fn new(style: PromptStyle) -> Self {
        Self {
            style,
            cot: false,
            icl_examples: Vec::new(),
            confidence_mode: ConfidenceMode::None,
        }
    }

    /// Confidence elicitation must not carry demonstrations.
    pub fn validate(&self) -> Result<()> {
        if self.confidence_mode != ConfidenceMode::None && !self.icl_examples.is_empty() {
            return Err(Error::Validation(
                "confidence prompts must not include in-context examples".into(),
            ));
        }
        Ok(())
    }
}

/// Sampling controls passed through to the endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub max_new_tokens: usize,
    /// Extra stop sequences on top of [`DEFAULT_STOP_SEQUENCES`].
    pub stop_sequences: Vec<String>,
    pub temperature: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 50,
            stop_sequences: Vec::new(),
            temperature: 0.0,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::Validation(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Validation(
                "temperature must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Builds the answer-generation prompt for a record. Demonstrations use the
/// same question/answer template as the final question; with step-by-step
/// answering the instruction comes first (as its own "Instruction:" line in
/// the passage layout).
pub fn build_qa_prompt(record: &CalibrationRecord, spec: &PromptSpec) -> Result<String> {
    spec.validate()?;
    if record.question.trim().is_empty() {
        return Err(Error::Validation(format!(
            "record {} has an empty question",
            record.id
        )));
    }
    let mut lines: Vec<String> = Vec::new();
    match spec.style {
        PromptStyle::Trivia => {
            if spec.cot {
                lines.push(COT_INSTRUCTION.to_string());
            }
            for (q, a) in &spec.icl_examples {
                lines.push(format!("Question: {q} Answer: {a}"));
            }
            lines.push(format!("Question: {} Answer:", record.question));
        }
        PromptStyle::Coqa => {
            let context = record.context.as_deref().ok_or_else(|| Error::MissingField {
                field: "context",
                record_id: record.id.clone(),
                context: "passage-based prompts need the source passage".into(),
            })?;
            lines.push(format!("Context: {context}"));
            if spec.cot {
                lines.push(format!("Instruction: {COT_INSTRUCTION}"));
            }
            for (q, a) in &spec.icl_examples {
                lines.push(format!("Question: {q}"));
                lines.push(format!("Answer: {a}"));
            }
            lines.push(format!("Question: {}", record.question));
            lines.push("Answer:".to_string());
        }
    }
    Ok(lines.join("\n"))
}

/// Builds the follow-up prompt that asks the model to rate its own answer,
/// either as a percentage or on the seven-word scale.
pub fn build_confidence_prompt(
    question: &str,
    model_answer: &str,
    mode: ConfidenceMode,
) -> Result<String> {
    if question.trim().is_empty() {
        return Err(Error::Validation("confidence prompt needs a question".into()));
    }
    if model_answer.trim().is_empty() {
        return Err(Error::Validation(
            "confidence prompt needs the model answer".into(),
        ));
    }
    match mode {
        ConfidenceMode::None => Err(Error::Validation(
            "confidence prompt needs a percent or qualitative mode".into(),
        )),
        ConfidenceMode::Percent => Ok(format!(
            "{question} {model_answer} Please provide your confidence in the answer only in percent (0-100 %):"
        )),
        ConfidenceMode::Qualitative => Ok(format!(
            "{question} {model_answer} Please provide your confidence in the answer only as one of 'Very Low' / 'Low' / 'Somewhat Low' / 'Medium' / 'Somewhat High' / 'High' / 'Very High':"
        )),
    }
}

/// Cuts `text` at the earliest occurrence of any default or extra stop
/// sequence; the returned prefix never contains a stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, extra: &[String]) -> &'a str {
    let mut cut = text.len();
    let stops = DEFAULT_STOP_SEQUENCES
        .iter()
        .copied()
        .chain(extra.iter().map(String::as_str));
    for stop in stops {
        if stop.is_empty() {
            continue;
        }
        if let Some(i) = text.find(stop) {
            cut = cut.min(i);
        }
    }
    &text[..cut]
}
