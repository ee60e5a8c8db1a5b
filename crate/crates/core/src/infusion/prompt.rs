//! Prompt serialization and tokenization with the entity slot.

use std::ops::Range;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::kg::EmbeddingTable;
use crate::lm::{Example, LmParams, TokenId, Tokenizer, ENT};
use crate::projection::{project, ProjectionParams, ProjectionSpec};
use crate::qa::QaExample;

pub const HUMAN: &str = "Human:";
pub const ASSISTANT: &str = "Assistant:";
pub const STOP_TEXT: &str = "<STOP>";
pub const ENT_TEXT: &str = "<ENT>";
pub const DEFAULT_SYSTEM: &str = "Answer the question.";

/// Which prompt layout to render.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    /// Entity slot only; the response is the entity label.
    Alignment,
    /// Entity slot followed by the question.
    Infused,
    /// Question only.
    Plain,
    /// The infused layout with the learned `<ENT>` token embedding left in
    /// the slot, so no entity information enters.
    Placeholder,
}

/// Serialized prompt. With `response = None` the text ends right after
/// `Assistant:`, which is where generation starts.
pub fn render_text(kind: PromptKind, system: &str, question: &str, response: Option<&str>) -> String {
    let human = match kind {
        PromptKind::Alignment => format!("{HUMAN} {ENT_TEXT}"),
        PromptKind::Infused | PromptKind::Placeholder => format!("{HUMAN}{ENT_TEXT} {question}"),
        PromptKind::Plain => format!("{HUMAN} {question}"),
    };
    let mut text = format!("{system} {STOP_TEXT}\n{human} {STOP_TEXT}\n{ASSISTANT}");
    if let Some(r) = response {
        text.push(' ');
        text.push_str(r);
        text.push(' ');
        text.push_str(STOP_TEXT);
    }
    text
}

/// Token ids of a rendered prompt with its entity slot and response span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRender {
    pub tokens: Vec<TokenId>,
    pub ent_slot: Option<usize>,
    /// Response tokens including the terminal `<STOP>`; empty for a
    /// generation prompt.
    pub response: Range<usize>,
}

impl PromptRender {
    pub fn new(tokenizer: &Tokenizer, kind: PromptKind, system: &str, question: &str, response: Option<&str>) -> Result<Self> {
        let prompt = tokenizer.encode(&render_text(kind, system, question, None));
        let tokens = match response {
            Some(_) => tokenizer.encode(&render_text(kind, system, question, response)),
            None => prompt.clone(),
        };
        let slots: Vec<usize> = tokens.iter().enumerate().filter(|(_, &t)| t == ENT).map(|(i, _)| i).collect();
        let ent_slot = match (kind, slots.as_slice()) {
            (PromptKind::Plain, []) => None,
            (PromptKind::Alignment | PromptKind::Infused | PromptKind::Placeholder, [s]) => Some(*s),
            _ => return contract(format!("prompt has {} entity slots", slots.len())),
        };
        if response.is_some() && tokens.len() <= prompt.len() {
            return contract("empty response span");
        }
        Ok(Self { response: prompt.len()..tokens.len(), tokens, ent_slot })
    }

    pub fn loss_mask(&self) -> Vec<bool> {
        (0..self.tokens.len()).map(|i| self.response.contains(&i)).collect()
    }
}

/// Every text the tokenizer must cover: prompt scaffolding, questions,
/// answers and entity labels.
pub fn tokenizer_corpus<'a>(
    system: &'a str,
    examples: &'a [QaExample],
    labels: &'a [String],
) -> impl Iterator<Item = &'a str> + 'a {
    [system, HUMAN, ASSISTANT]
        .into_iter()
        .chain(examples.iter().flat_map(|e| [e.question.as_str(), e.answer.as_str()]))
        .chain(labels.iter().map(String::as_str))
}

/// Projected entity vector for `label`.
pub fn entity_prefix(
    label: &str,
    table: &EmbeddingTable,
    spec: &ProjectionSpec,
    params: &ProjectionParams,
) -> Result<Array1<f64>> {
    project(spec, params, table.lookup(label)?)
}

/// The input embedding sequence `H` for a training example and its loss
/// mask. With a projection, the `<ENT>` row is the projected entity vector;
/// without one the plain prompt is used.
pub fn assemble_input(
    example: &QaExample,
    tokenizer: &Tokenizer,
    system: &str,
    lm: &LmParams,
    infusion: Option<(&EmbeddingTable, &ProjectionSpec, &ProjectionParams)>,
) -> Result<(Array2<f64>, Vec<bool>)> {
    let ex = training_example(
        tokenizer,
        if infusion.is_some() { PromptKind::Infused } else { PromptKind::Plain },
        system,
        &example.question,
        &example.reference_entity,
        &example.answer,
        lm,
        infusion,
    )?;
    let mut h = Array2::zeros((ex.tokens.len(), lm.model_dim()));
    for (i, &t) in ex.tokens.iter().enumerate() {
        match &ex.prefix {
            Some(p) if t == ENT => h.row_mut(i).assign(p),
            _ => h.row_mut(i).assign(&lm.token_embedding.row(t as usize)),
        }
    }
    Ok((h, ex.loss_mask))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn training_example(
    tokenizer: &Tokenizer,
    kind: PromptKind,
    system: &str,
    question: &str,
    entity: &str,
    response: &str,
    lm: &LmParams,
    infusion: Option<(&EmbeddingTable, &ProjectionSpec, &ProjectionParams)>,
) -> Result<Example> {
    let render = PromptRender::new(tokenizer, kind, system, question, Some(response))?;
    if render.tokens.len() > lm.context_len() {
        return contract(format!("prompt of {} tokens exceeds context {}", render.tokens.len(), lm.context_len()));
    }
    let prefix = match (kind, infusion) {
        (PromptKind::Plain | PromptKind::Placeholder, _) => None,
        (_, Some((table, spec, params))) => {
            let p = entity_prefix(entity, table, spec, params)?;
            if p.len() != lm.model_dim() {
                return contract(format!("projection emits {} dims, model expects {}", p.len(), lm.model_dim()));
            }
            Some(p)
        }
        (_, None) => return contract("an entity-slot prompt needs a projection"),
    };
    Ok(Example { loss_mask: render.loss_mask(), tokens: render.tokens, prefix })
}
