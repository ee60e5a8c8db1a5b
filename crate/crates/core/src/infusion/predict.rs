//! Greedy answering and evaluation of a checkpoint on a QA split.

use super::checkpoint::Checkpoint;
use super::prompt::{entity_prefix, PromptKind, PromptRender};
use crate::error::{Error, Result};
use crate::kg::EmbeddingTable;
use crate::lm::{generate, STOP};
use crate::metrics::MetricReport;
use crate::par;
use crate::qa::QaExample;

/// Upper bound on generated answer tokens.
pub const MAX_ANSWER_TOKENS: usize = 48;

/// Answers one question. Checkpoints with a projection need `table`.
pub fn answer(ckpt: &Checkpoint, table: Option<&EmbeddingTable>, example: &QaExample) -> Result<String> {
    let system = &ckpt.provenance.system;
    let (kind, prefix) = match (&ckpt.projection, table) {
        (None, _) => (PromptKind::Plain, None),
        (Some((spec, params)), Some(table)) => {
            (PromptKind::Infused, Some(entity_prefix(&example.reference_entity, table, spec, params)?))
        }
        (Some(_), None) => return Err(Error::Config("an infused checkpoint needs the embedding table".into())),
    };
    let render = PromptRender::new(&ckpt.tokenizer, kind, system, &example.question, None)?;
    let room = ckpt.lm.context_len().saturating_sub(render.tokens.len());
    let mut out = generate(&ckpt.lm, &render.tokens, prefix.as_ref().map(|p| p.view()), MAX_ANSWER_TOKENS.min(room))?;
    if out.last() == Some(&STOP) {
        out.pop();
    }
    Ok(ckpt.tokenizer.decode(&out))
}

/// Predictions in input order.
pub fn predict(ckpt: &Checkpoint, table: Option<&EmbeddingTable>, examples: &[QaExample]) -> Result<Vec<String>> {
    par::map(examples, |e| answer(ckpt, table, e)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<String>,
    pub report: MetricReport,
}

pub fn evaluate(ckpt: &Checkpoint, table: Option<&EmbeddingTable>, examples: &[QaExample]) -> Result<Evaluation> {
    let predictions = predict(ckpt, table, examples)?;
    let references: Vec<String> = examples.iter().map(|e| e.answer.clone()).collect();
    let report = MetricReport::compute(&predictions, &references)?;
    Ok(Evaluation { predictions, report })
}
