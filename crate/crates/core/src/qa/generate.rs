//! Template-driven QA generation over a knowledge graph, deterministic
//! train/test splitting, and the JSONL dataset format.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::templates::{Mode, QaTemplate, Slot};
use crate::error::{contract, Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};

pub const TRUE: &str = "True";
pub const FALSE: &str = "False";
pub const ANSWER_SEPARATOR: &str = ", ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One QA record. Field order is the JSONL column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub reference_entity: String,
    pub question: String,
    pub answer: String,
    pub relation: String,
    pub template_id: String,
    pub mode: Mode,
    pub polarity: Polarity,
    pub split: Split,
}

impl QaExample {
    pub fn is_boolean(&self) -> bool {
        self.answer == TRUE || self.answer == FALSE
    }
}

/// How examples are grouped so that a group never straddles the split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Identical question strings share a split.
    #[default]
    Question,
    /// Every question about the same (reference entity, relation) shares a
    /// split, so paraphrases of a held-out fact never leak into training.
    Fact,
    /// Every question about the same reference entity shares a split, so
    /// held-out entities have no facts in the training text.
    Entity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    pub max_answers: usize,
    /// Probability that a positive verification/counting example gets a
    /// negative companion.
    pub negative_rate: f64,
    pub seed: u64,
    pub test_fraction: f64,
    pub grouping: Grouping,
    /// Templates sampled per (entity, relation, mode); `None` uses all.
    pub templates_per_fact: Option<usize>,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            max_answers: 20,
            negative_rate: 1.0,
            seed: 0,
            test_fraction: 0.1,
            grouping: Grouping::Question,
            templates_per_fact: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub test: usize,
    /// Mean whitespace word count of the answers.
    pub awc: f64,
}

impl DatasetStats {
    pub fn compute(kg: &KnowledgeGraph, examples: &[QaExample]) -> Self {
        let words: usize = examples.iter().map(|e| e.answer.split_whitespace().count()).sum();
        Self {
            entities: kg.num_entities(),
            relations: kg.num_relations(),
            train: examples.iter().filter(|e| e.split == Split::Train).count(),
            test: examples.iter().filter(|e| e.split == Split::Test).count(),
            awc: if examples.is_empty() { 0.0 } else { words as f64 / examples.len() as f64 },
        }
    }
}

/// Lexicographically ordered labels joined by `", "`.
pub fn canonical_answer<'a>(labels: impl IntoIterator<Item = &'a str>) -> String {
    let mut v: Vec<&str> = labels.into_iter().collect();
    v.sort_unstable();
    v.join(ANSWER_SEPARATOR)
}

fn answers(kg: &KnowledgeGraph, template: &QaTemplate, reference: EntityId) -> Result<Vec<EntityId>> {
    let r = kg
        .relation(&template.relation)
        .ok_or_else(|| Error::Config(format!("template `{}` uses unknown relation `{}`", template.id, template.relation)))?;
    Ok(match template.slot() {
        Slot::Tail => kg.heads(r, reference)?.to_vec(),
        Slot::Head => kg.tails(reference, r)?.to_vec(),
    })
}

/// Emits examples for every (reference entity, template family) with a
/// non-empty answer set of at most `max_answers` entities, then splits.
pub fn generate_qa(
    kg: &KnowledgeGraph,
    templates: &[QaTemplate],
    config: &QaConfig,
) -> Result<(Vec<QaExample>, DatasetStats)> {
    for t in templates {
        t.validate()?;
        if kg.relation(&t.relation).is_none() {
            return Err(Error::Config(format!("template `{}` uses unknown relation `{}`", t.id, t.relation)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Families keyed by (relation, mode) in first-appearance order.
    let mut families: Vec<((String, Mode), Vec<&QaTemplate>)> = Vec::new();
    for t in templates {
        let key = (t.relation.clone(), t.mode);
        match families.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(t),
            None => families.push((key, vec![t])),
        }
    }
    let mut out = Vec::new();
    for ((relation, mode), family) in &families {
        for e in 0..kg.num_entities() {
            let reference = EntityId(e);
            let found = answers(kg, family[0], reference)?;
            if found.is_empty() || found.len() > config.max_answers {
                continue;
            }
            let chosen: Vec<&QaTemplate> = match config.templates_per_fact {
                Some(k) if k < family.len() => family.choose_multiple(&mut rng, k).copied().collect(),
                _ => family.clone(),
            };
            let y = kg.entity_label(reference);
            let example = |t: &QaTemplate, question: String, answer: String, polarity| QaExample {
                reference_entity: y.to_owned(),
                question,
                answer,
                relation: relation.clone(),
                template_id: t.id.clone(),
                mode: *mode,
                polarity,
                split: Split::Train,
            };
            for t in chosen {
                match mode {
                    Mode::Open => {
                        let ans = canonical_answer(found.iter().map(|&a| kg.entity_label(a)));
                        out.push(example(t, t.render(None, y, None), ans, Polarity::Positive));
                    }
                    Mode::Verification => {
                        let truth: HashSet<EntityId> = found.iter().copied().collect();
                        let pool: Vec<EntityId> = (0..kg.num_entities())
                            .map(EntityId)
                            .filter(|c| *c != reference && !truth.contains(c))
                            .collect();
                        for &x in &found {
                            out.push(example(t, t.render(Some(kg.entity_label(x)), y, None), TRUE.into(), Polarity::Positive));
                            if !pool.is_empty() && rng.random_bool(config.negative_rate.clamp(0.0, 1.0)) {
                                let wrong = *pool.choose(&mut rng).expect("non-empty pool");
                                out.push(example(
                                    t,
                                    t.render(Some(kg.entity_label(wrong)), y, None),
                                    FALSE.into(),
                                    Polarity::Negative,
                                ));
                            }
                        }
                    }
                    Mode::Counting => {
                        let n = found.len();
                        if !t.pattern.contains("{Z}") {
                            out.push(example(t, t.render(None, y, None), n.to_string(), Polarity::Positive));
                            continue;
                        }
                        out.push(example(t, t.render(None, y, Some(n)), TRUE.into(), Polarity::Positive));
                        if rng.random_bool(config.negative_rate.clamp(0.0, 1.0)) {
                            let z = if n == 1 || rng.random_bool(0.5) { n + 1 } else { n - 1 };
                            out.push(example(t, t.render(None, y, Some(z)), FALSE.into(), Polarity::Negative));
                        }
                    }
                }
            }
        }
    }
    if out.len() > 1 {
        split_dataset(&mut out, config.test_fraction, config.seed, config.grouping)?;
    }
    let stats = DatasetStats::compute(kg, &out);
    Ok((out, stats))
}

fn group_key(e: &QaExample, grouping: Grouping) -> String {
    match grouping {
        Grouping::Question => e.question.clone(),
        Grouping::Fact => format!("{}\u{1f}{}", e.reference_entity, e.relation),
        Grouping::Entity => e.reference_entity.clone(),
    }
}

/// Assigns `split` in place: `round(test_fraction · groups)` groups (at
/// least one, at most all but one) go to test, chosen by a seeded shuffle.
pub fn split_dataset(examples: &mut [QaExample], test_fraction: f64, seed: u64, grouping: Grouping) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return contract("test_fraction must lie strictly between 0 and 1");
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        groups.entry(group_key(e, grouping)).or_default().push(i);
    }
    if groups.len() < 2 {
        return contract("need at least 2 groups to split");
    }
    let mut keys: Vec<&String> = groups.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5b11_7000);
    keys.shuffle(&mut rng);
    let n_test = ((test_fraction * keys.len() as f64).round() as usize).clamp(1, keys.len() - 1);
    let test: HashSet<&String> = keys[..n_test].iter().copied().collect();
    for (key, members) in &groups {
        let split = if test.contains(key) { Split::Test } else { Split::Train };
        for &i in members {
            examples[i].split = split;
        }
    }
    Ok(())
}

pub fn write_jsonl(examples: &[QaExample], mut sink: impl Write) -> Result<()> {
    for e in examples {
        serde_json::to_writer(&mut sink, e)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(source: impl BufRead) -> Result<Vec<QaExample>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn save_jsonl(examples: &[QaExample], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_jsonl(examples, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<QaExample>> {
    read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
}
