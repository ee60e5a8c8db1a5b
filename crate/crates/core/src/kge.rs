//! TransE training and filtered link-prediction evaluation.
//!
//! A triple `(h, r, t)` is scored by the translation residual
//! `‖x_h + r − x_t‖₂`; lower is more plausible. Training minimizes the
//! margin ranking loss `max(0, γ + d(pos) − d(neg))` with plain SGD over
//! uniformly corrupted negatives.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::kg::{EmbeddingTable, EntityId, KnowledgeGraph, RelationId, Triple};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranseConfig {
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub norm_entities: bool,
}

impl Default for TranseConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 500,
            negatives_per_positive: 1,
            seed: 0,
            norm_entities: true,
        }
    }
}

impl TranseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be strictly positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be strictly positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_10: f64,
    pub evaluated_triples: usize,
}

fn residual_norm(h: ArrayView1<f64>, r: ArrayView1<f64>, t: ArrayView1<f64>) -> f64 {
    let mut acc = 0.0;
    Zip::from(&h).and(&r).and(&t).for_each(|&h, &r, &t| {
        let d = h + r - t;
        acc += d * d;
    });
    acc.sqrt()
}

/// `‖x_h + r − x_t‖₂` for ids resolved in `table`.
pub fn score(head: EntityId, relation: RelationId, tail: EntityId, table: &EmbeddingTable) -> Result<f64> {
    if table.entity_dim() != table.relation_dim() {
        return contract("translation scoring needs d_e = d_r");
    }
    let n_e = table.num_entities();
    if head.0 >= n_e || tail.0 >= n_e || relation.0 >= table.relation_vectors.nrows() {
        return Err(Error::Lookup("id outside embedding table".into()));
    }
    Ok(residual_norm(
        table.entity_vectors.row(head.0),
        table.relation_vectors.row(relation.0),
        table.entity_vectors.row(tail.0),
    ))
}

/// Margin loss of one (positive, negative) pair.
pub fn margin_loss(table: &EmbeddingTable, margin: f64, pos: &Triple, neg: &Triple) -> f64 {
    let d = |t: &Triple| score(t.head, t.relation, t.tail, table).expect("valid triple");
    (margin + d(pos) - d(neg)).max(0.0)
}

/// Sparse gradient of [`margin_loss`]: `(entity rows, relation rows)` keyed
/// by index, contributions already summed per row.
#[derive(Debug, Default)]
pub struct MarginGradient {
    pub entities: Vec<(usize, Array1<f64>)>,
    pub relations: Vec<(usize, Array1<f64>)>,
}

impl MarginGradient {
    fn add_entity(&mut self, i: usize, g: &Array1<f64>, scale: f64) {
        match self.entities.iter_mut().find(|(j, _)| *j == i) {
            Some((_, acc)) => acc.scaled_add(scale, g),
            None => self.entities.push((i, g * scale)),
        }
    }

    fn add_relation(&mut self, i: usize, g: &Array1<f64>, scale: f64) {
        match self.relations.iter_mut().find(|(j, _)| *j == i) {
            Some((_, acc)) => acc.scaled_add(scale, g),
            None => self.relations.push((i, g * scale)),
        }
    }
}

/// Analytic gradient of [`margin_loss`] with respect to every row it touches.
/// At a zero residual the norm's subgradient 0 is used.
pub fn margin_loss_gradient(table: &EmbeddingTable, margin: f64, pos: &Triple, neg: &Triple) -> MarginGradient {
    let mut grad = MarginGradient::default();
    if margin_loss(table, margin, pos, neg) <= 0.0 {
        return grad;
    }
    for (triple, sign) in [(pos, 1.0), (neg, -1.0)] {
        let e = &table.entity_vectors;
        let diff = &e.row(triple.head.0) + &table.relation_vectors.row(triple.relation.0) - e.row(triple.tail.0);
        let norm = diff.dot(&diff).sqrt();
        if norm == 0.0 {
            continue;
        }
        let unit = diff / norm;
        grad.add_entity(triple.head.0, &unit, sign);
        grad.add_relation(triple.relation.0, &unit, sign);
        grad.add_entity(triple.tail.0, &unit, -sign);
    }
    grad
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Array2<f64> {
    let bound = 6.0 / (dim as f64).sqrt();
    Array2::from_shape_simple_fn((rows, dim), || rng.random_range(-bound..bound))
}

fn project_to_unit_ball(matrix: &mut Array2<f64>) {
    for mut row in matrix.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 1.0 {
            row /= norm;
        }
    }
}

/// Draws a corruption of `triple` that is not a known-true triple. Returns
/// `None` when every corruption on the chosen side collides.
fn corrupt(rng: &mut ChaCha8Rng, kg: &KnowledgeGraph, triple: &Triple) -> Option<Triple> {
    let n = kg.num_entities();
    let corrupt_head = rng.random_bool(0.5);
    for _ in 0..(4 * n).max(16) {
        let e = EntityId(rng.random_range(0..n));
        let cand = if corrupt_head {
            Triple { head: e, ..*triple }
        } else {
            Triple { tail: e, ..*triple }
        };
        if !kg.contains(&cand) {
            return Some(cand);
        }
    }
    None
}

/// Trains TransE embeddings for `kg`. Single-threaded and bitwise
/// deterministic for a fixed seed.
pub fn train_transe(kg: &KnowledgeGraph, config: &TranseConfig) -> Result<EmbeddingTable> {
    config.validate()?;
    if kg.triples().is_empty() {
        return Err(Error::Config("cannot train on a graph without triples".into()));
    }
    if kg.num_entities() < 2 {
        return Err(Error::Config("negative sampling needs at least 2 entities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let entity_vectors = uniform_init(&mut rng, kg.num_entities(), config.dim);
    let mut relation_vectors = uniform_init(&mut rng, kg.num_relations(), config.dim);
    // Relations start on the unit sphere, as in the original recipe; they
    // are left unconstrained afterwards.
    for mut row in relation_vectors.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    let mut table = EmbeddingTable::new(
        kg.entities().clone(),
        kg.relations().clone(),
        entity_vectors,
        relation_vectors,
    )?;
    if config.norm_entities {
        project_to_unit_ball(&mut table.entity_vectors);
    }
    let mut order: Vec<usize> = (0..kg.triples().len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let pos = kg.triples()[i];
            for _ in 0..config.negatives_per_positive {
                let Some(neg) = corrupt(&mut rng, kg, &pos) else { continue };
                let grad = margin_loss_gradient(&table, config.margin, &pos, &neg);
                for (row, g) in &grad.entities {
                    table.entity_vectors.row_mut(*row).scaled_add(-config.learning_rate, g);
                }
                for (row, g) in &grad.relations {
                    table.relation_vectors.row_mut(*row).scaled_add(-config.learning_rate, g);
                }
            }
        }
        if config.norm_entities {
            project_to_unit_ball(&mut table.entity_vectors);
        }
    }
    Ok(table)
}

/// Filtered rank of `target` among all entities for one query direction.
/// Ties count against the target (pessimistic).
fn filtered_rank(
    table: &EmbeddingTable,
    known: &HashSet<Triple>,
    triple: &Triple,
    replace_tail: bool,
) -> usize {
    let e = &table.entity_vectors;
    let r = table.relation_vectors.row(triple.relation.0);
    let true_score = residual_norm(e.row(triple.head.0), r, e.row(triple.tail.0));
    let mut rank = 1;
    for c in 0..table.num_entities() {
        let cand = if replace_tail {
            Triple { tail: EntityId(c), ..*triple }
        } else {
            Triple { head: EntityId(c), ..*triple }
        };
        if cand == *triple || known.contains(&cand) {
            continue;
        }
        if residual_norm(e.row(cand.head.0), r, e.row(cand.tail.0)) <= true_score {
            rank += 1;
        }
    }
    rank
}

/// Per-triple filtered ranks `(head_rank, tail_rank)` in input order.
pub fn filtered_ranks(kg_train: &KnowledgeGraph, eval: &[Triple], table: &EmbeddingTable) -> Result<Vec<(usize, usize)>> {
    if eval.is_empty() {
        return contract("evaluation set is empty");
    }
    if table.entity_dim() != table.relation_dim() {
        return contract("translation scoring needs d_e = d_r");
    }
    for t in eval {
        if t.head.0 >= table.num_entities()
            || t.tail.0 >= table.num_entities()
            || t.relation.0 >= table.relation_vectors.nrows()
        {
            return Err(Error::Lookup("evaluation triple outside embedding table".into()));
        }
    }
    let known: HashSet<Triple> = kg_train.triples().iter().chain(eval).copied().collect();
    Ok(par::map(eval, |t| {
        (filtered_rank(table, &known, t, false), filtered_rank(table, &known, t, true))
    }))
}

/// Filtered MRR and Hits@{1,10} over head and tail prediction.
pub fn evaluate_ranking(kg_train: &KnowledgeGraph, eval: &[Triple], table: &EmbeddingTable) -> Result<RankingReport> {
    let ranks = filtered_ranks(kg_train, eval, table)?;
    let all: Vec<usize> = ranks.iter().flat_map(|&(h, t)| [h, t]).collect();
    let n = all.len() as f64;
    Ok(RankingReport {
        mrr: all.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits_at_1: all.iter().filter(|&&r| r <= 1).count() as f64 / n,
        hits_at_10: all.iter().filter(|&&r| r <= 10).count() as f64 / n,
        evaluated_triples: eval.len(),
    })
}
