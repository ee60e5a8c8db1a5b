//! Training plans and the three training procedures: projection alignment,
//! projection plus head fine-tuning, and full text-only fine-tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prompt::{training_example, PromptKind, PromptRender};
use crate::error::{contract, Error, Result};
use crate::kg::EmbeddingTable;
use crate::lm::{backward, Example, GradScope, LmParams, Tokenizer};
use crate::par;
use crate::projection::{project, project_gradients, ProjectionParams, ProjectionSpec};
use crate::qa::QaExample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    FeatureAlignment,
    EndToEnd,
    BaselineFinetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    ProjectionOnly,
    ProjectionPlusHead,
    LmAll,
}

impl Stage {
    pub fn trainable(self) -> Trainable {
        match self {
            Stage::FeatureAlignment => Trainable::ProjectionOnly,
            Stage::EndToEnd => Trainable::ProjectionPlusHead,
            Stage::BaselineFinetune => Trainable::LmAll,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    /// Adam with β = (0.9, 0.999), ε = 1e-8.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub stage: Stage,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl TrainPlan {
    /// Defaults: learning rate 2e-5 for alignment (50 epochs), 2e-4
    /// otherwise (1 epoch), warmup 0.03, batch 8, SGD.
    pub fn new(stage: Stage) -> Self {
        let (learning_rate, epochs) = match stage {
            Stage::FeatureAlignment => (2e-5, 50),
            Stage::EndToEnd | Stage::BaselineFinetune => (2e-4, 1),
        };
        Self { stage, learning_rate, warmup_ratio: 0.03, epochs, batch_size: 8, seed: 0, optimizer: Optimizer::Sgd }
    }

    pub fn trainable(&self) -> Trainable {
        self.stage.trainable()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config("warmup_ratio must lie in [0, 1)".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate at 1-based `step` of `total`: `lr · min(1, step / W)`
    /// with `W = warmup_ratio · total`.
    pub fn learning_rate_at(&self, step: usize, total: usize) -> f64 {
        let w = self.warmup_ratio * total as f64;
        if w <= 0.0 {
            self.learning_rate
        } else {
            self.learning_rate * (step as f64 / w).min(1.0)
        }
    }

    fn expect(&self, stage: Stage) -> Result<()> {
        self.validate()?;
        if self.stage != stage {
            return Err(Error::Config(format!("plan is for stage {:?}, expected {:?}", self.stage, stage)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean example loss of each optimizer step, before the update.
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn first_step_loss(&self) -> Option<f64> {
        self.step_losses.first().copied()
    }
}

struct OptState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptState {
    fn new(kind: Optimizer, n: usize) -> Self {
        let (m, v) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam => (vec![0.0; n], vec![0.0; n]),
        };
        Self { kind, m, v, t: 0 }
    }

    fn update(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in theta.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for i in 0..theta.len() {
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
                    theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

/// A parameter set seen as one flat vector with per-example gradients.
trait Trainee: Sync {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, flat: &[f64]);
    fn len(&self) -> usize;
    fn loss_and_grad(&self, i: usize) -> Result<(f64, Vec<f64>)>;
}

fn run(plan: &TrainPlan, trainee: &mut impl Trainee) -> Result<TrainLog> {
    let n = trainee.len();
    if n == 0 {
        return contract("training set is empty");
    }
    let steps_per_epoch = n.div_ceil(plan.batch_size);
    let total = steps_per_epoch * plan.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut theta = trainee.params();
    let mut opt = OptState::new(plan.optimizer, theta.len());
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for _ in 0..plan.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(plan.batch_size) {
            step += 1;
            let results = par::map(batch, |&i| trainee.loss_and_grad(i));
            let mut grad = vec![0.0; theta.len()];
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r?;
                loss += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            epoch_loss += loss;
            log.step_losses.push(loss * scale);
            let lr = plan.learning_rate_at(step, total);
            if lr > 0.0 {
                opt.update(&mut theta, &grad, lr);
                trainee.set_params(&theta);
            }
        }
        log.epoch_losses.push(epoch_loss / n as f64);
    }
    Ok(log)
}

fn projection_flat(p: &ProjectionParams) -> Vec<f64> {
    p.values().collect()
}

fn set_projection(p: &mut ProjectionParams, flat: &[f64]) {
    for (a, b) in p.values_mut().zip(flat) {
        *a = *b;
    }
}

fn lm_flat(p: &LmParams) -> Vec<f64> {
    p.tensors().iter().flat_map(|(_, t)| t.iter().copied().collect::<Vec<_>>()).collect()
}

fn set_lm(p: &mut LmParams, flat: &[f64]) {
    let mut it = flat.iter();
    for (_, mut t) in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = *it.next().expect("flat vector covers every tensor");
        }
    }
}

/// Shared context for the entity-slot stages.
#[derive(Clone, Copy)]
pub struct Infusion<'a> {
    pub tokenizer: &'a Tokenizer,
    pub system: &'a str,
    pub table: &'a EmbeddingTable,
    pub spec: &'a ProjectionSpec,
}

impl Infusion<'_> {
    fn check(&self, lm: &LmParams, projection: &ProjectionParams) -> Result<()> {
        self.spec.validate()?;
        projection.check(self.spec)?;
        if self.spec.output_dim != lm.model_dim() {
            return contract(format!("projection emits {} dims, model expects {}", self.spec.output_dim, lm.model_dim()));
        }
        if self.spec.input_dim != self.table.entity_dim() {
            return contract(format!("projection reads {} dims, table has {}", self.spec.input_dim, self.table.entity_dim()));
        }
        Ok(())
    }
}

struct Prepared {
    entity: String,
    example: Example,
}

fn prepare(
    ctx: &Infusion<'_>,
    lm: &LmParams,
    kind: PromptKind,
    items: impl Iterator<Item = (String, String, String)>,
) -> Result<Vec<Prepared>> {
    items
        .map(|(entity, question, response)| {
            ctx.table.lookup(&entity)?;
            let r = PromptRender::new(ctx.tokenizer, kind, ctx.system, &question, Some(&response))?;
            if r.tokens.len() > lm.context_len() {
                return contract(format!("prompt of {} tokens exceeds context {}", r.tokens.len(), lm.context_len()));
            }
            // The prefix depends on the projection and is rebuilt each step.
            Ok(Prepared { entity, example: Example { loss_mask: r.loss_mask(), tokens: r.tokens, prefix: None } })
        })
        .collect()
}

struct Stage1<'a> {
    ctx: Infusion<'a>,
    lm: &'a LmParams,
    projection: ProjectionParams,
    items: Vec<Prepared>,
}

fn infused_grad(
    ctx: &Infusion<'_>,
    lm: &LmParams,
    projection: &ProjectionParams,
    item: &Prepared,
    scope: GradScope,
) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)> {
    let x = ctx.table.lookup(&item.entity)?;
    let prefix = project(ctx.spec, projection, x)?;
    let ex = Example { tokens: item.example.tokens.clone(), loss_mask: item.example.loss_mask.clone(), prefix: Some(prefix) };
    let g = backward(lm, &ex, scope)?;
    let upstream = g.prefix.expect("infused example has a prefix gradient");
    let pg = project_gradients(ctx.spec, projection, x, upstream.view())?;
    let head = (scope == GradScope::Head).then(|| g.params.head.iter().copied().collect());
    Ok((g.loss, projection_flat(&pg.params), head))
}

impl Trainee for Stage1<'_> {
    fn params(&self) -> Vec<f64> {
        projection_flat(&self.projection)
    }
    fn set_params(&mut self, flat: &[f64]) {
        set_projection(&mut self.projection, flat);
    }
    fn len(&self) -> usize {
        self.items.len()
    }
    fn loss_and_grad(&self, i: usize) -> Result<(f64, Vec<f64>)> {
        let (l, g, _) = infused_grad(&self.ctx, self.lm, &self.projection, &self.items[i], GradScope::None)?;
        Ok((l, g))
    }
}

/// Feature alignment: trains only the projection so that the frozen model
/// reproduces each entity's label from its projected embedding.
pub fn train_stage1(
    labels: &[String],
    lm: &LmParams,
    projection: &mut ProjectionParams,
    ctx: Infusion<'_>,
    plan: &TrainPlan,
) -> Result<TrainLog> {
    plan.expect(Stage::FeatureAlignment)?;
    ctx.check(lm, projection)?;
    let items = prepare(&ctx, lm, PromptKind::Alignment, labels.iter().map(|l| (l.clone(), String::new(), l.clone())))?;
    let mut t = Stage1 { ctx, lm, projection: projection.clone(), items };
    let log = run(plan, &mut t)?;
    *projection = t.projection;
    Ok(log)
}

struct Stage2<'a> {
    ctx: Infusion<'a>,
    lm: LmParams,
    projection: ProjectionParams,
    items: Vec<Prepared>,
}

impl Trainee for Stage2<'_> {
    fn params(&self) -> Vec<f64> {
        let mut v = projection_flat(&self.projection);
        v.extend(self.lm.head.iter());
        v
    }
    fn set_params(&mut self, flat: &[f64]) {
        let n = self.projection.num_params();
        set_projection(&mut self.projection, &flat[..n]);
        for (a, b) in self.lm.head.iter_mut().zip(&flat[n..]) {
            *a = *b;
        }
    }
    fn len(&self) -> usize {
        self.items.len()
    }
    fn loss_and_grad(&self, i: usize) -> Result<(f64, Vec<f64>)> {
        let (l, mut g, head) = infused_grad(&self.ctx, &self.lm, &self.projection, &self.items[i], GradScope::Head)?;
        g.extend(head.expect("head gradient requested"));
        Ok((l, g))
    }
}

/// End-to-end stage: trains the projection and the unembedding head on
/// entity-slot QA prompts; every other model tensor stays frozen.
pub fn train_stage2(
    dataset: &[QaExample],
    lm: &mut LmParams,
    projection: &mut ProjectionParams,
    ctx: Infusion<'_>,
    plan: &TrainPlan,
) -> Result<TrainLog> {
    plan.expect(Stage::EndToEnd)?;
    ctx.check(lm, projection)?;
    let items = prepare(
        &ctx,
        lm,
        PromptKind::Infused,
        dataset.iter().map(|e| (e.reference_entity.clone(), e.question.clone(), e.answer.clone())),
    )?;
    let mut t = Stage2 { ctx, lm: lm.clone(), projection: projection.clone(), items };
    let log = run(plan, &mut t)?;
    lm.head = t.lm.head;
    *projection = t.projection;
    Ok(log)
}

struct Baseline {
    lm: LmParams,
    items: Vec<Example>,
}

impl Trainee for Baseline {
    fn params(&self) -> Vec<f64> {
        lm_flat(&self.lm)
    }
    fn set_params(&mut self, flat: &[f64]) {
        set_lm(&mut self.lm, flat);
    }
    fn len(&self) -> usize {
        self.items.len()
    }
    fn loss_and_grad(&self, i: usize) -> Result<(f64, Vec<f64>)> {
        let g = backward(&self.lm, &self.items[i], GradScope::All)?;
        Ok((g.loss, lm_flat(&g.params)))
    }
}

/// Text-only fine-tuning of every model parameter on plain QA prompts.
pub fn train_baseline(
    dataset: &[QaExample],
    lm: &mut LmParams,
    tokenizer: &Tokenizer,
    system: &str,
    plan: &TrainPlan,
) -> Result<TrainLog> {
    train_text(dataset, &[PromptKind::Plain], lm, tokenizer, system, plan)
}

/// Full fine-tuning on every example rendered in each of `layouts`, which
/// must all be text-only (`Plain` or `Placeholder`).
pub fn train_text(
    dataset: &[QaExample],
    layouts: &[PromptKind],
    lm: &mut LmParams,
    tokenizer: &Tokenizer,
    system: &str,
    plan: &TrainPlan,
) -> Result<TrainLog> {
    plan.expect(Stage::BaselineFinetune)?;
    if layouts.is_empty() || layouts.iter().any(|k| !matches!(k, PromptKind::Plain | PromptKind::Placeholder)) {
        return contract("text-only training needs Plain or Placeholder layouts");
    }
    let items = layouts
        .iter()
        .flat_map(|&kind| dataset.iter().map(move |e| (kind, e)))
        .map(|(kind, e)| training_example(tokenizer, kind, system, &e.question, &e.reference_entity, &e.answer, lm, None))
        .collect::<Result<Vec<_>>>()?;
    let mut t = Baseline { lm: lm.clone(), items };
    let log = run(plan, &mut t)?;
    *lm = t.lm;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_schedule() {
        let p = TrainPlan { warmup_ratio: 0.1, learning_rate: 1.0, ..TrainPlan::new(Stage::EndToEnd) };
        assert_eq!(p.learning_rate_at(1, 100), 0.1);
        assert_eq!(p.learning_rate_at(5, 100), 0.5);
        assert_eq!(p.learning_rate_at(100, 100), 1.0);
        let flat = TrainPlan { warmup_ratio: 0.0, ..p };
        assert_eq!(flat.learning_rate_at(1, 100), 1.0);
    }

    #[test]
    fn plan_validation() {
        let mut p = TrainPlan::new(Stage::FeatureAlignment);
        assert!(p.validate().is_ok());
        assert_eq!(p.trainable(), Trainable::ProjectionOnly);
        p.warmup_ratio = 1.0;
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        assert_eq!(Stage::EndToEnd.trainable(), Trainable::ProjectionPlusHead);
        assert_eq!(Stage::BaselineFinetune.trainable(), Trainable::LmAll);
    }

    #[test]
    fn flat_round_trip() {
        let mut lm = LmParams::init(&crate::lm::LmConfig { vocab_size: 7, model_dim: 4, layers: 1, heads: 2, context_len: 5, seed: 1 }).unwrap();
        let flat = lm_flat(&lm);
        assert_eq!(flat.len(), lm.num_params());
        let before = lm.clone();
        set_lm(&mut lm, &flat);
        assert_eq!(lm_flat(&lm), lm_flat(&before));
    }
}
