use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::infusion::{
    digest_bytes, evaluate, train_baseline, train_stage1, train_stage2, train_text, tokenizer_corpus, Checkpoint,
    Infusion, Provenance, Stage,
};
use crate::kg::{load_triples, EmbeddingTable, KnowledgeGraph};
use crate::kge::{evaluate_ranking, train_transe, RankingReport};
use crate::lm::{LmParams, Tokenizer};
use crate::metrics::{
    paired_ttest, ErrorBreakdown, MetricReport, MetricScores, TTestResult, METRIC_COLUMNS,
};
use crate::projection::{ProjectionParams, Variant};
use crate::qa::{
    collision_groups, generate_qa, read_jsonl, synth_co_graph, write_jsonl, Mode, Polarity, QaExample,
    Split,
};

pub const GRAPH: &str = "graph.tsv";
pub const DATASET: &str = "qa.jsonl";
pub const DATASET_STATS: &str = "qa_stats.json";
pub const EMBEDDINGS: &str = "kge.table";
pub const KGE_REPORT: &str = "kge_report.json";
pub const BASE: &str = "base.ckpt";
pub const BASELINE: &str = "baseline.ckpt";
pub const STAGE1: &str = "stage1.ckpt";
pub const ALIGNED: &str = "aligned.ckpt";
pub const COMPARE_CSV: &str = "compare.csv";
pub const COMPARE_JSON: &str = "compare.json";
pub const ERRORS: &str = "errors.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";

/// Subcommand that writes each artifact.
pub fn producer(artifact: &str) -> &'static str {
    match artifact {
        GRAPH => "gen-kg",
        DATASET | DATASET_STATS => "gen-qa",
        EMBEDDINGS | KGE_REPORT => "train-kge",
        BASE => "pretrain",
        BASELINE => "train-baseline",
        STAGE1 => "train-align",
        ALIGNED => "finetune",
        COMPARE_CSV | COMPARE_JSON => "compare",
        ERRORS => "error-report",
        ABLATION_CSV | ABLATION_JSON => "ablate",
        a if a.starts_with("eval_") || a.starts_with("predictions_") => "evaluate",
        _ => "pipeline",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    Aligned,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Baseline, Arm::Aligned];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Aligned => "aligned",
        }
    }

    pub fn checkpoint(self) -> &'static str {
        match self {
            Arm::Baseline => BASELINE,
            Arm::Aligned => ALIGNED,
        }
    }

    pub fn report(self) -> String {
        format!("eval_{}.json", self.name())
    }

    pub fn predictions(self) -> String {
        format!("predictions_{}.jsonl", self.name())
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Arm::Baseline),
            "aligned" => Ok(Arm::Aligned),
            _ => Err(Error::Config(format!("unknown arm `{s}`; expected baseline or aligned"))),
        }
    }
}

/// Per-command record of what was read and written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub reference_entity: String,
    pub question: String,
    pub answer: String,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub n: usize,
    pub baseline: MetricScores,
    pub aligned: MetricScores,
    pub delta: MetricScores,
    /// Paired t-test on per-example EM, aligned minus baseline.
    pub ttest: Option<TTestResult>,
    pub ttest_error: Option<String>,
}

impl Contrast {
    fn new(baseline: &MetricReport, aligned: &MetricReport) -> Self {
        let em = |r: &MetricReport| r.column(|s| s.em);
        let (ttest, ttest_error) = match paired_ttest(&em(aligned), &em(baseline)) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Self {
            n: baseline.count,
            baseline: baseline.mean,
            aligned: aligned.mean,
            delta: aligned.mean.minus(&baseline.mean),
            ttest,
            ttest_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub overall: Contrast,
    /// Test questions whose reference entity has a near-identical label.
    pub collision: Contrast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub kge_dim: usize,
    pub n: usize,
    pub scores: MetricScores,
}

fn json_pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

struct Run<'a> {
    pipe: &'a Pipeline,
    command: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Run<'_> {
    fn input(&mut self, artifact: &str) -> Result<Vec<u8>> {
        let path = self.pipe.path(artifact);
        if !path.is_file() {
            return Err(Error::Missing { artifact: path.display().to_string(), producer: producer(artifact).into() });
        }
        let bytes = std::fs::read(&path)?;
        self.inputs.insert(artifact.into(), digest_bytes(&bytes));
        Ok(bytes)
    }

    fn text(&mut self, artifact: &str) -> Result<String> {
        String::from_utf8(self.input(artifact)?).map_err(|_| Error::Format(format!("{artifact} is not UTF-8")))
    }

    fn write(&mut self, artifact: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.pipe.path(artifact), bytes)?;
        self.outputs.insert(artifact.into(), digest_bytes(bytes));
        Ok(())
    }

    fn finish(self) -> Result<Manifest> {
        let m = Manifest {
            command: self.command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.pipe.config.hash(),
            seed: self.pipe.config.seed,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let dir = self.pipe.out.join("manifests");
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(format!("{}.json", self.command)), json_pretty(&m)?)?;
        Ok(m)
    }
}

/// Artifacts loaded from disk for the training and evaluation commands.
struct Data {
    kg: KnowledgeGraph,
    train: Vec<QaExample>,
    test: Vec<QaExample>,
}

/// One experiment rooted at an output directory. Every step reads its
/// inputs from and writes its outputs to that directory.
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        let out = out.into();
        std::fs::create_dir_all(&out)?;
        Ok(Self { config, out })
    }

    pub fn path(&self, artifact: &str) -> PathBuf {
        self.out.join(artifact)
    }

    fn run(&self, command: &'static str) -> Run<'_> {
        Run { pipe: self, command, inputs: BTreeMap::new(), outputs: BTreeMap::new() }
    }

    fn provenance(&self, run: &Run<'_>) -> Provenance {
        Provenance { system: self.config.system.clone(), inputs: run.inputs.clone(), ..Default::default() }
    }

    fn graph(&self, run: &mut Run<'_>) -> Result<KnowledgeGraph> {
        load_triples(&run.text(GRAPH)?)
    }

    fn data(&self, run: &mut Run<'_>) -> Result<Data> {
        let kg = self.graph(run)?;
        let all = read_jsonl(run.input(DATASET)?.as_slice())?;
        let (train, test) = all.into_iter().partition(|e| e.split == Split::Train);
        Ok(Data { kg, train, test })
    }

    fn table(&self, run: &mut Run<'_>) -> Result<EmbeddingTable> {
        EmbeddingTable::from_text(&run.text(EMBEDDINGS)?)
    }

    fn checkpoint(&self, run: &mut Run<'_>, artifact: &str) -> Result<Checkpoint> {
        Checkpoint::from_text(&run.text(artifact)?)
    }

    fn save(&self, run: &mut Run<'_>, artifact: &str, ckpt: &Checkpoint) -> Result<()> {
        run.write(artifact, ckpt.to_text()?.as_bytes())
    }

    pub fn gen_kg(&self) -> Result<Manifest> {
        let mut run = self.run("gen-kg");
        let kg = match self.config.synth_config() {
            Some(s) => synth_co_graph(&s).kg,
            None => match &self.config.graph {
                super::GraphSource::Triples(p) => {
                    let path = self.config.resolve(p);
                    let text = std::fs::read_to_string(&path)?;
                    run.inputs.insert(p.display().to_string(), digest_bytes(text.as_bytes()));
                    load_triples(&text)?
                }
                super::GraphSource::Synthetic(_) => unreachable!("handled above"),
            },
        };
        run.write(GRAPH, kg.to_tsv().as_bytes())?;
        run.finish()
    }

    pub fn gen_qa(&self) -> Result<Manifest> {
        let mut run = self.run("gen-qa");
        let kg = self.graph(&mut run)?;
        let (examples, stats) = generate_qa(&kg, &self.config.templates()?, &self.config.qa_config())?;
        let mut buf = Vec::new();
        write_jsonl(&examples, &mut buf)?;
        run.write(DATASET, &buf)?;
        run.write(DATASET_STATS, &json_pretty(&stats)?)?;
        run.finish()
    }

    pub fn train_kge(&self) -> Result<Manifest> {
        let mut run = self.run("train-kge");
        let kg = self.graph(&mut run)?;
        let (table, report) = self.embed(&kg, self.config.transe.dim)?;
        run.write(EMBEDDINGS, table.to_text().as_bytes())?;
        run.write(KGE_REPORT, &json_pretty(&report)?)?;
        run.finish()
    }

    fn embed(&self, kg: &KnowledgeGraph, dim: usize) -> Result<(EmbeddingTable, RankingReport)> {
        let table = train_transe(kg, &self.config.transe_config(dim))?;
        let report = evaluate_ranking(kg, kg.triples(), &table)?;
        Ok((table, report))
    }

    /// Trains the shared base model both arms start from.
    pub fn pretrain(&self) -> Result<Manifest> {
        let mut run = self.run("pretrain");
        let data = self.data(&mut run)?;
        let labels = data.kg.entities().labels().to_vec();
        let cfg = &self.config;
        let everything: Vec<QaExample> = data.train.iter().chain(&data.test).cloned().collect();
        let tokenizer = Tokenizer::build(tokenizer_corpus(&cfg.system, &everything, &labels));
        let mut lm = LmParams::init(&cfg.lm_config(tokenizer.vocab_size()))?;
        let mut corpus = data.train.clone();
        if cfg.pretrain.name_echo {
            corpus.extend(labels.iter().map(|l| name_echo(l)));
        }
        let plan = cfg.pretrain.plan.plan(Stage::BaselineFinetune, cfg.seed_for("pretrain"));
        let log = train_text(&corpus, &cfg.pretrain.layouts, &mut lm, &tokenizer, &cfg.system, &plan)?;
        let mut provenance = self.provenance(&run);
        provenance.plans.push(plan);
        provenance.logs.push(log);
        self.save(&mut run, BASE, &Checkpoint { tokenizer, lm, projection: None, provenance })?;
        run.finish()
    }

    pub fn train_baseline(&self) -> Result<Manifest> {
        let mut run = self.run("train-baseline");
        let data = self.data(&mut run)?;
        let mut ckpt = self.checkpoint(&mut run, BASE)?;
        let plan = self.config.baseline.plan(Stage::BaselineFinetune, self.config.seed_for("baseline"));
        let log = train_baseline(&data.train, &mut ckpt.lm, &ckpt.tokenizer, &self.config.system, &plan)?;
        ckpt.provenance.plans.push(plan);
        ckpt.provenance.logs.push(log);
        ckpt.provenance.inputs = run.inputs.clone();
        self.save(&mut run, BASELINE, &ckpt)?;
        run.finish()
    }

    fn align(&self, base: &Checkpoint, table: &EmbeddingTable, labels: &[String], variant: Variant) -> Result<Checkpoint> {
        let cfg = &self.config;
        let spec = crate::projection::ProjectionSpec { variant, ..cfg.projection_spec(table.entity_dim()) };
        let mut params = ProjectionParams::init(&spec, cfg.seed_for("projection"))?;
        let ctx = Infusion { tokenizer: &base.tokenizer, system: &cfg.system, table, spec: &spec };
        let plan = cfg.stage1.plan(Stage::FeatureAlignment, cfg.seed_for("stage1"));
        let log = train_stage1(labels, &base.lm, &mut params, ctx, &plan)?;
        let mut ckpt = base.clone();
        ckpt.provenance.plans.push(plan);
        ckpt.provenance.logs.push(log);
        ckpt.projection = Some((spec, params));
        Ok(ckpt)
    }

    fn finetune_checkpoint(&self, ckpt: &mut Checkpoint, table: &EmbeddingTable, train: &[QaExample]) -> Result<()> {
        let cfg = &self.config;
        let (spec, mut params) = ckpt.projection.clone().ok_or_else(|| Error::Format("checkpoint has no projection".into()))?;
        let ctx = Infusion { tokenizer: &ckpt.tokenizer, system: &cfg.system, table, spec: &spec };
        let plan = cfg.stage2.plan(Stage::EndToEnd, cfg.seed_for("stage2"));
        let mut lm = ckpt.lm.clone();
        let log = train_stage2(train, &mut lm, &mut params, ctx, &plan)?;
        ckpt.lm = lm;
        ckpt.projection = Some((spec, params));
        ckpt.provenance.plans.push(plan);
        ckpt.provenance.logs.push(log);
        Ok(())
    }

    /// Stage 1: fits the projection with the base model frozen.
    pub fn train_align(&self) -> Result<Manifest> {
        let mut run = self.run("train-align");
        let kg = self.graph(&mut run)?;
        let table = self.table(&mut run)?;
        let base = self.checkpoint(&mut run, BASE)?;
        let mut ckpt = self.align(&base, &table, kg.entities().labels(), self.config.projection.variant)?;
        ckpt.provenance.inputs = run.inputs.clone();
        self.save(&mut run, STAGE1, &ckpt)?;
        run.finish()
    }

    /// Stage 2: trains the projection and output head on the QA split.
    pub fn finetune(&self) -> Result<Manifest> {
        let mut run = self.run("finetune");
        let data = self.data(&mut run)?;
        let table = self.table(&mut run)?;
        let mut ckpt = self.checkpoint(&mut run, STAGE1)?;
        self.finetune_checkpoint(&mut ckpt, &table, &data.train)?;
        ckpt.provenance.inputs = run.inputs.clone();
        self.save(&mut run, ALIGNED, &ckpt)?;
        run.finish()
    }

    /// Scores each arm's checkpoint on the test split.
    pub fn evaluate(&self, arms: &[Arm]) -> Result<Manifest> {
        let mut run = self.run("evaluate");
        let data = self.data(&mut run)?;
        for &arm in arms {
            let ckpt = self.checkpoint(&mut run, arm.checkpoint())?;
            let table = if ckpt.projection.is_some() { Some(self.table(&mut run)?) } else { None };
            let ev = evaluate(&ckpt, table.as_ref(), &data.test)?;
            run.write(&arm.report(), &json_pretty(&ev.report)?)?;
            let preds: Vec<Prediction> = data
                .test
                .iter()
                .zip(ev.predictions)
                .map(|(e, p)| Prediction {
                    reference_entity: e.reference_entity.clone(),
                    question: e.question.clone(),
                    answer: e.answer.clone(),
                    prediction: p,
                })
                .collect();
            let mut buf = Vec::new();
            for p in &preds {
                serde_json::to_writer(&mut buf, p)?;
                buf.push(b'\n');
            }
            run.write(&arm.predictions(), &buf)?;
        }
        run.finish()
    }

    /// Baseline vs aligned on the whole test split and on the name-collision
    /// subset, with paired t-tests on per-example EM.
    pub fn compare(&self) -> Result<(Manifest, Comparison)> {
        let mut run = self.run("compare");
        let data = self.data(&mut run)?;
        let mut reports = Vec::new();
        for arm in Arm::BOTH {
            let r: MetricReport = serde_json::from_slice(&run.input(&arm.report())?)?;
            if r.count != data.test.len() {
                return Err(Error::Format(format!("{} covers {} examples, test split has {}", arm.report(), r.count, data.test.len())));
            }
            reports.push(r);
        }
        let subset = collision_subset(&data.kg, &data.test);
        let comparison = Comparison {
            overall: Contrast::new(&reports[0], &reports[1]),
            collision: Contrast::new(&reports[0].subset(&subset), &reports[1].subset(&subset)),
        };
        run.write(COMPARE_CSV, compare_csv(&comparison).as_bytes())?;
        run.write(COMPARE_JSON, &json_pretty(&comparison)?)?;
        Ok((run.finish()?, comparison))
    }

    /// Error-category counts per arm over the test split.
    pub fn error_report(&self, arms: &[Arm]) -> Result<(Manifest, BTreeMap<Arm, ErrorBreakdown>)> {
        let mut run = self.run("error-report");
        let data = self.data(&mut run)?;
        let mut out = BTreeMap::new();
        for &arm in arms {
            let text = run.text(&arm.predictions())?;
            let preds = text.lines().map(serde_json::from_str).collect::<serde_json::Result<Vec<Prediction>>>()?;
            if preds.len() != data.test.len() {
                return Err(Error::Format(format!("{} does not match the test split", arm.predictions())));
            }
            let b = ErrorBreakdown::from_predictions(data.test.iter().zip(preds.iter().map(|p| p.prediction.as_str())));
            out.insert(arm, b);
        }
        run.write(ERRORS, &json_pretty(&out)?)?;
        Ok((run.finish()?, out))
    }

    /// Re-runs both stages from the base model for every projection variant
    /// and embedding size, scoring each on the test split.
    pub fn ablate(&self, variants: &[Variant], dims: &[usize]) -> Result<(Manifest, Vec<AblationRow>)> {
        if variants.is_empty() || dims.is_empty() || dims.contains(&0) {
            return Err(Error::Config("ablation needs at least one variant and positive embedding sizes".into()));
        }
        let mut run = self.run("ablate");
        let data = self.data(&mut run)?;
        let base = self.checkpoint(&mut run, BASE)?;
        let labels = data.kg.entities().labels();
        let mut rows = Vec::new();
        for &dim in dims {
            let table = if dim == self.config.transe.dim {
                self.table(&mut run)?
            } else {
                self.embed(&data.kg, dim)?.0
            };
            for &variant in variants {
                let mut ckpt = self.align(&base, &table, labels, variant)?;
                self.finetune_checkpoint(&mut ckpt, &table, &data.train)?;
                let ev = evaluate(&ckpt, Some(&table), &data.test)?;
                rows.push(AblationRow { variant, kge_dim: dim, n: ev.report.count, scores: ev.report.mean });
            }
        }
        run.write(ABLATION_CSV, ablation_csv(&rows).as_bytes())?;
        run.write(ABLATION_JSON, &json_pretty(&rows)?)?;
        Ok((run.finish()?, rows))
    }

    /// Every step in order, ending with the comparison.
    pub fn run_all(&self) -> Result<Comparison> {
        self.gen_kg()?;
        self.gen_qa()?;
        self.train_kge()?;
        self.pretrain()?;
        self.train_baseline()?;
        self.train_align()?;
        self.finetune()?;
        self.evaluate(&Arm::BOTH)?;
        let (_, c) = self.compare()?;
        self.error_report(&Arm::BOTH)?;
        Ok(c)
    }
}

/// The stage-1 target text for an entity, used as an extra text-only
/// example so the base model can spell every label.
pub fn name_echo(label: &str) -> QaExample {
    QaExample {
        reference_entity: label.into(),
        question: label.into(),
        answer: label.into(),
        relation: "name".into(),
        template_id: "name-echo".into(),
        mode: Mode::Open,
        polarity: Polarity::Positive,
        split: Split::Train,
    }
}

/// Indices of examples whose reference entity shares a collision key with
/// another entity of `kg`.
pub fn collision_subset(kg: &KnowledgeGraph, examples: &[QaExample]) -> Vec<usize> {
    let members: BTreeSet<String> =
        collision_groups(kg.entities().labels().iter().map(String::as_str)).into_iter().flatten().collect();
    (0..examples.len()).filter(|&i| members.contains(&examples[i].reference_entity)).collect()
}

fn metric_cells(s: &MetricScores) -> String {
    s.values().iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",")
}

pub fn compare_csv(c: &Comparison) -> String {
    let mut out = format!("model,subset,n,{},t_statistic,p_value,significant\n", METRIC_COLUMNS.join(","));
    for (subset, block) in [("all", &c.overall), ("collision", &c.collision)] {
        for (model, s) in [("baseline", &block.baseline), ("aligned", &block.aligned)] {
            writeln!(out, "{model},{subset},{},{},,,", block.n, metric_cells(s)).expect("write to string");
        }
        let t = match &block.ttest {
            Some(t) => format!("{},{},{}", fmt_f64(t.t_statistic), fmt_f64(t.p_value), t.significant),
            None => ",,".into(),
        };
        writeln!(out, "delta,{subset},{},{},{t}", block.n, metric_cells(&block.delta)).expect("write to string");
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("variant,kge_dim,n,{}\n", METRIC_COLUMNS.join(","));
    for r in rows {
        let v = serde_json::to_value(r.variant).expect("variant serializes");
        writeln!(out, "{},{},{},{}", v.as_str().unwrap_or_default(), r.kge_dim, r.n, metric_cells(&r.scores))
            .expect("write to string");
    }
    out
}

/// Convenience for callers that only hold an output directory.
pub fn load_comparison(out: &Path) -> Result<Comparison> {
    let path = out.join(COMPARE_JSON);
    if !path.is_file() {
        return Err(Error::Missing { artifact: path.display().to_string(), producer: producer(COMPARE_JSON).into() });
    }
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
