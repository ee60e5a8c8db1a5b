use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::infusion::{Optimizer, PromptKind, Stage, TrainPlan, DEFAULT_SYSTEM};
use crate::kge::TranseConfig;
use crate::lm::LmConfig;
use crate::projection::{FinalActivation, ProjectionSpec, Variant};
use crate::qa::{co_templates, load_templates, yago_templates, Mode, QaConfig, QaTemplate, SynthCoConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSource {
    Synthetic(SynthCoConfig),
    /// Tab-separated triples, relative to the config file.
    Triples(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TemplateSource {
    Co,
    Yago,
    /// JSON array of templates, relative to the config file.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub variant: Variant,
    pub depth: usize,
    pub final_activation: FinalActivation,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { variant: Variant::Linear, depth: 2, final_activation: FinalActivation::None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmShape {
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub context_len: usize,
}

impl Default for LmShape {
    fn default() -> Self {
        Self { model_dim: 32, layers: 2, heads: 4, context_len: 40 }
    }
}

/// A [`TrainPlan`] without its stage and seed, which the pipeline supplies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

impl Default for PlanConfig {
    fn default() -> Self {
        let p = TrainPlan::new(Stage::EndToEnd);
        Self {
            learning_rate: p.learning_rate,
            warmup_ratio: p.warmup_ratio,
            epochs: p.epochs,
            batch_size: p.batch_size,
            optimizer: p.optimizer,
        }
    }
}

impl PlanConfig {
    pub fn plan(&self, stage: Stage, seed: u64) -> TrainPlan {
        TrainPlan {
            stage,
            learning_rate: self.learning_rate,
            warmup_ratio: self.warmup_ratio,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            optimizer: self.optimizer,
        }
    }
}

/// Text-only training of the shared base model both arms start from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub plan: PlanConfig,
    pub layouts: Vec<PromptKind>,
    /// Adds one `label -> label` example per entity.
    pub name_echo: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { plan: PlanConfig::default(), layouts: vec![PromptKind::Plain, PromptKind::Placeholder], name_echo: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub graph: GraphSource,
    pub templates: TemplateSource,
    /// Template modes to keep; empty keeps all.
    pub modes: Vec<Mode>,
    pub qa: QaConfig,
    pub transe: TranseConfig,
    pub projection: ProjectionConfig,
    pub lm: LmShape,
    pub system: String,
    pub pretrain: PretrainConfig,
    pub stage1: PlanConfig,
    pub stage2: PlanConfig,
    pub baseline: PlanConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s1 = TrainPlan::new(Stage::FeatureAlignment);
        Self {
            seed: 0,
            out: None,
            graph: GraphSource::Synthetic(SynthCoConfig::default()),
            templates: TemplateSource::Co,
            modes: Vec::new(),
            qa: QaConfig::default(),
            transe: TranseConfig::default(),
            projection: ProjectionConfig::default(),
            lm: LmShape::default(),
            system: DEFAULT_SYSTEM.into(),
            pretrain: PretrainConfig::default(),
            stage1: PlanConfig { learning_rate: s1.learning_rate, epochs: s1.epochs, ..PlanConfig::default() },
            stage2: PlanConfig::default(),
            baseline: PlanConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

fn at(pointer: &str, e: Error) -> Error {
    let msg = match e {
        Error::Config(m) | Error::Contract(m) => m,
        other => other.to_string(),
    };
    Error::Config(format!("{pointer}: {msg}"))
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    let p = path.to_string();
    if p == "." {
        "/".into()
    } else {
        format!("/{}", p.replace('.', "/").replace('[', "/").replace(']', ""))
    }
}

/// Derives an independent seed for `stream` from the top-level seed.
pub fn derive_seed(root: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stream.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

impl ExperimentConfig {
    /// Parses and validates a config. Schema errors carry the JSON pointer
    /// of the offending value.
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("{}: {}", pointer(e.path()), e.inner())))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.graph {
            GraphSource::Synthetic(s) if s.n_components == 0 => {
                return Err(at("/graph/synthetic/n_components", Error::Config("must be at least 1".into())))
            }
            GraphSource::Triples(p) if !self.resolve(p).is_file() => {
                return Err(at("/graph/triples", Error::Config(format!("{} does not exist", self.resolve(p).display()))))
            }
            _ => {}
        }
        if let TemplateSource::File(p) = &self.templates {
            if !self.resolve(p).is_file() {
                return Err(at("/templates/file", Error::Config(format!("{} does not exist", self.resolve(p).display()))));
            }
        }
        if !(self.qa.test_fraction > 0.0 && self.qa.test_fraction < 1.0) {
            return Err(at("/qa/test_fraction", Error::Config("must lie in (0, 1)".into())));
        }
        if self.qa.max_answers == 0 {
            return Err(at("/qa/max_answers", Error::Config("must be at least 1".into())));
        }
        self.transe.validate().map_err(|e| at("/transe", e))?;
        self.projection_spec(self.transe.dim).validate().map_err(|e| at("/projection", e))?;
        self.lm_config(1).validate().map_err(|e| at("/lm", e))?;
        if self.pretrain.layouts.is_empty()
            || self.pretrain.layouts.iter().any(|k| !matches!(k, PromptKind::Plain | PromptKind::Placeholder))
        {
            return Err(at("/pretrain/layouts", Error::Config("must list plain and/or placeholder".into())));
        }
        for (name, p, stage) in [
            ("/pretrain/plan", &self.pretrain.plan, Stage::BaselineFinetune),
            ("/stage1", &self.stage1, Stage::FeatureAlignment),
            ("/stage2", &self.stage2, Stage::EndToEnd),
            ("/baseline", &self.baseline, Stage::BaselineFinetune),
        ] {
            p.plan(stage, 0).validate().map_err(|e| at(name, e))?;
        }
        Ok(())
    }

    /// Stable hash of the effective configuration, independent of where
    /// the outputs go.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&Self { out: None, ..self.clone() }).expect("config serializes");
        crate::infusion::digest_bytes(json.as_bytes())
    }

    pub fn seed_for(&self, stream: &str) -> u64 {
        derive_seed(self.seed, stream)
    }

    pub fn templates(&self) -> Result<Vec<QaTemplate>> {
        let all = match &self.templates {
            TemplateSource::Co => co_templates(),
            TemplateSource::Yago => yago_templates(),
            TemplateSource::File(p) => load_templates(self.resolve(p))?,
        };
        Ok(all.into_iter().filter(|t| self.modes.is_empty() || self.modes.contains(&t.mode)).collect())
    }

    pub fn synth_config(&self) -> Option<SynthCoConfig> {
        match &self.graph {
            GraphSource::Synthetic(s) => Some(SynthCoConfig { seed: self.seed_for("graph"), ..s.clone() }),
            GraphSource::Triples(_) => None,
        }
    }

    pub fn qa_config(&self) -> QaConfig {
        QaConfig { seed: self.seed_for("qa"), ..self.qa.clone() }
    }

    pub fn transe_config(&self, dim: usize) -> TranseConfig {
        TranseConfig { dim, seed: self.seed_for("transe"), ..self.transe.clone() }
    }

    pub fn projection_spec(&self, input_dim: usize) -> ProjectionSpec {
        ProjectionSpec {
            variant: self.projection.variant,
            input_dim,
            output_dim: self.lm.model_dim,
            depth: self.projection.depth,
            final_activation: self.projection.final_activation,
        }
    }

    pub fn lm_config(&self, vocab_size: usize) -> LmConfig {
        LmConfig {
            vocab_size,
            model_dim: self.lm.model_dim,
            layers: self.lm.layers,
            heads: self.lm.heads,
            context_len: self.lm.context_len,
            seed: self.seed_for("lm"),
        }
    }
}
