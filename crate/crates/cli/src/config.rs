use std::path::{Path, PathBuf};

use medscale::baseline::{GbdtParams, GridSpec};
use medscale::claimsgen::{CodeSystem, CodeWorld, GeneratorConfig};
use medscale::encoder::{ModelConfig, PretrainConfig};
use medscale::finetune::{FinetuneConfig, TaskSpec, DATASET_SEEDS, INIT_SEEDS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub tasks: Vec<TaskSection>,
    #[serde(default)]
    pub baseline: BaselineSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// `None` scales with corpus size.
    pub min_count: Option<u64>,
    pub max_seq_len: usize,
    pub split_seed: u64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { min_count: None, max_seq_len: 128, split_seed: 42 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub batch_size: usize,
    pub mask_rate: f64,
    pub seed: u64,
    /// Caps the number of pretraining sequences (earliest in split order).
    pub max_sequences: Option<usize>,
    /// Caps the validation sequences scored each epoch.
    pub max_val_sequences: Option<usize>,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            epochs: PretrainConfig::default().epochs,
            layers: m.layers,
            heads: m.heads,
            ffn_mult: m.ffn_mult,
            batch_size: m.batch_size,
            mask_rate: m.mask_rate,
            seed: m.seed,
            max_sequences: None,
            max_val_sequences: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub dims: Vec<usize>,
    /// One learning rate per entry of `dims`, or a single shared value.
    pub lr: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub batch_size: usize,
    pub lr: f64,
    /// Overrides the 20/40 epoch rule when set.
    pub max_epochs: Option<usize>,
    pub val_cap: Option<usize>,
    pub dataset_seeds: Vec<u64>,
    pub init_seeds: Vec<u64>,
    pub scratch: bool,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        Self {
            batch_size: f.batch_size,
            lr: f.lr,
            max_epochs: None,
            val_cap: Some(500),
            dataset_seeds: DATASET_SEEDS.to_vec(),
            init_seeds: INIT_SEEDS.to_vec(),
            scratch: true,
        }
    }
}

/// A downstream task. The target is either an explicit code or, for
/// synthetic cohorts, a latent disease index resolved through the generator
/// (its primary diagnosis, or its guideline-linked medication class).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub name: String,
    pub system: String,
    #[serde(default)]
    pub target_code: Option<String>,
    #[serde(default)]
    pub latent: Option<usize>,
    #[serde(default = "default_horizon")]
    pub horizon_days: u32,
    pub label_counts: Vec<usize>,
}

fn default_horizon() -> u32 {
    medscale::finetune::HORIZON_DAYS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub grid: GridSpec,
    pub folds: usize,
    pub min_samples_leaf: usize,
    pub lambda: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let p = GbdtParams::default();
        Self { grid: GridSpec::default(), folds: 5, min_samples_leaf: p.min_samples_leaf, lambda: p.lambda }
    }
}

impl BaselineSection {
    pub fn base_params(&self, seed: u64) -> GbdtParams {
        GbdtParams { min_samples_leaf: self.min_samples_leaf, lambda: self.lambda, seed, ..GbdtParams::default() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.generator.validate().map_err(|e| CliError::Config(format!("generator: {e}")))?;
        if self.sweep.dims.is_empty() {
            return bad("sweep.dims must list at least one hidden size".into());
        }
        if self.sweep.lr.len() != 1 && self.sweep.lr.len() != self.sweep.dims.len() {
            return bad(format!("sweep.lr has {} entries for {} dims", self.sweep.lr.len(), self.sweep.dims.len()));
        }
        for &d in &self.sweep.dims {
            self.model_config(d).validate().map_err(|e| CliError::Config(format!("sweep.dims {d}: {e}")))?;
        }
        if self.finetune.dataset_seeds.is_empty() {
            return bad("finetune.dataset_seeds must not be empty".into());
        }
        if self.finetune.scratch && self.finetune.init_seeds.is_empty() {
            return bad("finetune.init_seeds must not be empty when the scratch arm is enabled".into());
        }
        let mut names: Vec<&str> = self.tasks.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("task names must be unique".into());
        }
        for t in &self.tasks {
            if t.name.is_empty() || !t.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad(format!("task name {:?} must be nonempty and use only letters, digits, '_' or '-'", t.name));
            }
            if CodeSystem::from_tag(&t.system).is_none() {
                return bad(format!("tasks.{}: system must be \"icd10\" or \"yj\", got {:?}", t.name, t.system));
            }
            if t.target_code.is_some() == t.latent.is_some() {
                return bad(format!("tasks.{}: set exactly one of target_code and latent", t.name));
            }
            if t.label_counts.is_empty() || t.label_counts.iter().any(|&n| n == 0 || n % 2 == 1) {
                return bad(format!("tasks.{}: label_counts must be nonempty, even and positive", t.name));
            }
        }
        if self.baseline.folds < 2 {
            return bad("baseline.folds must be at least 2".into());
        }
        Ok(())
    }

    pub fn lr_for(&self, i: usize) -> f64 {
        if self.sweep.lr.len() == 1 {
            self.sweep.lr[0]
        } else {
            self.sweep.lr[i]
        }
    }

    pub fn model_config(&self, d: usize) -> ModelConfig {
        let i = self.sweep.dims.iter().position(|&x| x == d).unwrap_or(0);
        let p = &self.pretrain;
        ModelConfig {
            d,
            layers: p.layers,
            heads: p.heads,
            ffn_mult: p.ffn_mult,
            max_seq_len: self.corpus.max_seq_len,
            batch_size: p.batch_size,
            lr: self.lr_for(i),
            mask_rate: p.mask_rate,
            seed: p.seed,
        }
    }

    pub fn task_specs(&self) -> Result<Vec<(TaskSpec, &TaskSection)>, CliError> {
        let world = CodeWorld::new(&self.generator).map_err(|e| CliError::Config(e.to_string()))?;
        self.tasks
            .iter()
            .map(|t| {
                let system = CodeSystem::from_tag(&t.system).expect("validated");
                let code = match (&t.target_code, t.latent) {
                    (Some(c), _) => c.clone(),
                    (None, Some(k)) if k < self.generator.n_latent => match system {
                        CodeSystem::Diagnosis => world.primary_code(k).to_string(),
                        CodeSystem::Medication => world.linked_med_class(k).to_string(),
                    },
                    (None, Some(k)) => {
                        return Err(CliError::Config(format!("tasks.{}: latent {k} ≥ generator.n_latent {}", t.name, self.generator.n_latent)))
                    }
                    (None, None) => unreachable!("validated"),
                };
                let mut spec = TaskSpec::new(t.name.clone(), code, system);
                spec.horizon_days = t.horizon_days;
                Ok((spec, t))
            })
            .collect()
    }

    /// Hash of the canonical JSON form; identifies every artifact of a run.
    /// The output directory is excluded, so relocated runs hash the same.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&canon).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }

    /// Hash of the sections that determine the corpus and the given model.
    pub fn pretrain_hash(&self, d: usize) -> String {
        let key = serde_json::json!({
            "generator": self.generator,
            "corpus": self.corpus,
            "pretrain": self.pretrain,
            "model": self.model_config(d),
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))[..16].to_string()
    }
}
