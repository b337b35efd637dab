use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{finetune, sample_balanced, Classifier, Cohort, FinetuneConfig, FinetuneError, LabeledExample, TaskSpec};
use crate::corpus::{Partition, SplitAssignment};
use crate::encoder::EncoderModel;
use crate::evalmetrics::{auprc, auroc};
use crate::Scalar;

pub const DATASET_SEEDS: [u64; 3] = [42, 123, 456];
pub const INIT_SEEDS: [u64; 3] = [1001, 1002, 1003];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Pretrained,
    Scratch,
    Gbdt,
}

impl Arm {
    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Pretrained => "pretrained",
            Arm::Scratch => "scratch",
            Arm::Gbdt => "gbdt",
        }
    }
}

/// Per-task example pools: balanced training sets are drawn from `train`,
/// early stopping watches `val`, metrics are reported on `test`.
#[derive(Clone, Debug)]
pub struct TaskPools {
    pub task: TaskSpec,
    pub train: Cohort,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl TaskPools {
    /// Fine-tune partition for training, validation partition for early
    /// stopping (optionally subsampled to `val_cap`), the whole test partition
    /// for evaluation; evaluation pools keep their natural prevalence.
    pub fn from_cohort(task: TaskSpec, cohort: &Cohort, split: &SplitAssignment, val_cap: Option<usize>, seed: u64) -> Self {
        let mut val = cohort.restrict(split, Partition::Validation).all();
        if let Some(cap) = val_cap.filter(|&c| c < val.len()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            val.shuffle(&mut rng);
            val.truncate(cap);
            val.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        }
        Self {
            task,
            train: cohort.restrict(split, Partition::Finetune),
            val,
            test: cohort.restrict(split, Partition::Test).all(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPlan {
    pub label_counts: Vec<usize>,
    pub dataset_seeds: Vec<u64>,
    pub init_seeds: Vec<u64>,
    /// `max_epochs` is replaced per label count by [`FinetuneConfig::epochs_for_labels`]
    /// unless `fixed_epochs` is set.
    pub finetune: FinetuneConfig,
    pub fixed_epochs: bool,
    pub scratch: bool,
}

impl Default for ComparisonPlan {
    fn default() -> Self {
        Self {
            label_counts: vec![100, 500, 1000],
            dataset_seeds: DATASET_SEEDS.to_vec(),
            init_seeds: INIT_SEEDS.to_vec(),
            finetune: FinetuneConfig::default(),
            fixed_epochs: false,
            scratch: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub hidden_d: usize,
    pub model_size_params: usize,
    pub task: String,
    pub label_count: usize,
    pub dataset_seed: u64,
    pub arm: Arm,
    pub auroc: f64,
    pub auprc: f64,
    /// Fine-tuning runs averaged into this row.
    pub runs: usize,
}

/// Test AUROC and AUPRC of a fitted classifier.
pub fn evaluate<T: Scalar>(clf: &Classifier<T>, test: &[LabeledExample], eval_batch: usize) -> Result<(f64, f64), FinetuneError> {
    let p = clf.predict(test, eval_batch)?;
    let y: Vec<bool> = test.iter().map(|e| e.label).collect();
    Ok((auroc(&p, &y)?, auprc(&p, &y)?))
}

/// One row per (size, task, label count, dataset seed, arm). The scratch arm
/// re-initialises the same architecture once per init seed and reports the mean.
pub fn compare_pretrained_vs_scratch<T: Scalar>(
    checkpoints: &BTreeMap<usize, EncoderModel<T>>,
    sizes: &[usize],
    pools: &[TaskPools],
    plan: &ComparisonPlan,
) -> Result<Vec<ComparisonRow>, FinetuneError> {
    let mut rows = Vec::new();
    for &d in sizes {
        let pretrained = checkpoints
            .get(&d)
            .ok_or_else(|| FinetuneError::Config(format!("no pretrained checkpoint for hidden size {d}")))?;
        for pool in pools {
            for &n in &plan.label_counts {
                let mut cfg = plan.finetune.clone();
                if !plan.fixed_epochs {
                    cfg.max_epochs = FinetuneConfig::epochs_for_labels(n);
                }
                for &ds in &plan.dataset_seeds {
                    let train = sample_balanced(&pool.train.positives, &pool.train.negatives, n, ds)?;
                    let row = |arm, (auroc, auprc), runs| ComparisonRow {
                        hidden_d: d,
                        model_size_params: pretrained.num_params(),
                        task: pool.task.name.clone(),
                        label_count: n,
                        dataset_seed: ds,
                        arm,
                        auroc,
                        auprc,
                        runs,
                    };

                    let run_cfg = FinetuneConfig { seed: ds, ..cfg.clone() };
                    let fit = finetune(pretrained.clone(), &train, &pool.val, &run_cfg)?;
                    rows.push(row(Arm::Pretrained, evaluate(&fit.classifier, &pool.test, cfg.eval_batch)?, 1));

                    if plan.scratch && !plan.init_seeds.is_empty() {
                        let mut sum = (0.0, 0.0);
                        for &is in &plan.init_seeds {
                            let mut mc = pretrained.config.clone();
                            mc.seed = is;
                            let fresh = EncoderModel::<T>::with_sizes(mc, pretrained.vocab_sizes, pretrained.ple.clone(), pretrained.standardizer)?;
                            let run_cfg = FinetuneConfig { seed: is, ..cfg.clone() };
                            let fit = finetune(fresh, &train, &pool.val, &run_cfg)?;
                            let (a, p) = evaluate(&fit.classifier, &pool.test, cfg.eval_batch)?;
                            sum = (sum.0 + a, sum.1 + p);
                        }
                        let k = plan.init_seeds.len() as f64;
                        rows.push(row(Arm::Scratch, (sum.0 / k, sum.1 / k), plan.init_seeds.len()));
                    }
                }
            }
        }
    }
    Ok(rows)
}
