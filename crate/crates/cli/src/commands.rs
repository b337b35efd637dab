use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use medscale::baseline::{cv_grid_search, featurize_all, predict_gbdt, train_gbdt, write_feature_matrix, GbdtParams};
use medscale::claimsgen::{generate_cohort, read_claims, summarize, write_claims_file};
use medscale::corpus::{Partition, TokenSequence};
use medscale::encoder::{evaluate_mlm, load_checkpoint, pretrain, save_checkpoint, write_loss_curve, EncoderModel, PretrainConfig};
use medscale::evalmetrics::{auprc, auroc, count_params, estimate_flops};
use medscale::finetune::{compare_pretrained_vs_scratch, extract_cohort, sample_balanced, ComparisonPlan, ComparisonRow, FinetuneConfig, TaskPools};
use medscale::pipeline::PreparedCorpus;
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::config::RunConfig;
use crate::report::{build_report, ReportOutputs};
use crate::CliError;

/// Settings that apply to every subcommand.
#[derive(Clone, Copy, Debug)]
pub struct Options {
    /// Upper bound on concurrently running independent jobs.
    pub jobs: usize,
}

impl Default for Options {
    fn default() -> Self {
        Self { jobs: 1 }
    }
}

const TEST_MASK_SEED: u64 = 11;

/// File layout under the output directory.
pub struct Layout(pub PathBuf);

impl Layout {
    pub fn run(&self) -> PathBuf {
        self.0.join("run.json")
    }
    pub fn claims(&self) -> PathBuf {
        self.0.join("claims.jsonl")
    }
    pub fn stats(&self) -> PathBuf {
        self.0.join("cohort_stats.json")
    }
    pub fn vocab(&self) -> PathBuf {
        self.0.join("vocab.json")
    }
    pub fn checkpoint(&self, d: usize) -> PathBuf {
        self.0.join("pretrain").join(format!("d{d}.ckpt"))
    }
    pub fn loss_curve(&self, d: usize) -> PathBuf {
        self.0.join("pretrain").join(format!("d{d}_loss.csv"))
    }
    pub fn pretrain_summary(&self, d: usize) -> PathBuf {
        self.0.join("pretrain").join(format!("d{d}.json"))
    }
    pub fn finetune_rows(&self) -> PathBuf {
        self.0.join("finetune").join("rows.json")
    }
    pub fn baseline_rows(&self) -> PathBuf {
        self.0.join("baseline").join("rows.json")
    }
    pub fn baseline_file(&self, task: &str, n: usize, seed: u64, suffix: &str) -> PathBuf {
        self.0.join("baseline").join(format!("{task}_n{n}_s{seed}_{suffix}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub hidden_d: usize,
    pub model_size_params: usize,
    pub gflops: f64,
    pub best_epoch: usize,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub pretrain_wallclock_s: f64,
    pub total_wallclock_s: f64,
    pub test_mlm_loss: f64,
    /// Training compute of one pass over the pretraining sequences (6 × MACs).
    pub train_gflops_per_epoch: f64,
    /// Validation loss after each epoch, starting with the untrained model.
    pub val_curve: Vec<f64>,
    pub pretrain_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRows {
    pub config_hash: String,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub task: String,
    pub label_count: usize,
    pub dataset_seed: u64,
    pub auroc: f64,
    pub auprc: f64,
    pub cv_auroc: f64,
    pub params: GbdtParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRows {
    pub config_hash: String,
    pub rows: Vec<BaselineRow>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path, producer: &'static str) -> Result<T, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact { path: path.to_path_buf(), producer });
    }
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn pool(opts: Options) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(opts.jobs.max(1)).build().map_err(|e| CliError::Failed(e.to_string()))
}

fn prepare(cfg: &RunConfig) -> Result<PreparedCorpus, CliError> {
    let layout = Layout(cfg.out_dir.clone());
    let path = layout.claims();
    if !path.exists() {
        return Err(CliError::MissingArtifact { path, producer: "generate" });
    }
    let records = read_claims(&path)?;
    Ok(PreparedCorpus::build(&records, cfg.corpus.min_count, cfg.corpus.max_seq_len, cfg.corpus.split_seed)?)
}

fn capped(seqs: &[TokenSequence], cap: Option<usize>) -> &[TokenSequence] {
    &seqs[..cap.map_or(seqs.len(), |c| c.min(seqs.len()))]
}

/// Synthetic claims plus their summary statistics.
pub fn cmd_generate(cfg: &RunConfig) -> Result<(), CliError> {
    let layout = Layout(cfg.out_dir.clone());
    fs::create_dir_all(&layout.0).map_err(CliError::io(&layout.0))?;
    write_json(&layout.run(), &RunRecord { config_hash: cfg.hash(), config: cfg.clone() })?;
    let records = generate_cohort(&cfg.generator)?;
    write_claims_file(&records, &layout.claims())?;
    if !records.is_empty() {
        write_json(&layout.stats(), &summarize(&records)?)?;
    }
    Ok(())
}

/// Pretrains every swept size; a size whose summary already carries the
/// current configuration hash is reused.
pub fn cmd_pretrain(cfg: &RunConfig, opts: Options) -> Result<Vec<PretrainSummary>, CliError> {
    let layout = Layout(cfg.out_dir.clone());
    let corpus = prepare(cfg)?;
    fs::write(layout.vocab(), corpus.vocab.to_json()?).map_err(CliError::io(layout.vocab()))?;
    let train = capped(corpus.partition(Partition::Pretrain), cfg.pretrain.max_sequences);
    let val = capped(corpus.partition(Partition::Validation), cfg.pretrain.max_val_sequences);
    let test = capped(corpus.partition(Partition::Test), cfg.pretrain.max_val_sequences);
    let vocab_hash = corpus.vocab.hash();
    pool(opts)?.install(|| {
        cfg.sweep
            .dims
            .par_iter()
            .map(|&d| -> Result<PretrainSummary, CliError> {
                let hash = cfg.pretrain_hash(d);
                if let Ok(prev) = read_json::<PretrainSummary>(&layout.pretrain_summary(d), "pretrain") {
                    if prev.pretrain_hash == hash && layout.checkpoint(d).exists() {
                        return Ok(prev);
                    }
                }
                let mc = cfg.model_config(d);
                let mut model = corpus.new_model::<f32>(mc.clone())?;
                let pc = PretrainConfig { epochs: cfg.pretrain.epochs, ..PretrainConfig::default() };
                let outcome = pretrain(&mut model, train, val, &pc)?;
                let test_loss = evaluate_mlm(&model, test, TEST_MASK_SEED, pc.eval_batch)?;
                fs::create_dir_all(layout.0.join("pretrain")).map_err(CliError::io(layout.0.join("pretrain")))?;
                let mut csv = Vec::new();
                write_loss_curve(&outcome.curve, &mut csv).map_err(CliError::io(layout.loss_curve(d)))?;
                fs::write(layout.loss_curve(d), csv).map_err(CliError::io(layout.loss_curve(d)))?;
                save_checkpoint(&layout.checkpoint(d), &model, &vocab_hash, serde_json::json!({ "pretrain_hash": hash }))?;
                let [_, nd, nm] = model.vocab_sizes;
                let summary = PretrainSummary {
                    hidden_d: d,
                    model_size_params: count_params(&mc, nd, nm),
                    gflops: estimate_flops(&mc, cfg.corpus.max_seq_len, 1, nd, nm).gflops,
                    best_epoch: outcome.best_epoch,
                    initial_val_loss: outcome.curve[0].val.total,
                    best_val_loss: outcome.best_val_loss,
                    pretrain_wallclock_s: outcome.wallclock_to_best_s,
                    total_wallclock_s: outcome.total_wallclock_s,
                    test_mlm_loss: test_loss.total,
                    train_gflops_per_epoch: train.iter().map(|q| estimate_flops(&mc, q.len(), 1, nd, nm).train_flops).sum::<f64>() / 1e9,
                    val_curve: outcome.curve.iter().map(|r| r.val.total).collect(),
                    pretrain_hash: hash,
                };
                write_json(&layout.pretrain_summary(d), &summary)?;
                Ok(summary)
            })
            .collect()
    })
}

fn task_pools(cfg: &RunConfig, corpus: &PreparedCorpus) -> Result<Vec<(TaskPools, Vec<usize>)>, CliError> {
    cfg.task_specs()?
        .into_iter()
        .map(|(spec, section)| {
            let cohort = extract_cohort(&corpus.records, &corpus.vocab, &spec)?;
            Ok((TaskPools::from_cohort(spec, &cohort, &corpus.split, cfg.finetune.val_cap, cfg.corpus.split_seed), section.label_counts.clone()))
        })
        .collect()
}

/// Pretrained and from-scratch fine-tuning for every size, task, label count and dataset seed.
pub fn cmd_finetune(cfg: &RunConfig, opts: Options) -> Result<Vec<ComparisonRow>, CliError> {
    let layout = Layout(cfg.out_dir.clone());
    let corpus = prepare(cfg)?;
    let vocab_hash = corpus.vocab.hash();
    let mut checkpoints: BTreeMap<usize, EncoderModel<f32>> = BTreeMap::new();
    for &d in &cfg.sweep.dims {
        let path = layout.checkpoint(d);
        if !path.exists() {
            return Err(CliError::MissingArtifact { path, producer: "pretrain" });
        }
        let ck = load_checkpoint::<f32>(&path)?;
        if ck.vocab_hash != vocab_hash {
            return Err(CliError::Config(format!("{} was trained on a different vocabulary; rerun `medscale pretrain`", path.display())));
        }
        checkpoints.insert(d, ck.model);
    }
    let pools = task_pools(cfg, &corpus)?;
    let f = &cfg.finetune;
    let base = ComparisonPlan {
        label_counts: Vec::new(),
        dataset_seeds: f.dataset_seeds.clone(),
        init_seeds: f.init_seeds.clone(),
        finetune: FinetuneConfig { batch_size: f.batch_size, lr: f.lr, max_epochs: f.max_epochs.unwrap_or(20), ..FinetuneConfig::default() },
        fixed_epochs: f.max_epochs.is_some(),
        scratch: f.scratch,
    };
    let per_size: Vec<Vec<ComparisonRow>> = pool(opts)?.install(|| {
        cfg.sweep
            .dims
            .par_iter()
            .map(|&d| -> Result<Vec<ComparisonRow>, CliError> {
                let mut rows = Vec::new();
                for (p, counts) in &pools {
                    let plan = ComparisonPlan { label_counts: counts.clone(), ..base.clone() };
                    rows.extend(compare_pretrained_vs_scratch(&checkpoints, &[d], std::slice::from_ref(p), &plan)?);
                }
                Ok(rows)
            })
            .collect::<Result<_, _>>()
    })?;
    let rows: Vec<ComparisonRow> = per_size.into_iter().flatten().collect();
    write_json(&layout.finetune_rows(), &FinetuneRows { config_hash: cfg.hash(), rows: rows.clone() })?;
    Ok(rows)
}

/// Cross-validated GBDT on the same balanced training sets, scored on the same test pools.
pub fn cmd_baseline(cfg: &RunConfig, opts: Options) -> Result<Vec<BaselineRow>, CliError> {
    let layout = Layout(cfg.out_dir.clone());
    let corpus = prepare(cfg)?;
    let pools = task_pools(cfg, &corpus)?;
    let mut jobs = Vec::new();
    for (p, counts) in &pools {
        for &n in counts {
            for &seed in &cfg.finetune.dataset_seeds {
                jobs.push((p, n, seed));
            }
        }
    }
    fs::create_dir_all(layout.0.join("baseline")).map_err(CliError::io(layout.0.join("baseline")))?;
    let rows: Vec<BaselineRow> = pool(opts)?.install(|| {
        jobs.par_iter()
            .map(|&(p, n, seed)| -> Result<BaselineRow, CliError> {
                let train = sample_balanced(&p.train.positives, &p.train.negatives, n, seed)?;
                let x = featurize_all(&train, &corpus.vocab);
                let y: Vec<bool> = train.iter().map(|e| e.label).collect();
                let name = &p.task.name;
                write_feature_matrix(&layout.baseline_file(name, n, seed, "features.bin"), &x)?;
                let cv = cv_grid_search(&x, &y, &cfg.baseline.grid, &cfg.baseline.base_params(seed), cfg.baseline.folds, seed)?;
                write_json(&layout.baseline_file(name, n, seed, "best_params.json"), &cv.best)?;
                let model = train_gbdt(&x, &y, &cv.best)?;
                let xt = featurize_all(&p.test, &corpus.vocab);
                let yt: Vec<bool> = p.test.iter().map(|e| e.label).collect();
                let pt = predict_gbdt(&model, &xt)?;
                let metric = |e| CliError::Failed(format!("task {name}: {e}"));
                Ok(BaselineRow {
                    task: name.clone(),
                    label_count: n,
                    dataset_seed: seed,
                    auroc: auroc(&pt, &yt).map_err(metric)?,
                    auprc: auprc(&pt, &yt).map_err(metric)?,
                    cv_auroc: cv.best_mean_auroc,
                    params: cv.best,
                })
            })
            .collect::<Result<_, _>>()
    })?;
    write_json(&layout.baseline_rows(), &BaselineRows { config_hash: cfg.hash(), rows: rows.clone() })?;
    Ok(rows)
}

/// Report tables and figures from the artifacts in `dir`.
pub fn cmd_report(dir: &Path) -> Result<ReportOutputs, CliError> {
    build_report(dir)
}

/// The whole pipeline in order.
pub fn cmd_sweep(cfg: &RunConfig, opts: Options) -> Result<ReportOutputs, CliError> {
    cmd_generate(cfg)?;
    cmd_pretrain(cfg, opts)?;
    cmd_finetune(cfg, opts)?;
    cmd_baseline(cfg, opts)?;
    cmd_report(&cfg.out_dir)
}
