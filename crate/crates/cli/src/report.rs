use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use medscale::finetune::Arm;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{read_json, BaselineRows, FinetuneRows, Layout, PretrainSummary, RunRecord};
use crate::svg::{Chart, Series};
use crate::CliError;

pub const CSV_COLUMNS: [&str; 11] = [
    "model_size_params",
    "hidden_d",
    "task",
    "label_count",
    "dataset_seed",
    "arm",
    "auroc",
    "auprc",
    "gflops",
    "pretrain_wallclock_s",
    "test_mlm_loss",
];

/// One line of the results table. Fields that do not apply to an arm are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model_size_params: Option<usize>,
    pub hidden_d: Option<usize>,
    pub task: String,
    pub label_count: usize,
    pub dataset_seed: u64,
    pub arm: Arm,
    pub auroc: f64,
    pub auprc: f64,
    pub gflops: Option<f64>,
    pub pretrain_wallclock_s: Option<f64>,
    pub test_mlm_loss: Option<f64>,
    /// Hash of the artifact the row was read from.
    pub source_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub run_hash: String,
    pub config_hash: String,
    pub sources: BTreeMap<String, String>,
    pub pretrain: Vec<PretrainSummary>,
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Debug)]
pub struct ReportOutputs {
    pub rows: Vec<ReportRow>,
    pub csv: PathBuf,
    pub json: PathBuf,
    pub figures: Vec<PathBuf>,
}

fn sha16(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))[..16].to_string()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let fields = [
            opt(r.model_size_params),
            opt(r.hidden_d),
            csv_field(&r.task),
            r.label_count.to_string(),
            r.dataset_seed.to_string(),
            r.arm.as_str().to_string(),
            r.auroc.to_string(),
            r.auprc.to_string(),
            opt(r.gflops),
            opt(r.pretrain_wallclock_s),
            opt(r.test_mlm_loss),
        ];
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

fn arm_rank(a: Arm) -> u8 {
    match a {
        Arm::Pretrained => 0,
        Arm::Scratch => 1,
        Arm::Gbdt => 2,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn read_source(path: &Path, producer: &'static str, sources: &mut BTreeMap<String, String>, root: &Path) -> Result<String, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact { path: path.to_path_buf(), producer });
    }
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    let hash = sha16(&bytes);
    let key = path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/");
    sources.insert(key, hash.clone());
    Ok(hash)
}

/// Joins the pretraining, fine-tuning and baseline artifacts into
/// `report.csv`, `report.json` and the figures. Deterministic given the
/// artifacts.
pub fn build_report(dir: &Path) -> Result<ReportOutputs, CliError> {
    let layout = Layout(dir.to_path_buf());
    let run: RunRecord = read_json(&layout.run(), "generate")?;
    let mut sources = BTreeMap::new();
    read_source(&layout.run(), "generate", &mut sources, dir)?;

    let mut pretrain = Vec::new();
    let mut pretrain_src = BTreeMap::new();
    for &d in &run.config.sweep.dims {
        let p = layout.pretrain_summary(d);
        let h = read_source(&p, "pretrain", &mut sources, dir)?;
        let s: PretrainSummary = read_json(&p, "pretrain")?;
        pretrain_src.insert(d, h);
        pretrain.push(s);
    }
    let by_d: BTreeMap<usize, &PretrainSummary> = pretrain.iter().map(|s| (s.hidden_d, s)).collect();

    let ft_hash = read_source(&layout.finetune_rows(), "finetune", &mut sources, dir)?;
    let ft: FinetuneRows = read_json(&layout.finetune_rows(), "finetune")?;
    let bl_hash = read_source(&layout.baseline_rows(), "baseline", &mut sources, dir)?;
    let bl: BaselineRows = read_json(&layout.baseline_rows(), "baseline")?;

    let mut rows = Vec::new();
    for r in &ft.rows {
        let s = by_d.get(&r.hidden_d).ok_or_else(|| CliError::Failed(format!("fine-tuning row for d={} has no pretraining summary", r.hidden_d)))?;
        let pretrained = r.arm == Arm::Pretrained;
        rows.push(ReportRow {
            model_size_params: Some(r.model_size_params),
            hidden_d: Some(r.hidden_d),
            task: r.task.clone(),
            label_count: r.label_count,
            dataset_seed: r.dataset_seed,
            arm: r.arm,
            auroc: r.auroc,
            auprc: r.auprc,
            gflops: Some(s.gflops),
            pretrain_wallclock_s: pretrained.then_some(s.pretrain_wallclock_s),
            test_mlm_loss: pretrained.then_some(s.test_mlm_loss),
            source_hash: if pretrained { pretrain_src[&r.hidden_d].clone() } else { ft_hash.clone() },
        });
    }
    for r in &bl.rows {
        rows.push(ReportRow {
            model_size_params: None,
            hidden_d: None,
            task: r.task.clone(),
            label_count: r.label_count,
            dataset_seed: r.dataset_seed,
            arm: Arm::Gbdt,
            auroc: r.auroc,
            auprc: r.auprc,
            gflops: None,
            pretrain_wallclock_s: None,
            test_mlm_loss: None,
            source_hash: bl_hash.clone(),
        });
    }
    rows.sort_by(|a, b| {
        (&a.task, a.label_count, a.dataset_seed, arm_rank(a.arm), a.hidden_d).cmp(&(&b.task, b.label_count, b.dataset_seed, arm_rank(b.arm), b.hidden_d))
    });

    let csv = to_csv(&rows);
    let run_hash = sha16(serde_json::to_string(&sources).expect("map serializes").as_bytes());
    let report = ReportJson { run_hash, config_hash: run.config_hash.clone(), sources, pretrain: pretrain.clone(), rows: rows.clone() };

    let csv_path = dir.join("report.csv");
    fs::write(&csv_path, csv).map_err(CliError::io(&csv_path))?;
    let json_path = dir.join("report.json");
    crate::commands::write_json(&json_path, &report)?;

    let mut figures = Vec::new();
    let loss = loss_chart(&pretrain);
    let p = dir.join("fig_loss_vs_gflops.svg");
    fs::write(&p, loss.render()).map_err(CliError::io(&p))?;
    figures.push(p);
    let tasks: Vec<&String> = {
        let mut t: Vec<&String> = rows.iter().map(|r| &r.task).collect();
        t.dedup();
        t
    };
    for task in tasks {
        let chart = auprc_chart(task, &rows, &by_d);
        let p = dir.join(format!("fig_auprc_vs_size_{task}.svg"));
        fs::write(&p, chart.render()).map_err(CliError::io(&p))?;
        figures.push(p);
    }
    Ok(ReportOutputs { rows, csv: csv_path, json: json_path, figures })
}

/// Validation loss against cumulative training compute, one line per size.
pub fn loss_chart(pretrain: &[PretrainSummary]) -> Chart {
    let series = pretrain
        .iter()
        .map(|s| Series {
            label: format!("d={} ({} params)", s.hidden_d, s.model_size_params),
            points: s.val_curve.iter().enumerate().skip(1).map(|(e, &l)| (e as f64 * s.train_gflops_per_epoch, l)).collect(),
            connect: true,
        })
        .collect();
    Chart {
        title: "Pretraining loss vs compute".into(),
        x_label: "training compute (GFLOPs, log scale)".into(),
        y_label: "validation MLM loss".into(),
        log_x: true,
        series,
        trends: Vec::new(),
        references: Vec::new(),
    }
}

/// Mean test AUPRC of the pretrained arm against model size: one series per
/// size (a marker per label count), a trend line per label count, and the
/// GBDT mean per label count as a horizontal reference.
pub fn auprc_chart(task: &str, rows: &[ReportRow], sizes: &BTreeMap<usize, &PretrainSummary>) -> Chart {
    let mean_of = |arm: Arm, d: Option<usize>, n: usize| -> Option<f64> {
        let v: Vec<f64> = rows.iter().filter(|r| r.task == task && r.arm == arm && r.hidden_d == d && r.label_count == n).map(|r| r.auprc).collect();
        (!v.is_empty()).then(|| mean(&v))
    };
    let mut counts: Vec<usize> = rows.iter().filter(|r| r.task == task).map(|r| r.label_count).collect();
    counts.sort_unstable();
    counts.dedup();
    let x = |s: &PretrainSummary| s.model_size_params as f64;
    let series = sizes
        .values()
        .map(|s| Series {
            label: format!("d={} ({} params)", s.hidden_d, s.model_size_params),
            points: counts.iter().filter_map(|&n| mean_of(Arm::Pretrained, Some(s.hidden_d), n).map(|a| (x(s), a))).collect(),
            connect: false,
        })
        .collect();
    let trends = counts
        .iter()
        .map(|&n| Series {
            label: format!("n={n}"),
            points: sizes.values().filter_map(|s| mean_of(Arm::Pretrained, Some(s.hidden_d), n).map(|a| (x(s), a))).collect(),
            connect: true,
        })
        .collect();
    let references = counts.iter().filter_map(|&n| mean_of(Arm::Gbdt, None, n).map(|a| (format!("GBDT n={n}"), a))).collect();
    Chart {
        title: format!("{task}: test AUPRC vs model size"),
        x_label: "parameters (log scale)".into(),
        y_label: "AUPRC".into(),
        log_x: true,
        series,
        trends,
        references,
    }
}
