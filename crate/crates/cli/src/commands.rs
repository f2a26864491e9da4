//! Command implementations. Each command writes the resolved config next
//! to its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ivpp::augment::PreprocessSpec;
use ivpp::datamodel::{
    generate_synthetic, load_manifest, split_by_patient, write_dataset, DatasetManifest, SplitAssignment,
    DATA_ROOT_ENV,
};
use ivpp::evalstats::{
    kfold_cv_pocus, label_efficiency, Condition, ExperimentResult, LabelEfficiencyConfig, ResultRow, StatReport,
};
use ivpp::mmode::{load_rois, write_rois, PleuralRoi, STANDARD_SIZE};
use ivpp::sampler::{BmodeSource, MmodeSource, PairMode, PairSource};
use ivpp::train::{
    fine_tune, linear_eval, pretrain, pretraining_videos, Checkpoint, EvalMetrics, EvalSets, PretrainJob, SslModel,
};

use crate::config::{EvalMode, ExperimentConfig, RunCondition};
use crate::error::{CliError, Result};

pub const CHECKPOINT_NAME: &str = "checkpoint.safetensors";
pub const EPOCH_LOG_NAME: &str = "epochs.csv";
pub const RESULTS_NAME: &str = "results.csv";

/// A loaded dataset with its patient split and (for M-mode) pleural ROIs.
pub struct Data {
    pub manifest: DatasetManifest,
    pub splits: SplitAssignment,
    pub rois: Option<BTreeMap<String, PleuralRoi>>,
}

/// Relative input paths are tried as given, then under `DATA_ROOT`.
fn input_path(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            return PathBuf::from(root).join(path);
        }
    }
    path.to_path_buf()
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let (manifest, rois) = match &cfg.data.manifest {
        Some(path) => {
            let path = input_path(path);
            if !path.exists() {
                return Err(CliError::missing(&path, "manifest not found"));
            }
            let manifest = load_manifest(&path)?;
            let rois = match &cfg.data.rois {
                Some(r) => Some(load_rois(input_path(r))?),
                None if cfg.task.is_mmode() => {
                    return Err(CliError::Config(format!(
                        "task {} needs pleural ROIs: set data.rois",
                        cfg.task.name()
                    )))
                }
                None => None,
            };
            (manifest, rois)
        }
        None => {
            let synth = generate_synthetic(&cfg.data.synthetic)?;
            (synth.manifest, Some(synth.rois))
        }
    };
    let splits = split_by_patient(&manifest, cfg.data.split_fractions, cfg.seed)?;
    Ok(Data { manifest, splits, rois })
}

/// Pretrains one condition and writes its checkpoint, epoch log and config
/// snapshot into `dir`.
pub fn pretrain_condition(cfg: &ExperimentConfig, data: &Data, cond: RunCondition, dir: &Path) -> Result<SslModel> {
    let run_cfg = single_condition(cfg, cond);
    run_cfg.write_snapshot(dir)?;
    let videos = pretraining_videos(&data.manifest, &data.splits);
    let source: Box<dyn PairSource> = match cfg.ivpp.mode {
        PairMode::Bmode => Box::new(BmodeSource { videos }),
        PairMode::Mmode => {
            let rois = data.rois.as_ref().ok_or_else(|| CliError::Config("M-mode pretraining needs ROIs".into()))?;
            let with_roi = videos
                .into_iter()
                .map(|v| {
                    rois.get(&v.video_id)
                        .map(|r| (v, *r))
                        .ok_or_else(|| CliError::Config(format!("no ROI for video {}", v.video_id)))
                })
                .collect::<Result<Vec<_>>>()?;
            Box::new(MmodeSource::new(with_roi, STANDARD_SIZE)?)
        }
    };
    let job = PretrainJob {
        source: source.as_ref(),
        ivpp: cfg.ivpp_for(cond.delta, cond.sw),
        method: cond.method,
        objective: cfg.objective.clone(),
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        augment: cfg.augment.clone(),
        preprocess: PreprocessSpec::for_task(cfg.task),
    };
    log::info!("pretraining {}", cond.slug());
    let out = pretrain(&job, Some(&dir.join(EPOCH_LOG_NAME)))?;
    let snapshot = serde_json::to_value(&run_cfg).map_err(ivpp::Error::from)?;
    out.model.to_checkpoint(out.steps, snapshot)?.save(dir.join(CHECKPOINT_NAME))?;
    Ok(out.model)
}

/// `cfg` narrowed to one condition, so its snapshot re-runs exactly that.
fn single_condition(cfg: &ExperimentConfig, cond: RunCondition) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.methods = vec![cond.method];
    c.ivpp.deltas = vec![cond.delta];
    c.ivpp.sample_weights = vec![cond.sw];
    c
}

fn metric_rows(cond: RunCondition, subset: usize, m: &EvalMetrics) -> Vec<ResultRow> {
    let row = |metric: &str, value: f64| ResultRow {
        method: cond.method,
        delta: cond.delta,
        sw: cond.sw,
        subset,
        metric: metric.into(),
        value,
    };
    let mut rows = vec![row("accuracy", m.accuracy)];
    rows.extend(m.auc.map(|a| row("auc", a)));
    rows
}

/// Runs the configured evaluation for one pretrained model.
pub fn evaluate(cfg: &ExperimentConfig, data: &Data, model: &SslModel, cond: RunCondition) -> Result<ExperimentResult> {
    let sets = EvalSets::from_splits(&data.manifest, &data.splits);
    let rois = data.rois.as_ref();
    let probe = &cfg.eval.probe;
    let rows = match cfg.eval.mode {
        EvalMode::Linear => metric_rows(cond, 0, &linear_eval(model, &sets, cfg.task, rois, probe)?),
        EvalMode::Finetune => metric_rows(cond, 0, &fine_tune(model, &sets, cfg.task, rois, cfg.eval.unfreeze, probe)?),
        EvalMode::Kfold => {
            if cfg.task.is_mmode() {
                return Err(CliError::Config("kfold evaluation supports B-mode tasks only".into()));
            }
            let cv = kfold_cv_pocus(model, &data.manifest, cfg.task, cfg.eval.k_folds, probe)?;
            log::info!("{}: {:.3} ± {:.3}", cond.slug(), cv.mean, cv.std);
            cv.fold_accuracies
                .iter()
                .enumerate()
                .map(|(fold, &value)| ResultRow {
                    method: cond.method,
                    delta: cond.delta,
                    sw: cond.sw,
                    subset: fold,
                    metric: "accuracy".into(),
                    value,
                })
                .collect()
        }
        EvalMode::LabelEfficiency => {
            let le = LabelEfficiencyConfig {
                n_subsets: cfg.eval.n_subsets,
                unfreeze: cfg.eval.unfreeze,
                probe: probe.clone(),
                partition_seed: cfg.seed,
            };
            let condition = Condition {
                method: cond.method,
                delta: cond.delta,
                sw: cond.sw,
                model,
            };
            return Ok(label_efficiency(&data.manifest, &data.splits, &[condition], cfg.task, rois, &le)?);
        }
    };
    Ok(ExperimentResult::from_rows(rows)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<String> {
    let out = &cfg.out_dir;
    create_dir(out)?;
    let synth = generate_synthetic(&cfg.data.synthetic)?;
    let manifest_path = write_dataset(&synth.manifest, out)?;
    write_rois(out.join("rois.csv"), &synth.rois)?;
    cfg.write_snapshot(out)?;
    let mut lines = vec![format!(
        "wrote {} videos from {} patients to {}",
        synth.manifest.records.len(),
        synth.manifest.patients().len(),
        manifest_path.display()
    )];
    for (task, classes) in &synth.manifest.tasks {
        let counts: Vec<String> = classes
            .iter()
            .enumerate()
            .map(|(id, name)| {
                let n = synth.manifest.records.iter().filter(|v| v.label(task) == Some(id)).count();
                format!("{name}={n}")
            })
            .collect();
        lines.push(format!("{task}: {}", counts.join(" ")));
    }
    Ok(lines.join("\n"))
}

/// The single condition a `pretrain` or `eval` invocation refers to: the
/// first entry of each grid axis.
pub fn first_condition(cfg: &ExperimentConfig) -> RunCondition {
    RunCondition {
        method: cfg.methods[0],
        delta: cfg.ivpp.deltas[0],
        sw: cfg.ivpp.sample_weights[0],
    }
}

pub fn cmd_pretrain(cfg: &ExperimentConfig, cond: RunCondition) -> Result<String> {
    let data = load_data(cfg)?;
    pretrain_condition(cfg, &data, cond, &cfg.out_dir)?;
    Ok(format!(
        "{}: checkpoint written to {}",
        cond.slug(),
        cfg.out_dir.join(CHECKPOINT_NAME).display()
    ))
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<String> {
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_NAME));
    if !path.exists() {
        return Err(CliError::missing(&path, "run `ivpp pretrain` first or pass --checkpoint"));
    }
    let ckpt = Checkpoint::load(&path)?;
    // Tag the rows with the condition recorded in the checkpoint, if any.
    let cond = serde_json::from_value::<ExperimentConfig>(ckpt.config.clone())
        .map(|c| first_condition(&c))
        .unwrap_or_else(|_| first_condition(cfg));
    let model = SslModel::from_checkpoint(&ckpt)?;
    let data = load_data(cfg)?;
    let result = evaluate(cfg, &data, &model, cond)?;
    let dir = cfg.out_dir.join("eval");
    cfg.write_snapshot(&dir)?;
    result.write_csv(dir.join(RESULTS_NAME))?;
    let mut text = String::new();
    for metric in result.metrics() {
        text.push_str(&result.summary_table(&metric)?);
    }
    Ok(text)
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<String> {
    let plan = cfg.sweep_plan();
    let data = load_data(cfg)?;
    cfg.write_snapshot(&cfg.out_dir)?;
    let mut result = ExperimentResult::new();
    for (i, &cond) in plan.runs.iter().enumerate() {
        log::info!("run {}/{}: {}", i + 1, plan.runs.len(), cond.slug());
        let dir = cfg.out_dir.join("runs").join(cond.slug());
        let model = pretrain_condition(cfg, &data, cond, &dir)?;
        let rows = evaluate(cfg, &data, &model, cond)?;
        rows.write_csv(dir.join(RESULTS_NAME))?;
        result.extend(rows)?;
    }
    for (alias, source) in &plan.aliases {
        let copies: Vec<ResultRow> = result
            .rows()
            .iter()
            .filter(|r| r.method == source.method && r.delta == source.delta && r.sw == source.sw)
            .map(|r| ResultRow { sw: alias.sw, ..r.clone() })
            .collect();
        for row in copies {
            result.push(row)?;
        }
    }
    result.write_csv(cfg.out_dir.join(RESULTS_NAME))?;
    let mut text = format!("{} runs, {} aliased cells\n", plan.runs.len(), plan.aliases.len());
    for metric in result.metrics() {
        text.push_str(&result.summary_table(&metric)?);
    }
    Ok(text)
}

fn read_results(cfg: &ExperimentConfig, results: Option<&Path>) -> Result<ExperimentResult> {
    let path = results.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join(RESULTS_NAME));
    if !path.exists() {
        return Err(CliError::missing(&path, "run `ivpp sweep` first or pass --results"));
    }
    let result = ExperimentResult::read_csv(&path)?;
    if result.is_empty() {
        return Err(ivpp::Error::Empty(format!("no rows in {}", path.display())).into());
    }
    Ok(result)
}

pub fn cmd_stats(cfg: &ExperimentConfig, results: Option<&Path>) -> Result<String> {
    let result = read_results(cfg, results)?;
    let report = StatReport::build(&result, &cfg.eval.metric, cfg.eval.alpha)?;
    let text = report.to_text();
    let dir = &cfg.out_dir;
    cfg.write_snapshot(dir)?;
    let json = report.to_json()?;
    fs::write(dir.join("stats.json"), json).map_err(|e| CliError::io(dir.join("stats.json"), e))?;
    fs::write(dir.join("stats.txt"), &text).map_err(|e| CliError::io(dir.join("stats.txt"), e))?;
    Ok(text)
}

/// Mean (std) tables per metric, one row per method, δ and weight flag.
pub fn cmd_report(cfg: &ExperimentConfig, results: Option<&Path>) -> Result<String> {
    let result = read_results(cfg, results)?;
    let mut text = String::new();
    for metric in result.metrics() {
        text.push_str(&result.summary_table(&metric)?);
        text.push('\n');
    }
    // Everything is rendered before the first write, so a failure leaves
    // no partial report behind.
    let dir = &cfg.out_dir;
    cfg.write_snapshot(dir)?;
    fs::write(dir.join("report.txt"), &text).map_err(|e| CliError::io(dir.join("report.txt"), e))?;
    Ok(text)
}
