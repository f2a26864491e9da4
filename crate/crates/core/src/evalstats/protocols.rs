//! Cross-validation and label-efficiency protocols.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::mean_std;
use super::results::{ExperimentResult, ResultRow};
use crate::datamodel::{DatasetManifest, Split, SplitAssignment, Task, VideoRecord};
use crate::mmode::PleuralRoi;
use crate::objectives::Method;
use crate::train::model::{SslModel, Unfreeze};
use crate::train::probe::{fine_tune, EvalMetrics, EvalSets, ProbeConfig};
use crate::{Error, Result};

/// Per-fold accuracies with their mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl CvSummary {
    pub fn from_folds(fold_accuracies: Vec<f64>) -> Result<Self> {
        let (mean, std) = mean_std(&fold_accuracies)?;
        Ok(Self {
            fold_accuracies,
            mean,
            std,
        })
    }
}

/// Assigns each video to one of `k` folds.
///
/// Videos of one patient always share a fold. Patients are stratified by
/// the label of their first video for `task`: within each class, patients
/// are shuffled and dealt round-robin, continuing the deal across classes
/// so fold sizes stay balanced. Fails when some class has fewer than `k`
/// patients.
pub fn stratified_patient_folds(videos: &[&VideoRecord], task: Task, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument("k-fold needs k >= 2".into()));
    }
    let mut patient_class: BTreeMap<&str, usize> = BTreeMap::new();
    for v in videos {
        let label = v
            .label(task.name())
            .ok_or_else(|| Error::MissingLabels(format!("video {} has no {task} label", v.video_id)))?;
        patient_class.entry(v.patient_id.as_str()).or_insert(label);
    }
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (p, c) in &patient_class {
        by_class.entry(*c).or_default().push(p);
    }
    if let Some((c, ps)) = by_class.iter().find(|(_, ps)| ps.len() < k) {
        return Err(Error::InvalidArgument(format!(
            "class {c} has {} patients, too few for {k} stratified folds",
            ps.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut next = 0;
    for ps in by_class.values_mut() {
        ps.shuffle(&mut rng);
        for p in ps.iter() {
            fold_of.insert(p, next % k);
            next += 1;
        }
    }
    Ok(videos.iter().map(|v| fold_of[v.patient_id.as_str()]).collect())
}

/// Runs `evaluate(train, held_out)` for each of `k` stratified patient
/// folds and aggregates the per-fold accuracies it returns.
pub fn kfold_cv<'a, F>(videos: &[&'a VideoRecord], task: Task, k: usize, seed: u64, mut evaluate: F) -> Result<CvSummary>
where
    F: FnMut(&[&'a VideoRecord], &[&'a VideoRecord]) -> Result<f64>,
{
    let folds = stratified_patient_folds(videos, task, k, seed)?;
    let mut accs = Vec::with_capacity(k);
    for fold in 0..k {
        let (held, train): (Vec<_>, Vec<_>) = videos.iter().zip(&folds).partition(|(_, &f)| f == fold);
        let held: Vec<&VideoRecord> = held.into_iter().map(|(v, _)| *v).collect();
        let train: Vec<&VideoRecord> = train.into_iter().map(|(v, _)| *v).collect();
        let acc = evaluate(&train, &held)?;
        log::info!("fold {}/{k}: accuracy {acc:.4}", fold + 1);
        accs.push(acc);
    }
    CvSummary::from_folds(accs)
}

/// The POCUS protocol: `k`-fold cross-validation, fine-tuning the last
/// three encoder blocks and a fresh head in every fold.
///
/// The held-out fold is the one scored, so no epoch selection happens on
/// it; each fold keeps its final weights.
pub fn kfold_cv_pocus(
    model: &SslModel,
    manifest: &DatasetManifest,
    task: Task,
    k: usize,
    probe: &ProbeConfig,
) -> Result<CvSummary> {
    let videos: Vec<&VideoRecord> = manifest.records.iter().filter(|v| v.label(task.name()).is_some()).collect();
    if videos.is_empty() {
        return Err(Error::MissingLabels(format!("no video has a {task} label")));
    }
    let cfg = ProbeConfig {
        retain_final: true,
        ..probe.clone()
    };
    kfold_cv(&videos, task, k, probe.seed, |train, held| {
        let sets = EvalSets {
            train: train.to_vec(),
            validation: Vec::new(),
            test: held.to_vec(),
        };
        Ok(fine_tune(model, &sets, task, None, Unfreeze::LastK(3), &cfg)?.accuracy)
    })
}

/// Splits the training patients into `n_subsets` disjoint groups
/// (shuffled, then dealt round-robin). Returns patient ids per subset.
pub fn partition_patients(splits: &SplitAssignment, n_subsets: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if n_subsets == 0 {
        return Err(Error::InvalidArgument("n_subsets must be > 0".into()));
    }
    let mut patients: Vec<String> = splits.patients(Split::Train).into_iter().map(str::to_string).collect();
    if patients.len() < n_subsets {
        return Err(Error::InsufficientPatients {
            needed: n_subsets,
            found: patients.len(),
        });
    }
    patients.sort();
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); n_subsets];
    for (i, p) in patients.into_iter().enumerate() {
        out[i % n_subsets].push(p);
    }
    for s in &mut out {
        s.sort();
    }
    Ok(out)
}

/// One pretrained model to evaluate, tagged with its pretraining condition.
pub struct Condition<'a> {
    pub method: Method,
    pub delta: f64,
    pub sw: bool,
    pub model: &'a SslModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEfficiencyConfig {
    pub n_subsets: usize,
    pub unfreeze: Unfreeze,
    pub probe: ProbeConfig,
    /// Seed of the patient partition; shared by every condition.
    pub partition_seed: u64,
}

impl Default for LabelEfficiencyConfig {
    fn default() -> Self {
        Self {
            n_subsets: 20,
            unfreeze: Unfreeze::All,
            probe: ProbeConfig::default(),
            partition_seed: 0,
        }
    }
}

fn metric_rows(c: &Condition, subset: usize, m: &EvalMetrics) -> Vec<ResultRow> {
    let row = |metric: &str, value: f64| ResultRow {
        method: c.method,
        delta: c.delta,
        sw: c.sw,
        subset,
        metric: metric.to_string(),
        value,
    };
    let mut rows = vec![row("accuracy", m.accuracy)];
    if let Some(a) = m.auc {
        rows.push(row("auc", a));
    }
    rows
}

/// Fine-tunes every condition on each training-patient subset and scores
/// it on the test split. All conditions see the same subsets, so results
/// are paired by subset id.
pub fn label_efficiency(
    manifest: &DatasetManifest,
    splits: &SplitAssignment,
    conditions: &[Condition],
    task: Task,
    rois: Option<&BTreeMap<String, PleuralRoi>>,
    cfg: &LabelEfficiencyConfig,
) -> Result<ExperimentResult> {
    let subsets = partition_patients(splits, cfg.n_subsets, cfg.partition_seed)?;
    let probe = ProbeConfig {
        retain_final: true,
        ..cfg.probe.clone()
    };
    let all = EvalSets::from_splits(manifest, splits);
    let mut result = ExperimentResult::new();
    for c in conditions {
        for (s, patients) in subsets.iter().enumerate() {
            let sets = EvalSets {
                train: all.train.iter().copied().filter(|v| patients.contains(&v.patient_id)).collect(),
                validation: Vec::new(),
                test: all.test.clone(),
            };
            let m = fine_tune(c.model, &sets, task, rois, cfg.unfreeze, &probe)?;
            log::info!(
                "{} delta={} sw={} subset {s}: accuracy {:.4} auc {:?}",
                c.method,
                c.delta,
                c.sw,
                m.accuracy,
                m.auc
            );
            for row in metric_rows(c, s, &m) {
                result.push(row)?;
            }
        }
    }
    Ok(result)
}
