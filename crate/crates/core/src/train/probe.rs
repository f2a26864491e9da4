//! Linear-probe and fine-tuning evaluation.
//!
//! Samples are frames (B-mode tasks, using per-frame labels when the
//! manifest provides them) or M-mode images at the brightest pleural
//! columns (LS). The validation split selects the epoch whose weights are
//! kept: AUC for binary tasks, accuracy otherwise.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{linear, AdamW, Module, Optimizer, ParamsAdamW};
use image::GrayImage;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Classifier, SslModel, Unfreeze};
use super::params::ParamStore;
use super::pretrain::{prepare_view, stack_views, tensor_to_array};
use crate::augment::{default_policy, PreprocessSpec};
use crate::datamodel::{DatasetManifest, Split, SplitAssignment, Task, VideoRecord};
use crate::evalstats::metrics::{accuracy, auc};
use crate::mmode::{self, candidate_columns, extract_mmode_frames, PleuralRoi, STANDARD_SIZE};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub head_lr: f64,
    /// Learning rate for unfrozen encoder blocks during fine-tuning.
    pub encoder_lr: f64,
    /// Use every `frame_stride`-th frame of each video.
    pub frame_stride: usize,
    /// M-mode samples per video (brightest candidate columns first).
    pub columns_per_video: usize,
    pub segment_seconds: f64,
    pub seed: u64,
    /// Keep the weights from the last epoch instead of the best validation
    /// epoch.
    pub retain_final: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            head_lr: 1e-3,
            encoder_lr: 1e-4,
            frame_stride: 1,
            columns_per_video: 4,
            segment_seconds: mmode::DEFAULT_SEGMENT_SECONDS,
            seed: 0,
            retain_final: false,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.frame_stride == 0 || self.columns_per_video == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch_size, frame_stride and columns_per_video must be > 0".into(),
            ));
        }
        if !(self.head_lr > 0.0 && self.encoder_lr >= 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Videos of the train, validation and test splits.
#[derive(Debug, Clone, Default)]
pub struct EvalSets<'a> {
    pub train: Vec<&'a VideoRecord>,
    pub validation: Vec<&'a VideoRecord>,
    pub test: Vec<&'a VideoRecord>,
}

impl<'a> EvalSets<'a> {
    pub fn from_splits(manifest: &'a DatasetManifest, splits: &SplitAssignment) -> Self {
        Self {
            train: splits.records(manifest, &[Split::Train]),
            validation: splits.records(manifest, &[Split::Validation]),
            test: splits.records(manifest, &[Split::Test]),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Samples {
    pub images: Vec<GrayImage>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Labelled evaluation samples for `task`.
pub fn task_samples(
    videos: &[&VideoRecord],
    task: Task,
    rois: Option<&BTreeMap<String, PleuralRoi>>,
    cfg: &ProbeConfig,
) -> Result<Samples> {
    let mut out = Samples::default();
    for video in videos {
        if task.is_mmode() {
            let label = video
                .label(task.name())
                .ok_or_else(|| Error::MissingLabels(format!("video {} has no {task} label", video.video_id)))?;
            let roi = rois
                .and_then(|r| r.get(&video.video_id))
                .ok_or_else(|| Error::InvalidArgument(format!("no pleural ROI for video {}", video.video_id)))?;
            let std_video = mmode::standardize_video(video, STANDARD_SIZE)?;
            let n = std_video.num_frames()?;
            let len = mmode::segment_len(video.fps, cfg.segment_seconds).clamp(1, n);
            for &x in candidate_columns(&std_video, *roi)?.iter().take(cfg.columns_per_video) {
                out.images.push(extract_mmode_frames(&std_video, x, 0, len)?.pixels);
                out.labels.push(label);
            }
        } else {
            let frames = video.frames()?;
            for i in (0..frames.len()).step_by(cfg.frame_stride) {
                let label = video.frame_label(task.name(), i).ok_or_else(|| {
                    Error::MissingLabels(format!("video {} frame {i} has no {task} label", video.video_id))
                })?;
                out.images.push(frames[i].clone());
                out.labels.push(label);
            }
        }
    }
    if let Some(&bad) = out.labels.iter().find(|&&l| l >= task.num_classes()) {
        return Err(Error::UnknownLabel {
            task: task.name().to_string(),
            class: bad.to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    /// Binary tasks only.
    pub auc: Option<f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub validation_score: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Accuracy and (binary) AUC of `logits` against `labels`.
pub fn score_logits(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Option<f64>)> {
    if logits.ncols() == 1 {
        let scores: Vec<f64> = logits.column(0).to_vec();
        let pred: Vec<usize> = scores.iter().map(|&s| usize::from(s > 0.0)).collect();
        let truth: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        let a = auc(&scores, &truth).ok();
        Ok((accuracy(&pred, labels)?, a))
    } else {
        let pred: Vec<usize> = logits
            .outer_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0
            })
            .collect();
        Ok((accuracy(&pred, labels)?, None))
    }
}

/// Model-selection score: AUC when defined, accuracy otherwise.
fn selection_score(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let (acc, a) = score_logits(logits, labels)?;
    Ok(a.unwrap_or(acc))
}

fn classification_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let dev = Device::Cpu;
    if logits.dim(1)? == 1 {
        let t: Vec<f32> = labels.iter().map(|&l| l as f32).collect();
        let target = Tensor::from_vec(t, (labels.len(), 1), &dev)?;
        Ok(candle_nn::loss::binary_cross_entropy_with_logit(logits, &target)?)
    } else {
        let t: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
        Ok(candle_nn::loss::cross_entropy(logits, &Tensor::new(t.as_slice(), &dev)?)?)
    }
}

fn adam(vars: Vec<Var>, lr: f64) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr,
            weight_decay: 0.0,
            ..ParamsAdamW::default()
        },
    )?)
}

fn check_sets(train: &Samples, validation: &Samples, test: &Samples) -> Result<()> {
    for (name, s) in [("train", train), ("validation", validation), ("test", test)] {
        if s.is_empty() {
            return Err(Error::MissingLabels(format!("no labelled {name} samples")));
        }
    }
    Ok(())
}

fn representations(classifier: &Classifier, images: &[GrayImage], spec: &PreprocessSpec, batch: usize) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut parts = Vec::new();
    for chunk in images.chunks(batch.max(1)) {
        let views = chunk
            .iter()
            .map(|f| prepare_view(f, None, spec, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        parts.push(tensor_to_array(&classifier.features(&stack_views(&views)?)?)?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn to_tensor(a: &Array2<f64>) -> Result<Tensor> {
    Ok(Tensor::from_vec(a.iter().map(|&v| v as f32).collect::<Vec<_>>(), a.dim(), &Device::Cpu)?)
}

fn rows(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(0), idx)
}

/// Trains a linear head on frozen representations of `model`.
pub fn linear_eval(
    model: &SslModel,
    sets: &EvalSets,
    task: Task,
    rois: Option<&BTreeMap<String, PleuralRoi>>,
    cfg: &ProbeConfig,
) -> Result<EvalMetrics> {
    cfg.validate()?;
    let spec = PreprocessSpec::for_task(task);
    let train = task_samples(&sets.train, task, rois, cfg)?;
    let val = task_samples(&sets.validation, task, rois, cfg)?;
    let test = task_samples(&sets.test, task, rois, cfg)?;
    check_sets(&train, &val, &test)?;

    let classifier = Classifier::from_model(model, task.num_classes(), cfg.seed)?;
    let mut ftr = representations(&classifier, &train.images, &spec, cfg.batch_size)?;
    let mut fval = representations(&classifier, &val.images, &spec, cfg.batch_size)?;
    let mut fte = representations(&classifier, &test.images, &spec, cfg.batch_size)?;

    // Standardize with training statistics.
    let mean = ftr.mean_axis(Axis(0)).expect("non-empty");
    let std = ftr.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-6));
    for f in [&mut ftr, &mut fval, &mut fte] {
        *f = (&*f - &mean) / &std;
    }
    let (xval, xte) = (to_tensor(&fval)?, to_tensor(&fte)?);

    let store = ParamStore::new(cfg.seed);
    let head = linear(ftr.ncols(), classifier.n_outputs(), store.var_builder().pp("head"))?;
    let mut opt = adam(store.vars().into_iter().map(|(_, v)| v).collect(), cfg.head_lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::NEG_INFINITY, 0, store.snapshot()?);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = to_tensor(&rows(&ftr, chunk))?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let loss = classification_loss(&head.forward(&x)?, &labels)?;
            opt.backward_step(&loss)?;
        }
        let score = selection_score(&tensor_to_array(&head.forward(&xval)?)?, &val.labels)?;
        if cfg.retain_final || score > best.0 {
            best = (score, epoch, store.snapshot()?);
        }
    }
    store.load(&best.2, false)?;
    let (acc, a) = score_logits(&tensor_to_array(&head.forward(&xte)?)?, &test.labels)?;
    Ok(EvalMetrics {
        accuracy: acc,
        auc: a,
        best_epoch: best.1,
        validation_score: best.0,
        n_train: train.len(),
        n_test: test.len(),
    })
}

fn predict(classifier: &Classifier, images: &[GrayImage], spec: &PreprocessSpec, batch: usize) -> Result<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut parts = Vec::new();
    for chunk in images.chunks(batch.max(1)) {
        let views = chunk
            .iter()
            .map(|f| prepare_view(f, None, spec, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let logits = classifier.forward_t(&stack_views(&views)?, false, Unfreeze::None)?;
        parts.push(tensor_to_array(&logits)?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// A classifier being fine-tuned, exposed for step-level inspection.
pub struct FineTuner {
    pub classifier: Classifier,
    unfreeze: Unfreeze,
    head_opt: AdamW,
    encoder_opt: Option<AdamW>,
}

impl FineTuner {
    pub fn new(model: &SslModel, n_classes: usize, unfreeze: Unfreeze, cfg: &ProbeConfig) -> Result<Self> {
        let classifier = Classifier::from_model(model, n_classes, cfg.seed)?;
        let (head, enc): (Vec<_>, Vec<_>) = classifier
            .store()
            .trainable(&classifier.trainable_prefixes(unfreeze))
            .into_iter()
            .partition(|(k, _)| k.starts_with(Classifier::HEAD_PREFIX));
        let head_opt = adam(head.into_iter().map(|(_, v)| v).collect(), cfg.head_lr)?;
        let encoder_opt = if enc.is_empty() {
            None
        } else {
            Some(adam(enc.into_iter().map(|(_, v)| v).collect(), cfg.encoder_lr)?)
        };
        Ok(Self {
            classifier,
            unfreeze,
            head_opt,
            encoder_opt,
        })
    }

    /// One optimization step on a prepared `(N, 3, H, W)` batch.
    pub fn step(&mut self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let logits = self.classifier.forward_t(x, true, self.unfreeze)?;
        let loss = classification_loss(&logits, labels)?;
        let grads = loss.backward()?;
        self.head_opt.step(&grads)?;
        if let Some(opt) = self.encoder_opt.as_mut() {
            opt.step(&grads)?;
        }
        Ok(f64::from(loss.to_dtype(DType::F32)?.to_scalar::<f32>()?))
    }
}

/// Trains the head together with the unfrozen encoder blocks, with
/// augmentation on the training samples.
pub fn fine_tune(
    model: &SslModel,
    sets: &EvalSets,
    task: Task,
    rois: Option<&BTreeMap<String, PleuralRoi>>,
    unfreeze: Unfreeze,
    cfg: &ProbeConfig,
) -> Result<EvalMetrics> {
    cfg.validate()?;
    let spec = PreprocessSpec::for_task(task);
    let policy = default_policy(task);
    let train = task_samples(&sets.train, task, rois, cfg)?;
    let val = task_samples(&sets.validation, task, rois, cfg)?;
    let test = task_samples(&sets.test, task, rois, cfg)?;
    if train.is_empty() || test.is_empty() || (val.is_empty() && !cfg.retain_final) {
        check_sets(&train, &val, &test)?;
    }

    let mut tuner = FineTuner::new(model, task.num_classes(), unfreeze, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, BTreeMap<String, Tensor>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            // Batch norm needs more than one sample per batch.
            if chunk.len() < 2 {
                continue;
            }
            let views = chunk
                .iter()
                .map(|&i| prepare_view(&train.images[i], Some(&policy), &spec, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let loss = tuner.step(&stack_views(&views)?, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: epoch,
                    detail: "fine-tuning loss".into(),
                });
            }
        }
        if cfg.retain_final {
            continue;
        }
        let score = selection_score(&predict(&tuner.classifier, &val.images, &spec, cfg.batch_size)?, &val.labels)?;
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, epoch, tuner.classifier.store().snapshot()?));
        }
    }
    let (validation_score, best_epoch) = match best {
        Some((s, e, weights)) => {
            tuner.classifier.store().load(&weights, false)?;
            (s, e)
        }
        None => (f64::NAN, cfg.epochs),
    };
    let (acc, a) = score_logits(&predict(&tuner.classifier, &test.images, &spec, cfg.batch_size)?, &test.labels)?;
    Ok(EvalMetrics {
        accuracy: acc,
        auc: a,
        best_epoch,
        validation_score,
        n_train: train.len(),
        n_test: test.len(),
    })
}
