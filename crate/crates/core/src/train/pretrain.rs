//! Self-supervised pretraining loop.
//!
//! A producer thread samples pair batches, resizes, augments and normalizes
//! both views, and hands them over a bounded channel. The training loop
//! embeds each view batch separately, evaluates the objective and its
//! embedding gradients in `f64`, backpropagates them through the network and
//! takes a LARS step at the scheduled learning rate.

use std::path::Path;
use std::sync::mpsc::sync_channel;

use candle_core::{Device, Tensor};
use image::GrayImage;
use log::{info, warn};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lars::{Lars, LarsConfig};
use super::model::{build_model, ModelSpec, SslModel};
use super::schedule::lr_at;
use crate::augment::{augment, normalize, resize_to, AugmentPolicy, PreprocessSpec};
use crate::datamodel::{DatasetManifest, Split, SplitAssignment, VideoRecord};
use crate::image::Image;
use crate::objectives::{self, Method, ObjectiveConfig};
use crate::sampler::{make_batch, IvppConfig, PairSource, VideoCycler};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Defaults to `0.2 · batch_size / 256` when unset.
    pub base_lr: Option<f64>,
    pub lars: LarsConfig,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Prepared batches buffered between the producer and the training loop.
    pub queue_depth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::protocol()
    }
}

impl TrainConfig {
    /// Full-scale settings: 500 epochs, batch 384, 10 warmup epochs.
    pub fn protocol() -> Self {
        Self {
            epochs: 500,
            batch_size: 384,
            base_lr: None,
            lars: LarsConfig::default(),
            warmup_epochs: 10,
            seed: 0,
            queue_depth: 4,
        }
    }

    /// CPU-sized settings for the tiny encoder: batch 32, 10 epochs. With
    /// so few steps the default trust coefficient barely moves the weights,
    /// so the trust coefficient is raised to 1 and the learning rate set to
    /// 0.01. Biases and normalization parameters step at 2% of that rate.
    pub fn desk() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            base_lr: Some(0.01),
            lars: LarsConfig {
                trust_coefficient: 1.0,
                excluded_lr_scale: 0.02,
                ..LarsConfig::default()
            },
            warmup_epochs: 1,
            seed: 0,
            queue_depth: 4,
        }
    }

    pub fn lr(&self) -> f64 {
        self.base_lr.unwrap_or(0.2 * self.batch_size as f64 / 256.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch_size must be >= 2".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::InvalidArgument(format!(
                "warmup_epochs ({}) must be less than epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.lr() > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Videos used for pretraining: the training split plus unlabelled videos.
pub fn pretraining_videos<'a>(manifest: &'a DatasetManifest, splits: &SplitAssignment) -> Vec<&'a VideoRecord> {
    splits.records(manifest, &[Split::Train, Split::Unlabelled])
}

/// Resizes to the preprocessing size, optionally augments, and normalizes.
pub fn prepare_view<R: Rng + ?Sized>(
    frame: &GrayImage,
    policy: Option<&AugmentPolicy>,
    spec: &PreprocessSpec,
    rng: &mut R,
) -> Result<Array3<f32>> {
    let img = resize_to(&Image::from_gray(frame), spec);
    let img = match policy {
        Some(p) => augment(&img, p, rng)?,
        None => img,
    };
    Ok(normalize(&img, spec))
}

/// Stacks prepared views into an `(N, 3, H, W)` tensor.
pub fn stack_views(views: &[Array3<f32>]) -> Result<Tensor> {
    let Some(first) = views.first() else {
        return Err(Error::Empty("no views to stack".into()));
    };
    let (c, h, w) = first.dim();
    let mut data = Vec::with_capacity(views.len() * c * h * w);
    for v in views {
        if v.dim() != (c, h, w) {
            return Err(Error::InvalidArgument("views differ in shape".into()));
        }
        data.extend(v.iter().copied());
    }
    Ok(Tensor::from_vec(data, (views.len(), c, h, w), &Device::Cpu)?)
}

pub fn tensor_to_array(t: &Tensor) -> Result<Array2<f64>> {
    let (n, d) = t.dims2()?;
    let v = t.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Ok(Array2::from_shape_vec((n, d), v).expect("shape matches element count"))
}

fn array_to_tensor(a: &Array2<f64>) -> Result<Tensor> {
    let v: Vec<f32> = a.iter().map(|&x| x as f32).collect();
    Ok(Tensor::from_vec(v, a.dim(), &Device::Cpu)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the epoch's non-skipped steps.
    pub loss: f64,
    pub steps: usize,
    pub skipped: usize,
    /// Learning rate at the epoch's last step.
    pub lr: f64,
}

/// Everything needed for one pretraining run.
pub struct PretrainJob<'a> {
    pub source: &'a dyn PairSource,
    pub ivpp: IvppConfig,
    pub method: Method,
    pub objective: ObjectiveConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub augment: AugmentPolicy,
    pub preprocess: PreprocessSpec,
}

pub struct PretrainOutcome {
    pub model: SslModel,
    pub epochs: Vec<EpochStats>,
    pub step_losses: Vec<f64>,
    pub steps: u64,
}

struct PreparedBatch {
    a: Tensor,
    b: Tensor,
    weights: Vec<f64>,
}

fn produce(
    job: &PretrainJob,
    cycler: &mut VideoCycler,
    rng: &mut ChaCha8Rng,
) -> Result<PreparedBatch> {
    let batch = make_batch(job.source, cycler, &job.ivpp, job.train.batch_size, rng)?;
    let mut va = Vec::with_capacity(batch.len());
    let mut vb = Vec::with_capacity(batch.len());
    for (a, b) in batch.views_a.iter().zip(&batch.views_b) {
        va.push(prepare_view(a, Some(&job.augment), &job.preprocess, rng)?);
        vb.push(prepare_view(b, Some(&job.augment), &job.preprocess, rng)?);
    }
    Ok(PreparedBatch {
        a: stack_views(&va)?,
        b: stack_views(&vb)?,
        weights: batch.weights,
    })
}

/// Runs pretraining; when `log_path` is given, per-epoch statistics are
/// appended to that CSV file as training progresses.
pub fn pretrain(job: &PretrainJob, log_path: Option<&Path>) -> Result<PretrainOutcome> {
    job.train.validate()?;
    job.ivpp.validate()?;
    job.objective.validate()?;
    job.augment.validate()?;
    if job.source.is_empty() {
        return Err(Error::Empty("no pretraining videos".into()));
    }

    let model = build_model(&job.model)?;
    let trainable = model
        .store()
        .trainable(&["encoder.".to_string(), "projector.".to_string()])
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    let mut lars = Lars::new(trainable, job.train.lars);

    let steps_per_epoch = job.source.len().div_ceil(job.train.batch_size).max(1);
    let total_steps = steps_per_epoch * job.train.epochs;
    let warmup_steps = steps_per_epoch * job.train.warmup_epochs;
    let base_lr = job.train.lr();
    let weighted = job.ivpp.weights_active();

    let mut log = match log_path {
        Some(p) => Some(csv::Writer::from_path(p)?),
        None => None,
    };

    let mut epochs = Vec::with_capacity(job.train.epochs);
    let mut step_losses = Vec::with_capacity(total_steps);
    let result = std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = sync_channel::<Result<PreparedBatch>>(job.train.queue_depth.max(1));
        scope.spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(job.train.seed);
            rng.set_stream(1);
            let mut cycler = VideoCycler::new(job.source.len());
            for _ in 0..total_steps {
                let item = produce(job, &mut cycler, &mut rng);
                let failed = item.is_err();
                if tx.send(item).is_err() || failed {
                    break;
                }
            }
        });

        let mut step = 0;
        for epoch in 0..job.train.epochs {
            let (mut sum, mut done, mut skipped, mut lr) = (0.0, 0, 0, 0.0);
            for _ in 0..steps_per_epoch {
                let batch = rx
                    .recv()
                    .map_err(|_| Error::InvalidArgument("data pipeline stopped".into()))??;
                lr = lr_at(step, total_steps, warmup_steps, base_lr)?;
                step += 1;
                if batch.weights.iter().all(|&w| w == 0.0) {
                    warn!("step {step}: every pair weight is zero, skipping");
                    skipped += 1;
                    continue;
                }
                let za = model.embed(&batch.a, true)?;
                let zb = model.embed(&batch.b, true)?;
                let out = objectives::compute(
                    job.method,
                    &job.objective,
                    tensor_to_array(&za)?.view(),
                    tensor_to_array(&zb)?.view(),
                    &batch.weights,
                    weighted,
                )?;
                let loss = out.report.total;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step,
                        detail: format!("{} terms {:?}", job.method, out.report.terms),
                    });
                }
                let surrogate =
                    (za.mul(&array_to_tensor(&out.grad1)?)?.sum_all()? + zb.mul(&array_to_tensor(&out.grad2)?)?.sum_all()?)?;
                let grads = surrogate.backward()?;
                lars.step(&grads, lr)?;
                step_losses.push(loss);
                sum += loss;
                done += 1;
            }
            let stats = EpochStats {
                epoch: epoch + 1,
                loss: if done > 0 { sum / done as f64 } else { f64::NAN },
                steps: done,
                skipped,
                lr,
            };
            info!("epoch {} loss {:.5} lr {:.4}", stats.epoch, stats.loss, stats.lr);
            if let Some(w) = log.as_mut() {
                w.serialize(&stats)?;
                w.flush().map_err(|e| Error::io(log_path.unwrap_or(Path::new("")), e))?;
            }
            epochs.push(stats);
        }
        drop(rx);
        Ok(())
    });
    result?;

    Ok(PretrainOutcome {
        model,
        epochs,
        step_losses,
        steps: total_steps as u64,
    })
}

/// Projected embeddings of `frames` (no augmentation, inference mode).
pub fn embed_frames(model: &SslModel, frames: &[GrayImage], spec: &PreprocessSpec, batch: usize) -> Result<Array2<f64>> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in frames.chunks(batch.max(1)) {
        let views = chunk
            .iter()
            .map(|f| prepare_view(f, None, spec, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        rows.push(tensor_to_array(&model.embed(&stack_views(&views)?, false)?)?);
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))
}
