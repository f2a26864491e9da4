//! Encoders, self-supervised pretraining and downstream evaluation.

pub mod checkpoint;
pub mod lars;
pub mod model;
pub mod params;
pub mod pretrain;
pub mod probe;
pub mod schedule;

pub use checkpoint::Checkpoint;
pub use lars::{Lars, LarsConfig};
pub use model::{build_model, Classifier, EncoderKind, ModelSpec, SslModel, Unfreeze};
pub use params::ParamStore;
pub use pretrain::{embed_frames, pretrain, pretraining_videos, EpochStats, PretrainJob, PretrainOutcome, TrainConfig};
pub use probe::{fine_tune, linear_eval, task_samples, EvalMetrics, EvalSets, FineTuner, ProbeConfig, Samples};
pub use schedule::lr_at;
