//! End-to-end checks on small synthetic datasets.

use std::collections::BTreeSet;

use candle_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ivpp::augment::{default_policy, PreprocessSpec};
use ivpp::datamodel::{generate_synthetic, split_by_patient, Split, SyntheticConfig, Task, VideoRecord};
use ivpp::evalstats::{auc, label_efficiency, Condition, LabelEfficiencyConfig};
use ivpp::objectives::{Method, ObjectiveConfig};
use ivpp::sampler::{BmodeSource, IvppConfig};
use ivpp::train::pretrain::{prepare_view, stack_views, tensor_to_array};
use ivpp::train::{
    build_model, fine_tune, linear_eval, pretrain, pretraining_videos, Classifier, EvalSets, ModelSpec, PretrainJob,
    ProbeConfig, TrainConfig, Unfreeze,
};

fn small(n_patients: usize, frames: usize) -> SyntheticConfig {
    SyntheticConfig {
        n_patients,
        videos_per_patient: 2,
        frames_per_video: frames,
        ..SyntheticConfig::default()
    }
}

fn frames_with_labels(videos: &[&VideoRecord]) -> Vec<(usize, Vec<f64>)> {
    videos
        .iter()
        .flat_map(|v| {
            let frames = v.frames().unwrap();
            (0..frames.len())
                .map(|i| {
                    let pixels = frames[i].as_raw().iter().map(|&p| f64::from(p)).collect();
                    (v.frame_label(Task::Ab.name(), i).unwrap(), pixels)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn default_dataset_is_separable_by_nearest_centroid() {
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let splits = split_by_patient(&data.manifest, (0.6, 0.2, 0.2), 0).unwrap();
    let train = frames_with_labels(&splits.records(&data.manifest, &[Split::Train]));
    let test = frames_with_labels(&splits.records(&data.manifest, &[Split::Test]));
    let dim = train[0].1.len();
    let mut centroids = vec![vec![0.0; dim]; 2];
    let mut counts = [0usize; 2];
    for (c, x) in &train {
        counts[*c] += 1;
        for (m, v) in centroids[*c].iter_mut().zip(x) {
            *m += v;
        }
    }
    for (c, m) in centroids.iter_mut().enumerate() {
        m.iter_mut().for_each(|v| *v /= counts[c] as f64);
    }
    let dist = |x: &[f64], m: &[f64]| x.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let hits = test
        .iter()
        .filter(|(c, x)| usize::from(dist(x, &centroids[1]) < dist(x, &centroids[0])) == *c)
        .count();
    let accuracy = hits as f64 / test.len() as f64;
    assert!(accuracy > 0.95, "held-out centroid accuracy {accuracy}");
}

#[test]
fn untrained_random_heads_score_chance() {
    let data = generate_synthetic(&small(8, 20)).unwrap();
    let model = build_model(&ModelSpec::desk()).unwrap();
    let spec = PreprocessSpec::for_task(Task::Ab);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut views = Vec::new();
    let mut labels = Vec::new();
    for v in &data.manifest.records {
        for (i, f) in v.frames().unwrap().iter().enumerate().step_by(5) {
            views.push(prepare_view(f, None, &spec, &mut rng).unwrap());
            labels.push(v.frame_label(Task::Ab.name(), i).unwrap() == 1);
        }
    }
    assert!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
    let x = stack_views(&views).unwrap();
    // A head's sign is as likely as its negation, so the AUC averaged
    // over head seeds sits at chance.
    let mut total = 0.0;
    let heads = 16;
    let mut features: Option<Tensor> = None;
    for seed in 0..heads {
        let classifier = Classifier::from_model(&model, 2, seed).unwrap();
        assert_eq!(classifier.n_outputs(), 1);
        let f = features.get_or_insert_with(|| classifier.features(&x).unwrap());
        let logits = tensor_to_array(&classifier.head_forward(f).unwrap()).unwrap();
        total += auc(&logits.column(0).to_vec(), &labels).unwrap();
    }
    let mean = total / heads as f64;
    assert!((mean - 0.5).abs() <= 0.1, "mean random-head AUC {mean}");
}

#[test]
fn short_vicreg_run_lowers_the_loss() {
    let data = generate_synthetic(&small(10, 12)).unwrap();
    let splits = split_by_patient(&data.manifest, (0.6, 0.2, 0.2), 0).unwrap();
    let source = BmodeSource {
        videos: pretraining_videos(&data.manifest, &splits),
    };
    let job = PretrainJob {
        source: &source,
        ivpp: IvppConfig::bmode(0.0, false),
        method: Method::Vicreg,
        objective: ObjectiveConfig::default(),
        model: ModelSpec::desk(),
        train: TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::desk()
        },
        augment: default_policy(Task::Ab),
        preprocess: PreprocessSpec::for_task(Task::Ab),
    };
    let out = pretrain(&job, None).unwrap();
    assert_eq!(out.epochs.len(), 2);
    assert!(out.epochs[1].loss < out.epochs[0].loss, "{:?}", out.epochs);
}

#[test]
fn fine_tuning_keeps_up_with_the_linear_probe() {
    let data = generate_synthetic(&small(12, 24)).unwrap();
    let splits = split_by_patient(&data.manifest, (0.6, 0.2, 0.2), 1).unwrap();
    let sets = EvalSets::from_splits(&data.manifest, &splits);
    let model = build_model(&ModelSpec::desk()).unwrap();
    let cfg = ProbeConfig {
        epochs: 6,
        batch_size: 16,
        frame_stride: 3,
        ..ProbeConfig::default()
    };
    let linear = linear_eval(&model, &sets, Task::Ab, None, &cfg).unwrap().auc.unwrap();
    let tuned = fine_tune(&model, &sets, Task::Ab, None, Unfreeze::All, &cfg).unwrap().auc.unwrap();
    assert!(tuned >= linear - 0.02, "fine-tuned {tuned} vs linear {linear}");
}

#[test]
fn label_efficiency_fills_every_cell_once() {
    let data = generate_synthetic(&small(10, 40)).unwrap();
    let splits = split_by_patient(&data.manifest, (0.6, 0.2, 0.2), 0).unwrap();
    let mut spec = ModelSpec::tiny_cnn(8);
    spec.projector_widths = vec![16];
    let a = build_model(&spec).unwrap();
    let b = build_model(&ModelSpec { seed: 1, ..spec }).unwrap();
    let conditions = [
        Condition {
            method: Method::SimClr,
            delta: 0.0,
            sw: false,
            model: &a,
        },
        Condition {
            method: Method::SimClr,
            delta: 1.0,
            sw: true,
            model: &b,
        },
    ];
    let cfg = LabelEfficiencyConfig {
        n_subsets: 4,
        probe: ProbeConfig {
            epochs: 1,
            batch_size: 16,
            frame_stride: 4,
            ..ProbeConfig::default()
        },
        ..LabelEfficiencyConfig::default()
    };
    let result = label_efficiency(&data.manifest, &splits, &conditions, Task::Ab, None, &cfg).unwrap();
    for metric in ["accuracy", "auc"] {
        for (delta, sw) in [(0.0, false), (1.0, true)] {
            let cell = result.cell(Method::SimClr, delta, sw, metric);
            assert_eq!(cell.keys().copied().collect::<BTreeSet<_>>(), (0..4).collect(), "{metric} δ={delta}");
        }
    }
    assert_eq!(result.rows().len(), 2 * 4 * 2);
}
