//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the criteria execute in
//! order and report on stdout. Criterion 8 needs user-supplied public data
//! and runs only when `IVPP_POCUS_MANIFEST` is set. Failed criteria are
//! printed but only fail the process when `IVPP_ACCEPTANCE_STRICT` is set.

use std::collections::BTreeMap;
use std::time::Instant;

use image::GrayImage;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use ivpp::augment::{default_policy, PreprocessSpec};
use ivpp::datamodel::{generate_synthetic, split_by_patient, SyntheticConfig, Task, VideoRecord};
use ivpp::evalstats::{
    auc, bonferroni, paired_t_test, posthoc_paired_tests, rm_anova_two_way, rm_anova_two_way_cells, ExperimentResult,
    PairedTest, ResultRow,
};
use ivpp::mmode::{candidate_columns, extract_mmode, PleuralRoi};
use ivpp::objectives::{
    barlow_with_grad, simclr_with_grad, Method, vicreg_with_grad, weighted_moments, InvarianceScale, LossAndGrad,
    ObjectiveConfig, VicregParams,
};
use ivpp::sampler::{pair_weight, sample_bmode_pair, sample_column_pair, BmodeSource, IvppConfig};
use ivpp::train::pretrain::embed_frames;
use ivpp::train::{
    build_model, linear_eval, pretrain, pretraining_videos, EvalSets, ModelSpec, PretrainJob, ProbeConfig, TrainConfig,
};

/// Outcome of one criterion: pass flag plus a one-line summary.
struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

// ------------------------------------------------------------ criterion 1

/// Unweighted NT-Xent over 2N views, written over the full similarity
/// matrix with row-wise log-sum-exp.
fn ntxent_reference(z1: ArrayView2<f64>, z2: ArrayView2<f64>, tau: f64) -> f64 {
    let n = z1.nrows();
    let views: Vec<Vec<f64>> = z1.outer_iter().chain(z2.outer_iter()).map(|r| r.to_vec()).collect();
    let unit: Vec<Vec<f64>> = views
        .iter()
        .map(|v| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    let sim = |a: usize, b: usize| unit[a].iter().zip(&unit[b]).map(|(x, y)| x * y).sum::<f64>() / tau;
    let mut total = 0.0;
    for a in 0..2 * n {
        let pos = (a + n) % (2 * n);
        let logits: Vec<f64> = (0..2 * n).filter(|&b| b != a).map(|b| sim(a, b)).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        total += lse - sim(a, pos);
    }
    total / (2 * n) as f64
}

/// Weighted NT-Xent by explicit loops over pairs and candidates.
fn ntxent_loop_oracle(z1: ArrayView2<f64>, z2: ArrayView2<f64>, w: &[f64], tau: f64) -> f64 {
    let n = z1.nrows();
    let row = |k: usize| -> Vec<f64> {
        if k < n {
            z1.row(k).to_vec()
        } else {
            z2.row(k - n).to_vec()
        }
    };
    let cos = |a: usize, b: usize| {
        let (x, y) = (row(a), row(b));
        let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
        let nx: f64 = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|p| p * p).sum::<f64>().sqrt();
        dot / (nx * ny)
    };
    // ℓ = ln Σ_{k≠a} exp((s_ak − s_ap)/τ), written as ln(1 + Σ_{k≠a,p} ...)
    // so near-zero losses keep their relative precision.
    let ell = |a: usize, p: usize| {
        let pos = cos(a, p);
        let mut rest = 0.0;
        for k in 0..2 * n {
            if k != a && k != p {
                rest += ((cos(a, k) - pos) / tau).exp();
            }
        }
        rest.ln_1p()
    };
    let mut total = 0.0;
    for i in 0..n {
        total += w[i] * 0.5 * (ell(i, i + n) + ell(i + n, i));
    }
    total / n as f64
}

/// Original VICReg (mean-squared invariance, unbiased variance).
fn vicreg_reference(z1: ArrayView2<f64>, z2: ArrayView2<f64>, p: &VicregParams) -> f64 {
    let (n, d) = z1.dim();
    let mse = (&z1 - &z2).mapv(|v| v * v).sum() / (n * d) as f64;
    let branch = |z: ArrayView2<f64>| {
        let mean = z.mean_axis(ndarray::Axis(0)).unwrap();
        let x = &z - &mean;
        let cov = x.t().dot(&x) / (n as f64 - 1.0);
        let v = (0..d).map(|j| (p.gamma - (cov[[j, j]] + p.epsilon).sqrt()).max(0.0)).sum::<f64>() / d as f64;
        let mut c = 0.0;
        for a in 0..d {
            for b in 0..d {
                if a != b {
                    c += cov[[a, b]].powi(2);
                }
            }
        }
        (v, c / d as f64)
    };
    let (v1, c1) = branch(z1);
    let (v2, c2) = branch(z2);
    p.lambda * mse + p.mu * (v1 + v2) + p.nu * (c1 + c2)
}

/// Weighted VICReg by scalar loops.
fn vicreg_loop_oracle(z1: ArrayView2<f64>, z2: ArrayView2<f64>, w: &[f64], p: &VicregParams) -> f64 {
    let (n, d) = z1.dim();
    let mut s = 0.0;
    for i in 0..n {
        let mut sq = 0.0;
        for j in 0..d {
            sq += (z1[[i, j]] - z2[[i, j]]).powi(2);
        }
        s += w[i] * sq;
    }
    s /= match p.invariance {
        InvarianceScale::Sum => n as f64,
        InvarianceScale::Mean => (n * d) as f64,
    };
    let branch = |z: ArrayView2<f64>| {
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                mean[j] += z[[i, j]] / n as f64;
            }
        }
        let cov = |a: usize, b: usize| {
            let mut c = 0.0;
            for i in 0..n {
                c += (z[[i, a]] - mean[a]) * (z[[i, b]] - mean[b]);
            }
            c / (n as f64 - 1.0)
        };
        let mut v = 0.0;
        let mut c = 0.0;
        for a in 0..d {
            v += (p.gamma - (cov(a, a) + p.epsilon).sqrt()).max(0.0);
            for b in 0..d {
                if a != b {
                    c += cov(a, b).powi(2);
                }
            }
        }
        (v / d as f64, c / d as f64)
    };
    let (v1, c1) = branch(z1);
    let (v2, c2) = branch(z2);
    p.lambda * s + p.mu * (v1 + v2) + p.nu * (c1 + c2)
}

/// Original Barlow Twins: batch-standardized views, C = Ẑ1ᵀẐ2 / N.
fn barlow_reference(z1: ArrayView2<f64>, z2: ArrayView2<f64>, lambda: f64, eps: f64) -> f64 {
    let n = z1.nrows() as f64;
    let standardize = |z: ArrayView2<f64>| {
        let mean = z.mean_axis(ndarray::Axis(0)).unwrap();
        let var = z.var_axis(ndarray::Axis(0), 0.0);
        (&z - &mean) / &var.mapv(|v| (v + eps).sqrt())
    };
    let c = standardize(z1).t().dot(&standardize(z2)) / n;
    let mut inv = 0.0;
    let mut red = 0.0;
    for ((a, b), v) in c.indexed_iter() {
        if a == b {
            inv += (1.0 - v).powi(2);
        } else {
            red += v * v;
        }
    }
    inv + lambda * red
}

/// Weighted Barlow Twins by scalar loops: C_W for the invariance term,
/// uniform C for redundancy.
fn barlow_loop_oracle(z1: ArrayView2<f64>, z2: ArrayView2<f64>, w: &[f64], lambda: f64, eps: f64) -> f64 {
    let (n, d) = z1.dim();
    let corr = |w: &[f64], a: usize, b: usize| {
        let total: f64 = w.iter().sum();
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..n {
            m1 += w[i] * z1[[i, a]] / total;
            m2 += w[i] * z2[[i, b]] / total;
        }
        let mut v1 = 0.0;
        let mut v2 = 0.0;
        for i in 0..n {
            v1 += w[i] * (z1[[i, a]] - m1).powi(2) / total;
            v2 += w[i] * (z2[[i, b]] - m2).powi(2) / total;
        }
        let mut c = 0.0;
        for i in 0..n {
            c += w[i] * (z1[[i, a]] - m1) / (v1 + eps).sqrt() * (z2[[i, b]] - m2) / (v2 + eps).sqrt();
        }
        c / total
    };
    let ones = vec![1.0; n];
    let mut inv = 0.0;
    let mut red = 0.0;
    for a in 0..d {
        inv += (1.0 - corr(w, a, a)).powi(2);
        for b in 0..d {
            if a != b {
                red += corr(&ones, a, b).powi(2);
            }
        }
    }
    inv + lambda * red
}

/// Worst relative error between analytic gradients and the fourth-order
/// central difference, over coordinates with magnitude above 1e-6.
fn fd_check(z1: &Array2<f64>, z2: &Array2<f64>, f: &dyn Fn(&Array2<f64>, &Array2<f64>) -> LossAndGrad) -> f64 {
    let h = 1e-4;
    let base = f(z1, z2);
    let mut worst: f64 = 0.0;
    for branch in 0..2 {
        let analytic = if branch == 0 { &base.grad1 } else { &base.grad2 };
        for idx in ndarray::indices(z1.dim()) {
            let at = |step: f64| {
                let (mut a, mut b) = (z1.clone(), z2.clone());
                if branch == 0 {
                    a[idx] += step;
                } else {
                    b[idx] += step;
                }
                f(&a, &b).report.total
            };
            let numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            let a = analytic[idx];
            if a.abs().max(numeric.abs()) > 1e-6 {
                worst = worst.max(rel_err(a, numeric));
            }
        }
    }
    worst
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = ObjectiveConfig::default();
    let tau = cfg.temperature;
    let vp = VicregParams::from_config(&cfg, false);
    let (bl, eps) = (cfg.barlow_lambda, cfg.epsilon);
    let (mut uniform, mut looped, mut grad) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..100 {
        let n = [2, 4, 8][k % 3];
        let d = [1, 4, 16][(k / 3) % 3];
        let z1 = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        let z2 = &z1 + &Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        if k % 5 == 0 {
            w[0] = 0.0;
        }
        let ones = vec![1.0; n];

        let s = |a: &Array2<f64>, b: &Array2<f64>, w: &[f64]| simclr_with_grad(a.view(), b.view(), w, tau).unwrap();
        let v = |a: &Array2<f64>, b: &Array2<f64>, w: &[f64]| vicreg_with_grad(a.view(), b.view(), w, &vp).unwrap();
        let b = |a: &Array2<f64>, c: &Array2<f64>, w: &[f64]| barlow_with_grad(a.view(), c.view(), w, bl, eps).unwrap();

        uniform = uniform
            .max(rel_err(s(&z1, &z2, &ones).report.total, ntxent_reference(z1.view(), z2.view(), tau)))
            .max(rel_err(v(&z1, &z2, &ones).report.total, vicreg_reference(z1.view(), z2.view(), &vp)))
            .max(rel_err(b(&z1, &z2, &ones).report.total, barlow_reference(z1.view(), z2.view(), bl, eps)));
        looped = looped
            .max(rel_err(s(&z1, &z2, &w).report.total, ntxent_loop_oracle(z1.view(), z2.view(), &w, tau)))
            .max(rel_err(v(&z1, &z2, &w).report.total, vicreg_loop_oracle(z1.view(), z2.view(), &w, &vp)))
            .max(rel_err(b(&z1, &z2, &w).report.total, barlow_loop_oracle(z1.view(), z2.view(), &w, bl, eps)));
        grad = grad
            .max(fd_check(&z1, &z2, &|a, c| s(a, c, &w)))
            .max(fd_check(&z1, &z2, &|a, c| v(a, c, &w)))
            .max(fd_check(&z1, &z2, &|a, c| b(a, c, &w)));
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        uniform <= 1e-6 && looped <= 1e-8 && grad <= 1e-4 && secs < 120.0,
        format!("uniform-reduction rel err {uniform:.1e} (≤1e-6), loop-oracle rel err {looped:.1e} (≤1e-8), FD gradient rel err {grad:.1e} (≤1e-4), {secs:.1}s"),
    )
}

// ------------------------------------------------------------ criterion 2

fn criterion_2() -> Verdict {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    check("w(0,0) = 1", pair_weight(0, 0).unwrap() == 1.0);
    check("w(15,15) = 0", pair_weight(15, 15).unwrap() == 0.0);
    check("w(0,15) = 15/16", pair_weight(0, 15).unwrap() == 15.0 / 16.0);
    check("w(16,15) rejected", pair_weight(16, 15).is_err());
    for delta in 1..=20usize {
        for s in 0..=delta {
            check("weight lattice", pair_weight(s, delta).unwrap() == (delta - s) as f64 / (delta + 1) as f64);
        }
    }

    let z = ndarray::array![[1.0, -2.0], [3.0, 0.0], [5.0, 4.0], [7.0, 2.0]];
    let (mean, std) = weighted_moments(z.view(), &[1.0; 4]).unwrap();
    check("uniform mean", mean.to_vec() == vec![4.0, 1.0]);
    check("uniform std", (std[0] - 5f64.sqrt()).abs() <= 1e-12 && (std[1] - 5f64.sqrt()).abs() <= 1e-12);
    let (mean, std) = weighted_moments(ndarray::array![[3.0], [99.0]].view(), &[1.0, 0.0]).unwrap();
    check("w=[1,0] mean 3 std 0", mean[0] == 3.0 && std[0] == 0.0);
    let (mean, std) = weighted_moments(ndarray::array![[0.0], [4.0]].view(), &[1.0, 3.0]).unwrap();
    check("w=[1,3] mean 3", mean[0] == 3.0);
    check("w=[1,3] std √3", (std[0] - 3f64.sqrt()).abs() <= 1e-12);
    check("all-zero weights rejected", weighted_moments(z.view(), &[0.0; 4]).is_err());

    Verdict::new(
        failures.is_empty(),
        if failures.is_empty() {
            "pair_weight and weighted_moments examples exact; δ = 0 gives w = 1".to_string()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

// ------------------------------------------------------------ criterion 3

/// Video whose frame `k` has every pixel equal to `k`.
fn indexed_video(n_frames: usize, fps: f64) -> VideoRecord {
    let frames = (0..n_frames).map(|k| GrayImage::from_pixel(2, 2, image::Luma([k as u8]))).collect();
    VideoRecord::in_memory("indexed", "p", fps, frames, BTreeMap::new()).unwrap()
}

/// Chi-square statistic and degrees of freedom for "second index uniform
/// over the anchor's eligibility set", summed over anchors.
fn conditional_chi_square(counts: &BTreeMap<usize, BTreeMap<usize, u64>>, support: &dyn Fn(usize) -> Vec<usize>) -> (f64, f64) {
    let (mut stat, mut df) = (0.0, 0.0);
    for (&a, row) in counts {
        let cells = support(a);
        if cells.len() < 2 {
            continue;
        }
        let total: u64 = row.values().sum();
        let expected = total as f64 / cells.len() as f64;
        for c in &cells {
            let o = *row.get(c).unwrap_or(&0) as f64;
            stat += (o - expected).powi(2) / expected;
        }
        df += (cells.len() - 1) as f64;
    }
    (stat, df)
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lines = Vec::new();
    let mut pass = true;

    // B-mode: fps 10, T = 100.
    let t = 100usize;
    let video = indexed_video(t, 10.0);
    for delta_t in [0.0, 0.5, 1.0, 1.5] {
        let cfg = IvppConfig::bmode(delta_t, true);
        let window = (delta_t * 10.0_f64).round() as usize;
        let support = |i: usize| -> Vec<usize> { (i.saturating_sub(window)..=(i + window).min(t - 1)).collect() };
        let oracle = (0..t)
            .map(|i| {
                let s = support(i);
                s.iter().map(|&j| pair_weight(i.abs_diff(j), window).unwrap()).sum::<f64>() / s.len() as f64
            })
            .sum::<f64>()
            / t as f64;
        let mut counts: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
        let (mut violations, mut wsum) = (0usize, 0.0);
        for _ in 0..draws {
            let p = sample_bmode_pair(&video, &cfg, &mut rng).unwrap();
            let i = p.view_a.get_pixel(0, 0)[0] as usize;
            let j = p.view_b.get_pixel(0, 0)[0] as usize;
            if p.separation != i.abs_diff(j) || p.separation > window {
                violations += 1;
            }
            wsum += p.weight;
            *counts.entry(i).or_default().entry(j).or_default() += 1;
        }
        let mean_w = wsum / draws as f64;
        let (stat, df) = conditional_chi_square(&counts, &support);
        let p_value = if df > 0.0 { ChiSquared::new(df).unwrap().sf(stat) } else { 1.0 };
        let ok = violations == 0 && (mean_w - oracle).abs() <= 0.02 && p_value > 0.01;
        pass &= ok;
        lines.push(format!("δt={delta_t}: viol {violations}, E[w] {mean_w:.4}/{oracle:.4}, χ² p {p_value:.3}"));
    }

    // M-mode: a fixed set of candidate columns.
    let columns: Vec<usize> = (40..200).filter(|x| (x * 7919) % 3 != 0).collect();
    for delta_x in [0usize, 5, 10, 15] {
        let support = |x1: usize| -> Vec<usize> { columns.iter().copied().filter(|x| x.abs_diff(x1) <= delta_x).collect() };
        let oracle = columns
            .iter()
            .map(|&x1| {
                let s = support(x1);
                s.iter().map(|&x2| pair_weight(x1.abs_diff(x2), delta_x).unwrap()).sum::<f64>() / s.len() as f64
            })
            .sum::<f64>()
            / columns.len() as f64;
        let mut counts: BTreeMap<usize, BTreeMap<usize, u64>> = BTreeMap::new();
        let (mut violations, mut wsum) = (0usize, 0.0);
        for _ in 0..draws {
            let (x1, x2) = sample_column_pair(&columns, delta_x, &mut rng).unwrap();
            let sep = x1.abs_diff(x2);
            if sep > delta_x || !columns.contains(&x2) {
                violations += 1;
            }
            wsum += pair_weight(sep, delta_x).unwrap();
            *counts.entry(x1).or_default().entry(x2).or_default() += 1;
        }
        let mean_w = wsum / draws as f64;
        let (stat, df) = conditional_chi_square(&counts, &support);
        let p_value = if df > 0.0 { ChiSquared::new(df).unwrap().sf(stat) } else { 1.0 };
        let ok = violations == 0 && (mean_w - oracle).abs() <= 0.02 && p_value > 0.01;
        pass &= ok;
        lines.push(format!("δx={delta_x}: viol {violations}, E[w] {mean_w:.4}/{oracle:.4}, χ² p {p_value:.3}"));
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(pass && secs < 60.0, format!("{}; {secs:.1}s", lines.join("; ")))
}

// ------------------------------------------------------------ criterion 4

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut slice_failures = 0;
    let mut column_failures = 0;
    for v in 0..50 {
        let (w, h, t) = (rng.random_range(8..40u32), rng.random_range(4..20u32), rng.random_range(3..25usize));
        // Low intensity ranges force ties among column sums.
        let levels = if v % 2 == 0 { 3u8 } else { 255 };
        let frames: Vec<GrayImage> = (0..t)
            .map(|_| GrayImage::from_fn(w, h, |_, _| image::Luma([rng.random_range(0..=levels)])))
            .collect();
        let video = VideoRecord::in_memory(format!("v{v}"), "p", 10.0, frames.clone(), BTreeMap::new()).unwrap();

        let x = rng.random_range(0..w as usize);
        let len = rng.random_range(1..=t);
        let t0 = rng.random_range(0..=t - len);
        let m = extract_mmode(&video, x, t0, len as f64 / 10.0).unwrap();
        let mut ok = m.pixels.dimensions() == (len as u32, h);
        for tt in 0..len {
            for y in 0..h {
                ok &= m.pixels.get_pixel(tt as u32, y)[0] == frames[t0 + tt].get_pixel(x as u32, y)[0];
            }
        }
        slice_failures += usize::from(!ok);

        let lo = rng.random_range(0..w as usize);
        let hi = rng.random_range(lo..w as usize);
        let roi = PleuralRoi::new(lo, hi).unwrap();
        let mut oracle: Vec<(u64, usize)> = (lo..=hi)
            .map(|c| {
                let s: u64 = frames
                    .iter()
                    .map(|f| (0..h).map(|y| u64::from(f.get_pixel(c as u32, y)[0])).sum::<u64>())
                    .sum();
                (s, c)
            })
            .collect();
        oracle.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let expected: Vec<usize> = oracle.iter().take((hi - lo + 1).div_ceil(2)).map(|&(_, c)| c).collect();
        column_failures += usize::from(candidate_columns(&video, roi).unwrap() != expected);
    }
    Verdict::new(
        slice_failures == 0 && column_failures == 0,
        format!("50 random videos: {slice_failures} slice mismatches, {column_failures} column-ranking mismatches"),
    )
}

// ------------------------------------------------------------ criteria 5 and 6

fn desk_model() -> ModelSpec {
    ModelSpec::desk()
}

fn probe_config() -> ProbeConfig {
    ProbeConfig {
        frame_stride: 4,
        ..ProbeConfig::default()
    }
}

struct DeskRun {
    epoch_losses: Vec<f64>,
    min_embedding_std: f64,
    auc: f64,
    seconds: f64,
}

fn desk_run(data: &SyntheticConfig, method: Method, ivpp: IvppConfig, seed: u64) -> DeskRun {
    let start = Instant::now();
    let synth = generate_synthetic(data).unwrap();
    let splits = split_by_patient(&synth.manifest, (0.6, 0.2, 0.2), seed).unwrap();
    let source = BmodeSource {
        videos: pretraining_videos(&synth.manifest, &splits),
    };
    let train = TrainConfig {
        seed,
        ..TrainConfig::desk()
    };
    let model = ModelSpec {
        seed,
        ..desk_model()
    };
    let job = PretrainJob {
        source: &source,
        ivpp,
        method,
        objective: ObjectiveConfig::default(),
        model,
        train,
        augment: default_policy(Task::Ab),
        preprocess: PreprocessSpec::for_task(Task::Ab),
    };
    let out = pretrain(&job, None).unwrap();
    let sets = EvalSets::from_splits(&synth.manifest, &splits);
    // Held-out batch: frames from the first validation videos.
    let held: Vec<GrayImage> = sets
        .validation
        .iter()
        .flat_map(|v| v.frames().unwrap().iter().step_by(8).cloned().collect::<Vec<_>>())
        .take(64)
        .collect();
    let emb = embed_frames(&out.model, &held, &PreprocessSpec::for_task(Task::Ab), 32).unwrap();
    let min_std = emb.std_axis(ndarray::Axis(0), 0.0).fold(f64::INFINITY, |m, &v| m.min(v));
    let probe = ProbeConfig {
        seed,
        ..probe_config()
    };
    let metrics = linear_eval(&out.model, &sets, Task::Ab, None, &probe).unwrap();
    DeskRun {
        epoch_losses: out.epochs.iter().map(|e| e.loss).collect(),
        min_embedding_std: min_std,
        auc: metrics.auc.unwrap(),
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_init_auc(data: &SyntheticConfig, seed: u64) -> f64 {
    let synth = generate_synthetic(data).unwrap();
    let splits = split_by_patient(&synth.manifest, (0.6, 0.2, 0.2), seed).unwrap();
    let sets = EvalSets::from_splits(&synth.manifest, &splits);
    let model = build_model(&ModelSpec {
        seed,
        ..desk_model()
    })
    .unwrap();
    let probe = ProbeConfig {
        seed,
        ..probe_config()
    };
    linear_eval(&model, &sets, Task::Ab, None, &probe).unwrap().auc.unwrap()
}

fn criterion_5() -> Verdict {
    let data = SyntheticConfig::default();
    let baseline = random_init_auc(&data, 0);
    let mut pass = true;
    let mut parts = vec![format!("random-init AUC {baseline:.3}")];
    for method in Method::ALL {
        let run = desk_run(&data, method, IvppConfig::bmode(0.0, false), 0);
        let decreasing = run.epoch_losses.windows(2).skip(1).all(|w| w[1] < w[0]);
        let ok = decreasing
            && run.min_embedding_std > 1e-3
            && run.auc >= 0.90
            && run.auc >= baseline + 0.05
            && run.seconds < 600.0;
        pass &= ok;
        let losses: Vec<String> = run.epoch_losses.iter().map(|l| format!("{l:.3}")).collect();
        parts.push(format!(
            "{method}: {} | losses [{}] decreasing after epoch 2: {decreasing}, min emb std {:.2e}, AUC {:.3}, {:.0}s",
            if ok { "ok" } else { "FAIL" },
            losses.join(" "),
            run.min_embedding_std,
            run.auc,
            run.seconds
        ));
    }
    Verdict::new(pass, parts.join("; "))
}

fn criterion_6() -> Verdict {
    let data = SyntheticConfig {
        artifact_dwell: 10,
        ..SyntheticConfig::small()
    };
    let method = Method::SimClr;
    let (mut base, mut ivpp) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let d = SyntheticConfig { seed, ..data.clone() };
        base.push(desk_run(&d, method, IvppConfig::bmode(0.0, false), seed).auc);
        ivpp.push(desk_run(&d, method, IvppConfig::bmode(1.0, true), seed).auc);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let diff = mean(&ivpp) - mean(&base);
    let direction = if diff > 0.0 { "higher" } else if diff < 0.0 { "lower" } else { "equal" };
    Verdict::new(
        diff >= -0.02,
        format!(
            "{method}, 5 seeds: δ=0 AUC {:.3} {:?}, δt=1s+weights AUC {:.3} {:?}; mean difference {:+.3}, IVPP {direction} (bound ≥ −0.02)",
            mean(&base),
            base.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            mean(&ivpp),
            ivpp.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            diff
        ),
    )
}

// ------------------------------------------------------------ criterion 7

/// P(score⁺ > score⁻) + ½ P(tie) by enumerating all pairs.
fn auc_all_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// `mean(d) / (sd(d) / √n)` with the n − 1 sample deviation.
fn t_closed_form(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    mean / (sd / n.sqrt())
}

/// Long-format results with factor a as δ ∈ {0, 1, 2, ...} and factor b as
/// the weight flag, one subject per subset.
fn result_table(y: &[Vec<Vec<f64>>]) -> ExperimentResult {
    let mut result = ExperimentResult::new();
    for (s, subject) in y.iter().enumerate() {
        for (a, row) in subject.iter().enumerate() {
            for (b, &value) in row.iter().enumerate() {
                result
                    .push(ResultRow {
                        method: Method::SimClr,
                        delta: a as f64,
                        sw: b == 1,
                        subset: s,
                        metric: "auc".into(),
                        value,
                    })
                    .unwrap();
            }
        }
    }
    result
}

fn fake_test(p: f64) -> PairedTest {
    PairedTest {
        n: 5,
        mean_diff: 0.0,
        t: 0.0,
        df: 4.0,
        p,
        zero_variance: false,
    }
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut auc_mismatch = 0;
    for k in 0..200 {
        let n = rng.random_range(2..=200);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        // Coarse scores on half the fixtures to exercise ties.
        let scores: Vec<f64> = (0..n)
            .map(|_| if k % 2 == 0 { f64::from(rng.random_range(0..5u8)) } else { rng.random_range(0.0..1.0) })
            .collect();
        if auc(&scores, &labels).unwrap() != auc_all_pairs(&scores, &labels) {
            auc_mismatch += 1;
        }
    }

    // Fixtures cross-checked against an external repeated-measures ANOVA.
    let y1 = vec![
        vec![vec![0.81, 0.84], vec![0.86, 0.83]],
        vec![vec![0.78, 0.80], vec![0.85, 0.84]],
        vec![vec![0.83, 0.82], vec![0.88, 0.90]],
    ];
    let expected1 = [(11.70149253731337, 0.07586229322177102), (4.0, 0.1835034190722784), (0.5714285714285715, 0.5285954792089681)];
    let y2 = vec![
        vec![vec![0.819, 0.914], vec![0.871, 0.679], vec![0.705, 0.906]],
        vec![vec![0.602, 0.887], vec![0.879, 0.764], vec![0.706, 0.697]],
        vec![vec![0.689, 0.756], vec![0.777, 0.794], vec![0.948, 0.877]],
        vec![vec![0.818, 0.946], vec![0.675, 0.656], vec![0.814, 0.615]],
    ];
    let expected2 = [(0.2008410169665687, 0.8233252851254912), (0.7328725463091001, 0.45488546913601374), (2.4850405429724005, 0.1636154224633513)];
    let mut anova_err: f64 = 0.0;
    let mut posthoc_err: f64 = 0.0;
    for (y, expected) in [(y1, expected1), (y2, expected2)] {
        let result = result_table(&y);
        let table = rm_anova_two_way(&result, Method::SimClr, "auc").unwrap();
        for (effect, (f, p)) in [&table.factor_a, &table.factor_b, &table.interaction].into_iter().zip(expected) {
            anova_err = anova_err.max(rel_err(effect.f, f)).max(rel_err(effect.p, p));
        }
        let cells = rm_anova_two_way_cells(&y).unwrap();
        anova_err = anova_err.max(rel_err(cells.factor_a.f, table.factor_a.f));

        // Post-hoc t statistics against the closed form, per comparison.
        let column = |a: usize, b: usize| y.iter().map(|s| s[a][b]).collect::<Vec<f64>>();
        for family in posthoc_paired_tests(&result, Method::SimClr, "auc", 0.05).unwrap() {
            for c in &family.comparisons {
                let level: usize = c.label["δ=".len()..].split(' ').next().unwrap().parse().unwrap();
                let (lhs, rhs) = if c.label.ends_with("vs δ=0") {
                    let sw = usize::from(c.label.contains("sw=true"));
                    (column(level, sw), column(0, 0))
                } else {
                    (column(level, 1), column(level, 0))
                };
                posthoc_err = posthoc_err.max(rel_err(c.test.t, t_closed_form(&lhs, &rhs)));
            }
        }
    }

    let mut t_err: f64 = 0.0;
    for (a, b, t, p) in [
        (vec![0.80, 0.82, 0.78, 0.81], vec![0.75, 0.77, 0.74, 0.76], 19.000000000000057, 0.0003183434400711545),
        (vec![0.91, 0.88, 0.93, 0.90, 0.87], vec![0.89, 0.89, 0.90, 0.86, 0.88], 1.3598002073001698, 0.24549203685029755),
    ] {
        let r = paired_t_test(&a, &b).unwrap();
        t_err = t_err.max(rel_err(r.t, t)).max(rel_err(r.p, p));
    }

    // Six comparisons at α = 0.05: threshold 0.05 / 6 ≈ 0.00833.
    let ps = [0.001, 0.008, 0.009, 0.02, 0.04, 0.3];
    let family = bonferroni("six", ps.iter().map(|&p| (format!("p={p}"), fake_test(p))).collect(), 0.05);
    let adjusted: Vec<bool> = family.comparisons.iter().map(|c| c.significant_bonferroni).collect();
    let raw: Vec<bool> = family.comparisons.iter().map(|c| c.significant_raw).collect();
    let bonf_ok = adjusted == [true, true, false, false, false, false]
        && raw == [true, true, true, true, true, false]
        && (family.threshold - 0.05 / 6.0).abs() < 1e-15;

    Verdict::new(
        auc_mismatch == 0 && anova_err <= 1e-8 && t_err <= 1e-8 && posthoc_err <= 1e-8 && bonf_ok,
        format!(
            "AUC mismatches {auc_mismatch}/200; ANOVA F/p max rel err {anova_err:.1e}; paired t/p max rel err {t_err:.1e}; post-hoc t max rel err {posthoc_err:.1e}; Bonferroni 6-family {}",
            if bonf_ok { "matches" } else { "MISMATCH" }
        ),
    )
}

// ------------------------------------------------------------ criterion 8

fn criterion_8() -> Option<Verdict> {
    let manifest_path = std::env::var("IVPP_POCUS_MANIFEST").ok()?;
    let start = Instant::now();
    let outcome = (|| -> ivpp::Result<String> {
        let manifest = ivpp::datamodel::load_manifest(&manifest_path)?;
        let model = match std::env::var("IVPP_POCUS_CHECKPOINT") {
            Ok(path) => ivpp::train::SslModel::from_checkpoint(&ivpp::train::Checkpoint::load(path)?)?,
            Err(_) => build_model(&ModelSpec::resnet18())?,
        };
        let probe = ProbeConfig {
            epochs: 100,
            ..ProbeConfig::default()
        };
        let cv = ivpp::evalstats::kfold_cv_pocus(&model, &manifest, Task::Covid, 5, &probe)?;
        Ok(format!(
            "accuracy {:.3} ({:.3}); reference 0.926 ± 0.05 band: {}",
            cv.mean,
            cv.std,
            if (cv.mean - 0.926).abs() <= 0.05 { "inside" } else { "outside" }
        ))
    })();
    Some(match outcome {
        Ok(line) => Verdict::new(true, format!("{line}; {:.0}s", start.elapsed().as_secs_f64())),
        Err(e) => Verdict::new(false, format!("pipeline error: {e}")),
    })
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("IVPP_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    let criteria: [(usize, &str, fn() -> Verdict); 7] = [
        (1, "objective oracles and gradients", criterion_1),
        (2, "pair weights and weighted moments", criterion_2),
        (3, "sampler statistics", criterion_3),
        (4, "M-mode fidelity", criterion_4),
        (5, "synthetic end-to-end", criterion_5),
        (6, "IVPP effect harness", criterion_6),
        (7, "statistics oracles", criterion_7),
    ];
    let mut failed = 0;
    for (k, name, run) in criteria {
        if !wanted(k) {
            continue;
        }
        let v = run();
        failed += usize::from(!v.pass);
        println!("criterion {k} ({name}): {} | {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if wanted(8) {
        match criterion_8() {
            Some(v) => {
                failed += usize::from(!v.pass);
                println!("criterion 8 (public POCUS smoke): {} | {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            }
            None => println!("criterion 8 (public POCUS smoke): SKIPPED | optional; set IVPP_POCUS_MANIFEST to run"),
        }
    }
    if failed == 0 {
        println!("all run criteria passed");
        return;
    }
    println!("{failed} criterion(s) failed");
    // Failures are reported above; set IVPP_ACCEPTANCE_STRICT=1 to also
    // fail the test target.
    if std::env::var_os("IVPP_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
