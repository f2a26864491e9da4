//! Two-way repeated-measures ANOVA, paired t-tests and Bonferroni families.
//!
//! Subjects are label-efficiency subsets; factor A is δ and factor B is the
//! sample-weight flag. The ANOVA uses direct within-subject sums of squares
//! with no sphericity correction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use super::results::ExperimentResult;
use crate::objectives::Method;
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaEffect {
    pub ss: f64,
    pub df: f64,
    pub ss_error: f64,
    pub df_error: f64,
    pub f: f64,
    pub p: f64,
}

impl AnovaEffect {
    fn new(ss: f64, df: f64, ss_error: f64, df_error: f64, zero_tol: f64) -> Self {
        let ss = if ss <= zero_tol { 0.0 } else { ss };
        let ss_error = if ss_error <= zero_tol { 0.0 } else { ss_error };
        let (f, p) = if ss == 0.0 {
            (0.0, 1.0)
        } else if ss_error == 0.0 || df_error == 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            let f = (ss / df) / (ss_error / df_error);
            let p = FisherSnedecor::new(df, df_error).map(|d| d.sf(f)).unwrap_or(f64::NAN);
            (f, p)
        };
        Self {
            ss,
            df,
            ss_error,
            df_error,
            f,
            p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub n_subjects: usize,
    pub levels_a: usize,
    pub levels_b: usize,
    /// Factor A (δ).
    pub factor_a: AnovaEffect,
    /// Factor B (sample weights).
    pub factor_b: AnovaEffect,
    pub interaction: AnovaEffect,
}

/// Two-way repeated-measures ANOVA on `y[subject][a][b]`.
pub fn rm_anova_two_way_cells(y: &[Vec<Vec<f64>>]) -> Result<AnovaTable> {
    let n = y.len();
    if n < 2 {
        return Err(Error::UnbalancedDesign(format!("need at least 2 subjects, got {n}")));
    }
    let a = y[0].len();
    let b = y[0].first().map_or(0, Vec::len);
    if a < 2 || b < 2 {
        return Err(Error::UnbalancedDesign(format!("need at least 2 levels per factor, got {a}x{b}")));
    }
    if y.iter().any(|s| s.len() != a || s.iter().any(|r| r.len() != b)) {
        return Err(Error::UnbalancedDesign("cells differ in shape across subjects".into()));
    }
    if y.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite observation".into()));
    }

    let count = (n * a * b) as f64;
    let grand = y.iter().flatten().flatten().sum::<f64>() / count;
    // Centre first; the sums below then carry no large common offset.
    let c: Vec<Vec<Vec<f64>>> = y
        .iter()
        .map(|s| s.iter().map(|r| r.iter().map(|v| v - grand).collect()).collect())
        .collect();
    let (nf, af, bf) = (n as f64, a as f64, b as f64);

    let m_s: Vec<f64> = c.iter().map(|s| s.iter().flatten().sum::<f64>() / (af * bf)).collect();
    let m_a: Vec<f64> = (0..a)
        .map(|j| c.iter().map(|s| s[j].iter().sum::<f64>()).sum::<f64>() / (nf * bf))
        .collect();
    let m_b: Vec<f64> = (0..b)
        .map(|k| c.iter().flat_map(|s| s.iter().map(move |r| r[k])).sum::<f64>() / (nf * af))
        .collect();
    let m_ab = |j: usize, k: usize| c.iter().map(|s| s[j][k]).sum::<f64>() / nf;
    let m_as = |i: usize, j: usize| c[i][j].iter().sum::<f64>() / bf;
    let m_bs = |i: usize, k: usize| c[i].iter().map(|r| r[k]).sum::<f64>() / af;

    let sq = |v: f64| v * v;
    let ss_total: f64 = c.iter().flatten().flatten().map(|&v| sq(v)).sum();
    let ss_a = nf * bf * m_a.iter().map(|&v| sq(v)).sum::<f64>();
    let ss_b = nf * af * m_b.iter().map(|&v| sq(v)).sum::<f64>();
    let ss_s = af * bf * m_s.iter().map(|&v| sq(v)).sum::<f64>();
    let mut ss_ab = 0.0;
    for j in 0..a {
        for k in 0..b {
            ss_ab += sq(m_ab(j, k) - m_a[j] - m_b[k]);
        }
    }
    ss_ab *= nf;
    let mut ss_as = 0.0;
    let mut ss_bs = 0.0;
    for i in 0..n {
        for j in 0..a {
            ss_as += sq(m_as(i, j) - m_a[j] - m_s[i]);
        }
        for k in 0..b {
            ss_bs += sq(m_bs(i, k) - m_b[k] - m_s[i]);
        }
    }
    ss_as *= bf;
    ss_bs *= af;
    let ss_abs = (ss_total - ss_a - ss_b - ss_s - ss_ab - ss_as - ss_bs).max(0.0);

    // Sums of squares below this are rounding noise of an all-equal table.
    let scale = y.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let zero_tol = sq(1e-10 * scale) * count;
    let (da, db, ds) = (af - 1.0, bf - 1.0, nf - 1.0);
    Ok(AnovaTable {
        n_subjects: n,
        levels_a: a,
        levels_b: b,
        factor_a: AnovaEffect::new(ss_a, da, ss_as, da * ds, zero_tol),
        factor_b: AnovaEffect::new(ss_b, db, ss_bs, db * ds, zero_tol),
        interaction: AnovaEffect::new(ss_ab, da * db, ss_abs, da * db * ds, zero_tol),
    })
}

/// Collects `y[subset][δ level][sw]` for one method and metric. Every
/// subset must have exactly one value for each `(δ, sw)` pair present.
pub fn design_cells(result: &ExperimentResult, method: Method, metric: &str) -> Result<(Vec<f64>, Vec<usize>, Vec<Vec<Vec<f64>>>)> {
    let deltas = result.deltas(method);
    let subsets: Vec<usize> = result
        .rows()
        .iter()
        .filter(|r| r.method == method && r.metric == metric)
        .map(|r| r.subset)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if subsets.is_empty() {
        return Err(Error::Empty(format!("no rows for {method} / {metric}")));
    }
    let mut y = vec![vec![vec![f64::NAN; 2]; deltas.len()]; subsets.len()];
    for (j, &d) in deltas.iter().enumerate() {
        for (k, sw) in [false, true].into_iter().enumerate() {
            let cell = result.cell(method, d, sw, metric);
            for (i, s) in subsets.iter().enumerate() {
                match cell.get(s) {
                    Some(&v) => y[i][j][k] = v,
                    None => {
                        return Err(Error::UnbalancedDesign(format!(
                            "{method}: no {metric} value for δ={d}, sw={sw}, subset {s}"
                        )))
                    }
                }
            }
        }
    }
    Ok((deltas, subsets, y))
}

pub fn rm_anova_two_way(result: &ExperimentResult, method: Method, metric: &str) -> Result<AnovaTable> {
    let (_, _, y) = design_cells(result, method, metric)?;
    rm_anova_two_way_cells(&y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Set when every difference is identical; `t` is then 0 (all zero) or
    /// ±∞ with `p = 0`.
    pub zero_variance: bool,
}

/// Two-sided paired t-test of `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("paired t-test needs >= 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let df = nf - 1.0;
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sd <= 1e-12 * scale || scale == 0.0 {
        let (t, p) = if mean == 0.0 || scale == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(PairedTest {
            n,
            mean_diff: mean,
            t,
            df,
            p,
            zero_variance: true,
        });
    }
    let t = mean / (sd / nf.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(PairedTest {
        n,
        mean_diff: mean,
        t,
        df,
        p,
        zero_variance: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label: String,
    pub test: PairedTest,
    pub significant_raw: bool,
    pub significant_bonferroni: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub name: String,
    pub alpha: f64,
    /// `alpha / m` for a family of `m` comparisons.
    pub threshold: f64,
    pub comparisons: Vec<Comparison>,
}

/// Applies Bonferroni at family-wise `alpha`: significant iff `p < alpha / m`.
pub fn bonferroni(name: &str, tests: Vec<(String, PairedTest)>, alpha: f64) -> Family {
    let m = tests.len().max(1) as f64;
    let threshold = alpha / m;
    let comparisons = tests
        .into_iter()
        .map(|(label, test)| Comparison {
            significant_raw: test.p < alpha,
            significant_bonferroni: test.p < threshold,
            label,
            test,
        })
        .collect();
    Family {
        name: name.to_string(),
        alpha,
        threshold,
        comparisons,
    }
}

fn aligned(result: &ExperimentResult, method: Method, metric: &str, c1: (f64, bool), c2: (f64, bool)) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = result.cell(method, c1.0, c1.1, metric);
    let b = result.cell(method, c2.0, c2.1, metric);
    if a.keys().ne(b.keys()) {
        return Err(Error::UnbalancedDesign(format!(
            "{method}: subsets of (δ={}, sw={}) and (δ={}, sw={}) differ",
            c1.0, c1.1, c2.0, c2.1
        )));
    }
    Ok((a.into_values().collect(), b.into_values().collect()))
}

/// The two post-hoc families for one method: every nonzero δ (with and
/// without weights) against `(δ = 0, no weights)`, and weights against no
/// weights at each nonzero δ.
pub fn posthoc_paired_tests(result: &ExperimentResult, method: Method, metric: &str, alpha: f64) -> Result<Vec<Family>> {
    let deltas = result.deltas(method);
    if !deltas.contains(&0.0) {
        return Err(Error::UnbalancedDesign(format!("{method}: no δ = 0 baseline")));
    }
    let nonzero: Vec<f64> = deltas.into_iter().filter(|&d| d != 0.0).collect();
    let mut vs_zero = Vec::new();
    let mut vs_unweighted = Vec::new();
    for &d in &nonzero {
        for sw in [false, true] {
            let (a, b) = aligned(result, method, metric, (d, sw), (0.0, false))?;
            vs_zero.push((format!("δ={d} sw={sw} vs δ=0"), paired_t_test(&a, &b)?));
        }
        let (a, b) = aligned(result, method, metric, (d, true), (d, false))?;
        vs_unweighted.push((format!("δ={d} sw=true vs sw=false"), paired_t_test(&a, &b)?));
    }
    Ok(vec![
        bonferroni("nonzero δ vs δ=0", vs_zero, alpha),
        bonferroni("weights vs no weights", vs_unweighted, alpha),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: Method,
    pub metric: String,
    pub anova: AnovaTable,
    /// Whether any ANOVA effect reached `p < alpha`; post-hoc tests run
    /// regardless and this records the gate.
    pub anova_significant: bool,
    pub families: Vec<Family>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub alpha: f64,
    pub note: String,
    pub methods: Vec<MethodStats>,
}

impl StatReport {
    /// ANOVA and post-hoc families for every method in `result`.
    pub fn build(result: &ExperimentResult, metric: &str, alpha: f64) -> Result<Self> {
        let methods = result.methods();
        if methods.is_empty() {
            return Err(Error::Empty("no rows".into()));
        }
        let mut out = Vec::new();
        for method in methods {
            let anova = rm_anova_two_way(result, method, metric)?;
            let anova_significant = [&anova.factor_a, &anova.factor_b, &anova.interaction]
                .iter()
                .any(|e| e.p < alpha);
            let families = posthoc_paired_tests(result, method, metric, alpha)?;
            out.push(MethodStats {
                method,
                metric: metric.to_string(),
                anova,
                anova_significant,
                families,
            });
        }
        Ok(Self {
            alpha,
            note: "repeated-measures p-values are not corrected for sphericity".into(),
            methods: out,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "alpha = {} ({})", self.alpha, self.note).unwrap();
        for m in &self.methods {
            writeln!(s, "\n== {} ({}) ==", m.method, m.metric).unwrap();
            writeln!(s, "{:<14} {:>10} {:>6} {:>10} {:>10}", "effect", "F", "df", "df_err", "p").unwrap();
            for (name, e) in [("delta", &m.anova.factor_a), ("weights", &m.anova.factor_b), ("interaction", &m.anova.interaction)] {
                writeln!(s, "{name:<14} {:>10.4} {:>6} {:>10} {:>10.4}", e.f, e.df, e.df_error, e.p).unwrap();
            }
            writeln!(s, "ANOVA significant at alpha: {}", m.anova_significant).unwrap();
            for f in &m.families {
                writeln!(s, "-- {} (m = {}, threshold {:.4})", f.name, f.comparisons.len(), f.threshold).unwrap();
                for c in &f.comparisons {
                    writeln!(
                        s,
                        "   {:<28} t = {:>8.4} p = {:.4}{} raw: {} bonferroni: {}",
                        c.label,
                        c.test.t,
                        c.test.p,
                        if c.test.zero_variance { " [zero-variance]" } else { "" },
                        if c.significant_raw { "sig" } else { "ns" },
                        if c.significant_bonferroni { "sig" } else { "ns" },
                    )
                    .unwrap();
                }
            }
        }
        s
    }
}
