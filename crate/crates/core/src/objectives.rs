//! Weighted joint-embedding objectives with analytic gradients.
//!
//! Every objective takes two embedding batches `z1, z2` of shape `(N, D)`,
//! where row `i` of each holds one view of pair `i`, and a weight per pair.
//! With all weights equal to one the objectives reduce to their standard
//! unweighted forms. Losses and gradients are computed in `f64`; the trainer
//! backpropagates the returned embedding gradients through the network.
//!
//! - SimCLR: NT-Xent over the `2N` views with cosine similarity over a
//!   temperature. Pair `i` contributes `w_i` times the mean of its two
//!   directional terms; the total is divided by `N`.
//! - VICReg: the invariance term is `(1/N) Σ w_i ‖z1_i − z2_i‖²`; variance
//!   and covariance terms are the usual unweighted ones (unbiased `N − 1`
//!   estimators).
//! - Barlow Twins: the on-diagonal term uses a cross-correlation matrix built
//!   from weighted means, weighted standard deviations and a weighted sum
//!   normalized by `Σ w`; the off-diagonal term uses the unweighted matrix.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[serde(rename = "simclr")]
    SimClr,
    #[serde(rename = "vicreg")]
    Vicreg,
    #[serde(rename = "barlow")]
    Barlow,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SimClr, Method::Vicreg, Method::Barlow];

    pub fn name(self) -> &'static str {
        match self {
            Method::SimClr => "simclr",
            Method::Vicreg => "vicreg",
            Method::Barlow => "barlow",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simclr" => Ok(Method::SimClr),
            "vicreg" => Ok(Method::Vicreg),
            "barlow" | "barlowtwins" | "barlow_twins" => Ok(Method::Barlow),
            _ => Err(Error::InvalidArgument(format!("unknown method '{s}'"))),
        }
    }
}

/// How the VICReg invariance term reduces each pair's squared distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvarianceScale {
    /// `(1/N) Σ w_i ‖Z1_i − Z2_i‖²`.
    Sum,
    /// The same divided by the embedding dimension, the scale at which the
    /// default λ, μ, ν are balanced.
    #[default]
    Mean,
}

/// Hyperparameters for all three objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub temperature: f64,
    pub vicreg_lambda: f64,
    pub vicreg_mu: f64,
    pub vicreg_nu: f64,
    pub vicreg_gamma: f64,
    pub vicreg_invariance: InvarianceScale,
    /// Added under the square root of every variance.
    pub epsilon: f64,
    pub barlow_lambda: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            vicreg_lambda: 25.0,
            vicreg_mu: 25.0,
            vicreg_nu: 1.0,
            vicreg_gamma: 1.0,
            vicreg_invariance: InvarianceScale::default(),
            epsilon: 1e-4,
            barlow_lambda: 5e-3,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidArgument("temperature must be > 0".into()));
        }
        if self.epsilon < 0.0 {
            return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
        }
        Ok(())
    }

    /// VICReg invariance coefficient actually applied. Pair weights average
    /// roughly one half, so the coefficient is doubled when they are in use
    /// to keep the invariance term at its unweighted scale.
    pub fn effective_vicreg_lambda(&self, weighted: bool) -> f64 {
        if weighted {
            2.0 * self.vicreg_lambda
        } else {
            self.vicreg_lambda
        }
    }
}

/// Loss value with its named terms and the coefficients applied to them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub terms: BTreeMap<String, f64>,
    pub coefficients: BTreeMap<String, f64>,
}

/// Loss plus gradients with respect to `z1` and `z2`.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub report: LossReport,
    pub grad1: Array2<f64>,
    pub grad2: Array2<f64>,
}

/// Shared preconditions: matching `(N, D)` shapes with `N >= 2`, finite
/// values, and nonnegative weights that are not all zero.
fn check_batch(z1: &ArrayView2<f64>, z2: &ArrayView2<f64>, w: &[f64]) -> Result<()> {
    let (n, d) = z1.dim();
    if n == 0 || d == 0 {
        return Err(Error::Empty("embedding batch".into()));
    }
    if z2.dim() != (n, d) {
        return Err(Error::InvalidArgument(format!(
            "embedding shapes differ: {:?} vs {:?}",
            z1.dim(),
            z2.dim()
        )));
    }
    if w.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} weights for a batch of {n} pairs",
            w.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least two pairs, got {n}")));
    }
    if let Some(bad) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidArgument(format!("invalid pair weight {bad}")));
    }
    total_weight(w)?;
    if z1.iter().chain(z2.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite embedding value".into()));
    }
    Ok(())
}

fn total_weight(w: &[f64]) -> Result<f64> {
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("pair weights sum to zero".into()));
    }
    Ok(total)
}

// ---------------------------------------------------------------- SimCLR

/// Weighted NT-Xent loss and gradients.
pub fn simclr_with_grad(
    z1: ArrayView2<f64>,
    z2: ArrayView2<f64>,
    w: &[f64],
    temperature: f64,
) -> Result<LossAndGrad> {
    check_batch(&z1, &z2, w)?;
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument("temperature must be > 0".into()));
    }
    let (n, d) = z1.dim();
    let m = 2 * n;
    let mut u = Array2::<f64>::zeros((m, d));
    u.slice_mut(ndarray::s![..n, ..]).assign(&z1);
    u.slice_mut(ndarray::s![n.., ..]).assign(&z2);

    let norms: Array1<f64> = u.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
    let nrm = &u / &norms.view().insert_axis(Axis(1));
    let sim = nrm.dot(&nrm.t()) / temperature;

    // g[k, l] = dT/dS[k, l]
    let mut g = Array2::<f64>::zeros((m, m));
    let mut total = 0.0;
    for k in 0..m {
        let pos = (k + n) % m;
        let c = w[k % n] / m as f64;
        let row = sim.row(k);
        let mx = row
            .iter()
            .enumerate()
            .filter(|&(l, _)| l != k)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(l, _)| l != k && l != pos)
            .map(|(_, &v)| (v - mx).exp())
            .sum();
        // When the positive is the largest logit the term is ln(1 + rest);
        // ln_1p keeps near-zero losses accurate.
        let term = if row[pos] >= mx {
            rest.ln_1p()
        } else {
            mx - row[pos] + ((row[pos] - mx).exp() + rest).ln()
        };
        let lse = row[pos] + term;
        total += c * term;
        if c == 0.0 {
            continue;
        }
        for l in 0..m {
            if l != k {
                g[[k, l]] = c * (row[l] - lse).exp();
            }
        }
        g[[k, pos]] -= c;
    }

    let sym = &g + &g.t();
    let gn = sym.dot(&nrm) / temperature;
    let mut gu = Array2::<f64>::zeros((m, d));
    for k in 0..m {
        let nk = nrm.row(k);
        let gk = gn.row(k);
        let proj = nk.dot(&gk);
        let row = (&gk - &(&nk * proj)) / norms[k];
        gu.row_mut(k).assign(&row);
    }
    let grad1 = gu.slice(ndarray::s![..n, ..]).to_owned();
    let grad2 = gu.slice(ndarray::s![n.., ..]).to_owned();

    let report = LossReport {
        total,
        terms: BTreeMap::from([("nt_xent".to_string(), total)]),
        coefficients: BTreeMap::from([("temperature".to_string(), temperature)]),
    };
    Ok(LossAndGrad { report, grad1, grad2 })
}

/// Weighted NT-Xent loss.
pub fn simclr_loss(z1: ArrayView2<f64>, z2: ArrayView2<f64>, w: &[f64], temperature: f64) -> Result<f64> {
    Ok(simclr_with_grad(z1, z2, w, temperature)?.report.total)
}

// ---------------------------------------------------------------- VICReg

/// Coefficients for [`vicreg_with_grad`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VicregParams {
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub invariance: InvarianceScale,
}

impl VicregParams {
    pub fn from_config(cfg: &ObjectiveConfig, weighted: bool) -> Self {
        Self {
            lambda: cfg.effective_vicreg_lambda(weighted),
            mu: cfg.vicreg_mu,
            nu: cfg.vicreg_nu,
            gamma: cfg.vicreg_gamma,
            epsilon: cfg.epsilon,
            invariance: cfg.vicreg_invariance,
        }
    }
}

/// Variance hinge and covariance penalty of one branch, with gradients.
fn vicreg_branch(z: ArrayView2<f64>, gamma: f64, eps: f64) -> (f64, f64, Array2<f64>, Array2<f64>) {
    let (n, d) = z.dim();
    let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
    let x = &z - &mean.view().insert_axis(Axis(0));
    let cov = x.t().dot(&x) / (n as f64 - 1.0);

    let mut v = 0.0;
    let mut gv = Array2::<f64>::zeros((n, d));
    for j in 0..d {
        let std = (cov[[j, j]] + eps).sqrt();
        if gamma - std > 0.0 {
            v += gamma - std;
            if std > 0.0 {
                let scale = -1.0 / (d as f64 * std * (n as f64 - 1.0));
                gv.column_mut(j).assign(&(&x.column(j) * scale));
            }
        }
    }
    v /= d as f64;

    let mut off = cov;
    off.diag_mut().fill(0.0);
    let c = off.iter().map(|v| v * v).sum::<f64>() / d as f64;
    let gc = x.dot(&off) * (4.0 / (d as f64 * (n as f64 - 1.0)));
    (v, c, gv, gc)
}

/// Weighted VICReg loss and gradients.
pub fn vicreg_with_grad(
    z1: ArrayView2<f64>,
    z2: ArrayView2<f64>,
    w: &[f64],
    p: &VicregParams,
) -> Result<LossAndGrad> {
    check_batch(&z1, &z2, w)?;
    let (n, d) = z1.dim();
    let norm = match p.invariance {
        InvarianceScale::Sum => n as f64,
        InvarianceScale::Mean => (n * d) as f64,
    };
    let diff = &z1 - &z2;
    let wv = Array1::from(w.to_vec()).insert_axis(Axis(1));
    let s = diff
        .outer_iter()
        .zip(w)
        .map(|(r, wi)| wi * r.dot(&r))
        .sum::<f64>()
        / norm;
    let gs = &diff * &wv * (2.0 / norm);

    let (v1, c1, gv1, gc1) = vicreg_branch(z1, p.gamma, p.epsilon);
    let (v2, c2, gv2, gc2) = vicreg_branch(z2, p.gamma, p.epsilon);

    let total = p.lambda * s + p.mu * (v1 + v2) + p.nu * (c1 + c2);
    let grad1 = &gs * p.lambda + &gv1 * p.mu + &gc1 * p.nu;
    let grad2 = &gs * (-p.lambda) + &gv2 * p.mu + &gc2 * p.nu;

    let report = LossReport {
        total,
        terms: BTreeMap::from([
            ("invariance".to_string(), s),
            ("variance".to_string(), v1 + v2),
            ("covariance".to_string(), c1 + c2),
        ]),
        coefficients: BTreeMap::from([
            ("invariance".to_string(), p.lambda),
            ("variance".to_string(), p.mu),
            ("covariance".to_string(), p.nu),
        ]),
    };
    Ok(LossAndGrad { report, grad1, grad2 })
}

pub fn vicreg_loss(z1: ArrayView2<f64>, z2: ArrayView2<f64>, w: &[f64], p: &VicregParams) -> Result<LossReport> {
    Ok(vicreg_with_grad(z1, z2, w, p)?.report)
}

// ---------------------------------------------------------------- Barlow Twins

/// Per-dimension weighted mean and weighted (population) standard deviation
/// with normalized weights `w_i / Σ w`.
pub fn weighted_moments(z: ArrayView2<f64>, w: &[f64]) -> Result<(Array1<f64>, Array1<f64>)> {
    check_batch(&z, &z, w)?;
    let total: f64 = w.iter().sum();
    let p = Array1::from_iter(w.iter().map(|v| v / total));
    let mean = p.dot(&z);
    let x = &z - &mean.view().insert_axis(Axis(0));
    let var = p.dot(&x.mapv(|v| v * v));
    Ok((mean, var.mapv(|v| v.max(0.0).sqrt())))
}

/// Column standardization with row weights `p` (summing to one) and its
/// backward pass.
struct Standardized {
    y: Array2<f64>,
    x: Array2<f64>,
    s: Array1<f64>,
    p: Array1<f64>,
}

impl Standardized {
    fn new(z: ArrayView2<f64>, p: Array1<f64>, eps: f64) -> Self {
        let mean = p.dot(&z);
        let x = &z - &mean.view().insert_axis(Axis(0));
        let var = p.dot(&x.mapv(|v| v * v));
        let s = var.mapv(|v| (v + eps).sqrt());
        let mut y = Array2::<f64>::zeros(x.dim());
        for (j, &sj) in s.iter().enumerate() {
            if sj > 0.0 {
                y.column_mut(j).assign(&(&x.column(j) / sj));
            }
        }
        Self { y, x, s, p }
    }

    fn backward(&self, gy: &Array2<f64>) -> Array2<f64> {
        let mut gz = Array2::<f64>::zeros(gy.dim());
        for (j, &s) in self.s.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let gcol = gy.column(j);
            let xcol = self.x.column(j);
            let sum_g = gcol.sum();
            let sum_gx = gcol.dot(&xcol);
            for k in 0..gy.nrows() {
                let pk = self.p[k];
                gz[[k, j]] = (gcol[k] - pk * sum_g) / s - pk * xcol[k] * sum_gx / (s * s * s);
            }
        }
        gz
    }
}

/// Weighted cross-correlation: `C[d, e] = Σ_i w_i ẑ1_id ẑ2_ie / Σ w`, where
/// each batch is centred by its weighted mean and scaled by
/// `sqrt(weighted variance + eps)`.
pub fn weighted_cross_correlation(
    z1: ArrayView2<f64>,
    z2: ArrayView2<f64>,
    w: &[f64],
    eps: f64,
) -> Result<Array2<f64>> {
    check_batch(&z1, &z2, w)?;
    let total: f64 = w.iter().sum();
    let p = Array1::from_iter(w.iter().map(|v| v / total));
    let a = Standardized::new(z1, p.clone(), eps);
    let b = Standardized::new(z2, p.clone(), eps);
    Ok(cross(&a, &b))
}

fn cross(a: &Standardized, b: &Standardized) -> Array2<f64> {
    let pw = a.p.view().insert_axis(Axis(1));
    (&a.y * &pw).t().dot(&b.y)
}

/// Gradients of `Σ G ∘ C` with `C = Ŷ1ᵀ diag(p) Ŷ2`.
fn cross_backward(a: &Standardized, b: &Standardized, g: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let pw = a.p.view().insert_axis(Axis(1));
    let gy1 = b.y.dot(&g.t()) * &pw;
    let gy2 = a.y.dot(g) * &pw;
    (a.backward(&gy1), b.backward(&gy2))
}

/// Weighted Barlow Twins loss and gradients.
pub fn barlow_with_grad(
    z1: ArrayView2<f64>,
    z2: ArrayView2<f64>,
    w: &[f64],
    lambda: f64,
    eps: f64,
) -> Result<LossAndGrad> {
    check_batch(&z1, &z2, w)?;
    let total: f64 = w.iter().sum();
    let (n, d) = z1.dim();

    let pw = Array1::from_iter(w.iter().map(|v| v / total));
    let a = Standardized::new(z1, pw.clone(), eps);
    let b = Standardized::new(z2, pw, eps);
    let cw = cross(&a, &b);
    let mut g_inv = Array2::<f64>::zeros((d, d));
    let mut inv = 0.0;
    for j in 0..d {
        let r = 1.0 - cw[[j, j]];
        inv += r * r;
        g_inv[[j, j]] = -2.0 * r;
    }
    let (gi1, gi2) = cross_backward(&a, &b, &g_inv);

    let pu = Array1::from_elem(n, 1.0 / n as f64);
    let au = Standardized::new(z1, pu.clone(), eps);
    let bu = Standardized::new(z2, pu, eps);
    let mut cu = cross(&au, &bu);
    cu.diag_mut().fill(0.0);
    let red = cu.iter().map(|v| v * v).sum::<f64>();
    let g_red = &cu * (2.0 * lambda);
    let (gr1, gr2) = cross_backward(&au, &bu, &g_red);

    let report = LossReport {
        total: inv + lambda * red,
        terms: BTreeMap::from([
            ("invariance".to_string(), inv),
            ("redundancy".to_string(), red),
        ]),
        coefficients: BTreeMap::from([("redundancy".to_string(), lambda)]),
    };
    Ok(LossAndGrad {
        report,
        grad1: gi1 + gr1,
        grad2: gi2 + gr2,
    })
}

pub fn barlow_loss(z1: ArrayView2<f64>, z2: ArrayView2<f64>, w: &[f64], lambda: f64, eps: f64) -> Result<LossReport> {
    Ok(barlow_with_grad(z1, z2, w, lambda, eps)?.report)
}

/// Evaluates `method` on a batch. `weighted` records whether `w` carries
/// distance weights (as opposed to all ones) and only affects the VICReg
/// invariance coefficient.
pub fn compute(
    method: Method,
    cfg: &ObjectiveConfig,
    z1: ArrayView2<f64>,
    z2: ArrayView2<f64>,
    w: &[f64],
    weighted: bool,
) -> Result<LossAndGrad> {
    cfg.validate()?;
    match method {
        Method::SimClr => simclr_with_grad(z1, z2, w, cfg.temperature),
        Method::Vicreg => vicreg_with_grad(z1, z2, w, &VicregParams::from_config(cfg, weighted)),
        Method::Barlow => barlow_with_grad(z1, z2, w, cfg.barlow_lambda, cfg.epsilon),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn simclr_identity_example() {
        let z = Array2::<f64>::eye(2);
        let l = simclr_loss(z.view(), z.view(), &[1.0, 1.0], 1.0).unwrap();
        assert_abs_diff_eq!(l, (1.0 + 2.0 / std::f64::consts::E).ln(), epsilon = 1e-12);
    }

    #[test]
    fn weights_scale_simclr_linearly() {
        let z1 = array![[1.0, 0.2], [0.3, -1.0], [0.5, 0.5]];
        let z2 = array![[0.9, 0.1], [0.2, -0.8], [-0.5, 0.4]];
        let full = simclr_loss(z1.view(), z2.view(), &[1.0; 3], 0.5).unwrap();
        let half = simclr_loss(z1.view(), z2.view(), &[0.5; 3], 0.5).unwrap();
        assert_abs_diff_eq!(half, 0.5 * full, epsilon = 1e-12);
        assert!(simclr_with_grad(z1.view(), z2.view(), &[0.0; 3], 0.5).is_err());
    }

    #[test]
    fn vicreg_invariance_is_weighted_mean_square_distance() {
        let z1 = array![[0.0, 0.0], [1.0, 1.0]];
        let z2 = array![[1.0, 0.0], [1.0, 3.0]];
        let p = VicregParams {
            lambda: 1.0,
            mu: 0.0,
            nu: 0.0,
            gamma: 1.0,
            epsilon: 1e-4,
            invariance: InvarianceScale::Sum,
        };
        let r = vicreg_loss(z1.view(), z2.view(), &[1.0, 0.5], &p).unwrap();
        // (1 * 1 + 0.5 * 4) / 2
        assert_abs_diff_eq!(r.terms["invariance"], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.total, 1.5, epsilon = 1e-12);
        let p = VicregParams {
            invariance: InvarianceScale::Mean,
            ..p
        };
        let r = vicreg_loss(z1.view(), z2.view(), &[1.0, 0.5], &p).unwrap();
        assert_abs_diff_eq!(r.terms["invariance"], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn vicreg_reports_doubled_coefficient_when_weighted() {
        let cfg = ObjectiveConfig::default();
        let z = array![[0.0, 1.0], [1.0, 0.0]];
        let r = compute(Method::Vicreg, &cfg, z.view(), z.view(), &[1.0, 1.0], true).unwrap();
        assert_eq!(r.report.coefficients["invariance"], 50.0);
        let r = compute(Method::Vicreg, &cfg, z.view(), z.view(), &[1.0, 1.0], false).unwrap();
        assert_eq!(r.report.coefficients["invariance"], 25.0);
    }

    #[test]
    fn weighted_moments_example() {
        let z = array![[0.0], [4.0]];
        let (m, s) = weighted_moments(z.view(), &[1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(m[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[0], 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn perfectly_correlated_views_have_unit_diagonal() {
        let z = array![[1.0, -2.0], [3.0, 0.5], [-1.0, 4.0], [0.0, 0.0]];
        let c = weighted_cross_correlation(z.view(), z.view(), &[1.0, 0.5, 2.0, 0.25], 0.0).unwrap();
        assert_abs_diff_eq!(c[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[[1, 1]], 1.0, epsilon = 1e-12);
        let r = barlow_loss(z.view(), z.view(), &[1.0; 4], 5e-3, 0.0).unwrap();
        assert_abs_diff_eq!(r.terms["invariance"], 0.0, epsilon = 1e-20);
    }

    #[test]
    fn zero_weight_pairs_do_not_move_barlow_invariance() {
        let z1 = array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [5.0, -3.0]];
        let mut z2 = z1.clone() * 2.0;
        let base = barlow_loss(z1.view(), z2.view(), &[1.0, 1.0, 1.0, 0.0], 0.0, 1e-9).unwrap();
        z2[[3, 0]] = 100.0;
        let moved = barlow_loss(z1.view(), z2.view(), &[1.0, 1.0, 1.0, 0.0], 0.0, 1e-9).unwrap();
        assert_abs_diff_eq!(base.total, moved.total, epsilon = 1e-12);
    }

    #[test]
    fn input_validation() {
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(simclr_loss(z.view(), z.view(), &[1.0], 0.1).is_err());
        assert!(simclr_loss(z.view(), z.view(), &[1.0, -1.0], 0.1).is_err());
        assert!(simclr_loss(z.view(), z.view(), &[1.0, 1.0], 0.0).is_err());
        assert!(barlow_loss(z.view(), z.view(), &[0.0, 0.0], 5e-3, 1e-4).is_err());
        let one = array![[1.0, 0.0]];
        let p = VicregParams::from_config(&ObjectiveConfig::default(), false);
        assert!(vicreg_loss(one.view(), one.view(), &[1.0], &p).is_err());
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(matches!(simclr_loss(empty.view(), empty.view(), &[], 0.1), Err(Error::Empty(_))));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("byol".parse::<Method>().is_err());
    }
}
