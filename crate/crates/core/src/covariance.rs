//! Dependence-window sandwich covariances.
//!
//! For a subject net the γ and δ coefficients of every group present are
//! stacked into one vector: scale groups in label order, then shape groups
//! in label order, each group contributing its coefficients in covariate
//! order. With per-cell scores `s_{i,t}` in that layout,
//!
//! - `Ĥ = Σ s sᵀ` over cells,
//! - `S_t = Σ_i s_{i,t}` and `V̂ = Σ_t S_t S_tᵀ + Σ_{l=1..m} Σ_t (S_{t−l} S_tᵀ + S_t S_{t−l}ᵀ)`,
//! - `cov = Ĥ⁻¹ V̂ Ĥ⁻¹`.
//!
//! Times without an excess contribute nothing.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimate::{dot, FitResult, RegressionParams};
use crate::gpd::link_derivatives;
use crate::panel::{derive_nets, one_based, ExcessPanel, GroupAssignment, SubjectNet};

/// Condition number above which `Ĥ` counts as singular.
pub const MAX_CONDITION: f64 = 1e12;
/// Relative ridge added once to a near-singular `Ĥ`.
pub const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Largest lag `m` at which excesses may be dependent.
    pub window: usize,
}

impl WindowConfig {
    pub fn new(window: usize) -> Self {
        Self { window }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Scale,
    Shape,
}

/// One stacked coefficient: `coef`-th entry of γ or δ of group `group`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamKey {
    pub level: Level,
    #[serde(with = "one_based::scalar")]
    pub group: usize,
    pub coef: usize,
}

impl std::fmt::Display for ParamKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self.level {
            Level::Scale => "gamma",
            Level::Shape => "delta",
        };
        write!(f, "{name}_{},{}", self.group + 1, self.coef)
    }
}

mod matrix_rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        use serde::de::Error as _;
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(D::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_row_iterator(n, c, rows.into_iter().flatten()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichResult {
    pub net: SubjectNet,
    pub window: usize,
    #[serde(with = "matrix_rows")]
    pub v_hat: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub h_hat: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub cov: DMatrix<f64>,
    /// Row `k` of the matrices belongs to `param_index[k]`.
    pub param_index: Vec<ParamKey>,
    /// A ridge was added to `Ĥ` before solving.
    pub ridge_added: bool,
    pub h_condition: f64,
    /// Smallest eigenvalue of `cov`; below `-1e-10` signals a PSD violation.
    pub cov_min_eigenvalue: f64,
}

impl SandwichResult {
    pub fn index_of(&self, key: &ParamKey) -> Option<usize> {
        self.param_index.iter().position(|k| k == key)
    }

    pub fn is_psd(&self) -> bool {
        self.cov_min_eigenvalue >= -1e-10
    }
}

/// Stacked coordinate layout of a set of scale and shape groups.
struct Layout {
    keys: Vec<ParamKey>,
    scale_offset: BTreeMap<usize, usize>,
    shape_offset: BTreeMap<usize, usize>,
}

impl Layout {
    fn new(scale_labels: &[usize], shape_labels: &[usize], dg: usize, dd: usize) -> Self {
        let mut keys = Vec::new();
        let mut scale_offset = BTreeMap::new();
        let mut shape_offset = BTreeMap::new();
        for &g in scale_labels {
            scale_offset.insert(g, keys.len());
            keys.extend((0..dg).map(|c| ParamKey {
                level: Level::Scale,
                group: g,
                coef: c,
            }));
        }
        for &g in shape_labels {
            shape_offset.insert(g, keys.len());
            keys.extend((0..dd).map(|c| ParamKey {
                level: Level::Shape,
                group: g,
                coef: c,
            }));
        }
        Self {
            keys,
            scale_offset,
            shape_offset,
        }
    }

    fn dim(&self) -> usize {
        self.keys.len()
    }
}

/// Per-cell scores of `members`, embedded in the layout, keyed by time.
fn cell_scores(
    panel: &ExcessPanel,
    members: &[usize],
    a: &GroupAssignment,
    params: &RegressionParams,
    layout: &Layout,
) -> Result<Vec<(usize, DVector<f64>)>> {
    let (dg, dd) = (panel.dim_gamma(), panel.dim_delta());
    let mut out = Vec::new();
    for &i in members {
        let s = panel.subject(i);
        let (ga, da) = (a.scale()[i], a.shape()[i]);
        let (g, d) = (&params.gamma[ga], &params.delta[da]);
        let og = *layout
            .scale_offset
            .get(&ga)
            .ok_or_else(|| Error::InvalidArgument(format!("subject {} uses a scale group outside the net", i + 1)))?;
        let od = *layout
            .shape_offset
            .get(&da)
            .ok_or_else(|| Error::InvalidArgument(format!("subject {} uses a shape group outside the net", i + 1)))?;
        for k in 0..s.len() {
            let xs = s.scale_x(k);
            let xd = s.shape_x(k);
            let sigma = dot(g, xs).exp();
            let xi = dot(d, xd);
            let l = link_derivatives(s.excess()[k], sigma, xi)
                .ok_or_else(|| Error::Support(format!("subject {}, time {}", i + 1, s.times()[k])))?;
            let mut v = DVector::zeros(layout.dim());
            for c in 0..dg {
                v[og + c] = l.d_eta * xs[c];
            }
            for c in 0..dd {
                v[od + c] = l.d_shape * xd[c];
            }
            out.push((s.times()[k], v));
        }
    }
    Ok(out)
}

/// `Ĥ` and `V̂` from embedded scores.
fn outer_sums(scores: &[(usize, DVector<f64>)], dim: usize, window: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut h = DMatrix::zeros(dim, dim);
    let mut by_time: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for (t, s) in scores {
        h.ger(1.0, s, s, 1.0);
        by_time
            .entry(*t)
            .and_modify(|acc| *acc += s)
            .or_insert_with(|| s.clone());
    }
    let agg: Vec<(usize, DVector<f64>)> = by_time.into_iter().collect();
    let mut v = DMatrix::zeros(dim, dim);
    for (j, (t, s)) in agg.iter().enumerate() {
        v.ger(1.0, s, s, 1.0);
        // Earlier times within the window.
        for (t0, s0) in agg[..j].iter().rev() {
            if t - t0 > window {
                break;
            }
            v.ger(1.0, s0, s, 1.0);
            v.ger(1.0, s, s0, 1.0);
        }
    }
    (h, v)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for a in 0..n {
        for b in 0..a {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

fn condition(h: &DMatrix<f64>) -> f64 {
    let e = SymmetricEigen::new(h.clone()).eigenvalues;
    let (lo, hi) = (e.min(), e.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn sandwich_core(
    panel: &ExcessPanel,
    net: SubjectNet,
    a: &GroupAssignment,
    params: &RegressionParams,
    cfg: WindowConfig,
) -> Result<SandwichResult> {
    if cfg.window >= panel.n_times() {
        return Err(Error::InvalidArgument(format!(
            "window {} must be below T = {}",
            cfg.window,
            panel.n_times()
        )));
    }
    let layout = Layout::new(
        &net.scale_labels,
        &net.shape_labels,
        panel.dim_gamma(),
        panel.dim_delta(),
    );
    let scores = cell_scores(panel, &net.members, a, params, &layout)?;
    let dim = layout.dim();
    let (mut h, mut v) = outer_sums(&scores, dim, cfg.window);
    symmetrize(&mut h);
    symmetrize(&mut v);
    let subject = net.members.first().map_or(0, |m| m + 1);
    let mut cond = condition(&h);
    let mut ridge_added = false;
    let mut h_solve = h.clone();
    if cond > MAX_CONDITION {
        let tr = h.trace();
        if !(tr > 0.0) {
            return Err(Error::SingularHessian {
                subject,
                condition: cond,
            });
        }
        for k in 0..dim {
            h_solve[(k, k)] += RIDGE * tr / dim as f64;
        }
        ridge_added = true;
        cond = condition(&h_solve);
        if cond > MAX_CONDITION {
            return Err(Error::SingularHessian {
                subject,
                condition: cond,
            });
        }
    }
    let chol = h_solve.clone().cholesky().ok_or(Error::SingularHessian {
        subject,
        condition: cond,
    })?;
    let hv = chol.solve(&v);
    let mut cov = chol.solve(&hv.transpose());
    symmetrize(&mut cov);
    let cov_min_eigenvalue = SymmetricEigen::new(cov.clone()).eigenvalues.min();
    Ok(SandwichResult {
        net,
        window: cfg.window,
        v_hat: v,
        h_hat: h,
        cov,
        param_index: layout.keys,
        ridge_added,
        h_condition: cond,
        cov_min_eigenvalue,
    })
}

/// Sandwich covariance over all coefficients of one subject net.
pub fn sandwich_net(
    panel: &ExcessPanel,
    net: &SubjectNet,
    a: &GroupAssignment,
    params: &RegressionParams,
    cfg: WindowConfig,
) -> Result<SandwichResult> {
    sandwich_core(panel, net.clone(), a, params, cfg)
}

/// One sandwich per subject net of the fit's assignment.
pub fn sandwich_all(panel: &ExcessPanel, fit: &FitResult, cfg: WindowConfig) -> Result<Vec<SandwichResult>> {
    derive_nets(&fit.assignment)
        .iter()
        .map(|net| sandwich_net(panel, net, &fit.assignment, &fit.params, cfg))
        .collect()
}

/// Block-wise approximation for scale group `tau`: the sandwich built from
/// the subjects of that group alone, over `γ_τ` and the shape groups they
/// use, keeping the `dim(γ) × dim(γ)` block of `γ_τ`.
pub fn sandwich_blockwise(
    panel: &ExcessPanel,
    a: &GroupAssignment,
    params: &RegressionParams,
    tau: usize,
    cfg: WindowConfig,
) -> Result<DMatrix<f64>> {
    let members = a.scale_members(tau);
    if members.is_empty() {
        return Err(Error::EmptyGroup {
            level: "scale",
            group: tau + 1,
        });
    }
    let mut shapes: Vec<usize> = members.iter().map(|&i| a.shape()[i]).collect();
    shapes.sort_unstable();
    shapes.dedup();
    let block = SubjectNet {
        members,
        scale_labels: vec![tau],
        shape_labels: shapes,
    };
    let r = sandwich_core(panel, block, a, params, cfg)?;
    let dg = panel.dim_gamma();
    Ok(r.cov.view((0, 0), (dg, dg)).into_owned())
}

/// Sum of embedded scores over the net's cells: the gradient of the
/// composite log-likelihood in the stacked coordinates.
pub fn stacked_gradient(
    panel: &ExcessPanel,
    net: &SubjectNet,
    a: &GroupAssignment,
    params: &RegressionParams,
) -> Result<(Vec<ParamKey>, DVector<f64>)> {
    let layout = Layout::new(
        &net.scale_labels,
        &net.shape_labels,
        panel.dim_gamma(),
        panel.dim_delta(),
    );
    let scores = cell_scores(panel, &net.members, a, params, &layout)?;
    let mut g = DVector::zeros(layout.dim());
    for (_, s) in &scores {
        g += s;
    }
    Ok((layout.keys, g))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaldInterval {
    pub key: ParamKey,
    pub estimate: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    /// Zero variance: the interval collapses to the estimate.
    pub degenerate: bool,
}

/// `θ̂ ± z_{(1+level)/2} · se` for every coefficient of the fit.
pub fn wald_intervals(fit: &FitResult, sandwiches: &[SandwichResult], level: f64) -> Result<Vec<WaldInterval>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must be in (0,1), got {level}")));
    }
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + level));
    let mut out = Vec::new();
    let keys = fit
        .params
        .gamma
        .iter()
        .enumerate()
        .flat_map(|(g, v)| {
            (0..v.len()).map(move |c| {
                (
                    ParamKey {
                        level: Level::Scale,
                        group: g,
                        coef: c,
                    },
                    v[c],
                )
            })
        })
        .chain(fit.params.delta.iter().enumerate().flat_map(|(g, v)| {
            (0..v.len()).map(move |c| {
                (
                    ParamKey {
                        level: Level::Shape,
                        group: g,
                        coef: c,
                    },
                    v[c],
                )
            })
        }));
    for (key, est) in keys {
        let var = sandwiches
            .iter()
            .find_map(|s| s.index_of(&key).map(|k| s.cov[(k, k)]))
            .ok_or_else(|| Error::MissingCovariance(key.to_string()))?;
        let se = var.max(0.0).sqrt();
        out.push(WaldInterval {
            key,
            estimate: est,
            se,
            lo: est - z * se,
            hi: est + z * se,
            degenerate: se == 0.0,
        });
    }
    Ok(out)
}

/// Covariance of `(σ, ξ)` for subject `i` at covariate vector `x`
/// (intercept first), by the delta method through the links.
pub fn subject_gp_covariance(
    panel: &ExcessPanel,
    fit: &FitResult,
    sandwiches: &[SandwichResult],
    i: usize,
    x: &[f64],
) -> Result<DMatrix<f64>> {
    let (ga, da) = (fit.assignment.scale()[i], fit.assignment.shape()[i]);
    let s = sandwiches
        .iter()
        .find(|s| s.net.members.contains(&i))
        .ok_or_else(|| Error::MissingCovariance(format!("subject {}", i + 1)))?;
    let (dg, dd) = (panel.dim_gamma(), panel.dim_delta());
    let xs: Vec<f64> = panel.scale_cols().iter().map(|&c| x[c]).collect();
    let xd: Vec<f64> = panel.shape_cols().iter().map(|&c| x[c]).collect();
    let sigma = dot(&fit.params.gamma[ga], &xs).exp();
    let mut rows = Vec::with_capacity(dg + dd);
    let mut jac = Vec::with_capacity(dg + dd);
    for c in 0..dg {
        let k = s
            .index_of(&ParamKey {
                level: Level::Scale,
                group: ga,
                coef: c,
            })
            .ok_or_else(|| Error::MissingCovariance(format!("gamma_{},{c}", ga + 1)))?;
        rows.push(k);
        jac.push((sigma * xs[c], 0.0));
    }
    for c in 0..dd {
        let k = s
            .index_of(&ParamKey {
                level: Level::Shape,
                group: da,
                coef: c,
            })
            .ok_or_else(|| Error::MissingCovariance(format!("delta_{},{c}", da + 1)))?;
        rows.push(k);
        jac.push((0.0, xd[c]));
    }
    let mut out = DMatrix::zeros(2, 2);
    for (p, &rp) in rows.iter().enumerate() {
        for (q, &rq) in rows.iter().enumerate() {
            let c = s.cov[(rp, rq)];
            out[(0, 0)] += jac[p].0 * c * jac[q].0;
            out[(0, 1)] += jac[p].0 * c * jac[q].1;
            out[(1, 0)] += jac[p].1 * c * jac[q].0;
            out[(1, 1)] += jac[p].1 * c * jac[q].1;
        }
    }
    symmetrize(&mut out);
    Ok(out)
}
