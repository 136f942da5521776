//! Composite log-likelihood of the grouped GP regression and its block
//! coordinate ascent (BCA) maximizer.
//!
//! Links: `σ_{i,t} = exp(γᵀx)` and `ξ_{i,t} = δᵀx`, with the scale and shape
//! covariates taken from the panel's design masks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::SandwichResult;
use crate::error::{Error, Result};
use crate::gpd::{cell_loglik_log_scale, link_derivatives, SHAPE_LOWER, SHAPE_UPPER};
use crate::optim::{minimize_with_restart, newton_refine, Bounds, NelderMead};
use crate::panel::{derive_nets, ExcessPanel, GroupAssignment, SubjectNet, SubjectSeries};

/// Box for every scale coefficient.
pub const GAMMA_BOX: f64 = 50.0;
/// Box for non-intercept shape coefficients (the per-cell shape is still
/// confined to `[SHAPE_LOWER, SHAPE_UPPER]`).
pub const DELTA_BOX: f64 = 10.0;
/// Draws allowed when searching for a feasible random initialization.
pub const INIT_DRAWS: usize = 100;

/// Per-group regression coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionParams {
    /// `gamma[τ]` is γ of scale group τ.
    pub gamma: Vec<Vec<f64>>,
    /// `delta[τ]` is δ of shape group τ.
    pub delta: Vec<Vec<f64>>,
}

impl RegressionParams {
    pub fn new(gamma: Vec<Vec<f64>>, delta: Vec<Vec<f64>>) -> Self {
        Self { gamma, delta }
    }

    fn check(&self, panel: &ExcessPanel, a: &GroupAssignment) -> Result<()> {
        if a.n_subjects() != panel.n_subjects() {
            return Err(Error::Dimension(format!(
                "assignment covers {} subjects, panel has {}",
                a.n_subjects(),
                panel.n_subjects()
            )));
        }
        if self.gamma.len() != a.g_scale() || self.delta.len() != a.g_shape() {
            return Err(Error::Dimension(format!(
                "parameters have {}/{} groups, assignment has {}/{}",
                self.gamma.len(),
                self.delta.len(),
                a.g_scale(),
                a.g_shape()
            )));
        }
        if self.gamma.iter().any(|g| g.len() != panel.dim_gamma())
            || self.delta.iter().any(|d| d.len() != panel.dim_delta())
        {
            return Err(Error::Dimension(format!(
                "coefficient vectors must have lengths dim(γ) = {} and dim(δ) = {}",
                panel.dim_gamma(),
                panel.dim_delta()
            )));
        }
        if self.gamma.iter().chain(&self.delta).flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression coefficients".into()));
        }
        Ok(())
    }

    /// Largest absolute coordinate difference.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.gamma
            .iter()
            .flatten()
            .zip(other.gamma.iter().flatten())
            .chain(self.delta.iter().flatten().zip(other.delta.iter().flatten()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-likelihood of one subject's excesses under coefficients `gamma`, `delta`.
/// `-inf` if any excess is off the support; ignores the shape box.
pub fn subject_loglik(s: &SubjectSeries, gamma: &[f64], delta: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..s.len() {
        let eta = dot(gamma, s.scale_x(k));
        let xi = dot(delta, s.shape_x(k));
        total += cell_loglik_log_scale(s.excess()[k], eta, xi);
    }
    total
}

/// Composite log-likelihood: sum of GP log-likelihoods over all stored
/// excesses, `-inf` on a support violation.
pub fn comp_loglik(panel: &ExcessPanel, a: &GroupAssignment, params: &RegressionParams) -> Result<f64> {
    params.check(panel, a)?;
    Ok(loglik_unchecked(panel, a.scale(), a.shape(), params))
}

pub(crate) fn loglik_unchecked(
    panel: &ExcessPanel,
    scale: &[usize],
    shape: &[usize],
    params: &RegressionParams,
) -> f64 {
    (0..panel.n_subjects())
        .map(|i| subject_loglik(panel.subject(i), &params.gamma[scale[i]], &params.delta[shape[i]]))
        .sum()
}

/// True when every stored excess has its shape inside the estimation box.
pub fn shapes_in_box(panel: &ExcessPanel, shape: &[usize], params: &RegressionParams) -> bool {
    (0..panel.n_subjects()).all(|i| {
        let s = panel.subject(i);
        let d = &params.delta[shape[i]];
        (0..s.len()).all(|k| {
            let xi = dot(d, s.shape_x(k));
            (SHAPE_LOWER..=SHAPE_UPPER).contains(&xi)
        })
    })
}

/// `−2ℓ + ln(n)·(dim(γ)·G_γ + dim(δ)·G_δ)`.
pub fn bic(
    comp_loglik: f64,
    n_excess: usize,
    dim_gamma: usize,
    g_scale: usize,
    dim_delta: usize,
    g_shape: usize,
) -> f64 {
    -2.0 * comp_loglik + (n_excess as f64).ln() * (dim_gamma * g_scale + dim_delta * g_shape) as f64
}

/// Settings of the BCA fitter and its inner block solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BcaConfig {
    /// Stop once no coefficient moves more than this over a full cycle.
    pub eps: f64,
    pub max_iter: usize,
    /// Inner simplex tolerance on the block objective.
    pub inner_ftol: f64,
    /// Inner simplex tolerance on the coefficients.
    pub inner_xtol: f64,
    /// Finish each block solve with safeguarded Newton steps.
    pub polish: bool,
}

impl Default for BcaConfig {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_iter: 200,
            inner_ftol: 1e-8,
            inner_xtol: 1e-7,
            polish: true,
        }
    }
}

impl BcaConfig {
    fn simplex(&self, dim: usize) -> NelderMead {
        NelderMead {
            initial_step: 0.1,
            ftol: self.inner_ftol,
            xtol: self.inner_xtol,
            max_evals: 1000 + 1000 * dim,
        }
    }
}

/// Cached data of one scale block: excesses with their (fixed) shapes.
struct ScaleBlock {
    z: Vec<f64>,
    xi: Vec<f64>,
    x: Vec<f64>,
    dim: usize,
}

impl ScaleBlock {
    fn new(panel: &ExcessPanel, members: &[usize], shape: &[usize], params: &RegressionParams) -> Self {
        let dim = panel.dim_gamma();
        let mut b = ScaleBlock {
            z: Vec::new(),
            xi: Vec::new(),
            x: Vec::new(),
            dim,
        };
        for &i in members {
            let s = panel.subject(i);
            let d = &params.delta[shape[i]];
            for k in 0..s.len() {
                b.z.push(s.excess()[k]);
                b.xi.push(dot(d, s.shape_x(k)));
                b.x.extend_from_slice(s.scale_x(k));
            }
        }
        b
    }

    fn len(&self) -> usize {
        self.z.len()
    }

    fn negloglik(&self, g: &[f64]) -> f64 {
        let mut total = 0.0;
        for c in 0..self.len() {
            let eta = dot(g, &self.x[c * self.dim..(c + 1) * self.dim]);
            let v = cell_loglik_log_scale(self.z[c], eta, self.xi[c]);
            if v == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            total += v;
        }
        -total
    }

    fn derivs(&self, g: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let p = self.dim;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for c in 0..self.len() {
            let x = &self.x[c * p..(c + 1) * p];
            let scale = dot(g, x).exp();
            let d = link_derivatives(self.z[c], scale, self.xi[c])?;
            for a in 0..p {
                grad[a] -= d.d_eta * x[a];
                for b in 0..=a {
                    hess[(a, b)] -= d.d_eta_eta * x[a] * x[b];
                }
            }
        }
        symmetrize_lower(&mut hess);
        Some((grad, hess))
    }
}

/// Cached data of one shape block: standardized excesses `z/σ`.
struct ShapeBlock {
    y: Vec<f64>,
    sum_log_scale: f64,
    x: Vec<f64>,
    dim: usize,
}

impl ShapeBlock {
    fn new(panel: &ExcessPanel, members: &[usize], scale: &[usize], params: &RegressionParams) -> Self {
        let dim = panel.dim_delta();
        let mut b = ShapeBlock {
            y: Vec::new(),
            sum_log_scale: 0.0,
            x: Vec::new(),
            dim,
        };
        for &i in members {
            let s = panel.subject(i);
            let g = &params.gamma[scale[i]];
            for k in 0..s.len() {
                let eta = dot(g, s.scale_x(k));
                b.sum_log_scale += eta;
                b.y.push(s.excess()[k] * (-eta).exp());
                b.x.extend_from_slice(s.shape_x(k));
            }
        }
        b
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    fn negloglik(&self, d: &[f64]) -> f64 {
        let mut total = -self.sum_log_scale;
        for c in 0..self.len() {
            let xi = dot(d, &self.x[c * self.dim..(c + 1) * self.dim]);
            if !(SHAPE_LOWER..=SHAPE_UPPER).contains(&xi) {
                return f64::INFINITY;
            }
            let v = cell_loglik_log_scale(self.y[c], 0.0, xi);
            if v == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            total += v;
        }
        -total
    }

    fn derivs(&self, d: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let p = self.dim;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for c in 0..self.len() {
            let x = &self.x[c * p..(c + 1) * p];
            let xi = dot(d, x);
            let l = link_derivatives(self.y[c], 1.0, xi)?;
            for a in 0..p {
                grad[a] -= l.d_shape * x[a];
                for b in 0..=a {
                    hess[(a, b)] -= l.d_shape_shape * x[a] * x[b];
                }
            }
        }
        symmetrize_lower(&mut hess);
        Some((grad, hess))
    }
}

fn symmetrize_lower(h: &mut DMatrix<f64>) {
    let p = h.nrows();
    for a in 0..p {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
}

fn shape_bounds(dim: usize) -> Bounds {
    if dim == 1 {
        Bounds::uniform(1, SHAPE_LOWER, SHAPE_UPPER)
    } else {
        Bounds::uniform(dim, -DELTA_BOX, DELTA_BOX)
    }
}

/// Outcome of one block update.
#[derive(Debug, Clone)]
pub struct BlockFit {
    pub coef: Vec<f64>,
    /// Partial log-likelihood of the block at `coef`.
    pub loglik: f64,
    /// Partial log-likelihood at the starting coefficients.
    pub start_loglik: f64,
}

fn is_interior_minimum<D>(derivs: &D, x: &[f64], bounds: &Bounds) -> bool
where
    D: Fn(&[f64]) -> Option<(DVector<f64>, DMatrix<f64>)>,
{
    const GRAD_TOL: f64 = 1e-7;
    let interior = x
        .iter()
        .enumerate()
        .all(|(k, &v)| v > bounds.lower[k] && v < bounds.upper[k]);
    if !interior {
        return false;
    }
    let Some((grad, hess)) = derivs(x) else {
        return false;
    };
    let Some(chol) = hess.clone().cholesky() else {
        return false;
    };
    // Newton decrement: invariant to the scale of the coefficients.
    let dec = grad.dot(&chol.solve(&grad));
    dec.is_finite() && dec < GRAD_TOL * GRAD_TOL && grad.amax() < GRAD_TOL * (1.0 + hess.amax())
}

fn solve_block<F, D>(f: F, derivs: D, start: &[f64], bounds: &Bounds, cfg: &BcaConfig) -> Result<(Vec<f64>, f64, f64)>
where
    F: Fn(&[f64]) -> f64,
    D: Fn(&[f64]) -> Option<(DVector<f64>, DMatrix<f64>)>,
{
    let mut x0 = start.to_vec();
    for (k, v) in x0.iter_mut().enumerate() {
        *v = v.clamp(bounds.lower[k], bounds.upper[k]);
    }
    let f0 = f(&x0);
    if !f0.is_finite() {
        return Err(Error::Optimizer(
            "block objective is infeasible at the starting point".into(),
        ));
    }
    if cfg.polish {
        // Warm starts are usually close to the block optimum, where Newton
        // converges in a few steps. Accept only a strict interior minimum
        // with a vanishing gradient; anything else goes to the simplex.
        let mut x = x0.clone();
        let mut value = f0;
        newton_refine(&f, &derivs, &mut x, &mut value, bounds, 30);
        if is_interior_minimum(&derivs, &x, bounds) {
            return Ok((x, -value, -f0));
        }
    }
    let m = minimize_with_restart(&cfg.simplex(start.len()), &f, &x0, bounds)?;
    let mut x = m.x;
    let mut value = m.value;
    if cfg.polish {
        newton_refine(&f, &derivs, &mut x, &mut value, bounds, 20);
    }
    Ok((x, -value, -f0))
}

/// Maximizes the composite log-likelihood over `γ_τ` for the subjects of
/// scale group `tau`, holding every δ (and every other γ) fixed. The start
/// point is `params.gamma[tau]`.
pub fn fit_block_scale(
    panel: &ExcessPanel,
    a: &GroupAssignment,
    tau: usize,
    params: &RegressionParams,
    cfg: &BcaConfig,
) -> Result<BlockFit> {
    params.check(panel, a)?;
    if tau >= a.g_scale() {
        return Err(Error::InvalidArgument(format!(
            "scale group {} does not exist",
            tau + 1
        )));
    }
    fit_scale_members(panel, &a.scale_members(tau), a.shape(), &params.gamma[tau], params, cfg)
}

pub(crate) fn fit_scale_members(
    panel: &ExcessPanel,
    members: &[usize],
    shape: &[usize],
    start: &[f64],
    params: &RegressionParams,
    cfg: &BcaConfig,
) -> Result<BlockFit> {
    let block = ScaleBlock::new(panel, members, shape, params);
    if block.len() == 0 {
        return Err(Error::InvalidArgument("scale group has no excesses".into()));
    }
    let bounds = Bounds::uniform(block.dim, -GAMMA_BOX, GAMMA_BOX);
    let (coef, loglik, start_loglik) = solve_block(|g| block.negloglik(g), |g| block.derivs(g), start, &bounds, cfg)?;
    Ok(BlockFit {
        coef,
        loglik,
        start_loglik,
    })
}

/// Mirror of [`fit_block_scale`] for `δ_τ` of shape group `tau`, with the
/// implied shapes kept in `[SHAPE_LOWER, SHAPE_UPPER]`.
pub fn fit_block_shape(
    panel: &ExcessPanel,
    a: &GroupAssignment,
    tau: usize,
    params: &RegressionParams,
    cfg: &BcaConfig,
) -> Result<BlockFit> {
    params.check(panel, a)?;
    if tau >= a.g_shape() {
        return Err(Error::InvalidArgument(format!(
            "shape group {} does not exist",
            tau + 1
        )));
    }
    fit_shape_members(panel, &a.shape_members(tau), a.scale(), &params.delta[tau], params, cfg)
}

pub(crate) fn fit_shape_members(
    panel: &ExcessPanel,
    members: &[usize],
    scale: &[usize],
    start: &[f64],
    params: &RegressionParams,
    cfg: &BcaConfig,
) -> Result<BlockFit> {
    let block = ShapeBlock::new(panel, members, scale, params);
    if block.len() == 0 {
        return Err(Error::InvalidArgument("shape group has no excesses".into()));
    }
    let bounds = shape_bounds(block.dim);
    let (coef, loglik, start_loglik) = solve_block(|d| block.negloglik(d), |d| block.derivs(d), start, &bounds, cfg)?;
    Ok(BlockFit {
        coef,
        loglik,
        start_loglik,
    })
}

/// Fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: RegressionParams,
    pub assignment: GroupAssignment,
    pub comp_loglik: f64,
    pub n_excess: usize,
    pub bic: f64,
    /// One sandwich per subject net, when computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<SandwichResult>>,
    pub iterations: usize,
    pub converged: bool,
    /// Composite log-likelihood after each full cycle (index 0 is the start).
    #[serde(default)]
    pub trace: Vec<f64>,
}

impl FitResult {
    pub(crate) fn assemble(
        panel: &ExcessPanel,
        assignment: GroupAssignment,
        params: RegressionParams,
        iterations: usize,
        converged: bool,
        trace: Vec<f64>,
    ) -> Self {
        let cl = loglik_unchecked(panel, assignment.scale(), assignment.shape(), &params);
        let n = panel.n_excess();
        let bic = bic(
            cl,
            n,
            panel.dim_gamma(),
            assignment.g_scale(),
            panel.dim_delta(),
            assignment.g_shape(),
        );
        FitResult {
            params,
            assignment,
            comp_loglik: cl,
            n_excess: n,
            bic,
            covariance: None,
            iterations,
            converged,
            trace,
        }
    }

    /// Scale and shape of subject `i` at covariate vector `x` (intercept first).
    pub fn subject_params_at(&self, panel: &ExcessPanel, i: usize, x: &[f64]) -> (f64, f64) {
        let xs: Vec<f64> = panel.scale_cols().iter().map(|&c| x[c]).collect();
        let xd: Vec<f64> = panel.shape_cols().iter().map(|&c| x[c]).collect();
        let g = &self.params.gamma[self.assignment.scale()[i]];
        let d = &self.params.delta[self.assignment.shape()[i]];
        (dot(g, &xs).exp(), dot(d, &xd))
    }
}

struct NetOutcome {
    gamma: Vec<(usize, Vec<f64>)>,
    delta: Vec<(usize, Vec<f64>)>,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn net_loglik(panel: &ExcessPanel, a: &GroupAssignment, members: &[usize], params: &RegressionParams) -> f64 {
    members
        .iter()
        .map(|&i| {
            subject_loglik(
                panel.subject(i),
                &params.gamma[a.scale()[i]],
                &params.delta[a.shape()[i]],
            )
        })
        .sum()
}

fn bca_net(
    panel: &ExcessPanel,
    a: &GroupAssignment,
    net: &SubjectNet,
    init: &RegressionParams,
    cfg: &BcaConfig,
) -> Result<NetOutcome> {
    let mut params = init.clone();
    let mut trace = vec![net_loglik(panel, a, &net.members, &params)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut change: f64 = 0.0;
        for &tau in &net.scale_labels {
            let fit = fit_scale_members(
                panel,
                &a.scale_members(tau),
                a.shape(),
                &params.gamma[tau],
                &params,
                cfg,
            )?;
            change = change.max(sup_diff(&fit.coef, &params.gamma[tau]));
            params.gamma[tau] = fit.coef;
        }
        for &tau in &net.shape_labels {
            let fit = fit_shape_members(
                panel,
                &a.shape_members(tau),
                a.scale(),
                &params.delta[tau],
                &params,
                cfg,
            )?;
            change = change.max(sup_diff(&fit.coef, &params.delta[tau]));
            params.delta[tau] = fit.coef;
        }
        trace.push(net_loglik(panel, a, &net.members, &params));
        if change < cfg.eps {
            converged = true;
            break;
        }
    }
    Ok(NetOutcome {
        gamma: net.scale_labels.iter().map(|&t| (t, params.gamma[t].clone())).collect(),
        delta: net.shape_labels.iter().map(|&t| (t, params.delta[t].clone())).collect(),
        iterations,
        converged,
        trace,
    })
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Block coordinate ascent from `init`: each cycle updates the scale groups
/// in label order and then the shape groups, until the sup-norm change over
/// a cycle is below `cfg.eps` or `cfg.max_iter` cycles have run. Subject
/// nets share no coefficients and are fitted independently.
pub fn bca_fit(
    panel: &ExcessPanel,
    a: &GroupAssignment,
    init: &RegressionParams,
    cfg: &BcaConfig,
) -> Result<FitResult> {
    init.check(panel, a)?;
    if !(cfg.eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {}", cfg.eps)));
    }
    let start = comp_loglik(panel, a, init)?;
    if !start.is_finite() || !shapes_in_box(panel, a.shape(), init) {
        return Err(Error::InvalidArgument("initial parameters are infeasible".into()));
    }
    let nets = derive_nets(a);
    let outcomes: Vec<Result<NetOutcome>> = nets.par_iter().map(|net| bca_net(panel, a, net, init, cfg)).collect();
    let mut params = init.clone();
    let mut iterations = 0;
    let mut converged = true;
    let mut traces = Vec::with_capacity(nets.len());
    for out in outcomes {
        let out = out?;
        for (t, g) in out.gamma {
            params.gamma[t] = g;
        }
        for (t, d) in out.delta {
            params.delta[t] = d;
        }
        iterations = iterations.max(out.iterations);
        converged &= out.converged;
        traces.push(out.trace);
    }
    let len = traces.iter().map(Vec::len).max().unwrap_or(1);
    let trace = (0..len)
        .map(|c| traces.iter().map(|t| t[c.min(t.len() - 1)]).sum())
        .collect();
    Ok(FitResult::assemble(
        panel,
        a.clone(),
        params,
        iterations,
        converged,
        trace,
    ))
}

/// Random starting coefficients, redrawn until the composite log-likelihood
/// is finite and every implied shape is in the box.
pub fn random_init<R: Rng + ?Sized>(panel: &ExcessPanel, a: &GroupAssignment, rng: &mut R) -> Result<RegressionParams> {
    random_init_labels(panel, a.scale(), a.shape(), a.g_scale(), a.g_shape(), rng)
}

pub(crate) fn random_init_labels<R: Rng + ?Sized>(
    panel: &ExcessPanel,
    scale: &[usize],
    shape: &[usize],
    g_scale: usize,
    g_shape: usize,
    rng: &mut R,
) -> Result<RegressionParams> {
    let n = panel.n_excess();
    if n == 0 {
        return Err(Error::InvalidArgument("panel has no excesses".into()));
    }
    let mean = panel.subjects().iter().flat_map(|s| s.excess()).sum::<f64>() / n as f64;
    let center = mean.max(1e-12).ln();
    let (dg, dd) = (panel.dim_gamma(), panel.dim_delta());
    for _ in 0..INIT_DRAWS {
        let gamma = (0..g_scale)
            .map(|_| {
                (0..dg)
                    .map(|k| {
                        if k == 0 {
                            rng.gen_range(center - 0.5..center + 0.5)
                        } else {
                            rng.gen_range(-0.25..0.25)
                        }
                    })
                    .collect()
            })
            .collect();
        let delta = (0..g_shape)
            .map(|_| {
                (0..dd)
                    .map(|k| {
                        if k == 0 {
                            rng.gen_range(-0.2..0.3)
                        } else {
                            rng.gen_range(-0.1..0.1)
                        }
                    })
                    .collect()
            })
            .collect();
        let p = RegressionParams { gamma, delta };
        if loglik_unchecked(panel, scale, shape, &p).is_finite() && shapes_in_box(panel, shape, &p) {
            return Ok(p);
        }
    }
    Err(Error::Initialization(INIT_DRAWS))
}
