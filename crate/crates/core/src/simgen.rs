//! Simulation data-generating process and replication studies.
//!
//! Covariates: `X_{i,t} = 0.5 + W_{i,t} + ε_{i,t}` where `W_i` is a stationary
//! AR(1) series with unit marginal variance and `ε_{·,t}` is Gaussian noise
//! correlated within each scale group. Excesses: GP margins at the true
//! coefficients, coupled by a Gaussian copula whose correlation matrix
//! follows the chosen dependence structure; thresholds are zero.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::covariance::{sandwich_all, wald_intervals, WindowConfig};
use crate::error::{Error, Result};
use crate::estimate::{bca_fit, random_init, BcaConfig, RegressionParams};
use crate::gpd::quantile_from_log_survival;
use crate::groupsearch::{
    multistep_fit, rand_index, select_by_bic, two_stage_from_stage1, two_stage_hier_with, SearchConfig,
};
use crate::panel::{subsample_with, ExcessPanel, GroupAssignment, PanelBuilder};
use crate::rng::{child_seed, stream_rng, STREAM_DATA, STREAM_ESTIMATE};

const BURN_IN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dependence {
    Independence,
    CrossSectional,
    BlockWise { m: usize },
}

impl Dependence {
    /// Dependence window matching the structure.
    pub fn window(&self) -> usize {
        match self {
            Dependence::BlockWise { m } => *m,
            _ => 0,
        }
    }
}

/// True coefficients and groups of the simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub params: RegressionParams,
    pub assignment: GroupAssignment,
}

impl Default for Truth {
    fn default() -> Self {
        let params = RegressionParams::new(
            vec![vec![-0.5, 0.3], vec![0.7, 0.2], vec![0.1, -0.3], vec![-0.2, 0.5]],
            vec![vec![-0.1], vec![0.1], vec![0.3]],
        );
        let assignment = GroupAssignment::from_one_based(
            &[1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4],
            &[1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3],
        )
        .expect("valid design");
        Truth { params, assignment }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_times: usize,
    pub truth: Truth,
    pub dependence: Dependence,
    /// Copula correlation of dependent cells in the same scale group.
    pub within_group_corr: f64,
    /// Copula correlation of dependent cells in different scale groups.
    pub between_group_corr: f64,
    /// Correlation of covariate noise within a scale group.
    pub covariate_noise_corr: f64,
    /// AR(1) coefficients are drawn uniformly from this range.
    pub ar_coef_range: (f64, f64),
    pub sample_fraction: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_times: 2000,
            truth: Truth::default(),
            dependence: Dependence::BlockWise { m: 4 },
            within_group_corr: 0.9,
            between_group_corr: 0.1,
            covariate_noise_corr: 0.5,
            ar_coef_range: (-0.5, 0.5),
            sample_fraction: 0.1,
            seed: 1,
        }
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

impl SimConfig {
    pub fn n_subjects(&self) -> usize {
        self.truth.assignment.n_subjects()
    }

    /// Correlation between subjects `i` and `j` for dependent cells.
    fn pair_corr(&self, i: usize, j: usize) -> f64 {
        let s = self.truth.assignment.scale();
        if s[i] == s[j] {
            self.within_group_corr
        } else {
            self.between_group_corr
        }
    }

    /// Copula correlation of one dependence block, cells ordered time-major.
    pub fn block_correlation(&self) -> DMatrix<f64> {
        let n = self.n_subjects();
        let m = match self.dependence {
            Dependence::Independence => return DMatrix::identity(n, n),
            Dependence::CrossSectional => 1,
            Dependence::BlockWise { m } => m,
        };
        let dim = n * m;
        DMatrix::from_fn(dim, dim, |a, b| if a == b { 1.0 } else { self.pair_corr(a % n, b % n) })
    }

    /// Covariance of the covariate noise of scale group `tau`.
    fn noise_cov(&self, size: usize) -> DMatrix<f64> {
        DMatrix::from_fn(size, size, |a, b| if a == b { 1.0 } else { self.covariate_noise_corr })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_subjects();
        if self.n_times < n {
            return Err(Error::InvalidArgument(format!(
                "T = {} must be at least N = {n}",
                self.n_times
            )));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::InvalidArgument("sample fraction must be in (0,1]".into()));
        }
        let (lo, hi) = self.ar_coef_range;
        if !(lo <= hi && lo > -1.0 && hi < 1.0) {
            return Err(Error::InvalidArgument("AR(1) coefficients must lie in (-1,1)".into()));
        }
        if let Dependence::BlockWise { m } = self.dependence {
            if m == 0 || m > self.n_times {
                return Err(Error::InvalidArgument(format!("block length {m} must be in 1..=T")));
            }
        }
        let t = &self.truth;
        if t.params.gamma.len() != t.assignment.g_scale()
            || t.params.delta.len() != t.assignment.g_shape()
            || t.params.gamma.iter().any(|g| g.len() != 2)
            || t.params.delta.iter().any(|d| d.len() != 1)
        {
            return Err(Error::Dimension(
                "truth needs two scale coefficients and one shape coefficient per group".into(),
            ));
        }
        if min_eigenvalue(&self.block_correlation()) < -1e-10 {
            return Err(Error::InvalidArgument(
                "copula correlation matrix is not positive semidefinite".into(),
            ));
        }
        if min_eigenvalue(&self.noise_cov(n.max(2))) < -1e-10 {
            return Err(Error::InvalidArgument(
                "covariate noise covariance is not positive semidefinite".into(),
            ));
        }
        Ok(())
    }
}

/// Dense covariate panel.
#[derive(Debug, Clone)]
pub struct Covariates {
    /// `x[i][t]`, the non-intercept covariate.
    pub x: Vec<Vec<f64>>,
    /// Latent AR(1) series `W`.
    pub w: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
}

fn cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    // A tiny jitter keeps singular but valid correlation matrices factorable.
    let n = m.nrows();
    match m.clone().cholesky() {
        Some(c) => Ok(c),
        None => (m + DMatrix::identity(n, n) * 1e-12)
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("correlation matrix is not positive definite".into())),
    }
}

pub fn gen_covariates<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<Covariates> {
    cfg.validate()?;
    let (n, t) = (cfg.n_subjects(), cfg.n_times);
    let (lo, hi) = cfg.ar_coef_range;
    let mut phi = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for _ in 0..n {
        let p = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        let sd = (1.0 - p * p).sqrt();
        let mut state: f64 = rng.sample(StandardNormal);
        for _ in 0..BURN_IN {
            state = p * state + sd * rng.sample::<f64, _>(StandardNormal);
        }
        let mut series = Vec::with_capacity(t);
        for _ in 0..t {
            state = p * state + sd * rng.sample::<f64, _>(StandardNormal);
            series.push(state);
        }
        phi.push(p);
        w.push(series);
    }
    let a = &cfg.truth.assignment;
    let mut x: Vec<Vec<f64>> = w.iter().map(|s| s.iter().map(|v| 0.5 + v).collect()).collect();
    for tau in 0..a.g_scale() {
        let members = a.scale_members(tau);
        let chol = cholesky(cfg.noise_cov(members.len()))?;
        let l = chol.l();
        for tt in 0..t {
            let e = DVector::from_fn(members.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let eps = &l * e;
            for (k, &i) in members.iter().enumerate() {
                x[i][tt] += eps[k];
            }
        }
    }
    Ok(Covariates { x, w, phi })
}

/// Gaussian copula scores `g[i][t]` (standard normal margins).
pub fn copula_normals<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let (n, t) = (cfg.n_subjects(), cfg.n_times);
    let mut g = vec![vec![0.0; t]; n];
    if cfg.dependence == Dependence::Independence {
        for row in &mut g {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        return Ok(g);
    }
    let m = match cfg.dependence {
        Dependence::BlockWise { m } => m,
        _ => 1,
    };
    let chol = cholesky(cfg.block_correlation())?;
    let l = chol.l();
    let mut start = 0;
    while start < t {
        let len = m.min(t - start);
        let dim = len * n;
        let e = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        // The leading sub-block of a time-major block matrix is the
        // correlation of its first `len` times; so is the leading block of L.
        let sub = l.view((0, 0), (dim, dim));
        let v = sub * e;
        for c in 0..dim {
            g[c % n][start + c / n] = v[c];
        }
        start += len;
    }
    Ok(g)
}

/// Full `N × T` excess panel (every cell is an excess of threshold zero).
pub fn gen_full_panel<R: Rng + ?Sized>(cfg: &SimConfig, cov: &Covariates, rng: &mut R) -> Result<ExcessPanel> {
    let (n, t) = (cfg.n_subjects(), cfg.n_times);
    if cov.x.len() != n || cov.x.iter().any(|r| r.len() != t) {
        return Err(Error::Dimension(
            "covariate panel does not match the configuration".into(),
        ));
    }
    let g = copula_normals(cfg, rng)?;
    let normal = Normal::standard();
    let a = &cfg.truth.assignment;
    let mut b = PanelBuilder::new(n, t, vec!["x1".into()]);
    for i in 0..n {
        let gamma = &cfg.truth.params.gamma[a.scale()[i]];
        let xi = cfg.truth.params.delta[a.shape()[i]][0];
        for tt in 0..t {
            let x = cov.x[i][tt];
            let sigma = (gamma[0] + gamma[1] * x).exp();
            // ln(1 − U) = ln Φ(−g), accurate in the upper tail.
            let log_surv = normal.cdf(-g[i][tt]).ln();
            let z = quantile_from_log_survival(log_surv, sigma, xi).max(0.0);
            b.push(i, tt, z, 0.0, &[x])?;
        }
    }
    b.build()
}

/// Full panel followed by cell-level subsampling at `cfg.sample_fraction`.
pub fn gen_excess_panel<R: Rng + ?Sized>(cfg: &SimConfig, cov: &Covariates, rng: &mut R) -> Result<ExcessPanel> {
    let full = gen_full_panel(cfg, cov, rng)?;
    if cfg.sample_fraction >= 1.0 {
        return Ok(full);
    }
    subsample_with(&full, cfg.sample_fraction, rng)
}

/// Panel of replication seed `seed`, drawn from its data stream.
pub fn simulate_panel(cfg: &SimConfig, seed: u64) -> Result<ExcessPanel> {
    let mut rng = stream_rng(seed, STREAM_DATA);
    let cov = gen_covariates(cfg, &mut rng)?;
    gen_excess_panel(cfg, &cov, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// BCA at the true groups, 95% Wald interval coverage.
    Coverage,
    /// One multistep run at the true dimensions, Rand indices.
    Rand,
    /// BIC comparison over a grid of dimension pairs.
    Identification,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub n_reps: usize,
    /// Sandwich window; defaults to the block length of the dependence.
    pub window: Option<usize>,
    pub level: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub inner: BcaConfig,
    /// Rand study: also run the two-stage search halted at the true
    /// number of shape groups.
    pub rand_two_stage: bool,
    /// Identification study candidate grids and runs per pair.
    pub g_scale_candidates: Vec<usize>,
    pub g_shape_candidates: Vec<usize>,
    pub runs_per_pair: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            n_reps: 300,
            window: None,
            level: 0.95,
            eps: 1e-6,
            max_iter: 200,
            inner: BcaConfig::default(),
            rand_two_stage: false,
            g_scale_candidates: vec![3, 4, 5],
            g_shape_candidates: vec![2, 3, 4],
            runs_per_pair: 3,
        }
    }
}

impl StudyConfig {
    fn search(&self, seed: u64) -> SearchConfig {
        let mut s = SearchConfig::new(self.g_scale_candidates.clone(), self.g_shape_candidates.clone(), seed);
        s.runs_per_pair = self.runs_per_pair;
        s.eps = self.eps;
        s.max_iter = self.max_iter;
        s.inner = self.inner.clone();
        s
    }

    fn bca(&self) -> BcaConfig {
        BcaConfig {
            eps: self.eps,
            max_iter: self.max_iter,
            ..self.inner.clone()
        }
    }
}

/// Result of one replication.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub seed: u64,
    pub estimates: Option<RegressionParams>,
    /// Coverage study: `(lo, hi)` per coefficient, γ's then δ's.
    pub intervals: Vec<(f64, f64)>,
    pub covered: Vec<bool>,
    pub rand_scale: Option<f64>,
    pub rand_shape: Option<f64>,
    /// Two-stage variant of the Rand study.
    pub rand_scale_two_stage: Option<f64>,
    pub rand_shape_two_stage: Option<f64>,
    pub bic: Option<f64>,
    /// Identification study selections, as `(G_γ, G_δ)` or `G_δ`.
    pub selected_joint: Option<(usize, usize)>,
    pub selected_joint_single_run: Option<(usize, usize)>,
    pub selected_shape_given_scale_bic: Option<usize>,
    pub selected_shape_given_scale_hier: Option<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// Aggregates in the layouts of the published tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case")]
pub enum Aggregate {
    Coverage {
        names: Vec<String>,
        rates: Vec<f64>,
    },
    Rand {
        mean_rand_scale: f64,
        mean_rand_shape: f64,
        mean_rand_scale_two_stage: Option<f64>,
        mean_rand_shape_two_stage: Option<f64>,
    },
    Identification {
        target: (usize, usize),
        joint_rate: f64,
        joint_rate_single_run: f64,
        shape_given_scale_rate_bic: f64,
        shape_given_scale_rate_hier: Option<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyOutput {
    pub study: Study,
    pub n_reps: usize,
    pub n_failed: usize,
    pub failures: Vec<(usize, String)>,
    pub records: Vec<ReplicationRecord>,
    pub aggregate: Aggregate,
}

/// Names of the stacked coefficients, γ's then δ's.
pub fn coefficient_names(p: &RegressionParams) -> Vec<String> {
    let mut names = Vec::new();
    for (g, v) in p.gamma.iter().enumerate() {
        for c in 0..v.len() {
            names.push(format!("gamma_{},{c}", g + 1));
        }
    }
    for (g, v) in p.delta.iter().enumerate() {
        for c in 0..v.len() {
            names.push(format!("delta_{},{c}", g + 1));
        }
    }
    names
}

fn flatten(p: &RegressionParams) -> Vec<f64> {
    p.gamma.iter().chain(&p.delta).flatten().copied().collect()
}

fn run_coverage(cfg: &StudyConfig, rep: usize, seed: u64) -> Result<ReplicationRecord> {
    let panel = simulate_panel(&cfg.sim, seed)?;
    let truth = &cfg.sim.truth;
    let mut rng = stream_rng(seed, STREAM_ESTIMATE);
    let init = random_init(&panel, &truth.assignment, &mut rng)?;
    let fit = bca_fit(&panel, &truth.assignment, &init, &cfg.bca())?;
    let window = cfg.window.unwrap_or_else(|| cfg.sim.dependence.window());
    let sw = sandwich_all(&panel, &fit, WindowConfig::new(window))?;
    let wald = wald_intervals(&fit, &sw, cfg.level)?;
    let true_coefs = flatten(&truth.params);
    let intervals: Vec<(f64, f64)> = wald.iter().map(|w| (w.lo, w.hi)).collect();
    let covered = intervals
        .iter()
        .zip(&true_coefs)
        .map(|(&(lo, hi), &v)| lo < v && v < hi)
        .collect();
    Ok(ReplicationRecord {
        rep,
        seed,
        estimates: Some(fit.params.clone()),
        intervals,
        covered,
        bic: Some(fit.bic),
        iterations: fit.iterations,
        converged: fit.converged,
        ..Default::default()
    })
}

fn run_rand(cfg: &StudyConfig, rep: usize, seed: u64) -> Result<ReplicationRecord> {
    let panel = simulate_panel(&cfg.sim, seed)?;
    let truth = &cfg.sim.truth.assignment;
    let (gs, gd) = (truth.g_scale(), truth.g_shape());
    let mut search = cfg.search(seed);
    let (fit, _) = multistep_fit(&panel, gs, gd, &search, seed)?;
    let mut rec = ReplicationRecord {
        rep,
        seed,
        rand_scale: Some(rand_index(fit.assignment.scale(), truth.scale())?),
        rand_shape: Some(rand_index(fit.assignment.shape(), truth.shape())?),
        bic: Some(fit.bic),
        iterations: fit.iterations,
        converged: fit.converged,
        estimates: Some(fit.params),
        ..Default::default()
    };
    if cfg.rand_two_stage {
        search.g_scale_candidates = vec![gs];
        search.runs_per_pair = 1;
        let r = two_stage_hier_with(&panel, &search, Some(gd))?;
        let a = &r.best_fit.assignment;
        rec.rand_scale_two_stage = Some(rand_index(a.scale(), truth.scale())?);
        rec.rand_shape_two_stage = Some(rand_index(a.shape(), truth.shape())?);
    }
    Ok(rec)
}

fn run_identification(cfg: &StudyConfig, rep: usize, seed: u64) -> Result<ReplicationRecord> {
    let panel = simulate_panel(&cfg.sim, seed)?;
    let truth = &cfg.sim.truth.assignment;
    let gs_true = truth.g_scale();
    let search = cfg.search(seed);
    let res = select_by_bic(&panel, &search)?;
    let best = &res.best_fit;
    let joint = (best.assignment.g_scale(), best.assignment.g_shape());
    let single = res
        .trace
        .iter()
        .filter(|l| l.run == 0)
        .filter_map(|l| l.bic.map(|b| (b, l.g_scale, l.g_shape)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, s, d)| (s, d));
    let cond_bic = res
        .bic_table
        .iter()
        .filter(|e| e.g_scale == gs_true)
        .filter_map(|e| e.bic.map(|b| (b, e.g_shape)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, d)| d);
    // Two-stage with hierarchical merging: stage one at the true scale
    // dimension and ⌈√N⌉ shape groups reuses the grid runs when available.
    let n = panel.n_subjects();
    let g0 = (n as f64).sqrt().ceil() as usize;
    let cond_hier = match res.pair_fit(gs_true, g0) {
        Some(stage1) => {
            let r = two_stage_from_stage1(&panel, stage1, &search, None)?;
            Some(r.best_fit.assignment.g_shape())
        }
        None => {
            let mut s = search.clone();
            s.g_scale_candidates = vec![gs_true];
            let r = two_stage_hier_with(&panel, &s, None)?;
            Some(r.best_fit.assignment.g_shape())
        }
    };
    Ok(ReplicationRecord {
        rep,
        seed,
        bic: Some(best.bic),
        selected_joint: Some(joint),
        selected_joint_single_run: single,
        selected_shape_given_scale_bic: cond_bic,
        selected_shape_given_scale_hier: cond_hier,
        iterations: best.iterations,
        converged: best.converged,
        estimates: Some(best.params.clone()),
        ..Default::default()
    })
}

/// Seed of replication `rep`; independent of every other replication.
pub fn replication_seed(base: u64, rep: usize) -> u64 {
    child_seed(base, rep as u64)
}

/// Runs `cfg.n_reps` replications of `study`. Failed replications are
/// dropped and counted.
pub fn run_study(cfg: &StudyConfig, study: Study) -> Result<StudyOutput> {
    cfg.sim.validate()?;
    if cfg.n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be at least 1".into()));
    }
    let results: Vec<(usize, Result<ReplicationRecord>)> = (0..cfg.n_reps)
        .into_par_iter()
        .map(|rep| {
            let seed = replication_seed(cfg.sim.seed, rep);
            let r = match study {
                Study::Coverage => run_coverage(cfg, rep, seed),
                Study::Rand => run_rand(cfg, rep, seed),
                Study::Identification => run_identification(cfg, rep, seed),
            };
            (rep, r)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rep, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    if records.is_empty() {
        return Err(Error::Optimizer(format!(
            "every replication failed; first cause: {}",
            failures.first().map(|f| f.1.as_str()).unwrap_or("")
        )));
    }
    let aggregate = aggregate(cfg, study, &records);
    Ok(StudyOutput {
        study,
        n_reps: cfg.n_reps,
        n_failed: failures.len(),
        failures,
        records,
        aggregate,
    })
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn rate(records: &[ReplicationRecord], hit: impl Fn(&ReplicationRecord) -> bool) -> f64 {
    records.iter().filter(|r| hit(r)).count() as f64 / records.len() as f64
}

pub fn aggregate(cfg: &StudyConfig, study: Study, records: &[ReplicationRecord]) -> Aggregate {
    let truth = &cfg.sim.truth;
    match study {
        Study::Coverage => {
            let names = coefficient_names(&truth.params);
            let rates = (0..names.len())
                .map(|k| rate(records, |r| r.covered.get(k).copied().unwrap_or(false)))
                .collect();
            Aggregate::Coverage { names, rates }
        }
        Study::Rand => Aggregate::Rand {
            mean_rand_scale: mean(records.iter().filter_map(|r| r.rand_scale)).unwrap_or(f64::NAN),
            mean_rand_shape: mean(records.iter().filter_map(|r| r.rand_shape)).unwrap_or(f64::NAN),
            mean_rand_scale_two_stage: mean(records.iter().filter_map(|r| r.rand_scale_two_stage)),
            mean_rand_shape_two_stage: mean(records.iter().filter_map(|r| r.rand_shape_two_stage)),
        },
        Study::Identification => {
            let target = (truth.assignment.g_scale(), truth.assignment.g_shape());
            let hier = records.iter().any(|r| r.selected_shape_given_scale_hier.is_some());
            Aggregate::Identification {
                target,
                joint_rate: rate(records, |r| r.selected_joint == Some(target)),
                joint_rate_single_run: rate(records, |r| r.selected_joint_single_run == Some(target)),
                shape_given_scale_rate_bic: rate(records, |r| r.selected_shape_given_scale_bic == Some(target.1)),
                shape_given_scale_rate_hier: hier
                    .then(|| rate(records, |r| r.selected_shape_given_scale_hier == Some(target.1))),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_truth() {
        let t = Truth::default();
        assert_eq!(t.params.gamma[0], vec![-0.5, 0.3]);
        assert_eq!(t.params.delta[2], vec![0.3]);
        assert_eq!(t.assignment.g_scale(), 4);
        assert_eq!(t.assignment.g_shape(), 3);
    }

    #[test]
    fn block_correlation_pattern() {
        let cfg = SimConfig {
            dependence: Dependence::BlockWise { m: 2 },
            ..SimConfig::default()
        };
        let c = cfg.block_correlation();
        assert_eq!(c.nrows(), 24);
        // Subject 0 at times 0 and 1; same subject, same group.
        assert_eq!(c[(0, 12)], 0.9);
        // Subjects 0 and 3 are in different scale groups.
        assert_eq!(c[(0, 3)], 0.1);
        assert_eq!(c[(0, 1)], 0.9);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn invalid_correlation_rejected() {
        let cfg = SimConfig {
            within_group_corr: 0.1,
            between_group_corr: 0.95,
            dependence: Dependence::CrossSectional,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn same_seed_same_panel() {
        let cfg = SimConfig {
            n_times: 200,
            ..SimConfig::default()
        };
        let a = simulate_panel(&cfg, 11).unwrap();
        let b = simulate_panel(&cfg, 11).unwrap();
        for i in 0..12 {
            assert_eq!(a.subject(i).excess(), b.subject(i).excess());
        }
        assert_eq!(a.n_excess(), 240);
    }

    #[test]
    fn replication_seeds_do_not_shift() {
        assert_eq!(replication_seed(5, 3), child_seed(5, 3));
        assert_ne!(replication_seed(5, 3), replication_seed(5, 4));
    }
}
