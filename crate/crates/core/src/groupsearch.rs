//! Latent group-structure search.
//!
//! - [`multistep_fit`]: alternating parameter updates and per-subject
//!   reassignment for fixed group dimensions.
//! - [`select_by_bic`]: repeated multistep runs over a grid of dimension
//!   pairs, keeping the lowest BIC.
//! - [`two_stage_hier`]: scale groups by BIC at a fixed, generous number of
//!   shape groups, then agglomerative merging of single-subject shape
//!   clusters, then a final multistep polish.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{
    bic, dot, fit_scale_members, fit_shape_members, loglik_unchecked, random_init_labels, subject_loglik, sup_diff,
    BcaConfig, FitResult, RegressionParams,
};
use crate::gpd::{SHAPE_LOWER, SHAPE_UPPER};
use crate::panel::{one_based, ExcessPanel, GroupAssignment};
use crate::rng::{child_seed, stream_rng, STREAM_ESTIMATE};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub g_scale_candidates: Vec<usize>,
    pub g_shape_candidates: Vec<usize>,
    #[serde(default = "default_runs")]
    pub runs_per_pair: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub seed: u64,
    /// Shape-group count during the first stage of [`two_stage_hier`];
    /// `None` means `⌈√N⌉`.
    #[serde(default)]
    pub shape_fixed_for_stage1: Option<usize>,
    #[serde(default)]
    pub inner: BcaConfig,
}

fn default_runs() -> usize {
    3
}

fn default_eps() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    200
}

impl SearchConfig {
    pub fn new(g_scale_candidates: Vec<usize>, g_shape_candidates: Vec<usize>, seed: u64) -> Self {
        Self {
            g_scale_candidates,
            g_shape_candidates,
            runs_per_pair: default_runs(),
            eps: default_eps(),
            max_iter: default_max_iter(),
            seed,
            shape_fixed_for_stage1: None,
            inner: BcaConfig::default(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.g_scale_candidates.is_empty() || self.g_shape_candidates.is_empty() {
            return Err(Error::InvalidArgument("candidate grids must be nonempty".into()));
        }
        if self.runs_per_pair == 0 {
            return Err(Error::InvalidArgument("runs_per_pair must be at least 1".into()));
        }
        for &g in self.g_scale_candidates.iter().chain(&self.g_shape_candidates) {
            if g == 0 || g > n {
                return Err(Error::InvalidArgument(format!("group count {g} outside 1..={n}")));
            }
        }
        Ok(())
    }
}

/// Seed of run `run` at dimension pair `(g_scale, g_shape)`; independent of
/// the rest of the grid.
pub fn run_seed(base: u64, g_scale: usize, g_shape: usize, run: usize) -> u64 {
    child_seed(child_seed(base, ((g_scale as u64) << 32) | g_shape as u64), run as u64)
}

/// Log of one multistep run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub g_scale: usize,
    pub g_shape: usize,
    pub run: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub bic: Option<f64>,
    pub error: Option<String>,
    /// Composite log-likelihood at the start and after every sub-step.
    pub loglik: Vec<f64>,
    /// Number of empty-group repairs; a repair may lower the objective.
    pub repairs: usize,
    /// Indices into `loglik` of the values right after a repair.
    pub repair_steps: Vec<usize>,
}

struct Multistep {
    fit: FitResult,
    loglik: Vec<f64>,
    repairs: usize,
    repair_steps: Vec<usize>,
}

fn subject_score(panel: &ExcessPanel, i: usize, gamma: &[f64], delta: &[f64]) -> f64 {
    let s = panel.subject(i);
    for k in 0..s.len() {
        let xi = dot(delta, s.shape_x(k));
        if !(SHAPE_LOWER..=SHAPE_UPPER).contains(&xi) {
            return f64::NEG_INFINITY;
        }
    }
    subject_loglik(s, gamma, delta)
}

/// Per-subject argmax over `g` groups; ties go to the lowest label.
fn reassign(n: usize, g: usize, score: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    (0..n)
        .map(|i| {
            let mut best = 0;
            let mut best_v = score(i, 0);
            for tau in 1..g {
                let v = score(i, tau);
                if v > best_v {
                    best = tau;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

/// Refills every empty group with the worst-fitting subject that can move.
fn repair(labels: &mut [usize], g: usize, level: &'static str, score: impl Fn(usize, usize) -> f64) -> Result<usize> {
    let mut moves = 0;
    loop {
        let mut counts = vec![0usize; g];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return Ok(moves);
        };
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..labels.len() {
            if counts[labels[i]] < 2 || !score(i, empty).is_finite() {
                continue;
            }
            let own = score(i, labels[i]);
            if pick.map_or(true, |(_, v)| own < v) {
                pick = Some((i, own));
            }
        }
        let (i, _) = pick.ok_or(Error::EmptyGroup {
            level,
            group: empty + 1,
        })?;
        labels[i] = empty;
        moves += 1;
    }
}

fn has_excess(panel: &ExcessPanel, members: &[usize]) -> bool {
    members.iter().any(|&i| !panel.subject(i).is_empty())
}

fn members_of(labels: &[usize], tau: usize) -> Vec<usize> {
    (0..labels.len()).filter(|&i| labels[i] == tau).collect()
}

#[allow(clippy::too_many_arguments)]
fn multistep_core(
    panel: &ExcessPanel,
    mut scale: Vec<usize>,
    g_scale: usize,
    mut shape: Vec<usize>,
    g_shape: usize,
    mut params: RegressionParams,
    eps: f64,
    max_iter: usize,
    inner: &BcaConfig,
) -> Result<Multistep> {
    let n = panel.n_subjects();
    let mut loglik = vec![loglik_unchecked(panel, &scale, &shape, &params)];
    if !loglik[0].is_finite() {
        return Err(Error::InvalidArgument("multistep start is infeasible".into()));
    }
    let mut repairs = 0;
    let mut repair_steps = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut change: f64 = 0.0;
        let mut relabeled = false;

        for tau in 0..g_scale {
            let members = members_of(&scale, tau);
            if !has_excess(panel, &members) {
                continue;
            }
            let fit = fit_scale_members(panel, &members, &shape, &params.gamma[tau], &params, inner)?;
            change = change.max(sup_diff(&fit.coef, &params.gamma[tau]));
            params.gamma[tau] = fit.coef;
        }
        loglik.push(loglik_unchecked(panel, &scale, &shape, &params));

        let score = |i: usize, tau: usize| subject_score(panel, i, &params.gamma[tau], &params.delta[shape[i]]);
        let mut next = reassign(n, g_scale, score);
        let moved = repair(&mut next, g_scale, "scale", score)?;
        relabeled |= next != scale;
        scale = next;
        loglik.push(loglik_unchecked(panel, &scale, &shape, &params));
        if moved > 0 {
            repairs += moved;
            repair_steps.push(loglik.len() - 1);
        }

        for tau in 0..g_shape {
            let members = members_of(&shape, tau);
            if !has_excess(panel, &members) {
                continue;
            }
            let fit = fit_shape_members(panel, &members, &scale, &params.delta[tau], &params, inner)?;
            change = change.max(sup_diff(&fit.coef, &params.delta[tau]));
            params.delta[tau] = fit.coef;
        }
        loglik.push(loglik_unchecked(panel, &scale, &shape, &params));

        let score = |i: usize, tau: usize| subject_score(panel, i, &params.gamma[scale[i]], &params.delta[tau]);
        let mut next = reassign(n, g_shape, score);
        let moved = repair(&mut next, g_shape, "shape", score)?;
        relabeled |= next != shape;
        shape = next;
        loglik.push(loglik_unchecked(panel, &scale, &shape, &params));
        if moved > 0 {
            repairs += moved;
            repair_steps.push(loglik.len() - 1);
        }

        if !relabeled && change < eps {
            converged = true;
            break;
        }
    }
    let a = GroupAssignment::new(scale, shape, g_scale, g_shape)?;
    let (canon, map_s, map_d) = a.canonicalize();
    let mut gamma = vec![Vec::new(); g_scale];
    let mut delta = vec![Vec::new(); g_shape];
    for (old, g) in params.gamma.into_iter().enumerate() {
        gamma[map_s[old]] = g;
    }
    for (old, d) in params.delta.into_iter().enumerate() {
        delta[map_d[old]] = d;
    }
    let trace = loglik.clone();
    let fit = FitResult::assemble(
        panel,
        canon,
        RegressionParams { gamma, delta },
        iterations,
        converged,
        trace,
    );
    Ok(Multistep {
        fit,
        loglik,
        repairs,
        repair_steps,
    })
}

/// Labels with every group in `0..g` used at least once.
fn random_labels<R: Rng + ?Sized>(n: usize, g: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut labels = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        labels[i] = if k < g { k } else { rng.gen_range(0..g) };
    }
    labels
}

/// Multi-step maximization for fixed `(g_scale, g_shape)` from a random
/// start drawn with `seed`. Returns the fit (canonical labels) and its log.
pub fn multistep_fit(
    panel: &ExcessPanel,
    g_scale: usize,
    g_shape: usize,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<(FitResult, RunLog)> {
    let n = panel.n_subjects();
    if g_scale == 0 || g_scale > n || g_shape == 0 || g_shape > n {
        return Err(Error::InvalidArgument(format!(
            "group dimensions ({g_scale}, {g_shape}) must lie in 1..={n}"
        )));
    }
    let mut rng = stream_rng(seed, STREAM_ESTIMATE);
    let scale = random_labels(n, g_scale, &mut rng);
    let shape = random_labels(n, g_shape, &mut rng);
    let init = random_init_labels(panel, &scale, &shape, g_scale, g_shape, &mut rng)?;
    let m = multistep_core(
        panel,
        scale,
        g_scale,
        shape,
        g_shape,
        init,
        cfg.eps,
        cfg.max_iter,
        &cfg.inner,
    )?;
    let log = RunLog {
        g_scale,
        g_shape,
        run: 0,
        seed,
        iterations: m.fit.iterations,
        converged: m.fit.converged,
        bic: Some(m.fit.bic),
        error: None,
        loglik: m.loglik,
        repairs: m.repairs,
        repair_steps: m.repair_steps,
    };
    Ok((m.fit, log))
}

/// Multi-step maximization started from a given assignment and parameters.
pub fn multistep_from(
    panel: &ExcessPanel,
    a: &GroupAssignment,
    init: &RegressionParams,
    cfg: &SearchConfig,
) -> Result<(FitResult, RunLog)> {
    let _ = crate::estimate::comp_loglik(panel, a, init)?;
    let m = multistep_core(
        panel,
        a.scale().to_vec(),
        a.g_scale(),
        a.shape().to_vec(),
        a.g_shape(),
        init.clone(),
        cfg.eps,
        cfg.max_iter,
        &cfg.inner,
    )?;
    let log = RunLog {
        g_scale: a.g_scale(),
        g_shape: a.g_shape(),
        run: 0,
        seed: 0,
        iterations: m.fit.iterations,
        converged: m.fit.converged,
        bic: Some(m.fit.bic),
        error: None,
        loglik: m.loglik,
        repairs: m.repairs,
        repair_steps: m.repair_steps,
    };
    Ok((m.fit, log))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BicEntry {
    pub g_scale: usize,
    pub g_shape: usize,
    /// Lowest BIC over the successful runs; absent if every run failed.
    pub bic: Option<f64>,
    pub runs_ok: usize,
    pub runs_failed: usize,
}

/// One accepted merge of two shape clusters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeLog {
    #[serde(with = "one_based")]
    pub first: Vec<usize>,
    #[serde(with = "one_based")]
    pub second: Vec<usize>,
    /// `BIC^merged − BIC^composite` of the pair.
    pub delta_bic: f64,
    /// BIC of the whole model before and after the merge.
    pub model_bic_before: f64,
    pub model_bic_after: f64,
    /// Merged only to reach a requested cluster count.
    pub forced: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_fit: FitResult,
    pub bic_table: Vec<BicEntry>,
    pub trace: Vec<RunLog>,
    /// Lowest-BIC fit of every pair with at least one successful run, in
    /// table order.
    #[serde(skip)]
    pub pair_fits: Vec<Option<FitResult>>,
    /// Stage-one winner (two-stage search only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1: Option<Box<FitResult>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merges: Vec<MergeLog>,
    /// Merge refits that failed and were dropped from their sweep.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merge_failures: Vec<String>,
}

impl SearchResult {
    pub fn entry(&self, g_scale: usize, g_shape: usize) -> Option<&BicEntry> {
        self.bic_table
            .iter()
            .find(|e| e.g_scale == g_scale && e.g_shape == g_shape)
    }

    pub fn pair_fit(&self, g_scale: usize, g_shape: usize) -> Option<&FitResult> {
        let k = self
            .bic_table
            .iter()
            .position(|e| e.g_scale == g_scale && e.g_shape == g_shape)?;
        self.pair_fits[k].as_ref()
    }
}

/// Runs `runs_per_pair` multistep fits at every candidate pair and keeps
/// the lowest BIC per pair and overall.
pub fn select_by_bic(panel: &ExcessPanel, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate(panel.n_subjects())?;
    let mut jobs = Vec::new();
    for &gs in &cfg.g_scale_candidates {
        for &gd in &cfg.g_shape_candidates {
            for r in 0..cfg.runs_per_pair {
                jobs.push((gs, gd, r));
            }
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(gs, gd, r)| {
            let seed = run_seed(cfg.seed, gs, gd, r);
            (gs, gd, r, seed, multistep_fit(panel, gs, gd, cfg, seed))
        })
        .collect();

    let mut table: Vec<BicEntry> = Vec::new();
    let mut pair_fits: Vec<Option<FitResult>> = Vec::new();
    let mut trace = Vec::new();
    for (gs, gd, r, seed, res) in results {
        let k = match table.iter().position(|e| e.g_scale == gs && e.g_shape == gd) {
            Some(k) => k,
            None => {
                table.push(BicEntry {
                    g_scale: gs,
                    g_shape: gd,
                    bic: None,
                    runs_ok: 0,
                    runs_failed: 0,
                });
                pair_fits.push(None);
                table.len() - 1
            }
        };
        match res {
            Ok((fit, mut log)) => {
                log.run = r;
                trace.push(log);
                table[k].runs_ok += 1;
                if table[k].bic.map_or(true, |b| fit.bic < b) {
                    table[k].bic = Some(fit.bic);
                    pair_fits[k] = Some(fit);
                }
            }
            Err(e) => {
                table[k].runs_failed += 1;
                trace.push(RunLog {
                    g_scale: gs,
                    g_shape: gd,
                    run: r,
                    seed,
                    iterations: 0,
                    converged: false,
                    bic: None,
                    error: Some(e.to_string()),
                    loglik: Vec::new(),
                    repairs: 0,
                    repair_steps: Vec::new(),
                });
            }
        }
    }
    let best = pair_fits
        .iter()
        .flatten()
        .min_by(|a, b| a.bic.total_cmp(&b.bic))
        .cloned()
        .ok_or_else(|| {
            let cause = trace.iter().find_map(|l| l.error.clone()).unwrap_or_default();
            Error::Optimizer(format!("every multistep run failed: {cause}"))
        })?;
    Ok(SearchResult {
        best_fit: best,
        bic_table: table,
        trace,
        pair_fits,
        stage1: None,
        merges: Vec::new(),
        merge_failures: Vec::new(),
    })
}

/// Output of the agglomerative stage.
#[derive(Debug, Clone)]
pub struct MergeOutcome {
    /// Final shape clusters, each sorted, ordered by smallest member.
    pub clusters: Vec<Vec<usize>>,
    pub delta: Vec<Vec<f64>>,
    pub merges: Vec<MergeLog>,
    pub failures: Vec<String>,
}

struct Cluster {
    members: Vec<usize>,
    delta: Vec<f64>,
    loglik: f64,
    n_excess: usize,
}

#[derive(Clone, Copy)]
struct PairEval {
    delta_bic: f64,
    merged_loglik: f64,
    merged_delta: f64,
}

/// Agglomerative merging of shape clusters with the scale side held fixed.
///
/// Starts from one cluster per subject. At every sweep each pair of clusters
/// is scored by `BIC^merged − BIC^composite` and the most negative pair is
/// merged; merging stops when no pair improves. With `halt_at = Some(k)`
/// merging continues past that point until `k` clusters remain, and stops
/// at `k` in any case.
pub fn hierarchical_merge(
    panel: &ExcessPanel,
    scale: &[usize],
    gamma: &[Vec<f64>],
    start_delta: &[Vec<f64>],
    halt_at: Option<usize>,
    inner: &BcaConfig,
) -> Result<MergeOutcome> {
    let n = panel.n_subjects();
    if panel.dim_delta() != 1 {
        return Err(Error::InvalidArgument(
            "hierarchical merging needs intercept-only shape coefficients".into(),
        ));
    }
    if scale.len() != n || start_delta.len() != n {
        return Err(Error::Dimension(
            "one scale label and one start shape per subject required".into(),
        ));
    }
    let (dg, dd) = (panel.dim_gamma(), panel.dim_delta());
    let g_scale = gamma.len();
    let mut params = RegressionParams {
        gamma: gamma.to_vec(),
        delta: start_delta.to_vec(),
    };
    let mut clusters: Vec<Cluster> = Vec::with_capacity(n);
    for i in 0..n {
        let s = panel.subject(i);
        let (delta, loglik) = if s.is_empty() {
            (start_delta[i].clone(), 0.0)
        } else {
            let fit = fit_shape_members(panel, &[i], scale, &start_delta[i], &params, inner)?;
            (fit.coef, fit.loglik)
        };
        params.delta[i] = delta.clone();
        clusters.push(Cluster {
            members: vec![i],
            delta,
            loglik,
            n_excess: s.len(),
        });
    }
    let model_bic = |cl: &[Cluster]| {
        let ll: f64 = cl.iter().map(|c| c.loglik).sum();
        bic(ll, panel.n_excess(), dg, g_scale, dd, cl.len())
    };

    let scale_groups = |members: &[usize]| {
        let mut g: Vec<usize> = members.iter().map(|&i| scale[i]).collect();
        g.sort_unstable();
        g.dedup();
        g.len()
    };
    let evaluate = |a: &Cluster, b: &Cluster, params: &RegressionParams| -> Result<PairEval> {
        let mut members: Vec<usize> = a.members.iter().chain(&b.members).copied().collect();
        members.sort_unstable();
        let nm = a.n_excess + b.n_excess;
        let log_n = (nm.max(1) as f64).ln();
        let k_gamma = (dg * scale_groups(&members)) as f64;
        let (merged_loglik, merged_delta) = if nm == 0 {
            (0.0, a.delta[0].max(b.delta[0]))
        } else {
            let w = (a.n_excess as f64 * a.delta[0] + b.n_excess as f64 * b.delta[0]) / nm as f64;
            let mut fit = None;
            for start in [w, a.delta[0].max(b.delta[0]), 0.0] {
                if let Ok(f) = fit_shape_members(panel, &members, scale, &[start], params, inner) {
                    fit = Some(f);
                    break;
                }
            }
            let f = fit.ok_or_else(|| Error::Optimizer("merged shape refit failed from every start".into()))?;
            (f.loglik, f.coef[0])
        };
        let bic_merged = -2.0 * merged_loglik + (k_gamma + dd as f64) * log_n;
        let bic_composite = -2.0 * (a.loglik + b.loglik) + (k_gamma + 2.0 * dd as f64) * log_n;
        Ok(PairEval {
            delta_bic: bic_merged - bic_composite,
            merged_loglik,
            merged_delta,
        })
    };

    // Pairwise cache indexed by cluster position; `None` marks a failed refit.
    let mut cache: Vec<Vec<Option<PairEval>>> = vec![vec![None; n]; n];
    let mut failures = Vec::new();
    for a in 0..clusters.len() {
        for b in (a + 1)..clusters.len() {
            match evaluate(&clusters[a], &clusters[b], &params) {
                Ok(e) => cache[a][b] = Some(e),
                Err(e) => failures.push(format!("{:?}+{:?}: {e}", clusters[a].members, clusters[b].members)),
            }
        }
    }

    let mut merges = Vec::new();
    let target = halt_at.unwrap_or(1).max(1);
    while clusters.len() > target {
        let mut best: Option<(usize, usize, PairEval)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                if let Some(e) = cache[a][b] {
                    if best.map_or(true, |(_, _, bb)| e.delta_bic < bb.delta_bic) {
                        best = Some((a, b, e));
                    }
                }
            }
        }
        let Some((a, b, e)) = best else { break };
        let forced = e.delta_bic >= 0.0;
        if forced && halt_at.is_none() {
            break;
        }
        let before = model_bic(&clusters);
        let second = clusters.remove(b);
        let first = &mut clusters[a];
        let first_members = first.members.clone();
        first.members.extend(&second.members);
        first.members.sort_unstable();
        first.delta = vec![e.merged_delta];
        first.loglik = e.merged_loglik;
        first.n_excess += second.n_excess;
        for &i in &first.members {
            params.delta[i] = first.delta.clone();
        }
        // Drop row/column b and recompute pairs touching a.
        cache.remove(b);
        for row in cache.iter_mut() {
            row.remove(b);
        }
        for other in 0..clusters.len() {
            if other == a {
                continue;
            }
            let (lo, hi) = (a.min(other), a.max(other));
            cache[lo][hi] = match evaluate(&clusters[lo], &clusters[hi], &params) {
                Ok(e) => Some(e),
                Err(err) => {
                    failures.push(format!("{:?}+{:?}: {err}", clusters[lo].members, clusters[hi].members));
                    None
                }
            };
        }
        let after = model_bic(&clusters);
        merges.push(MergeLog {
            first: first_members,
            second: second.members,
            delta_bic: e.delta_bic,
            model_bic_before: before,
            model_bic_after: after,
            forced,
        });
    }
    clusters.sort_by_key(|c| c.members[0]);
    Ok(MergeOutcome {
        delta: clusters.iter().map(|c| c.delta.clone()).collect(),
        clusters: clusters.into_iter().map(|c| c.members).collect(),
        merges,
        failures,
    })
}

/// Two-stage search with hierarchical merging of shape groups.
pub fn two_stage_hier(panel: &ExcessPanel, cfg: &SearchConfig) -> Result<SearchResult> {
    two_stage_hier_with(panel, cfg, None)
}

/// [`two_stage_hier`] with an optional forced number of shape groups.
pub fn two_stage_hier_with(panel: &ExcessPanel, cfg: &SearchConfig, halt_at: Option<usize>) -> Result<SearchResult> {
    if panel.dim_delta() != 1 {
        return Err(Error::InvalidArgument(
            "the two-stage search needs intercept-only shape coefficients".into(),
        ));
    }
    let n = panel.n_subjects();
    let g0 = cfg
        .shape_fixed_for_stage1
        .unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
        .clamp(1, n);
    let mut stage_cfg = cfg.clone();
    stage_cfg.g_shape_candidates = vec![g0];
    stage_cfg.g_scale_candidates.retain(|&g| g <= n);
    let stage1 = select_by_bic(panel, &stage_cfg)?;
    let mut out = two_stage_from_stage1(panel, &stage1.best_fit, cfg, halt_at)?;
    out.bic_table = stage1.bic_table;
    out.pair_fits = stage1.pair_fits;
    let mut trace = stage1.trace;
    trace.append(&mut out.trace);
    out.trace = trace;
    Ok(out)
}

/// Stages two and three of the two-stage search from a given stage-one fit.
pub fn two_stage_from_stage1(
    panel: &ExcessPanel,
    stage1: &FitResult,
    cfg: &SearchConfig,
    halt_at: Option<usize>,
) -> Result<SearchResult> {
    let a1 = &stage1.assignment;
    let start_delta: Vec<Vec<f64>> = (0..panel.n_subjects())
        .map(|i| stage1.params.delta[a1.shape()[i]].clone())
        .collect();
    let merged = hierarchical_merge(
        panel,
        a1.scale(),
        &stage1.params.gamma,
        &start_delta,
        halt_at,
        &cfg.inner,
    )?;
    let mut shape = vec![0; panel.n_subjects()];
    for (c, members) in merged.clusters.iter().enumerate() {
        for &i in members {
            shape[i] = c;
        }
    }
    let a = GroupAssignment::new(a1.scale().to_vec(), shape, a1.g_scale(), merged.clusters.len())?;
    let init = RegressionParams {
        gamma: stage1.params.gamma.clone(),
        delta: merged.delta.clone(),
    };
    let (fit, log) = multistep_from(panel, &a, &init, cfg)?;
    Ok(SearchResult {
        best_fit: fit,
        bic_table: Vec::new(),
        trace: vec![log],
        pair_fits: Vec::new(),
        stage1: Some(Box::new(stage1.clone())),
        merges: merged.merges,
        merge_failures: merged.failures,
    })
}

/// Fraction of subject pairs on which two partitions agree.
pub fn rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "partitions of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "the Rand index needs at least two subjects".into(),
        ));
    }
    let mut agree = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / (n * (n - 1) / 2) as f64)
}
