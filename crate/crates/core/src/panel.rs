//! Sparse excess panels, two-level group assignments and subject nets.
//!
//! Subjects, times and group labels are 0-based in the API. Serialized
//! group labels (JSON) are 1-based.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serde adapters writing 0-based indices as 1-based labels.
pub(crate) mod one_based {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x + 1))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        v.into_iter()
            .map(|x| x.checked_sub(1).ok_or_else(|| D::Error::custom("labels are 1-based")))
            .collect()
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(v: &usize, s: S) -> Result<S::Ok, S::Error> {
            s.serialize_u64(*v as u64 + 1)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<usize, D::Error> {
            usize::deserialize(d)?
                .checked_sub(1)
                .ok_or_else(|| D::Error::custom("labels are 1-based"))
        }
    }
}

/// Excesses of one subject, ordered by time.
#[derive(Debug, Clone)]
pub struct SubjectSeries {
    times: Vec<usize>,
    excess: Vec<f64>,
    threshold: Vec<f64>,
    covariates: Vec<f64>,
    scale_design: Vec<f64>,
    shape_design: Vec<f64>,
    n_observed: usize,
    n_cov: usize,
    dim_gamma: usize,
    dim_delta: usize,
}

impl SubjectSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The exceedance time set, strictly increasing.
    pub fn times(&self) -> &[usize] {
        &self.times
    }

    pub fn excess(&self) -> &[f64] {
        &self.excess
    }

    pub fn threshold(&self) -> &[f64] {
        &self.threshold
    }

    /// Full covariate vector of the `k`-th excess (intercept first).
    pub fn covariates(&self, k: usize) -> &[f64] {
        &self.covariates[k * self.n_cov..(k + 1) * self.n_cov]
    }

    /// Covariates entering the scale link for the `k`-th excess.
    #[inline]
    pub fn scale_x(&self, k: usize) -> &[f64] {
        &self.scale_design[k * self.dim_gamma..(k + 1) * self.dim_gamma]
    }

    /// Covariates entering the shape link for the `k`-th excess.
    #[inline]
    pub fn shape_x(&self, k: usize) -> &[f64] {
        &self.shape_design[k * self.dim_delta..(k + 1) * self.dim_delta]
    }

    /// Number of raw observations behind this series (for `ζ̂`).
    pub fn n_observed(&self) -> usize {
        self.n_observed
    }

    /// Empirical exceedance proportion `|𝒯ᵢ| / n_observed`.
    pub fn exceed_prob(&self) -> f64 {
        self.len() as f64 / self.n_observed.max(1) as f64
    }

    /// Mean covariate vector over the stored excesses.
    pub fn mean_covariates(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_cov];
        if self.is_empty() {
            m[0] = 1.0;
            return m;
        }
        for k in 0..self.len() {
            for (a, b) in m.iter_mut().zip(self.covariates(k)) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.len() as f64);
        m
    }
}

/// Sparse `N × T` panel of threshold excesses.
///
/// Each stored cell carries its excess, its threshold and a covariate
/// vector whose first entry is 1. The scale link uses the covariate
/// columns in `scale_cols`, the shape link those in `shape_cols`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "PanelRepr", try_from = "PanelRepr")]
pub struct ExcessPanel {
    n_times: usize,
    covariate_names: Vec<String>,
    scale_cols: Vec<usize>,
    shape_cols: Vec<usize>,
    series: Vec<SubjectSeries>,
}

impl ExcessPanel {
    pub fn n_subjects(&self) -> usize {
        self.series.len()
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// Length of the covariate vector, intercept included.
    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len() + 1
    }

    /// Names of the non-intercept covariates.
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn scale_cols(&self) -> &[usize] {
        &self.scale_cols
    }

    pub fn shape_cols(&self) -> &[usize] {
        &self.shape_cols
    }

    /// dim(γ).
    pub fn dim_gamma(&self) -> usize {
        self.scale_cols.len()
    }

    /// dim(δ).
    pub fn dim_delta(&self) -> usize {
        self.shape_cols.len()
    }

    pub fn subject(&self, i: usize) -> &SubjectSeries {
        &self.series[i]
    }

    pub fn subjects(&self) -> &[SubjectSeries] {
        &self.series
    }

    /// Total number of excesses.
    pub fn n_excess(&self) -> usize {
        self.series.iter().map(SubjectSeries::len).sum()
    }

    /// Subjects with no excess at all.
    pub fn empty_subjects(&self) -> Vec<usize> {
        (0..self.n_subjects()).filter(|&i| self.series[i].is_empty()).collect()
    }

    /// Same data with different covariate masks for the links.
    pub fn with_design(&self, scale_cols: Vec<usize>, shape_cols: Vec<usize>) -> Result<Self> {
        let mut b = PanelBuilder::from_panel(self);
        b.scale_cols = Some(scale_cols);
        b.shape_cols = Some(shape_cols);
        b.build()
    }

    /// Panel restricted to the given subjects, in the given order.
    pub fn select_subjects(&self, subjects: &[usize]) -> Result<Self> {
        let mut b = PanelBuilder::new(subjects.len(), self.n_times, self.covariate_names.clone());
        b.scale_cols = Some(self.scale_cols.clone());
        b.shape_cols = Some(self.shape_cols.clone());
        for (new, &old) in subjects.iter().enumerate() {
            let s = self
                .series
                .get(old)
                .ok_or_else(|| Error::InvalidArgument(format!("subject {old} out of range")))?;
            for k in 0..s.len() {
                b.push(new, s.times[k], s.excess[k], s.threshold[k], &s.covariates(k)[1..])?;
            }
            b.set_observed(new, s.n_observed)?;
        }
        b.build()
    }
}

#[derive(Serialize, Deserialize)]
struct SeriesRepr {
    times: Vec<usize>,
    excess: Vec<f64>,
    threshold: Vec<f64>,
    /// Non-intercept covariates, row-major.
    covariates: Vec<f64>,
    n_observed: usize,
}

#[derive(Serialize, Deserialize)]
struct PanelRepr {
    n_times: usize,
    covariate_names: Vec<String>,
    scale_cols: Vec<usize>,
    shape_cols: Vec<usize>,
    subjects: Vec<SeriesRepr>,
}

impl From<ExcessPanel> for PanelRepr {
    fn from(p: ExcessPanel) -> Self {
        let q = p.n_covariates() - 1;
        let subjects = p
            .series
            .iter()
            .map(|s| SeriesRepr {
                times: s.times.clone(),
                excess: s.excess.clone(),
                threshold: s.threshold.clone(),
                covariates: (0..s.len()).flat_map(|k| s.covariates(k)[1..=q].to_vec()).collect(),
                n_observed: s.n_observed,
            })
            .collect();
        PanelRepr {
            n_times: p.n_times,
            covariate_names: p.covariate_names,
            scale_cols: p.scale_cols,
            shape_cols: p.shape_cols,
            subjects,
        }
    }
}

impl TryFrom<PanelRepr> for ExcessPanel {
    type Error = Error;

    fn try_from(r: PanelRepr) -> Result<Self> {
        let q = r.covariate_names.len();
        let mut b = PanelBuilder::new(r.subjects.len(), r.n_times, r.covariate_names);
        b.scale_cols = Some(r.scale_cols);
        b.shape_cols = Some(r.shape_cols);
        for (i, s) in r.subjects.iter().enumerate() {
            let n = s.times.len();
            if s.excess.len() != n || s.threshold.len() != n || s.covariates.len() != n * q {
                return Err(Error::Dimension(format!("subject {i}: inconsistent series lengths")));
            }
            for k in 0..n {
                b.push(
                    i,
                    s.times[k],
                    s.excess[k],
                    s.threshold[k],
                    &s.covariates[k * q..(k + 1) * q],
                )?;
            }
            b.set_observed(i, s.n_observed)?;
        }
        b.build()
    }
}

/// Incremental constructor for [`ExcessPanel`].
/// Time, value, threshold and covariates of one buffered cell.
type Cell = (usize, f64, f64, Vec<f64>);

#[derive(Debug, Clone)]
pub struct PanelBuilder {
    n_subjects: usize,
    n_times: usize,
    covariate_names: Vec<String>,
    cells: Vec<Vec<Cell>>,
    n_observed: Vec<Option<usize>>,
    scale_cols: Option<Vec<usize>>,
    shape_cols: Option<Vec<usize>>,
}

impl PanelBuilder {
    /// `covariate_names` lists the non-intercept covariates.
    pub fn new(n_subjects: usize, n_times: usize, covariate_names: Vec<String>) -> Self {
        Self {
            n_subjects,
            n_times,
            covariate_names,
            cells: vec![Vec::new(); n_subjects],
            n_observed: vec![None; n_subjects],
            scale_cols: None,
            shape_cols: None,
        }
    }

    fn from_panel(p: &ExcessPanel) -> Self {
        let mut b = Self::new(p.n_subjects(), p.n_times, p.covariate_names.clone());
        for (i, s) in p.series.iter().enumerate() {
            for k in 0..s.len() {
                b.cells[i].push((s.times[k], s.excess[k], s.threshold[k], s.covariates(k)[1..].to_vec()));
            }
            b.n_observed[i] = Some(s.n_observed);
        }
        b
    }

    /// Adds one excess. `covariates` excludes the intercept.
    pub fn push(&mut self, subject: usize, time: usize, excess: f64, threshold: f64, covariates: &[f64]) -> Result<()> {
        if subject >= self.n_subjects {
            return Err(Error::InvalidArgument(format!(
                "subject {subject} out of range (N = {})",
                self.n_subjects
            )));
        }
        if time >= self.n_times {
            return Err(Error::InvalidArgument(format!(
                "time {time} out of range (T = {})",
                self.n_times
            )));
        }
        if !excess.is_finite() || !threshold.is_finite() || covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cell ({subject}, {time})")));
        }
        if excess < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "negative excess {excess} at ({subject}, {time})"
            )));
        }
        if covariates.len() != self.covariate_names.len() {
            return Err(Error::Dimension(format!(
                "cell ({subject}, {time}) has {} covariates, expected {}",
                covariates.len(),
                self.covariate_names.len()
            )));
        }
        self.cells[subject].push((time, excess, threshold, covariates.to_vec()));
        Ok(())
    }

    /// Number of raw observations of `subject`; defaults to `T`.
    pub fn set_observed(&mut self, subject: usize, n: usize) -> Result<()> {
        if subject >= self.n_subjects {
            return Err(Error::InvalidArgument(format!("subject {subject} out of range")));
        }
        self.n_observed[subject] = Some(n);
        Ok(())
    }

    /// Covariate columns of the scale link (0 is the intercept). Default: all.
    pub fn scale_columns(mut self, cols: Vec<usize>) -> Self {
        self.scale_cols = Some(cols);
        self
    }

    /// Covariate columns of the shape link. Default: intercept only.
    pub fn shape_columns(mut self, cols: Vec<usize>) -> Self {
        self.shape_cols = Some(cols);
        self
    }

    pub fn build(self) -> Result<ExcessPanel> {
        if self.n_subjects == 0 || self.n_times == 0 {
            return Err(Error::InvalidArgument("panel needs N >= 1 and T >= 1".into()));
        }
        if self.n_times < self.n_subjects {
            return Err(Error::InvalidArgument(format!(
                "panel needs T >= N (T = {}, N = {})",
                self.n_times, self.n_subjects
            )));
        }
        let n_cov = self.covariate_names.len() + 1;
        let scale_cols = self.scale_cols.unwrap_or_else(|| (0..n_cov).collect());
        let shape_cols = self.shape_cols.unwrap_or_else(|| vec![0]);
        for (name, cols) in [("scale", &scale_cols), ("shape", &shape_cols)] {
            if cols.is_empty() {
                return Err(Error::InvalidArgument(format!("{name} link has no covariates")));
            }
            let distinct: BTreeSet<_> = cols.iter().collect();
            if distinct.len() != cols.len() || cols.iter().any(|&c| c >= n_cov) {
                return Err(Error::InvalidArgument(format!(
                    "{name} covariate columns {cols:?} invalid for {n_cov} columns"
                )));
            }
        }
        let (dim_gamma, dim_delta) = (scale_cols.len(), shape_cols.len());
        let mut series = Vec::with_capacity(self.n_subjects);
        for (i, mut cells) in self.cells.into_iter().enumerate() {
            cells.sort_by_key(|c| c.0);
            if let Some(w) = cells.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate cell at subject {i}, time {}",
                    w[0].0
                )));
            }
            let n = cells.len();
            let mut s = SubjectSeries {
                times: Vec::with_capacity(n),
                excess: Vec::with_capacity(n),
                threshold: Vec::with_capacity(n),
                covariates: Vec::with_capacity(n * n_cov),
                scale_design: Vec::with_capacity(n * dim_gamma),
                shape_design: Vec::with_capacity(n * dim_delta),
                n_observed: self.n_observed[i].unwrap_or(self.n_times),
                n_cov,
                dim_gamma,
                dim_delta,
            };
            for (t, z, u, x) in cells {
                s.times.push(t);
                s.excess.push(z);
                s.threshold.push(u);
                let start = s.covariates.len();
                s.covariates.push(1.0);
                s.covariates.extend_from_slice(&x);
                let row = &s.covariates[start..];
                s.scale_design.extend(scale_cols.iter().map(|&c| row[c]));
                s.shape_design.extend(shape_cols.iter().map(|&c| row[c]));
            }
            if s.n_observed < s.len() {
                return Err(Error::InvalidArgument(format!(
                    "subject {i}: {} excesses but only {} observations",
                    s.len(),
                    s.n_observed
                )));
            }
            series.push(s);
        }
        Ok(ExcessPanel {
            n_times: self.n_times,
            covariate_names: self.covariate_names,
            scale_cols,
            shape_cols,
            series,
        })
    }
}

/// Dense `N × T` observations; `NaN` marks a missing value.
#[derive(Debug, Clone)]
pub struct RawPanel {
    pub values: Vec<Vec<f64>>,
    /// Per subject, row-major `T × q` non-intercept covariates.
    pub covariates: Vec<Vec<f64>>,
    pub covariate_names: Vec<String>,
}

impl RawPanel {
    pub fn new(values: Vec<Vec<f64>>, covariates: Vec<Vec<f64>>, covariate_names: Vec<String>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::InvalidArgument("raw panel has no subjects".into()));
        }
        let t = values[0].len();
        let q = covariate_names.len();
        if values.iter().any(|v| v.len() != t) {
            return Err(Error::Dimension("all subject series must have the same length".into()));
        }
        let covariates = if covariates.is_empty() && q == 0 {
            vec![Vec::new(); n]
        } else {
            covariates
        };
        if covariates.len() != n || covariates.iter().any(|c| c.len() != t * q) {
            return Err(Error::Dimension(format!("covariates must be {n} blocks of {t}×{q}")));
        }
        Ok(Self {
            values,
            covariates,
            covariate_names,
        })
    }

    /// Observations without covariates.
    pub fn from_values(values: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(values, Vec::new(), Vec::new())
    }

    pub fn n_subjects(&self) -> usize {
        self.values.len()
    }

    pub fn n_times(&self) -> usize {
        self.values[0].len()
    }
}

/// Result of thresholding a raw panel.
#[derive(Debug, Clone)]
pub struct Thresholded {
    pub panel: ExcessPanel,
    pub thresholds: Vec<f64>,
    /// Subjects left without any excess.
    pub empty_subjects: Vec<usize>,
}

/// Type-7 empirical quantile (linear interpolation of order statistics).
pub fn empirical_quantile(data: &[f64], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile level {q} outside [0,1]")));
    }
    let mut v: Vec<f64> = data.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return Err(Error::InvalidArgument("no observations for the quantile".into()));
    }
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Per-subject constant thresholds at the empirical `q`-quantile; keeps the
/// observations strictly above the threshold at their original positions.
pub fn apply_thresholds(raw: &RawPanel, q: f64) -> Result<Thresholded> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold quantile must be in (0,1), got {q}"
        )));
    }
    let (n, t) = (raw.n_subjects(), raw.n_times());
    let qd = raw.covariate_names.len();
    let mut b = PanelBuilder::new(n, t, raw.covariate_names.clone());
    let mut thresholds = Vec::with_capacity(n);
    for i in 0..n {
        let series = &raw.values[i];
        let observed = series.iter().filter(|v| !v.is_nan()).count();
        if observed == 0 {
            return Err(Error::InvalidArgument(format!("subject {} has no observations", i + 1)));
        }
        let u = empirical_quantile(series, q)?;
        thresholds.push(u);
        for (tt, &y) in series.iter().enumerate() {
            if !y.is_nan() && y > u {
                b.push(i, tt, y - u, u, &raw.covariates[i][tt * qd..(tt + 1) * qd])?;
            }
        }
        b.set_observed(i, observed)?;
    }
    let panel = b.build()?;
    let empty_subjects = panel.empty_subjects();
    Ok(Thresholded {
        panel,
        thresholds,
        empty_subjects,
    })
}

/// Uniform sample without replacement of `⌈fraction · count⌉` excess cells.
/// Time indices are kept.
pub fn subsample(panel: &ExcessPanel, fraction: f64, seed: u64) -> Result<ExcessPanel> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must be in (0,1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(panel.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subsample_with(panel, fraction, &mut rng)
}

pub(crate) fn subsample_with<R: rand::Rng + ?Sized>(
    panel: &ExcessPanel,
    fraction: f64,
    rng: &mut R,
) -> Result<ExcessPanel> {
    let cells: Vec<(usize, usize)> = panel
        .series
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.len()).map(move |k| (i, k)))
        .collect();
    let keep = ((fraction * cells.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let keep = keep.min(cells.len());
    let mut picked = rand::seq::index::sample(rng, cells.len(), keep).into_vec();
    picked.sort_unstable();
    let mut b = PanelBuilder::new(panel.n_subjects(), panel.n_times, panel.covariate_names.clone());
    b.scale_cols = Some(panel.scale_cols.clone());
    b.shape_cols = Some(panel.shape_cols.clone());
    for idx in picked {
        let (i, k) = cells[idx];
        let s = &panel.series[i];
        b.push(i, s.times[k], s.excess[k], s.threshold[k], &s.covariates(k)[1..])?;
    }
    for (i, s) in panel.series.iter().enumerate() {
        b.set_observed(i, s.n_observed)?;
    }
    b.build()
}

/// Two-level latent partition `(A_γ, A_δ)`.
///
/// Equality compares the partitions, not the label values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "AssignmentRepr", into = "AssignmentRepr")]
pub struct GroupAssignment {
    scale: Vec<usize>,
    shape: Vec<usize>,
    g_scale: usize,
    g_shape: usize,
}

#[derive(Serialize, Deserialize)]
struct AssignmentRepr {
    #[serde(with = "one_based")]
    scale_groups: Vec<usize>,
    #[serde(with = "one_based")]
    shape_groups: Vec<usize>,
    g_scale: usize,
    g_shape: usize,
}

impl From<GroupAssignment> for AssignmentRepr {
    fn from(a: GroupAssignment) -> Self {
        AssignmentRepr {
            scale_groups: a.scale,
            shape_groups: a.shape,
            g_scale: a.g_scale,
            g_shape: a.g_shape,
        }
    }
}

impl TryFrom<AssignmentRepr> for GroupAssignment {
    type Error = Error;

    fn try_from(r: AssignmentRepr) -> Result<Self> {
        GroupAssignment::new(r.scale_groups, r.shape_groups, r.g_scale, r.g_shape)
    }
}

fn check_labels(labels: &[usize], g: usize, level: &'static str) -> Result<()> {
    if g == 0 || g > labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{level} group count {g} must be in 1..={}",
            labels.len()
        )));
    }
    let mut seen = vec![false; g];
    for &l in labels {
        if l >= g {
            return Err(Error::InvalidArgument(format!("{level} label {} exceeds {g}", l + 1)));
        }
        seen[l] = true;
    }
    if let Some(empty) = seen.iter().position(|s| !s) {
        return Err(Error::EmptyGroup {
            level,
            group: empty + 1,
        });
    }
    Ok(())
}

/// Relabels by first appearance; returns the labels and the map old → new.
fn canonical_labels(labels: &[usize], g: usize) -> (Vec<usize>, Vec<usize>) {
    let mut map = vec![usize::MAX; g];
    let mut next = 0;
    let relabeled = labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect();
    (relabeled, map)
}

impl GroupAssignment {
    /// 0-based labels; every group in `0..g` must be used.
    pub fn new(scale: Vec<usize>, shape: Vec<usize>, g_scale: usize, g_shape: usize) -> Result<Self> {
        if scale.is_empty() || scale.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "assignment lengths {} and {} must match and be positive",
                scale.len(),
                shape.len()
            )));
        }
        check_labels(&scale, g_scale, "scale")?;
        check_labels(&shape, g_shape, "shape")?;
        Ok(Self {
            scale,
            shape,
            g_scale,
            g_shape,
        })
    }

    /// 1-based labels; the group counts are the largest labels.
    pub fn from_one_based(scale: &[usize], shape: &[usize]) -> Result<Self> {
        let conv = |v: &[usize]| -> Result<Vec<usize>> {
            v.iter()
                .map(|&l| {
                    l.checked_sub(1)
                        .ok_or_else(|| Error::InvalidArgument("labels are 1-based".into()))
                })
                .collect()
        };
        let s = conv(scale)?;
        let d = conv(shape)?;
        let gs = s.iter().max().map_or(0, |m| m + 1);
        let gd = d.iter().max().map_or(0, |m| m + 1);
        Self::new(s, d, gs, gd)
    }

    /// Everyone in one scale group and one shape group.
    pub fn single(n: usize) -> Result<Self> {
        Self::new(vec![0; n], vec![0; n], 1, 1)
    }

    pub fn n_subjects(&self) -> usize {
        self.scale.len()
    }

    pub fn g_scale(&self) -> usize {
        self.g_scale
    }

    pub fn g_shape(&self) -> usize {
        self.g_shape
    }

    pub fn scale(&self) -> &[usize] {
        &self.scale
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn scale_members(&self, tau: usize) -> Vec<usize> {
        (0..self.scale.len()).filter(|&i| self.scale[i] == tau).collect()
    }

    pub fn shape_members(&self, tau: usize) -> Vec<usize> {
        (0..self.shape.len()).filter(|&i| self.shape[i] == tau).collect()
    }

    pub fn scale_one_based(&self) -> Vec<usize> {
        self.scale.iter().map(|l| l + 1).collect()
    }

    pub fn shape_one_based(&self) -> Vec<usize> {
        self.shape.iter().map(|l| l + 1).collect()
    }

    /// Labels renumbered by first appearance, with the old → new maps for
    /// the scale and shape levels.
    pub fn canonicalize(&self) -> (Self, Vec<usize>, Vec<usize>) {
        let (s, ms) = canonical_labels(&self.scale, self.g_scale);
        let (d, md) = canonical_labels(&self.shape, self.g_shape);
        (
            Self {
                scale: s,
                shape: d,
                g_scale: self.g_scale,
                g_shape: self.g_shape,
            },
            ms,
            md,
        )
    }

    pub fn canonical(&self) -> Self {
        self.canonicalize().0
    }
}

impl PartialEq for GroupAssignment {
    fn eq(&self, other: &Self) -> bool {
        self.g_scale == other.g_scale
            && self.g_shape == other.g_shape
            && canonical_labels(&self.scale, self.g_scale).0 == canonical_labels(&other.scale, other.g_scale).0
            && canonical_labels(&self.shape, self.g_shape).0 == canonical_labels(&other.shape, other.g_shape).0
    }
}

impl Eq for GroupAssignment {}

/// Maximal set of subjects linked through shared scale or shape groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectNet {
    #[serde(with = "one_based")]
    pub members: Vec<usize>,
    #[serde(with = "one_based")]
    pub scale_labels: Vec<usize>,
    #[serde(with = "one_based")]
    pub shape_labels: Vec<usize>,
}

impl SubjectNet {
    /// Number of free regression coefficients in the net.
    pub fn n_params(&self, dim_gamma: usize, dim_delta: usize) -> usize {
        dim_gamma * self.scale_labels.len() + dim_delta * self.shape_labels.len()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components of the graph linking subjects that share a scale
/// or a shape group, ordered by smallest member.
pub fn derive_nets(a: &GroupAssignment) -> Vec<SubjectNet> {
    let n = a.n_subjects();
    let mut parent: Vec<usize> = (0..n).collect();
    let union = |parent: &mut Vec<usize>, x: usize, y: usize| {
        let (rx, ry) = (find(parent, x), find(parent, y));
        if rx != ry {
            parent[rx.max(ry)] = rx.min(ry);
        }
    };
    for (labels, g) in [(&a.scale, a.g_scale), (&a.shape, a.g_shape)] {
        let mut first = vec![usize::MAX; g];
        for (i, &l) in labels.iter().enumerate() {
            if first[l] == usize::MAX {
                first[l] = i;
            } else {
                union(&mut parent, first[l], i);
            }
        }
    }
    let mut nets: Vec<SubjectNet> = Vec::new();
    let mut root_to_net = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_to_net[r] == usize::MAX {
            root_to_net[r] = nets.len();
            nets.push(SubjectNet {
                members: Vec::new(),
                scale_labels: Vec::new(),
                shape_labels: Vec::new(),
            });
        }
        nets[root_to_net[r]].members.push(i);
    }
    for net in &mut nets {
        let s: BTreeSet<usize> = net.members.iter().map(|&i| a.scale[i]).collect();
        let d: BTreeSet<usize> = net.members.iter().map(|&i| a.shape[i]).collect();
        net.scale_labels = s.into_iter().collect();
        net.shape_labels = d.into_iter().collect();
    }
    nets
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ga(s: &[usize], d: &[usize]) -> GroupAssignment {
        GroupAssignment::from_one_based(s, d).unwrap()
    }

    #[test]
    fn nets_chain_through_both_levels() {
        let nets = derive_nets(&ga(&[1, 1, 2], &[1, 2, 2]));
        assert_eq!(nets.len(), 1);
        assert_eq!(nets[0].members, vec![0, 1, 2]);
    }

    #[test]
    fn nets_split_without_shared_labels() {
        let nets = derive_nets(&ga(&[1, 2], &[1, 2]));
        assert_eq!(nets.len(), 2);
        assert_eq!(nets[0].members, vec![0]);
        assert_eq!(nets[1].members, vec![1]);
    }

    #[test]
    fn simulation_design_is_one_net_of_eleven_parameters() {
        let a = ga(
            &[1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4],
            &[1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3],
        );
        let nets = derive_nets(&a);
        assert_eq!(nets.len(), 1);
        assert_eq!(nets[0].members, (0..12).collect::<Vec<_>>());
        assert_eq!(nets[0].n_params(2, 1), 11);
        let b = ga(
            &[1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4],
            &[1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4],
        );
        let nb = derive_nets(&b);
        assert_eq!(nb.len(), 4);
        assert!(nb.iter().all(|n| n.n_params(2, 1) == 3));
    }

    #[test]
    fn assignment_equality_is_partition_equality() {
        assert_eq!(ga(&[1, 1, 2], &[2, 1, 1]), ga(&[2, 2, 1], &[1, 2, 2]));
        assert_ne!(ga(&[1, 1, 2], &[1, 1, 1]), ga(&[1, 2, 2], &[1, 1, 1]));
        let (c, map, _) = ga(&[2, 2, 1], &[1, 1, 1]).canonicalize();
        assert_eq!(c.scale(), &[0, 0, 1]);
        assert_eq!(map, vec![1, 0]);
    }

    #[test]
    fn empty_group_rejected() {
        assert!(matches!(
            GroupAssignment::new(vec![0, 0], vec![0, 0], 2, 1),
            Err(Error::EmptyGroup { .. })
        ));
    }

    #[test]
    fn assignment_json_is_one_based() {
        let a = ga(&[1, 2, 2], &[1, 1, 1]);
        let s = serde_json::to_string(&a).unwrap();
        assert!(s.contains("\"scale_groups\":[1,2,2]"), "{s}");
        let back: GroupAssignment = serde_json::from_str(&s).unwrap();
        assert_eq!(back.scale(), a.scale());
        assert!(serde_json::from_str::<GroupAssignment>(
            r#"{"scale_groups":[0,1],"shape_groups":[1,1],"g_scale":2,"g_shape":1}"#
        )
        .is_err());
    }

    #[test]
    fn type7_quantile_of_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((empirical_quantile(&v, 0.95).unwrap() - 95.05).abs() < 1e-12);
        let raw = RawPanel::from_values(vec![v]).unwrap();
        let th = apply_thresholds(&raw, 0.95).unwrap();
        let s = th.panel.subject(0);
        assert_eq!(s.times(), &[95, 96, 97, 98, 99]);
        assert!((s.excess()[0] - 0.95).abs() < 1e-12);
        assert!(th.empty_subjects.is_empty());
    }

    #[test]
    fn threshold_level_must_be_interior() {
        let raw = RawPanel::from_values(vec![vec![1.0, 2.0]]).unwrap();
        assert!(apply_thresholds(&raw, 0.0).is_err());
        assert!(apply_thresholds(&raw, 1.0).is_err());
    }

    #[test]
    fn constant_series_has_no_excess() {
        let raw = RawPanel::from_values(vec![vec![3.0; 50]]).unwrap();
        let th = apply_thresholds(&raw, 0.95).unwrap();
        assert_eq!(th.empty_subjects, vec![0]);
        assert_eq!(th.panel.n_excess(), 0);
    }

    #[test]
    fn all_missing_subject_rejected() {
        let raw = RawPanel::from_values(vec![vec![1.0; 5], vec![f64::NAN; 5]]).unwrap();
        assert!(apply_thresholds(&raw, 0.5).is_err());
    }

    fn full_panel(n: usize, t: usize) -> ExcessPanel {
        let mut b = PanelBuilder::new(n, t, vec!["x".into()]);
        for i in 0..n {
            for tt in 0..t {
                b.push(i, tt, (i * t + tt) as f64 * 1e-3, 0.0, &[tt as f64]).unwrap();
            }
        }
        b.build().unwrap()
    }

    #[test]
    fn subsample_counts_and_determinism() {
        let p = full_panel(12, 2000);
        let s = subsample(&p, 0.1, 5).unwrap();
        assert_eq!(s.n_excess(), 2400);
        let s2 = subsample(&p, 0.1, 5).unwrap();
        for i in 0..12 {
            assert_eq!(s.subject(i).times(), s2.subject(i).times());
        }
        let whole = subsample(&p, 1.0, 5).unwrap();
        assert_eq!(whole.n_excess(), p.n_excess());
        assert!(subsample(&p, 0.0, 1).is_err());
    }

    #[test]
    fn subsample_keeps_time_positions_and_covariates() {
        let p = full_panel(2, 100);
        let s = subsample(&p, 0.3, 9).unwrap();
        for i in 0..2 {
            let ss = s.subject(i);
            for k in 0..ss.len() {
                assert_eq!(ss.covariates(k)[1], ss.times()[k] as f64);
            }
        }
    }

    #[test]
    fn design_masks() {
        let p = full_panel(2, 3);
        assert_eq!(p.dim_gamma(), 2);
        assert_eq!(p.dim_delta(), 1);
        assert_eq!(p.subject(1).scale_x(2), &[1.0, 2.0]);
        assert_eq!(p.subject(1).shape_x(2), &[1.0]);
        let q = p.with_design(vec![0], vec![0, 1]).unwrap();
        assert_eq!(q.subject(1).shape_x(2), &[1.0, 2.0]);
        assert!(p.with_design(vec![0, 2], vec![0]).is_err());
    }

    #[test]
    fn panel_json_round_trip() {
        let p = full_panel(2, 4);
        let s = serde_json::to_string(&p).unwrap();
        let back: ExcessPanel = serde_json::from_str(&s).unwrap();
        assert_eq!(back.n_excess(), 8);
        assert_eq!(back.subject(1).covariates(3), p.subject(1).covariates(3));
    }

    #[test]
    fn builder_rejects_bad_cells() {
        let mut b = PanelBuilder::new(1, 5, vec![]);
        assert!(b.push(0, 1, -1.0, 0.0, &[]).is_err());
        assert!(b.push(0, 9, 1.0, 0.0, &[]).is_err());
        assert!(b.push(0, 1, 1.0, 0.0, &[2.0]).is_err());
        b.push(0, 1, 1.0, 0.0, &[]).unwrap();
        b.push(0, 1, 2.0, 0.0, &[]).unwrap();
        assert!(b.build().is_err());
        assert!(PanelBuilder::new(3, 2, vec![]).build().is_err());
    }
}
