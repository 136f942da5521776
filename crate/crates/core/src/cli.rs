//! Command implementations behind the `gpgroup` binary.
//!
//! Every command is deterministic given its input files, flags and
//! `--seed`. Randomness is split into independent streams from that seed:
//! data generation uses stream 0, estimation (random starts, multistep
//! runs) stream 1, and replication `r` of a study uses the child seed
//! `splitmix64(seed ^ splitmix64(r + 1))`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::covariance::{sandwich_all, subject_gp_covariance, wald_intervals, WaldInterval, WindowConfig};
use crate::error::{Error, Result};
use crate::estimate::{bca_fit, random_init, FitResult};
use crate::gpd::{exceedance_variance, return_level, return_level_variance, GpParams, ReturnLevelSpec};
use crate::groupsearch::{select_by_bic, two_stage_hier, SearchConfig, SearchResult};
use crate::io::{csv_err, read_json, read_long_csv_path, write_json, write_panel_csv};
use crate::panel::{ExcessPanel, GroupAssignment, Thresholded};
use crate::rng::{stream_rng, STREAM_DATA, STREAM_ESTIMATE};
use crate::simgen::{
    coefficient_names, gen_covariates, gen_excess_panel, gen_full_panel, run_study, Dependence, SimConfig, Study,
    StudyConfig, StudyOutput,
};

#[derive(Debug, Parser)]
#[command(
    name = "gpgroup",
    version,
    about = "Grouped panel generalized Pareto regression for peaks over thresholds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model at a given group assignment and report Wald intervals.
    Fit(FitArgs),
    /// Search the group structure and dimensions.
    SelectGroups(SelectArgs),
    /// Per-subject return levels with delta-method intervals.
    ReturnLevels(ReturnLevelArgs),
    /// Write a simulated excess panel.
    Simulate(SimulateArgs),
    /// Run a replication study.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InputArgs {
    /// Long-format CSV: subject,time,value[,threshold][,covariates...]
    #[arg(long)]
    pub input: PathBuf,
    /// Covariate columns to read (default: every non-reserved column).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Covariates of the scale link, besides the intercept (default: all).
    #[arg(long, value_delimiter = ',')]
    pub scale_covariates: Option<Vec<String>>,
    /// Covariates of the shape link, besides the intercept (default: none).
    #[arg(long, value_delimiter = ',')]
    pub shape_covariates: Option<Vec<String>>,
    /// Per-subject threshold quantile, ignored when the file has thresholds.
    #[arg(long, default_value_t = 0.95)]
    pub threshold_quantile: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Group assignment JSON; omitted means one group at both levels.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    /// Dependence window of the sandwich covariance.
    #[arg(long, default_value_t = 0)]
    pub window: usize,
    /// Confidence level of the Wald intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SearchMethod {
    /// Scale dimension by BIC, then hierarchical merging of shape groups.
    Hierarchical,
    /// Full BIC comparison over the grid.
    Bic,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub g_scale: Vec<usize>,
    /// Shape dimensions (BIC method only).
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub g_shape: Vec<usize>,
    /// Multistep runs per dimension pair.
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, value_enum, default_value_t = SearchMethod::Hierarchical)]
    pub method: SearchMethod,
    /// Shape groups of the first stage (default ⌈√N⌉).
    #[arg(long)]
    pub stage1_shape: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub window: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReturnLevelArgs {
    /// `fit.json` written by `fit` or `select-groups`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Input CSV the fit was made on (default: the path stored in the fit).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Return periods, in observations (or years with --obs-per-year).
    #[arg(long, value_delimiter = ',', required = true)]
    pub periods: Vec<f64>,
    /// Observations per year; periods are then read in years.
    #[arg(long)]
    pub obs_per_year: Option<f64>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Output CSV (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DependenceArg {
    Independence,
    CrossSectional,
    BlockWise,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML simulation config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_times: Option<usize>,
    #[arg(long, value_enum)]
    pub dependence: Option<DependenceArg>,
    /// Block length of block-wise dependence.
    #[arg(long, default_value_t = 4)]
    pub block_len: usize,
    #[arg(long)]
    pub sample_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep every cell instead of subsampling.
    #[arg(long)]
    pub full: bool,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write the true assignment as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyArg {
    Coverage,
    Rand,
    Identification,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    /// TOML study config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub study: StudyArg,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub n_times: Option<usize>,
    #[arg(long, value_enum)]
    pub dependence: Option<DependenceArg>,
    #[arg(long, default_value_t = 4)]
    pub block_len: usize,
    /// Copula correlation within a scale group.
    #[arg(long)]
    pub within_corr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

/// Everything needed to reuse a fit later.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub input: InputArgs,
    pub subjects: Vec<String>,
    pub thresholds: Vec<f64>,
    pub window: usize,
    pub level: f64,
    pub fit: FitResult,
    pub intervals: Vec<WaldInterval>,
}

/// A thresholded input panel with its subject labels.
pub struct LoadedPanel {
    pub subjects: Vec<String>,
    pub thresholded: Thresholded,
}

impl LoadedPanel {
    pub fn panel(&self) -> &ExcessPanel {
        &self.thresholded.panel
    }
}

fn column_indices(names: &[String], wanted: &[String]) -> Result<Vec<usize>> {
    let mut cols = vec![0];
    for w in wanted {
        let k = names
            .iter()
            .position(|n| n == w)
            .ok_or_else(|| Error::parse(None, format!("missing column '{w}'")))?;
        cols.push(k + 1);
    }
    Ok(cols)
}

pub fn load_panel(args: &InputArgs) -> Result<LoadedPanel> {
    if !(args.threshold_quantile > 0.0 && args.threshold_quantile < 1.0) {
        return Err(Error::InvalidArgument("threshold quantile must be in (0,1)".into()));
    }
    let table = read_long_csv_path(&args.input, args.covariates.as_deref())?;
    let mut th = table.threshold(args.threshold_quantile)?;
    let names = th.panel.covariate_names().to_vec();
    let scale = column_indices(&names, args.scale_covariates.as_deref().unwrap_or(&names))?;
    let shape = column_indices(&names, args.shape_covariates.as_deref().unwrap_or(&[]))?;
    th.panel = th.panel.with_design(scale, shape)?;
    Ok(LoadedPanel {
        subjects: table.subjects,
        thresholded: th,
    })
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must be in (0,1), got {level}")));
    }
    Ok(())
}

/// Adds sandwich covariances and Wald intervals to a fit.
fn with_covariance(
    panel: &ExcessPanel,
    mut fit: FitResult,
    window: usize,
    level: f64,
) -> Result<(FitResult, Vec<WaldInterval>)> {
    let sw = sandwich_all(panel, &fit, WindowConfig::new(window))?;
    let wald = wald_intervals(&fit, &sw, level)?;
    fit.covariance = Some(sw);
    Ok((fit, wald))
}

fn record(
    input: &InputArgs,
    loaded: &LoadedPanel,
    window: usize,
    level: f64,
    fit: FitResult,
    intervals: Vec<WaldInterval>,
) -> FitRecord {
    FitRecord {
        input: input.clone(),
        subjects: loaded.subjects.clone(),
        thresholds: loaded.thresholded.thresholds.clone(),
        window,
        level,
        fit,
        intervals,
    }
}

fn write_intervals(path: &Path, intervals: &[WaldInterval]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["coefficient", "estimate", "se", "lo", "hi"])
        .map_err(csv_err)?;
    for iv in intervals {
        w.write_record([
            iv.key.to_string(),
            iv.estimate.to_string(),
            iv.se.to_string(),
            iv.lo.to_string(),
            iv.hi.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_fit(args: &FitArgs) -> Result<FitRecord> {
    check_level(args.level)?;
    let loaded = load_panel(&args.input)?;
    let panel = loaded.panel();
    let a = match &args.assignment {
        Some(p) => read_json::<GroupAssignment>(p, "assignment")?,
        None => GroupAssignment::single(panel.n_subjects())?,
    };
    if a.n_subjects() != panel.n_subjects() {
        return Err(Error::Dimension(format!(
            "assignment covers {} subjects, panel has {}",
            a.n_subjects(),
            panel.n_subjects()
        )));
    }
    let mut rng = stream_rng(args.seed, STREAM_ESTIMATE);
    let init = random_init(panel, &a, &mut rng)?;
    let fit = bca_fit(panel, &a, &init, &Default::default())?;
    let (fit, wald) = with_covariance(panel, fit, args.window, args.level)?;
    let rec = record(&args.input, &loaded, args.window, args.level, fit, wald);
    fs::create_dir_all(&args.output_dir)?;
    write_json(&args.output_dir.join("fit.json"), "fit", &rec)?;
    write_intervals(&args.output_dir.join("coefficients.csv"), &rec.intervals)?;
    Ok(rec)
}

pub fn cmd_select_groups(args: &SelectArgs) -> Result<(SearchResult, FitRecord)> {
    check_level(args.level)?;
    let loaded = load_panel(&args.input)?;
    let panel = loaded.panel();
    let mut cfg = SearchConfig::new(args.g_scale.clone(), args.g_shape.clone(), args.seed);
    cfg.runs_per_pair = args.runs;
    cfg.shape_fixed_for_stage1 = args.stage1_shape;
    let res = match args.method {
        SearchMethod::Hierarchical => two_stage_hier(panel, &cfg)?,
        SearchMethod::Bic => select_by_bic(panel, &cfg)?,
    };
    let (fit, wald) = with_covariance(panel, res.best_fit.clone(), args.window, args.level)?;
    let rec = record(&args.input, &loaded, args.window, args.level, fit, wald);
    fs::create_dir_all(&args.output_dir)?;
    write_json(&args.output_dir.join("search.json"), "search", &res)?;
    write_json(
        &args.output_dir.join("assignment.json"),
        "assignment",
        &res.best_fit.assignment,
    )?;
    write_json(&args.output_dir.join("fit.json"), "fit", &rec)?;
    write_intervals(&args.output_dir.join("coefficients.csv"), &rec.intervals)?;
    let mut w = csv::Writer::from_path(args.output_dir.join("bic_table.csv")).map_err(csv_err)?;
    w.write_record(["g_scale", "g_shape", "bic", "runs_ok", "runs_failed"])
        .map_err(csv_err)?;
    for e in &res.bic_table {
        w.write_record([
            e.g_scale.to_string(),
            e.g_shape.to_string(),
            e.bic.map(|b| b.to_string()).unwrap_or_default(),
            e.runs_ok.to_string(),
            e.runs_failed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok((res, rec))
}

/// One row of the return-level table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnLevelRow {
    pub subject: String,
    /// Period as requested (observations, or years).
    pub period: f64,
    pub period_obs: f64,
    pub level: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Return levels of every subject with excesses, at the subject's mean
/// excess covariates, using the fit's covariance for the intervals.
pub fn return_level_table(
    panel: &ExcessPanel,
    subjects: &[String],
    thresholds: &[f64],
    fit: &FitResult,
    periods: &[f64],
    obs_per_year: Option<f64>,
    level: f64,
) -> Result<Vec<ReturnLevelRow>> {
    check_level(level)?;
    let sw = fit
        .covariance
        .as_deref()
        .ok_or_else(|| Error::MissingCovariance("the fit has no covariance".into()))?;
    if let Some(f) = obs_per_year {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::InvalidArgument("obs-per-year must be positive".into()));
        }
    }
    let zq = Normal::standard().inverse_cdf(0.5 * (1.0 + level));
    let mut rows = Vec::new();
    for i in 0..panel.n_subjects() {
        let s = panel.subject(i);
        if s.is_empty() {
            continue;
        }
        let x = s.mean_covariates();
        let (sigma, xi) = fit.subject_params_at(panel, i, &x);
        let p = GpParams::new(sigma, xi)?;
        let gp_cov = subject_gp_covariance(panel, fit, sw, i, &x)?;
        let zeta = s.exceed_prob();
        let mut cov = nalgebra::DMatrix::zeros(3, 3);
        cov.view_mut((0, 0), (2, 2)).copy_from(&gp_cov);
        cov[(2, 2)] = exceedance_variance(zeta, s.n_observed());
        for &period in periods {
            let period_obs = period * obs_per_year.unwrap_or(1.0);
            let spec = ReturnLevelSpec::new(thresholds[i], zeta, period_obs)?;
            let lvl = return_level(&spec, &p)?;
            let se = return_level_variance(&spec, &p, &cov)?.max(0.0).sqrt();
            rows.push(ReturnLevelRow {
                subject: subjects[i].clone(),
                period,
                period_obs,
                level: lvl,
                se,
                lo: lvl - zq * se,
                hi: lvl + zq * se,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_return_levels(args: &ReturnLevelArgs) -> Result<Vec<ReturnLevelRow>> {
    let rec: FitRecord = read_json(&args.fit, "fit")?;
    let mut input = rec.input.clone();
    if let Some(p) = &args.input {
        input.input = p.clone();
    }
    let loaded = load_panel(&input)?;
    if loaded.panel().n_subjects() != rec.fit.assignment.n_subjects() {
        return Err(Error::Dimension("input panel does not match the fit".into()));
    }
    let rows = return_level_table(
        loaded.panel(),
        &loaded.subjects,
        &loaded.thresholded.thresholds,
        &rec.fit,
        &args.periods,
        args.obs_per_year,
        args.level,
    )?;
    let out: Box<dyn Write> = match &args.output {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(out);
    for r in &rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(rows)
}

fn dependence(arg: DependenceArg, block_len: usize) -> Dependence {
    match arg {
        DependenceArg::Independence => Dependence::Independence,
        DependenceArg::CrossSectional => Dependence::CrossSectional,
        DependenceArg::BlockWise => Dependence::BlockWise { m: block_len },
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::parse(None, format!("{}: {e}", path.display())))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<ExcessPanel> {
    let mut cfg: SimConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => SimConfig::default(),
    };
    if let Some(t) = args.n_times {
        cfg.n_times = t;
    }
    if let Some(d) = args.dependence {
        cfg.dependence = dependence(d, args.block_len);
    }
    if let Some(f) = args.sample_fraction {
        cfg.sample_fraction = f;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, STREAM_DATA);
    let cov = gen_covariates(&cfg, &mut rng)?;
    let panel = if args.full {
        gen_full_panel(&cfg, &cov, &mut rng)?
    } else {
        gen_excess_panel(&cfg, &cov, &mut rng)?
    };
    if let Some(dir) = args.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_panel_csv(&panel, BufWriter::new(File::create(&args.output)?))?;
    if let Some(p) = &args.truth {
        write_json(p, "assignment", &cfg.truth.assignment)?;
    }
    Ok(panel)
}

/// CSV with one row per replication.
pub fn write_records_csv<W: Write>(out: &StudyOutput, cfg: &StudyConfig, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let names = coefficient_names(&cfg.sim.truth.params);
    let mut header: Vec<String> = ["rep", "seed", "iterations", "converged", "bic"]
        .map(String::from)
        .to_vec();
    match out.study {
        Study::Coverage => {
            for n in &names {
                header.push(format!("est_{n}"));
                header.push(format!("lo_{n}"));
                header.push(format!("hi_{n}"));
                header.push(format!("covered_{n}"));
            }
        }
        Study::Rand => header.extend(
            [
                "rand_scale",
                "rand_shape",
                "rand_scale_two_stage",
                "rand_shape_two_stage",
            ]
            .map(String::from),
        ),
        Study::Identification => header.extend(
            [
                "joint_g_scale",
                "joint_g_shape",
                "single_run_g_scale",
                "single_run_g_shape",
                "shape_given_scale_bic",
                "shape_given_scale_hier",
            ]
            .map(String::from),
        ),
    }
    wtr.write_record(&header).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let opt_u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &out.records {
        let mut row = vec![
            r.rep.to_string(),
            r.seed.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
            opt(r.bic),
        ];
        match out.study {
            Study::Coverage => {
                let est: Vec<f64> = r
                    .estimates
                    .as_ref()
                    .map(|p| p.gamma.iter().chain(&p.delta).flatten().copied().collect())
                    .unwrap_or_default();
                for k in 0..names.len() {
                    row.push(opt(est.get(k).copied()));
                    row.push(opt(r.intervals.get(k).map(|i| i.0)));
                    row.push(opt(r.intervals.get(k).map(|i| i.1)));
                    row.push(r.covered.get(k).map(|c| c.to_string()).unwrap_or_default());
                }
            }
            Study::Rand => {
                row.push(opt(r.rand_scale));
                row.push(opt(r.rand_shape));
                row.push(opt(r.rand_scale_two_stage));
                row.push(opt(r.rand_shape_two_stage));
            }
            Study::Identification => {
                row.push(opt_u(r.selected_joint.map(|j| j.0)));
                row.push(opt_u(r.selected_joint.map(|j| j.1)));
                row.push(opt_u(r.selected_joint_single_run.map(|j| j.0)));
                row.push(opt_u(r.selected_joint_single_run.map(|j| j.1)));
                row.push(opt_u(r.selected_shape_given_scale_bic));
                row.push(opt_u(r.selected_shape_given_scale_hier));
            }
        }
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Aggregate with the replication and discard counts.
#[derive(Debug, Serialize)]
struct StudySummary<'a> {
    study: Study,
    n_reps: usize,
    n_failed: usize,
    failures: &'a [(usize, String)],
    aggregate: &'a crate::simgen::Aggregate,
}

pub fn cmd_replicate(args: &ReplicateArgs) -> Result<StudyOutput> {
    let mut cfg: StudyConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => StudyConfig::default(),
    };
    if let Some(n) = args.reps {
        cfg.n_reps = n;
    }
    if let Some(t) = args.n_times {
        cfg.sim.n_times = t;
    }
    if let Some(d) = args.dependence {
        cfg.sim.dependence = dependence(d, args.block_len);
    }
    if let Some(c) = args.within_corr {
        cfg.sim.within_group_corr = c;
    }
    if let Some(s) = args.seed {
        cfg.sim.seed = s;
    }
    let study = match args.study {
        StudyArg::Coverage => Study::Coverage,
        StudyArg::Rand => Study::Rand,
        StudyArg::Identification => Study::Identification,
    };
    let out = run_study(&cfg, study)?;
    fs::create_dir_all(&args.output_dir)?;
    write_records_csv(
        &out,
        &cfg,
        BufWriter::new(File::create(args.output_dir.join("records.csv"))?),
    )?;
    let summary = StudySummary {
        study: out.study,
        n_reps: out.n_reps,
        n_failed: out.n_failed,
        failures: &out.failures,
        aggregate: &out.aggregate,
    };
    write_json(&args.output_dir.join("aggregate.json"), "study", &summary)?;
    Ok(out)
}

fn print_summary(out: &StudyOutput) {
    println!("replications: {}  discarded: {}", out.n_reps, out.n_failed);
    match &out.aggregate {
        crate::simgen::Aggregate::Coverage { names, rates } => {
            for (n, r) in names.iter().zip(rates) {
                println!("{n:>10}  {r:.3}");
            }
        }
        other => println!("{}", serde_json::to_string_pretty(other).unwrap_or_default()),
    }
}

/// Parses the command line, runs the command and returns the exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a).map(|r| {
            println!(
                "comp_loglik {:.6}  bic {:.6}  iterations {}",
                r.fit.comp_loglik, r.fit.bic, r.fit.iterations
            );
        }),
        Command::SelectGroups(a) => cmd_select_groups(a).map(|(res, _)| {
            let b = &res.best_fit;
            println!(
                "selected G_scale = {}  G_shape = {}  bic {:.6}",
                b.assignment.g_scale(),
                b.assignment.g_shape(),
                b.bic
            );
        }),
        Command::ReturnLevels(a) => cmd_return_levels(a).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(a).map(|p| {
            println!("wrote {} excesses for {} subjects", p.n_excess(), p.n_subjects());
        }),
        Command::Replicate(a) => cmd_replicate(a).map(|o| print_summary(&o)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
