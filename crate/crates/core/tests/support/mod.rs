//! Checks shared by the oracle, property and acceptance targets. Each
//! returns `Err` with a message instead of panicking.
#![allow(dead_code, clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

use gpgroup::covariance::{sandwich_net, Level, WindowConfig};
use gpgroup::estimate::{bca_fit, comp_loglik, random_init, BcaConfig, RegressionParams};
use gpgroup::gpd::{gp_cdf, gp_loglik, gp_quantile, gp_score_hessian, GpParams};
use gpgroup::groupsearch::{hierarchical_merge, multistep_fit, rand_index, SearchConfig};
use gpgroup::panel::{derive_nets, GroupAssignment, PanelBuilder};
use gpgroup::rng::stream_rng;
use gpgroup::simgen::{simulate_panel, Dependence, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn gp(scale: f64, shape: f64) -> GpParams {
    GpParams::new(scale, shape).unwrap()
}

pub fn small_sim(n_times: usize) -> SimConfig {
    SimConfig {
        n_times,
        dependence: Dependence::BlockWise { m: 4 },
        ..SimConfig::default()
    }
}

// ---- oracles ----

fn gp_draw(rng: &mut impl Rng, sigma: f64, xi: f64) -> f64 {
    let u: f64 = rng.gen_range(1e-12..1.0);
    if xi.abs() < 1e-12 {
        -sigma * u.ln()
    } else {
        sigma * (u.powf(-xi) - 1.0) / xi
    }
}

/// GP log-likelihood, written out directly.
fn oracle_loglik(z: &[f64], sigma: f64, xi: f64) -> f64 {
    let mut s = 0.0;
    for &v in z {
        let w = 1.0 + xi * v / sigma;
        if w <= 0.0 {
            return f64::NEG_INFINITY;
        }
        s += -sigma.ln() - (1.0 + 1.0 / xi) * w.ln();
    }
    s
}

/// Scale maximizing the likelihood at fixed shape: root of the score in
/// `σ`, by bisection on a log scale.
fn profile_scale(z: &[f64], xi: f64) -> f64 {
    let zmax = z.iter().cloned().fold(0.0, f64::max);
    let score = |sigma: f64| {
        let mut s = -(z.len() as f64);
        for &v in z {
            s += (1.0 + xi) * (v / sigma) / (1.0 + xi * v / sigma);
        }
        s
    };
    // For ξ < 0 the support needs σ > -ξ·max z.
    let mut lo = if xi < 0.0 { -xi * zmax * (1.0 + 1e-12) } else { 1e-8 };
    let mut hi = 1e4;
    for _ in 0..200 {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Two-parameter GP MLE by golden-section search on the profile likelihood.
fn oracle_mle(z: &[f64]) -> (f64, f64) {
    let prof = |xi: f64| oracle_loglik(z, profile_scale(z, xi), xi);
    let (mut a, mut b) = (-0.45, 2.0);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (prof(c), prof(d));
    for _ in 0..200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = prof(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = prof(d);
        }
    }
    let xi = 0.5 * (a + b);
    (profile_scale(z, xi), xi)
}

/// BCA on a one-group intercept-only net against the profile-likelihood MLE
/// of the pooled excesses.
pub fn bca_matches_mle(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_subj = 1 + (seed as usize % 3);
    let t = 150;
    let (sigma, xi) = (rng.gen_range(0.5..2.0), rng.gen_range(-0.2..0.4));
    let mut b = PanelBuilder::new(n_subj, t, vec![]);
    let mut all = Vec::new();
    for i in 0..n_subj {
        for tt in 0..t {
            if rng.gen_bool(0.5) {
                let z = gp_draw(&mut rng, sigma, xi);
                all.push(z);
                b.push(i, tt, z, 0.0, &[]).unwrap();
            }
        }
    }
    let panel = b.build().map_err(|e| e.to_string())?;
    let a = GroupAssignment::single(n_subj).unwrap();
    let init = random_init(&panel, &a, &mut rng).map_err(|e| e.to_string())?;
    let fit = bca_fit(&panel, &a, &init, &BcaConfig::default()).map_err(|e| e.to_string())?;
    let (s_hat, x_hat) = oracle_mle(&all);
    let g = fit.params.gamma[0][0].exp();
    let d = fit.params.delta[0][0];
    ensure!(
        (g - s_hat).abs() < 1e-4 * (1.0 + s_hat),
        "seed {seed}: scale {g} vs {s_hat}"
    );
    ensure!((d - x_hat).abs() < 1e-4, "seed {seed}: shape {d} vs {x_hat}");
    Ok(())
}

/// Per-cell scores in (log σ, ξ), written out directly.
fn cell_score(z: f64, eta: f64, xi: f64) -> (f64, f64) {
    let y = z * (-eta).exp();
    let w = 1.0 + xi * y;
    let d_eta = -1.0 + (1.0 + xi) * y / w;
    let d_xi = w.ln() / (xi * xi) - (1.0 + 1.0 / xi) * y / w;
    (d_eta, d_xi)
}

/// Meat of every net of a random toy panel against the double sum over all
/// cell pairs within the window. Returns the number of nets checked.
pub fn meat_matches_enumeration(seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
    let n = rng.gen_range(1..=3usize);
    let t = rng.gen_range(4..=20usize);
    let m = rng.gen_range(0..=3usize).min(t - 1);
    let scale: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let shape: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let gs = scale.iter().max().unwrap() + 1;
    let gd = shape.iter().max().unwrap() + 1;
    let Ok(a) = GroupAssignment::new(scale.clone(), shape.clone(), gs, gd) else {
        return Ok(0);
    };
    let mut b = PanelBuilder::new(n, t, vec!["x".into()]);
    let mut cells = Vec::new();
    for i in 0..n {
        for tt in 0..t {
            if rng.gen_bool(0.7) {
                let x: f64 = rng.gen_range(-1.0..1.0);
                let z = gp_draw(&mut rng, 1.0, 0.2);
                b.push(i, tt, z, 0.0, &[x]).unwrap();
                cells.push((i, tt, z, x));
            }
        }
    }
    let Ok(panel) = b.build() else { return Ok(0) };
    let params = RegressionParams::new(
        (0..gs).map(|g| vec![0.1 * g as f64, 0.2]).collect(),
        (0..gd).map(|g| vec![0.15 + 0.1 * g as f64]).collect(),
    );
    let mut checked = 0;
    for net in derive_nets(&a) {
        let Ok(r) = sandwich_net(&panel, &net, &a, &params, WindowConfig::new(m)) else {
            continue;
        };
        let dim = r.param_index.len();
        let embed = |&(i, _, z, x): &(usize, usize, f64, f64)| {
            let g = &params.gamma[scale[i]];
            let d = params.delta[shape[i]][0];
            let (de, dx) = cell_score(z, g[0] + g[1] * x, d);
            let mut v = vec![0.0; dim];
            for (k, key) in r.param_index.iter().enumerate() {
                match key.level {
                    Level::Scale if key.group == scale[i] => v[k] = de * if key.coef == 0 { 1.0 } else { x },
                    Level::Shape if key.group == shape[i] => v[k] = dx,
                    _ => {}
                }
            }
            v
        };
        let net_cells: Vec<_> = cells.iter().filter(|c| net.members.contains(&c.0)).collect();
        let mut v = vec![vec![0.0; dim]; dim];
        for c1 in &net_cells {
            for c2 in &net_cells {
                if c1.1.abs_diff(c2.1) <= m {
                    let (s1, s2) = (embed(c1), embed(c2));
                    for p in 0..dim {
                        for q in 0..dim {
                            v[p][q] += s1[p] * s2[q];
                        }
                    }
                }
            }
        }
        let scale_max = v.iter().flatten().fold(1.0f64, |acc, x| acc.max(x.abs()));
        for p in 0..dim {
            for q in 0..dim {
                let diff = (r.v_hat[(p, q)] - v[p][q]).abs();
                ensure!(
                    diff <= 1e-12 * scale_max,
                    "seed {seed} ({p},{q}): {} vs {}",
                    r.v_hat[(p, q)],
                    v[p][q]
                );
            }
        }
        checked += 1;
    }
    Ok(checked)
}

/// All set partitions of `n ≥ 1` elements as restricted growth strings.
pub fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == cur.len() {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max + 1 {
            cur[k] = l;
            rec(k + 1, max.max(l), cur, out);
        }
    }
    let mut out = Vec::new();
    rec(1, 0, &mut vec![0; n], &mut out);
    out
}

/// Rand index of every pair of partitions of `n` elements against a plain
/// pair count.
pub fn rand_matches_brute_force(n: usize) -> Check {
    let parts = partitions(n);
    for a in &parts {
        for b in &parts {
            let pairs = n * (n - 1) / 2;
            let mut agree = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if (a[i] == a[j]) == (b[i] == b[j]) {
                        agree += 1;
                    }
                }
            }
            let expect = agree as f64 / pairs as f64;
            let got = rand_index(a, b).map_err(|e| e.to_string())?;
            ensure!(got == expect, "{a:?} vs {b:?}: {got} != {expect}");
        }
    }
    Ok(())
}

// ---- numerical invariants ----

pub fn quantile_round_trip(prob: f64, scale: f64, shape: f64) -> Check {
    let p = gp(scale, shape);
    let z = gp_quantile(prob, &p).map_err(|e| e.to_string())?;
    let back = gp_cdf(z, &p).map_err(|e| e.to_string())?;
    ensure!(
        (back - prob).abs() < 1e-10,
        "F(Q({prob})) = {back} at ({scale}, {shape})"
    );
    Ok(())
}

pub fn zero_shape_continuity(z: f64, scale: f64) -> Check {
    let at0 = gp_cdf(z, &gp(scale, 0.0)).unwrap();
    for s in [1e-9, -1e-9] {
        let v = gp_cdf(z, &gp(scale, s)).unwrap();
        ensure!(
            (v - at0).abs() < 1e-7,
            "F({z}) jumps by {} at shape {s}",
            (v - at0).abs()
        );
    }
    Ok(())
}

/// Analytic score and Hessian of the GP sample log-likelihood against
/// central differences, on data drawn at probabilities `u`.
pub fn score_hessian_fd(u: &[f64], scale: f64, shape: f64) -> Check {
    let p = gp(scale, shape);
    let z: Vec<f64> = u.iter().map(|&q| gp_quantile(q, &p).unwrap()).collect();
    let (s, h) = gp_score_hessian(&z, &p).map_err(|e| e.to_string())?;
    let hs = 1e-5 * scale;
    let hx = 1e-5;
    let f = |a: f64, b: f64| gp_loglik(&z, &gp(a, b)).unwrap();
    let sc = |a: f64, b: f64| gp_score_hessian(&z, &gp(a, b)).unwrap().0;
    let fd = [
        (f(scale + hs, shape) - f(scale - hs, shape)) / (2.0 * hs),
        (f(scale, shape + hx) - f(scale, shape - hx)) / (2.0 * hx),
    ];
    let (sp, sm) = (sc(scale + hs, shape), sc(scale - hs, shape));
    let (xp, xm) = (sc(scale, shape + hx), sc(scale, shape - hx));
    let fdh = [
        [(sp[0] - sm[0]) / (2.0 * hs), (xp[0] - xm[0]) / (2.0 * hx)],
        [(sp[1] - sm[1]) / (2.0 * hs), (xp[1] - xm[1]) / (2.0 * hx)],
    ];
    // Relative to the gradient magnitude, since a component can vanish.
    let floor = 1.0 + s[0].abs().max(s[1].abs());
    for k in 0..2 {
        ensure!(
            (s[k] - fd[k]).abs() <= 1e-5 * floor.max(fd[k].abs()),
            "score {k}: {} vs {}",
            s[k],
            fd[k]
        );
    }
    let hfloor = 1.0 + h.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for a in 0..2 {
        for b in 0..2 {
            ensure!(
                (h[a][b] - fdh[a][b]).abs() <= 1e-5 * hfloor,
                "hessian ({a},{b}): {} vs {}",
                h[a][b],
                fdh[a][b]
            );
        }
    }
    Ok(())
}

/// Objective after every BCA cycle never drops, from a random start.
pub fn bca_ascent(seed: u64) -> Check {
    let cfg = small_sim(300);
    let panel = simulate_panel(&cfg, seed).map_err(|e| e.to_string())?;
    let a = &cfg.truth.assignment;
    let init = random_init(&panel, a, &mut stream_rng(seed, 1)).map_err(|e| e.to_string())?;
    let fit = bca_fit(&panel, a, &init, &BcaConfig::default()).map_err(|e| e.to_string())?;
    ensure!(fit.trace.len() >= 2, "no cycles recorded");
    for w in fit.trace.windows(2) {
        ensure!(w[1] >= w[0] - 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
    }
    let direct = comp_loglik(&panel, a, &fit.params).map_err(|e| e.to_string())?;
    ensure!((fit.comp_loglik - direct).abs() < 1e-9, "reported objective is stale");
    Ok(())
}

/// Objective after every multistep sub-step never drops, except where an
/// empty group was repaired; reruns reproduce the trajectory.
pub fn multistep_ascent(seed: u64) -> Check {
    let panel = simulate_panel(&small_sim(400), seed).map_err(|e| e.to_string())?;
    let cfg = SearchConfig::new(vec![4], vec![3], seed);
    let (_, log) = multistep_fit(&panel, 4, 3, &cfg, seed).map_err(|e| e.to_string())?;
    for (k, w) in log.loglik.windows(2).enumerate() {
        if log.repair_steps.contains(&(k + 1)) {
            continue;
        }
        ensure!(w[1] >= w[0] - 1e-9, "seed {seed}, step {}: {} -> {}", k + 1, w[0], w[1]);
    }
    let (_, again) = multistep_fit(&panel, 4, 3, &cfg, seed).map_err(|e| e.to_string())?;
    ensure!(log.loglik == again.loglik, "seed {seed}: rerun diverged");
    Ok(())
}

/// Every accepted merge lowers the model BIC.
pub fn merges_lower_bic(seed: u64) -> Check {
    let cfg = small_sim(600);
    let panel = simulate_panel(&cfg, seed).map_err(|e| e.to_string())?;
    let truth = &cfg.truth;
    let start: Vec<Vec<f64>> = (0..12).map(|_| vec![0.1]).collect();
    let out = hierarchical_merge(
        &panel,
        truth.assignment.scale(),
        &truth.params.gamma,
        &start,
        None,
        &BcaConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure!(!out.merges.is_empty(), "seed {seed}: nothing merged");
    for m in &out.merges {
        ensure!(
            !m.forced && m.delta_bic < 0.0,
            "seed {seed}: merge with delta {}",
            m.delta_bic
        );
        ensure!(
            m.model_bic_after < m.model_bic_before,
            "seed {seed}: BIC {} -> {}",
            m.model_bic_before,
            m.model_bic_after
        );
    }
    let sizes: usize = out.clusters.iter().map(Vec::len).sum();
    ensure!(sizes == 12, "clusters cover {sizes} subjects");
    Ok(())
}
