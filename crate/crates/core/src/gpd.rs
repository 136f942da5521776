//! Generalized Pareto distribution primitives.
//!
//! `H(z; σ, ξ) = 1 − (1 + ξz/σ)^(−1/ξ)` on the support `1 + ξz/σ > 0`,
//! with the exponential distribution as the `ξ → 0` limit. Shapes with
//! `|ξ| < SMALL_SHAPE` are routed to the limit formulas. Derivatives use
//! series expansions in `u = ξz/σ` when `|u|` is small, which keeps them
//! accurate across the whole neighbourhood of `ξ = 0`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{minimize_with_restart, newton_refine, Bounds, NelderMead};

/// Shapes closer to zero than this use the exponential-limit formulas.
pub const SMALL_SHAPE: f64 = 1e-8;
/// Lower box bound on fitted shapes.
pub const SHAPE_LOWER: f64 = -0.5 + 1e-6;
/// Upper box bound on fitted shapes.
pub const SHAPE_UPPER: f64 = 5.0;

const SERIES_SWITCH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub scale: f64,
    pub shape: f64,
}

impl GpParams {
    pub fn new(scale: f64, shape: f64) -> Result<Self> {
        if !scale.is_finite() || !shape.is_finite() {
            return Err(Error::NonFinite("GP parameters".into()));
        }
        if scale <= 0.0 {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        Ok(Self { scale, shape })
    }

    /// Upper end point of the support (infinite for `ξ >= 0`).
    pub fn upper_endpoint(&self) -> f64 {
        if self.shape < -SMALL_SHAPE {
            self.scale / -self.shape
        } else {
            f64::INFINITY
        }
    }
}

fn check_params(p: &GpParams) -> Result<()> {
    GpParams::new(p.scale, p.shape).map(|_| ())
}

/// `ln(1+u)/u`, continuous at zero.
fn log1p_ratio(u: f64) -> f64 {
    if u.abs() < 1e-10 {
        1.0 - u / 2.0
    } else {
        u.ln_1p() / u
    }
}

pub fn gp_cdf(z: f64, p: &GpParams) -> Result<f64> {
    check_params(p)?;
    if !z.is_finite() {
        return Err(Error::NonFinite("z".into()));
    }
    if z < 0.0 {
        return Err(Error::InvalidArgument(format!("excess must be nonnegative, got {z}")));
    }
    let y = z / p.scale;
    if p.shape.abs() < SMALL_SHAPE {
        return Ok(-(-y).exp_m1());
    }
    let u = p.shape * y;
    if u <= -1.0 {
        return Ok(1.0);
    }
    Ok(-(-u.ln_1p() / p.shape).exp_m1())
}

pub fn gp_quantile(prob: f64, p: &GpParams) -> Result<f64> {
    check_params(p)?;
    if !(0.0..1.0).contains(&prob) {
        return Err(Error::InvalidArgument(format!(
            "probability must be in [0,1), got {prob}"
        )));
    }
    Ok(quantile_from_log_survival((-prob).ln_1p(), p.scale, p.shape))
}

/// Quantile specified through `ln(1 − prob)`; avoids rounding `prob` near 1.
pub(crate) fn quantile_from_log_survival(log_surv: f64, scale: f64, shape: f64) -> f64 {
    if shape.abs() < SMALL_SHAPE {
        -scale * log_surv
    } else {
        scale / shape * (-shape * log_surv).exp_m1()
    }
}

/// Log-likelihood of one excess given scale and shape, `-inf` off the support.
#[inline]
pub fn cell_loglik(z: f64, scale: f64, shape: f64) -> f64 {
    let y = z / scale;
    if shape.abs() < SMALL_SHAPE {
        return -scale.ln() - y;
    }
    let u = shape * y;
    if u <= -1.0 {
        return f64::NEG_INFINITY;
    }
    -scale.ln() - u.ln_1p() - y * log1p_ratio(u)
}

/// Same as [`cell_loglik`] with the scale given on the log (link) scale.
#[inline]
pub fn cell_loglik_log_scale(z: f64, log_scale: f64, shape: f64) -> f64 {
    let y = z * (-log_scale).exp();
    if shape.abs() < SMALL_SHAPE {
        return -log_scale - y;
    }
    let u = shape * y;
    if u <= -1.0 {
        return f64::NEG_INFINITY;
    }
    -log_scale - u.ln_1p() - y * log1p_ratio(u)
}

/// Sample log-likelihood. Returns `-inf` (not an error) when any excess
/// falls outside the support.
pub fn gp_loglik(z: &[f64], p: &GpParams) -> Result<f64> {
    check_params(p)?;
    if z.is_empty() {
        return Err(Error::InvalidArgument("empty excess sample".into()));
    }
    let mut total = 0.0;
    for &zi in z {
        if !zi.is_finite() {
            return Err(Error::NonFinite("excess sample".into()));
        }
        if zi < 0.0 {
            return Err(Error::InvalidArgument(format!("excess must be nonnegative, got {zi}")));
        }
        total += cell_loglik(zi, p.scale, p.shape);
    }
    Ok(total)
}

/// `[ln(1+u) − u/(1+u)] / u²`.
fn series_b(u: f64) -> f64 {
    if u.abs() < SERIES_SWITCH {
        // Σ_{k≥2} (−1)^k (k−1)/k u^{k−2}
        let mut sum = 0.0;
        let mut pow = 1.0;
        for k in 2..32 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (k as f64 - 1.0) / k as f64 * pow;
            pow *= u;
        }
        sum
    } else {
        (u.ln_1p() - u / (1.0 + u)) / (u * u)
    }
}

/// `2/(u²(1+u)) + 1/(u(1+u)²) − 2 ln(1+u)/u³`.
fn series_c(u: f64) -> f64 {
    if u.abs() < SERIES_SWITCH {
        // Σ_{j≥0} (−1)^j [−j − 2/(j+3)] u^j
        let mut sum = 0.0;
        let mut pow = 1.0;
        for j in 0..30 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let jf = j as f64;
            sum += sign * (-jf - 2.0 / (jf + 3.0)) * pow;
            pow *= u;
        }
        sum
    } else {
        let a = 1.0 + u;
        2.0 / (u * u * a) + 1.0 / (u * a * a) - 2.0 * u.ln_1p() / (u * u * u)
    }
}

/// First and second derivatives of the single-excess log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellDerivatives {
    /// ∂ℓ/∂σ
    pub d_scale: f64,
    /// ∂ℓ/∂ξ
    pub d_shape: f64,
    /// ∂²ℓ/∂σ²
    pub d_scale_scale: f64,
    /// ∂²ℓ/∂σ∂ξ
    pub d_scale_shape: f64,
    /// ∂²ℓ/∂ξ²
    pub d_shape_shape: f64,
}

/// Derivatives with respect to `(log σ, ξ)`, the coordinates the regression
/// links act on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDerivatives {
    pub d_eta: f64,
    pub d_shape: f64,
    pub d_eta_eta: f64,
    pub d_eta_shape: f64,
    pub d_shape_shape: f64,
}

/// `None` when the excess is not strictly inside the support.
#[inline]
pub fn cell_derivatives(z: f64, scale: f64, shape: f64) -> Option<CellDerivatives> {
    let l = link_derivatives(z, scale, shape)?;
    let s = scale;
    // ℓ_η = σℓ_σ, ℓ_ηη = σ²ℓ_σσ + σℓ_σ, ℓ_ηξ = σℓ_σξ
    Some(CellDerivatives {
        d_scale: l.d_eta / s,
        d_shape: l.d_shape,
        d_scale_scale: (l.d_eta_eta - l.d_eta) / (s * s),
        d_scale_shape: l.d_eta_shape / s,
        d_shape_shape: l.d_shape_shape,
    })
}

#[inline]
pub fn link_derivatives(z: f64, scale: f64, shape: f64) -> Option<LinkDerivatives> {
    let xi = if shape.abs() < SMALL_SHAPE { 0.0 } else { shape };
    let y = z / scale;
    let u = xi * y;
    let a = 1.0 + u;
    if a <= 0.0 {
        return None;
    }
    let a2 = a * a;
    Some(LinkDerivatives {
        d_eta: -1.0 + (xi + 1.0) * y / a,
        d_shape: y * y * series_b(u) - y / a,
        d_eta_eta: -(xi + 1.0) * y / a2,
        d_eta_shape: y * (1.0 - y) / a2,
        d_shape_shape: y * y * y * series_c(u) + y * y / a2,
    })
}

/// Analytic score and Hessian of [`gp_loglik`] in `(σ, ξ)`.
pub fn gp_score_hessian(z: &[f64], p: &GpParams) -> Result<([f64; 2], [[f64; 2]; 2])> {
    check_params(p)?;
    if z.is_empty() {
        return Err(Error::InvalidArgument("empty excess sample".into()));
    }
    let mut score = [0.0; 2];
    let mut hess = [[0.0; 2]; 2];
    for &zi in z {
        if !zi.is_finite() || zi < 0.0 {
            return Err(Error::InvalidArgument(format!("invalid excess {zi}")));
        }
        let d = cell_derivatives(zi, p.scale, p.shape)
            .ok_or_else(|| Error::Support(format!("1 + ξz/σ <= 0 at z = {zi} (σ = {}, ξ = {})", p.scale, p.shape)))?;
        score[0] += d.d_scale;
        score[1] += d.d_shape;
        hess[0][0] += d.d_scale_scale;
        hess[0][1] += d.d_scale_shape;
        hess[1][1] += d.d_shape_shape;
    }
    hess[1][0] = hess[0][1];
    Ok((score, hess))
}

/// Classical two-parameter maximum likelihood fit on an i.i.d. sample, with
/// the shape held inside `[SHAPE_LOWER, SHAPE_UPPER]`.
pub fn fit_gp_mle(z: &[f64]) -> Result<GpParams> {
    if z.is_empty() {
        return Err(Error::InvalidArgument("empty excess sample".into()));
    }
    if z.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("excesses must be finite and nonnegative".into()));
    }
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let log_mean = mean.max(1e-12).ln();
    // Coordinates: (log σ, ξ).
    let objective = |x: &[f64]| {
        if x[1] < SHAPE_LOWER || x[1] > SHAPE_UPPER {
            return f64::INFINITY;
        }
        -z.iter().map(|&zi| cell_loglik_log_scale(zi, x[0], x[1])).sum::<f64>()
    };
    let bounds = Bounds::new(vec![log_mean - 30.0, SHAPE_LOWER], vec![log_mean + 30.0, SHAPE_UPPER]);
    let nm = NelderMead {
        initial_step: 0.1,
        ..NelderMead::default()
    };
    let m = minimize_with_restart(&nm, objective, &[log_mean, 0.1], &bounds)?;
    let mut x = m.x;
    let mut value = m.value;
    newton_refine(
        objective,
        |x: &[f64]| {
            let scale = x[0].exp();
            let mut g = nalgebra::DVector::zeros(2);
            let mut h = DMatrix::zeros(2, 2);
            for &zi in z {
                let d = link_derivatives(zi, scale, x[1])?;
                g[0] -= d.d_eta;
                g[1] -= d.d_shape;
                h[(0, 0)] -= d.d_eta_eta;
                h[(0, 1)] -= d.d_eta_shape;
                h[(1, 1)] -= d.d_shape_shape;
            }
            h[(1, 0)] = h[(0, 1)];
            Some((g, h))
        },
        &mut x,
        &mut value,
        &bounds,
        20,
    );
    GpParams::new(x[0].exp(), x[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnLevelSpec {
    /// Threshold `u`.
    pub threshold: f64,
    /// `ζ = P(Y > u)`.
    pub exceed_prob: f64,
    /// Return period `m`, in observations.
    pub period_obs: f64,
}

impl ReturnLevelSpec {
    pub fn new(threshold: f64, exceed_prob: f64, period_obs: f64) -> Result<Self> {
        if !threshold.is_finite() || !exceed_prob.is_finite() || !period_obs.is_finite() {
            return Err(Error::NonFinite("return level specification".into()));
        }
        if !(exceed_prob > 0.0 && exceed_prob <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "exceedance probability must be in (0,1], got {exceed_prob}"
            )));
        }
        if period_obs <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "return period must be positive, got {period_obs}"
            )));
        }
        Ok(Self {
            threshold,
            exceed_prob,
            period_obs,
        })
    }

    fn log_m_zeta(&self) -> Result<f64> {
        let s = ReturnLevelSpec::new(self.threshold, self.exceed_prob, self.period_obs)?;
        let mz = s.period_obs * s.exceed_prob;
        // Allow rounding slack so that m = 1/ζ is accepted.
        if mz < 1.0 - 1e-12 {
            return Err(Error::Infeasible(format!(
                "period × exceedance probability = {mz} < 1: level would lie below the threshold"
            )));
        }
        Ok(mz.ln().max(0.0))
    }
}

/// m-observation return level `u + (σ/ξ)[(mζ)^ξ − 1]`.
pub fn return_level(spec: &ReturnLevelSpec, p: &GpParams) -> Result<f64> {
    check_params(p)?;
    let l = spec.log_m_zeta()?;
    if p.shape.abs() < SMALL_SHAPE {
        Ok(spec.threshold + p.scale * l)
    } else {
        Ok(spec.threshold + p.scale / p.shape * (p.shape * l).exp_m1())
    }
}

/// Gradient of [`return_level`] with respect to `(σ, ξ, ζ)`.
pub fn return_level_gradient(spec: &ReturnLevelSpec, p: &GpParams) -> Result<[f64; 3]> {
    check_params(p)?;
    let l = spec.log_m_zeta()?;
    let xi = if p.shape.abs() < SMALL_SHAPE { 0.0 } else { p.shape };
    let v = xi * l;
    // expm1(v)/v and [v e^v − expm1(v)]/v², both continuous at v = 0.
    let (e1, e2) = if v.abs() < SERIES_SWITCH {
        // expm1(v)/v = Σ_{k≥1} v^{k−1}/k!, second = Σ_{k≥2} (k−1)/k! v^{k−2}
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut prev_pow = 0.0; // v^{k−2}
        let mut pow = 1.0; // v^{k−1}
        let mut fact = 1.0;
        for k in 1..24 {
            fact *= k as f64;
            s1 += pow / fact;
            if k >= 2 {
                s2 += (k as f64 - 1.0) / fact * prev_pow;
            }
            prev_pow = if k == 1 { 1.0 } else { prev_pow * v };
            pow *= v;
        }
        (s1, s2)
    } else {
        (v.exp_m1() / v, (v * v.exp() - v.exp_m1()) / (v * v))
    };
    let d_scale = l * e1;
    let d_shape = p.scale * l * l * e2;
    let d_zeta = p.scale * v.exp() / spec.exceed_prob;
    Ok([d_scale, d_shape, d_zeta])
}

/// Binomial variance `ζ(1−ζ)/n` of the empirical exceedance proportion.
pub fn exceedance_variance(exceed_prob: f64, n_total: usize) -> f64 {
    exceed_prob * (1.0 - exceed_prob) / n_total as f64
}

/// Delta-method variance `gᵀ Σ g` of the return level, where `cov` is the
/// 3×3 covariance of `(σ̂, ξ̂, ζ̂)`.
pub fn return_level_variance(spec: &ReturnLevelSpec, p: &GpParams, cov: &DMatrix<f64>) -> Result<f64> {
    if cov.nrows() != 3 || cov.ncols() != 3 {
        return Err(Error::Dimension(format!(
            "covariance must be 3×3, got {}×{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance".into()));
    }
    let scale = cov.amax().max(1.0);
    for i in 0..3 {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::InvalidArgument("covariance is not symmetric".into()));
            }
        }
    }
    let eig = SymmetricEigen::new(cov.clone());
    let min_eig = eig.eigenvalues.min();
    if min_eig < -1e-10 {
        return Err(Error::InvalidArgument(format!(
            "covariance is not positive semidefinite (smallest eigenvalue {min_eig:e})"
        )));
    }
    let g = return_level_gradient(spec, p)?;
    let mut var = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            var += g[i] * cov[(i, j)] * g[j];
        }
    }
    Ok(var.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gp(s: f64, x: f64) -> GpParams {
        GpParams::new(s, x).unwrap()
    }

    #[test]
    fn cdf_examples() {
        assert!((gp_cdf(1.0, &gp(1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!((gp_cdf(1.0, &gp(1.0, 0.0)).unwrap() - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(gp_cdf(2.0, &gp(1.0, -0.5)).unwrap(), 1.0);
        assert_eq!(gp_cdf(3.0, &gp(1.0, -0.5)).unwrap(), 1.0);
    }

    #[test]
    fn cdf_errors() {
        assert!(gp_cdf(f64::NAN, &gp(1.0, 0.1)).is_err());
        assert!(gp_cdf(1.0, &GpParams { scale: 0.0, shape: 0.1 }).is_err());
        assert!(gp_cdf(
            1.0,
            &GpParams {
                scale: -1.0,
                shape: 0.1
            }
        )
        .is_err());
        assert!(GpParams::new(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(gp_quantile(0.0, &gp(2.3, 0.7)).unwrap(), 0.0);
        assert!((gp_quantile(0.5, &gp(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-14);
        assert!((gp_quantile(0.6321206, &gp(1.0, 0.0)).unwrap() - 1.0).abs() < 1e-6);
        assert!(gp_quantile(1.0, &gp(1.0, 0.0)).is_err());
        assert!(gp_quantile(-0.1, &gp(1.0, 0.0)).is_err());
    }

    #[test]
    fn loglik_examples() {
        let v = gp_loglik(&[1.0], &gp(1.0, 1.0)).unwrap();
        assert!((v + 2.0 * 2f64.ln()).abs() < 1e-14);
        assert!((gp_loglik(&[1.0], &gp(1.0, 0.0)).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(gp_loglik(&[2.0], &gp(1.0, -0.6)).unwrap(), f64::NEG_INFINITY);
        assert!(gp_loglik(&[], &gp(1.0, 0.0)).is_err());
        assert!(gp_loglik(&[f64::NAN], &gp(1.0, 0.0)).is_err());
    }

    #[test]
    fn hessian_is_exactly_symmetric() {
        let (_, h) = gp_score_hessian(&[1.0], &gp(1.0, 1.0)).unwrap();
        assert_eq!(h[0][1], h[1][0]);
    }

    #[test]
    fn score_matches_finite_difference_at_unit_example() {
        let z = [1.0];
        let (s, _) = gp_score_hessian(&z, &gp(1.0, 1.0)).unwrap();
        let h = 1e-5;
        let f = |sc: f64, sh: f64| gp_loglik(&z, &gp(sc, sh)).unwrap();
        let ds = (f(1.0 + h, 1.0) - f(1.0 - h, 1.0)) / (2.0 * h);
        let dx = (f(1.0, 1.0 + h) - f(1.0, 1.0 - h)) / (2.0 * h);
        // The scale score vanishes here, so compare on an absolute floor.
        assert!((s[0] - ds).abs() < 1e-6 * (1.0 + ds.abs()), "{} {}", s[0], ds);
        assert!((s[1] - dx).abs() < 1e-6 * (1.0 + dx.abs()), "{} {}", s[1], dx);
    }

    #[test]
    fn support_violation_in_derivatives() {
        assert!(gp_score_hessian(&[2.0], &gp(1.0, -0.5)).is_err());
    }

    #[test]
    fn small_shape_series_agrees_with_closed_form() {
        for &u in &[-0.049, -0.02, 0.0001, 0.03, 0.049] {
            let b_closed = (f64::ln_1p(u) - u / (1.0 + u)) / (u * u);
            assert!((series_b(u) - b_closed).abs() < 1e-9, "B({u})");
            let a = 1.0 + u;
            let c_closed = 2.0 / (u * u * a) + 1.0 / (u * a * a) - 2.0 * u.ln_1p() / (u * u * u);
            assert!((series_c(u) - c_closed).abs() < 1e-6, "C({u})");
        }
        assert!((series_b(0.0) - 0.5).abs() < 1e-15);
        assert!((series_c(0.0) + 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn return_level_examples() {
        let p = gp(2.0, 0.5);
        let spec = ReturnLevelSpec::new(10.0, 0.05, 100.0).unwrap();
        let expected = 10.0 + 4.0 * (5f64.sqrt() - 1.0);
        assert!((return_level(&spec, &p).unwrap() - expected).abs() < 1e-12);
        assert!((return_level(&spec, &p).unwrap() - 14.9443).abs() < 1e-4);

        let unit = ReturnLevelSpec::new(3.0, 0.1, 10.0).unwrap();
        assert!((return_level(&unit, &gp(1.7, 0.3)).unwrap() - 3.0).abs() < 1e-12);

        let e = ReturnLevelSpec::new(0.0, 1.0, std::f64::consts::E).unwrap();
        assert!((return_level(&e, &gp(1.0, 0.0)).unwrap() - 1.0).abs() < 1e-15);

        let short = ReturnLevelSpec::new(0.0, 0.05, 10.0).unwrap();
        assert!(matches!(return_level(&short, &p), Err(Error::Infeasible(_))));
    }

    #[test]
    fn return_level_variance_examples() {
        let p = gp(2.0, 0.5);
        let spec = ReturnLevelSpec::new(10.0, 0.05, 100.0).unwrap();
        let zero = DMatrix::zeros(3, 3);
        assert_eq!(return_level_variance(&spec, &p, &zero).unwrap(), 0.0);

        let cov = DMatrix::from_row_slice(3, 3, &[0.04, 0.001, 0.0, 0.001, 0.01, 0.0, 0.0, 0.0, 1e-5]);
        let v1 = return_level_variance(&spec, &p, &cov).unwrap();
        let v2 = return_level_variance(&spec, &p, &(cov.clone() * 2.0)).unwrap();
        assert!((v2 - 2.0 * v1).abs() < 1e-14 * v1.abs().max(1.0));

        assert!(return_level_variance(&spec, &p, &DMatrix::zeros(2, 2)).is_err());
        let bad = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(return_level_variance(&spec, &p, &bad).is_err());
    }

    #[test]
    fn mle_recovers_exponential_sample_scale() {
        // Exponential quantiles at plotting positions: σ̂ ≈ 2, ξ̂ ≈ 0.
        let n = 4000;
        let z: Vec<f64> = (0..n)
            .map(|k| -2.0 * f64::ln_1p(-(k as f64 + 0.5) / n as f64))
            .collect();
        let p = fit_gp_mle(&z).unwrap();
        assert!((p.scale - 2.0).abs() < 0.1, "{p:?}");
        assert!(p.shape.abs() < 0.05, "{p:?}");
        let (s, _) = gp_score_hessian(&z, &p).unwrap();
        assert!(s[0].abs() < 1e-6 && s[1].abs() < 1e-6, "{s:?}");
    }
}
