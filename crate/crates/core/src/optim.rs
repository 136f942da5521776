//! Box-constrained Nelder–Mead minimizer with an infinite-value barrier,
//! plus a safeguarded Newton refinement used once a simplex run has
//! localised the optimum.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Coordinate-wise box `lower[k] <= x[k] <= upper[k]`.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        Self {
            lower: vec![lower; dim],
            upper: vec![upper; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn project(&self, x: &mut [f64]) {
        for (k, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[k], self.upper[k]);
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Edge length of the initial simplex along each axis.
    pub initial_step: f64,
    /// Convergence requires the spread of simplex values to fall below this.
    pub ftol: f64,
    /// ...and the simplex to fit inside a sup-norm ball of this radius.
    pub xtol: f64,
    pub max_evals: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            ftol: 1e-8,
            xtol: 1e-7,
            max_evals: 4000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

impl NelderMead {
    /// Minimizes `f` from `x0`. Points where `f` is `+inf` or NaN are
    /// treated as outside the feasible region. The returned point is the
    /// best vertex ever evaluated, so `value <= f(x0)` always holds.
    pub fn minimize<F>(&self, mut f: F, x0: &[f64], bounds: &Bounds) -> Result<Minimum>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let n = x0.len();
        if n == 0 || bounds.dim() != n {
            return Err(Error::Dimension(format!(
                "start point has {n} coordinates, bounds have {}",
                bounds.dim()
            )));
        }
        let mut start = x0.to_vec();
        bounds.project(&mut start);
        let f0 = sanitize(f(&start));
        if !f0.is_finite() {
            return Err(Error::Optimizer("objective is not finite at the starting point".into()));
        }

        let mut evals = 1usize;
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut values: Vec<f64> = Vec::with_capacity(n + 1);
        simplex.push(start.clone());
        values.push(f0);
        for k in 0..n {
            let mut v = start.clone();
            let up = v[k] + self.initial_step;
            v[k] = if up <= bounds.upper[k] {
                up
            } else {
                v[k] - self.initial_step
            };
            bounds.project(&mut v);
            let mut fv = sanitize(f(&v));
            evals += 1;
            if !fv.is_finite() {
                // Pull the vertex towards the start until it is feasible.
                let mut step = self.initial_step;
                for _ in 0..30 {
                    step *= 0.5;
                    v[k] = start[k] + step;
                    bounds.project(&mut v);
                    fv = sanitize(f(&v));
                    evals += 1;
                    if fv.is_finite() {
                        break;
                    }
                }
            }
            simplex.push(v);
            values.push(fv);
        }

        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        let mut order: Vec<usize> = (0..=n).collect();
        let mut centroid = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut trial2 = vec![0.0; n];
        let mut converged = false;
        let mut flat_restarts = 0;

        while evals < self.max_evals {
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            let best = order[0];
            let worst = order[n];
            let second = order[n - 1];

            let spread = values[worst] - values[best];
            let diam = simplex
                .iter()
                .map(|v| {
                    v.iter()
                        .zip(&simplex[best])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if spread <= self.ftol && diam <= self.xtol {
                converged = true;
                break;
            }
            // Equal values on a wide simplex: either a flat direction or a
            // simplex collapsed onto a level set. Rebuild around the best
            // vertex and accept only if that does not help.
            if spread <= 1e-13 * (1.0 + values[best].abs()) {
                if flat_restarts >= 2 {
                    converged = true;
                    break;
                }
                flat_restarts += 1;
                let anchor = simplex[best].clone();
                let step = 0.5 * diam;
                for (idx, k) in order.iter().skip(1).copied().zip(0..n) {
                    let mut v = anchor.clone();
                    v[k] += step;
                    bounds.project(&mut v);
                    if v[k] == anchor[k] {
                        v[k] -= step;
                        bounds.project(&mut v);
                    }
                    values[idx] = sanitize(f(&v));
                    simplex[idx] = v;
                    evals += 1;
                }
                continue;
            }

            centroid.iter_mut().for_each(|c| *c = 0.0);
            for &idx in order.iter().take(n) {
                for (c, v) in centroid.iter_mut().zip(&simplex[idx]) {
                    *c += v / n as f64;
                }
            }

            for k in 0..n {
                trial[k] = centroid[k] + alpha * (centroid[k] - simplex[worst][k]);
            }
            bounds.project(&mut trial);
            let fr = sanitize(f(&trial));
            evals += 1;

            if fr < values[best] {
                for k in 0..n {
                    trial2[k] = centroid[k] + gamma * (trial[k] - centroid[k]);
                }
                bounds.project(&mut trial2);
                let fe = sanitize(f(&trial2));
                evals += 1;
                if fe < fr {
                    simplex[worst].copy_from_slice(&trial2);
                    values[worst] = fe;
                } else {
                    simplex[worst].copy_from_slice(&trial);
                    values[worst] = fr;
                }
                continue;
            }
            if fr < values[second] {
                simplex[worst].copy_from_slice(&trial);
                values[worst] = fr;
                continue;
            }

            // Contraction, outside if the reflection helped, inside otherwise.
            let outside = fr < values[worst];
            for k in 0..n {
                trial2[k] = if outside {
                    centroid[k] + rho * (trial[k] - centroid[k])
                } else {
                    centroid[k] + rho * (simplex[worst][k] - centroid[k])
                };
            }
            bounds.project(&mut trial2);
            let fc = sanitize(f(&trial2));
            evals += 1;
            let target = if outside { fr } else { values[worst] };
            if fc < target {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = fc;
                continue;
            }

            // Shrink towards the best vertex.
            let anchor = simplex[best].clone();
            for idx in 0..=n {
                if idx == best {
                    continue;
                }
                for k in 0..n {
                    simplex[idx][k] = anchor[k] + sigma * (simplex[idx][k] - anchor[k]);
                }
                values[idx] = sanitize(f(&simplex[idx]));
                evals += 1;
            }
        }

        let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
        let (x, value) = if values[best] <= f0 {
            (simplex[best].clone(), values[best])
        } else {
            (start, f0)
        };
        Ok(Minimum {
            x,
            value,
            evals,
            converged,
        })
    }
}

/// Runs Nelder–Mead, restarting once from a perturbed copy of the best point
/// when the first run exhausts its evaluation budget.
pub fn minimize_with_restart<F>(nm: &NelderMead, mut f: F, x0: &[f64], bounds: &Bounds) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    let first = nm.minimize(&mut f, x0, bounds)?;
    if first.converged {
        return Ok(first);
    }
    let mut jittered = first.x.clone();
    for (k, v) in jittered.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *v += sign * 0.5 * nm.initial_step;
    }
    bounds.project(&mut jittered);
    let start = if sanitize(f(&jittered)).is_finite() {
        jittered
    } else {
        first.x.clone()
    };
    let second = nm.minimize(&mut f, &start, bounds)?;
    let evals = first.evals + second.evals + 1;
    if !second.converged {
        return Err(Error::Optimizer(format!(
            "simplex search did not converge after {evals} evaluations and one restart"
        )));
    }
    let best = if second.value <= first.value {
        second
    } else {
        // A restart that lands somewhere worse keeps the first run's point.
        Minimum {
            converged: true,
            ..first
        }
    };
    Ok(Minimum { evals, ..best })
}

/// Safeguarded Newton refinement of a minimum. `derivs` returns the value,
/// gradient and Hessian of the minimized objective. Steps are only accepted
/// when they do not increase the objective, so the result never gets worse.
/// Returns early without moving when the Hessian is not positive definite.
pub fn newton_refine<F, D>(mut f: F, mut derivs: D, x: &mut [f64], value: &mut f64, bounds: &Bounds, max_steps: usize)
where
    F: FnMut(&[f64]) -> f64,
    D: FnMut(&[f64]) -> Option<(DVector<f64>, DMatrix<f64>)>,
{
    let n = x.len();
    for _ in 0..max_steps {
        let Some((grad, hess)) = derivs(x) else {
            return;
        };
        let Some(chol) = hess.cholesky() else { return };
        let step = chol.solve(&grad);
        let step_norm = step.amax();
        if !step_norm.is_finite() {
            return;
        }
        let mut t = 1.0;
        let mut accepted = false;
        let mut cand = vec![0.0; n];
        for _ in 0..12 {
            for k in 0..n {
                cand[k] = x[k] - t * step[k];
            }
            bounds.project(&mut cand);
            let fc = sanitize(f(&cand));
            if fc <= *value {
                *value = fc;
                x.copy_from_slice(&cand);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || step_norm * t < 1e-13 {
            return;
        }
    }
}
