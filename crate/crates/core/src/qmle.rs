//! Quasi-maximum likelihood estimation of the seven model parameters by
//! Nelder-Mead search on the negative log likelihood, run in transformed
//! coordinates (log scales, raw nuisance values) so positivity of the
//! sigmas is structural.

use crate::error::{Error, Result};
use crate::npf::{self, ModelParams, ObservationSeries, StateEstimate};

pub const PARAM_DIM: usize = 7;

/// Minimum number of observations accepted by `fit`; shorter series are
/// statistically meaningless for a 7-parameter search.
pub const MIN_FIT_LEN: usize = 50;

/// Map parameters to the unconstrained search space:
/// (log sigma1, log sigma2, log sigma_eps, theta0..theta3).
pub fn transform_params(params: &ModelParams) -> Result<[f64; PARAM_DIM]> {
    params.validate()?;
    Ok([
        params.sigma1.ln(),
        params.sigma2.ln(),
        params.sigma_eps.ln(),
        params.theta0,
        params.theta1,
        params.theta2,
        params.theta3,
    ])
}

/// Inverse of `transform_params`.
pub fn untransform_params(x: &[f64; PARAM_DIM]) -> ModelParams {
    ModelParams::new(x[0].exp(), x[1].exp(), x[2].exp(), x[3], x[4], x[5], x[6])
}

/// Options controlling the simplex search.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Convergence threshold on the simplex spread (max coordinate
    /// distance of any vertex from the best vertex, transformed space).
    pub tol: f64,
    /// Absolute perturbation per transformed coordinate when building the
    /// initial simplex.
    pub simplex_scale: f64,
    /// Number of starts; starts beyond the first perturb the initial
    /// point deterministically from `seed`.
    pub multi_start: usize,
    pub seed: u64,
    pub init_state: Option<StateEstimate>,
    /// Record (iteration, best objective) pairs.
    pub record_trace: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 2000,
            tol: 1e-6,
            simplex_scale: 0.1,
            multi_start: 1,
            seed: 0,
            init_state: None,
            record_trace: false,
        }
    }
}

/// Result of a fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: ModelParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Option<Vec<(usize, f64)>>,
}

struct Objective<'a> {
    series: &'a ObservationSeries,
    init_state: StateEstimate,
    evaluations: std::cell::Cell<usize>,
}

impl Objective<'_> {
    /// Negative log likelihood; non-finite filter outcomes map to +inf so
    /// the simplex retreats from them.
    fn eval(&self, x: &[f64; PARAM_DIM]) -> f64 {
        self.evaluations.set(self.evaluations.get() + 1);
        let params = untransform_params(x);
        match npf::log_likelihood(self.series, &params, &self.init_state) {
            Ok(ll) if ll.is_finite() => -ll,
            _ => f64::INFINITY,
        }
    }
}

fn simplex_spread(vertices: &[[f64; PARAM_DIM]], best: usize) -> f64 {
    let mut spread = 0.0f64;
    for (i, v) in vertices.iter().enumerate() {
        if i == best {
            continue;
        }
        for j in 0..PARAM_DIM {
            spread = spread.max((v[j] - vertices[best][j]).abs());
        }
    }
    spread
}

/// One Nelder-Mead run from a given transformed starting point.
/// Returns (best point, best value, iterations, converged).
fn nelder_mead(
    obj: &Objective,
    x0: [f64; PARAM_DIM],
    opts: &FitOptions,
    trace: &mut Option<Vec<(usize, f64)>>,
) -> ([f64; PARAM_DIM], f64, usize, bool) {
    const ALPHA: f64 = 1.0; // reflection
    const GAMMA: f64 = 2.0; // expansion
    const RHO: f64 = 0.5; // contraction
    const SIGMA: f64 = 0.5; // shrink

    let n = PARAM_DIM;
    let mut vertices: Vec<[f64; PARAM_DIM]> = Vec::with_capacity(n + 1);
    vertices.push(x0);
    for j in 0..n {
        let mut v = x0;
        v[j] += opts.simplex_scale;
        vertices.push(v);
    }
    let mut values: Vec<f64> = vertices.iter().map(|v| obj.eval(v)).collect();

    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        // order: best first
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        if let Some(t) = trace.as_mut() {
            t.push((iterations, values[best]));
        }
        if simplex_spread(&vertices, best) < opts.tol {
            converged = true;
            break;
        }

        // centroid of all but the worst
        let mut centroid = [0.0f64; PARAM_DIM];
        for (i, v) in vertices.iter().enumerate() {
            if i == worst {
                continue;
            }
            for j in 0..n {
                centroid[j] += v[j] / n as f64;
            }
        }

        let mut reflected = [0.0f64; PARAM_DIM];
        for j in 0..n {
            reflected[j] = centroid[j] + ALPHA * (centroid[j] - vertices[worst][j]);
        }
        let f_reflected = obj.eval(&reflected);

        if f_reflected < values[best] {
            let mut expanded = [0.0f64; PARAM_DIM];
            for j in 0..n {
                expanded[j] = centroid[j] + GAMMA * (reflected[j] - centroid[j]);
            }
            let f_expanded = obj.eval(&expanded);
            if f_expanded < f_reflected {
                vertices[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                vertices[worst] = reflected;
                values[worst] = f_reflected;
            }
        } else if f_reflected < values[second_worst] {
            vertices[worst] = reflected;
            values[worst] = f_reflected;
        } else {
            // contraction, outside or inside of the worst vertex
            let (towards, f_towards) = if f_reflected < values[worst] {
                (reflected, f_reflected)
            } else {
                (vertices[worst], values[worst])
            };
            let mut contracted = [0.0f64; PARAM_DIM];
            for j in 0..n {
                contracted[j] = centroid[j] + RHO * (towards[j] - centroid[j]);
            }
            let f_contracted = obj.eval(&contracted);
            if f_contracted < f_towards {
                vertices[worst] = contracted;
                values[worst] = f_contracted;
            } else {
                // shrink towards the best vertex
                let best_v = vertices[best];
                for (i, v) in vertices.iter_mut().enumerate() {
                    if i == best {
                        continue;
                    }
                    for j in 0..n {
                        v[j] = best_v[j] + SIGMA * (v[j] - best_v[j]);
                    }
                }
                for i in 0..=n {
                    if i != best {
                        values[i] = obj.eval(&vertices[i]);
                    }
                }
            }
        }
        iterations += 1;
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    (vertices[best], values[best], iterations, converged)
}

/// Maximize the quasi log likelihood over the 7 parameters.
///
/// Non-convergence within the iteration budget is reported through the
/// `converged` flag, not as an error; a fit where every objective
/// evaluation is non-finite is an error.
pub fn fit(series: &ObservationSeries, init: &ModelParams, opts: &FitOptions) -> Result<FitReport> {
    if series.len() < MIN_FIT_LEN {
        return Err(Error::TooShort {
            rows: series.len(),
            min: MIN_FIT_LEN,
        });
    }
    let x0 = transform_params(init)?;
    if opts.multi_start == 0 {
        return Err(Error::invalid("multi_start must be at least 1"));
    }

    let init_state = opts
        .init_state
        .clone()
        .unwrap_or_else(|| StateEstimate::initial(series.values()[0], init.sigma_eps));
    let obj = Objective {
        series,
        init_state,
        evaluations: std::cell::Cell::new(0),
    };

    if opts.max_iter == 0 {
        // no-op budget: report the initial point as-is
        let f0 = obj.eval(&x0);
        let ll = if f0.is_finite() { -f0 } else { f64::NEG_INFINITY };
        return Ok(FitReport {
            params: *init,
            log_likelihood: ll,
            iterations: 0,
            converged: false,
            trace: opts.record_trace.then(Vec::new),
        });
    }

    let mut best: Option<([f64; PARAM_DIM], f64, usize, bool)> = None;
    let mut trace = opts.record_trace.then(Vec::new);

    for start in 0..opts.multi_start {
        let mut x_start = x0;
        if start > 0 {
            // deterministic pseudo-random offsets derived from (seed, start)
            use rand::Rng;
            use rand::SeedableRng;
            let mut rng =
                rand_chacha::ChaCha12Rng::seed_from_u64(opts.seed.wrapping_add(start as u64));
            for coord in x_start.iter_mut() {
                *coord += rng.random_range(-1.0..1.0);
            }
        }
        let run = nelder_mead(&obj, x_start, opts, &mut trace);
        best = match best {
            Some(prev) if prev.1 <= run.1 => Some(prev),
            _ => Some(run),
        };
    }

    let (x_best, f_best, iterations, converged) = best.expect("at least one start");
    if !f_best.is_finite() {
        return Err(Error::FitFailure(
            "objective was non-finite at every evaluated point".to_string(),
        ));
    }
    Ok(FitReport {
        params: untransform_params(&x_best),
        log_likelihood: -f_best,
        iterations,
        converged,
        trace,
    })
}
